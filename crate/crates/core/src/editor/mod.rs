//! Three-stage editing of code sequences through a text-completion backend:
//! choose frames, choose categories, then rewrite each chosen category.

mod backend;
mod parse;
pub mod prompts;

pub use backend::{BackendError, EditorBackend, Fixture, HttpModelBackend, ScriptedBackend, TOKEN_ENV};
pub use parse::{parse_code_list, parse_index_list, parse_range, ParseError};
pub use prompts::render_prompt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::Codebook;
use crate::encoder::{CodeSequence, EncodeError};
use crate::generator::{Keywords, KEYWORD_SLOTS, NUM_KEYWORDS};
use crate::motion::MotionSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    FrameExamine,
    FrameRange,
    BodyParts,
    EditCodes,
    Keywords,
    Mood,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::FrameExamine => "frame_examine",
            Stage::FrameRange => "frame_range",
            Stage::BodyParts => "body_parts",
            Stage::EditCodes => "edit_codes",
            Stage::Keywords => "keywords",
            Stage::Mood => "mood",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EditError {
    #[error("template slot `{0}` was not supplied")]
    MissingSlot(String),
    #[error("[{stage}] {source}")]
    Parse {
        stage: Stage,
        #[source]
        source: ParseError,
    },
    #[error("[{stage}] range {start}..={end} outside a sequence of {len} steps")]
    RangeOutOfBounds { stage: Stage, start: usize, end: usize, len: usize },
    #[error("[{stage}] category index {index} out of range ({limit} categories)")]
    IndexOutOfRange { stage: Stage, index: usize, limit: usize },
    #[error("[edit_codes] code {code} is not valid for category {category} ({count} codes)")]
    InvalidCodeForCategory { category: usize, code: usize, count: usize },
    #[error("[{stage}] backend: {source}")]
    Backend {
        stage: Stage,
        #[source]
        source: BackendError,
    },
    #[error("invalid edit request: {0}")]
    InvalidRequest(String),
}

impl EditError {
    /// Stage that failed, when the failure came from a backend exchange.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            EditError::Parse { stage, .. }
            | EditError::RangeOutOfBounds { stage, .. }
            | EditError::IndexOutOfRange { stage, .. }
            | EditError::Backend { stage, .. } => Some(*stage),
            EditError::InvalidCodeForCategory { .. } => Some(Stage::EditCodes),
            EditError::MissingSlot(_) | EditError::InvalidRequest(_) => None,
        }
    }
}

impl From<EncodeError> for EditError {
    fn from(e: EncodeError) -> Self {
        EditError::InvalidRequest(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditRequest {
    pub description: String,
    pub instruction: String,
    pub codes: CodeSequence,
    /// Inclusive `[s, e]`; when present the frame stage is skipped.
    pub explicit_range: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditOptions {
    /// Abort the whole edit when any category rewrite fails, instead of
    /// leaving that category untouched.
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub stage: Stage,
    pub category: Option<usize>,
    pub prompt: String,
    pub response: Option<String>,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryFailure {
    pub category: usize,
    pub error: String,
}

/// Audit record of one edit.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditTrace {
    pub entries: Vec<TraceEntry>,
    pub range: Option<(usize, usize)>,
    pub range_source: String,
    pub categories: Vec<usize>,
    pub edited_categories: Vec<usize>,
    pub failures: Vec<CategoryFailure>,
    /// How stage-3 code ids map to global code ids.
    pub code_id_mapping: String,
}

const CODE_ID_MAPPING: &str = "stage-3 code ids are local indices into the per-category table; global id = category code offset + local id";

/// Tab-separated table with the header row dropped and a leading newline, so
/// it reads as a block after the template's colon.
fn table_block(tsv: &str) -> String {
    let body: Vec<&str> = tsv.lines().skip(1).collect();
    format!("\n{}", body.join("\n"))
}

fn exchange(
    backend: &dyn EditorBackend,
    trace: &mut EditTrace,
    stage: Stage,
    category: Option<usize>,
    prompt: String,
) -> Result<String, EditError> {
    match backend.complete(&prompt) {
        Ok(resp) => {
            trace.entries.push(TraceEntry { stage, category, prompt, response: Some(resp.clone()), outcome: String::new() });
            Ok(resp)
        }
        Err(source) => {
            trace.entries.push(TraceEntry { stage, category, prompt, response: None, outcome: format!("backend error: {source}") });
            Err(EditError::Backend { stage, source })
        }
    }
}

fn note(trace: &mut EditTrace, outcome: impl Into<String>) {
    if let Some(last) = trace.entries.last_mut() {
        last.outcome = outcome.into();
    }
}

fn check_categories(stage: Stage, ids: &[usize], cb: &Codebook) -> Result<(), EditError> {
    match ids.iter().find(|&&i| i >= cb.num_categories()) {
        Some(&index) => Err(EditError::IndexOutOfRange { stage, index, limit: cb.num_categories() }),
        None => Ok(()),
    }
}

fn frame_stage(req: &EditRequest, backend: &dyn EditorBackend, cb: &Codebook, trace: &mut EditTrace) -> Result<(usize, usize), EditError> {
    let table1 = table_block(&cb.category_table());
    let prompt = render_prompt("frame_examine", &[("table1", &table1), ("edit", &req.instruction)])?;
    let resp = exchange(backend, trace, Stage::FrameExamine, None, prompt)?;
    let examined = parse_index_list(&resp).map_err(|source| {
        note(trace, format!("parse error: {source}"));
        EditError::Parse { stage: Stage::FrameExamine, source }
    })?;
    if let Err(e) = check_categories(Stage::FrameExamine, &examined, cb) {
        note(trace, e.to_string());
        return Err(e);
    }
    let examined = if examined.is_empty() { (0..cb.num_categories()).collect() } else { examined };
    note(trace, format!("examine categories {examined:?}"));

    let mut t1 = String::new();
    let mut t2 = String::new();
    for &c in &examined {
        let cat = cb.category(c).expect("checked");
        t1.push_str(&format!("\n{}\t{}", c, cat.name));
        for local in 0..cat.code_count {
            let g = cat.global_id(local);
            t2.push_str(&format!("\n{}\t{}", g, cb.codes()[g].semantics));
        }
    }
    let codes: String = req
        .codes
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let ids: Vec<String> = examined
                .iter()
                .map(|&c| cb.category(c).expect("checked").global_id(s.assignment[c] as usize).to_string())
                .collect();
            format!("\n{}: {}", i, ids.join(";"))
        })
        .collect();
    let length = req.codes.len().to_string();
    let prompt = render_prompt(
        "frame_range",
        &[
            ("table1", &t1),
            ("table2", &t2),
            ("codes", &codes),
            ("length", &length),
            ("details", &req.description),
            ("edit", &req.instruction),
        ],
    )?;
    let resp = exchange(backend, trace, Stage::FrameRange, None, prompt)?;
    let (s, e) = parse_range(&resp).map_err(|source| {
        note(trace, format!("parse error: {source}"));
        EditError::Parse { stage: Stage::FrameRange, source }
    })?;
    if e >= req.codes.len() {
        let err = EditError::RangeOutOfBounds { stage: Stage::FrameRange, start: s, end: e, len: req.codes.len() };
        note(trace, err.to_string());
        return Err(err);
    }
    note(trace, format!("range {s}..={e}"));
    Ok((s, e))
}

/// Copy `input` and overwrite category `c` at steps `s..=e` for each edit.
pub fn splice(input: &CodeSequence, range: (usize, usize), edits: &[(usize, Vec<u8>)]) -> CodeSequence {
    let mut out = input.clone();
    for (c, codes) in edits {
        for (k, t) in (range.0..=range.1).enumerate() {
            out.steps[t].assignment[*c] = codes[k];
        }
    }
    out
}

/// Run the three stages and splice the accepted category rewrites into a copy
/// of the input. Steps outside the range and unselected categories are
/// copied unchanged.
pub fn run_edit(
    req: &EditRequest,
    backend: &dyn EditorBackend,
    cb: &Codebook,
    opts: EditOptions,
) -> Result<(CodeSequence, EditTrace), EditError> {
    req.codes.validate(cb)?;
    if req.codes.is_empty() {
        return Err(EditError::InvalidRequest("empty code sequence".into()));
    }
    let mut trace = EditTrace { code_id_mapping: CODE_ID_MAPPING.into(), ..EditTrace::default() };
    let (s, e) = match req.explicit_range {
        Some((s, e)) => {
            if s > e {
                return Err(EditError::Parse { stage: Stage::FrameRange, source: ParseError::NonMonotonicRange { start: s, end: e } });
            }
            if e >= req.codes.len() {
                return Err(EditError::RangeOutOfBounds { stage: Stage::FrameRange, start: s, end: e, len: req.codes.len() });
            }
            trace.range_source = "user".into();
            (s, e)
        }
        None => {
            trace.range_source = "model".into();
            frame_stage(req, backend, cb, &mut trace)?
        }
    };
    trace.range = Some((s, e));

    let table1 = table_block(&cb.category_table());
    let prompt = render_prompt("body_parts", &[("table1", &table1), ("edit", &req.instruction)])?;
    let resp = exchange(backend, &mut trace, Stage::BodyParts, None, prompt)?;
    let selected = parse_index_list(&resp).map_err(|source| {
        note(&mut trace, format!("parse error: {source}"));
        EditError::Parse { stage: Stage::BodyParts, source }
    })?;
    if let Err(err) = check_categories(Stage::BodyParts, &selected, cb) {
        note(&mut trace, err.to_string());
        return Err(err);
    }
    note(&mut trace, format!("categories {selected:?}"));
    trace.categories = selected.clone();

    let length = (e - s + 1).to_string();
    let mut edits = Vec::new();
    for &c in &selected {
        let cat = cb.category(c).expect("checked");
        let table2 = table_block(&cb.category_code_table(c).expect("checked"));
        let current: Vec<String> = (s..=e).map(|t| req.codes.steps[t].assignment[c].to_string()).collect();
        let codes = current.join(";");
        let prompt = render_prompt(
            "edit_codes",
            &[
                ("table2", &table2),
                ("joint", &cat.name),
                ("codes", &codes),
                ("details", &req.description),
                ("edit", &req.instruction),
                ("length", &length),
            ],
        )?;
        let result = exchange(backend, &mut trace, Stage::EditCodes, Some(c), prompt).and_then(|resp| {
            let list = parse_code_list(&resp, e - s + 1).map_err(|source| EditError::Parse { stage: Stage::EditCodes, source })?;
            match list.iter().find(|&&v| v >= cat.code_count) {
                Some(&code) => Err(EditError::InvalidCodeForCategory { category: c, code, count: cat.code_count }),
                None => Ok(list.into_iter().map(|v| v as u8).collect::<Vec<u8>>()),
            }
        });
        match result {
            Ok(list) => {
                let global: Vec<String> = list.iter().map(|&l| cat.global_id(l as usize).to_string()).collect();
                note(&mut trace, format!("accepted local ids, global ids {}", global.join(";")));
                trace.edited_categories.push(c);
                edits.push((c, list));
            }
            Err(err) => {
                if matches!(err, EditError::Parse { .. } | EditError::InvalidCodeForCategory { .. }) {
                    note(&mut trace, format!("rejected: {err}"));
                }
                if opts.strict {
                    return Err(err);
                }
                log::warn!("category {c} left unedited: {err}");
                trace.failures.push(CategoryFailure { category: c, error: err.to_string() });
            }
        }
    }
    Ok((splice(&req.codes, (s, e), &edits), trace))
}

/// Body-part names as written in the keyword prompt, in slot order.
pub const BODY_PART_NAMES: [&str; 10] = [
    "head", "torso", "left arm", "right arm", "left hand", "right hand", "left leg", "right leg", "left feet", "right feet",
];

fn normalize_key(k: &str) -> String {
    let k = k.trim().to_lowercase().replace(['_', '-'], " ");
    let k = k.strip_prefix("l ").map(|r| format!("left {r}")).unwrap_or(k);
    let k = k.strip_prefix("r ").map(|r| format!("right {r}")).unwrap_or(k);
    k.replace("foot", "feet")
}

fn json_object(text: &str) -> Option<serde_json::Map<String, serde_json::Value>> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    match serde_json::from_str::<serde_json::Value>(&text[start..=end]).ok()? {
        serde_json::Value::Object(m) => Some(m),
        _ => None,
    }
}

/// Ask for the ten body-part keywords (JSON object) and the mood (plain text).
pub fn generate_keywords(description: &str, backend: &dyn EditorBackend) -> Result<(Keywords, EditTrace), EditError> {
    if description.trim().is_empty() {
        return Err(EditError::InvalidRequest("empty description".into()));
    }
    let mut trace = EditTrace::default();
    let parts = format!("[{}]", BODY_PART_NAMES.join(", "));
    let prompt = render_prompt("keywords_body", &[("details", description), ("body_parts", &parts)])?;
    let resp = exchange(backend, &mut trace, Stage::Keywords, None, prompt)?;
    let obj = json_object(&resp).ok_or_else(|| EditError::Parse { stage: Stage::Keywords, source: ParseError::Malformed(resp.clone()) })?;
    let mut words = Vec::with_capacity(NUM_KEYWORDS);
    for name in BODY_PART_NAMES {
        let value = obj
            .iter()
            .find(|(k, _)| normalize_key(k) == name)
            .and_then(|(_, v)| v.as_str())
            .map(str::trim)
            .filter(|v| !v.is_empty());
        match value {
            Some(v) => words.push(v.to_string()),
            None => {
                note(&mut trace, format!("missing key {name}"));
                return Err(EditError::Parse { stage: Stage::Keywords, source: ParseError::MissingKey(name.into()) });
            }
        }
    }
    note(&mut trace, "ok");
    let prompt = render_prompt("keywords_mood", &[("details", description)])?;
    let resp = exchange(backend, &mut trace, Stage::Mood, None, prompt)?;
    let mood = resp.trim().trim_matches(|c| c == '"' || c == '\'').trim().trim_end_matches('.').to_string();
    if mood.is_empty() {
        note(&mut trace, "missing mood");
        return Err(EditError::Parse { stage: Stage::Mood, source: ParseError::MissingKey(KEYWORD_SLOTS[10].to_lowercase()) });
    }
    note(&mut trace, "ok");
    words.push(mood);
    Ok((Keywords(words), trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub instruction: Option<String>,
    pub range: Option<(usize, usize)>,
    pub codes: CodeSequence,
    pub trace: Option<EditTrace>,
}

/// Source sequence plus an append-only list of edits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditSession {
    pub session_id: String,
    pub description: String,
    pub source_motion: Option<MotionSequence>,
    pub history: Vec<HistoryEntry>,
}

impl EditSession {
    pub fn new(session_id: impl Into<String>, description: impl Into<String>, codes: CodeSequence, source_motion: Option<MotionSequence>) -> Self {
        Self {
            session_id: session_id.into(),
            description: description.into(),
            source_motion,
            history: vec![HistoryEntry { instruction: None, range: None, codes, trace: None }],
        }
    }

    pub fn current(&self) -> &CodeSequence {
        &self.history.last().expect("session has a source entry").codes
    }

    /// Edit the current sequence and append the result; on error nothing changes.
    pub fn apply(
        &mut self,
        instruction: &str,
        range: Option<(usize, usize)>,
        backend: &dyn EditorBackend,
        cb: &Codebook,
        opts: EditOptions,
    ) -> Result<&HistoryEntry, EditError> {
        let req = EditRequest {
            description: self.description.clone(),
            instruction: instruction.to_string(),
            codes: self.current().clone(),
            explicit_range: range,
        };
        let (codes, trace) = run_edit(&req, backend, cb, opts)?;
        self.history.push(HistoryEntry { instruction: Some(instruction.to_string()), range, codes, trace: Some(trace) });
        Ok(self.history.last().expect("just pushed"))
    }
}
