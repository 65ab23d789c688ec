//! `posecodec`: one binary wiring the codebook, models, editor, metrics and service.
//!
//! Failures print one line to stderr, `error[<kind>]: <message>`, and exit
//! with status 1. Usage errors are reported by clap with status 2.

use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use posecodec::codebook::default_codebook;
use posecodec::decoder::{mean_joint_error, DecoderConfig, DecoderSample, MotionDecoder};
use posecodec::editor::{generate_keywords, run_edit, EditError, EditOptions, EditRequest, EditorBackend, HttpModelBackend, ScriptedBackend};
use posecodec::encoder::{encode_motion, load_codes, save_codes};
use posecodec::eval::{
    aits, diversity, fid, mm_dist, mmodality, r_precision, EvalError, FeatureExtractor, GeometricExtractor, MetricReport,
};
use posecodec::generator::{
    train_generator_on_pairs, CodeLayout, GeneratorConfig, GeneratorNet, KeywordBank, Keywords, SamplingPolicy, TextMotionPair,
};
use posecodec::motion::{load_motion, save_motion, synthesize, MotionKind, MotionSequence, SyntheticSpec};
use posecodec_service::{run_blocking, ServiceConfig};

#[derive(Debug)]
struct CliError {
    kind: &'static str,
    message: String,
}

impl CliError {
    fn new(kind: &'static str, message: impl fmt::Display) -> Self {
        // Keep the report on a single line.
        Self { kind, message: message.to_string().replace('\n', " ") }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.kind, self.message)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn err<E: fmt::Display>(kind: &'static str) -> impl Fn(E) -> CliError {
    move |e| CliError::new(kind, e)
}

fn edit_err(e: EditError) -> CliError {
    match e.stage() {
        Some(stage) => CliError::new("edit", format!("stage={stage} {e}")),
        None => CliError::new("edit", e),
    }
}

#[derive(Parser, Debug)]
#[command(name = "posecodec", version, about = "Pose-code motion tokenization, generation and editing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a parametric synthetic motion.
    Synth(SynthArgs),
    /// Encode a motion file into a code-sequence file.
    Encode(EncodeArgs),
    /// Decode a code-sequence file into a motion file.
    Decode(DecodeArgs),
    /// Codebook inspection.
    Codebook {
        #[command(subcommand)]
        command: CodebookCommand,
    },
    /// Train the motion decoder on a directory of motion files.
    TrainDecoder(TrainDecoderArgs),
    /// Train the text-to-code generator on motion and description files.
    TrainGenerator(TrainGeneratorArgs),
    /// Generate codes (and optionally motion) from text.
    Generate(GenerateArgs),
    /// Edit a code sequence with a natural-language instruction.
    Edit(EditArgs),
    /// Compute metrics for reconstructions or generations against a corpus.
    Eval(EvalArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Subcommand, Debug)]
enum CodebookCommand {
    /// Print the code table as tab-separated text.
    Dump,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_parser = parse_kind)]
    kind: MotionKind,
    #[arg(long, default_value_t = 40)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    amplitude: f64,
    #[arg(long, default_value_t = 0.0)]
    phase: f64,
    #[arg(long, default_value_t = 20.0)]
    fps: f64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_kind(s: &str) -> Result<MotionKind, String> {
    s.parse().map_err(|e: posecodec::motion::MotionError| e.to_string())
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Downsampling rate.
    #[arg(long, default_value_t = 4)]
    l: usize,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[arg(long)]
    codes: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainDecoderArgs {
    /// Directory of `*.motion` files.
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    embed_dim: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainGeneratorArgs {
    /// Directory of `*.motion` files, each with a `<stem>.txt` description and
    /// an optional `<stem>.keywords` file (keyword sets separated by blank lines).
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 128)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 0.05)]
    p_corrupt: f64,
    #[arg(long, default_value_t = 0.15)]
    p_mask_keyword: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Argmax,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Scripted,
    Http,
}

#[derive(Args, Debug, Clone)]
struct BackendArgs {
    /// JSON fixture file for the scripted backend.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Completion endpoint for the http backend; the token is read from POSECODEC_LLM_TOKEN.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value = "default")]
    model: String,
    #[arg(long, default_value_t = 60)]
    timeout_secs: u64,
}

impl BackendArgs {
    fn build(&self, kind: BackendKind) -> CliResult<Arc<dyn EditorBackend>> {
        match kind {
            BackendKind::Scripted => {
                let path = self.fixtures.as_ref().ok_or_else(|| CliError::new("usage", "--fixtures is required for the scripted backend"))?;
                Ok(Arc::new(ScriptedBackend::load(path).map_err(err("backend"))?))
            }
            BackendKind::Http => {
                let endpoint = self.endpoint.as_ref().ok_or_else(|| CliError::new("usage", "--endpoint is required for the http backend"))?;
                Ok(Arc::new(HttpModelBackend::from_env(endpoint.clone(), self.model.clone(), Duration::from_secs(self.timeout_secs))))
            }
        }
    }
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Generator checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    text: String,
    /// Eleven `Slot: text` lines. Without it, keywords come from --backend
    /// when one is given, and are left masked otherwise.
    #[arg(long)]
    keywords_file: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    #[command(flatten)]
    backend_args: BackendArgs,
    #[arg(long, value_enum, default_value_t = Mode::Argmax)]
    mode: Mode,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_codes: PathBuf,
    /// Written when --decoder-ckpt is given.
    #[arg(long)]
    out_motion: Option<PathBuf>,
    #[arg(long)]
    decoder_ckpt: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EditArgs {
    #[arg(long)]
    codes: PathBuf,
    #[arg(long)]
    description: String,
    #[arg(long)]
    instruction: String,
    /// Inclusive step range `s:e`; skips the frame-selection prompts.
    #[arg(long, value_parser = parse_range_flag)]
    range: Option<(usize, usize)>,
    #[arg(long, value_enum)]
    backend: BackendKind,
    #[command(flatten)]
    backend_args: BackendArgs,
    /// Fail the edit if any category rewrite is rejected.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    out: PathBuf,
    /// JSON edit trace.
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn parse_range_flag(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected s:e, got `{s}`"))?;
    let a: usize = a.trim().parse().map_err(|_| format!("bad range start `{a}`"))?;
    let b: usize = b.trim().parse().map_err(|_| format!("bad range end `{b}`"))?;
    if a > b {
        return Err(format!("range start {a} is after end {b}"));
    }
    Ok((a, b))
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Reference corpus: `*.motion` files with `<stem>.txt` descriptions.
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    decoder_ckpt: PathBuf,
    /// Evaluate generations from this checkpoint instead of reconstructions.
    #[arg(long)]
    generator_ckpt: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pool_size: usize,
    #[arg(long, default_value_t = 300)]
    diversity_pairs: usize,
    /// Sampled generations per text for MModality.
    #[arg(long, default_value_t = 5)]
    mm_samples: usize,
    #[arg(long, default_value_t = 10)]
    mm_pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    #[arg(long)]
    data_dir: PathBuf,
    /// `id=path` or `path` (id is the file stem). Repeatable.
    #[arg(long)]
    decoder_ckpt: Vec<String>,
    #[arg(long)]
    generator_ckpt: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = BackendKind::Scripted)]
    editor_backend: BackendKind,
    #[command(flatten)]
    backend_args: BackendArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Encode(a) => encode(a),
        Command::Decode(a) => decode(a),
        Command::Codebook { command: CodebookCommand::Dump } => {
            print!("{}", default_codebook().dump());
            Ok(())
        }
        Command::TrainDecoder(a) => train_decoder(a),
        Command::TrainGenerator(a) => train_generator(a),
        Command::Generate(a) => generate(a),
        Command::Edit(a) => edit(a),
        Command::Eval(a) => eval(a),
        Command::Serve(a) => serve(a),
    }
}

fn synth(a: SynthArgs) -> CliResult {
    let spec = SyntheticSpec { amplitude: a.amplitude, phase: a.phase, fps: a.fps, ..SyntheticSpec::new(a.kind, a.frames, a.seed) };
    let m = synthesize(&spec).map_err(err("synth"))?;
    save_motion(&m, &a.out).map_err(err("io"))
}

fn encode(a: EncodeArgs) -> CliResult {
    let m = load_motion(&a.input).map_err(err("parse"))?;
    let codes = encode_motion(&m, default_codebook(), a.l).map_err(err("encode"))?;
    save_codes(&codes, &a.out).map_err(err("io"))
}

fn decode(a: DecodeArgs) -> CliResult {
    let cb = default_codebook();
    let codes = load_codes(&a.codes, cb).map_err(err("parse"))?;
    let dec = MotionDecoder::load(&a.checkpoint, cb).map_err(err("checkpoint"))?;
    let m = dec.decode(&codes, cb).map_err(err("decode"))?;
    save_motion(&m, &a.out).map_err(err("io"))
}

struct CorpusItem {
    stem: String,
    motion: MotionSequence,
    description: Option<String>,
    keywords: KeywordBank,
}

fn parse_keyword_bank(text: &str) -> Result<KeywordBank, String> {
    let sets = text
        .split("\n\n")
        .filter(|block| !block.trim().is_empty())
        .map(|block| Keywords::parse(block).map_err(|slot| format!("keyword set is missing `{slot}`")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(KeywordBank { sets })
}

fn load_corpus(dir: &Path) -> CliResult<Vec<CorpusItem>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::new("io", format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "motion"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::new("data", format!("no .motion files in {}", dir.display())));
    }
    paths
        .into_iter()
        .map(|p| {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let motion = load_motion(&p).map_err(err("parse"))?;
            let read = |ext: &str| std::fs::read_to_string(p.with_extension(ext)).ok();
            let description = read("txt").map(|t| t.trim().to_string()).filter(|t| !t.is_empty());
            let keywords = match read("keywords") {
                Some(t) => parse_keyword_bank(&t).map_err(|e| CliError::new("parse", format!("{stem}.keywords: {e}")))?,
                None => KeywordBank { sets: vec![] },
            };
            Ok(CorpusItem { stem, motion, description, keywords })
        })
        .collect()
}

fn train_decoder(a: TrainDecoderArgs) -> CliResult {
    let cb = default_codebook();
    let corpus = load_corpus(&a.data_dir)?;
    let cfg = DecoderConfig {
        embed_dim: a.embed_dim,
        hidden: a.hidden,
        lambda: a.lambda,
        lr: a.lr,
        steps: a.steps,
        batch: a.batch,
        seed: a.seed,
        ..DecoderConfig::default()
    };
    let data = corpus
        .iter()
        .map(|c| DecoderSample::from_motion(&c.motion, cb, cfg.downsample))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err("encode"))?;
    let mut dec = MotionDecoder::new(cfg, cb).map_err(err("config"))?;
    let report = dec.train(&data, cb).map_err(err("train"))?;
    let mut mpjpe = 0.0;
    for s in &data {
        mpjpe += mean_joint_error(&s.target, &dec.decode(&s.codes, cb).map_err(err("decode"))?).map_err(err("decode"))?;
    }
    println!("steps\t{}", report.losses.len());
    println!("initial_loss\t{:.6}", report.initial());
    println!("final_loss\t{:.6}", report.last());
    println!("mean_joint_error\t{:.6}", mpjpe / data.len() as f64);
    dec.save(&a.out).map_err(err("io"))
}

fn train_generator(a: TrainGeneratorArgs) -> CliResult {
    let cb = default_codebook();
    let corpus = load_corpus(&a.data_dir)?;
    let pairs = corpus
        .into_iter()
        .map(|c| {
            let description = c.description.ok_or_else(|| CliError::new("data", format!("{}.txt is missing or empty", c.stem)))?;
            let mut target = encode_motion(&c.motion, cb, posecodec::encoder::DEFAULT_DOWNSAMPLE).map_err(err("encode"))?;
            target.steps.truncate(posecodec::generator::MAX_LEN);
            if let Some(last) = target.steps.last_mut() {
                last.is_end = true;
            }
            Ok(TextMotionPair { description, keywords: c.keywords, target })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let cfg = GeneratorConfig {
        dim: a.dim,
        heads: a.heads,
        layers: a.layers,
        lr: a.lr,
        p_corrupt: a.p_corrupt,
        p_mask_keyword: a.p_mask_keyword,
        seed: a.seed,
        ..GeneratorConfig::default()
    };
    if a.heads == 0 || a.dim % a.heads != 0 {
        return Err(CliError::new("config", format!("--dim {} is not divisible by --heads {}", a.dim, a.heads)));
    }
    let mut net = GeneratorNet::new(cfg, CodeLayout::from_codebook(cb));
    let report = train_generator_on_pairs(&mut net, &pairs, a.steps, a.batch).map_err(err("train"))?;
    println!("steps\t{}", report.losses.len());
    if let (Some(first), Some(last)) = (report.losses.first(), report.losses.last()) {
        println!("initial_loss\t{first:.6}");
        println!("final_loss\t{last:.6}");
    }
    net.save(&a.out).map_err(err("io"))
}

fn policy(mode: Mode, temperature: f64, seed: u64) -> SamplingPolicy {
    match mode {
        Mode::Argmax => SamplingPolicy::argmax(),
        Mode::Sample => SamplingPolicy::sample(temperature, seed),
    }
}

fn generate(a: GenerateArgs) -> CliResult {
    let cb = default_codebook();
    let net = GeneratorNet::load(&a.checkpoint).map_err(err("checkpoint"))?;
    if net.layout != CodeLayout::from_codebook(cb) {
        return Err(CliError::new("checkpoint", "generator layout does not match the codebook"));
    }
    let keywords = match (&a.keywords_file, a.backend) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
            Some(Keywords::parse(&text).map_err(|slot| CliError::new("parse", format!("keywords file is missing `{slot}`")))?)
        }
        (None, Some(kind)) => {
            let backend = a.backend_args.build(kind)?;
            Some(generate_keywords(&a.text, backend.as_ref()).map_err(edit_err)?.0)
        }
        (None, None) => None,
    };
    let decoder = match &a.decoder_ckpt {
        Some(p) => Some(MotionDecoder::load(p, cb).map_err(err("checkpoint"))?),
        None => None,
    };
    if a.out_motion.is_some() && decoder.is_none() {
        return Err(CliError::new("usage", "--out-motion needs --decoder-ckpt"));
    }
    let cond = net.condition(&a.text, keywords.as_ref());
    let codes = net.generate(&cond, &policy(a.mode, a.temperature, a.seed)).map_err(err("generate"))?;
    save_codes(&codes, &a.out_codes).map_err(err("io"))?;
    if let (Some(dec), Some(out)) = (decoder, &a.out_motion) {
        let m = dec.decode(&codes, cb).map_err(err("decode"))?;
        save_motion(&m, out).map_err(err("io"))?;
    }
    Ok(())
}

fn edit(a: EditArgs) -> CliResult {
    let cb = default_codebook();
    let codes = load_codes(&a.codes, cb).map_err(err("parse"))?;
    let backend = a.backend_args.build(a.backend)?;
    let req = EditRequest { description: a.description, instruction: a.instruction, codes, explicit_range: a.range };
    let (out, trace) = run_edit(&req, backend.as_ref(), cb, EditOptions { strict: a.strict }).map_err(edit_err)?;
    if let Some(path) = &a.trace {
        let json = serde_json::to_string_pretty(&trace).map_err(err("io"))?;
        std::fs::write(path, json).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
    }
    for f in &trace.failures {
        log::warn!("category {} left unedited: {}", f.category, f.error);
    }
    save_codes(&out, &a.out).map_err(err("io"))
}

fn eval(a: EvalArgs) -> CliResult {
    let cb = default_codebook();
    let ex = GeometricExtractor;
    let corpus = load_corpus(&a.data_dir)?;
    let dec = MotionDecoder::load(&a.decoder_ckpt, cb).map_err(err("checkpoint"))?;
    let texts: Vec<String> = corpus.iter().map(|c| c.description.clone().unwrap_or_else(|| c.stem.clone())).collect();
    let real: Vec<Vec<f64>> = corpus.iter().map(|c| ex.motion_features(&c.motion)).collect::<Result<_, _>>().map_err(err("eval"))?;
    let text_feats: Vec<Vec<f64>> = texts.iter().map(|t| ex.text_features(t)).collect();
    let mut report = MetricReport::default();
    let eval_err = err::<EvalError>("eval");

    let generated: Vec<Vec<f64>> = match &a.generator_ckpt {
        Some(path) => {
            let net = GeneratorNet::load(path).map_err(err("checkpoint"))?;
            let run_one = |i: usize, p: &SamplingPolicy| -> CliResult<Vec<f64>> {
                let codes = net.generate(&net.condition(&texts[i], None), p).map_err(err("generate"))?;
                let m = dec.decode(&codes, cb).map_err(err("decode"))?;
                ex.motion_features(&m).map_err(err("eval"))
            };
            let timing = aits(texts.len(), |i| run_one(i, &SamplingPolicy::argmax()))?;
            report.push("aits_seconds", timing.seconds_per_sentence);
            report.note("environment", &timing.environment);
            let feats: Vec<Vec<f64>> = (0..texts.len()).map(|i| run_one(i, &SamplingPolicy::argmax())).collect::<CliResult<_>>()?;
            let per_text: Vec<Vec<Vec<f64>>> = (0..texts.len())
                .map(|i| (0..a.mm_samples).map(|k| run_one(i, &SamplingPolicy::sample(1.0, a.seed ^ ((i * 1000 + k) as u64)))).collect())
                .collect::<CliResult<_>>()?;
            report.push("mmodality", mmodality(&per_text, a.mm_pairs, a.seed).map_err(&eval_err)?);
            report.note("source", "generation");
            feats
        }
        None => {
            report.note("source", "reconstruction");
            corpus
                .iter()
                .map(|c| {
                    let codes = encode_motion(&c.motion, cb, dec.config.downsample).map_err(err("encode"))?;
                    let m = dec.decode(&codes, cb).map_err(err("decode"))?;
                    ex.motion_features(&m).map_err(err("eval"))
                })
                .collect::<CliResult<_>>()?
        }
    };
    report.push("fid", fid(&real, &generated).map_err(&eval_err)?);
    for k in 1..=3 {
        report.push(&format!("r_precision_top{k}"), r_precision(&generated, &text_feats, a.pool_size, k, a.seed).map_err(&eval_err)?);
    }
    report.push("mm_dist", mm_dist(&generated, &text_feats).map_err(&eval_err)?);
    report.push("diversity", diversity(&generated, a.diversity_pairs, a.seed).map_err(&eval_err)?);
    report.push("diversity_real", diversity(&real, a.diversity_pairs, a.seed).map_err(&eval_err)?);
    report.note("extractor", ex.version());
    report.note("seed", a.seed);
    report.note("pool_size", a.pool_size);
    report.note("diversity_pairs", a.diversity_pairs);
    report.note("corpus_size", corpus.len());
    let text = report.to_tsv();
    match &a.out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::new("io", format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::new("eval", e)
    }
}

fn serve(a: ServeArgs) -> CliResult {
    let backend = match (a.editor_backend, &a.backend_args.fixtures) {
        // Without fixtures the scripted backend answers nothing, so every
        // edit fails with a stage-tagged 502.
        (BackendKind::Scripted, None) => Arc::new(ScriptedBackend::from_responses(Vec::<String>::new())) as Arc<dyn EditorBackend>,
        (kind, _) => a.backend_args.build(kind)?,
    };
    let decoders = a
        .decoder_ckpt
        .iter()
        .map(|s| match s.split_once('=') {
            Some((id, path)) => (id.to_string(), PathBuf::from(path)),
            None => {
                let p = PathBuf::from(s);
                (p.file_stem().and_then(|x| x.to_str()).unwrap_or("default").to_string(), p)
            }
        })
        .collect();
    let addr: SocketAddr = format!("{}:{}", a.bind, a.port).parse().map_err(err("usage"))?;
    let config = ServiceConfig { data_dir: a.data_dir, decoders, generator: a.generator_ckpt, backend };
    run_blocking(config, addr).map_err(err("service"))
}
