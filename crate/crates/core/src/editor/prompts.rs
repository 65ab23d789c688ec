//! Prompt templates for keyword generation and the three editing stages.
//!
//! The text is the typeset form of the published templates: forced line
//! breaks become `\n`, soft source line breaks become single spaces, and the
//! original wording (including its grammar slips) is kept as is.

use std::collections::HashSet;

use super::EditError;

/// Stage 1a: which categories to inspect before choosing the frame range.
pub const FRAME_EXAMINE: &str = "Motion is represented by a set of joint states, defined as follows:\n\
Table 1 Joint State Meanings (Key: Joint State Index, Value: Joint State Meaning): {table1}\n\
Given the edit instruction: {edit}\n\
Return a semi-colon separated sequence of the ids of the joint states you will need to examine in order to determine the starting and ending frame of a motion sequence that will be affected by the edit instruction.\n\
Format example: 0;1;5;9. Do not reply anything else.";

/// Stage 1b: the inclusive frame range affected by the edit.
pub const FRAME_RANGE: &str = "You will be provided with a text description of the motion, a motion code sequence and a motion edit instruction. You are be required to determine the starting and ending frame of the sequence that will be affected by the edit. Here is what you need to know about the encoding of the motion sequences:\n\
The motion is represented a number of time frames, each time frame contains a set of joint states, each joint state contains a code value. The definitions are:\n\
Table 1 Joint State Meanings (Key: Joint State Index, Value: Joint State Meaning): {table1}\n\
Table 2 Code Meaning (Key: Code ID, Value: Code Meaning): {table2}\n\
Rules: smaller angles indicates more bending.\n\
The motion code sequence is: {codes}\n\
The total number of time frames is {length}\n\
The text description is: {details}\n\
The edit instruction is: {edit}\n\
Return the starting index and ending index of the segment that is affected by the edit, separated by semi-colon, if the edit affects the overall movement, select the entire sequence. Format example: 0;19. Do not reply anything else.";

/// Stage 2: categories (joint states) that the edit touches.
pub const BODY_PARTS: &str = "Motion is represented by a set of joint states, defined as follows:\n\
Table 1 Joint State Meanings (Key: Joint State Index, Value: Joint State Meaning): {table1}\n\
Given the edit instruction: {edit}\n\
Return a semi-colon separated sequence of the ids of the joint states you may be affected by the edit instruction. Format example: 0;1;5;9. Do not reply anything else.";

/// Stage 3: the replacement codes for one category over the selected frames.
pub const EDIT_CODES: &str = "You will be provided with a text description of the motion, a motion code sequence for a given joint state and a motion edit instruction. You will be required to determine how to modify the codes within the provided sequence accordingly.\n\
Here is what you need to know about the encoding of the motion sequences: The motion is represented as a list of joint states of length T, T is the number time frames. Each joint state contains a code value. The usable codes are defined as follows:\n\
Table 1 Usable Code Meaning (Key: Code ID, Value: Code Meaning): {table2}\n\
Rules: smaller angles indicates more bending.\n\
You are given this motion code sequence for the joint state {joint}, it has already been sliced to keep only the segment you will need to edit: {codes}.\n\
The text description of the overall motion sequence is: {details}.\n\
The edit instruction is: {edit}\n\
Return the edited motion only as a sequence of integer code ids of length {length} separated by semi-colons, only use code ids in the provided table. If no edit needs to be made, return the original sequence. Format example: 1;2;3;4. Do not reply anything else. No explanation needed.";

pub const KEYWORDS_BODY: &str = "Given a text description of a motion: {details}. Enrich the description of the full motion by summarizing in detail the shape and speed for each of the body parts in {body_parts} that is required to achieve the given motion in natural language. The output should be in json format with {body_parts} as keys, and one short motion attribute as values. Key-value format example: \"head\":\"head is upright\". Do not output anything else.";

pub const KEYWORDS_MOOD: &str = "Given a text description of a motion: Please help me to describe the mood that is required to achieve the human motion described as: '{details}' using one short motion attribute. Do not output anything else.";

pub const TEMPLATE_NAMES: [&str; 6] = ["frame_examine", "frame_range", "body_parts", "edit_codes", "keywords_body", "keywords_mood"];

pub fn template(name: &str) -> Option<&'static str> {
    Some(match name {
        "frame_examine" => FRAME_EXAMINE,
        "frame_range" => FRAME_RANGE,
        "body_parts" => BODY_PARTS,
        "edit_codes" => EDIT_CODES,
        "keywords_body" => KEYWORDS_BODY,
        "keywords_mood" => KEYWORDS_MOOD,
        _ => return None,
    })
}

/// Placeholder names in order of first appearance.
pub fn placeholders(template: &str) -> Vec<&str> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_slot_name(&after[..close]) => {
                let name = &after[..close];
                if seen.insert(name) {
                    out.push(name);
                }
                rest = &after[close + 1..];
            }
            _ => rest = after,
        }
    }
    out
}

fn is_slot_name(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

/// Substitute every `{slot}` in one pass; inserted values are not rescanned.
pub fn render_template(template: &str, slots: &[(&str, &str)]) -> Result<String, EditError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_slot_name(&after[..close]) => {
                let name = &after[..close];
                let value = slots
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| EditError::MissingSlot(name.to_string()))?;
                out.push_str(value);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

pub fn render_prompt(name: &str, slots: &[(&str, &str)]) -> Result<String, EditError> {
    let t = template(name).ok_or_else(|| EditError::InvalidRequest(format!("unknown template `{name}`")))?;
    render_template(t, slots)
}
