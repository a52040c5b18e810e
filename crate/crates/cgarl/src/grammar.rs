//! Canonical response grammar and its tokenizer.
//!
//! A response is `<think>r</think><tool>{json}</tool><obs>{json}</obs>`
//! repeated once per step, followed by `<answer>{json}</answer>`. The format
//! check used by the format reward is exactly [`parse_response`]: it accepts
//! a string iff the structure is intact, every tool is one of the seven,
//! every parameter validates against its tool schema, and nothing trails the
//! answer block.
//!
//! Tokenization is a fixed 55-symbol vocabulary: the eight tags are single
//! tokens, everything else is one token per character. It is reversible, and
//! the mask bit is 0 exactly for tokens inside `<obs>...</obs>` payloads.

use thiserror::Error;

use crate::toolenv::Observation;
use crate::types::{Prediction, Step, TokenSequence, ToolCall, ToolName, Trajectory};

pub const TAG_THINK_OPEN: u16 = 0;
pub const TAG_THINK_CLOSE: u16 = 1;
pub const TAG_TOOL_OPEN: u16 = 2;
pub const TAG_TOOL_CLOSE: u16 = 3;
pub const TAG_OBS_OPEN: u16 = 4;
pub const TAG_OBS_CLOSE: u16 = 5;
pub const TAG_ANSWER_OPEN: u16 = 6;
pub const TAG_ANSWER_CLOSE: u16 = 7;

const TAGS: [&str; 8] = [
    "<think>", "</think>", "<tool>", "</tool>", "<obs>", "</obs>", "<answer>", "</answer>",
];

const PUNCT: [char; 11] = ['{', '}', '[', ']', '"', ':', ',', '.', '-', '_', ' '];

/// Number of distinct token ids.
pub const VOCAB_SIZE: usize = 8 + 26 + 10 + PUNCT.len();

/// Token id for a single character, if it belongs to the vocabulary.
pub fn char_token(c: char) -> Option<u16> {
    match c {
        'a'..='z' => Some(8 + (c as u16 - 'a' as u16)),
        '0'..='9' => Some(34 + (c as u16 - '0' as u16)),
        _ => PUNCT
            .iter()
            .position(|p| *p == c)
            .map(|i| (44 + i) as u16),
    }
}

/// Surface text of a token id.
pub fn token_text(id: u16) -> &'static str {
    const LETTERS: [&str; 26] = [
        "a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l", "m", "n", "o", "p", "q", "r",
        "s", "t", "u", "v", "w", "x", "y", "z",
    ];
    const DIGITS: [&str; 10] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"];
    const PUNCT_STR: [&str; 11] = ["{", "}", "[", "]", "\"", ":", ",", ".", "-", "_", " "];
    let id = id as usize;
    if id < 8 {
        TAGS[id]
    } else if id < 34 {
        LETTERS[id - 8]
    } else if id < 44 {
        DIGITS[id - 34]
    } else {
        PUNCT_STR[id - 44]
    }
}

/// Hash of the vocabulary, embedded in policy checkpoints so a checkpoint
/// cannot silently load against a different symbol table.
pub fn vocab_hash() -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for id in 0..VOCAB_SIZE as u16 {
        h.update(token_text(id).as_bytes());
        h.update([0u8]);
    }
    crate::types::hex_encode(&h.finalize())
}

#[derive(Debug, Error, PartialEq)]
pub enum TokenizeError {
    #[error("unknown symbol at byte {pos}")]
    UnknownSymbol { pos: usize },
}

/// Tokenize text over the response vocabulary. Tags are matched first, so a
/// literal `<` only tokenizes as part of a well-formed tag.
pub fn tokenize(text: &str) -> Result<TokenSequence, TokenizeError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::with_capacity(bytes.len());
    let mut pos = 0;
    while pos < bytes.len() {
        if bytes[pos] == b'<' {
            let rest = &text[pos..];
            match TAGS.iter().position(|t| rest.starts_with(t)) {
                Some(tag) => {
                    tokens.push(tag as u16);
                    pos += TAGS[tag].len();
                    continue;
                }
                None => return Err(TokenizeError::UnknownSymbol { pos }),
            }
        }
        let c = bytes[pos] as char;
        match char_token(c) {
            Some(t) => {
                tokens.push(t);
                pos += 1;
            }
            None => return Err(TokenizeError::UnknownSymbol { pos }),
        }
    }
    let mask = observation_mask(&tokens);
    Ok(TokenSequence::new(tokens, mask))
}

/// Mask bits for a token stream: 0 strictly between `<obs>` and `</obs>`,
/// 1 everywhere else (including the obs tags themselves).
pub fn observation_mask(tokens: &[u16]) -> Vec<bool> {
    let mut mask = Vec::with_capacity(tokens.len());
    let mut in_obs = false;
    for t in tokens {
        match *t {
            TAG_OBS_OPEN => {
                mask.push(true);
                in_obs = true;
            }
            TAG_OBS_CLOSE => {
                mask.push(true);
                in_obs = false;
            }
            _ => mask.push(!in_obs),
        }
    }
    mask
}

/// Inverse of [`tokenize`].
pub fn detokenize(tokens: &[u16]) -> String {
    tokens.iter().map(|t| token_text(*t)).collect()
}

/// Render the step blocks of a trajectory prefix, without the answer.
pub fn render_steps(steps: &[Step]) -> String {
    let mut out = String::new();
    for step in steps {
        out.push_str("<think>");
        out.push_str(&step.reasoning);
        out.push_str("</think><tool>");
        out.push_str(
            &serde_json::to_string(&step.call.to_inline_json()).expect("call json"),
        );
        out.push_str("</tool><obs>");
        out.push_str(&serde_json::to_string(&step.observation).expect("observation json"));
        out.push_str("</obs>");
    }
    out
}

/// Render a full trajectory into the canonical grammar.
pub fn render_response(traj: &Trajectory) -> String {
    let mut out = render_steps(&traj.steps);
    out.push_str("<answer>");
    out.push_str(&serde_json::to_string(&traj.answer).expect("answer json"));
    out.push_str("</answer>");
    out
}

/// First-violation diagnostics of the strict format check. `pos` is the byte
/// offset where the violation was detected.
#[derive(Debug, Error, PartialEq)]
pub enum FormatError {
    #[error("unclosed {tag} at byte {pos}")]
    UnclosedTag { pos: usize, tag: &'static str },
    #[error("unknown tool {name:?} at byte {pos}")]
    UnknownTool { pos: usize, name: String },
    #[error("bad params at byte {pos}: {detail}")]
    BadParams { pos: usize, detail: String },
    #[error("missing answer block (detected at byte {pos})")]
    MissingAnswer { pos: usize },
    #[error("unexpected content at byte {pos}")]
    TrailingGarbage { pos: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParsedStep {
    pub reasoning: String,
    pub call: ToolCall,
    pub observation: Observation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParsedResponse {
    pub steps: Vec<ParsedStep>,
    pub answer: Prediction,
    /// Byte ranges of each `<obs>` payload, used to build token masks.
    pub obs_payload_spans: Vec<(usize, usize)>,
}

/// Scan for `close` starting at `from`. The payload may not contain `<`, so
/// the first `<` must begin the closing tag.
fn payload_until(
    text: &str,
    from: usize,
    close: &'static str,
) -> Result<(usize, usize), FormatError> {
    match text[from..].find('<') {
        Some(rel) => {
            let at = from + rel;
            if text[at..].starts_with(close) {
                Ok((at, at + close.len()))
            } else {
                Err(FormatError::UnclosedTag { pos: at, tag: close })
            }
        }
        None => Err(FormatError::UnclosedTag {
            pos: text.len(),
            tag: close,
        }),
    }
}

fn expected_keys(tool: ToolName) -> &'static [&'static str] {
    match tool {
        ToolName::Search => &["tool", "query"],
        ToolName::Crop => &["tool", "region"],
        ToolName::Zoom => &["tool", "region", "factor"],
        ToolName::Edges | ToolName::Faces => &["tool"],
        ToolName::Frames => &["tool", "span", "count"],
        ToolName::Segment => &["tool", "region", "positive", "negative"],
    }
}

fn parse_tool_payload(payload: &str, pos: usize) -> Result<ToolCall, FormatError> {
    let bad = |detail: String| FormatError::BadParams { pos, detail };
    let value: serde_json::Value =
        serde_json::from_str(payload).map_err(|e| bad(format!("not json: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| bad("payload is not an object".into()))?;
    let name = obj
        .get("tool")
        .and_then(|t| t.as_str())
        .ok_or_else(|| bad("missing tool name".into()))?;
    let tool = ToolName::from_str_opt(name).ok_or_else(|| FormatError::UnknownTool {
        pos,
        name: name.to_string(),
    })?;
    let allowed = expected_keys(tool);
    for key in obj.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(bad(format!("unexpected key {key:?} for tool {name}")));
        }
    }
    for key in allowed.iter().filter(|k| **k != "negative") {
        if !obj.contains_key(*key) {
            return Err(bad(format!("missing key {key:?} for tool {name}")));
        }
    }
    let call: ToolCall =
        serde_json::from_value(value).map_err(|e| bad(format!("schema: {e}")))?;
    call.validate_schema().map_err(bad)?;
    Ok(call)
}

/// Strict parse of a response. On success the steps, answer, and the exact
/// byte spans of every observation payload come back; on failure, the first
/// violation.
pub fn parse_response(text: &str) -> Result<ParsedResponse, FormatError> {
    let mut pos = 0;
    let mut steps = Vec::new();
    let mut obs_payload_spans = Vec::new();
    loop {
        let rest = &text[pos..];
        if rest.starts_with("<answer>") {
            let start = pos + "<answer>".len();
            let (end, after) = match payload_until(text, start, "</answer>") {
                Ok(v) => v,
                Err(FormatError::UnclosedTag { pos, .. }) => {
                    return Err(FormatError::MissingAnswer { pos })
                }
                Err(e) => return Err(e),
            };
            let payload = &text[start..end];
            let answer: Prediction = serde_json::from_str(payload).map_err(|e| {
                FormatError::BadParams {
                    pos: start,
                    detail: format!("answer: {e}"),
                }
            })?;
            answer.validate().map_err(|detail| FormatError::BadParams {
                pos: start,
                detail,
            })?;
            if after != text.len() {
                return Err(FormatError::TrailingGarbage { pos: after });
            }
            return Ok(ParsedResponse {
                steps,
                answer,
                obs_payload_spans,
            });
        }
        if rest.starts_with("<think>") {
            let rstart = pos + "<think>".len();
            let (rend, after) = payload_until(text, rstart, "</think>")?;
            let reasoning = text[rstart..rend].to_string();
            if !text[after..].starts_with("<tool>") {
                return Err(FormatError::TrailingGarbage { pos: after });
            }
            let tstart = after + "<tool>".len();
            let (tend, after) = payload_until(text, tstart, "</tool>")?;
            let call = parse_tool_payload(&text[tstart..tend], tstart)?;
            if !text[after..].starts_with("<obs>") {
                return Err(FormatError::TrailingGarbage { pos: after });
            }
            let ostart = after + "<obs>".len();
            let (oend, after) = payload_until(text, ostart, "</obs>")?;
            let observation: Observation =
                serde_json::from_str(&text[ostart..oend]).map_err(|e| FormatError::BadParams {
                    pos: ostart,
                    detail: format!("observation: {e}"),
                })?;
            obs_payload_spans.push((ostart, oend));
            steps.push(ParsedStep {
                reasoning,
                call,
                observation,
            });
            pos = after;
            continue;
        }
        if pos == text.len() {
            return Err(FormatError::MissingAnswer { pos });
        }
        return Err(FormatError::TrailingGarbage { pos });
    }
}

/// Whether text passes the strict format check.
pub fn format_ok(text: &str) -> bool {
    parse_response(text).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agentloop::execute;
    use crate::toolenv::{ToolWorld, WorldConfig, WorldTamper};
    use crate::types::{CallRecord, Label, TaskKind, TrajMeta, TrajSource};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn zero_step_traj() -> Trajectory {
        Trajectory {
            task_id: "t0".into(),
            task_kind: TaskKind::ClsImage,
            steps: vec![],
            answer: Prediction::Label { label: Label::Fake },
            meta: TrajMeta::default(),
        }
    }

    fn world() -> ToolWorld {
        ToolWorld::generate(21, &WorldConfig::default(), &WorldTamper::default())
    }

    fn random_call(rng: &mut ChaCha8Rng) -> ToolCall {
        let coord = |rng: &mut ChaCha8Rng| (rng.gen_range(0..=100) as f64) / 100.0;
        let ordered = |rng: &mut ChaCha8Rng| {
            let a = (rng.gen_range(0..60) as f64) / 100.0;
            let b = a + (rng.gen_range(10..=39) as f64) / 100.0;
            (a, b)
        };
        match rng.gen_range(0..7) {
            0 => ToolCall::Search {
                query: "mayor adams budget".into(),
            },
            1 => {
                let (x1, x2) = ordered(rng);
                let (y1, y2) = ordered(rng);
                ToolCall::Crop {
                    region: [x1, y1, x2, y2],
                }
            }
            2 => {
                let (x1, x2) = ordered(rng);
                let (y1, y2) = ordered(rng);
                ToolCall::Zoom {
                    region: [x1, y1, x2, y2],
                    factor: rng.gen_range(1..=3),
                }
            }
            3 => ToolCall::Edges,
            4 => ToolCall::Faces,
            5 => {
                let (t1, t2) = ordered(rng);
                ToolCall::Frames {
                    span: [t1, t2],
                    count: rng.gen_range(1..=4),
                }
            }
            _ => {
                let (x1, x2) = ordered(rng);
                let (y1, y2) = ordered(rng);
                ToolCall::Segment {
                    region: [x1, y1, x2, y2],
                    positive: vec![[coord(rng), coord(rng)]],
                    negative: if rng.gen_bool(0.5) {
                        vec![[coord(rng), coord(rng)]]
                    } else {
                        vec![]
                    },
                }
            }
        }
    }

    fn random_answer(rng: &mut ChaCha8Rng, kind: TaskKind) -> Prediction {
        match kind {
            TaskKind::LocImage => Prediction::Box {
                region: [0.1, 0.2, 0.6, 0.8],
            },
            TaskKind::LocText => Prediction::Spans {
                spans: vec![[rng.gen_range(0..50), rng.gen_range(50..99)]],
            },
            TaskKind::LocVideo => Prediction::Segment {
                segment: [0.2, 0.7],
            },
            TaskKind::Segmentation => Prediction::SegPrompt {
                region: [0.1, 0.1, 0.5, 0.5],
                positive: vec![[0.3, 0.3]],
                negative: vec![],
            },
            TaskKind::ClsRealfact => Prediction::Label {
                label: if rng.gen_bool(0.5) {
                    Label::True
                } else {
                    Label::False
                },
            },
            _ => Prediction::Label {
                label: if rng.gen_bool(0.5) {
                    Label::Real
                } else {
                    Label::Fake
                },
            },
        }
    }

    fn random_valid_trajectory(seed: u64) -> Trajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = world();
        let kind = TaskKind::ALL[rng.gen_range(0..TaskKind::ALL.len())];
        let n_steps = rng.gen_range(0..4usize);
        let steps = (0..n_steps)
            .map(|_| {
                let call = random_call(&mut rng);
                let observation = execute(&w, &call);
                Step {
                    reasoning: format!("use {}", call.name().as_str()),
                    call: CallRecord::Valid(call),
                    observation,
                }
            })
            .collect();
        Trajectory {
            task_id: format!("t{seed}"),
            task_kind: kind,
            steps,
            answer: random_answer(&mut rng, kind),
            meta: TrajMeta {
                source: TrajSource::Seed,
                round: 0,
                budget_used: n_steps as u32,
                world_seed: 21,
            },
        }
    }

    #[test]
    fn zero_step_render_is_answer_only() {
        let text = render_response(&zero_step_traj());
        assert_eq!(text, r#"<answer>{"label":"fake"}</answer>"#);
        let parsed = parse_response(&text).unwrap();
        assert!(parsed.steps.is_empty());
    }

    #[test]
    fn multi_step_block_count_matches() {
        let traj = random_valid_trajectory(33);
        let text = render_response(&traj);
        assert_eq!(text.matches("<think>").count(), traj.steps.len());
        assert_eq!(text.matches("<obs>").count(), traj.steps.len());
    }

    #[test]
    fn parse_round_trips_structure() {
        for seed in 0..40 {
            let traj = random_valid_trajectory(seed);
            let text = render_response(&traj);
            let parsed = parse_response(&text).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
            assert_eq!(parsed.steps.len(), traj.steps.len());
            for (p, s) in parsed.steps.iter().zip(&traj.steps) {
                assert_eq!(p.reasoning, s.reasoning);
                assert_eq!(Some(&p.call), s.call.as_valid());
                assert_eq!(p.observation, s.observation);
            }
            assert_eq!(parsed.answer, traj.answer);
        }
    }

    #[test]
    fn missing_answer_close_reports_missing_answer() {
        let err = parse_response(r#"<answer>{"label":"fake"}"#).unwrap_err();
        assert!(matches!(err, FormatError::MissingAnswer { .. }));
        let err = parse_response("").unwrap_err();
        assert!(matches!(err, FormatError::MissingAnswer { pos: 0 }));
    }

    #[test]
    fn unknown_tool_detected_and_sevens_accepted() {
        for name in ToolName::ALL {
            // A syntactically complete block with a known name parses past
            // the name check (params may still fail for missing keys).
            let text = format!(
                r#"<think>x</think><tool>{{"tool":"{}"}}</tool><obs>{{"kind":"error","message":"m"}}</obs><answer>{{"label":"fake"}}</answer>"#,
                name.as_str()
            );
            match parse_response(&text) {
                Err(FormatError::UnknownTool { .. }) => panic!("{} flagged unknown", name.as_str()),
                _ => {}
            }
        }
        let text = r#"<think>x</think><tool>{"tool":"teleport"}</tool><obs>{"kind":"error","message":"m"}</obs><answer>{"label":"fake"}</answer>"#;
        assert!(matches!(
            parse_response(text),
            Err(FormatError::UnknownTool { .. })
        ));
    }

    #[test]
    fn out_of_range_coordinate_is_bad_params() {
        let text = r#"<think>x</think><tool>{"tool":"crop","region":[0.1,0.1,1.5,0.9]}</tool><obs>{"kind":"error","message":"m"}</obs><answer>{"label":"fake"}</answer>"#;
        assert!(matches!(
            parse_response(text),
            Err(FormatError::BadParams { .. })
        ));
    }

    #[test]
    fn trailing_garbage_detected() {
        let text = r#"<answer>{"label":"fake"}</answer>x"#;
        assert!(matches!(
            parse_response(text),
            Err(FormatError::TrailingGarbage { .. })
        ));
    }

    #[test]
    fn tokenize_round_trip_and_masks() {
        let traj = random_valid_trajectory(5);
        let text = render_response(&traj);
        let seq = tokenize(&text).unwrap();
        assert_eq!(detokenize(&seq.tokens), text);

        // Zero-step responses have no observation tokens.
        let z = tokenize(&render_response(&zero_step_traj())).unwrap();
        assert!(z.mask.iter().all(|m| *m));

        // Masked token count equals the tokenized length of the payloads.
        let parsed = parse_response(&text).unwrap();
        let expected: usize = parsed
            .obs_payload_spans
            .iter()
            .map(|(s, e)| tokenize(&text[*s..*e]).unwrap().len())
            .sum();
        let masked = seq.mask.iter().filter(|m| !**m).count();
        assert_eq!(masked, expected);
    }

    #[test]
    fn tokenize_rejects_unknown_symbols() {
        assert_eq!(
            tokenize("ABC"),
            Err(TokenizeError::UnknownSymbol { pos: 0 })
        );
        assert!(matches!(
            tokenize("<thing>"),
            Err(TokenizeError::UnknownSymbol { pos: 0 })
        ));
    }

    #[test]
    fn flipping_observation_payload_touches_only_masked_tokens() {
        let traj = random_valid_trajectory(12);
        if traj.steps.is_empty() {
            return;
        }
        let text = render_response(&traj);
        let parsed = parse_response(&text).unwrap();
        let (s, e) = parsed.obs_payload_spans[0];
        // Flip a digit inside the payload.
        let flip_at = text[s..e]
            .bytes()
            .position(|b| b.is_ascii_digit())
            .map(|i| s + i);
        let Some(at) = flip_at else { return };
        let mut bytes = text.clone().into_bytes();
        bytes[at] = if bytes[at] == b'7' { b'3' } else { b'7' };
        let flipped = String::from_utf8(bytes).unwrap();
        let a = tokenize(&text).unwrap();
        let b = tokenize(&flipped).unwrap();
        assert_eq!(a.len(), b.len());
        for i in 0..a.len() {
            if a.tokens[i] != b.tokens[i] {
                assert!(!a.mask[i], "unmasked token changed at {i}");
            }
        }
    }

    #[test]
    fn vocab_is_consistent() {
        assert_eq!(VOCAB_SIZE, 55);
        for id in 0..VOCAB_SIZE as u16 {
            let text = token_text(id);
            if id >= 8 {
                let c = text.chars().next().unwrap();
                assert_eq!(char_token(c), Some(id));
            }
        }
        assert_eq!(vocab_hash().len(), 64);
    }

    proptest! {
        #[test]
        fn prop_render_parse_round_trip(seed in 0u64..200) {
            let traj = random_valid_trajectory(seed);
            let text = render_response(&traj);
            let parsed = parse_response(&text).unwrap();
            prop_assert_eq!(parsed.steps.len(), traj.steps.len());
            prop_assert_eq!(&parsed.answer, &traj.answer);
            let seq = tokenize(&text).unwrap();
            prop_assert_eq!(detokenize(&seq.tokens), text);
        }
    }
}
