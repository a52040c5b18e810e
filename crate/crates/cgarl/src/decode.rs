//! Grammar-constrained emission.
//!
//! Sampling walks the response grammar as a template: forced positions have
//! a single legal token, decision points (tool choice, parameter digits,
//! answer content, list structure) ask the chooser to pick among the legal
//! continuations. Every emitted value is constructed so that re-rendering
//! the trajectory through serde reproduces the emitted surface text exactly,
//! which keeps online token streams and training-time token streams
//! identical.
//!
//! Coordinates are fixed-point with at most two decimals and no trailing
//! zero (`0.3`, `0.37`, `1.0`): exactly the decimal strings the shortest
//! round-trip float formatter prints back unchanged.

use crate::grammar::{
    char_token, token_text, TAG_ANSWER_CLOSE, TAG_ANSWER_OPEN, TAG_THINK_CLOSE, TAG_THINK_OPEN,
    TAG_TOOL_CLOSE, TAG_TOOL_OPEN,
};
use crate::types::{Label, Prediction, TaskKind, ToolCall, ToolName};

/// Supplies one token from the legal set at each grammar position.
pub trait TokenChooser {
    fn choose(&mut self, legal: &[u16]) -> u16;
}

/// An action emitted under the grammar.
#[derive(Clone, Debug, PartialEq)]
pub enum EmittedAction {
    Step { reasoning: String, call: ToolCall },
    Answer(Prediction),
}

const QUERY_MAX: usize = 16;
const SPAN_DIGITS_MAX: usize = 3;

const TOOL_WORDS: [&str; 7] = [
    "search", "crop", "zoom", "edges", "faces", "frames", "segment",
];

fn tok(c: char) -> u16 {
    char_token(c).expect("grammar character in vocabulary")
}

struct Emitter<'c> {
    chooser: &'c mut dyn TokenChooser,
}

impl<'c> Emitter<'c> {
    fn lit_tok(&mut self, t: u16) {
        let picked = self.chooser.choose(&[t]);
        debug_assert_eq!(picked, t);
    }

    fn lit(&mut self, s: &str) {
        for c in s.chars() {
            self.lit_tok(tok(c));
        }
    }

    fn choose(&mut self, legal: &[u16]) -> u16 {
        debug_assert!(!legal.is_empty());
        self.chooser.choose(legal)
    }

    /// Walk a prefix-free word set character by character.
    fn choose_word(&mut self, options: &[&'static str]) -> usize {
        let mut alive: Vec<usize> = (0..options.len()).collect();
        let mut pos = 0;
        loop {
            if alive.len() == 1 && options[alive[0]].len() == pos {
                return alive[0];
            }
            let mut legal: Vec<u16> = Vec::new();
            for i in &alive {
                let t = tok(options[*i].as_bytes()[pos] as char);
                if !legal.contains(&t) {
                    legal.push(t);
                }
            }
            legal.sort_unstable();
            let picked = self.choose(&legal);
            alive.retain(|i| tok(options[*i].as_bytes()[pos] as char) == picked);
            pos += 1;
        }
    }

    fn digit(&mut self, lo: u8, hi: u8) -> u8 {
        let legal: Vec<u16> = (lo..=hi).map(|d| tok((b'0' + d) as char)).collect();
        (self.choose(&legal) - tok('0')) as u8
    }

    /// Fixed-point coordinate followed by the terminator character. Values
    /// are `0.d`, `0.d1d2` with `d2 != 0`, or `1.0`.
    fn coord(&mut self, term: char) -> f64 {
        let first = self.choose(&[tok('0'), tok('1')]);
        self.lit(".");
        if first == tok('1') {
            self.lit("0");
            self.lit_tok(tok(term));
            return 1.0;
        }
        let d1 = self.digit(0, 9);
        let mut legal: Vec<u16> = vec![tok(term)];
        legal.extend((1..=9u8).map(|d| tok((b'0' + d) as char)));
        let next = self.choose(&legal);
        if next == tok(term) {
            return d1 as f64 / 10.0;
        }
        let d2 = (next - tok('0')) as u32;
        self.lit_tok(tok(term));
        (d1 as u32 * 10 + d2) as f64 / 100.0
    }

    /// `[x1,y1,x2,y2]`.
    fn region(&mut self) -> [f64; 4] {
        self.lit("[");
        let x1 = self.coord(',');
        let y1 = self.coord(',');
        let x2 = self.coord(',');
        let y2 = self.coord(']');
        [x1, y1, x2, y2]
    }

    /// `[a,b]`.
    fn pair(&mut self) -> [f64; 2] {
        self.lit("[");
        let a = self.coord(',');
        let b = self.coord(']');
        [a, b]
    }

    /// Unsigned integer with up to three digits and no leading zeros,
    /// followed by the terminator.
    fn uint(&mut self, term: char) -> u32 {
        let d0 = self.digit(0, 9);
        if d0 == 0 {
            self.lit_tok(tok(term));
            return 0;
        }
        let mut value = d0 as u32;
        for _ in 1..SPAN_DIGITS_MAX {
            let mut legal: Vec<u16> = vec![tok(term)];
            legal.extend((0..=9u8).map(|d| tok((b'0' + d) as char)));
            legal.sort_unstable();
            let next = self.choose(&legal);
            if next == tok(term) {
                return value;
            }
            value = value * 10 + (next - tok('0')) as u32;
        }
        self.lit_tok(tok(term));
        value
    }

    /// Quoted query over `[a-z0-9 _]`, 1..=QUERY_MAX characters.
    fn query(&mut self) -> String {
        self.lit("\"");
        let mut content: Vec<u16> = ('a'..='z').map(tok).collect();
        content.extend(('0'..='9').map(tok));
        content.push(tok(' '));
        content.push(tok('_'));
        content.sort_unstable();
        let mut with_end = content.clone();
        with_end.push(tok('"'));
        with_end.sort_unstable();
        let mut s = String::new();
        loop {
            let legal = if s.is_empty() { &content } else { &with_end };
            let picked = self.choose(legal);
            if picked == tok('"') {
                return s;
            }
            s.push_str(token_text(picked));
            if s.len() == QUERY_MAX {
                self.lit("\"");
                return s;
            }
        }
    }

    /// `[[x,y],...]` with the given arity bounds.
    fn points(&mut self, min: usize, max: usize) -> Vec<[f64; 2]> {
        self.lit("[");
        let mut pts: Vec<[f64; 2]> = Vec::new();
        loop {
            let cont_tok = if pts.is_empty() { tok('[') } else { tok(',') };
            if pts.len() < min {
                self.lit_tok(cont_tok);
            } else if pts.len() >= max {
                self.lit("]");
                return pts;
            } else if self.choose(&[cont_tok, tok(']')]) == tok(']') {
                return pts;
            }
            if !pts.is_empty() {
                self.lit("[");
            }
            let x = self.coord(',');
            let y = self.coord(']');
            pts.push([x, y]);
        }
    }

    fn tool_params(&mut self, tool: ToolName) -> ToolCall {
        match tool {
            ToolName::Search => {
                self.lit(",\"query\":");
                ToolCall::Search {
                    query: self.query(),
                }
            }
            ToolName::Crop => {
                self.lit(",\"region\":");
                ToolCall::Crop {
                    region: self.region(),
                }
            }
            ToolName::Zoom => {
                self.lit(",\"region\":");
                let region = self.region();
                self.lit(",\"factor\":");
                let factor = self.digit(1, 8) as u32;
                ToolCall::Zoom { region, factor }
            }
            ToolName::Edges => ToolCall::Edges,
            ToolName::Faces => ToolCall::Faces,
            ToolName::Frames => {
                self.lit(",\"span\":");
                let span = self.pair();
                self.lit(",\"count\":");
                let count = self.digit(1, 9) as u32;
                ToolCall::Frames { span, count }
            }
            ToolName::Segment => {
                self.lit(",\"region\":");
                let region = self.region();
                self.lit(",\"positive\":");
                let positive = self.points(1, 3);
                self.lit(",\"negative\":");
                let negative = self.points(0, 2);
                ToolCall::Segment {
                    region,
                    positive,
                    negative,
                }
            }
        }
    }

    /// Answer payload and closing tag; the opening tag is already consumed.
    fn answer_body(&mut self, kind: TaskKind) -> Prediction {
        let pred = match kind {
            k if k.is_classification() => {
                self.lit("{\"label\":\"");
                let words: &[&'static str] = if k == TaskKind::ClsRealfact {
                    &["true", "false"]
                } else {
                    &["real", "fake"]
                };
                let w = self.choose_word(words);
                self.lit("\"}");
                let label = match words[w] {
                    "real" => Label::Real,
                    "fake" => Label::Fake,
                    "true" => Label::True,
                    _ => Label::False,
                };
                Prediction::Label { label }
            }
            TaskKind::LocImage => {
                self.lit("{\"box\":");
                let region = self.region();
                self.lit("}");
                Prediction::Box { region }
            }
            TaskKind::LocText => {
                self.lit("{\"spans\":[");
                let mut spans = Vec::new();
                loop {
                    self.lit("[");
                    let s = self.uint(',');
                    let e = self.uint(']');
                    spans.push([s, e]);
                    if spans.len() == 2 {
                        self.lit("]");
                        break;
                    }
                    if self.choose(&[tok(','), tok(']')]) == tok(']') {
                        break;
                    }
                }
                self.lit("}");
                Prediction::Spans { spans }
            }
            TaskKind::LocVideo => {
                self.lit("{\"segment\":");
                let segment = self.pair();
                self.lit("}");
                Prediction::Segment { segment }
            }
            TaskKind::Segmentation => {
                self.lit("{\"box\":");
                let region = self.region();
                self.lit(",\"positive\":");
                let positive = self.points(1, 3);
                self.lit(",\"negative\":");
                let negative = self.points(0, 2);
                self.lit("}");
                Prediction::SegPrompt {
                    region,
                    positive,
                    negative,
                }
            }
            _ => unreachable!("classification kinds handled above"),
        };
        self.lit_tok(TAG_ANSWER_CLOSE);
        pred
    }
}

/// Emit one action: a full think/tool block or the answer block. When
/// `allow_tool` is false only the answer branch is legal.
pub fn emit_action(
    chooser: &mut dyn TokenChooser,
    kind: TaskKind,
    allow_tool: bool,
) -> EmittedAction {
    let mut e = Emitter { chooser };
    let start = if allow_tool {
        e.choose(&[TAG_THINK_OPEN, TAG_ANSWER_OPEN])
    } else {
        e.lit_tok(TAG_ANSWER_OPEN);
        TAG_ANSWER_OPEN
    };
    if start == TAG_ANSWER_OPEN {
        return EmittedAction::Answer(e.answer_body(kind));
    }
    e.lit("use ");
    let tool_idx = e.choose_word(&TOOL_WORDS);
    let tool = ToolName::ALL[tool_idx];
    let reasoning = format!("use {}", TOOL_WORDS[tool_idx]);
    e.lit_tok(TAG_THINK_CLOSE);
    e.lit_tok(TAG_TOOL_OPEN);
    e.lit("{\"tool\":\"");
    e.lit(TOOL_WORDS[tool_idx]);
    e.lit("\"");
    let call = e.tool_params(tool);
    e.lit("}");
    e.lit_tok(TAG_TOOL_CLOSE);
    EmittedAction::Step { reasoning, call }
}

/// Emit the forced answer block, used at budget exhaustion.
pub fn emit_answer(chooser: &mut dyn TokenChooser, kind: TaskKind) -> Prediction {
    let mut e = Emitter { chooser };
    e.lit_tok(TAG_ANSWER_OPEN);
    e.answer_body(kind)
}
