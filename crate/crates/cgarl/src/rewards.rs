//! Reward components and the two stage compositions.
//!
//! Stage I: `R = R_ans + R_fmt + R_rep`. Stage III gates correct responses
//! multiplicatively by the process score and adds the tool-efficiency bonus:
//! `R = s_proc * (R_ans + R_fmt + R_toolmin + R_rep)` when correct, and the
//! plain stage-I sum otherwise, so incorrect responses are never
//! process-penalized.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar;
use crate::metrics::{self, LabeledPoint, Rect, Segment};
use crate::types::{GroundTruth, Prediction, TaskSpec, TokenSequence, Trajectory};

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("prediction variant does not match task kind {0}")]
    VariantMismatch(String),
    #[error("correct response is missing its process score")]
    MissingProcScore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Exponential scale of the metric-to-reward mapping.
    pub alpha: f64,
    pub format_bonus: f64,
    /// Maximum repetition penalty; negative.
    pub rep_lambda: f64,
    /// N-gram size of the repetition penalty.
    pub rep_n: usize,
    pub toolmin_bonus: f64,
    /// Strict lower bound for a localization/segmentation answer to count as
    /// correct in stage III (`metric > threshold`).
    pub correctness_threshold: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            alpha: 3.0,
            format_bonus: 0.2,
            rep_lambda: -1.0,
            rep_n: 3,
            toolmin_bonus: 0.5,
            correctness_threshold: 0.7,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.alpha <= 0.0 {
            return Err("alpha must be positive".into());
        }
        if self.rep_n == 0 {
            return Err("rep_n must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.correctness_threshold) || self.correctness_threshold == 0.0 {
            return Err("correctness threshold must lie in (0,1)".into());
        }
        Ok(())
    }
}

/// Per-response reward components and their composed total.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_ans: f64,
    pub r_fmt: f64,
    pub r_rep: f64,
    pub r_toolmin: f64,
    /// Present iff the response is correct and stage III scored it.
    pub s_proc: Option<f64>,
    pub total: f64,
    pub correct: bool,
    /// Raw answer metric before the exponential mapping.
    pub raw_metric: f64,
}

/// `(e^{alpha m} - 1) / (e^{alpha} - 1)`: strictly increasing, convex for
/// positive alpha, pinned to 0 at m=0 and 1 at m=1.
pub fn exp_map(m: f64, alpha: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&m), "metric {m} outside [0,1]");
    (alpha * m).exp_m1() / alpha.exp_m1()
}

fn spans_to_set(spans: &[[u32; 2]], doc_len: u32) -> BTreeSet<u32> {
    let mut set = BTreeSet::new();
    for [s, e] in spans {
        for i in *s..(*e).min(doc_len) {
            set.insert(i);
        }
    }
    set
}

/// Raw answer metric in `[0,1]`. For classification this is the 0/1 label
/// match; for localization and segmentation it is the overlap metric before
/// any mapping. Degenerate predicted geometry (reversed boxes or segments)
/// scores 0 rather than erroring.
pub fn raw_answer_metric(task: &TaskSpec, pred: &Prediction) -> Result<f64, RewardError> {
    let mismatch = || RewardError::VariantMismatch(task.kind.as_str().into());
    if !pred.matches_kind(task.kind) {
        return Err(mismatch());
    }
    match (&task.ground_truth, pred) {
        (GroundTruth::Label(gt), Prediction::Label { label }) => {
            Ok(if gt == label { 1.0 } else { 0.0 })
        }
        (GroundTruth::Box(gt), Prediction::Box { region }) => {
            let gt = Rect::from_array(*gt).expect("ground-truth box is valid");
            match Rect::from_array(*region) {
                Ok(p) => Ok(metrics::iou(&p, &gt)),
                Err(_) => Ok(0.0),
            }
        }
        (GroundTruth::Spans(gt), Prediction::Spans { spans }) => {
            let doc_len = task.question.len() as u32;
            Ok(metrics::span_f1(
                &spans_to_set(spans, doc_len),
                &spans_to_set(gt, doc_len),
            ))
        }
        (GroundTruth::Segment(gt), Prediction::Segment { segment }) => {
            let gt = Segment::from_array(*gt).expect("ground-truth segment is valid");
            match Segment::from_array(*segment) {
                Ok(p) => Ok(metrics::tiou(&p, &gt)),
                Err(_) => Ok(0.0),
            }
        }
        (
            GroundTruth::Mask(gt),
            Prediction::SegPrompt {
                region,
                positive,
                negative,
            },
        ) => {
            let rect = match Rect::from_array(*region) {
                Ok(r) => r,
                Err(_) => return Ok(0.0),
            };
            let points: Vec<LabeledPoint> = positive
                .iter()
                .map(|p| LabeledPoint {
                    x: p[0],
                    y: p[1],
                    positive: true,
                })
                .chain(negative.iter().map(|p| LabeledPoint {
                    x: p[0],
                    y: p[1],
                    positive: false,
                }))
                .collect();
            match metrics::seg_score(&rect, &points, gt) {
                Ok(v) => Ok(v),
                Err(_) => Ok(0.0),
            }
        }
        _ => Err(mismatch()),
    }
}

/// Answer reward plus the raw metric it was derived from. Classification is
/// the discrete 0/1 rule; continuous metrics go through [`exp_map`].
pub fn answer_reward(
    task: &TaskSpec,
    pred: &Prediction,
    cfg: &RewardConfig,
) -> Result<(f64, f64), RewardError> {
    let raw = raw_answer_metric(task, pred)?;
    let reward = if task.kind.is_classification() {
        raw
    } else {
        exp_map(raw, cfg.alpha)
    };
    Ok((reward, raw))
}

/// 0.2 iff the strict format check accepts the text.
pub fn format_reward(text: &str, cfg: &RewardConfig) -> f64 {
    if grammar::format_ok(text) {
        cfg.format_bonus
    } else {
        0.0
    }
}

/// N-gram repetition penalty over model-generated tokens only:
/// `lambda * (1 - unique/total)`, and 0 when there are no n-grams.
pub fn repetition_penalty(tokens: &TokenSequence, cfg: &RewardConfig) -> f64 {
    let model = tokens.model_tokens();
    if model.len() < cfg.rep_n {
        return 0.0;
    }
    let total = model.len() - cfg.rep_n + 1;
    let unique: HashSet<&[u16]> = model.windows(cfg.rep_n).collect();
    cfg.rep_lambda * (1.0 - unique.len() as f64 / total as f64)
}

/// Tool-efficiency bonuses for a group answering the same question: every
/// correct response tied for the fewest tool calls receives the bonus,
/// everyone else (and every incorrect response) receives 0.
pub fn toolmin_rewards(group: &[(&Trajectory, bool)], cfg: &RewardConfig) -> Vec<f64> {
    let min_correct = group
        .iter()
        .filter(|(_, correct)| *correct)
        .map(|(t, _)| t.tool_calls())
        .min();
    group
        .iter()
        .map(|(t, correct)| match min_correct {
            Some(m) if *correct && t.tool_calls() == m => cfg.toolmin_bonus,
            _ => 0.0,
        })
        .collect()
}

/// Stage-III correctness: label match for classification, strict
/// `metric > threshold` for localization and segmentation.
pub fn is_correct(task: &TaskSpec, pred: &Prediction, cfg: &RewardConfig) -> Result<bool, RewardError> {
    let raw = raw_answer_metric(task, pred)?;
    if task.kind.is_classification() {
        Ok(raw == 1.0)
    } else {
        Ok(raw > cfg.correctness_threshold)
    }
}

/// Stage-I total: plain sum of answer, format, and repetition terms.
pub fn stage1_total(r_ans: f64, r_fmt: f64, r_rep: f64) -> f64 {
    r_ans + r_fmt + r_rep
}

/// Stage-III total. Correct responses are gated multiplicatively by the
/// process score; incorrect responses keep the ungated stage-I sum and see
/// neither the gate nor the tool bonus.
pub fn stage3_total(b: &RewardBreakdown, s_proc: Option<f64>) -> Result<f64, RewardError> {
    if b.correct {
        let s = s_proc.ok_or(RewardError::MissingProcScore)?;
        Ok(s * (b.r_ans + b.r_fmt + b.r_toolmin + b.r_rep))
    } else {
        Ok(b.r_ans + b.r_rep + b.r_fmt)
    }
}

/// Stage-I components for one rendered response.
pub fn stage1_breakdown(
    task: &TaskSpec,
    traj: &Trajectory,
    cfg: &RewardConfig,
) -> Result<RewardBreakdown, RewardError> {
    let text = grammar::render_response(traj);
    let (r_ans, raw_metric) = answer_reward(task, &traj.answer, cfg)?;
    let r_fmt = format_reward(&text, cfg);
    let r_rep = match grammar::tokenize(&text) {
        Ok(seq) => repetition_penalty(&seq, cfg),
        Err(_) => 0.0,
    };
    let correct = is_correct(task, &traj.answer, cfg)?;
    Ok(RewardBreakdown {
        r_ans,
        r_fmt,
        r_rep,
        r_toolmin: 0.0,
        s_proc: None,
        total: stage1_total(r_ans, r_fmt, r_rep),
        correct,
        raw_metric,
    })
}
