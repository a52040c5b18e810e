//! Domain types shared by every other module: tasks, tool calls, steps,
//! trajectories, predictions, ground truth, and token sequences.
//!
//! All types here are immutable after construction and safe to share across
//! threads. Trajectories serialize to JSON-lines, one per line, with the
//! schema `{"task_id","task_kind","steps":[{"reasoning","tool","params",
//! "observation"}],"answer","meta":{...}}`.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::metrics::PixelMask;
use crate::toolenv::Observation;

/// The closed set of task kinds covered by the framework.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ClsText,
    ClsImage,
    ClsVideo,
    ClsTextImage,
    ClsTextVideo,
    ClsRealfact,
    LocImage,
    LocText,
    LocVideo,
    Segmentation,
}

impl TaskKind {
    pub const ALL: [TaskKind; 10] = [
        TaskKind::ClsText,
        TaskKind::ClsImage,
        TaskKind::ClsVideo,
        TaskKind::ClsTextImage,
        TaskKind::ClsTextVideo,
        TaskKind::ClsRealfact,
        TaskKind::LocImage,
        TaskKind::LocText,
        TaskKind::LocVideo,
        TaskKind::Segmentation,
    ];

    /// Stable index used for per-task policy bias rows and coefficient tables.
    pub fn index(self) -> usize {
        Self::ALL.iter().position(|k| *k == self).unwrap()
    }

    pub fn is_classification(self) -> bool {
        matches!(
            self,
            TaskKind::ClsText
                | TaskKind::ClsImage
                | TaskKind::ClsVideo
                | TaskKind::ClsTextImage
                | TaskKind::ClsTextVideo
                | TaskKind::ClsRealfact
        )
    }

    /// Coarse modality bucket used by dataset statistics.
    pub fn modality(self) -> &'static str {
        match self {
            TaskKind::ClsText | TaskKind::LocText | TaskKind::ClsRealfact => "text",
            TaskKind::ClsImage | TaskKind::LocImage | TaskKind::Segmentation => "image",
            TaskKind::ClsVideo | TaskKind::LocVideo => "video",
            TaskKind::ClsTextImage => "text-image",
            TaskKind::ClsTextVideo => "text-video",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::ClsText => "cls_text",
            TaskKind::ClsImage => "cls_image",
            TaskKind::ClsVideo => "cls_video",
            TaskKind::ClsTextImage => "cls_text_image",
            TaskKind::ClsTextVideo => "cls_text_video",
            TaskKind::ClsRealfact => "cls_realfact",
            TaskKind::LocImage => "loc_image",
            TaskKind::LocText => "loc_text",
            TaskKind::LocVideo => "loc_video",
            TaskKind::Segmentation => "segmentation",
        }
    }
}

/// The seven tools of the environment, in their fixed canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolName {
    Search,
    Crop,
    Zoom,
    Edges,
    Faces,
    Frames,
    Segment,
}

impl ToolName {
    pub const ALL: [ToolName; 7] = [
        ToolName::Search,
        ToolName::Crop,
        ToolName::Zoom,
        ToolName::Edges,
        ToolName::Faces,
        ToolName::Frames,
        ToolName::Segment,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ToolName::Search => "search",
            ToolName::Crop => "crop",
            ToolName::Zoom => "zoom",
            ToolName::Edges => "edges",
            ToolName::Faces => "faces",
            ToolName::Frames => "frames",
            ToolName::Segment => "segment",
        }
    }

    pub fn from_str_opt(s: &str) -> Option<ToolName> {
        Self::ALL.iter().copied().find(|t| t.as_str() == s)
    }
}

/// A schema-valid tool invocation. Numeric ordering constraints (for example
/// `x1 < x2` on a crop region) are checked at execution time so that a policy
/// can emit them and receive an error observation, exactly like a malformed
/// call at inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tool", rename_all = "lowercase")]
pub enum ToolCall {
    Search {
        query: String,
    },
    Crop {
        region: [f64; 4],
    },
    Zoom {
        region: [f64; 4],
        factor: u32,
    },
    Edges,
    Faces,
    Frames {
        span: [f64; 2],
        count: u32,
    },
    Segment {
        region: [f64; 4],
        positive: Vec<[f64; 2]>,
        #[serde(default)]
        negative: Vec<[f64; 2]>,
    },
}

impl ToolCall {
    pub fn name(&self) -> ToolName {
        match self {
            ToolCall::Search { .. } => ToolName::Search,
            ToolCall::Crop { .. } => ToolName::Crop,
            ToolCall::Zoom { .. } => ToolName::Zoom,
            ToolCall::Edges => ToolName::Edges,
            ToolCall::Faces => ToolName::Faces,
            ToolCall::Frames { .. } => ToolName::Frames,
            ToolCall::Segment { .. } => ToolName::Segment,
        }
    }

    /// Schema-level validity: every coordinate finite and inside `[0,1]`.
    pub fn validate_schema(&self) -> Result<(), String> {
        fn unit(vals: &[f64]) -> Result<(), String> {
            for v in vals {
                if !v.is_finite() || *v < 0.0 || *v > 1.0 {
                    return Err(format!("coordinate {v} outside the unit range"));
                }
            }
            Ok(())
        }
        match self {
            ToolCall::Search { .. } | ToolCall::Edges | ToolCall::Faces => Ok(()),
            ToolCall::Crop { region } => unit(region),
            ToolCall::Zoom { region, .. } => unit(region),
            ToolCall::Frames { span, .. } => unit(span),
            ToolCall::Segment {
                region,
                positive,
                negative,
            } => {
                unit(region)?;
                for p in positive.iter().chain(negative.iter()) {
                    unit(p)?;
                }
                Ok(())
            }
        }
    }
}

/// Classification labels. Real/fake for forgery classification tasks,
/// true/false for real-time event verification.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
    True,
    False,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
            Label::True => "true",
            Label::False => "false",
        }
    }
}

/// Final prediction of a trajectory. The variant must match the task kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prediction {
    Label {
        label: Label,
    },
    /// Segmentation prompt: a box plus positive points inside the target and
    /// negative points in the background.
    SegPrompt {
        #[serde(rename = "box")]
        region: [f64; 4],
        positive: Vec<[f64; 2]>,
        #[serde(default)]
        negative: Vec<[f64; 2]>,
    },
    Box {
        #[serde(rename = "box")]
        region: [f64; 4],
    },
    Spans {
        spans: Vec<[u32; 2]>,
    },
    Segment {
        segment: [f64; 2],
    },
}

impl Prediction {
    /// Whether the prediction variant is admissible for the task kind.
    pub fn matches_kind(&self, kind: TaskKind) -> bool {
        match (self, kind) {
            (Prediction::Label { .. }, k) if k.is_classification() => true,
            (Prediction::Box { .. }, TaskKind::LocImage) => true,
            (Prediction::Spans { .. }, TaskKind::LocText) => true,
            (Prediction::Segment { .. }, TaskKind::LocVideo) => true,
            (Prediction::SegPrompt { .. }, TaskKind::Segmentation) => true,
            _ => false,
        }
    }

    /// Invariants shared with the response grammar: coordinates in `[0,1]`
    /// and at least one positive point on a segmentation prompt.
    pub fn validate(&self) -> Result<(), String> {
        fn unit(vals: &[f64]) -> Result<(), String> {
            for v in vals {
                if !v.is_finite() || *v < 0.0 || *v > 1.0 {
                    return Err(format!("coordinate {v} outside the unit range"));
                }
            }
            Ok(())
        }
        match self {
            Prediction::Label { .. } | Prediction::Spans { .. } => Ok(()),
            Prediction::Box { region } => unit(region),
            Prediction::Segment { segment } => unit(segment),
            Prediction::SegPrompt {
                region,
                positive,
                negative,
            } => {
                if positive.is_empty() {
                    return Err("segmentation prompt needs at least one positive point".into());
                }
                unit(region)?;
                for p in positive.iter().chain(negative.iter()) {
                    unit(p)?;
                }
                Ok(())
            }
        }
    }
}

/// Ground-truth annotation, variant matching the task kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum GroundTruth {
    Label(Label),
    Box([f64; 4]),
    /// Half-open character index ranges of the manipulated span(s).
    Spans(Vec<[u32; 2]>),
    Segment([f64; 2]),
    Mask(PixelMask),
}

/// One task instance: kind, the seed of the world it reads, the textual
/// input shown to the policy, and the annotation used for rewards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub kind: TaskKind,
    pub world_seed: u64,
    pub question: String,
    pub ground_truth: GroundTruth,
}

/// A recorded tool invocation inside a step. `Invalid` keeps malformed
/// emissions (unknown tool, unparsable params) representable so that fuzzed
/// episodes and their error observations survive serialization.
#[derive(Clone, Debug, PartialEq)]
pub enum CallRecord {
    Valid(ToolCall),
    Invalid {
        tool: String,
        params: serde_json::Value,
        error: String,
    },
}

impl CallRecord {
    pub fn as_valid(&self) -> Option<&ToolCall> {
        match self {
            CallRecord::Valid(c) => Some(c),
            CallRecord::Invalid { .. } => None,
        }
    }

    pub fn tool_str(&self) -> String {
        match self {
            CallRecord::Valid(c) => c.name().as_str().to_string(),
            CallRecord::Invalid { tool, .. } => tool.clone(),
        }
    }

    /// Inline wire form used by the `<tool>` grammar payload:
    /// `{"tool":"crop","region":[...]}`.
    pub fn to_inline_json(&self) -> serde_json::Value {
        match self {
            CallRecord::Valid(call) => serde_json::to_value(call).expect("tool call to json"),
            CallRecord::Invalid { tool, params, .. } => {
                let mut map = serde_json::Map::new();
                map.insert("tool".into(), serde_json::Value::String(tool.clone()));
                if let serde_json::Value::Object(obj) = params {
                    for (k, v) in obj {
                        map.insert(k.clone(), v.clone());
                    }
                }
                serde_json::Value::Object(map)
            }
        }
    }
}

/// One reasoning-action-observation step. The observation is always the one
/// produced by executing the recorded call against the task's world.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub reasoning: String,
    pub call: CallRecord,
    pub observation: Observation,
}

#[derive(Serialize, Deserialize)]
struct StepWire {
    reasoning: String,
    tool: String,
    params: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    observation: Observation,
}

impl Serialize for Step {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let (tool, params, error) = match &self.call {
            CallRecord::Valid(call) => {
                let mut v = serde_json::to_value(call).map_err(serde::ser::Error::custom)?;
                let obj = v.as_object_mut().expect("tool call serializes to object");
                obj.remove("tool");
                (call.name().as_str().to_string(), v, None)
            }
            CallRecord::Invalid {
                tool,
                params,
                error,
            } => (tool.clone(), params.clone(), Some(error.clone())),
        };
        StepWire {
            reasoning: self.reasoning.clone(),
            tool,
            params,
            error,
            observation: self.observation.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Step {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = StepWire::deserialize(deserializer)?;
        let call = if let Some(error) = wire.error {
            CallRecord::Invalid {
                tool: wire.tool,
                params: wire.params,
                error,
            }
        } else {
            let mut v = serde_json::Map::new();
            v.insert("tool".into(), serde_json::Value::String(wire.tool.clone()));
            if let serde_json::Value::Object(obj) = &wire.params {
                for (k, val) in obj {
                    v.insert(k.clone(), val.clone());
                }
            }
            match serde_json::from_value::<ToolCall>(serde_json::Value::Object(v)) {
                Ok(call) => CallRecord::Valid(call),
                Err(e) => CallRecord::Invalid {
                    tool: wire.tool,
                    params: wire.params,
                    error: format!("unparsable call: {e}"),
                },
            }
        };
        Ok(Step {
            reasoning: wire.reasoning,
            call,
            observation: wire.observation,
        })
    }
}

/// Provenance of a trajectory in the dataset pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajSource {
    Seed,
    Evolve,
    Hard,
    Rollout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajMeta {
    pub source: TrajSource,
    pub round: u32,
    #[serde(default)]
    pub budget_used: u32,
    #[serde(default)]
    pub world_seed: u64,
}

impl Default for TrajMeta {
    fn default() -> Self {
        TrajMeta {
            source: TrajSource::Rollout,
            round: 0,
            budget_used: 0,
            world_seed: 0,
        }
    }
}

/// An episode record: steps plus the terminal answer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub task_kind: TaskKind,
    pub steps: Vec<Step>,
    pub answer: Prediction,
    #[serde(default = "TrajMeta::default")]
    pub meta: TrajMeta,
}

impl Trajectory {
    pub fn tool_calls(&self) -> usize {
        self.steps.len()
    }
}

/// Token ids over the fixed response vocabulary with a per-token mask:
/// 1 = model-generated, 0 = tool-returned observation payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<u16>,
    pub mask: Vec<bool>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<u16>, mask: Vec<bool>) -> Self {
        assert_eq!(tokens.len(), mask.len(), "token/mask length mismatch");
        TokenSequence { tokens, mask }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn model_token_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// The mask-1 subsequence, in order.
    pub fn model_tokens(&self) -> Vec<u16> {
        self.tokens
            .iter()
            .zip(&self.mask)
            .filter(|(_, m)| **m)
            .map(|(t, _)| *t)
            .collect()
    }
}

/// Greyscale 8-bit raster. Serialized with pixels as a lowercase hex string,
/// two characters per pixel, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl Raster {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), (width * height) as usize);
        Raster {
            width,
            height,
            pixels,
        }
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Raster::new(width, height, vec![value; (width * height) as usize])
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        self.pixels[(y * self.width + x) as usize] = v;
    }

    pub fn mean(&self) -> f64 {
        if self.pixels.is_empty() {
            return 0.0;
        }
        self.pixels.iter().map(|p| *p as f64).sum::<f64>() / self.pixels.len() as f64
    }
}

#[derive(Serialize, Deserialize)]
struct RasterWire {
    w: u32,
    h: u32,
    pix: String,
}

impl Serialize for Raster {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RasterWire {
            w: self.width,
            h: self.height,
            pix: hex_encode(&self.pixels),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Raster {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = RasterWire::deserialize(deserializer)?;
        let pixels = hex_decode(&wire.pix).map_err(D::Error::custom)?;
        if pixels.len() != (wire.w * wire.h) as usize {
            return Err(D::Error::custom("raster pixel count mismatch"));
        }
        Ok(Raster {
            width: wire.w,
            height: wire.h,
            pixels,
        })
    }
}

pub(crate) fn hex_encode(bytes: &[u8]) -> String {
    const HEX: &[u8; 16] = b"0123456789abcdef";
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push(HEX[(b >> 4) as usize] as char);
        s.push(HEX[(b & 0xf) as usize] as char);
    }
    s
}

pub(crate) fn hex_decode(s: &str) -> Result<Vec<u8>, String> {
    fn nibble(c: u8) -> Result<u8, String> {
        match c {
            b'0'..=b'9' => Ok(c - b'0'),
            b'a'..=b'f' => Ok(c - b'a' + 10),
            _ => Err(format!("invalid hex character {}", c as char)),
        }
    }
    let b = s.as_bytes();
    if b.len() % 2 != 0 {
        return Err("odd hex length".into());
    }
    let mut out = Vec::with_capacity(b.len() / 2);
    for pair in b.chunks(2) {
        out.push((nibble(pair[0])? << 4) | nibble(pair[1])?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tool_call_wire_format_is_inline_tagged() {
        let call = ToolCall::Crop {
            region: [0.1, 0.2, 0.3, 0.4],
        };
        let json = serde_json::to_string(&call).unwrap();
        assert_eq!(json, r#"{"tool":"crop","region":[0.1,0.2,0.3,0.4]}"#);
        let back: ToolCall = serde_json::from_str(&json).unwrap();
        assert_eq!(back, call);
    }

    #[test]
    fn prediction_untagged_variants_disambiguate() {
        let p: Prediction = serde_json::from_str(r#"{"label":"fake"}"#).unwrap();
        assert_eq!(p, Prediction::Label { label: Label::Fake });
        let p: Prediction = serde_json::from_str(r#"{"box":[0.0,0.0,0.5,0.5]}"#).unwrap();
        assert!(matches!(p, Prediction::Box { .. }));
        let p: Prediction =
            serde_json::from_str(r#"{"box":[0.0,0.0,0.5,0.5],"positive":[[0.1,0.1]]}"#).unwrap();
        assert!(matches!(p, Prediction::SegPrompt { .. }));
        let p: Prediction = serde_json::from_str(r#"{"spans":[[3,9]]}"#).unwrap();
        assert!(matches!(p, Prediction::Spans { .. }));
        let p: Prediction = serde_json::from_str(r#"{"segment":[0.2,0.6]}"#).unwrap();
        assert!(matches!(p, Prediction::Segment { .. }));
    }

    #[test]
    fn step_wire_preserves_invalid_calls() {
        let step = Step {
            reasoning: "use teleport".into(),
            call: CallRecord::Invalid {
                tool: "teleport".into(),
                params: serde_json::json!({}),
                error: "unknown tool".into(),
            },
            observation: Observation::Error {
                message: "unknown tool teleport".into(),
            },
        };
        let json = serde_json::to_string(&step).unwrap();
        let back: Step = serde_json::from_str(&json).unwrap();
        assert_eq!(back, step);
    }

    #[test]
    fn hex_round_trip() {
        let bytes = vec![0u8, 255, 16, 42];
        assert_eq!(hex_decode(&hex_encode(&bytes)).unwrap(), bytes);
    }

    #[test]
    fn segprompt_requires_positive_point() {
        let p = Prediction::SegPrompt {
            region: [0.0, 0.0, 1.0, 1.0],
            positive: vec![],
            negative: vec![],
        };
        assert!(p.validate().is_err());
    }
}
