//! The reasoning-action-observation inference protocol: parse the agent's
//! action, execute it online, splice the observation back, enforce the
//! interaction budget, and force an answer when the budget runs out.
//!
//! Malformed calls never abort an episode: they cost budget and come back as
//! error observations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::toolenv::{self, Observation, ToolWorld};
use crate::types::{
    CallRecord, Label, Prediction, Step, TaskKind, TaskSpec, ToolCall, TrajMeta, TrajSource,
    Trajectory,
};

/// Episode budget settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    /// Maximum number of tool calls per episode.
    pub t_max: u32,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig { t_max: 8 }
    }
}

/// What an agent may emit at each turn.
#[derive(Clone, Debug, PartialEq)]
pub enum AgentAction {
    Call { reasoning: String, call: CallRequest },
    Answer(Prediction),
}

/// A tool request as emitted, before execution. `Raw` carries arbitrary
/// emissions (unknown tools, unparsable params) so that fuzzing and scripted
/// misbehavior exercise the error-observation path.
#[derive(Clone, Debug, PartialEq)]
pub enum CallRequest {
    Tool(ToolCall),
    Raw {
        tool: String,
        params: serde_json::Value,
    },
}

/// Turn-based agent interface. `forced_answer` is invoked once the budget is
/// exhausted; the protocol never lets an episode end without an answer.
pub trait Agent {
    fn decide(&mut self, task: &TaskSpec, history: &[Step]) -> AgentAction;
    fn forced_answer(&mut self, task: &TaskSpec, history: &[Step]) -> Prediction;
}

/// Execute a schema-valid call. Semantic violations (reversed boxes, empty
/// queries, out-of-range counts) come back as error observations.
pub fn execute(world: &ToolWorld, call: &ToolCall) -> Observation {
    if let Err(detail) = call.validate_schema() {
        return Observation::Error {
            message: format!("bad params: {detail}"),
        };
    }
    match call {
        ToolCall::Search { query } => toolenv::tool_search(world, query),
        ToolCall::Crop { region } => toolenv::tool_crop(world, region),
        ToolCall::Zoom { region, factor } => toolenv::tool_zoom(world, region, *factor),
        ToolCall::Edges => toolenv::tool_edge_anomaly(world),
        ToolCall::Faces => toolenv::tool_faces(world),
        ToolCall::Frames { span, count } => toolenv::tool_frames(world, span, *count),
        ToolCall::Segment {
            region,
            positive,
            negative,
        } => toolenv::tool_segment(world, region, positive, negative),
    }
}

/// Execute any emitted request. Unknown tools and unparsable params become
/// error observations with a message naming the violation.
pub fn execute_request(world: &ToolWorld, req: &CallRequest) -> (CallRecord, Observation) {
    match req {
        CallRequest::Tool(call) => {
            let obs = execute(world, call);
            (CallRecord::Valid(call.clone()), obs)
        }
        CallRequest::Raw { tool, params } => {
            let mut merged = serde_json::Map::new();
            merged.insert("tool".into(), serde_json::Value::String(tool.clone()));
            if let serde_json::Value::Object(obj) = params {
                for (k, v) in obj {
                    merged.insert(k.clone(), v.clone());
                }
            }
            let error;
            let obs;
            match crate::types::ToolName::from_str_opt(tool) {
                None => {
                    error = format!("unknown tool {tool}");
                    obs = Observation::Error {
                        message: error.clone(),
                    };
                }
                Some(_) => {
                    match serde_json::from_value::<ToolCall>(serde_json::Value::Object(merged)) {
                        Ok(call) => {
                            let o = execute(world, &call);
                            return (CallRecord::Valid(call), o);
                        }
                        Err(e) => {
                            error = format!("bad params for {tool}: {e}");
                            obs = Observation::Error {
                                message: error.clone(),
                            };
                        }
                    }
                }
            }
            (
                CallRecord::Invalid {
                    tool: tool.clone(),
                    params: params.clone(),
                    error,
                },
                obs,
            )
        }
    }
}

/// Run one episode: alternate agent decisions and online tool execution
/// until the agent answers or the budget forces an answer.
pub fn run_episode(
    agent: &mut dyn Agent,
    task: &TaskSpec,
    world: &ToolWorld,
    cfg: &LoopConfig,
) -> Trajectory {
    let mut steps: Vec<Step> = Vec::new();
    let answer = loop {
        if steps.len() as u32 >= cfg.t_max {
            break agent.forced_answer(task, &steps);
        }
        match agent.decide(task, &steps) {
            AgentAction::Answer(p) => break p,
            AgentAction::Call { reasoning, call } => {
                let (record, observation) = execute_request(world, &call);
                steps.push(Step {
                    reasoning,
                    call: record,
                    observation,
                });
            }
        }
    };
    let budget_used = steps.len() as u32;
    Trajectory {
        task_id: task.id.clone(),
        task_kind: task.kind,
        steps,
        answer,
        meta: TrajMeta {
            source: TrajSource::Rollout,
            round: 0,
            budget_used,
            world_seed: task.world_seed,
        },
    }
}

/// Seeded agent that emits a mix of valid, semantically bad, and outright
/// malformed calls. Used to fuzz the protocol.
pub struct FuzzAgent {
    rng: ChaCha8Rng,
    /// Probability of answering at each free turn.
    pub answer_prob: f64,
}

impl FuzzAgent {
    pub fn new(seed: u64) -> Self {
        FuzzAgent {
            rng: ChaCha8Rng::seed_from_u64(seed),
            answer_prob: 0.3,
        }
    }

    fn random_prediction(&mut self, kind: TaskKind) -> Prediction {
        let c = |rng: &mut ChaCha8Rng| (rng.gen_range(0..=100) as f64) / 100.0;
        match kind {
            TaskKind::LocImage => {
                let x1 = self.rng.gen_range(0.0..0.5);
                let y1 = self.rng.gen_range(0.0..0.5);
                Prediction::Box {
                    region: [x1, y1, x1 + 0.3, y1 + 0.3],
                }
            }
            TaskKind::LocText => Prediction::Spans {
                spans: vec![[self.rng.gen_range(0..60), self.rng.gen_range(60..120)]],
            },
            TaskKind::LocVideo => {
                let t1 = self.rng.gen_range(0.0..0.6);
                Prediction::Segment {
                    segment: [t1, t1 + 0.3],
                }
            }
            TaskKind::Segmentation => Prediction::SegPrompt {
                region: [0.1, 0.1, 0.7, 0.7],
                positive: vec![[c(&mut self.rng), c(&mut self.rng)]],
                negative: vec![],
            },
            TaskKind::ClsRealfact => Prediction::Label {
                label: if self.rng.gen_bool(0.5) {
                    Label::True
                } else {
                    Label::False
                },
            },
            _ => Prediction::Label {
                label: if self.rng.gen_bool(0.5) {
                    Label::Real
                } else {
                    Label::Fake
                },
            },
        }
    }

    fn random_request(&mut self) -> CallRequest {
        let c = |rng: &mut ChaCha8Rng| (rng.gen_range(0..=100) as f64) / 100.0;
        match self.rng.gen_range(0..10) {
            // Malformed: unknown tool.
            0 => CallRequest::Raw {
                tool: "teleport".into(),
                params: serde_json::json!({}),
            },
            // Malformed: wrong parameter shape.
            1 => CallRequest::Raw {
                tool: "crop".into(),
                params: serde_json::json!({"region": [0.1, 0.2]}),
            },
            // Semantically bad: reversed box.
            2 => CallRequest::Tool(ToolCall::Crop {
                region: [0.5, 0.5, 0.4, 0.9],
            }),
            // Semantically bad: empty query.
            3 => CallRequest::Tool(ToolCall::Search { query: "".into() }),
            4 => CallRequest::Tool(ToolCall::Search {
                query: "mayor adams".into(),
            }),
            5 => {
                let x1 = self.rng.gen_range(0.0..0.5);
                let y1 = self.rng.gen_range(0.0..0.5);
                CallRequest::Tool(ToolCall::Crop {
                    region: [x1, y1, x1 + 0.4, y1 + 0.4],
                })
            }
            6 => CallRequest::Tool(ToolCall::Edges),
            7 => CallRequest::Tool(ToolCall::Faces),
            8 => {
                let t1 = self.rng.gen_range(0.0..0.5);
                CallRequest::Tool(ToolCall::Frames {
                    span: [t1, t1 + 0.4],
                    count: self.rng.gen_range(1..=3),
                })
            }
            _ => CallRequest::Tool(ToolCall::Segment {
                region: [0.1, 0.1, 0.8, 0.8],
                positive: vec![[c(&mut self.rng), c(&mut self.rng)]],
                negative: vec![],
            }),
        }
    }
}

impl Agent for FuzzAgent {
    fn decide(&mut self, task: &TaskSpec, _history: &[Step]) -> AgentAction {
        if self.rng.gen_bool(self.answer_prob) {
            AgentAction::Answer(self.random_prediction(task.kind))
        } else {
            AgentAction::Call {
                reasoning: "poke the environment".into(),
                call: self.random_request(),
            }
        }
    }

    fn forced_answer(&mut self, task: &TaskSpec, _history: &[Step]) -> Prediction {
        self.random_prediction(task.kind)
    }
}
