use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::experts::ExpertRecord;

pub const SINGLE_TOOL: &str = "infer_expert_with_params";
pub const PAIR_TOOL: &str = "infer_two_weighted_experts_with_params";
pub const MULTI_TOOL: &str = "infer_weighted_experts_with_params";

const GENERAL_SETUP: &str = "You are a helpful assistant that receive requests in natural language and then, based on \
the provided context you must choose one or a combination of suitable expert tools which can resolve the query asked. \
You operate as an intelligent assistant embedded within a wireless network operator environment. You are functioning \
as a router/gate network that receives a query or a question from the network operator and your task is to route the \
question to an optimization expert.";

const SINGLE_TOOL_TEXT: &str = "infer_expert_with_params: This function take a string as expert name and based on this \
input it infers the correct expert with given parameters and return a tuple of three parameters. The expert name is a \
string that can be chosen of a set of specific available expert names.";

const PAIR_TOOL_TEXT: &str = "infer_two_weighted_experts_with_params: This function take two strings as expert names \
and two numeric parameters alpha_1 and alpha_2 where alpha_1 + alpha_2 = 1. Based on these input parameters the \
function combine the inference results from the two given experts with the weighting parameters alpha_1 and alpha_2 \
and return a tuple of three parameters. The expert name is a string that can be chosen of a set of specific available \
expert names.";

const MULTI_TOOL_TEXT: &str = "infer_weighted_experts_with_params (experimental): Takes a list of objects with an \
expert name and a weight alpha. Weights are nonnegative and add up to 1. Use it only when more than two experts are \
needed.";

/// How an expert is presented to the gate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertCard {
    pub index: usize,
    pub name: String,
    pub description: String,
}

impl ExpertCard {
    pub fn from_record(record: &ExpertRecord) -> Self {
        Self {
            index: record.index,
            name: record.name.clone(),
            description: record.description(),
        }
    }
}

fn expert_setup(n: usize) -> String {
    format!(
        "You have {n} experts that can be used to resolve queries either by their own or on combinations. This \
         depends on the query if the requested information need to be a combination of the results from several \
         experts or one expert can fully address the query. This can be solely determined by the description of each \
         expert area of expertise. Here is a detailed description of the available experts and their area of \
         specialization:"
    )
}

/// System prompt: general setup, expert setup with one numbered card per
/// expert, tool setup. Cards keep their library index as number.
pub fn build_system_prompt(cards: &[ExpertCard]) -> String {
    let mut s = String::new();
    s.push_str("# General setup\n");
    s.push_str(GENERAL_SETUP);
    s.push_str("\n\n# Expert setup\n");
    s.push_str(&expert_setup(cards.len()));
    s.push('\n');
    for c in cards {
        s.push_str(&format!("{}) {}: {}\n", c.index, c.name, c.description));
    }
    s.push_str("\n# Tool setup\nThe available tools for the router are listed below:\n");
    for t in [SINGLE_TOOL_TEXT, PAIR_TOOL_TEXT, MULTI_TOOL_TEXT] {
        s.push_str(t);
        s.push('\n');
    }
    s.push_str("\nAnswer with exactly one tool call. State your interpretation of the query in the message text.\n");
    s
}

/// Tool schemas in chat-completions function format.
pub fn tool_declarations() -> Value {
    let weight = json!({"type": "number", "minimum": 0, "maximum": 1});
    json!([
        {
            "type": "function",
            "function": {
                "name": SINGLE_TOOL,
                "description": SINGLE_TOOL_TEXT,
                "parameters": {
                    "type": "object",
                    "properties": {"expert_name": {"type": "string"}},
                    "required": ["expert_name"]
                }
            }
        },
        {
            "type": "function",
            "function": {
                "name": PAIR_TOOL,
                "description": PAIR_TOOL_TEXT,
                "parameters": {
                    "type": "object",
                    "properties": {
                        "expert_name_1": {"type": "string"},
                        "expert_name_2": {"type": "string"},
                        "alpha_1": weight,
                        "alpha_2": weight
                    },
                    "required": ["expert_name_1", "expert_name_2", "alpha_1", "alpha_2"]
                }
            }
        },
        {
            "type": "function",
            "function": {
                "name": MULTI_TOOL,
                "description": MULTI_TOOL_TEXT,
                "parameters": {
                    "type": "object",
                    "properties": {
                        "experts": {
                            "type": "array",
                            "items": {
                                "type": "object",
                                "properties": {"name": {"type": "string"}, "alpha": weight},
                                "required": ["name", "alpha"]
                            }
                        }
                    },
                    "required": ["experts"]
                }
            }
        }
    ])
}
