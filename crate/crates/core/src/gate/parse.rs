use std::time::Duration;

use serde_json::Value;

use super::prompt::{MULTI_TOOL, PAIR_TOOL, SINGLE_TOOL};
use super::{GateDecision, GateError};

/// Weight sums within this distance of one are renormalized.
pub const WEIGHT_SUM_TOL: f64 = 0.01;

fn malformed(msg: impl Into<String>) -> GateError {
    GateError::Malformed(msg.into())
}

/// Tool name, arguments and free text of a raw response. Accepts the
/// canonical `{"interpretation", "tool", "arguments"}` object and
/// chat-completions responses with exactly one tool call.
fn extract(raw: &str) -> Result<(String, Value, String), GateError> {
    let v: Value = serde_json::from_str(raw).map_err(|e| malformed(format!("not JSON: {e}")))?;
    let (tool, args, text) = if let Some(choices) = v.get("choices") {
        let msg = choices
            .get(0)
            .and_then(|c| c.get("message"))
            .ok_or_else(|| malformed("no message in response"))?;
        let calls = msg
            .get("tool_calls")
            .and_then(Value::as_array)
            .ok_or_else(|| malformed("no tool call"))?;
        if calls.len() != 1 {
            return Err(malformed(format!(
                "expected exactly one tool call, got {}",
                calls.len()
            )));
        }
        let f = calls[0]
            .get("function")
            .ok_or_else(|| malformed("tool call without function"))?;
        let text = msg
            .get("content")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        (f.get("name").cloned(), f.get("arguments").cloned(), text)
    } else {
        let text = v
            .get("interpretation")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        (v.get("tool").cloned(), v.get("arguments").cloned(), text)
    };
    let tool = tool
        .and_then(|t| t.as_str().map(str::to_string))
        .ok_or_else(|| malformed("missing tool name"))?;
    let args = match args {
        Some(Value::String(s)) => {
            serde_json::from_str(&s).map_err(|e| malformed(format!("arguments: {e}")))?
        }
        Some(a @ Value::Object(_)) => a,
        _ => return Err(malformed("missing arguments")),
    };
    Ok((tool, args, text))
}

fn name_arg(args: &Value, key: &str) -> Result<String, GateError> {
    args.get(key)
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| malformed(format!("missing {key}")))
}

fn weight_arg(args: &Value, key: &str) -> Result<f64, GateError> {
    let v = args
        .get(key)
        .ok_or_else(|| malformed(format!("missing {key}")))?;
    // Some models quote numbers.
    let w = match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    };
    w.filter(|w| w.is_finite())
        .ok_or_else(|| malformed(format!("{key} is not a number")))
}

/// Parses one tool call into a decision over `library` (names in index
/// order).
pub fn parse_tool_call(raw: &str, library: &[String]) -> Result<GateDecision, GateError> {
    let (tool, args, interpretation) = extract(raw)?;
    let picks: Vec<(String, f64)> = match tool.as_str() {
        SINGLE_TOOL => vec![(name_arg(&args, "expert_name")?, 1.0)],
        PAIR_TOOL => vec![
            (
                name_arg(&args, "expert_name_1")?,
                weight_arg(&args, "alpha_1")?,
            ),
            (
                name_arg(&args, "expert_name_2")?,
                weight_arg(&args, "alpha_2")?,
            ),
        ],
        MULTI_TOOL => {
            let list = args
                .get("experts")
                .and_then(Value::as_array)
                .ok_or_else(|| malformed("missing experts"))?;
            if list.is_empty() {
                return Err(malformed("empty expert list"));
            }
            list.iter()
                .map(|e| Ok((name_arg(e, "name")?, weight_arg(e, "alpha")?)))
                .collect::<Result<_, GateError>>()?
        }
        other => return Err(malformed(format!("unknown tool {other}"))),
    };

    let mut weights = vec![0.0; library.len()];
    let mut seen = vec![false; library.len()];
    for (name, w) in &picks {
        let i = library
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| GateError::UnknownExpert(name.clone()))?;
        if !(0.0..=1.0).contains(w) {
            return Err(GateError::WeightRange(*w));
        }
        if seen[i] {
            return Err(malformed(format!("{name} selected twice")));
        }
        seen[i] = true;
        weights[i] = *w;
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(GateError::WeightSum(sum));
    }
    weights.iter_mut().for_each(|w| *w /= sum);
    let selection: Vec<bool> = weights.iter().map(|&w| w > 0.0).collect();
    let decision = GateDecision {
        library: library.to_vec(),
        selection,
        weights,
        interpretation,
        transcript: None,
        latency: Duration::ZERO,
    };
    decision.validate()?;
    Ok(decision)
}
