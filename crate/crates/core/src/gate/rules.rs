//! Deterministic keyword gate. Splits the query into clauses, reads
//! objective, domain and robustness cues from each, and answers with the
//! same tool-call JSON a chat model would produce.

use serde_json::json;

use super::prompt::{MULTI_TOOL, PAIR_TOOL, SINGLE_TOOL};
use super::{BackendKind, GateBackend, GateError, GateRequest};
use crate::objectives::{Domain, Family, UtilitySpec};

const UNCERTAIN: &[&str] = &[
    "uncertain",
    "estimation error",
    "imperfect",
    "robust",
    "fluctuat",
    "unpredictab",
    "resilien",
    "noisy",
    "inaccurate",
    "volatile",
    "unreliable",
];
const CERTAIN: &[&str] = &[
    "almost perfect",
    "perfect",
    "accurate",
    "regular condition",
    "reliable",
];

const COMM: &[&str] = &[
    "communication",
    "transmission",
    "transmit",
    "link",
    "channel",
    "downlink",
    "radio",
    "beamform",
];
const COMP: &[&str] = &[
    "computing",
    "computation",
    "compute",
    "processing",
    "rendering",
    "cpu",
    "workload",
    "offload",
];
const JOINT: &[&str] = &["jointly", "joint ", "end to end"];

const DELAY: &[&str] = &["delay", "latenc", "finish", "deadline", "response time"];
const AGGREGATE: &[&str] = &["total", "sum ", "overall", "average", "mean "];
const LOG: &[&str] = &["balanc", "proportional", "logarithm", "log "];
const SUM: &[&str] = &[
    "throughput",
    "sum rate",
    "total rate",
    "aggregate rate",
    "capacity",
];
const MIN: &[&str] = &[
    "fair",
    "minimum rate",
    "min rate",
    "equal",
    "worst user",
    "weakest user",
];

const PRIMARY: &[&str] = &[
    "main ",
    "mainly",
    "primarily",
    "must ",
    "above all",
    "top priority",
    "most important",
];
const SECONDARY: &[&str] = &[
    "still",
    "decent",
    "reasonable",
    "maintaining",
    "not collapse",
    "at least",
    "secondary",
];

const SEPARATORS: &[&str] = &[", but ", " but ", "however", " while ", " whereas "];

/// Word-start match; a trailing space in the cue also requires a word end.
fn find(text: &str, cues: &[&str]) -> Option<usize> {
    let padded = format!(" {text} ");
    cues.iter()
        .filter_map(|c| padded.find(&format!(" {c}")))
        .min()
}

fn positions(text: &str, cues: &[&str]) -> Vec<usize> {
    let padded = format!(" {text} ");
    cues.iter()
        .flat_map(|c| {
            padded
                .match_indices(&format!(" {c}"))
                .map(|(i, _)| i)
                .collect::<Vec<_>>()
        })
        .collect()
}

fn any(text: &str, cues: &[&str]) -> bool {
    find(text, cues).is_some()
}

fn normalize(s: &str) -> String {
    let mapped: String = s
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

struct Clause {
    text: String,
    after_however: bool,
}

fn clauses(query: &str) -> Vec<Clause> {
    let lower = query.to_lowercase();
    let mut out = Vec::new();
    for sentence in lower.split(['.', '!', '?', ';']) {
        let mut rest = sentence;
        let mut after_however = false;
        loop {
            let next = SEPARATORS
                .iter()
                .filter_map(|s| rest.find(s).map(|i| (i, *s)))
                .min_by_key(|(i, _)| *i);
            let (head, tail, sep) = match next {
                Some((i, s)) => (&rest[..i], Some(&rest[i + s.len()..]), Some(s)),
                None => (rest, None, None),
            };
            let text = normalize(head);
            if !text.is_empty() {
                out.push(Clause {
                    text,
                    after_however,
                });
            }
            match (tail, sep) {
                (Some(t), Some(s)) => {
                    rest = t;
                    after_however = s == "however";
                }
                _ => break,
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default)]
struct DomainCues {
    comm: bool,
    comp: bool,
    joint: bool,
}

impl DomainCues {
    fn of(text: &str) -> Self {
        Self {
            comm: any(text, COMM),
            comp: any(text, COMP),
            joint: any(text, JOINT),
        }
    }

    fn any(self) -> bool {
        self.comm || self.comp || self.joint
    }

    fn domain(self) -> Option<Domain> {
        match self {
            DomainCues { joint: true, .. }
            | DomainCues {
                comm: true,
                comp: true,
                ..
            } => Some(Domain::Joint),
            DomainCues { comm: true, .. } => Some(Domain::Comm),
            DomainCues { comp: true, .. } => Some(Domain::Comp),
            _ => None,
        }
    }
}

struct Goal {
    family: Family,
    domain: Option<Domain>,
    clause: usize,
    pos: usize,
}

fn family_phrase(f: Family) -> &'static str {
    match f {
        Family::SumR => "maximize the sum rate",
        Family::MinR => "maximize the minimum rate",
        Family::LogR => "maximize the sum of log rates",
        Family::MaxT => "minimize the worst-case delay",
        Family::SumT => "minimize the total delay",
    }
}

/// Routes `query` over `library` (names in index order) and returns the
/// raw tool-call JSON.
pub fn rule_decide(library: &[String], query: &str) -> Result<String, GateError> {
    if query.trim().is_empty() {
        return Err(GateError::Clarification("empty query".into()));
    }
    let cl = clauses(query);

    let mut goals = Vec::new();
    for (ci, c) in cl.iter().enumerate() {
        let cues = DomainCues::of(&c.text);
        let start = goals.len();
        let mut push = |family, pos| {
            goals.push(Goal {
                family,
                domain: cues.domain(),
                clause: ci,
                pos,
            })
        };
        let delay = find(&c.text, DELAY);
        if let Some(p) = delay {
            push(
                if any(&c.text, AGGREGATE) {
                    Family::SumT
                } else {
                    Family::MaxT
                },
                p,
            );
        }
        let log = find(&c.text, LOG);
        if let Some(p) = log {
            push(Family::LogR, p);
        }
        // "total computing rate" and the like.
        let loose_sum = || {
            let plain =
                delay.is_none() && log.is_none() && !any(&c.text, MIN) && any(&c.text, AGGREGATE);
            plain.then(|| find(&c.text, &["rate"])).flatten()
        };
        if let Some(p) = find(&c.text, SUM).or_else(loose_sum) {
            push(Family::SumR, p);
        }
        // Fairness next to a delay goal means the worst-case delay, next to
        // a balance goal proportional fairness.
        if delay.is_none() && log.is_none() {
            if let Some(p) = find(&c.text, MIN) {
                push(Family::MinR, p);
            }
        }
        // Several goals over both domains in one clause: each goal takes the
        // nearest domain.
        if goals.len() - start > 1 && cues.comm && cues.comp && !cues.joint {
            let comm = positions(&c.text, COMM);
            let comp = positions(&c.text, COMP);
            for g in &mut goals[start..] {
                let dist = |ps: &[usize]| {
                    ps.iter()
                        .map(|&p| p.abs_diff(g.pos))
                        .min()
                        .unwrap_or(usize::MAX)
                };
                g.domain = Some(if dist(&comm) <= dist(&comp) {
                    Domain::Comm
                } else {
                    Domain::Comp
                });
            }
        }
    }
    if goals.is_empty() {
        return Err(GateError::Clarification(
            "no optimization objective recognized".into(),
        ));
    }
    goals.sort_by_key(|g| (g.clause, g.pos));

    // Domains for goals whose clause names none.
    let global = cl.iter().fold(DomainCues::default(), |acc, c| {
        let d = DomainCues::of(&c.text);
        DomainCues {
            comm: acc.comm || d.comm,
            comp: acc.comp || d.comp,
            joint: acc.joint || d.joint,
        }
    });
    let resolved: Vec<Domain> = goals
        .iter()
        .enumerate()
        .map(|(i, g)| {
            if let Some(d) = g.domain {
                return d;
            }
            if global.joint {
                return Domain::Joint;
            }
            let pinned = |d: Domain| {
                goals
                    .iter()
                    .enumerate()
                    .any(|(j, o)| j != i && o.domain == Some(d))
            };
            let rest = DomainCues {
                comm: global.comm && !pinned(Domain::Comm),
                comp: global.comp && !pinned(Domain::Comp),
                joint: false,
            };
            let pick = if rest.any() { rest } else { global };
            match (pick.comm, pick.comp) {
                (true, false) => Domain::Comm,
                (false, true) => Domain::Comp,
                _ => Domain::Joint,
            }
        })
        .collect();

    // Robustness per domain.
    let (mut rob_comm, mut rob_comp, mut reg_comm, mut reg_comp, mut global_rob) =
        (false, false, false, false, false);
    for c in &cl {
        let d = DomainCues::of(&c.text);
        let (on_comm, on_comp) = (d.comm || d.joint, d.comp || d.joint);
        if any(&c.text, UNCERTAIN) {
            if d.any() {
                rob_comm |= on_comm;
                rob_comp |= on_comp;
            } else {
                global_rob = true;
            }
        } else if d.any() && any(&c.text, CERTAIN) {
            reg_comm |= on_comm;
            reg_comp |= on_comp;
        }
    }
    let robust_comm = rob_comm || (global_rob && !reg_comm);
    let robust_comp = rob_comp || (global_rob && !reg_comp);
    let robust = |d: Domain| match d {
        Domain::Comm => robust_comm,
        Domain::Comp => robust_comp,
        Domain::Joint => robust_comm || robust_comp,
    };

    let weights: Vec<f64> = if goals.len() == 2 {
        let primary = |g: &Goal| any(&cl[g.clause].text, PRIMARY);
        let secondary = |g: &Goal| cl[g.clause].after_however || any(&cl[g.clause].text, SECONDARY);
        let (a, b) = (&goals[0], &goals[1]);
        if primary(a) != primary(b) {
            if primary(a) {
                vec![0.6, 0.4]
            } else {
                vec![0.4, 0.6]
            }
        } else if secondary(a) != secondary(b) {
            if secondary(b) {
                vec![0.6, 0.4]
            } else {
                vec![0.4, 0.6]
            }
        } else {
            vec![0.5, 0.5]
        }
    } else {
        vec![1.0 / goals.len() as f64; goals.len()]
    };

    // Map onto the library; a missing joint expert becomes its two halves.
    let in_lib = |s: &UtilitySpec| library.iter().any(|n| *n == s.name());
    let mut picks: Vec<(String, f64)> = Vec::new();
    let mut add = |name: String, w: f64| match picks.iter_mut().find(|(n, _)| *n == name) {
        Some(p) => p.1 += w,
        None => picks.push((name, w)),
    };
    let mut notes = Vec::new();
    for ((g, &d), &w) in goals.iter().zip(&resolved).zip(&weights) {
        let rob = robust(d);
        let spec = UtilitySpec::new(g.family, d, rob);
        notes.push(format!(
            "{} ({}, {})",
            family_phrase(g.family),
            match d {
                Domain::Comm => "communication",
                Domain::Comp => "computing",
                Domain::Joint => "joint",
            },
            if rob { "robust" } else { "regular" }
        ));
        if in_lib(&spec) {
            add(spec.name(), w);
            continue;
        }
        let parts: Vec<UtilitySpec> = match d {
            Domain::Joint => [Domain::Comm, Domain::Comp]
                .into_iter()
                .map(|h| UtilitySpec::new(g.family, h, robust(h)))
                .filter(|s| in_lib(s))
                .collect(),
            _ => vec![UtilitySpec::new(g.family, Domain::Joint, rob)]
                .into_iter()
                .filter(|s| in_lib(s))
                .collect(),
        };
        if parts.is_empty() {
            return Err(GateError::Clarification(format!(
                "no expert in the library can {}",
                family_phrase(g.family)
            )));
        }
        let share = w / parts.len() as f64;
        for s in parts {
            add(s.name(), share);
        }
    }

    let interpretation = format!("Operator goals: {}.", notes.join("; "));
    let (tool, arguments) = match picks.as_slice() {
        [(n, _)] => (SINGLE_TOOL, json!({"expert_name": n})),
        [(n1, w1), (n2, w2)] => (
            PAIR_TOOL,
            json!({"expert_name_1": n1, "expert_name_2": n2, "alpha_1": w1, "alpha_2": w2}),
        ),
        many => (
            MULTI_TOOL,
            json!({"experts": many.iter().map(|(n, w)| json!({"name": n, "alpha": w})).collect::<Vec<_>>()}),
        ),
    };
    Ok(json!({"interpretation": interpretation, "tool": tool, "arguments": arguments}).to_string())
}

/// Offline gate backed by [`rule_decide`].
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBackend;

impl GateBackend for RuleBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Rule
    }

    fn respond(&self, request: &GateRequest) -> Result<String, GateError> {
        rule_decide(&request.library, &request.query)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gate::parse_tool_call;

    fn lib(indices: impl IntoIterator<Item = usize>) -> Vec<String> {
        indices
            .into_iter()
            .map(|i| UtilitySpec::from_index(i).unwrap().name())
            .collect()
    }

    fn route(library: &[String], q: &str) -> Vec<(String, f64)> {
        let raw = rule_decide(library, q).unwrap();
        let d = parse_tool_call(&raw, library).unwrap();
        let mut v: Vec<(String, f64)> = d
            .selected()
            .into_iter()
            .map(|(n, w)| (n.to_string(), w))
            .collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }

    fn expect(got: Vec<(String, f64)>, want: &[(&str, f64)]) {
        let mut want: Vec<(String, f64)> = want.iter().map(|(n, w)| (n.to_string(), *w)).collect();
        want.sort_by(|a, b| a.0.cmp(&b.0));
        assert_eq!(got.len(), want.len(), "{got:?} vs {want:?}");
        for ((gn, gw), (wn, ww)) in got.iter().zip(&want) {
            assert_eq!(gn, wn);
            assert!((gw - ww).abs() < 1e-12, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn xr_rendering_query_on_set_one_library() {
        let l = lib([1, 2, 3, 4, 7, 8, 9, 10, 13, 14, 15, 16, 19, 20, 21, 22]);
        let q = "I have connected extended reality devices. I am rendering their field of view and then \
                 transmitting the video stream. All users should be treated fair and have minimal latency";
        expect(
            route(&l, q),
            &[("Comm_MaxT_Reg", 0.5), ("Comp_MaxT_Reg", 0.5)],
        );
    }

    #[test]
    fn joint_throughput_and_fairness() {
        let q = "I want to jointly achieve optimal network throughput and fairness for a robust extended reality scenario";
        expect(
            route(&lib(1..=12), q),
            &[("JCC_SumR_Rob", 0.5), ("JCC_MinR_Rob", 0.5)],
        );
    }

    #[test]
    fn delay_and_throughput_under_estimation_errors() {
        let q = "Computing requirements and channels are subject to estimation errors. I want to serve all users with \
                 an equally good delay but also achieve optimal network throughput in terms of data processing and \
                 communication";
        expect(
            route(&lib(1..=30), q),
            &[("JCC_MaxT_Rob", 0.5), ("JCC_SumR_Rob", 0.5)],
        );
    }

    #[test]
    fn single_total_delay_goal() {
        let q = "I want to jointly minimize the total communication and computing delay, but the channel estimates are \
                 highly uncertain.";
        let raw = rule_decide(&lib(1..=30), q).unwrap();
        assert!(raw.contains(SINGLE_TOOL));
        expect(route(&lib(1..=30), q), &[("JCC_SumT_Rob", 1.0)]);
    }

    #[test]
    fn primary_and_secondary_goals() {
        let q = "I have very uncertain network estimates and want to avoid extreme delays for any user. However, \
                 throughput should not collapse completely. The network must remain resilient overall.";
        expect(
            route(&lib(1..=30), q),
            &[("JCC_MaxT_Rob", 0.6), ("JCC_SumR_Rob", 0.4)],
        );
        let q = "Channel estimates are almost perfect, but computing workloads fluctuate unpredictably. The main \
                 objective is to guarantee fairness in computing performance while maintaining reasonable throughput.";
        expect(
            route(&lib(1..=30), q),
            &[("Comp_MinR_Rob", 0.6), ("Comm_SumR_Reg", 0.4)],
        );
    }

    #[test]
    fn regular_conditions_stay_regular() {
        let q = "I want to ensure that critical communication links achieve guaranteed minimum rates while optimizing \
                 the total throughput for the rest under regular conditions.";
        expect(
            route(&lib(1..=30), q),
            &[("Comm_MinR_Reg", 0.5), ("Comm_SumR_Reg", 0.5)],
        );
    }

    #[test]
    fn word_boundaries() {
        // "maintaining" is not "main", "imperfect" is not "perfect".
        assert!(!any("maintaining reasonable throughput", PRIMARY));
        assert!(!any("imperfect channel", CERTAIN));
        assert!(any("imperfect channel", UNCERTAIN));
    }

    #[test]
    fn clarification_when_nothing_fires() {
        assert!(matches!(
            rule_decide(&lib(1..=30), ""),
            Err(GateError::Clarification(_))
        ));
        assert!(matches!(
            rule_decide(&lib(1..=30), "hello there"),
            Err(GateError::Clarification(_))
        ));
        // Delay goals cannot be served by a rate-only library.
        assert!(matches!(
            rule_decide(&lib(1..=12), "minimize latency"),
            Err(GateError::Clarification(_))
        ));
    }

    #[test]
    fn deterministic() {
        let q = "balanced rates for all users on the downlink";
        assert_eq!(
            rule_decide(&lib(1..=30), q).unwrap(),
            rule_decide(&lib(1..=30), q).unwrap()
        );
        expect(route(&lib(1..=30), q), &[("Comm_LogR_Reg", 1.0)]);
    }
}
