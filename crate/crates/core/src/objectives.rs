//! Utility families, their domains and the constraint sets each expert
//! optimizes under. This module is the single evaluation authority used by
//! training, the gate pipeline and the benchmarks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{AllocKind, PerUserMetrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    SumR,
    MinR,
    LogR,
    MaxT,
    SumT,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Comm,
    Comp,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Maximize,
    Minimize,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::SumR,
        Family::MinR,
        Family::LogR,
        Family::MaxT,
        Family::SumT,
    ];

    pub fn sense(self) -> Sense {
        match self {
            Family::SumR | Family::MinR | Family::LogR => Sense::Maximize,
            Family::MaxT | Family::SumT => Sense::Minimize,
        }
    }

    pub fn is_delay(self) -> bool {
        self.sense() == Sense::Minimize
    }

    pub fn tag(self) -> &'static str {
        match self {
            Family::SumR => "SumR",
            Family::MinR => "MinR",
            Family::LogR => "LogR",
            Family::MaxT => "MaxT",
            Family::SumT => "SumT",
        }
    }
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Comm, Domain::Comp, Domain::Joint];

    pub fn tag(self) -> &'static str {
        match self {
            Domain::Comm => "Comm",
            Domain::Comp => "Comp",
            Domain::Joint => "JCC",
        }
    }

    /// Constraint-set suffix used in tags such as `D_comm`.
    pub fn set_suffix(self) -> &'static str {
        match self {
            Domain::Comm => "comm",
            Domain::Comp => "comp",
            Domain::Joint => "joint",
        }
    }

    pub fn alloc_kind(self) -> AllocKind {
        match self {
            Domain::Comm => AllocKind::Comm,
            Domain::Comp => AllocKind::Comp,
            Domain::Joint => AllocKind::Joint,
        }
    }
}

/// One objective: a family evaluated on the rates or delays of a domain,
/// either nominally or as a γ-quantile over estimation errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UtilitySpec {
    pub family: Family,
    pub domain: Domain,
    pub robust: bool,
}

#[derive(Debug, Error, PartialEq)]
#[error("unknown expert name `{0}`")]
pub struct UnknownName(pub String);

impl UtilitySpec {
    pub fn new(family: Family, domain: Domain, robust: bool) -> Self {
        Self {
            family,
            domain,
            robust,
        }
    }

    pub fn sense(&self) -> Sense {
        self.family.sense()
    }

    /// Position in the expert table, 1-based.
    pub fn index(&self) -> usize {
        let f = Family::ALL.iter().position(|&x| x == self.family).unwrap();
        let d = Domain::ALL.iter().position(|&x| x == self.domain).unwrap();
        f * 6 + d * 2 + usize::from(self.robust) + 1
    }

    pub fn from_index(index: usize) -> Option<Self> {
        if !(1..=30).contains(&index) {
            return None;
        }
        let i = index - 1;
        Some(Self::new(
            Family::ALL[i / 6],
            Domain::ALL[(i % 6) / 2],
            i % 2 == 1,
        ))
    }

    /// All thirty specs in table order.
    pub fn all() -> Vec<UtilitySpec> {
        (1..=30).map(|i| Self::from_index(i).unwrap()).collect()
    }

    /// Table name such as `JCC_MaxT_Rob`.
    pub fn name(&self) -> String {
        format!(
            "{}_{}_{}",
            self.domain.tag(),
            self.family.tag(),
            if self.robust { "Rob" } else { "Reg" }
        )
    }
}

impl fmt::Display for UtilitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for UtilitySpec {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        UtilitySpec::all()
            .into_iter()
            .find(|u| u.name() == s)
            .ok_or_else(|| UnknownName(s.to_string()))
    }
}

/// Selects the rate column of `metrics` for a domain.
pub fn rates(domain: Domain, metrics: &PerUserMetrics) -> &[f64] {
    match domain {
        Domain::Comm => &metrics.r_tx,
        Domain::Comp => &metrics.r_co,
        Domain::Joint => &metrics.r_joint,
    }
}

/// Selects the delay column of `metrics` for a domain.
pub fn delays(domain: Domain, metrics: &PerUserMetrics) -> &[f64] {
    match domain {
        Domain::Comm => &metrics.t_tx,
        Domain::Comp => &metrics.t_co,
        Domain::Joint => &metrics.t_joint,
    }
}

/// Applies a family to a per-user vector of rates (rate families) or
/// delays (delay families).
pub fn family_value(family: Family, values: &[f64]) -> f64 {
    match family {
        Family::SumR | Family::SumT => values.iter().sum(),
        Family::MinR => values.iter().copied().fold(f64::INFINITY, f64::min),
        // ln(0) = -inf marks a starved user.
        Family::LogR => values.iter().map(|r| r.ln()).sum(),
        Family::MaxT => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Nominal utility of `spec` on one set of metrics, in bit/s, ln(bit/s) or
/// seconds. The robust flag is ignored here; see
/// [`crate::uncertainty::robust_utility`].
pub fn evaluate_utility(spec: &UtilitySpec, metrics: &PerUserMetrics) -> f64 {
    let values = if spec.family.is_delay() {
        delays(spec.domain, metrics)
    } else {
        rates(spec.domain, metrics)
    };
    family_value(spec.family, values)
}

/// Constraint and definition sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConstraintTag {
    #[serde(rename = "D_comm")]
    DComm,
    #[serde(rename = "D_comp")]
    DComp,
    #[serde(rename = "D_joint")]
    DJoint,
    #[serde(rename = "P_comm")]
    PComm,
    #[serde(rename = "P_comp")]
    PComp,
    #[serde(rename = "P_joint")]
    PJoint,
    #[serde(rename = "R_comm")]
    RComm,
    #[serde(rename = "R_comp")]
    RComp,
    #[serde(rename = "R_joint")]
    RJoint,
    #[serde(rename = "T_comm")]
    TComm,
    #[serde(rename = "T_comp")]
    TComp,
    #[serde(rename = "T_joint")]
    TJoint,
}

impl ConstraintTag {
    fn for_domain(letter: char, domain: Domain) -> Self {
        use ConstraintTag::*;
        match (letter, domain) {
            ('D', Domain::Comm) => DComm,
            ('D', Domain::Comp) => DComp,
            ('D', Domain::Joint) => DJoint,
            ('P', Domain::Comm) => PComm,
            ('P', Domain::Comp) => PComp,
            ('P', Domain::Joint) => PJoint,
            ('R', Domain::Comm) => RComm,
            ('R', Domain::Comp) => RComp,
            ('R', Domain::Joint) => RJoint,
            ('T', Domain::Comm) => TComm,
            ('T', Domain::Comp) => TComp,
            ('T', Domain::Joint) => TJoint,
            _ => unreachable!("unknown constraint letter {letter}"),
        }
    }

    pub fn label(self) -> String {
        serde_json::to_value(self)
            .unwrap()
            .as_str()
            .unwrap()
            .to_string()
    }

    /// Joint tags include the definitional content of their comm and comp
    /// counterparts.
    pub fn implies(self) -> Vec<ConstraintTag> {
        use ConstraintTag::*;
        match self {
            DJoint => vec![DComm, DComp],
            RJoint => vec![RComm, RComp],
            TJoint => vec![TComm, TComp],
            _ => vec![],
        }
    }
}

/// Constraint set of an expert in `D, P, R, T` order. Joint experts always
/// carry the joint definition and power sets.
pub fn constraint_tags(spec: &UtilitySpec) -> Vec<ConstraintTag> {
    let mut tags = vec![
        ConstraintTag::for_domain('D', spec.domain),
        ConstraintTag::for_domain('P', spec.domain),
    ];
    if spec.robust {
        tags.push(ConstraintTag::for_domain('R', spec.domain));
    }
    if spec.family.is_delay() {
        tags.push(ConstraintTag::for_domain('T', spec.domain));
    }
    tags
}

/// Optimization variables an expert controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    PTx,
    PCo,
    FCo,
}

pub fn variables_for(spec: &UtilitySpec) -> (AllocKind, Vec<Variable>) {
    let kind = spec.domain.alloc_kind();
    let vars = match spec.domain {
        Domain::Comm => vec![Variable::PTx],
        Domain::Comp => vec![Variable::PCo, Variable::FCo],
        Domain::Joint => vec![Variable::PTx, Variable::PCo, Variable::FCo],
    };
    (kind, vars)
}

/// Human-readable objective expression, e.g. `max_k(t_tx[k] + t_co[k])`.
pub fn objective_expression(family: Family, domain: Domain) -> String {
    let term = match (family.is_delay(), domain) {
        (false, Domain::Comm) => "r_tx[k]",
        (false, Domain::Comp) => "r_co[k]",
        (false, Domain::Joint) => "r_tx[k] + r_co[k]",
        (true, Domain::Comm) => "t_tx[k]",
        (true, Domain::Comp) => "t_co[k]",
        (true, Domain::Joint) => "t_tx[k] + t_co[k]",
    };
    match family {
        Family::SumR | Family::SumT => format!("sum_k({term})"),
        Family::MinR => format!("min_k({term})"),
        Family::LogR => format!("sum_k(log({term}))"),
        Family::MaxT => format!("max_k({term})"),
    }
}
