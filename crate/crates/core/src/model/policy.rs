use std::fmt;

use serde::{Deserialize, Serialize};

use super::{SystemSpec, Units};
use crate::error::Result;

/// Tolerance on the total probability of a condition's branches.
const PROB_SUM_TOL: f64 = 1e-12;

/// The state the controller sees before acting: previous battery level,
/// current input load and current harvest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Condition {
    pub b_prev: Units,
    pub x: Units,
    pub z: Units,
}

/// One possible action: draw `y` from the grid and move the battery to `b_next`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub y: Units,
    pub b_next: Units,
    pub prob: f64,
}

impl Branch {
    pub fn new(y: Units, b_next: Units, prob: f64) -> Self {
        Self { y, b_next, prob }
    }

    /// Energy wasted by taking this branch from `cond`: z + y + b_prev − b_next − x.
    pub fn waste(&self, cond: Condition) -> i64 {
        cond.z as i64 + self.y as i64 + cond.b_prev as i64 - self.b_next as i64 - cond.x as i64
    }
}

/// Battery-conditioned stochastic energy management policy, stored as a dense
/// table over every condition (b_prev, x, z).
///
/// An empty branch list marks a missing entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    capacity: Units,
    max_input: Units,
    max_harvest: Units,
    entries: Vec<Vec<Branch>>,
}

impl Policy {
    /// Empty table with every entry missing.
    pub fn empty(capacity: Units, max_input: Units, max_harvest: Units) -> Self {
        let len = (capacity as usize + 1) * (max_input as usize + 1) * (max_harvest as usize + 1);
        Self {
            capacity,
            max_input,
            max_harvest,
            entries: vec![Vec::new(); len],
        }
    }

    pub fn capacity(&self) -> Units {
        self.capacity
    }

    pub fn max_input(&self) -> Units {
        self.max_input
    }

    pub fn max_harvest(&self) -> Units {
        self.max_harvest
    }

    fn index(&self, cond: Condition) -> Option<usize> {
        if cond.b_prev > self.capacity || cond.x > self.max_input || cond.z > self.max_harvest {
            return None;
        }
        let nx = self.max_input as usize + 1;
        let nz = self.max_harvest as usize + 1;
        Some((cond.b_prev as usize * nx + cond.x as usize) * nz + cond.z as usize)
    }

    /// Replaces the branch list of `cond`. Conditions outside the table are ignored.
    pub fn set(&mut self, cond: Condition, branches: Vec<Branch>) {
        if let Some(i) = self.index(cond) {
            self.entries[i] = branches;
        }
    }

    /// Branches for `cond`; empty if the entry is missing or out of range.
    pub fn branches(&self, cond: Condition) -> &[Branch] {
        self.index(cond).map(|i| self.entries[i].as_slice()).unwrap_or(&[])
    }

    /// Probability of the action (y, b_next) given `cond`.
    pub fn prob(&self, cond: Condition, y: Units, b_next: Units) -> f64 {
        self.branches(cond)
            .iter()
            .filter(|br| br.y == y && br.b_next == b_next)
            .map(|br| br.prob)
            .sum()
    }

    /// Every condition of the table in (b_prev, x, z) order.
    pub fn conditions(&self) -> impl Iterator<Item = Condition> + '_ {
        (0..=self.capacity).flat_map(move |b_prev| {
            (0..=self.max_input)
                .flat_map(move |x| (0..=self.max_harvest).map(move |z| Condition { b_prev, x, z }))
        })
    }

    pub fn to_document(&self) -> PolicyDocument {
        PolicyDocument {
            capacity: self.capacity,
            max_input: self.max_input,
            max_harvest: self.max_harvest,
            entries: self
                .conditions()
                .filter(|&c| !self.branches(c).is_empty())
                .map(|c| PolicyEntry {
                    condition: c,
                    branches: self.branches(c).to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &PolicyDocument) -> Self {
        let mut policy = Policy::empty(doc.capacity, doc.max_input, doc.max_harvest);
        for entry in &doc.entries {
            policy.set(entry.condition, entry.branches.clone());
        }
        policy
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PolicyDocument = serde_json::from_str(text)?;
        Ok(Self::from_document(&doc))
    }
}

/// Text form of a [`Policy`]: one entry per condition with its branch list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDocument {
    pub capacity: Units,
    pub max_input: Units,
    pub max_harvest: Units,
    pub entries: Vec<PolicyEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub condition: Condition,
    pub branches: Vec<Branch>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DimensionMismatch { field: &'static str, policy: Units, spec: Units },
    IncompletePolicy { condition: Condition },
    InvalidProbability { condition: Condition, branch: Branch },
    ProbabilitySum { condition: Condition, sum: f64 },
    EnergyBalance { condition: Condition, branch: Branch, waste: i64 },
    GridWaste { condition: Condition, branch: Branch, waste: i64 },
    BatteryBound { condition: Condition, branch: Branch },
    OutputBound { condition: Condition, branch: Branch },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DimensionMismatch { field, policy, spec } => {
                write!(f, "dimension {field}: policy has {policy}, system has {spec}")
            }
            Violation::IncompletePolicy { condition } => write!(f, "incomplete policy: no entry for {condition:?}"),
            Violation::InvalidProbability { condition, branch } => {
                write!(f, "branch {branch:?} of {condition:?} has invalid probability")
            }
            Violation::ProbabilitySum { condition, sum } => {
                write!(f, "branches of {condition:?} sum to {sum}")
            }
            Violation::EnergyBalance { condition, branch, waste } => {
                write!(f, "energy balance violated by {branch:?} from {condition:?} (waste {waste})")
            }
            Violation::GridWaste { condition, branch, waste } => {
                write!(f, "{branch:?} from {condition:?} wastes {waste} units, more than allowed")
            }
            Violation::BatteryBound { condition, branch } => {
                write!(f, "{branch:?} from {condition:?} leaves the battery range")
            }
            Violation::OutputBound { condition, branch } => {
                write!(f, "{branch:?} from {condition:?} exceeds the output alphabet")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(crate::Error::InvalidPolicy(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

/// Checks a policy against the physical constraints of `spec`.
///
/// Never fails; every problem found is listed in the report.
pub fn validate_policy(policy: &Policy, spec: &SystemSpec) -> ValidationReport {
    let mut violations = Vec::new();
    for (field, p, s) in [
        ("K", policy.capacity, spec.capacity),
        ("N", policy.max_input, spec.max_input),
        ("M", policy.max_harvest, spec.max_harvest),
    ] {
        if p != s {
            violations.push(Violation::DimensionMismatch { field, policy: p, spec: s });
        }
    }

    for b_prev in 0..=spec.capacity {
        for x in 0..=spec.max_input {
            for z in 0..=spec.max_harvest {
                let condition = Condition { b_prev, x, z };
                let branches = policy.branches(condition);
                if branches.is_empty() {
                    violations.push(Violation::IncompletePolicy { condition });
                    continue;
                }
                let mut sum = 0.0;
                for &branch in branches {
                    if !(0.0..=1.0).contains(&branch.prob) {
                        violations.push(Violation::InvalidProbability { condition, branch });
                        continue;
                    }
                    sum += branch.prob;
                    if branch.prob == 0.0 {
                        continue;
                    }
                    if branch.b_next > spec.capacity {
                        violations.push(Violation::BatteryBound { condition, branch });
                    }
                    if branch.y > spec.max_output {
                        violations.push(Violation::OutputBound { condition, branch });
                    }
                    let waste = branch.waste(condition);
                    let allowed = if spec.waste_mode { z as i64 + branch.y as i64 } else { z as i64 };
                    if waste < 0 {
                        violations.push(Violation::EnergyBalance { condition, branch, waste });
                    } else if waste > allowed {
                        violations.push(Violation::GridWaste { condition, branch, waste });
                    }
                }
                if (sum - 1.0).abs() > PROB_SUM_TOL {
                    violations.push(Violation::ProbabilitySum { condition, sum });
                }
            }
        }
    }
    ValidationReport { violations }
}
