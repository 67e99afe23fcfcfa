use std::fmt;

use serde::{Deserialize, Serialize};

use super::{check_probability, no_battery_output, Branch, Condition, Policy, Units};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyTag {
    NoBattery,
    BinaryEh,
    BatteryOnly,
    WasteMode,
}

impl fmt::Display for FamilyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FamilyTag::NoBattery => "no-battery",
            FamilyTag::BinaryEh => "binary-eh",
            FamilyTag::BatteryOnly => "battery-only",
            FamilyTag::WasteMode => "waste-mode",
        })
    }
}

/// Parameters of one built-in policy family.
///
/// `charge[b]` is the probability of charging from the grid at level `b`
/// (b = 0..K−1); `discharge[b − 1]` the probability of serving the load from
/// the battery at level `b` (b = 1..K).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum PolicyParams {
    NoBattery,
    BinaryEh { p01a: f64, p01b: f64, p10: f64 },
    BatteryOnly { charge: Vec<f64>, discharge: Vec<f64> },
    WasteMode { charge: Vec<f64>, discharge: Vec<f64>, p_w: f64 },
}

impl PolicyParams {
    pub fn family(&self) -> FamilyTag {
        match self {
            PolicyParams::NoBattery => FamilyTag::NoBattery,
            PolicyParams::BinaryEh { .. } => FamilyTag::BinaryEh,
            PolicyParams::BatteryOnly { .. } => FamilyTag::BatteryOnly,
            PolicyParams::WasteMode { .. } => FamilyTag::WasteMode,
        }
    }

    pub fn capacity(&self) -> Units {
        match self {
            PolicyParams::NoBattery => 0,
            PolicyParams::BinaryEh { .. } => 1,
            PolicyParams::BatteryOnly { charge, .. } | PolicyParams::WasteMode { charge, .. } => charge.len() as Units,
        }
    }

    /// Flat parameter vector: p01a, p01b, p10 or q_0.., r_1.. (then p_w).
    pub fn values(&self) -> Vec<f64> {
        match self {
            PolicyParams::NoBattery => Vec::new(),
            PolicyParams::BinaryEh { p01a, p01b, p10 } => vec![*p01a, *p01b, *p10],
            PolicyParams::BatteryOnly { charge, discharge } => charge.iter().chain(discharge).copied().collect(),
            PolicyParams::WasteMode { charge, discharge, p_w } => {
                charge.iter().chain(discharge).chain(std::iter::once(p_w)).copied().collect()
            }
        }
    }

    /// Waste probability, if the family has one.
    pub fn p_w(&self) -> Option<f64> {
        match self {
            PolicyParams::WasteMode { p_w, .. } => Some(*p_w),
            _ => None,
        }
    }

    /// `name=value` pairs joined with `;`, values rounded to 12 decimals.
    pub fn label(&self) -> String {
        let fmt = short;
        match self {
            PolicyParams::NoBattery => String::new(),
            PolicyParams::BinaryEh { p01a, p01b, p10 } => {
                format!("p01a={};p01b={};p10={}", fmt(*p01a), fmt(*p01b), fmt(*p10))
            }
            PolicyParams::BatteryOnly { charge, discharge } => battery_label(charge, discharge),
            PolicyParams::WasteMode { charge, discharge, p_w } => {
                format!("{};pw={}", battery_label(charge, discharge), fmt(*p_w))
            }
        }
    }

    pub fn build(&self) -> Result<Policy> {
        match self {
            PolicyParams::NoBattery => Ok(build_no_battery_policy()),
            PolicyParams::BinaryEh { p01a, p01b, p10 } => build_binary_eh_policy(*p01a, *p01b, *p10),
            PolicyParams::BatteryOnly { charge, discharge } => {
                build_battery_policy(charge.len() as Units, charge, discharge, None)
            }
            PolicyParams::WasteMode { charge, discharge, p_w } => {
                build_battery_policy(charge.len() as Units, charge, discharge, Some(*p_w))
            }
        }
    }
}

impl fmt::Display for PolicyParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.family(), self.label())
    }
}

/// Hides representation noise such as 1 − 0.7 = 0.30000000000000004.
fn short(v: f64) -> String {
    format!("{}", (v * 1e12).round() / 1e12)
}

fn battery_label(charge: &[f64], discharge: &[f64]) -> String {
    let q = charge.iter().enumerate().map(|(b, v)| format!("q{b}={}", short(*v)));
    let r = discharge.iter().enumerate().map(|(b, v)| format!("r{}={}", b + 1, short(*v)));
    q.chain(r).collect::<Vec<_>>().join(";")
}

fn cond(b_prev: Units, x: Units, z: Units) -> Condition {
    Condition { b_prev, x, z }
}

/// Two-way choice: `first` with probability `p`, `second` otherwise.
fn choice(p: f64, first: (Units, Units), second: (Units, Units)) -> Vec<Branch> {
    vec![Branch::new(first.0, first.1, p), Branch::new(second.0, second.1, 1.0 - p)]
}

fn forced(y: Units, b_next: Units) -> Vec<Branch> {
    vec![Branch::new(y, b_next, 1.0)]
}

/// Battery-less binary system: y = (x − z)⁺, battery stays at 0.
pub fn build_no_battery_policy() -> Policy {
    let mut policy = Policy::empty(0, 1, 1);
    for x in 0..=1 {
        for z in 0..=1 {
            policy.set(cond(0, x, z), forced(no_battery_output(x, z), 0));
        }
    }
    policy
}

/// The two-state battery policy with an energy harvester (N = M = L = K = 1).
///
/// Free choices: charge from the grid with `p01a` when empty with no demand
/// and no harvest; with `p01b` when empty and demand meets harvest; discharge
/// with `p10` when full with demand and no harvest. All other transitions are
/// forced.
pub fn build_binary_eh_policy(p01a: f64, p01b: f64, p10: f64) -> Result<Policy> {
    check_probability("p01a", p01a)?;
    check_probability("p01b", p01b)?;
    check_probability("p10", p10)?;
    let mut policy = Policy::empty(1, 1, 1);
    // empty battery
    policy.set(cond(0, 0, 0), choice(p01a, (1, 1), (0, 0)));
    policy.set(cond(0, 0, 1), forced(0, 1));
    policy.set(cond(0, 1, 0), forced(1, 0));
    policy.set(cond(0, 1, 1), choice(p01b, (1, 1), (0, 0)));
    // full battery
    policy.set(cond(1, 0, 0), forced(0, 1));
    policy.set(cond(1, 0, 1), forced(0, 1));
    policy.set(cond(1, 1, 0), choice(p10, (0, 0), (1, 1)));
    policy.set(cond(1, 1, 1), forced(0, 1));
    Ok(policy)
}

/// Battery-only policy (no harvester) of capacity `capacity`.
///
/// With no demand below capacity the unit charges from the grid with
/// `charge[b]`; with demand above zero it discharges with `discharge[b − 1]`.
/// When `p_w` is given, a full battery with no demand still draws one unit
/// from the grid with probability `p_w`, which is wasted.
pub fn build_battery_policy(capacity: Units, charge: &[f64], discharge: &[f64], p_w: Option<f64>) -> Result<Policy> {
    let k = capacity as usize;
    if charge.len() != k {
        return Err(Error::invalid("charge", charge.len(), format!("expected {k} charge probabilities")));
    }
    if discharge.len() != k {
        return Err(Error::invalid("discharge", discharge.len(), format!("expected {k} discharge probabilities")));
    }
    for (i, &q) in charge.iter().enumerate() {
        check_probability(&format!("q{i}"), q)?;
    }
    for (i, &r) in discharge.iter().enumerate() {
        check_probability(&format!("r{}", i + 1), r)?;
    }
    if let Some(p) = p_w {
        check_probability("p_w", p)?;
    }

    let mut policy = Policy::empty(capacity, 1, 0);
    for b in 0..=capacity {
        let idle = if b < capacity {
            choice(charge[b as usize], (1, b + 1), (0, b))
        } else {
            match p_w {
                Some(p) => choice(p, (1, b), (0, b)),
                None => forced(0, b),
            }
        };
        policy.set(cond(b, 0, 0), idle);
        let busy = if b == 0 {
            forced(1, 0)
        } else {
            choice(discharge[b as usize - 1], (0, b - 1), (1, b))
        };
        policy.set(cond(b, 1, 0), busy);
    }
    Ok(policy)
}

/// Number of free parameters of the symmetric/complementary family.
pub fn symmetric_free_count(capacity: Units) -> usize {
    capacity as usize / 2
}

/// Expands the free parameters of the symmetric/complementary family.
///
/// The result satisfies q_b + r_{b+1} = 1 and q_b = r_{K−b}. The free values
/// fill q_0..q_{⌊K/2⌋−1}; for odd K the middle charge probability is 1/2.
/// Returns (q, r) with `r[b − 1] = r_b`.
pub fn symmetric_params(capacity: Units, free: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = capacity as usize;
    let m = symmetric_free_count(capacity);
    if free.len() != m {
        return Err(Error::invalid("free", free.len(), format!("K = {k} has {m} free parameters")));
    }
    for (i, &v) in free.iter().enumerate() {
        check_probability(&format!("free[{i}]"), v)?;
    }
    let mut q = vec![f64::NAN; k];
    for b in 0..k {
        q[b] = if b < m {
            free[b]
        } else if 2 * b + 1 == k {
            0.5
        } else {
            1.0 - free[k - 1 - b]
        };
    }
    // symmetry: r_{K−b} = q_b
    let mut r = vec![f64::NAN; k];
    for b in 0..k {
        r[k - 1 - b] = q[b];
    }
    for b in 0..k {
        if (q[b] + r[b] - 1.0).abs() > 4.0 * f64::EPSILON || q[b] != r[k - 1 - b] {
            return Err(Error::Internal(format!("symmetric parameters inconsistent at b = {b}")));
        }
    }
    Ok((q, r))
}

/// Complementary family: r_{b+1} = 1 − q_b.
pub fn complementary_params(charge: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    for (i, &v) in charge.iter().enumerate() {
        check_probability(&format!("q{i}"), v)?;
    }
    Ok((charge.to_vec(), charge.iter().map(|q| 1.0 - q).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_policy, SystemSpec};

    #[test]
    fn binary_eh_has_eleven_transitions() {
        let p = build_binary_eh_policy(0.3, 0.6, 0.9).unwrap();
        let count: usize = p.conditions().map(|c| p.branches(c).len()).sum();
        assert_eq!(count, 11);
        assert_eq!(p.prob(cond(0, 1, 0), 1, 0), 1.0);
        assert_eq!(p.prob(cond(1, 0, 1), 0, 1), 1.0);
        assert_eq!(p.branches(cond(1, 0, 1))[0].waste(cond(1, 0, 1)), 1);
        assert_eq!(p.prob(cond(0, 0, 0), 1, 1), 0.3);
        assert_eq!(p.prob(cond(0, 0, 0), 0, 0), 0.7);
        assert_eq!(p.prob(cond(0, 1, 1), 1, 1), 0.6);
        assert_eq!(p.prob(cond(1, 1, 0), 0, 0), 0.9);
        assert!((p.prob(cond(1, 1, 0), 1, 1) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn binary_eh_rejects_out_of_range() {
        assert!(matches!(build_binary_eh_policy(1.2, 0.0, 0.0), Err(Error::InvalidParameter { .. })));
        assert!(build_binary_eh_policy(0.0, -0.1, 0.0).is_err());
    }

    #[test]
    fn battery_policy_shapes() {
        let p = build_battery_policy(2, &[0.2, 0.3], &[0.4, 0.5], Some(1.0)).unwrap();
        assert_eq!(p.prob(cond(2, 0, 0), 1, 2), 1.0);
        assert_eq!(p.prob(cond(0, 1, 0), 1, 0), 1.0);
        assert_eq!(p.prob(cond(1, 0, 0), 1, 2), 0.3);
        assert_eq!(p.prob(cond(2, 1, 0), 0, 1), 0.5);
        let spec = SystemSpec::battery_only(2, 0.5, true).unwrap();
        assert!(validate_policy(&p, &spec).is_ok());
        let strict = SystemSpec::battery_only(2, 0.5, false).unwrap();
        assert!(!validate_policy(&p, &strict).is_ok());

        let never = build_battery_policy(1, &[0.0], &[1.0], None).unwrap();
        assert_eq!(never.prob(cond(0, 0, 0), 1, 1), 0.0);

        assert!(build_battery_policy(2, &[0.5], &[0.5, 0.5], None).is_err());
        assert!(build_battery_policy(1, &[0.5], &[], None).is_err());
    }

    #[test]
    fn symmetric_small_cases() {
        assert_eq!(symmetric_params(1, &[]).unwrap(), (vec![0.5], vec![0.5]));
        let (q, r) = symmetric_params(2, &[0.3]).unwrap();
        assert_eq!(q, vec![0.3, 1.0 - 0.3]);
        assert_eq!(r, vec![1.0 - 0.3, 0.3]);
        let (q, r) = symmetric_params(3, &[0.2]).unwrap();
        assert_eq!(q, vec![0.2, 0.5, 1.0 - 0.2]);
        assert_eq!(r, vec![1.0 - 0.2, 0.5, 0.2]);
        assert!(symmetric_params(3, &[0.2, 0.1]).is_err());
        assert!(symmetric_params(4, &[0.2, 1.1]).is_err());
    }

    #[test]
    fn complementary_expansion() {
        let (q, r) = complementary_params(&[0.1, 0.7]).unwrap();
        assert_eq!(q, vec![0.1, 0.7]);
        assert_eq!(r, vec![0.9, 1.0 - 0.7]);
    }

    proptest::proptest! {
        #[test]
        fn symmetric_constraints_hold(k in 0u32..12, seed in proptest::collection::vec(0.0f64..=1.0, 6)) {
            let free = &seed[..symmetric_free_count(k)];
            let (q, r) = symmetric_params(k, free).unwrap();
            let k = k as usize;
            for b in 0..k {
                proptest::prop_assert!((q[b] + r[b] - 1.0).abs() <= 2.0 * f64::EPSILON);
                proptest::prop_assert_eq!(q[b], r[k - 1 - b]);
            }
        }

        #[test]
        fn builders_always_validate(
            a in 0.0f64..=1.0, b in 0.0f64..=1.0, c in 0.0f64..=1.0,
            px in 0.0f64..=1.0, pz in 0.0f64..=1.0, k in 0u32..6, pw in 0.0f64..=1.0,
            qs in proptest::collection::vec(0.0f64..=1.0, 6),
            rs in proptest::collection::vec(0.0f64..=1.0, 6),
        ) {
            let spec = SystemSpec::binary_eh(px, pz).unwrap();
            proptest::prop_assert!(validate_policy(&build_binary_eh_policy(a, b, c).unwrap(), &spec).is_ok());
            let spec = SystemSpec::no_battery(px, pz).unwrap();
            proptest::prop_assert!(validate_policy(&build_no_battery_policy(), &spec).is_ok());
            let k_us = k as usize;
            let spec = SystemSpec::battery_only(k, px, false).unwrap();
            let p = build_battery_policy(k, &qs[..k_us], &rs[..k_us], None).unwrap();
            proptest::prop_assert!(validate_policy(&p, &spec).is_ok());
            let spec = SystemSpec::battery_only(k, px, true).unwrap();
            let p = build_battery_policy(k, &qs[..k_us], &rs[..k_us], Some(pw)).unwrap();
            proptest::prop_assert!(validate_policy(&p, &spec).is_ok());
        }
    }
}
