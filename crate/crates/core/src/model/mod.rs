//! Energy system model: alphabets, sources, policies and the built-in
//! policy families.
//!
//! All quantities are integer multiples of one energy unit. Rates are in bits
//! (base-2 logarithms throughout).

mod families;
mod policy;

pub use families::{
    build_battery_policy, build_binary_eh_policy, build_no_battery_policy, complementary_params,
    symmetric_free_count, symmetric_params, FamilyTag, PolicyParams,
};
pub use policy::{validate_policy, Branch, Condition, Policy, PolicyDocument, ValidationReport, Violation};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Energy units: loads, harvest and battery levels.
pub type Units = u32;

/// Alphabets, capacities and source statistics of one energy system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    /// N: largest input load.
    pub max_input: Units,
    /// M: largest harvest.
    pub max_harvest: Units,
    /// L: largest output load.
    pub max_output: Units,
    /// K: battery capacity.
    pub capacity: Units,
    /// Pr{X = 1}.
    pub p_x: f64,
    /// Pr{Z = 1}.
    pub p_z: f64,
    /// Whether grid energy may be wasted.
    pub waste_mode: bool,
}

impl SystemSpec {
    /// Binary load/harvest system with a one-unit battery (N = M = L = K = 1).
    pub fn binary_eh(p_x: f64, p_z: f64) -> Result<Self> {
        Self {
            max_input: 1,
            max_harvest: 1,
            max_output: 1,
            capacity: 1,
            p_x,
            p_z,
            waste_mode: false,
        }
        .validated()
    }

    /// Binary load system without a harvester (M = 0, p_z = 0) and a battery of capacity K.
    pub fn battery_only(capacity: Units, p_x: f64, waste_mode: bool) -> Result<Self> {
        Self {
            max_input: 1,
            max_harvest: 0,
            max_output: 1,
            capacity,
            p_x,
            p_z: 0.0,
            waste_mode,
        }
        .validated()
    }

    /// Binary load/harvest system without a battery.
    pub fn no_battery(p_x: f64, p_z: f64) -> Result<Self> {
        Self {
            max_input: 1,
            max_harvest: 1,
            max_output: 1,
            capacity: 0,
            p_x,
            p_z,
            waste_mode: false,
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("p_x", self.p_x)?;
        check_probability("p_z", self.p_z)?;
        if self.max_input > 1 {
            return Err(Error::invalid("N", self.max_input, "input source is Bernoulli; N must be 0 or 1"));
        }
        if self.max_harvest > 1 {
            return Err(Error::invalid("M", self.max_harvest, "harvest source is Bernoulli; M must be 0 or 1"));
        }
        if self.max_harvest == 0 && self.p_z != 0.0 {
            return Err(Error::invalid("p_z", self.p_z, "must be 0 when M = 0"));
        }
        if self.max_input == 0 && self.p_x != 0.0 {
            return Err(Error::invalid("p_x", self.p_x, "must be 0 when N = 0"));
        }
        Ok(())
    }

    /// Number of battery states, K + 1.
    pub fn states(&self) -> usize {
        self.capacity as usize + 1
    }

    /// Probability mass function of the input load over 0..=N.
    pub fn input_pmf(&self) -> Vec<f64> {
        bernoulli_pmf(self.max_input, self.p_x)
    }

    /// Probability mass function of the harvest over 0..=M.
    pub fn harvest_pmf(&self) -> Vec<f64> {
        bernoulli_pmf(self.max_harvest, self.p_z)
    }

    /// Entropy of one input symbol, H(X), in bits.
    pub fn input_entropy(&self) -> f64 {
        self.input_pmf().iter().map(|&p| entropy_term(p)).sum()
    }
}

fn bernoulli_pmf(max: Units, p: f64) -> Vec<f64> {
    if max == 0 {
        vec![1.0]
    } else {
        vec![1.0 - p, p]
    }
}

pub(crate) fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::invalid(name, p, "probability must lie in [0, 1]"))
    }
}

/// −p·log₂p with 0·log₂0 = 0.
pub(crate) fn entropy_term(p: f64) -> f64 {
    if p > 0.0 {
        -p * p.log2()
    } else {
        0.0
    }
}

/// Binary entropy function h(p) in bits.
pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("binary entropy of {p} (must lie in [0, 1])")));
    }
    Ok(entropy_term(p) + entropy_term(1.0 - p))
}

/// Output load of a battery-less system: whatever the harvest cannot cover.
pub fn no_battery_output(x: Units, z: Units) -> Units {
    x.saturating_sub(z)
}

/// Single-letter I(X;Y) of the battery-less binary system, Y = (X − Z)⁺.
pub fn no_battery_leakage_closed_form(p_x: f64, p_z: f64) -> Result<f64> {
    let p_y = p_x * (1.0 - p_z);
    let h_y = binary_entropy(p_y)?;
    let h_y_given_x = p_x * binary_entropy(p_z)?;
    Ok(h_y - h_y_given_x)
}
