//! Brute-force reference computations shared by the integration tests.
//!
//! Everything here walks individual sample paths (x, z, branch choice per
//! step) depth first and adds up path probabilities. No state metrics are
//! carried between steps, so it shares no logic with the trellis.

#![allow(dead_code)]

use meter_privacy::model::{Condition, Policy, SystemSpec, Units};

/// Path-sum probabilities of every output sequence and every
/// (input, output) pair of length `n`, indexed most significant symbol first.
pub struct PathTables {
    pub n: usize,
    pub radix_x: usize,
    pub radix_y: usize,
    pub p_y: Vec<f64>,
    /// Index `x_code * radix_y^n + y_code`.
    pub p_xy: Vec<f64>,
}

fn bernoulli(p: f64, max: Units) -> Vec<f64> {
    if max == 0 {
        vec![1.0]
    } else {
        vec![1.0 - p, p]
    }
}

pub fn enumerate_paths(spec: &SystemSpec, policy: &Policy, n: usize) -> PathTables {
    assert!(spec.max_input <= 1 && spec.max_harvest <= 1, "oracle handles binary sources only");
    let px = bernoulli(spec.p_x, spec.max_input);
    let pz = bernoulli(spec.p_z, spec.max_harvest);
    let radix_x = px.len();
    let radix_y = spec.max_output as usize + 1;
    let ny = radix_y.pow(n as u32);
    let mut tables = PathTables {
        n,
        radix_x,
        radix_y,
        p_y: vec![0.0; ny],
        p_xy: vec![0.0; radix_x.pow(n as u32) * ny],
    };
    let walker = Walker { policy, px: &px, pz: &pz };
    walker.walk(n, 0, 0, 0, 1.0, &mut tables);
    tables
}

struct Walker<'a> {
    policy: &'a Policy,
    px: &'a [f64],
    pz: &'a [f64],
}

impl Walker<'_> {
    fn walk(&self, remaining: usize, battery: Units, x_code: usize, y_code: usize, prob: f64, out: &mut PathTables) {
        if remaining == 0 {
            out.p_y[y_code] += prob;
            out.p_xy[x_code * out.p_y.len() + y_code] += prob;
            return;
        }
        for (x, &wx) in self.px.iter().enumerate() {
            for (z, &wz) in self.pz.iter().enumerate() {
                if wx * wz == 0.0 {
                    continue;
                }
                let cond = Condition {
                    b_prev: battery,
                    x: x as Units,
                    z: z as Units,
                };
                for br in self.policy.branches(cond) {
                    if br.prob > 0.0 {
                        self.walk(
                            remaining - 1,
                            br.b_next,
                            x_code * out.radix_x + x,
                            y_code * out.radix_y + br.y as usize,
                            prob * wx * wz * br.prob,
                            out,
                        );
                    }
                }
            }
        }
    }
}

fn entropy(ps: impl Iterator<Item = f64>) -> f64 {
    ps.filter(|&p| p > 0.0).map(|p| -p * p.log2()).sum()
}

impl PathTables {
    /// (1/n)·I(Xⁿ; Yⁿ) = (H(Xⁿ) + H(Yⁿ) − H(Xⁿ, Yⁿ)) / n.
    pub fn block_leakage(&self) -> f64 {
        let ny = self.p_y.len();
        let p_x = self.p_xy.chunks(ny).map(|row| row.iter().sum::<f64>());
        let h_x = entropy(p_x);
        let h_y = entropy(self.p_y.iter().copied());
        let h_xy = entropy(self.p_xy.iter().copied());
        (h_x + h_y - h_xy) / self.n as f64
    }

    pub fn y_sequence(&self, code: usize) -> Vec<Units> {
        decode(code, self.radix_y, self.n)
    }

    pub fn x_sequence(&self, code: usize) -> Vec<Units> {
        decode(code, self.radix_x, self.n)
    }
}

pub fn decode(mut code: usize, radix: usize, len: usize) -> Vec<Units> {
    let mut out = vec![0; len];
    for slot in out.iter_mut().rev() {
        *slot = (code % radix) as Units;
        code /= radix;
    }
    out
}

/// Direct simulation of a memoryless channel without a battery:
/// H(X) + H(Y) − H(X, Y) for one symbol.
pub fn single_letter_leakage(p_x: f64, p_z: f64) -> f64 {
    // y = 1 only when x = 1 and z = 0
    let joint = [(1.0 - p_x), p_x * p_z, p_x * (1.0 - p_z)];
    let p_y1 = p_x * (1.0 - p_z);
    let h_x = entropy([1.0 - p_x, p_x].into_iter());
    let h_y = entropy([1.0 - p_y1, p_y1].into_iter());
    h_x + h_y - entropy(joint.into_iter())
}

/// A random valid policy from one of the built-in families, with its system.
pub fn random_policy(rng: &mut impl rand::Rng) -> (SystemSpec, meter_privacy::model::PolicyParams) {
    use meter_privacy::model::PolicyParams;
    let p = |rng: &mut dyn rand::RngCore| rand::Rng::gen_range(rng, 0.05..0.95);
    match rng.gen_range(0..3) {
        0 => (
            SystemSpec::binary_eh(p(rng), p(rng)).unwrap(),
            PolicyParams::BinaryEh { p01a: rng.gen(), p01b: rng.gen(), p10: rng.gen() },
        ),
        1 => {
            let k = rng.gen_range(1..=4);
            let charge = (0..k).map(|_| p(rng)).collect();
            let discharge = (0..k).map(|_| p(rng)).collect();
            (SystemSpec::battery_only(k, p(rng), false).unwrap(), PolicyParams::BatteryOnly { charge, discharge })
        }
        _ => {
            let k = rng.gen_range(1..=3);
            let charge = (0..k).map(|_| p(rng)).collect();
            let discharge = (0..k).map(|_| p(rng)).collect();
            (
                SystemSpec::battery_only(k, p(rng), true).unwrap(),
                PolicyParams::WasteMode { charge, discharge, p_w: rng.gen() },
            )
        }
    }
}
