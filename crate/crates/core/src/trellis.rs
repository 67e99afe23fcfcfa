//! Leakage-rate estimation by forward sum-product recursion over the battery
//! trellis.
//!
//! Two metrics are propagated along an observed trajectory:
//! `mu(s) ∝ p(s, y_1..y_k)` and `nu(s) ∝ p(s, x_1..x_k, y_1..y_k)`.
//! Both are renormalized at every step; the accumulated log₂ scale factors
//! recover −log₂ p(yⁿ) and −log₂ p(xⁿ, yⁿ), and
//! I_p ≈ H(X) − (1/n)·log₂p(yⁿ) + (1/n)·log₂p(xⁿ, yⁿ).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_policy, Condition, Policy, SystemSpec, Units};
use crate::simulate::Trajectory;

/// Sequence budget of [`exact_block_leakage`] (joint input/output sequences).
pub const ENUMERATION_BUDGET: u128 = 1 << 20;

/// Scaled forward metrics after `k` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TrellisMetrics {
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    /// Σ log₂ λ_μ, i.e. −log₂ p(y_1..y_k).
    pub log_scale_mu: f64,
    /// Σ log₂ λ_ν, i.e. −log₂ p(x_1..x_k, y_1..y_k).
    pub log_scale_nu: f64,
    pub k: usize,
}

/// Metrics before the first observation: all mass on the empty battery.
pub fn init_metrics(capacity: Units) -> TrellisMetrics {
    let states = capacity as usize + 1;
    let mut mu = vec![0.0; states];
    mu[0] = 1.0;
    TrellisMetrics {
        nu: mu.clone(),
        mu,
        log_scale_mu: 0.0,
        log_scale_nu: 0.0,
        k: 0,
    }
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    from: usize,
    to: usize,
    weight: f64,
}

/// Transition weights of the trellis grouped by observed symbols.
///
/// `by_output[y]` holds Σ_{x,z} p(x, z, y, s' | s); `by_joint[x·|Y| + y]`
/// holds Σ_z p(x, z, y, s' | s).
#[derive(Debug, Clone)]
pub struct ForwardTrellis {
    states: usize,
    inputs: usize,
    outputs: usize,
    by_output: Vec<Vec<Edge>>,
    by_joint: Vec<Vec<Edge>>,
}

fn push_edge(edges: &mut Vec<Edge>, from: usize, to: usize, weight: f64) {
    match edges.iter_mut().find(|e| e.from == from && e.to == to) {
        Some(e) => e.weight += weight,
        None => edges.push(Edge { from, to, weight }),
    }
}

impl ForwardTrellis {
    pub fn new(spec: &SystemSpec, policy: &Policy) -> Result<Self> {
        spec.validate()?;
        validate_policy(policy, spec).into_result()?;
        let states = spec.states();
        let inputs = spec.max_input as usize + 1;
        let outputs = spec.max_output as usize + 1;
        let px = spec.input_pmf();
        let pz = spec.harvest_pmf();
        let mut by_output = vec![Vec::new(); outputs];
        let mut by_joint = vec![Vec::new(); inputs * outputs];
        for from in 0..states {
            for (x, &wx) in px.iter().enumerate() {
                for (z, &wz) in pz.iter().enumerate() {
                    let cond = Condition {
                        b_prev: from as Units,
                        x: x as Units,
                        z: z as Units,
                    };
                    for br in policy.branches(cond) {
                        let w = wx * wz * br.prob;
                        if w > 0.0 {
                            let y = br.y as usize;
                            let to = br.b_next as usize;
                            push_edge(&mut by_output[y], from, to, w);
                            push_edge(&mut by_joint[x * outputs + y], from, to, w);
                        }
                    }
                }
            }
        }
        Ok(Self {
            states,
            inputs,
            outputs,
            by_output,
            by_joint,
        })
    }

    pub fn states(&self) -> usize {
        self.states
    }

    fn output_edges(&self, y: Units) -> Result<&[Edge]> {
        self.by_output
            .get(y as usize)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid("y", y, "outside the output alphabet"))
    }

    fn joint_edges(&self, x: Units, y: Units) -> Result<&[Edge]> {
        if x as usize >= self.inputs {
            return Err(Error::invalid("x", x, "outside the input alphabet"));
        }
        if y as usize >= self.outputs {
            return Err(Error::invalid("y", y, "outside the output alphabet"));
        }
        Ok(&self.by_joint[x as usize * self.outputs + y as usize])
    }

    /// One scaled step of both recursions, returning fresh metrics.
    pub fn forward_step(&self, metrics: &TrellisMetrics, y_next: Units, x_next: Units) -> Result<TrellisMetrics> {
        let mut m = metrics.clone();
        let mut scratch = vec![0.0; self.states];
        self.advance(&mut m, &mut scratch, y_next, x_next)?;
        Ok(m)
    }

    /// In-place form of [`ForwardTrellis::forward_step`]; `scratch` must hold `states` entries.
    pub fn advance(&self, m: &mut TrellisMetrics, scratch: &mut [f64], y: Units, x: Units) -> Result<()> {
        let step = m.k + 1;
        m.log_scale_mu += propagate(&m.mu, scratch, self.output_edges(y)?, step)?;
        m.mu.copy_from_slice(scratch);
        m.log_scale_nu += propagate(&m.nu, scratch, self.joint_edges(x, y)?, step)?;
        m.nu.copy_from_slice(scratch);
        m.k = step;
        Ok(())
    }

    /// Unscaled log₂ p(y_1..y_n); −∞ when the sequence is impossible.
    pub fn log2_prob_output(&self, y_seq: &[Units]) -> Result<f64> {
        let mut alpha = init_metrics(self.states as Units - 1).mu;
        for &y in y_seq {
            alpha = propagate_unscaled(&alpha, self.output_edges(y)?);
        }
        Ok(alpha.iter().sum::<f64>().log2())
    }

    /// Unscaled log₂ p(x_1..x_n, y_1..y_n); −∞ when the pair is impossible.
    pub fn log2_prob_joint(&self, x_seq: &[Units], y_seq: &[Units]) -> Result<f64> {
        if x_seq.len() != y_seq.len() {
            return Err(Error::invalid("x_seq", x_seq.len(), "input and output sequences differ in length"));
        }
        let mut alpha = init_metrics(self.states as Units - 1).nu;
        for (&x, &y) in x_seq.iter().zip(y_seq) {
            alpha = propagate_unscaled(&alpha, self.joint_edges(x, y)?);
        }
        Ok(alpha.iter().sum::<f64>().log2())
    }
}

/// out(s') = λ·Σ_s metric(s)·w(s→s') with λ = 1/Σ; returns log₂ λ.
#[inline]
fn propagate(metric: &[f64], out: &mut [f64], edges: &[Edge], step: usize) -> Result<f64> {
    out.iter_mut().for_each(|v| *v = 0.0);
    for e in edges {
        out[e.to] += metric[e.from] * e.weight;
    }
    let total: f64 = out.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroProbability { step });
    }
    let scale = 1.0 / total;
    out.iter_mut().for_each(|v| *v *= scale);
    Ok(-total.log2())
}

fn propagate_unscaled(metric: &[f64], edges: &[Edge]) -> Vec<f64> {
    let mut out = vec![0.0; metric.len()];
    for e in edges {
        out[e.to] += metric[e.from] * e.weight;
    }
    out
}

/// Single step of both recursions.
pub fn forward_step(
    metrics: &TrellisMetrics,
    y_next: Units,
    x_next: Units,
    spec: &SystemSpec,
    policy: &Policy,
) -> Result<TrellisMetrics> {
    ForwardTrellis::new(spec, policy)?.forward_step(metrics, y_next, x_next)
}

/// Leakage-rate estimate from one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeakageEstimate {
    /// Unclamped estimate.
    pub ip_raw: f64,
    /// Estimate clamped to [0, H(X)].
    pub ip: f64,
    pub h_x: f64,
    /// −(1/n)·log₂ p(yⁿ).
    pub neg_log_py: f64,
    /// −(1/n)·log₂ p(xⁿ, yⁿ).
    pub neg_log_pxy: f64,
    /// H(X) − I_p.
    pub equivocation_rate: f64,
    pub n: usize,
    pub seed: u64,
}

impl LeakageEstimate {
    fn assemble(h_x: f64, neg_log_py: f64, neg_log_pxy: f64, n: usize, seed: u64) -> Self {
        let ip_raw = h_x + neg_log_py - neg_log_pxy;
        let ip = ip_raw.clamp(0.0, h_x);
        Self {
            ip_raw,
            ip,
            h_x,
            neg_log_py,
            neg_log_pxy,
            equivocation_rate: h_x - ip,
            n,
            seed,
        }
    }
}

/// Runs the scaled recursions along `traj` and assembles the leakage estimate.
pub fn estimate_leakage(traj: &Trajectory, spec: &SystemSpec, policy: &Policy) -> Result<LeakageEstimate> {
    let trellis = ForwardTrellis::new(spec, policy)?;
    estimate_with_trellis(&trellis, traj, spec.input_entropy())
}

pub fn estimate_with_trellis(trellis: &ForwardTrellis, traj: &Trajectory, h_x: f64) -> Result<LeakageEstimate> {
    let n = traj.len();
    if n == 0 {
        return Err(Error::invalid("n", 0, "trajectory is empty"));
    }
    let (neg_log_py, neg_log_pxy) = trellis.scaled_neg_log2(&traj.x, &traj.y)?;
    Ok(LeakageEstimate::assemble(
        h_x,
        neg_log_py / n as f64,
        neg_log_pxy / n as f64,
        n,
        traj.seed,
    ))
}

/// Which edge sets the two lanes of a scaled run follow.
#[derive(Clone, Copy)]
enum Lanes {
    /// mu over `by_output[y]`, nu over `by_joint[x, y]`.
    OutputAndJoint,
    /// Both lanes over `by_output[y]`.
    OutputOnly,
}

impl ForwardTrellis {
    fn check_symbols(&self, x_seq: &[Units], y_seq: &[Units]) -> Result<()> {
        if let Some(&y) = y_seq.iter().find(|&&y| y as usize >= self.outputs) {
            return Err(Error::invalid("y", y, "outside the output alphabet"));
        }
        if let Some(&x) = x_seq.iter().find(|&&x| x as usize >= self.inputs) {
            return Err(Error::invalid("x", x, "outside the input alphabet"));
        }
        Ok(())
    }

    /// Scaled recursions over a whole sequence pair: (−log₂ p(yⁿ), −log₂ p(xⁿ, yⁿ)).
    pub fn scaled_neg_log2(&self, x_seq: &[Units], y_seq: &[Units]) -> Result<(f64, f64)> {
        if x_seq.len() != y_seq.len() {
            return Err(Error::invalid("x_seq", x_seq.len(), "input and output sequences differ in length"));
        }
        self.check_symbols(x_seq, y_seq)?;
        self.run(Lanes::OutputAndJoint, x_seq, y_seq)
    }

    /// Scaled recursion for the output sequence alone: −log₂ p(yⁿ).
    pub fn scaled_neg_log2_output(&self, y_seq: &[Units]) -> Result<f64> {
        self.check_symbols(&[], y_seq)?;
        Ok(self.run(Lanes::OutputOnly, y_seq, y_seq)?.0)
    }

    fn run(&self, lanes: Lanes, x_seq: &[Units], y_seq: &[Units]) -> Result<(f64, f64)> {
        match self.states {
            1 => run_dense::<1>(self, lanes, x_seq, y_seq),
            2 => run_dense::<2>(self, lanes, x_seq, y_seq),
            3 => run_dense::<3>(self, lanes, x_seq, y_seq),
            4 => run_dense::<4>(self, lanes, x_seq, y_seq),
            5 => run_dense::<5>(self, lanes, x_seq, y_seq),
            6 => run_dense::<6>(self, lanes, x_seq, y_seq),
            7 => run_dense::<7>(self, lanes, x_seq, y_seq),
            8 => run_dense::<8>(self, lanes, x_seq, y_seq),
            _ => run_sparse(self, lanes, x_seq, y_seq),
        }
    }
}

/// Steps between renormalizations in the fixed-size kernel. Every step
/// multiplies the metric sum by at least the smallest positive transition
/// weight, so a short block cannot underflow.
const RENORM_EVERY: usize = 8;

fn dense<const S: usize>(edges: &[Edge]) -> [[f64; S]; S] {
    let mut m = [[0.0; S]; S];
    for e in edges {
        m[e.to][e.from] += e.weight;
    }
    m
}

#[inline(always)]
fn apply<const S: usize>(m: &[[f64; S]; S], v: &[f64; S]) -> [f64; S] {
    let mut out = [0.0; S];
    for (o, row) in out.iter_mut().zip(m) {
        let mut acc = 0.0;
        for (w, x) in row.iter().zip(v) {
            acc += w * x;
        }
        *o = acc;
    }
    out
}

/// Renormalizes `v` and returns its former sum.
#[inline(always)]
fn renormalize<const S: usize>(v: &mut [f64; S]) -> f64 {
    let total: f64 = v.iter().sum();
    let scale = 1.0 / total;
    v.iter_mut().for_each(|x| *x *= scale);
    total
}

/// Both lanes with stack-allocated metrics, normalized every
/// [`RENORM_EVERY`] steps. Returns the two −log₂ probabilities.
fn run_dense<const S: usize>(trellis: &ForwardTrellis, lanes: Lanes, x_seq: &[Units], y_seq: &[Units]) -> Result<(f64, f64)> {
    let out_mats: Vec<[[f64; S]; S]> = trellis.by_output.iter().map(|e| dense::<S>(e)).collect();
    let second_mats: Vec<[[f64; S]; S]> = match lanes {
        Lanes::OutputAndJoint => trellis.by_joint.iter().map(|e| dense::<S>(e)).collect(),
        Lanes::OutputOnly => out_mats.clone(),
    };
    let ny = trellis.outputs;
    let second = |i: usize| match lanes {
        Lanes::OutputAndJoint => x_seq[i] as usize * ny + y_seq[i] as usize,
        Lanes::OutputOnly => y_seq[i] as usize,
    };
    let mut mu = [0.0; S];
    mu[0] = 1.0;
    let mut nu = mu;
    let (mut log_mu, mut log_nu) = (0.0, 0.0);
    let n = y_seq.len();

    let mut start = 0;
    while start < n {
        let end = (start + RENORM_EVERY).min(n);
        let (mu0, nu0) = (mu, nu);
        for i in start..end {
            mu = apply(&out_mats[y_seq[i] as usize], &mu);
            nu = apply(&second_mats[second(i)], &nu);
        }
        let tm = renormalize(&mut mu);
        let tn = renormalize(&mut nu);
        if !(tm > 0.0 && tn > 0.0 && tm.is_finite() && tn.is_finite()) {
            // replay the block one step at a time to name the failing step
            let (mut m, mut v) = (mu0, nu0);
            for i in start..end {
                m = apply(&out_mats[y_seq[i] as usize], &m);
                v = apply(&second_mats[second(i)], &v);
                if !(m.iter().sum::<f64>() > 0.0 && v.iter().sum::<f64>() > 0.0) {
                    return Err(Error::ZeroProbability { step: i + 1 });
                }
                renormalize(&mut m);
                renormalize(&mut v);
            }
            return Err(Error::Internal(format!("metric underflow in steps {}..{}", start + 1, end)));
        }
        log_mu -= tm.log2();
        log_nu -= tn.log2();
        start = end;
    }
    Ok((log_mu, log_nu))
}

fn run_sparse(trellis: &ForwardTrellis, lanes: Lanes, x_seq: &[Units], y_seq: &[Units]) -> Result<(f64, f64)> {
    let states = trellis.states();
    let mut mu = LogScaled::start(states);
    let mut nu = LogScaled::start(states);
    let mut scratch = vec![0.0; states];
    for (k, &y) in y_seq.iter().enumerate() {
        mu.step(trellis.output_edges(y)?, &mut scratch, k + 1)?;
        let second = match lanes {
            Lanes::OutputAndJoint => trellis.joint_edges(x_seq[k], y)?,
            Lanes::OutputOnly => trellis.output_edges(y)?,
        };
        nu.step(second, &mut scratch, k + 1)?;
    }
    Ok((mu.neg_log2(), nu.neg_log2()))
}

/// Flush threshold for the deferred product of normalizers.
const DEFER_FLOOR: f64 = 1e-200;

/// Normalized metric that multiplies its per-step normalizers together and
/// only takes a logarithm when the product nears underflow.
struct LogScaled {
    metric: Vec<f64>,
    pending: f64,
    log2_total: f64,
}

impl LogScaled {
    fn start(states: usize) -> Self {
        let mut metric = vec![0.0; states];
        metric[0] = 1.0;
        Self {
            metric,
            pending: 1.0,
            log2_total: 0.0,
        }
    }

    #[inline]
    fn step(&mut self, edges: &[Edge], scratch: &mut [f64], step: usize) -> Result<()> {
        scratch.iter_mut().for_each(|v| *v = 0.0);
        for e in edges {
            scratch[e.to] += self.metric[e.from] * e.weight;
        }
        let total: f64 = scratch.iter().sum();
        if !(total > 0.0) {
            return Err(Error::ZeroProbability { step });
        }
        let scale = 1.0 / total;
        for (m, s) in self.metric.iter_mut().zip(scratch.iter()) {
            *m = s * scale;
        }
        self.pending *= total;
        if self.pending < DEFER_FLOOR {
            self.log2_total += self.pending.log2();
            self.pending = 1.0;
        }
        Ok(())
    }

    /// −log₂ of the product of all normalizers.
    fn neg_log2(&self) -> f64 {
        -(self.log2_total + self.pending.log2())
    }
}

/// Exact log₂ p(yⁿ) by the unscaled recursion.
pub fn exact_sequence_logprob(y_seq: &[Units], spec: &SystemSpec, policy: &Policy) -> Result<f64> {
    ForwardTrellis::new(spec, policy)?.log2_prob_output(y_seq)
}

/// Exact log₂ p(xⁿ, yⁿ) by the unscaled recursion.
pub fn exact_joint_logprob(x_seq: &[Units], y_seq: &[Units], spec: &SystemSpec, policy: &Policy) -> Result<f64> {
    ForwardTrellis::new(spec, policy)?.log2_prob_joint(x_seq, y_seq)
}

/// Decodes `index` as `len` digits in base `radix` (most significant first).
pub(crate) fn digits(mut index: u128, radix: usize, len: usize) -> Vec<Units> {
    let mut out = vec![0; len];
    for slot in out.iter_mut().rev() {
        *slot = (index % radix as u128) as Units;
        index /= radix as u128;
    }
    out
}

/// (1/n)·I(Xⁿ; Yⁿ) by enumerating every input and output sequence.
pub fn exact_block_leakage(spec: &SystemSpec, policy: &Policy, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("n", 0, "block length must be at least 1"));
    }
    let trellis = ForwardTrellis::new(spec, policy)?;
    let nx = trellis.inputs;
    let ny = trellis.outputs;
    let x_count = (nx as u128).checked_pow(n as u32);
    let y_count = (ny as u128).checked_pow(n as u32);
    let (x_count, y_count) = match (x_count, y_count) {
        (Some(a), Some(b)) if a.saturating_mul(b) <= ENUMERATION_BUDGET => (a, b),
        _ => {
            return Err(Error::EnumerationBudget {
                required: (nx as u128).saturating_pow(n as u32).saturating_mul((ny as u128).saturating_pow(n as u32)),
                budget: ENUMERATION_BUDGET,
            })
        }
    };

    let mut h_y = 0.0;
    for yi in 0..y_count {
        let p = trellis.log2_prob_output(&digits(yi, ny, n))?.exp2();
        h_y += crate::model::entropy_term(p);
    }
    let mut h_xy = 0.0;
    let mut p_x = vec![0.0; x_count as usize];
    for xi in 0..x_count {
        let xs = digits(xi, nx, n);
        for yi in 0..y_count {
            let p = trellis.log2_prob_joint(&xs, &digits(yi, ny, n))?.exp2();
            h_xy += crate::model::entropy_term(p);
            p_x[xi as usize] += p;
        }
    }
    let h_x: f64 = p_x.iter().map(|&p| crate::model::entropy_term(p)).sum();
    Ok((h_x + h_y - h_xy) / n as f64)
}
