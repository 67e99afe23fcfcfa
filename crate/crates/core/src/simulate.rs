//! Trajectory sampling, the battery Markov chain and wasted-energy rates.

use std::io::Write;

use rand::distributions::{Bernoulli, Distribution};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::model::{validate_policy, Condition, Policy, SystemSpec, Units};

/// Default trajectory length.
pub const DEFAULT_LENGTH: usize = 1_000_000;

/// Accepted residual ‖πP − π‖₁ of the returned distribution.
const STATIONARY_RESIDUAL: f64 = 1e-10;
/// Batches used for the batch-means standard error.
const MC_BATCHES: usize = 50;

/// Derives the seed of substream `stream` from a master seed (SplitMix64 finalizer over both words).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The generator used for every trajectory (xoshiro256++ seeded through SplitMix64).
pub fn rng_from_seed(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Sampled input, harvest, output and battery sequences.
///
/// `b` holds n + 1 entries, starting with b_0 = 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub x: Vec<Units>,
    pub z: Vec<Units>,
    pub y: Vec<Units>,
    pub b: Vec<Units>,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Fraction of steps 1..=n spent at each battery level.
    pub fn occupancy(&self, states: usize) -> Vec<f64> {
        let mut counts = vec![0usize; states];
        for &b in &self.b[1..] {
            counts[b as usize] += 1;
        }
        let n = self.len() as f64;
        counts.into_iter().map(|c| c as f64 / n).collect()
    }

    /// Columnar dump `i,x,z,y,b` (b is the level after step i).
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "i,x,z,y,b")?;
        for i in 0..self.len() {
            writeln!(out, "{},{},{},{},{}", i + 1, self.x[i], self.z[i], self.y[i], self.b[i + 1])?;
        }
        Ok(())
    }
}

/// Bernoulli source over {0} or {0, 1}.
#[derive(Clone, Copy)]
enum Source {
    Constant,
    Binary(Bernoulli),
}

impl Source {
    fn new(max: Units, p: f64) -> Result<Self> {
        if max == 0 {
            return Ok(Source::Constant);
        }
        Bernoulli::new(p)
            .map(Source::Binary)
            .map_err(|e| Error::invalid("probability", p, e.to_string()))
    }

    #[inline]
    fn sample<R: Rng>(&self, rng: &mut R) -> Units {
        match self {
            Source::Constant => 0,
            Source::Binary(d) => d.sample(rng) as Units,
        }
    }
}

/// Policy table flattened for sampling: positive-probability branches with
/// cumulative probabilities. Conditions with at most two live branches (all
/// built-in families) take a branch-free path that always draws one uniform.
struct BranchSampler {
    stride_x: usize,
    stride_b: usize,
    offsets: Vec<usize>,
    items: Vec<(Units, Units, f64)>,
    two_way: Option<Vec<TwoWay>>,
}

#[derive(Clone, Copy)]
struct TwoWay {
    first_prob: f64,
    options: [(Units, Units); 2],
}

impl BranchSampler {
    fn new(spec: &SystemSpec, policy: &Policy) -> Self {
        let nz = spec.max_harvest as usize + 1;
        let nx = spec.max_input as usize + 1;
        let mut offsets = vec![0];
        let mut items = Vec::new();
        for b_prev in 0..=spec.capacity {
            for x in 0..=spec.max_input {
                for z in 0..=spec.max_harvest {
                    let mut cum = 0.0;
                    for br in policy.branches(Condition { b_prev, x, z }) {
                        if br.prob > 0.0 {
                            cum += br.prob;
                            items.push((br.y, br.b_next, cum));
                        }
                    }
                    offsets.push(items.len());
                }
            }
        }
        let two_way = offsets
            .windows(2)
            .map(|w| match &items[w[0]..w[1]] {
                [(y, b, _)] => Some(TwoWay {
                    first_prob: 1.0,
                    options: [(*y, *b); 2],
                }),
                [(y0, b0, c0), (y1, b1, _)] => Some(TwoWay {
                    first_prob: *c0,
                    options: [(*y0, *b0), (*y1, *b1)],
                }),
                _ => None,
            })
            .collect();
        Self {
            stride_x: nz,
            stride_b: nx * nz,
            offsets,
            items,
            two_way,
        }
    }

    #[inline]
    fn sample<R: Rng>(&self, rng: &mut R, b: Units, x: Units, z: Units) -> (Units, Units) {
        let i = b as usize * self.stride_b + x as usize * self.stride_x + z as usize;
        let u: f64 = rng.gen();
        if let Some(table) = &self.two_way {
            let t = &table[i];
            return t.options[(u >= t.first_prob) as usize];
        }
        let branches = &self.items[self.offsets[i]..self.offsets[i + 1]];
        for &(y, b_next, cum) in branches {
            if u < cum {
                return (y, b_next);
            }
        }
        let last = branches[branches.len() - 1];
        (last.0, last.1)
    }
}

/// Samples n steps of the system under `policy`, starting from an empty battery.
pub fn sample_trajectory(spec: &SystemSpec, policy: &Policy, n: usize, seed: u64) -> Result<Trajectory> {
    spec.validate()?;
    validate_policy(policy, spec).into_result()?;
    if n == 0 {
        return Err(Error::invalid("n", n, "trajectory length must be at least 1"));
    }
    let x_src = Source::new(spec.max_input, spec.p_x)?;
    let z_src = Source::new(spec.max_harvest, spec.p_z)?;
    let sampler = BranchSampler::new(spec, policy);
    let mut rng = rng_from_seed(seed);

    let mut traj = Trajectory {
        x: Vec::with_capacity(n),
        z: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        b: Vec::with_capacity(n + 1),
        seed,
    };
    let mut b = 0;
    traj.b.push(b);
    for _ in 0..n {
        let x = x_src.sample(&mut rng);
        let z = z_src.sample(&mut rng);
        let (y, b_next) = sampler.sample(&mut rng, b, x, z);
        traj.x.push(x);
        traj.z.push(z);
        traj.y.push(y);
        traj.b.push(b_next);
        b = b_next;
    }
    Ok(traj)
}

/// Monte Carlo wasted energy rate (1/n)·Σ(z_i + y_i − x_i).
pub fn wasted_energy_mc(traj: &Trajectory) -> f64 {
    let total: i64 = (0..traj.len())
        .map(|i| traj.z[i] as i64 + traj.y[i] as i64 - traj.x[i] as i64)
        .sum();
    total as f64 / traj.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    /// Batch-means standard error of `mean`.
    pub std_error: f64,
}

/// [`wasted_energy_mc`] with a batch-means standard error that accounts for
/// the serial correlation of the summands.
pub fn wasted_energy_mc_stats(traj: &Trajectory) -> McEstimate {
    let n = traj.len();
    let mean = wasted_energy_mc(traj);
    let batches = MC_BATCHES.min(n);
    if batches < 2 {
        return McEstimate { mean, std_error: f64::NAN };
    }
    let size = n / batches;
    let batch_means: Vec<f64> = (0..batches)
        .map(|k| {
            let range = k * size..(k + 1) * size;
            let s: i64 = range
                .map(|i| traj.z[i] as i64 + traj.y[i] as i64 - traj.x[i] as i64)
                .sum();
            s as f64 / size as f64
        })
        .collect();
    let bm = batch_means.iter().sum::<f64>() / batches as f64;
    let var = batch_means.iter().map(|m| (m - bm).powi(2)).sum::<f64>() / (batches - 1) as f64;
    McEstimate {
        mean,
        std_error: (var / batches as f64).sqrt(),
    }
}

/// Markov chain of battery levels induced by a policy and the sources.
#[derive(Debug, Clone, PartialEq)]
pub struct BatteryChain {
    states: usize,
    /// Row-major `states × states` transition matrix.
    transition: Vec<f64>,
    stationary: Vec<f64>,
}

impl BatteryChain {
    pub fn states(&self) -> usize {
        self.states
    }

    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.transition[from * self.states + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.transition[from * self.states..(from + 1) * self.states]
    }

    /// Long-run distribution reached from b_0 = 0.
    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    /// ‖πP − π‖₁.
    pub fn residual(&self) -> f64 {
        l1_distance(&mul_vec_mat(&self.stationary, &self.transition, self.states), &self.stationary)
    }
}

/// Builds the battery chain and its stationary distribution.
///
/// The distribution is the Cesàro limit of e₀·Pⁿ. It is solved for directly:
/// each closed class reachable from level 0 gets its invariant measure by
/// GTH elimination, weighted by the probability of being absorbed there.
pub fn battery_chain(spec: &SystemSpec, policy: &Policy) -> Result<BatteryChain> {
    validate_policy(policy, spec).into_result()?;
    let s = spec.states();
    let px = spec.input_pmf();
    let pz = spec.harvest_pmf();
    let mut transition = vec![0.0; s * s];
    for b_prev in 0..=spec.capacity {
        for (x, &wx) in px.iter().enumerate() {
            for (z, &wz) in pz.iter().enumerate() {
                let cond = Condition { b_prev, x: x as Units, z: z as Units };
                for br in policy.branches(cond) {
                    transition[b_prev as usize * s + br.b_next as usize] += wx * wz * br.prob;
                }
            }
        }
    }
    let stationary = stationary_from_origin(&transition, s)?;
    Ok(BatteryChain {
        states: s,
        transition,
        stationary,
    })
}

fn mul_vec_mat(v: &[f64], m: &[f64], s: usize) -> Vec<f64> {
    let mut out = vec![0.0; s];
    for (i, &vi) in v.iter().enumerate() {
        if vi == 0.0 {
            continue;
        }
        for (o, &mij) in out.iter_mut().zip(&m[i * s..(i + 1) * s]) {
            *o += vi * mij;
        }
    }
    out
}

fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn stationary_from_origin(transition: &[f64], s: usize) -> Result<Vec<f64>> {
    let edge = |i: usize, j: usize| transition[i * s + j] > 0.0;
    let reach_sets: Vec<Vec<bool>> = (0..s).map(|i| reachable_from(i, s, edge)).collect();
    let from_origin: Vec<usize> = (0..s).filter(|&j| reach_sets[0][j]).collect();
    // a state is recurrent when everything it reaches leads back to it
    let recurrent = |i: usize| (0..s).all(|j| !reach_sets[i][j] || reach_sets[j][i]);
    let mut class_of = vec![usize::MAX; s];
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for &i in &from_origin {
        if class_of[i] != usize::MAX || !recurrent(i) {
            continue;
        }
        let members: Vec<usize> = (0..s).filter(|&j| reach_sets[i][j]).collect();
        for &j in &members {
            class_of[j] = classes.len();
        }
        classes.push(members);
    }
    let weights = absorption_from_origin(transition, s, &from_origin, &class_of, classes.len())?;

    let mut dist = vec![0.0; s];
    for (class, &weight) in classes.iter().zip(&weights) {
        if weight == 0.0 {
            continue;
        }
        for (&state, p) in class.iter().zip(gth(transition, s, class)) {
            dist[state] += weight * p;
        }
    }
    let total: f64 = dist.iter().sum();
    dist.iter_mut().for_each(|p| *p /= total);
    let residual = l1_distance(&mul_vec_mat(&dist, transition, s), &dist);
    if !(residual <= STATIONARY_RESIDUAL) {
        return Err(Error::Convergence { residual });
    }
    Ok(dist)
}

fn reachable_from(start: usize, s: usize, edge: impl Fn(usize, usize) -> bool) -> Vec<bool> {
    let mut seen = vec![false; s];
    seen[start] = true;
    let mut stack = vec![start];
    while let Some(i) = stack.pop() {
        for j in 0..s {
            if !seen[j] && edge(i, j) {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen
}

/// Probability that the chain started at level 0 ends in each closed class.
fn absorption_from_origin(
    transition: &[f64],
    s: usize,
    reachable: &[usize],
    class_of: &[usize],
    classes: usize,
) -> Result<Vec<f64>> {
    if class_of[0] != usize::MAX {
        let mut w = vec![0.0; classes];
        w[class_of[0]] = 1.0;
        return Ok(w);
    }
    if classes == 1 {
        return Ok(vec![1.0]);
    }
    // (I − Q) h = R over the transient states, one right-hand side per class
    let transient: Vec<usize> = reachable.iter().copied().filter(|&i| class_of[i] == usize::MAX).collect();
    let t = transient.len();
    let width = t + classes;
    let mut a = vec![0.0; t * width];
    for (row, &i) in transient.iter().enumerate() {
        a[row * width + row] += 1.0;
        for j in 0..s {
            let p = transition[i * s + j];
            if p == 0.0 {
                continue;
            }
            match transient.iter().position(|&k| k == j) {
                Some(col) => a[row * width + col] -= p,
                None => a[row * width + t + class_of[j]] += p,
            }
        }
    }
    for col in 0..t {
        let pivot = (col..t)
            .max_by(|&x, &y| a[x * width + col].abs().total_cmp(&a[y * width + col].abs()))
            .unwrap();
        if a[pivot * width + col].abs() < 1e-300 {
            return Err(Error::Internal("singular absorption system".into()));
        }
        for k in 0..width {
            a.swap(col * width + k, pivot * width + k);
        }
        for row in 0..t {
            if row == col {
                continue;
            }
            let f = a[row * width + col] / a[col * width + col];
            if f != 0.0 {
                for k in col..width {
                    a[row * width + k] -= f * a[col * width + k];
                }
            }
        }
    }
    let origin = transient.iter().position(|&i| i == 0).expect("origin is transient");
    let diag = a[origin * width + origin];
    Ok((0..classes).map(|c| (a[origin * width + t + c] / diag).max(0.0)).collect())
}

/// Invariant measure of the chain restricted to an irreducible closed class
/// (Grassmann–Taksar–Heyman elimination, free of cancellation).
fn gth(transition: &[f64], s: usize, class: &[usize]) -> Vec<f64> {
    let m = class.len();
    let mut p: Vec<f64> = class
        .iter()
        .flat_map(|&i| class.iter().map(move |&j| transition[i * s + j]))
        .collect();
    for k in (1..m).rev() {
        let out: f64 = p[k * m..k * m + k].iter().sum();
        for i in 0..k {
            p[i * m + k] /= out;
        }
        for i in 0..k {
            let pik = p[i * m + k];
            if pik == 0.0 {
                continue;
            }
            for j in 0..k {
                p[i * m + j] += pik * p[k * m + j];
            }
        }
    }
    let mut x = vec![0.0; m];
    x[0] = 1.0;
    for j in 1..m {
        x[j] = (0..j).map(|i| x[i] * p[i * m + j]).sum();
    }
    let total: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= total);
    x
}

/// Stationary wasted energy rate.
///
/// Uses the per-step waste z + y + b_prev − b_next − x, whose stationary mean
/// equals that of z + y − x because the battery level has no drift under π.
pub fn wasted_energy_exact(spec: &SystemSpec, policy: &Policy) -> Result<f64> {
    let chain = battery_chain(spec, policy)?;
    Ok(wasted_energy_with_chain(spec, policy, &chain))
}

pub fn wasted_energy_with_chain(spec: &SystemSpec, policy: &Policy, chain: &BatteryChain) -> f64 {
    let px = spec.input_pmf();
    let pz = spec.harvest_pmf();
    let mut total = 0.0;
    for (b_prev, &pi) in chain.stationary().iter().enumerate() {
        if pi == 0.0 {
            continue;
        }
        for (x, &wx) in px.iter().enumerate() {
            for (z, &wz) in pz.iter().enumerate() {
                let cond = Condition {
                    b_prev: b_prev as Units,
                    x: x as Units,
                    z: z as Units,
                };
                for br in policy.branches(cond) {
                    total += pi * wx * wz * br.prob * br.waste(cond) as f64;
                }
            }
        }
    }
    total
}
