//! Policy grids, (I_p, E_w) evaluation, Pareto fronts and the parameter sweeps.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    complementary_params, no_battery_leakage_closed_form, symmetric_free_count, symmetric_params, PolicyParams,
    SystemSpec, Units,
};
use crate::simulate::{
    battery_chain, derive_seed, sample_trajectory, wasted_energy_mc, wasted_energy_with_chain, DEFAULT_LENGTH,
};
use crate::trellis::{estimate_with_trellis, ForwardTrellis};

/// How a grid point's free parameters map to a policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PolicyFamily {
    /// No battery; a single policy.
    NoBattery,
    /// Two-state harvesting policy; free (p01a, p01b, p10).
    BinaryEh,
    /// Battery-only, symmetric and complementary; ⌊K/2⌋ free charge probabilities.
    Symmetric,
    /// Battery-only with r_{b+1} = 1 − q_b; K free charge probabilities.
    Complementary,
    /// Battery-only, all 2K charge and discharge probabilities free.
    Full,
    /// Complementary battery-only policy that wastes grid energy with `p_w` when full.
    ComplementaryWaste { p_w: f64 },
}

impl PolicyFamily {
    pub fn free_count(&self, capacity: Units) -> usize {
        match self {
            PolicyFamily::NoBattery => 0,
            PolicyFamily::BinaryEh => 3,
            PolicyFamily::Symmetric => symmetric_free_count(capacity),
            PolicyFamily::Complementary | PolicyFamily::ComplementaryWaste { .. } => capacity as usize,
            PolicyFamily::Full => 2 * capacity as usize,
        }
    }

    pub fn expand(&self, capacity: Units, free: &[f64]) -> Result<PolicyParams> {
        if free.len() != self.free_count(capacity) {
            return Err(Error::invalid(
                "free",
                free.len(),
                format!("{self:?} with K = {capacity} takes {} parameters", self.free_count(capacity)),
            ));
        }
        Ok(match self {
            PolicyFamily::NoBattery => PolicyParams::NoBattery,
            PolicyFamily::BinaryEh => PolicyParams::BinaryEh {
                p01a: free[0],
                p01b: free[1],
                p10: free[2],
            },
            PolicyFamily::Symmetric => {
                let (charge, discharge) = symmetric_params(capacity, free)?;
                PolicyParams::BatteryOnly { charge, discharge }
            }
            PolicyFamily::Complementary => {
                let (charge, discharge) = complementary_params(free)?;
                PolicyParams::BatteryOnly { charge, discharge }
            }
            PolicyFamily::Full => {
                let k = capacity as usize;
                PolicyParams::BatteryOnly {
                    charge: free[..k].to_vec(),
                    discharge: free[k..].to_vec(),
                }
            }
            PolicyFamily::ComplementaryWaste { p_w } => {
                let (charge, discharge) = complementary_params(free)?;
                PolicyParams::WasteMode {
                    charge,
                    discharge,
                    p_w: *p_w,
                }
            }
        })
    }

    /// System the family runs on.
    pub fn system(&self, capacity: Units, p_x: f64, p_z: f64) -> Result<SystemSpec> {
        match self {
            PolicyFamily::NoBattery => SystemSpec::no_battery(p_x, p_z),
            PolicyFamily::BinaryEh => {
                if capacity != 1 {
                    return Err(Error::invalid("K", capacity, "the harvesting family has K = 1"));
                }
                SystemSpec::binary_eh(p_x, p_z)
            }
            _ => {
                if p_z != 0.0 {
                    return Err(Error::invalid("p_z", p_z, "battery-only families have no harvester"));
                }
                SystemSpec::battery_only(capacity, p_x, matches!(self, PolicyFamily::ComplementaryWaste { .. }))
            }
        }
    }
}

/// Grid levels {0, step, 2·step, …, 1}.
pub fn grid_values(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::invalid("step", step, "grid step must lie in (0, 1]"));
    }
    let inverse = 1.0 / step;
    let rounded = inverse.round();
    if (inverse - rounded).abs() < 1e-9 {
        // exact decimal levels, e.g. 0.3 rather than 0.30000000000000004
        let k = rounded as usize;
        return Ok((0..=k).map(|i| i as f64 / k as f64).collect());
    }
    let mut values: Vec<f64> = (0..=inverse.floor() as usize).map(|i| i as f64 * step).collect();
    if *values.last().unwrap() < 1.0 - 1e-12 {
        values.push(1.0);
    }
    Ok(values)
}

/// Number of grid points of `family`.
pub fn grid_size(family: PolicyFamily, capacity: Units, step: f64) -> Result<usize> {
    let levels = grid_values(step)?.len();
    Ok(levels.pow(family.free_count(capacity) as u32))
}

/// Every policy of the Cartesian grid over the family's free parameters,
/// first parameter varying slowest.
pub fn grid_policies(
    family: PolicyFamily,
    capacity: Units,
    step: f64,
) -> Result<impl Iterator<Item = PolicyParams>> {
    let levels = grid_values(step)?;
    let dims = family.free_count(capacity);
    let total = levels.len().pow(dims as u32);
    // validate the expansion once so the iterator itself cannot fail
    family.expand(capacity, &vec![0.0; dims])?;
    let radix = levels.len();
    Ok((0..total).map(move |index| {
        let mut free = vec![0.0; dims];
        let mut rest = index;
        for slot in free.iter_mut().rev() {
            *slot = levels[rest % radix];
            rest /= radix;
        }
        family.expand(capacity, &free).expect("grid levels are valid probabilities")
    }))
}

/// Achieved (I_p, E_w) pair of one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePair {
    /// Unclamped leakage estimate (mean over replicates).
    pub ip_raw: f64,
    /// Leakage clamped to [0, H(X)].
    pub ip: f64,
    /// Sample standard deviation of `ip_raw` over replicates, when more than one.
    pub ip_std: Option<f64>,
    /// Stationary wasted energy rate.
    pub ew: f64,
    /// Monte Carlo wasted energy rate of the first replicate.
    pub ew_mc: f64,
    pub params: PolicyParams,
    /// Derived seed of every replicate.
    pub seeds: Vec<u64>,
    pub n: usize,
}

impl RatePair {
    pub fn seed(&self) -> u64 {
        self.seeds[0]
    }
}

/// Evaluates one policy on one trajectory.
pub fn evaluate_policy(spec: &SystemSpec, params: &PolicyParams, n: usize, seed: u64) -> Result<RatePair> {
    evaluate_replicated(spec, params, n, &[seed])
}

/// Evaluates one policy on one trajectory per seed and averages the leakage.
pub fn evaluate_replicated(spec: &SystemSpec, params: &PolicyParams, n: usize, seeds: &[u64]) -> Result<RatePair> {
    let tag = |e: Error| Error::Evaluation {
        params: params.to_string(),
        source: Box::new(e),
    };
    if seeds.is_empty() {
        return Err(tag(Error::invalid("replicates", 0, "need at least one seed")));
    }
    let policy = params.build().map_err(tag)?;
    let trellis = ForwardTrellis::new(spec, &policy).map_err(tag)?;
    let chain = battery_chain(spec, &policy).map_err(tag)?;
    let ew = wasted_energy_with_chain(spec, &policy, &chain);
    let h_x = spec.input_entropy();

    let mut ips = Vec::with_capacity(seeds.len());
    let mut ew_mc = f64::NAN;
    for (i, &seed) in seeds.iter().enumerate() {
        let traj = sample_trajectory(spec, &policy, n, seed).map_err(tag)?;
        let est = estimate_with_trellis(&trellis, &traj, h_x).map_err(tag)?;
        if i == 0 {
            ew_mc = wasted_energy_mc(&traj);
        }
        ips.push(est.ip_raw);
    }
    let ip_raw = ips.iter().sum::<f64>() / ips.len() as f64;
    let ip_std = (ips.len() > 1).then(|| {
        let var = ips.iter().map(|v| (v - ip_raw).powi(2)).sum::<f64>() / (ips.len() - 1) as f64;
        var.sqrt()
    });
    Ok(RatePair {
        ip_raw,
        ip: ip_raw.clamp(0.0, h_x),
        ip_std,
        ew,
        ew_mc,
        params: params.clone(),
        seeds: seeds.to_vec(),
        n,
    })
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

/// Total order used to pick among equal points: (I_p, E_w, params).
fn point_cmp(a: &RatePair, b: &RatePair) -> Ordering {
    a.ip_raw
        .total_cmp(&b.ip_raw)
        .then(a.ew.total_cmp(&b.ew))
        .then_with(|| lex_cmp(&a.params.values(), &b.params.values()))
}

/// Plain Pareto dominance on (raw I_p, E_w), both minimized.
pub fn dominates(p: &RatePair, q: &RatePair) -> bool {
    p.ip_raw <= q.ip_raw && p.ew <= q.ew && (p.ip_raw < q.ip_raw || p.ew < q.ew)
}

/// Dominance that treats leakage differences within one standard deviation
/// as ties: p must beat q in I_p by more than max(σ_p, σ_q).
pub fn dominates_noisy(p: &RatePair, q: &RatePair) -> bool {
    let sigma = p.ip_std.unwrap_or(0.0).max(q.ip_std.unwrap_or(0.0));
    p.ew <= q.ew && p.ip_raw + sigma < q.ip_raw
}

/// Pareto-optimal points with their lower convex hull.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoFront {
    /// Non-dominated points sorted by increasing I_p.
    pub points: Vec<RatePair>,
    /// Lower convex hull vertices, sorted by increasing I_p.
    pub hull: Option<Vec<RatePair>>,
}

impl ParetoFront {
    pub fn min_ip(&self) -> &RatePair {
        &self.points[0]
    }

    pub fn min_ew(&self) -> &RatePair {
        self.points.last().expect("front is never empty")
    }

    pub fn with_hull(mut self) -> Self {
        self.hull = Some(convex_hull_timeshare(&self));
        self
    }

    pub fn contains(&self, p: &RatePair) -> bool {
        self.points.iter().any(|q| q == p)
    }

    pub fn hull_contains(&self, p: &RatePair) -> bool {
        self.hull.as_ref().is_some_and(|h| h.iter().any(|q| q == p))
    }
}

/// Indices of the non-dominated points of `points`, in (I_p, E_w, params) order.
///
/// Equal pairs keep only the point with the lexicographically smallest
/// parameters. When every point carries a replicate σ the noise-aware
/// relation [`dominates_noisy`] is used.
pub fn pareto_indices(points: &[RatePair]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| point_cmp(&points[a], &points[b]));
    let noisy = !points.is_empty() && points.iter().all(|p| p.ip_std.is_some());
    if !noisy {
        // after sorting, a point survives iff its E_w beats everything before it
        let mut best = f64::INFINITY;
        return order
            .into_iter()
            .filter(|&i| {
                if points[i].ew < best {
                    best = points[i].ew;
                    true
                } else {
                    false
                }
            })
            .collect();
    }
    let mut kept: Vec<usize> = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        let p = &points[i];
        let duplicate = order[..pos]
            .iter()
            .any(|&j| points[j].ip_raw == p.ip_raw && points[j].ew == p.ew);
        if duplicate {
            continue;
        }
        if !order.iter().any(|&j| j != i && dominates_noisy(&points[j], p)) {
            kept.push(i);
        }
    }
    kept
}

/// Dominance-filtered front of a nonempty point set.
pub fn pareto_filter(points: &[RatePair]) -> Result<ParetoFront> {
    if points.is_empty() {
        return Err(Error::invalid("points", 0, "cannot filter an empty point set"));
    }
    let points = pareto_indices(points).into_iter().map(|i| points[i].clone()).collect();
    Ok(ParetoFront { points, hull: None })
}

fn cross(o: &RatePair, a: &RatePair, b: &RatePair) -> f64 {
    (a.ip_raw - o.ip_raw) * (b.ew - o.ew) - (a.ew - o.ew) * (b.ip_raw - o.ip_raw)
}

/// Lower-left convex hull of the front: the trade-off reachable by
/// time-sharing between two front policies. Collinear interior points are
/// dropped.
pub fn convex_hull_timeshare(front: &ParetoFront) -> Vec<RatePair> {
    let mut sorted: Vec<&RatePair> = front.points.iter().collect();
    sorted.sort_by(|a, b| point_cmp(a, b));
    let mut hull: Vec<&RatePair> = Vec::new();
    for p in sorted {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.into_iter().cloned().collect()
}

/// E_w of the hull at leakage `ip`, by linear interpolation; `None` outside its I_p range.
pub fn hull_ew_at(hull: &[RatePair], ip: f64) -> Option<f64> {
    let first = hull.first()?;
    if ip < first.ip_raw {
        return None;
    }
    if hull.len() == 1 {
        return (ip == first.ip_raw).then_some(first.ew);
    }
    for w in hull.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if ip >= a.ip_raw && ip <= b.ip_raw {
            let t = if b.ip_raw > a.ip_raw { (ip - a.ip_raw) / (b.ip_raw - a.ip_raw) } else { 0.0 };
            return Some(a.ew + t * (b.ew - a.ew));
        }
    }
    None
}

/// Grid search settings shared by every sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSettings {
    pub step: f64,
    pub n: usize,
    pub master_seed: u64,
    pub replicates: usize,
    /// Worker threads; `None` uses rayon's default.
    pub workers: Option<usize>,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            step: 0.1,
            n: DEFAULT_LENGTH,
            master_seed: 1,
            replicates: 1,
            workers: None,
        }
    }
}

impl SearchSettings {
    /// Seeds of evaluation `index` in the grid occupying stream block `block`.
    pub fn seeds(&self, block: u64, index: usize) -> Vec<u64> {
        (0..self.replicates)
            .map(|r| derive_seed(self.master_seed, (block << 32) | (index * self.replicates + r) as u64))
            .collect()
    }

    fn install<T: Send>(&self, job: impl FnOnce() -> T + Send) -> Result<T> {
        match self.workers {
            None => Ok(job()),
            Some(threads) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .map_err(|e| Error::Internal(e.to_string()))?;
                Ok(pool.install(job))
            }
        }
    }
}

/// Evaluates a list of policies in parallel; results keep the input order.
pub fn evaluate_all(
    spec: &SystemSpec,
    params: &[PolicyParams],
    settings: &SearchSettings,
    block: u64,
) -> Result<Vec<RatePair>> {
    if settings.replicates == 0 {
        return Err(Error::invalid("replicates", 0, "need at least one replicate"));
    }
    let results: Vec<Result<RatePair>> = settings.install(|| {
        params
            .par_iter()
            .enumerate()
            .map(|(i, p)| evaluate_replicated(spec, p, settings.n, &settings.seeds(block, i)))
            .collect()
    })?;
    results.into_iter().collect()
}

/// Evaluates the whole grid of `family`.
pub fn evaluate_grid(
    family: PolicyFamily,
    capacity: Units,
    p_x: f64,
    p_z: f64,
    settings: &SearchSettings,
    block: u64,
) -> Result<Vec<RatePair>> {
    let spec = family.system(capacity, p_x, p_z)?;
    let params: Vec<PolicyParams> = grid_policies(family, capacity, settings.step)?.collect();
    evaluate_all(&spec, &params, settings, block)
}

/// Result of one grid: every evaluated point and its front.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub capacity: Units,
    pub p_x: f64,
    pub p_z: f64,
    pub points: Vec<RatePair>,
    pub front: ParetoFront,
}

impl GridResult {
    fn new(capacity: Units, p_x: f64, p_z: f64, points: Vec<RatePair>) -> Result<Self> {
        let front = pareto_filter(&points)?.with_hull();
        Ok(Self {
            capacity,
            p_x,
            p_z,
            points,
            front,
        })
    }
}

/// Pareto search over one family's grid.
pub fn pareto_search(
    family: PolicyFamily,
    capacity: Units,
    p_x: f64,
    p_z: f64,
    settings: &SearchSettings,
) -> Result<GridResult> {
    let points = evaluate_grid(family, capacity, p_x, p_z, settings, 0)?;
    GridResult::new(capacity, p_x, p_z, points)
}

/// One row of the harvest-rate sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestRow {
    pub grid: GridResult,
    /// (I_p, E_w) of the battery-less system.
    pub no_battery: (f64, f64),
}

impl HarvestRow {
    pub fn p_z(&self) -> f64 {
        self.grid.p_z
    }

    pub fn min_ip(&self) -> &RatePair {
        self.grid.front.min_ip()
    }

    pub fn min_ew(&self) -> &RatePair {
        self.grid.front.min_ew()
    }
}

/// For each harvest rate, the two-state harvesting grid with a battery and
/// the closed-form battery-less system.
pub fn sweep_harvest_rate(p_z_values: &[f64], p_x: f64, settings: &SearchSettings) -> Result<Vec<HarvestRow>> {
    p_z_values
        .iter()
        .enumerate()
        .map(|(slot, &p_z)| {
            let points = evaluate_grid(PolicyFamily::BinaryEh, 1, p_x, p_z, settings, slot as u64)?;
            let no_battery = (no_battery_leakage_closed_form(p_x, p_z)?, p_z * (1.0 - p_x));
            Ok(HarvestRow {
                grid: GridResult::new(1, p_x, p_z, points)?,
                no_battery,
            })
        })
        .collect()
}

/// One row of the capacity sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityRow {
    pub grid: GridResult,
}

impl CapacityRow {
    pub fn capacity(&self) -> Units {
        self.grid.capacity
    }

    pub fn min_ip(&self) -> &RatePair {
        self.grid.front.min_ip()
    }
}

/// Minimum leakage per battery capacity over the symmetric family, without harvesting.
pub fn sweep_battery_capacity(capacities: &[Units], p_x: f64, settings: &SearchSettings) -> Result<Vec<CapacityRow>> {
    capacities
        .iter()
        .enumerate()
        .map(|(slot, &k)| {
            let points = evaluate_grid(PolicyFamily::Symmetric, k, p_x, 0.0, settings, slot as u64)?;
            Ok(CapacityRow {
                grid: GridResult::new(k, p_x, 0.0, points)?,
            })
        })
        .collect()
}

/// One (K, p_w) cell of the waste sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WasteRow {
    pub p_w: f64,
    pub grid: GridResult,
}

impl WasteRow {
    pub fn capacity(&self) -> Units {
        self.grid.capacity
    }

    pub fn min_ip(&self) -> &RatePair {
        self.grid.front.min_ip()
    }
}

/// Achievable points of the complementary grid-waste family for every (K, p_w).
pub fn sweep_waste(capacities: &[Units], p_w_values: &[f64], p_x: f64, settings: &SearchSettings) -> Result<Vec<WasteRow>> {
    let mut rows = Vec::new();
    for (ki, &k) in capacities.iter().enumerate() {
        for (wi, &p_w) in p_w_values.iter().enumerate() {
            crate::model::check_probability("p_w", p_w)?;
            let block = (ki * p_w_values.len() + wi) as u64;
            let family = PolicyFamily::ComplementaryWaste { p_w };
            let points = evaluate_grid(family, k, p_x, 0.0, settings, block)?;
            rows.push(WasteRow {
                p_w,
                grid: GridResult::new(k, p_x, 0.0, points)?,
            });
        }
    }
    Ok(rows)
}
