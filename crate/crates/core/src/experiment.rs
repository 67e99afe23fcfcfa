//! Experiment configuration, dispatch and the files each run writes.
//!
//! A run writes `results.csv` (one row per evaluated policy), `manifest.json`
//! and, depending on the experiment, a `summary.csv` and one table per sweep
//! value. A manifest can be fed back as a config to repeat the run.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::model::{check_probability, Units};
use crate::search::{
    evaluate_replicated, grid_size, pareto_search, sweep_battery_capacity, sweep_harvest_rate, sweep_waste,
    GridResult, PolicyFamily, RatePair, SearchSettings,
};
use crate::trellis::{digits, ForwardTrellis, ENUMERATION_BUDGET};

/// Largest grid a single run may enumerate.
pub const MAX_GRID: usize = 5_000_000;

/// Accepted oracle disagreement in bits.
pub const ORACLE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Leakage,
    Pareto,
    SweepPz,
    SweepK,
    Waste,
    OracleCheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyName {
    NoBattery,
    BinaryEh,
    Symmetric,
    Complementary,
    Full,
    ComplementaryWaste,
}

impl std::fmt::Display for FamilyName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        use clap::ValueEnum;
        f.write_str(self.to_possible_value().expect("no skipped variants").get_name())
    }
}

fn default_px() -> f64 {
    0.5
}
fn default_k() -> Units {
    1
}
fn default_step() -> f64 {
    0.1
}
fn default_n() -> usize {
    crate::simulate::DEFAULT_LENGTH
}
fn default_seed() -> u64 {
    1
}
fn default_replicates() -> usize {
    1
}
fn default_out() -> PathBuf {
    PathBuf::from("results")
}
fn default_pz_values() -> Vec<f64> {
    vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
}
fn default_k_values() -> Vec<Units> {
    (1..=6).collect()
}
fn default_pw_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}
fn default_block() -> usize {
    10
}

/// Everything that determines a run. Missing keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Pr{X = 1}; default 0.5.
    #[serde(default = "default_px")]
    pub p_x: f64,
    /// Pr{Z = 1}; default 0.
    #[serde(default)]
    pub p_z: f64,
    /// Battery capacity; default 1.
    #[serde(rename = "K", default = "default_k")]
    pub k: Units,
    #[serde(default)]
    pub waste_mode: bool,
    /// Grid step; default 0.1.
    #[serde(default = "default_step")]
    pub step: f64,
    /// Trajectory length; default 10⁶.
    #[serde(default = "default_n")]
    pub n: usize,
    /// Master seed; default 1.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Trajectories per policy; default 1.
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Output directory; default `results`.
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Policy family; inferred from K, p_z and waste_mode when absent.
    #[serde(default)]
    pub family: Option<FamilyName>,
    /// Free parameters of the family, for `leakage` and `oracle-check`.
    #[serde(default)]
    pub params: Option<Vec<f64>>,
    /// Waste probability of the complementary-waste family.
    #[serde(default)]
    pub p_w: Option<f64>,
    #[serde(default = "default_pz_values")]
    pub pz_values: Vec<f64>,
    #[serde(default = "default_k_values")]
    pub k_values: Vec<Units>,
    #[serde(default = "default_pw_grid")]
    pub pw_grid: Vec<f64>,
    /// Block length of `oracle-check`; default 10.
    #[serde(default = "default_block")]
    pub block: usize,
    /// Worker threads; results do not depend on it.
    #[serde(default)]
    pub workers: Option<usize>,
}

/// Values given on the command line; each one replaces the file value.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ConfigOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<ExperimentKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_z: Option<f64>,
    #[serde(rename = "K", skip_serializing_if = "Option::is_none")]
    pub k: Option<Units>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub waste_mode: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilyName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_w: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pz_values: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_values: Option<Vec<Units>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pw_grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

/// Builds a config from an optional JSON file (a config or a run manifest)
/// and command-line overrides, then validates it.
pub fn parse_config(path: Option<&Path>, overrides: &ConfigOverrides) -> Result<ExperimentConfig> {
    let mut object = match path {
        None => Map::new(),
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            let value: Value = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let value = match value {
                // a manifest carries the config under its own key
                Value::Object(mut m) if m.contains_key("config") && m.contains_key("master_seed") => {
                    m.remove("config").unwrap()
                }
                other => other,
            };
            match value {
                Value::Object(m) => m,
                _ => return Err(Error::Config(format!("{}: expected a JSON object", path.display()))),
            }
        }
    };
    if let Value::Object(flags) = serde_json::to_value(overrides)? {
        object.extend(flags);
    }
    if !object.contains_key("kind") {
        return Err(Error::Config("missing `kind` (the experiment to run)".into()));
    }
    let config: ExperimentConfig =
        serde_json::from_value(Value::Object(object)).map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        check_probability("p_x", self.p_x)?;
        check_probability("p_z", self.p_z)?;
        if let Some(p_w) = self.p_w {
            check_probability("p_w", p_w)?;
        }
        if self.n == 0 {
            return Err(Error::invalid("n", self.n, "trajectory length must be at least 1"));
        }
        if !(self.step > 0.0 && self.step <= 1.0) {
            return Err(Error::invalid("step", self.step, "grid step must lie in (0, 1]"));
        }
        if self.replicates == 0 {
            return Err(Error::invalid("replicates", 0, "need at least one replicate"));
        }
        if self.workers == Some(0) {
            return Err(Error::invalid("workers", 0, "need at least one worker"));
        }
        for &v in self.params.iter().flatten() {
            check_probability("params", v)?;
        }
        match self.kind {
            ExperimentKind::Leakage | ExperimentKind::OracleCheck => {
                let family = self.family()?;
                family.system(self.k, self.p_x, self.p_z)?;
                let expected = family.free_count(self.k);
                let given = self.params.as_ref().map(Vec::len);
                // oracle-check falls back to all-0.5 parameters
                let required = self.kind == ExperimentKind::Leakage;
                if given.is_some_and(|g| g != expected) || (required && given.is_none() && expected > 0) {
                    return Err(Error::invalid(
                        "params",
                        given.unwrap_or(0),
                        format!("{} takes {expected} parameters", self.family_name()),
                    ));
                }
                if self.block == 0 {
                    return Err(Error::invalid("block", 0, "block length must be at least 1"));
                }
            }
            ExperimentKind::Pareto => {
                let family = self.family()?;
                family.system(self.k, self.p_x, self.p_z)?;
                self.check_grid(family, self.k)?;
            }
            ExperimentKind::SweepPz => {
                if self.pz_values.is_empty() {
                    return Err(Error::invalid("pz_values", "[]", "need at least one harvest rate"));
                }
                for &p in &self.pz_values {
                    check_probability("pz_values", p)?;
                }
            }
            ExperimentKind::SweepK | ExperimentKind::Waste => {
                if self.p_z != 0.0 {
                    return Err(Error::invalid("p_z", self.p_z, "battery sweeps run without harvesting"));
                }
                if self.k_values.is_empty() || self.k_values.contains(&0) {
                    return Err(Error::invalid("k_values", format!("{:?}", self.k_values), "need capacities of at least 1"));
                }
                let family = if self.kind == ExperimentKind::Waste {
                    if self.pw_grid.is_empty() {
                        return Err(Error::invalid("pw_grid", "[]", "need at least one waste probability"));
                    }
                    for &p in &self.pw_grid {
                        check_probability("pw_grid", p)?;
                    }
                    PolicyFamily::ComplementaryWaste { p_w: 0.0 }
                } else {
                    PolicyFamily::Symmetric
                };
                for &k in &self.k_values {
                    self.check_grid(family, k)?;
                }
            }
        }
        Ok(())
    }

    fn check_grid(&self, family: PolicyFamily, k: Units) -> Result<()> {
        let levels = crate::search::grid_values(self.step)?.len() as f64;
        let size = levels.powi(family.free_count(k) as i32);
        if size > MAX_GRID as f64 {
            return Err(Error::invalid(
                "step",
                self.step,
                format!("grid of {size:.3e} policies exceeds the limit of {MAX_GRID}"),
            ));
        }
        Ok(())
    }

    fn family_name(&self) -> FamilyName {
        self.family.unwrap_or(if self.k == 0 {
            FamilyName::NoBattery
        } else if self.p_z > 0.0 {
            FamilyName::BinaryEh
        } else if self.waste_mode {
            FamilyName::ComplementaryWaste
        } else {
            FamilyName::Full
        })
    }

    /// Policy family of single-grid experiments.
    pub fn family(&self) -> Result<PolicyFamily> {
        Ok(match self.family_name() {
            FamilyName::NoBattery => PolicyFamily::NoBattery,
            FamilyName::BinaryEh => PolicyFamily::BinaryEh,
            FamilyName::Symmetric => PolicyFamily::Symmetric,
            FamilyName::Complementary => PolicyFamily::Complementary,
            FamilyName::Full => PolicyFamily::Full,
            FamilyName::ComplementaryWaste => {
                let p_w = self
                    .p_w
                    .ok_or_else(|| Error::invalid("p_w", "none", "the complementary-waste family needs p_w"))?;
                PolicyFamily::ComplementaryWaste { p_w }
            }
        })
    }

    pub fn settings(&self) -> SearchSettings {
        SearchSettings {
            step: self.step,
            n: self.n,
            master_seed: self.seed,
            replicates: self.replicates,
            workers: self.workers,
        }
    }
}

/// One evaluated policy as written to the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub capacity: Units,
    pub p_x: f64,
    pub p_z: f64,
    pub point: RatePair,
    pub on_front: bool,
    pub on_hull: bool,
}

pub const RESULT_HEADER: &str =
    "family,K,params,p_x,p_z,p_w,n,seed,I_p_raw,I_p,I_p_std,E_w_exact,E_w_mc,on_front,on_hull";

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl ResultRow {
    fn from_grid(grid: &GridResult) -> Vec<ResultRow> {
        grid.points
            .iter()
            .map(|p| ResultRow {
                capacity: grid.capacity,
                p_x: grid.p_x,
                p_z: grid.p_z,
                point: p.clone(),
                on_front: grid.front.contains(p),
                on_hull: grid.front.hull_contains(p),
            })
            .collect()
    }

    /// Fields in [`RESULT_HEADER`] order.
    pub fn record(&self) -> Vec<String> {
        let p = &self.point;
        vec![
            p.params.family().to_string(),
            self.capacity.to_string(),
            p.params.label(),
            self.p_x.to_string(),
            self.p_z.to_string(),
            opt(p.params.p_w()),
            p.n.to_string(),
            p.seed().to_string(),
            p.ip_raw.to_string(),
            p.ip.to_string(),
            opt(p.ip_std),
            p.ew.to_string(),
            p.ew_mc.to_string(),
            self.on_front.to_string(),
            self.on_hull.to_string(),
        ]
    }
}

/// Writes a header and records as comma-separated text.
pub fn write_table(path: &Path, header: &[&str], records: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(std::io::Error::from)?;
    writer.write_record(header).map_err(std::io::Error::from)?;
    for record in records {
        writer.write_record(&record).map_err(std::io::Error::from)?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes rows under the standard header.
pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let header: Vec<&str> = RESULT_HEADER.split(',').collect();
    write_table(path, &header, rows.iter().map(ResultRow::record))
}

/// Seeds of one evaluation, recorded for replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    #[serde(rename = "K")]
    pub k: Units,
    pub p_z: f64,
    pub params: String,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub version: String,
    pub master_seed: u64,
    pub wall_time_s: f64,
    pub files: Vec<String>,
    pub seeds: Vec<SeedRecord>,
}

/// One line of the oracle-check report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleLine {
    pub check: String,
    pub n: usize,
    pub sequences: u128,
    pub max_abs_delta: f64,
}

impl OracleLine {
    pub fn passed(&self) -> bool {
        self.max_abs_delta < ORACLE_TOL
    }
}

/// What a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub out: PathBuf,
    pub files: Vec<PathBuf>,
    pub rows: Vec<ResultRow>,
    pub oracle: Vec<OracleLine>,
}

struct Outputs {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn results(&mut self, name: &str, rows: &[ResultRow]) -> Result<()> {
        let path = self.dir.join(name);
        write_results(&path, rows)?;
        self.files.push(path);
        Ok(())
    }

    fn table(&mut self, name: &str, header: &[&str], records: Vec<Vec<String>>) -> Result<()> {
        let path = self.dir.join(name);
        write_table(&path, header, records)?;
        self.files.push(path);
        Ok(())
    }
}

fn seed_records(rows: &[ResultRow]) -> Vec<SeedRecord> {
    rows.iter()
        .map(|r| SeedRecord {
            k: r.capacity,
            p_z: r.p_z,
            params: r.point.params.label(),
            seeds: r.point.seeds.clone(),
        })
        .collect()
}

fn corner_fields(grid: &GridResult) -> Vec<String> {
    let a = grid.front.min_ip();
    let b = grid.front.min_ew();
    vec![
        a.ip.to_string(),
        a.ew.to_string(),
        b.ew.to_string(),
        b.ip.to_string(),
        a.params.label(),
        b.params.label(),
    ]
}

const CORNER_HEADER: [&str; 6] = ["min_I_p", "E_w_at_min_I_p", "min_E_w", "I_p_at_min_E_w", "min_I_p_params", "min_E_w_params"];

fn with_prefix(prefix: &[&str], rest: &[&str]) -> Vec<String> {
    prefix.iter().chain(rest).map(|s| s.to_string()).collect()
}

/// Runs the configured experiment and writes its files under `config.out`.
pub fn run(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let started = Instant::now();
    fs::create_dir_all(&config.out)?;
    let mut out = Outputs {
        dir: config.out.clone(),
        files: Vec::new(),
    };
    let settings = config.settings();
    let mut rows = Vec::new();
    let mut oracle = Vec::new();

    match config.kind {
        ExperimentKind::Leakage => {
            let family = config.family()?;
            let params = family.expand(config.k, config.params.as_deref().unwrap_or(&[]))?;
            let spec = family.system(config.k, config.p_x, config.p_z)?;
            let point = evaluate_replicated(&spec, &params, config.n, &settings.seeds(0, 0))?;
            rows.push(ResultRow {
                capacity: config.k,
                p_x: config.p_x,
                p_z: config.p_z,
                point,
                on_front: true,
                on_hull: true,
            });
        }
        ExperimentKind::Pareto => {
            let grid = pareto_search(config.family()?, config.k, config.p_x, config.p_z, &settings)?;
            rows = ResultRow::from_grid(&grid);
            let front: Vec<ResultRow> = rows.iter().filter(|r| r.on_front).cloned().collect();
            out.results("front.csv", &front)?;
            out.table("summary.csv", &CORNER_HEADER, vec![corner_fields(&grid)])?;
        }
        ExperimentKind::SweepPz => {
            let sweep = sweep_harvest_rate(&config.pz_values, config.p_x, &settings)?;
            let mut summary = Vec::new();
            for row in &sweep {
                let grid_rows = ResultRow::from_grid(&row.grid);
                out.results(&format!("pz_{}.csv", row.p_z()), &grid_rows)?;
                let (ip, ew) = row.no_battery;
                let mut record = vec![row.p_z().to_string()];
                record.extend(corner_fields(&row.grid));
                record.extend([ip.to_string(), ew.to_string()]);
                summary.push(record);
                rows.extend(grid_rows);
            }
            let mut header = with_prefix(&["p_z"], &CORNER_HEADER);
            header.extend(["no_battery_I_p".to_string(), "no_battery_E_w".to_string()]);
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            out.table("summary.csv", &header, summary)?;
        }
        ExperimentKind::SweepK => {
            let sweep = sweep_battery_capacity(&config.k_values, config.p_x, &settings)?;
            let mut summary = Vec::new();
            for row in &sweep {
                let grid_rows = ResultRow::from_grid(&row.grid);
                out.results(&format!("K_{}.csv", row.capacity()), &grid_rows)?;
                let best = row.min_ip();
                summary.push(vec![row.capacity().to_string(), best.ip.to_string(), best.ew.to_string(), best.params.label()]);
                rows.extend(grid_rows);
            }
            out.table("summary.csv", &["K", "min_I_p", "E_w_at_min_I_p", "min_I_p_params"], summary)?;
        }
        ExperimentKind::Waste => {
            let sweep = sweep_waste(&config.k_values, &config.pw_grid, config.p_x, &settings)?;
            let mut summary = Vec::new();
            for row in &sweep {
                let grid_rows = ResultRow::from_grid(&row.grid);
                out.results(&format!("K_{}_pw_{}.csv", row.capacity(), row.p_w), &grid_rows)?;
                let mut record = vec![row.capacity().to_string(), row.p_w.to_string()];
                record.extend(corner_fields(&row.grid));
                summary.push(record);
                rows.extend(grid_rows);
            }
            let header = with_prefix(&["K", "p_w"], &CORNER_HEADER);
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            out.table("summary.csv", &header, summary)?;
        }
        ExperimentKind::OracleCheck => {
            oracle = oracle_check(config)?;
            let records = oracle
                .iter()
                .map(|l| {
                    vec![
                        l.check.clone(),
                        l.n.to_string(),
                        l.sequences.to_string(),
                        format!("{:e}", l.max_abs_delta),
                        l.passed().to_string(),
                    ]
                })
                .collect();
            out.table("oracle.csv", &["check", "n", "sequences", "max_abs_delta", "passed"], records)?;
        }
    }

    if config.kind != ExperimentKind::OracleCheck {
        out.results("results.csv", &rows)?;
    }
    let manifest_path = config.out.join("manifest.json");
    out.files.push(manifest_path.clone());
    let manifest = Manifest {
        config: config.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        master_seed: config.seed,
        wall_time_s: started.elapsed().as_secs_f64(),
        files: out.files.iter().map(|p| p.display().to_string()).collect(),
        seeds: seed_records(&rows),
    };
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;

    if let Some(bad) = oracle.iter().find(|l| !l.passed()) {
        return Err(Error::OracleMismatch {
            check: format!("{} (n = {})", bad.check, bad.n),
            delta: bad.max_abs_delta,
        });
    }
    Ok(RunReport {
        out: config.out.clone(),
        files: out.files,
        rows,
        oracle,
    })
}

/// Compares the scaled recursion with the unscaled one over every output
/// sequence and every (input, output) pair of length `block`.
pub fn oracle_check(config: &ExperimentConfig) -> Result<Vec<OracleLine>> {
    let family = config.family()?;
    let free = config
        .params
        .clone()
        .unwrap_or_else(|| vec![0.5; family.free_count(config.k)]);
    let params = family.expand(config.k, &free)?;
    let spec = family.system(config.k, config.p_x, config.p_z)?;
    let policy = params.build()?;
    let trellis = ForwardTrellis::new(&spec, &policy)?;
    let n = config.block;
    let ny = spec.max_output as usize + 1;
    let nx = spec.max_input as usize + 1;

    // Impossible sequences must be impossible for both recursions.
    let compare = |scaled: Result<f64>, exact: f64| -> Result<f64> {
        match scaled {
            Ok(v) if exact.is_finite() => Ok((v + exact).abs()),
            Ok(_) => Ok(f64::INFINITY),
            Err(Error::ZeroProbability { .. }) if exact == f64::NEG_INFINITY => Ok(0.0),
            Err(Error::ZeroProbability { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    };

    let y_count = count(ny, n)?;
    let mut output_delta: f64 = 0.0;
    let mut total = 0.0;
    for yi in 0..y_count {
        let ys = digits(yi, ny, n);
        let exact = trellis.log2_prob_output(&ys)?;
        total += exact.exp2();
        output_delta = output_delta.max(compare(trellis.scaled_neg_log2_output(&ys), exact)?);
    }

    let pair_count = count(nx * ny, n)?;
    let mut joint_delta: f64 = 0.0;
    for xi in 0..count(nx, n)? {
        let xs = digits(xi, nx, n);
        for yi in 0..y_count {
            let ys = digits(yi, ny, n);
            let exact = trellis.log2_prob_joint(&xs, &ys)?;
            let scaled = trellis.scaled_neg_log2(&xs, &ys).map(|(_, joint)| joint);
            joint_delta = joint_delta.max(compare(scaled, exact)?);
        }
    }

    Ok(vec![
        OracleLine {
            check: "output".into(),
            n,
            sequences: y_count,
            max_abs_delta: output_delta,
        },
        OracleLine {
            check: "joint".into(),
            n,
            sequences: pair_count,
            max_abs_delta: joint_delta,
        },
        OracleLine {
            check: "total-probability".into(),
            n,
            sequences: y_count,
            max_abs_delta: (total - 1.0).abs(),
        },
    ])
}

fn count(radix: usize, n: usize) -> Result<u128> {
    (radix as u128)
        .checked_pow(n as u32)
        .filter(|&c| c <= ENUMERATION_BUDGET)
        .ok_or(Error::EnumerationBudget {
            required: (radix as u128).saturating_pow(n as u32),
            budget: ENUMERATION_BUDGET,
        })
}

/// Predicted number of policy evaluations of a config.
pub fn evaluation_count(config: &ExperimentConfig) -> Result<usize> {
    Ok(match config.kind {
        ExperimentKind::Leakage => 1,
        ExperimentKind::OracleCheck => 0,
        ExperimentKind::Pareto => grid_size(config.family()?, config.k, config.step)?,
        ExperimentKind::SweepPz => config.pz_values.len() * grid_size(PolicyFamily::BinaryEh, 1, config.step)?,
        ExperimentKind::SweepK => config
            .k_values
            .iter()
            .map(|&k| grid_size(PolicyFamily::Symmetric, k, config.step))
            .sum::<Result<usize>>()?,
        ExperimentKind::Waste => {
            config.pw_grid.len()
                * config
                    .k_values
                    .iter()
                    .map(|&k| grid_size(PolicyFamily::Complementary, k, config.step))
                    .sum::<Result<usize>>()?
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(kind: ExperimentKind) -> ConfigOverrides {
        ConfigOverrides {
            kind: Some(kind),
            ..Default::default()
        }
    }

    #[test]
    fn defaults_fill_in() {
        let mut o = flags(ExperimentKind::Pareto);
        o.p_x = Some(0.5);
        o.p_z = Some(0.5);
        o.k = Some(1);
        let c = parse_config(None, &o).unwrap();
        assert_eq!((c.n, c.step, c.replicates, c.seed), (1_000_000, 0.1, 1, 1));
        assert_eq!(c.family().unwrap(), PolicyFamily::BinaryEh);
        assert_eq!(evaluation_count(&c).unwrap(), 1331);
    }

    #[test]
    fn range_and_key_errors_name_the_field() {
        let mut o = flags(ExperimentKind::Pareto);
        o.p_x = Some(1.5);
        let err = parse_config(None, &o).unwrap_err();
        assert!(err.to_string().contains("p_x"), "{err}");
        assert_eq!(err.exit_code(), 2);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"kind": "pareto", "px": 0.5}"#).unwrap();
        let err = parse_config(Some(&path), &ConfigOverrides::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unknown field `px`") && msg.contains("p_x"), "{msg}");
    }

    #[test]
    fn kind_specific_requirements() {
        let mut o = flags(ExperimentKind::Leakage);
        o.p_z = Some(0.5);
        assert!(parse_config(None, &o).is_err(), "binary-eh leakage needs three params");
        o.params = Some(vec![0.5, 0.0, 0.8]);
        assert!(parse_config(None, &o).is_ok());

        let mut o = flags(ExperimentKind::SweepK);
        o.p_z = Some(0.3);
        assert!(parse_config(None, &o).is_err());

        let mut o = flags(ExperimentKind::Pareto);
        o.k = Some(8);
        assert!(parse_config(None, &o).is_err(), "full K = 8 grid is too large");

        let mut o = flags(ExperimentKind::Pareto);
        o.family = Some(FamilyName::ComplementaryWaste);
        o.waste_mode = Some(true);
        assert!(parse_config(None, &o).is_err(), "needs p_w");
        o.p_w = Some(0.5);
        assert!(parse_config(None, &o).is_ok());
    }

    #[test]
    fn csv_row_layout() {
        let spec = crate::model::SystemSpec::binary_eh(0.5, 0.5).unwrap();
        let params = crate::model::PolicyParams::BinaryEh { p01a: 0.5, p01b: 0.0, p10: 0.8 };
        let point = evaluate_replicated(&spec, &params, 1000, &[7]).unwrap();
        let row = ResultRow {
            capacity: 1,
            p_x: 0.5,
            p_z: 0.5,
            point,
            on_front: true,
            on_hull: false,
        };
        let fields = row.record();
        assert_eq!(fields.len(), RESULT_HEADER.split(',').count());
        assert_eq!(&fields[..3], &["binary-eh", "1", "p01a=0.5;p01b=0;p10=0.8"]);
        assert_eq!(fields[5], "");
        assert_eq!(fields[7], "7");
        assert_eq!(&fields[13..], &["true", "false"]);
    }

    #[test]
    fn oracle_check_passes_on_defaults() {
        let mut o = flags(ExperimentKind::OracleCheck);
        o.p_z = Some(0.5);
        o.block = Some(6);
        let c = parse_config(None, &o).unwrap();
        let lines = oracle_check(&c).unwrap();
        assert_eq!(lines.len(), 3);
        assert!(lines.iter().all(OracleLine::passed), "{lines:?}");
        assert_eq!(lines[1].sequences, 4096);
    }
}
