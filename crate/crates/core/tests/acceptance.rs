//! Acceptance suite. Runs every criterion at full size (about ten minutes on
//! one core) and prints one PASS/FAIL line per criterion.
//!
//! A check listed in `KNOWN_CONFLICTS` is reported as FAIL but does not stop
//! the suite: its reference value contradicts energy conservation or the
//! exact waste of the policy that attains it. Every other check must pass.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use meter_privacy::experiment::{parse_config, run, ConfigOverrides, ExperimentKind};
use meter_privacy::model::{no_battery_leakage_closed_form, PolicyParams, SystemSpec};
use meter_privacy::search::{
    pareto_search, sweep_battery_capacity, sweep_harvest_rate, sweep_waste, ParetoFront, PolicyFamily,
    SearchSettings,
};
use meter_privacy::simulate::{rng_from_seed, sample_trajectory, wasted_energy_exact, wasted_energy_mc_stats};
use meter_privacy::trellis::{estimate_leakage, exact_block_leakage, ForwardTrellis};
use meter_privacy::Error;

const KNOWN_CONFLICTS: &[(&str, &str)] = &[
    (
        "p_z=0.6 I_p@minE_w",
        "the minimum-waste policy is the greedy one with E_w = p_z²/2 = 0.18 exactly; the reference pair (0.185, 0.088) is not a minimum-waste point",
    ),
    (
        "light E_w@minI_p",
        "E_w ≥ p_z − p_x = 0.39 for every policy at p_x = 0.11, p_z = 0.5; the reference 0.088 is unreachable",
    ),
    ("light minE_w", "E_w ≥ p_z − p_x = 0.39; the reference 0.087 is unreachable"),
];

#[derive(Default)]
struct Criterion {
    failures: Vec<String>,
    conflicts: Vec<String>,
    notes: Vec<String>,
}

impl Criterion {
    fn check(&mut self, label: &str, got: f64, want: f64, tol: f64) {
        let ok = (got - want).abs() <= tol;
        self.notes.push(format!("{label}: {got:.4} (ref {want}, ±{tol})"));
        if !ok {
            self.fail(label, format!("{label}: {got:.4} vs {want} ± {tol}"));
        }
    }

    fn require(&mut self, label: &str, ok: bool, detail: String) {
        self.notes.push(format!("{label}: {detail}"));
        if !ok {
            self.fail(label, detail);
        }
    }

    fn fail(&mut self, label: &str, detail: String) {
        if let Some((_, why)) = KNOWN_CONFLICTS.iter().find(|(l, _)| *l == label) {
            self.conflicts.push(format!("{detail} [{why}]"));
        } else {
            self.failures.push(detail);
        }
    }
}

fn settings(n: usize) -> SearchSettings {
    SearchSettings {
        n,
        ..SearchSettings::default()
    }
}

fn corners(c: &mut Criterion, tag: &str, front: &ParetoFront, want: [f64; 4]) {
    let a = front.min_ip();
    let b = front.min_ew();
    c.check(&format!("{tag} minI_p"), a.ip, want[0], 0.02);
    c.check(&format!("{tag} E_w@minI_p"), a.ew, want[1], 0.02);
    c.check(&format!("{tag} minE_w"), b.ew, want[2], 0.02);
    c.check(&format!("{tag} I_p@minE_w"), b.ip, want[3], 0.02);
}

fn harvest_corners() -> Criterion {
    let mut c = Criterion::default();
    let reference = [
        (0.0, [0.5, 0.0, 0.0, 0.5]),
        (0.2, [0.213, 0.055, 0.02, 0.462]),
        (0.4, [0.118, 0.12, 0.081, 0.243]),
        (0.6, [0.062, 0.213, 0.185, 0.088]),
        (0.8, [0.02, 0.332, 0.32, 0.032]),
        (1.0, [0.0, 0.5, 0.5, 0.0]),
    ];
    let pz: Vec<f64> = reference.iter().map(|r| r.0).collect();
    let rows = sweep_harvest_rate(&pz, 0.5, &settings(1_000_000)).unwrap();
    for (row, (p_z, want)) in rows.iter().zip(reference) {
        corners(&mut c, &format!("p_z={p_z}"), &row.grid.front, want);
    }
    // both reference corners of the p_z = 0.4 row sit on the computed front
    let front = &rows[2].grid.front;
    let near = |ip: f64, ew: f64| front.points.iter().any(|p| (p.ip - ip).abs() <= 0.02 && (p.ew - ew).abs() <= 0.02);
    c.require("p_z=0.4 front", near(0.118, 0.12) && near(0.243, 0.081), format!("{} front points", front.points.len()));
    let no_battery = rows.iter().all(|r| (r.no_battery.0 - no_battery_leakage_closed_form(0.5, r.p_z()).unwrap()).abs() < 1e-15);
    c.require("no-battery arm", no_battery, "closed form per p_z".into());
    c
}

fn equiprobable_corners() -> Criterion {
    let mut c = Criterion::default();
    let grid = pareto_search(PolicyFamily::BinaryEh, 1, 0.5, 0.5, &settings(1_000_000)).unwrap();
    corners(&mut c, "p_x=p_z=0.5", &grid.front, [0.088, 0.163, 0.125, 0.171]);
    c
}

fn load_bias() -> Criterion {
    let mut c = Criterion::default();
    for (tag, p_x, want) in [("heavy", 0.89, [0.026, 0.043, 0.011, 0.105]), ("light", 0.11, [0.027, 0.088, 0.087, 0.03])] {
        let grid = pareto_search(PolicyFamily::BinaryEh, 1, p_x, 0.5, &settings(1_000_000)).unwrap();
        corners(&mut c, tag, &grid.front, want);
    }
    c
}

fn capacity_sweep() -> Criterion {
    let mut c = Criterion::default();
    let rows = sweep_battery_capacity(&[1, 2, 3, 4, 5, 6], 0.5, &settings(1_000_000)).unwrap();
    let ip: Vec<f64> = rows.iter().map(|r| r.min_ip().ip_raw).collect();
    c.check("K=1", ip[0], 0.5, 0.01);
    c.require("non-increasing", ip.windows(2).all(|w| w[1] <= w[0]), format!("{ip:.4?}"));
    c.require("K=6 < 0.1", ip[5] < 0.1, format!("{:.4}", ip[5]));
    c
}

fn waste_sweep() -> Criterion {
    let mut c = Criterion::default();
    let pw = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
    let rows = sweep_waste(&[1, 2, 3], &pw, 0.5, &settings(200_000)).unwrap();
    for row in rows.iter().filter(|r| r.p_w == 1.0) {
        let best = row.min_ip();
        c.require(&format!("p_w=1 K={} I_p", row.capacity()), best.ip <= 0.01, format!("{:.4}", best.ip));
        c.check(&format!("p_w=1 K={} E_w", row.capacity()), best.ew, 0.5, 0.01);
    }
    let k1 = |p_w: f64| rows.iter().find(|r| r.capacity() == 1 && r.p_w == p_w).unwrap();
    let k3 = |p_w: f64| rows.iter().find(|r| r.capacity() == 3 && r.p_w == p_w).unwrap();
    let base = k1(0.0).min_ip();
    c.check("p_w=0 K=1 I_p", base.ip, 0.5, 0.01);
    c.check("p_w=0 K=1 E_w", base.ew, 0.0, 1e-12);
    for &p_w in &pw {
        let (a, b) = (k3(p_w).min_ip(), k1(p_w).min_ip());
        // leakage ties are judged at the Monte Carlo resolution
        let ok = a.ip_raw <= b.ip_raw + 0.005 && a.ew <= b.ew + 1e-9;
        c.require(
            &format!("p_w={p_w} K=3 vs K=1"),
            ok,
            format!("({:.4}, {:.4}) vs ({:.4}, {:.4})", a.ip, a.ew, b.ip, b.ew),
        );
    }
    c
}

fn oracle_equivalence() -> Criterion {
    let mut c = Criterion::default();
    let cases = [
        (SystemSpec::binary_eh(0.5, 0.5).unwrap(), PolicyParams::BinaryEh { p01a: 0.5, p01b: 0.5, p10: 0.5 }),
        (SystemSpec::binary_eh(0.3, 0.6).unwrap(), PolicyParams::BinaryEh { p01a: 0.2, p01b: 0.9, p10: 0.7 }),
        (
            SystemSpec::battery_only(2, 0.5, false).unwrap(),
            PolicyParams::BatteryOnly { charge: vec![0.6, 0.4], discharge: vec![0.4, 0.6] },
        ),
    ];
    for (i, (spec, params)) in cases.iter().enumerate() {
        let policy = params.build().unwrap();
        let trellis = ForwardTrellis::new(spec, &policy).unwrap();
        let tables = common::enumerate_paths(spec, &policy, 10);
        let mut worst: f64 = 0.0;
        for (code, &p) in tables.p_y.iter().enumerate() {
            let delta = match trellis.scaled_neg_log2_output(&tables.y_sequence(code)) {
                Ok(v) => (v + p.log2()).abs(),
                Err(Error::ZeroProbability { .. }) if p == 0.0 => 0.0,
                Err(_) => f64::INFINITY,
            };
            worst = worst.max(delta);
        }
        c.require(&format!("case {i} n=10 y-sequences"), worst < 1e-9, format!("max delta {worst:.2e} over {}", tables.p_y.len()));
        let small = common::enumerate_paths(spec, &policy, 6);
        let delta = (exact_block_leakage(spec, &policy, 6).unwrap() - small.block_leakage()).abs();
        c.require(&format!("case {i} n=6 block leakage"), delta < 1e-9, format!("delta {delta:.2e}"));
    }
    c
}

fn memoryless_closed_form() -> Criterion {
    let mut c = Criterion::default();
    let spec = SystemSpec::no_battery(0.5, 0.5).unwrap();
    let policy = PolicyParams::NoBattery.build().unwrap();
    for seed in 1..=5u64 {
        let traj = sample_trajectory(&spec, &policy, 1_000_000, seed).unwrap();
        let est = estimate_leakage(&traj, &spec, &policy).unwrap();
        c.check(&format!("seed {seed}"), est.ip, 0.3113, 0.005);
    }
    c
}

fn waste_monte_carlo() -> Criterion {
    let mut c = Criterion::default();
    let mut rng = rng_from_seed(2024);
    for i in 0..20u64 {
        let (spec, params) = common::random_policy(&mut rng);
        let policy = params.build().unwrap();
        let exact = wasted_energy_exact(&spec, &policy).unwrap();
        let mc = wasted_energy_mc_stats(&sample_trajectory(&spec, &policy, 1_000_000, 100 + i).unwrap());
        let z = if mc.std_error > 0.0 { (mc.mean - exact).abs() / mc.std_error } else { 0.0 };
        let ok = (mc.mean - exact).abs() <= 3.0 * mc.std_error + 1e-12;
        c.require(&format!("{params}"), ok, format!("exact {exact:.5} mc {:.5} ({z:.2}σ)", mc.mean));
    }
    c
}

fn determinism() -> Criterion {
    let mut c = Criterion::default();
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (run_id, workers) in [(0, None), (1, Some(1)), (2, Some(2))] {
        let out = dir.path().join(format!("run{run_id}"));
        let overrides = ConfigOverrides {
            kind: Some(ExperimentKind::SweepPz),
            pz_values: Some(vec![0.2, 0.5]),
            n: Some(20_000),
            seed: Some(77),
            workers,
            out: Some(out.clone()),
            ..Default::default()
        };
        let config = parse_config(None, &overrides).unwrap();
        run(&config).unwrap();
        let mut files = Vec::new();
        for name in ["results.csv", "summary.csv", "pz_0.2.csv", "pz_0.5.csv"] {
            files.push(std::fs::read(out.join(name)).unwrap());
        }
        outputs.push(files);
    }
    let same = outputs.windows(2).all(|w| w[0] == w[1]);
    c.require("tables", same, format!("{} runs, workers default/1/2, 2 × 1331 policies", outputs.len()));
    c
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Criterion); 9] = [
        ("harvest-rate corner table", harvest_corners),
        ("equiprobable corner points", equiprobable_corners),
        ("heavy and light load", load_bias),
        ("battery capacity sweep", capacity_sweep),
        ("grid-waste mode", waste_sweep),
        ("recursion vs enumeration", oracle_equivalence),
        ("memoryless closed form", memoryless_closed_form),
        ("exact vs Monte Carlo waste", waste_monte_carlo),
        ("seeded determinism", determinism),
    ];
    let filter = std::env::args().nth(1).filter(|a| !a.starts_with('-'));
    let mut hard_failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if filter.as_deref().is_some_and(|f| f != id.to_string()) {
            continue;
        }
        let started = Instant::now();
        let c = check();
        for note in &c.notes {
            println!("    {note}");
        }
        let verdict = if c.failures.is_empty() && c.conflicts.is_empty() { "PASS" } else { "FAIL" };
        println!("criterion {id} ({name}): {verdict} [{:.1} s]", started.elapsed().as_secs_f64());
        for f in &c.failures {
            println!("    failed: {f}");
        }
        for f in &c.conflicts {
            println!("    known conflict: {f}");
        }
        hard_failures += c.failures.len();
    }
    if hard_failures > 0 {
        println!("{hard_failures} check(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
