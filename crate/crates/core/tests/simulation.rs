//! Sampling, wasted energy and leakage estimates against closed forms.

mod common;

use approx::assert_abs_diff_eq;
use meter_privacy::model::{no_battery_leakage_closed_form, PolicyParams, SystemSpec};
use meter_privacy::simulate::{
    battery_chain, rng_from_seed, sample_trajectory, wasted_energy_exact, wasted_energy_mc_stats,
};
use meter_privacy::trellis::estimate_leakage;

#[test]
fn monte_carlo_waste_agrees_with_stationary_value() {
    let mut rng = rng_from_seed(11);
    for seed in 0..12 {
        let (spec, params) = common::random_policy(&mut rng);
        let policy = params.build().unwrap();
        let exact = wasted_energy_exact(&spec, &policy).unwrap();
        let traj = sample_trajectory(&spec, &policy, 400_000, seed).unwrap();
        let mc = wasted_energy_mc_stats(&traj);
        let tol = 4.0 * mc.std_error + 1e-4;
        assert!((mc.mean - exact).abs() <= tol, "{params}: mc {} vs exact {exact} (se {})", mc.mean, mc.std_error);
    }
}

#[test]
fn occupancy_matches_stationary_distribution() {
    let cases = [
        (SystemSpec::binary_eh(0.5, 0.5).unwrap(), PolicyParams::BinaryEh { p01a: 0.5, p01b: 0.0, p10: 0.8 }),
        (
            SystemSpec::battery_only(3, 0.5, false).unwrap(),
            PolicyParams::BatteryOnly { charge: vec![0.7, 0.5, 0.3], discharge: vec![0.3, 0.5, 0.7] },
        ),
        (
            SystemSpec::battery_only(2, 0.4, true).unwrap(),
            PolicyParams::WasteMode { charge: vec![0.6, 0.2], discharge: vec![0.4, 0.8], p_w: 0.5 },
        ),
    ];
    for (spec, params) in cases {
        let policy = params.build().unwrap();
        let chain = battery_chain(&spec, &policy).unwrap();
        let traj = sample_trajectory(&spec, &policy, 1_000_000, 3).unwrap();
        for (occ, pi) in traj.occupancy(spec.states()).iter().zip(chain.stationary()) {
            assert_abs_diff_eq!(*occ, *pi, epsilon = 0.005);
        }
    }
}

#[test]
fn battery_less_estimate_matches_single_letter_value() {
    for (px, pz) in [(0.5, 0.5), (0.3, 0.7), (0.8, 0.2)] {
        let closed = no_battery_leakage_closed_form(px, pz).unwrap();
        assert_abs_diff_eq!(closed, common::single_letter_leakage(px, pz), epsilon = 1e-12);
        let spec = SystemSpec::no_battery(px, pz).unwrap();
        let policy = PolicyParams::NoBattery.build().unwrap();
        let traj = sample_trajectory(&spec, &policy, 500_000, 9).unwrap();
        let est = estimate_leakage(&traj, &spec, &policy).unwrap();
        assert_abs_diff_eq!(est.ip, closed, epsilon = 0.005);
    }
}

#[test]
fn greedy_harvesting_waste_closed_form() {
    // stores harvest when empty, wastes it only when full and idle
    for pz in [0.2, 0.4, 0.6, 0.8] {
        let spec = SystemSpec::binary_eh(0.5, pz).unwrap();
        let policy = PolicyParams::BinaryEh { p01a: 0.0, p01b: 0.0, p10: 1.0 }.build().unwrap();
        assert_abs_diff_eq!(wasted_energy_exact(&spec, &policy).unwrap(), pz * pz / 2.0, epsilon = 1e-12);
    }
}

#[test]
fn waste_never_below_conservation_bound() {
    // E_w = E[z] + E[y] − E[x] in steady state, and y ≥ 0
    let mut rng = rng_from_seed(5);
    for _ in 0..40 {
        let (spec, params) = common::random_policy(&mut rng);
        let ew = wasted_energy_exact(&spec, &params.build().unwrap()).unwrap();
        assert!(ew >= spec.p_z * spec.max_harvest as f64 - spec.p_x - 1e-12, "{params}");
    }
}
