mod common;

use common::{dense_pico, mixed_pathloss};
use hetnet_core::optimizer::{
    bias_sweep, optimal_abs_fraction, optimal_in_dof, verify_asymptotic_optimum, Engine, EngineKind, McSettings,
    SweepScheme,
};
use hetnet_core::simulator::{Fidelity, SimOptions, TrialSet};

fn small_taus() -> Vec<f64> {
    (0..7).map(|i| 1e4 * 10f64.powf(-0.5 * i as f64)).collect()
}

#[test]
fn small_threshold_optima_on_dense_pico() {
    for (bias_db, want) in [(4.6, 3usize), (2.5, 2)] {
        let cfg = dense_pico(bias_db);
        let r = optimal_in_dof(1e2, &cfg, Engine::AnalyticMla).unwrap();
        assert_eq!(r.argmax_index(), want, "B = {bias_db} dB: {:?}", r.trace);
        assert_eq!(r.engine, EngineKind::AnalyticMla);
        assert_eq!(r.trace.len(), cfg.macro_tier.antennas);
        let check = verify_asymptotic_optimum(&cfg, &small_taus()).unwrap();
        assert!(check.holds, "B = {bias_db} dB: {check:?}");
        assert_eq!(check.limit, Some(want));
        assert_eq!(check.expected, vec![2, 3]);
    }
}

#[test]
fn optimum_grows_with_bias_on_dense_pico() {
    for tau in [1e2, 1e4, 1e5] {
        let mut prev = 0;
        for i in 0..=20 {
            let cfg = dense_pico(0.5 * i as f64);
            let u = optimal_in_dof(tau, &cfg, Engine::AnalyticMla).unwrap().argmax_index();
            assert!(u >= prev, "τ = {tau}, B = {} dB: {u} < {prev}", 0.5 * i as f64);
            prev = u;
        }
    }
}

#[test]
fn no_offloading_means_no_nulling() {
    let cfg = dense_pico(0.0);
    for tau in [1e2, 1e5, 1e6] {
        for engine in [Engine::AnalyticMla, Engine::AnalyticExact] {
            let r = optimal_in_dof(tau, &cfg, engine).unwrap();
            assert_eq!(r.argmax_index(), 0);
        }
    }
}

#[test]
fn exact_engine_agrees_with_mla_at_small_threshold_anchor() {
    let cfg = dense_pico(4.6);
    let r = optimal_in_dof(1e2, &cfg, Engine::AnalyticExact).unwrap();
    assert_eq!(r.argmax_index(), 3);
    let best = r.trace.iter().map(|p| p.objective).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(r.objective, best);
}

#[test]
fn monte_carlo_trace_is_reproducible() {
    let cfg = dense_pico(4.6);
    let mc = McSettings {
        trials: 3000,
        seed: 12,
        fidelity: Fidelity::Fast,
    };
    let a = optimal_in_dof(1e6, &cfg, Engine::MonteCarlo(mc)).unwrap();
    let b = optimal_in_dof(1e6, &cfg, Engine::MonteCarlo(mc)).unwrap();
    assert_eq!(a, b);
    let best = a.trace.iter().map(|p| p.objective).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(a.objective, best);
}

#[test]
fn abs_fraction_lies_inside_the_unit_interval() {
    let cfg = mixed_pathloss(18, 16, 9.0);
    let opts = SimOptions {
        fidelity: Fidelity::Fast,
        window_radius: None,
    };
    let set = TrialSet::run(&cfg, opts, 3000, 5).unwrap();
    let r = optimal_abs_fraction(5e5, &set, 18).unwrap();
    assert!(r.argmax > 0.0 && r.argmax < 1.0);
    let best = r.trace.iter().map(|p| p.objective).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(r.objective, best);
    assert_eq!(r, optimal_abs_fraction(5e5, &set, 18).unwrap());
}

#[test]
fn sweep_rows_cover_grid_and_schemes() {
    let cfg = mixed_pathloss(8, 6, 0.0);
    let mc = McSettings {
        trials: 1500,
        seed: 3,
        fidelity: Fidelity::Fast,
    };
    let grid = [0.0, 6.0, 12.0];
    let sweep = bias_sweep(5e5, &cfg, &grid, mc, None).unwrap();
    assert_eq!(sweep.rows.len(), grid.len() * SweepScheme::ALL.len());
    for scheme in SweepScheme::ALL {
        let rows: Vec<_> = sweep.rows.iter().filter(|r| r.scheme == scheme).collect();
        assert_eq!(rows.len(), grid.len());
        let best = sweep.best_row(scheme);
        assert!(rows.iter().all(|r| r.total.value <= best.total.value));
    }
    assert!(bias_sweep(5e5, &cfg, &[], mc, None).is_err());
    assert!(bias_sweep(5e5, &cfg, &[-3.0], mc, None).is_err());
}
