mod common;

use common::{equal_pathloss, nearest_to_origin};
use hetnet_core::association::{classify, AssociationClass, NetworkConfig, Tier};
use hetnet_core::simulator::{
    associate_and_classify, beam_gain, default_window_radius, estimate_rate_coverage, kolmogorov_smirnov,
    sample_deployment, schedule_slot, zfbf_precoder, Fidelity, SchemeSpec, SchemeVariant, SimOptions, TrialSet,
};
use hetnet_core::Error;
use nalgebra::{Complex, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Gamma};

fn cn(rng: &mut ChaCha8Rng, n: usize) -> DVector<Complex<f64>> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    DVector::from_fn(n, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex::new(s * re, s * im)
    })
}

fn run(cfg: &NetworkConfig, fidelity: Fidelity, trials: usize, seed: u64) -> TrialSet {
    let opts = SimOptions {
        fidelity,
        window_radius: None,
    };
    TrialSet::run(cfg, opts, trials, seed).unwrap()
}

#[test]
fn zero_forcing_gain_is_gamma_and_nulls_exactly() {
    let (n, u) = (8, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut gains = Vec::with_capacity(20_000);
    for _ in 0..20_000 {
        let rows: Vec<_> = (0..=u).map(|_| cn(&mut rng, n)).collect();
        let f = zfbf_precoder(&rows).unwrap();
        assert!((f.norm() - 1.0).abs() < 1e-12);
        for g in &rows[1..] {
            assert!(beam_gain(g, &f) <= 1e-10 * g.norm_squared());
        }
        gains.push(beam_gain(&rows[0], &f));
    }
    let gamma = Gamma::new((n - u) as f64, 1.0).unwrap();
    let (_, p) = kolmogorov_smirnov(&gains, |x| gamma.cdf(x));
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn zero_forcing_rejects_dependent_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = cn(&mut rng, 4);
    let g = cn(&mut rng, 4);
    let twin = &g * Complex::new(2.0, -1.0);
    assert!(matches!(zfbf_precoder(&[h.clone(), g, twin]), Err(Error::RankDeficient)));
    let too_many: Vec<_> = (0..5).map(|_| cn(&mut rng, 4)).collect();
    assert!(zfbf_precoder(&too_many).is_err());
}

#[test]
fn deployment_invariants() {
    let cfg = equal_pathloss(5.0);
    let radius = 600.0;
    let mut macro_count = 0usize;
    let reps = 400;
    for seed in 0..reps {
        let dep = sample_deployment(&cfg, radius, seed).unwrap();
        assert_eq!(dep.user_points[0], [0.0, 0.0]);
        for p in dep.macro_points.iter().chain(&dep.pico_points).chain(&dep.user_points) {
            assert!(p[0].hypot(p[1]) <= radius);
        }
        macro_count += dep.macro_points.len();
    }
    let mean = cfg.macro_tier.density * std::f64::consts::PI * radius * radius;
    let sigma = (mean / reps as f64).sqrt();
    let got = macro_count as f64 / reps as f64;
    assert!((got - mean).abs() < 4.0 * sigma, "{got} vs {mean}");
    assert_eq!(sample_deployment(&cfg, radius, 9).unwrap(), sample_deployment(&cfg, radius, 9).unwrap());
}

#[test]
fn association_realization_matches_definitions() {
    let cfg = equal_pathloss(10.0);
    let dep = sample_deployment(&cfg, 500.0, 77).unwrap();
    let real = associate_and_classify(&dep, &cfg).unwrap();
    let mut macro_loads = vec![0u32; dep.macro_points.len()];
    let mut pico_loads = vec![0u32; dep.pico_points.len()];
    for (i, q) in dep.user_points.iter().enumerate() {
        let shift = |pts: &[[f64; 2]]| pts.iter().map(|p| [p[0] - q[0], p[1] - q[1]]).collect::<Vec<_>>();
        let (m, x) = nearest_to_origin(&shift(&dep.macro_points));
        let (p, y) = nearest_to_origin(&shift(&dep.pico_points));
        let class = classify(&cfg, x, y);
        assert_eq!(real.class[i], class);
        assert_eq!(real.nearest_macro[i], m);
        match class {
            AssociationClass::Macro => {
                assert_eq!(real.serving[i], (Tier::Macro, m));
                macro_loads[m] += 1;
            }
            _ => {
                assert_eq!(real.serving[i], (Tier::Pico, p));
                pico_loads[p] += 1;
            }
        }
        if class == AssociationClass::Offloaded {
            assert!(real.offloaded_by_macro[m].contains(&i));
        }
    }
    assert_eq!(real.macro_loads, macro_loads);
    assert_eq!(real.pico_loads, pico_loads);
}

#[test]
fn slot_schedule_respects_budget_and_typical_user() {
    let cfg = equal_pathloss(10.0);
    let dep = sample_deployment(&cfg, 500.0, 5).unwrap();
    let real = associate_and_classify(&dep, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for max_dof in 0..8 {
        let s = schedule_slot(&real, max_dof, &mut rng);
        let (tier, k) = real.serving[0];
        match tier {
            Tier::Macro => assert_eq!(s.macro_scheduled[k], Some(0)),
            Tier::Pico => assert_eq!(s.pico_scheduled[k], Some(0)),
        }
        for (ell, active) in s.active_offloaded.iter().enumerate() {
            let targets = &s.in_targets[ell];
            assert_eq!(targets.len(), max_dof.min(active.len()));
            let mut sorted = targets.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), targets.len());
            assert!(targets.iter().all(|t| active.contains(t)));
            assert!(active.iter().all(|&a| real.nearest_macro[a] == ell));
        }
        for (k, sched) in s.pico_scheduled.iter().enumerate() {
            assert_eq!(sched.is_some(), real.pico_loads[k] > 0);
        }
    }
}

#[test]
fn in_targets_are_uniform() {
    // one macro with six offloaded users, each on its own pico
    let cfg = equal_pathloss(10.0);
    let mut dep = sample_deployment(&cfg, 300.0, 0).unwrap();
    dep.macro_points = vec![[0.0, 0.0], [5000.0, 0.0]];
    dep.pico_points = (0..6)
        .map(|i| {
            let a = i as f64 * std::f64::consts::PI / 3.0;
            [180.0 * a.cos(), 180.0 * a.sin()]
        })
        .collect();
    // 100 m from the macro and 80 m from the pico: offloaded at 10 dB bias
    dep.user_points = dep.pico_points.iter().map(|p| [p[0] / 1.8, p[1] / 1.8]).collect();
    let real = associate_and_classify(&dep, &cfg).unwrap();
    assert!(real.class.iter().all(|&c| c == AssociationClass::Offloaded));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let reps = 60_000;
    let mut hits = [0usize; 6];
    for _ in 0..reps {
        let s = schedule_slot(&real, 2, &mut rng);
        for &t in &s.in_targets[0] {
            hits[t] += 1;
        }
    }
    let p = 2.0 / 6.0;
    let sigma = (p * (1.0 - p) / reps as f64).sqrt();
    for h in hits {
        assert!((h as f64 / reps as f64 - p).abs() < 4.0 * sigma);
    }
}

#[test]
fn empty_tier_and_small_window_are_errors() {
    let cfg = equal_pathloss(5.0);
    let mut dep = sample_deployment(&cfg, 300.0, 1).unwrap();
    dep.pico_points.clear();
    assert!(matches!(associate_and_classify(&dep, &cfg), Err(Error::EmptyTier(_))));
    let opts = SimOptions {
        fidelity: Fidelity::Fast,
        window_radius: Some(250.0),
    };
    let small = TrialSet::run(&cfg, opts, 200, 1);
    assert!(matches!(small, Err(Error::InsufficientWindow(_))), "{small:?}");
    assert!(default_window_radius(&cfg) >= 2000.0);
}

#[test]
fn coverage_is_one_at_zero_and_monotone() {
    let cfg = equal_pathloss(5.0);
    let set = run(&cfg, Fidelity::Fast, 3000, 17);
    let taus: Vec<f64> = (0..40).map(|i| if i == 0 { 0.0 } else { 1e4 * 1.3f64.powi(i) }).collect();
    for variant in [SchemeVariant::In(0), SchemeVariant::In(4), SchemeVariant::Abs(0.3)] {
        let rep = set.coverage(variant, &taus).unwrap();
        assert_eq!(rep.total[0].value, 1.0);
        assert!(rep.total.windows(2).all(|w| w[1].value <= w[0].value));
        for curve in rep.per_class.values() {
            assert!(curve.windows(2).all(|w| w[1].value <= w[0].value));
        }
    }
}

#[test]
fn reports_are_reproducible() {
    let cfg = equal_pathloss(10.0);
    let taus = [1e5, 1e6];
    for fidelity in [Fidelity::Fast, Fidelity::Full] {
        let scheme = SchemeSpec {
            variant: SchemeVariant::In(4),
            fidelity,
        };
        let a = estimate_rate_coverage(&cfg, scheme, &taus, 1500, 8).unwrap();
        let b = estimate_rate_coverage(&cfg, scheme, &taus, 1500, 8).unwrap();
        assert_eq!(a, b);
        let c = estimate_rate_coverage(&cfg, scheme, &taus, 1500, 9).unwrap();
        assert_ne!(a.total, c.total);
    }
}

#[test]
fn nulled_and_unselected_macro_gains() {
    let cfg = equal_pathloss(10.0);
    let set = run(&cfg, Fidelity::Full, 15_000, 23);
    let u = 2;
    let mut free = Vec::new();
    for r in set.records.iter().filter(|r| r.class == AssociationClass::Offloaded) {
        for (v, &g) in r.dominant_gain.iter().enumerate() {
            if (r.rank as usize) < v {
                assert!(g <= 1e-10, "nulled gain {g}");
            }
        }
        if (r.rank as usize) >= u {
            free.push(r.dominant_gain[u]);
        }
    }
    assert!(free.len() > 200);
    let (_, p) = kolmogorov_smirnov(&free, |x| 1.0 - (-x).exp());
    assert!(p > 0.01, "p = {p} over {} samples", free.len());
}

#[test]
fn full_and_fast_fidelity_agree() {
    let cfg = equal_pathloss(10.0);
    let taus = [1e5, 3e5, 1e6, 3e6];
    let fast = run(&cfg, Fidelity::Fast, 20_000, 31).coverage(SchemeVariant::In(4), &taus).unwrap();
    let full = run(&cfg, Fidelity::Full, 20_000, 32).coverage(SchemeVariant::In(4), &taus).unwrap();
    for (a, b) in fast.total.iter().zip(&full.total) {
        let combined = 1.96 * (a.std_error().powi(2) + b.std_error().powi(2)).sqrt();
        assert!((a.value - b.value).abs() <= 2.0 * combined, "{} vs {}", a.value, b.value);
    }
}

/// Full deployments over a disc, associated and scheduled with the public
/// building blocks, give the same typical-user statistics as the trial
/// engine's local user sampling.
#[test]
fn local_sampling_matches_full_deployments() {
    let cfg = equal_pathloss(10.0);
    let reps = 1500;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut macro_loads, mut active) = (Vec::new(), Vec::new());
    for seed in 0..reps {
        let dep = sample_deployment(&cfg, 700.0, 10_000 + seed).unwrap();
        let real = associate_and_classify(&dep, &cfg).unwrap();
        let s = schedule_slot(&real, cfg.in_dof, &mut rng);
        let (tier, k) = real.serving[0];
        match real.class[0] {
            AssociationClass::Macro => macro_loads.push(real.macro_loads[k] as f64),
            AssociationClass::Offloaded => {
                assert_eq!(tier, Tier::Pico);
                active.push(s.active_offloaded[real.nearest_macro[0]].len() as f64);
            }
            AssociationClass::PicoUnoffloaded => {}
        }
    }
    let set = run(&cfg, Fidelity::Fast, 6000, 41);
    let pick = |class: AssociationClass, f: fn(&hetnet_core::simulator::TrialRecord) -> f64| -> Vec<f64> {
        set.records.iter().filter(|r| r.class == class).map(f).collect()
    };
    let engine_loads = pick(AssociationClass::Macro, |r| r.load as f64);
    let engine_active = pick(AssociationClass::Offloaded, |r| r.active as f64);
    let close = |a: &[f64], b: &[f64]| {
        let stats = |v: &[f64]| {
            let n = v.len() as f64;
            let m = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
            (m, var / n)
        };
        let ((ma, va), (mb, vb)) = (stats(a), stats(b));
        assert!((ma - mb).abs() <= 4.0 * (va + vb).sqrt(), "{ma} vs {mb}");
    };
    close(&macro_loads, &engine_loads);
    close(&active, &engine_active);
}

#[test]
fn dump_has_documented_header() {
    let cfg = equal_pathloss(5.0);
    let set = run(&cfg, Fidelity::Fast, 50, 2);
    let mut buf = Vec::new();
    set.write_dump(SchemeVariant::In(4), &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("trial,class,load,sir,rate"));
    assert_eq!(lines.count(), 50);
}
