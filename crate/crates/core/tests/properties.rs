use hetnet_core::analytics::{Analytic, UserClass};
use hetnet_core::association::{
    association_probabilities, classify, ActiveOffloaded, AssociationClass, AssociationModel, NetworkConfig, Tier,
};
use hetnet_core::simulator::{
    associate_and_classify, beam_gain, sample_deployment, schedule_slot, zfbf_precoder, Estimate,
};
use hetnet_core::special_math::{
    compositions3, incomplete_beta, integer_partitions, laplace_derivative_scaled, laplace_interference, TierParams,
};
use hetnet_core::Error;
use nalgebra::{Complex, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tier() -> impl Strategy<Value = TierParams> {
    (1e-5f64..1e-2, 2.2f64..5.5, 1usize..6).prop_map(|(d, a, n)| TierParams::new(d, a, 1.0, n).unwrap())
}

fn network() -> impl Strategy<Value = NetworkConfig> {
    (
        1e-5f64..3e-4,
        3.0f64..4.8,
        2usize..10,
        1.5f64..12.0,
        2.0f64..30.0,
        1usize..6,
        0.0f64..20.0,
        1e-3f64..5e-2,
    )
        .prop_flat_map(|(l1, a1, n1, ratio, l2_factor, n2, bias_db, lu)| {
            (0..n1).prop_map(move |u| {
                NetworkConfig::new(
                    TierParams::new(l1, a1, ratio, n1).unwrap(),
                    TierParams::new(l1 * l2_factor, a1 + 0.2, 1.0, n2).unwrap(),
                    lu,
                    10f64.powf(bias_db / 10.0),
                    1e7,
                    u,
                )
            })
        })
}

proptest! {
    #[test]
    fn laplace_is_a_decreasing_probability(t in tier(), s in 1e-3f64..1e6, r in 0.1f64..300.0, k in 1.01f64..10.0) {
        let l = laplace_interference(s, r, &t).unwrap();
        prop_assert!((0.0..=1.0).contains(&l));
        // strictly positive wherever the exponent is representable
        if t.pathloss >= 2.5 && s <= 1e4 {
            prop_assert!(l > 0.0, "{}", l);
        }
        prop_assert!(laplace_interference(k * s, r, &t).unwrap() <= l);
        prop_assert!(laplace_interference(s, k * r, &t).unwrap() >= l);
    }

    #[test]
    fn scaled_derivatives_are_nonnegative(t in tier(), s in 1e-3f64..1e6, r in 0.1f64..300.0, m in 0usize..15) {
        prop_assert!(laplace_derivative_scaled(m, s, r, &t).unwrap() >= 0.0);
    }

    #[test]
    fn incomplete_beta_decreases(a in 0.2f64..4.0, b in 0.05f64..0.99, z in 0.01f64..0.98, dz in 0.001f64..0.01) {
        let hi = incomplete_beta(a, b, z).unwrap();
        let lo = incomplete_beta(a, b, (z + dz).min(0.999)).unwrap();
        prop_assert!(lo < hi);
    }

    #[test]
    fn partitions_have_the_right_weight(m in 0usize..16) {
        for p in integer_partitions(m).iter() {
            let w: usize = p.multiplicities().iter().enumerate().map(|(i, &c)| (i + 1) * c as usize).sum();
            prop_assert_eq!(w, m);
        }
    }

    #[test]
    fn compositions_sum(n in 0usize..30) {
        prop_assert!(compositions3(n).iter().all(|c| c.0 + c.1 + c.2 == n));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn association_probabilities_partition_users(cfg in network(), extra_db in 0.1f64..6.0) {
        let (a1, a2u, a2o) = association_probabilities(&cfg).unwrap();
        prop_assert!((a1 + a2u + a2o - 1.0).abs() < 1e-9);
        let more = cfg.with_bias(cfg.bias * 10f64.powf(extra_db / 10.0));
        let (b1, _, b2o) = association_probabilities(&more).unwrap();
        prop_assert!(b1 <= a1 + 1e-12 && b2o >= a2o - 1e-12);
        let m = AssociationModel::new(&cfg).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.stats().pr_in_selected));
    }

    #[test]
    fn pmfs_are_probability_vectors(cfg in network()) {
        let m = AssociationModel::new(&cfg).unwrap();
        for tier in [Tier::Macro, Tier::Pico] {
            let s: f64 = (0..10_000).map(|n| m.load_pmf(tier, n)).sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
        for v in [ActiveOffloaded::ServingMacro, ActiveOffloaded::NearestMacro] {
            let s: f64 = (0..10_000).map(|n| m.active_offloaded_pmf(v, n)).sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
        let mut prev = 0.0;
        for u in 0..cfg.macro_tier.antennas {
            let p = m.in_selection_probability(u);
            prop_assert!(p >= prev - 1e-12);
            prev = p;
        }
    }

    #[test]
    fn classification_follows_received_power(cfg in network(), x in 1.0f64..500.0, y in 1.0f64..500.0) {
        let p1 = cfg.macro_tier.power * x.powf(-cfg.macro_tier.pathloss);
        let p2 = cfg.pico_tier.power * y.powf(-cfg.pico_tier.pathloss);
        let class = classify(&cfg, x, y);
        match class {
            AssociationClass::Macro => prop_assert!(p1 >= cfg.bias * p2),
            AssociationClass::PicoUnoffloaded => prop_assert!(p2 > p1),
            AssociationClass::Offloaded => prop_assert!(p1 < cfg.bias * p2 && p2 <= p1),
        }
    }

    #[test]
    fn wilson_interval_brackets_estimate(n in 1usize..100_000, frac in 0.0f64..=1.0) {
        let k = ((n as f64) * frac).round() as usize;
        let e = Estimate::wilson(k, n);
        prop_assert!(0.0 <= e.lo && e.lo <= e.value && e.value <= e.hi && e.hi <= 1.0);
    }

    #[test]
    fn zero_forcing_nulls_every_interfered_user(n in 2usize..12, seed in any::<u64>(), frac in 0.0f64..1.0) {
        let u = ((n - 1) as f64 * frac) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<DVector<Complex<f64>>> = (0..=u)
            .map(|_| {
                DVector::from_fn(n, |_, _| {
                    use rand_distr::{Distribution, StandardNormal};
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    Complex::new(re, im)
                })
            })
            .collect();
        match zfbf_precoder(&rows) {
            Ok(f) => {
                for g in &rows[1..] {
                    prop_assert!(beam_gain(g, &f) <= 1e-10 * g.norm_squared());
                }
            }
            Err(e) => prop_assert!(matches!(e, Error::RankDeficient)),
        }
    }

    #[test]
    fn dof_out_of_range_names_in_dof(cfg in network()) {
        let bad = cfg.with_in_dof(cfg.macro_tier.antennas);
        match bad.validate() {
            Err(Error::Config { field, .. }) => prop_assert_eq!(field, "in_dof"),
            other => prop_assert!(false, "{:?}", other),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn coverage_curves_are_monotone_and_assembled(cfg in network(), tau in 1e4f64..1e6) {
        let a = Analytic::new(&cfg).unwrap();
        let u = cfg.in_dof;
        let lo = a.rate_coverage_mla(tau, u).unwrap();
        let hi = a.rate_coverage_mla(3.0 * tau, u).unwrap();
        prop_assert!(hi.total <= lo.total + 1e-12);
        let weights: f64 = lo.weights.values().sum();
        prop_assert!((weights - 1.0).abs() < 1e-9);
        let sum: f64 = UserClass::ALL.iter().map(|k| lo.weights[k] * lo.per_class[k]).sum();
        prop_assert!((sum - lo.total).abs() < 1e-9);
        for class in UserClass::ALL {
            let s1 = a.conditional_coverage(class, 0.5, u).unwrap();
            let s2 = a.conditional_coverage(class, 2.0, u).unwrap();
            prop_assert!((0.0..=1.0).contains(&s1) && s2 <= s1 + 1e-12);
        }
    }

    #[test]
    fn schedules_respect_dof_budget(seed in any::<u64>(), bias_db in 0.0f64..15.0, max_dof in 0usize..8) {
        let cfg = NetworkConfig::new(
            TierParams::new(1e-4, 4.0, 10.0, 8).unwrap(),
            TierParams::new(5e-4, 4.0, 1.0, 4).unwrap(),
            0.01,
            10f64.powf(bias_db / 10.0),
            1e7,
            0,
        );
        let dep = sample_deployment(&cfg, 400.0, seed).unwrap();
        let Ok(real) = associate_and_classify(&dep, &cfg) else { return Ok(()) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = schedule_slot(&real, max_dof, &mut rng);
        for (active, targets) in s.active_offloaded.iter().zip(&s.in_targets) {
            prop_assert_eq!(targets.len(), max_dof.min(active.len()));
        }
        let loads: u32 = real.macro_loads.iter().chain(&real.pico_loads).sum();
        prop_assert_eq!(loads as usize, dep.user_points.len());
    }
}
