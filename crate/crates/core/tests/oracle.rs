use std::time::Instant;

use otrsens::datagen::sign_world::{binary_randomized_world, build_discrete_oracle, threshold_policies, Corruption};
use otrsens::harness::oracle::{run_oracle_check, single_corruptions};
use otrsens::harness::RunConfig;
use otrsens::model::LinearPolicy;
use otrsens::rng::keyed;
use otrsens::value::{ipw_value, mr_value, mr_value_known_fz, psi_mr};

#[test]
fn identification_is_exact_and_fast() {
    let world = build_discrete_oracle();
    let start = Instant::now();
    for p in threshold_policies() {
        let w = world.expected_ipw(&p, &world.params, Corruption::NONE).unwrap();
        let v = world.complier_value(&p).unwrap();
        assert!((w - v).abs() < 1e-9, "{w} vs {v}");
    }
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn enumerated_mr_targets_survive_single_corruptions() {
    let world = build_discrete_oracle();
    let blip = world.complier_blip();
    for (name, c) in single_corruptions() {
        for p in threshold_policies() {
            let v = world.expected_mr(&p, &world.params, c).unwrap();
            assert!((v - world.complier_value(&p).unwrap()).abs() < 1e-9, "{name}");
        }
        assert!((world.expected_psi(&world.params, c).unwrap() - blip).abs() < 1e-9, "{name}");
    }
}

#[test]
fn enumerated_ipw_breaks_without_its_nuisances() {
    let world = build_discrete_oracle();
    let p = &threshold_policies()[2];
    let truth = world.complier_value(p).unwrap();
    for c in [Corruption { fz: true, ..Corruption::NONE }, Corruption { fa: true, ..Corruption::NONE }] {
        assert!((world.expected_ipw(p, &world.params, c).unwrap() - truth).abs() > 1e-3);
    }
}

#[test]
fn harness_coverage_check_passes_at_default_seed() {
    let cfg = RunConfig::from_json(r#"{"oracle": {"n": 4000, "seeds": 20, "z_crit": 3.0}}"#).unwrap();
    let r = run_oracle_check(&cfg).unwrap();
    for (name, k) in r.passes() {
        assert!(k >= 19, "{name}: {k}/20");
    }
    assert!(r.all_pass());
}

/// Standardized errors under every single corruption look standard normal.
#[test]
fn standardized_errors_are_calibrated() {
    let world = build_discrete_oracle();
    let policies = threshold_policies();
    let truths: Vec<f64> = policies.iter().map(|p| world.complier_value(p).unwrap()).collect();
    let blip = world.complier_blip();
    for (name, c) in single_corruptions() {
        let mut z = vec![];
        for s in 0..200 {
            let (ds, _) = world.sample(4000, &mut keyed(77, s, 0)).unwrap();
            let t = world.table(&ds, &world.params, c).unwrap();
            for (p, truth) in policies.iter().zip(&truths) {
                let e = mr_value(&ds, p, &t, &world.params).unwrap().estimate;
                z.push((e.estimate - truth) / e.se);
            }
            let e = psi_mr(&ds, &t, &world.params).unwrap().estimate;
            z.push((e.estimate - blip) / e.se);
        }
        let n = z.len() as f64;
        let m = z.iter().sum::<f64>() / n;
        let sd = (z.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
        let miss = z.iter().filter(|v| v.abs() > 3.0).count() as f64 / n;
        assert!(m.abs() < 0.1 && (0.85..1.15).contains(&sd) && miss < 0.01, "{name}: mean {m}, sd {sd}, miss {miss}");
    }
}

#[test]
fn psi_matches_enumeration_at_large_n() {
    let world = build_discrete_oracle();
    let (ds, _) = world.sample(100_000, &mut keyed(5, 0, 0)).unwrap();
    let t = world.table(&ds, &world.params, Corruption::NONE).unwrap();
    let e = psi_mr(&ds, &t, &world.params).unwrap();
    assert!((e.estimate.estimate - world.complier_blip()).abs() < 1e-2, "{:?}", e.estimate);
    let c: f64 = e.contributions.iter().sum::<f64>() / e.contributions.len() as f64;
    assert!(c.abs() < 1e-12);
}

#[test]
fn known_propensity_estimator_on_binary_world() {
    let world = binary_randomized_world([0.5, 0.5], 0.3, 0.5).unwrap();
    let policies = [LinearPolicy::new(0.0, vec![1.0, 0.0]), LinearPolicy::new(0.1, vec![-0.5, 1.0]), LinearPolicy::new(1.0, vec![0.0, 0.0])];
    let (ds, _) = world.sample(20_000, &mut keyed(12, 0, 0)).unwrap();
    let t = world.table(&ds, &world.params, Corruption::NONE).unwrap();
    for p in &policies {
        let truth = world.complier_value(p).unwrap();
        let e = mr_value_known_fz(&ds, p, &t, &world.params, 0.5).unwrap();
        assert!((e.estimate.estimate - truth).abs() <= 3.0 * e.estimate.se, "{:?} vs {truth}", e.estimate);
        let c: f64 = e.contributions.iter().sum::<f64>() / e.contributions.len() as f64;
        assert!(c.abs() < 1e-12);
    }
}

#[test]
fn mr_is_no_noisier_than_ipw_with_exact_nuisances() {
    let world = build_discrete_oracle();
    let mut wins = 0;
    let mut total = 0;
    for s in 0..25 {
        let (ds, _) = world.sample(2000, &mut keyed(9, s, 0)).unwrap();
        let t = world.table(&ds, &world.params, Corruption::NONE).unwrap();
        for p in threshold_policies() {
            let m = mr_value(&ds, &p, &t, &world.params).unwrap().estimate.se;
            let i = ipw_value(&ds, &p, &t, &world.params).unwrap().estimate.se;
            wins += (m <= i) as usize;
            total += 1;
        }
    }
    assert!(wins as f64 >= 0.9 * total as f64, "{wins}/{total}");
}
