//! One line per acceptance criterion. Criteria that reproduce published
//! simulation numbers are reported but not asserted; the structural ones are.

use std::fs;
use std::io::Write;
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use otrsens::datagen::sign_world::{build_discrete_oracle, threshold_policies, Corruption};
use otrsens::datagen::{sample_bridge, RejectionConfig, RejectionSampler, TiltedNormal};
use otrsens::harness::{run_oracle_check, run_scenario, run_sweep, RunConfig, ScenarioResult};
use otrsens::learner::HingeObjective;
use otrsens::model::Method;
use otrsens::rng::keyed;
use otrsens::sensitivity::{gamma_mc, solve_alpha0, NormalOutcome, OutcomeLaw, SensitivityParams};
use otrsens::stats::expit;
use otrsens::value::{mr_value, psi_mr};

const RATE_TOL: f64 = 0.04;
const VALUE_TOL: f64 = 0.05;
const CASE2_MR_TOL: f64 = 0.06;
const CASE2_IPW_BIAS: f64 = 0.25;
const CASE3_MR_TOL: f64 = 0.10;
const CASE3_IPW_FLOOR: f64 = 2.2;
const IVT_RATE_TOL: f64 = 0.03;
const IVT_VALUE_TOL: f64 = 0.05;
const COLLAPSE_RATE: f64 = 0.60;
const IDENT_TOL: f64 = 1e-9;
const GAMMA_TOL: f64 = 0.01;
const ALPHA0_TOL: f64 = 1e-8;
const KS_TOL: f64 = 0.002;
const CHI2_P: f64 = 0.001;
const CONVEX_TOL: f64 = 1e-10;
const EIF_TOL: f64 = 1e-12;

struct Report {
    lines: Vec<String>,
    asserted_failures: Vec<usize>,
}

impl Report {
    fn record(&mut self, k: usize, pass: bool, asserted: bool, detail: String) {
        let line = format!("criterion {k}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
        // Bypasses the test harness's output capture.
        let _ = writeln!(std::io::stdout(), "{line}");
        self.lines.push(line);
        if asserted && !pass {
            self.asserted_failures.push(k);
        }
    }
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn scenario(preset: &str, methods: &str) -> ScenarioResult {
    let cfg = RunConfig::from_json(&format!(
        r#"{{"replicates": 500, "n": 500, "seed": 1, "scenario": {{"preset": "{preset}", "methods": {methods}}}}}"#
    ))
    .unwrap();
    let r = run_scenario(&cfg).unwrap();
    assert!(r.status.is_valid(), "{preset}: {} failures", r.status.failures.len());
    r
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn normal_pdf(y: f64, m: f64, s: f64) -> f64 {
    (-(y - m) * (y - m) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
}

fn identification() -> (bool, String) {
    let world = build_discrete_oracle();
    let start = Instant::now();
    let mut gap: f64 = 0.0;
    for p in threshold_policies() {
        let w = world.expected_ipw(&p, &world.params, Corruption::NONE).unwrap();
        gap = gap.max((w - world.complier_value(&p).unwrap()).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    (gap < IDENT_TOL && secs < 1.0, format!("max gap {gap:.2e}, {secs:.4} s"))
}

fn micro_oracles() -> (bool, String) {
    let mut rng = keyed(2024, 0, 0);
    let mut gamma_gap: f64 = 0.0;
    for (ay, m, s) in [(0.5, 1.0, 0.5), (-1.0, 0.3, 1.2), (2.0, -0.5, 0.8)] {
        let p = SensitivityParams::y_only(ay, ay);
        let g = gamma_mc(&p, 1, 1, &[], &NormalOutcome { mean: m, sd: s }, 5000, &mut rng).unwrap();
        let exact = simpson(|y| expit(ay * y) * normal_pdf(y, m, s), m - 12.0 * s, m + 12.0 * s, 20_000);
        gamma_gap = gamma_gap.max((g - exact).abs());
    }

    let mut residual: f64 = 0.0;
    let ys: Vec<f64> = (0..200).map(|k| -1.0 + 0.013 * k as f64).collect();
    let laws = [OutcomeLaw::Sign { p_plus: 0.35 }, OutcomeLaw::Normal { mean: 0.8, sd: 0.7 }, OutcomeLaw::Empirical(ys.clone())];
    for law in &laws {
        for (p4, pc, ay) in [(0.3, 0.5, 0.5), (0.2, 0.9, -1.5), (0.45, 0.5, 2.0)] {
            let a0 = solve_alpha0(p4, pc, law, ay).unwrap();
            let ew = match law {
                OutcomeLaw::Sign { p_plus } => p_plus * expit(a0 + ay) + (1.0 - p_plus) * expit(a0 - ay),
                OutcomeLaw::Normal { mean, sd } => simpson(|y| expit(a0 + ay * y) * normal_pdf(y, *mean, *sd), mean - 12.0 * sd, mean + 12.0 * sd, 20_000),
                OutcomeLaw::Empirical(v) => v.iter().map(|y| expit(a0 + ay * y)).sum::<f64>() / v.len() as f64,
            };
            residual = residual.max((ew - p4 / pc).abs());
        }
    }

    let phi: f64 = 0.5;
    let n = 1_000_000;
    let mut draws: Vec<f64> = (0..n).map(|_| sample_bridge(phi, &mut rng).unwrap()).collect();
    draws.sort_by(f64::total_cmp);
    let pdf = |u: f64| (phi * std::f64::consts::PI).sin() / (2.0 * std::f64::consts::PI * ((phi * u).cosh() + (phi * std::f64::consts::PI).cos()));
    let knots: Vec<f64> = (0..=4000).map(|k| -80.0 + 0.04 * k as f64).collect();
    let mut cdf_at = vec![0.0; knots.len()];
    for k in 1..knots.len() {
        cdf_at[k] = cdf_at[k - 1] + simpson(pdf, knots[k - 1], knots[k], 8);
    }
    let cdf = |u: f64| -> f64 {
        if u <= knots[0] {
            return 0.0;
        }
        let k = (((u - knots[0]) / 0.04) as usize).min(knots.len() - 2);
        cdf_at[k] + simpson(pdf, knots[k], u, 8)
    };
    let mut ks: f64 = 0.0;
    for (i, x) in draws.iter().enumerate().step_by(97) {
        let f = cdf(*x);
        ks = ks.max((f - i as f64 / n as f64).abs()).max(((i + 1) as f64 / n as f64 - f).abs());
    }

    let t = TiltedNormal::new(1.2, 0.9, -0.3, 0.8).unwrap();
    let sampler = RejectionSampler::new(t, &RejectionConfig::default()).unwrap();
    let m = 20_000;
    let ys: Vec<f64> = (0..m).map(|_| sampler.draw(&mut rng).unwrap()).collect();
    let dens = |y: f64| expit(-0.3 + 0.8 * y) * normal_pdf(y, 1.2, 0.9);
    let total = simpson(dens, -12.0, 14.0, 40_000);
    let edges: Vec<f64> = (0..=24).map(|k| -0.8 + 0.16 * k as f64).collect();
    let mut probs = vec![simpson(dens, -12.0, edges[0], 20_000) / total];
    for w in edges.windows(2) {
        probs.push(simpson(dens, w[0], w[1], 200) / total);
    }
    probs.push(1.0 - probs.iter().sum::<f64>());
    let mut counts = vec![0.0; probs.len()];
    for y in &ys {
        counts[edges.iter().position(|e| y < e).unwrap_or(edges.len())] += 1.0;
    }
    let stat: f64 = counts.iter().zip(&probs).map(|(o, p)| (o - p * m as f64).powi(2) / (p * m as f64)).sum();
    let pval = 1.0 - ChiSquared::new((probs.len() - 1) as f64).unwrap().cdf(stat);

    let mut violations = 0;
    let mut r2 = keyed(2024, 1, 0);
    let xs: Vec<Vec<f64>> = (0..200).map(|_| vec![r2.random_range(-1.0..1.0), r2.random_range(-1.0..1.0)]).collect();
    let w: Vec<f64> = (0..200).map(|_| r2.random_range(-2.0..3.0)).collect();
    let labels: Vec<i8> = (0..200).map(|_| if r2.random::<bool>() { 1 } else { -1 }).collect();
    let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
    let obj = HingeObjective::new(&refs, &w, &labels, 0.05).unwrap();
    for _ in 0..10_000 {
        let a: Vec<f64> = (0..obj.dim()).map(|_| r2.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..obj.dim()).map(|_| r2.random_range(-5.0..5.0)).collect();
        let s: f64 = r2.random();
        let mid: Vec<f64> = a.iter().zip(&b).map(|(p, q)| s * p + (1.0 - s) * q).collect();
        if obj.value(&mid) > s * obj.value(&a) + (1.0 - s) * obj.value(&b) + CONVEX_TOL {
            violations += 1;
        }
    }

    let pass = gamma_gap < GAMMA_TOL && residual < ALPHA0_TOL && ks < KS_TOL && pval > CHI2_P && violations == 0;
    (pass, format!("gamma gap {gamma_gap:.4}, alpha0 residual {residual:.1e}, bridge KS {ks:.5}, rejection chi2 p {pval:.3}, convexity violations {violations}"))
}

fn determinism() -> (bool, String) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(
        &cfg,
        r#"{"replicates": 6, "n": 400, "seed": 11, "nuisance": {"n_mc": 500},
            "sweep": {"grid_minus": [-0.5, 0.5], "grid_plus": [-0.5, 0.5]}}"#,
    )
    .unwrap();
    let mut ok = true;
    for cmd in ["scenario", "sweep"] {
        let outs: Vec<_> = ["a", "b"]
            .iter()
            .map(|tag| {
                let out = dir.path().join(format!("{cmd}_{tag}"));
                let st = Command::new(env!("CARGO_BIN_EXE_otrsens"))
                    .args([cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
                    .output()
                    .unwrap();
                assert!(st.status.success());
                out
            })
            .collect();
        for e in fs::read_dir(&outs[0]).unwrap() {
            let name = e.unwrap().file_name();
            ok &= fs::read(outs[0].join(&name)).unwrap() == fs::read(outs[1].join(&name)).unwrap();
        }
    }
    (ok, "scenario and sweep outputs compared byte for byte".into())
}

#[test]
fn acceptance() {
    let mut rep = Report { lines: vec![], asserted_failures: vec![] };

    let (ok, d) = identification();
    rep.record(1, ok, true, d);

    let c1 = scenario("CASE1", r#"["OWL", "IVT", "IPW", "MR"]"#);
    let c2 = scenario("CASE2_W", r#"["IPW", "MR"]"#);
    let c3 = scenario("CASE3_W", r#"["IPW", "MR"]"#);
    let rate = |r: &ScenarioResult, m| r.rate(m).0;
    let checks = [
        ("case 1 OWL", rate(&c1, Method::Owl), 0.51),
        ("case 1 IVT", rate(&c1, Method::Ivt), 0.73),
        ("case 1 IPW", rate(&c1, Method::Ipw), 0.88),
        ("case 1 MR", rate(&c1, Method::Mr), 0.95),
        ("case 2 MR", rate(&c2, Method::Mr), 0.97),
        ("case 2 IPW", rate(&c2, Method::Ipw), 0.78),
        ("case 3 MR", rate(&c3, Method::Mr), 0.88),
    ];
    let ok = checks.iter().all(|(_, x, t)| within(*x, *t, RATE_TOL));
    let d: Vec<String> = checks.iter().map(|(n, x, t)| format!("{n} {x:.3} (target {t})")).collect();
    rep.record(2, ok, false, d.join(", "));

    let value = |r: &ScenarioResult, m| r.value(m).0;
    let checks = [
        ("case 1 IPW", value(&c1, Method::Ipw), 1.64),
        ("case 1 MR", value(&c1, Method::Mr), 1.67),
        ("case 2 MR", value(&c2, Method::Mr), 1.68),
        ("truth", c1.optimal_value, 1.68),
    ];
    let ok = checks.iter().all(|(_, x, t)| within(*x, *t, VALUE_TOL));
    let d: Vec<String> = checks.iter().map(|(n, x, t)| format!("{n} {x:.3} (target {t})")).collect();
    rep.record(3, ok, false, d.join(", "));

    let v2 = scenario("CASE2_V", r#"["IPW"]"#);
    let v3 = scenario("CASE3_V", r#"["IPW"]"#);
    let (t2, t3) = (v2.scored_truth(), v3.scored_truth());
    let (i2, m2) = (v2.estimate(Method::Ipw).0, v2.estimate(Method::Mr).0);
    let (i3, m3) = (v3.estimate(Method::Ipw).0, v3.estimate(Method::Mr).0);
    let ok = within(m2, 1.48, CASE2_MR_TOL) && i2 - t2 >= CASE2_IPW_BIAS && within(m3, 1.60, CASE3_MR_TOL) && i3 >= CASE3_IPW_FLOOR;
    rep.record(
        4,
        ok,
        false,
        format!("case 2 truth {t2:.3}, MR {m2:.3}, IPW {i2:.3}; case 3 truth {t3:.3}, MR {m3:.3}, IPW {i3:.3} (needs >= {CASE3_IPW_FLOOR})"),
    );

    let sweep_cfg = RunConfig::from_json(r#"{"replicates": 20, "n": 500, "seed": 1}"#).unwrap();
    let sw = run_sweep(&sweep_cfg).unwrap();
    let ivt = sw.cells[0].get(Method::Ivt).unwrap();
    let region: Vec<f64> = sw.cells.iter().filter(|c| c.alpha_minus < 0.0 && c.alpha_plus > -0.5).map(|c| c.get(Method::Ipw).unwrap()[0]).collect();
    let region_rate = otrsens::stats::mean(&region);
    let (f_mr, f_ipw) = (sw.fraction_beating(Method::Mr, Method::Ivt), sw.fraction_beating(Method::Ipw, Method::Ivt));
    let ok = within(ivt[0], 0.6896, IVT_RATE_TOL) && within(ivt[2], 1.37, IVT_VALUE_TOL) && region_rate < COLLAPSE_RATE && f_mr > f_ipw;
    rep.record(
        5,
        ok,
        false,
        format!("IVT rate {:.3} value {:.3}; IPW mean rate in collapse region {region_rate:.3}; cells beating IVT: MR {f_mr:.2}, IPW {f_ipw:.2}", ivt[0], ivt[2]),
    );

    let oracle = run_oracle_check(&RunConfig::from_json(r#"{"oracle": {"n": 4000, "seeds": 20, "z_crit": 3.0}}"#).unwrap()).unwrap();
    let passes = oracle.passes();
    let ok = passes.iter().all(|(_, k)| *k >= 19);
    let d: Vec<String> = passes.iter().map(|(p, k)| format!("{p} {k}/20")).collect();
    rep.record(6, ok, true, d.join(", "));

    let (ok, d) = micro_oracles();
    rep.record(7, ok, true, d);

    let mut centering = [&c1, &c2, &c3, &v2, &v3].iter().map(|r| r.max_eif_centering()).fold(0.0, f64::max);
    let world = build_discrete_oracle();
    let (ds, _) = world.sample(4000, &mut keyed(1, 0, 0)).unwrap();
    let table = world.table(&ds, &world.params, Corruption::NONE).unwrap();
    for p in threshold_policies() {
        let c = mr_value(&ds, &p, &table, &world.params).unwrap().contributions;
        centering = centering.max((c.iter().sum::<f64>() / c.len() as f64).abs());
    }
    let c = psi_mr(&ds, &table, &world.params).unwrap().contributions;
    centering = centering.max((c.iter().sum::<f64>() / c.len() as f64).abs());
    rep.record(8, centering < EIF_TOL, true, format!("max |mean contribution| {centering:.2e}"));

    let (ok, d) = determinism();
    rep.record(9, ok, true, d);

    assert_eq!(rep.lines.len(), 9);
    assert!(rep.asserted_failures.is_empty(), "asserted criteria failed: {:?}", rep.asserted_failures);
}
