//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit when any
//! criterion fails.

mod common;

use std::process::Command;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hetnet_ci::assignment::{
    solve_code_assignment, solve_rf_assignment, AssignmentMode, AssignmentOptions, GainMatrix,
};
use hetnet_ci::channel::path_loss_db;
use hetnet_ci::convex::{solve_qcqp, verify_kkt, QcqpOptions, QcqpProblem, QcqpStatus};
use hetnet_ci::error::Error;
use hetnet_ci::experiment::overhead::{backhaul_overhead, SchemeFamily};
use hetnet_ci::experiment::{draw_symbols, draw_trial_channels, run_sweep, PointResult, SweepSpec};
use hetnet_ci::model::{detect_psk, BsClass, NetworkConfig};
use hetnet_ci::schemes::{CoordinatedPipeline, PipelineOptions, SchemeId};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn stage_cause(e: &Error) -> &Error {
    match e {
        Error::Stage { source, .. } => stage_cause(source),
        other => other,
    }
}

fn feasibility_suite() -> Outcome {
    let start = Instant::now();
    let cfg = NetworkConfig::desk();
    assert!(cfg.ci_power_caps);
    let budgets = cfg.budgets();
    let sigma = cfg.noise_power.sqrt();
    let opts = PipelineOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC1);
    let (mut solved, mut binding, mut infeasible, mut bad) = (0usize, 0usize, 0usize, Vec::new());
    let (mut worst_slack, mut worst_power, mut worst_modulus) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for trial in 0..100 {
        let channels = draw_trial_channels(&cfg, 0xACC1, trial).unwrap();
        let s = draw_symbols(&mut rng, cfg.num_users(), cfg.modulation_order);
        // one margin for all users, TNR uniform in [-40, 10] dB so that both
        // cap-feasible and cap-infeasible slots occur under the default budgets
        let gamma = sigma * 10f64.powf(rng.random_range(-40.0..10.0) / 20.0);
        let margins = vec![gamma; cfg.num_users()];
        for scheme in [SchemeId::CiContinuous, SchemeId::CiCodebook] {
            let pipe = CoordinatedPipeline::prepare(scheme, &cfg, &channels, &opts).unwrap();
            for b in &pipe.analog.blocks {
                worst_modulus = worst_modulus.max(b.modulus_error() / b.magnitude);
            }
            match pipe.precode_ci(&channels, &s, &margins, Some(&budgets)) {
                Ok(sol) => {
                    solved += 1;
                    for (k, y) in sol.received.iter().enumerate() {
                        let d = common::wedge_slack(*y, s.values[k], gamma, cfg.modulation_order) / gamma;
                        worst_slack = worst_slack.min(d);
                    }
                    for (p, cap) in sol.power.per_bs.iter().zip(&budgets) {
                        worst_power = worst_power.max(p - cap);
                    }
                    if sol.power.per_bs.iter().zip(&budgets).any(|(p, c)| *p >= c * (1.0 - 1e-6)) {
                        binding += 1;
                    }
                }
                Err(e) => match stage_cause(&e) {
                    Error::CiInfeasible(rep) => {
                        infeasible += 1;
                        // the uncapped optimum must break some cap
                        let certified = match &rep.uncapped_powers {
                            Some(p) => p.iter().zip(&budgets).any(|(p, c)| *p > *c),
                            None => rep.linear_margin.is_some_and(|m| m <= 0.0),
                        };
                        if !certified {
                            bad.push(format!("trial {trial} {scheme}: uncertified infeasibility {rep}"));
                        }
                    }
                    _ => bad.push(format!("trial {trial} {scheme}: {e}")),
                },
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = bad.is_empty()
        && solved > 0
        && worst_slack >= -1e-6
        && worst_power <= 1e-6
        && worst_modulus <= 1e-12
        && secs < 300.0;
    let mut detail = format!(
        "{solved} solved ({binding} on a cap), {infeasible} certified infeasible; min slack/margin {worst_slack:.3e}, \
         max power over cap {worst_power:.3e} W, modulus error/a {worst_modulus:.1e}, {secs:.1}s"
    );
    if let Some(b) = bad.first() {
        detail.push_str(&format!("; {} problems, first: {b}", bad.len()));
    }
    outcome(pass, detail)
}

fn milp_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC2);
    let opts = AssignmentOptions::default();
    let mut worst = 0.0f64;
    let mut failures = 0;
    for _ in 0..200 {
        let (gains, eps, caps) = common::random_assignment_instance(&mut rng);
        assert!(gains.q.len() <= 12);
        let want = common::brute_force_assignment(&gains.q, &gains.owner, eps, caps.as_deref()).unwrap();
        let got = match &caps {
            Some(c) => solve_code_assignment(&gains, eps, c, &opts),
            None => solve_rf_assignment(&gains, eps, &opts),
        };
        match got {
            Ok(a) if a.check(&gains.q, caps.as_deref()).is_ok() => worst = worst.max((a.objective - want).abs()),
            _ => failures += 1,
        }
    }
    let gains = GainMatrix {
        mode: AssignmentMode::Continuous,
        q: DMatrix::from_row_slice(3, 2, &[3.0, 1.0, 1.0, 2.0, 2.0, 2.0]),
        owner: vec![0, 1, 2],
    };
    let ex = solve_rf_assignment(&gains, 0.5, &opts).map(|a| a.objective).unwrap_or(f64::NAN);
    let ex_ok = (ex - 8.5).abs() <= 1e-9;
    outcome(
        failures == 0 && worst <= 1e-9 && ex_ok,
        format!("200 instances, max |exact - enumeration| {worst:.1e}, {failures} failures; worked example {ex}"),
    )
}

fn convex_oracle() -> Outcome {
    let opts = QcqpOptions::default();
    let (mut worst_rel, mut worst_kkt, mut failures) = (0.0f64, 0.0f64, 0);
    for seed in 0..50u64 {
        let p = common::random_ci_instance(seed);
        let Some((_, f_ref)) = common::qcqp_reference(&p.blocks, &p.lin, &p.rhs, p.caps.as_deref()) else {
            failures += 1;
            continue;
        };
        match solve_qcqp(&p, &opts) {
            Ok(sol) if sol.status == QcqpStatus::Optimal => {
                worst_rel = worst_rel.max((sol.objective - f_ref).abs() / f_ref);
                worst_kkt = worst_kkt.max(verify_kkt(&p, &sol).max());
            }
            _ => failures += 1,
        }
    }
    let toy = |gamma: f64, cap: Option<f64>| {
        let p = QcqpProblem::new(
            vec![DMatrix::identity(2, 2)],
            DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, 1.0]),
            nalgebra::DVector::from_vec(vec![gamma, gamma]),
            cap.map(|c| vec![c]),
        )
        .unwrap();
        solve_qcqp(&p, &opts).unwrap()
    };
    let t1 = toy(1.0, None).objective;
    let t2 = toy(2.0, None).objective;
    let t3 = toy(2.0, Some(1.0)).status;
    let toys_ok = (t1 - 1.0).abs() <= 1e-9 && (t2 - 4.0).abs() <= 1e-9 && t3 == QcqpStatus::Infeasible;
    outcome(
        failures == 0 && worst_rel <= 1e-4 && worst_kkt <= 1e-7 && toys_ok,
        format!(
            "50 instances, max rel gap {worst_rel:.1e}, max KKT residual {worst_kkt:.1e}, {failures} failures; \
             toys {t1}, {t2}, {t3:?}"
        ),
    )
}

fn noiseless_correctness() -> Outcome {
    let mut cfg = NetworkConfig::desk();
    cfg.ci_power_caps = false;
    let opts = PipelineOptions::default();
    let margins = cfg.margins_vec().unwrap();
    assert!(margins.iter().all(|&m| m > 0.0));
    let mut parts = Vec::new();
    let mut pass = true;
    for scheme in [SchemeId::CiContinuous, SchemeId::CiCodebook] {
        let (mut symbols, mut errors, mut failures) = (0usize, 0usize, 0usize);
        let mut rng = ChaCha8Rng::seed_from_u64(0xACC4);
        for trial in 0..125 {
            let channels = draw_trial_channels(&cfg, 0xACC4, trial).unwrap();
            let pipe = CoordinatedPipeline::prepare(scheme, &cfg, &channels, &opts).unwrap();
            for _ in 0..10 {
                let s = draw_symbols(&mut rng, cfg.num_users(), cfg.modulation_order);
                match pipe.precode_ci(&channels, &s, &margins, None) {
                    Ok(sol) => {
                        for (k, y) in sol.received.iter().enumerate() {
                            symbols += 1;
                            if detect_psk(*y, cfg.modulation_order) != s.indices[k] {
                                errors += 1;
                            }
                        }
                    }
                    Err(_) => failures += 1,
                }
            }
        }
        pass &= errors == 0 && failures == 0 && symbols >= 10_000;
        parts.push(format!("{scheme}: {errors} errors in {symbols} symbols, {failures} unsolved slots"));
    }
    outcome(pass, parts.join("; "))
}

/// Power (dBm) where the SER curve crosses `target`, by linear
/// interpolation of log10 SER against dBm, with a delta-method standard
/// error from the SER and power standard errors of the two bracketing
/// points.
fn power_at_ser(rows: &[&PointResult], target: f64) -> Option<(f64, f64)> {
    let lt = target.log10();
    rows.windows(2).find_map(|w| {
        let (a, b) = (w[0], w[1]);
        if !(a.ser >= target && b.ser < target && b.ser > 0.0) {
            return None;
        }
        let (la, lb) = (a.ser.log10(), b.ser.log10());
        let (pa, pb) = (a.mean_power_dbm, b.mean_power_dbm);
        let dl = lb - la;
        let w = (lt - la) / dl;
        let p = pa + w * (pb - pa);
        let se_l = |r: &PointResult| r.ser_stderr / (r.ser * std::f64::consts::LN_10);
        let d_la = (pb - pa) * (w - 1.0) / dl;
        let d_lb = -(pb - pa) * w / dl;
        let var = ((1.0 - w) * a.power_stderr_db).powi(2)
            + (w * b.power_stderr_db).powi(2)
            + (d_la * se_l(a)).powi(2)
            + (d_lb * se_l(b)).powi(2);
        Some((p, var.sqrt()))
    })
}

fn trend_reproduction() -> Vec<(String, Outcome)> {
    let mut cfg = NetworkConfig::desk();
    // CI power is measured after solving, with no cap in the way
    cfg.ci_power_caps = false;
    let spec = SweepSpec {
        schemes: SchemeId::ALL.to_vec(),
        margin_grid_db: vec![-3.0, 0.0, 3.0, 6.0, 9.0, 12.0, 15.0, 20.0],
        budget_grid_dbm: vec![50.0, 55.0, 60.0, 65.0, 70.0, 75.0, 80.0, 85.0, 90.0, 95.0, 100.0, 110.0],
        trials: 200,
        symbols_per_trial: 50,
        seed: 0xACC5,
    };
    let start = Instant::now();
    let rows = run_sweep(&spec, &cfg, &PipelineOptions::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let curve = |s: SchemeId| -> Vec<&PointResult> { rows.iter().filter(|r| r.scheme == s).collect() };
    let at = |s: SchemeId| power_at_ser(&curve(s), 1e-2);
    let fmt = |s: SchemeId, v: Option<(f64, f64)>| match v {
        Some((p, se)) => format!("{s} {p:.2} +/- {se:.2} dBm"),
        None => format!("{s} never crosses 1e-2"),
    };
    // lower-power scheme first; pass when the gap exceeds two combined SEs
    let compare = |lo: SchemeId, hi: SchemeId| -> Outcome {
        let (a, b) = (at(lo), at(hi));
        let pass = match (a, b) {
            (Some((pa, sa)), Some((pb, sb))) => pb - pa > 2.0 * (sa * sa + sb * sb).sqrt(),
            (Some(_), None) => true,
            _ => false,
        };
        outcome(pass, format!("{}; {}", fmt(lo, a), fmt(hi, b)))
    };
    let unc = curve(SchemeId::UncoordinatedCi);
    let top = unc.iter().max_by(|x, y| x.mean_power_dbm.total_cmp(&y.mean_power_dbm)).unwrap();
    let c_pass = top.ser - 2.0 * top.ser_stderr > 0.1;
    vec![
        ("5a CI-continuous below ZF-continuous".into(), compare(SchemeId::CiContinuous, SchemeId::ZfContinuous)),
        ("5b CI continuous below codebook".into(), compare(SchemeId::CiContinuous, SchemeId::CiCodebook)),
        ("5b ZF continuous below codebook".into(), compare(SchemeId::ZfContinuous, SchemeId::ZfCodebook)),
        (
            "5c uncoordinated SER above 0.1".into(),
            outcome(
                c_pass,
                format!(
                    "SER {:.4} +/- {:.4} at {:.2} dBm (TNR {} dB); sweep took {secs:.0}s",
                    top.ser, top.ser_stderr, top.mean_power_dbm, top.sweep_value
                ),
            ),
        ),
    ]
}

fn overhead_counting() -> Outcome {
    let cfg = NetworkConfig::full_scale();
    let mut pass = true;
    for delta in 1..=1000u64 {
        let ci = backhaul_overhead(&cfg, delta, SchemeFamily::Ci).unwrap().total;
        let zf = backhaul_overhead(&cfg, delta, SchemeFamily::Zf).unwrap().total;
        pass &= ci == 3072 + 64 * delta && zf == 7168 + 192 * delta && ci < zf;
    }
    let spot = |d| {
        (
            backhaul_overhead(&cfg, d, SchemeFamily::Ci).unwrap().total,
            backhaul_overhead(&cfg, d, SchemeFamily::Zf).unwrap().total,
        )
    };
    let (s1, s100) = (spot(1), spot(100));
    pass &= s1 == (3136, 7360) && s100 == (9472, 26368);
    outcome(pass, format!("delta 1 -> {s1:?}, delta 100 -> {s100:?}, closed forms checked for delta 1..=1000"))
}

fn path_loss() -> Outcome {
    let cases = [
        (BsClass::Macro, 1.0, 128.1),
        (BsClass::Macro, 0.1, 90.5),
        (BsClass::Pico, 0.1, 104.0),
    ];
    let mut worst = 0.0f64;
    for (class, d, want) in cases {
        worst = worst.max((path_loss_db(class, d).unwrap() - want).abs());
    }
    outcome(worst <= 1e-9, format!("max deviation {worst:.1e} dB"))
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_hetnet-ci");
    let sim = ["simulate", "--seed", "99", "--trials", "4", "--symbols", "5"];
    let runs: [Vec<&str>; 3] = [
        [&sim[..], &["--sweep=-3,3,9", "--zf-sweep", "60,70"]].concat(),
        [&sim[..], &["--no-ci-caps"]].concat(),
        vec!["overhead", "--delta", "1,10,100"],
    ];
    let dir = std::env::temp_dir().join(format!("hetnet-ci-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let mut pass = true;
    for args in &runs {
        let mut outputs = Vec::new();
        for _ in 0..2 {
            let out = Command::new(bin).args(args).output().unwrap();
            pass &= out.status.success();
            outputs.push(out.stdout);
        }
        pass &= !outputs[0].is_empty() && outputs[0] == outputs[1];
    }
    // CSV written to a file matches stdout byte for byte
    let path = dir.join("sim.csv");
    let st = Command::new(bin).args(&runs[0]).arg("--out").arg(&path).status().unwrap();
    let stdout = Command::new(bin).args(&runs[0]).output().unwrap().stdout;
    pass &= st.success() && std::fs::read(&path).unwrap_or_default() == stdout;
    std::fs::remove_dir_all(&dir).ok();
    outcome(pass, format!("{} invocations each run twice, plus one file run", runs.len()))
}

fn main() {
    let mut results: Vec<(String, Outcome)> = vec![
        ("1 feasibility suite".into(), feasibility_suite()),
        ("2 MILP oracle".into(), milp_oracle()),
        ("3 convex oracle".into(), convex_oracle()),
        ("4 noiseless correctness".into(), noiseless_correctness()),
    ];
    results.extend(trend_reproduction());
    results.push(("6 overhead counting".into(), overhead_counting()));
    results.push(("7 path loss".into(), path_loss()));
    results.push(("8 determinism".into(), determinism()));
    let mut failed = 0;
    for (name, o) in &results {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
