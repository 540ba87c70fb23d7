//! Quick built-in checks against closed-form values, run by the
//! `selftest` subcommand.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::assignment::{solve_rf_assignment, AssignmentMode, AssignmentOptions, GainMatrix};
use crate::channel::path_loss_db;
use crate::convex::{solve_qcqp, QcqpOptions, QcqpProblem, QcqpStatus};
use crate::experiment::{draw_symbols, draw_trial_channels, overhead_from_dims, SchemeFamily};
use crate::model::{detect_psk, BsClass, NetworkConfig};
use crate::schemes::{CoordinatedPipeline, PipelineOptions, SchemeId};

#[derive(Debug, Clone, Default)]
pub struct SelftestReport {
    pub lines: Vec<String>,
    failed: usize,
}

impl SelftestReport {
    fn check(&mut self, name: &str, ok: bool, detail: String) {
        if !ok {
            self.failed += 1;
        }
        self.lines
            .push(format!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" }));
    }

    pub fn failures(&self) -> usize {
        self.failed
    }

    pub fn all_passed(&self) -> bool {
        self.failed == 0
    }
}

fn toy(gamma: f64, cap: Option<f64>) -> QcqpProblem {
    QcqpProblem::new(
        vec![DMatrix::identity(2, 2)],
        DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, 1.0]),
        DVector::from_vec(vec![gamma, gamma]),
        cap.map(|c| vec![c]),
    )
    .expect("well-formed toy problem")
}

pub fn run() -> SelftestReport {
    let mut rep = SelftestReport::default();

    let pl = [
        (BsClass::Macro, 1.0, 128.1),
        (BsClass::Macro, 0.1, 90.5),
        (BsClass::Pico, 0.1, 104.0),
    ];
    for (class, d, want) in pl {
        let got = path_loss_db(class, d).unwrap_or(f64::NAN);
        rep.check(
            &format!("path loss {class} {d} km"),
            (got - want).abs() <= 1e-9,
            format!("{got} dB (expected {want})"),
        );
    }

    for (delta, ci_want, zf_want) in [(1u64, 3136u64, 7360u64), (100, 9472, 26368)] {
        let ci = overhead_from_dims(&[64, 32, 32], &[32, 16, 16], 64, delta, SchemeFamily::Ci);
        let zf = overhead_from_dims(&[64, 32, 32], &[32, 16, 16], 64, delta, SchemeFamily::Zf);
        let got = (ci.map(|r| r.total).unwrap_or(0), zf.map(|r| r.total).unwrap_or(0));
        rep.check(
            &format!("overhead delta={delta}"),
            got == (ci_want, zf_want),
            format!("CI {} ZF {} (expected {ci_want}, {zf_want})", got.0, got.1),
        );
    }

    let gains = GainMatrix {
        mode: AssignmentMode::Continuous,
        q: DMatrix::from_row_slice(3, 2, &[3.0, 1.0, 1.0, 2.0, 2.0, 2.0]),
        owner: vec![0, 0, 0],
    };
    match solve_rf_assignment(&gains, 0.5, &AssignmentOptions::default()) {
        Ok(a) => rep.check(
            "assignment worked example",
            (a.objective - 8.5).abs() <= 1e-9,
            format!("objective {} (expected 8.5)", a.objective),
        ),
        Err(e) => rep.check("assignment worked example", false, e.to_string()),
    }

    for (gamma, cap, want) in [(1.0, None, Some(1.0)), (2.0, None, Some(4.0)), (2.0, Some(1.0), None)] {
        let name = format!("CI toy gamma={gamma} cap={cap:?}");
        match solve_qcqp(&toy(gamma, cap), &QcqpOptions::default()) {
            Ok(s) => match want {
                Some(w) => rep.check(
                    &name,
                    s.status == QcqpStatus::Optimal && (s.objective - w).abs() <= 1e-9,
                    format!("power {} (expected {w})", s.objective),
                ),
                None => rep.check(
                    &name,
                    s.status == QcqpStatus::Infeasible,
                    format!("status {:?} (expected infeasible)", s.status),
                ),
            },
            Err(e) => rep.check(&name, false, e.to_string()),
        }
    }

    // noiseless end-to-end detection on one desk-scale draw
    let mut cfg = NetworkConfig::desk();
    cfg.ci_power_caps = false;
    let ok = (|| -> crate::Result<(usize, usize)> {
        let channels = draw_trial_channels(&cfg, 7, 0)?;
        let pipe = CoordinatedPipeline::prepare(SchemeId::CiContinuous, &cfg, &channels, &PipelineOptions::default())?;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut wrong = 0;
        let mut total = 0;
        for _ in 0..20 {
            let s = draw_symbols(&mut rng, cfg.num_users(), cfg.modulation_order);
            let sol = pipe.precode(&cfg, &channels, &s)?;
            for (k, y) in sol.received.iter().enumerate() {
                total += 1;
                if detect_psk(*y, cfg.modulation_order) != s.indices[k] {
                    wrong += 1;
                }
            }
        }
        Ok((wrong, total))
    })();
    match ok {
        Ok((wrong, total)) => rep.check(
            "noiseless CI detection",
            wrong == 0,
            format!("{wrong} errors in {total} symbols"),
        ),
        Err(e) => rep.check("noiseless CI detection", false, e.to_string()),
    }
    rep
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        let rep = super::run();
        assert!(rep.all_passed(), "{:#?}", rep.lines);
    }
}
