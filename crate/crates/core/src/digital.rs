//! Digital precoding (stage three): the per-slot CI power minimization and
//! the zero-forcing baseline, both on top of a fixed analog stage.

use nalgebra::{DMatrix, DVector};

use crate::convex::{solve_qcqp, QcqpOptions, QcqpProblem, QcqpStatus};
use crate::error::{Error, Result};
use crate::model::{
    ci_slack, received_nominal, transmit_power, AnalogPrecoderSet, ChannelSet, CiGeometry,
    DigitalMethod, PrecodeSolution, SymbolVector, C64,
};

/// Rows `f_gk^T = (s_k^* h_gk)^T A_g`, indexed `[g][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveChannel {
    pub rows: Vec<Vec<DVector<C64>>>,
}

impl EffectiveChannel {
    pub fn new(analog: &AnalogPrecoderSet, channels: &ChannelSet, symbols: &SymbolVector) -> Result<Self> {
        check_inputs(analog, channels)?;
        if symbols.len() != channels.num_users() {
            return Err(Error::Shape(format!(
                "{} symbols for {} users",
                symbols.len(),
                channels.num_users()
            )));
        }
        let rows = analog
            .blocks
            .iter()
            .enumerate()
            .map(|(g, blk)| {
                (0..channels.num_users())
                    .map(|k| {
                        let rotated = channels.get(g, k) * symbols.values[k].conj();
                        (rotated.transpose() * &blk.matrix).transpose()
                    })
                    .collect()
            })
            .collect();
        Ok(EffectiveChannel { rows })
    }

    pub fn get(&self, g: usize, k: usize) -> &DVector<C64> {
        &self.rows[g][k]
    }
}

fn check_inputs(analog: &AnalogPrecoderSet, channels: &ChannelSet) -> Result<()> {
    if analog.num_bs() != channels.num_bs() {
        return Err(Error::Shape(format!(
            "{} analog blocks for {} BSs",
            analog.num_bs(),
            channels.num_bs()
        )));
    }
    for (g, blk) in analog.blocks.iter().enumerate() {
        if blk.matrix.nrows() != channels.antennas(g) {
            return Err(Error::Shape(format!(
                "BS {g}: analog has {} rows, channel length {}",
                blk.matrix.nrows(),
                channels.antennas(g)
            )));
        }
    }
    Ok(())
}

/// Real expansion `[[Re M, -Im M], [Im M, Re M]]` of a Hermitian `M`.
fn real_expansion(m: &DMatrix<C64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = m[(i, j)];
            out[(i, j)] = z.re;
            out[(i, n + j)] = -z.im;
            out[(n + i, j)] = z.im;
            out[(n + i, n + j)] = z.re;
        }
    }
    // exact symmetry against round-off in A^H A
    (&out + out.transpose()) * 0.5
}

/// Assembles the CI problem of one symbol slot. Rows `2k` and `2k + 1`
/// encode `Re(c_k) - cot(theta) Im(c_k) >= gamma_k` and
/// `Re(c_k) + cot(theta) Im(c_k) >= gamma_k` with `c_k = sum_g f_gk^T b_g`.
pub fn build_ci_problem(
    analog: &AnalogPrecoderSet,
    channels: &ChannelSet,
    symbols: &SymbolVector,
    margins: &[f64],
    budgets: Option<&[f64]>,
) -> Result<QcqpProblem> {
    let k_users = channels.num_users();
    if margins.len() != k_users {
        return Err(Error::Shape(format!("{} margins for {k_users} users", margins.len())));
    }
    if margins.iter().any(|&g| !(g >= 0.0) || !g.is_finite()) {
        return Err(Error::Domain("margins must be finite and nonnegative".into()));
    }
    if let Some(b) = budgets {
        if b.len() != analog.num_bs() {
            return Err(Error::Shape(format!("{} budgets for {} BSs", b.len(), analog.num_bs())));
        }
    }
    let eff = EffectiveChannel::new(analog, channels, symbols)?;
    let geo = CiGeometry::new(symbols.order, margins);
    let cot = geo.cot_theta();

    let dims: Vec<usize> = analog.blocks.iter().map(|b| b.active_chains()).collect();
    let n: usize = dims.iter().map(|d| 2 * d).sum();
    let mut lin = DMatrix::zeros(2 * k_users, n);
    let mut rhs = DVector::zeros(2 * k_users);
    for k in 0..k_users {
        if (0..analog.num_bs()).all(|g| eff.get(g, k).iter().all(|z| *z == C64::new(0.0, 0.0))) {
            return Err(Error::ZeroEffectiveChannel { user: k });
        }
        for (row, sign) in [(2 * k, -1.0), (2 * k + 1, 1.0)] {
            let mut off = 0;
            for (g, &d) in dims.iter().enumerate() {
                let f = eff.get(g, k);
                for j in 0..d {
                    lin[(row, off + j)] = f[j].re + sign * cot * f[j].im;
                    lin[(row, off + d + j)] = -f[j].im + sign * cot * f[j].re;
                }
                off += 2 * d;
            }
            rhs[row] = geo.gamma[k];
        }
    }
    let blocks = analog
        .blocks
        .iter()
        .map(|b| real_expansion(&(b.matrix.adjoint() * &b.matrix)))
        .collect();
    QcqpProblem::new(blocks, lin, rhs, budgets.map(|b| b.to_vec()))
}

/// Splits the real stacking back into complex per-BS vectors.
pub fn unstack(x: &DVector<f64>, dims: &[usize]) -> Vec<DVector<C64>> {
    let mut off = 0;
    dims.iter()
        .map(|&d| {
            let b = DVector::from_fn(d, |j, _| C64::new(x[off + j], x[off + d + j]));
            off += 2 * d;
            b
        })
        .collect()
}

/// Minimum-power CI digital precoders for one symbol slot.
pub fn solve_digital_ci(
    analog: &AnalogPrecoderSet,
    channels: &ChannelSet,
    symbols: &SymbolVector,
    margins: &[f64],
    budgets: Option<&[f64]>,
    options: &QcqpOptions,
) -> Result<PrecodeSolution> {
    let problem = build_ci_problem(analog, channels, symbols, margins, budgets)?;
    let sol = solve_qcqp(&problem, options)?;
    match sol.status {
        QcqpStatus::Infeasible => {
            return Err(Error::CiInfeasible(Box::new(
                sol.infeasibility.expect("infeasible solutions carry a report"),
            )))
        }
        QcqpStatus::MaxIterations if sol.residuals.primal > 1e-9 => {
            return Err(Error::Domain(format!(
                "CI solver stopped without a feasible point after {} iterations",
                sol.iterations
            )))
        }
        _ => {}
    }
    let geo = CiGeometry::new(symbols.order, margins);
    let dims = analog.active_chains();
    let digital = unstack(&sol.x, &dims);
    let received = received_nominal(channels, analog, &digital)?;
    let power = transmit_power(analog, &digital)?;
    let slack: Vec<f64> = (0..symbols.len())
        .map(|k| ci_slack(received[k], symbols.values[k], geo.gamma[k], geo.theta))
        .collect();
    let row_slack = sol.row_slacks(&problem);
    let factor = if symbols.order == 2 { 1.0 } else { geo.tan_theta() };
    let solver_slack = (0..symbols.len())
        .map(|k| row_slack[2 * k].min(row_slack[2 * k + 1]) * factor)
        .collect();
    Ok(PrecodeSolution {
        method: DigitalMethod::Ci,
        digital,
        zf_matrices: None,
        zf_amplitude: None,
        power,
        ci_slack: Some(slack),
        solver_slack: Some(solver_slack),
        received,
    })
}

/// Zero-forcing digital stage for one coherence block:
/// `D = H^H (H H^H)^-1` with `H` the stacked effective channel
/// (`K x sum_g R_g`, row `k` = `[h_1k^T A_1, ..., h_Gk^T A_G]`).
#[derive(Debug, Clone)]
pub struct ZfPrecoder {
    pub h_eff: DMatrix<C64>,
    pub d: DMatrix<C64>,
    pub dims: Vec<usize>,
    analog: AnalogPrecoderSet,
}

impl ZfPrecoder {
    pub fn new(analog: &AnalogPrecoderSet, channels: &ChannelSet) -> Result<Self> {
        check_inputs(analog, channels)?;
        let k_users = channels.num_users();
        let dims = analog.active_chains();
        let n: usize = dims.iter().sum();
        let mut h = DMatrix::zeros(k_users, n);
        let mut off = 0;
        for (g, blk) in analog.blocks.iter().enumerate() {
            for k in 0..k_users {
                let row = channels.get(g, k).transpose() * &blk.matrix;
                for j in 0..dims[g] {
                    h[(k, off + j)] = row[(0, j)];
                }
            }
            off += dims[g];
        }
        if k_users > n {
            return Err(Error::RankDeficient {
                users: k_users,
                rank: n,
            });
        }
        let sv = h.clone().svd(false, false).singular_values;
        let top = sv.max();
        let rank = sv.iter().filter(|&&s| s > 1e-10 * top && s > 0.0).count();
        if rank < k_users {
            return Err(Error::RankDeficient { users: k_users, rank });
        }
        let gram = &h * h.adjoint();
        let inv = gram
            .try_inverse()
            .ok_or(Error::RankDeficient { users: k_users, rank })?;
        let d = h.adjoint() * inv;
        Ok(ZfPrecoder {
            h_eff: h,
            d,
            dims,
            analog: analog.clone(),
        })
    }

    /// Per-BS row blocks `D_g`.
    pub fn blocks(&self) -> Vec<DMatrix<C64>> {
        let mut off = 0;
        self.dims
            .iter()
            .map(|&d| {
                let m = self.d.rows(off, d).into_owned();
                off += d;
                m
            })
            .collect()
    }

    /// Largest common amplitude `beta` for which `b_g = D_g (beta s)`
    /// respects every budget, optionally capped at `target`.
    pub fn precode(
        &self,
        channels: &ChannelSet,
        symbols: &SymbolVector,
        budgets: &[f64],
        target: Option<f64>,
    ) -> Result<PrecodeSolution> {
        if budgets.len() != self.dims.len() {
            return Err(Error::Shape(format!("{} budgets for {} BSs", budgets.len(), self.dims.len())));
        }
        if symbols.len() != self.d.ncols() {
            return Err(Error::Shape(format!("{} symbols for {} users", symbols.len(), self.d.ncols())));
        }
        let s = DVector::from_column_slice(&symbols.values);
        let blocks = self.blocks();
        let unit: Vec<DVector<C64>> = blocks.iter().map(|dg| dg * &s).collect();
        let unit_power = transmit_power(&self.analog, &unit)?;
        let mut beta = f64::INFINITY;
        for (p, &budget) in unit_power.per_bs.iter().zip(budgets) {
            if *p > 0.0 {
                beta = beta.min((budget / p).sqrt());
            }
        }
        if let Some(t) = target {
            beta = beta.min(t);
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Domain(format!("no positive ZF amplitude (beta = {beta})")));
        }
        let digital: Vec<DVector<C64>> = unit.iter().map(|u| u * C64::new(beta, 0.0)).collect();
        let received = received_nominal(channels, &self.analog, &digital)?;
        let power = transmit_power(&self.analog, &digital)?;
        Ok(PrecodeSolution {
            method: DigitalMethod::Zf,
            digital,
            zf_matrices: Some(blocks),
            zf_amplitude: Some(beta),
            power,
            ci_slack: None,
            solver_slack: None,
            received,
        })
    }
}

/// One-shot ZF: factorization plus a single slot.
pub fn solve_digital_zf(
    analog: &AnalogPrecoderSet,
    channels: &ChannelSet,
    symbols: &SymbolVector,
    budgets: &[f64],
    target_amplitude: Option<f64>,
) -> Result<PrecodeSolution> {
    ZfPrecoder::new(analog, channels)?.precode(channels, symbols, budgets, target_amplitude)
}
