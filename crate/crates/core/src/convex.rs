//! Convex QCQP engine for the fixed-analog digital precoding problem.
//!
//! ```text
//! minimize    x^T H x                  H = blockdiag(H_1, ..., H_G), PSD
//! subject to  g_i^T x >= h_i           (linear rows)
//!             x_g^T H_g x_g <= P_g     (optional per-block caps)
//! ```
//!
//! `x` is the real stacking `[Re(b_1); Im(b_1); ...; Re(b_G); Im(b_G)]`.
//!
//! The solver works on a normalized copy of the problem: every linear row
//! is scaled to unit norm, variables are scaled so right-hand sides are at
//! most one, the objective is divided by the largest diagonal entry of `H`
//! and caps are written as `x_g^T M_g x_g - 1 <= 0`. Reported KKT residuals
//! and dual multipliers refer to that normalized form; [`verify_kkt`]
//! rebuilds it from the original problem.
//!
//! Solve sequence:
//! 1. strictly feasible start for the linear rows (minimum-norm point with
//!    unit margin, or a phase-one LP maximizing the smallest row margin);
//! 2. primal-dual interior point without caps;
//! 3. if that point breaks a cap, a cap phase-one (log-barrier method
//!    minimizing the largest normalized cap excess) followed by the capped
//!    interior-point solve, with the barrier method as fallback;
//! 4. an active-set polish of the final point when no cap is active.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::milp::{solve_lp, LpOutcome, MilpModel, Sense};

#[derive(Debug, Clone, PartialEq)]
pub struct QcqpProblem {
    pub blocks: Vec<DMatrix<f64>>,
    /// Rows `g_i^T` of the linear inequalities `G x >= h`.
    pub lin: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub caps: Option<Vec<f64>>,
}

impl QcqpProblem {
    pub fn new(
        blocks: Vec<DMatrix<f64>>,
        lin: DMatrix<f64>,
        rhs: DVector<f64>,
        caps: Option<Vec<f64>>,
    ) -> Result<Self> {
        let p = QcqpProblem {
            blocks,
            lin,
            rhs,
            caps,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.nrows()).sum()
    }

    pub fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.blocks.len());
        let mut acc = 0;
        for b in &self.blocks {
            off.push(acc);
            acc += b.nrows();
        }
        off
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        for (g, b) in self.blocks.iter().enumerate() {
            if !b.is_square() {
                return Err(Error::Shape(format!("objective block {g} is not square")));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("objective block {g} is not finite")));
            }
            let scale = b.iter().fold(1e-300f64, |a, v| a.max(v.abs()));
            if (b - b.transpose()).amax() > 1e-10 * scale {
                return Err(Error::Domain(format!("objective block {g} is not symmetric")));
            }
            if b.nrows() > 0 {
                let min_eig = b.clone().symmetric_eigenvalues().min();
                if min_eig < -1e-10 * scale {
                    return Err(Error::Domain(format!(
                        "objective block {g} is not PSD (eigenvalue {min_eig})"
                    )));
                }
            }
        }
        if self.lin.ncols() != n || self.lin.nrows() != self.rhs.len() {
            return Err(Error::Shape(format!(
                "linear rows are {}x{}, expected {}x{n}",
                self.lin.nrows(),
                self.lin.ncols(),
                self.rhs.len()
            )));
        }
        if self.lin.iter().chain(self.rhs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("linear rows are not finite".into()));
        }
        if let Some(caps) = &self.caps {
            if caps.len() != self.blocks.len() {
                return Err(Error::Shape("one cap per block is required".into()));
            }
            if caps.iter().any(|&p| !(p > 0.0)) {
                return Err(Error::Domain("caps must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn block_values(&self, x: &DVector<f64>) -> Vec<f64> {
        self.offsets()
            .iter()
            .zip(&self.blocks)
            .map(|(&o, b)| {
                let xg = x.rows(o, b.nrows());
                (xg.transpose() * b * xg)[(0, 0)]
            })
            .collect()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        self.block_values(x).iter().sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QcqpOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QcqpOptions {
    fn default() -> Self {
        QcqpOptions {
            tol: 1e-7,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QcqpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

/// Why a problem was declared infeasible.
#[derive(Debug, Clone, PartialEq)]
pub struct InfeasibilityReport {
    /// Best achievable smallest linear-row margin (normalized rows); not
    /// positive means the CI rows alone are infeasible.
    pub linear_margin: Option<f64>,
    /// Optimal largest relative cap excess of the cap phase-one.
    pub cap_excess: Option<f64>,
    /// Per-block values `x_g^T H_g x_g` of the uncapped optimum.
    pub uncapped_powers: Option<Vec<f64>>,
    pub caps: Option<Vec<f64>>,
}

impl fmt::Display for InfeasibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.uncapped_powers, &self.caps) {
            (Some(p), Some(c)) => write!(
                f,
                "power caps unreachable (uncapped per-BS power {p:?} W, caps {c:?} W, excess {:?})",
                self.cap_excess
            ),
            _ => write!(
                f,
                "CI constraints infeasible (best normalized margin {:?})",
                self.linear_margin
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct QcqpSolution {
    pub status: QcqpStatus,
    pub x: DVector<f64>,
    pub objective: f64,
    pub residuals: KktResiduals,
    /// Multipliers of the normalized linear rows.
    pub linear_duals: DVector<f64>,
    /// Multipliers of the normalized caps (zeros when uncapped).
    pub cap_duals: DVector<f64>,
    pub iterations: usize,
    pub infeasibility: Option<InfeasibilityReport>,
}

impl QcqpSolution {
    /// Slack `g_i^T x - h_i` of each original linear row.
    pub fn row_slacks(&self, problem: &QcqpProblem) -> DVector<f64> {
        &problem.lin * &self.x - &problem.rhs
    }
}

struct CapTerm {
    block: usize,
    offset: usize,
    mat: DMatrix<f64>,
}

/// Normalized problem in scaled variables `z = x / kappa`.
struct Normalized {
    n: usize,
    kappa: f64,
    obj_scale: f64,
    hobj: DMatrix<f64>,
    /// Rows kept in the program and their original indices.
    g: DMatrix<f64>,
    r: DVector<f64>,
    rows: Vec<usize>,
    m_total: usize,
    caps: Vec<CapTerm>,
    num_blocks: usize,
    trivially_infeasible: bool,
}

fn normalize(p: &QcqpProblem) -> Normalized {
    let n = p.dim();
    let offsets = p.offsets();
    let mut rows = Vec::new();
    let mut trivially_infeasible = false;
    let mut norms = Vec::new();
    for i in 0..p.lin.nrows() {
        let norm = p.lin.row(i).norm();
        if norm > 0.0 {
            rows.push(i);
            norms.push(norm);
        } else if p.rhs[i] > 0.0 {
            trivially_infeasible = true;
        }
    }
    let rhat: Vec<f64> = rows.iter().zip(&norms).map(|(&i, nr)| p.rhs[i] / nr).collect();
    let max_rhs = rhat.iter().copied().fold(0.0f64, f64::max);
    let mut full = DMatrix::zeros(n, n);
    for (&o, b) in offsets.iter().zip(&p.blocks) {
        full.view_mut((o, o), (b.nrows(), b.nrows())).copy_from(b);
    }
    let hs = full.diagonal().iter().copied().fold(0.0f64, f64::max);
    let hs = if hs > 0.0 { hs } else { 1.0 };
    let kappa = if max_rhs > 0.0 {
        max_rhs
    } else if let Some(caps) = &p.caps {
        // no positive right-hand side: scale from the tightest cap
        caps.iter()
            .zip(&p.blocks)
            .filter(|(_, b)| b.nrows() > 0)
            .map(|(&c, b)| {
                let top = b.clone().symmetric_eigenvalues().max();
                if top > 0.0 {
                    (c / top).sqrt()
                } else {
                    f64::INFINITY
                }
            })
            .fold(f64::INFINITY, f64::min)
            .min(1e12)
    } else {
        1.0
    };
    let kappa = if kappa.is_finite() && kappa > 0.0 { kappa } else { 1.0 };
    let g = DMatrix::from_fn(rows.len(), n, |a, j| p.lin[(rows[a], j)] / norms[a]);
    let r = DVector::from_iterator(rows.len(), rhat.iter().map(|v| v / kappa));
    let mut caps = Vec::new();
    if let Some(cv) = &p.caps {
        for (blk, (&o, b)) in offsets.iter().zip(&p.blocks).enumerate() {
            if b.nrows() > 0 {
                caps.push(CapTerm {
                    block: blk,
                    offset: o,
                    mat: b * (kappa * kappa / cv[blk]),
                });
            }
        }
    }
    Normalized {
        n,
        kappa,
        obj_scale: kappa * kappa * hs,
        hobj: full / hs,
        g,
        r,
        rows,
        m_total: p.lin.nrows(),
        caps,
        num_blocks: p.blocks.len(),
        trivially_infeasible,
    }
}

#[derive(Clone, Copy)]
enum Objective {
    Quadratic,
    /// Minimize the coordinate at this index (cap phase-one slack).
    Coordinate(usize),
}

/// Convex program in the normalized variables, optionally with an extra
/// slack coordinate `t` appended after `z`.
struct Program<'a> {
    norm: &'a Normalized,
    n: usize,
    objective: Objective,
    use_caps: bool,
    cap_slack: Option<usize>,
}

struct Eval {
    f: f64,
    grad: DVector<f64>,
    c: DVector<f64>,
    jac: DMatrix<f64>,
}

impl Program<'_> {
    fn m(&self) -> usize {
        self.norm.g.nrows() + if self.use_caps { self.norm.caps.len() } else { 0 }
    }

    fn cap_value(&self, cap: &CapTerm, x: &DVector<f64>) -> f64 {
        let d = cap.mat.nrows();
        let xg = x.rows(cap.offset, d);
        (xg.transpose() * &cap.mat * xg)[(0, 0)] - 1.0
    }

    fn constraints(&self, x: &DVector<f64>) -> DVector<f64> {
        let nz = self.norm.n;
        let ml = self.norm.g.nrows();
        let mut c = DVector::zeros(self.m());
        let lin = &self.norm.g * x.rows(0, nz);
        for i in 0..ml {
            c[i] = self.norm.r[i] - lin[i];
        }
        if self.use_caps {
            for (a, cap) in self.norm.caps.iter().enumerate() {
                c[ml + a] = self.cap_value(cap, x) - self.cap_slack.map_or(0.0, |t| x[t]);
            }
        }
        c
    }

    fn eval(&self, x: &DVector<f64>) -> Eval {
        let nz = self.norm.n;
        let ml = self.norm.g.nrows();
        let (f, grad) = match self.objective {
            Objective::Quadratic => {
                let hx = &self.norm.hobj * x.rows(0, nz);
                let f = x.rows(0, nz).dot(&hx);
                let mut grad = DVector::zeros(self.n);
                grad.rows_mut(0, nz).copy_from(&(hx * 2.0));
                (f, grad)
            }
            Objective::Coordinate(t) => {
                let mut grad = DVector::zeros(self.n);
                grad[t] = 1.0;
                (x[t], grad)
            }
        };
        let m = self.m();
        let mut jac = DMatrix::zeros(m, self.n);
        for i in 0..ml {
            for j in 0..nz {
                jac[(i, j)] = -self.norm.g[(i, j)];
            }
        }
        if self.use_caps {
            for (a, cap) in self.norm.caps.iter().enumerate() {
                let d = cap.mat.nrows();
                let gcap = &cap.mat * x.rows(cap.offset, d) * 2.0;
                for j in 0..d {
                    jac[(ml + a, cap.offset + j)] = gcap[j];
                }
                if let Some(t) = self.cap_slack {
                    jac[(ml + a, t)] = -1.0;
                }
            }
        }
        Eval {
            f,
            grad,
            c: self.constraints(x),
            jac,
        }
    }

    /// Hessian of the Lagrangian.
    fn hessian(&self, lam: &DVector<f64>) -> DMatrix<f64> {
        let nz = self.norm.n;
        let ml = self.norm.g.nrows();
        let mut h = DMatrix::zeros(self.n, self.n);
        if let Objective::Quadratic = self.objective {
            h.view_mut((0, 0), (nz, nz)).copy_from(&(&self.norm.hobj * 2.0));
        }
        if self.use_caps {
            for (a, cap) in self.norm.caps.iter().enumerate() {
                let d = cap.mat.nrows();
                let mut v = h.view_mut((cap.offset, cap.offset), (d, d));
                v += &cap.mat * (2.0 * lam[ml + a]);
            }
        }
        h
    }
}

struct IpmResult {
    x: DVector<f64>,
    lam: DVector<f64>,
    iterations: usize,
    converged: bool,
}

fn solve_spd(mut m: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let n = m.nrows();
    let diag_max = m.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut reg = 1e-14 * (1.0 + diag_max);
    for _ in 0..8 {
        if let Some(ch) = m.clone().cholesky() {
            return Some(ch.solve(rhs));
        }
        for i in 0..n {
            m[(i, i)] += reg;
        }
        reg *= 100.0;
    }
    None
}

fn residual_norm(prog: &Program, e: &Eval, lam: &DVector<f64>, t: f64) -> f64 {
    let rd = &e.grad + e.jac.transpose() * lam;
    let rc = DVector::from_fn(lam.len(), |i, _| -lam[i] * e.c[i] - 1.0 / t);
    let _ = prog;
    (rd.norm_squared() + rc.norm_squared()).sqrt()
}

/// Log-barrier method (Newton centering, `tau <- MU tau`) from a strictly
/// feasible `x0`. Slower per digit than the primal-dual iteration but
/// insensitive to poorly centered starts.
fn barrier_method(
    prog: &Program,
    x0: DVector<f64>,
    tol: f64,
    max_newton: usize,
    stop_below: Option<(usize, f64)>,
) -> IpmResult {
    const MU: f64 = 10.0;
    const ALPHA: f64 = 0.01;
    const BETA: f64 = 0.5;
    let m = prog.m();
    let mut x = x0;
    let mut iterations = 0;
    let e0 = prog.eval(&x);
    let mut tau = m as f64 / e0.f.abs().max(1.0);
    let phi = |x: &DVector<f64>, tau: f64| -> f64 {
        let c = prog.constraints(x);
        if c.iter().any(|&ci| ci >= 0.0) {
            return f64::INFINITY;
        }
        let f = match prog.objective {
            Objective::Quadratic => {
                let z = x.rows(0, prog.norm.n);
                z.dot(&(&prog.norm.hobj * z))
            }
            Objective::Coordinate(t) => x[t],
        };
        tau * f - c.iter().map(|ci| (-ci).ln()).sum::<f64>()
    };
    let mut converged = false;
    'outer: loop {
        loop {
            let e = prog.eval(&x);
            if let Some((idx, level)) = stop_below {
                if x[idx] < level {
                    converged = true;
                    break 'outer;
                }
            }
            if iterations >= max_newton {
                break 'outer;
            }
            let inv = DVector::from_fn(m, |i, _| 1.0 / -e.c[i]);
            let grad = &e.grad * tau + e.jac.transpose() * &inv;
            let lam = &inv / tau;
            let mut h = prog.hessian(&lam) * tau;
            let jd = DMatrix::from_fn(m, prog.n, |i, j| e.jac[(i, j)] * inv[i]);
            h += jd.transpose() * &jd;
            let Some(dx) = solve_spd(h, &(-&grad)) else {
                break 'outer;
            };
            let dec = -grad.dot(&dx);
            if dec / 2.0 <= 1e-12 {
                break;
            }
            iterations += 1;
            let p0 = phi(&x, tau);
            let mut s = 1.0;
            while phi(&(&x + &dx * s), tau) > p0 - ALPHA * s * dec {
                s *= BETA;
                if s < 1e-16 {
                    break 'outer;
                }
            }
            x += &dx * s;
        }
        if m as f64 / tau <= tol {
            converged = true;
            break;
        }
        tau *= MU;
    }
    let c = prog.constraints(&x);
    let lam = DVector::from_fn(m, |i, _| 1.0 / (tau * -c[i]));
    IpmResult {
        x,
        lam,
        iterations,
        converged,
    }
}

/// Primal-dual interior point from a strictly feasible `x0`.
fn interior_point(
    prog: &Program,
    x0: DVector<f64>,
    tol: f64,
    max_iter: usize,
    stop_below: Option<(usize, f64)>,
) -> IpmResult {
    const MU: f64 = 10.0;
    const ALPHA: f64 = 0.01;
    const BETA: f64 = 0.5;
    let m = prog.m();
    let mut x = x0;
    let e0 = prog.eval(&x);
    let eta0 = e0.f.abs().max(1.0);
    let mut lam = DVector::from_fn(m, |i, _| eta0 / (m as f64 * -e0.c[i]));
    let mut converged = false;
    let mut iterations = 0;
    if m == 0 {
        // unconstrained quadratic: the origin is optimal
        if let Objective::Quadratic = prog.objective {
            x.fill(0.0);
        }
        return IpmResult {
            x,
            lam,
            iterations,
            converged: true,
        };
    }
    while iterations < max_iter {
        let e = prog.eval(&x);
        if let Some((idx, level)) = stop_below {
            if x[idx] < level {
                converged = true;
                break;
            }
        }
        let eta = -e.c.dot(&lam);
        let rd = &e.grad + e.jac.transpose() * &lam;
        let fscale = e.f.abs().max(1.0);
        let gscale = e.grad.amax().max(1.0);
        if rd.amax() <= tol * gscale && eta <= tol * fscale {
            converged = true;
            break;
        }
        iterations += 1;
        let t = MU * m as f64 / eta;
        let mut mat = prog.hessian(&lam);
        let neg_c = -&e.c;
        let w = DVector::from_fn(m, |i, _| lam[i] / neg_c[i]);
        let jw = DMatrix::from_fn(m, prog.n, |i, j| e.jac[(i, j)] * w[i]);
        mat += e.jac.transpose() * jw;
        let inv_tc = DVector::from_fn(m, |i, _| 1.0 / (t * neg_c[i]));
        let rhs = -(&e.grad + e.jac.transpose() * &inv_tc);
        let Some(dx) = solve_spd(mat, &rhs) else {
            break;
        };
        let jdx = &e.jac * &dx;
        let dlam = DVector::from_fn(m, |i, _| lam[i] * jdx[i] / neg_c[i] - lam[i] + inv_tc[i]);

        let mut s = 1.0f64;
        for i in 0..m {
            if dlam[i] < 0.0 {
                s = s.min(-lam[i] / dlam[i]);
            }
        }
        s *= 0.99;
        s = s.min(1.0);
        let mut tries = 0;
        while prog.constraints(&(&x + &dx * s)).iter().any(|&ci| ci >= 0.0) && tries < 80 {
            s *= BETA;
            tries += 1;
        }
        let r0 = residual_norm(prog, &e, &lam, t);
        loop {
            let xn = &x + &dx * s;
            let ln = &lam + &dlam * s;
            let en = prog.eval(&xn);
            if residual_norm(prog, &en, &ln, t) <= (1.0 - ALPHA * s) * r0 || tries >= 80 {
                break;
            }
            s *= BETA;
            tries += 1;
        }
        if tries >= 80 || s < 1e-16 {
            break;
        }
        x += &dx * s;
        lam += &dlam * s;
        // keep multipliers strictly positive against round-off
        for v in lam.iter_mut() {
            if *v <= 0.0 {
                *v = 1e-300;
            }
        }
    }
    IpmResult {
        x,
        lam,
        iterations,
        converged,
    }
}

fn residuals_normalized(norm: &Normalized, z: &DVector<f64>, lam_lin: &DVector<f64>, lam_cap: &[f64]) -> KktResiduals {
    let hz = &norm.hobj * z;
    let f = z.dot(&hz);
    let grad_f = &hz * 2.0;
    let mut rd = grad_f.clone();
    let mut primal = 0.0f64;
    let mut comp = 0.0f64;
    let mut dual = 0.0f64;
    for i in 0..norm.g.nrows() {
        let row = norm.g.row(i);
        let c = norm.r[i] - (row * z)[(0, 0)];
        rd -= row.transpose() * lam_lin[i];
        primal = primal.max(c);
        comp = comp.max((lam_lin[i] * c).abs());
        dual = dual.max(-lam_lin[i]);
    }
    for (cap, &l) in norm.caps.iter().zip(lam_cap) {
        let d = cap.mat.nrows();
        let zg = z.rows(cap.offset, d);
        let gz = &cap.mat * zg;
        let c = zg.dot(&gz) - 1.0;
        let mut seg = rd.rows_mut(cap.offset, d);
        seg += gz * (2.0 * l);
        primal = primal.max(c);
        comp = comp.max((l * c).abs());
        dual = dual.max(-l);
    }
    KktResiduals {
        stationarity: rd.amax() / grad_f.amax().max(1.0),
        primal,
        dual,
        complementarity: comp / f.abs().max(1.0),
    }
}

/// Recomputes the KKT residuals of `solution` on the normalized problem.
pub fn verify_kkt(problem: &QcqpProblem, solution: &QcqpSolution) -> KktResiduals {
    let norm = normalize(problem);
    let z = &solution.x / norm.kappa;
    let lam_lin = DVector::from_iterator(
        norm.rows.len(),
        norm.rows.iter().map(|&i| solution.linear_duals.get(i).copied().unwrap_or(0.0)),
    );
    let lam_cap: Vec<f64> = norm
        .caps
        .iter()
        .map(|c| solution.cap_duals.get(c.block).copied().unwrap_or(0.0))
        .collect();
    residuals_normalized(&norm, &z, &lam_lin, &lam_cap)
}

/// Strictly feasible point for the normalized linear rows, or the best
/// margin found when none exists.
fn linear_start(norm: &Normalized) -> std::result::Result<DVector<f64>, f64> {
    let (m, n) = norm.g.shape();
    if m == 0 {
        return Ok(DVector::from_element(n, 0.0));
    }
    // Minimum-norm point with unit margin on every row.
    let target = norm.r.add_scalar(1.0);
    let svd = norm.g.clone().svd(true, true);
    if let Ok(z) = svd.solve(&target, 1e-12) {
        let margin = (&norm.g * &z - &norm.r).min();
        if margin >= 0.5 {
            return Ok(z);
        }
    }
    // Phase-one LP: maximize s subject to g_i^T z - s >= r_i, |z_j| <= B, s <= 1.
    const BOX: f64 = 1e6;
    let mut lp = MilpModel::new();
    for _ in 0..n {
        lp.add_continuous(0.0, -BOX, BOX);
    }
    let s = lp.add_continuous(1.0, f64::NEG_INFINITY, 1.0);
    for i in 0..m {
        let mut coeffs: Vec<(usize, f64)> = (0..n)
            .filter(|&j| norm.g[(i, j)] != 0.0)
            .map(|j| (j, norm.g[(i, j)]))
            .collect();
        coeffs.push((s, -1.0));
        lp.add_constraint(coeffs, Sense::Ge, norm.r[i]);
    }
    match solve_lp(&lp) {
        Ok(LpOutcome::Optimal { x, objective }) if objective > 1e-9 => {
            Ok(DVector::from_iterator(n, x[..n].iter().copied()))
        }
        Ok(LpOutcome::Optimal { objective, .. }) => Err(objective),
        _ => Err(f64::NEG_INFINITY),
    }
}

/// Active-set refinement: re-solve the equality-constrained QP on the rows
/// the interior point left active. Returns `None` when the result is not a
/// better KKT point.
fn polish(
    norm: &Normalized,
    z: &DVector<f64>,
    lam: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let ml = norm.g.nrows();
    let n = norm.n;
    let c: Vec<f64> = (0..ml)
        .map(|i| norm.r[i] - (norm.g.row(i) * z)[(0, 0)])
        .collect();
    let active: Vec<usize> = (0..ml).filter(|&i| lam[i] > -c[i]).collect();
    if active.is_empty() {
        return None;
    }
    let a = active.len();
    let mut kkt = DMatrix::zeros(n + a, n + a);
    kkt.view_mut((0, 0), (n, n)).copy_from(&(&norm.hobj * 2.0));
    let mut rhs = DVector::zeros(n + a);
    for (p, &i) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(j, n + p)] = -norm.g[(i, j)];
            kkt[(n + p, j)] = norm.g[(i, j)];
        }
        rhs[n + p] = norm.r[i];
    }
    let sol = kkt
        .clone()
        .lu()
        .solve(&rhs)
        .filter(|s| (&kkt * s - &rhs).amax() <= 1e-12)
        .or_else(|| {
            kkt.clone()
                .svd(true, true)
                .solve(&rhs, 1e-13)
                .ok()
                .filter(|s| (&kkt * s - &rhs).amax() <= 1e-10)
        })?;
    let zp = sol.rows(0, n).into_owned();
    let mut lp = DVector::zeros(ml);
    for (p, &i) in active.iter().enumerate() {
        lp[i] = sol[n + p];
    }
    if lp.iter().any(|&v| v < -1e-12) {
        return None;
    }
    for i in 0..ml {
        if norm.r[i] - (norm.g.row(i) * &zp)[(0, 0)] > 1e-12 {
            return None;
        }
    }
    for cap in &norm.caps {
        let d = cap.mat.nrows();
        let zg = zp.rows(cap.offset, d);
        if zg.dot(&(&cap.mat * zg)) - 1.0 > 0.0 {
            return None;
        }
    }
    let f_old = z.dot(&(&norm.hobj * z));
    let f_new = zp.dot(&(&norm.hobj * &zp));
    if f_new > f_old + 1e-9 * f_old.abs().max(1.0) {
        return None;
    }
    Some((zp, lp))
}

fn expand_duals(norm: &Normalized, lam_lin: &DVector<f64>, lam_cap: &[f64]) -> (DVector<f64>, DVector<f64>) {
    let mut lin = DVector::zeros(norm.m_total);
    for (a, &i) in norm.rows.iter().enumerate() {
        lin[i] = lam_lin[a];
    }
    let mut caps = DVector::zeros(norm.num_blocks);
    for (cap, &l) in norm.caps.iter().zip(lam_cap) {
        caps[cap.block] = l;
    }
    (lin, caps)
}

fn infeasible(p: &QcqpProblem, report: InfeasibilityReport) -> QcqpSolution {
    QcqpSolution {
        status: QcqpStatus::Infeasible,
        x: DVector::zeros(p.dim()),
        objective: f64::NAN,
        residuals: KktResiduals::default(),
        linear_duals: DVector::zeros(p.lin.nrows()),
        cap_duals: DVector::zeros(p.blocks.len()),
        iterations: 0,
        infeasibility: Some(report),
    }
}

/// Solves the QCQP; see the module docs for the sequence of phases.
pub fn solve_qcqp(problem: &QcqpProblem, options: &QcqpOptions) -> Result<QcqpSolution> {
    problem.validate()?;
    let norm = normalize(problem);
    let inner_tol = options.tol * 0.01;
    if norm.trivially_infeasible {
        return Ok(infeasible(
            problem,
            InfeasibilityReport {
                linear_margin: Some(f64::NEG_INFINITY),
                cap_excess: None,
                uncapped_powers: None,
                caps: problem.caps.clone(),
            },
        ));
    }
    let z0 = match linear_start(&norm) {
        Ok(z) => z,
        Err(margin) => {
            return Ok(infeasible(
                problem,
                InfeasibilityReport {
                    linear_margin: Some(margin),
                    cap_excess: None,
                    uncapped_powers: None,
                    caps: problem.caps.clone(),
                },
            ))
        }
    };

    let uncapped = Program {
        norm: &norm,
        n: norm.n,
        objective: Objective::Quadratic,
        use_caps: false,
        cap_slack: None,
    };
    let res = interior_point(&uncapped, z0.clone(), inner_tol, options.max_iter, None);
    let mut iterations = res.iterations;
    let ml = norm.g.nrows();
    let caps_hold = norm
        .caps
        .iter()
        .all(|cap| uncapped.cap_value(cap, &res.x) <= 0.0);

    let (mut z, mut lam_lin, lam_cap, mut converged) = if caps_hold {
        (res.x, res.lam, vec![0.0; norm.caps.len()], res.converged)
    } else {
        let uncapped_powers = problem.block_values(&(&res.x * norm.kappa));
        // Cap phase-one on (z, t).
        let phase = Program {
            norm: &norm,
            n: norm.n + 1,
            objective: Objective::Coordinate(norm.n),
            use_caps: true,
            cap_slack: Some(norm.n),
        };
        let worst = norm
            .caps
            .iter()
            .map(|c| phase.cap_value(c, &z0))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut start = DVector::zeros(norm.n + 1);
        start.rows_mut(0, norm.n).copy_from(&z0);
        start[norm.n] = worst + 1.0;
        let p1 = barrier_method(&phase, start, inner_tol, 4 * options.max_iter, Some((norm.n, -0.05)));
        iterations += p1.iterations;
        let excess = p1.x[norm.n];
        if excess >= -1e-9 {
            return Ok(infeasible(
                problem,
                InfeasibilityReport {
                    linear_margin: None,
                    cap_excess: Some(excess),
                    uncapped_powers: Some(uncapped_powers),
                    caps: problem.caps.clone(),
                },
            ));
        }
        let capped = Program {
            norm: &norm,
            n: norm.n,
            objective: Objective::Quadratic,
            use_caps: true,
            cap_slack: None,
        };
        // The phase-one point can sit on linear rows. Caps are homogeneous
        // and right-hand sides nonnegative, so scaling up halfway towards
        // the cap boundary moves it inside every constraint.
        let mut zs = p1.x.rows(0, norm.n).into_owned();
        let worst = norm
            .caps
            .iter()
            .map(|c| capped.cap_value(c, &zs))
            .fold(f64::NEG_INFINITY, f64::max);
        if worst < 0.0 {
            zs *= 0.5 * (1.0 + (1.0 / (1.0 + worst)).sqrt());
        }
        let mut res = interior_point(&capped, zs.clone(), inner_tol, options.max_iter, None);
        iterations += res.iterations;
        if !res.converged {
            res = barrier_method(&capped, zs, inner_tol, 4 * options.max_iter, None);
            iterations += res.iterations;
        }
        let lam_cap = res.lam.rows(ml, norm.caps.len()).iter().copied().collect();
        let lam_lin = res.lam.rows(0, ml).into_owned();
        (res.x, lam_lin, lam_cap, res.converged)
    };
    let lam_lin_ipm = lam_lin.rows(0, ml).into_owned();
    lam_lin = lam_lin_ipm;

    let mut residuals = residuals_normalized(&norm, &z, &lam_lin, &lam_cap);
    if lam_cap.iter().all(|&l| l == 0.0) || norm.caps.is_empty() {
        if let Some((zp, lp)) = polish(&norm, &z, &lam_lin) {
            let rp = residuals_normalized(&norm, &zp, &lp, &lam_cap);
            if rp.max() <= residuals.max() || rp.max() <= options.tol {
                z = zp;
                lam_lin = lp;
                residuals = rp;
                converged = true;
            }
        }
    }
    let x = &z * norm.kappa;
    let objective = problem.objective(&x);
    let (linear_duals, cap_duals) = expand_duals(&norm, &lam_lin, &lam_cap);
    let status = if converged && residuals.max() <= options.tol {
        QcqpStatus::Optimal
    } else {
        QcqpStatus::MaxIterations
    };
    let _ = norm.obj_scale;
    Ok(QcqpSolution {
        status,
        x,
        objective,
        residuals,
        linear_duals,
        cap_duals,
        iterations,
        infeasibility: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// minimize |b|^2 s.t. |Im b| <= (Re b - gamma) tan(pi/4), optional cap.
    pub(crate) fn toy(gamma: f64, cap: Option<f64>) -> QcqpProblem {
        QcqpProblem::new(
            vec![DMatrix::identity(2, 2)],
            DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, 1.0]),
            DVector::from_vec(vec![gamma, gamma]),
            cap.map(|c| vec![c]),
        )
        .unwrap()
    }

    #[test]
    fn toy_vertex_optimum() {
        let s = solve_qcqp(&toy(1.0, None), &QcqpOptions::default()).unwrap();
        assert_eq!(s.status, QcqpStatus::Optimal);
        assert!((s.objective - 1.0).abs() < 1e-12, "{}", s.objective);
        assert!((s.x[0] - 1.0).abs() < 1e-12 && s.x[1].abs() < 1e-12);
        assert!(s.residuals.max() <= 1e-7);

        let s2 = solve_qcqp(&toy(2.0, None), &QcqpOptions::default()).unwrap();
        assert!((s2.objective - 4.0).abs() < 1e-12);
    }

    #[test]
    fn toy_cap_infeasible() {
        let s = solve_qcqp(&toy(2.0, Some(1.0)), &QcqpOptions::default()).unwrap();
        assert_eq!(s.status, QcqpStatus::Infeasible);
        let rep = s.infeasibility.unwrap();
        let p = rep.uncapped_powers.unwrap();
        assert!((p[0] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn toy_with_slack_cap_is_unaffected() {
        let s = solve_qcqp(&toy(2.0, Some(4.5)), &QcqpOptions::default()).unwrap();
        assert_eq!(s.status, QcqpStatus::Optimal);
        assert!((s.objective - 4.0).abs() < 1e-9);
    }

    #[test]
    fn binding_cap_redistributes_power() {
        // Two blocks, one row x0 + x1 >= 2 with weights: block 0 cheap but capped.
        let p = QcqpProblem::new(
            vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 4.0)],
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_element(1, 2.0),
            Some(vec![1.0, 100.0]),
        )
        .unwrap();
        // uncapped optimum x0 = 1.6, x1 = 0.4 (power 2.56 > cap 1)
        // capped optimum: x0 = 1, x1 = 1 -> 1 + 4 = 5
        let s = solve_qcqp(&p, &QcqpOptions::default()).unwrap();
        assert_eq!(s.status, QcqpStatus::Optimal, "{:?}", s.residuals);
        assert!((s.objective - 5.0).abs() < 1e-6, "{}", s.objective);
        assert!(s.cap_duals[0] > 0.0);
        let again = verify_kkt(&p, &s);
        assert!(again.max() <= 1e-7, "{again:?}");
    }

    #[test]
    fn kkt_checks_detect_perturbation() {
        let p = toy(1.0, None);
        let s = solve_qcqp(&p, &QcqpOptions::default()).unwrap();
        assert!(verify_kkt(&p, &s).max() <= 1e-7);
        let mut bumped = s.clone();
        bumped.x[0] += 1e-2;
        assert!(verify_kkt(&p, &bumped).stationarity > 1e-4);
        let mut interior = s.clone();
        interior.x = DVector::from_vec(vec![3.0, 0.5]);
        assert!(verify_kkt(&p, &interior).complementarity > 1e-4);
    }

    #[test]
    fn infeasible_rows() {
        // x >= 1 and -x >= 0
        let p = QcqpProblem::new(
            vec![DMatrix::identity(1, 1)],
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DVector::from_vec(vec![1.0, 0.0]),
            None,
        )
        .unwrap();
        let s = solve_qcqp(&p, &QcqpOptions::default()).unwrap();
        assert_eq!(s.status, QcqpStatus::Infeasible);
        assert!(s.infeasibility.unwrap().linear_margin.unwrap() <= 1e-9);
    }

    #[test]
    fn rejects_indefinite_blocks() {
        let err = QcqpProblem::new(
            vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])],
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            None,
        );
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn singular_objective_is_handled() {
        // duplicated column: H = [[1,1],[1,1]] in each of Re/Im
        let h = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 1.0, 0.0, 0.0, //
                1.0, 1.0, 0.0, 0.0, //
                0.0, 0.0, 1.0, 1.0, //
                0.0, 0.0, 1.0, 1.0,
            ],
        );
        // Re(b0 + b1) - Im(b0 + b1) >= 1, Re + Im >= 1
        let lin = DMatrix::from_row_slice(2, 4, &[1.0, 1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 1.0]);
        let p = QcqpProblem::new(vec![h], lin, DVector::from_vec(vec![1.0, 1.0]), Some(vec![10.0])).unwrap();
        let s = solve_qcqp(&p, &QcqpOptions::default()).unwrap();
        assert_eq!(s.status, QcqpStatus::Optimal, "{:?}", s.residuals);
        assert!((s.objective - 1.0).abs() < 1e-7);
    }
}
