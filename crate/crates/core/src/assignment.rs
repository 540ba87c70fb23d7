//! RF-chain and code assignment (stage one).
//!
//! Both variants maximize `sum_rk alpha_rk q_rk + epsilon * tau` where `tau`
//! is the smallest per-user collected gain. Rows are RF chains (continuous
//! analog) or codebook codes (codebook analog); the codebook variant also
//! caps the number of selected codes per BS at its RF-chain count.
//!
//! Gains are divided by their maximum before the MILP is built; the
//! objective is homogeneous in `(q, tau)`, so the optimal assignment does
//! not depend on this scaling and results are reported on the original scale.

use nalgebra::DMatrix;

use crate::analog::Codebook;
use crate::error::{Error, Result};
use crate::milp::{solve_binary_milp, MilpModel, MilpOptions, MilpStatus, Sense};
use crate::model::{ChannelSet, RfChainMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignmentMode {
    Continuous,
    Codebook,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AssignmentMethod {
    #[default]
    Exact,
    Heuristic,
}

#[derive(Debug, Clone, Default)]
pub struct AssignmentOptions {
    pub method: AssignmentMethod,
    pub milp: MilpOptions,
}

/// Row gains for assignment: `q[(row, user)]` and the BS owning each row.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix {
    pub mode: AssignmentMode,
    pub q: DMatrix<f64>,
    pub owner: Vec<usize>,
}

impl GainMatrix {
    pub fn rows(&self) -> usize {
        self.q.nrows()
    }

    pub fn users(&self) -> usize {
        self.q.ncols()
    }
}

/// `q_rk = ||h_{g_r,k}||^2`.
pub fn gain_matrix_continuous(channels: &ChannelSet, chains: &RfChainMap) -> Result<GainMatrix> {
    if let Some(&(g, _)) = chains.owner.iter().find(|(g, _)| *g >= channels.num_bs()) {
        return Err(Error::Shape(format!("chain owner BS {g} not in channel set")));
    }
    let k = channels.num_users();
    let q = DMatrix::from_fn(chains.total, k, |r, u| {
        channels.get(chains.bs_of(r), u).norm_squared()
    });
    Ok(GainMatrix {
        mode: AssignmentMode::Continuous,
        q,
        owner: chains.owner.iter().map(|o| o.0).collect(),
    })
}

/// `q~_ck = |c_c^T h_{g_c,k}|^2`.
pub fn gain_matrix_codebook(channels: &ChannelSet, codebook: &Codebook) -> Result<GainMatrix> {
    let k = channels.num_users();
    let mut q = DMatrix::zeros(codebook.len(), k);
    for (c, code) in codebook.columns.iter().enumerate() {
        let g = codebook.owner[c];
        if g >= channels.num_bs() || code.len() != channels.antennas(g) {
            return Err(Error::Shape(format!(
                "code {c} of length {} does not match BS {g}",
                code.len()
            )));
        }
        for u in 0..k {
            q[(c, u)] = (code.transpose() * channels.get(g, u))[(0, 0)].norm_sqr();
        }
    }
    Ok(GainMatrix {
        mode: AssignmentMode::Codebook,
        q,
        owner: codebook.owner.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignmentStatus {
    Optimal,
    GapLimited,
    Heuristic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    pub mode: AssignmentMode,
    /// `alpha[row][user]`.
    pub alpha: Vec<Vec<bool>>,
    pub tau: f64,
    pub objective: f64,
    pub status: AssignmentStatus,
    pub gap: f64,
    pub owner: Vec<usize>,
}

impl AssignmentResult {
    /// User served by `row`, if any.
    pub fn user_of(&self, row: usize) -> Option<usize> {
        self.alpha[row].iter().position(|&a| a)
    }

    pub fn user_gains(&self, q: &DMatrix<f64>) -> Vec<f64> {
        user_gains(&self.alpha, q)
    }

    /// Rows assigned at each BS.
    pub fn per_bs_counts(&self, num_bs: usize) -> Vec<usize> {
        let mut counts = vec![0; num_bs];
        for (r, row) in self.alpha.iter().enumerate() {
            if row.iter().any(|&a| a) {
                counts[self.owner[r]] += 1;
            }
        }
        counts
    }

    /// Checks the four structural constraints; returns a description of
    /// the first violation.
    pub fn check(&self, q: &DMatrix<f64>, caps: Option<&[usize]>) -> std::result::Result<(), String> {
        for (r, row) in self.alpha.iter().enumerate() {
            if row.iter().filter(|&&a| a).count() > 1 {
                return Err(format!("row {r} serves several users"));
            }
        }
        let gains = self.user_gains(q);
        for (k, g) in gains.iter().enumerate() {
            if !self.alpha.iter().any(|row| row[k]) {
                return Err(format!("user {k} has no row"));
            }
            if self.tau > g + 1e-12 * (1.0 + g.abs()) {
                return Err(format!("tau {} above gain {g} of user {k}", self.tau));
            }
        }
        if let Some(caps) = caps {
            for (g, (&n, &cap)) in self.per_bs_counts(caps.len()).iter().zip(caps).enumerate() {
                if n > cap {
                    return Err(format!("BS {g} selects {n} rows over cap {cap}"));
                }
            }
        }
        Ok(())
    }
}

fn user_gains(alpha: &[Vec<bool>], q: &DMatrix<f64>) -> Vec<f64> {
    (0..q.ncols())
        .map(|k| {
            alpha
                .iter()
                .enumerate()
                .filter(|(_, row)| row[k])
                .map(|(r, _)| q[(r, k)])
                .sum()
        })
        .collect()
}

/// Objective `sum alpha q + epsilon * min_k gain_k` and `tau`.
pub fn assignment_objective(alpha: &[Vec<bool>], q: &DMatrix<f64>, epsilon: f64) -> (f64, f64) {
    let gains = user_gains(alpha, q);
    let tau = gains.iter().copied().fold(f64::INFINITY, f64::min);
    let tau = if tau.is_finite() { tau } else { 0.0 };
    (gains.iter().sum::<f64>() + epsilon * tau, tau)
}

fn check_inputs(gains: &GainMatrix, epsilon: f64, caps: Option<&[usize]>) -> Result<()> {
    let (rows, k) = gains.q.shape();
    if !(epsilon >= 0.0) {
        return Err(Error::Domain(format!("epsilon {epsilon} must be >= 0")));
    }
    if gains.q.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::Domain("gains must be finite and nonnegative".into()));
    }
    if gains.owner.len() != rows {
        return Err(Error::Shape("owner map length differs from row count".into()));
    }
    let capacity = match caps {
        None => rows,
        Some(caps) => {
            if let Some(&g) = gains.owner.iter().find(|&&g| g >= caps.len()) {
                return Err(Error::Shape(format!("row owner BS {g} has no cap")));
            }
            (0..caps.len())
                .map(|g| caps[g].min(gains.owner.iter().filter(|&&o| o == g).count()))
                .sum()
        }
    };
    if capacity < k {
        return Err(Error::AssignmentInfeasible(format!(
            "{capacity} assignable rows for {k} users"
        )));
    }
    Ok(())
}

/// Builds the assignment MILP on normalized gains. Variable `r * K + k` is
/// `alpha_rk`; the last variable is `tau`.
pub fn build_assignment_model(gains: &GainMatrix, epsilon: f64, caps: Option<&[usize]>) -> MilpModel {
    let (rows, k) = gains.q.shape();
    let scale = gains.q.max();
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let qn = &gains.q / scale;
    let mut model = MilpModel::new();
    for r in 0..rows {
        for u in 0..k {
            model.add_binary(qn[(r, u)]);
        }
    }
    let tau = model.add_continuous(epsilon, 0.0, f64::INFINITY);
    let var = |r: usize, u: usize| r * k + u;
    for r in 0..rows {
        model.add_constraint((0..k).map(|u| (var(r, u), 1.0)).collect(), Sense::Le, 1.0);
    }
    for u in 0..k {
        model.add_constraint((0..rows).map(|r| (var(r, u), 1.0)).collect(), Sense::Ge, 1.0);
    }
    for u in 0..k {
        let mut coeffs: Vec<(usize, f64)> = (0..rows)
            .filter(|&r| qn[(r, u)] != 0.0)
            .map(|r| (var(r, u), qn[(r, u)]))
            .collect();
        coeffs.push((tau, -1.0));
        model.add_constraint(coeffs, Sense::Ge, 0.0);
    }
    if let Some(caps) = caps {
        for (g, &cap) in caps.iter().enumerate() {
            let coeffs: Vec<_> = (0..rows)
                .filter(|&r| gains.owner[r] == g)
                .flat_map(|r| (0..k).map(move |u| (var(r, u), 1.0)))
                .collect();
            if !coeffs.is_empty() {
                model.add_constraint(coeffs, Sense::Le, cap as f64);
            }
        }
    }
    model
}

fn alpha_to_values(alpha: &[Vec<bool>], tau_normalized: f64) -> Vec<f64> {
    let mut v: Vec<f64> = alpha
        .iter()
        .flat_map(|row| row.iter().map(|&a| if a { 1.0 } else { 0.0 }))
        .collect();
    v.push(tau_normalized);
    v
}

fn solve(
    gains: &GainMatrix,
    epsilon: f64,
    caps: Option<&[usize]>,
    options: &AssignmentOptions,
) -> Result<AssignmentResult> {
    check_inputs(gains, epsilon, caps)?;
    let heuristic = greedy_assignment(gains, epsilon, caps);
    if options.method == AssignmentMethod::Heuristic {
        return Ok(heuristic);
    }
    let (rows, k) = gains.q.shape();
    let model = build_assignment_model(gains, epsilon, caps);
    let scale = gains.q.max();
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let mut milp_opts = options.milp.clone();
    if milp_opts.incumbent.is_none() {
        milp_opts.incumbent = Some(alpha_to_values(&heuristic.alpha, heuristic.tau / scale));
    }
    let sol = solve_binary_milp(&model, &milp_opts)?;
    let status = match sol.status {
        MilpStatus::Optimal => AssignmentStatus::Optimal,
        MilpStatus::GapLimited => AssignmentStatus::GapLimited,
        MilpStatus::Infeasible => {
            return Err(Error::AssignmentInfeasible("assignment MILP is infeasible".into()))
        }
    };
    let alpha: Vec<Vec<bool>> = (0..rows)
        .map(|r| (0..k).map(|u| sol.values[r * k + u] > 0.5).collect())
        .collect();
    let (objective, tau) = assignment_objective(&alpha, &gains.q, epsilon);
    Ok(AssignmentResult {
        mode: gains.mode,
        alpha,
        tau,
        objective,
        status,
        gap: sol.gap,
        owner: gains.owner.clone(),
    })
}

/// Continuous-analog assignment: every user gets at least one chain, no
/// chain serves two users.
pub fn solve_rf_assignment(
    gains: &GainMatrix,
    epsilon: f64,
    options: &AssignmentOptions,
) -> Result<AssignmentResult> {
    solve(gains, epsilon, None, options)
}

/// Codebook assignment with at most `caps[g]` codes selected at BS `g`.
pub fn solve_code_assignment(
    gains: &GainMatrix,
    epsilon: f64,
    caps: &[usize],
    options: &AssignmentOptions,
) -> Result<AssignmentResult> {
    solve(gains, epsilon, Some(caps), options)
}

/// Greedy seeding plus single-row local search. Feasibility preconditions
/// are the same as for the exact solvers.
pub fn heuristic_assignment(
    gains: &GainMatrix,
    epsilon: f64,
    caps: Option<&[usize]>,
) -> Result<AssignmentResult> {
    check_inputs(gains, epsilon, caps)?;
    Ok(greedy_assignment(gains, epsilon, caps))
}

fn greedy_assignment(gains: &GainMatrix, epsilon: f64, caps: Option<&[usize]>) -> AssignmentResult {
    let q = &gains.q;
    let (rows, k) = q.shape();
    let num_bs = gains.owner.iter().map(|g| g + 1).max().unwrap_or(0);
    let mut remaining: Vec<usize> = match caps {
        Some(c) => c.to_vec(),
        None => vec![usize::MAX; num_bs],
    };
    let mut choice: Vec<Option<usize>> = vec![None; rows];
    let mut covered = vec![false; k];

    // Seed: one row per user, best remaining (row, user) pair first.
    for _ in 0..k {
        let mut best: Option<(usize, usize)> = None;
        for r in 0..rows {
            if choice[r].is_some() || remaining[gains.owner[r]] == 0 {
                continue;
            }
            for u in 0..k {
                if covered[u] {
                    continue;
                }
                if best.is_none_or(|(br, bu)| q[(r, u)] > q[(br, bu)]) {
                    best = Some((r, u));
                }
            }
        }
        let Some((r, u)) = best else { break };
        choice[r] = Some(u);
        covered[u] = true;
        remaining[gains.owner[r]] -= 1;
    }

    // Residual rows by descending best gain while caps allow.
    loop {
        let mut best: Option<(usize, usize)> = None;
        for r in 0..rows {
            if choice[r].is_some() || remaining[gains.owner[r]] == 0 {
                continue;
            }
            for u in 0..k {
                if best.is_none_or(|(br, bu)| q[(r, u)] > q[(br, bu)]) {
                    best = Some((r, u));
                }
            }
        }
        let Some((r, u)) = best else { break };
        choice[r] = Some(u);
        remaining[gains.owner[r]] -= 1;
    }

    let to_alpha = |choice: &[Option<usize>]| -> Vec<Vec<bool>> {
        choice
            .iter()
            .map(|c| (0..k).map(|u| *c == Some(u)).collect())
            .collect()
    };
    let feasible = |choice: &[Option<usize>]| -> bool {
        let mut cov = vec![false; k];
        let mut used = vec![0usize; num_bs];
        for (r, c) in choice.iter().enumerate() {
            if let Some(u) = c {
                cov[*u] = true;
                used[gains.owner[r]] += 1;
            }
        }
        cov.iter().all(|&c| c)
            && caps.is_none_or(|caps| used.iter().zip(caps).all(|(n, c)| n <= c))
    };

    // 1-swap local search: move one row to another user, drop it, or hand
    // a selection over to an idle row of the same BS.
    let mut current = assignment_objective(&to_alpha(&choice), q, epsilon).0;
    loop {
        let mut improved = false;
        for r in 0..rows {
            let mut options: Vec<Vec<Option<usize>>> = Vec::new();
            for target in std::iter::once(None).chain((0..k).map(Some)) {
                if target != choice[r] {
                    let mut c = choice.clone();
                    c[r] = target;
                    options.push(c);
                }
            }
            if let Some(u) = choice[r] {
                for r2 in 0..rows {
                    if r2 != r && choice[r2].is_none() && gains.owner[r2] == gains.owner[r] {
                        let mut c = choice.clone();
                        c[r] = None;
                        c[r2] = Some(u);
                        options.push(c);
                    }
                }
            }
            for cand in options {
                if !feasible(&cand) {
                    continue;
                }
                let obj = assignment_objective(&to_alpha(&cand), q, epsilon).0;
                if obj > current + 1e-12 * (1.0 + current.abs()) {
                    choice = cand;
                    current = obj;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }

    let alpha = to_alpha(&choice);
    let (objective, tau) = assignment_objective(&alpha, q, epsilon);
    AssignmentResult {
        mode: gains.mode,
        alpha,
        tau,
        objective,
        status: AssignmentStatus::Heuristic,
        gap: f64::NAN,
        owner: gains.owner.clone(),
    }
}
