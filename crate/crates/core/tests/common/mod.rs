//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the solvers under test.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use hetnet_ci::assignment::{AssignmentMode, GainMatrix};
use hetnet_ci::convex::QcqpProblem;
use hetnet_ci::digital::build_ci_problem;
use hetnet_ci::experiment::draw_symbols;
use hetnet_ci::model::{BsClass, BsSpec, ChannelSet, Margins, NetworkConfig, Users};
use hetnet_ci::schemes::{CoordinatedPipeline, PipelineOptions, SchemeId};
use hetnet_ci::C64;

/// Minimizes `sum_g w_g x_g^T H_g x_g` subject to `A x >= b` by Hildreth's
/// dual coordinate ascent, after whitening each block on the range of
/// `H_g`. Rows must vanish on the null space of their block.
pub fn hildreth(blocks: &[DMatrix<f64>], weights: &[f64], a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n: usize = blocks.iter().map(|h| h.nrows()).sum();
    // x = T u with objective ||u||^2
    let mut t = DMatrix::zeros(n, 0);
    let mut off = 0;
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for (h, &w) in blocks.iter().zip(weights) {
        let d = h.nrows();
        let eig = h.clone().symmetric_eigen();
        let top = eig.eigenvalues.amax();
        for i in 0..d {
            let l = eig.eigenvalues[i];
            if l > 1e-10 * top {
                let mut c = DVector::zeros(n);
                let v = eig.eigenvectors.column(i) / (l * w).sqrt();
                c.rows_mut(off, d).copy_from(&v);
                cols.push(c);
            }
        }
        off += d;
    }
    if !cols.is_empty() {
        t = DMatrix::from_columns(&cols);
    }
    let at = a * &t;
    let m = at.nrows();
    let diag: Vec<f64> = (0..m).map(|i| at.row(i).norm_squared()).collect();
    let mut lam = vec![0.0; m];
    let mut u = DVector::zeros(at.ncols());
    for _ in 0..2_000_000 {
        let mut change = 0.0f64;
        for i in 0..m {
            if diag[i] == 0.0 {
                continue;
            }
            let r = (b[i] - (at.row(i) * &u)[(0, 0)]) / diag[i];
            let new = (lam[i] + r).max(0.0);
            let d = new - lam[i];
            if d != 0.0 {
                u += at.row(i).transpose() * d;
                lam[i] = new;
                change = change.max(d.abs() * diag[i].sqrt());
            }
        }
        if change < 1e-15 * (1.0 + u.norm()) {
            break;
        }
    }
    t * u
}

fn block_powers(blocks: &[DMatrix<f64>], x: &DVector<f64>) -> Vec<f64> {
    let mut off = 0;
    blocks
        .iter()
        .map(|h| {
            let d = h.nrows();
            let xg = x.rows(off, d);
            off += d;
            xg.dot(&(h * xg))
        })
        .collect()
}

/// Reference solution of the capped problem by cyclic bisection on the cap
/// multipliers of the Lagrangian `sum (1 + nu_g) x_g^T H_g x_g`. Returns
/// `None` when no multiplier brings some block under its cap.
pub fn qcqp_reference(
    blocks: &[DMatrix<f64>],
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    caps: Option<&[f64]>,
) -> Option<(DVector<f64>, f64)> {
    let g_count = blocks.len();
    let mut nu = vec![0.0; g_count];
    let solve = |nu: &[f64]| {
        let w: Vec<f64> = nu.iter().map(|v| 1.0 + v).collect();
        hildreth(blocks, &w, a, b)
    };
    let mut x = solve(&nu);
    if let Some(caps) = caps {
        for _cycle in 0..200 {
            let mut moved = 0.0f64;
            for g in 0..g_count {
                let old = nu[g];
                let mut trial = nu.clone();
                trial[g] = 0.0;
                if block_powers(blocks, &solve(&trial))[g] <= caps[g] {
                    nu[g] = 0.0;
                } else {
                    let mut hi = 1.0;
                    loop {
                        trial[g] = hi;
                        if block_powers(blocks, &solve(&trial))[g] <= caps[g] {
                            break;
                        }
                        hi *= 4.0;
                        if hi > 1e9 {
                            return None;
                        }
                    }
                    let mut lo = 0.0;
                    for _ in 0..80 {
                        let mid = 0.5 * (lo + hi);
                        trial[g] = mid;
                        if block_powers(blocks, &solve(&trial))[g] <= caps[g] {
                            hi = mid;
                        } else {
                            lo = mid;
                        }
                    }
                    nu[g] = hi;
                }
                moved = moved.max((nu[g] - old).abs() / (1.0 + old));
            }
            if moved < 1e-12 {
                break;
            }
        }
        x = solve(&nu);
    }
    let obj = block_powers(blocks, &x).iter().sum();
    Some((x, obj))
}

/// Best value of `sum alpha q + eps * min_k gain_k` over every row choice
/// (one user or none per row), under optional per-BS row caps. `None` when
/// no choice covers every user.
pub fn brute_force_assignment(q: &DMatrix<f64>, owner: &[usize], eps: f64, caps: Option<&[usize]>) -> Option<f64> {
    let (rows, k) = q.shape();
    let mut choice = vec![0usize; rows]; // 0 = idle, u + 1 = user u
    let mut best: Option<f64> = None;
    loop {
        let mut gains = vec![0.0; k];
        let mut covered = vec![false; k];
        let mut used = vec![0usize; owner.iter().max().map_or(0, |g| g + 1)];
        for r in 0..rows {
            if choice[r] > 0 {
                let u = choice[r] - 1;
                gains[u] += q[(r, u)];
                covered[u] = true;
                used[owner[r]] += 1;
            }
        }
        let caps_ok = caps.is_none_or(|c| used.iter().zip(c).all(|(n, c)| n <= c));
        if caps_ok && covered.iter().all(|&c| c) {
            let tau = gains.iter().copied().fold(f64::INFINITY, f64::min);
            let v = gains.iter().sum::<f64>() + eps * tau;
            if best.is_none_or(|b| v > b) {
                best = Some(v);
            }
        }
        // odometer
        let mut r = 0;
        loop {
            if r == rows {
                return best;
            }
            choice[r] += 1;
            if choice[r] <= k {
                break;
            }
            choice[r] = 0;
            r += 1;
        }
    }
}

/// Greedy association by repeated global maximum: the strongest remaining
/// (BS, user) link among unserved users and BSs with free chains.
pub fn greedy_association(channels: &ChannelSet, chains: &[usize]) -> Vec<usize> {
    let (g_count, k_count) = (channels.num_bs(), channels.num_users());
    let mut free = chains.to_vec();
    let mut serving = vec![usize::MAX; k_count];
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for g in 0..g_count {
            if free[g] == 0 {
                continue;
            }
            for k in 0..k_count {
                if serving[k] != usize::MAX {
                    continue;
                }
                let v = channels.get(g, k).norm_squared();
                // strict comparison keeps the lowest (g, k) among ties
                if best.is_none_or(|(bv, _, _)| v > bv) {
                    best = Some((v, g, k));
                }
            }
        }
        match best {
            Some((_, g, k)) => {
                serving[k] = g;
                free[g] -= 1;
            }
            None => return serving,
        }
    }
}

/// Unit-variance circular Gaussian channels with the given array sizes.
pub fn random_channels<R: Rng>(rng: &mut R, antennas: &[usize], users: usize) -> ChannelSet {
    let v = antennas
        .iter()
        .map(|&n| {
            (0..users)
                .map(|_| {
                    DVector::from_fn(n, |_, _| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        C64::new(re, im) / 2f64.sqrt()
                    })
                })
                .collect()
        })
        .collect();
    ChannelSet::new(v).expect("consistent shapes")
}

/// Small network with the given per-BS antennas and chains, unit noise.
pub fn small_config(antennas: &[usize], chains: &[usize], users: usize, order: usize) -> NetworkConfig {
    let mut cfg = NetworkConfig::desk();
    cfg.bs_list = antennas
        .iter()
        .zip(chains)
        .enumerate()
        .map(|(g, (&n, &r))| BsSpec {
            class: if g == 0 { BsClass::Macro } else { BsClass::Pico },
            antennas: n,
            rf_chains: r,
            power_budget: 1.0,
            position: [0.1 * g as f64, 0.0],
        })
        .collect();
    cfg.users = Users::Count(users);
    cfg.noise_power = 1.0;
    cfg.modulation_order = order;
    cfg.margins = Margins::Uniform(1.0);
    cfg
}

/// Perpendicular distance of `y s*` from the nearer decision boundary of
/// the wedge around the positive real axis, minus the margin `gamma`.
pub fn wedge_slack(y: C64, s: C64, gamma: f64, order: usize) -> f64 {
    let theta = std::f64::consts::PI / order as f64;
    let c = y * s.conj();
    if order == 2 {
        return c.re - gamma / theta.sin();
    }
    // perpendicular distances to the two decision boundaries through the origin
    let d1 = c.re * theta.sin() - c.im * theta.cos();
    let d2 = c.re * theta.sin() + c.im * theta.cos();
    d1.min(d2) - gamma
}

/// Random instance with at most 12 binaries; codebook instances get caps.
pub fn random_assignment_instance(rng: &mut ChaCha8Rng) -> (GainMatrix, f64, Option<Vec<usize>>) {
    let shapes: [(usize, usize); 5] = [(3, 2), (4, 2), (4, 3), (6, 2), (3, 3)];
    let (rows, k) = shapes[rng.random_range(0..shapes.len())];
    let num_bs = rng.random_range(1..=rows.min(3));
    let owner: Vec<usize> = (0..rows).map(|r| r * num_bs / rows).collect();
    let codebook = rng.random_bool(0.5);
    let mut q = DMatrix::from_fn(rows, k, |_, _| rng.random_range(0.0..10.0));
    if !codebook {
        // continuous gains depend only on the owning BS
        for r in 1..rows {
            if owner[r] == owner[r - 1] {
                for u in 0..k {
                    q[(r, u)] = q[(r - 1, u)];
                }
            }
        }
    }
    // occasional exact ties
    if rng.random_bool(0.2) {
        q[(0, 0)] = q[(rows - 1, k - 1)];
    }
    let eps = [0.0, 0.5, 1.0, 3.0][rng.random_range(0..4)];
    let mode = if codebook {
        AssignmentMode::Codebook
    } else {
        AssignmentMode::Continuous
    };
    let caps = codebook.then(|| {
        let mut caps: Vec<usize> = (0..num_bs)
            .map(|g| {
                let n = owner.iter().filter(|&&o| o == g).count();
                rng.random_range(1..=n)
            })
            .collect();
        // keep total capacity at least K
        let mut g = 0;
        while caps.iter().sum::<usize>() < k {
            let n = owner.iter().filter(|&&o| o == g).count();
            if caps[g] < n {
                caps[g] += 1;
            }
            g = (g + 1) % num_bs;
        }
        caps
    });
    (GainMatrix { mode, q, owner }, eps, caps)
}

/// Random CI problem from a small two-BS network; half of them get caps
/// that bind.
pub fn random_ci_instance(seed: u64) -> QcqpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (antennas, chains, users) = if seed % 2 == 0 {
        ([4, 2], [2, 1], 2)
    } else {
        ([4, 4], [2, 2], 3)
    };
    let cfg = small_config(&antennas, &chains, users, 4);
    let channels = random_channels(&mut rng, &antennas, users);
    let scheme = if seed % 3 == 0 {
        SchemeId::CiCodebook
    } else {
        SchemeId::CiContinuous
    };
    let pipe = CoordinatedPipeline::prepare(scheme, &cfg, &channels, &PipelineOptions::default()).unwrap();
    let symbols = draw_symbols(&mut rng, users, 4);
    let margins: Vec<f64> = (0..users).map(|_| rng.random_range(0.5..2.0)).collect();
    let mut p = build_ci_problem(&pipe.analog, &channels, &symbols, &margins, None).unwrap();
    if seed % 4 < 2 {
        // caps from a point that overweights block 0: feasible, and block 0's
        // cap sits below its uncapped power
        let x = hildreth(&p.blocks, &[6.0, 1.0], &p.lin, &p.rhs);
        let pw = p.block_values(&x);
        p.caps = Some(vec![pw[0] * 1.05 + 1e-9, pw[1] * 1.05 + 1e-9]);
    }
    p
}
