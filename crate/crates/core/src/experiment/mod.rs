//! Monte Carlo SER/power harness, backhaul overhead and CSV output.
//!
//! A sweep runs every scheme over a grid. CI schemes (coordinated and
//! uncoordinated) sweep the margin, given as a TNR `Gamma^2 / sigma^2` in
//! dB; ZF schemes sweep the total power budget in dBm, split across BSs in
//! proportion to the configured budgets.
//!
//! Each trial draws user positions and channels from a stream keyed by
//! `(seed, trial)` only, so every scheme and grid point sees the same
//! channels. Symbols and noise come from a stream keyed by
//! `(seed, scheme, grid value, trial)`. Trials run in parallel and are
//! aggregated in trial order, so results do not depend on the thread count.
//!
//! A slot whose CI problem is infeasible counts all affected users as
//! symbol errors and is excluded from the power average.

pub mod config;
pub mod overhead;

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::channel::{generate_channels, place_users};
use crate::error::{Error, Result};
use crate::model::{
    dbm_to_watts, detect_psk, watts_to_dbm, ChannelSet, CiGeometry, DigitalMethod,
    NetworkConfig, SymbolVector, C64,
};
use crate::schemes::{CoordinatedPipeline, PipelineOptions, SchemeId, UncoordinatedPipeline};

pub use config::{format_config, load_config, parse_config};
pub use overhead::{backhaul_overhead, overhead_from_dims, OverheadReport, SchemeFamily};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVar {
    Margin,
    Budget,
}

impl SweepVar {
    pub fn for_scheme(scheme: SchemeId) -> SweepVar {
        match scheme.digital_method() {
            DigitalMethod::Ci => SweepVar::Margin,
            DigitalMethod::Zf => SweepVar::Budget,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SweepVar::Margin => "margin",
            SweepVar::Budget => "budget",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub schemes: Vec<SchemeId>,
    /// TNR values in dB for CI schemes.
    pub margin_grid_db: Vec<f64>,
    /// Total budgets in dBm for ZF schemes.
    pub budget_grid_dbm: Vec<f64>,
    pub trials: usize,
    pub symbols_per_trial: usize,
    pub seed: u64,
}

impl SweepSpec {
    pub fn grid(&self, scheme: SchemeId) -> &[f64] {
        match SweepVar::for_scheme(scheme) {
            SweepVar::Margin => &self.margin_grid_db,
            SweepVar::Budget => &self.budget_grid_dbm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(Error::Config("no schemes selected".into()));
        }
        if self.trials == 0 || self.symbols_per_trial == 0 {
            return Err(Error::Config("trials and symbols per trial must be >= 1".into()));
        }
        for &s in &self.schemes {
            let grid = self.grid(s);
            if grid.is_empty() {
                return Err(Error::Config(format!("empty {} grid for {s}", SweepVar::for_scheme(s).as_str())));
            }
            if grid.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("grid values must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Pooled symbol-error counter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SerAccumulator {
    pub errors: u64,
    pub symbols: u64,
}

impl SerAccumulator {
    pub fn record(&mut self, sent: usize, detected: usize) {
        self.symbols += 1;
        if sent != detected {
            self.errors += 1;
        }
    }

    pub fn record_erasures(&mut self, n: usize) {
        self.symbols += n as u64;
        self.errors += n as u64;
    }

    pub fn merge(&mut self, other: &SerAccumulator) {
        self.errors += other.errors;
        self.symbols += other.symbols;
    }

    pub fn ser(&self) -> f64 {
        if self.symbols == 0 {
            f64::NAN
        } else {
            self.errors as f64 / self.symbols as f64
        }
    }

    /// `sqrt(p (1 - p) / n)`.
    pub fn stderr(&self) -> f64 {
        let p = self.ser();
        (p * (1.0 - p) / self.symbols as f64).sqrt()
    }
}

/// One trial at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub slots: usize,
    pub feasible_slots: usize,
    /// Sum of total transmit power over feasible slots, watts.
    pub power_sum: f64,
    pub per_bs_power_sum: Vec<f64>,
    /// Smallest CI slack over users and feasible slots (CI schemes).
    pub min_slack: f64,
    pub counts: SerAccumulator,
    /// Sum of the linear effective TNR over feasible slots.
    pub tnr_sum: f64,
    /// Why the block-level stages failed, if they did.
    pub failure: Option<String>,
}

impl TrialRecord {
    fn new(trial: usize, num_bs: usize) -> Self {
        TrialRecord {
            trial,
            slots: 0,
            feasible_slots: 0,
            power_sum: 0.0,
            per_bs_power_sum: vec![0.0; num_bs],
            min_slack: f64::INFINITY,
            counts: SerAccumulator::default(),
            tnr_sum: 0.0,
            failure: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub scheme: SchemeId,
    pub sweep_var: SweepVar,
    pub sweep_value: f64,
    pub tnr_db: f64,
    pub mean_power_w: f64,
    pub mean_power_dbm: f64,
    /// Standard error of `mean_power_dbm` from the spread of per-trial means.
    pub power_stderr_db: f64,
    pub ser: f64,
    pub ser_stderr: f64,
    pub counts: SerAccumulator,
    pub feasibility_rate: f64,
    pub min_slack: f64,
    pub trials: usize,
    pub symbols_per_trial: usize,
    pub seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x6A09_E667_F3BC_C908, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

const CHANNEL_TAG: u64 = 1;
const SYMBOL_TAG: u64 = 2;

pub fn channel_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(&[CHANNEL_TAG, seed, trial as u64]))
}

pub fn symbol_rng(seed: u64, scheme: SchemeId, value: f64, trial: usize) -> ChaCha8Rng {
    let tag = SchemeId::ALL.iter().position(|&s| s == scheme).unwrap_or(0) as u64;
    ChaCha8Rng::seed_from_u64(stream_seed(&[SYMBOL_TAG, seed, tag, value.to_bits(), trial as u64]))
}

/// Positions and channels of one trial.
pub fn draw_trial_channels(config: &NetworkConfig, seed: u64, trial: usize) -> Result<ChannelSet> {
    let mut rng = channel_rng(seed, trial);
    let positions = place_users(config, &config.geometry, &mut rng)?;
    generate_channels(config, &positions, &mut rng)
}

pub fn draw_symbols<R: Rng + ?Sized>(rng: &mut R, users: usize, order: usize) -> SymbolVector {
    let idx = (0..users).map(|_| rng.random_range(0..order)).collect();
    SymbolVector::from_indices(idx, order).expect("indices drawn inside the constellation")
}

/// Circular Gaussian sample of variance `noise_power`.
pub fn draw_noise<R: Rng + ?Sized>(rng: &mut R, noise_power: f64) -> C64 {
    let s = (noise_power / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * s, im * s)
}

/// Uniform margin `Gamma = sigma 10^(tnr_db / 20)`.
pub fn margin_from_tnr_db(config: &NetworkConfig, tnr_db: f64) -> f64 {
    config.noise_power.sqrt() * 10f64.powf(tnr_db / 20.0)
}

/// Per-BS budgets for a total of `total_dbm`, proportional to the
/// configured budgets.
pub fn budgets_for_total(config: &NetworkConfig, total_dbm: f64) -> Vec<f64> {
    let base = config.budgets();
    let sum: f64 = base.iter().sum();
    let total = dbm_to_watts(total_dbm);
    base.iter().map(|b| total * b / sum).collect()
}

enum Prepared {
    Coordinated(CoordinatedPipeline),
    Uncoordinated(UncoordinatedPipeline),
}

fn is_infeasible(e: &Error) -> bool {
    matches!(e.root(), Error::CiInfeasible(_))
}

fn sin_theta(order: usize) -> f64 {
    match order {
        2 => 1.0,
        4 => std::f64::consts::FRAC_1_SQRT_2,
        m => (std::f64::consts::PI / m as f64).sin(),
    }
}

struct SlotContext<'a> {
    config: &'a NetworkConfig,
    channels: &'a ChannelSet,
    scheme: SchemeId,
    value: f64,
}

fn run_point(
    ctx: &SlotContext,
    prepared: &std::result::Result<Prepared, String>,
    slots: usize,
    seed: u64,
    trial: usize,
) -> Result<TrialRecord> {
    let cfg = ctx.config;
    let k_users = ctx.channels.num_users();
    let order = cfg.modulation_order;
    let mut rec = TrialRecord::new(trial, cfg.num_bs());
    let mut rng = symbol_rng(seed, ctx.scheme, ctx.value, trial);
    let margins = vec![margin_from_tnr_db(cfg, ctx.value); k_users];
    let budgets = cfg.budgets();
    let caps = cfg.ci_power_caps.then_some(budgets.as_slice());
    let zf_budgets = budgets_for_total(cfg, ctx.value);
    let geo = CiGeometry::new(order, &margins);
    for _ in 0..slots {
        let symbols = draw_symbols(&mut rng, k_users, order);
        rec.slots += 1;
        let pipe = match prepared {
            Ok(p) => p,
            Err(msg) => {
                rec.failure = Some(msg.clone());
                rec.counts.record_erasures(k_users);
                continue;
            }
        };
        let (received, erased, power, slack) = match pipe {
            Prepared::Coordinated(p) => {
                let sol = match ctx.scheme.digital_method() {
                    DigitalMethod::Ci => p.precode_ci(ctx.channels, &symbols, &margins, caps),
                    DigitalMethod::Zf => p.precode_zf(ctx.channels, &symbols, &zf_budgets, None),
                };
                match sol {
                    Ok(sol) => {
                        if let Some(beta) = sol.zf_amplitude {
                            rec.tnr_sum += (beta * sin_theta(order)).powi(2) / cfg.noise_power;
                        } else {
                            rec.tnr_sum += (geo.gamma[0] * sin_theta(order)).powi(2) / cfg.noise_power;
                        }
                        let slack = sol.ci_slack.as_ref().map_or(f64::INFINITY, |s| s.iter().copied().fold(f64::INFINITY, f64::min));
                        (sol.received, vec![false; k_users], Some(sol.power), slack)
                    }
                    Err(e) if is_infeasible(&e) => {
                        rec.counts.record_erasures(k_users);
                        continue;
                    }
                    Err(e) => return Err(e),
                }
            }
            Prepared::Uncoordinated(p) => {
                let out = p.precode(ctx.channels, &symbols, &margins, caps)?;
                let slack = out
                    .solution
                    .ci_slack
                    .as_ref()
                    .expect("CI slacks")
                    .iter()
                    .zip(&out.erased)
                    .filter(|(_, &e)| !e)
                    .map(|(s, _)| *s)
                    .fold(f64::INFINITY, f64::min);
                let power = out.infeasible_bs.is_empty().then_some(out.solution.power);
                if power.is_some() {
                    rec.tnr_sum += (geo.gamma[0] * sin_theta(order)).powi(2) / cfg.noise_power;
                }
                (out.solution.received, out.erased, power, slack)
            }
        };
        for k in 0..k_users {
            if erased[k] {
                rec.counts.record_erasures(1);
            } else {
                let y = received[k] + draw_noise(&mut rng, cfg.noise_power);
                rec.counts.record(symbols.indices[k], detect_psk(y, order));
            }
        }
        if let Some(p) = power {
            rec.feasible_slots += 1;
            rec.power_sum += p.total;
            for (acc, v) in rec.per_bs_power_sum.iter_mut().zip(&p.per_bs) {
                *acc += v;
            }
            rec.min_slack = rec.min_slack.min(slack);
        }
    }
    Ok(rec)
}

/// Runs one scheme over a grid; returns per-point trial records in
/// `[point][trial]` order.
pub fn simulate_scheme(
    config: &NetworkConfig,
    scheme: SchemeId,
    grid: &[f64],
    trials: usize,
    slots: usize,
    seed: u64,
    options: &PipelineOptions,
) -> Result<Vec<Vec<TrialRecord>>> {
    config.validate()?;
    let per_trial: Vec<Vec<TrialRecord>> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let channels = draw_trial_channels(config, seed, trial)?;
            let prepared = if scheme.is_coordinated() {
                CoordinatedPipeline::prepare(scheme, config, &channels, options).map(Prepared::Coordinated)
            } else {
                UncoordinatedPipeline::prepare(config, &channels, options).map(Prepared::Uncoordinated)
            }
            .map_err(|e| e.to_string());
            grid.iter()
                .map(|&value| {
                    let ctx = SlotContext {
                        config,
                        channels: &channels,
                        scheme,
                        value,
                    };
                    run_point(&ctx, &prepared, slots, seed, trial)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok((0..grid.len())
        .map(|p| per_trial.iter().map(|t| t[p].clone()).collect())
        .collect())
}

/// Pools trial records of one grid point.
pub fn aggregate(
    scheme: SchemeId,
    value: f64,
    records: &[TrialRecord],
    slots: usize,
    seed: u64,
) -> PointResult {
    let mut counts = SerAccumulator::default();
    let (mut feasible, mut total_slots, mut power, mut tnr) = (0usize, 0usize, 0.0, 0.0);
    let mut min_slack = f64::INFINITY;
    let mut trial_means = Vec::new();
    for r in records {
        counts.merge(&r.counts);
        feasible += r.feasible_slots;
        total_slots += r.slots;
        power += r.power_sum;
        tnr += r.tnr_sum;
        min_slack = min_slack.min(r.min_slack);
        if r.feasible_slots > 0 {
            trial_means.push(r.power_sum / r.feasible_slots as f64);
        }
    }
    let sweep_var = SweepVar::for_scheme(scheme);
    let mean_power_w = if feasible > 0 { power / feasible as f64 } else { f64::NAN };
    let power_stderr_db = if trial_means.len() > 1 {
        let n = trial_means.len() as f64;
        let m = trial_means.iter().sum::<f64>() / n;
        let var = trial_means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        10.0 / std::f64::consts::LN_10 * (var / n).sqrt() / m
    } else {
        f64::NAN
    };
    let tnr_db = match sweep_var {
        SweepVar::Margin => value,
        SweepVar::Budget if feasible > 0 => 10.0 * (tnr / feasible as f64).log10(),
        SweepVar::Budget => f64::NAN,
    };
    PointResult {
        scheme,
        sweep_var,
        sweep_value: value,
        tnr_db,
        mean_power_w,
        mean_power_dbm: watts_to_dbm(mean_power_w),
        power_stderr_db,
        ser: counts.ser(),
        ser_stderr: counts.stderr(),
        counts,
        feasibility_rate: if total_slots > 0 { feasible as f64 / total_slots as f64 } else { 0.0 },
        min_slack,
        trials: records.len(),
        symbols_per_trial: slots,
        seed,
    }
}

/// SER and mean power of one scheme at one grid point.
pub fn estimate_ser(
    config: &NetworkConfig,
    scheme: SchemeId,
    value: f64,
    trials: usize,
    slots: usize,
    seed: u64,
    options: &PipelineOptions,
) -> Result<PointResult> {
    let recs = simulate_scheme(config, scheme, &[value], trials, slots, seed, options)?;
    Ok(aggregate(scheme, value, &recs[0], slots, seed))
}

/// Every scheme over its grid, one result per `(scheme, grid value)`.
pub fn run_sweep(spec: &SweepSpec, config: &NetworkConfig, options: &PipelineOptions) -> Result<Vec<PointResult>> {
    spec.validate()?;
    let mut out = Vec::new();
    for &scheme in &spec.schemes {
        let grid = spec.grid(scheme);
        let recs = simulate_scheme(config, scheme, grid, spec.trials, spec.symbols_per_trial, spec.seed, options)?;
        for (value, r) in grid.iter().zip(&recs) {
            out.push(aggregate(scheme, *value, r, spec.symbols_per_trial, spec.seed));
        }
    }
    Ok(out)
}

pub const CSV_HEADER: [&str; 11] = [
    "scheme",
    "sweep_var",
    "sweep_value",
    "tnr_db",
    "mean_power_dbm",
    "ser",
    "ser_stderr",
    "feasibility_rate",
    "trials",
    "symbols_per_trial",
    "seed",
];

pub fn write_csv<W: Write>(rows: &[PointResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.scheme.as_str().to_string(),
            r.sweep_var.as_str().to_string(),
            r.sweep_value.to_string(),
            r.tnr_db.to_string(),
            r.mean_power_dbm.to_string(),
            r.ser.to_string(),
            r.ser_stderr.to_string(),
            r.feasibility_rate.to_string(),
            r.trials.to_string(),
            r.symbols_per_trial.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn write_csv_file(rows: &[PointResult], path: &Path) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    let mut file = std::io::BufWriter::new(file);
    file.write_all(&buf).map_err(io_err)?;
    file.flush().map_err(io_err)
}
