//! End-to-end precoding pipelines: the four coordinated schemes and the
//! uncoordinated CI baseline.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::analog::{build_codebook_analog, build_continuous_analog, build_dft_codebook};
use crate::assignment::{
    gain_matrix_codebook, gain_matrix_continuous, solve_code_assignment, solve_rf_assignment,
    AssignmentMode, AssignmentOptions, AssignmentResult,
};
use crate::convex::QcqpOptions;
use crate::digital::{solve_digital_ci, ZfPrecoder};
use crate::error::{Error, Result};
use crate::model::{
    ci_slack, received_nominal, transmit_power, AnalogBlock, AnalogPrecoderSet, ChannelSet,
    CiGeometry, DigitalMethod, NetworkConfig, PrecodeSolution, RfChainMap, SymbolVector, C64,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemeId {
    CiContinuous,
    CiCodebook,
    ZfContinuous,
    ZfCodebook,
    UncoordinatedCi,
}

impl SchemeId {
    pub const ALL: [SchemeId; 5] = [
        SchemeId::CiContinuous,
        SchemeId::CiCodebook,
        SchemeId::ZfContinuous,
        SchemeId::ZfCodebook,
        SchemeId::UncoordinatedCi,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeId::CiContinuous => "ci-continuous",
            SchemeId::CiCodebook => "ci-codebook",
            SchemeId::ZfContinuous => "zf-continuous",
            SchemeId::ZfCodebook => "zf-codebook",
            SchemeId::UncoordinatedCi => "uncoordinated-ci",
        }
    }

    pub fn is_coordinated(self) -> bool {
        self != SchemeId::UncoordinatedCi
    }

    pub fn analog_mode(self) -> AssignmentMode {
        match self {
            SchemeId::CiCodebook | SchemeId::ZfCodebook => AssignmentMode::Codebook,
            _ => AssignmentMode::Continuous,
        }
    }

    pub fn digital_method(self) -> DigitalMethod {
        match self {
            SchemeId::ZfContinuous | SchemeId::ZfCodebook => DigitalMethod::Zf,
            _ => DigitalMethod::Ci,
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeId::ALL
            .into_iter()
            .find(|id| id.as_str() == s.trim())
            .ok_or_else(|| {
                Error::Parse(format!(
                    "unknown scheme `{s}` (expected one of {})",
                    SchemeId::ALL.map(|i| i.as_str()).join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOptions {
    pub assignment: AssignmentOptions,
    pub qcqp: QcqpOptions,
}

fn magnitudes(config: &NetworkConfig) -> Vec<f64> {
    (0..config.num_bs()).map(|g| config.ps_magnitude_for(g)).collect()
}

/// Assignment and analog stages of a coordinated scheme, fixed for one
/// coherence block, plus the ZF factorization when the scheme needs it.
#[derive(Debug, Clone)]
pub struct CoordinatedPipeline {
    pub scheme: SchemeId,
    pub assignment: AssignmentResult,
    pub analog: AnalogPrecoderSet,
    pub zf: Option<ZfPrecoder>,
    qcqp: QcqpOptions,
}

impl CoordinatedPipeline {
    pub fn prepare(
        scheme: SchemeId,
        config: &NetworkConfig,
        channels: &ChannelSet,
        options: &PipelineOptions,
    ) -> Result<Self> {
        if !scheme.is_coordinated() {
            return Err(Error::Config(format!("{scheme} is not a coordinated scheme")));
        }
        channels.check_antennas(&config.bs_list)?;
        let eps = config.fairness_weight;
        let caps: Vec<usize> = config.bs_list.iter().map(|b| b.rf_chains).collect();
        let mags = magnitudes(config);
        let (assignment, analog) = match scheme.analog_mode() {
            AssignmentMode::Continuous => {
                let gains = gain_matrix_continuous(channels, &RfChainMap::new(&config.bs_list))
                    .map_err(|e| e.in_stage("assignment"))?;
                let asg = solve_rf_assignment(&gains, eps, &options.assignment)
                    .map_err(|e| e.in_stage("assignment"))?;
                let analog = build_continuous_analog(channels, &asg, &mags)
                    .map_err(|e| e.in_stage("analog"))?;
                (asg, analog)
            }
            AssignmentMode::Codebook => {
                let cb = build_dft_codebook(&config.bs_list, config.ps_magnitude);
                let gains = gain_matrix_codebook(channels, &cb).map_err(|e| e.in_stage("assignment"))?;
                let asg = solve_code_assignment(&gains, eps, &caps, &options.assignment)
                    .map_err(|e| e.in_stage("assignment"))?;
                let analog = build_codebook_analog(&cb, &asg, &caps).map_err(|e| e.in_stage("analog"))?;
                (asg, analog)
            }
        };
        let zf = match scheme.digital_method() {
            DigitalMethod::Zf => Some(ZfPrecoder::new(&analog, channels).map_err(|e| e.in_stage("digital"))?),
            DigitalMethod::Ci => None,
        };
        Ok(CoordinatedPipeline {
            scheme,
            assignment,
            analog,
            zf,
            qcqp: options.qcqp,
        })
    }

    /// CI digital stage for one slot with explicit margins and caps.
    pub fn precode_ci(
        &self,
        channels: &ChannelSet,
        symbols: &SymbolVector,
        margins: &[f64],
        caps: Option<&[f64]>,
    ) -> Result<PrecodeSolution> {
        solve_digital_ci(&self.analog, channels, symbols, margins, caps, &self.qcqp)
            .map_err(|e| e.in_stage("digital"))
    }

    /// ZF digital stage for one slot with explicit budgets.
    pub fn precode_zf(
        &self,
        channels: &ChannelSet,
        symbols: &SymbolVector,
        budgets: &[f64],
        target: Option<f64>,
    ) -> Result<PrecodeSolution> {
        let zf = self
            .zf
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} has no ZF stage", self.scheme)).in_stage("digital"))?;
        zf.precode(channels, symbols, budgets, target)
            .map_err(|e| e.in_stage("digital"))
    }

    /// Digital stage with margins, budgets and cap policy from `config`.
    pub fn precode(
        &self,
        config: &NetworkConfig,
        channels: &ChannelSet,
        symbols: &SymbolVector,
    ) -> Result<PrecodeSolution> {
        let budgets = config.budgets();
        match self.scheme.digital_method() {
            DigitalMethod::Ci => {
                let margins = config.margins_vec()?;
                let caps = config.ci_power_caps.then_some(budgets.as_slice());
                self.precode_ci(channels, symbols, &margins, caps)
            }
            DigitalMethod::Zf => self.precode_zf(channels, symbols, &budgets, None),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CoordinatedRun {
    pub assignment: AssignmentResult,
    pub analog: AnalogPrecoderSet,
    pub solution: PrecodeSolution,
}

/// Assignment, analog and digital stages for one slot.
pub fn run_coordinated(
    scheme: SchemeId,
    config: &NetworkConfig,
    channels: &ChannelSet,
    symbols: &SymbolVector,
    options: &PipelineOptions,
) -> Result<CoordinatedRun> {
    let pipe = CoordinatedPipeline::prepare(scheme, config, channels, options)?;
    let solution = pipe.precode(config, channels, symbols)?;
    Ok(CoordinatedRun {
        assignment: pipe.assignment,
        analog: pipe.analog,
        solution,
    })
}

/// Serving BS per user: pairs `(g, k)` are visited by descending
/// `||h_gk||^2` (ties to the lower BS, then the lower user) and a user
/// joins the first BS on its list with a free RF chain.
pub fn associate_users(channels: &ChannelSet, config: &NetworkConfig) -> Result<Vec<usize>> {
    channels.check_antennas(&config.bs_list)?;
    let k_users = channels.num_users();
    let capacity: usize = config.bs_list.iter().map(|b| b.rf_chains).sum();
    if capacity < k_users {
        return Err(Error::AssignmentInfeasible(format!(
            "{k_users} users but only {capacity} RF chains in total"
        )));
    }
    let mut pairs: Vec<(f64, usize, usize)> = (0..channels.num_bs())
        .flat_map(|g| (0..k_users).map(move |k| (g, k)))
        .map(|(g, k)| (channels.get(g, k).norm_squared(), g, k))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut free: Vec<usize> = config.bs_list.iter().map(|b| b.rf_chains).collect();
    let mut serving = vec![usize::MAX; k_users];
    for (_, g, k) in pairs {
        if serving[k] == usize::MAX && free[g] > 0 {
            serving[k] = g;
            free[g] -= 1;
        }
    }
    Ok(serving)
}

#[derive(Debug, Clone)]
struct LocalBs {
    users: Vec<usize>,
    channels: ChannelSet,
    analog: AnalogPrecoderSet,
}

/// Each BS designs CI hybrid precoders for its own users only.
#[derive(Debug, Clone)]
pub struct UncoordinatedPipeline {
    pub serving: Vec<usize>,
    local: Vec<LocalBs>,
    /// Per-BS analog blocks over the full antenna arrays.
    pub analog: AnalogPrecoderSet,
    qcqp: QcqpOptions,
}

#[derive(Debug, Clone)]
pub struct UncoordinatedSolution {
    /// Digital vectors, received samples over all BSs, power, and CI slack
    /// of each user measured on its serving BS's signal alone.
    pub solution: PrecodeSolution,
    /// Users whose serving BS found no feasible CI precoder.
    pub erased: Vec<bool>,
    pub infeasible_bs: Vec<usize>,
}

impl UncoordinatedPipeline {
    pub fn prepare(config: &NetworkConfig, channels: &ChannelSet, options: &PipelineOptions) -> Result<Self> {
        let serving = associate_users(channels, config).map_err(|e| e.in_stage("association"))?;
        let mags = magnitudes(config);
        let mut local = Vec::new();
        let mut blocks = Vec::new();
        for (g, bs) in config.bs_list.iter().enumerate() {
            let users: Vec<usize> = (0..serving.len()).filter(|&k| serving[k] == g).collect();
            let sub = channels.subset(&[g], &users);
            let analog = if users.is_empty() {
                AnalogPrecoderSet {
                    blocks: vec![AnalogBlock::empty(bs.antennas, mags[g])],
                }
            } else {
                let gains = gain_matrix_continuous(&sub, &RfChainMap::from_counts(&[bs.rf_chains]))
                    .map_err(|e| e.in_stage("assignment"))?;
                let asg = solve_rf_assignment(&gains, config.fairness_weight, &options.assignment)
                    .map_err(|e| e.in_stage("assignment"))?;
                let mut a = build_continuous_analog(&sub, &asg, &mags[g..=g])
                    .map_err(|e| e.in_stage("analog"))?;
                // report global user indices on the full-network block
                for u in &mut a.blocks[0].column_users {
                    *u = users[*u];
                }
                a
            };
            blocks.push(analog.blocks[0].clone());
            local.push(LocalBs {
                users,
                channels: sub,
                analog,
            });
        }
        Ok(UncoordinatedPipeline {
            serving,
            local,
            analog: AnalogPrecoderSet { blocks },
            qcqp: options.qcqp,
        })
    }

    pub fn precode(
        &self,
        channels: &ChannelSet,
        symbols: &SymbolVector,
        margins: &[f64],
        caps: Option<&[f64]>,
    ) -> Result<UncoordinatedSolution> {
        let k_users = channels.num_users();
        if margins.len() != k_users || symbols.len() != k_users {
            return Err(Error::Shape(format!(
                "{} margins and {} symbols for {k_users} users",
                margins.len(),
                symbols.len()
            )));
        }
        let mut digital = Vec::with_capacity(self.local.len());
        let mut erased = vec![false; k_users];
        let mut infeasible_bs = Vec::new();
        let mut own_slack = vec![f64::NAN; k_users];
        for (g, bs) in self.local.iter().enumerate() {
            let dim = bs.analog.blocks[0].active_chains();
            if bs.users.is_empty() {
                digital.push(DVector::zeros(dim));
                continue;
            }
            let sub_symbols = symbols.subset(&bs.users);
            let sub_margins: Vec<f64> = bs.users.iter().map(|&k| margins[k]).collect();
            let cap = caps.map(|c| vec![c[g]]);
            match solve_digital_ci(
                &bs.analog,
                &bs.channels,
                &sub_symbols,
                &sub_margins,
                cap.as_deref(),
                &self.qcqp,
            ) {
                Ok(sol) => {
                    let slack = sol.ci_slack.as_ref().expect("CI solutions carry slacks");
                    for (i, &k) in bs.users.iter().enumerate() {
                        own_slack[k] = slack[i];
                    }
                    digital.push(sol.digital.into_iter().next().expect("one block"));
                }
                Err(Error::CiInfeasible(_)) => {
                    infeasible_bs.push(g);
                    for &k in &bs.users {
                        erased[k] = true;
                    }
                    digital.push(DVector::from_element(dim, C64::new(0.0, 0.0)));
                }
                Err(e) => return Err(e.in_stage("digital")),
            }
        }
        let received = received_nominal(channels, &self.analog, &digital)?;
        let power = transmit_power(&self.analog, &digital)?;
        let solution = PrecodeSolution {
            method: DigitalMethod::Ci,
            digital,
            zf_matrices: None,
            zf_amplitude: None,
            power,
            ci_slack: Some(own_slack),
            solver_slack: None,
            received,
        };
        Ok(UncoordinatedSolution {
            solution,
            erased,
            infeasible_bs,
        })
    }

    /// End-to-end CI slack of each user on the full received signal.
    pub fn end_to_end_slack(&self, sol: &UncoordinatedSolution, symbols: &SymbolVector, margins: &[f64]) -> Vec<f64> {
        let geo = CiGeometry::new(symbols.order, margins);
        (0..symbols.len())
            .map(|k| ci_slack(sol.solution.received[k], symbols.values[k], geo.gamma[k], geo.theta))
            .collect()
    }
}

/// Uncoordinated CI for one slot with margins, budgets and cap policy from
/// `config`.
pub fn run_uncoordinated(
    config: &NetworkConfig,
    channels: &ChannelSet,
    symbols: &SymbolVector,
    options: &PipelineOptions,
) -> Result<UncoordinatedSolution> {
    let pipe = UncoordinatedPipeline::prepare(config, channels, options)?;
    let budgets = config.budgets();
    let caps = config.ci_power_caps.then_some(budgets.as_slice());
    pipe.precode(channels, symbols, &config.margins_vec()?, caps)
}
