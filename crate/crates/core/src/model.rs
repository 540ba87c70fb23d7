//! Domain types and exact signal-level primitives.
//!
//! All channel coupling uses the plain transpose `h^T` (no conjugate), so the
//! nominal received sample at user `k` is `y_k = sum_g h_gk^T A_g b_g`.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::GeometrySpec;
use crate::error::{Error, Result};

pub type C64 = Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BsClass {
    Macro,
    Pico,
}

impl fmt::Display for BsClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BsClass::Macro => f.write_str("macro"),
            BsClass::Pico => f.write_str("pico"),
        }
    }
}

/// One base station: class, array size, RF chains, budget (watts) and
/// position (km).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsSpec {
    pub class: BsClass,
    pub antennas: usize,
    pub rf_chains: usize,
    pub power_budget: f64,
    pub position: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec {
    pub position: [f64; 2],
}

/// Users are either a count (positions drawn per trial) or fixed positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Users {
    Count(usize),
    Fixed(Vec<UserSpec>),
}

impl Users {
    pub fn count(&self) -> usize {
        match self {
            Users::Count(k) => *k,
            Users::Fixed(list) => list.len(),
        }
    }
}

/// Threshold margins `Gamma_k`, in received-amplitude units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Margins {
    Uniform(f64),
    PerUser(Vec<f64>),
}

impl Margins {
    pub fn resolve(&self, users: usize) -> Result<Vec<f64>> {
        match self {
            Margins::Uniform(g) => Ok(vec![*g; users]),
            Margins::PerUser(v) if v.len() == users => Ok(v.clone()),
            Margins::PerUser(v) => Err(Error::Config(format!(
                "margins lists {} values for {} users",
                v.len(),
                users
            ))),
        }
    }
}

fn default_fairness() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

/// Full deployment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub bs_list: Vec<BsSpec>,
    pub users: Users,
    /// Noise power per user, watts.
    pub noise_power: f64,
    pub modulation_order: usize,
    pub margins: Margins,
    /// Phase-shifter magnitude `a`; `None` means `1/sqrt(N_g)` per BS.
    #[serde(default)]
    pub ps_magnitude: Option<f64>,
    /// Fairness weight `epsilon` of the assignment MILPs (normalized gains).
    #[serde(default = "default_fairness")]
    pub fairness_weight: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub geometry: GeometrySpec,
    /// Enforce per-BS budgets inside the CI digital stage.
    #[serde(default = "default_true")]
    pub ci_power_caps: bool,
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) / 1000.0
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * (w * 1000.0).log10()
}

impl NetworkConfig {
    fn three_bs(n: [usize; 3], r: [usize; 3], users: usize) -> Self {
        let macro_bs = BsSpec {
            class: BsClass::Macro,
            antennas: n[0],
            rf_chains: r[0],
            power_budget: dbm_to_watts(46.0),
            position: [0.0, 0.0],
        };
        let pico = |i: usize, x: f64| BsSpec {
            class: BsClass::Pico,
            antennas: n[i],
            rf_chains: r[i],
            power_budget: dbm_to_watts(30.0),
            position: [x, 0.0],
        };
        let noise_power = dbm_to_watts(-60.0);
        NetworkConfig {
            bs_list: vec![macro_bs, pico(1, -0.25), pico(2, 0.25)],
            users: Users::Count(users),
            noise_power,
            modulation_order: 4,
            margins: Margins::Uniform(noise_power.sqrt()),
            ps_magnitude: None,
            fairness_weight: 1.0,
            seed: 1,
            geometry: GeometrySpec::default(),
            ci_power_caps: true,
        }
    }

    /// Desk-scale deployment: N = (16, 8, 8), R = (8, 4, 4), K = 8, QPSK.
    pub fn desk() -> Self {
        Self::three_bs([16, 8, 8], [8, 4, 4], 8)
    }

    /// Full-size deployment: N = (64, 32, 32), R = (32, 16, 16), K = 64.
    pub fn full_scale() -> Self {
        Self::three_bs([64, 32, 32], [32, 16, 16], 64)
    }

    pub fn num_users(&self) -> usize {
        self.users.count()
    }

    pub fn num_bs(&self) -> usize {
        self.bs_list.len()
    }

    pub fn total_rf_chains(&self) -> usize {
        self.bs_list.iter().map(|b| b.rf_chains).sum()
    }

    pub fn budgets(&self) -> Vec<f64> {
        self.bs_list.iter().map(|b| b.power_budget).collect()
    }

    pub fn margins_vec(&self) -> Result<Vec<f64>> {
        self.margins.resolve(self.num_users())
    }

    /// Phase-shifter magnitude used at BS `g`.
    pub fn ps_magnitude_for(&self, g: usize) -> f64 {
        self.ps_magnitude
            .unwrap_or_else(|| 1.0 / (self.bs_list[g].antennas as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.modulation_order;
        if m < 2 || !m.is_power_of_two() {
            return Err(Error::Config(format!(
                "modulation order {m} must be a power of two >= 2"
            )));
        }
        if self.bs_list.is_empty() {
            return Err(Error::Config("bs_list is empty".into()));
        }
        for (g, bs) in self.bs_list.iter().enumerate() {
            if bs.rf_chains == 0 || bs.rf_chains > bs.antennas {
                return Err(Error::Config(format!(
                    "BS {g}: need 1 <= rf_chains ({}) <= antennas ({})",
                    bs.rf_chains, bs.antennas
                )));
            }
            if !(bs.power_budget > 0.0) || !bs.power_budget.is_finite() {
                return Err(Error::Config(format!("BS {g}: power budget must be > 0")));
            }
        }
        let k = self.num_users();
        if k == 0 {
            return Err(Error::Config("at least one user is required".into()));
        }
        if self.total_rf_chains() < k {
            return Err(Error::Config(format!(
                "{} RF chains cannot serve {k} users",
                self.total_rf_chains()
            )));
        }
        if !(self.noise_power > 0.0) || !self.noise_power.is_finite() {
            return Err(Error::Config("noise_power must be > 0".into()));
        }
        for (i, g) in self.margins_vec()?.iter().enumerate() {
            if !(*g >= 0.0) || !g.is_finite() {
                return Err(Error::Config(format!("margin of user {i} must be >= 0")));
            }
        }
        if let Some(a) = self.ps_magnitude {
            if !(a > 0.0) || !a.is_finite() {
                return Err(Error::Config("ps_magnitude must be > 0".into()));
            }
        }
        if !(self.fairness_weight >= 0.0) {
            return Err(Error::Config("fairness_weight must be >= 0".into()));
        }
        self.geometry.validate()
    }
}

/// Global RF-chain indexing: chain `r` lives at BS `owner[r].0` with local
/// index `owner[r].1`. Chains are numbered BS by BS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RfChainMap {
    pub total: usize,
    pub owner: Vec<(usize, usize)>,
}

impl RfChainMap {
    pub fn new(bs_list: &[BsSpec]) -> Self {
        Self::from_counts(&bs_list.iter().map(|b| b.rf_chains).collect::<Vec<_>>())
    }

    pub fn from_counts(chains_per_bs: &[usize]) -> Self {
        let owner: Vec<_> = chains_per_bs
            .iter()
            .enumerate()
            .flat_map(|(g, &r)| (0..r).map(move |j| (g, j)))
            .collect();
        RfChainMap {
            total: owner.len(),
            owner,
        }
    }

    pub fn bs_of(&self, r: usize) -> usize {
        self.owner[r].0
    }
}

/// Channel vectors `h_gk` for every BS/user pair, path loss included.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    antennas: Vec<usize>,
    users: usize,
    h: Vec<DVector<C64>>,
}

impl ChannelSet {
    /// `vectors` is indexed `[g][k]`.
    pub fn new(vectors: Vec<Vec<DVector<C64>>>) -> Result<Self> {
        let users = vectors.first().map_or(0, |v| v.len());
        let mut antennas = Vec::with_capacity(vectors.len());
        let mut h = Vec::new();
        for (g, per_user) in vectors.into_iter().enumerate() {
            if per_user.len() != users {
                return Err(Error::Shape(format!(
                    "BS {g} has channels for {} users, expected {users}",
                    per_user.len()
                )));
            }
            let n = per_user.first().map_or(0, |v| v.len());
            for (k, v) in per_user.iter().enumerate() {
                if v.len() != n {
                    return Err(Error::Shape(format!(
                        "h[{g}][{k}] has length {}, expected {n}",
                        v.len()
                    )));
                }
                if v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                    return Err(Error::Domain(format!("h[{g}][{k}] has non-finite entries")));
                }
            }
            antennas.push(n);
            h.extend(per_user);
        }
        Ok(ChannelSet { antennas, users, h })
    }

    pub fn num_bs(&self) -> usize {
        self.antennas.len()
    }

    pub fn num_users(&self) -> usize {
        self.users
    }

    pub fn antennas(&self, g: usize) -> usize {
        self.antennas[g]
    }

    pub fn get(&self, g: usize, k: usize) -> &DVector<C64> {
        &self.h[g * self.users + k]
    }

    /// Channels of a subset of BSs and users, in the given order.
    pub fn subset(&self, bss: &[usize], users: &[usize]) -> ChannelSet {
        let vectors = bss
            .iter()
            .map(|&g| users.iter().map(|&k| self.get(g, k).clone()).collect())
            .collect();
        ChannelSet::new(vectors).expect("subset of a valid channel set")
    }

    pub(crate) fn check_antennas(&self, bs_list: &[BsSpec]) -> Result<()> {
        if bs_list.len() != self.num_bs() {
            return Err(Error::Shape(format!(
                "{} BSs configured, channel set has {}",
                bs_list.len(),
                self.num_bs()
            )));
        }
        for (g, bs) in bs_list.iter().enumerate() {
            if bs.antennas != self.antennas[g] {
                return Err(Error::Shape(format!(
                    "BS {g}: {} antennas configured, channel length {}",
                    bs.antennas, self.antennas[g]
                )));
            }
        }
        Ok(())
    }
}

/// `exp(sign * j 2 pi num / den)`, exact on quarter turns.
pub(crate) fn unit_root(num: usize, den: usize, sign: f64) -> C64 {
    let num = num % den;
    if (4 * num) % den == 0 {
        let quarter = 4 * num / den;
        let z = match quarter {
            0 => C64::new(1.0, 0.0),
            1 => C64::new(0.0, 1.0),
            2 => C64::new(-1.0, 0.0),
            _ => C64::new(0.0, -1.0),
        };
        if sign < 0.0 {
            z.conj()
        } else {
            z
        }
    } else {
        C64::from_polar(1.0, sign * 2.0 * PI * num as f64 / den as f64)
    }
}

/// M-PSK point `exp(j 2 pi m / M)`.
pub fn psk_symbol(m: usize, order: usize) -> Result<C64> {
    if order == 0 || m >= order {
        return Err(Error::Domain(format!(
            "constellation index {m} outside 0..{order}"
        )));
    }
    Ok(unit_root(m, order, 1.0))
}

/// Nearest PSK index by angle. Ties go to the smaller index; `y = 0` maps
/// to index 0.
pub fn detect_psk(y: C64, order: usize) -> usize {
    let angle = y.im.atan2(y.re).rem_euclid(2.0 * PI);
    let step = 2.0 * PI / order as f64;
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for m in 0..order {
        let diff = (angle - step * m as f64).rem_euclid(2.0 * PI);
        let dist = diff.min(2.0 * PI - diff);
        if dist < best_dist - 1e-12 {
            best = m;
            best_dist = dist;
        }
    }
    best
}

/// Symbols of one slot: indices and their PSK values.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolVector {
    pub order: usize,
    pub indices: Vec<usize>,
    pub values: Vec<C64>,
}

impl SymbolVector {
    pub fn from_indices(indices: Vec<usize>, order: usize) -> Result<Self> {
        let values = indices
            .iter()
            .map(|&m| psk_symbol(m, order))
            .collect::<Result<Vec<_>>>()?;
        Ok(SymbolVector {
            order,
            indices,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn subset(&self, users: &[usize]) -> SymbolVector {
        SymbolVector {
            order: self.order,
            indices: users.iter().map(|&k| self.indices[k]).collect(),
            values: users.iter().map(|&k| self.values[k]).collect(),
        }
    }
}

/// CI region geometry: `theta = pi / M`, `gamma_k = Gamma_k / sin(theta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CiGeometry {
    pub order: usize,
    pub theta: f64,
    pub gamma: Vec<f64>,
}

impl CiGeometry {
    pub fn new(order: usize, margins: &[f64]) -> Self {
        let theta = PI / order as f64;
        let sin = match order {
            2 => 1.0,
            4 => std::f64::consts::FRAC_1_SQRT_2,
            _ => theta.sin(),
        };
        CiGeometry {
            order,
            theta,
            gamma: margins.iter().map(|g| g / sin).collect(),
        }
    }

    /// `cot(theta)`, exact for BPSK and QPSK.
    pub fn cot_theta(&self) -> f64 {
        match self.order {
            2 => 0.0,
            4 => 1.0,
            _ => self.theta.cos() / self.theta.sin(),
        }
    }

    pub fn tan_theta(&self) -> f64 {
        match self.order {
            2 => f64::INFINITY,
            4 => 1.0,
            _ => self.theta.tan(),
        }
    }
}

/// Signed distance-like slack of `y` w.r.t. the CI region of symbol `s`:
/// `(Re(s* y) - gamma) tan(theta) - |Im(s* y)|`, nonnegative inside.
/// For `theta = pi/2` (BPSK) the region is a half plane and the slack is
/// `Re(s* y) - gamma`.
pub fn ci_slack(y: C64, s: C64, gamma: f64, theta: f64) -> f64 {
    let rotated = s.conj() * y;
    if (theta - PI / 2.0).abs() < 1e-15 {
        return rotated.re - gamma;
    }
    let tan = if (theta - PI / 4.0).abs() < 1e-15 {
        1.0
    } else {
        theta.tan()
    };
    (rotated.re - gamma) * tan - rotated.im.abs()
}

/// Analog precoder of one BS. Column `i` serves user `column_users[i]` and
/// comes from chain or code `column_sources[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalogBlock {
    pub matrix: DMatrix<C64>,
    pub magnitude: f64,
    pub column_users: Vec<usize>,
    pub column_sources: Vec<usize>,
}

impl AnalogBlock {
    pub fn empty(antennas: usize, magnitude: f64) -> Self {
        AnalogBlock {
            matrix: DMatrix::zeros(antennas, 0),
            magnitude,
            column_users: Vec::new(),
            column_sources: Vec::new(),
        }
    }

    pub fn active_chains(&self) -> usize {
        self.matrix.ncols()
    }

    /// Largest deviation of an entry magnitude from the nominal magnitude.
    pub fn modulus_error(&self) -> f64 {
        self.matrix
            .iter()
            .map(|z| (z.norm() - self.magnitude).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalogPrecoderSet {
    pub blocks: Vec<AnalogBlock>,
}

impl AnalogPrecoderSet {
    pub fn num_bs(&self) -> usize {
        self.blocks.len()
    }

    pub fn active_chains(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.active_chains()).collect()
    }

    pub fn total_active_chains(&self) -> usize {
        self.blocks.iter().map(|b| b.active_chains()).sum()
    }

    fn check_digital(&self, digital: &[DVector<C64>]) -> Result<()> {
        if digital.len() != self.blocks.len() {
            return Err(Error::Shape(format!(
                "{} digital vectors for {} BSs",
                digital.len(),
                self.blocks.len()
            )));
        }
        for (g, (blk, b)) in self.blocks.iter().zip(digital).enumerate() {
            if blk.matrix.ncols() != b.len() {
                return Err(Error::Shape(format!(
                    "BS {g}: digital length {} but {} analog columns",
                    b.len(),
                    blk.matrix.ncols()
                )));
            }
        }
        Ok(())
    }

    /// Per-BS antenna-domain transmit vectors `A_g b_g`.
    pub fn transmit_vectors(&self, digital: &[DVector<C64>]) -> Result<Vec<DVector<C64>>> {
        self.check_digital(digital)?;
        Ok(self
            .blocks
            .iter()
            .zip(digital)
            .map(|(blk, b)| &blk.matrix * b)
            .collect())
    }
}

/// Noise-free received samples `y_k = sum_g h_gk^T A_g b_g`.
pub fn received_nominal(
    channels: &ChannelSet,
    analog: &AnalogPrecoderSet,
    digital: &[DVector<C64>],
) -> Result<Vec<C64>> {
    if channels.num_bs() != analog.num_bs() {
        return Err(Error::Shape(format!(
            "{} BSs in channels, {} in analog set",
            channels.num_bs(),
            analog.num_bs()
        )));
    }
    let tx = analog.transmit_vectors(digital)?;
    for (g, v) in tx.iter().enumerate() {
        if v.len() != channels.antennas(g) {
            return Err(Error::Shape(format!(
                "BS {g}: analog has {} rows, channel length {}",
                v.len(),
                channels.antennas(g)
            )));
        }
    }
    Ok((0..channels.num_users())
        .map(|k| {
            tx.iter()
                .enumerate()
                .map(|(g, v)| channels.get(g, k).transpose() * v)
                .map(|m| m[(0, 0)])
                .sum()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerReport {
    pub per_bs: Vec<f64>,
    pub total: f64,
}

/// Radiated power `||A_g b_g||^2` per BS and in total.
pub fn transmit_power(analog: &AnalogPrecoderSet, digital: &[DVector<C64>]) -> Result<PowerReport> {
    let per_bs: Vec<f64> = analog
        .transmit_vectors(digital)?
        .iter()
        .map(|v| v.norm_squared())
        .collect();
    let total = per_bs.iter().sum();
    Ok(PowerReport { per_bs, total })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DigitalMethod {
    Ci,
    Zf,
}

/// Outcome of one digital precoding solve for one symbol slot.
#[derive(Debug, Clone)]
pub struct PrecodeSolution {
    pub method: DigitalMethod,
    /// Composite per-BS digital vectors `b_g`.
    pub digital: Vec<DVector<C64>>,
    /// ZF precoding matrices `D_g` (`R_g_eff x K`), ZF only.
    pub zf_matrices: Option<Vec<DMatrix<C64>>>,
    /// ZF common amplitude `beta`, ZF only.
    pub zf_amplitude: Option<f64>,
    pub power: PowerReport,
    /// Per-user CI slack of the noiseless received sample, CI only.
    pub ci_slack: Option<Vec<f64>>,
    /// Per-user slack derived from the solver's constraint rows, CI only.
    pub solver_slack: Option<Vec<f64>>,
    pub received: Vec<C64>,
}
