//! Analog precoders (stage two): phase-conjugate columns for continuous
//! phase shifters, or selected columns of a per-BS codebook.

use nalgebra::{DMatrix, DVector};

use crate::assignment::{AssignmentMode, AssignmentResult};
use crate::error::{Error, Result};
use crate::model::{unit_root, AnalogBlock, AnalogPrecoderSet, BsSpec, ChannelSet, C64};

/// Concatenated per-BS codebooks. Code `c` belongs to BS `owner[c]`;
/// `per_bs[g]` lists the global indices of BS `g`'s codes.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub columns: Vec<DVector<C64>>,
    pub owner: Vec<usize>,
    pub per_bs: Vec<Vec<usize>>,
    pub magnitude: Vec<f64>,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }
}

fn magnitude_for(bs: &BsSpec, a: Option<f64>) -> f64 {
    a.unwrap_or_else(|| 1.0 / (bs.antennas as f64).sqrt())
}

/// `N_g` DFT beams per BS: `c[n] = a exp(-j 2 pi n c / N_g)`.
/// `a = None` selects `1 / sqrt(N_g)`.
pub fn build_dft_codebook(bs_list: &[BsSpec], a: Option<f64>) -> Codebook {
    let mut cb = Codebook {
        columns: Vec::new(),
        owner: Vec::new(),
        per_bs: Vec::new(),
        magnitude: Vec::new(),
    };
    for (g, bs) in bs_list.iter().enumerate() {
        let n = bs.antennas;
        let mag = magnitude_for(bs, a);
        let mut idx = Vec::with_capacity(n);
        for c in 0..n {
            idx.push(cb.columns.len());
            cb.columns
                .push(DVector::from_fn(n, |i, _| unit_root(i * c, n, -1.0) * mag));
            cb.owner.push(g);
        }
        cb.per_bs.push(idx);
        cb.magnitude.push(mag);
    }
    cb
}

/// Phase-conjugate column `a exp(-j angle(h_n))` for channel `h`.
pub fn conjugate_phase_column(h: &DVector<C64>, a: f64) -> DVector<C64> {
    h.map(|z| C64::from_polar(a, -z.arg()))
}

/// Continuous analog precoders: for each assigned chain `r -> k`, the
/// column of BS `g_r` aligns with `h_{g_r,k}`. Unassigned chains are
/// dropped. `magnitudes[g]` is the phase-shifter magnitude at BS `g`.
pub fn build_continuous_analog(
    channels: &ChannelSet,
    assignment: &AssignmentResult,
    magnitudes: &[f64],
) -> Result<AnalogPrecoderSet> {
    if assignment.mode != AssignmentMode::Continuous {
        return Err(Error::Shape("continuous analog needs a chain assignment".into()));
    }
    let num_bs = channels.num_bs();
    if magnitudes.len() != num_bs {
        return Err(Error::Shape(format!(
            "{} magnitudes for {num_bs} BSs",
            magnitudes.len()
        )));
    }
    let mut cols: Vec<Vec<(usize, usize, DVector<C64>)>> = vec![Vec::new(); num_bs];
    for r in 0..assignment.alpha.len() {
        if let Some(k) = assignment.user_of(r) {
            let g = assignment.owner[r];
            if g >= num_bs || k >= channels.num_users() {
                return Err(Error::Shape(format!("chain {r} maps outside the channel set")));
            }
            cols[g].push((r, k, conjugate_phase_column(channels.get(g, k), magnitudes[g])));
        }
    }
    let blocks = cols
        .into_iter()
        .enumerate()
        .map(|(g, list)| assemble(channels.antennas(g), magnitudes[g], list))
        .collect();
    Ok(AnalogPrecoderSet { blocks })
}

fn assemble(antennas: usize, magnitude: f64, list: Vec<(usize, usize, DVector<C64>)>) -> AnalogBlock {
    if list.is_empty() {
        return AnalogBlock::empty(antennas, magnitude);
    }
    let columns: Vec<_> = list.iter().map(|c| c.2.clone()).collect();
    AnalogBlock {
        matrix: DMatrix::from_columns(&columns),
        magnitude,
        column_users: list.iter().map(|c| c.1).collect(),
        column_sources: list.iter().map(|c| c.0).collect(),
    }
}

/// Codebook analog precoders: BS `g` stacks its selected codes in
/// ascending code order.
pub fn build_codebook_analog(
    codebook: &Codebook,
    assignment: &AssignmentResult,
    caps: &[usize],
) -> Result<AnalogPrecoderSet> {
    if assignment.mode != AssignmentMode::Codebook {
        return Err(Error::Shape("codebook analog needs a code assignment".into()));
    }
    if assignment.alpha.len() != codebook.len() {
        return Err(Error::Shape(format!(
            "assignment has {} rows, codebook {} codes",
            assignment.alpha.len(),
            codebook.len()
        )));
    }
    if caps.len() != codebook.per_bs.len() {
        return Err(Error::Shape("one cap per BS is required".into()));
    }
    let mut blocks = Vec::with_capacity(codebook.per_bs.len());
    for (g, codes) in codebook.per_bs.iter().enumerate() {
        let list: Vec<_> = codes
            .iter()
            .filter_map(|&c| assignment.user_of(c).map(|k| (c, k, codebook.columns[c].clone())))
            .collect();
        if list.len() > caps[g] {
            return Err(Error::Shape(format!(
                "BS {g} selects {} codes with {} RF chains",
                list.len(),
                caps[g]
            )));
        }
        let antennas = codebook.columns[codes[0]].len();
        blocks.push(assemble(antennas, codebook.magnitude[g], list));
    }
    Ok(AnalogPrecoderSet { blocks })
}
