//! Backhaul coefficient counts per coherence block of `delta` slots.
//!
//! CI sends the analog coefficients once (`sum_g N_g R_g`) and `R_g`
//! digital coefficients per BS in every slot. ZF sends the analog
//! coefficients and the `R_g x K` digital matrices once, then the `K` user
//! symbols to every BS in every slot.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::NetworkConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeFamily {
    Ci,
    Zf,
}

impl fmt::Display for SchemeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeFamily::Ci => "ci",
            SchemeFamily::Zf => "zf",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverheadReport {
    pub family: SchemeFamily,
    pub delta: u64,
    pub analog_once: u64,
    pub digital_per_block: u64,
    pub per_slot: u64,
    pub total: u64,
}

impl OverheadReport {
    /// Growth of the total per extra slot.
    pub fn slope(&self) -> u64 {
        self.per_slot
    }
}

/// Counts from raw per-BS antenna and RF-chain numbers.
pub fn overhead_from_dims(
    antennas: &[usize],
    chains: &[usize],
    users: usize,
    delta: u64,
    family: SchemeFamily,
) -> Result<OverheadReport> {
    if delta < 1 {
        return Err(Error::Domain("coherence length must be at least 1".into()));
    }
    if antennas.len() != chains.len() {
        return Err(Error::Shape(format!(
            "{} antenna counts, {} chain counts",
            antennas.len(),
            chains.len()
        )));
    }
    let g = antennas.len() as u64;
    let k = users as u64;
    let analog_once: u64 = antennas.iter().zip(chains).map(|(&n, &r)| (n * r) as u64).sum();
    let sum_r: u64 = chains.iter().map(|&r| r as u64).sum();
    let (digital_per_block, per_slot) = match family {
        SchemeFamily::Ci => (0, sum_r),
        SchemeFamily::Zf => (sum_r * k, g * k),
    };
    Ok(OverheadReport {
        family,
        delta,
        analog_once,
        digital_per_block,
        per_slot,
        total: analog_once + digital_per_block + delta * per_slot,
    })
}

pub fn backhaul_overhead(config: &NetworkConfig, delta: u64, family: SchemeFamily) -> Result<OverheadReport> {
    let antennas: Vec<usize> = config.bs_list.iter().map(|b| b.antennas).collect();
    let chains: Vec<usize> = config.bs_list.iter().map(|b| b.rf_chains).collect();
    overhead_from_dims(&antennas, &chains, config.num_users(), delta, family)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn trivial_dims() {
        let ci = overhead_from_dims(&[1], &[1], 1, 1, SchemeFamily::Ci).unwrap();
        let zf = overhead_from_dims(&[1], &[1], 1, 1, SchemeFamily::Zf).unwrap();
        assert_eq!((ci.total, zf.total), (2, 3));
    }

    #[test]
    fn zero_delta_rejected() {
        assert!(overhead_from_dims(&[1], &[1], 1, 0, SchemeFamily::Ci).is_err());
    }

    proptest! {
        #[test]
        fn linear_in_delta(d1 in 1u64..10_000, d2 in 1u64..10_000) {
            let cfg = NetworkConfig::desk();
            for fam in [SchemeFamily::Ci, SchemeFamily::Zf] {
                let a = backhaul_overhead(&cfg, d1, fam).unwrap();
                let b = backhaul_overhead(&cfg, d2, fam).unwrap();
                let slope = match fam { SchemeFamily::Ci => 16, SchemeFamily::Zf => 24 };
                prop_assert_eq!(b.total as i128 - a.total as i128, (d2 as i128 - d1 as i128) * slope);
            }
        }
    }
}
