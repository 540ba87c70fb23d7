//! Deployment geometry, path loss and Rayleigh channel draws.
//!
//! Channel draws consume the RNG in a fixed order: BS-major, then user, then
//! antenna, real part before imaginary part.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BsClass, ChannelSet, NetworkConfig, Users, C64};

const MAX_PLACEMENT_TRIES: usize = 10_000;

/// Cell layout used when users are placed at random.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    /// Users are drawn uniformly on a disc of this radius (km) around the
    /// first BS (the macro).
    pub cell_radius: f64,
    /// Minimum BS-user distance (km); also the path-loss distance clamp.
    pub min_bs_user_distance: f64,
}

impl Default for GeometrySpec {
    fn default() -> Self {
        GeometrySpec {
            cell_radius: 0.5,
            min_bs_user_distance: 0.01,
        }
    }
}

impl GeometrySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_bs_user_distance > 0.0) {
            return Err(Error::Config("min_bs_user_distance must be > 0".into()));
        }
        if !(self.cell_radius > 0.0) {
            return Err(Error::Config("cell_radius must be > 0".into()));
        }
        Ok(())
    }
}

/// Distance-dependent path loss in dB, `d` in km.
pub fn path_loss_db(class: BsClass, d: f64) -> Result<f64> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::Domain(format!("distance {d} km must be positive")));
    }
    Ok(match class {
        BsClass::Macro => 128.1 + 37.6 * d.log10(),
        BsClass::Pico => 140.7 + 36.7 * d.log10(),
    })
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// User positions: fixed ones from the config, or uniform on the cell disc
/// with rejection of points too close to any BS.
pub fn place_users<R: Rng + ?Sized>(
    config: &NetworkConfig,
    geometry: &GeometrySpec,
    rng: &mut R,
) -> Result<Vec<[f64; 2]>> {
    geometry.validate()?;
    let count = match &config.users {
        Users::Fixed(list) => return Ok(list.iter().map(|u| u.position).collect()),
        Users::Count(k) => *k,
    };
    if count == 0 {
        return Err(Error::Config("at least one user is required".into()));
    }
    let center = config
        .bs_list
        .first()
        .ok_or_else(|| Error::Config("bs_list is empty".into()))?
        .position;
    if geometry.min_bs_user_distance >= geometry.cell_radius {
        return Err(Error::Config(format!(
            "min BS-user distance {} km leaves no room in a {} km cell",
            geometry.min_bs_user_distance, geometry.cell_radius
        )));
    }
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let r = geometry.cell_radius * rng.random::<f64>().sqrt();
            let phi = 2.0 * std::f64::consts::PI * rng.random::<f64>();
            let p = [center[0] + r * phi.cos(), center[1] + r * phi.sin()];
            if config
                .bs_list
                .iter()
                .all(|bs| distance(p, bs.position) >= geometry.min_bs_user_distance)
            {
                out.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Config(format!(
                "could not place user {k} after {MAX_PLACEMENT_TRIES} draws"
            )));
        }
    }
    Ok(out)
}

/// Path loss plus i.i.d. unit-variance circular Gaussian fading.
pub fn generate_channels<R: Rng + ?Sized>(
    config: &NetworkConfig,
    positions: &[[f64; 2]],
    rng: &mut R,
) -> Result<ChannelSet> {
    let clamp = config.geometry.min_bs_user_distance;
    let half = 0.5f64.sqrt();
    let mut vectors = Vec::with_capacity(config.bs_list.len());
    for bs in &config.bs_list {
        let mut per_user = Vec::with_capacity(positions.len());
        for &p in positions {
            let d = distance(p, bs.position).max(clamp);
            let amp = 10f64.powf(-path_loss_db(bs.class, d)? / 20.0);
            let h = DVector::from_fn(bs.antennas, |_, _| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                C64::new(re * half, im * half) * amp
            });
            per_user.push(h);
        }
        vectors.push(per_user);
    }
    ChannelSet::new(vectors)
}

/// Plain-text dump: one line per `(g, k)`: `g k re0 im0 re1 im1 ...`,
/// 17 significant digits per value.
pub fn format_channels(channels: &ChannelSet) -> String {
    let mut out = String::new();
    for g in 0..channels.num_bs() {
        for k in 0..channels.num_users() {
            write!(out, "{g} {k}").unwrap();
            for z in channels.get(g, k).iter() {
                write!(out, " {:.16e} {:.16e}", z.re, z.im).unwrap();
            }
            out.push('\n');
        }
    }
    out
}

pub fn parse_channels(text: &str) -> Result<ChannelSet> {
    let mut entries: Vec<(usize, usize, DVector<C64>)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| Error::Parse(format!("line {}: {what}", lineno + 1));
        let mut fields = line.split_whitespace();
        let g: usize = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("missing BS index"))?;
        let k: usize = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("missing user index"))?;
        let values = fields
            .map(|s| s.parse::<f64>().map_err(|_| bad("bad number")))
            .collect::<Result<Vec<_>>>()?;
        if values.len() % 2 != 0 {
            return Err(bad("odd number of real values"));
        }
        let h = DVector::from_iterator(
            values.len() / 2,
            values.chunks(2).map(|p| C64::new(p[0], p[1])),
        );
        entries.push((g, k, h));
    }
    let num_bs = entries.iter().map(|e| e.0 + 1).max().unwrap_or(0);
    let num_users = entries.iter().map(|e| e.1 + 1).max().unwrap_or(0);
    let mut grid: Vec<Vec<Option<DVector<C64>>>> = vec![vec![None; num_users]; num_bs];
    for (g, k, h) in entries {
        if grid[g][k].replace(h).is_some() {
            return Err(Error::Parse(format!("duplicate entry for ({g}, {k})")));
        }
    }
    let vectors = grid
        .into_iter()
        .enumerate()
        .map(|(g, row)| {
            row.into_iter()
                .enumerate()
                .map(|(k, h)| h.ok_or_else(|| Error::Parse(format!("missing entry ({g}, {k})"))))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    ChannelSet::new(vectors)
}

pub fn save_channels(channels: &ChannelSet, path: &Path) -> Result<()> {
    std::fs::write(path, format_channels(channels)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_channels(path: &Path) -> Result<ChannelSet> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_channels(&text)
}
