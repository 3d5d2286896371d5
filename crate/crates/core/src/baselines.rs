//! Reference schemes: fixed and random antenna positions, a two-slot
//! orthogonal scheme, and an exhaustive position search.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ao::{optimize_layout, AoOptions, AoResult, AoStatus};
use crate::beamforming::BeamformingMode;
use crate::error::{Error, Result};
use crate::geometry::{field_response_vector, AntennaLayout, ChannelRealization, Point2, SystemParams, User};
use crate::rates::{BeamformingPair, ChannelPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaselineKind {
    Fpa,
    Rpa,
    OmaFas,
    GridOracle,
}

/// Half-wavelength-style linear array, beamforming only.
pub fn run_fpa(realization: &ChannelRealization, params: &SystemParams, opts: &AoOptions) -> Result<AoResult> {
    let layout = AntennaLayout::linear_array(params)?;
    optimize_layout(layout, realization, params, &AoOptions { move_antennas: false, ..opts.clone() })
}

/// Best of `num_draws` random feasible layouts, each with its beams
/// optimized. Draws whose initialization fails only win if all do.
pub fn run_rpa<R: Rng + ?Sized>(
    realization: &ChannelRealization,
    params: &SystemParams,
    rng: &mut R,
    num_draws: usize,
    opts: &AoOptions,
) -> Result<AoResult> {
    let fixed = AoOptions { move_antennas: false, ..opts.clone() };
    let mut best: Option<AoResult> = None;
    for _ in 0..num_draws.max(1) {
        let layout = AntennaLayout::random(params, rng, 10_000)?;
        let out = optimize_layout(layout, realization, params, &fixed)?;
        let better = match &best {
            None => true,
            Some(b) => match (b.status == AoStatus::InitFailed, out.status == AoStatus::InitFailed) {
                (true, false) => true,
                (false, true) => false,
                _ => out.secrecy_rate > b.secrecy_rate,
            },
        };
        if better {
            best = Some(out);
        }
    }
    Ok(best.expect("at least one draw"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmaResult {
    /// The cell-center slot: full power, secrecy beamforming and positions.
    pub slot1: AoResult,
    /// Half the slot-1 secrecy rate.
    pub secrecy_rate: f64,
    /// Whether the cell-edge slot reaches rate `2r` with matched filtering.
    pub slot2_feasible: bool,
}

/// Two equal time slots. Slot 1 serves only the cell-center user with the
/// whole power budget and optimizes beams and positions for secrecy; slot 2
/// serves the cell-edge user alone, which needs rate `2r` to match what NOMA
/// delivers over the full frame.
pub fn run_oma(realization: &ChannelRealization, params: &SystemParams, opts: &AoOptions) -> Result<OmaResult> {
    let slot1_opts = AoOptions { mode: BeamformingMode::SingleUser, ..opts.clone() };
    let slot1 = optimize_layout(AntennaLayout::uniform_grid(params)?, realization, params, &slot1_opts)?;
    let channels = ChannelPair::at(&slot1.candidate.layout, realization, params)?;
    let snr = params.max_power * channels.ceu.norm_squared() / params.noise_power;
    let slot2_feasible = (1.0 + snr).log2() >= 2.0 * params.rate_threshold_for(User::CellEdge);
    Ok(OmaResult {
        secrecy_rate: 0.5 * slot1.secrecy_rate,
        slot1,
        slot2_feasible,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub layout: AntennaLayout,
    /// True ratio `(sigma^2 + |h_c^H w1|^2) / (sigma^2 + |h_e^H w1|^2)`.
    pub objective: f64,
    pub points_checked: usize,
}

/// Per-antenna channel coefficient `h_m = g(t)^H (Sigma f)` at each lattice point.
fn lattice_channels(points: &[Point2], realization: &ChannelRealization, user: User, wavelength: f64) -> Vec<num_complex::Complex64> {
    let gains = realization.path_gains(user);
    let angles = realization.angles(user);
    points
        .iter()
        .map(|&p| field_response_vector(p, angles, wavelength).dotc(&gains))
        .collect()
}

/// Exhaustive search over a square lattice of pitch `grid_step` with the
/// beams fixed. Layouts must respect the spacing and both rate thresholds.
/// Returns `None` when no lattice layout is feasible.
pub fn grid_oracle(
    realization: &ChannelRealization,
    params: &SystemParams,
    beams: &BeamformingPair,
    grid_step: f64,
) -> Result<Option<OracleResult>> {
    let m = beams.len();
    if m > 2 {
        return Err(Error::OracleTooLarge(m));
    }
    if m == 0 || !(grid_step > 0.0) {
        return Err(Error::InvalidParams(format!("grid oracle needs 1..=2 antennas and a positive step, got {m} and {grid_step}")));
    }
    let region = &params.region;
    let count = |span: f64| (span / grid_step + 1e-9).floor() as usize + 1;
    let (nx, ny) = (count(region.width()), count(region.height()));
    let points: Vec<Point2> = (0..ny)
        .flat_map(|j| (0..nx).map(move |i| (i, j)))
        .map(|(i, j)| Point2::new(region.x_lo + i as f64 * grid_step, region.y_lo + j as f64 * grid_step))
        .collect();
    let hc = lattice_channels(&points, realization, User::CellCenter, params.wavelength);
    let he = lattice_channels(&points, realization, User::CellEdge, params.wavelength);
    let noise = params.noise_power;
    let thresholds = [params.sinr_threshold(User::CellCenter), params.sinr_threshold(User::CellEdge)];

    // |h^H w|^2 for the two streams given per-antenna coefficients.
    let powers = |h: &[num_complex::Complex64]| {
        let (mut a, mut b) = (num_complex::Complex64::new(0.0, 0.0), num_complex::Complex64::new(0.0, 0.0));
        for (k, z) in h.iter().enumerate() {
            a += z.conj() * beams.w1[k];
            b += z.conj() * beams.w2[k];
        }
        (a.norm_sqr(), b.norm_sqr())
    };
    let score = |c: &[num_complex::Complex64], e: &[num_complex::Complex64]| -> Option<f64> {
        let (c1, c2) = powers(c);
        let (e1, e2) = powers(e);
        let ok = c2 >= thresholds[0] * (c1 + noise) && e2 >= thresholds[1] * (e1 + noise);
        ok.then(|| (noise + c1) / (noise + e1))
    };

    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut checked = 0;
    let mut consider = |value: Option<f64>, idx: Vec<usize>| {
        if let Some(v) = value {
            if best.as_ref().is_none_or(|(b, _)| v > *b) {
                best = Some((v, idx));
            }
        }
    };
    if m == 1 {
        for i in 0..points.len() {
            checked += 1;
            consider(score(&[hc[i]], &[he[i]]), vec![i]);
        }
    } else {
        for i in 0..points.len() {
            for j in 0..points.len() {
                if i == j || points[i].distance(&points[j]) < params.min_spacing {
                    continue;
                }
                checked += 1;
                consider(score(&[hc[i], hc[j]], &[he[i], he[j]]), vec![i, j]);
            }
        }
    }
    Ok(best.map(|(objective, idx)| OracleResult {
        layout: AntennaLayout::new(idx.iter().map(|&i| points[i]).collect()),
        objective,
        points_checked: checked,
    }))
}
