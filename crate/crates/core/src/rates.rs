//! NOMA rates, the secrecy rate and the feasibility audit of a candidate
//! solution.
//!
//! Both users first decode the cell-edge signal `s2` treating `s1` as
//! interference, cancel it, then decode `s1`. The secrecy rate is the
//! cell-center user's `s1` rate minus what the cell-edge user would get on
//! the same stream.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{synthesize_channel, AntennaLayout, ChannelRealization, SystemParams, User};
use crate::linalg::CVector;

/// Beamformers for the cell-center (`w1`) and cell-edge (`w2`) signals,
/// watts^1/2 per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingPair {
    pub w1: CVector,
    pub w2: CVector,
}

impl BeamformingPair {
    pub fn new(w1: CVector, w2: CVector) -> Result<Self> {
        if w1.len() != w2.len() {
            return Err(Error::DimensionMismatch {
                context: "beamforming pair",
                expected: w1.len(),
                actual: w2.len(),
            });
        }
        Ok(Self { w1, w2 })
    }

    pub fn zeros(m: usize) -> Self {
        Self {
            w1: CVector::zeros(m),
            w2: CVector::zeros(m),
        }
    }

    pub fn len(&self) -> usize {
        self.w1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w1.is_empty()
    }

    pub fn total_power(&self) -> f64 {
        self.w1.norm_squared() + self.w2.norm_squared()
    }

    pub fn beam(&self, stream: Stream) -> &CVector {
        match stream {
            Stream::CellCenter => &self.w1,
            Stream::CellEdge => &self.w2,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let c = Complex64::new(s, 0.0);
        Self {
            w1: self.w1.map(|z| z * c),
            w2: self.w2.map(|z| z * c),
        }
    }
}

/// Which superposed stream: `s1` (for the cell-center user) or `s2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    CellCenter,
    CellEdge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionCandidate {
    pub layout: AntennaLayout,
    pub beams: BeamformingPair,
}

/// `|h^H w|^2`.
pub fn received_power(h: &CVector, w: &CVector) -> f64 {
    h.dotc(w).norm_sqr()
}

/// Rate of `s2` at a receiver with channel `h`, SIC first stage.
pub fn rate_s2_for_channel(h: &CVector, beams: &BeamformingPair, noise_power: f64) -> f64 {
    let signal = received_power(h, &beams.w2);
    let interference = received_power(h, &beams.w1);
    (1.0 + signal / (noise_power + interference)).log2()
}

/// Rate of `s1` after `s2` has been cancelled.
pub fn rate_s1_for_channel(h: &CVector, beams: &BeamformingPair, noise_power: f64) -> f64 {
    (1.0 + received_power(h, &beams.w1) / noise_power).log2()
}

/// Both users' channels at a given layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPair {
    pub cu: CVector,
    pub ceu: CVector,
}

impl ChannelPair {
    pub fn at(layout: &AntennaLayout, realization: &ChannelRealization, params: &SystemParams) -> Result<Self> {
        Ok(Self {
            cu: synthesize_channel(layout, realization, User::CellCenter, params.wavelength)?,
            ceu: synthesize_channel(layout, realization, User::CellEdge, params.wavelength)?,
        })
    }

    pub fn get(&self, user: User) -> &CVector {
        match user {
            User::CellCenter => &self.cu,
            User::CellEdge => &self.ceu,
        }
    }

    /// `(sigma^2 + |h_c^H w1|^2) / (sigma^2 + |h_e^H w1|^2)`, whose log2 is the
    /// secrecy rate.
    pub fn secrecy_ratio(&self, w1: &CVector, noise_power: f64) -> f64 {
        (noise_power + received_power(&self.cu, w1)) / (noise_power + received_power(&self.ceu, w1))
    }
}

fn channel(candidate: &SolutionCandidate, realization: &ChannelRealization, params: &SystemParams, user: User) -> Result<CVector> {
    if candidate.beams.len() != candidate.layout.len() {
        return Err(Error::DimensionMismatch {
            context: "beams vs layout",
            expected: candidate.layout.len(),
            actual: candidate.beams.len(),
        });
    }
    synthesize_channel(&candidate.layout, realization, user, params.wavelength)
}

pub fn rate_s2(candidate: &SolutionCandidate, realization: &ChannelRealization, params: &SystemParams, user: User) -> Result<f64> {
    let h = channel(candidate, realization, params, user)?;
    Ok(rate_s2_for_channel(&h, &candidate.beams, params.noise_power))
}

pub fn rate_s1(candidate: &SolutionCandidate, realization: &ChannelRealization, params: &SystemParams, user: User) -> Result<f64> {
    let h = channel(candidate, realization, params, user)?;
    Ok(rate_s1_for_channel(&h, &candidate.beams, params.noise_power))
}

/// `R_c1 - R_e1`; negative values are returned as-is.
pub fn secrecy_rate(candidate: &SolutionCandidate, realization: &ChannelRealization, params: &SystemParams) -> Result<f64> {
    Ok(rate_s1(candidate, realization, params, User::CellCenter)?
        - rate_s1(candidate, realization, params, User::CellEdge)?)
}

/// Rates and constraint margins of a candidate. Every margin is "value minus
/// bound", non-negative when the constraint holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub r_c1: f64,
    pub r_e1: f64,
    pub r_c2: f64,
    pub r_e2: f64,
    pub r_s: f64,
    /// `R_{k,2} - r_k`, bps/Hz, per user (cell-center, cell-edge).
    pub rate_margin: [f64; 2],
    /// `(|h^H w2|^2 - L_r (|h^H w1|^2 + sigma^2)) / sigma^2`, per user.
    pub threshold_margin: [f64; 2],
    /// `1 - (|w1|^2 + |w2|^2) / P_max`.
    pub power_margin: f64,
    /// Smallest distance of an antenna to the region boundary, meters.
    pub region_margin: f64,
    /// Smallest pairwise distance minus `D`, meters.
    pub spacing_margin: f64,
}

impl RateReport {
    pub fn rate_ok(&self) -> [bool; 2] {
        [self.rate_margin[0] >= 0.0, self.rate_margin[1] >= 0.0]
    }

    pub fn power_ok(&self) -> bool {
        self.power_margin >= 0.0
    }

    pub fn region_ok(&self) -> bool {
        self.region_margin >= 0.0
    }

    pub fn spacing_ok(&self) -> bool {
        self.spacing_margin >= 0.0
    }

    /// All constraint families hold with every margin at least `-tol`.
    pub fn feasible_within(&self, tol: f64) -> bool {
        self.rate_margin.iter().all(|m| *m >= -tol)
            && self.power_margin >= -tol
            && self.region_margin >= -tol
            && self.spacing_margin >= -tol
    }

    pub fn worst_margin(&self) -> f64 {
        self.rate_margin
            .iter()
            .copied()
            .chain([self.power_margin, self.region_margin, self.spacing_margin])
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn check_feasibility(candidate: &SolutionCandidate, realization: &ChannelRealization, params: &SystemParams) -> Result<RateReport> {
    let hc = channel(candidate, realization, params, User::CellCenter)?;
    let he = channel(candidate, realization, params, User::CellEdge)?;
    let beams = &candidate.beams;
    let noise = params.noise_power;
    let r_c1 = rate_s1_for_channel(&hc, beams, noise);
    let r_e1 = rate_s1_for_channel(&he, beams, noise);
    let r_c2 = rate_s2_for_channel(&hc, beams, noise);
    let r_e2 = rate_s2_for_channel(&he, beams, noise);
    let threshold = |h: &CVector, user: User| {
        let lr = params.sinr_threshold(user);
        (received_power(h, &beams.w2) - lr * (received_power(h, &beams.w1) + noise)) / noise
    };
    let spacing_margin = if candidate.layout.len() < 2 {
        f64::INFINITY
    } else {
        candidate.layout.min_pairwise_distance() - params.min_spacing
    };
    Ok(RateReport {
        r_c1,
        r_e1,
        r_c2,
        r_e2,
        r_s: r_c1 - r_e1,
        rate_margin: [
            r_c2 - params.rate_threshold_for(User::CellCenter),
            r_e2 - params.rate_threshold_for(User::CellEdge),
        ],
        threshold_margin: [threshold(&hc, User::CellCenter), threshold(&he, User::CellEdge)],
        power_margin: 1.0 - beams.total_power() / params.max_power,
        region_margin: candidate.layout.region_margin(&params.region),
        spacing_margin,
    })
}
