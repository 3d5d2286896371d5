//! Alternating optimization: beamforming and antenna positions take turns
//! until the secrecy rate stops improving.

use std::time::{Duration, Instant};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::beamforming::{run_sca_for, tight_slack, BeamformingMode, ScaOptions};
use crate::error::{Error, Result};
use crate::geometry::{AntennaLayout, ChannelRealization, SystemParams, User};
use crate::linalg::CVector;
use crate::position::{sweep, PositionOptions};
use crate::qcqp::SolverStats;
use crate::rates::{received_power, BeamformingPair, ChannelPair, SolutionCandidate};

/// Relative rate margin demanded of the initial beams.
const INIT_MARGIN: f64 = 1e-6;
/// Share of the power budget the initial beams use, keeping rounding inside it.
const INIT_POWER: f64 = 1.0 - 1e-9;
/// Slack allowed on the secrecy rate before a stage's move is undone.
const ROLLBACK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum StageOrder {
    #[default]
    BeamformingFirst,
    PositionFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Init,
    Beamforming,
    Position,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AoOptions {
    /// Stop once an outer iteration gains less than this, bps/Hz.
    pub tolerance: f64,
    pub max_outer: usize,
    pub order: StageOrder,
    /// False runs the beamforming stage alone on the starting layout.
    pub move_antennas: bool,
    /// Overrides the mode of both stage option sets.
    pub mode: BeamformingMode,
    pub sca: ScaOptions,
    pub position: PositionOptions,
}

impl Default for AoOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            max_outer: 30,
            order: StageOrder::BeamformingFirst,
            move_antennas: true,
            mode: BeamformingMode::Noma,
            sca: ScaOptions::default(),
            // Later outer iterations re-expand anyway; long sweeps here cost
            // more than they gain.
            position: PositionOptions { max_sweeps: 5, ..PositionOptions::default() },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AoStatus {
    Converged,
    MaxIter,
    InitFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AoTraceEntry {
    pub outer: usize,
    pub stage: Stage,
    /// True ratio after the stage.
    pub ratio: f64,
    pub secrecy_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AoResult {
    pub candidate: SolutionCandidate,
    pub secrecy_rate: f64,
    pub trace: Vec<AoTraceEntry>,
    /// True-ratio trace inside every stage run, in execution order.
    pub stage_traces: Vec<(Stage, Vec<f64>)>,
    pub status: AoStatus,
    pub outer_iterations: usize,
    pub stats: SolverStats,
    /// Why the run stopped early, if it did.
    pub note: Option<String>,
    pub wall_time: Duration,
}

fn unit(v: &CVector) -> Option<CVector> {
    let n = v.norm();
    (n > 0.0 && n.is_finite()).then(|| v / Complex64::new(n, 0.0))
}

/// Direction of `h_c` with its `h_e` component removed, or `h_c` itself when
/// nothing is left.
fn nulling_direction(channels: &ChannelPair) -> Option<CVector> {
    let hc = unit(&channels.cu)?;
    let Some(he) = unit(&channels.ceu) else {
        return Some(hc);
    };
    let residual = &hc - &he * he.dotc(&hc);
    if residual.norm() > 1e-6 {
        unit(&residual)
    } else {
        Some(hc)
    }
}

fn strictly_feasible(channels: &ChannelPair, beams: &BeamformingPair, params: &SystemParams) -> bool {
    User::BOTH.iter().all(|&user| {
        let h = channels.get(user);
        let need = params.sinr_threshold(user) * (received_power(h, &beams.w1) + params.noise_power);
        received_power(h, &beams.w2) >= need * (1.0 + INIT_MARGIN)
    })
}

/// Starting beams for a fixed layout.
///
/// `w1` points along `h_c` with the `h_e` component projected out. In NOMA
/// mode `w2` is tried along `h_e`, along `h_c`, and along their phase-aligned
/// sum; for each, `w1` starts with half the power and is halved until both
/// rate thresholds hold. The direction admitting the largest `w1` wins.
pub fn initial_beams(channels: &ChannelPair, params: &SystemParams, mode: BeamformingMode) -> Result<BeamformingPair> {
    let p = params.max_power * INIT_POWER;
    let w1_dir = nulling_direction(channels).ok_or_else(|| Error::InitFailed("cell-center channel is zero".into()))?;
    if mode == BeamformingMode::SingleUser {
        let m = w1_dir.len();
        return Ok(BeamformingPair { w1: w1_dir * Complex64::new(p.sqrt(), 0.0), w2: CVector::zeros(m) });
    }
    let mut directions = Vec::new();
    let (hc, he) = (unit(&channels.cu), unit(&channels.ceu));
    if let Some(he) = &he {
        directions.push(he.clone());
    }
    if let Some(hc) = &hc {
        directions.push(hc.clone());
    }
    if let (Some(hc), Some(he)) = (&hc, &he) {
        let c = he.dotc(hc);
        let phase = if c.norm() > 0.0 { c.conj() / c.norm() } else { Complex64::new(1.0, 0.0) };
        if let Some(d) = unit(&(he + hc * phase)) {
            directions.push(d);
        }
    }

    let mut best: Option<(f64, BeamformingPair)> = None;
    for d2 in &directions {
        let mut p1 = p / 2.0;
        for _ in 0..=20 {
            let beams = BeamformingPair {
                w1: &w1_dir * Complex64::new(p1.sqrt(), 0.0),
                w2: d2 * Complex64::new((p - p1).sqrt(), 0.0),
            };
            if strictly_feasible(channels, &beams, params) {
                if best.as_ref().is_none_or(|(q, _)| p1 > *q) {
                    best = Some((p1, beams));
                }
                break;
            }
            p1 /= 2.0;
        }
    }
    best.map(|(_, b)| b)
        .ok_or_else(|| Error::InitFailed("rate thresholds unreachable at full power".into()))
}

/// Uniform grid layout with [`initial_beams`] on it.
pub fn initialize(realization: &ChannelRealization, params: &SystemParams, mode: BeamformingMode) -> Result<SolutionCandidate> {
    let layout = AntennaLayout::uniform_grid(params)?;
    let channels = ChannelPair::at(&layout, realization, params)?;
    let beams = initial_beams(&channels, params, mode)?;
    Ok(SolutionCandidate { layout, beams })
}

fn ratio_of(candidate: &SolutionCandidate, realization: &ChannelRealization, params: &SystemParams) -> Result<f64> {
    let channels = ChannelPair::at(&candidate.layout, realization, params)?;
    Ok(tight_slack(&channels, &candidate.beams, params.noise_power).tau)
}

fn failed(layout: AntennaLayout, note: String, started: Instant) -> AoResult {
    let m = layout.len();
    AoResult {
        candidate: SolutionCandidate { layout, beams: BeamformingPair::zeros(m) },
        secrecy_rate: 0.0,
        trace: Vec::new(),
        stage_traces: Vec::new(),
        status: AoStatus::InitFailed,
        outer_iterations: 0,
        stats: SolverStats::default(),
        note: Some(note),
        wall_time: started.elapsed(),
    }
}

/// Full run from the default initialization.
pub fn optimize(realization: &ChannelRealization, params: &SystemParams, opts: &AoOptions) -> Result<AoResult> {
    let started = Instant::now();
    match initialize(realization, params, opts.mode) {
        Ok(start) => optimize_from(start, realization, params, opts),
        Err(Error::InitFailed(why)) => Ok(failed(AntennaLayout::uniform_grid(params)?, why, started)),
        Err(e) => Err(e),
    }
}

/// Starting layout with [`initial_beams`]; init failures become a status.
pub fn optimize_layout(layout: AntennaLayout, realization: &ChannelRealization, params: &SystemParams, opts: &AoOptions) -> Result<AoResult> {
    let started = Instant::now();
    let channels = ChannelPair::at(&layout, realization, params)?;
    match initial_beams(&channels, params, opts.mode) {
        Ok(beams) => optimize_from(SolutionCandidate { layout, beams }, realization, params, opts),
        Err(Error::InitFailed(why)) => Ok(failed(layout, why, started)),
        Err(e) => Err(e),
    }
}

/// Alternates the stages from `start`, which must satisfy the original
/// constraints.
pub fn optimize_from(start: SolutionCandidate, realization: &ChannelRealization, params: &SystemParams, opts: &AoOptions) -> Result<AoResult> {
    let started = Instant::now();
    let sca = ScaOptions { mode: opts.mode, ..opts.sca.clone() };
    let pos = PositionOptions { mode: opts.mode, ..opts.position.clone() };
    let stages: Vec<Stage> = match (opts.move_antennas, opts.order) {
        (false, _) => vec![Stage::Beamforming],
        (true, StageOrder::BeamformingFirst) => vec![Stage::Beamforming, Stage::Position],
        (true, StageOrder::PositionFirst) => vec![Stage::Position, Stage::Beamforming],
    };

    let mut current = start;
    if opts.mode == BeamformingMode::SingleUser {
        current.beams.w2 = CVector::zeros(current.beams.len());
    }
    let mut ratio = ratio_of(&current, realization, params)?;
    let mut rate = ratio.log2();
    let mut trace = vec![AoTraceEntry { outer: 0, stage: Stage::Init, ratio, secrecy_rate: rate }];
    let mut stage_traces = Vec::new();
    let mut stats = SolverStats::default();
    let mut status = AoStatus::MaxIter;
    let mut note = None;
    let mut outer = 0;

    'outer: while outer < opts.max_outer {
        outer += 1;
        let before = rate;
        for &stage in &stages {
            let next = match stage {
                Stage::Beamforming => {
                    let channels = ChannelPair::at(&current.layout, realization, params)?;
                    match run_sca_for(&channels, &current.beams, params, &sca) {
                        Ok(out) => {
                            stats.merge(&out.stats);
                            stage_traces.push((stage, out.ratio_trace));
                            SolutionCandidate { layout: current.layout.clone(), beams: out.iterate.beams }
                        }
                        Err(Error::InitFailed(why)) => {
                            note = Some(format!("beamforming stage failed: {why}"));
                            break 'outer;
                        }
                        Err(e) => return Err(e),
                    }
                }
                Stage::Position => {
                    let out = sweep(&current.layout, &current.beams, realization, params, &pos)?;
                    stats.merge(&out.stats);
                    stage_traces.push((stage, out.ratio_trace));
                    SolutionCandidate { layout: out.iterate.layout, beams: current.beams.clone() }
                }
                Stage::Init => unreachable!(),
            };
            let next_ratio = ratio_of(&next, realization, params)?;
            let next_rate = next_ratio.log2();
            if next_rate < rate - ROLLBACK_TOL {
                note = Some(format!("{stage:?} stage lowered the secrecy rate; move undone"));
                break 'outer;
            }
            current = next;
            ratio = next_ratio;
            rate = next_rate;
            trace.push(AoTraceEntry { outer, stage, ratio, secrecy_rate: rate });
        }
        if rate - before < opts.tolerance {
            status = AoStatus::Converged;
            break;
        }
    }

    Ok(AoResult {
        candidate: current,
        secrecy_rate: rate,
        trace,
        stage_traces,
        status,
        outer_iterations: outer,
        stats,
        note,
        wall_time: started.elapsed(),
    })
}
