//! Position stage: antennas are moved one at a time with the beams fixed.
//!
//! For antenna `m` the subproblem is
//!
//! ```text
//! max tau  s.t.  psi(tau, eps) <= 1 + lo_c1(t)
//!                1 + hi_e1(t) <= eps
//!                L_r <= lo_k(t),            k = c, e
//!                n_k . (t - t_k) >= D,      k != m
//!                t in the placement region
//! ```
//!
//! where `lo`/`hi` are quadratic minorizers/majorizers in `t` of the received
//! SNR terms, tangent at the current position. Variables are the displacement
//! in wavelengths and the two slacks relative to their expansion values.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::beamforming::{beams_feasible, tight_slack, BeamformingMode};
use crate::error::{Error, Result};
use crate::geometry::{AntennaLayout, ChannelRealization, Point2, SystemParams, User};
use crate::linalg::{RMatrix, RVector};
use crate::qcqp::{solve, QcqpProblem, QuadConstraint, SolveStatus, SolverOptions, SolverStats};
use crate::rates::{BeamformingPair, ChannelPair, Stream};
use crate::surrogates::{build_quadform_cache, distance_linearize, BoundKind, ProductBound, ProductQuadratic, QuadFormCache, SlackState, TaylorBound};

const DX: usize = 0;
const DY: usize = 1;
const TAU: usize = 2;
const EPS: usize = 3;
const DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SweepOrder {
    #[default]
    Fixed,
    /// A fresh permutation every sweep, drawn from this seed.
    Shuffled(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionOptions {
    /// Stop once no antenna moved more than `tolerance * lambda` in a sweep.
    pub tolerance: f64,
    pub max_sweeps: usize,
    pub order: SweepOrder,
    pub mode: BeamformingMode,
    pub bound: ProductBound,
    /// Try each move with a fraction of the global curvature first, raising
    /// it back to the full bound whenever the audit rejects the result.
    pub adaptive_curvature: bool,
    pub solver: SolverOptions,
}

impl Default for PositionOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-3,
            max_sweeps: 20,
            order: SweepOrder::Fixed,
            mode: BeamformingMode::Noma,
            bound: ProductBound::default(),
            adaptive_curvature: true,
            solver: SolverOptions::default(),
        }
    }
}

/// Smallest curvature fraction ever tried.
const MIN_SCALE: f64 = 1.0 / 64.0;
/// Factor the fraction grows by after a rejected move.
const SCALE_STEP: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PositionIterate {
    pub layout: AntennaLayout,
    /// Tight slacks at `layout`; `eps` is in watts.
    pub slack: SlackState,
    pub sweep: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepStatus {
    Converged,
    MaxSweeps,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub iterate: PositionIterate,
    /// True ratio at the start and after every accepted move.
    pub ratio_trace: Vec<f64>,
    /// Largest displacement of each sweep, meters.
    pub displacement_trace: Vec<f64>,
    /// Antenna updates that kept the old position.
    pub null_moves: usize,
    pub status: SweepStatus,
    pub stats: SolverStats,
}

/// Puts `scale * bound(t_l + lambda d)` into a row, up to the bound's sign:
/// the returned pieces are `(quad on d, lin on d, constant)`.
fn taylor_in_displacement(bound: &TaylorBound, wavelength: f64, scale: f64, curvature: f64) -> (f64, [f64; 2], f64) {
    let curv = 0.5 * bound.curvature * curvature * wavelength * wavelength * scale;
    let quad = match bound.kind {
        BoundKind::Minorizer => -curv,
        BoundKind::Majorizer => curv,
    };
    let lin = [bound.gradient[0] * wavelength * scale, bound.gradient[1] * wavelength * scale];
    (quad, lin, bound.value * scale)
}

fn row(quad_d: f64, lin_d: [f64; 2]) -> (RMatrix, RVector) {
    let mut quad = RMatrix::zeros(DIM, DIM);
    quad[(DX, DX)] = quad_d;
    quad[(DY, DY)] = quad_d;
    let mut lin = RVector::zeros(DIM);
    lin[DX] = lin_d[0];
    lin[DY] = lin_d[1];
    (quad, lin)
}

/// Subproblem for antenna `m` around the cache's layout. `slack.eps` is in
/// watts and must be positive, as must `slack.tau`.
///
/// Variables are `[dx, dy, tau / tau_l, eps / eps_l]` with `t = t_l + lambda d`.
pub fn build_position_subproblem(
    cache: &QuadFormCache,
    m: usize,
    slack: SlackState,
    params: &SystemParams,
    mode: BeamformingMode,
    bound: ProductBound,
) -> Result<QcqpProblem> {
    build_with_curvature(cache, m, slack, params, mode, bound, 1.0)
}

/// As [`build_position_subproblem`] with every position curvature multiplied
/// by `curvature`; below 1 the rows are no longer global bounds.
fn build_with_curvature(
    cache: &QuadFormCache,
    m: usize,
    slack: SlackState,
    params: &SystemParams,
    mode: BeamformingMode,
    bound: ProductBound,
    curvature: f64,
) -> Result<QcqpProblem> {
    let layout = cache.layout();
    if m >= layout.len() {
        return Err(Error::DimensionMismatch {
            context: "antenna index",
            expected: layout.len(),
            actual: m,
        });
    }
    let tau_l = slack.tau;
    let eps_l = slack.eps / params.noise_power;
    if !(tau_l > 0.0 && eps_l > 0.0) {
        return Err(Error::InvalidParams(format!("expansion slacks must be positive, got {slack:?}")));
    }
    let lambda = params.wavelength;
    let here = layout.position(m);
    let mut objective = RVector::zeros(DIM);
    objective[TAU] = 1.0;
    let mut problem = QcqpProblem::new(objective)?;

    // Ratio: psi(tau, eps) - 1 - lo_c1(t) <= 0, divided by tau_l eps_l.
    let size = tau_l * eps_l;
    let field = cache.lower_bound_in_field(User::CellCenter, cache.coupling(Stream::CellCenter), m);
    let (q, l, c) = taylor_in_displacement(&field.taylor(BoundKind::Minorizer, here), lambda, 1.0 / size, curvature);
    let (mut quad, mut lin) = row(-q, [-l[0], -l[1]]);
    let psi = ProductQuadratic::new(bound, tau_l, eps_l);
    let unit = [tau_l, eps_l];
    for (a, i) in [TAU, EPS].into_iter().enumerate() {
        for (b, j) in [TAU, EPS].into_iter().enumerate() {
            quad[(i, j)] = psi.quad[a][b] * unit[a] * unit[b] / size;
        }
        lin[i] = psi.lin[a] * unit[a] / size;
    }
    let constant = (psi.constant - 1.0 - field.constant) / size - c;
    problem.add_constraint(QuadConstraint::quadratic(quad, lin, constant))?;

    // Leakage: 1 + hi_e1(t) - eps <= 0, divided by eps_l.
    let field = cache.upper_bound_in_field(User::CellEdge, cache.coupling(Stream::CellCenter), m);
    let (q, l, c) = taylor_in_displacement(&field.taylor(BoundKind::Majorizer, here), lambda, 1.0 / eps_l, curvature);
    let (quad, mut lin) = row(q, l);
    lin[EPS] = -1.0;
    problem.add_constraint(QuadConstraint::quadratic(quad, lin, c + (1.0 + field.constant) / eps_l))?;

    if mode == BeamformingMode::Noma {
        // Rate: L_r - lo_k(t) <= 0.
        for user in User::BOTH {
            let l_r = params.sinr_threshold(user);
            let field = cache.lower_bound_in_field(user, &cache.threshold_coefficients(l_r), m);
            let size = field.eval(here).abs().max(l_r).max(1.0);
            let (q, l, c) = taylor_in_displacement(&field.taylor(BoundKind::Minorizer, here), lambda, 1.0 / size, curvature);
            let (quad, lin) = row(-q, [-l[0], -l[1]]);
            problem.add_constraint(QuadConstraint::quadratic(quad, lin, (l_r - field.constant) / size - c))?;
        }
    }

    // Spacing: D - n_k . (t - t_k) <= 0, divided by D.
    let d_min = params.min_spacing;
    if d_min > 0.0 {
        for k in (0..layout.len()).filter(|&k| k != m) {
            let other = layout.position(k);
            let cut = distance_linearize(here, other)?;
            let mut lin = RVector::zeros(DIM);
            lin[DX] = -cut.normal[0] * lambda / d_min;
            lin[DY] = -cut.normal[1] * lambda / d_min;
            problem.add_constraint(QuadConstraint::affine(lin, 1.0 - cut.eval(here) / d_min))?;
        }
    }

    let region = &params.region;
    problem.set_bounds(DX, (region.x_lo - here.x) / lambda, (region.x_hi - here.x) / lambda)?;
    problem.set_bounds(DY, (region.y_lo - here.y) / lambda, (region.y_hi - here.y) / lambda)?;
    problem.set_bounds(TAU, 0.0, f64::INFINITY)?;
    problem.set_bounds(EPS, 0.0, f64::INFINITY)?;
    Ok(problem)
}

/// The subproblem's expansion point: no displacement, both slacks tight.
pub fn expansion_point() -> RVector {
    RVector::from_vec(vec![0.0, 0.0, 1.0, 1.0])
}

fn layout_ok(layout: &AntennaLayout, m: usize, params: &SystemParams) -> bool {
    let p = layout.position(m);
    params.region.margin(&p) >= -1e-9
        && (0..layout.len())
            .filter(|&k| k != m)
            .all(|k| p.distance(&layout.position(k)) >= params.min_spacing - 1e-9)
}

/// Sweeps the antennas in turn until the layout settles. A move is kept only
/// if the true ratio does not drop and every original constraint still
/// holds; otherwise the antenna stays put.
pub fn sweep(
    layout: &AntennaLayout,
    beams: &BeamformingPair,
    realization: &ChannelRealization,
    params: &SystemParams,
    opts: &PositionOptions,
) -> Result<SweepOutcome> {
    if beams.len() != layout.len() {
        return Err(Error::DimensionMismatch {
            context: "beams vs layout",
            expected: layout.len(),
            actual: beams.len(),
        });
    }
    let noise = params.noise_power;
    let mut layout = layout.clone();
    let channels = ChannelPair::at(&layout, realization, params)?;
    let mut slack = tight_slack(&channels, beams, noise);
    let mut ratio_trace = vec![slack.tau];
    let mut displacement_trace = Vec::new();
    let mut stats = SolverStats::default();
    let mut null_moves = 0;
    let mut status = SweepStatus::MaxSweeps;
    let mut sweeps = 0;
    let mut rng = match opts.order {
        SweepOrder::Shuffled(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        SweepOrder::Fixed => None,
    };
    let mut order: Vec<usize> = (0..layout.len()).collect();
    // Curvature fraction of each antenna's last accepted move.
    let mut scales = vec![0.25; layout.len()];

    for _ in 0..opts.max_sweeps {
        if let Some(rng) = rng.as_mut() {
            order.shuffle(rng);
        }
        let mut largest = 0.0f64;
        for &m in &order {
            let cache = build_quadform_cache(beams, &layout, realization, params.wavelength, noise)?;
            let old = layout.position(m);
            let mut curvature = if opts.adaptive_curvature { (scales[m] / SCALE_STEP).max(MIN_SCALE) } else { 1.0 };
            let mut accepted = None;
            loop {
                curvature = curvature.min(1.0);
                let problem = build_with_curvature(&cache, m, slack, params, opts.mode, opts.bound, curvature)?;
                let mut solver = opts.solver.clone();
                solver.initial_hint = Some(expansion_point());
                let sol = solve(&problem, &solver);
                stats.record(&sol);
                if sol.status == SolveStatus::Optimal {
                    let moved = Point2::new(old.x + params.wavelength * sol.x[DX], old.y + params.wavelength * sol.x[DY]);
                    let candidate = layout.with_position(m, moved);
                    let channels = ChannelPair::at(&candidate, realization, params)?;
                    let next = tight_slack(&channels, beams, noise);
                    let ascent = next.tau >= slack.tau - 1e-9 * slack.tau.max(1.0);
                    if ascent && layout_ok(&candidate, m, params) && beams_feasible(&channels, beams, params, opts.mode, 1e-6) {
                        accepted = Some((candidate, next, moved));
                        break;
                    }
                }
                if curvature >= 1.0 {
                    break;
                }
                curvature *= SCALE_STEP;
            }
            let Some((candidate, next, moved)) = accepted else {
                null_moves += 1;
                scales[m] = 1.0;
                continue;
            };
            scales[m] = curvature;
            largest = largest.max(old.distance(&moved));
            layout = candidate;
            slack = next;
            ratio_trace.push(slack.tau);
        }
        sweeps += 1;
        displacement_trace.push(largest);
        if largest < opts.tolerance * params.wavelength {
            status = SweepStatus::Converged;
            break;
        }
    }

    Ok(SweepOutcome {
        iterate: PositionIterate {
            layout,
            slack,
            sweep: sweeps,
            objective: slack.tau,
        },
        ratio_trace,
        displacement_trace,
        null_moves,
        status,
        stats,
    })
}
