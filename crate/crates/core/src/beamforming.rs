//! Beamforming stage: successive convex approximation over `(w1, w2)` with
//! the antenna layout held fixed.
//!
//! Each iteration solves
//!
//! ```text
//! max tau  s.t.  1 + |a_e^H u1|^2 <= eps
//!                psi(tau, eps) <= 1 + f_c(u1)
//!                L_r (|a_k^H u1|^2 + 1) <= f_k(u2),   k = c, e
//!                |u1|^2 + |u2|^2 <= 1
//! ```
//!
//! in normalized units `u = w / sqrt(P)`, `a = h sqrt(P) / sigma`, where the
//! `f` terms are tangent minorizers at the previous iterate and `psi` is the
//! bilinear bound on `tau * eps`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AntennaLayout, ChannelRealization, SystemParams, User};
use crate::linalg::{lift_hermitian_form, lift_linear, lift_vector, unlift_vector, CVector, HermitianMatrix, RMatrix, RVector};
use crate::qcqp::{solve, QcqpProblem, QuadConstraint, SolveStatus, SolverOptions, SolverStats};
use crate::rates::{received_power, BeamformingPair, ChannelPair};
use crate::surrogates::{quadform_linearize, ProductBound, ProductQuadratic, SlackState};

/// `Noma` optimizes both streams under the rate constraints; `SingleUser`
/// drops `w2` and the rate constraints, leaving a pure secrecy beamformer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BeamformingMode {
    #[default]
    Noma,
    SingleUser,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaOptions {
    /// Stop once the relative ratio gain of an iteration drops below this.
    pub tolerance: f64,
    pub max_outer: usize,
    pub mode: BeamformingMode,
    pub bound: ProductBound,
    pub solver: SolverOptions,
}

impl Default for ScaOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            max_outer: 50,
            mode: BeamformingMode::Noma,
            bound: ProductBound::default(),
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingIterate {
    pub beams: BeamformingPair,
    /// `tau` is the ratio slack; `eps` is in watts.
    pub slack: SlackState,
    pub iteration: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScaStatus {
    Converged,
    MaxIter,
    /// A solve failed or its point was rejected; the last good iterate is kept.
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaOutcome {
    pub iterate: BeamformingIterate,
    /// True ratio `(sigma^2 + |h_c^H w1|^2) / (sigma^2 + |h_e^H w1|^2)` at the
    /// start and after every accepted iteration.
    pub ratio_trace: Vec<f64>,
    /// Optimal `tau` of every successful subproblem.
    pub tau_trace: Vec<f64>,
    pub status: ScaStatus,
    pub stats: SolverStats,
}

/// Channels and expansion point in normalized units.
struct Scaled {
    a_c: CVector,
    a_e: CVector,
    u1: CVector,
    u2: CVector,
    amp: f64,
}

impl Scaled {
    fn new(channels: &ChannelPair, beams: &BeamformingPair, params: &SystemParams) -> Self {
        let amp = params.max_power.sqrt();
        let gain = Complex64::new(amp / params.noise_power.sqrt(), 0.0);
        let inv = Complex64::new(1.0 / amp, 0.0);
        Self {
            a_c: channels.cu.map(|z| z * gain),
            a_e: channels.ceu.map(|z| z * gain),
            u1: beams.w1.map(|z| z * inv),
            u2: beams.w2.map(|z| z * inv),
            amp,
        }
    }

    fn channel(&self, user: User) -> &CVector {
        match user {
            User::CellCenter => &self.a_c,
            User::CellEdge => &self.a_e,
        }
    }
}

/// Index map of the lifted variable vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    m: usize,
    mode: BeamformingMode,
}

impl Layout {
    fn u1(&self) -> usize {
        0
    }
    fn u2(&self) -> usize {
        2 * self.m
    }
    fn tau(&self) -> usize {
        match self.mode {
            BeamformingMode::Noma => 4 * self.m,
            BeamformingMode::SingleUser => 2 * self.m,
        }
    }
    fn eps(&self) -> usize {
        self.tau() + 1
    }
    fn len(&self) -> usize {
        self.tau() + 2
    }
}

fn embed(n: usize, offset: usize, block: &RMatrix) -> RMatrix {
    let mut out = RMatrix::zeros(n, n);
    out.view_mut((offset, offset), block.shape()).copy_from(block);
    out
}

fn embed_vec(n: usize, offset: usize, v: &RVector) -> RVector {
    let mut out = RVector::zeros(n);
    out.rows_mut(offset, v.len()).copy_from(v);
    out
}

fn scaled_row(mut c: QuadConstraint, scale: f64) -> QuadConstraint {
    let inv = 1.0 / scale;
    c.linear *= inv;
    c.constant *= inv;
    if let Some(p) = &mut c.quad {
        *p *= inv;
    }
    c
}

fn check_dims(channels: &ChannelPair, beams: &BeamformingPair) -> Result<()> {
    let m = channels.cu.len();
    for len in [channels.ceu.len(), beams.w1.len(), beams.w2.len()] {
        if len != m {
            return Err(Error::DimensionMismatch {
                context: "beamforming subproblem",
                expected: m,
                actual: len,
            });
        }
    }
    Ok(())
}

/// Builds the convex subproblem around `(beams, slack)`. The slack's `eps`
/// is in watts, as in [`BeamformingIterate`].
///
/// The slack variables are stored relative to the expansion point,
/// `tau = tau_l * x[tau]` and `eps = eps_l * x[eps]`, and every row is
/// divided by its size at the expansion point so all terms are O(1).
pub fn build_subproblem_for(
    channels: &ChannelPair,
    beams: &BeamformingPair,
    slack: SlackState,
    params: &SystemParams,
    mode: BeamformingMode,
    bound: ProductBound,
) -> Result<QcqpProblem> {
    check_dims(channels, beams)?;
    let s = Scaled::new(channels, beams, params);
    let idx = Layout { m: channels.cu.len(), mode };
    let n = idx.len();
    let tau_l = slack.tau;
    let eps_l = slack.eps / params.noise_power;
    if !(tau_l > 0.0 && eps_l > 0.0) {
        return Err(Error::InvalidParams(format!("expansion slacks must be positive, got {slack:?}")));
    }
    let mut problem = QcqpProblem::new(embed_vec(n, idx.tau(), &RVector::from_element(1, 1.0)))?;

    let form = |h: &CVector| lift_hermitian_form(&HermitianMatrix::outer(h));
    let linearized = |w_ref: &CVector, h: &CVector| -> Result<RVector> {
        let f = quadform_linearize(w_ref, h)?;
        Ok(lift_linear(&f.coeff) * 2.0)
    };

    // Leakage: 1 + |a_e^H u1|^2 - eps <= 0.
    let mut lin = RVector::zeros(n);
    lin[idx.eps()] = -eps_l;
    problem.add_constraint(scaled_row(QuadConstraint::quadratic(embed(n, idx.u1(), &form(&s.a_e)), lin, 1.0), eps_l))?;

    // Ratio: psi(tau, eps) - 1 - f_c(u1) <= 0.
    let psi = ProductQuadratic::new(bound, tau_l, eps_l);
    let unit = [tau_l, eps_l];
    let mut quad = RMatrix::zeros(n, n);
    let slots = [idx.tau(), idx.eps()];
    for (a, &i) in slots.iter().enumerate() {
        for (b, &j) in slots.iter().enumerate() {
            quad[(i, j)] = psi.quad[a][b] * unit[a] * unit[b];
        }
    }
    let fc = quadform_linearize(&s.u1, &s.a_c)?;
    let mut lin = -embed_vec(n, idx.u1(), &linearized(&s.u1, &s.a_c)?);
    lin[idx.tau()] = psi.lin[0] * tau_l;
    lin[idx.eps()] = psi.lin[1] * eps_l;
    let row = QuadConstraint::quadratic(quad, lin, psi.constant - 1.0 - fc.constant);
    problem.add_constraint(scaled_row(row, tau_l * eps_l))?;

    if mode == BeamformingMode::Noma {
        // Rate: L_r (|a_k^H u1|^2 + 1) - f_k(u2) <= 0.
        for user in User::BOTH {
            let a = s.channel(user);
            let l_r = params.sinr_threshold(user);
            let f = quadform_linearize(&s.u2, a)?;
            let quad = embed(n, idx.u1(), &(form(a) * l_r));
            let lin = -embed_vec(n, idx.u2(), &linearized(&s.u2, a)?);
            let size = (-f.constant).max(l_r).max(1.0);
            problem.add_constraint(scaled_row(QuadConstraint::quadratic(quad, lin, l_r - f.constant), size))?;
        }
    }

    // Power: |u|^2 - 1 <= 0.
    let mut quad = RMatrix::zeros(n, n);
    for i in 0..idx.tau() {
        quad[(i, i)] = 1.0;
    }
    problem.add_constraint(QuadConstraint::quadratic(quad, RVector::zeros(n), -1.0))?;

    problem.set_bounds(idx.tau(), 0.0, f64::INFINITY)?;
    problem.set_bounds(idx.eps(), 0.0, f64::INFINITY)?;
    Ok(problem)
}

pub fn build_subproblem(
    iterate: &BeamformingIterate,
    layout: &AntennaLayout,
    realization: &ChannelRealization,
    params: &SystemParams,
    mode: BeamformingMode,
    bound: ProductBound,
) -> Result<QcqpProblem> {
    let channels = ChannelPair::at(layout, realization, params)?;
    build_subproblem_for(&channels, &iterate.beams, iterate.slack, params, mode, bound)
}

/// The subproblem's variable vector at the expansion point `beams`, where
/// both relative slacks are 1.
pub fn lift_point(beams: &BeamformingPair, params: &SystemParams, mode: BeamformingMode) -> RVector {
    let amp = params.max_power.sqrt();
    let mut parts: Vec<f64> = lift_vector(&beams.w1).iter().map(|v| v / amp).collect();
    if mode == BeamformingMode::Noma {
        parts.extend(lift_vector(&beams.w2).iter().map(|v| v / amp));
    }
    parts.extend([1.0, 1.0]);
    RVector::from_vec(parts)
}

/// Tight slack at `beams`: `eps = sigma^2 + |h_e^H w1|^2` and `tau` the true ratio.
pub fn tight_slack(channels: &ChannelPair, beams: &BeamformingPair, noise_power: f64) -> SlackState {
    SlackState {
        tau: channels.secrecy_ratio(&beams.w1, noise_power),
        eps: noise_power + received_power(&channels.ceu, &beams.w1),
    }
}

/// Whether `beams` meets the power budget and, in NOMA mode, both rate
/// thresholds, with relative slack `tol`.
pub fn beams_feasible(channels: &ChannelPair, beams: &BeamformingPair, params: &SystemParams, mode: BeamformingMode, tol: f64) -> bool {
    if beams.total_power() > params.max_power * (1.0 + tol) {
        return false;
    }
    if mode == BeamformingMode::SingleUser {
        return true;
    }
    User::BOTH.iter().all(|&user| {
        let h = channels.get(user);
        let need = params.sinr_threshold(user) * (received_power(h, &beams.w1) + params.noise_power);
        received_power(h, &beams.w2) >= need * (1.0 - tol)
    })
}

fn extract(x: &RVector, scaled: &Scaled, mode: BeamformingMode, m: usize) -> BeamformingPair {
    let idx = Layout { m, mode };
    let amp = Complex64::new(scaled.amp, 0.0);
    let w1 = unlift_vector(x.rows(idx.u1(), 2 * m).as_slice()).map(|z| z * amp);
    let w2 = match mode {
        BeamformingMode::Noma => unlift_vector(x.rows(idx.u2(), 2 * m).as_slice()).map(|z| z * amp),
        BeamformingMode::SingleUser => CVector::zeros(m),
    };
    BeamformingPair { w1, w2 }
}

/// SCA loop on fixed channels.
pub fn run_sca_for(channels: &ChannelPair, initial: &BeamformingPair, params: &SystemParams, opts: &ScaOptions) -> Result<ScaOutcome> {
    check_dims(channels, initial)?;
    let m = channels.cu.len();
    let noise = params.noise_power;
    let mut beams = initial.clone();
    if opts.mode == BeamformingMode::SingleUser {
        beams.w2 = CVector::zeros(m);
    }
    let mut slack = tight_slack(channels, &beams, noise);
    let mut ratio_trace = vec![slack.tau];
    let mut tau_trace = Vec::new();
    let mut stats = SolverStats::default();
    let mut status = ScaStatus::MaxIter;
    let mut iteration = 0;

    for l in 0..opts.max_outer {
        let problem = build_subproblem_for(channels, &beams, slack, params, opts.mode, opts.bound)?;
        let mut solver = opts.solver.clone();
        solver.initial_hint = Some(lift_point(&beams, params, opts.mode));
        let sol = solve(&problem, &solver);
        stats.record(&sol);
        if sol.status != SolveStatus::Optimal {
            if l == 0 {
                return Err(Error::InitFailed(format!("first beamforming subproblem ended {:?}", sol.status)));
            }
            status = ScaStatus::Stalled;
            break;
        }
        let scaled = Scaled::new(channels, &beams, params);
        let candidate = extract(&sol.x, &scaled, opts.mode, m);
        let next = tight_slack(channels, &candidate, noise);
        if !beams_feasible(channels, &candidate, params, opts.mode, 1e-9) || next.tau < slack.tau * (1.0 - 1e-9) {
            status = ScaStatus::Stalled;
            break;
        }
        tau_trace.push(sol.x[Layout { m, mode: opts.mode }.tau()] * slack.tau);
        let gain = (next.tau - slack.tau) / slack.tau;
        beams = candidate;
        slack = next;
        ratio_trace.push(slack.tau);
        iteration = l + 1;
        if gain < opts.tolerance {
            status = ScaStatus::Converged;
            break;
        }
    }

    // Below ratio 1 the confidential stream leaks more than it delivers, and
    // silencing it is feasible whenever the current beams are.
    if slack.tau < 1.0 {
        beams.w1 = CVector::zeros(m);
        slack = tight_slack(channels, &beams, noise);
        ratio_trace.push(slack.tau);
    }

    Ok(ScaOutcome {
        iterate: BeamformingIterate {
            beams,
            slack,
            iteration,
            objective: slack.tau,
        },
        ratio_trace,
        tau_trace,
        status,
        stats,
    })
}

pub fn run_sca(
    initial: &BeamformingPair,
    layout: &AntennaLayout,
    realization: &ChannelRealization,
    params: &SystemParams,
    opts: &ScaOptions,
) -> Result<ScaOutcome> {
    let channels = ChannelPair::at(layout, realization, params)?;
    run_sca_for(&channels, initial, params, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sample_realization;
    use crate::linalg::is_psd;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cvec(rng: &mut impl Rng, n: usize, s: f64) -> CVector {
        CVector::from_fn(n, |_, _| Complex64::new(rng.gen_range(-s..s), rng.gen_range(-s..s)))
    }

    /// Channel pair with a comfortable feasible start: `w2` along `h_e`
    /// carrying most of the power, `w1` small and along `h_c`.
    fn instance(seed: u64, m: usize) -> (ChannelPair, BeamformingPair, SystemParams) {
        let params = SystemParams::defaults(m, 10.0);
        let real = sample_realization(&params, seed);
        let layout = AntennaLayout::uniform_grid(&params).unwrap();
        let channels = ChannelPair::at(&layout, &real, &params).unwrap();
        let dir = |h: &CVector| h / Complex64::new(h.norm(), 0.0);
        let p = params.max_power;
        let w2 = dir(&channels.ceu) * Complex64::new((0.9 * p).sqrt(), 0.0);
        let w1 = dir(&channels.cu) * Complex64::new((0.001 * p).sqrt(), 0.0);
        (channels, BeamformingPair { w1, w2 }, params)
    }

    #[test]
    fn surrogate_constraints_touch_exact_values_at_expansion_point() {
        let (channels, beams, params) = instance(3, 3);
        let slack = tight_slack(&channels, &beams, params.noise_power);
        let problem = build_subproblem_for(&channels, &beams, slack, &params, BeamformingMode::Noma, ProductBound::default()).unwrap();
        let x = lift_point(&beams, &params, BeamformingMode::Noma);
        let s = Scaled::new(&channels, &beams, &params);
        let q = |h: &CVector, u: &CVector| h.dotc(u).norm_sqr();
        let eps = slack.eps / params.noise_power;
        let exact = [
            1.0 + q(&s.a_e, &s.u1) - eps,
            slack.tau * eps - 1.0 - q(&s.a_c, &s.u1),
            params.sinr_threshold(User::CellCenter) * (q(&s.a_c, &s.u1) + 1.0) - q(&s.a_c, &s.u2),
            params.sinr_threshold(User::CellEdge) * (q(&s.a_e, &s.u1) + 1.0) - q(&s.a_e, &s.u2),
        ];
        for (c, want) in problem.constraints().iter().zip(exact) {
            // Constraints are row-normalized; compare signs and relative zeros.
            let got = c.value(&x);
            let scale = c.linear.amax().max(c.constant.abs()).max(1e-300);
            if want.abs() < 1e-9 * (1.0 + eps * slack.tau) {
                assert!(got.abs() < 1e-9, "{got}");
            } else {
                assert_eq!(got.signum(), want.signum());
                assert!(scale > 0.0);
            }
        }
    }

    #[test]
    fn zero_reference_edge_beam_is_infeasible() {
        let (channels, mut beams, params) = instance(5, 2);
        beams.w2 = CVector::zeros(2);
        let slack = tight_slack(&channels, &beams, params.noise_power);
        let problem = build_subproblem_for(&channels, &beams, slack, &params, BeamformingMode::Noma, ProductBound::default()).unwrap();
        let sol = solve(&problem, &SolverOptions::default());
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn constraint_matrices_are_psd() {
        let (channels, beams, params) = instance(7, 2);
        let slack = tight_slack(&channels, &beams, params.noise_power);
        let problem = build_subproblem_for(&channels, &beams, slack, &params, BeamformingMode::Noma, ProductBound::default()).unwrap();
        for c in problem.constraints() {
            if let Some(p) = &c.quad {
                assert!(is_psd(p, 1e-12));
            }
        }
    }

    #[test]
    fn ratio_trace_is_monotone_and_result_feasible() {
        for seed in 0..5 {
            let (channels, beams, params) = instance(seed, 4);
            let out = run_sca_for(&channels, &beams, &params, &ScaOptions::default()).unwrap();
            for pair in out.ratio_trace.windows(2) {
                assert!(pair[1] >= pair[0] * (1.0 - 1e-9));
            }
            let w = &out.iterate.beams;
            assert!(beams_feasible(&channels, w, &params, BeamformingMode::Noma, 1e-6));
            // The slack never overshoots the true ratio.
            for tau in &out.tau_trace {
                assert!(*tau <= out.iterate.objective * (1.0 + 1e-6));
            }
            assert!(out.ratio_trace.last().unwrap() > out.ratio_trace.first().unwrap());
            assert_eq!(out.stats.flagged, 0);
        }
    }

    #[test]
    fn silent_eavesdropper_reaches_full_center_rate() {
        let (mut channels, beams, params) = instance(11, 2);
        channels.ceu = CVector::zeros(2);
        let opts = ScaOptions { mode: BeamformingMode::SingleUser, ..Default::default() };
        let out = run_sca_for(&channels, &beams, &params, &opts).unwrap();
        let w1 = &out.iterate.beams.w1;
        // All power on the matched filter.
        let best = 1.0 + params.max_power * channels.cu.norm_squared() / params.noise_power;
        assert!((out.iterate.objective - best).abs() <= 1e-3 * best, "{} vs {best}", out.iterate.objective);
        assert!(received_power(&channels.ceu, w1) == 0.0);
    }

    /// Power split grid search for a single antenna: the ratio depends only
    /// on `p1`, and `w2` takes whatever power is left.
    fn power_split_oracle(channels: &ChannelPair, params: &SystemParams) -> f64 {
        let (gc, ge) = (channels.cu[0].norm_sqr(), channels.ceu[0].norm_sqr());
        let (p, n) = (params.max_power, params.noise_power);
        let lr = params.sinr_threshold(User::CellCenter);
        let mut best = f64::NEG_INFINITY;
        let steps = 200_000;
        for i in 0..=steps {
            let p1 = p * i as f64 / steps as f64;
            let p2 = p - p1;
            if gc * p2 >= lr * (gc * p1 + n) && ge * p2 >= lr * (ge * p1 + n) {
                best = best.max((n + gc * p1) / (n + ge * p1));
            }
        }
        best
    }

    fn halving_start(channels: &ChannelPair, params: &SystemParams) -> BeamformingPair {
        let dir = |h: &CVector| h / Complex64::new(h.norm(), 0.0);
        let p = params.max_power;
        let mut p1 = p / 2.0;
        for _ in 0..20 {
            let beams = BeamformingPair {
                w1: dir(&channels.cu) * Complex64::new(p1.sqrt(), 0.0),
                w2: dir(&channels.ceu) * Complex64::new((p - p1).sqrt(), 0.0),
            };
            if beams_feasible(channels, &beams, params, BeamformingMode::Noma, 1e-12) {
                return beams;
            }
            p1 /= 2.0;
        }
        panic!("no feasible split");
    }

    #[test]
    fn single_antenna_matches_power_split_oracle() {
        let mut hits = 0;
        let mut total = 0;
        for seed in 0..20 {
            let (channels, _, params) = instance(100 + seed, 1);
            let oracle = power_split_oracle(&channels, &params);
            if !oracle.is_finite() {
                continue;
            }
            let beams = halving_start(&channels, &params);
            total += 1;
            let out = run_sca_for(&channels, &beams, &params, &ScaOptions::default()).unwrap();
            let got = out.iterate.objective;
            assert!(got <= oracle * (1.0 + 1e-4));
            if got >= oracle * 0.98 {
                hits += 1;
            }
        }
        assert!(total > 0);
        assert!(hits * 10 >= total * 9, "{hits}/{total}");
    }

    #[test]
    fn single_user_mode_has_no_edge_beam() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (channels, mut beams, params) = instance(13, 2);
        beams.w2 = cvec(&mut rng, 2, 1e-3);
        let opts = ScaOptions { mode: BeamformingMode::SingleUser, ..Default::default() };
        let out = run_sca_for(&channels, &beams, &params, &opts).unwrap();
        assert_eq!(out.iterate.beams.w2, CVector::zeros(2));
        assert!(out.iterate.beams.total_power() <= params.max_power * (1.0 + 1e-9));
    }
}


