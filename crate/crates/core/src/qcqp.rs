//! Dense primal-dual interior-point solver for small convex QCQPs:
//!
//! ```text
//! maximize    c^T x
//! subject to  x^T P_i x + q_i^T x + r_i <= 0    (P_i PSD)
//!             A x = b
//!             lo <= x <= hi
//! ```
//!
//! Phase I minimizes a common slack `s` with `f_i(x) <= s` to find a
//! strictly feasible start; phase II is a log-barrier method: Newton
//! centering with backtracking, the barrier weight `t` growing twentyfold per
//! round until the duality gap `m / t` is below tolerance. Multipliers are
//! read off the central path as `lambda_i = -1 / (t f_i(x))`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{is_psd, symmetric_min_eigenvalue, RMatrix, RVector};

/// Largest accepted number of variables.
pub const DEFAULT_SIZE_LIMIT: usize = 256;

const PSD_FLOOR: f64 = 1e-9;
const MU: f64 = 20.0;
const NEWTON_TOL: f64 = 1e-10;
const QUADRATIC_REGION: f64 = 1e-6;
const LOOSE_CENTER: f64 = 1e-4;
const ALPHA: f64 = 0.01;
const BETA: f64 = 0.5;
const PHASE1_FLOOR: f64 = -1.0;
/// Starting points closer than this to a constraint boundary go through phase I.
const INTERIOR_MARGIN: f64 = 1e-3;
/// Phase I ends once every constraint is at least this far inside.
const PHASE1_STOP: f64 = -10.0 * INTERIOR_MARGIN;

/// `x^T P x + q^T x + r <= 0`; `P = None` for affine rows.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadConstraint {
    pub quad: Option<RMatrix>,
    pub linear: RVector,
    pub constant: f64,
}

impl QuadConstraint {
    pub fn affine(linear: RVector, constant: f64) -> Self {
        Self { quad: None, linear, constant }
    }

    pub fn quadratic(quad: RMatrix, linear: RVector, constant: f64) -> Self {
        Self { quad: Some(quad), linear, constant }
    }

    pub fn value(&self, x: &RVector) -> f64 {
        let lin = self.linear.dot(x) + self.constant;
        match &self.quad {
            Some(p) => lin + x.dot(&(p * x)),
            None => lin,
        }
    }

    pub fn gradient(&self, x: &RVector) -> RVector {
        match &self.quad {
            Some(p) => p * x * 2.0 + &self.linear,
            None => self.linear.clone(),
        }
    }

    fn dim(&self) -> usize {
        self.linear.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcqpProblem {
    objective: RVector,
    constraints: Vec<QuadConstraint>,
    equalities: Option<(RMatrix, RVector)>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl QcqpProblem {
    /// Maximize `objective^T x` over `objective.len()` variables.
    pub fn new(objective: RVector) -> Result<Self> {
        Self::with_size_limit(objective, DEFAULT_SIZE_LIMIT)
    }

    pub fn with_size_limit(objective: RVector, limit: usize) -> Result<Self> {
        let n = objective.len();
        if n == 0 || n > limit {
            return Err(Error::TooLarge(n));
        }
        Ok(Self {
            objective,
            constraints: Vec::new(),
            equalities: None,
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        })
    }

    pub fn dim(&self) -> usize {
        self.objective.len()
    }

    pub fn objective(&self) -> &RVector {
        &self.objective
    }

    pub fn constraints(&self) -> &[QuadConstraint] {
        &self.constraints
    }

    pub fn equalities(&self) -> Option<&(RMatrix, RVector)> {
        self.equalities.as_ref()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Adds a constraint after checking its dimensions and that its quadratic
    /// term is symmetric PSD. Returns the constraint index.
    pub fn add_constraint(&mut self, c: QuadConstraint) -> Result<usize> {
        let n = self.dim();
        let index = self.constraints.len();
        if c.dim() != n {
            return Err(Error::DimensionMismatch {
                context: "constraint linear term",
                expected: n,
                actual: c.dim(),
            });
        }
        if let Some(p) = &c.quad {
            if p.nrows() != n || p.ncols() != n {
                return Err(Error::DimensionMismatch {
                    context: "constraint quadratic term",
                    expected: n,
                    actual: p.nrows(),
                });
            }
            let asym = (p - p.transpose()).amax();
            if asym > 1e-12 * p.amax().max(1.0) || !is_psd(p, PSD_FLOOR) {
                return Err(Error::NotPsd {
                    index,
                    min_eig: symmetric_min_eigenvalue(p),
                });
            }
        }
        self.constraints.push(c);
        Ok(index)
    }

    pub fn set_bounds(&mut self, var: usize, lo: f64, hi: f64) -> Result<()> {
        if var >= self.dim() || lo > hi {
            return Err(Error::InvalidParams(format!("bad bounds [{lo}, {hi}] for variable {var}")));
        }
        self.lower[var] = lo;
        self.upper[var] = hi;
        Ok(())
    }

    pub fn set_equalities(&mut self, a: RMatrix, b: RVector) -> Result<()> {
        if a.ncols() != self.dim() || a.nrows() != b.len() {
            return Err(Error::DimensionMismatch {
                context: "equality constraints",
                expected: self.dim(),
                actual: a.ncols(),
            });
        }
        self.equalities = Some((a, b));
        Ok(())
    }

    /// Constraints followed by one affine row per finite lower bound, then
    /// one per finite upper bound.
    fn working_set(&self) -> (Vec<QuadConstraint>, Vec<BoundRow>) {
        let n = self.dim();
        let mut rows = self.constraints.clone();
        let mut tags = Vec::new();
        for i in 0..n {
            if self.lower[i].is_finite() {
                let mut q = RVector::zeros(n);
                q[i] = -1.0;
                rows.push(QuadConstraint::affine(q, self.lower[i]));
                tags.push(BoundRow::Lower(i));
            }
        }
        for i in 0..n {
            if self.upper[i].is_finite() {
                let mut q = RVector::zeros(n);
                q[i] = 1.0;
                rows.push(QuadConstraint::affine(q, -self.upper[i]));
                tags.push(BoundRow::Upper(i));
            }
        }
        (rows, tags)
    }

    /// Serializes to the JSON dump schema (see [`QcqpDump`]).
    pub fn to_dump_json(&self) -> String {
        serde_json::to_string_pretty(&QcqpDump::from(self)).expect("dump is serializable")
    }

    pub fn from_dump_json(s: &str) -> Result<Self> {
        let dump: QcqpDump = serde_json::from_str(s).map_err(|e| Error::InvalidParams(format!("bad dump: {e}")))?;
        dump.into_problem()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BoundRow {
    Lower(usize),
    Upper(usize),
}

/// Offline-inspection format. Matrices are row-major, `null` stands for an
/// absent quadratic term or an infinite bound.
///
/// ```text
/// {
///   "n": 3,
///   "objective": [..n..],                     // maximize objective . x
///   "constraints": [
///     {"quad": [..n*n..] | null, "linear": [..n..], "constant": r}
///   ],
///   "lower": [lo | null, ...], "upper": [hi | null, ...],
///   "eq_a": [..rows*n..] | null, "eq_b": [..rows..] | null
/// }
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QcqpDump {
    pub n: usize,
    pub objective: Vec<f64>,
    pub constraints: Vec<ConstraintDump>,
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
    pub eq_a: Option<Vec<f64>>,
    pub eq_b: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintDump {
    pub quad: Option<Vec<f64>>,
    pub linear: Vec<f64>,
    pub constant: f64,
}

fn row_major(m: &RMatrix) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl From<&QcqpProblem> for QcqpDump {
    fn from(p: &QcqpProblem) -> Self {
        Self {
            n: p.dim(),
            objective: p.objective.as_slice().to_vec(),
            constraints: p
                .constraints
                .iter()
                .map(|c| ConstraintDump {
                    quad: c.quad.as_ref().map(row_major),
                    linear: c.linear.as_slice().to_vec(),
                    constant: c.constant,
                })
                .collect(),
            lower: p.lower.iter().map(|v| finite(*v)).collect(),
            upper: p.upper.iter().map(|v| finite(*v)).collect(),
            eq_a: p.equalities.as_ref().map(|(a, _)| row_major(a)),
            eq_b: p.equalities.as_ref().map(|(_, b)| b.as_slice().to_vec()),
        }
    }
}

impl QcqpDump {
    pub fn into_problem(self) -> Result<QcqpProblem> {
        let n = self.n;
        let mut p = QcqpProblem::new(RVector::from_vec(self.objective))?;
        for c in self.constraints {
            let quad = c.quad.map(|q| RMatrix::from_row_slice(n, n, &q));
            p.add_constraint(QuadConstraint {
                quad,
                linear: RVector::from_vec(c.linear),
                constant: c.constant,
            })?;
        }
        for i in 0..n {
            p.lower[i] = self.lower.get(i).copied().flatten().unwrap_or(f64::NEG_INFINITY);
            p.upper[i] = self.upper.get(i).copied().flatten().unwrap_or(f64::INFINITY);
        }
        if let (Some(a), Some(b)) = (self.eq_a, self.eq_b) {
            let rows = b.len();
            p.set_equalities(RMatrix::from_row_slice(rows, n, &a), RVector::from_vec(b))?;
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Duality-gap target of the barrier path.
    pub tolerance: f64,
    /// Ceiling on the KKT residuals of a solve reported optimal.
    pub kkt_tolerance: f64,
    pub max_iters: usize,
    pub initial_hint: Option<RVector>,
    /// Record `(primal, dual bound)` after every phase-II iteration.
    pub record_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            kkt_tolerance: SolverStats::KKT_LIMIT,
            max_iters: 200,
            initial_hint: None,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcqpSolution {
    pub status: SolveStatus,
    pub x: RVector,
    /// Multipliers of the explicit constraints, in insertion order.
    pub duals: Vec<f64>,
    /// Multipliers of the lower and upper bounds (zero where infinite).
    pub lower_duals: Vec<f64>,
    pub upper_duals: Vec<f64>,
    pub eq_duals: Vec<f64>,
    pub kkt: KktResiduals,
    /// `objective^T x`.
    pub objective: f64,
    /// Lagrangian upper bound on the optimal value, when finite.
    pub dual_objective: Option<f64>,
    pub iterations: usize,
    pub phase1_iterations: usize,
    /// Phase-I optimal common slack, when phase I ran to completion.
    pub min_slack: Option<f64>,
    pub trace: Vec<(f64, f64)>,
}

impl QcqpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Running tally of solver outcomes across many solves.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolverStats {
    pub solves: usize,
    /// Solves that did not end `Optimal` with residuals within `kkt_limit`.
    pub flagged: usize,
    pub infeasible: usize,
    pub max_kkt: f64,
}

impl SolverStats {
    /// Residual ceiling above which an optimal solve is still flagged.
    pub const KKT_LIMIT: f64 = 1e-6;

    pub fn record(&mut self, sol: &QcqpSolution) {
        self.solves += 1;
        match sol.status {
            SolveStatus::Optimal => {
                self.max_kkt = self.max_kkt.max(sol.kkt.max());
                if sol.kkt.max() > Self::KKT_LIMIT {
                    self.flagged += 1;
                }
            }
            SolveStatus::Infeasible => {
                self.infeasible += 1;
                self.flagged += 1;
            }
            SolveStatus::MaxIter => self.flagged += 1,
        }
    }

    pub fn merge(&mut self, other: &SolverStats) {
        self.solves += other.solves;
        self.flagged += other.flagged;
        self.infeasible += other.infeasible;
        self.max_kkt = self.max_kkt.max(other.max_kkt);
    }
}

/// Output of one barrier run.
struct CoreRun {
    x: RVector,
    lambda: RVector,
    nu: RVector,
    iterations: usize,
    converged: bool,
    trace: Vec<(f64, f64)>,
}

struct CoreProblem<'a> {
    /// Minimized linear objective.
    cost: &'a RVector,
    rows: &'a [QuadConstraint],
    eq: Option<&'a (RMatrix, RVector)>,
}

impl CoreProblem<'_> {
    fn values(&self, x: &RVector) -> RVector {
        RVector::from_iterator(self.rows.len(), self.rows.iter().map(|c| c.value(x)))
    }

    fn num_eq(&self) -> usize {
        self.eq.map_or(0, |(a, _)| a.nrows())
    }

    fn dual_residual(&self, x: &RVector, lambda: &RVector, nu: &RVector) -> RVector {
        let mut r = self.cost.clone();
        for (c, l) in self.rows.iter().zip(lambda.iter()) {
            r += c.gradient(x) * *l;
        }
        if let Some((a, _)) = self.eq {
            r += a.transpose() * nu;
        }
        r
    }

    fn primal_residual(&self, x: &RVector) -> RVector {
        match self.eq {
            Some((a, b)) => a * x - b,
            None => RVector::zeros(0),
        }
    }

    /// Central-path multipliers lose digits as `f_i -> 0`. Refits the
    /// multipliers of the clearly active rows by least squares on the
    /// stationarity condition and keeps the result when it is non-negative
    /// and reduces the residual.
    fn polish(&self, x: &RVector, lambda: RVector, nu: RVector, tol: f64) -> (RVector, RVector) {
        let n = x.len();
        let active: Vec<usize> = (0..lambda.len()).filter(|&i| lambda[i] >= tol.sqrt()).collect();
        let p = nu.len();
        let k = active.len() + p;
        if k == 0 {
            return (lambda, nu);
        }
        let mut g = RMatrix::zeros(n, k);
        let mut rest = self.cost.clone();
        for (i, c) in self.rows.iter().enumerate() {
            if !active.contains(&i) {
                rest += c.gradient(x) * lambda[i];
            }
        }
        for (col, &i) in active.iter().enumerate() {
            g.set_column(col, &self.rows[i].gradient(x));
        }
        if let Some((a, _)) = self.eq {
            g.view_mut((0, active.len()), (n, p)).copy_from(&a.transpose());
        }
        let Ok(sol) = g.svd(true, true).solve(&-&rest, 1e-14) else {
            return (lambda, nu);
        };
        let mut refit = lambda.clone();
        for (col, &i) in active.iter().enumerate() {
            if sol[col] < 0.0 {
                return (lambda, nu);
            }
            refit[i] = sol[col];
        }
        let refit_nu = sol.rows(active.len(), p).into_owned();
        let before = self.dual_residual(x, &lambda, &nu).amax();
        let after = self.dual_residual(x, &refit, &refit_nu).amax();
        if after < before {
            (refit, refit_nu)
        } else {
            (lambda, nu)
        }
    }

    /// `phi(x + step) - phi(x)` for `phi = t c^T x - sum log(-f_i)`, computed
    /// term by term so large `phi` does not swamp the difference. `None`
    /// outside the strict interior.
    fn barrier_change(&self, f: &RVector, xn: &RVector, step: &RVector, t: f64) -> Option<f64> {
        let mut delta = t * self.cost.dot(step);
        for (c, fi) in self.rows.iter().zip(f.iter()) {
            let fnew = c.value(xn);
            if !(fnew < 0.0) {
                return None;
            }
            delta -= (fnew / fi).ln();
        }
        Some(delta)
    }

    /// Barrier method from a strictly feasible `x0` satisfying the
    /// equalities. Every Newton step counts against `max_iters`. `stop` is
    /// checked after every step and ends the run early when it returns true.
    fn run(&self, x0: RVector, opts: &SolverOptions, stop: &dyn Fn(&RVector) -> bool, trace_dual: Option<&dyn Fn(&RVector, &RVector, &RVector) -> Option<f64>>) -> CoreRun {
        let n = x0.len();
        let m = self.rows.len();
        let p = self.num_eq();
        let tol = opts.tolerance;
        let mut x = x0;
        let mut trace = Vec::new();
        let mut iterations = 0;

        let duals = |x: &RVector, t: f64| self.values(x).map(|f| -1.0 / (t * f));
        let barrier_grad = |x: &RVector| {
            let mut g = RVector::zeros(n);
            for c in self.rows {
                g += c.gradient(x) / (-c.value(x));
            }
            g
        };

        // Start where the centering residual |t c + grad phi| is smallest.
        let cc = self.cost.norm_squared();
        let mut t = if cc > 0.0 { (-self.cost.dot(&barrier_grad(&x)) / cc).max(0.0) } else { 1.0 };
        if !(t.is_finite() && t >= 1e-3) {
            t = 1.0;
        }
        if m == 0 {
            t = 1.0 / tol;
        }
        let mut nu = RVector::zeros(p);

        loop {
            // Centering.
            let mut centered = false;
            while iterations < opts.max_iters {
                let f = self.values(&x);
                let mut g = self.cost * t;
                let mut h = RMatrix::zeros(n, n);
                for (c, fi) in self.rows.iter().zip(f.iter()) {
                    let grad = c.gradient(&x);
                    let inv = -1.0 / fi;
                    g += &grad * inv;
                    h += &grad * grad.transpose() * (inv * inv);
                    if let Some(pm) = &c.quad {
                        h += pm * (2.0 * inv);
                    }
                }
                let mut kkt = DMatrix::zeros(n + p, n + p);
                kkt.view_mut((0, 0), (n, n)).copy_from(&h);
                let mut rhs = DVector::zeros(n + p);
                rhs.rows_mut(0, n).copy_from(&-&g);
                if let Some((a, b)) = self.eq {
                    kkt.view_mut((n, 0), (p, n)).copy_from(a);
                    kkt.view_mut((0, n), (n, p)).copy_from(&a.transpose());
                    rhs.rows_mut(n, p).copy_from(&(b - a * &x));
                }
                let Some(step) = solve_linear(&kkt, &rhs) else {
                    break;
                };
                let dx = step.rows(0, n).into_owned();
                nu = step.rows(n, p) / t;
                let decrement = dx.dot(&(&h * &dx));
                if decrement * 0.5 <= NEWTON_TOL {
                    centered = true;
                    break;
                }
                if decrement * 0.5 <= QUADRATIC_REGION {
                    // Armijo cannot resolve progress this close to the center;
                    // one full Newton step finishes the centering.
                    let xn = &x + &dx;
                    if self.values(&xn).iter().all(|v| *v < 0.0) {
                        x = xn;
                        iterations += 1;
                    }
                    centered = true;
                    break;
                }
                let slope = g.dot(&dx);
                let mut s = 1.0;
                let mut moved = false;
                while s > 1e-14 {
                    let xn = &x + &dx * s;
                    if let Some(delta) = self.barrier_change(&f, &xn, &(&dx * s), t) {
                        if delta <= ALPHA * s * slope {
                            x = xn;
                            moved = true;
                            break;
                        }
                    }
                    s *= BETA;
                }
                iterations += 1;
                if !moved {
                    centered = decrement * 0.5 <= LOOSE_CENTER;
                    break;
                }
                if s < 1.0 && decrement * 0.5 <= LOOSE_CENTER {
                    // Damped steps this close to the center come from
                    // conditioning, not from distance to the central path.
                    centered = true;
                    break;
                }
                if stop(&x) {
                    let lambda = duals(&x, t);
                    return CoreRun { x, lambda, nu, iterations, converged: false, trace };
                }
            }
            let lambda = duals(&x, t);
            if let Some(dual) = trace_dual {
                trace.push((-self.cost.dot(&x), dual(&x, &lambda, &nu).unwrap_or(f64::INFINITY)));
            }
            let last = m as f64 / t <= tol;
            if (!centered && !last) || iterations >= opts.max_iters {
                return CoreRun { x, lambda, nu, iterations, converged: false, trace };
            }
            // A stall on the last centering is left to the KKT certificate.
            if last {
                let (lambda, nu) = self.polish(&x, lambda, nu, tol);
                return CoreRun { x, lambda, nu, iterations, converged: true, trace };
            }
            t = (t * MU).min(m as f64 / tol * 1.000001);
        }
    }
}

/// LU solve after symmetric diagonal equilibration; retries with a small
/// ridge if the matrix is numerically singular.
fn solve_linear(a: &RMatrix, b: &RVector) -> Option<RVector> {
    let n = a.nrows();
    let d = RVector::from_fn(n, |i, _| {
        let v = a[(i, i)].abs();
        if v > 0.0 && v.is_finite() { 1.0 / v.sqrt() } else { 1.0 }
    });
    let scaled = RMatrix::from_fn(n, n, |i, j| a[(i, j)] * d[i] * d[j]);
    let rhs = b.component_mul(&d);
    if let Some(y) = scaled.clone().lu().solve(&rhs) {
        if y.iter().all(|v| v.is_finite()) {
            return Some(y.component_mul(&d));
        }
    }
    let reg = 1e-12 * scaled.amax().max(1.0);
    let y = (scaled + RMatrix::identity(n, n) * reg).lu().solve(&rhs)?;
    y.iter().all(|v| v.is_finite()).then(|| y.component_mul(&d))
}

/// Least-norm correction of `x` onto `A x = b`.
fn project_equalities(x: RVector, eq: Option<&(RMatrix, RVector)>) -> RVector {
    match eq {
        Some((a, b)) => {
            let r = b - a * &x;
            let aat = a * a.transpose();
            match aat.lu().solve(&r) {
                Some(y) => x + a.transpose() * y,
                None => x,
            }
        }
        None => x,
    }
}

pub fn solve(problem: &QcqpProblem, opts: &SolverOptions) -> QcqpSolution {
    let n = problem.dim();
    let (rows, tags) = problem.working_set();
    let eq = problem.equalities.as_ref();
    let mut x0 = match &opts.initial_hint {
        Some(h) if h.len() == n => h.clone(),
        _ => RVector::zeros(n),
    };
    // Start inside finite boxes.
    for i in 0..n {
        let (lo, hi) = (problem.lower[i], problem.upper[i]);
        if lo.is_finite() && hi.is_finite() {
            if !(x0[i] > lo && x0[i] < hi) {
                x0[i] = 0.5 * (lo + hi);
            }
        } else if lo.is_finite() && x0[i] <= lo {
            x0[i] = lo + 1.0;
        } else if hi.is_finite() && x0[i] >= hi {
            x0[i] = hi - 1.0;
        }
    }
    let x0 = project_equalities(x0, eq);

    let cost = -problem.objective.clone();
    let values: Vec<f64> = rows.iter().map(|c| c.value(&x0)).collect();
    let worst = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut phase1_iterations = 0;
    let mut min_slack = None;
    let start = if worst < -INTERIOR_MARGIN {
        x0
    } else {
        // Phase I over (x, s): minimize s subject to f_i(x) - s <= 0 and s >= floor.
        let mut aug_rows: Vec<QuadConstraint> = rows
            .iter()
            .map(|c| {
                let mut lin = c.linear.clone().resize_vertically(n + 1, 0.0);
                lin[n] = -1.0;
                let quad = c.quad.as_ref().map(|p| p.clone().resize(n + 1, n + 1, 0.0));
                QuadConstraint { quad, linear: lin, constant: c.constant }
            })
            .collect();
        let mut floor_row = RVector::zeros(n + 1);
        floor_row[n] = -1.0;
        aug_rows.push(QuadConstraint::affine(floor_row, PHASE1_FLOOR));
        let mut aug_cost = RVector::zeros(n + 1);
        aug_cost[n] = 1.0;
        let aug_eq = eq.map(|(a, b)| (a.clone().resize_horizontally(n + 1, 0.0), b.clone()));
        let core = CoreProblem { cost: &aug_cost, rows: &aug_rows, eq: aug_eq.as_ref() };
        let mut z0 = x0.clone().resize_vertically(n + 1, 0.0);
        z0[n] = worst + worst.abs().max(1.0);
        let run = core.run(z0, opts, &|z: &RVector| z[n] <= PHASE1_STOP, None);
        phase1_iterations = run.iterations;
        let s = run.x[n];
        if run.converged {
            min_slack = Some(s);
        }
        if s >= 0.0 {
            let x = run.x.rows(0, n).into_owned();
            let status = if run.converged { SolveStatus::Infeasible } else { SolveStatus::MaxIter };
            return finish(problem, &rows, &tags, status, x, RVector::zeros(rows.len()), RVector::zeros(0), 0, phase1_iterations, min_slack, Vec::new());
        }
        run.x.rows(0, n).into_owned()
    };

    let core = CoreProblem { cost: &cost, rows: &rows, eq };
    let dual_fn = |x: &RVector, l: &RVector, nu: &RVector| lagrangian_bound(problem, &rows, x, l, nu);
    let trace_dual: Option<&dyn Fn(&RVector, &RVector, &RVector) -> Option<f64>> = if opts.record_trace { Some(&dual_fn) } else { None };
    let run = core.run(start, opts, &|_| false, trace_dual);
    let mut status = if run.converged { SolveStatus::Optimal } else { SolveStatus::MaxIter };
    let sol = finish(problem, &rows, &tags, status, run.x, run.lambda, run.nu, run.iterations, phase1_iterations, min_slack, run.trace);
    if status == SolveStatus::Optimal && sol.kkt.max() > opts.kkt_tolerance {
        status = SolveStatus::MaxIter;
    }
    QcqpSolution { status, ..sol }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    problem: &QcqpProblem,
    rows: &[QuadConstraint],
    tags: &[BoundRow],
    status: SolveStatus,
    x: RVector,
    lambda: RVector,
    nu: RVector,
    iterations: usize,
    phase1_iterations: usize,
    min_slack: Option<f64>,
    trace: Vec<(f64, f64)>,
) -> QcqpSolution {
    let n = problem.dim();
    let k = problem.constraints.len();
    let mut lower_duals = vec![0.0; n];
    let mut upper_duals = vec![0.0; n];
    for (tag, l) in tags.iter().zip(lambda.iter().skip(k)) {
        match *tag {
            BoundRow::Lower(i) => lower_duals[i] = *l,
            BoundRow::Upper(i) => upper_duals[i] = *l,
        }
    }
    let core = CoreProblem { cost: &-problem.objective.clone(), rows, eq: problem.equalities.as_ref() };
    let f = core.values(&x);
    let kkt = KktResiduals {
        stationarity: core.dual_residual(&x, &lambda, &nu).amax(),
        primal: f.iter().copied().fold(0.0_f64, f64::max).max(core.primal_residual(&x).amax()),
        dual: lambda.iter().map(|l| -l).fold(0.0_f64, f64::max),
        complementarity: lambda.iter().zip(f.iter()).map(|(l, v)| (l * v).abs()).fold(0.0_f64, f64::max),
    };
    let dual_objective = if status == SolveStatus::Optimal { lagrangian_bound(problem, rows, &x, &lambda, &nu) } else { None };
    QcqpSolution {
        status,
        objective: problem.objective.dot(&x),
        duals: lambda.iter().take(k).copied().collect(),
        lower_duals,
        upper_duals,
        eq_duals: nu.iter().copied().collect(),
        x,
        kkt,
        dual_objective,
        iterations,
        phase1_iterations,
        min_slack,
        trace,
    }
}

/// `sup_x` of the maximization Lagrangian `c^T x - sum l_i f_i(x) - nu^T (Ax - b)`,
/// an upper bound on the optimum for `l >= 0`. `None` when unbounded.
fn lagrangian_bound(problem: &QcqpProblem, rows: &[QuadConstraint], _x: &RVector, lambda: &RVector, nu: &RVector) -> Option<f64> {
    let n = problem.dim();
    // Minimize L(x) = x^T Q x + g^T x + k for the minimization form.
    let mut q = RMatrix::zeros(n, n);
    let mut g = -problem.objective.clone();
    let mut k = 0.0;
    for (c, l) in rows.iter().zip(lambda.iter()) {
        if *l < 0.0 {
            return None;
        }
        if let Some(p) = &c.quad {
            q += p * *l;
        }
        g += &c.linear * *l;
        k += c.constant * *l;
    }
    if let Some((a, b)) = &problem.equalities {
        g += a.transpose() * nu;
        k -= nu.dot(b);
    }
    let two_q = &q * 2.0;
    let svd = two_q.clone().svd(true, true);
    let xhat = -svd.pseudo_inverse(1e-12 * two_q.amax().max(1e-300)).ok()? * &g;
    let resid = (&two_q * &xhat + &g).amax();
    if resid > 1e-7 * (1.0 + g.amax()) {
        return None;
    }
    let min_val = k + 0.5 * g.dot(&xhat);
    Some(-min_val)
}

/// Recomputes KKT residuals of `solution` directly from the problem data.
pub fn certify(problem: &QcqpProblem, solution: &QcqpSolution) -> KktResiduals {
    let x = &solution.x;
    let n = problem.dim();
    let mut stat = -problem.objective.clone();
    let mut primal = 0.0_f64;
    let mut dual = 0.0_f64;
    let mut comp = 0.0_f64;
    for (c, l) in problem.constraints.iter().zip(&solution.duals) {
        let v = c.value(x);
        stat += c.gradient(x) * *l;
        primal = primal.max(v);
        dual = dual.max(-l);
        comp = comp.max((l * v).abs());
    }
    for i in 0..n {
        if problem.lower[i].is_finite() {
            let l = solution.lower_duals[i];
            let v = problem.lower[i] - x[i];
            stat[i] -= l;
            primal = primal.max(v);
            dual = dual.max(-l);
            comp = comp.max((l * v).abs());
        }
        if problem.upper[i].is_finite() {
            let l = solution.upper_duals[i];
            let v = x[i] - problem.upper[i];
            stat[i] += l;
            primal = primal.max(v);
            dual = dual.max(-l);
            comp = comp.max((l * v).abs());
        }
    }
    if let Some((a, b)) = &problem.equalities {
        let nu = RVector::from_column_slice(&solution.eq_duals);
        stat += a.transpose() * nu;
        primal = primal.max((a * x - b).amax());
    }
    KktResiduals {
        stationarity: stat.amax(),
        primal,
        dual,
        complementarity: comp,
    }
}
