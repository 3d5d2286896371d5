//! Tangent bounds used by both optimization stages.
//!
//! Every bound here either minorizes or majorizes its target function
//! globally and touches it at the expansion point, so that maximizing a
//! restricted problem built from them never decreases the true objective.
//!
//! Quadratic forms in antenna positions are handled in two steps. With all
//! other antennas fixed, `F(t_m) = sum_ij c_ij g(t_i)^H V g(t_j)` is first
//! bounded by an expression that is affine in the field response `g(t_m)`,
//! i.e. `2 Re{r . g(t_m)} + const` for a coupling row `r`. That sinusoidal
//! sum is then bounded by a quadratic in `t_m` with fixed curvature.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{field_response_vector, response_matrix, AntennaLayout, ChannelRealization, PathAngles, Point2, User};
use crate::linalg::{CMatrix, CVector, HermitianMatrix};
use crate::rates::{BeamformingPair, Stream};

/// Slacks for the ratio objective: `tau` lower-bounds the secrecy ratio,
/// `eps` upper-bounds the eavesdropper's noise-plus-leakage power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlackState {
    pub tau: f64,
    pub eps: f64,
}

impl SlackState {
    pub fn new(tau: f64, eps: f64) -> Result<Self> {
        if !(tau >= 0.0 && eps >= 0.0) {
            return Err(Error::InvalidParams(format!("slacks must be non-negative, got tau={tau}, eps={eps}")));
        }
        Ok(Self { tau, eps })
    }
}

/// Convex upper bound of `tau * eps`, tangent at `(tau_l, eps_l)`.
///
/// Writes `tau * eps = (tau + eps)^2 / 4 - (tau - eps)^2 / 4` and replaces
/// the concave second term by its linearization.
pub fn psi_bilinear_upper(tau: f64, eps: f64, tau_l: f64, eps_l: f64) -> f64 {
    let d = tau_l - eps_l;
    0.25 * (tau + eps).powi(2) - 0.25 * d * d - 0.5 * d * (tau - tau_l - eps + eps_l)
}

/// Coefficients of `psi` as a quadratic `a (tau + eps)^2 + b_tau tau + b_eps eps + c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiCoefficients {
    pub quad: f64,
    pub lin_tau: f64,
    pub lin_eps: f64,
    pub constant: f64,
}

pub fn psi_coefficients(tau_l: f64, eps_l: f64) -> PsiCoefficients {
    let d = tau_l - eps_l;
    PsiCoefficients {
        quad: 0.25,
        lin_tau: -0.5 * d,
        lin_eps: 0.5 * d,
        constant: 0.25 * d * d,
    }
}

/// How the product `tau * eps` is bounded in the beamforming stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ProductBound {
    /// [`psi_bilinear_upper`] as is.
    Difference,
    /// `tau * eps <= (k tau + eps / k)^2 / 4` with `k = sqrt(eps_l / tau_l)`,
    /// the same construction after rescaling both slacks to equal size at the
    /// expansion point.
    #[default]
    Balanced,
}

/// A convex quadratic `[tau eps] Q [tau eps]^T + lin . [tau eps] + constant`
/// bounding `tau * eps` from above, tangent at its expansion point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductQuadratic {
    pub quad: [[f64; 2]; 2],
    pub lin: [f64; 2],
    pub constant: f64,
}

impl ProductQuadratic {
    pub fn new(kind: ProductBound, tau_l: f64, eps_l: f64) -> Self {
        let k = match kind {
            ProductBound::Balanced if tau_l > 0.0 && eps_l > 0.0 => (eps_l / tau_l).sqrt(),
            _ => 1.0,
        };
        let c = psi_coefficients(k * tau_l, eps_l / k);
        Self {
            quad: [[c.quad * k * k, c.quad], [c.quad, c.quad / (k * k)]],
            lin: [c.lin_tau * k, c.lin_eps / k],
            constant: c.constant,
        }
    }

    pub fn eval(&self, tau: f64, eps: f64) -> f64 {
        let q = &self.quad;
        q[0][0] * tau * tau + 2.0 * q[0][1] * tau * eps + q[1][1] * eps * eps + self.lin[0] * tau + self.lin[1] * eps + self.constant
    }
}

/// `w -> 2 Re{coeff^H w} + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineFunctional {
    pub coeff: CVector,
    pub constant: f64,
}

impl AffineFunctional {
    pub fn eval(&self, w: &CVector) -> f64 {
        2.0 * self.coeff.dotc(w).re + self.constant
    }
}

/// Tangent minorizer of `|h^H w|^2` at `w_ref`:
/// `2 Re{w_ref^H h h^H w} - |h^H w_ref|^2`.
pub fn quadform_linearize(w_ref: &CVector, h: &CVector) -> Result<AffineFunctional> {
    if w_ref.len() != h.len() {
        return Err(Error::DimensionMismatch {
            context: "quadform linearization",
            expected: h.len(),
            actual: w_ref.len(),
        });
    }
    let proj = h.dotc(w_ref);
    Ok(AffineFunctional {
        coeff: h * proj,
        constant: -proj.norm_sqr(),
    })
}

/// `s(t) = 2 Re{ sum_p r_p exp(j k u_p . t) }`, `k = 2 pi / lambda`, with
/// `u_p` the direction cosines of path `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct SinusoidRow {
    row: CVector,
    directions: Vec<(f64, f64)>,
    wavenumber: f64,
}

impl SinusoidRow {
    pub fn new(row: CVector, angles: &PathAngles, wavelength: f64) -> Self {
        assert_eq!(row.len(), angles.num_paths(), "row length must match path count");
        Self {
            row,
            directions: (0..angles.num_paths()).map(|p| angles.direction(p)).collect(),
            wavenumber: 2.0 * PI / wavelength,
        }
    }

    pub fn row(&self) -> &CVector {
        &self.row
    }

    fn terms(&self, t: Point2) -> impl Iterator<Item = (Complex64, (f64, f64))> + '_ {
        self.row.iter().zip(&self.directions).map(move |(r, &(ux, uy))| {
            let phase = self.wavenumber * (ux * t.x + uy * t.y);
            (r * Complex64::from_polar(1.0, phase), (ux, uy))
        })
    }

    pub fn value(&self, t: Point2) -> f64 {
        self.terms(t).map(|(z, _)| 2.0 * z.re).sum()
    }

    /// Each term is `2 |r_p| cos(zeta_p)`, so its partials are
    /// `-2 k |r_p| u_p sin(zeta_p)`.
    pub fn gradient(&self, t: Point2) -> [f64; 2] {
        let k = self.wavenumber;
        self.terms(t).fold([0.0, 0.0], |acc, (z, (ux, uy))| {
            [acc[0] - 2.0 * k * ux * z.im, acc[1] - 2.0 * k * uy * z.im]
        })
    }

    /// `16 pi^2 / lambda^2 * sum |r_p|`, at least the spectral norm of the
    /// Hessian anywhere in the plane.
    pub fn curvature(&self) -> f64 {
        4.0 * self.wavenumber * self.wavenumber * self.row.iter().map(|r| r.norm()).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    Minorizer,
    Majorizer,
}

/// `value + gradient . (t - point) -/+ curvature / 2 |t - point|^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaylorBound {
    pub kind: BoundKind,
    pub point: Point2,
    pub value: f64,
    pub gradient: [f64; 2],
    pub curvature: f64,
}

impl TaylorBound {
    pub fn around(kind: BoundKind, s: &SinusoidRow, point: Point2) -> Self {
        Self {
            kind,
            point,
            value: s.value(point),
            gradient: s.gradient(point),
            curvature: s.curvature(),
        }
    }

    pub fn eval(&self, t: Point2) -> f64 {
        let dx = t.x - self.point.x;
        let dy = t.y - self.point.y;
        let quad = 0.5 * self.curvature * (dx * dx + dy * dy);
        let lin = self.value + self.gradient[0] * dx + self.gradient[1] * dy;
        match self.kind {
            BoundKind::Minorizer => lin - quad,
            BoundKind::Majorizer => lin + quad,
        }
    }
}

/// A quadratic-form target bounded as `2 Re{r . g(t_m)} + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldAffineBound {
    pub sinusoid: SinusoidRow,
    pub constant: f64,
}

impl FieldAffineBound {
    pub fn eval(&self, t: Point2) -> f64 {
        self.sinusoid.value(t) + self.constant
    }

    /// Quadratic bound in `t_m` of the same direction as this bound.
    pub fn taylor(&self, kind: BoundKind, point: Point2) -> TaylorBound {
        TaylorBound::around(kind, &self.sinusoid, point)
    }
}

fn user_index(user: User) -> usize {
    match user {
        User::CellCenter => 0,
        User::CellEdge => 1,
    }
}

fn stream_index(stream: Stream) -> usize {
    match stream {
        Stream::CellCenter => 0,
        Stream::CellEdge => 1,
    }
}

/// Position-dependent quadratic forms at a reference layout.
///
/// All quantities are normalized by the noise power, so `d(k, q)` is the
/// received SNR of stream `q` at user `k`.
#[derive(Debug, Clone)]
pub struct QuadFormCache {
    wavelength: f64,
    layout: AntennaLayout,
    angles: [PathAngles; 2],
    v: [HermitianMatrix; 2],
    lambda_max: [f64; 2],
    g: [CMatrix; 2],
    gv: [CMatrix; 2],
    gvg: [CMatrix; 2],
    xi: [CMatrix; 2],
}

/// `V_k = (Sigma f)(Sigma f)^H / sigma^2`, the path-domain Gram matrix whose
/// quadratic form in `G_k w` equals `|h_k^H w|^2 / sigma^2`.
pub fn path_gram(realization: &ChannelRealization, user: User, noise_power: f64) -> HermitianMatrix {
    HermitianMatrix::outer(&realization.path_gains(user)).scaled(1.0 / noise_power)
}

/// `xi_ij = conj(w_i) w_j`.
fn coupling_matrix(w: &CVector) -> CMatrix {
    CMatrix::from_fn(w.len(), w.len(), |i, j| w[i].conj() * w[j])
}

pub fn build_quadform_cache(
    beams: &BeamformingPair,
    layout: &AntennaLayout,
    realization: &ChannelRealization,
    wavelength: f64,
    noise_power: f64,
) -> Result<QuadFormCache> {
    if beams.len() != layout.len() {
        return Err(Error::DimensionMismatch {
            context: "quadform cache",
            expected: layout.len(),
            actual: beams.len(),
        });
    }
    let angles = [realization.angles(User::CellCenter).clone(), realization.angles(User::CellEdge).clone()];
    let v = [
        path_gram(realization, User::CellCenter, noise_power),
        path_gram(realization, User::CellEdge, noise_power),
    ];
    let lambda_max = [v[0].max_eigenvalue().max(0.0), v[1].max_eigenvalue().max(0.0)];
    let g = [
        response_matrix(layout, &angles[0], wavelength),
        response_matrix(layout, &angles[1], wavelength),
    ];
    let gv = [g[0].adjoint() * v[0].as_matrix(), g[1].adjoint() * v[1].as_matrix()];
    let gvg = [&gv[0] * &g[0], &gv[1] * &g[1]];
    Ok(QuadFormCache {
        wavelength,
        layout: layout.clone(),
        angles,
        v,
        lambda_max,
        g,
        gv,
        gvg,
        xi: [coupling_matrix(&beams.w1), coupling_matrix(&beams.w2)],
    })
}

impl QuadFormCache {
    pub fn layout(&self) -> &AntennaLayout {
        &self.layout
    }

    pub fn num_antennas(&self) -> usize {
        self.layout.len()
    }

    pub fn num_paths(&self) -> usize {
        self.angles[0].num_paths()
    }

    pub fn gram(&self, user: User) -> &HermitianMatrix {
        &self.v[user_index(user)]
    }

    pub fn lambda_max(&self, user: User) -> f64 {
        self.lambda_max[user_index(user)]
    }

    pub fn coupling(&self, stream: Stream) -> &CMatrix {
        &self.xi[stream_index(stream)]
    }

    /// `sum_ij c_ij g_i^H V g_j` at the reference layout.
    pub fn quad_value(&self, user: User, coeff: &CMatrix) -> f64 {
        let gvg = &self.gvg[user_index(user)];
        coeff.iter().zip(gvg.iter()).map(|(c, a)| (c * a).re).sum()
    }

    /// `d_{k,q}`: SNR of stream `q` at user `k`.
    pub fn d(&self, user: User, stream: Stream) -> f64 {
        self.quad_value(user, self.coupling(stream))
    }

    /// Coefficients `c_ij` of the rate-threshold form
    /// `|h^H w2|^2 - L_r |h^H w1|^2 = sum_ij c_ij g_i^H V g_j`.
    pub fn threshold_coefficients(&self, sinr_threshold: f64) -> CMatrix {
        &self.xi[1] - &self.xi[0] * Complex64::new(sinr_threshold, 0.0)
    }

    /// `r_p = sum_n c_{n,m} (G^H V)_{n,p}`.
    pub fn coupling_row(&self, user: User, coeff: &CMatrix, m: usize) -> CVector {
        let gv = &self.gv[user_index(user)];
        let mut row = CVector::zeros(gv.ncols());
        for n in 0..gv.nrows() {
            row += gv.row(n).transpose() * coeff[(n, m)];
        }
        row
    }

    /// `sum_{i != m} sum_{j != m} c_ij g_i^H V g_j`.
    pub fn offdiag_constant(&self, user: User, coeff: &CMatrix, m: usize) -> f64 {
        let gvg = &self.gvg[user_index(user)];
        let n = gvg.nrows();
        let mut acc = 0.0;
        for i in (0..n).filter(|&i| i != m) {
            for j in (0..n).filter(|&j| j != m) {
                acc += (coeff[(i, j)] * gvg[(i, j)]).re;
            }
        }
        acc
    }

    fn diag_form(&self, user: User, m: usize) -> f64 {
        self.gvg[user_index(user)][(m, m)].re
    }

    /// `W^m_{k,q} = sum_{i,j != m} xi_ij g_i^H V g_j - xi_mm g_m^H V g_m`.
    pub fn w_constant(&self, user: User, stream: Stream, m: usize) -> f64 {
        let xi = self.coupling(stream);
        self.offdiag_constant(user, xi, m) - xi[(m, m)].re * self.diag_form(user, m)
    }

    /// `Q` row of antenna `m`: `xi_m^T G^H V`.
    pub fn q_row(&self, user: User, stream: Stream, m: usize) -> CVector {
        self.coupling_row(user, self.coupling(stream), m)
    }

    fn sinusoid(&self, user: User, row: CVector) -> SinusoidRow {
        SinusoidRow::new(row, &self.angles[user_index(user)], self.wavelength)
    }

    /// Expression in `g(t_m)` that follows the first-order expansion of the
    /// diagonal term `c_mm g^H V g`; it minorizes when `c_mm >= 0` and
    /// majorizes when `c_mm < 0`.
    fn tangent_form(&self, user: User, coeff: &CMatrix, m: usize) -> FieldAffineBound {
        let cmm = coeff[(m, m)].re;
        FieldAffineBound {
            sinusoid: self.sinusoid(user, self.coupling_row(user, coeff, m)),
            constant: self.offdiag_constant(user, coeff, m) - cmm * self.diag_form(user, m),
        }
    }

    /// Expression in `g(t_m)` obtained from the eigenvalue majorizer of
    /// `g^H V g`; it majorizes when `c_mm >= 0` and minorizes when `c_mm < 0`.
    fn eigen_form(&self, user: User, coeff: &CMatrix, m: usize) -> FieldAffineBound {
        let k = user_index(user);
        let cmm = coeff[(m, m)].re;
        let lam = self.lambda_max[k];
        let lt = self.num_paths() as f64;
        let g_l = self.g[k].column(m);
        let row = self.coupling_row(user, coeff, m) - g_l.map(|z| z.conj() * cmm * lam);
        FieldAffineBound {
            sinusoid: self.sinusoid(user, row),
            constant: self.offdiag_constant(user, coeff, m) + cmm * (2.0 * lt * lam - self.diag_form(user, m)),
        }
    }

    /// Lower bound of `F(t_m) = sum_ij c_ij g_i^H V g_j`, affine in `g(t_m)`.
    pub fn lower_bound_in_field(&self, user: User, coeff: &CMatrix, m: usize) -> FieldAffineBound {
        if coeff[(m, m)].re >= 0.0 {
            self.tangent_form(user, coeff, m)
        } else {
            self.eigen_form(user, coeff, m)
        }
    }

    /// Upper bound of `F(t_m)`, affine in `g(t_m)`.
    pub fn upper_bound_in_field(&self, user: User, coeff: &CMatrix, m: usize) -> FieldAffineBound {
        if coeff[(m, m)].re >= 0.0 {
            self.eigen_form(user, coeff, m)
        } else {
            self.tangent_form(user, coeff, m)
        }
    }

    /// Exact `F(t_m)` with antenna `m` moved to `t`, for audits and tests.
    pub fn quad_value_moved(&self, user: User, coeff: &CMatrix, m: usize, t: Point2) -> f64 {
        let k = user_index(user);
        let mut g = self.g[k].clone();
        g.set_column(m, &field_response_vector(t, &self.angles[k], self.wavelength));
        let gvg = g.adjoint() * self.v[k].as_matrix() * g;
        coeff.iter().zip(gvg.iter()).map(|(c, a)| (c * a).re).sum()
    }

    /// Field response of user `k` at an arbitrary point.
    pub fn field_response(&self, user: User, t: Point2) -> CVector {
        field_response_vector(t, &self.angles[user_index(user)], self.wavelength)
    }

    /// Quadratic minorizer in `t_m` of `b_{k,q}(t_m) = 2 Re{Q g(t_m)}`.
    pub fn position_minorizer(&self, m: usize, user: User, stream: Stream) -> TaylorBound {
        let s = self.sinusoid(user, self.q_row(user, stream, m));
        TaylorBound::around(BoundKind::Minorizer, &s, self.layout.position(m))
    }

    /// `D_{e,1}` row: `xi_m^T G_e^H V_e - xi_mm lambda_max g_e(t_m^l)^H`.
    pub fn d_row_ceu(&self, m: usize) -> CVector {
        self.eigen_form(User::CellEdge, self.coupling(Stream::CellCenter), m)
            .sinusoid
            .row
    }

    /// Quadratic majorizer in `t_m` of `c_{e,1}(t_m) = 2 Re{D_{e,1} g_e(t_m)}`.
    pub fn position_majorizer_ceu(&self, m: usize) -> TaylorBound {
        let s = self.sinusoid(User::CellEdge, self.d_row_ceu(m));
        TaylorBound::around(BoundKind::Majorizer, &s, self.layout.position(m))
    }

    /// Constant completing `d_{e,1}(t_m) <= c_{e,1}(t_m) + constant`:
    /// `W^m_{e,1} + 2 xi_mm L_t lambda_max`.
    pub fn ceu_majorizer_constant(&self, m: usize) -> f64 {
        self.eigen_form(User::CellEdge, self.coupling(Stream::CellCenter), m).constant
    }

    /// Upper bound on `g_e(t)^H V_e g_e(t)` expanded at antenna `m`'s
    /// reference position, using `Phi = lambda_max I`.
    pub fn eigen_majorizer(&self, m: usize, t: Point2) -> f64 {
        eigen_majorizer(
            &self.v[1],
            self.lambda_max[1],
            &self.g[1].column(m).into_owned(),
            &self.field_response(User::CellEdge, t),
        )
    }
}

/// `g_l^H (Phi - V) g_l + g^H Phi g - 2 Re{g_l^H (Phi - V) g}` with
/// `Phi = lambda_max I`; an upper bound of `g^H V g` tangent at `g = g_l`.
pub fn eigen_majorizer(v: &HermitianMatrix, lambda_max: f64, g_l: &CVector, g: &CVector) -> f64 {
    let phi_minus_v = CMatrix::identity(v.dim(), v.dim()) * Complex64::new(lambda_max, 0.0) - v.as_matrix();
    let at_ref = (g_l.adjoint() * &phi_minus_v * g_l)[(0, 0)].re;
    let cross = (g_l.adjoint() * &phi_minus_v * g)[(0, 0)].re;
    at_ref + lambda_max * g.norm_squared() - 2.0 * cross
}

/// Affine restriction of `|t_m - t_k| >= D`:
/// `n . (t_m - t_k)` with `n = (t_m^l - t_k) / |t_m^l - t_k|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceCut {
    pub normal: [f64; 2],
    pub anchor: Point2,
}

impl DistanceCut {
    pub fn eval(&self, t: Point2) -> f64 {
        self.normal[0] * (t.x - self.anchor.x) + self.normal[1] * (t.y - self.anchor.y)
    }
}

pub fn distance_linearize(t_m_l: Point2, t_k: Point2) -> Result<DistanceCut> {
    let dx = t_m_l.x - t_k.x;
    let dy = t_m_l.y - t_k.y;
    let norm = dx.hypot(dy);
    if norm <= 1e-15 {
        return Err(Error::CoincidentPoints);
    }
    Ok(DistanceCut {
        normal: [dx / norm, dy / norm],
        anchor: t_k,
    })
}
