//! Far-field geometric channel between the base-station fluid-antenna array
//! and the two single-antenna users.
//!
//! Every transmit path `p` of user `k` is described by an elevation and an
//! azimuth angle of departure. Moving an antenna from the origin to `(x, y)`
//! lengthens path `p` by `x sin(theta) cos(phi) + y cos(theta)`, which turns
//! into a phase `2 pi rho / lambda` on that path's field response.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector};

/// A point in the antenna plane, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// The two receivers. The cell-center user is the legitimate recipient of
/// `s1`; the cell-edge user is served `s2` but treated as an eavesdropper.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum User {
    CellCenter,
    CellEdge,
}

impl User {
    pub const BOTH: [User; 2] = [User::CellCenter, User::CellEdge];
}

/// Axis-aligned rectangle the transmit antennas may move within.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementRegion {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

impl PlacementRegion {
    pub fn new(x_lo: f64, x_hi: f64, y_lo: f64, y_hi: f64) -> Result<Self> {
        let region = Self { x_lo, x_hi, y_lo, y_hi };
        region.validate()?;
        Ok(region)
    }

    /// `[0, side] x [0, side]`.
    pub fn square(side: f64) -> Result<Self> {
        Self::new(0.0, side, 0.0, side)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_lo, self.x_hi, self.y_lo, self.y_hi]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x_lo >= self.x_hi || self.y_lo >= self.y_hi {
            return Err(Error::InvalidParams(format!(
                "placement region must satisfy x_lo < x_hi and y_lo < y_hi, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x_hi - self.x_lo
    }

    pub fn height(&self) -> f64 {
        self.y_hi - self.y_lo
    }

    pub fn contains(&self, p: &Point2) -> bool {
        self.margin(p) >= 0.0
    }

    /// Signed distance to the nearest edge; negative outside.
    pub fn margin(&self, p: &Point2) -> f64 {
        (p.x - self.x_lo)
            .min(self.x_hi - p.x)
            .min(p.y - self.y_lo)
            .min(self.y_hi - p.y)
    }

    /// Whether a square lattice of pitch `spacing` fits `count` points.
    pub fn admits_lattice(&self, count: usize, spacing: f64) -> bool {
        if count <= 1 || spacing <= 0.0 {
            return true;
        }
        let cols = (self.width() / spacing + 1e-9).floor() as usize + 1;
        let rows = (self.height() / spacing + 1e-9).floor() as usize + 1;
        cols.saturating_mul(rows) >= count
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLoss {
    /// Average channel gain at the 1 m reference distance (linear).
    pub g0: f64,
    pub alpha: f64,
    pub d_min: f64,
    pub d_max: f64,
}

impl PathLoss {
    pub fn gain(&self, distance: f64) -> f64 {
        self.g0 * distance.powf(-self.alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Carrier wavelength, meters.
    pub wavelength: f64,
    pub num_antennas: usize,
    pub num_tx_paths: usize,
    pub num_rx_paths_cu: usize,
    pub num_rx_paths_ceu: usize,
    /// Noise power, watts.
    pub noise_power: f64,
    /// Transmit power budget, watts.
    pub max_power: f64,
    /// Rate `r` required for `s2` at both users, bps/Hz.
    pub rate_threshold: f64,
    /// Optional per-user thresholds `(r_c, r_e)` replacing `rate_threshold`.
    pub rate_threshold_override: Option<(f64, f64)>,
    /// Minimum inter-antenna spacing `D`, meters.
    pub min_spacing: f64,
    pub region: PlacementRegion,
    pub pathloss: PathLoss,
}

impl SystemParams {
    pub const CARRIER_HZ: f64 = 2.4e9;

    /// Simulation defaults: 2.4 GHz carrier (lambda = 0.125 m), four paths
    /// per link, g0 = -40 dB, alpha = 2.8, users 20..100 m away, noise
    /// -80 dBm, D = lambda/2, r = 2 bps/Hz and a 4-lambda square region.
    ///
    /// `power_ratio_db` sets the transmit power relative to the noise floor
    /// referenced to the cell-edge path gain:
    /// `P_max g0 d_max^-alpha / sigma^2 = 10^(power_ratio_db / 10)`.
    pub fn defaults(num_antennas: usize, power_ratio_db: f64) -> Self {
        let wavelength = 0.125;
        let pathloss = PathLoss {
            g0: db_to_linear(-40.0),
            alpha: 2.8,
            d_min: 20.0,
            d_max: 100.0,
        };
        let noise_power = dbm_to_watts(-80.0);
        let mut params = Self {
            wavelength,
            num_antennas,
            num_tx_paths: 4,
            num_rx_paths_cu: 4,
            num_rx_paths_ceu: 4,
            noise_power,
            max_power: 1.0,
            rate_threshold: 2.0,
            rate_threshold_override: None,
            min_spacing: wavelength / 2.0,
            region: PlacementRegion::square(4.0 * wavelength).expect("valid square"),
            pathloss,
        };
        params.set_power_ratio_db(power_ratio_db);
        params
    }

    pub fn set_power_ratio_db(&mut self, power_ratio_db: f64) {
        let edge_gain = self.pathloss.gain(self.pathloss.d_max);
        self.max_power = self.noise_power * db_to_linear(power_ratio_db) / edge_gain;
    }

    pub fn power_ratio_db(&self) -> f64 {
        let edge_gain = self.pathloss.gain(self.pathloss.d_max);
        linear_to_db(self.max_power * edge_gain / self.noise_power)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParams(msg.to_string()));
        if !(self.wavelength > 0.0) {
            return bad("wavelength must be positive");
        }
        if self.num_antennas == 0 {
            return bad("need at least one antenna");
        }
        if self.num_tx_paths == 0 || self.num_rx_paths_cu == 0 || self.num_rx_paths_ceu == 0 {
            return bad("path counts must be at least one");
        }
        if !(self.noise_power > 0.0) {
            return bad("noise power must be positive");
        }
        if !(self.max_power > 0.0) {
            return bad("power budget must be positive");
        }
        if !(self.min_spacing >= 0.0) {
            return bad("minimum spacing must be non-negative");
        }
        let (rc, re) = self.rate_thresholds();
        if !(rc >= 0.0 && re >= 0.0) {
            return bad("rate thresholds must be non-negative");
        }
        let pl = &self.pathloss;
        if !(pl.g0 > 0.0 && pl.d_min > 0.0 && pl.d_min <= pl.d_max) {
            return bad("path loss requires g0 > 0 and 0 < d_min <= d_max");
        }
        self.region.validate()?;
        if !self.region.admits_lattice(self.num_antennas, self.min_spacing) {
            return Err(Error::RegionTooSmall(format!(
                "{} antennas at spacing {} do not fit in {:?}",
                self.num_antennas, self.min_spacing, self.region
            )));
        }
        Ok(())
    }

    /// `(r_c, r_e)`.
    pub fn rate_thresholds(&self) -> (f64, f64) {
        self.rate_threshold_override
            .unwrap_or((self.rate_threshold, self.rate_threshold))
    }

    pub fn rate_threshold_for(&self, user: User) -> f64 {
        let (rc, re) = self.rate_thresholds();
        match user {
            User::CellCenter => rc,
            User::CellEdge => re,
        }
    }

    /// SINR threshold `2^r - 1` equivalent to the rate requirement.
    pub fn sinr_threshold(&self, user: User) -> f64 {
        2f64.powf(self.rate_threshold_for(user)) - 1.0
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

/// Antenna coordinates `t_1..t_M`. Construction does not validate; use
/// [`AntennaLayout::validate`] against a parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AntennaLayout {
    positions: Vec<Point2>,
}

impl AntennaLayout {
    pub fn new(positions: Vec<Point2>) -> Self {
        Self { positions }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point2] {
        &self.positions
    }

    pub fn position(&self, m: usize) -> Point2 {
        self.positions[m]
    }

    pub fn with_position(&self, m: usize, p: Point2) -> Self {
        let mut positions = self.positions.clone();
        positions[m] = p;
        Self { positions }
    }

    /// Smallest pairwise distance (infinity for fewer than two antennas).
    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.positions.iter().enumerate() {
            for b in &self.positions[i + 1..] {
                best = best.min(a.distance(b));
            }
        }
        best
    }

    /// Smallest signed distance of any antenna to the region boundary.
    pub fn region_margin(&self, region: &PlacementRegion) -> f64 {
        self.positions
            .iter()
            .map(|p| region.margin(p))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self, params: &SystemParams) -> Result<()> {
        if self.len() != params.num_antennas {
            return Err(Error::DimensionMismatch {
                context: "antenna layout",
                expected: params.num_antennas,
                actual: self.len(),
            });
        }
        if self.region_margin(&params.region) < 0.0 {
            return Err(Error::InvalidParams("antenna outside placement region".into()));
        }
        if self.min_pairwise_distance() < params.min_spacing {
            return Err(Error::InvalidParams(format!(
                "antenna spacing {} below minimum {}",
                self.min_pairwise_distance(),
                params.min_spacing
            )));
        }
        Ok(())
    }

    /// Near-square lattice filling the region, `ceil(sqrt(M))` columns, each
    /// antenna at the center of its cell.
    pub fn uniform_grid(params: &SystemParams) -> Result<Self> {
        let m = params.num_antennas;
        let cols = (m as f64).sqrt().ceil() as usize;
        let rows = m.div_ceil(cols);
        let region = &params.region;
        let dx = region.width() / cols as f64;
        let dy = region.height() / rows as f64;
        let positions: Vec<Point2> = (0..m)
            .map(|i| {
                let (r, c) = (i / cols, i % cols);
                Point2::new(
                    region.x_lo + (c as f64 + 0.5) * dx,
                    region.y_lo + (r as f64 + 0.5) * dy,
                )
            })
            .collect();
        let layout = Self::new(positions);
        if layout.min_pairwise_distance() < params.min_spacing {
            return Err(Error::RegionTooSmall(format!(
                "a {rows}x{cols} grid in {region:?} violates spacing {}",
                params.min_spacing
            )));
        }
        Ok(layout)
    }

    /// Uniform linear array along x with pitch exactly `D`, starting at the
    /// region's lower-left corner.
    pub fn linear_array(params: &SystemParams) -> Result<Self> {
        let m = params.num_antennas;
        let region = &params.region;
        let span = (m.saturating_sub(1)) as f64 * params.min_spacing;
        if span > region.width() + 1e-12 {
            return Err(Error::RegionTooSmall(format!(
                "linear array of {m} antennas at pitch {} spans {span} > width {}",
                params.min_spacing,
                region.width()
            )));
        }
        Ok(Self::new(
            (0..m)
                .map(|i| Point2::new(region.x_lo + i as f64 * params.min_spacing, region.y_lo))
                .collect(),
        ))
    }

    /// Rejection sampling: each antenna is drawn uniformly in the region and
    /// redrawn until it respects the spacing to all previously placed ones.
    pub fn random<R: Rng + ?Sized>(
        params: &SystemParams,
        rng: &mut R,
        max_attempts: usize,
    ) -> Result<Self> {
        let region = &params.region;
        let ux = Uniform::new_inclusive(region.x_lo, region.x_hi);
        let uy = Uniform::new_inclusive(region.y_lo, region.y_hi);
        let mut positions: Vec<Point2> = Vec::with_capacity(params.num_antennas);
        let mut attempts = 0;
        while positions.len() < params.num_antennas {
            if attempts >= max_attempts {
                return Err(Error::PackingFailed {
                    antennas: params.num_antennas,
                    attempts,
                });
            }
            attempts += 1;
            let cand = Point2::new(ux.sample(rng), uy.sample(rng));
            if positions
                .iter()
                .all(|p| p.distance(&cand) >= params.min_spacing)
            {
                positions.push(cand);
            }
        }
        Ok(Self::new(positions))
    }
}

/// Angles of departure for one user's transmit paths, radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathAngles {
    elevation: Vec<f64>,
    azimuth: Vec<f64>,
}

impl PathAngles {
    pub fn new(elevation: Vec<f64>, azimuth: Vec<f64>) -> Result<Self> {
        if elevation.len() != azimuth.len() {
            return Err(Error::DimensionMismatch {
                context: "path angles",
                expected: elevation.len(),
                actual: azimuth.len(),
            });
        }
        if elevation
            .iter()
            .chain(&azimuth)
            .any(|a| !(0.0..=PI).contains(a))
        {
            return Err(Error::InvalidParams("angles must lie in [0, pi]".into()));
        }
        Ok(Self { elevation, azimuth })
    }

    pub fn num_paths(&self) -> usize {
        self.elevation.len()
    }

    pub fn elevation(&self) -> &[f64] {
        &self.elevation
    }

    pub fn azimuth(&self) -> &[f64] {
        &self.azimuth
    }

    /// Direction cosines `(sin theta cos phi, cos theta)` of path `p`.
    pub fn direction(&self, p: usize) -> (f64, f64) {
        let (st, ct) = self.elevation[p].sin_cos();
        (st * self.azimuth[p].cos(), ct)
    }
}

/// `x sin(theta) cos(phi) + y cos(theta)`.
pub fn path_difference(position: Point2, theta: f64, phi: f64) -> f64 {
    position.x * theta.sin() * phi.cos() + position.y * theta.cos()
}

/// Entry `p` is `exp(j 2 pi rho_p(t) / lambda)`.
pub fn field_response_vector(position: Point2, angles: &PathAngles, wavelength: f64) -> CVector {
    let k = 2.0 * PI / wavelength;
    CVector::from_fn(angles.num_paths(), |p, _| {
        let rho = path_difference(position, angles.elevation[p], angles.azimuth[p]);
        Complex64::from_polar(1.0, k * rho)
    })
}

/// `G(t) = [g(t_1), ..., g(t_M)]`, `L_t x M`.
pub fn response_matrix(layout: &AntennaLayout, angles: &PathAngles, wavelength: f64) -> CMatrix {
    let mut g = CMatrix::zeros(angles.num_paths(), layout.len());
    for (m, pos) in layout.positions().iter().enumerate() {
        g.set_column(m, &field_response_vector(*pos, angles, wavelength));
    }
    g
}

/// One draw of the large- and small-scale channel parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    angles_cu: PathAngles,
    angles_ceu: PathAngles,
    sigma: CMatrix,
    omega: CMatrix,
    f_cu: CVector,
    f_ceu: CVector,
    distance_cu: f64,
    distance_ceu: f64,
}

impl ChannelRealization {
    /// `sigma` is the `L_t x L_c` path-response matrix of the cell-center
    /// link, `omega` the `L_t x L_e` one of the cell-edge link.
    pub fn new(
        angles_cu: PathAngles,
        angles_ceu: PathAngles,
        sigma: CMatrix,
        omega: CMatrix,
        distance_cu: f64,
        distance_ceu: f64,
    ) -> Result<Self> {
        let lt = angles_cu.num_paths();
        for (context, actual) in [
            ("cell-edge angles", angles_ceu.num_paths()),
            ("sigma rows", sigma.nrows()),
            ("omega rows", omega.nrows()),
        ] {
            if actual != lt {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: lt,
                    actual,
                });
            }
        }
        if distance_ceu < distance_cu {
            return Err(Error::InvalidParams(
                "cell-edge user must be at least as far as the cell-center user".into(),
            ));
        }
        let f_cu = CVector::from_element(sigma.ncols(), Complex64::new(1.0, 0.0));
        let f_ceu = CVector::from_element(omega.ncols(), Complex64::new(1.0, 0.0));
        Ok(Self {
            angles_cu,
            angles_ceu,
            sigma,
            omega,
            f_cu,
            f_ceu,
            distance_cu,
            distance_ceu,
        })
    }

    pub fn num_tx_paths(&self) -> usize {
        self.angles_cu.num_paths()
    }

    pub fn angles(&self, user: User) -> &PathAngles {
        match user {
            User::CellCenter => &self.angles_cu,
            User::CellEdge => &self.angles_ceu,
        }
    }

    /// Sigma for the cell-center user, Omega for the cell-edge user.
    pub fn path_response(&self, user: User) -> &CMatrix {
        match user {
            User::CellCenter => &self.sigma,
            User::CellEdge => &self.omega,
        }
    }

    pub fn receive_response(&self, user: User) -> &CVector {
        match user {
            User::CellCenter => &self.f_cu,
            User::CellEdge => &self.f_ceu,
        }
    }

    pub fn distance(&self, user: User) -> f64 {
        match user {
            User::CellCenter => self.distance_cu,
            User::CellEdge => self.distance_ceu,
        }
    }

    /// Origin-referenced path gains `Sigma f` (or `Omega f`), length `L_t`.
    pub fn path_gains(&self, user: User) -> CVector {
        self.path_response(user) * self.receive_response(user)
    }

    /// Copy with the given user's path responses zeroed.
    pub fn with_silenced(&self, user: User) -> Self {
        let mut out = self.clone();
        match user {
            User::CellCenter => out.sigma.fill(Complex64::new(0.0, 0.0)),
            User::CellEdge => out.omega.fill(Complex64::new(0.0, 0.0)),
        }
        out
    }
}

/// `h_k = G_k(t)^H (Sigma or Omega) f_k`, an `M`-vector.
pub fn synthesize_channel(
    layout: &AntennaLayout,
    realization: &ChannelRealization,
    user: User,
    wavelength: f64,
) -> Result<CVector> {
    let angles = realization.angles(user);
    let resp = realization.path_response(user);
    let f = realization.receive_response(user);
    if resp.nrows() != angles.num_paths() {
        return Err(Error::DimensionMismatch {
            context: "path response rows",
            expected: angles.num_paths(),
            actual: resp.nrows(),
        });
    }
    if resp.ncols() != f.len() {
        return Err(Error::DimensionMismatch {
            context: "receive response length",
            expected: resp.ncols(),
            actual: f.len(),
        });
    }
    let g = response_matrix(layout, angles, wavelength);
    Ok(g.adjoint() * (resp * f))
}

pub fn sample_realization(params: &SystemParams, seed: u64) -> ChannelRealization {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_realization_with(params, &mut rng)
}

/// Draws distances, angles and path responses. Distances are uniform in
/// `[d_min, d_max]` and swapped when the cell-edge draw is the nearer one.
pub fn sample_realization_with<R: Rng + ?Sized>(
    params: &SystemParams,
    rng: &mut R,
) -> ChannelRealization {
    let pl = &params.pathloss;
    let dist = Uniform::new_inclusive(pl.d_min, pl.d_max);
    let (mut d_c, mut d_e) = (dist.sample(rng), dist.sample(rng));
    if d_e < d_c {
        std::mem::swap(&mut d_c, &mut d_e);
    }
    let lt = params.num_tx_paths;
    let angle = Uniform::new_inclusive(0.0, PI);
    let draw_angles = |rng: &mut R| {
        let el: Vec<f64> = (0..lt).map(|_| angle.sample(rng)).collect();
        let az: Vec<f64> = (0..lt).map(|_| angle.sample(rng)).collect();
        PathAngles::new(el, az).expect("sampled angles are in range")
    };
    let angles_cu = draw_angles(rng);
    let angles_ceu = draw_angles(rng);
    let sigma = complex_gaussian(rng, lt, params.num_rx_paths_cu, pl.gain(d_c) / lt as f64);
    let omega = complex_gaussian(rng, lt, params.num_rx_paths_ceu, pl.gain(d_e) / lt as f64);
    ChannelRealization::new(angles_cu, angles_ceu, sigma, omega, d_c, d_e)
        .expect("sampled realization is consistent")
}

/// Circularly-symmetric complex Gaussian entries, real and imaginary parts
/// each `N(0, variance / 2)`.
fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, variance: f64) -> CMatrix {
    let normal = Normal::new(0.0, (variance / 2.0).sqrt()).expect("finite variance");
    let mut m = CMatrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            m[(i, j)] = Complex64::new(normal.sample(rng), normal.sample(rng));
        }
    }
    m
}
