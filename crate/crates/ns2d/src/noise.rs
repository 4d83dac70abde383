//! The forcing model: deterministic `h`, white-in-time noise over the
//! ordered divergence-free basis, coefficient sums, and reproducible Wiener
//! increments with an exactly invertible Girsanov shift.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::basis::DivFreeBasis;
use crate::error::{Error, Result};
use crate::field::SpectralField;
use crate::grid::Grid;
use crate::rng::StreamKey;
use crate::spectral::curl;

/// Serializable description of the noise; round-trips exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Number of forced basis modes `J`.
    pub j_modes: usize,
    /// Coefficient decay exponent: `b_j = b0 * j^{-s}`.
    pub decay_s: f64,
    pub b0: f64,
    /// Leading modes guaranteed non-zero (the non-degeneracy condition).
    pub n_active: usize,
    pub seed: u64,
    /// Coefficients of `h` over the leading basis slots.
    pub h_coeffs: Vec<f64>,
    /// Accept `h` outside the active span, validating only the relaxed
    /// summability conditions.
    #[serde(default)]
    pub relaxed_h: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            j_modes: 32,
            decay_s: 2.0,
            b0: 0.25,
            n_active: 16,
            seed: 0,
            h_coeffs: vec![0.1],
            relaxed_h: false,
        }
    }
}

/// Immutable noise specification: basis handle, coefficients, deterministic
/// force, and the three coefficient sums.
#[derive(Debug, Clone)]
pub struct NoiseSpec {
    basis: Arc<DivFreeBasis>,
    coeffs: Vec<f64>,
    h: SpectralField,
    h_coeffs: Vec<f64>,
    seed: u64,
    n_active: usize,
    /// `B_0 = sum b_j^2`
    pub b0_sum: f64,
    /// `B_1 = sum b_j^2 ||e_j||_{H^1}^2`
    pub b1_sum: f64,
    /// `B_phi = sum b_j^2 (||phi e_j||^2 + ||phi curl e_j||^2)`
    pub bphi_sum: f64,
}

/// One step of Gaussian coordinates: `xi_j` standard normal draws plus an
/// accumulated Girsanov shift per mode. The shift is stored separately so
/// that shifting and unshifting by the same drift is bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerIncrement {
    pub dt: f64,
    pub xi: Vec<f64>,
    pub shift: Vec<f64>,
    /// Stream position of the first draw (for replay manifests).
    pub position: u64,
    /// Step index the increment was sampled for.
    pub step: u64,
}

impl WienerIncrement {
    pub fn zero(modes: usize, dt: f64) -> Self {
        WienerIncrement { dt, xi: vec![0.0; modes], shift: vec![0.0; modes], position: 0, step: 0 }
    }

    /// Effective Gaussian coordinate of mode `j` (draw plus shift).
    #[inline]
    pub fn coordinate(&self, j: usize) -> f64 {
        self.xi[j] + self.shift[j]
    }

    pub fn modes(&self) -> usize {
        self.xi.len()
    }
}

/// Builds and validates a [`NoiseSpec`] on the given grid.
pub fn build_spec(grid: &Grid, cfg: &NoiseConfig) -> Result<NoiseSpec> {
    let basis = Arc::new(DivFreeBasis::new(grid));
    build_spec_with_basis(basis, cfg)
}

pub fn build_spec_with_basis(basis: Arc<DivFreeBasis>, cfg: &NoiseConfig) -> Result<NoiseSpec> {
    if cfg.decay_s <= 0.5 {
        return Err(Error::InvalidConfig(format!(
            "coefficient decay s = {} gives a divergent B_0 as J grows",
            cfg.decay_s
        )));
    }
    if cfg.j_modes == 0 || cfg.j_modes > basis.len() {
        return Err(Error::InvalidConfig(format!(
            "j_modes = {} outside 1..={}",
            cfg.j_modes,
            basis.len()
        )));
    }
    if cfg.n_active == 0 || cfg.n_active > cfg.j_modes {
        return Err(Error::InvalidConfig(format!(
            "n_active = {} outside 1..={}",
            cfg.n_active, cfg.j_modes
        )));
    }
    if !cfg.relaxed_h && cfg.h_coeffs.len() > cfg.n_active {
        return Err(Error::InvalidConfig(format!(
            "h has {} coefficients but only {} active modes (set relaxed_h to override)",
            cfg.h_coeffs.len(),
            cfg.n_active
        )));
    }

    let coeffs: Vec<f64> =
        (1..=cfg.j_modes).map(|j| cfg.b0 * (j as f64).powf(-cfg.decay_s)).collect();
    for (j, &b) in coeffs.iter().enumerate().take(cfg.n_active) {
        if b == 0.0 {
            return Err(Error::DegenerateMode { mode: j + 1 });
        }
    }

    // orthonormality of the leading block, via the discrete inner product
    let check = cfg.j_modes.min(48);
    for i in 0..check {
        let ei = basis.field(i);
        for j in i..check {
            let ip = ei.inner(&basis.field(j));
            let expect = if i == j { 1.0 } else { 0.0 };
            if (ip - expect).abs() > 1e-12 {
                return Err(Error::CheckFailed(format!(
                    "basis orthonormality residual {:.3e} at ({i}, {j})",
                    (ip - expect).abs()
                )));
            }
        }
    }

    let mut h = SpectralField::zero(basis.grid());
    for (j, &c) in cfg.h_coeffs.iter().enumerate() {
        basis.inject(&mut h, j, c);
    }

    // coefficient sums; the weighted one by grid quadrature of phi e_j
    let grid = basis.grid().clone();
    let m = grid.resolution();
    let mut b0_sum = 0.0;
    let mut b1_sum = 0.0;
    let mut bphi_sum = 0.0;
    let mut phi_sq = vec![0.0; grid.len()];
    for i in 0..m {
        for j in 0..m {
            let p = grid.point(i, j);
            phi_sq[grid.idx(i, j)] = p[0] * p[0] + p[1] * p[1] + 1.0;
        }
    }
    for (jj, &b) in coeffs.iter().enumerate() {
        let bsq = b * b;
        b0_sum += bsq;
        let knorm = basis.wavenumber_norm(jj);
        b1_sum += bsq * (1.0 + knorm * knorm);
        let e = basis.field(jj);
        let e_phys = e.to_physical();
        let w_phys = curl(&e).values();
        let mut phi_e = 0.0;
        let mut phi_w = 0.0;
        for idx in 0..grid.len() {
            phi_e += phi_sq[idx] * (e_phys[0][idx] * e_phys[0][idx] + e_phys[1][idx] * e_phys[1][idx]);
            phi_w += phi_sq[idx] * w_phys[idx] * w_phys[idx];
        }
        bphi_sum += bsq * (phi_e + phi_w) * grid.cell_weight();
    }

    Ok(NoiseSpec {
        basis,
        coeffs,
        h,
        h_coeffs: cfg.h_coeffs.clone(),
        seed: cfg.seed,
        n_active: cfg.n_active,
        b0_sum,
        b1_sum,
        bphi_sum,
    })
}

impl NoiseSpec {
    pub fn basis(&self) -> &DivFreeBasis {
        &self.basis
    }

    pub fn basis_arc(&self) -> Arc<DivFreeBasis> {
        self.basis.clone()
    }

    pub fn grid(&self) -> &Grid {
        self.basis.grid()
    }

    pub fn modes(&self) -> usize {
        self.coeffs.len()
    }

    pub fn n_active(&self) -> usize {
        self.n_active
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn coefficient(&self, j: usize) -> f64 {
        self.coeffs[j]
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn min_active_coefficient(&self) -> f64 {
        self.coeffs[..self.n_active].iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()))
    }

    pub fn h(&self) -> &SpectralField {
        &self.h
    }

    pub fn h_coeffs(&self) -> &[f64] {
        &self.h_coeffs
    }

    /// Noise stream for one trajectory.
    pub fn stream(&self, trajectory: u64) -> StreamKey {
        StreamKey::from_seed(self.seed).derive(0x6e6f6973).derive(trajectory)
    }

    /// Draw the step's Wiener increment: `sqrt(dt) xi_j`, one standard
    /// normal per forced mode. Deterministic given `(seed, trajectory, step)`.
    pub fn sample_increment(&self, stream: StreamKey, step: u64, dt: f64) -> Result<WienerIncrement> {
        if dt < 0.0 {
            return Err(Error::InvalidConfig(format!("dt must be non-negative, got {dt}")));
        }
        let mut rng = stream.derive(step).rng();
        let position = rng.position();
        let mut xi = vec![0.0; self.coeffs.len()];
        if dt > 0.0 {
            rng.fill_standard_normal(&mut xi)?;
        } else {
            // dt = 0: all-zero increment, but keep the stream accounting
            for _ in 0..(2 * xi.len()) {
                rng.next_u64()?;
            }
        }
        Ok(WienerIncrement { dt, xi, shift: vec![0.0; self.coeffs.len()], position, step })
    }

    /// Assembled increment field `sum_j b_j sqrt(dt) (xi_j + shift_j) e_j`.
    pub fn increment_field(&self, incr: &WienerIncrement) -> SpectralField {
        let mut out = SpectralField::zero(self.grid());
        let sqrt_dt = incr.dt.sqrt();
        for (j, &b) in self.coeffs.iter().enumerate() {
            let gamma = b * sqrt_dt * incr.coordinate(j);
            self.basis.inject(&mut out, j, gamma);
        }
        out
    }

    /// Coordinates `<drift, e_j>` over the forced modes.
    pub fn drift_coordinates(&self, drift: &SpectralField) -> Vec<f64> {
        (0..self.coeffs.len()).map(|j| self.basis.coordinate(drift, j)).collect()
    }

    /// Applies the discrete Girsanov shift: the Gaussian coordinate of mode
    /// `j` gains `a_j dt / (b_j sqrt(dt))` with `a_j = <drift, e_j>`.
    /// Shifting and then unshifting with the negated drift restores the
    /// increment bit-exactly.
    pub fn girsanov_shift(
        &self,
        incr: &WienerIncrement,
        drift: &SpectralField,
        dt: f64,
    ) -> Result<WienerIncrement> {
        if dt != incr.dt {
            return Err(Error::InvalidConfig(format!(
                "shift dt {dt} does not match increment dt {}",
                incr.dt
            )));
        }
        let mut out = incr.clone();
        if dt == 0.0 {
            return Ok(out);
        }
        let sqrt_dt = dt.sqrt();
        let coords = self.drift_coordinates(drift);
        for (j, &a) in coords.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let b = self.coeffs[j];
            if b == 0.0 {
                return Err(Error::DegenerateMode { mode: j + 1 });
            }
            out.shift[j] += a * sqrt_dt / b;
        }
        Ok(out)
    }

    /// Discrete Girsanov exponent of a shifted step against the plain one:
    /// `sum_j (c_j xi'_j - c_j^2 / 2)` with `c_j` the coordinate shift and
    /// `xi'_j` the observed (shifted) coordinate.
    pub fn girsanov_log_density(&self, shifted: &WienerIncrement) -> f64 {
        let mut acc = 0.0;
        for j in 0..shifted.modes() {
            let c = shifted.shift[j];
            if c != 0.0 {
                acc += c * shifted.coordinate(j) - 0.5 * c * c;
            }
        }
        acc
    }
}
