//! Periodic-box discretization of the plane.
//!
//! The box is `[-L, L)^2` sampled on an `M x M` grid. Spectral data lives on
//! the integer frequency lattice in standard FFT order; the physical
//! wavenumber of the integer pair `n` is `(pi/L) * n`. Nyquist lines
//! (`n = -M/2`) have no Hermitian partner on an even grid and are kept empty
//! by every operator.

use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

struct GridInner {
    half_width: f64,
    resolution: usize,
    dealias_fraction: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

/// Shared, immutable grid handle. Cloning is cheap; FFT plans are reused.
#[derive(Clone)]
pub struct Grid {
    inner: Arc<GridInner>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("half_width", &self.inner.half_width)
            .field("resolution", &self.inner.resolution)
            .field("dealias_fraction", &self.inner.dealias_fraction)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.inner.half_width == other.inner.half_width
            && self.inner.resolution == other.inner.resolution
            && self.inner.dealias_fraction == other.inner.dealias_fraction
    }
}

impl Grid {
    pub fn new(half_width: f64, resolution: usize) -> Result<Grid> {
        Grid::with_dealias(half_width, resolution, 2.0 / 3.0)
    }

    pub fn with_dealias(half_width: f64, resolution: usize, dealias_fraction: f64) -> Result<Grid> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidConfig(format!("half_width must be positive, got {half_width}")));
        }
        if resolution < 16 || resolution % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "resolution must be even and >= 16, got {resolution}"
            )));
        }
        if !(dealias_fraction > 0.0 && dealias_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "dealias_fraction must lie in (0, 1], got {dealias_fraction}"
            )));
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(resolution);
        let inv = planner.plan_fft_inverse(resolution);
        Ok(Grid {
            inner: Arc::new(GridInner { half_width, resolution, dealias_fraction, fwd, inv }),
        })
    }

    pub fn half_width(&self) -> f64 {
        self.inner.half_width
    }

    pub fn resolution(&self) -> usize {
        self.inner.resolution
    }

    pub fn dealias_fraction(&self) -> f64 {
        self.inner.dealias_fraction
    }

    /// Physical grid spacing `2L / M`.
    pub fn spacing(&self) -> f64 {
        2.0 * self.inner.half_width / self.inner.resolution as f64
    }

    /// Quadrature weight per cell, `dx^2`.
    pub fn cell_weight(&self) -> f64 {
        let dx = self.spacing();
        dx * dx
    }

    /// Box area `(2L)^2`; also the Parseval factor between spectral sums and
    /// physical-space integrals.
    pub fn area(&self) -> f64 {
        let s = 2.0 * self.inner.half_width;
        s * s
    }

    pub fn len(&self) -> usize {
        self.inner.resolution * self.inner.resolution
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.inner.resolution + j
    }

    /// Integer frequency of FFT index `i`, in `[-M/2, M/2)`.
    #[inline]
    pub fn freq(&self, i: usize) -> i64 {
        let m = self.inner.resolution;
        if i < m / 2 {
            i as i64
        } else {
            i as i64 - m as i64
        }
    }

    /// FFT index of the integer frequency `n` in `[-M/2, M/2)`.
    #[inline]
    pub fn index_of_freq(&self, n: i64) -> usize {
        let m = self.inner.resolution as i64;
        debug_assert!(n >= -m / 2 && n < m / 2);
        if n >= 0 {
            n as usize
        } else {
            (n + m) as usize
        }
    }

    /// Physical wavenumber vector at lattice position `(i, j)`.
    #[inline]
    pub fn wavenumber(&self, i: usize, j: usize) -> [f64; 2] {
        let scale = std::f64::consts::PI / self.inner.half_width;
        [self.freq(i) as f64 * scale, self.freq(j) as f64 * scale]
    }

    #[inline]
    pub fn wavenumber_sq(&self, i: usize, j: usize) -> f64 {
        let k = self.wavenumber(i, j);
        k[0] * k[0] + k[1] * k[1]
    }

    /// Physical point at grid position `(i, j)`.
    #[inline]
    pub fn point(&self, i: usize, j: usize) -> [f64; 2] {
        let dx = self.spacing();
        [-self.inner.half_width + i as f64 * dx, -self.inner.half_width + j as f64 * dx]
    }

    #[inline]
    pub fn is_nyquist(&self, i: usize) -> bool {
        self.freq(i) == -(self.inner.resolution as i64) / 2
    }

    /// Largest retained integer frequency under the dealias rule.
    pub fn dealias_cutoff(&self) -> i64 {
        let half = self.inner.resolution as f64 / 2.0;
        (self.inner.dealias_fraction * half + 1e-12).floor() as i64
    }

    #[inline]
    pub fn in_dealias_band(&self, i: usize, j: usize) -> bool {
        let c = self.dealias_cutoff();
        self.freq(i).abs() <= c && self.freq(j).abs() <= c && !self.is_nyquist(i) && !self.is_nyquist(j)
    }

    /// Unnormalized forward 2D FFT in place (rows then columns).
    pub fn fft2(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inner.fwd);
    }

    /// Unnormalized inverse 2D FFT in place.
    pub fn ifft2(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inner.inv);
    }

    fn transform(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let m = self.inner.resolution;
        assert_eq!(data.len(), m * m, "buffer does not match grid size");
        // rows are contiguous
        plan.process(data);
        // columns via transpose
        transpose_square(data, m);
        plan.process(data);
        transpose_square(data, m);
    }

    /// Physical samples -> Fourier coefficients (forward FFT scaled by 1/M^2).
    pub fn physical_to_spectral(&self, values: &[f64]) -> Vec<Complex64> {
        let m = self.inner.resolution;
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft2(&mut buf);
        let scale = 1.0 / (m * m) as f64;
        for c in &mut buf {
            *c *= scale;
        }
        buf
    }

    /// Fourier coefficients -> physical samples (unnormalized inverse, real part).
    pub fn spectral_to_physical(&self, coeffs: &[Complex64]) -> Vec<f64> {
        let mut buf = coeffs.to_vec();
        self.ifft2(&mut buf);
        buf.iter().map(|c| c.re).collect()
    }
}

fn transpose_square(data: &mut [Complex64], m: usize) {
    for i in 0..m {
        for j in (i + 1)..m {
            data.swap(i * m + j, j * m + i);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_parameters() {
        assert!(Grid::new(0.0, 32).is_err());
        assert!(Grid::new(1.0, 15).is_err());
        assert!(Grid::new(1.0, 14).is_err());
        assert!(Grid::with_dealias(1.0, 32, 0.0).is_err());
        assert!(Grid::with_dealias(1.0, 32, 1.5).is_err());
    }

    #[test]
    fn freq_layout_symmetric() {
        let g = Grid::new(std::f64::consts::PI, 16).unwrap();
        assert_eq!(g.freq(0), 0);
        assert_eq!(g.freq(1), 1);
        assert_eq!(g.freq(7), 7);
        assert_eq!(g.freq(8), -8);
        assert_eq!(g.freq(15), -1);
        assert!(g.is_nyquist(8));
        assert_eq!(g.index_of_freq(-1), 15);
        assert_eq!(g.index_of_freq(3), 3);
    }

    #[test]
    fn fft_round_trip() {
        let g = Grid::new(1.5, 16).unwrap();
        let m = g.resolution();
        let mut vals = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                let p = g.point(i, j);
                vals[g.idx(i, j)] = (p[0] * 2.1).sin() + (p[1] * 0.3).cos() * p[0];
            }
        }
        let spec = g.physical_to_spectral(&vals);
        let back = g.spectral_to_physical(&spec);
        for (a, b) in vals.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn pure_wave_lands_on_single_mode() {
        // u(x) = cos(k.x) with k = (pi/L) n must populate exactly +/- n.
        let l = 2.0;
        let g = Grid::new(l, 16).unwrap();
        let m = g.resolution();
        let n = (3i64, -2i64);
        let k = [std::f64::consts::PI / l * n.0 as f64, std::f64::consts::PI / l * n.1 as f64];
        let mut vals = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                let p = g.point(i, j);
                vals[g.idx(i, j)] = (k[0] * p[0] + k[1] * p[1]).cos();
            }
        }
        let spec = g.physical_to_spectral(&vals);
        let at = spec[g.idx(g.index_of_freq(n.0), g.index_of_freq(n.1))];
        let mirror = spec[g.idx(g.index_of_freq(-n.0), g.index_of_freq(-n.1))];
        assert!((at.norm() - 0.5).abs() < 1e-12);
        assert!((mirror - at.conj()).norm() < 1e-12);
        let total: f64 = spec.iter().map(|c| c.norm_sqr()).sum();
        assert!((total - 2.0 * 0.25).abs() < 1e-12);
    }

    #[test]
    fn dealias_cutoff_two_thirds() {
        let g = Grid::new(1.0, 64).unwrap();
        assert_eq!(g.dealias_cutoff(), 21);
        assert!(g.in_dealias_band(21, 0));
        assert!(!g.in_dealias_band(22, 0));
    }
}
