//! Velocity and scalar fields stored as Fourier coefficients.
//!
//! A `SpectralField` is a two-component vector field, real in physical space
//! (Hermitian coefficient symmetry), with zero mean mode; after Leray
//! projection it is divergence-free. `ScalarField` carries vorticity and
//! pressure.

use rustfft::num_complex::Complex64;

use crate::grid::Grid;
use crate::rng::CounterRng;

/// Divergence-free velocity field as Fourier coefficients `(u1_hat, u2_hat)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: Grid,
    coeffs: [Vec<Complex64>; 2],
}

/// Scalar field (vorticity, pressure) as Fourier coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zero(grid: &Grid) -> Self {
        let n = grid.len();
        SpectralField { grid: grid.clone(), coeffs: [vec![Complex64::ZERO; n], vec![Complex64::ZERO; n]] }
    }

    pub fn from_coeffs(grid: &Grid, coeffs: [Vec<Complex64>; 2]) -> Self {
        assert_eq!(coeffs[0].len(), grid.len());
        assert_eq!(coeffs[1].len(), grid.len());
        SpectralField { grid: grid.clone(), coeffs }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn component(&self, c: usize) -> &[Complex64] {
        &self.coeffs[c]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut Vec<Complex64> {
        &mut self.coeffs[c]
    }

    pub fn coeff(&self, c: usize, i: usize, j: usize) -> Complex64 {
        self.coeffs[c][self.grid.idx(i, j)]
    }

    pub fn set_coeff(&mut self, c: usize, i: usize, j: usize, v: Complex64) {
        let idx = self.grid.idx(i, j);
        self.coeffs[c][idx] = v;
    }

    /// L2 norm via Parseval: `(2L)^2 * sum |u_hat|^2`.
    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_sq().sqrt()
    }

    pub fn l2_norm_sq(&self) -> f64 {
        let s: f64 = self.coeffs[0].iter().chain(self.coeffs[1].iter()).map(|c| c.norm_sqr()).sum();
        self.grid.area() * s
    }

    /// `|| |grad u| ||_{L2}`, the H1 seminorm.
    pub fn grad_norm_sq(&self) -> f64 {
        let g = &self.grid;
        let m = g.resolution();
        let mut s = 0.0;
        for i in 0..m {
            for j in 0..m {
                let ksq = g.wavenumber_sq(i, j);
                let idx = g.idx(i, j);
                s += ksq * (self.coeffs[0][idx].norm_sqr() + self.coeffs[1][idx].norm_sqr());
            }
        }
        g.area() * s
    }

    pub fn h1_norm_sq(&self) -> f64 {
        self.l2_norm_sq() + self.grad_norm_sq()
    }

    /// Real L2 inner product.
    pub fn inner(&self, other: &SpectralField) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        let mut s = Complex64::ZERO;
        for c in 0..2 {
            for (a, b) in self.coeffs[c].iter().zip(other.coeffs[c].iter()) {
                s += a * b.conj();
            }
        }
        self.grid.area() * s.re
    }

    pub fn scale(&mut self, factor: f64) {
        for c in 0..2 {
            for v in &mut self.coeffs[c] {
                *v *= factor;
            }
        }
    }

    pub fn add_scaled(&mut self, other: &SpectralField, factor: f64) {
        debug_assert_eq!(self.grid, other.grid);
        for c in 0..2 {
            for (a, b) in self.coeffs[c].iter_mut().zip(other.coeffs[c].iter()) {
                *a += b * factor;
            }
        }
    }

    pub fn sub(&self, other: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out.add_scaled(other, -1.0);
        out
    }

    pub fn add(&self, other: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out.add_scaled(other, 1.0);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.iter().all(|v| v.re.is_finite() && v.im.is_finite()))
    }

    /// Largest divergence residual `|k . u_hat|` over the lattice.
    pub fn max_divergence(&self) -> f64 {
        let g = &self.grid;
        let m = g.resolution();
        let mut worst = 0.0f64;
        for i in 0..m {
            for j in 0..m {
                let k = g.wavenumber(i, j);
                let idx = g.idx(i, j);
                let d = self.coeffs[0][idx] * k[0] + self.coeffs[1][idx] * k[1];
                worst = worst.max(d.norm());
            }
        }
        worst
    }

    pub fn max_coeff(&self) -> f64 {
        self.coeffs
            .iter()
            .flat_map(|c| c.iter())
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }

    /// Physical samples of both components.
    pub fn to_physical(&self) -> [Vec<f64>; 2] {
        [
            self.grid.spectral_to_physical(&self.coeffs[0]),
            self.grid.spectral_to_physical(&self.coeffs[1]),
        ]
    }

    /// Enforce Hermitian symmetry, zero mean, and empty Nyquist lines.
    pub fn enforce_reality(&mut self) {
        let g = self.grid.clone();
        let m = g.resolution();
        for c in 0..2 {
            self.coeffs[c][0] = Complex64::ZERO;
            for i in 0..m {
                if g.is_nyquist(i) {
                    for j in 0..m {
                        let idx = g.idx(i, j);
                        self.coeffs[c][idx] = Complex64::ZERO;
                        let jdx = g.idx(j, i);
                        self.coeffs[c][jdx] = Complex64::ZERO;
                    }
                }
            }
            for i in 0..m {
                let ni = g.freq(i);
                if g.is_nyquist(i) {
                    continue;
                }
                for j in 0..m {
                    let nj = g.freq(j);
                    if g.is_nyquist(j) {
                        continue;
                    }
                    // visit each +/- pair once
                    if (ni, nj) <= (-ni, -nj) {
                        continue;
                    }
                    let a = g.idx(i, j);
                    let b = g.idx(g.index_of_freq(-ni), g.index_of_freq(-nj));
                    let avg = 0.5 * (self.coeffs[c][a] + self.coeffs[c][b].conj());
                    self.coeffs[c][a] = avg;
                    self.coeffs[c][b] = avg.conj();
                }
            }
        }
    }

    /// Largest Hermitian-symmetry violation `|u(-k) - conj(u(k))|`.
    pub fn hermitian_residual(&self) -> f64 {
        let g = &self.grid;
        let m = g.resolution();
        let mut worst = 0.0f64;
        for c in 0..2 {
            for i in 0..m {
                if g.is_nyquist(i) {
                    continue;
                }
                for j in 0..m {
                    if g.is_nyquist(j) {
                        continue;
                    }
                    let a = g.idx(i, j);
                    let b = g.idx(g.index_of_freq(-g.freq(i)), g.index_of_freq(-g.freq(j)));
                    worst = worst.max((self.coeffs[c][a] - self.coeffs[c][b].conj()).norm());
                }
            }
        }
        worst
    }

    /// Random raw (not divergence-free) real field with smooth spectral decay,
    /// supported inside the dealias band.
    pub fn random_raw(grid: &Grid, rng: &mut CounterRng) -> SpectralField {
        let mut f = SpectralField::zero(grid);
        let m = grid.resolution();
        for c in 0..2 {
            for i in 0..m {
                for j in 0..m {
                    if !grid.in_dealias_band(i, j) {
                        continue;
                    }
                    let (ni, nj) = (grid.freq(i), grid.freq(j));
                    // fill only the upper half lattice; the mirror is set below
                    if !(ni > 0 || (ni == 0 && nj > 0)) {
                        continue;
                    }
                    let nsq = (ni * ni + nj * nj) as f64;
                    let amp = 1.0 / (1.0 + nsq);
                    let re = rng.standard_normal().expect("rng");
                    let im = rng.standard_normal().expect("rng");
                    let v = Complex64::new(re * amp, im * amp);
                    let a = grid.idx(i, j);
                    let b = grid.idx(grid.index_of_freq(-ni), grid.index_of_freq(-nj));
                    f.coeffs[c][a] = v;
                    f.coeffs[c][b] = v.conj();
                }
            }
        }
        f
    }
}

impl ScalarField {
    pub fn zero(grid: &Grid) -> Self {
        ScalarField { grid: grid.clone(), coeffs: vec![Complex64::ZERO; grid.len()] }
    }

    pub fn from_coeffs(grid: &Grid, coeffs: Vec<Complex64>) -> Self {
        assert_eq!(coeffs.len(), grid.len());
        ScalarField { grid: grid.clone(), coeffs }
    }

    pub fn from_physical(grid: &Grid, values: &[f64]) -> Self {
        ScalarField { grid: grid.clone(), coeffs: grid.physical_to_spectral(values) }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut Vec<Complex64> {
        &mut self.coeffs
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_sq().sqrt()
    }

    pub fn l2_norm_sq(&self) -> f64 {
        let s: f64 = self.coeffs.iter().map(|c| c.norm_sqr()).sum();
        self.grid.area() * s
    }

    pub fn grad_norm_sq(&self) -> f64 {
        let g = &self.grid;
        let m = g.resolution();
        let mut s = 0.0;
        for i in 0..m {
            for j in 0..m {
                s += g.wavenumber_sq(i, j) * self.coeffs[g.idx(i, j)].norm_sqr();
            }
        }
        g.area() * s
    }

    pub fn h1_norm_sq(&self) -> f64 {
        self.l2_norm_sq() + self.grad_norm_sq()
    }

    pub fn inner(&self, other: &ScalarField) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        let s: Complex64 = self.coeffs.iter().zip(other.coeffs.iter()).map(|(a, b)| a * b.conj()).sum();
        self.grid.area() * s.re
    }

    pub fn add_scaled(&mut self, other: &ScalarField, factor: f64) {
        debug_assert_eq!(self.grid, other.grid);
        for (a, b) in self.coeffs.iter_mut().zip(other.coeffs.iter()) {
            *a += b * factor;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.coeffs {
            *v *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Physical samples on the grid.
    pub fn values(&self) -> Vec<f64> {
        self.grid.spectral_to_physical(&self.coeffs)
    }

    /// Physical-space quadrature of the samples (cell-weight rule).
    pub fn integral(&self) -> f64 {
        let vals = self.values();
        vals.iter().sum::<f64>() * self.grid.cell_weight()
    }
}
