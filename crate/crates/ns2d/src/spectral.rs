//! Fourier-space differential operators: Leray projection, curl, the
//! dealiased convection term, the pressure diagnostic, and Sobolev norms.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{ScalarField, SpectralField};

/// Orthogonal projection onto divergence-free fields.
///
/// Fourier symbol `I - k k^T / |k|^2`; the mean mode and Nyquist lines are
/// annihilated (they live outside the represented space).
pub fn leray_project(f: &SpectralField) -> SpectralField {
    let g = f.grid().clone();
    let m = g.resolution();
    let mut out = SpectralField::zero(&g);
    for i in 0..m {
        for j in 0..m {
            if g.is_nyquist(i) || g.is_nyquist(j) {
                continue;
            }
            let k = g.wavenumber(i, j);
            let ksq = k[0] * k[0] + k[1] * k[1];
            let idx = g.idx(i, j);
            if ksq == 0.0 {
                continue;
            }
            let u0 = f.component(0)[idx];
            let u1 = f.component(1)[idx];
            let kdotu = (u0 * k[0] + u1 * k[1]) / ksq;
            out.component_mut(0)[idx] = u0 - kdotu * k[0];
            out.component_mut(1)[idx] = u1 - kdotu * k[1];
        }
    }
    out
}

/// Scalar vorticity `w = curl u`, symbol `i (k1 u2 - k2 u1)`.
pub fn curl(u: &SpectralField) -> ScalarField {
    let g = u.grid().clone();
    let m = g.resolution();
    let mut out = ScalarField::zero(&g);
    for i in 0..m {
        for j in 0..m {
            let k = g.wavenumber(i, j);
            let idx = g.idx(i, j);
            let v = Complex64::i() * (u.component(1)[idx] * k[0] - u.component(0)[idx] * k[1]);
            out.coeffs_mut()[idx] = v;
        }
    }
    out
}

/// Perpendicular gradient `(-d2 s, d1 s)`: the divergence-free field whose
/// curl is `-Delta s`. Used to build velocity from a streamfunction.
pub fn perp_grad(s: &ScalarField) -> SpectralField {
    let g = s.grid().clone();
    let m = g.resolution();
    let mut out = SpectralField::zero(&g);
    for i in 0..m {
        for j in 0..m {
            let k = g.wavenumber(i, j);
            let idx = g.idx(i, j);
            let v = s.coeffs()[idx];
            out.component_mut(0)[idx] = -Complex64::i() * k[1] * v;
            out.component_mut(1)[idx] = Complex64::i() * k[0] * v;
        }
    }
    out
}

/// Zero every mode with `max(|n1|, |n2|)` beyond the dealias cutoff
/// (2/3-rule by default).
pub fn dealias(f: &mut SpectralField) {
    let g = f.grid().clone();
    let m = g.resolution();
    for i in 0..m {
        for j in 0..m {
            if !g.in_dealias_band(i, j) {
                let idx = g.idx(i, j);
                f.component_mut(0)[idx] = Complex64::ZERO;
                f.component_mut(1)[idx] = Complex64::ZERO;
            }
        }
    }
}

pub fn dealias_scalar(f: &mut ScalarField) {
    let g = f.grid().clone();
    let m = g.resolution();
    for i in 0..m {
        for j in 0..m {
            if !g.in_dealias_band(i, j) {
                let idx = g.idx(i, j);
                f.coeffs_mut()[idx] = Complex64::ZERO;
            }
        }
    }
}

/// Spectral derivative `d/dx_axis` of one velocity component.
fn derivative_coeffs(u: &SpectralField, comp: usize, axis: usize) -> Vec<Complex64> {
    let g = u.grid();
    let m = g.resolution();
    let mut out = vec![Complex64::ZERO; g.len()];
    for i in 0..m {
        for j in 0..m {
            let k = g.wavenumber(i, j);
            let idx = g.idx(i, j);
            out[idx] = Complex64::i() * k[axis] * u.component(comp)[idx];
        }
    }
    out
}

/// Projected convection term `Pi (u . grad) u`, computed pseudospectrally
/// with dealiasing. For band-limited divergence-free input the cancellation
/// `< Pi (u.grad)u, u > = 0` holds to roundoff.
pub fn nonlinear_term(u: &SpectralField) -> SpectralField {
    let g = u.grid().clone();
    let u_phys = u.to_physical();
    let mut conv = SpectralField::zero(&g);
    for comp in 0..2 {
        let dx = g.spectral_to_physical(&derivative_coeffs(u, comp, 0));
        let dy = g.spectral_to_physical(&derivative_coeffs(u, comp, 1));
        let vals: Vec<f64> = (0..g.len()).map(|idx| u_phys[0][idx] * dx[idx] + u_phys[1][idx] * dy[idx]).collect();
        *conv.component_mut(comp) = g.physical_to_spectral(&vals);
    }
    dealias(&mut conv);
    leray_project(&conv)
}

/// Convection term for a scalar `(u . grad) w`, dealiased.
pub fn scalar_advection(u: &SpectralField, w: &ScalarField) -> ScalarField {
    let g = u.grid().clone();
    let m = g.resolution();
    let u_phys = u.to_physical();
    let mut wx = vec![Complex64::ZERO; g.len()];
    let mut wy = vec![Complex64::ZERO; g.len()];
    for i in 0..m {
        for j in 0..m {
            let k = g.wavenumber(i, j);
            let idx = g.idx(i, j);
            wx[idx] = Complex64::i() * k[0] * w.coeffs()[idx];
            wy[idx] = Complex64::i() * k[1] * w.coeffs()[idx];
        }
    }
    let wx = g.spectral_to_physical(&wx);
    let wy = g.spectral_to_physical(&wy);
    let vals: Vec<f64> = (0..g.len()).map(|idx| u_phys[0][idx] * wx[idx] + u_phys[1][idx] * wy[idx]).collect();
    let mut out = ScalarField::from_physical(&g, &vals);
    dealias_scalar(&mut out);
    out
}

/// Pressure recovered from the velocity:
/// `p_hat = -(k_i k_j / |k|^2) F[u_i u_j]`, so that `-Delta p = div (u.grad)u`
/// holds in spectral space, with `p_hat(0) = 0`.
pub fn pressure_from_velocity(u: &SpectralField) -> ScalarField {
    let g = u.grid().clone();
    let m = g.resolution();
    let u_phys = u.to_physical();
    // F[u_i u_j] for (i,j) in {(0,0),(0,1),(1,1)}
    let prod = |a: usize, b: usize| -> Vec<Complex64> {
        let vals: Vec<f64> = (0..g.len()).map(|idx| u_phys[a][idx] * u_phys[b][idx]).collect();
        g.physical_to_spectral(&vals)
    };
    let p00 = prod(0, 0);
    let p01 = prod(0, 1);
    let p11 = prod(1, 1);
    let mut out = ScalarField::zero(&g);
    for i in 0..m {
        for j in 0..m {
            if g.is_nyquist(i) || g.is_nyquist(j) {
                continue;
            }
            let k = g.wavenumber(i, j);
            let ksq = k[0] * k[0] + k[1] * k[1];
            if ksq == 0.0 {
                continue;
            }
            let idx = g.idx(i, j);
            let num = k[0] * k[0] * p00[idx] + 2.0 * k[0] * k[1] * p01[idx] + k[1] * k[1] * p11[idx];
            out.coeffs_mut()[idx] = -num / ksq;
        }
    }
    out
}

/// Sobolev norm via the Fourier multiplier `(1 + |k|^2)^{s/2}`.
pub fn sobolev_norm(u: &SpectralField, s: f64) -> Result<f64> {
    if !s.is_finite() {
        return Err(Error::InvalidConfig(format!("sobolev exponent must be finite, got {s}")));
    }
    let g = u.grid();
    let m = g.resolution();
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            let idx = g.idx(i, j);
            let mult = (1.0 + g.wavenumber_sq(i, j)).powf(s);
            total += mult * (u.component(0)[idx].norm_sqr() + u.component(1)[idx].norm_sqr());
        }
    }
    Ok((g.area() * total).sqrt())
}

/// Laplacian `Delta u` (spectral multiplier `-|k|^2`).
pub fn laplacian(u: &SpectralField) -> SpectralField {
    let g = u.grid().clone();
    let m = g.resolution();
    let mut out = SpectralField::zero(&g);
    for i in 0..m {
        for j in 0..m {
            let ksq = g.wavenumber_sq(i, j);
            let idx = g.idx(i, j);
            out.component_mut(0)[idx] = -ksq * u.component(0)[idx];
            out.component_mut(1)[idx] = -ksq * u.component(1)[idx];
        }
    }
    out
}
