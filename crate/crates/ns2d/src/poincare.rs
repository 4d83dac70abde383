//! Truncated Poincare machinery: the smooth cutoff `chi_A` and the operator
//! norm of `f -> Q_N chi_A f` from `H^{1/2}` into `L^2`, estimated by power
//! iteration on the discretized operator.

use crate::basis::DivFreeBasis;
use crate::error::{Error, Result};
use crate::field::SpectralField;
use crate::grid::Grid;
use crate::rng::StreamKey;
use crate::spectral::leray_project;

/// Quintic smoothstep cutoff: identically 1 on `B(0, A)`, 0 outside
/// `B(0, 2A)`, C^2 across the transition annulus.
pub fn chi_a(r: f64, a: f64) -> f64 {
    debug_assert!(a > 0.0);
    if r <= a {
        1.0
    } else if r >= 2.0 * a {
        0.0
    } else {
        let u = (r - a) / a;
        1.0 - u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
    }
}

/// Cutoff sampled on the physical grid.
pub fn chi_a_grid(grid: &Grid, a: f64) -> Vec<f64> {
    let m = grid.resolution();
    let mut out = vec![0.0; grid.len()];
    for i in 0..m {
        for j in 0..m {
            let p = grid.point(i, j);
            out[grid.idx(i, j)] = chi_a((p[0] * p[0] + p[1] * p[1]).sqrt(), a);
        }
    }
    out
}

pub struct PoincareOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
    /// How many previous Lanczos vectors to reorthogonalize against
    /// (0 = all). Windowed reorthogonalization bounds memory on large grids;
    /// the top-eigenvalue estimate stays reliable.
    pub reorth_window: usize,
}

impl Default for PoincareOptions {
    fn default() -> Self {
        PoincareOptions { tolerance: 1e-8, max_iterations: 400, seed: 0x9e11, reorth_window: 0 }
    }
}

fn multiply_grid(f: &SpectralField, weights: &[f64]) -> SpectralField {
    let g = f.grid().clone();
    let phys = f.to_physical();
    let mut out = SpectralField::zero(&g);
    for c in 0..2 {
        let vals: Vec<f64> = (0..g.len()).map(|i| phys[c][i] * weights[i]).collect();
        *out.component_mut(c) = g.physical_to_spectral(&vals);
    }
    out
}

fn sobolev_smoothing(f: &SpectralField, s: f64) -> SpectralField {
    let g = f.grid().clone();
    let m = g.resolution();
    let mut out = f.clone();
    for i in 0..m {
        for j in 0..m {
            let mult = (1.0 + g.wavenumber_sq(i, j)).powf(-s / 2.0);
            let idx = g.idx(i, j);
            out.component_mut(0)[idx] *= mult;
            out.component_mut(1)[idx] *= mult;
        }
    }
    out
}

/// Largest eigenvalue of a symmetric tridiagonal matrix by bisection on the
/// Sturm sequence.
fn tridiag_top_eigenvalue(alpha: &[f64], beta: &[f64]) -> f64 {
    let n = alpha.len();
    if n == 1 {
        return alpha[0];
    }
    // Gershgorin upper/lower bounds
    let mut hi = f64::NEG_INFINITY;
    let mut lo = f64::INFINITY;
    for i in 0..n {
        let b_prev = if i > 0 { beta[i - 1].abs() } else { 0.0 };
        let b_next = if i < n - 1 { beta[i].abs() } else { 0.0 };
        hi = hi.max(alpha[i] + b_prev + b_next);
        lo = lo.min(alpha[i] - b_prev - b_next);
    }
    // count of eigenvalues < x via the Sturm sequence
    let count_below = |x: f64| -> usize {
        let mut count = 0;
        let mut d = alpha[0] - x;
        if d < 0.0 {
            count += 1;
        }
        for i in 1..n {
            let denom = if d == 0.0 { 1e-300 } else { d };
            d = alpha[i] - x - beta[i - 1] * beta[i - 1] / denom;
            if d < 0.0 {
                count += 1;
            }
        }
        count
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if count_below(mid) == n {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1e-300) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Operator norm of `f -> Q_N chi_A f` from `H^s` (divergence-free) to `L^2`.
///
/// `Q_N` is the complement of `P_N` inside the divergence-free space, so the
/// norm tends to zero as `N` exhausts the basis. The estimate is the square
/// root of the top eigenvalue of the associated self-adjoint operator,
/// computed by Lanczos iteration with full reorthogonalization (the spectrum
/// is clustered at the top, which defeats plain power iteration).
pub fn truncated_poincare_epsilon(
    basis: &DivFreeBasis,
    n: usize,
    a: f64,
    s: f64,
    opts: &PoincareOptions,
) -> Result<f64> {
    let grid = basis.grid().clone();
    if a <= 1.0 {
        return Err(Error::InvalidConfig(format!("cutoff radius must exceed 1, got {a}")));
    }
    if n > basis.len() {
        return Err(Error::InvalidConfig(format!("N = {n} exceeds basis size {}", basis.len())));
    }
    let chi = chi_a_grid(&grid, a);

    // K = S* T* T S with S = smoothing * Leray, T = Q_N chi_A
    let apply = |v: &SpectralField| -> SpectralField {
        let sv = sobolev_smoothing(&leray_project(v), s);
        let tv = basis.project_high(&multiply_grid(&sv, &chi), n).expect("validated N");
        sobolev_smoothing(&leray_project(&multiply_grid(&tv, &chi)), s)
    };

    let mut rng = StreamKey::from_seed(opts.seed).rng();
    let mut v = leray_project(&SpectralField::random_raw(&grid, &mut rng));
    let norm = v.l2_norm();
    if norm == 0.0 {
        return Err(Error::NonConvergence { what: "Lanczos start vector".into(), iterations: 0 });
    }
    v.scale(1.0 / norm);

    let mut vectors = vec![v];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut lambda_prev = f64::NAN;

    for it in 0..opts.max_iterations {
        let vj = vectors.last().unwrap().clone();
        let mut w = apply(&vj);
        if it > 0 {
            w.add_scaled(&vectors[vectors.len() - 2], -beta[it - 1]);
        }
        let a_j = w.inner(&vj);
        alpha.push(a_j);
        w.add_scaled(&vj, -a_j);
        // reorthogonalize against the kept window (all when window = 0)
        for prev in &vectors {
            let c = w.inner(prev);
            if c != 0.0 {
                w.add_scaled(prev, -c);
            }
        }
        let lambda = tridiag_top_eigenvalue(&alpha, &beta);
        if it > 0 {
            let delta = (lambda - lambda_prev).abs();
            if delta <= opts.tolerance * lambda.abs().max(1e-14) {
                return Ok(lambda.max(0.0).sqrt());
            }
        }
        lambda_prev = lambda;
        let b_j = w.l2_norm();
        if b_j <= 1e-14 * lambda.abs().max(1e-280).sqrt().max(1e-140) {
            // invariant subspace reached; the tridiagonal is exact
            return Ok(lambda.max(0.0).sqrt());
        }
        beta.push(b_j);
        w.scale(1.0 / b_j);
        vectors.push(w);
        if opts.reorth_window > 0 && vectors.len() > opts.reorth_window {
            vectors.remove(0);
        }
    }
    Err(Error::NonConvergence {
        what: "truncated Poincare Lanczos iteration".into(),
        iterations: opts.max_iterations,
    })
}

/// Minimal `N` on a doubling-then-bisecting search with
/// `epsilon(N) < target`. Returns `(N, epsilon(N))`.
pub fn min_order_for_epsilon(
    basis: &DivFreeBasis,
    target: f64,
    a: f64,
    s: f64,
    opts: &PoincareOptions,
) -> Result<(usize, f64)> {
    let full = basis.len();
    let mut hi = 2usize;
    let mut hi_eps = truncated_poincare_epsilon(basis, hi, a, s, opts)?;
    while hi_eps >= target {
        if hi >= full {
            return Err(Error::NonConvergence {
                what: format!("no N <= {full} reaches epsilon < {target}"),
                iterations: full,
            });
        }
        hi = (hi * 2).min(full);
        hi_eps = truncated_poincare_epsilon(basis, hi, a, s, opts)?;
    }
    let mut lo = hi / 2; // epsilon(lo) >= target (or lo < 2)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let eps = truncated_poincare_epsilon(basis, mid, a, s, opts)?;
        if eps < target {
            hi = mid;
            hi_eps = eps;
        } else {
            lo = mid;
        }
    }
    Ok((hi, hi_eps))
}
