//! Ordered real divergence-free Fourier basis and the low-mode projectors.
//!
//! Each half-lattice wavevector `k = (pi/L) n` carries two orthonormal basis
//! fields `sin(k.x) d` and `cos(k.x) d` with `d = k_perp / |k|`. Slots are
//! ordered by `|k|^2`, ties broken lexicographically by `(n1, n2)` with sin
//! before cos, so `P_N` is a spectral low-mode projector.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::SpectralField;
use crate::grid::Grid;
use crate::spectral::leray_project;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trig {
    Sin,
    Cos,
}

#[derive(Debug, Clone, Copy)]
pub struct BasisSlot {
    /// Integer frequency pair in the half lattice (`n1 > 0`, or `n1 == 0 && n2 > 0`).
    pub n: (i64, i64),
    pub trig: Trig,
}

#[derive(Debug, Clone)]
pub struct DivFreeBasis {
    grid: Grid,
    slots: Vec<BasisSlot>,
}

impl DivFreeBasis {
    /// Builds the full ordered basis over all non-Nyquist lattice modes.
    pub fn new(grid: &Grid) -> Self {
        let half = grid.resolution() as i64 / 2;
        let mut vecs = Vec::new();
        for n1 in -(half - 1)..half {
            for n2 in -(half - 1)..half {
                if n1 > 0 || (n1 == 0 && n2 > 0) {
                    vecs.push((n1, n2));
                }
            }
        }
        vecs.sort_by_key(|&(a, b)| (a * a + b * b, a, b));
        let mut slots = Vec::with_capacity(2 * vecs.len());
        for n in vecs {
            slots.push(BasisSlot { n, trig: Trig::Sin });
            slots.push(BasisSlot { n, trig: Trig::Cos });
        }
        DivFreeBasis { grid: grid.clone(), slots }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Slot by zero-based index.
    pub fn slot(&self, j: usize) -> &BasisSlot {
        &self.slots[j]
    }

    /// Unit direction `k_perp / |k|` of the slot's wavevector.
    fn direction(slot: &BasisSlot) -> [f64; 2] {
        let (n1, n2) = (slot.n.0 as f64, slot.n.1 as f64);
        let norm = (n1 * n1 + n2 * n2).sqrt();
        [-n2 / norm, n1 / norm]
    }

    /// Sign relating the FFT basis `exp(2 pi i n m / M)` to the physical wave
    /// `exp(i k . x)` on `[-L, L)`.
    fn phase(slot: &BasisSlot) -> f64 {
        if (slot.n.0 + slot.n.1) % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    fn amplitude(&self) -> f64 {
        1.0 / (std::f64::consts::SQRT_2 * self.grid.half_width())
    }

    /// `<u, e_j>` in the discrete L2 inner product.
    pub fn coordinate(&self, u: &SpectralField, j: usize) -> f64 {
        let slot = &self.slots[j];
        let g = &self.grid;
        let idx = g.idx(g.index_of_freq(slot.n.0), g.index_of_freq(slot.n.1));
        let d = Self::direction(slot);
        let alpha = u.component(0)[idx] * d[0] + u.component(1)[idx] * d[1];
        let scale = Self::phase(slot) * g.area() * self.amplitude();
        match slot.trig {
            Trig::Sin => -scale * alpha.im,
            Trig::Cos => scale * alpha.re,
        }
    }

    pub fn coordinates(&self, u: &SpectralField, count: usize) -> Vec<f64> {
        (0..count.min(self.len())).map(|j| self.coordinate(u, j)).collect()
    }

    /// `out += gamma * e_j`.
    pub fn inject(&self, out: &mut SpectralField, j: usize, gamma: f64) {
        if gamma == 0.0 {
            return;
        }
        let slot = &self.slots[j];
        let g = self.grid.clone();
        let d = Self::direction(slot);
        let half_amp = 0.5 * self.amplitude() * Self::phase(slot) * gamma;
        let plus = match slot.trig {
            Trig::Sin => Complex64::new(0.0, -half_amp),
            Trig::Cos => Complex64::new(half_amp, 0.0),
        };
        let a = g.idx(g.index_of_freq(slot.n.0), g.index_of_freq(slot.n.1));
        let b = g.idx(g.index_of_freq(-slot.n.0), g.index_of_freq(-slot.n.1));
        out.component_mut(0)[a] += plus * d[0];
        out.component_mut(1)[a] += plus * d[1];
        out.component_mut(0)[b] += plus.conj() * d[0];
        out.component_mut(1)[b] += plus.conj() * d[1];
    }

    /// Basis field `e_j` materialized.
    pub fn field(&self, j: usize) -> SpectralField {
        let mut out = SpectralField::zero(&self.grid);
        self.inject(&mut out, j, 1.0);
        out
    }

    /// Analytic physical value of `e_j` at an arbitrary point.
    pub fn physical_value(&self, j: usize, x: [f64; 2]) -> [f64; 2] {
        let slot = &self.slots[j];
        let g = &self.grid;
        let k = [
            std::f64::consts::PI / g.half_width() * slot.n.0 as f64,
            std::f64::consts::PI / g.half_width() * slot.n.1 as f64,
        ];
        let d = Self::direction(slot);
        let phase = k[0] * x[0] + k[1] * x[1];
        let trig = match slot.trig {
            Trig::Sin => phase.sin(),
            Trig::Cos => phase.cos(),
        };
        let c = self.amplitude() * trig;
        [c * d[0], c * d[1]]
    }

    /// `|k|` of the slot's wavevector (the curl of the slot field has L2 norm `|k|`).
    pub fn wavenumber_norm(&self, j: usize) -> f64 {
        let slot = &self.slots[j];
        let (n1, n2) = (slot.n.0 as f64, slot.n.1 as f64);
        (n1 * n1 + n2 * n2).sqrt() * std::f64::consts::PI / self.grid.half_width()
    }

    fn check_count(&self, n: usize) -> Result<()> {
        if n > self.len() {
            return Err(Error::InvalidConfig(format!(
                "projector order {n} exceeds basis size {}",
                self.len()
            )));
        }
        Ok(())
    }

    /// `P_N u`: keep the first `n` basis coordinates.
    pub fn project_low(&self, u: &SpectralField, n: usize) -> Result<SpectralField> {
        self.check_count(n)?;
        let mut out = SpectralField::zero(&self.grid);
        for j in 0..n {
            let gamma = self.coordinate(u, j);
            self.inject(&mut out, j, gamma);
        }
        Ok(out)
    }

    /// `Q_N u = Pi u - P_N u`: the complement of `P_N` inside the
    /// divergence-free space.
    pub fn project_high(&self, u: &SpectralField, n: usize) -> Result<SpectralField> {
        let low = self.project_low(u, n)?;
        let mut out = leray_project(u);
        out.add_scaled(&low, -1.0);
        Ok(out)
    }
}
