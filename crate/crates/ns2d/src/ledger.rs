//! Running evaluation of the energy functionals, martingales, quadratic
//! variations, and stopping times along one trajectory.
//!
//! Clock convention: the velocity family `E_p` lives on the direct clock
//! `t = step * dt`. Every vorticity and weighted term follows the one-unit
//! offset of the definitions (`psi(t)` weighs the field at `t + 1`), so those
//! families complete at ledger time `t` once the simulation reaches `t + 1`.
//! A ring buffer holds one unit of history to evaluate both clocks.

use std::collections::VecDeque;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::SpectralField;
use crate::noise::{NoiseSpec, WienerIncrement};
use crate::spectral::curl;
use crate::weights::WeightGrid;

/// Scalar norms of one snapshot, weighted terms against the lagged weight
/// `psi(t - 1)`. Computing this once per state per step lets several ledgers
/// share the FFT work.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormSnapshot {
    pub step: u64,
    pub l2_sq: f64,
    pub grad_sq: f64,
    pub w_l2_sq: f64,
    pub w_grad_sq: f64,
    pub psi_u_sq: f64,
    pub psi_grad_u_sq: f64,
    pub psi_w_sq: f64,
    pub psi_grad_w_sq: f64,
}

/// Computes the snapshot of `u` at `step`; `psi_lagged` must be the weight
/// grid at the lagged time `step * dt - 1` (or `None` before the offset).
pub fn norm_snapshot(u: &SpectralField, psi_lagged: Option<&WeightGrid>, step: u64) -> NormSnapshot {
    let w = curl(u);
    let mut snap = NormSnapshot {
        step,
        l2_sq: u.l2_norm_sq(),
        grad_sq: u.grad_norm_sq(),
        w_l2_sq: w.l2_norm_sq(),
        w_grad_sq: w.grad_norm_sq(),
        psi_u_sq: 0.0,
        psi_grad_u_sq: 0.0,
        psi_w_sq: 0.0,
        psi_grad_w_sq: 0.0,
    };
    if let Some(wg) = psi_lagged {
        let g = u.grid().clone();
        let m = g.resolution();
        snap.psi_u_sq = wg.weighted_norm_sq_vector(&u.to_physical());
        snap.psi_w_sq = wg.weighted_norm_sq(&w.values());
        let mut grad_u = 0.0;
        for comp in 0..2 {
            for axis in 0..2 {
                let mut c = vec![rustfft::num_complex::Complex64::ZERO; g.len()];
                for i in 0..m {
                    for j in 0..m {
                        let k = g.wavenumber(i, j);
                        let idx = g.idx(i, j);
                        c[idx] = rustfft::num_complex::Complex64::i() * k[axis] * u.component(comp)[idx];
                    }
                }
                grad_u += wg.weighted_norm_sq(&g.spectral_to_physical(&c));
            }
        }
        snap.psi_grad_u_sq = grad_u;
        let mut grad_w = 0.0;
        for axis in 0..2 {
            let mut c = vec![rustfft::num_complex::Complex64::ZERO; g.len()];
            for i in 0..m {
                for j in 0..m {
                    let k = g.wavenumber(i, j);
                    let idx = g.idx(i, j);
                    c[idx] = rustfft::num_complex::Complex64::i() * k[axis] * w.coeffs()[idx];
                }
            }
            grad_w += wg.weighted_norm_sq(&g.spectral_to_physical(&c));
        }
        snap.psi_grad_w_sq = grad_w;
    }
    snap
}

#[derive(Debug, Clone, Copy)]
struct RingEntry {
    step: u64,
    l2_sq: f64,
    grad_sq: f64,
    e: [f64; 3],
}

/// All energy functionals, martingales, and quadratic variations of one
/// trajectory.
#[derive(Debug, Clone)]
pub struct EnergyState {
    dt: f64,
    offset_steps: u64,
    u0_norm: f64,
    /// First fed step; all clocks count from here.
    origin: Option<u64>,
    last_step: Option<u64>,

    inst_p: [f64; 3],
    int_p: [f64; 3],
    prev_integrand_p: [f64; 3],

    ring: VecDeque<RingEntry>,
    lag_entry: Option<RingEntry>,

    inst_w: [f64; 2],
    int_w: [f64; 2],
    prev_integrand_w: [f64; 2],

    inst_psi_u: f64,
    int_psi_u: f64,
    prev_integrand_psi_u: f64,

    inst_psi_w: f64,
    int_psi_w: f64,
    prev_integrand_psi_w: f64,

    epsi_inst: f64,
    epsi_int: f64,
    prev_integrand_epsi: f64,

    m_p: [f64; 3],
    qv_p: [f64; 3],
    w1_norm_sq: Option<f64>,
}

impl EnergyState {
    /// `dt` must subdivide the unit offset exactly up to rounding; the
    /// offset in steps is `round(1/dt)`.
    pub fn new(u0_norm: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("ledger dt must be positive, got {dt}")));
        }
        let offset_steps = (1.0 / dt).round() as u64;
        if offset_steps == 0 || ((offset_steps as f64 * dt) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "dt = {dt} does not subdivide the unit weighted-offset"
            )));
        }
        Ok(EnergyState {
            dt,
            offset_steps,
            u0_norm,
            origin: None,
            last_step: None,
            inst_p: [0.0; 3],
            int_p: [0.0; 3],
            prev_integrand_p: [0.0; 3],
            ring: VecDeque::new(),
            lag_entry: None,
            inst_w: [0.0; 2],
            int_w: [0.0; 2],
            prev_integrand_w: [0.0; 2],
            inst_psi_u: 0.0,
            int_psi_u: 0.0,
            prev_integrand_psi_u: 0.0,
            inst_psi_w: 0.0,
            int_psi_w: 0.0,
            prev_integrand_psi_w: 0.0,
            epsi_inst: 0.0,
            epsi_int: 0.0,
            prev_integrand_epsi: 0.0,
            m_p: [0.0; 3],
            qv_p: [0.0; 3],
            w1_norm_sq: None,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn offset_steps(&self) -> u64 {
        self.offset_steps
    }

    pub fn u0_norm(&self) -> f64 {
        self.u0_norm
    }

    /// Direct-clock time of the last update.
    pub fn time(&self) -> f64 {
        self.last_step.unwrap_or(0) as f64 * self.dt
    }

    /// Lagged-clock time: the point up to which the weighted families are
    /// complete. `None` before the first unit of simulated time.
    pub fn lagged_time(&self) -> Option<f64> {
        self.lag_entry.as_ref().map(|e| e.step as f64 * self.dt)
    }

    /// `E_p(t) = ||u||^{2p} + int (||u||^{2p-2} ||grad u||^2 + ||u||^{2p})`.
    pub fn e_p(&self, p: usize) -> f64 {
        self.inst_p[p - 1] + self.int_p[p - 1]
    }

    /// `E_p` evaluated at the lagged clock, from the history ring.
    pub fn e_p_lagged(&self, p: usize) -> Option<f64> {
        self.lag_entry.as_ref().map(|e| e.e[p - 1])
    }

    /// Vorticity family `E_{1,p}(t)`, lagged clock.
    pub fn e_1p(&self, p: usize) -> f64 {
        self.inst_w[p - 1] + self.int_w[p - 1]
    }

    pub fn etilde_psi(&self) -> f64 {
        self.inst_psi_u + self.int_psi_u
    }

    pub fn etilde_1psi(&self) -> f64 {
        self.inst_psi_w + self.int_psi_w
    }

    /// The composite weighted functional, accumulated independently from its
    /// own integrand (not assembled from the parts).
    pub fn e_psi(&self) -> f64 {
        self.epsi_inst + self.epsi_int
    }

    /// The composite assembled from its five parts; agreement with `e_psi`
    /// is the ledger's internal consistency identity.
    pub fn e_psi_from_parts(&self) -> Option<f64> {
        let lag = self.lag_entry.as_ref()?;
        Some(lag.e[0] + lag.e[2] + self.etilde_psi() + self.e_1p(1) + self.etilde_1psi())
    }

    pub fn composite_residual(&self) -> Option<f64> {
        let parts = self.e_psi_from_parts()?;
        let direct = self.e_psi();
        Some((parts - direct).abs() / parts.abs().max(1e-30))
    }

    pub fn martingale(&self, p: usize) -> f64 {
        self.m_p[p - 1]
    }

    pub fn quadratic_variation(&self, p: usize) -> f64 {
        self.qv_p[p - 1]
    }

    /// `||w(1)||^2`, captured when the lagged clock starts.
    pub fn w1_norm_sq(&self) -> Option<f64> {
        self.w1_norm_sq
    }

    /// Extends all functionals with one snapshot. Snapshots must arrive in
    /// strictly increasing step order, on a stride dividing the unit offset;
    /// the first snapshot anchors the ledger's time origin.
    pub fn accumulate(&mut self, raw: &NormSnapshot) -> Result<()> {
        let origin = *self.origin.get_or_insert(raw.step);
        if raw.step < origin {
            return Err(Error::TimeRegression { ledger: origin, snapshot: raw.step });
        }
        let mut snap = *raw;
        snap.step = raw.step - origin;
        if let Some(last) = self.last_step {
            if snap.step <= last {
                return Err(Error::TimeRegression { ledger: last, snapshot: snap.step });
            }
        }
        let snap = &snap;
        let gap = self.last_step.map(|last| (snap.step - last) as f64 * self.dt);

        // direct-clock velocity family
        let mut integrand_p = [0.0; 3];
        for p in 1..=3usize {
            let pow_prev = if p == 1 { 1.0 } else { snap.l2_sq.powi(p as i32 - 1) };
            integrand_p[p - 1] = pow_prev * snap.grad_sq + snap.l2_sq.powi(p as i32);
        }
        if let Some(gap) = gap {
            for p in 0..3 {
                self.int_p[p] += 0.5 * gap * (self.prev_integrand_p[p] + integrand_p[p]);
            }
        }
        for p in 0..3 {
            self.prev_integrand_p[p] = integrand_p[p];
            self.inst_p[p] = snap.l2_sq.powi(p as i32 + 1);
        }
        self.ring.push_back(RingEntry {
            step: snap.step,
            l2_sq: snap.l2_sq,
            grad_sq: snap.grad_sq,
            e: [self.e_p(1), self.e_p(2), self.e_p(3)],
        });

        // lagged families start once a full offset of history exists
        if snap.step >= self.offset_steps {
            let target = snap.step - self.offset_steps;
            while self.ring.front().is_some_and(|e| e.step < target) {
                self.ring.pop_front();
            }
            let entry = match self.ring.front() {
                Some(e) if e.step == target => *e,
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "ledger stride does not subdivide the unit offset (missing step {target})"
                    )))
                }
            };

            let mut integrand_w = [0.0; 2];
            for p in 1..=2usize {
                let pow_prev = if p == 1 { 1.0 } else { snap.w_l2_sq.powi(p as i32 - 1) };
                integrand_w[p - 1] = pow_prev * snap.w_grad_sq + snap.w_l2_sq.powi(p as i32);
            }
            let integrand_psi_u = snap.psi_grad_u_sq + snap.psi_u_sq;
            let integrand_psi_w = snap.psi_grad_w_sq + snap.psi_w_sq;
            let integrand_epsi = (entry.l2_sq + entry.grad_sq)
                + entry.l2_sq * entry.l2_sq * entry.grad_sq
                + entry.l2_sq.powi(3)
                + (snap.w_l2_sq + snap.w_grad_sq)
                + integrand_psi_u
                + integrand_psi_w;

            if self.lag_entry.is_some() {
                let lag_gap = gap.expect("lagged update implies a previous update");
                for p in 0..2 {
                    self.int_w[p] += 0.5 * lag_gap * (self.prev_integrand_w[p] + integrand_w[p]);
                }
                self.int_psi_u += 0.5 * lag_gap * (self.prev_integrand_psi_u + integrand_psi_u);
                self.int_psi_w += 0.5 * lag_gap * (self.prev_integrand_psi_w + integrand_psi_w);
                self.epsi_int += 0.5 * lag_gap * (self.prev_integrand_epsi + integrand_epsi);
            } else {
                self.w1_norm_sq = Some(snap.w_l2_sq);
            }
            for p in 0..2 {
                self.prev_integrand_w[p] = integrand_w[p];
                self.inst_w[p] = snap.w_l2_sq.powi(p as i32 + 1);
            }
            self.prev_integrand_psi_u = integrand_psi_u;
            self.inst_psi_u = snap.psi_u_sq;
            self.prev_integrand_psi_w = integrand_psi_w;
            self.inst_psi_w = snap.psi_w_sq;
            self.prev_integrand_epsi = integrand_epsi;
            self.epsi_inst =
                entry.l2_sq + entry.l2_sq.powi(3) + snap.psi_u_sq + snap.w_l2_sq + snap.psi_w_sq;
            self.lag_entry = Some(entry);
        }

        self.last_step = Some(snap.step);
        Ok(())
    }

    /// Extends `M_p` and its quadratic variation by one step. `u` must be
    /// the state the increment was applied to (left endpoint), and the
    /// increments must arrive in the order the dynamics consumed them.
    pub fn update_martingale(
        &mut self,
        u: &SpectralField,
        spec: &NoiseSpec,
        incr: &WienerIncrement,
        p: usize,
    ) -> Result<()> {
        assert!((1..=3).contains(&p));
        if let Some(last) = self.last_step {
            if incr.step < last {
                return Err(Error::MismatchedStream { expected: last, got: incr.step });
            }
        }
        let l2_sq = u.l2_norm_sq();
        let sqrt_dt = incr.dt.sqrt();
        let mut noise_ip = 0.0; // sum_j b_j <u, e_j> d beta_j
        let mut qv_ip = 0.0; // sum_j b_j^2 <u, e_j>^2
        for j in 0..spec.modes() {
            let coord = spec.basis().coordinate(u, j);
            let b = spec.coefficient(j);
            noise_ip += b * coord * sqrt_dt * incr.coordinate(j);
            qv_ip += b * b * coord * coord;
        }
        let pf = p as f64;
        let weight = if p == 1 { 1.0 } else { l2_sq.powi(p as i32 - 1) };
        self.m_p[p - 1] += 2.0 * pf * weight * noise_ip;
        let qv_weight = if p == 1 { 1.0 } else { l2_sq.powi(2 * (p as i32 - 1)) };
        self.qv_p[p - 1] += 4.0 * pf * pf * qv_weight * qv_ip * incr.dt;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMode {
    Tau1,
    Tau2,
    Combined,
}

/// Threshold parameters of the stopping times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StoppingRule {
    pub k_rate: f64,
    pub l_rate: f64,
    pub rho: f64,
    pub c_script: f64,
    pub u0_norm: f64,
    pub mode: StopMode,
}

impl StoppingRule {
    /// `(K + 2L) t + 2 rho + C (1 + ||u0||^6)`
    pub fn tau1_threshold(&self, t: f64) -> f64 {
        (self.k_rate + 2.0 * self.l_rate) * t
            + 2.0 * self.rho
            + self.c_script * (1.0 + self.u0_norm.powi(6))
    }

    /// `(K + L) t + rho + C ||u0||^2`
    pub fn tau2_threshold(&self, t: f64) -> f64 {
        (self.k_rate + self.l_rate) * t + self.rho + self.c_script * self.u0_norm.powi(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopKind {
    Tau1,
    Tau2,
    Tau,
    TauD,
    Sigma,
    Sigma1,
}

/// A resolved stopping time; `value = None` is the not-triggered marker.
#[derive(Debug, Clone, Serialize)]
pub struct StoppingTimeRecord {
    pub kind: StopKind,
    pub value: Option<f64>,
    pub margin: f64,
    pub trigger_term: String,
}

impl StoppingTimeRecord {
    pub fn not_triggered(kind: StopKind) -> Self {
        StoppingTimeRecord { kind, value: None, margin: 0.0, trigger_term: String::new() }
    }
}

/// Momentary threshold check on the grid (no sub-step interpolation):
/// returns a record if a functional currently sits at or above its envelope.
pub fn check_stop(state: &EnergyState, rule: &StoppingRule) -> Option<StoppingTimeRecord> {
    let tau1 = || -> Option<StoppingTimeRecord> {
        let t = state.lagged_time()?;
        let value = state.e_psi();
        let thr = rule.tau1_threshold(t);
        (value >= thr).then(|| StoppingTimeRecord {
            kind: StopKind::Tau1,
            value: Some(t),
            margin: value - thr,
            trigger_term: "E_psi".into(),
        })
    };
    let tau2 = || -> Option<StoppingTimeRecord> {
        let t = state.time();
        let value = state.e_p(1);
        let thr = rule.tau2_threshold(t);
        (value >= thr).then(|| StoppingTimeRecord {
            kind: StopKind::Tau2,
            value: Some(t),
            margin: value - thr,
            trigger_term: "E_1".into(),
        })
    };
    match rule.mode {
        StopMode::Tau1 => tau1(),
        StopMode::Tau2 => tau2(),
        StopMode::Combined => match (tau1(), tau2()) {
            (Some(a), Some(b)) => {
                // both triggered: the earlier clock wins (tie -> tau2, whose
                // clock runs ahead)
                let rec = if a.value <= b.value { a } else { b };
                Some(StoppingTimeRecord { kind: StopKind::Tau, ..rec })
            }
            (Some(a), None) => Some(StoppingTimeRecord { kind: StopKind::Tau, ..a }),
            (None, Some(b)) => Some(StoppingTimeRecord { kind: StopKind::Tau, ..b }),
            (None, None) => None,
        },
    }
}

/// Keeps the first trigger seen along a trajectory.
#[derive(Debug, Clone)]
pub struct StopTracker {
    pub rule: StoppingRule,
    record: Option<StoppingTimeRecord>,
}

impl StopTracker {
    pub fn new(rule: StoppingRule) -> Self {
        StopTracker { rule, record: None }
    }

    pub fn observe(&mut self, state: &EnergyState) {
        if self.record.is_none() {
            self.record = check_stop(state, &self.rule);
        }
    }

    pub fn triggered(&self) -> bool {
        self.record.is_some()
    }

    pub fn record(&self) -> Option<&StoppingTimeRecord> {
        self.record.as_ref()
    }
}

/// First block index `k` with both components of the pair inside the closed
/// `d`-ball at time `kT`. Input: `(||u(kT)||, ||u'(kT)||)` per block.
pub fn recurrence_time(pair_path: &[(f64, f64)], d: f64, t_block: f64) -> StoppingTimeRecord {
    for (k, &(a, b)) in pair_path.iter().enumerate() {
        if a <= d && b <= d {
            return StoppingTimeRecord {
                kind: StopKind::TauD,
                value: Some(k as f64),
                margin: d - a.max(b),
                trigger_term: format!("|u|={a:.6e} |u'|={b:.6e} at t={:.6e}", k as f64 * t_block),
            };
        }
    }
    StoppingTimeRecord::not_triggered(StopKind::TauD)
}
