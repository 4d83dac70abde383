//! The coupled-pair machinery: exact gamma-coupling of per-step Gaussian
//! increments, the Girsanov drift with its truncation freeze, Novikov
//! accounting, and the block-structured evolution of the extension pair.
//!
//! The path measures are coupled stepwise: each step couples the
//! low-mode Gaussian increments of the drifted flow and the plain flow
//! maximally and shares the remaining modes. The composed disagreement
//! probability upper-bounds the path total variation, which is the quantity
//! the squeezing analysis consumes. This stepwise construction is the
//! central approximation of the engine; disagreement is detected exactly
//! because agreeing draws reuse the same values.

use serde::{Deserialize, Serialize};

use crate::dynamics::{relative_drift, step_primal, IntegratorConfig};
use crate::error::{Error, Result};
use crate::field::SpectralField;
use crate::ledger::{
    norm_snapshot, EnergyState, NormSnapshot, StopKind, StopMode, StopTracker, StoppingRule,
    StoppingTimeRecord,
};
use crate::noise::{NoiseSpec, WienerIncrement};
use crate::rng::{CounterRng, StreamKey};
use crate::stats::gaussian_tv_equal_var;
use crate::weights::WeightGrid;

/// Parameters of the coupled-pair engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingConfig {
    /// Order of the low-mode projector in the control and the drift.
    pub n_couple: usize,
    /// Block length `T`.
    pub t_block: f64,
    /// Initial pair separation used by experiment drivers.
    pub d_init: f64,
    /// Stopping-rule rates and offsets shared by all ledgers.
    pub k_rate: f64,
    pub l_rate: f64,
    pub rho: f64,
    pub c_script: f64,
    /// Flag (not abort) when the Novikov accumulator exceeds this cap.
    pub novikov_cap: f64,
    /// Steps between ledger updates (must divide the unit offset).
    pub ledger_stride: usize,
    /// Track the psi-weighted ledger terms (several FFTs per step).
    pub track_weighted: bool,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        CouplingConfig {
            n_couple: 16,
            t_block: 1.0,
            d_init: 0.1,
            k_rate: 10.0,
            l_rate: 1.0,
            rho: 1e6,
            c_script: 10.0,
            novikov_cap: 1e8,
            ledger_stride: 1,
            track_weighted: true,
        }
    }
}

/// Girsanov drift of the coupling:
/// zero once the truncation flag is set, otherwise
/// `-P_N [ Pi(u.grad)u - Pi(v.grad)v - nu Delta(u - v) ]` from the
/// (truncated) pair.
pub fn girsanov_drift(
    u_hat: &SpectralField,
    v_hat: &SpectralField,
    spec: &NoiseSpec,
    n: usize,
    nu: f64,
    truncated: bool,
) -> Result<SpectralField> {
    if truncated {
        return Ok(SpectralField::zero(spec.grid()));
    }
    relative_drift(u_hat, v_hat, spec.basis(), n, nu)
}

/// TV bound from the Girsanov exponential moment:
/// `0.5 (sqrt(E exp(6 sup b_j^{-2} J)) - 1)^{1/2}`, evaluated with the
/// plug-in `exp(6 J / b_min^2)` and clipped to [0, 1].
pub fn tv_bound_from_novikov(j_novikov: f64, b_min: f64, _n: usize) -> Result<f64> {
    if b_min == 0.0 {
        return Err(Error::DegenerateMode { mode: 0 });
    }
    if j_novikov < 0.0 {
        return Err(Error::InvalidConfig(format!("Novikov integral must be >= 0, got {j_novikov}")));
    }
    let exponent = 6.0 * j_novikov / (b_min * b_min);
    if exponent > 1400.0 {
        return Ok(1.0); // exp overflows; the bound saturates
    }
    let inner = (exponent.exp().sqrt() - 1.0).max(0.0);
    Ok((0.5 * inner.sqrt()).min(1.0))
}

/// Exact gamma-coupling of two Gaussians with common diagonal covariance:
/// marginals are exact and the disagreement probability equals the total
/// variation distance. On agreement the same draw object is returned for
/// both members.
pub fn maximal_couple_step(
    mean_drifted: &[f64],
    mean_plain: &[f64],
    var_drifted: &[f64],
    var_plain: &[f64],
    rng: &mut CounterRng,
) -> Result<(Vec<f64>, Vec<f64>, bool)> {
    let n = mean_drifted.len();
    if mean_plain.len() != n || var_drifted.len() != n || var_plain.len() != n {
        return Err(Error::InvalidConfig("coupled Gaussian dimensions differ".into()));
    }
    for i in 0..n {
        if var_drifted[i] != var_plain[i] {
            return Err(Error::CovarianceMismatch { index: i, a: var_drifted[i], b: var_plain[i] });
        }
        if !(var_drifted[i] > 0.0) {
            return Err(Error::InvalidConfig(format!("variance must be positive at index {i}")));
        }
    }
    let log_ratio = |x: &[f64], from: &[f64], to: &[f64]| -> f64 {
        // log N(x; to, var) - log N(x; from, var)
        let mut acc = 0.0;
        for i in 0..n {
            let a = x[i] - from[i];
            let b = x[i] - to[i];
            acc += (a * a - b * b) / (2.0 * var_drifted[i]);
        }
        acc
    };

    // X ~ drifted
    let mut x = vec![0.0; n];
    for i in 0..n {
        x[i] = mean_drifted[i] + var_drifted[i].sqrt() * rng.standard_normal()?;
    }
    let lr = log_ratio(&x, mean_drifted, mean_plain);
    let u = rng.uniform()?;
    if u.ln() <= lr {
        // overlap region: both members share the draw
        let y = x.clone();
        return Ok((x, y, true));
    }
    // residual of the plain member: propose from it, accept with 1 - p/q
    for _ in 0..1_000_000 {
        let mut y = vec![0.0; n];
        for i in 0..n {
            y[i] = mean_plain[i] + var_plain[i].sqrt() * rng.standard_normal()?;
        }
        let lr_back = log_ratio(&y, mean_plain, mean_drifted);
        let v = rng.uniform()?;
        if v.ln() > lr_back {
            return Ok((x, y, false));
        }
    }
    Err(Error::NonConvergence { what: "maximal coupling residual sampler".into(), iterations: 1_000_000 })
}

/// Outcome summary of one `T`-block.
#[derive(Debug, Clone, Serialize)]
pub struct CouplingBlockOutcome {
    pub block: u64,
    /// Pair still agreed at block end.
    pub coupled: bool,
    /// Composed per-step TV of the coupled increments over this block.
    pub tv_estimate: f64,
    /// Running Novikov integral at block end.
    pub novikov_integral: f64,
    /// `||u - u'||` at block end.
    pub sep_norm: f64,
    pub sigma_hit: Option<f64>,
    pub tau_hit: Option<f64>,
    /// Squeezing-event class if sigma fell inside this block.
    pub q_class: Option<QClass>,
    /// Separation decay factor over the block (end / start), if defined.
    pub decay_factor: Option<f64>,
    pub novikov_cap_exceeded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum QClass {
    /// sigma in the block with `sigma_1 >= tau_tilde` (ledger blow-out).
    Prime,
    /// sigma in the block with `sigma_1 < tau_tilde` (decoupling);
    /// grid ties resolve to this class.
    DoublePrime,
}

/// The coupled triple and all of its bookkeeping.
pub struct CouplingState {
    pub u_tilde: SpectralField,
    pub u_tilde_prime: SpectralField,
    pub v_tilde: SpectralField,
    /// Drift freeze for the current block (the per-block stopping time).
    pub truncated: bool,
    pub agreement: bool,
    pub sigma1: Option<f64>,
    pub tau_tilde: Option<f64>,
    pub sigma: Option<f64>,
    pub girsanov_accumulator: f64,
    pub block: u64,
    step_global: u64,
    ledger_u: EnergyState,
    tracker_u: StopTracker,
    ledger_up: EnergyState,
    tracker_up: StopTracker,
    block_trackers: Option<[(EnergyState, StopTracker); 3]>,
    cap_flagged: bool,
}

pub struct CouplingEngine {
    spec: NoiseSpec,
    int_cfg: IntegratorConfig,
    cfg: CouplingConfig,
    pair_stream: StreamKey,
    pub state: CouplingState,
}

impl CouplingEngine {
    pub fn new(
        u0: SpectralField,
        u0_prime: SpectralField,
        spec: NoiseSpec,
        int_cfg: IntegratorConfig,
        cfg: CouplingConfig,
        pair_id: u64,
    ) -> Result<Self> {
        int_cfg.validate()?;
        if cfg.n_couple > spec.n_active() {
            return Err(Error::InvalidConfig(format!(
                "n_couple = {} exceeds the {} active noise modes",
                cfg.n_couple,
                spec.n_active()
            )));
        }
        if cfg.ledger_stride == 0 {
            return Err(Error::InvalidConfig("ledger_stride must be positive".into()));
        }
        let rule = |u0n: f64| StoppingRule {
            k_rate: cfg.k_rate,
            l_rate: cfg.l_rate,
            rho: cfg.rho,
            c_script: cfg.c_script,
            u0_norm: u0n,
            mode: StopMode::Combined,
        };
        let ledger_dt = int_cfg.dt * cfg.ledger_stride as f64;
        let mut ledger_u = EnergyState::new(u0.l2_norm(), ledger_dt)?;
        let mut ledger_up = EnergyState::new(u0_prime.l2_norm(), ledger_dt)?;
        let tracker_u = StopTracker::new(rule(u0.l2_norm()));
        let tracker_up = StopTracker::new(rule(u0_prime.l2_norm()));
        // seed the ledgers with the initial snapshots
        ledger_u.accumulate(&norm_snapshot(&u0, None, 0))?;
        ledger_up.accumulate(&norm_snapshot(&u0_prime, None, 0))?;
        let pair_stream = spec.stream(pair_id).derive(0x636f7570);
        let v_tilde = u0_prime.clone();
        Ok(CouplingEngine {
            spec,
            int_cfg,
            cfg,
            pair_stream,
            state: CouplingState {
                u_tilde: u0,
                u_tilde_prime: u0_prime,
                v_tilde,
                truncated: false,
                agreement: true,
                sigma1: None,
                tau_tilde: None,
                sigma: None,
                girsanov_accumulator: 0.0,
                block: 0,
                step_global: 0,
                ledger_u,
                tracker_u,
                ledger_up,
                tracker_up,
                block_trackers: None,
                cap_flagged: false,
            },
        })
    }

    pub fn config(&self) -> &CouplingConfig {
        &self.cfg
    }

    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    /// Novikov integral `int ||A||^2 dt` accumulated so far (frozen while
    /// the truncation flag is up).
    pub fn novikov_integral(&self) -> f64 {
        self.state.girsanov_accumulator
    }

    pub fn block_steps(&self) -> u64 {
        (self.cfg.t_block / self.int_cfg.dt).round().max(1.0) as u64
    }

    /// Snapshot for a ledger running on its own clock: `t` is the clock
    /// time, `ledger_step` the ledger-grid index. The weight is the lagged
    /// `psi(t - 1)`; before the offset (and at it, where `psi(0) = 0`) no
    /// weighted terms are needed.
    fn ledger_snapshot(&self, u: &SpectralField, ledger_step: u64, t: f64) -> NormSnapshot {
        let wg = (self.cfg.track_weighted && t > 1.0).then(|| WeightGrid::psi(u.grid(), t - 1.0));
        norm_snapshot(u, wg.as_ref(), ledger_step)
    }

    /// Advances one `T`-block and classifies it.
    pub fn run_block(&mut self) -> Result<CouplingBlockOutcome> {
        let steps = self.block_steps();
        let dt = self.int_cfg.dt;
        let n = self.cfg.n_couple;
        let nu = self.int_cfg.viscosity;
        let block = self.state.block;
        let sigma_at_entry = self.state.sigma;

        // fresh per-block ledgers drive the drift freeze
        let block_rule = |u0n: f64| StoppingRule {
            k_rate: self.cfg.k_rate,
            l_rate: self.cfg.l_rate,
            rho: self.cfg.rho,
            c_script: self.cfg.c_script,
            u0_norm: u0n,
            mode: StopMode::Combined,
        };
        let ledger_dt = dt * self.cfg.ledger_stride as f64;
        let mut blocks: [(EnergyState, StopTracker); 3] = [
            (
                EnergyState::new(self.state.u_tilde.l2_norm(), ledger_dt)?,
                StopTracker::new(block_rule(self.state.u_tilde.l2_norm())),
            ),
            (
                EnergyState::new(self.state.u_tilde_prime.l2_norm(), ledger_dt)?,
                StopTracker::new(block_rule(self.state.u_tilde_prime.l2_norm())),
            ),
            (
                EnergyState::new(self.state.v_tilde.l2_norm(), ledger_dt)?,
                StopTracker::new(block_rule(self.state.v_tilde.l2_norm())),
            ),
        ];
        // anchor the block clocks at the block boundary
        blocks[0].0.accumulate(&self.ledger_snapshot(&self.state.u_tilde, 0, 0.0))?;
        blocks[1].0.accumulate(&self.ledger_snapshot(&self.state.u_tilde_prime, 0, 0.0))?;
        blocks[2].0.accumulate(&self.ledger_snapshot(&self.state.v_tilde, 0, 0.0))?;
        self.state.truncated = false;

        let sep_start = self.state.u_tilde.sub(&self.state.u_tilde_prime).l2_norm();
        let mut not_decoupled_prob = 1.0f64;
        let block_stream = self.pair_stream.derive(block);

        for local in 0..steps {
            let step = self.state.step_global;
            let t_next = (step + 1) as f64 * dt;

            // Girsanov drift from the (truncated) pair
            let drift = girsanov_drift(
                &self.state.u_tilde,
                &self.state.v_tilde,
                &self.spec,
                n,
                nu,
                self.state.truncated,
            )?;
            if !self.state.truncated {
                self.state.girsanov_accumulator += drift.l2_norm_sq() * dt;
                if self.state.girsanov_accumulator > self.cfg.novikov_cap {
                    self.state.cap_flagged = true;
                }
            }
            let coords = self.spec.drift_coordinates(&drift);
            let sqrt_dt = dt.sqrt();
            // means in xi-units, per mode: sqrt(dt) a_j / b_j
            let mean_drifted: Vec<f64> =
                (0..n).map(|j| coords[j] * sqrt_dt / self.spec.coefficient(j)).collect();
            let mean_plain = vec![0.0; n];
            let unit_var = vec![1.0; n];

            let mut rng = block_stream.derive(local).rng();
            let modes = self.spec.modes();
            let (xi_v, xi_up) = if self.state.agreement {
                let (yv, yup, agreed) =
                    maximal_couple_step(&mean_drifted, &mean_plain, &unit_var, &unit_var, &mut rng)?;
                // shared draws for the unforced-by-drift modes
                let mut shared = vec![0.0; modes - self.cfg.n_couple];
                rng.fill_standard_normal(&mut shared)?;
                let mut xi_v = yv;
                xi_v.extend_from_slice(&shared);
                let mut xi_up = yup;
                xi_up.extend_from_slice(&shared);
                if !agreed {
                    self.state.agreement = false;
                    self.state.sigma1 = Some(t_next);
                }
                (xi_v, xi_up)
            } else {
                // decoupled: fully independent fresh draws
                let mut xi_v = vec![0.0; modes];
                rng.fill_standard_normal(&mut xi_v)?;
                for (j, m) in mean_drifted.iter().enumerate() {
                    xi_v[j] += m;
                }
                let mut rng2 = block_stream.derive(local ^ 0x8000_0000_0000_0000).rng();
                let mut xi_up = vec![0.0; modes];
                rng2.fill_standard_normal(&mut xi_up)?;
                (xi_v, xi_up)
            };

            // per-step TV of the coupled increments (closed form)
            let delta: f64 = mean_drifted.iter().map(|m| m * m).sum::<f64>().sqrt();
            not_decoupled_prob *= 1.0 - gaussian_tv_equal_var(delta, 1.0);

            let incr_v = WienerIncrement {
                dt,
                xi: xi_v,
                shift: vec![0.0; modes],
                position: 0,
                step,
            };
            let incr_up = WienerIncrement {
                dt,
                xi: xi_up,
                shift: vec![0.0; modes],
                position: 0,
                step,
            };

            // u_tilde is driven by v_tilde's realized forcing rearranged to
            // the plain form: shift by the live relative drift of (v, u).
            // Before the freeze this is exactly the negated Girsanov drift,
            // so the shift cancels the coupled mean and u_tilde sees plain
            // noise (the extension's marginal-law property).
            let d_field = if self.state.truncated {
                relative_drift(&self.state.v_tilde, &self.state.u_tilde, self.spec.basis(), n, nu)?
            } else {
                let mut neg = drift.clone();
                neg.scale(-1.0);
                neg
            };
            if !d_field.is_finite() {
                return Err(Error::BlowUp { step });
            }
            let incr_u = self.spec.girsanov_shift(&incr_v, &d_field, dt)?;

            let next_up = step_primal(&self.state.u_tilde_prime, &self.spec, &self.int_cfg, &incr_up)?;
            let next_v = if self.state.agreement {
                // identical states and draws: reuse the step bit-for-bit
                next_up.clone()
            } else {
                step_primal(&self.state.v_tilde, &self.spec, &self.int_cfg, &incr_v)?
            };
            let next_u = step_primal(&self.state.u_tilde, &self.spec, &self.int_cfg, &incr_u)?;
            self.state.u_tilde = next_u;
            self.state.u_tilde_prime = next_up;
            self.state.v_tilde = next_v;
            self.state.step_global += 1;

            // ledgers on their stride, each on its own clock
            if self.state.step_global % self.cfg.ledger_stride as u64 == 0 {
                let stride = self.cfg.ledger_stride as u64;
                let gstep = self.state.step_global / stride;
                let t_global = self.state.step_global as f64 * dt;
                let snap_u = self.ledger_snapshot(&self.state.u_tilde, gstep, t_global);
                let snap_up = self.ledger_snapshot(&self.state.u_tilde_prime, gstep, t_global);
                self.state.ledger_u.accumulate(&snap_u)?;
                self.state.ledger_up.accumulate(&snap_up)?;
                self.state.tracker_u.observe(&self.state.ledger_u);
                self.state.tracker_up.observe(&self.state.ledger_up);
                if self.state.tau_tilde.is_none()
                    && (self.state.tracker_u.triggered() || self.state.tracker_up.triggered())
                {
                    self.state.tau_tilde = Some(t_next);
                }

                // block ledgers run on the block-local clock
                let local_step = local + 1;
                if local_step % stride == 0 {
                    let bstep = local_step / stride;
                    let t_local = local_step as f64 * dt;
                    let bsnap_u = self.ledger_snapshot(&self.state.u_tilde, bstep, t_local);
                    let bsnap_up = self.ledger_snapshot(&self.state.u_tilde_prime, bstep, t_local);
                    let bsnap_v = if self.state.agreement {
                        bsnap_up
                    } else {
                        self.ledger_snapshot(&self.state.v_tilde, bstep, t_local)
                    };
                    blocks[0].0.accumulate(&bsnap_u)?;
                    blocks[1].0.accumulate(&bsnap_up)?;
                    blocks[2].0.accumulate(&bsnap_v)?;
                    for (ledger, tracker) in blocks.iter_mut() {
                        tracker.observe(ledger);
                    }
                    if !self.state.truncated && blocks.iter().any(|(_, t)| t.triggered()) {
                        self.state.truncated = true;
                    }
                }
            }

            // sigma = tau_tilde ^ sigma_1
            if self.state.sigma.is_none() {
                self.state.sigma = match (self.state.sigma1, self.state.tau_tilde) {
                    (Some(s1), Some(tt)) => Some(s1.min(tt)),
                    (Some(s1), None) => Some(s1),
                    (None, Some(tt)) => Some(tt),
                    (None, None) => None,
                };
            }
        }

        self.state.block += 1;
        let sep_end = self.state.u_tilde.sub(&self.state.u_tilde_prime).l2_norm();
        let block_start_t = block as f64 * self.cfg.t_block;
        let block_end_t = (block + 1) as f64 * self.cfg.t_block;
        let q_class = match (sigma_at_entry, self.state.sigma) {
            (None, Some(s)) if s >= block_start_t && s < block_end_t + 1e-12 => {
                // tie between sigma_1 and tau_tilde resolves to decoupling
                let s1 = self.state.sigma1;
                let tt = self.state.tau_tilde;
                let class = match (s1, tt) {
                    (Some(a), Some(b)) if a <= b => QClass::DoublePrime,
                    (Some(_), None) => QClass::DoublePrime,
                    _ => QClass::Prime,
                };
                Some(class)
            }
            _ => None,
        };
        self.state.block_trackers = Some(blocks);

        Ok(CouplingBlockOutcome {
            block,
            coupled: self.state.agreement,
            tv_estimate: (1.0 - not_decoupled_prob).clamp(0.0, 1.0),
            novikov_integral: self.state.girsanov_accumulator,
            sep_norm: sep_end,
            sigma_hit: self.state.sigma,
            tau_hit: self.state.tau_tilde,
            q_class,
            decay_factor: (sep_start > 0.0).then_some(sep_end / sep_start),
            novikov_cap_exceeded: self.state.cap_flagged,
        })
    }

    /// Stopping-time summary of the pair so far.
    pub fn stopping_summary(&self) -> Vec<StoppingTimeRecord> {
        let mk = |kind: StopKind, value: Option<f64>| StoppingTimeRecord {
            kind,
            value,
            margin: 0.0,
            trigger_term: String::new(),
        };
        vec![
            mk(StopKind::Sigma, self.state.sigma),
            mk(StopKind::Sigma1, self.state.sigma1),
            mk(StopKind::Tau, self.state.tau_tilde),
        ]
    }
}
