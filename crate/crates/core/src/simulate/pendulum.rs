//! Cart-pole swing-up: a stochastic escape policy near the hanging
//! equilibrium hands over to an LQR stabilizer at the upright one.
//!
//! State `x = (cart position, angle, cart velocity, angular velocity)`, angle
//! measured from the hanging position, so upright is `π`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, Error, Result};
use crate::linalg::{psd_sqrt, require_psd};
use crate::model::SystemStage;
use crate::moments::AffinePolicy;

use super::{gaussian, trajectory_rng, trajectory_seed, SimConfig, TrajectoryBatch};

pub type State = [f64; 4];

/// Norm beyond which a simulation is declared divergent.
pub const BLOWUP_NORM: f64 = 1e6;
/// Integration substeps per control interval.
pub const SUBSTEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    pub g: f64,
    /// Cart mass.
    pub m1: f64,
    /// Pendulum mass.
    pub m2: f64,
    pub l: f64,
    /// Control interval and Euler step of the synthesis model.
    pub h: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            g: 9.81,
            m1: 1.0,
            m2: 1e-3,
            l: 1.0,
            h: 0.005,
        }
    }
}

/// `θ` wrapped into `(−π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let r = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if r == -PI {
        PI
    } else {
        r
    }
}

/// State relative to the upright equilibrium at the cart origin, angle wrapped.
pub fn upright_error(x: &State) -> State {
    [x[0], wrap_angle(x[1] - PI), x[2], x[3]]
}

/// State with the angle wrapped around the hanging equilibrium.
pub fn hanging_coordinates(x: &State) -> State {
    [x[0], wrap_angle(x[1]), x[2], x[3]]
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("g", self.g),
            ("m1", self.m1),
            ("m2", self.m2),
            ("l", self.l),
            ("h", self.h),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: name.into(),
                    reason: "must be positive".into(),
                });
            }
        }
        Ok(())
    }

    /// Euler-discretized linear model used for synthesis, taken as published
    /// (input gains `h/m₂` and `h·l/m₁`), noise free.
    pub fn synthesis_stage(&self) -> SystemStage {
        let Self { g, m1, m2, l, h } = *self;
        let mut a = DMatrix::identity(4, 4);
        a[(0, 2)] = h;
        a[(1, 3)] = h;
        a[(2, 1)] = -h * m2 * g / m1;
        a[(3, 1)] = -h * (m1 + m2) * g / (l * m2);
        let b = DMatrix::from_column_slice(4, 1, &[0.0, 0.0, h / m2, h * l / m1]);
        SystemStage::linear(a, b).expect("fixed shapes")
    }

    /// Quadratic energy proxy `e(x₂,x₄) = ½ m₂ g l x₂² + ½ g l² x₄²`.
    pub fn energy(&self, angle: f64, rate: f64) -> f64 {
        0.5 * self.m2 * self.g * self.l * angle * angle
            + 0.5 * self.g * self.l * self.l * rate * rate
    }

    /// Matrix `E` on `(1, x, u)` with `E[(1,x,u)ᵀ E (1,x,u)] = E e`.
    pub fn energy_matrix(&self) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(6, 6);
        e[(2, 2)] = 0.5 * self.m2 * self.g * self.l;
        e[(4, 4)] = 0.5 * self.g * self.l * self.l;
        e
    }

    /// Right-hand side of the cart-pole ODE under force `u`. The angle is
    /// counted positive in the direction a positive force tips the pendulum.
    pub fn derivative(&self, x: &State, u: f64) -> State {
        let Self { g, m1, m2, l, .. } = *self;
        let (s, c) = x[1].sin_cos();
        let w2 = x[3] * x[3];
        let den = m1 + m2 * s * s;
        let cart = (u - m2 * s * (l * w2 + g * c)) / den;
        let pole = (u * c - m2 * l * w2 * s * c - (m1 + m2) * g * s) / (l * den);
        [x[2], x[3], cart, pole]
    }

    pub fn rk4(&self, x: &State, u: f64, dt: f64) -> State {
        let add =
            |a: &State, k: &State, s: f64| -> State { std::array::from_fn(|i| a[i] + s * k[i]) };
        let k1 = self.derivative(x, u);
        let k2 = self.derivative(&add(x, &k1, 0.5 * dt), u);
        let k3 = self.derivative(&add(x, &k2, 0.5 * dt), u);
        let k4 = self.derivative(&add(x, &k3, dt), u);
        std::array::from_fn(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
    }

    /// One control interval with `u` held constant.
    pub fn hold(&self, x: &State, u: f64) -> State {
        let dt = self.h / SUBSTEPS as f64;
        (0..SUBSTEPS).fold(*x, |acc, _| self.rk4(&acc, u, dt))
    }

    /// Continuous-time linearization about the upright equilibrium, in
    /// [`upright_error`] coordinates.
    pub fn upright_linearization(&self) -> (Matrix4<f64>, Vector4<f64>) {
        let Self { g, m1, m2, l, .. } = *self;
        let mut a = Matrix4::zeros();
        a[(0, 2)] = 1.0;
        a[(1, 3)] = 1.0;
        a[(2, 1)] = -m2 * g / m1;
        a[(3, 1)] = (m1 + m2) * g / (l * m1);
        let b = Vector4::new(0.0, 0.0, 1.0 / m1, -1.0 / (l * m1));
        (a, b)
    }

    /// Zero-order-hold discretization of [`Self::upright_linearization`].
    pub fn upright_discrete(&self) -> (Matrix4<f64>, Vector4<f64>) {
        let (a, b) = self.upright_linearization();
        let mut aug = DMatrix::zeros(5, 5);
        aug.view_mut((0, 0), (4, 4)).copy_from(&(a * self.h));
        aug.view_mut((0, 4), (4, 1)).copy_from(&(b * self.h));
        let e = aug.exp();
        (
            e.fixed_view::<4, 4>(0, 0).into_owned(),
            e.fixed_view::<4, 1>(0, 4).into_owned(),
        )
    }
}

/// Sublevel set `{z : zᵀ P z ≤ c}` of the upright error that triggers the handover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchRule {
    pub p_lyap: Matrix4<f64>,
    pub level: f64,
}

impl SwitchRule {
    pub fn value(&self, x: &State) -> f64 {
        let z = Vector4::from(upright_error(x));
        z.dot(&(self.p_lyap * z))
    }

    pub fn triggered(&self, x: &State) -> bool {
        self.value(x) <= self.level
    }
}

/// Upright LQR controller `u = K z` with its Riccati matrix and switch level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stabilizer {
    pub gain: [f64; 4],
    pub switch: SwitchRule,
}

/// Boundary directions used by the level search.
pub const LEVEL_SAMPLES: usize = 32;
/// Simulated time for each convergence check.
const SETTLE_TIME: f64 = 20.0;

impl Stabilizer {
    /// Infinite-horizon LQR with `Q = I`, `R = 1` on the discretized upright
    /// linearization, followed by the level search of [`Self::largest_level`].
    pub fn design(params: &PendulumParams) -> Result<Self> {
        params.validate()?;
        let (a, b) = params.upright_discrete();
        let (gain, p) = dlqr(&a, &b, &Matrix4::identity(), 1.0)?;
        let mut s = Self {
            gain,
            switch: SwitchRule {
                p_lyap: p,
                level: 0.0,
            },
        };
        s.switch.level = s.largest_level(params);
        Ok(s)
    }

    pub fn input(&self, x: &State) -> f64 {
        let z = upright_error(x);
        (0..4).map(|i| self.gain[i] * z[i]).sum()
    }

    /// The same controller as an affine policy on [`upright_error`] coordinates.
    pub fn policy(&self) -> AffinePolicy {
        AffinePolicy::from_gain(&DMatrix::from_row_slice(
            1,
            5,
            &[0.0, self.gain[0], self.gain[1], self.gain[2], self.gain[3]],
        ))
    }

    /// Whether the noise-free nonlinear loop started at upright error `z0` settles.
    pub fn settles(&self, params: &PendulumParams, z0: &State) -> bool {
        let mut x = [z0[0], z0[1] + PI, z0[2], z0[3]];
        let steps = (SETTLE_TIME / params.h).ceil() as usize;
        for _ in 0..steps {
            x = params.hold(&x, self.input(&x));
            if !x.iter().all(|v| v.is_finite() && v.abs() < BLOWUP_NORM) {
                return false;
            }
        }
        let z = upright_error(&x);
        z.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-3
    }

    /// Largest `c` (to bisection accuracy) such that the loop settles from all
    /// [`LEVEL_SAMPLES`] points on `zᵀPz = c`. Directions come from a fixed seed.
    pub fn largest_level(&self, params: &PendulumParams) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let dirs: Vec<Vector4<f64>> = (0..LEVEL_SAMPLES)
            .map(|_| Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal)).normalize())
            .collect();
        let p = self.switch.p_lyap;
        let ok = |c: f64| {
            dirs.par_iter().all(|d| {
                let z = d * (c / d.dot(&(p * d))).sqrt();
                self.settles(params, &[z[0], z[1], z[2], z[3]])
            })
        };
        let (mut lo, mut hi) = (0.0, 1e-3);
        while ok(hi) {
            lo = hi;
            hi *= 4.0;
            if hi > 1e8 {
                return lo;
            }
        }
        for _ in 0..24 {
            let mid = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * hi };
            if ok(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

/// Discrete infinite-horizon LQR for `u = K x`, returning `(K, P)`.
pub fn dlqr(
    a: &Matrix4<f64>,
    b: &Vector4<f64>,
    q: &Matrix4<f64>,
    r: f64,
) -> Result<([f64; 4], Matrix4<f64>)> {
    let mut p = *q;
    for _ in 0..200_000 {
        let pb = p * b;
        let s = r + b.dot(&pb);
        let k = -(a.transpose() * pb).transpose() / s;
        let next = q + a.transpose() * p * a + a.transpose() * pb * k;
        let next = (next + next.transpose()) * 0.5;
        let change = (next - p).amax();
        p = next;
        if !p.iter().all(|v| v.is_finite()) {
            break;
        }
        if change <= 1e-12 * p.amax().max(1.0) {
            let k = -(b.transpose() * p * a) / (r + b.dot(&(p * b)));
            return Ok(([k[0], k[1], k[2], k[3]], p));
        }
    }
    Err(Error::Singular("Riccati iteration did not converge".into()))
}

/// Outcome of a switching run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendulumRun {
    pub batch: TrajectoryBatch,
    /// Step at which each trajectory handed over, if it did.
    pub switched_at: Vec<Option<usize>>,
}

/// [`simulate_pendulum_from`] starting at rest in the hanging position.
pub fn simulate_pendulum(
    params: &PendulumParams,
    escape: &AffinePolicy,
    stabilizer: &AffinePolicy,
    switch: &SwitchRule,
    config: &SimConfig,
) -> Result<PendulumRun> {
    simulate_pendulum_from(params, &[0.0; 4], escape, stabilizer, switch, config)
}

/// Integrates the nonlinear cart-pole under zero-order hold.
///
/// The escape policy acts on [`hanging_coordinates`] with Gaussian excitation;
/// the stabilizer acts on [`upright_error`] and ignores its `Σᵛ`. The handover
/// is permanent and happens at the first sample where `switch` is triggered.
pub fn simulate_pendulum_from(
    params: &PendulumParams,
    start: &State,
    escape: &AffinePolicy,
    stabilizer: &AffinePolicy,
    switch: &SwitchRule,
    config: &SimConfig,
) -> Result<PendulumRun> {
    params.validate()?;
    config.validate()?;
    for (what, p) in [("escape policy", escape), ("stabilizer", stabilizer)] {
        if p.n() != 4 || p.m() != 1 {
            return Err(dim_mismatch(
                what,
                "n=4, m=1",
                format!("n={}, m={}", p.n(), p.m()),
            ));
        }
    }
    require_psd(&escape.sigma_v, "Σv")?;
    let noise = psd_sqrt(&escape.sigma_v);
    let horizon = config.horizon;
    let record = config.record_inputs;

    let affine =
        |p: &AffinePolicy, z: &State| p.k1[0] + (0..4).map(|i| p.k2[(0, i)] * z[i]).sum::<f64>();
    let seeds: Vec<u64> = (0..config.trajectories)
        .map(|i| trajectory_seed(config.seed, i))
        .collect();
    let runs: Vec<Result<(Vec<f64>, Vec<f64>, Option<usize>)>> = (0..config.trajectories)
        .into_par_iter()
        .map(|i| {
            let mut rng = trajectory_rng(config.seed, i);
            let mut xs = Vec::with_capacity((horizon + 1) * 4);
            let mut us = Vec::with_capacity(if record { horizon } else { 0 });
            let mut x = *start;
            let mut switched = None;
            xs.extend_from_slice(&x);
            for t in 0..horizon {
                if switched.is_none() && switch.triggered(&x) {
                    switched = Some(t);
                }
                // Draw every step so the stream does not depend on the switch time.
                let v = gaussian(&mut rng, &noise);
                let u = match switched {
                    Some(_) => affine(stabilizer, &upright_error(&x)),
                    None => affine(escape, &hanging_coordinates(&x)) + v[0],
                };
                x = params.hold(&x, u);
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(norm <= BLOWUP_NORM) {
                    return Err(Error::Diverged {
                        time: (t + 1) as f64 * params.h,
                        norm,
                    });
                }
                xs.extend_from_slice(&x);
                if record {
                    us.push(u);
                }
            }
            Ok((xs, us, switched))
        })
        .collect();

    let mut pairs = Vec::with_capacity(runs.len());
    let mut switched_at = Vec::with_capacity(runs.len());
    for r in runs {
        let (xs, us, s) = r?;
        pairs.push((xs, us));
        switched_at.push(s);
    }
    Ok(PendulumRun {
        batch: TrajectoryBatch::assemble(4, 1, horizon, seeds, pairs),
        switched_at,
    })
}

/// Angle error from upright at every sample of trajectory `i`.
pub fn angle_errors(batch: &TrajectoryBatch, i: usize) -> Vec<f64> {
    batch.path(i).map(|x| wrap_angle(x[1] - PI)).collect()
}

/// Handover time of one trajectory and how well it held upright afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwingUpOutcome {
    /// Seconds until the switch rule fired.
    pub switch_time: Option<f64>,
    /// Largest `|angle error|` from `settle` seconds after the switch to the
    /// end of the run; `None` without a switch or if that window is empty.
    pub worst_error_after: Option<f64>,
}

impl SwingUpOutcome {
    pub fn succeeded(&self, deadline: f64, angle_tol: f64) -> bool {
        self.switch_time.is_some_and(|t| t <= deadline)
            && self.worst_error_after.is_some_and(|e| e <= angle_tol)
    }
}

pub fn swing_up_outcomes(run: &PendulumRun, h: f64, settle: f64) -> Vec<SwingUpOutcome> {
    run.switched_at
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let Some(k) = *s else {
                return SwingUpOutcome {
                    switch_time: None,
                    worst_error_after: None,
                };
            };
            let from = k + (settle / h).round() as usize;
            let errs = angle_errors(&run.batch, i);
            SwingUpOutcome {
                switch_time: Some(k as f64 * h),
                worst_error_after: errs
                    .get(from..)
                    .filter(|w| !w.is_empty())
                    .map(|w| w.iter().fold(0.0, |a, e| f64::max(a, e.abs()))),
            }
        })
        .collect()
}
