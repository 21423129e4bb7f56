//! Monte Carlo closed-loop simulation and sample moment estimation.

pub mod export;
pub mod pendulum;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, Error, Result};
use crate::linalg::{psd_sqrt, require_psd};
use crate::model::SystemStage;
use crate::moments::{AffinePolicy, MomentMatrix, StateMoment};

pub use export::{export_csv, render_svg, write_csv, Scene};
pub use pendulum::{
    simulate_pendulum, swing_up_outcomes, PendulumParams, PendulumRun, Stabilizer, SwingUpOutcome,
    SwitchRule,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    #[default]
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub trajectories: usize,
    pub seed: u64,
    pub horizon: usize,
    pub noise_model: NoiseModel,
    pub record_inputs: bool,
}

impl SimConfig {
    pub fn new(trajectories: usize, seed: u64, horizon: usize) -> Self {
        Self {
            trajectories,
            seed,
            horizon,
            noise_model: NoiseModel::Gaussian,
            record_inputs: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trajectories == 0 {
            return Err(Error::InvalidParameter {
                name: "trajectories".into(),
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

/// Simulated trajectories stored trajectory-major.
///
/// State `t` of trajectory `i` occupies `states[(i·(H+1) + t)·n ..][..n]`;
/// inputs follow the same layout with `H` steps and width `m`, and are
/// empty when not recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryBatch {
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    pub states: Vec<f64>,
    pub inputs: Vec<f64>,
    /// Seed of each trajectory's private generator.
    pub seeds: Vec<u64>,
}

impl TrajectoryBatch {
    pub fn empty(n: usize, m: usize, horizon: usize) -> Self {
        Self {
            n,
            m,
            horizon,
            states: Vec::new(),
            inputs: Vec::new(),
            seeds: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    pub fn has_inputs(&self) -> bool {
        self.horizon == 0 || self.m == 0 || !self.inputs.is_empty()
    }

    pub fn state(&self, i: usize, t: usize) -> &[f64] {
        let k = (i * (self.horizon + 1) + t) * self.n;
        &self.states[k..k + self.n]
    }

    pub fn input(&self, i: usize, t: usize) -> &[f64] {
        let k = (i * self.horizon + t) * self.m;
        &self.inputs[k..k + self.m]
    }

    /// States of one trajectory as `H+1` rows.
    pub fn path(&self, i: usize) -> impl Iterator<Item = &[f64]> {
        (0..=self.horizon).map(move |t| self.state(i, t))
    }

    fn assemble(
        n: usize,
        m: usize,
        horizon: usize,
        seeds: Vec<u64>,
        runs: Vec<(Vec<f64>, Vec<f64>)>,
    ) -> Self {
        let mut states = Vec::with_capacity(runs.len() * (horizon + 1) * n);
        let mut inputs = Vec::new();
        for (x, u) in runs {
            states.extend_from_slice(&x);
            inputs.extend_from_slice(&u);
        }
        Self {
            n,
            m,
            horizon,
            states,
            inputs,
            seeds,
        }
    }
}

/// Seed for trajectory `index`: splitmix64 of the master seed and the index.
pub fn trajectory_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn trajectory_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(trajectory_seed(seed, index))
}

/// `factor · ξ` with `ξ` standard normal; always draws `factor.ncols()` numbers.
pub(crate) fn gaussian(rng: &mut ChaCha8Rng, factor: &DMatrix<f64>) -> DVector<f64> {
    let xi = DVector::from_fn(factor.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
    factor * xi
}

/// Distribution of `x₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl InitialSampler {
    /// Gaussian with the mean and covariance of a state moment.
    pub fn from_moment(moment: &StateMoment) -> Result<Self> {
        let cov = moment.covariance();
        require_psd(&cov, "initial covariance")?;
        Ok(Self {
            mean: moment.mean(),
            factor: psd_sqrt(&cov),
        })
    }

    pub fn point(x: DVector<f64>) -> Self {
        let n = x.len();
        Self {
            mean: x,
            factor: DMatrix::zeros(n, n),
        }
    }

    pub fn n(&self) -> usize {
        self.mean.len()
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        &self.mean + gaussian(rng, &self.factor)
    }
}

/// Picks entry `t` or the single reused entry.
fn pick<T>(items: &[T], t: usize) -> &T {
    if items.len() == 1 {
        &items[0]
    } else {
        &items[t]
    }
}

fn check_count(what: &str, len: usize, horizon: usize) -> Result<()> {
    if len == 1 || len >= horizon {
        Ok(())
    } else {
        Err(dim_mismatch(what, format!("1 or at least {horizon}"), len))
    }
}

/// Samples `x₊ = f + A x + B u + w`, `u = k¹ + K² x + v` with Gaussian `v`, `w`.
///
/// `stages` and `policies` each hold one entry per step or a single entry used
/// at every step. Every trajectory draws from its own generator seeded by
/// [`trajectory_seed`], so the batch does not depend on thread count.
pub fn simulate_linear(
    stages: &[SystemStage],
    policies: &[AffinePolicy],
    initial: &InitialSampler,
    config: &SimConfig,
) -> Result<TrajectoryBatch> {
    config.validate()?;
    let horizon = config.horizon;
    let n = initial.n();
    if horizon > 0 && (stages.is_empty() || policies.is_empty()) {
        return Err(dim_mismatch(
            "stages and policies",
            "at least one each",
            "none",
        ));
    }
    check_count("stage count", stages.len().max(1), horizon)?;
    check_count("policy count", policies.len().max(1), horizon)?;
    let m = policies.first().map_or(0, AffinePolicy::m);
    for s in stages {
        if s.n() != n || s.m() != m {
            return Err(dim_mismatch(
                "stage",
                format!("n={n}, m={m}"),
                format!("n={}, m={}", s.n(), s.m()),
            ));
        }
        require_psd(&s.sigma_w, "Σw")?;
    }
    for p in policies {
        if p.n() != n || p.m() != m {
            return Err(dim_mismatch(
                "policy",
                format!("n={n}, m={m}"),
                format!("n={}, m={}", p.n(), p.m()),
            ));
        }
        require_psd(&p.sigma_v, "Σv")?;
    }
    let noise_w: Vec<DMatrix<f64>> = stages.iter().map(|s| psd_sqrt(&s.sigma_w)).collect();
    let noise_v: Vec<DMatrix<f64>> = policies.iter().map(|p| psd_sqrt(&p.sigma_v)).collect();

    let seeds: Vec<u64> = (0..config.trajectories)
        .map(|i| trajectory_seed(config.seed, i))
        .collect();
    let record = config.record_inputs;
    let runs: Vec<(Vec<f64>, Vec<f64>)> = (0..config.trajectories)
        .into_par_iter()
        .map(|i| {
            let mut rng = trajectory_rng(config.seed, i);
            let mut xs = Vec::with_capacity((horizon + 1) * n);
            let mut us = Vec::with_capacity(if record { horizon * m } else { 0 });
            let mut x = initial.sample(&mut rng);
            xs.extend_from_slice(x.as_slice());
            for t in 0..horizon {
                let p = pick(policies, t);
                let s = pick(stages, t);
                let u = p.mean_input(&x) + gaussian(&mut rng, pick(&noise_v, t));
                let w = gaussian(&mut rng, pick(&noise_w, t));
                x = &s.f + &s.a * &x + &s.b * &u + w;
                xs.extend_from_slice(x.as_slice());
                if record {
                    us.extend_from_slice(u.as_slice());
                }
            }
            (xs, us)
        })
        .collect();
    Ok(TrajectoryBatch::assemble(n, m, horizon, seeds, runs))
}

fn check_moment_request(batch: &TrajectoryBatch, t: usize) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter {
            name: "batch".into(),
            reason: "no trajectories".into(),
        });
    }
    if t >= batch.horizon && !(batch.m == 0 && t == batch.horizon) {
        return Err(Error::OutOfRange {
            what: "stage with recorded input".into(),
            index: t,
            len: batch.horizon,
        });
    }
    if !batch.has_inputs() {
        return Err(Error::InvalidParameter {
            name: "batch".into(),
            reason: "inputs were not recorded".into(),
        });
    }
    Ok(())
}

fn stacked(batch: &TrajectoryBatch, i: usize, t: usize) -> DVector<f64> {
    let (n, m) = (batch.n, batch.m);
    let mut z = DVector::zeros(1 + n + m);
    z[0] = 1.0;
    z.rows_mut(1, n).copy_from_slice(batch.state(i, t));
    if m > 0 {
        z.rows_mut(1 + n, m).copy_from_slice(batch.input(i, t));
    }
    z
}

/// Sample mean of `(1,xₜ,uₜ)(1,xₜ,uₜ)ᵀ`.
pub fn empirical_moments(batch: &TrajectoryBatch, t: usize) -> Result<MomentMatrix> {
    Ok(moment_statistics(batch, t)?.0)
}

/// Sample moment at stage `t` together with the entrywise standard error of the mean.
pub fn moment_statistics(
    batch: &TrajectoryBatch,
    t: usize,
) -> Result<(MomentMatrix, DMatrix<f64>)> {
    check_moment_request(batch, t)?;
    let d = 1 + batch.n + batch.m;
    let count = batch.len() as f64;
    let mut sum = DMatrix::zeros(d, d);
    let mut sum_sq = DMatrix::zeros(d, d);
    for i in 0..batch.len() {
        let z = stacked(batch, i, t);
        let outer = &z * z.transpose();
        sum_sq += outer.component_mul(&outer);
        sum += outer;
    }
    let mean = sum / count;
    let stderr = if batch.len() > 1 {
        let var = (sum_sq / count - mean.component_mul(&mean)) * (count / (count - 1.0));
        var.map(|v| (v.max(0.0) / count).sqrt())
    } else {
        DMatrix::zeros(d, d)
    };
    Ok((MomentMatrix::new(mean, batch.n, batch.m)?, stderr))
}

/// Sample `(1,xₜ)` moment; valid for every `t ≤ H`.
pub fn empirical_state_moment(batch: &TrajectoryBatch, t: usize) -> Result<StateMoment> {
    if t > batch.horizon || batch.is_empty() {
        return Err(Error::OutOfRange {
            what: "stage".into(),
            index: t,
            len: batch.horizon + 1,
        });
    }
    let n = batch.n;
    let mut sum = DMatrix::zeros(1 + n, 1 + n);
    for i in 0..batch.len() {
        let mut z = DVector::zeros(1 + n);
        z[0] = 1.0;
        z.rows_mut(1, n).copy_from_slice(batch.state(i, t));
        sum += &z * z.transpose();
    }
    StateMoment::new(sum / batch.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn passthrough() -> (SystemStage, AffinePolicy) {
        let stage = SystemStage::linear(DMatrix::zeros(2, 2), DMatrix::identity(2, 2)).unwrap();
        let policy = AffinePolicy::new(
            DVector::zeros(2),
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        (stage, policy)
    }

    #[test]
    fn seeds_differ_per_trajectory() {
        let a = trajectory_seed(7, 0);
        assert_ne!(a, trajectory_seed(7, 1));
        assert_ne!(a, trajectory_seed(8, 0));
        assert_eq!(a, trajectory_seed(7, 0));
    }

    #[test]
    fn excitation_passes_through() {
        let (stage, policy) = passthrough();
        let init = InitialSampler::point(DVector::zeros(2));
        let batch =
            simulate_linear(&[stage], &[policy], &init, &SimConfig::new(20_000, 3, 1)).unwrap();
        let s = empirical_state_moment(&batch, 1).unwrap();
        let cov = s.covariance();
        assert!((cov - DMatrix::identity(2, 2)).amax() < 0.05);
        assert!(s.mean().amax() < 0.03);
    }

    #[test]
    fn deterministic_loop_gives_rank_one_moment() {
        let stage = SystemStage::linear(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let policy = AffinePolicy::from_gain(&DMatrix::from_row_slice(1, 2, &[0.2, -0.1]));
        let init = InitialSampler::point(DVector::from_element(1, 2.0));
        let batch = simulate_linear(&[stage], &[policy], &init, &SimConfig::new(1, 0, 3)).unwrap();
        let sigma = empirical_moments(&batch, 0).unwrap();
        let z = DVector::from_vec(vec![1.0, 2.0, 0.0]);
        assert_relative_eq!(sigma.matrix().clone(), &z * z.transpose(), epsilon = 1e-14);
        // u₀ = 0.2 − 0.2 = 0, x₁ = 1.
        assert_relative_eq!(batch.state(0, 1)[0], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn out_of_range_and_missing_inputs() {
        let (stage, policy) = passthrough();
        let init = InitialSampler::point(DVector::zeros(2));
        let mut cfg = SimConfig::new(4, 1, 2);
        let batch = simulate_linear(
            std::slice::from_ref(&stage),
            std::slice::from_ref(&policy),
            &init,
            &cfg,
        )
        .unwrap();
        assert!(matches!(
            empirical_moments(&batch, 2),
            Err(Error::OutOfRange { .. })
        ));
        cfg.record_inputs = false;
        let batch = simulate_linear(&[stage], &[policy], &init, &cfg).unwrap();
        assert!(batch.inputs.is_empty());
        assert!(empirical_moments(&batch, 0).is_err());
        assert!(empirical_state_moment(&batch, 2).is_ok());
    }

    #[test]
    fn rejects_indefinite_noise() {
        let (mut stage, policy) = passthrough();
        stage.sigma_w = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        let init = InitialSampler::point(DVector::zeros(2));
        let r = simulate_linear(&[stage], &[policy], &init, &SimConfig::new(1, 0, 1));
        assert!(matches!(r, Err(Error::NotPsd { .. })));
    }

    #[test]
    fn zero_trajectories_rejected() {
        let (stage, policy) = passthrough();
        let init = InitialSampler::point(DVector::zeros(2));
        assert!(simulate_linear(&[stage], &[policy], &init, &SimConfig::new(0, 0, 1)).is_err());
    }

    #[test]
    fn horizon_zero_keeps_initial_states() {
        let init = InitialSampler::from_moment(
            &StateMoment::from_mean_cov(
                &DVector::from_element(1, 1.0),
                &DMatrix::from_element(1, 1, 4.0),
            )
            .unwrap(),
        )
        .unwrap();
        let batch = simulate_linear(&[], &[], &init, &SimConfig::new(5, 9, 0)).unwrap();
        assert_eq!(batch.states.len(), 5);
        assert_eq!(batch.m, 0);
    }
}
