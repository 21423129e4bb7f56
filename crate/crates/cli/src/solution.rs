//! JSON solution files: per-stage moment blocks and extracted policies.

use anyhow::{bail, Result};
use momsynth::extract::{classify, max_excitation, PolicyKind, DEFAULT_DET_TOL};
use momsynth::model::SynthesisProblem;
use momsynth::moments::{AffinePolicy, MomentMatrix};
use momsynth::sdp::SolverStatus;
use momsynth::synthesis::SynthesisSolution;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::schema::{rows_of, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub k1: Vec<f64>,
    #[serde(rename = "K2")]
    pub k2: Matrix,
    #[serde(rename = "Sigma_v")]
    pub sigma_v: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSolution {
    pub t: usize,
    pub sigma11: f64,
    pub sigma12: Vec<f64>,
    pub sigma13: Vec<f64>,
    #[serde(rename = "Sigma22")]
    pub sigma22: Matrix,
    #[serde(rename = "Sigma23")]
    pub sigma23: Matrix,
    #[serde(rename = "Sigma33")]
    pub sigma33: Matrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionFile {
    pub status: SolverStatus,
    /// Absent when the solver did not reach an optimum.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification: Option<PolicyKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_excitation_trace: Option<f64>,
    /// Frobenius norms of the propagation residuals.
    pub residuals: Vec<f64>,
    pub stages: Vec<StageSolution>,
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl SolutionFile {
    pub fn from_solution(sol: &SynthesisSolution) -> Self {
        let has_policies = !sol.policies.is_empty();
        let stages = sol
            .moments
            .iter()
            .enumerate()
            .map(|(t, s)| StageSolution {
                t,
                sigma11: s.sigma11(),
                sigma12: vec_of(&s.sigma12()),
                sigma13: vec_of(&s.sigma13()),
                sigma22: rows_of(&s.sigma22()),
                sigma23: rows_of(&s.sigma23()),
                sigma33: rows_of(&s.sigma33()),
                policy: sol.policies.get(t).map(|p| PolicySpec {
                    k1: vec_of(&p.k1),
                    k2: rows_of(&p.k2),
                    sigma_v: rows_of(&p.sigma_v),
                }),
            })
            .collect();
        Self {
            status: sol.solver_status,
            objective: (sol.solver_status == SolverStatus::Optimal)
                .then_some(sol.objective)
                .and_then(finite),
            iterations: sol.iterations,
            classification: has_policies.then(|| classify(&sol.policies, DEFAULT_DET_TOL)),
            max_excitation_trace: has_policies.then(|| max_excitation(&sol.policies)),
            residuals: sol
                .residuals
                .iter()
                .map(|r| if r.is_finite() { *r } else { f64::MAX })
                .collect(),
            stages,
        }
    }

    /// Checks the stage count and block sizes against `problem`.
    pub fn check_against(&self, problem: &SynthesisProblem) -> Result<()> {
        let (n, m) = (problem.dims.n, problem.dims.m);
        if self.stages.len() != problem.moment_count() {
            bail!(
                "solution has {} stages but the problem has {} moment matrices",
                self.stages.len(),
                problem.moment_count()
            );
        }
        for s in &self.stages {
            let ok = s.sigma12.len() == n
                && s.sigma13.len() == m
                && shape_is(&s.sigma22, n, n)
                && shape_is(&s.sigma23, n, m)
                && shape_is(&s.sigma33, m, m)
                && s.policy.as_ref().is_none_or(|p| {
                    p.k1.len() == m && shape_is(&p.k2, m, n) && shape_is(&p.sigma_v, m, m)
                });
            if !ok {
                bail!(
                    "stage {} of the solution does not match n = {n}, m = {m}",
                    s.t
                );
            }
        }
        Ok(())
    }

    pub fn moments(&self, n: usize, m: usize) -> Result<Vec<MomentMatrix>> {
        self.stages
            .iter()
            .map(|s| {
                let d = 1 + n + m;
                let mut mat = DMatrix::zeros(d, d);
                mat[(0, 0)] = s.sigma11;
                for i in 0..n {
                    mat[(0, 1 + i)] = s.sigma12[i];
                    mat[(1 + i, 0)] = s.sigma12[i];
                    for j in 0..n {
                        mat[(1 + i, 1 + j)] = s.sigma22[i][j];
                    }
                    for j in 0..m {
                        mat[(1 + i, 1 + n + j)] = s.sigma23[i][j];
                        mat[(1 + n + j, 1 + i)] = s.sigma23[i][j];
                    }
                }
                for i in 0..m {
                    mat[(0, 1 + n + i)] = s.sigma13[i];
                    mat[(1 + n + i, 0)] = s.sigma13[i];
                    for j in 0..m {
                        mat[(1 + n + i, 1 + n + j)] = s.sigma33[i][j];
                    }
                }
                Ok(MomentMatrix::new(mat, n, m)?)
            })
            .collect()
    }

    /// The stored policies, or `None` if any stage lacks one.
    pub fn policies(&self) -> Result<Option<Vec<AffinePolicy>>> {
        let mut out = Vec::with_capacity(self.stages.len());
        for s in &self.stages {
            let Some(p) = &s.policy else { return Ok(None) };
            let m = p.k1.len();
            let n = p.k2.first().map_or(0, Vec::len);
            let k2 = DMatrix::from_fn(m, n, |i, j| p.k2[i][j]);
            let sv = DMatrix::from_fn(m, m, |i, j| p.sigma_v[i][j]);
            out.push(AffinePolicy::new(
                DVector::from_column_slice(&p.k1),
                k2,
                sv,
            )?);
        }
        Ok(Some(out))
    }
}

fn shape_is(m: &Matrix, r: usize, c: usize) -> bool {
    m.len() == r && m.iter().all(|row| row.len() == c)
}
