//! Post-hoc checks of a moment sequence against its problem.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, Result};
use crate::extract::extract_policy;
use crate::linalg::min_eigenvalue;
use crate::model::{SynthesisMode, SynthesisProblem};
use crate::moments::{ftilde_residual, quad_expectation, AffinePolicy, MomentMatrix};
use crate::synthesis::Excitation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    /// Smallest eigenvalue of `Σₜ` divided by `max(1, ‖Σₜ‖)`.
    pub psd_margin: f64,
    /// `‖F̃‖_F / max(1, ‖Σₜ‖)` for the transition leaving this stage (the
    /// fixed-point residual for a stationary moment); zero for the last
    /// finite-horizon stage.
    pub residual: f64,
    /// Largest `trace(Σₜ H)` over the constraints of this stage.
    pub max_constraint: Option<f64>,
    /// `‖Σₜ − realize(πₜ)‖_F / ‖Σₜ‖_F` for the claimed or extracted policy `πₜ`,
    /// or `None` if extraction failed.
    pub roundtrip: Option<f64>,
    /// `λ_min(Σᵛ) − level`, when an excitation bound applies.
    pub excitation_margin: Option<f64>,
    pub sigma11: f64,
}

impl StageReport {
    pub fn failures(&self, tol: f64) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !(self.psd_margin >= -tol) {
            out.push("psd");
        }
        if !(self.residual <= tol) {
            out.push("propagation");
        }
        if self.max_constraint.is_some_and(|c| !(c <= tol)) {
            out.push("constraint");
        }
        if !self.roundtrip.is_some_and(|r| r <= tol) {
            out.push("roundtrip");
        }
        if self.excitation_margin.is_some_and(|e| !(e >= -tol)) {
            out.push("excitation");
        }
        if !((self.sigma11 - 1.0).abs() <= tol) {
            out.push("sigma11");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub tol: f64,
    pub stages: Vec<StageReport>,
    /// Relative gap between the reported objective and the one recomputed from
    /// the moments, when an objective was supplied.
    pub objective_gap: Option<f64>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.stages.iter().all(|s| s.failures(self.tol).is_empty())
            && self
                .objective_gap
                .is_none_or(|g| g <= self.tol.max(1e-9) * 10.0)
    }

    pub fn failing_stages(&self) -> Vec<usize> {
        self.stages
            .iter()
            .filter(|s| !s.failures(self.tol).is_empty())
            .map(|s| s.stage)
            .collect()
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3e}"));
        writeln!(
            f,
            "{:>5}  {:>11}  {:>11}  {:>11}  {:>11}  {:>11}  status",
            "stage", "psd margin", "residual", "max trΣH", "roundtrip", "excitation"
        )?;
        for s in &self.stages {
            let fails = s.failures(self.tol);
            writeln!(
                f,
                "{:>5}  {:>11.3e}  {:>11.3e}  {:>11}  {:>11}  {:>11}  {}",
                s.stage,
                s.psd_margin,
                s.residual,
                opt(s.max_constraint),
                opt(s.roundtrip),
                opt(s.excitation_margin),
                if fails.is_empty() {
                    "ok".to_string()
                } else {
                    format!("FAIL ({})", fails.join(", "))
                }
            )?;
        }
        if let Some(g) = self.objective_gap {
            writeln!(f, "objective relative gap {g:.3e}")?;
        }
        write!(
            f,
            "{} (tol {:e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.tol
        )
    }
}

/// Objective `Σₜ wₜ trace(Rₜ Σₜ)` with the weights used by the lowering.
pub fn objective(problem: &SynthesisProblem, moments: &[MomentMatrix]) -> Result<f64> {
    if moments.len() != problem.moment_count() {
        return Err(dim_mismatch(
            "moment count",
            problem.moment_count(),
            moments.len(),
        ));
    }
    let mut total = 0.0;
    for (t, sigma) in moments.iter().enumerate() {
        let (cost, weight) = match problem.mode {
            SynthesisMode::Finite => (&problem.costs[t], 1.0),
            SynthesisMode::Stationary => (&problem.costs[0], 1.0),
            SynthesisMode::StationaryTail { gamma } => (
                &problem.costs[0],
                crate::builder::tail_weight(t, problem.dims.horizon, gamma),
            ),
        };
        total += weight * quad_expectation(sigma, cost)?;
    }
    Ok(total)
}

pub const DEFAULT_VERIFY_TOL: f64 = 1e-6;

/// What to check besides the problem itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions<'a> {
    pub tol: f64,
    pub excitation: Option<Excitation>,
    /// Objective claimed for the moments.
    pub objective: Option<f64>,
    /// Policies claimed for the moments; extracted afresh when absent.
    pub policies: Option<&'a [AffinePolicy]>,
}

impl Default for VerifyOptions<'_> {
    fn default() -> Self {
        Self {
            tol: DEFAULT_VERIFY_TOL,
            excitation: None,
            objective: None,
            policies: None,
        }
    }
}

/// Checks every stage of `moments` against `problem`.
pub fn verify(
    problem: &SynthesisProblem,
    moments: &[MomentMatrix],
    options: &VerifyOptions,
) -> Result<VerifyReport> {
    if moments.len() != problem.moment_count() {
        return Err(dim_mismatch(
            "moment count",
            problem.moment_count(),
            moments.len(),
        ));
    }
    if let Some(p) = options.policies {
        if p.len() != moments.len() {
            return Err(dim_mismatch("policy count", moments.len(), p.len()));
        }
    }
    let tol = options.tol;
    let (n, m) = (problem.dims.n, problem.dims.m);
    let mut stages = Vec::with_capacity(moments.len());
    for (t, sigma) in moments.iter().enumerate() {
        if sigma.n() != n || sigma.m() != m {
            return Err(dim_mismatch(
                format!("moment {t}"),
                format!("n={n}, m={m}"),
                format!("n={}, m={}", sigma.n(), sigma.m()),
            ));
        }
        let scale = sigma.matrix().norm().max(1.0);
        let next = match problem.mode {
            SynthesisMode::Finite => moments.get(t + 1),
            _ => Some(moments.get(t + 1).unwrap_or(sigma)),
        };
        let residual = match next {
            Some(nx) => {
                ftilde_residual(sigma, &nx.state_moment(), problem.stage(t))?.norm() / scale
            }
            None => 0.0,
        };
        let max_constraint = problem
            .constraints_at(t)
            .map(|form| quad_expectation(sigma, form))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .reduce(f64::max);
        let policy = match options.policies {
            Some(p) => Some(p[t].clone()),
            None => extract_policy(sigma, crate::extract::DEFAULT_EXTRACT_TOL).ok(),
        };
        let roundtrip = policy.as_ref().and_then(|p| {
            MomentMatrix::realize(&sigma.state_moment(), p)
                .ok()
                .map(|r| r.frobenius_distance(sigma) / sigma.matrix().norm().max(f64::MIN_POSITIVE))
        });
        let excitation_margin = options
            .excitation
            .filter(|e| e.stages.includes(t))
            .map(|e| {
                let sv = policy
                    .as_ref()
                    .map_or_else(|| sigma.sigma33(), |p| p.sigma_v.clone());
                min_eigenvalue(&sv) - e.level
            });
        stages.push(StageReport {
            stage: t,
            psd_margin: min_eigenvalue(sigma.matrix()) / scale,
            residual,
            max_constraint,
            roundtrip,
            excitation_margin,
            sigma11: sigma.sigma11(),
        });
    }
    let objective_gap = match options.objective {
        Some(v) => {
            let recomputed = objective(problem, moments)?;
            Some((v - recomputed).abs() / recomputed.abs().max(1.0))
        }
        None => None,
    };
    Ok(VerifyReport {
        tol,
        stages,
        objective_gap,
    })
}
