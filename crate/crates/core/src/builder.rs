//! Lowering of [`SynthesisProblem`]s to block-diagonal SDPs over moment matrices.
//!
//! Each moment matrix `Σₜ` is one PSD block, except that a singular pinned
//! initial moment is parametrized as `Σ₀ = V Y Vᵀ` over the face it must lie
//! on. Without that reduction the program has no strictly feasible point,
//! which stalls interior-point solvers.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{StageSelector, SynthesisMode, SynthesisProblem, SystemStage};
use crate::moments::{padded_noise, transition_matrix, MomentMatrix, StateMoment};
use crate::sdp::SdpProblem;

/// Eigenvalues of a pinned initial moment below this fraction of the largest are treated as zero.
const FACE_RANK_TOL: f64 = 1e-12;

/// Where each moment matrix lives in the lowered SDP.
#[derive(Debug, Clone, PartialEq)]
pub struct LoweringMap {
    pub n: usize,
    pub m: usize,
    pub sigma_blocks: Vec<usize>,
    /// `Σₜ = Vₜ Xₜ Vₜᵀ` where a basis is present; otherwise `Σₜ = Xₜ` entry for entry.
    pub bases: Vec<Option<DMatrix<f64>>>,
    /// True when the program has a single stationary moment.
    pub stationary: bool,
    /// Auxiliary blocks added by [`add_schur_excitation`], as `(stage, block)`.
    pub excitation_blocks: Vec<(usize, usize)>,
}

impl LoweringMap {
    pub fn moment_dim(&self) -> usize {
        1 + self.n + self.m
    }

    pub fn stage_count(&self) -> usize {
        self.sigma_blocks.len()
    }

    fn check_stage(&self, t: usize) -> Result<()> {
        if t >= self.sigma_blocks.len() {
            return Err(Error::OutOfRange {
                what: "moment stage".into(),
                index: t,
                len: self.sigma_blocks.len(),
            });
        }
        Ok(())
    }

    /// SDP term `(block, A')` with `trace(A' X_block) = trace(A Σₜ)`.
    pub fn term(&self, t: usize, coeff: &DMatrix<f64>) -> Result<(usize, DMatrix<f64>)> {
        self.check_stage(t)?;
        let block = self.sigma_blocks[t];
        let c = match &self.bases[t] {
            Some(v) => v.transpose() * coeff * v,
            None => coeff.clone(),
        };
        Ok((block, c))
    }

    /// `Σₜ` read back from a solved SDP.
    pub fn moment(&self, t: usize, x: &[DMatrix<f64>]) -> Result<MomentMatrix> {
        self.check_stage(t)?;
        let b = self.sigma_blocks[t];
        let xb = x.get(b).ok_or_else(|| Error::OutOfRange {
            what: "SDP block".into(),
            index: b,
            len: x.len(),
        })?;
        let data = match &self.bases[t] {
            Some(v) => v * xb * v.transpose(),
            None => xb.clone(),
        };
        MomentMatrix::new(data, self.n, self.m)
    }

    pub fn moments(&self, x: &[DMatrix<f64>]) -> Result<Vec<MomentMatrix>> {
        (0..self.stage_count()).map(|t| self.moment(t, x)).collect()
    }
}

/// `(E_ij + E_ji)/2` padded to `d×d`, so that `trace(E Σ) = Σ[i, j]`.
fn unit(d: usize, i: usize, j: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(d, d);
    if i == j {
        e[(i, i)] = 1.0;
    } else {
        e[(i, j)] = 0.5;
        e[(j, i)] = 0.5;
    }
    e
}

/// `sym(g_i g_jᵀ)` for rows `g_i`, `g_j` of `G`, so that `trace(· Σ) = (G Σ Gᵀ)[i, j]`.
fn propagated_entry(g: &DMatrix<f64>, i: usize, j: usize) -> DMatrix<f64> {
    let gi = g.row(i).transpose();
    let gj = g.row(j).transpose();
    let outer = &gi * gj.transpose();
    (&outer + outer.transpose()) * 0.5
}

fn lower_triangle(k: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..k).flat_map(move |j| (j..k).map(move |i| (i, j)))
}

/// Basis `blockdiag(U, I_m)` with `U` spanning the range of a rank-deficient `initial`.
fn face_basis(initial: &StateMoment, m: usize) -> Option<DMatrix<f64>> {
    let s = initial.matrix();
    let k = s.nrows();
    let eig = SymmetricEigen::new(s.clone());
    let top = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let keep: Vec<usize> = (0..k)
        .filter(|&i| eig.eigenvalues[i] > FACE_RANK_TOL * top)
        .collect();
    if keep.len() == k {
        return None;
    }
    let r = keep.len();
    let mut v = DMatrix::zeros(k + m, r + m);
    for (c, &i) in keep.iter().enumerate() {
        v.view_mut((0, c), (k, 1))
            .copy_from(&eig.eigenvectors.column(i));
    }
    v.view_mut((k, r), (m, m)).fill_with_identity();
    Some(v)
}

struct Lowering {
    sdp: SdpProblem,
    map: LoweringMap,
}

impl Lowering {
    fn new(
        problem: &SynthesisProblem,
        count: usize,
        reduce_first: bool,
        stationary: bool,
    ) -> Result<Self> {
        let (n, m) = (problem.dims.n, problem.dims.m);
        let d = problem.dims.moment_dim();
        let mut sdp = SdpProblem::new();
        let mut sigma_blocks = Vec::with_capacity(count);
        let mut bases = Vec::with_capacity(count);
        for t in 0..count {
            let basis = if t == 0 && reduce_first {
                face_basis(&problem.initial, m)
            } else {
                None
            };
            let size = basis.as_ref().map_or(d, |v| v.ncols());
            let name = if stationary {
                "sigma".to_string()
            } else {
                format!("sigma_{t}")
            };
            sigma_blocks.push(sdp.add_block(name, size)?);
            bases.push(basis);
        }
        Ok(Self {
            sdp,
            map: LoweringMap {
                n,
                m,
                sigma_blocks,
                bases,
                stationary,
                excitation_blocks: Vec::new(),
            },
        })
    }

    fn d(&self) -> usize {
        self.map.moment_dim()
    }

    fn pin_initial(&mut self, initial: &StateMoment) -> Result<()> {
        let s = initial.matrix();
        for (i, j) in lower_triangle(s.nrows()) {
            let term = self.map.term(0, &unit(self.d(), i, j))?;
            self.sdp.add_equality(vec![term], s[(i, j)])?;
        }
        Ok(())
    }

    /// `Σₜ₊₁(1,x) = G Σₜ Gᵀ + blockdiag(0, Σʷ)` entry-wise on the lower triangle.
    fn recursion(&mut self, t: usize, stage: &SystemStage) -> Result<()> {
        let g = transition_matrix(stage);
        let w = padded_noise(stage);
        for (i, j) in lower_triangle(g.nrows()) {
            let next = self.map.term(t + 1, &unit(self.d(), i, j))?;
            let cur = self.map.term(t, &-propagated_entry(&g, i, j))?;
            self.sdp.add_equality(vec![next, cur], w[(i, j)])?;
        }
        Ok(())
    }

    /// `σ¹¹ = 1` and `Σ(1,x) = G Σ Gᵀ + blockdiag(0, Σʷ)` on moment `t`.
    fn stationarity(&mut self, t: usize, stage: &SystemStage) -> Result<()> {
        let term = self.map.term(t, &unit(self.d(), 0, 0))?;
        self.sdp.add_equality(vec![term], 1.0)?;
        let g = transition_matrix(stage);
        let w = padded_noise(stage);
        for (i, j) in lower_triangle(g.nrows()) {
            // The (0, 0) row is identically zero and is removed by the solver presolve.
            let coeff = unit(self.d(), i, j) - propagated_entry(&g, i, j);
            let term = self.map.term(t, &coeff)?;
            self.sdp.add_equality(vec![term], w[(i, j)])?;
        }
        Ok(())
    }

    fn constraints(&mut self, problem: &SynthesisProblem, t: usize) -> Result<()> {
        for form in problem.constraints_at(t) {
            let term = self.map.term(t, form.matrix())?;
            self.sdp.add_inequality(vec![term], 0.0)?;
        }
        Ok(())
    }

    fn objective(&mut self, t: usize, cost: &DMatrix<f64>) -> Result<()> {
        let (block, c) = self.map.term(t, cost)?;
        self.sdp.add_objective(block, &c)
    }

    fn finish(self) -> (SdpProblem, LoweringMap) {
        (self.sdp, self.map)
    }
}

fn require_mode(problem: &SynthesisProblem, ok: bool, expected: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "mode".into(),
            reason: format!("expected {expected}, found {:?}", problem.mode),
        })
    }
}

fn require_normalized(initial: &StateMoment) -> Result<()> {
    if (initial.sigma11() - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter {
            name: "initial.sigma11".into(),
            reason: format!("must be 1, found {}", initial.sigma11()),
        });
    }
    Ok(())
}

/// Finite-horizon program over `Σ₀ … Σ_N`.
pub fn build_finite(problem: &SynthesisProblem) -> Result<(SdpProblem, LoweringMap)> {
    require_mode(problem, problem.mode == SynthesisMode::Finite, "finite")?;
    require_normalized(&problem.initial)?;
    let horizon = problem.dims.horizon;
    let mut low = Lowering::new(problem, horizon + 1, true, false)?;
    low.pin_initial(&problem.initial)?;
    for t in 0..horizon {
        low.recursion(t, problem.stage(t))?;
    }
    for t in 0..=horizon {
        low.constraints(problem, t)?;
        low.objective(t, problem.costs[t].matrix())?;
    }
    Ok(low.finish())
}

/// Average-cost stationary program over a single `Σ`.
pub fn build_stationary(problem: &SynthesisProblem) -> Result<(SdpProblem, LoweringMap)> {
    require_mode(
        problem,
        problem.mode == SynthesisMode::Stationary,
        "stationary",
    )?;
    let mut low = Lowering::new(problem, 1, false, true)?;
    low.stationarity(0, problem.stage(0))?;
    low.constraints(problem, 0)?;
    low.objective(0, problem.costs[0].matrix())?;
    Ok(low.finish())
}

/// Objective weight of moment `t` in the discounted stationary-tail program.
pub fn tail_weight(t: usize, horizon: usize, gamma: f64) -> f64 {
    let g = gamma.powi(t as i32);
    if t < horizon {
        g
    } else {
        g / (1.0 - gamma)
    }
}

/// `N` transient moments followed by a stationary moment `Σ_N`, with discounted cost.
///
/// With `N = 0` there is no transient and the initial moment is not pinned,
/// which makes the program the stationary one with its objective scaled by
/// `1/(1−γ)`.
pub fn build_stationary_tail(problem: &SynthesisProblem) -> Result<(SdpProblem, LoweringMap)> {
    let SynthesisMode::StationaryTail { gamma } = problem.mode else {
        return Err(Error::InvalidParameter {
            name: "mode".into(),
            reason: format!("expected stationary_tail, found {:?}", problem.mode),
        });
    };
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidParameter {
            name: "gamma".into(),
            reason: format!("discount {gamma} outside [0, 1)"),
        });
    }
    let horizon = problem.dims.horizon;
    let mut low = Lowering::new(problem, horizon + 1, horizon > 0, horizon == 0)?;
    if horizon > 0 {
        require_normalized(&problem.initial)?;
        low.pin_initial(&problem.initial)?;
    }
    for t in 0..horizon {
        low.recursion(t, problem.stage(t))?;
    }
    low.stationarity(horizon, problem.stage(horizon))?;
    let cost = problem.costs[0].matrix();
    for t in 0..=horizon {
        low.constraints(problem, t)?;
        let w = tail_weight(t, horizon, gamma);
        if w != 0.0 {
            low.objective(t, &(cost * w))?;
        }
    }
    Ok(low.finish())
}

/// Lowers according to the problem's mode.
pub fn build(problem: &SynthesisProblem) -> Result<(SdpProblem, LoweringMap)> {
    match problem.mode {
        SynthesisMode::Finite => build_finite(problem),
        SynthesisMode::Stationary => build_stationary(problem),
        SynthesisMode::StationaryTail { .. } => build_stationary_tail(problem),
    }
}

/// Requires `Σᵛ ⪰ level·I` at the selected stages.
///
/// For each stage an auxiliary block `W` is tied entry-wise to
/// `Σ − level·blockdiag(0, 0, I)`. Since `Σᵛ` is the Schur complement of the
/// `(1,x)` block in `Σ`, `W ⪰ 0` is the same as the bound on `Σᵛ`.
pub fn add_schur_excitation(
    sdp: &mut SdpProblem,
    map: &mut LoweringMap,
    stages: StageSelector,
    level: f64,
) -> Result<()> {
    if !(level >= 0.0) || !level.is_finite() {
        return Err(Error::InvalidParameter {
            name: "excitation level".into(),
            reason: format!("must be finite and nonnegative, found {level}"),
        });
    }
    let d = map.moment_dim();
    if let StageSelector::At(t) = stages {
        map.check_stage(t)?;
    }
    for t in 0..map.stage_count() {
        if !stages.includes(t) {
            continue;
        }
        let aux = sdp.add_block(format!("excitation_{t}_{}", map.excitation_blocks.len()), d)?;
        for (i, j) in lower_triangle(d) {
            let rhs = if i == j && i > map.n { -level } else { 0.0 };
            let e = unit(d, i, j);
            let sigma = map.term(t, &-&e)?;
            sdp.add_equality(vec![(aux, e), sigma], rhs)?;
        }
        map.excitation_blocks.push((t, aux));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dimensions, QuadraticForm, StageConstraint};
    use crate::sdp::{solve, SolverSettings, SolverStatus};
    use nalgebra::DVector;

    fn scalar_stage(a: f64, b: f64, w: f64) -> SystemStage {
        SystemStage::new(
            DVector::zeros(1),
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, w),
        )
        .unwrap()
    }

    fn diag3(a: f64, b: f64, c: f64) -> QuadraticForm {
        QuadraticForm::cost(DMatrix::from_diagonal(&DVector::from_vec(vec![a, b, c]))).unwrap()
    }

    fn finite_scalar(horizon: usize) -> SynthesisProblem {
        SynthesisProblem::new(
            Dimensions::new(1, 1, horizon).unwrap(),
            vec![scalar_stage(0.5, 1.0, 0.2); horizon],
            vec![diag3(0.0, 1.0, 1.0); horizon + 1],
            vec![],
            StateMoment::from_mean_cov(
                &DVector::from_element(1, 1.0),
                &DMatrix::from_element(1, 1, 2.0),
            )
            .unwrap(),
            SynthesisMode::Finite,
        )
        .unwrap()
    }

    fn stationary_scalar(a: f64, b: f64, w: f64, cost: QuadraticForm) -> SynthesisProblem {
        SynthesisProblem::new(
            Dimensions::new(1, 1, 0).unwrap(),
            vec![scalar_stage(a, b, w)],
            vec![cost],
            vec![],
            StateMoment::dirac(&DVector::zeros(1)),
            SynthesisMode::Stationary,
        )
        .unwrap()
    }

    #[test]
    fn finite_counts() {
        let (sdp, map) = build_finite(&finite_scalar(1)).unwrap();
        assert_eq!(sdp.blocks().len(), 2);
        assert!(sdp.blocks().iter().all(|b| b.size == 3));
        assert_eq!(sdp.equalities().len(), 6);
        assert_eq!(sdp.inequalities().len(), 0);
        assert_eq!(map.sigma_blocks, vec![0, 1]);
        assert_eq!(map.bases, vec![None, None]);
        assert!(map.term(2, &DMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn finite_constraint_counts() {
        let mut p = finite_scalar(3);
        p.constraints = vec![
            StageConstraint {
                stage: StageSelector::All,
                form: QuadraticForm::leq_zero(DMatrix::identity(3, 3)).unwrap(),
            },
            StageConstraint {
                stage: StageSelector::At(2),
                form: QuadraticForm::leq_zero(DMatrix::identity(3, 3)).unwrap(),
            },
        ];
        let (sdp, _) = build_finite(&p).unwrap();
        assert_eq!(sdp.inequalities().len(), 5);
    }

    #[test]
    fn wrong_mode_rejected() {
        let p = stationary_scalar(0.5, 1.0, 1.0, diag3(0.0, 1.0, 1.0));
        assert!(build_finite(&p).is_err());
        assert!(build_stationary_tail(&p).is_err());
        assert!(build_stationary(&finite_scalar(1)).is_err());
    }

    #[test]
    fn recursion_rows_encode_propagation() {
        let p = finite_scalar(1);
        let (sdp, _) = build_finite(&p).unwrap();
        let s0 = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.2, 1.0, 3.0, 0.4, 0.2, 0.4, 1.5]);
        let sigma0 = MomentMatrix::new(s0.clone(), 1, 1).unwrap();
        let next = crate::moments::propagate_moment(&sigma0, p.stage(0)).unwrap();
        let mut s1 = DMatrix::zeros(3, 3);
        s1.view_mut((0, 0), (2, 2)).copy_from(next.matrix());
        s1[(2, 2)] = 1.0;
        let x = vec![s0, s1];
        assert!(sdp.max_equality_residual(&x) < 1e-12);
    }

    #[test]
    fn dirac_initial_is_face_reduced() {
        let mut p = finite_scalar(2);
        p.initial = StateMoment::dirac(&DVector::from_element(1, 2.0));
        let (sdp, map) = build_finite(&p).unwrap();
        assert_eq!(sdp.blocks()[0].size, 2);
        assert!(map.bases[0].is_some() && map.bases[1].is_none());
        assert_eq!(sdp.equalities().len(), 9);
        let sol = solve(&sdp, &SolverSettings::default());
        assert_eq!(sol.status, SolverStatus::Optimal);
        let s0 = map.moment(0, &sol.x).unwrap();
        assert!((s0.state_moment().matrix() - p.initial.matrix()).amax() < 1e-8);
    }

    #[test]
    fn tail_weights() {
        let w: Vec<f64> = (0..=2).map(|t| tail_weight(t, 2, 0.5)).collect();
        assert_eq!(w, vec![1.0, 0.5, 0.5]);
        assert_eq!(tail_weight(1, 1, 0.0), 0.0);
        assert_eq!(tail_weight(0, 0, 0.0), 1.0);
    }

    #[test]
    fn tail_with_zero_horizon_matches_stationary() {
        let stat = stationary_scalar(0.5, 1.0, 1.0, diag3(0.0, 1.0, 1.0));
        let mut tail = stat.clone();
        tail.mode = SynthesisMode::StationaryTail { gamma: 0.75 };
        let (a, _) = build_stationary(&stat).unwrap();
        let (b, _) = build_stationary_tail(&tail).unwrap();
        assert_eq!(a.equalities(), b.equalities());
        assert_eq!(a.inequalities(), b.inequalities());
        assert!((&a.objective()[0] * 4.0 - &b.objective()[0]).amax() < 1e-15);
    }

    #[test]
    fn noiseless_stationary_sits_at_origin() {
        let p = stationary_scalar(0.5, 1.0, 0.0, diag3(2.0, 1.0, 1.0));
        let (sdp, map) = build_stationary(&p).unwrap();
        let sol = solve(&sdp, &SolverSettings::default());
        assert_eq!(sol.status, SolverStatus::Optimal);
        assert!((sol.objective - 2.0).abs() < 1e-7);
        let sigma = &map.moments(&sol.x).unwrap()[0];
        let mut e1 = DMatrix::zeros(3, 3);
        e1[(0, 0)] = 1.0;
        assert!((sigma.matrix() - e1).amax() < 1e-6);
    }

    #[test]
    fn stationary_scalar_lqr_average_cost() {
        // Scalar ARE P = q + a²P − (abP)²/(r + b²P) with a = 0.5, b = q = r = 1;
        // the average cost is P·Σʷ.
        let (a, b, q, r, w) = (0.5_f64, 1.0, 1.0, 1.0, 1.0);
        let mut pr = q;
        for _ in 0..200 {
            pr = q + a * a * pr - (a * b * pr).powi(2) / (r + b * b * pr);
        }
        let p = stationary_scalar(a, b, w, diag3(0.0, q, r));
        let (sdp, _) = build_stationary(&p).unwrap();
        let sol = solve(&sdp, &SolverSettings::default());
        assert_eq!(sol.status, SolverStatus::Optimal);
        assert!(
            (sol.objective - pr * w).abs() < 1e-6 * pr,
            "{} vs {}",
            sol.objective,
            pr * w
        );
    }

    #[test]
    fn excitation_zero_level_is_redundant() {
        let p = stationary_scalar(0.5, 1.0, 1.0, diag3(0.0, 1.0, 1.0));
        let (sdp, _) = build_stationary(&p).unwrap();
        let base = solve(&sdp, &SolverSettings::default());
        let (mut sdp2, mut map) = build_stationary(&p).unwrap();
        add_schur_excitation(&mut sdp2, &mut map, StageSelector::All, 0.0).unwrap();
        assert_eq!(sdp2.blocks().len(), 2);
        assert_eq!(map.excitation_blocks, vec![(0, 1)]);
        let sol = solve(&sdp2, &SolverSettings::default());
        assert_eq!(sol.status, SolverStatus::Optimal);
        assert!((sol.objective - base.objective).abs() < 1e-6);
    }

    #[test]
    fn excitation_active_in_scalar_case() {
        // x ≡ 0 is pinned through A = 0, B = 0, Σʷ = 1 making Σ²² = 1 with no
        // cross terms; minimizing Σ³³ then lands on the bound.
        let p = stationary_scalar(0.0, 0.0, 1.0, diag3(0.0, 0.0, 1.0));
        let (mut sdp, mut map) = build_stationary(&p).unwrap();
        add_schur_excitation(&mut sdp, &mut map, StageSelector::All, 0.3).unwrap();
        let sol = solve(&sdp, &SolverSettings::default());
        assert_eq!(sol.status, SolverStatus::Optimal);
        let sigma = &map.moments(&sol.x).unwrap()[0];
        assert!((sigma.sigma33()[(0, 0)] - 0.3).abs() < 1e-6);
        assert!(add_schur_excitation(&mut sdp, &mut map, StageSelector::All, -1.0).is_err());
        assert!(add_schur_excitation(&mut sdp, &mut map, StageSelector::At(4), 1.0).is_err());
    }
}
