//! Infeasible-start primal-dual interior-point method with the HKM search
//! direction and a Mehrotra predictor-corrector.
//!
//! Inequalities become equalities with nonnegative slacks, which are kept in
//! a separate diagonal (LP) block. Rows are normalized, linearly dependent
//! equalities are removed up front (an inconsistent dependent row is reported
//! as infeasible), and `b` and `C` are scaled to unit size before iterating.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::{svec, SdpProblem, SdpSolution, SolverSettings, SolverStatus};
use crate::linalg::frob_dot;

const DEPENDENT_ROW_TOL: f64 = 1e-10;
const INFEASIBILITY_TOL: f64 = 1e-8;
const STALL_LIMIT: usize = 8;
const REFINE_STEPS: usize = 2;

struct Row {
    psd: Vec<(usize, DMatrix<f64>)>,
    lp: Vec<(usize, f64)>,
}

/// Scaled problem fed to the iteration.
struct Scaled {
    sizes: Vec<usize>,
    n_lp: usize,
    c: Vec<DMatrix<f64>>,
    c_lp: DVector<f64>,
    rows: Vec<Row>,
    b: DVector<f64>,
    /// For each PSD block, `(row, term)` pairs touching it.
    by_block: Vec<Vec<(usize, usize)>>,
    /// For each LP variable, `(row, coefficient)` pairs touching it.
    by_lp: Vec<Vec<(usize, f64)>>,
    b_scale: f64,
    norm_b: f64,
    norm_c: f64,
}

enum Presolve {
    Ready(Scaled),
    Inconsistent,
}

#[derive(Clone)]
struct Point {
    x: Vec<DMatrix<f64>>,
    xl: DVector<f64>,
    y: DVector<f64>,
    z: Vec<DMatrix<f64>>,
    zl: DVector<f64>,
}

struct Direction {
    dx: Vec<DMatrix<f64>>,
    dxl: DVector<f64>,
    dy: DVector<f64>,
    dz: Vec<DMatrix<f64>>,
    dzl: DVector<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Outcome {
    Converged,
    PrimalInfeasible,
    DualInfeasible,
    Stalled,
    IterationLimit,
}

/// Solves `problem`; failures are reported through [`SdpSolution::status`].
pub fn solve(problem: &SdpProblem, settings: &SolverSettings) -> SdpSolution {
    let blocks = problem.blocks();
    let zero_x: Vec<DMatrix<f64>> = blocks
        .iter()
        .map(|b| DMatrix::zeros(b.size, b.size))
        .collect();

    let scaled = match presolve(problem) {
        Presolve::Ready(s) => s,
        Presolve::Inconsistent => {
            log::debug!("sdp: inconsistent linear equalities");
            return finish(
                problem,
                zero_x,
                SolverStatus::Infeasible,
                0,
                f64::INFINITY,
                settings,
            );
        }
    };

    let (point, outcome, iterations, gap) = iterate(&scaled, settings);
    let x: Vec<DMatrix<f64>> = point.x.iter().map(|xb| xb * scaled.b_scale).collect();
    let status = match outcome {
        Outcome::PrimalInfeasible => SolverStatus::Infeasible,
        Outcome::DualInfeasible => SolverStatus::Unbounded,
        Outcome::Converged | Outcome::Stalled | Outcome::IterationLimit => SolverStatus::Optimal,
    };
    finish(problem, x, status, iterations, gap, settings)
}

/// Fills in residual statistics on the original problem and downgrades an
/// `Optimal` claim that does not meet the tolerances.
fn finish(
    problem: &SdpProblem,
    x: Vec<DMatrix<f64>>,
    mut status: SolverStatus,
    iterations: usize,
    relative_gap: f64,
    settings: &SolverSettings,
) -> SdpSolution {
    let max_eq_residual = problem.max_equality_residual(&x);
    let max_ineq_violation = problem.max_inequality_violation(&x);
    let min_block_eigenvalue = SdpProblem::min_block_eigenvalue(&x);
    let objective = problem.objective_value(&x);
    if status == SolverStatus::Optimal {
        let b_eq = problem
            .equalities()
            .iter()
            .map(|c| c.rhs.abs())
            .fold(0.0, f64::max);
        let b_in = problem
            .inequalities()
            .iter()
            .map(|c| c.rhs.abs())
            .fold(0.0, f64::max);
        let ok = max_eq_residual <= settings.feas_tol * (1.0 + b_eq)
            && max_ineq_violation <= settings.feas_tol * (1.0 + b_in)
            && min_block_eigenvalue >= -settings.feas_tol
            && relative_gap <= settings.gap_tol
            && objective.is_finite();
        if !ok {
            log::debug!(
                "sdp: tolerances not met (eq {max_eq_residual:e}, ineq {max_ineq_violation:e}, \
                 eig {min_block_eigenvalue:e}, gap {relative_gap:e})"
            );
            status = SolverStatus::NumericalTrouble;
        }
    }
    SdpSolution {
        x,
        objective,
        status,
        iterations,
        max_eq_residual,
        max_ineq_violation,
        min_block_eigenvalue,
        relative_gap,
    }
}

fn presolve(problem: &SdpProblem) -> Presolve {
    let sizes: Vec<usize> = problem.blocks().iter().map(|b| b.size).collect();
    let n_lp = problem.inequalities().len();

    let mut rows: Vec<Row> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for c in problem.equalities() {
        rows.push(Row {
            psd: c.terms.iter().map(|t| (t.block, t.coeff.clone())).collect(),
            lp: Vec::new(),
        });
        rhs.push(c.rhs);
    }
    for (i, c) in problem.inequalities().iter().enumerate() {
        rows.push(Row {
            psd: c.terms.iter().map(|t| (t.block, t.coeff.clone())).collect(),
            lp: vec![(i, 1.0)],
        });
        rhs.push(c.rhs);
    }

    // Normalize rows.
    for (row, r) in rows.iter_mut().zip(rhs.iter_mut()) {
        let norm = row_norm(row);
        if norm > 0.0 {
            for (_, a) in row.psd.iter_mut() {
                *a /= norm;
            }
            for (_, a) in row.lp.iter_mut() {
                *a /= norm;
            }
            *r /= norm;
        }
    }

    let keep = match independent_rows(&rows, &rhs, &sizes, n_lp) {
        Some(k) => k,
        None => return Presolve::Inconsistent,
    };
    let (rows, rhs): (Vec<Row>, Vec<f64>) = rows
        .into_iter()
        .zip(rhs)
        .enumerate()
        .filter(|(k, _)| keep[*k])
        .map(|(_, pair)| pair)
        .unzip();

    let b_scale = rhs.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())).max(1.0);
    let c_norm_raw = problem
        .objective()
        .iter()
        .map(|c| c.norm_squared())
        .sum::<f64>()
        .sqrt();
    let c_scale = c_norm_raw.max(1.0);

    let b = DVector::from_iterator(rhs.len(), rhs.iter().map(|v| v / b_scale));
    let c: Vec<DMatrix<f64>> = problem.objective().iter().map(|cb| cb / c_scale).collect();
    let c_lp = DVector::zeros(n_lp);

    let mut by_block = vec![Vec::new(); sizes.len()];
    let mut by_lp = vec![Vec::new(); n_lp];
    for (k, row) in rows.iter().enumerate() {
        for (t, (blk, _)) in row.psd.iter().enumerate() {
            by_block[*blk].push((k, t));
        }
        for (l, a) in &row.lp {
            by_lp[*l].push((k, *a));
        }
    }
    let norm_b = b.norm();
    let norm_c = c.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt();

    Presolve::Ready(Scaled {
        sizes,
        n_lp,
        c,
        c_lp,
        rows,
        b,
        by_block,
        by_lp,
        b_scale,
        norm_b,
        norm_c,
    })
}

fn row_norm(row: &Row) -> f64 {
    let psd: f64 = row.psd.iter().map(|(_, a)| a.norm_squared()).sum();
    let lp: f64 = row.lp.iter().map(|(_, a)| a * a).sum();
    (psd + lp).sqrt()
}

/// Modified Gram-Schmidt over the rows in svec coordinates. Returns the mask
/// of rows to keep, or `None` when a dependent row contradicts the others.
fn independent_rows(rows: &[Row], rhs: &[f64], sizes: &[usize], n_lp: usize) -> Option<Vec<bool>> {
    let mut offsets = Vec::with_capacity(sizes.len());
    let mut total = 0;
    for s in sizes {
        offsets.push(total);
        total += s * (s + 1) / 2;
    }
    let lp_offset = total;
    total += n_lp;

    let dense = |row: &Row| -> DVector<f64> {
        let mut v = DVector::zeros(total);
        for (blk, a) in &row.psd {
            let sv = svec(a).expect("square coefficient");
            v.rows_mut(offsets[*blk], sv.len()).copy_from(&sv);
        }
        for (l, a) in &row.lp {
            v[lp_offset + l] = *a;
        }
        v
    };

    // Kept rows satisfy A_S = L Q with orthonormal rows q; w solves L w = b_S.
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut w: Vec<f64> = Vec::new();
    let mut keep = vec![false; rows.len()];
    for (k, row) in rows.iter().enumerate() {
        let a = dense(row);
        let a_norm = a.norm();
        if a_norm == 0.0 {
            if rhs[k].abs() > INFEASIBILITY_TOL {
                return None;
            }
            continue;
        }
        let mut v = a.clone();
        let mut coef = vec![0.0; basis.len()];
        for _ in 0..2 {
            for (j, q) in basis.iter().enumerate() {
                let c = q.dot(&v);
                if c != 0.0 {
                    v.axpy(-c, q, 1.0);
                    coef[j] += c;
                }
            }
        }
        let resid = v.norm();
        let implied: f64 = coef.iter().zip(&w).map(|(c, wj)| c * wj).sum();
        if resid > DEPENDENT_ROW_TOL * a_norm {
            basis.push(v / resid);
            w.push((rhs[k] - implied) / resid);
            keep[k] = true;
        } else if (implied - rhs[k]).abs() > INFEASIBILITY_TOL * (1.0 + rhs[k].abs()) {
            return None;
        }
    }
    Some(keep)
}

impl Scaled {
    fn n_rows(&self) -> usize {
        self.rows.len()
    }

    fn nu(&self) -> f64 {
        (self.sizes.iter().sum::<usize>() + self.n_lp) as f64
    }

    /// `𝒜(X)`; the matrices may be non-symmetric.
    fn apply_a(&self, x: &[DMatrix<f64>], xl: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.n_rows(),
            self.rows.iter().map(|row| {
                let psd: f64 = row.psd.iter().map(|(b, a)| frob_dot(a, &x[*b])).sum();
                let lp: f64 = row.lp.iter().map(|(l, a)| a * xl[*l]).sum();
                psd + lp
            }),
        )
    }

    /// `𝒜*(y)`.
    fn apply_at(&self, y: &DVector<f64>) -> (Vec<DMatrix<f64>>, DVector<f64>) {
        let mut out: Vec<DMatrix<f64>> = self.sizes.iter().map(|&s| DMatrix::zeros(s, s)).collect();
        let mut out_l = DVector::zeros(self.n_lp);
        for (k, row) in self.rows.iter().enumerate() {
            let yk = y[k];
            if yk == 0.0 {
                continue;
            }
            for (b, a) in &row.psd {
                out[*b] += a * yk;
            }
            for (l, a) in &row.lp {
                out_l[*l] += yk * a;
            }
        }
        (out, out_l)
    }

    /// HKM Schur complement `M_kj = trace(A_k X A_j Z⁻¹)` plus the LP part.
    fn schur(
        &self,
        x: &[DMatrix<f64>],
        xl: &DVector<f64>,
        zinv: &[DMatrix<f64>],
        zl: &DVector<f64>,
    ) -> DMatrix<f64> {
        let m = self.n_rows();
        let mut schur = DMatrix::zeros(m, m);
        for (blk, touching) in self.by_block.iter().enumerate() {
            for (p, &(k, tk)) in touching.iter().enumerate() {
                let ak = &self.rows[k].psd[tk].1;
                let g = &x[blk] * ak * &zinv[blk];
                for &(j, tj) in &touching[..=p] {
                    let aj = &self.rows[j].psd[tj].1;
                    let v = frob_dot(aj, &g);
                    schur[(k, j)] += v;
                    if j != k {
                        schur[(j, k)] += v;
                    }
                }
            }
        }
        for (l, touching) in self.by_lp.iter().enumerate() {
            let ratio = xl[l] / zl[l];
            for (p, &(k, ak)) in touching.iter().enumerate() {
                for &(j, aj) in &touching[..=p] {
                    let v = ak * aj * ratio;
                    schur[(k, j)] += v;
                    if j != k {
                        schur[(j, k)] += v;
                    }
                }
            }
        }
        schur
    }

    fn initial_point(&self) -> Point {
        let mut x = Vec::with_capacity(self.sizes.len());
        let mut z = Vec::with_capacity(self.sizes.len());
        for (blk, &d) in self.sizes.iter().enumerate() {
            let df = d as f64;
            let mut xi = 10.0_f64.max(df.sqrt());
            let mut eta = 10.0_f64.max(df.sqrt()).max(self.c[blk].norm());
            for &(k, t) in &self.by_block[blk] {
                let a_norm = self.rows[k].psd[t].1.norm();
                xi = xi.max(df * (1.0 + self.b[k].abs()) / (1.0 + a_norm));
                eta = eta.max(a_norm);
            }
            x.push(DMatrix::identity(d, d) * xi);
            z.push(DMatrix::identity(d, d) * eta);
        }
        let mut xl: DVector<f64> = DVector::from_element(self.n_lp, 10.0);
        for (l, touching) in self.by_lp.iter().enumerate() {
            for &(k, a) in touching {
                xl[l] = xl[l].max((1.0 + self.b[k].abs()) / (1.0 + a.abs()));
            }
        }
        let zl = DVector::from_element(self.n_lp, 10.0);
        Point {
            x,
            xl,
            y: DVector::zeros(self.n_rows()),
            z,
            zl,
        }
    }
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn inner(a: &[DMatrix<f64>], al: &DVector<f64>, b: &[DMatrix<f64>], bl: &DVector<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| frob_dot(x, y)).sum::<f64>() + al.dot(bl)
}

/// Largest `α` with `X + α dX ⪰ 0`, or infinity.
fn max_step_psd(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    let chol = match Cholesky::new(x.clone()) {
        Some(c) => c,
        None => return 0.0,
    };
    let l = chol.l();
    let Some(linv) = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(x.nrows(), x.nrows()))
    else {
        return 0.0;
    };
    let w = sym(&(&linv * dx * linv.transpose()));
    let lo = crate::linalg::min_eigenvalue(&w);
    if lo >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lo
    }
}

fn max_step_lp(x: &DVector<f64>, dx: &DVector<f64>) -> f64 {
    x.iter()
        .zip(dx.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(v, d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

fn max_step(x: &[DMatrix<f64>], xl: &DVector<f64>, dx: &[DMatrix<f64>], dxl: &DVector<f64>) -> f64 {
    let psd = x
        .iter()
        .zip(dx)
        .map(|(a, d)| max_step_psd(a, d))
        .fold(f64::INFINITY, f64::min);
    psd.min(max_step_lp(xl, dxl))
}

fn inverse_spd(z: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    Cholesky::new(z.clone()).map(|c| {
        let inv = c.inverse();
        sym(&inv)
    })
}

/// Cholesky factor of the Schur complement that tolerates semidefiniteness.
///
/// Near the optimum of a degenerate program the Schur complement becomes
/// singular. Pivots that collapse below `PIVOT_TOL` times their original
/// diagonal are skipped, which sets the matching component of the solution to
/// zero instead of perturbing every row.
struct SchurFactor {
    l: DMatrix<f64>,
    skipped: Vec<bool>,
}

const PIVOT_TOL: f64 = 1e-13;

impl SchurFactor {
    fn new(mut a: DMatrix<f64>) -> Option<Self> {
        let n = a.nrows();
        let diag: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
        let mut skipped = vec![false; n];
        for j in 0..n {
            // Column j of the lower triangle holds the partially reduced entries.
            let d = a[(j, j)];
            if !d.is_finite() {
                return None;
            }
            if d <= PIVOT_TOL * diag[j].abs() || d <= 0.0 {
                skipped[j] = true;
                for i in j..n {
                    a[(i, j)] = 0.0;
                }
                continue;
            }
            let piv = d.sqrt();
            a[(j, j)] = piv;
            for i in (j + 1)..n {
                a[(i, j)] /= piv;
            }
            // Right-looking update of the trailing lower triangle.
            for k in (j + 1)..n {
                let lkj = a[(k, j)];
                if lkj == 0.0 {
                    continue;
                }
                for i in k..n {
                    let lij = a[(i, j)];
                    a[(i, k)] -= lij * lkj;
                }
            }
        }
        if skipped.iter().filter(|s| **s).count() > 0 {
            log::trace!(
                "sdp: {} Schur pivots skipped",
                skipped.iter().filter(|s| **s).count()
            );
        }
        Some(Self { l: a, skipped })
    }

    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = b.len();
        let l = &self.l;
        let mut y = b.clone();
        for j in 0..n {
            if self.skipped[j] {
                y[j] = 0.0;
                continue;
            }
            y[j] /= l[(j, j)];
            let yj = y[j];
            for i in (j + 1)..n {
                y[i] -= l[(i, j)] * yj;
            }
        }
        for j in (0..n).rev() {
            if self.skipped[j] {
                y[j] = 0.0;
                continue;
            }
            let mut acc = y[j];
            for i in (j + 1)..n {
                acc -= l[(i, j)] * y[i];
            }
            y[j] = acc / l[(j, j)];
        }
        y
    }
}

struct Residuals {
    rp: DVector<f64>,
    rd: Vec<DMatrix<f64>>,
    rdl: DVector<f64>,
    pinf: f64,
    dinf: f64,
    pobj: f64,
    dobj: f64,
    mu: f64,
    gap: f64,
}

fn residuals(s: &Scaled, p: &Point) -> Residuals {
    let ax = s.apply_a(&p.x, &p.xl);
    let rp = &s.b - ax;
    let (aty, atyl) = s.apply_at(&p.y);
    let rd: Vec<DMatrix<f64>> =
        s.c.iter()
            .zip(&aty)
            .zip(&p.z)
            .map(|((c, a), z)| c - a - z)
            .collect();
    let rdl = &s.c_lp - atyl - &p.zl;
    let pobj = inner(&s.c, &s.c_lp, &p.x, &p.xl);
    let dobj = s.b.dot(&p.y);
    let xz = inner(&p.x, &p.xl, &p.z, &p.zl);
    let rd_norm = (rd.iter().map(|m| m.norm_squared()).sum::<f64>() + rdl.norm_squared()).sqrt();
    let denom = 1.0 + pobj.abs() + dobj.abs();
    Residuals {
        pinf: rp.norm() / (1.0 + s.norm_b),
        rp,
        dinf: rd_norm / (1.0 + s.norm_c),
        pobj,
        dobj,
        mu: xz / s.nu(),
        gap: ((pobj - dobj).abs().max(xz.abs())) / denom,
        rd,
        rdl,
    }
}

#[allow(clippy::too_many_arguments)]
fn direction(
    s: &Scaled,
    p: &Point,
    r: &Residuals,
    chol: &SchurFactor,
    zinv: &[DMatrix<f64>],
    sigma_mu: f64,
    corr: Option<&Direction>,
) -> Direction {
    let inv_zl = p.zl.map(|v| 1.0 / v);
    // rhs = b − σμ 𝒜(Z⁻¹) + 𝒜(X Rd Z⁻¹) + 𝒜(dXp dZp Z⁻¹)
    let mut h: Vec<DMatrix<f64>> =
        p.x.iter()
            .zip(&r.rd)
            .zip(zinv)
            .map(|((x, rd), zi)| x * rd * zi - zi * sigma_mu)
            .collect();
    let mut hl = p.xl.component_mul(&r.rdl).component_mul(&inv_zl) - &inv_zl * sigma_mu;
    if let Some(c) = corr {
        for ((hb, dx), (dz, zi)) in h.iter_mut().zip(&c.dx).zip(c.dz.iter().zip(zinv)) {
            *hb += dx * dz * zi;
        }
        hl += c.dxl.component_mul(&c.dzl).component_mul(&inv_zl);
    }
    let rhs = &s.b + s.apply_a(&h, &hl);
    let dy = chol.solve(&rhs);
    let (atdy, atdyl) = s.apply_at(&dy);
    let dz: Vec<DMatrix<f64>> = r.rd.iter().zip(&atdy).map(|(rd, a)| rd - a).collect();
    let dzl = &r.rdl - atdyl;
    let dx: Vec<DMatrix<f64>> = (0..s.sizes.len())
        .map(|b| {
            let mut d = &zinv[b] * sigma_mu - &p.x[b] - sym(&(&p.x[b] * &dz[b] * &zinv[b]));
            if let Some(c) = corr {
                d -= sym(&(&c.dx[b] * &c.dz[b] * &zinv[b]));
            }
            sym(&d)
        })
        .collect();
    let mut dxl = &inv_zl * sigma_mu - &p.xl - p.xl.component_mul(&dzl).component_mul(&inv_zl);
    if let Some(c) = corr {
        dxl -= c.dxl.component_mul(&c.dzl).component_mul(&inv_zl);
    }
    let mut dir = Direction {
        dx,
        dxl,
        dy,
        dz,
        dzl,
    };
    refine(s, p, r, chol, zinv, &mut dir);
    dir
}

/// Iterative refinement of the primal equation `𝒜(dX) = r_p`.
///
/// The direction satisfies the dual and complementarity equations by
/// construction; forming `dX` from `dy` loses accuracy to cancellation once
/// `Z` is nearly singular. A correction `δy = M⁻¹ e` for the primal residual
/// `e` is pushed through the other two equations.
fn refine(
    s: &Scaled,
    p: &Point,
    r: &Residuals,
    chol: &SchurFactor,
    zinv: &[DMatrix<f64>],
    dir: &mut Direction,
) {
    let target = r.rp.amax();
    for _ in 0..REFINE_STEPS {
        let e = &r.rp - s.apply_a(&dir.dx, &dir.dxl);
        if e.amax() <= 1e-3 * target || e.amax() == 0.0 {
            break;
        }
        let dy = chol.solve(&e);
        let (atd, atdl) = s.apply_at(&dy);
        dir.dy += &dy;
        for b in 0..s.sizes.len() {
            dir.dz[b] -= &atd[b];
            dir.dx[b] += sym(&(&p.x[b] * &atd[b] * &zinv[b]));
        }
        dir.dzl -= &atdl;
        dir.dxl += p.xl.component_mul(&atdl).component_div(&p.zl);
    }
}

fn iterate(s: &Scaled, settings: &SolverSettings) -> (Point, Outcome, usize, f64) {
    let mut p = s.initial_point();
    let nu = s.nu();
    // Stop slightly inside the requested tolerances; the final check runs on
    // the unscaled problem.
    let feas_target = 0.1 * settings.feas_tol;
    let gap_target = 0.5 * settings.gap_tol.min(settings.target_gap);

    let mut best: Option<(f64, Point, f64)> = None;
    let mut stall = 0;
    let mut last_merit = f64::INFINITY;

    let mut iterations = 0;
    for iter in 0..settings.max_iters {
        iterations = iter;
        let r = residuals(s, &p);
        let merit = r.pinf.max(r.dinf).max(r.gap);
        log::trace!(
            "sdp iter {iter}: pobj {:.6e} dobj {:.6e} pinf {:.2e} dinf {:.2e} gap {:.2e} mu {:.2e}",
            r.pobj,
            r.dobj,
            r.pinf,
            r.dinf,
            r.gap,
            r.mu
        );
        if best.as_ref().is_none_or(|(m, _, _)| merit < *m) {
            best = Some((merit, p.clone(), r.gap));
        }
        if r.pinf <= feas_target && r.dinf <= feas_target && r.gap <= gap_target {
            return (p, Outcome::Converged, iter, r.gap);
        }

        // Infeasibility certificates.
        if r.dobj > 0.0 {
            let (aty, atyl) = s.apply_at(&p.y);
            let cert = (aty
                .iter()
                .zip(&p.z)
                .map(|(a, z)| (a + z).norm_squared())
                .sum::<f64>()
                + (atyl + &p.zl).norm_squared())
            .sqrt();
            if cert / r.dobj < INFEASIBILITY_TOL {
                return (p, Outcome::PrimalInfeasible, iter, r.gap);
            }
        }
        if r.pobj < 0.0 {
            let ax = s.apply_a(&p.x, &p.xl);
            if ax.norm() / (-r.pobj) < INFEASIBILITY_TOL {
                return (p, Outcome::DualInfeasible, iter, r.gap);
            }
        }

        if merit > 0.9 * last_merit.min(f64::MAX) && iter > 0 {
            stall += 1;
        } else {
            stall = 0;
        }
        last_merit = last_merit.min(merit);
        if stall >= STALL_LIMIT {
            break;
        }

        let zinv: Option<Vec<DMatrix<f64>>> = p.z.iter().map(inverse_spd).collect();
        let Some(zinv) = zinv else { break };
        let schur = s.schur(&p.x, &p.xl, &zinv, &p.zl);
        let Some(chol) = SchurFactor::new(schur) else {
            break;
        };

        let pred = direction(s, &p, &r, &chol, &zinv, 0.0, None);
        let ap = max_step(&p.x, &p.xl, &pred.dx, &pred.dxl).min(1.0);
        let ad = max_step(&p.z, &p.zl, &pred.dz, &pred.dzl).min(1.0);
        let trial_x: Vec<DMatrix<f64>> =
            p.x.iter().zip(&pred.dx).map(|(x, d)| x + d * ap).collect();
        let trial_xl = &p.xl + &pred.dxl * ap;
        let trial_z: Vec<DMatrix<f64>> =
            p.z.iter().zip(&pred.dz).map(|(z, d)| z + d * ad).collect();
        let trial_zl = &p.zl + &pred.dzl * ad;
        let mu_aff = inner(&trial_x, &trial_xl, &trial_z, &trial_zl) / nu;
        let ratio = (mu_aff / r.mu).clamp(0.0, 1.0);
        let expon = if r.mu > 1e-6 {
            2.0_f64.max(3.0 * ap.min(ad).powi(2))
        } else {
            3.0
        };
        let sigma = ratio.powf(expon).clamp(0.0, 1.0);

        let dir = direction(s, &p, &r, &chol, &zinv, sigma * r.mu, Some(&pred));
        let tau = 0.9 + 0.09 * ap.min(ad);
        let ap = (tau * max_step(&p.x, &p.xl, &dir.dx, &dir.dxl)).min(1.0);
        let ad = (tau * max_step(&p.z, &p.zl, &dir.dz, &dir.dzl)).min(1.0);
        if !(ap.is_finite() && ad.is_finite()) || (ap < 1e-12 && ad < 1e-12) {
            break;
        }

        log::trace!(
            "sdp step: ap {ap:.3e} ad {ad:.3e} sigma {sigma:.2e} |y| {:.3e}",
            p.y.amax()
        );
        for (x, d) in p.x.iter_mut().zip(&dir.dx) {
            *x += d * ap;
        }
        p.xl.axpy(ap, &dir.dxl, 1.0);
        p.y.axpy(ad, &dir.dy, 1.0);
        for (z, d) in p.z.iter_mut().zip(&dir.dz) {
            *z += d * ad;
        }
        p.zl.axpy(ad, &dir.dzl, 1.0);
        iterations = iter + 1;
    }

    let r = residuals(s, &p);
    let merit = r.pinf.max(r.dinf).max(r.gap);
    let outcome = if iterations < settings.max_iters {
        Outcome::Stalled
    } else {
        Outcome::IterationLimit
    };
    match best {
        Some((m, bp, gap)) if m < merit => (bp, outcome, iterations, gap),
        _ => (p, outcome, iterations, r.gap),
    }
}
