//! Differentiation of the OPF solution map through the KKT conditions.
//!
//! At a KKT point `z* = (x*, μ*, ν*)` the implicit function theorem gives
//! `∂z/∂θ = −J⁻¹ ∂k/∂θ` with
//!
//! ```text
//!     J = [[Q,          Gᵀ,             Aᵀ],
//!          [diag(μ*) G, diag(G x* − h), 0 ],
//!          [A,          0,              0 ]]
//! ```
//!
//! The parameter derivatives of the KKT operator follow term by term from
//! `k = (Qx + w + Gᵀμ + Aᵀν; diag(μ)(Gx − h); Ax − y)`:
//!
//! * `∂k/∂dᵢ = (0; 0; −[Fᵢ; 1])`, because only `y = (F d, 1ᵀd)` depends on `d`;
//! * `∂k/∂βⱼ = (eⱼ; 0; 0)`, from `w = (β, 0)`;
//! * `∂k/∂αⱼ = (2 gⱼ* eⱼ; 0; 0)`, from `Q = blockdiag(2 diag(α), τI)`.
//!
//! `G`, `h` and `A` do not depend on `θ`, so the complementarity rows of
//! `∂k/∂θ` are always zero.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::DenseLu;
use crate::opf::{kkt_residual, OpfModel, OpfSolution, QpForm, SolverOptions, Theta};

/// Largest acceptable condition estimate, `1/√ε`.
pub fn singular_condition_threshold() -> f64 {
    1.0 / f64::EPSILON.sqrt()
}

/// Default tolerance separating a genuinely zero multiplier/slack pair.
pub const DEFAULT_GAP_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct KktJacobian {
    pub matrix: DMatrix<f64>,
    /// 1-norm condition estimate of the row- and column-equilibrated matrix.
    pub condition_estimate: f64,
    pub n_vars: usize,
    pub n_ineq: usize,
    pub n_eq: usize,
    pub mu: DVector<f64>,
    pub slack: DVector<f64>,
    row_scale: DVector<f64>,
    col_scale: DVector<f64>,
    lu: Option<DenseLu>,
}

impl KktJacobian {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_factored(&self) -> bool {
        self.lu.is_some()
    }

    /// Solves `J X = B` through the equilibrated factorization.
    fn solve(&self, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        let lu = self.lu.as_ref()?;
        let mut scaled = rhs.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= self.row_scale[i];
        }
        let mut sol = lu.solve_matrix(&scaled);
        for (i, mut row) in sol.row_iter_mut().enumerate() {
            row *= self.col_scale[i];
        }
        Some(sol)
    }
}

/// Assembles the KKT Jacobian at a converged solution.
pub fn kkt_jacobian(qp: &QpForm, sol: &OpfSolution, kkt_tol: f64) -> Result<KktJacobian> {
    let residual = kkt_residual(qp, &sol.x, &sol.mu, &sol.nu)?;
    if residual > kkt_tol {
        return Err(Error::NotConverged { residual, tol: kkt_tol });
    }
    let n = qp.n_vars();
    let m = qp.n_ineq();
    let p = qp.n_eq();
    let size = n + m + p;
    let slack_signed = &qp.g * &sol.x - &qp.h;

    let mut j = DMatrix::zeros(size, size);
    j.view_mut((0, 0), (n, n)).copy_from(&qp.q);
    j.view_mut((0, n), (n, m)).copy_from(&qp.g.transpose());
    j.view_mut((0, n + m), (n, p)).copy_from(&qp.a.transpose());
    let mut mg = qp.g.clone();
    for (i, mut row) in mg.row_iter_mut().enumerate() {
        row *= sol.mu[i];
    }
    j.view_mut((n, 0), (m, n)).copy_from(&mg);
    for i in 0..m {
        j[(n + i, n + i)] = slack_signed[i];
    }
    j.view_mut((n + m, 0), (p, n)).copy_from(&qp.a);

    let (row_scale, col_scale, scaled) = equilibrate(&j);
    let (lu, condition_estimate) = match DenseLu::factor(&scaled) {
        Ok(lu) => {
            let cond = lu.condition_estimate();
            (Some(lu), cond)
        }
        Err(_) => (None, f64::INFINITY),
    };

    Ok(KktJacobian {
        matrix: j,
        condition_estimate,
        n_vars: n,
        n_ineq: m,
        n_eq: p,
        mu: sol.mu.clone(),
        slack: -slack_signed,
        row_scale,
        col_scale,
        lu,
    })
}

/// One pass of row then column max-norm scaling. A zero row or column keeps
/// unit scale and surfaces later as a singular pivot.
fn equilibrate(j: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>, DMatrix<f64>) {
    let mut scaled = j.clone();
    let row_scale = DVector::from_iterator(
        j.nrows(),
        j.row_iter().map(|r| {
            let m = r.amax();
            if m > 0.0 {
                1.0 / m
            } else {
                1.0
            }
        }),
    );
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= row_scale[i];
    }
    let col_scale = DVector::from_iterator(
        j.ncols(),
        scaled.column_iter().map(|c| {
            let m = c.amax();
            if m > 0.0 {
                1.0 / m
            } else {
                1.0
            }
        }),
    );
    for (i, mut col) in scaled.column_iter_mut().enumerate() {
        col *= col_scale[i];
    }
    (row_scale, col_scale, scaled)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularityDiagnostics {
    /// `minᵢ max(μᵢ, |slackᵢ|)`; infinite when there are no inequalities.
    pub min_complementarity_gap: f64,
    pub is_strictly_complementary: bool,
    pub jacobian_singular: bool,
    pub condition_estimate: f64,
    /// Inequality rows where both the multiplier and the slack vanish.
    pub degenerate: Vec<usize>,
}

pub fn check_regularity(jac: &KktJacobian, gap_tol: f64) -> RegularityDiagnostics {
    let gaps: Vec<f64> = (0..jac.n_ineq)
        .map(|i| jac.mu[i].max(jac.slack[i].abs()))
        .collect();
    let min_gap = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    let degenerate = gaps
        .iter()
        .enumerate()
        .filter(|(_, g)| **g <= gap_tol)
        .map(|(i, _)| i)
        .collect();
    RegularityDiagnostics {
        min_complementarity_gap: min_gap,
        is_strictly_complementary: min_gap > gap_tol,
        jacobian_singular: !jac.is_factored() || jac.condition_estimate > singular_condition_threshold(),
        condition_estimate: jac.condition_estimate,
        degenerate,
    }
}

/// A single entry of `θ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Param {
    Alpha(usize),
    Beta(usize),
    Demand(usize),
}

/// `∂z/∂θ` split by parameter group. Rows follow `z = (g, p, μ, ν)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionJacobian {
    pub wrt_alpha: DMatrix<f64>,
    pub wrt_beta: DMatrix<f64>,
    pub wrt_demand: DMatrix<f64>,
    pub n_gen: usize,
    pub n_line: usize,
    pub n_ineq: usize,
    pub n_eq: usize,
    /// `‖J·∂z/∂θ + ∂k/∂θ‖∞ / max(1, ‖∂k/∂θ‖∞)`; zero for oracle output.
    pub ift_residual: f64,
    pub warnings: Vec<String>,
}

impl SolutionJacobian {
    fn rows(&self, start: usize, len: usize, m: &DMatrix<f64>) -> DMatrix<f64> {
        m.rows(start, len).into_owned()
    }

    fn nu_start(&self) -> usize {
        self.n_gen + self.n_line + self.n_ineq
    }

    pub fn dg_dd(&self) -> DMatrix<f64> {
        self.rows(0, self.n_gen, &self.wrt_demand)
    }

    pub fn dp_dd(&self) -> DMatrix<f64> {
        self.rows(self.n_gen, self.n_line, &self.wrt_demand)
    }

    pub fn dmu_dd(&self) -> DMatrix<f64> {
        self.rows(self.n_gen + self.n_line, self.n_ineq, &self.wrt_demand)
    }

    /// `∂ν*/∂d`, shape `(M+1) × N`.
    pub fn dnu_dd(&self) -> DMatrix<f64> {
        self.rows(self.nu_start(), self.n_eq, &self.wrt_demand)
    }

    pub fn dg_dalpha(&self) -> DMatrix<f64> {
        self.rows(0, self.n_gen, &self.wrt_alpha)
    }

    pub fn dg_dbeta(&self) -> DMatrix<f64> {
        self.rows(0, self.n_gen, &self.wrt_beta)
    }

    pub fn dnu_dalpha(&self) -> DMatrix<f64> {
        self.rows(self.nu_start(), self.n_eq, &self.wrt_alpha)
    }

    pub fn dnu_dbeta(&self) -> DMatrix<f64> {
        self.rows(self.nu_start(), self.n_eq, &self.wrt_beta)
    }

    /// Column of `∂z/∂θ` for one parameter.
    pub fn column(&self, param: Param) -> DVector<f64> {
        match param {
            Param::Alpha(j) => self.wrt_alpha.column(j).into_owned(),
            Param::Beta(j) => self.wrt_beta.column(j).into_owned(),
            Param::Demand(i) => self.wrt_demand.column(i).into_owned(),
        }
    }

    pub fn params(&self) -> Vec<Param> {
        (0..self.wrt_alpha.ncols())
            .map(Param::Alpha)
            .chain((0..self.wrt_beta.ncols()).map(Param::Beta))
            .chain((0..self.wrt_demand.ncols()).map(Param::Demand))
            .collect()
    }
}

/// `∂k/∂θ` as three column blocks `(α, β, d)`.
pub fn kkt_parameter_derivative(
    qp: &QpForm,
    sol: &OpfSolution,
    model: &OpfModel,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let n = qp.n_vars();
    let m = qp.n_ineq();
    let p = qp.n_eq();
    let k = qp.n_gen;
    let n_bus = model.network.n_buses();
    if model.ptdf.nrows() + 1 != p || model.incidence.ncols() != k {
        return Err(Error::DimensionMismatch(
            "network does not match the QP the Jacobian was built from".into(),
        ));
    }
    let size = n + m + p;
    let mut d_alpha = DMatrix::zeros(size, k);
    let mut d_beta = DMatrix::zeros(size, k);
    for j in 0..k {
        d_alpha[(j, j)] = 2.0 * sol.x[j];
        d_beta[(j, j)] = 1.0;
    }
    let mut d_demand = DMatrix::zeros(size, n_bus);
    let eq0 = n + m;
    for i in 0..n_bus {
        for l in 0..qp.n_line {
            d_demand[(eq0 + l, i)] = -model.ptdf[(l, i)];
        }
        d_demand[(eq0 + qp.n_line, i)] = -1.0;
    }
    Ok((d_alpha, d_beta, d_demand))
}

/// Solves `J ∂z/∂θ = −∂k/∂θ`. Refuses when the Jacobian is singular, and
/// otherwise verifies the linear-system residual before returning.
pub fn solution_jacobian(
    jac: &KktJacobian,
    qp: &QpForm,
    sol: &OpfSolution,
    model: &OpfModel,
    gap_tol: f64,
) -> Result<SolutionJacobian> {
    let diag = check_regularity(jac, gap_tol);
    if diag.jacobian_singular {
        return Err(Error::SingularJacobian {
            degenerate: diag.degenerate,
        });
    }
    let mut warnings = Vec::new();
    if !diag.is_strictly_complementary {
        let msg = format!(
            "strict complementarity fails at inequalities {:?} (min gap {:.3e}); sensitivities hold only one-sidedly",
            diag.degenerate, diag.min_complementarity_gap
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let (d_alpha, d_beta, d_demand) = kkt_parameter_derivative(qp, sol, model)?;
    let k = d_alpha.ncols();
    let n_bus = d_demand.ncols();
    let mut rhs = DMatrix::zeros(jac.dim(), 2 * k + n_bus);
    rhs.view_mut((0, 0), (jac.dim(), k)).copy_from(&d_alpha);
    rhs.view_mut((0, k), (jac.dim(), k)).copy_from(&d_beta);
    rhs.view_mut((0, 2 * k), (jac.dim(), n_bus)).copy_from(&d_demand);

    let sol_mat = jac
        .solve(&(-&rhs))
        .ok_or_else(|| Error::SingularJacobian {
            degenerate: diag.degenerate.clone(),
        })?;
    let residual = (&jac.matrix * &sol_mat + &rhs).amax() / rhs.amax().max(1.0);
    if !(residual <= 1e-8) {
        return Err(Error::SingularJacobian {
            degenerate: diag.degenerate,
        });
    }

    Ok(SolutionJacobian {
        wrt_alpha: sol_mat.columns(0, k).into_owned(),
        wrt_beta: sol_mat.columns(k, k).into_owned(),
        wrt_demand: sol_mat.columns(2 * k, n_bus).into_owned(),
        n_gen: qp.n_gen,
        n_line: qp.n_line,
        n_ineq: qp.n_ineq(),
        n_eq: qp.n_eq(),
        ift_residual: residual,
        warnings,
    })
}

/// Assembled QP, solution, Jacobian and sensitivities at one parameter point.
#[derive(Debug, Clone)]
pub struct SensitivityRun {
    pub qp: QpForm,
    pub solution: OpfSolution,
    pub jacobian: KktJacobian,
    pub diagnostics: RegularityDiagnostics,
    pub sensitivities: Result<SolutionJacobian, String>,
}

/// Solve, build the Jacobian, and differentiate in one call. Sensitivity
/// failures are captured so callers can still report the diagnostics.
pub fn analyze(model: &OpfModel, theta: &Theta, options: &SolverOptions, gap_tol: f64) -> Result<SensitivityRun> {
    let qp = model.assemble(theta, options.tau)?;
    let solution = crate::opf::solve(&qp, options)?;
    let jacobian = kkt_jacobian(&qp, &solution, options.kkt_tol)?;
    let diagnostics = check_regularity(&jacobian, gap_tol);
    let sensitivities = match solution_jacobian(&jacobian, &qp, &solution, model, gap_tol) {
        Ok(s) => Ok(s),
        Err(e @ Error::SingularJacobian { .. }) => Err(e.to_string()),
        Err(e) => return Err(e),
    };
    Ok(SensitivityRun {
        qp,
        solution,
        jacobian,
        diagnostics,
        sensitivities,
    })
}

/// Central-difference estimate of `∂z/∂θ`.
#[derive(Debug, Clone)]
pub struct FdJacobian {
    pub jacobian: SolutionJacobian,
    /// Parameters whose perturbed solves changed the active set.
    pub active_set_changed: Vec<Param>,
}

impl FdJacobian {
    pub fn is_flagged(&self, param: Param) -> bool {
        self.active_set_changed.contains(&param)
    }
}

/// Step actually used for `param`: `h · max(1, |θ|)`.
pub fn fd_step(theta: &Theta, param: Param, h: f64) -> f64 {
    let value = match param {
        Param::Alpha(j) => theta.alpha[j],
        Param::Beta(j) => theta.beta[j],
        Param::Demand(i) => theta.demand[i],
    };
    h * value.abs().max(1.0)
}

pub(crate) fn perturb(theta: &Theta, param: Param, delta: f64) -> Theta {
    let mut t = theta.clone();
    match param {
        Param::Alpha(j) => t.alpha[j] += delta,
        Param::Beta(j) => t.beta[j] += delta,
        Param::Demand(i) => t.demand[i] += delta,
    }
    t
}

fn validate_step(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidStep(h))
    }
}

/// Finite-difference oracle for the solution Jacobian. Each column re-solves
/// the OPF at `θ ± step·eᵢ`; columns whose active set differs from the
/// baseline are flagged and left as computed.
pub fn fd_oracle(model: &OpfModel, theta: &Theta, h: f64, options: &SolverOptions) -> Result<FdJacobian> {
    validate_step(h)?;
    let base_qp = model.assemble(theta, options.tau)?;
    let base = crate::opf::solve(&base_qp, options)?;
    let k = theta.alpha.len();
    let n_bus = theta.demand.len();
    let params: Vec<Param> = (0..k)
        .map(Param::Alpha)
        .chain((0..k).map(Param::Beta))
        .chain((0..n_bus).map(Param::Demand))
        .collect();

    let columns: Vec<Result<(DVector<f64>, bool)>> = params
        .par_iter()
        .map(|&param| {
            let step = fd_step(theta, param, h);
            // Keep demand and α non-negative on the minus side.
            let minus_step = match param {
                Param::Alpha(j) => step.min(theta.alpha[j]),
                Param::Demand(i) => step.min(theta.demand[i]),
                Param::Beta(_) => step,
            };
            let solve_at = |delta: f64| -> Result<OpfSolution> {
                let t = perturb(theta, param, delta);
                crate::opf::solve(&model.assemble(&t, options.tau)?, options)
            };
            let plus = solve_at(step)?;
            let minus = if minus_step > 0.0 { solve_at(-minus_step)? } else { base.clone() };
            let z_plus = stack(&plus);
            let z_minus = stack(&minus);
            let column = (z_plus - z_minus) / (step + minus_step);
            let changed = plus.active_set != base.active_set || minus.active_set != base.active_set;
            Ok((column, changed))
        })
        .collect();

    let size = base.x.len() + base.mu.len() + base.nu.len();
    let mut all = DMatrix::zeros(size, params.len());
    let mut flagged = Vec::new();
    for (c, (param, col)) in params.iter().zip(columns).enumerate() {
        let (column, changed) = col?;
        all.set_column(c, &column);
        if changed {
            flagged.push(*param);
        }
    }
    Ok(FdJacobian {
        jacobian: SolutionJacobian {
            wrt_alpha: all.columns(0, k).into_owned(),
            wrt_beta: all.columns(k, k).into_owned(),
            wrt_demand: all.columns(2 * k, n_bus).into_owned(),
            n_gen: base_qp.n_gen,
            n_line: base_qp.n_line,
            n_ineq: base_qp.n_ineq(),
            n_eq: base_qp.n_eq(),
            ift_residual: 0.0,
            warnings: Vec::new(),
        },
        active_set_changed: flagged,
    })
}

fn stack(sol: &OpfSolution) -> DVector<f64> {
    let mut z = DVector::zeros(sol.x.len() + sol.mu.len() + sol.nu.len());
    z.rows_mut(0, sol.x.len()).copy_from(&sol.x);
    z.rows_mut(sol.x.len(), sol.mu.len()).copy_from(&sol.mu);
    z.rows_mut(sol.x.len() + sol.mu.len(), sol.nu.len()).copy_from(&sol.nu);
    z
}
