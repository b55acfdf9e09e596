//! Parameterized DC OPF in standard QP form, and its primal-dual solver.
//!
//! The program is
//!
//! ```text
//! minimize   ½ xᵀ Q x + wᵀ x
//! subject to G x ≤ h        (μ)
//!            A x = y        (ν)
//! ```
//!
//! with `x = (g, p)`, `A = [[F B, −I], [1ᵀB, 0]]`, `y = (F d, 1ᵀd)`,
//! `G = (−I_K; I_K; −I_M; I_M)` acting on `(g; g; p; p)`, `h = (0, ḡ, p̄, p̄)`,
//! `Q = blockdiag(2·diag(α), τ I_M)` and `w = (β, 0)`. The factor of two on
//! `α` makes `½ gᵀQg` equal the generation cost `Σ αᵢ gᵢ²`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{generator_incidence, ptdf, Network};
use crate::linalg::DenseLu;

/// Problem parameters `θ = (d, α, β)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    pub demand: DVector<f64>,
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
}

impl Theta {
    pub fn new(demand: DVector<f64>, alpha: DVector<f64>, beta: DVector<f64>) -> Self {
        Theta { demand, alpha, beta }
    }

    /// Demand and cost coefficients as carried by the network itself.
    pub fn from_network(network: &Network) -> Self {
        Theta {
            demand: network.demand(),
            alpha: network.alpha(),
            beta: network.beta(),
        }
    }

    pub fn with_demand(&self, demand: DVector<f64>) -> Self {
        Theta { demand, ..self.clone() }
    }

    fn validate(&self, network: &Network) -> Result<()> {
        if self.demand.len() != network.n_buses() {
            return Err(Error::DimensionMismatch(format!(
                "demand has length {}, network has {} buses",
                self.demand.len(),
                network.n_buses()
            )));
        }
        if self.alpha.len() != network.n_generators() || self.beta.len() != network.n_generators() {
            return Err(Error::DimensionMismatch(format!(
                "cost vectors have lengths ({}, {}), network has {} generators",
                self.alpha.len(),
                self.beta.len(),
                network.n_generators()
            )));
        }
        if let Some(i) = self.demand.iter().position(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(Error::DimensionMismatch(format!(
                "demand at bus {} is {}; demands must be finite and non-negative",
                i + 1,
                self.demand[i]
            )));
        }
        if let Some(j) = self.alpha.iter().position(|a| !(*a >= 0.0)) {
            return Err(Error::DimensionMismatch(format!("alpha[{}] = {} is negative", j + 1, self.alpha[j])));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub kkt_tol: f64,
    pub act_tol: f64,
    pub max_iter: usize,
    pub tau: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            kkt_tol: 1e-8,
            act_tol: 1e-7,
            max_iter: 200,
            tau: 1e-6,
        }
    }
}

/// Standard-form QP data. `n_gen` and `n_line` record the `(g, p)` split of
/// `x`; the matrices themselves may be edited freely for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct QpForm {
    pub q: DMatrix<f64>,
    pub w: DVector<f64>,
    pub a: DMatrix<f64>,
    pub y: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub tau: f64,
    pub n_gen: usize,
    pub n_line: usize,
}

impl QpForm {
    pub fn n_vars(&self) -> usize {
        self.q.nrows()
    }

    pub fn n_ineq(&self) -> usize {
        self.g.nrows()
    }

    pub fn n_eq(&self) -> usize {
        self.a.nrows()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.w.dot(x)
    }

    /// Slacks `h − G x` (non-negative when feasible).
    pub fn slack(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.h - &self.g * x
    }

    /// Whether `G`/`h` still have the assembled `(0, ḡ, p̄, p̄)` layout.
    fn has_standard_layout(&self) -> bool {
        self.g.nrows() == 2 * (self.n_gen + self.n_line) && self.a.nrows() == self.n_line + 1
    }

    fn check_dims(&self) -> Result<()> {
        let n = self.n_vars();
        let ok = self.q.is_square()
            && self.w.len() == n
            && self.a.ncols() == n
            && self.y.len() == self.a.nrows()
            && self.g.ncols() == n
            && self.h.len() == self.g.nrows()
            && n == self.n_gen + self.n_line;
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch("QP blocks have inconsistent shapes".into()))
        }
    }
}

/// Human-readable label for inequality row `i` of the assembled QP.
pub fn constraint_label(n_gen: usize, n_line: usize, i: usize) -> String {
    if i < n_gen {
        format!("gen {} lower", i + 1)
    } else if i < 2 * n_gen {
        format!("gen {} upper", i - n_gen + 1)
    } else if i < 2 * n_gen + n_line {
        format!("line {} lower", i - 2 * n_gen + 1)
    } else if i < 2 * n_gen + 2 * n_line {
        format!("line {} upper", i - 2 * n_gen - n_line + 1)
    } else {
        format!("row {}", i + 1)
    }
}

/// Network data shared by every solve at different parameters.
#[derive(Debug, Clone)]
pub struct OpfModel {
    pub network: Network,
    pub ptdf: DMatrix<f64>,
    pub incidence: DMatrix<f64>,
}

impl OpfModel {
    pub fn new(network: &Network) -> Result<Self> {
        Ok(OpfModel {
            network: network.clone(),
            ptdf: ptdf(network)?,
            incidence: generator_incidence(network),
        })
    }

    pub fn assemble(&self, theta: &Theta, tau: f64) -> Result<QpForm> {
        theta.validate(&self.network)?;
        if !(tau > 0.0) {
            return Err(Error::InvalidConfig(format!("tau must be positive, got {tau}")));
        }
        let k = self.network.n_generators();
        let m = self.network.n_lines();
        let n = k + m;
        let f = &self.ptdf;
        let fb = f * &self.incidence;
        let ones_b = DMatrix::from_element(1, self.network.n_buses(), 1.0) * &self.incidence;

        let mut a = DMatrix::zeros(m + 1, n);
        a.view_mut((0, 0), (m, k)).copy_from(&fb);
        a.view_mut((0, k), (m, m)).copy_from(&(-DMatrix::<f64>::identity(m, m)));
        a.view_mut((m, 0), (1, k)).copy_from(&ones_b);

        let mut y = DVector::zeros(m + 1);
        y.rows_mut(0, m).copy_from(&(f * &theta.demand));
        y[m] = theta.demand.sum();

        let mut g = DMatrix::zeros(2 * n, n);
        for j in 0..k {
            g[(j, j)] = -1.0;
            g[(k + j, j)] = 1.0;
        }
        for l in 0..m {
            g[(2 * k + l, k + l)] = -1.0;
            g[(2 * k + m + l, k + l)] = 1.0;
        }
        let mut h = DVector::zeros(2 * n);
        h.rows_mut(k, k).copy_from(&self.network.g_max());
        let limits = self.network.flow_limits();
        h.rows_mut(2 * k, m).copy_from(&limits);
        h.rows_mut(2 * k + m, m).copy_from(&limits);

        let mut q = DMatrix::zeros(n, n);
        for j in 0..k {
            q[(j, j)] = 2.0 * theta.alpha[j];
        }
        for l in 0..m {
            q[(k + l, k + l)] = tau;
        }
        let mut w = DVector::zeros(n);
        w.rows_mut(0, k).copy_from(&theta.beta);

        let rank = a.clone().svd(false, false).rank(1e-10 * a.amax().max(1.0));
        if rank < m + 1 {
            return Err(Error::RankDeficientEquality { rank, rows: m + 1 });
        }

        Ok(QpForm {
            q,
            w,
            a,
            y,
            g,
            h,
            tau,
            n_gen: k,
            n_line: m,
        })
    }
}

pub fn assemble(network: &Network, theta: &Theta, tau: f64) -> Result<QpForm> {
    OpfModel::new(network)?.assemble(theta, tau)
}

/// Primal-dual optimum `z* = (g, p, μ, ν)` with active-set metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct OpfSolution {
    pub x: DVector<f64>,
    pub mu: DVector<f64>,
    pub nu: DVector<f64>,
    /// Inequality rows treated as binding, ascending.
    pub active_set: Vec<usize>,
    pub kkt_residual: f64,
    pub objective: f64,
    pub iterations: usize,
    /// Whether the equality-constrained refinement replaced the
    /// interior-point iterate.
    pub refined: bool,
    pub n_gen: usize,
}

impl OpfSolution {
    pub fn g(&self) -> DVector<f64> {
        self.x.rows(0, self.n_gen).into_owned()
    }

    pub fn p(&self) -> DVector<f64> {
        self.x.rows(self.n_gen, self.x.len() - self.n_gen).into_owned()
    }

    /// Power-balance dual, the last entry of `ν`.
    pub fn balance_dual(&self) -> f64 {
        self.nu[self.nu.len() - 1]
    }
}

/// KKT operator `k(z; θ) = (Qx + w + Gᵀμ + Aᵀν; diag(μ)(Gx − h); Ax − y)`.
pub fn kkt_vector(qp: &QpForm, x: &DVector<f64>, mu: &DVector<f64>, nu: &DVector<f64>) -> Result<DVector<f64>> {
    qp.check_dims()?;
    if x.len() != qp.n_vars() || mu.len() != qp.n_ineq() || nu.len() != qp.n_eq() {
        return Err(Error::DimensionMismatch(format!(
            "candidate has sizes (x {}, μ {}, ν {}), QP expects ({}, {}, {})",
            x.len(),
            mu.len(),
            nu.len(),
            qp.n_vars(),
            qp.n_ineq(),
            qp.n_eq()
        )));
    }
    let stat = &qp.q * x + &qp.w + qp.g.transpose() * mu + qp.a.transpose() * nu;
    let comp = mu.component_mul(&(&qp.g * x - &qp.h));
    let eq = &qp.a * x - &qp.y;
    let mut k = DVector::zeros(stat.len() + comp.len() + eq.len());
    k.rows_mut(0, stat.len()).copy_from(&stat);
    k.rows_mut(stat.len(), comp.len()).copy_from(&comp);
    k.rows_mut(stat.len() + comp.len(), eq.len()).copy_from(&eq);
    Ok(k)
}

/// `‖k(z; θ)‖∞`.
pub fn kkt_residual(qp: &QpForm, x: &DVector<f64>, mu: &DVector<f64>, nu: &DVector<f64>) -> Result<f64> {
    Ok(kkt_vector(qp, x, mu, nu)?.amax())
}

struct IpmPoint {
    x: DVector<f64>,
    s: DVector<f64>,
    mu: DVector<f64>,
    nu: DVector<f64>,
    iterations: usize,
}

enum IpmOutcome {
    Converged(IpmPoint),
    Stalled(IpmPoint),
}

/// Solves the QP to a primal-dual KKT point.
pub fn solve(qp: &QpForm, options: &SolverOptions) -> Result<OpfSolution> {
    qp.check_dims()?;
    if qp.has_standard_layout() {
        let k = qp.n_gen;
        let demand = qp.y[qp.n_line];
        let capacity: f64 = qp.h.rows(k, k).sum();
        if demand > capacity {
            return Err(Error::Infeasible(format!(
                "total demand {demand} MW exceeds total generation capacity {capacity} MW"
            )));
        }
    }

    let point = match interior_point(qp, options)? {
        IpmOutcome::Converged(p) => p,
        IpmOutcome::Stalled(p) => {
            if let Some(violation) = infeasibility(qp, options)? {
                return Err(Error::Infeasible(format!(
                    "minimum total equality violation over the feasible box is {violation:.6e}"
                )));
            }
            let residual = kkt_residual(qp, &p.x, &p.mu, &p.nu)?;
            if residual <= options.kkt_tol {
                p
            } else {
                return Err(Error::MaxIterations {
                    iterations: p.iterations,
                    residual,
                });
            }
        }
    };

    let mut mu = point.mu.clone();
    let ipm_residual = kkt_residual(qp, &point.x, &mu, &point.nu)?;
    let mut best = OpfSolution {
        active_set: (0..qp.n_ineq()).filter(|&i| point.s[i] < options.act_tol).collect(),
        objective: qp.objective(&point.x),
        kkt_residual: ipm_residual,
        x: point.x.clone(),
        mu: std::mem::take(&mut mu),
        nu: point.nu.clone(),
        iterations: point.iterations,
        refined: false,
        n_gen: qp.n_gen,
    };

    if let Some(refined) = refine_active_set(qp, &best, options)? {
        if refined.kkt_residual <= best.kkt_residual.max(options.kkt_tol) {
            best = refined;
        }
    }

    if best.kkt_residual > options.kkt_tol {
        return Err(Error::NotConverged {
            residual: best.kkt_residual,
            tol: options.kkt_tol,
        });
    }
    if qp.n_gen > 0 {
        let alpha_zero = (0..qp.n_gen).any(|j| qp.q[(j, j)] == 0.0);
        if alpha_zero {
            log::warn!("generators with zero quadratic cost: dispatch ties are broken by the flow regularization");
        }
    }
    Ok(best)
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(val, d)| -val / d)
        .fold(1.0, f64::min)
}

/// Mehrotra predictor-corrector on the reduced Newton system
/// `[[Q + Gᵀ diag(μ/s) G, Aᵀ], [A, 0]]`.
fn interior_point(qp: &QpForm, options: &SolverOptions) -> Result<IpmOutcome> {
    let n = qp.n_vars();
    let m = qp.n_ineq();
    let p = qp.n_eq();
    let gt = qp.g.transpose();
    let at = qp.a.transpose();

    let scale = 1.0 + qp.w.amax().max(qp.q.amax());
    let feas_scale = 1.0 + qp.y.amax().max(qp.h.amax());

    // Start from the equality-constrained minimizer of the objective plus
    // a quadratic pull of G x toward h.
    let mut x = {
        let mut k = DMatrix::zeros(n + p, n + p);
        k.view_mut((0, 0), (n, n)).copy_from(&(&qp.q + &gt * &qp.g));
        k.view_mut((0, n), (n, p)).copy_from(&at);
        k.view_mut((n, 0), (p, n)).copy_from(&qp.a);
        let mut rhs = DVector::zeros(n + p);
        rhs.rows_mut(0, n).copy_from(&(&gt * &qp.h - &qp.w));
        rhs.rows_mut(n, p).copy_from(&qp.y);
        match DenseLu::factor(&k) {
            Ok(lu) => lu.solve(&rhs).rows(0, n).into_owned(),
            Err(_) => DVector::zeros(n),
        }
    };
    let mut s = (&qp.h - &qp.g * &x).map(|v| v.max(1.0));
    let mut mu = DVector::from_element(m, scale.min(1e3).max(1.0));
    let mut nu = DVector::zeros(p);

    let mut iterations = 0;
    let mut stall = 0;
    let mut last_merit = f64::INFINITY;
    while iterations < options.max_iter {
        let r_d = &qp.q * &x + &qp.w + &gt * &mu + &at * &nu;
        let r_p = &qp.a * &x - &qp.y;
        let r_s = &qp.g * &x + &s - &qp.h;
        let gap = if m > 0 { s.dot(&mu) / m as f64 } else { 0.0 };

        let dual_ok = r_d.amax() <= 1e-12 * scale;
        let primal_ok = r_p.amax().max(r_s.amax()) <= 1e-12 * feas_scale;
        let comp_max = s.component_mul(&mu).amax();
        if dual_ok && primal_ok && comp_max <= options.kkt_tol * 1e-3 {
            return Ok(IpmOutcome::Converged(IpmPoint { x, s, mu, nu, iterations }));
        }
        let merit = r_d.amax() / scale + r_p.amax().max(r_s.amax()) / feas_scale + gap;
        if merit > 0.999 * last_merit && iterations > 20 {
            stall += 1;
        } else {
            stall = 0;
        }
        last_merit = last_merit.min(merit);
        if stall >= 15 || mu.amax() > 1e14 * scale || nu.amax() > 1e14 * scale {
            break;
        }

        let d = mu.component_div(&s);
        let mut k = DMatrix::zeros(n + p, n + p);
        let mut h11 = qp.q.clone();
        h11 += &gt * DMatrix::from_diagonal(&d) * &qp.g;
        k.view_mut((0, 0), (n, n)).copy_from(&h11);
        k.view_mut((0, n), (n, p)).copy_from(&at);
        k.view_mut((n, 0), (p, n)).copy_from(&qp.a);
        // Near-active constraints put entries of order 1/gap on the diagonal,
        // so only exact breakdown is treated as failure here.
        let lu = match DenseLu::factor_with_threshold(&k, 0.0) {
            Ok(lu) => lu,
            Err(_) => {
                // Tiny primal-dual regularization keeps the step defined.
                let mut reg = k.clone();
                for i in 0..n {
                    reg[(i, i)] += 1e-10 * scale;
                }
                for i in n..n + p {
                    reg[(i, i)] -= 1e-10;
                }
                match DenseLu::factor_with_threshold(&reg, 0.0) {
                    Ok(lu) => lu,
                    Err(_) => break,
                }
            }
        };

        let newton = |r_c: &DVector<f64>| {
            let tmp = (-r_c + mu.component_mul(&r_s)).component_div(&s);
            let mut rhs = DVector::zeros(n + p);
            rhs.rows_mut(0, n).copy_from(&(-&r_d - &gt * &tmp));
            rhs.rows_mut(n, p).copy_from(&(-&r_p));
            let sol = lu.solve(&rhs);
            let dx = sol.rows(0, n).into_owned();
            let dnu = sol.rows(n, p).into_owned();
            let gdx = &qp.g * &dx;
            let ds = -&r_s - &gdx;
            let dmu = &tmp + d.component_mul(&gdx);
            (dx, ds, dmu, dnu)
        };

        let sm = s.component_mul(&mu);
        let (_, ds_aff, dmu_aff, _) = newton(&sm);
        let alpha_aff = max_step(&s, &ds_aff).min(max_step(&mu, &dmu_aff));
        let gap_aff = if m > 0 {
            (&s + alpha_aff * &ds_aff).dot(&(&mu + alpha_aff * &dmu_aff)) / m as f64
        } else {
            0.0
        };
        let sigma = if gap > 0.0 { (gap_aff / gap).powi(3).clamp(0.0, 1.0) } else { 0.0 };
        let r_c = &sm + ds_aff.component_mul(&dmu_aff) - DVector::from_element(m, sigma * gap);
        let step_for = |ds: &DVector<f64>, dmu: &DVector<f64>| (0.995 * max_step(&s, ds).min(max_step(&mu, dmu))).min(1.0);
        let gap_after = |step: f64, ds: &DVector<f64>, dmu: &DVector<f64>| {
            if m > 0 {
                (&s + step * ds).dot(&(&mu + step * dmu)) / m as f64
            } else {
                0.0
            }
        };
        let (mut dx, mut ds, mut dmu, mut dnu) = newton(&r_c);
        let mut step = step_for(&ds, &dmu);
        if m > 0 && gap_after(step, &ds, &dmu) > (1.0 - 0.01 * step) * gap {
            // The second-order correction can cycle; fall back to a plain
            // centered Newton step, which always shrinks the gap for small steps.
            let centered = &sm - DVector::from_element(m, sigma.clamp(0.1, 0.5) * gap);
            (dx, ds, dmu, dnu) = newton(&centered);
            step = step_for(&ds, &dmu);
        }
        x += step * dx;
        s += step * ds;
        mu += step * dmu;
        nu += step * dnu;
        // Keep strictly positive after roundoff.
        s.apply(|v| *v = v.max(1e-300));
        mu.apply(|v| *v = v.max(1e-300));
        iterations += 1;
    }
    Ok(IpmOutcome::Stalled(IpmPoint { x, s, mu, nu, iterations }))
}

/// Minimum `‖A x − y‖₁` over `G x ≤ h`, or `None` when it is (numerically)
/// zero. Used only after the main iteration fails to converge.
fn infeasibility(qp: &QpForm, options: &SolverOptions) -> Result<Option<f64>> {
    // Elastic problem over (x, u, v): A x + u − v = y, u, v ≥ 0.
    let n = qp.n_vars();
    let m = qp.n_ineq();
    let p = qp.n_eq();
    let nn = n + 2 * p;
    let mut q = DMatrix::zeros(nn, nn);
    for i in 0..nn {
        q[(i, i)] = 1e-8;
    }
    let mut w = DVector::zeros(nn);
    w.rows_mut(n, 2 * p).fill(1.0);
    let mut a = DMatrix::zeros(p, nn);
    a.view_mut((0, 0), (p, n)).copy_from(&qp.a);
    a.view_mut((0, n), (p, p)).copy_from(&DMatrix::<f64>::identity(p, p));
    a.view_mut((0, n + p), (p, p)).copy_from(&(-DMatrix::<f64>::identity(p, p)));
    let mut g = DMatrix::zeros(m + 2 * p, nn);
    g.view_mut((0, 0), (m, n)).copy_from(&qp.g);
    g.view_mut((m, n), (2 * p, 2 * p)).copy_from(&(-DMatrix::<f64>::identity(2 * p, 2 * p)));
    let mut h = DVector::zeros(m + 2 * p);
    h.rows_mut(0, m).copy_from(&qp.h);
    let elastic = QpForm {
        q,
        w,
        a,
        y: qp.y.clone(),
        g,
        h,
        tau: 1e-8,
        n_gen: nn,
        n_line: 0,
    };
    let opts = SolverOptions {
        max_iter: options.max_iter.max(200),
        ..*options
    };
    let point = match interior_point(&elastic, &opts)? {
        IpmOutcome::Converged(p) | IpmOutcome::Stalled(p) => p,
    };
    let violation: f64 = point.x.rows(n, 2 * p).iter().map(|v| v.abs()).sum();
    let threshold = 1e-6 * (1.0 + qp.y.amax());
    Ok((violation > threshold).then_some(violation))
}

/// Re-solves the equality-constrained KKT system on the detected active set,
/// adding violated constraints and dropping negative multipliers until the
/// point is primal-dual feasible.
fn refine_active_set(qp: &QpForm, start: &OpfSolution, options: &SolverOptions) -> Result<Option<OpfSolution>> {
    let n = qp.n_vars();
    let m = qp.n_ineq();
    let p = qp.n_eq();
    let slack0 = qp.slack(&start.x);
    let mut active: Vec<usize> = (0..m).filter(|&i| slack0[i] < options.act_tol).collect();
    let mu_scale = 1.0 + start.mu.amax();

    for _ in 0..(m + 5) {
        let na = active.len();
        let size = n + na + p;
        let mut k = DMatrix::zeros(size, size);
        k.view_mut((0, 0), (n, n)).copy_from(&qp.q);
        let ga = qp.g.select_rows(&active);
        if na > 0 {
            k.view_mut((0, n), (n, na)).copy_from(&ga.transpose());
            k.view_mut((n, 0), (na, n)).copy_from(&ga);
        }
        k.view_mut((0, n + na), (n, p)).copy_from(&qp.a.transpose());
        k.view_mut((n + na, 0), (p, n)).copy_from(&qp.a);
        let mut rhs = DVector::zeros(size);
        rhs.rows_mut(0, n).copy_from(&(-&qp.w));
        for (r, &i) in active.iter().enumerate() {
            rhs[n + r] = qp.h[i];
        }
        rhs.rows_mut(n + na, p).copy_from(&qp.y);

        let Ok(lu) = DenseLu::factor(&k) else {
            return Ok(None);
        };
        let sol = lu.solve(&rhs);
        let x = sol.rows(0, n).into_owned();
        let mu_active = sol.rows(n, na).into_owned();
        let nu = sol.rows(n + na, p).into_owned();

        let slack = qp.slack(&x);
        let worst_mu = mu_active
            .iter()
            .enumerate()
            .filter(|(_, v)| **v < -1e-10 * mu_scale)
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(r, _)| r);
        if let Some(r) = worst_mu {
            active.remove(r);
            continue;
        }
        let worst_slack = (0..m)
            .filter(|i| !active.contains(i))
            .filter(|&i| slack[i] < -1e-9 * (1.0 + qp.h[i].abs()))
            .min_by(|&a, &b| slack[a].total_cmp(&slack[b]));
        if let Some(i) = worst_slack {
            active.push(i);
            active.sort_unstable();
            continue;
        }

        let mut mu = DVector::zeros(m);
        for (r, &i) in active.iter().enumerate() {
            mu[i] = mu_active[r].max(0.0);
        }
        let kkt_residual = kkt_residual(qp, &x, &mu, &nu)?;
        return Ok(Some(OpfSolution {
            objective: qp.objective(&x),
            x,
            mu,
            nu,
            active_set: active,
            kkt_residual,
            iterations: start.iterations,
            refined: true,
            n_gen: qp.n_gen,
        }));
    }
    Ok(None)
}
