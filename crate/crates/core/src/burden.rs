//! Energy burden and the locational marginal burden (LMB) matrix.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::income::IncomeTable;
use crate::io::report::{Report, RunMetadata, Table, Value};
use crate::opf::{OpfModel, OpfSolution, SolverOptions, Theta};
use crate::pricing::{lmp_sensitivity, lmps, retail_model0, PricingModel, RetailConfig};
use crate::sensitivity::{fd_step, perturb, Param, RegularityDiagnostics, SolutionJacobian};

#[derive(Debug, Clone, PartialEq)]
pub struct BurdenVector {
    /// `d·π/s` per bus, dimensionless.
    pub b: DVector<f64>,
    /// `b / households`, where household counts are known and non-zero.
    pub per_household: Option<Vec<Option<f64>>>,
    pub warnings: Vec<String>,
}

fn check_income(demand: &DVector<f64>, income: &DVector<f64>) -> Result<()> {
    if demand.len() != income.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} demands but {} incomes",
            demand.len(),
            income.len()
        )));
    }
    for (i, (d, s)) in demand.iter().zip(income.iter()).enumerate() {
        if *d > 0.0 && !(*s > 0.0 && s.is_finite()) {
            return Err(Error::NonPositiveIncome { bus: i + 1, income: *s });
        }
    }
    Ok(())
}

/// `d/s`, with zero-demand buses contributing 0 whatever their income.
fn demand_over_income(demand: &DVector<f64>, income: &DVector<f64>) -> DVector<f64> {
    demand.zip_map(income, |d, s| if d == 0.0 { 0.0 } else { d / s })
}

/// `b = diag(d ⊘ s)·π`. Values outside `(0, 1]` are kept and warned about.
pub fn static_burden(
    demand: &DVector<f64>,
    income: &DVector<f64>,
    pi: &DVector<f64>,
    households: Option<&[u64]>,
) -> Result<BurdenVector> {
    check_income(demand, income)?;
    if pi.len() != demand.len() {
        return Err(Error::DimensionMismatch(format!("{} prices but {} demands", pi.len(), demand.len())));
    }
    let b = demand_over_income(demand, income).component_mul(pi);
    let mut warnings = Vec::new();
    for (i, v) in b.iter().enumerate() {
        if *v > 1.0 || *v < 0.0 {
            warnings.push(format!("burden {v} at bus {} is outside (0, 1]", i + 1));
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let per_household = match households {
        None => None,
        Some(h) if h.len() != b.len() => {
            return Err(Error::DimensionMismatch(format!("{} household counts for {} buses", h.len(), b.len())))
        }
        Some(h) => Some(
            b.iter()
                .zip(h)
                .map(|(v, n)| (*n > 0).then(|| v / *n as f64))
                .collect(),
        ),
    };
    Ok(BurdenVector { b, per_household, warnings })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmbResult {
    /// `∂b/∂d`, N × N, per MWh. Entry `(i, j)` is the change in burden at
    /// bus `i` per MWh of extra demand at bus `j`.
    pub matrix: DMatrix<f64>,
    /// `∇_d B = (∂b/∂d)ᵀ1`.
    pub gradient: DVector<f64>,
    /// Column sums minus diagonal.
    pub to_others: DVector<f64>,
    pub lambda: DVector<f64>,
    pub pi: DVector<f64>,
    pub warnings: Vec<String>,
}

impl LmbResult {
    pub fn diagonal(&self) -> DVector<f64> {
        self.matrix.diagonal()
    }

    /// Rescales every per-MWh quantity to per MW sustained over the income
    /// period (`hours` long).
    pub fn per_mw_period(&self, hours: f64) -> LmbResult {
        LmbResult {
            matrix: &self.matrix * hours,
            gradient: &self.gradient * hours,
            to_others: &self.to_others * hours,
            ..self.clone()
        }
    }
}

/// Hours in the income accounting period, for the labels this crate knows.
pub fn period_hours(period: &str) -> Option<f64> {
    match period.trim().to_ascii_lowercase().as_str() {
        "annual" | "year" | "yearly" => Some(8760.0),
        "monthly" | "month" => Some(730.0),
        "daily" | "day" => Some(24.0),
        "hourly" | "hour" => Some(1.0),
        _ => None,
    }
}

/// Assembles `∂b/∂d = −diag(d⊘s)[Fᵀ 1]∂ν/∂d + diag(π⊘s) + diag(d⊘s)·diag(Φ)`
/// from its parts.
pub fn lmb_from_parts(
    demand: &DVector<f64>,
    income: &DVector<f64>,
    pi: &DVector<f64>,
    dlambda_dd: &DMatrix<f64>,
    phi: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>)> {
    check_income(demand, income)?;
    let n = demand.len();
    if dlambda_dd.shape() != (n, n) || pi.len() != n || phi.len() != n {
        return Err(Error::DimensionMismatch("LMB inputs must all be sized by bus".into()));
    }
    let ratio = demand_over_income(demand, income);
    let mut matrix = dlambda_dd.clone();
    for i in 0..n {
        matrix.row_mut(i).scale_mut(ratio[i]);
        let level = if income[i] > 0.0 { pi[i] / income[i] } else { 0.0 };
        matrix[(i, i)] += level + ratio[i] * phi[i];
    }
    let gradient = matrix.row_sum().transpose();
    let to_others = &gradient - matrix.diagonal();
    Ok((matrix, gradient, to_others))
}

/// LMB matrix at a solved point. Requires the wholesale pricing model,
/// since the other models average prices outside the dispatch problem.
pub fn lmb_matrix(
    model: &OpfModel,
    theta: &Theta,
    income: &DVector<f64>,
    solution: &OpfSolution,
    sensitivity: &SolutionJacobian,
    config: &RetailConfig,
) -> Result<LmbResult> {
    if config.model != PricingModel::Wholesale {
        return Err(Error::ModelMismatch(format!(
            "the LMB matrix needs pricing model 0, got {}",
            u8::from(config.model)
        )));
    }
    check_income(&theta.demand, income)?;
    let n = model.network.n_buses();
    let lambda = lmps(&solution.nu, &model.ptdf)?.lambda;
    let prices = retail_model0(&crate::pricing::LmpVector { lambda: lambda.clone() }, &theta.demand, config)?;
    let pi = prices.per_bus(n).expect("model 0 prices are per bus");
    let dlambda = lmp_sensitivity(&sensitivity.dnu_dd(), &model.ptdf)?;
    let (matrix, gradient, to_others) = lmb_from_parts(&theta.demand, income, &pi, &dlambda, &config.phi.vector(n))?;
    let mut warnings = sensitivity.warnings.clone();
    warnings.extend(prices.warnings);
    Ok(LmbResult {
        matrix,
        gradient,
        to_others,
        lambda,
        pi,
        warnings,
    })
}

/// Burden `b(d)` after re-solving the dispatch at `theta`.
pub fn burden_at(
    model: &OpfModel,
    theta: &Theta,
    income: &DVector<f64>,
    config: &RetailConfig,
    options: &SolverOptions,
) -> Result<(DVector<f64>, OpfSolution)> {
    let sol = crate::opf::solve(&model.assemble(theta, options.tau)?, options)?;
    let lambda = lmps(&sol.nu, &model.ptdf)?;
    let prices = retail_model0(&lambda, &theta.demand, config)?;
    let pi = prices.per_bus(theta.demand.len()).expect("model 0 prices are per bus");
    let b = static_burden(&theta.demand, income, &pi, None)?.b;
    Ok((b, sol))
}

/// Central-difference burden Jacobian compared against an analytic one.
#[derive(Debug, Clone, PartialEq)]
pub struct LmbFdReport {
    pub fd_matrix: DMatrix<f64>,
    /// 0-based bus columns whose perturbed solves changed the active set.
    pub flagged: Vec<usize>,
    pub max_abs_deviation: f64,
    pub max_rel_deviation: f64,
}

/// Entries smaller than this fraction of the largest fd entry are compared
/// against that floor instead of their own magnitude.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// `|a − f| / max(|f|, RELATIVE_FLOOR·max|f|)` over unflagged columns.
pub fn compare_matrices(analytic: &DMatrix<f64>, fd: &DMatrix<f64>, flagged: &[usize]) -> (f64, f64) {
    let floor = (RELATIVE_FLOOR * fd.amax()).max(f64::MIN_POSITIVE);
    let mut max_abs: f64 = 0.0;
    let mut max_rel: f64 = 0.0;
    for j in (0..fd.ncols()).filter(|j| !flagged.contains(j)) {
        for i in 0..fd.nrows() {
            let diff = (analytic[(i, j)] - fd[(i, j)]).abs();
            max_abs = max_abs.max(diff);
            max_rel = max_rel.max(diff / fd[(i, j)].abs().max(floor));
        }
    }
    (max_abs, max_rel)
}

/// Re-solves at `d ± step·eⱼ` for every bus and differences the burden.
pub fn lmb_fd_check(
    model: &OpfModel,
    theta: &Theta,
    income: &DVector<f64>,
    config: &RetailConfig,
    h: f64,
    options: &SolverOptions,
    analytic: &DMatrix<f64>,
) -> Result<LmbFdReport> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidStep(h));
    }
    let (b0, base) = burden_at(model, theta, income, config, options)?;
    let n = theta.demand.len();
    let columns: Vec<Result<(DVector<f64>, bool)>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let step = fd_step(theta, Param::Demand(j), h);
            let minus_step = step.min(theta.demand[j]);
            let (b_plus, s_plus) = burden_at(model, &perturb(theta, Param::Demand(j), step), income, config, options)?;
            let (b_minus, s_minus) = if minus_step > 0.0 {
                burden_at(model, &perturb(theta, Param::Demand(j), -minus_step), income, config, options)?
            } else {
                (b0.clone(), base.clone())
            };
            let changed = s_plus.active_set != base.active_set || s_minus.active_set != base.active_set;
            Ok(((b_plus - b_minus) / (step + minus_step), changed))
        })
        .collect();
    let mut fd_matrix = DMatrix::zeros(n, n);
    let mut flagged = Vec::new();
    for (j, col) in columns.into_iter().enumerate() {
        let (c, changed) = col?;
        fd_matrix.set_column(j, &c);
        if changed {
            flagged.push(j);
        }
    }
    let (max_abs_deviation, max_rel_deviation) = compare_matrices(analytic, &fd_matrix, &flagged);
    Ok(LmbFdReport {
        fd_matrix,
        flagged,
        max_abs_deviation,
        max_rel_deviation,
    })
}

/// Everything the burden report is built from.
pub struct BurdenInputs<'a> {
    pub model: &'a OpfModel,
    pub theta: &'a Theta,
    pub income: &'a IncomeTable,
    pub solution: &'a OpfSolution,
    pub lambda: &'a DVector<f64>,
    pub pi: &'a DVector<f64>,
    pub burden: &'a BurdenVector,
    pub diagnostics: &'a RegularityDiagnostics,
    /// `None` when the sensitivities were withheld.
    pub lmb: Option<&'a LmbResult>,
}

fn diagnostics_table(diag: &RegularityDiagnostics, n_gen: usize, n_line: usize, notes: &[String]) -> Table {
    let mut t = Table::new("diagnostics", &["item", "value"]);
    t.push(vec!["strictly_complementary".into(), diag.is_strictly_complementary.into()]);
    t.push(vec!["min_complementarity_gap".into(), diag.min_complementarity_gap.into()]);
    t.push(vec!["jacobian_singular".into(), diag.jacobian_singular.into()]);
    t.push(vec!["condition_estimate".into(), diag.condition_estimate.into()]);
    for i in &diag.degenerate {
        t.push(vec!["degenerate_constraint".into(), crate::opf::constraint_label(n_gen, n_line, *i).into()]);
    }
    for note in notes {
        t.push(vec!["warning".into(), note.as_str().into()]);
    }
    t
}

/// Per-bus burden tables, sorted by bus id. The LMB columns are empty when
/// the sensitivities were withheld; the diagnostics table is always present.
pub fn burden_report(inputs: &BurdenInputs, metadata: RunMetadata) -> Report {
    let net = &inputs.model.network;
    let n = net.n_buses();
    let households = inputs.income.households(n);
    let mut bus_table = Table::new(
        "burden",
        &[
            "bus",
            "name",
            "income",
            "households",
            "demand",
            "lmp",
            "retail_price",
            "static_burden",
            "burden_per_household",
            "lmb_diagonal",
            "lmb_to_others",
            "burden_gradient",
        ],
    );
    for i in 0..n {
        let bus = i + 1;
        let income = inputs.income.records.get(&bus).map(|r| r.income);
        let per_hh = inputs
            .burden
            .per_household
            .as_ref()
            .and_then(|v| v[i]);
        let (diag, others, grad) = match inputs.lmb {
            Some(l) => (Value::from(l.matrix[(i, i)]), Value::from(l.to_others[i]), Value::from(l.gradient[i])),
            None => (Value::Null, Value::Null, Value::Null),
        };
        bus_table.push(vec![
            bus.into(),
            net.buses[i].name.as_str().into(),
            income.into(),
            households[i].into(),
            inputs.theta.demand[i].into(),
            inputs.lambda[i].into(),
            inputs.pi[i].into(),
            inputs.burden.b[i].into(),
            per_hh.into(),
            diag,
            others,
            grad,
        ]);
    }

    let mut matrix_table = Table::new("lmb_matrix", &["bus", "wrt_bus", "lmb"]);
    let mut diag_table = Table::new("lmb_diagonal", &["bus", "lmb_diagonal"]);
    let mut others_table = Table::new("lmb_to_others", &["bus", "lmb_to_others"]);
    if let Some(l) = inputs.lmb {
        for i in 0..n {
            diag_table.push(vec![(i + 1).into(), l.matrix[(i, i)].into()]);
            others_table.push(vec![(i + 1).into(), l.to_others[i].into()]);
            for j in 0..n {
                matrix_table.push(vec![(i + 1).into(), (j + 1).into(), l.matrix[(i, j)].into()]);
            }
        }
    }

    let notes: Vec<String> = inputs
        .lmb
        .map(|l| l.warnings.clone())
        .unwrap_or_default()
        .into_iter()
        .chain(inputs.burden.warnings.iter().cloned())
        .collect();
    let qp_lines = inputs.model.ptdf.nrows();
    Report {
        metadata,
        tables: vec![
            bus_table,
            diag_table,
            others_table,
            matrix_table,
            diagnostics_table(inputs.diagnostics, inputs.solution.n_gen, qp_lines, &notes),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{normalize, Bus, Generator, Network};
    use crate::sensitivity::analyze;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn static_burden_arithmetic() {
        let b = static_burden(&v(&[10.0]), &v(&[1000.0]), &v(&[20.0]), Some(&[4])).unwrap();
        assert!((b.b[0] - 0.2).abs() < 1e-15);
        assert_eq!(b.per_household.unwrap()[0], Some(0.05));

        let zero = static_burden(&v(&[10.0, 3.0]), &v(&[1000.0, 50.0]), &v(&[0.0, 0.0]), None).unwrap();
        assert_eq!(zero.b, v(&[0.0, 0.0]));

        let half = static_burden(&v(&[10.0]), &v(&[2000.0]), &v(&[20.0]), None).unwrap();
        assert_eq!(half.b[0], 0.1);
    }

    #[test]
    fn income_checks() {
        assert!(matches!(
            static_burden(&v(&[1.0, 1.0]), &v(&[5.0, 0.0]), &v(&[1.0, 1.0]), None),
            Err(Error::NonPositiveIncome { bus: 2, .. })
        ));
        // Zero demand tolerates zero income.
        let b = static_burden(&v(&[0.0]), &v(&[0.0]), &v(&[5.0]), None).unwrap();
        assert_eq!(b.b[0], 0.0);
    }

    #[test]
    fn burden_above_one_is_warned_not_clamped() {
        let b = static_burden(&v(&[100.0]), &v(&[10.0]), &v(&[1.0]), None).unwrap();
        assert_eq!(b.b[0], 10.0);
        assert_eq!(b.warnings.len(), 1);
    }

    fn one_bus() -> (OpfModel, Theta) {
        let net = normalize(&Network {
            mva_base: 100.0,
            buses: vec![Bus { id: 1, name: "1".into(), is_slack: true, demand_mw: 10.0 }],
            lines: vec![],
            generators: vec![Generator { bus: 1, alpha: 0.5, beta: 10.0, g_max: 100.0 }],
        })
        .unwrap();
        let model = OpfModel::new(&net).unwrap();
        let theta = Theta::from_network(&net);
        (model, theta)
    }

    #[test]
    fn one_bus_lmb() {
        let (model, theta) = one_bus();
        let opts = SolverOptions::default();
        let run = analyze(&model, &theta, &opts, 1e-6).unwrap();
        let sens = run.sensitivities.unwrap();
        let s = v(&[1000.0]);
        let l = lmb_matrix(&model, &theta, &s, &run.solution, &sens, &RetailConfig::default()).unwrap();
        assert!((l.lambda[0] - 20.0).abs() < 1e-6);
        assert!((l.matrix[(0, 0)] - 0.03).abs() < 1e-6);
        assert_eq!(l.to_others[0], 0.0);

        let fd = lmb_fd_check(&model, &theta, &s, &RetailConfig::default(), 1e-4, &opts, &l.matrix).unwrap();
        assert!((fd.fd_matrix[(0, 0)] - 0.03).abs() < 1e-6);
        assert!(fd.flagged.is_empty());
    }

    #[test]
    fn lmb_rejects_other_models() {
        let (model, theta) = one_bus();
        let run = analyze(&model, &theta, &SolverOptions::default(), 1e-6).unwrap();
        let cfg = RetailConfig {
            model: PricingModel::Averaged,
            ..RetailConfig::default()
        };
        let err = lmb_matrix(&model, &theta, &v(&[1000.0]), &run.solution, &run.sensitivities.unwrap(), &cfg);
        assert!(matches!(err, Err(Error::ModelMismatch(_))));
    }

    #[test]
    fn fixed_price_regime_diagonal_is_price_over_income() {
        let d = v(&[3.0, 0.0, 5.0]);
        let s = v(&[100.0, 200.0, 400.0]);
        let pi = v(&[20.0, 21.0, 22.0]);
        let (m, grad, others) = lmb_from_parts(&d, &s, &pi, &DMatrix::zeros(3, 3), &DVector::zeros(3)).unwrap();
        assert_eq!(m.diagonal(), v(&[0.2, 0.105, 0.055]));
        assert_eq!(others, DVector::zeros(3));
        assert_eq!(grad, m.diagonal());
    }

    #[test]
    fn profit_rate_enters_the_diagonal() {
        let d = v(&[10.0]);
        let s = v(&[1000.0]);
        let (m, _, _) = lmb_from_parts(&d, &s, &v(&[20.0]), &DMatrix::from_element(1, 1, 1.0), &v(&[0.01])).unwrap();
        // (d·(∂λ/∂d + φ) + π) / s
        assert!((m[(0, 0)] - (10.0 * 1.01 + 20.0) / 1000.0).abs() < 1e-15);
    }

    #[test]
    fn period_rescale() {
        assert_eq!(period_hours("annual"), Some(8760.0));
        assert_eq!(period_hours("fortnight"), None);
    }

    #[test]
    fn relative_comparison_uses_floor() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1e-9]);
        let f = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let (abs, rel) = compare_matrices(&a, &f, &[]);
        assert_eq!(abs, 1e-9);
        assert!((rel - 1e-3).abs() < 1e-12);
        assert_eq!(compare_matrices(&a, &f, &[1]), (0.0, 0.0));
    }
}
