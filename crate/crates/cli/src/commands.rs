use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use lmb_core::burden::{
    burden_report, compare_matrices, lmb_fd_check, lmb_matrix, period_hours, static_burden, BurdenInputs,
};
use lmb_core::grid::Network;
use lmb_core::io::{parse_case, parse_income, parse_timeseries, CaseFormat, Report, ReportFormat, RunMetadata, Table};
use lmb_core::opf::{constraint_label, OpfModel, SolverOptions, Theta};
use lmb_core::pricing::{lmps, retail_model0, retail_model1, retail_model2_from_series, PricingModel, RetailConfig};
use lmb_core::sensitivity::{analyze, fd_oracle, Param};
use lmb_core::{Error, Result};
use nalgebra::DMatrix;

use crate::{output, CaseFormatArg, CheckArgs, LmbArgs, OutputFormat, PriceArgs, SolveArgs, SolverArgs};

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_INFEASIBLE: u8 = 2;
pub const EXIT_INPUT: u8 = 3;
pub const EXIT_SINGULAR: u8 = 4;
pub const EXIT_TOLERANCE: u8 = 5;

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Infeasible(_) => EXIT_INFEASIBLE,
        Error::SingularJacobian { .. } => EXIT_SINGULAR,
        Error::Parse { .. }
        | Error::UnsupportedCostModel { .. }
        | Error::NonPositiveIncome { .. }
        | Error::MissingIncome(_)
        | Error::InvalidNetwork(_)
        | Error::DisconnectedNetwork(_)
        | Error::ConflictingColocatedGenerators { .. }
        | Error::MissingSeries(_)
        | Error::MisalignedSeries(_)
        | Error::InvalidConfig(_)
        | Error::Io(_) => EXIT_INPUT,
        _ => EXIT_OTHER,
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn case_format(path: &Path, explicit: Option<CaseFormatArg>) -> CaseFormat {
    match explicit {
        Some(CaseFormatArg::Matpower) => CaseFormat::Matpower,
        Some(CaseFormatArg::Json) => CaseFormat::Json,
        None if path.extension().is_some_and(|e| e == "m") => CaseFormat::Matpower,
        None => CaseFormat::Json,
    }
}

struct LoadedCase {
    network: Network,
    hash: String,
}

fn load_case(path: &Path, format: Option<CaseFormatArg>) -> Result<LoadedCase> {
    let bytes = read(path)?;
    let network = parse_case(&bytes, case_format(path, format))?;
    Ok(LoadedCase {
        network,
        hash: lmb_core::io::sha256_hex(&bytes),
    })
}

fn load_pricing(path: Option<&PathBuf>) -> Result<RetailConfig> {
    match path {
        Some(p) => RetailConfig::parse(&read(p)?),
        None => Ok(RetailConfig::default()),
    }
}

fn options(a: &SolverArgs) -> SolverOptions {
    SolverOptions {
        kkt_tol: a.kkt_tol,
        act_tol: a.act_tol,
        tau: a.tau,
        ..SolverOptions::default()
    }
}

fn metadata(command: &str, hash: String, a: &SolverArgs, extra: &[(&str, f64)]) -> RunMetadata {
    let mut settings: BTreeMap<String, f64> = [
        ("kkt_tol", a.kkt_tol),
        ("act_tol", a.act_tol),
        ("tau", a.tau),
        ("gap_tol", a.gap_tol),
    ]
    .iter()
    .chain(extra)
    .map(|(k, v)| (k.to_string(), *v))
    .collect();
    settings.retain(|_, v| v.is_finite());
    RunMetadata {
        command: command.into(),
        case_hash: hash,
        settings,
        timestamp: None,
        notes: Vec::new(),
    }
}

fn report_format(f: OutputFormat) -> ReportFormat {
    match f {
        OutputFormat::Csv => ReportFormat::CsvBundle,
        OutputFormat::Json => ReportFormat::Json,
    }
}

fn lmp_table(lambda: &nalgebra::DVector<f64>) -> Table {
    let mut t = Table::new("lmp", &["bus", "lmp"]);
    for (i, l) in lambda.iter().enumerate() {
        t.push(vec![(i + 1).into(), (*l).into()]);
    }
    t
}

pub fn solve(a: &SolveArgs) -> Result<u8> {
    let case = load_case(&a.case.case, a.case.case_format)?;
    let net = &case.network;
    let opts = options(&a.solver);
    let model = OpfModel::new(net)?;
    let theta = Theta::from_network(net);
    let qp = model.assemble(&theta, opts.tau)?;
    let sol = lmb_core::opf::solve(&qp, &opts)?;
    let lambda = lmps(&sol.nu, &model.ptdf)?.lambda;
    let (k, m) = (net.n_generators(), net.n_lines());

    let mut dispatch = Table::new("dispatch", &["generator", "bus", "g_mw", "g_max_mw", "alpha", "beta"]);
    for (j, (gen, g)) in net.generators.iter().zip(sol.g().iter()).enumerate() {
        dispatch.push(vec![(j + 1).into(), gen.bus.into(), (*g).into(), gen.g_max.into(), gen.alpha.into(), gen.beta.into()]);
    }
    let mut flows = Table::new("flows", &["line", "from", "to", "flow_mw", "limit_mw", "nu"]);
    for (l, (line, p)) in net.lines.iter().zip(sol.p().iter()).enumerate() {
        flows.push(vec![
            (l + 1).into(),
            line.from_bus.into(),
            line.to_bus.into(),
            (*p).into(),
            line.flow_limit.into(),
            sol.nu[l].into(),
        ]);
    }
    let slack = qp.slack(&sol.x);
    let mut mu = Table::new("inequality_duals", &["row", "constraint", "slack", "mu", "active"]);
    for i in 0..qp.n_ineq() {
        mu.push(vec![
            (i + 1).into(),
            constraint_label(k, m, i).into(),
            slack[i].into(),
            sol.mu[i].into(),
            sol.active_set.contains(&i).into(),
        ]);
    }
    let mut nu = Table::new("equality_duals", &["row", "constraint", "nu"]);
    for (r, v) in sol.nu.iter().enumerate() {
        let label = if r < m { format!("line {} flow", r + 1) } else { "balance".to_string() };
        nu.push(vec![(r + 1).into(), label.into(), (*v).into()]);
    }
    let balance = sol.g().sum() - theta.demand.sum();
    let mut summary = Table::new("summary", &["item", "value"]);
    summary.push(vec!["objective".into(), sol.objective.into()]);
    summary.push(vec!["kkt_residual".into(), sol.kkt_residual.into()]);
    summary.push(vec!["power_balance_residual_mw".into(), balance.into()]);
    summary.push(vec!["iterations".into(), sol.iterations.into()]);

    let report = Report {
        metadata: metadata("solve", case.hash, &a.solver, &[]),
        tables: vec![lmp_table(&lambda), dispatch, flows, mu, nu, summary],
    };
    output::write(&report, report_format(a.out.format), &a.out.out)?;
    Ok(0)
}

pub fn lmb(a: &LmbArgs) -> Result<u8> {
    let case = load_case(&a.case.case, a.case.case_format)?;
    let income_table = parse_income(&read(&a.income)?)?;
    let config = load_pricing(a.pricing.as_ref())?;
    let net = &case.network;
    let n = net.n_buses();
    config.validate_for_buses(n)?;
    if config.model != PricingModel::Wholesale {
        return Err(Error::ModelMismatch(format!(
            "the LMB matrix needs pricing model 0, got {}",
            u8::from(config.model)
        )));
    }
    let income = income_table.incomes(n)?;
    let opts = options(&a.solver);
    let model = OpfModel::new(net)?;
    let theta = Theta::from_network(net);
    let run = analyze(&model, &theta, &opts, a.solver.gap_tol)?;

    let lambda = lmps(&run.solution.nu, &model.ptdf)?;
    let prices = retail_model0(&lambda, &theta.demand, &config)?;
    let pi = prices.per_bus(n).expect("model 0 prices are per bus");
    let households = income_table.households(n);
    let burden = static_burden(&theta.demand, &income, &pi, Some(&households))?;
    let lmb = match &run.sensitivities {
        Ok(s) => Some(lmb_matrix(&model, &theta, &income, &run.solution, s, &config)?),
        Err(msg) => {
            eprintln!("error: {msg}; LMB withheld, diagnostics written");
            None
        }
    };

    let meta = metadata("lmb", case.hash, &a.solver, &[]);
    let mut report = burden_report(
        &BurdenInputs {
            model: &model,
            theta: &theta,
            income: &income_table,
            solution: &run.solution,
            lambda: &lambda.lambda,
            pi: &pi,
            burden: &burden,
            diagnostics: &run.diagnostics,
            lmb: lmb.as_ref(),
        },
        meta,
    );
    report.metadata.notes.push(format!("income period: {}", income_table.period));
    if a.per_mw_period {
        let hours = period_hours(&income_table.period).ok_or_else(|| {
            Error::InvalidConfig(format!("cannot rescale: unknown income period '{}'", income_table.period))
        })?;
        let mut t = Table::new("lmb_per_mw_period", &["bus", "lmb_diagonal", "lmb_to_others", "burden_gradient"]);
        if let Some(l) = &lmb {
            let scaled = l.per_mw_period(hours);
            for i in 0..n {
                t.push(vec![
                    (i + 1).into(),
                    scaled.matrix[(i, i)].into(),
                    scaled.to_others[i].into(),
                    scaled.gradient[i].into(),
                ]);
            }
        }
        report.tables.push(t);
    }
    output::write(&report, report_format(a.out.format), &a.out.out)?;
    Ok(if lmb.is_some() { 0 } else { EXIT_SINGULAR })
}

fn param_column(p: Param, k: usize) -> usize {
    match p {
        Param::Alpha(j) => j,
        Param::Beta(j) => k + j,
        Param::Demand(i) => 2 * k + i,
    }
}

fn stacked(j: &lmb_core::SolutionJacobian) -> DMatrix<f64> {
    let (r, k, n) = (j.wrt_alpha.nrows(), j.wrt_alpha.ncols(), j.wrt_demand.ncols());
    let mut out = DMatrix::zeros(r, 2 * k + n);
    out.columns_mut(0, k).copy_from(&j.wrt_alpha);
    out.columns_mut(k, k).copy_from(&j.wrt_beta);
    out.columns_mut(2 * k, n).copy_from(&j.wrt_demand);
    out
}

pub fn check(a: &CheckArgs) -> Result<u8> {
    let case = load_case(&a.case.case, a.case.case_format)?;
    let net = &case.network;
    let n = net.n_buses();
    let opts = options(&a.solver);
    let model = OpfModel::new(net)?;
    let theta = Theta::from_network(net);
    let run = analyze(&model, &theta, &opts, a.solver.gap_tol)?;
    let sens = match &run.sensitivities {
        Ok(s) => s,
        Err(msg) => {
            eprintln!("error: {msg}");
            return Ok(EXIT_SINGULAR);
        }
    };

    let mut table = Table::new("check", &["comparison", "max_abs_deviation", "max_rel_deviation", "flagged", "status"]);
    let mut all_pass = true;
    let mut record = |name: &str, abs: f64, rel: f64, flagged: String| {
        let pass = rel < a.tol;
        all_pass &= pass;
        let status = if pass { "PASS" } else { "FAIL" };
        println!("{name}: max_abs={abs:.3e} max_rel={rel:.3e} flagged=[{flagged}] {status}");
        table.push(vec![name.into(), abs.into(), rel.into(), flagged.into(), status.into()]);
    };

    let fd = fd_oracle(&model, &theta, a.fd_step, &opts)?;
    let k = net.n_generators();
    let flagged: Vec<usize> = fd.active_set_changed.iter().map(|p| param_column(*p, k)).collect();
    let (abs, rel) = compare_matrices(&stacked(sens), &stacked(&fd.jacobian), &flagged);
    let names: Vec<String> = fd
        .active_set_changed
        .iter()
        .map(|p| match p {
            Param::Alpha(j) => format!("alpha{}", j + 1),
            Param::Beta(j) => format!("beta{}", j + 1),
            Param::Demand(i) => format!("d{}", i + 1),
        })
        .collect();
    record("solution_jacobian", abs, rel, names.join(" "));

    if let Some(path) = &a.income {
        let income = parse_income(&read(path)?)?.incomes(n)?;
        let config = load_pricing(a.pricing.as_ref())?;
        config.validate_for_buses(n)?;
        let analytic = lmb_matrix(&model, &theta, &income, &run.solution, sens, &config)?;
        let report = lmb_fd_check(&model, &theta, &income, &config, a.fd_step, &opts, &analytic.matrix)?;
        let flagged: Vec<String> = report.flagged.iter().map(|j| format!("d{}", j + 1)).collect();
        record("lmb_matrix", report.max_abs_deviation, report.max_rel_deviation, flagged.join(" "));
    }
    println!("{}", if all_pass { "PASS" } else { "FAIL" });

    if let Some(out) = &a.out {
        let report = Report {
            metadata: metadata("check", case.hash, &a.solver, &[("fd_step", a.fd_step), ("tol", a.tol)]),
            tables: vec![table],
        };
        output::write(&report, report_format(a.format), out)?;
    }
    Ok(if all_pass { 0 } else { EXIT_TOLERANCE })
}

/// Fills missing LMPs in a time series by solving the dispatch at each
/// timestep with that timestep's demands.
fn fill_lmps(series: &mut lmb_core::io::TimeSeriesTable, net: &Network, opts: &SolverOptions) -> Result<()> {
    let n = net.n_buses();
    let model = OpfModel::new(net)?;
    let steps: BTreeSet<usize> = series.records.keys().map(|(_, t)| *t).collect();
    for t in steps {
        if (1..=n).all(|b| series.records.get(&(b, t)).is_some_and(|r| r.lmp.is_some())) {
            continue;
        }
        let mut demand = nalgebra::DVector::zeros(n);
        for b in 1..=n {
            let r = series
                .records
                .get(&(b, t))
                .ok_or_else(|| Error::MissingSeries(format!("bus {b} at t={t} is needed to solve the dispatch")))?;
            demand[b - 1] = r.demand;
        }
        let theta = Theta::from_network(net).with_demand(demand);
        let sol = lmb_core::opf::solve(&model.assemble(&theta, opts.tau)?, opts)?;
        let lambda = lmps(&sol.nu, &model.ptdf)?.lambda;
        for b in 1..=n {
            let r = series.records.get_mut(&(b, t)).expect("checked above");
            r.lmp.get_or_insert(lambda[b - 1]);
        }
    }
    Ok(())
}

pub fn price(a: &PriceArgs) -> Result<u8> {
    let config = RetailConfig::parse(&read(&a.pricing)?)?;
    let opts = options(&a.solver);
    let case = a.case.as_ref().map(|p| load_case(p, a.case_format)).transpose()?;
    let hash = case.as_ref().map_or(String::new(), |c| c.hash.clone());
    let mut tables = Vec::new();
    let prices = match config.model {
        PricingModel::Wholesale => {
            let case = case
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("pricing model 0 needs --case".into()))?;
            let net = &case.network;
            config.validate_for_buses(net.n_buses())?;
            let model = OpfModel::new(net)?;
            let theta = Theta::from_network(net);
            let sol = lmb_core::opf::solve(&model.assemble(&theta, opts.tau)?, &opts)?;
            let lambda = lmps(&sol.nu, &model.ptdf)?;
            tables.push(lmp_table(&lambda.lambda));
            retail_model0(&lambda, &theta.demand, &config)?
        }
        PricingModel::Averaged | PricingModel::Distribution => {
            let path = a
                .series
                .as_ref()
                .ok_or_else(|| Error::MissingSeries(format!("pricing model {} needs --series", u8::from(config.model))))?;
            let mut series = parse_timeseries(&read(path)?)?;
            if series.records.values().any(|r| r.lmp.is_none()) {
                let case = case.as_ref().ok_or_else(|| {
                    Error::MissingSeries("the series has no LMPs and no --case was given to compute them".into())
                })?;
                fill_lmps(&mut series, &case.network, &opts)?;
            }
            if config.model == PricingModel::Averaged {
                retail_model1(&series, &config)?
            } else {
                retail_model2_from_series(&series)?
            }
        }
    };
    tables.push(prices.to_table("retail_prices"));
    let mut meta = metadata("price", hash, &a.solver, &[]);
    meta.notes = prices.warnings.clone();
    let report = Report { metadata: meta, tables };
    output::write(&report, report_format(a.out.format), &a.out.out)?;
    Ok(0)
}
