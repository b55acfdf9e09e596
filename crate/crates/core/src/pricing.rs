//! LMP recovery from balance and flow duals, and retail pricing models.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::report::Table;
use crate::io::timeseries::TimeSeriesTable;

/// Locational marginal prices, $/MWh per bus.
#[derive(Debug, Clone, PartialEq)]
pub struct LmpVector {
    pub lambda: DVector<f64>,
}

/// `λ = −[Fᵀ 1]·ν`, with `ν` ordered as flow duals then the balance dual.
pub fn lmps(nu: &DVector<f64>, ptdf: &DMatrix<f64>) -> Result<LmpVector> {
    let m = ptdf.nrows();
    if nu.len() != m + 1 {
        return Err(Error::DimensionMismatch(format!(
            "dual vector has length {}, expected {} line duals plus one balance dual",
            nu.len(),
            m
        )));
    }
    let balance = nu[m];
    let flow = nu.rows(0, m);
    let lambda = -(ptdf.transpose() * flow).add_scalar(balance);
    Ok(LmpVector { lambda })
}

/// `∂λ/∂d = −[Fᵀ 1]·∂ν/∂d`.
pub fn lmp_sensitivity(dnu_dd: &DMatrix<f64>, ptdf: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = ptdf.nrows();
    if dnu_dd.nrows() != m + 1 {
        return Err(Error::DimensionMismatch(format!(
            "dual sensitivity has {} rows, expected {}",
            dnu_dd.nrows(),
            m + 1
        )));
    }
    let flow = dnu_dd.rows(0, m);
    let mut out = -(ptdf.transpose() * flow);
    for mut row in out.row_iter_mut() {
        row -= dnu_dd.row(m);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum PricingModel {
    /// Customers pay the nodal wholesale price plus adders.
    Wholesale,
    /// Utility rate averaged over time, per node or per region.
    Averaged,
    /// Per-node, per-timestep distribution prices.
    Distribution,
}

impl TryFrom<u8> for PricingModel {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(PricingModel::Wholesale),
            1 => Ok(PricingModel::Averaged),
            2 => Ok(PricingModel::Distribution),
            other => Err(format!("unknown pricing model {other}; expected 0, 1 or 2")),
        }
    }
}

impl From<PricingModel> for u8 {
    fn from(m: PricingModel) -> u8 {
        match m {
            PricingModel::Wholesale => 0,
            PricingModel::Averaged => 1,
            PricingModel::Distribution => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Averaging {
    #[default]
    PerNode,
    PerRegion,
}

/// A value given either once for every bus or per bus id. Buses absent
/// from a map take 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, try_from = "RawBusValues")]
pub enum BusValues {
    Uniform(f64),
    PerBus(BTreeMap<usize, f64>),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawBusValues {
    Uniform(f64),
    PerBus(BTreeMap<String, f64>),
}

impl TryFrom<RawBusValues> for BusValues {
    type Error = String;

    fn try_from(raw: RawBusValues) -> std::result::Result<Self, String> {
        match raw {
            RawBusValues::Uniform(v) => Ok(BusValues::Uniform(v)),
            RawBusValues::PerBus(map) => map
                .into_iter()
                .map(|(k, v)| k.trim().parse::<usize>().map(|b| (b, v)).map_err(|_| format!("'{k}' is not a bus id")))
                .collect::<std::result::Result<_, _>>()
                .map(BusValues::PerBus),
        }
    }
}

impl Default for BusValues {
    fn default() -> Self {
        BusValues::Uniform(0.0)
    }
}

impl BusValues {
    pub fn get(&self, bus: usize) -> f64 {
        match self {
            BusValues::Uniform(v) => *v,
            BusValues::PerBus(map) => map.get(&bus).copied().unwrap_or(0.0),
        }
    }

    pub fn vector(&self, n_buses: usize) -> DVector<f64> {
        DVector::from_fn(n_buses, |i, _| self.get(i + 1))
    }

    fn values(&self) -> Vec<(Option<usize>, f64)> {
        match self {
            BusValues::Uniform(v) => vec![(None, *v)],
            BusValues::PerBus(map) => map.iter().map(|(b, v)| (Some(*b), *v)).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values().iter().all(|(_, v)| *v == 0.0)
    }
}

/// Retail pricing configuration, read from JSON:
///
/// ```json
/// {"model": 0, "omega": 5.0, "phi": {"2": 0.01}, "regions": [[1, 2], [3]], "averaging": "per-region"}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetailConfig {
    pub model: PricingModel,
    /// Operating-cost adder, $/MWh.
    #[serde(default)]
    pub omega: BusValues,
    /// Diagonal of the profit-rate matrix, $/MWh².
    #[serde(default)]
    pub phi: BusValues,
    /// Utility service regions as lists of bus ids.
    #[serde(default)]
    pub regions: Vec<Vec<usize>>,
    #[serde(default)]
    pub averaging: Averaging,
}

impl Default for RetailConfig {
    fn default() -> Self {
        RetailConfig {
            model: PricingModel::Wholesale,
            omega: BusValues::default(),
            phi: BusValues::default(),
            regions: Vec::new(),
            averaging: Averaging::PerNode,
        }
    }
}

impl RetailConfig {
    pub fn parse(source: &[u8]) -> Result<Self> {
        let config: RetailConfig =
            serde_json::from_slice(source).map_err(|e| Error::parse(e.line(), e.column(), e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Checks sign constraints and that regions do not overlap.
    pub fn validate(&self) -> Result<()> {
        for (name, values) in [("omega", &self.omega), ("phi", &self.phi)] {
            for (bus, v) in values.values() {
                if !(v >= 0.0) || !v.is_finite() {
                    let at = bus.map_or(String::new(), |b| format!(" at bus {b}"));
                    return Err(Error::InvalidConfig(format!("{name} must be finite and non-negative, got {v}{at}")));
                }
            }
        }
        let mut seen = BTreeSet::new();
        for (l, region) in self.regions.iter().enumerate() {
            if region.is_empty() {
                return Err(Error::InvalidConfig(format!("region {} is empty", l + 1)));
            }
            for bus in region {
                if !seen.insert(*bus) {
                    return Err(Error::InvalidConfig(format!("bus {bus} appears in more than one region")));
                }
            }
        }
        if self.averaging == Averaging::PerRegion && self.regions.is_empty() {
            return Err(Error::InvalidConfig("per-region averaging needs at least one region".into()));
        }
        Ok(())
    }

    /// Checks that the regions, when given, partition buses `1..=n`.
    pub fn validate_for_buses(&self, n_buses: usize) -> Result<()> {
        self.validate()?;
        for (name, values) in [("omega", &self.omega), ("phi", &self.phi)] {
            if let Some((Some(bus), _)) = values.values().into_iter().find(|(b, _)| b.is_some_and(|b| b == 0 || b > n_buses)) {
                return Err(Error::InvalidConfig(format!("{name} refers to unknown bus {bus}")));
            }
        }
        if !self.regions.is_empty() {
            let buses: BTreeSet<usize> = self.regions.iter().flatten().copied().collect();
            let expected: BTreeSet<usize> = (1..=n_buses).collect();
            if buses != expected {
                return Err(Error::InvalidConfig(format!(
                    "regions must partition buses 1..={n_buses}; missing {:?}, unknown {:?}",
                    expected.difference(&buses).collect::<Vec<_>>(),
                    buses.difference(&expected).collect::<Vec<_>>()
                )));
            }
        }
        Ok(())
    }

    /// 1-based region index of every bus listed in a region.
    pub fn region_of(&self) -> BTreeMap<usize, usize> {
        self.regions
            .iter()
            .enumerate()
            .flat_map(|(l, r)| r.iter().map(move |b| (*b, l + 1)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodalPrice {
    pub bus: usize,
    pub t: Option<usize>,
    pub region: Option<usize>,
    /// $/MWh.
    pub pi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetailPrices {
    pub model: PricingModel,
    /// Sorted by `(bus, t)`.
    pub prices: Vec<NodalPrice>,
    pub warnings: Vec<String>,
}

impl RetailPrices {
    /// Price vector over buses `1..=n` when there is one price per bus.
    pub fn per_bus(&self, n_buses: usize) -> Option<DVector<f64>> {
        if self.prices.len() != n_buses || self.prices.iter().any(|p| p.t.is_some()) {
            return None;
        }
        let mut out = DVector::zeros(n_buses);
        for (i, p) in self.prices.iter().enumerate() {
            if p.bus != i + 1 {
                return None;
            }
            out[i] = p.pi;
        }
        Some(out)
    }

    pub fn to_table(&self, name: &str) -> Table {
        let mut table = Table::new(name, &["bus", "t", "region", "retail_price"]);
        for p in &self.prices {
            table.push(vec![p.bus.into(), p.t.into(), p.region.into(), p.pi.into()]);
        }
        table
    }

    fn finish(model: PricingModel, mut prices: Vec<NodalPrice>) -> Self {
        prices.sort_by_key(|p| (p.bus, p.t));
        let mut warnings = Vec::new();
        for p in &prices {
            if !(p.pi >= 0.0) {
                let at = p.t.map_or(String::new(), |t| format!(" at t={t}"));
                warnings.push(format!("negative retail price {} at bus {}{at}", p.pi, p.bus));
            }
        }
        for w in &warnings {
            log::warn!("{w}");
        }
        RetailPrices { model, prices, warnings }
    }
}

fn warn_non_positive_lmps(lambda: impl Iterator<Item = (usize, f64)>) {
    for (bus, l) in lambda {
        if l <= 0.0 {
            log::warn!("non-positive LMP {l} at bus {bus}");
        }
    }
}

/// `π = λ + ω + Φd`.
pub fn retail_model0(lmp: &LmpVector, demand: &DVector<f64>, config: &RetailConfig) -> Result<RetailPrices> {
    if config.model != PricingModel::Wholesale {
        return Err(Error::ModelMismatch(format!("expected model 0, got {}", u8::from(config.model))));
    }
    let n = lmp.lambda.len();
    if demand.len() != n {
        return Err(Error::DimensionMismatch(format!("{} LMPs but {} demands", n, demand.len())));
    }
    warn_non_positive_lmps(lmp.lambda.iter().enumerate().map(|(i, l)| (i + 1, *l)));
    let region = config.region_of();
    let prices = (0..n)
        .map(|i| NodalPrice {
            bus: i + 1,
            t: None,
            region: region.get(&(i + 1)).copied(),
            pi: lmp.lambda[i] + config.omega.get(i + 1) + config.phi.get(i + 1) * demand[i],
        })
        .collect();
    Ok(RetailPrices::finish(PricingModel::Wholesale, prices))
}

/// Left-Riemann sums `Σ_t (d(t)λ(t) + ω(t)) / Σ_t d(t)` per node, or pooled
/// over each region. `ω` is the operating cost in $ per interval.
pub fn retail_model1(series: &TimeSeriesTable, config: &RetailConfig) -> Result<RetailPrices> {
    if config.model != PricingModel::Averaged {
        return Err(Error::ModelMismatch(format!("expected model 1, got {}", u8::from(config.model))));
    }
    config.validate()?;
    let steps = series.timesteps_by_bus();
    let region_of = config.region_of();
    if !region_of.is_empty() {
        for bus in region_of.keys() {
            if !steps.contains_key(bus) {
                return Err(Error::MissingSeries(format!("no records for bus {bus}")));
            }
        }
        if let Some(bus) = steps.keys().find(|b| !region_of.contains_key(b)) {
            return Err(Error::InvalidConfig(format!("bus {bus} is not in any region")));
        }
    }

    // (cost, demand) totals per bus.
    let mut totals: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for bus in steps.keys() {
        let mut cost = 0.0;
        let mut energy = 0.0;
        for r in series.for_bus(*bus) {
            let lambda = r
                .lmp
                .ok_or_else(|| Error::MissingSeries(format!("LMP for bus {} at t={}", r.bus, r.t)))?;
            if lambda <= 0.0 {
                log::warn!("non-positive LMP {lambda} at bus {} t={}", r.bus, r.t);
            }
            cost += r.demand * lambda + r.omega;
            energy += r.demand;
        }
        totals.insert(*bus, (cost, energy));
    }

    let prices = match config.averaging {
        Averaging::PerNode => totals
            .iter()
            .map(|(bus, (cost, energy))| {
                if *energy == 0.0 {
                    return Err(Error::ZeroDenominator(format!("bus {bus}")));
                }
                Ok(NodalPrice {
                    bus: *bus,
                    t: None,
                    region: region_of.get(bus).copied(),
                    pi: cost / energy,
                })
            })
            .collect::<Result<Vec<_>>>()?,
        Averaging::PerRegion => {
            let mut out = Vec::new();
            for (l, region) in config.regions.iter().enumerate() {
                let horizon = &steps[&region[0]];
                if let Some(bus) = region.iter().find(|b| &steps[*b] != horizon) {
                    return Err(Error::MisalignedSeries(format!(
                        "bus {bus} does not share the horizon of region {}",
                        l + 1
                    )));
                }
                let (cost, energy) = region
                    .iter()
                    .fold((0.0, 0.0), |(c, e), b| (c + totals[b].0, e + totals[b].1));
                if energy == 0.0 {
                    return Err(Error::ZeroDenominator(format!("region {}", l + 1)));
                }
                out.extend(region.iter().map(|b| NodalPrice {
                    bus: *b,
                    t: None,
                    region: Some(l + 1),
                    pi: cost / energy,
                }));
            }
            out
        }
    };
    Ok(RetailPrices::finish(PricingModel::Averaged, prices))
}

/// `π(t) = λ(t) + ω(t)` per node and timestep; both series keyed by `(bus, t)`.
pub fn retail_model2(
    lmp: &BTreeMap<(usize, usize), f64>,
    omega: &BTreeMap<(usize, usize), f64>,
) -> Result<RetailPrices> {
    if let Some(key) = lmp.keys().find(|k| !omega.contains_key(k)) {
        return Err(Error::MisalignedSeries(format!("no operating cost for bus {} at t={}", key.0, key.1)));
    }
    if let Some(key) = omega.keys().find(|k| !lmp.contains_key(k)) {
        return Err(Error::MisalignedSeries(format!("no LMP for bus {} at t={}", key.0, key.1)));
    }
    warn_non_positive_lmps(lmp.iter().map(|((b, _), l)| (*b, *l)));
    let prices = lmp
        .iter()
        .map(|(&(bus, t), l)| NodalPrice {
            bus,
            t: Some(t),
            region: None,
            pi: l + omega[&(bus, t)],
        })
        .collect();
    Ok(RetailPrices::finish(PricingModel::Distribution, prices))
}

/// Model 2 from a time-series table, reading `ω` as $/MWh.
pub fn retail_model2_from_series(series: &TimeSeriesTable) -> Result<RetailPrices> {
    let mut lmp = BTreeMap::new();
    let mut omega = BTreeMap::new();
    for (key, r) in &series.records {
        let l = r
            .lmp
            .ok_or_else(|| Error::MissingSeries(format!("LMP for bus {} at t={}", r.bus, r.t)))?;
        lmp.insert(*key, l);
        omega.insert(*key, r.omega);
    }
    retail_model2(&lmp, &omega)
}
