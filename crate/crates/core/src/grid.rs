//! Network description and the DC linear-algebra objects derived from it.
//!
//! Bus ids are 1-based and contiguous after [`normalize`]; matrix row and
//! column `i` always corresponds to bus id `i + 1`.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseLu;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    #[serde(default)]
    pub name: String,
    #[serde(rename = "slack", default)]
    pub is_slack: bool,
    /// Nodal demand carried by the case file (MW, or MWh per period).
    #[serde(default)]
    pub demand_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    #[serde(rename = "from")]
    pub from_bus: usize,
    #[serde(rename = "to")]
    pub to_bus: usize,
    /// Per-unit series susceptance, `1/x`.
    pub susceptance: f64,
    #[serde(rename = "limit_mw")]
    pub flow_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    /// Quadratic cost coefficient, $/MW²h.
    pub alpha: f64,
    /// Linear cost coefficient, $/MWh.
    pub beta: f64,
    #[serde(rename = "gmax_mw")]
    pub g_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    #[serde(default = "default_mva_base")]
    pub mva_base: f64,
    pub buses: Vec<Bus>,
    #[serde(default)]
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
}

fn default_mva_base() -> f64 {
    100.0
}

impl Network {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn n_generators(&self) -> usize {
        self.generators.len()
    }

    /// Zero-based index of the slack bus.
    pub fn slack_index(&self) -> usize {
        self.buses.iter().position(|b| b.is_slack).unwrap_or(0)
    }

    pub fn demand(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_buses(), self.buses.iter().map(|b| b.demand_mw))
    }

    pub fn alpha(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_generators(), self.generators.iter().map(|g| g.alpha))
    }

    pub fn beta(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_generators(), self.generators.iter().map(|g| g.beta))
    }

    pub fn g_max(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_generators(), self.generators.iter().map(|g| g.g_max))
    }

    pub fn flow_limits(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_lines(), self.lines.iter().map(|l| l.flow_limit))
    }
}

/// Checks field-level invariants, remaps bus ids to `1..=N`, picks a slack
/// bus if none is marked, and merges co-located generators that share cost
/// coefficients.
pub fn normalize(raw: &Network) -> Result<Network> {
    if raw.buses.is_empty() {
        return Err(Error::InvalidNetwork("network has no buses".into()));
    }
    if raw.generators.is_empty() {
        return Err(Error::InvalidNetwork("network has no generators".into()));
    }
    if !(raw.mva_base > 0.0) {
        return Err(Error::InvalidNetwork(format!("mva_base must be positive, got {}", raw.mva_base)));
    }

    let mut ordered: Vec<&Bus> = raw.buses.iter().collect();
    ordered.sort_by_key(|b| b.id);
    let mut remap = BTreeMap::new();
    for (i, bus) in ordered.iter().enumerate() {
        if remap.insert(bus.id, i + 1).is_some() {
            return Err(Error::InvalidNetwork(format!("duplicate bus id {}", bus.id)));
        }
        if !(bus.demand_mw >= 0.0) || !bus.demand_mw.is_finite() {
            return Err(Error::InvalidNetwork(format!(
                "bus {} has invalid demand {}",
                bus.id, bus.demand_mw
            )));
        }
    }
    let lookup = |id: usize, what: &str| {
        remap
            .get(&id)
            .copied()
            .ok_or_else(|| Error::InvalidNetwork(format!("{what} references unknown bus {id}")))
    };

    let slack_count = ordered.iter().filter(|b| b.is_slack).count();
    if slack_count > 1 {
        return Err(Error::InvalidNetwork(format!("{slack_count} buses are marked as slack")));
    }
    let mut buses: Vec<Bus> = ordered
        .iter()
        .enumerate()
        .map(|(i, b)| Bus {
            id: i + 1,
            name: if b.name.is_empty() { b.id.to_string() } else { b.name.clone() },
            is_slack: b.is_slack,
            demand_mw: b.demand_mw,
        })
        .collect();
    if slack_count == 0 {
        log::warn!("no slack bus marked; using lowest bus id {}", ordered[0].id);
        buses[0].is_slack = true;
    }

    let mut lines = Vec::with_capacity(raw.lines.len());
    for (k, line) in raw.lines.iter().enumerate() {
        let from_bus = lookup(line.from_bus, &format!("line {}", k + 1))?;
        let to_bus = lookup(line.to_bus, &format!("line {}", k + 1))?;
        if from_bus == to_bus {
            return Err(Error::InvalidNetwork(format!("line {} is a self-loop", k + 1)));
        }
        if !(line.susceptance > 0.0) || !line.susceptance.is_finite() {
            return Err(Error::InvalidNetwork(format!(
                "line {} has non-positive susceptance {}",
                k + 1,
                line.susceptance
            )));
        }
        if !(line.flow_limit > 0.0) {
            return Err(Error::InvalidNetwork(format!(
                "line {} has non-positive flow limit {}",
                k + 1,
                line.flow_limit
            )));
        }
        lines.push(Line {
            from_bus,
            to_bus,
            ..line.clone()
        });
    }

    // Merge generators bus by bus, keeping the first unit's index for errors.
    let mut by_bus: BTreeMap<usize, (usize, Generator)> = BTreeMap::new();
    for (j, gen) in raw.generators.iter().enumerate() {
        let bus = lookup(gen.bus, &format!("generator {}", j + 1))?;
        if !(gen.alpha >= 0.0) || !gen.beta.is_finite() || !gen.alpha.is_finite() {
            return Err(Error::InvalidNetwork(format!(
                "generator {} has invalid cost coefficients ({}, {})",
                j + 1,
                gen.alpha,
                gen.beta
            )));
        }
        if !(gen.g_max > 0.0) || !gen.g_max.is_finite() {
            return Err(Error::InvalidNetwork(format!(
                "generator {} has non-positive capacity {}",
                j + 1,
                gen.g_max
            )));
        }
        match by_bus.get_mut(&bus) {
            Some((first, merged)) => {
                if merged.alpha != gen.alpha || merged.beta != gen.beta {
                    return Err(Error::ConflictingColocatedGenerators {
                        bus,
                        first: *first + 1,
                        second: j + 1,
                    });
                }
                merged.g_max += gen.g_max;
            }
            None => {
                by_bus.insert(bus, (j, Generator { bus, ..gen.clone() }));
            }
        }
    }
    let generators = by_bus.into_values().map(|(_, g)| g).collect();

    let network = Network {
        mva_base: raw.mva_base,
        buses,
        lines,
        generators,
    };
    check_connected(&network)?;
    Ok(network)
}

fn check_connected(network: &Network) -> Result<()> {
    let n = network.n_buses();
    let mut adjacency = vec![Vec::new(); n];
    for line in &network.lines {
        adjacency[line.from_bus - 1].push(line.to_bus - 1);
        adjacency[line.to_bus - 1].push(line.from_bus - 1);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        for &j in &adjacency[i] {
            if !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    match seen.iter().position(|s| !s) {
        Some(i) => Err(Error::DisconnectedNetwork(i + 1)),
        None => Ok(()),
    }
}

/// Signed line-bus incidence `C` (M × N): `+1` at the from bus, `−1` at the
/// to bus.
pub fn line_incidence(network: &Network) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(network.n_lines(), network.n_buses());
    for (k, line) in network.lines.iter().enumerate() {
        c[(k, line.from_bus - 1)] = 1.0;
        c[(k, line.to_bus - 1)] = -1.0;
    }
    c
}

/// Generator-to-bus incidence `B` (N × K).
pub fn generator_incidence(network: &Network) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(network.n_buses(), network.n_generators());
    for (j, gen) in network.generators.iter().enumerate() {
        b[(gen.bus - 1, j)] = 1.0;
    }
    b
}

/// Susceptance-weighted PTDF matrix `F` (M × N) referenced to the slack bus.
///
/// `F = diag(b) C B_red⁻¹` with the slack row and column removed from
/// `B_bus = Cᵀ diag(b) C`; the slack column of `F` is zero.
pub fn ptdf(network: &Network) -> Result<DMatrix<f64>> {
    check_connected(network)?;
    let n = network.n_buses();
    let m = network.n_lines();
    let slack = network.slack_index();
    let c = line_incidence(network);
    let b_line = DVector::from_iterator(m, network.lines.iter().map(|l| l.susceptance));
    let weighted = DMatrix::from_diagonal(&b_line) * &c;
    let b_bus = c.transpose() * &weighted;

    let keep: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let mut f = DMatrix::zeros(m, n);
    if keep.is_empty() {
        return Ok(f);
    }
    let reduced = b_bus.select_rows(&keep).select_columns(&keep);
    let lu = DenseLu::factor(&reduced).map_err(|_| Error::SingularBusMatrix)?;
    let inv = lu.solve_matrix(&DMatrix::identity(keep.len(), keep.len()));
    let f_reduced = weighted.select_columns(&keep) * inv;
    for (col, &bus) in keep.iter().enumerate() {
        f.set_column(bus, &f_reduced.column(col));
    }
    Ok(f)
}
