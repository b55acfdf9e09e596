//! Network case files: the native JSON schema and a MATPOWER subset.

use std::str::FromStr;

use crate::error::{Error, Location, Result};
use crate::grid::{normalize, Bus, Generator, Line, Network};

/// Flow limit used for MATPOWER branches with `rateA = 0` (unlimited).
pub const UNLIMITED_FLOW_MW: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseFormat {
    Matpower,
    Json,
}

impl FromStr for CaseFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matpower" | "m" => Ok(CaseFormat::Matpower),
            "json" | "native-json" => Ok(CaseFormat::Json),
            other => Err(Error::InvalidConfig(format!("unknown case format '{other}'"))),
        }
    }
}

/// Parses and normalizes a case.
pub fn parse_case(source: &[u8], format: CaseFormat) -> Result<Network> {
    let text = std::str::from_utf8(source).map_err(|e| {
        let (line, column) = position_of(source, e.valid_up_to());
        Error::parse(line, column, "input is not valid UTF-8")
    })?;
    let raw = match format {
        CaseFormat::Json => parse_json(text)?,
        CaseFormat::Matpower => parse_matpower(text)?,
    };
    normalize(&raw)
}

fn position_of(bytes: &[u8], offset: usize) -> (usize, usize) {
    let before = &bytes[..offset.min(bytes.len())];
    let line = before.iter().filter(|&&b| b == b'\n').count() + 1;
    let column = offset - before.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1) + 1;
    (line, column)
}

fn parse_json(text: &str) -> Result<Network> {
    serde_json::from_str(text).map_err(|e| Error::parse(e.line(), e.column(), e.to_string()))
}

/// Serializes a network in the native JSON schema.
pub fn write_case_json(network: &Network) -> String {
    let mut out = serde_json::to_string_pretty(network).expect("network serializes");
    out.push('\n');
    out
}

/// One numeric matrix block such as `mpc.bus = [ ... ];`.
struct Block {
    rows: Vec<Vec<(f64, Location)>>,
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn parse_matpower(text: &str) -> Result<Network> {
    let mut base_mva = None;
    let mut blocks: std::collections::BTreeMap<String, (Block, Location)> = Default::default();
    let mut lines = text.lines().enumerate().peekable();

    while let Some((idx, raw_line)) = lines.next() {
        let line_no = idx + 1;
        let line = strip_comment(raw_line).trim();
        let Some(rest) = line.strip_prefix("mpc.") else {
            continue;
        };
        let Some(eq) = rest.find('=') else {
            return Err(Error::parse(line_no, 1, format!("expected '=' in '{line}'")));
        };
        let name = rest[..eq].trim().to_string();
        let value = rest[eq + 1..].trim();
        let start_col = raw_line.find('=').unwrap_or(0) + 2;

        if name == "baseMVA" {
            let v = value.trim_end_matches(';').trim();
            base_mva = Some(v.parse::<f64>().map_err(|_| {
                Error::parse(line_no, start_col, format!("invalid baseMVA '{v}'"))
            })?);
            continue;
        }
        if !value.starts_with('[') {
            if value.starts_with('{') {
                log::warn!("line {line_no}: ignoring cell array mpc.{name}");
                // Skip to the closing brace.
                if !value.contains('}') {
                    for (_, l) in lines.by_ref() {
                        if strip_comment(l).contains('}') {
                            break;
                        }
                    }
                }
            } else if name != "version" {
                log::warn!("line {line_no}: ignoring mpc.{name}");
            }
            continue;
        }

        // Collect the bracketed body, possibly spanning many lines.
        let mut body: Vec<(usize, usize, String)> = Vec::new();
        let open_col = raw_line.find('[').unwrap_or(0) + 2;
        let after_open = &value[1..];
        let mut closed = false;
        if let Some(end) = after_open.find(']') {
            body.push((line_no, open_col, after_open[..end].to_string()));
            closed = true;
        } else {
            body.push((line_no, open_col, after_open.to_string()));
            for (j, l) in lines.by_ref() {
                let stripped = strip_comment(l);
                if let Some(end) = stripped.find(']') {
                    body.push((j + 1, 1, stripped[..end].to_string()));
                    closed = true;
                    break;
                }
                body.push((j + 1, 1, stripped.to_string()));
            }
        }
        if !closed {
            return Err(Error::parse(line_no, open_col, format!("unterminated matrix mpc.{name}")));
        }

        let mut rows = Vec::new();
        let mut current: Vec<(f64, Location)> = Vec::new();
        for (ln, col0, chunk) in &body {
            let mut col = *col0;
            // Rows end at ';' or at a line break.
            for segment in chunk.split_inclusive(';') {
                let ends_row = segment.ends_with(';');
                let content = segment.trim_end_matches(';');
                let mut offset = 0;
                for token in content.split(|c: char| c.is_whitespace() || c == ',') {
                    if token.is_empty() {
                        offset += 1;
                        continue;
                    }
                    let loc = Location {
                        line: *ln,
                        column: col + offset,
                    };
                    let v = parse_number(token).ok_or_else(|| {
                        Error::parse(loc.line, loc.column, format!("invalid number '{token}' in mpc.{name}"))
                    })?;
                    current.push((v, loc));
                    offset += token.len() + 1;
                }
                col += segment.len();
                if ends_row && !current.is_empty() {
                    rows.push(std::mem::take(&mut current));
                }
            }
            if !current.is_empty() {
                rows.push(std::mem::take(&mut current));
            }
        }
        blocks.insert(
            name,
            (
                Block { rows },
                Location {
                    line: line_no,
                    column: open_col,
                },
            ),
        );
    }

    let base_mva = base_mva.ok_or_else(|| Error::parse(1, 1, "missing mpc.baseMVA"))?;
    let take = |name: &str| {
        blocks
            .get(name)
            .ok_or_else(|| Error::parse(text.lines().count().max(1), 1, format!("missing mpc.{name}")))
    };
    let (bus_block, _) = take("bus")?;
    let (gen_block, _) = take("gen")?;
    let (branch_block, _) = take("branch")?;
    let (cost_block, cost_loc) = take("gencost")?;

    let need = |row: &[(f64, Location)], n: usize, what: &str| -> Result<()> {
        if row.len() < n {
            let loc = row.first().map(|c| c.1).unwrap_or_default();
            Err(Error::parse(
                loc.line,
                loc.column,
                format!("{what} row has {} columns, expected at least {n}", row.len()),
            ))
        } else {
            Ok(())
        }
    };
    let as_id = |cell: &(f64, Location), what: &str| -> Result<usize> {
        let v = cell.0;
        if v >= 1.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::parse(cell.1.line, cell.1.column, format!("invalid {what} '{v}'")))
        }
    };

    let mut buses = Vec::new();
    let mut isolated = std::collections::BTreeSet::new();
    for row in &bus_block.rows {
        need(row, 3, "bus")?;
        let id = as_id(&row[0], "bus id")?;
        let bus_type = row[1].0;
        if bus_type == 4.0 {
            log::warn!("bus {id} is isolated (type 4); dropping it");
            isolated.insert(id);
            continue;
        }
        buses.push(Bus {
            id,
            name: id.to_string(),
            is_slack: bus_type == 3.0,
            demand_mw: row[2].0,
        });
    }

    let mut lines_out = Vec::new();
    for row in &branch_block.rows {
        need(row, 6, "branch")?;
        let from = as_id(&row[0], "from bus")?;
        let to = as_id(&row[1], "to bus")?;
        let in_service = row.get(10).map_or(true, |c| c.0 > 0.0);
        if !in_service {
            continue;
        }
        if isolated.contains(&from) || isolated.contains(&to) {
            let loc = row[0].1;
            return Err(Error::parse(loc.line, loc.column, "in-service branch touches an isolated bus"));
        }
        let (x, xloc) = row[3];
        if !(x > 0.0) {
            return Err(Error::parse(xloc.line, xloc.column, format!("branch reactance must be positive, got {x}")));
        }
        if let Some(tap) = row.get(8) {
            if tap.0 != 0.0 && tap.0 != 1.0 {
                log::warn!("line {}: ignoring transformer tap ratio {}", tap.1.line, tap.0);
            }
        }
        if let Some(shift) = row.get(9) {
            if shift.0 != 0.0 {
                log::warn!("line {}: ignoring phase shift {}", shift.1.line, shift.0);
            }
        }
        let rate_a = row[5].0;
        lines_out.push(Line {
            from_bus: from,
            to_bus: to,
            susceptance: 1.0 / x,
            flow_limit: if rate_a > 0.0 { rate_a } else { UNLIMITED_FLOW_MW },
        });
    }

    if cost_block.rows.len() < gen_block.rows.len() {
        return Err(Error::parse(
            cost_loc.line,
            cost_loc.column,
            format!(
                "mpc.gencost has {} rows for {} generators",
                cost_block.rows.len(),
                gen_block.rows.len()
            ),
        ));
    }
    if cost_block.rows.len() > gen_block.rows.len() {
        log::warn!("ignoring {} reactive-power cost rows", cost_block.rows.len() - gen_block.rows.len());
    }

    let mut generators = Vec::new();
    for (row, cost) in gen_block.rows.iter().zip(&cost_block.rows) {
        need(row, 10, "gen")?;
        need(cost, 4, "gencost")?;
        let (alpha, beta) = quadratic_cost(cost)?;
        let bus = as_id(&row[0], "generator bus")?;
        if row[7].0 <= 0.0 {
            continue;
        }
        let (pmax, pmin) = (row[8].0, row[9].0);
        if pmin > 0.0 {
            log::warn!("line {}: ignoring Pmin = {pmin}; dispatch lower bound is 0", row[9].1.line);
        }
        if pmax <= 0.0 {
            log::warn!("line {}: dropping generator at bus {bus} with Pmax = {pmax}", row[8].1.line);
            continue;
        }
        generators.push(Generator {
            bus,
            alpha,
            beta,
            g_max: pmax,
        });
    }

    Ok(Network {
        mva_base: base_mva,
        buses,
        lines: lines_out,
        generators,
    })
}

fn parse_number(token: &str) -> Option<f64> {
    match token {
        "Inf" | "inf" => Some(f64::INFINITY),
        "-Inf" | "-inf" => Some(f64::NEG_INFINITY),
        _ => token.parse().ok(),
    }
}

/// `(α, β)` from a polynomial gencost row of degree at most two.
fn quadratic_cost(cost: &[(f64, Location)]) -> Result<(f64, f64)> {
    let (model, loc) = cost[0];
    if model != 2.0 {
        return Err(Error::UnsupportedCostModel {
            location: loc,
            message: format!("cost model {model} (only polynomial model 2 is supported)"),
        });
    }
    let n = cost[3].0;
    if n.fract() != 0.0 || n < 1.0 {
        return Err(Error::parse(cost[3].1.line, cost[3].1.column, format!("invalid NCOST {n}")));
    }
    let n = n as usize;
    if n > 3 {
        return Err(Error::UnsupportedCostModel {
            location: cost[3].1,
            message: format!("polynomial of degree {} (at most quadratic is supported)", n - 1),
        });
    }
    if cost.len() < 4 + n {
        return Err(Error::parse(loc.line, loc.column, format!("gencost row needs {} coefficients", n)));
    }
    let coeffs: Vec<f64> = cost[4..4 + n].iter().map(|c| c.0).collect();
    // Highest degree first; the constant term does not affect dispatch.
    Ok(match n {
        3 => (coeffs[0], coeffs[1]),
        2 => (0.0, coeffs[0]),
        _ => (0.0, 0.0),
    })
}
