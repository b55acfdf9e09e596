//! Benchmark fixtures: the 24-bus synthetic case and a scalable ring grid.

use lmb_core::io::{parse_case, parse_income, CaseFormat, IncomeTable};
use lmb_core::{normalize, Bus, Generator, Line, Network};

const SYNTHETIC24: &str = include_str!("../../core/tests/fixtures/synthetic24.json");
const SYNTHETIC24_INCOME: &str = include_str!("../../core/tests/fixtures/synthetic24_income.csv");

pub fn synthetic24() -> (Network, IncomeTable) {
    let net = parse_case(SYNTHETIC24.as_bytes(), CaseFormat::Json).expect("bundled case parses");
    let income = parse_income(SYNTHETIC24_INCOME.as_bytes()).expect("bundled income parses");
    (net, income)
}

/// Ring of `n` buses with a chord every fifth bus and a generator every
/// fourth. Deterministic, uncongested except for a few tight chords.
pub fn ring(n: usize) -> Network {
    assert!(n >= 3);
    let buses = (1..=n)
        .map(|id| Bus {
            id,
            name: format!("r{id}"),
            is_slack: id == 1,
            demand_mw: 10.0 + (id * 7 % 13) as f64,
        })
        .collect::<Vec<_>>();
    let mut lines: Vec<Line> = (1..=n)
        .map(|a| Line {
            from_bus: a,
            to_bus: a % n + 1,
            susceptance: 8.0 + (a % 5) as f64,
            flow_limit: 1e4,
        })
        .collect();
    for a in (1..=n).step_by(5) {
        let b = (a + n / 2 - 1) % n + 1;
        if b != a && b != a % n + 1 && a != b % n + 1 {
            lines.push(Line {
                from_bus: a.min(b),
                to_bus: a.max(b),
                susceptance: 4.0,
                flow_limit: 15.0,
            });
        }
    }
    let total: f64 = buses.iter().map(|b| b.demand_mw).sum();
    let n_gen = n.div_ceil(4);
    let generators = (0..n_gen)
        .map(|j| Generator {
            bus: 4 * j + 1,
            alpha: 0.02 + 0.01 * (j % 7) as f64,
            beta: 15.0 + 2.0 * (j % 5) as f64,
            g_max: 2.0 * total / n_gen as f64,
        })
        .collect();
    normalize(&Network {
        mva_base: 100.0,
        buses,
        lines,
        generators,
    })
    .expect("ring network is valid")
}
