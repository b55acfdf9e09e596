#![allow(dead_code)]

use std::path::{Path, PathBuf};

use lmb_core::grid::{normalize, Bus, Generator, Line, Network};
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub struct Shape {
    pub buses: std::ops::RangeInclusive<usize>,
    pub max_lines: usize,
    pub max_gens: usize,
}

/// Random connected network: a spanning tree plus extra distinct lines,
/// generators at distinct buses with enough total capacity.
pub fn random_network(rng: &mut StdRng, shape: &Shape) -> Network {
    let n = rng.random_range(shape.buses.clone());
    let buses: Vec<Bus> = (1..=n)
        .map(|id| Bus {
            id,
            name: format!("b{id}"),
            is_slack: id == 1,
            demand_mw: if rng.random_bool(0.1) { 0.0 } else { rng.random_range(5.0..50.0) },
        })
        .collect();

    let mut pairs: Vec<(usize, usize)> = (2..=n).map(|b| (rng.random_range(1..b), b)).collect();
    let max_pairs = n * (n - 1) / 2;
    let target = rng.random_range(pairs.len()..=shape.max_lines.min(max_pairs).max(pairs.len()));
    while pairs.len() < target {
        let a = rng.random_range(1..=n);
        let b = rng.random_range(1..=n);
        let p = (a.min(b), a.max(b));
        if a != b && !pairs.contains(&p) {
            pairs.push(p);
        }
    }
    let lines = pairs
        .into_iter()
        .map(|(a, b)| Line {
            from_bus: a,
            to_bus: b,
            susceptance: rng.random_range(5.0..20.0),
            flow_limit: if rng.random_bool(0.3) { 1e4 } else { rng.random_range(10.0..80.0) },
        })
        .collect();

    let k = rng.random_range(1..=shape.max_gens.min(n));
    let mut at: Vec<usize> = (1..=n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        at.swap(i, j);
    }
    let total: f64 = buses.iter().map(|b| b.demand_mw).sum();
    let mut generators: Vec<Generator> = at[..k]
        .iter()
        .map(|&bus| Generator {
            bus,
            alpha: rng.random_range(0.01..0.5),
            beta: rng.random_range(5.0..40.0),
            g_max: rng.random_range(30.0..150.0),
        })
        .collect();
    let cap: f64 = generators.iter().map(|g| g.g_max).sum();
    if cap < 1.3 * total {
        let scale = 1.3 * total / cap;
        generators.iter_mut().for_each(|g| g.g_max *= scale);
    }
    normalize(&Network {
        mva_base: 100.0,
        buses,
        lines,
        generators,
    })
    .expect("generated network is valid")
}

pub fn one_bus(alpha: f64, beta: f64, g_max: f64, demand: f64) -> Network {
    normalize(&Network {
        mva_base: 100.0,
        buses: vec![Bus {
            id: 1,
            name: "1".into(),
            is_slack: true,
            demand_mw: demand,
        }],
        lines: vec![],
        generators: vec![Generator {
            bus: 1,
            alpha,
            beta,
            g_max,
        }],
    })
    .unwrap()
}

/// Two buses, cheap generation at bus 1, load at bus 2, line limit given.
pub fn two_bus(limit: f64) -> Network {
    let bus = |id, d| Bus {
        id,
        name: id.to_string(),
        is_slack: id == 1,
        demand_mw: d,
    };
    normalize(&Network {
        mva_base: 100.0,
        buses: vec![bus(1, 0.0), bus(2, 30.0)],
        lines: vec![Line {
            from_bus: 1,
            to_bus: 2,
            susceptance: 10.0,
            flow_limit: limit,
        }],
        generators: vec![
            Generator { bus: 1, alpha: 0.5, beta: 10.0, g_max: 100.0 },
            Generator { bus: 2, alpha: 0.5, beta: 20.0, g_max: 100.0 },
        ],
    })
    .unwrap()
}

/// Average ranks, 1-based, ties sharing the mean rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = mean;
        }
        i = j + 1;
    }
    r
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

pub struct QpOptimum {
    pub x: DVector<f64>,
    pub mu: DVector<f64>,
    pub nu: DVector<f64>,
    pub objective: f64,
}

/// Brute-force QP solution: tries every active set, solves the equality
/// constrained problem with nalgebra's LU, and keeps the feasible point with
/// non-negative multipliers and the lowest objective.
pub fn enumerate_active_sets(qp: &lmb_core::QpForm) -> Option<QpOptimum> {
    let n = qp.n_vars();
    let m = qp.n_ineq();
    let p = qp.n_eq();
    assert!(m <= 16, "enumeration is exponential in the inequality count");
    let mut best: Option<QpOptimum> = None;
    for mask in 0u32..(1 << m) {
        let active: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let size = n + active.len() + p;
        let mut kkt = DMatrix::zeros(size, size);
        let mut rhs = DVector::zeros(size);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.q);
        for i in 0..n {
            rhs[i] = -qp.w[i];
        }
        for (r, &i) in active.iter().enumerate() {
            for c in 0..n {
                kkt[(n + r, c)] = qp.g[(i, c)];
                kkt[(c, n + r)] = qp.g[(i, c)];
            }
            rhs[n + r] = qp.h[i];
        }
        let e0 = n + active.len();
        for r in 0..p {
            for c in 0..n {
                kkt[(e0 + r, c)] = qp.a[(r, c)];
                kkt[(c, e0 + r)] = qp.a[(r, c)];
            }
            rhs[e0 + r] = qp.y[r];
        }
        let Some(z) = kkt.clone().lu().solve(&rhs) else { continue };
        if !z.iter().all(|v| v.is_finite()) || (&kkt * &z - &rhs).amax() > 1e-8 * rhs.amax().max(1.0) {
            continue;
        }
        let x = z.rows(0, n).into_owned();
        let slack = &qp.h - &qp.g * &x;
        if slack.iter().any(|s| *s < -1e-9 * qp.h.amax().max(1.0)) {
            continue;
        }
        let mut mu = DVector::zeros(m);
        for (r, &i) in active.iter().enumerate() {
            mu[i] = z[n + r];
        }
        if mu.iter().any(|v| *v < -1e-9) {
            continue;
        }
        let nu = z.rows(e0, p).into_owned();
        let objective = qp.objective(&x);
        if best.as_ref().is_none_or(|b| objective < b.objective) {
            best = Some(QpOptimum { x, mu, nu, objective });
        }
    }
    best
}
