mod common;

use common::*;
use lmb_core::grid::{line_incidence, normalize, ptdf};
use lmb_core::io::{TimeSeriesRecord, TimeSeriesTable};
use lmb_core::pricing::{lmps, retail_model0, retail_model1, Averaging, PricingModel, RetailConfig};
use lmb_core::static_burden;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

const SHAPE: Shape = Shape {
    buses: 2..=8,
    max_lines: 12,
    max_gens: 4,
};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ptdf_flows_balance_injections(seed in any::<u64>(), inj in prop::collection::vec(-50.0f64..50.0, 8)) {
        let net = random_network(&mut rng(seed), &SHAPE);
        let n = net.n_buses();
        let q = DVector::from_column_slice(&inj[..n]);
        let f = ptdf(&net).unwrap();
        let net_out = line_incidence(&net).transpose() * (&f * &q);
        let slack = net.slack_index();
        for i in 0..n {
            let expected = if i == slack { q[i] - q.sum() } else { q[i] };
            prop_assert!(close(net_out[i], expected, 1e-9), "bus {}: {} vs {}", i + 1, net_out[i], expected);
        }
    }

    #[test]
    fn normalize_is_idempotent(seed in any::<u64>()) {
        let net = random_network(&mut rng(seed), &SHAPE);
        prop_assert_eq!(normalize(&net).unwrap(), net);
    }

    #[test]
    fn burden_scales_inversely_with_income(
        d in prop::collection::vec(0.0f64..100.0, 1..10),
        c in 0.1f64..10.0,
        seed in any::<u64>(),
    ) {
        let n = d.len();
        let d = DVector::from_vec(d);
        let s = DVector::from_fn(n, |i, _| 1e3 + 1e3 * ((seed >> (i % 32)) & 0xff) as f64);
        let pi = DVector::from_fn(n, |i, _| 10.0 + i as f64);
        let base = static_burden(&d, &s, &pi, None).unwrap();
        let scaled = static_burden(&d, &(&s * c), &pi, None).unwrap();
        for i in 0..n {
            prop_assert!(close(scaled.b[i] * c, base.b[i], 1e-12));
        }
    }

    #[test]
    fn lmps_are_linear_in_the_duals(
        seed in any::<u64>(),
        a in -5.0f64..5.0,
        u in prop::collection::vec(-100.0f64..100.0, 13),
        v in prop::collection::vec(-100.0f64..100.0, 13),
    ) {
        let net = random_network(&mut rng(seed), &SHAPE);
        let f: DMatrix<f64> = ptdf(&net).unwrap();
        let m = net.n_lines() + 1;
        let (u, v) = (DVector::from_column_slice(&u[..m]), DVector::from_column_slice(&v[..m]));
        let combined = lmps(&(&u * a + &v), &f).unwrap().lambda;
        let parts = lmps(&u, &f).unwrap().lambda * a + lmps(&v, &f).unwrap().lambda;
        for i in 0..net.n_buses() {
            prop_assert!(close(combined[i], parts[i], 1e-10));
        }
    }

    #[test]
    fn model0_without_adders_is_the_lmp(lambda in prop::collection::vec(-20.0f64..200.0, 1..10)) {
        let n = lambda.len();
        let lmp = lmb_core::LmpVector { lambda: DVector::from_vec(lambda) };
        let prices = retail_model0(&lmp, &DVector::from_element(n, 5.0), &RetailConfig::default()).unwrap();
        prop_assert_eq!(prices.per_bus(n).unwrap(), lmp.lambda);
    }

    #[test]
    fn model1_price_lies_between_extreme_lmps(
        steps in prop::collection::vec((0.1f64..50.0, 0.0f64..150.0), 1..12),
        per_region in any::<bool>(),
    ) {
        // Two buses share one horizon; omega is zero so prices are pure averages.
        let records = steps.iter().enumerate().flat_map(|(t, &(d, lmp))| {
            [1, 2].map(|bus| TimeSeriesRecord { bus, t, demand: d * bus as f64, omega: 0.0, lmp: Some(lmp + bus as f64) })
        });
        let series = TimeSeriesTable::from_records(records).unwrap();
        let config = RetailConfig {
            model: PricingModel::Averaged,
            regions: vec![vec![1, 2]],
            averaging: if per_region { Averaging::PerRegion } else { Averaging::PerNode },
            ..RetailConfig::default()
        };
        let lo = steps.iter().map(|s| s.1).fold(f64::INFINITY, f64::min) + 1.0;
        let hi = steps.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max) + 2.0;
        for p in retail_model1(&series, &config).unwrap().prices {
            prop_assert!(p.pi >= lo - 1e-9 && p.pi <= hi + 1e-9, "{} outside [{lo}, {hi}]", p.pi);
        }
    }
}
