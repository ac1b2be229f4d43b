//! Property tests over the public API.

use latent_demand::eval::{icp, mil, quantiles_from_gaussian};
use latent_demand::fleet::{
    charge, station_choice_probabilities, time_to_80, trip_consumption, update_soc, willingness_to_charge,
    StationChoiceSign, WillingnessParams,
};
use latent_demand::graph::build_adjacency;
use latent_demand::ingest::Station;
use latent_demand::losses::{censored_tilted_loss, gaussian_nll, tilted_loss, tobit_loss};
use latent_demand::panel::{DemandPanel, HourRange};
use latent_demand::tensor::Tensor;
use latent_demand::training::{clip_global_norm, global_norm, Scaler};
use proptest::collection::vec;
use proptest::prelude::*;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * b.abs().max(1.0)
}

proptest! {
    #[test]
    fn charge_is_monotone_within_each_branch(
        soc in 0.0f64..1.0,
        cap in 10.0f64..120.0,
        power in 2.0f64..150.0,
        a in 0.0f64..1.0,
        b in 0.0f64..1.0,
    ) {
        let t80 = time_to_80(cap, soc, power).unwrap();
        let (lo, hi) = (a.min(b), a.max(b));
        for (d1, d2) in [(lo * t80, hi * t80), (t80 * (1.0 + lo), t80 * (1.0 + hi))] {
            let (c1, c2) = (charge(soc, cap, power, d1), charge(soc, cap, power, d2));
            prop_assert!(c1 <= c2 + 1e-15, "{d1} -> {c1}, {d2} -> {c2}");
            prop_assert!(c2 <= 1.0);
        }
    }

    #[test]
    fn willingness_grows_with_depletion(
        init in 0.01f64..1.0,
        x in 0.0f64..1.0,
        y in 0.0f64..1.0,
    ) {
        let p = WillingnessParams::default();
        let (f_hi, f_lo) = (init * x.max(y), init * x.min(y));
        let w_hi = willingness_to_charge(init, f_hi, p).unwrap();
        let w_lo = willingness_to_charge(init, f_lo, p).unwrap();
        prop_assert!((0.0..=1.0).contains(&w_hi) && (0.0..=1.0).contains(&w_lo));
        prop_assert!(w_lo >= w_hi - 1e-12);
    }

    #[test]
    fn choice_probabilities_sum_to_one(
        coords in vec((55.6f64..55.75, 12.4f64..12.65), 1..30),
        lat in 55.6f64..55.75,
        lon in 12.4f64..12.65,
        negative in any::<bool>(),
    ) {
        let stations: Vec<Station> = coords
            .iter()
            .enumerate()
            .map(|(i, &(lat, lon))| Station { station_id: format!("s{i}"), lat, lon, power_kw: 22.0, plugs: 2 })
            .collect();
        let sign = if negative { StationChoiceSign::Negative } else { StationChoiceSign::Positive };
        let p = station_choice_probabilities(lat, lon, &stations, sign).unwrap();
        let total: f64 = p.iter().map(|(_, w)| w).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn soc_stays_in_unit_interval(start in 0.2f64..1.0, trips in vec((0.0f64..300.0, 100.0f64..600.0), 0..40)) {
        let mut soc = start;
        for (d, range) in trips {
            soc = update_soc(soc, trip_consumption(d, range).unwrap()).soc;
            prop_assert!((0.0..=1.0).contains(&soc));
        }
    }

    #[test]
    fn adjacency_is_symmetric_and_contractive(coords in vec((55.6f64..55.75, 12.4f64..12.65), 1..8), bw in 0.5f64..5.0) {
        let a = build_adjacency(&coords, bw).unwrap().a_hat;
        let k = coords.len();
        for i in 0..k {
            for j in 0..k {
                prop_assert!((a.get(i, j) - a.get(j, i)).abs() < 1e-15);
                prop_assert!(a.get(i, j) > 0.0 && a.get(i, j) <= 1.0 + 1e-12);
            }
        }
        // power iteration; the matrix is symmetric non-negative
        let mut x = vec![1.0; k];
        let mut rho = 0.0;
        for _ in 0..200 {
            let y: Vec<f64> = (0..k).map(|i| (0..k).map(|j| a.get(i, j) * x[j]).sum()).collect();
            let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            rho = n / x.iter().map(|v| v * v).sum::<f64>().sqrt();
            x = y.iter().map(|v| v / n).collect();
        }
        prop_assert!(rho <= 1.0 + 1e-9, "spectral radius {rho}");
    }

    #[test]
    fn uncensored_losses_reduce(
        rows in vec((-5.0f64..5.0, -5.0f64..5.0, 0.01f64..4.0, -5.0f64..5.0, -5.0f64..5.0), 1..50),
    ) {
        let y: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let mu: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let sigma: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let f = vec![mu.clone(), rows.iter().map(|r| r.3).collect()];
        let tau: Vec<f64> = rows.iter().map(|r| r.4).collect();
        let flags = vec![false; y.len()];
        let n = y.len() as f64;
        prop_assert!(close(tobit_loss(&y, &mu, &sigma, &flags).unwrap(), n * gaussian_nll(&y, &mu, &sigma).unwrap()));
        let levels = [0.2, 0.7];
        let sum = tilted_loss(&y, &f[0], 0.2).unwrap() + tilted_loss(&y, &f[1], 0.7).unwrap();
        prop_assert!(close(censored_tilted_loss(&y, &f, &tau, &flags, &levels).unwrap(), sum));
    }

    #[test]
    fn clipping_bounds_the_global_norm(xs in vec(vec(-1e3f64..1e3, 1..20), 1..6), max in 1e-3f64..10.0) {
        let mut g: Vec<Tensor> = xs.into_iter().map(Tensor::row).collect();
        let before = global_norm(&g);
        let reported = clip_global_norm(&mut g, max);
        prop_assert_eq!(before, reported);
        prop_assert!(global_norm(&g) <= max);
    }

    #[test]
    fn scaling_roundtrips_and_commutes_with_clipping(
        cells in vec((0.0f64..100.0, 0.0f64..1.0), 6..60),
    ) {
        let k = 3;
        let n_hours = cells.len() / k;
        let cells = &cells[..n_hours * k];
        let truth: Vec<f64> = cells.iter().map(|c| c.0).collect();
        // caps between half and one and a half times the demand
        let observed: Vec<f64> = cells.iter().map(|c| c.0.min(c.0 * (0.5 + c.1))).collect();
        let panel = DemandPanel::from_observed_true(HourRange { start: 0, n_hours }, k, observed, truth).unwrap();
        let s = Scaler::fit(&panel, n_hours).unwrap();
        for t in 0..n_hours {
            for v in 0..k {
                let y = panel.true_at(t, v);
                prop_assert!((s.inverse(v, s.scale(v, y)) - y).abs() < 1e-9);
                prop_assert!((0.0..=1.0 + 1e-12).contains(&s.scale(v, panel.observed_at(t, v))));
                if let Some(tau) = panel.threshold_at(t, v) {
                    let lhs = s.scale(v, y.min(tau));
                    let rhs = s.scale(v, y).min(s.scale(v, tau));
                    prop_assert!((lhs - rhs).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn interval_metrics_ignore_node_order(
        (rows, idx) in vec((-3.0f64..3.0, 0.0f64..2.0, -4.0f64..4.0), 1..40).prop_flat_map(|rows| {
            let n = rows.len();
            (Just(rows), Just((0..n).collect::<Vec<usize>>()).prop_shuffle())
        }),
    ) {
        let low: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let high: Vec<f64> = rows.iter().map(|r| r.0 + r.1).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let pick = |xs: &[f64]| idx.iter().map(|&i| xs[i]).collect::<Vec<_>>();
        let c = icp(&low, &high, &y).unwrap();
        let m = mil(&low, &high).unwrap();
        prop_assert!((0.0..=1.0).contains(&c) && m >= 0.0);
        prop_assert_eq!(c, icp(&pick(&low), &pick(&high), &pick(&y)).unwrap());
        prop_assert!((m - mil(&pick(&low), &pick(&high)).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn gaussian_quantiles_are_monotone(
        mu in -10.0f64..10.0,
        sigma in 1e-3f64..10.0,
        mut levels in vec(0.001f64..0.999, 2..8),
    ) {
        levels.sort_by(f64::total_cmp);
        let q = quantiles_from_gaussian(&[mu], &[sigma], &levels).unwrap();
        for w in q.windows(2) {
            prop_assert!(w[0][0] <= w[1][0]);
        }
    }
}
