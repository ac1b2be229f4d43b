//! Quick oracle and invariant checks runnable from the command line.

use crate::eval::{icp, market_share_censor, mil, quantiles_from_gaussian};
use crate::fleet::{charge, time_to_80};
use crate::graph::haversine;
use crate::ingest::{generate_synthetic_stations, generate_synthetic_trips, sample_fleet, table5_market, BoundingBox, SynthConfig};
use crate::losses::{censored_tilted_loss, gaussian_nll, tilted_loss, tobit_loss};
use crate::model::{HeadKind, ModelConfig, OuterActivation, ParamVars, TgcnParams, WindowBatch, tgcn_forward_batch, HeadVars};
use crate::queue::{aggregate_demand, run_counterfactual, verify_occupancy, QueuePolicy, SimParams};
use crate::synthetic::{station_panel, StationSynthConfig};
use crate::tensor::gradcheck::{check_gradients, Coords};
use crate::tensor::{gaussian_pdf, Tape, Tensor};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    match f() {
        Ok((passed, detail)) => CheckResult { name, passed, detail },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn physics() -> Result<(bool, String)> {
    let t80 = time_to_80(57.0, 0.5, 50.0)?;
    let soc = charge(0.5, 57.0, 22.0, 0.2);
    let pdf = gaussian_pdf(0.0, 0.0, 1.0)?;
    let d = haversine(55.6761, 12.5683, 56.1629, 10.2039);
    let ok = (t80 - 0.456).abs() < 1e-12
        && (soc - 0.5771929824561404).abs() < 1e-12
        && (pdf - 0.39894228).abs() < 1e-8
        && (d - 156.5).abs() < 0.5;
    Ok((ok, format!("t80 {t80}, charge {soc}, pdf {pdf}, haversine {d:.4} km")))
}

fn loss_reductions() -> Result<(bool, String)> {
    let y = [0.3, 0.9, 0.1, 0.6, 0.45];
    let mu = [0.25, 0.7, 0.2, 0.6, 0.5];
    let sigma = [0.1, 0.3, 0.05, 0.2, 0.4];
    let flags = [false; 5];
    let g = gaussian_nll(&y, &mu, &sigma)?;
    let t = tobit_loss(&y, &mu, &sigma, &flags)?;
    let levels = [0.05, 0.5, 0.95];
    let f = vec![mu.to_vec(), sigma.to_vec(), y.iter().map(|v| v * 0.5).collect()];
    let c = censored_tilted_loss(&y, &f, &y, &flags, &levels)?;
    let s: f64 = f.iter().zip(levels).map(|(f, q)| tilted_loss(&y, f, q)).sum::<Result<f64>>()?;
    let ok = (t - 5.0 * g).abs() < 1e-12 && (c - s).abs() < 1e-12;
    Ok((ok, format!("tobit - N*nll = {:.2e}, censored - sum = {:.2e}", t - 5.0 * g, c - s)))
}

fn metrics() -> Result<(bool, String)> {
    let q = quantiles_from_gaussian(&[0.0], &[1.0], &[0.95])?;
    let i = icp(&[0.0, 0.0], &[1.0, 1.0], &[0.5, 2.0])?;
    let m = mil(&[0.0, 0.0], &[0.1, 0.3])?;
    let ok = (q[0][0] - 1.6449).abs() < 1e-4 && i == 0.5 && (m - 0.2).abs() < 1e-15;
    Ok((ok, format!("z95 {:.6}, icp {i}, mil {m}", q[0][0])))
}

fn gradients() -> Result<(bool, String)> {
    let cfg = ModelConfig {
        nodes: 3,
        features: 5,
        c1: 4,
        c2: 2,
        hidden: 4,
        head: HeadKind::Gaussian,
        outer_activation: OuterActivation::Identity,
    };
    let params = TgcnParams::init(&cfg, 3)?;
    let a_hat = crate::graph::build_adjacency(&[(55.6, 12.4), (55.65, 12.5), (55.7, 12.45)], 3.0)?.a_hat;
    let features = Tensor::from_matrix(
        8 * 3,
        5,
        (0..8 * 3 * 5).map(|i| ((i * 37 % 101) as f64 / 101.0) - 0.5).collect(),
    )?;
    let y = Tensor::from_matrix(2, 3, vec![0.2, 0.5, 0.4, 0.7, 0.1, 0.3])?;
    let flags = [false, true, false, true, false, false];
    let batch = WindowBatch { starts: vec![0, 3], len: 4 };
    let tensors: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
    let report = check_gradients(
        &tensors,
        |tape: &Tape, v| {
            let pv = ParamVars::from_vars(v)?;
            let HeadVars::Gaussian { mu, sigma } = tgcn_forward_batch(tape, &pv, &a_hat, &features, &batch, &cfg)? else {
                unreachable!("gaussian head")
            };
            crate::losses::tobit_loss_var(tape, &y, mu, sigma, &flags)
        },
        1e-6,
        Coords::Sample { per_tensor: 8, seed: 1 },
    )?;
    Ok((report.max_rel_error < 1e-4, format!("max relative error {:.2e}", report.max_rel_error)))
}

fn simulator() -> Result<(bool, String)> {
    let cfg = SynthConfig {
        n_vehicles: 60,
        n_days: 3,
        ..SynthConfig::default()
    };
    let trips = generate_synthetic_trips(&cfg, 5)?;
    let stations = generate_synthetic_stations(8, &BoundingBox::copenhagen(), 5)?;
    let ids: Vec<String> = trips.iter().map(|t| t.vehicle_id.clone()).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let fleet = sample_fleet(&ids, &table5_market(), 5)?;
    let ledger = run_counterfactual(&trips, &fleet, &stations, QueuePolicy::FirstComeFirstServe, &SimParams::default(), 5)?;
    verify_occupancy(&ledger, &stations)?;
    let map = stations.iter().enumerate().map(|(i, s)| (s.station_id.clone(), i % 2)).collect();
    let range = ledger.horizon.ok_or_else(|| crate::Error::validation("empty ledger"))?;
    let panel = aggregate_demand(&ledger, &map, 2, range)?;
    let obs: f64 = panel.observed.iter().sum();
    let truth: f64 = panel.true_demand.iter().sum();
    let lost = ledger.total_lost_kwh();
    let ok = ((obs + lost) - truth).abs() <= 1e-9 * truth.max(1.0);
    Ok((ok, format!("observed {obs:.3} + lost {lost:.3} vs true {truth:.3} kWh")))
}

fn market_share() -> Result<(bool, String)> {
    let s = station_panel(&StationSynthConfig {
        n_hours: 48,
        ..StationSynthConfig::default()
    })?;
    let p = market_share_censor(&s.stations, 0.5, 1)?;
    let full = market_share_censor(&s.stations, 1.0, 1)?;
    let total: f64 = s.stations.demand.iter().sum();
    let ok = (p.true_demand.iter().sum::<f64>() - total).abs() < 1e-9 * total.max(1.0)
        && full.censored.iter().all(|&c| !c);
    Ok((ok, format!("total {total:.3} kWh conserved")))
}

/// Runs every check; takes a few seconds.
pub fn run_selftest() -> Vec<CheckResult> {
    vec![
        check("physics spot values", physics),
        check("loss reductions without censoring", loss_reductions),
        check("interval metrics", metrics),
        check("t-gcn tobit gradients", gradients),
        check("simulator conservation", simulator),
        check("market share conservation", market_share),
    ]
}
