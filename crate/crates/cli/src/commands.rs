use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use latent_demand::eval::{
    evaluate_params, market_share_censor, run_experiment, run_panel, write_node_series_csv, write_reports_csv,
    write_summary_csv, CellSpec, EvalReport, Protocol, RunMeta,
};
use latent_demand::graph::{build_adjacency, kmeans_cluster, read_matrix_csv, write_matrix_csv};
use latent_demand::ingest::{
    format_time, generate_synthetic_stations, generate_synthetic_trips, load_stations, load_trips, sample_fleet,
    table5_market, write_stations, write_trips,
};
use latent_demand::model::ForecastHeads;
use latent_demand::panel::{censorship_stats, CensorshipStats, DemandPanel, StationPanel};
use latent_demand::queue::{
    aggregate_demand, run_counterfactual, station_demand, trip_horizon, verify_occupancy, penetration_subset,
    QueuePolicy,
};
use latent_demand::selftest::run_selftest;
use latent_demand::synthetic::station_panel;
use latent_demand::tensor::Tensor;
use latent_demand::training::{
    make_windows, predict, train, write_history, Checkpoint, ScaledPanel, WindowSet,
};
use serde::Serialize;

use crate::config::{require, CompeteConfig, EvalSplit, EvaluateConfig, SimulateConfig, TrainSection};
use crate::invalid;
use crate::manifest::RunDir;

#[derive(Debug, Clone, Serialize)]
struct SimRun {
    policy: QueuePolicy,
    penetration: f64,
    n_vehicles: usize,
    served_kwh: f64,
    lost_kwh: f64,
    depletions: usize,
    censorship: CensorshipStats,
    panel: String,
    ledger: String,
    station_panel: String,
}

fn tag(policy: QueuePolicy, rate: f64) -> String {
    format!("{}_{rate}", policy.as_str())
}

pub fn simulate(cfg: &SimulateConfig) -> Result<()> {
    if cfg.policies.is_empty() || cfg.penetration.is_empty() {
        return Err(invalid("simulate needs at least one policy and one penetration rate"));
    }
    let inputs: Vec<PathBuf> = [&cfg.trips, &cfg.stations]
        .into_iter()
        .flatten()
        .map(|p| require(&Some(p.clone()), "input file"))
        .collect::<Result<_>>()?;
    let mut out = RunDir::create(&cfg.out_dir, &inputs)?;

    let trips = match &cfg.trips {
        Some(p) => load_trips(p)?,
        None => {
            let t = generate_synthetic_trips(&cfg.synthetic, cfg.seed)?;
            write_trips(&out.file("trips.csv")?, &t)?;
            t
        }
    };
    let stations = match &cfg.stations {
        Some(p) => load_stations(p)?,
        None => {
            let s = generate_synthetic_stations(cfg.n_stations, &cfg.synthetic.bbox, cfg.seed)?;
            write_stations(&out.file("stations.csv")?, &s)?;
            s
        }
    };
    let range = trip_horizon(&trips).ok_or_else(|| invalid("trip log is empty"))?;
    let ids: Vec<String> = trips
        .iter()
        .map(|t| t.vehicle_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let fleet = sample_fleet(&ids, &table5_market(), cfg.seed)?;
    let clusters = kmeans_cluster(&stations, cfg.clusters, cfg.seed, cfg.kmeans_iters)?;
    clusters.write_csv(&out.file("clusters.csv")?)?;
    let adjacency = build_adjacency(&clusters.centroids, cfg.bandwidth_km)?;
    write_matrix_csv(&out.file("adjacency.csv")?, &adjacency.a_hat)?;

    let mut runs = Vec::new();
    for &policy in &cfg.policies {
        for &rate in &cfg.penetration {
            let chosen: BTreeSet<String> = penetration_subset(&ids, rate, cfg.seed)?.into_iter().collect();
            let subset: Vec<_> = trips.iter().filter(|t| chosen.contains(&t.vehicle_id)).cloned().collect();
            let ledger = run_counterfactual(&subset, &fleet, &stations, policy, &cfg.params, cfg.seed)?;
            verify_occupancy(&ledger, &stations)?;
            let panel = aggregate_demand(&ledger, &clusters.station_to_cluster, clusters.k, range)?;
            let by_station = station_demand(&ledger, &stations, &clusters.station_to_cluster, range)?;
            let t = tag(policy, rate);
            let names = (format!("panel_{t}.csv"), format!("ledger_{t}.csv"), format!("station_demand_{t}.csv"));
            panel.write_csv(&out.file(&names.0)?)?;
            ledger.write_csv(&out.file(&names.1)?)?;
            by_station.write_csv(&out.file(&names.2)?)?;
            runs.push((
                SimRun {
                    policy,
                    penetration: rate,
                    n_vehicles: chosen.len(),
                    served_kwh: ledger.total_served_kwh(),
                    lost_kwh: ledger.total_lost_kwh(),
                    depletions: ledger.depletions,
                    censorship: censorship_stats(&panel),
                    panel: names.0,
                    ledger: names.1,
                    station_panel: names.2,
                },
                panel,
            ));
        }
    }

    let stats: Vec<&SimRun> = runs.iter().map(|(r, _)| r).collect();
    std::fs::write(out.file("stats.json")?, serde_json::to_string_pretty(&stats)? + "\n")?;
    write_censorship_series(&out.file("censorship.csv")?, &runs)?;
    write_demand_series(&out.file("demand_series.csv")?, &runs)?;

    for (r, _) in &runs {
        println!(
            "{:<24} penetration {:<5} censored hours {:.4}  served {:.1} kWh  lost {:.1} kWh",
            r.policy.as_str(),
            r.penetration,
            r.censorship.overall,
            r.served_kwh,
            r.lost_kwh
        );
    }
    out.finish("simulate", cfg, vec![cfg.seed])?;
    Ok(())
}

fn write_censorship_series(path: &Path, runs: &[(SimRun, DemandPanel)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["policy", "penetration", "cluster", "censored_fraction"])?;
    for (r, _) in runs {
        let base = [r.policy.as_str().to_string(), r.penetration.to_string()];
        for (c, f) in r.censorship.per_cluster.iter().enumerate() {
            w.write_record([base[0].clone(), base[1].clone(), c.to_string(), f.to_string()])?;
        }
        w.write_record([base[0].clone(), base[1].clone(), "all".into(), r.censorship.overall.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_demand_series(path: &Path, runs: &[(SimRun, DemandPanel)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["policy", "penetration", "hour", "observed_kwh", "true_kwh"])?;
    for (r, p) in runs {
        for t in 0..p.n_hours() {
            let obs: f64 = (0..p.k).map(|v| p.observed_at(t, v)).sum();
            let tru: f64 = (0..p.k).map(|v| p.true_at(t, v)).sum();
            w.write_record([
                r.policy.as_str().to_string(),
                r.penetration.to_string(),
                format_time(p.range.hour_start(t)),
                obs.to_string(),
                tru.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn adjacency_path(explicit: &Option<PathBuf>, panel: &Path) -> Result<PathBuf> {
    let path = explicit
        .clone()
        .unwrap_or_else(|| panel.parent().unwrap_or(Path::new(".")).join("adjacency.csv"));
    require(&Some(path), "adjacency file")
}

fn check_adjacency(a_hat: &Tensor, k: usize) -> Result<()> {
    if a_hat.shape() != [k, k] {
        return Err(invalid(format!(
            "adjacency is {:?} but the panel has {k} nodes",
            a_hat.shape()
        )));
    }
    Ok(())
}

pub fn train_cmd(cfg: &TrainSection) -> Result<()> {
    let panel_path = require(&cfg.panel, "panel file")?;
    let adj_path = adjacency_path(&cfg.adjacency, &panel_path)?;
    let panel = DemandPanel::read_csv(&panel_path)?;
    let a_hat = read_matrix_csv(&adj_path)?;
    check_adjacency(&a_hat, panel.k)?;
    let hyper = &cfg.hyper;
    hyper.validate()?;
    let scaled = ScaledPanel::fit(&panel, hyper.window, hyper.split)?;
    let data = make_windows(scaled, a_hat, hyper.window, hyper.split)?;
    let mut out = RunDir::create(&cfg.out_dir, &[panel_path, adj_path])?;
    let outcome = train(cfg.model, &data, hyper)?;
    Checkpoint::new(&outcome, &data, hyper.split).write(&out.file("checkpoint.json")?)?;
    write_history(&outcome.history, &out.file("history.csv")?)?;
    println!(
        "{}: {} epochs, best validation loss {:.6} at epoch {}{}",
        cfg.model,
        outcome.history.len(),
        outcome.best_val_loss,
        outcome.best_epoch,
        if outcome.stopped_early { " (early stop)" } else { "" }
    );
    out.finish("train", cfg, vec![hyper.seed])?;
    Ok(())
}

fn samples(data: &WindowSet, split: EvalSplit) -> &[usize] {
    match split {
        EvalSplit::Train => &data.train,
        EvalSplit::Val => &data.val,
        EvalSplit::Test => &data.test,
    }
}

pub fn evaluate_cmd(cfg: &EvaluateConfig) -> Result<()> {
    let ck_path = require(&cfg.checkpoint, "checkpoint file")?;
    let panel_path = require(&cfg.panel, "panel file")?;
    let adj_path = adjacency_path(&cfg.adjacency, &panel_path)?;
    let ck = Checkpoint::read(&ck_path).with_context(|| format!("reading {}", ck_path.display()))?;
    let panel = DemandPanel::read_csv(&panel_path)?;
    if ck.model.nodes != panel.k {
        return Err(invalid(format!(
            "checkpoint has {} nodes but the panel has {}",
            ck.model.nodes, panel.k
        )));
    }
    let a_hat = read_matrix_csv(&adj_path)?;
    check_adjacency(&a_hat, panel.k)?;
    let params = ck.params()?;
    let scaled = ScaledPanel::new(&panel, ck.scaler.clone())?;
    let data = make_windows(scaled, a_hat, ck.window, ck.split)?;
    let which = samples(&data, cfg.split);
    if which.is_empty() {
        return Err(invalid("the chosen split has no windows"));
    }
    let levels = match &ck.model.head {
        latent_demand::model::HeadKind::Quantile { levels } => levels.clone(),
        latent_demand::model::HeadKind::Gaussian => latent_demand::training::DEFAULT_QUANTILES.to_vec(),
    };
    let meta = RunMeta {
        model_kind: Some(ck.kind),
        seed: cfg.seed,
        ..RunMeta::default()
    };
    let report = evaluate_params(&params, &ck.model, &data, which, &levels, meta)?;
    let mut out = RunDir::create(&cfg.out_dir, &[ck_path, panel_path, adj_path])?;
    std::fs::write(out.file("report.json")?, serde_json::to_string_pretty(&report)? + "\n")?;
    write_reports_csv(std::slice::from_ref(&report), &out.file("report.csv")?)?;
    write_node_series_csv(std::slice::from_ref(&report), &out.file("nodes.csv")?)?;
    let heads = predict(&params, &ck.model, &data, which)?;
    write_predictions(&out.file("predictions.csv")?, &data, which, &heads, &levels)?;
    println!(
        "{}: tilted loss {:.6}, ICP {:.4}, MIL {:.6} over {} windows",
        ck.kind, report.tilted_loss_sum, report.icp, report.mil, report.n_samples
    );
    out.finish("evaluate", cfg, vec![cfg.seed])?;
    Ok(())
}

/// Tidy forecast rows: hour, node, series name, scaled value.
fn write_predictions(path: &Path, data: &WindowSet, which: &[usize], heads: &ForecastHeads, levels: &[f64]) -> Result<()> {
    let q = latent_demand::eval::head_quantiles(heads, levels)?;
    let targets = data.targets(which);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["hour", "node", "series", "value"])?;
    let k = data.k();
    for (i, &s) in which.iter().enumerate() {
        let t = s + data.window;
        let hour = format_time(data.panel.start + t as i64 * 3600);
        for v in 0..k {
            let mut row = |name: String, x: f64| w.write_record([hour.clone(), v.to_string(), name, x.to_string()]);
            row("true".into(), targets.truth.get(i, v))?;
            row("observed".into(), targets.y.get(i, v))?;
            for (qt, level) in q.iter().zip(levels) {
                row(format!("q{level}"), qt.get(i, v))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn compete_cmd(cfg: &CompeteConfig, train_cfg: &TrainSection) -> Result<()> {
    if cfg.shares.is_empty() || cfg.models.is_empty() {
        return Err(invalid("compete needs at least one share and one model"));
    }
    let seeds = cfg.run_seeds();
    let mut inputs = Vec::new();
    let (stations, a_hat): (StationPanel, Tensor) = match &cfg.station_panel {
        Some(_) => {
            let p = require(&cfg.station_panel, "station panel file")?;
            let a = adjacency_path(&cfg.adjacency, &p)?;
            let s = StationPanel::read_csv(&p)?;
            let m = read_matrix_csv(&a)?;
            inputs.extend([p, a]);
            (s, m)
        }
        None => {
            let syn = station_panel(&cfg.synthetic)?;
            (syn.stations, syn.a_hat)
        }
    };
    check_adjacency(&a_hat, stations.k)?;
    train_cfg.hyper.validate()?;
    let mut out = RunDir::create(&cfg.out_dir, &inputs)?;
    if cfg.station_panel.is_none() {
        stations.write_csv(&out.file("station_demand.csv")?)?;
        write_matrix_csv(&out.file("adjacency.csv")?, &a_hat)?;
    }
    let cells: Vec<CellSpec> = latent_demand::eval::competition_grid(&cfg.shares, &cfg.models);
    let result = run_experiment(Protocol::Competition, &cells, &seeds, |cell, seed| -> latent_demand::Result<EvalReport> {
        let share = cell.market_share.expect("competition cell");
        let panel = market_share_censor(&stations, share, seed)?;
        let hyper = latent_demand::training::TrainConfig {
            seed,
            ..train_cfg.hyper.clone()
        };
        run_panel(&panel, &a_hat, cell.model, &hyper, cell.meta(seed))
    })?;
    write_reports_csv(&result.reports, &out.file("reports.csv")?)?;
    write_summary_csv(&result.summary, &out.file("summary.csv")?)?;
    write_node_series_csv(&result.reports, &out.file("nodes.csv")?)?;
    for s in &result.summary {
        println!(
            "share {:<5} {:<12} tilted loss {:.5} ± {:.5}  ICP {:.3}  MIL {:.4}",
            s.cell.market_share.unwrap_or(f64::NAN),
            s.cell.model.as_str(),
            s.tilted_loss.mean,
            s.tilted_loss.std,
            s.icp.mean,
            s.mil.mean
        );
    }
    #[derive(Serialize)]
    struct Resolved<'a> {
        compete: &'a CompeteConfig,
        train: &'a TrainSection,
    }
    out.finish("compete", &Resolved { compete: cfg, train: train_cfg }, seeds)?;
    Ok(())
}

/// Prints one line per check; errors if any failed.
pub fn selftest_cmd() -> Result<()> {
    let results = run_selftest();
    let mut failed = BTreeMap::new();
    for r in &results {
        println!("[{}] {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        if !r.passed {
            failed.insert(r.name, r.detail.clone());
        }
    }
    if failed.is_empty() {
        println!("{} checks passed", results.len());
        Ok(())
    } else {
        anyhow::bail!("{} of {} self-checks failed", failed.len(), results.len())
    }
}
