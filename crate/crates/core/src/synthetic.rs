//! Synthetic demand panels with a known latent process.
//!
//! Used by tests and desk-scale experiments in place of simulator output
//! when the latent demand should follow a controlled seasonal law.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::build_adjacency;
use crate::ingest::BoundingBox;
use crate::panel::{DemandPanel, HourRange, StationPanel};
use crate::rng;
use crate::tensor::Tensor;

/// Monday 2022-01-03 00:00 UTC.
pub const DEFAULT_START: i64 = 1_641_168_000;

/// Latent demand of node `v`: `level * profile(hour) * weekday * (1 + 0.3 z)`
/// plus independent noise, floored at zero. `z` is an AR(1) factor shared
/// by all nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeasonalConfig {
    pub k: usize,
    pub n_hours: usize,
    pub start: i64,
    /// Share of node-hours clipped; 0 gives an uncensored panel.
    pub censored_fraction: f64,
    pub noise_sd: f64,
    pub bandwidth_km: f64,
    pub seed: u64,
}

impl Default for SeasonalConfig {
    fn default() -> Self {
        Self {
            k: 6,
            n_hours: 3000,
            start: DEFAULT_START,
            censored_fraction: 0.4,
            noise_sd: 0.1,
            bandwidth_km: 3.0,
            seed: 0,
        }
    }
}

/// Panel plus the graph it lives on.
#[derive(Debug, Clone)]
pub struct SyntheticPanel {
    pub panel: DemandPanel,
    pub centroids: Vec<(f64, f64)>,
    pub a_hat: Tensor,
}

fn random_centroids(k: usize, seed: u64) -> Vec<(f64, f64)> {
    let b = BoundingBox::copenhagen();
    let mut rng = rng::stream(seed, "synthetic-nodes", 0);
    (0..k)
        .map(|_| {
            (
                rng.random_range(b.min_lat..b.max_lat),
                rng.random_range(b.min_lon..b.max_lon),
            )
        })
        .collect()
}

/// Two commuting peaks on a base load, hour in `[0, 24)`.
pub fn daily_profile(hour: f64) -> f64 {
    let bump = |c: f64, w: f64| (-(hour - c).powi(2) / (2.0 * w * w)).exp();
    0.3 + bump(8.0, 1.5) + 0.8 * bump(17.0, 2.0)
}

fn calendar(start: i64, t: usize) -> (f64, bool) {
    let abs_hour = start.div_euclid(3600) + t as i64;
    let hod = abs_hour.rem_euclid(24) as f64;
    let dow = (abs_hour.div_euclid(24) + 3).rem_euclid(7);
    (hod, dow >= 5)
}

/// Latent seasonal demand, `n_hours x k` row-major.
pub fn seasonal_demand(cfg: &SeasonalConfig) -> Result<Vec<f64>> {
    if cfg.k == 0 || cfg.n_hours == 0 {
        return Err(Error::validation("synthetic panel needs nodes and hours"));
    }
    if !(cfg.noise_sd >= 0.0) {
        return Err(Error::domain(format!("noise sd must be non-negative, got {}", cfg.noise_sd)));
    }
    let mut rng = rng::stream(cfg.seed, "synthetic-seasonal", 0);
    let levels: Vec<f64> = (0..cfg.k).map(|_| rng.random_range(20.0..60.0)).collect();
    let shifts: Vec<f64> = (0..cfg.k).map(|_| rng.random_range(-1.5..1.5)).collect();
    let shock = Normal::new(0.0, 0.3).expect("valid sd");
    let noise = Normal::new(0.0, cfg.noise_sd.max(f64::MIN_POSITIVE)).expect("valid sd");
    let mut z = 0.0;
    let mut out = Vec::with_capacity(cfg.n_hours * cfg.k);
    for t in 0..cfg.n_hours {
        z = 0.8 * z + shock.sample(&mut rng);
        let (hod, weekend) = calendar(cfg.start, t);
        let week = if weekend { 0.6 } else { 1.0 };
        for v in 0..cfg.k {
            let eps = if cfg.noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let y = levels[v] * (daily_profile((hod + shifts[v]).rem_euclid(24.0)) * week * (1.0 + 0.3 * z) + eps);
            out.push(y.max(0.0));
        }
    }
    Ok(out)
}

/// Per-node clip points leaving roughly `fraction` of hours above them.
pub fn caps_for_fraction(demand: &[f64], k: usize, fraction: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::domain(format!("censored fraction {fraction} outside [0, 1)")));
    }
    Ok((0..k)
        .map(|v| {
            if fraction == 0.0 {
                return f64::INFINITY;
            }
            let mut col: Vec<f64> = demand.iter().skip(v).step_by(k).copied().collect();
            col.sort_by(f64::total_cmp);
            let idx = (((1.0 - fraction) * col.len() as f64).floor() as usize).min(col.len() - 1);
            col[idx]
        })
        .collect())
}

pub fn seasonal_panel(cfg: &SeasonalConfig) -> Result<SyntheticPanel> {
    let demand = seasonal_demand(cfg)?;
    let range = HourRange {
        start: cfg.start,
        n_hours: cfg.n_hours,
    };
    let panel = if cfg.censored_fraction == 0.0 {
        DemandPanel::uncensored(range, cfg.k, demand)?
    } else {
        let caps = caps_for_fraction(&demand, cfg.k, cfg.censored_fraction)?;
        DemandPanel::clipped(range, demand, &caps)?
    };
    let centroids = random_centroids(cfg.k, cfg.seed);
    let a_hat = build_adjacency(&centroids, cfg.bandwidth_km)?.a_hat;
    Ok(SyntheticPanel {
        panel,
        centroids,
        a_hat,
    })
}

/// Station-level sessions: each station draws a Poisson number of charging
/// sessions per hour with a seasonal rate, each delivering a uniform amount
/// of energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StationSynthConfig {
    pub k: usize,
    /// Enough that a 25% provider still owns a few stations in every node.
    pub stations_per_node: usize,
    pub n_hours: usize,
    pub start: i64,
    /// Sessions per station-hour at the profile peak.
    pub peak_rate: f64,
    pub session_kwh: (f64, f64),
    pub bandwidth_km: f64,
    pub seed: u64,
}

impl Default for StationSynthConfig {
    fn default() -> Self {
        Self {
            k: 6,
            stations_per_node: 12,
            n_hours: 3000,
            start: DEFAULT_START,
            peak_rate: 0.5,
            session_kwh: (5.0, 30.0),
            bandwidth_km: 3.0,
            seed: 0,
        }
    }
}

/// Station panel plus the graph of its nodes.
#[derive(Debug, Clone)]
pub struct SyntheticStations {
    pub stations: StationPanel,
    pub centroids: Vec<(f64, f64)>,
    pub a_hat: Tensor,
}

pub fn station_panel(cfg: &StationSynthConfig) -> Result<SyntheticStations> {
    if cfg.k == 0 || cfg.stations_per_node == 0 || cfg.n_hours == 0 {
        return Err(Error::validation("synthetic station panel needs nodes, stations and hours"));
    }
    let (lo, hi) = cfg.session_kwh;
    if !(cfg.peak_rate > 0.0) || !(lo > 0.0 && hi > lo) {
        return Err(Error::domain("peak rate and session energy range must be positive"));
    }
    let n = cfg.k * cfg.stations_per_node;
    let mut rng = rng::stream(cfg.seed, "synthetic-stations", 0);
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let shifts: Vec<f64> = (0..cfg.k).map(|_| rng.random_range(-1.5..1.5)).collect();
    let peak = daily_profile(8.0);
    let mut demand = Vec::with_capacity(cfg.n_hours * n);
    for t in 0..cfg.n_hours {
        let (hod, weekend) = calendar(cfg.start, t);
        let week = if weekend { 0.6 } else { 1.0 };
        for s in 0..n {
            let v = s / cfg.stations_per_node;
            let rate = cfg.peak_rate * weights[s] * week * daily_profile((hod + shifts[v]).rem_euclid(24.0)) / peak;
            let sessions = Poisson::new(rate).map_err(|e| Error::domain(e.to_string()))?.sample(&mut rng) as usize;
            let kwh: f64 = (0..sessions).map(|_| rng.random_range(lo..hi)).sum();
            demand.push(kwh);
        }
    }
    let stations = StationPanel {
        range: HourRange {
            start: cfg.start,
            n_hours: cfg.n_hours,
        },
        station_ids: (0..n).map(|s| format!("s{s:03}")).collect(),
        cluster: (0..n).map(|s| s / cfg.stations_per_node).collect(),
        k: cfg.k,
        demand,
    };
    let centroids = random_centroids(cfg.k, cfg.seed);
    let a_hat = build_adjacency(&centroids, cfg.bandwidth_km)?.a_hat;
    Ok(SyntheticStations {
        stations,
        centroids,
        a_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::censorship_stats;

    #[test]
    fn clipped_share_close_to_target() {
        let s = seasonal_panel(&SeasonalConfig::default()).unwrap();
        let stats = censorship_stats(&s.panel);
        assert!((stats.overall - 0.4).abs() < 0.02, "{}", stats.overall);
        assert_eq!(s.a_hat.shape(), &[6, 6]);
    }

    #[test]
    fn zero_fraction_is_uncensored() {
        let cfg = SeasonalConfig {
            censored_fraction: 0.0,
            n_hours: 200,
            ..SeasonalConfig::default()
        };
        let s = seasonal_panel(&cfg).unwrap();
        assert!(s.panel.censored.iter().all(|&c| !c));
        assert_eq!(s.panel.observed, s.panel.true_demand);
    }

    #[test]
    fn seeded() {
        let cfg = SeasonalConfig {
            n_hours: 100,
            ..SeasonalConfig::default()
        };
        assert_eq!(seasonal_demand(&cfg).unwrap(), seasonal_demand(&cfg).unwrap());
        let other = SeasonalConfig { seed: 1, ..cfg.clone() };
        assert_ne!(seasonal_demand(&cfg).unwrap(), seasonal_demand(&other).unwrap());
    }

    #[test]
    fn weekday_peaks_exceed_nights() {
        let cfg = SeasonalConfig {
            noise_sd: 0.0,
            n_hours: 24 * 7,
            ..SeasonalConfig::default()
        };
        let d = seasonal_demand(&cfg).unwrap();
        let at = |t: usize| d[t * cfg.k..(t + 1) * cfg.k].iter().sum::<f64>();
        assert!(at(8) > 2.0 * at(2));
    }

    #[test]
    fn stations_are_intermittent() {
        let s = station_panel(&StationSynthConfig {
            n_hours: 500,
            ..StationSynthConfig::default()
        })
        .unwrap();
        let zeros = s.stations.demand.iter().filter(|&&d| d == 0.0).count();
        let frac = zeros as f64 / s.stations.demand.len() as f64;
        assert!(frac > 0.4 && frac < 0.95, "{frac}");
    }
}
