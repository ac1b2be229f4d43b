//! Node-by-hour demand panels with censoring information.
//!
//! A cell is censored when the observed demand is a clipped version of the
//! true demand. The clip point (threshold) of a censored cell equals its
//! observed value; uncensored cells carry no threshold.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{format_time, parse_time, SECONDS_PER_HOUR};

pub const PANEL_HEADER: [&str; 6] = ["cluster", "hour", "observed_kwh", "true_kwh", "censored", "threshold"];

/// `n_hours` consecutive hours starting at `start` (Unix seconds, on an hour
/// boundary).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HourRange {
    pub start: i64,
    pub n_hours: usize,
}

impl HourRange {
    /// Smallest whole-hour range containing `[from, to]`.
    pub fn covering(from: i64, to: i64) -> Self {
        let start = from.div_euclid(SECONDS_PER_HOUR) * SECONDS_PER_HOUR;
        let end = (to + SECONDS_PER_HOUR - 1).div_euclid(SECONDS_PER_HOUR) * SECONDS_PER_HOUR;
        Self {
            start,
            n_hours: ((end - start) / SECONDS_PER_HOUR).max(1) as usize,
        }
    }

    pub fn end(&self) -> i64 {
        self.start + self.n_hours as i64 * SECONDS_PER_HOUR
    }

    pub fn hour_start(&self, t: usize) -> i64 {
        self.start + t as i64 * SECONDS_PER_HOUR
    }

    pub fn contains(&self, time: i64) -> bool {
        time >= self.start && time <= self.end()
    }
}

/// Row-major `hours x nodes` demand panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandPanel {
    pub range: HourRange,
    pub k: usize,
    pub observed: Vec<f64>,
    pub true_demand: Vec<f64>,
    pub censored: Vec<bool>,
    pub threshold: Vec<Option<f64>>,
}

impl DemandPanel {
    /// Builds a panel from observed and true demand; cells with
    /// `true > observed` are flagged and get the observed value as threshold.
    pub fn from_observed_true(range: HourRange, k: usize, observed: Vec<f64>, true_demand: Vec<f64>) -> Result<Self> {
        let n = range.n_hours * k;
        if observed.len() != n || true_demand.len() != n {
            return Err(Error::validation(format!(
                "panel needs {n} cells, got {} observed and {} true",
                observed.len(),
                true_demand.len()
            )));
        }
        let censored: Vec<bool> = observed.iter().zip(&true_demand).map(|(o, t)| t > o).collect();
        let threshold = observed
            .iter()
            .zip(&censored)
            .map(|(&o, &c)| c.then_some(o))
            .collect();
        Ok(Self {
            range,
            k,
            observed,
            true_demand,
            censored,
            threshold,
        })
    }

    /// Fully observed panel.
    pub fn uncensored(range: HourRange, k: usize, demand: Vec<f64>) -> Result<Self> {
        Self::from_observed_true(range, k, demand.clone(), demand)
    }

    /// Clips the true demand of node `v` at `caps[v]`.
    pub fn clipped(range: HourRange, true_demand: Vec<f64>, caps: &[f64]) -> Result<Self> {
        let k = caps.len();
        if k == 0 {
            return Err(Error::validation("need at least one node cap"));
        }
        let observed = true_demand
            .iter()
            .enumerate()
            .map(|(i, &y)| y.min(caps[i % k]))
            .collect();
        Self::from_observed_true(range, k, observed, true_demand)
    }

    pub fn n_hours(&self) -> usize {
        self.range.n_hours
    }

    fn idx(&self, t: usize, v: usize) -> usize {
        t * self.k + v
    }

    pub fn observed_at(&self, t: usize, v: usize) -> f64 {
        self.observed[self.idx(t, v)]
    }

    pub fn true_at(&self, t: usize, v: usize) -> f64 {
        self.true_demand[self.idx(t, v)]
    }

    pub fn censored_at(&self, t: usize, v: usize) -> bool {
        self.censored[self.idx(t, v)]
    }

    pub fn threshold_at(&self, t: usize, v: usize) -> Option<f64> {
        self.threshold[self.idx(t, v)]
    }

    /// Checks the internal consistency rules of a panel.
    pub fn validate(&self) -> Result<()> {
        let n = self.range.n_hours * self.k;
        if [self.observed.len(), self.true_demand.len(), self.censored.len(), self.threshold.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::validation("panel arrays disagree in length"));
        }
        for i in 0..n {
            let (o, t) = (self.observed[i], self.true_demand[i]);
            if !o.is_finite() || !t.is_finite() {
                return Err(Error::validation(format!("non-finite demand in cell {i}")));
            }
            if self.censored[i] {
                match self.threshold[i] {
                    Some(tau) if tau == o => {}
                    _ => {
                        return Err(Error::validation(format!(
                            "censored cell {i} must carry its observed value as threshold"
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(PANEL_HEADER)?;
        for t in 0..self.range.n_hours {
            let hour = format_time(self.range.hour_start(t));
            for v in 0..self.k {
                w.write_record([
                    v.to_string(),
                    hour.clone(),
                    self.observed_at(t, v).to_string(),
                    self.true_at(t, v).to_string(),
                    u8::from(self.censored_at(t, v)).to_string(),
                    self.threshold_at(t, v).map(|x| x.to_string()).unwrap_or_default(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a panel written by [`DemandPanel::write_csv`]. Rows may come in
    /// any order but every (cluster, hour) cell must appear exactly once.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
        if header != PANEL_HEADER {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header `{}`", PANEL_HEADER.join(",")),
            });
        }
        struct Row {
            v: usize,
            hour: i64,
            o: f64,
            t: f64,
            c: bool,
            tau: Option<f64>,
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |what: &str| Error::Parse {
                line,
                message: format!("bad `{what}` value"),
            };
            let get = |i: usize| rec.get(i).map(str::trim).unwrap_or_default();
            let tau = match get(5) {
                "" => None,
                s => Some(s.parse().map_err(|_| bad("threshold"))?),
            };
            rows.push(Row {
                v: get(0).parse().map_err(|_| bad("cluster"))?,
                hour: parse_time(get(1)).ok_or_else(|| bad("hour"))?,
                o: get(2).parse().map_err(|_| bad("observed_kwh"))?,
                t: get(3).parse().map_err(|_| bad("true_kwh"))?,
                c: match get(4) {
                    "1" | "true" => true,
                    "0" | "false" => false,
                    _ => return Err(bad("censored")),
                },
                tau,
            });
        }
        if rows.is_empty() {
            return Err(Error::validation("panel file has no rows"));
        }
        let k = rows.iter().map(|r| r.v).max().unwrap_or(0) + 1;
        let first = rows.iter().map(|r| r.hour).min().unwrap_or(0);
        let last = rows.iter().map(|r| r.hour).max().unwrap_or(0);
        let range = HourRange {
            start: first,
            n_hours: ((last - first) / SECONDS_PER_HOUR) as usize + 1,
        };
        let n = range.n_hours * k;
        if rows.len() != n {
            return Err(Error::validation(format!("panel has {} rows, expected {n}", rows.len())));
        }
        let mut panel = DemandPanel {
            range,
            k,
            observed: vec![f64::NAN; n],
            true_demand: vec![f64::NAN; n],
            censored: vec![false; n],
            threshold: vec![None; n],
        };
        let mut seen = vec![false; n];
        for r in rows {
            if (r.hour - first) % SECONDS_PER_HOUR != 0 {
                return Err(Error::validation("panel hours must be on hour boundaries"));
            }
            let i = ((r.hour - first) / SECONDS_PER_HOUR) as usize * k + r.v;
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::validation(format!(
                    "duplicate cell cluster {} hour {}",
                    r.v,
                    format_time(r.hour)
                )));
            }
            panel.observed[i] = r.o;
            panel.true_demand[i] = r.t;
            panel.censored[i] = r.c;
            panel.threshold[i] = r.tau;
        }
        panel.validate()?;
        Ok(panel)
    }
}

/// Share of censored hours per node and pooled over all cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensorshipStats {
    pub per_cluster: Vec<f64>,
    pub overall: f64,
}

pub fn censorship_stats(panel: &DemandPanel) -> CensorshipStats {
    let t = panel.n_hours().max(1) as f64;
    let per_cluster = (0..panel.k)
        .map(|v| (0..panel.n_hours()).filter(|&h| panel.censored_at(h, v)).count() as f64 / t)
        .collect();
    let total = panel.censored.len().max(1) as f64;
    let overall = panel.censored.iter().filter(|&&c| c).count() as f64 / total;
    CensorshipStats { per_cluster, overall }
}

/// True demand per station and hour, used by the market-share experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationPanel {
    pub range: HourRange,
    pub station_ids: Vec<String>,
    /// Node (cluster) of each station.
    pub cluster: Vec<usize>,
    pub k: usize,
    /// Row-major `hours x stations`.
    pub demand: Vec<f64>,
}

impl StationPanel {
    pub fn n_stations(&self) -> usize {
        self.station_ids.len()
    }

    pub fn demand_at(&self, t: usize, s: usize) -> f64 {
        self.demand[t * self.n_stations() + s]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["station_id", "cluster", "hour", "demand_kwh"])?;
        for t in 0..self.range.n_hours {
            let hour = format_time(self.range.hour_start(t));
            for (s, id) in self.station_ids.iter().enumerate() {
                w.write_record([
                    id.clone(),
                    self.cluster[s].to_string(),
                    hour.clone(),
                    self.demand_at(t, s).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut ids: Vec<String> = Vec::new();
        let mut cluster: Vec<usize> = Vec::new();
        let mut cells: Vec<(usize, i64, f64)> = Vec::new();
        let mut index = std::collections::HashMap::new();
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |what: &str| Error::Parse {
                line,
                message: format!("bad `{what}` value"),
            };
            let get = |i: usize| rec.get(i).map(str::trim).unwrap_or_default();
            let id = get(0).to_string();
            let c: usize = get(1).parse().map_err(|_| bad("cluster"))?;
            let s = *index.entry(id.clone()).or_insert_with(|| {
                ids.push(id);
                cluster.push(c);
                ids.len() - 1
            });
            if cluster[s] != c {
                return Err(Error::validation(format!("station {} changes cluster", ids[s])));
            }
            cells.push((s, parse_time(get(2)).ok_or_else(|| bad("hour"))?, get(3).parse().map_err(|_| bad("demand_kwh"))?));
        }
        if cells.is_empty() {
            return Err(Error::validation("station panel has no rows"));
        }
        let first = cells.iter().map(|c| c.1).min().unwrap_or(0);
        let last = cells.iter().map(|c| c.1).max().unwrap_or(0);
        let n_hours = ((last - first) / SECONDS_PER_HOUR) as usize + 1;
        let ns = ids.len();
        if cells.len() != n_hours * ns {
            return Err(Error::validation("station panel is not a complete grid"));
        }
        let mut demand = vec![0.0; n_hours * ns];
        for (s, h, d) in cells {
            demand[((h - first) / SECONDS_PER_HOUR) as usize * ns + s] = d;
        }
        let k = cluster.iter().max().map_or(0, |m| m + 1);
        Ok(Self {
            range: HourRange { start: first, n_hours },
            station_ids: ids,
            cluster,
            k,
            demand,
        })
    }
}
