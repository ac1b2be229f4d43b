//! Layered configuration: TOML file, then `--set` overrides, then named
//! flags. Each section's `seed` falls back to the top-level `seed`, then
//! to `LATENT_DEMAND_SEED`, then to 0.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use latent_demand::eval::COMPETITION_SHARES;
use latent_demand::ingest::SynthConfig;
use latent_demand::queue::{QueuePolicy, SimParams};
use latent_demand::synthetic::StationSynthConfig;
use latent_demand::training::{ModelKind, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::invalid;

pub const SEED_ENV: &str = "LATENT_DEMAND_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    pub out_dir: PathBuf,
    /// Trip log; synthetic trips are generated when absent.
    pub trips: Option<PathBuf>,
    /// Station list; synthetic stations are generated when absent.
    pub stations: Option<PathBuf>,
    pub synthetic: SynthConfig,
    pub n_stations: usize,
    pub clusters: usize,
    pub kmeans_iters: usize,
    pub bandwidth_km: f64,
    pub policies: Vec<QueuePolicy>,
    pub penetration: Vec<f64>,
    pub params: SimParams,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            out_dir: "sim_out".into(),
            trips: None,
            stations: None,
            synthetic: SynthConfig {
                n_vehicles: 500,
                n_days: 30,
                ..SynthConfig::default()
            },
            n_stations: 40,
            clusters: 10,
            kmeans_iters: 300,
            bandwidth_km: 1.0,
            policies: QueuePolicy::ALL.to_vec(),
            penetration: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            params: SimParams::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub panel: Option<PathBuf>,
    /// Normalised adjacency; defaults to `adjacency.csv` beside the panel.
    pub adjacency: Option<PathBuf>,
    pub model: ModelKind,
    pub out_dir: PathBuf,
    #[serde(flatten)]
    pub hyper: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            panel: None,
            adjacency: None,
            model: ModelKind::CensoredQr,
            out_dir: "train_out".into(),
            hyper: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateConfig {
    pub checkpoint: Option<PathBuf>,
    pub panel: Option<PathBuf>,
    pub adjacency: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub split: EvalSplit,
    pub seed: u64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            panel: None,
            adjacency: None,
            out_dir: "eval_out".into(),
            split: EvalSplit::Test,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompeteConfig {
    /// Station-level demand (`station_id,cluster,hour,demand_kwh`);
    /// a synthetic panel is generated when absent.
    pub station_panel: Option<PathBuf>,
    pub adjacency: Option<PathBuf>,
    pub synthetic: StationSynthConfig,
    pub shares: Vec<f64>,
    pub models: Vec<ModelKind>,
    /// Explicit run seeds; otherwise `n_seeds` consecutive seeds from `seed`.
    pub seeds: Option<Vec<u64>>,
    pub n_seeds: u64,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for CompeteConfig {
    fn default() -> Self {
        Self {
            station_panel: None,
            adjacency: None,
            synthetic: StationSynthConfig::default(),
            shares: COMPETITION_SHARES.to_vec(),
            models: ModelKind::ALL.to_vec(),
            seeds: None,
            n_seeds: 10,
            out_dir: "compete_out".into(),
            seed: 0,
        }
    }
}

impl CompeteConfig {
    pub fn run_seeds(&self) -> Vec<u64> {
        self.seeds
            .clone()
            .unwrap_or_else(|| (0..self.n_seeds).map(|i| self.seed + i).collect())
    }
}

pub const SECTIONS: [&str; 4] = ["simulate", "train", "evaluate", "compete"];

/// Raw configuration tree before section extraction.
#[derive(Debug, Clone, Default)]
pub struct ConfigTree {
    table: Table,
}

impl ConfigTree {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let table = match path {
            Some(p) => {
                if !p.is_file() {
                    return Err(invalid(format!("config file {} not found", p.display())));
                }
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                text.parse::<Table>()
                    .map_err(|e| invalid(format!("config {}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        for key in table.keys() {
            if key != "seed" && !SECTIONS.contains(&key.as_str()) {
                return Err(invalid(format!("unknown config section {key:?}")));
            }
        }
        Ok(Self { table })
    }

    /// Applies `section.key=value` (dotted keys allowed). Values are read as
    /// TOML and fall back to plain strings.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let Some((key, raw)) = assignment.split_once('=') else {
            return Err(invalid(format!("override {assignment:?} is not key=value")));
        };
        let value = parse_value(raw.trim());
        self.insert(key.trim(), value)
    }

    pub fn insert(&mut self, dotted: &str, value: Value) -> Result<()> {
        let parts: Vec<&str> = dotted.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(invalid(format!("bad config key {dotted:?}")));
        }
        let mut table = &mut self.table;
        for p in &parts[..parts.len() - 1] {
            let entry = table.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
            table = match entry {
                Value::Table(t) => t,
                _ => return Err(invalid(format!("config key {p:?} is not a section"))),
            };
        }
        table.insert(parts[parts.len() - 1].to_string(), value);
        Ok(())
    }

    fn global_seed(&self) -> Result<u64> {
        if let Some(v) = self.table.get("seed") {
            return as_seed(v).ok_or_else(|| invalid("top-level seed must be a non-negative integer"));
        }
        match std::env::var(SEED_ENV) {
            Ok(s) => s
                .trim()
                .parse()
                .map_err(|_| invalid(format!("{SEED_ENV}={s:?} is not a non-negative integer"))),
            Err(_) => Ok(0),
        }
    }

    /// Deserialises one section, filling its seed from the fallbacks and
    /// rejecting unknown keys.
    pub fn section<T: DeserializeOwned + Serialize + Default>(&self, name: &str) -> Result<T> {
        let mut t = match self.table.get(name) {
            Some(Value::Table(t)) => t.clone(),
            Some(_) => return Err(invalid(format!("[{name}] must be a table"))),
            None => Table::new(),
        };
        let known = serde_json::to_value(T::default()).context("serialising defaults")?;
        for key in t.keys() {
            if known.get(key).is_none() {
                return Err(invalid(format!("unknown key {key:?} in [{name}]")));
            }
        }
        if !t.contains_key("seed") {
            t.insert("seed".into(), Value::Integer(self.global_seed()? as i64));
        }
        T::deserialize(Value::Table(t)).map_err(|e| invalid(format!("[{name}]: {e}")))
    }
}

fn as_seed(v: &Value) -> Option<u64> {
    v.as_integer().and_then(|i| u64::try_from(i).ok())
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

pub fn require(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    match path {
        Some(p) if p.is_file() => Ok(p.clone()),
        Some(p) => Err(invalid(format!("{what} {} not found", p.display()))),
        None => bail!(invalid(format!("no {what} given"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_and_seed_fallback() {
        let mut c = ConfigTree::default();
        c.set("seed=9").unwrap();
        c.set("train.lr=0.01").unwrap();
        c.set("train.model=qr").unwrap();
        c.set("train.split=[0.6, 0.2, 0.2]").unwrap();
        let t: TrainSection = c.section("train").unwrap();
        assert_eq!(t.hyper.lr, 0.01);
        assert_eq!(t.model, ModelKind::Qr);
        assert_eq!(t.hyper.seed, 9);
        assert_eq!(t.hyper.split, (0.6, 0.2, 0.2));
        c.set("train.seed=4").unwrap();
        let t: TrainSection = c.section("train").unwrap();
        assert_eq!(t.hyper.seed, 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut c = ConfigTree::default();
        c.set("simulate.penetraton=[0.1]").unwrap();
        assert!(c.section::<SimulateConfig>("simulate").is_err());
    }

    #[test]
    fn strings_fall_back() {
        let mut c = ConfigTree::default();
        c.set("simulate.out_dir=some/dir").unwrap();
        let s: SimulateConfig = c.section("simulate").unwrap();
        assert_eq!(s.out_dir, PathBuf::from("some/dir"));
    }
}
