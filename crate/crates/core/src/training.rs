//! Scaling, windowing and the mini-batch training loop.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses;
use crate::model::{
    tgcn_forward_batch, ForecastHeads, HeadKind, HeadVars, ModelConfig, ParamArchive, ParamVars, TgcnParams,
    WindowBatch,
};
use crate::panel::DemandPanel;
use crate::rng;
use crate::tensor::{Tape, Tensor, Var};

pub const DEFAULT_QUANTILES: [f64; 3] = [0.05, 0.5, 0.95];
pub const N_FEATURES: usize = 5;
pub const HISTORY_HEADER: [&str; 3] = ["epoch", "train_loss", "val_loss"];

/// The four forecasters compared throughout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gaussian,
    Tobit,
    Qr,
    CensoredQr,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Gaussian, ModelKind::Tobit, ModelKind::Qr, ModelKind::CensoredQr];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Gaussian => "gaussian",
            ModelKind::Tobit => "tobit",
            ModelKind::Qr => "qr",
            ModelKind::CensoredQr => "censored_qr",
        }
    }

    pub fn head(self, levels: &[f64]) -> HeadKind {
        match self {
            ModelKind::Gaussian | ModelKind::Tobit => HeadKind::Gaussian,
            ModelKind::Qr | ModelKind::CensoredQr => HeadKind::Quantile {
                levels: levels.to_vec(),
            },
        }
    }

    /// Whether the loss reads censor flags and thresholds.
    pub fn censorship_aware(self) -> bool {
        matches!(self, ModelKind::Tobit | ModelKind::CensoredQr)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::validation(format!("unknown model kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub grad_clip_norm: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_delta: f64,
    pub early_stop_patience: usize,
    pub split: (f64, f64, f64),
    pub window: usize,
    pub quantiles: Vec<f64>,
    pub hidden: usize,
    pub c1: usize,
    pub c2: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            grad_clip_norm: 1.0,
            batch_size: 256,
            max_epochs: 1000,
            early_stop_delta: 1e-3,
            early_stop_patience: 10,
            split: (0.8, 0.1, 0.1),
            window: 168,
            quantiles: DEFAULT_QUANTILES.to_vec(),
            hidden: 32,
            c1: 16,
            c2: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.split;
        if [a, b, c].iter().any(|&s| !(0.0..=1.0).contains(&s)) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!("split {:?} must be fractions summing to 1", self.split)));
        }
        if a <= 0.0 {
            return Err(Error::validation("training fraction must be positive"));
        }
        if self.quantiles.is_empty()
            || self.quantiles.iter().any(|&q| !(q > 0.0 && q < 1.0))
            || self.quantiles.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::validation(format!(
                "quantiles {:?} must be strictly increasing inside (0, 1)",
                self.quantiles
            )));
        }
        if self.batch_size == 0 || self.window == 0 || self.hidden == 0 || self.c1 == 0 || self.c2 == 0 {
            return Err(Error::validation("batch size, window and layer sizes must be positive"));
        }
        if !(self.lr >= 0.0) || !(self.grad_clip_norm > 0.0) || !(self.early_stop_delta >= 0.0) {
            return Err(Error::validation("lr, clip norm and early-stop delta must be non-negative"));
        }
        Ok(())
    }

    pub fn model_config(&self, nodes: usize, kind: ModelKind) -> ModelConfig {
        let mut cfg = ModelConfig::new(nodes, self.hidden, kind.head(&self.quantiles));
        cfg.features = N_FEATURES;
        cfg.c1 = self.c1;
        cfg.c2 = self.c2;
        cfg
    }
}

/// Train/validation/test sample counts for `n` windows.
pub fn split_sizes(n: usize, split: (f64, f64, f64)) -> (usize, usize, usize) {
    let train = ((n as f64) * split.0 + 1e-9).floor() as usize;
    let val = (((n as f64) * split.1 + 1e-9).floor() as usize).min(n - train);
    (train, val, n - train - val)
}

/// Per-node affine map to `[0, 1]` fitted on a leading block of hours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Scaler {
    /// Fits on observed demand of hours `0..fit_hours`.
    pub fn fit(panel: &DemandPanel, fit_hours: usize) -> Result<Self> {
        if fit_hours == 0 || fit_hours > panel.n_hours() {
            return Err(Error::validation(format!(
                "cannot fit scaling on {fit_hours} of {} hours",
                panel.n_hours()
            )));
        }
        let mut min = vec![f64::INFINITY; panel.k];
        let mut max = vec![f64::NEG_INFINITY; panel.k];
        for t in 0..fit_hours {
            for v in 0..panel.k {
                let y = panel.observed_at(t, v);
                min[v] = min[v].min(y);
                max[v] = max[v].max(y);
            }
        }
        Ok(Self { min, max })
    }

    fn span(&self, v: usize) -> f64 {
        let s = self.max[v] - self.min[v];
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }

    pub fn scale(&self, v: usize, x: f64) -> f64 {
        (x - self.min[v]) / self.span(v)
    }

    pub fn inverse(&self, v: usize, x: f64) -> f64 {
        x * self.span(v) + self.min[v]
    }

    /// Length of one scaled unit in original units at node `v`.
    pub fn unit(&self, v: usize) -> f64 {
        self.span(v)
    }
}

/// Panel mapped through a [`Scaler`]. Arrays are hour-major, node-minor.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledPanel {
    pub k: usize,
    pub n_hours: usize,
    /// Epoch seconds of hour 0.
    pub start: i64,
    pub observed: Vec<f64>,
    /// Scaled threshold where censored, otherwise equal to `observed`.
    pub threshold: Vec<f64>,
    pub censored: Vec<bool>,
    /// Scaled latent demand, for evaluation only.
    pub true_demand: Vec<f64>,
    pub scaler: Scaler,
}

impl ScaledPanel {
    pub fn new(panel: &DemandPanel, scaler: Scaler) -> Result<Self> {
        panel.validate()?;
        if scaler.min.len() != panel.k {
            return Err(Error::validation(format!(
                "scaler covers {} nodes, panel has {}",
                scaler.min.len(),
                panel.k
            )));
        }
        let n = panel.n_hours();
        let k = panel.k;
        let mut observed = Vec::with_capacity(n * k);
        let mut threshold = Vec::with_capacity(n * k);
        let mut true_demand = Vec::with_capacity(n * k);
        for t in 0..n {
            for v in 0..k {
                let y = scaler.scale(v, panel.observed_at(t, v));
                observed.push(y);
                threshold.push(panel.threshold_at(t, v).map_or(y, |tau| scaler.scale(v, tau)));
                true_demand.push(scaler.scale(v, panel.true_at(t, v)));
            }
        }
        Ok(Self {
            k,
            n_hours: n,
            start: panel.range.start,
            observed,
            threshold,
            censored: panel.censored.clone(),
            true_demand,
            scaler,
        })
    }

    /// Scales with a map fitted on the hours the training windows touch.
    pub fn fit(panel: &DemandPanel, window: usize, split: (f64, f64, f64)) -> Result<Self> {
        let n = panel.n_hours();
        if n <= window {
            return Err(too_short(n, window));
        }
        let (train, _, _) = split_sizes(n - window, split);
        let scaler = Scaler::fit(panel, (train + window).min(n))?;
        Self::new(panel, scaler)
    }

    /// `T*k x 5` features: scaled demand, then sine and cosine of the hour
    /// of day and of the day of week.
    pub fn features(&self) -> Tensor {
        use std::f64::consts::TAU;
        let mut data = Vec::with_capacity(self.n_hours * self.k * N_FEATURES);
        for t in 0..self.n_hours {
            let abs_hour = self.start.div_euclid(3600) + t as i64;
            let hod = abs_hour.rem_euclid(24) as f64;
            // 1970-01-01 was a Thursday; Monday is day 0
            let dow = (abs_hour.div_euclid(24) + 3).rem_euclid(7) as f64;
            let cal = [
                (TAU * hod / 24.0).sin(),
                (TAU * hod / 24.0).cos(),
                (TAU * dow / 7.0).sin(),
                (TAU * dow / 7.0).cos(),
            ];
            for v in 0..self.k {
                data.push(self.observed[t * self.k + v]);
                data.extend_from_slice(&cal);
            }
        }
        Tensor::from_matrix(self.n_hours * self.k, N_FEATURES, data).expect("sizes agree")
    }
}

fn too_short(n: usize, window: usize) -> Error {
    Error::validation(format!(
        "panel of {n} hours is too short for window {window}; need at least {}",
        window + 1
    ))
}

/// Sliding windows over a scaled panel. Sample `s` reads hours `s..s+l`
/// and predicts hour `s+l`.
#[derive(Debug, Clone)]
pub struct WindowSet {
    pub panel: ScaledPanel,
    pub features: Tensor,
    pub a_hat: Tensor,
    pub window: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl WindowSet {
    pub fn n_samples(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn k(&self) -> usize {
        self.panel.k
    }

    /// Targets of the given samples, `batch x k` each.
    pub fn targets(&self, starts: &[usize]) -> BatchTargets {
        let k = self.k();
        let mut y = Vec::with_capacity(starts.len() * k);
        let mut tau = Vec::with_capacity(starts.len() * k);
        let mut truth = Vec::with_capacity(starts.len() * k);
        let mut flags = Vec::with_capacity(starts.len() * k);
        for &s in starts {
            let t = s + self.window;
            let r = t * k..(t + 1) * k;
            y.extend_from_slice(&self.panel.observed[r.clone()]);
            tau.extend_from_slice(&self.panel.threshold[r.clone()]);
            truth.extend_from_slice(&self.panel.true_demand[r.clone()]);
            flags.extend_from_slice(&self.panel.censored[r]);
        }
        let b = starts.len();
        BatchTargets {
            y: Tensor::from_matrix(b, k, y).expect("sizes agree"),
            tau: Tensor::from_matrix(b, k, tau).expect("sizes agree"),
            truth: Tensor::from_matrix(b, k, truth).expect("sizes agree"),
            flags,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchTargets {
    pub y: Tensor,
    pub tau: Tensor,
    pub truth: Tensor,
    pub flags: Vec<bool>,
}

pub fn make_windows(panel: ScaledPanel, a_hat: Tensor, window: usize, split: (f64, f64, f64)) -> Result<WindowSet> {
    if window == 0 {
        return Err(Error::validation("window length must be at least 1"));
    }
    if panel.n_hours <= window {
        return Err(too_short(panel.n_hours, window));
    }
    if a_hat.shape() != [panel.k, panel.k] {
        return Err(Error::validation(format!(
            "adjacency is {:?} but the panel has {} nodes",
            a_hat.shape(),
            panel.k
        )));
    }
    let n = panel.n_hours - window;
    let (tr, va, _) = split_sizes(n, split);
    let features = panel.features();
    Ok(WindowSet {
        panel,
        features,
        a_hat,
        window,
        train: (0..tr).collect(),
        val: (tr..tr + va).collect(),
        test: (tr + va..n).collect(),
    })
}

/// Loss of `kind` on one batch. The Tobit sum is divided by the number of
/// cells so every kind is on a per-cell scale.
pub fn batch_loss<'t>(tape: &'t Tape, kind: ModelKind, heads: &HeadVars<'t>, t: &BatchTargets) -> Result<Var<'t>> {
    match (kind, heads) {
        (ModelKind::Gaussian, HeadVars::Gaussian { mu, sigma }) => losses::gaussian_nll_var(tape, &t.y, *mu, *sigma),
        (ModelKind::Tobit, HeadVars::Gaussian { mu, sigma }) => {
            Ok(losses::tobit_loss_var(tape, &t.y, *mu, *sigma, &t.flags)?.scale(1.0 / t.y.len() as f64))
        }
        (ModelKind::Qr, HeadVars::Quantiles { levels, values }) => {
            losses::multi_tilted_loss_var(tape, &t.y, values, levels)
        }
        (ModelKind::CensoredQr, HeadVars::Quantiles { levels, values }) => {
            losses::censored_tilted_loss_var(tape, &t.y, values, &t.tau, &t.flags, levels)
        }
        _ => Err(Error::validation(format!("model kind {kind} does not match the output head"))),
    }
}

/// Adam with global-norm gradient clipping.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    step: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let mut factor = max_norm / norm;
        loop {
            let scaled: Vec<Tensor> = grads.iter().map(|g| g.map(|x| x * factor)).collect();
            if global_norm(&scaled) <= max_norm {
                grads.iter_mut().zip(scaled).for_each(|(g, s)| *g = s);
                break;
            }
            factor *= 1.0 - 1e-12;
        }
    }
    norm
}

impl Adam {
    pub fn new(params: &TgcnParams, lr: f64, clip_norm: f64) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut TgcnParams, mut grads: Vec<Tensor>) {
        clip_global_norm(&mut grads, self.clip_norm);
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params.tensors_mut().into_iter().zip(&grads).zip(&mut self.m).zip(&mut self.v) {
            let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub kind: ModelKind,
    pub model: ModelConfig,
    pub params: TgcnParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

const EVAL_CHUNK: usize = 512;

/// Mean loss over `samples`, weighted by chunk size.
pub fn evaluate_loss(
    kind: ModelKind,
    params: &TgcnParams,
    cfg: &ModelConfig,
    data: &WindowSet,
    samples: &[usize],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::validation("no samples to evaluate"));
    }
    let mut total = 0.0;
    for chunk in samples.chunks(EVAL_CHUNK) {
        let tape = Tape::new();
        let vars = ParamVars::constants(&tape, params);
        let batch = WindowBatch {
            starts: chunk.to_vec(),
            len: data.window,
        };
        let heads = tgcn_forward_batch(&tape, &vars, &data.a_hat, &data.features, &batch, cfg)?;
        total += batch_loss(&tape, kind, &heads, &data.targets(chunk))?.item() * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Head outputs for `samples`, stacked in order.
pub fn predict(params: &TgcnParams, cfg: &ModelConfig, data: &WindowSet, samples: &[usize]) -> Result<ForecastHeads> {
    if samples.is_empty() {
        return Err(Error::validation("no samples to predict"));
    }
    let mut parts = Vec::new();
    for chunk in samples.chunks(EVAL_CHUNK) {
        let tape = Tape::new();
        let vars = ParamVars::constants(&tape, params);
        let batch = WindowBatch {
            starts: chunk.to_vec(),
            len: data.window,
        };
        parts.push(tgcn_forward_batch(&tape, &vars, &data.a_hat, &data.features, &batch, cfg)?.values());
    }
    let stack = |ts: Vec<&Tensor>| -> Tensor {
        let cols = ts[0].cols();
        let data: Vec<f64> = ts.iter().flat_map(|t| t.data().iter().copied()).collect();
        Tensor::from_matrix(data.len() / cols, cols, data).expect("sizes agree")
    };
    Ok(match &parts[0] {
        ForecastHeads::Gaussian { .. } => {
            let mut mus = Vec::new();
            let mut sigmas = Vec::new();
            for p in &parts {
                if let ForecastHeads::Gaussian { mu, sigma } = p {
                    mus.push(mu);
                    sigmas.push(sigma);
                }
            }
            ForecastHeads::Gaussian {
                mu: stack(mus),
                sigma: stack(sigmas),
            }
        }
        ForecastHeads::Quantiles { levels, .. } => {
            let values = (0..levels.len())
                .map(|j| {
                    stack(
                        parts
                            .iter()
                            .filter_map(|p| match p {
                                ForecastHeads::Quantiles { values, .. } => Some(&values[j]),
                                _ => None,
                            })
                            .collect(),
                    )
                })
                .collect();
            ForecastHeads::Quantiles {
                levels: levels.clone(),
                values,
            }
        }
    })
}

/// Trains from a fresh seeded initialisation.
pub fn train(kind: ModelKind, data: &WindowSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = cfg.model_config(data.k(), kind);
    let params = TgcnParams::init(&model, cfg.seed)?;
    train_from(kind, data, cfg, model, params)
}

/// Trains starting from `params`.
pub fn train_from(
    kind: ModelKind,
    data: &WindowSet,
    cfg: &TrainConfig,
    model: ModelConfig,
    mut params: TgcnParams,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    params.check_shapes(&model)?;
    if data.train.is_empty() {
        return Err(Error::validation("dataset has no training samples"));
    }
    let mut adam = Adam::new(&params, cfg.lr, cfg.grad_clip_norm);
    let mut order = data.train.clone();
    let mut history = Vec::new();
    let mut best = (params.clone(), f64::INFINITY, 0usize);
    let mut stale = 0;
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        let mut rng = rng::stream(cfg.seed, "shuffle", epoch as u64);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let tape = Tape::new();
            let vars = ParamVars::leaves(&tape, &params);
            let batch = WindowBatch {
                starts: chunk.to_vec(),
                len: data.window,
            };
            let heads = tgcn_forward_batch(&tape, &vars, &data.a_hat, &data.features, &batch, &model)
                .map_err(|e| diverged(epoch, b, e))?;
            let loss = batch_loss(&tape, kind, &heads, &data.targets(chunk))?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::Numerical(format!(
                    "training diverged at epoch {epoch}, batch {b}: loss is {value}"
                )));
            }
            let grads = tape.backward(loss)?;
            let grads: Vec<Tensor> = vars.vars().iter().map(|&v| grads.wrt(v)).collect();
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "training diverged at epoch {epoch}, batch {b}: non-finite gradient"
                )));
            }
            adam.step(&mut params, grads);
            total += value * chunk.len() as f64;
        }
        let train_loss = total / order.len() as f64;
        let val_loss = if data.val.is_empty() {
            train_loss
        } else {
            evaluate_loss(kind, &params, &model, data, &data.val).map_err(|e| diverged(epoch, 0, e))?
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.1 - cfg.early_stop_delta {
            best = (params.clone(), val_loss, epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.early_stop_patience {
                stopped_early = true;
                break;
            }
        }
    }
    let (params, best_val_loss, best_epoch) = best;
    Ok(TrainOutcome {
        kind,
        model,
        params,
        history,
        best_epoch,
        best_val_loss,
        stopped_early,
    })
}

fn diverged(epoch: usize, batch: usize, e: Error) -> Error {
    match e {
        Error::Numerical(m) => Error::Numerical(format!("training diverged at epoch {epoch}, batch {batch}: {m}")),
        other => other,
    }
}

pub fn write_history(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(HISTORY_HEADER)?;
    for r in history {
        w.write_record([r.epoch.to_string(), r.train_loss.to_string(), r.val_loss.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Everything needed to rebuild a trained forecaster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: ModelKind,
    pub model: ModelConfig,
    pub window: usize,
    pub split: (f64, f64, f64),
    pub scaler: Scaler,
    pub params: ParamArchive,
}

impl Checkpoint {
    pub fn new(outcome: &TrainOutcome, data: &WindowSet, split: (f64, f64, f64)) -> Self {
        Self {
            version: crate::model::CHECKPOINT_VERSION,
            kind: outcome.kind,
            model: outcome.model.clone(),
            window: data.window,
            split,
            scaler: data.panel.scaler.clone(),
            params: outcome.params.to_archive(),
        }
    }

    pub fn params(&self) -> Result<TgcnParams> {
        let p = TgcnParams::from_archive(&self.params)?;
        p.check_shapes(&self.model)?;
        Ok(p)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut f, self)?;
        f.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let c: Self = serde_json::from_reader(f)?;
        if c.version != crate::model::CHECKPOINT_VERSION {
            return Err(Error::validation(format!("unsupported checkpoint version {}", c.version)));
        }
        Ok(c)
    }
}
