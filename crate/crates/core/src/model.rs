//! Temporal graph convolutional forecaster.
//!
//! Each hour's node features pass through a two-layer graph convolution,
//! `Â relu(Â X W0) W1`. The per-node outputs are flattened into one vector
//! per hour and fed to a single LSTM shared by the whole graph. The last
//! hidden state is mapped by a linear head to per-node outputs: a mean and
//! a standard deviation, or one value per quantile level.
//!
//! A batch of windows is evaluated in two stages. The graph convolution and
//! the LSTM input projection depend on one hour only, so they run once for
//! every distinct hour the batch touches; the recurrence then gathers the
//! rows it needs at each step.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Tape, Tensor, Var};

pub const SIGMA_FLOOR: f64 = 1e-6;
pub const CHECKPOINT_VERSION: u32 = 1;

/// Output layer family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Gaussian,
    Quantile { levels: Vec<f64> },
}

impl HeadKind {
    /// Outputs per node.
    pub fn width(&self) -> usize {
        match self {
            HeadKind::Gaussian => 2,
            HeadKind::Quantile { levels } => levels.len(),
        }
    }
}

/// Nonlinearity after the second graph convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterActivation {
    #[default]
    Identity,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub nodes: usize,
    pub features: usize,
    pub c1: usize,
    pub c2: usize,
    pub hidden: usize,
    pub head: HeadKind,
    #[serde(default)]
    pub outer_activation: OuterActivation,
}

impl ModelConfig {
    pub fn new(nodes: usize, hidden: usize, head: HeadKind) -> Self {
        Self {
            nodes,
            features: 5,
            c1: 16,
            c2: 8,
            hidden,
            head,
            outer_activation: OuterActivation::Identity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.nodes, self.features, self.c1, self.c2, self.hidden, self.head.width()].contains(&0) {
            return Err(Error::validation(format!("model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// All trainable arrays. Gates of the LSTM are stacked column-wise in the
/// order input, forget, output, candidate. Head column `j * nodes + v` is
/// output `j` of node `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TgcnParams {
    pub w0: Tensor,
    pub w1: Tensor,
    pub lstm_w: Tensor,
    pub lstm_u: Tensor,
    pub lstm_b: Tensor,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

pub const PARAM_NAMES: [&str; 7] = ["w0", "w1", "lstm_w", "lstm_u", "lstm_b", "head_w", "head_b"];

fn uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let r = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-r..=r)).collect();
    Tensor::from_matrix(rows, cols, data).expect("sizes agree")
}

impl TgcnParams {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialisation.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng::stream(seed, "tgcn-init", 0);
        let (k, h) = (cfg.nodes, cfg.hidden);
        let lstm_in = k * cfg.c2;
        let out = k * cfg.head.width();
        Ok(Self {
            w0: uniform(&mut rng, cfg.features, cfg.c1, cfg.features),
            w1: uniform(&mut rng, cfg.c1, cfg.c2, cfg.c1),
            lstm_w: uniform(&mut rng, lstm_in, 4 * h, lstm_in),
            lstm_u: uniform(&mut rng, h, 4 * h, h),
            lstm_b: uniform(&mut rng, 1, 4 * h, h),
            head_w: uniform(&mut rng, h, out, h),
            head_b: uniform(&mut rng, 1, out, h),
        })
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (k, h) = (cfg.nodes, cfg.hidden);
        let out = k * cfg.head.width();
        Self {
            w0: Tensor::zeros(&[cfg.features, cfg.c1]),
            w1: Tensor::zeros(&[cfg.c1, cfg.c2]),
            lstm_w: Tensor::zeros(&[k * cfg.c2, 4 * h]),
            lstm_u: Tensor::zeros(&[h, 4 * h]),
            lstm_b: Tensor::zeros(&[1, 4 * h]),
            head_w: Tensor::zeros(&[h, out]),
            head_b: Tensor::zeros(&[1, out]),
        }
    }

    pub fn tensors(&self) -> [&Tensor; 7] {
        [
            &self.w0,
            &self.w1,
            &self.lstm_w,
            &self.lstm_u,
            &self.lstm_b,
            &self.head_w,
            &self.head_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 7] {
        [
            &mut self.w0,
            &mut self.w1,
            &mut self.lstm_w,
            &mut self.lstm_u,
            &mut self.lstm_b,
            &mut self.head_w,
            &mut self.head_b,
        ]
    }

    pub fn from_tensors(mut t: Vec<Tensor>) -> Result<Self> {
        if t.len() != 7 {
            return Err(Error::validation(format!("expected 7 parameter arrays, got {}", t.len())));
        }
        let head_b = t.pop().expect("len 7");
        let head_w = t.pop().expect("len 7");
        let lstm_b = t.pop().expect("len 7");
        let lstm_u = t.pop().expect("len 7");
        let lstm_w = t.pop().expect("len 7");
        let w1 = t.pop().expect("len 7");
        let w0 = t.pop().expect("len 7");
        Ok(Self {
            w0,
            w1,
            lstm_w,
            lstm_u,
            lstm_b,
            head_w,
            head_b,
        })
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Errors unless every array has the shape `cfg` implies.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = Self::zeros(cfg);
        for ((name, have), want) in PARAM_NAMES.iter().zip(self.tensors()).zip(expected.tensors()) {
            if have.shape() != want.shape() {
                return Err(Error::validation(format!(
                    "parameter {name} has shape {:?}, model expects {:?}",
                    have.shape(),
                    want.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn to_archive(&self) -> ParamArchive {
        let arrays = PARAM_NAMES
            .iter()
            .zip(self.tensors())
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        ParamArchive {
            version: CHECKPOINT_VERSION,
            arrays,
        }
    }

    pub fn from_archive(archive: &ParamArchive) -> Result<Self> {
        if archive.version != CHECKPOINT_VERSION {
            return Err(Error::validation(format!(
                "unsupported parameter archive version {}",
                archive.version
            )));
        }
        let tensors = PARAM_NAMES
            .iter()
            .map(|n| {
                archive
                    .arrays
                    .get(*n)
                    .cloned()
                    .ok_or_else(|| Error::validation(format!("archive lacks array {n}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_tensors(tensors)
    }
}

/// Named, shaped arrays with a format version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamArchive {
    pub version: u32,
    pub arrays: BTreeMap<String, Tensor>,
}

/// Parameters recorded on a tape.
#[derive(Clone, Copy)]
pub struct ParamVars<'t> {
    pub w0: Var<'t>,
    pub w1: Var<'t>,
    pub lstm_w: Var<'t>,
    pub lstm_u: Var<'t>,
    pub lstm_b: Var<'t>,
    pub head_w: Var<'t>,
    pub head_b: Var<'t>,
}

impl<'t> ParamVars<'t> {
    /// Differentiable copies of `p`.
    pub fn leaves(tape: &'t Tape, p: &TgcnParams) -> Self {
        Self::build(p, |t| tape.leaf(t.clone()))
    }

    /// Frozen copies of `p` for evaluation.
    pub fn constants(tape: &'t Tape, p: &TgcnParams) -> Self {
        Self::build(p, |t| tape.constant(t.clone()))
    }

    fn build(p: &TgcnParams, mut f: impl FnMut(&Tensor) -> Var<'t>) -> Self {
        Self {
            w0: f(&p.w0),
            w1: f(&p.w1),
            lstm_w: f(&p.lstm_w),
            lstm_u: f(&p.lstm_u),
            lstm_b: f(&p.lstm_b),
            head_w: f(&p.head_w),
            head_b: f(&p.head_b),
        }
    }

    /// Inverse of [`ParamVars::vars`].
    pub fn from_vars(v: &[Var<'t>]) -> Result<Self> {
        match v {
            &[w0, w1, lstm_w, lstm_u, lstm_b, head_w, head_b] => Ok(Self {
                w0,
                w1,
                lstm_w,
                lstm_u,
                lstm_b,
                head_w,
                head_b,
            }),
            _ => Err(Error::validation(format!("expected 7 parameter tensors, got {}", v.len()))),
        }
    }

    pub fn vars(&self) -> [Var<'t>; 7] {
        [
            self.w0,
            self.w1,
            self.lstm_w,
            self.lstm_u,
            self.lstm_b,
            self.head_w,
            self.head_b,
        ]
    }
}

/// Per-node predictive outputs on the tape, each `batch x nodes`.
#[derive(Clone)]
pub enum HeadVars<'t> {
    Gaussian { mu: Var<'t>, sigma: Var<'t> },
    Quantiles { levels: Vec<f64>, values: Vec<Var<'t>> },
}

/// Per-node predictive outputs, each `batch x nodes`.
#[derive(Debug, Clone, PartialEq)]
pub enum ForecastHeads {
    Gaussian { mu: Tensor, sigma: Tensor },
    Quantiles { levels: Vec<f64>, values: Vec<Tensor> },
}

impl HeadVars<'_> {
    pub fn values(&self) -> ForecastHeads {
        match self {
            HeadVars::Gaussian { mu, sigma } => ForecastHeads::Gaussian {
                mu: mu.value(),
                sigma: sigma.value(),
            },
            HeadVars::Quantiles { levels, values } => ForecastHeads::Quantiles {
                levels: levels.clone(),
                values: values.iter().map(|v| v.value()).collect(),
            },
        }
    }
}

fn check_finite(v: Var<'_>, layer: &str) -> Result<()> {
    if v.with_value(Tensor::is_finite) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite values after {layer}")))
    }
}

/// Graph convolution on a stack of `k`-row blocks: `Â relu(Â X W0) W1`.
pub fn gcn_layers<'t>(
    a_hat: Var<'t>,
    x: Var<'t>,
    w0: Var<'t>,
    w1: Var<'t>,
    outer: OuterActivation,
) -> Result<Var<'t>> {
    let h1 = x.graph_mix(a_hat)?.matmul(w0)?.relu();
    check_finite(h1, "graph convolution 1")?;
    let h2 = h1.matmul(w1)?.graph_mix(a_hat)?;
    let h2 = match outer {
        OuterActivation::Identity => h2,
        OuterActivation::Relu => h2.relu(),
    };
    check_finite(h2, "graph convolution 2")?;
    Ok(h2)
}

/// `Â relu(Â X W0) W1` for one `k x F` feature matrix.
pub fn gcn_forward(a_hat: &Tensor, x: &Tensor, w0: &Tensor, w1: &Tensor) -> Result<Tensor> {
    let (k, k2) = a_hat.dims2();
    if k != k2 || x.rows() != k {
        return Err(Error::Shape {
            op: "gcn_forward",
            left: a_hat.shape().to_vec(),
            right: x.shape().to_vec(),
        });
    }
    let tape = Tape::new();
    let out = gcn_layers(
        tape.constant(a_hat.clone()),
        tape.constant(x.clone()),
        tape.constant(w0.clone()),
        tape.constant(w1.clone()),
        OuterActivation::Identity,
    )?;
    Ok(out.value())
}

/// One LSTM step given the input projection `zx = g W + b` (`batch x 4H`).
pub fn lstm_cell<'t>(
    zx: Var<'t>,
    h_prev: Option<Var<'t>>,
    c_prev: Option<Var<'t>>,
    lstm_u: Var<'t>,
    hidden: usize,
) -> Result<(Var<'t>, Var<'t>)> {
    let z = match h_prev {
        Some(h) => zx.add(h.matmul(lstm_u)?)?,
        None => zx,
    };
    let gate = |j: usize| z.slice_cols(j * hidden, (j + 1) * hidden);
    let i = gate(0)?.sigmoid();
    let f = gate(1)?.sigmoid();
    let o = gate(2)?.sigmoid();
    let cand = gate(3)?.tanh();
    let c = match c_prev {
        Some(c) => f.mul(c)?.add(i.mul(cand)?)?,
        None => i.mul(cand)?,
    };
    let h = o.mul(c.tanh())?;
    Ok((h, c))
}

/// One LSTM step on plain values. `g` is the flattened graph output
/// (`1 x k*c2` or `batch x k*c2`).
pub fn lstm_step(g: &Tensor, h_prev: &Tensor, c_prev: &Tensor, params: &TgcnParams) -> Result<(Tensor, Tensor)> {
    let hidden = params.lstm_u.rows();
    if h_prev.cols() != hidden || c_prev.cols() != hidden || h_prev.rows() != g.rows() {
        return Err(Error::Shape {
            op: "lstm_step",
            left: h_prev.shape().to_vec(),
            right: vec![g.rows(), hidden],
        });
    }
    let tape = Tape::new();
    let zx = tape
        .constant(g.clone())
        .matmul(tape.constant(params.lstm_w.clone()))?
        .add_row(tape.constant(params.lstm_b.clone()))?;
    let (h, c) = lstm_cell(
        zx,
        Some(tape.constant(h_prev.clone())),
        Some(tape.constant(c_prev.clone())),
        tape.constant(params.lstm_u.clone()),
        hidden,
    )?;
    Ok((h.value(), c.value()))
}

/// Windows of `len` consecutive hours starting at each entry of `starts`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub starts: Vec<usize>,
    pub len: usize,
}

impl WindowBatch {
    pub fn size(&self) -> usize {
        self.starts.len()
    }
}

/// Forward pass for a batch of windows over a panel-wide feature matrix.
///
/// `features` holds `T * k` rows (hour-major, node-minor) of `F` columns.
/// Outputs are `batch x k` per head component.
pub fn tgcn_forward_batch<'t>(
    tape: &'t Tape,
    params: &ParamVars<'t>,
    a_hat: &Tensor,
    features: &Tensor,
    batch: &WindowBatch,
    cfg: &ModelConfig,
) -> Result<HeadVars<'t>> {
    let k = cfg.nodes;
    let (rows, f) = features.dims2();
    if f != cfg.features || rows % k != 0 || a_hat.dims2() != (k, k) {
        return Err(Error::Shape {
            op: "tgcn_forward",
            left: features.shape().to_vec(),
            right: vec![k, cfg.features],
        });
    }
    if batch.len == 0 || batch.starts.is_empty() {
        return Err(Error::validation("window length and batch size must be at least 1"));
    }
    let n_hours = rows / k;
    if let Some(&bad) = batch.starts.iter().find(|&&s| s + batch.len > n_hours) {
        return Err(Error::validation(format!(
            "window starting at hour {bad} runs past the {n_hours}-hour panel"
        )));
    }

    // distinct hours touched by the batch, in order
    let mut touched = vec![usize::MAX; n_hours];
    let mut hours = Vec::new();
    let mut sorted = batch.starts.clone();
    sorted.sort_unstable();
    for &s in &sorted {
        for t in s..s + batch.len {
            if touched[t] == usize::MAX {
                touched[t] = 0;
                hours.push(t);
            }
        }
    }
    hours.sort_unstable();
    for (pos, &t) in hours.iter().enumerate() {
        touched[t] = pos;
    }
    let mut x = Vec::with_capacity(hours.len() * k * f);
    for &t in &hours {
        x.extend_from_slice(&features.data()[t * k * f..(t + 1) * k * f]);
    }
    let x = tape.constant(Tensor::from_matrix(hours.len() * k, f, x)?);
    let a = tape.constant(a_hat.clone());

    let g = gcn_layers(a, x, params.w0, params.w1, cfg.outer_activation)?;
    let g = g.reshape(vec![hours.len(), k * cfg.c2])?;
    let zx = g.matmul(params.lstm_w)?.add_row(params.lstm_b)?;
    check_finite(zx, "lstm input projection")?;

    let mut h = None;
    let mut c = None;
    let mut index = vec![0; batch.size()];
    for step in 0..batch.len {
        for (slot, &s) in index.iter_mut().zip(&batch.starts) {
            *slot = touched[s + step];
        }
        let z = zx.gather_rows(&index)?;
        let (hn, cn) = lstm_cell(z, h, c, params.lstm_u, cfg.hidden)?;
        h = Some(hn);
        c = Some(cn);
    }
    let h = h.expect("at least one step");
    check_finite(h, "lstm")?;
    let out = h.matmul(params.head_w)?.add_row(params.head_b)?;
    check_finite(out, "output head")?;
    let part = |j: usize| out.slice_cols(j * k, (j + 1) * k);
    Ok(match &cfg.head {
        HeadKind::Gaussian => HeadVars::Gaussian {
            mu: part(0)?,
            sigma: part(1)?.softplus().offset(SIGMA_FLOOR),
        },
        HeadKind::Quantile { levels } => HeadVars::Quantiles {
            levels: levels.clone(),
            values: (0..levels.len()).map(part).collect::<Result<_>>()?,
        },
    })
}

/// Forecast for a single `l * k x F` window (hour-major rows).
pub fn tgcn_forward(a_hat: &Tensor, window: &Tensor, params: &TgcnParams, cfg: &ModelConfig) -> Result<ForecastHeads> {
    let k = cfg.nodes.max(1);
    let len = window.rows() / k;
    let tape = Tape::new();
    let vars = ParamVars::constants(&tape, params);
    let batch = WindowBatch { starts: vec![0], len };
    Ok(tgcn_forward_batch(&tape, &vars, a_hat, window, &batch, cfg)?.values())
}
