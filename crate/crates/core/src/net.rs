//! Feed-forward sigmoid network `V_theta` with a positive output.
//!
//! Layout of the flat parameter vector: for each hidden layer, the weight
//! matrix row-major (`out x in`) followed by the bias; then the output weights
//! and the output bias. The output is `softplus(z) + offset`, so
//! `V_theta >= offset > 0` for every parameter value.

use std::cell::RefCell;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::DomainBox;
use crate::error::{Error, Result};
use crate::rng::Streams;
use crate::value::ValueFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputTransform {
    /// `log(1 + e^z) + offset`.
    SoftplusOffset { offset: f64 },
}

impl OutputTransform {
    /// Lower bound of the transformed output.
    pub fn floor(&self) -> f64 {
        match *self {
            OutputTransform::SoftplusOffset { offset } => offset,
        }
    }
}

impl Default for OutputTransform {
    fn default() -> Self {
        OutputTransform::SoftplusOffset { offset: 0.01 }
    }
}

/// Architecture of a [`ValueNet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub output: OutputTransform,
    /// Inputs are mapped affinely from this box onto `[-1, 1]^d` before the
    /// first layer.
    #[serde(default)]
    pub input_box: Option<DomainBox>,
}

impl NetSpec {
    pub fn new(input_dim: usize, widths: Vec<usize>) -> Self {
        Self {
            input_dim,
            widths,
            activation: Activation::Sigmoid,
            output: OutputTransform::default(),
            input_box: None,
        }
    }

    pub fn with_input_box(mut self, b: DomainBox) -> Self {
        self.input_box = Some(b);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidParameter(
                "input dimension must be positive".into(),
            ));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::InvalidParameter(
                "need at least one hidden layer, all widths positive".into(),
            ));
        }
        if let Some(b) = &self.input_box {
            if b.dim() != self.input_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.input_dim,
                    got: b.dim(),
                });
            }
        }
        let OutputTransform::SoftplusOffset { offset } = self.output;
        if !(offset > 0.0 && offset.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "output offset must be positive, got {offset}"
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let mut fan_in = self.input_dim;
        let mut n = 0;
        for &w in &self.widths {
            n += w * fan_in + w;
            fan_in = w;
        }
        n + fan_in + 1
    }

    fn offset(&self) -> f64 {
        let OutputTransform::SoftplusOffset { offset } = self.output;
        offset
    }
}

/// Scratch buffers for one evaluation.
#[derive(Debug, Default, Clone)]
pub struct Workspace {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Workspace {
    fn fit(&mut self, spec: &NetSpec) {
        let layers = spec.widths.len() + 1;
        if self.acts.len() != layers {
            self.acts = vec![Vec::new(); layers];
        }
        self.acts[0].resize(spec.input_dim, 0.0);
        for (a, &w) in self.acts[1..].iter_mut().zip(&spec.widths) {
            a.resize(w, 0.0);
        }
    }
}

thread_local! {
    static SCRATCH: RefCell<Workspace> = RefCell::new(Workspace::default());
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
fn softplus(z: f64) -> f64 {
    if z > 35.0 {
        z
    } else if z < -35.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

/// `V_theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet {
    spec: NetSpec,
    params: Vec<f64>,
}

impl ValueNet {
    /// Weights and biases uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(spec: NetSpec, streams: Streams) -> Result<Self> {
        spec.validate()?;
        let mut rng = streams.rng();
        let mut params = Vec::with_capacity(spec.param_count());
        let mut fan_in = spec.input_dim;
        for &w in spec.widths.iter().chain(std::iter::once(&1)) {
            let a = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..(w * fan_in + w) {
                params.push(rng.random_range(-a..=a));
            }
            fan_in = w;
        }
        debug_assert_eq!(params.len(), spec.param_count());
        Ok(Self { spec, params })
    }

    pub fn zeros(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.param_count();
        Ok(Self {
            spec,
            params: vec![0.0; n],
        })
    }

    pub fn from_params(spec: NetSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(Error::LengthMismatch {
                expected: spec.param_count(),
                got: params.len(),
            });
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Index of the output bias in the parameter vector.
    pub fn output_bias_index(&self) -> usize {
        self.params.len() - 1
    }

    /// Range of the output-layer weights in the parameter vector.
    pub fn output_weight_range(&self) -> std::ops::Range<usize> {
        let last = *self.spec.widths.last().expect("validated");
        let end = self.params.len() - 1;
        end - last..end
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Forward pass filling `ws`; returns the pre-transform output `z`.
    fn forward_ws(&self, x: &[f64], ws: &mut Workspace) -> f64 {
        ws.fit(&self.spec);
        match &self.spec.input_box {
            Some(b) => b.normalize_into(x, &mut ws.acts[0]),
            None => ws.acts[0].copy_from_slice(x),
        }
        let mut off = 0;
        for l in 0..self.spec.widths.len() {
            let (prev, rest) = ws.acts.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut rest[0];
            let fan_in = input.len();
            let w = &self.params[off..off + out.len() * fan_in];
            let b = &self.params[off + out.len() * fan_in..off + out.len() * (fan_in + 1)];
            for (j, o) in out.iter_mut().enumerate() {
                let row = &w[j * fan_in..(j + 1) * fan_in];
                let s: f64 = row.iter().zip(input).map(|(a, b)| a * b).sum();
                *o = sigmoid(s + b[j]);
            }
            off += out.len() * (fan_in + 1);
        }
        let last = ws.acts.last().expect("nonempty");
        let w = &self.params[off..off + last.len()];
        let s: f64 = w.iter().zip(last).map(|(a, b)| a * b).sum();
        s + self.params[off + last.len()]
    }

    fn forward_unchecked(&self, x: &[f64]) -> f64 {
        SCRATCH.with(|ws| {
            let z = self.forward_ws(x, &mut ws.borrow_mut());
            softplus(z) + self.spec.offset()
        })
    }

    /// `V_theta(x)`.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.forward_unchecked(x))
    }

    /// Adds `coeff * dV_theta(x)/dtheta` to `grad`; returns `V_theta(x)`.
    pub fn accumulate_grad(&self, x: &[f64], coeff: f64, grad: &mut [f64]) -> f64 {
        debug_assert_eq!(grad.len(), self.params.len());
        SCRATCH.with(|ws| {
            let ws = &mut *ws.borrow_mut();
            let z = self.forward_ws(x, ws);
            let value = softplus(z) + self.spec.offset();
            let top = coeff * sigmoid(z);
            let n_hidden = self.spec.widths.len();

            // Offsets of each hidden layer's weight block.
            let mut offs = Vec::with_capacity(n_hidden + 1);
            let mut off = 0;
            for l in 0..n_hidden {
                offs.push(off);
                off += ws.acts[l + 1].len() * (ws.acts[l].len() + 1);
            }
            offs.push(off);

            let last = &ws.acts[n_hidden];
            let out_off = offs[n_hidden];
            ws.delta.clear();
            for (j, a) in last.iter().enumerate() {
                grad[out_off + j] += top * a;
                ws.delta
                    .push(top * self.params[out_off + j] * a * (1.0 - a));
            }
            grad[out_off + last.len()] += top;

            for l in (0..n_hidden).rev() {
                let input = &ws.acts[l];
                let fan_in = input.len();
                let width = ws.acts[l + 1].len();
                let off = offs[l];
                for j in 0..width {
                    let g = ws.delta[j];
                    let row = &mut grad[off + j * fan_in..off + (j + 1) * fan_in];
                    for (r, a) in row.iter_mut().zip(input) {
                        *r += g * a;
                    }
                    grad[off + width * fan_in + j] += g;
                }
                if l > 0 {
                    ws.delta_prev.clear();
                    ws.delta_prev.resize(fan_in, 0.0);
                    for j in 0..width {
                        let g = ws.delta[j];
                        let row = &self.params[off + j * fan_in..off + (j + 1) * fan_in];
                        for (d, w) in ws.delta_prev.iter_mut().zip(row) {
                            *d += g * w;
                        }
                    }
                    for (d, a) in ws.delta_prev.iter_mut().zip(input) {
                        *d *= a * (1.0 - a);
                    }
                    std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
                }
            }
            value
        })
    }

    /// `dV_theta(x)/dtheta`.
    pub fn grad_params(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut g = vec![0.0; self.params.len()];
        self.accumulate_grad(x, 1.0, &mut g);
        Ok(g)
    }

    pub fn param_norm(&self) -> f64 {
        self.params.iter().map(|p| p * p).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// SHA-256 over the spec and the exact parameter bits.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.spec).expect("spec serializes"));
        for p in &self.params {
            h.update(p.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

impl ValueFunction for ValueNet {
    fn value(&self, x: &[f64]) -> f64 {
        self.forward_unchecked(x)
    }
}

/// On-disk record of a trained network.
///
/// Stored as JSON: `{"format", "spec", "params", "seed", "config_hash"}`.
/// Parameters are written in shortest round-trip decimal form, so loading
/// reproduces every bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub spec: NetSpec,
    pub params: Vec<f64>,
    pub seed: u64,
    pub config_hash: String,
    #[serde(default)]
    pub iteration: u64,
}

pub const CHECKPOINT_FORMAT: &str = "dcdc-checkpoint-v1";

impl Checkpoint {
    pub fn new(net: &ValueNet, seed: u64, config_hash: impl Into<String>, iteration: u64) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            spec: net.spec.clone(),
            params: net.params.clone(),
            seed,
            config_hash: config_hash.into(),
            iteration,
        }
    }

    pub fn net(&self) -> Result<ValueNet> {
        ValueNet::from_params(self.spec.clone(), self.params.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Checkpoint = serde_json::from_str(&s)?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!(
                "{}: unknown checkpoint format {}",
                path.display(),
                c.format
            )));
        }
        Ok(c)
    }
}
