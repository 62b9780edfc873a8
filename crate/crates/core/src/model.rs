//! Small fully connected embedder with explicit backpropagation, plus SGD
//! with momentum and the checkpoint format.
//!
//! Hidden layers use a rectifier and belong to the `backbone` group; the final
//! linear projection is the `embedding` group. Layers compute `x W + b` with
//! `W` stored `in x out`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::{norm, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerGroup {
    Backbone,
    Embedding,
}

impl LayerGroup {
    fn as_str(self) -> &'static str {
        match self {
            Self::Backbone => "backbone",
            Self::Embedding => "embedding",
        }
    }
}

impl FromStr for LayerGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "backbone" => Ok(Self::Backbone),
            "embedding" => Ok(Self::Embedding),
            _ => Err(Error::Config(format!("unknown layer group `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub group: LayerGroup,
}

impl Linear {
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    fn num_params(&self) -> usize {
        self.weight.as_slice().len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderParams {
    layers: Vec<Linear>,
    /// Bumped on every update; caches from older versions are rejected.
    version: u64,
}

/// Activations kept by [`EmbedderParams::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    /// Input to each layer.
    inputs: Vec<Matrix>,
    /// Pre-activation output of each layer.
    pre: Vec<Matrix>,
}

/// Gradients shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<(Matrix, Vec<f64>)>,
}

impl ParamGrads {
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.as_slice().iter().chain(b).copied())
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.flat().iter().all(|&g| g == 0.0)
    }
}

impl EmbedderParams {
    /// He-uniform weights, zero biases. `dims = [input, hidden..., output]`.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::ShapeMismatch(format!("bad layer dims {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let bound = (6.0 / w[0] as f64).sqrt();
                Linear {
                    weight: Matrix::from_fn(w[0], w[1], |_, _| rng.random_range(-bound..bound)),
                    bias: vec![0.0; w[1]],
                    group: if i == last {
                        LayerGroup::Embedding
                    } else {
                        LayerGroup::Backbone
                    },
                }
            })
            .collect();
        Ok(Self { layers, version: 0 })
    }

    pub fn from_layers(layers: Vec<Linear>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::ShapeMismatch("no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::ShapeMismatch(format!("layer {i} bias length")));
            }
            if i > 0 && layers[i - 1].out_dim() != l.in_dim() {
                return Err(Error::ShapeMismatch(format!("layer {i} input dim")));
            }
            if !l.weight.is_finite() || l.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::NonFinite { row: i, col: 0 });
            }
        }
        Ok(Self { layers, version: 0 })
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Linear::num_params).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.as_slice().iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} parameters",
                values.len(),
                self.num_params()
            )));
        }
        let mut it = values.iter();
        for l in &mut self.layers {
            for (dst, src) in l
                .weight
                .as_mut_slice()
                .iter_mut()
                .chain(l.bias.iter_mut())
                .zip(&mut it)
            {
                *dst = *src;
            }
        }
        self.version += 1;
        Ok(())
    }

    /// Raw (unnormalized) outputs for a batch of inputs.
    pub fn forward(&self, inputs: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input dim {} vs embedder input {}",
                inputs.cols(),
                self.input_dim()
            )));
        }
        let mut x = inputs.clone();
        let mut cache = ForwardCache {
            version: self.version,
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = x.matmul(&layer.weight)?;
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            let out = if i < last {
                let mut a = z.clone();
                a.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
                a
            } else {
                z.clone()
            };
            cache.inputs.push(x);
            cache.pre.push(z);
            x = out;
        }
        Ok((x, cache))
    }

    /// Parameter gradients given the gradient of the loss w.r.t. the raw outputs.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &Matrix) -> Result<ParamGrads> {
        if cache.version != self.version || cache.inputs.len() != self.layers.len() {
            return Err(Error::StaleCache);
        }
        let last = self.layers.len() - 1;
        if !output_grad.same_shape(&cache.pre[last]) {
            return Err(Error::ShapeMismatch(format!(
                "output gradient {}x{} vs outputs {}x{}",
                output_grad.rows(),
                output_grad.cols(),
                cache.pre[last].rows(),
                cache.pre[last].cols()
            )));
        }
        let mut grads = vec![(Matrix::zeros(0, 0), Vec::new()); self.layers.len()];
        let mut delta = output_grad.clone();
        for i in (0..self.layers.len()).rev() {
            if i < last {
                for (d, z) in delta.as_mut_slice().iter_mut().zip(cache.pre[i].as_slice()) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let gw = cache.inputs[i].t_matmul(&delta)?;
            let mut gb = vec![0.0; delta.cols()];
            for row in delta.iter_rows() {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if i > 0 {
                delta = delta.matmul_t(&self.layers[i].weight)?;
            }
            grads[i] = (gw, gb);
        }
        Ok(ParamGrads { layers: grads })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_checkpoint_string())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::from_checkpoint_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Parse {
                path: path.to_path_buf(),
                msg,
            },
            other => other,
        })
    }

    /// Text checkpoint: a version line, a layer count, then per layer a header
    /// `layer <index> <group> <in> <out>`, `in` weight rows and one bias row.
    pub fn to_checkpoint_string(&self) -> String {
        let mut s = String::from("past-embedder 1\n");
        let _ = writeln!(s, "layers {}", self.layers.len());
        let join = |xs: &[f64]| xs.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
        for (i, l) in self.layers.iter().enumerate() {
            let _ = writeln!(
                s,
                "layer {i} {} {} {}",
                l.group.as_str(),
                l.in_dim(),
                l.out_dim()
            );
            for row in l.weight.iter_rows() {
                let _ = writeln!(s, "{}", join(row));
            }
            let _ = writeln!(s, "{}", join(&l.bias));
        }
        s
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Config(format!("checkpoint: {m}"));
        let mut lines = text.lines();
        if lines.next() != Some("past-embedder 1") {
            return Err(bad("unsupported header"));
        }
        let count: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("layers "))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing layer count"))?;
        let parse_row = |line: Option<&str>, len: usize| -> Result<Vec<f64>> {
            let line = line.ok_or_else(|| bad("truncated"))?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("bad number"))?;
            if row.len() != len {
                return Err(bad("row length"));
            }
            Ok(row)
        };
        let mut layers = Vec::with_capacity(count);
        for i in 0..count {
            let header = lines.next().ok_or_else(|| bad("truncated"))?;
            let parts: Vec<&str> = header.split_whitespace().collect();
            if parts.len() != 5 || parts[0] != "layer" || parts[1] != i.to_string() {
                return Err(bad("bad layer header"));
            }
            let group: LayerGroup = parts[2].parse().map_err(|_| bad("bad group"))?;
            let in_dim: usize = parts[3].parse().map_err(|_| bad("bad dim"))?;
            let out_dim: usize = parts[4].parse().map_err(|_| bad("bad dim"))?;
            let mut w = Vec::with_capacity(in_dim * out_dim);
            for _ in 0..in_dim {
                w.extend(parse_row(lines.next(), out_dim)?);
            }
            let bias = parse_row(lines.next(), out_dim)?;
            layers.push(Linear {
                weight: Matrix::from_vec(in_dim, out_dim, w)?,
                bias,
                group,
            });
        }
        Self::from_layers(layers)
    }
}

/// Row-wise L2 normalization that remembers the norms for backpropagation.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub features: Matrix,
    norms: Vec<f64>,
}

pub fn normalize_rows(raw: &Matrix) -> Result<Normalized> {
    let mut features = raw.clone();
    let mut norms = Vec::with_capacity(raw.rows());
    for i in 0..raw.rows() {
        let n = norm(raw.row(i));
        if n < 1e-12 {
            return Err(Error::ZeroVectorRow { row: i });
        }
        features.row_mut(i).iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok(Normalized { features, norms })
}

impl Normalized {
    /// Maps a gradient w.r.t. normalized rows back to the raw rows:
    /// `(g - y (y . g)) / |x|`.
    pub fn backward(&self, grad: &Matrix) -> Result<Matrix> {
        if !grad.same_shape(&self.features) {
            return Err(Error::ShapeMismatch("normalization gradient".into()));
        }
        let mut out = grad.clone();
        for i in 0..grad.rows() {
            let y = self.features.row(i);
            let proj: f64 = y.iter().zip(grad.row(i)).map(|(a, b)| a * b).sum();
            for (o, yk) in out.row_mut(i).iter_mut().zip(y) {
                *o = (*o - yk * proj) / self.norms[i];
            }
        }
        Ok(out)
    }
}

/// `v <- mu v + (g + wd w); w <- w - lr v`.
pub fn momentum_update(w: &mut [f64], g: &[f64], v: &mut [f64], lr: f64, mu: f64, wd: f64) {
    for ((wi, gi), vi) in w.iter_mut().zip(g).zip(v.iter_mut()) {
        *vi = mu * *vi + (gi + wd * *wi);
        *wi -= lr * *vi;
    }
}

/// SGD with momentum and weight decay, separate learning rate per layer group.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_backbone: f64,
    pub lr_embedding: f64,
    buffers: Vec<(Matrix, Vec<f64>)>,
}

impl OptimizerState {
    pub fn new(params: &EmbedderParams, lr_backbone: f64, lr_embedding: f64) -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_backbone,
            lr_embedding,
            buffers: params
                .layers
                .iter()
                .map(|l| {
                    (
                        Matrix::zeros(l.in_dim(), l.out_dim()),
                        vec![0.0; l.out_dim()],
                    )
                })
                .collect(),
        }
    }

    pub fn lr(&self, group: LayerGroup) -> f64 {
        match group {
            LayerGroup::Backbone => self.lr_backbone,
            LayerGroup::Embedding => self.lr_embedding,
        }
    }
}

pub fn sgd_step(
    params: &mut EmbedderParams,
    grads: &ParamGrads,
    state: &mut OptimizerState,
) -> Result<()> {
    if grads.layers.len() != params.layers.len() || state.buffers.len() != params.layers.len() {
        return Err(Error::ShapeMismatch("gradient layer count".into()));
    }
    for ((layer, (gw, gb)), (vw, vb)) in params.layers.iter().zip(&grads.layers).zip(&state.buffers)
    {
        if !layer.weight.same_shape(gw) || !layer.weight.same_shape(vw) {
            return Err(Error::ShapeMismatch("gradient weight shape".into()));
        }
        if layer.bias.len() != gb.len() || layer.bias.len() != vb.len() {
            return Err(Error::ShapeMismatch("gradient bias shape".into()));
        }
    }
    let (mu, wd) = (state.momentum, state.weight_decay);
    for ((layer, (gw, gb)), (vw, vb)) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.buffers.iter_mut())
    {
        let lr = match layer.group {
            LayerGroup::Backbone => state.lr_backbone,
            LayerGroup::Embedding => state.lr_embedding,
        };
        momentum_update(
            layer.weight.as_mut_slice(),
            gw.as_slice(),
            vw.as_mut_slice(),
            lr,
            mu,
            wd,
        );
        momentum_update(&mut layer.bias, gb, vb, lr, mu, wd);
    }
    params.version += 1;
    Ok(())
}
