use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Shape of the residual 1-D convolutional encoder.
///
/// Blocks are grouped into stages of two. Every stage after the first
/// doubles the channel count and halves the time resolution in its first
/// block, which also carries a strided 1×1 projection shortcut.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub n_blocks: usize,
    pub base_channels: usize,
    pub embed_dim: usize,
    pub input_leads: usize,
    /// Length of the views the encoder was trained on. Informational: the
    /// network ends in global average pooling and accepts any sufficiently
    /// long input.
    pub input_len: usize,
    /// Mean-pooling factor applied to the raw input before the stem.
    pub input_pool: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub block_kernel: usize,
    /// Adds a two-layer head whose output feeds the contrastive loss.
    pub projection_head: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            n_blocks: 4,
            base_channels: 16,
            embed_dim: 128,
            input_leads: 12,
            input_len: 5000,
            input_pool: 4,
            stem_kernel: 7,
            stem_stride: 2,
            block_kernel: 5,
            projection_head: false,
        }
    }
}

impl EncoderConfig {
    /// Eight residual blocks in four stages of 64..512 channels: the
    /// ResNet-18 layout with 3-tap kernels.
    pub fn paper_arch() -> Self {
        EncoderConfig {
            n_blocks: 8,
            base_channels: 64,
            input_pool: 2,
            stem_kernel: 7,
            stem_stride: 2,
            block_kernel: 3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_blocks", self.n_blocks),
            ("base_channels", self.base_channels),
            ("input_leads", self.input_leads),
            ("input_len", self.input_len),
            ("input_pool", self.input_pool),
            ("stem_kernel", self.stem_kernel),
            ("stem_stride", self.stem_stride),
            ("block_kernel", self.block_kernel),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("encoder.{name} must be positive")));
        }
        if self.embed_dim < 4 {
            return Err(Error::InvalidConfig(format!("encoder.embed_dim must be at least 4, got {}", self.embed_dim)));
        }
        Ok(())
    }

    fn stage_channels(&self, block: usize) -> usize {
        self.base_channels << (block / 2)
    }

    fn block_downsamples(block: usize) -> bool {
        block >= 2 && block % 2 == 0
    }

    pub fn final_channels(&self) -> usize {
        self.stage_channels(self.n_blocks - 1)
    }

    /// Ordered parameter names and shapes.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let c = self.base_channels;
        out.push(("stem.conv".to_string(), vec![c, self.input_leads, self.stem_kernel]));
        out.push(("stem.norm.gamma".to_string(), vec![c]));
        out.push(("stem.norm.beta".to_string(), vec![c]));
        let k = self.block_kernel;
        for b in 0..self.n_blocks {
            let ch = self.stage_channels(b);
            let c_in = if b == 0 { c } else { self.stage_channels(b - 1) };
            let p = format!("block{b}");
            out.push((format!("{p}.conv1"), vec![ch, c_in, k]));
            out.push((format!("{p}.norm1.gamma"), vec![ch]));
            out.push((format!("{p}.norm1.beta"), vec![ch]));
            out.push((format!("{p}.conv2"), vec![ch, ch, k]));
            out.push((format!("{p}.norm2.gamma"), vec![ch]));
            out.push((format!("{p}.norm2.beta"), vec![ch]));
            if c_in != ch || Self::block_downsamples(b) {
                out.push((format!("{p}.shortcut.conv"), vec![ch, c_in, 1]));
                out.push((format!("{p}.shortcut.norm.gamma"), vec![ch]));
                out.push((format!("{p}.shortcut.norm.beta"), vec![ch]));
            }
        }
        let e = self.embed_dim;
        out.push(("proj.weight".to_string(), vec![self.final_channels(), e]));
        out.push(("proj.bias".to_string(), vec![e]));
        if self.projection_head {
            out.push(("head1.weight".to_string(), vec![e, e]));
            out.push(("head1.bias".to_string(), vec![e]));
            out.push(("head2.weight".to_string(), vec![e, e]));
            out.push(("head2.bias".to_string(), vec![e]));
        }
        out
    }
}

/// Residual convolutional encoder `f`, mapping `[batch, leads, len]` to
/// `[batch, embed_dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<T: Scalar = f32> {
    config: EncoderConfig,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
}

/// Result of a forward pass.
pub struct EncoderOutput {
    /// `f(x)`, read by the linear probe.
    pub embedding: Var,
    /// Projection-head output when enabled, otherwise the embedding. This is
    /// what the contrastive loss consumes.
    pub loss_input: Var,
    /// Graph handles of the parameters, aligned with [`Encoder::params`].
    pub params: Vec<Var>,
}

impl<T: Scalar> Encoder<T> {
    pub fn init(config: EncoderConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let small = Normal::new(0.0, 0.01).expect("valid normal");
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape) in config.layout() {
            let n: usize = shape.iter().product();
            let data: Vec<T> = if name.ends_with("gamma") {
                vec![T::one(); n]
            } else if name.ends_with("beta") || name.ends_with("bias") {
                vec![T::zero(); n]
            } else if name == "proj.weight" {
                (0..n).map(|_| T::of(small.sample(rng) as f32 as f64)).collect()
            } else {
                let fan_in: usize = if shape.len() == 3 { shape[1] * shape[2] } else { shape[0] };
                let bound = (6.0 / fan_in as f64).sqrt();
                (0..n).map(|_| T::of(rng.gen_range(-bound..bound) as f32 as f64)).collect()
            };
            names.push(name);
            params.push(Tensor::new(shape, data)?);
        }
        Ok(Encoder { config, names, params })
    }

    /// Rebuild from named parameters, checking them against the config layout.
    pub fn from_params(config: EncoderConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != named.len() {
            return Err(Error::ShapeMismatch(format!(
                "encoder expects {} parameter tensors, got {}",
                layout.len(),
                named.len()
            )));
        }
        let mut names = Vec::with_capacity(named.len());
        let mut params = Vec::with_capacity(named.len());
        for ((want_name, want_shape), (name, tensor)) in layout.into_iter().zip(named) {
            if want_name != name || want_shape != tensor.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "expected parameter {want_name} {want_shape:?}, got {name} {:?}",
                    tensor.shape()
                )));
            }
            names.push(name);
            params.push(tensor);
        }
        Ok(Encoder { config, names, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn n_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Encoder<U> {
        Encoder { config: self.config.clone(), names: self.names.clone(), params: self.params.iter().map(Tensor::cast).collect() }
    }

    /// Record a forward pass on `g`. With `trainable` the parameters become
    /// gradient-tracked leaves.
    pub fn forward(&self, g: &mut Graph<T>, x: Var, trainable: bool) -> Result<EncoderOutput> {
        let shape = g.value(x).shape().to_vec();
        if shape.len() != 3 || shape[1] != self.config.input_leads {
            return Err(Error::ShapeMismatch(format!(
                "encoder expects [batch, {}, len], got {shape:?}",
                self.config.input_leads
            )));
        }
        let vars: Vec<Var> =
            self.params.iter().map(|p| if trainable { g.param(p.clone()) } else { g.input(p.clone()) }).collect();
        self.forward_using(g, x, &vars)
    }

    /// Forward pass reading parameters from existing graph handles, which
    /// must follow [`Encoder::names`] order and shapes.
    pub fn forward_using(&self, g: &mut Graph<T>, x: Var, vars: &[Var]) -> Result<EncoderOutput> {
        let shape = g.value(x).shape().to_vec();
        if shape.len() != 3 || shape[1] != self.config.input_leads {
            return Err(Error::ShapeMismatch(format!(
                "encoder expects [batch, {}, len], got {shape:?}",
                self.config.input_leads
            )));
        }
        if vars.len() != self.params.len()
            || vars.iter().zip(&self.params).any(|(&v, p)| g.value(v).shape() != p.shape())
        {
            return Err(Error::ShapeMismatch("parameter handles do not match the encoder layout".into()));
        }
        let mut cursor = 0usize;
        let names = &self.names;
        let mut next = |expect: &str| {
            debug_assert!(names[cursor].ends_with(expect), "{} vs {expect}", names[cursor]);
            cursor += 1;
            vars[cursor - 1]
        };
        let cfg = &self.config;

        let mut h = g.avg_pool(x, cfg.input_pool)?;
        let w = next("stem.conv");
        h = g.conv1d(h, w, cfg.stem_stride, cfg.stem_kernel / 2)?;
        let (ga, be) = (next("gamma"), next("beta"));
        h = g.norm(h, ga, be)?;
        h = g.relu(h)?;

        let pad = cfg.block_kernel / 2;
        for b in 0..cfg.n_blocks {
            let stride = if EncoderConfig::block_downsamples(b) { 2 } else { 1 };
            let c_in = g.value(h).shape()[1];
            let ch = cfg.stage_channels(b);
            let w1 = next("conv1");
            let mut y = g.conv1d(h, w1, stride, pad)?;
            let (ga, be) = (next("gamma"), next("beta"));
            y = g.norm(y, ga, be)?;
            y = g.relu(y)?;
            let w2 = next("conv2");
            y = g.conv1d(y, w2, 1, pad)?;
            let (ga, be) = (next("gamma"), next("beta"));
            y = g.norm(y, ga, be)?;
            let shortcut = if c_in != ch || stride != 1 {
                let ws = next("shortcut.conv");
                let s = g.conv1d(h, ws, stride, 0)?;
                let (ga, be) = (next("gamma"), next("beta"));
                g.norm(s, ga, be)?
            } else {
                h
            };
            y = g.add(y, shortcut)?;
            h = g.relu(y)?;
        }
        let pooled = g.global_avg_pool(h)?;
        let (pw, pb) = (next("proj.weight"), next("proj.bias"));
        let embedding = g.linear(pooled, pw, pb)?;
        let loss_input = if cfg.projection_head {
            let (w1, b1) = (next("head1.weight"), next("head1.bias"));
            let mut y = g.linear(embedding, w1, b1)?;
            y = g.relu(y)?;
            let (w2, b2) = (next("head2.weight"), next("head2.bias"));
            g.linear(y, w2, b2)?
        } else {
            embedding
        };
        debug_assert_eq!(cursor, vars.len());
        Ok(EncoderOutput { embedding, loss_input, params: vars.to_vec() })
    }
}
