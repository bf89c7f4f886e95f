//! Trainable maps from frame features to the embedding space.
//!
//! The reference models are small: an affine map and a two-layer perceptron
//! with a `tanh` hidden layer. Both expose a flat parameter vector and an
//! analytic backward pass so the triplet trainer can run plain SGD on them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{mean_of, DomainManifest, FeatureVector};

/// Layer sizes of an embedder; enough to rebuild it from a flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    Identity { dim: usize },
    Affine { input: usize, output: usize },
    Mlp { input: usize, hidden: usize, output: usize },
}

impl Architecture {
    pub fn input_dim(&self) -> usize {
        match *self {
            Architecture::Identity { dim } => dim,
            Architecture::Affine { input, .. } | Architecture::Mlp { input, .. } => input,
        }
    }

    pub fn output_dim(&self) -> usize {
        match *self {
            Architecture::Identity { dim } => dim,
            Architecture::Affine { output, .. } | Architecture::Mlp { output, .. } => output,
        }
    }

    /// Zero for the identity and affine maps.
    pub fn hidden_dim(&self) -> usize {
        match *self {
            Architecture::Mlp { hidden, .. } => hidden,
            _ => 0,
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            Architecture::Identity { .. } => 0,
            Architecture::Affine { input, output } => output * (input + 1),
            Architecture::Mlp { input, hidden, output } => hidden * (input + 1) + output * (hidden + 1),
        }
    }
}

pub trait Embedder: Send + Sync {
    fn architecture(&self) -> Architecture;

    fn input_dim(&self) -> usize {
        self.architecture().input_dim()
    }

    fn output_dim(&self) -> usize {
        self.architecture().output_dim()
    }

    /// Maps one input vector of length `input_dim()`.
    fn embed(&self, x: &[f64]) -> Vec<f64>;

    fn params(&self) -> &[f64];

    fn set_params(&mut self, params: &[f64]) -> Result<()>;

    /// Adds `d loss / d params` to `grad_params`, given `d loss / d output` at input `x`.
    fn accumulate_gradient(&self, x: &[f64], grad_output: &[f64], grad_params: &mut [f64]);
}

fn check_param_len(arch: Architecture, params: &[f64]) -> Result<()> {
    if params.len() != arch.param_count() {
        return Err(Error::Structure(format!(
            "{arch:?} expects {} parameters, got {}",
            arch.param_count(),
            params.len()
        )));
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Validation("non-finite embedder parameter".into()));
    }
    Ok(())
}

/// Passes features through unchanged. Useful for clustering raw features.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityEmbedder {
    dim: usize,
}

impl IdentityEmbedder {
    pub fn new(dim: usize) -> Self {
        IdentityEmbedder { dim }
    }
}

impl Embedder for IdentityEmbedder {
    fn architecture(&self) -> Architecture {
        Architecture::Identity { dim: self.dim }
    }

    fn embed(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    fn params(&self) -> &[f64] {
        &[]
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_param_len(self.architecture(), params)
    }

    fn accumulate_gradient(&self, _x: &[f64], _grad_output: &[f64], _grad_params: &mut [f64]) {}
}

/// `y = W x + b`, with `W` stored row-major ahead of `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineEmbedder {
    input: usize,
    output: usize,
    params: Vec<f64>,
}

impl AffineEmbedder {
    pub fn from_params(input: usize, output: usize, params: Vec<f64>) -> Result<Self> {
        check_param_len(Architecture::Affine { input, output }, &params)?;
        Ok(AffineEmbedder { input, output, params })
    }

    /// `W` is the (possibly rectangular) identity, `b = 0`.
    pub fn identity(input: usize, output: usize) -> Self {
        let mut params = vec![0.0; output * (input + 1)];
        for i in 0..input.min(output) {
            params[i * input + i] = 1.0;
        }
        AffineEmbedder { input, output, params }
    }

    /// Gaussian weights with variance `1 / input`, zero bias.
    pub fn random(input: usize, output: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (1.0 / input as f64).sqrt()).expect("positive std");
        let mut params: Vec<f64> = (0..output * input).map(|_| normal.sample(&mut rng)).collect();
        params.extend(std::iter::repeat_n(0.0, output));
        AffineEmbedder { input, output, params }
    }

    pub fn weights(&self) -> &[f64] {
        &self.params[..self.input * self.output]
    }

    pub fn bias(&self) -> &[f64] {
        &self.params[self.input * self.output..]
    }
}

impl Embedder for AffineEmbedder {
    fn architecture(&self) -> Architecture {
        Architecture::Affine {
            input: self.input,
            output: self.output,
        }
    }

    fn embed(&self, x: &[f64]) -> Vec<f64> {
        let (w, b) = self.params.split_at(self.input * self.output);
        w.chunks_exact(self.input)
            .zip(b)
            .map(|(row, bias)| dot(row, x) + bias)
            .collect()
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_param_len(self.architecture(), params)?;
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn accumulate_gradient(&self, x: &[f64], grad_output: &[f64], grad_params: &mut [f64]) {
        let (gw, gb) = grad_params.split_at_mut(self.input * self.output);
        for ((row, gbias), &g) in gw.chunks_exact_mut(self.input).zip(gb).zip(grad_output) {
            for (gwij, xj) in row.iter_mut().zip(x) {
                *gwij += g * xj;
            }
            *gbias += g;
        }
    }
}

/// `y = W2 tanh(W1 x + b1) + b2`. Parameter order: `W1`, `b1`, `W2`, `b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpEmbedder {
    input: usize,
    hidden: usize,
    output: usize,
    params: Vec<f64>,
}

impl MlpEmbedder {
    pub fn from_params(input: usize, hidden: usize, output: usize, params: Vec<f64>) -> Result<Self> {
        check_param_len(Architecture::Mlp { input, hidden, output }, &params)?;
        Ok(MlpEmbedder {
            input,
            hidden,
            output,
            params,
        })
    }

    /// Glorot-style Gaussian initialization, zero biases.
    pub fn random(input: usize, hidden: usize, output: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n1 = Normal::new(0.0, (2.0 / (input + hidden) as f64).sqrt()).expect("positive std");
        let n2 = Normal::new(0.0, (2.0 / (hidden + output) as f64).sqrt()).expect("positive std");
        let mut params = Vec::with_capacity(hidden * (input + 1) + output * (hidden + 1));
        params.extend((0..hidden * input).map(|_| n1.sample(&mut rng)));
        params.extend(std::iter::repeat_n(0.0, hidden));
        params.extend((0..output * hidden).map(|_| n2.sample(&mut rng)));
        params.extend(std::iter::repeat_n(0.0, output));
        MlpEmbedder {
            input,
            hidden,
            output,
            params,
        }
    }

    fn split(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let (w1, rest) = self.params.split_at(self.hidden * self.input);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, b2) = rest.split_at(self.output * self.hidden);
        (w1, b1, w2, b2)
    }

    fn hidden_activations(&self, x: &[f64]) -> Vec<f64> {
        let (w1, b1, _, _) = self.split();
        w1.chunks_exact(self.input)
            .zip(b1)
            .map(|(row, b)| (dot(row, x) + b).tanh())
            .collect()
    }
}

impl Embedder for MlpEmbedder {
    fn architecture(&self) -> Architecture {
        Architecture::Mlp {
            input: self.input,
            hidden: self.hidden,
            output: self.output,
        }
    }

    fn embed(&self, x: &[f64]) -> Vec<f64> {
        let h = self.hidden_activations(x);
        let (_, _, w2, b2) = self.split();
        w2.chunks_exact(self.hidden)
            .zip(b2)
            .map(|(row, b)| dot(row, &h) + b)
            .collect()
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_param_len(self.architecture(), params)?;
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn accumulate_gradient(&self, x: &[f64], grad_output: &[f64], grad_params: &mut [f64]) {
        let h = self.hidden_activations(x);
        let (_, _, w2, _) = self.split();

        // Backprop into the hidden pre-activations.
        let mut grad_pre = vec![0.0; self.hidden];
        for (row, &g) in w2.chunks_exact(self.hidden).zip(grad_output) {
            for (gp, w) in grad_pre.iter_mut().zip(row) {
                *gp += g * w;
            }
        }
        for (gp, hv) in grad_pre.iter_mut().zip(&h) {
            *gp *= 1.0 - hv * hv;
        }

        let (gw1, rest) = grad_params.split_at_mut(self.hidden * self.input);
        let (gb1, rest) = rest.split_at_mut(self.hidden);
        let (gw2, gb2) = rest.split_at_mut(self.output * self.hidden);
        for ((row, gb), &g) in gw1.chunks_exact_mut(self.input).zip(gb1).zip(&grad_pre) {
            for (gw, xj) in row.iter_mut().zip(x) {
                *gw += g * xj;
            }
            *gb += g;
        }
        for ((row, gb), &g) in gw2.chunks_exact_mut(self.hidden).zip(gb2).zip(grad_output) {
            for (gw, hj) in row.iter_mut().zip(&h) {
                *gw += g * hj;
            }
            *gb += g;
        }
    }
}

/// Any of the reference embedders; what checkpoints load into.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyEmbedder {
    Identity(IdentityEmbedder),
    Affine(AffineEmbedder),
    Mlp(MlpEmbedder),
}

impl AnyEmbedder {
    pub fn from_parts(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        Ok(match arch {
            Architecture::Identity { dim } => {
                check_param_len(arch, &params)?;
                AnyEmbedder::Identity(IdentityEmbedder::new(dim))
            }
            Architecture::Affine { input, output } => {
                AnyEmbedder::Affine(AffineEmbedder::from_params(input, output, params)?)
            }
            Architecture::Mlp { input, hidden, output } => {
                AnyEmbedder::Mlp(MlpEmbedder::from_params(input, hidden, output, params)?)
            }
        })
    }

    fn inner(&self) -> &dyn Embedder {
        match self {
            AnyEmbedder::Identity(e) => e,
            AnyEmbedder::Affine(e) => e,
            AnyEmbedder::Mlp(e) => e,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Embedder {
        match self {
            AnyEmbedder::Identity(e) => e,
            AnyEmbedder::Affine(e) => e,
            AnyEmbedder::Mlp(e) => e,
        }
    }
}

impl Embedder for AnyEmbedder {
    fn architecture(&self) -> Architecture {
        self.inner().architecture()
    }

    fn embed(&self, x: &[f64]) -> Vec<f64> {
        self.inner().embed(x)
    }

    fn params(&self) -> &[f64] {
        self.inner().params()
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        self.inner_mut().set_params(params)
    }

    fn accumulate_gradient(&self, x: &[f64], grad_output: &[f64], grad_params: &mut [f64]) {
        self.inner().accumulate_gradient(x, grad_output, grad_params)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Embeds one frame after checking its dimension.
pub fn embed_frame<E: Embedder + ?Sized>(e: &E, frame: &FeatureVector) -> Result<FeatureVector> {
    if frame.dim() != e.input_dim() {
        return Err(Error::Structure(format!(
            "embedder expects dim {}, frame has dim {}",
            e.input_dim(),
            frame.dim()
        )));
    }
    Ok(FeatureVector::new(e.embed(frame.as_slice())))
}

/// Tracklet embeddings in manifest order: the mean of each tracklet's embedded frames.
pub fn embed_manifest<E: Embedder + ?Sized>(e: &E, m: &DomainManifest) -> Result<Vec<FeatureVector>> {
    m.tracklets
        .par_iter()
        .map(|t| {
            let frames = t.frames.iter().map(|f| embed_frame(e, f)).collect::<Result<Vec<_>>>()?;
            mean_of(&frames)
        })
        .collect()
}
