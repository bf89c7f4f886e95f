//! PK-batch SGD on the batch-hard triplet loss.
//!
//! A batch draws `P` classes and `K` frames from each. Classes with fewer than
//! `K` frames are sampled with replacement. The learning rate decays
//! exponentially from `learning_rate` to `learning_rate * final_lr_fraction`
//! over the run.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{embed_frame, Embedder};
use crate::error::{Error, Result};
use crate::graph::ClusterSet;
use crate::model::{DomainManifest, FeatureVector};
use crate::triplet::{batch_hard_triplet_loss, Margin};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Classes per batch.
    pub batch_p: usize,
    /// Samples per class.
    pub batch_k: usize,
    pub margin: Margin,
    pub learning_rate: f64,
    pub final_lr_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::adaptation()
    }
}

impl TrainConfig {
    /// 25,000 iterations, the fine-tuning budget per adaptation round.
    pub fn adaptation() -> Self {
        TrainConfig {
            iterations: 25_000,
            batch_p: 8,
            batch_k: 4,
            margin: Margin::Soft,
            learning_rate: 0.01,
            final_lr_fraction: 0.1,
            seed: 0,
        }
    }

    /// 50,000 iterations for training on the labeled source domain.
    pub fn source() -> Self {
        TrainConfig {
            iterations: 50_000,
            ..TrainConfig::adaptation()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_p < 2 || self.batch_k < 2 {
            return Err(Error::Validation(format!(
                "batch needs P >= 2 and K >= 2, got P={} K={}",
                self.batch_p, self.batch_k
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Validation("learning rate must be positive".into()));
        }
        if !(self.final_lr_fraction.is_finite() && self.final_lr_fraction > 0.0) {
            return Err(Error::Validation("final_lr_fraction must be positive".into()));
        }
        if let Margin::Hard(m) = self.margin {
            if !(m.is_finite() && m >= 0.0) {
                return Err(Error::Validation("margin must be non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, step: usize) -> f64 {
        if self.iterations <= 1 {
            return self.learning_rate;
        }
        let progress = step as f64 / (self.iterations - 1) as f64;
        self.learning_rate * self.final_lr_fraction.powf(progress)
    }
}

/// Loss per SGD step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub losses: Vec<f64>,
}

impl TrainStats {
    pub fn first_loss(&self) -> Option<f64> {
        self.losses.first().copied()
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }

    /// Mean of the first / last `window` losses.
    pub fn head_mean(&self, window: usize) -> Option<f64> {
        mean(self.losses.iter().take(window))
    }

    pub fn tail_mean(&self, window: usize) -> Option<f64> {
        mean(self.losses.iter().rev().take(window))
    }
}

fn mean<'a>(it: impl Iterator<Item = &'a f64>) -> Option<f64> {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Labeled frame pools: one entry per class.
#[derive(Clone, Debug)]
pub struct TrainingSet<'a> {
    classes: Vec<Vec<&'a FeatureVector>>,
}

impl<'a> TrainingSet<'a> {
    /// Frames of clustered tracklets, each labeled by its cluster.
    /// Unclustered tracklets contribute nothing.
    pub fn from_clusters(clusters: &ClusterSet, m: &'a DomainManifest) -> Result<Self> {
        let by_id: std::collections::HashMap<&str, &crate::model::Tracklet> =
            m.tracklets.iter().map(|t| (t.tracklet_id.as_str(), t)).collect();
        let mut classes = Vec::with_capacity(clusters.len());
        for c in &clusters.clusters {
            let mut pool = Vec::new();
            for id in &c.member_tracklet_ids {
                let t = by_id
                    .get(id.as_str())
                    .ok_or_else(|| Error::UnknownTracklet(id.clone()))?;
                pool.extend(t.frames.iter());
            }
            classes.push(pool);
        }
        Ok(TrainingSet { classes })
    }

    /// Frames grouped by ground-truth identity; for supervised source training.
    pub fn from_identities(m: &'a DomainManifest) -> Result<Self> {
        let mut groups: std::collections::BTreeMap<&str, Vec<&FeatureVector>> = Default::default();
        for t in &m.tracklets {
            let id = t
                .identity
                .as_deref()
                .ok_or_else(|| Error::Validation(format!("tracklet {:?} has no identity label", t.tracklet_id)))?;
            groups.entry(id).or_default().extend(t.frames.iter());
        }
        Ok(TrainingSet {
            classes: groups.into_values().collect(),
        })
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    fn check(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Adaptation("no clusters to train on".into()));
        }
        let usable = self.classes.iter().filter(|c| c.len() >= 2).count();
        if usable < 2 {
            return Err(Error::Adaptation(format!(
                "need at least two classes with two or more frames, found {usable}"
            )));
        }
        Ok(())
    }

    fn draw_batch<R: Rng>(&self, rng: &mut R, p: usize, k: usize) -> (Vec<&'a FeatureVector>, Vec<usize>) {
        let eligible: Vec<usize> = (0..self.classes.len())
            .filter(|&c| self.classes[c].len() >= 2)
            .collect();
        let chosen: Vec<usize> = if eligible.len() > p {
            let mut picked = sample(rng, eligible.len(), p).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| eligible[i]).collect()
        } else {
            eligible
        };

        let mut frames = Vec::with_capacity(chosen.len() * k);
        let mut labels = Vec::with_capacity(chosen.len() * k);
        for (label, &c) in chosen.iter().enumerate() {
            let pool = &self.classes[c];
            if pool.len() >= k {
                for i in sample(rng, pool.len(), k) {
                    frames.push(pool[i]);
                }
            } else {
                for _ in 0..k {
                    frames.push(pool[rng.random_range(0..pool.len())]);
                }
            }
            labels.extend(std::iter::repeat_n(label, k));
        }
        (frames, labels)
    }
}

/// Loss of one batch and its gradient with respect to the embedder parameters.
pub fn batch_loss_and_gradient<E: Embedder + ?Sized>(
    e: &E,
    frames: &[&FeatureVector],
    labels: &[usize],
    margin: Margin,
) -> Result<(f64, Vec<f64>)> {
    let embedded = frames
        .iter()
        .map(|f| embed_frame(e, f).map(FeatureVector::into_inner))
        .collect::<Result<Vec<_>>>()?;
    let out = batch_hard_triplet_loss(&embedded, labels, margin)?;
    let mut grad = vec![0.0; e.params().len()];
    for (f, g) in frames.iter().zip(&out.gradient) {
        e.accumulate_gradient(f.as_slice(), g, &mut grad);
    }
    Ok((out.loss, grad))
}

/// Runs `cfg.iterations` SGD steps on `set`, starting from `e`'s current parameters.
pub fn train_on<E: Embedder + Clone>(e: &E, set: &TrainingSet<'_>, cfg: &TrainConfig) -> Result<(E, TrainStats)> {
    cfg.validate()?;
    let mut model = e.clone();
    let mut stats = TrainStats::default();
    if cfg.iterations == 0 {
        return Ok((model, stats));
    }
    set.check()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = model.params().to_vec();
    stats.losses.reserve(cfg.iterations);
    for step in 0..cfg.iterations {
        let (frames, labels) = set.draw_batch(&mut rng, cfg.batch_p, cfg.batch_k);
        let (loss, grad) = batch_loss_and_gradient(&model, &frames, &labels, cfg.margin)?;
        let lr = cfg.learning_rate_at(step);
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= lr * g;
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Adaptation(format!(
                "parameters diverged at step {step}; lower the learning rate"
            )));
        }
        model.set_params(&params)?;
        stats.losses.push(loss);
    }
    Ok((model, stats))
}

/// Fine-tunes `e` on the frames of clustered tracklets, one class per cluster.
pub fn train_embedder<E: Embedder + Clone>(
    e: &E,
    clusters: &ClusterSet,
    m: &DomainManifest,
    cfg: &TrainConfig,
) -> Result<(E, TrainStats)> {
    if clusters.is_empty() && cfg.iterations > 0 {
        return Err(Error::Adaptation("zero clusters: nothing to fine-tune on".into()));
    }
    let set = TrainingSet::from_clusters(clusters, m)?;
    train_on(e, &set, cfg)
}

/// Supervised training on ground-truth identities of a labeled manifest.
pub fn train_source<E: Embedder + Clone>(e: &E, m: &DomainManifest, cfg: &TrainConfig) -> Result<(E, TrainStats)> {
    m.ensure_valid()?;
    let set = TrainingSet::from_identities(m)?;
    train_on(e, &set, cfg)
}
