//! The iterative adaptation loop: embed the target tracklets, cluster them,
//! fine-tune on the clusters, repeat.
//!
//! Each round warm-starts from the previous round's parameters. The loop ends
//! after `rounds` iterations, or earlier when a round yields more clusters than
//! `cluster_cap` (those pseudo-labels are not trained on) or fewer than two
//! clusters (nothing to contrast).

use serde::{Deserialize, Serialize};

use crate::embed::Embedder;
use crate::error::{Error, Result};
use crate::graph::{cluster, ClusterParams, ClusterSet};
use crate::model::DomainManifest;
use crate::train::{train_embedder, TrainConfig, TrainStats};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub clustering: ClusterParams,
    /// Number of adaptation rounds `I`.
    pub rounds: usize,
    /// Stop once a round produces more clusters than this.
    pub cluster_cap: usize,
    /// Fine-tuning settings; `train.seed` is replaced per round by a value derived from `seed`.
    pub train: TrainConfig,
    pub seed: u64,
}

impl AdaptConfig {
    /// Defaults for a camera network of the given size: `K`/`T` from the camera
    /// count, two rounds, a cap of 850 clusters and 25,000 steps per round.
    pub fn for_cameras(cameras: usize) -> Self {
        AdaptConfig {
            clustering: ClusterParams::for_cameras(cameras),
            rounds: 2,
            cluster_cap: 850,
            train: TrainConfig::adaptation(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.clustering.validate()?;
        self.train.validate()?;
        if self.cluster_cap == 0 {
            return Err(Error::Validation("cluster_cap must be positive".into()));
        }
        Ok(())
    }

    /// Seed of the fine-tuning run in `round` (0-based).
    pub fn round_seed(&self, round: usize) -> u64 {
        splitmix64(self.seed ^ splitmix64(round as u64 + 1))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Completed,
    ClusterCap,
    TooFewClusters,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::Completed => "completed",
            StopReason::ClusterCap => "cluster-cap",
            StopReason::TooFewClusters => "too-few-clusters",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub clusters: usize,
    pub clustered_fraction: f64,
    /// False when the round stopped before fine-tuning.
    pub trained: bool,
    pub losses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptationReport {
    pub rounds: Vec<RoundReport>,
    pub early_stopped: bool,
    pub stop_reason: StopReason,
    /// Fingerprint of the returned parameters.
    pub checkpoint_id: String,
}

/// What an observer sees after each fine-tuning step.
pub struct RoundOutcome<'a, E> {
    pub round: usize,
    pub clusters: &'a ClusterSet,
    pub before: &'a E,
    pub after: &'a E,
    pub stats: &'a TrainStats,
}

pub fn adapt<E: Embedder + Clone>(
    source: &E,
    target: &DomainManifest,
    cfg: &AdaptConfig,
) -> Result<(E, AdaptationReport)> {
    adapt_with_observer(source, target, cfg, |_| {})
}

/// [`adapt`] with a callback invoked after every completed fine-tuning round,
/// for experiments that track labeled metrics between rounds.
pub fn adapt_with_observer<E, F>(
    source: &E,
    target: &DomainManifest,
    cfg: &AdaptConfig,
    mut observer: F,
) -> Result<(E, AdaptationReport)>
where
    E: Embedder + Clone,
    F: FnMut(RoundOutcome<'_, E>),
{
    cfg.validate()?;
    target.ensure_valid()?;
    let mut current = source.clone();
    let mut rounds = Vec::new();
    let mut stop_reason = StopReason::Completed;

    for round in 0..cfg.rounds {
        let clusters = cluster(target, &cfg.clustering, &current)?;
        let clustered_fraction = clusters.clustered_count() as f64 / target.len() as f64;
        let mut record = RoundReport {
            round,
            clusters: clusters.len(),
            clustered_fraction,
            trained: false,
            losses: Vec::new(),
        };
        log::info!(
            "round {round}: {} clusters, {:.1}% of tracklets clustered",
            clusters.len(),
            100.0 * clustered_fraction
        );

        if clusters.len() > cfg.cluster_cap {
            stop_reason = StopReason::ClusterCap;
            rounds.push(record);
            break;
        }
        if clusters.len() < 2 {
            stop_reason = StopReason::TooFewClusters;
            rounds.push(record);
            break;
        }

        let train_cfg = TrainConfig {
            seed: cfg.round_seed(round),
            ..cfg.train.clone()
        };
        let (next, stats) = train_embedder(&current, &clusters, target, &train_cfg)?;
        observer(RoundOutcome {
            round,
            clusters: &clusters,
            before: &current,
            after: &next,
            stats: &stats,
        });
        record.trained = true;
        record.losses = stats.losses;
        rounds.push(record);
        current = next;
    }

    let report = AdaptationReport {
        rounds,
        early_stopped: stop_reason != StopReason::Completed,
        stop_reason,
        checkpoint_id: fingerprint(current.params()),
    };
    Ok((current, report))
}

/// FNV-1a over the little-endian parameter bytes, as 16 hex digits.
pub fn fingerprint(params: &[f64]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in params {
        for b in p.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::AffineEmbedder;
    use crate::model::{FeatureVector, Tracklet};

    fn pairs_manifest(pairs: usize) -> DomainManifest {
        // `pairs` identities, each seen once by camera A and once by camera B,
        // far apart from each other.
        let mut tracklets = Vec::new();
        for i in 0..pairs {
            let x = i as f64 * 10.0;
            for (cam, dx) in [("A", 0.0), ("B", 0.1)] {
                tracklets.push(Tracklet::new(
                    format!("{cam}{i:02}"),
                    cam,
                    None,
                    vec![
                        FeatureVector::new(vec![x + dx, 0.0]),
                        FeatureVector::new(vec![x + dx, 0.2]),
                    ],
                ));
            }
        }
        DomainManifest::new("pairs", tracklets)
    }

    fn quick_cfg() -> AdaptConfig {
        let mut cfg = AdaptConfig::for_cameras(2);
        cfg.train.iterations = 20;
        cfg.train.batch_p = 2;
        cfg.train.batch_k = 2;
        cfg
    }

    #[test]
    fn zero_rounds_return_source() {
        let e = AffineEmbedder::random(2, 2, 1);
        let cfg = AdaptConfig {
            rounds: 0,
            ..quick_cfg()
        };
        let (out, report) = adapt(&e, &pairs_manifest(3), &cfg).unwrap();
        assert_eq!(out, e);
        assert!(report.rounds.is_empty());
        assert_eq!(report.stop_reason, StopReason::Completed);
        assert!(!report.early_stopped);
    }

    #[test]
    fn cluster_cap_stops_after_first_round() {
        let e = AffineEmbedder::identity(2, 2);
        let cfg = AdaptConfig {
            rounds: 3,
            cluster_cap: 5,
            ..quick_cfg()
        };
        let (out, report) = adapt(&e, &pairs_manifest(10), &cfg).unwrap();
        assert_eq!(report.rounds.len(), 1);
        assert_eq!(report.rounds[0].clusters, 10);
        assert_eq!(report.stop_reason, StopReason::ClusterCap);
        assert_eq!(report.stop_reason.to_string(), "cluster-cap");
        assert!(report.early_stopped);
        assert_eq!(out, e);
    }

    #[test]
    fn rounds_warm_start_from_previous_parameters() {
        let e = AffineEmbedder::identity(2, 2);
        let cfg = AdaptConfig {
            rounds: 2,
            ..quick_cfg()
        };
        let mut seen: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        let (out, report) = adapt_with_observer(&e, &pairs_manifest(4), &cfg, |o| {
            seen.push((o.before.params().to_vec(), o.after.params().to_vec()));
        })
        .unwrap();
        assert_eq!(report.rounds.len(), 2);
        assert_eq!(seen[0].0, e.params());
        assert_eq!(seen[1].0, seen[0].1);
        assert_eq!(out.params(), seen[1].1.as_slice());
        assert_eq!(report.checkpoint_id, fingerprint(out.params()));
    }

    #[test]
    fn adaptation_is_reproducible() {
        let e = AffineEmbedder::random(2, 2, 5);
        let cfg = AdaptConfig {
            rounds: 2,
            seed: 17,
            ..quick_cfg()
        };
        let (a, ra) = adapt(&e, &pairs_manifest(4), &cfg).unwrap();
        let (b, rb) = adapt(&e, &pairs_manifest(4), &cfg).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(ra, rb);
    }

    #[test]
    fn single_cluster_stops_early() {
        let e = AffineEmbedder::identity(2, 2);
        let (_, report) = adapt(&e, &pairs_manifest(1), &quick_cfg()).unwrap();
        assert_eq!(report.stop_reason, StopReason::TooFewClusters);
    }
}
