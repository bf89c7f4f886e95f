//! k-reciprocal tracklet clustering for unsupervised domain adaptation of
//! person re-identification embeddings.
//!
//! The pipeline works on precomputed per-frame feature vectors:
//!
//! 1. embed every target tracklet as the mean of its embedded frames,
//! 2. link each tracklet to its `k1` nearest cross-camera neighbors, weighting
//!    the edge `s -> t` by the rank of `s` in `t`'s own neighbor list,
//! 3. drop edges heavier than `K` and keep connected components with more than
//!    `T` tracklets as pseudo-identities,
//! 4. fine-tune the embedder on those clusters with a batch-hard triplet loss,
//!    and repeat.
//!
//! Supporting modules merge labeled source domains, generate synthetic
//! multi-camera domains, and score retrieval (CMC, mAP) and cluster quality.

pub mod adapt;
pub mod checkpoint;
pub mod cli;
pub mod embed;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod knn;
pub mod merge;
pub mod model;
pub mod synth;
pub mod train;
pub mod triplet;

pub use adapt::{adapt, adapt_with_observer, AdaptConfig, AdaptationReport, RoundReport, StopReason};
pub use checkpoint::Checkpoint;
pub use embed::{embed_manifest, AffineEmbedder, AnyEmbedder, Architecture, Embedder, IdentityEmbedder, MlpEmbedder};
pub use error::{Error, Result};
pub use eval::{
    classify_clusters, cmc, inter_intra_distances, mean_average_precision, rank_manifest, rank_query_gallery,
    ClusterDistance, ClusterLabel, ClusterQuality, RankingResult,
};
pub use graph::{
    build_graph, cluster, cluster_set, connected_subgraphs, threshold_graph, ClusterParams, ClusterSet, Connectivity,
    ReciprocalGraph,
};
pub use knn::{build_neighbor_index, k_reciprocal_distance, top_k, NeighborIndex};
pub use merge::{filter_cross_camera, merge_domains, MergePolicy, MergeReport};
pub use model::{
    tracklet_embedding, validate_manifest, ClusterAssignment, DomainManifest, FeatureVector, Tracklet,
    ValidationReport, Violation,
};
pub use synth::{generate_synthetic_domain, SyntheticSpec};
pub use train::{train_embedder, train_source, TrainConfig, TrainStats};
pub use triplet::{batch_hard_triplet_loss, Margin, TripletLoss};
