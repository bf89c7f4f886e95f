//! Retrieval metrics and cluster diagnostics on a labeled domain.
//!
//!     cargo run --release --example evaluation

use ktcuda::{
    classify_clusters, cluster, cmc, generate_synthetic_domain, inter_intra_distances, mean_average_precision,
    rank_manifest, ClusterDistance, ClusterLabel, ClusterParams, IdentityEmbedder, SyntheticSpec,
};

fn main() -> ktcuda::Result<()> {
    let mut spec = SyntheticSpec::new("gallery", 40, 4, 8, 11);
    spec.camera_shift = 0.3;
    spec.noise_sigma = 0.3;
    spec.tracklets_per_identity_per_camera = (1, 3);
    let m = generate_synthetic_domain(&spec)?;
    let raw = IdentityEmbedder::new(spec.dim);

    // every tracklet queries all others, minus same-camera copies of itself
    let ranking = rank_manifest(&raw, &m, false)?;
    let ranks = [1, 5, 10, 20];
    let curve = cmc(&ranking, &ranks)?;
    for (k, v) in ranks.iter().zip(&curve) {
        println!("R{k:<2} {v:.3}");
    }
    println!("mAP {:.3}\n", mean_average_precision(&ranking)?);

    let clusters = cluster(&m, &ClusterParams::for_cameras(spec.cameras), &raw)?;
    let q = classify_clusters(&clusters, &m)?;
    for v in q.clusters.iter().filter(|v| v.label != ClusterLabel::Good).take(5) {
        println!(
            "cluster {}: {} majority {} (purity {:.2})",
            v.cluster_id, v.label, v.majority_identity, v.purity
        );
    }
    println!(
        "{} clusters: GC {} MC {} DC {} MC+DC {}, purity {:.3}",
        q.clusters.len(),
        q.good,
        q.mixed,
        q.divided,
        q.mixed_divided,
        q.purity
    );

    for mode in [ClusterDistance::TrackletCentroid, ClusterDistance::MinimumPairwise] {
        let (intra, inter) = inter_intra_distances(&clusters, &m, &raw, mode)?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        println!(
            "{mode:?}: {} intra pairs (mean {:.3}), {} inter pairs (mean {:.3})",
            intra.len(),
            mean(&intra),
            inter.len(),
            mean(&inter)
        );
    }
    Ok(())
}
