//! Train an affine embedder on a labeled synthetic source, then adapt it to an
//! unlabeled target whose cameras distort features differently.
//!
//!     cargo run --release --example adaptation [seed]

use ktcuda::{
    adapt_with_observer, classify_clusters, cluster, cmc, generate_synthetic_domain, inter_intra_distances,
    mean_average_precision, rank_manifest, train_source, AdaptConfig, AffineEmbedder, ClusterDistance, DomainManifest,
    SyntheticSpec, TrainConfig,
};

fn domain(name: &str, seed: u64) -> ktcuda::Result<DomainManifest> {
    let mut spec = SyntheticSpec::new(name, 50, 4, 16, seed);
    spec.camera_shift = 0.4;
    spec.noise_sigma = 0.3;
    spec.tracklets_per_identity_per_camera = (1, 2);
    generate_synthetic_domain(&spec)
}

fn scores(e: &AffineEmbedder, target: &DomainManifest) -> ktcuda::Result<(f64, f64)> {
    let r = rank_manifest(e, target, false)?;
    Ok((cmc(&r, &[1])?[0], mean_average_precision(&r)?))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn main() -> ktcuda::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let source = domain("source", 1000 + seed)?;
    let target = domain("target", 2000 + seed)?;

    let mut cfg = TrainConfig::source();
    cfg.seed = seed;
    let (trained, stats) = train_source(&AffineEmbedder::random(16, 16, seed), &source, &cfg)?;
    println!(
        "source training: loss {:.3} -> {:.3}",
        stats.head_mean(500).unwrap_or(f64::NAN),
        stats.tail_mean(500).unwrap_or(f64::NAN)
    );
    let (r1, map) = scores(&trained, &target)?;
    println!("direct transfer: R1 {r1:.3}  mAP {map:.3}");

    let mut adapt_cfg = AdaptConfig::for_cameras(4);
    adapt_cfg.rounds = 3;
    adapt_cfg.seed = seed;
    let (adapted, report) = adapt_with_observer(&trained, &target, &adapt_cfg, |o| {
        let q = classify_clusters(o.clusters, &target).expect("labeled target");
        let before = inter_intra_distances(o.clusters, &target, o.before, ClusterDistance::TrackletCentroid);
        let after = inter_intra_distances(o.clusters, &target, o.after, ClusterDistance::TrackletCentroid);
        print!(
            "round {}: {} clusters (GC {} MC {} DC {} MC+DC {}), purity {:.3}",
            o.round,
            o.clusters.len(),
            q.good,
            q.mixed,
            q.divided,
            q.mixed_divided,
            q.purity
        );
        if let (Ok((bi, bo)), Ok((ai, ao))) = (before, after) {
            print!(
                ", intra {:.2} -> {:.2}, inter {:.2} -> {:.2}",
                mean(&bi),
                mean(&ai),
                mean(&bo),
                mean(&ao)
            );
        }
        println!();
    })?;
    let (r1, map) = scores(&adapted, &target)?;
    let purity = classify_clusters(&cluster(&target, &adapt_cfg.clustering, &adapted)?, &target)?.purity;
    println!(
        "adapted ({}): R1 {r1:.3}  mAP {map:.3}  purity {purity:.3}",
        report.stop_reason
    );
    println!("checkpoint {}", report.checkpoint_id);
    Ok(())
}
