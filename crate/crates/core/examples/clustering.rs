//! Cluster a synthetic four-camera domain and grade the clusters against the
//! ground truth, for a few values of `K`.
//!
//!     cargo run --release --example clustering

use ktcuda::graph::cluster_traced;
use ktcuda::{classify_clusters, generate_synthetic_domain, ClusterParams, IdentityEmbedder, SyntheticSpec};

fn main() -> ktcuda::Result<()> {
    let mut spec = SyntheticSpec::new("street", 30, 4, 8, 7);
    spec.camera_shift = 0.2;
    spec.noise_sigma = 0.2;
    spec.tracklets_per_identity_per_camera = (0, 2);
    let m = generate_synthetic_domain(&spec)?;
    let raw = IdentityEmbedder::new(spec.dim);
    println!(
        "{} tracklets, {} identities, {} cameras\n",
        m.len(),
        spec.identities,
        spec.cameras
    );

    println!("K  edges  kept  clusters  clustered  GC  MC  DC  MC+DC  purity");
    for k in 1..=4 {
        let mut params = ClusterParams::for_cameras(spec.cameras);
        params.k = k;
        params.k1 = k as usize;
        let trace = cluster_traced(&m, &params, &raw)?;
        let q = classify_clusters(&trace.clusters, &m)?;
        println!(
            "{k}  {:>5}  {:>4}  {:>8}  {:>9}  {:>2}  {:>2}  {:>2}  {:>5}  {:.3}",
            trace.graph.edges().len(),
            trace.thresholded.edges().len(),
            trace.clusters.len(),
            trace.clusters.clustered_count(),
            q.good,
            q.mixed,
            q.divided,
            q.mixed_divided,
            q.purity
        );
    }
    Ok(())
}
