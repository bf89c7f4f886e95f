//! Merge labeled sources into one training domain: drop small sources and
//! single-camera identities, and namespace ids so sources cannot collide.
//!
//!     cargo run --example merge_sources

use ktcuda::{generate_synthetic_domain, merge_domains, DomainManifest, MergePolicy, SyntheticSpec, Tracklet};

fn source(name: &str, identities: usize, cameras: usize, seed: u64) -> ktcuda::Result<DomainManifest> {
    let mut spec = SyntheticSpec::new(name, identities, cameras, 8, seed);
    spec.tracklets_per_identity_per_camera = (0, 1);
    spec.frames_per_tracklet = (2, 6);
    generate_synthetic_domain(&spec)
}

fn main() -> ktcuda::Result<()> {
    let mut mall = source("mall", 250, 6, 1)?;
    // a handful of distractor tracklets that carry no usable identity
    for t in mall.tracklets.iter_mut().take(5) {
        t.identity = Some("-1".into());
    }
    let sources = vec![
        mall,
        source("campus", 320, 8, 2)?,
        source("station", 120, 3, 3)?,
        source("airport", 400, 4, 4)?,
    ];

    let mut policy = MergePolicy::default();
    policy.exclusion_list.insert("airport".into());
    let (merged, report) = merge_domains(&sources, &policy)?;
    print!("{}", report.to_table());

    let first: &Tracklet = &merged.tracklets[0];
    println!(
        "\nmerged domain {:?}: {} tracklets; first is {} ({} / {})",
        merged.name,
        merged.len(),
        first.tracklet_id,
        first.camera_id,
        first.identity.as_deref().unwrap_or("?")
    );
    Ok(())
}
