//! Generate a synthetic domain, store its frames in a binary sidecar, and read
//! it back.
//!
//!     cargo run --example synth_domain [out_dir]

use std::path::PathBuf;

use ktcuda::io::{read_manifest, write_manifest_with_sidecar};
use ktcuda::{generate_synthetic_domain, SyntheticSpec};

fn main() -> ktcuda::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir);
    let mut spec = SyntheticSpec::new("synthetic", 40, 3, 12, 42).with_separation(2.0);
    spec.frames_per_tracklet = (3, 8);
    spec.tracklets_per_identity_per_camera = (1, 2);
    spec.camera_shift = 0.3;
    spec.noise_sigma = 0.25;
    println!("{}", serde_json::to_string_pretty(&spec).expect("serializable"));

    let m = generate_synthetic_domain(&spec)?;
    let manifest = dir.join("synthetic.jsonl");
    let sidecar = dir.join("synthetic.ktf");
    write_manifest_with_sidecar(&manifest, &sidecar, &m)?;

    let back = read_manifest(&manifest)?;
    assert_eq!(back.len(), m.len());
    println!(
        "{} tracklets / {} frames written to {} (+ {})",
        back.len(),
        back.frame_count(),
        manifest.display(),
        sidecar.display()
    );
    // frames pass through f32 in the sidecar
    let err = m
        .tracklets
        .iter()
        .zip(&back.tracklets)
        .flat_map(|(a, b)| a.frames.iter().zip(&b.frames))
        .map(|(x, y)| x.distance(y))
        .fold(0.0, f64::max);
    println!("largest frame round-trip error: {err:.2e}");
    Ok(())
}
