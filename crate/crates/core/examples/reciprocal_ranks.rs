//! Cross-camera neighbor lists and the asymmetric rank weight on a 1-D toy.
//!
//!     cargo run --example reciprocal_ranks

use ktcuda::{build_neighbor_index, k_reciprocal_distance, DomainManifest, FeatureVector, Tracklet};

fn main() -> ktcuda::Result<()> {
    let one = |id: &str, cam: &str, x: f64| Tracklet::new(id, cam, None, vec![FeatureVector::new(vec![x])]);
    let m = DomainManifest::checked(
        "toy",
        vec![
            one("a1", "A", 0.0),
            one("a2", "A", 1.0),
            one("b1", "B", 0.1),
            one("b2", "B", 0.9),
            one("b3", "B", 5.0),
        ],
    )?;
    let idx = build_neighbor_index(&m)?;

    for id in idx.ids() {
        let list: Vec<String> = idx
            .neighbors_with_distance(id)?
            .into_iter()
            .map(|(n, d)| format!("{n}:{d:.2}"))
            .collect();
        println!("{id} ({}): {}", idx.camera_of(id)?, list.join(" "));
    }

    // b3's nearest neighbor is a2, but b3 is only third in a2's list.
    println!();
    for (s, t) in [("a1", "b1"), ("b3", "a2"), ("a2", "b3")] {
        println!("e({s}, {t}) = {}", k_reciprocal_distance(&idx, s, t)?);
    }
    Ok(())
}
