//! Seeded multi-camera synthetic domains.
//!
//! Identity centroids are drawn uniformly from `[-extent, extent]^dim` with a
//! minimum pairwise spacing. Every camera applies its own affine distortion
//! `x -> x + camera_shift * (A_c x + b_c)`, and every frame adds isotropic
//! Gaussian noise. Two domains generated with different seeds differ in both
//! their identities and their camera distortions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DomainManifest, FeatureVector, Tracklet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub name: String,
    pub identities: usize,
    pub cameras: usize,
    /// Inclusive `(min, max)`.
    pub frames_per_tracklet: (usize, usize),
    /// Inclusive `(min, max)`; a minimum of 0 lets identities skip cameras.
    pub tracklets_per_identity_per_camera: (usize, usize),
    /// Minimum distance between two identity centroids.
    pub identity_separation: f64,
    /// Half-width of the box centroids are drawn from.
    pub extent: f64,
    /// Strength of the per-camera affine distortion; 0 disables it.
    pub camera_shift: f64,
    pub noise_sigma: f64,
    pub dim: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// A spec with one tracklet per identity and camera, a box wide enough to
    /// place the centroids comfortably, and no distortion or noise.
    pub fn new(name: impl Into<String>, identities: usize, cameras: usize, dim: usize, seed: u64) -> Self {
        let separation = 1.0;
        SyntheticSpec {
            name: name.into(),
            identities,
            cameras,
            frames_per_tracklet: (4, 4),
            tracklets_per_identity_per_camera: (1, 1),
            identity_separation: separation,
            extent: default_extent(identities, dim, separation),
            camera_shift: 0.0,
            noise_sigma: 0.0,
            dim,
            seed,
        }
    }

    /// Sets the separation and rescales the box to match.
    pub fn with_separation(mut self, separation: f64) -> Self {
        self.identity_separation = separation;
        self.extent = default_extent(self.identities, self.dim, separation);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Generation(msg));
        if self.cameras < 2 {
            return bad(format!("need at least 2 cameras, got {}", self.cameras));
        }
        if self.identities == 0 || self.dim == 0 {
            return bad("identities and dim must be positive".into());
        }
        if !(self.identity_separation.is_finite() && self.identity_separation > 0.0) {
            return bad("identity_separation must be positive".into());
        }
        if !(self.extent.is_finite() && self.extent > 0.0) {
            return bad("extent must be positive".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative".into());
        }
        if !(self.camera_shift.is_finite() && self.camera_shift >= 0.0) {
            return bad("camera_shift must be non-negative".into());
        }
        let (fmin, fmax) = self.frames_per_tracklet;
        if fmin == 0 || fmin > fmax {
            return bad(format!("bad frames_per_tracklet range ({fmin}, {fmax})"));
        }
        let (tmin, tmax) = self.tracklets_per_identity_per_camera;
        if tmin > tmax || tmax == 0 {
            return bad(format!("bad tracklets_per_identity_per_camera range ({tmin}, {tmax})"));
        }
        Ok(())
    }
}

fn default_extent(identities: usize, dim: usize, separation: f64) -> f64 {
    separation * (identities.max(1) as f64).powf(1.0 / dim as f64)
}

/// Volume of the `dim`-ball of radius `r`.
fn ball_volume(dim: usize, r: f64) -> f64 {
    // V_d = pi^(d/2) / Gamma(d/2 + 1) r^d, via the two-step recurrence.
    let mut v = [1.0, 2.0];
    let mut vd = if dim == 0 { 1.0 } else { 2.0 };
    for d in 2..=dim {
        vd = 2.0 * std::f64::consts::PI / d as f64 * v[d % 2];
        v[d % 2] = vd;
    }
    vd * r.powi(dim as i32)
}

fn place_centroids<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let s = spec.identity_separation;
    // Balls of radius s/2 around each centroid are disjoint and lie inside the
    // box grown by s/2 on every side.
    let available = (2.0 * spec.extent + s).powi(spec.dim as i32);
    let needed = spec.identities as f64 * ball_volume(spec.dim, s / 2.0);
    if needed > available {
        return Err(Error::Generation(format!(
            "cannot place {} identities {s} apart in a {}-d box of half-width {}",
            spec.identities, spec.dim, spec.extent
        )));
    }

    let budget = 2_000 * spec.identities.max(10);
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(spec.identities);
    let mut attempts = 0;
    let s2 = s * s;
    while centroids.len() < spec.identities {
        attempts += 1;
        if attempts > budget {
            return Err(Error::Generation(format!(
                "placed only {} of {} identities at spacing {s} after {budget} attempts",
                centroids.len(),
                spec.identities
            )));
        }
        let c: Vec<f64> = (0..spec.dim)
            .map(|_| rng.random_range(-spec.extent..=spec.extent))
            .collect();
        if centroids.iter().all(|o| crate::model::squared_distance(o, &c) >= s2) {
            centroids.push(c);
        }
    }
    Ok(centroids)
}

struct CameraDistortion {
    matrix: Vec<f64>,
    offset: Vec<f64>,
}

impl CameraDistortion {
    fn sample<R: Rng>(dim: usize, separation: f64, rng: &mut R) -> Self {
        let m = Normal::new(0.0, (1.0 / dim as f64).sqrt()).expect("positive std");
        let b = Normal::new(0.0, separation).expect("positive std");
        CameraDistortion {
            matrix: (0..dim * dim).map(|_| m.sample(rng)).collect(),
            offset: (0..dim).map(|_| b.sample(rng)).collect(),
        }
    }

    fn apply(&self, x: &[f64], strength: f64) -> Vec<f64> {
        let dim = x.len();
        (0..dim)
            .map(|i| {
                let row = &self.matrix[i * dim..(i + 1) * dim];
                let ax: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
                x[i] + strength * (ax + self.offset[i])
            })
            .collect()
    }
}

/// Generates a labeled manifest. Identical specs give identical manifests.
pub fn generate_synthetic_domain(spec: &SyntheticSpec) -> Result<DomainManifest> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centroids = place_centroids(spec, &mut rng)?;
    let cameras: Vec<CameraDistortion> = (0..spec.cameras)
        .map(|_| CameraDistortion::sample(spec.dim, spec.identity_separation, &mut rng))
        .collect();
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid std");

    let id_width = digits(spec.identities);
    let cam_width = digits(spec.cameras);
    let mut tracklets = Vec::new();
    for (p, centroid) in centroids.iter().enumerate() {
        let identity = format!("p{p:0id_width$}");
        for (c, distortion) in cameras.iter().enumerate() {
            let base = distortion.apply(centroid, spec.camera_shift);
            let (tmin, tmax) = spec.tracklets_per_identity_per_camera;
            let count = rng.random_range(tmin..=tmax);
            for k in 0..count {
                let (fmin, fmax) = spec.frames_per_tracklet;
                let n_frames = rng.random_range(fmin..=fmax);
                let frames = (0..n_frames)
                    .map(|_| {
                        FeatureVector::new(
                            base.iter()
                                .map(|&v| {
                                    if spec.noise_sigma > 0.0 {
                                        v + noise.sample(&mut rng)
                                    } else {
                                        v
                                    }
                                })
                                .collect(),
                        )
                    })
                    .collect();
                tracklets.push(Tracklet::new(
                    format!("{identity}-c{c:0cam_width$}-{k}"),
                    format!("c{c:0cam_width$}"),
                    Some(identity.clone()),
                    frames,
                ));
            }
        }
    }
    Ok(DomainManifest::new(spec.name.clone(), tracklets))
}

fn digits(n: usize) -> usize {
    n.saturating_sub(1).max(1).to_string().len()
}
