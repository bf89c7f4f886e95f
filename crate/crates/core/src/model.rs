//! Domain types: feature vectors, tracklets, manifests and cluster assignments.
//!
//! Everything here is immutable after construction. Identity labels travel with
//! the tracklets but only the evaluation and merge code reads them.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in feature or embedding space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        FeatureVector(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn squared_distance(&self, other: &FeatureVector) -> f64 {
        squared_distance(&self.0, &other.0)
    }

    pub fn distance(&self, other: &FeatureVector) -> f64 {
        self.squared_distance(other).sqrt()
    }

    /// Scales to unit L2 norm; the zero vector is returned unchanged.
    pub fn l2_normalized(&self) -> FeatureVector {
        let norm = self.0.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return self.clone();
        }
        FeatureVector(self.0.iter().map(|v| v / norm).collect())
    }
}

impl From<Vec<f64>> for FeatureVector {
    fn from(values: Vec<f64>) -> Self {
        FeatureVector(values)
    }
}

impl std::ops::Index<usize> for FeatureVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// A camera-tagged sequence of per-frame feature vectors belonging to one person.
#[derive(Clone, Debug, PartialEq)]
pub struct Tracklet {
    pub tracklet_id: String,
    pub camera_id: String,
    /// Ground truth; `None` for unlabeled target data.
    pub identity: Option<String>,
    pub frames: Vec<FeatureVector>,
}

impl Tracklet {
    pub fn new(
        tracklet_id: impl Into<String>,
        camera_id: impl Into<String>,
        identity: Option<String>,
        frames: Vec<FeatureVector>,
    ) -> Self {
        Tracklet {
            tracklet_id: tracklet_id.into(),
            camera_id: camera_id.into(),
            identity,
            frames,
        }
    }

    pub fn dim(&self) -> Option<usize> {
        self.frames.first().map(FeatureVector::dim)
    }
}

/// Element-wise mean of the tracklet's frame vectors.
///
/// Each coordinate is summed in sorted order with Neumaier compensation, so the
/// result is bit-identical under any permutation of the frames.
pub fn tracklet_embedding(t: &Tracklet) -> Result<FeatureVector> {
    mean_of(&t.frames).map_err(|e| match e {
        Error::Structure(msg) => Error::Structure(format!("tracklet {}: {msg}", t.tracklet_id)),
        Error::Validation(msg) => Error::Validation(format!("tracklet {}: {msg}", t.tracklet_id)),
        other => other,
    })
}

pub(crate) fn mean_of(frames: &[FeatureVector]) -> Result<FeatureVector> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Structure("empty frame list".into()))?;
    let dim = first.dim();
    if dim == 0 {
        return Err(Error::Structure("zero-dimensional frame".into()));
    }
    for (i, f) in frames.iter().enumerate() {
        if f.dim() != dim {
            return Err(Error::Structure(format!(
                "frame {i} has dim {} but frame 0 has dim {dim}",
                f.dim()
            )));
        }
        if !f.is_finite() {
            return Err(Error::Validation(format!("frame {i} has a non-finite value")));
        }
    }

    let n = frames.len() as f64;
    let mut column = Vec::with_capacity(frames.len());
    let mean = (0..dim)
        .map(|j| {
            column.clear();
            column.extend(frames.iter().map(|f| f.0[j]));
            column.sort_by(f64::total_cmp);
            neumaier_sum(&column) / n
        })
        .collect();
    Ok(FeatureVector(mean))
}

fn neumaier_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// A set of tracklets observed by one or more cameras.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainManifest {
    pub name: String,
    pub tracklets: Vec<Tracklet>,
}

impl DomainManifest {
    pub fn new(name: impl Into<String>, tracklets: Vec<Tracklet>) -> Self {
        DomainManifest {
            name: name.into(),
            tracklets,
        }
    }

    /// Builds a manifest and fails if any invariant is violated.
    pub fn checked(name: impl Into<String>, tracklets: Vec<Tracklet>) -> Result<Self> {
        let m = Self::new(name, tracklets);
        m.ensure_valid()?;
        Ok(m)
    }

    pub fn cameras(&self) -> BTreeSet<&str> {
        self.tracklets.iter().map(|t| t.camera_id.as_str()).collect()
    }

    pub fn dim(&self) -> Option<usize> {
        self.tracklets.iter().find_map(Tracklet::dim)
    }

    pub fn len(&self) -> usize {
        self.tracklets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracklets.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.tracklets.iter().all(|t| t.identity.is_some())
    }

    pub fn get(&self, tracklet_id: &str) -> Option<&Tracklet> {
        self.tracklets.iter().find(|t| t.tracklet_id == tracklet_id)
    }

    pub fn frame_count(&self) -> usize {
        self.tracklets.iter().map(|t| t.frames.len()).sum()
    }

    pub fn validate(&self) -> ValidationReport {
        validate_manifest(self)
    }

    /// Converts the first violation (if any) into an error.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        match report.violations.first() {
            None => Ok(()),
            Some(v @ Violation::NonFinite { .. }) => Err(Error::Validation(format!(
                "manifest {}: {v} ({} violation(s) total)",
                self.name,
                report.violations.len()
            ))),
            Some(v) => Err(Error::Structure(format!(
                "manifest {}: {v} ({} violation(s) total)",
                self.name,
                report.violations.len()
            ))),
        }
    }

    /// Stable copy with tracklets ordered by ascending id.
    pub fn sorted_by_id(&self) -> DomainManifest {
        let mut tracklets = self.tracklets.clone();
        tracklets.sort_by(|a, b| a.tracklet_id.cmp(&b.tracklet_id));
        DomainManifest::new(self.name.clone(), tracklets)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    NoTracklets,
    DuplicateId {
        tracklet_id: String,
    },
    EmptyFrames {
        tracklet_id: String,
    },
    ZeroDim {
        tracklet_id: String,
    },
    DimMismatch {
        tracklet_id: String,
        frame: usize,
        expected: usize,
        found: usize,
    },
    NonFinite {
        tracklet_id: String,
        frame: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoTracklets => write!(f, "manifest has no tracklets"),
            Violation::DuplicateId { tracklet_id } => {
                write!(f, "duplicate tracklet id {tracklet_id:?}")
            }
            Violation::EmptyFrames { tracklet_id } => {
                write!(f, "tracklet {tracklet_id:?} has no frames")
            }
            Violation::ZeroDim { tracklet_id } => {
                write!(f, "tracklet {tracklet_id:?} has zero-dimensional frames")
            }
            Violation::DimMismatch {
                tracklet_id,
                frame,
                expected,
                found,
            } => write!(
                f,
                "tracklet {tracklet_id:?} frame {frame} has dim {found}, expected {expected}"
            ),
            Violation::NonFinite { tracklet_id, frame } => {
                write!(f, "tracklet {tracklet_id:?} frame {frame} has a non-finite value")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lists every invariant violation in `m`; an empty report means the manifest is valid.
pub fn validate_manifest(m: &DomainManifest) -> ValidationReport {
    let mut violations = Vec::new();
    if m.tracklets.is_empty() {
        violations.push(Violation::NoTracklets);
    }
    let expected = m.dim();
    let mut seen = HashSet::new();
    for t in &m.tracklets {
        if !seen.insert(t.tracklet_id.as_str()) {
            violations.push(Violation::DuplicateId {
                tracklet_id: t.tracklet_id.clone(),
            });
        }
        if t.frames.is_empty() {
            violations.push(Violation::EmptyFrames {
                tracklet_id: t.tracklet_id.clone(),
            });
        }
        for (i, frame) in t.frames.iter().enumerate() {
            if frame.dim() == 0 {
                violations.push(Violation::ZeroDim {
                    tracklet_id: t.tracklet_id.clone(),
                });
            } else if let Some(expected) = expected.filter(|&d| d != frame.dim()) {
                violations.push(Violation::DimMismatch {
                    tracklet_id: t.tracklet_id.clone(),
                    frame: i,
                    expected,
                    found: frame.dim(),
                });
            }
            if !frame.is_finite() {
                violations.push(Violation::NonFinite {
                    tracklet_id: t.tracklet_id.clone(),
                    frame: i,
                });
            }
        }
    }
    ValidationReport { violations }
}

/// One valid cluster: a set of tracklet ids sharing a pseudo-label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub cluster_id: usize,
    /// Sorted ascending.
    pub member_tracklet_ids: Vec<String>,
}

impl ClusterAssignment {
    pub fn len(&self) -> usize {
        self.member_tracklet_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_tracklet_ids.is_empty()
    }

    pub fn contains(&self, tracklet_id: &str) -> bool {
        self.member_tracklet_ids
            .binary_search_by(|m| m.as_str().cmp(tracklet_id))
            .is_ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec())
    }

    fn tracklet(frames: &[&[f64]]) -> Tracklet {
        Tracklet::new("t", "c", None, frames.iter().map(|f| fv(f)).collect())
    }

    #[test]
    fn embedding_single_frame() {
        assert_eq!(tracklet_embedding(&tracklet(&[&[1.0, 3.0]])).unwrap(), fv(&[1.0, 3.0]));
    }

    #[test]
    fn embedding_symmetric_mean() {
        let t = tracklet(&[&[0.0, 0.0], &[2.0, 2.0]]);
        assert_eq!(tracklet_embedding(&t).unwrap(), fv(&[1.0, 1.0]));
    }

    #[test]
    fn embedding_three_frames() {
        let t = tracklet(&[&[1.0, 0.0], &[0.0, 1.0], &[2.0, 5.0]]);
        assert_eq!(tracklet_embedding(&t).unwrap(), fv(&[1.0, 2.0]));
    }

    #[test]
    fn embedding_errors() {
        let empty = Tracklet::new("e", "c", None, vec![]);
        assert!(matches!(tracklet_embedding(&empty), Err(Error::Structure(_))));
        let nan = tracklet(&[&[1.0, f64::NAN]]);
        assert!(matches!(tracklet_embedding(&nan), Err(Error::Validation(_))));
        let mixed = tracklet(&[&[1.0, 2.0], &[1.0]]);
        assert!(matches!(tracklet_embedding(&mixed), Err(Error::Structure(_))));
    }

    fn manifest(tracklets: Vec<Tracklet>) -> DomainManifest {
        DomainManifest::new("m", tracklets)
    }

    fn simple(id: &str, cam: &str, v: f64) -> Tracklet {
        Tracklet::new(id, cam, None, vec![fv(&[v, v])])
    }

    #[test]
    fn validate_well_formed() {
        let m = manifest(vec![
            simple("t1", "a", 0.0),
            simple("t2", "b", 1.0),
            simple("t3", "a", 2.0),
        ]);
        assert!(validate_manifest(&m).is_empty());
        assert!(m.ensure_valid().is_ok());
    }

    #[test]
    fn validate_duplicate_id() {
        let m = manifest(vec![simple("t1", "a", 0.0), simple("t1", "b", 1.0)]);
        let report = validate_manifest(&m);
        assert_eq!(
            report.violations,
            vec![Violation::DuplicateId {
                tracklet_id: "t1".into()
            }]
        );
    }

    #[test]
    fn validate_non_finite() {
        let m = manifest(vec![
            simple("t1", "a", 0.0),
            Tracklet::new("t2", "b", None, vec![fv(&[f64::NAN, 1.0])]),
        ]);
        let report = validate_manifest(&m);
        assert_eq!(
            report.violations,
            vec![Violation::NonFinite {
                tracklet_id: "t2".into(),
                frame: 0
            }]
        );
        assert!(matches!(m.ensure_valid(), Err(Error::Validation(_))));
    }

    #[test]
    fn validate_dim_mismatch_and_empty() {
        let m = manifest(vec![
            simple("t1", "a", 0.0),
            Tracklet::new("t2", "b", None, vec![fv(&[1.0])]),
            Tracklet::new("t3", "b", None, vec![]),
        ]);
        let report = validate_manifest(&m);
        assert_eq!(report.violations.len(), 2);
        assert!(matches!(m.ensure_valid(), Err(Error::Structure(_))));
        assert_eq!(
            validate_manifest(&manifest(vec![])).violations,
            vec![Violation::NoTracklets]
        );
    }

    #[test]
    fn l2_normalization() {
        assert_eq!(fv(&[3.0, 4.0]).l2_normalized(), fv(&[0.6, 0.8]));
        assert_eq!(fv(&[0.0, 0.0]).l2_normalized(), fv(&[0.0, 0.0]));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        // Kahan summation in the given order, independent of the sorted Neumaier path.
        fn kahan_mean(values: &[f64]) -> f64 {
            let mut sum = 0.0;
            let mut c = 0.0;
            for &v in values {
                let y = v - c;
                let t = sum + y;
                c = (t - sum) - y;
                sum = t;
            }
            sum / values.len() as f64
        }

        proptest! {
            #[test]
            fn mean_is_permutation_invariant_and_accurate(
                frames in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 1..20),
                seed in any::<u64>(),
            ) {
                use rand::seq::SliceRandom;
                use rand::SeedableRng;
                let t = Tracklet::new("t", "c", None, frames.iter().cloned().map(FeatureVector::new).collect());
                let mean = tracklet_embedding(&t).unwrap();

                let mut shuffled = t.clone();
                shuffled.frames.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
                prop_assert_eq!(&tracklet_embedding(&shuffled).unwrap(), &mean);

                for j in 0..3 {
                    let col: Vec<f64> = frames.iter().map(|f| f[j]).collect();
                    let oracle = kahan_mean(&col);
                    prop_assert!((mean[j] - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
                }
            }
        }
    }
}
