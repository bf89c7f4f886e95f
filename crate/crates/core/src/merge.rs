//! Merging several labeled source domains into one training domain.
//!
//! Per source, in name order: excluded sources are skipped, distractor
//! tracklets are dropped, identities seen by a single camera are removed, and
//! sources left with too few identities are skipped. Surviving identities,
//! tracklets and cameras are namespaced as `<source>/<id>`.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DomainManifest, Tracklet};

/// Identity labels treated as distractors and removed before merging.
pub const DISTRACTOR_LABELS: [&str; 2] = ["-1", "distractor"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergePolicy {
    /// Sources need at least this many identities after filtering.
    pub min_identities: usize,
    pub require_cross_camera: bool,
    /// Sources left out entirely, e.g. because they overlap with another one.
    pub exclusion_list: BTreeSet<String>,
    pub namespace_ids: bool,
}

impl Default for MergePolicy {
    fn default() -> Self {
        MergePolicy {
            min_identities: 201,
            require_cross_camera: true,
            exclusion_list: BTreeSet::new(),
            namespace_ids: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceStatus {
    Included,
    Excluded,
    TooFewIdentities,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSummary {
    pub source: String,
    pub status: SourceStatus,
    /// Counts after filtering.
    pub identities: usize,
    pub images: usize,
    pub cameras: usize,
    pub tracklets: usize,
    pub dropped_distractor_tracklets: usize,
    pub dropped_single_camera_identities: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeReport {
    pub sources: Vec<SourceSummary>,
    pub total_identities: usize,
    pub total_images: usize,
    pub total_cameras: usize,
    pub total_tracklets: usize,
}

impl MergeReport {
    /// One JSON object per source, then a totals record.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.sources {
            out.push_str(&serde_json::to_string(s).expect("serializable"));
            out.push('\n');
        }
        let totals = serde_json::json!({
            "total": {
                "identities": self.total_identities,
                "images": self.total_images,
                "cameras": self.total_cameras,
                "tracklets": self.total_tracklets,
            }
        });
        out.push_str(&totals.to_string());
        out.push('\n');
        out
    }

    /// Fixed-width table: source, status, #IDs, #Images, #Cameras.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<24} {:<18} {:>8} {:>10} {:>9}\n",
            "source", "status", "#IDs", "#Images", "#Cameras"
        );
        for s in &self.sources {
            let status = serde_json::to_value(s.status).expect("serializable");
            out.push_str(&format!(
                "{:<24} {:<18} {:>8} {:>10} {:>9}\n",
                s.source,
                status.as_str().unwrap_or_default(),
                s.identities,
                s.images,
                s.cameras
            ));
        }
        out.push_str(&format!(
            "{:<24} {:<18} {:>8} {:>10} {:>9}\n",
            "total", "", self.total_identities, self.total_images, self.total_cameras
        ));
        out
    }
}

fn is_distractor(t: &Tracklet) -> bool {
    t.identity.as_deref().is_some_and(|id| DISTRACTOR_LABELS.contains(&id))
}

/// Keeps only tracklets whose identity is seen by two or more cameras.
/// Unlabeled tracklets are dropped.
pub fn filter_cross_camera(m: &DomainManifest) -> DomainManifest {
    let mut cams: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for t in &m.tracklets {
        if let Some(id) = t.identity.as_deref() {
            cams.entry(id).or_default().insert(t.camera_id.as_str());
        }
    }
    let keep: HashSet<&str> = cams.iter().filter(|(_, c)| c.len() >= 2).map(|(id, _)| *id).collect();
    DomainManifest::new(
        m.name.clone(),
        m.tracklets
            .iter()
            .filter(|t| t.identity.as_deref().is_some_and(|id| keep.contains(id)))
            .cloned()
            .collect(),
    )
}

fn identity_count(m: &DomainManifest) -> usize {
    m.tracklets
        .iter()
        .filter_map(|t| t.identity.as_deref())
        .collect::<HashSet<_>>()
        .len()
}

fn summarize(source: &str, status: SourceStatus, m: &DomainManifest) -> SourceSummary {
    SourceSummary {
        source: source.to_string(),
        status,
        identities: identity_count(m),
        images: m.frame_count(),
        cameras: m.cameras().len(),
        tracklets: m.len(),
        dropped_distractor_tracklets: 0,
        dropped_single_camera_identities: 0,
    }
}

pub fn merge_domains(sources: &[DomainManifest], policy: &MergePolicy) -> Result<(DomainManifest, MergeReport)> {
    if policy.min_identities == 0 {
        return Err(Error::Merge("min_identities must be at least 1".into()));
    }
    let mut ordered: Vec<&DomainManifest> = sources.iter().collect();
    ordered.sort_by(|a, b| a.name.cmp(&b.name));
    for pair in ordered.windows(2) {
        if pair[0].name == pair[1].name {
            return Err(Error::Merge(format!("duplicate source name {:?}", pair[0].name)));
        }
    }

    let mut merged = Vec::new();
    let mut summaries = Vec::new();
    for src in ordered {
        if policy.exclusion_list.contains(&src.name) {
            summaries.push(summarize(&src.name, SourceStatus::Excluded, src));
            continue;
        }
        src.ensure_valid()?;
        if let Some(t) = src.tracklets.iter().find(|t| t.identity.is_none()) {
            return Err(Error::Merge(format!(
                "source {:?} tracklet {:?} has no identity label",
                src.name, t.tracklet_id
            )));
        }

        let cleaned = DomainManifest::new(
            src.name.clone(),
            src.tracklets.iter().filter(|t| !is_distractor(t)).cloned().collect(),
        );
        let distractors = src.len() - cleaned.len();
        let without_distractors = identity_count(&cleaned);
        let filtered = if policy.require_cross_camera {
            filter_cross_camera(&cleaned)
        } else {
            cleaned
        };
        let identities = identity_count(&filtered);
        let status = if identities < policy.min_identities {
            SourceStatus::TooFewIdentities
        } else {
            SourceStatus::Included
        };
        let mut summary = summarize(&src.name, status, &filtered);
        summary.dropped_distractor_tracklets = distractors;
        summary.dropped_single_camera_identities = without_distractors - identities;
        summaries.push(summary);
        if status != SourceStatus::Included {
            continue;
        }

        for t in filtered.tracklets {
            merged.push(if policy.namespace_ids {
                let ns = |s: &str| format!("{}/{s}", src.name);
                Tracklet::new(
                    ns(&t.tracklet_id),
                    ns(&t.camera_id),
                    t.identity.as_deref().map(ns),
                    t.frames,
                )
            } else {
                t
            });
        }
    }

    if merged.is_empty() {
        return Err(Error::Merge("no source survived the merge policy".into()));
    }
    let included: Vec<&str> = summaries
        .iter()
        .filter(|s| s.status == SourceStatus::Included)
        .map(|s| s.source.as_str())
        .collect();
    let manifest = DomainManifest::new(included.join("+"), merged);
    manifest
        .ensure_valid()
        .map_err(|e| Error::Merge(format!("merged manifest is invalid: {e}")))?;

    let report = MergeReport {
        total_identities: identity_count(&manifest),
        total_images: manifest.frame_count(),
        total_cameras: manifest.cameras().len(),
        total_tracklets: manifest.len(),
        sources: summaries,
    };
    Ok((manifest, report))
}
