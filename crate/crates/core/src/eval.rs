//! Retrieval metrics (CMC, mAP), cluster taxonomy and cluster-pair distances.
//!
//! Retrieval follows the usual re-identification protocol: for each query the
//! gallery drops the query itself and every entry sharing both its camera and
//! its identity. Gallery entries with the query's identity are relevant.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::embed::{embed_frame, embed_manifest, Embedder};
use crate::error::{Error, Result};
use crate::graph::ClusterSet;
use crate::model::{mean_of, DomainManifest, FeatureVector, Tracklet};

#[derive(Clone, Debug, PartialEq)]
pub struct RankedItem {
    pub tracklet_id: String,
    pub distance: f64,
    pub relevant: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryRanking {
    pub query_id: String,
    /// Ascending distance, ties broken by ascending tracklet id.
    pub gallery: Vec<RankedItem>,
}

impl QueryRanking {
    /// Builds a ranking from unsorted `(id, distance, relevant)` triples.
    pub fn from_scores(query_id: impl Into<String>, items: Vec<(String, f64, bool)>) -> Self {
        let mut gallery: Vec<RankedItem> = items
            .into_iter()
            .map(|(tracklet_id, distance, relevant)| RankedItem {
                tracklet_id,
                distance,
                relevant,
            })
            .collect();
        gallery.sort_by(|a, b| {
            a.distance
                .total_cmp(&b.distance)
                .then_with(|| a.tracklet_id.cmp(&b.tracklet_id))
        });
        QueryRanking {
            query_id: query_id.into(),
            gallery,
        }
    }

    /// 1-based positions of the relevant items.
    pub fn hit_ranks(&self) -> Vec<usize> {
        self.gallery
            .iter()
            .enumerate()
            .filter(|(_, g)| g.relevant)
            .map(|(i, _)| i + 1)
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RankingResult {
    pub queries: Vec<QueryRanking>,
}

/// One retrievable tracklet: its id, camera, label and embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalItem {
    pub tracklet_id: String,
    pub camera_id: String,
    pub identity: String,
    pub embedding: FeatureVector,
}

fn retrieval_items<E: Embedder + ?Sized>(e: &E, m: &DomainManifest, normalize: bool) -> Result<Vec<RetrievalItem>> {
    let embeddings = embed_manifest(e, m)?;
    m.tracklets
        .iter()
        .zip(embeddings)
        .map(|(t, emb)| {
            Ok(RetrievalItem {
                tracklet_id: t.tracklet_id.clone(),
                camera_id: t.camera_id.clone(),
                identity: label_of(t)?.to_string(),
                embedding: if normalize { emb.l2_normalized() } else { emb },
            })
        })
        .collect()
}

fn label_of(t: &Tracklet) -> Result<&str> {
    t.identity
        .as_deref()
        .ok_or_else(|| Error::Evaluation(format!("tracklet {:?} has no identity label", t.tracklet_id)))
}

/// Ranks `gallery` for every query under the standard exclusion rule.
pub fn rank(queries: &[RetrievalItem], gallery: &[RetrievalItem]) -> RankingResult {
    use rayon::prelude::*;
    let queries = queries
        .par_iter()
        .map(|q| {
            let items = gallery
                .iter()
                .filter(|g| g.tracklet_id != q.tracklet_id)
                .filter(|g| !(g.camera_id == q.camera_id && g.identity == q.identity))
                .map(|g| {
                    (
                        g.tracklet_id.clone(),
                        q.embedding.distance(&g.embedding),
                        g.identity == q.identity,
                    )
                })
                .collect();
            QueryRanking::from_scores(q.tracklet_id.clone(), items)
        })
        .collect();
    RankingResult { queries }
}

/// Every tracklet of `m` queries all the others.
pub fn rank_manifest<E: Embedder + ?Sized>(e: &E, m: &DomainManifest, normalize: bool) -> Result<RankingResult> {
    let items = retrieval_items(e, m, normalize)?;
    Ok(rank(&items, &items))
}

/// Tracklets of `queries` search the tracklets of `gallery`.
pub fn rank_query_gallery<E: Embedder + ?Sized>(
    e: &E,
    queries: &DomainManifest,
    gallery: &DomainManifest,
    normalize: bool,
) -> Result<RankingResult> {
    Ok(rank(
        &retrieval_items(e, queries, normalize)?,
        &retrieval_items(e, gallery, normalize)?,
    ))
}

impl RankingResult {
    /// Drops queries that have nothing relevant to find.
    pub fn without_unmatched_queries(mut self) -> Self {
        self.queries.retain(|q| q.gallery.iter().any(|g| g.relevant));
        self
    }

    fn first_hits(&self) -> Result<Vec<usize>> {
        if self.queries.is_empty() {
            return Err(Error::Evaluation("no queries".into()));
        }
        self.queries
            .iter()
            .map(|q| {
                q.gallery
                    .iter()
                    .position(|g| g.relevant)
                    .map(|p| p + 1)
                    .ok_or_else(|| Error::NoRelevant {
                        query: q.query_id.clone(),
                    })
            })
            .collect()
    }
}

/// Fraction of queries whose first relevant item is within each requested rank.
pub fn cmc(r: &RankingResult, ranks: &[usize]) -> Result<Vec<f64>> {
    let hits = r.first_hits()?;
    let n = hits.len() as f64;
    Ok(ranks
        .iter()
        .map(|&k| hits.iter().filter(|&&h| h <= k).count() as f64 / n)
        .collect())
}

/// Mean over queries of the average precision at each relevant item.
pub fn mean_average_precision(r: &RankingResult) -> Result<f64> {
    r.first_hits()?;
    let total: f64 = r
        .queries
        .iter()
        .map(|q| {
            let hits = q.hit_ranks();
            let sum: f64 = hits
                .iter()
                .enumerate()
                .map(|(i, &rank)| (i + 1) as f64 / rank as f64)
                .sum();
            sum / hits.len() as f64
        })
        .sum();
    Ok(total / r.queries.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClusterLabel {
    /// One identity, found in no other cluster.
    #[serde(rename = "GC")]
    Good,
    /// Several identities, none shared with another cluster.
    #[serde(rename = "MC")]
    Mixed,
    /// One identity that also appears in another cluster.
    #[serde(rename = "DC")]
    Divided,
    #[serde(rename = "MC+DC")]
    MixedDivided,
}

impl std::fmt::Display for ClusterLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClusterLabel::Good => "GC",
            ClusterLabel::Mixed => "MC",
            ClusterLabel::Divided => "DC",
            ClusterLabel::MixedDivided => "MC+DC",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterVerdict {
    pub cluster_id: usize,
    pub label: ClusterLabel,
    pub majority_identity: String,
    pub purity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterQuality {
    pub clusters: Vec<ClusterVerdict>,
    pub good: usize,
    pub mixed: usize,
    pub divided: usize,
    pub mixed_divided: usize,
    /// Mean over clusters of the majority-identity fraction; 0 for no clusters.
    pub purity: f64,
}

/// Identity counts of one cluster, plus its majority identity (ties to the smaller string).
fn identity_histogram<'a>(
    members: &[String],
    truth: &HashMap<&str, &'a Tracklet>,
) -> Result<(BTreeMap<&'a str, usize>, &'a str)> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for m in members {
        let t = truth
            .get(m.as_str())
            .ok_or_else(|| Error::Evaluation(format!("cluster member {m:?} not in the labeled manifest")))?;
        *counts.entry(label_of(t)?).or_default() += 1;
    }
    let majority = counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(id, _)| *id)
        .ok_or_else(|| Error::Evaluation("empty cluster".into()))?;
    Ok((counts, majority))
}

pub fn classify_clusters(c: &ClusterSet, truth: &DomainManifest) -> Result<ClusterQuality> {
    let by_id: HashMap<&str, &Tracklet> = truth.tracklets.iter().map(|t| (t.tracklet_id.as_str(), t)).collect();
    let histograms = c
        .clusters
        .iter()
        .map(|cl| identity_histogram(&cl.member_tracklet_ids, &by_id))
        .collect::<Result<Vec<_>>>()?;

    let mut clusters_per_identity: HashMap<&str, usize> = HashMap::new();
    for (counts, _) in &histograms {
        for id in counts.keys() {
            *clusters_per_identity.entry(id).or_default() += 1;
        }
    }

    let mut q = ClusterQuality {
        clusters: Vec::with_capacity(c.len()),
        good: 0,
        mixed: 0,
        divided: 0,
        mixed_divided: 0,
        purity: 0.0,
    };
    for (cl, (counts, majority)) in c.clusters.iter().zip(&histograms) {
        let shared = counts.keys().any(|id| clusters_per_identity[id] > 1);
        let label = match (counts.len() > 1, shared) {
            (false, false) => ClusterLabel::Good,
            (true, false) => ClusterLabel::Mixed,
            (false, true) => ClusterLabel::Divided,
            (true, true) => ClusterLabel::MixedDivided,
        };
        match label {
            ClusterLabel::Good => q.good += 1,
            ClusterLabel::Mixed => q.mixed += 1,
            ClusterLabel::Divided => q.divided += 1,
            ClusterLabel::MixedDivided => q.mixed_divided += 1,
        }
        let purity = counts[majority] as f64 / cl.len() as f64;
        q.purity += purity;
        q.clusters.push(ClusterVerdict {
            cluster_id: cl.cluster_id,
            label,
            majority_identity: majority.to_string(),
            purity,
        });
    }
    if !c.is_empty() {
        q.purity /= c.len() as f64;
    }
    Ok(q)
}

/// How the distance between two clusters is measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterDistance {
    /// Between means of the member tracklet embeddings.
    #[default]
    TrackletCentroid,
    /// Between means of all embedded member frames.
    FrameCentroid,
    /// Smallest distance between member tracklet embeddings.
    MinimumPairwise,
}

/// Distances between every pair of clusters, split by whether the two
/// clusters share their majority identity (`intra`) or not (`inter`).
pub fn inter_intra_distances<E: Embedder + ?Sized>(
    c: &ClusterSet,
    truth: &DomainManifest,
    e: &E,
    mode: ClusterDistance,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if c.len() < 2 {
        return Err(Error::Evaluation(format!(
            "need at least two clusters for pair distances, got {}",
            c.len()
        )));
    }
    let by_id: HashMap<&str, &Tracklet> = truth.tracklets.iter().map(|t| (t.tracklet_id.as_str(), t)).collect();
    let mut majorities = Vec::with_capacity(c.len());
    let mut points: Vec<Vec<FeatureVector>> = Vec::with_capacity(c.len());
    for cl in &c.clusters {
        let (_, majority) = identity_histogram(&cl.member_tracklet_ids, &by_id)?;
        majorities.push(majority);
        let members: Vec<&Tracklet> = cl.member_tracklet_ids.iter().map(|m| by_id[m.as_str()]).collect();
        let tracklet_means = members
            .iter()
            .map(|t| {
                let frames = t.frames.iter().map(|f| embed_frame(e, f)).collect::<Result<Vec<_>>>()?;
                Ok((mean_of(&frames)?, frames))
            })
            .collect::<Result<Vec<_>>>()?;
        points.push(match mode {
            ClusterDistance::TrackletCentroid => {
                vec![mean_of(
                    &tracklet_means.into_iter().map(|(m, _)| m).collect::<Vec<_>>(),
                )?]
            }
            ClusterDistance::FrameCentroid => {
                vec![mean_of(
                    &tracklet_means.into_iter().flat_map(|(_, f)| f).collect::<Vec<_>>(),
                )?]
            }
            ClusterDistance::MinimumPairwise => tracklet_means.into_iter().map(|(m, _)| m).collect(),
        });
    }

    let mut intra = Vec::new();
    let mut inter = Vec::new();
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let d = points[i]
                .iter()
                .flat_map(|a| points[j].iter().map(move |b| a.distance(b)))
                .fold(f64::INFINITY, f64::min);
            if majorities[i] == majorities[j] {
                intra.push(d);
            } else {
                inter.push(d);
            }
        }
    }
    Ok((intra, inter))
}
