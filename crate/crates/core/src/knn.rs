//! Exact cross-camera neighbor ranking and the k-reciprocal rank distance.
//!
//! For every tracklet the index keeps the full list of tracklets seen by other
//! cameras, sorted by ascending squared Euclidean distance and then by
//! ascending tracklet id. Ranks are 1-based.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{squared_distance, tracklet_embedding, DomainManifest, FeatureVector};

#[derive(Clone, Copy, Debug, PartialEq)]
struct Neighbor {
    index: u32,
    sq_dist: f64,
}

fn neighbor_order(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.sq_dist.total_cmp(&b.sq_dist).then_with(|| a.index.cmp(&b.index))
}

#[derive(Clone, Debug)]
pub struct NeighborIndex {
    /// Ascending, so index order equals id order and the tie rule is a plain index compare.
    ids: Vec<String>,
    cameras: Vec<u32>,
    camera_names: Vec<String>,
    embeddings: Vec<FeatureVector>,
    lookup: HashMap<String, usize>,
    lists: Vec<Vec<Neighbor>>,
}

/// Builds the index from each tracklet's mean frame vector.
pub fn build_neighbor_index(m: &DomainManifest) -> Result<NeighborIndex> {
    m.ensure_valid()?;
    let embeddings = m.tracklets.iter().map(tracklet_embedding).collect::<Result<Vec<_>>>()?;
    let ids: Vec<String> = m.tracklets.iter().map(|t| t.tracklet_id.clone()).collect();
    let cameras: Vec<String> = m.tracklets.iter().map(|t| t.camera_id.clone()).collect();
    NeighborIndex::from_embeddings(&ids, &cameras, embeddings)
}

impl NeighborIndex {
    /// Builds the index over precomputed tracklet embeddings.
    ///
    /// Rows are computed in parallel; each row is independent, so the result is
    /// identical for any thread count.
    pub fn from_embeddings(
        ids: &[String],
        cameras: &[String],
        embeddings: Vec<FeatureVector>,
    ) -> Result<NeighborIndex> {
        if ids.len() != cameras.len() || ids.len() != embeddings.len() {
            return Err(Error::Structure(format!(
                "{} ids, {} cameras, {} embeddings",
                ids.len(),
                cameras.len(),
                embeddings.len()
            )));
        }
        let dim = embeddings.first().map(FeatureVector::dim).unwrap_or(0);
        if dim == 0 {
            return Err(Error::Structure("no embeddings to index".into()));
        }
        for (id, e) in ids.iter().zip(&embeddings) {
            if e.dim() != dim {
                return Err(Error::Structure(format!(
                    "embedding of {id:?} has dim {}, expected {dim}",
                    e.dim()
                )));
            }
            if !e.is_finite() {
                return Err(Error::Validation(format!("embedding of {id:?} has a non-finite value")));
            }
        }

        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));

        let camera_names: Vec<String> = cameras
            .iter()
            .cloned()
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        if camera_names.len() < 2 {
            return Err(Error::Domain(
                "cross-camera neighbors undefined: manifest has a single camera".into(),
            ));
        }
        let camera_code: BTreeMap<&str, u32> = camera_names
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i as u32))
            .collect();

        let sorted_ids: Vec<String> = order.iter().map(|&i| ids[i].clone()).collect();
        let mut lookup = HashMap::with_capacity(ids.len());
        for (i, id) in sorted_ids.iter().enumerate() {
            if lookup.insert(id.clone(), i).is_some() {
                return Err(Error::Structure(format!("duplicate tracklet id {id:?}")));
            }
        }
        let sorted_cams: Vec<u32> = order.iter().map(|&i| camera_code[cameras[i].as_str()]).collect();
        let mut slots: Vec<Option<FeatureVector>> = embeddings.into_iter().map(Some).collect();
        let sorted_emb: Vec<FeatureVector> = order.iter().map(|&i| slots[i].take().expect("permutation")).collect();

        let lists: Vec<Vec<Neighbor>> = (0..sorted_ids.len())
            .into_par_iter()
            .map(|q| {
                let query = sorted_emb[q].as_slice();
                let mut row: Vec<Neighbor> = sorted_emb
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| sorted_cams[j] != sorted_cams[q])
                    .map(|(j, e)| Neighbor {
                        index: j as u32,
                        sq_dist: squared_distance(query, e.as_slice()),
                    })
                    .collect();
                row.sort_unstable_by(neighbor_order);
                row
            })
            .collect();

        Ok(NeighborIndex {
            ids: sorted_ids,
            cameras: sorted_cams,
            camera_names,
            embeddings: sorted_emb,
            lookup,
            lists,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Tracklet ids in ascending order; positions match [`NeighborIndex::position`].
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn position(&self, tracklet_id: &str) -> Result<usize> {
        self.lookup
            .get(tracklet_id)
            .copied()
            .ok_or_else(|| Error::UnknownTracklet(tracklet_id.to_string()))
    }

    pub fn camera_of(&self, tracklet_id: &str) -> Result<&str> {
        let i = self.position(tracklet_id)?;
        Ok(&self.camera_names[self.cameras[i] as usize])
    }

    pub fn embedding(&self, tracklet_id: &str) -> Result<&FeatureVector> {
        Ok(&self.embeddings[self.position(tracklet_id)?])
    }

    /// Full cross-camera neighbor list of `tracklet_id`, nearest first.
    pub fn neighbors(&self, tracklet_id: &str) -> Result<Vec<&str>> {
        let i = self.position(tracklet_id)?;
        Ok(self.lists[i]
            .iter()
            .map(|n| self.ids[n.index as usize].as_str())
            .collect())
    }

    /// Neighbors of `tracklet_id` paired with their true Euclidean distance.
    pub fn neighbors_with_distance(&self, tracklet_id: &str) -> Result<Vec<(&str, f64)>> {
        let i = self.position(tracklet_id)?;
        Ok(self.lists[i]
            .iter()
            .map(|n| (self.ids[n.index as usize].as_str(), n.sq_dist.sqrt()))
            .collect())
    }

    /// First `min(k, list length)` entries of the neighbor list.
    pub fn top_k(&self, k: usize, tracklet_id: &str) -> Result<Vec<&str>> {
        if k == 0 {
            return Err(Error::Validation("top_k requires k >= 1".into()));
        }
        let i = self.position(tracklet_id)?;
        Ok(self.top_k_positions(k, i).map(|j| self.ids[j].as_str()).collect())
    }

    pub(crate) fn top_k_positions(&self, k: usize, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.lists[i].iter().take(k).map(|n| n.index as usize)
    }

    /// 1-based rank of position `s` inside the list of position `t`.
    pub(crate) fn rank_at(&self, s: usize, t: usize) -> Option<u32> {
        if self.cameras[s] == self.cameras[t] {
            return None;
        }
        let key = Neighbor {
            index: s as u32,
            sq_dist: squared_distance(self.embeddings[t].as_slice(), self.embeddings[s].as_slice()),
        };
        self.lists[t]
            .binary_search_by(|n| neighbor_order(n, &key))
            .ok()
            .map(|p| p as u32 + 1)
    }
}

/// The k-reciprocal distance `e(s, t)`: the smallest `k` with `s` in the
/// top-`k` cross-camera list of `t`, which is the rank of `s` in that list.
///
/// Asymmetric: `e(s, t)` and `e(t, s)` generally differ.
pub fn k_reciprocal_distance(idx: &NeighborIndex, s: &str, t: &str) -> Result<u32> {
    let si = idx.position(s)?;
    let ti = idx.position(t)?;
    idx.rank_at(si, ti).ok_or_else(|| {
        Error::Domain(format!(
            "{s:?} and {t:?} share a camera; k-reciprocal distance is cross-camera only"
        ))
    })
}

pub fn top_k<'a>(idx: &'a NeighborIndex, k: usize, s: &str) -> Result<Vec<&'a str>> {
    idx.top_k(k, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Tracklet;

    pub(crate) fn one_d(points: &[(&str, &str, f64)]) -> DomainManifest {
        DomainManifest::new(
            "1d",
            points
                .iter()
                .map(|&(id, cam, x)| Tracklet::new(id, cam, None, vec![FeatureVector::new(vec![x])]))
                .collect(),
        )
    }

    fn running_example() -> DomainManifest {
        one_d(&[
            ("a1", "A", 0.0),
            ("a2", "A", 1.0),
            ("b1", "B", 0.1),
            ("b2", "B", 0.9),
            ("b3", "B", 5.0),
        ])
    }

    #[test]
    fn running_example_lists() {
        let idx = build_neighbor_index(&running_example()).unwrap();
        assert_eq!(idx.neighbors("a1").unwrap(), ["b1", "b2", "b3"]);
        assert_eq!(idx.neighbors("b1").unwrap(), ["a1", "a2"]);
        assert_eq!(idx.neighbors("b3").unwrap(), ["a2", "a1"]);
        assert_eq!(idx.top_k(2, "a1").unwrap(), ["b1", "b2"]);
        assert_eq!(k_reciprocal_distance(&idx, "a1", "b3").unwrap(), 2);
    }

    #[test]
    fn two_tracklets() {
        let idx = build_neighbor_index(&one_d(&[("x", "A", 0.0), ("y", "B", 3.0)])).unwrap();
        assert_eq!(idx.top_k(1, "x").unwrap(), ["y"]);
        assert_eq!(idx.top_k(1, "y").unwrap(), ["x"]);
        assert_eq!(k_reciprocal_distance(&idx, "x", "y").unwrap(), 1);
        assert_eq!(k_reciprocal_distance(&idx, "y", "x").unwrap(), 1);
    }

    #[test]
    fn tie_broken_by_id() {
        let idx = build_neighbor_index(&one_d(&[("q", "A", 0.0), ("y", "B", 1.0), ("x", "B", -1.0)])).unwrap();
        assert_eq!(idx.neighbors("q").unwrap(), ["x", "y"]);
    }

    #[test]
    fn top_k_saturates() {
        let idx = build_neighbor_index(&running_example()).unwrap();
        assert_eq!(idx.top_k(10, "b1").unwrap(), ["a1", "a2"]);
        assert!(idx.top_k(0, "b1").is_err());
        assert!(matches!(idx.top_k(1, "zz"), Err(Error::UnknownTracklet(_))));
    }

    #[test]
    fn rank_five_example() {
        // t is s's nearest cross-camera neighbour; s is t's fifth.
        let m = one_d(&[
            ("s", "A", 0.0),
            ("t", "B", 10.0),
            ("p1", "A", 10.1),
            ("p2", "A", 10.2),
            ("p3", "A", 9.8),
            ("p4", "A", 9.7),
        ]);
        let idx = build_neighbor_index(&m).unwrap();
        assert_eq!(idx.top_k(1, "s").unwrap(), ["t"]);
        assert_eq!(k_reciprocal_distance(&idx, "s", "t").unwrap(), 5);
    }

    #[test]
    fn errors() {
        let single = one_d(&[("a", "A", 0.0), ("b", "A", 1.0)]);
        assert!(matches!(build_neighbor_index(&single), Err(Error::Domain(_))));
        let idx = build_neighbor_index(&running_example()).unwrap();
        assert!(matches!(k_reciprocal_distance(&idx, "a1", "a2"), Err(Error::Domain(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn manifest_strategy() -> impl Strategy<Value = DomainManifest> {
            (2usize..5, 1usize..5).prop_flat_map(|(cams, dim)| {
                prop::collection::vec((0..cams, prop::collection::vec(-5.0f64..5.0, dim)), 2..25).prop_filter_map(
                    "need two cameras",
                    move |rows| {
                        let tracklets: Vec<Tracklet> = rows
                            .into_iter()
                            .enumerate()
                            .map(|(i, (c, v))| {
                                Tracklet::new(format!("t{i:02}"), format!("c{c}"), None, vec![FeatureVector::new(v)])
                            })
                            .collect();
                        let m = DomainManifest::new("p", tracklets);
                        (m.cameras().len() >= 2).then_some(m)
                    },
                )
            })
        }

        proptest! {
            #[test]
            fn ranks_are_contiguous(m in manifest_strategy()) {
                let idx = build_neighbor_index(&m).unwrap();
                for t in &m.tracklets {
                    let list = idx.neighbors(&t.tracklet_id).unwrap();
                    let other = m.tracklets.iter().filter(|u| u.camera_id != t.camera_id).count();
                    prop_assert_eq!(list.len(), other);
                    let mut ranks: Vec<u32> = list
                        .iter()
                        .map(|s| k_reciprocal_distance(&idx, s, &t.tracklet_id).unwrap())
                        .collect();
                    ranks.sort_unstable();
                    prop_assert_eq!(ranks, (1..=other as u32).collect::<Vec<_>>());
                }
            }
        }
    }
}
