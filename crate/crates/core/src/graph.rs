//! The rank-weighted directed tracklet graph and its cut into clusters.
//!
//! Each vertex gets `k1` out-edges to its nearest cross-camera neighbors. The
//! edge `s -> t` carries `e(s, t)`, the rank of `s` in `t`'s list. Edges heavier
//! than `K` are removed, and connected components with more than `T` vertices
//! become clusters.

use petgraph::algo::kosaraju_scc;
use petgraph::graph::DiGraph;
use petgraph::unionfind::UnionFind;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{embed_manifest, Embedder};
use crate::error::{Error, Result};
use crate::knn::NeighborIndex;
use crate::model::{ClusterAssignment, DomainManifest};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub weight: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReciprocalGraph {
    vertices: Vec<String>,
    edges: Vec<Edge>,
}

/// How components are read off the thresholded graph.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    /// Edge direction ignored.
    #[default]
    Weak,
    /// Mutual reachability along directed edges.
    Strong,
}

impl ReciprocalGraph {
    pub fn new(vertices: Vec<String>, edges: Vec<Edge>) -> Result<Self> {
        for e in &edges {
            if e.from >= vertices.len() || e.to >= vertices.len() {
                return Err(Error::Structure(format!("edge {e:?} out of range")));
            }
            if e.weight == 0 {
                return Err(Error::Structure(format!("edge {e:?} has weight 0")));
            }
        }
        Ok(ReciprocalGraph { vertices, edges })
    }

    pub fn vertices(&self) -> &[String] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Edges as `(from id, to id, weight)`.
    pub fn labeled_edges(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.edges
            .iter()
            .map(|e| (self.vertices[e.from].as_str(), self.vertices[e.to].as_str(), e.weight))
    }

    pub fn max_weight(&self) -> Option<u32> {
        self.edges.iter().map(|e| e.weight).max()
    }
}

/// One out-edge from every vertex to each of its `k1` nearest cross-camera
/// neighbors, weighted by the reverse rank.
pub fn build_graph(idx: &NeighborIndex, k1: usize) -> Result<ReciprocalGraph> {
    if k1 == 0 {
        return Err(Error::Validation("k1 must be at least 1".into()));
    }
    let per_vertex: Vec<Vec<Edge>> = (0..idx.len())
        .into_par_iter()
        .map(|s| {
            idx.top_k_positions(k1, s)
                .map(|t| Edge {
                    from: s,
                    to: t,
                    weight: idx.rank_at(s, t).expect("cross-camera pair is ranked"),
                })
                .collect()
        })
        .collect();
    Ok(ReciprocalGraph {
        vertices: idx.ids().to_vec(),
        edges: per_vertex.into_iter().flatten().collect(),
    })
}

/// Keeps exactly the edges with weight `<= k`. Vertices are untouched.
pub fn threshold_graph(g: &ReciprocalGraph, k: u32) -> Result<ReciprocalGraph> {
    if k < 1 {
        return Err(Error::Validation(
            "threshold K must be at least 1; all edge weights are >= 1".into(),
        ));
    }
    Ok(ReciprocalGraph {
        vertices: g.vertices.clone(),
        edges: g.edges.iter().copied().filter(|e| e.weight <= k).collect(),
    })
}

/// Weakly connected components, each sorted by id, ordered by smallest member.
pub fn connected_subgraphs(g: &ReciprocalGraph) -> Vec<Vec<String>> {
    components(g, Connectivity::Weak)
}

pub fn components(g: &ReciprocalGraph, connectivity: Connectivity) -> Vec<Vec<String>> {
    let labels = match connectivity {
        Connectivity::Weak => weak_labels(g),
        Connectivity::Strong => strong_labels(g),
    };
    group_by_label(&g.vertices, &labels)
}

fn weak_labels(g: &ReciprocalGraph) -> Vec<usize> {
    let mut sets = UnionFind::new(g.vertices.len());
    for e in &g.edges {
        sets.union(e.from, e.to);
    }
    sets.into_labeling()
}

fn strong_labels(g: &ReciprocalGraph) -> Vec<usize> {
    let mut graph = DiGraph::<(), ()>::with_capacity(g.vertices.len(), g.edges.len());
    let nodes: Vec<_> = g.vertices.iter().map(|_| graph.add_node(())).collect();
    for e in &g.edges {
        graph.add_edge(nodes[e.from], nodes[e.to], ());
    }
    let mut label = vec![0; g.vertices.len()];
    for (i, scc) in kosaraju_scc(&graph).into_iter().enumerate() {
        for v in scc {
            label[v.index()] = i;
        }
    }
    label
}

fn group_by_label(vertices: &[String], labels: &[usize]) -> Vec<Vec<String>> {
    let mut groups: std::collections::HashMap<usize, Vec<usize>> = Default::default();
    for (v, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(v);
    }
    let mut groups: Vec<Vec<String>> = groups
        .into_values()
        .map(|members| {
            let mut ids: Vec<String> = members.into_iter().map(|v| vertices[v].clone()).collect();
            ids.sort();
            ids
        })
        .collect();
    groups.sort_by(|a, b| a[0].cmp(&b[0]));
    groups
}

/// Valid clusters plus the vertices that ended up in no valid cluster.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClusterSet {
    pub clusters: Vec<ClusterAssignment>,
    /// Sorted ascending.
    pub unclustered: Vec<String>,
}

impl ClusterSet {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn clustered_count(&self) -> usize {
        self.clusters.iter().map(ClusterAssignment::len).sum()
    }

    /// Map from tracklet id to cluster id for clustered tracklets.
    pub fn labels(&self) -> std::collections::HashMap<&str, usize> {
        self.clusters
            .iter()
            .flat_map(|c| c.member_tracklet_ids.iter().map(move |m| (m.as_str(), c.cluster_id)))
            .collect()
    }
}

/// Keeps components with strictly more than `t` members, numbered in order of
/// their smallest member id.
pub fn cluster_set(components: &[Vec<String>], t: usize) -> ClusterSet {
    let mut sorted: Vec<Vec<String>> = components
        .iter()
        .filter(|c| !c.is_empty())
        .map(|c| {
            let mut c = c.clone();
            c.sort();
            c
        })
        .collect();
    sorted.sort_by(|a, b| a[0].cmp(&b[0]));

    let mut clusters = Vec::new();
    let mut unclustered = Vec::new();
    for members in sorted {
        if members.len() > t {
            clusters.push(ClusterAssignment {
                cluster_id: clusters.len(),
                member_tracklet_ids: members,
            });
        } else {
            unclustered.extend(members);
        }
    }
    unclustered.sort();
    ClusterSet { clusters, unclustered }
}

/// Parameters of one clustering pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterParams {
    /// Reciprocal-rank threshold `K`.
    pub k: u32,
    /// Cardinality threshold `T`; clusters need more than `T` members.
    pub t: usize,
    /// Out-degree of the graph.
    pub k1: usize,
    pub connectivity: Connectivity,
    /// L2-normalize tracklet embeddings before ranking.
    pub normalize: bool,
}

impl ClusterParams {
    /// `K = T = 2` for networks of more than two cameras, `K = T = 1` for two.
    /// `k1` defaults to `K`.
    pub fn for_cameras(cameras: usize) -> Self {
        let (k, t) = if cameras > 2 { (2, 2) } else { (1, 1) };
        ClusterParams {
            k,
            t,
            k1: k as usize,
            connectivity: Connectivity::Weak,
            normalize: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 || self.t < 1 || self.k1 < 1 {
            return Err(Error::Validation(format!(
                "K, T and k1 must be positive (K={}, T={}, k1={})",
                self.k, self.t, self.k1
            )));
        }
        if self.k1 < self.k as usize {
            log::warn!(
                "k1={} < K={}: edges that would survive the threshold are never created",
                self.k1,
                self.k
            );
        }
        Ok(())
    }
}

/// Intermediate products of a clustering pass, kept for inspection.
#[derive(Clone, Debug)]
pub struct ClusterTrace {
    pub index: NeighborIndex,
    pub graph: ReciprocalGraph,
    pub thresholded: ReciprocalGraph,
    pub clusters: ClusterSet,
}

/// Embed every tracklet, rank, build the graph, cut at `K`, keep components larger than `T`.
pub fn cluster<E: Embedder + ?Sized>(m: &DomainManifest, params: &ClusterParams, embedder: &E) -> Result<ClusterSet> {
    cluster_traced(m, params, embedder).map(|t| t.clusters)
}

pub fn cluster_traced<E: Embedder + ?Sized>(
    m: &DomainManifest,
    params: &ClusterParams,
    embedder: &E,
) -> Result<ClusterTrace> {
    params.validate()?;
    m.ensure_valid()?;
    let mut embeddings = embed_manifest(embedder, m)?;
    if params.normalize {
        embeddings = embeddings.iter().map(|e| e.l2_normalized()).collect();
    }
    let ids: Vec<String> = m.tracklets.iter().map(|t| t.tracklet_id.clone()).collect();
    let cams: Vec<String> = m.tracklets.iter().map(|t| t.camera_id.clone()).collect();
    let index = NeighborIndex::from_embeddings(&ids, &cams, embeddings)?;
    let graph = build_graph(&index, params.k1)?;
    let thresholded = threshold_graph(&graph, params.k)?;
    let comps = components(&thresholded, params.connectivity);
    let clusters = cluster_set(&comps, params.t);
    Ok(ClusterTrace {
        index,
        graph,
        thresholded,
        clusters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::IdentityEmbedder;
    use crate::knn::build_neighbor_index;
    use crate::model::{FeatureVector, Tracklet};

    fn one_d(points: &[(&str, &str, f64)]) -> DomainManifest {
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

    fn edge_set(g: &ReciprocalGraph) -> Vec<(String, String, u32)> {
        let mut v: Vec<_> = g
            .labeled_edges()
            .map(|(a, b, w)| (a.to_string(), b.to_string(), w))
            .collect();
        v.sort();
        v
    }

    fn e(a: &str, b: &str, w: u32) -> (String, String, u32) {
        (a.into(), b.into(), w)
    }

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn running_example_graph() {
        let idx = build_neighbor_index(&running_example()).unwrap();
        let g = build_graph(&idx, 1).unwrap();
        assert_eq!(
            edge_set(&g),
            vec![
                e("a1", "b1", 1),
                e("a2", "b2", 1),
                e("b1", "a1", 1),
                e("b2", "a2", 1),
                e("b3", "a2", 3),
            ]
        );

        let cut = threshold_graph(&g, 1).unwrap();
        assert_eq!(cut.edges().len(), 4);
        assert!(cut.labeled_edges().all(|(a, _, _)| a != "b3"));
        assert_eq!(cut.vertices().len(), 5);
        assert_eq!(threshold_graph(&g, 3).unwrap(), g);
        assert!(threshold_graph(&g, 0).is_err());

        let comps = connected_subgraphs(&cut);
        assert_eq!(
            comps,
            vec![strings(&["a1", "b1"]), strings(&["a2", "b2"]), strings(&["b3"])]
        );

        let cs = cluster_set(&comps, 1);
        assert_eq!(cs.clusters.len(), 2);
        assert_eq!(cs.clusters[0].member_tracklet_ids, strings(&["a1", "b1"]));
        assert_eq!(cs.clusters[1].member_tracklet_ids, strings(&["a2", "b2"]));
        assert_eq!(cs.unclustered, strings(&["b3"]));
    }

    #[test]
    fn two_tracklet_graph() {
        let idx = build_neighbor_index(&one_d(&[("x", "A", 0.0), ("y", "B", 2.0)])).unwrap();
        let g = build_graph(&idx, 1).unwrap();
        assert_eq!(edge_set(&g), vec![e("x", "y", 1), e("y", "x", 1)]);
    }

    #[test]
    fn saturated_out_degree() {
        let idx = build_neighbor_index(&running_example()).unwrap();
        let g = build_graph(&idx, 100).unwrap();
        // 2 A-vertices x 3 B-neighbors + 3 B-vertices x 2 A-neighbors
        assert_eq!(g.edges().len(), 12);
    }

    #[test]
    fn edgeless_graph_gives_singletons() {
        let g = ReciprocalGraph::new(strings(&["c", "a", "b"]), vec![]).unwrap();
        assert_eq!(
            connected_subgraphs(&g),
            vec![strings(&["a"]), strings(&["b"]), strings(&["c"])]
        );
    }

    #[test]
    fn weak_vs_strong() {
        // a -> b, c -> b
        let g = ReciprocalGraph::new(
            strings(&["a", "b", "c"]),
            vec![
                Edge {
                    from: 0,
                    to: 1,
                    weight: 1,
                },
                Edge {
                    from: 2,
                    to: 1,
                    weight: 1,
                },
            ],
        )
        .unwrap();
        assert_eq!(connected_subgraphs(&g), vec![strings(&["a", "b", "c"])]);
        assert_eq!(
            components(&g, Connectivity::Strong),
            vec![strings(&["a"]), strings(&["b"]), strings(&["c"])]
        );

        let cyc = ReciprocalGraph::new(
            strings(&["a", "b", "c", "d"]),
            vec![
                Edge {
                    from: 0,
                    to: 1,
                    weight: 1,
                },
                Edge {
                    from: 1,
                    to: 2,
                    weight: 1,
                },
                Edge {
                    from: 2,
                    to: 0,
                    weight: 1,
                },
                Edge {
                    from: 2,
                    to: 3,
                    weight: 1,
                },
            ],
        )
        .unwrap();
        assert_eq!(
            components(&cyc, Connectivity::Strong),
            vec![strings(&["a", "b", "c"]), strings(&["d"])]
        );
    }

    #[test]
    fn cardinality_threshold_is_strict() {
        let comps = vec![strings(&["a", "b"]), strings(&["c", "d", "e"])];
        let cs = cluster_set(&comps, 2);
        assert_eq!(cs.clusters.len(), 1);
        assert_eq!(cs.clusters[0].member_tracklet_ids, strings(&["c", "d", "e"]));
        assert_eq!(cs.unclustered, strings(&["a", "b"]));

        let none = cluster_set(&comps, 5);
        assert!(none.clusters.is_empty());
        assert_eq!(none.unclustered.len(), 5);
    }

    #[test]
    fn pipeline_on_running_example() {
        let params = ClusterParams {
            k: 1,
            t: 1,
            k1: 1,
            connectivity: Connectivity::Weak,
            normalize: false,
        };
        let cs = cluster(&running_example(), &params, &IdentityEmbedder::new(1)).unwrap();
        assert_eq!(cs.clusters.len(), 2);
        assert_eq!(cs.unclustered, strings(&["b3"]));
    }

    #[test]
    fn degenerate_embeddings_are_deterministic() {
        let m = one_d(&[
            ("d", "A", 1.0),
            ("b", "B", 1.0),
            ("c", "A", 1.0),
            ("a", "B", 1.0),
            ("e", "C", 1.0),
        ]);
        let params = ClusterParams::for_cameras(3);
        let first = cluster(&m, &params, &IdentityEmbedder::new(1)).unwrap();
        for _ in 0..5 {
            assert_eq!(cluster(&m, &params, &IdentityEmbedder::new(1)).unwrap(), first);
        }
    }

    #[test]
    fn defaults_follow_camera_count() {
        assert_eq!(ClusterParams::for_cameras(2).k, 1);
        assert_eq!(ClusterParams::for_cameras(2).t, 1);
        assert_eq!(ClusterParams::for_cameras(4).k, 2);
        assert_eq!(ClusterParams::for_cameras(4).t, 2);
        assert_eq!(ClusterParams::for_cameras(4).k1, 2);
    }
}
