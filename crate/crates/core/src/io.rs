//! Manifest, sidecar and cluster-assignment file formats.
//!
//! Manifests are UTF-8 JSON lines, one tracklet per line:
//!
//! ```text
//! {"name":"market","sidecar":"market.ktf"}
//! {"tracklet_id":"t1","camera_id":"c1","identity":"7","frames":[[0.1,0.2],[0.3,0.4]]}
//! {"tracklet_id":"t2","camera_id":"c2","identity":null,"rows":[2,5]}
//! ```
//!
//! The optional first line names the manifest and points at a binary feature
//! sidecar; without it the name is the file stem. A tracklet carries either
//! inline `frames` or a `rows` reference `[offset, count]` into the sidecar.
//!
//! Sidecar layout: `b"KTF1"`, `u32` row count, `u32` dim, then row-major
//! little-endian `f32` values.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ClusterSet;
use crate::model::{ClusterAssignment, DomainManifest, FeatureVector, Tracklet};

pub const SIDECAR_MAGIC: &[u8; 4] = b"KTF1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderRecord {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sidecar: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackletRecord {
    tracklet_id: String,
    camera_id: String,
    identity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frames: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rows: Option<[u64; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Record {
    Tracklet(TrackletRecord),
    Header(HeaderRecord),
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Reads a manifest and checks every invariant.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<DomainManifest> {
    let m = read_manifest_unchecked(path.as_ref())?;
    m.ensure_valid()?;
    Ok(m)
}

/// Reads a manifest without validating it; use with [`crate::validate_manifest`].
pub fn read_manifest_unchecked(path: impl AsRef<Path>) -> Result<DomainManifest> {
    let path = path.as_ref();
    let reader = BufReader::new(open(path)?);
    let mut name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut sidecar: Option<Sidecar> = None;
    let mut tracklets = Vec::new();

    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record =
            serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", lineno + 1)))?;
        match record {
            Record::Header(h) => {
                if !tracklets.is_empty() {
                    return Err(Error::format(
                        path,
                        format!("line {}: header must precede tracklets", lineno + 1),
                    ));
                }
                name = h.name;
                if let Some(rel) = h.sidecar {
                    let sidecar_path = path.parent().unwrap_or(Path::new(".")).join(rel);
                    sidecar = Some(read_sidecar(&sidecar_path)?);
                }
            }
            Record::Tracklet(r) => {
                let frames = match (r.frames, r.rows) {
                    (Some(frames), None) => frames.into_iter().map(FeatureVector::new).collect(),
                    (None, Some([offset, count])) => {
                        let sc = sidecar.as_ref().ok_or_else(|| {
                            Error::format(path, format!("line {}: rows given but no sidecar", lineno + 1))
                        })?;
                        sc.rows(offset as usize, count as usize).ok_or_else(|| {
                            Error::format(
                                path,
                                format!(
                                    "line {}: rows [{offset}, {count}] exceed sidecar of {} rows",
                                    lineno + 1,
                                    sc.row_count
                                ),
                            )
                        })?
                    }
                    _ => {
                        return Err(Error::format(
                            path,
                            format!("line {}: exactly one of frames or rows is required", lineno + 1),
                        ))
                    }
                };
                tracklets.push(Tracklet::new(r.tracklet_id, r.camera_id, r.identity, frames));
            }
        }
    }
    Ok(DomainManifest::new(name, tracklets))
}

/// Writes a manifest with inline frames. Reading it back gives an equal manifest.
pub fn write_manifest(path: impl AsRef<Path>, m: &DomainManifest) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let header = HeaderRecord {
        name: m.name.clone(),
        sidecar: None,
    };
    write_line(&mut w, path, &header)?;
    for t in &m.tracklets {
        let record = TrackletRecord {
            tracklet_id: t.tracklet_id.clone(),
            camera_id: t.camera_id.clone(),
            identity: t.identity.clone(),
            frames: Some(t.frames.iter().map(|f| f.as_slice().to_vec()).collect()),
            rows: None,
        };
        write_line(&mut w, path, &record)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes frames to a binary sidecar next to the manifest; values are stored as `f32`.
pub fn write_manifest_with_sidecar(
    path: impl AsRef<Path>,
    sidecar_path: impl AsRef<Path>,
    m: &DomainManifest,
) -> Result<()> {
    let path = path.as_ref();
    let sidecar_path = sidecar_path.as_ref();
    let dim = m
        .dim()
        .ok_or_else(|| Error::Structure("cannot write a sidecar for a manifest without frames".into()))?;
    let rows: Vec<&[f64]> = m
        .tracklets
        .iter()
        .flat_map(|t| t.frames.iter().map(FeatureVector::as_slice))
        .collect();
    write_sidecar(sidecar_path, dim, &rows)?;

    let rel = relative_to(sidecar_path, path.parent());
    let mut w = create(path)?;
    write_line(
        &mut w,
        path,
        &HeaderRecord {
            name: m.name.clone(),
            sidecar: Some(rel),
        },
    )?;
    let mut offset = 0u64;
    for t in &m.tracklets {
        let count = t.frames.len() as u64;
        write_line(
            &mut w,
            path,
            &TrackletRecord {
                tracklet_id: t.tracklet_id.clone(),
                camera_id: t.camera_id.clone(),
                identity: t.identity.clone(),
                frames: None,
                rows: Some([offset, count]),
            },
        )?;
        offset += count;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn relative_to(target: &Path, base: Option<&Path>) -> String {
    base.filter(|b| !b.as_os_str().is_empty())
        .and_then(|b| target.strip_prefix(b).ok())
        .unwrap_or(target)
        .to_string_lossy()
        .into_owned()
}

fn write_line<T: Serialize>(w: &mut impl Write, path: &Path, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value).map_err(|e| Error::format(path, e.to_string()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sidecar {
    pub row_count: usize,
    pub dim: usize,
    pub values: Vec<f32>,
}

impl Sidecar {
    pub fn rows(&self, offset: usize, count: usize) -> Option<Vec<FeatureVector>> {
        let end = offset.checked_add(count)?;
        if end > self.row_count {
            return None;
        }
        Some(
            self.values[offset * self.dim..end * self.dim]
                .chunks_exact(self.dim)
                .map(|row| FeatureVector::new(row.iter().map(|&v| v as f64).collect()))
                .collect(),
        )
    }
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<Sidecar> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != SIDECAR_MAGIC {
        return Err(Error::format(path, "missing KTF1 header"));
    }
    let row_count = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let expected = row_count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(path, "sidecar size overflows"))?;
    let body = &bytes[12..];
    if body.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "expected {expected} payload bytes for {row_count}x{dim}, found {}",
                body.len()
            ),
        ));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(Sidecar { row_count, dim, values })
}

pub fn write_sidecar(path: impl AsRef<Path>, dim: usize, rows: &[&[f64]]) -> Result<()> {
    let path = path.as_ref();
    let to_u32 = |n: usize, what: &str| {
        u32::try_from(n).map_err(|_| Error::format(path, format!("{what} {n} does not fit in u32")))
    };
    let mut w = create(path)?;
    let mut buf = Vec::with_capacity(12 + rows.len() * dim * 4);
    buf.extend_from_slice(SIDECAR_MAGIC);
    buf.extend_from_slice(&to_u32(rows.len(), "row count")?.to_le_bytes());
    buf.extend_from_slice(&to_u32(dim, "dim")?.to_le_bytes());
    for row in rows {
        if row.len() != dim {
            return Err(Error::Structure(format!(
                "sidecar row has dim {}, expected {dim}",
                row.len()
            )));
        }
        for &v in *row {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// `cluster_id<TAB>tracklet_id` lines; unclustered tracklets get `-1`.
pub fn format_assignments(c: &ClusterSet) -> String {
    let mut out = String::new();
    for cl in &c.clusters {
        for m in &cl.member_tracklet_ids {
            out.push_str(&format!("{}\t{m}\n", cl.cluster_id));
        }
    }
    for m in &c.unclustered {
        out.push_str(&format!("-1\t{m}\n"));
    }
    out
}

pub fn write_assignments(path: impl AsRef<Path>, c: &ClusterSet) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_assignments(c)).map_err(|e| Error::io(path, e))
}

pub fn read_assignments(path: impl AsRef<Path>) -> Result<ClusterSet> {
    let path: PathBuf = path.as_ref().to_path_buf();
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut groups: std::collections::BTreeMap<usize, Vec<String>> = Default::default();
    let mut unclustered = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (cid, tid) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(&path, format!("line {}: expected two tab-separated fields", i + 1)))?;
        if !seen.insert(tid.to_string()) {
            return Err(Error::format(
                &path,
                format!("line {}: tracklet {tid:?} listed twice", i + 1),
            ));
        }
        if cid == "-1" {
            unclustered.push(tid.to_string());
        } else {
            let id: usize = cid
                .parse()
                .map_err(|_| Error::format(&path, format!("line {}: bad cluster id {cid:?}", i + 1)))?;
            groups.entry(id).or_default().push(tid.to_string());
        }
    }
    unclustered.sort();
    Ok(ClusterSet {
        clusters: groups
            .into_iter()
            .map(|(cluster_id, mut members)| {
                members.sort();
                ClusterAssignment {
                    cluster_id,
                    member_tracklet_ids: members,
                }
            })
            .collect(),
        unclustered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DomainManifest {
        DomainManifest::new(
            "sample",
            vec![
                Tracklet::new(
                    "t1",
                    "c1",
                    Some("7".into()),
                    vec![
                        FeatureVector::new(vec![0.1, -2.5e-7]),
                        FeatureVector::new(vec![1.0 / 3.0, 1e300]),
                    ],
                ),
                Tracklet::new("t2", "c2", None, vec![FeatureVector::new(vec![0.0, -0.0])]),
            ],
        )
    }

    #[test]
    fn inline_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        write_manifest(&path, &sample()).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), sample());
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = DomainManifest::new(
            "side",
            vec![
                Tracklet::new("a", "c1", Some("1".into()), vec![FeatureVector::new(vec![0.5, 1.5]); 3]),
                Tracklet::new("b", "c2", None, vec![FeatureVector::new(vec![-2.0, 4.0])]),
            ],
        );
        let path = dir.path().join("m.jsonl");
        write_manifest_with_sidecar(&path, dir.path().join("m.ktf"), &m).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().next().unwrap().contains("\"sidecar\":\"m.ktf\""));
        assert!(text.contains("\"rows\":[3,1]"));
        assert_eq!(read_manifest(&path).unwrap(), m);

        let bytes = std::fs::read(dir.path().join("m.ktf")).unwrap();
        assert_eq!(&bytes[..4], b"KTF1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 12 + 4 * 2 * 4);
    }

    #[test]
    fn name_defaults_to_file_stem() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("campus.jsonl");
        std::fs::write(
            &path,
            "{\"tracklet_id\":\"t\",\"camera_id\":\"c\",\"identity\":null,\"frames\":[[1.0]]}\n",
        )
        .unwrap();
        assert_eq!(read_manifest(&path).unwrap().name, "campus");
    }

    #[test]
    fn malformed_manifests_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let cases = [
            "{\"tracklet_id\":\"t\",\"camera_id\":\"c\",\"identity\":null}\n",
            "{\"tracklet_id\":\"t\",\"camera_id\":\"c\",\"identity\":null,\"rows\":[0,1]}\n",
            "{\"tracklet_id\":\"t\",\"camera_id\":\"c\",\"identity\":null,\"frames\":[[1.0]],\"extra\":1}\n",
            "not json\n",
        ];
        for case in cases {
            std::fs::write(&path, case).unwrap();
            assert!(matches!(read_manifest(&path), Err(Error::Format { .. })), "{case}");
        }
        std::fs::write(
            &path,
            "{\"tracklet_id\":\"t\",\"camera_id\":\"c\",\"identity\":null,\"frames\":[[1.0],[1.0,2.0]]}\n",
        )
        .unwrap();
        assert!(matches!(read_manifest(&path), Err(Error::Structure(_))));
        assert!(read_manifest_unchecked(&path).is_ok());
        assert!(matches!(
            read_manifest(dir.path().join("missing.jsonl")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn assignments_round_trip() {
        let c = ClusterSet {
            clusters: vec![
                ClusterAssignment {
                    cluster_id: 0,
                    member_tracklet_ids: vec!["a1".into(), "b1".into()],
                },
                ClusterAssignment {
                    cluster_id: 1,
                    member_tracklet_ids: vec!["a2".into(), "b2".into()],
                },
            ],
            unclustered: vec!["b3".into()],
        };
        assert_eq!(format_assignments(&c), "0\ta1\n0\tb1\n1\ta2\n1\tb2\n-1\tb3\n");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.tsv");
        write_assignments(&path, &c).unwrap();
        assert_eq!(read_assignments(&path).unwrap(), c);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn manifest_round_trip(
                rows in prop::collection::vec(
                    ("[a-z0-9/_-]{1,8}", "[a-z0-9]{1,4}", prop::option::of("[a-z0-9-]{1,5}"),
                     prop::collection::vec(prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, 3), 1..4)),
                    1..8)
            ) {
                let tracklets = rows.into_iter().enumerate()
                    .map(|(i, (id, cam, who, frames))| Tracklet::new(
                        format!("{i}-{id}"), cam, who, frames.into_iter().map(FeatureVector::new).collect()))
                    .collect();
                let m = DomainManifest::new("prop", tracklets);
                let dir = tempfile::tempdir().unwrap();
                let path = dir.path().join("m.jsonl");
                write_manifest(&path, &m).unwrap();
                prop_assert_eq!(read_manifest(&path).unwrap(), m);
            }
        }
    }
}
