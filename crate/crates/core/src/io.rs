//! Dataset files.
//!
//! A dataset directory holds, for each view `v` (numbered from 0):
//!
//! - `view_{v}.csv`: lines `frame,det,x,y,w,h`;
//! - `view_{v}.emb.bin`: little-endian `f32` rows, one per detection;
//! - `view_{v}.emb.json`: `{"dim": d, "rows": n, "index": [[frame, det], ...]}`.
//!
//! Ground-truth directories use the same CSV with a trailing `gid` column.
//! Track files are CSV `view,frame,gid,x,y,w,h`. An optional first line whose
//! first field is not a number is read as a header.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::affinity::{BlockLayout, GlobalAffinity, Slot};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::metrics::MetricReport;
use crate::records::{sort_records, Detection, FrameBundle, TrackRecord};

pub const DETECTION_HEADER: &str = "frame,det,x,y,w,h";
pub const GROUND_TRUTH_HEADER: &str = "frame,det,x,y,w,h,gid";
pub const TRACKS_HEADER: &str = "view,frame,gid,x,y,w,h";

/// One line of a detection or ground-truth file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionRow {
    pub frame: u32,
    pub det: usize,
    pub bbox: BBox,
    pub gid: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingManifest {
    pub dim: usize,
    pub rows: usize,
    pub index: Vec<(u32, usize)>,
}

pub fn detections_path(dir: &Path, view: usize) -> PathBuf {
    dir.join(format!("view_{view}.csv"))
}

pub fn embeddings_path(dir: &Path, view: usize) -> PathBuf {
    dir.join(format!("view_{view}.emb.bin"))
}

pub fn manifest_path(dir: &Path, view: usize) -> PathBuf {
    dir.join(format!("view_{view}.emb.json"))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn is_header(line: &str) -> bool {
    line.split(',').next().is_some_and(|f| f.trim().parse::<f64>().is_err())
}

// Non-empty data lines with their 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(n, l)| !l.trim().is_empty() && !(*n == 1 && is_header(l)))
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, name: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::Parse { path: path.to_path_buf(), line, msg: format!("bad {name} {raw:?}") })
}

fn parse_box(path: &Path, line: usize, f: &[&str]) -> Result<BBox> {
    let x = field(path, line, "x", f[0])?;
    let y = field(path, line, "y", f[1])?;
    let w = field(path, line, "w", f[2])?;
    let h = field(path, line, "h", f[3])?;
    BBox::new(x, y, w, h).map_err(|e| Error::Parse { path: path.to_path_buf(), line, msg: e.to_string() })
}

/// Parses `frame,det,x,y,w,h` lines, or with `with_gid` a trailing `gid`.
pub fn parse_detections(path: &Path, text: &str, with_gid: bool) -> Result<Vec<DetectionRow>> {
    let width = if with_gid { 7 } else { 6 };
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (n, line) in data_lines(text) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != width {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: n,
                msg: format!("expected {width} fields, found {}", f.len()),
            });
        }
        let frame = field(path, n, "frame", f[0])?;
        let det = field(path, n, "det", f[1])?;
        let bbox = parse_box(path, n, &f[2..6])?;
        let gid = if with_gid { Some(field(path, n, "gid", f[6])?) } else { None };
        if !seen.insert((frame, det)) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: n,
                msg: format!("duplicate detection ({frame}, {det})"),
            });
        }
        out.push(DetectionRow { frame, det, bbox, gid });
    }
    Ok(out)
}

pub fn load_detections(path: &Path) -> Result<Vec<DetectionRow>> {
    parse_detections(path, &read_text(path)?, false)
}

/// Loads embeddings keyed by `(frame, det)`.
pub fn load_embeddings(bin: &Path, manifest: &Path) -> Result<BTreeMap<(u32, usize), Vec<f32>>> {
    let m: EmbeddingManifest = serde_json::from_str(&read_text(manifest)?)?;
    let bytes = fs::read(bin).map_err(|e| Error::io(bin, e))?;
    decode_embeddings(&m, &bytes)
}

pub fn decode_embeddings(m: &EmbeddingManifest, bytes: &[u8]) -> Result<BTreeMap<(u32, usize), Vec<f32>>> {
    let expected = m.rows * m.dim * 4;
    if bytes.len() != expected {
        return Err(Error::Data(format!(
            "embedding payload has {} bytes, manifest needs {} ({} rows x {} dims x 4)",
            bytes.len(),
            expected,
            m.rows,
            m.dim
        )));
    }
    if m.index.len() != m.rows {
        return Err(Error::Data(format!("manifest lists {} index entries for {} rows", m.index.len(), m.rows)));
    }
    let mut out = BTreeMap::new();
    for (r, key) in m.index.iter().enumerate() {
        let row: Vec<f32> = bytes[r * m.dim * 4..(r + 1) * m.dim * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if out.insert(*key, row).is_some() {
            return Err(Error::Data(format!("manifest lists ({}, {}) twice", key.0, key.1)));
        }
    }
    Ok(out)
}

pub fn encode_embeddings(rows: &[((u32, usize), &[f32])]) -> Result<(EmbeddingManifest, Vec<u8>)> {
    let dim = rows.first().map_or(0, |r| r.1.len());
    let mut bytes = Vec::with_capacity(rows.len() * dim * 4);
    for (key, e) in rows {
        if e.len() != dim {
            return Err(Error::Shape(format!("embedding of ({}, {}) has dim {}, expected {dim}", key.0, key.1, e.len())));
        }
        for v in *e {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = EmbeddingManifest { dim, rows: rows.len(), index: rows.iter().map(|r| r.0).collect() };
    Ok((manifest, bytes))
}

fn view_count(dir: &Path) -> Result<usize> {
    if !dir.is_dir() {
        return Err(Error::Data(format!("{} is not a directory", dir.display())));
    }
    let n = (0..).take_while(|&v| detections_path(dir, v).is_file()).count();
    if n == 0 {
        return Err(Error::Data(format!("{} holds no view_0.csv", dir.display())));
    }
    Ok(n)
}

/// Loads a dataset directory into per-frame bundles, frames ascending.
pub fn load_dataset(dir: &Path) -> Result<Vec<FrameBundle>> {
    let views = view_count(dir)?;
    let mut frames: BTreeMap<u32, Vec<Vec<(usize, Detection)>>> = BTreeMap::new();
    for v in 0..views {
        let rows = load_detections(&detections_path(dir, v))?;
        let mut emb = load_embeddings(&embeddings_path(dir, v), &manifest_path(dir, v))?;
        for r in &rows {
            let e = emb.remove(&(r.frame, r.det)).ok_or_else(|| {
                Error::Data(format!("view {v}: no embedding for frame {}, detection {}", r.frame, r.det))
            })?;
            let slot = frames.entry(r.frame).or_insert_with(|| vec![Vec::new(); views]);
            slot[v].push((r.det, Detection { bbox: r.bbox, embedding: e }));
        }
        if let Some((f, d)) = emb.keys().next() {
            return Err(Error::Data(format!("view {v}: embedding for frame {f}, detection {d} has no detection")));
        }
    }
    Ok(frames
        .into_iter()
        .map(|(time, views)| FrameBundle {
            time,
            views: views
                .into_iter()
                .map(|mut dets| {
                    dets.sort_by_key(|d| d.0);
                    dets.into_iter().map(|d| d.1).collect()
                })
                .collect(),
        })
        .collect())
}

fn box_fields(b: &BBox) -> String {
    format!("{},{},{},{}", b.x, b.y, b.w, b.h)
}

/// Writes bundles as a dataset directory. With `gt`, also writes ground truth
/// (`gt[t][v][d]` = (id, box) of detection `d`) into `gt_dir`.
pub fn write_dataset(dir: &Path, bundles: &[FrameBundle], gt: Option<(&Path, &[Vec<Vec<(u64, BBox)>>])>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let views = bundles.iter().map(|b| b.views.len()).max().unwrap_or(0);
    if let Some((gdir, _)) = gt {
        fs::create_dir_all(gdir).map_err(|e| Error::io(gdir, e))?;
    }
    for v in 0..views {
        let mut csv = format!("{DETECTION_HEADER}\n");
        let mut gcsv = format!("{GROUND_TRUTH_HEADER}\n");
        let mut rows: Vec<((u32, usize), &[f32])> = Vec::new();
        for (t, b) in bundles.iter().enumerate() {
            for (d, det) in b.views.get(v).map(Vec::as_slice).unwrap_or(&[]).iter().enumerate() {
                let _ = writeln!(csv, "{},{},{}", b.time, d, box_fields(&det.bbox));
                rows.push(((b.time, d), &det.embedding));
                if let Some((_, ids)) = gt {
                    let (id, gb) = ids[t][v][d];
                    let _ = writeln!(gcsv, "{},{},{},{}", b.time, d, box_fields(&gb), id);
                }
            }
        }
        let (manifest, bytes) = encode_embeddings(&rows)?;
        write_bytes(&detections_path(dir, v), csv.as_bytes())?;
        write_bytes(&embeddings_path(dir, v), &bytes)?;
        write_bytes(&manifest_path(dir, v), serde_json::to_string(&manifest)?.as_bytes())?;
        if let Some((gdir, _)) = gt {
            write_bytes(&detections_path(gdir, v), gcsv.as_bytes())?;
        }
    }
    Ok(())
}

/// Loads every `view_{v}.csv` with a `gid` column from a directory.
pub fn load_ground_truth(dir: &Path) -> Result<Vec<TrackRecord>> {
    let views = view_count(dir)?;
    let mut out = Vec::new();
    for v in 0..views {
        let path = detections_path(dir, v);
        for r in parse_detections(&path, &read_text(&path)?, true)? {
            out.push(TrackRecord { view: v, frame: r.frame, id: r.gid.expect("gid column"), bbox: r.bbox });
        }
    }
    check_unique_ids(&out)?;
    sort_records(&mut out);
    Ok(out)
}

fn check_unique_ids(records: &[TrackRecord]) -> Result<()> {
    let mut seen = HashMap::new();
    for r in records {
        if seen.insert((r.view, r.frame, r.id), ()).is_some() {
            return Err(Error::Data(format!("id {} appears twice in view {}, frame {}", r.id, r.view, r.frame)));
        }
    }
    Ok(())
}

pub fn format_tracks(records: &[TrackRecord]) -> String {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut s = format!("{TRACKS_HEADER}\n");
    for r in &sorted {
        let _ = writeln!(s, "{},{},{},{}", r.view, r.frame, r.id, box_fields(&r.bbox));
    }
    s
}

pub fn write_tracks(records: &[TrackRecord], path: &Path) -> Result<()> {
    write_bytes(path, format_tracks(records).as_bytes())
}

pub fn parse_tracks(path: &Path, text: &str) -> Result<Vec<TrackRecord>> {
    let mut out = Vec::new();
    for (n, line) in data_lines(text) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: n,
                msg: format!("expected 7 fields, found {}", f.len()),
            });
        }
        out.push(TrackRecord {
            view: field(path, n, "view", f[0])?,
            frame: field(path, n, "frame", f[1])?,
            id: field(path, n, "gid", f[2])?,
            bbox: parse_box(path, n, &f[3..7])?,
        });
    }
    check_unique_ids(&out)?;
    Ok(out)
}

pub fn load_tracks(path: &Path) -> Result<Vec<TrackRecord>> {
    parse_tracks(path, &read_text(path)?)
}

/// Aligned two-column table.
pub fn format_report_table(r: &MetricReport) -> String {
    let entries = r.entries();
    let width = entries.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut s = String::new();
    for (k, v) in entries {
        let _ = writeln!(s, "{k:<width$}  {v:>8.4}");
    }
    s
}

/// Flat `key=value` lines with full precision.
pub fn format_report_kv(r: &MetricReport) -> String {
    r.entries().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn parse_report_kv(text: &str) -> Result<Vec<(String, f64)>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (k, v) = l.split_once('=').ok_or_else(|| Error::Data(format!("report line {l:?} lacks '='")))?;
            let v = v.trim().parse().map_err(|_| Error::Data(format!("report value {v:?} is not a number")))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

/// Writes `report.txt` (table) and `report.kv` (key=value) into `dir`.
pub fn write_report(r: &MetricReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_bytes(&dir.join("report.txt"), format_report_table(r).as_bytes())?;
    write_bytes(&dir.join("report.kv"), format_report_kv(r).as_bytes())
}

/// One slot of a serialized block layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotEntry {
    pub time: u32,
    pub view: usize,
    pub count: usize,
}

/// Input of `solve`: a global affinity with its layout, optionally with the
/// ground-truth assignment it was generated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffinityFile {
    pub layout: Vec<SlotEntry>,
    pub values: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_gt: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationEntry {
    pub from: Slot,
    pub to: Slot,
    /// `(row, col, score)` of every retained pair.
    pub links: Vec<(usize, usize, f64)>,
}

/// Output of `solve`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveFile {
    pub layout: Vec<SlotEntry>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub permutations: Vec<PermutationEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairwise_accuracy: Option<f64>,
}

pub fn layout_entries(layout: &BlockLayout) -> Vec<SlotEntry> {
    layout.slots().map(|(s, count)| SlotEntry { time: s.time, view: s.view, count }).collect()
}

pub fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>], n: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Shape(format!("{what} must be {n}x{n} to match the layout")));
    }
    Ok(DMatrix::from_fn(n, n, |r, c| rows[r][c]))
}

impl AffinityFile {
    pub fn from_instance(affinity: &GlobalAffinity, a_gt: Option<&DMatrix<f64>>, seed: Option<u64>) -> Self {
        Self {
            layout: layout_entries(&affinity.layout),
            values: rows_of(&affinity.values),
            a_gt: a_gt.map(rows_of),
            seed,
        }
    }

    pub fn affinity(&self) -> Result<GlobalAffinity> {
        let layout =
            BlockLayout::new(self.layout.iter().map(|e| (Slot { time: e.time, view: e.view }, e.count)).collect())?;
        let values = matrix_from_rows(&self.values, layout.total(), "values")?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("affinity holds non-finite values".into()));
        }
        GlobalAffinity::new(values, layout)
    }

    pub fn ground_truth(&self) -> Result<Option<DMatrix<f64>>> {
        let n = self.layout.iter().map(|e| e.count).sum();
        self.a_gt.as_ref().map(|rows| matrix_from_rows(rows, n, "a_gt")).transpose()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&read_text(path)?)?)
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> PathBuf {
        PathBuf::from("view_0.csv")
    }

    #[test]
    fn parses_a_detection_line() {
        let rows = parse_detections(&p(), "1,0,10,20,30,40\n", false).unwrap();
        assert_eq!(rows, vec![DetectionRow { frame: 1, det: 0, bbox: BBox { x: 10.0, y: 20.0, w: 30.0, h: 40.0 }, gid: None }]);
    }

    #[test]
    fn negative_width_is_rejected_with_line() {
        let err = parse_detections(&p(), "frame,det,x,y,w,h\n1,0,10,20,-5,40\n", false).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_detections(&p(), "1,0,10,20,30,40\n2,0,abc,20,30,40\n", false).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_detections(&p(), "1,0,10,20,30\n", false).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn empty_file_is_empty() {
        assert!(parse_detections(&p(), "", false).unwrap().is_empty());
        assert!(parse_tracks(&p(), "").unwrap().is_empty());
    }

    #[test]
    fn gid_column() {
        let rows = parse_detections(&p(), "3,1,0,0,1,1,42\n", true).unwrap();
        assert_eq!(rows[0].gid, Some(42));
    }

    #[test]
    fn embedding_payload_sizes() {
        let m = EmbeddingManifest { dim: 4, rows: 2, index: vec![(1, 0), (1, 1)] };
        let bytes: Vec<u8> = (0..8u32).flat_map(|i| (i as f32).to_le_bytes()).collect();
        let e = decode_embeddings(&m, &bytes).unwrap();
        assert_eq!(e[&(1, 1)], vec![4.0, 5.0, 6.0, 7.0]);
        assert!(decode_embeddings(&m, &bytes[..31]).is_err());
    }

    #[test]
    fn embedding_round_trip_is_bit_exact() {
        let a = [0.1f32, -3.5e-8, f32::MIN_POSITIVE];
        let b = [1.0f32 / 3.0, 2.0, -0.0];
        let (m, bytes) = encode_embeddings(&[((1, 0), &a), ((2, 0), &b)]).unwrap();
        let back = decode_embeddings(&m, &bytes).unwrap();
        assert_eq!(back[&(1, 0)].iter().map(|v| v.to_bits()).collect::<Vec<_>>(), a.map(f32::to_bits).to_vec());
        assert_eq!(back[&(2, 0)].iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.map(f32::to_bits).to_vec());
    }

    #[test]
    fn empty_tracks_are_header_only() {
        assert_eq!(format_tracks(&[]), format!("{TRACKS_HEADER}\n"));
    }

    #[test]
    fn tracks_round_trip() {
        let recs = vec![
            TrackRecord { view: 1, frame: 2, id: 5, bbox: BBox { x: 0.1 + 0.2, y: 1e-9, w: 3.0, h: 4.5 } },
            TrackRecord { view: 0, frame: 7, id: 1, bbox: BBox { x: -2.0, y: 1.0 / 3.0, w: 1.0, h: 1.0 } },
        ];
        let back = parse_tracks(&p(), &format_tracks(&recs)).unwrap();
        let mut sorted = recs.clone();
        sort_records(&mut sorted);
        assert_eq!(back, sorted);
    }

    #[test]
    fn affinity_file_round_trip() {
        let layout = BlockLayout::new(vec![(Slot { time: 1, view: 0 }, 1), (Slot { time: 1, view: 1 }, 2)]).unwrap();
        let values = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.7, 0.25, 1.0, 0.0, 0.75, 0.0, 1.0]);
        let g = GlobalAffinity::new(values, layout).unwrap();
        let f = AffinityFile::from_instance(&g, None, Some(4));
        let text = serde_json::to_string(&f).unwrap();
        let back: AffinityFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.affinity().unwrap(), g);
        assert_eq!(back.ground_truth().unwrap(), None);
    }

    #[test]
    fn affinity_file_shape_checked() {
        let f = AffinityFile {
            layout: vec![SlotEntry { time: 0, view: 0, count: 2 }],
            values: vec![vec![1.0]],
            a_gt: None,
            seed: None,
        };
        assert!(matches!(f.affinity(), Err(Error::Shape(_))));
    }

    #[test]
    fn duplicate_track_id_in_frame_is_rejected() {
        let text = "view,frame,gid,x,y,w,h\n0,1,3,0,0,1,1\n0,1,3,5,5,1,1\n";
        assert!(parse_tracks(&p(), text).is_err());
    }
}
