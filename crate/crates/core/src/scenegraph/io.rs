//! JSON-lines readers and writers for clips, graph caches and detections.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::builder::SceneGraph;
use super::homography::Homography;
use super::types::{ClipRecord, Frame, ObjectKind, ObjectState, RiskLabel};

/// Cached graph sequence of one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphRecord {
    pub clip_id: String,
    pub label: RiskLabel,
    pub graphs: Vec<SceneGraph>,
}

/// Bottom-centre pixel of one detected object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionBox {
    pub id: String,
    pub kind: ObjectKind,
    pub u: f64,
    pub v: f64,
}

/// Detections of one frame of one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub clip_id: String,
    pub frame: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<RiskLabel>,
    pub boxes: Vec<DetectionBox>,
}

pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads and validates a clip dataset. Errors carry the 1-based line number.
pub fn read_clips(path: &Path) -> Result<Vec<ClipRecord>> {
    let clips: Vec<ClipRecord> = read_jsonl(path)?;
    // Blank lines are skipped, so recover line numbers by counting records.
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<usize> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, _)| i + 1)
        .collect();
    for (c, line) in clips.iter().zip(lines) {
        c.validate().map_err(|e| Error::Parse {
            line,
            msg: format!("clip {}: {e}", c.clip_id),
        })?;
    }
    Ok(clips)
}

pub fn write_clips(path: &Path, clips: &[ClipRecord]) -> Result<()> {
    write_jsonl(path, clips)
}

pub fn read_graph_records(path: &Path) -> Result<Vec<GraphRecord>> {
    let recs: Vec<GraphRecord> = read_jsonl(path)?;
    for (i, r) in recs.iter().enumerate() {
        if r.graphs.is_empty() {
            return Err(Error::Input(format!("record {} ({}) has no graphs", i + 1, r.clip_id)));
        }
        for (t, g) in r.graphs.iter().enumerate() {
            g.validate().map_err(|e| e.in_frame(t))?;
        }
    }
    Ok(recs)
}

pub fn write_graph_records(path: &Path, records: &[GraphRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    read_jsonl(path)
}

/// Reads nine numbers, row-major, separated by whitespace or commas; a JSON
/// array is accepted too.
pub fn read_homography(path: &Path) -> Result<Homography> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let values = text
        .split(|c: char| c.is_whitespace() || matches!(c, ',' | '[' | ']'))
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::Geometry(format!("bad homography entry `{s}`")))
        })
        .collect::<Result<Vec<f64>>>()?;
    Homography::from_row_major(&values)
}

/// Projects image-space detections to the ground plane and groups them into
/// clips, in order of first appearance. An ego at the origin is added to
/// frames that lack one.
pub fn detections_to_clips(records: &[DetectionRecord], h: &Homography) -> Result<Vec<ClipRecord>> {
    let mut order: Vec<&str> = Vec::new();
    let mut by_clip: BTreeMap<&str, Vec<&DetectionRecord>> = BTreeMap::new();
    for r in records {
        let entry = by_clip.entry(&r.clip_id).or_default();
        if entry.is_empty() {
            order.push(&r.clip_id);
        }
        entry.push(r);
    }
    let mut clips = Vec::with_capacity(order.len());
    for id in order {
        let mut recs = by_clip.remove(id).expect("grouped");
        recs.sort_by_key(|r| r.frame);
        if let Some(w) = recs.windows(2).find(|w| w[0].frame == w[1].frame) {
            return Err(Error::Input(format!("clip {id}: frame {} appears twice", w[0].frame)));
        }
        let mut labels = recs.iter().filter_map(|r| r.label);
        let label = labels
            .next()
            .ok_or_else(|| Error::Label(format!("clip {id} has no label")))?;
        if labels.any(|l| l != label) {
            return Err(Error::Label(format!("clip {id} has conflicting labels")));
        }
        let mut frames = Vec::with_capacity(recs.len());
        for r in recs {
            let mut objects = Vec::with_capacity(r.boxes.len() + 1);
            for b in &r.boxes {
                let (x, y) = h.project(b.u, b.v).map_err(|e| e.in_frame(r.frame))?;
                objects.push(ObjectState::new(b.id.clone(), b.kind, x, y));
            }
            if !objects.iter().any(|o| o.kind == ObjectKind::EgoCar) {
                objects.push(ObjectState::ego());
            }
            frames.push(Frame::new(objects));
        }
        let clip = ClipRecord {
            clip_id: id.to_string(),
            label,
            frames,
            meta: [("source".to_string(), serde_json::Value::from("detections"))]
                .into_iter()
                .collect(),
        };
        clip.validate()?;
        clips.push(clip);
    }
    Ok(clips)
}
