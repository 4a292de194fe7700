use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::PreparedClip;
use crate::scenegraph::{
    clip_to_graph_sequence, read_clips, read_graph_records, ClipRecord, GraphConfig, GraphRecord,
    NodeKind,
};

/// Builds the graph sequence of every clip.
pub fn build_graph_records(clips: &[ClipRecord], cfg: &GraphConfig) -> Result<Vec<GraphRecord>> {
    cfg.validate()?;
    clips
        .par_iter()
        .map(|c| {
            let graphs = clip_to_graph_sequence(c, cfg)
                .map_err(|e| Error::Input(format!("clip {}: {e}", c.clip_id)))?;
            Ok(GraphRecord {
                clip_id: c.clip_id.clone(),
                label: c.label,
                graphs,
            })
        })
        .collect()
}

/// Loads a dataset given either as clips or as cached graph sequences; the
/// format is recognised from the first record.
pub fn load_graph_records(path: &Path, cfg: &GraphConfig) -> Result<Vec<GraphRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut first = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            first = Some((i + 1, line));
            break;
        }
    }
    let Some((line_no, line)) = first else {
        return Err(Error::Dataset(format!("{} is empty", path.display())));
    };
    let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
        line: line_no,
        msg: e.to_string(),
    })?;
    let records = if value.get("graphs").is_some() {
        read_graph_records(path)?
    } else {
        build_graph_records(&read_clips(path)?, cfg)?
    };
    let mut ids: Vec<&str> = records.iter().map(|r| r.clip_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Dataset(format!("duplicate clip id {}", w[0])));
    }
    Ok(records)
}

/// Converts graph records into network inputs under a node vocabulary.
pub fn prepare_records(records: &[GraphRecord], vocab: &[NodeKind]) -> Result<Vec<PreparedClip>> {
    records
        .par_iter()
        .map(|r| {
            PreparedClip::new(r.clip_id.clone(), Some(r.label), &r.graphs, vocab).map_err(|e| match e.root() {
                Error::Vocabulary(m) => Error::Vocabulary(m.clone()),
                _ => Error::Input(format!("clip {}: {e}", r.clip_id)),
            })
        })
        .collect()
}
