//! JSONL record types and line-oriented readers/writers for the dataset
//! bundle: one UTF-8 JSON document per line, field order fixed by the structs
//! below so rewrites are byte-stable.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use partctx_core::geometry::BBox;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

pub const IMAGES_FILE: &str = "images.jsonl";
pub const OBJECTS_FILE: &str = "objects.jsonl";
pub const PARTS_FILE: &str = "parts.jsonl";
pub const PART_PROPOSALS_FILE: &str = "part_proposals.jsonl";
pub const OBJECT_PROPOSALS_FILE: &str = "object_proposals.jsonl";
pub const PART_SCORES_FILE: &str = "part_scores.jsonl";
pub const OBJECT_SCORES_FILE: &str = "object_scores.jsonl";
pub const OBJECT_FEATURES_FILE: &str = "object_features.jsonl";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    pub width: f64,
    pub height: f64,
}

/// Ground-truth object. `occluded` may be omitted; occlusion-filtered
/// evaluation then refuses to run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub image_id: u64,
    pub class: String,
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occluded: Option<bool>,
}

/// Ground-truth part. `object_index` indexes the objects of the same image in
/// file order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartRecord {
    pub image_id: u64,
    pub class: String,
    pub object_index: usize,
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub id: u64,
    pub image_id: u64,
    pub bbox: [f64; 4],
}

/// Per part class appearance scores for one part proposal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartScoreRecord {
    pub proposal_id: u64,
    pub scores: BTreeMap<String, f64>,
}

/// Per object class scores (plus background) for one object proposal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectScoreRecord {
    pub proposal_id: u64,
    pub scores: BTreeMap<String, f64>,
    pub background: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectFeatureRecord {
    pub proposal_id: u64,
    pub feature: Vec<f64>,
}

/// Synthetic-scene manifest records: one meta line describing the planted
/// part classes, then one line per generated image.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ManifestRecord {
    Meta {
        part_classes: Vec<ManifestPartClass>,
        viewpoints: Vec<String>,
    },
    Image {
        id: u64,
        objects: Vec<ManifestObject>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestPartClass {
    pub name: String,
    pub object_class: String,
    pub mode_count: usize,
    /// anchor boxes in the normalized object frame, one per mode
    pub anchors: Vec<[f64; 4]>,
    /// activity[viewpoint][mode]
    pub activity: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestObject {
    pub class: String,
    pub viewpoint: String,
    pub occluded: bool,
    pub bbox: [f64; 4],
    pub parts: Vec<ManifestPart>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestPart {
    pub class: String,
    pub mode: usize,
    pub bbox: [f64; 4],
}

pub fn bbox_from_array(file: &Path, line: usize, v: [f64; 4]) -> Result<BBox> {
    BBox::new(v[0], v[1], v[2], v[3]).ok_or_else(|| PipelineError::InvalidField {
        file: file.to_path_buf(),
        line,
        field: "bbox".into(),
        message: format!("corners {v:?} do not describe a positive-area box"),
    })
}

pub fn bbox_to_array(b: &BBox) -> [f64; 4] {
    [b.x_min, b.y_min, b.x_max, b.y_max]
}

/// Reads a JSONL file into records, reporting file and line on parse errors.
/// A missing file yields `MissingArtifact`.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(PipelineError::MissingArtifact(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| PipelineError::Malformed {
            file: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Like [`read_jsonl`] but returns an empty list when the file is absent; used
/// for the optional score/feature tables.
pub fn read_jsonl_optional<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    read_jsonl(path)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("serializable record");
        writeln!(w, "{line}").map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })?;
    }
    Ok(())
}

/// Writes a pretty-printed JSON document (model parameters, reports, config).
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable value");
    std::fs::write(path, text + "\n").map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(PipelineError::MissingArtifact(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Malformed {
        file: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}
