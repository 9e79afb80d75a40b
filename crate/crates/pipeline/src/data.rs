//! Dataset ingestion and the relative-location machinery that runs before any
//! training: part-class preprocessing (merge / discard rules), prior heatmaps
//! with mode-count estimation, and per-object mode assignment.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use partctx_core::geometry::BBox;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::schema::{self, bbox_from_array, bbox_to_array};

#[derive(Debug, Clone)]
pub struct ImageInfo {
    pub id: u64,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone)]
pub struct ObjectGt {
    pub image_id: u64,
    pub class: String,
    pub bbox: BBox,
    pub occluded: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct PartGt {
    pub image_id: u64,
    pub class: String,
    /// index into the owning image's object list
    pub object_index: usize,
    pub bbox: BBox,
}

#[derive(Debug, Clone)]
pub struct Proposal {
    pub id: u64,
    pub image_id: u64,
    pub bbox: BBox,
}

#[derive(Debug, Clone)]
pub struct ObjectScoreRow {
    pub scores: BTreeMap<String, f64>,
    pub background: f64,
}

/// In-memory dataset with referential integrity enforced at load time.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub images: Vec<ImageInfo>,
    /// objects grouped per image, in file order (part records index into these)
    pub objects: BTreeMap<u64, Vec<ObjectGt>>,
    pub parts: Vec<PartGt>,
    pub part_proposals: Vec<Proposal>,
    pub object_proposals: Vec<Proposal>,
    pub part_scores: BTreeMap<u64, BTreeMap<String, f64>>,
    pub object_scores: BTreeMap<u64, ObjectScoreRow>,
    pub object_features: BTreeMap<u64, Vec<f64>>,
}

impl Dataset {
    pub fn image(&self, id: u64) -> Option<&ImageInfo> {
        self.images.iter().find(|im| im.id == id)
    }

    pub fn owner(&self, part: &PartGt) -> &ObjectGt {
        &self.objects[&part.image_id][part.object_index]
    }

    /// Object classes present in the ground truth, sorted.
    pub fn object_classes(&self) -> Vec<String> {
        let set: BTreeSet<&str> =
            self.objects.values().flatten().map(|o| o.class.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn part_proposals_of(&self, image_id: u64) -> impl Iterator<Item = &Proposal> {
        self.part_proposals.iter().filter(move |p| p.image_id == image_id)
    }

    pub fn object_proposals_of(&self, image_id: u64) -> impl Iterator<Item = &Proposal> {
        self.object_proposals.iter().filter(move |p| p.image_id == image_id)
    }

    /// Feature dimension of the object feature table, when present.
    pub fn feature_dim(&self) -> Option<usize> {
        self.object_features.values().next().map(|f| f.len())
    }
}

fn check_in_bounds(
    file: &Path,
    line: usize,
    bbox: &BBox,
    image: &ImageInfo,
) -> Result<()> {
    let eps = 1e-6;
    if bbox.x_min < -eps
        || bbox.y_min < -eps
        || bbox.x_max > image.width + eps
        || bbox.y_max > image.height + eps
    {
        return Err(PipelineError::InvalidField {
            file: file.to_path_buf(),
            line,
            field: "bbox".into(),
            message: format!(
                "box {:?} exceeds image {} bounds {}x{}",
                bbox_to_array(bbox),
                image.id,
                image.width,
                image.height
            ),
        });
    }
    Ok(())
}

/// Loads and cross-validates a dataset directory of JSONL files.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let images_path = dir.join(schema::IMAGES_FILE);
    let image_records: Vec<schema::ImageRecord> = schema::read_jsonl(&images_path)?;
    let mut images = Vec::new();
    let mut image_index: BTreeMap<u64, usize> = BTreeMap::new();
    for (i, r) in image_records.iter().enumerate() {
        if r.width <= 0.0 || r.height <= 0.0 {
            return Err(PipelineError::InvalidField {
                file: images_path.clone(),
                line: i + 1,
                field: "width/height".into(),
                message: "image dimensions must be positive".into(),
            });
        }
        if image_index.insert(r.id, images.len()).is_some() {
            return Err(PipelineError::InvalidField {
                file: images_path.clone(),
                line: i + 1,
                field: "id".into(),
                message: format!("duplicate image id {}", r.id),
            });
        }
        images.push(ImageInfo { id: r.id, width: r.width, height: r.height });
    }

    let objects_path = dir.join(schema::OBJECTS_FILE);
    let object_records: Vec<schema::ObjectRecord> = schema::read_jsonl(&objects_path)?;
    let mut objects: BTreeMap<u64, Vec<ObjectGt>> = BTreeMap::new();
    for (i, r) in object_records.iter().enumerate() {
        let line = i + 1;
        let idx = *image_index.get(&r.image_id).ok_or_else(|| PipelineError::Integrity(format!(
            "{}:{line}: object references unknown image {}",
            objects_path.display(),
            r.image_id
        )))?;
        let bbox = bbox_from_array(&objects_path, line, r.bbox)?;
        check_in_bounds(&objects_path, line, &bbox, &images[idx])?;
        objects.entry(r.image_id).or_default().push(ObjectGt {
            image_id: r.image_id,
            class: r.class.clone(),
            bbox,
            occluded: r.occluded,
        });
    }

    let parts_path = dir.join(schema::PARTS_FILE);
    let part_records: Vec<schema::PartRecord> = schema::read_jsonl(&parts_path)?;
    let mut parts = Vec::new();
    for (i, r) in part_records.iter().enumerate() {
        let line = i + 1;
        let idx = *image_index.get(&r.image_id).ok_or_else(|| PipelineError::Integrity(format!(
            "{}:{line}: part references unknown image {}",
            parts_path.display(),
            r.image_id
        )))?;
        let owners = objects.get(&r.image_id).map(|v| v.len()).unwrap_or(0);
        if r.object_index >= owners {
            return Err(PipelineError::Integrity(format!(
                "{}:{line}: part references object index {} but image {} has {} objects",
                parts_path.display(),
                r.object_index,
                r.image_id,
                owners
            )));
        }
        let bbox = bbox_from_array(&parts_path, line, r.bbox)?;
        check_in_bounds(&parts_path, line, &bbox, &images[idx])?;
        parts.push(PartGt {
            image_id: r.image_id,
            class: r.class.clone(),
            object_index: r.object_index,
            bbox,
        });
    }

    let load_proposals = |name: &str| -> Result<Vec<Proposal>> {
        let path = dir.join(name);
        let records: Vec<schema::ProposalRecord> = schema::read_jsonl(&path)?;
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, r) in records.iter().enumerate() {
            let line = i + 1;
            let idx = *image_index.get(&r.image_id).ok_or_else(|| PipelineError::Integrity(
                format!("{}:{line}: proposal references unknown image {}", path.display(), r.image_id),
            ))?;
            if !seen.insert(r.id) {
                return Err(PipelineError::InvalidField {
                    file: path.clone(),
                    line,
                    field: "id".into(),
                    message: format!("duplicate proposal id {}", r.id),
                });
            }
            let bbox = bbox_from_array(&path, line, r.bbox)?;
            check_in_bounds(&path, line, &bbox, &images[idx])?;
            out.push(Proposal { id: r.id, image_id: r.image_id, bbox });
        }
        Ok(out)
    };
    let part_proposals = load_proposals(schema::PART_PROPOSALS_FILE)?;
    let object_proposals = load_proposals(schema::OBJECT_PROPOSALS_FILE)?;

    let part_scores_path = dir.join(schema::PART_SCORES_FILE);
    let score_records: Vec<schema::PartScoreRecord> = schema::read_jsonl_optional(&part_scores_path)?;
    let mut part_scores = BTreeMap::new();
    for r in &score_records {
        part_scores.insert(r.proposal_id, r.scores.clone());
    }
    if !part_scores.is_empty() {
        for p in &part_proposals {
            if !part_scores.contains_key(&p.id) {
                return Err(PipelineError::Integrity(format!(
                    "part score table has no row for proposal {}",
                    p.id
                )));
            }
        }
    }

    let object_scores_path = dir.join(schema::OBJECT_SCORES_FILE);
    let oscore_records: Vec<schema::ObjectScoreRecord> =
        schema::read_jsonl_optional(&object_scores_path)?;
    let mut object_scores = BTreeMap::new();
    for r in &oscore_records {
        object_scores.insert(
            r.proposal_id,
            ObjectScoreRow { scores: r.scores.clone(), background: r.background },
        );
    }
    if !object_scores.is_empty() {
        for p in &object_proposals {
            if !object_scores.contains_key(&p.id) {
                return Err(PipelineError::Integrity(format!(
                    "object score table has no row for proposal {}",
                    p.id
                )));
            }
        }
    }

    let features_path = dir.join(schema::OBJECT_FEATURES_FILE);
    let feature_records: Vec<schema::ObjectFeatureRecord> = schema::read_jsonl_optional(&features_path)?;
    let mut object_features: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    let mut dim = None;
    for r in &feature_records {
        match dim {
            None => dim = Some(r.feature.len()),
            Some(d) if d != r.feature.len() => {
                return Err(PipelineError::Integrity(format!(
                    "object feature rows disagree on dimension: {} vs {}",
                    d,
                    r.feature.len()
                )))
            }
            _ => {}
        }
        object_features.insert(r.proposal_id, r.feature.clone());
    }

    Ok(Dataset {
        images,
        objects,
        parts,
        part_proposals,
        object_proposals,
        part_scores,
        object_scores,
        object_features,
    })
}

/// Serializes a dataset back into the JSONL bundle. Record order follows the
/// in-memory order, so load/write round trips are lossless.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|source| PipelineError::Io { path: dir.to_path_buf(), source })?;
    let images: Vec<schema::ImageRecord> = dataset
        .images
        .iter()
        .map(|im| schema::ImageRecord { id: im.id, width: im.width, height: im.height })
        .collect();
    schema::write_jsonl(&dir.join(schema::IMAGES_FILE), &images)?;

    let objects: Vec<schema::ObjectRecord> = dataset
        .objects
        .values()
        .flatten()
        .map(|o| schema::ObjectRecord {
            image_id: o.image_id,
            class: o.class.clone(),
            bbox: bbox_to_array(&o.bbox),
            occluded: o.occluded,
        })
        .collect();
    schema::write_jsonl(&dir.join(schema::OBJECTS_FILE), &objects)?;

    let parts: Vec<schema::PartRecord> = dataset
        .parts
        .iter()
        .map(|p| schema::PartRecord {
            image_id: p.image_id,
            class: p.class.clone(),
            object_index: p.object_index,
            bbox: bbox_to_array(&p.bbox),
        })
        .collect();
    schema::write_jsonl(&dir.join(schema::PARTS_FILE), &parts)?;

    let to_records = |props: &[Proposal]| -> Vec<schema::ProposalRecord> {
        props
            .iter()
            .map(|p| schema::ProposalRecord { id: p.id, image_id: p.image_id, bbox: bbox_to_array(&p.bbox) })
            .collect()
    };
    schema::write_jsonl(&dir.join(schema::PART_PROPOSALS_FILE), &to_records(&dataset.part_proposals))?;
    schema::write_jsonl(&dir.join(schema::OBJECT_PROPOSALS_FILE), &to_records(&dataset.object_proposals))?;

    if !dataset.part_scores.is_empty() {
        let records: Vec<schema::PartScoreRecord> = dataset
            .part_scores
            .iter()
            .map(|(&id, scores)| schema::PartScoreRecord { proposal_id: id, scores: scores.clone() })
            .collect();
        schema::write_jsonl(&dir.join(schema::PART_SCORES_FILE), &records)?;
    }
    if !dataset.object_scores.is_empty() {
        let records: Vec<schema::ObjectScoreRecord> = dataset
            .object_scores
            .iter()
            .map(|(&id, row)| schema::ObjectScoreRecord {
                proposal_id: id,
                scores: row.scores.clone(),
                background: row.background,
            })
            .collect();
        schema::write_jsonl(&dir.join(schema::OBJECT_SCORES_FILE), &records)?;
    }
    if !dataset.object_features.is_empty() {
        let records: Vec<schema::ObjectFeatureRecord> = dataset
            .object_features
            .iter()
            .map(|(&id, feature)| schema::ObjectFeatureRecord { proposal_id: id, feature: feature.clone() })
            .collect();
        schema::write_jsonl(&dir.join(schema::OBJECT_FEATURES_FILE), &records)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Part-class catalog
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartClassStatus {
    Kept,
    MergedInto,
    DiscardedTiny,
    DiscardedRare,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub name: String,
    pub object_class: String,
    pub mode_count: usize,
    pub status: PartClassStatus,
    /// canonical name this raw class was folded into (merged entries only)
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merged_into: Option<String>,
    pub instance_count: usize,
    pub avg_width: f64,
    pub avg_height: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PartClassCatalog {
    pub entries: Vec<CatalogEntry>,
}

impl PartClassCatalog {
    pub fn kept(&self) -> impl Iterator<Item = &CatalogEntry> {
        self.entries.iter().filter(|e| e.status == PartClassStatus::Kept)
    }

    pub fn entry(&self, name: &str) -> Option<&CatalogEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Canonical name for a raw part class: follows a merge link if present,
    /// otherwise the name itself.
    pub fn canonical(&self, raw: &str) -> Option<&str> {
        let entry = self.entry(raw)?;
        match &entry.merged_into {
            Some(target) => Some(target.as_str()),
            None => Some(entry.name.as_str()),
        }
    }
}

/// Resolves a raw name through the merge table, erroring on cycles.
fn resolve_merge(merge_table: &BTreeMap<String, String>, raw: &str) -> Result<String> {
    let mut current = raw.to_string();
    let mut seen = BTreeSet::new();
    while let Some(next) = merge_table.get(&current) {
        if !seen.insert(current.clone()) {
            return Err(PipelineError::MergeCycle(raw.to_string()));
        }
        if *next == current {
            break;
        }
        current = next.clone();
    }
    if seen.contains(&current) {
        return Err(PipelineError::MergeCycle(raw.to_string()));
    }
    Ok(current)
}

/// Builds the part-class catalog from raw annotations: merge-table unification
/// first, then size and frequency filters on the unified classes.
pub fn preprocess_catalog(
    dataset: &Dataset,
    merge_table: &BTreeMap<String, String>,
    min_avg_size: f64,
    min_count: usize,
) -> Result<PartClassCatalog> {
    // canonical name per raw class
    let raw_names: BTreeSet<&str> = dataset.parts.iter().map(|p| p.class.as_str()).collect();
    let mut canonical: BTreeMap<String, String> = BTreeMap::new();
    for raw in &raw_names {
        canonical.insert(raw.to_string(), resolve_merge(merge_table, raw)?);
    }

    // stats per canonical class
    struct Stats {
        count: usize,
        sum_w: f64,
        sum_h: f64,
        object_classes: BTreeSet<String>,
    }
    let mut stats: BTreeMap<String, Stats> = BTreeMap::new();
    for part in &dataset.parts {
        let name = canonical[&part.class].clone();
        let owner = dataset.owner(part);
        let s = stats.entry(name).or_insert(Stats {
            count: 0,
            sum_w: 0.0,
            sum_h: 0.0,
            object_classes: BTreeSet::new(),
        });
        s.count += 1;
        s.sum_w += part.bbox.width();
        s.sum_h += part.bbox.height();
        s.object_classes.insert(owner.class.clone());
    }

    let mut entries = Vec::new();
    for (name, s) in &stats {
        if s.object_classes.len() != 1 {
            return Err(PipelineError::Integrity(format!(
                "part class `{name}` is owned by multiple object classes: {:?}",
                s.object_classes
            )));
        }
        let avg_w = s.sum_w / s.count as f64;
        let avg_h = s.sum_h / s.count as f64;
        let status = if avg_w <= min_avg_size && avg_h <= min_avg_size {
            PartClassStatus::DiscardedTiny
        } else if s.count < min_count {
            PartClassStatus::DiscardedRare
        } else {
            PartClassStatus::Kept
        };
        entries.push(CatalogEntry {
            name: name.clone(),
            object_class: s.object_classes.iter().next().unwrap().clone(),
            mode_count: 1,
            status,
            merged_into: None,
            instance_count: s.count,
            avg_width: avg_w,
            avg_height: avg_h,
        });
    }
    // record merged raw names pointing at their canonical class
    for (raw, canon) in &canonical {
        if raw != canon {
            let target = stats.get(canon);
            entries.push(CatalogEntry {
                name: raw.clone(),
                object_class: target
                    .map(|s| s.object_classes.iter().next().unwrap().clone())
                    .unwrap_or_default(),
                mode_count: 0,
                status: PartClassStatus::MergedInto,
                merged_into: Some(canon.clone()),
                instance_count: 0,
                avg_width: 0.0,
                avg_height: 0.0,
            });
        }
    }
    entries.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(PartClassCatalog { entries })
}

/// Rewrites the dataset's part annotations and score tables to the canonical
/// kept classes: merged names unified, discarded classes dropped.
pub fn apply_catalog(dataset: &Dataset, catalog: &PartClassCatalog) -> Dataset {
    let mut out = dataset.clone();
    out.parts = dataset
        .parts
        .iter()
        .filter_map(|p| {
            let canon = catalog.canonical(&p.class)?;
            let entry = catalog.entry(canon)?;
            (entry.status == PartClassStatus::Kept).then(|| {
                let mut part = p.clone();
                part.class = canon.to_string();
                part
            })
        })
        .collect();
    out.part_scores = dataset
        .part_scores
        .iter()
        .map(|(&id, scores)| {
            let mut merged: BTreeMap<String, f64> = BTreeMap::new();
            for (raw, &v) in scores {
                let canon = catalog.canonical(raw).unwrap_or(raw.as_str());
                let keep = catalog
                    .entry(canon)
                    .map_or(true, |e| e.status == PartClassStatus::Kept);
                if keep {
                    // merged columns fold by max: the proposal looks like the
                    // canonical class as much as its best subdivision
                    let slot = merged.entry(canon.to_string()).or_insert(f64::NEG_INFINITY);
                    *slot = slot.max(v);
                }
            }
            (id, merged)
        })
        .collect();
    out
}

// ---------------------------------------------------------------------------
// Relative-location priors
// ---------------------------------------------------------------------------

/// Extent of the normalized frame: part boxes are clamped into
/// `[-0.5, 1.5]^2` of the owner box before rasterization.
pub const NORM_MIN: f64 = -0.5;
pub const NORM_MAX: f64 = 1.5;

pub const DEFAULT_GRID: usize = 64;
pub const MAX_MODES: usize = 4;

const HIST_BINS: usize = 32;
const PEAK_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorEntry {
    pub part_class: String,
    pub object_class: String,
    pub mode_count: usize,
    /// G x G accumulated mass over the normalized frame, row-major
    pub heatmap: Vec<f64>,
    pub grid: usize,
    /// equal-width mode intervals on the horizontal axis, as (start, end)
    pub intervals: Vec<(f64, f64)>,
    /// mean normalized box per mode, when the mode saw instances
    pub mode_means: Vec<Option<[f64; 4]>>,
    pub instance_count: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PriorModel {
    pub entries: Vec<PriorEntry>,
}

impl PriorModel {
    pub fn entry(&self, part_class: &str) -> Option<&PriorEntry> {
        self.entries.iter().find(|e| e.part_class == part_class)
    }
}

/// Part box in the owner's unit frame, clamped to the normalized extent.
pub fn normalize_part(owner: &BBox, part: &BBox) -> [f64; 4] {
    let nx0 = (part.x_min - owner.x_min) / owner.width();
    let ny0 = (part.y_min - owner.y_min) / owner.height();
    let nx1 = (part.x_max - owner.x_min) / owner.width();
    let ny1 = (part.y_max - owner.y_min) / owner.height();
    [
        nx0.clamp(NORM_MIN, NORM_MAX),
        ny0.clamp(NORM_MIN, NORM_MAX),
        nx1.clamp(NORM_MIN, NORM_MAX),
        ny1.clamp(NORM_MIN, NORM_MAX),
    ]
}

/// Counts modes of the horizontal center distribution: 32-bin histogram,
/// 3-bin moving average, plateaus that are at least `PEAK_FRACTION` of the
/// global maximum and strictly higher than both sides; capped at
/// [`MAX_MODES`].
pub fn estimate_mode_count(centers_x: &[f64]) -> usize {
    if centers_x.is_empty() {
        return 1;
    }
    let mut hist = [0.0f64; HIST_BINS];
    for &c in centers_x {
        let b = ((c.clamp(0.0, 1.0)) * HIST_BINS as f64) as usize;
        hist[b.min(HIST_BINS - 1)] += 1.0;
    }
    let smooth: Vec<f64> = (0..HIST_BINS)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(HIST_BINS - 1);
            let mut sum = 0.0;
            for h in &hist[lo..=hi] {
                sum += h;
            }
            sum / 3.0
        })
        .collect();
    let max = smooth.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return 1;
    }
    let floor = PEAK_FRACTION * max;
    let mut peaks = 0usize;
    let mut i = 0;
    while i < HIST_BINS {
        if smooth[i] < floor {
            i += 1;
            continue;
        }
        // extend over the plateau of equal values
        let mut j = i;
        while j + 1 < HIST_BINS && smooth[j + 1] == smooth[i] {
            j += 1;
        }
        let left_lower = i == 0 || smooth[i - 1] < smooth[i];
        let right_lower = j == HIST_BINS - 1 || smooth[j + 1] < smooth[i];
        if left_lower && right_lower {
            peaks += 1;
        }
        i = j + 1;
    }
    peaks.clamp(1, MAX_MODES)
}

fn rasterize(heatmap: &mut [f64], grid: usize, norm: &[f64; 4]) {
    let span = NORM_MAX - NORM_MIN;
    let cell = span / grid as f64;
    let area = (norm[2] - norm[0]) * (norm[3] - norm[1]);
    if area <= 0.0 {
        // degenerate after clamping: deposit the full unit of mass in one cell
        let cx = (((norm[0] + norm[2]) * 0.5 - NORM_MIN) / cell) as usize;
        let cy = (((norm[1] + norm[3]) * 0.5 - NORM_MIN) / cell) as usize;
        heatmap[cy.min(grid - 1) * grid + cx.min(grid - 1)] += 1.0;
        return;
    }
    let gx0 = ((norm[0] - NORM_MIN) / cell).floor().max(0.0) as usize;
    let gy0 = ((norm[1] - NORM_MIN) / cell).floor().max(0.0) as usize;
    let gx1 = (((norm[2] - NORM_MIN) / cell).ceil() as usize).min(grid);
    let gy1 = (((norm[3] - NORM_MIN) / cell).ceil() as usize).min(grid);
    for gy in gy0..gy1 {
        for gx in gx0..gx1 {
            let cx0 = NORM_MIN + gx as f64 * cell;
            let cy0 = NORM_MIN + gy as f64 * cell;
            let ow = (norm[2].min(cx0 + cell) - norm[0].max(cx0)).max(0.0);
            let oh = (norm[3].min(cy0 + cell) - norm[1].max(cy0)).max(0.0);
            heatmap[gy * grid + gx] += ow * oh / area;
        }
    }
}

/// Builds the prior entry for one kept part class: accumulated heatmap over
/// the normalized frame, estimated (or overridden) mode count, equal-width
/// mode intervals and per-mode mean boxes.
pub fn build_prior(
    dataset: &Dataset,
    catalog: &PartClassCatalog,
    part_class: &str,
    grid: usize,
    mode_override: Option<usize>,
) -> Result<PriorEntry> {
    let entry = catalog
        .entry(part_class)
        .filter(|e| e.status == PartClassStatus::Kept)
        .ok_or_else(|| PipelineError::EmptyPartClass(part_class.to_string()))?;
    let mut normalized = Vec::new();
    for part in dataset.parts.iter().filter(|p| p.class == part_class) {
        let owner = dataset.owner(part);
        normalized.push(normalize_part(&owner.bbox, &part.bbox));
    }
    if normalized.is_empty() {
        return Err(PipelineError::EmptyPartClass(part_class.to_string()));
    }

    let mut heatmap = vec![0.0; grid * grid];
    for n in &normalized {
        rasterize(&mut heatmap, grid, n);
    }

    let centers: Vec<f64> = normalized.iter().map(|n| 0.5 * (n[0] + n[2])).collect();
    let mode_count = match mode_override {
        Some(m) if m >= 1 => m,
        _ => estimate_mode_count(&centers),
    };
    let intervals: Vec<(f64, f64)> = (0..mode_count)
        .map(|i| (i as f64 / mode_count as f64, (i + 1) as f64 / mode_count as f64))
        .collect();

    let mut mode_sums: Vec<([f64; 4], usize)> = vec![([0.0; 4], 0); mode_count];
    for n in &normalized {
        let cx = 0.5 * (n[0] + n[2]);
        let m = mode_for_center(cx, mode_count);
        let (sum, count) = &mut mode_sums[m];
        for k in 0..4 {
            sum[k] += n[k];
        }
        *count += 1;
    }
    let mode_means = mode_sums
        .iter()
        .map(|(sum, count)| {
            (*count > 0).then(|| {
                let mut mean = *sum;
                for v in &mut mean {
                    *v /= *count as f64;
                }
                mean
            })
        })
        .collect();

    Ok(PriorEntry {
        part_class: part_class.to_string(),
        object_class: entry.object_class.clone(),
        mode_count,
        heatmap,
        grid,
        intervals,
        mode_means,
        instance_count: normalized.len(),
    })
}

/// Interval index of a normalized horizontal center under the equal split.
pub fn mode_for_center(cx: f64, mode_count: usize) -> usize {
    ((cx.clamp(0.0, 1.0) * mode_count as f64) as usize).min(mode_count - 1)
}

/// Assigns an object's part boxes to the `mode_count` equal horizontal
/// intervals of the object frame. When several parts land in one interval a
/// single one is picked uniformly at random; empty intervals come back as
/// `None`.
pub fn assign_modes<R: Rng>(
    object: &BBox,
    parts: &[BBox],
    mode_count: usize,
    rng: &mut R,
) -> Vec<Option<usize>> {
    assert!(mode_count >= 1);
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); mode_count];
    for (i, part) in parts.iter().enumerate() {
        let (cx, _) = part.center();
        let norm = (cx - object.x_min) / object.width();
        buckets[mode_for_center(norm, mode_count)].push(i);
    }
    buckets
        .into_iter()
        .map(|candidates| match candidates.len() {
            0 => None,
            1 => Some(candidates[0]),
            n => Some(candidates[rng.gen_range(0..n)]),
        })
        .collect()
}
