//! Run configuration shared by the CLI stages. A copy is serialized next to
//! every artifact so runs can be reproduced from their outputs.

use serde::{Deserialize, Serialize};

use crate::train::OffsetRegressorConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// per-class NMS threshold for object and part detections
    pub nms_iou: f64,
    /// object proposals below this class score never become detections
    pub score_floor: f64,
    /// containment fraction required of a supporting object box
    pub containment: f64,
    /// grid resolution of the mixing-weight search
    pub grid_step: f64,
    /// evaluation overlap threshold
    pub eval_iou: f64,
    /// part classes with mean width and height both below this are dropped
    pub min_part_size: f64,
    /// part classes with fewer training instances than this are dropped
    pub min_part_count: usize,
    /// spatial prior grid resolution
    pub prior_grid: usize,
    pub regressor: OffsetRegressorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            nms_iou: crate::detect::DEFAULT_NMS_IOU,
            score_floor: crate::detect::DEFAULT_SCORE_FLOOR,
            containment: crate::context::DEFAULT_CONTAINMENT_THRESHOLD,
            grid_step: crate::combine::DEFAULT_GRID_STEP,
            eval_iou: crate::eval::EVAL_IOU,
            min_part_size: 15.0,
            min_part_count: 10,
            prior_grid: crate::data::DEFAULT_GRID,
            regressor: OffsetRegressorConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> crate::error::Result<Self> {
        crate::schema::read_json(path)
    }

    pub fn save(&self, path: &std::path::Path) -> crate::error::Result<()> {
        crate::schema::write_json(path, self)
    }
}
