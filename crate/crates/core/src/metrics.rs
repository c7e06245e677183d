//! Evaluation helpers: quality-ranked pair lists with top-fraction
//! selection, and surface-coverage diversity over a point cloud.

use crate::error::{Error, Result};
use crate::geometry::{gripper_obbs, points_in_obbs, GripperSpec, Obb, PointCloud};
use crate::matcher::BimanualGrasp;

/// Pairs sorted by descending quality; equal qualities keep their
/// insertion order.
#[derive(Debug, Clone, Default)]
pub struct RankedPairs {
    pub pairs: Vec<BimanualGrasp>,
}

impl RankedPairs {
    pub fn new(mut pairs: Vec<BimanualGrasp>) -> Self {
        pairs.sort_by(|a, b| b.quality.partial_cmp(&a.quality).unwrap());
        RankedPairs { pairs }
    }
}

/// First ceil(f * n) pairs of the ranking.
pub fn top_fraction(ranked: &RankedPairs, f: f64) -> Result<Vec<BimanualGrasp>> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fraction {f} outside (0, 1]"
        )));
    }
    let n = ranked.pairs.len();
    let take = ((f * n as f64).ceil() as usize).min(n);
    Ok(ranked.pairs[..take].to_vec())
}

fn pair_obbs(pair: &BimanualGrasp, spec: &GripperSpec) -> Vec<Obb> {
    let mut boxes = gripper_obbs(&pair.g1, spec);
    boxes.extend(gripper_obbs(&pair.g2, spec));
    boxes
}

/// Percentage of cloud points inside any gripper box of any pair, each
/// point counted once no matter how many boxes cover it.
pub fn diversity(cloud: &PointCloud, pairs: &[BimanualGrasp], spec: &GripperSpec) -> f64 {
    if cloud.points.is_empty() || pairs.is_empty() {
        return 0.0;
    }
    let boxes: Vec<Obb> = pairs.iter().flat_map(|p| pair_obbs(p, spec)).collect();
    let mask = points_in_obbs(cloud, &boxes);
    let covered = mask.iter().filter(|&&m| m).count();
    100.0 * covered as f64 / cloud.points.len() as f64
}
