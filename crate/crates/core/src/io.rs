//! JSON interchange for grasp sets and bimanual pairs, plus the diversity
//! CSV layout. The schemas are flat row-major arrays so any language can
//! consume them.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GraspPose, Mat3, Vec3};
use crate::matcher::BimanualGrasp;
use crate::quality::QualityBreakdown;
use crate::sampler::GraspSet;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraspJson {
    /// Row-major 3x3 rotation.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub width: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraspSetJson {
    pub grasps: Vec<GraspJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BreakdownJson {
    pub epsilon: f64,
    pub torque_balance: f64,
    pub dexterity: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairJson {
    pub g1: GraspJson,
    pub g2: GraspJson,
    pub quality: f64,
    /// Present for geometrically scored pairs; network predictions carry
    /// only the scalar quality.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<BreakdownJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairSetJson {
    pub pairs: Vec<PairJson>,
}

impl From<&GraspPose> for GraspJson {
    fn from(g: &GraspPose) -> Self {
        let r = &g.rotation;
        GraspJson {
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [g.translation.x, g.translation.y, g.translation.z],
            width: g.width,
        }
    }
}

impl GraspJson {
    pub fn to_pose(&self) -> Result<GraspPose> {
        let m = &self.rotation;
        let pose = GraspPose {
            rotation: Mat3::new(m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7], m[8]),
            translation: Vec3::new(self.translation[0], self.translation[1], self.translation[2]),
            width: self.width,
        };
        pose.validate()?;
        Ok(pose)
    }
}

impl From<&QualityBreakdown> for BreakdownJson {
    fn from(b: &QualityBreakdown) -> Self {
        BreakdownJson {
            epsilon: b.epsilon,
            torque_balance: b.torque_balance,
            dexterity: b.dexterity,
        }
    }
}

pub fn write_grasp_set(set: &GraspSet, path: &Path) -> Result<()> {
    let doc = GraspSetJson {
        grasps: set.grasps.iter().map(GraspJson::from).collect(),
    };
    let text = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_grasp_set(path: &Path) -> Result<GraspSet> {
    let text = fs::read_to_string(path)?;
    let doc: GraspSetJson =
        serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    let grasps = doc
        .grasps
        .iter()
        .map(|g| g.to_pose())
        .collect::<Result<Vec<_>>>()?;
    Ok(GraspSet {
        grasps,
        source_mesh_id: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    })
}

pub fn write_pairs(
    pairs: &[(BimanualGrasp, Option<QualityBreakdown>)],
    path: &Path,
) -> Result<()> {
    let doc = PairSetJson {
        pairs: pairs
            .iter()
            .map(|(p, b)| PairJson {
                g1: GraspJson::from(&p.g1),
                g2: GraspJson::from(&p.g2),
                quality: p.quality,
                breakdown: b.as_ref().map(BreakdownJson::from),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_pairs(path: &Path) -> Result<Vec<BimanualGrasp>> {
    let text = fs::read_to_string(path)?;
    let doc: PairSetJson =
        serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    doc.pairs
        .iter()
        .map(|p| {
            Ok(BimanualGrasp {
                g1: p.g1.to_pose()?,
                g2: p.g2.to_pose()?,
                quality: p.quality,
            })
        })
        .collect()
}

pub const DIVERSITY_CSV_HEADER: &str = "object_id,n_pairs,fraction,diversity_percent";

pub fn diversity_csv_row(object_id: &str, n_pairs: usize, fraction: f64, diversity: f64) -> String {
    format!("{object_id},{n_pairs},{fraction},{diversity}")
}
