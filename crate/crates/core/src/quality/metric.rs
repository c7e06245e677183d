//! Combined bimanual grasp quality: force-closure epsilon, torque balance,
//! and grasp-map dexterity, blended into one weighted score.

use nalgebra::DMatrix;

use super::contact::tangent_basis;
use super::{contact_wrenches, epsilon_quality_with, grasp_contacts, Contact, EpsilonConfig};
use crate::error::{Error, Result};
use crate::geometry::{GraspPose, TriMesh, Vec3};

#[derive(Debug, Clone)]
pub struct QualityConfig {
    pub friction_mu: f64,
    pub cone_edges: usize,
    /// epsilon value mapped to a normalized component of 1.0
    pub epsilon_max: f64,
    pub epsilon: EpsilonConfig,
}

impl Default for QualityConfig {
    fn default() -> Self {
        QualityConfig {
            friction_mu: 0.5,
            cone_edges: 8,
            epsilon_max: 1.0,
            epsilon: EpsilonConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityBreakdown {
    pub epsilon: f64,
    pub torque_balance: f64,
    pub dexterity: f64,
    pub combined: f64,
}

/// Representative point for one arm: midpoint of its two contacts, or the
/// palm center when the jaws close on nothing.
fn arm_center(g: &GraspPose, mesh: &TriMesh, mu: f64) -> Vec3 {
    let contacts = grasp_contacts(g, mesh, mu);
    if contacts.len() == 2 {
        (contacts[0].point + contacts[1].point) / 2.0
    } else {
        g.translation
    }
}

/// How symmetrically the two arms straddle the center of mass: 1 when the
/// midpoint of the arm centers sits on the com, 0 once it is off by half
/// the object scale or more.
pub fn torque_balance(g1: &GraspPose, g2: &GraspPose, mesh: &TriMesh) -> f64 {
    torque_balance_with(g1, g2, mesh, &QualityConfig::default())
}

pub fn torque_balance_with(
    g1: &GraspPose,
    g2: &GraspPose,
    mesh: &TriMesh,
    cfg: &QualityConfig,
) -> f64 {
    let c1 = arm_center(g1, mesh, cfg.friction_mu);
    let c2 = arm_center(g2, mesh, cfg.friction_mu);
    let mid = (c1 + c2) / 2.0;
    let offset = (mid - mesh.center_of_mass).norm();
    1.0 - (offset / (mesh.scale / 2.0)).min(1.0)
}

fn sorted_contacts(g1: &GraspPose, g2: &GraspPose, mesh: &TriMesh, mu: f64) -> (usize, usize, Vec<Contact>) {
    let c1 = grasp_contacts(g1, mesh, mu);
    let c2 = grasp_contacts(g2, mesh, mu);
    let (n1, n2) = (c1.len(), c2.len());
    let mut all: Vec<Contact> = c1.into_iter().chain(c2).collect();
    // canonical order so the result is exactly symmetric in (g1, g2)
    all.sort_by(|a, b| {
        let ka = [a.point.x, a.point.y, a.point.z, a.normal.x, a.normal.y, a.normal.z];
        let kb = [b.point.x, b.point.y, b.point.z, b.normal.x, b.normal.y, b.normal.z];
        ka.iter()
            .zip(kb.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    (n1, n2, all)
}

fn grasp_map(contacts: &[Contact], com: Vec3, lambda: f64) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(6, 3 * contacts.len());
    for (k, c) in contacts.iter().enumerate() {
        let (t1, t2) = tangent_basis(c.normal);
        let r = c.point - com;
        for (j, axis) in [t1, t2, -c.normal].into_iter().enumerate() {
            let tq = r.cross(&axis) / lambda;
            for i in 0..3 {
                g[(i, 3 * k + j)] = axis[i];
                g[(3 + i, 3 * k + j)] = tq[i];
            }
        }
    }
    g
}

/// Isotropy (sigma_min / sigma_max) of the combined wrench-transmission map
/// over both arms' contacts; 0 when the map is rank-deficient.
pub fn dexterity(g1: &GraspPose, g2: &GraspPose, mesh: &TriMesh) -> Result<f64> {
    dexterity_with(g1, g2, mesh, &QualityConfig::default())
}

pub fn dexterity_with(
    g1: &GraspPose,
    g2: &GraspPose,
    mesh: &TriMesh,
    cfg: &QualityConfig,
) -> Result<f64> {
    let (_, _, contacts) = sorted_contacts(g1, g2, mesh, cfg.friction_mu);
    if contacts.len() < 2 {
        return Err(Error::DegenerateGrasp(format!(
            "dexterity needs >= 2 contacts, found {}",
            contacts.len()
        )));
    }
    let g = grasp_map(&contacts, mesh.center_of_mass, mesh.scale);
    let sv = g.svd(false, false).singular_values;
    let smax = sv.max();
    let smin = sv.min();
    if smax <= 1e-12 {
        return Ok(0.0);
    }
    Ok((smin / smax).clamp(0.0, 1.0))
}

pub fn bimanual_quality(
    g1: &GraspPose,
    g2: &GraspPose,
    mesh: &TriMesh,
    weights: [f64; 3],
) -> Result<QualityBreakdown> {
    bimanual_quality_with(g1, g2, mesh, weights, &QualityConfig::default())
}

pub fn bimanual_quality_with(
    g1: &GraspPose,
    g2: &GraspPose,
    mesh: &TriMesh,
    weights: [f64; 3],
    cfg: &QualityConfig,
) -> Result<QualityBreakdown> {
    let wsum: f64 = weights.iter().sum();
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) || wsum <= 0.0 {
        return Err(Error::InvalidArgument(
            "quality weights must be non-negative with positive sum".into(),
        ));
    }
    let (n1, n2, contacts) = sorted_contacts(g1, g2, mesh, cfg.friction_mu);
    if n1 == 0 || n2 == 0 {
        return Err(Error::DegenerateGrasp(format!(
            "both grasps must touch the object (contacts: {n1}, {n2})"
        )));
    }
    let wrenches = contact_wrenches(
        &contacts,
        mesh.center_of_mass,
        mesh.scale,
        cfg.cone_edges,
    )?;
    let epsilon = epsilon_quality_with(&wrenches, &cfg.epsilon);
    let tb = torque_balance_with(g1, g2, mesh, cfg);
    let g = grasp_map(&contacts, mesh.center_of_mass, mesh.scale);
    let sv = g.svd(false, false).singular_values;
    let dex = if sv.max() <= 1e-12 {
        0.0
    } else {
        (sv.min() / sv.max()).clamp(0.0, 1.0)
    };
    let eps_norm = (epsilon / cfg.epsilon_max).min(1.0);
    let combined = (weights[0] * eps_norm + weights[1] * tb + weights[2] * dex) / wsum;
    Ok(QualityBreakdown {
        epsilon,
        torque_balance: tb,
        dexterity: dex,
        combined,
    })
}
