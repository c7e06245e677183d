//! Bimanual pair matching: Hungarian assignment, keypoint-distance losses
//! for set prediction, pair quality scoring, collision filtering, and the
//! anchor-best pair construction used to build bimanual supervision.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{
    collide_obb_mesh, collide_obb_obb, gripper_keypoints, gripper_obbs, palm_collision_box,
    GraspPose, GripperSpec, TriMesh,
};
use crate::quality::{bimanual_quality_with, QualityConfig};
use crate::sampler::GraspSet;

pub type CostMatrix = DMatrix<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// (prediction index, ground-truth index), sorted by prediction index
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

#[derive(Debug, Clone)]
pub struct BimanualGrasp {
    pub g1: GraspPose,
    pub g2: GraspPose,
    pub quality: f64,
}

/// Which arm ordering of the target minimized the matching cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArmOrder {
    Direct,
    Swapped,
}

/// Minimum-cost bipartite assignment (shortest augmenting path, O(n^3)).
/// Rectangular inputs are padded with zero-cost dummies on the smaller
/// side; dummy matches are omitted from the result.
pub fn hungarian(cost: &CostMatrix) -> Result<Assignment> {
    let (rows, cols) = cost.shape();
    if cost.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidCost);
    }
    let n = rows.max(cols);
    let at = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            cost[(i, j)]
        } else {
            0.0
        }
    };

    // potentials and column matching, 1-indexed with column 0 as scratch
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j] = row matched to column j
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs = Vec::new();
    let mut total_cost = 0.0;
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i - 1 < rows && j - 1 < cols {
            pairs.push((i - 1, j - 1));
            total_cost += cost[(i - 1, j - 1)];
        }
    }
    pairs.sort_unstable();
    Ok(Assignment { pairs, total_cost })
}

/// Mean Euclidean distance between corresponding gripper keypoints.
pub fn l_dist(g: &GraspPose, g_hat: &GraspPose, spec: &GripperSpec) -> f64 {
    let a = gripper_keypoints(g, spec);
    let b = gripper_keypoints(g_hat, spec);
    a.iter().zip(&b).map(|(x, y)| (x - y).norm()).sum::<f64>() / 5.0
}

/// Pose distance for both arms plus the L1 quality term.
pub fn l_bimanual(b: &BimanualGrasp, b_hat: &BimanualGrasp, spec: &GripperSpec) -> f64 {
    l_dist(&b.g1, &b_hat.g1, spec) + l_dist(&b.g2, &b_hat.g2, spec) + (b.quality - b_hat.quality).abs()
}

/// Pose-only matching cost, minimized over the two arm orderings of the
/// target (quality is deliberately excluded during matching).
pub fn bimanual_match_cost(
    b: &BimanualGrasp,
    b_hat: &BimanualGrasp,
    spec: &GripperSpec,
) -> (f64, ArmOrder) {
    let direct = l_dist(&b.g1, &b_hat.g1, spec) + l_dist(&b.g2, &b_hat.g2, spec);
    let swapped = l_dist(&b.g1, &b_hat.g2, spec) + l_dist(&b.g2, &b_hat.g1, spec);
    if swapped < direct {
        (swapped, ArmOrder::Swapped)
    } else {
        (direct, ArmOrder::Direct)
    }
}

fn swap_arms(b: &BimanualGrasp) -> BimanualGrasp {
    BimanualGrasp {
        g1: b.g2.clone(),
        g2: b.g1.clone(),
        quality: b.quality,
    }
}

/// Hungarian-matched set-prediction loss over single grasps and bimanual
/// pairs. Bimanual targets are evaluated in the arm ordering chosen by the
/// matching cost, with the quality term included in the loss.
pub fn grasp_loss(
    pred_single: &GraspSet,
    gt_single: &GraspSet,
    pred_bi: &[BimanualGrasp],
    gt_bi: &[BimanualGrasp],
    spec: &GripperSpec,
) -> Result<(f64, Assignment, Assignment)> {
    if gt_single.grasps.is_empty() || gt_bi.is_empty() {
        return Err(Error::EmptyTargets);
    }
    let sp = &pred_single.grasps;
    let sg = &gt_single.grasps;
    let single_cost =
        CostMatrix::from_fn(sp.len(), sg.len(), |i, j| l_dist(&sp[i], &sg[j], spec));
    let single = hungarian(&single_cost)?;

    let bi_cost = CostMatrix::from_fn(pred_bi.len(), gt_bi.len(), |i, j| {
        bimanual_match_cost(&pred_bi[i], &gt_bi[j], spec).0
    });
    let bi = hungarian(&bi_cost)?;

    let mut loss = single.total_cost;
    for &(i, j) in &bi.pairs {
        let (_, order) = bimanual_match_cost(&pred_bi[i], &gt_bi[j], spec);
        let target = match order {
            ArmOrder::Direct => gt_bi[j].clone(),
            ArmOrder::Swapped => swap_arms(&gt_bi[j]),
        };
        loss += l_bimanual(&pred_bi[i], &target, spec);
    }
    Ok((loss, single, bi))
}

/// Symmetric matrix of combined pair qualities; the diagonal carries a
/// -inf sentinel so an anchor never pairs with itself. Degenerate pairs
/// (either grasp missing contacts) score 0.
pub fn pair_quality_matrix(
    grasps: &GraspSet,
    mesh: &TriMesh,
    weights: [f64; 3],
) -> Result<CostMatrix> {
    pair_quality_matrix_with(grasps, mesh, weights, &QualityConfig::default())
}

pub fn pair_quality_matrix_with(
    grasps: &GraspSet,
    mesh: &TriMesh,
    weights: [f64; 3],
    cfg: &QualityConfig,
) -> Result<CostMatrix> {
    let n = grasps.grasps.len();
    if n < 2 {
        return Err(Error::InvalidArgument("pair scoring needs >= 2 grasps".into()));
    }
    let upper: Vec<((usize, usize), f64)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(i, j)| {
            let q = match bimanual_quality_with(
                &grasps.grasps[i],
                &grasps.grasps[j],
                mesh,
                weights,
                cfg,
            ) {
                Ok(b) => b.combined,
                Err(Error::DegenerateGrasp(_)) => 0.0,
                Err(_) => 0.0,
            };
            ((i, j), q)
        })
        .collect();
    let mut m = CostMatrix::from_element(n, n, f64::NEG_INFINITY);
    for ((i, j), q) in upper {
        m[(i, j)] = q;
        m[(j, i)] = q;
    }
    Ok(m)
}

/// True when the two grippers do not intersect each other and neither palm
/// intersects the object. Finger boxes may straddle the object (the jaws
/// legitimately contact it); the palm must stay clear, including the case
/// of being buried inside the volume without touching any triangle.
pub fn collision_free_pair(
    g1: &GraspPose,
    g2: &GraspPose,
    mesh: &TriMesh,
    spec: &GripperSpec,
) -> bool {
    let a = gripper_obbs(g1, spec);
    let b = gripper_obbs(g2, spec);
    for x in &a {
        for y in &b {
            if collide_obb_obb(x, y) {
                return false;
            }
        }
    }
    for g in [g1, g2] {
        let palm = palm_collision_box(g, spec);
        if collide_obb_mesh(&palm, mesh) || mesh.contains(palm.center) {
            return false;
        }
    }
    true
}

/// For each anchor grasp, pair it with its highest-quality collision-free
/// partner (lowest index on ties); anchors with no feasible partner are
/// dropped.
pub fn bpm_match(
    grasps: &GraspSet,
    mesh: &TriMesh,
    spec: &GripperSpec,
    weights: [f64; 3],
) -> Result<Vec<BimanualGrasp>> {
    bpm_match_with(grasps, mesh, spec, weights, &QualityConfig::default())
}

pub fn bpm_match_with(
    grasps: &GraspSet,
    mesh: &TriMesh,
    spec: &GripperSpec,
    weights: [f64; 3],
    cfg: &QualityConfig,
) -> Result<Vec<BimanualGrasp>> {
    let n = grasps.grasps.len();
    let q = pair_quality_matrix_with(grasps, mesh, weights, cfg)?;
    let free: Vec<Vec<bool>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    j > i && collision_free_pair(&grasps.grasps[i], &grasps.grasps[j], mesh, spec)
                })
                .collect()
        })
        .collect();
    let is_free = |i: usize, j: usize| {
        if i < j {
            free[i][j]
        } else {
            free[j][i]
        }
    };
    let mut out = Vec::new();
    for i in 0..n {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if i == j || !is_free(i, j) {
                continue;
            }
            let qij = q[(i, j)];
            if best.map_or(true, |(_, bq)| qij > bq) {
                best = Some((j, qij));
            }
        }
        if let Some((j, qij)) = best {
            out.push(BimanualGrasp {
                g1: grasps.grasps[i].clone(),
                g2: grasps.grasps[j].clone(),
                quality: qij,
            });
        }
    }
    Ok(out)
}
