//! Training step (matched set-prediction loss + AdamW) and the
//! finite-difference gradient audit covering every differentiable
//! operation and the end-to-end loss.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{gripper_keypoints, GraspPose, GripperSpec, PointCloud, TriMesh};
use crate::matcher::{bimanual_match_cost, grasp_loss, ArmOrder, BimanualGrasp};
use crate::net::model::{
    bgg_decode, decode_grasp, encoder_forward, init_params, model_forward, multi_head_attention,
    set_abstraction, sgb_attention, sgp_decode, ModelConfig, ModelOutput,
};
use crate::net::params::{ParamStore, TapeParams};
use crate::net::tensor::{layer_norm_rows, linear, softmax_rows, Tape, Var};
use crate::rng::stream_rng;
use crate::sampler::GraspSet;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-4,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Decoupled-weight-decay Adam state, one moment pair per parameter.
pub struct AdamW {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(store: &ParamStore) -> Self {
        AdamW {
            step: 0,
            m: store.params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            v: store.params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
        }
    }

    pub fn apply(&mut self, store: &mut ParamStore, grads: &[Vec<f64>], tc: &TrainConfig) {
        self.step += 1;
        let bc1 = 1.0 - tc.beta1.powi(self.step as i32);
        let bc2 = 1.0 - tc.beta2.powi(self.step as i32);
        for (pi, p) in store.params.iter_mut().enumerate() {
            for (ei, w) in p.data.iter_mut().enumerate() {
                let g = grads[pi][ei];
                let m = &mut self.m[pi][ei];
                let v = &mut self.v[pi][ei];
                *m = tc.beta1 * *m + (1.0 - tc.beta1) * g;
                *v = tc.beta2 * *v + (1.0 - tc.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *w -= tc.lr * tc.weight_decay * *w;
                *w -= tc.lr * mhat / (vhat.sqrt() + tc.eps);
            }
        }
    }
}

pub struct TrainBatch<'a> {
    pub cloud: &'a PointCloud,
    pub gt_singles: &'a GraspSet,
    pub gt_pairs: &'a [BimanualGrasp],
}

/// Keypoint positions of one predicted grasp as tape expressions: the raw
/// 10-value head row decoded exactly like `decode_grasp`, evaluated at the
/// five gripper representation points.
fn diff_keypoints(tape: &mut Tape, row10: Var, spec: &GripperSpec) -> [Var; 5] {
    let a = tape.slice_cols(row10, 0, 3);
    let b = tape.slice_cols(row10, 3, 3);
    let tr = tape.slice_cols(row10, 6, 3);
    let wl = tape.slice_cols(row10, 9, 1);
    let na = tape.rows_dot(a, a);
    let na = tape.add_scalar(na, 1e-18);
    let inv1 = tape.pow(na, -0.5);
    let v1 = tape.mul_col_broadcast(a, inv1);
    let d = tape.rows_dot(v1, b);
    let proj = tape.mul_col_broadcast(v1, d);
    let bp = tape.sub(b, proj);
    let nb = tape.rows_dot(bp, bp);
    let nb = tape.add_scalar(nb, 1e-18);
    let inv3 = tape.pow(nb, -0.5);
    let v3 = tape.mul_col_broadcast(bp, inv3);
    let w = tape.sigmoid(wl);
    let half = tape.scale(w, spec.max_opening / 2.0);
    let hv1 = tape.mul_col_broadcast(v1, half);
    let lv3 = tape.scale(v3, spec.finger_length);
    let base_l = tape.sub(tr, hv1);
    let base_r = tape.add(tr, hv1);
    let tip_l = tape.add(base_l, lv3);
    let tip_r = tape.add(base_r, lv3);
    [tr, base_l, base_r, tip_l, tip_r]
}

/// Differentiable mean keypoint distance against a fixed target pose.
fn diff_l_dist(tape: &mut Tape, row10: Var, gt: &GraspPose, spec: &GripperSpec) -> Var {
    let kps = diff_keypoints(tape, row10, spec);
    let targets = gripper_keypoints(gt, spec);
    let mut total = tape.leaf(1, 1, vec![0.0]);
    for (kp, t) in kps.iter().zip(&targets) {
        let tgt = tape.leaf(1, 3, vec![t.x, t.y, t.z]);
        let diff = tape.sub(*kp, tgt);
        let d2 = tape.rows_dot(diff, diff);
        let d2 = tape.add_scalar(d2, 1e-18);
        let dist = tape.pow(d2, 0.5);
        total = tape.add(total, dist);
    }
    tape.scale(total, 1.0 / 5.0)
}

/// Build the matched set-prediction loss as a tape expression. Returns the
/// loss node along with the plain-valued loss reported by the matcher.
pub fn differentiable_loss(
    tape: &mut Tape,
    out: &ModelOutput,
    gt_singles: &GraspSet,
    gt_pairs: &[BimanualGrasp],
    spec: &GripperSpec,
) -> Result<(Var, f64)> {
    let (value, single_asg, bi_asg) = grasp_loss(&out.singles, gt_singles, &out.pairs, gt_pairs, spec)?;
    let mut total = tape.leaf(1, 1, vec![0.0]);
    for &(i, j) in &single_asg.pairs {
        let row = tape.gather_rows(out.sgp_head, &[i]);
        let term = diff_l_dist(tape, row, &gt_singles.grasps[j], spec);
        total = tape.add(total, term);
    }
    for &(i, j) in &bi_asg.pairs {
        let (_, order) = bimanual_match_cost(&out.pairs[i], &gt_pairs[j], spec);
        let (t1, t2) = match order {
            ArmOrder::Direct => (&gt_pairs[j].g1, &gt_pairs[j].g2),
            ArmOrder::Swapped => (&gt_pairs[j].g2, &gt_pairs[j].g1),
        };
        let row = tape.gather_rows(out.bgg_head, &[i]);
        let r1 = tape.slice_cols(row, 0, 10);
        let r2 = tape.slice_cols(row, 10, 10);
        let d1 = diff_l_dist(tape, r1, t1, spec);
        let d2 = diff_l_dist(tape, r2, t2, spec);
        total = tape.add(total, d1);
        total = tape.add(total, d2);
        let qlogit = tape.slice_cols(row, 20, 1);
        let q = tape.sigmoid(qlogit);
        let qt = tape.leaf(1, 1, vec![gt_pairs[j].quality]);
        let dq = tape.sub(q, qt);
        let ql = tape.abs(dq);
        total = tape.add(total, ql);
    }
    Ok((total, value))
}

/// One optimization step: forward, match against ground truth, backward,
/// AdamW update. Returns the matched loss before the update.
pub fn train_step(
    batch: &TrainBatch,
    cfg: &ModelConfig,
    spec: &GripperSpec,
    store: &mut ParamStore,
    opt: &mut AdamW,
    tc: &TrainConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let mut tp = TapeParams::new(store);
    let out = model_forward(&mut tape, &mut tp, batch.cloud, cfg, spec)?;
    // non-finite predictions poison the matching costs; report divergence
    let (loss_var, loss) =
        match differentiable_loss(&mut tape, &out, batch.gt_singles, batch.gt_pairs, spec) {
            Err(Error::InvalidCost) => return Err(Error::TrainingDiverged),
            other => other?,
        };
    if !loss.is_finite() {
        return Err(Error::TrainingDiverged);
    }
    tape.backward(loss_var);
    let grads = tp.collect_grads(&tape);
    opt.apply(store, &grads, tc);
    Ok(loss)
}

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub rel_err: f64,
}

const FD_STEP: f64 = 1e-5;

fn max_rel_err(
    store: &ParamStore,
    forward: &mut dyn FnMut(&mut Tape, &mut TapeParams) -> Var,
    max_samples: usize,
    sample_seed: u64,
    corrupt: bool,
) -> f64 {
    let mut tape = Tape::new();
    let mut tp = TapeParams::new(store);
    let loss = forward(&mut tape, &mut tp);
    tape.backward(loss);
    let mut grads = tp.collect_grads(&tape);
    if corrupt {
        grads[0][0] += 1.0;
    }
    let mut entries: Vec<(usize, usize)> = store
        .params
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| (0..p.data.len()).map(move |ei| (pi, ei)))
        .collect();
    if corrupt {
        entries.truncate(1);
    } else if entries.len() > max_samples {
        let mut rng = stream_rng(sample_seed, "gradcheck-sample");
        entries.shuffle(&mut rng);
        entries.truncate(max_samples);
        entries.sort_unstable();
    }
    let mut work = store.clone();
    let mut worst = 0.0f64;
    for (pi, ei) in entries {
        let orig = work.params[pi].data[ei];
        let eval = |w: &ParamStore, forward: &mut dyn FnMut(&mut Tape, &mut TapeParams) -> Var| {
            let mut t = Tape::new();
            let mut tpp = TapeParams::new(w);
            let l = forward(&mut t, &mut tpp);
            t.scalar_value(l)
        };
        work.params[pi].data[ei] = orig + FD_STEP;
        let fp = eval(&work, forward);
        work.params[pi].data[ei] = orig - FD_STEP;
        let fm = eval(&work, forward);
        work.params[pi].data[ei] = orig;
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        let analytic = grads[pi][ei];
        let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-6);
        worst = worst.max(rel);
    }
    worst
}

fn op_store(seed: u64, shapes: &[(&str, usize, usize)]) -> ParamStore {
    let mut ps = ParamStore::new();
    for &(name, r, c) in shapes {
        ps.init_matrix(seed, name, r, c);
    }
    ps
}

fn masked_sum(tape: &mut Tape, y: Var, seed: u64) -> Var {
    let (r, c) = tape.shape(y);
    let mut rng = stream_rng(seed, "gradcheck-mask");
    let mask = tape.leaf(r, c, (0..r * c).map(|_| rng.gen_range(0.5..1.5)).collect());
    let p = tape.mul(y, mask);
    tape.sum_all(p)
}

/// One synthetic supervision example on a box cloud, used by the
/// end-to-end gradient check and tests.
pub fn synthetic_batch(seed: u64) -> (PointCloud, GraspSet, Vec<BimanualGrasp>) {
    let mesh = TriMesh::cube(0.1);
    let cloud = crate::geometry::sample_surface_points(&mesh, 64, seed).unwrap();
    let mut rng = stream_rng(seed, "synthetic-gt");
    fn rand_grasp(rng: &mut rand_chacha::ChaCha8Rng) -> GraspPose {
        let raw: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        decode_grasp(&raw, 0.08)
    }
    let singles = GraspSet {
        grasps: (0..3).map(|_| rand_grasp(&mut rng)).collect(),
        source_mesh_id: "synthetic".into(),
    };
    let pairs = (0..2)
        .map(|_| BimanualGrasp {
            g1: rand_grasp(&mut rng),
            g2: rand_grasp(&mut rng),
            quality: rng.gen_range(0.1..0.9),
        })
        .collect();
    (cloud, singles, pairs)
}

/// Run a finite-difference audit (central differences, step 1e-5) over
/// every differentiable operation and the end-to-end training loss.
/// `corrupt` deliberately falsifies one analytic gradient of the named
/// entry — the negative control that proves the audit can fail.
pub fn gradcheck_suite(seed: u64, corrupt: Option<&str>) -> Vec<GradCheckEntry> {
    let mut out = Vec::new();
    let mut run = |name: &str,
                   store: ParamStore,
                   forward: &mut dyn FnMut(&mut Tape, &mut TapeParams) -> Var,
                   max_samples: usize| {
        let bad = corrupt == Some(name);
        let rel = max_rel_err(&store, forward, max_samples, seed ^ 0x9e37, bad);
        out.push(GradCheckEntry {
            name: name.to_string(),
            rel_err: rel,
        });
    };
    let all = usize::MAX;

    // --- tensor primitives ---
    run(
        "matmul",
        op_store(seed, &[("a", 3, 4), ("b", 4, 2)]),
        &mut |t, tp| {
            let a = tp.get(t, "a");
            let b = tp.get(t, "b");
            let y = t.matmul(a, b);
            masked_sum(t, y, seed)
        },
        all,
    );
    run(
        "transpose",
        op_store(seed, &[("a", 3, 4)]),
        &mut |t, tp| {
            let a = tp.get(t, "a");
            let y = t.transpose(a);
            masked_sum(t, y, seed)
        },
        all,
    );
    run(
        "add_sub_mul",
        op_store(seed, &[("a", 3, 4), ("b", 3, 4)]),
        &mut |t, tp| {
            let a = tp.get(t, "a");
            let b = tp.get(t, "b");
            let s = t.add(a, b);
            let d = t.sub(s, b);
            let y = t.mul(d, s);
            masked_sum(t, y, seed)
        },
        all,
    );
    run(
        "scale_add_scalar",
        op_store(seed, &[("a", 2, 5)]),
        &mut |t, tp| {
            let a = tp.get(t, "a");
            let y = t.scale(a, -1.7);
            let y = t.add_scalar(y, 0.4);
            masked_sum(t, y, seed)
        },
        all,
    );
    run(
        "pow",
        op_store(seed, &[("a", 3, 3)]),
        &mut |t, tp| {
            let a = tp.get(t, "a");
            let sq = t.mul(a, a);
            let pos = t.add_scalar(sq, 0.5);
            let y = t.pow(pos, 0.7);
            masked_sum(t, y, seed)
        },
        all,
    );
    run(
        "exp",
        op_store(seed, &[("a", 3, 3)]),
        &mut |t, tp| {
            let a = tp.get(t, "a");
            let y = t.exp(a);
            masked_sum(t, y, seed)
        },
        all,
    );
    run(
        "silu",
        op_store(seed, &[("a", 3, 5)]),
        &mut |t, tp| {
            let a = tp.get(t, "a");
            let s = t.scale(a, 4.0);
            let y = t.silu(s);
            masked_sum(t, y, seed)
        },
        all,
    );
    run(
        "sigmoid",
        op_store(seed, &[("a", 3, 5)]),
        &mut |t, tp| {
            let a = tp.get(t, "a");
            let s = t.scale(a, 4.0);
            let y = t.sigmoid(s);
            masked_sum(t, y, seed)
        },
        all,
    );
    run(
        "abs",
        op_store(seed, &[("a", 3, 4)]),
        &mut |t, tp| {
            let a = tp.get(t, "a");
            let hi = t.add_scalar(a, 2.0);
            let lo = t.add_scalar(a, -2.0);
            let ya = t.abs(hi);
            let yb = t.abs(lo);
            let y = t.add(ya, yb);
            masked_sum(t, y, seed)
        },
        all,
    );
    run(
        "row_col_broadcasts",
        op_store(seed, &[("a", 4, 3), ("r", 1, 3), ("c", 4, 1)]),
        &mut |t, tp| {
            let a = tp.get(t, "a");
            let r = tp.get(t, "r");
            let c = tp.get(t, "c");
            let y = t.add_row_broadcast(a, r);
            let y = t.mul_row_broadcast(y, r);
            let y = t.add_col_broadcast(y, c);
            let y = t.mul_col_broadcast(y, c);
            masked_sum(t, y, seed)
        },
        all,
    );
    run(
        "slice_concat_gather",
        op_store(seed, &[("a", 4, 5)]),
        &mut |t, tp| {
            let a = tp.get(t, "a");
            let s1 = t.slice_cols(a, 1, 2);
            let s2 = t.slice_cols(a, 0, 3);
            let cat = t.concat_cols(&[s1, s2]);
            let y = t.gather_rows(cat, &[2, 0, 0, 3]);
            masked_sum(t, y, seed)
        },
        all,
    );
    run(
        "max_pool_rows",
        op_store(seed, &[("a", 6, 4)]),
        &mut |t, tp| {
            let a = tp.get(t, "a");
            let y = t.max_pool_rows(a, 3);
            masked_sum(t, y, seed)
        },
        all,
    );
    run(
        "rows_dot",
        op_store(seed, &[("a", 4, 3), ("b", 4, 3)]),
        &mut |t, tp| {
            let a = tp.get(t, "a");
            let b = tp.get(t, "b");
            let y = t.rows_dot(a, b);
            masked_sum(t, y, seed)
        },
        all,
    );
    run(
        "linear",
        op_store(seed, &[("x", 3, 4), ("w", 4, 2), ("b", 1, 2)]),
        &mut |t, tp| {
            let x = tp.get(t, "x");
            let w = tp.get(t, "w");
            let b = tp.get(t, "b");
            let y = linear(t, x, w, b).unwrap();
            masked_sum(t, y, seed)
        },
        all,
    );
    run(
        "softmax_rows",
        op_store(seed, &[("a", 3, 5)]),
        &mut |t, tp| {
            let a = tp.get(t, "a");
            let s = t.scale(a, 3.0);
            let y = softmax_rows(t, s);
            masked_sum(t, y, seed)
        },
        all,
    );
    run(
        "layer_norm_rows",
        op_store(seed, &[("a", 3, 6), ("g", 1, 6), ("b", 1, 6)]),
        &mut |t, tp| {
            let a = tp.get(t, "a");
            let g = tp.get(t, "g");
            let b = tp.get(t, "b");
            let y = layer_norm_rows(t, a, g, b);
            masked_sum(t, y, seed)
        },
        all,
    );

    // --- attention ---
    let mha_shapes: Vec<(String, usize, usize)> = {
        let mut v = vec![("q_in".to_string(), 3, 8), ("kv_in".to_string(), 4, 8)];
        for part in ["q", "k", "v", "o"] {
            v.push((format!("attn.w{part}"), 8, 8));
            v.push((format!("attn.b{part}"), 1, 8));
        }
        v
    };
    let mha_refs: Vec<(&str, usize, usize)> =
        mha_shapes.iter().map(|(n, r, c)| (n.as_str(), *r, *c)).collect();
    run(
        "multi_head_attention",
        op_store(seed, &mha_refs),
        &mut |t, tp| {
            let q = tp.get(t, "q_in");
            let kv = tp.get(t, "kv_in");
            let y = multi_head_attention(t, tp, "attn", q, kv, 2).unwrap();
            masked_sum(t, y, seed)
        },
        all,
    );
    run(
        "sgb_attention",
        op_store(seed, &[("qb", 4, 8), ("f", 6, 8)]),
        &mut |t, tp| {
            let qb = tp.get(t, "qb");
            let f = tp.get(t, "f");
            let qs = t.scale(qb, 4.0);
            let y = sgb_attention(t, qs, f).unwrap();
            masked_sum(t, y, seed)
        },
        all,
    );

    // --- full layers at toy scale (sampled weight entries) ---
    let cfg = ModelConfig::toy();
    let store = init_params(&cfg).unwrap();
    let (cloud, gt_singles, gt_pairs) = synthetic_batch(seed);
    let spec = GripperSpec::default();

    run(
        "set_abstraction",
        op_store(seed, &[("sa.w0", 3, 8), ("sa.b0", 1, 8), ("sa.w1", 8, 8), ("sa.b1", 1, 8)]),
        &mut |t, tp| {
            let pts = &cloud.points[..16];
            let (_, y) = set_abstraction(t, tp, "sa", pts, None, 5, 0.08, 4).unwrap();
            masked_sum(t, y, seed)
        },
        all,
    );
    run(
        "encoder_forward",
        store.clone(),
        &mut |t, tp| {
            let y = encoder_forward(t, tp, &cloud, &cfg).unwrap();
            masked_sum(t, y, seed)
        },
        30,
    );
    run(
        "sgp_decode",
        store.clone(),
        &mut |t, tp| {
            let f_g = encoder_forward(t, tp, &cloud, &cfg).unwrap();
            let (f_sgp, head) = sgp_decode(t, tp, f_g, &cfg).unwrap();
            let a = masked_sum(t, f_sgp, seed);
            let b = masked_sum(t, head, seed ^ 1);
            t.add(a, b)
        },
        30,
    );
    run(
        "bgg_decode",
        store.clone(),
        &mut |t, tp| {
            let f_g = encoder_forward(t, tp, &cloud, &cfg).unwrap();
            let (f_sgp, _) = sgp_decode(t, tp, f_g, &cfg).unwrap();
            let y = bgg_decode(t, tp, f_g, f_sgp, &cfg).unwrap();
            masked_sum(t, y, seed)
        },
        30,
    );
    run(
        "end_to_end_loss",
        store,
        &mut |t, tp| {
            let out = model_forward(t, tp, &cloud, &cfg, &spec).unwrap();
            let (loss, _) = differentiable_loss(t, &out, &gt_singles, &gt_pairs, &spec).unwrap();
            loss
        },
        30,
    );
    out
}
