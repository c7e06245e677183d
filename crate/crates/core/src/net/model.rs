//! Network layers: set abstraction over the input cloud, a transformer
//! encoder producing per-center features, a single-grasp decoder, and the
//! bimanual decoder that conditions on single-grasp features.

use crate::error::{Error, Result};
use crate::geometry::{GraspPose, GripperSpec, Mat3, PointCloud, Vec3};
use crate::matcher::BimanualGrasp;
use crate::net::params::{ParamStore, TapeParams};
use crate::net::tensor::{layer_norm_rows, linear, softmax_rows, Tape, Var};
use crate::sampler::GraspSet;

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub n_points: usize,
    pub n_centers: usize,
    pub embed_dim: usize,
    pub single_queries: usize,
    pub bimanual_queries: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub attention_heads: usize,
    /// Hidden widths of the two prediction heads (single-grasp, bimanual).
    pub head_hidden_dims: (usize, usize),
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_points: 2048,
            n_centers: 512,
            embed_dim: 512,
            single_queries: 512,
            bimanual_queries: 512,
            encoder_blocks: 6,
            decoder_blocks: 6,
            attention_heads: 8,
            head_hidden_dims: (512, 512),
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Desk-scale configuration used for tests and toy training.
    pub fn toy() -> Self {
        ModelConfig {
            n_points: 64,
            n_centers: 16,
            embed_dim: 32,
            single_queries: 16,
            bimanual_queries: 16,
            encoder_blocks: 2,
            decoder_blocks: 2,
            attention_heads: 8,
            head_hidden_dims: (32, 32),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all_pos = [
            self.n_points,
            self.n_centers,
            self.embed_dim,
            self.single_queries,
            self.bimanual_queries,
            self.encoder_blocks,
            self.decoder_blocks,
            self.attention_heads,
            self.head_hidden_dims.0,
            self.head_hidden_dims.1,
        ]
        .iter()
        .all(|&v| v > 0);
        if !all_pos {
            return Err(Error::InvalidArgument("model config fields must be positive".into()));
        }
        if self.embed_dim % self.attention_heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "embed_dim {} not divisible by {} heads",
                self.embed_dim, self.attention_heads
            )));
        }
        if self.n_centers > self.n_points {
            return Err(Error::InvalidArgument(
                "n_centers must not exceed n_points".into(),
            ));
        }
        Ok(())
    }

    fn stage1_centers(&self) -> usize {
        (2 * self.n_centers).min(self.n_points)
    }

    const N_MAX: usize = 32;
    const SGP_HEAD_OUT: usize = 10; // 6-D rotation basis + translation + width
    const BGG_HEAD_OUT: usize = 21; // two grasps + quality logit
}

/// Build and initialize every parameter of the model (deterministic in the
/// config seed; each tensor gets its own named stream).
pub fn init_params(cfg: &ModelConfig) -> Result<ParamStore> {
    cfg.validate()?;
    let c = cfg.embed_dim;
    let c1 = c / 2;
    let mut ps = ParamStore::new();
    let s = cfg.seed;

    let mlp = |ps: &mut ParamStore, prefix: &str, dims: &[usize]| {
        for (i, w) in dims.windows(2).enumerate() {
            ps.init_matrix(s, &format!("{prefix}.w{i}"), w[0], w[1]);
            ps.init_zeros(&format!("{prefix}.b{i}"), 1, w[1]);
        }
    };
    // set abstraction: per-point MLPs over (relative xyz [+ carried features])
    mlp(&mut ps, "sa1.mlp", &[3, c1, c1]);
    mlp(&mut ps, "sa2.mlp", &[3 + c1, c, c]);
    ps.init_matrix(s, "pos_embed", cfg.n_centers, c);

    let attn = |ps: &mut ParamStore, prefix: &str| {
        for part in ["q", "k", "v", "o"] {
            ps.init_matrix(s, &format!("{prefix}.w{part}"), c, c);
            ps.init_zeros(&format!("{prefix}.b{part}"), 1, c);
        }
    };
    let norm = |ps: &mut ParamStore, name: &str| {
        ps.init_ones(&format!("{name}.gain"), 1, c);
        ps.init_zeros(&format!("{name}.bias"), 1, c);
    };
    let ff = |ps: &mut ParamStore, prefix: &str| {
        mlp(ps, prefix, &[c, 4 * c, c]);
    };

    for b in 0..cfg.encoder_blocks {
        let p = format!("enc{b}");
        norm(&mut ps, &format!("{p}.norm1"));
        attn(&mut ps, &format!("{p}.attn"));
        norm(&mut ps, &format!("{p}.norm2"));
        ff(&mut ps, &format!("{p}.ff"));
    }

    ps.init_matrix(s, "sgp.queries", cfg.single_queries, c);
    for b in 0..cfg.decoder_blocks {
        let p = format!("sgp{b}");
        norm(&mut ps, &format!("{p}.norm1"));
        attn(&mut ps, &format!("{p}.self"));
        norm(&mut ps, &format!("{p}.norm2"));
        attn(&mut ps, &format!("{p}.cross"));
        norm(&mut ps, &format!("{p}.norm3"));
        ff(&mut ps, &format!("{p}.ff"));
    }
    let h1 = cfg.head_hidden_dims.0;
    mlp(&mut ps, "sgp.head", &[c, h1, h1, ModelConfig::SGP_HEAD_OUT]);

    ps.init_matrix(s, "bgg.queries", cfg.bimanual_queries, c);
    for b in 0..cfg.decoder_blocks {
        let p = format!("bgg{b}");
        norm(&mut ps, &format!("{p}.norm1"));
        attn(&mut ps, &format!("{p}.self"));
        norm(&mut ps, &format!("{p}.norm2"));
        attn(&mut ps, &format!("{p}.cross_sgb"));
        norm(&mut ps, &format!("{p}.norm3"));
        attn(&mut ps, &format!("{p}.cross_global"));
        norm(&mut ps, &format!("{p}.norm4"));
        ff(&mut ps, &format!("{p}.ff"));
    }
    let h2 = cfg.head_hidden_dims.1;
    let mut head_dims = vec![c];
    head_dims.extend(std::iter::repeat(h2).take(5));
    head_dims.push(ModelConfig::BGG_HEAD_OUT);
    mlp(&mut ps, "bgg.head", &head_dims);

    Ok(ps)
}

/// Scaled dot-product attention with per-head splitting and a learned
/// output projection. `prefix` names the q/k/v/o projection parameters.
pub fn multi_head_attention(
    tape: &mut Tape,
    tp: &mut TapeParams,
    prefix: &str,
    q_in: Var,
    kv_in: Var,
    heads: usize,
) -> Result<Var> {
    let (_, c) = tape.shape(q_in);
    if tape.shape(kv_in).1 != c {
        return Err(Error::ShapeError(format!(
            "attention embed dims {} vs {}",
            c,
            tape.shape(kv_in).1
        )));
    }
    if c % heads != 0 {
        return Err(Error::ShapeError(format!(
            "embed dim {c} not divisible by {heads} heads"
        )));
    }
    let proj = |tape: &mut Tape, tp: &mut TapeParams, part: &str, x: Var| -> Result<Var> {
        let w = tp.get(tape, &format!("{prefix}.w{part}"));
        let b = tp.get(tape, &format!("{prefix}.b{part}"));
        linear(tape, x, w, b)
    };
    let q = proj(tape, tp, "q", q_in)?;
    let k = proj(tape, tp, "k", kv_in)?;
    let v = proj(tape, tp, "v", kv_in)?;
    let dh = c / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut head_outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, dh);
        let kh = tape.slice_cols(k, h * dh, dh);
        let vh = tape.slice_cols(v, h * dh, dh);
        let kt = tape.transpose(kh);
        let logits = tape.matmul(qh, kt);
        let logits = tape.scale(logits, scale);
        let weights = softmax_rows(tape, logits);
        head_outs.push(tape.matmul(weights, vh));
    }
    let cat = tape.concat_cols(&head_outs);
    proj(tape, tp, "o", cat)
}

/// Projection-free attention of bimanual queries over single-grasp
/// features: softmax(Qb Fᵀ / sqrt(d)) F.
pub fn sgb_attention(tape: &mut Tape, qb: Var, f_sgp: Var) -> Result<Var> {
    let (_, d) = tape.shape(qb);
    if tape.shape(f_sgp).1 != d {
        return Err(Error::ShapeError(format!(
            "sgb_attention dims {} vs {}",
            d,
            tape.shape(f_sgp).1
        )));
    }
    let ft = tape.transpose(f_sgp);
    let logits = tape.matmul(qb, ft);
    let logits = tape.scale(logits, 1.0 / (d as f64).sqrt());
    let weights = softmax_rows(tape, logits);
    Ok(tape.matmul(weights, f_sgp))
}

fn lex_less(a: &Vec3, b: &Vec3) -> bool {
    (a.x, a.y, a.z) < (b.x, b.y, b.z)
}

/// Farthest-point sampling that starts from the lexicographically smallest
/// point and breaks distance ties the same way, so the selection depends
/// only on the point set, not its ordering.
fn fps_lex(points: &[Vec3], k: usize) -> Vec<usize> {
    assert!(k >= 1 && k <= points.len());
    let start = (0..points.len())
        .min_by(|&a, &b| {
            (points[a].x, points[a].y, points[a].z)
                .partial_cmp(&(points[b].x, points[b].y, points[b].z))
                .unwrap()
        })
        .unwrap();
    let mut chosen = vec![start];
    let mut dist: Vec<f64> = points.iter().map(|p| (p - points[start]).norm_squared()).collect();
    while chosen.len() < k {
        let mut best = 0;
        for i in 1..points.len() {
            if dist[i] > dist[best]
                || (dist[i] == dist[best] && lex_less(&points[i], &points[best]))
            {
                best = i;
            }
        }
        chosen.push(best);
        for i in 0..points.len() {
            dist[i] = dist[i].min((points[i] - points[best]).norm_squared());
        }
    }
    chosen
}

fn cloud_scale(points: &[Vec3]) -> f64 {
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).max().max(1e-9)
}

/// One grouping + shared-MLP + max-pool stage. `feats` carries per-point
/// features from a previous stage (None for raw xyz input). Returns the
/// sampled center positions alongside the per-center feature rows.
pub fn set_abstraction(
    tape: &mut Tape,
    tp: &mut TapeParams,
    prefix: &str,
    points: &[Vec3],
    feats: Option<Var>,
    centers: usize,
    radius: f64,
    n_max: usize,
) -> Result<(Vec<Vec3>, Var)> {
    if centers == 0 || centers > points.len() {
        return Err(Error::InvalidArgument(format!(
            "set_abstraction: {} centers for {} points",
            centers,
            points.len()
        )));
    }
    let center_idx = fps_lex(points, centers);
    let r2 = radius * radius;
    // neighbors sorted by (distance, position) so grouping is stable under
    // input permutation; short groups are padded with the center itself
    let mut gathered = Vec::with_capacity(centers * n_max);
    let mut rel = Vec::with_capacity(centers * n_max * 3);
    for &ci in &center_idx {
        let cp = points[ci];
        let mut near: Vec<usize> = (0..points.len())
            .filter(|&i| (points[i] - cp).norm_squared() <= r2)
            .collect();
        near.sort_by(|&a, &b| {
            let da = (points[a] - cp).norm_squared();
            let db = (points[b] - cp).norm_squared();
            da.partial_cmp(&db)
                .unwrap()
                .then_with(|| (points[a].x, points[a].y, points[a].z)
                    .partial_cmp(&(points[b].x, points[b].y, points[b].z))
                    .unwrap())
        });
        near.truncate(n_max);
        while near.len() < n_max {
            near.push(ci);
        }
        for &ni in &near {
            gathered.push(ni);
            let d = points[ni] - cp;
            rel.extend_from_slice(&[d.x, d.y, d.z]);
        }
    }
    let rel_var = tape.leaf(centers * n_max, 3, rel);
    let per_point = match feats {
        Some(f) => {
            let g = tape.gather_rows(f, &gathered);
            tape.concat_cols(&[rel_var, g])
        }
        None => rel_var,
    };
    let w0 = tp.get(tape, &format!("{prefix}.w0"));
    let b0 = tp.get(tape, &format!("{prefix}.b0"));
    let h = linear(tape, per_point, w0, b0)?;
    let h = tape.silu(h);
    let w1 = tp.get(tape, &format!("{prefix}.w1"));
    let b1 = tp.get(tape, &format!("{prefix}.b1"));
    let h = linear(tape, h, w1, b1)?;
    let h = tape.silu(h);
    let pooled = tape.max_pool_rows(h, n_max);
    Ok((center_idx.iter().map(|&i| points[i]).collect(), pooled))
}

fn feed_forward(tape: &mut Tape, tp: &mut TapeParams, prefix: &str, x: Var) -> Result<Var> {
    let w0 = tp.get(tape, &format!("{prefix}.w0"));
    let b0 = tp.get(tape, &format!("{prefix}.b0"));
    let h = linear(tape, x, w0, b0)?;
    let h = tape.silu(h);
    let w1 = tp.get(tape, &format!("{prefix}.w1"));
    let b1 = tp.get(tape, &format!("{prefix}.b1"));
    linear(tape, h, w1, b1)
}

fn pre_norm(tape: &mut Tape, tp: &mut TapeParams, prefix: &str, x: Var) -> Var {
    let gain = tp.get(tape, &format!("{prefix}.gain"));
    let bias = tp.get(tape, &format!("{prefix}.bias"));
    layer_norm_rows(tape, x, gain, bias)
}

/// Two set-abstraction stages, a learned per-center embedding, then the
/// pre-norm transformer encoder. Returns the per-center global features.
pub fn encoder_forward(
    tape: &mut Tape,
    tp: &mut TapeParams,
    cloud: &PointCloud,
    cfg: &ModelConfig,
) -> Result<Var> {
    cfg.validate()?;
    if cloud.points.len() != cfg.n_points {
        return Err(Error::ShapeError(format!(
            "encoder expects {} points, got {}",
            cfg.n_points,
            cloud.points.len()
        )));
    }
    let scale = cloud_scale(&cloud.points);
    let (p1, f1) = set_abstraction(
        tape,
        tp,
        "sa1.mlp",
        &cloud.points,
        None,
        cfg.stage1_centers(),
        scale / 8.0,
        ModelConfig::N_MAX,
    )?;
    let (_, f2) = set_abstraction(
        tape,
        tp,
        "sa2.mlp",
        &p1,
        Some(f1),
        cfg.n_centers,
        scale / 4.0,
        ModelConfig::N_MAX,
    )?;
    let pos = tp.get(tape, "pos_embed");
    let mut x = tape.add(f2, pos);
    for b in 0..cfg.encoder_blocks {
        let p = format!("enc{b}");
        let n1 = pre_norm(tape, tp, &format!("{p}.norm1"), x);
        let a = multi_head_attention(tape, tp, &format!("{p}.attn"), n1, n1, cfg.attention_heads)?;
        x = tape.add(x, a);
        let n2 = pre_norm(tape, tp, &format!("{p}.norm2"), x);
        let f = feed_forward(tape, tp, &format!("{p}.ff"), n2)?;
        x = tape.add(x, f);
    }
    Ok(x)
}

fn mlp_head(
    tape: &mut Tape,
    tp: &mut TapeParams,
    prefix: &str,
    layers: usize,
    x: Var,
) -> Result<Var> {
    let mut h = x;
    for i in 0..layers {
        let w = tp.get(tape, &format!("{prefix}.w{i}"));
        let b = tp.get(tape, &format!("{prefix}.b{i}"));
        h = linear(tape, h, w, b)?;
        if i + 1 < layers {
            h = tape.silu(h);
        }
    }
    Ok(h)
}

/// Single-grasp decoder: learnable queries self-attend and cross-attend to
/// the encoder features; returns the pre-head query features together with
/// the raw head output rows (rotation basis, translation, width logit).
pub fn sgp_decode(
    tape: &mut Tape,
    tp: &mut TapeParams,
    f_g: Var,
    cfg: &ModelConfig,
) -> Result<(Var, Var)> {
    let mut x = tp.get(tape, "sgp.queries");
    for b in 0..cfg.decoder_blocks {
        let p = format!("sgp{b}");
        let n1 = pre_norm(tape, tp, &format!("{p}.norm1"), x);
        let a = multi_head_attention(tape, tp, &format!("{p}.self"), n1, n1, cfg.attention_heads)?;
        x = tape.add(x, a);
        let n2 = pre_norm(tape, tp, &format!("{p}.norm2"), x);
        let a = multi_head_attention(tape, tp, &format!("{p}.cross"), n2, f_g, cfg.attention_heads)?;
        x = tape.add(x, a);
        let n3 = pre_norm(tape, tp, &format!("{p}.norm3"), x);
        let f = feed_forward(tape, tp, &format!("{p}.ff"), n3)?;
        x = tape.add(x, f);
    }
    let head = mlp_head(tape, tp, "sgp.head", 3, x)?;
    Ok((x, head))
}

/// Bimanual decoder: queries pass through the projection-free attention
/// over single-grasp features once, then each block self-attends and
/// cross-attends to those fused features and to the encoder features.
/// Returns the raw head output rows (two grasps + quality logit per row).
pub fn bgg_decode(
    tape: &mut Tape,
    tp: &mut TapeParams,
    f_g: Var,
    f_sgp: Var,
    cfg: &ModelConfig,
) -> Result<Var> {
    let qb = tp.get(tape, "bgg.queries");
    let f_sgb = sgb_attention(tape, qb, f_sgp)?;
    // The conditioning layer is residual like every other decoder sublayer;
    // without the query skip path all M' states start as near-identical
    // mixtures of F_sgp (softmax weights are near-uniform at init) and the
    // decoder cannot tell its queries apart.
    let mut x = tape.add(qb, f_sgb);
    for b in 0..cfg.decoder_blocks {
        let p = format!("bgg{b}");
        let n1 = pre_norm(tape, tp, &format!("{p}.norm1"), x);
        let a = multi_head_attention(tape, tp, &format!("{p}.self"), n1, n1, cfg.attention_heads)?;
        x = tape.add(x, a);
        let n2 = pre_norm(tape, tp, &format!("{p}.norm2"), x);
        let a = multi_head_attention(
            tape,
            tp,
            &format!("{p}.cross_sgb"),
            n2,
            f_sgb,
            cfg.attention_heads,
        )?;
        x = tape.add(x, a);
        let n3 = pre_norm(tape, tp, &format!("{p}.norm3"), x);
        let a = multi_head_attention(
            tape,
            tp,
            &format!("{p}.cross_global"),
            n3,
            f_g,
            cfg.attention_heads,
        )?;
        x = tape.add(x, a);
        let n4 = pre_norm(tape, tp, &format!("{p}.norm4"), x);
        let f = feed_forward(tape, tp, &format!("{p}.ff"), n4)?;
        x = tape.add(x, f);
    }
    mlp_head(tape, tp, "bgg.head", 6, x)
}

/// Decode one grasp from raw head values: two basis vectors are
/// orthonormalized into a right-handed rotation (closing, lateral,
/// approach columns), width is a squashed fraction of the jaw opening.
pub fn decode_grasp(raw: &[f64], max_opening: f64) -> GraspPose {
    let a = Vec3::new(raw[0], raw[1], raw[2]);
    let b = Vec3::new(raw[3], raw[4], raw[5]);
    let v1 = if a.norm() > 1e-12 { a.normalize() } else { Vec3::x() };
    let mut b_perp = b - v1 * v1.dot(&b);
    if b_perp.norm() <= 1e-12 {
        // fall back to whichever axis is least aligned with v1
        let alt = if v1.z.abs() < 0.9 { Vec3::z() } else { Vec3::y() };
        b_perp = alt - v1 * v1.dot(&alt);
    }
    let v3 = b_perp.normalize();
    let v2 = v3.cross(&v1);
    let rotation = Mat3::from_columns(&[v1, v2, v3]);
    let translation = Vec3::new(raw[6], raw[7], raw[8]);
    let width = max_opening / (1.0 + (-raw[9]).exp());
    GraspPose {
        rotation,
        translation,
        width,
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub struct ModelOutput {
    pub singles: GraspSet,
    pub pairs: Vec<BimanualGrasp>,
    /// Raw single-grasp head rows on the tape, one row per query.
    pub sgp_head: Var,
    /// Raw bimanual head rows on the tape, one row per query.
    pub bgg_head: Var,
}

/// Full pipeline: encoder, single-grasp decoder, bimanual decoder, plus
/// plain decoded outputs. Pure in (input, weights, cfg).
pub fn model_forward(
    tape: &mut Tape,
    tp: &mut TapeParams,
    cloud: &PointCloud,
    cfg: &ModelConfig,
    spec: &GripperSpec,
) -> Result<ModelOutput> {
    let f_g = encoder_forward(tape, tp, cloud, cfg)?;
    let (f_sgp, sgp_head) = sgp_decode(tape, tp, f_g, cfg)?;
    let bgg_head = bgg_decode(tape, tp, f_g, f_sgp, cfg)?;

    let k = cfg.single_queries;
    let singles = (0..k)
        .map(|i| decode_grasp(&tape.data(sgp_head)[i * 10..(i + 1) * 10], spec.max_opening))
        .collect();
    let m = cfg.bimanual_queries;
    let pairs = (0..m)
        .map(|i| {
            let row = &tape.data(bgg_head)[i * 21..(i + 1) * 21];
            BimanualGrasp {
                g1: decode_grasp(&row[0..10], spec.max_opening),
                g2: decode_grasp(&row[10..20], spec.max_opening),
                quality: sigmoid(row[20]),
            }
        })
        .collect();
    Ok(ModelOutput {
        singles: GraspSet {
            grasps: singles,
            source_mesh_id: String::new(),
        },
        pairs,
        sgp_head,
        bgg_head,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TriMesh;
    use crate::geometry::sample_surface_points;
    use crate::net::params::TapeParams;
    use rand::Rng;

    fn toy_cloud(n: usize, seed: u64) -> PointCloud {
        let mesh = TriMesh::cube(0.1);
        sample_surface_points(&mesh, n, seed).unwrap()
    }

    fn rand_mat(t: &mut Tape, r: usize, c: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Var {
        let data = (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        t.leaf(r, c, data)
    }

    #[test]
    fn sgb_single_key_and_zero_query() {
        let mut t = Tape::new();
        let f = t.leaf(1, 4, vec![1.0, -2.0, 0.5, 3.0]);
        let qb = t.leaf(3, 4, (0..12).map(|i| i as f64 * 0.3 - 1.0).collect());
        let out = sgb_attention(&mut t, qb, f).unwrap();
        for i in 0..3 {
            assert_eq!(&t.data(out)[i * 4..(i + 1) * 4], t.data(f));
        }

        let mut rng = crate::rng::stream_rng(7, "sgb-test");
        let f6 = rand_mat(&mut t, 6, 4, &mut rng);
        let q0 = t.leaf(2, 4, vec![0.0; 8]);
        let out0 = sgb_attention(&mut t, q0, f6).unwrap();
        for i in 0..2 {
            for j in 0..4 {
                let mean: f64 = (0..6).map(|r| t.data(f6)[r * 4 + j]).sum::<f64>() / 6.0;
                assert!((t.data(out0)[i * 4 + j] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sgb_matches_dense_computation() {
        let mut t = Tape::new();
        let mut rng = crate::rng::stream_rng(8, "sgb-dense");
        let qb = rand_mat(&mut t, 4, 8, &mut rng);
        let f = rand_mat(&mut t, 6, 8, &mut rng);
        let out = sgb_attention(&mut t, qb, f).unwrap();
        let d = 8.0f64;
        for i in 0..4 {
            let logits: Vec<f64> = (0..6)
                .map(|j| {
                    (0..8)
                        .map(|k| t.data(qb)[i * 8 + k] * t.data(f)[j * 8 + k])
                        .sum::<f64>()
                        / d.sqrt()
                })
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            for k in 0..8 {
                let want: f64 = (0..6).map(|j| exps[j] / z * t.data(f)[j * 8 + k]).sum();
                assert!((t.data(out)[i * 8 + k] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_one_key_returns_projected_value() {
        let cfg = ModelConfig::toy();
        let ps = init_params(&cfg).unwrap();
        let mut t = Tape::new();
        let mut tp = TapeParams::new(&ps);
        let mut rng = crate::rng::stream_rng(9, "mha-onekey");
        let q = rand_mat(&mut t, 5, 32, &mut rng);
        let kv = rand_mat(&mut t, 1, 32, &mut rng);
        let out = multi_head_attention(&mut t, &mut tp, "enc0.attn", q, kv, 8).unwrap();
        // with one key the attention weight is 1, so output = Wo(Wv kv + bv) + bo
        let wv = tp.get(&mut t, "enc0.attn.wv");
        let bv = tp.get(&mut t, "enc0.attn.bv");
        let pv = linear(&mut t, kv, wv, bv).unwrap();
        let wo = tp.get(&mut t, "enc0.attn.wo");
        let bo = tp.get(&mut t, "enc0.attn.bo");
        let want = linear(&mut t, pv, wo, bo).unwrap();
        for i in 0..5 {
            for j in 0..32 {
                assert!((t.data(out)[i * 32 + j] - t.data(want)[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_duplicate_keys_merge() {
        let cfg = ModelConfig::toy();
        let ps = init_params(&cfg).unwrap();
        let mut rng = crate::rng::stream_rng(10, "mha-dup");
        let kv_row: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q_row: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let run = |copies: usize| {
            let mut t = Tape::new();
            let mut tp = TapeParams::new(&ps);
            let q = t.leaf(2, 32, q_row.clone());
            let kv = t.leaf(copies, 32, kv_row.repeat(copies));
            let out = multi_head_attention(&mut t, &mut tp, "enc0.attn", q, kv, 8).unwrap();
            t.data(out).to_vec()
        };
        let one = run(1);
        let three = run(3);
        for (a, b) in one.iter().zip(&three) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn set_abstraction_degenerate_and_dominated() {
        let cfg = ModelConfig::toy();
        let ps = init_params(&cfg).unwrap();
        // identical points: every center sees the same neighborhood
        let pts = vec![Vec3::new(0.3, -0.1, 0.2); 8];
        let mut t = Tape::new();
        let mut tp = TapeParams::new(&ps);
        let (_, f) = set_abstraction(&mut t, &mut tp, "sa1.mlp", &pts, None, 4, 0.05, 8).unwrap();
        let d = t.data(f);
        let c = t.shape(f).1;
        for i in 1..4 {
            assert_eq!(&d[i * c..(i + 1) * c], &d[0..c]);
        }
    }

    #[test]
    fn set_abstraction_permutation_invariant() {
        let cfg = ModelConfig::toy();
        let ps = init_params(&cfg).unwrap();
        let cloud = toy_cloud(24, 3);
        let run = |pts: &[Vec3]| {
            let mut t = Tape::new();
            let mut tp = TapeParams::new(&ps);
            let (c, f) =
                set_abstraction(&mut t, &mut tp, "sa1.mlp", pts, None, 6, 0.05, 8).unwrap();
            (c, t.data(f).to_vec())
        };
        let (c1, f1) = run(&cloud.points);
        let mut shuffled = cloud.points.clone();
        shuffled.reverse();
        shuffled.swap(0, 5);
        let (c2, f2) = run(&shuffled);
        assert_eq!(c1, c2);
        assert_eq!(f1, f2);
    }

    #[test]
    fn encoder_shape_and_determinism() {
        let cfg = ModelConfig::toy();
        let ps = init_params(&cfg).unwrap();
        let cloud = toy_cloud(64, 4);
        let run = || {
            let mut t = Tape::new();
            let mut tp = TapeParams::new(&ps);
            let f = encoder_forward(&mut t, &mut tp, &cloud, &cfg).unwrap();
            (t.shape(f), t.data(f).to_vec())
        };
        let (shape, a) = run();
        assert_eq!(shape, (16, 32));
        let (_, b) = run();
        assert_eq!(a, b);

        // rigid motion changes the features
        let moved = PointCloud {
            points: cloud.points.iter().map(|p| p + Vec3::new(0.5, 0.0, 0.0)).collect(),
            ..cloud.clone()
        };
        let mut t = Tape::new();
        let mut tp = TapeParams::new(&ps);
        let f = encoder_forward(&mut t, &mut tp, &moved, &cfg).unwrap();
        assert_ne!(t.data(f), a.as_slice());
    }

    #[test]
    fn forward_contracts_hold() {
        let cfg = ModelConfig::toy();
        let ps = init_params(&cfg).unwrap();
        let cloud = toy_cloud(64, 5);
        let spec = GripperSpec::default();
        let mut t = Tape::new();
        let mut tp = TapeParams::new(&ps);
        let out = model_forward(&mut t, &mut tp, &cloud, &cfg, &spec).unwrap();
        assert_eq!(out.singles.grasps.len(), 16);
        assert_eq!(out.pairs.len(), 16);
        for g in &out.singles.grasps {
            g.validate().unwrap();
            assert!(g.width > 0.0 && g.width < spec.max_opening);
        }
        for p in &out.pairs {
            p.g1.validate().unwrap();
            p.g2.validate().unwrap();
            assert!(p.quality > 0.0 && p.quality < 1.0);
        }

        // bit-identical on a second pass
        let mut t2 = Tape::new();
        let mut tp2 = TapeParams::new(&ps);
        let out2 = model_forward(&mut t2, &mut tp2, &cloud, &cfg, &spec).unwrap();
        assert_eq!(t.data(out.sgp_head), t2.data(out2.sgp_head));
        assert_eq!(t.data(out.bgg_head), t2.data(out2.bgg_head));
    }

    #[test]
    fn distinct_seeds_give_distinct_outputs() {
        let cloud = toy_cloud(64, 6);
        let spec = GripperSpec::default();
        let run = |seed: u64| {
            let cfg = ModelConfig { seed, ..ModelConfig::toy() };
            let ps = init_params(&cfg).unwrap();
            let mut t = Tape::new();
            let mut tp = TapeParams::new(&ps);
            let out = model_forward(&mut t, &mut tp, &cloud, &cfg, &spec).unwrap();
            t.data(out.sgp_head).to_vec()
        };
        assert_ne!(run(0), run(1));
    }

    #[test]
    fn zeroing_single_grasp_features_changes_bimanual_outputs() {
        let cfg = ModelConfig::toy();
        let ps = init_params(&cfg).unwrap();
        let cloud = toy_cloud(64, 7);
        let run = |zero_fsgp: bool| {
            let mut t = Tape::new();
            let mut tp = TapeParams::new(&ps);
            let f_g = encoder_forward(&mut t, &mut tp, &cloud, &cfg).unwrap();
            let (f_sgp, _) = sgp_decode(&mut t, &mut tp, f_g, &cfg).unwrap();
            let f_sgp = if zero_fsgp {
                let (r, c) = t.shape(f_sgp);
                t.leaf(r, c, vec![0.0; r * c])
            } else {
                f_sgp
            };
            let head = bgg_decode(&mut t, &mut tp, f_g, f_sgp, &cfg).unwrap();
            t.data(head).to_vec()
        };
        assert_ne!(run(false), run(true));
    }

    #[test]
    fn decoded_rotations_orthonormal_right_handed() {
        let mut rng = crate::rng::stream_rng(11, "decode-rot");
        for _ in 0..200 {
            let raw: Vec<f64> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let g = decode_grasp(&raw, 0.08);
            let r = g.rotation;
            let err = (r.transpose() * r - Mat3::identity()).abs().max();
            assert!(err < 1e-9, "orthonormality error {err}");
            assert!((r.determinant() - 1.0).abs() < 1e-9);
        }
    }
}
