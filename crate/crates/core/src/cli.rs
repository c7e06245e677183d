//! Command-line pipeline: sampling, pair matching, network inference, the
//! gradient audit, toy training, and coverage evaluation.
//!
//! Exit codes: 0 success, 2 input validation, 3 insufficient data,
//! 4 weights mismatch, 5 gradient-audit failure, 6 divergence.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::Error;
use crate::geometry::{gripper_keypoints, GripperSpec, PointCloud, TriMesh, Vec3};
use crate::io::{
    diversity_csv_row, read_grasp_set, read_pairs, write_grasp_set, write_pairs,
    DIVERSITY_CSV_HEADER,
};
use crate::matcher::{bpm_match_with, BimanualGrasp};
use crate::metrics::{diversity, top_fraction, RankedPairs};
use crate::net::{
    gradcheck_suite, init_params, load_weights, model_forward, save_weights, train_step,
    validate_against, AdamW, ModelConfig, Tape, TapeParams, TrainBatch, TrainConfig,
};
use crate::quality::{bimanual_quality_with, EpsilonConfig, QualityConfig};
use crate::sampler::{sample_antipodal_grasps, GraspSet};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID_INPUT: i32 = 2;
pub const EXIT_INSUFFICIENT_DATA: i32 = 3;
pub const EXIT_WEIGHTS_MISMATCH: i32 = 4;
pub const EXIT_GRADCHECK_FAILED: i32 = 5;
pub const EXIT_DIVERGED: i32 = 6;

#[derive(Parser)]
#[command(name = "bigrasp", about = "Bimanual grasp generation pipeline", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample antipodal single grasps on a mesh and write them as JSON.
    Sample {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 128)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        mu: f64,
    },
    /// Match sampled grasps into scored, collision-free bimanual pairs.
    Pair {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        grasps: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated weights for epsilon, torque balance, dexterity.
        #[arg(long = "quality-weights", default_value = "1,1,1")]
        quality_weights: String,
        #[arg(long, default_value_t = 0.5)]
        mu: f64,
    },
    /// Run the network on a sampled cloud and write ranked pairs + PLY.
    Infer {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Model config override, KEY=VAL (repeatable); defaults to the
        /// desk-scale configuration.
        #[arg(long = "cfg")]
        cfg: Vec<String>,
    },
    /// Audit every analytic gradient against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Deliberately corrupt the named check (negative-control hook).
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
    /// Overfit the desk-scale model on one or more meshes.
    TrainToy {
        /// OBJ file, or a directory of OBJ files.
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 300)]
        steps: usize,
        #[arg(long, default_value_t = 5e-4)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "cfg")]
        cfg: Vec<String>,
    },
    /// Surface-coverage diversity of ranked pairs at given top fractions.
    Diversity {
        /// OBJ mesh (cloud sampled from it) or an ASCII PLY cloud.
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "0.3,0.5")]
        fractions: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::WeightsMismatch(_) => EXIT_WEIGHTS_MISMATCH,
        Error::TrainingDiverged => EXIT_DIVERGED,
        Error::EmptyTargets => EXIT_INSUFFICIENT_DATA,
        _ => EXIT_INVALID_INPUT,
    }
}

fn fail(e: Error) -> i32 {
    eprintln!("error: {e}");
    exit_code_for(&e)
}

fn parse_triple(s: &str) -> Result<[f64; 3], Error> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Error::InvalidArgument(format!("bad weights list: {s}")))?;
    if vals.len() != 3 {
        return Err(Error::InvalidArgument("expected three weights".into()));
    }
    Ok([vals[0], vals[1], vals[2]])
}

fn parse_fractions(s: &str) -> Result<Vec<f64>, Error> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad fraction: {t}")))
        })
        .collect()
}

fn parse_model_cfg(overrides: &[String]) -> Result<ModelConfig, Error> {
    let mut cfg = ModelConfig::toy();
    for kv in overrides {
        let (key, val) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("expected KEY=VAL, got {kv}")))?;
        if key == "preset" {
            cfg = match val {
                "toy" => ModelConfig::toy(),
                "paper" => ModelConfig::default(),
                other => {
                    return Err(Error::InvalidArgument(format!("unknown preset {other}")))
                }
            };
            continue;
        }
        let n: usize = val
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad value for {key}: {val}")))?;
        match key {
            "n_points" => cfg.n_points = n,
            "n_centers" => cfg.n_centers = n,
            "embed_dim" => cfg.embed_dim = n,
            "single_queries" => cfg.single_queries = n,
            "bimanual_queries" => cfg.bimanual_queries = n,
            "encoder_blocks" => cfg.encoder_blocks = n,
            "decoder_blocks" => cfg.decoder_blocks = n,
            "attention_heads" => cfg.attention_heads = n,
            "seed" => cfg.seed = n as u64,
            other => {
                return Err(Error::InvalidArgument(format!("unknown cfg key {other}")))
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Quality configuration used by CLI pair scoring: the reduced-budget
/// epsilon solver keeps all-pairs scoring interactive.
fn cli_quality_cfg(mu: f64) -> QualityConfig {
    QualityConfig {
        friction_mu: mu,
        epsilon: EpsilonConfig::fast(),
        ..QualityConfig::default()
    }
}

fn cmd_sample(mesh: &Path, out: &Path, k: usize, seed: u64, mu: f64) -> i32 {
    if k == 0 {
        return fail(Error::InvalidArgument("k must be positive".into()));
    }
    if !(mu > 0.0) {
        return fail(Error::InvalidArgument("mu must be positive".into()));
    }
    let mesh = match TriMesh::from_obj_file(mesh) {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    let set = sample_antipodal_grasps(&mesh, k, mu, seed);
    if let Err(e) = write_grasp_set(&set, out) {
        return fail(e);
    }
    println!("sampled {} of {} requested grasps", set.grasps.len(), k);
    EXIT_OK
}

fn cmd_pair(mesh: &Path, grasps: &Path, out: &Path, weights: [f64; 3], mu: f64) -> i32 {
    let mesh = match TriMesh::from_obj_file(mesh) {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    let set = match read_grasp_set(grasps) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    if set.grasps.len() < 2 {
        eprintln!("error: need at least 2 grasps, got {}", set.grasps.len());
        return EXIT_INSUFFICIENT_DATA;
    }
    let spec = GripperSpec::default();
    let qcfg = cli_quality_cfg(mu);
    let pairs = match bpm_match_with(&set, &mesh, &spec, weights, &qcfg) {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    let scored: Vec<(BimanualGrasp, _)> = pairs
        .into_iter()
        .map(|p| {
            let bd = bimanual_quality_with(&p.g1, &p.g2, &mesh, weights, &qcfg).ok();
            (p, bd)
        })
        .collect();
    if let Err(e) = write_pairs(&scored, out) {
        return fail(e);
    }
    println!("matched {} bimanual pairs", scored.len());
    EXIT_OK
}

fn gripper_edges(pair: &BimanualGrasp, spec: &GripperSpec) -> Vec<(Vec3, Vec3)> {
    let mut edges = Vec::new();
    for g in [&pair.g1, &pair.g2] {
        let [palm, base_l, base_r, tip_l, tip_r] = gripper_keypoints(g, spec);
        let tail = palm - g.approach_axis() * spec.palm_depth;
        edges.push((base_l, base_r));
        edges.push((base_l, tip_l));
        edges.push((base_r, tip_r));
        edges.push((tail, palm));
    }
    edges
}

fn cmd_infer(mesh: &Path, weights: &Path, out: &Path, seed: u64, cfg: &[String]) -> i32 {
    let cfg = match parse_model_cfg(cfg) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let mesh = match TriMesh::from_obj_file(mesh) {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    let store = match load_weights(weights) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: cannot load weights: {e}");
            return EXIT_WEIGHTS_MISMATCH;
        }
    };
    let reference = match init_params(&cfg) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    if let Err(e) = validate_against(&store, &reference) {
        return fail(e);
    }
    let spec = GripperSpec::default();
    let cloud = match crate::geometry::sample_surface_points(&mesh, cfg.n_points, seed) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let mut tape = Tape::new();
    let mut tp = TapeParams::new(&store);
    let output = match model_forward(&mut tape, &mut tp, &cloud, &cfg, &spec) {
        Ok(o) => o,
        Err(e) => return fail(e),
    };
    let ranked = RankedPairs::new(output.pairs);
    let rows: Vec<(BimanualGrasp, Option<crate::quality::QualityBreakdown>)> =
        ranked.pairs.iter().map(|p| (p.clone(), None)).collect();
    if let Err(e) = write_pairs(&rows, out) {
        return fail(e);
    }
    let ply_path = out.with_extension("ply");
    let edges: Vec<(Vec3, Vec3)> = ranked
        .pairs
        .iter()
        .flat_map(|p| gripper_edges(p, &spec))
        .collect();
    let write_ply = || -> Result<(), Error> {
        let f = std::fs::File::create(&ply_path)?;
        cloud.write_ply(std::io::BufWriter::new(f), &edges)
    };
    if let Err(e) = write_ply() {
        return fail(e);
    }
    println!("wrote {} ranked pairs", ranked.pairs.len());
    EXIT_OK
}

fn cmd_gradcheck(seed: u64, corrupt: Option<&str>) -> i32 {
    let entries = gradcheck_suite(seed, corrupt);
    let mut worst = ("", 0.0f64);
    let mut ok = true;
    for e in &entries {
        let status = if e.rel_err < 1e-4 { "ok" } else { "FAIL" };
        println!("{:24} rel_err {:>12.3e}  {}", e.name, e.rel_err, status);
        if e.rel_err >= 1e-4 {
            ok = false;
        }
        if e.rel_err > worst.1 {
            worst = (&e.name, e.rel_err);
        }
    }
    println!("worst: {} ({:.3e})", worst.0, worst.1);
    if ok {
        EXIT_OK
    } else {
        EXIT_GRADCHECK_FAILED
    }
}

/// Ground truth for one training mesh: a cloud, sampled singles, and
/// BPM-matched pairs. Counts are capped to keep toy steps fast.
pub fn build_supervision(
    mesh: &TriMesh,
    cfg: &ModelConfig,
    seed: u64,
) -> Result<(PointCloud, GraspSet, Vec<BimanualGrasp>), Error> {
    let cloud = crate::geometry::sample_surface_points(mesh, cfg.n_points, seed)?;
    let mut singles = sample_antipodal_grasps(mesh, 24, 0.5, seed);
    let spec = GripperSpec::default();
    let pairs = bpm_match_with(&singles, mesh, &spec, [1.0, 1.0, 1.0], &cli_quality_cfg(0.5))?;
    singles.grasps.truncate(cfg.single_queries);
    let mut pairs = pairs;
    pairs.truncate(cfg.bimanual_queries.min(8));
    if singles.grasps.is_empty() || pairs.is_empty() {
        return Err(Error::EmptyTargets);
    }
    Ok((cloud, singles, pairs))
}

fn cmd_train_toy(
    mesh: &Path,
    out: &Path,
    steps: usize,
    lr: f64,
    seed: u64,
    cfg: &[String],
) -> i32 {
    let cfg = match parse_model_cfg(cfg) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let mesh_paths: Vec<PathBuf> = if mesh.is_dir() {
        let mut v: Vec<PathBuf> = match std::fs::read_dir(mesh) {
            Ok(rd) => rd
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().map(|x| x == "obj").unwrap_or(false))
                .collect(),
            Err(e) => return fail(e.into()),
        };
        v.sort();
        v
    } else {
        vec![mesh.to_path_buf()]
    };
    if mesh_paths.is_empty() {
        eprintln!("error: no OBJ meshes found in {}", mesh.display());
        return EXIT_INSUFFICIENT_DATA;
    }
    let mut batches = Vec::new();
    for p in &mesh_paths {
        let m = match TriMesh::from_obj_file(p) {
            Ok(m) => m,
            Err(e) => return fail(e),
        };
        match build_supervision(&m, &cfg, seed) {
            Ok(b) => batches.push(b),
            Err(Error::EmptyTargets) => {
                eprintln!("error: no bimanual supervision on {}", p.display());
                return EXIT_INSUFFICIENT_DATA;
            }
            Err(e) => return fail(e),
        }
    }
    let mut store = match init_params(&cfg) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let mut opt = AdamW::new(&store);
    let tc = TrainConfig {
        lr,
        ..TrainConfig::default()
    };
    let spec = GripperSpec::default();
    let mut csv = String::from("step,loss\n");
    for step in 0..steps {
        let (cloud, gt_s, gt_p) = &batches[step % batches.len()];
        let batch = TrainBatch {
            cloud,
            gt_singles: gt_s,
            gt_pairs: gt_p,
        };
        match train_step(&batch, &cfg, &spec, &mut store, &mut opt, &tc) {
            Ok(loss) => csv.push_str(&format!("{step},{loss}\n")),
            Err(e @ Error::TrainingDiverged) => return fail(e),
            Err(e) => return fail(e),
        }
    }
    if let Err(e) = save_weights(&store, out) {
        return fail(e);
    }
    let csv_path = loss_csv_path(out);
    if let Err(e) = std::fs::write(&csv_path, csv) {
        return fail(e.into());
    }
    println!("wrote weights to {} after {steps} steps", out.display());
    EXIT_OK
}

/// Per-step loss CSV written next to the weights manifest.
pub fn loss_csv_path(weights: &Path) -> PathBuf {
    let mut os = weights.as_os_str().to_owned();
    os.push(".loss.csv");
    PathBuf::from(os)
}

fn cmd_diversity(
    mesh: &Path,
    pairs_path: &Path,
    out: Option<&Path>,
    fractions: &[f64],
    seed: u64,
) -> i32 {
    let cloud = if mesh.extension().map(|x| x == "ply").unwrap_or(false) {
        match PointCloud::read_ply_file(mesh) {
            Ok(c) => c,
            Err(e) => return fail(e),
        }
    } else {
        let m = match TriMesh::from_obj_file(mesh) {
            Ok(m) => m,
            Err(e) => return fail(e),
        };
        match crate::geometry::sample_surface_points(&m, 512, seed) {
            Ok(c) => c,
            Err(e) => return fail(e),
        }
    };
    let pairs = match read_pairs(pairs_path) {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    let object_id = mesh
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ranked = RankedPairs::new(pairs);
    let spec = GripperSpec::default();
    let mut text = String::from(DIVERSITY_CSV_HEADER);
    text.push('\n');
    for &f in fractions {
        let (n, value) = if ranked.pairs.is_empty() {
            (0, 0.0)
        } else {
            let top = match top_fraction(&ranked, f) {
                Ok(t) => t,
                Err(e) => return fail(e),
            };
            let d = diversity(&cloud, &top, &spec);
            (top.len(), d)
        };
        text.push_str(&diversity_csv_row(&object_id, n, f, value));
        text.push('\n');
    }
    match out {
        Some(p) => {
            if let Err(e) = std::fs::write(p, text) {
                return fail(e.into());
            }
        }
        None => print!("{text}"),
    }
    EXIT_OK
}

/// Parse arguments and dispatch; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    if let Ok(threads) = std::env::var("BIGRASP_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            // ignore failure: the global pool may already be initialized
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // clap prints its own message; usage problems are input errors
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID_INPUT } else { EXIT_OK };
        }
    };
    match cli.cmd {
        Cmd::Sample {
            mesh,
            out,
            k,
            seed,
            mu,
        } => cmd_sample(&mesh, &out, k, seed, mu),
        Cmd::Pair {
            mesh,
            grasps,
            out,
            quality_weights,
            mu,
        } => match parse_triple(&quality_weights) {
            Ok(w) => cmd_pair(&mesh, &grasps, &out, w, mu),
            Err(e) => fail(e),
        },
        Cmd::Infer {
            mesh,
            weights,
            out,
            seed,
            cfg,
        } => cmd_infer(&mesh, &weights, &out, seed, &cfg),
        Cmd::Gradcheck { seed, corrupt } => cmd_gradcheck(seed, corrupt.as_deref()),
        Cmd::TrainToy {
            mesh,
            out,
            steps,
            lr,
            seed,
            cfg,
        } => cmd_train_toy(&mesh, &out, steps, lr, seed, &cfg),
        Cmd::Diversity {
            mesh,
            pairs,
            out,
            fractions,
            seed,
        } => match parse_fractions(&fractions) {
            Ok(f) => cmd_diversity(&mesh, &pairs, out.as_deref(), &f, seed),
            Err(e) => fail(e),
        },
    }
}
