//! Force-closure epsilon: distance from the 6-D origin to the boundary of
//! the convex hull of the contact wrenches, zero when the origin lies
//! outside the hull.
//!
//! Computed as `min over unit directions d of max_i w_i . d`, clamped at 0.
//! The minimizer runs multi-start: quasi-random seed directions, shrinking
//! local sampling around the best separated candidates, a subgradient
//! polish, and finally an active-set refinement that solves the min-norm
//! point of the active wrenches exactly.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Wrench;
use crate::rng::stream_rng;

type Dir = [f64; 6];

#[derive(Debug, Clone)]
pub struct EpsilonConfig {
    pub seed_directions: usize,
    pub candidates: usize,
    pub candidate_min_dot: f64,
    pub local_samples: usize,
    pub local_rounds: usize,
    pub local_shrink: f64,
    pub subgrad_iters: usize,
    pub hop_rounds: usize,
    pub rng_seed: u64,
}

impl Default for EpsilonConfig {
    fn default() -> Self {
        EpsilonConfig {
            seed_directions: 4096,
            candidates: 48,
            candidate_min_dot: 0.75,
            local_samples: 512,
            local_rounds: 10,
            local_shrink: 0.6,
            subgrad_iters: 200,
            hop_rounds: 30,
            rng_seed: 0x5eed,
        }
    }
}

impl EpsilonConfig {
    /// Cheaper settings for bulk pair scoring.
    pub fn fast() -> Self {
        EpsilonConfig {
            seed_directions: 1024,
            candidates: 16,
            local_samples: 128,
            local_rounds: 8,
            subgrad_iters: 100,
            hop_rounds: 6,
            ..Default::default()
        }
    }
}

#[inline]
fn dot6(a: &Dir, b: &Dir) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn norm6(a: &Dir) -> f64 {
    dot6(a, a).sqrt()
}

#[inline]
fn normalize6(a: &mut Dir) -> bool {
    let n = norm6(a);
    if n < 1e-300 {
        return false;
    }
    for x in a.iter_mut() {
        *x /= n;
    }
    true
}

/// Support value `max_i w_i . d` with the attaining index.
#[inline]
fn support(ws: &[Dir], d: &Dir) -> (f64, usize) {
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0;
    for (i, w) in ws.iter().enumerate() {
        let v = dot6(w, d);
        if v > best {
            best = v;
            arg = i;
        }
    }
    (best, arg)
}

fn random_unit(rng: &mut ChaCha8Rng) -> Dir {
    loop {
        let mut d = [0.0; 6];
        // Box-Muller pairs
        for k in 0..3 {
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = (-2.0 * u1.ln()).sqrt();
            d[2 * k] = r * u2.cos();
            d[2 * k + 1] = r * u2.sin();
        }
        if normalize6(&mut d) {
            return d;
        }
    }
}

/// Shrinking Gaussian sampling around an incumbent direction.
fn local_shrink(
    ws: &[Dir],
    start: Dir,
    start_val: f64,
    rng: &mut ChaCha8Rng,
    cfg: &EpsilonConfig,
) -> (f64, Dir) {
    let mut best = start_val;
    let mut bx = start;
    let mut spread = 0.5;
    for _ in 0..cfg.local_rounds {
        for _ in 0..cfg.local_samples {
            let g = random_unit(rng);
            let mut d = bx;
            for i in 0..6 {
                d[i] += spread * g[i];
            }
            if !normalize6(&mut d) {
                continue;
            }
            let (v, _) = support(ws, &d);
            if v < best {
                best = v;
                bx = d;
            }
        }
        spread *= cfg.local_shrink;
    }
    (best, bx)
}

/// Projected subgradient descent on the unit sphere.
fn subgradient(ws: &[Dir], start: Dir, cfg: &EpsilonConfig) -> (f64, Dir) {
    let mut x = start;
    let (mut best, _) = support(ws, &x);
    let mut bx = x;
    for t in 0..cfg.subgrad_iters {
        let (f, j) = support(ws, &x);
        if f < best {
            best = f;
            bx = x;
        }
        let w = ws[j];
        // tangential component of the active wrench
        let proj = dot6(&w, &x);
        let mut g = [0.0; 6];
        for i in 0..6 {
            g[i] = w[i] - proj * x[i];
        }
        let ng = norm6(&g);
        if ng < 1e-14 {
            break;
        }
        let step = 0.01 * 0.98f64.powi(t as i32);
        for i in 0..6 {
            x[i] -= step * g[i] / ng;
        }
        if !normalize6(&mut x) {
            break;
        }
    }
    let (f, _) = support(ws, &x);
    if f < best {
        best = f;
        bx = x;
    }
    (best, bx)
}

/// Minimum-norm point of the convex hull of `pts` (small sets), via an
/// affine solve with nonnegativity maintained by dropping violators.
fn min_norm_point(pts: &[Dir]) -> Option<Dir> {
    let mut active: Vec<usize> = (0..pts.len()).collect();
    for _ in 0..4 * pts.len() + 8 {
        let k = active.len();
        if k == 0 {
            return None;
        }
        if k == 1 {
            return Some(pts[active[0]]);
        }
        // KKT system for min ||sum l_i p_i||^2 s.t. sum l_i = 1
        let mut m = DMatrix::zeros(k + 1, k + 1);
        for a in 0..k {
            for b in 0..k {
                m[(a, b)] = 2.0 * dot6(&pts[active[a]], &pts[active[b]]);
            }
            m[(a, k)] = 1.0;
            m[(k, a)] = 1.0;
        }
        let mut rhs = DVector::zeros(k + 1);
        rhs[k] = 1.0;
        let svd = m.svd(true, true);
        let sol = svd.solve(&rhs, 1e-13).ok()?;
        let lam: Vec<f64> = (0..k).map(|i| sol[i]).collect();
        let (worst_i, worst_v) = lam
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, &v)| (i, v))?;
        if worst_v >= -1e-12 {
            let mut z = [0.0; 6];
            for (a, &idx) in active.iter().enumerate() {
                for i in 0..6 {
                    z[i] += lam[a].max(0.0) * pts[idx][i];
                }
            }
            return Some(z);
        }
        active.remove(worst_i);
    }
    None
}

/// Active-set refinement: identify the near-active wrenches at `x`, compute
/// the exact min-norm point of their hull, and re-expand with any new
/// maximizer along the refined direction.
fn active_set_polish(ws: &[Dir], x: Dir, mut best: f64) -> f64 {
    let (f0, _) = support(ws, &x);
    let wmax = ws.iter().map(norm6).fold(0.0, f64::max);
    let scale = f0.abs().max(0.01 * wmax);
    for tol_exp in [1e-6, 1e-4, 1e-2] {
        let tol = tol_exp * scale;
        let mut active: Vec<usize> = ws
            .iter()
            .enumerate()
            .filter(|(_, w)| dot6(w, &x) >= f0 - tol)
            .map(|(i, _)| i)
            .collect();
        for _ in 0..24 {
            let pts: Vec<Dir> = active.iter().map(|&i| ws[i]).collect();
            let Some(z) = min_norm_point(&pts) else { break };
            let nz = norm6(&z);
            if nz < 1e-12 {
                break;
            }
            let mut d = z;
            if !normalize6(&mut d) {
                break;
            }
            let (f, j) = support(ws, &d);
            if f < best {
                best = f;
            }
            if active.contains(&j) {
                if (f - nz).abs() <= 1e-12 * (1.0 + f.abs()) {
                    break;
                }
                break;
            }
            active.push(j);
        }
    }
    best
}

fn descend(ws: &[Dir], start: Dir, start_val: f64, rng: &mut ChaCha8Rng, cfg: &EpsilonConfig) -> (f64, Dir) {
    let (b1, x1) = local_shrink(ws, start, start_val, rng, cfg);
    let (b2, x2) = subgradient(ws, x1, cfg);
    let b3 = active_set_polish(ws, x2, b1.min(b2));
    (b1.min(b2).min(b3), x2)
}

/// Angularly separated lowest-support candidates among the seeds.
fn pick_candidates(dirs: &[Dir], vals: &[f64], k: usize, min_dot: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dirs.len()).collect();
    order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
    let mut picks: Vec<usize> = Vec::with_capacity(k);
    for i in order {
        if picks.iter().all(|&p| dot6(&dirs[i], &dirs[p]) < min_dot) {
            picks.push(i);
            if picks.len() == k {
                break;
            }
        }
    }
    picks
}

pub fn epsilon_quality(wrenches: &[Wrench]) -> f64 {
    epsilon_quality_with(wrenches, &EpsilonConfig::default())
}

pub fn epsilon_quality_with(wrenches: &[Wrench], cfg: &EpsilonConfig) -> f64 {
    assert!(!wrenches.is_empty(), "epsilon_quality needs >= 1 wrench");
    // canonical order makes the result independent of input permutation
    let mut ws: Vec<Dir> = wrenches.iter().map(|w| w.as_array()).collect();
    ws.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    // normalize by the largest wrench so every internal threshold is
    // relative; dividing all entries by one scalar keeps the computation
    // bitwise covariant under scaling of the input set
    let wmax = ws.iter().map(norm6).fold(0.0, f64::max);
    if wmax <= 0.0 {
        return 0.0;
    }
    for w in ws.iter_mut() {
        for x in w.iter_mut() {
            *x /= wmax;
        }
    }

    let mut rng = stream_rng(cfg.rng_seed, "epsilon-directions");
    let mut dirs = Vec::with_capacity(cfg.seed_directions);
    let mut vals = Vec::with_capacity(cfg.seed_directions);
    let mut best = f64::INFINITY;
    let mut bx = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    for _ in 0..cfg.seed_directions {
        let d = random_unit(&mut rng);
        let (v, _) = support(&ws, &d);
        if v < best {
            best = v;
            bx = d;
        }
        dirs.push(d);
        vals.push(v);
    }
    for i in pick_candidates(&dirs, &vals, cfg.candidates, cfg.candidate_min_dot) {
        let (b, x) = descend(&ws, dirs[i], vals[i], &mut rng, cfg);
        if b < best {
            best = b;
            bx = x;
        }
        if best < -0.05 {
            // origin clearly outside: epsilon is 0, no need to refine
            return 0.0;
        }
    }
    for r in 0..cfg.hop_rounds {
        let sigma = [0.1, 0.25, 0.5][r % 3];
        let g = random_unit(&mut rng);
        let mut x0 = bx;
        for i in 0..6 {
            x0[i] += sigma * g[i];
        }
        if !normalize6(&mut x0) {
            continue;
        }
        let (v0, _) = support(&ws, &x0);
        let (b, x) = descend(&ws, x0, v0, &mut rng, cfg);
        if b < best - 1e-15 {
            best = b;
            bx = x;
        }
    }
    wmax * best.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::quality::{contact_wrenches, Contact};

    fn wrench(arr: [f64; 6]) -> Wrench {
        Wrench {
            force: Vec3::new(arr[0], arr[1], arr[2]),
            torque: Vec3::new(arr[3], arr[4], arr[5]),
        }
    }

    fn axis_cross_polytope() -> Vec<Wrench> {
        let mut ws = Vec::new();
        for i in 0..6 {
            for s in [1.0, -1.0] {
                let mut a = [0.0; 6];
                a[i] = s;
                ws.push(wrench(a));
            }
        }
        ws
    }

    #[test]
    fn cross_polytope_analytic() {
        // nearest facet of the unit cross-polytope is at distance 1/sqrt(6)
        let eps = epsilon_quality(&axis_cross_polytope());
        assert!(
            (eps - 1.0 / 6.0f64.sqrt()).abs() < 1e-6,
            "eps = {eps}, expected {}",
            1.0 / 6.0f64.sqrt()
        );
    }

    #[test]
    fn half_space_set_no_closure() {
        // single contact with small friction: all wrenches share a half-space
        let c = Contact {
            point: Vec3::new(0.02, 0.0, 0.0),
            normal: Vec3::x(),
            friction_mu: 0.3,
        };
        let ws = contact_wrenches(&[c], Vec3::zeros(), 0.1, 8).unwrap();
        assert_eq!(epsilon_quality(&ws), 0.0);
    }

    #[test]
    fn permutation_invariance() {
        let mut ws = axis_cross_polytope();
        let e1 = epsilon_quality(&ws);
        ws.reverse();
        ws.swap(2, 7);
        let e2 = epsilon_quality(&ws);
        assert_eq!(e1, e2);
    }

    #[test]
    fn scaling_by_power_of_two_exact() {
        let mut rng = crate::rng::stream_rng(6, "eps-scale");
        use rand::Rng;
        let ws: Vec<Wrench> = (0..14)
            .map(|_| {
                wrench([
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ])
            })
            .collect();
        let scaled: Vec<Wrench> = ws
            .iter()
            .map(|w| Wrench {
                force: w.force * 4.0,
                torque: w.torque * 4.0,
            })
            .collect();
        assert_eq!(epsilon_quality(&scaled), 4.0 * epsilon_quality(&ws));
    }

    #[test]
    fn adding_wrench_never_decreases() {
        let mut rng = crate::rng::stream_rng(7, "eps-mono");
        use rand::Rng;
        for _ in 0..5 {
            let mut ws: Vec<Wrench> = (0..10)
                .map(|_| {
                    wrench(std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
                })
                .collect();
            let e1 = epsilon_quality(&ws);
            ws.push(wrench(std::array::from_fn(|_| rng.gen_range(-1.0..1.0))));
            let e2 = epsilon_quality(&ws);
            assert!(e2 >= e1 - 1e-9, "adding a wrench shrank epsilon: {e1} -> {e2}");
        }
    }

    #[test]
    fn min_norm_point_simplex_cases() {
        // two symmetric points: midpoint
        let z = min_norm_point(&[
            [1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            [-1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        ])
        .unwrap();
        assert!((z[0]).abs() < 1e-12 && (z[1] - 1.0).abs() < 1e-12);
        // nonnegative constraint active: nearest vertex wins
        let z = min_norm_point(&[
            [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [3.0, 0.1, 0.0, 0.0, 0.0, 0.0],
        ])
        .unwrap();
        assert!((z[0] - 1.0).abs() < 1e-10 && z[1].abs() < 1e-10);
    }
}
