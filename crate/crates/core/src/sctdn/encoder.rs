//! Point-cloud encoder: two set-abstraction levels, a global max-pool, and
//! two feature-propagation levels back to the input points.
//!
//! Every selection step (FPS start and ties, ball-query order, 3-NN ties) is
//! keyed on coordinates rather than input order, so per-point outputs are
//! permutation-equivariant and the global feature is permutation-invariant.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::layers::{max_pool_rows, Mlp, MlpCache, Parameters, TensorRef};
use crate::scenegen::sampling::{fps_core, lex_less};
use crate::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub sa1: Mlp,
    pub sa2: Mlp,
    pub global: Mlp,
    /// Empty when the encoder only feeds classification.
    pub fp2: Mlp,
    pub fp1: Mlp,
}

impl EncoderParams {
    pub fn init(cfg: &ModelConfig, with_fp: bool, rng: &mut ChaCha8Rng) -> Self {
        let (sa1, sa2, global) = (
            Mlp::init(3, &cfg.sa1.mlp, rng),
            Mlp::init(3 + cfg.sa1_dim(), &cfg.sa2.mlp, rng),
            Mlp::init(3 + cfg.sa2_dim(), &cfg.global_mlp, rng),
        );
        let (fp2, fp1) = if with_fp {
            (
                Mlp::init(cfg.sa2_dim() + cfg.global_dim() + cfg.sa1_dim(), &cfg.fp2_mlp, rng),
                Mlp::init(cfg.fp2_dim() + 3, &cfg.fp1_mlp, rng),
            )
        } else {
            (Mlp { layers: vec![] }, Mlp { layers: vec![] })
        };
        EncoderParams {
            sa1,
            sa2,
            global,
            fp2,
            fp1,
        }
    }

    pub fn zeros(cfg: &ModelConfig, with_fp: bool) -> Self {
        let (fp2, fp1) = if with_fp {
            (
                Mlp::zeros(cfg.sa2_dim() + cfg.global_dim() + cfg.sa1_dim(), &cfg.fp2_mlp),
                Mlp::zeros(cfg.fp2_dim() + 3, &cfg.fp1_mlp),
            )
        } else {
            (Mlp { layers: vec![] }, Mlp { layers: vec![] })
        };
        EncoderParams {
            sa1: Mlp::zeros(3, &cfg.sa1.mlp),
            sa2: Mlp::zeros(3 + cfg.sa1_dim(), &cfg.sa2.mlp),
            global: Mlp::zeros(3 + cfg.sa2_dim(), &cfg.global_mlp),
            fp2,
            fp1,
        }
    }
}

impl Parameters for EncoderParams {
    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a>>) {
        self.sa1.tensors(&format!("{prefix}.sa1"), out);
        self.sa2.tensors(&format!("{prefix}.sa2"), out);
        self.global.tensors(&format!("{prefix}.global"), out);
        self.fp2.tensors(&format!("{prefix}.fp2"), out);
        self.fp1.tensors(&format!("{prefix}.fp1"), out);
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.sa1.tensors_mut(out);
        self.sa2.tensors_mut(out);
        self.global.tensors_mut(out);
        self.fp2.tensors_mut(out);
        self.fp1.tensors_mut(out);
    }
}

/// Centre plus scale mapping a cloud into the unit ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    pub center: Vec3,
    pub scale: f64,
}

impl Normalizer {
    pub fn fit(points: &[Vec3]) -> Self {
        let mut center = Vec3::zeros();
        for p in points {
            center += p;
        }
        center /= points.len().max(1) as f64;
        let scale = points
            .iter()
            .map(|p| (p - center).norm())
            .fold(0.0, f64::max)
            .max(1e-9);
        Normalizer { center, scale }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        (p - self.center) / self.scale
    }

    pub fn invert(&self, p: &Vec3) -> Vec3 {
        self.center + p * self.scale
    }
}

/// FPS that starts from the point farthest from the centroid; ties resolve
/// lexicographically.
pub fn fps_invariant(points: &[Vec3], k: usize) -> Vec<usize> {
    let mut c = Vec3::zeros();
    for p in points {
        c += p;
    }
    c /= points.len() as f64;
    let mut start = 0;
    let mut best = -1.0;
    for (i, p) in points.iter().enumerate() {
        let d = (p - c).norm_squared();
        if d > best || (d == best && lex_less(p, &points[start])) {
            best = d;
            start = i;
        }
    }
    fps_core(points, k.min(points.len()), start, true)
}

fn closer(d: f64, p: &Vec3, best_d: f64, best_p: &Vec3) -> bool {
    d < best_d || (d == best_d && lex_less(p, best_p))
}

/// Variable-size neighbour lists stored contiguously.
#[derive(Debug, Clone)]
pub struct Grouping {
    pub offsets: Vec<usize>,
    pub members: Vec<usize>,
}

impl Grouping {
    pub fn groups(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn range(&self, g: usize) -> std::ops::Range<usize> {
        self.offsets[g]..self.offsets[g + 1]
    }
}

/// Up to `max` sources within `radius` of each centre, nearest first.
pub fn ball_query(sources: &[Vec3], centres: &[Vec3], radius: f64, max: usize) -> Grouping {
    let r2 = radius * radius;
    let mut offsets = vec![0];
    let mut members = Vec::new();
    for c in centres {
        let mut cand: Vec<(f64, usize)> = sources
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                let d = (p - c).norm_squared();
                (d <= r2).then_some((d, i))
            })
            .collect();
        cand.sort_by(|a, b| {
            a.0.partial_cmp(&b.0).unwrap().then_with(|| {
                let (pa, pb) = (&sources[a.1], &sources[b.1]);
                if lex_less(pa, pb) {
                    std::cmp::Ordering::Less
                } else if lex_less(pb, pa) {
                    std::cmp::Ordering::Greater
                } else {
                    std::cmp::Ordering::Equal
                }
            })
        });
        if cand.is_empty() {
            // centres are drawn from the sources, so this only guards odd inputs
            let mut best = 0;
            for (i, p) in sources.iter().enumerate() {
                if closer((p - c).norm_squared(), p, (sources[best] - c).norm_squared(), &sources[best]) {
                    best = i;
                }
            }
            cand.push((0.0, best));
        }
        members.extend(cand.iter().take(max).map(|x| x.1));
        offsets.push(members.len());
    }
    Grouping { offsets, members }
}

/// Inverse-squared-distance weights over the three nearest sources.
#[derive(Debug, Clone)]
pub struct Interpolation {
    pub neighbors: Vec<Vec<(usize, f64)>>,
}

pub fn three_nn(sources: &[Vec3], targets: &[Vec3]) -> Interpolation {
    let k = sources.len().min(3);
    let neighbors = targets
        .iter()
        .map(|t| {
            let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
            for (i, p) in sources.iter().enumerate() {
                let d = (p - t).norm_squared();
                let pos = best
                    .iter()
                    .position(|&(bd, bi)| closer(d, p, bd, &sources[bi]))
                    .unwrap_or(best.len());
                if pos < k {
                    best.insert(pos, (d, i));
                    best.truncate(k);
                }
            }
            let w: Vec<f64> = best.iter().map(|(d, _)| 1.0 / (d + 1e-8)).collect();
            let sum: f64 = w.iter().sum();
            best.iter().zip(w).map(|(&(_, i), wi)| (i, wi / sum)).collect()
        })
        .collect();
    Interpolation { neighbors }
}

/// Everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    /// Per-point features `N × f` (absent for classification-only encoders).
    pub features: Option<Array2<f64>>,
    pub global: Array1<f64>,
    pub n: usize,
    g1: Grouping,
    sa1_cache: MlpCache,
    sa1_arg: Vec<Vec<usize>>,
    f1: Array2<f64>,
    g2: Grouping,
    sa2_cache: MlpCache,
    sa2_arg: Vec<Vec<usize>>,
    f2: Array2<f64>,
    glob_cache: MlpCache,
    glob_arg: Vec<usize>,
    interp2: Option<Interpolation>,
    fp2_cache: Option<MlpCache>,
    interp1: Option<Interpolation>,
    fp1_cache: Option<MlpCache>,
}

fn pool_groups(x: &Array2<f64>, g: &Grouping) -> (Array2<f64>, Vec<Vec<usize>>) {
    let mut out = Array2::zeros((g.groups(), x.ncols()));
    let mut args = Vec::with_capacity(g.groups());
    for k in 0..g.groups() {
        let (v, a) = max_pool_rows(x, g.range(k));
        out.row_mut(k).assign(&v);
        args.push(a);
    }
    (out, args)
}

fn unpool_groups(d: &Array2<f64>, args: &[Vec<usize>], rows: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows, d.ncols()));
    for (k, arg) in args.iter().enumerate() {
        for (c, &r) in arg.iter().enumerate() {
            out[[r, c]] += d[[k, c]];
        }
    }
    out
}

fn interpolate(src: &Array2<f64>, interp: &Interpolation) -> Array2<f64> {
    let mut out = Array2::zeros((interp.neighbors.len(), src.ncols()));
    for (t, nb) in interp.neighbors.iter().enumerate() {
        let mut row = out.row_mut(t);
        for &(i, w) in nb {
            row.scaled_add(w, &src.row(i));
        }
    }
    out
}

fn interpolate_backward(d: ndarray::ArrayView2<f64>, interp: &Interpolation, rows: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows, d.ncols()));
    for (t, nb) in interp.neighbors.iter().enumerate() {
        for &(i, w) in nb {
            out.row_mut(i).scaled_add(w, &d.row(t));
        }
    }
    out
}

pub fn encode(cfg: &ModelConfig, params: &EncoderParams, points: &[Vec3], with_fp: bool) -> EncoderTrace {
    let n = points.len();
    let c1: Vec<usize> = fps_invariant(points, cfg.sa1.centroids);
    let p1: Vec<Vec3> = c1.iter().map(|&i| points[i]).collect();
    let g1 = ball_query(points, &p1, cfg.sa1.radius, cfg.sa1.max_neighbors);
    let mut rows = Array2::zeros((g1.members.len(), 3));
    for k in 0..g1.groups() {
        for r in g1.range(k) {
            let d = points[g1.members[r]] - p1[k];
            rows.row_mut(r).assign(&ndarray::arr1(&[d.x, d.y, d.z]));
        }
    }
    let (h1, sa1_cache) = params.sa1.forward(rows);
    let (f1, sa1_arg) = pool_groups(&h1, &g1);

    let c2 = fps_invariant(&p1, cfg.sa2.centroids);
    let p2: Vec<Vec3> = c2.iter().map(|&i| p1[i]).collect();
    let g2 = ball_query(&p1, &p2, cfg.sa2.radius, cfg.sa2.max_neighbors);
    let d1 = f1.ncols();
    let mut rows = Array2::zeros((g2.members.len(), 3 + d1));
    for k in 0..g2.groups() {
        for r in g2.range(k) {
            let m = g2.members[r];
            let d = p1[m] - p2[k];
            let mut row = rows.row_mut(r);
            row[0] = d.x;
            row[1] = d.y;
            row[2] = d.z;
            row.slice_mut(ndarray::s![3..]).assign(&f1.row(m));
        }
    }
    let (h2, sa2_cache) = params.sa2.forward(rows);
    let (f2, sa2_arg) = pool_groups(&h2, &g2);

    let d2 = f2.ncols();
    let mut rows = Array2::zeros((p2.len(), 3 + d2));
    for (k, p) in p2.iter().enumerate() {
        let mut row = rows.row_mut(k);
        row[0] = p.x;
        row[1] = p.y;
        row[2] = p.z;
        row.slice_mut(ndarray::s![3..]).assign(&f2.row(k));
    }
    let (hg, glob_cache) = params.global.forward(rows);
    let (global, glob_arg) = max_pool_rows(&hg, 0..hg.nrows());

    let mut trace = EncoderTrace {
        features: None,
        global,
        n,
        g1,
        sa1_cache,
        sa1_arg,
        f1,
        g2,
        sa2_cache,
        sa2_arg,
        f2,
        glob_cache,
        glob_arg,
        interp2: None,
        fp2_cache: None,
        interp1: None,
        fp1_cache: None,
    };
    if !with_fp {
        return trace;
    }

    let interp2 = three_nn(&p2, &p1);
    let up2 = interpolate(&trace.f2, &interp2);
    let dg = trace.global.len();
    let mut rows = Array2::zeros((p1.len(), d2 + dg + d1));
    rows.slice_mut(ndarray::s![.., ..d2]).assign(&up2);
    for mut row in rows.slice_mut(ndarray::s![.., d2..d2 + dg]).rows_mut() {
        row.assign(&trace.global);
    }
    rows.slice_mut(ndarray::s![.., d2 + dg..]).assign(&trace.f1);
    let (q1, fp2_cache) = params.fp2.forward(rows);

    let interp1 = three_nn(&p1, points);
    let up1 = interpolate(&q1, &interp1);
    let dq = q1.ncols();
    let mut rows = Array2::zeros((n, dq + 3));
    rows.slice_mut(ndarray::s![.., ..dq]).assign(&up1);
    for (i, p) in points.iter().enumerate() {
        rows[[i, dq]] = p.x;
        rows[[i, dq + 1]] = p.y;
        rows[[i, dq + 2]] = p.z;
    }
    let (features, fp1_cache) = params.fp1.forward(rows);
    trace.features = Some(features);
    trace.interp2 = Some(interp2);
    trace.fp2_cache = Some(fp2_cache);
    trace.interp1 = Some(interp1);
    trace.fp1_cache = Some(fp1_cache);
    trace
}

/// Reverse pass. `d_features` is ignored for classification-only traces.
pub fn encode_backward(
    params: &EncoderParams,
    trace: &EncoderTrace,
    d_features: Option<&Array2<f64>>,
    d_global: &Array1<f64>,
    grad: &mut EncoderParams,
) {
    let d1 = trace.f1.ncols();
    let d2 = trace.f2.ncols();
    let dg = trace.global.len();
    let mut d_f1 = Array2::zeros(trace.f1.raw_dim());
    let mut d_f2 = Array2::zeros(trace.f2.raw_dim());
    let mut d_glob = d_global.clone();

    if let (Some(df), Some(c1), Some(i1), Some(c2), Some(i2)) = (
        d_features,
        trace.fp1_cache.as_ref(),
        trace.interp1.as_ref(),
        trace.fp2_cache.as_ref(),
        trace.interp2.as_ref(),
    ) {
        let d_rows = params.fp1.backward(c1, df.clone(), &mut grad.fp1);
        let dq = d_rows.ncols() - 3;
        let d_q1 = interpolate_backward(d_rows.slice(ndarray::s![.., ..dq]), i1, trace.f1.nrows());
        let d_rows = params.fp2.backward(c2, d_q1, &mut grad.fp2);
        d_f2 += &interpolate_backward(d_rows.slice(ndarray::s![.., ..d2]), i2, trace.f2.nrows());
        for row in d_rows.slice(ndarray::s![.., d2..d2 + dg]).rows() {
            d_glob += &row;
        }
        d_f1 += &d_rows.slice(ndarray::s![.., d2 + dg..]);
    }

    let mut d_hg = Array2::zeros((trace.f2.nrows(), dg));
    for (c, &r) in trace.glob_arg.iter().enumerate() {
        d_hg[[r, c]] += d_glob[c];
    }
    let d_rows = params.global.backward(&trace.glob_cache, d_hg, &mut grad.global);
    d_f2 += &d_rows.slice(ndarray::s![.., 3..]);

    let d_h2 = unpool_groups(&d_f2, &trace.sa2_arg, trace.g2.members.len());
    let d_rows = params.sa2.backward(&trace.sa2_cache, d_h2, &mut grad.sa2);
    for (r, &m) in trace.g2.members.iter().enumerate() {
        let mut dst = d_f1.row_mut(m);
        dst += &d_rows.slice(ndarray::s![r, 3..3 + d1]);
    }

    let d_h1 = unpool_groups(&d_f1, &trace.sa1_arg, trace.g1.members.len());
    params.sa1.backward(&trace.sa1_cache, d_h1, &mut grad.sa1);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn cloud(n: usize, seed: u64) -> Vec<Vec3> {
        let mut r = rng::stream(seed, "encoder-test", 0);
        (0..n)
            .map(|_| Vec3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn ball_query_is_sorted_and_bounded() {
        let pts = cloud(200, 1);
        let g = ball_query(&pts, &pts[..10], 0.5, 8);
        for k in 0..10 {
            let r = g.range(k);
            assert!(r.len() >= 1 && r.len() <= 8);
            assert_eq!(g.members[r.start], k, "centre is its own nearest member");
            let d: Vec<f64> = r.map(|i| (pts[g.members[i]] - pts[k]).norm()).collect();
            assert!(d.windows(2).all(|w| w[0] <= w[1]));
            assert!(d.iter().all(|&x| x <= 0.5));
        }
    }

    #[test]
    fn three_nn_weights_sum_to_one() {
        let pts = cloud(50, 2);
        let it = three_nn(&pts[..10], &pts);
        for nb in &it.neighbors {
            assert_eq!(nb.len(), 3);
            let s: f64 = nb.iter().map(|x| x.1).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalizer_maps_into_unit_ball() {
        let pts: Vec<Vec3> = cloud(100, 3).iter().map(|p| p * 0.1 + Vec3::new(0.3, 0.0, 0.1)).collect();
        let nz = Normalizer::fit(&pts);
        let max = pts.iter().map(|p| nz.apply(p).norm()).fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-12);
        assert!((nz.invert(&nz.apply(&pts[7])) - pts[7]).norm() < 1e-15);
    }

    #[test]
    fn invariant_fps_ignores_input_order() {
        let pts = cloud(100, 4);
        let mut rev = pts.clone();
        rev.reverse();
        let a: Vec<Vec3> = fps_invariant(&pts, 20).iter().map(|&i| pts[i]).collect();
        let b: Vec<Vec3> = fps_invariant(&rev, 20).iter().map(|&i| rev[i]).collect();
        assert_eq!(a, b);
    }
}
