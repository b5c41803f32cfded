//! Straight-line reimplementations used as oracles: plain loops over nested
//! vectors with every constant written out, sharing no code with the library.

#![allow(dead_code)]

use contextdesc::geometry::Point;
use contextdesc::{Matrix, numerics::ParamStore};

pub type Rows = Vec<Vec<f64>>;

pub fn rows(m: &Matrix) -> Rows {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn max_abs_diff(a: &Rows, b: &Matrix) -> f64 {
    assert_eq!((a.len(), a.first().map_or(0, Vec::len)), b.shape());
    a.iter()
        .enumerate()
        .flat_map(|(i, r)| r.iter().enumerate().map(move |(j, v)| (v - b.row(i)[j]).abs()))
        .fold(0.0, f64::max)
}

fn param(store: &ParamStore, name: &str) -> Rows {
    rows(store.value(name).unwrap_or_else(|_| panic!("missing {name}")))
}

/// `x · W (+ b)` by triple loop.
pub fn affine(x: &Rows, store: &ParamStore, prefix: &str, bias: bool) -> Rows {
    let w = param(store, &format!("{prefix}.weight"));
    let b = bias.then(|| param(store, &format!("{prefix}.bias"))[0].clone());
    x.iter()
        .map(|xi| {
            (0..w[0].len())
                .map(|j| {
                    let mut s = 0.0;
                    for (k, xk) in xi.iter().enumerate() {
                        s += xk * w[k][j];
                    }
                    s + b.as_ref().map_or(0.0, |b| b[j])
                })
                .collect()
        })
        .collect()
}

pub fn relu(x: &Rows) -> Rows {
    x.iter().map(|r| r.iter().map(|v| if *v > 0.0 { *v } else { 0.0 }).collect()).collect()
}

fn column_stats(x: &Rows) -> (Vec<f64>, Vec<f64>) {
    let n = x.len() as f64;
    let c = x[0].len();
    let mut mean = vec![0.0; c];
    for r in x {
        for j in 0..c {
            mean[j] += r[j] / n;
        }
    }
    let mut var = vec![0.0; c];
    for r in x {
        for j in 0..c {
            var[j] += (r[j] - mean[j]) * (r[j] - mean[j]) / n;
        }
    }
    (mean, var)
}

fn standardize(x: &Rows, mean: &[f64], var: &[f64], eps: f64) -> Rows {
    x.iter()
        .map(|r| r.iter().enumerate().map(|(j, v)| (v - mean[j]) / (var[j] + eps).sqrt()).collect())
        .collect()
}

/// Context normalization with population variance and ε = 1e-6.
pub fn context_norm(x: &Rows) -> Rows {
    let (m, v) = column_stats(x);
    standardize(x, &m, &v, 1e-6)
}

/// Batch normalization with ε = 1e-5: batch statistics when `train`, running ones otherwise.
pub fn batch_norm(x: &Rows, store: &ParamStore, prefix: &str, train: bool) -> Rows {
    let (m, v) = if train {
        column_stats(x)
    } else {
        (
            param(store, &format!("{prefix}.running_mean"))[0].clone(),
            param(store, &format!("{prefix}.running_var"))[0].clone(),
        )
    };
    let g = param(store, &format!("{prefix}.gamma"))[0].clone();
    let b = param(store, &format!("{prefix}.beta"))[0].clone();
    standardize(x, &m, &v, 1e-5)
        .into_iter()
        .map(|r| r.iter().enumerate().map(|(j, v)| v * g[j] + b[j]).collect())
        .collect()
}

pub fn add(a: &Rows, b: &Rows) -> Rows {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

pub fn hcat(a: &Rows, b: &Rows) -> Rows {
    a.iter().zip(b).map(|(x, y)| x.iter().chain(y).copied().collect()).collect()
}

pub fn l2_rows(x: &Rows) -> Rows {
    x.iter()
        .map(|r| {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 1e-12 { r.iter().map(|v| v / n).collect() } else { vec![0.0; r.len()] }
        })
        .collect()
}

/// Raw matchability `H(f)`: 128 → 32 → 32 → 1 with relu on the hidden layers.
pub fn head_raw(store: &ParamStore, f: &Rows) -> Vec<f64> {
    let mut h = f.clone();
    for l in 0..4 {
        h = affine(&h, store, &format!("match.l{l}"), true);
        if l < 3 {
            h = relu(&h);
        }
    }
    h.into_iter().map(|r| r[0]).collect()
}

/// Geometric encoder: bias-free lift, `units` pre-activation units of two
/// `[CN, BN, relu, fc]` blocks plus skip, closing `[CN, BN, relu]`, then the head.
pub fn geo_encoder(store: &ParamStore, units: usize, coords: &Rows, m: &[f64], train: bool) -> Rows {
    let input: Rows = coords.iter().zip(m).map(|(c, m)| vec![c[0], c[1], *m]).collect();
    let mut x = affine(&input, store, "geo.lift", false);
    for u in 0..units {
        let mut b = x.clone();
        for p in 0..2 {
            b = context_norm(&b);
            b = batch_norm(&b, store, &format!("geo.u{u}.bn{p}"), train);
            b = relu(&b);
            b = affine(&b, store, &format!("geo.u{u}.fc{p}"), false);
        }
        x = add(&x, &b);
    }
    let y = relu(&batch_norm(&context_norm(&x), store, "geo.out.bn", train));
    affine(&y, store, "geo.head", true)
}

/// Visual encoder: `reduce` = two bias-free layers each followed by CN (relu
/// between), concatenated `[reduced ∥ local]`, then `fuse` = two affine layers
/// with relu between.
pub fn vis_encoder(store: &ParamStore, regional: &Rows, local: &Rows) -> Rows {
    let r = relu(&context_norm(&affine(regional, store, "vis.reduce.l0", false)));
    let r = context_norm(&affine(&r, store, "vis.reduce.l1", false));
    let h = relu(&affine(&hcat(&r, local), store, "vis.fuse.l0", true));
    affine(&h, store, "vis.fuse.l1", true)
}

/// Mean of `max(0, 1 - R)` over all ordered pairs `i ≠ j` of `idx`.
pub fn quad_brute(h1: &[f64], h2: &[f64], idx: &[usize]) -> f64 {
    let mut total = 0.0;
    let mut terms = 0usize;
    for &i in idx {
        for &j in idx {
            if i == j {
                continue;
            }
            let r = (h1[i] - h1[j]) * (h2[i] - h2[j]);
            total += if 1.0 - r > 0.0 { 1.0 - r } else { 0.0 };
            terms += 1;
        }
    }
    total / terms as f64
}

fn dist(a: Point, b: Point) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Inverse-distance weighting over the `k` nearest anchors found by sorting every anchor.
pub fn idw_brute(anchors: &[Point], features: &Rows, q: Point, k: usize) -> Vec<f64> {
    let mut order: Vec<(f64, usize)> = anchors.iter().enumerate().map(|(i, a)| (dist(q, *a), i)).collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    if order[0].0 < 1e-9 {
        return features[order[0].1].clone();
    }
    let mut num = vec![0.0; features[0].len()];
    let mut den = 0.0;
    for &(d, i) in &order[..k] {
        for (n, f) in num.iter_mut().zip(&features[i]) {
            *n += f / d;
        }
        den += 1.0 / d;
    }
    num.into_iter().map(|n| n / den).collect()
}

/// `(query, reference, nn, second)` of every surviving match by double loop.
pub fn nn_brute(q: &Rows, r: &Rows, ratio: Option<f64>, mutual: bool) -> Vec<(usize, usize, f64, f64)> {
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let mut out = Vec::new();
    for (i, qi) in q.iter().enumerate() {
        let mut best = 0;
        for j in 1..r.len() {
            if d(qi, &r[j]) < d(qi, &r[best]) {
                best = j;
            }
        }
        let mut second = f64::INFINITY;
        for j in 0..r.len() {
            if j != best && d(qi, &r[j]) < second {
                second = d(qi, &r[j]);
            }
        }
        let nn = d(qi, &r[best]);
        if let Some(t) = ratio {
            let rr = if second == 0.0 { 1.0 } else { nn / second };
            if rr > t {
                continue;
            }
        }
        if mutual {
            let mut back = 0;
            for k in 1..q.len() {
                if d(&q[k], &r[best]) < d(&q[back], &r[best]) {
                    back = k;
                }
            }
            if back != i {
                continue;
            }
        }
        out.push((i, best, nn, second));
    }
    out
}

pub fn warp(h: &[[f64; 3]; 3], p: Point) -> Point {
    let w = h[2][0] * p.0 + h[2][1] * p.1 + h[2][2];
    (
        (h[0][0] * p.0 + h[0][1] * p.1 + h[0][2]) / w,
        (h[1][0] * p.0 + h[1][1] * p.1 + h[1][2]) / w,
    )
}

/// `(correspondences, correct, putative)` by explicit per-keypoint and per-match loops.
pub fn recall_longhand(
    pairs: &[(usize, usize)],
    pa: &[Point],
    pb: &[Point],
    h: &[[f64; 3]; 3],
    thr: f64,
) -> (usize, usize, usize) {
    let mut corr = 0;
    for p in pa {
        let w = warp(h, *p);
        if pb.iter().any(|q| dist(w, *q) <= thr) {
            corr += 1;
        }
    }
    let mut correct = 0;
    for &(i, j) in pairs {
        if dist(warp(h, pa[i]), pb[j]) <= thr {
            correct += 1;
        }
    }
    (corr, correct, pairs.len())
}

/// N-pair loss from rows: distances, logits `α(2 - d)`, row and column
/// softmax, diagonal log terms over `matchable`.
pub fn npair_longhand(f1: &Rows, f2: &Rows, alpha: f64, matchable: &[usize]) -> f64 {
    let n = f1.len();
    let mut logit = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = f1[i].iter().zip(&f2[j]).map(|(a, b)| a * b).sum();
            let d = (2.0 * (1.0 - dot).clamp(0.0, 2.0)).sqrt();
            logit[i][j] = alpha * (2.0 - d);
        }
    }
    let mut loss = 0.0;
    for &i in matchable {
        let row: f64 = (0..n).map(|j| logit[i][j].exp()).sum();
        let col: f64 = (0..n).map(|j| logit[j][i].exp()).sum();
        let sr = logit[i][i].exp() / row;
        let sc = logit[i][i].exp() / col;
        loss -= 0.5 * (sr.ln() + sc.ln());
    }
    loss
}
