//! Exact nearest-neighbour matching with ratio and mutual filters, and the
//! recall / precision / repeatability metrics under a ground-truth homography.

use std::fmt::Write as _;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{distance, warp_point, Homography, Point};
use crate::keypoints::KeypointSet;
use crate::numerics::Matrix;

pub const DEFAULT_THRESHOLD_PX: f64 = 2.5;
pub const RATIO_LOW: f64 = 0.5;
pub const RATIO_HIGH: f64 = 1.0;
pub const RATIO_ITERS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    pub query: usize,
    pub reference: usize,
    pub nn: f64,
    /// `+∞` when the reference set has a single row.
    pub second: f64,
}

impl Match {
    /// `nn / second`, taken as 1 when both are zero.
    pub fn ratio(&self) -> f64 {
        if self.second == 0.0 {
            1.0
        } else {
            self.nn / self.second
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchList {
    pub matches: Vec<Match>,
}

impl MatchList {
    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Nearest and second-nearest reference of every query before any filtering.
#[derive(Clone, Debug)]
pub struct Candidates {
    all: Vec<Match>,
    /// Nearest query of every reference row.
    back: Vec<usize>,
}

impl Candidates {
    pub fn new(query: &Matrix, reference: &Matrix) -> Result<Self> {
        if query.rows() == 0 || reference.rows() == 0 {
            return Err(Error::EmptyInput("matching needs non-empty descriptor sets".into()));
        }
        if query.cols() != reference.cols() {
            return Err(Error::Dimension(format!(
                "query has {} columns, reference {}",
                query.cols(),
                reference.cols()
            )));
        }
        let (nq, nr) = (query.rows(), reference.rows());
        let mut d = vec![0.0; nq * nr];
        for i in 0..nq {
            for j in 0..nr {
                d[i * nr + j] = euclidean(query.row(i), reference.row(j));
            }
        }
        let mut all = Vec::with_capacity(nq);
        for i in 0..nq {
            let row = &d[i * nr..(i + 1) * nr];
            let best = (1..nr).fold(0, |b, j| if row[j] < row[b] { j } else { b });
            let second = (0..nr)
                .filter(|&j| j != best)
                .map(|j| row[j])
                .fold(f64::INFINITY, f64::min);
            all.push(Match {
                query: i,
                reference: best,
                nn: row[best],
                second,
            });
        }
        let back = (0..nr)
            .map(|j| {
                (0..nq)
                    .reduce(|b, i| if d[i * nr + j] < d[b * nr + j] { i } else { b })
                    .expect("non-empty")
            })
            .collect();
        Ok(Self { all, back })
    }

    pub fn filter(&self, ratio: Option<f64>, mutual: bool) -> MatchList {
        let matches = self
            .all
            .iter()
            .filter(|m| ratio.is_none_or(|r| m.ratio() <= r))
            .filter(|m| !mutual || self.back[m.reference] == m.query)
            .copied()
            .collect();
        MatchList { matches }
    }
}

/// Exact Euclidean nearest neighbour per query; ties go to the lowest reference index.
pub fn nn_match(query: &Matrix, reference: &Matrix, ratio: Option<f64>, mutual: bool) -> Result<MatchList> {
    if ratio.is_some() && reference.rows() < 2 {
        return Err(Error::Contract("ratio test needs at least 2 reference rows".into()));
    }
    Ok(Candidates::new(query, reference)?.filter(ratio, mutual))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub correspondences: usize,
    pub correct: usize,
    pub putative: usize,
    /// Absent when there are no correspondences.
    pub recall: Option<f64>,
    /// Absent when there are no putative matches.
    pub precision: Option<f64>,
    pub threshold: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| x.to_string())
}

impl EvalReport {
    pub const CSV_HEADER: &'static str =
        "scene,method,K,ratio,recall,precision,correct,putative,correspondences";

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("correspondences", self.correspondences.to_string()),
            ("correct", self.correct.to_string()),
            ("putative", self.putative.to_string()),
            ("recall", opt(self.recall)),
            ("recall_defined", self.recall.is_some().to_string()),
            ("precision", opt(self.precision)),
            ("precision_defined", self.precision.is_some().to_string()),
            ("threshold_px", self.threshold.to_string()),
        ] {
            writeln!(s, "{k}={v}").expect("writing to a string");
        }
        s
    }

    pub fn csv_row(&self, scene: &str, method: &str, k: usize, ratio: Option<f64>) -> String {
        format!(
            "{scene},{method},{k},{},{},{},{},{},{}",
            opt(ratio),
            opt(self.recall),
            opt(self.precision),
            self.correct,
            self.putative,
            self.correspondences
        )
    }
}

fn within(p: Point, others: &[Point], threshold: f64) -> bool {
    others.iter().any(|&q| distance(p, q) <= threshold)
}

/// Recall and precision of `matches` from view A (queries) into view B.
pub fn eval_recall(
    matches: &MatchList,
    kp_a: &KeypointSet,
    kp_b: &KeypointSet,
    h: &Homography,
    threshold: f64,
) -> Result<EvalReport> {
    if !(threshold > 0.0) {
        return Err(Error::Contract(format!("threshold must be positive, got {threshold}")));
    }
    let warped: Vec<Option<Point>> = kp_a.points.iter().map(|p| warp_point(h, p.pos).ok()).collect();
    let pos_b = kp_b.positions();
    let correspondences = warped
        .iter()
        .filter(|w| w.is_some_and(|w| within(w, &pos_b, threshold)))
        .count();
    let mut correct = 0;
    for m in &matches.matches {
        let (Some(Some(w)), Some(q)) = (warped.get(m.query), pos_b.get(m.reference)) else {
            if m.query >= warped.len() || m.reference >= pos_b.len() {
                return Err(Error::Contract(format!("match ({}, {}) out of range", m.query, m.reference)));
            }
            continue;
        };
        if distance(*w, *q) <= threshold {
            correct += 1;
        }
    }
    let putative = matches.len();
    Ok(EvalReport {
        correspondences,
        correct,
        putative,
        recall: (correspondences > 0).then(|| correct as f64 / correspondences as f64),
        precision: (putative > 0).then(|| correct as f64 / putative as f64),
        threshold,
    })
}

/// Everything needed to match and score one scene.
#[derive(Clone, Debug)]
pub struct EvalInstance<'a> {
    pub desc_a: &'a Matrix,
    pub desc_b: &'a Matrix,
    pub kp_a: &'a KeypointSet,
    pub kp_b: &'a KeypointSet,
    pub h: &'a Homography,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatioChoice {
    pub ratio: f64,
    /// Mean precision at `ratio`.
    pub precision: f64,
    /// Set when even the smallest ratio misses the target.
    pub unreachable: bool,
}

/// Largest ratio in `[0.5, 1]` whose mean precision reaches `target`.
///
/// A scene without putative matches counts as precision 1.
pub fn tune_ratio(instances: &[EvalInstance<'_>], target: f64, threshold: f64) -> Result<RatioChoice> {
    if !(0.0..1.0).contains(&target) {
        return Err(Error::Contract(format!("target precision {target} outside [0, 1)")));
    }
    if instances.is_empty() {
        return Err(Error::EmptyInput("ratio tuning needs at least one scene".into()));
    }
    let cands: Vec<Candidates> = instances
        .iter()
        .map(|s| Candidates::new(s.desc_a, s.desc_b))
        .collect::<Result<_>>()?;
    let mean_precision = |r: f64| -> Result<f64> {
        let mut total = 0.0;
        for (s, c) in instances.iter().zip(&cands) {
            let rep = eval_recall(&c.filter(Some(r), false), s.kp_a, s.kp_b, s.h, threshold)?;
            total += rep.precision.unwrap_or(1.0);
        }
        Ok(total / instances.len() as f64)
    };
    let top = mean_precision(RATIO_HIGH)?;
    if top >= target {
        return Ok(RatioChoice { ratio: RATIO_HIGH, precision: top, unreachable: false });
    }
    let low = mean_precision(RATIO_LOW)?;
    if low < target {
        return Ok(RatioChoice { ratio: RATIO_LOW, precision: low, unreachable: true });
    }
    let (mut lo, mut hi, mut at_lo) = (RATIO_LOW, RATIO_HIGH, low);
    for _ in 0..RATIO_ITERS {
        let mid = 0.5 * (lo + hi);
        let p = mean_precision(mid)?;
        if p >= target {
            lo = mid;
            at_lo = p;
        } else {
            hi = mid;
        }
    }
    Ok(RatioChoice { ratio: lo, precision: at_lo, unreachable: false })
}

/// Keypoint rows chosen for one density: view-A rows and view-B rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Subsample {
    pub rows_a: Vec<usize>,
    pub rows_b: Vec<usize>,
}

/// Uniform subsample of `count` rows per view; matchable partners of chosen
/// view-A rows are kept in view B and the remainder is filled uniformly.
pub fn subsample<R: Rng>(kp_a: &KeypointSet, kp_b: &KeypointSet, count: usize, rng: &mut R) -> Result<Subsample> {
    if count == 0 || count > kp_a.len() || count > kp_b.len() {
        return Err(Error::Contract(format!(
            "density {count} outside 1..={}",
            kp_a.len().min(kp_b.len())
        )));
    }
    if count == kp_a.len() && count == kp_b.len() {
        return Ok(Subsample {
            rows_a: (0..count).collect(),
            rows_b: (0..count).collect(),
        });
    }
    let mut rows_a = index::sample(rng, kp_a.len(), count).into_vec();
    rows_a.sort_unstable();
    let mut taken = vec![false; kp_b.len()];
    let mut rows_b: Vec<usize> = rows_a
        .iter()
        .filter_map(|&i| kp_a.points[i].match_index)
        .collect();
    for &j in &rows_b {
        taken[j] = true;
    }
    let mut rest: Vec<usize> = (0..kp_b.len()).filter(|&j| !taken[j]).collect();
    rest.shuffle(rng);
    rows_b.extend(rest.into_iter().take(count - rows_b.len()));
    rows_b.sort_unstable();
    Ok(Subsample { rows_a, rows_b })
}

/// Scoring only reads positions, so labels of the subset are reset.
fn subset(kp: &KeypointSet, rows: &[usize]) -> KeypointSet {
    KeypointSet {
        width: kp.width,
        height: kp.height,
        points: rows.iter().map(|&i| {
            let mut p = kp.points[i];
            p.match_index = None;
            p.category = crate::keypoints::Category::Undiscovered;
            p
        }).collect(),
    }
}

/// Recall at each keypoint count; `descriptors` yields both views' descriptors for a subsample.
pub fn density_sweep(
    kp_a: &KeypointSet,
    kp_b: &KeypointSet,
    h: &Homography,
    counts: &[usize],
    seed: u64,
    threshold: f64,
    ratio: Option<f64>,
    mutual: bool,
    mut descriptors: impl FnMut(&Subsample) -> Result<(Matrix, Matrix)>,
) -> Result<Vec<(usize, EvalReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(counts.len());
    for &n in counts {
        let sub = subsample(kp_a, kp_b, n, &mut rng)?;
        let (da, db) = descriptors(&sub)?;
        let m = nn_match(&da, &db, ratio, mutual)?;
        let rep = eval_recall(&m, &subset(kp_a, &sub.rows_a), &subset(kp_b, &sub.rows_b), h, threshold)?;
        out.push((n, rep));
    }
    Ok(out)
}

/// Indices of the `n` largest responses; ties go to the lower index.
pub fn top_n(resp: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..resp.len()).collect();
    idx.sort_by(|&a, &b| resp[b].total_cmp(&resp[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

/// Fraction of the top-`n` view-A keypoints whose warp lands within `threshold`
/// of a top-`n` view-B keypoint.
pub fn repeatability(
    resp_a: &[f64],
    resp_b: &[f64],
    kp_a: &KeypointSet,
    kp_b: &KeypointSet,
    h: &Homography,
    n: usize,
    threshold: f64,
) -> Result<f64> {
    if resp_a.len() != kp_a.len() || resp_b.len() != kp_b.len() {
        return Err(Error::Dimension("one response per keypoint required".into()));
    }
    if n == 0 || n > kp_a.len().min(kp_b.len()) {
        return Err(Error::Contract(format!(
            "top_n {n} outside 1..={}",
            kp_a.len().min(kp_b.len())
        )));
    }
    let sel_b: Vec<Point> = top_n(resp_b, n).into_iter().map(|j| kp_b.points[j].pos).collect();
    let hits = top_n(resp_a, n)
        .into_iter()
        .filter(|&i| {
            warp_point(h, kp_a.points[i].pos).is_ok_and(|w| within(w, &sel_b, threshold))
        })
        .count();
    Ok(hits as f64 / n as f64)
}

/// Mean repeatability of uniformly random responses over `seeds`.
pub fn random_repeatability(
    kp_a: &KeypointSet,
    kp_b: &KeypointSet,
    h: &Homography,
    n: usize,
    threshold: f64,
    seeds: impl IntoIterator<Item = u64>,
) -> Result<f64> {
    let (mut total, mut count) = (0.0, 0usize);
    for seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ra: Vec<f64> = (0..kp_a.len()).map(|_| rng.random()).collect();
        let rb: Vec<f64> = (0..kp_b.len()).map(|_| rng.random()).collect();
        total += repeatability(&ra, &rb, kp_a, kp_b, h, n, threshold)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyInput("no seeds".into()));
    }
    Ok(total / count as f64)
}
