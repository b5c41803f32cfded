//! Synthetic scene pairs: labelled keypoints related by a ground-truth
//! homography, ambiguous local descriptors and smooth regional feature grids.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{distance, homography_from_4pt, warp_point, FourPointOffsets, Homography, Point};
use crate::io;
use crate::keypoints::{Category, Keypoint, KeypointSet};
use crate::numerics::{l2_normalize_rows, Matrix};
use crate::visual_context::{interpolate_regional, RegionalGrid, DEFAULT_NEIGHBORS};

/// Largest allowed distance between a matchable partner and the warped point, in pixels.
pub const MAX_RESIDUAL_PX: f64 = 0.5;
/// Half-width of the uniform sub-pixel jitter box; its diagonal stays below [`MAX_RESIDUAL_PX`].
pub const JITTER_PX: f64 = 0.35;
/// Radius within which a point counts as re-detected in the other view.
pub const REPEAT_RADIUS_PX: f64 = 2.5;
/// Minimum distance kept between an unrepeatable point and any point of the other view.
pub const UNREPEATABLE_CLEARANCE_PX: f64 = 2.0 * REPEAT_RADIUS_PX;
/// Fourier components per regional channel.
const FIELD_TERMS: usize = 4;
/// Largest spatial frequency of the regional field, in cycles per image side.
const FIELD_MAX_FREQ: f64 = 1.5;
const MAX_DRAWS: usize = 100_000;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub width: f64,
    pub height: f64,
    pub keypoints: usize,
    pub groups: usize,
    pub group_size: usize,
    /// Per-component standard deviation of the descriptor noise.
    pub sigma: f64,
    pub undiscovered: f64,
    pub unrepeatable: f64,
    /// Bound on the corner offsets of the ground-truth homography, in normalized units.
    pub offset: f64,
    pub regional_depth: usize,
    /// Regional grid cells along the image width.
    pub grid_cells: usize,
    pub desc_dim: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 256.0,
            height: 256.0,
            keypoints: 256,
            groups: 8,
            group_size: 4,
            sigma: 0.05,
            undiscovered: 0.1,
            unrepeatable: 0.1,
            offset: 0.15,
            regional_depth: 64,
            grid_cells: 8,
            desc_dim: 128,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub const KEYS: [&'static str; 13] = [
        "width",
        "height",
        "keypoints",
        "groups",
        "group_size",
        "sigma",
        "undiscovered",
        "unrepeatable",
        "offset",
        "regional_depth",
        "grid_cells",
        "desc_dim",
        "seed",
    ];

    pub fn stride(&self) -> f64 {
        self.width / self.grid_cells as f64
    }

    pub fn grid_rows(&self) -> usize {
        ((self.height / self.stride()).round() as usize).max(1)
    }

    /// `(matchable, undiscovered, unrepeatable)` per view.
    pub fn category_counts(&self) -> (usize, usize, usize) {
        let k = self.keypoints as f64;
        let und = (k * self.undiscovered).round() as usize;
        let unr = (k * self.unrepeatable).round() as usize;
        (self.keypoints.saturating_sub(und + unr), und, unr)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Spec(m));
        if !(self.width > 0.0 && self.height > 0.0) || !self.width.is_finite() || !self.height.is_finite() {
            return bad(format!("image size {}x{} must be positive", self.width, self.height));
        }
        if self.groups > 0 && self.group_size < 2 {
            return bad(format!("group_size {} must be at least 2", self.group_size));
        }
        if self.groups > 0 && self.keypoints < 2 * self.group_size {
            return bad(format!(
                "keypoints {} must be at least twice group_size {}",
                self.keypoints, self.group_size
            ));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma {} must be non-negative", self.sigma));
        }
        for (k, v) in [("undiscovered", self.undiscovered), ("unrepeatable", self.unrepeatable)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{k} fraction {v} must lie in [0, 1)"));
            }
        }
        if self.undiscovered + self.unrepeatable >= 1.0 {
            return bad("undiscovered + unrepeatable fractions must sum below 1".into());
        }
        if !(0.0..0.5).contains(&self.offset) {
            return bad(format!("offset {} must lie in [0, 0.5)", self.offset));
        }
        if self.regional_depth == 0 || self.desc_dim == 0 || self.grid_cells == 0 {
            return bad("regional_depth, desc_dim and grid_cells must be positive".into());
        }
        let (m, _, _) = self.category_counts();
        if m < self.groups * self.group_size {
            return bad(format!(
                "{} ambiguity group members exceed the {m} matchable keypoints",
                self.groups * self.group_size
            ));
        }
        if m == 0 {
            return bad("scene needs at least one matchable keypoint".into());
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            writeln!(s, "{k}={v}").expect("writing to a string");
        }
        s
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("width", self.width.to_string()),
            ("height", self.height.to_string()),
            ("keypoints", self.keypoints.to_string()),
            ("groups", self.groups.to_string()),
            ("group_size", self.group_size.to_string()),
            ("sigma", self.sigma.to_string()),
            ("undiscovered", self.undiscovered.to_string()),
            ("unrepeatable", self.unrepeatable.to_string()),
            ("offset", self.offset.to_string()),
            ("regional_depth", self.regional_depth.to_string()),
            ("grid_cells", self.grid_cells.to_string()),
            ("desc_dim", self.desc_dim.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{v}` for key `{key}`")))
        }
        match key {
            "width" => self.width = p(key, value)?,
            "height" => self.height = p(key, value)?,
            "keypoints" => self.keypoints = p(key, value)?,
            "groups" => self.groups = p(key, value)?,
            "group_size" => self.group_size = p(key, value)?,
            "sigma" => self.sigma = p(key, value)?,
            "undiscovered" => self.undiscovered = p(key, value)?,
            "unrepeatable" => self.unrepeatable = p(key, value)?,
            "offset" => self.offset = p(key, value)?,
            "regional_depth" => self.regional_depth = p(key, value)?,
            "grid_cells" => self.grid_cells = p(key, value)?,
            "desc_dim" => self.desc_dim = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut spec = SceneSpec::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got `{line}`")))?;
            spec.set(k.trim(), v)?;
        }
        Ok(spec)
    }
}

/// Both views of one synthetic scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub spec: SceneSpec,
    pub keypoints_a: KeypointSet,
    pub keypoints_b: KeypointSet,
    pub desc_a: Matrix,
    pub desc_b: Matrix,
    pub grid_a: RegionalGrid,
    pub grid_b: RegionalGrid,
    /// Maps view-A pixels to view-B pixels.
    pub h_ab: Homography,
}

impl Scene {
    /// Pairs `(i, j)` of matchable rows, ordered by the view-A row.
    pub fn matches(&self) -> Vec<(usize, usize)> {
        self.keypoints_a
            .points
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.match_index.map(|j| (i, j)))
            .collect()
    }
}

fn unit_gaussian<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn noisy_descriptor<R: Rng>(base: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    base.iter()
        .map(|&b| {
            let n: f64 = StandardNormal.sample(rng);
            b + sigma * n
        })
        .collect()
}

/// Low-frequency random Fourier field sampled at pixel positions.
struct Field {
    /// Per channel: `(kx, ky, phase, amplitude)` terms, frequencies in cycles per image side.
    terms: Vec<[(f64, f64, f64, f64); FIELD_TERMS]>,
    width: f64,
    height: f64,
}

impl Field {
    fn new<R: Rng>(depth: usize, width: f64, height: f64, rng: &mut R) -> Self {
        let amp = (2.0 / FIELD_TERMS as f64).sqrt();
        let terms = (0..depth)
            .map(|_| {
                std::array::from_fn(|_| {
                    let kx = rng.random_range(-FIELD_MAX_FREQ..FIELD_MAX_FREQ);
                    let ky = rng.random_range(-FIELD_MAX_FREQ..FIELD_MAX_FREQ);
                    let ph = rng.random_range(0.0..std::f64::consts::TAU);
                    (kx, ky, ph, amp)
                })
            })
            .collect();
        Self { terms, width, height }
    }

    fn eval(&self, p: Point) -> Vec<f64> {
        let (u, v) = (p.0 / self.width, p.1 / self.height);
        self.terms
            .iter()
            .map(|ts| {
                ts.iter()
                    .map(|&(kx, ky, ph, a)| a * (std::f64::consts::TAU * (kx * u + ky * v) + ph).cos())
                    .sum()
            })
            .collect()
    }
}

fn inside(p: Point, w: f64, h: f64, margin: f64) -> bool {
    p.0 >= margin && p.0 <= w - margin && p.1 >= margin && p.1 <= h - margin
}

fn far_from(p: Point, others: &[Point], clearance: f64) -> bool {
    others.iter().all(|&q| distance(p, q) > clearance)
}

struct Draft {
    pos: Point,
    category: Category,
    base: usize,
    partner: Option<usize>,
}

/// Generates one scene pair; identical specs give identical scenes.
pub fn gen_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width, spec.height);
    let h_norm = homography_from_4pt(&FourPointOffsets::random(spec.offset, &mut rng))?;
    let h_ab = h_norm.normalized_to_pixels(w, h)?;
    let (n_match, n_und, n_unr) = spec.category_counts();
    let n_rep = n_match + n_und;

    let uniform = |rng: &mut ChaCha8Rng| (rng.random_range(0.0..w), rng.random_range(0.0..h));

    // repeatable points: A position, warped B position plus jitter
    let mut rep_a = Vec::with_capacity(n_rep);
    let mut rep_b = Vec::with_capacity(n_rep);
    for _ in 0..n_rep {
        let mut draws = 0;
        loop {
            draws += 1;
            if draws > MAX_DRAWS {
                return Err(Error::Spec("could not place repeatable keypoints".into()));
            }
            let p = uniform(&mut rng);
            let Ok(q) = warp_point(&h_ab, p) else { continue };
            if !inside(q, w, h, JITTER_PX) {
                continue;
            }
            let j = (
                rng.random_range(-JITTER_PX..=JITTER_PX),
                rng.random_range(-JITTER_PX..=JITTER_PX),
            );
            rep_a.push(p);
            rep_b.push((q.0 + j.0, q.1 + j.1));
            break;
        }
    }
    let warped_rep: Vec<Point> = rep_a
        .iter()
        .map(|&p| warp_point(&h_ab, p))
        .collect::<Result<_>>()?;

    let mut unr_b: Vec<Point> = Vec::with_capacity(n_unr);
    for _ in 0..n_unr {
        let mut draws = 0;
        loop {
            draws += 1;
            if draws > MAX_DRAWS {
                return Err(Error::Spec("could not place unrepeatable keypoints".into()));
            }
            let q = uniform(&mut rng);
            if far_from(q, &warped_rep, UNREPEATABLE_CLEARANCE_PX) {
                unr_b.push(q);
                break;
            }
        }
    }
    let all_b: Vec<Point> = rep_b.iter().chain(&unr_b).copied().collect();
    let mut unr_a: Vec<Point> = Vec::with_capacity(n_unr);
    for _ in 0..n_unr {
        let mut draws = 0;
        loop {
            draws += 1;
            if draws > MAX_DRAWS {
                return Err(Error::Spec("could not place unrepeatable keypoints".into()));
            }
            let p = uniform(&mut rng);
            let clear = match warp_point(&h_ab, p) {
                Ok(q) => far_from(q, &all_b, UNREPEATABLE_CLEARANCE_PX),
                Err(_) => true,
            };
            if clear {
                unr_a.push(p);
                break;
            }
        }
    }

    // descriptor bases: ambiguity groups first, then one base per remaining point
    let grouped = spec.groups * spec.group_size;
    let mut bases: Vec<Vec<f64>> = (0..spec.groups).map(|_| unit_gaussian(spec.desc_dim, &mut rng)).collect();
    let mut base_of = |i: usize, rng: &mut ChaCha8Rng| {
        if i < grouped {
            i / spec.group_size
        } else {
            bases.push(unit_gaussian(spec.desc_dim, rng));
            bases.len() - 1
        }
    };
    let mut drafts_a: Vec<Draft> = Vec::with_capacity(spec.keypoints);
    let mut drafts_b: Vec<Draft> = Vec::with_capacity(spec.keypoints);
    for i in 0..n_rep {
        let category = if i < n_match {
            Category::Matchable
        } else {
            Category::Undiscovered
        };
        let base = base_of(i, &mut rng);
        drafts_a.push(Draft { pos: rep_a[i], category, base, partner: Some(i) });
        drafts_b.push(Draft { pos: rep_b[i], category, base, partner: Some(i) });
    }
    for &p in &unr_a {
        let base = base_of(usize::MAX, &mut rng);
        drafts_a.push(Draft { pos: p, category: Category::Unrepeatable, base, partner: None });
    }
    for &q in &unr_b {
        let base = base_of(usize::MAX, &mut rng);
        drafts_b.push(Draft { pos: q, category: Category::Unrepeatable, base, partner: None });
    }

    let mut perm_a: Vec<usize> = (0..drafts_a.len()).collect();
    let mut perm_b: Vec<usize> = (0..drafts_b.len()).collect();
    perm_a.shuffle(&mut rng);
    perm_b.shuffle(&mut rng);
    // draft index of a repeatable pair → row in each shuffled view
    let mut row_a = vec![0; n_rep];
    let mut row_b = vec![0; n_rep];
    for (row, &d) in perm_a.iter().enumerate() {
        if let Some(k) = drafts_a[d].partner {
            row_a[k] = row;
        }
    }
    for (row, &d) in perm_b.iter().enumerate() {
        if let Some(k) = drafts_b[d].partner {
            row_b[k] = row;
        }
    }

    let build = |drafts: &[Draft], perm: &[usize], other_rows: &[usize], rng: &mut ChaCha8Rng| {
        let mut points = Vec::with_capacity(perm.len());
        let mut desc = Matrix::zeros(perm.len(), spec.desc_dim);
        for (row, &d) in perm.iter().enumerate() {
            let dr = &drafts[d];
            let match_index = match (dr.category, dr.partner) {
                (Category::Matchable, Some(k)) => Some(other_rows[k]),
                _ => None,
            };
            points.push(Keypoint { pos: dr.pos, category: dr.category, match_index });
            desc.row_mut(row)
                .copy_from_slice(&noisy_descriptor(&bases[dr.base], spec.sigma, rng));
        }
        (points, desc)
    };
    let (points_a, desc_a) = build(&drafts_a, &perm_a, &row_b, &mut rng);
    let (points_b, desc_b) = build(&drafts_b, &perm_b, &row_a, &mut rng);
    let mut desc_a = l2_normalize_rows(&desc_a);
    let mut desc_b = l2_normalize_rows(&desc_b);
    desc_a.snap_f32();
    desc_b.snap_f32();

    let field = Field::new(spec.regional_depth, w, h, &mut rng);
    let (gh, gw) = (spec.grid_rows(), spec.grid_cells);
    let stride = spec.stride() as f32 as f64;
    let mut cells_a = Matrix::zeros(gh * gw, spec.regional_depth);
    let probe = RegionalGrid::new(gh, gw, stride, Matrix::zeros(gh * gw, 1))?;
    for c in 0..gh * gw {
        cells_a.row_mut(c).copy_from_slice(&field.eval(probe.anchor(c)));
    }
    cells_a.snap_f32();
    let grid_a = RegionalGrid::new(gh, gw, stride, cells_a)?;
    let h_ba = h_ab.inverse()?;
    let pulled: Vec<Point> = (0..gh * gw)
        .map(|c| warp_point(&h_ba, probe.anchor(c)))
        .collect::<Result<_>>()?;
    let mut cells_b = interpolate_regional(&grid_a, &pulled, DEFAULT_NEIGHBORS)?;
    cells_b.snap_f32();
    let grid_b = RegionalGrid::new(gh, gw, stride, cells_b)?;

    Ok(Scene {
        spec: spec.clone(),
        keypoints_a: KeypointSet::new(w, h, points_a)?,
        keypoints_b: KeypointSet::new(w, h, points_b)?,
        desc_a,
        desc_b,
        grid_a,
        grid_b,
        h_ab,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    /// Matchable pair whose partner is too far from the warped point.
    Residual { index: usize, residual: f64 },
    /// Broken or asymmetric match index.
    Partner { view: char, index: usize },
    /// Unrepeatable point with a point of the other view within the repeat radius.
    Repeated { view: char, index: usize },
    /// Descriptor row not unit-norm within 1e-6.
    NotUnit { view: char, index: usize },
    Shape(String),
    /// Category count off from the `SceneSpec` fractions by more than one.
    Count { view: char, category: Category, expected: usize, found: usize },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SceneReport {
    pub counts_a: BTreeMap<Category, usize>,
    pub counts_b: BTreeMap<Category, usize>,
    pub mean_residual: f64,
    pub violations: Vec<Violation>,
}

impl SceneReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn residual_violations(&self) -> usize {
        self.violations
            .iter()
            .filter(|v| matches!(v, Violation::Residual { .. }))
            .count()
    }
}

/// Checks every scene invariant and tallies categories.
pub fn verify_scene(scene: &Scene) -> SceneReport {
    let mut rep = SceneReport::default();
    let views = [
        ('a', &scene.keypoints_a, &scene.desc_a, &scene.keypoints_b),
        ('b', &scene.keypoints_b, &scene.desc_b, &scene.keypoints_a),
    ];
    let (em, eu, er) = scene.spec.category_counts();
    for (view, kp, desc, other) in views {
        let counts = if view == 'a' { &mut rep.counts_a } else { &mut rep.counts_b };
        for c in [Category::Matchable, Category::Undiscovered, Category::Unrepeatable] {
            counts.insert(c, kp.count(c));
        }
        for (category, expected) in [(Category::Matchable, em), (Category::Undiscovered, eu), (Category::Unrepeatable, er)] {
            let found = counts[&category];
            if found.abs_diff(expected) > 1 {
                rep.violations.push(Violation::Count { view, category, expected, found });
            }
        }
        if desc.rows() != kp.len() || desc.cols() != scene.spec.desc_dim {
            rep.violations.push(Violation::Shape(format!(
                "view {view}: {} keypoints, descriptors {:?}",
                kp.len(),
                desc.shape()
            )));
        } else {
            for (i, r) in desc.iter_rows().enumerate() {
                let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
                if (n - 1.0).abs() > 1e-6 {
                    rep.violations.push(Violation::NotUnit { view, index: i });
                }
            }
        }
        for (i, p) in kp.points.iter().enumerate() {
            if let Some(j) = p.match_index {
                let ok = other
                    .points
                    .get(j)
                    .is_some_and(|q| q.category == Category::Matchable && q.match_index == Some(i));
                if !ok {
                    rep.violations.push(Violation::Partner { view, index: i });
                }
            }
        }
    }

    let h_ba = scene.h_ab.inverse().ok();
    let warp_to = |view: char, p: Point| -> Option<Point> {
        if view == 'a' {
            warp_point(&scene.h_ab, p).ok()
        } else {
            h_ba.as_ref().and_then(|h| warp_point(h, p).ok())
        }
    };
    for (view, kp, other) in [
        ('a', &scene.keypoints_a, &scene.keypoints_b),
        ('b', &scene.keypoints_b, &scene.keypoints_a),
    ] {
        let other_pos = other.positions();
        for (i, p) in kp.points.iter().enumerate() {
            if p.category != Category::Unrepeatable {
                continue;
            }
            if let Some(q) = warp_to(view, p.pos) {
                if !far_from(q, &other_pos, REPEAT_RADIUS_PX) {
                    rep.violations.push(Violation::Repeated { view, index: i });
                }
            }
        }
    }

    let mut total = 0.0;
    let mut n = 0usize;
    for (i, p) in scene.keypoints_a.points.iter().enumerate() {
        let Some(j) = p.match_index else { continue };
        let Some(q) = scene.keypoints_b.points.get(j) else { continue };
        let residual = warp_point(&scene.h_ab, p.pos).map_or(f64::INFINITY, |w| distance(w, q.pos));
        if residual > MAX_RESIDUAL_PX {
            rep.violations.push(Violation::Residual { index: i, residual });
        }
        total += residual;
        n += 1;
    }
    rep.mean_residual = if n > 0 { total / n as f64 } else { 0.0 };
    rep
}

pub const SCENE_FILES: [&str; 8] = [
    "keypoints_a.csv",
    "keypoints_b.csv",
    "desc_a.ctxm",
    "desc_b.ctxm",
    "grid_a.ctxg",
    "grid_b.ctxg",
    "h_ab.txt",
    "spec.txt",
];

pub fn write_scene(dir: &Path, scene: &Scene) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("keypoints_a.csv"), io::keypoints_to_csv(&scene.keypoints_a))?;
    fs::write(dir.join("keypoints_b.csv"), io::keypoints_to_csv(&scene.keypoints_b))?;
    io::write_matrix(&dir.join("desc_a.ctxm"), &scene.desc_a)?;
    io::write_matrix(&dir.join("desc_b.ctxm"), &scene.desc_b)?;
    io::write_grid(&dir.join("grid_a.ctxg"), &scene.grid_a)?;
    io::write_grid(&dir.join("grid_b.ctxg"), &scene.grid_b)?;
    io::write_homography(&dir.join("h_ab.txt"), &scene.h_ab)?;
    fs::write(dir.join("spec.txt"), scene.spec.to_text())?;
    Ok(())
}

pub fn read_scene(dir: &Path) -> Result<Scene> {
    let spec = SceneSpec::from_text(&fs::read_to_string(dir.join("spec.txt"))?)?;
    let kp = |name: &str| -> Result<KeypointSet> {
        let path = dir.join(name);
        io::keypoints_from_csv(&fs::read_to_string(&path)?, spec.width, spec.height, &path.display().to_string())
    };
    Ok(Scene {
        keypoints_a: kp("keypoints_a.csv")?,
        keypoints_b: kp("keypoints_b.csv")?,
        desc_a: io::read_matrix(&dir.join("desc_a.ctxm"))?,
        desc_b: io::read_matrix(&dir.join("desc_b.ctxm"))?,
        grid_a: io::read_grid(&dir.join("grid_a.ctxg"))?,
        grid_b: io::read_grid(&dir.join("grid_b.ctxg"))?,
        h_ab: io::read_homography(&dir.join("h_ab.txt"))?,
        spec,
    })
}

/// Scene directories directly under `root`, in name order.
pub fn list_scenes(root: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut dirs: Vec<_> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("spec.txt").is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SceneSpec {
        SceneSpec {
            keypoints: 64,
            seed,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn fresh_scene_verifies() {
        for seed in 0..4 {
            let s = gen_scene(&small(seed)).unwrap();
            let r = verify_scene(&s);
            assert!(r.is_ok(), "{:?}", r.violations);
            assert!(r.mean_residual <= MAX_RESIDUAL_PX);
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(gen_scene(&small(7)).unwrap(), gen_scene(&small(7)).unwrap());
        assert_ne!(gen_scene(&small(7)).unwrap(), gen_scene(&small(8)).unwrap());
    }

    #[test]
    fn clean_matches_share_descriptors() {
        let spec = SceneSpec { sigma: 0.0, groups: 0, ..small(1) };
        let s = gen_scene(&spec).unwrap();
        for (i, j) in s.matches() {
            assert_eq!(s.desc_a.row(i), s.desc_b.row(j));
        }
    }

    #[test]
    fn scene_spec_errors() {
        let spec = SceneSpec { keypoints: 7, group_size: 4, groups: 1, ..SceneSpec::default() };
        assert!(matches!(gen_scene(&spec), Err(Error::Spec(_))));
        let spec = SceneSpec { undiscovered: 0.6, unrepeatable: 0.5, ..SceneSpec::default() };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn scene_spec_text_round_trip() {
        let spec = SceneSpec { sigma: 0.125, seed: 42, ..SceneSpec::default() };
        assert_eq!(SceneSpec::from_text(&spec.to_text()).unwrap(), spec);
        assert!(SceneSpec::from_text("bogus=1").is_err());
    }
}
