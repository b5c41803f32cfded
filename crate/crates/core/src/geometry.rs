//! Homographies: 4-point construction via normalized DLT, point warping and
//! pixel/normalized coordinate conversion.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};

pub type Point = (f64, f64);

/// Corners of the normalized image square, in the order the offsets refer to.
pub const UNIT_CORNERS: [Point; 4] = [(-1.0, 1.0), (1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];

const DET_MIN: f64 = 1e-12;
const W_MIN: f64 = 1e-12;

/// 3×3 projective transform, normalized so that `h[2][2] == 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography {
    h: [[f64; 3]; 3],
}

impl Homography {
    pub const IDENTITY: Homography = Homography {
        h: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    /// Builds from a raw matrix, rescaling so the bottom-right entry is 1.
    pub fn from_matrix(h: [[f64; 3]; 3]) -> Result<Self> {
        if h.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Singular("non-finite homography entry".into()));
        }
        if h[2][2].abs() < DET_MIN {
            return Err(Error::Singular("h[2][2] is zero".into()));
        }
        let s = h[2][2];
        let mut out = h;
        out.iter_mut().flatten().for_each(|v| *v /= s);
        let hom = Homography { h: out };
        if hom.det().abs() <= DET_MIN {
            return Err(Error::Singular(format!("determinant {:e}", hom.det())));
        }
        Ok(hom)
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.h
    }

    pub fn det(&self) -> f64 {
        let h = &self.h;
        h[0][0] * (h[1][1] * h[2][2] - h[1][2] * h[2][1])
            - h[0][1] * (h[1][0] * h[2][2] - h[1][2] * h[2][0])
            + h[0][2] * (h[1][0] * h[2][1] - h[1][1] * h[2][0])
    }

    /// `self · other`: applies `other` first.
    pub fn compose(&self, other: &Homography) -> Result<Homography> {
        Homography::from_matrix(mat_mul(&self.h, &other.h))
    }

    pub fn inverse(&self) -> Result<Homography> {
        let h = &self.h;
        let d = self.det();
        if d.abs() <= DET_MIN {
            return Err(Error::Singular(format!("determinant {d:e}")));
        }
        let adj = [
            [
                h[1][1] * h[2][2] - h[1][2] * h[2][1],
                h[0][2] * h[2][1] - h[0][1] * h[2][2],
                h[0][1] * h[1][2] - h[0][2] * h[1][1],
            ],
            [
                h[1][2] * h[2][0] - h[1][0] * h[2][2],
                h[0][0] * h[2][2] - h[0][2] * h[2][0],
                h[0][2] * h[1][0] - h[0][0] * h[1][2],
            ],
            [
                h[1][0] * h[2][1] - h[1][1] * h[2][0],
                h[0][1] * h[2][0] - h[0][0] * h[2][1],
                h[0][0] * h[1][1] - h[0][1] * h[1][0],
            ],
        ];
        Homography::from_matrix(adj)
    }

    /// Re-expresses a homography between normalized `[-1, 1]²` frames as one
    /// between pixel frames of the given size.
    pub fn normalized_to_pixels(&self, width: f64, height: f64) -> Result<Homography> {
        let to_norm = [
            [2.0 / width, 0.0, -1.0],
            [0.0, 2.0 / height, -1.0],
            [0.0, 0.0, 1.0],
        ];
        let to_px = [
            [width / 2.0, 0.0, width / 2.0],
            [0.0, height / 2.0, height / 2.0],
            [0.0, 0.0, 1.0],
        ];
        Homography::from_matrix(mat_mul(&to_px, &mat_mul(&self.h, &to_norm)))
    }
}

impl fmt::Display for Homography {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in &self.h {
            writeln!(f, "{} {} {}", row[0], row[1], row[2])?;
        }
        Ok(())
    }
}

impl FromStr for Homography {
    type Err = Error;

    /// Nine whitespace-separated decimals, row-major.
    fn from_str(s: &str) -> Result<Self> {
        let vals = s
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| Error::format("homography", format!("`{t}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != 9 {
            return Err(Error::format(
                "homography",
                format!("expected 9 values, found {}", vals.len()),
            ));
        }
        let mut h = [[0.0; 3]; 3];
        for (k, v) in vals.into_iter().enumerate() {
            h[k / 3][k % 3] = v;
        }
        Homography::from_matrix(h)
    }
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Corner displacements `(Δu_i, Δv_i)` in normalized image coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FourPointOffsets {
    pub du: [f64; 4],
    pub dv: [f64; 4],
}

impl FourPointOffsets {
    pub const ZERO: FourPointOffsets = FourPointOffsets {
        du: [0.0; 4],
        dv: [0.0; 4],
    };

    pub fn new(du: [f64; 4], dv: [f64; 4]) -> Result<Self> {
        if du.iter().chain(&dv).any(|v| !(v.abs() < 0.5)) {
            return Err(Error::Contract(
                "corner offsets must lie in (-0.5, 0.5)".into(),
            ));
        }
        Ok(Self { du, dv })
    }

    /// Independent uniform draws in `(-magnitude, magnitude)`, `magnitude ≤ 0.5`.
    pub fn random<R: Rng>(magnitude: f64, rng: &mut R) -> Self {
        let m = magnitude.clamp(0.0, 0.5);
        let mut draw = || {
            if m == 0.0 {
                0.0
            } else {
                // open interval: reject the (measure-zero) endpoint
                loop {
                    let v = rng.random_range(-m..m);
                    if v > -m {
                        return v;
                    }
                }
            }
        };
        let du = [draw(), draw(), draw(), draw()];
        let dv = [draw(), draw(), draw(), draw()];
        Self { du, dv }
    }

    pub fn is_zero(&self) -> bool {
        self.du.iter().chain(&self.dv).all(|&v| v == 0.0)
    }

    pub fn perturbed_corners(&self) -> [Point; 4] {
        let mut out = UNIT_CORNERS;
        for (i, p) in out.iter_mut().enumerate() {
            p.0 += self.du[i];
            p.1 += self.dv[i];
        }
        out
    }
}

/// Homography taking each unit corner `c_i` to `c_i + (Δu_i, Δv_i)`.
pub fn homography_from_4pt(offsets: &FourPointOffsets) -> Result<Homography> {
    homography_from_correspondences(&UNIT_CORNERS, &offsets.perturbed_corners())
}

/// Normalized DLT for exactly four correspondences `src[i] → dst[i]`.
pub fn homography_from_correspondences(src: &[Point; 4], dst: &[Point; 4]) -> Result<Homography> {
    check_general_position(src)?;
    check_general_position(dst)?;
    let ts = hartley(src).0;
    let (td, td_inv) = hartley(dst);
    let mut a = [[0.0; 9]; 8];
    for i in 0..4 {
        let (x, y) = apply(&ts, src[i]);
        let (u, v) = apply(&td, dst[i]);
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    let h = solve8(a)?;
    let hn = [[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]];
    Homography::from_matrix(mat_mul(&td_inv, &mat_mul(&hn, &ts)))
}

fn check_general_position(p: &[Point; 4]) -> Result<()> {
    let scale = p
        .iter()
        .map(|q| q.0.abs().max(q.1.abs()))
        .fold(1.0, f64::max);
    for (i, j, k) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
        let cross = (p[j].0 - p[i].0) * (p[k].1 - p[i].1) - (p[j].1 - p[i].1) * (p[k].0 - p[i].0);
        if cross.abs() <= 1e-12 * scale * scale {
            return Err(Error::Singular(format!(
                "points {i}, {j}, {k} are collinear"
            )));
        }
    }
    Ok(())
}

/// Centroid shift plus isotropic scale to mean distance √2, and its inverse.
fn hartley(p: &[Point; 4]) -> ([[f64; 3]; 3], [[f64; 3]; 3]) {
    let cx = p.iter().map(|q| q.0).sum::<f64>() / 4.0;
    let cy = p.iter().map(|q| q.1).sum::<f64>() / 4.0;
    let md = p
        .iter()
        .map(|q| ((q.0 - cx).powi(2) + (q.1 - cy).powi(2)).sqrt())
        .sum::<f64>()
        / 4.0;
    let s = std::f64::consts::SQRT_2 / md;
    (
        [[s, 0.0, -s * cx], [0.0, s, -s * cy], [0.0, 0.0, 1.0]],
        [[1.0 / s, 0.0, cx], [0.0, 1.0 / s, cy], [0.0, 0.0, 1.0]],
    )
}

fn apply(t: &[[f64; 3]; 3], p: Point) -> Point {
    (
        t[0][0] * p.0 + t[0][1] * p.1 + t[0][2],
        t[1][0] * p.0 + t[1][1] * p.1 + t[1][2],
    )
}

/// Gaussian elimination with partial pivoting on an 8×8 augmented system.
fn solve8(mut a: [[f64; 9]; 8]) -> Result<[f64; 8]> {
    for col in 0..8 {
        let piv = (col..8)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[piv][col].abs() < 1e-12 {
            return Err(Error::Singular("degenerate DLT system".into()));
        }
        a.swap(col, piv);
        for r in col + 1..8 {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..9 {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    let mut x = [0.0; 8];
    for r in (0..8).rev() {
        let s: f64 = (r + 1..8).map(|c| a[r][c] * x[c]).sum();
        x[r] = (a[r][8] - s) / a[r][r];
    }
    Ok(x)
}

/// Projective warp of a single point.
pub fn warp_point(h: &Homography, p: Point) -> Result<Point> {
    let m = &h.h;
    let w = m[2][0] * p.0 + m[2][1] * p.1 + m[2][2];
    if w.abs() <= W_MIN {
        return Err(Error::PointAtInfinity(w));
    }
    Ok((
        (m[0][0] * p.0 + m[0][1] * p.1 + m[0][2]) / w,
        (m[1][0] * p.0 + m[1][1] * p.1 + m[1][2]) / w,
    ))
}

/// Maps pixel coordinates to `[-1, 1]²` relative to the image size.
pub fn normalize_coords(p: Point, width: f64, height: f64) -> Point {
    (2.0 * p.0 / width - 1.0, 2.0 * p.1 / height - 1.0)
}

pub fn distance(a: Point, b: Point) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_offsets_give_identity() {
        assert_eq!(
            homography_from_4pt(&FourPointOffsets::ZERO).unwrap(),
            Homography::IDENTITY
        );
    }

    #[test]
    fn uniform_shift_is_translation() {
        let off = FourPointOffsets::new([0.1; 4], [0.0; 4]).unwrap();
        let h = homography_from_4pt(&off).unwrap();
        let expect = [[1.0, 0.0, 0.1], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((h.matrix()[i][j] - expect[i][j]).abs() < 1e-9, "{h:?}");
            }
        }
    }

    #[test]
    fn seed0_corners_reproject() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let off = FourPointOffsets::random(0.5, &mut rng);
        let h = homography_from_4pt(&off).unwrap();
        for (c, t) in UNIT_CORNERS.iter().zip(off.perturbed_corners()) {
            let w = warp_point(&h, *c).unwrap();
            assert!(distance(w, t) < 1e-9);
        }
    }

    #[test]
    fn collinear_corners_rejected() {
        // moves corner 1 onto the line through corners 0 and 3... (−1,1)->(1,−1) diagonal
        let src = UNIT_CORNERS;
        let dst = [(-1.0, 1.0), (0.0, 0.0), (-1.0, -1.0), (1.0, -1.0)];
        assert!(matches!(
            homography_from_correspondences(&src, &dst),
            Err(Error::Singular(_))
        ));
        assert!(FourPointOffsets::new([0.5, 0.0, 0.0, 0.0], [0.0; 4]).is_err());
    }

    #[test]
    fn warp_examples() {
        assert_eq!(
            warp_point(&Homography::IDENTITY, (3.5, -2.0)).unwrap(),
            (3.5, -2.0)
        );
        let t = Homography::from_matrix([[1.0, 0.0, 0.1], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
            .unwrap();
        assert_eq!(warp_point(&t, (0.0, 0.0)).unwrap(), (0.1, 0.0));
    }

    #[test]
    fn warp_at_infinity_errors() {
        let h = Homography::from_matrix([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 1.0]])
            .unwrap();
        assert!(matches!(
            warp_point(&h, (-1.0, 0.0)),
            Err(Error::PointAtInfinity(_))
        ));
    }

    #[test]
    fn random_warp_matches_explicit_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let h = homography_from_4pt(&FourPointOffsets::random(0.4, &mut rng)).unwrap();
            let p = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let m = h.matrix();
            let v: Vec<f64> = (0..3)
                .map(|i| m[i][0] * p.0 + m[i][1] * p.1 + m[i][2])
                .collect();
            let expect = (v[0] / v[2], v[1] / v[2]);
            let got = warp_point(&h, p).unwrap();
            assert!(distance(got, expect) < 1e-12);
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_coords((0.0, 0.0), 100.0, 100.0), (-1.0, -1.0));
        assert_eq!(normalize_coords((50.0, 50.0), 100.0, 100.0), (0.0, 0.0));
        assert_eq!(normalize_coords((100.0, 25.0), 100.0, 100.0), (1.0, -0.5));
    }

    #[test]
    fn text_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = homography_from_4pt(&FourPointOffsets::random(0.3, &mut rng)).unwrap();
        let back: Homography = h.to_string().parse().unwrap();
        assert_eq!(back, h);
        assert!("1 2 3".parse::<Homography>().is_err());
    }

    #[test]
    fn inverse_undoes_warp() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = homography_from_4pt(&FourPointOffsets::random(0.3, &mut rng)).unwrap();
        let hi = h.inverse().unwrap();
        let p = (0.2, -0.4);
        let q = warp_point(&hi, warp_point(&h, p).unwrap()).unwrap();
        assert!(distance(p, q) < 1e-12);
    }
}
