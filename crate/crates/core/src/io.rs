//! Binary matrix and grid blobs, keypoint CSV and homography text files.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Homography;
use crate::keypoints::{Category, Keypoint, KeypointSet};
use crate::numerics::Matrix;
use crate::visual_context::RegionalGrid;

pub const MATRIX_MAGIC: &[u8; 4] = b"CTXM";
pub const GRID_MAGIC: &[u8; 4] = b"CTXG";
pub const KEYPOINT_HEADER: &str = "x,y,category,match_index";

/// Little-endian cursor over an in-memory blob.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8], what: &'a str) -> Self {
        Self { buf, pos: 0, what }
    }

    pub(crate) fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format(self.what, "unexpected end of data"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.bytes(4)? != magic {
            return Err(Error::format(
                self.what,
                format!("expected magic {:?}", String::from_utf8_lossy(magic)),
            ));
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(self.what, "trailing bytes"));
        }
        Ok(())
    }
}

fn dim(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::format(what, format!("dimension {n} exceeds u32")))
}

pub fn write_matrix_to(m: &Matrix, out: &mut impl Write) -> Result<()> {
    out.write_all(MATRIX_MAGIC)?;
    out.write_all(&dim(m.rows(), "matrix")?.to_le_bytes())?;
    out.write_all(&dim(m.cols(), "matrix")?.to_le_bytes())?;
    for &v in m.as_slice() {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_matrix_from(r: &mut Reader<'_>) -> Result<Matrix> {
    r.magic(MATRIX_MAGIC)?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::format(r.what, "matrix size overflows"))?;
    let mut data = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        let v = r.f32()?;
        if !v.is_finite() {
            return Err(Error::format(r.what, "non-finite matrix entry"));
        }
        data.push(v as f64);
    }
    Matrix::from_vec(rows, cols, data)
}

pub fn matrix_to_bytes(m: &Matrix) -> Vec<u8> {
    let mut buf = Vec::with_capacity(12 + 4 * m.len());
    write_matrix_to(m, &mut buf).expect("writing to memory");
    buf
}

pub fn matrix_from_bytes(bytes: &[u8]) -> Result<Matrix> {
    let mut r = Reader::new(bytes, "matrix");
    let m = read_matrix_from(&mut r)?;
    r.finish()?;
    Ok(m)
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    fs::write(path, matrix_to_bytes(m))?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path)?;
    let p = path.display().to_string();
    let mut r = Reader::new(&bytes, &p);
    let m = read_matrix_from(&mut r)?;
    r.finish()?;
    Ok(m)
}

pub fn grid_to_bytes(g: &RegionalGrid) -> Vec<u8> {
    let mut buf = Vec::with_capacity(20 + 4 * g.features().len());
    buf.extend_from_slice(GRID_MAGIC);
    for n in [g.gh(), g.gw(), g.depth()] {
        buf.extend_from_slice(&(n as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(g.stride() as f32).to_le_bytes());
    for &v in g.features().as_slice() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf
}

pub fn grid_from_bytes(bytes: &[u8], what: &str) -> Result<RegionalGrid> {
    let mut r = Reader::new(bytes, what);
    r.magic(GRID_MAGIC)?;
    let gh = r.u32()? as usize;
    let gw = r.u32()? as usize;
    let d = r.u32()? as usize;
    let stride = r.f32()? as f64;
    let n = gh
        .checked_mul(gw)
        .and_then(|c| c.checked_mul(d))
        .ok_or_else(|| Error::format(what, "grid size overflows"))?;
    let mut data = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        data.push(r.f32()? as f64);
    }
    r.finish()?;
    RegionalGrid::new(gh, gw, stride, Matrix::from_vec(gh * gw, d, data)?)
        .map_err(|e| Error::format(what, e.to_string()))
}

pub fn write_grid(path: &Path, g: &RegionalGrid) -> Result<()> {
    fs::write(path, grid_to_bytes(g))?;
    Ok(())
}

pub fn read_grid(path: &Path) -> Result<RegionalGrid> {
    grid_from_bytes(&fs::read(path)?, &path.display().to_string())
}

/// `x,y,category,match_index` with `-1` for points without a partner.
pub fn keypoints_to_csv(k: &KeypointSet) -> String {
    let mut s = String::from(KEYPOINT_HEADER);
    s.push('\n');
    for p in &k.points {
        let mi = p.match_index.map_or(-1, |i| i as i64);
        s.push_str(&format!("{},{},{},{mi}\n", p.pos.0, p.pos.1, p.category));
    }
    s
}

pub fn keypoints_from_csv(text: &str, width: f64, height: f64, what: &str) -> Result<KeypointSet> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(KEYPOINT_HEADER) {
        return Err(Error::format(what, format!("expected header `{KEYPOINT_HEADER}`")));
    }
    let mut points = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |reason: &str| Error::format(what, format!("line {}: {reason}", n + 2));
        let fields: Vec<&str> = line.trim().split(',').collect();
        let [x, y, cat, mi] = fields[..] else {
            return Err(bad("expected 4 fields"));
        };
        let x: f64 = x.parse().map_err(|_| bad("bad x"))?;
        let y: f64 = y.parse().map_err(|_| bad("bad y"))?;
        let category: Category = cat.parse().map_err(|_| bad("bad category"))?;
        let mi: i64 = mi.parse().map_err(|_| bad("bad match_index"))?;
        let match_index = if mi < 0 { None } else { Some(mi as usize) };
        points.push(Keypoint {
            pos: (x, y),
            category,
            match_index,
        });
    }
    KeypointSet::new(width, height, points).map_err(|e| Error::format(what, e.to_string()))
}

pub fn write_homography(path: &Path, h: &Homography) -> Result<()> {
    fs::write(path, format!("{h}\n"))?;
    Ok(())
}

pub fn read_homography(path: &Path) -> Result<Homography> {
    let mut s = String::new();
    fs::File::open(path)?.read_to_string(&mut s)?;
    s.parse()
        .map_err(|e: Error| Error::format(path.display().to_string(), e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_blob_layout() {
        let m = Matrix::from_rows(&[[1.0, -2.5]]).unwrap();
        let b = matrix_to_bytes(&m);
        assert_eq!(&b[..4], b"CTXM");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(&b[12..16], &1f32.to_le_bytes());
        assert_eq!(b.len(), 20);
        assert_eq!(matrix_from_bytes(&b).unwrap(), m);
    }

    #[test]
    fn truncated_matrix_rejected() {
        let b = matrix_to_bytes(&Matrix::zeros(2, 2));
        assert!(matches!(matrix_from_bytes(&b[..b.len() - 1]), Err(Error::Format { .. })));
        assert!(matches!(matrix_from_bytes(b"CTXG"), Err(Error::Format { .. })));
    }

    #[test]
    fn grid_round_trip() {
        let f = Matrix::from_vec(6, 2, (0..12).map(|i| i as f64 * 0.25).collect()).unwrap();
        let g = RegionalGrid::new(2, 3, 32.0, f).unwrap();
        let b = grid_to_bytes(&g);
        assert_eq!(&b[..4], b"CTXG");
        assert_eq!(grid_from_bytes(&b, "g").unwrap(), g);
    }

    #[test]
    fn keypoint_csv_round_trip() {
        let k = KeypointSet::new(
            256.0,
            256.0,
            vec![
                Keypoint { pos: (1.5, 2.25), category: Category::Matchable, match_index: Some(3) },
                Keypoint { pos: (100.0, 0.0), category: Category::Unrepeatable, match_index: None },
            ],
        )
        .unwrap();
        let text = keypoints_to_csv(&k);
        assert!(text.starts_with("x,y,category,match_index\n1.5,2.25,matchable,3\n"));
        assert_eq!(keypoints_from_csv(&text, 256.0, 256.0, "k").unwrap(), k);
        assert!(keypoints_from_csv("x,y\n", 1.0, 1.0, "k").is_err());
    }
}
