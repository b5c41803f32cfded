//! Labelled keypoints of one view.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{normalize_coords, Point};
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    /// Re-detected in the other view with a verified partner.
    Matchable,
    /// Re-detected in the other view but without a verified partner.
    Undiscovered,
    /// Present in this view only.
    Unrepeatable,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Matchable => "matchable",
            Category::Undiscovered => "undiscovered",
            Category::Unrepeatable => "unrepeatable",
        }
    }

    pub fn is_noisy(self) -> bool {
        self != Category::Matchable
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matchable" => Ok(Category::Matchable),
            "undiscovered" => Ok(Category::Undiscovered),
            "unrepeatable" => Ok(Category::Unrepeatable),
            _ => Err(Error::Contract(format!("unknown keypoint category `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    /// Pixel position.
    pub pos: Point,
    pub category: Category,
    /// Row of the partner in the other view; set exactly for matchable points.
    pub match_index: Option<usize>,
}

/// Keypoints of one view of a `width × height` image.
#[derive(Clone, Debug, PartialEq)]
pub struct KeypointSet {
    pub width: f64,
    pub height: f64,
    pub points: Vec<Keypoint>,
}

impl KeypointSet {
    pub fn new(width: f64, height: f64, points: Vec<Keypoint>) -> Result<Self> {
        if !(width > 0.0 && height > 0.0) {
            return Err(Error::Contract(format!(
                "image size must be positive, got {width}x{height}"
            )));
        }
        for (i, p) in points.iter().enumerate() {
            if (p.category == Category::Matchable) != p.match_index.is_some() {
                return Err(Error::Contract(format!(
                    "keypoint {i}: only matchable points carry a match index"
                )));
            }
        }
        Ok(Self {
            width,
            height,
            points,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Point> {
        self.points.iter().map(|p| p.pos).collect()
    }

    /// K×2 coordinates mapped to `[-1, 1]²`.
    pub fn normalized(&self) -> Matrix {
        let mut m = Matrix::zeros(self.len(), 2);
        for (i, p) in self.points.iter().enumerate() {
            let (x, y) = normalize_coords(p.pos, self.width, self.height);
            m.row_mut(i).copy_from_slice(&[x, y]);
        }
        m
    }

    pub fn count(&self, category: Category) -> usize {
        self.points.iter().filter(|p| p.category == category).count()
    }
}
