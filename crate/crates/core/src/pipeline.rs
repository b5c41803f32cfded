//! The shared forward pass from one view's inputs to augmented descriptors.

use crate::error::{Error, Result};
use crate::keypoints::KeypointSet;
use crate::losses::{aggregate_node, Streams};
use crate::model::Model;
use crate::numerics::{Forward, Matrix, Mode, Var};
use crate::visual_context::{interpolate_regional, RegionalGrid, DEFAULT_NEIGHBORS};

/// Per-keypoint inputs of one view.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewInput {
    /// K×desc_dim unit-norm local descriptors.
    pub descriptors: Matrix,
    /// K×2 normalized coordinates.
    pub coords: Matrix,
    /// K×d regional features interpolated at the keypoints.
    pub regional: Matrix,
}

impl ViewInput {
    pub fn from_view(keypoints: &KeypointSet, descriptors: &Matrix, grid: &RegionalGrid) -> Result<Self> {
        if descriptors.rows() != keypoints.len() {
            return Err(Error::Dimension(format!(
                "{} keypoints but {} descriptor rows",
                keypoints.len(),
                descriptors.rows()
            )));
        }
        Ok(Self {
            descriptors: descriptors.clone(),
            coords: keypoints.normalized(),
            regional: interpolate_regional(grid, &keypoints.positions(), DEFAULT_NEIGHBORS)?,
        })
    }

    pub fn len(&self) -> usize {
        self.descriptors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.rows() == 0
    }

    pub fn select(&self, idx: &[usize]) -> ViewInput {
        ViewInput {
            descriptors: self.descriptors.select_rows(idx),
            coords: self.coords.select_rows(idx),
            regional: self.regional.select_rows(idx),
        }
    }
}

pub struct ViewOutput {
    /// K×1 raw matchability scores `H(f)`; absent when the geometric stream is off.
    pub scores: Option<Var>,
    /// K×desc_dim aggregated unit rows.
    pub features: Var,
}

/// `matchability → geometric encoder`, `regional → visual encoder`, then aggregation.
///
/// `with_scores` forces the matchability head to run even without the geometric stream.
pub fn forward_view(
    model: &Model,
    fwd: &mut Forward<'_>,
    view: &ViewInput,
    streams: Streams,
    with_scores: bool,
) -> Result<ViewOutput> {
    let raw = fwd.input(view.descriptors.clone());
    let scores = if streams.geo || with_scores {
        Some(model.head.scores(fwd, raw)?)
    } else {
        None
    };
    let geo = match (streams.geo, scores) {
        (true, Some(h)) => {
            let m = fwd.graph.tanh(h);
            let coords = fwd.input(view.coords.clone());
            Some(model.geo.forward(fwd, coords, m)?)
        }
        _ => None,
    };
    let vis = if streams.vis {
        let regional = fwd.input(view.regional.clone());
        Some(model.vis.forward(fwd, regional, raw)?)
    } else {
        None
    };
    let features = aggregate_node(&mut fwd.graph, raw, geo, vis)?;
    Ok(ViewOutput { scores, features })
}

/// Inference-mode augmented descriptors.
pub fn augment_descriptors(model: &Model, view: &ViewInput, streams: Streams) -> Result<Matrix> {
    let mut fwd = Forward::new(&model.params, Mode::Infer);
    let out = forward_view(model, &mut fwd, view, streams, false)?;
    Ok(fwd.value(out.features).clone())
}

/// Inference-mode `tanh(H(f))` per keypoint.
pub fn matchability_scores(model: &Model, descriptors: &Matrix) -> Result<Vec<f64>> {
    crate::geometric_context::matchability(&model.head, &model.params, descriptors)
}
