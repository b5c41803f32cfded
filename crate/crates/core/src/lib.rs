pub mod diagnostics;
pub mod error;
pub mod geometric_context;
pub mod geometry;
pub mod io;
pub mod keypoints;
pub mod losses;
pub mod matching;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod synthetic;
pub mod trainer;
pub mod visual_context;

pub use error::{Error, Result};
pub use numerics::Matrix;
