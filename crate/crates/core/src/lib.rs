//! Variable-degree Bézier fitting of point-cloud strokes and sketch vectorization.
//!
//! A stroke is fitted by a Bézier curve whose control polygon has `N + 1`
//! candidate points and whose effective degree is selected by a single
//! continuous parameter passed through a soft binning. The fit objective is a
//! sliced Wasserstein distance between the rendered curve and the stroke
//! cloud, optionally combined with a point-to-point MSE term, plus degree and
//! control-polygon regularizers. Gradients are hand-derived and checked
//! against central finite differences; parameters are optimized with Adam.
//!
//! Whole sketches, from waypoint sequences or raster images, are normalized,
//! split into strokes, fitted stroke by stroke and exported as JSON or SVG.

pub mod bezier;
pub mod error;
pub mod fit;
pub mod geom;
pub mod io;
pub mod losses;
pub mod prep;
pub mod vectorize;

pub use error::{Error, Result};
pub use geom::Point;
