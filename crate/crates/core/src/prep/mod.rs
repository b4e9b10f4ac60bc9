//! Turning raw waypoints and raster images into normalized, resampled,
//! position-independent stroke clouds.

mod cluster;
mod polyline;
mod raster;

pub use cluster::{cluster_strokes, ClusterMethod, SPECTRAL_NEIGHBORS};
pub use polyline::{
    add_noise, normalize_sketch, resample_uniform, simplify, split_strokes, turning_angle_deg,
    NormalizedSketch, SketchFrame,
};
pub use raster::{binarize, binarize_thin, zhang_suen, BinaryMask, InkPolarity, RasterImage};

use crate::error::{Error, Result};
use crate::geom::Point;

/// Default resampling granularity.
pub const DEFAULT_GRANULARITY: usize = 128;
/// Default turning-angle split threshold in degrees.
pub const DEFAULT_ANGLE_THRESH_DEG: f64 = 60.0;
/// Default cap on waypoints per stroke before greedy splitting.
pub const DEFAULT_MAX_STROKE_POINTS: usize = 100;

/// One stroke as a point set relative to its first point, plus the offset
/// that places it in the sketch frame.
#[derive(Clone, Debug, PartialEq)]
pub struct StrokeCloud {
    points: Vec<Point>,
    offset: Point,
    ordered: bool,
}

impl StrokeCloud {
    /// `points[0]` must be the origin within `1e-12`; it is snapped to exactly
    /// zero.
    pub fn new(mut points: Vec<Point>, offset: Point, ordered: bool) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid(format!(
                "stroke cloud needs at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.is_finite()) || !offset.is_finite() {
            return Err(Error::invalid("stroke cloud coordinates must be finite"));
        }
        if points[0].norm() > 1e-12 {
            return Err(Error::invalid(format!(
                "stroke cloud must start at the origin, starts at {:?}",
                points[0]
            )));
        }
        points[0] = Point::ORIGIN;
        Ok(StrokeCloud {
            points,
            offset,
            ordered,
        })
    }

    /// Resamples `polyline` to `granularity` points and splits it into a
    /// position-independent cloud and offset.
    pub fn from_polyline(polyline: &[Point], granularity: usize, ordered: bool) -> Result<Self> {
        let dense = resample_uniform(polyline, granularity)?;
        Ok(Self::from_absolute(&dense, ordered))
    }

    /// Uses `points` as-is; the first point becomes the offset.
    pub fn from_absolute(points: &[Point], ordered: bool) -> Self {
        let offset = points[0];
        let mut rel: Vec<Point> = points.iter().map(|&p| p - offset).collect();
        rel[0] = Point::ORIGIN;
        StrokeCloud {
            points: rel,
            offset,
            ordered,
        }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn offset(&self) -> Point {
        self.offset
    }

    pub fn ordered(&self) -> bool {
        self.ordered
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points placed in the sketch frame.
    pub fn absolute(&self) -> Vec<Point> {
        self.points.iter().map(|&p| p + self.offset).collect()
    }

    /// True when every point coincides with the first.
    pub fn is_degenerate(&self) -> bool {
        self.points.iter().all(|&p| p == Point::ORIGIN)
    }

    pub(crate) fn with_points(&self, points: Vec<Point>) -> Self {
        StrokeCloud {
            points,
            offset: self.offset,
            ordered: self.ordered,
        }
    }
}

/// Preprocessing options for whole sketches.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PrepConfig {
    pub granularity: usize,
    pub angle_thresh_deg: f64,
    pub max_stroke_points: usize,
    /// Simplification tolerance (input units) applied to unordered strokes
    /// before splitting; pixel chains turn by 45° or 90° at every step.
    pub raster_simplify_tol: f64,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig {
            granularity: DEFAULT_GRANULARITY,
            angle_thresh_deg: DEFAULT_ANGLE_THRESH_DEG,
            max_stroke_points: DEFAULT_MAX_STROKE_POINTS,
            raster_simplify_tol: 1.0,
        }
    }
}

impl PrepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.granularity < 2 {
            return Err(Error::invalid("granularity must be >= 2"));
        }
        if !(self.angle_thresh_deg >= 0.0 && self.angle_thresh_deg <= 180.0) {
            return Err(Error::invalid("angle threshold must lie in [0, 180] degrees"));
        }
        if self.max_stroke_points < 2 {
            return Err(Error::invalid("max stroke points must be >= 2"));
        }
        if !(self.raster_simplify_tol >= 0.0) {
            return Err(Error::invalid("simplification tolerance must be >= 0"));
        }
        Ok(())
    }
}

/// A sketch ready for fitting.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSketch {
    pub strokes: Vec<StrokeCloud>,
    pub frame: SketchFrame,
    pub degenerate_frame: bool,
}

/// Normalizes, splits and resamples a sketch's polylines. `ordered` is false
/// for raster-derived strokes; those are simplified before splitting.
/// Pieces with zero length are dropped.
pub fn prepare_sketch(
    polylines: &[Vec<Point>],
    ordered: bool,
    cfg: &PrepConfig,
) -> Result<PreparedSketch> {
    cfg.validate()?;
    let normalized = normalize_sketch(polylines)?;
    let mut prepared = prepare_in_frame(polylines, ordered, normalized.frame, cfg)?;
    prepared.degenerate_frame = normalized.degenerate;
    Ok(prepared)
}

/// Like [`prepare_sketch`] but maps the input through a given frame instead
/// of normalizing it.
pub fn prepare_in_frame(
    polylines: &[Vec<Point>],
    ordered: bool,
    frame: SketchFrame,
    cfg: &PrepConfig,
) -> Result<PreparedSketch> {
    cfg.validate()?;
    let tol = cfg.raster_simplify_tol * frame.scale;
    let mut strokes = Vec::new();
    for line in polylines {
        let line: Vec<Point> = line.iter().map(|&p| frame.apply(p)).collect();
        let line = if ordered || tol == 0.0 {
            line
        } else {
            simplify(&line, tol)
        };
        for piece in split_strokes(&line, cfg.angle_thresh_deg, cfg.max_stroke_points) {
            if piece.len() < 2 || crate::geom::polyline_length(&piece) <= 0.0 {
                continue;
            }
            strokes.push(StrokeCloud::from_polyline(&piece, cfg.granularity, ordered)?);
        }
    }
    if strokes.is_empty() {
        return Err(Error::Degenerate(
            "sketch has no stroke with positive length".into(),
        ));
    }
    Ok(PreparedSketch {
        strokes,
        frame,
        degenerate_frame: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stroke_cloud_is_position_independent() {
        let line = vec![Point::new(2.0, 3.0), Point::new(4.0, 3.0)];
        let cloud = StrokeCloud::from_polyline(&line, 5, true).unwrap();
        assert_eq!(cloud.points()[0], Point::ORIGIN);
        assert_eq!(cloud.offset(), Point::new(2.0, 3.0));
        assert!(cloud.absolute()[4].dist(Point::new(4.0, 3.0)) < 1e-12);
    }

    #[test]
    fn stroke_cloud_rejects_offset_start() {
        let pts = vec![Point::new(0.1, 0.0), Point::new(1.0, 0.0)];
        assert!(StrokeCloud::new(pts, Point::ORIGIN, true).is_err());
    }

    #[test]
    fn prepare_splits_sharp_corners() {
        let l = vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
        ];
        let prepared = prepare_sketch(&[l], true, &PrepConfig::default()).unwrap();
        assert_eq!(prepared.strokes.len(), 2);
        assert!(prepared.strokes.iter().all(|s| s.len() == 128));
    }

    #[test]
    fn prepare_rejects_all_zero_length() {
        let dot = vec![Point::new(1.0, 1.0), Point::new(1.0, 1.0)];
        assert!(prepare_sketch(&[dot], true, &PrepConfig::default()).is_err());
    }
}
