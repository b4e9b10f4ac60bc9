//! Whole-sketch vectorization, serialization and compactness metrics.
//!
//! Each stroke is fitted independently by [`fit_stroke`]; the resulting curve
//! is stored as its active control-point prefix translated so the first point
//! is the origin, with the start position kept as a separate offset.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bezier::{render_fixed_degree, RenderGrid};
use crate::error::{Error, Result};
use crate::fit::{fit_stroke, FitConfig, FitResult};
use crate::geom::Point;
use crate::losses::{fit_term, mse_seq, swd, LossConfig, LossKind, SliceSet};
use crate::prep::{SketchFrame, StrokeCloud};

pub const SCHEMA: &str = "curvecloud-1";

/// One fitted stroke: `points[0]` is the origin, `offset` places it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub degree: usize,
    pub offset: Point,
    pub control_points: Vec<Point>,
}

impl Curve {
    pub fn new(control_points: Vec<Point>, offset: Point) -> Result<Self> {
        let curve = Curve {
            degree: control_points.len().saturating_sub(1),
            offset,
            control_points,
        };
        curve.validate()?;
        Ok(curve)
    }

    fn validate(&self) -> Result<()> {
        if self.degree < 1 {
            return Err(Error::Malformed("curve degree must be >= 1".into()));
        }
        if self.control_points.len() != self.degree + 1 {
            return Err(Error::Malformed(format!(
                "degree-{} curve has {} control points",
                self.degree,
                self.control_points.len()
            )));
        }
        if self.control_points[0] != Point::ORIGIN {
            return Err(Error::Malformed("first control point must be the origin".into()));
        }
        if !self.offset.is_finite() || self.control_points.iter().any(|p| !p.is_finite()) {
            return Err(Error::Malformed("curve coordinates must be finite".into()));
        }
        Ok(())
    }

    /// Renders at `grid` in the normalized sketch frame.
    pub fn render(&self, grid: &RenderGrid) -> Vec<Point> {
        render_fixed_degree(&self.control_points, self.degree, grid)
            .expect("validated curve")
            .into_iter()
            .map(|p| p + self.offset)
            .collect()
    }

    /// Control points in the normalized sketch frame.
    pub fn placed_points(&self) -> Vec<Point> {
        self.control_points.iter().map(|&p| p + self.offset).collect()
    }
}

/// Summary of the fit that produced a curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveProvenance {
    pub degree: usize,
    /// Data term of the stored (hard-degree) curve against its stroke.
    pub fit_term: f64,
    /// Regularized objective at the optimum under soft selectors.
    pub objective: f64,
    pub r: f64,
    pub iterations: usize,
    pub converged: bool,
    pub degenerate: bool,
    pub loss: LossKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParametricSketch {
    pub frame: SketchFrame,
    pub curves: Vec<Curve>,
    pub provenance: Vec<CurveProvenance>,
}

impl ParametricSketch {
    pub fn validate(&self) -> Result<()> {
        if self.curves.is_empty() {
            return Err(Error::Malformed("sketch has no curves".into()));
        }
        if !self.provenance.is_empty() && self.provenance.len() != self.curves.len() {
            return Err(Error::Malformed(format!(
                "{} curves but {} provenance entries",
                self.curves.len(),
                self.provenance.len()
            )));
        }
        if !(self.frame.scale > 0.0) || !self.frame.scale.is_finite() || !self.frame.center.is_finite() {
            return Err(Error::Malformed("frame needs a finite center and positive scale".into()));
        }
        self.curves.iter().try_for_each(Curve::validate)
    }

    /// Stored points: every control point plus one per stroke offset.
    pub fn stored_points(&self) -> usize {
        self.curves.iter().map(|c| c.degree + 2).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorizeReport {
    pub fit_terms: Vec<f64>,
    pub mean_fit_term: f64,
    /// `degree + 1 → count`.
    pub points_per_stroke: BTreeMap<usize, usize>,
    pub points_per_sketch: usize,
    pub degenerate_strokes: usize,
}

/// Converts a per-stroke fit into a stored curve and its provenance.
pub fn curve_from_fit(
    res: &FitResult,
    stroke: &StrokeCloud,
    cfg: &FitConfig,
) -> Result<(Curve, CurveProvenance)> {
    let active = &res.curve;
    let start = active[0];
    let mut pts: Vec<Point> = active.iter().map(|&p| p - start).collect();
    pts[0] = Point::ORIGIN;
    let curve = Curve::new(pts, stroke.offset() + start)?;

    let grid = RenderGrid::uniform(stroke.len())?;
    let rendered = render_fixed_degree(&curve.control_points, curve.degree, &grid)?;
    let loss_cfg = LossConfig {
        kind: res.loss_kind,
        ..cfg.loss.clone()
    };
    let slices = SliceSet::random(loss_cfg.slices, cfg.seed)?;
    let shifted: Vec<Point> = stroke.points().iter().map(|&p| p - start).collect();
    let fit = fit_term(&rendered, &shifted, &slices, &loss_cfg)?;
    let prov = CurveProvenance {
        degree: res.degree,
        fit_term: fit,
        objective: res.loss.total,
        r: res.degree_param.r(),
        iterations: res.iterations(),
        converged: res.converged,
        degenerate: res.degenerate,
        loss: res.loss_kind,
    };
    Ok((curve, prov))
}

/// Fits every stroke (in parallel) and assembles the sketch in input order.
pub fn vectorize_sketch(
    strokes: &[StrokeCloud],
    frame: SketchFrame,
    cfg: &FitConfig,
) -> Result<(ParametricSketch, VectorizeReport)> {
    if strokes.is_empty() {
        return Err(Error::invalid("cannot vectorize a sketch with no strokes"));
    }
    cfg.validate()?;
    let fitted: Vec<(Curve, CurveProvenance)> = strokes
        .par_iter()
        .map(|s| fit_stroke(s, cfg).and_then(|res| curve_from_fit(&res, s, cfg)))
        .collect::<Result<_>>()?;
    let (curves, provenance): (Vec<_>, Vec<_>) = fitted.into_iter().unzip();
    let sketch = ParametricSketch {
        frame,
        curves,
        provenance,
    };
    let report = report_for(&sketch);
    Ok((sketch, report))
}

fn report_for(sketch: &ParametricSketch) -> VectorizeReport {
    let fit_terms: Vec<f64> = sketch.provenance.iter().map(|p| p.fit_term).collect();
    let mean_fit_term = if fit_terms.is_empty() {
        0.0
    } else {
        fit_terms.iter().sum::<f64>() / fit_terms.len() as f64
    };
    let mut points_per_stroke = BTreeMap::new();
    for c in &sketch.curves {
        *points_per_stroke.entry(c.degree + 1).or_insert(0) += 1;
    }
    VectorizeReport {
        fit_terms,
        mean_fit_term,
        points_per_stroke,
        points_per_sketch: sketch.stored_points(),
        degenerate_strokes: sketch.provenance.iter().filter(|p| p.degenerate).count(),
    }
}

/// Writes floats with 17 significant digits, which round-trips every `f64`.
struct ExactFloats;

impl serde_json::ser::Formatter for ExactFloats {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(writer, "{value:.16e}")
        } else {
            writer.write_all(b"null")
        }
    }
}

/// Serializes any value with the exact float format used by sketch documents.
pub fn to_exact_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ExactFloats);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

#[derive(Serialize)]
struct DocOut<'a> {
    schema: &'static str,
    frame: &'a SketchFrame,
    curves: &'a [Curve],
    provenance: &'a [CurveProvenance],
}

#[derive(Deserialize)]
struct DocIn {
    frame: SketchFrame,
    curves: Vec<Curve>,
    #[serde(default)]
    provenance: Vec<CurveProvenance>,
}

pub fn to_json(sketch: &ParametricSketch) -> Result<String> {
    to_exact_json(&DocOut {
        schema: SCHEMA,
        frame: &sketch.frame,
        curves: &sketch.curves,
        provenance: &sketch.provenance,
    })
}

pub fn from_json(text: &str) -> Result<ParametricSketch> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Malformed(e.to_string()))?;
    let found = match value.get("schema") {
        Some(serde_json::Value::String(s)) => s.clone(),
        Some(other) => other.to_string(),
        None => String::new(),
    };
    if found != SCHEMA {
        return Err(Error::SchemaMismatch {
            expected: SCHEMA.into(),
            found,
        });
    }
    let doc: DocIn = serde_json::from_str(text).map_err(|e| Error::Malformed(e.to_string()))?;
    let sketch = ParametricSketch {
        frame: doc.frame,
        curves: doc.curves,
        provenance: doc.provenance,
    };
    sketch.validate()?;
    Ok(sketch)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvgOptions {
    pub samples_per_curve: usize,
    pub stroke_width: f64,
    pub exact_low_degree: bool,
    /// Negate y so math-convention input reads upright in SVG's y-down space.
    pub flip_y: bool,
}

impl Default for SvgOptions {
    fn default() -> Self {
        SvgOptions {
            samples_per_curve: 64,
            stroke_width: 1.0,
            exact_low_degree: true,
            flip_y: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PathSegment {
    Line(Point),
    Quad(Point, Point),
    Cubic(Point, Point, Point),
}

/// A path in output coordinates, before number formatting.
#[derive(Clone, Debug, PartialEq)]
pub struct SvgPath {
    pub start: Point,
    pub segments: Vec<PathSegment>,
}

impl SvgPath {
    fn points(&self) -> impl Iterator<Item = Point> + '_ {
        std::iter::once(self.start).chain(self.segments.iter().flat_map(|s| match *s {
            PathSegment::Line(a) => vec![a],
            PathSegment::Quad(a, b) => vec![a, b],
            PathSegment::Cubic(a, b, c) => vec![a, b, c],
        }))
    }

    pub fn to_path_data(&self) -> String {
        let mut d = format!("M {} {}", self.start.x, self.start.y);
        for seg in &self.segments {
            match seg {
                PathSegment::Line(a) => write!(d, " L {} {}", a.x, a.y),
                PathSegment::Quad(a, b) => write!(d, " Q {} {} {} {}", a.x, a.y, b.x, b.y),
                PathSegment::Cubic(a, b, c) => {
                    write!(d, " C {} {} {} {} {} {}", a.x, a.y, b.x, b.y, c.x, c.y)
                }
            }
            .expect("writing to a String");
        }
        d
    }
}

/// Output-space path for one curve.
pub fn curve_path(curve: &Curve, frame: &SketchFrame, opts: &SvgOptions) -> Result<SvgPath> {
    let place = |p: Point| {
        let q = frame.invert(p);
        if opts.flip_y {
            Point::new(q.x, -q.y)
        } else {
            q
        }
    };
    let pts = curve.placed_points();
    if opts.exact_low_degree && curve.degree <= 3 {
        let o: Vec<Point> = pts.iter().map(|&p| place(p)).collect();
        let seg = match curve.degree {
            1 => PathSegment::Line(o[1]),
            2 => PathSegment::Quad(o[1], o[2]),
            _ => PathSegment::Cubic(o[1], o[2], o[3]),
        };
        return Ok(SvgPath {
            start: o[0],
            segments: vec![seg],
        });
    }
    let grid = RenderGrid::uniform(opts.samples_per_curve)?;
    let sampled = curve.render(&grid);
    Ok(SvgPath {
        start: place(sampled[0]),
        segments: sampled[1..].iter().map(|&p| PathSegment::Line(place(p))).collect(),
    })
}

pub fn to_svg(sketch: &ParametricSketch, opts: &SvgOptions) -> Result<String> {
    if opts.samples_per_curve < 2 {
        return Err(Error::invalid("samples per curve must be >= 2"));
    }
    if !(opts.stroke_width > 0.0) {
        return Err(Error::invalid("stroke width must be > 0"));
    }
    let paths: Vec<SvgPath> = sketch
        .curves
        .iter()
        .map(|c| curve_path(c, &sketch.frame, opts))
        .collect::<Result<_>>()?;
    let (mut lo, mut hi) = (Point::new(f64::INFINITY, f64::INFINITY), Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
    for p in paths.iter().flat_map(|p| p.points()) {
        lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let pad = opts.stroke_width * 2.0;
    let (w, h) = ((hi.x - lo.x) + 2.0 * pad, (hi.y - lo.y) + 2.0 * pad);
    let mut out = String::new();
    writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#).unwrap();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" viewBox="{} {} {} {}">"#,
        lo.x - pad,
        lo.y - pad,
        w,
        h
    )
    .unwrap();
    writeln!(
        out,
        r#"<g fill="none" stroke="black" stroke-width="{}" stroke-linecap="round" stroke-linejoin="round">"#,
        opts.stroke_width
    )
    .unwrap();
    for p in &paths {
        writeln!(out, r#"<path d="{}"/>"#, p.to_path_data()).unwrap();
    }
    out.push_str("</g>\n</svg>\n");
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub enum EvalMetric {
    Swd(SliceSet),
    Mse,
}

/// Mean over strokes of the chosen loss between each rendered curve and its
/// ground-truth stroke, both placed in the normalized sketch frame. Curves
/// are rendered at the ground-truth stroke's cardinality.
pub fn eval_fit(sketch: &ParametricSketch, ground_truth: &[StrokeCloud], metric: &EvalMetric) -> Result<f64> {
    if sketch.curves.len() != ground_truth.len() {
        return Err(Error::shape(format!(
            "sketch has {} curves but ground truth has {} strokes",
            sketch.curves.len(),
            ground_truth.len()
        )));
    }
    if ground_truth.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let mut total = 0.0;
    for (curve, gt) in sketch.curves.iter().zip(ground_truth) {
        let grid = RenderGrid::uniform(gt.len())?;
        let rendered = curve.render(&grid);
        let target = gt.absolute();
        total += match metric {
            EvalMetric::Swd(slices) => swd(&rendered, &target, slices)?,
            EvalMetric::Mse => mse_seq(&rendered, &target)?,
        };
    }
    Ok(total / ground_truth.len() as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    /// Control points per stroke (`degree + 1`) → count.
    pub points_per_stroke: BTreeMap<usize, usize>,
    /// Stored points per sketch (control points plus offsets) → count.
    pub points_per_sketch: BTreeMap<usize, usize>,
}

pub fn length_stats(sketches: &[ParametricSketch]) -> Result<LengthStats> {
    if sketches.is_empty() {
        return Err(Error::invalid("length statistics need at least one sketch"));
    }
    let mut stats = LengthStats::default();
    for s in sketches {
        for c in &s.curves {
            *stats.points_per_stroke.entry(c.degree + 1).or_insert(0) += 1;
        }
        *stats.points_per_sketch.entry(s.stored_points()).or_insert(0) += 1;
    }
    Ok(stats)
}
