use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::StrokeCloud;
use crate::error::{Error, Result};
use crate::geom::{centroid, Point};

/// `granularity` points at equal arc-length spacing, both endpoints included.
pub fn resample_uniform(polyline: &[Point], granularity: usize) -> Result<Vec<Point>> {
    if polyline.len() < 2 {
        return Err(Error::invalid(format!(
            "resampling needs at least 2 points, got {}",
            polyline.len()
        )));
    }
    if granularity < 2 {
        return Err(Error::invalid("resampling granularity must be >= 2"));
    }
    let mut cumulative = Vec::with_capacity(polyline.len());
    let mut acc = 0.0;
    cumulative.push(0.0);
    for w in polyline.windows(2) {
        acc += w[0].dist(w[1]);
        cumulative.push(acc);
    }
    let total = acc;
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Degenerate(
            "polyline has zero arc length".to_string(),
        ));
    }

    let mut out = Vec::with_capacity(granularity);
    let mut seg = 0;
    let last = (granularity - 1) as f64;
    for k in 0..granularity {
        if k == granularity - 1 {
            out.push(*polyline.last().unwrap());
            break;
        }
        let target = total * k as f64 / last;
        while seg + 2 < cumulative.len() && cumulative[seg + 1] < target {
            seg += 1;
        }
        let len = cumulative[seg + 1] - cumulative[seg];
        let t = if len > 0.0 {
            ((target - cumulative[seg]) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(polyline[seg].lerp(polyline[seg + 1], t));
    }
    Ok(out)
}

/// Similarity transform taking the sketch into the unit circle:
/// `q = (p − center) · scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SketchFrame {
    pub center: Point,
    pub scale: f64,
}

impl SketchFrame {
    pub const IDENTITY: SketchFrame = SketchFrame {
        center: Point::ORIGIN,
        scale: 1.0,
    };

    pub fn new(center: Point, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() || !center.is_finite() {
            return Err(Error::invalid(format!(
                "frame needs a finite center and positive scale, got {center:?}, {scale}"
            )));
        }
        Ok(SketchFrame { center, scale })
    }

    pub fn apply(&self, p: Point) -> Point {
        (p - self.center) * self.scale
    }

    pub fn invert(&self, q: Point) -> Point {
        q * (1.0 / self.scale) + self.center
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedSketch {
    pub strokes: Vec<Vec<Point>>,
    pub frame: SketchFrame,
    /// All points coincide; the frame only recenters.
    pub degenerate: bool,
}

/// Centers the sketch on the centroid of all its points and scales it so the
/// farthest point lies on the unit circle.
pub fn normalize_sketch(strokes: &[Vec<Point>]) -> Result<NormalizedSketch> {
    let all: Vec<Point> = strokes.iter().flatten().copied().collect();
    let center = centroid(&all).ok_or_else(|| Error::invalid("sketch has no points"))?;
    if !center.is_finite() {
        return Err(Error::invalid("sketch coordinates must be finite"));
    }
    let radius = all
        .iter()
        .map(|p| p.dist(center))
        .fold(0.0f64, f64::max);
    let degenerate = !(radius > 0.0);
    let frame = SketchFrame::new(center, if degenerate { 1.0 } else { 1.0 / radius })?;
    let strokes = strokes
        .iter()
        .map(|s| s.iter().map(|&p| frame.apply(p)).collect())
        .collect();
    Ok(NormalizedSketch {
        strokes,
        frame,
        degenerate,
    })
}

/// Exterior angle in degrees at `b` for the path `a → b → c`; zero when
/// either segment is degenerate.
pub fn turning_angle_deg(a: Point, b: Point, c: Point) -> f64 {
    let d1 = b - a;
    let d2 = c - b;
    let n = d1.norm() * d2.norm();
    if n == 0.0 {
        return 0.0;
    }
    (d1.dot(d2) / n).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Splits at every interior vertex turning by more than `angle_thresh_deg`,
/// then chunks pieces longer than `max_points`. Consecutive pieces share
/// their split vertex. Polylines with fewer than two points come back as a
/// single piece.
pub fn split_strokes(polyline: &[Point], angle_thresh_deg: f64, max_points: usize) -> Vec<Vec<Point>> {
    if polyline.len() < 2 {
        return vec![polyline.to_vec()];
    }
    let max_points = max_points.max(2);
    let mut cuts = vec![0];
    for i in 1..polyline.len() - 1 {
        if turning_angle_deg(polyline[i - 1], polyline[i], polyline[i + 1]) > angle_thresh_deg {
            cuts.push(i);
        }
    }
    cuts.push(polyline.len() - 1);

    let mut pieces = Vec::new();
    for w in cuts.windows(2) {
        let (mut start, end) = (w[0], w[1]);
        loop {
            let stop = (start + max_points - 1).min(end);
            pieces.push(polyline[start..=stop].to_vec());
            if stop == end {
                break;
            }
            start = stop;
        }
    }
    pieces
}

/// Ramer–Douglas–Peucker simplification; endpoints are always kept.
pub fn simplify(polyline: &[Point], tol: f64) -> Vec<Point> {
    if polyline.len() < 3 {
        return polyline.to_vec();
    }
    let mut keep = vec![false; polyline.len()];
    keep[0] = true;
    keep[polyline.len() - 1] = true;
    let mut stack = vec![(0, polyline.len() - 1)];
    while let Some((a, b)) = stack.pop() {
        if b <= a + 1 {
            continue;
        }
        let (pa, pb) = (polyline[a], polyline[b]);
        let axis = pb - pa;
        let len = axis.norm();
        let (mut worst, mut worst_d) = (a, -1.0);
        for (i, &p) in polyline.iter().enumerate().take(b).skip(a + 1) {
            let d = if len > 0.0 {
                ((p - pa).x * axis.y - (p - pa).y * axis.x).abs() / len
            } else {
                p.dist(pa)
            };
            if d > worst_d {
                worst = i;
                worst_d = d;
            }
        }
        if worst_d > tol {
            keep[worst] = true;
            stack.push((a, worst));
            stack.push((worst, b));
        }
    }
    polyline
        .iter()
        .zip(keep)
        .filter_map(|(&p, k)| k.then_some(p))
        .collect()
}

/// Adds i.i.d. `N(0, sigma²)` noise to every coordinate, then pins the first
/// point back to the origin.
pub fn add_noise(stroke: &StrokeCloud, sigma: f64, seed: u64) -> Result<StrokeCloud> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(stroke.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<Point> = stroke
        .points()
        .iter()
        .map(|&p| p + Point::new(normal.sample(&mut rng), normal.sample(&mut rng)))
        .collect();
    points[0] = Point::ORIGIN;
    Ok(stroke.with_points(points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::polyline_length;
    use proptest::prelude::*;

    #[test]
    fn resample_segment() {
        let seg = [Point::new(0.0, 0.0), Point::new(1.0, 0.0)];
        let out = resample_uniform(&seg, 4).unwrap();
        for (p, x) in out.iter().zip([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]) {
            assert!((p.x - x).abs() < 1e-15 && p.y == 0.0);
        }
    }

    #[test]
    fn resample_square_perimeter() {
        let square = [
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
            Point::new(0.0, 0.0),
        ];
        // Both endpoints are kept, so 9 samples give 8 gaps of 0.5 along the
        // perimeter of length 4.
        let out = resample_uniform(&square, 9).unwrap();
        let expected = [
            (0.0, 0.0),
            (0.5, 0.0),
            (1.0, 0.0),
            (1.0, 0.5),
            (1.0, 1.0),
            (0.5, 1.0),
            (0.0, 1.0),
            (0.0, 0.5),
            (0.0, 0.0),
        ];
        for (p, e) in out.iter().zip(expected) {
            assert!(p.dist(Point::from(e)) < 1e-12);
        }
        let eight = resample_uniform(&square, 8).unwrap();
        assert_eq!(eight.len(), 8);
        assert!((eight[1].x - 4.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn resample_rejects_zero_length() {
        let dot = [Point::new(1.0, 1.0); 3];
        assert!(matches!(resample_uniform(&dot, 5), Err(Error::Degenerate(_))));
        assert!(resample_uniform(&dot[..1], 5).is_err());
    }

    #[test]
    fn normalize_circle() {
        let pts: Vec<Point> = (0..16)
            .map(|i| {
                let a = i as f64 * std::f64::consts::TAU / 16.0;
                Point::new(5.0 + 2.0 * a.cos(), 5.0 + 2.0 * a.sin())
            })
            .collect();
        let out = normalize_sketch(std::slice::from_ref(&pts)).unwrap();
        assert!(out.frame.center.dist(Point::new(5.0, 5.0)) < 1e-12);
        assert!((out.frame.scale - 0.5).abs() < 1e-12);
        assert!(!out.degenerate);
        for (p, q) in pts.iter().zip(&out.strokes[0]) {
            assert!(out.frame.invert(*q).dist(*p) < 1e-9);
        }
        let again = normalize_sketch(&out.strokes).unwrap();
        assert!(again.frame.center.norm() < 1e-9);
        assert!((again.frame.scale - 1.0).abs() < 1e-9);
    }

    #[test]
    fn normalize_single_point() {
        let out = normalize_sketch(&[vec![Point::new(3.0, 4.0); 3]]).unwrap();
        assert!(out.degenerate);
        assert_eq!(out.frame.scale, 1.0);
        assert!(normalize_sketch(&[]).is_err());
    }

    #[test]
    fn split_examples() {
        let l = [Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(1.0, 1.0)];
        assert_eq!(split_strokes(&l, 60.0, 100).len(), 2);

        let line: Vec<Point> = (0..10).map(|i| Point::new(i as f64, 0.0)).collect();
        assert_eq!(split_strokes(&line, 60.0, 100).len(), 1);

        let long: Vec<Point> = (0..250).map(|i| Point::new(i as f64, 0.0)).collect();
        let pieces = split_strokes(&long, 60.0, 100);
        let lens: Vec<usize> = pieces.iter().map(Vec::len).collect();
        assert_eq!(lens, vec![100, 100, 52]);
        assert_eq!(pieces[0].last(), pieces[1].first());
    }

    #[test]
    fn simplify_pixel_staircase() {
        let stairs: Vec<Point> = (0..20)
            .map(|i| Point::new((i / 2 + i % 2) as f64, (i / 2) as f64))
            .collect();
        let simple = simplify(&stairs, 1.0);
        assert_eq!(simple.first(), stairs.first());
        assert_eq!(simple.last(), stairs.last());
        assert!(simple.len() <= 3);
    }

    #[test]
    fn noise_examples() {
        let seg = [Point::new(0.0, 0.0), Point::new(1.0, 0.5)];
        let cloud = StrokeCloud::from_polyline(&seg, 64, true).unwrap();
        assert_eq!(add_noise(&cloud, 0.0, 3).unwrap(), cloud);
        let a = add_noise(&cloud, 0.01, 3).unwrap();
        let b = add_noise(&cloud, 0.01, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.points()[0], Point::ORIGIN);
        assert_ne!(a, cloud);
        assert!(add_noise(&cloud, -1.0, 0).is_err());
    }

    #[test]
    fn noise_is_zero_mean() {
        let n = 100_000;
        let pts: Vec<Point> = (0..n).map(|i| Point::new(i as f64, 0.0)).collect();
        let cloud = StrokeCloud::new(pts, Point::ORIGIN, true).unwrap();
        let sigma = 0.2;
        let noisy = add_noise(&cloud, sigma, 42).unwrap();
        let (mut mx, mut my) = (0.0, 0.0);
        for (p, q) in cloud.points().iter().zip(noisy.points()).skip(1) {
            mx += q.x - p.x;
            my += q.y - p.y;
        }
        let m = (n - 1) as f64;
        let bound = 3.0 * sigma / m.sqrt();
        assert!((mx / m).abs() < bound && (my / m).abs() < bound);
    }

    proptest! {
        #[test]
        fn resample_gaps_are_equal(
            raw in proptest::collection::vec((0.01f64..3.0, -10.0f64..10.0), 2..30),
            g in 2usize..200,
        ) {
            // x strictly increasing, so every sample sits on a unique segment
            // and its arc-length position can be recovered from x.
            let mut x = 0.0;
            let line: Vec<Point> = raw
                .into_iter()
                .map(|(dx, y)| {
                    x += dx;
                    Point::new(x, y)
                })
                .collect();
            let out = resample_uniform(&line, g).unwrap();
            prop_assert_eq!(out.len(), g);
            prop_assert_eq!(out[0], line[0]);
            prop_assert_eq!(*out.last().unwrap(), *line.last().unwrap());
            let total = polyline_length(&line);
            let mut cumulative = vec![0.0];
            for w in line.windows(2) {
                cumulative.push(cumulative.last().unwrap() + w[0].dist(w[1]));
            }
            let arc: Vec<f64> = out
                .iter()
                .map(|p| {
                    let seg = line
                        .windows(2)
                        .position(|w| p.x <= w[1].x)
                        .unwrap_or(line.len() - 2);
                    cumulative[seg] + p.dist(line[seg])
                })
                .collect();
            let expected = total / (g - 1) as f64;
            for w in arc.windows(2) {
                prop_assert!(((w[1] - w[0]) - expected).abs() < 1e-9 * total);
            }
        }

        #[test]
        fn resampling_uniform_input_is_idempotent(
            radius in 0.1f64..5.0,
            sweep in 0.1f64..6.0,
            start in 0.0f64..6.3,
            g in 2usize..200,
        ) {
            // Equal-angle chords of a circular arc are uniform along the
            // polyline they form.
            let arc: Vec<Point> = (0..g)
                .map(|i| {
                    let a = start + sweep * i as f64 / (g - 1) as f64;
                    Point::new(radius * a.cos(), radius * a.sin())
                })
                .collect();
            let again = resample_uniform(&arc, g).unwrap();
            let total = polyline_length(&arc);
            for (a, b) in arc.iter().zip(&again) {
                prop_assert!(a.dist(*b) < 1e-9 * total);
            }
        }

        #[test]
        fn split_reassembles_input(
            raw in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 2..300),
            thresh in 0.0f64..180.0,
            max_points in 2usize..120,
        ) {
            let line: Vec<Point> = raw.into_iter().map(Point::from).collect();
            let pieces = split_strokes(&line, thresh, max_points);
            prop_assert!(pieces.iter().all(|p| p.len() >= 2 && p.len() <= max_points));
            let mut joined = pieces[0].clone();
            for piece in &pieces[1..] {
                prop_assert_eq!(joined.last(), piece.first());
                joined.extend_from_slice(&piece[1..]);
            }
            prop_assert_eq!(joined, line);
        }

        #[test]
        fn normalize_round_trips(
            raw in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..50),
        ) {
            let line: Vec<Point> = raw.into_iter().map(Point::from).collect();
            let out = normalize_sketch(std::slice::from_ref(&line)).unwrap();
            let max_r = out.strokes[0].iter().map(|p| p.norm()).fold(0.0, f64::max);
            prop_assert!(max_r <= 1.0 + 1e-9);
            for (p, q) in line.iter().zip(&out.strokes[0]) {
                prop_assert!(out.frame.invert(*q).dist(*p) < 1e-9 * (1.0 + p.norm()));
            }
        }
    }
}
