//! Per-stroke fitting: exact gradients, finite-difference checks, Adam, and
//! the optimization loop.

mod adam;
mod grad;
mod precise;

pub use adam::{adam_step, AdamState};
pub use grad::{
    finite_diff_check, grad_objective, relative_error, FitProblem, GradEntry, GradReport, Gradient,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bezier::{hard_degree, ControlPolygon, DegreeParam, RenderGrid};
use crate::error::{Error, Result};
use crate::geom::Point;
use crate::losses::{LossBreakdown, LossConfig, LossKind, SliceSet};
use crate::prep::{resample_uniform, StrokeCloud};

/// Consecutive non-improving iterations before stopping early.
pub const PATIENCE: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_degree: usize,
    pub granularity: usize,
    pub loss: LossConfig,
    pub iters: usize,
    pub lr: f64,
    pub seed: u64,
    pub tol: f64,
    /// Adam steps refining the hard-degree curve after the soft fit.
    #[serde(default = "default_polish_iters")]
    pub polish_iters: usize,
}

fn default_polish_iters() -> usize {
    200
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_degree: 9,
            granularity: 128,
            loss: LossConfig::default(),
            iters: 500,
            lr: 0.02,
            seed: 0,
            tol: 1e-8,
            polish_iters: default_polish_iters(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_degree < 1 {
            return Err(Error::invalid("max degree must be >= 1"));
        }
        if self.granularity < self.max_degree + 1 {
            return Err(Error::invalid(format!(
                "granularity ({}) must be >= max degree + 1 ({})",
                self.granularity,
                self.max_degree + 1
            )));
        }
        if self.iters < 1 {
            return Err(Error::invalid("iters must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("learning rate must be > 0"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::invalid("tolerance must be >= 0"));
        }
        self.loss.validate()
    }

    /// Loss settings actually used on `stroke`: sequence losses need a
    /// meaningful point order, so unordered strokes fall back to SWD.
    pub fn effective_loss(&self, stroke: &StrokeCloud) -> LossConfig {
        let mut loss = self.loss.clone();
        if !stroke.ordered() && loss.kind.uses_mse() {
            loss.kind = LossKind::Swd;
        }
        loss
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub polygon: ControlPolygon,
    pub degree_param: DegreeParam,
    pub degree: usize,
    pub trace: Vec<LossBreakdown>,
    /// Loss at the returned parameters.
    pub loss: LossBreakdown,
    pub loss_kind: LossKind,
    pub converged: bool,
    pub degenerate: bool,
    /// Control points `P_0..=P_n` of the exported curve: the active prefix
    /// refined at the fixed hard degree.
    pub curve: Vec<Point>,
    /// Hard-curve loss of `curve` (its data term, `λ_c` times its polygon
    /// length and the degree term at `degree_param`).
    pub curve_loss: LossBreakdown,
}

impl FitResult {
    /// The active control points `P_0..=P_n` of the soft optimum.
    pub fn active_points(&self) -> &[Point] {
        self.polygon.prefix(self.degree)
    }

    pub fn iterations(&self) -> usize {
        self.trace.len()
    }
}

/// Initial control points: `N + 1` equal arc-length samples of the stroke.
pub fn initial_polygon(stroke: &StrokeCloud, max_degree: usize) -> Result<ControlPolygon> {
    let mut pts = resample_uniform(stroke.points(), max_degree + 1)?;
    pts[0] = Point::ORIGIN;
    ControlPolygon::new(pts)
}

fn flatten(points: &[Point], raw: f64) -> Vec<f64> {
    let mut out: Vec<f64> = points.iter().flat_map(|p| [p.x, p.y]).collect();
    out.push(raw);
    out
}

fn unflatten(params: &[f64]) -> (Vec<Point>, f64) {
    let (coords, raw) = params.split_at(params.len() - 1);
    let pts = coords.chunks(2).map(|c| Point::new(c[0], c[1])).collect();
    (pts, raw[0])
}

/// Fits a variable-degree curve to `stroke` with Adam. Returns the iterate
/// with the lowest total loss seen. An all-coincident stroke yields a
/// collapsed degree-1 curve flagged `degenerate`.
pub fn fit_stroke(stroke: &StrokeCloud, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    if stroke.len() != cfg.granularity {
        return Err(Error::shape(format!(
            "stroke has {} points, granularity is {}",
            stroke.len(),
            cfg.granularity
        )));
    }
    let n_max = cfg.max_degree;
    let loss_cfg = cfg.effective_loss(stroke);
    let grid = RenderGrid::uniform(cfg.granularity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let slices = SliceSet::sample(loss_cfg.slices, &mut rng)?;
    let mut problem = FitProblem::new(stroke, n_max, &grid, slices, &loss_cfg)?;

    if stroke.is_degenerate() {
        let polygon = ControlPolygon::new(vec![Point::ORIGIN; n_max + 1])?;
        let degree_param = collapsed_degree_param(n_max)?;
        let loss = problem.evaluate(polygon.points(), degree_param)?;
        let curve = polygon.prefix(1).to_vec();
        let (curve_loss, _) = problem.hard_gradient(&curve, degree_param)?;
        return Ok(FitResult {
            polygon,
            degree_param,
            degree: 1,
            trace: vec![loss],
            loss,
            loss_kind: loss_cfg.kind,
            converged: true,
            degenerate: true,
            curve,
            curve_loss,
        });
    }

    let init = initial_polygon(stroke, n_max)?;
    let mut params = flatten(init.points(), 0.0);
    let mut state = AdamState::new(params.len());
    let mut trace = Vec::with_capacity(cfg.iters);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut stall = 0;
    let mut converged = false;

    for it in 0..cfg.iters {
        if loss_cfg.resample_slices && it > 0 {
            problem.set_slices(SliceSet::sample(loss_cfg.slices, &mut rng)?);
        }
        let (pts, raw) = unflatten(&params);
        let (loss, grad) = problem.gradient(&pts, DegreeParam::new(raw)?)?;
        trace.push(loss);
        let best_total = best.as_ref().map_or(f64::INFINITY, |b| b.0);
        if best_total - loss.total < cfg.tol {
            stall += 1;
        } else {
            stall = 0;
        }
        if loss.total < best_total {
            best = Some((loss.total, params.clone()));
        }
        if stall >= PATIENCE {
            converged = true;
            break;
        }
        let mut g = grad.to_flat();
        // The first control point is pinned at the origin.
        g[0] = 0.0;
        g[1] = 0.0;
        adam_step(&mut state, &mut params, &g, cfg.lr)?;
    }

    let (_, best_params) = best.expect("at least one iteration");
    let (pts, raw) = unflatten(&best_params);
    let degree_param = DegreeParam::new(raw)?;
    let polygon = ControlPolygon::new(pts)?;
    let loss = problem.evaluate(polygon.points(), degree_param)?;
    let degree = hard_degree(&degree_param, n_max);
    let (curve, curve_loss) = polish(&problem, polygon.prefix(degree), degree_param, cfg)?;
    Ok(FitResult {
        degree,
        polygon,
        degree_param,
        trace,
        loss,
        loss_kind: loss_cfg.kind,
        converged,
        degenerate: false,
        curve,
        curve_loss,
    })
}

/// Adam on the data term of the hard curve's own control points, first
/// point pinned, with the same early-stop rule as the soft fit. Returns the
/// best iterate and its full hard-curve breakdown under `problem`.
fn polish(
    problem: &FitProblem,
    start: &[Point],
    d: DegreeParam,
    cfg: &FitConfig,
) -> Result<(Vec<Point>, LossBreakdown)> {
    let data_only = problem.without_cohesion();
    let to_points = |params: &[f64]| -> Vec<Point> {
        params.chunks(2).map(|c| Point::new(c[0], c[1])).collect()
    };
    let mut params: Vec<f64> = start.iter().flat_map(|p| [p.x, p.y]).collect();
    let mut best = (f64::INFINITY, params.clone());
    let mut state = AdamState::new(params.len());
    let mut stall = 0;
    for _ in 0..=cfg.polish_iters {
        let (loss, grad) = data_only.hard_gradient(&to_points(&params), d)?;
        if best.0 - loss.total < cfg.tol {
            stall += 1;
        } else {
            stall = 0;
        }
        if loss.total < best.0 {
            best = (loss.total, params.clone());
        }
        if stall >= PATIENCE {
            break;
        }
        let mut g: Vec<f64> = grad.iter().flat_map(|p| [p.x, p.y]).collect();
        g[0] = 0.0;
        g[1] = 0.0;
        adam_step(&mut state, &mut params, &g, cfg.lr)?;
    }
    let curve = to_points(&best.1);
    let (loss, _) = problem.hard_gradient(&curve, d)?;
    Ok((curve, loss))
}

/// A raw parameter whose hard degree is 1.
fn collapsed_degree_param(max_degree: usize) -> Result<DegreeParam> {
    DegreeParam::from_r(0.5 / max_degree as f64)
}
