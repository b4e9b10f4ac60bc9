//! Fit objectives between a rendered curve and a stroke cloud.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bezier::{
    render_masked, selectors, soft_bin, ControlPolygon, DegreeParam, RenderGrid, SelectorPair,
};
use crate::error::{Error, Result};
use crate::geom::Point;
use crate::prep::StrokeCloud;

mod assignment;

pub use assignment::{hungarian, Assignment};

/// Largest set size accepted by [`exact_wasserstein_oracle`].
pub const ORACLE_MAX_POINTS: usize = 64;

/// Unit projection directions for the sliced Wasserstein distance.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceSet {
    dirs: Vec<Point>,
    seed: Option<u64>,
}

impl SliceSet {
    /// Explicit directions; each must have unit norm within `1e-12`.
    pub fn new(dirs: Vec<Point>) -> Result<Self> {
        if dirs.is_empty() {
            return Err(Error::invalid("slice set needs at least one direction"));
        }
        if let Some(i) = dirs.iter().position(|d| (d.norm() - 1.0).abs() > 1e-12) {
            return Err(Error::invalid(format!("slice direction {i} is not unit length")));
        }
        Ok(SliceSet { dirs, seed: None })
    }

    /// `count` directions with angles drawn uniformly from `[0, π)`.
    pub fn random(count: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::sample(count, &mut rng).map(|mut s| {
            s.seed = Some(seed);
            s
        })
    }

    pub(crate) fn sample(count: usize, rng: &mut impl Rng) -> Result<Self> {
        if count == 0 {
            return Err(Error::invalid("slice count must be at least 1"));
        }
        let dirs = (0..count)
            .map(|_| {
                let theta = rng.random_range(0.0..std::f64::consts::PI);
                Point::new(theta.cos(), theta.sin())
            })
            .collect();
        Ok(SliceSet { dirs, seed: None })
    }

    pub fn dirs(&self) -> &[Point] {
        &self.dirs
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }
}

/// Which data term enters the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "swd")]
    Swd,
    #[serde(rename = "mse")]
    Mse,
    #[serde(rename = "swd+mse")]
    SwdMse,
}

impl LossKind {
    pub fn uses_mse(self) -> bool {
        matches!(self, LossKind::Mse | LossKind::SwdMse)
    }

    pub fn uses_swd(self) -> bool {
        matches!(self, LossKind::Swd | LossKind::SwdMse)
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "swd" => Ok(LossKind::Swd),
            "mse" => Ok(LossKind::Mse),
            "swd+mse" => Ok(LossKind::SwdMse),
            other => Err(Error::invalid(format!(
                "unknown loss {other:?}, expected swd, mse or swd+mse"
            ))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Swd => "swd",
            LossKind::Mse => "mse",
            LossKind::SwdMse => "swd+mse",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    pub lambda_d: f64,
    pub lambda_c: f64,
    /// Scale of the MSE term when `kind` is `swd+mse`.
    pub mse_weight: f64,
    pub slices: usize,
    pub tau: f64,
    /// Draw fresh slice directions every iteration instead of once per fit.
    #[serde(default)]
    pub resample_slices: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::Swd,
            lambda_d: 1e-3,
            lambda_c: 5e-2,
            mse_weight: 1.0,
            slices: 64,
            tau: crate::bezier::DEFAULT_TEMPERATURE,
            resample_slices: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_d", self.lambda_d),
            ("lambda_c", self.lambda_c),
            ("mse_weight", self.mse_weight),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if self.slices == 0 {
            return Err(Error::invalid("slices must be >= 1"));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::invalid(format!("tau must be > 0, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Objective value split into its components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub fit_term: f64,
    pub degree_term: f64,
    pub ctrl_term: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(fit_term: f64, degree_term: f64, ctrl_term: f64) -> Self {
        LossBreakdown {
            fit_term,
            degree_term,
            ctrl_term,
            total: fit_term + degree_term + ctrl_term,
        }
    }
}

fn check_same_len(a: &[Point], b: &[Point], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "{what}: point sets have {} and {} points",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::shape(format!("{what}: point sets are empty")));
    }
    Ok(())
}

/// Projections of `points` onto `dir` with the permutation that sorts them.
/// Ties keep index order.
pub(crate) fn sorted_projection(points: &[Point], dir: Point) -> (Vec<f64>, Vec<usize>) {
    let proj: Vec<f64> = points.iter().map(|p| p.dot(dir)).collect();
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| proj[i].total_cmp(&proj[j]));
    let sorted = order.iter().map(|&i| proj[i]).collect();
    (sorted, order)
}

/// Sliced Wasserstein distance with squared ground cost, averaged over slices
/// and points.
pub fn swd(a: &[Point], b: &[Point], slices: &SliceSet) -> Result<f64> {
    check_same_len(a, b, "swd")?;
    let g = a.len() as f64;
    let total: f64 = slices
        .dirs()
        .iter()
        .map(|&dir| {
            let (pa, _) = sorted_projection(a, dir);
            let (pb, _) = sorted_projection(b, dir);
            pa.iter().zip(&pb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / g
        })
        .sum();
    Ok(total / slices.len() as f64)
}

/// Mean squared distance between corresponding points.
pub fn mse_seq(c_hat: &[Point], s: &[Point]) -> Result<f64> {
    check_same_len(c_hat, s, "mse")?;
    let sum: f64 = c_hat.iter().zip(s).map(|(c, s)| (*c - *s).norm_sq()).sum();
    Ok(sum / c_hat.len() as f64)
}

/// `λ_d · r`.
pub fn degree_reg(d: &DegreeParam, lambda_d: f64) -> f64 {
    lambda_d * d.r()
}

/// `λ_c · Σ_{i<N} ‖P_{i+1} − P_i‖ · R̄_{i+1}`: each control-polygon segment is
/// gated by the selector of its far endpoint.
pub fn ctrl_reg(polygon: &ControlPolygon, sel: &SelectorPair, lambda_c: f64) -> f64 {
    if lambda_c == 0.0 {
        return 0.0;
    }
    let pts = polygon.points();
    let sum: f64 = pts
        .windows(2)
        .zip(&sel.control[1..])
        .map(|(w, &gate)| w[0].dist(w[1]) * gate)
        .sum();
    lambda_c * sum
}

/// The data term selected by `cfg.kind`.
pub(crate) fn fit_term(
    rendered: &[Point],
    target: &[Point],
    slices: &SliceSet,
    cfg: &LossConfig,
) -> Result<f64> {
    Ok(match cfg.kind {
        LossKind::Swd => swd(rendered, target, slices)?,
        LossKind::Mse => mse_seq(rendered, target)?,
        LossKind::SwdMse => swd(rendered, target, slices)? + cfg.mse_weight * mse_seq(rendered, target)?,
    })
}

/// Regularized objective for one stroke.
pub fn objective(
    polygon: &ControlPolygon,
    d: &DegreeParam,
    stroke: &StrokeCloud,
    grid: &RenderGrid,
    slices: &SliceSet,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    if stroke.len() != grid.len() {
        return Err(Error::shape(format!(
            "stroke has {} points but the render grid has {}",
            stroke.len(),
            grid.len()
        )));
    }
    let sel = selectors(&soft_bin(d, polygon.max_degree(), cfg.tau)?);
    let rendered = render_masked(polygon, &sel, grid)?;
    let fit = fit_term(&rendered, stroke.points(), slices, cfg)?;
    Ok(LossBreakdown::new(
        fit,
        degree_reg(d, cfg.lambda_d),
        ctrl_reg(polygon, &sel, cfg.lambda_c),
    ))
}

/// Exact squared-Euclidean optimal transport between two equal-size uniform
/// point sets: minimum-cost perfect matching divided by the set size.
pub fn exact_wasserstein_oracle(a: &[Point], b: &[Point]) -> Result<f64> {
    check_same_len(a, b, "exact wasserstein")?;
    if a.len() > ORACLE_MAX_POINTS {
        return Err(Error::invalid(format!(
            "exact oracle is capped at {ORACLE_MAX_POINTS} points, got {}",
            a.len()
        )));
    }
    let cost: Vec<Vec<f64>> = a
        .iter()
        .map(|p| b.iter().map(|q| (*p - *q).norm_sq()).collect())
        .collect();
    Ok(hungarian(&cost)?.cost / a.len() as f64)
}
