//! Objective evaluation and its exact gradient with respect to the control
//! points and the unconstrained degree parameter.
//!
//! The reverse pass follows the forward computation
//! `r′ → r → soft bins → (R, R̄) → (M̂, masks) → Ĉ → data term`, plus the two
//! regularizers. The sliced Wasserstein term is differentiated with the
//! per-slice sorting permutation held fixed, which is exact wherever no two
//! projections tie.

use crate::bezier::{
    selectors, soft_bin_with_derivative, ControlPolygon, DegreeParam, RenderGrid, SelectorPair,
    VariableBasis,
};
use crate::error::{Error, Result};
use crate::geom::Point;
use crate::losses::{sorted_projection, LossBreakdown, LossConfig, LossKind, SliceSet};
use crate::prep::StrokeCloud;
use super::precise::PreciseObjective;
use twofloat::TwoFloat as Dd;

/// Gradient of the objective.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub points: Vec<Point>,
    /// `dL/dr′`.
    pub raw: f64,
}

impl Gradient {
    pub fn is_finite(&self) -> bool {
        self.raw.is_finite() && self.points.iter().all(|p| p.is_finite())
    }

    /// `[∂x₀, ∂y₀, …, ∂x_N, ∂y_N, ∂r′]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.points.iter().flat_map(|p| [p.x, p.y]).collect();
        out.push(self.raw);
        out
    }
}

/// Which terms the problem includes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Terms {
    All,
    RegularizersOnly,
}

/// One stroke's fitting objective with cached basis and sorted target
/// projections.
#[derive(Clone, Debug)]
pub struct FitProblem {
    target: Vec<Point>,
    ts: Vec<f64>,
    basis: VariableBasis,
    slices: SliceSet,
    target_sorted: Vec<Vec<f64>>,
    cfg: LossConfig,
    terms: Terms,
}

impl FitProblem {
    pub fn new(
        stroke: &StrokeCloud,
        max_degree: usize,
        grid: &RenderGrid,
        slices: SliceSet,
        cfg: &LossConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if max_degree < 1 {
            return Err(Error::invalid("maximum degree must be >= 1"));
        }
        if stroke.len() != grid.len() {
            return Err(Error::shape(format!(
                "stroke has {} points but the render grid has {}",
                stroke.len(),
                grid.len()
            )));
        }
        let target = stroke.points().to_vec();
        let target_sorted = sort_target(&target, &slices);
        Ok(FitProblem {
            target,
            ts: grid.ts().to_vec(),
            basis: VariableBasis::new(max_degree, grid),
            slices,
            target_sorted,
            cfg: cfg.clone(),
            terms: Terms::All,
        })
    }

    /// Drops the data term, leaving `λ_d r + λ_c · (masked polygon length)`.
    /// The same problem with the control-point regularizer switched off.
    pub fn without_cohesion(&self) -> Self {
        let mut out = self.clone();
        out.cfg.lambda_c = 0.0;
        out
    }

    pub fn regularizers_only(mut self) -> Self {
        self.terms = Terms::RegularizersOnly;
        self
    }

    pub fn max_degree(&self) -> usize {
        self.basis.max_degree()
    }

    pub fn config(&self) -> &LossConfig {
        &self.cfg
    }

    pub fn slices(&self) -> &SliceSet {
        &self.slices
    }

    pub fn set_slices(&mut self, slices: SliceSet) {
        self.target_sorted = sort_target(&self.target, &slices);
        self.slices = slices;
    }

    fn precise(&self) -> PreciseObjective<'_> {
        PreciseObjective::new(
            self.basis.max_degree(),
            &self.ts,
            &self.target,
            self.slices.dirs(),
            &self.cfg,
            self.terms == Terms::All,
        )
    }

    fn check(&self, points: &[Point]) -> Result<()> {
        if points.len() != self.basis.max_degree() + 1 {
            return Err(Error::shape(format!(
                "expected {} control points, got {}",
                self.basis.max_degree() + 1,
                points.len()
            )));
        }
        Ok(())
    }

    pub fn evaluate(&self, points: &[Point], d: DegreeParam) -> Result<LossBreakdown> {
        Ok(self.run(points, d, false)?.0)
    }

    pub fn gradient(&self, points: &[Point], d: DegreeParam) -> Result<(LossBreakdown, Gradient)> {
        let (loss, grad) = self.run(points, d, true)?;
        Ok((loss, grad.expect("requested gradient")))
    }

    fn run(
        &self,
        points: &[Point],
        d: DegreeParam,
        want_grad: bool,
    ) -> Result<(LossBreakdown, Option<Gradient>)> {
        self.check(points)?;
        let n_max = self.basis.max_degree();
        let k = n_max + 1;
        let (bin, dbin_dr) = soft_bin_with_derivative(&d, n_max, self.cfg.tau)?;
        let sel = selectors(&bin);

        let lambda_d = self.cfg.lambda_d;
        let lambda_c = self.cfg.lambda_c;
        let degree_term = lambda_d * d.r();
        let seg_len: Vec<f64> = points.windows(2).map(|w| w[0].dist(w[1])).collect();
        let ctrl_term = if lambda_c == 0.0 {
            0.0
        } else {
            lambda_c
                * seg_len
                    .iter()
                    .zip(&sel.control[1..])
                    .map(|(l, g)| l * g)
                    .sum::<f64>()
        };

        let mut grad_p = vec![Point::ORIGIN; k];
        let mut grad_rbar = vec![0.0; k];
        let mut grad_r = vec![0.0; k];

        let fit_term = if self.terms == Terms::All {
            let render = self.basis.forward(points, &sel);
            let mut upstream = vec![Point::ORIGIN; render.points.len()];
            let fit = self.data_term(&render.points, want_grad.then_some(&mut upstream[..]));
            if want_grad {
                self.backprop_render(points, &sel, &render, &upstream, &mut grad_p, &mut grad_rbar, &mut grad_r);
            }
            fit
        } else {
            0.0
        };

        let loss = LossBreakdown::new(fit_term, degree_term, ctrl_term);
        if !want_grad {
            return Ok((loss, None));
        }

        if lambda_c != 0.0 {
            for (i, &len) in seg_len.iter().enumerate() {
                grad_rbar[i + 1] += lambda_c * len;
                if len > 0.0 {
                    let dir = (points[i + 1] - points[i]) * (lambda_c * sel.control[i + 1] / len);
                    grad_p[i + 1] += dir;
                    grad_p[i] -= dir;
                }
            }
        }

        // R̄_k = Σ_{n≥k} R_n, so dL/dR_n picks up Σ_{k≤n} dL/dR̄_k.
        let mut acc = 0.0;
        for n in 0..k {
            acc += grad_rbar[n];
            grad_r[n] += acc;
        }
        let dr: f64 = grad_r
            .iter()
            .zip(&dbin_dr)
            .map(|(g, db)| g * db)
            .sum::<f64>()
            + lambda_d;
        let grad = Gradient {
            points: grad_p,
            raw: dr * d.dr_draw(),
        };
        if !grad.is_finite() {
            return Err(Error::NonFiniteGradient("objective gradient".into()));
        }
        Ok((loss, Some(grad)))
    }

    /// Objective of the hard curve of degree `prefix.len() − 1` on its own
    /// control points: the data term plus `λ_c` times the polygon length.
    /// The degree term is `λ_d · r` for the given `d`. Returns the breakdown
    /// and the gradient with respect to every prefix point.
    pub fn hard_gradient(&self, prefix: &[Point], d: DegreeParam) -> Result<(LossBreakdown, Vec<Point>)> {
        let n = prefix.len().saturating_sub(1);
        if n < 1 || n > self.basis.max_degree() {
            return Err(Error::shape(format!(
                "hard curve needs 2..={} control points, got {}",
                self.basis.max_degree() + 1,
                prefix.len()
            )));
        }
        let k = self.basis.max_degree() + 1;
        let m = self.basis.padded_bernstein(n);
        let weights: Vec<f64> = self
            .basis
            .powers()
            .chunks(k)
            .flat_map(|row| (0..=n).map(move |j| (j..=n).map(|i| row[i] * m[i * k + j]).sum::<f64>()))
            .collect();
        let rendered: Vec<Point> = weights
            .chunks(n + 1)
            .map(|w| w.iter().zip(prefix).fold(Point::ORIGIN, |acc, (&b, &p)| acc + p * b))
            .collect();
        let mut upstream = vec![Point::ORIGIN; rendered.len()];
        let fit = if self.terms == Terms::All {
            self.data_term(&rendered, Some(&mut upstream))
        } else {
            0.0
        };
        let mut grad = vec![Point::ORIGIN; n + 1];
        for (w, &u) in weights.chunks(n + 1).zip(&upstream) {
            for (g, &b) in grad.iter_mut().zip(w) {
                *g += u * b;
            }
        }
        let lambda_c = self.cfg.lambda_c;
        let mut length = 0.0;
        for i in 0..n {
            let len = prefix[i].dist(prefix[i + 1]);
            length += len;
            if lambda_c != 0.0 && len > 0.0 {
                let dir = (prefix[i + 1] - prefix[i]) * (lambda_c / len);
                grad[i + 1] += dir;
                grad[i] -= dir;
            }
        }
        if grad.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFiniteGradient("hard curve gradient".into()));
        }
        let loss = LossBreakdown::new(fit, self.cfg.lambda_d * d.r(), lambda_c * length);
        Ok((loss, grad))
    }

    /// Number of central-difference stencil points (step `h`) at which some
    /// slice sorts the rendered projections differently than at `(points, d)`.
    /// Zero when there is no SWD term.
    pub fn stencil_sort_changes(&self, points: &[Point], d: DegreeParam, h: f64) -> Result<usize> {
        self.count_sort_changes(points, d, h, false)
    }

    /// Whether no stencil point of step `h` changes any slice's sort order.
    pub fn in_generic_position(&self, points: &[Point], d: DegreeParam, h: f64) -> Result<bool> {
        Ok(self.count_sort_changes(points, d, h, true)? == 0)
    }

    fn count_sort_changes(&self, points: &[Point], d: DegreeParam, h: f64, stop_early: bool) -> Result<usize> {
        self.check(points)?;
        if self.terms != Terms::All || !self.cfg.kind.uses_swd() {
            return Ok(0);
        }
        let render = |pts: &[Point], raw: f64| -> Result<Vec<Point>> {
            let (bin, _) = soft_bin_with_derivative(&DegreeParam::new(raw)?, self.basis.max_degree(), self.cfg.tau)?;
            Ok(self.basis.forward(pts, &selectors(&bin)).points)
        };
        let base = render(points, d.raw())?;
        let orders: Vec<Vec<usize>> = self
            .slices
            .dirs()
            .iter()
            .map(|dir| sorted_projection(&base, *dir).1)
            .collect();
        // The order survives exactly when the moved projections are still
        // non-decreasing along it.
        let changed = |moved: &[Point]| {
            self.slices.dirs().iter().zip(&orders).any(|(dir, order)| {
                order.windows(2).any(|w| moved[w[0]].dot(*dir) > moved[w[1]].dot(*dir))
            })
        };
        let mut changes = 0;
        for delta in [h, -h] {
            changes += usize::from(changed(&render(points, d.raw() + delta)?));
            for j in 0..points.len() {
                for axis in 0..2 {
                    if stop_early && changes > 0 {
                        return Ok(changes);
                    }
                    let mut pts = points.to_vec();
                    if axis == 0 {
                        pts[j].x += delta;
                    } else {
                        pts[j].y += delta;
                    }
                    changes += usize::from(changed(&render(&pts, d.raw())?));
                }
            }
        }
        Ok(changes)
    }

    /// Data term; accumulates `dL/dĈ` into `upstream` when given.
    fn data_term(&self, rendered: &[Point], mut upstream: Option<&mut [Point]>) -> f64 {
        let g = rendered.len() as f64;
        let mut total = 0.0;
        if self.cfg.kind.uses_swd() {
            let scale = 1.0 / (self.slices.len() as f64 * g);
            let mut swd = 0.0;
            for (dir, target) in self.slices.dirs().iter().zip(&self.target_sorted) {
                let (proj, order) = sorted_projection(rendered, *dir);
                for ((a, &b), &idx) in proj.iter().zip(target).zip(&order) {
                    let diff = a - b;
                    swd += diff * diff;
                    if let Some(up) = upstream.as_deref_mut() {
                        up[idx] += *dir * (2.0 * scale * diff);
                    }
                }
            }
            total += swd * scale;
        }
        if self.cfg.kind.uses_mse() {
            let weight = match self.cfg.kind {
                LossKind::SwdMse => self.cfg.mse_weight,
                _ => 1.0,
            };
            let mut mse = 0.0;
            for (g_idx, (c, s)) in rendered.iter().zip(&self.target).enumerate() {
                let diff = *c - *s;
                mse += diff.norm_sq();
                if let Some(up) = upstream.as_deref_mut() {
                    up[g_idx] += diff * (2.0 * weight / g);
                }
            }
            total += weight * mse / g;
        }
        total
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_render(
        &self,
        points: &[Point],
        sel: &SelectorPair,
        render: &crate::bezier::MaskedRender,
        upstream: &[Point],
        grad_p: &mut [Point],
        grad_rbar: &mut [f64],
        grad_r: &mut [f64],
    ) {
        let k = self.basis.max_degree() + 1;
        let rbar = &sel.control;
        let powers = self.basis.powers();

        // dL/dP_j = Σ_g W_gj U_g
        for (w_row, u) in render.weights.chunks(k).zip(upstream) {
            for (gp, &w) in grad_p.iter_mut().zip(w_row) {
                *gp += *u * w;
            }
        }

        // Q_ij = Σ_g t_g^i (U_g · P_j) is the gradient w.r.t. the masked
        // product R̄_i M̂_ij R̄_j.
        let mut q = vec![0.0; k * k];
        let mut y = vec![0.0; k];
        for (t_row, u) in powers.chunks(k).zip(upstream) {
            for (yj, p) in y.iter_mut().zip(points) {
                *yj = u.dot(*p);
            }
            for (i, &ti) in t_row.iter().enumerate() {
                if ti == 0.0 {
                    continue;
                }
                let q_row = &mut q[i * k..i * k + k];
                for j in 0..=i {
                    q_row[j] += ti * y[j];
                }
            }
        }

        let mixed = &render.mixed;
        let mut grad_mixed = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..=i {
                let qij = q[i * k + j];
                if qij == 0.0 {
                    continue;
                }
                let mij = mixed[i * k + j];
                grad_rbar[i] += qij * mij * rbar[j];
                grad_rbar[j] += qij * rbar[i] * mij;
                grad_mixed[i * k + j] = qij * rbar[i] * rbar[j];
            }
        }
        for (n, gr) in grad_r.iter_mut().enumerate() {
            let b = self.basis.padded_bernstein(n);
            *gr += b.iter().zip(&grad_mixed).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

fn sort_target(target: &[Point], slices: &SliceSet) -> Vec<Vec<f64>> {
    slices
        .dirs()
        .iter()
        .map(|&dir| sorted_projection(target, dir).0)
        .collect()
}

/// Exact gradient of the regularized objective at `(polygon, d)`.
pub fn grad_objective(
    polygon: &ControlPolygon,
    d: &DegreeParam,
    stroke: &StrokeCloud,
    grid: &RenderGrid,
    slices: &SliceSet,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Gradient)> {
    let problem = FitProblem::new(stroke, polygon.max_degree(), grid, slices.clone(), cfg)?;
    problem.gradient(polygon.points(), *d)
}

/// One analytic/numeric gradient pair.
#[derive(Clone, Debug, PartialEq)]
pub struct GradEntry {
    /// Flat parameter index: `2j` / `2j+1` for control point `j`, `2(N+1)`
    /// for `r′`.
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub entries: Vec<GradEntry>,
    /// Stencil evaluations whose per-slice sorting of the rendered points
    /// differs from the one at the base point. Zero means the point is in
    /// generic position for this step size.
    pub sort_changes: usize,
}

impl GradReport {
    pub fn generic_position(&self) -> bool {
        self.sort_changes == 0
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares [`FitProblem::gradient`] with central differences of step `h`
/// over every control-point coordinate and `r′`. The differenced objective
/// is evaluated in double-double precision so that rounding noise stays far
/// below the smallest gradients of interest.
pub fn finite_diff_check(
    problem: &FitProblem,
    polygon: &ControlPolygon,
    d: &DegreeParam,
    h: f64,
) -> Result<GradReport> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let (_, grad) = problem.gradient(polygon.points(), *d)?;
    let analytic = grad.to_flat();
    let oracle = problem.precise();
    let base: Vec<[Dd; 2]> = polygon
        .points()
        .iter()
        .map(|p| [Dd::from(p.x), Dd::from(p.y)])
        .collect();
    let raw = Dd::from(d.raw());
    let (_, base_orders) = oracle.eval_with_orders(&base, raw);
    let mut sort_changes = 0;
    let mut entries = Vec::with_capacity(analytic.len());

    for (index, &a) in analytic.iter().enumerate() {
        let ((plus, plus_orders), (minus, minus_orders)) = if index == analytic.len() - 1 {
            (
                oracle.eval_with_orders(&base, raw + h),
                oracle.eval_with_orders(&base, raw - h),
            )
        } else {
            let (j, axis) = (index / 2, index % 2);
            let shifted = |delta: f64| {
                let mut pts = base.clone();
                pts[j][axis] += delta;
                pts
            };
            (
                oracle.eval_with_orders(&shifted(h), raw),
                oracle.eval_with_orders(&shifted(-h), raw),
            )
        };
        sort_changes += usize::from(plus_orders != base_orders) + usize::from(minus_orders != base_orders);
        let numeric = f64::from((plus - minus) / (2.0 * h));
        entries.push(GradEntry {
            index,
            analytic: a,
            numeric,
            rel_err: relative_error(a, numeric),
        });
    }
    let max_rel_err = entries.iter().map(|e| e.rel_err).fold(0.0, f64::max);
    Ok(GradReport {
        max_rel_err,
        entries,
        sort_changes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bezier::render_fixed_degree;
    use crate::losses::objective;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(
        rng: &mut ChaCha8Rng,
        n_max: usize,
        g: usize,
    ) -> (ControlPolygon, DegreeParam, StrokeCloud) {
        let pts: Vec<Point> = (0..=n_max)
            .map(|_| Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let target_ctrl: Vec<Point> = (0..4)
            .map(|_| Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let grid = RenderGrid::uniform(g).unwrap();
        let curve = render_fixed_degree(&target_ctrl, 3, &grid).unwrap();
        let stroke = StrokeCloud::from_absolute(&curve, true);
        let d = DegreeParam::new(rng.random_range(-1.5..1.5)).unwrap();
        (ControlPolygon::new(pts).unwrap(), d, stroke)
    }

    #[test]
    fn degree_reg_only_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (polygon, d, stroke) = random_instance(&mut rng, 6, 32);
        let cfg = LossConfig {
            lambda_d: 1e-3,
            lambda_c: 0.0,
            ..LossConfig::default()
        };
        let grid = RenderGrid::uniform(32).unwrap();
        let problem = FitProblem::new(&stroke, 6, &grid, SliceSet::random(8, 0).unwrap(), &cfg)
            .unwrap()
            .regularizers_only();
        let (_, grad) = problem.gradient(polygon.points(), d).unwrap();
        let r = d.r();
        assert!((grad.raw - 1e-3 * r * (1.0 - r)).abs() < 1e-18);
        assert!(grad.points.iter().all(|p| *p == Point::ORIGIN));
        let report = finite_diff_check(&problem, &polygon, &d, 1e-5).unwrap();
        assert!(report.max_rel_err < 1e-8, "{}", report.max_rel_err);
    }

    #[test]
    fn matches_objective_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let grid = RenderGrid::uniform(40).unwrap();
        let slices = SliceSet::random(16, 3).unwrap();
        for kind in [LossKind::Swd, LossKind::Mse, LossKind::SwdMse] {
            let (polygon, d, stroke) = random_instance(&mut rng, 5, 40);
            let cfg = LossConfig {
                kind,
                mse_weight: 0.7,
                ..LossConfig::default()
            };
            let direct = objective(&polygon, &d, &stroke, &grid, &slices, &cfg).unwrap();
            let (via_grad, _) =
                grad_objective(&polygon, &d, &stroke, &grid, &slices, &cfg).unwrap();
            assert!((direct.total - via_grad.total).abs() < 1e-12);
            assert!((direct.fit_term - via_grad.fit_term).abs() < 1e-12);
        }
    }

    #[test]
    fn mse_gradient_vanishes_at_exact_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (polygon, d, _) = random_instance(&mut rng, 4, 24);
        let mut pts = polygon.points().to_vec();
        pts[0] = Point::ORIGIN;
        let polygon = ControlPolygon::new(pts).unwrap();
        let grid = RenderGrid::uniform(24).unwrap();
        let cfg = LossConfig {
            kind: LossKind::Mse,
            lambda_d: 0.0,
            lambda_c: 0.0,
            ..LossConfig::default()
        };
        let rendered = crate::bezier::render_variable_degree(&polygon, &d, &grid, cfg.tau).unwrap();
        let stroke = StrokeCloud::new(rendered, Point::ORIGIN, true).unwrap();
        let slices = SliceSet::random(4, 0).unwrap();
        let (loss, grad) = grad_objective(&polygon, &d, &stroke, &grid, &slices, &cfg).unwrap();
        assert!(loss.total < 1e-28);
        assert!(grad.points.iter().all(|p| p.norm() < 1e-14));
        assert!(grad.raw.abs() < 1e-14);
    }

    #[test]
    fn swd_and_mse_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = RenderGrid::uniform(64).unwrap();
        for (kind, tol) in [(LossKind::Swd, 1e-4), (LossKind::Mse, 1e-6), (LossKind::SwdMse, 1e-4)] {
            let mut checked = 0;
            while checked < 5 {
                let (polygon, d, stroke) = random_instance(&mut rng, 6, 64);
                let cfg = LossConfig {
                    kind,
                    ..LossConfig::default()
                };
                let problem =
                    FitProblem::new(&stroke, 6, &grid, SliceSet::random(64, 1).unwrap(), &cfg)
                        .unwrap();
                if problem.stencil_sort_changes(polygon.points(), d, 1e-5).unwrap() > 0 {
                    continue;
                }
                checked += 1;
                let report = finite_diff_check(&problem, &polygon, &d, 1e-5).unwrap();
                let worst = report.entries.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err)).unwrap();
                assert!(report.generic_position());
                assert!(report.max_rel_err < tol, "{kind:?}: {worst:?}");
            }
        }
    }

    #[test]
    fn sort_changes_explain_swd_mismatches() {
        // A tiny step avoids crossing ties, so even instances that are not
        // generic at h = 1e-5 agree closely there.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let grid = RenderGrid::uniform(64).unwrap();
        let mut seen_change = false;
        for _ in 0..6 {
            let (polygon, d, stroke) = random_instance(&mut rng, 6, 64);
            let problem = FitProblem::new(
                &stroke,
                6,
                &grid,
                SliceSet::random(64, 2).unwrap(),
                &LossConfig::default(),
            )
            .unwrap();
            let quick = problem.stencil_sort_changes(polygon.points(), d, 1e-5).unwrap();
            let coarse = finite_diff_check(&problem, &polygon, &d, 1e-5).unwrap();
            assert_eq!(quick == 0, coarse.generic_position());
            seen_change |= quick > 0;
            let fine = finite_diff_check(&problem, &polygon, &d, 1e-9).unwrap();
            if fine.generic_position() {
                assert!(fine.max_rel_err < 1e-5, "{}", fine.max_rel_err);
            }
        }
        assert!(seen_change);
    }

    #[test]
    fn hard_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let grid = RenderGrid::uniform(48).unwrap();
        for kind in [LossKind::Swd, LossKind::Mse, LossKind::SwdMse] {
            let (polygon, d, stroke) = random_instance(&mut rng, 6, 48);
            let cfg = LossConfig { kind, ..LossConfig::default() };
            let problem = FitProblem::new(&stroke, 6, &grid, SliceSet::random(32, 4).unwrap(), &cfg).unwrap();
            let prefix = polygon.prefix(4).to_vec();
            let (loss, grad) = problem.hard_gradient(&prefix, d).unwrap();
            // The hard curve is the fixed-degree Bézier curve on the prefix.
            let curve = render_fixed_degree(&prefix, 4, &grid).unwrap();
            let direct = crate::losses::fit_term(&curve, stroke.points(), problem.slices(), &cfg).unwrap();
            assert!((loss.fit_term - direct).abs() < 1e-12);
            let h = 1e-6;
            for j in 0..prefix.len() {
                for axis in 0..2 {
                    let eval = |delta: f64| {
                        let mut pts = prefix.clone();
                        if axis == 0 { pts[j].x += delta } else { pts[j].y += delta }
                        problem.hard_gradient(&pts, d).unwrap().0.total
                    };
                    let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                    let analytic = if axis == 0 { grad[j].x } else { grad[j].y };
                    // Central differences of an f64 objective: truncation is
                    // negligible here, rounding is about 1e-16 / h.
                    assert!((numeric - analytic).abs() < 1e-6, "{kind:?} {j} {axis}: {analytic} vs {numeric}");
                }
            }
        }
    }

    #[test]
    fn rejects_wrong_polygon_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (polygon, d, stroke) = random_instance(&mut rng, 4, 16);
        let grid = RenderGrid::uniform(16).unwrap();
        let problem = FitProblem::new(
            &stroke,
            5,
            &grid,
            SliceSet::random(4, 0).unwrap(),
            &LossConfig::default(),
        )
        .unwrap();
        assert!(problem.gradient(polygon.points(), d).is_err());
        let bad_grid = RenderGrid::uniform(17).unwrap();
        assert!(FitProblem::new(&stroke, 4, &bad_grid, SliceSet::random(4, 0).unwrap(), &LossConfig::default()).is_err());
    }
}
