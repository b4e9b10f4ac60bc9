//! Independent double-double evaluation of the fitting objective.
//!
//! Central differences of an `f64` objective carry roughly `1e-16 / h` of
//! rounding noise, which swamps the gradients of strongly masked control
//! points. Evaluating the same objective in double-double arithmetic makes
//! the finite-difference oracle accurate far below that level.

use twofloat::TwoFloat as Dd;

use crate::geom::Point;
use crate::losses::{LossConfig, LossKind};

const TAYLOR_TERMS: usize = 22;
const HALVINGS: i32 = 4;

/// `exp` to double-double accuracy: argument reduction by `ln 2`, a further
/// `2^-4` scaling, a Taylor series, then repeated squaring.
pub(crate) fn exp(x: Dd) -> Dd {
    let k = (x.hi() / twofloat::consts::LN_2.hi()).round();
    let r = (x - twofloat::consts::LN_2 * k) / f64::from(1u32 << HALVINGS);
    let mut term = Dd::from(1.0);
    let mut sum = Dd::from(1.0);
    for i in 1..=TAYLOR_TERMS {
        term = term * r / i as f64;
        sum += term;
    }
    for _ in 0..HALVINGS {
        sum = sum * sum;
    }
    sum * 2f64.powi(k as i32)
}

/// `a / b` by long division on the high words; the library quotient is
/// only accurate to `f64` precision.
pub(crate) fn div(a: Dd, b: Dd) -> Dd {
    let q1 = a.hi() / b.hi();
    let r = a - b * q1;
    let q2 = r.hi() / b.hi();
    let r = r - b * q2;
    let q3 = r.hi() / b.hi();
    Dd::new_add(q1, q2) + q3
}

fn sigmoid(x: Dd) -> Dd {
    if x.hi() >= 0.0 {
        div(Dd::from(1.0), exp(-x) + 1.0)
    } else {
        let e = exp(x);
        div(e, e + 1.0)
    }
}

/// Orders normalized double-double values by high word, then low word.
fn dd_cmp(a: Dd, b: Dd) -> std::cmp::Ordering {
    a.hi().total_cmp(&b.hi()).then(a.lo().total_cmp(&b.lo()))
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i as u64 + 1)) as f64
}

/// Inputs shared by every evaluation.
pub(crate) struct PreciseObjective<'a> {
    max_degree: usize,
    ts: &'a [f64],
    target: &'a [Point],
    dirs: &'a [Point],
    cfg: &'a LossConfig,
    include_fit: bool,
    /// Sorted target projections per slice.
    target_sorted: Vec<Vec<Dd>>,
}

impl<'a> PreciseObjective<'a> {
    pub fn new(
        max_degree: usize,
        ts: &'a [f64],
        target: &'a [Point],
        dirs: &'a [Point],
        cfg: &'a LossConfig,
        include_fit: bool,
    ) -> Self {
        let target_sorted = dirs
            .iter()
            .map(|dir| {
                let mut b: Vec<Dd> = target
                    .iter()
                    .map(|p| Dd::new_mul(p.x, dir.x) + Dd::new_mul(p.y, dir.y))
                    .collect();
                b.sort_by(|x, y| dd_cmp(*x, *y));
                b
            })
            .collect();
        PreciseObjective {
            max_degree,
            ts,
            target,
            dirs,
            cfg,
            include_fit,
            target_sorted,
        }
    }

    /// Degree weights `R_0..=R_N` for raw parameter `raw`.
    fn degree_weights(&self, raw: Dd) -> (Dd, Vec<Dd>) {
        let n = self.max_degree;
        let r = sigmoid(raw);
        let logits: Vec<Dd> = (0..=n + 1)
            .map(|b| {
                let bias = (b * b.saturating_sub(1)) as f64 / (2 * n) as f64;
                (r * (b + 1) as f64 - bias) / self.cfg.tau
            })
            .collect();
        let max = logits.iter().fold(logits[0], |m, &l| if l > m { l } else { m });
        let exps: Vec<Dd> = logits.iter().map(|&l| exp(l - max)).collect();
        let z = exps.iter().fold(Dd::from(0.0), |a, &e| a + e);
        let mut weights = vec![Dd::from(0.0); n + 1];
        for (b, e) in exps.into_iter().enumerate() {
            weights[b.clamp(1, n)] += div(e, z);
        }
        (r, weights)
    }

    /// Objective plus, for each slice, the order that sorts the rendered
    /// projections (empty without an SWD term).
    pub fn eval_with_orders(&self, points: &[[Dd; 2]], raw: Dd) -> (Dd, Vec<Vec<usize>>) {
        let n = self.max_degree;
        let k = n + 1;
        let (r, weights) = self.degree_weights(raw);
        let mut rbar = vec![Dd::from(0.0); k];
        let mut acc = Dd::from(0.0);
        for i in (0..k).rev() {
            acc += weights[i];
            rbar[i] = acc;
        }

        let mut total = r * self.cfg.lambda_d;
        if self.cfg.lambda_c != 0.0 {
            let mut ctrl = Dd::from(0.0);
            for i in 0..n {
                let dx = points[i + 1][0] - points[i][0];
                let dy = points[i + 1][1] - points[i][1];
                ctrl += (dx * dx + dy * dy).sqrt() * rbar[i + 1];
            }
            total += ctrl * self.cfg.lambda_c;
        }
        let mut orders = Vec::new();
        if !self.include_fit {
            return (total, orders);
        }

        // M̂_ij = Σ_m R_m M^(m)_ij with M^(m)_ij = (−1)^{i−j} C(m, j) C(m−j, i−j).
        let mut mixed = vec![Dd::from(0.0); k * k];
        for (m, &rm) in weights.iter().enumerate() {
            for i in 0..=m {
                for j in 0..=i {
                    let sign = if (i - j) % 2 == 0 { 1.0 } else { -1.0 };
                    let c = sign * binomial(m, j) * binomial(m - j, i - j);
                    mixed[i * k + j] += rm * c;
                }
            }
        }
        // Masked control points R̄_j P_j, then per-row sums Σ_j M̂_ij R̄_j P_j.
        let mut rows = vec![[Dd::from(0.0); 2]; k];
        for i in 0..k {
            for j in 0..=i {
                let w = mixed[i * k + j] * rbar[j];
                rows[i][0] += w * points[j][0];
                rows[i][1] += w * points[j][1];
            }
            rows[i][0] *= rbar[i];
            rows[i][1] *= rbar[i];
        }
        let rendered: Vec<[Dd; 2]> = self
            .ts
            .iter()
            .map(|&t| {
                let mut out = [Dd::from(0.0); 2];
                let mut ti = Dd::from(1.0);
                for row in &rows {
                    out[0] += ti * row[0];
                    out[1] += ti * row[1];
                    ti *= t;
                }
                out
            })
            .collect();

        let g = rendered.len() as f64;
        if self.cfg.kind.uses_swd() {
            let mut swd = Dd::from(0.0);
            for (dir, b) in self.dirs.iter().zip(&self.target_sorted) {
                let a: Vec<Dd> = rendered.iter().map(|p| p[0] * dir.x + p[1] * dir.y).collect();
                let mut order: Vec<usize> = (0..a.len()).collect();
                order.sort_by(|&i, &j| dd_cmp(a[i], a[j]));
                for (&i, y) in order.iter().zip(b) {
                    let d = a[i] - *y;
                    swd += d * d;
                }
                orders.push(order);
            }
            total += swd / (self.dirs.len() as f64 * g);
        }
        if self.cfg.kind.uses_mse() {
            let weight = match self.cfg.kind {
                LossKind::SwdMse => self.cfg.mse_weight,
                _ => 1.0,
            };
            let mut mse = Dd::from(0.0);
            for (c, s) in rendered.iter().zip(self.target) {
                let dx = c[0] - s.x;
                let dy = c[1] - s.y;
                mse += dx * dx + dy * dy;
            }
            total += mse * weight / g;
        }
        (total, orders)
    }
}
