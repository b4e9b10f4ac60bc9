//! Bézier evaluation in matrix form, soft binning of the continuous degree
//! parameter and the masked variable-degree renderer.
//!
//! A fixed degree-`n` curve sampled at `G` parameter values is `T · M · P`,
//! with `T` the `G × (n+1)` monomial matrix, `M` the Bernstein coefficient
//! matrix and `P` the `(n+1) × 2` control points. The variable-degree
//! renderer keeps `N + 1` candidate control points and replaces each factor by
//! a masked or mixed version driven by a degree selector `R` (a distribution
//! over degrees) and its reversed cumulative sum `R̄`:
//!
//! ```text
//! T̂ = T ⊙ R̄ᵀ (columns)    M̂ = Σₙ Rₙ · pad(M⁽ⁿ⁾)    P̂ = P ⊙ R̄ (rows)
//! Ĉ = T̂ · M̂ · P̂
//! ```

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geom::Point;

/// Default soft-binning temperature.
pub const DEFAULT_TEMPERATURE: f64 = 0.1;

/// Tolerance for probability-vector invariants.
const PROB_EPS: f64 = 1e-9;

/// The `N + 1` candidate control points of one stroke's curve.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlPolygon {
    points: Vec<Point>,
}

impl ControlPolygon {
    /// Requires at least two points (maximum degree `N ≥ 1`), all finite.
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid(format!(
                "control polygon needs at least 2 points, got {}",
                points.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("control point {i} is not finite")));
        }
        Ok(ControlPolygon { points })
    }

    pub fn max_degree(&self) -> usize {
        self.points.len() - 1
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    /// The first `degree + 1` control points.
    pub fn prefix(&self, degree: usize) -> &[Point] {
        &self.points[..=degree.min(self.max_degree())]
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Unconstrained degree parameter `r′`; the constrained value is
/// `r = sigmoid(r′) ∈ (0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegreeParam {
    raw: f64,
}

impl DegreeParam {
    pub fn new(raw: f64) -> Result<Self> {
        if !raw.is_finite() {
            return Err(Error::invalid("degree parameter must be finite"));
        }
        Ok(DegreeParam { raw })
    }

    /// Inverse of [`DegreeParam::r`]; `r` must lie strictly inside `(0, 1)`.
    pub fn from_r(r: f64) -> Result<Self> {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::invalid(format!("r must lie in (0, 1), got {r}")));
        }
        DegreeParam::new((r / (1.0 - r)).ln())
    }

    pub fn raw(&self) -> f64 {
        self.raw
    }

    pub fn r(&self) -> f64 {
        sigmoid(self.raw)
    }

    /// `dr/dr′ = r (1 − r)`.
    pub fn dr_draw(&self) -> f64 {
        let r = self.r();
        r * (1.0 - r)
    }
}

/// A distribution over degrees `0..=N` with zero mass on degree 0.
#[derive(Clone, Debug, PartialEq)]
pub struct BinVector {
    weights: Vec<f64>,
    temperature: f64,
}

impl BinVector {
    /// Validates the distribution invariants.
    pub fn new(weights: Vec<f64>, temperature: f64) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::invalid("bin vector needs at least degrees 0 and 1"));
        }
        if !(temperature > 0.0) {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("bin weights must be finite and non-negative"));
        }
        if weights[0] != 0.0 {
            return Err(Error::invalid("degree 0 must carry zero weight"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > PROB_EPS {
            return Err(Error::invalid(format!("bin weights sum to {sum}, not 1")));
        }
        Ok(BinVector {
            weights,
            temperature,
        })
    }

    /// Exactly one-hot at `degree` (the hard-binning limit).
    pub fn one_hot(degree: usize, max_degree: usize) -> Result<Self> {
        if degree == 0 || degree > max_degree {
            return Err(Error::invalid(format!(
                "degree {degree} outside 1..={max_degree}"
            )));
        }
        let mut weights = vec![0.0; max_degree + 1];
        weights[degree] = 1.0;
        Ok(BinVector {
            weights,
            temperature: f64::MIN_POSITIVE,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn max_degree(&self) -> usize {
        self.weights.len() - 1
    }

    /// Most probable degree; ties go to the lower degree.
    pub fn argmax(&self) -> usize {
        let mut best = 1;
        for (n, &w) in self.weights.iter().enumerate().skip(1) {
            if w > self.weights[best] {
                best = n;
            }
        }
        best
    }
}

/// Logits of the `N + 2` soft bins delimited by the cut points `i / N`.
///
/// Bin `b` gets `((b + 1) r − Σ_{i<b} i/N) / τ`, so consecutive logits differ
/// by `(r − b/N) / τ` and the largest logit is the bin containing `r`.
fn bin_logits(r: f64, max_degree: usize, tau: f64) -> Vec<f64> {
    let n = max_degree as f64;
    (0..=max_degree + 1)
        .map(|b| {
            let bf = b as f64;
            let bias = bf * (bf - 1.0) / (2.0 * n);
            ((bf + 1.0) * r - bias) / tau
        })
        .collect()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Degree that soft bin `b` contributes to: outer open bins fold into 1 and `N`.
#[inline]
fn bin_degree(bin: usize, max_degree: usize) -> usize {
    bin.clamp(1, max_degree)
}

fn check_soft_bin_args(max_degree: usize, tau: f64) -> Result<()> {
    if max_degree < 1 {
        return Err(Error::invalid("maximum degree must be at least 1"));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!(
            "temperature must be positive and finite, got {tau}"
        )));
    }
    Ok(())
}

/// Soft categorical over degrees `0..=N` for the continuous degree parameter.
pub fn soft_bin(d: &DegreeParam, max_degree: usize, tau: f64) -> Result<BinVector> {
    Ok(soft_bin_with_derivative(d, max_degree, tau)?.0)
}

/// [`soft_bin`] plus `dR_n / dr` for every degree `n`.
pub fn soft_bin_with_derivative(
    d: &DegreeParam,
    max_degree: usize,
    tau: f64,
) -> Result<(BinVector, Vec<f64>)> {
    check_soft_bin_args(max_degree, tau)?;
    let r = d.r();
    let s = softmax(&bin_logits(r, max_degree, tau));
    // d logit_b / dr = (b + 1) / τ
    let mean_slope: f64 = s
        .iter()
        .enumerate()
        .map(|(b, sb)| sb * (b as f64 + 1.0))
        .sum();
    let mut weights = vec![0.0; max_degree + 1];
    let mut deriv = vec![0.0; max_degree + 1];
    for (b, &sb) in s.iter().enumerate() {
        let n = bin_degree(b, max_degree);
        weights[n] += sb;
        deriv[n] += sb * (b as f64 + 1.0 - mean_slope) / tau;
    }
    Ok((
        BinVector {
            weights,
            temperature: tau,
        },
        deriv,
    ))
}

/// Hard effective degree `clamp(ceil(r N), 1, N)`.
pub fn hard_degree(d: &DegreeParam, max_degree: usize) -> usize {
    let n = max_degree.max(1);
    let scaled = (d.r() * n as f64).ceil();
    (scaled as usize).clamp(1, n)
}

/// Degree selector `R` and control-point selector `R̄`.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectorPair {
    pub degree: Vec<f64>,
    pub control: Vec<f64>,
}

impl SelectorPair {
    pub fn max_degree(&self) -> usize {
        self.degree.len() - 1
    }
}

/// `R̄_i = Σ_{j ≥ i} R_j`.
pub fn selectors(bin: &BinVector) -> SelectorPair {
    let degree = bin.weights().to_vec();
    let mut control = vec![0.0; degree.len()];
    let mut acc = 0.0;
    for i in (0..degree.len()).rev() {
        acc += degree[i];
        control[i] = acc.min(1.0);
    }
    SelectorPair { degree, control }
}

/// `G` uniformly spaced interpolation values on `[0, 1]`, endpoints included.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderGrid {
    ts: Vec<f64>,
}

impl RenderGrid {
    pub fn uniform(granularity: usize) -> Result<Self> {
        if granularity < 2 {
            return Err(Error::invalid(format!(
                "render granularity must be at least 2, got {granularity}"
            )));
        }
        let last = (granularity - 1) as f64;
        let ts = (0..granularity).map(|i| i as f64 / last).collect();
        Ok(RenderGrid { ts })
    }

    pub fn ts(&self) -> &[f64] {
        &self.ts
    }

    pub fn len(&self) -> usize {
        self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ts.is_empty()
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Bernstein coefficient matrix `M⁽ⁿ⁾`: `[1, t, …, tⁿ] · M⁽ⁿ⁾` is the row of
/// Bernstein basis values. Entry `(i, j)` is `(−1)^{i−j} C(n, j) C(n−j, i−j)`
/// on and below the diagonal, zero above.
pub fn bernstein_matrix(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n + 1, n + 1, |i, j| {
        if i < j {
            0.0
        } else {
            let sign = if (i - j) % 2 == 0 { 1.0 } else { -1.0 };
            (sign * binomial(n, j) * binomial(n - j, i - j)).round()
        }
    })
}

/// Evaluates the Bézier curve on `points` at `t` by repeated interpolation.
pub fn de_casteljau(points: &[Point], t: f64) -> Result<Point> {
    if points.is_empty() {
        return Err(Error::invalid("de Casteljau needs at least one point"));
    }
    let mut work = points.to_vec();
    for level in (1..work.len()).rev() {
        for i in 0..level {
            work[i] = work[i].lerp(work[i + 1], t);
        }
    }
    Ok(work[0])
}

fn monomials(t: f64, n: usize, out: &mut [f64]) {
    let mut p = 1.0;
    for slot in out.iter_mut().take(n + 1) {
        *slot = p;
        p *= t;
    }
}

/// `T · M⁽ⁿ⁾ · P` on the grid; `points` must hold exactly `n + 1` points.
pub fn render_fixed_degree(points: &[Point], n: usize, grid: &RenderGrid) -> Result<Vec<Point>> {
    if points.len() != n + 1 {
        return Err(Error::shape(format!(
            "degree {n} needs {} control points, got {}",
            n + 1,
            points.len()
        )));
    }
    let m = bernstein_matrix(n);
    // M · P, (n+1) × 2
    let mp: Vec<Point> = (0..=n)
        .map(|i| {
            (0..=i).fold(Point::ORIGIN, |acc, j| acc + points[j] * m[(i, j)])
        })
        .collect();
    let mut row = vec![0.0; n + 1];
    Ok(grid
        .ts()
        .iter()
        .map(|&t| {
            monomials(t, n, &mut row);
            row.iter()
                .zip(&mp)
                .fold(Point::ORIGIN, |acc, (&ti, &q)| acc + q * ti)
        })
        .collect())
}

/// Variable-degree rendering `Ĉ(r) = T̂(r) · M̂(r) · P̂(r)` driven by the soft
/// selectors of `d` at temperature `tau`.
pub fn render_variable_degree(
    polygon: &ControlPolygon,
    d: &DegreeParam,
    grid: &RenderGrid,
    tau: f64,
) -> Result<Vec<Point>> {
    let bin = soft_bin(d, polygon.max_degree(), tau)?;
    render_masked(polygon, &selectors(&bin), grid)
}

/// The masked renderer with explicitly supplied selectors.
pub fn render_masked(
    polygon: &ControlPolygon,
    sel: &SelectorPair,
    grid: &RenderGrid,
) -> Result<Vec<Point>> {
    if sel.max_degree() != polygon.max_degree() {
        return Err(Error::shape(format!(
            "selectors cover degree {} but polygon has maximum degree {}",
            sel.max_degree(),
            polygon.max_degree()
        )));
    }
    let basis = VariableBasis::new(polygon.max_degree(), grid);
    Ok(basis.forward(polygon.points(), sel).points)
}

/// Precomputed monomial rows and padded Bernstein matrices for repeated
/// variable-degree rendering at a fixed maximum degree and grid.
#[derive(Clone, Debug)]
pub struct VariableBasis {
    max_degree: usize,
    granularity: usize,
    /// `G × (N+1)` row-major `t_g^i`.
    powers: Vec<f64>,
    /// `M⁽ⁿ⁾` for `n = 0..=N`, each stored `(N+1) × (N+1)` row-major with
    /// zero padding.
    bernstein: Vec<Vec<f64>>,
}

/// Intermediate values of one masked render, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct MaskedRender {
    /// `M̂ = Σₙ Rₙ pad(M⁽ⁿ⁾)`, `(N+1) × (N+1)` row-major.
    pub mixed: Vec<f64>,
    /// Per-point control-point weights `W = T̂ · M̂ · diag(R̄)`, `G × (N+1)`.
    pub weights: Vec<f64>,
    pub points: Vec<Point>,
}

impl VariableBasis {
    pub fn new(max_degree: usize, grid: &RenderGrid) -> Self {
        let k = max_degree + 1;
        let g = grid.len();
        let mut powers = vec![0.0; g * k];
        for (row, &t) in powers.chunks_mut(k).zip(grid.ts()) {
            monomials(t, max_degree, row);
        }
        let bernstein = (0..=max_degree)
            .map(|n| {
                let m = bernstein_matrix(n);
                let mut padded = vec![0.0; k * k];
                for i in 0..=n {
                    for j in 0..=i {
                        padded[i * k + j] = m[(i, j)];
                    }
                }
                padded
            })
            .collect();
        VariableBasis {
            max_degree,
            granularity: g,
            powers,
            bernstein,
        }
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn granularity(&self) -> usize {
        self.granularity
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn padded_bernstein(&self, n: usize) -> &[f64] {
        &self.bernstein[n]
    }

    /// Renders `points` (length `N + 1`) under the given selectors.
    pub fn forward(&self, points: &[Point], sel: &SelectorPair) -> MaskedRender {
        let k = self.max_degree + 1;
        debug_assert_eq!(points.len(), k);
        let rbar = &sel.control;

        let mut mixed = vec![0.0; k * k];
        for (n, &rn) in sel.degree.iter().enumerate() {
            if rn == 0.0 {
                continue;
            }
            for (m, &b) in mixed.iter_mut().zip(&self.bernstein[n]) {
                *m += rn * b;
            }
        }

        // masked[i][j] = R̄_i M̂_ij R̄_j
        let mut masked = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..=i {
                masked[i * k + j] = rbar[i] * mixed[i * k + j] * rbar[j];
            }
        }

        let mut weights = vec![0.0; self.granularity * k];
        let mut out = Vec::with_capacity(self.granularity);
        for (w_row, t_row) in weights.chunks_mut(k).zip(self.powers.chunks(k)) {
            for (i, &ti) in t_row.iter().enumerate() {
                if ti == 0.0 {
                    continue;
                }
                let m_row = &masked[i * k..i * k + k];
                for j in 0..=i {
                    w_row[j] += ti * m_row[j];
                }
            }
            let p = w_row
                .iter()
                .zip(points)
                .fold(Point::ORIGIN, |acc, (&w, &q)| acc + q * w);
            out.push(p);
        }
        MaskedRender {
            mixed,
            weights,
            points: out,
        }
    }
}
