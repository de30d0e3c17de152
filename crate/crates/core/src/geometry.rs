//! Cubic Bezier geometry and ground-truth point generation.
//!
//! Coordinates are normalized to the padded input canvas. Every list of
//! points runs in text reading order.

use crate::error::{Error, Result};
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2<T = f64> {
    pub x: T,
    pub y: T,
}

impl<T: Float> Point2<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn midpoint(self, other: Self) -> Self {
        let half = T::from(0.5).unwrap();
        Self::new((self.x + other.x) * half, (self.y + other.y) * half)
    }

    pub fn lerp(self, other: Self, t: T) -> Self {
        self + (other - self) * t
    }

    pub fn dot(self, other: Self) -> T {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn distance(self, other: Self) -> T {
        (self - other).norm()
    }

    pub fn l1(self, other: Self) -> T {
        (self.x - other.x).abs() + (self.y - other.y).abs()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl<T: Float> Add for Point2<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl<T: Float> Sub for Point2<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl<T: Float> Mul<T> for Point2<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s)
    }
}

/// Cubic Bezier with control points ordered along the reading direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicBezier<T = f64> {
    pub points: [Point2<T>; 4],
}

/// Cubic Bernstein weights `C(3,j) t^j (1-t)^(3-j)`.
pub fn bernstein<T: Float>(t: T) -> [T; 4] {
    let one = T::one();
    let three = T::from(3.0).unwrap();
    let s = one - t;
    [s * s * s, three * t * s * s, three * t * t * s, t * t * t]
}

impl<T: Float> CubicBezier<T> {
    pub fn new(p0: Point2<T>, p1: Point2<T>, p2: Point2<T>, p3: Point2<T>) -> Self {
        Self { points: [p0, p1, p2, p3] }
    }

    /// Straight segment with evenly spaced interior control points.
    pub fn line(a: Point2<T>, b: Point2<T>) -> Self {
        let third = T::one() / T::from(3.0).unwrap();
        Self::new(a, a.lerp(b, third), a.lerp(b, third + third), b)
    }

    /// Evaluation without the domain check.
    pub fn at(&self, t: T) -> Point2<T> {
        let w = bernstein(t);
        let p = &self.points;
        Point2::new(
            w[0] * p[0].x + w[1] * p[1].x + w[2] * p[2].x + w[3] * p[3].x,
            w[0] * p[0].y + w[1] * p[1].y + w[2] * p[2].y + w[3] * p[3].y,
        )
    }

    pub fn derivative(&self, t: T) -> Point2<T> {
        let p = &self.points;
        let three = T::from(3.0).unwrap();
        let two = T::from(2.0).unwrap();
        let s = T::one() - t;
        (p[1] - p[0]) * (three * s * s) + (p[2] - p[1]) * (two * three * s * t) + (p[3] - p[2]) * (three * t * t)
    }

    pub fn second_derivative(&self, t: T) -> Point2<T> {
        let p = &self.points;
        let six = T::from(6.0).unwrap();
        let s = T::one() - t;
        (p[2] - p[1] * T::from(2.0).unwrap() + p[0]) * (six * s) + (p[3] - p[2] * T::from(2.0).unwrap() + p[1]) * (six * t)
    }

    pub fn reversed(&self) -> Self {
        let p = self.points;
        Self::new(p[3], p[2], p[1], p[0])
    }

    pub fn map(&self, f: impl Fn(Point2<T>) -> Point2<T>) -> Self {
        let p = self.points;
        Self::new(f(p[0]), f(p[1]), f(p[2]), f(p[3]))
    }
}

pub fn bezier_eval<T: Float>(curve: &CubicBezier<T>, t: T) -> Result<Point2<T>> {
    if !(t >= T::zero() && t <= T::one()) {
        return Err(Error::Domain(format!(
            "Bezier parameter must lie in [0, 1], got {}",
            t.to_f64().unwrap_or(f64::NAN)
        )));
    }
    Ok(curve.at(t))
}

/// `n` points at parameters `i / (n - 1)`.
pub fn sample_uniform<T: Float>(curve: &CubicBezier<T>, n: usize) -> Result<Vec<Point2<T>>> {
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 samples, got {n}")));
    }
    let denom = T::from(n - 1).unwrap();
    Ok((0..n).map(|i| curve.at(T::from(i).unwrap() / denom)).collect())
}

/// Control-point-wise mean of the two side curves.
pub fn center_curve_from_sides<T: Float>(top: &CubicBezier<T>, bot: &CubicBezier<T>) -> CubicBezier<T> {
    let (a, b) = (top.points, bot.points);
    CubicBezier::new(a[0].midpoint(b[0]), a[1].midpoint(b[1]), a[2].midpoint(b[2]), a[3].midpoint(b[3]))
}

/// Least-squares cubic through an ordered polyline with pinned endpoints.
///
/// Interior points start at chord-length parameters and the two free control
/// points are solved in closed form; a damped Gauss-Newton pass then refines
/// control points and interior parameters jointly. Uniform and centripetal
/// starts are also tried and the lowest residual wins. Two or three points give a
/// straight segment.
pub fn fit_bezier_to_polyline<T: Float>(points: &[Point2<T>]) -> Result<CubicBezier<T>> {
    if points.len() < 2 {
        return Err(Error::Domain(format!("need at least 2 points to fit a curve, got {}", points.len())));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::Domain("polyline has non-finite coordinates".into()));
    }
    let first = points[0];
    let last = *points.last().unwrap();
    if points.len() < 4 {
        return Ok(CubicBezier::line(first, last));
    }
    // the refinement has local minima, so start from several parameterizations
    let half = T::from(0.5).unwrap();
    let mut best: Option<(CubicBezier<T>, T)> = None;
    for exponent in [T::one(), T::zero(), half] {
        let params = chord_parameters(points, exponent);
        let Some(curve) = solve_interior(points, &params) else {
            continue;
        };
        let (curve, sse) = refine_fit(points, curve, params);
        if best.map_or(true, |(_, b)| sse < b) {
            best = Some((curve, sse));
        }
    }
    Ok(best.map_or_else(|| CubicBezier::line(first, last), |(c, _)| c))
}

/// Cumulative `|Δp|^exponent` normalized to [0, 1]: 1 is chord length,
/// 0 is uniform, 1/2 is centripetal.
fn chord_parameters<T: Float>(points: &[Point2<T>], exponent: T) -> Vec<T> {
    let mut acc = vec![T::zero()];
    for w in points.windows(2) {
        let d = *acc.last().unwrap() + w[0].distance(w[1]).powf(exponent);
        acc.push(d);
    }
    let total = *acc.last().unwrap();
    let n = points.len();
    if total <= T::epsilon() {
        return (0..n).map(|i| T::from(i).unwrap() / T::from(n - 1).unwrap()).collect();
    }
    acc.iter().map(|&d| d / total).collect()
}

/// Solves the 2×2 normal equations for the free control points `p1`, `p2`.
fn solve_interior<T: Float>(points: &[Point2<T>], params: &[T]) -> Option<CubicBezier<T>> {
    let p0 = points[0];
    let p3 = *points.last().unwrap();
    let (mut a11, mut a12, mut a22) = (T::zero(), T::zero(), T::zero());
    let (mut r1, mut r2) = (Point2::new(T::zero(), T::zero()), Point2::new(T::zero(), T::zero()));
    for (&t, &q) in params.iter().zip(points) {
        let w = bernstein(t);
        let rest = q - p0 * w[0] - p3 * w[3];
        a11 = a11 + w[1] * w[1];
        a12 = a12 + w[1] * w[2];
        a22 = a22 + w[2] * w[2];
        r1 = r1 + rest * w[1];
        r2 = r2 + rest * w[2];
    }
    let det = a11 * a22 - a12 * a12;
    if det.abs() <= T::from(1e-12).unwrap() * (a11 * a22).max(T::min_positive_value()) {
        return None;
    }
    let p1 = (r1 * a22 - r2 * a12) * (T::one() / det);
    let p2 = (r2 * a11 - r1 * a12) * (T::one() / det);
    Some(CubicBezier::new(p0, p1, p2, p3))
}

fn sum_sq_residual<T: Float>(curve: &CubicBezier<T>, points: &[Point2<T>], params: &[T]) -> T {
    params.iter().zip(points).fold(T::zero(), |acc, (&t, &q)| {
        let d = curve.at(t) - q;
        acc + d.dot(d)
    })
}

/// Levenberg-Marquardt over `(p1, p2, t_1 .. t_{n-2})`.
///
/// Each interior parameter couples only to its own residual, so the normal
/// equations are reduced to a 4×4 system in the control points.
fn refine_fit<T: Float>(points: &[Point2<T>], mut curve: CubicBezier<T>, mut params: Vec<T>) -> (CubicBezier<T>, T) {
    let n = points.len();
    let mut sse = sum_sq_residual(&curve, points, &params);
    let scale = points.iter().fold(T::zero(), |m, p| m.max(p.x.abs()).max(p.y.abs())).max(T::one());
    let target = (T::from(1e-14).unwrap() * scale).powi(2);
    let mut damping = T::from(1e-3).unwrap();
    let ten = T::from(10.0).unwrap();
    for _ in 0..20_000 {
        if sse <= target {
            break;
        }
        // per-point Jacobian rows: residual (x, y) w.r.t. p1 (2), p2 (2), t_i
        let mut a = [[T::zero(); 4]; 4];
        let mut g = [T::zero(); 4];
        let mut couple = vec![[T::zero(); 4]; n];
        let mut dt = vec![T::zero(); n];
        let mut gt = vec![T::zero(); n];
        for i in 0..n {
            let w = bernstein(params[i]);
            let r = curve.at(params[i]) - points[i];
            let jp = [[w[1], T::zero(), w[2], T::zero()], [T::zero(), w[1], T::zero(), w[2]]];
            let res = [r.x, r.y];
            for c in 0..2 {
                for u in 0..4 {
                    g[u] = g[u] + jp[c][u] * res[c];
                    for v in 0..4 {
                        a[u][v] = a[u][v] + jp[c][u] * jp[c][v];
                    }
                }
            }
            if i > 0 && i + 1 < n {
                let d = curve.derivative(params[i]);
                let jt = [d.x, d.y];
                for c in 0..2 {
                    dt[i] = dt[i] + jt[c] * jt[c];
                    gt[i] = gt[i] + jt[c] * res[c];
                    for u in 0..4 {
                        couple[i][u] = couple[i][u] + jp[c][u] * jt[c];
                    }
                }
            }
        }
        let tiny = T::from(1e-30).unwrap();
        let mut improved = false;
        for _ in 0..30 {
            let mut m = [[T::zero(); 4]; 4];
            let mut rhs = [T::zero(); 4];
            for u in 0..4 {
                m[u] = a[u];
                m[u][u] = a[u][u] * (T::one() + damping) + tiny;
                rhs[u] = -g[u];
            }
            let inv: Vec<T> = dt.iter().map(|&d| T::one() / (d * (T::one() + damping) + tiny)).collect();
            for i in 1..n - 1 {
                for u in 0..4 {
                    rhs[u] = rhs[u] + couple[i][u] * inv[i] * gt[i];
                    for v in 0..4 {
                        m[u][v] = m[u][v] - couple[i][u] * inv[i] * couple[i][v];
                    }
                }
            }
            let flat: Vec<T> = m.iter().flatten().copied().collect();
            let Some(dp) = solve_dense(flat, rhs.to_vec(), 4) else {
                damping = damping * ten;
                continue;
            };
            let p = curve.points;
            let cand = CubicBezier::new(
                p[0],
                Point2::new(p[1].x + dp[0], p[1].y + dp[1]),
                Point2::new(p[2].x + dp[2], p[2].y + dp[3]),
                p[3],
            );
            let mut cand_params = params.clone();
            for i in 1..n - 1 {
                let cross = (0..4).fold(T::zero(), |acc, u| acc + couple[i][u] * dp[u]);
                let step = -(gt[i] + cross) * inv[i];
                cand_params[i] = (params[i] + step).max(T::zero()).min(T::one());
            }
            let cand_sse = sum_sq_residual(&cand, points, &cand_params);
            if cand_sse < sse {
                curve = cand;
                params = cand_params;
                sse = cand_sse;
                damping = (damping * T::from(0.1).unwrap()).max(T::from(1e-12).unwrap());
                improved = true;
                break;
            }
            damping = damping * ten;
        }
        if !improved {
            break;
        }
    }
    (curve, sse)
}

/// Gaussian elimination with partial pivoting on a row-major `dim × dim` system.
fn solve_dense<T: Float>(mut m: Vec<T>, mut rhs: Vec<T>, dim: usize) -> Option<Vec<T>> {
    for col in 0..dim {
        let pivot = (col..dim).max_by(|&a, &b| m[a * dim + col].abs().partial_cmp(&m[b * dim + col].abs()).unwrap())?;
        if m[pivot * dim + col].abs() <= T::min_positive_value() {
            return None;
        }
        if pivot != col {
            for k in 0..dim {
                m.swap(pivot * dim + k, col * dim + k);
            }
            rhs.swap(pivot, col);
        }
        let diag = m[col * dim + col];
        for row in col + 1..dim {
            let f = m[row * dim + col] / diag;
            if f == T::zero() {
                continue;
            }
            for k in col..dim {
                m[row * dim + k] = m[row * dim + k] - f * m[col * dim + k];
            }
            rhs[row] = rhs[row] - f * rhs[col];
        }
    }
    let mut x = vec![T::zero(); dim];
    for row in (0..dim).rev() {
        let mut acc = rhs[row];
        for k in row + 1..dim {
            acc = acc - m[row * dim + k] * x[k];
        }
        x[row] = acc / m[row * dim + row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Ground truth for one text instance: `N` points on the center curve and,
/// when the annotation carries them, on the top and bottom sides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextInstanceGT {
    pub center: Vec<Point2>,
    pub top: Option<Vec<Point2>>,
    pub bot: Option<Vec<Point2>>,
    pub transcript: String,
}

impl TextInstanceGT {
    pub fn num_points(&self) -> usize {
        self.center.len()
    }

    pub fn has_boundary(&self) -> bool {
        self.top.is_some() && self.bot.is_some()
    }

    /// Boundary polygon (top forward, bottom reversed), when available.
    pub fn polygon(&self) -> Option<Vec<Point2>> {
        match (&self.top, &self.bot) {
            (Some(t), Some(b)) => polygon_from_boundary(t, b).ok(),
            _ => None,
        }
    }

    /// Checks equal point counts and finiteness.
    pub fn validate(&self) -> Result<()> {
        let n = self.center.len();
        if n < 2 {
            return Err(Error::InvalidAnnotation(format!("instance has {n} center points")));
        }
        for side in [&self.top, &self.bot].into_iter().flatten() {
            if side.len() != n {
                return Err(Error::InvalidAnnotation(format!("boundary has {} points, center has {n}", side.len())));
            }
        }
        if self.top.is_some() != self.bot.is_some() {
            return Err(Error::InvalidAnnotation("only one boundary side present".into()));
        }
        let all = self.center.iter().chain(self.top.iter().flatten()).chain(self.bot.iter().flatten());
        if all.into_iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidAnnotation("non-finite coordinate".into()));
        }
        Ok(())
    }

    pub fn map_points(&self, f: impl Fn(Point2) -> Point2) -> Self {
        Self {
            center: self.center.iter().map(|&p| f(p)).collect(),
            top: self.top.as_ref().map(|v| v.iter().map(|&p| f(p)).collect()),
            bot: self.bot.as_ref().map(|v| v.iter().map(|&p| f(p)).collect()),
            transcript: self.transcript.clone(),
        }
    }

    /// Same instance without boundary points (line-annotation form).
    pub fn without_boundary(&self) -> Self {
        Self {
            top: None,
            bot: None,
            ..self.clone()
        }
    }
}

/// Splits a `2k`-vertex polygon into top (`0..k`, reading order) and bottom
/// (`k..2k`, reversed) sides.
pub fn split_polygon(polygon: &[Point2]) -> Result<(Vec<Point2>, Vec<Point2>)> {
    if polygon.len() < 4 || polygon.len() % 2 != 0 {
        return Err(Error::InvalidAnnotation(format!(
            "polygon needs an even vertex count of at least 4, got {}",
            polygon.len()
        )));
    }
    let k = polygon.len() / 2;
    let top = polygon[..k].to_vec();
    let bot: Vec<Point2> = polygon[k..].iter().rev().copied().collect();
    let dt = top[k - 1] - top[0];
    let db = bot[k - 1] - bot[0];
    if dt.dot(db) <= 0.0 {
        return Err(Error::InvalidAnnotation(
            "top and bottom sides run in opposite directions; expected top in reading order followed by bottom reversed".into(),
        ));
    }
    Ok((top, bot))
}

/// Ground truth from the two fitted side curves of a text polygon.
pub fn gt_from_sides(top: &CubicBezier, bot: &CubicBezier, transcript: &str, n: usize) -> Result<TextInstanceGT> {
    let center = center_curve_from_sides(top, bot);
    let gt = TextInstanceGT {
        center: sample_uniform(&center, n)?,
        top: Some(sample_uniform(top, n)?),
        bot: Some(sample_uniform(bot, n)?),
        transcript: transcript.to_string(),
    };
    gt.validate()?;
    Ok(gt)
}

pub fn gt_from_polygon(polygon: &[Point2], transcript: &str, n: usize) -> Result<TextInstanceGT> {
    let (top, bot) = split_polygon(polygon)?;
    let top = fit_bezier_to_polyline(&top)?;
    let bot = fit_bezier_to_polyline(&bot)?;
    gt_from_sides(&top, &bot, transcript, n)
}

pub fn gt_from_line(line: &[Point2], transcript: &str, n: usize) -> Result<TextInstanceGT> {
    if line.len() < 2 {
        return Err(Error::InvalidAnnotation(format!("line annotation needs at least 2 points, got {}", line.len())));
    }
    let curve = fit_bezier_to_polyline(line)?;
    let gt = TextInstanceGT {
        center: sample_uniform(&curve, n)?,
        top: None,
        bot: None,
        transcript: transcript.to_string(),
    };
    gt.validate()?;
    Ok(gt)
}

/// Simulated line-annotation error.
///
/// Every center point moves toward one randomly chosen side by
/// `shift_fraction` of the local half-height; then the line contracts toward
/// its middle sample, each point moving `shrink_fraction` of its (index-uniform)
/// distance along the polyline. `shrink_fraction = 1` collapses the line onto the
/// `t = 0.5` sample.
pub fn perturb_line<R: Rng>(gt: &TextInstanceGT, shift_fraction: f64, shrink_fraction: f64, rng: &mut R) -> Result<Vec<Point2>> {
    for (name, v) in [("shift", shift_fraction), ("shrink", shrink_fraction)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!("{name} fraction must lie in [0, 1], got {v}")));
        }
    }
    let n = gt.center.len();
    // drawn unconditionally so the stream position does not depend on the levels
    let to_top = rng.gen_bool(0.5);
    let shifted: Vec<Point2> = if shift_fraction == 0.0 {
        gt.center.clone()
    } else {
        let side = match (to_top, &gt.top, &gt.bot) {
            (true, Some(t), _) => t,
            (false, _, Some(b)) => b,
            _ => return Err(Error::InvalidAnnotation("shifting a line needs boundary points".into())),
        };
        gt.center.iter().zip(side).map(|(&c, &s)| c.lerp(s, shift_fraction)).collect()
    };
    if shrink_fraction == 0.0 || n < 2 {
        return Ok(shifted);
    }
    let mid = (n - 1) as f64 / 2.0;
    Ok((0..n)
        .map(|i| {
            let u = mid + (i as f64 - mid) * (1.0 - shrink_fraction);
            let lo = (u.floor() as usize).min(n - 1);
            let hi = (lo + 1).min(n - 1);
            shifted[lo].lerp(shifted[hi], u - lo as f64)
        })
        .collect())
}

/// Top points in order followed by bottom points reversed.
pub fn polygon_from_boundary(top: &[Point2], bot: &[Point2]) -> Result<Vec<Point2>> {
    if top.len() != bot.len() || top.is_empty() {
        return Err(Error::Domain(format!("boundary sides have {} and {} points", top.len(), bot.len())));
    }
    Ok(top.iter().copied().chain(bot.iter().rev().copied()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p(x: f64, y: f64) -> Point2 {
        Point2::new(x, y)
    }

    fn arch() -> CubicBezier {
        CubicBezier::new(p(0.0, 0.0), p(0.0, 1.0), p(1.0, 1.0), p(1.0, 0.0))
    }

    fn near(a: Point2, b: Point2, tol: f64) -> bool {
        (a.x - b.x).abs() <= tol && (a.y - b.y).abs() <= tol
    }

    fn shoelace(poly: &[Point2]) -> f64 {
        let n = poly.len();
        (0..n).map(|i| poly[i].x * poly[(i + 1) % n].y - poly[(i + 1) % n].x * poly[i].y).sum::<f64>() / 2.0
    }

    /// Andrew monotone chain; used only to check the convex-hull property.
    fn hull(points: &[Point2]) -> Vec<Point2> {
        let mut pts = points.to_vec();
        pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
        let cross = |o: Point2, a: Point2, b: Point2| (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
        let mut lower: Vec<Point2> = Vec::new();
        for &q in &pts {
            while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], q) <= 0.0 {
                lower.pop();
            }
            lower.push(q);
        }
        let mut upper: Vec<Point2> = Vec::new();
        for &q in pts.iter().rev() {
            while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], q) <= 0.0 {
                upper.pop();
            }
            upper.push(q);
        }
        lower.pop();
        upper.pop();
        lower.extend(upper);
        lower
    }

    fn inside_hull(h: &[Point2], q: Point2, tol: f64) -> bool {
        if h.len() < 3 {
            // degenerate hull: distance to segment
            let (a, b) = (h[0], *h.last().unwrap());
            let ab = b - a;
            let t = if ab.dot(ab) > 0.0 { ((q - a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0) } else { 0.0 };
            return (a + ab * t).distance(q) <= tol;
        }
        (0..h.len()).all(|i| {
            let (a, b) = (h[i], h[(i + 1) % h.len()]);
            (b.x - a.x) * (q.y - a.y) - (b.y - a.y) * (q.x - a.x) >= -tol
        })
    }

    #[test]
    fn eval_examples() {
        let c = arch();
        assert_eq!(bezier_eval(&c, 0.0).unwrap(), c.points[0]);
        let line = CubicBezier::new(p(0.0, 0.0), p(1.0 / 3.0, 0.0), p(2.0 / 3.0, 0.0), p(1.0, 0.0));
        assert!(near(bezier_eval(&line, 0.25).unwrap(), p(0.25, 0.0), 1e-15));
        // weights 1/8, 3/8, 3/8, 1/8
        assert!(near(bezier_eval(&c, 0.5).unwrap(), p(0.5, 0.75), 1e-15));
        assert!(bezier_eval(&c, 1.5).is_err());
        assert!(bezier_eval(&c, -0.1).is_err());
        assert!(bezier_eval(&c, f64::NAN).is_err());
    }

    #[test]
    fn sampling_examples() {
        let line = CubicBezier::new(p(0.0, 0.0), p(1.0 / 3.0, 0.0), p(2.0 / 3.0, 0.0), p(1.0, 0.0));
        let s = sample_uniform(&line, 3).unwrap();
        assert!(near(s[1], p(0.5, 0.0), 1e-15));
        assert_eq!(s[0], p(0.0, 0.0));
        assert_eq!(s[2], p(1.0, 0.0));
        let c = arch();
        assert_eq!(sample_uniform(&c, 2).unwrap(), vec![c.points[0], c.points[3]]);
        assert!(near(sample_uniform(&c, 5).unwrap()[2], p(0.5, 0.75), 1e-15));
        assert!(sample_uniform(&c, 1).is_err());
    }

    #[test]
    fn center_curve_examples() {
        let top = CubicBezier::new(p(0.0, 0.0), p(0.3, 0.1), p(0.6, 0.1), p(1.0, 0.0));
        let bot = CubicBezier::new(p(0.0, 0.2), p(0.3, 0.3), p(0.6, 0.3), p(1.0, 0.2));
        let c = center_curve_from_sides(&top, &bot);
        let want = [p(0.0, 0.1), p(0.3, 0.2), p(0.6, 0.2), p(1.0, 0.1)];
        for (a, b) in c.points.iter().zip(want) {
            assert!(near(*a, b, 1e-15));
        }
        assert_eq!(center_curve_from_sides(&top, &top), top);
    }

    #[test]
    fn fit_examples() {
        let pts: Vec<Point2> = (0..8).map(|i| p(i as f64 / 7.0, 0.0)).collect();
        let c = fit_bezier_to_polyline(&pts).unwrap();
        let want = [p(0.0, 0.0), p(1.0 / 3.0, 0.0), p(2.0 / 3.0, 0.0), p(1.0, 0.0)];
        for (a, b) in c.points.iter().zip(want) {
            assert!(near(*a, b, 1e-9), "{a:?} vs {b:?}");
        }
        let (a, b) = (p(0.1, 0.2), p(0.7, 0.5));
        let c = fit_bezier_to_polyline(&[a, b]).unwrap();
        assert_eq!(c, CubicBezier::line(a, b));
        let c3 = fit_bezier_to_polyline(&[a, p(0.4, 0.9), b]).unwrap();
        assert_eq!(c3, CubicBezier::line(a, b));
        assert!(fit_bezier_to_polyline(&[a]).is_err());
        // a collapsed polyline fits a collapsed curve
        let c = fit_bezier_to_polyline(&[a; 6]).unwrap();
        assert!(c.points.iter().all(|q| near(*q, a, 1e-12)));
    }

    #[test]
    fn fit_round_trip_on_known_cubic() {
        let truth = CubicBezier::new(p(0.1, 0.3), p(0.3, 0.05), p(0.65, 0.6), p(0.9, 0.35));
        let samples = sample_uniform(&truth, 10).unwrap();
        let fitted = fit_bezier_to_polyline(&samples).unwrap();
        let back = sample_uniform(&fitted, 10).unwrap();
        let dev = samples.iter().zip(&back).map(|(a, b)| a.distance(*b)).fold(0.0, f64::max);
        assert!(dev < 1e-6, "max deviation {dev}");
    }

    #[test]
    fn rectangle_polygon_gt() {
        let rect = [p(0.0, 0.0), p(1.0, 0.0), p(1.0, 0.2), p(0.0, 0.2)];
        let gt = gt_from_polygon(&rect, "ab", 5).unwrap();
        for (i, c) in gt.center.iter().enumerate() {
            assert!(near(*c, p(i as f64 / 4.0, 0.1), 1e-12), "{c:?}");
        }
        let gt = gt_from_polygon(&rect, "ab", 25).unwrap();
        assert_eq!(gt.center.len(), 25);
        assert!(gt.center.iter().all(|c| (c.y - 0.1).abs() < 1e-12));
        assert_eq!(gt.transcript, "ab");
    }

    #[test]
    fn polygon_errors() {
        let odd = [p(0.0, 0.0), p(1.0, 0.0), p(1.0, 0.2)];
        assert!(matches!(gt_from_polygon(&odd, "a", 5), Err(Error::InvalidAnnotation(_))));
        // bottom listed in reading order instead of reversed
        let bad = [p(0.0, 0.0), p(1.0, 0.0), p(0.0, 0.2), p(1.0, 0.2)];
        assert!(matches!(gt_from_polygon(&bad, "a", 5), Err(Error::InvalidAnnotation(_))));
    }

    #[test]
    fn curved_polygon_center_is_side_mean() {
        let top: Vec<Point2> = (0..4).map(|i| {
            let t = i as f64 / 3.0;
            p(0.1 + 0.8 * t, 0.4 - 0.15 * (std::f64::consts::PI * t).sin())
        }).collect();
        let bot: Vec<Point2> = top.iter().map(|q| p(q.x, q.y + 0.12)).collect();
        let poly = polygon_from_boundary(&top, &bot).unwrap();
        let gt = gt_from_polygon(&poly, "abc", 13).unwrap();
        let (t, b) = (gt.top.as_ref().unwrap(), gt.bot.as_ref().unwrap());
        for i in 0..13 {
            assert!(near(gt.center[i], t[i].midpoint(b[i]), 1e-9));
        }
    }

    #[test]
    fn reading_direction_reversal_reverses_center() {
        let top = [p(0.1, 0.3), p(0.35, 0.2), p(0.6, 0.22), p(0.85, 0.35)];
        let bot = [p(0.1, 0.42), p(0.35, 0.31), p(0.6, 0.33), p(0.85, 0.47)];
        let poly = polygon_from_boundary(&top, &bot).unwrap();
        // reading from the other end: bottom side becomes the top side
        let k = poly.len() / 2;
        let rotated: Vec<Point2> = poly[k..].iter().chain(&poly[..k]).copied().collect();
        let a = gt_from_polygon(&poly, "ab", 9).unwrap();
        let b = gt_from_polygon(&rotated, "ab", 9).unwrap();
        for (x, y) in a.center.iter().zip(b.center.iter().rev()) {
            assert!(near(*x, *y, 1e-12));
        }
    }

    #[test]
    fn line_gt_examples() {
        let gt = gt_from_line(&[p(0.1, 0.5), p(0.9, 0.5)], "ab", 5).unwrap();
        assert!(gt.top.is_none() && gt.bot.is_none());
        for (i, c) in gt.center.iter().enumerate() {
            assert!(near(*c, p(0.1 + 0.2 * i as f64, 0.5), 1e-12));
        }
        assert!(matches!(gt_from_line(&[p(0.1, 0.5)], "a", 5), Err(Error::InvalidAnnotation(_))));

        let top = [p(0.1, 0.3), p(0.35, 0.2), p(0.6, 0.22), p(0.85, 0.35)];
        let bot = [p(0.1, 0.42), p(0.35, 0.31), p(0.6, 0.33), p(0.85, 0.47)];
        let full = gt_from_polygon(&polygon_from_boundary(&top, &bot).unwrap(), "ab", 13).unwrap();
        let line = gt_from_line(&full.center, "ab", 13).unwrap();
        for (a, b) in full.center.iter().zip(&line.center) {
            assert!(a.distance(*b) < 1e-3);
        }
    }

    #[test]
    fn perturbation_examples() {
        let rect = [p(0.0, 0.4), p(1.0, 0.4), p(1.0, 0.6), p(0.0, 0.6)];
        let gt = gt_from_polygon(&rect, "ab", 13).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(perturb_line(&gt, 0.0, 0.0, &mut rng).unwrap(), gt.center);
        for seed in 0..6 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = perturb_line(&gt, 1.0, 0.0, &mut rng).unwrap();
            let on_top = l.iter().all(|q| (q.y - 0.4).abs() < 1e-12);
            let on_bot = l.iter().all(|q| (q.y - 0.6).abs() < 1e-12);
            assert!(on_top || on_bot);
        }
        let l = perturb_line(&gt, 0.0, 1.0, &mut rng).unwrap();
        assert!(l.iter().all(|q| near(*q, gt.center[6], 1e-12)));
        assert!(perturb_line(&gt, 1.5, 0.0, &mut rng).is_err());
        assert!(perturb_line(&gt, 0.0, -0.1, &mut rng).is_err());
        assert!(perturb_line(&gt.without_boundary(), 0.5, 0.0, &mut rng).is_err());
    }

    #[test]
    fn boundary_polygon_examples() {
        let poly = polygon_from_boundary(&[p(0.0, 0.0), p(1.0, 0.0)], &[p(0.0, 1.0), p(1.0, 1.0)]).unwrap();
        assert_eq!(poly, vec![p(0.0, 0.0), p(1.0, 0.0), p(1.0, 1.0), p(0.0, 1.0)]);
        let flat = polygon_from_boundary(&[p(0.0, 0.0), p(1.0, 0.0)], &[p(0.0, 0.0), p(1.0, 0.0)]).unwrap();
        assert_eq!(shoelace(&flat), 0.0);
        assert!(polygon_from_boundary(&[p(0.0, 0.0)], &[]).is_err());
    }

    #[test]
    fn boundary_polygon_area_matches_source() {
        let top: Vec<Point2> = (0..4).map(|i| {
            let t = i as f64 / 3.0;
            p(0.1 + 0.7 * t, 0.5 - 0.1 * (std::f64::consts::PI * t).sin())
        }).collect();
        let bot: Vec<Point2> = top.iter().map(|q| p(q.x, q.y + 0.1)).collect();
        let src = polygon_from_boundary(&top, &bot).unwrap();
        let gt = gt_from_polygon(&src, "abcd", 25).unwrap();
        let back = gt.polygon().unwrap();
        let (a, b) = (shoelace(&src).abs(), shoelace(&back).abs());
        assert!((a - b).abs() / a < 0.02, "{a} vs {b}");
    }

    fn arb_point() -> impl Strategy<Value = Point2> {
        (0.0..1.0f64, 0.0..1.0f64).prop_map(|(x, y)| p(x, y))
    }

    fn arb_curve() -> impl Strategy<Value = CubicBezier> {
        [arb_point(), arb_point(), arb_point(), arb_point()].prop_map(|[a, b, c, d]| CubicBezier::new(a, b, c, d))
    }

    proptest! {
        #[test]
        fn endpoints_are_exact(c in arb_curve()) {
            prop_assert_eq!(bezier_eval(&c, 0.0).unwrap(), c.points[0]);
            prop_assert_eq!(bezier_eval(&c, 1.0).unwrap(), c.points[3]);
        }

        #[test]
        fn samples_stay_in_control_hull(c in arb_curve(), n in 2usize..30) {
            let h = hull(&c.points);
            for q in sample_uniform(&c, n).unwrap() {
                prop_assert!(inside_hull(&h, q, 1e-12));
            }
        }

        #[test]
        fn center_sampling_commutes_with_mean(a in arb_curve(), b in arb_curve(), n in 2usize..30) {
            let c = sample_uniform(&center_curve_from_sides(&a, &b), n).unwrap();
            let (sa, sb) = (sample_uniform(&a, n).unwrap(), sample_uniform(&b, n).unwrap());
            for i in 0..n {
                prop_assert!(near(c[i], sa[i].midpoint(sb[i]), 1e-12));
            }
        }

        #[test]
        fn fit_recovers_gentle_cubics(
            x0 in 0.0..0.2f64, y0 in 0.3..0.7f64,
            x1 in 0.25..0.4f64, y1 in 0.2..0.8f64,
            x2 in 0.6..0.75f64, y2 in 0.2..0.8f64,
            x3 in 0.8..1.0f64, y3 in 0.3..0.7f64,
        ) {
            let truth = CubicBezier::new(p(x0, y0), p(x1, y1), p(x2, y2), p(x3, y3));
            let s = sample_uniform(&truth, 10).unwrap();
            let back = sample_uniform(&fit_bezier_to_polyline(&s).unwrap(), 10).unwrap();
            let dev = s.iter().zip(&back).map(|(a, b)| a.distance(*b)).fold(0.0, f64::max);
            prop_assert!(dev < 1e-6, "deviation {}", dev);
        }
    }
}
