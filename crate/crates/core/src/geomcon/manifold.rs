//! Polynomial principal-manifold fits.
//!
//! Curves are parameterized by the projection onto the first principal axis,
//! with each coordinate a polynomial of that parameter. Surfaces are height
//! fields over the best-fit plane. Model degree is chosen by leave-one-out
//! cross-validation (closed form through the hat matrix), preferring the
//! lowest degree within 5% of the best score.

use log::warn;
use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{principal_axes, rank, Point};

const DENSE_SAMPLES: usize = 256;
const NEWTON_STEPS: usize = 10;
const NEWTON_TOL: f64 = 1e-6;
const PARSIMONY: f64 = 1.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveModel {
    pub degree: usize,
    pub origin: Point,
    pub axis: Point,
    pub param_center: f64,
    pub param_half: f64,
    /// Vector coefficient of `u^j` at index `j`.
    pub coefficients: Vec<Point>,
    pub u_range: (f64, f64),
}

impl CurveModel {
    pub fn param_of(&self, p: &Point) -> f64 {
        ((p - self.origin).dot(&self.axis) - self.param_center) / self.param_half
    }

    pub fn eval(&self, u: f64) -> Point {
        self.coefficients
            .iter()
            .rev()
            .fold(Point::zeros(), |acc, c| acc * u + c)
    }

    pub fn deriv(&self, u: f64) -> Point {
        let mut acc = Point::zeros();
        for j in (1..self.coefficients.len()).rev() {
            acc = acc * u + self.coefficients[j] * j as f64;
        }
        acc
    }

    pub fn second_deriv(&self, u: f64) -> Point {
        let mut acc = Point::zeros();
        for j in (2..self.coefficients.len()).rev() {
            acc = acc * u + self.coefficients[j] * (j * (j - 1)) as f64;
        }
        acc
    }

    /// Nearest point on the fitted segment: dense sampling over the training
    /// parameter range followed by Newton refinement. Falls back to the dense
    /// minimum when Newton does not settle.
    pub fn nearest(&self, p: &Point) -> (f64, Point) {
        let (lo, hi) = self.u_range;
        let mut best_u = lo;
        let mut best_d = f64::INFINITY;
        for k in 0..DENSE_SAMPLES {
            let u = lo + (hi - lo) * k as f64 / (DENSE_SAMPLES - 1) as f64;
            let d = (self.eval(u) - p).norm_squared();
            if d < best_d {
                best_d = d;
                best_u = u;
            }
        }
        let mut u = best_u;
        let mut converged = false;
        for _ in 0..NEWTON_STEPS {
            let c = self.eval(u) - p;
            let d1 = self.deriv(u);
            let grad = c.dot(&d1);
            let hess = d1.norm_squared() + c.dot(&self.second_deriv(u));
            if hess <= 0.0 {
                break;
            }
            let next = (u - grad / hess).clamp(lo, hi);
            let step = (next - u).abs() * d1.norm();
            u = next;
            if step < NEWTON_TOL {
                converged = true;
                break;
            }
        }
        let refined = self.eval(u);
        if !converged || (refined - p).norm_squared() > best_d {
            if !converged {
                warn!("curve nearest-point refinement did not converge; using dense minimum");
            }
            if (refined - p).norm_squared() > best_d {
                return (best_u, self.eval(best_u));
            }
        }
        (u, refined)
    }

    pub fn distance(&self, p: &Point) -> f64 {
        (self.nearest(p).1 - p).norm()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveFit {
    pub model: CurveModel,
    /// RMS orthogonal distance of the samples to the fitted curve.
    pub residual: f64,
    /// Leave-one-out RMS prediction error of the selected degree.
    pub cv_error: f64,
}

/// Leave-one-out RMS error of a linear least-squares fit of the rows of `y`
/// on the design matrix `a`, via the hat-matrix identity.
fn loocv(a: &DMatrix<f64>, y: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let pinv = a.clone().pseudo_inverse(1e-12).ok()?;
    let coef = &pinv * y;
    let hat = a * &pinv;
    let fitted = a * &coef;
    let n = a.nrows();
    let mut sum = 0.0;
    for i in 0..n {
        let h = hat[(i, i)];
        if 1.0 - h < 1e-9 {
            return Some((coef, f64::INFINITY));
        }
        let r: f64 = (0..y.ncols())
            .map(|c| (y[(i, c)] - fitted[(i, c)]).powi(2))
            .sum::<f64>();
        sum += r / (1.0 - h).powi(2);
    }
    Some((coef, (sum / n as f64).sqrt()))
}

fn pick_degree(scores: &[(usize, f64)]) -> Option<usize> {
    let best = scores.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return scores.first().map(|s| s.0);
    }
    scores
        .iter()
        .find(|s| s.1 <= best * PARSIMONY + 1e-12)
        .map(|s| s.0)
}

pub fn fit_manifold_curve(points: &[Point], max_degree: usize) -> Result<CurveFit> {
    let n = points.len();
    if n < 3 {
        return Err(Error::Precondition(format!("curve fit needs >= 3 points, got {n}")));
    }
    let (mean, _, axes) = principal_axes(points);
    let mut axis: Point = axes.column(0).into_owned();
    let (imax, _) = axis.iamax_full();
    if axis[imax] < 0.0 {
        axis = -axis;
    }
    let ts: Vec<f64> = points.iter().map(|p| (p - mean).dot(&axis)).collect();
    let tmin = ts.iter().copied().fold(f64::INFINITY, f64::min);
    let tmax = ts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let half = 0.5 * (tmax - tmin);
    if half <= 1e-12 {
        return Err(Error::Degenerate("curve fit: all points coincide".into()));
    }
    let center = 0.5 * (tmax + tmin);
    let us: Vec<f64> = ts.iter().map(|t| (t - center) / half).collect();
    let y = DMatrix::from_fn(n, 3, |r, c| points[r][c]);

    let top = if n >= 5 { max_degree.min(n - 3).max(1) } else { 1 };
    let mut scores = Vec::new();
    let mut coefs = Vec::new();
    for d in 1..=top {
        let a = DMatrix::from_fn(n, d + 1, |r, c| us[r].powi(c as i32));
        if rank(&a, 1e-10) < d + 1 {
            if d == 1 {
                return Err(Error::Degenerate("curve fit: rank-deficient at degree 1".into()));
            }
            break;
        }
        let Some((coef, cv)) = loocv(&a, &y) else { break };
        scores.push((d, cv));
        coefs.push(coef);
    }
    let degree = pick_degree(&scores)
        .ok_or_else(|| Error::Degenerate("curve fit: no admissible degree".into()))?;
    let coef = &coefs[degree - 1];
    let model = CurveModel {
        degree,
        origin: mean,
        axis,
        param_center: center,
        param_half: half,
        coefficients: (0..=degree)
            .map(|j| Point::new(coef[(j, 0)], coef[(j, 1)], coef[(j, 2)]))
            .collect(),
        u_range: (-1.0, 1.0),
    };
    let residual = (points.iter().map(|p| model.distance(p).powi(2)).sum::<f64>() / n as f64).sqrt();
    Ok(CurveFit {
        model,
        residual,
        cv_error: scores[degree - 1].1,
    })
}

/// Monomial exponents `(a, b)` for `u^a v^b`, total degree `<= degree`.
fn monomials(degree: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for total in 0..=degree {
        for a in (0..=total).rev() {
            out.push((a, total - a));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceModel {
    pub degree: usize,
    pub origin: Point,
    /// Columns: in-plane axes e1, e2 and the plane normal.
    pub axes: Matrix3<f64>,
    pub scale: f64,
    /// Height coefficients in `monomials(degree)` order.
    pub coefficients: Vec<f64>,
    pub u_range: (f64, f64),
    pub v_range: (f64, f64),
}

impl SurfaceModel {
    pub fn normal(&self) -> Point {
        self.axes.column(2).into_owned()
    }

    fn height(&self, u: f64, v: f64) -> (f64, f64, f64) {
        let mut h = 0.0;
        let mut hu = 0.0;
        let mut hv = 0.0;
        for (&c, (a, b)) in self.coefficients.iter().zip(monomials(self.degree)) {
            h += c * u.powi(a as i32) * v.powi(b as i32);
            if a > 0 {
                hu += c * a as f64 * u.powi(a as i32 - 1) * v.powi(b as i32);
            }
            if b > 0 {
                hv += c * b as f64 * u.powi(a as i32) * v.powi(b as i32 - 1);
            }
        }
        (h, hu, hv)
    }

    pub fn eval(&self, u: f64, v: f64) -> Point {
        let (h, _, _) = self.height(u, v);
        self.origin
            + self.axes.column(0) * (u * self.scale)
            + self.axes.column(1) * (v * self.scale)
            + self.axes.column(2) * h
    }

    fn partials(&self, u: f64, v: f64) -> (Point, Point) {
        let (_, hu, hv) = self.height(u, v);
        let su = self.axes.column(0) * self.scale + self.axes.column(2) * hu;
        let sv = self.axes.column(1) * self.scale + self.axes.column(2) * hv;
        (su, sv)
    }

    pub fn uv_of(&self, p: &Point) -> (f64, f64) {
        let d = p - self.origin;
        (
            d.dot(&self.axes.column(0)) / self.scale,
            d.dot(&self.axes.column(1)) / self.scale,
        )
    }

    /// Nearest point on the fitted patch: 16x16 grid then Gauss-Newton.
    pub fn nearest(&self, p: &Point) -> ((f64, f64), Point) {
        let side = (DENSE_SAMPLES as f64).sqrt() as usize;
        let (u0, u1) = self.u_range;
        let (v0, v1) = self.v_range;
        let mut best = (u0, v0);
        let mut best_d = f64::INFINITY;
        for i in 0..side {
            for j in 0..side {
                let u = u0 + (u1 - u0) * i as f64 / (side - 1) as f64;
                let v = v0 + (v1 - v0) * j as f64 / (side - 1) as f64;
                let d = (self.eval(u, v) - p).norm_squared();
                if d < best_d {
                    best_d = d;
                    best = (u, v);
                }
            }
        }
        let (mut u, mut v) = best;
        let mut converged = false;
        for _ in 0..NEWTON_STEPS {
            let r = self.eval(u, v) - p;
            let (su, sv) = self.partials(u, v);
            let a11 = su.dot(&su);
            let a12 = su.dot(&sv);
            let a22 = sv.dot(&sv);
            let g1 = su.dot(&r);
            let g2 = sv.dot(&r);
            let det = a11 * a22 - a12 * a12;
            if det.abs() < 1e-300 {
                break;
            }
            let du = (a22 * g1 - a12 * g2) / det;
            let dv = (a11 * g2 - a12 * g1) / det;
            let nu = (u - du).clamp(u0, u1);
            let nv = (v - dv).clamp(v0, v1);
            let step = ((nu - u).powi(2) + (nv - v).powi(2)).sqrt() * self.scale;
            u = nu;
            v = nv;
            if step < NEWTON_TOL {
                converged = true;
                break;
            }
        }
        let refined = self.eval(u, v);
        if (refined - p).norm_squared() > best_d {
            if !converged {
                warn!("surface nearest-point refinement did not converge; using dense minimum");
            }
            return (best, self.eval(best.0, best.1));
        }
        ((u, v), refined)
    }

    pub fn distance(&self, p: &Point) -> f64 {
        (self.nearest(p).1 - p).norm()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceFit {
    pub model: SurfaceModel,
    pub residual: f64,
    pub cv_error: f64,
}

pub fn fit_manifold_surface(points: &[Point], max_degree: usize) -> Result<SurfaceFit> {
    let n = points.len();
    if n < 6 {
        return Err(Error::Precondition(format!("surface fit needs >= 6 points, got {n}")));
    }
    let (mean, values, mut axes) = principal_axes(points);
    if values[0] <= 0.0 || values[1] < 1e-12 * values[0] {
        return Err(Error::Degenerate("surface fit: points are collinear".into()));
    }
    // right-handed basis
    let e3 = axes.column(0).cross(&axes.column(1));
    axes.set_column(2, &e3);
    let raw: Vec<(f64, f64, f64)> = points
        .iter()
        .map(|p| {
            let d = p - mean;
            (d.dot(&axes.column(0)), d.dot(&axes.column(1)), d.dot(&axes.column(2)))
        })
        .collect();
    let scale = raw
        .iter()
        .map(|(a, b, _)| a.abs().max(b.abs()))
        .fold(0.0, f64::max)
        .max(1e-12);
    let uvh: Vec<(f64, f64, f64)> = raw.iter().map(|(a, b, h)| (a / scale, b / scale, *h)).collect();
    let y = DMatrix::from_fn(n, 1, |r, _| uvh[r].2);

    let mut scores = Vec::new();
    let mut coefs = Vec::new();
    for d in 1..=max_degree.max(1) {
        let mons = monomials(d);
        if d > 1 && mons.len() + 2 > n {
            break;
        }
        let a = DMatrix::from_fn(n, mons.len(), |r, c| {
            let (u, v, _) = uvh[r];
            u.powi(mons[c].0 as i32) * v.powi(mons[c].1 as i32)
        });
        if rank(&a, 1e-10) < mons.len() {
            break;
        }
        let Some((coef, cv)) = loocv(&a, &y) else { break };
        scores.push((d, cv));
        coefs.push(coef);
    }
    let degree = pick_degree(&scores)
        .ok_or_else(|| Error::Degenerate("surface fit: no admissible degree".into()))?;
    let coef = &coefs[degree - 1];
    let range = |f: fn(&(f64, f64, f64)) -> f64| {
        let lo = uvh.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = uvh.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    let model = SurfaceModel {
        degree,
        origin: mean,
        axes,
        scale,
        coefficients: coef.iter().copied().collect(),
        u_range: range(|x| x.0),
        v_range: range(|x| x.1),
    };
    let residual = (points.iter().map(|p| model.distance(p).powi(2)).sum::<f64>() / n as f64).sqrt();
    Ok(SurfaceFit {
        model,
        residual,
        cv_error: scores[degree - 1].1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_points_select_degree_one() {
        let pts: Vec<Point> = (0..12).map(|i| Point::new(0.1, 0.2, 0.3) + Point::new(1.0, -2.0, 0.5) * (i as f64 * 0.01)).collect();
        let fit = fit_manifold_curve(&pts, 4).unwrap();
        assert_eq!(fit.model.degree, 1);
        assert!(fit.residual < 1e-9);
    }

    #[test]
    fn parabola_selects_degree_two() {
        let pts: Vec<Point> = (0..15)
            .map(|i| {
                let x = -0.1 + i as f64 * 0.2 / 14.0;
                Point::new(x, 5.0 * x * x, 0.0)
            })
            .collect();
        let fit = fit_manifold_curve(&pts, 4).unwrap();
        assert_eq!(fit.model.degree, 2);
        assert!(fit.residual < 1e-9);
    }

    #[test]
    fn three_points_force_degree_one() {
        let pts = vec![Point::new(0.0, 0.0, 0.0), Point::new(1.0, 0.5, 0.0), Point::new(2.0, 0.0, 0.0)];
        assert_eq!(fit_manifold_curve(&pts, 4).unwrap().model.degree, 1);
    }

    #[test]
    fn coincident_points_are_degenerate() {
        let pts = vec![Point::new(1.0, 1.0, 1.0); 5];
        assert!(fit_manifold_curve(&pts, 3).is_err());
    }

    #[test]
    fn coplanar_points_fit_flat_surface() {
        let pts: Vec<Point> = (0..25)
            .map(|i| Point::new((i % 5) as f64 * 0.02, (i / 5) as f64 * 0.03, 0.5 + 0.1 * (i % 5) as f64 * 0.02))
            .collect();
        let fit = fit_manifold_surface(&pts, 3).unwrap();
        assert_eq!(fit.model.degree, 1);
        assert!(fit.residual < 1e-9);
    }

    #[test]
    fn six_points_force_planar_surface() {
        let pts: Vec<Point> = (0..6)
            .map(|i| {
                let a = i as f64;
                Point::new(a.cos(), a.sin(), 0.1 * a * a)
            })
            .collect();
        assert_eq!(fit_manifold_surface(&pts, 4).unwrap().model.degree, 1);
    }

    #[test]
    fn hemisphere_patch_beats_plane() {
        let mut pts = Vec::new();
        for i in 0..7 {
            for j in 0..7 {
                let x = -0.06 + i as f64 * 0.02;
                let y = -0.06 + j as f64 * 0.02;
                pts.push(Point::new(x, y, (0.01f64 - x * x - y * y).sqrt()));
            }
        }
        let quad = fit_manifold_surface(&pts, 4).unwrap();
        let plane = fit_manifold_surface(&pts, 1).unwrap();
        assert!(quad.model.degree >= 2);
        assert!(quad.residual < plane.residual);
    }

    #[test]
    fn collinear_surface_input_errors() {
        let pts: Vec<Point> = (0..8).map(|i| Point::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(fit_manifold_surface(&pts, 2), Err(Error::Degenerate(_))));
    }
}
