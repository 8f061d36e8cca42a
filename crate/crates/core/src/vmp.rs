//! Via-point movement primitives.
//!
//! `y(x) = y0 + (g - y0) q(x) + f(x) - (1 - q(x)) f(0) - q(x) f(1)` with the
//! minimum-jerk blend `q(x) = 10x³ - 15x⁴ + 6x⁵` and a normalized Gaussian
//! basis shape term `f`. The boundary correction keeps `y(0) = y0` and
//! `y(1) = g` exact for any weights, so via-points only touch the weights.

use nalgebra::{DMatrix, DVector, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{lstsq, ridge_solve};

pub const DEFAULT_BASIS: usize = 20;
pub const RIDGE: f64 = 1e-8;
const VIA_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VmpConfig {
    pub n_basis: usize,
}

impl Default for VmpConfig {
    fn default() -> Self {
        VmpConfig { n_basis: DEFAULT_BASIS }
    }
}

impl VmpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_basis < 1 {
            return Err(Error::config("vmp", "n_basis must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViaPoint {
    pub phase: f64,
    pub value: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vmp {
    pub dim: usize,
    pub n_basis: usize,
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
    /// Fitted shape weights, `[n_basis][dim]`.
    pub base_weights: Vec<Vec<f64>>,
    /// Weights in use: fitted weights plus the via-point correction.
    pub weights: Vec<Vec<f64>>,
    pub via_points: Vec<ViaPoint>,
    /// RMS reconstruction error of the training mean.
    pub reconstruction_rms: f64,
    /// Mean per-sample variance across demonstrations.
    pub demo_variance: f64,
}

/// Value and phase derivative at a phase; `clamped` flags a phase outside
/// `[0, 1]` that was clamped before evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct VmpSample {
    pub value: Vec<f64>,
    pub derivative: Vec<f64>,
    pub clamped: bool,
}

fn blend(x: f64) -> (f64, f64) {
    let x2 = x * x;
    let x3 = x2 * x;
    (
        10.0 * x3 - 15.0 * x3 * x + 6.0 * x3 * x2,
        30.0 * x2 - 60.0 * x3 + 30.0 * x2 * x2,
    )
}

/// Normalized basis activations and their phase derivatives.
fn basis(n: usize, x: f64) -> (Vec<f64>, Vec<f64>) {
    let h = 1.0 / n as f64;
    let centre = |j: usize| if n == 1 { 0.5 } else { j as f64 / (n - 1) as f64 };
    let mut psi = Vec::with_capacity(n);
    let mut dpsi = Vec::with_capacity(n);
    for j in 0..n {
        let d = x - centre(j);
        let p = (-d * d / (2.0 * h * h)).exp();
        psi.push(p);
        dpsi.push(-d / (h * h) * p);
    }
    let s: f64 = psi.iter().sum();
    let ds: f64 = dpsi.iter().sum();
    let norm: Vec<f64> = psi.iter().map(|p| p / s).collect();
    let dnorm: Vec<f64> = psi
        .iter()
        .zip(&dpsi)
        .map(|(p, dp)| (dp * s - p * ds) / (s * s))
        .collect();
    (norm, dnorm)
}

/// Effective regressors `φ_j(x)` (shape basis with the boundary correction)
/// and their derivatives.
fn regressors(n: usize, x: f64) -> (Vec<f64>, Vec<f64>) {
    let (b, db) = basis(n, x);
    let (b0, _) = basis(n, 0.0);
    let (b1, _) = basis(n, 1.0);
    let (q, dq) = blend(x);
    let phi = (0..n).map(|j| b[j] - (1.0 - q) * b0[j] - q * b1[j]).collect();
    let dphi = (0..n).map(|j| db[j] + dq * b0[j] - dq * b1[j]).collect();
    (phi, dphi)
}

fn lerp_series(series: &[Vec<f64>], x: f64) -> Vec<f64> {
    let t = series.len();
    if t == 1 {
        return series[0].clone();
    }
    let s = x * (t - 1) as f64;
    let i = (s.floor() as usize).min(t - 2);
    let a = s - i as f64;
    series[i]
        .iter()
        .zip(&series[i + 1])
        .map(|(p, q)| p + a * (q - p))
        .collect()
}

impl Vmp {
    /// Fits to demonstrations `[demo][t][dim]` with phase equal to normalized
    /// time. Demos are resampled onto the longest time grid and averaged.
    pub fn fit(trajectories: &[Vec<Vec<f64>>], n_basis: usize) -> Result<Vmp> {
        if trajectories.is_empty() {
            return Err(Error::Precondition("vmp fit needs >= 1 demonstration".into()));
        }
        if n_basis < 1 {
            return Err(Error::config("vmp", "n_basis must be >= 1"));
        }
        let dim = trajectories[0].first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::Precondition("vmp fit needs non-empty samples".into()));
        }
        for (d, traj) in trajectories.iter().enumerate() {
            if traj.len() < n_basis {
                return Err(Error::Precondition(format!(
                    "demo {d} has {} samples, vmp with {n_basis} basis functions needs >= {n_basis}",
                    traj.len()
                )));
            }
            if traj.iter().any(|s| s.len() != dim || s.iter().any(|v| !v.is_finite())) {
                return Err(Error::Data(format!("demo {d}: inconsistent or non-finite samples")));
            }
        }
        let m = trajectories.iter().map(Vec::len).max().unwrap_or(0);
        let phases: Vec<f64> = (0..m).map(|i| i as f64 / (m - 1) as f64).collect();
        let resampled: Vec<Vec<Vec<f64>>> = trajectories
            .iter()
            .map(|tr| phases.iter().map(|&x| lerp_series(tr, x)).collect())
            .collect();
        let nd = resampled.len() as f64;
        let mean: Vec<Vec<f64>> = (0..m)
            .map(|i| (0..dim).map(|c| resampled.iter().map(|r| r[i][c]).sum::<f64>() / nd).collect())
            .collect();
        let demo_variance = (0..m)
            .map(|i| {
                (0..dim)
                    .map(|c| resampled.iter().map(|r| (r[i][c] - mean[i][c]).powi(2)).sum::<f64>() / nd)
                    .sum::<f64>()
            })
            .sum::<f64>()
            / m as f64;

        let start = mean[0].clone();
        let goal = mean[m - 1].clone();
        let a = DMatrix::from_fn(m, n_basis, |i, j| regressors(n_basis, phases[i]).0[j]);
        let target = DMatrix::from_fn(m, dim, |i, c| {
            let (q, _) = blend(phases[i]);
            mean[i][c] - (start[c] + (goal[c] - start[c]) * q)
        });
        let w = ridge_solve(&a, &target, RIDGE)
            .ok_or_else(|| Error::Internal("vmp normal equations not solvable".into()))?;
        let weights: Vec<Vec<f64>> = (0..n_basis).map(|j| (0..dim).map(|c| w[(j, c)]).collect()).collect();
        let mut vmp = Vmp {
            dim,
            n_basis,
            start,
            goal,
            base_weights: weights.clone(),
            weights,
            via_points: Vec::new(),
            reconstruction_rms: 0.0,
            demo_variance,
        };
        let sq: f64 = phases
            .iter()
            .zip(&mean)
            .map(|(&x, y)| {
                let v = vmp.evaluate(x).value;
                v.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            })
            .sum();
        vmp.reconstruction_rms = (sq / m as f64).sqrt();
        Ok(vmp)
    }

    pub fn evaluate(&self, x: f64) -> VmpSample {
        let clamped = !(0.0..=1.0).contains(&x);
        let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
        let (q, dq) = blend(x);
        let (phi, dphi) = regressors(self.n_basis, x);
        let mut value = Vec::with_capacity(self.dim);
        let mut derivative = Vec::with_capacity(self.dim);
        for c in 0..self.dim {
            let span = self.goal[c] - self.start[c];
            let mut v = self.start[c] + span * q;
            let mut d = span * dq;
            for j in 0..self.n_basis {
                v += self.weights[j][c] * phi[j];
                d += self.weights[j][c] * dphi[j];
            }
            value.push(v);
            derivative.push(d);
        }
        VmpSample {
            value,
            derivative,
            clamped,
        }
    }

    /// New start and goal plus additional via-points. The weight correction
    /// relative to the fitted weights is the minimum-norm one satisfying all
    /// via-points.
    pub fn adapt(&self, start: &[f64], goal: &[f64], extra_via: &[ViaPoint]) -> Result<Vmp> {
        if start.len() != self.dim || goal.len() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "vmp of dim {} adapted with start/goal of dim {}/{}",
                self.dim,
                start.len(),
                goal.len()
            )));
        }
        let mut via: Vec<ViaPoint> = self.via_points.clone();
        via.extend(extra_via.iter().cloned());
        for v in &via {
            if v.value.len() != self.dim || !(0.0..=1.0).contains(&v.phase) {
                return Err(Error::InvalidArgument(format!(
                    "via-point at phase {} has dim {} (expected {} and phase in [0,1])",
                    v.phase,
                    v.value.len(),
                    self.dim
                )));
            }
        }
        for (i, a) in via.iter().enumerate() {
            for b in &via[i + 1..] {
                if a.phase == b.phase && a.value.iter().zip(&b.value).any(|(p, q)| (p - q).abs() > VIA_TOL) {
                    return Err(Error::InvalidArgument(format!(
                        "conflicting via-points at phase {}",
                        a.phase
                    )));
                }
            }
        }
        // drop exact duplicates
        let mut unique: Vec<ViaPoint> = Vec::new();
        for v in via {
            if !unique.iter().any(|u| u.phase == v.phase) {
                unique.push(v);
            }
        }
        let mut out = Vmp {
            start: start.to_vec(),
            goal: goal.to_vec(),
            weights: self.base_weights.clone(),
            via_points: unique.clone(),
            ..self.clone()
        };
        if unique.is_empty() {
            return Ok(out);
        }
        let k = unique.len();
        let phi = DMatrix::from_fn(k, self.n_basis, |r, j| regressors(self.n_basis, unique[r].phase).0[j]);
        for c in 0..self.dim {
            let r = DVector::from_fn(k, |i, _| unique[i].value[c] - out.evaluate(unique[i].phase).value[c]);
            let dw = lstsq(&phi, &r).ok_or_else(|| Error::Internal("via-point solve failed".into()))?;
            for j in 0..self.n_basis {
                out.weights[j][c] += dw[j];
            }
        }
        for v in &unique {
            let got = out.evaluate(v.phase).value;
            let err = got.iter().zip(&v.value).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if err > 1e-7 {
                return Err(Error::InvalidArgument(format!(
                    "via-point at phase {} not reachable (error {err:.3e})",
                    v.phase
                )));
            }
        }
        Ok(out)
    }
}

/// Six-dimensional pose sample: translation followed by the rotation vector
/// of `rotation` relative to `reference`.
pub fn pose_to_vec(translation: &Vector3<f64>, rotation: &Rotation3<f64>, reference: &Rotation3<f64>) -> Vec<f64> {
    let rv = (reference.inverse() * rotation).scaled_axis();
    vec![translation.x, translation.y, translation.z, rv.x, rv.y, rv.z]
}

pub fn vec_to_pose(v: &[f64], reference: &Rotation3<f64>) -> (Vector3<f64>, Rotation3<f64>) {
    let t = Vector3::new(v[0], v[1], v[2]);
    let r = reference * Rotation3::new(Vector3::new(v[3], v[4], v[5]));
    (t, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line_demo(t: usize) -> Vec<Vec<f64>> {
        (0..t)
            .map(|i| {
                let s = i as f64 / (t - 1) as f64;
                vec![0.1 + 0.3 * s, -0.2 * s, 0.05]
            })
            .collect()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn straight_line_reconstructs_within_a_millimetre() {
        let v = Vmp::fit(&[line_demo(60)], DEFAULT_BASIS).unwrap();
        assert!(v.reconstruction_rms < 1e-3, "{}", v.reconstruction_rms);
    }

    #[test]
    fn motionless_demo_gives_constant_output() {
        let demo = vec![vec![0.3, 0.1, -0.2]; 40];
        let v = Vmp::fit(&[demo], DEFAULT_BASIS).unwrap();
        for k in 0..=20 {
            let s = v.evaluate(k as f64 / 20.0);
            assert!(max_abs_diff(&s.value, &[0.3, 0.1, -0.2]) < 1e-9);
        }
    }

    #[test]
    fn sinusoidal_detour_reconstructs_within_two_millimetres() {
        let demo: Vec<Vec<f64>> = (0..80)
            .map(|i| {
                let s = i as f64 / 79.0;
                vec![0.4 * s, 0.05 * (std::f64::consts::PI * s).sin(), 0.02 * (3.0 * s).cos()]
            })
            .collect();
        let v = Vmp::fit(&[demo], DEFAULT_BASIS).unwrap();
        assert!(v.reconstruction_rms < 2e-3);
    }

    #[test]
    fn short_demo_is_rejected() {
        assert!(Vmp::fit(&[line_demo(10)], DEFAULT_BASIS).is_err());
    }

    #[test]
    fn boundaries_and_via_points_are_exact() {
        let v = Vmp::fit(&[line_demo(50)], DEFAULT_BASIS).unwrap();
        let same = v.adapt(&v.start, &v.goal, &[]).unwrap();
        for k in 0..=10 {
            let x = k as f64 / 10.0;
            assert!(max_abs_diff(&same.evaluate(x).value, &v.evaluate(x).value) < 1e-9);
        }
        let via = ViaPoint { phase: 0.5, value: vec![0.0, 0.3, 0.2] };
        let a = v.adapt(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0], &[via.clone()]).unwrap();
        assert!(max_abs_diff(&a.evaluate(0.5).value, &via.value) < 1e-6);
        assert!(max_abs_diff(&a.evaluate(0.0).value, &[0.0; 3]) < 1e-12);
        assert!(max_abs_diff(&a.evaluate(1.0).value, &[1.0; 3]) < 1e-12);
    }

    #[test]
    fn conflicting_via_points_error() {
        let v = Vmp::fit(&[line_demo(50)], DEFAULT_BASIS).unwrap();
        let a = ViaPoint { phase: 0.3, value: vec![0.0; 3] };
        let b = ViaPoint { phase: 0.3, value: vec![0.1, 0.0, 0.0] };
        assert!(v.adapt(&v.start, &v.goal, &[a, b]).is_err());
    }

    #[test]
    fn shifted_goal_keeps_shape_pattern() {
        let demo: Vec<Vec<f64>> = (0..60)
            .map(|i| {
                let s = i as f64 / 59.0;
                vec![0.2 * s, 0.04 * (std::f64::consts::PI * s).sin(), 0.0]
            })
            .collect();
        let v = Vmp::fit(&[demo], DEFAULT_BASIS).unwrap();
        let mut g = v.goal.clone();
        g[0] += 0.1;
        let a = v.adapt(&v.start, &g, &[]).unwrap();
        for k in 0..=20 {
            let x = k as f64 / 20.0;
            let (q, _) = blend(x);
            let d = a.evaluate(x).value[0] - v.evaluate(x).value[0];
            assert!((d - 0.1 * q).abs() < 1e-12);
            assert!((a.evaluate(x).value[1] - v.evaluate(x).value[1]).abs() < 1e-12);
        }
        assert_eq!(a.evaluate(1.0).value, g);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let demo: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)]).collect();
        let v = Vmp::fit(&[demo], DEFAULT_BASIS).unwrap();
        let h = 1e-6;
        for _ in 0..100 {
            let x: f64 = rng.random_range(h..1.0 - h);
            let a = v.evaluate(x).derivative;
            let hi = v.evaluate(x + h).value;
            let lo = v.evaluate(x - h).value;
            for c in 0..2 {
                let fd = (hi[c] - lo[c]) / (2.0 * h);
                let scale = a[c].abs().max(1.0);
                assert!((fd - a[c]).abs() / scale < 1e-5);
            }
        }
    }

    #[test]
    fn out_of_range_phase_is_clamped() {
        let v = Vmp::fit(&[line_demo(30)], DEFAULT_BASIS).unwrap();
        let s = v.evaluate(1.5);
        assert!(s.clamped);
        assert_eq!(s.value, v.evaluate(1.0).value);
        assert!(!v.evaluate(0.5).clamped);
    }

    #[test]
    fn pose_vector_round_trip() {
        let r0 = Rotation3::from_euler_angles(0.1, 0.2, 0.3);
        let r = Rotation3::from_euler_angles(-0.4, 0.5, 1.0);
        let t = Vector3::new(1.0, 2.0, 3.0);
        let (t2, r2) = vec_to_pose(&pose_to_vec(&t, &r, &r0), &r0);
        assert!((t2 - t).norm() < 1e-12);
        assert!(r2.rotation_to(&r).angle() < 1e-12);
    }
}
