//! Small dense linear-algebra helpers shared by the analysis modules.

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, SymmetricEigen, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

pub type Point = Vector3<f64>;

pub fn centroid(points: &[Point]) -> Point {
    let n = points.len().max(1) as f64;
    points.iter().fold(Point::zeros(), |acc, p| acc + p) / n
}

/// Mean and population covariance (divided by n).
pub fn mean_covariance(points: &[Point]) -> (Point, Matrix3<f64>) {
    let mean = centroid(points);
    let n = points.len().max(1) as f64;
    let cov = points.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = p - mean;
        acc + d * d.transpose()
    }) / n;
    (mean, cov)
}

/// Eigen-decomposition of a symmetric 3x3 matrix, eigenvalues sorted descending
/// (clamped at zero) with matching unit eigenvectors as columns.
pub fn sorted_eigen(m: &Matrix3<f64>) -> ([f64; 3], Matrix3<f64>) {
    let eig = SymmetricEigen::new(*m);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.map(|i| eig.eigenvalues[i].max(0.0));
    let mut vectors = Matrix3::zeros();
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(i).normalize());
    }
    (values, vectors)
}

/// Principal axes of a point set: (mean, sorted eigenvalues, eigenvector columns).
pub fn principal_axes(points: &[Point]) -> (Point, [f64; 3], Matrix3<f64>) {
    let (mean, cov) = mean_covariance(points);
    let (values, vectors) = sorted_eigen(&cov);
    (mean, values, vectors)
}

/// Rigid transform `dst ≈ rotation * src + translation` fitted on
/// index-corresponding point sets.
#[derive(Clone, Debug)]
pub struct RigidFit {
    pub rotation: Rotation3<f64>,
    pub translation: Point,
    /// Ratio of RMS centroid distances, dst over src.
    pub scale: f64,
    /// Ratio of the largest to the second largest singular value of the
    /// cross-covariance; rotation is unobservable when this blows up.
    pub condition: f64,
}

pub const MAX_REGISTRATION_CONDITION: f64 = 1e8;

pub fn rigid_fit(src: &[Point], dst: &[Point]) -> Result<RigidFit> {
    if src.len() != dst.len() || src.len() < 3 {
        return Err(Error::Registration(format!(
            "need >= 3 corresponding points, got {} and {}",
            src.len(),
            dst.len()
        )));
    }
    let cs = centroid(src);
    let cd = centroid(dst);
    let mut h = Matrix3::zeros();
    let mut ss = 0.0;
    let mut sd = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let a = s - cs;
        let b = d - cd;
        h += b * a.transpose();
        ss += a.norm_squared();
        sd += b.norm_squared();
    }
    let svd = h.svd(true, true);
    let sv = svd.singular_values;
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    let condition = if sorted[1] > 0.0 {
        sorted[0] / sorted[1]
    } else {
        f64::INFINITY
    };
    if !(condition < MAX_REGISTRATION_CONDITION) || ss <= 0.0 {
        return Err(Error::Registration(format!(
            "cross-covariance condition {condition:.3e} exceeds bound"
        )));
    }
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        // flip the axis of the smallest singular value
        let (imin, _) = sv.argmin();
        d[(imin, imin)] = -1.0;
    }
    let r = u * d * v_t;
    let rotation = Rotation3::from_matrix_unchecked(r);
    let rotation = Rotation3::from_matrix_eps(rotation.matrix(), 1e-12, 8, rotation);
    Ok(RigidFit {
        translation: cd - rotation * cs,
        rotation,
        scale: (sd / ss).sqrt(),
        condition,
    })
}

/// Projection of a sum of rotation matrices back onto SO(3).
pub fn chordal_mean(rotations: &[Rotation3<f64>]) -> Rotation3<f64> {
    let sum = rotations
        .iter()
        .fold(Matrix3::zeros(), |acc, r| acc + r.matrix());
    project_to_so3(&sum)
}

pub fn project_to_so3(m: &Matrix3<f64>) -> Rotation3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    Rotation3::from_matrix_unchecked(u * d * v_t)
}

pub fn geodesic_distance(a: &Rotation3<f64>, b: &Rotation3<f64>) -> f64 {
    rotation_vector(&(a.transpose() * b.matrix())).norm()
}

/// Axis-angle vector of a (numerically) orthonormal matrix; well defined at
/// the identity, where the trace-based angle can leave the domain of `acos`.
pub fn rotation_vector(m: &Matrix3<f64>) -> Vector3<f64> {
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*m)).scaled_axis()
}

/// Least-squares solution of `a * x = b` with a ridge term; returns `None`
/// when the normal equations are not solvable.
pub fn ridge_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, ridge: f64) -> Option<DMatrix<f64>> {
    let mut ata = a.transpose() * a;
    for i in 0..ata.nrows() {
        ata[(i, i)] += ridge;
    }
    let atb = a.transpose() * b;
    ata.cholesky().map(|c| c.solve(&atb))
}

/// Minimum-norm least-squares solve through the SVD pseudo-inverse.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let tol = 1e-12 * svd.singular_values.max().max(1e-300);
    svd.solve(b, tol).ok()
}

/// Numerical rank of a matrix, relative tolerance on singular values.
pub fn rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = a.clone().singular_values();
    let max = sv.max();
    if max <= 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > rel_tol * max).count()
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Farthest-point sampling; the first pick is the point farthest from the
/// centroid. Ties resolve to the lowest index.
pub fn farthest_point_sampling(points: &[Point], count: usize, allowed: &[bool]) -> Vec<usize> {
    let c = centroid(points);
    let mut picks = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        if !allowed[i] {
            continue;
        }
        let d = (p - c).norm();
        if best.map_or(true, |(_, bd)| d > bd) {
            best = Some((i, d));
        }
    }
    let Some((first, _)) = best else {
        return picks;
    };
    picks.push(first);
    let mut min_dist: Vec<f64> = points.iter().map(|p| (p - points[first]).norm()).collect();
    while picks.len() < count {
        let mut next: Option<(usize, f64)> = None;
        for (i, &d) in min_dist.iter().enumerate() {
            if !allowed[i] || picks.contains(&i) {
                continue;
            }
            if next.map_or(true, |(_, bd)| d > bd) {
                next = Some((i, d));
            }
        }
        let Some((i, d)) = next else { break };
        if d <= 0.0 {
            break;
        }
        picks.push(i);
        for (j, p) in points.iter().enumerate() {
            min_dist[j] = min_dist[j].min((p - points[i]).norm());
        }
    }
    picks
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Unit;

    #[test]
    fn rigid_fit_recovers_known_transform() {
        let src: Vec<Point> = (0..10)
            .map(|i| {
                let f = i as f64;
                Point::new(f.sin(), (1.7 * f).cos(), 0.3 * f)
            })
            .collect();
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(Point::new(1.0, 2.0, 3.0)), 0.8);
        let t = Point::new(0.1, -0.2, 0.3);
        let dst: Vec<Point> = src.iter().map(|p| r * p + t).collect();
        let fit = rigid_fit(&src, &dst).unwrap();
        assert!(fit.rotation.rotation_to(&r).angle() < 1e-10);
        assert!((fit.translation - t).norm() < 1e-10);
        assert!((fit.scale - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rigid_fit_rejects_collinear() {
        let src: Vec<Point> = (0..5).map(|i| Point::new(i as f64, 0.0, 0.0)).collect();
        assert!(rigid_fit(&src, &src).is_err());
    }

    #[test]
    fn chordal_mean_of_symmetric_pair() {
        let axis = Vector3::z_axis();
        let a = Rotation3::from_axis_angle(&axis, 0.2);
        let b = Rotation3::from_axis_angle(&axis, -0.2);
        assert!(chordal_mean(&[a, b]).angle() < 1e-12);
    }

    #[test]
    fn fps_first_pick_is_farthest_from_centroid() {
        let pts = vec![
            Point::new(0.0, 0.0, 0.0),
            Point::new(1.0, 0.0, 0.0),
            Point::new(0.0, 1.0, 0.0),
            Point::new(3.0, 3.0, 0.0),
        ];
        let picks = farthest_point_sampling(&pts, 2, &[true; 4]);
        assert_eq!(picks[0], 3);
        assert_eq!(picks[1], 0);
    }
}
