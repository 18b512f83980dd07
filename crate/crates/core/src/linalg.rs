//! Fixed-size 3x3 linear algebra used by the pose solver.

use crate::real::Real;

pub type Vec3<T> = [T; 3];
/// Row-major 3x3 matrix.
pub type Mat3<T> = [[T; 3]; 3];

pub fn zero3<T: Real>() -> Mat3<T> {
    [[T::zero(); 3]; 3]
}

pub fn identity3<T: Real>() -> Mat3<T> {
    let mut m = zero3();
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = T::one();
    }
    m
}

#[inline]
pub fn dot<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> Vec3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm<T: Real>(a: &Vec3<T>) -> T {
    dot(a, a).sqrt()
}

pub fn scale<T: Real>(a: &Vec3<T>, s: T) -> Vec3<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn sub<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn mat_vec<T: Real>(m: &Mat3<T>, v: &Vec3<T>) -> Vec3<T> {
    [dot(&m[0], v), dot(&m[1], v), dot(&m[2], v)]
}

pub fn mat_mul<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = zero3();
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn transpose<T: Real>(m: &Mat3<T>) -> Mat3<T> {
    let mut out = zero3();
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[j][i];
        }
    }
    out
}

pub fn det<T: Real>(m: &Mat3<T>) -> T {
    dot(&m[0], &cross(&m[1], &m[2]))
}

/// Inverse via the adjugate; `None` when the determinant vanishes.
pub fn inverse<T: Real>(m: &Mat3<T>) -> Option<Mat3<T>> {
    let d = det(m);
    if d == T::zero() || !d.is_finite() {
        return None;
    }
    // Columns of the inverse are cross products of the rows.
    let c0 = cross(&m[1], &m[2]);
    let c1 = cross(&m[2], &m[0]);
    let c2 = cross(&m[0], &m[1]);
    let inv_d = T::one() / d;
    let mut out = zero3();
    for i in 0..3 {
        out[i][0] = c0[i] * inv_d;
        out[i][1] = c1[i] * inv_d;
        out[i][2] = c2[i] * inv_d;
    }
    Some(out)
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> T {
    let mut m = T::zero();
    for i in 0..3 {
        for j in 0..3 {
            m = m.max((a[i][j] - b[i][j]).abs());
        }
    }
    m
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues sorted in decreasing order and the matching
/// eigenvectors as the *columns* of the returned matrix.
pub fn symmetric_eigen<T: Real>(m: &Mat3<T>) -> (Vec3<T>, Mat3<T>) {
    let mut a = *m;
    let mut v = identity3::<T>();
    let two = T::lit(2.0);
    for _sweep in 0..64 {
        let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
        let diag = a[0][0].abs() + a[1][1].abs() + a[2][2].abs();
        if off <= T::epsilon() * diag * T::lit(1e-3) || off == T::zero() {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][q] == T::zero() {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (two * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
            let c = T::one() / (t * t + T::one()).sqrt();
            let s = t * c;
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let vkp = row[p];
                let vkq = row[q];
                row[p] = c * vkp - s * vkq;
                row[q] = s * vkp + c * vkq;
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[j][j].partial_cmp(&a[i][i]).unwrap_or(std::cmp::Ordering::Equal));
    let values = [a[order[0]][order[0]], a[order[1]][order[1]], a[order[2]][order[2]]];
    let mut vectors = zero3();
    for (col, &src) in order.iter().enumerate() {
        for row in 0..3 {
            vectors[row][col] = v[row][src];
        }
    }
    (values, vectors)
}

/// Singular value decomposition `m = U diag(s) Vᵀ` with `s` decreasing.
pub fn svd3<T: Real>(m: &Mat3<T>) -> (Mat3<T>, Vec3<T>, Mat3<T>) {
    let mtm = mat_mul(&transpose(m), m);
    let (evals, v) = symmetric_eigen(&mtm);
    let sing = [
        evals[0].max(T::zero()).sqrt(),
        evals[1].max(T::zero()).sqrt(),
        evals[2].max(T::zero()).sqrt(),
    ];
    let col = |mat: &Mat3<T>, j: usize| [mat[0][j], mat[1][j], mat[2][j]];
    let tol = sing[0] * T::epsilon() * T::lit(64.0);
    let mut u_cols: [Vec3<T>; 3] = [[T::zero(); 3]; 3];
    for j in 0..3 {
        if sing[j] > tol {
            let mv = mat_vec(m, &col(&v, j));
            u_cols[j] = scale(&mv, T::one() / sing[j]);
        }
    }
    // Complete the basis for rank-deficient inputs.
    if sing[0] <= tol {
        u_cols[0] = [T::one(), T::zero(), T::zero()];
    }
    if sing[1] <= tol {
        let a = u_cols[0];
        let helper = if a[0].abs() < T::lit(0.9) {
            [T::one(), T::zero(), T::zero()]
        } else {
            [T::zero(), T::one(), T::zero()]
        };
        let c = cross(&a, &helper);
        u_cols[1] = scale(&c, T::one() / norm(&c));
    }
    if sing[2] <= tol {
        u_cols[2] = cross(&u_cols[0], &u_cols[1]);
    }
    let mut u = zero3();
    for j in 0..3 {
        for i in 0..3 {
            u[i][j] = u_cols[j][i];
        }
    }
    (u, sing, v)
}

/// Closest proper rotation (det = +1) to `m` in the Frobenius sense.
pub fn nearest_rotation<T: Real>(m: &Mat3<T>) -> Mat3<T> {
    let (u, _, v) = svd3(m);
    let d = if det(&u) * det(&v) < T::zero() { -T::one() } else { T::one() };
    let mut ud = u;
    for row in ud.iter_mut() {
        row[2] = row[2] * d;
    }
    mat_mul(&ud, &transpose(&v))
}

/// Rotation angle (radians) of `a · bᵀ`.
pub fn rotation_angle_between<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> T {
    let r = mat_mul(a, &transpose(b));
    let tr = r[0][0] + r[1][1] + r[2][2];
    let c = ((tr - T::one()) / T::lit(2.0)).max(-T::one()).min(T::one());
    c.acos()
}
