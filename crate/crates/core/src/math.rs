//! Minimal 3-vector / 3x3-matrix helpers used by the geometry, instance and
//! synth modules. Kept local on purpose: the handful of operations needed
//! here does not justify a linear-algebra dependency in the public API.

/// A 3D point or vector in meters.
pub type Vec3 = [f64; 3];

/// Row-major 3x3 matrix.
pub type Mat3 = [[f64; 3]; 3];

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

/// Squared Euclidean distance; avoids the sqrt on hot grouping paths.
pub fn dist_sq(a: Vec3, b: Vec3) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

/// L1 norm summed over components.
pub fn l1_norm(a: Vec3) -> f64 {
    a[0].abs() + a[1].abs() + a[2].abs()
}

pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Multiply by the transpose, i.e. `m^T v`. For orthonormal `m` this is the
/// inverse rotation.
pub fn mat_t_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

/// Rotation about the z axis by `angle` radians.
pub fn rot_z(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

/// Matrix product `a * b`.
pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

/// Deviation of `m` from orthonormality: max abs entry of `m^T m - I`.
pub fn orthonormality_error(m: &Mat3) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            let col_i = [m[0][i], m[1][i], m[2][i]];
            let col_j = [m[0][j], m[1][j], m[2][j]];
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot(col_i, col_j) - target).abs());
        }
    }
    worst
}

/// Centroid of the selected points. Empty selections return the origin;
/// callers that care reject empties before calling.
pub fn centroid(points: &[Vec3], indices: &[usize]) -> Vec3 {
    if indices.is_empty() {
        return [0.0; 3];
    }
    let mut sum = [0.0f64; 3];
    for &i in indices {
        sum = add(sum, points[i]);
    }
    scale(sum, 1.0 / indices.len() as f64)
}
