//! Small fixed-size vector helpers for particle positions and forces.

pub type Vec3 = [f64; 3];

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Smallest pairwise distance, `f64::INFINITY` for fewer than two particles.
pub fn min_pair_distance(positions: &[Vec3]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..positions.len() {
        for j in (i + 1)..positions.len() {
            best = best.min(norm(sub(positions[i], positions[j])));
        }
    }
    best
}

/// Root mean square over every Cartesian component.
pub fn rms_components(vectors: &[Vec3]) -> f64 {
    if vectors.is_empty() {
        return 0.0;
    }
    let sum: f64 = vectors.iter().map(|v| dot(*v, *v)).sum();
    (sum / (3 * vectors.len()) as f64).sqrt()
}

/// Rotation matrix from a unit axis and angle (Rodrigues).
pub fn rotation(axis: Vec3, angle: f64) -> [[f64; 3]; 3] {
    let n = norm(axis);
    let [x, y, z] = scale(axis, 1.0 / n);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

pub fn apply(m: &[[f64; 3]; 3], v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}
