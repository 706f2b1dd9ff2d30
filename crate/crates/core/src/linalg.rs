//! Fixed-size 2x2 helpers. Nothing here needs a general linear algebra crate.

pub type Mat2 = [[f64; 2]; 2];
pub type Vec2 = [f64; 2];

pub const IDENTITY: Mat2 = [[1.0, 0.0], [0.0, 1.0]];
pub const ZERO: Mat2 = [[0.0, 0.0], [0.0, 0.0]];

pub fn mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = ZERO;
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

pub fn mul_vec(a: &Mat2, v: &Vec2) -> Vec2 {
    [
        a[0][0] * v[0] + a[0][1] * v[1],
        a[1][0] * v[0] + a[1][1] * v[1],
    ]
}

pub fn add(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] + b[0][0], a[0][1] + b[0][1]],
        [a[1][0] + b[1][0], a[1][1] + b[1][1]],
    ]
}

pub fn sub(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] - b[0][0], a[0][1] - b[0][1]],
        [a[1][0] - b[1][0], a[1][1] - b[1][1]],
    ]
}

pub fn scale(a: &Mat2, s: f64) -> Mat2 {
    [[a[0][0] * s, a[0][1] * s], [a[1][0] * s, a[1][1] * s]]
}

pub fn trace(a: &Mat2) -> f64 {
    a[0][0] + a[1][1]
}

pub fn det(a: &Mat2) -> f64 {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

/// Induced infinity norm (max absolute row sum).
pub fn norm_inf(a: &Mat2) -> f64 {
    a.iter()
        .map(|row| row[0].abs() + row[1].abs())
        .fold(0.0, f64::max)
}

/// Largest absolute entry.
pub fn max_abs_entry(a: &Mat2) -> f64 {
    a.iter().flatten().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn vec_norm_inf(v: &Vec2) -> f64 {
    v[0].abs().max(v[1].abs())
}
