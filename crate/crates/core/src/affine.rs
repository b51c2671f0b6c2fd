//! Small helpers for 4x4 homogeneous affine transforms.
//!
//! Affines map voxel indices `(i, j, k, 1)` to world coordinates in
//! millimetres. The last row is always `(0, 0, 0, 1)`.

use crate::error::{Error, Result};

/// Row-major 4x4 homogeneous affine.
pub type Affine = [[f64; 4]; 4];

/// The identity transform: voxel indices are world millimetres.
pub const IDENTITY: Affine = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

/// Applies `a` to the point `(p[0], p[1], p[2], 1)`.
pub fn apply(a: &Affine, p: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (r, row) in a.iter().take(3).enumerate() {
        out[r] = row[0] * p[0] + row[1] * p[1] + row[2] * p[2] + row[3];
    }
    out
}

/// Euclidean norm of column `c` of the upper-left 3x3 block, i.e. the voxel
/// spacing along voxel axis `c`.
pub fn column_norm(a: &Affine, c: usize) -> f64 {
    (a[0][c] * a[0][c] + a[1][c] * a[1][c] + a[2][c] * a[2][c]).sqrt()
}

/// Determinant of the upper-left 3x3 block.
pub fn det3(a: &Affine) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Inverts a homogeneous affine. Fails when the 3x3 block is singular.
pub fn invert(a: &Affine) -> Result<Affine> {
    let d = det3(a);
    if d.abs() < 1e-12 || !d.is_finite() {
        return Err(Error::SingularAffine);
    }
    // Inverse of the linear block via the adjugate, then t' = -M^-1 t.
    let m = |r: usize, c: usize| a[r][c];
    let inv = [
        [
            (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) / d,
            (m(0, 2) * m(2, 1) - m(0, 1) * m(2, 2)) / d,
            (m(0, 1) * m(1, 2) - m(0, 2) * m(1, 1)) / d,
        ],
        [
            (m(1, 2) * m(2, 0) - m(1, 0) * m(2, 2)) / d,
            (m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0)) / d,
            (m(0, 2) * m(1, 0) - m(0, 0) * m(1, 2)) / d,
        ],
        [
            (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0)) / d,
            (m(0, 1) * m(2, 0) - m(0, 0) * m(2, 1)) / d,
            (m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0)) / d,
        ],
    ];
    let t = [a[0][3], a[1][3], a[2][3]];
    let mut out = IDENTITY;
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = inv[r][c];
        }
        out[r][3] = -(inv[r][0] * t[0] + inv[r][1] * t[1] + inv[r][2] * t[2]);
    }
    Ok(out)
}

/// Matrix product `a * b` (apply `b` first, then `a`).
pub fn compose(a: &Affine, b: &Affine) -> Affine {
    let mut out = [[0.0; 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            out[r][c] = (0..4).map(|k| a[r][k] * b[k][c]).sum();
        }
    }
    out
}

/// Builds a diagonal scaling affine with the given spacings and zero origin.
pub fn scaling(spacing: [f64; 3]) -> Affine {
    let mut a = IDENTITY;
    for (i, s) in spacing.iter().enumerate() {
        a[i][i] = *s;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_apply_is_noop() {
        let p = [3.5, -2.0, 7.25];
        assert_eq!(apply(&IDENTITY, p), p);
    }

    #[test]
    fn invert_roundtrips_random_affines() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        for _ in 0..50 {
            let mut a = IDENTITY;
            loop {
                for r in 0..3 {
                    for c in 0..4 {
                        a[r][c] = next() * 4.0;
                    }
                }
                if det3(&a).abs() > 0.05 {
                    break;
                }
            }
            let inv = invert(&a).unwrap();
            let p = [next() * 10.0, next() * 10.0, next() * 10.0];
            let back = apply(&inv, apply(&a, p));
            for i in 0..3 {
                assert_abs_diff_eq!(back[i], p[i], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn invert_rejects_singular() {
        let mut a = IDENTITY;
        a[2][2] = 0.0;
        assert!(matches!(invert(&a), Err(Error::SingularAffine)));
    }

    #[test]
    fn column_norm_is_spacing() {
        let a = scaling([2.0, 3.0, 0.5]);
        assert_eq!(column_norm(&a, 0), 2.0);
        assert_eq!(column_norm(&a, 1), 3.0);
        assert_eq!(column_norm(&a, 2), 0.5);
    }
}
