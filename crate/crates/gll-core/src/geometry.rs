//! Pointwise operations on the ambient space R^{n+1} and the unit sphere S^n.
//!
//! Maps into S^n are handled extrinsically: a point is a unit vector in
//! R^{n+1}, the tangent space at `p` is the hyperplane orthogonal to `p`, and
//! the Levi-Civita connection of the round metric is realized by orthogonal
//! projection. The curvature tensor of the unit sphere is constant,
//! `R(X,Y)Z = <Y,Z>X - <X,Z>Y`.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default tolerance for "is this point on the unit sphere" pre-checks.
pub const UNIT_TOL: f64 = 1e-8;
/// Default floor below which a vector is treated as zero by projections.
pub const NORM_FLOOR: f64 = 1e-12;

/// Errors from pointwise sphere algebra.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    /// Radial projection of a (near-)zero vector is undefined.
    #[error("cannot project a near-zero vector to the sphere (|v| = {norm:.3e} < {floor:.3e})")]
    ZeroVector { norm: f64, floor: f64 },
    /// Tangent projection requires a unit base point.
    #[error("base point is not unit (||p| - 1| = {deviation:.3e} exceeds tolerance {tol:.3e})")]
    NotUnit { deviation: f64, tol: f64 },
    /// Vector/matrix dimensions do not agree.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Euclidean inner product. On tangent vectors this equals the round metric.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Radial projection v/|v| onto the unit sphere.
pub fn project_to_sphere(v: &[f64]) -> Result<Vec<f64>, GeometryError> {
    project_to_sphere_with_floor(v, NORM_FLOOR)
}

/// Radial projection with an explicit zero floor.
pub fn project_to_sphere_with_floor(v: &[f64], floor: f64) -> Result<Vec<f64>, GeometryError> {
    let n = norm(v);
    if !(n > floor) {
        return Err(GeometryError::ZeroVector { norm: n, floor });
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Orthogonal projection of `v` onto the tangent space of S^n at the unit
/// point `p`: returns `v - (p,v) p`.
pub fn project_to_tangent(p: &[f64], v: &[f64]) -> Result<Vec<f64>, GeometryError> {
    project_to_tangent_with_tol(p, v, UNIT_TOL)
}

/// Tangent projection with an explicit unit-tolerance on the base point.
pub fn project_to_tangent_with_tol(
    p: &[f64],
    v: &[f64],
    tol: f64,
) -> Result<Vec<f64>, GeometryError> {
    if p.len() != v.len() {
        return Err(GeometryError::DimensionMismatch {
            expected: p.len(),
            got: v.len(),
        });
    }
    let deviation = (norm(p) - 1.0).abs();
    if deviation > tol {
        return Err(GeometryError::NotUnit { deviation, tol });
    }
    let s = dot(p, v);
    Ok(p.iter().zip(v).map(|(pi, vi)| vi - s * pi).collect())
}

/// Constant curvature tensor of the unit sphere applied to tangent vectors:
/// `R(X,Y)Z = <Y,Z>X - <X,Z>Y`.
///
/// X, Y, Z must be tangent at a common base point; that is the caller's
/// responsibility (only the dimensions are checked here).
pub fn curvature_apply(x: &[f64], y: &[f64], z: &[f64]) -> Vec<f64> {
    debug_assert_eq!(x.len(), y.len());
    debug_assert_eq!(x.len(), z.len());
    let yz = dot(y, z);
    let xz = dot(x, z);
    x.iter()
        .zip(y)
        .map(|(xi, yi)| yz * xi - xz * yi)
        .collect()
}

/// Constant symmetric matrix of the quadratic potential U = (u, A u)/2.
///
/// Construction symmetrizes exactly, so `entries[i][j] == entries[j][i]`
/// bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialMatrix {
    entries: Array2<f64>,
}

impl PotentialMatrix {
    /// Builds from a square matrix; off-diagonal pairs are averaged so the
    /// result is exactly symmetric.
    pub fn from_entries(m: Array2<f64>) -> Result<Self, GeometryError> {
        let (rows, cols) = m.dim();
        if rows != cols {
            return Err(GeometryError::DimensionMismatch {
                expected: rows,
                got: cols,
            });
        }
        let mut entries = m;
        for i in 0..rows {
            for j in (i + 1)..rows {
                let avg = 0.5 * (entries[[i, j]] + entries[[j, i]]);
                entries[[i, j]] = avg;
                entries[[j, i]] = avg;
            }
        }
        Ok(Self { entries })
    }

    /// Diagonal matrix from its n+1 diagonal entries.
    pub fn diagonal(diag: &[f64]) -> Self {
        let mut entries = Array2::zeros((diag.len(), diag.len()));
        for (i, d) in diag.iter().enumerate() {
            entries[[i, i]] = *d;
        }
        Self { entries }
    }

    /// The zero matrix (potential switched off).
    pub fn zeros(dim: usize) -> Self {
        Self {
            entries: Array2::zeros((dim, dim)),
        }
    }

    /// Ambient dimension n+1.
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> ArrayView2<'_, f64> {
        self.entries.view()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|x| *x == 0.0)
    }

    /// Writes A u into `out`.
    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        let d = self.dim();
        debug_assert_eq!(u.len(), d);
        debug_assert_eq!(out.len(), d);
        let a = self.entries.as_slice().expect("standard layout");
        for i in 0..d {
            let row = &a[i * d..(i + 1) * d];
            out[i] = dot(row, u);
        }
    }

    /// A u as a fresh vector.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply_into(u, &mut out);
        out
    }

    /// The quadratic form (u, A u). The potential of the flow is half this.
    pub fn quadratic(&self, u: &[f64]) -> Result<f64, GeometryError> {
        if u.len() != self.dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dim(),
                got: u.len(),
            });
        }
        Ok(dot(&self.apply(u), u))
    }

    /// Gershgorin row-sum bound on the spectral radius; dominates |(u, A u)|
    /// for unit u. Exact for diagonal matrices.
    pub fn spectral_bound(&self) -> f64 {
        let d = self.dim();
        (0..d)
            .map(|i| (0..d).map(|j| self.entries[[i, j]].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Serialized as a plain array of rows so configs stay human-diffable.
impl Serialize for PotentialMatrix {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = self
            .entries
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect();
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PotentialMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(deserializer)?;
        let dim = rows.len();
        let mut entries = Array2::zeros((dim, dim));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(serde::de::Error::custom(format!(
                    "potential matrix row {i} has {} entries, expected {dim}",
                    row.len()
                )));
            }
            for (j, v) in row.iter().enumerate() {
                entries[[i, j]] = *v;
            }
        }
        PotentialMatrix::from_entries(entries).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn sphere_projection_scales() {
        assert_close(
            &project_to_sphere(&[2.0, 0.0, 0.0]).unwrap(),
            &[1.0, 0.0, 0.0],
            0.0,
        );
        assert_close(
            &project_to_sphere(&[1.0, 1.0, 1.0, 1.0]).unwrap(),
            &[0.5, 0.5, 0.5, 0.5],
            1e-16,
        );
    }

    #[test]
    fn sphere_projection_rejects_zero() {
        let err = project_to_sphere(&[0.0, 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, GeometryError::ZeroVector { .. }));
    }

    #[test]
    fn tangent_projection_examples() {
        let p = [1.0, 0.0, 0.0];
        assert_close(
            &project_to_tangent(&p, &[1.0, 2.0, 0.0]).unwrap(),
            &[0.0, 2.0, 0.0],
            0.0,
        );
        assert_close(
            &project_to_tangent(&p, &[0.0, 3.0, 4.0]).unwrap(),
            &[0.0, 3.0, 4.0],
            0.0,
        );
        let q = [0.0, 1.0, 0.0];
        assert_close(
            &project_to_tangent(&q, &[0.0, 5.0, 0.0]).unwrap(),
            &[0.0, 0.0, 0.0],
            0.0,
        );
    }

    #[test]
    fn tangent_projection_rejects_non_unit_base() {
        let err = project_to_tangent(&[2.0, 0.0], &[1.0, 1.0]).unwrap_err();
        assert!(matches!(err, GeometryError::NotUnit { .. }));
    }

    #[test]
    fn curvature_orthonormal_cases() {
        let e1 = [1.0, 0.0, 0.0];
        let e2 = [0.0, 1.0, 0.0];
        let e3 = [0.0, 0.0, 1.0];
        assert_close(&curvature_apply(&e1, &e2, &e2), &e1, 0.0);
        assert_close(&curvature_apply(&e1, &e1, &e2), &[0.0; 3], 0.0);
        assert_close(&curvature_apply(&e1, &e2, &e3), &[0.0; 3], 0.0);
    }

    #[test]
    fn quadratic_form_examples() {
        let a = PotentialMatrix::diagonal(&[1.0, 2.0, 3.0]);
        assert_eq!(a.quadratic(&[1.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(a.quadratic(&[0.0, 0.0, 1.0]).unwrap(), 3.0);
        let zero = PotentialMatrix::zeros(3);
        assert_eq!(zero.quadratic(&[0.3, -0.5, 0.81]).unwrap(), 0.0);
    }

    #[test]
    fn quadratic_form_dimension_mismatch() {
        let a = PotentialMatrix::diagonal(&[1.0, 2.0, 3.0]);
        assert!(matches!(
            a.quadratic(&[1.0, 0.0]),
            Err(GeometryError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn construction_symmetrizes_exactly() {
        let m = Array2::from_shape_vec((2, 2), vec![1.0, 0.3, 0.7, 2.0]).unwrap();
        let a = PotentialMatrix::from_entries(m).unwrap();
        assert_eq!(a.entries()[[0, 1]], a.entries()[[1, 0]]);
        assert_eq!(a.entries()[[0, 1]], 0.5);
    }

    #[test]
    fn spectral_bound_is_exact_for_diagonal() {
        let a = PotentialMatrix::diagonal(&[1.0, -4.0, 3.0]);
        assert_eq!(a.spectral_bound(), 4.0);
    }

    fn vec3() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, 3)
    }

    proptest! {
        #[test]
        fn tangent_projection_idempotent(p in vec3(), v in vec3()) {
            prop_assume!(norm(&p) > 0.1);
            let p = project_to_sphere(&p).unwrap();
            let once = project_to_tangent(&p, &v).unwrap();
            let twice = project_to_tangent(&p, &once).unwrap();
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() <= 1e-14 * (1.0 + a.abs()));
            }
            // result orthogonal to the base point
            prop_assert!(dot(&p, &once).abs() <= 1e-13 * (1.0 + norm(&v)));
        }

        #[test]
        fn curvature_antisymmetric_and_bianchi(x in vec3(), y in vec3(), z in vec3()) {
            let r_xy = curvature_apply(&x, &y, &z);
            let r_yx = curvature_apply(&y, &x, &z);
            // antisymmetry in (X, Y)
            for (a, b) in r_xy.iter().zip(&r_yx) {
                prop_assert!((a + b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
            // first Bianchi identity
            let r1 = curvature_apply(&x, &y, &z);
            let r2 = curvature_apply(&y, &z, &x);
            let r3 = curvature_apply(&z, &x, &y);
            for i in 0..3 {
                let s = r1[i] + r2[i] + r3[i];
                prop_assert!(s.abs() <= 1e-12 * (1.0 + r1[i].abs() + r2[i].abs()));
            }
            // <R(X,Y)Z, W> antisymmetric in (Z, W): check via W = Z
            prop_assert!(dot(&r_xy, &z).abs() <= 1e-10 * (1.0 + dot(&z, &z)));
        }

        #[test]
        fn quadratic_even_in_u(u in vec3()) {
            let a = PotentialMatrix::diagonal(&[1.0, 2.0, 3.0]);
            let neg: Vec<f64> = u.iter().map(|x| -x).collect();
            prop_assert_eq!(a.quadratic(&u).unwrap(), a.quadratic(&neg).unwrap());
        }
    }
}
