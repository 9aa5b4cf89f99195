//! Discretized maps u: S^1 -> S^n, sections of the pull-back bundle u*TS^n,
//! and the covariant calculus built on them.
//!
//! A map is stored as a components-by-nodes array, one unit vector per grid
//! node. The covariant derivative of a section V along u is realized
//! extrinsically as tangent projection of the componentwise x-derivative,
//! `D_x V = d_x V - (u, d_x V) u`. Tangency is re-enforced by projection
//! after every derivative so that chains of derivatives satisfy the section
//! invariant at a fixed tolerance regardless of length.
//!
//! Two Sobolev-type norm families of the derivative u_x are provided:
//! the geometric norms `H^{k,2}` summing L^2 norms of iterated covariant
//! derivatives, and the classical norms `W^{k,2}` summing L^2 norms of
//! ordinary componentwise derivatives.

use crate::geometry;
use crate::grid::{self, GridError, PeriodicGrid, ScalarField, Scheme};
use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

/// Allowed deviation of |u_i| from 1 in a valid [`SphereField`].
pub const SPHERE_TOL: f64 = 1e-8;
/// Allowed relative violation of (u_i, V_i) = 0 in a valid [`TangentField`].
pub const TANGENCY_TOL: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("sample count {got} does not match grid size {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("ambient dimension must be >= 2 (got {dim})")]
    BadDimension { dim: usize },
    #[error("sample {node} is off the sphere (||u| - 1| = {deviation:.3e})")]
    NotOnSphere { node: usize, deviation: f64 },
    #[error("sample {node} is not finite")]
    NonFinite { node: usize },
    #[error("sample {node} violates tangency ((u, V) = {value:.3e})")]
    NotTangent { node: usize, value: f64 },
    #[error("section is based on a different map than the one supplied")]
    BaseMismatch,
    #[error("section has zero L2 norm")]
    ZeroSection,
    #[error("sample {node} has near-zero length and cannot be normalized")]
    ZeroVector { node: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Sampled map S^1 -> S^n stored as a (n+1) x N array, one column per node.
///
/// Immutable after construction; clones share the sample storage.
#[derive(Debug, Clone)]
pub struct SphereField {
    grid: PeriodicGrid,
    data: Arc<Array2<f64>>,
}

impl SphereField {
    /// Validates finiteness and the pointwise unit constraint.
    pub fn new(grid: PeriodicGrid, data: Array2<f64>) -> Result<Self, FieldError> {
        let (dim, n) = data.dim();
        if dim < 2 {
            return Err(FieldError::BadDimension { dim });
        }
        if n != grid.n_points() {
            return Err(FieldError::LengthMismatch {
                expected: grid.n_points(),
                got: n,
            });
        }
        for i in 0..n {
            let mut sq = 0.0;
            for r in 0..dim {
                let v = data[[r, i]];
                if !v.is_finite() {
                    return Err(FieldError::NonFinite { node: i });
                }
                sq += v * v;
            }
            let deviation = (sq.sqrt() - 1.0).abs();
            if deviation > SPHERE_TOL {
                return Err(FieldError::NotOnSphere { node: i, deviation });
            }
        }
        Ok(Self {
            grid,
            data: Arc::new(data),
        })
    }

    /// Normalizes an ambient sample array column by column.
    pub fn project_ambient(grid: PeriodicGrid, raw: &Array2<f64>) -> Result<Self, FieldError> {
        let (dim, n) = raw.dim();
        if dim < 2 {
            return Err(FieldError::BadDimension { dim });
        }
        if n != grid.n_points() {
            return Err(FieldError::LengthMismatch {
                expected: grid.n_points(),
                got: n,
            });
        }
        let mut data = raw.clone();
        normalize_columns(&mut data).map_err(|node| FieldError::ZeroVector { node })?;
        Self::new(grid, data)
    }

    /// Constant map u = p (p gets normalized).
    pub fn constant(grid: PeriodicGrid, p: &[f64]) -> Result<Self, FieldError> {
        let unit = geometry::project_to_sphere(p).map_err(|_| FieldError::ZeroVector { node: 0 })?;
        let data = Array2::from_shape_fn((unit.len(), grid.n_points()), |(r, _)| unit[r]);
        Self::new(grid, data)
    }

    /// Samples a pointwise closure x -> R^{dim} and normalizes.
    pub fn from_fn(
        grid: PeriodicGrid,
        dim: usize,
        mut f: impl FnMut(f64, &mut [f64]),
    ) -> Result<Self, FieldError> {
        let mut data = Array2::zeros((dim, grid.n_points()));
        let mut buf = vec![0.0; dim];
        for i in 0..grid.n_points() {
            f(grid.node(i), &mut buf);
            for r in 0..dim {
                data[[r, i]] = buf[r];
            }
        }
        Self::project_ambient(grid, &data)
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.grid
    }

    /// Ambient dimension n+1.
    pub fn ambient_dim(&self) -> usize {
        self.data.nrows()
    }

    /// Sphere dimension n.
    pub fn sphere_dim(&self) -> usize {
        self.ambient_dim() - 1
    }

    pub fn n_points(&self) -> usize {
        self.grid.n_points()
    }

    /// Components-by-nodes sample array.
    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn sample(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.column(i)
    }

    /// max_i | |u_i| - 1 |.
    pub fn constraint_error(&self) -> f64 {
        let (dim, n) = self.data.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            let mut sq = 0.0;
            for r in 0..dim {
                sq += self.data[[r, i]] * self.data[[r, i]];
            }
            worst = worst.max((sq.sqrt() - 1.0).abs());
        }
        worst
    }

    /// Supremum over nodes of the Euclidean distance to another field.
    pub fn sup_distance(&self, other: &SphereField) -> f64 {
        assert_eq!(self.data.dim(), other.data.dim(), "field shape mismatch");
        let (dim, n) = self.data.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            let mut sq = 0.0;
            for r in 0..dim {
                let d = self.data[[r, i]] - other.data[[r, i]];
                sq += d * d;
            }
            worst = worst.max(sq.sqrt());
        }
        worst
    }

    /// Classical W^{1,2} norm of the ambient difference u - v:
    /// ||u - v||_{L^2} + ||(u - v)_x||_{L^2}.
    pub fn w12_distance(&self, other: &SphereField) -> Result<f64, FieldError> {
        assert_eq!(self.data.dim(), other.data.dim(), "field shape mismatch");
        let diff = self.data.as_ref() - other.data.as_ref();
        let dx = grid::derivative_rows(self.grid, &diff, 1, Scheme::Spectral)?;
        Ok(l2_norm(self.grid, &diff) + l2_norm(self.grid, &dx))
    }

    pub(crate) fn shares_storage(&self, other: &SphereField) -> bool {
        Arc::ptr_eq(&self.data, &other.data)
    }
}

/// JSON schema for field serialization: samples as an n_points x (n+1)
/// array of rows plus grid/seed metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldJson {
    pub n_points: usize,
    pub sphere_dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub samples: Vec<Vec<f64>>,
}

impl SphereField {
    pub fn to_json(&self, seed: Option<u64>) -> FieldJson {
        let (dim, n) = self.data.dim();
        let samples = (0..n)
            .map(|i| (0..dim).map(|r| self.data[[r, i]]).collect())
            .collect();
        FieldJson {
            n_points: n,
            sphere_dim: self.sphere_dim(),
            seed,
            samples,
        }
    }

    pub fn from_json(json: &FieldJson) -> Result<Self, FieldError> {
        let grid = PeriodicGrid::new(json.n_points)?;
        let dim = json.sphere_dim + 1;
        if json.samples.len() != json.n_points {
            return Err(FieldError::LengthMismatch {
                expected: json.n_points,
                got: json.samples.len(),
            });
        }
        let mut data = Array2::zeros((dim, json.n_points));
        for (i, row) in json.samples.iter().enumerate() {
            if row.len() != dim {
                return Err(FieldError::BadDimension { dim: row.len() });
            }
            for (r, v) in row.iter().enumerate() {
                data[[r, i]] = *v;
            }
        }
        Self::new(grid, data)
    }
}

/// Sampled section of the pull-back bundle u*TS^n (e.g. u_x or its covariant
/// derivatives). Holds its base map; bases are compared by storage identity
/// first and by value as a fallback.
#[derive(Debug, Clone)]
pub struct TangentField {
    base: SphereField,
    data: Array2<f64>,
}

impl TangentField {
    pub fn new(base: SphereField, data: Array2<f64>) -> Result<Self, FieldError> {
        if data.dim() != base.data.dim() {
            return Err(FieldError::LengthMismatch {
                expected: base.n_points(),
                got: data.ncols(),
            });
        }
        let (dim, n) = data.dim();
        for i in 0..n {
            let mut ip = 0.0;
            let mut sq = 0.0;
            for r in 0..dim {
                let v = data[[r, i]];
                if !v.is_finite() {
                    return Err(FieldError::NonFinite { node: i });
                }
                ip += base.data[[r, i]] * v;
                sq += v * v;
            }
            if ip.abs() > TANGENCY_TOL * (1.0 + sq.sqrt()) {
                return Err(FieldError::NotTangent { node: i, value: ip });
            }
        }
        Ok(Self { base, data })
    }

    pub fn base(&self) -> &SphereField {
        &self.base
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.base.grid
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn sample(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.column(i)
    }

    /// L^2 norm with respect to the grid quadrature.
    pub fn l2_norm(&self) -> f64 {
        l2_norm(self.base.grid, &self.data)
    }

    /// max_i |V_i|.
    pub fn sup_norm(&self) -> f64 {
        sup_norm_columns(&self.data)
    }

    /// Worst pointwise inner product with the base map.
    pub fn tangency_error(&self) -> f64 {
        let (dim, n) = self.data.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            let mut ip = 0.0;
            for r in 0..dim {
                ip += self.base.data[[r, i]] * self.data[[r, i]];
            }
            worst = worst.max(ip.abs());
        }
        worst
    }

    /// The scaled section lambda V over the same base.
    pub fn scaled(&self, lambda: f64) -> TangentField {
        TangentField {
            base: self.base.clone(),
            data: &self.data * lambda,
        }
    }

    /// Supremum over nodes of the Euclidean distance to another section.
    pub fn sup_distance(&self, other: &TangentField) -> f64 {
        assert_eq!(self.data.dim(), other.data.dim(), "section shape mismatch");
        let mut worst = 0.0f64;
        let (dim, n) = self.data.dim();
        for i in 0..n {
            let mut sq = 0.0;
            for r in 0..dim {
                let d = self.data[[r, i]] - other.data[[r, i]];
                sq += d * d;
            }
            worst = worst.max(sq.sqrt());
        }
        worst
    }
}

fn same_base(u: &SphereField, v: &TangentField) -> bool {
    u.grid == v.base.grid && (u.shares_storage(&v.base) || u.data == v.base.data)
}

/// Normalizes every column to unit length; Err carries the first bad node.
/// Non-finite norms fail the `norm > floor` test, so blown-up states are
/// rejected here as well.
pub(crate) fn normalize_columns(data: &mut Array2<f64>) -> Result<(), usize> {
    let (dim, n) = data.dim();
    let flat = data.as_slice_mut().expect("standard layout");
    for i in 0..n {
        let mut sq = 0.0;
        for r in 0..dim {
            let v = flat[r * n + i];
            sq += v * v;
        }
        let norm = sq.sqrt();
        if !(norm > geometry::NORM_FLOOR) || !norm.is_finite() {
            return Err(i);
        }
        let inv = 1.0 / norm;
        for r in 0..dim {
            flat[r * n + i] *= inv;
        }
    }
    Ok(())
}

/// Projects every column of `v` onto the tangent space at the matching
/// column of `base`: v_i <- v_i - (u_i, v_i) u_i.
pub(crate) fn tangent_project_columns(base: &Array2<f64>, v: &mut Array2<f64>) {
    let (dim, n) = base.dim();
    debug_assert_eq!(v.dim(), (dim, n));
    let b = base.as_slice().expect("standard layout");
    let x = v.as_slice_mut().expect("standard layout");
    for i in 0..n {
        let mut ip = 0.0;
        for r in 0..dim {
            ip += b[r * n + i] * x[r * n + i];
        }
        for r in 0..dim {
            x[r * n + i] -= ip * b[r * n + i];
        }
    }
}

/// L^2 norm of a components-by-nodes array under the grid quadrature.
pub fn l2_norm(grid: PeriodicGrid, data: &Array2<f64>) -> f64 {
    let (dim, n) = data.dim();
    debug_assert_eq!(n, grid.n_points());
    let flat = data.as_slice().expect("standard layout");
    let mut sum = 0.0;
    for i in 0..n {
        let mut sq = 0.0;
        for r in 0..dim {
            let v = flat[r * n + i];
            sq += v * v;
        }
        sum += sq;
    }
    (grid.spacing() * sum).sqrt()
}

fn sup_norm_columns(data: &Array2<f64>) -> f64 {
    let (dim, n) = data.dim();
    let flat = data.as_slice().expect("standard layout");
    let mut worst = 0.0f64;
    for i in 0..n {
        let mut sq = 0.0;
        for r in 0..dim {
            let v = flat[r * n + i];
            sq += v * v;
        }
        worst = worst.max(sq);
    }
    worst.sqrt()
}

/// max over nodes of |f|, for scalar integrands.
pub fn sup_norm_scalar(f: &ScalarField) -> f64 {
    f.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// The derivative u_x as a section of u*TS^n: componentwise derivative,
/// re-projected to the tangent spaces to kill discretization leakage.
pub fn map_derivative(u: &SphereField) -> Result<TangentField, FieldError> {
    map_derivative_with_scheme(u, Scheme::Spectral)
}

pub fn map_derivative_with_scheme(
    u: &SphereField,
    scheme: Scheme,
) -> Result<TangentField, FieldError> {
    let mut data = grid::derivative_rows(u.grid, &u.data, 1, scheme)?;
    tangent_project_columns(&u.data, &mut data);
    TangentField::new(u.clone(), data)
}

/// Covariant derivative of a section along u: tangent projection of the
/// componentwise x-derivative.
pub fn covariant_derivative(
    u: &SphereField,
    v: &TangentField,
) -> Result<TangentField, FieldError> {
    covariant_derivative_with_scheme(u, v, Scheme::Spectral)
}

pub fn covariant_derivative_with_scheme(
    u: &SphereField,
    v: &TangentField,
    scheme: Scheme,
) -> Result<TangentField, FieldError> {
    if !same_base(u, v) {
        return Err(FieldError::BaseMismatch);
    }
    let mut data = grid::derivative_rows(u.grid, &v.data, 1, scheme)?;
    tangent_project_columns(&u.data, &mut data);
    TangentField::new(u.clone(), data)
}

/// k-fold covariant derivative; k = 0 returns the section unchanged.
pub fn covariant_derivative_iter(
    u: &SphereField,
    v: &TangentField,
    k: usize,
) -> Result<TangentField, FieldError> {
    let mut cur = v.clone();
    for _ in 0..k {
        cur = covariant_derivative(u, &cur)?;
    }
    Ok(cur)
}

/// Geometric Sobolev norm of u_x: sum_{l=0..k} ||D_x^l u_x||_{L^2}.
pub fn sobolev_h(u: &SphereField, k: usize) -> f64 {
    let Ok(mut section) = map_derivative(u) else {
        return f64::NAN;
    };
    let mut total = section.l2_norm();
    for _ in 0..k {
        section = match covariant_derivative(u, &section) {
            Ok(s) => s,
            Err(_) => return f64::NAN,
        };
        total += section.l2_norm();
    }
    total
}

/// Classical Sobolev norm of u_x: sum_{l=0..k} ||d_x^l u_x||_{L^2} with
/// ordinary componentwise derivatives of the R^{n+1}-valued function.
pub fn sobolev_w(u: &SphereField, k: usize) -> f64 {
    let Ok(ux) = grid::derivative_rows(u.grid, &u.data, 1, Scheme::Spectral) else {
        return f64::NAN;
    };
    let mut total = l2_norm(u.grid, &ux);
    let mut cur = ux;
    for _ in 0..k {
        cur = match grid::derivative_rows(u.grid, &cur, 1, Scheme::Spectral) {
            Ok(c) => c,
            Err(_) => return f64::NAN,
        };
        total += l2_norm(u.grid, &cur);
    }
    total
}

/// Interpolation ratio ||V||_inf / (||V||_{H^{1,2}}^{1/2} ||V||_{L^2}^{1/2}).
///
/// Invariant under V -> lambda V; finite whenever V is not the zero section.
pub fn interpolation_ratio(u: &SphereField, v: &TangentField) -> Result<f64, FieldError> {
    if !same_base(u, v) {
        return Err(FieldError::BaseMismatch);
    }
    let l2 = v.l2_norm();
    if l2 == 0.0 {
        return Err(FieldError::ZeroSection);
    }
    let dv = covariant_derivative(u, v)?;
    let h12 = l2 + dv.l2_norm();
    Ok(v.sup_norm() / (h12.sqrt() * l2.sqrt()))
}

/// Parameters of the seeded random smooth map generator: a truncated Fourier
/// series with mode-m amplitudes proportional to m^{-decay} and uniform
/// phases, added to a random constant and projected to the sphere pointwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierMapSpec {
    pub seed: u64,
    pub max_mode: usize,
    pub decay: f64,
    pub amplitude: f64,
}

impl Default for FourierMapSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            max_mode: 6,
            decay: 3.0,
            amplitude: 0.3,
        }
    }
}

/// A trigonometric polynomial R -> R^{dim}, independent of any grid; sampling
/// the same map on two grids yields discretizations of one analytic object.
#[derive(Debug, Clone)]
pub struct AnalyticMap {
    constant: Vec<f64>,
    // coefficient layout: [mode][component]
    cos_coeffs: Vec<Vec<f64>>,
    sin_coeffs: Vec<Vec<f64>>,
}

impl AnalyticMap {
    /// Draws coefficients from a ChaCha stream so the map is reproducible
    /// across grids and platforms. Draw order is fixed: constant first, then
    /// per mode per component. The O(1) constant makes the series a
    /// perturbed base point, suitable for projection onto the sphere.
    pub fn random(dim: usize, spec: &FourierMapSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut constant = vec![0.0; dim];
        for c in constant.iter_mut() {
            *c = rng.random_range(-1.0..1.0);
        }
        // keep the base point well away from the origin
        let norm = geometry::norm(&constant);
        if norm < 0.5 {
            constant[0] += 1.0;
        }
        Self::with_constant(dim, spec, &mut rng, constant)
    }

    /// Pure oscillatory series with no constant term, for perturbations and
    /// sections whose size must track `amplitude`.
    pub fn random_zero_mean(dim: usize, spec: &FourierMapSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        Self::with_constant(dim, spec, &mut rng, vec![0.0; dim])
    }

    fn with_constant(
        dim: usize,
        spec: &FourierMapSpec,
        rng: &mut ChaCha8Rng,
        constant: Vec<f64>,
    ) -> Self {
        let mut cos_coeffs = Vec::with_capacity(spec.max_mode);
        let mut sin_coeffs = Vec::with_capacity(spec.max_mode);
        for m in 1..=spec.max_mode {
            let scale = spec.amplitude * (m as f64).powf(-spec.decay);
            let mut cos_m = vec![0.0; dim];
            let mut sin_m = vec![0.0; dim];
            for r in 0..dim {
                let amp = scale * rng.random_range(0.5..1.0);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                cos_m[r] = amp * phase.cos();
                sin_m[r] = -amp * phase.sin();
            }
            cos_coeffs.push(cos_m);
            sin_coeffs.push(sin_m);
        }
        Self {
            constant,
            cos_coeffs,
            sin_coeffs,
        }
    }

    pub fn dim(&self) -> usize {
        self.constant.len()
    }

    /// Evaluates the series at x.
    pub fn eval(&self, x: f64, out: &mut [f64]) {
        out.copy_from_slice(&self.constant);
        for (m, (cos_m, sin_m)) in self.cos_coeffs.iter().zip(&self.sin_coeffs).enumerate() {
            let arg = (m + 1) as f64 * x;
            let (s, c) = arg.sin_cos();
            for r in 0..out.len() {
                out[r] += cos_m[r] * c + sin_m[r] * s;
            }
        }
    }

    /// Raw ambient samples on a grid.
    pub fn sample_raw(&self, grid: PeriodicGrid) -> Array2<f64> {
        let dim = self.dim();
        let mut data = Array2::zeros((dim, grid.n_points()));
        let mut buf = vec![0.0; dim];
        for i in 0..grid.n_points() {
            self.eval(grid.node(i), &mut buf);
            for r in 0..dim {
                data[[r, i]] = buf[r];
            }
        }
        data
    }

    /// Samples and projects to the sphere pointwise.
    pub fn sample_on_sphere(&self, grid: PeriodicGrid) -> Result<SphereField, FieldError> {
        let raw = self.sample_raw(grid);
        SphereField::project_ambient(grid, &raw)
    }
}

/// Random smooth sphere-valued field for the given seed parameters.
pub fn random_smooth_field(
    grid: PeriodicGrid,
    dim: usize,
    spec: &FourierMapSpec,
) -> Result<SphereField, FieldError> {
    AnalyticMap::random(dim, spec).sample_on_sphere(grid)
}

/// Random smooth section over u: tangent projection of an independent
/// zero-mean Fourier series sampled on u's grid.
pub fn random_smooth_section(
    u: &SphereField,
    spec: &FourierMapSpec,
) -> Result<TangentField, FieldError> {
    let noise = AnalyticMap::random_zero_mean(u.ambient_dim(), spec);
    let mut data = noise.sample_raw(u.grid());
    tangent_project_columns(u.data(), &mut data);
    TangentField::new(u.clone(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn great_circle(n: usize) -> SphereField {
        let grid = PeriodicGrid::new(n).unwrap();
        SphereField::from_fn(grid, 3, |x, out| {
            out[0] = x.cos();
            out[1] = x.sin();
            out[2] = 0.0;
        })
        .unwrap()
    }

    fn smooth_field(n: usize, seed: u64) -> SphereField {
        let grid = PeriodicGrid::new(n).unwrap();
        random_smooth_field(
            grid,
            3,
            &FourierMapSpec {
                seed,
                ..FourierMapSpec::default()
            },
        )
        .unwrap()
    }

    /// Independent evaluation of the closed-form identity
    /// D_x u_x = u_xx + |u_x|^2 u from raw spectral derivatives.
    fn nabla_ux_closed_form(u: &SphereField) -> Array2<f64> {
        let ux = grid::derivative_rows(u.grid(), u.data(), 1, Scheme::Spectral).unwrap();
        let uxx = grid::derivative_rows(u.grid(), u.data(), 2, Scheme::Spectral).unwrap();
        let (dim, n) = ux.dim();
        let mut out = Array2::zeros((dim, n));
        for i in 0..n {
            let mut q = 0.0;
            for r in 0..dim {
                q += ux[[r, i]] * ux[[r, i]];
            }
            for r in 0..dim {
                out[[r, i]] = uxx[[r, i]] + q * u.data()[[r, i]];
            }
        }
        out
    }

    /// Independent evaluation of
    /// D_x^2 u_x = u_xxx + 3 (u_x, u_xx) u + |u_x|^2 u_x.
    fn nabla2_ux_closed_form(u: &SphereField) -> Array2<f64> {
        let ux = grid::derivative_rows(u.grid(), u.data(), 1, Scheme::Spectral).unwrap();
        let uxx = grid::derivative_rows(u.grid(), u.data(), 2, Scheme::Spectral).unwrap();
        let uxxx = grid::derivative_rows(u.grid(), u.data(), 3, Scheme::Spectral).unwrap();
        let (dim, n) = ux.dim();
        let mut out = Array2::zeros((dim, n));
        for i in 0..n {
            let mut q = 0.0;
            let mut mixed = 0.0;
            for r in 0..dim {
                q += ux[[r, i]] * ux[[r, i]];
                mixed += ux[[r, i]] * uxx[[r, i]];
            }
            for r in 0..dim {
                out[[r, i]] = uxxx[[r, i]] + 3.0 * mixed * u.data()[[r, i]] + q * ux[[r, i]];
            }
        }
        out
    }

    fn max_abs(data: &Array2<f64>) -> f64 {
        data.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
    }

    #[test]
    fn constant_map_has_zero_derivative() {
        let grid = PeriodicGrid::new(32).unwrap();
        let u = SphereField::constant(grid, &[0.0, 0.6, 0.8]).unwrap();
        let ux = map_derivative(&u).unwrap();
        assert!(ux.sup_norm() <= 1e-13);
        for k in 0..4 {
            assert!(sobolev_h(&u, k) <= 1e-12);
            assert!(sobolev_w(&u, k) <= 1e-12);
        }
    }

    #[test]
    fn great_circle_derivative_is_exact() {
        let u = great_circle(64);
        let ux = map_derivative(&u).unwrap();
        for (i, x) in u.grid().nodes().enumerate() {
            assert!((ux.sample(i)[0] + x.sin()).abs() <= 1e-12);
            assert!((ux.sample(i)[1] - x.cos()).abs() <= 1e-12);
            assert!(ux.sample(i)[2].abs() <= 1e-13);
        }
    }

    #[test]
    fn derivative_is_tangent_after_projection() {
        let u = smooth_field(128, 3);
        let ux = map_derivative(&u).unwrap();
        assert!(ux.tangency_error() <= 1e-10);
    }

    #[test]
    fn covariant_derivative_of_circle_tangent_vanishes() {
        let u = great_circle(64);
        let ux = map_derivative(&u).unwrap();
        let nabla = covariant_derivative(&u, &ux).unwrap();
        assert!(nabla.sup_norm() <= 1e-11);

        // constant normal-free section e3 along the circle
        let e3 = TangentField::new(
            u.clone(),
            Array2::from_shape_fn((3, 64), |(r, _)| if r == 2 { 1.0 } else { 0.0 }),
        )
        .unwrap();
        let de3 = covariant_derivative(&u, &e3).unwrap();
        assert!(de3.sup_norm() <= 1e-12);
    }

    #[test]
    fn covariant_derivative_matches_closed_form() {
        let u = smooth_field(128, 11);
        let ux = map_derivative(&u).unwrap();
        let nabla = covariant_derivative(&u, &ux).unwrap();
        let oracle = nabla_ux_closed_form(&u);
        let diff = nabla.data() - &oracle;
        assert!(max_abs(&diff) <= 1e-8, "residual {}", max_abs(&diff));
    }

    #[test]
    fn iterated_covariant_derivative_matches_closed_form() {
        let u = smooth_field(128, 12);
        let ux = map_derivative(&u).unwrap();
        let nabla2 = covariant_derivative_iter(&u, &ux, 2).unwrap();
        let oracle = nabla2_ux_closed_form(&u);
        let diff = nabla2.data() - &oracle;
        assert!(max_abs(&diff) <= 1e-7, "residual {}", max_abs(&diff));
    }

    #[test]
    fn iterated_covariant_derivative_identity_cases() {
        let u = great_circle(64);
        let ux = map_derivative(&u).unwrap();
        let same = covariant_derivative_iter(&u, &ux, 0).unwrap();
        assert_eq!(same.data(), ux.data());
        let second = covariant_derivative_iter(&u, &ux, 2).unwrap();
        assert!(second.sup_norm() <= 1e-10);
    }

    #[test]
    fn base_mismatch_is_detected() {
        let u = smooth_field(64, 1);
        let v = smooth_field(64, 2);
        let ux = map_derivative(&u).unwrap();
        assert!(matches!(
            covariant_derivative(&v, &ux),
            Err(FieldError::BaseMismatch)
        ));
    }

    #[test]
    fn covariant_integration_by_parts() {
        let u = smooth_field(128, 21);
        let v = random_smooth_section(
            &u,
            &FourierMapSpec {
                seed: 100,
                ..FourierMapSpec::default()
            },
        )
        .unwrap();
        let w = random_smooth_section(
            &u,
            &FourierMapSpec {
                seed: 101,
                ..FourierMapSpec::default()
            },
        )
        .unwrap();
        let dv = covariant_derivative(&u, &v).unwrap();
        let dw = covariant_derivative(&u, &w).unwrap();
        let grid = u.grid();
        let n = grid.n_points();
        let mut total = 0.0;
        for i in 0..n {
            let mut a = 0.0;
            let mut b = 0.0;
            for r in 0..3 {
                a += dv.data()[[r, i]] * w.data()[[r, i]];
                b += v.data()[[r, i]] * dw.data()[[r, i]];
            }
            total += a + b;
        }
        total *= grid.spacing();
        assert!(total.abs() <= 1e-8, "ibp residual {total}");
    }

    #[test]
    fn sobolev_norms_of_great_circle() {
        let u = great_circle(64);
        let root_tau = PeriodicGrid::LENGTH.sqrt();
        assert!((sobolev_h(&u, 1) - root_tau).abs() <= 1e-10);
        assert!((sobolev_h(&u, 3) - root_tau).abs() <= 1e-9);
        assert!((sobolev_w(&u, 1) - 2.0 * root_tau).abs() <= 1e-10);
    }

    #[test]
    fn interpolation_ratio_of_circle_tangent() {
        let u = great_circle(64);
        let ux = map_derivative(&u).unwrap();
        let ratio = interpolation_ratio(&u, &ux).unwrap();
        let expected = 1.0 / PeriodicGrid::LENGTH.sqrt();
        assert!((ratio - expected).abs() <= 1e-12, "ratio {ratio}");
    }

    #[test]
    fn interpolation_ratio_scale_invariant() {
        let u = smooth_field(64, 33);
        let v = random_smooth_section(
            &u,
            &FourierMapSpec {
                seed: 34,
                ..FourierMapSpec::default()
            },
        )
        .unwrap();
        let r1 = interpolation_ratio(&u, &v).unwrap();
        // powers of two rescale all norms exactly
        let r2 = interpolation_ratio(&u, &v.scaled(2.0)).unwrap();
        assert_eq!(r1, r2);
        let r3 = interpolation_ratio(&u, &v.scaled(3.0)).unwrap();
        assert!((r1 - r3).abs() <= 1e-14 * r1.abs());
    }

    #[test]
    fn interpolation_ratio_rejects_zero_section() {
        let u = great_circle(32);
        let zero = TangentField::new(u.clone(), Array2::zeros((3, 32))).unwrap();
        assert!(matches!(
            interpolation_ratio(&u, &zero),
            Err(FieldError::ZeroSection)
        ));
    }

    #[test]
    fn sup_norm_examples() {
        let grid = PeriodicGrid::new(64).unwrap();
        let u = great_circle(64);
        let ux = map_derivative(&u).unwrap();
        assert!((ux.sup_norm() - 1.0).abs() <= 1e-12);
        let f = ScalarField::from_iter(grid.nodes().map(|x| 2.0 * x.sin()));
        let h = grid.spacing();
        assert!((sup_norm_scalar(&f) - 2.0).abs() <= h * h / 2.0);
        assert_eq!(sup_norm_scalar(&ScalarField::zeros(64)), 0.0);
    }

    #[test]
    fn random_fields_are_seed_deterministic_and_grid_consistent() {
        let spec = FourierMapSpec {
            seed: 77,
            ..FourierMapSpec::default()
        };
        let a = smooth_field(64, 77);
        let b = smooth_field(64, 77);
        assert_eq!(a.data(), b.data());

        // sampling the same analytic map on a finer grid agrees at shared nodes
        let map = AnalyticMap::random(3, &spec);
        let coarse = map.sample_on_sphere(PeriodicGrid::new(64).unwrap()).unwrap();
        let fine = map.sample_on_sphere(PeriodicGrid::new(128).unwrap()).unwrap();
        for i in 0..64 {
            for r in 0..3 {
                assert!((coarse.data()[[r, i]] - fine.data()[[r, 2 * i]]).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let u = smooth_field(64, 5);
        let json = u.to_json(Some(5));
        let text = serde_json::to_string(&json).unwrap();
        let parsed: FieldJson = serde_json::from_str(&text).unwrap();
        let back = SphereField::from_json(&parsed).unwrap();
        assert_eq!(u.data(), back.data());
    }

    #[test]
    fn sphere_invariant_is_enforced() {
        let grid = PeriodicGrid::new(16).unwrap();
        let mut data = Array2::zeros((3, 16));
        data.row_mut(0).fill(1.0);
        data[[0, 7]] = 1.1;
        assert!(matches!(
            SphereField::new(grid, data),
            Err(FieldError::NotOnSphere { node: 7, .. })
        ));
    }

    #[test]
    fn tangency_invariant_is_enforced() {
        let u = great_circle(16);
        let mut data = Array2::zeros((3, 16));
        data.row_mut(0).fill(0.5); // radial at x = 0
        assert!(matches!(
            TangentField::new(u, data),
            Err(FieldError::NotTangent { .. })
        ));
    }
}
