//! Right-hand sides of the flow family and constraint-preserving explicit
//! time integration.
//!
//! The same third-order flow is available in two algebraically identical
//! writings, which the test suite cross-checks against each other:
//!
//! * extrinsic: `u_t = (u_xx + 3/2 |u_x|^2 u)_x + 3/2 (u,Au) u_x`, expanded
//!   to `u_xxx + 3 (u_x,u_xx) u + 3/2 |u_x|^2 u_x + 3/2 (u,Au) u_x` with
//!   ordinary spectral derivatives;
//! * intrinsic: `u_t = D_x^2 u_x + 1/2 |u_x|^2 u_x + 3/2 (u,Au) u_x` with
//!   iterated covariant derivatives.
//!
//! The regularized form adds the 4th-order parabolic term `-eps D_x^3 u_x`,
//! and for maps into S^2 the classical Landau-Lifshitz right-hand side
//! `u x u_xx + (Au) x u` is provided as well.
//!
//! Time stepping is classical RK4 with pointwise renormalization after every
//! stage and after the update, so the unit-sphere constraint is enforced
//! exactly (up to rounding) along the whole trajectory.

use crate::energies::{self, DiagnosticsRecord, EnergyKind, SemiConservationReport};
use crate::fields::{self, FieldError, SphereField, TangentField};
use crate::geometry::PotentialMatrix;
use crate::grid::{self, GridError, PeriodicGrid, Scheme};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Default CFL fraction for [`stable_dt`].
pub const DEFAULT_CFL: f64 = 0.05;

/// Which right-hand side drives the evolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowForm {
    Extrinsic,
    Intrinsic,
    Regularized,
    ClassicalLl,
}

impl fmt::Display for FlowForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FlowForm::Extrinsic => "extrinsic",
            FlowForm::Intrinsic => "intrinsic",
            FlowForm::Regularized => "regularized",
            FlowForm::ClassicalLl => "classical_ll",
        };
        write!(f, "{s}")
    }
}

impl FromStr for FlowForm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "extrinsic" => Ok(FlowForm::Extrinsic),
            "intrinsic" => Ok(FlowForm::Intrinsic),
            "regularized" => Ok(FlowForm::Regularized),
            "classical_ll" => Ok(FlowForm::ClassicalLl),
            other => Err(format!(
                "unknown flow form '{other}' (expected extrinsic|intrinsic|regularized|classical_ll)"
            )),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("epsilon must lie in (0, 1] for the regularized flow (got {got})")]
    InvalidEpsilon { got: f64 },
    #[error("epsilon must be 0 unless the form is regularized (got {got} for {form})")]
    EpsilonUnused { form: FlowForm, got: f64 },
    #[error("the classical Landau-Lifshitz form needs sphere dimension 2 (got {got})")]
    WrongDimension { got: usize },
    #[error("potential dimension {potential} does not match ambient dimension {ambient}")]
    PotentialDimension { potential: usize, ambient: usize },
    #[error("{name} must be positive (got {got})")]
    NonPositive { name: &'static str, got: f64 },
    #[error("sample_every must be >= 1")]
    BadSampleEvery,
    #[error("time step produced a non-finite or degenerate state")]
    NonFinite,
    #[error("instability: state became non-finite at t = {t:.6e}")]
    Instability { t: f64 },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Everything needed to march one trajectory.
#[derive(Debug, Clone)]
pub struct FlowSpec {
    pub form: FlowForm,
    /// Strength of the 4th-order regularization; must be 0 unless
    /// `form == Regularized`, and in (0, 1] when it is.
    pub epsilon: f64,
    pub potential: PotentialMatrix,
    pub t_end: f64,
    pub cfl: f64,
    pub scheme: Scheme,
    /// Diagnostics are recorded every this many full steps.
    pub sample_every: usize,
}

impl FlowSpec {
    pub fn new(form: FlowForm, potential: PotentialMatrix) -> Self {
        Self {
            form,
            epsilon: 0.0,
            potential,
            t_end: 1.0,
            cfl: DEFAULT_CFL,
            scheme: Scheme::Spectral,
            sample_every: 16,
        }
    }

    pub fn validate(&self, sphere_dim: usize) -> Result<(), DynamicsError> {
        if self.form == FlowForm::Regularized {
            if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
                return Err(DynamicsError::InvalidEpsilon { got: self.epsilon });
            }
        } else if self.epsilon != 0.0 {
            return Err(DynamicsError::EpsilonUnused {
                form: self.form,
                got: self.epsilon,
            });
        }
        if self.form == FlowForm::ClassicalLl && sphere_dim != 2 {
            return Err(DynamicsError::WrongDimension { got: sphere_dim });
        }
        if self.potential.dim() != sphere_dim + 1 {
            return Err(DynamicsError::PotentialDimension {
                potential: self.potential.dim(),
                ambient: sphere_dim + 1,
            });
        }
        if !(self.t_end > 0.0) {
            return Err(DynamicsError::NonPositive {
                name: "t_end",
                got: self.t_end,
            });
        }
        if !(self.cfl > 0.0) {
            return Err(DynamicsError::NonPositive {
                name: "cfl",
                got: self.cfl,
            });
        }
        if self.sample_every == 0 {
            return Err(DynamicsError::BadSampleEvery);
        }
        Ok(())
    }

    fn effective_epsilon(&self) -> f64 {
        if self.form == FlowForm::Regularized {
            self.epsilon
        } else {
            0.0
        }
    }
}

/// Explicit-step budget for the dispersive 3rd-order + parabolic eps-4th-order
/// operator mix: `dt = cfl * min(h^3, h^4 / max(eps, h))`.
pub fn stable_dt(grid: PeriodicGrid, epsilon: f64, cfl: f64) -> f64 {
    let h = grid.spacing();
    cfl * (h.powi(3)).min(h.powi(4) / epsilon.max(h))
}

/// Sampled solution of one run: times, states at the sample instants, and the
/// matching diagnostics records.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SphereField>,
    pub diagnostics: Vec<DiagnosticsRecord>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory has samples")
    }

    pub fn final_state(&self) -> &SphereField {
        self.states.last().expect("trajectory has samples")
    }

    /// Semi-conservation fit of a tracked energy along this trajectory.
    pub fn semi_conservation(
        &self,
        which: EnergyKind,
    ) -> Result<SemiConservationReport, energies::EnergiesError> {
        energies::semi_conservation_check(&self.diagnostics, which)
    }
}

// ---------------------------------------------------------------------------
// Right-hand sides
// ---------------------------------------------------------------------------

/// Extrinsic right-hand side
/// `u_xxx + 3 (u_x,u_xx) u + 3/2 |u_x|^2 u_x + 3/2 (u,Au) u_x`.
///
/// Tangency (u, rhs) = 0 holds analytically through
/// (u, u_xxx) = -3 (u_x, u_xx); no projection is applied to the output, so
/// the pointwise inner product with u measures discretization quality.
pub fn rhs_extrinsic(u: &SphereField, a: &PotentialMatrix) -> Result<TangentField, DynamicsError> {
    rhs_extrinsic_with_scheme(u, a, Scheme::Spectral)
}

pub fn rhs_extrinsic_with_scheme(
    u: &SphereField,
    a: &PotentialMatrix,
    scheme: Scheme,
) -> Result<TangentField, DynamicsError> {
    rhs_once(u, FlowForm::Extrinsic, a, 0.0, scheme)
}

/// Intrinsic right-hand side `D_x^2 u_x + 1/2 |u_x|^2 u_x + 3/2 (u,Au) u_x`
/// built from iterated covariant derivatives.
pub fn rhs_intrinsic(u: &SphereField, a: &PotentialMatrix) -> Result<TangentField, DynamicsError> {
    rhs_intrinsic_with_scheme(u, a, Scheme::Spectral)
}

pub fn rhs_intrinsic_with_scheme(
    u: &SphereField,
    a: &PotentialMatrix,
    scheme: Scheme,
) -> Result<TangentField, DynamicsError> {
    rhs_once(u, FlowForm::Intrinsic, a, 0.0, scheme)
}

/// Regularized right-hand side `-eps D_x^3 u_x + ` intrinsic. With
/// `epsilon == 0` the extra term is skipped entirely, so the result is
/// bit-for-bit the intrinsic one.
pub fn rhs_regularized(
    u: &SphereField,
    a: &PotentialMatrix,
    epsilon: f64,
) -> Result<TangentField, DynamicsError> {
    rhs_regularized_with_scheme(u, a, epsilon, Scheme::Spectral)
}

pub fn rhs_regularized_with_scheme(
    u: &SphereField,
    a: &PotentialMatrix,
    epsilon: f64,
    scheme: Scheme,
) -> Result<TangentField, DynamicsError> {
    if epsilon < 0.0 {
        return Err(DynamicsError::InvalidEpsilon { got: epsilon });
    }
    rhs_once(u, FlowForm::Regularized, a, epsilon, scheme)
}

/// Classical Landau-Lifshitz right-hand side `u x u_xx + (Au) x u` for maps
/// into S^2; cross products with u are tangent by construction.
pub fn rhs_classical_ll(
    u: &SphereField,
    a: &PotentialMatrix,
) -> Result<TangentField, DynamicsError> {
    if u.sphere_dim() != 2 {
        return Err(DynamicsError::WrongDimension {
            got: u.sphere_dim(),
        });
    }
    rhs_once(u, FlowForm::ClassicalLl, a, 0.0, Scheme::Spectral)
}

fn rhs_once(
    u: &SphereField,
    form: FlowForm,
    a: &PotentialMatrix,
    epsilon: f64,
    scheme: Scheme,
) -> Result<TangentField, DynamicsError> {
    if a.dim() != u.ambient_dim() {
        return Err(DynamicsError::PotentialDimension {
            potential: a.dim(),
            ambient: u.ambient_dim(),
        });
    }
    let mut engine = Engine::new(u.grid(), u.ambient_dim(), form, a.clone(), epsilon, scheme);
    let mut out = Array2::zeros(u.data().dim());
    engine.rhs_into(u.data(), &mut out);
    if out.iter().any(|x| !x.is_finite()) {
        return Err(DynamicsError::NonFinite);
    }
    Ok(TangentField::new(u.clone(), out)?)
}

// ---------------------------------------------------------------------------
// Integration
// ---------------------------------------------------------------------------

/// One classical RK4 step in ambient space. Each stage input and the final
/// update are renormalized pointwise, which restores the sphere invariant
/// exactly.
pub fn step_rk4<F>(u: &SphereField, rhs: F, dt: f64) -> Result<SphereField, DynamicsError>
where
    F: Fn(&SphereField) -> Result<TangentField, DynamicsError>,
{
    if !(dt > 0.0) {
        return Err(DynamicsError::NonPositive { name: "dt", got: dt });
    }
    let grid = u.grid();
    let stage = |base: &SphereField, k: &TangentField, c: f64| -> Result<SphereField, DynamicsError> {
        let raw = base.data() + &(k.data() * c);
        SphereField::project_ambient(grid, &raw).map_err(|e| match e {
            FieldError::ZeroVector { .. } | FieldError::NonFinite { .. } => DynamicsError::NonFinite,
            other => DynamicsError::Field(other),
        })
    };
    let k1 = rhs(u)?;
    let s2 = stage(u, &k1, 0.5 * dt)?;
    let k2 = rhs(&s2)?;
    let s3 = stage(u, &k2, 0.5 * dt)?;
    let k3 = rhs(&s3)?;
    let s4 = stage(u, &k3, dt)?;
    let k4 = rhs(&s4)?;
    let accum =
        k1.data() + &(k2.data() * 2.0) + &(k3.data() * 2.0) + k4.data();
    let raw = u.data() + &(&accum * (dt / 6.0));
    SphereField::project_ambient(grid, &raw).map_err(|e| match e {
        FieldError::ZeroVector { .. } | FieldError::NonFinite { .. } => DynamicsError::NonFinite,
        other => DynamicsError::Field(other),
    })
}

/// Fixed-step RK4 march to `spec.t_end`, the last step shortened to land
/// exactly on the horizon. Diagnostics are sampled at t = 0, every
/// `sample_every` full steps, and at the final time.
///
/// Instability surfaces through two detectors: a stage that cannot be
/// renormalized (non-finite or near-zero samples), and a kinetic integral
/// int |u_x|^2 exceeding a generous multiple of its conservation bound
/// 2 E1(0) + 2 |A| 2pi. The second detector is what actually fires in
/// practice: per-stage renormalization keeps every sample on the sphere, so
/// an unstable march degrades into bounded grid noise instead of
/// overflowing, and energy blow-up is the observable signature.
pub fn evolve(u0: &SphereField, spec: &FlowSpec) -> Result<Trajectory, DynamicsError> {
    spec.validate(u0.sphere_dim())?;
    let grid = u0.grid();
    let dt = stable_dt(grid, spec.effective_epsilon(), spec.cfl);
    let mut engine = Engine::new(
        grid,
        u0.ambient_dim(),
        spec.form,
        spec.potential.clone(),
        spec.effective_epsilon(),
        spec.scheme,
    );
    let mut stepper = Rk4Buffers::new(u0.ambient_dim(), grid.n_points());

    let mut state = u0.data().clone();
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        diagnostics: Vec::new(),
    };
    let record = |t: f64, state: &Array2<f64>, traj: &mut Trajectory| {
        let field = SphereField::new(grid, state.clone()).expect("projected state is valid");
        traj.diagnostics
            .push(energies::diagnostics(t, &field, &spec.potential));
        traj.times.push(t);
        traj.states.push(field);
    };
    record(0.0, &state, &mut traj);

    let kinetic_0 = engine.kinetic(&state);
    let potential_sup = 2.0 * spec.potential.spectral_bound() * PeriodicGrid::LENGTH;
    let kinetic_bound = 10.0 * (2.0 * traj.diagnostics[0].e1.abs() + potential_sup + 1.0);
    if kinetic_0 > kinetic_bound {
        return Err(DynamicsError::Instability { t: 0.0 });
    }

    let n_full = (spec.t_end / dt).floor() as usize;
    let mut remainder = spec.t_end - n_full as f64 * dt;
    if remainder <= 1e-9 * dt {
        remainder = 0.0;
    }
    for step in 1..=n_full {
        let t_before = (step - 1) as f64 * dt;
        let kinetic = stepper
            .advance(&mut engine, &mut state, dt)
            .map_err(|_| DynamicsError::Instability { t: t_before })?;
        if kinetic > kinetic_bound {
            return Err(DynamicsError::Instability { t: t_before });
        }
        let is_last = step == n_full && remainder == 0.0;
        if step % spec.sample_every == 0 && !is_last {
            record(step as f64 * dt, &state, &mut traj);
        }
    }
    if remainder > 0.0 {
        let t_before = n_full as f64 * dt;
        let kinetic = stepper
            .advance(&mut engine, &mut state, remainder)
            .map_err(|_| DynamicsError::Instability { t: t_before })?;
        if kinetic > kinetic_bound {
            return Err(DynamicsError::Instability { t: t_before });
        }
    }
    if engine.kinetic(&state) > kinetic_bound {
        return Err(DynamicsError::Instability { t: spec.t_end });
    }
    record(spec.t_end, &state, &mut traj);
    Ok(traj)
}

// ---------------------------------------------------------------------------
// Engine: allocation-free evaluation of right-hand sides
// ---------------------------------------------------------------------------

/// Scratch buffers for one trajectory; all arrays are components-by-nodes.
struct Engine {
    grid: PeriodicGrid,
    dim: usize,
    n: usize,
    form: FlowForm,
    epsilon: f64,
    potential: PotentialMatrix,
    potential_zero: bool,
    scheme: Scheme,
    ws: grid::SpectralWorkspace,
    d1: Array2<f64>,
    d2: Array2<f64>,
    d3: Array2<f64>,
    d4: Array2<f64>,
    au: Array2<f64>,
}

impl Engine {
    fn new(
        grid: PeriodicGrid,
        dim: usize,
        form: FlowForm,
        potential: PotentialMatrix,
        epsilon: f64,
        scheme: Scheme,
    ) -> Self {
        let n = grid.n_points();
        let potential_zero = potential.is_zero();
        Self {
            grid,
            dim,
            n,
            form,
            epsilon,
            potential,
            potential_zero,
            scheme,
            ws: grid::SpectralWorkspace::new(n),
            d1: Array2::zeros((dim, n)),
            d2: Array2::zeros((dim, n)),
            d3: Array2::zeros((dim, n)),
            d4: Array2::zeros((dim, n)),
            au: Array2::zeros((dim, n)),
        }
    }

    /// Derivatives of orders 1..=max_order of `state` into d1..d_max, one
    /// forward transform per component in the spectral case.
    fn raw_derivatives(&mut self, state: &Array2<f64>, max_order: usize) {
        match self.scheme {
            Scheme::Spectral => {
                let n = self.n;
                for r in 0..self.dim {
                    self.ws
                        .forward(&state.as_slice().expect("standard layout")[r * n..(r + 1) * n]);
                    let bufs = [&mut self.d1, &mut self.d2, &mut self.d3, &mut self.d4];
                    for (order, dst) in bufs.into_iter().enumerate().take(max_order) {
                        let row =
                            &mut dst.as_slice_mut().expect("standard layout")[r * n..(r + 1) * n];
                        self.ws.derivative_into(order + 1, row);
                    }
                }
            }
            Scheme::Fd4 => {
                for order in 1..=max_order {
                    let out = grid::derivative_rows(self.grid, state, order, Scheme::Fd4)
                        .expect("shapes fixed at construction");
                    match order {
                        1 => self.d1.assign(&out),
                        2 => self.d2.assign(&out),
                        3 => self.d3.assign(&out),
                        _ => self.d4.assign(&out),
                    }
                }
            }
        }
    }

    /// Covariant chain: d1 = D_x u_x at level 0 (the projected derivative of
    /// u itself), then d_{l+1} = tangent projection of d_x(d_l).
    fn covariant_chain(&mut self, state: &Array2<f64>, levels: usize) {
        let Engine {
            ws,
            grid: g,
            scheme,
            d1,
            d2,
            d3,
            d4,
            ..
        } = self;
        first_derivative(ws, *g, *scheme, state, d1);
        fields::tangent_project_columns(state, d1);
        if levels >= 1 {
            first_derivative(ws, *g, *scheme, d1, d2);
            fields::tangent_project_columns(state, d2);
        }
        if levels >= 2 {
            first_derivative(ws, *g, *scheme, d2, d3);
            fields::tangent_project_columns(state, d3);
        }
        if levels >= 3 {
            first_derivative(ws, *g, *scheme, d3, d4);
            fields::tangent_project_columns(state, d4);
        }
    }

    /// int |u_x|^2 of `state`; clobbers d1.
    fn kinetic(&mut self, state: &Array2<f64>) -> f64 {
        let Engine {
            ws,
            grid: g,
            scheme,
            d1,
            ..
        } = self;
        first_derivative(ws, *g, *scheme, state, d1);
        self.d1_square_integral()
    }

    /// int |d1|^2 under the grid quadrature (d1 holds u_x after any rhs
    /// evaluation, raw or projected depending on the form).
    fn d1_square_integral(&self) -> f64 {
        let sum: f64 = self
            .d1
            .as_slice()
            .expect("standard layout")
            .iter()
            .map(|x| x * x)
            .sum();
        self.grid.spacing() * sum
    }

    fn potential_field(&mut self, state: &Array2<f64>) {
        if self.potential_zero {
            return;
        }
        let dim = self.dim;
        let n = self.n;
        let au = self.au.as_slice_mut().expect("standard layout");
        au.fill(0.0);
        let s = state.as_slice().expect("standard layout");
        let entries = self.potential.entries();
        for r in 0..dim {
            for c in 0..dim {
                let w = entries[[r, c]];
                if w != 0.0 {
                    let dst = &mut au[r * n..(r + 1) * n];
                    let src = &s[c * n..(c + 1) * n];
                    for (d, x) in dst.iter_mut().zip(src) {
                        *d += w * x;
                    }
                }
            }
        }
    }

    /// Evaluates the configured right-hand side at `state` into `out`.
    fn rhs_into(&mut self, state: &Array2<f64>, out: &mut Array2<f64>) {
        debug_assert_eq!(state.dim(), (self.dim, self.n));
        debug_assert_eq!(out.dim(), (self.dim, self.n));
        self.potential_field(state);
        match self.form {
            FlowForm::Extrinsic => {
                self.raw_derivatives(state, 3);
                self.combine_extrinsic(state, out);
            }
            FlowForm::Intrinsic => {
                self.covariant_chain(state, 2);
                self.combine_intrinsic(state, out, 0.0);
            }
            FlowForm::Regularized => {
                self.covariant_chain(state, 3);
                self.combine_intrinsic(state, out, self.epsilon);
            }
            FlowForm::ClassicalLl => {
                self.raw_derivatives(state, 2);
                self.combine_classical(state, out);
            }
        }
        // Analytic tangency of the combined right-hand side holds to spectral
        // accuracy but only to O(h^4) under finite differences; re-project so
        // fd4 output satisfies the section invariant.
        if self.scheme == Scheme::Fd4 {
            fields::tangent_project_columns(state, out);
        }
    }

    fn combine_extrinsic(&self, state: &Array2<f64>, out: &mut Array2<f64>) {
        let dim = self.dim;
        let n = self.n;
        let u = state.as_slice().expect("standard layout");
        let ux = self.d1.as_slice().expect("standard layout");
        let uxx = self.d2.as_slice().expect("standard layout");
        let uxxx = self.d3.as_slice().expect("standard layout");
        let au = self.au.as_slice().expect("standard layout");
        let o = out.as_slice_mut().expect("standard layout");
        for i in 0..n {
            let mut q = 0.0;
            let mut mixed = 0.0;
            let mut pot = 0.0;
            for r in 0..dim {
                let j = r * n + i;
                q += ux[j] * ux[j];
                mixed += ux[j] * uxx[j];
                if !self.potential_zero {
                    pot += u[j] * au[j];
                }
            }
            let c = 1.5 * (q + pot);
            for r in 0..dim {
                let j = r * n + i;
                o[j] = uxxx[j] + 3.0 * mixed * u[j] + c * ux[j];
            }
        }
    }

    fn combine_intrinsic(&self, state: &Array2<f64>, out: &mut Array2<f64>, epsilon: f64) {
        let dim = self.dim;
        let n = self.n;
        let u = state.as_slice().expect("standard layout");
        let ux = self.d1.as_slice().expect("standard layout");
        let nabla2 = self.d3.as_slice().expect("standard layout");
        let nabla3 = self.d4.as_slice().expect("standard layout");
        let au = self.au.as_slice().expect("standard layout");
        let o = out.as_slice_mut().expect("standard layout");
        for i in 0..n {
            let mut q = 0.0;
            let mut pot = 0.0;
            for r in 0..dim {
                let j = r * n + i;
                q += ux[j] * ux[j];
                if !self.potential_zero {
                    pot += u[j] * au[j];
                }
            }
            let c = 0.5 * q + 1.5 * pot;
            for r in 0..dim {
                let j = r * n + i;
                o[j] = nabla2[j] + c * ux[j];
            }
        }
        if epsilon != 0.0 {
            for (o, v) in out
                .as_slice_mut()
                .expect("standard layout")
                .iter_mut()
                .zip(nabla3)
            {
                *o -= epsilon * v;
            }
        }
    }

    fn combine_classical(&self, state: &Array2<f64>, out: &mut Array2<f64>) {
        debug_assert_eq!(self.dim, 3);
        let n = self.n;
        let u = state.as_slice().expect("standard layout");
        let uxx = self.d2.as_slice().expect("standard layout");
        let au = self.au.as_slice().expect("standard layout");
        let o = out.as_slice_mut().expect("standard layout");
        for i in 0..n {
            let p = [u[i], u[n + i], u[2 * n + i]];
            let w = [uxx[i], uxx[n + i], uxx[2 * n + i]];
            let a = if self.potential_zero {
                [0.0; 3]
            } else {
                [au[i], au[n + i], au[2 * n + i]]
            };
            // u x u_xx + (Au) x u
            o[i] = p[1] * w[2] - p[2] * w[1] + a[1] * p[2] - a[2] * p[1];
            o[n + i] = p[2] * w[0] - p[0] * w[2] + a[2] * p[0] - a[0] * p[2];
            o[2 * n + i] = p[0] * w[1] - p[1] * w[0] + a[0] * p[1] - a[1] * p[0];
        }
    }
}

/// First derivative of every row of `src` into `dst` under `scheme`.
fn first_derivative(
    ws: &mut grid::SpectralWorkspace,
    g: PeriodicGrid,
    scheme: Scheme,
    src: &Array2<f64>,
    dst: &mut Array2<f64>,
) {
    match scheme {
        Scheme::Spectral => {
            for (s, mut d) in src.rows().into_iter().zip(dst.rows_mut()) {
                ws.forward(s.as_slice().expect("standard layout"));
                ws.derivative_into(1, d.as_slice_mut().expect("standard layout"));
            }
        }
        Scheme::Fd4 => {
            let out =
                grid::derivative_rows(g, src, 1, Scheme::Fd4).expect("shapes fixed at construction");
            dst.assign(&out);
        }
    }
}

/// RK4 state buffers, reused across steps.
struct Rk4Buffers {
    k1: Array2<f64>,
    k2: Array2<f64>,
    k3: Array2<f64>,
    k4: Array2<f64>,
    stage: Array2<f64>,
}

/// A step failed because a stage or the update left the sphere's reach.
struct StepFailure;

impl Rk4Buffers {
    fn new(dim: usize, n: usize) -> Self {
        Self {
            k1: Array2::zeros((dim, n)),
            k2: Array2::zeros((dim, n)),
            k3: Array2::zeros((dim, n)),
            k4: Array2::zeros((dim, n)),
            stage: Array2::zeros((dim, n)),
        }
    }

    /// One step; returns int |u_x|^2 of the pre-step state as the cheap
    /// divergence indicator (u_x is already computed for the first stage).
    fn advance(
        &mut self,
        engine: &mut Engine,
        state: &mut Array2<f64>,
        dt: f64,
    ) -> Result<f64, StepFailure> {
        engine.rhs_into(state, &mut self.k1);
        let kinetic = engine.d1_square_integral();
        Self::stage_from(&mut self.stage, state, &self.k1, 0.5 * dt)?;
        engine.rhs_into(&self.stage, &mut self.k2);
        Self::stage_from(&mut self.stage, state, &self.k2, 0.5 * dt)?;
        engine.rhs_into(&self.stage, &mut self.k3);
        Self::stage_from(&mut self.stage, state, &self.k3, dt)?;
        engine.rhs_into(&self.stage, &mut self.k4);

        let s = state.as_slice_mut().expect("standard layout");
        let k1 = self.k1.as_slice().expect("standard layout");
        let k2 = self.k2.as_slice().expect("standard layout");
        let k3 = self.k3.as_slice().expect("standard layout");
        let k4 = self.k4.as_slice().expect("standard layout");
        let w = dt / 6.0;
        for (j, v) in s.iter_mut().enumerate() {
            *v += w * (k1[j] + 2.0 * (k2[j] + k3[j]) + k4[j]);
        }
        fields::normalize_columns(state).map_err(|_| StepFailure)?;
        Ok(kinetic)
    }

    fn stage_from(
        stage: &mut Array2<f64>,
        state: &Array2<f64>,
        k: &Array2<f64>,
        c: f64,
    ) -> Result<(), StepFailure> {
        let out = stage.as_slice_mut().expect("standard layout");
        let s = state.as_slice().expect("standard layout");
        let kk = k.as_slice().expect("standard layout");
        for (j, o) in out.iter_mut().enumerate() {
            *o = s[j] + c * kk[j];
        }
        fields::normalize_columns(stage).map_err(|_| StepFailure)
    }
}
