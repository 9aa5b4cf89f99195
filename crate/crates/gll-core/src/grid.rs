//! Uniform periodic grid on S^1 = R/2piZ with spectrally accurate
//! differentiation and quadrature, plus a 4th-order finite-difference
//! fallback used to cross-check scheme independence.
//!
//! Wavenumber convention for an N-point grid:
//! `m = [0, 1, ..., N/2-1, N/2, -N/2+1, ..., -1]`,
//! and d^k/dx^k multiplies mode m by (i m)^k. For odd k the Nyquist mode is
//! zeroed, which keeps the derivative of a real signal real and makes the
//! first-derivative matrix exactly skew-symmetric.

use ndarray::{Array1, Array2};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};
use thiserror::Error;

/// Sampled scalar integrand on the grid, e.g. |u_x|^2 or (u, A u).
pub type ScalarField = Array1<f64>;

/// Smallest grid this module accepts.
pub const MIN_POINTS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    /// Derivative order must be >= 1.
    #[error("derivative order must be >= 1 (got {order})")]
    BadOrder { order: usize },
    /// Grid too coarse for the differentiation stencils.
    #[error("grid needs at least {MIN_POINTS} points (got {n_points})")]
    TooCoarse { n_points: usize },
    /// Sample count does not match the grid.
    #[error("field length {got} does not match grid size {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Uniform N-point grid on [0, 2pi) with nodes x_i = i h, h = 2pi/N.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PeriodicGrid {
    n_points: usize,
}

impl PeriodicGrid {
    /// Circumference of the domain.
    pub const LENGTH: f64 = std::f64::consts::TAU;

    pub fn new(n_points: usize) -> Result<Self, GridError> {
        if n_points < MIN_POINTS {
            return Err(GridError::TooCoarse { n_points });
        }
        Ok(Self { n_points })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    /// Grid spacing h = 2pi/N.
    pub fn spacing(&self) -> f64 {
        Self::LENGTH / self.n_points as f64
    }

    /// Node coordinate x_i = i h.
    pub fn node(&self, i: usize) -> f64 {
        i as f64 * self.spacing()
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(|i| self.node(i))
    }

    /// Equal-weight quadrature h * sum_i f(x_i); spectrally accurate for
    /// smooth periodic integrands.
    pub fn integrate(&self, f: &ScalarField) -> f64 {
        assert_eq!(f.len(), self.n_points, "integrand length mismatch");
        self.spacing() * f.sum()
    }

    /// Quadrature over a raw sample slice.
    pub fn integrate_slice(&self, f: &[f64]) -> f64 {
        assert_eq!(f.len(), self.n_points, "integrand length mismatch");
        self.spacing() * f.iter().sum::<f64>()
    }
}

/// Spatial differentiation scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Fourier collocation; exact for band-limited signals.
    Spectral,
    /// 4th-order central differences with periodic wraparound.
    Fd4,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Spectral => write!(f, "spectral"),
            Scheme::Fd4 => write!(f, "fd4"),
        }
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "spectral" => Ok(Scheme::Spectral),
            "fd4" => Ok(Scheme::Fd4),
            other => Err(format!("unknown scheme '{other}' (expected spectral|fd4)")),
        }
    }
}

/// k-th derivative of a sampled scalar signal.
pub fn derivative(
    grid: PeriodicGrid,
    f: &[f64],
    order: usize,
    scheme: Scheme,
) -> Result<Vec<f64>, GridError> {
    if order < 1 {
        return Err(GridError::BadOrder { order });
    }
    if f.len() != grid.n_points() {
        return Err(GridError::LengthMismatch {
            expected: grid.n_points(),
            got: f.len(),
        });
    }
    let mut out = vec![0.0; f.len()];
    match scheme {
        Scheme::Spectral => {
            let mut ws = SpectralWorkspace::new(grid.n_points());
            ws.forward(f);
            ws.derivative_into(order, &mut out);
        }
        Scheme::Fd4 => fd4_iterated(grid, f, order, &mut out),
    }
    Ok(out)
}

/// Row-wise derivative of a components-by-nodes array (one signal per row).
pub fn derivative_rows(
    grid: PeriodicGrid,
    f: &Array2<f64>,
    order: usize,
    scheme: Scheme,
) -> Result<Array2<f64>, GridError> {
    if order < 1 {
        return Err(GridError::BadOrder { order });
    }
    let (rows, n) = f.dim();
    if n != grid.n_points() {
        return Err(GridError::LengthMismatch {
            expected: grid.n_points(),
            got: n,
        });
    }
    let mut out = Array2::zeros((rows, n));
    match scheme {
        Scheme::Spectral => {
            let mut ws = SpectralWorkspace::new(n);
            for (src, mut dst) in f.rows().into_iter().zip(out.rows_mut()) {
                ws.forward(src.as_slice().expect("standard layout"));
                ws.derivative_into(order, dst.as_slice_mut().expect("standard layout"));
            }
        }
        Scheme::Fd4 => {
            for (src, mut dst) in f.rows().into_iter().zip(out.rows_mut()) {
                fd4_iterated(
                    grid,
                    src.as_slice().expect("standard layout"),
                    order,
                    dst.as_slice_mut().expect("standard layout"),
                );
            }
        }
    }
    Ok(out)
}

/// Signed wavenumber of FFT bin j on an N-point grid.
#[inline]
fn wavenumber(j: usize, n: usize) -> f64 {
    if j <= n / 2 {
        j as f64
    } else {
        j as f64 - n as f64
    }
}

struct FftPair {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

// Plans are cached per grid size; rustfft plan objects are Send + Sync.
fn plans_for(n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    static PLANS: OnceLock<Mutex<HashMap<usize, FftPair>>> = OnceLock::new();
    let cache = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut cache = cache.lock().expect("fft plan cache poisoned");
    let pair = cache.entry(n).or_insert_with(|| {
        let mut planner = FftPlanner::new();
        FftPair {
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    });
    (pair.fwd.clone(), pair.inv.clone())
}

/// Reusable FFT state for repeated differentiation of signals on one grid.
///
/// `forward` captures the spectrum of a signal; `derivative_into` then
/// produces any derivative order from that spectrum without re-transforming.
pub(crate) struct SpectralWorkspace {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    spectrum: Vec<Complex<f64>>,
    buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl SpectralWorkspace {
    pub(crate) fn new(n: usize) -> Self {
        let (fwd, inv) = plans_for(n);
        let scratch_len = fwd
            .get_inplace_scratch_len()
            .max(inv.get_inplace_scratch_len());
        Self {
            n,
            fwd,
            inv,
            spectrum: vec![Complex::default(); n],
            buf: vec![Complex::default(); n],
            scratch: vec![Complex::default(); scratch_len],
        }
    }

    /// Transforms a real signal; the (unnormalized) spectrum is retained.
    pub(crate) fn forward(&mut self, src: &[f64]) {
        debug_assert_eq!(src.len(), self.n);
        for (b, x) in self.spectrum.iter_mut().zip(src) {
            *b = Complex::new(*x, 0.0);
        }
        self.fwd
            .process_with_scratch(&mut self.spectrum, &mut self.scratch);
    }

    /// Writes the order-k derivative of the captured signal into `out`.
    pub(crate) fn derivative_into(&mut self, order: usize, out: &mut [f64]) {
        debug_assert!(order >= 1);
        debug_assert_eq!(out.len(), self.n);
        let n = self.n;
        // (i m)^k = i^k m^k with i^k cycling through {1, i, -1, -i}.
        let rot = order % 4;
        for j in 0..n {
            let m = wavenumber(j, n);
            let mk = m.powi(order as i32);
            let s = self.spectrum[j];
            self.buf[j] = match rot {
                0 => s * mk,
                1 => Complex::new(-s.im, s.re) * mk,
                2 => s * (-mk),
                _ => Complex::new(s.im, -s.re) * mk,
            };
        }
        if order % 2 == 1 && n % 2 == 0 {
            self.buf[n / 2] = Complex::default();
        }
        self.inv
            .process_with_scratch(&mut self.buf, &mut self.scratch);
        let scale = 1.0 / n as f64;
        for (o, b) in out.iter_mut().zip(&self.buf) {
            *o = b.re * scale;
        }
    }
}

/// 4th-order central first derivative, applied `order` times.
fn fd4_iterated(grid: PeriodicGrid, f: &[f64], order: usize, out: &mut [f64]) {
    let mut cur = f.to_vec();
    let mut next = vec![0.0; f.len()];
    for _ in 0..order {
        fd4_once(grid, &cur, &mut next);
        std::mem::swap(&mut cur, &mut next);
    }
    out.copy_from_slice(&cur);
}

fn fd4_once(grid: PeriodicGrid, f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let inv12h = 1.0 / (12.0 * grid.spacing());
    for i in 0..n {
        let m2 = f[(i + n - 2) % n];
        let m1 = f[(i + n - 1) % n];
        let p1 = f[(i + 1) % n];
        let p2 = f[(i + 2) % n];
        out[i] = (m2 - 8.0 * m1 + 8.0 * p1 - p2) * inv12h;
    }
}
