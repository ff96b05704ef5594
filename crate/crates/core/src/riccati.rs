//! Backward integration of the scalar Riccati-type ODEs for φ and ψ.
//!
//! Both the finite-n equation and its mean-field limit have the form
//!
//! ```text
//! (1 + k φ) φ' = A φ² + B φ + C,   φ(T) = c,
//! ```
//!
//! with `k, A, B` depending on `n` only through `κ = 1 - 1/n` (κ = 1 at n = ∞).
//! The solution is computed with fixed-step classical RK4 in reversed time
//! `τ = T - t` and must stay in the half line `1 + kφ > 0`.

use std::io::{self, Write};

use thiserror::Error;

use crate::params::{ModelParams, Players};
use crate::scalar::Scalar;

pub const DEFAULT_SINGULAR_TOL: f64 = 1e-8;
pub const DEFAULT_PHI_CAP: f64 = 1e8;
pub const DEFAULT_ODE_STEPS: usize = 2000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("singularity: denominator fell below tolerance at t = {t}")]
    Singularity { t: f64 },
    #[error("blow-up: |value| exceeded cap at t = {t}")]
    Blowup { t: f64 },
    #[error("time {t} outside [0, {horizon}]")]
    OutOfRange { t: f64, horizon: f64 },
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("solution kind {found:?} does not match the player count {players}")]
    KindMismatch { found: OdeKind, players: Players },
}

/// Uniform grid `0 = t₀ < … < t_M = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid<T> {
    points: Vec<T>,
}

impl<T: Scalar> TimeGrid<T> {
    pub fn new(horizon: T, steps: usize) -> Result<Self, OdeError> {
        if steps < 2 {
            return Err(OdeError::InvalidGrid(format!("need at least 2 steps, got {steps}")));
        }
        if !(horizon > T::zero()) || !horizon.is_finite() {
            return Err(OdeError::InvalidGrid(format!("horizon {horizon} must be positive")));
        }
        let m = T::from_count(steps);
        let points = (0..=steps).map(|i| if i == steps { horizon } else { horizon * T::from_count(i) / m }).collect();
        Ok(TimeGrid { points })
    }

    /// Grid whose step is the largest `T/M ≤ dt`.
    pub fn with_step(horizon: T, dt: T) -> Result<Self, OdeError> {
        if !(dt > T::zero()) || !dt.is_finite() {
            return Err(OdeError::InvalidGrid(format!("step {dt} must be positive")));
        }
        let ratio = (horizon / dt).to_f64().unwrap_or(f64::INFINITY);
        if !ratio.is_finite() || ratio > 1e9 {
            return Err(OdeError::InvalidGrid(format!("step {dt} too small for horizon {horizon}")));
        }
        let steps = (ratio - 1e-9).ceil().max(2.0) as usize;
        Self::new(horizon, steps)
    }

    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn horizon(&self) -> T {
        self.points[self.points.len() - 1]
    }

    pub fn dt(&self) -> T {
        self.horizon() / T::from_count(self.steps())
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn time(&self, i: usize) -> T {
        self.points[i]
    }

    /// Index `i` with `tᵢ ≤ t ≤ tᵢ₊₁`, `i < M`. Caller guarantees `t ∈ [0, T]`.
    pub(crate) fn bracket(&self, t: T) -> usize {
        let m = self.steps();
        let guess = (t / self.dt()).floor().to_usize().unwrap_or(0).min(m - 1);
        let mut i = guess;
        while i > 0 && t < self.points[i] {
            i -= 1;
        }
        while i + 1 < m && t > self.points[i + 1] {
            i += 1;
        }
        i
    }
}

/// Which equation an [`OdeSolution`] solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdeKind {
    PhiFinite,
    PhiLimit,
    PsiDirect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeSolution<T> {
    grid: TimeGrid<T>,
    values: Vec<T>,
    kind: OdeKind,
    params_hash: u64,
}

impl<T: Scalar> OdeSolution<T> {
    /// Wraps externally computed values, e.g. for perturbation experiments.
    pub fn from_values(grid: TimeGrid<T>, values: Vec<T>, kind: OdeKind, params_hash: u64) -> Result<Self, OdeError> {
        if values.len() != grid.len() {
            return Err(OdeError::InvalidGrid(format!("{} values for {} grid points", values.len(), grid.len())));
        }
        Ok(OdeSolution { grid, values, kind, params_hash })
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }
    pub fn values(&self) -> &[T] {
        &self.values
    }
    pub fn kind(&self) -> OdeKind {
        self.kind
    }
    pub fn params_hash(&self) -> u64 {
        self.params_hash
    }
    pub fn initial(&self) -> T {
        self.values[0]
    }
    pub fn terminal(&self) -> T {
        self.values[self.values.len() - 1]
    }

    /// Piecewise-linear interpolation, exact at grid nodes.
    pub fn interpolate(&self, t: T) -> Result<T, OdeError> {
        interpolate_on(&self.grid, &self.values, t)
    }

    /// Writes `t,<column>` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W, column: &str) -> io::Result<()> {
        crate::output::write_curve(out, column, self.grid.points(), &self.values)
    }
}

pub(crate) fn interpolate_on<T: Scalar>(grid: &TimeGrid<T>, values: &[T], t: T) -> Result<T, OdeError> {
    let horizon = grid.horizon();
    if !(t >= T::zero() && t <= horizon) {
        return Err(OdeError::OutOfRange { t: t.as_f64(), horizon: horizon.as_f64() });
    }
    Ok(interpolate_clamped(grid, values, t))
}

pub(crate) fn interpolate_clamped<T: Scalar>(grid: &TimeGrid<T>, values: &[T], t: T) -> T {
    let t = t.max(T::zero()).min(grid.horizon());
    let i = grid.bracket(t);
    let (t0, t1) = (grid.time(i), grid.time(i + 1));
    if t == t0 {
        return values[i];
    }
    if t == t1 {
        return values[i + 1];
    }
    let w = (t - t0) / (t1 - t0);
    values[i] + w * (values[i + 1] - values[i])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions<T> {
    /// Minimum admissible value of the denominators `1 + kφ` (and their ψ analogues).
    pub singular_tol: T,
    /// Largest admissible `|φ|` or `|ψ|`.
    pub phi_cap: T,
}

impl<T: Scalar> Default for SolverOptions<T> {
    fn default() -> Self {
        SolverOptions { singular_tol: T::lit(DEFAULT_SINGULAR_TOL), phi_cap: T::lit(DEFAULT_PHI_CAP) }
    }
}

/// Coefficients of `(1 + kφ)φ' = Aφ² + Bφ + C`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiCoefficients<T> {
    pub k: T,
    pub a: T,
    pub b: T,
    pub c: T,
}

impl<T: Scalar> PhiCoefficients<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let kappa = params.kappa();
        let lambda = params.intensity();
        let a = params.mean_reversion();
        let theta = params.incentive();
        let eps = params.running_penalty();
        let two = T::lit(2.0);
        PhiCoefficients {
            k: kappa * kappa / lambda,
            a: (lambda + two * a / lambda * kappa) * kappa,
            // 2 - 1/n = 1 + κ
            b: lambda * theta * (T::one() + kappa) - eps * kappa * kappa + two * a,
            c: lambda * (theta * theta - eps),
        }
    }

    #[inline]
    pub fn denominator(&self, phi: T) -> T {
        T::one() + self.k * phi
    }

    #[inline]
    fn numerator(&self, phi: T) -> T {
        (self.a * phi + self.b) * phi + self.c
    }
}

/// `dφ/dt` for the configured player count.
pub fn phi_rhs<T: Scalar>(phi: T, params: &ModelParams<T>) -> Result<T, OdeError> {
    let coeffs = PhiCoefficients::new(params);
    let den = coeffs.denominator(phi);
    if !(den > T::lit(DEFAULT_SINGULAR_TOL)) {
        return Err(OdeError::Singularity { t: f64::NAN });
    }
    Ok(coeffs.numerator(phi) / den)
}

pub fn solve_phi<T: Scalar>(params: &ModelParams<T>, grid: &TimeGrid<T>) -> Result<OdeSolution<T>, OdeError> {
    solve_phi_with(params, grid, &SolverOptions::default())
}

pub fn solve_phi_with<T: Scalar>(
    params: &ModelParams<T>,
    grid: &TimeGrid<T>,
    opts: &SolverOptions<T>,
) -> Result<OdeSolution<T>, OdeError> {
    check_grid(params, grid)?;
    let coeffs = PhiCoefficients::new(params);
    let terminal = params.terminal_penalty();
    if !(coeffs.denominator(terminal) > opts.singular_tol) {
        return Err(OdeError::Singularity { t: grid.horizon().as_f64() });
    }
    let rhs = |phi: T| {
        let den = coeffs.denominator(phi);
        if den > opts.singular_tol {
            Some(coeffs.numerator(phi) / den)
        } else {
            None
        }
    };
    let guard = |phi: T| coeffs.denominator(phi) > opts.singular_tol;
    let values = integrate_backward(grid, terminal, rhs, guard, opts.phi_cap)?;
    let kind = match params.players() {
        Players::Finite(_) => OdeKind::PhiFinite,
        Players::Infinite => OdeKind::PhiLimit,
    };
    Ok(OdeSolution { grid: grid.clone(), values, kind, params_hash: params.fingerprint() })
}

/// Terminal value `ψ_T = (θ + κc)/(1 + kc)`.
pub fn psi_terminal<T: Scalar>(params: &ModelParams<T>) -> T {
    let coeffs = PhiCoefficients::new(params);
    let c = params.terminal_penalty();
    (params.incentive() + params.kappa() * c) / coeffs.denominator(c)
}

/// Integrates the ODE satisfied by ψ directly, without going through φ.
///
/// With `s = 1 - (κ/λ)ψ` the equation reads
/// `(1 - κθ/λ)² ψ' = (A/κ) s (ψ-θ)² + B s² (ψ-θ) + κC s³`.
pub fn solve_psi_direct<T: Scalar>(params: &ModelParams<T>, grid: &TimeGrid<T>) -> Result<OdeSolution<T>, OdeError> {
    solve_psi_direct_with(params, grid, &SolverOptions::default())
}

pub fn solve_psi_direct_with<T: Scalar>(
    params: &ModelParams<T>,
    grid: &TimeGrid<T>,
    opts: &SolverOptions<T>,
) -> Result<OdeSolution<T>, OdeError> {
    check_grid(params, grid)?;
    let coeffs = PhiCoefficients::new(params);
    let kappa = params.kappa();
    let lambda = params.intensity();
    let theta = params.incentive();
    let lead = {
        let d = T::one() - kappa * theta / lambda;
        d * d
    };
    if !(lead > opts.singular_tol) {
        return Err(OdeError::Singularity { t: grid.horizon().as_f64() });
    }
    if !(coeffs.denominator(params.terminal_penalty()) > opts.singular_tol) {
        return Err(OdeError::Singularity { t: grid.horizon().as_f64() });
    }
    let quad = coeffs.a / kappa;
    let cubic = kappa * coeffs.c;
    let slope = kappa / lambda;
    let guard = |psi: T| (T::one() - slope * psi).abs() > opts.singular_tol;
    let rhs = |psi: T| {
        let s = T::one() - slope * psi;
        if s.abs() <= opts.singular_tol {
            return None;
        }
        let dev = psi - theta;
        Some((quad * s * dev * dev + coeffs.b * s * s * dev + cubic * s * s * s) / lead)
    };
    let values = integrate_backward(grid, psi_terminal(params), rhs, guard, opts.phi_cap)?;
    Ok(OdeSolution { grid: grid.clone(), values, kind: OdeKind::PsiDirect, params_hash: params.fingerprint() })
}

fn check_grid<T: Scalar>(params: &ModelParams<T>, grid: &TimeGrid<T>) -> Result<(), OdeError> {
    if grid.horizon() != params.horizon() {
        return Err(OdeError::InvalidGrid(format!(
            "grid ends at {} but the horizon is {}",
            grid.horizon(),
            params.horizon()
        )));
    }
    Ok(())
}

/// RK4 in reversed time for an autonomous scalar ODE `y' = f(y)` with `y(T)` given.
/// `f` returns `None` where it is singular.
fn integrate_backward<T: Scalar>(
    grid: &TimeGrid<T>,
    terminal: T,
    f: impl Fn(T) -> Option<T>,
    in_domain: impl Fn(T) -> bool,
    cap: T,
) -> Result<Vec<T>, OdeError> {
    let m = grid.steps();
    let h = grid.dt();
    let half = h / T::lit(2.0);
    let sixth = h / T::lit(6.0);
    let two = T::lit(2.0);
    let mut values = vec![T::zero(); m + 1];
    values[m] = terminal;
    let mut y = terminal;
    for i in (0..m).rev() {
        let t_fail = grid.time(i + 1).as_f64();
        let singular = || OdeError::Singularity { t: t_fail };
        // dy/dτ = -f(y)
        let k1 = -f(y).ok_or_else(singular)?;
        let k2 = -f(y + half * k1).ok_or_else(singular)?;
        let k3 = -f(y + half * k2).ok_or_else(singular)?;
        let k4 = -f(y + h * k3).ok_or_else(singular)?;
        y = y + sixth * (k1 + two * k2 + two * k3 + k4);
        let t = grid.time(i).as_f64();
        if !y.is_finite() || y.abs() > cap {
            return Err(OdeError::Blowup { t });
        }
        if !in_domain(y) {
            return Err(OdeError::Singularity { t });
        }
        values[i] = y;
    }
    Ok(values)
}
