//! Consistency check of a solved φ against its implicit characterisation.
//!
//! With `ω(t) = (φ_t + 1/k) e^{-(A/k)t}` and `ξ(t) = (2/k - B/A) e^{-(A/k)t}`,
//! any solution of `(1 + kφ)φ' = Aφ² + Bφ + C` satisfies
//!
//! ```text
//! ω dω/dξ = ω + Kξ,   K = -(Ck² - Bk + A)A / (2A - kB)².
//! ```
//!
//! The residual of this identity on the grid measures how well a numerical φ
//! solves the original equation, independently of how it was produced.

use std::io::{self, Write};

use thiserror::Error;

use crate::output::num;
use crate::params::ModelParams;
use crate::riccati::{OdeKind, OdeSolution, PhiCoefficients, DEFAULT_SINGULAR_TOL};
use crate::scalar::Scalar;

/// Threshold on `|2A - kB|` below which `K` is undefined.
pub const DEGENERATE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImplicitError {
    #[error("2A - kB = {0} is too close to zero; K is undefined")]
    DegenerateK(f64),
    #[error("expected a φ solution, got {0:?}")]
    NotPhi(OdeKind),
    #[error("need at least three grid points")]
    TooShort,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformConstants<T> {
    pub k: T,
    pub a: T,
    pub b: T,
    pub c: T,
    pub big_k: T,
}

pub fn constants<T: Scalar>(params: &ModelParams<T>) -> Result<TransformConstants<T>, ImplicitError> {
    let PhiCoefficients { k, a, b, c } = PhiCoefficients::new(params);
    let gap = T::lit(2.0) * a - k * b;
    if gap.abs() < T::lit(DEGENERATE_TOL) {
        return Err(ImplicitError::DegenerateK(gap.as_f64()));
    }
    let big_k = -(c * k * k - b * k + a) * a / (gap * gap);
    Ok(TransformConstants { k, a, b, c, big_k })
}

/// One row of the transformed trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformRow<T> {
    pub t: T,
    pub omega: T,
    pub xi: T,
    /// Normalised residual; zero at the two end points where no centred difference exists.
    pub residual: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSummary<T> {
    pub constants: TransformConstants<T>,
    pub max_residual: T,
    pub worst_time: T,
    pub rows: Vec<TransformRow<T>>,
}

impl<T: Scalar> ResidualSummary<T> {
    pub fn write_text<W: Write>(&self, mut out: W) -> io::Result<()> {
        let c = &self.constants;
        writeln!(out, "k = {}", num(c.k))?;
        writeln!(out, "A = {}", num(c.a))?;
        writeln!(out, "B = {}", num(c.b))?;
        writeln!(out, "C = {}", num(c.c))?;
        writeln!(out, "K = {}", num(c.big_k))?;
        writeln!(out, "max_residual = {}", num(self.max_residual))?;
        writeln!(out, "worst_time = {}", num(self.worst_time))?;
        out.flush()
    }

    /// Writes `t,omega,xi,residual`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,omega,xi,residual")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", num(r.t), num(r.omega), num(r.xi), num(r.residual))?;
        }
        out.flush()
    }
}

/// Maximum over interior grid points of `|ω ω_ξ - ω - Kξ| / (1 + |ω| + |Kξ|)`,
/// with `ω_ξ` from centred differences in `t`.
pub fn transform_residual<T: Scalar>(
    phi: &OdeSolution<T>,
    params: &ModelParams<T>,
) -> Result<ResidualSummary<T>, ImplicitError> {
    if phi.kind() == OdeKind::PsiDirect {
        return Err(ImplicitError::NotPhi(phi.kind()));
    }
    let times = phi.grid().points();
    if times.len() < 3 {
        return Err(ImplicitError::TooShort);
    }
    let consts = constants(params)?;
    let rate = consts.a / consts.k;
    let inv_k = T::one() / consts.k;
    let xi_scale = T::lit(2.0) / consts.k - consts.b / consts.a;

    let omega: Vec<T> = phi.values().iter().zip(times).map(|(&v, &t)| (v + inv_k) * (-rate * t).exp()).collect();
    let xi: Vec<T> = times.iter().map(|&t| xi_scale * (-rate * t).exp()).collect();

    let mut rows = Vec::with_capacity(times.len());
    let mut max_residual = T::zero();
    let mut worst_time = times[0];
    for i in 0..times.len() {
        let residual = if i == 0 || i + 1 == times.len() {
            T::zero()
        } else {
            let slope = (omega[i + 1] - omega[i - 1]) / (xi[i + 1] - xi[i - 1]);
            let kx = consts.big_k * xi[i];
            (omega[i] * slope - omega[i] - kx).abs() / (T::one() + omega[i].abs() + kx.abs())
        };
        if residual > max_residual {
            max_residual = residual;
            worst_time = times[i];
        }
        rows.push(TransformRow { t: times[i], omega: omega[i], xi: xi[i], residual });
    }
    Ok(ResidualSummary { constants: consts, max_residual, worst_time, rows })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainCheck<T> {
    /// `min_t (1 + kφ_t)`.
    pub margin: T,
    pub inside: bool,
}

/// Whether the graph of φ stays in `{1 + kφ > singular_tol}`.
pub fn domain_check<T: Scalar>(phi: &OdeSolution<T>, params: &ModelParams<T>) -> DomainCheck<T> {
    let coeffs = PhiCoefficients::new(params);
    let margin = phi.values().iter().map(|&v| coeffs.denominator(v)).fold(T::infinity(), |m, d| m.min(d));
    DomainCheck { margin, inside: margin > T::lit(DEFAULT_SINGULAR_TOL) }
}
