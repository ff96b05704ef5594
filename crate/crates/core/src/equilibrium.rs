//! Equilibrium feedback gain, the Hamiltonian of player `i` and the adjoint ansatz.
//!
//! At a Nash equilibrium each bank adjusts its reserves at its own jump times by
//! `γ̂ⁱ_t = ψ_t (X̄_{t-} - Xⁱ_{t-})` with
//!
//! ```text
//! ψ = (θ + κφ) / (1 + kφ),   κ = 1 - 1/n,   k = κ²/λ.
//! ```

use std::io::{self, Write};

use thiserror::Error;

use crate::params::{ModelParams, Players};
use crate::riccati::{interpolate_clamped, interpolate_on, OdeError, OdeKind, OdeSolution, PhiCoefficients, TimeGrid};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquilibriumError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("player index {index} out of range for {n} players")]
    PlayerIndex { index: usize, n: usize },
    #[error("operation requires a finite number of players")]
    RequiresFiniteN,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainMode {
    FiniteN,
    Limit,
}

/// Time-dependent proportionality factor ψ between deviation from the mean and jump size.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackGain<T> {
    grid: TimeGrid<T>,
    psi: Vec<T>,
    mode: GainMode,
}

impl<T: Scalar> FeedbackGain<T> {
    /// Gain given directly by values on a grid (e.g. a constant gain for tests).
    pub fn from_values(grid: TimeGrid<T>, psi: Vec<T>, mode: GainMode) -> Result<Self, EquilibriumError> {
        if psi.len() != grid.len() {
            return Err(EquilibriumError::DimensionMismatch { expected: grid.len(), got: psi.len() });
        }
        Ok(FeedbackGain { grid, psi, mode })
    }

    pub fn constant(grid: TimeGrid<T>, value: T, mode: GainMode) -> Self {
        let psi = vec![value; grid.len()];
        FeedbackGain { grid, psi, mode }
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }
    pub fn values(&self) -> &[T] {
        &self.psi
    }
    pub fn mode(&self) -> GainMode {
        self.mode
    }

    pub fn at(&self, t: T) -> Result<T, OdeError> {
        interpolate_on(&self.grid, &self.psi, t)
    }

    /// Interpolated value with `t` clamped to `[0, T]`.
    pub(crate) fn at_clamped(&self, t: T) -> T {
        interpolate_clamped(&self.grid, &self.psi, t)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        crate::output::write_curve(out, "psi", self.grid.points(), &self.psi)
    }
}

/// `ψ` for a single value of φ.
pub fn gain_value<T: Scalar>(phi: T, params: &ModelParams<T>) -> Result<T, OdeError> {
    let coeffs = PhiCoefficients::new(params);
    let den = coeffs.denominator(phi);
    if !(den > T::lit(crate::riccati::DEFAULT_SINGULAR_TOL)) {
        return Err(OdeError::Singularity { t: f64::NAN });
    }
    Ok((params.incentive() + params.kappa() * phi) / den)
}

pub fn gain_from_phi<T: Scalar>(phi: &OdeSolution<T>, params: &ModelParams<T>) -> Result<FeedbackGain<T>, OdeError> {
    let mode = match (phi.kind(), params.players()) {
        (OdeKind::PhiFinite, Players::Finite(_)) => GainMode::FiniteN,
        (OdeKind::PhiLimit, Players::Infinite) => GainMode::Limit,
        (found, players) => return Err(OdeError::KindMismatch { found, players }),
    };
    let psi = phi
        .values()
        .iter()
        .zip(phi.grid().points())
        .map(|(&v, &t)| gain_value(v, params).map_err(|_| OdeError::Singularity { t: t.as_f64() }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FeedbackGain { grid: phi.grid().clone(), psi, mode })
}

/// Square matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> SquareMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix { n, data: vec![T::zero(); n * n] }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for k in 0..n {
            for j in 0..n {
                data.push(f(k, j));
            }
        }
        SquareMatrix { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, k: usize, j: usize) -> T {
        self.data[k * self.n + j]
    }

    pub fn set(&mut self, k: usize, j: usize, v: T) {
        self.data[k * self.n + j] = v;
    }
}

fn mean<T: Scalar>(x: &[T]) -> T {
    x.iter().copied().sum::<T>() / T::from_count(x.len())
}

fn check_player<T: Scalar>(params: &ModelParams<T>, i: usize, dims: &[usize]) -> Result<usize, EquilibriumError> {
    let n = params.n_finite().ok_or(EquilibriumError::RequiresFiniteN)?;
    for &d in dims {
        if d != n {
            return Err(EquilibriumError::DimensionMismatch { expected: n, got: d });
        }
    }
    if i >= n {
        return Err(EquilibriumError::PlayerIndex { index: i, n });
    }
    Ok(n)
}

/// Hamiltonian of player `i`; `q` and `r` hold `q^{i,k,j}` and `r^{i,k,j}`.
#[allow(clippy::too_many_arguments)]
pub fn hamiltonian<T: Scalar>(
    x: &[T],
    gamma: &[T],
    y: &[T],
    q: &SquareMatrix<T>,
    r: &SquareMatrix<T>,
    i: usize,
    params: &ModelParams<T>,
) -> Result<T, EquilibriumError> {
    let n = check_player(params, i, &[x.len(), gamma.len(), y.len(), q.dim(), r.dim()])?;
    let lambda = params.intensity();
    let a = params.mean_reversion();
    let xbar = mean(x);
    let dev = xbar - x[i];
    let half = T::lit(0.5);
    let mut h = lambda
        * (half * gamma[i] * gamma[i] - params.incentive() * dev * gamma[i]
            + half * params.running_penalty() * dev * dev);
    for k in 0..n {
        h = h
            + (a * (xbar - x[k]) + lambda * gamma[k]) * y[k]
            + params.volatility() * q.get(k, k)
            + gamma[k] * r.get(k, k);
    }
    Ok(h)
}

/// Minimiser of the Hamiltonian in `γⁱ`: `θ(x̄ - xⁱ) - y^{i,i} - r^{i,i,i}/λ`.
pub fn best_response_pointwise<T: Scalar>(xbar_minus_xi: T, y_ii: T, r_iii: T, params: &ModelParams<T>) -> T {
    params.incentive() * xbar_minus_xi - y_ii - r_iii / params.intensity()
}

/// Adjoint processes of player `i` under the linear ansatz, at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointState<T> {
    pub player: usize,
    pub phi: T,
    /// `Y^{i,k}` for `k = 0..n`.
    pub y: Vec<T>,
    /// `Q^{i,k,j}`.
    pub q: SquareMatrix<T>,
    /// `R^{i,k,j}`.
    pub r: SquareMatrix<T>,
}

impl<T: Scalar> AdjointState<T> {
    pub fn y_ii(&self) -> T {
        self.y[self.player]
    }

    pub fn r_iii(&self) -> T {
        self.r.get(self.player, self.player)
    }
}

pub fn adjoint_ansatz<T: Scalar>(
    x: &[T],
    phi_t: T,
    gamma: &[T],
    i: usize,
    params: &ModelParams<T>,
) -> Result<AdjointState<T>, EquilibriumError> {
    let n = check_player(params, i, &[x.len(), gamma.len()])?;
    let inv_n = T::one() / T::from_count(n);
    let weight = |k: usize| if k == i { inv_n - T::one() } else { inv_n };
    let dev = mean(x) - x[i];
    let sigma = params.volatility();
    Ok(AdjointState {
        player: i,
        phi: phi_t,
        y: (0..n).map(|k| weight(k) * dev * phi_t).collect(),
        q: SquareMatrix::from_fn(n, |k, j| sigma * weight(k) * weight(j) * phi_t),
        r: SquareMatrix::from_fn(n, |k, j| weight(k) * weight(j) * phi_t * gamma[j]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::RawParams;
    use crate::riccati::solve_phi;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(f: impl FnOnce(&mut RawParams)) -> ModelParams<f64> {
        let mut raw = RawParams::baseline();
        f(&mut raw);
        ModelParams::validate(&raw).unwrap()
    }

    #[test]
    fn gain_equals_theta_at_zero_terminal_penalty() {
        let p = params(|_| {});
        let phi = solve_phi(&p, &TimeGrid::new(2.0, 200).unwrap()).unwrap();
        let gain = gain_from_phi(&phi, &p).unwrap();
        assert_eq!(*gain.values().last().unwrap(), 1.0);
        assert_eq!(gain.mode(), GainMode::FiniteN);
    }

    #[test]
    fn gain_is_theta_in_analytic_case() {
        let p = params(|r| r.eps = 1.0);
        let phi = solve_phi(&p, &TimeGrid::new(2.0, 200).unwrap()).unwrap();
        let gain = gain_from_phi(&phi, &p).unwrap();
        assert!(gain.values().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn limit_gain_terminal_value() {
        let p = params(|r| {
            r.n = f64::INFINITY;
            r.c = 1.0;
        });
        let phi = solve_phi(&p, &TimeGrid::new(2.0, 200).unwrap()).unwrap();
        let gain = gain_from_phi(&phi, &p).unwrap();
        let expected = 2.0 / (1.0 + 1.0 / 0.7);
        assert!((gain.values()[200] - expected).abs() < 1e-15);
        assert!((expected - 0.82353).abs() < 1e-5);
        assert_eq!(gain.mode(), GainMode::Limit);
    }

    #[test]
    fn gain_rejects_kind_mismatch() {
        let p = params(|_| {});
        let phi = solve_phi(&p, &TimeGrid::new(2.0, 50).unwrap()).unwrap();
        assert!(matches!(gain_from_phi(&phi, &p.limit_of()), Err(OdeError::KindMismatch { .. })));
    }

    #[test]
    fn hamiltonian_examples() {
        let p = params(|r| r.n = 3.0);
        let z = SquareMatrix::zeros(3);
        assert_eq!(hamiltonian(&[0.0; 3], &[0.0; 3], &[0.0; 3], &z, &z, 0, &p).unwrap(), 0.0);

        // x̄ - x⁰ = 1
        let p = params(|r| {
            r.n = 3.0;
            r.lambda = 1.0;
            r.a = 0.0;
        });
        let x = [0.0, 1.5, 1.5];
        let h = hamiltonian(&x, &[1.0, 0.0, 0.0], &[0.0; 3], &z, &z, 0, &p).unwrap();
        assert!((h - 4.5).abs() < 1e-12);
    }

    #[test]
    fn hamiltonian_dimension_errors() {
        let p = params(|r| r.n = 3.0);
        let z = SquareMatrix::zeros(3);
        assert_eq!(
            hamiltonian(&[0.0; 2], &[0.0; 3], &[0.0; 3], &z, &z, 0, &p),
            Err(EquilibriumError::DimensionMismatch { expected: 3, got: 2 })
        );
        assert_eq!(
            hamiltonian(&[0.0; 3], &[0.0; 3], &[0.0; 3], &z, &SquareMatrix::zeros(4), 0, &p),
            Err(EquilibriumError::DimensionMismatch { expected: 3, got: 4 })
        );
        assert!(matches!(
            hamiltonian(&[0.0; 3], &[0.0; 3], &[0.0; 3], &z, &z, 5, &p),
            Err(EquilibriumError::PlayerIndex { .. })
        ));
        assert_eq!(
            hamiltonian(&[0.0; 3], &[0.0; 3], &[0.0; 3], &z, &z, 0, &p.limit_of()),
            Err(EquilibriumError::RequiresFiniteN)
        );
        assert!(adjoint_ansatz(&[0.0; 3], 1.0, &[0.0; 2], 0, &p).is_err());
    }

    #[test]
    fn best_response_examples() {
        let p = params(|_| {});
        assert_eq!(best_response_pointwise(1.0, 0.0, 0.0, &p), 1.0);
        assert_eq!(best_response_pointwise(0.0, 0.0, 0.0, &p), 0.0);
        assert!((best_response_pointwise(2.0, 0.5, 0.7, &p) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ansatz_examples() {
        let p = params(|r| r.n = 4.0);
        let x = [0.3, -1.0, 2.0, 0.1];
        let g = [0.2, 0.1, -0.4, 0.3];
        let s = adjoint_ansatz(&x, 0.0, &g, 1, &p).unwrap();
        assert!(s.y.iter().all(|&v| v == 0.0));
        for k in 0..4 {
            for j in 0..4 {
                assert_eq!(s.q.get(k, j), 0.0);
                assert_eq!(s.r.get(k, j), 0.0);
            }
        }
        let xm = [1.0, 0.0, 2.0, 1.0];
        let s = adjoint_ansatz(&xm, 0.8, &g, 0, &p).unwrap();
        assert!(s.y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn terminal_ansatz_matches_cost_gradient() {
        let c = 1.3;
        let p = params(|r| {
            r.n = 5.0;
            r.c = c;
        });
        let x = [0.4, -0.7, 1.1, 0.0, 2.5];
        let s = adjoint_ansatz(&x, c, &[0.0; 5], 2, &p).unwrap();
        let g = |x: &[f64]| crate::cost::terminal_cost(mean(x), x[2], &p);
        let h = 1e-6;
        for k in 0..5 {
            let mut up = x;
            let mut dn = x;
            up[k] += h;
            dn[k] -= h;
            let fd = (g(&up) - g(&dn)) / (2.0 * h);
            assert!((fd - s.y[k]).abs() < 1e-8, "k={k}: {fd} vs {}", s.y[k]);
        }
    }

    #[test]
    fn hamiltonian_grid_argmin_matches_best_response() {
        let p = params(|r| r.n = 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..5).map(|_| rng.random_range(-0.5..0.5)).collect();
            let mut gamma: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r = SquareMatrix::from_fn(5, |_, _| rng.random_range(-0.5..0.5));
            let q = SquareMatrix::from_fn(5, |_, _| rng.random_range(-0.5..0.5));
            let i = rng.random_range(0..5);
            let dev = mean(&x) - x[i];
            let target = best_response_pointwise(dev, y[i], r.get(i, i), &p);
            let mut best = (f64::INFINITY, 0.0);
            for step in 0..=2000 {
                gamma[i] = -10.0 + 0.01 * step as f64;
                let h = hamiltonian(&x, &gamma, &y, &q, &r, i, &p).unwrap();
                if h < best.0 {
                    best = (h, gamma[i]);
                }
            }
            assert!((best.1 - target).abs() <= 0.01, "{} vs {target}", best.1);
        }
    }

    proptest! {
        #[test]
        fn closure_reproduces_equilibrium_gain(
            x in proptest::collection::vec(-3.0..3.0f64, 6),
            phi in 0.0..5.0f64,
            lambda in 0.1..10.0f64,
            i in 0usize..6,
        ) {
            let p = params(|r| { r.n = 6.0; r.lambda = lambda; });
            let psi = gain_value(phi, &p).unwrap();
            let xbar = mean(&x);
            let gamma: Vec<f64> = x.iter().map(|&xi| psi * (xbar - xi)).collect();
            let s = adjoint_ansatz(&x, phi, &gamma, i, &p).unwrap();
            let br = best_response_pointwise(xbar - x[i], s.y_ii(), s.r_iii(), &p);
            prop_assert!((br - gamma[i]).abs() <= 1e-12 * (1.0 + gamma[i].abs()));
        }

        #[test]
        fn hamiltonian_second_difference_is_lambda(
            x in proptest::collection::vec(-3.0..3.0f64, 4),
            g in proptest::collection::vec(-3.0..3.0f64, 4),
            y in proptest::collection::vec(-3.0..3.0f64, 4),
            lambda in 0.1..10.0f64,
            i in 0usize..4,
        ) {
            let p = params(|r| { r.n = 4.0; r.lambda = lambda; });
            let q = SquareMatrix::from_fn(4, |k, j| (k + 2 * j) as f64 * 0.1);
            let r = SquareMatrix::from_fn(4, |k, j| (k as f64 - j as f64) * 0.2);
            let h = 0.5;
            let eval = |d: f64| {
                let mut gg = g.clone();
                gg[i] += d;
                hamiltonian(&x, &gg, &y, &q, &r, i, &p).unwrap()
            };
            let second = (eval(h) - 2.0 * eval(0.0) + eval(-h)) / (h * h);
            prop_assert!((second - lambda).abs() < 1e-9 * (1.0 + eval(0.0).abs()));
        }

        #[test]
        fn equilibrium_controls_sum_to_zero(
            x in proptest::collection::vec(-5.0..5.0f64, 2..20),
            psi in -3.0..3.0f64,
        ) {
            let xbar = mean(&x);
            let total: f64 = x.iter().map(|&xi| psi * (xbar - xi)).sum();
            let scale: f64 = x.iter().map(|v| v.abs()).sum::<f64>() * psi.abs() + 1.0;
            prop_assert!(total.abs() <= 1e-13 * scale);
        }
    }
}
