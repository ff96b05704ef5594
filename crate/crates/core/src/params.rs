//! Model inputs: validation, the n = ∞ limit and the flat key-value config format.

use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::scalar::Scalar;

/// Recognised configuration keys, in canonical order.
pub const CONFIG_KEYS: [&str; 10] = ["n", "T", "a", "sigma", "theta", "eps", "c", "lambda", "x0_mean", "x0_std"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("convexity violated: theta^2 = {theta_sq} exceeds eps = {eps}")]
    ConvexityViolated { theta_sq: f64, eps: f64 },
    #[error("`{0}` must be strictly positive")]
    NonPositive(&'static str),
    #[error("`{0}` must be non-negative")]
    Negative(&'static str),
    #[error("`{0}` must be finite")]
    NonFinite(&'static str),
    #[error("number of players must be an integer >= 2 or `inf`, got {0}")]
    BadN(String),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {reason}")]
    BadValue { key: String, reason: String },
    #[error("malformed override `{0}` (expected key=value)")]
    BadOverride(String),
    #[error("cannot parse config: {0}")]
    Syntax(String),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Invalid(#[from] ParamError),
}

/// Number of banks: a finite count or the mean-field limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Players {
    Finite(u64),
    Infinite,
}

impl Players {
    pub fn is_finite(self) -> bool {
        matches!(self, Players::Finite(_))
    }

    /// `1 - 1/n`, equal to one in the limit.
    pub fn kappa<T: Scalar>(self) -> T {
        match self {
            Players::Finite(n) => T::one() - T::one() / T::lit(n as f64),
            Players::Infinite => T::one(),
        }
    }
}

impl fmt::Display for Players {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Players::Finite(n) => write!(f, "{n}"),
            Players::Infinite => f.write_str("inf"),
        }
    }
}

/// Law of the i.i.d. initial log-reserves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialLaw<T> {
    PointMass(T),
    Gaussian { mean: T, std: T },
}

impl<T: Scalar> InitialLaw<T> {
    pub fn mean(&self) -> T {
        match *self {
            InitialLaw::PointMass(x) => x,
            InitialLaw::Gaussian { mean, .. } => mean,
        }
    }

    pub fn std(&self) -> T {
        match *self {
            InitialLaw::PointMass(_) => T::zero(),
            InitialLaw::Gaussian { std, .. } => std,
        }
    }

    /// Maps a standard normal draw to a draw from this law.
    pub fn from_standard_normal(&self, z: f64) -> T {
        match *self {
            InitialLaw::PointMass(x) => x,
            InitialLaw::Gaussian { mean, std } => mean + std * T::lit(z),
        }
    }
}

/// Unvalidated parameter record, as read from a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawParams {
    /// `f64::INFINITY` encodes the mean-field limit.
    pub n: f64,
    pub horizon: f64,
    pub a: f64,
    pub sigma: f64,
    pub theta: f64,
    pub eps: f64,
    pub c: f64,
    pub lambda: f64,
    pub x0_mean: f64,
    pub x0_std: f64,
}

impl RawParams {
    /// Convergence-study parameters: T=2, a=1, θ=1, ε=10, λ=0.7, c=0 (n=10, σ=0.8, X₀=0).
    pub fn baseline() -> Self {
        RawParams {
            n: 10.0,
            horizon: 2.0,
            a: 1.0,
            sigma: 0.8,
            theta: 1.0,
            eps: 10.0,
            c: 0.0,
            lambda: 0.7,
            x0_mean: 0.0,
            x0_std: 0.0,
        }
    }

    /// Typical-scenario parameters: n=10, T=2, a=1, σ=0.8, X₀=0, θ=1, ε=10, c=0, λ=1.2.
    pub fn scenario() -> Self {
        RawParams { lambda: 1.2, ..Self::baseline() }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Self::baseline().merge_toml_str(text)
    }

    /// Overlays the keys present in `text` onto `self`. Unknown keys are rejected.
    pub fn merge_toml_str(mut self, text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        for (key, value) in &table {
            let number = match value {
                toml::Value::Integer(i) => *i as f64,
                toml::Value::Float(f) => *f,
                toml::Value::String(s) => parse_number(key, s)?,
                other => {
                    return Err(ConfigError::BadValue {
                        key: key.clone(),
                        reason: format!("expected a number, found {}", other.type_str()),
                    })
                }
            };
            self.set(key, number)?;
        }
        Ok(self)
    }

    pub fn merge_file(self, path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        self.merge_toml_str(&text)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), ConfigError> {
        let (key, value) = spec.split_once('=').ok_or_else(|| ConfigError::BadOverride(spec.to_string()))?;
        let key = key.trim();
        let value = parse_number(key, value.trim())?;
        self.set(key, value)
    }

    pub fn set(&mut self, key: &str, value: f64) -> Result<(), ConfigError> {
        let slot = match key {
            "n" => &mut self.n,
            "T" => &mut self.horizon,
            "a" => &mut self.a,
            "sigma" => &mut self.sigma,
            "theta" => &mut self.theta,
            "eps" => &mut self.eps,
            "c" => &mut self.c,
            "lambda" => &mut self.lambda,
            "x0_mean" => &mut self.x0_mean,
            "x0_std" => &mut self.x0_std,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        };
        *slot = value;
        Ok(())
    }

    /// Renders the record in the config syntax accepted by [`RawParams::from_toml_str`].
    pub fn to_toml_string(&self) -> String {
        let n = if self.n.is_infinite() { "\"inf\"".to_string() } else { format!("{}", self.n) };
        format!(
            "n = {n}\nT = {:?}\na = {:?}\nsigma = {:?}\ntheta = {:?}\neps = {:?}\nc = {:?}\nlambda = {:?}\nx0_mean = {:?}\nx0_std = {:?}\n",
            self.horizon, self.a, self.sigma, self.theta, self.eps, self.c, self.lambda, self.x0_mean, self.x0_std
        )
    }
}

fn parse_number(key: &str, text: &str) -> Result<f64, ConfigError> {
    let lowered = text.trim().trim_matches('"').to_ascii_lowercase();
    match lowered.as_str() {
        "inf" | "infinity" | "+inf" => return Ok(f64::INFINITY),
        _ => {}
    }
    lowered.parse::<f64>().map_err(|e| ConfigError::BadValue { key: key.to_string(), reason: e.to_string() })
}

/// Validated model inputs. Only obtainable through [`ModelParams::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    players: Players,
    horizon: T,
    mean_reversion: T,
    volatility: T,
    incentive: T,
    running_penalty: T,
    terminal_penalty: T,
    intensity: T,
    initial_law: InitialLaw<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn validate(raw: &RawParams) -> Result<Self, ParamError> {
        let fields = [
            ("T", raw.horizon),
            ("a", raw.a),
            ("sigma", raw.sigma),
            ("theta", raw.theta),
            ("eps", raw.eps),
            ("c", raw.c),
            ("lambda", raw.lambda),
            ("x0_mean", raw.x0_mean),
            ("x0_std", raw.x0_std),
        ];
        for (name, value) in fields {
            if !value.is_finite() {
                return Err(ParamError::NonFinite(name));
            }
        }

        let players = if raw.n == f64::INFINITY {
            Players::Infinite
        } else if raw.n.is_finite() && raw.n.fract() == 0.0 && raw.n >= 2.0 && raw.n < 1e15 {
            Players::Finite(raw.n as u64)
        } else {
            return Err(ParamError::BadN(format!("{}", raw.n)));
        };

        for (name, value) in [("T", raw.horizon), ("eps", raw.eps), ("lambda", raw.lambda), ("theta", raw.theta)] {
            if value <= 0.0 {
                return Err(ParamError::NonPositive(name));
            }
        }
        for (name, value) in [("a", raw.a), ("sigma", raw.sigma), ("c", raw.c), ("x0_std", raw.x0_std)] {
            if value < 0.0 {
                return Err(ParamError::Negative(name));
            }
        }

        // Checked in the target precision so the boundary θ² = ε stays admissible.
        let theta = T::lit(raw.theta);
        let eps = T::lit(raw.eps);
        if theta * theta > eps {
            return Err(ParamError::ConvexityViolated { theta_sq: raw.theta * raw.theta, eps: raw.eps });
        }

        let initial_law = if raw.x0_std == 0.0 {
            InitialLaw::PointMass(T::lit(raw.x0_mean))
        } else {
            InitialLaw::Gaussian { mean: T::lit(raw.x0_mean), std: T::lit(raw.x0_std) }
        };

        Ok(ModelParams {
            players,
            horizon: T::lit(raw.horizon),
            mean_reversion: T::lit(raw.a),
            volatility: T::lit(raw.sigma),
            incentive: theta,
            running_penalty: eps,
            terminal_penalty: T::lit(raw.c),
            intensity: T::lit(raw.lambda),
            initial_law,
        })
    }

    /// Same parameters with `n = ∞`.
    pub fn limit_of(&self) -> Self {
        ModelParams { players: Players::Infinite, ..self.clone() }
    }

    /// Same parameters with a different finite or infinite player count.
    pub fn with_players(&self, players: Players) -> Result<Self, ParamError> {
        if let Players::Finite(n) = players {
            if n < 2 {
                return Err(ParamError::BadN(n.to_string()));
            }
        }
        Ok(ModelParams { players, ..self.clone() })
    }

    /// Same parameters with another jump intensity.
    pub fn with_intensity(&self, lambda: T) -> Result<Self, ParamError> {
        if !lambda.is_finite() {
            return Err(ParamError::NonFinite("lambda"));
        }
        if lambda <= T::zero() {
            return Err(ParamError::NonPositive("lambda"));
        }
        Ok(ModelParams { intensity: lambda, ..self.clone() })
    }

    pub fn players(&self) -> Players {
        self.players
    }
    pub fn horizon(&self) -> T {
        self.horizon
    }
    pub fn mean_reversion(&self) -> T {
        self.mean_reversion
    }
    pub fn volatility(&self) -> T {
        self.volatility
    }
    pub fn incentive(&self) -> T {
        self.incentive
    }
    pub fn running_penalty(&self) -> T {
        self.running_penalty
    }
    pub fn terminal_penalty(&self) -> T {
        self.terminal_penalty
    }
    pub fn intensity(&self) -> T {
        self.intensity
    }
    pub fn initial_law(&self) -> InitialLaw<T> {
        self.initial_law
    }

    /// `1 - 1/n` (one when `n = ∞`).
    pub fn kappa(&self) -> T {
        self.players.kappa()
    }

    /// Number of players as a scalar; `None` in the limit.
    pub fn n_finite(&self) -> Option<usize> {
        match self.players {
            Players::Finite(n) => usize::try_from(n).ok(),
            Players::Infinite => None,
        }
    }

    /// The limit analysis assumes centred initial conditions.
    pub fn is_centered(&self) -> bool {
        self.initial_law.mean() == T::zero()
    }

    /// Stable FNV-1a fingerprint of all inputs.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bits: u64| {
            for byte in bits.to_le_bytes() {
                h ^= u64::from(byte);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        feed(match self.players {
            Players::Finite(n) => n,
            Players::Infinite => u64::MAX,
        });
        for v in [
            self.horizon,
            self.mean_reversion,
            self.volatility,
            self.incentive,
            self.running_penalty,
            self.terminal_penalty,
            self.intensity,
            self.initial_law.mean(),
            self.initial_law.std(),
        ] {
            feed(v.as_f64().to_bits());
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw_with(f: impl FnOnce(&mut RawParams)) -> RawParams {
        let mut raw = RawParams::baseline();
        f(&mut raw);
        raw
    }

    #[test]
    fn scenario_params_are_valid() {
        let p = ModelParams::<f64>::validate(&RawParams::scenario()).unwrap();
        assert_eq!(p.players(), Players::Finite(10));
        assert_eq!(p.intensity(), 1.2);
        assert_eq!(p.initial_law(), InitialLaw::PointMass(0.0));
    }

    #[test]
    fn convexity_violation_is_rejected() {
        let raw = raw_with(|r| {
            r.theta = 2.0;
            r.eps = 1.0;
        });
        assert!(matches!(ModelParams::<f64>::validate(&raw), Err(ParamError::ConvexityViolated { .. })));
    }

    #[test]
    fn convexity_boundary_is_accepted() {
        let raw = raw_with(|r| {
            r.theta = 1.0;
            r.eps = 1.0;
            r.c = 0.0;
        });
        assert!(ModelParams::<f64>::validate(&raw).is_ok());
        assert!(ModelParams::<f32>::validate(&raw).is_ok());
    }

    #[test]
    fn nonpositive_and_bad_n() {
        for key in ["T", "eps", "lambda"] {
            let mut raw = RawParams::baseline();
            raw.set(key, 0.0).unwrap();
            assert_eq!(ModelParams::<f64>::validate(&raw), Err(ParamError::NonPositive(key)), "{key}");
        }
        for n in [1.0, 0.0, -3.0, 2.5, f64::NAN, f64::NEG_INFINITY] {
            let raw = raw_with(|r| r.n = n);
            assert!(matches!(ModelParams::<f64>::validate(&raw), Err(ParamError::BadN(_))), "{n}");
        }
        let raw = raw_with(|r| r.sigma = -0.1);
        assert_eq!(ModelParams::<f64>::validate(&raw), Err(ParamError::Negative("sigma")));
    }

    #[test]
    fn limit_of_replaces_only_player_count() {
        let p = ModelParams::<f64>::validate(&RawParams::baseline()).unwrap();
        let lim = p.limit_of();
        assert_eq!(lim.players(), Players::Infinite);
        assert_eq!(lim.intensity(), p.intensity());
        assert_eq!(lim.horizon(), p.horizon());
        assert_eq!(lim.limit_of(), lim);
        assert_eq!(lim.kappa(), 1.0);
    }

    #[test]
    fn config_parsing_and_overrides() {
        let text = "n = \"inf\"\nT = 2\nlambda = 1.2\nsigma = 0.5\n";
        let raw = RawParams::from_toml_str(text).unwrap();
        assert!(raw.n.is_infinite());
        assert_eq!(raw.lambda, 1.2);
        assert_eq!(raw.sigma, 0.5);
        assert_eq!(raw.eps, 10.0);

        let err = RawParams::from_toml_str("n = 10\nfoo = 1\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey(k) if k == "foo"));

        let mut raw = RawParams::baseline();
        raw.apply_override("n=inf").unwrap();
        assert!(raw.n.is_infinite());
        raw.apply_override(" c = 1 ").unwrap();
        assert_eq!(raw.c, 1.0);
        assert!(matches!(raw.apply_override("c"), Err(ConfigError::BadOverride(_))));
        assert!(matches!(raw.apply_override("zeta=1"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(raw.apply_override("c=abc"), Err(ConfigError::BadValue { .. })));
    }

    #[test]
    fn toml_round_trip() {
        let mut raw = RawParams::scenario();
        raw.x0_std = 0.3;
        assert_eq!(RawParams::from_toml_str(&raw.to_toml_string()).unwrap(), raw);
        raw.n = f64::INFINITY;
        assert_eq!(RawParams::from_toml_str(&raw.to_toml_string()).unwrap(), raw);
    }

    #[test]
    fn fingerprint_tracks_inputs() {
        let p = ModelParams::<f64>::validate(&RawParams::baseline()).unwrap();
        let q = ModelParams::<f64>::validate(&RawParams::scenario()).unwrap();
        assert_eq!(p.fingerprint(), p.clone().fingerprint());
        assert_ne!(p.fingerprint(), q.fingerprint());
        assert_ne!(p.fingerprint(), p.limit_of().fingerprint());
    }

    proptest! {
        #[test]
        fn validate_is_total(
            n in prop_oneof![Just(f64::INFINITY), Just(f64::NAN), -5.0..200.0f64],
            t in -1.0..5.0f64,
            a in -1.0..3.0f64,
            sigma in -1.0..3.0f64,
            theta in -2.0..4.0f64,
            eps in -1.0..12.0f64,
            c in -1.0..3.0f64,
            lambda in -1.0..10.0f64,
        ) {
            let raw = RawParams { n, horizon: t, a, sigma, theta, eps, c, lambda, x0_mean: 0.0, x0_std: 0.0 };
            if let Ok(p) = ModelParams::<f64>::validate(&raw) {
                prop_assert!(p.incentive() * p.incentive() <= p.running_penalty());
                prop_assert!(p.horizon() > 0.0 && p.intensity() > 0.0 && p.running_penalty() > 0.0);
                prop_assert!(p.volatility() >= 0.0 && p.terminal_penalty() >= 0.0);
                if let Players::Finite(n) = p.players() { prop_assert!(n >= 2); }
            }
        }
    }
}
