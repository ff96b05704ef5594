//! Monte Carlo simulation of the controlled jump-diffusion system.
//!
//! Each bank follows `dXⁱ = a(X̄ - Xⁱ)dt + σ dWⁱ + γⁱ dNⁱ` where `Nⁱ` are independent
//! Poisson processes of intensity λ. Jump times are drawn exactly from exponential
//! inter-arrivals and merged into the diffusion grid; between consecutive event
//! times the state moves by one Euler–Maruyama step.
//!
//! Every path owns three random streams derived from `(seed, path id)`: initial
//! states, Brownian increments and jump times. Paths never share state, so the
//! result does not depend on how paths are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::equilibrium::FeedbackGain;
use crate::params::ModelParams;
use crate::riccati::{interpolate_clamped, TimeGrid};
use crate::scalar::{mean_and_stderr, Scalar};

/// Default cap on stored state values per bundle (paths × players × grid points).
pub const DEFAULT_MAX_CELLS: usize = 40_000_000;
pub const DEFAULT_SIM_STEPS: usize = 500;

const STREAM_INIT: u64 = 0;
const STREAM_BROWNIAN: u64 = 1;
const STREAM_JUMPS: u64 = 2;
const STREAMS_PER_PATH: u64 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("simulation requires a finite number of players")]
    RequiresFiniteN,
    #[error("limit simulation requires n = inf")]
    RequiresLimit,
    #[error("bundle would hold {cells} values, above the cap of {cap}")]
    OutOfMemory { cells: usize, cap: usize },
    #[error("strategy lists {got} players but the model has {expected}")]
    StrategyCount { expected: usize, got: usize },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("bundle contains no paths")]
    EmptyBundle,
    #[error("invalid scaling factor {0}")]
    BadFactor(f64),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// Control rule of one player.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlayerStrategy<T> {
    /// `ψ_t · deviation`.
    Equilibrium,
    /// `factor · ψ_t · deviation`.
    Scaled(T),
    Zero,
    Constant(T),
}

impl<T: Scalar> std::fmt::Display for PlayerStrategy<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PlayerStrategy::Equilibrium => f.write_str("equilibrium"),
            PlayerStrategy::Scaled(k) => write!(f, "scaled:{k}"),
            PlayerStrategy::Zero => f.write_str("zero"),
            PlayerStrategy::Constant(v) => write!(f, "constant:{v}"),
        }
    }
}

impl<T: Scalar> std::str::FromStr for PlayerStrategy<T> {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let number = |a: Option<&str>| -> Result<T, String> {
            let a = a.ok_or_else(|| format!("`{head}` needs a value, e.g. {head}:1.5"))?;
            let v: f64 = a.trim().parse().map_err(|e| format!("bad number `{a}`: {e}"))?;
            if !v.is_finite() {
                return Err(format!("value `{a}` must be finite"));
            }
            Ok(T::lit(v))
        };
        match head {
            "equilibrium" | "eq" => Ok(PlayerStrategy::Equilibrium),
            "zero" => Ok(PlayerStrategy::Zero),
            "scaled" => Ok(PlayerStrategy::Scaled(number(arg)?)),
            "constant" => Ok(PlayerStrategy::Constant(number(arg)?)),
            other => Err(format!("unknown strategy `{other}` (equilibrium, zero, scaled:F, constant:V)")),
        }
    }
}

/// One strategy per player plus the gain the gain-based strategies refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategySpec<T> {
    gain: FeedbackGain<T>,
    players: Vec<PlayerStrategy<T>>,
}

impl<T: Scalar> StrategySpec<T> {
    pub fn equilibrium(gain: FeedbackGain<T>, n: usize) -> Self {
        Self::uniform(gain, n, PlayerStrategy::Equilibrium)
    }

    pub fn uniform(gain: FeedbackGain<T>, n: usize, strategy: PlayerStrategy<T>) -> Self {
        StrategySpec { gain, players: vec![strategy; n] }
    }

    /// Replaces the strategy of `player`.
    pub fn with_player(mut self, player: usize, strategy: PlayerStrategy<T>) -> Result<Self, SimError> {
        let n = self.players.len();
        if player >= n {
            return Err(SimError::StrategyCount { expected: player + 1, got: n });
        }
        if let PlayerStrategy::Scaled(f) | PlayerStrategy::Constant(f) = strategy {
            if !f.is_finite() {
                return Err(SimError::BadFactor(f.as_f64()));
            }
        }
        self.players[player] = strategy;
        Ok(self)
    }

    pub fn gain(&self) -> &FeedbackGain<T> {
        &self.gain
    }

    pub fn players(&self) -> &[PlayerStrategy<T>] {
        &self.players
    }

    /// Jump size `player` would choose at time `t` given its left-limit deviation `x̄ - xⁱ`.
    pub fn control(&self, player: usize, t: T, deviation: T) -> T {
        match self.players[player] {
            PlayerStrategy::Equilibrium => self.gain.at_clamped(t) * deviation,
            PlayerStrategy::Scaled(f) => f * self.gain.at_clamped(t) * deviation,
            PlayerStrategy::Zero => T::zero(),
            PlayerStrategy::Constant(v) => v,
        }
    }

    fn validate(&self, expected: usize) -> Result<(), SimError> {
        if self.players.len() != expected {
            return Err(SimError::StrategyCount { expected, got: self.players.len() });
        }
        for s in &self.players {
            if let PlayerStrategy::Scaled(f) | PlayerStrategy::Constant(f) = s {
                if !f.is_finite() {
                    return Err(SimError::BadFactor(f.as_f64()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub n_paths: usize,
    /// Id of the first simulated path; lets large runs be split into chunks.
    pub first_path: u64,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
    pub max_cells: usize,
}

impl SimConfig {
    pub fn new(seed: u64, n_paths: usize) -> Self {
        SimConfig { seed, n_paths, first_path: 0, threads: None, max_cells: DEFAULT_MAX_CELLS }
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = Some(threads);
        self
    }

    pub fn with_first_path(mut self, first_path: u64) -> Self {
        self.first_path = first_path;
        self
    }
}

/// Reference level each player's deviation is measured against.
#[derive(Debug, Clone, PartialEq)]
pub enum MeanReference<T> {
    /// Empirical average of the players (finite game).
    Empirical,
    /// Deterministic mean flow `m(t)` on the simulation grid (limit player).
    Given(Vec<T>),
}

/// A single jump of one player.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent<T> {
    pub path_id: u64,
    pub player: usize,
    pub time: T,
    pub gamma: T,
}

/// A jump together with the left-limit state of all players at its time.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpRecord<T> {
    pub player: usize,
    pub time: T,
    pub gamma: T,
    pub left: Vec<T>,
}

impl<T: Scalar> JumpRecord<T> {
    /// Right limit: the left limit with the jumping player moved by `gamma`.
    pub fn right(&self) -> Vec<T> {
        let mut r = self.left.clone();
        r[self.player] = r[self.player] + self.gamma;
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord<T> {
    pub path_id: u64,
    /// Row-major `(M + 1) × n` states at grid times.
    pub grid_states: Vec<T>,
    /// Jumps in processing order (time, then player index).
    pub jumps: Vec<JumpRecord<T>>,
}

/// Node of the merged timeline of one path.
#[derive(Debug, Clone, Copy)]
pub struct TimelineNode<'a, T> {
    pub time: T,
    /// Grid index when the node is a grid point.
    pub grid_index: Option<usize>,
    pub left: &'a [T],
    pub right: &'a [T],
    pub jump: Option<(usize, T)>,
}

impl<T: Scalar> PathRecord<T> {
    pub fn state(&self, grid_index: usize, n_players: usize) -> &[T] {
        &self.grid_states[grid_index * n_players..(grid_index + 1) * n_players]
    }

    /// Visits grid points and jumps in time order; a grid point precedes a jump at the same time.
    pub fn walk(&self, grid: &TimeGrid<T>, n_players: usize, mut visit: impl FnMut(TimelineNode<'_, T>)) {
        let mut scratch = vec![T::zero(); n_players];
        let mut next_jump = 0;
        for g in 0..grid.len() {
            let t = grid.time(g);
            while next_jump < self.jumps.len() && self.jumps[next_jump].time < t {
                let j = &self.jumps[next_jump];
                scratch.copy_from_slice(&j.left);
                scratch[j.player] = scratch[j.player] + j.gamma;
                visit(TimelineNode {
                    time: j.time,
                    grid_index: None,
                    left: &j.left,
                    right: &scratch,
                    jump: Some((j.player, j.gamma)),
                });
                next_jump += 1;
            }
            let s = self.state(g, n_players);
            visit(TimelineNode { time: t, grid_index: Some(g), left: s, right: s, jump: None });
        }
        for j in &self.jumps[next_jump..] {
            scratch.copy_from_slice(&j.left);
            scratch[j.player] = scratch[j.player] + j.gamma;
            visit(TimelineNode {
                time: j.time,
                grid_index: None,
                left: &j.left,
                right: &scratch,
                jump: Some((j.player, j.gamma)),
            });
        }
    }
}

/// Simulated trajectories of all players plus their jump events.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle<T> {
    pub params_hash: u64,
    pub grid: TimeGrid<T>,
    pub n_players: usize,
    pub seed: u64,
    pub paths: Vec<PathRecord<T>>,
    pub strategy: StrategySpec<T>,
    pub reference: MeanReference<T>,
}

impl<T: Scalar> PathBundle<T> {
    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn events(&self) -> impl Iterator<Item = JumpEvent<T>> + '_ {
        self.paths.iter().flat_map(|p| {
            p.jumps.iter().map(move |j| JumpEvent {
                path_id: p.path_id,
                player: j.player,
                time: j.time,
                gamma: j.gamma,
            })
        })
    }

    /// Reference level at grid index `g` for the given state row.
    pub fn reference_at(&self, g: usize, state: &[T]) -> T {
        match &self.reference {
            MeanReference::Empirical => row_mean(state),
            MeanReference::Given(m) => m[g],
        }
    }

    /// Reference level at an arbitrary time for the given state row.
    pub fn reference_at_time(&self, t: T, state: &[T]) -> T {
        match &self.reference {
            MeanReference::Empirical => row_mean(state),
            MeanReference::Given(m) => interpolate_clamped(&self.grid, m, t),
        }
    }

    /// Writes `path,t,player,x`. Jump times contribute the left limit of every
    /// player followed by the right limit of the jumping player.
    pub fn write_paths_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        use crate::output::num;
        writeln!(out, "path,t,player,x")?;
        for path in &self.paths {
            let mut result: std::io::Result<()> = Ok(());
            path.walk(&self.grid, self.n_players, |node| {
                if result.is_err() {
                    return;
                }
                let t = num(node.time);
                result = (|| -> std::io::Result<()> {
                    for (i, x) in node.left.iter().enumerate() {
                        writeln!(out, "{},{},{},{}", path.path_id, t, i, num(*x))?;
                    }
                    if let Some((player, _)) = node.jump {
                        writeln!(out, "{},{},{},{}", path.path_id, t, player, num(node.right[player]))?;
                    }
                    Ok(())
                })();
            });
            result?;
        }
        out.flush()
    }

    /// Writes `path,player,time,gamma`.
    pub fn write_events_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        use crate::output::num;
        writeln!(out, "path,player,time,gamma")?;
        for e in self.events() {
            writeln!(out, "{},{},{},{}", e.path_id, e.player, num(e.time), num(e.gamma))?;
        }
        out.flush()
    }
}

fn row_mean<T: Scalar>(x: &[T]) -> T {
    x.iter().copied().sum::<T>() / T::from_count(x.len())
}

fn stream(seed: u64, path_id: u64, sub: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_id.wrapping_mul(STREAMS_PER_PATH).wrapping_add(sub));
    rng
}

/// Jump times of `n` independent Poisson processes on `(0, T)`, ordered by time then player.
fn draw_jump_times<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, lambda: T, horizon: T) -> Vec<(T, usize)> {
    let mut events = Vec::new();
    for player in 0..n {
        let mut t = T::zero();
        loop {
            let e: f64 = Exp1.sample(rng);
            t = t + T::lit(e) / lambda;
            if t >= horizon {
                break;
            }
            events.push((t, player));
        }
    }
    events.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    events
}

fn check_common<T: Scalar>(
    params: &ModelParams<T>,
    strategy: &StrategySpec<T>,
    grid: &TimeGrid<T>,
    n: usize,
    config: &SimConfig,
) -> Result<(), SimError> {
    strategy.validate(n)?;
    if grid.horizon() != params.horizon() {
        return Err(SimError::GridMismatch(format!("grid ends at {} but T = {}", grid.horizon(), params.horizon())));
    }
    if strategy.gain().grid().horizon() != params.horizon() {
        return Err(SimError::GridMismatch(format!(
            "gain grid ends at {} but T = {}",
            strategy.gain().grid().horizon(),
            params.horizon()
        )));
    }
    let cells = config.n_paths.saturating_mul(n).saturating_mul(grid.len());
    if cells > config.max_cells {
        return Err(SimError::OutOfMemory { cells, cap: config.max_cells });
    }
    Ok(())
}

fn run_paths<T: Scalar>(
    config: &SimConfig,
    simulate: impl Fn(u64) -> PathRecord<T> + Sync + Send,
) -> Result<Vec<PathRecord<T>>, SimError> {
    let first = config.first_path;
    let job = || (0..config.n_paths as u64).into_par_iter().map(|k| simulate(first + k)).collect::<Vec<_>>();
    match config.threads {
        Some(threads) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| SimError::ThreadPool(e.to_string()))?;
            Ok(pool.install(job))
        }
        None => Ok(job()),
    }
}

/// Simulates the finite game under `strategy`.
pub fn simulate_nplayer<T: Scalar>(
    params: &ModelParams<T>,
    strategy: &StrategySpec<T>,
    grid: &TimeGrid<T>,
    config: &SimConfig,
) -> Result<PathBundle<T>, SimError> {
    let n = params.n_finite().ok_or(SimError::RequiresFiniteN)?;
    check_common(params, strategy, grid, n, config)?;

    let a = params.mean_reversion();
    let sigma = params.volatility();
    let lambda = params.intensity();
    let law = params.initial_law();
    let seed = config.seed;

    let simulate = |path_id: u64| {
        let mut init_rng = stream(seed, path_id, STREAM_INIT);
        let mut bm_rng = stream(seed, path_id, STREAM_BROWNIAN);
        let mut jump_rng = stream(seed, path_id, STREAM_JUMPS);

        let mut x: Vec<T> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut init_rng);
                law.from_standard_normal(z)
            })
            .collect();
        let events = draw_jump_times(&mut jump_rng, n, lambda, grid.horizon());

        let mut grid_states = Vec::with_capacity(grid.len() * n);
        let mut jumps = Vec::with_capacity(events.len());
        let mut advance = |x: &mut [T], dt: T| {
            if dt <= T::zero() {
                return;
            }
            let xbar = row_mean(x);
            let vol = sigma * dt.sqrt();
            for xi in x.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut bm_rng);
                *xi = *xi + a * (xbar - *xi) * dt + vol * T::lit(z);
            }
        };

        grid_states.extend_from_slice(&x);
        let mut now = T::zero();
        let mut next = 0;
        for g in 1..grid.len() {
            let target = grid.time(g);
            while next < events.len() && events[next].0 < target {
                let (t, player) = events[next];
                advance(&mut x, t - now);
                now = t;
                let deviation = row_mean(&x) - x[player];
                let gamma = strategy.control(player, t, deviation);
                jumps.push(JumpRecord { player, time: t, gamma, left: x.clone() });
                x[player] = x[player] + gamma;
                next += 1;
            }
            advance(&mut x, target - now);
            now = target;
            grid_states.extend_from_slice(&x);
        }
        PathRecord { path_id, grid_states, jumps }
    };

    let paths = run_paths(config, simulate)?;
    Ok(PathBundle {
        params_hash: params.fingerprint(),
        grid: grid.clone(),
        n_players: n,
        seed,
        paths,
        strategy: strategy.clone(),
        reference: MeanReference::Empirical,
    })
}

/// Simulates the representative player of the limit game against a given mean flow `m`.
///
/// `strategy` has exactly one entry. `mean_flow` holds `m` on `grid`; `None` means
/// `m ≡ E[X₀]`.
pub fn simulate_limit<T: Scalar>(
    params: &ModelParams<T>,
    strategy: &StrategySpec<T>,
    mean_flow: Option<&[T]>,
    grid: &TimeGrid<T>,
    config: &SimConfig,
) -> Result<PathBundle<T>, SimError> {
    if params.players().is_finite() {
        return Err(SimError::RequiresLimit);
    }
    check_common(params, strategy, grid, 1, config)?;
    let m: Vec<T> = match mean_flow {
        Some(m) if m.len() == grid.len() => m.to_vec(),
        Some(m) => {
            return Err(SimError::GridMismatch(format!(
                "mean flow has {} values for {} grid points",
                m.len(),
                grid.len()
            )))
        }
        None => vec![params.initial_law().mean(); grid.len()],
    };

    let a = params.mean_reversion();
    let sigma = params.volatility();
    let lambda = params.intensity();
    let law = params.initial_law();
    let seed = config.seed;
    let m_ref = &m;

    let simulate = |path_id: u64| {
        let mut init_rng = stream(seed, path_id, STREAM_INIT);
        let mut bm_rng = stream(seed, path_id, STREAM_BROWNIAN);
        let mut jump_rng = stream(seed, path_id, STREAM_JUMPS);

        let z0: f64 = StandardNormal.sample(&mut init_rng);
        let mut x = law.from_standard_normal(z0);
        let events = draw_jump_times(&mut jump_rng, 1, lambda, grid.horizon());

        // The controlled drift λγ dt is cancelled by the compensator of γ dÑ,
        // leaving mean reversion plus raw jumps of size γ.
        let mut advance = |x: &mut T, now: T, dt: T| {
            if dt <= T::zero() {
                return;
            }
            let level = interpolate_clamped(grid, m_ref, now);
            let z: f64 = StandardNormal.sample(&mut bm_rng);
            *x = *x + a * (level - *x) * dt + sigma * dt.sqrt() * T::lit(z);
        };

        let mut grid_states = Vec::with_capacity(grid.len());
        let mut jumps = Vec::with_capacity(events.len());
        grid_states.push(x);
        let mut now = T::zero();
        let mut next = 0;
        for g in 1..grid.len() {
            let target = grid.time(g);
            while next < events.len() && events[next].0 < target {
                let (t, _) = events[next];
                advance(&mut x, now, t - now);
                now = t;
                let deviation = interpolate_clamped(grid, m_ref, t) - x;
                let gamma = strategy.control(0, t, deviation);
                jumps.push(JumpRecord { player: 0, time: t, gamma, left: vec![x] });
                x = x + gamma;
                next += 1;
            }
            advance(&mut x, now, target - now);
            now = target;
            grid_states.push(x);
        }
        PathRecord { path_id, grid_states, jumps }
    };

    let paths = run_paths(config, simulate)?;
    Ok(PathBundle {
        params_hash: params.fingerprint(),
        grid: grid.clone(),
        n_players: 1,
        seed,
        paths,
        strategy: strategy.clone(),
        reference: MeanReference::Given(m),
    })
}

/// Cross-path mean of the (player-averaged) state at every grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFlow<T> {
    pub times: Vec<T>,
    pub mean: Vec<T>,
    pub stderr: Vec<T>,
}

impl<T: Scalar> MeanFlow<T> {
    /// `max_t |mean - target(t)| / stderr`, with `0/0` read as 0.
    pub fn max_standardized_deviation(&self, target: impl Fn(usize) -> T) -> T {
        let mut worst = T::zero();
        for i in 0..self.times.len() {
            let gap = (self.mean[i] - target(i)).abs();
            let z = if gap == T::zero() {
                T::zero()
            } else if self.stderr[i] == T::zero() {
                T::infinity()
            } else {
                gap / self.stderr[i]
            };
            worst = worst.max(z);
        }
        worst
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W, reference: Option<&[T]>) -> std::io::Result<()> {
        use crate::output::num;
        match reference {
            Some(_) => writeln!(out, "t,mean,stderr,m")?,
            None => writeln!(out, "t,mean,stderr")?,
        }
        for i in 0..self.times.len() {
            write!(out, "{},{},{}", num(self.times[i]), num(self.mean[i]), num(self.stderr[i]))?;
            if let Some(m) = reference {
                write!(out, ",{}", num(m[i]))?;
            }
            writeln!(out)?;
        }
        out.flush()
    }
}

pub fn empirical_mean_flow<T: Scalar>(bundle: &PathBundle<T>) -> Result<MeanFlow<T>, SimError> {
    if bundle.paths.is_empty() {
        return Err(SimError::EmptyBundle);
    }
    let n = bundle.n_players;
    let mut mean = Vec::with_capacity(bundle.grid.len());
    let mut stderr = Vec::with_capacity(bundle.grid.len());
    for g in 0..bundle.grid.len() {
        let per_path = bundle.paths.iter().map(|p| row_mean(p.state(g, n)));
        let (m, se) = mean_and_stderr(per_path);
        mean.push(m);
        stderr.push(se);
    }
    Ok(MeanFlow { times: bundle.grid.points().to_vec(), mean, stderr })
}
