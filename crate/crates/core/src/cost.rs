//! Cost functionals, Monte Carlo cost estimates and unilateral-deviation tests.

use std::io::{self, Write};

use thiserror::Error;

use crate::equilibrium::FeedbackGain;
use crate::output::num;
use crate::params::ModelParams;
use crate::riccati::TimeGrid;
use crate::scalar::{mean_and_stderr, Scalar};
use crate::sim::{simulate_nplayer, PathBundle, PlayerStrategy, SimConfig, SimError, StrategySpec};

/// Paths simulated per chunk in deviation tests, before the cell cap applies.
const DEVIATION_CHUNK_CELLS: usize = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("bundle contains no paths")]
    EmptyBundle,
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// `γ²/2 - θγ(x̄ - xⁱ) + (ε/2)(x̄ - xⁱ)²`.
pub fn running_cost<T: Scalar>(xbar: T, xi: T, gamma: T, params: &ModelParams<T>) -> T {
    let d = xbar - xi;
    let half = T::lit(0.5);
    half * gamma * gamma - params.incentive() * gamma * d + half * params.running_penalty() * d * d
}

/// `(c/2)(x̄ - xⁱ)²`.
pub fn terminal_cost<T: Scalar>(xbar: T, xi: T, params: &ModelParams<T>) -> T {
    let d = xbar - xi;
    T::lit(0.5) * params.terminal_penalty() * d * d
}

/// Realised cost components of every player along one path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathCost<T> {
    pub path_id: u64,
    pub running: Vec<T>,
    pub terminal: Vec<T>,
}

impl<T: Scalar> PathCost<T> {
    pub fn total(&self, player: usize) -> T {
        self.running[player] + self.terminal[player]
    }
}

/// Integrates `λ f` by the trapezoid rule on the merged timeline of each path
/// and adds the terminal cost. The control in the integrand is the one the
/// strategy would apply at that instant, so jumps need not be sampled.
pub fn path_costs<T: Scalar>(bundle: &PathBundle<T>, params: &ModelParams<T>) -> Result<Vec<PathCost<T>>, CostError> {
    if bundle.paths.is_empty() {
        return Err(CostError::EmptyBundle);
    }
    if bundle.grid.horizon() != params.horizon() {
        return Err(CostError::GridMismatch(format!(
            "bundle ends at {} but T = {}",
            bundle.grid.horizon(),
            params.horizon()
        )));
    }
    if bundle.params_hash != params.fingerprint() {
        return Err(CostError::GridMismatch("bundle was simulated with different parameters".into()));
    }
    let n = bundle.n_players;
    let lambda = params.intensity();
    let half = T::lit(0.5);
    let last = bundle.grid.len() - 1;

    let integrand = |t: T, state: &[T], out: &mut [T]| {
        let reference = bundle.reference_at_time(t, state);
        for (i, slot) in out.iter_mut().enumerate() {
            let gamma = bundle.strategy.control(i, t, reference - state[i]);
            *slot = lambda * running_cost(reference, state[i], gamma, params);
        }
    };

    let costs = bundle
        .paths
        .iter()
        .map(|path| {
            let mut running = vec![T::zero(); n];
            let mut terminal = vec![T::zero(); n];
            let mut prev_t = T::zero();
            let mut prev_f = vec![T::zero(); n];
            let mut cur_f = vec![T::zero(); n];
            let mut started = false;
            path.walk(&bundle.grid, n, |node| {
                integrand(node.time, node.left, &mut cur_f);
                if started {
                    let dt = node.time - prev_t;
                    for i in 0..n {
                        running[i] = running[i] + half * dt * (prev_f[i] + cur_f[i]);
                    }
                }
                started = true;
                if node.jump.is_some() {
                    integrand(node.time, node.right, &mut prev_f);
                } else {
                    prev_f.copy_from_slice(&cur_f);
                }
                prev_t = node.time;
                if node.grid_index == Some(last) {
                    let reference = bundle.reference_at(last, node.left);
                    for (slot, &x) in terminal.iter_mut().zip(node.left) {
                        *slot = terminal_cost(reference, x, params);
                    }
                }
            });
            PathCost { path_id: path.path_id, running, terminal }
        })
        .collect();
    Ok(costs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlayerCost<T> {
    /// Equal to `running + terminal` by construction.
    pub mean_cost: T,
    pub stderr: T,
    pub running: T,
    pub terminal: T,
}

/// Per-player Monte Carlo cost estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReport<T> {
    pub players: Vec<PlayerCost<T>>,
    pub n_paths: usize,
}

impl<T: Scalar> CostReport<T> {
    pub fn from_path_costs(costs: &[PathCost<T>]) -> Result<Self, CostError> {
        let first = costs.first().ok_or(CostError::EmptyBundle)?;
        let n = first.running.len();
        let players = (0..n)
            .map(|i| {
                let (running, _) = mean_and_stderr(costs.iter().map(|c| c.running[i]));
                let (terminal, _) = mean_and_stderr(costs.iter().map(|c| c.terminal[i]));
                let (_, stderr) = mean_and_stderr(costs.iter().map(|c| c.total(i)));
                PlayerCost { mean_cost: running + terminal, stderr, running, terminal }
            })
            .collect();
        Ok(CostReport { players, n_paths: costs.len() })
    }

    /// Writes `player,mean_cost,stderr,running,terminal`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "player,mean_cost,stderr,running,terminal")?;
        for (i, p) in self.players.iter().enumerate() {
            writeln!(out, "{},{},{},{},{}", i, num(p.mean_cost), num(p.stderr), num(p.running), num(p.terminal))?;
        }
        out.flush()
    }
}

pub fn estimate_costs<T: Scalar>(bundle: &PathBundle<T>, params: &ModelParams<T>) -> Result<CostReport<T>, CostError> {
    CostReport::from_path_costs(&path_costs(bundle, params)?)
}

/// Outcome of letting player 0 deviate while everyone else stays at equilibrium.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationReport<T> {
    pub deviation: PlayerStrategy<T>,
    pub baseline: CostReport<T>,
    pub deviated: CostReport<T>,
    /// Deviated minus baseline cost of player 0.
    pub delta: T,
    /// Standard error of `delta` under common random numbers.
    pub delta_stderr: T,
    pub seed: u64,
    pub n_paths: usize,
}

impl<T: Scalar> DeviationReport<T> {
    /// The deviation does not improve player 0's cost beyond `k` standard errors.
    pub fn is_not_improvement(&self, k: T) -> bool {
        self.delta >= -k * self.delta_stderr
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "deviation = {}", self.deviation)?;
        writeln!(out, "seed = {}", self.seed)?;
        writeln!(out, "n_paths = {}", self.n_paths)?;
        writeln!(out, "baseline_cost = {}", num(self.baseline.players[0].mean_cost))?;
        writeln!(out, "baseline_stderr = {}", num(self.baseline.players[0].stderr))?;
        writeln!(out, "deviated_cost = {}", num(self.deviated.players[0].mean_cost))?;
        writeln!(out, "deviated_stderr = {}", num(self.deviated.players[0].stderr))?;
        writeln!(out, "delta = {}", num(self.delta))?;
        writeln!(out, "delta_stderr = {}", num(self.delta_stderr))?;
        out.flush()
    }

    /// Writes the header plus a single `deviation,seed,n_paths,baseline_cost,deviated_cost,delta,delta_stderr` row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "deviation,seed,n_paths,baseline_cost,deviated_cost,delta,delta_stderr")?;
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            self.deviation,
            self.seed,
            self.n_paths,
            num(self.baseline.players[0].mean_cost),
            num(self.deviated.players[0].mean_cost),
            num(self.delta),
            num(self.delta_stderr)
        )?;
        out.flush()
    }
}

/// Runs the all-equilibrium profile and the profile where player 0 plays
/// `deviation` on identical random numbers and compares player 0's costs.
pub fn nash_deviation_test<T: Scalar>(
    params: &ModelParams<T>,
    gain: &FeedbackGain<T>,
    deviation: PlayerStrategy<T>,
    grid: &TimeGrid<T>,
    config: &SimConfig,
) -> Result<DeviationReport<T>, CostError> {
    let n = params.n_finite().ok_or(SimError::RequiresFiniteN)?;
    let baseline_spec = StrategySpec::equilibrium(gain.clone(), n);
    let deviated_spec = baseline_spec.clone().with_player(0, deviation)?;

    let cells_per_path = n * grid.len();
    let chunk = (DEVIATION_CHUNK_CELLS.min(config.max_cells) / cells_per_path).max(1);

    let mut base_costs = Vec::with_capacity(config.n_paths);
    let mut dev_costs = Vec::with_capacity(config.n_paths);
    let mut done = 0;
    while done < config.n_paths {
        let take = chunk.min(config.n_paths - done);
        let chunk_cfg = SimConfig { n_paths: take, first_path: config.first_path + done as u64, ..config.clone() };
        let base = simulate_nplayer(params, &baseline_spec, grid, &chunk_cfg)?;
        base_costs.extend(path_costs(&base, params)?);
        drop(base);
        let dev = simulate_nplayer(params, &deviated_spec, grid, &chunk_cfg)?;
        dev_costs.extend(path_costs(&dev, params)?);
        done += take;
    }

    let baseline = CostReport::from_path_costs(&base_costs)?;
    let deviated = CostReport::from_path_costs(&dev_costs)?;
    let (delta, delta_stderr) =
        mean_and_stderr(base_costs.iter().zip(&dev_costs).map(|(b, d)| d.total(0) - b.total(0)));
    Ok(DeviationReport {
        deviation,
        baseline,
        deviated,
        delta,
        delta_stderr,
        seed: config.seed,
        n_paths: config.n_paths,
    })
}
