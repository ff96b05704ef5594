//! Command-line front end. [`run`] parses arguments, executes one command and
//! returns the process exit code.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::cost::{estimate_costs, nash_deviation_test, CostError};
use crate::equilibrium::gain_from_phi;
use crate::implicit::{domain_check, transform_residual, ImplicitError};
use crate::output::{num, write_table};
use crate::params::{ConfigError, ModelParams, ParamError, RawParams};
use crate::riccati::{solve_phi, OdeError, TimeGrid, DEFAULT_ODE_STEPS};
use crate::sim::{
    empirical_mean_flow, simulate_limit, simulate_nplayer, PlayerStrategy, SimConfig, SimError, StrategySpec,
    DEFAULT_SIM_STEPS,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_VERIFICATION: i32 = 3;

/// Pointwise slack allowed when checking orderings of ψ curves.
const ORDER_TOL: f64 = 1e-9;

#[derive(Debug, Parser)]
#[command(name = "interbank-mfg", version, about = "Interbank mean-field game with controlled jumps")]
pub struct Cli {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Parameter file (TOML, flat keys n, T, a, sigma, theta, eps, c, lambda, x0_mean, x0_std).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Parameter override applied after the config file; repeatable.
    #[arg(long = "set", global = true, value_name = "K=V")]
    pub overrides: Vec<String>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Number of Monte Carlo paths (command-specific default).
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    /// ODE step; defaults to T/2000.
    #[arg(long, global = true)]
    pub dt_ode: Option<f64>,
    /// Simulation step; defaults to T/500.
    #[arg(long, global = true)]
    pub dt_sim: Option<f64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Also dump simulated paths and jump events.
    #[arg(long, global = true)]
    pub paths_out: bool,
    /// Worker threads for path simulation.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Solve for φ and ψ and write `phi.csv`, `psi.csv`.
    SolvePhi,
    /// φ for several n against the limit; writes `phi_convergence.csv`.
    Convergence {
        #[arg(long, value_delimiter = ',', default_values_t = vec![2u64, 5, 10, 50, 100])]
        n_list: Vec<u64>,
    },
    /// Simulate the finite game; writes `paths.csv`, `events.csv`.
    Scenario,
    /// ψ for several intensities; writes `psi_sweep.csv`.
    PsiSweep {
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.5, 1.0, 5.0, 10.0])]
        lambdas: Vec<f64>,
        /// `(n, c)` panels as `n:c`, comma separated; defaults to the configured pair.
        #[arg(long, value_delimiter = ',')]
        panels: Vec<String>,
    },
    /// Unilateral deviation test for player 0; writes `deviation_report.txt` and `.csv`.
    NashCheck {
        /// equilibrium | zero | scaled:F | constant:V
        #[arg(long, default_value = "zero")]
        deviation: String,
    },
    /// Mean-field consistency of the limit player; writes `meanfield.csv`.
    MeanfieldCheck {
        /// equilibrium | zero | scaled:F | constant:V
        #[arg(long, default_value = "equilibrium")]
        control: String,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SolvePhi => "solve-phi",
            Command::Convergence { .. } => "convergence",
            Command::Scenario => "scenario",
            Command::PsiSweep { .. } => "psi-sweep",
            Command::NashCheck { .. } => "nash-check",
            Command::MeanfieldCheck { .. } => "meanfield-check",
        }
    }

    fn preset(&self) -> RawParams {
        match self {
            Command::SolvePhi | Command::Convergence { .. } | Command::PsiSweep { .. } => RawParams::baseline(),
            Command::Scenario | Command::NashCheck { .. } => RawParams::scenario(),
            Command::MeanfieldCheck { .. } => RawParams { n: f64::INFINITY, ..RawParams::baseline() },
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Implicit(#[from] ImplicitError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl From<ParamError> for CliError {
    fn from(e: ParamError) -> Self {
        CliError::Config(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) | CliError::Io { .. } => EXIT_CONFIG,
            CliError::Ode(e) => ode_code(e),
            CliError::Sim(e) => sim_code(e),
            CliError::Cost(CostError::Sim(e)) => sim_code(e),
            CliError::Cost(_) | CliError::Implicit(_) => EXIT_NUMERICAL,
        }
    }
}

fn ode_code(e: &OdeError) -> i32 {
    match e {
        OdeError::InvalidGrid(_) => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

fn sim_code(e: &SimError) -> i32 {
    match e {
        SimError::RequiresFiniteN
        | SimError::RequiresLimit
        | SimError::OutOfMemory { .. }
        | SimError::StrategyCount { .. }
        | SimError::BadFactor(_)
        | SimError::ThreadPool(_) => EXIT_CONFIG,
        SimError::GridMismatch(_) | SimError::EmptyBundle => EXIT_NUMERICAL,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(Verdict::Pass) => EXIT_OK,
        Ok(Verdict::Fail) => EXIT_VERIFICATION,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<Verdict, CliError> {
    let run = &cli.run;
    let raw = load_raw(run, cli.command.preset())?;
    let params = ModelParams::<f64>::validate(&raw)?;
    if let Some(0) = run.threads {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    if let Some(0) = run.paths {
        return Err(CliError::Usage("--paths must be at least 1".into()));
    }
    fs::create_dir_all(&run.out).map_err(|source| io_error(&run.out, source))?;
    if !params.is_centered() {
        eprintln!(
            "warning: initial mean {} is nonzero; the limit analysis assumes centred initial states",
            raw.x0_mean
        );
    }
    write_file(&run.out, "run.toml", |w| {
        writeln!(w, "# command = {}", cli.command.name())?;
        writeln!(w, "# seed = {}", run.seed)?;
        writeln!(w, "# centered = {}", params.is_centered())?;
        w.write_all(raw.to_toml_string().as_bytes())
    })?;

    match &cli.command {
        Command::SolvePhi => solve_phi_cmd(run, &params),
        Command::Convergence { n_list } => convergence_cmd(run, &params, n_list),
        Command::Scenario => scenario_cmd(run, &params),
        Command::PsiSweep { lambdas, panels } => psi_sweep_cmd(run, &raw, lambdas, panels),
        Command::NashCheck { deviation } => nash_check_cmd(run, &params, deviation),
        Command::MeanfieldCheck { control } => meanfield_cmd(run, &params, control),
    }
}

fn load_raw(run: &RunArgs, preset: RawParams) -> Result<RawParams, ConfigError> {
    let mut raw = match &run.config {
        Some(path) => preset.merge_file(path)?,
        None => preset,
    };
    for spec in &run.overrides {
        raw.apply_override(spec)?;
    }
    Ok(raw)
}

fn ode_grid(run: &RunArgs, params: &ModelParams<f64>) -> Result<TimeGrid<f64>, CliError> {
    Ok(match run.dt_ode {
        Some(dt) => TimeGrid::with_step(params.horizon(), dt)?,
        None => TimeGrid::new(params.horizon(), DEFAULT_ODE_STEPS)?,
    })
}

fn sim_grid(run: &RunArgs, params: &ModelParams<f64>) -> Result<TimeGrid<f64>, CliError> {
    Ok(match run.dt_sim {
        Some(dt) => TimeGrid::with_step(params.horizon(), dt)?,
        None => TimeGrid::new(params.horizon(), DEFAULT_SIM_STEPS)?,
    })
}

fn sim_config(run: &RunArgs, default_paths: usize) -> SimConfig {
    let config = SimConfig::new(run.seed, run.paths.unwrap_or(default_paths));
    match run.threads {
        Some(t) => config.with_threads(t),
        None => config,
    }
}

fn parse_strategy(spec: &str) -> Result<PlayerStrategy<f64>, CliError> {
    spec.parse().map_err(CliError::Usage)
}

fn io_error(path: &Path, source: io::Error) -> CliError {
    CliError::Io { path: path.display().to_string(), source }
}

fn write_file(
    dir: &Path,
    name: &str,
    body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>,
) -> Result<(), CliError> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| io_error(&path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| io_error(&path, e))
}

fn solve_phi_cmd(run: &RunArgs, params: &ModelParams<f64>) -> Result<Verdict, CliError> {
    let grid = ode_grid(run, params)?;
    let phi = solve_phi(params, &grid)?;
    let gain = gain_from_phi(&phi, params)?;
    write_file(&run.out, "phi.csv", |w| phi.write_csv(w, "phi"))?;
    write_file(&run.out, "psi.csv", |w| gain.write_csv(w))?;

    let residual = transform_residual(&phi, params)?;
    let domain = domain_check(&phi, params);
    write_file(&run.out, "transform.csv", |w| residual.write_csv(w))?;
    println!("n = {}", params.players());
    println!("phi(0) = {}", num(phi.initial()));
    println!("psi(0) = {}", num(gain.values()[0]));
    println!("transform residual = {} at t = {}", num(residual.max_residual), num(residual.worst_time));
    println!("min(1 + k phi) = {}", num(domain.margin));
    Ok(Verdict::Pass)
}

fn convergence_cmd(run: &RunArgs, params: &ModelParams<f64>, n_list: &[u64]) -> Result<Verdict, CliError> {
    if n_list.is_empty() {
        return Err(CliError::Usage("--n-list must not be empty".into()));
    }
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    ns.dedup();

    let grid = ode_grid(run, params)?;
    let limit = solve_phi(&params.limit_of(), &grid)?;
    let mut columns = Vec::with_capacity(ns.len() + 1);
    let mut series = Vec::with_capacity(ns.len() + 1);
    let mut gaps = Vec::with_capacity(ns.len());
    for &n in &ns {
        let p = params.with_players(crate::params::Players::Finite(n))?;
        let phi = solve_phi(&p, &grid)?;
        let gap = phi.values().iter().zip(limit.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        gaps.push(gap);
        columns.push(format!("n={n}"));
        series.push(phi.values().to_vec());
    }
    columns.push("n=inf".to_string());
    series.push(limit.values().to_vec());

    write_file(&run.out, "phi_convergence.csv", |w| write_table(w, &columns, grid.points(), &series))?;
    write_file(&run.out, "phi_convergence_gaps.csv", |w| {
        writeln!(w, "n,sup_gap")?;
        for (n, gap) in ns.iter().zip(&gaps) {
            writeln!(w, "{n},{}", num(*gap))?;
        }
        Ok(())
    })?;

    let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    for (n, gap) in ns.iter().zip(&gaps) {
        println!("n = {n:>8}  sup|phi_n - phi_inf| = {}", num(*gap));
    }
    println!("strictly decreasing = {decreasing}");
    Ok(Verdict::from_bool(decreasing))
}

fn scenario_cmd(run: &RunArgs, params: &ModelParams<f64>) -> Result<Verdict, CliError> {
    let n = params.n_finite().ok_or(SimError::RequiresFiniteN)?;
    let phi = solve_phi(params, &ode_grid(run, params)?)?;
    let gain = gain_from_phi(&phi, params)?;
    let strategy = StrategySpec::equilibrium(gain, n);
    let bundle = simulate_nplayer(params, &strategy, &sim_grid(run, params)?, &sim_config(run, 1))?;
    write_file(&run.out, "paths.csv", |w| bundle.write_paths_csv(w))?;
    write_file(&run.out, "events.csv", |w| bundle.write_events_csv(w))?;
    let costs = estimate_costs(&bundle, params)?;
    write_file(&run.out, "costs.csv", |w| costs.write_csv(w))?;
    println!("paths = {}, players = {n}, jump events = {}", bundle.n_paths(), bundle.events().count());
    Ok(Verdict::Pass)
}

/// Parses `n:c`.
fn parse_panel(spec: &str) -> Result<(f64, f64), CliError> {
    let bad = || CliError::Usage(format!("malformed panel `{spec}` (expected n:c, e.g. 10:0)"));
    let (n, c) = spec.split_once(':').ok_or_else(bad)?;
    let n = match n.trim() {
        "inf" => f64::INFINITY,
        s => s.parse().map_err(|_| bad())?,
    };
    let c = c.trim().parse().map_err(|_| bad())?;
    Ok((n, c))
}

#[derive(Debug, Clone, PartialEq)]
struct PanelSummary {
    n: f64,
    c: f64,
    ordering_violations: usize,
    max_decrease: f64,
    terminal_increasing: bool,
}

fn psi_sweep_cmd(run: &RunArgs, raw: &RawParams, lambdas: &[f64], panels: &[String]) -> Result<Verdict, CliError> {
    if lambdas.is_empty() {
        return Err(CliError::Usage("--lambdas must not be empty".into()));
    }
    if let Some(bad) = lambdas.iter().find(|l| !l.is_finite() || **l <= 0.0) {
        return Err(CliError::Usage(format!("intensity {bad} must be positive")));
    }
    let mut lambdas = lambdas.to_vec();
    lambdas.sort_by(f64::total_cmp);
    let panels: Vec<(f64, f64)> = if panels.is_empty() {
        vec![(raw.n, raw.c)]
    } else {
        panels.iter().map(|s| parse_panel(s)).collect::<Result<_, _>>()?
    };

    let base = ModelParams::<f64>::validate(raw)?;
    let grid = ode_grid(run, &base)?;
    let mut curves = Vec::new();
    let mut summaries = Vec::new();
    for &(n, c) in &panels {
        let mut panel = Vec::with_capacity(lambdas.len());
        for &lambda in &lambdas {
            let p = ModelParams::validate(&RawParams { n, c, lambda, ..raw.clone() })?;
            let phi = solve_phi(&p, &grid)?;
            panel.push(gain_from_phi(&phi, &p)?.values().to_vec());
        }
        let mut violations = 0;
        let mut max_decrease: f64 = 0.0;
        for pair in panel.windows(2) {
            for (lo, hi) in pair[0].iter().zip(&pair[1]) {
                let drop = lo - hi;
                if drop > ORDER_TOL {
                    violations += 1;
                }
                max_decrease = max_decrease.max(drop);
            }
        }
        let last = grid.len() - 1;
        let terminal_increasing = panel.windows(2).all(|p| p[1][last] >= p[0][last] - ORDER_TOL);
        summaries.push(PanelSummary { n, c, ordering_violations: violations, max_decrease, terminal_increasing });
        curves.push(panel);
    }

    let label = |n: f64| if n.is_infinite() { "inf".to_string() } else { format!("{n}") };
    write_file(&run.out, "psi_sweep.csv", |w| {
        writeln!(w, "n,c,lambda,t,psi")?;
        for (&(n, c), panel) in panels.iter().zip(&curves) {
            for (lambda, psi) in lambdas.iter().zip(panel) {
                for (t, v) in grid.points().iter().zip(psi) {
                    writeln!(w, "{},{},{},{},{}", label(n), num(c), num(*lambda), num(*t), num(*v))?;
                }
            }
        }
        Ok(())
    })?;
    write_file(&run.out, "psi_sweep_summary.csv", |w| {
        writeln!(w, "n,c,ordering_violations,max_decrease,terminal_increasing")?;
        for s in &summaries {
            writeln!(
                w,
                "{},{},{},{},{}",
                label(s.n),
                num(s.c),
                s.ordering_violations,
                num(s.max_decrease),
                s.terminal_increasing
            )?;
        }
        Ok(())
    })?;

    for s in &summaries {
        println!(
            "n = {}, c = {}: ordering violations = {}, terminal values increasing = {}",
            label(s.n),
            s.c,
            s.ordering_violations,
            s.terminal_increasing
        );
    }
    Ok(Verdict::from_bool(summaries.iter().all(|s| s.ordering_violations == 0 && s.terminal_increasing)))
}

fn nash_check_cmd(run: &RunArgs, params: &ModelParams<f64>, deviation: &str) -> Result<Verdict, CliError> {
    let n = params.n_finite().ok_or(SimError::RequiresFiniteN)?;
    let deviation = parse_strategy(deviation)?;
    let phi = solve_phi(params, &ode_grid(run, params)?)?;
    let gain = gain_from_phi(&phi, params)?;
    let grid = sim_grid(run, params)?;
    let config = sim_config(run, 10_000);
    let report = nash_deviation_test(params, &gain, deviation, &grid, &config)?;
    let passed = report.is_not_improvement(2.0);

    write_file(&run.out, "deviation_report.txt", |w| {
        report.write_text(&mut *w)?;
        writeln!(w, "centered = {}", params.is_centered())?;
        writeln!(w, "not_improved = {passed}")
    })?;
    write_file(&run.out, "deviation_report.csv", |w| report.write_csv(w))?;
    if run.paths_out {
        let bundle = simulate_nplayer(params, &StrategySpec::equilibrium(gain, n), &grid, &config)?;
        write_file(&run.out, "paths.csv", |w| bundle.write_paths_csv(w))?;
        write_file(&run.out, "events.csv", |w| bundle.write_events_csv(w))?;
    }
    println!(
        "deviation {}: delta = {} (stderr {}), not improved = {passed}",
        report.deviation,
        num(report.delta),
        num(report.delta_stderr)
    );
    Ok(Verdict::from_bool(passed))
}

fn meanfield_cmd(run: &RunArgs, params: &ModelParams<f64>, control: &str) -> Result<Verdict, CliError> {
    if params.players().is_finite() {
        return Err(CliError::Usage("meanfield-check requires n = inf".into()));
    }
    let control = parse_strategy(control)?;
    let phi = solve_phi(params, &ode_grid(run, params)?)?;
    let gain = gain_from_phi(&phi, params)?;
    let strategy = StrategySpec::uniform(gain, 1, control);
    let grid = sim_grid(run, params)?;
    let m = vec![params.initial_law().mean(); grid.len()];
    let bundle = simulate_limit(params, &strategy, Some(&m), &grid, &sim_config(run, 10_000))?;
    let flow = empirical_mean_flow(&bundle)?;
    let z = flow.max_standardized_deviation(|i| m[i]);
    let passed = z <= 3.0;

    write_file(&run.out, "meanfield.csv", |w| flow.write_csv(w, Some(&m)))?;
    write_file(&run.out, "meanfield_report.txt", |w| {
        writeln!(w, "control = {control}")?;
        writeln!(w, "seed = {}", run.seed)?;
        writeln!(w, "n_paths = {}", bundle.n_paths())?;
        writeln!(w, "max_standardized_deviation = {}", num(z))?;
        writeln!(w, "centered = {}", params.is_centered())?;
        writeln!(w, "consistent = {passed}")
    })?;
    if run.paths_out {
        write_file(&run.out, "paths.csv", |w| bundle.write_paths_csv(w))?;
        write_file(&run.out, "events.csv", |w| bundle.write_events_csv(w))?;
    }
    println!("max_t |mean - m| / stderr = {}, consistent = {passed}", num(z));
    Ok(Verdict::from_bool(passed))
}
