//! `h2hinf`: validate scenarios, synthesize mixed H2/H-infinity gains,
//! simulate the closed loop and verify it by Monte Carlo.
//!
//! Exit codes: 0 pass, 1 validation failure, 2 I/O or parse error,
//! 3 synthesis not solvable, 4 verification failure.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use h2hinf_core::evaluate::{
    energy_gain, estimation_check, innovation_statistics, nash_check, value_consistency, CheckRow,
    GainOptions,
};
use h2hinf_core::scenario::{load_scenario_unchecked, parse_scenario_unchecked, UAV_SCENARIO_JSON};
use h2hinf_core::simulate::{map_paths, simulate_closed_loop, PathSummary};
use h2hinf_core::synthesis::bounded_real_check;
use h2hinf_core::{
    solve_filter_covariance, synthesize, DisturbancePolicy, Error, FilterPlan, GainVariant,
    LoopSetup, Synthesis, SystemModel, TimeGrid,
};

const UAV_HORIZON: f64 = 20.0;
const UAV_STEPS: usize = 2000;
const UAV_GAMMA: f64 = 0.8;
const DEFAULT_VERIFY_PATHS: usize = 200;
const NASH_PERTURBATIONS: usize = 20;
const NASH_MAGNITUDE: f64 = 0.1;
const SE_TOLERANCE: f64 = 3.0;
const INNOVATION_SE_TOLERANCE: f64 = 5.0;
const MIN_INNOVATION_PATHS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    /// Check the standing assumptions of a scenario.
    Validate,
    /// Solve the coupled Riccati equations and write the gain schedules.
    Synthesize,
    /// Simulate the closed loop under the piecewise disturbance schedule.
    Simulate,
    /// Run the Monte Carlo verification checks.
    Verify,
    /// Synthesize, simulate and verify the bundled UAV scenario.
    ReproduceUav,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Full,
    State,
}

impl From<VariantArg> for GainVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => GainVariant::FullOutput,
            VariantArg::State => GainVariant::StateOutput,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "h2hinf",
    version,
    about = "Mixed H2/H-infinity control under partial observation"
)]
struct Cli {
    command: Command,
    /// Scenario JSON file (optional for reproduce-uav).
    scenario: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    /// Monte Carlo paths (default 1 for simulate, 200 otherwise).
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = VariantArg::Full)]
    gain_variant: VariantArg,
}

#[derive(Debug)]
enum Failure {
    Validation(String),
    Io(String),
    NotSolvable(String),
    Verification(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Io(_) => 2,
            Failure::NotSolvable(_) => 3,
            Failure::Verification(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m)
            | Failure::Io(m)
            | Failure::NotSolvable(m)
            | Failure::Verification(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. } | Error::Parse(_) => Failure::Io(e.to_string()),
            Error::FiniteEscape { .. } | Error::NonFinite { .. } => {
                Failure::NotSolvable(e.to_string())
            }
            _ => Failure::Validation(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let (model, grid) = load(cli)?;
    if cli.command == Command::Validate {
        return validate(&model, &grid);
    }
    model.ensure_valid(&grid)?;
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| Failure::Io(format!("{}: {e}", cli.out.display())))?;

    let (plan, syn) = synthesize_stage(&model, &grid, &cli.out)?;
    let setup = LoopSetup::new(&model, &grid, &plan, &syn.gains);
    let paths = |default| cli.paths.unwrap_or(default);
    match cli.command {
        Command::Validate => unreachable!("handled above"),
        Command::Synthesize => Ok(()),
        Command::Simulate => {
            let n = paths(1);
            simulate_stage(&setup, n, cli.seed, &cli.out, n)
        }
        Command::Verify => {
            let n = paths(DEFAULT_VERIFY_PATHS);
            let (rows, _) =
                verify_stage(&setup, &syn, n, cli.seed, cli.gain_variant.into(), &cli.out)?;
            verdict(&rows)
        }
        Command::ReproduceUav => {
            let n = paths(DEFAULT_VERIFY_PATHS);
            simulate_stage(&setup, n, cli.seed, &cli.out, 1)?;
            let (rows, ratio) =
                verify_stage(&setup, &syn, n, cli.seed, cli.gain_variant.into(), &cli.out)?;
            let pass = rows.iter().all(|r| r.pass);
            println!("ratio={ratio} gamma={} pass={pass}", model.gamma);
            verdict(&rows)
        }
    }
}

fn load(cli: &Cli) -> Result<(SystemModel, TimeGrid), Failure> {
    let (mut model, grid) = match (&cli.scenario, cli.command) {
        (Some(path), _) => load_scenario_unchecked(path)?,
        (None, Command::ReproduceUav) => parse_scenario_unchecked(UAV_SCENARIO_JSON)?,
        (None, _) => return Err(Failure::Io("a scenario file is required".into())),
    };
    let pinned = cli.command == Command::ReproduceUav;
    let horizon = cli
        .horizon
        .unwrap_or(if pinned { UAV_HORIZON } else { grid.horizon() });
    let steps = cli
        .steps
        .unwrap_or(if pinned { UAV_STEPS } else { grid.steps() });
    let grid = TimeGrid::new(horizon, steps)?;
    if let Some(g) = cli.gamma.or(pinned.then_some(UAV_GAMMA)) {
        model = model.with_gamma(g);
    }
    Ok((model, grid))
}

fn validate(model: &SystemModel, grid: &TimeGrid) -> Result<(), Failure> {
    model.check_dimensions()?;
    let report = model.validate(grid);
    print!("{report}");
    if report.passed() {
        Ok(())
    } else {
        let names: Vec<_> = report
            .failures()
            .map(|c| c.assumption.unwrap_or(c.name))
            .collect();
        Err(Failure::Validation(format!(
            "scenario violates {}",
            names.join(", ")
        )))
    }
}

fn io(r: Result<(), String>) -> Result<(), Failure> {
    r.map_err(Failure::Io)
}

fn synthesize_stage(
    model: &SystemModel,
    grid: &TimeGrid,
    out: &Path,
) -> Result<(FilterPlan, Synthesis), Failure> {
    let plan = solve_filter_covariance(model, grid)
        .map_err(|e| Failure::Validation(format!("filter: {e}")))?;
    let syn = synthesize(model, &plan, grid).map_err(|e| match e {
        Error::FiniteEscape { node, time, .. } | Error::NonFinite { node, time, .. } => Failure::NotSolvable(format!(
            "no closed-loop equilibrium at gamma = {}: coupled Riccati solution escapes at node {node} (t = {time})",
            model.gamma
        )),
        other => Failure::from(other),
    })?;
    io(output::write_gains(
        &out.join("gains.csv"),
        grid,
        &syn.gains,
    ))?;
    io(output::write_riccati(
        &out.join("riccati.csv"),
        grid,
        &syn.riccati,
        &syn.affine,
    ))?;
    println!("P1(0) = {:?}", syn.riccati.p1.node(0).as_slice());
    println!("P2(0) = {:?}", syn.riccati.p2.node(0).as_slice());
    Ok((plan, syn))
}

fn simulate_stage(
    setup: &LoopSetup<'_>,
    n_paths: usize,
    seed: u64,
    out: &Path,
    trajectories: usize,
) -> Result<(), Failure> {
    let grid = setup.grid;
    let policy = DisturbancePolicy::uav_schedule(grid.horizon(), setup.model.dims().m);
    let ensemble = map_paths(n_paths, seed, |i, s| {
        let res = simulate_closed_loop(setup, &policy, s)?;
        if i < trajectories {
            output::write_trajectory(&out.join(format!("trajectory_{i:04}.csv")), grid, &res)
                .map_err(|message| Error::Io {
                    path: out.to_path_buf(),
                    message,
                })?;
        }
        Ok(PathSummary::from_result(&res, grid))
    });
    let failed: Vec<usize> = ensemble.failures.iter().map(|(i, _)| *i).collect();
    io(output::write_summary(
        &out.join("summary.csv"),
        &ensemble.values,
        &failed,
    ))?;
    for (_, e) in &ensemble.failures {
        if let Error::Io { .. } = e {
            return Err(Failure::Io(e.to_string()));
        }
        eprintln!("path failed: {e}");
    }
    let j2 = ensemble.estimate_of(|p| p.j2);
    println!(
        "simulated {} paths ({} failed), mean J2 = {}",
        ensemble.len(),
        failed.len(),
        j2.mean
    );
    Ok(())
}

fn verify_stage(
    setup: &LoopSetup<'_>,
    syn: &Synthesis,
    n_paths: usize,
    seed: u64,
    variant: GainVariant,
    out: &Path,
) -> Result<(Vec<CheckRow>, f64), Failure> {
    let LoopSetup { model, grid, .. } = *setup;
    let schedule = DisturbancePolicy::uav_schedule(grid.horizon(), model.dims().m);
    let worst = DisturbancePolicy::worst_case(grid.horizon());
    let mut rows = Vec::new();

    let gain = energy_gain(
        setup,
        &schedule,
        n_paths,
        seed,
        GainOptions {
            variant,
            ..GainOptions::default()
        },
    )?;
    rows.push(CheckRow::new(
        "energy gain ratio < gamma",
        gain.ratio,
        model.gamma,
        Some(gain.stderr),
        gain.ratio < model.gamma && gain.failed_paths.is_empty(),
    ));

    let br = bounded_real_check(model, &syn.gains.u, &syn.gains.u0, grid, variant)?;
    rows.push(CheckRow::new(
        "bounded real Riccati solvable",
        f64::from(u8::from(br.is_solvable())),
        1.0,
        None,
        br.is_solvable(),
    ));

    let nash = nash_check(setup, NASH_PERTURBATIONS, NASH_MAGNITUDE, n_paths, seed)?;
    rows.push(CheckRow::new(
        "nash inequality violations",
        nash.violations() as f64,
        0.0,
        None,
        nash.violations() == 0,
    ));

    rows.extend(value_consistency(setup, syn, n_paths, seed).rows(SE_TOLERANCE));
    rows.extend(estimation_check(setup, &worst, n_paths, seed).rows(grid, SE_TOLERANCE));
    rows.push(
        innovation_statistics(setup, &worst, n_paths.max(MIN_INNOVATION_PATHS), seed)
            .row(grid.step(), INNOVATION_SE_TOLERANCE),
    );

    io(output::write_report(&out.join("report.csv"), &rows))?;
    for r in &rows {
        println!("{r}");
    }
    Ok((rows, gain.ratio))
}

fn verdict(rows: &[CheckRow]) -> Result<(), Failure> {
    let failing: Vec<_> = rows
        .iter()
        .filter(|r| !r.pass)
        .map(|r| r.name.as_str())
        .collect();
    if failing.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verification(format!(
            "failing checks: {}",
            failing.join("; ")
        )))
    }
}
