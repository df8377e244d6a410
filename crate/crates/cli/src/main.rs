use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use blackstart::caseio::{
    apply_blackout, expand_node_breaker, export_metrics, export_plan, network_to_case, parse_case,
    parse_overrides, parse_plan, serialize_case, to_node_breaker_case, CaseFile,
};
use blackstart::model::{energized_islands, Network};
use blackstart::par::{with_jobs, Execution};
use blackstart::plan::{AvailabilityOverride, PlanStatus};
use blackstart::report::{export_report, zone_shares};
use blackstart::sequencer::{replay, run_with, Config};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "blackstart",
    version,
    about = "Restoration sequence planner for blacked-out power systems"
)]
struct Cli {
    /// Log progress to standard error (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan a restoration and write plan.json, metrics.csv, report.json and final_case.json.
    Plan {
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        overrides: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads for subarea planning; 1 plans sequentially, 0 uses all cores.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Replay a plan on its case and re-check every step.
    Validate {
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        /// Replaces the configuration recorded in the plan.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Replaces the overrides recorded in the plan.
        #[arg(long)]
        overrides: Option<PathBuf>,
    },
    /// Write the case with its node-breaker section expanded.
    Convert {
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print islands and per-zone load of a case.
    Inspect {
        #[arg(long)]
        case: PathBuf,
        /// Show the case after the all-open blackout state is applied.
        #[arg(long)]
        blackout: bool,
        #[arg(long)]
        overrides: Option<PathBuf>,
    },
}

const EXIT_INPUT: u8 = 1;
const EXIT_PARTIAL: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_DIVERGED: u8 = 2;
const EXIT_VIOLATIONS: u8 = 3;

type Failure = (u8, String);

fn input<E: std::fmt::Display>(context: &Path) -> impl Fn(E) -> Failure + '_ {
    move |e| (EXIT_INPUT, format!("{}: {e}", context.display()))
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(input(path))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(input(path))
}

fn load_case(path: &Path) -> Result<(CaseFile, Network), Failure> {
    let case = parse_case(&read(path)?).map_err(input(path))?;
    let network = expand_node_breaker(&case).map_err(input(path))?;
    Ok((case, network))
}

fn load_config(path: Option<&Path>) -> Result<Config, Failure> {
    let Some(path) = path else {
        return Ok(Config::default());
    };
    let config: Config = toml::from_str(&read(path)?).map_err(input(path))?;
    config.validate().map_err(input(path))?;
    Ok(config)
}

fn load_overrides(path: Option<&Path>) -> Result<Option<Vec<AvailabilityOverride>>, Failure> {
    path.map(|p| parse_overrides(&read(p)?).map_err(input(p)))
        .transpose()
}

fn plan(
    case_path: &Path,
    config: Option<&Path>,
    overrides: Option<&Path>,
    out: &Path,
    jobs: usize,
) -> Result<u8, Failure> {
    let (case, network) = load_case(case_path)?;
    let config = load_config(config)?;
    let overrides = load_overrides(overrides)?.unwrap_or_default();
    let exec = if jobs == 1 {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let outcome = with_jobs(jobs, || run_with(&network, &overrides, &config, exec))
        .map_err(input(case_path))?;
    fs::create_dir_all(out).map_err(input(out))?;
    let plan = &outcome.plan;
    write(&out.join("plan.json"), &export_plan(plan))?;
    write(&out.join("metrics.csv"), &export_metrics(plan))?;
    write(
        &out.join("report.json"),
        &export_report(plan, &outcome.network),
    )?;
    let final_case = network_to_case(&case, &outcome.network).map_err(input(case_path))?;
    write(&out.join("final_case.json"), &serialize_case(&final_case))?;

    let st = &plan.statistics;
    log::info!(
        "{:?}: {:.1} of {:.1} MW ({:.2} %) in {:.0} s, {} steps",
        plan.status,
        st.served_load_mw,
        st.total_load_mw,
        st.restored_pct,
        st.duration_s,
        plan.steps.len()
    );
    if let Some(d) = &st.diagnostic {
        eprintln!("infeasible: {d}");
    }
    Ok(match plan.status {
        PlanStatus::Complete => 0,
        PlanStatus::Partial => EXIT_PARTIAL,
        PlanStatus::Infeasible => EXIT_INFEASIBLE,
    })
}

fn validate(
    case_path: &Path,
    plan_path: &Path,
    config: Option<&Path>,
    overrides: Option<&Path>,
) -> Result<u8, Failure> {
    let (_, network) = load_case(case_path)?;
    let mut plan = parse_plan(&read(plan_path)?).map_err(input(plan_path))?;
    if let Some(o) = load_overrides(overrides)? {
        plan.overrides = o;
    }
    let config = match config {
        Some(p) => Some(load_config(Some(p))?),
        None => None,
    };
    let report = replay(&network, &plan, config.as_ref()).map_err(input(plan_path))?;
    for d in &report.divergences {
        eprintln!("divergence: {d}");
    }
    for (step, v) in &report.violations {
        eprintln!(
            "violation at step {step}: {:?} {:?} at {} = {:.6}",
            v.tier, v.kind, v.element, v.value
        );
    }
    if !report.divergences.is_empty() {
        return Ok(EXIT_DIVERGED);
    }
    if !report.violations.is_empty() {
        return Ok(EXIT_VIOLATIONS);
    }
    log::info!("{} steps replayed cleanly", report.steps);
    Ok(0)
}

fn convert(case_path: &Path, out: &Path) -> Result<u8, Failure> {
    let case = parse_case(&read(case_path)?).map_err(input(case_path))?;
    let converted = to_node_breaker_case(&case).map_err(input(case_path))?;
    expand_node_breaker(&converted).map_err(input(case_path))?;
    write(out, &serialize_case(&converted))?;
    Ok(0)
}

fn inspect(case_path: &Path, blackout: bool, overrides: Option<&Path>) -> Result<u8, Failure> {
    let (_, mut network) = load_case(case_path)?;
    let overrides = load_overrides(overrides)?;
    if blackout || overrides.is_some() {
        network =
            apply_blackout(&network, &overrides.unwrap_or_default()).map_err(input(case_path))?;
    }
    let islands = energized_islands(&network);
    println!(
        "{} substations, {} nodes, {} breakers, {} branches, {} generators, {} loads, {} shunts",
        network.substations.len(),
        network.nodes.len(),
        network.breakers.len(),
        network.branches.len(),
        network.generators.len(),
        network.loads.len(),
        network.shunts.len()
    );
    println!("energized islands: {}", islands.len());
    for island in &islands {
        let online = island
            .generators
            .iter()
            .filter(|&&g| network.generators[g].online)
            .count();
        let served: f64 = island
            .loads
            .iter()
            .map(|&l| network.loads[l].served_mw)
            .sum();
        println!(
            "  {:<20} nodes {:>4}  units online {:>2}  served {:>9.3} MW",
            network.nodes[island.nodes[0]].id,
            island.nodes.len(),
            online,
            served
        );
    }
    println!(
        "{:<8} {:>10} {:>10} {:>8}",
        "zone", "total_mw", "served_mw", "pct"
    );
    for (zone, share) in zone_shares(&network) {
        println!(
            "{:<8} {:>10.3} {:>10.3} {:>8.2}",
            zone, share.total_mw, share.served_mw, share.restored_pct
        );
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    let result = match &cli.command {
        Command::Plan {
            case,
            config,
            overrides,
            out,
            jobs,
        } => plan(case, config.as_deref(), overrides.as_deref(), out, *jobs),
        Command::Validate {
            case,
            plan,
            config,
            overrides,
        } => validate(case, plan, config.as_deref(), overrides.as_deref()),
        Command::Convert { case, out } => convert(case, out),
        Command::Inspect {
            case,
            blackout,
            overrides,
        } => inspect(case, *blackout, overrides.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
