//! `gll` — batch frontend for the flow solver.
//!
//! Subcommands: `simulate` (one run, diagnostics to CSV), `verify`
//! (identity/invariant suite), `study <name>` (scripted experiments).
//! Exit codes: 0 success, 1 failed check or threshold, 2 configuration
//! error, 3 instability. Logging via the GLL_LOG environment variable
//! (debug|info).

mod config;
mod verify;

use clap::{Parser, Subcommand, ValueEnum};
use config::RunConfig;
use gll_core::harness::{StudyOptions, StudyReport};
use gll_core::{evolve, DiagnosticsRecord, DynamicsError, Trajectory};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "gll", version, about = "Generalized Landau-Lifshitz flow solver and test bench")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON config file with flat keys
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override one config key, e.g. --set n_points=256 (repeatable; wins
    /// over the file)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Output directory (overrides the out_dir config key)
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads for independent study cases (1 = fully sequential)
    #[arg(long, global = true, value_name = "K")]
    threads: Option<usize>,

    /// Override the RNG seed
    #[arg(long, global = true, value_name = "S")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve one trajectory and write diagnostics.csv, state_final.json,
    /// manifest.json
    Simulate,
    /// Run the identity/invariant suite and print a pass/fail table
    Verify {
        #[arg(value_enum, default_value_t = LevelArg::Quick)]
        level: LevelArg,
    },
    /// Run a named study: traveling_wave | epsilon | uniqueness | energy_laws
    Study { name: String },
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Quick,
    Full,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("GLL_LOG")).init();
    let cli = Cli::parse();

    let mut sets = cli.set.clone();
    if let Some(seed) = cli.seed {
        sets.push(format!("seed={seed}"));
    }
    if let Some(out) = &cli.out {
        sets.push(format!("out_dir={}", serde_json::json!(out.display().to_string())));
    }
    let config = match RunConfig::load(cli.config.as_deref(), &sets) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    let threads = cli.threads.unwrap_or(1).max(1);

    match cli.command {
        Command::Simulate => cmd_simulate(&config),
        Command::Verify { level } => cmd_verify(level),
        Command::Study { name } => cmd_study(&name, &config, threads),
    }
}

fn cmd_simulate(config: &RunConfig) -> ExitCode {
    let validated = match config.validate() {
        Ok(v) => v,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    let u0 = match config.build_initial(&validated) {
        Ok(u) => u,
        Err(e) => {
            eprintln!("config error: initial: {e}");
            return ExitCode::from(2);
        }
    };
    log::info!(
        "simulate: form={} n_points={} t_end={} seed={}",
        config.form,
        config.n_points,
        config.t_end,
        config.seed
    );
    let start = Instant::now();
    let traj = match evolve(&u0, &validated.flow) {
        Ok(t) => t,
        Err(DynamicsError::Instability { t }) => {
            eprintln!("instability: the run blew up at t = {t:.6e}; reduce cfl or refine the grid");
            return ExitCode::from(3);
        }
        Err(e) => {
            eprintln!("run failed: {e}");
            return ExitCode::from(1);
        }
    };
    let wall = start.elapsed().as_secs_f64();
    log::info!("finished {} samples in {wall:.2}s", traj.len());

    let out_dir = Path::new(&config.out_dir);
    match write_simulation_outputs(out_dir, config, &traj, wall) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cannot write outputs under {}: {e}", out_dir.display());
            ExitCode::from(1)
        }
    }
}

fn write_simulation_outputs(
    out_dir: &Path,
    config: &RunConfig,
    traj: &Trajectory,
    wall: f64,
) -> std::io::Result<()> {
    std::fs::create_dir_all(out_dir)?;
    write_diagnostics_csv(&out_dir.join("diagnostics.csv"), &traj.diagnostics)?;
    let state = traj.final_state().to_json(Some(config.seed));
    std::fs::write(
        out_dir.join("state_final.json"),
        serde_json::to_string_pretty(&state).expect("serializable state"),
    )?;
    let manifest = serde_json::json!({
        "command": "simulate",
        "version": env!("CARGO_PKG_VERSION"),
        "wall_time_s": wall,
        "config": config,
        "outputs": ["diagnostics.csv", "state_final.json"],
    });
    std::fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("serializable manifest"),
    )?;
    Ok(())
}

fn write_diagnostics_csv(path: &Path, records: &[DiagnosticsRecord]) -> std::io::Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{}", DiagnosticsRecord::CSV_HEADER)?;
    for r in records {
        writeln!(out, "{}", r.to_csv_row())?;
    }
    Ok(())
}

fn cmd_verify(level: LevelArg) -> ExitCode {
    let level = match level {
        LevelArg::Quick => verify::Level::Quick,
        LevelArg::Full => verify::Level::Full,
    };
    let results = verify::run(level);
    let all_passed = verify::print_table(&results);
    if all_passed {
        ExitCode::SUCCESS
    } else {
        for r in results.iter().filter(|r| !r.passed) {
            eprintln!(
                "verify failed: {} measured {:.4e} exceeds tolerance {:.1e}",
                r.name, r.measured, r.tolerance
            );
        }
        ExitCode::from(1)
    }
}

fn cmd_study(name: &str, config: &RunConfig, threads: usize) -> ExitCode {
    let validated = match config.validate() {
        Ok(v) => v,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    let opts = StudyOptions {
        cfl: config.cfl,
        scheme: validated.flow.scheme,
        threads,
        sample_dt: config.sample_dt,
    };
    log::info!("study {name}: n_points={} threads={threads}", config.n_points);
    let report = match name {
        "traveling_wave" => gll_core::study_traveling_wave(&config.n_list, &opts),
        "epsilon" => gll_core::study_epsilon_vanishing(
            &config.epsilons,
            &validated.initial,
            config.n_points,
            &validated.flow.potential,
            config.t_end,
            &opts,
        ),
        "uniqueness" => gll_core::study_uniqueness(
            &validated.initial,
            config.n_points,
            config.delta,
            &validated.flow.potential,
            config.t_end,
            &opts,
        ),
        "energy_laws" => gll_core::study_energy_laws(
            &validated.initial,
            config.n_points,
            &validated.flow.potential,
            config.t_end,
            &opts,
        ),
        other => {
            eprintln!("config error: study: unknown study '{other}' (expected traveling_wave|epsilon|uniqueness|energy_laws)");
            return ExitCode::from(2);
        }
    };
    let report = match report {
        Ok(r) => r,
        Err(e) => {
            eprintln!("study {name} failed to run: {e}");
            return ExitCode::from(1);
        }
    };

    let out_dir = Path::new(&config.out_dir);
    if let Err(e) = write_study_outputs(out_dir, &report) {
        eprintln!("cannot write outputs under {}: {e}", out_dir.display());
        return ExitCode::from(1);
    }
    for case in &report.cases {
        let status = if case.passed { "ok" } else { "FAIL" };
        println!("case {:<20} [{status}]", case.name);
        for (k, v) in &case.metrics {
            println!("    {k} = {v:.6e}");
        }
    }
    println!(
        "study {name}: {}",
        if report.passed { "PASS" } else { "FAIL" }
    );
    if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn write_study_outputs(out_dir: &Path, report: &StudyReport) -> std::io::Result<()> {
    use std::io::Write;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(
        out_dir.join(format!("report_{}.json", report.study)),
        serde_json::to_string_pretty(report).expect("serializable report"),
    )?;
    for case in &report.cases {
        if let Some(series) = &case.series {
            let path = out_dir.join(format!("{}_{}.csv", report.study, case.name));
            let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
            writeln!(out, "{}", series.header.join(","))?;
            for row in &series.rows {
                let line: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
                writeln!(out, "{}", line.join(","))?;
            }
        }
    }
    Ok(())
}
