//! Command-line driver: configured simulation runs, standalone Weyl
//! transforms, the independent reference solvers, and resolution sweeps.
//!
//! Exit codes: 0 success, 1 validation/usage error, 2 runtime error
//! (instability, domain escape, cutoff not reached).

use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::config::{parse_config, RunConfig};
use crate::ensemble::evolve_ensemble;
use crate::error::SolverError;
use crate::evolve::level_refinement_run;
use crate::oracle::{dense_reference_evolve, fd_dt_auto, moment_ode_solve, MomentOdeSystem, Moments};
use crate::phase_space::PhaseSpaceGrid;
use crate::snapshot::{
    read_wavefunction, write_diagnostics, write_snapshot, SnapshotError,
};

#[derive(Parser)]
#[command(
    name = "wigner-mra",
    about = "Wavelet-multiresolution solver for phase-space quantum dynamics",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve the configured system, writing snapshots and diagnostics.csv.
    Simulate {
        /// Path to the run configuration.
        #[arg(long)]
        config: PathBuf,
    },
    /// Weyl-transform a wavefunction file into a phase-space snapshot.
    Transform {
        /// Wavefunction input (`# q: min max n` header, then `re im` rows).
        #[arg(long)]
        input: PathBuf,
        /// Snapshot output path.
        #[arg(long)]
        output: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        p_min: f64,
        #[arg(long, allow_hyphen_values = true)]
        p_max: f64,
        #[arg(long)]
        np: usize,
        #[arg(long, default_value_t = 1.0)]
        hbar: f64,
    },
    /// Run the independent dense finite-difference reference (and, for
    /// quadratic potentials, the closed moment system) on the same config.
    Oracle {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evolve at increasing resolution and report the level differences
    /// against the configured cutoff.
    SweepLevels {
        #[arg(long)]
        config: PathBuf,
    },
}

const EXIT_OK: i32 = 0;
const EXIT_VALIDATION: i32 = 1;
const EXIT_RUNTIME: i32 = 2;

fn solver_exit(err: &SolverError) -> i32 {
    if err.is_runtime() {
        EXIT_RUNTIME
    } else {
        EXIT_VALIDATION
    }
}

fn load_config(path: &Path) -> Result<RunConfig, i32> {
    let text = fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        EXIT_VALIDATION
    })?;
    parse_config(&text).map_err(|e| {
        eprint!("error: {e}");
        EXIT_VALIDATION
    })
}

/// Run the command line. Arguments include the program name.
pub fn run_cli<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_VALIDATION,
            };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Simulate { config } => simulate(&config),
        Command::Transform {
            input,
            output,
            p_min,
            p_max,
            np,
            hbar,
        } => transform(&input, &output, p_min, p_max, np, hbar),
        Command::Oracle { config } => oracle(&config),
        Command::SweepLevels { config } => sweep_levels(&config),
    }
}

fn io_fail(err: &SnapshotError) -> i32 {
    eprintln!("error: {err}");
    EXIT_VALIDATION
}

fn simulate(config_path: &Path) -> i32 {
    let cfg = match load_config(config_path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    match run_simulation(&cfg) {
        Ok(summary) => {
            println!("{summary}");
            EXIT_OK
        }
        Err(RunError::Solver(e)) => {
            eprintln!("error: {e}");
            solver_exit(&e)
        }
        Err(RunError::Snapshot(e)) => io_fail(&e),
    }
}

enum RunError {
    Solver(SolverError),
    Snapshot(SnapshotError),
}

impl From<SolverError> for RunError {
    fn from(e: SolverError) -> Self {
        RunError::Solver(e)
    }
}

impl From<SnapshotError> for RunError {
    fn from(e: SnapshotError) -> Self {
        RunError::Snapshot(e)
    }
}

fn run_simulation(cfg: &RunConfig) -> Result<String, RunError> {
    let grid = cfg.grid()?;
    let basis = cfg.basis()?;
    let ensemble = cfg.initial_ensemble(&grid)?;
    let traj = evolve_ensemble(
        &ensemble,
        cfg.mass,
        cfg.lindblad(),
        &basis,
        cfg.coarsest_level,
        cfg.operator_threshold,
        &cfg.evolution(),
    )?;

    let dir = Path::new(&cfg.directory);
    fs::create_dir_all(dir).map_err(SnapshotError::from)?;
    for (idx, snap) in traj.mixture.snapshots.iter().enumerate() {
        let path = dir.join(format!("snapshot_{idx:05}.txt"));
        write_snapshot(snap, &path)?;
    }
    write_diagnostics(&traj.mixture.diagnostics, &dir.join("diagnostics.csv"))?;

    let last = traj
        .mixture
        .diagnostics
        .last()
        .expect("diagnostics recorded");
    Ok(format!(
        "simulate: t={:.6} norm={:.9} purity={:.6} negativity={:.6} ({} snapshots, {} diagnostic rows in {})",
        last.time,
        last.norm,
        last.purity,
        last.negativity,
        traj.mixture.snapshots.len(),
        traj.mixture.diagnostics.len(),
        dir.display()
    ))
}

fn transform(
    input: &Path,
    output: &Path,
    p_min: f64,
    p_max: f64,
    np: usize,
    hbar: f64,
) -> i32 {
    let psi = match read_wavefunction(input) {
        Ok(psi) => psi,
        Err(e) => return io_fail(&e),
    };
    let grid = match PhaseSpaceGrid::new(psi.q_min, psi.q_max, p_min, p_max, psi.nq(), np, hbar) {
        Ok(g) => g,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_VALIDATION;
        }
    };
    let state = match crate::phase_space::weyl_transform(&psi, &grid) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_RUNTIME;
        }
    };
    if let Err(e) = write_snapshot(&state, output) {
        return io_fail(&e);
    }
    println!(
        "transform: wrote {} ({}x{} grid, norm={:.9})",
        output.display(),
        grid.nq,
        grid.np,
        state.norm()
    );
    EXIT_OK
}

fn oracle(config_path: &Path) -> i32 {
    let cfg = match load_config(config_path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    match run_oracle(&cfg) {
        Ok(summary) => {
            println!("{summary}");
            EXIT_OK
        }
        Err(RunError::Solver(e)) => {
            eprintln!("error: {e}");
            solver_exit(&e)
        }
        Err(RunError::Snapshot(e)) => io_fail(&e),
    }
}

fn run_oracle(cfg: &RunConfig) -> Result<String, RunError> {
    let grid = cfg.grid()?;
    let initial = cfg.initial_ensemble(&grid)?.mix();
    let potential = cfg.potential_poly();
    let lindblad = cfg.lindblad();
    let dt = cfg
        .dt
        .unwrap_or_else(|| fd_dt_auto(&grid, &potential, cfg.mass, lindblad));
    let stride = if cfg.diagnostics_stride > 0 {
        cfg.diagnostics_stride
    } else {
        10
    };
    let traj = dense_reference_evolve(
        &initial,
        &potential,
        cfg.mass,
        lindblad,
        cfg.t_final,
        dt,
        stride,
        0,
    )?;

    let dir = Path::new(&cfg.directory);
    fs::create_dir_all(dir).map_err(SnapshotError::from)?;
    write_diagnostics(&traj.diagnostics, &dir.join("oracle_diagnostics.csv"))?;
    write_snapshot(traj.final_state(), &dir.join("oracle_final.txt"))?;

    let mut summary = format!(
        "oracle: dense reference evolved to t={:.6} (dt={dt:.3e}, {} diagnostic rows)",
        traj.final_state().time(),
        traj.diagnostics.len()
    );

    if potential.degree() <= 2 {
        let system = MomentOdeSystem::from_potential(&potential, cfg.mass, lindblad)?;
        let m0 = Moments::measure(&initial).map_err(SolverError::PhaseSpace)?;
        let times: Vec<f64> = traj.diagnostics.iter().map(|r| r.time).collect();
        let moments = moment_ode_solve(&system, m0, &times);
        let mut text = String::from("t,q_mean,p_mean,q2,qp,p2\n");
        for (t, m) in times.iter().zip(&moments) {
            text.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                t, m.q_mean, m.p_mean, m.q2, m.qp, m.p2
            ));
        }
        fs::write(dir.join("moment_oracle.csv"), text).map_err(SnapshotError::from)?;
        summary.push_str("; moment system written (quadratic potential)");
    }
    Ok(summary)
}

fn sweep_levels(config_path: &Path) -> i32 {
    let cfg = match load_config(config_path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let basis = match cfg.basis() {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_VALIDATION;
        }
    };

    let solve_at = |level: usize| -> Result<crate::phase_space::WignerState, SolverError> {
        let grid = cfg.grid_at_level(level)?;
        let ensemble = cfg.initial_ensemble(&grid)?;
        let mut run_cfg = cfg.evolution();
        run_cfg.snapshot_stride = 0;
        run_cfg.diagnostics_stride = 0;
        let traj = evolve_ensemble(
            &ensemble,
            cfg.mass,
            cfg.lindblad(),
            &basis,
            cfg.coarsest_level,
            cfg.operator_threshold,
            &run_cfg,
        )?;
        Ok(traj.final_ensemble.mix())
    };

    println!("# level   ||W(level+1) - W(level)||");
    match level_refinement_run(solve_at, cfg.min_levels, cfg.max_levels, cfg.epsilon_level) {
        Ok(sweep) => {
            for (level, diff) in &sweep.differences {
                println!("{level:7}   {diff:.6e}");
            }
            println!(
                "selected level {} (epsilon {:.3e})",
                sweep.selected, cfg.epsilon_level
            );
            EXIT_OK
        }
        Err(SolverError::CutoffNotReached {
            achieved,
            epsilon,
            differences,
        }) => {
            for (level, diff) in &differences {
                println!("{level:7}   {diff:.6e}");
            }
            eprintln!(
                "error: cutoff not reached: finest difference {achieved:.3e} > epsilon {epsilon:.3e}"
            );
            EXIT_RUNTIME
        }
        Err(e) => {
            eprintln!("error: {e}");
            solver_exit(&e)
        }
    }
}
