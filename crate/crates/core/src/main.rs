//! Command-line driver: generate initial conditions, run them, and compare
//! the results against the analytic references.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use tasksph::engine::Engine;
use tasksph::io::config::{format_run_file, read_run_file, RunFile};
use tasksph::io::ic;
use tasksph::io::profile::{analyze_sedov, analyze_sod, write_sedov_profile, write_sod_profile};
use tasksph::io::snapshot::Snapshot;
use tasksph::io::write_timeline;

#[derive(Parser)]
#[command(name = "tasksph", version, about = "Task-parallel SPH engine")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum IcCase {
    Sod,
    Sedov,
    Grid,
}

#[derive(Clone, Copy, ValueEnum)]
enum AnalyzeCase {
    Sod,
    Sedov,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate an initial-condition snapshot and a matching run config.
    Ic {
        #[arg(long, value_enum)]
        case: IcCase,
        /// Total particles (sod, grid) or lattice side (sedov).
        #[arg(long)]
        n: usize,
        /// Snapshot path; a run config lands next to it as <stem>.cfg.
        #[arg(long)]
        out: PathBuf,
        /// Grid displacement in lattice spacings.
        #[arg(long, default_value_t = 0.1)]
        amplitude: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Deposit blast energy on the centre site too (27 instead of 26).
        #[arg(long)]
        heat_center: bool,
    },
    /// Advance a run to its end time.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads; 0 picks the host parallelism.
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        t_end: Option<f64>,
        /// Also write numbered snapshots every K steps.
        #[arg(long)]
        snap_every: Option<u64>,
        /// Record per-task execution intervals to this file.
        #[arg(long)]
        timeline: Option<PathBuf>,
    },
    /// Bin a snapshot and compare it against the analytic solution.
    Analyze {
        #[arg(long, value_enum)]
        case: AnalyzeCase,
        #[arg(long)]
        snap: PathBuf,
        /// Reference time; defaults to the snapshot's own.
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Blast energy; defaults to the 26-particle deposit convention.
        #[arg(long)]
        e_blast: Option<f64>,
        /// Profile bins; 0 picks a per-case default.
        #[arg(long, default_value_t = 0)]
        bins: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<(), String> {
    match cmd {
        Cmd::Ic { case, n, out, amplitude, seed, heat_center } => {
            cmd_ic(case, n, &out, amplitude, seed, heat_center)
        }
        Cmd::Run { config, threads, t_end, snap_every, timeline } => {
            cmd_run(&config, threads, t_end, snap_every, timeline.as_deref())
        }
        Cmd::Analyze { case, snap, t, out, e_blast, bins } => {
            cmd_analyze(case, &snap, t, &out, e_blast, bins)
        }
    }
}

fn cmd_ic(
    case: IcCase,
    n: usize,
    out: &Path,
    amplitude: f64,
    seed: u64,
    heat_center: bool,
) -> Result<(), String> {
    let set = match case {
        IcCase::Sod => ic::make_sod(n, seed),
        IcCase::Sedov => ic::make_sedov(n, heat_center)?,
        IcCase::Grid => ic::make_grid(n, amplitude, seed)?,
    };
    if let Some(w) = &set.warning {
        eprintln!("warning: {w}");
    }
    let snap = Snapshot::from_particles(&set.particles, 0.0, set.cfg.gamma, set.cfg.box_size);
    snap.write(out).map_err(|e| format!("writing {}: {e}", out.display()))?;

    let final_path = stamped_path(out, "final");
    let run = RunFile {
        cfg: set.cfg,
        ic: Some(out.to_path_buf()),
        out: Some(final_path),
    };
    let cfg_path = out.with_extension("cfg");
    std::fs::write(&cfg_path, format_run_file(&run))
        .map_err(|e| format!("writing {}: {e}", cfg_path.display()))?;

    println!(
        "wrote {} ({} particles) and {}",
        out.display(),
        set.particles.len(),
        cfg_path.display()
    );
    if let Some(e) = set.e_blast {
        println!("e_blast = {e:.16e}");
    }
    Ok(())
}

/// sod.snap -> sod_final.snap (keeps the extension, so binary stays binary).
fn stamped_path(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_{tag}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{tag}"),
    };
    path.with_file_name(name)
}

fn cmd_run(
    config: &Path,
    threads: Option<usize>,
    t_end: Option<f64>,
    snap_every: Option<u64>,
    timeline: Option<&Path>,
) -> Result<(), String> {
    let mut run = read_run_file(config).map_err(|e| format!("{}: {e}", config.display()))?;
    if let Some(n) = threads {
        run.cfg.n_threads = if n == 0 {
            std::thread::available_parallelism().map_or(1, |p| p.get())
        } else {
            n
        };
    }
    if let Some(t) = t_end {
        run.cfg.t_end = t;
    }
    let ic_path = run.ic.as_deref().ok_or("config lacks an `ic = <snapshot>` entry")?;
    let snap = Snapshot::read(ic_path).map_err(|e| format!("{}: {e}", ic_path.display()))?;
    run.cfg.gamma = snap.gamma;
    run.cfg.box_size = snap.box_size;
    let out_path = run
        .out
        .clone()
        .unwrap_or_else(|| stamped_path(ic_path, "final"));

    let mut engine = Engine::new(snap.to_particles(), run.cfg.clone())?;
    engine.record_timeline = timeline.is_some();
    let every = snap_every.unwrap_or(0);
    let mut io_err: Option<String> = None;
    engine.run_with(|eng| {
        if every > 0 && eng.step_count % every == 0 && io_err.is_none() {
            let tag = format!("step{:06}", eng.step_count);
            let path = stamped_path(&out_path, &tag);
            let s = Snapshot::from_particles(eng.particles(), eng.t, eng.cfg.gamma, eng.cfg.box_size);
            if let Err(e) = s.write(&path) {
                io_err = Some(format!("writing {}: {e}", path.display()));
            }
        }
    })?;
    if let Some(e) = io_err {
        return Err(e);
    }

    let final_snap =
        Snapshot::from_particles(engine.particles(), engine.t, engine.cfg.gamma, engine.cfg.box_size);
    final_snap
        .write(&out_path)
        .map_err(|e| format!("writing {}: {e}", out_path.display()))?;
    if let Some(tl) = timeline {
        write_timeline(tl, &engine.timeline).map_err(|e| format!("writing {}: {e}", tl.display()))?;
    }
    println!(
        "run finished: t={:.6e} steps={} rebuilds={} -> {}",
        engine.t,
        engine.step_count,
        engine.n_rebuilds,
        out_path.display()
    );
    Ok(())
}

fn cmd_analyze(
    case: AnalyzeCase,
    snap_path: &Path,
    t: Option<f64>,
    out: &Path,
    e_blast: Option<f64>,
    bins: usize,
) -> Result<(), String> {
    let snap = Snapshot::read(snap_path).map_err(|e| format!("{}: {e}", snap_path.display()))?;
    let t = t.unwrap_or(snap.t);
    match case {
        AnalyzeCase::Sod => {
            let bins = if bins == 0 { 200 } else { bins };
            let a = analyze_sod(&snap, t, bins)?;
            write_sod_profile(out, &a).map_err(|e| format!("writing {}: {e}", out.display()))?;
            let masked = a.masked.iter().filter(|&&m| m).count();
            println!(
                "sod t={t:.6e} bins={bins} masked={masked}: L1 rho={:.4e} p={:.4e} v={:.4e} \
                 (all bins: rho={:.4e} p={:.4e} v={:.4e})",
                a.l1.rho, a.l1.p, a.l1.v, a.l1_all.rho, a.l1_all.p, a.l1_all.v
            );
        }
        AnalyzeCase::Sedov => {
            let bins = if bins == 0 { 100 } else { bins };
            let e = match e_blast {
                Some(e) => e,
                None => {
                    // The generator's convention: 26 heated lattice sites,
                    // P 100 over P 1 ambient at unit density.
                    let n = snap.rows.len();
                    let mass: f64 = snap.rows.iter().map(|r| r.m).sum();
                    if n == 0 {
                        return Err("empty snapshot".into());
                    }
                    26.0 * (mass / n as f64) * 99.0 / (snap.gamma - 1.0)
                }
            };
            let a = analyze_sedov(&snap, t, e, bins)?;
            write_sedov_profile(out, &a).map_err(|e| format!("writing {}: {e}", out.display()))?;
            println!(
                "sedov t={t:.6e} e={e:.6e} bins={bins}: r_peak={:.4e} r_shock={:.4e} \
                 radius_err={:.2}% rho_peak={:.4}",
                a.r_peak,
                a.r_shock,
                100.0 * a.radius_err,
                a.rho_peak
            );
        }
    }
    Ok(())
}
