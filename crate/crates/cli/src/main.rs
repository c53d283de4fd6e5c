mod config;
mod pipeline;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use config::RunConfig;
use pipeline::Stamp;
use sosstab::sim::{levels_at, simulate_network};
use sosstab::Polynomial;

/// Stability certification for interconnected power grids: estimate
/// per-subsystem attraction regions, certify a fault scenario by iterating
/// Lyapunov levels, synthesize minimal local controls when needed, and
/// validate by simulation.
#[derive(Parser)]
#[command(name = "sosstab", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Override run.output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override run.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override run.workers.
    #[arg(long)]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Estimate each subsystem's region of attraction and write certificates.
    Roa,
    /// Certify the scenario (or explicit levels) by the level iteration.
    ///
    /// Exit code: 0 asymptotically stable, 2 Lyapunov-stable only,
    /// 3 not certified, 1 error.
    Certify {
        /// Comma-separated initial levels, replacing the scenario-derived ones.
        #[arg(long)]
        gamma0: Option<String>,
        /// Disable control synthesis.
        #[arg(long)]
        no_control: bool,
    },
    /// Integrate the fault scenario and dump the trajectory with levels.
    Simulate {
        /// Override scenario.t_end.
        #[arg(long)]
        t_end: Option<f64>,
        /// Ignore previously synthesized control laws in the output dir.
        #[arg(long)]
        no_control: bool,
    },
    /// Verify the polynomial recast: constraint invariance and dimensions.
    RecastCheck,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(out) = cli.out {
        cfg.run.output_dir = out;
    }
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(w) = cli.workers {
        cfg.run.workers = w;
    }
    cfg.validate()?;
    if cfg.run.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.run.workers)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let stamp = Stamp { digest: cfg.digest(), seed: cfg.run.seed };
    let dir = cfg.run.output_dir.clone();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;

    match cli.cmd {
        Cmd::Roa => cmd_roa(&cfg, &stamp),
        Cmd::Certify { gamma0, no_control } => cmd_certify(&cfg, &stamp, gamma0, no_control),
        Cmd::Simulate { t_end, no_control } => cmd_simulate(&cfg, &stamp, t_end, no_control),
        Cmd::RecastCheck => cmd_recast_check(&cfg, &stamp),
    }
}

fn cmd_roa(cfg: &RunConfig, stamp: &Stamp) -> Result<u8> {
    let model = pipeline::build_model(cfg)?;
    let dir = &cfg.run.output_dir;
    let estimates = pipeline::load_or_estimate(&model, cfg, stamp, dir)?;
    pipeline::write_contours(dir, stamp, &model, &estimates)?;
    let mut summary = String::new();
    for est in &estimates {
        summary.push_str(&format!(
            "S{}: certified level 1 after {} expansion step(s), globally_pd {}\n",
            est.subsystem + 1,
            est.beta_history.len(),
            est.globally_pd
        ));
    }
    stamp.write_file(&dir.join("roa_summary.txt"), &summary)?;
    print!("{summary}");
    println!("certificates and contours in {}", dir.display());
    Ok(0)
}

fn parse_gamma(text: &str, n: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| anyhow!("bad level `{t}`")))
        .collect::<Result<_>>()?;
    if vals.len() != n {
        bail!("expected {n} levels, got {}", vals.len());
    }
    Ok(vals)
}

fn cmd_certify(cfg: &RunConfig, stamp: &Stamp, gamma0: Option<String>, no_control: bool) -> Result<u8> {
    let model = pipeline::build_model(cfg)?;
    let dir = &cfg.run.output_dir;
    let estimates = pipeline::load_or_estimate(&model, cfg, stamp, dir)?;
    let vs = pipeline::lyapunov_functions(&estimates);
    let gamma = match gamma0 {
        Some(text) => parse_gamma(&text, estimates.len())?,
        None => pipeline::scenario_levels(&model, cfg, &vs)?,
    };
    println!(
        "initial levels: [{}]",
        gamma.iter().map(|g| format!("{g:.4}")).collect::<Vec<_>>().join(", ")
    );
    pipeline::check_levels(&gamma)?;
    let with_control = cfg.run.control && !no_control;
    let art = pipeline::run_certify(&model, cfg, &estimates, &gamma, with_control)?;
    pipeline::write_certify_outputs(dir, stamp, &art)?;
    print!("{}", art.table);
    println!("outcome: {:?}", art.verdict.outcome);
    for ev in &art.verdict.control_events {
        println!("control synthesized for S{} at k={}", ev.subsystem + 1, ev.iteration);
    }
    Ok(pipeline::exit_code(art.verdict.outcome) as u8)
}

fn cmd_simulate(cfg: &RunConfig, stamp: &Stamp, t_end: Option<f64>, no_control: bool) -> Result<u8> {
    let model = pipeline::build_model(cfg)?;
    let dir = &cfg.run.output_dir;
    let estimates = pipeline::load_or_estimate(&model, cfg, stamp, dir)?;
    let vs = pipeline::lyapunov_functions(&estimates);
    let laws = if no_control { Vec::new() } else { pipeline::load_laws(dir, &model, &vs)? };
    if !laws.is_empty() {
        println!("armed {} control law(s) from {}", laws.len(), dir.display());
    }
    let t1 = t_end.unwrap_or(cfg.scenario.t_end);
    let x0 = vec![0.0; model.rel.dim()];
    let traj = simulate_network(
        &model.net,
        &model.rel,
        &model.map,
        &x0,
        (0.0, t1),
        &pipeline::outage_list(cfg),
        &laws,
        &pipeline::ode_options(cfg),
    )
    .map_err(|e| anyhow!("simulation: {e}"))?;
    let path = dir.join("trajectory.tsv");
    pipeline::write_trajectory(&path, stamp, &model, &traj, &vs, &laws)?;
    let final_levels = levels_at(traj.last_state(), &vs, &model.map);
    println!(
        "final levels at t={t1}: [{}]",
        final_levels.iter().map(|g| format!("{g:.6}")).collect::<Vec<_>>().join(", ")
    );
    println!("trajectory in {}", path.display());
    Ok(0)
}

fn cmd_recast_check(cfg: &RunConfig, stamp: &Stamp) -> Result<u8> {
    let model = pipeline::build_model(cfg)?;
    let mut report = String::new();
    report.push_str(&format!(
        "states {} constraints {}\n",
        model.map.dim(),
        model.sys.constraints().len()
    ));
    let mut worst: Option<(String, Polynomial)> = None;
    for g in model.sys.constraints() {
        let mut lie = Polynomial::zero(model.sys.space());
        for v in 0..model.sys.dim() {
            let dg = g.diff(v as sosstab::VarId);
            if !dg.is_zero() {
                lie = lie + &dg * &model.sys.dynamics()[v];
            }
        }
        if !lie.is_zero() {
            worst = Some((g.render(), lie));
            break;
        }
    }
    match worst {
        None => {
            report.push_str("constraint lie derivatives: all identically zero\n");
            let mut sys_text = Vec::new();
            model.sys.write_text(&mut sys_text)?;
            report.push_str(&String::from_utf8(sys_text)?);
            stamp.write_file(&cfg.run.output_dir.join("recast_check.txt"), &report)?;
            println!(
                "recast ok: {} states, {} constraints, invariant manifold",
                model.map.dim(),
                model.sys.constraints().len()
            );
            Ok(0)
        }
        Some((g, lie)) => {
            eprintln!("constraint {g} drifts: lie derivative {lie}");
            Ok(1)
        }
    }
}
