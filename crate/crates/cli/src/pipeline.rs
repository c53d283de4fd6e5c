use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use sosstab::certify::{
    run_certification, write_epsilon_table, CertifyOptions, Outcome, Verdict,
};
use sosstab::control::{write_law, SosController};
use sosstab::model::InterconnectedSystem;
use sosstab::power::{
    build_relative_system, decompose_network, recast, solve_equilibrium, PowerNetwork, RecastMap,
    RelativeSystem,
};
use sosstab::roa::{contour_grid, estimate_subsystem, read_certificate, write_certificate, RoaEstimate};
use sosstab::sim::{levels_at, simulate_network, ActiveLaw, OdeOptions, Outage, Trajectory};
use sosstab::Polynomial;

use crate::config::RunConfig;

/// Everything downstream commands share: the grid model in all its stages.
pub struct Model {
    pub net: PowerNetwork,
    pub rel: RelativeSystem,
    pub sys: sosstab::model::PolySystem,
    pub map: RecastMap,
    pub dec: InterconnectedSystem,
}

pub fn build_model(cfg: &RunConfig) -> Result<Model> {
    let net = PowerNetwork::load(&cfg.run.network)
        .with_context(|| format!("loading network {}", cfg.run.network.display()))?;
    let eq = solve_equilibrium(&net, None).context("solving the pre-fault equilibrium")?;
    let rel = build_relative_system(&net, &eq).context("building the relative-coordinate model")?;
    let (sys, map) = recast(&rel).context("recasting to polynomial coordinates")?;
    let dec = decompose_network(&sys, &map).context("decomposing into subsystems")?;
    Ok(Model { net, rel, sys, map, dec })
}

/// Stamp every produced file with the effective config hash and seed, so a
/// result can always be traced to the exact inputs.
pub struct Stamp {
    pub digest: String,
    pub seed: u64,
}

impl Stamp {
    pub fn header(&self) -> String {
        format!("# config sha256 {}\n# seed {}\n", self.digest, self.seed)
    }

    pub fn write_file(&self, path: &Path, body: &str) -> Result<()> {
        let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        f.write_all(self.header().as_bytes())?;
        f.write_all(body.as_bytes())?;
        Ok(())
    }
}

pub fn outage_list(cfg: &RunConfig) -> Vec<Outage> {
    cfg.scenario
        .outages
        .iter()
        .map(|o| Outage { line: (o.line[0], o.line[1]), from: o.from, until: o.until })
        .collect()
}

pub fn ode_options(cfg: &RunConfig) -> OdeOptions {
    OdeOptions { rtol: cfg.tolerances.rtol, atol: cfg.tolerances.atol, ..OdeOptions::default() }
}

pub fn certify_options(cfg: &RunConfig) -> CertifyOptions {
    CertifyOptions {
        eps_bar: cfg.tolerances.eps_bar,
        level_tol: cfg.tolerances.level_tol,
        sigma_half_degree: cfg.lyapunov.multiplier_half_degree,
        sdp_feas_tol: cfg.tolerances.sdp_feas,
        ..CertifyOptions::default()
    }
}

fn cert_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("certificate_S{}.txt", i + 1))
}

/// Region-of-attraction estimates for every subsystem, reusing certificates
/// already in `dir` when they parse; freshly computed ones are written back.
/// Partial failures leave the successful certificates on disk.
pub fn load_or_estimate(
    model: &Model,
    cfg: &RunConfig,
    stamp: &Stamp,
    dir: &Path,
) -> Result<Vec<RoaEstimate>> {
    let results: Vec<Result<(RoaEstimate, bool)>> = model
        .dec
        .subsystems
        .par_iter()
        .enumerate()
        .map(|(i, sub)| {
            if let Ok(text) = fs::read_to_string(cert_path(dir, i)) {
                if let Ok(est) = read_certificate(&text, &model.map.space) {
                    if est.subsystem == i {
                        return Ok((est, false));
                    }
                }
            }
            let est = estimate_subsystem(sub, cfg.lyapunov.degree, cfg.lyapunov.expand_iters)
                .map_err(|e| anyhow!("subsystem S{}: {e}", i + 1))?;
            Ok((est, true))
        })
        .collect();

    let mut estimates = Vec::new();
    let mut errors = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok((est, fresh)) => {
                if fresh {
                    let mut body = Vec::new();
                    write_certificate(&mut body, &est)?;
                    stamp.write_file(&cert_path(dir, i), &String::from_utf8(body)?)?;
                }
                estimates.push(est);
            }
            Err(e) => errors.push(e.to_string()),
        }
    }
    if !errors.is_empty() {
        bail!("region estimation failed for {} subsystem(s): {}", errors.len(), errors.join("; "));
    }
    Ok(estimates)
}

pub fn lyapunov_functions(estimates: &[RoaEstimate]) -> Vec<Polynomial> {
    estimates.iter().map(|e| e.v.clone()).collect()
}

/// Initial levels from the configured fault scenario: integrate the outaged
/// system from equilibrium and read V_i at the sample time.
pub fn scenario_levels(model: &Model, cfg: &RunConfig, vs: &[Polynomial]) -> Result<Vec<f64>> {
    if cfg.scenario.sample_at <= 0.0 {
        bail!("scenario.sample_at must be positive to derive initial levels");
    }
    let x0 = vec![0.0; model.rel.dim()];
    let traj = simulate_network(
        &model.net,
        &model.rel,
        &model.map,
        &x0,
        (0.0, cfg.scenario.sample_at),
        &outage_list(cfg),
        &[],
        &ode_options(cfg),
    )
    .map_err(|e| anyhow!("scenario simulation: {e}"))?;
    Ok(levels_at(traj.last_state(), vs, &model.map))
}

/// Reject initial levels outside the certified product region, naming the
/// offenders — certification means nothing starting beyond the estimates.
pub fn check_levels(gamma: &[f64]) -> Result<()> {
    let over: Vec<String> = gamma
        .iter()
        .enumerate()
        .filter(|(_, &g)| g > 1.0)
        .map(|(i, &g)| format!("S{} at {:.4}", i + 1, g))
        .collect();
    if !over.is_empty() {
        bail!(
            "initial levels leave the certified region (V > 1): {}; \
             shorten the fault or enlarge the estimates",
            over.join(", ")
        );
    }
    if let Some((i, &g)) = gamma.iter().enumerate().find(|(_, &g)| !(g > 0.0) || !g.is_finite()) {
        bail!("initial level for S{} is {}; levels must be positive", i + 1, g);
    }
    Ok(())
}

pub struct CertifyArtifacts {
    pub verdict: Verdict,
    pub table: String,
    pub gamma: Vec<f64>,
}

pub fn run_certify(
    model: &Model,
    cfg: &RunConfig,
    estimates: &[RoaEstimate],
    gamma: &[f64],
    with_control: bool,
) -> Result<CertifyArtifacts> {
    let hook = SosController;
    let opts = certify_options(cfg);
    let (verdict, state) = run_certification(
        &model.dec,
        estimates,
        gamma,
        &opts,
        if with_control { Some(&hook) } else { None },
    )?;
    let mut table = Vec::new();
    write_epsilon_table(&mut table, &state, &verdict.control_events)?;
    Ok(CertifyArtifacts { verdict, table: String::from_utf8(table)?, gamma: gamma.to_vec() })
}

pub fn write_certify_outputs(dir: &Path, stamp: &Stamp, art: &CertifyArtifacts) -> Result<()> {
    stamp.write_file(&dir.join("epsilon_table.txt"), &art.table)?;
    let mut verdict = String::new();
    verdict.push_str(&format!("outcome {:?}\n", art.verdict.outcome));
    verdict.push_str(&format!(
        "gamma0 {}\n",
        art.gamma.iter().map(|g| format!("{g:.6}")).collect::<Vec<_>>().join(" ")
    ));
    verdict.push_str(&format!(
        "limits {}\n",
        art.verdict.limits.iter().map(|g| format!("{g:.6}")).collect::<Vec<_>>().join(" ")
    ));
    verdict.push_str(&format!("hit_iteration_cap {}\n", art.verdict.hit_iteration_cap));
    for ev in &art.verdict.control_events {
        verdict.push_str(&format!("control S{} at k={}\n", ev.subsystem + 1, ev.iteration));
    }
    stamp.write_file(&dir.join("verdict.txt"), &verdict)?;
    for ev in &art.verdict.control_events {
        let name = format!("law_S{}_k{}.txt", ev.subsystem + 1, ev.iteration);
        stamp.write_file(&dir.join(name), &write_law(&ev.law))?;
    }
    Ok(())
}

pub fn exit_code(outcome: Outcome) -> i32 {
    match outcome {
        Outcome::AsymptoticallyStable => 0,
        Outcome::LyapunovStableOnly => 2,
        Outcome::NotCertified => 3,
    }
}

/// Laws previously written next to the other outputs, armed with their
/// subsystems' Lyapunov functions.
pub fn load_laws(dir: &Path, model: &Model, vs: &[Polynomial]) -> Result<Vec<ActiveLaw>> {
    let mut laws = Vec::new();
    let mut entries: Vec<_> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("law_S") && n.ends_with(".txt"))
                .unwrap_or(false)
        })
        .collect();
    entries.sort();
    for path in entries {
        let text = fs::read_to_string(&path)?;
        let law = sosstab::control::read_law(&text, &model.map.space)
            .map_err(|e| anyhow!("{}: {e}", path.display()))?;
        let v = vs
            .get(law.subsystem)
            .ok_or_else(|| anyhow!("{}: subsystem {} out of range", path.display(), law.subsystem))?
            .clone();
        laws.push(ActiveLaw { law, v });
    }
    Ok(laws)
}

/// Tab-separated trajectory dump: time, every model state, every subsystem
/// level, and a 0/1 flag per loaded law showing when its band was active.
pub fn write_trajectory(
    path: &Path,
    stamp: &Stamp,
    model: &Model,
    traj: &Trajectory,
    vs: &[Polynomial],
    laws: &[ActiveLaw],
) -> Result<()> {
    let mut body = String::new();
    body.push('t');
    for label in model.rel.state_labels() {
        body.push('\t');
        body.push_str(&label);
    }
    for i in 0..vs.len() {
        body.push_str(&format!("\tV{}", i + 1));
    }
    for al in laws {
        body.push_str(&format!("\tu_S{}_on", al.law.subsystem + 1));
    }
    body.push('\n');
    for (k, t) in traj.times.iter().enumerate() {
        let x = &traj.states[k];
        body.push_str(&format!("{t}"));
        for v in x {
            body.push_str(&format!("\t{v}"));
        }
        let levels = levels_at(x, vs, &model.map);
        for v in &levels {
            body.push_str(&format!("\t{v}"));
        }
        for al in laws {
            let v = levels[al.law.subsystem];
            let on = al.law.band.0 <= v && v <= al.law.band.1;
            body.push_str(if on { "\t1" } else { "\t0" });
        }
        body.push('\n');
    }
    stamp.write_file(path, &body)
}

/// Level-set samples of each V on its angle/speed window — plain columns for
/// plotting, no rendering here.
pub fn write_contours(dir: &Path, stamp: &Stamp, model: &Model, estimates: &[RoaEstimate]) -> Result<()> {
    for est in estimates {
        let sub = &model.dec.subsystems[est.subsystem];
        let Some(pair) = sub_pair(model, sub) else { continue };
        let speed = sub_speed(model, sub);
        let pts = contour_grid(&est.v, pair, speed, (-3.2, 3.2), (-8.0, 8.0), (81, 41));
        let mut body = String::from("delta\tspeed\tV\n");
        for (d, w, v) in pts {
            body.push_str(&format!("{d}\t{w}\t{v}\n"));
        }
        stamp.write_file(&dir.join(format!("contour_S{}.tsv", est.subsystem + 1)), &body)?;
    }
    Ok(())
}

fn sub_pair(model: &Model, sub: &sosstab::model::Subsystem) -> Option<(sosstab::VarId, sosstab::VarId)> {
    (0..model.map.angle_count)
        .map(|b| model.map.pair_ids(b))
        .find(|&(s, _)| sub.vars.contains(&s))
}

fn sub_speed(model: &Model, sub: &sosstab::model::Subsystem) -> Option<sosstab::VarId> {
    let shared: Vec<_> = model.dec.overlap.keys().copied().collect();
    let speeds: Vec<_> = (0..model.map.speed_count).map(|s| model.map.speed_id(s)).collect();
    sub.vars
        .iter()
        .copied()
        .find(|v| !shared.contains(v) && speeds.contains(v))
}
