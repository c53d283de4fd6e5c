//! Scratch diagnostic: does more expanding-interior iteration pull the
//! scenario levels inside the certified regions?

use sosstab::power::{build_relative_system, decompose_network, recast, solve_equilibrium, PowerNetwork};
use sosstab::roa::estimate_subsystem;
use sosstab::sim::{levels_at, simulate_network, OdeOptions, Outage};
use sosstab::Polynomial;
use std::time::Instant;

fn main() {
    let net = PowerNetwork::load("data/wscc9.toml").expect("network file");
    let eq = solve_equilibrium(&net, None).expect("equilibrium");
    let rel = build_relative_system(&net, &eq).expect("relative model");
    let (sys, map) = recast(&rel).expect("recast");
    let dec = decompose_network(&sys, &map).expect("decomposition");
    let _ = &sys;

    let outages = vec![
        Outage { line: (5, 7), from: 0.0, until: 3.0 },
        Outage { line: (7, 8), from: 1.0, until: 3.0 },
    ];
    let x0 = vec![0.0; rel.dim()];
    let traj = simulate_network(&net, &rel, &map, &x0, (0.0, 3.0), &outages, &[], &OdeOptions::default())
        .expect("sim");
    let x3 = traj.last_state().to_vec();

    for iters in [8usize, 16, 24, 32] {
        let t = Instant::now();
        let estimates: Vec<_> = dec
            .subsystems
            .iter()
            .map(|sub| estimate_subsystem(sub, 2, iters).expect("estimate"))
            .collect();
        let vs: Vec<Polynomial> = estimates.iter().map(|e| e.v.clone()).collect();
        let gamma = levels_at(&x3, &vs, &map);
        let betas: Vec<String> = estimates
            .iter()
            .map(|e| format!("{:.2}({})", e.beta_history.last().unwrap(), e.beta_history.len()))
            .collect();
        let gs: Vec<String> = gamma.iter().map(|g| format!("{g:.4}")).collect();
        println!("iters {iters:>2}: beta[{}] ({:.1?})", betas.join(", "), t.elapsed());
        println!("          gamma [{}]", gs.join(", "));
    }
}
