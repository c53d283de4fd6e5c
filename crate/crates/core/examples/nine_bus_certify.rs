//! End-to-end certification of the 9-bus test network: equilibrium → recast
//! → decomposition → per-subsystem Lyapunov functions → fault scenario for
//! the initial levels → level iteration with the control hook.
//!
//! Run with `cargo run --release --example nine_bus_certify`.

use sosstab::certify::{run_certification, write_epsilon_table, CertifyOptions, ControlHook};
use sosstab::control::SosController;
use sosstab::power::{build_relative_system, decompose_network, recast, solve_equilibrium, PowerNetwork};
use sosstab::roa::estimate_subsystem;
use sosstab::sim::{levels_at, simulate_network, OdeOptions, Outage};
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let net = PowerNetwork::load("data/wscc9.toml").expect("network file");
    let eq = solve_equilibrium(&net, None).expect("equilibrium");
    let rel = build_relative_system(&net, &eq).expect("relative model");
    let (sys, map) = recast(&rel).expect("recast");
    let dec = decompose_network(&sys, &map).expect("decomposition");
    println!("model built: {} vars, {} subsystems ({:.2?})", map.space.dim(), dec.num_subsystems(), t0.elapsed());

    let mut estimates = Vec::new();
    for (i, sub) in dec.subsystems.iter().enumerate() {
        let t = Instant::now();
        let est = estimate_subsystem(sub, 2, 16).expect("subsystem estimate");
        println!(
            "S{}: beta history {:?}, globally_pd = {} ({:.2?})",
            i + 1,
            est.beta_history.iter().map(|b| (b * 1e4).round() / 1e4).collect::<Vec<_>>(),
            est.globally_pd,
            t.elapsed()
        );
        estimates.push(est);
    }
    let vs: Vec<_> = estimates.iter().map(|e| e.v.clone()).collect();
    let pd: Vec<_> = estimates.iter().map(|e| e.globally_pd).collect();

    // double line trip islanding bus 7 and generator 2 until restoration
    let outages = vec![
        Outage { line: (5, 7), from: 0.0, until: 3.0 },
        Outage { line: (7, 8), from: 1.0, until: 3.0 },
    ];
    let x0 = vec![0.0; rel.dim()];
    let traj = simulate_network(&net, &rel, &map, &x0, (0.0, 3.0), &outages, &[], &OdeOptions::default())
        .expect("scenario");
    let gamma0 = levels_at(traj.last_state(), &vs, &map);
    println!(
        "post-fault levels: [{}]",
        gamma0.iter().map(|g| format!("{g:.4}")).collect::<Vec<_>>().join(", ")
    );

    for i in 0..dec.num_subsystems() {
        let t = Instant::now();
        let ctx = sosstab::certify::RingContext {
            system: &dec,
            lyapunov: &vs,
            globally_pd: &pd,
            subsystem: i,
            iteration: 0,
            eps_current: &gamma0,
            level_tol: 1e-4,
            sigma_half_degree: 1,
            sdp_feas_tol: 1e-8,
        };
        let me = sosstab::certify::min_epsilon(&ctx);
        println!("S{} min_epsilon from {:.4}: {:?} ({:.2?})", i + 1, gamma0[i], me, t.elapsed());
        if me.is_none() {
            let t = Instant::now();
            let resc = sosstab::control::SosController.rescue(&ctx);
            println!(
                "   rescue: {:?} ({:.2?})",
                resc.as_ref().map(|(law, e)| (law.u.render(), *e)),
                t.elapsed()
            );
        }
    }

    let hook = SosController;
    let t = Instant::now();
    let (verdict, state) = run_certification(&dec, &estimates, &gamma0, &CertifyOptions::default(), Some(&hook))
        .expect("certification run");
    println!("certification: {:?} in {} rounds ({:.2?})", verdict.outcome, state.iteration, t.elapsed());
    let mut table = Vec::new();
    write_epsilon_table(&mut table, &state, &verdict.control_events).unwrap();
    println!("{}", String::from_utf8(table).unwrap());
    for ev in &verdict.control_events {
        println!("control on S{} at k={}: u = {}", ev.subsystem + 1, ev.iteration, ev.law.u);
    }
    println!("total {:.2?}", t0.elapsed());
}
