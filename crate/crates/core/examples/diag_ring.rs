//! Scratch diagnostic: where does the k=0 ring fail, and is the failure
//! real (positive V̇ samples on the slice) or solver-side (status)?

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sosstab::certify::{ring_condition, RingContext};
use sosstab::power::{build_relative_system, decompose_network, recast, solve_equilibrium, PowerNetwork};
use sosstab::roa::estimate_subsystem;
use sosstab::sim::{levels_at, simulate_network, OdeOptions, Outage};
use sosstab::{Polynomial, SolverOptions};
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let net = PowerNetwork::load("data/wscc9.toml").expect("network file");
    let eq = solve_equilibrium(&net, None).expect("equilibrium");
    let rel = build_relative_system(&net, &eq).expect("relative model");
    let (sys, map) = recast(&rel).expect("recast");
    let dec = decompose_network(&sys, &map).expect("decomposition");

    let estimates: Vec<_> = dec
        .subsystems
        .iter()
        .map(|sub| estimate_subsystem(sub, 2, 8).expect("estimate"))
        .collect();
    let vs: Vec<Polynomial> = estimates.iter().map(|e| e.v.clone()).collect();
    let pd: Vec<bool> = estimates.iter().map(|e| e.globally_pd).collect();
    println!("model + estimates ready ({:.2?})", t0.elapsed());

    // --- honest scenario levels -------------------------------------------
    let outages = vec![
        Outage { line: (5, 7), from: 0.0, until: 3.0 },
        Outage { line: (7, 8), from: 1.0, until: 3.0 },
    ];
    let x0 = vec![0.0; rel.dim()];
    let opts = OdeOptions::default();
    for t in [0.5, 1.0, 2.0, 3.0] {
        let traj = simulate_network(&net, &rel, &map, &x0, (0.0, t), &outages, &[], &opts).expect("sim");
        let g = levels_at(traj.last_state(), &vs, &map);
        let gs: Vec<String> = g.iter().map(|v| format!("{v:.4}")).collect();
        println!("levels at t={t}: [{}]", gs.join(", "));
    }
    let traj = simulate_network(&net, &rel, &map, &x0, (0.0, 3.0), &outages, &[], &opts).expect("sim");
    let gamma: Vec<f64> = levels_at(traj.last_state(), &vs, &map);

    // --- per-subsystem top-slice solver status + sampled max V̇ ------------
    for (label, levels) in [
        ("honest", gamma.clone()),
        ("uniform 0.01", vec![0.01; 8]),
        ("uniform 0.3", vec![0.3; 8]),
    ] {
        println!("--- levels: {label}");
        if levels.iter().any(|&g| g > 1.0 || g <= 0.0) {
            println!("   (skipping SOS checks: levels outside (0,1])");
            if label == "honest" {
                continue;
            }
        }
        for i in 0..dec.num_subsystems() {
            let ctx = RingContext {
                system: &dec,
                lyapunov: &vs,
                globally_pd: &pd,
                subsystem: i,
                iteration: 0,
                eps_current: &levels,
                level_tol: 1e-4,
                sigma_half_degree: 1,
                sdp_feas_tol: 1e-8,
            };
            let t = Instant::now();
            let res = ring_condition(&ctx, levels[i], None).solve(&SolverOptions::default());
            let (worst, n_acc) = sampled_max_vdot(&dec, &map, &vs, i, &levels, 400);
            println!(
                "S{}: top-slice status {:?} ({:.2?}); sampled max Vdot = {:+.4e} over {} pts",
                i + 1,
                res.status,
                t.elapsed(),
                worst,
                n_acc
            );
        }
    }
    println!("total {:.2?}", t0.elapsed());
}

/// Max of the composite V̇_i over sampled points of {V_i = ε_i} ∩ {V_j ≤ ε_j}
/// on the trig manifold.
fn sampled_max_vdot(
    dec: &sosstab::model::InterconnectedSystem,
    map: &sosstab::power::RecastMap,
    vs: &[Polynomial],
    i: usize,
    levels: &[f64],
    want: usize,
) -> (f64, usize) {
    let sub = &dec.subsystems[i];
    let rows = sub.full_rows();
    let grads: Vec<Polynomial> = sub.vars.iter().map(|&v| vs[i].diff(v)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0xd1a6 ^ (i as u64));
    let dim = map.space.dim();
    let ac = map.angle_count;
    let mut worst = f64::NEG_INFINITY;
    let mut accepted = 0;
    let mut draws = 0;
    while accepted < want && draws < 40_000 {
        draws += 1;
        // raw draw: angles and speeds for every block
        let thetas: Vec<f64> = (0..ac).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let speeds: Vec<f64> = (0..dim - 2 * ac).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z_of = |alpha: f64| {
            let mut z = vec![0.0; dim];
            for b in 0..ac {
                let th = alpha * thetas[b];
                z[2 * b] = th.sin();
                z[2 * b + 1] = 1.0 - th.cos();
            }
            for (s, &w) in speeds.iter().enumerate() {
                z[2 * ac + s] = alpha * w;
            }
            z
        };
        // ray-scale the whole draw to put V_i exactly on its slice
        let vi_at = |alpha: f64| vs[i].evaluate(&z_of(alpha));
        if vi_at(1.0) < levels[i] {
            continue;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if vi_at(mid) < levels[i] {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let z = z_of(hi);
        // neighbors must sit inside their own levels
        if (0..vs.len()).any(|j| j != i && vs[j].evaluate(&z) > levels[j]) {
            continue;
        }
        accepted += 1;
        let mut vdot = 0.0;
        for (g, r) in grads.iter().zip(&rows) {
            vdot += g.evaluate(&z) * r.evaluate(&z);
        }
        worst = worst.max(vdot);
    }
    (worst, accepted)
}
