//! Temporary diagnostic: isolated-subsystem linearizations and small-beta
//! Lyapunov feasibility.

use sosstab::power::{build_relative_system, decompose_network, recast, solve_equilibrium, PowerNetwork};
use sosstab::roa::{default_shape, initial_lyapunov};

fn main() {
    let net = PowerNetwork::load("data/wscc9.toml").expect("network file");
    let eq = solve_equilibrium(&net, None).expect("equilibrium");
    let rel = build_relative_system(&net, &eq).expect("relative model");
    let (sys, map) = recast(&rel).expect("recast");
    let dec = decompose_network(&sys, &map).expect("decomposition");

    for (i, sub) in dec.subsystems.iter().enumerate() {
        println!("S{} vars: {:?}", i + 1, sub.vars.iter().map(|&v| map.space.name(v)).collect::<Vec<_>>());
        let n = sub.vars.len();
        // Jacobian of the isolated rows at the origin, restricted to local vars.
        let mut jac = vec![vec![0.0; n]; n];
        for (r, row) in sub.f.iter().enumerate() {
            for (c, &v) in sub.vars.iter().enumerate() {
                let d = row.diff(v);
                let z = vec![0.0; map.space.dim()];
                jac[r][c] = d.evaluate(&z);
            }
        }
        for (r, row) in jac.iter().enumerate() {
            println!("  d{}/dt = {:?}", map.space.name(sub.vars[r]), row.iter().map(|x| (x * 1e4).round() / 1e4).collect::<Vec<_>>());
        }
        let a = ndarray::Array2::from_shape_fn((n, n), |(r, c)| jac[r][c]);
        let eigs = ndarray_linalg::Eig::eig(&a).map(|(e, _)| e);
        println!("  eigs: {:?}", eigs.map(|e| e.iter().map(|c| (c.re, c.im)).collect::<Vec<_>>()));
        for beta in [0.1, 0.01, 0.001] {
            let shape = default_shape(&map.space, &sub.vars);
            let r = initial_lyapunov(sub, 2, &shape, beta);
            println!("  beta {beta}: {}", if r.is_ok() { "feasible" } else { "INFEASIBLE" });
            if r.is_ok() {
                break;
            }
        }
    }
}
