//! Model-level benchmarks: the grid-to-polynomial pipeline and one ring
//! feasibility solve on a small interconnection.

use criterion::{criterion_group, criterion_main, Criterion};
use sosstab::certify::{ring_condition, RingContext};
use sosstab::model::{decompose_node_overlap, PolySystem};
use sosstab::poly::{Polynomial, VarSpace};
use sosstab::power::{build_relative_system, decompose_network, recast, solve_equilibrium, PowerNetwork, WSCC9_TOML};
use sosstab::sdp::SolverOptions;
use std::hint::black_box;

fn bench_recast(c: &mut Criterion) {
    let net = PowerNetwork::from_toml_str(WSCC9_TOML).unwrap();
    let eq = solve_equilibrium(&net, None).unwrap();
    c.bench_function("nine_bus_recast_decompose", |bch| {
        bch.iter(|| {
            let rel = build_relative_system(&net, &eq).unwrap();
            let (sys, map) = recast(&rel).unwrap();
            let dec = decompose_network(&sys, &map).unwrap();
            black_box(dec.num_subsystems())
        })
    });
}

fn bench_ring_solve(c: &mut Criterion) {
    let sp = VarSpace::shared(["x1", "x2"]);
    let f = vec![
        Polynomial::parse("-1*x1 + 0.1*x2", &sp).unwrap(),
        Polynomial::parse("-1*x2 + 0.1*x1", &sp).unwrap(),
    ];
    let sys = PolySystem::new(&sp, f, vec![]).unwrap();
    let dec = decompose_node_overlap(&sys, &[vec![0], vec![1]], &[]).unwrap();
    let vs = vec![
        Polynomial::parse("1*x1^2", &sp).unwrap(),
        Polynomial::parse("1*x2^2", &sp).unwrap(),
    ];
    let pd = vec![true, true];
    let eps = vec![1.0, 1.0];
    let ctx = RingContext {
        system: &dec,
        lyapunov: &vs,
        globally_pd: &pd,
        subsystem: 0,
        iteration: 0,
        eps_current: &eps,
        level_tol: 1e-4,
        sigma_half_degree: 1,
        sdp_feas_tol: 1e-8,
    };
    let opts = SolverOptions { stop_when_feasible: true, ..SolverOptions::default() };
    c.bench_function("ring_feasibility_toy", |bch| {
        bch.iter(|| {
            let res = ring_condition(&ctx, 0.05, None).solve(&opts);
            assert!(res.feasible);
            black_box(res.status)
        })
    });
}

criterion_group!(pipeline, bench_recast, bench_ring_solve);
criterion_main!(pipeline);
