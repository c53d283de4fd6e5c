//! Distributed asymptotic-stability certification over an interconnected
//! system: each subsystem repeatedly shrinks its certified level ε_i by
//! proving its composite Lyapunov derivative negative on the ring
//! ε_i^{k+1} ≤ V_i ≤ ε_iᵏ while neighbors sit below their own ε_jᵏ. All
//! levels reaching zero certifies asymptotic stability on the initial
//! product region; a stalled nonzero limit only certifies Lyapunov
//! stability; infeasibility at the very first iteration (after an optional
//! control rescue) aborts the certification.
//!
//! Iterations are fork-join parallel over subsystems with a barrier per
//! round: every ε_i^{k+1} is computed from the published round-k levels
//! only, so results are deterministic regardless of scheduling.

use crate::control::ControlLaw;
use crate::model::InterconnectedSystem;
use crate::poly::Polynomial;
use crate::roa::RoaEstimate;
use crate::sdp::{bisect, SolverOptions};
use crate::sos::{SosExpr, SosProgram};
use rayon::prelude::*;
use std::collections::BTreeSet;
use std::io::{self, Write};
use thiserror::Error;

pub const DEFAULT_EPS_BAR: f64 = 1e-3;
pub const DEFAULT_LEVEL_TOL: f64 = 1e-4;
pub const DEFAULT_MAX_ITERATIONS: usize = 200;

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error("bad certification input: {0}")]
    BadInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubsystemStatus {
    Active,
    Converged,
    Infeasible,
}

/// Full record of the level iteration: row k holds every subsystem's ε_iᵏ
/// (row 0 is the initial γ⁰).
#[derive(Debug, Clone)]
pub struct LevelState {
    pub epsilon: Vec<Vec<f64>>,
    pub status: Vec<SubsystemStatus>,
    pub iteration: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    AsymptoticallyStable,
    LyapunovStableOnly,
    NotCertified,
}

#[derive(Debug, Clone)]
pub struct ControlEvent {
    pub subsystem: usize,
    pub iteration: usize,
    pub law: ControlLaw,
}

#[derive(Debug, Clone)]
pub struct Verdict {
    pub outcome: Outcome,
    /// Final ε levels (limits of the sequences).
    pub limits: Vec<f64>,
    pub control_events: Vec<ControlEvent>,
    pub hit_iteration_cap: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct CertifyOptions {
    /// Minimum per-round improvement for the iteration to continue.
    pub eps_bar: f64,
    /// Bisection tolerance for ε searches; levels below it clamp to zero.
    pub level_tol: f64,
    pub max_iterations: usize,
    /// Half-degree of the SOS ring multipliers (free multipliers get twice
    /// this as their total degree).
    pub sigma_half_degree: u32,
    /// Feasibility tolerance for the ring SDPs.
    pub sdp_feas_tol: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            eps_bar: DEFAULT_EPS_BAR,
            level_tol: DEFAULT_LEVEL_TOL,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            sigma_half_degree: 1,
            sdp_feas_tol: 1e-8,
        }
    }
}

/// Everything one subsystem's level search needs from the current round.
pub struct RingContext<'a> {
    pub system: &'a InterconnectedSystem,
    pub lyapunov: &'a [Polynomial],
    /// Whether each V_j is certified positive definite on its whole local
    /// manifold (allows dropping frozen neighbors exactly).
    pub globally_pd: &'a [bool],
    pub subsystem: usize,
    pub iteration: usize,
    /// ε_jᵏ for every subsystem.
    pub eps_current: &'a [f64],
    pub level_tol: f64,
    pub sigma_half_degree: u32,
    pub sdp_feas_tol: f64,
}

/// Control rescue: invoked when a subsystem's uncontrolled level search is
/// infeasible; a successful rescue returns the law and the level it reached.
pub trait ControlHook: Sync {
    fn rescue(&self, ctx: &RingContext) -> Option<(ControlLaw, f64)>;
}

pub(crate) fn feasibility_opts(feas_tol: f64) -> SolverOptions {
    SolverOptions { stop_when_feasible: true, feas_tol, ..SolverOptions::default() }
}

/// Neighbors whose level still constrains subsystem `i`'s ring. A neighbor
/// frozen at ε = 0 with a globally positive-definite V_j pins its block to
/// the origin, which kills H_ij along with its multipliers — it is dropped
/// from the program entirely.
pub(crate) fn active_neighbors(ctx: &RingContext) -> BTreeSet<usize> {
    let i = ctx.subsystem;
    ctx.system
        .neighbors(i)
        .into_iter()
        .filter(|&j| j == i || !(ctx.eps_current[j] == 0.0 && ctx.globally_pd[j]))
        .collect()
}

/// Composite dynamics rows of subsystem `i` (aligned with its `vars`):
/// isolated part plus the interactions from non-frozen neighbors, plus any
/// control increment.
pub(crate) fn ring_rows(
    ctx: &RingContext,
    neighbors: &BTreeSet<usize>,
    extra: Option<&[Polynomial]>,
) -> Vec<Polynomial> {
    let sub = &ctx.system.subsystems[ctx.subsystem];
    let mut rows = sub.f.clone();
    for (&j, hrows) in &sub.h {
        if neighbors.contains(&j) {
            for (k, p) in hrows.iter().enumerate() {
                rows[k] = &rows[k] + p;
            }
        }
    }
    if let Some(extra) = extra {
        for (k, p) in extra.iter().enumerate() {
            rows[k] = &rows[k] + p;
        }
    }
    rows
}

/// An open ring program: the expression still accepts extra terms (the
/// control module appends its input term), and the scaling that conditioned
/// the SDP is recorded so added terms transform the same way and solved
/// unknowns map back to physical coordinates.
pub(crate) struct RingProgram {
    pub prog: SosProgram,
    pub expr: SosExpr,
    /// z_v = scale_v · y_v; the program lives in y.
    pub scale: Vec<f64>,
    /// Uniform positive factor on the whole expression.
    pub norm: f64,
}

impl RingProgram {
    /// Transforms a physical-coordinate term for insertion into the program.
    /// Solved unknowns map back through `scale_vars` with the reciprocal
    /// scales (the expression normalization cancels for multiplicative
    /// unknowns).
    pub(crate) fn scaled(&self, p: &Polynomial) -> Polynomial {
        p.scale_vars(&self.scale).scale(self.norm)
    }

    pub(crate) fn close(self) -> SosProgram {
        let RingProgram { mut prog, expr, .. } = self;
        prog.add_sos(expr);
        prog
    }
}

/// Per-variable slice radii: d_v solves V_j(d_v·e_v) = ε_j for the tightest
/// active block containing v. Equalizing the slice boxes to unit size is
/// what keeps the ring SDPs well-conditioned at levels spanning several
/// orders of magnitude; feasibility is invariant under the substitution
/// because monomial bases map onto themselves.
fn ring_scale(ctx: &RingContext, neighbors: &BTreeSet<usize>) -> Vec<f64> {
    let space = ctx.lyapunov[ctx.subsystem].space();
    let mut d = vec![1.0; space.dim()];
    for (v, dv) in d.iter_mut().enumerate() {
        let mut best = f64::INFINITY;
        for &j in neighbors {
            let eps_j = ctx.eps_current[j];
            if eps_j <= 0.0 || !ctx.system.subsystems[j].vars.contains(&(v as u32)) {
                continue;
            }
            let c = ctx.lyapunov[j].coeff(&crate::poly::Monomial::new(&[(v as u32, 2)]));
            if c > 1e-9 {
                best = best.min((eps_j / c).sqrt());
            }
        }
        if best.is_finite() {
            *dv = best.clamp(1e-6, 1e6);
        }
    }
    d
}

/// Assembles the ring feasibility expression for subsystem `i`:
///
///   −∇V_iᵀ(F_i + ΣH_ij) − σ_lo(V_i − ε_i^{k+1}) − Σ_{j∈N_i} σ_j(ε_jᵏ − V_j)
///   − Σ_{j∈N_i} λ_jᵀ G_j ∈ Σ
///
/// with SOS multipliers of degree 2 and free equality multipliers of degree
/// ≤ 2; the j = i term bounds the ring from above. When the ring is
/// degenerate (ε' = ε_iᵏ, the slice V_i = ε_iᵏ) the two self multipliers
/// collapse into a single free-sign equality multiplier, which is exactly
/// the boundary-negativity certificate control synthesis starts from.
/// `extra` adds control increments to the dynamics rows. Returned open so
/// the control module can append its input term before closing the program.
pub(crate) fn ring_parts(
    ctx: &RingContext,
    eps_lower: f64,
    extra: Option<&[Polynomial]>,
) -> RingProgram {
    let i = ctx.subsystem;
    let sys = ctx.system;
    let sub = &sys.subsystems[i];
    let space = ctx.lyapunov[i].space().clone();
    let neighbors = active_neighbors(ctx);
    let rows = ring_rows(ctx, &neighbors, extra);
    let eps_upper = ctx.eps_current[i];
    let degenerate = eps_lower >= eps_upper;

    let vi = &ctx.lyapunov[i];
    let mut lie = Polynomial::zero(&space);
    for (k, &var) in sub.vars.iter().enumerate() {
        let dv = vi.diff(var);
        if !dv.is_zero() && !rows[k].is_zero() {
            lie = lie + &dv * &rows[k];
        }
    }
    let scale = ring_scale(ctx, &neighbors);
    let scaled_lie = (-lie).scale_vars(&scale);
    let lead = scaled_lie.max_abs_coeff();
    let norm = if lead > 0.0 { 1.0 / lead } else { 1.0 };
    let mut ring = RingProgram { prog: SosProgram::new(&space), expr: SosExpr::new(), scale, norm };
    ring.expr.add_poly(&scaled_lie.scale(norm));

    if degenerate {
        let mut union_vars: BTreeSet<_> = BTreeSet::new();
        for &j in &neighbors {
            union_vars.extend(sys.subsystems[j].vars.iter().copied());
        }
        let union_vars: Vec<_> = union_vars.into_iter().collect();
        // −ρ(ε_iᵏ − V_i), ρ free
        let free_deg = 2 * ctx.sigma_half_degree;
        let rho = ring.prog.new_free_poly(Polynomial::monomial_basis(&space, &union_vars, free_deg));
        let coeff = ring.scaled(&(vi - &Polynomial::constant(&space, eps_upper)));
        ring.expr.add_unknown(rho, &coeff);
    } else {
        // lower ring bound: −σ_lo(V_i − ε')
        let s_lo = ring.prog.new_sos_poly(&sub.vars, ctx.sigma_half_degree);
        let coeff = ring.scaled(&(Polynomial::constant(&space, eps_lower) - vi));
        ring.expr.add_unknown(s_lo, &coeff);
    }

    for &j in &neighbors {
        if degenerate && j == i {
            continue;
        }
        let sub_j = &sys.subsystems[j];
        let pair_vars: Vec<_> = if j == i {
            sub.vars.clone()
        } else {
            let mut v: BTreeSet<_> = sub.vars.iter().copied().collect();
            v.extend(sub_j.vars.iter().copied());
            v.into_iter().collect()
        };
        // −σ_j(ε_jᵏ − V_j)
        let s = ring.prog.new_sos_poly(&pair_vars, ctx.sigma_half_degree);
        let coeff = ring.scaled(&(&ctx.lyapunov[j] - &Polynomial::constant(&space, ctx.eps_current[j])));
        ring.expr.add_unknown(s, &coeff);
    }
    for &j in &neighbors {
        // −λ_jᵀ G_j
        let sub_j = &sys.subsystems[j];
        for g in &sub_j.g {
            let lam = ring
                .prog
                .new_free_poly(Polynomial::monomial_basis(&space, &sub_j.vars, 2 * ctx.sigma_half_degree));
            let coeff = ring.scaled(&-g.clone());
            ring.expr.add_unknown(lam, &coeff);
        }
    }
    ring
}

pub fn ring_condition(ctx: &RingContext, eps_lower: f64, extra: Option<&[Polynomial]>) -> SosProgram {
    ring_parts(ctx, eps_lower, extra).close()
}

fn ring_feasible(ctx: &RingContext, eps_lower: f64, extra: Option<&[Polynomial]>) -> bool {
    ring_condition(ctx, eps_lower, extra).solve(&feasibility_opts(ctx.sdp_feas_tol)).feasible
}

/// Bisection width for a level search from `hi`: relative high up (the
/// early rounds don't need four decimals), floored at the clamp tolerance
/// so converged levels still resolve to zero.
pub(crate) fn search_tol(ctx: &RingContext, hi: f64) -> f64 {
    (0.005 * hi).max(ctx.level_tol)
}

/// Minimum feasible ε_i^{k+1} in [0, ε_iᵏ] by bisection (checking 0 first);
/// `None` when even the degenerate ring at ε_iᵏ is infeasible. Used both for
/// the plain dynamics and, through `extra`, for controlled dynamics.
pub fn min_epsilon_with(ctx: &RingContext, extra: Option<&[Polynomial]>) -> Option<f64> {
    let hi = ctx.eps_current[ctx.subsystem];
    debug_assert!(hi > 0.0);
    bisect(|e| ring_feasible(ctx, e, extra), 0.0, hi, search_tol(ctx, hi))
}

pub fn min_epsilon(ctx: &RingContext) -> Option<f64> {
    min_epsilon_with(ctx, None)
}

/// Runs the level iteration to a verdict. `estimates[i]` must carry the
/// scaled V_i of subsystem i; `gamma0` the initial levels in (0, 1].
pub fn run_certification(
    sys: &InterconnectedSystem,
    estimates: &[RoaEstimate],
    gamma0: &[f64],
    opts: &CertifyOptions,
    hook: Option<&dyn ControlHook>,
) -> Result<(Verdict, LevelState), CertifyError> {
    let n = sys.num_subsystems();
    if estimates.len() != n || gamma0.len() != n {
        return Err(CertifyError::BadInput(format!(
            "{n} subsystems but {} estimates and {} levels",
            estimates.len(),
            gamma0.len()
        )));
    }
    for (i, est) in estimates.iter().enumerate() {
        if est.subsystem != i {
            return Err(CertifyError::BadInput(format!("estimate {i} labeled {}", est.subsystem)));
        }
        if est.v.is_zero() {
            return Err(CertifyError::BadInput(format!("zero Lyapunov function for subsystem {i}")));
        }
        if !(gamma0[i] > 0.0 && gamma0[i] <= 1.0) {
            return Err(CertifyError::BadInput(format!("gamma0[{i}] = {} outside (0, 1]", gamma0[i])));
        }
    }
    let vs: Vec<Polynomial> = estimates.iter().map(|e| e.v.clone()).collect();
    let pd: Vec<bool> = estimates.iter().map(|e| e.globally_pd).collect();

    let mut rows: Vec<Vec<f64>> = vec![gamma0.to_vec()];
    let mut frozen = vec![false; n];
    let mut status = vec![SubsystemStatus::Active; n];
    let mut events: Vec<ControlEvent> = Vec::new();
    let outcome;
    let mut hit_cap = false;

    struct Step {
        eps: f64,
        law: Option<ControlLaw>,
        stuck: bool,
    }

    let mut k = 0;
    loop {
        if frozen.iter().all(|&f| f) {
            outcome = Outcome::AsymptoticallyStable;
            break;
        }
        if k >= opts.max_iterations {
            outcome = Outcome::LyapunovStableOnly;
            hit_cap = true;
            break;
        }
        let current = rows.last().unwrap().clone();
        let steps: Vec<Step> = (0..n)
            .into_par_iter()
            .map(|i| {
                if frozen[i] {
                    return Step { eps: 0.0, law: None, stuck: false };
                }
                let ctx = RingContext {
                    system: sys,
                    lyapunov: &vs,
                    globally_pd: &pd,
                    subsystem: i,
                    iteration: k,
                    eps_current: &current,
                    level_tol: opts.level_tol,
                    sigma_half_degree: opts.sigma_half_degree,
                    sdp_feas_tol: opts.sdp_feas_tol,
                };
                match min_epsilon(&ctx) {
                    Some(e) => Step { eps: e, law: None, stuck: false },
                    None => match hook.and_then(|h| h.rescue(&ctx)) {
                        Some((law, e)) => Step { eps: e, law: Some(law), stuck: false },
                        None => Step { eps: current[i], law: None, stuck: true },
                    },
                }
            })
            .collect();

        if k == 0 {
            if let Some(i) = steps.iter().position(|s| s.stuck) {
                status[i] = SubsystemStatus::Infeasible;
                outcome = Outcome::NotCertified;
                break;
            }
        }

        let mut next = vec![0.0; n];
        let mut improvement = 0.0f64;
        for (i, step) in steps.into_iter().enumerate() {
            let eps = if step.eps < opts.level_tol { 0.0 } else { step.eps };
            next[i] = eps;
            if !frozen[i] {
                improvement = improvement.max(current[i] - eps);
                if eps == 0.0 {
                    frozen[i] = true;
                    status[i] = SubsystemStatus::Converged;
                } else if step.stuck {
                    status[i] = SubsystemStatus::Converged;
                }
            }
            if let Some(law) = step.law {
                events.push(ControlEvent { subsystem: i, iteration: k, law });
            }
        }
        rows.push(next);
        k += 1;
        if improvement < opts.eps_bar {
            let last = rows.last().unwrap();
            outcome = if last.iter().all(|&e| e == 0.0) {
                Outcome::AsymptoticallyStable
            } else {
                Outcome::LyapunovStableOnly
            };
            break;
        }
    }

    let limits = rows.last().unwrap().clone();
    for (i, st) in status.iter_mut().enumerate() {
        if *st == SubsystemStatus::Active && limits[i] == 0.0 {
            *st = SubsystemStatus::Converged;
        }
    }
    let state = LevelState { epsilon: rows, status, iteration: k };
    let verdict = Verdict { outcome, limits, control_events: events, hit_iteration_cap: hit_cap };
    Ok((verdict, state))
}

/// Writes the level table: one row per iteration, one column per subsystem,
/// four decimals, `*` marking the level at which a control law was engaged.
pub fn write_epsilon_table(
    w: &mut impl Write,
    state: &LevelState,
    events: &[ControlEvent],
) -> io::Result<()> {
    let n = state.epsilon.first().map_or(0, Vec::len);
    write!(w, "{:>4}", "k")?;
    for i in 0..n {
        write!(w, " {:>8}", format!("S{}", i + 1))?;
    }
    writeln!(w)?;
    for (k, row) in state.epsilon.iter().enumerate() {
        write!(w, "{k:>4}")?;
        for (i, eps) in row.iter().enumerate() {
            let starred = events.iter().any(|ev| ev.iteration == k && ev.subsystem == i);
            let cell = format!("{:.4}{}", eps, if starred { "*" } else { "" });
            write!(w, " {cell:>8}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{decompose_node_overlap, PolySystem};
    use crate::poly::{Polynomial, VarSpace};
    use crate::roa::RoaEstimate;
    use std::sync::Arc;

    fn toy_coupled(c: f64) -> (InterconnectedSystem, Vec<RoaEstimate>) {
        let sp = VarSpace::shared(["x1", "x2"]);
        let f = vec![
            Polynomial::parse(&format!("-1*x1 + {c}*x2"), &sp).unwrap(),
            Polynomial::parse(&format!("-1*x2 + {c}*x1"), &sp).unwrap(),
        ];
        let sys = PolySystem::new(&sp, f, vec![]).unwrap();
        let dec = decompose_node_overlap(&sys, &[vec![0], vec![1]], &[]).unwrap();
        let estimates = (0..2)
            .map(|i| RoaEstimate {
                subsystem: i,
                v: Polynomial::parse(&format!("1*x{}^2", i + 1), &sp).unwrap(),
                gamma_max: 1.0,
                beta_history: vec![1.0],
                shape: Polynomial::parse(&format!("1*x{}^2", i + 1), &sp).unwrap(),
                globally_pd: true,
            })
            .collect();
        (dec, estimates)
    }

    fn run(c: f64) -> (Verdict, LevelState) {
        let (sys, est) = toy_coupled(c);
        run_certification(&sys, &est, &[1.0, 1.0], &CertifyOptions::default(), None).unwrap()
    }

    #[test]
    fn decoupled_certifies_in_one_round() {
        let (verdict, state) = run(0.0);
        assert_eq!(verdict.outcome, Outcome::AsymptoticallyStable);
        assert_eq!(state.epsilon.len(), 2);
        assert_eq!(state.epsilon[1], vec![0.0, 0.0]);
        assert!(verdict.control_events.is_empty());
    }

    #[test]
    fn weak_coupling_certifies() {
        let (verdict, state) = run(0.1);
        assert_eq!(verdict.outcome, Outcome::AsymptoticallyStable);
        for col in 0..2 {
            for w in state.epsilon.windows(2) {
                assert!(w[1][col] <= w[0][col] + 1e-12);
            }
        }
        assert!(verdict.limits.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn destabilizing_coupling_is_not_certified() {
        // eigenvalues −1 ± 2: genuinely unstable, must abort at round 0
        let (verdict, state) = run(2.0);
        assert_eq!(verdict.outcome, Outcome::NotCertified);
        assert!(state.status.contains(&SubsystemStatus::Infeasible));
    }

    #[test]
    fn ring_feasibility_threshold_matches_hand_analysis() {
        // V̇₀ = −2x₁² + 0.2x₁x₂ on {x₁² ≥ ε', x₂² ≤ 1} is negative exactly
        // when ε' > 0.01: the coupling dominates below that level.
        let (sys, est) = toy_coupled(0.1);
        let vs: Vec<_> = est.iter().map(|e| e.v.clone()).collect();
        let pd = vec![true, true];
        let eps = vec![1.0, 1.0];
        let ctx = RingContext {
            system: &sys,
            lyapunov: &vs,
            globally_pd: &pd,
            subsystem: 0,
            iteration: 0,
            eps_current: &eps,
            level_tol: 1e-4,
            sigma_half_degree: 1,
            sdp_feas_tol: 1e-8,
        };
        assert!(ring_feasible(&ctx, 1.0, None)); // degenerate slice at the top
        assert!(ring_feasible(&ctx, 0.05, None));
        assert!(!ring_feasible(&ctx, 0.002, None));
        let e = min_epsilon(&ctx).unwrap();
        assert!(e > 0.009 && e < 0.02, "ε' = {e}");
    }

    #[test]
    fn same_inputs_same_table() {
        let render = || {
            let (verdict, state) = run(0.1);
            let mut buf = Vec::new();
            write_epsilon_table(&mut buf, &state, &verdict.control_events).unwrap();
            String::from_utf8(buf).unwrap()
        };
        let a = render();
        assert_eq!(a, render());
        assert!(a.contains("0.0000"));
        assert!(a.starts_with("   k       S1       S2"));
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let (sys, est) = toy_coupled(0.1);
        let err = run_certification(&sys, &est, &[1.0], &CertifyOptions::default(), None).unwrap_err();
        assert!(matches!(err, CertifyError::BadInput(_)));
        let err =
            run_certification(&sys, &est, &[1.0, 1.5], &CertifyOptions::default(), None).unwrap_err();
        assert!(matches!(err, CertifyError::BadInput(_)));
    }
}
