//! Local stabilizing control synthesis. When a subsystem cannot push its
//! certified level down — the composite derivative fails to be negative on
//! the boundary slice V_i = ε_iᵏ — a linear state feedback on the
//! subsystem's physical input channel is synthesized jointly with the slice
//! multipliers, then the level search is rerun with the controlled
//! dynamics. The law is only meant to act inside its activation band
//! [ε_i^{k+1}, ε_iᵏ]; outside it the plant runs uncontrolled.
//!
//! Generators accept the input on their speed equation directly; loads
//! accept it on the angle equation, which the sine/cosine recast turns into
//! the two rows (1 − z_cos)·u and z_sin·u.

use crate::certify::{active_neighbors, min_epsilon_with, ring_parts, ControlHook, RingContext};
use crate::model::{InterconnectedSystem, Subsystem};
use crate::poly::{PolyError, Polynomial, VarId, VarSpace};
use crate::roa::circle_pair;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("subsystem has no input channel: {0}")]
    NoChannel(String),
    #[error("malformed control law text: {0}")]
    Format(String),
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// Where the scalar input u enters the subsystem dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlChannel {
    /// u added to the derivative of this variable (generator speed, or any
    /// plain state row).
    Direct(VarId),
    /// u added to the angle derivative behind a sine/cosine pair: the sine
    /// row gains (1 − z_cos)·u and the cosine row gains z_sin·u.
    AnglePair { sin: VarId, cos: VarId },
}

/// A synthesized feedback law: `u` is linear in the subsystem's variables
/// (shared reference included) with u(0) = 0, active while
/// band.0 ≤ V_i ≤ band.1.
#[derive(Debug, Clone)]
pub struct ControlLaw {
    pub subsystem: usize,
    pub iteration: usize,
    pub u: Polynomial,
    pub channel: ControlChannel,
    pub band: (f64, f64),
}

impl ControlLaw {
    pub fn is_zero(&self) -> bool {
        self.u.is_zero()
    }

    /// The additive dynamics rows this law induces, aligned with `sub.vars`.
    pub fn row_increments(&self, sub: &Subsystem) -> Vec<Polynomial> {
        let space = self.u.space();
        let mut rows = vec![Polynomial::zero(space); sub.vars.len()];
        let pos = |v: VarId| sub.vars.iter().position(|&w| w == v).expect("channel var in subsystem");
        match self.channel {
            ControlChannel::Direct(r) => rows[pos(r)] = self.u.clone(),
            ControlChannel::AnglePair { sin, cos } => {
                let one = Polynomial::constant(space, 1.0);
                let zs = Polynomial::parse(space.name(sin), space).expect("var name parses");
                let zt = Polynomial::parse(space.name(cos), space).expect("var name parses");
                rows[pos(sin)] = &(&one - &zt) * &self.u;
                rows[pos(cos)] = &zs * &self.u;
            }
        }
        rows
    }
}

/// Picks the physical input channel of a subsystem: the first locally owned
/// variable outside any recast pair (a generator's relative speed, or a
/// plain state) gets the input directly; otherwise the first recast pair
/// (a load's angle) takes it through the chain rule.
pub fn channel_for(sys: &InterconnectedSystem, i: usize) -> Result<ControlChannel, ControlError> {
    let sub = &sys.subsystems[i];
    let mut paired = Vec::new();
    for g in &sub.g {
        if let Some((s, t)) = circle_pair(g) {
            paired.push((s, t));
        }
    }
    let flat: Vec<VarId> = paired.iter().flat_map(|&(s, t)| [s, t]).collect();
    let own_direct = sub
        .vars
        .iter()
        .copied()
        .find(|v| !flat.contains(v) && !sys.overlap.contains_key(v));
    if let Some(r) = own_direct {
        return Ok(ControlChannel::Direct(r));
    }
    if let Some(&(s, t)) = paired.first() {
        return Ok(ControlChannel::AnglePair { sin: s, cos: t });
    }
    Err(ControlError::NoChannel(format!(
        "subsystem {i} owns no unpaired state and no recast pair"
    )))
}

/// The scalar input's effect on the composite derivative: −∇V_i applied to
/// the channel's row increments with u factored out.
fn input_gradient_coeff(v: &Polynomial, channel: ControlChannel) -> Polynomial {
    let space = v.space();
    match channel {
        ControlChannel::Direct(r) => -v.diff(r),
        ControlChannel::AnglePair { sin, cos } => {
            let one = Polynomial::constant(space, 1.0);
            let zs = Polynomial::parse(space.name(sin), space).expect("var name parses");
            let zt = Polynomial::parse(space.name(cos), space).expect("var name parses");
            -(&v.diff(sin) * &(&one - &zt)) - &(&v.diff(cos) * &zs)
        }
    }
}

/// Composite Lie derivative of V_i under the active neighborhood's dynamics.
fn composite_lie(ctx: &RingContext) -> Polynomial {
    let sub = &ctx.system.subsystems[ctx.subsystem];
    let neighbors = active_neighbors(ctx);
    let rows = crate::certify::ring_rows(ctx, &neighbors, None);
    let v = &ctx.lyapunov[ctx.subsystem];
    let mut lie = Polynomial::zero(v.space());
    for (k, &var) in sub.vars.iter().enumerate() {
        let dv = v.diff(var);
        if !dv.is_zero() && !rows[k].is_zero() {
            lie = lie + &dv * &rows[k];
        }
    }
    lie
}

fn slice_certificate_feasible(ctx: &RingContext) -> bool {
    let prog = ring_parts(ctx, ctx.eps_current[ctx.subsystem], None).close();
    prog.solve(&crate::certify::feasibility_opts(ctx.sdp_feas_tol)).feasible
}

/// Samples the slice V_i = ε_iᵏ inside the neighbors' sublevel sets, staying
/// exactly on the recast manifold, and hunts for a point with V̇_i ≥ 0.
/// Points come from scaling a random manifold ray until it hits the slice.
fn sampled_boundary_escape(ctx: &RingContext, samples: usize) -> bool {
    let i = ctx.subsystem;
    let sys = ctx.system;
    let eps = ctx.eps_current;
    let neighbors = active_neighbors(ctx);
    let mut pairs = Vec::new();
    let mut free = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for &j in &neighbors {
        let sub_j = &sys.subsystems[j];
        let mut flat = Vec::new();
        for g in &sub_j.g {
            if let Some((s, t)) = circle_pair(g) {
                if seen.insert(s) {
                    pairs.push((s, t));
                    seen.insert(t);
                    flat.extend([s, t]);
                }
            }
        }
        for &v in &sub_j.vars {
            if seen.insert(v) {
                free.push(v);
            }
        }
    }
    let vi = &ctx.lyapunov[i];
    let lie = composite_lie(ctx);
    let dim = vi.space().dim();
    let seed = 0x636f6e74u64 ^ ((i as u64) << 24) ^ (ctx.iteration as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut z = vec![0.0; dim];
    'outer: for _ in 0..samples {
        let thetas: Vec<f64> = pairs.iter().map(|_| rng.gen_range(-3.0..3.0)).collect();
        let amps: Vec<f64> = free.iter().map(|_| rng.gen_range(-3.0..3.0)).collect();
        let place = |alpha: f64, z: &mut [f64]| {
            for ((&(s, t), &th), _) in pairs.iter().zip(&thetas).zip(0..) {
                let a = alpha * th;
                z[s as usize] = a.sin();
                z[t as usize] = 1.0 - a.cos();
            }
            for (&v, &w) in free.iter().zip(&amps) {
                z[v as usize] = alpha * w;
            }
        };
        place(1.0, &mut z);
        if vi.evaluate(&z) < eps[i] {
            continue;
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            place(mid, &mut z);
            if vi.evaluate(&z) < eps[i] {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        place(hi, &mut z);
        for &j in &neighbors {
            if j != i && ctx.lyapunov[j].evaluate(&z) > eps[j] {
                continue 'outer;
            }
        }
        if lie.evaluate(&z) >= -1e-9 {
            return true;
        }
    }
    false
}

/// Whether subsystem `i` needs control at the current level: true when the
/// boundary-negativity certificate on the slice V_i = ε_iᵏ fails. A failed
/// certificate is cross-checked by slice sampling; a sampled escape point
/// is conclusive, an inconclusive search is still treated as needing
/// control (erring on the safe side).
pub fn needs_control(ctx: &RingContext) -> bool {
    if slice_certificate_feasible(ctx) {
        return false;
    }
    let _ = sampled_boundary_escape(ctx, 200);
    true
}

/// Joint law-and-multiplier search over the ring [ε', ε_iᵏ]: u enters the
/// channel rows as a free linear polynomial and is solved together with the
/// ring multipliers (V_i is fixed, so the program stays linear). Returns the
/// law in physical coordinates.
fn synthesize_at(ctx: &RingContext, channel: ControlChannel, eps_lower: f64) -> Option<Polynomial> {
    let i = ctx.subsystem;
    let space = ctx.lyapunov[i].space().clone();
    let mut ring = ring_parts(ctx, eps_lower, None);
    let sub = &ctx.system.subsystems[i];
    let basis: Vec<_> = Polynomial::monomial_basis(&space, &sub.vars, 1)
        .into_iter()
        .filter(|m| m.degree() == 1)
        .collect();
    let u = ring.prog.new_free_poly(basis);
    let coeff = ring.scaled(&input_gradient_coeff(&ctx.lyapunov[i], channel));
    ring.expr.add_unknown(u, &coeff);
    let inv: Vec<f64> = ring.scale.iter().map(|&d| 1.0 / d).collect();
    let res = ring.close().solve(&crate::certify::feasibility_opts(ctx.sdp_feas_tol));
    if !res.feasible {
        return None;
    }
    Some(res.poly(u).scale_vars(&inv))
}

/// Synthesizes a linear feedback making the slice V_i = ε_iᵏ flow inward.
/// With `try_zero` the uncontrolled slice certificate is attempted first and
/// a zero law returned when it already holds.
pub fn synthesize(ctx: &RingContext, try_zero: bool) -> Option<ControlLaw> {
    let i = ctx.subsystem;
    let channel = channel_for(ctx.system, i).ok()?;
    let space = ctx.lyapunov[i].space().clone();
    let zero_law = |space: &Arc<VarSpace>| ControlLaw {
        subsystem: i,
        iteration: ctx.iteration,
        u: Polynomial::zero(space),
        channel,
        band: (0.0, ctx.eps_current[i]),
    };
    if try_zero && slice_certificate_feasible(ctx) {
        return Some(zero_law(&space));
    }
    let u = synthesize_at(ctx, channel, ctx.eps_current[i])?;
    let mut law = zero_law(&space);
    law.u = u;
    Some(law)
}

/// The controlled level search: identical contract to the uncontrolled
/// minimum-ε search, with the law's rows added to the subsystem dynamics.
pub fn controlled_min_epsilon(ctx: &RingContext, law: &ControlLaw) -> Option<f64> {
    let rows = law.row_increments(&ctx.system.subsystems[ctx.subsystem]);
    min_epsilon_with(ctx, Some(&rows))
}

/// The rescue hook certification uses: bisect the lower ring level with the
/// law synthesized jointly at every probe, so the final law is certified on
/// exactly the band it reports. `None` only when not even the top slice
/// V_i = ε_iᵏ can be made to flow inward. A rescue that cannot move the
/// level still returns the top-slice law — the subsystem holds its level
/// under control while its neighbors shrink.
#[derive(Debug, Clone, Copy, Default)]
pub struct SosController;

impl ControlHook for SosController {
    fn rescue(&self, ctx: &RingContext) -> Option<(ControlLaw, f64)> {
        let i = ctx.subsystem;
        let channel = channel_for(ctx.system, i).ok()?;
        let top = ctx.eps_current[i];
        let mut witness: Option<(f64, Polynomial)> = None;
        let eps = crate::sdp::bisect(
            |e| match synthesize_at(ctx, channel, e) {
                Some(u) => {
                    witness = Some((e, u));
                    true
                }
                None => false,
            },
            0.0,
            top,
            crate::certify::search_tol(ctx, top),
        )?;
        let (level, u) = witness.expect("bisect returned a verified probe");
        debug_assert_eq!(level, eps);
        let law = ControlLaw { subsystem: i, iteration: ctx.iteration, u, channel, band: (eps, top) };
        Some((law, eps))
    }
}

// ---------------------------------------------------------------------------
// Law files

pub fn write_law(law: &ControlLaw) -> String {
    let mut s = String::new();
    writeln!(s, "subsystem {}", law.subsystem).unwrap();
    writeln!(s, "iteration {}", law.iteration).unwrap();
    writeln!(s, "band {} {}", law.band.0, law.band.1).unwrap();
    match law.channel {
        ControlChannel::Direct(r) => writeln!(s, "channel direct {}", law.u.space().name(r)).unwrap(),
        ControlChannel::AnglePair { sin, cos } => {
            let sp = law.u.space();
            writeln!(s, "channel pair {} {}", sp.name(sin), sp.name(cos)).unwrap()
        }
    }
    writeln!(s, "U = {}", law.u).unwrap();
    s
}

pub fn read_law(text: &str, space: &Arc<VarSpace>) -> Result<ControlLaw, ControlError> {
    let mut subsystem = None;
    let mut iteration = None;
    let mut band = None;
    let mut channel = None;
    let mut u = None;
    let var = |name: &str| {
        space
            .find(name)
            .ok_or_else(|| ControlError::Format(format!("unknown variable {name}")))
    };
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["subsystem", n] => subsystem = Some(n.parse().map_err(|_| ControlError::Format(line.into()))?),
            ["iteration", n] => iteration = Some(n.parse().map_err(|_| ControlError::Format(line.into()))?),
            ["band", a, b] => {
                let lo = a.parse().map_err(|_| ControlError::Format(line.into()))?;
                let hi = b.parse().map_err(|_| ControlError::Format(line.into()))?;
                band = Some((lo, hi));
            }
            ["channel", "direct", r] => channel = Some(ControlChannel::Direct(var(r)?)),
            ["channel", "pair", s, t] => {
                channel = Some(ControlChannel::AnglePair { sin: var(s)?, cos: var(t)? })
            }
            ["U", "=", ..] => {
                let rhs = line.splitn(2, '=').nth(1).unwrap().trim();
                u = Some(Polynomial::parse(rhs, space)?);
            }
            _ => return Err(ControlError::Format(line.into())),
        }
    }
    Ok(ControlLaw {
        subsystem: subsystem.ok_or_else(|| ControlError::Format("missing subsystem".into()))?,
        iteration: iteration.ok_or_else(|| ControlError::Format("missing iteration".into()))?,
        u: u.ok_or_else(|| ControlError::Format("missing U".into()))?,
        channel: channel.ok_or_else(|| ControlError::Format("missing channel".into()))?,
        band: band.ok_or_else(|| ControlError::Format("missing band".into()))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::{run_certification, CertifyOptions, Outcome};
    use crate::model::{decompose_node_overlap, PolySystem};
    use crate::roa::RoaEstimate;

    fn scalar_plant(rate: f64) -> (InterconnectedSystem, Vec<RoaEstimate>) {
        let sp = VarSpace::shared(["x"]);
        let f = vec![Polynomial::parse(&format!("{rate}*x"), &sp).unwrap()];
        let sys = PolySystem::new(&sp, f, vec![]).unwrap();
        let dec = decompose_node_overlap(&sys, &[vec![0]], &[]).unwrap();
        let est = vec![RoaEstimate {
            subsystem: 0,
            v: Polynomial::parse("1*x^2", &sp).unwrap(),
            gamma_max: 1.0,
            beta_history: vec![1.0],
            shape: Polynomial::parse("1*x^2", &sp).unwrap(),
            globally_pd: true,
        }];
        (dec, est)
    }

    fn ctx<'a>(
        sys: &'a InterconnectedSystem,
        vs: &'a [Polynomial],
        pd: &'a [bool],
        eps: &'a [f64],
    ) -> RingContext<'a> {
        RingContext {
            system: sys,
            lyapunov: vs,
            globally_pd: pd,
            subsystem: 0,
            iteration: 0,
            eps_current: eps,
            level_tol: 1e-4,
            sigma_half_degree: 1,
            sdp_feas_tol: 1e-8,
        }
    }

    #[test]
    fn unstable_scalar_is_flagged() {
        let (sys, est) = scalar_plant(1.0);
        let vs = vec![est[0].v.clone()];
        let pd = vec![true];
        let eps = vec![0.5];
        assert!(needs_control(&ctx(&sys, &vs, &pd, &eps)));
    }

    #[test]
    fn stable_scalar_is_not_flagged_and_gets_zero_law() {
        let (sys, est) = scalar_plant(-1.0);
        let vs = vec![est[0].v.clone()];
        let pd = vec![true];
        let eps = vec![0.5];
        let c = ctx(&sys, &vs, &pd, &eps);
        assert!(!needs_control(&c));
        let law = synthesize(&c, true).unwrap();
        assert!(law.is_zero());
    }

    #[test]
    fn synthesis_closes_the_loop_on_an_unstable_scalar() {
        let (sys, est) = scalar_plant(1.0);
        let vs = vec![est[0].v.clone()];
        let pd = vec![true];
        let eps = vec![0.5];
        let c = ctx(&sys, &vs, &pd, &eps);
        let law = synthesize(&c, true).unwrap();
        assert!(!law.is_zero());
        assert!(law.u.evaluate(&[0.0]).abs() < 1e-12);
        // closed loop ẋ = x + u must make V̇ = 2x(x + u) negative at the slice
        let rows = law.row_increments(&sys.subsystems[0]);
        let closed = &sys.subsystems[0].f[0] + &rows[0];
        for x in [-0.7071, 0.7071] {
            let xdot = closed.evaluate(&[x]);
            assert!(2.0 * x * xdot < 0.0, "V̇ = {} at x = {x}", 2.0 * x * xdot);
        }
        let eps_next = controlled_min_epsilon(&c, &law).unwrap();
        assert!(eps_next < 0.5);
    }

    #[test]
    fn hook_rescues_an_unstable_subsystem_to_a_certified_run() {
        let (sys, est) = scalar_plant(1.0);
        let hook = SosController;
        let (verdict, state) =
            run_certification(&sys, &est, &[0.5], &CertifyOptions::default(), Some(&hook)).unwrap();
        assert_ne!(verdict.outcome, Outcome::NotCertified);
        assert_eq!(verdict.control_events.len(), state.epsilon.len() - 1);
        let ev = &verdict.control_events[0];
        assert_eq!(ev.subsystem, 0);
        assert_eq!(ev.iteration, 0);
        assert!(ev.law.band.0 < ev.law.band.1);
        let mut table = Vec::new();
        crate::certify::write_epsilon_table(&mut table, &state, &verdict.control_events).unwrap();
        let table = String::from_utf8(table).unwrap();
        assert!(table.contains('*'), "control mark missing:\n{table}");
    }

    #[test]
    fn without_hook_the_unstable_plant_is_not_certified() {
        let (sys, est) = scalar_plant(1.0);
        let (verdict, _) =
            run_certification(&sys, &est, &[0.5], &CertifyOptions::default(), None).unwrap();
        assert_eq!(verdict.outcome, Outcome::NotCertified);
    }

    // Diagnostic for the nine-bus rescue path; run with --ignored --nocapture.
    #[test]
    #[ignore]
    fn diag_rescue_statuses() {
        use crate::power::{build_relative_system, decompose_network, recast, solve_equilibrium, PowerNetwork};
        use crate::roa::estimate_subsystem;
        use rayon::prelude::*;

        let net = PowerNetwork::load("../../data/wscc9.toml").unwrap();
        let eq = solve_equilibrium(&net, None).unwrap();
        let rel = build_relative_system(&net, &eq).unwrap();
        let (sys, map) = recast(&rel).unwrap();
        let dec = decompose_network(&sys, &map).unwrap();
        let n = dec.num_subsystems();
        let t0 = std::time::Instant::now();
        let ests: Vec<_> = dec
            .subsystems
            .par_iter()
            .map(|sub| estimate_subsystem(sub, 2, 16).unwrap())
            .collect();
        let _ = (&sys, &map);
        println!("estimates: {:.1?}", t0.elapsed());
        let vs: Vec<_> = ests.iter().map(|e| e.v.clone()).collect();
        let pd: Vec<_> = ests.iter().map(|e| e.globally_pd).collect();
        let gamma = [0.0004, 0.0036, 0.0038, 0.7469, 0.0042, 0.0219, 0.8378, 0.0018];

        for i in 0..n {
            let ctx = RingContext {
                system: &dec,
                lyapunov: &vs,
                globally_pd: &pd,
                subsystem: i,
                iteration: 0,
                eps_current: &gamma,
                level_tol: 1e-4,
                sigma_half_degree: 1,
                sdp_feas_tol: 1e-8,
            };
            let t = std::time::Instant::now();
            let channel = channel_for(ctx.system, i).unwrap();
            let space = vs[i].space().clone();
            let solve_at = |e: f64| {
                let mut ring = ring_parts(&ctx, e, None);
                let sub = &ctx.system.subsystems[i];
                let basis: Vec<_> = Polynomial::monomial_basis(&space, &sub.vars, 1)
                    .into_iter()
                    .filter(|m| m.degree() == 1)
                    .collect();
                let u = ring.prog.new_free_poly(basis);
                let coeff = ring.scaled(&input_gradient_coeff(&vs[i], channel));
                ring.expr.add_unknown(u, &coeff);
                let inv: Vec<f64> = ring.scale.iter().map(|&d| 1.0 / d).collect();
                let res = ring.close().solve(&crate::certify::feasibility_opts(ctx.sdp_feas_tol));
                let u = if res.feasible { Some(res.poly(u).scale_vars(&inv)) } else { None };
                (res, u)
            };
            let (res, u) = solve_at(gamma[i]);
            println!(
                "S{}: top synth {:?} iters {} viol {:.2e} ({:.2?})",
                i + 1,
                res.status,
                res.sdp.iterations,
                res.sdp.max_constraint_violation,
                t.elapsed()
            );
            if let Some(u) = u {
                println!("    u_top = {u}");
                let t = std::time::Instant::now();
                let rescue = SosController.rescue(&ctx);
                match rescue {
                    Some((law, e)) => {
                        println!("    rescue -> {e:.4} ({:.2?})", t.elapsed());
                        println!("    u = {}", law.u);
                    }
                    None => println!("    rescue -> None ({:.2?})", t.elapsed()),
                }
            }
        }
    }

    #[test]
    fn law_text_round_trips() {
        let sp = VarSpace::shared(["z1", "z2", "z3"]);
        let law = ControlLaw {
            subsystem: 6,
            iteration: 0,
            u: Polynomial::parse("-38.4*z3 + 0.25*z1", &sp).unwrap(),
            channel: ControlChannel::AnglePair { sin: sp.find("z1").unwrap(), cos: sp.find("z2").unwrap() },
            band: (0.4451, 0.6663),
        };
        let text = write_law(&law);
        let back = read_law(&text, &sp).unwrap();
        assert_eq!(back.subsystem, 6);
        assert_eq!(back.channel, law.channel);
        assert_eq!(back.band, law.band);
        assert_eq!(back.u, law.u);
    }

    #[test]
    fn pair_channel_chain_rules_the_input() {
        let sp = VarSpace::shared(["z1", "z2"]);
        let s = sp.find("z1").unwrap();
        let t = sp.find("z2").unwrap();
        // angle plant: ṡ = (1−t)r, ṫ = s·r with r = −s; circle constraint ties them
        let f = vec![
            Polynomial::parse("-1*z1 + 1*z1*z2", &sp).unwrap(),
            Polynomial::parse("-1*z1^2", &sp).unwrap(),
        ];
        let g = vec![Polynomial::parse("1*z1^2 + 1*z2^2 - 2*z2", &sp).unwrap()];
        let sys = PolySystem::new(&sp, f, g).unwrap();
        let dec = decompose_node_overlap(&sys, &[vec![0, 1]], &[]).unwrap();
        let ch = channel_for(&dec, 0).unwrap();
        assert_eq!(ch, ControlChannel::AnglePair { sin: s, cos: t });
        let law = ControlLaw {
            subsystem: 0,
            iteration: 0,
            u: Polynomial::parse("2*z1", &sp).unwrap(),
            channel: ch,
            band: (0.0, 1.0),
        };
        let rows = law.row_increments(&dec.subsystems[0]);
        assert_eq!(rows[0], Polynomial::parse("2*z1 - 2*z1*z2", &sp).unwrap());
        assert_eq!(rows[1], Polynomial::parse("2*z1^2", &sp).unwrap());
    }
}
