//! Per-subsystem region-of-attraction machinery: initial Lyapunov search on a
//! shape region, certified negativity levels, set-containment level
//! maximization, and the expanding-interior alternation. All certificates are
//! for the *isolated* subsystem dynamics (interactions enter later through
//! the ring conditions).
//!
//! Every condition is a Putinar-style SOS constraint over the subsystem's
//! variables with free multipliers on the local equality constraints and SOS
//! multipliers on the level/shape inequalities; positivity margins use the
//! fixed polynomial φ = 1e-4·Σz².

use crate::model::Subsystem;
use crate::poly::{Monomial, PolyError, Polynomial, VarId, VarSpace};
use crate::sdp::{bisect_max, SolverOptions};
use crate::sos::{SosExpr, SosProgram};
use rand::Rng;
use std::io::{self, Write};
use std::sync::Arc;
use thiserror::Error;

/// Margin coefficient for the positivity/negativity conditions.
pub const PHI_EPS: f64 = 1e-4;
/// Relative tolerance for all level bisections.
pub const LEVEL_TOL: f64 = 1e-4;
/// Levels are never expanded past this; a search that reaches it is treated
/// as effectively unbounded (global certificate).
pub const LEVEL_CAP: f64 = 1e9;
/// Default shape-region level for the initial Lyapunov search.
pub const DEFAULT_BETA: f64 = 0.1;
pub const DEFAULT_MAX_ITERS: usize = 30;

#[derive(Debug, Error)]
pub enum RoaError {
    #[error("SOS condition infeasible: {0}")]
    Infeasible(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("subsystem not usable here: {0}")]
    BadSubsystem(String),
    #[error("certificate file malformed: {0}")]
    Format(String),
    #[error(transparent)]
    Poly(#[from] PolyError),
}

#[derive(Debug, Clone)]
pub struct LyapunovCandidate {
    pub subsystem: usize,
    pub v: Polynomial,
    pub degree: u32,
    /// Whether V − φ is certified SOS on the whole local manifold (not just
    /// the shape region it was searched on).
    pub globally_pd: bool,
}

#[derive(Debug, Clone)]
pub struct RoaEstimate {
    pub subsystem: usize,
    /// Scaled so the certified region is {v ≤ 1}.
    pub v: Polynomial,
    /// Certified negativity level of the unscaled initial candidate.
    pub gamma_max: f64,
    /// Shape levels reached by the expanding-interior iterations.
    pub beta_history: Vec<f64>,
    pub shape: Polynomial,
    pub globally_pd: bool,
}

/// Σ z² over the given variables.
pub fn default_shape(space: &Arc<VarSpace>, vars: &[VarId]) -> Polynomial {
    vars.iter().fold(Polynomial::zero(space), |acc, &v| {
        let z = Polynomial::var(space, v);
        acc + &z * &z
    })
}

fn phi(space: &Arc<VarSpace>, vars: &[VarId]) -> Polynomial {
    default_shape(space, vars) * PHI_EPS
}

fn feasibility_opts() -> SolverOptions {
    SolverOptions { stop_when_feasible: true, ..SolverOptions::default() }
}

/// Monomials of degree 1..=degree over the variables (no constant, so any
/// combination vanishes at the origin).
fn value_basis(space: &Arc<VarSpace>, vars: &[VarId], degree: u32) -> Vec<Monomial> {
    Polynomial::monomial_basis(space, vars, degree)
        .into_iter()
        .filter(|m| m.degree() > 0)
        .collect()
}

fn multiplier_basis(space: &Arc<VarSpace>, vars: &[VarId]) -> Vec<Monomial> {
    Polynomial::monomial_basis(space, vars, 2)
}

/// Adds `−Σ λ_k·g_k` with fresh free multipliers of degree ≤ 2.
fn add_equality_multipliers(prog: &mut SosProgram, expr: &mut SosExpr, sub: &Subsystem) {
    let space = sub.f[0].space().clone();
    for g in &sub.g {
        let lam = prog.new_free_poly(multiplier_basis(&space, &sub.vars));
        expr.add_unknown(lam, &-g.clone());
    }
}

/// ∇v·F over the subsystem's own rows (v fixed).
fn lie_derivative(v: &Polynomial, sub: &Subsystem) -> Polynomial {
    let space = v.space().clone();
    let mut lie = Polynomial::zero(&space);
    for (k, &var) in sub.vars.iter().enumerate() {
        let dv = v.diff(var);
        if !dv.is_zero() {
            lie = lie + &dv * &sub.f[k];
        }
    }
    lie
}

/// Searches a Lyapunov candidate for the isolated dynamics that is positive
/// definite and decreasing on the shape region {shape ≤ beta} of the local
/// manifold.
pub fn initial_lyapunov(
    sub: &Subsystem,
    degree: u32,
    shape: &Polynomial,
    beta: f64,
) -> Result<LyapunovCandidate, RoaError> {
    if degree == 0 || degree % 2 == 1 {
        return Err(RoaError::Degenerate(format!("Lyapunov degree must be even and positive, got {degree}")));
    }
    let space = sub.f[0].space().clone();
    let margin = phi(&space, &sub.vars);
    let shape_minus_beta = shape - &Polynomial::constant(&space, beta);

    let mut prog = SosProgram::new(&space);
    let v = prog.new_free_poly(value_basis(&space, &sub.vars, degree));

    // V − s₁(β − shape) − Σλ·g − φ ∈ Σ
    let mut pd = SosExpr::new();
    pd.add_unknown(v, &Polynomial::constant(&space, 1.0));
    let s1 = prog.new_sos_poly(&sub.vars, 1);
    pd.add_unknown(s1, &shape_minus_beta);
    add_equality_multipliers(&mut prog, &mut pd, sub);
    pd.add_poly(&-margin.clone());
    prog.add_sos(pd);

    // −∇V·F − s₂(β − shape) − Σλ·g − φ ∈ Σ
    let mut neg = SosExpr::new();
    for (k, &var) in sub.vars.iter().enumerate() {
        if !sub.f[k].is_zero() {
            neg.add_unknown_diff(v, var, &-sub.f[k].clone());
        }
    }
    let s2 = prog.new_sos_poly(&sub.vars, 1);
    neg.add_unknown(s2, &shape_minus_beta);
    add_equality_multipliers(&mut prog, &mut neg, sub);
    neg.add_poly(&-margin);
    prog.add_sos(neg);

    let res = prog.solve(&feasibility_opts());
    if !res.feasible {
        return Err(RoaError::Infeasible(format!(
            "no degree-{degree} Lyapunov candidate on the shape region (subsystem {})",
            sub.index
        )));
    }
    let vp = res.poly(v).clone();
    if vp.is_zero() {
        return Err(RoaError::Degenerate("search returned the zero polynomial".into()));
    }
    let globally_pd = manifold_positive_definite(&vp, sub);
    Ok(LyapunovCandidate { subsystem: sub.index, v: vp, degree, globally_pd })
}

/// Certifies V − φ ∈ Σ modulo the local equality constraints (positive
/// definiteness on the whole local manifold, no shape restriction).
pub fn manifold_positive_definite(v: &Polynomial, sub: &Subsystem) -> bool {
    let space = v.space().clone();
    let mut prog = SosProgram::new(&space);
    let mut expr = SosExpr::from_poly(&(v - &phi(&space, &sub.vars)));
    add_equality_multipliers(&mut prog, &mut expr, sub);
    prog.add_sos(expr);
    prog.solve(&feasibility_opts()).feasible
}

/// Expands a level by doubling while `check` holds, then bisects. Returns a
/// verified level; `Ok(LEVEL_CAP)` means the doubling never hit a failure.
fn maximize_level(mut check: impl FnMut(f64) -> bool, what: &str) -> Result<f64, RoaError> {
    let mut lo = 1e-6;
    if !check(lo) {
        return Err(RoaError::Infeasible(format!("{what} fails already at level {lo:.1e}")));
    }
    let mut hi = 1.0;
    loop {
        if hi >= LEVEL_CAP {
            return Ok(lo.max(hi / 2.0));
        }
        if check(hi) {
            lo = hi;
            hi *= 2.0;
        } else {
            break;
        }
    }
    Ok(bisect_max(check, lo, hi, LEVEL_TOL).expect("lo was verified"))
}

/// Largest γ (bisection, relative tol 1e-4) with
/// −∇V·F − s(γ−V) − Σλ·g − φ ∈ Σ: V̇ is certified strictly negative on
/// {V ≤ γ} ∩ manifold, away from the origin.
pub fn negativity_level(v: &Polynomial, sub: &Subsystem) -> Result<f64, RoaError> {
    if v.is_zero() {
        return Err(RoaError::Degenerate("zero Lyapunov candidate".into()));
    }
    let space = v.space().clone();
    let lie = lie_derivative(v, sub);
    let margin = phi(&space, &sub.vars);
    let check = |gamma: f64| -> bool {
        let mut prog = SosProgram::new(&space);
        let mut expr = SosExpr::from_poly(&(-&lie - &margin));
        let s = prog.new_sos_poly(&sub.vars, 1);
        expr.add_unknown(s, &(v - &Polynomial::constant(&space, gamma)));
        add_equality_multipliers(&mut prog, &mut expr, sub);
        prog.add_sos(expr);
        prog.solve(&feasibility_opts()).feasible
    };
    maximize_level(check, "negativity condition")
}

/// Largest γ with {V ≤ γ} ∩ manifold ⊆ {d ≥ 0 for every d in domain},
/// certified via d − s(γ−V) − Σλ·g ∈ Σ for each inequality.
pub fn gamma_max(v: &Polynomial, sub: &Subsystem, domain: &[Polynomial]) -> Result<f64, RoaError> {
    if v.is_zero() {
        return Err(RoaError::Degenerate("zero Lyapunov candidate".into()));
    }
    if domain.is_empty() {
        return Err(RoaError::Degenerate("empty containment domain".into()));
    }
    let space = v.space().clone();
    let check = |gamma: f64| -> bool {
        let mut prog = SosProgram::new(&space);
        for d in domain {
            let mut expr = SosExpr::from_poly(d);
            let s = prog.new_sos_poly(&sub.vars, 1);
            expr.add_unknown(s, &(v - &Polynomial::constant(&space, gamma)));
            add_equality_multipliers(&mut prog, &mut expr, sub);
            prog.add_sos(expr);
        }
        prog.solve(&feasibility_opts()).feasible
    };
    maximize_level(check, "containment condition")
}

/// One containment solve at a fixed level: (1−V) − s(β−shape) − Σλ·g ∈ Σ.
/// Returns the multiplier s on success.
fn containment_multiplier(
    v: &Polynomial,
    sub: &Subsystem,
    shape: &Polynomial,
    beta: f64,
) -> Option<Polynomial> {
    let space = v.space().clone();
    let mut prog = SosProgram::new(&space);
    let mut expr = SosExpr::from_poly(&(Polynomial::constant(&space, 1.0) - v));
    let s = prog.new_sos_poly(&sub.vars, 1);
    expr.add_unknown(s, &(shape - &Polynomial::constant(&space, beta)));
    add_equality_multipliers(&mut prog, &mut expr, sub);
    prog.add_sos(expr);
    let res = prog.solve(&feasibility_opts());
    res.feasible.then(|| res.poly(s).clone())
}

/// Negativity multiplier at level 1 for a fixed V.
fn negativity_multiplier(v: &Polynomial, sub: &Subsystem) -> Option<Polynomial> {
    let space = v.space().clone();
    let mut prog = SosProgram::new(&space);
    let lie = lie_derivative(v, sub);
    let mut expr = SosExpr::from_poly(&(-&lie - &phi(&space, &sub.vars)));
    let s = prog.new_sos_poly(&sub.vars, 1);
    expr.add_unknown(s, &(v - &Polynomial::constant(&space, 1.0)));
    add_equality_multipliers(&mut prog, &mut expr, sub);
    prog.add_sos(expr);
    let res = prog.solve(&feasibility_opts());
    res.feasible.then(|| res.poly(s).clone())
}

/// Fixed-multiplier re-search of V: positive definite on the manifold,
/// {shape ≤ β} ⊆ {V ≤ 1} through s6, and V̇ < 0 on {V ≤ 1} through s2.
fn v_step(
    sub: &Subsystem,
    degree: u32,
    shape: &Polynomial,
    beta: f64,
    s2: &Polynomial,
    s6: &Polynomial,
) -> Option<Polynomial> {
    let space = sub.f[0].space().clone();
    let margin = phi(&space, &sub.vars);
    let one = Polynomial::constant(&space, 1.0);
    let mut prog = SosProgram::new(&space);
    let v = prog.new_free_poly(value_basis(&space, &sub.vars, degree));

    // V − Σλ·g − φ ∈ Σ
    let mut pd = SosExpr::new();
    pd.add_unknown(v, &one);
    add_equality_multipliers(&mut prog, &mut pd, sub);
    pd.add_poly(&-margin.clone());
    prog.add_sos(pd);

    // (1 − V) − s6(β − shape) − Σλ·g ∈ Σ
    let mut contain = SosExpr::new();
    contain.add_poly(&(&one - &(s6 * &(Polynomial::constant(&space, beta) - shape))));
    contain.add_unknown(v, &-one.clone());
    add_equality_multipliers(&mut prog, &mut contain, sub);
    prog.add_sos(contain);

    // −∇V·F − s2(1 − V) − Σλ·g − φ ∈ Σ
    let mut neg = SosExpr::new();
    for (k, &var) in sub.vars.iter().enumerate() {
        if !sub.f[k].is_zero() {
            neg.add_unknown_diff(v, var, &-sub.f[k].clone());
        }
    }
    neg.add_poly(&(-s2 - &margin));
    neg.add_unknown(v, s2);
    add_equality_multipliers(&mut prog, &mut neg, sub);
    prog.add_sos(neg);

    let res = prog.solve(&feasibility_opts());
    res.feasible.then(|| res.poly(v).clone()).filter(|p| !p.is_zero())
}

/// Expanding-interior alternation: scale the initial candidate to its
/// certified negativity level, then alternate (a) maximizing the shape level
/// β with {shape ≤ β} ⊆ {V ≤ 1} against fixed V and (b) re-searching V
/// against the fixed multipliers. β never shrinks; iteration stops when its
/// gain drops below 1e-4 (relative), the V-step stalls, or `max_iters`.
pub fn expand_interior(
    sub: &Subsystem,
    initial: &LyapunovCandidate,
    shape: &Polynomial,
    max_iters: usize,
) -> Result<RoaEstimate, RoaError> {
    let gamma0 = negativity_level(&initial.v, sub)?;
    let mut v = &initial.v * (1.0 / gamma0);
    let mut globally_pd = initial.globally_pd;
    let mut history: Vec<f64> = Vec::new();

    for _ in 0..max_iters.max(1) {
        let lo = history.last().copied().unwrap_or(0.0);
        let check = |beta: f64| containment_multiplier(&v, sub, shape, beta).is_some();
        let beta = if lo > 0.0 {
            // previous level transfers to the re-searched V by construction
            let mut hi = lo.max(1e-6) * 2.0;
            let mut lo = lo;
            while hi < LEVEL_CAP && check(hi) {
                lo = hi;
                hi *= 2.0;
            }
            if hi >= LEVEL_CAP {
                lo
            } else {
                bisect_max(check, lo, hi, LEVEL_TOL)
                    .ok_or_else(|| RoaError::Infeasible("containment lost its certified level".into()))?
            }
        } else {
            maximize_level(check, "shape containment")?
        };
        let improved = beta - lo > LEVEL_TOL * beta.abs().max(1.0);
        history.push(beta.max(lo));
        if !improved && history.len() > 1 {
            break;
        }

        let (Some(s6), Some(s2)) = (containment_multiplier(&v, sub, shape, beta), negativity_multiplier(&v, sub))
        else {
            break;
        };
        match v_step(sub, initial.degree, shape, beta, &s2, &s6) {
            Some(next) => {
                v = next;
                globally_pd = true;
            }
            None => break,
        }
    }

    Ok(RoaEstimate {
        subsystem: sub.index,
        v,
        gamma_max: gamma0,
        beta_history: history,
        shape: shape.clone(),
        globally_pd,
    })
}

/// The whole per-subsystem pipeline with the default shape: find an initial
/// candidate (shrinking the starting shape level when the search is
/// infeasible — tightly coupled nodes need a smaller seed region), then run
/// the expanding-interior alternation.
pub fn estimate_subsystem(sub: &Subsystem, degree: u32, max_iters: usize) -> Result<RoaEstimate, RoaError> {
    let space = sub.f[0].space().clone();
    let shape = default_shape(&space, &sub.vars);
    let mut beta = DEFAULT_BETA;
    let initial = loop {
        match initial_lyapunov(sub, degree, &shape, beta) {
            Ok(c) => break c,
            Err(RoaError::Infeasible(_)) if beta > 1e-5 => beta *= 0.5,
            Err(e) => return Err(e),
        }
    };
    expand_interior(sub, &initial, &shape, max_iters)
}

// ---------------------------------------------------------------------------
// Manifold sampling

/// Draws points that satisfy a subsystem's circle constraints exactly (up to
/// roundoff) by sampling the angle parametrization, with the unconstrained
/// local variables drawn from a box.
#[derive(Debug, Clone)]
pub struct ManifoldSampler {
    space: Arc<VarSpace>,
    pairs: Vec<(VarId, VarId)>,
    free: Vec<VarId>,
}

impl ManifoldSampler {
    pub fn for_subsystem(sub: &Subsystem) -> Result<Self, RoaError> {
        let space = sub.f[0].space().clone();
        let mut pairs = Vec::new();
        for g in &sub.g {
            pairs.push(circle_pair(g).ok_or_else(|| {
                RoaError::BadSubsystem(format!("constraint {g} is not a recast circle"))
            })?);
        }
        let paired: Vec<VarId> = pairs.iter().flat_map(|&(s, t)| [s, t]).collect();
        let free = sub.vars.iter().copied().filter(|v| !paired.contains(v)).collect();
        Ok(ManifoldSampler { space, pairs, free })
    }

    pub fn space(&self) -> &Arc<VarSpace> {
        &self.space
    }

    /// Fills the local coordinates of a full-space point (other entries are
    /// left untouched); angles are uniform on ±angle_amp, free variables
    /// uniform on ±free_amp.
    pub fn sample_into(&self, rng: &mut impl Rng, angle_amp: f64, free_amp: f64, z: &mut [f64]) {
        for &(s, t) in &self.pairs {
            let d = rng.gen_range(-angle_amp..angle_amp);
            z[s as usize] = d.sin();
            z[t as usize] = 1.0 - d.cos();
        }
        for &v in &self.free {
            z[v as usize] = rng.gen_range(-free_amp..free_amp);
        }
    }

    pub fn sample(&self, rng: &mut impl Rng, angle_amp: f64, free_amp: f64) -> Vec<f64> {
        let mut z = vec![0.0; self.space.dim()];
        self.sample_into(rng, angle_amp, free_amp, &mut z);
        z
    }
}

/// Recognizes z_s² + z_t² − 2 z_t and returns (s, t).
pub(crate) fn circle_pair(g: &Polynomial) -> Option<(VarId, VarId)> {
    let mut squares = Vec::new();
    let mut linear = None;
    for (m, c) in g.terms() {
        match (m.degree(), m.vars().count()) {
            (2, 1) if (c - 1.0).abs() < 1e-9 => squares.push(m.vars().next().unwrap()),
            (1, 1) if (c + 2.0).abs() < 1e-9 => linear = Some(m.vars().next().unwrap()),
            _ => return None,
        }
    }
    let t = linear?;
    if squares.len() != 2 || !squares.contains(&t) {
        return None;
    }
    let s = squares.into_iter().find(|&v| v != t)?;
    Some((s, t))
}

// ---------------------------------------------------------------------------
// Certificate files and contour grids

pub fn write_certificate(w: &mut impl Write, est: &RoaEstimate) -> io::Result<()> {
    writeln!(w, "subsystem {}", est.subsystem)?;
    writeln!(w, "gamma_max {}", est.gamma_max)?;
    write!(w, "betas")?;
    for b in &est.beta_history {
        write!(w, " {b}")?;
    }
    writeln!(w)?;
    writeln!(w, "globally_pd {}", est.globally_pd)?;
    writeln!(w, "shape = {}", est.shape)?;
    writeln!(w, "V = {}", est.v)?;
    Ok(())
}

pub fn read_certificate(text: &str, space: &Arc<VarSpace>) -> Result<RoaEstimate, RoaError> {
    let mut subsystem = None;
    let mut gamma_max = None;
    let mut betas = Vec::new();
    let mut globally_pd = false;
    let mut shape = None;
    let mut v = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| RoaError::Format(format!("bad {what} line: `{line}`"));
        if let Some(rest) = line.strip_prefix("subsystem ") {
            subsystem = Some(rest.trim().parse::<usize>().map_err(|_| bad("subsystem"))?);
        } else if let Some(rest) = line.strip_prefix("gamma_max ") {
            gamma_max = Some(rest.trim().parse::<f64>().map_err(|_| bad("gamma_max"))?);
        } else if let Some(rest) = line.strip_prefix("betas") {
            betas = rest
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad("betas")))
                .collect::<Result<_, _>>()?;
        } else if let Some(rest) = line.strip_prefix("globally_pd ") {
            globally_pd = rest.trim().parse::<bool>().map_err(|_| bad("globally_pd"))?;
        } else if let Some(rest) = line.strip_prefix("shape = ") {
            shape = Some(Polynomial::parse(rest, space)?);
        } else if let Some(rest) = line.strip_prefix("V = ") {
            v = Some(Polynomial::parse(rest, space)?);
        } else {
            return Err(RoaError::Format(format!("unrecognized line `{line}`")));
        }
    }
    Ok(RoaEstimate {
        subsystem: subsystem.ok_or_else(|| RoaError::Format("missing subsystem".into()))?,
        v: v.ok_or_else(|| RoaError::Format("missing V".into()))?,
        gamma_max: gamma_max.ok_or_else(|| RoaError::Format("missing gamma_max".into()))?,
        beta_history: betas,
        shape: shape.ok_or_else(|| RoaError::Format("missing shape".into()))?,
        globally_pd,
    })
}

/// Samples V over an angle/speed window through the trig parametrization of
/// one circle pair (all other variables at zero — the ω_n = 0 projection).
/// Rows are (δ, speed, V).
pub fn contour_grid(
    v: &Polynomial,
    pair: (VarId, VarId),
    speed: Option<VarId>,
    delta_range: (f64, f64),
    speed_range: (f64, f64),
    steps: (usize, usize),
) -> Vec<(f64, f64, f64)> {
    let space = v.space();
    let (nd, ns) = (steps.0.max(2), if speed.is_some() { steps.1.max(2) } else { 1 });
    let mut out = Vec::with_capacity(nd * ns);
    for a in 0..nd {
        let d = delta_range.0 + (delta_range.1 - delta_range.0) * a as f64 / (nd - 1) as f64;
        for b in 0..ns {
            let w = if ns == 1 {
                0.0
            } else {
                speed_range.0 + (speed_range.1 - speed_range.0) * b as f64 / (ns - 1) as f64
            };
            let mut z = vec![0.0; space.dim()];
            z[pair.0 as usize] = d.sin();
            z[pair.1 as usize] = 1.0 - d.cos();
            if let Some(s) = speed {
                z[s as usize] = w;
            }
            out.push((d, w, v.evaluate(&z)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::power;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn scalar_subsystem(rhs: &str) -> Subsystem {
        let sp = VarSpace::shared(["z1"]);
        Subsystem {
            index: 0,
            vars: vec![0],
            f: vec![Polynomial::parse(rhs, &sp).unwrap()],
            g: vec![],
            h: BTreeMap::new(),
        }
    }

    #[test]
    fn stable_scalar_has_quadratic_certificate() {
        let sub = scalar_subsystem("-1*z1");
        let sp = sub.f[0].space().clone();
        let shape = default_shape(&sp, &sub.vars);
        let cand = initial_lyapunov(&sub, 2, &shape, DEFAULT_BETA).unwrap();
        let sq = Monomial::new(&[(0, 2)]);
        assert!(cand.v.coeff(&sq) > 0.0, "V = {}", cand.v);
        assert!(cand.globally_pd);
    }

    #[test]
    fn unstable_scalar_is_infeasible() {
        let sub = scalar_subsystem("1*z1");
        let sp = sub.f[0].space().clone();
        let shape = default_shape(&sp, &sub.vars);
        for degree in [2, 4] {
            let err = initial_lyapunov(&sub, degree, &shape, DEFAULT_BETA).unwrap_err();
            assert!(matches!(err, RoaError::Infeasible(_)), "{err}");
        }
    }

    #[test]
    fn gamma_max_matches_level_touching() {
        let sub = scalar_subsystem("-1*z1");
        let sp = sub.f[0].space().clone();
        let x2 = Polynomial::parse("1*z1^2", &sp).unwrap();
        let domain = vec![Polynomial::parse("1 - 1*z1^2", &sp).unwrap()];
        let g1 = gamma_max(&x2, &sub, &domain).unwrap();
        assert!((g1 - 1.0).abs() < 2e-4, "gamma {g1}");
        let g4 = gamma_max(&(&x2 * 4.0), &sub, &domain).unwrap();
        assert!((g4 - 4.0).abs() < 1e-3, "gamma {g4}");
    }

    #[test]
    fn negativity_level_finds_the_basin_edge() {
        // ż = −z + z³: V̇ < 0 exactly on z² < 1, i.e. {V < 1} for V = z²
        let sub = scalar_subsystem("-1*z1 + 1*z1^3");
        let sp = sub.f[0].space().clone();
        let v = Polynomial::parse("1*z1^2", &sp).unwrap();
        let g = negativity_level(&v, &sub).unwrap();
        assert!(g < 1.0 && g > 0.98, "level {g}");
    }

    #[test]
    fn expand_interior_stays_inside_true_basin() {
        let sub = scalar_subsystem("-1*z1 + 1*z1^3");
        let sp = sub.f[0].space().clone();
        let shape = default_shape(&sp, &sub.vars);
        let cand = initial_lyapunov(&sub, 2, &shape, DEFAULT_BETA).unwrap();
        let est = expand_interior(&sub, &cand, &shape, 10).unwrap();
        assert!(!est.beta_history.is_empty());
        for w in est.beta_history.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "history not monotone: {:?}", est.beta_history);
        }
        // {V ≤ 1} must stay inside |z| < 1 (the true basin)
        for i in 0..400 {
            let z = -2.0 + 4.0 * i as f64 / 399.0;
            if est.v.evaluate(&[z]) <= 1.0 {
                assert!(z.abs() < 1.0, "point {z} certified but outside the basin");
            }
        }
        // and the estimate should essentially fill it
        let last = *est.beta_history.last().unwrap();
        assert!(last > 0.5, "beta stalled at {last}");
    }

    #[test]
    fn globally_stable_linear_system_saturates() {
        let sub = scalar_subsystem("-1*z1");
        let sp = sub.f[0].space().clone();
        let shape = default_shape(&sp, &sub.vars);
        let cand = initial_lyapunov(&sub, 2, &shape, DEFAULT_BETA).unwrap();
        let est = expand_interior(&sub, &cand, &shape, 5).unwrap();
        assert!(est.gamma_max >= LEVEL_CAP / 2.0, "gamma {}", est.gamma_max);
        assert!(*est.beta_history.last().unwrap() > 1e6);
    }

    fn nine_bus_subsystems() -> (crate::model::InterconnectedSystem, power::RecastMap) {
        let net = power::PowerNetwork::from_toml_str(power::WSCC9_TOML).unwrap();
        let eq = power::solve_equilibrium(&net, None).unwrap();
        let rel = power::build_relative_system(&net, &eq).unwrap();
        let (sys, map) = power::recast(&rel).unwrap();
        let dec = power::decompose_network(&sys, &map).unwrap();
        (dec, map)
    }

    #[test]
    fn nine_bus_load_subsystem_full_pipeline() {
        let (dec, _) = nine_bus_subsystems();
        let sub = &dec.subsystems[0];
        let sp = sub.f[0].space().clone();
        let shape = default_shape(&sp, &sub.vars);
        let cand = initial_lyapunov(sub, 2, &shape, DEFAULT_BETA).unwrap();
        assert_eq!(cand.v.constant_term(), 0.0);

        let est = expand_interior(sub, &cand, &shape, 6).unwrap();
        assert!(est.gamma_max > 0.0);
        assert!(!est.beta_history.is_empty());

        // V positive and V̇ negative at manifold samples of {V ≤ 1}\{0}
        let sampler = ManifoldSampler::for_subsystem(sub).unwrap();
        let lie = lie_derivative(&est.v, sub);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut kept = 0;
        while kept < 500 {
            let z = sampler.sample(&mut rng, std::f64::consts::PI, 2.0);
            let val = est.v.evaluate(&z);
            let norm2: f64 = z.iter().map(|a| a * a).sum();
            if val > 1.0 || norm2 < 1e-8 {
                continue;
            }
            kept += 1;
            assert!(val > 0.0, "V not positive at {z:?}");
            assert!(lie.evaluate(&z) < 0.0, "V̇ not negative at {z:?}");
        }
    }

    #[test]
    fn sampler_respects_circle_constraints() {
        let (dec, _) = nine_bus_subsystems();
        let sub = &dec.subsystems[6]; // generator block: pair + own speed + reference
        let sampler = ManifoldSampler::for_subsystem(sub).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let z = sampler.sample(&mut rng, 3.0, 1.5);
            for g in &sub.g {
                assert!(g.evaluate(&z).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn certificate_file_round_trips() {
        let sp = VarSpace::shared(["z1", "z2"]);
        let est = RoaEstimate {
            subsystem: 3,
            v: Polynomial::parse("0.25*z1^2 + 1.5*z2^2 - 0.125*z1*z2", &sp).unwrap(),
            gamma_max: 0.8125,
            beta_history: vec![0.1, 0.25, 0.333],
            shape: Polynomial::parse("1*z1^2 + 1*z2^2", &sp).unwrap(),
            globally_pd: true,
        };
        let mut buf = Vec::new();
        write_certificate(&mut buf, &est).unwrap();
        let back = read_certificate(std::str::from_utf8(&buf).unwrap(), &sp).unwrap();
        assert_eq!(back.subsystem, 3);
        assert_eq!(back.gamma_max, 0.8125);
        assert_eq!(back.beta_history, est.beta_history);
        assert!(back.globally_pd);
        assert_eq!(back.v.coeff_distance(&est.v), 0.0);
        assert_eq!(back.shape.coeff_distance(&est.shape), 0.0);
    }

    #[test]
    fn contour_grid_shape() {
        let sp = VarSpace::shared(["z1", "z2", "w"]);
        let v = Polynomial::parse("1*z1^2 + 1*z2^2 + 0.5*w^2", &sp).unwrap();
        let grid = contour_grid(&v, (0, 1), Some(2), (-1.0, 1.0), (-2.0, 2.0), (5, 3));
        assert_eq!(grid.len(), 15);
        // δ = 0, ω = 0 row sits at the origin
        let mid = grid.iter().find(|(d, w, _)| *d == 0.0 && *w == 0.0).unwrap();
        assert_eq!(mid.2, 0.0);
    }
}
