//! Sum-of-squares programming: compiles feasibility programs over unknown
//! polynomials — free-coefficient unknowns, SOS-constrained unknowns
//! (multipliers), and equality multipliers — into semidefinite programs, and
//! decodes solutions back into [`Polynomial`]s.
//!
//! An SOS constraint `e ∈ Σ` becomes a PSD Gram block `Q` over the monomial
//! basis `B` of half the expression degree, restricted to variables actually
//! present, plus one linear equality per monomial matching `bᵀQb` against the
//! expression. No Newton-polytope reduction is attempted; problems here are
//! desk scale.

use crate::poly::{Monomial, Polynomial, VarId, VarSpace};
use crate::sdp::{SdpProblem, SdpSolution, SdpStatus, SolverOptions};
use ndarray::Array2;
use ndarray_linalg::{Eigh, UPLO};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use thiserror::Error;

/// Coefficients below this are dropped from decoded polynomials so solver
/// noise does not inflate degrees across alternation iterations.
pub const DECODE_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum SosError {
    #[error("sum-of-squares check requires even degree, got {0}")]
    OddDegree(u32),
    #[error("unknown polynomial handle out of range")]
    BadHandle,
}

/// Handle to an unknown polynomial declared in a [`SosProgram`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct PolyVar(usize);

#[derive(Debug, Clone)]
struct Unknown {
    basis: Vec<Monomial>,
    sos: bool,
}

#[derive(Debug, Clone)]
enum ExprTerm {
    Known(Polynomial),
    /// coeff · U or coeff · ∂U/∂z_wrt for an unknown U.
    Unknown { var: PolyVar, diff: Option<VarId>, coeff: Polynomial },
}

/// Polynomial-valued affine expression in the program unknowns.
#[derive(Debug, Clone)]
pub struct SosExpr {
    terms: Vec<ExprTerm>,
}

impl SosExpr {
    pub fn new() -> Self {
        SosExpr { terms: Vec::new() }
    }

    pub fn from_poly(p: &Polynomial) -> Self {
        let mut e = Self::new();
        e.add_poly(p);
        e
    }

    pub fn add_poly(&mut self, p: &Polynomial) -> &mut Self {
        if !p.is_zero() {
            self.terms.push(ExprTerm::Known(p.clone()));
        }
        self
    }

    /// Adds `coeff · unknown`.
    pub fn add_unknown(&mut self, var: PolyVar, coeff: &Polynomial) -> &mut Self {
        self.terms.push(ExprTerm::Unknown { var, diff: None, coeff: coeff.clone() });
        self
    }

    /// Adds `coeff · ∂unknown/∂z_wrt`; lets Lie derivatives of an unknown
    /// Lyapunov candidate appear in constraints.
    pub fn add_unknown_diff(&mut self, var: PolyVar, wrt: VarId, coeff: &Polynomial) -> &mut Self {
        self.terms.push(ExprTerm::Unknown { var, diff: Some(wrt), coeff: coeff.clone() });
        self
    }
}

impl Default for SosExpr {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    Sos,
    ZeroPoly,
}

// ---------------------------------------------------------------------------
// Linearized polynomials: monomial → affine function of decision variables

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum DecVar {
    Scalar(usize),
    /// Gram entry (block, i, j) with i ≤ j; its polynomial weight already
    /// includes the symmetric double-count.
    Gram(usize, usize, usize),
}

#[derive(Debug, Clone, Default)]
struct AffExpr {
    c: f64,
    lin: BTreeMap<DecVar, f64>,
}

impl AffExpr {
    fn add_var(&mut self, v: DecVar, w: f64) {
        *self.lin.entry(v).or_insert(0.0) += w;
    }
}

type LinPoly = BTreeMap<Monomial, AffExpr>;

fn lin_add_poly(lp: &mut LinPoly, p: &Polynomial, scale: f64) {
    for (m, c) in p.terms() {
        lp.entry(m.clone()).or_default().c += scale * c;
    }
}

// ---------------------------------------------------------------------------

/// A feasibility/optimization program with SOS and zero-polynomial
/// constraints over unknown polynomials.
#[derive(Debug, Clone)]
pub struct SosProgram {
    space: Arc<VarSpace>,
    unknowns: Vec<Unknown>,
    constraints: Vec<(SosExpr, ConstraintKind)>,
    // minimize Σ w · coeff(unknown, monomial)
    objective: Vec<(PolyVar, Monomial, f64)>,
}

impl SosProgram {
    pub fn new(space: &Arc<VarSpace>) -> Self {
        SosProgram {
            space: Arc::clone(space),
            unknowns: Vec::new(),
            constraints: Vec::new(),
            objective: Vec::new(),
        }
    }

    pub fn space(&self) -> &Arc<VarSpace> {
        &self.space
    }

    /// Declares an unknown polynomial with free coefficients over `basis`.
    pub fn new_free_poly(&mut self, basis: Vec<Monomial>) -> PolyVar {
        assert!(!basis.is_empty(), "unknown polynomial needs a basis");
        self.unknowns.push(Unknown { basis, sos: false });
        PolyVar(self.unknowns.len() - 1)
    }

    /// Declares an unknown SOS polynomial `bᵀQb` over the half-degree basis
    /// of monomials in `vars` up to `half_deg`.
    pub fn new_sos_poly(&mut self, vars: &[VarId], half_deg: u32) -> PolyVar {
        let basis = Polynomial::monomial_basis(&self.space, vars, half_deg);
        self.unknowns.push(Unknown { basis, sos: true });
        PolyVar(self.unknowns.len() - 1)
    }

    pub fn add_sos(&mut self, expr: SosExpr) {
        self.constraints.push((expr, ConstraintKind::Sos));
    }

    pub fn add_zero(&mut self, expr: SosExpr) {
        self.constraints.push((expr, ConstraintKind::ZeroPoly));
    }

    /// Adds `w · coeff(var, monomial)` to the minimized objective.
    pub fn minimize_coeff(&mut self, var: PolyVar, monomial: Monomial, w: f64) {
        self.objective.push((var, monomial, w));
    }

    /// Structural degree bound of an expression (coefficient cancellation is
    /// ignored, which can only enlarge the Gram basis).
    fn expr_degree(&self, expr: &SosExpr) -> u32 {
        expr.terms
            .iter()
            .map(|t| match t {
                ExprTerm::Known(p) => p.degree(),
                ExprTerm::Unknown { var, diff, coeff } => {
                    let bd = self.unknowns[var.0].basis.iter().map(Monomial::degree).max().unwrap_or(0);
                    let ud = if self.unknowns[var.0].sos { 2 * bd } else { bd };
                    coeff.degree() + ud.saturating_sub(diff.is_some() as u32)
                }
            })
            .max()
            .unwrap_or(0)
    }

    fn expr_vars(&self, expr: &SosExpr) -> BTreeSet<VarId> {
        let mut vars = BTreeSet::new();
        for t in &expr.terms {
            match t {
                ExprTerm::Known(p) => vars.extend(p.support()),
                ExprTerm::Unknown { var, coeff, .. } => {
                    vars.extend(coeff.support());
                    for m in &self.unknowns[var.0].basis {
                        vars.extend(m.vars());
                    }
                }
            }
        }
        vars
    }

    pub fn compile(&self) -> CompiledSos {
        // Decision variable layout: scalars for free-poly coefficients, one
        // Gram block per SOS unknown, then one per SOS constraint.
        let mut sdp = SdpProblem::new();
        let mut scalar_of: Vec<Option<usize>> = Vec::new(); // first scalar index per free unknown
        let mut block_of: Vec<Option<usize>> = Vec::new();
        for u in &self.unknowns {
            if u.sos {
                scalar_of.push(None);
                block_of.push(Some(sdp.add_block(u.basis.len())));
            } else {
                let first = (0..u.basis.len()).map(|_| sdp.add_scalar()).next().unwrap_or(0);
                for _ in 1..u.basis.len() {
                    sdp.add_scalar();
                }
                scalar_of.push(Some(first));
                block_of.push(None);
            }
        }

        // Linearized form of each unknown.
        let lin_unknown: Vec<LinPoly> = self
            .unknowns
            .iter()
            .enumerate()
            .map(|(k, u)| {
                let mut lp = LinPoly::new();
                if u.sos {
                    let b = block_of[k].unwrap();
                    for i in 0..u.basis.len() {
                        for j in i..u.basis.len() {
                            let mult = if i == j { 1.0 } else { 2.0 };
                            lp.entry(u.basis[i].mul(&u.basis[j]))
                                .or_default()
                                .add_var(DecVar::Gram(b, i, j), mult);
                        }
                    }
                } else {
                    let s0 = scalar_of[k].unwrap();
                    for (t, m) in u.basis.iter().enumerate() {
                        lp.entry(m.clone()).or_default().add_var(DecVar::Scalar(s0 + t), 1.0);
                    }
                }
                lp
            })
            .collect();

        let diff_lin = |lp: &LinPoly, wrt: VarId| -> LinPoly {
            let mut out = LinPoly::new();
            for (m, aff) in lp {
                let e = m.pow_of(wrt);
                if e == 0 {
                    continue;
                }
                let mut pairs: Vec<(VarId, u32)> = m.iter().collect();
                for p in pairs.iter_mut() {
                    if p.0 == wrt {
                        p.1 -= 1;
                    }
                }
                let dm = Monomial::new(&pairs);
                let dst = out.entry(dm).or_default();
                dst.c += aff.c * e as f64;
                for (&v, &w) in &aff.lin {
                    dst.add_var(v, w * e as f64);
                }
            }
            out
        };

        let mut cons_grams = Vec::new();
        for (expr, kind) in &self.constraints {
            // linearize the expression
            let mut lp = LinPoly::new();
            for t in &expr.terms {
                match t {
                    ExprTerm::Known(p) => lin_add_poly(&mut lp, p, 1.0),
                    ExprTerm::Unknown { var, diff, coeff } => {
                        assert!(var.0 < self.unknowns.len(), "undeclared unknown");
                        let base = match diff {
                            None => lin_unknown[var.0].clone(),
                            Some(w) => diff_lin(&lin_unknown[var.0], *w),
                        };
                        for (m, aff) in &base {
                            for (mc, cc) in coeff.terms() {
                                let dst = lp.entry(m.mul(mc)).or_default();
                                dst.c += aff.c * cc;
                                for (&v, &w) in &aff.lin {
                                    dst.add_var(v, w * cc);
                                }
                            }
                        }
                    }
                }
            }

            let gram = match kind {
                ConstraintKind::ZeroPoly => None,
                ConstraintKind::Sos => {
                    let deg = self.expr_degree(expr);
                    let vars: Vec<VarId> = self.expr_vars(expr).into_iter().collect();
                    let basis = Polynomial::monomial_basis(&self.space, &vars, deg.div_ceil(2));
                    let b = sdp.add_block(basis.len());
                    Some((b, basis))
                }
            };

            // one equality per monomial: gram part − expression = 0
            let mut rows: BTreeMap<Monomial, usize> = BTreeMap::new();
            if let Some((b, basis)) = &gram {
                let mut span: BTreeMap<Monomial, Vec<(usize, usize)>> = BTreeMap::new();
                for i in 0..basis.len() {
                    for j in i..basis.len() {
                        span.entry(basis[i].mul(&basis[j])).or_default().push((i, j));
                    }
                }
                for (m, pairs) in span {
                    let c = sdp.add_constraint(0.0);
                    rows.insert(m, c);
                    for (i, j) in pairs {
                        sdp.add_cons_entry(c, *b, i, j, 1.0);
                    }
                }
            }
            for (m, aff) in &lp {
                let c = *rows.entry(m.clone()).or_insert_with(|| sdp.add_constraint(0.0));
                // encode gramμ(Q) − Σ w·dv = constμ for SOS rows, and
                // −Σ w·dv = constμ for zero rows
                sdp.bump_rhs(c, aff.c);
                for (&v, &w) in &aff.lin {
                    match v {
                        DecVar::Scalar(s) => sdp.add_cons_scalar(c, s, -w),
                        DecVar::Gram(bb, i, j) => {
                            let mult = if i == j { 1.0 } else { 2.0 };
                            sdp.add_cons_entry(c, bb, i, j, -w / mult);
                        }
                    }
                }
            }
            cons_grams.push(gram);
        }

        for (var, mono, w) in &self.objective {
            let u = &self.unknowns[var.0];
            if u.sos {
                let b = block_of[var.0].unwrap();
                for i in 0..u.basis.len() {
                    for j in i..u.basis.len() {
                        if u.basis[i].mul(&u.basis[j]) == *mono {
                            sdp.add_obj_entry(b, i, j, *w);
                        }
                    }
                }
            } else {
                let s0 = scalar_of[var.0].unwrap();
                if let Some(t) = u.basis.iter().position(|m| m == mono) {
                    sdp.add_obj_scalar(s0 + t, *w);
                }
            }
        }

        CompiledSos {
            space: Arc::clone(&self.space),
            sdp,
            unknowns: self.unknowns.clone(),
            scalar_of,
            block_of,
            cons_grams,
        }
    }

    /// Compile and solve in one step.
    pub fn solve(&self, opts: &SolverOptions) -> SosResult {
        let compiled = self.compile();
        let sol = compiled.sdp.solve(opts);
        compiled.decode(sol)
    }
}

/// Compiled program: the SDP plus the map back to polynomials.
#[derive(Debug, Clone)]
pub struct CompiledSos {
    space: Arc<VarSpace>,
    pub sdp: SdpProblem,
    unknowns: Vec<Unknown>,
    scalar_of: Vec<Option<usize>>,
    block_of: Vec<Option<usize>>,
    cons_grams: Vec<Option<(usize, Vec<Monomial>)>>,
}

impl CompiledSos {
    pub fn decode(&self, sol: SdpSolution) -> SosResult {
        let feasible = sol.status == SdpStatus::Optimal;
        let mut unknowns = Vec::new();
        let mut grams = Vec::new();
        if feasible {
            for (k, u) in self.unknowns.iter().enumerate() {
                let p = if u.sos {
                    let q = &sol.block_values[self.block_of[k].unwrap()];
                    gram_to_poly(&self.space, &u.basis, q)
                } else {
                    let s0 = self.scalar_of[k].unwrap();
                    Polynomial::from_terms(
                        &self.space,
                        u.basis.iter().enumerate().map(|(t, m)| (m.clone(), sol.scalar_values[s0 + t])),
                    )
                };
                unknowns.push(p.normalized(DECODE_EPS));
            }
            for g in &self.cons_grams {
                grams.push(g.as_ref().map(|(b, basis)| ConstraintGram {
                    basis: basis.clone(),
                    q: sol.block_values[*b].clone(),
                }));
            }
        }
        SosResult { feasible, status: sol.status, unknowns, constraint_grams: grams, sdp: sol }
    }
}

/// Gram matrix attached to a solved SOS constraint.
#[derive(Debug, Clone)]
pub struct ConstraintGram {
    pub basis: Vec<Monomial>,
    pub q: Array2<f64>,
}

impl ConstraintGram {
    pub fn to_poly(&self, space: &Arc<VarSpace>) -> Polynomial {
        gram_to_poly(space, &self.basis, &self.q)
    }
}

#[derive(Debug, Clone)]
pub struct SosResult {
    pub feasible: bool,
    pub status: SdpStatus,
    /// Decoded unknowns in declaration order (empty unless feasible),
    /// coefficient-thresholded at [`DECODE_EPS`].
    pub unknowns: Vec<Polynomial>,
    /// Gram matrix per constraint (None for zero-polynomial constraints).
    pub constraint_grams: Vec<Option<ConstraintGram>>,
    pub sdp: SdpSolution,
}

impl SosResult {
    pub fn poly(&self, v: PolyVar) -> &Polynomial {
        &self.unknowns[v.0]
    }
}

fn gram_to_poly(space: &Arc<VarSpace>, basis: &[Monomial], q: &Array2<f64>) -> Polynomial {
    let mut terms: Vec<(Monomial, f64)> = Vec::new();
    for i in 0..basis.len() {
        for j in i..basis.len() {
            let mult = if i == j { 1.0 } else { 2.0 };
            terms.push((basis[i].mul(&basis[j]), mult * q[(i, j)]));
        }
    }
    Polynomial::from_terms(space, terms)
}

// ---------------------------------------------------------------------------
// Direct SOS membership check

#[derive(Debug, Clone)]
pub enum SosCheck {
    /// The polynomial is a certified sum of squares of the returned factors.
    Sos(Vec<Polynomial>),
    NotSos,
}

impl SosCheck {
    pub fn is_sos(&self) -> bool {
        matches!(self, SosCheck::Sos(_))
    }
}

/// Decides SOS membership; on success returns factors `H_i` with
/// `‖p − Σ H_i²‖∞ ≤ 1e-6 · ‖p‖∞` (coefficient norms). Non-optimal solver
/// terminations are treated conservatively as "not SOS".
pub fn check_sos(p: &Polynomial) -> Result<SosCheck, SosError> {
    if p.degree() % 2 == 1 {
        return Err(SosError::OddDegree(p.degree()));
    }
    if p.is_zero() {
        return Ok(SosCheck::Sos(Vec::new()));
    }
    let scale = p.max_abs_coeff();
    let ps = p.scale(1.0 / scale);
    let space = p.space();

    let vars: Vec<VarId> = ps.support().into_iter().collect();
    let basis = Polynomial::monomial_basis(space, &vars, ps.degree().div_ceil(2));

    let mut sdp = SdpProblem::new();
    let b = sdp.add_block(basis.len());
    let mut span: BTreeMap<Monomial, Vec<(usize, usize)>> = BTreeMap::new();
    for i in 0..basis.len() {
        for j in i..basis.len() {
            span.entry(basis[i].mul(&basis[j])).or_default().push((i, j));
        }
    }
    // coefficients outside the span would be unmatched; the basis covers all
    // monomials up to degree 2·⌈deg/2⌉ over the support, so this is total
    for (m, c) in ps.terms() {
        debug_assert!(span.contains_key(m), "support outside Gram span");
        let _ = (m, c);
    }
    for (m, pairs) in &span {
        let c = sdp.add_constraint(ps.coeff(m));
        for &(i, j) in pairs {
            sdp.add_cons_entry(c, b, i, j, 1.0);
        }
    }
    let opts = SolverOptions { stop_when_feasible: true, ..SolverOptions::default() };
    let sol = sdp.solve(&opts);
    if sol.status != SdpStatus::Optimal {
        return Ok(SosCheck::NotSos);
    }

    let q = &sol.block_values[0];
    let (mut evals, evecs) = q.eigh(UPLO::Lower).expect("gram eigendecomposition");
    evals.mapv_inplace(|v| v.max(0.0));
    let mut factors = Vec::new();
    for k in 0..evals.len() {
        let lam = evals[k] * scale;
        if lam <= 1e-12 * scale {
            continue;
        }
        let w = lam.sqrt();
        let h = Polynomial::from_terms(
            space,
            basis.iter().enumerate().map(|(i, m)| (m.clone(), w * evecs[(i, k)])),
        );
        factors.push(h.normalized(1e-12));
    }
    // verify the reconstruction before vouching for it
    let mut recon = Polynomial::zero(space);
    for h in &factors {
        recon = &recon + &(h * h);
    }
    if recon.coeff_distance(p) > 1e-6 * scale.max(1.0) {
        return Ok(SosCheck::NotSos);
    }
    Ok(SosCheck::Sos(factors))
}

// ---------------------------------------------------------------------------
// Putinar-style certificates on semialgebraic sets

/// Domain description {g ≥ 0 for g in inequalities, h = 0 for h in equalities}.
#[derive(Debug, Clone, Default)]
pub struct SemialgebraicSet {
    pub inequalities: Vec<Polynomial>,
    pub equalities: Vec<Polynomial>,
}

#[derive(Debug, Clone)]
pub struct PutinarCertificate {
    pub sigma0: Polynomial,
    pub sigmas: Vec<Polynomial>,
    pub lambdas: Vec<Polynomial>,
}

impl PutinarCertificate {
    /// Residual p − σ₀ − Σσg − Σλh, which should be the zero polynomial.
    pub fn residual(&self, p: &Polynomial, set: &SemialgebraicSet) -> Polynomial {
        let mut r = p.clone();
        r = &r - &self.sigma0;
        for (s, g) in self.sigmas.iter().zip(&set.inequalities) {
            r = &r - &(s * g);
        }
        for (l, h) in self.lambdas.iter().zip(&set.equalities) {
            r = &r - &(l * h);
        }
        r
    }
}

/// Searches for `p = σ₀ + Σ σ_j g_j + Σ λ_k h_k` with σ's SOS of degree
/// ≤ `sigma_deg` and free λ's of degree ≤ `lambda_deg`. `Ok(None)` means
/// infeasible at these degrees — not a proof that p is anywhere negative.
pub fn putinar_certificate(
    p: &Polynomial,
    set: &SemialgebraicSet,
    sigma_deg: u32,
    lambda_deg: u32,
) -> Result<Option<PutinarCertificate>, SosError> {
    let space = p.space();
    let mut prog = SosProgram::new(space);

    let mut vars: BTreeSet<VarId> = p.support();
    for g in set.inequalities.iter().chain(&set.equalities) {
        vars.extend(g.support());
    }
    let vars: Vec<VarId> = vars.into_iter().collect();

    let mut expr = SosExpr::from_poly(p);
    let mut sig_vars = Vec::new();
    for g in &set.inequalities {
        let s = prog.new_sos_poly(&vars, sigma_deg / 2);
        expr.add_unknown(s, &-g);
        sig_vars.push(s);
    }
    let mut lam_vars = Vec::new();
    for h in &set.equalities {
        let basis = Polynomial::monomial_basis(space, &vars, lambda_deg);
        let l = prog.new_free_poly(basis);
        expr.add_unknown(l, &-h);
        lam_vars.push(l);
    }
    prog.add_sos(expr);

    let opts = SolverOptions { stop_when_feasible: true, ..SolverOptions::default() };
    let res = prog.solve(&opts);
    if !res.feasible {
        return Ok(None);
    }
    let sigma0 = res.constraint_grams[0]
        .as_ref()
        .expect("sos constraint has a gram")
        .to_poly(space)
        .normalized(DECODE_EPS);
    let cert = PutinarCertificate {
        sigma0,
        sigmas: sig_vars.iter().map(|&v| res.poly(v).clone()).collect(),
        lambdas: lam_vars.iter().map(|&v| res.poly(v).clone()).collect(),
    };
    // only return decompositions that actually reproduce p
    let scale = p.max_abs_coeff().max(1.0);
    if cert.residual(p, set).max_abs_coeff() > 1e-5 * scale {
        return Ok(None);
    }
    Ok(Some(cert))
}
