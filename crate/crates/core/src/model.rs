//! Polynomial differential-algebraic systems and their decomposition into
//! interacting subsystems that share a reference block of variables.
//!
//! A subsystem owns the rows of its node block plus a replicated copy of the
//! reference rows; every monomial of an owned row is attributed either to the
//! isolated dynamics `F_i` (support inside the subsystem's variables) or to a
//! pairwise interaction `H_ij` (support additionally touching exactly one
//! other block). Monomials spanning two or more foreign blocks do not fit the
//! pairwise interaction structure and are rejected.

use crate::poly::{Polynomial, VarId, VarSpace};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};
use std::sync::Arc;
use thiserror::Error;

/// Tolerance for "the origin is an equilibrium" and shared-row consistency
/// checks.
pub const ORIGIN_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("row {row} has F({row})(0) = {value:e}, origin is not an equilibrium")]
    OriginNotEquilibrium { row: String, value: f64 },
    #[error("constraint {index} does not vanish at the origin (value {value:e})")]
    ConstraintNotZeroAtOrigin { index: usize, value: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("blocks and reference must partition the variable space; variable `{0}` is {1}")]
    BadPartition(String, &'static str),
    #[error("monomial `{monomial}` in row {row} spans blocks {blocks:?}; interactions must be pairwise")]
    MonomialSpansBlocks { row: String, monomial: String, blocks: Vec<usize> },
    #[error("constraint {index} is not local to any subsystem")]
    ConstraintNotLocal { index: usize },
    #[error("shared row {row} disagrees between subsystems {a} and {b} (coefficient distance {dist:e})")]
    InconsistentSharedRow { row: String, a: usize, b: usize, dist: f64 },
}

/// `ż = F(z)` subject to `0 = G(z)`, with the origin an equilibrium on the
/// constraint manifold.
#[derive(Debug, Clone)]
pub struct PolySystem {
    space: Arc<VarSpace>,
    f: Vec<Polynomial>,
    g: Vec<Polynomial>,
}

impl PolySystem {
    pub fn new(space: &Arc<VarSpace>, f: Vec<Polynomial>, g: Vec<Polynomial>) -> Result<Self, ModelError> {
        if f.len() != space.dim() {
            return Err(ModelError::Dimension(format!(
                "{} dynamic rows for {} variables",
                f.len(),
                space.dim()
            )));
        }
        let zero = vec![0.0; space.dim()];
        for (r, p) in f.iter().enumerate() {
            let v = p.evaluate(&zero);
            if v.abs() > ORIGIN_TOL {
                return Err(ModelError::OriginNotEquilibrium { row: space.name(r as VarId).into(), value: v });
            }
        }
        for (k, p) in g.iter().enumerate() {
            let v = p.evaluate(&zero);
            if v.abs() > ORIGIN_TOL {
                return Err(ModelError::ConstraintNotZeroAtOrigin { index: k, value: v });
            }
        }
        Ok(PolySystem { space: Arc::clone(space), f, g })
    }

    pub fn space(&self) -> &Arc<VarSpace> {
        &self.space
    }

    pub fn dynamics(&self) -> &[Polynomial] {
        &self.f
    }

    pub fn constraints(&self) -> &[Polynomial] {
        &self.g
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }

    /// Right-hand side at a point (ignores the algebraic constraints).
    pub fn eval_rhs(&self, point: &[f64], out: &mut [f64]) {
        for (r, p) in self.f.iter().enumerate() {
            out[r] = p.evaluate(point);
        }
    }

    pub fn write_text(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(w, "vars {}", self.space.names().collect::<Vec<_>>().join(" "))?;
        for (r, p) in self.f.iter().enumerate() {
            writeln!(w, "f {} = {}", self.space.name(r as VarId), p)?;
        }
        for p in &self.g {
            writeln!(w, "g 0 = {}", p)?;
        }
        Ok(())
    }
}

/// One node of the decomposition: its block variables plus the shared
/// reference block, isolated dynamics, local constraints, and pairwise
/// interaction terms.
#[derive(Debug, Clone)]
pub struct Subsystem {
    pub index: usize,
    /// Local variables (node block then reference block), each a global id.
    pub vars: Vec<VarId>,
    /// Dynamics rows, aligned with `vars`.
    pub f: Vec<Polynomial>,
    /// Local algebraic constraints.
    pub g: Vec<Polynomial>,
    /// Interaction rows per neighbor, aligned with `vars`.
    pub h: BTreeMap<usize, Vec<Polynomial>>,
}

impl Subsystem {
    /// Σ_j H_ij, aligned with `vars`.
    pub fn interaction_total(&self) -> Vec<Polynomial> {
        let space = self.f[0].space();
        let mut out = vec![Polynomial::zero(space); self.f.len()];
        for rows in self.h.values() {
            for (k, p) in rows.iter().enumerate() {
                out[k] = &out[k] + p;
            }
        }
        out
    }

    /// F_i + Σ_j H_ij, the full dynamics of the owned rows.
    pub fn full_rows(&self) -> Vec<Polynomial> {
        self.f
            .iter()
            .zip(self.interaction_total())
            .map(|(f, h)| f + &h)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct InterconnectedSystem {
    space: Arc<VarSpace>,
    pub subsystems: Vec<Subsystem>,
    /// Global variables owned by more than one subsystem (the reference
    /// block), with their owners.
    pub overlap: BTreeMap<VarId, Vec<usize>>,
}

impl InterconnectedSystem {
    pub fn space(&self) -> &Arc<VarSpace> {
        &self.space
    }

    pub fn num_subsystems(&self) -> usize {
        self.subsystems.len()
    }

    /// {i} ∪ {j : H_ij ≠ 0}.
    pub fn neighbors(&self, i: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        out.insert(i);
        for (&j, rows) in &self.subsystems[i].h {
            if rows.iter().any(|p| !p.is_zero()) {
                out.insert(j);
            }
        }
        out
    }

    /// Reconstructs the global system, checking that replicated shared rows
    /// agree across their owners.
    pub fn assemble(&self) -> Result<PolySystem, ModelError> {
        let mut rows: Vec<Option<(usize, Polynomial)>> = vec![None; self.space.dim()];
        for sub in &self.subsystems {
            for (k, &v) in sub.vars.iter().enumerate() {
                let mut total = sub.f[k].clone();
                for hrows in sub.h.values() {
                    total = &total + &hrows[k];
                }
                match &rows[v as usize] {
                    None => rows[v as usize] = Some((sub.index, total)),
                    Some((first, existing)) => {
                        let dist = existing.coeff_distance(&total);
                        if dist > ORIGIN_TOL {
                            return Err(ModelError::InconsistentSharedRow {
                                row: self.space.name(v).into(),
                                a: *first,
                                b: sub.index,
                                dist,
                            });
                        }
                    }
                }
            }
        }
        let f: Vec<Polynomial> = rows
            .into_iter()
            .enumerate()
            .map(|(r, row)| {
                row.map(|(_, p)| p).ok_or_else(|| {
                    ModelError::Dimension(format!("no subsystem owns variable {}", self.space.name(r as VarId)))
                })
            })
            .collect::<Result<_, _>>()?;
        let mut g = Vec::new();
        for sub in &self.subsystems {
            for p in &sub.g {
                if !g.contains(p) {
                    g.push(p.clone());
                }
            }
        }
        PolySystem::new(&self.space, f, g)
    }

    pub fn write_text(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(w, "vars {}", self.space.names().collect::<Vec<_>>().join(" "))?;
        for sub in &self.subsystems {
            let names: Vec<&str> = sub.vars.iter().map(|&v| self.space.name(v)).collect();
            writeln!(w, "subsystem {} vars {}", sub.index, names.join(" "))?;
            for (k, &v) in sub.vars.iter().enumerate() {
                writeln!(w, "f {} {} = {}", sub.index, self.space.name(v), sub.f[k])?;
            }
            for p in &sub.g {
                writeln!(w, "g {} 0 = {}", sub.index, p)?;
            }
            for (j, rows) in &sub.h {
                for (k, p) in rows.iter().enumerate() {
                    if !p.is_zero() {
                        writeln!(w, "h {} {} {} = {}", sub.index, j, self.space.name(sub.vars[k]), p)?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Splits a system along a node partition, with every subsystem also owning
/// (and replicating the dynamics of) the shared reference block.
pub fn decompose_node_overlap(
    sys: &PolySystem,
    blocks: &[Vec<VarId>],
    reference: &[VarId],
) -> Result<InterconnectedSystem, ModelError> {
    let space = sys.space();
    let n = space.dim();

    // blocks + reference must partition the variables
    let mut owner: Vec<Option<usize>> = vec![None; n]; // block index; reference stays None
    let mut seen = vec![false; n];
    for (bi, block) in blocks.iter().enumerate() {
        for &v in block {
            if seen[v as usize] {
                return Err(ModelError::BadPartition(space.name(v).into(), "listed twice"));
            }
            seen[v as usize] = true;
            owner[v as usize] = Some(bi);
        }
    }
    for &v in reference {
        if seen[v as usize] {
            return Err(ModelError::BadPartition(space.name(v).into(), "listed twice"));
        }
        seen[v as usize] = true;
    }
    if let Some(miss) = seen.iter().position(|s| !s) {
        return Err(ModelError::BadPartition(space.name(miss as VarId).into(), "not covered"));
    }

    let mut subsystems = Vec::new();
    for (bi, block) in blocks.iter().enumerate() {
        let mut vars: Vec<VarId> = block.clone();
        vars.extend_from_slice(reference);
        let local: BTreeSet<VarId> = vars.iter().copied().collect();

        let mut f_rows = Vec::new();
        let mut h_rows: BTreeMap<usize, Vec<Polynomial>> = BTreeMap::new();
        for (k, &rv) in vars.iter().enumerate() {
            let row = &sys.dynamics()[rv as usize];
            let mut f_part = Polynomial::zero(space);
            let mut h_parts: BTreeMap<usize, Polynomial> = BTreeMap::new();
            for (m, c) in row.terms() {
                let foreign: BTreeSet<usize> = m
                    .vars()
                    .filter(|v| !local.contains(v))
                    .map(|v| owner[v as usize].expect("non-reference var has a block"))
                    .collect();
                let term = Polynomial::from_terms(space, [(m.clone(), c)]);
                match foreign.len() {
                    0 => f_part = &f_part + &term,
                    1 => {
                        let j = *foreign.iter().next().unwrap();
                        let e = h_parts.entry(j).or_insert_with(|| Polynomial::zero(space));
                        *e = &*e + &term;
                    }
                    _ => {
                        return Err(ModelError::MonomialSpansBlocks {
                            row: space.name(rv).into(),
                            monomial: term.render(),
                            blocks: foreign.into_iter().collect(),
                        })
                    }
                }
            }
            f_rows.push(f_part);
            for (j, p) in h_parts {
                h_rows
                    .entry(j)
                    .or_insert_with(|| vec![Polynomial::zero(space); vars.len()])[k] = p;
            }
            let _ = k;
        }

        // local constraints: support inside this subsystem
        let g_rows: Vec<Polynomial> = sys
            .constraints()
            .iter()
            .filter(|p| p.support().iter().all(|v| local.contains(v)))
            .cloned()
            .collect();

        subsystems.push(Subsystem { index: bi, vars, f: f_rows, g: g_rows, h: h_rows });
    }

    // every constraint must be local somewhere
    for (k, p) in sys.constraints().iter().enumerate() {
        let sup = p.support();
        let placed = subsystems.iter().any(|s| {
            let local: BTreeSet<VarId> = s.vars.iter().copied().collect();
            sup.iter().all(|v| local.contains(v))
        });
        if !placed {
            return Err(ModelError::ConstraintNotLocal { index: k });
        }
    }

    let mut overlap: BTreeMap<VarId, Vec<usize>> = BTreeMap::new();
    for &v in reference {
        overlap.insert(v, (0..blocks.len()).collect());
    }

    Ok(InterconnectedSystem { space: Arc::clone(space), subsystems, overlap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::VarSpace;

    fn p(s: &str, sp: &Arc<VarSpace>) -> Polynomial {
        Polynomial::parse(s, sp).unwrap()
    }

    #[test]
    fn two_node_chain_attribution() {
        let sp = VarSpace::shared(["x1", "x2"]);
        let sys = PolySystem::new(&sp, vec![p("-1*x1 + 1*x2", &sp), p("-1*x2", &sp)], vec![]).unwrap();
        let dec = decompose_node_overlap(&sys, &[vec![0], vec![1]], &[]).unwrap();
        assert_eq!(dec.subsystems[0].f[0], p("-1*x1", &sp));
        assert_eq!(dec.subsystems[0].h[&1][0], p("1*x2", &sp));
        assert_eq!(dec.neighbors(0), [0, 1].into());
        assert_eq!(dec.neighbors(1), [1].into());
    }

    #[test]
    fn decoupled_system_has_no_interactions() {
        let sp = VarSpace::shared(["x1", "x2", "x3"]);
        let f = vec![p("-1*x1", &sp), p("-2*x2", &sp), p("-1*x3^3", &sp)];
        let sys = PolySystem::new(&sp, f, vec![]).unwrap();
        let dec = decompose_node_overlap(&sys, &[vec![0], vec![1], vec![2]], &[]).unwrap();
        for i in 0..3 {
            assert!(dec.subsystems[i].h.values().flatten().all(Polynomial::is_zero));
            assert_eq!(dec.neighbors(i), [i].into());
        }
    }

    #[test]
    fn chain_neighbors() {
        let sp = VarSpace::shared(["x1", "x2", "x3"]);
        let f = vec![
            p("-1*x1 + 1*x2", &sp),
            p("-1*x2 + 1*x1 + 1*x3", &sp),
            p("-1*x3 + 1*x2", &sp),
        ];
        let sys = PolySystem::new(&sp, f, vec![]).unwrap();
        let dec = decompose_node_overlap(&sys, &[vec![0], vec![1], vec![2]], &[]).unwrap();
        assert_eq!(dec.neighbors(1), [0, 1, 2].into());
    }

    #[test]
    fn spanning_monomial_rejected() {
        let sp = VarSpace::shared(["x1", "x2", "x3"]);
        let f = vec![p("1*x2*x3", &sp), p("-1*x2", &sp), p("-1*x3", &sp)];
        let sys = PolySystem::new(&sp, f, vec![]).unwrap();
        let err = decompose_node_overlap(&sys, &[vec![0], vec![1], vec![2]], &[]).unwrap_err();
        assert!(matches!(err, ModelError::MonomialSpansBlocks { .. }), "{err}");
    }

    #[test]
    fn reference_rows_are_replicated_and_consistent() {
        // w is the shared reference; its dynamics couple to both blocks
        let sp = VarSpace::shared(["x1", "x2", "w"]);
        let f = vec![
            p("-1*x1 + 1*w", &sp),
            p("-1*x2 - 1*w", &sp),
            p("-0.5*w + 1*x1 - 1*x2", &sp),
        ];
        let sys = PolySystem::new(&sp, f.clone(), vec![]).unwrap();
        let dec = decompose_node_overlap(&sys, &[vec![0], vec![1]], &[2]).unwrap();

        // both subsystems own the reference row
        assert_eq!(dec.subsystems[0].vars, vec![0, 2]);
        assert_eq!(dec.subsystems[1].vars, vec![1, 2]);
        // subsystem 0 sees -0.5w + x1 locally, -x2 as interaction with 1
        assert_eq!(dec.subsystems[0].f[1], p("-0.5*w + 1*x1", &sp));
        assert_eq!(dec.subsystems[0].h[&1][1], p("-1*x2", &sp));
        assert_eq!(dec.overlap.get(&2), Some(&vec![0, 1]));

        let back = dec.assemble().unwrap();
        for (a, b) in back.dynamics().iter().zip(&f) {
            assert!(a.coeff_distance(b) == 0.0);
        }
    }

    #[test]
    fn decompose_assemble_roundtrip_coupled() {
        let sp = VarSpace::shared(["a1", "a2", "b1", "w"]);
        let f = vec![
            p("-1*a1 + 0.3*a2^2 - 0.1*b1*a1 + 1*w", &sp),
            p("-2*a2 + 0.25*b1", &sp),
            p("-1*b1 + 0.7*a1*w - 0.2*w^2", &sp),
            p("-1*w + 0.1*a1 - 0.3*b1^2", &sp),
        ];
        let g = vec![p("1*a1^2 + 1*a2^2 - 2*a2", &sp)];
        let sys = PolySystem::new(&sp, f.clone(), g.clone()).unwrap();
        let dec = decompose_node_overlap(&sys, &[vec![0, 1], vec![2]], &[3]).unwrap();

        // invariants: F_i(0) = 0 and H_ij(0) = 0
        let zero = vec![0.0; 4];
        for sub in &dec.subsystems {
            for q in &sub.f {
                assert_eq!(q.evaluate(&zero), 0.0);
            }
            for rows in sub.h.values() {
                for q in rows {
                    assert_eq!(q.evaluate(&zero), 0.0);
                }
            }
        }

        let back = dec.assemble().unwrap();
        for (x, y) in back.dynamics().iter().zip(&f) {
            assert!(x.coeff_distance(y) == 0.0);
        }
        assert_eq!(back.constraints().len(), 1);
        assert!(back.constraints()[0].coeff_distance(&g[0]) == 0.0);
    }

    #[test]
    fn origin_must_be_equilibrium() {
        let sp = VarSpace::shared(["x1"]);
        let err = PolySystem::new(&sp, vec![p("1*x1 + 1", &sp)], vec![]).unwrap_err();
        assert!(matches!(err, ModelError::OriginNotEquilibrium { .. }));
    }

    #[test]
    fn nonlocal_constraint_rejected() {
        let sp = VarSpace::shared(["x1", "x2"]);
        let sys = PolySystem::new(
            &sp,
            vec![p("-1*x1", &sp), p("-1*x2", &sp)],
            vec![p("1*x1*x2", &sp)],
        )
        .unwrap();
        let err = decompose_node_overlap(&sys, &[vec![0], vec![1]], &[]).unwrap_err();
        assert!(matches!(err, ModelError::ConstraintNotLocal { index: 0 }));
    }

    #[test]
    fn text_dump_lists_structure() {
        let sp = VarSpace::shared(["x1", "x2"]);
        let sys = PolySystem::new(&sp, vec![p("-1*x1 + 1*x2", &sp), p("-1*x2", &sp)], vec![]).unwrap();
        let dec = decompose_node_overlap(&sys, &[vec![0], vec![1]], &[]).unwrap();
        let mut buf = Vec::new();
        dec.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("subsystem 0 vars x1"));
        assert!(text.contains("h 0 1 x1 = 1*x2"));
    }
}
