//! Sparse multivariate polynomials over `f64` with a graded-lexicographic
//! term order.
//!
//! Polynomials are immutable after construction and cheap to clone; they can
//! be shared freely between threads. All polynomials carry the
//! [`VarSpace`] they live in, and mixing spaces is an error.

use smallvec::SmallVec;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// Index of a variable inside its [`VarSpace`].
pub type VarId = u32;

/// Coefficients smaller than this in absolute value are dropped by
/// [`Polynomial::normalized`]; suppresses solver noise when round-tripping
/// certificates through text.
pub const NORMALIZE_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum PolyError {
    #[error("polynomials belong to different variable spaces")]
    SpaceMismatch,
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("parse error at `{at}`: {msg}")]
    Parse { at: String, msg: String },
}

/// An ordered set of named variables. Variable identity is positional.
#[derive(Debug, PartialEq, Eq)]
pub struct VarSpace {
    names: Vec<String>,
}

impl VarSpace {
    /// A shared space with the given variable names (must be distinct and
    /// free of the characters used by the text format).
    pub fn shared(names: impl IntoIterator<Item = impl Into<String>>) -> Arc<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        assert!(!names.is_empty(), "variable space must not be empty");
        let mut seen = BTreeSet::new();
        for n in &names {
            assert!(
                !n.is_empty() && n.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'),
                "invalid variable name `{n}`"
            );
            assert!(!n.chars().next().unwrap().is_ascii_digit(), "variable name `{n}` starts with a digit");
            assert!(seen.insert(n.clone()), "duplicate variable name `{n}`");
        }
        Arc::new(VarSpace { names })
    }

    /// `z1, z2, ..., zn`.
    pub fn numbered(prefix: &str, n: usize) -> Arc<Self> {
        Self::shared((1..=n).map(|i| format!("{prefix}{i}")))
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, v: VarId) -> &str {
        &self.names[v as usize]
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn find(&self, name: &str) -> Option<VarId> {
        self.names.iter().position(|n| n == name).map(|i| i as VarId)
    }

    pub fn ids(&self) -> impl Iterator<Item = VarId> {
        0..self.names.len() as VarId
    }
}

fn same_space(a: &Arc<VarSpace>, b: &Arc<VarSpace>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

/// A power product of variables; the constant monomial is `Monomial::one()`.
///
/// Ordered graded-lexicographically: higher total degree first, ties broken
/// by the exponent of the earliest variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Monomial {
    // (variable, exponent) pairs, sorted by variable, exponents > 0
    exps: SmallVec<[(VarId, u32); 4]>,
}

impl Monomial {
    pub fn one() -> Self {
        Monomial { exps: SmallVec::new() }
    }

    pub fn var(v: VarId) -> Self {
        Monomial { exps: smallvec::smallvec![(v, 1)] }
    }

    /// Builds from (variable, exponent) pairs; merges repeats, drops zeros.
    pub fn new(pairs: &[(VarId, u32)]) -> Self {
        let mut map: BTreeMap<VarId, u32> = BTreeMap::new();
        for &(v, e) in pairs {
            if e > 0 {
                *map.entry(v).or_insert(0) += e;
            }
        }
        Monomial { exps: map.into_iter().collect() }
    }

    pub fn degree(&self) -> u32 {
        self.exps.iter().map(|&(_, e)| e).sum()
    }

    pub fn pow_of(&self, v: VarId) -> u32 {
        self.exps.iter().find(|&&(w, _)| w == v).map_or(0, |&(_, e)| e)
    }

    pub fn is_one(&self) -> bool {
        self.exps.is_empty()
    }

    pub fn vars(&self) -> impl Iterator<Item = VarId> + '_ {
        self.exps.iter().map(|&(v, _)| v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (VarId, u32)> + '_ {
        self.exps.iter().copied()
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut out: SmallVec<[(VarId, u32); 4]> = SmallVec::new();
        let (mut i, mut j) = (0, 0);
        while i < self.exps.len() || j < other.exps.len() {
            match (self.exps.get(i), other.exps.get(j)) {
                (Some(&(va, ea)), Some(&(vb, eb))) => match va.cmp(&vb) {
                    Ordering::Less => {
                        out.push((va, ea));
                        i += 1;
                    }
                    Ordering::Greater => {
                        out.push((vb, eb));
                        j += 1;
                    }
                    Ordering::Equal => {
                        out.push((va, ea + eb));
                        i += 1;
                        j += 1;
                    }
                },
                (Some(&p), None) => {
                    out.push(p);
                    i += 1;
                }
                (None, Some(&p)) => {
                    out.push(p);
                    j += 1;
                }
                (None, None) => unreachable!(),
            }
        }
        Monomial { exps: out }
    }

    /// Removes one variable entirely, returning (exponent, remainder).
    fn split_var(&self, v: VarId) -> (u32, Monomial) {
        let mut rest = self.clone();
        if let Some(pos) = rest.exps.iter().position(|&(w, _)| w == v) {
            let (_, e) = rest.exps.remove(pos);
            (e, rest)
        } else {
            (0, rest)
        }
    }

    pub fn evaluate(&self, point: &[f64]) -> f64 {
        let mut acc = 1.0;
        for &(v, e) in &self.exps {
            acc *= point[v as usize].powi(e as i32);
        }
        acc
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        match self.degree().cmp(&other.degree()) {
            Ordering::Equal => {}
            ord => return ord,
        }
        // Lexicographic tie-break: larger exponent on the earliest variable
        // where the two differ wins.
        let (mut i, mut j) = (0, 0);
        loop {
            match (self.exps.get(i), other.exps.get(j)) {
                (Some(&(va, ea)), Some(&(vb, eb))) => match va.cmp(&vb) {
                    Ordering::Less => return Ordering::Greater,
                    Ordering::Greater => return Ordering::Less,
                    Ordering::Equal => {
                        match ea.cmp(&eb) {
                            Ordering::Equal => {}
                            ord => return ord,
                        }
                        i += 1;
                        j += 1;
                    }
                },
                (Some(_), None) => return Ordering::Greater,
                (None, Some(_)) => return Ordering::Less,
                (None, None) => return Ordering::Equal,
            }
        }
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Sparse multivariate polynomial with `f64` coefficients.
#[derive(Debug, Clone)]
pub struct Polynomial {
    terms: BTreeMap<Monomial, f64>,
    space: Arc<VarSpace>,
}

impl PartialEq for Polynomial {
    fn eq(&self, other: &Self) -> bool {
        same_space(&self.space, &other.space) && self.terms == other.terms
    }
}

impl Polynomial {
    pub fn zero(space: &Arc<VarSpace>) -> Self {
        Polynomial { terms: BTreeMap::new(), space: Arc::clone(space) }
    }

    pub fn constant(space: &Arc<VarSpace>, c: f64) -> Self {
        let mut terms = BTreeMap::new();
        if c != 0.0 {
            terms.insert(Monomial::one(), c);
        }
        Polynomial { terms, space: Arc::clone(space) }
    }

    pub fn var(space: &Arc<VarSpace>, v: VarId) -> Self {
        assert!((v as usize) < space.dim(), "variable out of range");
        let mut terms = BTreeMap::new();
        terms.insert(Monomial::var(v), 1.0);
        Polynomial { terms, space: Arc::clone(space) }
    }

    pub fn from_terms(space: &Arc<VarSpace>, terms: impl IntoIterator<Item = (Monomial, f64)>) -> Self {
        let mut map: BTreeMap<Monomial, f64> = BTreeMap::new();
        for (m, c) in terms {
            debug_assert!(m.vars().all(|v| (v as usize) < space.dim()));
            let entry = map.entry(m).or_insert(0.0);
            *entry += c;
        }
        map.retain(|_, c| *c != 0.0);
        Polynomial { terms: map, space: Arc::clone(space) }
    }

    pub fn space(&self) -> &Arc<VarSpace> {
        &self.space
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; the zero polynomial reports 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coeff(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn constant_term(&self) -> f64 {
        self.coeff(&Monomial::one())
    }

    /// Terms in ascending graded-lex order.
    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    /// Variables that actually occur with a nonzero coefficient.
    pub fn support(&self) -> BTreeSet<VarId> {
        let mut s = BTreeSet::new();
        for m in self.terms.keys() {
            s.extend(m.vars());
        }
        s
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |a, &c| a.max(c.abs()))
    }

    /// Largest absolute coefficient difference; both inputs must share a space.
    pub fn coeff_distance(&self, other: &Polynomial) -> f64 {
        assert!(same_space(&self.space, &other.space), "space mismatch");
        let mut d: f64 = 0.0;
        for (m, c) in &self.terms {
            d = d.max((c - other.coeff(m)).abs());
        }
        for (m, c) in &other.terms {
            d = d.max((c - self.coeff(m)).abs());
        }
        d
    }

    /// Copy with coefficients of magnitude below `eps` removed.
    pub fn normalized(&self, eps: f64) -> Polynomial {
        let terms = self.terms.iter().filter(|(_, c)| c.abs() >= eps).map(|(m, &c)| (m.clone(), c)).collect();
        Polynomial { terms, space: Arc::clone(&self.space) }
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        if s == 0.0 {
            return Polynomial::zero(&self.space);
        }
        let terms = self.terms.iter().map(|(m, &c)| (m.clone(), c * s)).collect();
        Polynomial { terms, space: Arc::clone(&self.space) }
    }

    /// The substitution z_v ↦ d_v·z_v: each coefficient picks up ∏ d_v^e_v.
    /// `d` must cover the whole space; entries for unused variables are
    /// ignored.
    pub fn scale_vars(&self, d: &[f64]) -> Polynomial {
        assert_eq!(d.len(), self.space.dim(), "scaling vector has wrong dimension");
        let terms = self
            .terms
            .iter()
            .map(|(m, &c)| {
                let f: f64 = m.iter().map(|(v, e)| d[v as usize].powi(e as i32)).product();
                (m.clone(), c * f)
            })
            .filter(|&(_, c)| c != 0.0)
            .collect();
        Polynomial { terms, space: Arc::clone(&self.space) }
    }

    pub fn checked_add(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        if !same_space(&self.space, &other.space) {
            return Err(PolyError::SpaceMismatch);
        }
        let mut terms = self.terms.clone();
        for (m, &c) in &other.terms {
            let e = terms.entry(m.clone()).or_insert(0.0);
            *e += c;
            if *e == 0.0 {
                terms.remove(m);
            }
        }
        Ok(Polynomial { terms, space: Arc::clone(&self.space) })
    }

    pub fn checked_mul(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        if !same_space(&self.space, &other.space) {
            return Err(PolyError::SpaceMismatch);
        }
        let mut terms: BTreeMap<Monomial, f64> = BTreeMap::new();
        for (ma, &ca) in &self.terms {
            for (mb, &cb) in &other.terms {
                let m = ma.mul(mb);
                let e = terms.entry(m).or_insert(0.0);
                *e += ca * cb;
            }
        }
        terms.retain(|_, c| *c != 0.0);
        Ok(Polynomial { terms, space: Arc::clone(&self.space) })
    }

    pub fn pow(&self, k: u32) -> Polynomial {
        let mut acc = Polynomial::constant(&self.space, 1.0);
        for _ in 0..k {
            acc = &acc * self;
        }
        acc
    }

    /// Partial derivative with respect to one variable.
    pub fn diff(&self, v: VarId) -> Polynomial {
        let mut terms: BTreeMap<Monomial, f64> = BTreeMap::new();
        for (m, &c) in &self.terms {
            let e = m.pow_of(v);
            if e > 0 {
                let (_, rest) = m.split_var(v);
                let dm = if e == 1 { rest } else { rest.mul(&Monomial::new(&[(v, e - 1)])) };
                *terms.entry(dm).or_insert(0.0) += c * e as f64;
            }
        }
        terms.retain(|_, c| *c != 0.0);
        Polynomial { terms, space: Arc::clone(&self.space) }
    }

    /// Gradient with respect to every variable of the space.
    pub fn gradient(&self) -> Vec<Polynomial> {
        self.space.ids().map(|v| self.diff(v)).collect()
    }

    pub fn evaluate(&self, point: &[f64]) -> f64 {
        assert_eq!(point.len(), self.space.dim(), "evaluation point has wrong dimension");
        self.terms.iter().map(|(m, &c)| c * m.evaluate(point)).sum()
    }

    /// Substitutes `q` for variable `v`.
    pub fn substitute(&self, v: VarId, q: &Polynomial) -> Polynomial {
        assert!(same_space(&self.space, &q.space), "space mismatch");
        let mut powers: Vec<Polynomial> = vec![Polynomial::constant(&self.space, 1.0)];
        let mut out = Polynomial::zero(&self.space);
        for (m, &c) in &self.terms {
            let (e, rest) = m.split_var(v);
            while powers.len() <= e as usize {
                let next = &powers[powers.len() - 1] * q;
                powers.push(next);
            }
            let rest_poly = Polynomial::from_terms(&self.space, [(rest, c)]);
            out = &out + &(&rest_poly * &powers[e as usize]);
        }
        out
    }

    /// All monomials over `vars` of total degree ≤ `max_deg`, ascending
    /// graded-lex. `vars` may be any subset of the space.
    pub fn monomial_basis(space: &Arc<VarSpace>, vars: &[VarId], max_deg: u32) -> Vec<Monomial> {
        for &v in vars {
            assert!((v as usize) < space.dim(), "variable out of range");
        }
        let mut out = Vec::new();
        let mut stack: Vec<(usize, u32, Vec<(VarId, u32)>)> = vec![(0, 0, Vec::new())];
        while let Some((i, used, cur)) = stack.pop() {
            if i == vars.len() {
                out.push(Monomial::new(&cur));
                continue;
            }
            for e in 0..=(max_deg - used) {
                let mut next = cur.clone();
                if e > 0 {
                    next.push((vars[i], e));
                }
                stack.push((i + 1, used + e, next));
            }
        }
        out.sort();
        out.dedup();
        out
    }

    /// Renders in the canonical text format; see the module parser.
    pub fn render(&self) -> String {
        format!("{self}")
    }

    /// Parses the canonical text format produced by [`Polynomial::render`].
    pub fn parse(input: &str, space: &Arc<VarSpace>) -> Result<Polynomial, PolyError> {
        parse_polynomial(input, space)
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, (m, c)) in self.terms.iter().rev().enumerate() {
            if i == 0 {
                if *c < 0.0 {
                    write!(f, "-")?;
                }
            } else if *c < 0.0 {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            write!(f, "{}", c.abs())?;
            for (v, e) in m.iter() {
                write!(f, "*{}", self.space.name(v))?;
                if e > 1 {
                    write!(f, "^{e}")?;
                }
            }
        }
        Ok(())
    }
}

macro_rules! bin_op {
    ($trait:ident, $method:ident, $impl:expr) => {
        impl std::ops::$trait<&Polynomial> for &Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: &Polynomial) -> Polynomial {
                #[allow(clippy::redundant_closure_call)]
                ($impl)(self, rhs)
            }
        }
        impl std::ops::$trait<Polynomial> for Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: Polynomial) -> Polynomial {
                std::ops::$trait::$method(&self, &rhs)
            }
        }
        impl std::ops::$trait<&Polynomial> for Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: &Polynomial) -> Polynomial {
                std::ops::$trait::$method(&self, rhs)
            }
        }
    };
}

bin_op!(Add, add, |a: &Polynomial, b: &Polynomial| a.checked_add(b).expect("space mismatch"));
bin_op!(Sub, sub, |a: &Polynomial, b: &Polynomial| a.checked_add(&b.scale(-1.0)).expect("space mismatch"));
bin_op!(Mul, mul, |a: &Polynomial, b: &Polynomial| a.checked_mul(b).expect("space mismatch"));

impl std::ops::Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl std::ops::Neg for Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl std::ops::Mul<f64> for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: f64) -> Polynomial {
        self.scale(rhs)
    }
}

impl std::ops::Mul<f64> for Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: f64) -> Polynomial {
        self.scale(rhs)
    }
}

// ---------------------------------------------------------------------------
// Parsing

fn parse_polynomial(input: &str, space: &Arc<VarSpace>) -> Result<Polynomial, PolyError> {
    let compact: String = input.chars().filter(|c| !c.is_whitespace()).collect();
    if compact.is_empty() {
        return Err(PolyError::Parse { at: input.into(), msg: "empty input".into() });
    }
    if compact == "0" {
        return Ok(Polynomial::zero(space));
    }
    // Split into signed terms; '+'/'-' inside an exponent like 2e-3 do not split.
    let bytes = compact.as_bytes();
    let mut terms: Vec<(f64, &str)> = Vec::new(); // (sign, body)
    let mut start = 0usize;
    let mut sign = 1.0;
    let mut i = 0usize;
    if bytes[0] == b'+' || bytes[0] == b'-' {
        sign = if bytes[0] == b'-' { -1.0 } else { 1.0 };
        start = 1;
        i = 1;
    }
    while i < bytes.len() {
        let c = bytes[i];
        if (c == b'+' || c == b'-') && i > start && !matches!(bytes[i - 1], b'e' | b'E') {
            terms.push((sign, &compact[start..i]));
            sign = if c == b'-' { -1.0 } else { 1.0 };
            start = i + 1;
        }
        i += 1;
    }
    terms.push((sign, &compact[start..]));

    let mut out: Vec<(Monomial, f64)> = Vec::new();
    for (sign, body) in terms {
        if body.is_empty() {
            return Err(PolyError::Parse { at: compact.clone(), msg: "dangling sign".into() });
        }
        let mut coeff = sign;
        let mut pairs: Vec<(VarId, u32)> = Vec::new();
        for (k, factor) in body.split('*').enumerate() {
            if factor.is_empty() {
                return Err(PolyError::Parse { at: body.into(), msg: "empty factor".into() });
            }
            let first = factor.chars().next().unwrap();
            if k == 0 && (first.is_ascii_digit() || first == '.') {
                let c: f64 = factor
                    .parse()
                    .map_err(|_| PolyError::Parse { at: factor.into(), msg: "bad coefficient".into() })?;
                coeff *= c;
                continue;
            }
            let (name, pow) = match factor.split_once('^') {
                Some((n, p)) => {
                    let e: u32 = p
                        .parse()
                        .map_err(|_| PolyError::Parse { at: factor.into(), msg: "bad exponent".into() })?;
                    (n, e)
                }
                None => (factor, 1),
            };
            let v = space.find(name).ok_or_else(|| PolyError::UnknownVariable(name.into()))?;
            pairs.push((v, pow));
        }
        out.push((Monomial::new(&pairs), coeff));
    }
    Ok(Polynomial::from_terms(space, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn space3() -> Arc<VarSpace> {
        VarSpace::shared(["x", "y", "z"])
    }

    fn p(s: &str, sp: &Arc<VarSpace>) -> Polynomial {
        Polynomial::parse(s, sp).unwrap()
    }

    #[test]
    fn grlex_ordering() {
        let x = Monomial::var(0);
        let y = Monomial::var(1);
        let x2 = Monomial::new(&[(0, 2)]);
        let xy = Monomial::new(&[(0, 1), (1, 1)]);
        let y2 = Monomial::new(&[(1, 2)]);
        // x^2 > x*y > y^2 > x > y > 1
        let mut ms = vec![Monomial::one(), y2.clone(), x.clone(), xy.clone(), y.clone(), x2.clone()];
        ms.sort();
        assert_eq!(ms, vec![Monomial::one(), y, x, y2, xy, x2]);
    }

    #[test]
    fn binomial_square() {
        let sp = space3();
        let sum = p("1*x + 1*y", &sp);
        let sq = &sum * &sum;
        assert_eq!(sq, p("1*x^2 + 2*x*y + 1*y^2", &sp));
    }

    #[test]
    fn cube_expansion() {
        let sp = space3();
        let q = p("1 + 1*x", &sp).pow(3);
        assert_eq!(q, p("1*x^3 + 3*x^2 + 3*x + 1", &sp));
    }

    #[test]
    fn derivative_basics() {
        let sp = space3();
        let f = p("1*x^2*y + 4*z", &sp);
        assert_eq!(f.diff(0), p("2*x*y", &sp));
        assert_eq!(f.diff(1), p("1*x^2", &sp));
        assert_eq!(f.diff(2), p("4", &sp));
        let g = f.gradient();
        assert_eq!(g[0].evaluate(&[2.0, 3.0, 0.0]), 12.0);
        assert_eq!(g[1].evaluate(&[2.0, 3.0, 0.0]), 4.0);
    }

    #[test]
    fn substitute_identity_and_shift() {
        let sp = space3();
        let f = p("1*x^2 + 2*x*y - 3", &sp);
        let x = Polynomial::var(&sp, 0);
        assert_eq!(f.substitute(0, &x), f);
        // x -> z + 1 in x^2: z^2 + 2z + 1
        let f2 = p("1*x^2", &sp).substitute(0, &p("1*z + 1", &sp));
        assert_eq!(f2, p("1*z^2 + 2*z + 1", &sp));
    }

    #[test]
    fn zero_terms_are_dropped() {
        let sp = space3();
        let f = p("1*x + 1*y", &sp);
        let g = p("1*x - 1*y", &sp);
        let s = &f + &g; // 2x
        assert_eq!(s.num_terms(), 1);
        let d = &f - &f;
        assert!(d.is_zero());
        assert_eq!(d.degree(), 0);
    }

    #[test]
    fn display_canonical_form() {
        let sp = space3();
        let f = p("-0.5 + 1*x^2*y - 2*z", &sp);
        assert_eq!(f.render(), "1*x^2*y - 2*z - 0.5");
        assert_eq!(Polynomial::zero(&sp).render(), "0");
    }

    #[test]
    fn parse_rejects_garbage() {
        let sp = space3();
        assert!(Polynomial::parse("1*w", &sp).is_err());
        assert!(Polynomial::parse("", &sp).is_err());
        assert!(Polynomial::parse("1*x^", &sp).is_err());
        assert!(Polynomial::parse("+", &sp).is_err());
    }

    #[test]
    fn parse_scientific_notation() {
        let sp = space3();
        let f = p("1e-5*x - 2.5E3", &sp);
        assert_eq!(f.coeff(&Monomial::var(0)), 1e-5);
        assert_eq!(f.constant_term(), -2500.0);
    }

    #[test]
    fn basis_counts() {
        let sp = space3();
        // C(3+2, 2) = 10 monomials of degree <= 2 in 3 vars
        let b = Polynomial::monomial_basis(&sp, &[0, 1, 2], 2);
        assert_eq!(b.len(), 10);
        assert!(b.windows(2).all(|w| w[0] < w[1]));
        let b1 = Polynomial::monomial_basis(&sp, &[1], 3);
        assert_eq!(b1.len(), 4);
    }

    #[test]
    fn normalization_threshold() {
        let sp = space3();
        let f = p("1*x + 1e-13*y", &sp);
        assert_eq!(f.normalized(NORMALIZE_EPS).num_terms(), 1);
    }

    // --- property tests ------------------------------------------------

    fn arb_poly() -> impl Strategy<Value = Polynomial> {
        let term = (
            prop::collection::vec((0u32..3, 0u32..3), 0..3),
            -4.0f64..4.0,
        );
        prop::collection::vec(term, 0..6).prop_map(|ts| {
            let sp = space3();
            Polynomial::from_terms(
                &sp,
                ts.into_iter().map(|(pairs, c)| (Monomial::new(&pairs), c)),
            )
        })
    }

    proptest! {
        #[test]
        fn ring_axioms(a in arb_poly(), b in arb_poly(), c in arb_poly()) {
            let scale = [&a, &b, &c].iter().map(|p| p.max_abs_coeff()).fold(1.0, f64::max);
            let tol = 1e-12 * scale * scale * scale;
            // associativity + commutativity + distributivity
            prop_assert!((&(&a + &b) + &c).coeff_distance(&(&a + &(&b + &c))) <= tol);
            prop_assert!((&a + &b).coeff_distance(&(&b + &a)) <= tol);
            prop_assert!((&(&a * &b) * &c).coeff_distance(&(&a * &(&b * &c))) <= tol);
            prop_assert!((&a * &b).coeff_distance(&(&b * &a)) <= tol);
            prop_assert!((&a * &(&b + &c)).coeff_distance(&(&(&a * &b) + &(&a * &c))) <= tol);
        }

        #[test]
        fn evaluation_is_multiplicative(a in arb_poly(), b in arb_poly(),
                                        x in -2.0f64..2.0, y in -2.0f64..2.0, z in -2.0f64..2.0) {
            let pt = [x, y, z];
            let lhs = (&a * &b).evaluate(&pt);
            let rhs = a.evaluate(&pt) * b.evaluate(&pt);
            let scale = 1.0 + lhs.abs().max(rhs.abs());
            prop_assert!((lhs - rhs).abs() <= 1e-9 * scale);
        }

        #[test]
        fn gradient_matches_finite_differences(a in arb_poly(),
                                               x in -1.5f64..1.5, y in -1.5f64..1.5, z in -1.5f64..1.5) {
            let pt = [x, y, z];
            let h = 1e-6;
            for v in 0..3u32 {
                let g = a.diff(v).evaluate(&pt);
                let mut hi = pt; hi[v as usize] += h;
                let mut lo = pt; lo[v as usize] -= h;
                let fd = (a.evaluate(&hi) - a.evaluate(&lo)) / (2.0 * h);
                let scale = 1.0f64.max(g.abs());
                prop_assert!((g - fd).abs() <= 1e-5 * scale, "var {v}: {g} vs {fd}");
            }
        }

        #[test]
        fn render_parse_roundtrip(a in arb_poly()) {
            let sp = a.space().clone();
            let back = Polynomial::parse(&a.render(), &sp).unwrap();
            prop_assert_eq!(back, a);
        }
    }
}
