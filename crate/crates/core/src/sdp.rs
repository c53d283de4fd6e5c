//! Dense-block semidefinite programming.
//!
//! Problems are stated in primal standard form with optional free scalar
//! variables:
//!
//! ```text
//! minimize    Σ_b <C_b, X_b> + c_sᵀ u
//! subject to  Σ_b <A_{c,b}, X_b> + (A_s u)_c = b_c    for each constraint c
//!             X_b ⪰ 0,  u free
//! ```
//!
//! The solver runs a homogeneous self-dual embedding with Mehrotra
//! predictor–corrector steps and the HKM search direction, so primal
//! infeasibility is detected by convergence to an improving dual ray rather
//! than by divergence heuristics. The ray is verified explicitly before
//! `Infeasible` is reported, because callers abort certification branches on
//! that status.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Cholesky, Diag, EigValsh, FactorizeInto, Solve, SolveTriangular, UPLO};
use std::collections::BTreeMap;
use std::io::{self, Write};
use std::sync::Once;

/// PSD blocks are kept well below this size; the Schur complement is dense.
pub const MAX_TOTAL_DIM: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    MaxIter,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
    /// For zero-objective problems: return `Optimal` as soon as the primal
    /// iterate is feasible within tolerance (every feasible point is optimal
    /// when the objective vanishes). Saves most of the tail iterations in
    /// bisection loops.
    pub stop_when_feasible: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { gap_tol: 1e-8, feas_tol: 1e-8, max_iter: 200, stop_when_feasible: false }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IterStats {
    pub mu: f64,
    pub primal_infeas: f64,
    pub dual_infeas: f64,
    pub rel_gap: f64,
    pub tau: f64,
    pub kappa: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SdpStatus,
    /// Primal PSD blocks (τ-scaled). On `Infeasible` these are meaningless.
    pub block_values: Vec<Array2<f64>>,
    /// Free scalar variables (τ-scaled).
    pub scalar_values: Vec<f64>,
    /// Dual multipliers; on `Infeasible` this is the verified improving ray,
    /// normalized so bᵀy = 1.
    pub dual_y: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub duality_gap: f64,
    pub max_constraint_violation: f64,
    pub iterations: usize,
    pub history: Vec<IterStats>,
}

impl SdpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SdpStatus::Optimal
    }
}

#[derive(Debug, Clone, Default)]
struct ConsData {
    // (block, i, j) with i <= j; the coefficient matrix holds `val` at (i,j)
    // and (j,i).
    mat: BTreeMap<(usize, usize, usize), f64>,
    scal: BTreeMap<usize, f64>,
}

/// Builder + immutable problem description.
#[derive(Debug, Clone, Default)]
pub struct SdpProblem {
    block_dims: Vec<usize>,
    num_scalars: usize,
    obj_blocks: Vec<Array2<f64>>,
    obj_scalars: Vec<f64>,
    rhs: Vec<f64>,
    cons: Vec<ConsData>,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_block(&mut self, dim: usize) -> usize {
        assert!(dim > 0, "empty PSD block");
        self.block_dims.push(dim);
        self.obj_blocks.push(Array2::zeros((dim, dim)));
        self.block_dims.len() - 1
    }

    pub fn add_scalar(&mut self) -> usize {
        self.num_scalars += 1;
        self.obj_scalars.push(0.0);
        self.num_scalars - 1
    }

    pub fn add_constraint(&mut self, rhs: f64) -> usize {
        self.rhs.push(rhs);
        self.cons.push(ConsData::default());
        self.cons.len() - 1
    }

    /// Accumulates `val` into the symmetric coefficient of constraint `c` at
    /// block entry (i, j) (and (j, i)).
    pub fn add_cons_entry(&mut self, c: usize, block: usize, i: usize, j: usize, val: f64) {
        let d = self.block_dims[block];
        assert!(i < d && j < d, "entry out of block range");
        let key = (block, i.min(j), i.max(j));
        *self.cons[c].mat.entry(key).or_insert(0.0) += val;
    }

    pub fn add_cons_scalar(&mut self, c: usize, s: usize, val: f64) {
        assert!(s < self.num_scalars);
        *self.cons[c].scal.entry(s).or_insert(0.0) += val;
    }

    pub fn add_obj_entry(&mut self, block: usize, i: usize, j: usize, val: f64) {
        self.obj_blocks[block][(i, j)] += val;
        if i != j {
            self.obj_blocks[block][(j, i)] += val;
        }
    }

    pub fn add_obj_scalar(&mut self, s: usize, val: f64) {
        self.obj_scalars[s] += val;
    }

    /// Adds `delta` to the right-hand side of constraint `c`.
    pub fn bump_rhs(&mut self, c: usize, delta: f64) {
        self.rhs[c] += delta;
    }

    pub fn num_constraints(&self) -> usize {
        self.cons.len()
    }

    pub fn num_blocks(&self) -> usize {
        self.block_dims.len()
    }

    pub fn block_dims(&self) -> &[usize] {
        &self.block_dims
    }

    pub fn num_scalars(&self) -> usize {
        self.num_scalars
    }

    /// Plain-text sparse triplet dump for debugging against external solvers.
    pub fn write_triplets(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(w, "blocks {}", self.block_dims.len())?;
        for (b, d) in self.block_dims.iter().enumerate() {
            writeln!(w, "dim {b} {d}")?;
        }
        writeln!(w, "scalars {}", self.num_scalars)?;
        writeln!(w, "constraints {}", self.cons.len())?;
        for (b, cb) in self.obj_blocks.iter().enumerate() {
            for i in 0..cb.nrows() {
                for j in i..cb.ncols() {
                    if cb[(i, j)] != 0.0 {
                        writeln!(w, "obj {b} {i} {j} {}", cb[(i, j)])?;
                    }
                }
            }
        }
        for (s, &v) in self.obj_scalars.iter().enumerate() {
            if v != 0.0 {
                writeln!(w, "objs {s} {v}")?;
            }
        }
        for (c, con) in self.cons.iter().enumerate() {
            writeln!(w, "rhs {c} {}", self.rhs[c])?;
            for (&(b, i, j), &v) in &con.mat {
                writeln!(w, "con {c} {b} {i} {j} {v}")?;
            }
            for (&s, &v) in &con.scal {
                writeln!(w, "cons {c} {s} {v}")?;
            }
        }
        Ok(())
    }

    pub fn solve(&self, opts: &SolverOptions) -> SdpSolution {
        Hsd::new(self, opts).run()
    }
}

// ---------------------------------------------------------------------------
// Homogeneous self-dual interior point method

fn force_single_threaded_blas() {
    static ONCE: Once = Once::new();
    ONCE.call_once(|| {
        extern "C" {
            fn openblas_set_num_threads(n: i32);
        }
        // Byte-reproducible runs need a fixed BLAS reduction order.
        unsafe { openblas_set_num_threads(1) };
    });
}

fn sym(a: &Array2<f64>) -> Array2<f64> {
    0.5 * (a + &a.t())
}

/// Σ over the symmetric coefficient entries of <A, W> for a possibly
/// unsymmetric W.
fn inner_entries(entries: &[(usize, usize, f64)], w: &Array2<f64>) -> f64 {
    let mut acc = 0.0;
    for &(i, j, v) in entries {
        if i == j {
            acc += v * w[(i, i)];
        } else {
            acc += v * (w[(i, j)] + w[(j, i)]);
        }
    }
    acc
}

struct Hsd<'a> {
    p: &'a SdpProblem,
    opts: &'a SolverOptions,
    m: usize,
    ns: usize,
    dims: Vec<usize>,
    // per block: list of (constraint index, entries (i, j<=i? actually i<=j, val))
    per_block: Vec<Vec<(usize, Vec<(usize, usize, f64)>)>>,
    af: Array2<f64>, // m x ns
    b: Array1<f64>,
    cf: Array1<f64>,
    zero_objective: bool,
    bnorm: f64,
    cnorm: f64,
}

struct Point {
    x: Vec<Array2<f64>>,
    s: Vec<Array2<f64>>,
    lx: Vec<Array2<f64>>,
    ls: Vec<Array2<f64>>,
    sinv: Vec<Array2<f64>>,
    y: Array1<f64>,
    u: Array1<f64>,
    tau: f64,
    kappa: f64,
}

struct Direction {
    dx: Vec<Array2<f64>>,
    ds: Vec<Array2<f64>>,
    dy: Array1<f64>,
    du: Array1<f64>,
    dtau: f64,
    dkappa: f64,
}

impl<'a> Hsd<'a> {
    fn new(p: &'a SdpProblem, opts: &'a SolverOptions) -> Self {
        force_single_threaded_blas();
        let total: usize = p.block_dims.iter().sum();
        assert!(!p.block_dims.is_empty(), "problem needs at least one PSD block");
        assert!(!p.cons.is_empty(), "problem needs at least one constraint");
        assert!(total <= MAX_TOTAL_DIM, "problem too large for the dense solver");
        let m = p.cons.len();
        let ns = p.num_scalars;
        let mut per_block: Vec<Vec<(usize, Vec<(usize, usize, f64)>)>> =
            vec![Vec::new(); p.block_dims.len()];
        let mut af = Array2::zeros((m, ns));
        for (c, con) in p.cons.iter().enumerate() {
            let mut by_block: BTreeMap<usize, Vec<(usize, usize, f64)>> = BTreeMap::new();
            for (&(b, i, j), &v) in &con.mat {
                if v != 0.0 {
                    by_block.entry(b).or_default().push((i, j, v));
                }
            }
            for (b, entries) in by_block {
                per_block[b].push((c, entries));
            }
            for (&s, &v) in &con.scal {
                af[(c, s)] = v;
            }
        }
        let b = Array1::from_vec(p.rhs.clone());
        let cf = Array1::from_vec(p.obj_scalars.clone());
        let zero_objective =
            p.obj_blocks.iter().all(|c| c.iter().all(|&v| v == 0.0)) && cf.iter().all(|&v| v == 0.0);
        let bnorm = b.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        let cnorm = p
            .obj_blocks
            .iter()
            .flat_map(|c| c.iter())
            .chain(cf.iter())
            .fold(0.0f64, |a, &v| a.max(v.abs()));
        Hsd { p, opts, m, ns, dims: p.block_dims.clone(), per_block, af, b, cf, zero_objective, bnorm, cnorm }
    }

    fn apply_a(&self, x: &[Array2<f64>]) -> Array1<f64> {
        let mut out = Array1::zeros(self.m);
        for (b, list) in self.per_block.iter().enumerate() {
            for (c, entries) in list {
                out[*c] += inner_entries(entries, &x[b]);
            }
        }
        out
    }

    fn apply_at(&self, y: &Array1<f64>) -> Vec<Array2<f64>> {
        let mut out: Vec<Array2<f64>> = self.dims.iter().map(|&d| Array2::zeros((d, d))).collect();
        for (b, list) in self.per_block.iter().enumerate() {
            for (c, entries) in list {
                let yc = y[*c];
                if yc == 0.0 {
                    continue;
                }
                for &(i, j, v) in entries {
                    out[b][(i, j)] += yc * v;
                    if i != j {
                        out[b][(j, i)] += yc * v;
                    }
                }
            }
        }
        out
    }

    fn inner_obj(&self, x: &[Array2<f64>]) -> f64 {
        self.p
            .obj_blocks
            .iter()
            .zip(x)
            .map(|(c, xb)| (c * xb).sum())
            .sum()
    }

    fn factor(&self, x: &[Array2<f64>], s: &[Array2<f64>]) -> Option<(Vec<Array2<f64>>, Vec<Array2<f64>>, Vec<Array2<f64>>)> {
        let mut lx = Vec::with_capacity(x.len());
        let mut ls = Vec::with_capacity(s.len());
        let mut sinv = Vec::with_capacity(s.len());
        for (xb, sb) in x.iter().zip(s) {
            lx.push(xb.cholesky(UPLO::Lower).ok()?);
            let l = sb.cholesky(UPLO::Lower).ok()?;
            let eye = Array2::eye(sb.nrows());
            let linv = l.solve_triangular(UPLO::Lower, Diag::NonUnit, &eye).ok()?;
            sinv.push(linv.t().dot(&linv));
            ls.push(l);
        }
        Some((lx, ls, sinv))
    }

    /// Largest step α ≤ cap with P + αD ⪰ 0, given the lower Cholesky factor of P.
    fn boundary(lp: &Array2<f64>, d: &Array2<f64>, cap: f64) -> f64 {
        let t1 = lp
            .solve_triangular(UPLO::Lower, Diag::NonUnit, d)
            .expect("triangular solve");
        let g = lp
            .solve_triangular(UPLO::Lower, Diag::NonUnit, &t1.t().to_owned())
            .expect("triangular solve");
        let g = sym(&g);
        match g.eigvalsh(UPLO::Lower) {
            Ok(ev) => {
                let lmin = ev.iter().cloned().fold(f64::INFINITY, f64::min);
                if lmin >= 0.0 {
                    cap
                } else {
                    cap.min(-1.0 / lmin)
                }
            }
            Err(_) => 0.0,
        }
    }

    fn run(self) -> SdpSolution {
        let amax = self
            .p
            .cons
            .iter()
            .flat_map(|c| c.mat.values().chain(c.scal.values()))
            .fold(0.0f64, |a, &v| a.max(v.abs()));
        let xi = amax.max(self.bnorm).max(self.cnorm).max(1.0);

        let mut pt = Point {
            x: self.dims.iter().map(|&d| Array2::eye(d) * xi).collect(),
            s: self.dims.iter().map(|&d| Array2::eye(d) * xi).collect(),
            lx: Vec::new(),
            ls: Vec::new(),
            sinv: Vec::new(),
            y: Array1::zeros(self.m),
            u: Array1::zeros(self.ns),
            tau: 1.0,
            kappa: 1.0,
        };
        let (lx, ls, sinv) = self.factor(&pt.x, &pt.s).expect("identity start must factor");
        pt.lx = lx;
        pt.ls = ls;
        pt.sinv = sinv;

        let nn: usize = self.dims.iter().sum::<usize>();
        let mut history = Vec::new();
        let mut mu0 = f64::NAN;

        for iter in 0..=self.opts.max_iter {
            // residuals
            let ax = self.apply_a(&pt.x);
            let rp = &ax + &self.af.dot(&pt.u) - &(&self.b * pt.tau);
            let aty = self.apply_at(&pt.y);
            let rd: Vec<Array2<f64>> = (0..self.dims.len())
                .map(|b| &aty[b] + &pt.s[b] - &(&self.p.obj_blocks[b] * pt.tau))
                .collect();
            let rf = self.af.t().dot(&pt.y) - &self.cf * pt.tau;
            let cx = self.inner_obj(&pt.x) + self.cf.dot(&pt.u);
            let by = self.b.dot(&pt.y);
            let rg = cx - by + pt.kappa;

            let trace_xs: f64 = pt.x.iter().zip(&pt.s).map(|(x, s)| (x * s).sum()).sum();
            let mu = (trace_xs + pt.tau * pt.kappa) / (nn as f64 + 1.0);
            if iter == 0 {
                mu0 = mu;
            }

            let pobj = cx / pt.tau;
            let dobj = by / pt.tau;
            let pinf_vec = &rp / pt.tau;
            let maxviol = pinf_vec.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
            let pinf = maxviol / (1.0 + self.bnorm);
            let dinf_mat = rd
                .iter()
                .map(|r| r.iter().fold(0.0f64, |a, &v| a.max(v.abs())))
                .fold(0.0f64, f64::max)
                / pt.tau;
            let dinf_sc = rf.iter().fold(0.0f64, |a, &v| a.max(v.abs())) / pt.tau;
            let dinf = dinf_mat.max(dinf_sc) / (1.0 + self.cnorm);
            let relgap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());

            history.push(IterStats {
                mu,
                primal_infeas: pinf,
                dual_infeas: dinf,
                rel_gap: relgap,
                tau: pt.tau,
                kappa: pt.kappa,
                step: 0.0,
            });

            let finish = |status: SdpStatus, pt: &Point, history: Vec<IterStats>, gap_override: Option<f64>| {
                let block_values: Vec<Array2<f64>> = pt.x.iter().map(|x| x / pt.tau).collect();
                SdpSolution {
                    status,
                    block_values,
                    scalar_values: (&pt.u / pt.tau).to_vec(),
                    dual_y: (&pt.y / pt.tau).to_vec(),
                    primal_objective: pobj,
                    dual_objective: dobj,
                    duality_gap: gap_override.unwrap_or(pobj - dobj),
                    max_constraint_violation: maxviol,
                    iterations: iter,
                    history,
                }
            };

            if pinf <= self.opts.feas_tol && dinf <= self.opts.feas_tol && relgap <= self.opts.gap_tol {
                return finish(SdpStatus::Optimal, &pt, history, None);
            }
            // Any feasible point of a zero-objective problem is optimal.
            if self.opts.stop_when_feasible
                && self.zero_objective
                && pt.tau >= 1e-3
                && maxviol <= self.opts.feas_tol * (1.0 + self.bnorm)
            {
                return finish(SdpStatus::Optimal, &pt, history, Some(0.0));
            }

            // Infeasibility: the embedding drives τ → 0 and leaves an
            // improving ray in (y, S). Only report it if the ray verifies.
            if pt.kappa / pt.tau > 1e8 && mu / mu0 < 1e-8 {
                if by > 0.0 {
                    let yhat = &pt.y / by;
                    let athat = self.apply_at(&yhat);
                    let ray_tol = 1e-6;
                    let mut ok = self
                        .af
                        .t()
                        .dot(&yhat)
                        .iter()
                        .all(|&v| v.abs() <= ray_tol * (1.0 + yhat.iter().fold(0.0f64, |a, &w| a.max(w.abs()))));
                    if ok {
                        for a in &athat {
                            let neg = -a;
                            let scale = 1.0 + a.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
                            match neg.eigvalsh(UPLO::Lower) {
                                Ok(ev) => {
                                    if ev.iter().cloned().fold(f64::INFINITY, f64::min) < -ray_tol * scale {
                                        ok = false;
                                        break;
                                    }
                                }
                                Err(_) => {
                                    ok = false;
                                    break;
                                }
                            }
                        }
                    }
                    if ok {
                        let mut sol = finish(SdpStatus::Infeasible, &pt, history, None);
                        sol.dual_y = yhat.to_vec();
                        return sol;
                    }
                }
                // τ → 0 without a verifiable certificate: ill-posed or
                // dual-infeasible; either way no trustworthy answer.
                if pt.tau < 1e-12 {
                    return finish(SdpStatus::NumericalFailure, &pt, history, None);
                }
            }

            if iter == self.opts.max_iter {
                return finish(SdpStatus::MaxIter, &pt, history, None);
            }

            // ---- Schur complement pieces ------------------------------------
            let nb = self.dims.len();
            let mut mmat = Array2::<f64>::zeros((self.m, self.m));
            let mut v = Array1::<f64>::zeros(self.m);
            let mut w_sc = 0.0f64;
            for b in 0..nb {
                let n = self.dims[b];
                let x = &pt.x[b];
                let sinv = &pt.sinv[b];
                let list = &self.per_block[b];
                for (pos, (c, entries)) in list.iter().enumerate() {
                    // W = X A_c Sinv via rank-one accumulation
                    let mut wm = Array2::<f64>::zeros((n, n));
                    for &(i, j, val) in entries {
                        {
                            let xr = x.row(i);
                            let sr = sinv.row(j);
                            for (r, &xv) in xr.iter().enumerate() {
                                let f = val * xv;
                                wm.row_mut(r).scaled_add(f, &sr);
                            }
                        }
                        if i != j {
                            let xr = x.row(j);
                            let sr = sinv.row(i);
                            for (r, &xv) in xr.iter().enumerate() {
                                let f = val * xv;
                                wm.row_mut(r).scaled_add(f, &sr);
                            }
                        }
                    }
                    for (c2, entries2) in list.iter().take(pos + 1) {
                        let val = inner_entries(entries2, &wm);
                        mmat[(*c, *c2)] += val;
                        if c != c2 {
                            mmat[(*c2, *c)] += val;
                        }
                    }
                    if self.p.obj_blocks[b].iter().any(|&z| z != 0.0) {
                        v[*c] += (&self.p.obj_blocks[b] * &wm).sum();
                    }
                }
                let cb = &self.p.obj_blocks[b];
                if cb.iter().any(|&z| z != 0.0) {
                    let wc = x.dot(cb).dot(sinv);
                    w_sc += (cb * &wc).sum();
                }
            }

            // Reduced Newton matrix over (dy, du, dτ).
            let dim_r = self.m + self.ns + 1;
            let mut rmat = Array2::<f64>::zeros((dim_r, dim_r));
            rmat.slice_mut(ndarray::s![..self.m, ..self.m]).assign(&mmat);
            for c in 0..self.m {
                for s in 0..self.ns {
                    rmat[(c, self.m + s)] = self.af[(c, s)];
                    rmat[(self.m + s, c)] = self.af[(c, s)];
                }
                rmat[(c, dim_r - 1)] = -(self.b[c] + v[c]);
                rmat[(dim_r - 1, c)] = v[c] - self.b[c];
            }
            for s in 0..self.ns {
                rmat[(self.m + s, dim_r - 1)] = -self.cf[s];
                rmat[(dim_r - 1, self.m + s)] = self.cf[s];
            }
            rmat[(dim_r - 1, dim_r - 1)] = -(w_sc + pt.kappa / pt.tau);
            let lu = match rmat.factorize_into() {
                Ok(f) => f,
                Err(_) => return finish(SdpStatus::NumericalFailure, &pt, history, None),
            };

            let xrd: Vec<Array2<f64>> = (0..nb).map(|b| pt.x[b].dot(&rd[b])).collect();
            let xs: Vec<Array2<f64>> = (0..nb).map(|b| pt.x[b].dot(&pt.s[b])).collect();

            // Solves the reduced system for a given complementarity target
            // (K_b, kc), where dX S + X dS = K and τ dκ + κ dτ = kc.
            let solve_dir = |k: &[Array2<f64>], kc: f64| -> Option<Direction> {
                let mut r_vec = Array1::<f64>::zeros(dim_r);
                let mut ts: Vec<Array2<f64>> = Vec::with_capacity(nb);
                for b in 0..nb {
                    ts.push((&k[b] + &xrd[b]).dot(&pt.sinv[b]));
                }
                let at_t = self.apply_a(&ts);
                for c in 0..self.m {
                    r_vec[c] = -rp[c] - at_t[c];
                }
                for s in 0..self.ns {
                    r_vec[self.m + s] = -rf[s];
                }
                let ct: f64 = (0..nb).map(|b| (&self.p.obj_blocks[b] * &ts[b]).sum()).sum();
                r_vec[dim_r - 1] = -rg - ct - kc / pt.tau;

                let sol = lu.solve(&r_vec).ok()?;
                let dy = sol.slice(ndarray::s![..self.m]).to_owned();
                let du = sol.slice(ndarray::s![self.m..self.m + self.ns]).to_owned();
                let dtau = sol[dim_r - 1];

                let atdy = self.apply_at(&dy);
                let mut ds = Vec::with_capacity(nb);
                let mut dx = Vec::with_capacity(nb);
                for b in 0..nb {
                    let dsb = -&rd[b] - &atdy[b] + &(&self.p.obj_blocks[b] * dtau);
                    let dxb = (&k[b] - &pt.x[b].dot(&dsb)).dot(&pt.sinv[b]);
                    dx.push(sym(&dxb));
                    ds.push(dsb);
                }
                let dkappa = (kc - pt.kappa * dtau) / pt.tau;
                Some(Direction { dx, ds, dy, du, dtau, dkappa })
            };

            let max_step = |d: &Direction| -> f64 {
                let mut a = f64::INFINITY;
                for b in 0..nb {
                    a = Self::boundary(&pt.lx[b], &d.dx[b], a);
                    a = Self::boundary(&pt.ls[b], &d.ds[b], a);
                }
                if d.dtau < 0.0 {
                    a = a.min(-pt.tau / d.dtau);
                }
                if d.dkappa < 0.0 {
                    a = a.min(-pt.kappa / d.dkappa);
                }
                a
            };

            // predictor
            let k_aff: Vec<Array2<f64>> = xs.iter().map(|p| -p).collect();
            let aff = match solve_dir(&k_aff, -pt.tau * pt.kappa) {
                Some(d) => d,
                None => return finish(SdpStatus::NumericalFailure, &pt, history, None),
            };
            let a_aff = max_step(&aff).min(1.0);
            let mut tr_aff = 0.0;
            for b in 0..nb {
                let xn = &pt.x[b] + &(&aff.dx[b] * a_aff);
                let sn = &pt.s[b] + &(&aff.ds[b] * a_aff);
                tr_aff += (&xn * &sn).sum();
            }
            let mu_aff = (tr_aff
                + (pt.tau + a_aff * aff.dtau) * (pt.kappa + a_aff * aff.dkappa))
                / (nn as f64 + 1.0);
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

            // corrector
            let mut k_cor = Vec::with_capacity(nb);
            for b in 0..nb {
                let mut kb = -&xs[b] - &aff.dx[b].dot(&aff.ds[b]);
                for i in 0..self.dims[b] {
                    kb[(i, i)] += sigma * mu;
                }
                k_cor.push(kb);
            }
            let kc = sigma * mu - pt.tau * pt.kappa - aff.dtau * aff.dkappa;
            let dir = match solve_dir(&k_cor, kc) {
                Some(d) => d,
                None => return finish(SdpStatus::NumericalFailure, &pt, history, None),
            };

            let mut alpha = (0.98 * max_step(&dir)).min(1.0);
            // Adopt the step, backing off if roundoff lands outside the cone.
            let mut adopted = false;
            for _ in 0..30 {
                let xn: Vec<Array2<f64>> =
                    (0..nb).map(|b| sym(&(&pt.x[b] + &(&dir.dx[b] * alpha)))).collect();
                let sn: Vec<Array2<f64>> =
                    (0..nb).map(|b| sym(&(&pt.s[b] + &(&dir.ds[b] * alpha)))).collect();
                let tn = pt.tau + alpha * dir.dtau;
                let kn = pt.kappa + alpha * dir.dkappa;
                if tn > 0.0 && kn > 0.0 {
                    if let Some((lx, ls, sinv)) = self.factor(&xn, &sn) {
                        pt.x = xn;
                        pt.s = sn;
                        pt.lx = lx;
                        pt.ls = ls;
                        pt.sinv = sinv;
                        pt.y = &pt.y + &(&dir.dy * alpha);
                        pt.u = &pt.u + &(&dir.du * alpha);
                        pt.tau = tn;
                        pt.kappa = kn;
                        adopted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            history.last_mut().unwrap().step = alpha;
            if !adopted || alpha < 1e-12 {
                return finish(SdpStatus::NumericalFailure, &pt, history, None);
            }
        }
        unreachable!("loop returns at max_iter");
    }
}

// ---------------------------------------------------------------------------
// Bisection

/// Finds the smallest `t` in `[lo, hi]` with `check(t)` true, assuming `check`
/// is monotone (false below some threshold, true above). Returns a value that
/// was itself verified feasible, within `tol·max(1, |hi|)` of the threshold.
/// `None` means `check(hi)` failed, i.e. infeasible everywhere.
pub fn bisect(mut check: impl FnMut(f64) -> bool, lo: f64, hi: f64, tol: f64) -> Option<f64> {
    assert!(lo < hi && tol > 0.0);
    if !check(hi) {
        return None;
    }
    if check(lo) {
        return Some(lo);
    }
    let (mut lo, mut hi) = (lo, hi);
    let width = tol * hi.abs().max(1.0);
    while hi - lo > width {
        let mid = 0.5 * (lo + hi);
        if check(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// Mirror image of [`bisect`]: largest verified-feasible `t`, assuming `check`
/// is true below the threshold. `None` means `check(lo)` failed.
pub fn bisect_max(mut check: impl FnMut(f64) -> bool, lo: f64, hi: f64, tol: f64) -> Option<f64> {
    assert!(lo < hi && tol > 0.0);
    if !check(lo) {
        return None;
    }
    if check(hi) {
        return Some(hi);
    }
    let (mut lo, mut hi) = (lo, hi);
    let width = tol * hi.abs().max(1.0);
    while hi - lo > width {
        let mid = 0.5 * (lo + hi);
        if check(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray_linalg::Cholesky;

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    #[test]
    fn trace_minimization_rank_one() {
        // min tr(X) s.t. X11 = 1, X ⪰ 0 (2x2) → 1 at X = e1 e1ᵀ
        let mut p = SdpProblem::new();
        let b = p.add_block(2);
        p.add_obj_entry(b, 0, 0, 1.0);
        p.add_obj_entry(b, 1, 1, 1.0);
        let c = p.add_constraint(1.0);
        p.add_cons_entry(c, b, 0, 0, 1.0);
        let sol = p.solve(&opts());
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.primal_objective - 1.0).abs() < 1e-6, "{}", sol.primal_objective);
        assert!(sol.duality_gap.abs() < 1e-7);
        assert!((sol.block_values[0][(0, 0)] - 1.0).abs() < 1e-6);
        assert!(sol.block_values[0][(1, 1)].abs() < 1e-6);
        // weak duality at the reported solution
        assert!(sol.dual_objective <= sol.primal_objective + 1e-7);
    }

    #[test]
    fn diagonal_lp_on_simplex() {
        // min x1 + 2 x2, x on the simplex (two 1x1 blocks) → 1 at (1, 0)
        let mut p = SdpProblem::new();
        let b1 = p.add_block(1);
        let b2 = p.add_block(1);
        p.add_obj_entry(b1, 0, 0, 1.0);
        p.add_obj_entry(b2, 0, 0, 2.0);
        let c = p.add_constraint(1.0);
        p.add_cons_entry(c, b1, 0, 0, 1.0);
        p.add_cons_entry(c, b2, 0, 0, 1.0);
        let sol = p.solve(&opts());
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.primal_objective - 1.0).abs() < 1e-6);
        assert!((sol.block_values[0][(0, 0)] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn free_variable_spectral_bound() {
        // min t s.t. [[t, 1], [1, t]] ⪰ 0 → t = 1
        let mut p = SdpProblem::new();
        let b = p.add_block(2);
        let t = p.add_scalar();
        p.add_obj_scalar(t, 1.0);
        let c1 = p.add_constraint(0.0);
        p.add_cons_entry(c1, b, 0, 0, 1.0);
        p.add_cons_scalar(c1, t, -1.0);
        let c2 = p.add_constraint(0.0);
        p.add_cons_entry(c2, b, 1, 1, 1.0);
        p.add_cons_scalar(c2, t, -1.0);
        let c3 = p.add_constraint(1.0);
        p.add_cons_entry(c3, b, 0, 1, 0.5); // symmetric pair sums to x12
        let sol = p.solve(&opts());
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.scalar_values[0] - 1.0).abs() < 1e-6, "{}", sol.scalar_values[0]);
    }

    #[test]
    fn infeasible_negative_diagonal() {
        // X11 = -1 with X ⪰ 0: infeasible, with a verified improving ray
        let mut p = SdpProblem::new();
        let b = p.add_block(1);
        let c = p.add_constraint(-1.0);
        p.add_cons_entry(c, b, 0, 0, 1.0);
        let sol = p.solve(&opts());
        assert_eq!(sol.status, SdpStatus::Infeasible);
        // ray normalized to bᵀy = 1 → y = -1, and -A*(y) = I ⪰ 0
        assert!((sol.dual_y[0] + 1.0).abs() < 1e-4, "{}", sol.dual_y[0]);
    }

    #[test]
    fn psd_blocks_pass_shifted_cholesky() {
        let mut p = SdpProblem::new();
        let b = p.add_block(3);
        p.add_obj_entry(b, 0, 0, 1.0);
        p.add_obj_entry(b, 1, 1, 1.0);
        p.add_obj_entry(b, 2, 2, 1.0);
        let c1 = p.add_constraint(1.0);
        p.add_cons_entry(c1, b, 0, 1, 0.5);
        let c2 = p.add_constraint(0.5);
        p.add_cons_entry(c2, b, 2, 2, 1.0);
        let sol = p.solve(&opts());
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!(sol.max_constraint_violation <= 1e-8);
        for blk in &sol.block_values {
            let shifted = blk + &(Array2::<f64>::eye(blk.nrows()) * 1e-8);
            assert!(shifted.cholesky(UPLO::Lower).is_ok());
        }
    }

    #[test]
    fn feasibility_early_exit() {
        let mut p = SdpProblem::new();
        let b = p.add_block(2);
        let c = p.add_constraint(1.0);
        p.add_cons_entry(c, b, 0, 0, 1.0);
        let mut o = opts();
        o.stop_when_feasible = true;
        let sol = p.solve(&o);
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!(sol.max_constraint_violation <= 1e-8 * 2.0);
        let full = p.solve(&opts());
        assert!(sol.iterations <= full.iterations);
    }

    #[test]
    fn deterministic_resolve() {
        let mut p = SdpProblem::new();
        let b = p.add_block(3);
        let t = p.add_scalar();
        p.add_obj_scalar(t, 1.0);
        for i in 0..3 {
            let c = p.add_constraint(((i + 1) as f64).sin());
            p.add_cons_entry(c, b, i, i, 1.0);
            p.add_cons_entry(c, b, 0, i, 0.3 * (i as f64 + 1.0));
            p.add_cons_scalar(c, t, -1.0);
        }
        let s1 = p.solve(&opts());
        let s2 = p.solve(&opts());
        assert_eq!(s1.status, s2.status);
        assert_eq!(s1.primal_objective.to_bits(), s2.primal_objective.to_bits());
        for (a, b) in s1.block_values[0].iter().zip(s2.block_values[0].iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn triplet_dump_roundtrip_smoke() {
        let mut p = SdpProblem::new();
        let b = p.add_block(2);
        let t = p.add_scalar();
        p.add_obj_entry(b, 0, 0, 1.0);
        let c = p.add_constraint(2.0);
        p.add_cons_entry(c, b, 0, 1, 0.5);
        p.add_cons_scalar(c, t, 1.0);
        let mut buf = Vec::new();
        p.write_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("dim 0 2"));
        assert!(text.contains("rhs 0 2"));
        assert!(text.contains("con 0 0 0 1 0.5"));
    }

    #[test]
    fn bisect_step_function() {
        let got = bisect(|t| t >= 0.5, 0.0, 1.0, 1e-4).unwrap();
        assert!((got - 0.5).abs() <= 2e-4);
        assert!(got >= 0.5); // returned value itself is feasible
        assert_eq!(bisect(|_| true, 0.0, 1.0, 1e-4), Some(0.0));
        assert_eq!(bisect(|_| false, 0.0, 1.0, 1e-4), None);
    }

    #[test]
    fn bisect_call_budget() {
        let mut calls = 0;
        bisect(
            |t| {
                calls += 1;
                t >= 0.3
            },
            0.0,
            1.0,
            1e-4,
        )
        .unwrap();
        // endpoint probes + ⌈log2(1/1e-4)⌉
        assert!(calls <= 2 + 14, "calls = {calls}");
    }

    #[test]
    fn bisect_max_mirror() {
        let got = bisect_max(|t| t <= 0.7, 0.0, 1.0, 1e-4).unwrap();
        assert!((got - 0.7).abs() <= 2e-4);
        assert!(got <= 0.7);
        assert_eq!(bisect_max(|_| true, 0.0, 2.0, 1e-4), Some(2.0));
        assert_eq!(bisect_max(|_| false, 0.0, 2.0, 1e-4), None);
    }
}
