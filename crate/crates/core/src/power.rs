//! Structure-preserving power network model: data ingestion, power-flow
//! equilibrium, relative-coordinate reduction, and polynomial recasting.
//!
//! Buses stay explicit (no network reduction): generators carry swing
//! dynamics, load buses are frequency-dependent. The dynamic model in
//! absolute coordinates is
//!
//!   loads:      D_i δ̇_i = −P_Di − P_Ei(δ)
//!   generators: δ̇_i = ω_i,  M_i ω̇_i = P_Mi − P_Ei(δ) − D_i ω_i
//!
//! with P_Ei(δ) = E_i² G_ii + Σ_j E_i E_j |Y_ij| cos(δ_i − δ_j − θ_ij).
//! All state is then taken relative to a reference generator and shifted so
//! the stable equilibrium sits at the origin; sines and cosines of the
//! relative angles are recast into polynomial variables
//! z_{2i−1} = sin(δ_in), z_{2i} = 1 − cos(δ_in), constrained to the circle
//! z_{2i−1}² + z_{2i}² − 2 z_{2i} = 0.

use crate::model::{decompose_node_overlap, InterconnectedSystem, ModelError, PolySystem};
use crate::poly::{Polynomial, VarId, VarSpace};
use ndarray::{Array1, Array2};
use ndarray_linalg::Solve;
use serde::Deserialize;
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PowerError {
    #[error("cannot read network file: {0}")]
    Io(#[from] std::io::Error),
    #[error("network file does not parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid network: {0}")]
    Validation(String),
    #[error("power-flow Jacobian is singular at iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("power flow did not converge in {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("generator damping/inertia ratios differ by {deviation:.3e}; the relative-coordinate reduction needs a uniform ratio")]
    NonUniformDamping { deviation: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone)]
pub enum BusKind {
    /// Frequency-dependent load: demand `p_load` (p.u.), coefficient
    /// `damping` (p.u.·s).
    Load { p_load: f64, damping: f64 },
    /// Swing-equation generator: `inertia` M (p.u.·s²), `damping` D
    /// (p.u.·s), mechanical input `p_mech` (p.u.).
    Generator { inertia: f64, damping: f64, p_mech: f64 },
}

#[derive(Debug, Clone)]
pub struct Bus {
    pub id: u32,
    pub voltage: f64,
    pub kind: BusKind,
}

impl Bus {
    pub fn is_generator(&self) -> bool {
        matches!(self.kind, BusKind::Generator { .. })
    }
}

/// Branch with series impedance and (unused for active power) line charging.
/// Endpoints are internal bus indices.
#[derive(Debug, Clone)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub resistance: f64,
    pub reactance: f64,
    pub charging: f64,
}

#[derive(Debug, Clone)]
pub struct PowerNetwork {
    pub frequency: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    /// Internal index of the reference generator.
    pub reference: usize,
}

// --- file format ---------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    system: RawSystem,
    bus: Vec<RawBus>,
    line: Vec<RawLine>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    frequency: f64,
    reference_bus: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBus {
    id: u32,
    kind: String,
    voltage: f64,
    inertia_h: Option<f64>,
    damping_over_inertia: Option<f64>,
    p_mech: Option<f64>,
    p_load: Option<f64>,
    damping: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLine {
    from: u32,
    to: u32,
    resistance: f64,
    reactance: f64,
    charging: f64,
}

impl PowerNetwork {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PowerError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, PowerError> {
        let raw: RawFile = toml::from_str(text)?;
        let bad = |msg: String| PowerError::Validation(msg);

        if raw.system.frequency <= 0.0 {
            return Err(bad("frequency must be positive".into()));
        }
        let omega_s = 2.0 * std::f64::consts::PI * raw.system.frequency;

        let mut buses = Vec::with_capacity(raw.bus.len());
        for rb in &raw.bus {
            if buses.iter().any(|b: &Bus| b.id == rb.id) {
                return Err(bad(format!("duplicate bus id {}", rb.id)));
            }
            if rb.voltage <= 0.0 {
                return Err(bad(format!("bus {}: voltage must be positive", rb.id)));
            }
            let kind = match rb.kind.as_str() {
                "load" => {
                    let p_load = rb.p_load.ok_or_else(|| bad(format!("bus {}: load needs p_load", rb.id)))?;
                    let damping = rb.damping.ok_or_else(|| bad(format!("bus {}: load needs damping", rb.id)))?;
                    if rb.inertia_h.is_some() || rb.p_mech.is_some() || rb.damping_over_inertia.is_some() {
                        return Err(bad(format!("bus {}: generator fields on a load", rb.id)));
                    }
                    if damping <= 0.0 {
                        return Err(bad(format!("bus {}: load damping must be positive", rb.id)));
                    }
                    if p_load < 0.0 {
                        return Err(bad(format!("bus {}: p_load must be nonnegative", rb.id)));
                    }
                    BusKind::Load { p_load, damping }
                }
                "generator" => {
                    let h = rb.inertia_h.ok_or_else(|| bad(format!("bus {}: generator needs inertia_h", rb.id)))?;
                    let ratio = rb
                        .damping_over_inertia
                        .ok_or_else(|| bad(format!("bus {}: generator needs damping_over_inertia", rb.id)))?;
                    let p_mech = rb.p_mech.ok_or_else(|| bad(format!("bus {}: generator needs p_mech", rb.id)))?;
                    if rb.p_load.is_some() || rb.damping.is_some() {
                        return Err(bad(format!("bus {}: load fields on a generator", rb.id)));
                    }
                    if h <= 0.0 || ratio <= 0.0 {
                        return Err(bad(format!("bus {}: inertia and damping ratio must be positive", rb.id)));
                    }
                    if p_mech < 0.0 {
                        return Err(bad(format!("bus {}: p_mech must be nonnegative", rb.id)));
                    }
                    let inertia = 2.0 * h / omega_s;
                    BusKind::Generator { inertia, damping: ratio * inertia, p_mech }
                }
                other => return Err(bad(format!("bus {}: unknown kind `{other}`", rb.id))),
            };
            buses.push(Bus { id: rb.id, voltage: rb.voltage, kind });
        }

        let index_of = |id: u32| buses.iter().position(|b| b.id == id);
        let mut lines = Vec::with_capacity(raw.line.len());
        for rl in &raw.line {
            let from = index_of(rl.from).ok_or_else(|| bad(format!("line references unknown bus {}", rl.from)))?;
            let to = index_of(rl.to).ok_or_else(|| bad(format!("line references unknown bus {}", rl.to)))?;
            if from == to {
                return Err(bad(format!("line {}-{} is a self loop", rl.from, rl.to)));
            }
            if rl.resistance < 0.0 || rl.charging < 0.0 || rl.resistance.hypot(rl.reactance) == 0.0 {
                return Err(bad(format!("line {}-{}: bad impedance", rl.from, rl.to)));
            }
            lines.push(Line {
                from,
                to,
                resistance: rl.resistance,
                reactance: rl.reactance,
                charging: rl.charging,
            });
        }

        let reference = index_of(raw.system.reference_bus)
            .ok_or_else(|| bad(format!("reference bus {} not found", raw.system.reference_bus)))?;
        if !buses[reference].is_generator() {
            return Err(bad(format!("reference bus {} is not a generator", raw.system.reference_bus)));
        }

        Ok(PowerNetwork { frequency: raw.system.frequency, buses, lines, reference })
    }

    pub fn num_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn index_of(&self, bus_id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == bus_id)
    }

    pub fn voltages(&self) -> Vec<f64> {
        self.buses.iter().map(|b| b.voltage).collect()
    }

    /// Internal indices of load buses, in file order.
    pub fn load_indices(&self) -> Vec<usize> {
        (0..self.buses.len()).filter(|&i| !self.buses[i].is_generator()).collect()
    }

    /// Internal indices of non-reference generators, in file order.
    pub fn other_generator_indices(&self) -> Vec<usize> {
        (0..self.buses.len())
            .filter(|&i| self.buses[i].is_generator() && i != self.reference)
            .collect()
    }

    /// Index of the line joining two bus ids, if any.
    pub fn line_between(&self, a: u32, b: u32) -> Option<usize> {
        let (a, b) = (self.index_of(a)?, self.index_of(b)?);
        self.lines
            .iter()
            .position(|l| (l.from, l.to) == (a, b) || (l.from, l.to) == (b, a))
    }

    pub fn ybus(&self) -> YbusPolar {
        self.ybus_without(&[])
    }

    /// Bus admittance matrix with the given lines removed (by index).
    pub fn ybus_without(&self, removed: &[usize]) -> YbusPolar {
        let n = self.buses.len();
        let mut re = vec![0.0; n * n];
        let mut im = vec![0.0; n * n];
        for (k, l) in self.lines.iter().enumerate() {
            if removed.contains(&k) {
                continue;
            }
            let d = l.resistance * l.resistance + l.reactance * l.reactance;
            let (g, b) = (l.resistance / d, -l.reactance / d);
            for (i, j) in [(l.from, l.to), (l.to, l.from)] {
                re[i * n + j] -= g;
                im[i * n + j] -= b;
            }
            for i in [l.from, l.to] {
                re[i * n + i] += g;
                im[i * n + i] += b + l.charging / 2.0;
            }
        }
        let mut mag = vec![0.0; n * n];
        let mut ang = vec![0.0; n * n];
        for i in 0..n * n {
            mag[i] = re[i].hypot(im[i]);
            ang[i] = if mag[i] > 0.0 { im[i].atan2(re[i]) } else { 0.0 };
        }
        let g_diag = (0..n).map(|i| re[i * n + i]).collect();
        YbusPolar { n, mag, ang, g_diag }
    }
}

/// Polar-form bus admittance matrix |Y_ij|∠θ_ij plus the diagonal
/// conductances G_ii that enter the active-power injections.
#[derive(Debug, Clone)]
pub struct YbusPolar {
    n: usize,
    mag: Vec<f64>,
    ang: Vec<f64>,
    g_diag: Vec<f64>,
}

impl YbusPolar {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn magnitude(&self, i: usize, j: usize) -> f64 {
        self.mag[i * self.n + j]
    }

    pub fn angle(&self, i: usize, j: usize) -> f64 {
        self.ang[i * self.n + j]
    }

    pub fn conductance(&self, i: usize) -> f64 {
        self.g_diag[i]
    }

    /// Active-power injections P_Ei(δ) at every bus.
    pub fn injections(&self, volts: &[f64], delta: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.injection_at(volts, delta, i)).collect()
    }

    pub fn injection_at(&self, volts: &[f64], delta: &[f64], i: usize) -> f64 {
        let mut p = volts[i] * volts[i] * self.g_diag[i];
        for j in 0..self.n {
            if j == i {
                continue;
            }
            let m = self.magnitude(i, j);
            if m > 0.0 {
                p += volts[i] * volts[j] * m * (delta[i] - delta[j] - self.angle(i, j)).cos();
            }
        }
        p
    }

    /// ∂P_Ei/∂δ_k for all i, k.
    fn injection_jacobian(&self, volts: &[f64], delta: &[f64]) -> Array2<f64> {
        let n = self.n;
        let mut jac = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                if j == i {
                    continue;
                }
                let m = self.magnitude(i, j);
                if m > 0.0 {
                    let s = volts[i] * volts[j] * m * (delta[i] - delta[j] - self.angle(i, j)).sin();
                    jac[(i, j)] += s;
                    jac[(i, i)] -= s;
                }
            }
        }
        jac
    }
}

/// Convenience wrapper over the full-network admittance matrix.
pub fn electrical_power(net: &PowerNetwork, delta: &[f64]) -> Vec<f64> {
    net.ybus().injections(&net.voltages(), delta)
}

#[derive(Debug, Clone)]
pub struct Equilibrium {
    /// Absolute bus angles (rad), reference fixed at zero.
    pub delta_abs: Vec<f64>,
    /// ∞-norm of the non-reference power-balance residuals.
    pub residual: f64,
    /// Mechanical power of the reference generator implied by balance; the
    /// reference acts as slack so losses land here, not in a residual.
    pub slack_p_mech: f64,
}

pub fn solve_equilibrium(net: &PowerNetwork, guess: Option<&[f64]>) -> Result<Equilibrium, PowerError> {
    solve_equilibrium_with(net, &net.ybus(), guess)
}

/// Damped Newton iteration on the non-reference power-balance equations
/// (loads: −P_Di − P_Ei = 0, generators: P_Mi − P_Ei = 0), with the
/// reference angle fixed at zero.
pub fn solve_equilibrium_with(
    net: &PowerNetwork,
    ybus: &YbusPolar,
    guess: Option<&[f64]>,
) -> Result<Equilibrium, PowerError> {
    let n = net.num_buses();
    let volts = net.voltages();
    let unknowns: Vec<usize> = (0..n).filter(|&i| i != net.reference).collect();

    let mut delta = match guess {
        Some(g) if g.len() == n => g.to_vec(),
        Some(_) => return Err(PowerError::Validation("guess length != bus count".into())),
        None => vec![0.0; n],
    };
    delta[net.reference] = 0.0;

    let residual = |delta: &[f64]| -> Array1<f64> {
        let p = ybus.injections(&volts, delta);
        Array1::from_iter(unknowns.iter().map(|&i| match net.buses[i].kind {
            BusKind::Load { p_load, .. } => -p_load - p[i],
            BusKind::Generator { p_mech, .. } => p_mech - p[i],
        }))
    };

    let mut r = residual(&delta);
    let mut rnorm = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for it in 0..50 {
        if rnorm < 1e-10 {
            let slack = ybus.injection_at(&volts, &delta, net.reference);
            return Ok(Equilibrium { delta_abs: delta, residual: rnorm, slack_p_mech: slack });
        }
        let pjac = ybus.injection_jacobian(&volts, &delta);
        let mut jac = Array2::zeros((unknowns.len(), unknowns.len()));
        for (a, &i) in unknowns.iter().enumerate() {
            for (b, &k) in unknowns.iter().enumerate() {
                jac[(a, b)] = -pjac[(i, k)];
            }
        }
        let step = jac
            .solve(&(-&r))
            .map_err(|_| PowerError::SingularJacobian { iteration: it })?;

        // backtrack until the residual shrinks; take the last tiny step
        // regardless so a stalled iteration still terminates
        let mut alpha = 1.0;
        loop {
            let mut trial = delta.clone();
            for (a, &i) in unknowns.iter().enumerate() {
                trial[i] += alpha * step[a];
            }
            let tr = residual(&trial);
            let tn = tr.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if tn < rnorm || alpha < 1e-9 {
                delta = trial;
                r = tr;
                rnorm = tn;
                break;
            }
            alpha /= 2.0;
        }
    }
    Err(PowerError::NoConvergence { iterations: 50, residual: rnorm })
}

/// Vector field in shifted relative coordinates
/// x = (δ_1n, …, δ_{N−1,n}, ω-relative of non-reference generators, ω_n),
/// measured from the equilibrium so x = 0 is the operating point. Angle
/// slots list loads first, then non-reference generators.
#[derive(Debug, Clone)]
pub struct RelativeSystem {
    pub ybus: YbusPolar,
    pub volts: Vec<f64>,
    /// Absolute equilibrium angles defining the shift.
    pub delta_eq: Vec<f64>,
    pub angle_nodes: Vec<usize>,
    pub angle_bus_ids: Vec<u32>,
    /// Non-reference generators, then the reference.
    pub speed_nodes: Vec<usize>,
    pub speed_bus_ids: Vec<u32>,
    pub reference: usize,
    /// Uniform damping/inertia ratio of the generators.
    pub lambda: f64,
    /// Demand per angle slot (zero on generator slots).
    pub p_load: Vec<f64>,
    /// Load frequency coefficient per angle slot (unused on generator slots).
    pub d_load: Vec<f64>,
    /// Inertia per speed slot.
    pub inertia: Vec<f64>,
    /// Mechanical power per speed slot; the reference slot holds the slack
    /// value from the equilibrium.
    pub p_mech: Vec<f64>,
    pub load_count: usize,
}

pub fn build_relative_system(net: &PowerNetwork, eq: &Equilibrium) -> Result<RelativeSystem, PowerError> {
    build_relative_system_with(net, net.ybus(), eq)
}

pub fn build_relative_system_with(
    net: &PowerNetwork,
    ybus: YbusPolar,
    eq: &Equilibrium,
) -> Result<RelativeSystem, PowerError> {
    let gens: Vec<usize> = (0..net.num_buses()).filter(|&i| net.buses[i].is_generator()).collect();
    let ratio_of = |i: usize| match net.buses[i].kind {
        BusKind::Generator { inertia, damping, .. } => damping / inertia,
        _ => unreachable!(),
    };
    let lambda = ratio_of(net.reference);
    let deviation = gens
        .iter()
        .map(|&i| (ratio_of(i) - lambda).abs())
        .fold(0.0f64, f64::max);
    if deviation > 1e-9 * lambda.max(1.0) {
        return Err(PowerError::NonUniformDamping { deviation });
    }

    let loads = net.load_indices();
    let others = net.other_generator_indices();
    let angle_nodes: Vec<usize> = loads.iter().chain(&others).copied().collect();
    let speed_nodes: Vec<usize> = others.iter().copied().chain([net.reference]).collect();

    let mut p_load = Vec::new();
    let mut d_load = Vec::new();
    for &i in &angle_nodes {
        match net.buses[i].kind {
            BusKind::Load { p_load: p, damping } => {
                p_load.push(p);
                d_load.push(damping);
            }
            BusKind::Generator { .. } => {
                p_load.push(0.0);
                d_load.push(1.0);
            }
        }
    }
    let mut inertia = Vec::new();
    let mut p_mech = Vec::new();
    for &i in &speed_nodes {
        match net.buses[i].kind {
            BusKind::Generator { inertia: m, p_mech: pm, .. } => {
                inertia.push(m);
                p_mech.push(if i == net.reference { eq.slack_p_mech } else { pm });
            }
            _ => unreachable!(),
        }
    }

    Ok(RelativeSystem {
        ybus,
        volts: net.voltages(),
        delta_eq: eq.delta_abs.clone(),
        angle_bus_ids: angle_nodes.iter().map(|&i| net.buses[i].id).collect(),
        speed_bus_ids: speed_nodes.iter().map(|&i| net.buses[i].id).collect(),
        angle_nodes,
        speed_nodes,
        reference: net.reference,
        lambda,
        p_load,
        d_load,
        inertia,
        p_mech,
        load_count: loads.len(),
    })
}

impl RelativeSystem {
    pub fn dim(&self) -> usize {
        self.angle_nodes.len() + self.speed_nodes.len()
    }

    pub fn state_labels(&self) -> Vec<String> {
        self.angle_bus_ids
            .iter()
            .map(|id| format!("d{id}"))
            .chain(self.speed_bus_ids.iter().map(|id| format!("w{id}")))
            .collect()
    }

    /// Trigonometric right-hand side ẋ = f(x).
    pub fn rhs(&self, x: &[f64], out: &mut [f64]) {
        let nang = self.angle_nodes.len();
        let nspd = self.speed_nodes.len();
        let mut delta = self.delta_eq.clone();
        for (k, &b) in self.angle_nodes.iter().enumerate() {
            delta[b] += x[k];
        }
        let p = self.ybus.injections(&self.volts, &delta);
        let omega_n = x[nang + nspd - 1];

        for (k, &b) in self.angle_nodes.iter().enumerate() {
            out[k] = if k < self.load_count {
                (-self.p_load[k] - p[b]) / self.d_load[k] - omega_n
            } else {
                x[nang + (k - self.load_count)]
            };
        }
        let gn = (self.p_mech[nspd - 1] - p[self.reference]) / self.inertia[nspd - 1];
        for s in 0..nspd - 1 {
            let b = self.speed_nodes[s];
            out[nang + s] = (self.p_mech[s] - p[b]) / self.inertia[s] - gn - self.lambda * x[nang + s];
        }
        out[nang + nspd - 1] = gn - self.lambda * omega_n;
    }
}

/// Correspondence between relative coordinates x and recast coordinates z.
#[derive(Debug, Clone)]
pub struct RecastMap {
    pub space: Arc<VarSpace>,
    pub angle_count: usize,
    pub load_count: usize,
    pub speed_count: usize,
    pub angle_bus_ids: Vec<u32>,
    pub speed_bus_ids: Vec<u32>,
}

impl RecastMap {
    pub fn dim(&self) -> usize {
        2 * self.angle_count + self.speed_count
    }

    /// Variable ids (sin, 1−cos) of an angle slot.
    pub fn pair_ids(&self, slot: usize) -> (VarId, VarId) {
        ((2 * slot) as VarId, (2 * slot + 1) as VarId)
    }

    /// Variable id of a speed slot.
    pub fn speed_id(&self, slot: usize) -> VarId {
        (2 * self.angle_count + slot) as VarId
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.dim()];
        for k in 0..self.angle_count {
            z[2 * k] = x[k].sin();
            z[2 * k + 1] = 1.0 - x[k].cos();
        }
        for s in 0..self.speed_count {
            z[2 * self.angle_count + s] = x[self.angle_count + s];
        }
        z
    }

    /// Valid on the constraint manifold (any z with the pair constraints
    /// satisfied); angles land in (−π, π].
    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.angle_count + self.speed_count];
        for k in 0..self.angle_count {
            x[k] = z[2 * k].atan2(1.0 - z[2 * k + 1]);
        }
        for s in 0..self.speed_count {
            x[self.angle_count + s] = z[2 * self.angle_count + s];
        }
        x
    }

    /// z_{2i−1}² + z_{2i}² − 2 z_{2i} per angle slot.
    pub fn constraints(&self) -> Vec<Polynomial> {
        (0..self.angle_count)
            .map(|k| {
                let (s, t) = self.pair_ids(k);
                let zs = Polynomial::var(&self.space, s);
                let zt = Polynomial::var(&self.space, t);
                &zs * &zs + &zt * &zt - zt * 2.0
            })
            .collect()
    }

    /// Node blocks (angle pair, plus the relative speed on generator slots)
    /// and the shared reference block (the reference speed).
    pub fn blocks(&self) -> (Vec<Vec<VarId>>, Vec<VarId>) {
        let mut blocks = Vec::new();
        for k in 0..self.angle_count {
            let (s, t) = self.pair_ids(k);
            let mut block = vec![s, t];
            if k >= self.load_count {
                block.push(self.speed_id(k - self.load_count));
            }
            blocks.push(block);
        }
        (blocks, vec![self.speed_id(self.speed_count - 1)])
    }

    /// Subsystem index of the block containing a bus.
    pub fn subsystem_of_bus(&self, bus_id: u32) -> Option<usize> {
        self.angle_bus_ids.iter().position(|&b| b == bus_id)
    }
}

/// Recasts the relative trigonometric system into a polynomial DAE. The
/// equilibrium maps to z = 0; each trig row r(δ) becomes the chain-rule pair
/// ż_{2i−1} = (1−z_{2i})·r, ż_{2i} = z_{2i−1}·r, which keeps the circle
/// constraints invariant with coefficient-exact Lie derivatives.
pub fn recast(rel: &RelativeSystem) -> Result<(PolySystem, RecastMap), PowerError> {
    let nang = rel.angle_nodes.len();
    let nspd = rel.speed_nodes.len();
    let map = RecastMap {
        space: VarSpace::numbered("z", 2 * nang + nspd),
        angle_count: nang,
        load_count: rel.load_count,
        speed_count: nspd,
        angle_bus_ids: rel.angle_bus_ids.clone(),
        speed_bus_ids: rel.speed_bus_ids.clone(),
    };
    let space = &map.space;
    let n = rel.ybus.dim();

    let mut slot_of: Vec<Option<usize>> = vec![None; n];
    for (k, &b) in rel.angle_nodes.iter().enumerate() {
        slot_of[b] = Some(k);
    }
    if slot_of.iter().filter(|s| s.is_none()).count() != 1 {
        return Err(PowerError::Validation(
            "recast needs every non-reference bus to carry an angle state".into(),
        ));
    }

    // sin / (1 − cos) of an angle slot; the reference contributes constants
    let sin_of = |slot: Option<usize>| match slot {
        Some(k) => Polynomial::var(space, map.pair_ids(k).0),
        None => Polynomial::zero(space),
    };
    let cos_of = |slot: Option<usize>| match slot {
        Some(k) => Polynomial::constant(space, 1.0) - Polynomial::var(space, map.pair_ids(k).1),
        None => Polynomial::constant(space, 1.0),
    };

    // P_Ei(δ_s + x) as a polynomial in z
    let injection_poly = |b: usize| -> Polynomial {
        let (si, ci) = (sin_of(slot_of[b]), cos_of(slot_of[b]));
        let mut p = Polynomial::constant(space, rel.volts[b] * rel.volts[b] * rel.ybus.conductance(b));
        for j in 0..n {
            if j == b || rel.ybus.magnitude(b, j) == 0.0 {
                continue;
            }
            let coef = rel.volts[b] * rel.volts[j] * rel.ybus.magnitude(b, j);
            let c = rel.delta_eq[b] - rel.delta_eq[j] - rel.ybus.angle(b, j);
            let (sj, cj) = (sin_of(slot_of[j]), cos_of(slot_of[j]));
            let cos_pair = &ci * &cj + &si * &sj;
            let sin_pair = &si * &cj - &ci * &sj;
            p = p + (cos_pair * c.cos() - sin_pair * c.sin()) * coef;
        }
        p
    };

    // the equilibrium residual shows up as a tiny constant; drop it exactly
    // so the origin is an exact equilibrium of the polynomial system
    let strip_origin = |p: Polynomial, what: &str| -> Result<Polynomial, PowerError> {
        let c = p.constant_term();
        if c.abs() > 1e-9 {
            return Err(PowerError::Validation(format!(
                "{what}: origin residual {c:.3e} exceeds 1e-9; solve the equilibrium first"
            )));
        }
        Ok(p - Polynomial::constant(space, c))
    };

    let omega_n = Polynomial::var(space, map.speed_id(nspd - 1));

    // reference acceleration without its damping term, shared by every
    // speed row; slack is pinned to the polynomial's own constant so the
    // cancellation at the origin is exact
    let p_ref = injection_poly(rel.reference);
    let slack = p_ref.constant_term();
    if (slack - rel.p_mech[nspd - 1]).abs() > 1e-9 {
        return Err(PowerError::Validation(format!(
            "slack mismatch: equilibrium gives {:.12}, polynomial constant {:.12}",
            rel.p_mech[nspd - 1],
            slack
        )));
    }
    let gn = (Polynomial::constant(space, slack) - &p_ref) * (1.0 / rel.inertia[nspd - 1]);

    let mut f = vec![Polynomial::zero(space); map.dim()];
    for (k, &b) in rel.angle_nodes.iter().enumerate() {
        let row = if k < rel.load_count {
            let p = injection_poly(b);
            let r = (Polynomial::constant(space, -rel.p_load[k]) - p) * (1.0 / rel.d_load[k]) - &omega_n;
            strip_origin(r, &format!("bus {} angle row", rel.angle_bus_ids[k]))?
        } else {
            Polynomial::var(space, map.speed_id(k - rel.load_count))
        };
        let (s, t) = map.pair_ids(k);
        let zs = Polynomial::var(space, s);
        let one_minus_zt = Polynomial::constant(space, 1.0) - Polynomial::var(space, t);
        f[s as usize] = &one_minus_zt * &row;
        f[t as usize] = &zs * &row;
    }
    for s in 0..nspd - 1 {
        let b = rel.speed_nodes[s];
        let speed = Polynomial::var(space, map.speed_id(s));
        let r = (Polynomial::constant(space, rel.p_mech[s]) - injection_poly(b)) * (1.0 / rel.inertia[s])
            - &gn
            - speed * rel.lambda;
        f[map.speed_id(s) as usize] = strip_origin(r, &format!("bus {} speed row", rel.speed_bus_ids[s]))?;
    }
    f[map.speed_id(nspd - 1) as usize] = &gn - &(&omega_n * rel.lambda);

    let sys = PolySystem::new(space, f, map.constraints())?;
    Ok((sys, map))
}

/// Splits the recast system along its angle blocks, the reference speed
/// being the shared overlap variable.
pub fn decompose_network(sys: &PolySystem, map: &RecastMap) -> Result<InterconnectedSystem, ModelError> {
    let (blocks, reference) = map.blocks();
    decompose_node_overlap(sys, &blocks, &reference)
}

/// The bundled nine-bus test network (same bytes as `data/wscc9.toml`),
/// kept embedded so tests and benchmarks don't depend on a working
/// directory.
pub const WSCC9_TOML: &str = include_str!("../../../data/wscc9.toml");

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    const WSCC9: &str = WSCC9_TOML;

    fn two_bus(p_load: f64, p_mech: f64) -> PowerNetwork {
        let text = format!(
            r#"
[system]
frequency = 60.0
reference_bus = 1

[[bus]]
id = 1
kind = "generator"
voltage = 1.0
inertia_h = 5.0
damping_over_inertia = 5.0
p_mech = {p_mech}

[[bus]]
id = 2
kind = "load"
voltage = 1.0
p_load = {p_load}
damping = 1.0

[[line]]
from = 1
to = 2
resistance = 0.0
reactance = 1.0
charging = 0.0
"#
        );
        PowerNetwork::from_toml_str(&text).unwrap()
    }

    #[test]
    fn parses_bundled_nine_bus() {
        let net = PowerNetwork::from_toml_str(WSCC9).unwrap();
        assert_eq!(net.num_buses(), 9);
        assert_eq!(net.load_indices().len(), 6);
        assert_eq!(net.other_generator_indices().len(), 2);
        assert_eq!(net.buses[net.reference].id, 1);
        assert_eq!(net.lines.len(), 9);
    }

    #[test]
    fn rejects_zero_load_damping() {
        let text = r#"
[system]
frequency = 60.0
reference_bus = 1

[[bus]]
id = 1
kind = "generator"
voltage = 1.0
inertia_h = 5.0
damping_over_inertia = 5.0
p_mech = 0.1

[[bus]]
id = 2
kind = "load"
voltage = 1.0
p_load = 0.1
damping = 0.0

[[line]]
from = 1
to = 2
resistance = 0.0
reactance = 1.0
charging = 0.0
"#;
        let err = PowerNetwork::from_toml_str(text).unwrap_err();
        assert!(matches!(err, PowerError::Validation(_)), "{err}");
    }

    #[test]
    fn rejects_unknown_fields() {
        let text = WSCC9.replace("frequency = 60.0", "frequency = 60.0\nbogus = 1");
        assert!(matches!(PowerNetwork::from_toml_str(&text), Err(PowerError::Parse(_))));
    }

    #[test]
    fn lossless_two_bus_injection() {
        // θ12 = π/2, equal angles: only the conductance term survives
        let net = two_bus(0.0, 0.0);
        let p = electrical_power(&net, &[0.3, 0.3]);
        assert!(p[0].abs() < 1e-12 && p[1].abs() < 1e-12);
        // transferred power is antisymmetric
        let p = electrical_power(&net, &[0.2, -0.1]);
        assert!((p[0] + p[1]).abs() < 1e-12);
        assert!((p[0] - 0.3f64.sin()).abs() < 1e-12);
    }

    #[test]
    fn injections_are_2pi_periodic() {
        let net = PowerNetwork::from_toml_str(WSCC9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ybus = net.ybus();
        let volts = net.voltages();
        for _ in 0..10 {
            let delta: Vec<f64> = (0..9).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let base = ybus.injections(&volts, &delta);
            for k in 0..9 {
                let mut shifted = delta.clone();
                shifted[k] += 2.0 * std::f64::consts::PI;
                let p = ybus.injections(&volts, &shifted);
                for i in 0..9 {
                    assert!((p[i] - base[i]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn lossless_network_conserves_power() {
        // strip resistances: all θij = ±π/2 and Gii = 0, so ΣPEi(δ) = 0
        let text = WSCC9
            .replace("resistance = 0.010", "resistance = 0.0")
            .replace("resistance = 0.032", "resistance = 0.0")
            .replace("resistance = 0.0085", "resistance = 0.0")
            .replace("resistance = 0.0119", "resistance = 0.0")
            .replace("resistance = 0.039", "resistance = 0.0")
            .replace("resistance = 0.017", "resistance = 0.0");
        let net = PowerNetwork::from_toml_str(&text).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let delta: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let total: f64 = electrical_power(&net, &delta).iter().sum();
            assert!(total.abs() < 1e-9, "lossless imbalance {total:e}");
        }
    }

    #[test]
    fn balanced_two_bus_equilibrium_is_flat() {
        let eq = solve_equilibrium(&two_bus(0.0, 0.0), None).unwrap();
        assert!(eq.delta_abs.iter().all(|d| d.abs() < 1e-12));
        assert!(eq.slack_p_mech.abs() < 1e-12);
    }

    #[test]
    fn two_bus_closed_form_angle() {
        // load balance: sin(δ2) = −P_D / (E1 E2 Y12)
        let eq = solve_equilibrium(&two_bus(0.5, 0.5), None).unwrap();
        assert!(eq.residual < 1e-10);
        assert!((eq.delta_abs[1] - (-0.5f64).asin()).abs() < 1e-10);
        assert!((eq.slack_p_mech - 0.5).abs() < 1e-10);
    }

    #[test]
    fn overloaded_line_reports_no_convergence() {
        let err = solve_equilibrium(&two_bus(2.0, 2.0), None).unwrap_err();
        assert!(matches!(err, PowerError::NoConvergence { .. }), "{err}");
    }

    #[test]
    fn isolated_bus_gives_singular_jacobian() {
        let text = r#"
[system]
frequency = 60.0
reference_bus = 1

[[bus]]
id = 1
kind = "generator"
voltage = 1.0
inertia_h = 5.0
damping_over_inertia = 5.0
p_mech = 0.1

[[bus]]
id = 2
kind = "load"
voltage = 1.0
p_load = 0.1
damping = 1.0

[[bus]]
id = 3
kind = "load"
voltage = 1.0
p_load = 0.1
damping = 1.0

[[line]]
from = 1
to = 2
resistance = 0.0
reactance = 1.0
charging = 0.0
"#;
        let net = PowerNetwork::from_toml_str(text).unwrap();
        let err = solve_equilibrium(&net, None).unwrap_err();
        assert!(matches!(err, PowerError::SingularJacobian { .. }), "{err}");
    }

    #[test]
    fn nine_bus_equilibrium_converges() {
        let net = PowerNetwork::from_toml_str(WSCC9).unwrap();
        let eq = solve_equilibrium(&net, None).unwrap();
        assert!(eq.residual < 1e-10);
        // injections at the solution reproduce the demands and dispatch
        let p = electrical_power(&net, &eq.delta_abs);
        for (i, bus) in net.buses.iter().enumerate() {
            match bus.kind {
                BusKind::Load { p_load, .. } => assert!((p[i] + p_load).abs() < 1e-9),
                BusKind::Generator { p_mech, .. } if i != net.reference => {
                    assert!((p[i] - p_mech).abs() < 1e-9)
                }
                _ => assert!((p[i] - eq.slack_p_mech).abs() < 1e-12),
            }
        }
        // slack stays close to the nominal dispatch (losses only)
        assert!((eq.slack_p_mech - 0.716).abs() < 0.1);
    }

    #[test]
    fn relative_system_vanishes_at_origin() {
        let net = PowerNetwork::from_toml_str(WSCC9).unwrap();
        let eq = solve_equilibrium(&net, None).unwrap();
        let rel = build_relative_system(&net, &eq).unwrap();
        assert_eq!(rel.dim(), 11);
        let mut out = vec![0.0; 11];
        rel.rhs(&vec![0.0; 11], &mut out);
        let norm = out.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(norm < 1e-10, "origin rhs norm {norm:e}");
    }

    #[test]
    fn non_uniform_damping_rejected() {
        let text = WSCC9.replacen("damping_over_inertia = 5.0", "damping_over_inertia = 5.1", 1);
        let net = PowerNetwork::from_toml_str(&text).unwrap();
        let eq = solve_equilibrium(&net, None).unwrap();
        let err = build_relative_system(&net, &eq).unwrap_err();
        assert!(matches!(err, PowerError::NonUniformDamping { .. }), "{err}");
    }

    fn nine_bus_recast() -> (PolySystem, RecastMap) {
        let net = PowerNetwork::from_toml_str(WSCC9).unwrap();
        let eq = solve_equilibrium(&net, None).unwrap();
        let rel = build_relative_system(&net, &eq).unwrap();
        recast(&rel).unwrap()
    }

    #[test]
    fn nine_bus_recast_dimensions() {
        let (sys, map) = nine_bus_recast();
        assert_eq!(map.dim(), 19);
        assert_eq!(sys.dim(), 19);
        assert_eq!(sys.constraints().len(), 8);
        for p in sys.dynamics() {
            assert!(p.degree() <= 3);
            assert_eq!(p.constant_term(), 0.0);
        }
        assert_eq!(map.angle_bus_ids, vec![4, 5, 6, 7, 8, 9, 2, 3]);
        assert_eq!(map.speed_bus_ids, vec![2, 3, 1]);
    }

    #[test]
    fn constraint_lie_derivatives_vanish_identically() {
        let (sys, _) = nine_bus_recast();
        for g in sys.constraints() {
            let grad = g.gradient();
            let mut lie = Polynomial::zero(sys.space());
            for (v, dg) in grad.iter().enumerate() {
                if !dg.is_zero() {
                    lie = lie + dg * &sys.dynamics()[v];
                }
            }
            assert!(lie.is_zero(), "nonzero Lie derivative: {lie}");
        }
    }

    #[test]
    fn chain_rule_pair_structure() {
        // balanced two-bus network: the load angle row is −sin(δ)−ω in
        // relative coordinates, so ż1 = (1−z2)(−z1−z3), ż2 = z1(−z1−z3)
        let net = two_bus(0.0, 0.0);
        let eq = solve_equilibrium(&net, None).unwrap();
        let rel = build_relative_system(&net, &eq).unwrap();
        let (sys, map) = recast(&rel).unwrap();
        assert_eq!(map.dim(), 3);
        let sp = sys.space();
        let expect0 = Polynomial::parse("-1*z1 - 1*z3 + 1*z1*z2 + 1*z2*z3", sp).unwrap();
        let expect1 = Polynomial::parse("-1*z1^2 - 1*z1*z3", sp).unwrap();
        assert!(sys.dynamics()[0].coeff_distance(&expect0) < 1e-12);
        assert!(sys.dynamics()[1].coeff_distance(&expect1) < 1e-12);
    }

    #[test]
    fn recast_map_round_trips() {
        let (_, map) = nine_bus_recast();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x: Vec<f64> = (0..11)
                .map(|i| if i < 8 { rng.gen_range(-3.0..3.0) } else { rng.gen_range(-2.0..2.0) })
                .collect();
            let z = map.forward(&x);
            // forward images satisfy the circle constraints
            for k in 0..8 {
                let c = z[2 * k] * z[2 * k] + z[2 * k + 1] * z[2 * k + 1] - 2.0 * z[2 * k + 1];
                assert!(c.abs() < 1e-14);
            }
            let back = map.inverse(&z);
            for i in 0..11 {
                assert!((back[i] - x[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn recast_dynamics_match_trig_dynamics_through_the_map() {
        // ẋ through the trig model, pushed through the differential of the
        // map, equals the polynomial field at the mapped point
        let net = PowerNetwork::from_toml_str(WSCC9).unwrap();
        let eq = solve_equilibrium(&net, None).unwrap();
        let rel = build_relative_system(&net, &eq).unwrap();
        let (sys, map) = recast(&rel).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let x: Vec<f64> = (0..11).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let mut xdot = vec![0.0; 11];
            rel.rhs(&x, &mut xdot);
            let z = map.forward(&x);
            for k in 0..8 {
                let zdot_sin = x[k].cos() * xdot[k];
                let zdot_cos = x[k].sin() * xdot[k];
                assert!((sys.dynamics()[2 * k].evaluate(&z) - zdot_sin).abs() < 1e-9);
                assert!((sys.dynamics()[2 * k + 1].evaluate(&z) - zdot_cos).abs() < 1e-9);
            }
            for s in 0..3 {
                assert!((sys.dynamics()[16 + s].evaluate(&z) - xdot[8 + s]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn nine_bus_decomposition_structure() {
        let (sys, map) = nine_bus_recast();
        let dec = decompose_network(&sys, &map).unwrap();
        assert_eq!(dec.num_subsystems(), 8);
        assert_eq!(map.subsystem_of_bus(7), Some(3));
        assert_eq!(map.subsystem_of_bus(2), Some(6));

        // line couplings: bus 4 sees buses 5 and 6; generator 2 sees bus 7
        assert_eq!(dec.neighbors(0), [0, 1, 2].into());
        assert_eq!(dec.neighbors(6), [0, 3, 6].into());
        assert_eq!(dec.neighbors(5), [0, 2, 4, 5, 7].into());
        // the replicated reference row couples everyone to bus 4's block
        for i in 1..8 {
            assert!(dec.neighbors(i).contains(&0), "subsystem {i} missing reference coupling");
        }

        // reassembly is coefficient-exact
        let back = dec.assemble().unwrap();
        for (a, b) in back.dynamics().iter().zip(sys.dynamics()) {
            assert_eq!(a.coeff_distance(b), 0.0);
        }
        assert_eq!(back.constraints().len(), 8);
    }
}
