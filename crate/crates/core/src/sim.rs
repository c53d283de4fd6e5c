//! Time-domain validation: an adaptive Dormand–Prince integrator, grid
//! scenarios with timed line outages, banded control laws evaluated through
//! the recast map, and Lyapunov level tracking along trajectories.

use crate::control::{ControlChannel, ControlLaw};
use crate::poly::Polynomial;
use crate::power::{PowerNetwork, RecastMap, RelativeSystem};
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("step budget exhausted at t = {t} after {steps} steps")]
    MaxSteps { t: f64, steps: usize },
    #[error("bad input: {0}")]
    BadInput(String),
}

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { rtol: 1e-8, atol: 1e-10, max_steps: 2_000_000 }
    }
}

/// Accepted integration steps; `states[k]` is the state at `times[k]`.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn last_state(&self) -> &[f64] {
        self.states.last().expect("nonempty trajectory")
    }

    /// Linear interpolation between accepted steps.
    pub fn state_at(&self, t: f64) -> Vec<f64> {
        match self.times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(k) => self.states[k].clone(),
            Err(0) => self.states[0].clone(),
            Err(k) if k == self.times.len() => self.last_state().to_vec(),
            Err(k) => {
                let (t0, t1) = (self.times[k - 1], self.times[k]);
                let w = (t - t0) / (t1 - t0);
                self.states[k - 1]
                    .iter()
                    .zip(&self.states[k])
                    .map(|(a, b)| a + w * (b - a))
                    .collect()
            }
        }
    }

    fn extend_from(&mut self, other: Trajectory) {
        let skip = usize::from(!self.times.is_empty());
        self.times.extend(other.times.into_iter().skip(skip));
        self.states.extend(other.states.into_iter().skip(skip));
    }

    /// Tab-delimited dump with a header row.
    pub fn write_delimited(&self, w: &mut impl Write, labels: &[String]) -> io::Result<()> {
        write!(w, "t")?;
        for l in labels {
            write!(w, "\t{l}")?;
        }
        writeln!(w)?;
        for (t, x) in self.times.iter().zip(&self.states) {
            write!(w, "{t}")?;
            for v in x {
                write!(w, "\t{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

// Dormand–Prince 5(4) coefficients.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
// 5th-order minus embedded 4th-order weights (error estimator).
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates ẋ = rhs(t, x) from (t0, x0) to t1 (t1 hit exactly), recording
/// every accepted step. Dormand–Prince 5(4) with a standard PI-free
/// controller; the last stage is reused as the next step's first (FSAL).
pub fn integrate(
    mut rhs: impl FnMut(f64, &[f64], &mut [f64]),
    t0: f64,
    t1: f64,
    x0: &[f64],
    opts: &OdeOptions,
) -> Result<Trajectory, SimError> {
    if !(t1 > t0) {
        return Err(SimError::BadInput(format!("empty time span [{t0}, {t1}]")));
    }
    let n = x0.len();
    let mut t = t0;
    let mut x = x0.to_vec();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    rhs(t, &x, &mut k[0]);
    let mut traj = Trajectory { times: vec![t], states: vec![x.clone()] };

    let mut h = ((t1 - t0) / 100.0).min(1e-2).max(1e-10);
    let mut xs = vec![0.0; n];
    let mut xnew = vec![0.0; n];
    for step in 0..opts.max_steps {
        if t >= t1 {
            return Ok(traj);
        }
        if step + 1 == opts.max_steps {
            return Err(SimError::MaxSteps { t, steps: step });
        }
        h = h.min(t1 - t);
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(SimError::StepUnderflow { t });
        }
        for s in 0..6 {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s + 1) {
                    acc += A[s][j] * kj[i];
                }
                xs[i] = x[i] + h * acc;
            }
            let (head, tail) = k.split_at_mut(s + 1);
            let _ = head;
            rhs(t + C[s] * h, &xs, &mut tail[0]);
        }
        // stage 6 evaluates at t+h with the 5th-order solution: xs is it
        xnew.copy_from_slice(&xs);
        let mut err: f64 = 0.0;
        for i in 0..n {
            let mut e = 0.0;
            for (j, kj) in k.iter().enumerate() {
                e += E[j] * kj[i];
            }
            let sc = opts.atol + opts.rtol * x[i].abs().max(xnew[i].abs());
            err = err.max((h * e / sc).abs());
        }
        if err <= 1.0 {
            t += h;
            x.copy_from_slice(&xnew);
            k.swap(0, 6); // FSAL: k[6] = f(t+h, x_new) becomes the next first stage
            traj.times.push(t);
            traj.states.push(x.clone());
        }
        // on rejection k[0] = f(t, x) is untouched and stays valid
        let fac = (0.9 * err.max(1e-12).powf(-0.2)).clamp(0.2, 5.0);
        h *= fac;
    }
    Err(SimError::MaxSteps { t, steps: opts.max_steps })
}

/// A line removed from service on [from, until).
#[derive(Debug, Clone, Copy)]
pub struct Outage {
    /// Endpoint bus ids of the line.
    pub line: (u32, u32),
    pub from: f64,
    pub until: f64,
}

/// A control law armed during simulation: applied whenever its subsystem's
/// Lyapunov value sits inside the activation band.
#[derive(Debug, Clone)]
pub struct ActiveLaw {
    pub law: ControlLaw,
    /// The subsystem's Lyapunov function (for the band test).
    pub v: Polynomial,
}

/// Right-hand side in relative trig coordinates with banded controls mapped
/// through the recast: direct channels add u to their speed row, angle-pair
/// channels add u to the angle row.
pub fn grid_rhs<'a>(
    rel: &'a RelativeSystem,
    map: &'a RecastMap,
    controls: &'a [ActiveLaw],
) -> impl FnMut(f64, &[f64], &mut [f64]) + 'a {
    let mut z = vec![0.0; map.dim()];
    move |_t, x, out| {
        rel.rhs(x, out);
        if controls.is_empty() {
            return;
        }
        z.copy_from_slice(&map.forward(x));
        for al in controls {
            let level = al.v.evaluate(&z);
            if level < al.law.band.0 || level > al.law.band.1 {
                continue;
            }
            let u = al.law.u.evaluate(&z);
            let row = match al.law.channel {
                ControlChannel::Direct(zv) => {
                    map.angle_count + (zv as usize - 2 * map.angle_count)
                }
                ControlChannel::AnglePair { sin, .. } => sin as usize / 2,
            };
            out[row] += u;
        }
    }
}

/// Simulates a grid scenario: outages partition the span into segments with
/// fixed topology; within each segment the admittance view is rebuilt and
/// the banded controls stay armed. Segment boundaries are hit exactly, so
/// states line up across topology changes.
pub fn simulate_network(
    net: &PowerNetwork,
    rel: &RelativeSystem,
    map: &RecastMap,
    x0: &[f64],
    span: (f64, f64),
    outages: &[Outage],
    controls: &[ActiveLaw],
    opts: &OdeOptions,
) -> Result<Trajectory, SimError> {
    if x0.len() != rel.dim() {
        return Err(SimError::BadInput(format!(
            "state has {} entries, model has {}",
            x0.len(),
            rel.dim()
        )));
    }
    let mut cuts = vec![span.0, span.1];
    for o in outages {
        for t in [o.from, o.until] {
            if t > span.0 && t < span.1 {
                cuts.push(t);
            }
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();

    let mut traj = Trajectory::default();
    let mut x = x0.to_vec();
    for w in cuts.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let tm = 0.5 * (t0 + t1);
        let mut removed = Vec::new();
        for o in outages {
            if o.from <= tm && tm < o.until {
                let idx = net.line_between(o.line.0, o.line.1).ok_or_else(|| {
                    SimError::BadInput(format!("no line between buses {} and {}", o.line.0, o.line.1))
                })?;
                removed.push(idx);
            }
        }
        let seg_rel;
        let rel_view = if removed.is_empty() {
            rel
        } else {
            seg_rel = RelativeSystem { ybus: net.ybus_without(&removed), ..rel.clone() };
            &seg_rel
        };
        let seg = integrate(grid_rhs(rel_view, map, controls), t0, t1, &x, opts)?;
        x = seg.last_state().to_vec();
        traj.extend_from(seg);
    }
    Ok(traj)
}

/// Per-subsystem Lyapunov levels of a trig-coordinate state: γ_i = V_i(z).
pub fn levels_at(x: &[f64], vs: &[Polynomial], map: &RecastMap) -> Vec<f64> {
    let z = map.forward(x);
    vs.iter().map(|v| v.evaluate(&z)).collect()
}
