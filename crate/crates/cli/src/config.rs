use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Everything a run needs, collected in one file so the hash of the
/// effective config pins the outputs.  Flags override individual fields;
/// the hash is taken after overrides are applied.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub lyapunov: LyapunovSection,
    pub tolerances: ToleranceSection,
    pub scenario: ScenarioSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Network description (TOML bus/line tables).
    pub network: PathBuf,
    pub output_dir: PathBuf,
    /// How to split the recast state into subsystems.  Only per-node
    /// splitting with shared reference speed is implemented.
    pub decomposition: String,
    pub seed: u64,
    /// Rayon pool size; 0 picks the machine default.
    pub workers: usize,
    /// Allow control synthesis when a subsystem cannot certify a step.
    pub control: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovSection {
    /// Total degree of each subsystem Lyapunov candidate.
    pub degree: u32,
    /// Alternation rounds when growing the estimate.
    pub expand_iters: usize,
    /// Half-degree of the scalar ring multipliers.
    pub multiplier_half_degree: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToleranceSection {
    /// Stop once no active subsystem improves its level by this much.
    pub eps_bar: f64,
    /// Width at which level bisection stops; levels below it collapse to zero.
    pub level_tol: f64,
    /// Feasibility tolerance for the ring SDPs.
    pub sdp_feas: f64,
    /// Integrator tolerances for scenario and validation runs.
    pub rtol: f64,
    pub atol: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    /// Lines removed over part of the run, e.g. a fault window.
    pub outages: Vec<OutageSection>,
    /// Certification reads the state here (seconds).
    pub sample_at: f64,
    /// Simulation horizon (seconds).
    pub t_end: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutageSection {
    pub line: [u32; 2],
    pub from: f64,
    pub until: f64,
}


impl Default for RunSection {
    fn default() -> Self {
        Self {
            network: PathBuf::new(),
            output_dir: PathBuf::from("out"),
            decomposition: "node-overlap".into(),
            seed: 0,
            workers: 0,
            control: true,
        }
    }
}

impl Default for LyapunovSection {
    fn default() -> Self {
        Self { degree: 2, expand_iters: 8, multiplier_half_degree: 1 }
    }
}

impl Default for ToleranceSection {
    fn default() -> Self {
        Self { eps_bar: 1e-3, level_tol: 1e-4, sdp_feas: 1e-8, rtol: 1e-8, atol: 1e-10 }
    }
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self { outages: Vec::new(), sample_at: 0.0, t_end: 60.0 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        // Relative paths in the file resolve against the file's directory,
        // not the invocation directory.
        if let Some(dir) = path.parent() {
            if cfg.run.network.is_relative() && !cfg.run.network.as_os_str().is_empty() {
                cfg.run.network = dir.join(&cfg.run.network);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.network.as_os_str().is_empty() {
            bail!("config is missing run.network");
        }
        if self.run.decomposition != "node-overlap" {
            bail!(
                "unknown decomposition '{}' (supported: node-overlap)",
                self.run.decomposition
            );
        }
        if self.lyapunov.degree != 2 {
            bail!("only degree-2 Lyapunov candidates are supported");
        }
        if self.lyapunov.multiplier_half_degree == 0 {
            bail!("multiplier half-degree must be at least 1");
        }
        for tol in [
            self.tolerances.eps_bar,
            self.tolerances.level_tol,
            self.tolerances.sdp_feas,
            self.tolerances.rtol,
            self.tolerances.atol,
        ] {
            if !(tol > 0.0) || !tol.is_finite() {
                bail!("tolerances must be positive and finite");
            }
        }
        for o in &self.scenario.outages {
            if o.until <= o.from || o.from < 0.0 {
                bail!("outage window [{}, {}] is empty or negative", o.from, o.until);
            }
        }
        if self.scenario.sample_at < 0.0 || self.scenario.t_end <= 0.0 {
            bail!("scenario times must be nonnegative with t_end > 0");
        }
        Ok(())
    }

    /// Hash of the effective config (after flag overrides).  Serialization
    /// order is the struct order, so equal configs hash equally.
    pub fn digest(&self) -> String {
        let canon = toml::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(canon.as_bytes());
        let out = h.finalize();
        let mut s = String::with_capacity(64);
        for b in out {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }
}
