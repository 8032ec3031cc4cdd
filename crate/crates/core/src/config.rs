//! Run configuration: one TOML document, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ansatz::AnsatzSettings;
use crate::diagnostics::ClassifierSettings;
use crate::error::{Error, Result};
use crate::math::{derive_params_with_mode, DimMode, ProblemParams};
use crate::profile::CompactSetSpec;
use crate::solver::{Boundary, Forcing, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemSection {
    pub p: f64,
    /// Spatial dimension `N`.
    pub dimension: usize,
    pub mode: DimMode,
    pub k: Option<u32>,
}

impl Default for ProblemSection {
    fn default() -> Self {
        Self {
            p: 3.0,
            dimension: 1,
            mode: DimMode::Line,
            k: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    /// Ladder indices `n`; runs start at `T_n = 1/n`.
    pub ladder: Vec<u32>,
    pub cfl: f64,
    pub steps_per_start_time: f64,
    pub delta0: Option<f64>,
    /// Smallness ceiling `ω` on the weighted norm.
    pub ceiling: f64,
    pub boundary: Boundary,
    pub forcing: Forcing,
    /// Diagnostic samples per run.
    pub samples: usize,
    /// Every this many diagnostic samples the `ε` fields are stored.
    pub snapshot_every: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let base = SolverConfig::default();
        Self {
            ladder: vec![8, 16, 32],
            cfl: base.cfl,
            steps_per_start_time: base.steps_per_start_time,
            delta0: base.delta0,
            ceiling: 1.0,
            boundary: base.boundary,
            forcing: base.forcing,
            samples: base.samples,
            snapshot_every: 20,
        }
    }
}

impl SolverSection {
    pub fn for_index(&self, n: u32) -> SolverConfig {
        SolverConfig {
            n,
            cfl: self.cfl,
            steps_per_start_time: self.steps_per_start_time,
            delta0: self.delta0,
            boundary: self.boundary,
            forcing: self.forcing,
            samples: self.samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub problem: ProblemSection,
    pub compact_set: CompactSetSpec,
    #[serde(default)]
    pub grid: AnsatzSettings,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub diagnostics: ClassifierSettings,
    /// Default output directory; the command line takes precedence.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Runs are deterministic given the config; kept for the manifest.
    #[serde(default = "yes")]
    pub deterministic: bool,
}

fn yes() -> bool {
    true
}

impl RunConfig {
    /// Reference configuration: `p = 3` on the line with `K = [-1, 1]`.
    pub fn reference() -> Self {
        Self {
            problem: ProblemSection::default(),
            compact_set: CompactSetSpec::line(&[[-1.0, 1.0]]),
            grid: AnsatzSettings::default(),
            solver: SolverSection::default(),
            diagnostics: ClassifierSettings::default(),
            output_dir: None,
            deterministic: true,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn params(&self) -> Result<ProblemParams> {
        derive_params_with_mode(self.problem.p, self.problem.dimension, self.problem.mode, self.problem.k)
    }

    /// Checks every precondition that can be checked before computing.
    pub fn validate(&self) -> Result<()> {
        let params = self.params()?;
        if self.compact_set.mode != params.dim_mode {
            return Err(Error::Config("compact set mode differs from the problem mode".into()));
        }
        self.compact_set.validate()?;
        let g = &self.grid;
        if g.half_width < 8.0 {
            return Err(Error::Config(format!("grid.half_width = {} must be at least 8", g.half_width)));
        }
        if !(g.dx > 0.0) || !(g.t_min > 0.0 && g.t_min < 1.0) || g.per_octave < 8 {
            return Err(Error::Config(
                "grid needs dx > 0, 0 < t_min < 1 and at least 8 time nodes per octave".into(),
            ));
        }
        let s = &self.solver;
        if s.ladder.is_empty() || s.ladder.iter().any(|&n| n < 2) {
            return Err(Error::Config("solver.ladder needs indices n >= 2".into()));
        }
        let mut sorted = s.ladder.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != s.ladder.len() {
            return Err(Error::Config("solver.ladder has repeated indices".into()));
        }
        let n_max = *sorted.last().unwrap();
        if g.t_min > 0.5 / n_max as f64 {
            return Err(Error::Config(format!(
                "grid.t_min = {} must not exceed half the smallest start time 1/{n_max}",
                g.t_min
            )));
        }
        if !(s.cfl > 0.0 && s.cfl < 1.0) {
            return Err(Error::Cfl(s.cfl));
        }
        if s.delta0.is_some_and(|d| !(d > 0.0)) {
            return Err(Error::Config("solver.delta0 must be positive".into()));
        }
        if !(s.ceiling > 0.0) || s.samples == 0 || s.snapshot_every == 0 {
            return Err(Error::Config(
                "solver.ceiling, solver.samples and solver.snapshot_every must be positive".into(),
            ));
        }
        let d = &self.diagnostics;
        if !(d.radius > 0.0) || !(d.bounded_ratio > 1.0) || !(d.window_factor > 1.0) {
            return Err(Error::Config(
                "diagnostics needs radius > 0, bounded_ratio > 1 and window_factor > 1".into(),
            ));
        }
        for &x0 in &d.probes {
            let dist = self.compact_set.distance(x0);
            if dist > 0.0 && dist <= d.radius {
                return Err(Error::Config(format!(
                    "probe {x0} is within {} of K without belonging to it",
                    d.radius
                )));
            }
            if x0.abs() + d.radius >= g.half_width {
                return Err(Error::Config(format!("probe {x0} is outside the domain")));
            }
            if params.dim_mode == DimMode::Radial && x0 < 0.0 {
                return Err(Error::Config(format!("radial probe {x0} must be non-negative")));
            }
        }
        Ok(())
    }
}
