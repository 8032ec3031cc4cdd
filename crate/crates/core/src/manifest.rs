//! Run manifest: everything needed to trace a reported number back to its
//! configuration and artifacts.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ansatz::{CutoffChoice, OdeResidualReport, ResidualCrossCheck};
use crate::artifacts::{read_json, write_json};
use crate::config::RunConfig;
use crate::diagnostics::{GrowthReport, Verdict};
use crate::error::Result;
use crate::math::{DimMode, ProblemParams};
use crate::solver::RunPlan;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedParams {
    pub p: f64,
    pub dimension: usize,
    pub mode: DimMode,
    #[serde(rename = "J")]
    pub depth: usize,
    pub k: u32,
    pub lambda: f64,
    pub kappa: f64,
    pub sigma: f64,
}

impl From<&ProblemParams> for ResolvedParams {
    fn from(p: &ProblemParams) -> Self {
        Self {
            p: p.p,
            dimension: p.n_dim,
            mode: p.dim_mode,
            depth: p.depth,
            k: p.k,
            lambda: p.lambda,
            kappa: p.kappa,
            sigma: p.sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySummary {
    pub level: usize,
    pub exponent: f64,
    pub sup_ratio: f64,
    pub predicted_slope: f64,
    pub fitted_slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnsatzSection {
    pub cutoffs: Vec<CutoffChoice>,
    pub decay: Vec<DecaySummary>,
    pub ode_residuals: Vec<OdeResidualReport>,
    pub cross_checks: Vec<ResidualCrossCheck>,
    /// `max |U_J - U₀| / U₀` over the grid up to `t_J`.
    pub sandwich_relative: f64,
    /// `max |∂ₜU_J - ∂ₜU₀| / U₀`.
    pub sandwich_velocity: f64,
    /// `sup Q^{1/2} |E_J| t^{1-λ}` on `|x| ≤ 2`.
    pub weighted_residual_constant: f64,
    /// `sup |∂^β A| / A^{1-|β|/k}` for `|β| ≤ 4`.
    pub flatness_ratios: Vec<f64>,
    pub space_grid_sha256: String,
    pub time_grid_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub plan: RunPlan,
    pub direct_max_amplitude: f64,
    pub epsilon_max_amplitude: f64,
    pub truncation_dormant: bool,
    /// `‖u - (U_J + ε)‖ / ‖u‖` at the final time.
    pub final_route_gap: f64,
    pub final_h1_norm: f64,
    pub final_weighted_norm: f64,
    /// Largest `δ` such that `𝒩 ≤ ω` on every sample of `[T_n, T_n + δ]`.
    pub delta_within_ceiling: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictSummary {
    pub probe: f64,
    pub verdict: Verdict,
    pub matches_blowup_set: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifySection {
    pub verdicts: Vec<VerdictSummary>,
    pub growth: GrowthReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub config_sha256: String,
    pub params: ResolvedParams,
    pub ansatz: Option<AnsatzSection>,
    /// Per ladder index, keyed by `n`.
    pub runs: BTreeMap<u32, RunRecord>,
    pub classify: Option<ClassifySection>,
    pub timings: Vec<StageTiming>,
    /// Output-relative path to SHA-256 of every artifact written.
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(config: &RunConfig, params: &ProblemParams) -> Result<Self> {
        let text = config.to_toml()?;
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: config.clone(),
            config_sha256: crate::artifacts::sha256_hex(text.as_bytes()),
            params: params.into(),
            ansatz: None,
            runs: BTreeMap::new(),
            classify: None,
            timings: Vec::new(),
            artifacts: BTreeMap::new(),
        })
    }

    /// Loads the manifest of `out` if it was written for the same config,
    /// otherwise starts a fresh one.
    pub fn open_or_new(out: &Path, config: &RunConfig, params: &ProblemParams) -> Result<Self> {
        let fresh = Self::new(config, params)?;
        let path = out.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(fresh);
        }
        let old: RunManifest = read_json(&path, "manifest")?;
        Ok(if old.config_sha256 == fresh.config_sha256 { old } else { fresh })
    }

    pub fn record_timing(&mut self, stage: &str, seconds: f64) {
        self.timings.retain(|t| t.stage != stage);
        self.timings.push(StageTiming {
            stage: stage.into(),
            seconds,
        });
    }

    pub fn save(&self, out: &Path) -> Result<()> {
        write_json(&out.join(MANIFEST_FILE), self)
    }
}
