//! Stage orchestration and the output directory layout.
//!
//! ```text
//! <out>/manifest.json
//! <out>/config.toml
//! <out>/stack/            fields.json + *.f64
//! <out>/ansatz/           report.json, decay_*.csv
//! <out>/runs/n<n>/        summary.json, *.csv, snapshots/
//! <out>/classify/         verdicts.json, growth.json, rates.csv
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ansatz::{
    build_stack, correction_ode_residual, residual_cross_check, sandwich_report, validate_decay,
    weighted_residual_constant, AnsatzStack,
};
use crate::artifacts::{
    fmt_g17, hash_f64s, load_stack, read_series, save_stack, sha256_hex, write_json, write_series, write_table,
    FieldSetWriter,
};
use crate::config::RunConfig;
use crate::diagnostics::{
    classify_blowup_set, energy_growth_monitor, growth_bound_report, local_l2, sobolev_norm, sobolev_norm_within,
    weighted_functionals_in, LadderRun, MetricSeries, ProbeSeries, ProbeVerdict, WeightedFrame,
};
use crate::error::{Error, Result};
use crate::manifest::{AnsatzSection, ClassifySection, DecaySummary, RunManifest, RunRecord, VerdictSummary};
use crate::math::TruncatedNonlinearity;
use crate::profile::{build_amplitude, validate_flatness};
use crate::solver::{integrate_direct, integrate_epsilon, plan_run, WaveState};

/// Radius of the region whose diagnostics must not see the outer boundary.
pub const CORE_RADIUS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ansatz,
    Solve,
    Classify,
    All,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ansatz => "ansatz",
            Stage::Solve => "solve",
            Stage::Classify => "classify",
            Stage::All => "all",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ansatz" => Ok(Stage::Ansatz),
            "solve" => Ok(Stage::Solve),
            "classify" => Ok(Stage::Classify),
            "all" => Ok(Stage::All),
            other => Err(Error::Config(format!("unknown stage {other:?}"))),
        }
    }
}

pub fn stack_dir(out: &Path) -> PathBuf {
    out.join("stack")
}

pub fn run_dir(out: &Path, n: u32) -> PathBuf {
    out.join("runs").join(format!("n{n}"))
}

/// File stem of the local-norm series at a probe.
pub fn probe_stem(kind: &str, probe: f64) -> String {
    format!("{kind}_local_x{probe}")
}

/// Runs one stage (or all of them in order) and returns the updated manifest.
pub fn run_pipeline(cfg: &RunConfig, out: &Path, stage: Stage) -> Result<RunManifest> {
    cfg.validate()?;
    let params = cfg.params()?;
    std::fs::create_dir_all(out)?;
    let mut manifest = RunManifest::open_or_new(out, cfg, &params)?;
    let config_text = cfg.to_toml()?;
    std::fs::write(out.join("config.toml"), &config_text)?;
    let stages: &[Stage] = match stage {
        Stage::All => &[Stage::Ansatz, Stage::Solve, Stage::Classify],
        Stage::Ansatz => &[Stage::Ansatz],
        Stage::Solve => &[Stage::Solve],
        Stage::Classify => &[Stage::Classify],
    };
    let mut stack: Option<AnsatzStack> = None;
    for &s in stages {
        let clock = Instant::now();
        let result = match s {
            Stage::Ansatz => stage_ansatz(cfg, out, &mut manifest).map(|st| stack = Some(st)),
            Stage::Solve => stage_solve(cfg, out, stack.as_ref(), &mut manifest),
            Stage::Classify => stage_classify(cfg, out, &mut manifest).map(|_| ()),
            Stage::All => unreachable!(),
        };
        result.map_err(|e| e.in_stage(s.name()))?;
        manifest.record_timing(s.name(), clock.elapsed().as_secs_f64());
        manifest.save(out)?;
        log::info!("stage {} done in {:.2} s", s.name(), clock.elapsed().as_secs_f64());
    }
    Ok(manifest)
}

fn register(manifest: &mut RunManifest, out: &Path, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path)?;
    let rel = path.strip_prefix(out).unwrap_or(path).to_string_lossy().replace('\\', "/");
    manifest.artifacts.insert(rel, sha256_hex(&bytes));
    Ok(())
}

fn build_from_config(cfg: &RunConfig) -> Result<AnsatzStack> {
    let params = cfg.params()?;
    let profile = build_amplitude(&cfg.compact_set, params.k, params.n_dim)?;
    build_stack(&params, &profile, &cfg.grid)
}

/// Builds and validates the stack, then writes it with its exponent reports.
pub fn stage_ansatz(cfg: &RunConfig, out: &Path, manifest: &mut RunManifest) -> Result<AnsatzStack> {
    let stack = build_from_config(cfg)?;
    let depth = stack.depth();
    let dir = out.join("ansatz");
    let mut decay = Vec::with_capacity(depth + 1);
    for j in 0..=depth {
        let rep = validate_decay(&stack, j);
        let region = "abs(x)<=2".to_string();
        let mut ratio = MetricSeries::new(format!("decay_ratio_j{j}"), None, region.clone());
        let mut core = MetricSeries::new(format!("decay_core_j{j}"), None, "core");
        for &(t, v) in &rep.ratio_series {
            ratio.push(t, v)?;
        }
        for &(t, v) in &rep.core_series {
            core.push(t, v)?;
        }
        for s in [&ratio, &core] {
            let path = dir.join(format!("{}.csv", s.name));
            write_series(&path, s)?;
            register(manifest, out, &path)?;
        }
        decay.push(DecaySummary {
            level: j,
            exponent: rep.exponent,
            sup_ratio: rep.sup_ratio,
            predicted_slope: rep.predicted_slope,
            fitted_slope: rep.fitted_slope,
        });
    }
    let (sandwich_relative, sandwich_velocity) = sandwich_report(&stack);
    let flat_grid: Vec<f64> = stack
        .space
        .nodes
        .iter()
        .copied()
        .filter(|x| x.abs() <= 3.0 && !stack.profile.in_zero_set(*x))
        .collect();
    let section = AnsatzSection {
        cutoffs: stack.levels.iter().map(|l| l.cutoff.clone()).collect(),
        decay,
        ode_residuals: (1..=depth).map(|j| correction_ode_residual(&stack, j)).collect(),
        cross_checks: (1..=depth).map(|j| residual_cross_check(&stack, j)).collect(),
        sandwich_relative,
        sandwich_velocity,
        weighted_residual_constant: weighted_residual_constant(&stack),
        flatness_ratios: validate_flatness(&stack.profile, 4, &flat_grid)?.sup_ratio,
        space_grid_sha256: hash_f64s(&stack.space.nodes),
        time_grid_sha256: hash_f64s(&stack.time.nodes),
    };
    let report = dir.join("report.json");
    write_json(&report, &section)?;
    register(manifest, out, &report)?;
    save_stack(&stack_dir(out), &stack)?;
    register(manifest, out, &stack_dir(out).join(crate::artifacts::SIDECAR))?;
    manifest.ansatz = Some(section);
    Ok(stack)
}

/// Loads the stack written by the ansatz stage and checks it belongs to `cfg`.
pub fn load_stack_for(cfg: &RunConfig, out: &Path) -> Result<AnsatzStack> {
    let dir = stack_dir(out);
    if !dir.join(crate::artifacts::SIDECAR).exists() {
        return Err(Error::MissingArtifact {
            what: "stack".into(),
            path: dir,
        });
    }
    let stack = load_stack(&dir)?;
    if stack.params != cfg.params()? || stack.settings != cfg.grid || stack.profile.spec() != &cfg.compact_set {
        return Err(Error::Artifact {
            path: dir,
            reason: "stack was built for a different configuration".into(),
        });
    }
    Ok(stack)
}

/// Everything one ladder run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub n: u32,
    pub record: RunRecord,
    pub series: Vec<MetricSeries>,
    pub probes: Vec<ProbeSeries>,
    pub snapshot_times: Vec<f64>,
    pub snapshots_eps: Vec<f64>,
    pub snapshots_eps_t: Vec<f64>,
}

/// Direct and perturbation runs for one `n` plus their diagnostics.
pub fn run_ladder_index(stack: &AnsatzStack, cfg: &RunConfig, n: u32) -> Result<RunOutput> {
    let scfg = cfg.solver.for_index(n);
    let plan = plan_run(stack, &scfg)?;
    let space = &stack.space;
    let radius = cfg.diagnostics.radius;
    let probes = &cfg.diagnostics.probes;
    let mut probe_series: Vec<ProbeSeries> = probes
        .iter()
        .map(|&x0| {
            let region = format!("x0={x0};r={radius}");
            ProbeSeries {
                probe: x0,
                u: MetricSeries::new(probe_stem("u", x0), Some(n), region.clone()),
                ut: MetricSeries::new(probe_stem("ut", x0), Some(n), region),
            }
        })
        .collect();
    let mut direct_fields: Vec<Vec<f64>> = Vec::new();
    let direct = integrate_direct(stack, &scfg, |s: &WaveState| {
        for ps in probe_series.iter_mut() {
            ps.u.push(s.t, local_l2(space, &s.u, ps.probe, radius)?)?;
            ps.ut.push(s.t, local_l2(space, &s.v, ps.probe, radius)?)?;
        }
        direct_fields.push(s.u.clone());
        Ok(())
    })?;

    let nl = TruncatedNonlinearity::new(stack.params.p, plan.truncation_level)?;
    let core_region = format!("abs(x)<={CORE_RADIUS}");
    let mut h1 = MetricSeries::new("h1_norm", Some(n), "all");
    let mut h1_core = MetricSeries::new("h1_norm_core", Some(n), core_region.clone());
    let mut eps_core = MetricSeries::new("eps_l2_core", Some(n), core_region);
    let mut weighted_norm = MetricSeries::new("weighted_norm", Some(n), "all");
    let mut weighted_energy = MetricSeries::new("weighted_energy", Some(n), "all");
    let mut route_gap = MetricSeries::new("route_gap", Some(n), "all");
    let mut monitor_samples = Vec::new();
    let mut snapshot_times = Vec::new();
    let mut snapshots_eps = Vec::new();
    let mut snapshots_eps_t = Vec::new();
    let mut index = 0usize;
    let w = space.quadrature_weights();
    let mut last_state: Option<WaveState> = None;
    let eps_run = integrate_epsilon(stack, &scfg, |s: &WaveState| {
        h1.push(s.t, sobolev_norm(space, s))?;
        h1_core.push(s.t, sobolev_norm_within(space, s, CORE_RADIUS))?;
        let mut l2 = 0.0;
        for i in 0..space.len() {
            if space.nodes[i].abs() <= CORE_RADIUS {
                l2 += w[i] * s.u[i] * s.u[i];
            }
        }
        eps_core.push(s.t, l2.sqrt())?;
        let frame = WeightedFrame::new(stack, s.t, cfg.solver.ceiling)?;
        let wf = weighted_functionals_in(&frame, space, &nl, &s.u, &s.v);
        weighted_norm.push(s.t, wf.norm)?;
        weighted_energy.push(s.t, wf.energy)?;
        monitor_samples.push((s.t, wf.norm, wf.energy));
        let u = direct_fields.get(index).ok_or_else(|| {
            Error::InvalidParameter("direct and perturbation runs produced different snapshot counts".into())
        })?;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..space.len() {
            let d = u[i] - (frame.ansatz[i] + s.u[i]);
            num += w[i] * d * d;
            den += w[i] * u[i] * u[i];
        }
        route_gap.push(s.t, (num / den).sqrt())?;
        if index % cfg.solver.snapshot_every == 0 {
            snapshot_times.push(s.t);
            snapshots_eps.extend_from_slice(&s.u);
            snapshots_eps_t.extend_from_slice(&s.v);
        }
        index += 1;
        last_state = Some(s.clone());
        Ok(())
    })?;
    let last = last_state.expect("the observer sees the final step");
    let monitor = energy_growth_monitor(&monitor_samples, stack.params.lambda, stack.params.p, Some(n))?;
    let delta_within_ceiling = weighted_norm
        .samples
        .iter()
        .take_while(|s| s.1 <= cfg.solver.ceiling)
        .last()
        .map_or(0.0, |s| s.0 - plan.t_start);
    let record = RunRecord {
        plan,
        direct_max_amplitude: direct.max_amplitude,
        epsilon_max_amplitude: eps_run.max_amplitude,
        truncation_dormant: direct.truncation_dormant && eps_run.truncation_dormant,
        final_route_gap: route_gap.samples.last().map(|s| s.1).unwrap_or(0.0),
        final_h1_norm: sobolev_norm(space, &last),
        final_weighted_norm: weighted_norm.samples.last().map(|s| s.1).unwrap_or(0.0),
        delta_within_ceiling,
    };
    if !record.truncation_dormant {
        log::warn!("n = {n}: truncation became active (max |u| = {})", direct.max_amplitude);
    }
    Ok(RunOutput {
        n,
        record,
        series: vec![h1, h1_core, eps_core, weighted_norm, weighted_energy, route_gap, monitor],
        probes: probe_series,
        snapshot_times,
        snapshots_eps,
        snapshots_eps_t,
    })
}

fn write_run(out: &Path, run: &RunOutput, nx: usize, manifest: &mut RunManifest) -> Result<()> {
    let dir = run_dir(out, run.n);
    let mut paths = Vec::new();
    for s in run
        .series
        .iter()
        .chain(run.probes.iter().flat_map(|p| [&p.u, &p.ut]))
    {
        let path = dir.join(format!("{}.csv", s.name));
        write_series(&path, s)?;
        paths.push(path);
    }
    let summary = dir.join("summary.json");
    write_json(&summary, &run.record)?;
    paths.push(summary);
    let snaps = dir.join("snapshots");
    let count = run.snapshot_times.len();
    let mut w = FieldSetWriter::create(&snaps)?;
    w.add("t", &[count], &run.snapshot_times)?;
    w.add("eps", &[count, nx], &run.snapshots_eps)?;
    w.add("eps_t", &[count, nx], &run.snapshots_eps_t)?;
    w.finish(serde_json::json!({ "n": run.n, "layout": "time-major" }))?;
    paths.push(snaps.join(crate::artifacts::SIDECAR));
    for p in paths {
        register(manifest, out, &p)?;
    }
    Ok(())
}

/// Runs the ladder (independent `n` in parallel) and writes trajectories and norms.
pub fn stage_solve(cfg: &RunConfig, out: &Path, built: Option<&AnsatzStack>, manifest: &mut RunManifest) -> Result<()> {
    let loaded;
    let stack = match built {
        Some(s) => s,
        None => {
            loaded = load_stack_for(cfg, out)?;
            &loaded
        }
    };
    let runs: Vec<RunOutput> = cfg
        .solver
        .ladder
        .par_iter()
        .map(|&n| run_ladder_index(stack, cfg, n).map_err(|e| e.in_stage(&format!("run n = {n}"))))
        .collect::<Result<_>>()?;
    manifest.runs.clear();
    for run in &runs {
        write_run(out, run, stack.nx(), manifest)?;
        manifest.runs.insert(run.n, run.record.clone());
    }
    Ok(())
}

/// Reads back the ladder series written by the solve stage.
pub fn read_ladder(cfg: &RunConfig, out: &Path) -> Result<(Vec<LadderRun>, Vec<(u32, f64, MetricSeries)>)> {
    let mut runs = Vec::new();
    let mut norms = Vec::new();
    for &n in &cfg.solver.ladder {
        let dir = run_dir(out, n);
        let summary = dir.join("summary.json");
        if !summary.exists() {
            return Err(Error::MissingArtifact {
                what: "trajectory".into(),
                path: dir,
            });
        }
        let record: RunRecord = crate::artifacts::read_json(&summary, "trajectory")?;
        let probes = cfg
            .diagnostics
            .probes
            .iter()
            .map(|&x0| {
                Ok(ProbeSeries {
                    probe: x0,
                    u: read_series(&dir.join(format!("{}.csv", probe_stem("u", x0))))?,
                    ut: read_series(&dir.join(format!("{}.csv", probe_stem("ut", x0))))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        runs.push(LadderRun {
            n,
            t_start: record.plan.t_start,
            delta0: record.plan.delta0,
            probes,
        });
        norms.push((n, record.plan.t_start, read_series(&dir.join("h1_norm.csv"))?));
    }
    Ok((runs, norms))
}

/// Verdicts, growth constants and the rate table.
pub fn stage_classify(cfg: &RunConfig, out: &Path, manifest: &mut RunManifest) -> Result<Vec<ProbeVerdict>> {
    let (runs, norms) = read_ladder(cfg, out)?;
    let verdicts = if runs.len() >= 3 {
        classify_blowup_set(&runs, &cfg.diagnostics, &cfg.compact_set)?
    } else {
        log::warn!("{} ladder runs: blow-up set verdicts need at least 3, skipping them", runs.len());
        Vec::new()
    };
    let refs: Vec<(u32, f64, &MetricSeries)> = norms.iter().map(|(n, t, s)| (*n, *t, s)).collect();
    let growth = growth_bound_report(&refs, cfg.params()?.lambda);
    let dir = out.join("classify");
    let verdict_path = dir.join("verdicts.json");
    write_json(
        &verdict_path,
        &serde_json::json!({ "settings": cfg.diagnostics, "verdicts": verdicts }),
    )?;
    let growth_path = dir.join("growth.json");
    write_json(&growth_path, &growth)?;
    let opt = |v: Option<f64>| v.map(fmt_g17).unwrap_or_default();
    let mut rows = Vec::new();
    for v in &verdicts {
        for (k, (n, ue)) in v.u_exponents.iter().enumerate() {
            rows.push(vec![
                fmt_g17(v.probe),
                n.to_string(),
                opt(*ue),
                opt(v.ut_exponents[k].1),
                format!("{:?}", v.verdict).to_lowercase(),
            ]);
        }
    }
    let rates_path = dir.join("rates.csv");
    write_table(&rates_path, &["probe", "n", "u_exponent", "ut_exponent", "verdict"], &rows)?;
    let mut growth_rows = Vec::new();
    for r in &growth.rows {
        growth_rows.push(vec![r.n.to_string(), fmt_g17(r.constant), fmt_g17(r.at)]);
    }
    let growth_csv = dir.join("growth.csv");
    write_table(&growth_csv, &["n", "constant", "at"], &growth_rows)?;
    for p in [&verdict_path, &growth_path, &rates_path, &growth_csv] {
        register(manifest, out, p)?;
    }
    manifest.classify = Some(ClassifySection {
        verdicts: verdicts
            .iter()
            .map(|v| VerdictSummary {
                probe: v.probe,
                verdict: v.verdict,
                matches_blowup_set: v.matches_blowup_set,
            })
            .collect(),
        growth,
    });
    Ok(verdicts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_parse() {
        for s in [Stage::Ansatz, Stage::Solve, Stage::Classify, Stage::All] {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("plot".parse::<Stage>().is_err());
    }

    #[test]
    fn solve_without_stack_reports_missing_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let err = run_pipeline(&RunConfig::reference(), dir.path(), Stage::Solve).unwrap_err();
        assert!(err.to_string().contains("missing stack artifact"), "{err}");
    }

    #[test]
    fn classify_without_runs_reports_missing_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let err = run_pipeline(&RunConfig::reference(), dir.path(), Stage::Classify).unwrap_err();
        assert!(err.to_string().contains("missing trajectory artifact"), "{err}");
    }
}
