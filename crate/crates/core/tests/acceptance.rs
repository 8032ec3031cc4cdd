//! Acceptance suite for the reference problem `p = 3`, `N = 1`, line mode.
//!
//! Runs every criterion in order, prints one `PASS`/`FAIL` line for each and
//! exits non-zero when any criterion fails. Tolerances are fixed constants
//! below, never adjusted to the observed values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use blowup_core::ansatz::{build_stack, correction_ode_residual, validate_decay, AnsatzSettings, AnsatzStack};
use blowup_core::config::RunConfig;
use blowup_core::diagnostics::{
    classify_blowup_set, coercivity_probe, fit_log_log, Verdict, WeightedFrame,
};
use blowup_core::math::{derive_params, homogeneous_pair, linearized_ode_solve, ProblemParams, TruncatedNonlinearity};
use blowup_core::pipeline::{read_ladder, run_dir, run_pipeline, Stage};
use blowup_core::profile::{build_amplitude, u0_eval, u0_local_l2, CompactSetSpec};
use rand::{rngs::StdRng, Rng, SeedableRng};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn reference_params() -> ProblemParams {
    derive_params(3.0, 1, None).expect("reference parameters")
}

fn interval() -> CompactSetSpec {
    CompactSetSpec::line(&[[-1.0, 1.0]])
}

fn point() -> CompactSetSpec {
    CompactSetSpec::line(&[[0.0, 0.0]])
}

fn stack_for(spec: &CompactSetSpec, settings: &AnsatzSettings) -> AnsatzStack {
    let params = reference_params();
    let profile = build_amplitude(spec, params.k, params.n_dim).expect("amplitude");
    build_stack(&params, &profile, settings).expect("stack")
}

/// Log-spaced points on `[lo, hi]`, both ends included.
fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| lo * (hi / lo).powf(i as f64 / (count - 1) as f64))
        .collect()
}

// Closed-form solution of g'' - 6 t^{-2} g = t^q on (0, 1] with the boundary
// behaviour selected by the kernel, for p = 3 and q ≠ 1.
fn monomial_solution(q: f64, t: f64) -> f64 {
    // homogeneous exponents -2 and 3, Wronskian-normalised constant -1/5
    let c = -0.2;
    let inner = t.powf(q + 4.0) / (q + 4.0);
    let outer = (1.0 - t.powf(q - 1.0)) / (q - 1.0);
    c * (t.powi(-2) * inner + t.powi(3) * outer)
}

fn criterion_1() -> Outcome {
    let p = reference_params();
    let mut ode = 0.0f64;
    for t in log_space(1e-3, 1.0, 400) {
        let h = p.h(t).unwrap();
        ode = ode.max((p.h_second(t).unwrap() - h.powi(3)).abs() / h.powi(3));
    }
    // g₁ = t⁻², g₂ = t³: g'' = 6 t⁻² g
    let mut homog = 0.0f64;
    for t in log_space(1e-3, 1.0, 50) {
        let (g1, g2) = homogeneous_pair(3.0, t);
        homog = homog.max((6.0 * t.powi(-4) - 6.0 * g1 / (t * t)).abs() / (6.0 * t.powi(-4)));
        homog = homog.max((6.0 * t - 6.0 * g2 / (t * t)).abs() / (6.0 * t));
        homog = homog.max((g1 - t.powi(-2)).abs() / t.powi(-2));
        homog = homog.max((g2 - t.powi(3)).abs() / t.powi(3));
    }
    let mut vop = 0.0f64;
    for q in [0.0, 0.5, 2.0, 3.7] {
        for t in [0.01, 0.1, 0.45, 0.9, 1.0] {
            let exact = monomial_solution(q, t);
            let got = linearized_ode_solve(|s| s.powf(q), t, 3.0).unwrap();
            vop = vop.max((got - exact).abs() / exact.abs());
        }
    }
    check(
        ode < 1e-12 && homog < 1e-12 && vop < 1e-8,
        format!("ODE residual {ode:.2e} (< 1e-12), homogeneous {homog:.2e} (< 1e-12), kernel vs closed form {vop:.2e} (< 1e-8)"),
    )
}

fn criterion_2() -> Outcome {
    let params = reference_params();
    let spec = interval();
    let profile = build_amplitude(&spec, params.k, 1).unwrap();
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let t = 10f64.powf(rng.random_range(-3.0..0.0));
        let x = rng.random_range(-4.0..4.0);
        let s = u0_eval(&profile, t, x, &params).unwrap();
        let a = profile.eval(x).a;
        // U₀ = √2 (t + A)⁻¹, ∂ₜₜU₀ = 2√2 (t + A)⁻³
        let w = t + a;
        let u = std::f64::consts::SQRT_2 / w;
        let utt = 2.0 * std::f64::consts::SQRT_2 / (w * w * w);
        let f = u * u * u;
        worst = worst.max((utt - f).abs() / f);
        worst = worst.max((s.u - u).abs() / u).max((s.utt - utt).abs() / utt);
    }
    let settings = AnsatzSettings::default();
    let half = settings.half_width;
    let count = (2.0 * half / settings.dx).round() as usize + 1;
    let mut interior = 0usize;
    let mut nonzero = 0usize;
    for i in 0..count {
        let x = -half + i as f64 * settings.dx;
        if x.abs() < 1.0 {
            interior += 1;
            for t in [1e-3, 0.05, 1.0] {
                if u0_eval(&profile, t, x, &params).unwrap().e0 != 0.0 {
                    nonzero += 1;
                }
            }
        }
    }
    check(
        worst < 1e-12 && nonzero == 0,
        format!("max relative ODE residual {worst:.2e} on 10^4 samples (< 1e-12), E0 nonzero at {nonzero} of {interior} interior nodes x 3 times"),
    )
}

fn criterion_3() -> Outcome {
    let params = reference_params();
    let mut parts = Vec::new();
    let mut ok = true;
    for (label, spec) in [("K=[-1,1]", interval()), ("K={0}", point())] {
        let profile = build_amplitude(&spec, params.k, 1).unwrap();
        let points: Vec<(f64, f64)> = log_space(1e-3, 1e-1, 41)
            .into_iter()
            .map(|t| (t, u0_local_l2(&profile, &params, t, 0.0, 0.25).unwrap()))
            .collect();
        let slope = fit_log_log(&points).unwrap().exponent;
        ok &= (-1.03..=-0.92).contains(&slope);
        parts.push(format!("{label} slope {slope:.4}"));
    }
    check(ok, format!("{} (band [-1.03, -0.92])", parts.join(", ")))
}

fn criterion_4(stack: &AnsatzStack) -> Outcome {
    let reports: Vec<_> = (1..=2).map(|j| correction_ode_residual(stack, j)).collect();
    let ok = reports.iter().all(|r| r.max_relative < 1e-3);
    let text: Vec<String> = reports
        .iter()
        .map(|r| format!("j={} {:.2e} (worst t {:.4})", r.level, r.max_relative, r.worst_t))
        .collect();
    check(ok, format!("{} (< 1e-3)", text.join(", ")))
}

fn criterion_5(stack: &AnsatzStack, fine: &AnsatzStack) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for j in 0..=2 {
        let coarse = validate_decay(stack, j);
        let refined = validate_decay(fine, j);
        let change = (refined.sup_ratio - coarse.sup_ratio).abs() / coarse.sup_ratio;
        let finite = coarse.sup_ratio.is_finite() && refined.sup_ratio.is_finite();
        ok &= finite && change < 0.2;
        let mut text = format!("R_{j} sup {:.4} -> {:.4} ({:.1}%)", coarse.sup_ratio, refined.sup_ratio, 100.0 * change);
        let floor = match j {
            1 => Some(0.45),
            2 => Some(2.0),
            _ => None,
        };
        if let Some(floor) = floor {
            let slope = coarse.fitted_slope;
            ok &= slope.is_some_and(|s| s >= floor);
            text.push_str(&format!(
                ", slope {} (>= {floor}, predicted {:.2})",
                slope.map_or("none".into(), |s| format!("{s:.3}")),
                coarse.predicted_slope
            ));
        }
        parts.push(text);
    }
    check(ok, parts.join("; "))
}

fn criterion_6(stack: &AnsatzStack, fine: &AnsatzStack) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for j in 1..=2 {
        let c = &stack.levels[j - 1].cutoff;
        let f = &fine.levels[j - 1].cutoff;
        let same = c.a == f.a && c.t == f.t;
        let inside = c.ratio_relative <= 1.0 && c.ratio_damped <= 1.0 && f.ratio_relative <= 1.0 && f.ratio_damped <= 1.0;
        ok &= same && inside;
        parts.push(format!(
            "j={j} a={} t={} (refined a={} t={}), margins {:.3}/{:.3} (refined {:.3}/{:.3})",
            c.a,
            c.t,
            f.a,
            f.t,
            1.0 - c.ratio_relative,
            1.0 - c.ratio_damped,
            1.0 - f.ratio_relative,
            1.0 - f.ratio_damped
        ));
    }
    check(ok, parts.join("; "))
}

struct ReferenceRun {
    cfg: RunConfig,
    out: PathBuf,
    manifest: blowup_core::manifest::RunManifest,
}

fn criterion_7(run: &ReferenceRun) -> Outcome {
    let rec = &run.manifest.runs[&16];
    check(
        rec.final_route_gap < 1e-6,
        format!("n=16 relative L2 gap {:.3e} at t = {:.4} (< 1e-6)", rec.final_route_gap, rec.plan.t_start + rec.plan.delta0),
    )
}

fn criterion_8(run: &ReferenceRun) -> Outcome {
    let growth = &run.manifest.classify.as_ref().expect("classify section").growth;
    let finite = growth.rows.len() == 3 && growth.rows.iter().all(|r| r.constant.is_finite() && r.constant > 0.0);
    let rows: Vec<String> = growth
        .rows
        .iter()
        .map(|r| format!("C_{} = {:.3} at t = {:.4}", r.n, r.constant, r.at))
        .collect();
    check(
        finite && growth.spread < 3.0,
        format!("{}, spread {:.3} (< 3)", rows.join(", "), growth.spread),
    )
}

fn criterion_9(run: &ReferenceRun) -> Outcome {
    let (runs, _) = read_ladder(&run.cfg, &run.out).map_err(|e| e.to_string())?;
    let verdicts = classify_blowup_set(&runs, &run.cfg.diagnostics, &run.cfg.compact_set).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut parts = Vec::new();
    for v in &verdicts {
        let interior = [0.0, 0.5, -0.5].contains(&v.probe);
        let outside = [2.5, -2.5, 3.0, -3.0].contains(&v.probe);
        let u: Vec<f64> = v.u_exponents.iter().filter_map(|e| e.1).collect();
        let ut: Vec<f64> = v.ut_exponents.iter().filter_map(|e| e.1).collect();
        let range = |xs: &[f64]| {
            let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        };
        if interior {
            let in_band = u.len() == runs.len()
                && ut.len() == runs.len()
                && u.iter().all(|e| (-1.1..=-0.85).contains(e))
                && ut.iter().all(|e| (-2.1..=-1.8).contains(e));
            ok &= v.verdict == Verdict::Divergent && in_band;
            let (ul, uh) = range(&u);
            let (tl, th) = range(&ut);
            parts.push(format!("x0={}: {:?} u [{ul:.3},{uh:.3}] ut [{tl:.3},{th:.3}]", v.probe, v.verdict));
        } else if outside {
            ok &= v.verdict == Verdict::Bounded && v.u_ratio < 2.0;
            parts.push(format!("x0={}: {:?} max/min {:.3}", v.probe, v.verdict, v.u_ratio));
        }
    }
    let seen = verdicts.len();
    ok &= seen == 7;
    check(ok, parts.join("; "))
}

fn criterion_10(stack: &AnsatzStack) -> Outcome {
    let t = 0.05;
    let ceiling = 1.0;
    let frame = WeightedFrame::new(stack, t, ceiling).map_err(|e| e.to_string())?;
    let level = blowup_core::ansatz::compute_truncation_bound(stack, 20).map_err(|e| e.to_string())?;
    let nl = TruncatedNonlinearity::new(3.0, level).unwrap();
    let mut ok = true;
    let mut worst = f64::INFINITY;
    let mut cases = 0;
    for (center, width) in [(0.0, 0.25), (0.0, 1.0), (0.9, 0.1), (2.0, 0.5)] {
        for c in coercivity_probe(&frame, &stack.space, &nl, center, width, &[1e-3, 1e-2, 1e-1]) {
            ok &= c.holds;
            worst = worst.min(2.0 * c.energy / (c.norm * c.norm));
            cases += 1;
        }
    }
    check(ok, format!("{cases} cases at t = {t}, min 2H/N^2 = {worst:.4} (>= 1)"))
}

fn csv_files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, acc: &mut BTreeMap<PathBuf, Vec<u8>>) {
        let Ok(entries) = std::fs::read_dir(dir) else { return };
        for entry in entries {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, acc);
            } else if path.extension().is_some_and(|e| e == "csv") {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                acc.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut acc = BTreeMap::new();
    walk(root, root, &mut acc);
    acc
}

fn criterion_11(run: &ReferenceRun, scratch: &Path) -> Outcome {
    let again = scratch.join("repeat");
    run_pipeline(&run.cfg, &again, Stage::All).map_err(|e| e.to_string())?;
    let first = csv_files(&run.out);
    let second = csv_files(&again);
    let differing: Vec<String> = first
        .iter()
        .filter(|(k, v)| second.get(*k) != Some(*v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    let same_set = first.len() == second.len() && !first.is_empty();

    let mut wide = run.cfg.clone();
    wide.grid.half_width = 12.0;
    let wide_out = scratch.join("wide");
    run_pipeline(&wide, &wide_out, Stage::Ansatz).map_err(|e| e.to_string())?;
    run_pipeline(&wide, &wide_out, Stage::Solve).map_err(|e| e.to_string())?;
    let mut compared = 0;
    let mut changed = Vec::new();
    for &n in &run.cfg.solver.ladder {
        let names = ["h1_norm_core.csv", "eps_l2_core.csv"]
            .into_iter()
            .map(String::from)
            .chain(run.cfg.diagnostics.probes.iter().flat_map(|&x0| {
                ["u", "ut"].map(|k| format!("{}.csv", blowup_core::pipeline::probe_stem(k, x0)))
            }));
        for name in names {
            let a = std::fs::read(run_dir(&run.out, n).join(&name)).map_err(|e| e.to_string())?;
            let b = std::fs::read(run_dir(&wide_out, n).join(&name)).map_err(|e| e.to_string())?;
            compared += 1;
            if a != b {
                changed.push(format!("n{n}/{name}"));
            }
        }
    }
    check(
        same_set && differing.is_empty() && changed.is_empty(),
        format!(
            "{} CSVs compared across two runs, {} differ {:?}; {compared} core series L=8 vs L=12, {} differ {:?}",
            first.len(),
            differing.len(),
            differing,
            changed.len(),
            changed
        ),
    )
}

fn report(id: u32, runtime_budget: f64, f: impl FnOnce() -> Outcome, failures: &mut Vec<u32>) {
    let clock = Instant::now();
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
        .unwrap_or_else(|_| Err("panicked".to_string()));
    let secs = clock.elapsed().as_secs_f64();
    let (tag, detail) = match result {
        Ok(d) => ("PASS", d),
        Err(d) => {
            failures.push(id);
            ("FAIL", d)
        }
    };
    println!("criterion {id:>2}: {tag} [{secs:.1} s, budget {runtime_budget} s] {detail}");
}

fn main() {
    let scratch = tempfile::tempdir().expect("scratch directory");
    let mut failures = Vec::new();
    println!("acceptance: p = 3, N = 1, line mode, k = 10, J = 2, L = 8, dx = 16/4096");

    report(1, 1.0, criterion_1, &mut failures);
    report(2, 1.0, criterion_2, &mut failures);
    report(3, 5.0, criterion_3, &mut failures);

    let settings = AnsatzSettings::default();
    let stack = stack_for(&interval(), &settings);
    report(4, 30.0, || criterion_4(&stack), &mut failures);
    let finer_time = stack_for(
        &interval(),
        &AnsatzSettings {
            per_octave: 2 * settings.per_octave,
            ..settings.clone()
        },
    );
    report(5, 60.0, || criterion_5(&stack, &finer_time), &mut failures);
    drop(finer_time);
    let finer_space = stack_for(
        &interval(),
        &AnsatzSettings {
            dx: 0.5 * settings.dx,
            ..settings.clone()
        },
    );
    report(6, 30.0, || criterion_6(&stack, &finer_space), &mut failures);
    drop(finer_space);

    let cfg = RunConfig::reference();
    let out = scratch.path().join("reference");
    let clock = Instant::now();
    let manifest = run_pipeline(&cfg, &out, Stage::All).expect("reference pipeline");
    println!("reference pipeline (n = 8, 16, 32) finished in {:.1} s", clock.elapsed().as_secs_f64());
    let run = ReferenceRun { cfg, out, manifest };
    report(7, 60.0, || criterion_7(&run), &mut failures);
    report(8, 300.0, || criterion_8(&run), &mut failures);
    report(9, 300.0, || criterion_9(&run), &mut failures);
    report(10, 5.0, || criterion_10(&stack), &mut failures);
    report(11, 600.0, || criterion_11(&run, scratch.path()), &mut failures);

    if failures.is_empty() {
        println!("acceptance: all 11 criteria pass");
    } else {
        println!("acceptance: {} of 11 criteria fail: {:?}", failures.len(), failures);
        std::process::exit(1);
    }
}
