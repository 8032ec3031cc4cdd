//! Leapfrog integration of the truncated wave equation from ansatz data.
//!
//! Two unknowns are supported: the full solution `u` with data
//! `(U_J, ∂ₜU_J)` at `T_n`, and the perturbation `ε = u - U_J` with zero
//! data, driven by the residual of `U_J`. Both share one stepping kernel.

use serde::{Deserialize, Serialize};

use crate::ansatz::{compute_truncation_bound, AnsatzStack};
use crate::error::{Error, Result};
use crate::grid::SpaceGrid;
use crate::math::{DimMode, TruncatedNonlinearity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Prescribed values at the outer nodes (zero for `ε`, `U_J` for `u`).
    Dirichlet,
    /// Line mode only: the first and last node are identified.
    Periodic,
}

/// Source term driving the `ε` equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Forcing {
    /// Residual of `U_J` under the discrete scheme itself, so that
    /// `U_J + ε` reproduces the direct run up to rounding.
    Discrete,
    /// Interpolated stack residual `E_J`.
    Continuous,
    /// No source; with zero data the solution stays zero.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Ladder index: the run starts at `T_n = 1/n`.
    pub n: u32,
    /// Upper bound on `Δt/Δx`.
    pub cfl: f64,
    /// Caps the step at `T_n / steps_per_start_time`; the solution varies on the scale `T_n`.
    pub steps_per_start_time: f64,
    /// Run length; defaults to `min(0.2, t_J - T_n)`.
    pub delta0: Option<f64>,
    pub boundary: Boundary,
    pub forcing: Forcing,
    /// Approximate number of snapshots handed to the observer.
    pub samples: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n: 16,
            cfl: 0.5,
            steps_per_start_time: 1000.0,
            delta0: None,
            boundary: Boundary::Dirichlet,
            forcing: Forcing::Discrete,
            samples: 200,
        }
    }
}

impl SolverConfig {
    pub fn start_time(&self) -> f64 {
        1.0 / self.n as f64
    }
}

/// Resolved time stepping of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub n: u32,
    pub t_start: f64,
    pub delta0: f64,
    pub dt: f64,
    pub steps: usize,
    pub stride: usize,
    pub truncation_level: f64,
}

/// Fields at one time. `u` holds `u` or `ε`, `v` its time derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveState {
    pub t: f64,
    pub step: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub plan: RunPlan,
    /// Largest `|u|` (or `|U_J + ε|`) fed to the nonlinearity.
    pub max_amplitude: f64,
    /// True when the truncation never acted, i.e. `f_n = f` along the run.
    pub truncation_dormant: bool,
    pub snapshots: usize,
}

/// Fixes `Δt`, the step count and the truncation level for a run.
pub fn plan_run(stack: &AnsatzStack, cfg: &SolverConfig) -> Result<RunPlan> {
    if !(cfg.cfl > 0.0 && cfg.cfl < 1.0) {
        return Err(Error::Cfl(cfg.cfl));
    }
    if !(cfg.steps_per_start_time >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "steps per start time must be at least 1, got {}",
            cfg.steps_per_start_time
        )));
    }
    if cfg.n == 0 {
        return Err(Error::InvalidParameter("ladder index n must be positive".into()));
    }
    let t_start = cfg.start_time();
    let t_final = stack.t_final();
    let delta0 = cfg.delta0.unwrap_or_else(|| 0.2f64.min(t_final - t_start));
    if !(delta0 > 0.0) || t_start + delta0 > t_final * (1.0 + 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "run window [{t_start}, {}] is not inside the stack range ending at t_J = {t_final}",
            t_start + delta0
        )));
    }
    if delta0 + 1.0 >= stack.space.half_width - 4.0 {
        return Err(Error::InvalidParameter(format!(
            "run length {delta0} leaves no causality margin on a domain of half-width {}",
            stack.space.half_width
        )));
    }
    if cfg.boundary == Boundary::Periodic && stack.space.mode == DimMode::Radial {
        return Err(Error::InvalidParameter("periodic boundaries need line mode".into()));
    }
    let truncation_level = compute_truncation_bound(stack, cfg.n)?;
    let dt_max = (cfg.cfl * stack.space.dx).min(t_start / cfg.steps_per_start_time);
    let steps = (delta0 / dt_max).ceil() as usize;
    let dt = delta0 / steps as f64;
    let stride = steps.div_ceil(cfg.samples.max(1)).max(1);
    Ok(RunPlan {
        n: cfg.n,
        t_start,
        delta0,
        dt,
        steps,
        stride,
        truncation_level,
    })
}

/// Discrete Laplacian with the given boundary treatment. Dirichlet nodes are left untouched.
pub fn apply_laplacian(space: &SpaceGrid, boundary: Boundary, x: &[f64], out: &mut [f64]) {
    let n = x.len();
    match boundary {
        Boundary::Dirichlet => {
            let first = match space.mode {
                DimMode::Line => 1,
                DimMode::Radial => 0,
            };
            for i in first..n - 1 {
                out[i] = space.laplacian2(x, i);
            }
        }
        Boundary::Periodic => {
            let period = n - 1;
            let h2 = space.dx * space.dx;
            for i in 0..period {
                let l = x[(i + period - 1) % period];
                let r = x[(i + 1) % period];
                out[i] = (l - 2.0 * x[i] + r) / h2;
            }
            out[period] = out[0];
        }
    }
}

fn is_interior(space: &SpaceGrid, boundary: Boundary, i: usize) -> bool {
    let n = space.len();
    match (boundary, space.mode) {
        (Boundary::Periodic, _) => true,
        (Boundary::Dirichlet, DimMode::Line) => i > 0 && i + 1 < n,
        (Boundary::Dirichlet, DimMode::Radial) => i + 1 < n,
    }
}

/// Shared leapfrog driver.
///
/// `x1` is the first step. `rhs(m, x_m, out)` writes the non-Laplacian part of
/// the acceleration at step `m`; `edge(m, x)` overwrites Dirichlet nodes at
/// step `m`. The observer sees steps `0, stride, 2·stride, …` and the last step,
/// with velocities from centred differences (one-sided at the end).
#[allow(clippy::too_many_arguments)]
pub fn run_leapfrog<R, E, O>(
    space: &SpaceGrid,
    boundary: Boundary,
    t0: f64,
    dt: f64,
    steps: usize,
    stride: usize,
    x0: Vec<f64>,
    v0: Vec<f64>,
    x1: Vec<f64>,
    mut rhs: R,
    mut edge: E,
    mut observer: O,
) -> Result<(Vec<f64>, Vec<f64>)>
where
    R: FnMut(usize, &[f64], &mut [f64]) -> Result<()>,
    E: FnMut(usize, &mut [f64]),
    O: FnMut(&WaveState) -> Result<()>,
{
    let n = space.len();
    let dt2 = dt * dt;
    observer(&WaveState {
        t: t0,
        step: 0,
        u: x0.clone(),
        v: v0,
    })?;
    check_finite(&x1, t0 + dt, 1)?;
    let mut before = x0.clone();
    let mut prev = x0;
    let mut cur = x1;
    let mut lap = vec![0.0; n];
    let mut acc = vec![0.0; n];
    let mut next = vec![0.0; n];
    for m in 1..steps {
        apply_laplacian(space, boundary, &cur, &mut lap);
        rhs(m, &cur, &mut acc)?;
        for i in 0..n {
            next[i] = if is_interior(space, boundary, i) {
                2.0 * cur[i] - prev[i] + dt2 * (lap[i] + acc[i])
            } else {
                0.0
            };
        }
        if boundary == Boundary::Periodic {
            next[n - 1] = next[0];
        } else {
            edge(m + 1, &mut next);
        }
        check_finite(&next, t0 + (m + 1) as f64 * dt, m + 1)?;
        if m % stride == 0 {
            let v: Vec<f64> = next.iter().zip(&prev).map(|(a, b)| (a - b) / (2.0 * dt)).collect();
            observer(&WaveState {
                t: t0 + m as f64 * dt,
                step: m,
                u: cur.clone(),
                v,
            })?;
        }
        std::mem::swap(&mut before, &mut prev);
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
    }
    let v_end: Vec<f64> = if steps >= 2 {
        (0..n).map(|i| (3.0 * cur[i] - 4.0 * prev[i] + before[i]) / (2.0 * dt)).collect()
    } else {
        (0..n).map(|i| (cur[i] - prev[i]) / dt).collect()
    };
    observer(&WaveState {
        t: t0 + steps as f64 * dt,
        step: steps,
        u: cur.clone(),
        v: v_end,
    })?;
    Ok((prev, cur))
}

fn check_finite(x: &[f64], t: f64, step: usize) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(node) => Err(Error::Instability { t, step, node }),
        None => Ok(()),
    }
}

/// Taylor start `x¹ = x⁰ + Δt v⁰ + ½Δt² (Δ_h x⁰ + a⁰)` on interior nodes.
fn taylor_start(space: &SpaceGrid, boundary: Boundary, dt: f64, x0: &[f64], v0: &[f64], acc0: &[f64]) -> Vec<f64> {
    let mut lap = vec![0.0; x0.len()];
    apply_laplacian(space, boundary, x0, &mut lap);
    (0..x0.len())
        .map(|i| {
            if is_interior(space, boundary, i) {
                x0[i] + dt * v0[i] + 0.5 * dt * dt * (lap[i] + acc0[i])
            } else {
                x0[i]
            }
        })
        .collect()
}

/// Indices of the Dirichlet nodes of a grid.
fn edge_nodes(space: &SpaceGrid) -> Vec<usize> {
    let n = space.len();
    match space.mode {
        DimMode::Line => vec![0, n - 1],
        DimMode::Radial => vec![n - 1],
    }
}

/// Solves `∂ₜₜu = Δu + f_n(u)` with `(u, ∂ₜu)(T_n) = (U_J, ∂ₜU_J)(T_n)`.
pub fn integrate_direct<O>(stack: &AnsatzStack, cfg: &SolverConfig, observer: O) -> Result<RunSummary>
where
    O: FnMut(&WaveState) -> Result<()>,
{
    let plan = plan_run(stack, cfg)?;
    let space = &stack.space;
    let nl = TruncatedNonlinearity::new(stack.params.p, plan.truncation_level)?;
    let slice = stack.eval(plan.t_start)?;
    let acc0: Vec<f64> = slice.u.iter().map(|&u| nl.f(u)).collect();
    let edges = edge_nodes(space);
    let mut x1 = taylor_start(space, cfg.boundary, plan.dt, &slice.u, &slice.ut, &acc0);
    let edge_values = |m: usize, x: &mut [f64]| -> Result<()> {
        let t = plan.t_start + m as f64 * plan.dt;
        for &i in &edges {
            x[i] = stack.eval_node(t.min(stack.t_final()), i)?.0;
        }
        Ok(())
    };
    if cfg.boundary == Boundary::Dirichlet {
        edge_values(1, &mut x1)?;
    }
    let mut max_amplitude = slice.u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut edge_err = None;
    let mut snapshots = 0;
    let mut observer = observer;
    run_leapfrog(
        space,
        cfg.boundary,
        plan.t_start,
        plan.dt,
        plan.steps,
        plan.stride,
        slice.u.clone(),
        slice.ut.clone(),
        x1,
        |_, x, out| {
            for (o, &u) in out.iter_mut().zip(x) {
                max_amplitude = max_amplitude.max(u.abs());
                *o = nl.f(u);
            }
            Ok(())
        },
        |m, x| {
            if let Err(e) = edge_values(m, x) {
                edge_err.get_or_insert(e);
            }
        },
        |s| {
            snapshots += 1;
            observer(s)
        },
    )?;
    if let Some(e) = edge_err {
        return Err(e);
    }
    Ok(RunSummary {
        truncation_dormant: max_amplitude <= plan.truncation_level,
        plan,
        max_amplitude,
        snapshots,
    })
}

/// Solves `∂ₜₜε = Δε + f_n(U_J + ε) - f_n(U_J) + E` with zero data at `T_n`.
pub fn integrate_epsilon<O>(stack: &AnsatzStack, cfg: &SolverConfig, observer: O) -> Result<RunSummary>
where
    O: FnMut(&WaveState) -> Result<()>,
{
    let plan = plan_run(stack, cfg)?;
    let space = &stack.space;
    let n = space.len();
    let nl = TruncatedNonlinearity::new(stack.params.p, plan.truncation_level)?;
    let dt = plan.dt;
    let time = |m: usize| plan.t_start + m as f64 * dt;
    // rolling ansatz samples U^{m-1}, U^m, U^{m+1}
    let mut u_prev = vec![0.0; n];
    let mut u_cur = vec![0.0; n];
    let mut u_next = vec![0.0; n];
    let mut ut0 = vec![0.0; n];
    stack.eval_into(time(0), &mut u_cur, Some(&mut ut0), None)?;
    stack.eval_into(time(1), &mut u_next, None, None)?;
    let mut lap_u = vec![0.0; n];
    let mut residual = vec![0.0; n];
    let zero = vec![0.0; n];
    let x1 = match cfg.forcing {
        Forcing::Discrete => {
            let acc0: Vec<f64> = u_cur.iter().map(|&u| nl.f(u)).collect();
            let direct = taylor_start(space, cfg.boundary, dt, &u_cur, &ut0, &acc0);
            (0..n)
                .map(|i| if is_interior(space, cfg.boundary, i) { direct[i] - u_next[i] } else { 0.0 })
                .collect()
        }
        Forcing::Continuous => {
            let mut e0 = vec![0.0; n];
            let mut scratch = vec![0.0; n];
            stack.eval_into(time(0), &mut scratch, None, Some(&mut e0))?;
            taylor_start(space, cfg.boundary, dt, &zero, &zero, &e0)
        }
        Forcing::Zero => zero.clone(),
    };
    let mut max_amplitude = u_cur.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut snapshots = 0;
    let mut observer = observer;
    let mut loaded = 1usize;
    run_leapfrog(
        space,
        cfg.boundary,
        plan.t_start,
        dt,
        plan.steps,
        plan.stride,
        zero.clone(),
        zero.clone(),
        x1,
        |m, eps, out| {
            // advance the rolling window so that u_cur = U^m
            while loaded < m + 1 {
                std::mem::swap(&mut u_prev, &mut u_cur);
                std::mem::swap(&mut u_cur, &mut u_next);
                stack.eval_into(time(loaded + 1).min(stack.t_final()), &mut u_next, None, None)?;
                loaded += 1;
            }
            match cfg.forcing {
                Forcing::Discrete => {
                    apply_laplacian(space, cfg.boundary, &u_cur, &mut lap_u);
                    for i in 0..n {
                        let tt = (u_next[i] - 2.0 * u_cur[i] + u_prev[i]) / (dt * dt);
                        residual[i] = -tt + lap_u[i] + nl.f(u_cur[i]);
                    }
                }
                Forcing::Continuous => {
                    let mut scratch = vec![0.0; n];
                    stack.eval_into(time(m), &mut scratch, None, Some(&mut residual))?;
                }
                Forcing::Zero => {}
            }
            for i in 0..n {
                let total = u_cur[i] + eps[i];
                max_amplitude = max_amplitude.max(total.abs());
                let src = if cfg.forcing == Forcing::Zero { 0.0 } else { residual[i] };
                out[i] = nl.f(total) - nl.f(u_cur[i]) + src;
            }
            Ok(())
        },
        |_, x| {
            for i in edge_nodes(space) {
                x[i] = 0.0;
            }
        },
        |s| {
            snapshots += 1;
            observer(s)
        },
    )?;
    Ok(RunSummary {
        truncation_dormant: max_amplitude <= plan.truncation_level,
        plan,
        max_amplitude,
        snapshots,
    })
}

/// Runs the direct route forward over the plan, swaps the last two states
/// and steps back to the start. Returns the relative L² distance between
/// the recovered and the original initial data.
pub fn reversal_error(stack: &AnsatzStack, cfg: &SolverConfig) -> Result<f64> {
    let plan = plan_run(stack, cfg)?;
    let space = &stack.space;
    let nl = TruncatedNonlinearity::new(stack.params.p, plan.truncation_level)?;
    let slice = stack.eval(plan.t_start)?;
    let acc0: Vec<f64> = slice.u.iter().map(|&u| nl.f(u)).collect();
    let edges = edge_nodes(space);
    let t_of = |m: usize| plan.t_start + m as f64 * plan.dt;
    let boundary_at = |m: usize| -> Result<Vec<f64>> {
        edges
            .iter()
            .map(|&i| stack.eval_node(t_of(m).min(stack.t_final()), i).map(|v| v.0))
            .collect()
    };
    // tabulate the Dirichlet data so both directions see identical values
    let table: Vec<Vec<f64>> = (0..=plan.steps).map(boundary_at).collect::<Result<_>>()?;
    let mut x1 = taylor_start(space, cfg.boundary, plan.dt, &slice.u, &slice.ut, &acc0);
    for (q, &i) in edges.iter().enumerate() {
        x1[i] = table[1][q];
    }
    let rhs = |_: usize, x: &[f64], out: &mut [f64]| {
        for (o, &u) in out.iter_mut().zip(x) {
            *o = nl.f(u);
        }
        Ok(())
    };
    let (penultimate, last) = run_leapfrog(
        space,
        cfg.boundary,
        plan.t_start,
        plan.dt,
        plan.steps,
        plan.steps,
        slice.u.clone(),
        slice.ut.clone(),
        x1,
        rhs,
        |m, x| {
            for (q, &i) in edges.iter().enumerate() {
                x[i] = table[m][q];
            }
        },
        |_| Ok(()),
    )?;
    let steps = plan.steps;
    let (_, recovered) = run_leapfrog(
        space,
        cfg.boundary,
        t_of(steps),
        -plan.dt,
        steps,
        steps,
        last,
        vec![0.0; space.len()],
        penultimate,
        rhs,
        |m, x| {
            for (q, &i) in edges.iter().enumerate() {
                x[i] = table[steps - m][q];
            }
        },
        |_| Ok(()),
    )?;
    let num: f64 = recovered.iter().zip(&slice.u).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = slice.u.iter().map(|a| a * a).sum();
    Ok((num / den).sqrt())
}
