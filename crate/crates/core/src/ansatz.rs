//! Refined ansatz `U_J = U₀ + Σ χ_j w_j` sampled on a space-time grid.
//!
//! Each correction solves the linearized ODE `∂ₜₜw = f'(U₀) w + E_{j-1}` at
//! fixed `x` through the variation-of-parameters kernel
//! `w = -b (U₀^{(p+1)/2} ∫₀ᵗ U₀^{-p} E ds + U₀^{-p} ∫ₜ^{t_{j-1}} U₀^{(p+1)/2} E ds)`.
//! The two integrals are accumulated with non-uniform Simpson sums on a
//! geometric time grid; everything else is pointwise in `x` apart from the
//! spatial Laplacian of `χ_j w_j`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{second_difference, SpaceGrid, TimeGrid};
use crate::interp::{hermite, hermite_derivative, pchip_eval};
use crate::math::{chi, ProblemParams};
use crate::profile::{AmpSample, AmplitudeProfile};
use crate::quadrature::CumulativeSimpson;

/// Grid and search settings for building the stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnsatzSettings {
    /// Half-width `L` of the spatial domain (radius in radial mode).
    pub half_width: f64,
    pub dx: f64,
    /// Smallest time the stack must cover.
    pub t_min: f64,
    /// Geometric time nodes per factor of two.
    pub per_octave: usize,
    /// Largest number of halvings tried for `a_j`.
    pub max_halvings: u32,
}

impl Default for AnsatzSettings {
    fn default() -> Self {
        Self {
            half_width: 8.0,
            dx: 16.0 / 4096.0,
            t_min: 1.0 / 64.0,
            per_octave: 64,
            max_halvings: 60,
        }
    }
}

/// Outcome of the `(a_j, t_j)` search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffChoice {
    pub level: usize,
    pub a: f64,
    pub t: f64,
    pub a_halvings: u32,
    pub t_halvings: u32,
    /// Time index of `t_j`.
    pub top: usize,
    /// `max χ_j |w_j| / (2^{-j-2} U₀)` over the accepted window (≤ 1).
    pub ratio_relative: f64,
    /// `max χ_j |w_j| / (2^{-j} (1+U₀)^{-(p-1)/2} U₀)` over the accepted window (≤ 1).
    pub ratio_damped: f64,
    pub worst_x: f64,
    pub worst_t: f64,
}

/// One correction level of the stack.
#[derive(Debug, Clone)]
pub struct Level {
    pub cutoff: CutoffChoice,
    /// `χ(A(x)/a_j)` per node.
    pub chi: Vec<f64>,
    /// Time index of `t_{j-1}`: the integrals are defined up to it.
    pub prev_top: usize,
    /// `∫₀ᵗ U₀^{-p} E_{j-1}`, node-major `[x][t]`.
    pub i_minus: Vec<f64>,
    /// `∫ₜ^{t_{j-1}} U₀^{(p+1)/2} E_{j-1}`, node-major.
    pub i_plus: Vec<f64>,
    /// `E_j` for times up to `t_j`, node-major.
    pub residual: Vec<f64>,
    /// Nodes where the Laplacian used a one-sided stencil with a nonzero input.
    pub one_sided_nonzero: usize,
}

/// Samples of the refined ansatz and all intermediate fields.
#[derive(Debug, Clone)]
pub struct AnsatzStack {
    pub params: ProblemParams,
    pub profile: AmplitudeProfile,
    pub settings: AnsatzSettings,
    pub space: SpaceGrid,
    pub time: TimeGrid,
    pub amp: Vec<AmpSample>,
    /// `U₀` node-major.
    pub u0: Vec<f64>,
    /// `E₀ = ΔU₀` node-major.
    pub e0: Vec<f64>,
    /// Kernel coefficient `b`.
    pub coefficient: f64,
    pub levels: Vec<Level>,
}

/// `f(u + d) - f(u)` without cancellation when both arguments are positive.
#[inline]
pub fn f_increment(p: f64, u: f64, d: f64) -> f64 {
    if u > 0.0 && u + d > 0.0 {
        u.powf(p) * (p * (d / u).ln_1p()).exp_m1()
    } else {
        (u + d).abs().powf(p - 1.0) * (u + d) - u.abs().powf(p - 1.0) * u
    }
}

/// Accumulates both kernel integrals for one spatial node.
///
/// `u0` and `source` are samples on `time.nodes[..=top]`; the result is written
/// to `minus[..=top]` and `plus[..=top]`. The piece of `∫₀^{t_0}` below the grid
/// is closed with a power-law model `E ≈ c (s + A)^γ` fitted on the first two nodes.
#[allow(clippy::too_many_arguments)]
pub fn correction_integrals(
    params: &ProblemParams,
    nodes: &[f64],
    simpson: &CumulativeSimpson,
    amp: f64,
    u0: &[f64],
    source: &[f64],
    minus: &mut [f64],
    plus: &mut [f64],
) -> Result<()> {
    let p = params.p;
    let top = nodes.len() - 1;
    let half = 0.5 * (p + 1.0);
    let g_minus: Vec<f64> = (0..=top).map(|m| u0[m].powf(-p) * source[m]).collect();
    let g_plus: Vec<f64> = (0..=top).map(|m| u0[m].powf(half) * source[m]).collect();
    let head = head_closure(params, nodes, amp, source)?;
    simpson.forward(&g_minus, &mut minus[..=top]);
    for v in minus[..=top].iter_mut() {
        *v += head;
    }
    simpson.backward(&g_plus, top, &mut plus[..=top]);
    Ok(())
}

fn head_closure(params: &ProblemParams, nodes: &[f64], amp: f64, source: &[f64]) -> Result<f64> {
    let p = params.p;
    let e0 = source[0];
    if e0 == 0.0 {
        return Ok(0.0);
    }
    let w0 = nodes[0] + amp;
    let w1 = nodes[1] + amp;
    let base = 2.0 * p / (p - 1.0);
    let gamma = if e0 * source[1] > 0.0 {
        (source[1] / e0).ln() / (w1 / w0).ln()
    } else {
        0.0
    };
    let beta = base + gamma;
    if amp > 0.0 {
        // Off the zero set the integrand is smooth on [0, t_0]. A fitted power
        // steeper than anything the hierarchy produces means the source is
        // crossing zero nearby; extrapolate the integrand linearly instead.
        let steepest = 4.0 * (params.rate() + 2.0);
        if !gamma.is_finite() || gamma.abs() > steepest {
            let g0 = e0 * (params.kappa * w0.powf(-params.rate())).powf(-p);
            let g1 = source[1] * (params.kappa * w1.powf(-params.rate())).powf(-p);
            let slope = (g1 - g0) / (nodes[1] - nodes[0]);
            return Ok(nodes[0] * (g0 - 0.5 * slope * nodes[0]));
        }
        let g0 = e0 * params.kappa.powf(-p) * w0.powf(base);
        let r = amp / w0;
        let b1 = beta + 1.0;
        if b1.abs() < 1e-12 {
            return Ok(-g0 * w0 * r.ln());
        }
        return Ok(g0 * w0 * (1.0 - r.powf(b1)) / b1);
    }
    if beta <= -1.0 + params.tolerances.head_exponent_margin {
        return Err(Error::Construction {
            level: 0,
            reason: format!("non-integrable head: fitted exponent γ = {gamma:.4} gives integrand power {beta:.4}"),
        });
    }
    let g0 = e0 * params.kappa.powf(-p) * w0.powf(base);
    Ok(g0 * w0 / (beta + 1.0))
}

impl AnsatzStack {
    pub fn nx(&self) -> usize {
        self.space.len()
    }

    pub fn nt(&self) -> usize {
        self.time.len()
    }

    #[inline]
    pub fn idx(&self, i: usize, m: usize) -> usize {
        i * self.nt() + m
    }

    /// Time index of `t_j` (`t_0 = 1` is the last node).
    pub fn top(&self, j: usize) -> usize {
        if j == 0 {
            self.nt() - 1
        } else {
            self.levels[j - 1].cutoff.top
        }
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Final time `t_J` of the stack.
    pub fn t_final(&self) -> f64 {
        self.time.nodes[self.top(self.depth())]
    }

    /// `E_j` at node `(i, m)`, valid for `m ≤ top(j)`.
    #[inline]
    pub fn residual(&self, j: usize, i: usize, m: usize) -> f64 {
        let k = self.idx(i, m);
        if j == 0 {
            self.e0[k]
        } else {
            self.levels[j - 1].residual[k]
        }
    }

    /// Correction `w_j` at node `(i, m)` for `m ≤ top(j-1)`.
    #[inline]
    pub fn w(&self, j: usize, i: usize, m: usize) -> f64 {
        let lv = &self.levels[j - 1];
        let k = self.idx(i, m);
        let u = self.u0[k];
        let p = self.params.p;
        -self.coefficient * (u.powf(0.5 * (p + 1.0)) * lv.i_minus[k] + u.powf(-p) * lv.i_plus[k])
    }

    /// `∂ₜw_j` at node `(i, m)`: the time derivative falls on the powers of `U₀` only.
    #[inline]
    pub fn wt(&self, j: usize, i: usize, m: usize) -> f64 {
        let lv = &self.levels[j - 1];
        let k = self.idx(i, m);
        let u = self.u0[k];
        let p = self.params.p;
        let ut = -(2.0 / (p + 1.0)).sqrt() * u.powf(0.5 * (p + 1.0));
        let half = 0.5 * (p + 1.0);
        -self.coefficient * (half * u.powf(half - 1.0) * ut * lv.i_minus[k] - p * u.powf(-p - 1.0) * ut * lv.i_plus[k])
    }

    /// `Σ_{ℓ≤j} χ_ℓ w_ℓ` at node `(i, m)`.
    #[inline]
    pub fn correction_sum(&self, j: usize, i: usize, m: usize) -> f64 {
        (1..=j)
            .filter(|&l| self.levels[l - 1].chi[i] > 0.0)
            .map(|l| self.levels[l - 1].chi[i] * self.w(l, i, m))
            .sum()
    }

    /// `U_j` at node `(i, m)`.
    #[inline]
    pub fn u_level(&self, j: usize, i: usize, m: usize) -> f64 {
        self.u0[self.idx(i, m)] + self.correction_sum(j, i, m)
    }

    /// `∂ₜU_j` at node `(i, m)`.
    pub fn ut_level(&self, j: usize, i: usize, m: usize) -> f64 {
        let p = self.params.p;
        let u = self.u0[self.idx(i, m)];
        let mut v = -(2.0 / (p + 1.0)).sqrt() * u.powf(0.5 * (p + 1.0));
        for l in 1..=j {
            let c = self.levels[l - 1].chi[i];
            if c > 0.0 {
                v += c * self.wt(l, i, m);
            }
        }
        v
    }
}

/// Builds the full stack: `U₀`, then `J` corrections with their cutoffs and residuals.
pub fn build_stack(params: &ProblemParams, profile: &AmplitudeProfile, settings: &AnsatzSettings) -> Result<AnsatzStack> {
    if settings.half_width < 8.0 {
        return Err(Error::InvalidParameter(format!(
            "domain half-width {} must be at least 8",
            settings.half_width
        )));
    }
    if profile.mode() != params.dim_mode {
        return Err(Error::InvalidParameter("profile and parameters disagree on the dimension mode".into()));
    }
    let space = SpaceGrid::new(params.dim_mode, params.n_dim, settings.half_width, settings.dx)?;
    let time = TimeGrid::new(settings.t_min, settings.per_octave)?;
    let nt = time.len();
    let amp: Vec<AmpSample> = space.nodes.iter().map(|&x| profile.eval(x)).collect();
    let mut u0 = vec![0.0; space.len() * nt];
    let mut e0 = vec![0.0; space.len() * nt];
    u0.par_chunks_mut(nt)
        .zip(e0.par_chunks_mut(nt))
        .enumerate()
        .for_each(|(i, (urow, erow))| {
            for m in 0..nt {
                let s = crate::profile::u0_from_amp(&amp[i], time.nodes[m], params);
                urow[m] = s.u;
                erow[m] = s.e0;
            }
        });
    let mut stack = AnsatzStack {
        params: params.clone(),
        profile: profile.clone(),
        settings: settings.clone(),
        space,
        time,
        amp,
        u0,
        e0,
        coefficient: params.correction_coefficient(),
        levels: Vec::with_capacity(params.depth),
    };
    for j in 1..=params.depth {
        let (i_minus, i_plus) = compute_correction(&stack, j)?;
        let prev_top = stack.top(j - 1);
        stack.levels.push(Level {
            cutoff: CutoffChoice {
                level: j,
                a: 0.0,
                t: 0.0,
                a_halvings: 0,
                t_halvings: 0,
                top: 0,
                ratio_relative: 0.0,
                ratio_damped: 0.0,
                worst_x: 0.0,
                worst_t: 0.0,
            },
            chi: vec![0.0; stack.nx()],
            prev_top,
            i_minus,
            i_plus,
            residual: Vec::new(),
            one_sided_nonzero: 0,
        });
        let choice = choose_cutoff_params(&stack, j)?;
        log::info!(
            "level {j}: a = {:e}, t = {:e}, constraint ratios {:.3} / {:.3}",
            choice.a,
            choice.t,
            choice.ratio_relative,
            choice.ratio_damped
        );
        let chi_vals: Vec<f64> = stack.amp.iter().map(|s| chi(s.a / choice.a)).collect();
        {
            let lv = stack.levels.last_mut().unwrap();
            lv.chi = chi_vals;
            lv.cutoff = choice;
        }
        let (residual, flagged) = compute_residual_recursive(&stack, j)?;
        let lv = stack.levels.last_mut().unwrap();
        lv.residual = residual;
        lv.one_sided_nonzero = flagged;
    }
    Ok(stack)
}

/// Kernel integrals of level `j` at every node for `t ≤ t_{j-1}`.
pub fn compute_correction(stack: &AnsatzStack, j: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let nt = stack.nt();
    let top = stack.top(j - 1);
    let nodes = &stack.time.nodes[..=top];
    let simpson = CumulativeSimpson::new(nodes)?;
    let mut i_minus = vec![0.0; stack.nx() * nt];
    let mut i_plus = vec![0.0; stack.nx() * nt];
    i_minus
        .par_chunks_mut(nt)
        .zip(i_plus.par_chunks_mut(nt))
        .enumerate()
        .try_for_each(|(i, (mrow, prow))| {
            let source: Vec<f64> = (0..=top).map(|m| stack.residual(j - 1, i, m)).collect();
            let u0 = &stack.u0[i * nt..i * nt + top + 1];
            correction_integrals(&stack.params, nodes, &simpson, stack.amp[i].a, u0, &source, mrow, prow).map_err(|e| match e {
                Error::Construction { reason, .. } => Error::Construction {
                    level: j,
                    reason: format!("{reason} at x = {}", stack.space.nodes[i]),
                },
                other => other,
            })?;
            if let Some(m) = (0..=top).find(|&m| !(mrow[m].is_finite() && prow[m].is_finite())) {
                return Err(Error::Construction {
                    level: j,
                    reason: format!("non-finite kernel integral at x = {}, t = {}", stack.space.nodes[i], nodes[m]),
                });
            }
            Ok(())
        })?;
    Ok((i_minus, i_plus))
}

/// Searches `a_j = a_{j-1} 2^{-m}`, `t_j = t_{j-1} 2^{-m'}` until both
/// pointwise bounds hold on every node for `t_min ≤ t ≤ t_j`. All halvings of
/// `a_j` are tried before `t_j` is shortened.
pub fn choose_cutoff_params(stack: &AnsatzStack, j: usize) -> Result<CutoffChoice> {
    let p = stack.params.p;
    let s = stack.time.per_octave;
    let prev_top = stack.top(j - 1);
    let (a_prev, _t_prev) = if j == 1 {
        (1.0, 1.0)
    } else {
        let c = &stack.levels[j - 2].cutoff;
        (c.a, c.t)
    };
    // candidate tops must keep t_j ≥ 2 t_min, i.e. index ≥ s
    let mut cands = Vec::new();
    let mut mp = 0usize;
    while prev_top >= s * (mp + 1) {
        cands.push(prev_top - s * mp);
        mp += 1;
    }
    if cands.is_empty() {
        return Err(Error::CutoffSearch {
            level: j,
            x: f64::NAN,
            t: stack.time.nodes[prev_top],
            excess: f64::INFINITY,
        });
    }
    let scale_rel = 2f64.powi(-(j as i32) - 2);
    let scale_damp = 2f64.powi(-(j as i32));
    // per node: running maximum of the two ratios (without χ) sampled at each candidate top
    let per_node: Vec<Vec<(f64, f64, usize, usize)>> = (0..stack.nx())
        .into_par_iter()
        .map(|i| {
            let mut out = Vec::with_capacity(cands.len());
            let mut r1 = 0.0f64;
            let mut r2 = 0.0f64;
            let (mut a1, mut a2) = (0usize, 0usize);
            let mut next = cands.len();
            for m in 0..=prev_top {
                let w = stack.w(j, i, m).abs();
                let u = stack.u0[stack.idx(i, m)];
                let q1 = w / (scale_rel * u);
                let q2 = w / (scale_damp * (1.0 + u).powf(-0.5 * (p - 1.0)) * u);
                if q1 > r1 {
                    r1 = q1;
                    a1 = m;
                }
                if q2 > r2 {
                    r2 = q2;
                    a2 = m;
                }
                while next > 0 && cands[next - 1] == m {
                    out.push((r1, r2, a1, a2));
                    next -= 1;
                }
            }
            // out is ordered by increasing top; candidates are decreasing
            out.reverse();
            out
        })
        .collect();
    let evaluate = |m: u32, c: usize| {
        let a = a_prev * 2f64.powi(-(m as i32));
        let mut worst = (0.0f64, 0.0f64, 0usize, 0usize);
        for (i, nodes) in per_node.iter().enumerate() {
            let ch = chi(stack.amp[i].a / a);
            if ch == 0.0 {
                continue;
            }
            let (r1, r2, m1, m2) = nodes[c];
            let v1 = ch * r1;
            let v2 = ch * r2;
            if v1.max(v2) > worst.0.max(worst.1) {
                worst = (v1, v2, i, if v1 >= v2 { m1 } else { m2 });
            } else {
                worst.0 = worst.0.max(v1);
                worst.1 = worst.1.max(v2);
            }
        }
        (a, worst)
    };
    let max_m = stack.settings.max_halvings;
    for (c, &top) in cands.iter().enumerate() {
        for m in 0..=max_m {
            let (a, (v1, v2, wi, wm)) = evaluate(m, c);
            if v1 <= 1.0 && v2 <= 1.0 {
                return Ok(CutoffChoice {
                    level: j,
                    a,
                    t: stack.time.nodes[top],
                    a_halvings: m,
                    t_halvings: c as u32,
                    top,
                    ratio_relative: v1,
                    ratio_damped: v2,
                    worst_x: stack.space.nodes[wi],
                    worst_t: stack.time.nodes[wm],
                });
            }
        }
    }
    let (_, (v1, v2, wi, wm)) = evaluate(max_m, cands.len() - 1);
    Err(Error::CutoffSearch {
        level: j,
        x: stack.space.nodes[wi],
        t: stack.time.nodes[wm],
        excess: v1.max(v2),
    })
}

/// `E_j = (1-χ_j)E_{j-1} + Δ(χ_j w_j) + f(U_j) - f(U_{j-1}) - f'(U₀) χ_j w_j`
/// for `t ≤ t_j`, with a fourth-order spatial Laplacian.
pub fn compute_residual_recursive(stack: &AnsatzStack, j: usize) -> Result<(Vec<f64>, usize)> {
    let nt = stack.nt();
    let nx = stack.nx();
    let top = stack.top(j);
    let lv = &stack.levels[j - 1];
    let p = stack.params.p;
    let mut cw = vec![0.0; nx * nt];
    cw.par_chunks_mut(nt).enumerate().for_each(|(i, row)| {
        let c = lv.chi[i];
        if c > 0.0 {
            for (m, v) in row.iter_mut().enumerate().take(top + 1) {
                *v = c * stack.w(j, i, m);
            }
        }
    });
    let mut out = vec![0.0; nx * nt];
    let flagged: usize = out
        .par_chunks_mut(nt)
        .enumerate()
        .map(|(i, row)| {
            let c = lv.chi[i];
            let mut flag = 0;
            for (m, slot) in row.iter_mut().enumerate().take(top + 1) {
                let (lap, edge) = stack.space.laplacian4(|q| cw[q * nt + m], i);
                if edge && lap != 0.0 {
                    flag = 1;
                }
                let k = i * nt + m;
                let e_prev = stack.residual(j - 1, i, m);
                let d = cw[k];
                let mut e = (1.0 - c) * e_prev + lap;
                if d != 0.0 {
                    let u0 = stack.u0[k];
                    let u_prev = u0 + stack.correction_sum(j - 1, i, m);
                    e += f_increment(p, u_prev, d) - p * u0.powf(p - 1.0) * d;
                }
                *slot = e;
            }
            flag
        })
        .sum();
    Ok((out, flagged))
}

/// Time indices strictly inside `[0, top]` after dropping 10% at each end.
pub fn interior_range(top: usize) -> std::ops::RangeInclusive<usize> {
    let count = top + 1;
    let cut = ((0.1 * count as f64).round() as usize).max(1);
    cut..=(top.saturating_sub(cut)).max(cut)
}

/// Worst per-slice relative residual of `∂ₜₜw_j - f'(U₀) w_j - E_{j-1}`, with
/// `∂ₜₜw_j` from three-point differences on the graded grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeResidualReport {
    pub level: usize,
    pub max_relative: f64,
    pub worst_t: f64,
}

pub fn correction_ode_residual(stack: &AnsatzStack, j: usize) -> OdeResidualReport {
    let p = stack.params.p;
    let tn = &stack.time.nodes;
    let prev_top = stack.top(j - 1);
    let slices: Vec<(f64, f64)> = interior_range(prev_top)
        .into_par_iter()
        .map(|m| {
            let mut num = 0.0f64;
            let mut den = 0.0f64;
            for i in 0..stack.nx() {
                let y = [stack.w(j, i, m - 1), stack.w(j, i, m), stack.w(j, i, m + 1)];
                let wtt = second_difference([tn[m - 1], tn[m], tn[m + 1]], y);
                let fw = p * stack.u0[stack.idx(i, m)].powf(p - 1.0) * y[1];
                let e = stack.residual(j - 1, i, m);
                num = num.max((wtt - fw - e).abs());
                den = den.max(fw.abs() + e.abs());
            }
            (if den > 0.0 { num / den } else { 0.0 }, tn[m])
        })
        .collect();
    let (max_relative, worst_t) = slices.into_iter().fold((0.0, 0.0), |acc, s| if s.0 > acc.0 { s } else { acc });
    OdeResidualReport {
        level: j,
        max_relative,
        worst_t,
    }
}

/// Agreement of the recursive residual with two independent assemblies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualCrossCheck {
    pub level: usize,
    /// Against the direct definition with analytic `∂ₜₜU_j`.
    pub algebraic_relative: f64,
    /// Against `∂ₜₜU_j` from second time differences.
    pub time_fd_relative: f64,
}

pub fn residual_cross_check(stack: &AnsatzStack, j: usize) -> ResidualCrossCheck {
    let p = stack.params.p;
    let nt = stack.nt();
    let nx = stack.nx();
    let top = stack.top(j);
    let tn = &stack.time.nodes;
    // χ_ℓ w_ℓ fields for ℓ ≤ j up to t_j
    let cws: Vec<Vec<f64>> = (1..=j)
        .map(|l| {
            let c = &stack.levels[l - 1].chi;
            let mut v = vec![0.0; nx * nt];
            v.par_chunks_mut(nt).enumerate().for_each(|(i, row)| {
                if c[i] > 0.0 {
                    for (m, s) in row.iter_mut().enumerate().take(top + 1) {
                        *s = c[i] * stack.w(l, i, m);
                    }
                }
            });
            v
        })
        .collect();
    let interior = interior_range(top);
    let per_slice: Vec<(f64, f64)> = (0..=top)
        .into_par_iter()
        .map(|m| {
            let mut alg_num = 0.0f64;
            let mut alg_den = 0.0f64;
            let mut fd_num = 0.0f64;
            let mut fd_den = 0.0f64;
            let use_fd = interior.contains(&m);
            for i in 0..nx {
                let k = i * nt + m;
                let u0 = stack.u0[k];
                let fp = p * u0.powf(p - 1.0);
                let mut lap_sum = 0.0;
                let mut analytic = 0.0;
                let mut scale = stack.e0[k].abs();
                let mut fd_tt = 0.0;
                let mut fd_scale = 0.0;
                let mut corr = 0.0;
                for l in 1..=j {
                    let c = stack.levels[l - 1].chi[i];
                    lap_sum += stack.space.laplacian4(|q| cws[l - 1][q * nt + m], i).0;
                    if c > 0.0 {
                        let w = stack.w(l, i, m);
                        corr += c * w;
                        let term = c * (fp * w + stack.residual(l - 1, i, m));
                        analytic += term;
                        scale += c * (fp * w).abs() + c * stack.residual(l - 1, i, m).abs();
                        if use_fd {
                            let y = [stack.w(l, i, m - 1), w, stack.w(l, i, m + 1)];
                            let d2 = second_difference([tn[m - 1], tn[m], tn[m + 1]], y);
                            fd_tt += c * d2;
                            fd_scale += c * d2.abs();
                        }
                    }
                }
                let nonlinear = f_increment(p, u0, corr);
                scale += nonlinear.abs() + lap_sum.abs();
                let rec = stack.residual(j, i, m);
                let direct = stack.e0[k] - analytic + lap_sum + nonlinear;
                alg_num = alg_num.max((direct - rec).abs());
                alg_den = alg_den.max(scale);
                if use_fd {
                    let by_fd = stack.e0[k] - fd_tt + lap_sum + nonlinear;
                    fd_num = fd_num.max((by_fd - rec).abs());
                    fd_den = fd_den.max(fd_scale);
                }
            }
            let alg = if alg_den > 0.0 { alg_num / alg_den } else { 0.0 };
            let fd = if fd_den > 0.0 { fd_num / fd_den } else { 0.0 };
            (alg, fd)
        })
        .collect();
    let algebraic_relative = per_slice.iter().map(|s| s.0).fold(0.0, f64::max);
    let time_fd_relative = per_slice.iter().map(|s| s.1).fold(0.0, f64::max);
    ResidualCrossCheck {
        level: j,
        algebraic_relative,
        time_fd_relative,
    }
}

/// Decay of the residual of level `j` against `U₀^{e_j}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub level: usize,
    pub exponent: f64,
    /// `sup_t R_j(t)` with `R_j(t) = max_{|x|≤2} |E_j| / U₀^{e_j}(x*)`, `x*` the maximizer.
    pub sup_ratio: f64,
    pub ratio_series: Vec<(f64, f64)>,
    /// Predicted slope `-(2/(p-1)) e_j` of `|E_j|` near `K`.
    pub predicted_slope: f64,
    /// Fitted log-log slope of `core_series`.
    pub fitted_slope: Option<f64>,
    /// `max |E_j|` over the core `A ≤ a_j t / t_j`, where every cutoff up to
    /// level `j` equals one and `U₀` stays within a fixed factor of its value on `K`.
    pub core_series: Vec<(f64, f64)>,
}

pub fn validate_decay(stack: &AnsatzStack, j: usize) -> DecayReport {
    let exponent = stack.params.residual_exponent(j);
    let top = stack.top(j);
    let tn = &stack.time.nodes;
    let (a_j, t_j) = if j == 0 {
        (1.0, 1.0)
    } else {
        let c = &stack.levels[j - 1].cutoff;
        (c.a, c.t)
    };
    let inner: Vec<usize> = (0..stack.nx()).filter(|&i| stack.space.nodes[i].abs() <= 2.0).collect();
    let rows: Vec<(f64, f64)> = (0..=top)
        .into_par_iter()
        .map(|m| {
            let mut peak = (0.0f64, inner[0]);
            let mut core = 0.0f64;
            let bound = a_j * tn[m] / t_j;
            for &i in &inner {
                let e = stack.residual(j, i, m).abs();
                if e > peak.0 {
                    peak = (e, i);
                }
                if stack.amp[i].a <= bound {
                    core = core.max(e);
                }
            }
            let u = stack.u0[stack.idx(peak.1, m)];
            (peak.0 / u.powf(exponent), core)
        })
        .collect();
    let ratio_series: Vec<(f64, f64)> = rows.iter().enumerate().map(|(m, r)| (tn[m], r.0)).collect();
    let core_series: Vec<(f64, f64)> = rows.iter().enumerate().map(|(m, r)| (tn[m], r.1)).collect();
    let sup_ratio = ratio_series.iter().map(|r| r.1).fold(0.0, f64::max);
    let positive: Vec<(f64, f64)> = core_series.iter().copied().filter(|r| r.1 > 0.0).collect();
    let fitted_slope = if positive.len() >= 5 {
        crate::diagnostics::fit_log_log(&positive).ok().map(|f| f.exponent)
    } else {
        None
    };
    DecayReport {
        level: j,
        exponent,
        sup_ratio,
        ratio_series,
        predicted_slope: -stack.params.rate() * exponent,
        fitted_slope,
        core_series,
    }
}

/// Checks `(3/4)U₀ ≤ U_J ≤ (5/4)U₀` on the grid for `t ≤ t_J` and returns
/// `(worst |U_J - U₀|/U₀, sup |∂ₜU_J - ∂ₜU₀|/U₀)`.
pub fn sandwich_report(stack: &AnsatzStack) -> (f64, f64) {
    let depth = stack.depth();
    let top = stack.top(depth);
    let p = stack.params.p;
    (0..stack.nx())
        .into_par_iter()
        .map(|i| {
            let mut a = 0.0f64;
            let mut b = 0.0f64;
            for m in 0..=top {
                let u0 = stack.u0[stack.idx(i, m)];
                let du = stack.correction_sum(depth, i, m);
                let ut0 = -(2.0 / (p + 1.0)).sqrt() * u0.powf(0.5 * (p + 1.0));
                let dut = stack.ut_level(depth, i, m) - ut0;
                a = a.max(du.abs() / u0);
                b = b.max(dut.abs() / u0);
            }
            (a, b)
        })
        .reduce(|| (0.0, 0.0), |x, y| (x.0.max(y.0), x.1.max(y.1)))
}

/// `sup Q^{1/2} |E_J| t^{1-λ}` over `|x| ≤ 2`, `t ≤ t_J`, with `Q = (1 - χ(|x|) + U₀)^{p+1}`.
pub fn weighted_residual_constant(stack: &AnsatzStack) -> f64 {
    let depth = stack.depth();
    let top = stack.top(depth);
    let p = stack.params.p;
    let lambda = stack.params.lambda;
    (0..stack.nx())
        .into_par_iter()
        .filter(|&i| stack.space.nodes[i].abs() <= 2.0)
        .map(|i| {
            let c = chi(stack.space.nodes[i]);
            (0..=top)
                .map(|m| {
                    let u0 = stack.u0[stack.idx(i, m)];
                    let q_half = (1.0 - c + u0).powf(0.5 * (p + 1.0));
                    q_half * stack.residual(depth, i, m).abs() * stack.time.nodes[m].powf(1.0 - lambda)
                })
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

/// `U_J`, `∂ₜU_J` and `E_J` at one time on every node.
#[derive(Debug, Clone, PartialEq)]
pub struct StackSlice {
    pub t: f64,
    pub u: Vec<f64>,
    pub ut: Vec<f64>,
    pub e: Vec<f64>,
}

impl AnsatzStack {
    fn check_range(&self, t: f64) -> Result<(usize, f64)> {
        let hi = self.t_final();
        let lo = self.time.first();
        if !(t >= lo * (1.0 - 1e-14) && t <= hi * (1.0 + 1e-14)) {
            return Err(Error::OutOfRange { t, lo, hi });
        }
        self.time.locate(t).ok_or(Error::OutOfRange { t, lo, hi })
    }

    /// Interpolates the stack at time `t ∈ [t_min, t_J]`.
    ///
    /// `U₀` is analytic; the kernel integrals use cubic Hermite interpolation
    /// in `ln t` with their exact nodal derivatives; `E_J` uses monotone cubic
    /// interpolation. All three are exact at grid times.
    pub fn eval(&self, t: f64) -> Result<StackSlice> {
        let n = self.nx();
        let mut u = vec![0.0; n];
        let mut ut = vec![0.0; n];
        let mut e = vec![0.0; n];
        self.eval_into(t, &mut u, Some(&mut ut), Some(&mut e))?;
        Ok(StackSlice { t, u, ut, e })
    }

    pub fn eval_into(&self, t: f64, u: &mut [f64], ut: Option<&mut [f64]>, e: Option<&mut [f64]>) -> Result<()> {
        let (m, frac) = self.check_range(t)?;
        let uut: Vec<(f64, f64)> = (0..self.nx()).into_par_iter().map(|i| self.node_value(t, m, frac, i)).collect();
        for (slot, v) in u.iter_mut().zip(&uut) {
            *slot = v.0;
        }
        if let Some(ut) = ut {
            for (slot, v) in ut.iter_mut().zip(&uut) {
                *slot = v.1;
            }
        }
        if let Some(e) = e {
            e.par_iter_mut().enumerate().for_each(|(i, slot)| *slot = self.node_residual(m, frac, i));
        }
        Ok(())
    }

    /// `(U_J, ∂ₜU_J)` at one node.
    pub fn eval_node(&self, t: f64, i: usize) -> Result<(f64, f64)> {
        let (m, frac) = self.check_range(t)?;
        Ok(self.node_value(t, m, frac, i))
    }

    fn node_value(&self, t: f64, m: usize, frac: f64, i: usize) -> (f64, f64) {
        let p = self.params.p;
        let half = 0.5 * (p + 1.0);
        let h = self.time.log_step();
        let nt = self.nt();
        let tn = &self.time.nodes;
        let w = t + self.amp[i].a;
        let u0 = self.params.kappa * w.powf(-self.params.rate());
        let u0t = -(2.0 / (p + 1.0)).sqrt() * u0.powf(half);
        let mut val = u0;
        let mut vel = u0t;
        for (l, lv) in self.levels.iter().enumerate() {
            let c = lv.chi[i];
            if c == 0.0 {
                continue;
            }
            let k = i * nt + m;
            let (im, ip) = if frac == 0.0 {
                (lv.i_minus[k], lv.i_plus[k])
            } else {
                let slope = |q: usize| {
                    let src = self.residual(l, i, q);
                    let uq = self.u0[i * nt + q];
                    (tn[q] * uq.powf(-p) * src * h, -tn[q] * uq.powf(half) * src * h)
                };
                let (dm0, dp0) = slope(m);
                let (dm1, dp1) = slope(m + 1);
                (
                    hermite(lv.i_minus[k], lv.i_minus[k + 1], dm0, dm1, frac),
                    hermite(lv.i_plus[k], lv.i_plus[k + 1], dp0, dp1, frac),
                )
            };
            let corr = -self.coefficient * (u0.powf(half) * im + u0.powf(-p) * ip);
            let corr_t = -self.coefficient * (half * u0.powf(half - 1.0) * u0t * im - p * u0.powf(-p - 1.0) * u0t * ip);
            val += c * corr;
            vel += c * corr_t;
        }
        (val, vel)
    }

    fn node_residual(&self, m: usize, frac: f64, i: usize) -> f64 {
        let depth = self.depth();
        let len = self.top(depth) + 1;
        let y = |q: usize| self.residual(depth, i, q);
        pchip_eval(&y, len, m.min(len - 1), if m + 1 < len { frac } else { 0.0 })
    }

    /// Time derivative of the interpolated `I^±` sum; used only in tests of the interpolant.
    pub fn interpolated_integral_rate(&self, l: usize, i: usize, t: f64) -> Result<(f64, f64)> {
        let (m, frac) = self.check_range(t)?;
        let p = self.params.p;
        let half = 0.5 * (p + 1.0);
        let h = self.time.log_step();
        let nt = self.nt();
        let tn = &self.time.nodes;
        let lv = &self.levels[l - 1];
        let k = i * nt + m;
        let slope = |q: usize| {
            let src = self.residual(l - 1, i, q);
            let uq = self.u0[i * nt + q];
            (tn[q] * uq.powf(-p) * src * h, -tn[q] * uq.powf(half) * src * h)
        };
        let (dm0, dp0) = slope(m);
        let (dm1, dp1) = slope(m + 1);
        let dm = hermite_derivative(lv.i_minus[k], lv.i_minus[k + 1], dm0, dm1, frac) / (h * t);
        let dp = hermite_derivative(lv.i_plus[k], lv.i_plus[k + 1], dp0, dp1, frac) / (h * t);
        Ok((dm, dp))
    }
}

/// `B_n = sup_{t ∈ [T_n, t_J]} ‖U_J(t)‖_∞`, using the grid times in the window plus `T_n` itself.
pub fn compute_truncation_bound(stack: &AnsatzStack, n: u32) -> Result<f64> {
    let tn = 1.0 / n as f64;
    if tn < 2.0 * stack.time.first() * (1.0 - 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "T_n = {tn} is below twice the stack's first time {}",
            stack.time.first()
        )));
    }
    let t_final = stack.t_final();
    if tn >= t_final {
        return Err(Error::InvalidParameter(format!("T_n = {tn} is not below t_J = {t_final}")));
    }
    let slice = stack.eval(tn)?;
    let mut b = slice.u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let depth = stack.depth();
    for (m, &t) in stack.time.nodes.iter().enumerate().take(stack.top(depth) + 1) {
        if t < tn {
            continue;
        }
        for i in 0..stack.nx() {
            b = b.max(stack.u_level(depth, i, m).abs());
        }
    }
    if b <= 1.0 {
        return Err(Error::TruncationLevel(b));
    }
    Ok(b)
}
