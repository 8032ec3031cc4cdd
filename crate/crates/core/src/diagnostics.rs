//! Norms, weighted functionals, power-law fits and the blow-up verdicts.

use serde::{Deserialize, Serialize};

use crate::ansatz::AnsatzStack;
use crate::error::{Error, Result};
use crate::grid::SpaceGrid;
use crate::math::{chi, DimMode, TruncatedNonlinearity};
use crate::profile::{u0_from_amp, CompactSetSpec};
use crate::quadrature::gauss_legendre8;
use crate::solver::WaveState;

/// Time-stamped scalar diagnostic of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub name: String,
    /// Ladder index of the run, if any.
    pub n: Option<u32>,
    pub region: String,
    pub samples: Vec<(f64, f64)>,
}

impl MetricSeries {
    pub fn new(name: impl Into<String>, n: Option<u32>, region: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            n,
            region: region.into(),
            samples: Vec::new(),
        }
    }

    /// Appends a sample; times must increase strictly and values be finite.
    pub fn push(&mut self, t: f64, value: f64) -> Result<()> {
        if !t.is_finite() || !value.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "series {}: non-finite sample ({t}, {value})",
                self.name
            )));
        }
        if let Some(&(last, _)) = self.samples.last() {
            if t <= last {
                return Err(Error::InvalidParameter(format!(
                    "series {}: time {t} does not increase past {last}",
                    self.name
                )));
            }
        }
        self.samples.push((t, value));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples with `lo ≤ t ≤ hi`.
    pub fn window(&self, lo: f64, hi: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.samples.iter().copied().filter(move |&(t, _)| t >= lo && t <= hi)
    }
}

/// `(∫ ε² + |∇ε|² + (∂ₜε)²)^{1/2}` by the trapezoid rule.
pub fn sobolev_norm(space: &SpaceGrid, state: &WaveState) -> f64 {
    let w = space.quadrature_weights();
    let mut acc = 0.0;
    for i in 0..space.len() {
        let g = space.gradient2(&state.u, i);
        acc += w[i] * (state.u[i] * state.u[i] + g * g + state.v[i] * state.v[i]);
    }
    acc.sqrt()
}

/// [`sobolev_norm`] restricted to the nodes with `|x| ≤ radius`, summed in node order.
pub fn sobolev_norm_within(space: &SpaceGrid, state: &WaveState, radius: f64) -> f64 {
    let w = space.quadrature_weights();
    let mut acc = 0.0;
    for i in 0..space.len() {
        if space.nodes[i].abs() > radius {
            continue;
        }
        let g = space.gradient2(&state.u, i);
        acc += w[i] * (state.u[i] * state.u[i] + g * g + state.v[i] * state.v[i]);
    }
    acc.sqrt()
}

/// `(∫_{|x - x₀| < r} field²)^{1/2}`.
///
/// Cells cut by the ball boundary contribute their partial segment with the
/// field interpolated linearly. In radial mode the region is the shell
/// `|ρ - x₀| < r`, `ρ ≥ 0`, under the radial measure.
pub fn local_l2(space: &SpaceGrid, field: &[f64], x0: f64, r: f64) -> Result<f64> {
    let outside = || Error::BallOutsideDomain {
        center: x0,
        radius: r,
        half_width: space.half_width,
    };
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("ball radius must be positive, got {r}")));
    }
    let (lo, hi) = match space.mode {
        DimMode::Line => (x0 - r, x0 + r),
        DimMode::Radial => ((x0 - r).max(0.0), x0 + r),
    };
    if lo < space.nodes[0] || hi > *space.nodes.last().unwrap() {
        return Err(outside());
    }
    let (measure, power) = match space.mode {
        DimMode::Line => (1.0, 0),
        DimMode::Radial => (crate::profile::sphere_area(space.n_dim), space.n_dim as i32 - 1),
    };
    let origin = space.nodes[0];
    let first = (((lo - origin) / space.dx).floor() as usize).min(space.len() - 2);
    let last = (((hi - origin) / space.dx).ceil() as usize).clamp(first + 1, space.len() - 1);
    let mut acc = 0.0;
    for c in first..last {
        let (xa, xb) = (space.nodes[c], space.nodes[c + 1]);
        let a = xa.max(lo);
        let b = xb.min(hi);
        if b <= a {
            continue;
        }
        let (fa, fb) = (field[c], field[c + 1]);
        let lerp = |x: f64| fa + (fb - fa) * (x - xa) / space.dx;
        // the integrand is a polynomial of degree 2 + power on the cell
        acc += gauss_legendre8(
            |x| {
                let v = lerp(x);
                v * v * x.abs().powi(power)
            },
            a,
            b,
        );
    }
    Ok((measure * acc).sqrt())
}

/// Weight `Q = (1 - χ(|x|) + U₀)^{p+1}` and its time derivative at one time.
#[derive(Debug, Clone)]
pub struct WeightedFrame {
    pub t: f64,
    pub q: Vec<f64>,
    pub dt_q: Vec<f64>,
    pub u0: Vec<f64>,
    /// `U_J` at `t`.
    pub ansatz: Vec<f64>,
    pub sigma: f64,
    /// Smallness ceiling `ω` on `𝒩`.
    pub ceiling: f64,
}

impl WeightedFrame {
    pub fn new(stack: &AnsatzStack, t: f64, ceiling: f64) -> Result<Self> {
        let slice = stack.eval(t)?;
        let p = stack.params.p;
        let mut q = Vec::with_capacity(stack.nx());
        let mut dt_q = Vec::with_capacity(stack.nx());
        let mut u0 = Vec::with_capacity(stack.nx());
        for (i, &x) in stack.space.nodes.iter().enumerate() {
            let s = u0_from_amp(&stack.amp[i], t, &stack.params);
            let base = 1.0 - chi(x.abs()) + s.u;
            q.push(base.powf(p + 1.0));
            dt_q.push((p + 1.0) * base.powf(p) * s.ut);
            u0.push(s.u);
        }
        Ok(Self {
            t,
            q,
            dt_q,
            u0,
            ansatz: slice.u,
            sigma: stack.params.sigma,
            ceiling,
        })
    }

    /// `z = Q^{-1/2} ε`.
    pub fn z(&self, eps: &[f64]) -> Vec<f64> {
        eps.iter().zip(&self.q).map(|(e, q)| e / q.sqrt()).collect()
    }

    /// `∂ₜz = Q^{-1/2} (∂ₜε - ½ ε ∂ₜQ / Q)`.
    pub fn dt_z(&self, eps: &[f64], eps_t: &[f64]) -> Vec<f64> {
        (0..eps.len())
            .map(|i| (eps_t[i] - 0.5 * eps[i] * self.dt_q[i] / self.q[i]) / self.q[i].sqrt())
            .collect()
    }
}

/// `𝒩` and `ℋ` of one state, plus the split of `ℋ` into its quadratic part
/// and the super-quadratic remainder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedFunctionals {
    pub norm: f64,
    pub energy: f64,
    /// `𝒩² - ∫ Q ε² (f_n'(U_J) - f_n'(U₀))`, the part of `ℋ` quadratic in `ε`.
    pub quadratic: f64,
    /// `ℋ - quadratic`.
    pub remainder: f64,
}

/// Evaluates `𝒩` and `ℋ` for `(ε, ∂ₜε)` in a prepared frame.
pub fn weighted_functionals_in(
    frame: &WeightedFrame,
    space: &SpaceGrid,
    nl: &TruncatedNonlinearity,
    eps: &[f64],
    eps_t: &[f64],
) -> WeightedFunctionals {
    let z = frame.z(eps);
    let zt = frame.dt_z(eps, eps_t);
    let w = space.quadrature_weights();
    let time_weight = frame.t.powf(-2.0 * frame.sigma);
    let mut norm_sq = 0.0;
    let mut linear_shift = 0.0;
    let mut bracket = 0.0;
    for i in 0..space.len() {
        let q = frame.q[i];
        let g = space.gradient2(&z, i);
        norm_sq += w[i] * ((q * zt[i]).powi(2) + q * q * (g * g + time_weight * z[i] * z[i]));
        let e = eps[i];
        if e == 0.0 {
            continue;
        }
        let u = frame.ansatz[i];
        let fp0 = nl.f_prime(frame.u0[i]);
        // 2F(U+ε) - 2F(U) - 2f(U)ε = 2ε² ∫₀¹ (1-s) f'(U + sε) ds
        let taylor = 2.0 * gauss_legendre8(|s| (1.0 - s) * nl.f_prime(u + s * e), 0.0, 1.0);
        bracket += w[i] * q * e * e * (taylor - fp0);
        linear_shift += w[i] * q * e * e * (nl.f_prime(u) - fp0);
    }
    let energy = norm_sq - bracket;
    let quadratic = norm_sq - linear_shift;
    WeightedFunctionals {
        norm: norm_sq.sqrt(),
        energy,
        quadratic,
        remainder: energy - quadratic,
    }
}

/// `𝒩` and `ℋ` of a perturbation state against the stack at the state's time.
pub fn weighted_functionals(
    stack: &AnsatzStack,
    state: &WaveState,
    nl: &TruncatedNonlinearity,
    ceiling: f64,
) -> Result<WeightedFunctionals> {
    let frame = WeightedFrame::new(stack, state.t, ceiling)?;
    Ok(weighted_functionals_in(&frame, &stack.space, nl, &state.u, &state.v))
}

/// One case of the coercivity probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoercivityCase {
    pub target: f64,
    pub norm: f64,
    pub energy: f64,
    /// `𝒩² ≤ 2ℋ`.
    pub holds: bool,
}

/// Scales a fixed bump `ε` so that `𝒩` hits each requested fraction of the
/// ceiling and checks `𝒩² ≤ 2ℋ`.
///
/// The bump is `exp(-((x - c)/w)²)` with zero velocity, centred at `center`.
pub fn coercivity_probe(
    frame: &WeightedFrame,
    space: &SpaceGrid,
    nl: &TruncatedNonlinearity,
    center: f64,
    width: f64,
    fractions: &[f64],
) -> Vec<CoercivityCase> {
    let shape: Vec<f64> = space
        .nodes
        .iter()
        .map(|&x| (-((x - center) / width).powi(2)).exp())
        .collect();
    let zero = vec![0.0; space.len()];
    let unit = weighted_functionals_in(frame, space, nl, &shape, &zero).norm;
    fractions
        .iter()
        .map(|&frac| {
            let target = frac * frame.ceiling;
            let s = target / unit;
            let eps: Vec<f64> = shape.iter().map(|v| v * s).collect();
            let wf = weighted_functionals_in(frame, space, nl, &eps, &zero);
            CoercivityCase {
                target,
                norm: wf.norm,
                energy: wf.energy,
                holds: wf.norm * wf.norm <= 2.0 * wf.energy,
            }
        })
        .collect()
}

/// Observed order of the super-quadratic remainder of `ℋ` along `ε, ε/2, ε/4, …`:
/// `log₂(R(s) / R(s/2))` for each consecutive pair.
pub fn remainder_orders(
    frame: &WeightedFrame,
    space: &SpaceGrid,
    nl: &TruncatedNonlinearity,
    eps: &[f64],
    eps_t: &[f64],
    halvings: usize,
) -> Vec<f64> {
    let mut rem = Vec::with_capacity(halvings + 1);
    let mut scale = 1.0;
    for _ in 0..=halvings {
        let e: Vec<f64> = eps.iter().map(|v| v * scale).collect();
        let et: Vec<f64> = eps_t.iter().map(|v| v * scale).collect();
        rem.push(weighted_functionals_in(frame, space, nl, &e, &et).remainder.abs());
        scale *= 0.5;
    }
    rem.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

/// Least-squares line through `(ln t, ln y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub exponent: f64,
    pub prefactor: f64,
    /// Root-mean-square residual in `ln y`.
    pub residual: f64,
    pub points: usize,
}

/// Fits the positive, finite samples of `points` and ignores the rest.
pub fn fit_log_log(points: &[(f64, f64)]) -> Result<PowerFit> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    least_squares(&pts)
}

fn least_squares(pts: &[(f64, f64)]) -> Result<PowerFit> {
    if pts.len() < 2 {
        return Err(Error::Fit(format!("need at least two positive samples, got {}", pts.len())));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::Fit("abscissae are all equal".into()));
    }
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let rss: f64 = pts.iter().map(|p| (p.1 - intercept - exponent * p.0).powi(2)).sum();
    Ok(PowerFit {
        exponent,
        prefactor: intercept.exp(),
        residual: (rss / n).sqrt(),
        points: pts.len(),
    })
}

/// Power-law fit of the samples of `series` with `t` in `[lo, hi]`.
pub fn fit_power_law(series: &MetricSeries, window: (f64, f64)) -> Result<PowerFit> {
    let mut pts = Vec::new();
    for (t, v) in series.window(window.0, window.1) {
        if !(v > 0.0) || !(t > 0.0) {
            return Err(Error::Fit(format!(
                "series {}: non-positive sample ({t}, {v}) in the fit window",
                series.name
            )));
        }
        pts.push((t.ln(), v.ln()));
    }
    if pts.len() < 5 {
        return Err(Error::Fit(format!(
            "series {}: {} samples in [{}, {}], need at least 5",
            series.name,
            pts.len(),
            window.0,
            window.1
        )));
    }
    least_squares(&pts)
}

/// Local norms of one run at one probe point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSeries {
    pub probe: f64,
    /// `‖u(t)‖_{L²(|x - x₀| < r)}`.
    pub u: MetricSeries,
    /// `‖∂ₜu(t)‖_{L²(|x - x₀| < r)}`.
    pub ut: MetricSeries,
}

/// What the classifier needs from one ladder run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRun {
    pub n: u32,
    pub t_start: f64,
    pub delta0: f64,
    pub probes: Vec<ProbeSeries>,
}

impl LadderRun {
    /// Fit window `[T_n, min(factor·T_n, T_n + δ₀)]`.
    pub fn fit_window(&self, factor: f64) -> (f64, f64) {
        (self.t_start, (factor * self.t_start).min(self.t_start + self.delta0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierSettings {
    pub probes: Vec<f64>,
    pub radius: f64,
    /// A probe diverges when every fitted `u` exponent is at most `-divergence_threshold`.
    pub divergence_threshold: f64,
    /// A probe is bounded when every `u` series has `max/min` below this.
    pub bounded_ratio: f64,
    /// Upper end of the fit window as a multiple of `T_n`.
    pub window_factor: f64,
}

impl Default for ClassifierSettings {
    fn default() -> Self {
        Self {
            probes: vec![0.0, 0.5, -0.5, 2.5, -2.5, 3.0, -3.0],
            radius: 0.25,
            divergence_threshold: 0.2,
            bounded_ratio: 2.0,
            window_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Divergent,
    Bounded,
    Ambiguous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeVerdict {
    pub probe: f64,
    pub in_blowup_set: bool,
    pub verdict: Verdict,
    /// Fitted `u` exponent per `n`; `None` when the series is not fittable.
    pub u_exponents: Vec<(u32, Option<f64>)>,
    pub ut_exponents: Vec<(u32, Option<f64>)>,
    /// Largest `max/min` of the `u` series over the ladder.
    pub u_ratio: f64,
    pub ut_ratio: f64,
    /// Divergent exactly on `K` and bounded exactly off it.
    pub matches_blowup_set: bool,
    pub detail: String,
}

fn spread(series: &MetricSeries) -> f64 {
    let max = series.samples.iter().map(|s| s.1.abs()).fold(0.0, f64::max);
    let min = series.samples.iter().map(|s| s.1.abs()).fold(f64::INFINITY, f64::min);
    if max == 0.0 {
        1.0
    } else {
        max / min
    }
}

/// Turns local-norm series over the `n` ladder into per-probe verdicts.
pub fn classify_blowup_set(
    runs: &[LadderRun],
    settings: &ClassifierSettings,
    set: &CompactSetSpec,
) -> Result<Vec<ProbeVerdict>> {
    if runs.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "classification needs runs for at least 3 values of n, got {}",
            runs.len()
        )));
    }
    let mut out = Vec::with_capacity(settings.probes.len());
    for &probe in &settings.probes {
        let dist = set.distance(probe);
        if dist > 0.0 && dist <= settings.radius {
            return Err(Error::InvalidParameter(format!(
                "probe {probe} lies within distance {} of K but outside it",
                settings.radius
            )));
        }
        let mut u_exponents = Vec::with_capacity(runs.len());
        let mut ut_exponents = Vec::with_capacity(runs.len());
        let mut u_ratio = 1.0f64;
        let mut ut_ratio = 1.0f64;
        for run in runs {
            let ps = run
                .probes
                .iter()
                .find(|ps| ps.probe == probe)
                .ok_or_else(|| Error::InvalidParameter(format!("run n = {} has no series for probe {probe}", run.n)))?;
            let window = run.fit_window(settings.window_factor);
            u_exponents.push((run.n, fit_power_law(&ps.u, window).ok().map(|f| f.exponent)));
            ut_exponents.push((run.n, fit_power_law(&ps.ut, window).ok().map(|f| f.exponent)));
            u_ratio = u_ratio.max(spread(&ps.u));
            ut_ratio = ut_ratio.max(spread(&ps.ut));
        }
        let divergent = u_exponents
            .iter()
            .all(|(_, e)| e.is_some_and(|e| e <= -settings.divergence_threshold));
        let bounded = u_ratio < settings.bounded_ratio;
        let (verdict, detail) = if divergent {
            (Verdict::Divergent, String::new())
        } else if bounded {
            (Verdict::Bounded, String::new())
        } else {
            let err = Error::Ambiguous {
                probe,
                detail: format!("u exponents {u_exponents:?}, max/min {u_ratio:.3}"),
            };
            log::warn!("{err}");
            (Verdict::Ambiguous, err.to_string())
        };
        let in_blowup_set = dist == 0.0;
        out.push(ProbeVerdict {
            probe,
            in_blowup_set,
            verdict,
            u_exponents,
            ut_exponents,
            u_ratio,
            ut_ratio,
            matches_blowup_set: (verdict == Verdict::Divergent) == in_blowup_set && verdict != Verdict::Ambiguous,
            detail,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthRow {
    pub n: u32,
    /// `sup_t ‖(ε, ∂ₜε)‖_{H¹×L²} / (t - T_n)^{λ/2}`.
    pub constant: f64,
    /// Time of the supremum.
    pub at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub lambda: f64,
    pub rows: Vec<GrowthRow>,
    pub max_constant: f64,
    /// `max C_n / min C_n`; one when every constant is zero.
    pub spread: f64,
}

/// Growth constants `C_n` from the `H¹×L²` norm series of each run.
pub fn growth_bound_report(runs: &[(u32, f64, &MetricSeries)], lambda: f64) -> GrowthReport {
    let rows: Vec<GrowthRow> = runs
        .iter()
        .map(|&(n, t_start, series)| {
            let mut best = GrowthRow { n, constant: 0.0, at: t_start };
            for &(t, v) in &series.samples {
                if t > t_start {
                    let c = v / (t - t_start).powf(0.5 * lambda);
                    if c > best.constant {
                        best = GrowthRow { n, constant: c, at: t };
                    }
                }
            }
            best
        })
        .collect();
    let max_constant = rows.iter().map(|r| r.constant).fold(0.0, f64::max);
    let min_constant = rows.iter().map(|r| r.constant).fold(f64::INFINITY, f64::min);
    let spread = if max_constant == 0.0 {
        1.0
    } else {
        max_constant / min_constant
    };
    GrowthReport {
        lambda,
        rows,
        max_constant,
        spread,
    }
}

/// Ratio of the discrete `dℋ/dt` to `t^{-1+λ}𝒩 + t^{-1/2}𝒩² + 𝒩^{p+1}` along
/// a run, from samples `(t, 𝒩, ℋ)`. The derivative is a central difference
/// (one-sided at the ends). Bounded ratios are consistent with the
/// differential inequality; this is a monitor, not a check.
pub fn energy_growth_monitor(samples: &[(f64, f64, f64)], lambda: f64, p: f64, n: Option<u32>) -> Result<MetricSeries> {
    let mut series = MetricSeries::new("energy_growth_ratio", n, "all");
    if samples.len() < 2 {
        return Ok(series);
    }
    let last = samples.len() - 1;
    for k in 0..=last {
        let (a, b) = match k {
            0 => (0, 1),
            _ if k == last => (last - 1, last),
            _ => (k - 1, k + 1),
        };
        let dh = (samples[b].2 - samples[a].2) / (samples[b].0 - samples[a].0);
        let (t, norm, _) = samples[k];
        let scale = t.powf(-1.0 + lambda) * norm + t.powf(-0.5) * norm * norm + norm.powf(p + 1.0);
        if scale > 0.0 {
            series.push(t, dh.max(0.0) / scale)?;
        }
    }
    Ok(series)
}
