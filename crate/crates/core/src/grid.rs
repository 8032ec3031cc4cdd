//! Spatial and temporal grids plus the finite-difference stencils used on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::DimMode;

/// Uniform spatial grid: `x_i = -L + iΔx` on the line, `r_i = iΔx` radially.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceGrid {
    pub mode: DimMode,
    pub n_dim: usize,
    pub half_width: f64,
    pub dx: f64,
    pub nodes: Vec<f64>,
}

impl SpaceGrid {
    pub fn new(mode: DimMode, n_dim: usize, half_width: f64, dx: f64) -> Result<Self> {
        if !(half_width > 0.0) || !(dx > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "grid needs positive half-width and spacing, got L = {half_width}, dx = {dx}"
            )));
        }
        let span = match mode {
            DimMode::Line => 2.0 * half_width,
            DimMode::Radial => half_width,
        };
        let cells = (span / dx).round();
        if ((cells * dx - span) / span).abs() > 1e-12 || cells < 8.0 {
            return Err(Error::InvalidParameter(format!(
                "spacing {dx} does not divide the domain length {span} into at least 8 cells"
            )));
        }
        let cells = cells as usize;
        let nodes = (0..=cells)
            .map(|i| match mode {
                DimMode::Line => -half_width + i as f64 * dx,
                DimMode::Radial => i as f64 * dx,
            })
            .collect();
        Ok(Self {
            mode,
            n_dim,
            half_width,
            dx,
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index of the node nearest to `x`.
    pub fn nearest(&self, x: f64) -> usize {
        let origin = self.nodes[0];
        let i = ((x - origin) / self.dx).round();
        i.clamp(0.0, (self.len() - 1) as f64) as usize
    }

    /// Fourth-order Laplacian of `f` at node `i`. `f(j)` samples node `j`.
    /// Returns the value and whether a one-sided edge stencil was needed.
    #[inline]
    pub fn laplacian4<F: Fn(usize) -> f64>(&self, f: F, i: usize) -> (f64, bool) {
        let n = self.len();
        let h2 = self.dx * self.dx;
        match self.mode {
            DimMode::Line => {
                if i >= 2 && i + 2 < n {
                    let v = (-f(i - 2) + 16.0 * f(i - 1) - 30.0 * f(i) + 16.0 * f(i + 1) - f(i + 2)) / (12.0 * h2);
                    (v, false)
                } else {
                    (edge_second(&f, i, n) / h2, true)
                }
            }
            DimMode::Radial => {
                let nd = self.n_dim as f64;
                // even extension across the origin
                let g = |j: isize| f(j.unsigned_abs());
                let ii = i as isize;
                if i == 0 {
                    let d2 = (-2.0 * g(2) + 32.0 * g(1) - 30.0 * g(0)) / (12.0 * h2);
                    return (nd * d2, false);
                }
                if i + 2 < n {
                    let d2 = (-g(ii - 2) + 16.0 * g(ii - 1) - 30.0 * g(ii) + 16.0 * g(ii + 1) - g(ii + 2)) / (12.0 * h2);
                    let d1 = (g(ii - 2) - 8.0 * g(ii - 1) + 8.0 * g(ii + 1) - g(ii + 2)) / (12.0 * self.dx);
                    (d2 + (nd - 1.0) / self.nodes[i] * d1, false)
                } else {
                    let d2 = edge_second(&f, i, n) / h2;
                    let d1 = edge_first(&f, i, n) / self.dx;
                    (d2 + (nd - 1.0) / self.nodes[i] * d1, true)
                }
            }
        }
    }

    /// Second-order Laplacian at interior node `i` (callers handle the outer edge).
    #[inline]
    pub fn laplacian2(&self, u: &[f64], i: usize) -> f64 {
        let h2 = self.dx * self.dx;
        match self.mode {
            DimMode::Line => (u[i - 1] - 2.0 * u[i] + u[i + 1]) / h2,
            DimMode::Radial => {
                let nd = self.n_dim as f64;
                if i == 0 {
                    2.0 * nd * (u[1] - u[0]) / h2
                } else {
                    (u[i - 1] - 2.0 * u[i] + u[i + 1]) / h2
                        + (nd - 1.0) / self.nodes[i] * (u[i + 1] - u[i - 1]) / (2.0 * self.dx)
                }
            }
        }
    }

    /// Second-order gradient at node `i` (one-sided at the ends, zero at the radial origin).
    pub fn gradient2(&self, u: &[f64], i: usize) -> f64 {
        let n = self.len();
        if self.mode == DimMode::Radial && i == 0 {
            return 0.0;
        }
        if i == 0 {
            (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * self.dx)
        } else if i == n - 1 {
            (3.0 * u[n - 1] - 4.0 * u[n - 2] + u[n - 3]) / (2.0 * self.dx)
        } else {
            (u[i + 1] - u[i - 1]) / (2.0 * self.dx)
        }
    }

    /// Integration weights (trapezoid), including `|S^{N-1}| r^{N-1}` radially.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        let n = self.len();
        let measure = match self.mode {
            DimMode::Line => 1.0,
            DimMode::Radial => crate::profile::sphere_area(self.n_dim),
        };
        (0..n)
            .map(|i| {
                let end = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                let radial = match self.mode {
                    DimMode::Line => 1.0,
                    DimMode::Radial => self.nodes[i].powi(self.n_dim as i32 - 1),
                };
                end * self.dx * measure * radial
            })
            .collect()
    }
}

fn edge_second<F: Fn(usize) -> f64>(f: &F, i: usize, n: usize) -> f64 {
    const C0: [f64; 6] = [45.0, -154.0, 214.0, -156.0, 61.0, -10.0];
    const C1: [f64; 6] = [10.0, -15.0, -4.0, 14.0, -6.0, 1.0];
    let (coef, from_left) = match i {
        0 => (C0, true),
        1 => (C1, true),
        _ if i == n - 1 => (C0, false),
        _ => (C1, false),
    };
    let mut acc = 0.0;
    for (q, c) in coef.iter().enumerate() {
        let j = if from_left { q } else { n - 1 - q };
        acc += c * f(j);
    }
    acc / 12.0
}

fn edge_first<F: Fn(usize) -> f64>(f: &F, i: usize, n: usize) -> f64 {
    // fourth-order one-sided first derivative at the last two nodes
    if i == n - 1 {
        (25.0 * f(n - 1) - 48.0 * f(n - 2) + 36.0 * f(n - 3) - 16.0 * f(n - 4) + 3.0 * f(n - 5)) / 12.0
    } else {
        (3.0 * f(n - 1) + 10.0 * f(n - 2) - 18.0 * f(n - 3) + 6.0 * f(n - 4) - f(n - 5)) / 12.0
    }
}

/// Geometric time grid `t_i = 2^{-(M-i)/s}`, `i = 0..=M`, anchored at `t = 1`.
/// Every power of two down to `t_0` is an exact node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub per_octave: usize,
    pub nodes: Vec<f64>,
}

impl TimeGrid {
    /// Smallest grid reaching down to at most `t_min`.
    pub fn new(t_min: f64, per_octave: usize) -> Result<Self> {
        if !(t_min > 0.0 && t_min < 1.0) {
            return Err(Error::InvalidParameter(format!("t_min = {t_min} must lie in (0, 1)")));
        }
        // ratio 2^{1/s} must stay within (1, 1.1]
        if per_octave < 8 {
            return Err(Error::InvalidParameter(format!(
                "{per_octave} nodes per octave gives a ratio above 1.1"
            )));
        }
        let octaves = (-t_min.log2() - 1e-12).ceil() as usize;
        let m = octaves * per_octave;
        let nodes = (0..=m)
            .map(|i| {
                let back = m - i;
                if back % per_octave == 0 {
                    2f64.powi(-((back / per_octave) as i32))
                } else {
                    2f64.powf(-(back as f64) / per_octave as f64)
                }
            })
            .collect();
        Ok(Self { per_octave, nodes })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn ratio(&self) -> f64 {
        2f64.powf(1.0 / self.per_octave as f64)
    }

    /// Step in `ln t` between consecutive nodes.
    pub fn log_step(&self) -> f64 {
        std::f64::consts::LN_2 / self.per_octave as f64
    }

    pub fn first(&self) -> f64 {
        self.nodes[0]
    }

    /// Index of the node equal to `t` (within rounding), if any.
    pub fn exact_index(&self, t: f64) -> Option<usize> {
        let (m, frac) = self.locate(t)?;
        if frac == 0.0 {
            Some(m)
        } else {
            None
        }
    }

    /// Index of the node `2^{-e}`, which is always on the grid when in range.
    pub fn power_of_two_index(&self, e: usize) -> Option<usize> {
        let back = e * self.per_octave;
        (back < self.len()).then(|| self.len() - 1 - back)
    }

    /// Interval `m` and fraction in `ln t` with `t_m ≤ t ≤ t_{m+1}`.
    /// Node times return fraction exactly 0.
    pub fn locate(&self, t: f64) -> Option<(usize, f64)> {
        let n = self.len();
        if !(t >= self.nodes[0] * (1.0 - 1e-14) && t <= self.nodes[n - 1] * (1.0 + 1e-14)) {
            return None;
        }
        let pos = (t / self.nodes[0]).ln() / self.log_step();
        let mut m = (pos.floor().max(0.0) as usize).min(n - 1);
        for cand in [m.saturating_sub(1), m, (m + 1).min(n - 1)] {
            if (t - self.nodes[cand]).abs() <= 1e-14 * t {
                return Some((cand, 0.0));
            }
        }
        if m == n - 1 {
            m = n - 2;
        }
        while m > 0 && self.nodes[m] > t {
            m -= 1;
        }
        while m + 2 < n && self.nodes[m + 1] < t {
            m += 1;
        }
        let frac = (t / self.nodes[m]).ln() / (self.nodes[m + 1] / self.nodes[m]).ln();
        Some((m, frac.clamp(0.0, 1.0)))
    }
}

/// Three-point second derivative on a non-uniform stencil `(t_{-}, t_0, t_{+})`.
#[inline]
pub fn second_difference(t: [f64; 3], y: [f64; 3]) -> f64 {
    let h0 = t[1] - t[0];
    let h1 = t[2] - t[1];
    2.0 * (h1 * y[0] - (h0 + h1) * y[1] + h0 * y[2]) / (h0 * h1 * (h0 + h1))
}
