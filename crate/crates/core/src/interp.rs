//! Cubic interpolation in `ln t` on the uniform-in-log time grid.

/// Cubic Hermite interpolation on `[0, 1]` with slopes scaled to the unit interval.
#[inline]
pub fn hermite(y0: f64, y1: f64, d0: f64, d1: f64, s: f64) -> f64 {
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    h00 * y0 + h10 * d0 + h01 * y1 + h11 * d1
}

/// Derivative with respect to `s` of [`hermite`].
#[inline]
pub fn hermite_derivative(y0: f64, y1: f64, d0: f64, d1: f64, s: f64) -> f64 {
    let s2 = s * s;
    (6.0 * s2 - 6.0 * s) * (y0 - y1) + (3.0 * s2 - 4.0 * s + 1.0) * d0 + (3.0 * s2 - 2.0 * s) * d1
}

/// Fritsch–Carlson slope at node `m` of equally spaced samples, in units of
/// one grid step. `y(j)` returns sample `j`, valid for `j < len`.
pub fn pchip_slope<F: Fn(usize) -> f64>(y: &F, len: usize, m: usize) -> f64 {
    if len < 2 {
        return 0.0;
    }
    if len == 2 {
        return y(1) - y(0);
    }
    if m == 0 || m == len - 1 {
        // one-sided three-point slope, limited to preserve shape
        let (d0, d1) = if m == 0 {
            (y(1) - y(0), y(2) - y(1))
        } else {
            (y(len - 1) - y(len - 2), y(len - 2) - y(len - 3))
        };
        let mut s = 0.5 * (3.0 * d0 - d1);
        if s * d0 <= 0.0 {
            s = 0.0;
        } else if d0 * d1 <= 0.0 && s.abs() > 3.0 * d0.abs() {
            s = 3.0 * d0;
        }
        return s;
    }
    let dl = y(m) - y(m - 1);
    let dr = y(m + 1) - y(m);
    if dl * dr <= 0.0 {
        0.0
    } else {
        2.0 / (1.0 / dl + 1.0 / dr)
    }
}

/// Monotone cubic interpolation of equally spaced samples between nodes
/// `m` and `m+1` at fraction `s`.
pub fn pchip_eval<F: Fn(usize) -> f64>(y: &F, len: usize, m: usize, s: f64) -> f64 {
    if s == 0.0 {
        return y(m);
    }
    let d0 = pchip_slope(y, len, m);
    let d1 = pchip_slope(y, len, m + 1);
    hermite(y(m), y(m + 1), d0, d1, s)
}
