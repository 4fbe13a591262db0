//! Uniform time grids and node-based quadrature.
//!
//! The backward solvers need running integrals `∫_{t_j}^{T} f(s) ds` at every
//! node of a uniform grid. Composite Simpson handles even interval counts;
//! odd counts are patched with a one-interval rule that integrates the cubic
//! through four neighbouring nodes, keeping the whole table fourth order.

use crate::error::{EngineError, Result};

/// Uniform grid on `[0, horizon]` with `n` nodes (`n >= 2`).
pub fn uniform_grid(horizon: f64, n: usize) -> Result<Vec<f64>> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(EngineError::InvalidArgument(format!(
            "horizon must be positive and finite, got {horizon}"
        )));
    }
    if n < 2 {
        return Err(EngineError::InvalidArgument(format!(
            "grid needs at least 2 nodes, got {n}"
        )));
    }
    Ok((0..n)
        .map(|j| horizon * j as f64 / (n - 1) as f64)
        .collect())
}

/// Spacing of a uniform grid.
pub fn grid_step(grid: &[f64]) -> f64 {
    debug_assert!(grid.len() >= 2);
    (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64
}

/// Running integrals from the right on a uniform grid:
/// `out[j] = ∫_{t_j}^{t_{n-1}} f`, fourth order for smooth `f`.
///
/// Even interval counts use Simpson pairs; an odd leading interval is
/// integrated with the cubic through nodes `j..j+3`
/// (`h(9f_j + 19f_{j+1} - 5f_{j+2} + f_{j+3})/24`), falling back to the
/// mirrored stencil or the three-node rule near the right boundary.
pub fn cumulative_integral_from_right(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    if n == 2 {
        out[0] = h / 2.0 * (f[0] + f[1]);
        return out;
    }
    for j in (0..n - 1).rev() {
        let m = n - 1 - j;
        if m % 2 == 0 {
            out[j] = out[j + 2] + h / 3.0 * (f[j] + 4.0 * f[j + 1] + f[j + 2]);
        } else if m >= 3 {
            out[j] =
                out[j + 1] + h / 24.0 * (9.0 * f[j] + 19.0 * f[j + 1] - 5.0 * f[j + 2] + f[j + 3]);
        } else {
            // m == 1, i.e. j == n - 2: single interval at the right boundary
            out[j] = if n >= 4 {
                h / 24.0 * (f[j - 2] - 5.0 * f[j - 1] + 19.0 * f[j] + 9.0 * f[j + 1])
            } else {
                // n == 3: quadratic through all three nodes
                h / 12.0 * (-f[j - 1] + 8.0 * f[j] + 5.0 * f[j + 1])
            };
        }
    }
    out
}

/// Linear interpolation of node values on a uniform grid; clamps to the
/// boundary values outside the grid.
pub fn linear_interp(grid: &[f64], values: &[f64], t: f64) -> f64 {
    debug_assert_eq!(grid.len(), values.len());
    let n = grid.len();
    if t <= grid[0] {
        return values[0];
    }
    if t >= grid[n - 1] {
        return values[n - 1];
    }
    let h = grid_step(grid);
    let j = (((t - grid[0]) / h).floor() as usize).min(n - 2);
    let w = (t - grid[j]) / h;
    values[j] * (1.0 - w) + values[j + 1] * w
}

/// Classic fourth-order Runge-Kutta integration of `y' = f(t, y)` from
/// `t0` to `t1` in `steps` equal steps. Used as an independent oracle for
/// the closed-form solvers.
pub fn rk4(f: impl Fn(f64, f64) -> f64, t0: f64, t1: f64, y0: f64, steps: usize) -> f64 {
    let h = (t1 - t0) / steps as f64;
    let mut t = t0;
    let mut y = y0;
    for _ in 0..steps {
        let k1 = f(t, y);
        let k2 = f(t + h / 2.0, y + h / 2.0 * k1);
        let k3 = f(t + h / 2.0, y + h / 2.0 * k2);
        let k4 = f(t + h, y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t += h;
    }
    y
}

/// Two-component RK4, for vector ODE oracles.
pub fn rk4_vec2(
    f: impl Fn(f64, [f64; 2]) -> [f64; 2],
    t0: f64,
    t1: f64,
    y0: [f64; 2],
    steps: usize,
) -> [f64; 2] {
    let h = (t1 - t0) / steps as f64;
    let mut t = t0;
    let mut y = y0;
    let add = |a: [f64; 2], b: [f64; 2], s: f64| [a[0] + s * b[0], a[1] + s * b[1]];
    for _ in 0..steps {
        let k1 = f(t, y);
        let k2 = f(t + h / 2.0, add(y, k1, h / 2.0));
        let k3 = f(t + h / 2.0, add(y, k2, h / 2.0));
        let k4 = f(t + h, add(y, k3, h));
        y = [
            y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ];
        t += h;
    }
    y
}
