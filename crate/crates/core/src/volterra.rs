//! Product-integration solver for the weakly singular Volterra equation
//!
//! ```text
//! u(t) = g(t) + κ(t) ∫₀ᵗ (t - s)^{-β} u(s) ds
//! ```
//!
//! with `u` piecewise linear on a mesh graded toward `t = 0` and the kernel
//! integrated exactly against each hat function.

use crate::error::{Error, Result};

/// Mesh `T·(i/n)^grading`, `i = 0..=n`.
pub fn graded_mesh(t_end: f64, n: usize, grading: f64) -> Vec<f64> {
    (0..=n).map(|i| t_end * (i as f64 / n as f64).powf(grading)).collect()
}

/// Split every cell of `mesh` into `factor` equal pieces.
pub fn refine(mesh: &[f64], factor: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity((mesh.len() - 1) * factor + 1);
    for w in mesh.windows(2) {
        for j in 0..factor {
            out.push(w[0] + (w[1] - w[0]) * j as f64 / factor as f64);
        }
    }
    out.push(*mesh.last().expect("non-empty mesh"));
    out
}

/// Moments `(∫_B^A r^{-β} dr, ∫_B^A r^{-β}(A - r) dr)` for `0 ≤ B < A`.
fn moments(a_end: f64, b_end: f64, beta: f64) -> (f64, f64) {
    let p = 1.0 - beta;
    let m0 = (a_end.powf(p) - b_end.powf(p)) / p;
    let m1 = a_end * m0 - (a_end.powf(p + 1.0) - b_end.powf(p + 1.0)) / (p + 1.0);
    (m0, m1)
}

/// Solution values on `mesh` (which must start at 0 and increase).
pub fn solve<K, G>(beta: f64, mesh: &[f64], kappa: K, g: G) -> Result<Vec<f64>>
where
    K: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::param("beta", "must lie in (0, 1)"));
    }
    if mesh.len() < 2 || mesh[0] != 0.0 || mesh.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("mesh", "must start at 0 and increase strictly"));
    }
    let n = mesh.len();
    let mut u = vec![0.0; n];
    u[0] = g(0.0);
    for i in 1..n {
        let ti = mesh[i];
        // weights of u_j in ∫₀^{t_i} (t_i - s)^{-β} u(s) ds
        let mut history = 0.0;
        let mut own = 0.0;
        for j in 0..i {
            let h = mesh[j + 1] - mesh[j];
            let (m0, m1) = moments(ti - mesh[j], ti - mesh[j + 1], beta);
            let w_right = m1 / h;
            let w_left = m0 - w_right;
            history += w_left * u[j];
            if j + 1 == i {
                own = w_right;
            } else {
                history += w_right * u[j + 1];
            }
        }
        let k = kappa(ti);
        let denom = 1.0 - k * own;
        if denom <= 0.0 {
            return Err(Error::param("mesh", "first cell too coarse for the implicit update"));
        }
        u[i] = (g(ti) + k * history) / denom;
    }
    Ok(u)
}

/// Values on `mesh` from solves on the `factor`- and `2·factor`-fold
/// refinements, combined by Richardson extrapolation of the `O(h²)` error.
pub fn solve_extrapolated<K, G>(beta: f64, mesh: &[f64], factor: usize, kappa: K, g: G) -> Result<Vec<f64>>
where
    K: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let coarse = solve(beta, &refine(mesh, factor), &kappa, &g)?;
    let fine = solve(beta, &refine(mesh, 2 * factor), &kappa, &g)?;
    Ok((0..mesh.len()).map(|i| (4.0 * fine[2 * factor * i] - coarse[factor * i]) / 3.0).collect())
}

/// Linear interpolation of samples `(xs, ys)`.
pub fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    let i = xs.partition_point(|v| *v <= x) - 1;
    let w = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] + w * (ys[i + 1] - ys[i])
}
