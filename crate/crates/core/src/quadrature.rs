//! Gauss-Legendre rules, plain and geometrically graded toward an endpoint
//! singularity of the form `|t - a|^{-s}` with `s < 1`.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Reusable rule with cached nodes.
#[derive(Debug, Clone)]
pub struct Rule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Rule {
    pub fn new(order: usize) -> Self {
        let (nodes, weights) = gauss_legendre(order);
        Self { nodes, weights }
    }

    /// Single panel on `[a, b]`.
    pub fn panel<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, f: &mut F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(mid + half * x)).sum::<f64>() * half
    }

    /// Composite rule over `panels` equal panels.
    pub fn composite<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, panels: usize, mut f: F) -> f64 {
        let h = (b - a) / panels as f64;
        (0..panels).map(|j| self.panel(a + j as f64 * h, a + (j + 1) as f64 * h, &mut f)).sum()
    }

    /// Integral over `[a, b]` of an integrand behaving like `(t - a)^{-s}`
    /// near `a`. Panels shrink geometrically toward `a` until the neglected
    /// innermost piece, bounded by `C (width)^{1-s} / (1-s)`, falls below `tol`.
    pub fn singular_left<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, s: f64, tol: f64, mut f: F) -> f64 {
        if b <= a {
            return 0.0;
        }
        let len = b - a;
        let ratio = 0.15_f64;
        let exponent = (1.0 - s).max(1e-3);
        // panels needed for (len * ratio^k)^{1-s} < tol
        let k_max = if len > 0.0 {
            let need = (tol.ln() / exponent - len.ln()) / ratio.ln();
            need.ceil().clamp(1.0, 400.0) as usize
        } else {
            1
        };
        let mut total = 0.0;
        let mut right = b;
        for _ in 0..k_max {
            let left = a + (right - a) * ratio;
            total += self.panel(left, right, &mut f);
            right = left;
        }
        total + self.panel(a, right, &mut f)
    }
}
