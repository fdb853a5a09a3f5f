//! Anderson acceleration (type II) for fixed-point maps `x ↦ G(x)`.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct Anderson {
    depth: usize,
    damping: f64,
    prev_f: Option<Vec<f64>>,
    prev_g: Option<Vec<f64>>,
    dfs: Vec<Vec<f64>>,
    dgs: Vec<Vec<f64>>,
}

impl Anderson {
    /// `depth = 0` reduces to damped Picard iteration.
    pub fn new(depth: usize, damping: f64) -> Self {
        Self {
            depth,
            damping,
            prev_f: None,
            prev_g: None,
            dfs: Vec::new(),
            dgs: Vec::new(),
        }
    }

    pub fn reset(&mut self) {
        self.prev_f = None;
        self.prev_g = None;
        self.dfs.clear();
        self.dgs.clear();
    }

    /// Next iterate from the current iterate `x` and its image `g = G(x)`.
    pub fn step(&mut self, x: &[f64], g: &[f64]) -> Vec<f64> {
        let beta = self.damping;
        let f: Vec<f64> = g.iter().zip(x).map(|(g, x)| g - x).collect();
        let picard: Vec<f64> = x.iter().zip(&f).map(|(x, f)| x + beta * f).collect();
        if self.depth == 0 {
            return picard;
        }
        if let (Some(pf), Some(pg)) = (&self.prev_f, &self.prev_g) {
            self.dfs.push(f.iter().zip(pf).map(|(a, b)| a - b).collect());
            self.dgs.push(g.iter().zip(pg).map(|(a, b)| a - b).collect());
            if self.dfs.len() > self.depth {
                self.dfs.remove(0);
                self.dgs.remove(0);
            }
        }
        self.prev_f = Some(f.clone());
        self.prev_g = Some(g.to_vec());
        let m = self.dfs.len();
        if m == 0 {
            return picard;
        }
        let n = f.len();
        let df = DMatrix::from_fn(n, m, |i, k| self.dfs[k][i]);
        let svd = df.svd(true, true);
        let smax = svd.singular_values.max();
        if !(smax > 0.0) {
            self.reset();
            return picard;
        }
        let gamma = match svd.solve(&DVector::from_column_slice(&f), smax * 1e-12) {
            Ok(gm) => gm,
            Err(_) => {
                self.reset();
                return picard;
            }
        };
        // x⁺ = x + βf − Σ γ_k (Δx_k + βΔf_k), with Δx_k = Δg_k − Δf_k
        let mut out = picard;
        for k in 0..m {
            let gk = gamma[k];
            for i in 0..n {
                let dx = self.dgs[k][i] - self.dfs[k][i];
                out[i] -= gk * (dx + beta * self.dfs[k][i]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(depth: usize, map: impl Fn(&[f64]) -> Vec<f64>, x0: Vec<f64>) -> (Vec<f64>, usize) {
        let mut acc = Anderson::new(depth, 1.0);
        let mut x = x0;
        for it in 0..10_000 {
            let g = map(&x);
            let d: f64 = g.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if d < 1e-12 {
                return (g, it);
            }
            x = acc.step(&x, &g);
        }
        panic!("no convergence");
    }

    #[test]
    fn linear_contraction_converges_faster_with_acceleration() {
        // G(x) = A x + b with spectral radius 0.99
        let n = 6;
        let diag: Vec<f64> = (0..n).map(|i| 0.99 - 0.1 * i as f64).collect();
        let b: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
        let map = |x: &[f64]| -> Vec<f64> { x.iter().zip(&diag).zip(&b).map(|((x, d), b)| d * x + b).collect() };
        let exact: Vec<f64> = diag.iter().zip(&b).map(|(d, b)| b / (1.0 - d)).collect();
        let (xp, ip) = run(0, map, vec![0.0; n]);
        let (xa, ia) = run(5, map, vec![0.0; n]);
        for i in 0..n {
            assert!((xp[i] - exact[i]).abs() < 1e-8 * exact[i]);
            assert!((xa[i] - exact[i]).abs() < 1e-8 * exact[i]);
        }
        assert!(ia * 10 < ip, "anderson {ia} vs picard {ip}");
    }

    #[test]
    fn scalar_nonlinear_fixed_point() {
        let (x, _) = run(3, |x: &[f64]| vec![x[0].cos()], vec![1.0]);
        assert!((x[0] - 0.7390851332151607).abs() < 1e-11);
    }
}
