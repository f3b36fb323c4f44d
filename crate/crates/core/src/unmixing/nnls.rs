//! Lawson-Hanson active-set nonnegative least squares.
//!
//! The solver works on the normal equations of the small endmember system:
//! with `G = EᵀE` and `b = Eᵀp`, the dual vector is `w = b - G x` and every
//! passive-set subproblem is a Cholesky solve of `G_PP s = b_P`.

use nalgebra::{DMatrix, DVector};

/// Reusable solver for a fixed design matrix whose columns are `columns`.
#[derive(Debug, Clone)]
pub struct Nnls {
    columns: Vec<Vec<f64>>,
    gram: DMatrix<f64>,
    scale: f64,
}

impl Nnls {
    /// `columns` are the design vectors (endmembers), all of equal length.
    pub fn new(columns: &[Vec<f64>]) -> Self {
        let n = columns.len();
        let gram = DMatrix::from_fn(n, n, |i, j| dot(&columns[i], &columns[j]));
        let scale = gram.diagonal().iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        Self { columns: columns.to_vec(), gram, scale }
    }

    pub fn n_vars(&self) -> usize {
        self.columns.len()
    }

    /// argmin ‖p − E a‖₂ subject to a ≥ 0.
    pub fn solve(&self, p: &[f64]) -> Vec<f64> {
        let n = self.n_vars();
        let b: Vec<f64> = self.columns.iter().map(|c| dot(c, p)).collect();
        let p_norm = dot(p, p).sqrt();
        let tol = 1e-13 * self.scale.sqrt() * p_norm.max(1.0) * n as f64;

        let mut x = vec![0.0; n];
        let mut passive = vec![false; n];
        let mut banned = vec![false; n];
        let mut w = self.dual(&b, &x);

        for _ in 0..(3 * n + 10) {
            let candidate = (0..n)
                .filter(|&j| !passive[j] && !banned[j] && w[j] > tol)
                .max_by(|&i, &j| w[i].total_cmp(&w[j]).then(j.cmp(&i)));
            let Some(j) = candidate else { break };
            passive[j] = true;

            for _ in 0..(3 * n + 10) {
                let Some(s) = self.passive_solve(&b, &passive) else {
                    // j is linearly dependent on the passive set
                    passive[j] = false;
                    banned[j] = true;
                    break;
                };
                if (0..n).filter(|&i| passive[i]).all(|i| s[i] > 0.0) {
                    x = s;
                    break;
                }
                let mut alpha = f64::INFINITY;
                for i in (0..n).filter(|&i| passive[i] && s[i] <= 0.0) {
                    alpha = alpha.min(x[i] / (x[i] - s[i]));
                }
                for i in 0..n {
                    x[i] += alpha * (s[i] - x[i]);
                }
                for i in 0..n {
                    if passive[i] && x[i] <= 1e-15 * (1.0 + x.iter().cloned().fold(0.0, f64::max)) {
                        passive[i] = false;
                        x[i] = 0.0;
                    }
                }
                if !passive.iter().any(|&f| f) {
                    break;
                }
            }
            w = self.dual(&b, &x);
        }
        for v in &mut x {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        x
    }

    /// `Eᵀ(p − E x)`.
    fn dual(&self, b: &[f64], x: &[f64]) -> Vec<f64> {
        let n = self.n_vars();
        (0..n)
            .map(|i| b[i] - (0..n).map(|j| self.gram[(i, j)] * x[j]).sum::<f64>())
            .collect()
    }

    fn passive_solve(&self, b: &[f64], passive: &[bool]) -> Option<Vec<f64>> {
        let idx: Vec<usize> = (0..passive.len()).filter(|&i| passive[i]).collect();
        let k = idx.len();
        let g = DMatrix::from_fn(k, k, |r, c| self.gram[(idx[r], idx[c])]);
        let rhs = DVector::from_iterator(k, idx.iter().map(|&i| b[i]));
        let chol = g.cholesky()?;
        let l = chol.l();
        let min_pivot = l.diagonal().iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min_pivot * min_pivot > 1e-13 * self.scale) {
            return None;
        }
        let sol = chol.solve(&rhs);
        let mut s = vec![0.0; passive.len()];
        for (r, &i) in idx.iter().enumerate() {
            s[i] = sol[r];
        }
        Some(s)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One-shot NNLS: `columns` are the design vectors.
pub fn nnls(columns: &[Vec<f64>], p: &[f64]) -> Vec<f64> {
    Nnls::new(columns).solve(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kkt_violation(cols: &[Vec<f64>], p: &[f64], a: &[f64]) -> (f64, f64) {
        let q = p.len();
        let recon: Vec<f64> = (0..q).map(|r| cols.iter().zip(a).map(|(c, w)| c[r] * w).sum()).collect();
        let resid: Vec<f64> = recon.iter().zip(p).map(|(h, y)| h - y).collect();
        let grad: Vec<f64> = cols.iter().map(|c| dot(c, &resid)).collect();
        let dual = grad.iter().cloned().fold(0.0, |m: f64, g| m.max(-g));
        let slack = grad.iter().zip(a).map(|(g, x)| (g * x).abs()).fold(0.0, f64::max);
        (dual, slack)
    }

    #[test]
    fn orthogonal_design_is_exact() {
        let e1 = vec![1.0, 0.0, 0.0];
        let e2 = vec![0.0, 2.0, 0.0];
        let p: Vec<f64> = (0..3).map(|i| 0.3 * e1[i] + 0.7 * e2[i]).collect();
        let a = nnls(&[e1.clone(), e2.clone()], &p);
        assert!((a[0] - 0.3).abs() < 1e-8 && (a[1] - 0.7).abs() < 1e-8, "{a:?}");
    }

    #[test]
    fn exact_representation_and_origin() {
        let cols = vec![vec![1.0, 0.2, 0.1], vec![0.1, 1.0, 0.3], vec![0.3, 0.1, 1.0]];
        let a = nnls(&cols, &cols[0]);
        assert!((a[0] - 1.0).abs() < 1e-8 && a[1].abs() < 1e-8 && a[2].abs() < 1e-8, "{a:?}");

        let ortho = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        assert_eq!(nnls(&ortho, &[0.0, 0.0, 5.0]), vec![0.0, 0.0]);
        // negative correlation with every column: optimum at the origin
        assert_eq!(nnls(&ortho, &[-1.0, -2.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn duplicate_columns_do_not_break_the_solver() {
        let cols = vec![vec![1.0, 1.0], vec![1.0, 1.0], vec![0.0, 1.0]];
        let a = nnls(&cols, &[2.0, 3.0]);
        let (dual, slack) = kkt_violation(&cols, &[2.0, 3.0], &a);
        assert!(dual < 1e-10 && slack < 1e-8, "{a:?}");
    }

    proptest! {
        #[test]
        fn kkt_holds(
            cols in proptest::collection::vec(proptest::collection::vec(-1.0f64..2.0, 6), 1..5),
            p in proptest::collection::vec(-1.0f64..3.0, 6),
        ) {
            let a = nnls(&cols, &p);
            prop_assert!(a.iter().all(|&v| v >= 0.0));
            let (dual, slack) = kkt_violation(&cols, &p, &a);
            prop_assert!(dual < 1e-10, "dual infeasibility {dual}");
            prop_assert!(slack < 1e-8, "complementary slackness {slack}");
        }
    }
}
