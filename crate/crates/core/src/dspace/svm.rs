//! Two-class C-SVM with an RBF kernel trained by sequential minimal
//! optimisation, grid-searched by cross-validation and calibrated with a
//! Platt sigmoid.

use serde::{Deserialize, Serialize};

use super::{sq_euclidean, DspaceError, Label, TrainingSet};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c_grid: Vec<f64>,
    pub gamma_grid: Vec<f64>,
    /// Number of cross-validation folds.
    pub folds: usize,
    /// Training sets smaller than this use leave-one-out instead.
    pub loo_below: usize,
    /// KKT violation tolerance of the solver.
    pub tol: f64,
    /// Upper bound on solver iterations per fit.
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c_grid: vec![0.1, 1.0, 10.0, 100.0],
            gamma_grid: vec![0.01, 0.1, 1.0, 10.0],
            folds: 5,
            loo_below: 10,
            tol: 1e-3,
            max_iter: 100_000,
        }
    }
}

impl SvmParams {
    fn validate(&self) -> Result<(), DspaceError> {
        let positive = |g: &[f64]| !g.is_empty() && g.iter().all(|v| v.is_finite() && *v > 0.0);
        if !positive(&self.c_grid) || !positive(&self.gamma_grid) {
            return Err(DspaceError::Param("C and gamma grids must be non-empty and positive".into()));
        }
        if self.folds < 2 || !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(DspaceError::Param("need folds >= 2, tol > 0 and max_iter >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    support: Vec<Vec<f64>>,
    /// `αᵢ yᵢ` per support vector.
    coef: Vec<f64>,
    bias: f64,
    gamma: f64,
    c: f64,
    platt_a: f64,
    platt_b: f64,
    /// Cross-validated accuracy of the selected `(C, γ)`; `None` for fixed fits.
    cv_accuracy: Option<f64>,
    iterations: usize,
}

impl SvmModel {
    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn platt(&self) -> (f64, f64) {
        (self.platt_a, self.platt_b)
    }

    pub fn cv_accuracy(&self) -> Option<f64> {
        self.cv_accuracy
    }

    pub fn n_support(&self) -> usize {
        self.support.len()
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn dim(&self) -> usize {
        self.support[0].len()
    }

    pub fn decision(&self, x: &[f64]) -> Result<f64, DspaceError> {
        if x.len() != self.dim() {
            return Err(DspaceError::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(decision(&self.support, &self.coef, self.bias, self.gamma, x))
    }

    pub fn probability(&self, decision: f64) -> f64 {
        sigmoid_prob(decision, self.platt_a, self.platt_b)
    }
}

fn decision(support: &[Vec<f64>], coef: &[f64], bias: f64, gamma: f64, x: &[f64]) -> f64 {
    support.iter().zip(coef).map(|(s, c)| c * (-gamma * sq_euclidean(s, x)).exp()).sum::<f64>() + bias
}

/// Platt-calibrated probability of the positive class.
pub fn svm_score(model: &SvmModel, s_x: &[f64]) -> Result<f64, DspaceError> {
    Ok(model.probability(model.decision(s_x)?))
}

struct Solution {
    alpha: Vec<f64>,
    bias: f64,
    iterations: usize,
}

/// Dual coordinate ascent on the maximal violating pair. `k` is the n×n
/// kernel matrix, `y` holds ±1.
fn smo(k: &[f64], y: &[f64], c: f64, tol: f64, max_iter: usize) -> Solution {
    let n = y.len();
    let q = |i: usize, j: usize| y[i] * y[j] * k[i * n + j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut iterations = 0;
    let in_up = |a: f64, yi: f64| if yi > 0.0 { a < c } else { a > 0.0 };
    let in_low = |a: f64, yi: f64| if yi > 0.0 { a > 0.0 } else { a < c };
    while iterations < max_iter {
        let (mut gmax, mut gmax2) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        let (mut wi, mut wj) = (usize::MAX, usize::MAX);
        for t in 0..n {
            let v = -y[t] * grad[t];
            if in_up(alpha[t], y[t]) && v > gmax {
                gmax = v;
                wi = t;
            }
            if in_low(alpha[t], y[t]) && -v > gmax2 {
                gmax2 = -v;
                wj = t;
            }
        }
        if wi == usize::MAX || wj == usize::MAX || gmax + gmax2 < tol {
            break;
        }
        iterations += 1;
        let (i, j) = (wi, wj);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (k[i * n + i] + k[j * n + j] + 2.0 * q(i, j)).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (k[i * n + i] + k[j * n + j] - 2.0 * q(i, j)).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q(i, t) * di + q(j, t) * dj;
        }
    }
    // ρ from free vectors, or the midpoint of the feasible interval
    let (mut ub, mut lb, mut free, mut free_sum) = (f64::INFINITY, f64::NEG_INFINITY, 0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        let at_upper = alpha[t] >= c;
        let at_lower = alpha[t] <= 0.0;
        if (at_upper && y[t] < 0.0) || (at_lower && y[t] > 0.0) {
            ub = ub.min(yg);
        } else if at_upper || at_lower {
            lb = lb.max(yg);
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    let rho = if free > 0 { free_sum / free as f64 } else { (ub + lb) / 2.0 };
    Solution { alpha, bias: -rho, iterations }
}

fn sigmoid_prob(dec: f64, a: f64, b: f64) -> f64 {
    let f = dec * a + b;
    if f >= 0.0 {
        let e = (-f).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + f.exp())
    }
}

/// Fits `P(+|f) = 1 / (1 + exp(A f + B))` by regularised maximum likelihood
/// (Newton iteration with backtracking on smoothed targets).
pub fn platt_fit(dec: &[f64], positive: &[bool]) -> (f64, f64) {
    let prior1 = positive.iter().filter(|p| **p).count() as f64;
    let prior0 = positive.len() as f64 - prior1;
    let hi = (prior1 + 1.0) / (prior1 + 2.0);
    let lo = 1.0 / (prior0 + 2.0);
    let target: Vec<f64> = positive.iter().map(|&p| if p { hi } else { lo }).collect();
    let objective = |a: f64, b: f64| -> f64 {
        dec.iter()
            .zip(&target)
            .map(|(d, t)| {
                let f = d * a + b;
                if f >= 0.0 {
                    t * f + (1.0 + (-f).exp()).ln()
                } else {
                    (t - 1.0) * f + (1.0 + f.exp()).ln()
                }
            })
            .sum()
    };
    let (mut a, mut b) = (0.0, ((prior0 + 1.0) / (prior1 + 1.0)).ln());
    let mut fval = objective(a, b);
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (1e-12, 1e-12, 0.0, 0.0, 0.0);
        for (d, t) in dec.iter().zip(&target) {
            let p = sigmoid_prob(*d, a, b);
            let d2 = p * (1.0 - p);
            h11 += d * d * d2;
            h22 += d2;
            h21 += d * d2;
            let d1 = t - p;
            g1 += d * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < 1e-10 {
            break;
        }
    }
    (a, b)
}

struct Data<'a> {
    x: Vec<&'a [f64]>,
    y: Vec<f64>,
    sq: Vec<f64>,
}

impl<'a> Data<'a> {
    fn new(t: &'a TrainingSet) -> Self {
        let x: Vec<&[f64]> = t.entries().iter().map(|e| e.vector.as_slice()).collect();
        let y = t.entries().iter().map(|e| e.label.sign()).collect();
        let n = x.len();
        let mut sq = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = sq_euclidean(x[i], x[j]);
                sq[i * n + j] = d;
                sq[j * n + i] = d;
            }
        }
        Self { x, y, sq }
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    /// Fits on the subset `idx`; returns the dual solution over `idx`.
    fn fit(&self, idx: &[usize], c: f64, gamma: f64, p: &SvmParams) -> Solution {
        let n = self.n();
        let m = idx.len();
        let mut k = vec![0.0; m * m];
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                k[a * m + b] = (-gamma * self.sq[i * n + j]).exp();
            }
        }
        let y: Vec<f64> = idx.iter().map(|&i| self.y[i]).collect();
        smo(&k, &y, c, p.tol, p.max_iter)
    }

    fn decision_at(&self, idx: &[usize], sol: &Solution, gamma: f64, target: usize) -> f64 {
        let n = self.n();
        idx.iter()
            .zip(&sol.alpha)
            .filter(|(_, a)| **a > 0.0)
            .map(|(&i, a)| a * self.y[i] * (-gamma * self.sq[i * n + target]).exp())
            .sum::<f64>()
            + sol.bias
    }
}

/// Deterministic stratified folds: positives then negatives, dealt
/// round-robin in training-set order. Leave-one-out below `loo_below`.
fn fold_of(y: &[f64], p: &SvmParams) -> Vec<usize> {
    let n = y.len();
    let k = if n < p.loo_below { n } else { p.folds.min(n) };
    let mut folds = vec![0; n];
    let order = (0..n).filter(|&i| y[i] > 0.0).chain((0..n).filter(|&i| y[i] < 0.0));
    for (slot, i) in order.enumerate() {
        folds[i] = slot % k;
    }
    folds
}

/// Cross-validated accuracy and held-out decision values (`None` where the
/// training part of a fold had a single class and the prediction was that
/// class).
fn cross_validate(data: &Data, folds: &[usize], c: f64, gamma: f64, p: &SvmParams) -> (f64, Vec<Option<f64>>) {
    let n = data.n();
    let k = folds.iter().max().map_or(0, |m| m + 1);
    let mut correct = 0usize;
    let mut held = vec![None; n];
    for f in 0..k {
        let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
        let first = data.y[train[0]];
        if train.iter().all(|&i| data.y[i] == first) {
            correct += test.iter().filter(|&&i| data.y[i] == first).count();
            continue;
        }
        let sol = data.fit(&train, c, gamma, p);
        for &i in &test {
            let d = data.decision_at(&train, &sol, gamma, i);
            held[i] = Some(d);
            let predicted = if d > 0.0 { 1.0 } else { -1.0 };
            if predicted == data.y[i] {
                correct += 1;
            }
        }
    }
    (correct as f64 / n as f64, held)
}

fn check_two_classes(t: &TrainingSet) -> Result<(), DspaceError> {
    if t.is_empty() {
        return Err(DspaceError::EmptyTraining);
    }
    for label in [Label::Positive, Label::Negative] {
        if t.count(label) == t.len() {
            return Err(DspaceError::SingleClass(label));
        }
    }
    Ok(())
}

fn finish(
    data: &Data,
    c: f64,
    gamma: f64,
    p: &SvmParams,
    held: Option<Vec<Option<f64>>>,
    cv_accuracy: Option<f64>,
) -> SvmModel {
    let all: Vec<usize> = (0..data.n()).collect();
    let sol = data.fit(&all, c, gamma, p);
    let (mut support, mut coef) = (Vec::new(), Vec::new());
    for (i, &a) in sol.alpha.iter().enumerate() {
        if a > 0.0 {
            support.push(data.x[i].to_vec());
            coef.push(a * data.y[i]);
        }
    }
    let calibrate = |pairs: Vec<(f64, bool)>| -> Option<(f64, f64)> {
        if !pairs.iter().any(|x| x.1) || pairs.iter().all(|x| x.1) {
            return None;
        }
        let (d, l): (Vec<f64>, Vec<bool>) = pairs.into_iter().unzip();
        let (a, b) = platt_fit(&d, &l);
        (a < 0.0).then_some((a, b))
    };
    let held_pairs = held
        .map(|h| h.iter().zip(&data.y).filter_map(|(d, y)| d.map(|d| (d, *y > 0.0))).collect::<Vec<_>>())
        .unwrap_or_default();
    let in_sample = || {
        all.iter().map(|&i| (data.decision_at(&all, &sol, gamma, i), data.y[i] > 0.0)).collect::<Vec<_>>()
    };
    let (platt_a, platt_b) = calibrate(held_pairs).or_else(|| calibrate(in_sample())).unwrap_or((-1.0, 0.0));
    SvmModel { support, coef, bias: sol.bias, gamma, c, platt_a, platt_b, cv_accuracy, iterations: sol.iterations }
}

/// Selects `(C, γ)` on the grid by cross-validated accuracy (first best in
/// grid order, so ties go to the smaller C, then the smaller γ), refits on
/// the full set and calibrates on the held-out decision values.
pub fn svm_train(t: &TrainingSet, p: &SvmParams) -> Result<SvmModel, DspaceError> {
    p.validate()?;
    check_two_classes(t)?;
    let data = Data::new(t);
    let folds = fold_of(&data.y, p);
    let mut cs = p.c_grid.clone();
    let mut gs = p.gamma_grid.clone();
    cs.sort_by(f64::total_cmp);
    gs.sort_by(f64::total_cmp);
    let mut best: Option<(f64, f64, f64, Vec<Option<f64>>)> = None;
    for &c in &cs {
        for &g in &gs {
            let (acc, held) = cross_validate(&data, &folds, c, g, p);
            if best.as_ref().is_none_or(|b| acc > b.0) {
                best = Some((acc, c, g, held));
            }
        }
    }
    let (acc, c, g, held) = best.expect("non-empty grid");
    Ok(finish(&data, c, g, p, Some(held), Some(acc)))
}

/// Fits with fixed `(C, γ)`; calibration uses in-sample decision values.
pub fn svm_train_fixed(t: &TrainingSet, c: f64, gamma: f64, p: &SvmParams) -> Result<SvmModel, DspaceError> {
    if !(c > 0.0 && gamma > 0.0) {
        return Err(DspaceError::Param("C and gamma must be positive".into()));
    }
    check_two_classes(t)?;
    let data = Data::new(t);
    Ok(finish(&data, c, gamma, p, None, None))
}
