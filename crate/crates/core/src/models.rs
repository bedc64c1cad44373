//! Built-in predictive models: k-nearest neighbours, multinomial logistic
//! regression, Gaussian naive Bayes and ridge regression.
//!
//! Models are fitted once and then only queried through [`ModelHandle`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{class_index, Dataset, ModelHandle, Predictor};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spatial::KdTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSpec {
    Knn { k: usize },
    LogisticRegression { learning_rate: f64, epochs: usize },
    GaussianNb,
    Ridge { lambda: f64 },
}

impl ModelSpec {
    pub fn logistic() -> Self {
        ModelSpec::LogisticRegression {
            learning_rate: 0.1,
            epochs: 500,
        }
    }

    /// Whether the model predicts class indices.
    pub fn is_classifier(&self) -> bool {
        !matches!(self, ModelSpec::Ridge { .. })
    }

    pub fn fit<T: Real>(&self, train: &Dataset<T>) -> Result<ModelHandle<T>> {
        if train.is_empty() {
            return Err(Error::EmptyInput("training set"));
        }
        let name = self.to_string();
        Ok(match *self {
            ModelSpec::Knn { k } => ModelHandle::new(name, Knn::fit(train, k)?),
            ModelSpec::LogisticRegression {
                learning_rate,
                epochs,
            } => ModelHandle::new(name, Logistic::fit(train, learning_rate, epochs)?),
            ModelSpec::GaussianNb => ModelHandle::new(name, GaussianNb::fit(train)?),
            ModelSpec::Ridge { lambda } => ModelHandle::new(name, Ridge::fit(train, lambda)?),
        })
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSpec::Knn { k } => write!(f, "knn:{k}"),
            ModelSpec::LogisticRegression {
                learning_rate,
                epochs,
            } => write!(f, "logreg:{learning_rate}:{epochs}"),
            ModelSpec::GaussianNb => write!(f, "gnb"),
            ModelSpec::Ridge { lambda } => write!(f, "ridge:{lambda}"),
        }
    }
}

/// Parses `knn:K`, `logreg[:LR[:EPOCHS]]`, `gnb`, `ridge[:LAMBDA]`.
impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let bad = || Error::InvalidInput(format!("unknown model spec {s:?}"));
        let num = |i: usize| -> Result<Option<f64>> {
            parts
                .get(i)
                .map(|p| p.parse::<f64>().map_err(|_| bad()))
                .transpose()
        };
        let spec = match parts[0] {
            "knn" => {
                let k = num(1)?.unwrap_or(5.0);
                if k < 1.0 || k.fract() != 0.0 {
                    return Err(bad());
                }
                ModelSpec::Knn { k: k as usize }
            }
            "logreg" => ModelSpec::LogisticRegression {
                learning_rate: num(1)?.unwrap_or(0.1),
                epochs: num(2)?.unwrap_or(500.0) as usize,
            },
            "gnb" => ModelSpec::GaussianNb,
            "ridge" => ModelSpec::Ridge {
                lambda: num(1)?.unwrap_or(1.0),
            },
            _ => return Err(bad()),
        };
        let max_parts = match spec {
            ModelSpec::Knn { .. } | ModelSpec::Ridge { .. } => 2,
            ModelSpec::LogisticRegression { .. } => 3,
            ModelSpec::GaussianNb => 1,
        };
        if parts.len() > max_parts {
            return Err(bad());
        }
        Ok(spec)
    }
}

fn class_labels<T: Real>(train: &Dataset<T>) -> Result<(Vec<usize>, usize)> {
    let labels = train
        .labels()
        .map(|l| {
            class_index(l).ok_or_else(|| Error::InvalidInput(format!("label {l} is not a class index")))
        })
        .collect::<Result<Vec<_>>>()?;
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Ok((labels, classes))
}

fn check_dim(expected: usize, x: &[impl Sized]) -> Result<()> {
    if x.len() == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected,
            got: x.len(),
        })
    }
}

/// Majority vote of the `k` nearest training points; distance ties go to
/// the lower training index and vote ties to the class seen nearest.
#[derive(Debug, Clone)]
pub struct Knn<T> {
    tree: KdTree<T>,
    labels: Vec<usize>,
    classes: usize,
    k: usize,
    dim: usize,
}

impl<T: Real> Knn<T> {
    pub fn fit(train: &Dataset<T>, k: usize) -> Result<Self> {
        if k < 1 || k > train.len() {
            return Err(Error::InvalidNeighbours { k, n: train.len() });
        }
        let (labels, classes) = class_labels(train)?;
        Ok(Self {
            tree: KdTree::new(train.iter().map(|s| s.features.clone()).collect()),
            labels,
            classes,
            k,
            dim: train.dim(),
        })
    }
}

impl<T: Real> Predictor<T> for Knn<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, x: &[T]) -> Result<T> {
        check_dim(self.dim, x)?;
        let hits = self.tree.knn(x, self.k);
        let mut votes = vec![0usize; self.classes];
        for &(i, _) in &hits {
            votes[self.labels[i]] += 1;
        }
        let top = votes.iter().copied().max().unwrap_or(0);
        let winner = hits
            .iter()
            .map(|&(i, _)| self.labels[i])
            .find(|&c| votes[c] == top)
            .unwrap_or(0);
        Ok(T::from_usize_lossy(winner))
    }
}

/// Softmax regression trained by full-batch gradient descent from zero on
/// standardized features.
#[derive(Debug, Clone)]
pub struct Logistic<T> {
    /// `classes x (dim + 1)`, intercept last.
    weights: Vec<Vec<T>>,
    mean: Vec<T>,
    scale: Vec<T>,
    dim: usize,
}

fn standardization<T: Real>(train: &Dataset<T>) -> (Vec<T>, Vec<T>) {
    let d = train.dim();
    let n = T::from_usize_lossy(train.len());
    let mut mean = vec![T::zero(); d];
    for s in train {
        for (m, &v) in mean.iter_mut().zip(&s.features) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![T::zero(); d];
    for s in train {
        for ((v, &x), &m) in var.iter_mut().zip(&s.features).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let scale = var
        .into_iter()
        .map(|v| {
            let sd = (v / n).sqrt();
            if sd > T::from_f64_lossy(1e-12) {
                sd
            } else {
                T::one()
            }
        })
        .collect();
    (mean, scale)
}

fn softmax_in_place<T: Real>(z: &mut [T]) {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    z.iter_mut().for_each(|v| *v /= total);
}

impl<T: Real> Logistic<T> {
    pub fn fit(train: &Dataset<T>, learning_rate: f64, epochs: usize) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::parameter("learning_rate", learning_rate, "must be positive"));
        }
        let (labels, classes) = class_labels(train)?;
        let d = train.dim();
        let (mean, scale) = standardization(train);
        let rows: Vec<Vec<T>> = train
            .iter()
            .map(|s| {
                let mut r: Vec<T> = s
                    .features
                    .iter()
                    .zip(&mean)
                    .zip(&scale)
                    .map(|((&x, &m), &sd)| (x - m) / sd)
                    .collect();
                r.push(T::one());
                r
            })
            .collect();
        let n = T::from_usize_lossy(rows.len());
        let lr = T::from_f64_lossy(learning_rate);
        let mut w = vec![vec![T::zero(); d + 1]; classes];
        let mut z = vec![T::zero(); classes];
        for _ in 0..epochs {
            let mut grad = vec![vec![T::zero(); d + 1]; classes];
            for (r, &y) in rows.iter().zip(&labels) {
                for (zc, wc) in z.iter_mut().zip(&w) {
                    *zc = wc.iter().zip(r).map(|(&a, &b)| a * b).sum();
                }
                softmax_in_place(&mut z);
                z[y] -= T::one();
                for (gc, &e) in grad.iter_mut().zip(&z) {
                    for (g, &x) in gc.iter_mut().zip(r) {
                        *g += e * x;
                    }
                }
            }
            for (wc, gc) in w.iter_mut().zip(&grad) {
                for (wv, &g) in wc.iter_mut().zip(gc) {
                    *wv -= lr * g / n;
                }
            }
        }
        Ok(Self {
            weights: w,
            mean,
            scale,
            dim: d,
        })
    }

    /// Class probabilities at `x`.
    pub fn probabilities(&self, x: &[T]) -> Result<Vec<T>> {
        check_dim(self.dim, x)?;
        let mut z: Vec<T> = self
            .weights
            .iter()
            .map(|wc| {
                x.iter()
                    .zip(&self.mean)
                    .zip(&self.scale)
                    .zip(wc)
                    .map(|(((&v, &m), &sd), &w)| w * (v - m) / sd)
                    .sum::<T>()
                    + wc[self.dim]
            })
            .collect();
        softmax_in_place(&mut z);
        Ok(z)
    }
}

fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl<T: Real> Predictor<T> for Logistic<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, x: &[T]) -> Result<T> {
        Ok(T::from_usize_lossy(argmax(&self.probabilities(x)?)))
    }
}

/// Per-class axis-aligned Gaussians with empirical priors. Variances get
/// `1e-9` times the largest feature variance added.
#[derive(Debug, Clone)]
pub struct GaussianNb<T> {
    log_prior: Vec<Option<T>>,
    mean: Vec<Vec<T>>,
    var: Vec<Vec<T>>,
    dim: usize,
}

impl<T: Real> GaussianNb<T> {
    pub fn fit(train: &Dataset<T>) -> Result<Self> {
        let (labels, classes) = class_labels(train)?;
        let d = train.dim();
        let mut count = vec![0usize; classes];
        let mut mean = vec![vec![T::zero(); d]; classes];
        for (s, &c) in train.iter().zip(&labels) {
            count[c] += 1;
            for (m, &x) in mean[c].iter_mut().zip(&s.features) {
                *m += x;
            }
        }
        for (m, &n) in mean.iter_mut().zip(&count) {
            if n > 0 {
                m.iter_mut().for_each(|v| *v /= T::from_usize_lossy(n));
            }
        }
        let mut var = vec![vec![T::zero(); d]; classes];
        for (s, &c) in train.iter().zip(&labels) {
            for ((v, &x), &m) in var[c].iter_mut().zip(&s.features).zip(&mean[c]) {
                *v += (x - m) * (x - m);
            }
        }
        let (_, scale) = standardization(train);
        let max_var = scale.iter().map(|&s| s * s).fold(T::zero(), T::max);
        let floor = T::from_f64_lossy(1e-9) * max_var.max(T::from_f64_lossy(1e-12));
        for (v, &n) in var.iter_mut().zip(&count) {
            v.iter_mut().for_each(|x| {
                *x = if n > 0 { *x / T::from_usize_lossy(n) } else { T::one() } + floor
            });
        }
        let total = T::from_usize_lossy(train.len());
        Ok(Self {
            log_prior: count
                .iter()
                .map(|&n| (n > 0).then(|| (T::from_usize_lossy(n) / total).ln()))
                .collect(),
            mean,
            var,
            dim: d,
        })
    }
}

impl<T: Real> Predictor<T> for GaussianNb<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, x: &[T]) -> Result<T> {
        check_dim(self.dim, x)?;
        let two_pi = T::from_f64_lossy(std::f64::consts::TAU);
        let half = T::from_f64_lossy(0.5);
        let scores: Vec<T> = self
            .log_prior
            .iter()
            .enumerate()
            .map(|(c, lp)| match lp {
                None => T::neg_infinity(),
                Some(lp) => {
                    *lp - half
                        * x.iter()
                            .zip(&self.mean[c])
                            .zip(&self.var[c])
                            .map(|((&v, &m), &s)| (two_pi * s).ln() + (v - m) * (v - m) / s)
                            .sum::<T>()
                }
            })
            .collect();
        Ok(T::from_usize_lossy(argmax(&scores)))
    }
}

/// `argmin |y - Xw - c|^2 + lambda |w|^2` with an unpenalized intercept.
#[derive(Debug, Clone)]
pub struct Ridge<T> {
    pub coefficients: Vec<T>,
    pub intercept: T,
}

impl<T: Real> Ridge<T> {
    pub fn fit(train: &Dataset<T>, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::parameter("lambda", lambda, "must be finite and non-negative"));
        }
        let d = train.dim();
        let n = T::from_usize_lossy(train.len());
        let (x_mean, _) = standardization(train);
        let y_mean = train.labels().sum::<T>() / n;
        let mut a = vec![vec![T::zero(); d]; d];
        let mut rhs = vec![T::zero(); d];
        for s in train {
            let xc: Vec<T> = s.features.iter().zip(&x_mean).map(|(&x, &m)| x - m).collect();
            let yc = s.label - y_mean;
            for i in 0..d {
                rhs[i] += xc[i] * yc;
                for j in 0..d {
                    a[i][j] += xc[i] * xc[j];
                }
            }
        }
        let lam = T::from_f64_lossy(lambda);
        for (i, row) in a.iter_mut().enumerate() {
            row[i] += lam;
        }
        let coefficients = solve(a, rhs)?;
        let intercept = y_mean
            - coefficients
                .iter()
                .zip(&x_mean)
                .map(|(&w, &m)| w * m)
                .sum::<T>();
        Ok(Self {
            coefficients,
            intercept,
        })
    }
}

impl<T: Real> Predictor<T> for Ridge<T> {
    fn dim(&self) -> usize {
        self.coefficients.len()
    }

    fn predict(&self, x: &[T]) -> Result<T> {
        check_dim(self.coefficients.len(), x)?;
        Ok(self.intercept + x.iter().zip(&self.coefficients).map(|(&a, &b)| a * b).sum::<T>())
    }
}

/// Gaussian elimination with partial pivoting.
fn solve<T: Real>(mut a: Vec<Vec<T>>, mut b: Vec<T>) -> Result<Vec<T>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if !(a[pivot][col].abs() > T::from_f64_lossy(1e-300)) {
            return Err(Error::InvalidInput(
                "singular normal equations; use a positive ridge penalty".into(),
            ));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                let v = a[col][k];
                a[row][k] -= f * v;
            }
            let v = b[col];
            b[row] -= f * v;
        }
    }
    let mut x = vec![T::zero(); n];
    for row in (0..n).rev() {
        let s: T = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabeledSample;
    use crate::generator::{Generator, GmmParams, ShiftedGmm};
    use nalgebra::{DMatrix, DVector};

    fn data(rows: &[(&[f64], f64)]) -> Dataset<f64> {
        Dataset::new(
            rows[0].0.len(),
            rows.iter().map(|(x, y)| LabeledSample::new(x.to_vec(), *y)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn spec_round_trip() {
        for s in ["knn:5", "logreg:0.1:500", "gnb", "ridge:2.5"] {
            assert_eq!(s.parse::<ModelSpec>().unwrap().to_string(), s);
        }
        assert_eq!("logreg".parse::<ModelSpec>().unwrap(), ModelSpec::logistic());
        for bad in ["knn:0", "knn:1.5", "tree", "gnb:3", "ridge:x"] {
            assert!(bad.parse::<ModelSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn knn_votes_and_ties() {
        let d = data(&[(&[0.0], 0.0), (&[1.0], 1.0), (&[2.0], 1.0), (&[10.0], 2.0)]);
        let m = ModelSpec::Knn { k: 3 }.fit(&d).unwrap();
        assert_eq!(m.predict(&[0.4]).unwrap(), 1.0);
        let one = ModelSpec::Knn { k: 1 }.fit(&d).unwrap();
        assert_eq!(one.predict(&[9.0]).unwrap(), 2.0);
        // equal distance to indices 0 and 1: the lower index wins
        assert_eq!(one.predict(&[0.5]).unwrap(), 0.0);
        // 2 neighbours, one vote each: class of the nearer one
        let two = ModelSpec::Knn { k: 2 }.fit(&d).unwrap();
        assert_eq!(two.predict(&[0.9]).unwrap(), 1.0);
        assert_eq!(two.predict(&[0.1]).unwrap(), 0.0);
        assert!(ModelSpec::Knn { k: 9 }.fit(&d).is_err());
    }

    #[test]
    fn classifiers_learn_the_mixture() {
        let world = ShiftedGmm::unshifted(GmmParams::<f64>::five_class_world());
        let train = world.sample(3000, 1).unwrap();
        let test = world.sample(3000, 2).unwrap();
        for spec in [ModelSpec::Knn { k: 5 }, ModelSpec::logistic(), ModelSpec::GaussianNb] {
            let m = spec.fit(&train).unwrap();
            let err = crate::data::mean_loss(&m, &test, crate::data::LossKind::ZeroOne).unwrap();
            // the largest-weight class alone scores 0.65 error
            assert!(err < 0.4, "{spec}: {err}");
        }
    }

    #[test]
    fn logistic_probabilities_sum_to_one() {
        let d = data(&[(&[0.0, 1.0], 0.0), (&[1.0, 0.0], 1.0), (&[2.0, 2.0], 2.0)]);
        let m = Logistic::fit(&d, 0.1, 50).unwrap();
        let p = m.probabilities(&[0.3, 0.3]).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    fn normal_equation_oracle(d: &Dataset<f64>, lambda: f64) -> (Vec<f64>, f64) {
        // augmented design with an unpenalized intercept column
        let n = d.len();
        let p = d.dim();
        let x = DMatrix::from_fn(n, p + 1, |i, j| if j < p { d.samples()[i].features[j] } else { 1.0 });
        let y = DVector::from_iterator(n, d.labels());
        let mut pen = DMatrix::identity(p + 1, p + 1) * lambda;
        pen[(p, p)] = 0.0;
        let w = (x.transpose() * &x + pen).lu().solve(&(x.transpose() * y)).unwrap();
        (w.rows(0, p).iter().copied().collect(), w[p])
    }

    #[test]
    fn ridge_matches_normal_equations() {
        let world = crate::generator::LinearWorld {
            weights: vec![2.0, -1.0, 0.5],
            intercept: 3.0,
            noise: 0.3,
        };
        let d = world.sample(200, 8).unwrap();
        for lambda in [0.0, 0.7, 25.0] {
            let r = Ridge::fit(&d, lambda).unwrap();
            let (w, c) = normal_equation_oracle(&d, lambda);
            for (a, b) in r.coefficients.iter().zip(&w) {
                assert!((a - b).abs() < 1e-8, "{lambda}: {a} vs {b}");
            }
            assert!((r.intercept - c).abs() < 1e-8);
        }
        let flat = Ridge::fit(&d, 1e12).unwrap();
        let mean = d.labels().sum::<f64>() / d.len() as f64;
        assert!((flat.predict(&[0.0, 0.0, 0.0]).unwrap() - mean).abs() < 1e-3);
    }

    #[test]
    fn non_class_labels_are_rejected() {
        let d = data(&[(&[0.0], 0.5), (&[1.0], 1.0)]);
        assert!(ModelSpec::GaussianNb.fit(&d).is_err());
        assert!(ModelSpec::Ridge { lambda: 1.0 }.fit(&d).is_ok());
    }
}
