//! Linear heads over [`StateFeatures`]: a softmax policy and a per-item value
//! function, plus the frozen target copy used for bootstrapping.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::StateFeatures;
use crate::mdp::Item;

/// Dense row-major matrix. Rows index features, columns index items.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &Matrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    /// `self += scale * features ⊗ coeffs`.
    pub fn add_outer(&mut self, scale: f64, features: &StateFeatures, coeffs: &[f64]) {
        debug_assert_eq!(coeffs.len(), self.cols);
        for &(i, x) in features.nonzeros() {
            let s = scale * x;
            for (w, c) in self.row_mut(i).iter_mut().zip(coeffs) {
                *w += s * c;
            }
        }
    }

    /// `self[:, col] += scale * features`.
    pub fn add_to_column(&mut self, scale: f64, features: &StateFeatures, col: usize) {
        for &(i, x) in features.nonzeros() {
            let cols = self.cols;
            self.data[i * cols + col] += scale * x;
        }
    }

    /// `featuresᵀ · self`.
    pub fn left_mul(&self, features: &StateFeatures) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for &(i, x) in features.nonzeros() {
            for (o, w) in out.iter_mut().zip(self.row(i)) {
                *o += x * w;
            }
        }
        out
    }

    /// `featuresᵀ · self[:, col]`.
    pub fn column_dot(&self, features: &StateFeatures, col: usize) -> f64 {
        features
            .nonzeros()
            .iter()
            .map(|&(i, x)| x * self.get(i, col))
            .sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
    out
}

fn check_dim(features: &StateFeatures, rows: usize) -> Result<()> {
    if features.dim() != rows {
        return Err(Error::Shape {
            expected: rows,
            actual: features.dim(),
        });
    }
    Ok(())
}

fn check_action(action: Item, cols: usize) -> Result<usize> {
    let a = action.index();
    if a >= cols {
        return Err(Error::Index {
            index: a,
            limit: cols,
        });
    }
    Ok(a)
}

/// Softmax policy with logits `featuresᵀ · weights`. Used for the learned
/// policy and for the logging-policy estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSoftmaxPolicy {
    pub weights: Matrix,
}

impl LinearSoftmaxPolicy {
    /// Zero weights, i.e. the uniform policy.
    pub fn zeros(dim: usize, catalog_size: usize) -> Self {
        LinearSoftmaxPolicy {
            weights: Matrix::zeros(dim, catalog_size),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn catalog_size(&self) -> usize {
        self.weights.cols()
    }

    pub fn logits(&self, features: &StateFeatures) -> Result<Vec<f64>> {
        check_dim(features, self.dim())?;
        Ok(self.weights.left_mul(features))
    }

    pub fn probs(&self, features: &StateFeatures) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(features)?))
    }

    pub fn log_probs(&self, features: &StateFeatures) -> Result<Vec<f64>> {
        Ok(log_softmax(&self.logits(features)?))
    }

    pub fn log_prob(&self, features: &StateFeatures, action: Item) -> Result<f64> {
        let a = check_action(action, self.catalog_size())?;
        Ok(self.log_probs(features)?[a])
    }

    /// ∇_W log p(action | features) = features ⊗ (onehot(action) − p).
    pub fn log_prob_grad(&self, features: &StateFeatures, action: Item) -> Result<Matrix> {
        let a = check_action(action, self.catalog_size())?;
        let mut residual = self.probs(features)?;
        residual.iter_mut().for_each(|p| *p = -*p);
        residual[a] += 1.0;
        let mut grad = Matrix::zeros(self.dim(), self.catalog_size());
        grad.add_outer(1.0, features, &residual);
        Ok(grad)
    }
}

/// Per-item value `featuresᵀ · weights[:, a] + offset`.
///
/// `offset` is a learned intercept shared by all items. It starts at 0 and
/// is trained with the weights, so the head can express the overall value
/// level that the sparse, bias-free features cannot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearQFunction {
    pub weights: Matrix,
    #[serde(default)]
    pub offset: f64,
}

impl LinearQFunction {
    pub fn zeros(dim: usize, catalog_size: usize) -> Self {
        LinearQFunction {
            weights: Matrix::zeros(dim, catalog_size),
            offset: 0.0,
        }
    }

    /// Uniform noise in `[-scale, scale]`.
    pub fn noisy<R: Rng + ?Sized>(dim: usize, catalog_size: usize, scale: f64, rng: &mut R) -> Self {
        LinearQFunction {
            weights: Matrix::from_fn(dim, catalog_size, |_, _| rng.gen_range(-scale..=scale)),
            offset: 0.0,
        }
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn catalog_size(&self) -> usize {
        self.weights.cols()
    }

    pub fn values(&self, features: &StateFeatures) -> Result<Vec<f64>> {
        check_dim(features, self.dim())?;
        let mut v = self.weights.left_mul(features);
        v.iter_mut().for_each(|x| *x += self.offset);
        Ok(v)
    }

    pub fn value(&self, features: &StateFeatures, action: Item) -> Result<f64> {
        check_dim(features, self.dim())?;
        let a = check_action(action, self.catalog_size())?;
        Ok(self.weights.column_dot(features, a) + self.offset)
    }

    /// ∇_W Q(features, action): the features placed in column `action`. The
    /// derivative with respect to `offset` is always 1.
    pub fn q_grad(&self, features: &StateFeatures, action: Item) -> Result<Matrix> {
        check_dim(features, self.dim())?;
        let a = check_action(action, self.catalog_size())?;
        let mut grad = Matrix::zeros(self.dim(), self.catalog_size());
        grad.add_to_column(1.0, features, a);
        Ok(grad)
    }
}

/// Frozen copy of a value function, refreshed only by [`sync_target`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSnapshot {
    q: LinearQFunction,
    pub sync_interval: usize,
    syncs: usize,
}

impl TargetSnapshot {
    pub fn new(live: &LinearQFunction, sync_interval: usize) -> Self {
        TargetSnapshot {
            q: live.clone(),
            sync_interval,
            syncs: 0,
        }
    }

    pub fn q(&self) -> &LinearQFunction {
        &self.q
    }

    pub fn values(&self, features: &StateFeatures) -> Result<Vec<f64>> {
        self.q.values(features)
    }

    /// Number of syncs performed since creation.
    pub fn syncs(&self) -> usize {
        self.syncs
    }

    /// True when `step` (1-based count of completed updates) lands on a sync.
    pub fn due(&self, step: u64) -> bool {
        self.sync_interval > 0 && step.is_multiple_of(self.sync_interval as u64)
    }
}

pub fn sync_target(live: &LinearQFunction, target: &TargetSnapshot) -> TargetSnapshot {
    TargetSnapshot {
        q: live.clone(),
        sync_interval: target.sync_interval,
        syncs: target.syncs + 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_policy(rng: &mut ChaCha8Rng, dim: usize, n: usize) -> LinearSoftmaxPolicy {
        LinearSoftmaxPolicy {
            weights: Matrix::from_fn(dim, n, |_, _| rng.gen_range(-2.0..2.0)),
        }
    }

    fn random_features(rng: &mut ChaCha8Rng, dim: usize) -> StateFeatures {
        let v: Vec<f64> = (0..dim)
            .map(|_| if rng.gen_bool(0.5) { rng.gen_range(0.0..2.0) } else { 0.0 })
            .collect();
        StateFeatures::from_dense(&v)
    }

    #[test]
    fn zero_weights_give_uniform() {
        let p = LinearSoftmaxPolicy::zeros(6, 3);
        let probs = p.probs(&StateFeatures::from_dense(&[1.0, 0.0, 2.0, 0.0, 0.0, 1.0])).unwrap();
        for x in probs {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let logits = [0.3, -1.2, 4.0, 2.2];
        let shifted: Vec<f64> = logits.iter().map(|l| l + 123.4).collect();
        for (a, b) in softmax(&logits).iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn probs_match_naive_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_policy(&mut rng, 10, 5);
        let f = random_features(&mut rng, 10);
        let dense = f.to_dense();
        let naive: Vec<f64> = (0..5)
            .map(|a| (0..10).map(|i| dense[i] * p.weights.get(i, a)).sum::<f64>().exp())
            .collect();
        let z: f64 = naive.iter().sum();
        for (got, e) in p.probs(&f).unwrap().iter().zip(&naive) {
            assert!((got - e / z).abs() < 1e-13);
        }
    }

    #[test]
    fn shape_errors() {
        let p = LinearSoftmaxPolicy::zeros(6, 3);
        assert!(matches!(
            p.probs(&StateFeatures::zeros(4)),
            Err(Error::Shape { expected: 6, actual: 4 })
        ));
        assert!(matches!(
            p.log_prob_grad(&StateFeatures::zeros(6), Item(3)),
            Err(Error::Index { .. })
        ));
        let q = LinearQFunction::zeros(6, 3);
        assert!(q.values(&StateFeatures::zeros(5)).is_err());
    }

    #[test]
    fn one_hot_policy_has_zero_gradient() {
        let mut p = LinearSoftmaxPolicy::zeros(2, 3);
        p.weights.set(0, 1, 800.0);
        let f = StateFeatures::from_dense(&[1.0, 0.0]);
        let g = p.log_prob_grad(&f, Item(1)).unwrap();
        assert!(g.frobenius_norm() < 1e-300);
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_policy(&mut rng, 8, 6);
        let f = random_features(&mut rng, 8);
        let g = p.log_prob_grad(&f, Item(2)).unwrap();
        for r in 0..8 {
            assert!(g.row(r).iter().sum::<f64>().abs() < 1e-12);
        }
        let probs = p.probs(&f).unwrap();
        let dense = f.to_dense();
        for r in 0..8 {
            let expected = dense[r] * (1.0 - probs[2]);
            assert!((g.get(r, 2) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn q_coordinate_read() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = LinearQFunction::noisy(6, 3, 1.0, &mut rng);
        let zero = LinearQFunction::zeros(6, 3);
        assert_eq!(zero.values(&StateFeatures::one_hot(6, 2)).unwrap(), vec![0.0; 3]);
        for j in 0..6 {
            let f = StateFeatures::one_hot(6, j);
            for a in 0..3 {
                assert_eq!(q.value(&f, Item(a as u32)).unwrap(), q.weights.get(j, a));
            }
        }
        let g = q.q_grad(&StateFeatures::one_hot(6, 4), Item(1)).unwrap();
        assert_eq!(g.get(4, 1), 1.0);
        assert_eq!(g.frobenius_norm(), 1.0);
    }

    #[test]
    fn sync_is_a_snapshot() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut live = LinearQFunction::noisy(4, 3, 1e-3, &mut rng);
        let target = TargetSnapshot::new(&LinearQFunction::zeros(4, 3), 100);
        let target = sync_target(&live, &target);
        assert_eq!(target.q(), &live);
        live.weights.set(0, 0, 42.0);
        assert_ne!(target.q().weights.get(0, 0), 42.0);
        assert_eq!(target.syncs(), 1);
    }

    #[test]
    fn sync_schedule_counts() {
        let live = LinearQFunction::zeros(2, 2);
        let mut target = TargetSnapshot::new(&live, 100);
        for step in 1..=350u64 {
            if target.due(step) {
                target = sync_target(&live, &target);
            }
        }
        assert_eq!(target.syncs(), 3);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
