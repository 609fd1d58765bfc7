use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::features::StateFeatures;
use crate::mdp::Item;
use crate::models::{log_softmax, log_sum_exp, LinearQFunction, LinearSoftmaxPolicy, Matrix};

use super::{LearnerState, VRConfig};

/// One logged tuple with precomputed features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: StateFeatures,
    pub action: Item,
    /// Stored (nonpositive) reward.
    pub reward: f64,
    /// Next-state features; `None` at a terminal step.
    pub next: Option<StateFeatures>,
    /// Discounted raw return-to-go, used by policy gradient.
    pub ret: f64,
    /// Sample weight in batch means; 1 for logged data.
    pub weight: f64,
}

impl Sample {
    pub fn new(features: StateFeatures, action: Item, reward: f64, next: Option<StateFeatures>) -> Self {
        Sample {
            features,
            action,
            reward,
            next,
            ret: reward,
            weight: 1.0,
        }
    }
}

fn total_weight(batch: &[&Sample]) -> f64 {
    batch.iter().map(|s| s.weight).sum()
}

// ---------------------------------------------------------------------------
// Losses. Each `*_loss` is a function of the trained head only; everything
// passed alongside it (targets, weights, teacher distributions) is a constant.
// ---------------------------------------------------------------------------

/// Mean negative log-likelihood of the logged actions.
pub fn mle_loss(policy: &LinearSoftmaxPolicy, batch: &[&Sample]) -> Result<f64> {
    let mut loss = 0.0;
    for s in batch {
        loss -= s.weight * policy.log_prob(&s.features, s.action)?;
    }
    Ok(loss / total_weight(batch))
}

pub fn mle_loss_grad(policy: &LinearSoftmaxPolicy, batch: &[&Sample]) -> Result<(f64, Matrix)> {
    let w_total = total_weight(batch);
    let mut grad = Matrix::zeros(policy.dim(), policy.catalog_size());
    let mut loss = 0.0;
    for s in batch {
        let log_p = policy.log_probs(&s.features)?;
        let a = s.action.index();
        loss -= s.weight * log_p[a];
        let mut coeff: Vec<f64> = log_p.iter().map(|l| l.exp()).collect();
        coeff[a] -= 1.0;
        grad.add_outer(s.weight / w_total, &s.features, &coeff);
    }
    Ok((loss / w_total, grad))
}

/// Weighted squared error `Σ w_i (Q(s_i,a_i) − y_i)² / Σ sample weights`.
pub fn td_loss(q: &LinearQFunction, batch: &[&Sample], targets: &[f64], weights: &[f64]) -> Result<f64> {
    let mut loss = 0.0;
    for ((s, y), w) in batch.iter().zip(targets).zip(weights) {
        let e = q.value(&s.features, s.action)? - y;
        loss += s.weight * w * e * e;
    }
    Ok(loss / total_weight(batch))
}

/// Gradient of a value-head loss: weight matrix and scalar offset.
#[derive(Clone, Debug, PartialEq)]
pub struct QGrad {
    pub weights: Matrix,
    pub offset: f64,
}

pub fn td_loss_grad(
    q: &LinearQFunction,
    batch: &[&Sample],
    targets: &[f64],
    weights: &[f64],
) -> Result<(f64, QGrad)> {
    let w_total = total_weight(batch);
    let mut grad = QGrad {
        weights: Matrix::zeros(q.dim(), q.catalog_size()),
        offset: 0.0,
    };
    let mut loss = 0.0;
    for ((s, y), w) in batch.iter().zip(targets).zip(weights) {
        let e = q.value(&s.features, s.action)? - y;
        loss += s.weight * w * e * e;
        let c = 2.0 * s.weight * w * e / w_total;
        grad.weights.add_to_column(c, &s.features, s.action.index());
        grad.offset += c;
    }
    Ok((loss / w_total, grad))
}

/// `−Σ c_i log p(a_i|s_i) / Σ sample weights`, with `c_i` the constant
/// capped-weight × return coefficient.
pub fn pg_loss(policy: &LinearSoftmaxPolicy, batch: &[&Sample], coeffs: &[f64]) -> Result<f64> {
    let mut loss = 0.0;
    for (s, c) in batch.iter().zip(coeffs) {
        loss -= s.weight * c * policy.log_prob(&s.features, s.action)?;
    }
    Ok(loss / total_weight(batch))
}

pub fn pg_loss_grad(policy: &LinearSoftmaxPolicy, batch: &[&Sample], coeffs: &[f64]) -> Result<(f64, Matrix)> {
    let w_total = total_weight(batch);
    let mut grad = Matrix::zeros(policy.dim(), policy.catalog_size());
    let mut loss = 0.0;
    for (s, c) in batch.iter().zip(coeffs) {
        let log_p = policy.log_probs(&s.features)?;
        let a = s.action.index();
        loss -= s.weight * c * log_p[a];
        let mut coeff: Vec<f64> = log_p.iter().map(|l| c * l.exp()).collect();
        coeff[a] -= c;
        grad.add_outer(s.weight / w_total, &s.features, &coeff);
    }
    Ok((loss / w_total, grad))
}

/// Cross-entropy of the policy against per-state teacher distributions.
pub fn cross_entropy_loss(
    policy: &LinearSoftmaxPolicy,
    batch: &[&Sample],
    teachers: &[Vec<f64>],
) -> Result<f64> {
    let mut loss = 0.0;
    for (s, t) in batch.iter().zip(teachers) {
        let log_p = policy.log_probs(&s.features)?;
        loss -= s.weight * t.iter().zip(&log_p).map(|(ti, l)| ti * l).sum::<f64>();
    }
    Ok(loss / total_weight(batch))
}

/// Gradient `−mean features ⊗ (teacher − p)`; teachers need not sum to one.
pub fn cross_entropy_loss_grad(
    policy: &LinearSoftmaxPolicy,
    batch: &[&Sample],
    teachers: &[Vec<f64>],
) -> Result<(f64, Matrix)> {
    let w_total = total_weight(batch);
    let mut grad = Matrix::zeros(policy.dim(), policy.catalog_size());
    let mut loss = 0.0;
    for (s, t) in batch.iter().zip(teachers) {
        let log_p = policy.log_probs(&s.features)?;
        let mass: f64 = t.iter().sum();
        loss -= s.weight * t.iter().zip(&log_p).map(|(ti, l)| ti * l).sum::<f64>();
        let coeff: Vec<f64> = log_p
            .iter()
            .zip(t)
            .map(|(l, ti)| mass * l.exp() - ti)
            .collect();
        grad.add_outer(s.weight / w_total, &s.features, &coeff);
    }
    Ok((loss / w_total, grad))
}

// ---------------------------------------------------------------------------
// Posterior and importance weights.
// ---------------------------------------------------------------------------

/// `q ∝ exp(log_prior + values/α)`, normalized in log space.
pub fn posterior_from_log(log_prior: &[f64], values: &[f64], alpha: f64) -> Vec<f64> {
    let logits: Vec<f64> = log_prior
        .iter()
        .zip(values)
        .map(|(lp, v)| lp + v / alpha)
        .collect();
    log_softmax(&logits).into_iter().map(f64::exp).collect()
}

/// Log of the posterior, same construction as [`posterior_from_log`].
pub fn log_posterior_from_log(log_prior: &[f64], values: &[f64], alpha: f64) -> Vec<f64> {
    let logits: Vec<f64> = log_prior
        .iter()
        .zip(values)
        .map(|(lp, v)| lp + v / alpha)
        .collect();
    log_softmax(&logits)
}

/// Posterior policy `q(·|s) ∝ p_θ(·|s) · exp(Q(s,·)/α)`.
pub fn posterior_q(
    policy: &LinearSoftmaxPolicy,
    q: &LinearQFunction,
    features: &StateFeatures,
    alpha: f64,
) -> Result<Vec<f64>> {
    Ok(posterior_from_log(
        &policy.log_probs(features)?,
        &q.values(features)?,
        alpha,
    ))
}

/// `α · logsumexp(log p_θ + Q̄/α)`, the exact expectation of
/// `Q̄ + α log p_θ − α log q̄` under the posterior built from `Q̄`.
pub fn soft_value(log_prior: &[f64], values: &[f64], alpha: f64) -> f64 {
    let logits: Vec<f64> = log_prior
        .iter()
        .zip(values)
        .map(|(lp, v)| lp + v / alpha)
        .collect();
    alpha * log_sum_exp(&logits)
}

pub fn importance_weight(numerator: f64, logging_prob: f64, floor: f64) -> f64 {
    numerator / logging_prob.max(floor)
}

pub fn capped_weight(numerator: f64, logging_prob: f64, floor: f64, cap: f64) -> f64 {
    importance_weight(numerator, logging_prob, floor).min(cap)
}

fn apply(weights: &mut Matrix, lr: f64, grad: &Matrix) {
    weights.axpy(-lr, grad);
}

fn apply_q(q: &mut LinearQFunction, lr: f64, grad: &QGrad) {
    q.weights.axpy(-lr, &grad.weights);
    q.offset -= lr * grad.offset;
}

// ---------------------------------------------------------------------------
// Steps.
// ---------------------------------------------------------------------------

/// One ascent step on the mean log-likelihood of the logged actions.
/// Returns the loss before the update.
pub fn mle_step(policy: &mut LinearSoftmaxPolicy, batch: &[&Sample], lr: f64) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let (loss, grad) = mle_loss_grad(policy, batch)?;
    apply(&mut policy.weights, lr, &grad);
    Ok(loss)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DqnVariant {
    /// Max-operator bootstrap from the target head.
    Standard,
    /// Discount forced to zero: plain reward regression.
    OneStep,
    /// Standard, plus one uniformly drawn unseen item per tuple scored at a
    /// raw reward of −1.
    NegativeSampling,
}

/// Raw reward given to sampled negatives.
pub const NEGATIVE_RAW_REWARD: f64 = -1.0;

/// Targets `r + γ · max_a' Q̄(s', a')`, bootstrap dropped at terminals.
pub fn dqn_targets(state: &LearnerState, batch: &[&Sample], gamma: f64) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|s| match (&s.next, gamma) {
            (Some(next), g) if g != 0.0 => {
                let v = state.target.values(next)?;
                Ok(s.reward + g * v.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            }
            _ => Ok(s.reward),
        })
        .collect()
}

/// Negative tuples for DQN-NS: for each positive, an item that is neither in
/// the history nor the logged action. The user did not click, so the next
/// state repeats the current one.
pub fn negative_samples<R: Rng + ?Sized>(
    batch: &[&Sample],
    catalog_size: usize,
    shift: f64,
    rng: &mut R,
) -> Vec<Sample> {
    let mut out = Vec::with_capacity(batch.len());
    for s in batch {
        let seen = |i: usize| i == s.action.index() || s.features.get(i) != 0.0;
        let candidates: Vec<usize> = (0..catalog_size).filter(|&i| !seen(i)).collect();
        if candidates.is_empty() {
            continue;
        }
        let item = candidates[rng.gen_range(0..candidates.len())];
        out.push(Sample {
            features: s.features.clone(),
            action: Item::from(item),
            reward: NEGATIVE_RAW_REWARD - shift,
            next: s.next.as_ref().map(|_| s.features.clone()),
            ret: NEGATIVE_RAW_REWARD,
            weight: s.weight,
        });
    }
    out
}

/// One descent step of the TD regression on the live value head.
pub fn dqn_step<R: Rng + ?Sized>(
    state: &mut LearnerState,
    batch: &[&Sample],
    config: &VRConfig,
    variant: DqnVariant,
    shift: f64,
    rng: &mut R,
) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let gamma = match variant {
        DqnVariant::OneStep => 0.0,
        _ => config.gamma,
    };
    let negatives;
    let mut full: Vec<&Sample> = batch.to_vec();
    if variant == DqnVariant::NegativeSampling {
        negatives = negative_samples(batch, state.catalog_size(), shift, rng);
        full.extend(negatives.iter());
    }
    let targets = dqn_targets(state, &full, gamma)?;
    let ones = vec![1.0; full.len()];
    let (loss, grad) = td_loss_grad(&state.q, &full, &targets, &ones)?;
    apply_q(&mut state.q, config.lr_q, &grad);
    state.tick();
    Ok(loss)
}

/// Capped importance weights `min(p_θ/max(p_ψ, floor), cap)` times the
/// return-to-go.
pub fn pg_coefficients(state: &LearnerState, batch: &[&Sample], config: &VRConfig) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|s| {
            let pt = state.policy.log_prob(&s.features, s.action)?.exp();
            let pb = state.logging.log_prob(&s.features, s.action)?.exp();
            Ok(capped_weight(pt, pb, config.is_floor, config.cap) * s.ret)
        })
        .collect()
}

/// One ascent step of capped off-policy policy gradient. `batch` holds the
/// steps of whole trajectories.
pub fn pg_step(state: &mut LearnerState, batch: &[&Sample], config: &VRConfig) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let coeffs = pg_coefficients(state, batch, config)?;
    let (loss, grad) = pg_loss_grad(&state.policy, batch, &coeffs)?;
    apply(&mut state.policy.weights, config.lr_policy, &grad);
    Ok(loss)
}

/// `q(a|s) / max(p_ψ(a|s), floor)` per tuple, from the live value head; all
/// ones when `weighted` is false.
pub fn vr_weights(state: &LearnerState, batch: &[&Sample], config: &VRConfig, weighted: bool) -> Result<Vec<f64>> {
    if !weighted {
        return Ok(vec![1.0; batch.len()]);
    }
    batch
        .iter()
        .map(|s| {
            let q = posterior_q(&state.policy, &state.q, &s.features, config.alpha)?;
            let pb = state.logging.log_prob(&s.features, s.action)?.exp();
            Ok(importance_weight(q[s.action.index()], pb, config.is_floor))
        })
        .collect()
}

/// Bandit E-step: importance-weighted reward regression.
pub fn vr_bandit_estep(state: &mut LearnerState, batch: &[&Sample], config: &VRConfig, weighted: bool) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let weights = vr_weights(state, batch, config, weighted)?;
    let targets: Vec<f64> = batch.iter().map(|s| s.reward).collect();
    let (loss, grad) = td_loss_grad(&state.q, batch, &targets, &weights)?;
    apply_q(&mut state.q, config.lr_q, &grad);
    state.tick();
    Ok(loss)
}

/// Bootstrap term `E_{a'~q̄}[Q̄(s',a') + α log p_θ(a'|s') − α log q̄(a'|s')]`
/// with `q̄` built from the target head. Exact over the catalog, or from a
/// single draw `a' ~ q̄`.
pub fn soft_bootstrap<R: Rng + ?Sized>(
    state: &LearnerState,
    next: &StateFeatures,
    alpha: f64,
    exact: bool,
    rng: &mut R,
) -> Result<f64> {
    let log_p = state.policy.log_probs(next)?;
    let values = state.target.values(next)?;
    let log_q = log_posterior_from_log(&log_p, &values, alpha);
    if exact {
        Ok(log_q
            .iter()
            .zip(&values)
            .zip(&log_p)
            .map(|((lq, v), lp)| lq.exp() * (v + alpha * lp - alpha * lq))
            .sum())
    } else {
        let probs: Vec<f64> = log_q.iter().map(|l| l.exp()).collect();
        let a = WeightedIndex::new(&probs)
            .map_err(|e| crate::error::Error::Numeric(format!("posterior sampling: {e}")))?
            .sample(rng);
        Ok(values[a] + alpha * log_p[a] - alpha * log_q[a])
    }
}

pub fn vr_sequential_targets<R: Rng + ?Sized>(
    state: &LearnerState,
    batch: &[&Sample],
    config: &VRConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let exact = config.exact(state.catalog_size());
    batch
        .iter()
        .map(|s| match &s.next {
            Some(next) if config.gamma != 0.0 => {
                Ok(s.reward + config.gamma * soft_bootstrap(state, next, config.alpha, exact, rng)?)
            }
            _ => Ok(s.reward),
        })
        .collect()
}

/// Sequential E-step: importance-weighted TD regression toward the soft
/// bootstrap target.
pub fn vr_sequential_estep<R: Rng + ?Sized>(
    state: &mut LearnerState,
    batch: &[&Sample],
    config: &VRConfig,
    weighted: bool,
    rng: &mut R,
) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let weights = vr_weights(state, batch, config, weighted)?;
    let targets = vr_sequential_targets(state, batch, config, rng)?;
    let (loss, grad) = td_loss_grad(&state.q, batch, &targets, &weights)?;
    apply_q(&mut state.q, config.lr_q, &grad);
    state.tick();
    Ok(loss)
}

/// Teacher distributions `β q + (1 − β) p_ψ`, exact or as a two-draw
/// estimate placing mass β and 1 − β on the sampled items.
pub fn mstep_teachers<R: Rng + ?Sized>(
    state: &LearnerState,
    batch: &[&Sample],
    config: &VRConfig,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let exact = config.exact(state.catalog_size());
    let beta = config.beta;
    batch
        .iter()
        .map(|s| {
            let q = posterior_q(&state.policy, &state.q, &s.features, config.alpha)?;
            let pb = state.logging.probs(&s.features)?;
            if exact {
                Ok(q.iter().zip(&pb).map(|(a, b)| beta * a + (1.0 - beta) * b).collect())
            } else {
                let mut t = vec![0.0; q.len()];
                let sample = |p: &[f64], rng: &mut R| -> Result<usize> {
                    Ok(WeightedIndex::new(p)
                        .map_err(|e| crate::error::Error::Numeric(format!("teacher sampling: {e}")))?
                        .sample(rng))
                };
                t[sample(&q, rng)?] += beta;
                t[sample(&pb, rng)?] += 1.0 - beta;
                Ok(t)
            }
        })
        .collect()
}

/// M-step: ascent on `β E_q[log p_θ] + (1 − β) E_{p_ψ}[log p_θ]`.
pub fn vr_mstep<R: Rng + ?Sized>(
    state: &mut LearnerState,
    batch: &[&Sample],
    config: &VRConfig,
    rng: &mut R,
) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let teachers = mstep_teachers(state, batch, config, rng)?;
    let (loss, grad) = cross_entropy_loss_grad(&state.policy, batch, &teachers)?;
    apply(&mut state.policy.weights, config.lr_policy, &grad);
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Featurizer;
    use crate::learners::Algo;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state(n: usize) -> LearnerState {
        let fz = Featurizer::new(n, 0.5).unwrap();
        LearnerState::init(Algo::Vr, fz, &VRConfig::default(), 1)
    }

    #[test]
    fn posterior_closed_form() {
        let q = posterior_from_log(&[0.5f64.ln(), 0.5f64.ln()], &[0.0, 3f64.ln()], 1.0);
        assert!((q[0] - 0.25).abs() < 1e-15 && (q[1] - 0.75).abs() < 1e-15);
        let prior = [0.1f64, 0.6, 0.3];
        let lp: Vec<f64> = prior.iter().map(|p| p.ln()).collect();
        let q = posterior_from_log(&lp, &[-2.0; 3], 0.7);
        for (a, b) in q.iter().zip(prior) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn posterior_large_alpha_tends_to_prior() {
        let prior = [0.2f64, 0.5, 0.3];
        let lp: Vec<f64> = prior.iter().map(|p| p.ln()).collect();
        let q = posterior_from_log(&lp, &[-3.0, 0.0, -10.0], 1e6);
        let tv: f64 = q.iter().zip(prior).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
        assert!(tv < 1e-5);
    }

    #[test]
    fn pg_weight_cap() {
        assert_eq!(capped_weight(0.5, 0.01, 1e-6, 10.0), 10.0);
        assert_eq!(capped_weight(0.3, 0.3, 1e-6, 1.0), 1.0);
        assert_eq!(importance_weight(0.5, 0.0, 1e-6), 0.5e6);
    }

    #[test]
    fn matched_policies_give_unit_pg_weights() {
        let mut st = state(4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        st.policy.weights = Matrix::from_fn(8, 4, |_, _| rng.gen_range(-1.0..1.0));
        st.logging = st.policy.clone();
        let cfg = VRConfig {
            cap: 1.0,
            ..VRConfig::default()
        };
        let s = Sample {
            ret: 1.0,
            ..Sample::new(StateFeatures::one_hot(8, 2), Item(1), 0.0, None)
        };
        let c = pg_coefficients(&st, &[&s], &cfg).unwrap();
        assert_eq!(c, vec![1.0]);
    }

    #[test]
    fn negatives_avoid_history_and_action() {
        let f = StateFeatures::from_dense(&[0.0, 1.0, 0.5, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let s = Sample::new(f, Item(3), -4.0, Some(StateFeatures::zeros(8)));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let neg = negative_samples(&[&s], 4, 5.0, &mut rng);
            assert_eq!(neg.len(), 1);
            assert_eq!(neg[0].action, Item(0));
            assert_eq!(neg[0].reward, -6.0);
            assert_eq!(neg[0].next.as_ref(), Some(&s.features));
        }
    }

    #[test]
    fn sampled_bootstrap_equals_exact() {
        let mut st = state(6);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        st.policy.weights = Matrix::from_fn(12, 6, |_, _| rng.gen_range(-1.0..1.0));
        st.q.weights = Matrix::from_fn(12, 6, |_, _| rng.gen_range(-3.0..0.0));
        st.target = crate::models::sync_target(&st.q, &st.target);
        let f = StateFeatures::from_dense(&[0.3, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let exact = soft_bootstrap(&st, &f, 0.7, true, &mut rng).unwrap();
        for _ in 0..20 {
            let sampled = soft_bootstrap(&st, &f, 0.7, false, &mut rng).unwrap();
            assert!((sampled - exact).abs() < 1e-10);
        }
    }
}
