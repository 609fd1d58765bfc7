//! Brute-force reference computations used to check the learners.
//!
//! Everything here sums directly over the finite action set in double
//! precision. Where an exponential must be stabilized, the largest value is
//! factored out of the sum; log-sum-exp over log-probabilities is never used,
//! so these routines do not share a code path with the learners.

use rand::Rng;

use crate::error::{Error, Result};

pub const VI_MAX_ITERS: usize = 100_000;
pub const VI_TOL: f64 = 1e-10;

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Validation(format!("{what} is empty")));
    }
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Validation(format!("{what} has negative or non-finite entries")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

fn max_of(xs: impl Iterator<Item = f64>) -> f64 {
    xs.fold(f64::NEG_INFINITY, f64::max)
}

/// `prior · exp(values/α)`, normalized by direct summation.
pub fn exact_posterior(prior: &[f64], values: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_distribution(prior, "prior")?;
    if values.len() != prior.len() {
        return Err(Error::Shape {
            expected: prior.len(),
            actual: values.len(),
        });
    }
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("alpha must be > 0, got {alpha}")));
    }
    let top = max_of(prior.iter().zip(values).filter(|(p, _)| **p > 0.0).map(|(_, v)| *v));
    let unnorm: Vec<f64> = prior
        .iter()
        .zip(values)
        .map(|(p, v)| p * ((v - top) / alpha).exp())
        .collect();
    let z: f64 = unnorm.iter().sum();
    Ok(unnorm.into_iter().map(|u| u / z).collect())
}

/// Finite MDP with nonpositive rewards.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMDP {
    pub num_states: usize,
    pub num_actions: usize,
    /// `P(s'|s,a)` at `[(s * A + a) * S + s']`.
    pub transitions: Vec<f64>,
    /// `r(s,a)` at `[s * A + a]`.
    pub rewards: Vec<f64>,
    pub initial: Vec<f64>,
    pub gamma: f64,
}

impl TabularMDP {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        initial: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        let mdp = TabularMDP {
            num_states,
            num_actions,
            transitions,
            rewards,
            initial,
            gamma,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn validate(&self) -> Result<()> {
        let (s, a) = (self.num_states, self.num_actions);
        if s == 0 || s > 16 || a == 0 || a > 8 {
            return Err(Error::Validation(format!(
                "tabular MDP limited to 16 states and 8 actions, got {s}x{a}"
            )));
        }
        if self.transitions.len() != s * a * s || self.rewards.len() != s * a {
            return Err(Error::Validation("tabular MDP tensor shapes are wrong".into()));
        }
        for row in self.transitions.chunks(s) {
            check_distribution(row, "transition row")?;
        }
        check_distribution(&self.initial, "initial distribution")?;
        if self.rewards.iter().any(|r| !r.is_finite() || *r > 0.0) {
            return Err(Error::Validation("rewards must be finite and nonpositive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Validation(format!("gamma {} outside [0,1]", self.gamma)));
        }
        Ok(())
    }

    /// Random MDP with Dirichlet-like rows and rewards in `[-1, 0]`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, num_states: usize, num_actions: usize, gamma: f64) -> Self {
        let mut transitions = Vec::with_capacity(num_states * num_actions * num_states);
        for _ in 0..num_states * num_actions {
            let raw: Vec<f64> = (0..num_states).map(|_| -rng.gen::<f64>().max(1e-12).ln()).collect();
            let z: f64 = raw.iter().sum();
            transitions.extend(raw.iter().map(|x| x / z));
        }
        let rewards = (0..num_states * num_actions).map(|_| -rng.gen::<f64>()).collect();
        let mut initial = vec![0.0; num_states];
        initial[0] = 1.0;
        TabularMDP {
            num_states,
            num_actions,
            transitions,
            rewards,
            initial,
            gamma,
        }
    }

    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transitions[(s * self.num_actions + a) * self.num_states + next]
    }

    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.num_actions + a]
    }

    /// One backup `r + γ Σ P(s'|s,a) V(s')` for every pair.
    pub fn backup(&self, next_values: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_states * self.num_actions);
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let ev: f64 = (0..self.num_states).map(|n| self.p(s, a, n) * next_values[n]).sum();
                out.push(self.r(s, a) + self.gamma * ev);
            }
        }
        out
    }

    pub fn hard_state_values(&self, q: &[f64]) -> Vec<f64> {
        q.chunks(self.num_actions).map(|row| max_of(row.iter().copied())).collect()
    }

    /// `α log Σ_a p(a|s) exp(Q(s,a)/α)` per state, with the largest supported
    /// value factored out.
    pub fn soft_state_values(&self, q: &[f64], prior: &[Vec<f64>], alpha: f64) -> Vec<f64> {
        q.chunks(self.num_actions)
            .zip(prior)
            .map(|(row, p)| {
                let top = max_of(row.iter().zip(p).filter(|(_, pa)| **pa > 0.0).map(|(v, _)| *v));
                let sum: f64 = row
                    .iter()
                    .zip(p)
                    .map(|(v, pa)| pa * ((v - top) / alpha).exp())
                    .sum();
                top + alpha * sum.ln()
            })
            .collect()
    }

    pub fn hard_residual(&self, q: &[f64]) -> f64 {
        sup_diff(q, &self.backup(&self.hard_state_values(q)))
    }

    pub fn soft_residual(&self, q: &[f64], prior: &[Vec<f64>], alpha: f64) -> f64 {
        sup_diff(q, &self.backup(&self.soft_state_values(q, prior, alpha)))
    }
}

pub fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn iterate(mdp: &TabularMDP, tol: f64, mut values: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Vec<f64>> {
    if !(mdp.gamma < 1.0) {
        return Err(Error::Numeric("value iteration needs gamma < 1".into()));
    }
    let mut q = vec![0.0; mdp.num_states * mdp.num_actions];
    for _ in 0..VI_MAX_ITERS {
        let next = mdp.backup(&values(&q));
        let delta = sup_diff(&q, &next);
        q = next;
        if delta < tol {
            return Ok(q);
        }
    }
    Err(Error::Numeric(format!(
        "value iteration did not reach tol {tol} in {VI_MAX_ITERS} sweeps"
    )))
}

/// Optimal Q under the max-operator Bellman backup.
pub fn hard_value_iteration(mdp: &TabularMDP, tol: f64) -> Result<Vec<f64>> {
    mdp.validate()?;
    iterate(mdp, tol, |q| mdp.hard_state_values(q))
}

/// Fixed point of `Q(s,a) = r(s,a) + γ Σ P(s'|s,a) α log Σ_a' p(a'|s') exp(Q(s',a')/α)`.
pub fn soft_value_iteration(mdp: &TabularMDP, prior: &[Vec<f64>], alpha: f64, tol: f64) -> Result<Vec<f64>> {
    mdp.validate()?;
    if prior.len() != mdp.num_states {
        return Err(Error::Shape {
            expected: mdp.num_states,
            actual: prior.len(),
        });
    }
    for p in prior {
        check_distribution(p, "prior policy")?;
    }
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("alpha must be > 0, got {alpha}")));
    }
    iterate(mdp, tol, |q| mdp.soft_state_values(q, prior, alpha))
}

/// Natural-log KL divergence; terms with `q = 0` contribute nothing.
pub fn kl(q: &[f64], p: &[f64]) -> f64 {
    q.iter()
        .zip(p)
        .filter(|(qa, _)| **qa > 0.0)
        .map(|(qa, pa)| qa * (qa / pa).ln())
        .sum()
}

/// `log Σ_a p(a) exp(r(a)/α)`, the log-marginal likelihood of optimality.
pub fn log_marginal(prior: &[f64], rewards: &[f64], alpha: f64) -> f64 {
    prior
        .iter()
        .zip(rewards)
        .map(|(p, r)| p * (r / alpha).exp())
        .sum::<f64>()
        .ln()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Elbo {
    /// `Σ q (r/α + log p − log q)`.
    pub value: f64,
    /// `E_q[r]/α`.
    pub expected_reward: f64,
    /// `KL(q ‖ p)`.
    pub kl: f64,
}

impl Elbo {
    /// The reward-minus-KL form.
    pub fn decomposed(&self) -> f64 {
        self.expected_reward - self.kl
    }

    pub fn forms_agree(&self, tol: f64) -> bool {
        (self.value - self.decomposed()).abs() <= tol
    }
}

pub fn elbo(prior: &[f64], q: &[f64], rewards: &[f64], alpha: f64) -> Result<Elbo> {
    check_distribution(prior, "prior")?;
    check_distribution(q, "variational distribution")?;
    let mut value = 0.0;
    let mut expected_reward = 0.0;
    for ((p, qa), r) in prior.iter().zip(q).zip(rewards) {
        if *qa > 0.0 {
            if *p == 0.0 {
                return Err(Error::Domain("q puts mass where the prior has none".into()));
            }
            value += qa * (r / alpha + p.ln() - qa.ln());
            expected_reward += qa * r / alpha;
        }
    }
    Ok(Elbo {
        value,
        expected_reward,
        kl: kl(q, prior),
    })
}

/// Both sides of the overestimation inequality:
/// `Σ_a softmax(log p + ε/α)_a · ε_a ≤ max_a ε_a`.
pub fn overestimation_lemma_check(prior: &[f64], errors: &[f64], alpha: f64) -> Result<(f64, f64)> {
    let weights = exact_posterior(prior, errors, alpha)?;
    let weighted: f64 = weights.iter().zip(errors).map(|(w, e)| w * e).sum();
    let max = max_of(errors.iter().copied());
    Ok((weighted, max))
}

/// Rényi divergence of order `order = λ + 1`, in bits:
/// `(1/λ) log₂ Σ q^(λ+1) p^(−λ)`.
pub fn renyi_divergence(q: &[f64], p: &[f64], order: f64) -> Result<f64> {
    let lambda = order - 1.0;
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("order must exceed 1, got {order}")));
    }
    let mut sum = 0.0;
    for (qa, pa) in q.iter().zip(p) {
        if *qa > 0.0 {
            if *pa <= 0.0 {
                return Err(Error::Domain("q is not absolutely continuous w.r.t. p".into()));
            }
            sum += qa.powf(order) * pa.powf(-lambda);
        }
    }
    Ok(sum.log2() / lambda)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarianceBound {
    pub empirical_variance: f64,
    pub bound: f64,
    pub divergence: f64,
}

impl VarianceBound {
    pub fn holds(&self, tol: f64) -> bool {
        self.empirical_variance <= self.bound + tol
    }
}

/// Exact `Var_{a~p}[w(a) L(a)]` with `w = q/p`, against
/// `d (E_p[wL])^(1−1/λ) (Σ L)^(1+1/λ) − (E_p[wL])²` where `d = 2^D_{λ+1}(q‖p)`.
pub fn variance_bound_check(q: &[f64], p: &[f64], losses: &[f64], lambda: f64) -> Result<VarianceBound> {
    if losses.iter().any(|l| *l < 0.0) {
        return Err(Error::Domain("losses must be nonnegative".into()));
    }
    let divergence = renyi_divergence(q, p, lambda + 1.0)?;
    let d = 2f64.powf(divergence);
    let mut mean = 0.0;
    let mut second = 0.0;
    for ((qa, pa), l) in q.iter().zip(p).zip(losses) {
        if *pa > 0.0 {
            let wl = qa / pa * l;
            mean += pa * wl;
            second += pa * wl * wl;
        }
    }
    let total: f64 = losses.iter().sum();
    let bound = d * mean.powf(1.0 - 1.0 / lambda) * total.powf(1.0 + 1.0 / lambda) - mean * mean;
    Ok(VarianceBound {
        empirical_variance: second - mean * mean,
        bound,
        divergence,
    })
}

/// Random point in the interior of the simplex.
pub fn random_distribution<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -rng.gen::<f64>().max(1e-12).ln()).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / z).collect()
}
