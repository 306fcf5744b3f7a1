//! Slow, independent reference implementations used to check the fast paths.
//!
//! Nothing here shares code with the modules it checks beyond plain data
//! types. Compiled for unit tests and behind the `oracles` feature for the
//! integration and acceptance suites.

use crate::domain::AnomalyFlag;
use crate::dqn::{Action, ComplianceState, MdpConfig, QTable, RiskBucket, N_ACTIONS, N_STATES};

/// Gaussian kernel written out directly.
pub fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d).exp()
}

/// Euclidean projection onto `{0 ≤ αᵢ ≤ c, Σα = 1}` by bisection on the shift.
pub fn project_capped_simplex(v: &[f64], c: f64) -> Vec<f64> {
    let mass = |tau: f64| v.iter().map(|x| (x - tau).clamp(0.0, c)).sum::<f64>();
    let mut lo = v.iter().copied().fold(f64::INFINITY, f64::min) - c - 1.0;
    let mut hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = 0.5 * (lo + hi);
    v.iter().map(|x| (x - tau).clamp(0.0, c)).collect()
}

/// One-class dual solved by accelerated projected gradient.
#[derive(Clone, Debug)]
pub struct OracleSvm {
    pub points: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
    pub rho: f64,
    pub gamma: f64,
}

impl OracleSvm {
    pub fn train(points: &[Vec<f64>], nu: f64, gamma: f64, iterations: usize) -> Self {
        let n = points.len();
        let c = 1.0 / (nu * n as f64);
        let k: Vec<Vec<f64>> = points.iter().map(|a| points.iter().map(|b| rbf(a, b, gamma)).collect()).collect();
        // Largest absolute row sum bounds the top eigenvalue.
        let lipschitz = k.iter().map(|row| row.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        let step = 1.0 / lipschitz;
        let grad = |a: &[f64]| -> Vec<f64> { k.iter().map(|row| row.iter().zip(a).map(|(x, y)| x * y).sum()).collect() };

        let mut alpha = project_capped_simplex(&vec![1.0 / n as f64; n], c);
        let mut y = alpha.clone();
        let mut t = 1.0f64;
        for _ in 0..iterations {
            let g = grad(&y);
            let stepped: Vec<f64> = y.iter().zip(&g).map(|(a, g)| a - step * g).collect();
            let next = project_capped_simplex(&stepped, c);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let momentum = (t - 1.0) / t_next;
            y = next.iter().zip(&alpha).map(|(a, prev)| a + momentum * (a - prev)).collect();
            alpha = next;
            t = t_next;
        }

        let g = grad(&alpha);
        let tol = 1e-6 * c;
        let free: Vec<f64> = (0..n).filter(|&i| alpha[i] > tol && alpha[i] < c - tol).map(|i| g[i]).collect();
        let rho = if free.is_empty() {
            let at_zero = (0..n).filter(|&i| alpha[i] <= tol).map(|i| g[i]).fold(f64::INFINITY, f64::min);
            let at_cap = (0..n).filter(|&i| alpha[i] >= c - tol).map(|i| g[i]).fold(f64::NEG_INFINITY, f64::max);
            match (at_zero.is_finite(), at_cap.is_finite()) {
                (true, true) => 0.5 * (at_zero + at_cap),
                (false, true) => at_cap,
                (true, false) => at_zero,
                (false, false) => 0.0,
            }
        } else {
            free.iter().sum::<f64>() / free.len() as f64
        };
        Self { points: points.to_vec(), alphas: alpha, rho, gamma }
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        self.points.iter().zip(&self.alphas).map(|(p, a)| a * rbf(p, x, self.gamma)).sum::<f64>() - self.rho
    }

    pub fn objective(&self) -> f64 {
        let mut total = 0.0;
        for (i, a) in self.points.iter().enumerate() {
            for (j, b) in self.points.iter().enumerate() {
                total += self.alphas[i] * self.alphas[j] * rbf(a, b, self.gamma);
            }
        }
        0.5 * total
    }
}

/// Dual objective `½ αᵀKα` for an arbitrary coefficient vector.
pub fn svm_dual_objective(points: &[Vec<f64>], alphas: &[f64], gamma: f64) -> f64 {
    let mut total = 0.0;
    for (i, a) in points.iter().enumerate() {
        for (j, b) in points.iter().enumerate() {
            total += alphas[i] * alphas[j] * rbf(a, b, gamma);
        }
    }
    0.5 * total
}

/// Optimal action values of the simulated workflow, computed in closed form.
///
/// Episodes end after a fixed number of cases. The case stream is
/// stationary, so the fixed horizon is equivalent to a per-step continuation
/// probability of `(L − 1)/L`, which is what a time-unaware tabular learner
/// sees in its terminal flags.
pub fn value_iteration(mdp: &MdpConfig, gamma: f64, tol: f64) -> QTable {
    let rw = &mdp.rewards;
    let p_violation = |s: ComplianceState| {
        let base = match s.risk {
            RiskBucket::Low => mdp.p_violation[0],
            RiskBucket::Med => mdp.p_violation[1],
            RiskBucket::High => mdp.p_violation[2],
        };
        let bonus = if s.anomaly == AnomalyFlag::Outlier { mdp.outlier_bonus } else { 0.0 };
        (base + bonus).min(mdp.p_violation_cap)
    };
    let expected_reward = |s: ComplianceState, a: Action| {
        let p = p_violation(s);
        match a {
            Action::AutoApprove => (1.0 - p) * rw.approve_compliant + p * rw.approve_violation,
            Action::Reject => p * rw.reject_violation + (1.0 - p) * rw.reject_compliant,
            Action::Escalate => rw.escalate,
        }
    };
    // P(s' | a): next case drawn independently, queue depends on the action.
    let next_prob = |a: Action, s2: ComplianceState| {
        let risk = match s2.risk {
            RiskBucket::Low => mdp.risk_mix[0],
            RiskBucket::Med => mdp.risk_mix[1],
            RiskBucket::High => mdp.risk_mix[2],
        };
        let anomaly = if s2.anomaly == AnomalyFlag::Outlier { mdp.p_outlier } else { 1.0 - mdp.p_outlier };
        let heavy = if a == Action::Escalate { mdp.p_heavy_after_escalate } else { mdp.p_heavy_after_other };
        let queue = if s2.queue == crate::dqn::QueueLoad::Heavy { heavy } else { 1.0 - heavy };
        risk * anomaly * queue
    };
    let states: Vec<ComplianceState> = (0..N_STATES).map(ComplianceState::from_index).collect();
    let actions = [Action::AutoApprove, Action::Escalate, Action::Reject];
    let cont = (mdp.episode_len as f64 - 1.0) / mdp.episode_len as f64;

    let mut q = [[0.0f64; N_ACTIONS]; N_STATES];
    loop {
        let v: Vec<f64> = q.iter().map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
        let mut next = [[0.0f64; N_ACTIONS]; N_STATES];
        for (si, &s) in states.iter().enumerate() {
            for (ai, &a) in actions.iter().enumerate() {
                let future: f64 = states.iter().enumerate().map(|(j, &s2)| next_prob(a, s2) * v[j]).sum();
                next[si][ai] = expected_reward(s, a) + gamma * cont * future;
            }
        }
        let delta = next.iter().flatten().zip(q.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        q = next;
        if delta < tol {
            break;
        }
    }
    QTable { values: q }
}

/// Nearest-rank percentile by sorting a copy.
pub fn sorted_percentile(samples: &[f64], p: f64) -> f64 {
    let mut v = samples.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

/// Fraction of correct predictions from explicit confusion counts.
pub fn confusion_accuracy(predicted: &[bool], actual: &[bool]) -> f64 {
    let (mut tp, mut tn, mut fp, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &a) in predicted.iter().zip(actual) {
        match (p, a) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    (tp + tn) as f64 / (tp + tn + fp + fn_) as f64
}

/// ROC-AUC as the probability that a random positive outscores a random negative.
pub fn pairwise_auc(positive_scores: &[f64], negative_scores: &[f64]) -> f64 {
    let mut wins = 0.0;
    for p in positive_scores {
        for n in negative_scores {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (positive_scores.len() * negative_scores.len()) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_is_feasible() {
        let p = project_capped_simplex(&[3.0, -1.0, 0.2, 0.5], 0.4);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&a| (0.0..=0.4 + 1e-12).contains(&a)));
    }

    #[test]
    fn value_iteration_on_myopic_problem_matches_rewards() {
        let mdp = MdpConfig::default();
        let q = value_iteration(&mdp, 0.0, 1e-12);
        let s = ComplianceState::from_index(0);
        assert!((q.get(s, Action::AutoApprove) - (0.95 - 0.5)).abs() < 1e-12);
        assert!((q.get(s, Action::Escalate) + 0.2).abs() < 1e-12);
    }

    #[test]
    fn percentile_and_auc() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(sorted_percentile(&v, 95.0), 95.0);
        assert_eq!(pairwise_auc(&[2.0, 3.0], &[1.0, 2.0]), 0.875);
        assert_eq!(confusion_accuracy(&[true, false, true], &[true, true, true]), 2.0 / 3.0);
    }
}
