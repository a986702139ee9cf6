//! Trajectory-cached group-relative policy optimization objective.
//!
//! ```text
//! J = 1/N * sum_groups 1/|o| * sum_t [ min(r_t * A, clip(r_t, 1-eps, 1+eps) * A) - beta * kl_t ]
//! r_t  = exp(logp_cur[t] - logp_old[t])
//! A    = (R - mean(R)) / (std(R) + adv_eps)          over every group in the window
//! kl_t = u - ln(u) - 1,  u = exp(logp_ref[t] - logp_cur[t])
//! ```
//!
//! N counts every completion in the window. The KL estimate is averaged per
//! token inside the same `1/|o|` normalization as the surrogate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::toytrain::policy::{ToyPolicy, Trajectory};

/// Per-token log-probabilities of one completion under the current, old
/// (behaviour), and reference policies.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TokenLogProbs {
    pub current: Vec<f64>,
    pub old: Vec<f64>,
    #[serde(rename = "ref")]
    pub reference: Vec<f64>,
}

impl TokenLogProbs {
    pub fn len(&self) -> usize {
        self.current.len()
    }

    pub fn is_empty(&self) -> bool {
        self.current.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.current.len();
        if self.old.len() != n || self.reference.len() != n {
            return Err(Error::LengthMismatch(format!(
                "current/old/ref lengths {}/{}/{}",
                n,
                self.old.len(),
                self.reference.len()
            )));
        }
        if n == 0 {
            return Err(Error::LengthMismatch("empty completion".into()));
        }
        let all = self.current.iter().chain(&self.old).chain(&self.reference);
        if all.clone().any(|v| v.is_nan() || *v > 0.0) {
            return Err(Error::LengthMismatch(
                "log-probabilities must be <= 0 and not NaN".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlKind {
    #[default]
    LowVar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TgrpoConfig {
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub adv_eps: f64,
    pub kl_kind: KlKind,
}

impl Default for TgrpoConfig {
    fn default() -> Self {
        TgrpoConfig {
            clip_eps: 0.2,
            kl_beta: 0.01,
            adv_eps: 1e-8,
            kl_kind: KlKind::LowVar,
        }
    }
}

impl TgrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::Config("clip_eps must lie in (0, 1)".into()));
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return Err(Error::Config("kl_beta must be finite and >= 0".into()));
        }
        if !(self.adv_eps > 0.0 && self.adv_eps.is_finite()) {
            return Err(Error::Config("adv_eps must be finite and > 0".into()));
        }
        Ok(())
    }
}

/// `(r - mean) / (std + adv_eps)` with the population standard deviation.
/// A window whose rewards are all identical gets all-zero advantages.
pub fn normalized_advantages(final_rewards: &[f64], adv_eps: f64) -> Vec<f64> {
    let Some(&first) = final_rewards.first() else {
        return Vec::new();
    };
    if final_rewards.iter().all(|&r| r == first) {
        return vec![0.0; final_rewards.len()];
    }
    let n = final_rewards.len() as f64;
    let mean = final_rewards.iter().sum::<f64>() / n;
    let var = final_rewards
        .iter()
        .map(|r| (r - mean).powi(2))
        .sum::<f64>()
        / n;
    let denom = var.sqrt() + adv_eps;
    final_rewards.iter().map(|r| (r - mean) / denom).collect()
}

pub fn importance_ratio(lp: &TokenLogProbs, t: usize) -> f64 {
    (lp.current[t] - lp.old[t]).exp()
}

/// Pessimistic clipped surrogate `min(r A, clip(r, 1-eps, 1+eps) A)`.
pub fn clipped_term(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    (ratio * advantage).min(clipped * advantage)
}

/// Whether the clipped branch is strictly the minimum, i.e. the surrogate
/// is locally flat in the ratio.
fn clip_binds(ratio: f64, advantage: f64, clip_eps: f64) -> bool {
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    clipped * advantage < ratio * advantage
}

/// Low-variance KL estimate `u - ln u - 1`, `u = pi_ref / pi_cur`.
pub fn kl_low_var(lp: &TokenLogProbs, t: usize) -> f64 {
    let log_u = lp.reference[t] - lp.current[t];
    // exp_m1 keeps the value exact near u = 1
    log_u.exp_m1() - log_u
}

fn group_term(lp: &TokenLogProbs, advantage: f64, cfg: &TgrpoConfig) -> f64 {
    let mut sum = 0.0;
    for t in 0..lp.len() {
        let surrogate = clipped_term(importance_ratio(lp, t), advantage, cfg.clip_eps);
        sum += surrogate - cfg.kl_beta * kl_low_var(lp, t);
    }
    sum / lp.len() as f64
}

fn check_window(groups: &[TokenLogProbs], advantages: &[f64]) -> Result<()> {
    if groups.len() != advantages.len() {
        return Err(Error::LengthMismatch(format!(
            "{} completions but {} advantages",
            groups.len(),
            advantages.len()
        )));
    }
    if groups.is_empty() {
        return Err(Error::EmptyWindow(
            "objective needs at least one completion",
        ));
    }
    groups.iter().try_for_each(TokenLogProbs::validate)
}

/// The objective over a window of completions, each with its own advantage.
pub fn objective(groups: &[TokenLogProbs], advantages: &[f64], cfg: &TgrpoConfig) -> Result<f64> {
    check_window(groups, advantages)?;
    let total: f64 = groups
        .iter()
        .zip(advantages)
        .map(|(lp, &a)| group_term(lp, a, cfg))
        .sum();
    Ok(total / groups.len() as f64)
}

/// Mean per-token KL estimate over a window, each completion weighted equally.
pub fn mean_kl(groups: &[TokenLogProbs]) -> f64 {
    if groups.is_empty() {
        return 0.0;
    }
    let total: f64 = groups
        .iter()
        .map(|lp| (0..lp.len()).map(|t| kl_low_var(lp, t)).sum::<f64>() / lp.len().max(1) as f64)
        .sum();
    total / groups.len() as f64
}

/// Derivative of the objective with respect to each token's current
/// log-probability. Old/reference log-probs and advantages are constants.
pub fn logprob_gradient(
    groups: &[TokenLogProbs],
    advantages: &[f64],
    cfg: &TgrpoConfig,
) -> Result<Vec<Vec<f64>>> {
    check_window(groups, advantages)?;
    let n = groups.len() as f64;
    Ok(groups
        .iter()
        .zip(advantages)
        .map(|(lp, &a)| {
            let scale = 1.0 / (n * lp.len() as f64);
            (0..lp.len())
                .map(|t| {
                    let r = importance_ratio(lp, t);
                    let surrogate = if clip_binds(r, a, cfg.clip_eps) {
                        0.0
                    } else {
                        r * a
                    };
                    // d/dcur (u - ln u - 1) = 1 - u
                    let u = (lp.reference[t] - lp.current[t]).exp();
                    scale * (surrogate - cfg.kl_beta * (1.0 - u))
                })
                .collect()
        })
        .collect())
}

/// Objective of the toy policy on a window of trajectories.
pub fn toy_objective(
    policy: &ToyPolicy,
    window: &[Trajectory],
    advantages: &[f64],
    cfg: &TgrpoConfig,
) -> Result<f64> {
    let groups: Vec<TokenLogProbs> = window.iter().map(|t| policy.token_logprobs(t)).collect();
    objective(&groups, advantages, cfg)
}

/// Gradient of the objective with respect to the toy policy's logit table,
/// laid out like [`ToyPolicy::logits`].
pub fn objective_gradient(
    policy: &ToyPolicy,
    window: &[Trajectory],
    advantages: &[f64],
    cfg: &TgrpoConfig,
) -> Result<Vec<f64>> {
    let groups: Vec<TokenLogProbs> = window.iter().map(|t| policy.token_logprobs(t)).collect();
    let dlogp = logprob_gradient(&groups, advantages, cfg)?;
    let mut grad = vec![0.0; policy.logits().len()];
    let inv_temp = 1.0 / policy.temperature();
    for (traj, weights) in window.iter().zip(&dlogp) {
        for (pos, (&tok, &w)) in traj.tokens.iter().zip(weights).enumerate() {
            if w == 0.0 {
                continue;
            }
            // d log softmax(z / T)[tok] / dz_k = (1[k = tok] - p_k) / T
            let probs = policy.probs(traj.prompt_id, pos);
            let base = policy.index(traj.prompt_id, pos, 0);
            for (k, p) in probs.iter().enumerate() {
                let indicator = if k == tok { 1.0 } else { 0.0 };
                grad[base + k] += w * (indicator - p) * inv_temp;
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lp(current: Vec<f64>, old: Vec<f64>, reference: Vec<f64>) -> TokenLogProbs {
        TokenLogProbs {
            current,
            old,
            reference,
        }
    }

    #[test]
    fn advantage_examples() {
        let a = normalized_advantages(&[0.2, 0.5, 0.8], 1e-8);
        let std = (0.18f64 / 3.0).sqrt();
        assert!((std - 0.2449).abs() < 1e-4);
        let expect = 0.3 / (std + 1e-8);
        assert!((a[0] + expect).abs() < 1e-12);
        assert!(a[1].abs() < 1e-12);
        assert!((a[2] - expect).abs() < 1e-12);
        assert!((a[2] - 1.2247).abs() < 1e-4);

        assert_eq!(normalized_advantages(&[0.1, 0.1, 0.1], 1e-8), vec![0.0; 3]);
        assert!(normalized_advantages(&[], 1e-8).is_empty());

        let shifted = normalized_advantages(&[5.2, 5.5, 5.8], 1e-8);
        for (x, y) in a.iter().zip(&shifted) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn ratio_and_clip_examples() {
        let l = lp(
            vec![-0.3, 2f64.ln() - 1.0],
            vec![-0.3, -1.0],
            vec![-0.3, -1.0],
        );
        assert_eq!(importance_ratio(&l, 0), 1.0);
        assert!((importance_ratio(&l, 1) - 2.0).abs() < 1e-15);

        assert!((clipped_term(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert!((clipped_term(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
        for eps in [0.1, 0.2, 0.5] {
            assert_eq!(clipped_term(1.0, 0.37, eps), 0.37);
        }
    }

    #[test]
    fn kl_examples() {
        let same = lp(vec![-0.7], vec![-0.7], vec![-0.7]);
        assert_eq!(kl_low_var(&same, 0), 0.0);
        let l = lp(vec![-2.0], vec![-2.0], vec![-1.0]);
        assert!((kl_low_var(&l, 0) - (std::f64::consts::E - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn objective_examples() {
        let cfg = TgrpoConfig {
            kl_beta: 0.0,
            ..TgrpoConfig::default()
        };
        let one = lp(vec![-0.5], vec![-0.5], vec![-0.5]);
        assert_eq!(
            objective(std::slice::from_ref(&one), &[0.5], &cfg).unwrap(),
            0.5
        );

        let g2 = lp(vec![-0.1, -0.2], vec![-0.3, -0.2], vec![-0.2, -0.1]);
        let j = objective(&[one.clone(), g2.clone()], &[0.5, -0.7], &cfg).unwrap();
        let jj = objective(
            &[one.clone(), g2.clone(), one.clone(), g2.clone()],
            &[0.5, -0.7, 0.5, -0.7],
            &cfg,
        )
        .unwrap();
        assert!((j - jj).abs() < 1e-15);
    }

    #[test]
    fn objective_rejects_mismatches() {
        let cfg = TgrpoConfig::default();
        let bad = lp(vec![-0.1, -0.2], vec![-0.1], vec![-0.1, -0.2]);
        assert!(matches!(
            objective(&[bad], &[1.0], &cfg),
            Err(Error::LengthMismatch(_))
        ));
        let ok = lp(vec![-0.1], vec![-0.1], vec![-0.1]);
        assert!(objective(std::slice::from_ref(&ok), &[1.0, 2.0], &cfg).is_err());
        assert!(objective(&[], &[], &cfg).is_err());
        let positive = lp(vec![0.1], vec![-0.1], vec![-0.1]);
        assert!(objective(&[positive], &[1.0], &cfg).is_err());
    }

    #[test]
    fn snapshot_objective_is_mean_advantage() {
        // ratios all 1 and beta = 0: J is the mean advantage, ~0 after centering
        let cfg = TgrpoConfig {
            kl_beta: 0.0,
            ..TgrpoConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let groups: Vec<TokenLogProbs> = (0..12)
            .map(|_| {
                let v: Vec<f64> = (0..rng.gen_range(1..6))
                    .map(|_| -rng.gen::<f64>())
                    .collect();
                lp(v.clone(), v.clone(), v)
            })
            .collect();
        let rewards: Vec<f64> = (0..12).map(|_| rng.gen()).collect();
        let adv = normalized_advantages(&rewards, cfg.adv_eps);
        let j = objective(&groups, &adv, &cfg).unwrap();
        assert!(j.abs() < 1e-12);
    }

    #[test]
    fn logprob_gradient_matches_finite_differences() {
        let cfg = TgrpoConfig {
            kl_beta: 0.3,
            ..TgrpoConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let groups: Vec<TokenLogProbs> = (0..5)
            .map(|_| {
                let n = rng.gen_range(1..5);
                let old: Vec<f64> = (0..n).map(|_| -rng.gen_range(0.5..3.0)).collect();
                let cur: Vec<f64> = old.iter().map(|o| o + rng.gen_range(-0.4..0.4)).collect();
                let reference: Vec<f64> = (0..n).map(|_| -rng.gen_range(0.5..3.0)).collect();
                lp(cur, old, reference)
            })
            .collect();
        let adv: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let grad = logprob_gradient(&groups, &adv, &cfg).unwrap();
        let h = 1e-6;
        #[allow(clippy::needless_range_loop)]
        for g in 0..groups.len() {
            for t in 0..groups[g].len() {
                let mut plus = groups.clone();
                plus[g].current[t] += h;
                let mut minus = groups.clone();
                minus[g].current[t] -= h;
                let fd = (objective(&plus, &adv, &cfg).unwrap()
                    - objective(&minus, &adv, &cfg).unwrap())
                    / (2.0 * h);
                assert!((fd - grad[g][t]).abs() < 1e-7, "{fd} vs {}", grad[g][t]);
            }
        }
    }

    #[test]
    fn kl_gradient_vanishes_at_reference() {
        let cfg = TgrpoConfig {
            kl_beta: 5.0,
            ..TgrpoConfig::default()
        };
        let l = lp(vec![-0.4, -1.3], vec![-0.4, -1.3], vec![-0.4, -1.3]);
        let g = logprob_gradient(&[l], &[0.0], &cfg).unwrap();
        assert_eq!(g, vec![vec![0.0, 0.0]]);
    }

    #[test]
    fn config_validation() {
        assert!(TgrpoConfig::default().validate().is_ok());
        for bad in [
            TgrpoConfig {
                clip_eps: 0.0,
                ..TgrpoConfig::default()
            },
            TgrpoConfig {
                clip_eps: 1.0,
                ..TgrpoConfig::default()
            },
            TgrpoConfig {
                kl_beta: -0.1,
                ..TgrpoConfig::default()
            },
            TgrpoConfig {
                adv_eps: 0.0,
                ..TgrpoConfig::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
        let parsed: TgrpoConfig = toml::from_str("kl_kind = \"low_var\"\nclip_eps = 0.3").unwrap();
        assert_eq!(parsed.clip_eps, 0.3);
    }

    proptest! {
        #[test]
        fn clipped_term_is_pessimistic(r in 0.0f64..3.0, a in -3.0f64..3.0, eps in 0.01f64..0.99) {
            let v = clipped_term(r, a, eps);
            prop_assert!(v <= r * a);
            prop_assert!(v <= r.clamp(1.0 - eps, 1.0 + eps) * a);
        }

        #[test]
        fn kl_is_nonnegative(cur in -20.0f64..0.0, reference in -20.0f64..0.0) {
            let l = lp(vec![cur], vec![cur], vec![reference]);
            let k = kl_low_var(&l, 0);
            prop_assert!(k >= 0.0);
            if cur == reference {
                prop_assert_eq!(k, 0.0);
            } else {
                prop_assert!(k > 0.0 || (cur - reference).abs() < 1e-7);
            }
        }

        #[test]
        fn advantages_are_centered(rewards in prop::collection::vec(-5.0f64..5.0, 1..60)) {
            let a = normalized_advantages(&rewards, 1e-8);
            let n = a.len() as f64;
            let mean = a.iter().sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            let m = rewards.iter().sum::<f64>() / n;
            let std = (rewards.iter().map(|r| (r - m).powi(2)).sum::<f64>() / n).sqrt();
            if rewards.iter().any(|&r| r != rewards[0]) {
                let sa = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!((sa - std / (std + 1e-8)).abs() < 1e-6);
            } else {
                prop_assert!(a.iter().all(|&x| x == 0.0));
            }
        }

        #[test]
        fn objective_is_permutation_invariant(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(1..9);
            let groups: Vec<TokenLogProbs> = (0..n).map(|_| {
                let len = rng.gen_range(1..6);
                let v = |rng: &mut ChaCha8Rng| (0..len).map(|_| -rng.gen_range(0.01..3.0)).collect::<Vec<_>>();
                lp(v(&mut rng), v(&mut rng), v(&mut rng))
            }).collect();
            let adv: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let cfg = TgrpoConfig::default();
            let j = objective(&groups, &adv, &cfg).unwrap();
            let mut idx: Vec<usize> = (0..n).collect();
            idx.reverse();
            idx.rotate_left(rng.gen_range(0..n));
            let pg: Vec<TokenLogProbs> = idx.iter().map(|&i| groups[i].clone()).collect();
            let pa: Vec<f64> = idx.iter().map(|&i| adv[i]).collect();
            let jp = objective(&pg, &pa, &cfg).unwrap();
            prop_assert!((j - jp).abs() < 1e-12);
        }
    }
}
