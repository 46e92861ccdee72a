//! Group-relative advantages and the clipped, KL-regularized surrogate with
//! token masking.
//!
//! ```text
//! A_i   = (r_i - mean(r)) / (std(r) + eps_norm)            population std
//! rho_t = exp(logp_cur - logp_old)
//! k3_t  = exp(logp_ref - logp_cur) - 1 - (logp_ref - logp_cur)
//! L     = -1/M sum_t m_t min(rho_t A, clip(rho_t, 1-eps, 1+eps) A) + beta/M sum_t m_t k3_t
//! ```
//! `M` counts masked tokens over the whole batch; prompt and observation
//! tokens never enter either sum.

use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrpoError {
    #[error("group of {0} rollouts; at least 2 required")]
    InvalidGroup(usize),
    #[error("batch has no trainable tokens")]
    DegenerateBatch,
    #[error("trajectory {index}: {field} has {got} entries, expected {expected}")]
    LengthMismatch { index: usize, field: &'static str, got: usize, expected: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Segment {
    Prompt,
    Observation,
    Action,
    Answer,
}

impl Segment {
    /// Only model-generated tokens are optimized.
    pub fn trainable(self) -> bool {
        matches!(self, Segment::Action | Segment::Answer)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedTrajectory {
    pub tokens: Vec<u32>,
    pub segments: Vec<Segment>,
    pub logp_current: Vec<f64>,
    pub logp_old: Vec<f64>,
    pub logp_ref: Vec<f64>,
    pub reward: f64,
}

impl TokenizedTrajectory {
    pub fn new(reward: f64) -> Self {
        Self {
            tokens: Vec::new(),
            segments: Vec::new(),
            logp_current: Vec::new(),
            logp_old: Vec::new(),
            logp_ref: Vec::new(),
            reward,
        }
    }

    pub fn push(&mut self, token: u32, segment: Segment, logp_current: f64, logp_old: f64, logp_ref: f64) {
        self.tokens.push(token);
        self.segments.push(segment);
        self.logp_current.push(logp_current);
        self.logp_old.push(logp_old);
        self.logp_ref.push(logp_ref);
    }

    pub fn mask(&self) -> Vec<u8> {
        self.segments.iter().map(|s| s.trainable() as u8).collect()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn check(&self, index: usize) -> Result<(), GrpoError> {
        let expected = self.tokens.len();
        for (field, got) in [
            ("segments", self.segments.len()),
            ("logp_current", self.logp_current.len()),
            ("logp_old", self.logp_old.len()),
            ("logp_ref", self.logp_ref.len()),
        ] {
            if got != expected {
                return Err(GrpoError::LengthMismatch { index, field, got, expected });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_weight: f64,
    pub learning_rate: f64,
    pub adv_eps: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self { group_size: 8, clip_eps: 0.2, kl_weight: 0.05, learning_rate: 0.05, adv_eps: 1e-8 }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.group_size < 2 {
            return Err(GrpoError::InvalidGroup(self.group_size));
        }
        if !(self.clip_eps > 0.0) {
            return Err(GrpoError::InvalidConfig("clip epsilon must be positive"));
        }
        if !(self.kl_weight >= 0.0) {
            return Err(GrpoError::InvalidConfig("KL weight must be non-negative"));
        }
        Ok(())
    }
}

pub fn group_advantages(rewards: &[f64], adv_eps: f64) -> Result<Vec<f64>, GrpoError> {
    let g = rewards.len();
    if g < 2 {
        return Err(GrpoError::InvalidGroup(g));
    }
    if rewards.iter().all(|r| *r == rewards[0]) {
        // a rounded mean would otherwise leak ~1e-8 advantages
        return Ok(alloc::vec![0.0; g]);
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / g as f64;
    let denom = libm::sqrt(var) + adv_eps;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrpoLoss {
    pub loss: f64,
    pub surrogate: f64,
    /// Mean per-token KL estimate over trainable tokens.
    pub kl: f64,
    pub trainable_tokens: usize,
    /// Fraction of trainable tokens where the clipped branch was selected.
    pub clip_fraction: f64,
    /// `d loss / d logp_current` per token, indexed `[group][trajectory][token]`;
    /// exactly zero on untrainable tokens.
    pub token_grads: Vec<Vec<Vec<f64>>>,
    /// Advantages per `[group][trajectory]`.
    pub advantages: Vec<Vec<f64>>,
}

pub fn grpo_loss(batch: &[Vec<TokenizedTrajectory>], config: &GrpoConfig) -> Result<GrpoLoss, GrpoError> {
    config.validate()?;
    let mut advantages = Vec::with_capacity(batch.len());
    let mut m = 0usize;
    let mut idx = 0;
    for group in batch {
        for t in group {
            t.check(idx)?;
            idx += 1;
            m += t.segments.iter().filter(|s| s.trainable()).count();
        }
        let rewards: Vec<f64> = group.iter().map(|t| t.reward).collect();
        advantages.push(group_advantages(&rewards, config.adv_eps)?);
    }
    if m == 0 {
        return Err(GrpoError::DegenerateBatch);
    }
    let inv_m = 1.0 / m as f64;
    let (lo, hi) = (1.0 - config.clip_eps, 1.0 + config.clip_eps);
    let mut surr_sum = 0.0;
    let mut kl_sum = 0.0;
    let mut clipped = 0usize;
    let mut token_grads = Vec::with_capacity(batch.len());
    for (group, adv) in batch.iter().zip(&advantages) {
        let mut group_grads = Vec::with_capacity(group.len());
        for (t, &a) in group.iter().zip(adv) {
            let mut grads = alloc::vec![0.0; t.len()];
            for i in 0..t.len() {
                if !t.segments[i].trainable() {
                    continue;
                }
                let rho = libm::exp(t.logp_current[i] - t.logp_old[i]);
                let unclipped = rho * a;
                let clipped_term = rho.clamp(lo, hi) * a;
                let (obj, d_obj) = if unclipped <= clipped_term {
                    (unclipped, unclipped)
                } else {
                    clipped += 1;
                    (clipped_term, 0.0)
                };
                let log_ratio_ref = t.logp_ref[i] - t.logp_current[i];
                let rho_ref = libm::exp(log_ratio_ref);
                surr_sum += obj;
                kl_sum += rho_ref - 1.0 - log_ratio_ref;
                grads[i] = inv_m * (-d_obj + config.kl_weight * (1.0 - rho_ref));
            }
            group_grads.push(grads);
        }
        token_grads.push(group_grads);
    }
    let surrogate = surr_sum * inv_m;
    let kl = kl_sum * inv_m;
    Ok(GrpoLoss {
        loss: -surrogate + config.kl_weight * kl,
        surrogate,
        kl,
        trainable_tokens: m,
        clip_fraction: clipped as f64 * inv_m,
        token_grads,
        advantages,
    })
}
