//! Tabular viewpoint-selection policy trained with GRPO on a bandit that
//! mimics canonical-view exploration.
//!
//! Each episode runs up to `max_turns` decision turns. At every turn the policy
//! picks one of the three canonical views or answers immediately. A view that
//! the episode marks as revealing makes the final answer correct; otherwise the
//! agent guesses uniformly among the choices. Exhausting the turns forces an
//! answer.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::canonical::CanonicalTag;
use super::grpo::{grpo_loss, GrpoConfig, GrpoError, GrpoLoss, Segment, TokenizedTrajectory};
use crate::scoring::{labels, reward, Extraction};

pub const NUM_ACTIONS: usize = 4;
const PROMPT_TOKEN: u32 = 100;
const OBSERVATION_TOKEN: u32 = 200;
const FORCED_ANSWER_TOKEN: u32 = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ToyAction {
    View(CanonicalTag),
    AnswerNow,
}

impl ToyAction {
    pub const ALL: [ToyAction; NUM_ACTIONS] = [
        ToyAction::View(CanonicalTag::Left),
        ToyAction::View(CanonicalTag::Right),
        ToyAction::View(CanonicalTag::Top),
        ToyAction::AnswerNow,
    ];

    pub fn index(self) -> usize {
        match self {
            ToyAction::View(CanonicalTag::Left) => 0,
            ToyAction::View(CanonicalTag::Right) => 1,
            ToyAction::View(CanonicalTag::Top) => 2,
            ToyAction::AnswerNow => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyViewpointBandit {
    /// Probability that each canonical view (left, right, top) is the revealing one in an episode.
    pub reveal_probs: [f64; 3],
    pub num_choices: usize,
    pub max_turns: usize,
}

impl Default for ToyViewpointBandit {
    /// Only the top view reveals the answer; four choices; three turns.
    fn default() -> Self {
        Self { reveal_probs: [0.0, 0.0, 1.0], num_choices: 4, max_turns: 3 }
    }
}

impl ToyViewpointBandit {
    fn sample_revealing(&self, rng: &mut ChaCha8Rng) -> Option<CanonicalTag> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (tag, p) in CanonicalTag::ALL.iter().zip(self.reveal_probs) {
            acc += p;
            if u < acc {
                return Some(*tag);
            }
        }
        None
    }
}

/// Softmax logits per decision turn.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    pub logits: Vec<[f64; NUM_ACTIONS]>,
}

impl TabularPolicy {
    pub fn uniform(turns: usize) -> Self {
        Self { logits: vec![[0.0; NUM_ACTIONS]; turns] }
    }

    pub fn probs(&self, turn: usize) -> [f64; NUM_ACTIONS] {
        softmax(&self.logits[turn])
    }

    pub fn log_prob(&self, turn: usize, action: usize) -> f64 {
        log_softmax(&self.logits[turn])[action]
    }

    /// Exact expected reward under the policy, enumerating every trajectory.
    pub fn expected_reward(&self, env: &ToyViewpointBandit) -> f64 {
        let guess = 1.0 / env.num_choices as f64;
        let outcome = |revealed: bool| if revealed { 1.1 } else { guess * 1.1 + (1.0 - guess) * 0.1 };
        let mut value = 0.0;
        for (r, &p_reveal) in env.reveal_probs.iter().enumerate() {
            if p_reveal > 0.0 {
                value += p_reveal * self.value_from(0, false, Some(r), env, &outcome);
            }
        }
        let p_none = 1.0 - env.reveal_probs.iter().sum::<f64>();
        if p_none > 1e-15 {
            value += p_none * self.value_from(0, false, None, env, &outcome);
        }
        value
    }

    fn value_from(
        &self,
        turn: usize,
        revealed: bool,
        revealing: Option<usize>,
        env: &ToyViewpointBandit,
        outcome: &dyn Fn(bool) -> f64,
    ) -> f64 {
        if turn >= env.max_turns {
            return outcome(revealed);
        }
        let p = self.probs(turn);
        let mut v = p[3] * outcome(revealed);
        for view in 0..3 {
            v += p[view] * self.value_from(turn + 1, revealed || revealing == Some(view), revealing, env, outcome);
        }
        v
    }

    /// Probability of picking `tag` at the first turn.
    pub fn first_turn_prob(&self, tag: CanonicalTag) -> f64 {
        self.probs(0)[ToyAction::View(tag).index()]
    }
}

fn softmax(x: &[f64; NUM_ACTIONS]) -> [f64; NUM_ACTIONS] {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = x.map(|v| libm::exp(v - m));
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

fn log_softmax(x: &[f64; NUM_ACTIONS]) -> [f64; NUM_ACTIONS] {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + libm::log(x.iter().map(|v| libm::exp(v - m)).sum::<f64>());
    x.map(|v| v - lse)
}

/// One sampled episode: the decision per turn plus the terminal reward.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyRollout {
    pub actions: Vec<ToyAction>,
    pub revealed: bool,
    pub correct: bool,
    pub reward: f64,
    /// Turns including the final answer turn.
    pub turns: usize,
}

impl ToyRollout {
    /// Token view of the rollout: a prompt token, then per turn an action token
    /// (answer-now is an answer token) followed by an observation token for views.
    /// A forced answer contributes a deterministic answer token.
    pub fn tokenize(&self, current: &TabularPolicy, old: &TabularPolicy, reference: &TabularPolicy) -> (TokenizedTrajectory, Vec<(usize, usize)>) {
        let mut t = TokenizedTrajectory::new(self.reward);
        let mut sites = Vec::new();
        t.push(PROMPT_TOKEN, Segment::Prompt, 0.0, 0.0, 0.0);
        for (turn, action) in self.actions.iter().enumerate() {
            let a = action.index();
            let seg = if *action == ToyAction::AnswerNow { Segment::Answer } else { Segment::Action };
            sites.push((t.len(), turn * NUM_ACTIONS + a));
            t.push(a as u32, seg, current.log_prob(turn, a), old.log_prob(turn, a), reference.log_prob(turn, a));
            if let ToyAction::View(tag) = action {
                t.push(OBSERVATION_TOKEN + tag.index() as u32, Segment::Observation, 0.0, 0.0, 0.0);
            }
        }
        if self.actions.last() != Some(&ToyAction::AnswerNow) {
            t.push(FORCED_ANSWER_TOKEN, Segment::Answer, 0.0, 0.0, 0.0);
        }
        (t, sites)
    }
}

pub fn sample_rollout(policy: &TabularPolicy, env: &ToyViewpointBandit, rng: &mut ChaCha8Rng) -> ToyRollout {
    let revealing = env.sample_revealing(rng);
    let mut actions = Vec::new();
    let mut revealed = false;
    for turn in 0..env.max_turns {
        let p = policy.probs(turn);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut choice = NUM_ACTIONS - 1;
        for (i, pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                choice = i;
                break;
            }
        }
        let action = ToyAction::ALL[choice];
        actions.push(action);
        match action {
            ToyAction::AnswerNow => break,
            ToyAction::View(tag) => revealed |= revealing == Some(tag),
        }
    }
    let names = labels(env.num_choices);
    let gold = &names[rng.random_range(0..env.num_choices)];
    let answer = if revealed { gold.clone() } else { names[rng.random_range(0..env.num_choices)].clone() };
    let extracted = Extraction { label: answer, format_ok: true };
    let r = reward(Some(&extracted), gold);
    let views = actions.iter().filter(|a| **a != ToyAction::AnswerNow).count();
    ToyRollout { correct: r.r_ans > 0.0, reward: r.total, revealed, turns: views + 1, actions }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ToyTrainConfig {
    pub grpo: GrpoConfig,
    /// Independent prompts per step, each with `grpo.group_size` rollouts.
    pub groups_per_step: usize,
    /// Gradient steps taken on each sampled batch before resampling.
    pub updates_per_batch: usize,
    pub seed: u64,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self { grpo: GrpoConfig::default(), groups_per_step: 4, updates_per_batch: 4, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub step: usize,
    /// Mean sampled reward over the batch.
    pub mean_reward: f64,
    /// Exact expected reward of the policy after the update.
    pub expected_reward: f64,
    pub mean_turns: f64,
    pub loss: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub first_turn_probs: [f64; NUM_ACTIONS],
}

/// Gradient of the GRPO loss with respect to every logit.
pub fn logit_gradient(policy: &TabularPolicy, loss: &GrpoLoss, sites: &[Vec<Vec<(usize, usize)>>]) -> Vec<[f64; NUM_ACTIONS]> {
    let mut grad = vec![[0.0; NUM_ACTIONS]; policy.logits.len()];
    for (g, group_sites) in sites.iter().enumerate() {
        for (j, traj_sites) in group_sites.iter().enumerate() {
            for &(tok, flat) in traj_sites {
                let (turn, a) = (flat / NUM_ACTIONS, flat % NUM_ACTIONS);
                let d = loss.token_grads[g][j][tok];
                let p = policy.probs(turn);
                for (k, gk) in grad[turn].iter_mut().enumerate() {
                    *gk += d * ((k == a) as u8 as f64 - p[k]);
                }
            }
        }
    }
    grad
}

pub struct ToyTrainer {
    pub policy: TabularPolicy,
    pub reference: TabularPolicy,
    pub env: ToyViewpointBandit,
    pub config: ToyTrainConfig,
    rng: ChaCha8Rng,
    step: usize,
}

impl ToyTrainer {
    pub fn new(env: ToyViewpointBandit, config: ToyTrainConfig) -> Result<Self, GrpoError> {
        config.grpo.validate()?;
        let policy = TabularPolicy::uniform(env.max_turns);
        Ok(Self { reference: policy.clone(), policy, env, rng: ChaCha8Rng::seed_from_u64(config.seed), config, step: 0 })
    }

    pub fn sample_batch(&mut self) -> Vec<Vec<ToyRollout>> {
        (0..self.config.groups_per_step.max(1))
            .map(|_| (0..self.config.grpo.group_size).map(|_| sample_rollout(&self.policy, &self.env, &mut self.rng)).collect())
            .collect()
    }

    /// Applies `updates_per_batch` gradient steps on a fixed batch of rollouts.
    pub fn update(&mut self, batch: &[Vec<ToyRollout>]) -> Result<GrpoLoss, GrpoError> {
        let old = self.policy.clone();
        let mut last = None;
        for _ in 0..self.config.updates_per_batch.max(1) {
            let (tokens, sites) = tokenize_batch(batch, &self.policy, &old, &self.reference);
            let loss = grpo_loss(&tokens, &self.config.grpo)?;
            let grad = logit_gradient(&self.policy, &loss, &sites);
            for (row, g) in self.policy.logits.iter_mut().zip(&grad) {
                for (l, gk) in row.iter_mut().zip(g) {
                    *l -= self.config.grpo.learning_rate * gk;
                }
            }
            last = Some(loss);
        }
        Ok(last.expect("at least one update"))
    }

    pub fn step(&mut self) -> Result<StepStats, GrpoError> {
        let batch = self.sample_batch();
        let loss = self.update(&batch)?;
        self.step += 1;
        let n = batch.iter().map(Vec::len).sum::<usize>() as f64;
        let flat = batch.iter().flatten();
        Ok(StepStats {
            step: self.step,
            mean_reward: flat.clone().map(|r| r.reward).sum::<f64>() / n,
            expected_reward: self.policy.expected_reward(&self.env),
            mean_turns: flat.map(|r| r.turns as f64).sum::<f64>() / n,
            loss: loss.loss,
            kl: loss.kl,
            clip_fraction: loss.clip_fraction,
            first_turn_probs: self.policy.probs(0),
        })
    }
}

pub fn tokenize_batch(
    batch: &[Vec<ToyRollout>],
    current: &TabularPolicy,
    old: &TabularPolicy,
    reference: &TabularPolicy,
) -> (Vec<Vec<TokenizedTrajectory>>, Vec<Vec<Vec<(usize, usize)>>>) {
    let mut tokens = Vec::with_capacity(batch.len());
    let mut sites = Vec::with_capacity(batch.len());
    for group in batch {
        let (t, s): (Vec<_>, Vec<_>) = group.iter().map(|r| r.tokenize(current, old, reference)).unzip();
        tokens.push(t);
        sites.push(s);
    }
    (tokens, sites)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_rewards_leave_logits_unchanged() {
        let env = ToyViewpointBandit { reveal_probs: [1.0, 1.0, 1.0], ..Default::default() };
        let mut t = ToyTrainer::new(env, ToyTrainConfig::default()).unwrap();
        // every rollout with a fixed reward
        let mut batch = t.sample_batch();
        for r in batch.iter_mut().flatten() {
            r.reward = 1.1;
        }
        t.update(&batch).unwrap();
        assert_eq!(t.policy, TabularPolicy::uniform(3));
    }

    #[test]
    fn expected_reward_of_uniform_policy_matches_monte_carlo() {
        let env = ToyViewpointBandit::default();
        let policy = TabularPolicy::uniform(env.max_turns);
        let exact = policy.expected_reward(&env);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 200_000;
        let mc = (0..n).map(|_| sample_rollout(&policy, &env, &mut rng).reward).sum::<f64>() / n as f64;
        assert!((exact - mc).abs() < 0.01, "{exact} vs {mc}");
    }

    #[test]
    fn always_top_is_optimal() {
        let env = ToyViewpointBandit::default();
        let mut p = TabularPolicy::uniform(3);
        p.logits[0] = [-50.0, -50.0, 50.0, -50.0];
        p.logits[1] = [-50.0, -50.0, -50.0, 50.0];
        assert!((p.expected_reward(&env) - 1.1).abs() < 1e-12);
    }

    #[test]
    fn tokenization_masks_observations() {
        let r = ToyRollout {
            actions: vec![ToyAction::View(CanonicalTag::Top), ToyAction::AnswerNow],
            revealed: true,
            correct: true,
            reward: 1.1,
            turns: 2,
        };
        let p = TabularPolicy::uniform(3);
        let (t, sites) = r.tokenize(&p, &p, &p);
        assert_eq!(t.segments, vec![Segment::Prompt, Segment::Action, Segment::Observation, Segment::Answer]);
        assert_eq!(t.mask(), vec![0, 1, 0, 1]);
        assert_eq!(sites, vec![(1, 2), (3, NUM_ACTIONS + 3)]);
    }
}
