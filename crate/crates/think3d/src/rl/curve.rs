//! Toy trainer runs and their reward curves.

use std::path::Path;

use think3d_core::rl::toy::StepStats;
use think3d_core::rl::{CanonicalTag, GrpoError, ToyTrainConfig, ToyTrainer, ToyViewpointBandit};

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_turns: f64,
    pub expected_reward: f64,
    /// Probability of requesting the top view on the first turn.
    pub p_top: f64,
}

impl From<&StepStats> for CurveRow {
    fn from(s: &StepStats) -> Self {
        Self {
            step: s.step,
            mean_reward: s.mean_reward,
            mean_turns: s.mean_turns,
            expected_reward: s.expected_reward,
            p_top: s.first_turn_probs[CanonicalTag::Top.index()],
        }
    }
}

pub fn train_toy(env: ToyViewpointBandit, config: ToyTrainConfig, steps: usize) -> Result<Vec<CurveRow>, GrpoError> {
    let mut trainer = ToyTrainer::new(env, config)?;
    (0..steps).map(|_| trainer.step().map(|s| CurveRow::from(&s))).collect()
}

/// Trailing moving average; entry `i` averages `xs[i + 1 - window ..= i]`
/// and is present only once a full window is available.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || xs.len() < window {
        return Vec::new();
    }
    xs.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}

pub fn write_curve(rows: &[CurveRow], path: &Path) -> std::io::Result<()> {
    let mut csv = String::from("step,mean_reward,mean_turns,expected_reward,p_top\n");
    for r in rows {
        csv.push_str(&format!("{},{},{},{},{}\n", r.step, r.mean_reward, r.mean_turns, r.expected_reward, r.p_top));
    }
    std::fs::write(path, csv)
}
