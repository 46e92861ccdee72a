//! Runs a benchmark through the agent and aggregates accuracy and rewards.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use think3d_core::scoring::{reward, RewardBreakdown};

use super::bench::BenchmarkItem;
use crate::agent::{run_episode, AgentConfig, BackendError, RemoteBackend, RemoteConfig, Script, Trajectory, VlmBackend};
use crate::toolkit::{ImagePayload, Toolkit};

/// Builds a fresh backend for each (item, run).
pub trait BackendFactory: Sync {
    fn make(&self, item: &BenchmarkItem, run: usize) -> Result<Box<dyn VlmBackend>, BackendError>;
}

impl BackendFactory for Script {
    fn make(&self, item: &BenchmarkItem, _run: usize) -> Result<Box<dyn VlmBackend>, BackendError> {
        Ok(Box::new(self.backend_for(&item.id)?))
    }
}

impl BackendFactory for RemoteConfig {
    fn make(&self, _item: &BenchmarkItem, _run: usize) -> Result<Box<dyn VlmBackend>, BackendError> {
        Ok(Box::new(RemoteBackend::new(self.clone())?))
    }
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub repeats: usize,
    pub workers: usize,
    pub seed: u64,
    pub agent: AgentConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { repeats: 3, workers: 1, seed: 0, agent: AgentConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub id: String,
    pub task: String,
    pub run: usize,
    pub final_answer: String,
    pub gold: String,
    pub correct: bool,
    pub reward: RewardBreakdown,
    pub steps: usize,
    pub tool_calls: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub items: usize,
    pub accuracy: f64,
    pub run_accuracies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleBin {
    pub azimuth: f64,
    pub elevation: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub items: usize,
    pub repeats: usize,
    /// Mean of the per-run accuracies.
    pub accuracy: f64,
    pub run_accuracies: Vec<f64>,
    pub per_task: BTreeMap<String, TaskSummary>,
    pub mean_turns: f64,
    pub mean_tool_calls: f64,
    pub mean_reward: f64,
    pub failures: usize,
    pub angle_histogram: Vec<AngleBin>,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub summary: Summary,
    pub items: Vec<ItemResult>,
    pub trajectories: Vec<Trajectory>,
}

fn episode_seed(seed: u64, id: &str, run: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    h.update((run as u64).to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

fn load_images(item: &BenchmarkItem) -> Result<Vec<ImagePayload>, String> {
    item.images
        .iter()
        .map(|p| {
            let bytes = std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()))?;
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(ImagePayload::new(name, bytes))
        })
        .collect()
}

fn episode(item: &BenchmarkItem, factory: &dyn BackendFactory, toolkit: &Toolkit, agent: &AgentConfig) -> (Option<Trajectory>, Option<String>) {
    let images = match load_images(item) {
        Ok(i) => i,
        Err(e) => return (None, Some(e)),
    };
    let mut backend = match factory.make(item, agent.run) {
        Ok(b) => b,
        Err(e) => return (None, Some(e.to_string())),
    };
    match run_episode(&item.to_question(), &images, backend.as_mut(), toolkit, agent) {
        Ok(t) => (Some(t), None),
        Err(e) => {
            let msg = e.to_string();
            (e.partial().cloned(), Some(msg))
        }
    }
}

fn run_one(item: &BenchmarkItem, run: usize, factory: &dyn BackendFactory, toolkit: &Toolkit, config: &EvalConfig) -> (ItemResult, Option<Trajectory>) {
    let mut agent = config.agent.clone();
    agent.run = run;
    agent.sampling.seed = episode_seed(config.seed, &item.id, run);
    let (traj, error) = episode(item, factory, toolkit, &agent);
    let extraction = if error.is_none() { traj.as_ref().and_then(|t| t.extraction.as_ref()) } else { None };
    let r = reward(extraction, &item.gold);
    let traj = traj.map(|mut t| {
        t.gold = Some(item.gold.clone());
        t.reward = Some(r);
        t
    });
    let res = ItemResult {
        id: item.id.clone(),
        task: item.task.clone(),
        run,
        final_answer: traj.as_ref().map(|t| t.final_answer.clone()).unwrap_or_default(),
        gold: item.gold.clone(),
        correct: r.r_ans > 0.0,
        reward: r,
        steps: traj.as_ref().map_or(0, |t| t.steps),
        tool_calls: traj.as_ref().map_or(0, |t| t.tool_rounds),
        error,
    };
    (res, traj)
}

fn accuracy(results: &[&ItemResult]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    results.iter().filter(|r| r.correct).count() as f64 / results.len() as f64
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn angle_histogram<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>) -> Vec<AngleBin> {
    let mut all: Vec<(f64, f64)> = trajs.into_iter().flat_map(|t| t.view_actions().map(|(_, o)| (o.azimuth, o.elevation))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut bins: Vec<AngleBin> = Vec::new();
    for (azimuth, elevation) in all {
        match bins.last_mut() {
            Some(b) if b.azimuth == azimuth && b.elevation == elevation => b.count += 1,
            _ => bins.push(AngleBin { azimuth, elevation, count: 1 }),
        }
    }
    bins
}

/// Aggregates item results; order of `items` does not matter.
pub fn summarize(results: &[ItemResult], trajs: &[Trajectory], repeats: usize) -> Summary {
    let runs: Vec<usize> = (0..repeats.max(1)).collect();
    let run_acc = |filter: &dyn Fn(&ItemResult) -> bool| -> Vec<f64> {
        runs.iter().map(|&k| accuracy(&results.iter().filter(|r| r.run == k && filter(r)).collect::<Vec<_>>())).collect()
    };
    let run_accuracies = run_acc(&|_| true);
    let mut tasks: Vec<&str> = results.iter().map(|r| r.task.as_str()).collect();
    tasks.sort_unstable();
    tasks.dedup();
    let per_task = tasks
        .into_iter()
        .map(|task| {
            let ra = run_acc(&|r: &ItemResult| r.task == task);
            let items = results.iter().filter(|r| r.task == task && r.run == 0).count();
            (task.to_owned(), TaskSummary { items, accuracy: mean(ra.iter().copied()), run_accuracies: ra })
        })
        .collect();
    Summary {
        items: results.iter().filter(|r| r.run == 0).count(),
        repeats: runs.len(),
        accuracy: mean(run_accuracies.iter().copied()),
        run_accuracies,
        per_task,
        mean_turns: mean(results.iter().map(|r| r.steps as f64)),
        mean_tool_calls: mean(results.iter().map(|r| r.tool_calls as f64)),
        mean_reward: mean(results.iter().map(|r| r.reward.total)),
        failures: results.iter().filter(|r| r.error.is_some()).count(),
        angle_histogram: angle_histogram(trajs),
    }
}

/// Evaluates every item `repeats` times on up to `workers` threads. Results
/// are ordered by (run, item) regardless of scheduling.
pub fn run_eval(items: &[BenchmarkItem], factory: &dyn BackendFactory, toolkit: &Arc<Toolkit>, config: &EvalConfig) -> Report {
    let jobs: Vec<(usize, &BenchmarkItem)> = (0..config.repeats.max(1)).flat_map(|run| items.iter().map(move |it| (run, it))).collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(config.workers.max(1)).build().expect("thread pool");
    let outcomes: Vec<(ItemResult, Option<Trajectory>)> =
        pool.install(|| jobs.par_iter().map(|&(run, item)| run_one(item, run, factory, toolkit, config)).collect());
    let (results, trajs): (Vec<ItemResult>, Vec<Option<Trajectory>>) = outcomes.into_iter().unzip();
    let trajectories: Vec<Trajectory> = trajs.into_iter().flatten().collect();
    let summary = summarize(&results, &trajectories, config.repeats);
    Report { summary, items: results, trajectories }
}

pub const SUMMARY_FILE: &str = "summary.json";
pub const ITEMS_FILE: &str = "items.jsonl";
pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
pub const HISTOGRAM_FILE: &str = "angle_histogram.csv";

pub fn write_report(report: &Report, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut summary = serde_json::to_vec_pretty(&report.summary).map_err(std::io::Error::other)?;
    summary.push(b'\n');
    std::fs::write(dir.join(SUMMARY_FILE), summary)?;
    let mut items = String::new();
    for r in &report.items {
        items.push_str(&serde_json::to_string(r).map_err(std::io::Error::other)?);
        items.push('\n');
    }
    std::fs::write(dir.join(ITEMS_FILE), items)?;
    let mut csv = String::from("azimuth,elevation,count\n");
    for b in &report.summary.angle_histogram {
        csv.push_str(&format!("{},{},{}\n", b.azimuth, b.elevation, b.count));
    }
    std::fs::write(dir.join(HISTOGRAM_FILE), csv)?;
    crate::agent::write_trajectories(dir, TRAJECTORIES_FILE, &report.trajectories).map_err(std::io::Error::other)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{AgentConfig, ScriptedBackend};
    use crate::toolkit::{FixtureReconstructor, ToolkitConfig};
    use think3d_core::scoring::Choice;

    fn result(id: &str, task: &str, run: usize, answer: &str, gold: &str) -> ItemResult {
        let ex = (!answer.is_empty()).then(|| think3d_core::scoring::Extraction { label: answer.into(), format_ok: true });
        let r = reward(ex.as_ref(), gold);
        ItemResult {
            id: id.into(),
            task: task.into(),
            run,
            final_answer: answer.into(),
            gold: gold.into(),
            correct: r.r_ans > 0.0,
            reward: r,
            steps: 1,
            tool_calls: 0,
            error: None,
        }
    }

    #[test]
    fn accuracy_counts_absent_as_wrong() {
        let rs = [result("a", "t", 0, "A", "A"), result("b", "t", 0, "B", "B"), result("c", "u", 0, "A", "C"), result("d", "u", 0, "", "D")];
        let s = summarize(&rs, &[], 1);
        assert_eq!(s.accuracy, 0.5);
        assert_eq!(s.per_task["t"].accuracy, 1.0);
        assert_eq!(s.per_task["u"].accuracy, 0.0);
        assert!((s.mean_reward - (1.1 + 1.1 + 0.1) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn accuracy_ignores_item_order() {
        let mut rs: Vec<_> = (0..9).map(|i| result(&format!("i{i}"), ["x", "y"][i % 2], i % 3, if i % 4 == 0 { "A" } else { "B" }, "A")).collect();
        let a = summarize(&rs, &[], 3);
        rs.reverse();
        rs.swap(1, 5);
        assert_eq!(summarize(&rs, &[], 3), a);
    }

    struct Scripted(Vec<&'static str>);
    impl BackendFactory for Scripted {
        fn make(&self, _: &BenchmarkItem, _: usize) -> Result<Box<dyn VlmBackend>, BackendError> {
            Ok(Box::new(ScriptedBackend::new(self.0.iter().map(|s| s.to_string()).collect())))
        }
    }

    #[test]
    fn histogram_counts_scripted_views() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("f.png");
        std::fs::write(&img, b"frame").unwrap();
        let item = BenchmarkItem {
            id: "q".into(),
            question: "?".into(),
            choices: vec![Choice::new("A", "x"), Choice::new("B", "y")],
            images: vec![img.clone(), img],
            gold: "A".into(),
            task: "t".into(),
        };
        let v = |az: i32, el: i32| -> &'static str {
            Box::leak(format!(r#"<tool>{{"kind":"view","anchor":1,"mode":"global","azimuth":{az},"elevation":{el}}}</tool>"#).into_boxed_str())
        };
        let script = Scripted(vec![r#"<tool>{"kind":"reconstruct"}</tool>"#, v(0, 60), v(-45, 0), v(0, 60), "Final Answer: A"]);
        let kit = Arc::new(Toolkit::new(ToolkitConfig { max_turns: 8, ..Default::default() }, Arc::new(FixtureReconstructor::default())));
        let cfg = EvalConfig { repeats: 1, agent: AgentConfig { max_turns: 4, ..Default::default() }, ..Default::default() };
        let rep = run_eval(&[item], &script, &kit, &cfg);
        assert_eq!(
            rep.summary.angle_histogram,
            vec![AngleBin { azimuth: -45.0, elevation: 0.0, count: 1 }, AngleBin { azimuth: 0.0, elevation: 60.0, count: 2 }]
        );
        assert_eq!(rep.summary.accuracy, 1.0);
        assert_eq!(rep.items[0].reward.total, 1.1);
    }

    #[test]
    fn missing_images_are_recorded_not_fatal() {
        let item = BenchmarkItem {
            id: "gone".into(),
            question: "?".into(),
            choices: vec![Choice::new("A", "x")],
            images: vec!["/definitely/not/here.png".into()],
            gold: "A".into(),
            task: String::new(),
        };
        let kit = Arc::new(Toolkit::new(ToolkitConfig::default(), Arc::new(FixtureReconstructor::default())));
        let rep = run_eval(&[item], &Scripted(vec!["Final Answer: A"]), &kit, &EvalConfig { repeats: 2, ..Default::default() });
        assert_eq!(rep.summary.failures, 2);
        assert_eq!(rep.summary.accuracy, 0.0);
        assert!(rep.trajectories.is_empty());
    }
}
