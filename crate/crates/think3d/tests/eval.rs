use std::path::{Path, PathBuf};
use std::sync::Arc;

use think3d::agent::{read_trajectories, replay_backend, run_episode, AgentConfig, Script};
use think3d::eval::{load_benchmark, run_eval, write_report, AngleBin, BenchmarkItem, EvalConfig, Report};
use think3d::toolkit::{FixtureReconstructor, ImagePayload, Toolkit, ToolkitConfig};

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/bench")
}

fn bench() -> Vec<BenchmarkItem> {
    load_benchmark(&fixture_dir().join("bench.jsonl")).unwrap()
}

fn script() -> Script {
    Script::load(&fixture_dir().join("script.json")).unwrap()
}

fn toolkit() -> Arc<Toolkit> {
    Arc::new(Toolkit::new(ToolkitConfig::default(), Arc::new(FixtureReconstructor::default())))
}

fn eval(items: &[BenchmarkItem], workers: usize) -> Report {
    run_eval(items, &script(), &toolkit(), &EvalConfig { repeats: 3, workers, ..Default::default() })
}

fn images(item: &BenchmarkItem) -> Vec<ImagePayload> {
    item.images
        .iter()
        .map(|p| ImagePayload::new(p.file_name().unwrap().to_string_lossy(), std::fs::read(p).unwrap()))
        .collect()
}

#[test]
fn fixture_accuracy_and_histogram() {
    let rep = eval(&bench(), 1);
    let s = &rep.summary;
    assert_eq!(s.items, 20);
    assert_eq!(s.repeats, 3);
    assert_eq!(s.run_accuracies, vec![0.6; 3]);
    assert!((s.accuracy - 0.6).abs() < 1e-12);
    assert_eq!(s.failures, 0);
    assert_eq!(
        s.angle_histogram,
        vec![
            AngleBin { azimuth: -45.0, elevation: 0.0, count: 12 },
            AngleBin { azimuth: 0.0, elevation: 60.0, count: 24 },
            AngleBin { azimuth: 45.0, elevation: 0.0, count: 12 },
        ]
    );
    for r in &rep.items {
        let twin = rep.items.iter().find(|o| o.id == r.id && o.run == 0).unwrap();
        assert_eq!((&r.final_answer, r.reward, r.steps), (&twin.final_answer, twin.reward, twin.steps));
    }
}

#[test]
fn worker_count_does_not_change_outputs() {
    let items = bench();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_report(&eval(&items, 1), a.path()).unwrap();
    write_report(&eval(&items, 8), b.path()).unwrap();
    for file in ["trajectories.jsonl", "items.jsonl", "summary.json", "angle_histogram.csv"] {
        assert_eq!(std::fs::read(a.path().join(file)).unwrap(), std::fs::read(b.path().join(file)).unwrap(), "{file}");
    }
    let trajs = read_trajectories(&a.path().join("trajectories.jsonl")).unwrap();
    assert_eq!(trajs.len(), 60);
}

#[test]
fn permuting_items_keeps_accuracy() {
    let mut items = bench();
    let base = eval(&items, 2).summary;
    items.reverse();
    items.rotate_left(7);
    let permuted = eval(&items, 2).summary;
    assert_eq!(base.accuracy, permuted.accuracy);
    assert_eq!(base.per_task, permuted.per_task);
    assert_eq!(base.angle_histogram, permuted.angle_histogram);
}

#[test]
fn replaying_recorded_outputs_reproduces_answers() {
    let items = bench();
    let rep = run_eval(&items, &script(), &toolkit(), &EvalConfig { repeats: 1, ..Default::default() });
    let kit = toolkit();
    for traj in &rep.trajectories {
        let item = items.iter().find(|i| i.id == traj.question_id).unwrap();
        let mut backend = replay_backend(traj);
        let again = run_episode(&item.to_question(), &images(item), &mut backend, &kit, &AgentConfig::default()).unwrap();
        assert_eq!(again.final_answer, traj.final_answer, "{}", traj.question_id);
        assert_eq!(again.turns.len(), traj.turns.len());
        assert_eq!(serde_json::to_value(&again.turns).unwrap(), serde_json::to_value(&traj.turns).unwrap());
    }
    assert_eq!(kit.session_count(), 0);
}
