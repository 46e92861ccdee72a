use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use think3d::agent::{run_episode, write_trajectories, AgentConfig, PromptSet, RemoteBackend, RemoteConfig, Script, VlmBackend};
use think3d::eval::{load_benchmark, parse_question, run_eval, write_report, BackendFactory, EvalConfig};
use think3d::io::{load_scene, scene_hash, write_png, CameraRecord};
use think3d::rl::{export_rollout_dataset, pre_render_canonical, read_trajectory_dir, train_toy, write_curve, write_export};
use think3d::toolkit::{reconstructor_from_config, ImagePayload, Toolkit, ToolkitConfig};
use think3d_core::rl::{GrpoConfig, ToyTrainConfig, ToyViewpointBandit};
use think3d_core::scoring::reward;
use think3d_core::{render::render, AngleOffsets, RenderMode, RenderOptions};

#[derive(Parser)]
#[command(name = "think3d", version, about = "Point-cloud viewpoint tools for spatial question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scene file utilities.
    #[command(subcommand)]
    Scene(SceneCmd),
    /// Render one virtual view of a scene.
    Render(RenderArgs),
    /// Run a single agent episode.
    #[command(subcommand)]
    Episode(EpisodeCmd),
    /// Run a benchmark.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Training utilities.
    #[command(subcommand)]
    Rl(RlCmd),
    /// Serve the toolkit over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SceneCmd {
    /// Load a point cloud and camera sidecar and print a summary.
    Validate { ply: PathBuf, cams: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Global,
    Ego,
}

impl From<Mode> for RenderMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Global => RenderMode::Global,
            Mode::Ego => RenderMode::Ego,
        }
    }
}

#[derive(Args)]
struct RenderFlags {
    /// Splat radius in pixels.
    #[arg(long)]
    splat: Option<u32>,
    /// Dolly-back distance in world units.
    #[arg(long)]
    retreat: Option<f64>,
    /// Ego-mode cone half-angle in degrees.
    #[arg(long)]
    ego_half_angle: Option<f64>,
}

impl RenderFlags {
    fn apply(&self, mut o: RenderOptions) -> RenderOptions {
        if let Some(s) = self.splat {
            o.splat_radius = s;
        }
        if let Some(r) = self.retreat {
            o.retreat = r;
        }
        if let Some(h) = self.ego_half_angle {
            o.ego_half_angle = h;
        }
        o
    }
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    cams: PathBuf,
    #[arg(long, default_value_t = 1)]
    anchor: usize,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    azimuth: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    elevation: f64,
    #[arg(long, value_enum, default_value = "global")]
    mode: Mode,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: RenderFlags,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Remote,
    Scripted,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, value_enum, default_value = "scripted")]
    backend: BackendKind,
    /// Script JSON for the scripted backend.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Remote backend settings (JSON or TOML).
    #[arg(long)]
    remote_config: Option<PathBuf>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
}

impl BackendArgs {
    fn remote(&self) -> Result<RemoteConfig> {
        let mut cfg = match &self.remote_config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                if p.extension().is_some_and(|e| e == "json") {
                    serde_json::from_str(&text)?
                } else {
                    toml::from_str(&text)?
                }
            }
            None => RemoteConfig::default(),
        };
        if let Some(e) = &self.endpoint {
            cfg.endpoint = e.clone();
        }
        if let Some(m) = &self.model {
            cfg.model = m.clone();
        }
        Ok(cfg)
    }

    fn script(&self) -> Result<Script> {
        let path = self.script.as_ref().context("--script is required for the scripted backend")?;
        Ok(Script::load(path)?)
    }
}

#[derive(Args)]
struct AgentArgs {
    #[arg(long, default_value_t = 3)]
    max_turns: usize,
    /// `default`, `rl`, or a directory of templates.
    #[arg(long, default_value = "default")]
    prompts: String,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Toolkit configuration (TOML, or JSON by extension).
    #[arg(long)]
    config: Option<PathBuf>,
}

impl AgentArgs {
    fn agent(&self) -> Result<AgentConfig> {
        let mut cfg = AgentConfig { max_turns: self.max_turns, prompts: PromptSet::resolve(&self.prompts)?, ..Default::default() };
        if let Some(t) = self.temperature {
            cfg.sampling.temperature = t;
        }
        if let Some(s) = self.seed {
            cfg.sampling.seed = s;
        }
        Ok(cfg)
    }

    fn toolkit(&self) -> Result<Arc<Toolkit>> {
        let mut cfg = toolkit_config(self.config.as_deref())?;
        cfg.max_turns = cfg.max_turns.max(self.max_turns + 1);
        Ok(Arc::new(Toolkit::new(cfg.clone(), reconstructor_from_config(&cfg)?)))
    }
}

#[derive(Subcommand)]
enum EpisodeCmd {
    Run {
        /// Question JSON: id, question, choices and optional gold.
        #[arg(long)]
        question: PathBuf,
        /// Directory of input frames, used in file-name order.
        #[arg(long)]
        images: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        agent: AgentArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum EvalCmd {
    Run {
        #[arg(long)]
        bench: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        agent: AgentArgs,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        report: PathBuf,
    },
}

#[derive(Subcommand)]
enum RlCmd {
    /// Train the tabular viewpoint policy and write its reward curve.
    ToyTrain {
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 8)]
        group: usize,
        #[arg(long, default_value_t = 0.2)]
        clip: f64,
        #[arg(long, default_value_t = 0.05)]
        kl: f64,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Convert canonical-action trajectories into a training set.
    Export {
        /// Trajectory file or directory of `*.jsonl` files.
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Benchmark whose question text fills the prompt segments.
        #[arg(long)]
        bench: Option<PathBuf>,
    },
    /// Render and cache the left, right and top views of a scene.
    Canonical {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        cams: PathBuf,
        #[arg(long)]
        cache: PathBuf,
        #[command(flatten)]
        flags: RenderFlags,
    },
}

fn toolkit_config(path: Option<&Path>) -> Result<ToolkitConfig> {
    let cfg = match path {
        Some(p) => ToolkitConfig::from_file(p)?,
        None => ToolkitConfig::default(),
    }
    .with_env();
    cfg.validate()?;
    Ok(cfg)
}

fn read_frames(dir: &Path) -> Result<Vec<ImagePayload>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| ["png", "jpg", "jpeg"].iter().any(|x| e.eq_ignore_ascii_case(x))))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no images in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| Ok(ImagePayload::new(p.file_name().unwrap_or_default().to_string_lossy(), std::fs::read(p)?)))
        .collect()
}

fn scripted_or_remote(args: &BackendArgs) -> Result<Box<dyn BackendFactory>> {
    Ok(match args.backend {
        BackendKind::Scripted => Box::new(args.script()?),
        BackendKind::Remote => Box::new(args.remote()?),
    })
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Scene(SceneCmd::Validate { ply, cams }) => {
            let scene = load_scene(&ply, &cams)?;
            println!("points: {}", scene.points.len());
            println!("views: {}", scene.view_count());
            println!("hash: {}", scene_hash(&scene));
        }
        Command::Render(a) => {
            let scene = load_scene(&a.scene, &a.cams)?;
            let opts = a.flags.apply(RenderOptions::default());
            let offsets = AngleOffsets { azimuth: a.azimuth, elevation: a.elevation };
            let view = render(&scene, a.anchor, offsets, a.mode.into(), &opts)?;
            write_png(&view.image, &a.out)?;
            let record = CameraRecord::from_pose(a.anchor, &view.camera, None);
            println!("{}", serde_json::json!({ "covered_pixels": view.covered_count(), "camera": record }));
        }
        Command::Episode(EpisodeCmd::Run { question, images, backend, agent, out }) => {
            let (q, gold) = parse_question(&std::fs::read_to_string(&question).with_context(|| format!("reading {}", question.display()))?)?;
            let frames = read_frames(&images)?;
            let mut model: Box<dyn VlmBackend> = match backend.backend {
                BackendKind::Scripted => Box::new(backend.script()?.backend_for(&q.id)?),
                BackendKind::Remote => Box::new(RemoteBackend::new(backend.remote()?)?),
            };
            let toolkit = agent.toolkit()?;
            let mut traj = run_episode(&q, &frames, model.as_mut(), &toolkit, &agent.agent()?)?;
            if let Some(g) = gold {
                traj.reward = Some(reward(traj.extraction.as_ref(), &g));
                traj.gold = Some(g);
            }
            let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            let name = out.file_name().context("--out needs a file name")?.to_string_lossy();
            write_trajectories(dir, &name, std::slice::from_ref(&traj))?;
            println!("{}", serde_json::json!({ "final_answer": traj.final_answer, "steps": traj.steps, "tool_rounds": traj.tool_rounds, "reward": traj.reward }));
        }
        Command::Eval(EvalCmd::Run { bench, backend, agent, repeats, workers, report }) => {
            let items = load_benchmark(&bench)?;
            let factory = scripted_or_remote(&backend)?;
            let cfg = EvalConfig { repeats, workers, seed: agent.seed.unwrap_or(0), agent: agent.agent()? };
            let rep = run_eval(&items, factory.as_ref(), &agent.toolkit()?, &cfg);
            write_report(&rep, &report)?;
            println!("{}", serde_json::to_string_pretty(&rep.summary)?);
        }
        Command::Rl(RlCmd::ToyTrain { steps, group, clip, kl, lr, seed, curve }) => {
            let grpo = GrpoConfig { group_size: group, clip_eps: clip, kl_weight: kl, learning_rate: lr, ..Default::default() };
            let rows = train_toy(ToyViewpointBandit::default(), ToyTrainConfig { grpo, seed, ..Default::default() }, steps)?;
            if let Some(path) = curve {
                write_curve(&rows, &path)?;
            }
            if let Some(last) = rows.last() {
                println!("step {} expected_reward {:.4} p_top {:.4} mean_turns {:.3}", last.step, last.expected_reward, last.p_top, last.mean_turns);
            }
        }
        Command::Rl(RlCmd::Export { traj, out, bench }) => {
            let questions: BTreeMap<String, String> = match bench {
                Some(b) => load_benchmark(&b)?.into_iter().map(|i| (i.id.clone(), i.to_question().prompt_text())).collect(),
                None => BTreeMap::new(),
            };
            let mut records = Vec::new();
            for (root, trajs) in read_trajectory_dir(&traj)? {
                records.extend(export_rollout_dataset(&trajs, Some(&root), &questions)?);
            }
            write_export(&records, &out)?;
            println!("exported {} rollouts to {}", records.len(), out.display());
        }
        Command::Rl(RlCmd::Canonical { scene, cams, cache, flags }) => {
            let scene = load_scene(&scene, &cams)?;
            for v in pre_render_canonical(&scene, &flags.apply(RenderOptions::default()), Some(&cache))? {
                let path = v.path.as_deref().map(Path::display).map(|d| d.to_string()).unwrap_or_default();
                println!("{} {} {}", v.tag.as_str(), if v.cached { "cached" } else { "rendered" }, path);
            }
        }
        Command::Serve { addr, config } => {
            let cfg = toolkit_config(config.as_deref())?;
            let toolkit = Arc::new(Toolkit::new(cfg.clone(), reconstructor_from_config(&cfg)?));
            tokio::runtime::Runtime::new()?.block_on(think3d::toolkit::http::serve(addr, toolkit))?;
        }
    }
    Ok(())
}
