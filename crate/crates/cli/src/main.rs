use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bikvil::bikac::{load_scene, reproduce, save_scene, ReproductionLog};
use bikvil::config::PipelineConfig;
use bikvil::evaluate::{aggregate, evaluate, table, Aggregate, Evaluation};
use bikvil::hmsr::HmsrGraph;
use bikvil::pipeline::{extract, report};
use bikvil::synthgen::{generate, generate_novel_scene, GroundTruth, ScenarioConfig, Task};
use bikvil::trajdata::{load_demonstration_set, read_json, save_demonstration_set, write_json};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

const EXIT_IO: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

#[derive(Parser, Debug)]
#[command(name = "bikvil", version, about = "Task-graph extraction from point-trajectory demonstrations and keypoint admittance reproduction")]
struct Cli {
    /// Pipeline configuration file (TOML, or JSON with a .json extension).
    #[arg(long, global = true, env = "BIKVIL_CONFIG")]
    config: Option<PathBuf>,
    /// Seed for every random draw of the command.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, short, global = true)]
    verbose: bool,
    /// Override one config value, e.g. `--set hmsr.end_fraction=0.2`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic demonstration set plus its ground truth.
    Generate(GenerateArgs),
    /// Extract the task graph of a demonstration set.
    Extract(ExtractArgs),
    /// Drive a scene with a task graph until convergence or the horizon.
    Reproduce(ReproduceArgs),
    /// Score graphs against ground truth.
    Evaluate(EvaluateArgs),
    /// Write a novel-instance scene of a task for reproduction.
    ExportScene(ExportSceneArgs),
}

#[derive(Args, Debug)]
struct ScenarioArgs {
    #[arg(long)]
    task: Task,
    /// Translation jitter of initial poses in meters.
    #[arg(long)]
    pose_jitter: Option<f64>,
    /// Relative amplitude of per-demo object scaling.
    #[arg(long)]
    shape_jitter: Option<f64>,
    /// Standard deviation of point noise in meters.
    #[arg(long)]
    noise: Option<f64>,
    /// Frames per demonstration.
    #[arg(long)]
    frames: Option<usize>,
}

impl ScenarioArgs {
    fn config(&self, n_demos: usize, seed: u64) -> ScenarioConfig {
        let mut c = ScenarioConfig::new(self.task, n_demos, seed);
        if let Some(v) = self.pose_jitter {
            c.pose_jitter = v;
        }
        if let Some(v) = self.shape_jitter {
            c.shape_jitter = v;
        }
        if let Some(v) = self.noise {
            c.noise_sigma = v;
        }
        if let Some(v) = self.frames {
            c.n_frames = v;
        }
        c
    }
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    demos: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    /// Demonstration-set directory.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Human-readable report; defaults to the graph path with a .txt extension.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReproduceArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Simulated seconds before giving up.
    #[arg(long, default_value_t = 30.0)]
    horizon: f64,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Graph files, paired in order with `--truth`.
    #[arg(long, required = true, num_args = 1..)]
    graph: Vec<PathBuf>,
    /// Ground-truth files or generated set directories.
    #[arg(long, required = true, num_args = 1..)]
    truth: Vec<PathBuf>,
    /// JSON report; printed after the table when unset.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExportSceneArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    out: PathBuf,
}

/// Provenance block echoed into every JSON output the CLI owns.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct Meta {
    command: String,
    seed: u64,
    config: PipelineConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    scenario: Option<ScenarioConfig>,
}

#[derive(Serialize, Deserialize)]
struct TruthFile {
    meta: Meta,
    ground_truth: GroundTruth,
}

#[derive(Serialize)]
struct ReproductionFile<'a> {
    meta: Meta,
    converged: bool,
    log: &'a ReproductionLog,
}

#[derive(Serialize)]
struct EvaluationFile {
    meta: Meta,
    runs: Vec<EvalRow>,
    aggregate: Aggregate,
}

#[derive(Serialize)]
struct EvalRow {
    graph: PathBuf,
    truth: PathBuf,
    evaluation: Evaluation,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(bikvil::Error),
    NotConverged,
}

impl From<bikvil::Error> for Failure {
    fn from(e: bikvil::Error) -> Self {
        Failure::Core(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn load_config(path: Option<&Path>, overrides: &[String]) -> std::result::Result<PipelineConfig, Failure> {
    let mut value = match path {
        None => toml::Value::try_from(PipelineConfig::default()).map_err(|e| Failure::Usage(e.to_string()))?,
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Core(bikvil::Error::Io { path: p.into(), source: e }))?;
            let schema = |msg: String| Failure::Core(bikvil::Error::Schema(format!("{}: {msg}", p.display())));
            if p.extension().is_some_and(|x| x == "json") {
                let cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| schema(e.to_string()))?;
                toml::Value::try_from(cfg).map_err(|e| schema(e.to_string()))?
            } else {
                let table: toml::Table = toml::from_str(&text).map_err(|e| schema(e.to_string()))?;
                toml::Value::Table(table)
            }
        }
    };
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {item}")))?;
        let parsed = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut node = &mut value;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = node
                .as_table_mut()
                .ok_or_else(|| Failure::Usage(format!("--set {key}: {part} is not inside a section")))?;
            if i + 1 == parts.len() {
                table.insert(part.to_string(), parsed.clone());
                break;
            }
            node = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        }
    }
    let cfg: PipelineConfig = value
        .try_into()
        .map_err(|e: toml::de::Error| Failure::Core(bikvil::Error::Schema(format!("config: {}", e.message()))))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Accepts a ground-truth file, a bare ground truth, or a set directory.
fn load_truth(path: &Path) -> bikvil::Result<GroundTruth> {
    let file = if path.is_dir() { path.join(GROUND_TRUTH_FILE) } else { path.to_path_buf() };
    let value: serde_json::Value = read_json(&file)?;
    let inner = value.get("ground_truth").cloned().unwrap_or(value);
    serde_json::from_value(inner).map_err(|e| bikvil::Error::Schema(format!("{}: {e}", file.display())))
}

fn run(cli: &Cli) -> Outcome {
    let cfg = load_config(cli.config.as_deref(), &cli.overrides)?;
    let meta = |command: &str, scenario: Option<ScenarioConfig>| Meta {
        command: command.into(),
        seed: cli.seed,
        config: cfg.clone(),
        scenario,
    };
    match &cli.command {
        Command::Generate(a) => {
            let sc = a.scenario.config(a.demos as usize, cli.seed);
            sc.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let (set, truth) = generate(&sc)?;
            save_demonstration_set(&set, &a.out)?;
            write_json(&a.out.join(GROUND_TRUTH_FILE), &TruthFile { meta: meta("generate", Some(sc)), ground_truth: truth })?;
            info!("wrote {} demos to {}", set.demos.len(), a.out.display());
        }
        Command::Extract(a) => {
            let set = load_demonstration_set(&a.input)?;
            let ex = extract(&set, &cfg)?;
            write_json(&a.out, &ex.graph)?;
            let text = report(&ex.graph);
            let report_path = a.report.clone().unwrap_or_else(|| a.out.with_extension("txt"));
            std::fs::write(&report_path, &text).map_err(|e| bikvil::Error::Io { path: report_path.clone(), source: e })?;
            print!("{text}");
        }
        Command::Reproduce(a) => {
            if !(a.horizon >= 0.0 && a.horizon.is_finite()) {
                return Err(Failure::Usage(format!("--horizon must be >= 0, got {}", a.horizon)));
            }
            let graph: HmsrGraph = read_json(&a.graph)?;
            let scene = load_scene(&a.scene)?;
            let mut params = cfg.bikac.clone();
            params.seed = cli.seed;
            let log = reproduce(&graph, &scene, &params, a.horizon)?;
            write_json(&a.out, &ReproductionFile { meta: meta("reproduce", None), converged: log.converged, log: &log })?;
            for (c, v) in log.constraints.iter().zip(&log.verdicts) {
                let angle = v.final_residual.angle.map(|x| format!(" {:.2} deg", x.to_degrees())).unwrap_or_default();
                println!(
                    "{:<10} {:<10} {:<4} top={:<5} residual {:.4} m{angle} {}",
                    c.master,
                    c.slave,
                    c.kind.tag(),
                    c.top_priority,
                    v.final_residual.distance,
                    if v.success { "ok" } else { "open" }
                );
            }
            println!("converged: {} after {:.2} s", log.converged, log.sim_time);
            if !log.converged {
                return Err(Failure::NotConverged);
            }
        }
        Command::Evaluate(a) => {
            if a.graph.len() != a.truth.len() {
                return Err(Failure::Usage(format!("{} graphs but {} truths", a.graph.len(), a.truth.len())));
            }
            let mut rows = Vec::new();
            for (g, t) in a.graph.iter().zip(&a.truth) {
                let graph: HmsrGraph = read_json(g)?;
                let truth = load_truth(t)?;
                rows.push(EvalRow { graph: g.clone(), truth: t.clone(), evaluation: evaluate(&graph, &truth)? });
            }
            let labelled: Vec<(String, Evaluation)> =
                rows.iter().map(|r| (r.graph.display().to_string(), r.evaluation.clone())).collect();
            print!("{}", table(&labelled));
            let runs: Vec<Evaluation> = rows.iter().map(|r| r.evaluation.clone()).collect();
            let file = EvaluationFile { meta: meta("evaluate", None), aggregate: aggregate(&runs), runs: rows };
            match &a.out {
                Some(p) => write_json(p, &file)?,
                None => println!("{}", serde_json::to_string_pretty(&file).expect("serializable report")),
            }
        }
        Command::ExportScene(a) => {
            let sc = a.scenario.config(2, cli.seed);
            sc.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let scene = generate_novel_scene(&sc, cli.seed)?;
            save_scene(&scene, &a.out)?;
            info!("wrote {} bodies to {}", scene.bodies.len(), a.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_IO)
        }
        Err(Failure::NotConverged) => {
            eprintln!("error: reproduction did not converge");
            ExitCode::from(EXIT_NOT_CONVERGED)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_typed_values() {
        let sets = ["hmsr.end_fraction=0.25".to_string(), "preprocess.resample=80".into(), "bikac.seed=9".into()];
        let cfg = load_config(None, &sets).unwrap();
        assert_eq!(cfg.hmsr.end_fraction, 0.25);
        assert_eq!(cfg.preprocess.resample, Some(80));
        assert_eq!(cfg.bikac.seed, 9);
    }

    #[test]
    fn no_overrides_gives_defaults() {
        assert_eq!(load_config(None, &[]).unwrap(), PipelineConfig::default());
    }

    #[test]
    fn bad_overrides_are_rejected() {
        assert!(matches!(load_config(None, &["hmsr".into()]), Err(Failure::Usage(_))));
        assert!(matches!(load_config(None, &["hmsr.end_fraction.x=1".into()]), Err(Failure::Usage(_))));
        assert!(matches!(load_config(None, &["vmp.n_basis=many".into()]), Err(Failure::Core(_))));
    }
}
