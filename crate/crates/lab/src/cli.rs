//! The `overload` command line.
//!
//! Every subcommand resolves its settings from built-in defaults, then an
//! optional `--config` JSON file, then command-line flags, and echoes the
//! result to `manifest.json` in the output directory. A manifest can be fed
//! back through `--config` to repeat the run.

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use overload_core::attack::{ensemble_attack, AttackConfig, EnsembleMode, LossKind, StepMode};
use overload_core::costmodel::{benchmark, fit, loglog_slope, BenchmarkPlan, CostModelParams, FitOptions, Scenario, TimingSample};
use overload_core::detector::{forward, init_weights, ImageTensor, ARCH_VERSION};
use overload_core::geometry::OverlapMetric;
use overload_core::nms::{nms_greedy, nms_matrix, CandidateSet, NmsConfig};
use overload_core::pipeline_sim::{simulate_with, synthesize_workload, SimConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::clock::StdClock;
use crate::error::{LabError, LabResult};
use crate::formats::{self, FitRecord, NmsReportRecord, SimSummary};
use crate::measured::MeasuredNms;

#[derive(Debug, Parser)]
#[command(name = "overload", version, about = "Latency attacks on NMS: benchmarks, attacks and pipeline simulation")]
pub struct Cli {
    /// Base seed for every generator.
    #[arg(long, global = true, env = "OVERLOAD_SEED")]
    pub seed: Option<u64>,
    /// JSON settings file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// What to print on stdout.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Table,
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Time NMS over candidate counts and fit the latency model.
    Bench(BenchArgs),
    /// Craft an adversarial image against one or more micro-detectors.
    Attack(AttackArgs),
    /// Run a candidate CSV through NMS.
    Nms(NmsArgs),
    /// Simulate the pipeline over adversarial ratios.
    Simulate(SimulateArgs),
    /// Write synthetic candidate sets, noise images or detector outputs.
    Gen(GenArgs),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Common {
    pub seed: u64,
    pub out: PathBuf,
    pub format: Format,
}

impl Default for Common {
    fn default() -> Self {
        Self { seed: 0, out: PathBuf::from("out"), format: Format::Table }
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a, T> {
    command: &'a str,
    version: &'a str,
    arch_version: &'a str,
    settings: &'a T,
}

macro_rules! set {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src {
            $dst = v;
        }
    };
}

/// Read a settings file, accepting either bare settings or a manifest.
fn load_settings<T: DeserializeOwned + Default>(path: Option<&Path>) -> LabResult<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    let mut value: Value = serde_json::from_str(&text).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
    if value.get("command").is_some() {
        if let Some(inner) = value.get_mut("settings") {
            value = inner.take();
        }
    }
    serde_json::from_value(value).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))
}

fn apply_common(common: &mut Common, cli: &Cli) {
    set!(common.seed, cli.seed);
    set!(common.out, cli.out.clone());
    set!(common.format, cli.format);
}

fn write_manifest<T: Serialize>(out: &Path, command: &str, settings: &T) -> LabResult<()> {
    let m = Manifest { command, version: env!("CARGO_PKG_VERSION"), arch_version: ARCH_VERSION, settings };
    formats::write_json(&out.join("manifest.json"), &m)
}

fn print_json<T: Serialize + ?Sized>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

pub fn run(cli: Cli) -> LabResult<()> {
    match &cli.command {
        Command::Bench(a) => cmd_bench(&cli, a),
        Command::Attack(a) => cmd_attack(&cli, a),
        Command::Nms(a) => cmd_nms(&cli, a),
        Command::Simulate(a) => cmd_simulate(&cli, a),
        Command::Gen(a) => cmd_gen(&cli, a),
    }
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    s.parse().map_err(|e: overload_core::Error| e.to_string())
}

// ---- bench ----

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Candidate counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// worst, best or random; comma separated.
    #[arg(long = "scenario", alias = "scenarios", value_delimiter = ',', value_parser = parse_scenario)]
    pub scenarios: Option<Vec<Scenario>>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub k_classes: Option<usize>,
    /// Abort when a single NMS run exceeds this many seconds.
    #[arg(long)]
    pub safety_limit_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSettings {
    #[serde(flatten)]
    pub common: Common,
    pub sizes: Vec<usize>,
    pub scenarios: Vec<Scenario>,
    pub repeats: usize,
    pub k_classes: usize,
    pub safety_limit_s: f64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            common: Common::default(),
            sizes: vec![100, 250, 500, 1000, 2000, 4000, 8000],
            scenarios: Scenario::ALL.to_vec(),
            repeats: 3,
            k_classes: 80,
            safety_limit_s: 30.0,
        }
    }
}

fn cmd_bench(cli: &Cli, a: &BenchArgs) -> LabResult<()> {
    let mut s: BenchSettings = load_settings(cli.config.as_deref())?;
    apply_common(&mut s.common, cli);
    set!(s.sizes, a.sizes.clone());
    set!(s.scenarios, a.scenarios.clone());
    set!(s.repeats, a.repeats);
    set!(s.k_classes, a.k_classes);
    set!(s.safety_limit_s, a.safety_limit_s);
    if !(s.safety_limit_s > 0.0) {
        return Err(LabError::Config("safety_limit_s must be positive".into()));
    }
    let out = s.common.out.clone();
    write_manifest(&out, "bench", &s)?;

    let plan = BenchmarkPlan {
        sizes: s.sizes.clone(),
        scenarios: s.scenarios.clone(),
        repeats: s.repeats,
        k_classes: s.k_classes,
        seed: s.common.seed,
        safety_limit: Duration::from_secs_f64(s.safety_limit_s),
    };
    let nms_cfg = NmsConfig { timeout: None, ..NmsConfig::default() };
    let samples = benchmark(&plan, &nms_cfg, &StdClock::new())?;
    formats::write_samples(&out.join("samples.csv"), &samples)?;

    let mut fits = Vec::new();
    let mut failure = None;
    for &scenario in &s.scenarios {
        let subset: Vec<TimingSample> = samples.iter().copied().filter(|t| t.scenario == scenario).collect();
        match fit(&subset, &FitOptions::default()) {
            Ok(f) => {
                let rec = FitRecord::from(&f);
                formats::write_json(&out.join(format!("fit_{}.json", scenario.name())), &rec)?;
                fits.push((scenario, Some(rec), loglog_slope(&subset)));
            }
            Err(e) => {
                fits.push((scenario, None, loglog_slope(&subset)));
                failure.get_or_insert(e);
            }
        }
    }

    match s.common.format {
        Format::Table => print_bench_table(&s, &samples, &fits),
        Format::Csv => formats::write_samples_to(std::io::stdout(), &samples).map_err(|e| LabError::data("<stdout>", e.to_string()))?,
        Format::Json => {
            let v: Vec<Value> = fits
                .iter()
                .map(|(sc, rec, slope)| serde_json::json!({"scenario": sc.name(), "fit": rec, "loglog_slope": slope}))
                .collect();
            print_json(&v);
        }
    }
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn print_bench_table(s: &BenchSettings, samples: &[TimingSample], fits: &[(Scenario, Option<FitRecord>, Option<f64>)]) {
    print!("{:>8}", "n");
    for sc in &s.scenarios {
        print!(" {:>12}", format!("{} ms", sc.name()));
    }
    println!();
    for &n in &s.sizes {
        print!("{n:>8}");
        for &sc in &s.scenarios {
            let ms = samples.iter().find(|t| t.n == n && t.scenario == sc).map_or(f64::NAN, |t| t.elapsed.as_secs_f64() * 1e3);
            print!(" {ms:>12.4}");
        }
        println!();
    }
    println!();
    for (sc, rec, slope) in fits {
        let slope = slope.map_or("-".to_string(), |v| format!("{v:.3}"));
        match rec {
            Some(r) => println!(
                "{:<7} alpha={:.4e} s  t_base={:.1} us  n_break={}  r2={:.4}  loglog={slope}",
                sc.name(),
                r.alpha,
                r.t_base_us,
                r.n_break,
                r.r2
            ),
            None => println!("{:<7} fit degenerate  loglog={slope}", sc.name()),
        }
    }
}

// ---- attack ----

#[derive(Debug, Args)]
pub struct AttackArgs {
    /// OVL1 image to attack; seeded noise when absent.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Seed of the noise image (defaults to --seed).
    #[arg(long)]
    pub seed_image: Option<u64>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    /// Detector weight seed.
    #[arg(long)]
    pub model_seed: Option<u64>,
    /// Weight seeds of an ensemble, comma separated; overrides --model-seed.
    #[arg(long, value_delimiter = ',')]
    pub ensemble: Option<Vec<u64>>,
    #[arg(long, value_enum)]
    pub ensemble_mode: Option<EnsembleArg>,
    #[arg(long = "epsilon", visible_alias = "eps")]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long = "steps", visible_alias = "k")]
    pub steps: Option<usize>,
    #[arg(long)]
    pub grid_m: Option<usize>,
    #[arg(long, value_parser = |s: &str| s.parse::<LossKind>().map_err(|e| e.to_string()))]
    pub loss: Option<LossKind>,
    #[arg(long, value_enum)]
    pub step_mode: Option<StepArg>,
    #[arg(long)]
    pub t_conf: Option<f64>,
    #[arg(long)]
    pub no_spatial_attention: bool,
    #[arg(long)]
    pub stagnation_window: Option<usize>,
    #[arg(long)]
    pub stagnation_decay: Option<f64>,
    #[arg(long)]
    pub w_min: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EnsembleArg {
    Average,
    RoundRobin,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StepArg {
    Sign,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackSettings {
    #[serde(flatten)]
    pub common: Common,
    pub image: Option<PathBuf>,
    pub seed_image: Option<u64>,
    pub height: usize,
    pub width: usize,
    pub model_seed: u64,
    pub ensemble: Vec<u64>,
    pub ensemble_mode: EnsembleMode,
    #[serde(flatten)]
    pub attack: AttackConfig,
}

impl Default for AttackSettings {
    fn default() -> Self {
        Self {
            common: Common::default(),
            image: None,
            seed_image: None,
            height: 64,
            width: 64,
            model_seed: 1,
            ensemble: Vec::new(),
            ensemble_mode: EnsembleMode::Average,
            attack: AttackConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AttackSummary {
    pub model_seeds: Vec<u64>,
    pub clean_counts: Vec<usize>,
    pub adv_counts: Vec<usize>,
    pub clean_count: usize,
    pub adv_count: usize,
    /// Survivors of NMS on the first model's output.
    pub clean_boxes: usize,
    pub adv_boxes: usize,
    pub clean_nms_us: f64,
    pub adv_nms_us: f64,
    pub steps: usize,
    pub linf: f64,
}

fn cmd_attack(cli: &Cli, a: &AttackArgs) -> LabResult<()> {
    let mut s: AttackSettings = load_settings(cli.config.as_deref())?;
    apply_common(&mut s.common, cli);
    if a.image.is_some() {
        s.image = a.image.clone();
    }
    if a.seed_image.is_some() {
        s.seed_image = a.seed_image;
    }
    set!(s.height, a.height);
    set!(s.width, a.width);
    set!(s.model_seed, a.model_seed);
    set!(s.ensemble, a.ensemble.clone());
    set!(
        s.ensemble_mode,
        a.ensemble_mode.map(|m| match m {
            EnsembleArg::Average => EnsembleMode::Average,
            EnsembleArg::RoundRobin => EnsembleMode::RoundRobin,
        })
    );
    let c = &mut s.attack;
    set!(c.epsilon, a.epsilon);
    set!(c.eta, a.eta);
    set!(c.steps, a.steps);
    set!(c.grid_m, a.grid_m);
    set!(c.loss, a.loss);
    set!(
        c.step_mode,
        a.step_mode.map(|m| match m {
            StepArg::Sign => StepMode::Sign,
            StepArg::Raw => StepMode::Raw,
        })
    );
    set!(c.t_conf, a.t_conf);
    if a.no_spatial_attention {
        c.spatial_attention = false;
    }
    set!(c.stagnation_window, a.stagnation_window);
    set!(c.stagnation_decay, a.stagnation_decay);
    set!(c.w_min, a.w_min);
    s.attack.validate()?;
    if s.image.is_none() && s.seed_image.is_none() {
        s.seed_image = Some(s.common.seed);
    }
    let out = s.common.out.clone();
    write_manifest(&out, "attack", &s)?;

    let x_org = match &s.image {
        Some(p) => formats::read_tensor(p)?,
        None => ImageTensor::noise(s.height, s.width, 3, s.seed_image.unwrap_or(s.common.seed)),
    };
    let seeds = if s.ensemble.is_empty() { vec![s.model_seed] } else { s.ensemble.clone() };
    let models: Vec<_> = seeds.iter().map(|&seed| init_weights(seed)).collect();
    let (x_adv, trace) = ensemble_attack(&models, &x_org, &s.attack, s.ensemble_mode)?;
    formats::write_tensor(&out.join("x_adv.ovl1"), &x_adv)?;
    formats::write_attack_trace(&out.join("trace.csv"), &trace)?;

    let clock = StdClock::new();
    let nms_cfg = NmsConfig { t_conf: s.attack.t_conf, ..NmsConfig::default() };
    let run_nms = |x: &ImageTensor| -> LabResult<(usize, f64)> {
        let report = nms_matrix(&forward(&models[0], x)?.decode("attack"), &nms_cfg, &clock);
        Ok((report.kept.len(), report.elapsed.as_nanos() as f64 / 1e3))
    };
    let (clean_boxes, clean_nms_us) = run_nms(&x_org)?;
    let (adv_boxes, adv_nms_us) = run_nms(&x_adv)?;
    let summary = AttackSummary {
        model_seeds: seeds,
        clean_count: trace.clean_count(),
        adv_count: trace.final_count(),
        clean_counts: trace.clean_counts.clone(),
        adv_counts: trace.final_counts.clone(),
        clean_boxes,
        adv_boxes,
        clean_nms_us,
        adv_nms_us,
        steps: trace.steps.len(),
        linf: x_adv.linf_distance(&x_org),
    };
    formats::write_json(&out.join("summary.json"), &summary)?;

    match s.common.format {
        Format::Table => {
            println!("{:<10} {:>10} {:>10}", "", "original", "adversarial");
            for (i, seed) in summary.model_seeds.iter().enumerate() {
                println!("{:<10} {:>10} {:>10}", format!("objects[{seed}]"), summary.clean_counts[i], summary.adv_counts[i]);
            }
            println!("{:<10} {:>10} {:>10}", "boxes", summary.clean_boxes, summary.adv_boxes);
            println!("{:<10} {:>10.1} {:>10.1}", "nms us", summary.clean_nms_us, summary.adv_nms_us);
            println!("linf {:.6} after {} steps", summary.linf, summary.steps);
        }
        Format::Csv => formats::write_attack_trace_to(std::io::stdout(), &trace).map_err(|e| LabError::data("<stdout>", e.to_string()))?,
        Format::Json => print_json(&summary),
    }
    Ok(())
}

// ---- nms ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    #[default]
    Matrix,
    Greedy,
}

#[derive(Debug, Args)]
pub struct NmsArgs {
    /// Candidate CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kernel: Option<Kernel>,
    #[arg(long)]
    pub t_conf: Option<f64>,
    /// One or more IoU thresholds, comma separated.
    #[arg(long = "t-iou", visible_alias = "tiou", value_delimiter = ',')]
    pub t_iou: Option<Vec<f64>>,
    #[arg(long, value_parser = |s: &str| s.parse::<OverlapMetric>().map_err(|e| e.to_string()))]
    pub metric: Option<OverlapMetric>,
    /// Suppress across classes.
    #[arg(long)]
    pub class_agnostic: bool,
    #[arg(long)]
    pub max_detections: Option<usize>,
    #[arg(long)]
    pub max_candidates: Option<usize>,
    #[arg(long)]
    pub timeout_ms: Option<f64>,
    #[arg(long, conflicts_with = "timeout_ms")]
    pub no_timeout: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmsSettings {
    #[serde(flatten)]
    pub common: Common,
    pub input: Option<PathBuf>,
    pub kernel: Kernel,
    pub t_conf: f64,
    pub t_iou: Vec<f64>,
    pub metric: OverlapMetric,
    pub class_aware: bool,
    pub max_detections: usize,
    pub max_candidates: Option<usize>,
    pub timeout_ms: Option<f64>,
}

impl Default for NmsSettings {
    fn default() -> Self {
        let d = NmsConfig::default();
        Self {
            common: Common::default(),
            input: None,
            kernel: Kernel::Matrix,
            t_conf: d.t_conf,
            t_iou: vec![d.t_iou],
            metric: d.metric,
            class_aware: d.class_aware,
            max_detections: d.max_detections,
            max_candidates: d.max_candidates,
            timeout_ms: d.timeout.map(|t| t.as_secs_f64() * 1e3),
        }
    }
}

fn cmd_nms(cli: &Cli, a: &NmsArgs) -> LabResult<()> {
    let mut s: NmsSettings = load_settings(cli.config.as_deref())?;
    apply_common(&mut s.common, cli);
    if a.input.is_some() {
        s.input = a.input.clone();
    }
    set!(s.kernel, a.kernel);
    set!(s.t_conf, a.t_conf);
    set!(s.t_iou, a.t_iou.clone());
    set!(s.metric, a.metric);
    if a.class_agnostic {
        s.class_aware = false;
    }
    set!(s.max_detections, a.max_detections);
    if a.max_candidates.is_some() {
        s.max_candidates = a.max_candidates;
    }
    if a.timeout_ms.is_some() {
        s.timeout_ms = a.timeout_ms;
    }
    if a.no_timeout {
        s.timeout_ms = None;
    }
    let input = s.input.clone().ok_or_else(|| LabError::Config("nms needs --input".into()))?;
    if s.t_iou.is_empty() {
        return Err(LabError::Config("at least one t_iou is required".into()));
    }
    if s.timeout_ms.is_some_and(|t| !(t > 0.0)) {
        return Err(LabError::Config("timeout_ms must be positive".into()));
    }
    let configs = s
        .t_iou
        .iter()
        .map(|&t_iou| {
            let cfg = NmsConfig {
                t_conf: s.t_conf,
                t_iou,
                metric: s.metric,
                class_aware: s.class_aware,
                max_detections: s.max_detections,
                max_candidates: s.max_candidates,
                timeout: s.timeout_ms.map(|ms| Duration::from_secs_f64(ms / 1e3)),
            };
            cfg.validate().map(|_| cfg)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let out = s.common.out.clone();
    write_manifest(&out, "nms", &s)?;

    let set = formats::read_candidates(&input)?;
    let clock = StdClock::new();
    let kernel_name = match s.kernel {
        Kernel::Matrix => "matrix",
        Kernel::Greedy => "greedy",
    };
    let mut records = Vec::new();
    for cfg in &configs {
        let report = match s.kernel {
            Kernel::Matrix => nms_matrix(&set, cfg, &clock),
            Kernel::Greedy => nms_greedy(&set, cfg, &clock),
        };
        records.push(NmsReportRecord::new(&set.image_id, kernel_name, &report));
    }
    formats::write_json(&out.join("reports.json"), &records)?;
    let last = records.last().expect("non-empty");
    let kept = CandidateSet::new(set.image_id.clone(), last.kept.clone());
    formats::write_candidates(&out.join("kept.csv"), &kept)?;

    match s.common.format {
        Format::Table => {
            println!("{} candidates from {} ({kernel_name})", set.len(), input.display());
            println!("{:>6} {:>8} {:>8} {:>12} {:>12} {:>9} {:>6}", "t_iou", "n_input", "kept", "pairwise", "elapsed_us", "timed_out", "capped");
            for (cfg, r) in configs.iter().zip(&records) {
                println!(
                    "{:>6.2} {:>8} {:>8} {:>12} {:>12.1} {:>9} {:>6}",
                    cfg.t_iou, r.n_input, r.n_kept, r.n_pairwise, r.elapsed_us, r.timed_out, r.capped
                );
            }
        }
        Format::Csv => formats::write_candidates_to(std::io::stdout(), &kept).map_err(|e| LabError::data("<stdout>", e.to_string()))?,
        Format::Json => print_json(&records),
    }
    Ok(())
}

// ---- simulate ----

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Requests per ratio.
    #[arg(long = "n-requests", visible_alias = "n")]
    pub n_requests: Option<usize>,
    /// Adversarial ratios, comma separated.
    #[arg(long = "ratios", visible_alias = "ratio", value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,
    #[arg(long)]
    pub t_infer_ms: Option<f64>,
    #[arg(long)]
    pub t_trans_ms: Option<f64>,
    /// NMS cap in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    #[arg(long, conflicts_with = "timeout")]
    pub no_timeout: bool,
    /// Seconds per squared candidate.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub t_base_ms: Option<f64>,
    #[arg(long)]
    pub n_break: Option<usize>,
    /// Fit JSON from `bench`; replaces alpha, t_base and n_break.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    #[arg(long)]
    pub adv_candidates: Option<usize>,
    #[arg(long)]
    pub clean_candidates: Option<usize>,
    /// Time NMS live instead of using the cost model.
    #[arg(long)]
    pub measured: bool,
    #[arg(long)]
    pub k_classes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateSettings {
    #[serde(flatten)]
    pub common: Common,
    pub n_requests: usize,
    pub ratios: Vec<f64>,
    pub t_infer_ms: f64,
    pub t_trans_ms: f64,
    pub timeout: Option<f64>,
    pub alpha: f64,
    pub t_base_ms: f64,
    pub n_break: usize,
    pub adv_candidates: usize,
    pub clean_candidates: usize,
    pub measured: bool,
    pub k_classes: usize,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            common: Common::default(),
            n_requests: 1000,
            ratios: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            t_infer_ms: d.t_infer * 1e3,
            t_trans_ms: d.t_trans * 1e3,
            timeout: d.timeout,
            alpha: d.cost_model.alpha,
            t_base_ms: d.cost_model.t_base * 1e3,
            n_break: d.cost_model.n_break,
            adv_candidates: d.adv_candidates,
            clean_candidates: d.clean_candidates,
            measured: false,
            k_classes: 80,
        }
    }
}

fn cmd_simulate(cli: &Cli, a: &SimulateArgs) -> LabResult<()> {
    let mut s: SimulateSettings = load_settings(cli.config.as_deref())?;
    apply_common(&mut s.common, cli);
    set!(s.n_requests, a.n_requests);
    set!(s.ratios, a.ratios.clone());
    set!(s.t_infer_ms, a.t_infer_ms);
    set!(s.t_trans_ms, a.t_trans_ms);
    if a.timeout.is_some() {
        s.timeout = a.timeout;
    }
    if a.no_timeout {
        s.timeout = None;
    }
    if let Some(path) = &a.fit {
        let rec: FitRecord = formats::read_json(path)?;
        s.alpha = rec.alpha;
        s.t_base_ms = rec.t_base_us / 1e3;
        s.n_break = rec.n_break;
    }
    set!(s.alpha, a.alpha);
    set!(s.t_base_ms, a.t_base_ms);
    set!(s.n_break, a.n_break);
    set!(s.adv_candidates, a.adv_candidates);
    set!(s.clean_candidates, a.clean_candidates);
    if a.measured {
        s.measured = true;
    }
    set!(s.k_classes, a.k_classes);
    if s.n_requests == 0 || s.ratios.is_empty() {
        return Err(LabError::Config("need at least one request and one ratio".into()));
    }
    let base = SimConfig {
        t_infer: s.t_infer_ms / 1e3,
        t_trans: s.t_trans_ms / 1e3,
        cost_model: CostModelParams { alpha: s.alpha, t_base: s.t_base_ms / 1e3, n_break: s.n_break },
        timeout: s.timeout,
        adversarial_ratio: 0.0,
        adv_candidates: s.adv_candidates,
        clean_candidates: s.clean_candidates,
    };
    for &ratio in &s.ratios {
        SimConfig { adversarial_ratio: ratio, ..base.clone() }.validate()?;
    }
    let out = s.common.out.clone();
    write_manifest(&out, "simulate", &s)?;

    let mut measured = MeasuredNms::new(s.k_classes, s.common.seed);
    let mut summaries = Vec::new();
    let mut timed_out = Vec::new();
    for &ratio in &s.ratios {
        let cfg = SimConfig { adversarial_ratio: ratio, ..base.clone() };
        let workload = synthesize_workload(s.n_requests, &cfg, s.common.seed);
        let trace = if s.measured {
            simulate_with(&workload, &cfg, &mut measured)?
        } else {
            let mut model = cfg.cost_model;
            simulate_with(&workload, &cfg, &mut model)?
        };
        formats::write_sim_trace(&out.join(format!("trace_r{ratio}.csv")), &trace)?;
        summaries.push(SimSummary { mean_ms: trace.mean_total * 1e3, fps: trace.fps, ratio });
        timed_out.push(trace.timed_out_count());
    }
    formats::write_json(&out.join("summary.json"), &summaries)?;

    match s.common.format {
        Format::Table => {
            println!("{:>6} {:>12} {:>10} {:>10}", "ratio", "mean ms", "fps", "timeouts");
            for (row, t) in summaries.iter().zip(&timed_out) {
                println!("{:>6.2} {:>12.3} {:>10.2} {:>10}", row.ratio, row.mean_ms, row.fps, t);
            }
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(std::io::stdout());
            for row in &summaries {
                w.serialize(row).map_err(|e| LabError::data("<stdout>", e.to_string()))?;
            }
            w.flush().map_err(|e| LabError::io("<stdout>", e))?;
        }
        Format::Json => print_json(&summaries),
    }
    Ok(())
}

// ---- gen ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenKind {
    /// Synthetic candidate CSVs, one per scenario.
    #[default]
    Candidates,
    /// A seeded uniform-noise OVL1 image.
    Image,
    /// Every decoded detector slot for an image, unfiltered.
    Detections,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub what: Option<GenKind>,
    #[arg(long = "scenario", alias = "scenarios", value_delimiter = ',', value_parser = parse_scenario)]
    pub scenarios: Option<Vec<Scenario>>,
    /// Candidates per set.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub k_classes: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    /// OVL1 image for `--what detections`; seeded noise when absent.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub model_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenSettings {
    #[serde(flatten)]
    pub common: Common,
    pub what: GenKind,
    pub scenarios: Vec<Scenario>,
    pub n: usize,
    pub k_classes: usize,
    pub height: usize,
    pub width: usize,
    pub image: Option<PathBuf>,
    pub model_seed: u64,
}

impl Default for GenSettings {
    fn default() -> Self {
        Self {
            common: Common::default(),
            what: GenKind::Candidates,
            scenarios: Scenario::ALL.to_vec(),
            n: 1000,
            k_classes: 80,
            height: 64,
            width: 64,
            image: None,
            model_seed: 1,
        }
    }
}

fn cmd_gen(cli: &Cli, a: &GenArgs) -> LabResult<()> {
    let mut s: GenSettings = load_settings(cli.config.as_deref())?;
    apply_common(&mut s.common, cli);
    set!(s.what, a.what);
    set!(s.scenarios, a.scenarios.clone());
    set!(s.n, a.n);
    set!(s.k_classes, a.k_classes);
    set!(s.height, a.height);
    set!(s.width, a.width);
    if a.image.is_some() {
        s.image = a.image.clone();
    }
    set!(s.model_seed, a.model_seed);
    let out = s.common.out.clone();
    write_manifest(&out, "gen", &s)?;

    let mut written = Vec::new();
    match s.what {
        GenKind::Candidates => {
            for &sc in &s.scenarios {
                let set = overload_core::costmodel::gen_synthetic(sc, s.n, s.k_classes, s.common.seed);
                let path = out.join(format!("{}.csv", sc.name()));
                formats::write_candidates(&path, &set)?;
                written.push(path);
            }
        }
        GenKind::Image => {
            let path = out.join("image.ovl1");
            formats::write_tensor(&path, &ImageTensor::noise(s.height, s.width, 3, s.common.seed))?;
            written.push(path);
        }
        GenKind::Detections => {
            let x = match &s.image {
                Some(p) => formats::read_tensor(p)?,
                None => ImageTensor::noise(s.height, s.width, 3, s.common.seed),
            };
            let set = forward(&init_weights(s.model_seed), &x)?.decode("detections");
            let path = out.join("detections.csv");
            formats::write_candidates(&path, &set)?;
            written.push(path);
        }
    }
    match s.common.format {
        Format::Json => print_json(&written),
        _ => written.iter().for_each(|p| println!("{}", p.display())),
    }
    Ok(())
}
