//! Command-line front end for the probing and intervention toolkit.
//!
//! The subcommands mirror the pipeline stages: `synth` records a labelled
//! desk suite and its activation dump, `probe` trains the per-head grid
//! from a dump, `rank` and `heatmap` inspect the grid, `intervene` applies
//! one causal edit, `evaluate` scores answer pairs, `experiment` runs a
//! full protocol, and `report` re-renders a finished run's Markdown.
//!
//! Global flags: `--config <path>` loads an experiment configuration tree
//! (JSON) whose settings every subcommand inherits; `--seed` overrides the
//! desk-model seed; `--offline` ignores any remote endpoints configured in
//! the environment. Remote services are opt-in via `HEADSCOPE_JUDGE_URL`,
//! `HEADSCOPE_EMBED_URL`, and their `*_API_KEY` companions; without them
//! everything runs on the built-in offline implementations.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use headscope::desk::{generate_task_suite, write_suite, DeskModel, TaskSuite};
use headscope::eval::{
    judge_batch, tally_outcomes, Embedder, JudgeConfig, JudgeRequest, MetricScores,
    OfflineEmbedder, RemoteEmbedder,
};
use headscope::exp::report::{fmt_acc, fmt_llm, md_table};
use headscope::exp::{
    build_patch_bank, capture_head_outputs, desk_model_from, evaluate_tasks, evaluation_seed,
    probe_grid_from_dump, run_and_capture, run_experiment, EvalContext, ExperimentConfig,
    ExperimentKind, GridOutcome, ModelSource,
};
use headscope::http::Endpoint;
use headscope::intervene::{compute_direction, default_patch_source, InterventionSpec};
use headscope::probe::HeatmapGrid;
use headscope::store::{read_dump, write_dump};
use headscope::types::read_subqaf_jsonl;
use headscope::{CognitiveFunction, HeadId};

// ============================================================================
// Argument tree
// ============================================================================

#[derive(Parser)]
#[command(name = "headscope", version, about = "Find function-specialized attention heads and test them causally")]
struct Cli {
    /// Experiment configuration tree (JSON); omitted keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the desk-model construction seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Ignore remote endpoints in the environment; run fully offline.
    #[arg(long, global = true)]
    offline: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled desk task suite and record its activation dump.
    Synth(SynthArgs),
    /// Train the probe grid from a recorded dump; write rankings and heatmaps.
    Probe(ProbeArgs),
    /// Print ranked heads per function from a probe output directory.
    Rank(RankArgs),
    /// Render heatmaps from a probe or experiment directory as PNGs.
    Heatmap(HeatmapArgs),
    /// Apply one causal edit on the desk model and report the accuracy change.
    Intervene(InterveneArgs),
    /// Score candidate/reference answer pairs with the offline metrics.
    Evaluate(EvaluateArgs),
    /// Run one experiment protocol end to end into a content-addressed directory.
    Experiment(ExperimentArgs),
    /// Re-render a finished experiment directory's Markdown report to stdout.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Directory receiving suite.jsonl, tasks.meta.json, and dump.*.
    #[arg(long)]
    out: PathBuf,
    /// Suite generation seed.
    #[arg(long, default_value_t = 1)]
    suite_seed: u64,
    /// Tasks per cognitive function (defaults to the config value).
    #[arg(long)]
    n_per_function: Option<usize>,
    /// Fraction of chainable tasks emitted as two-step chains.
    #[arg(long)]
    chain_fraction: Option<f64>,
    /// Also record per-position attention weights in the dump.
    #[arg(long)]
    capture_attention: bool,
}

#[derive(Args)]
struct ProbeArgs {
    /// Dump base path as given at record time (synth writes <out>/dump).
    #[arg(long)]
    dump: PathBuf,
    /// Labelled records JSONL (synth writes <out>/suite.jsonl).
    #[arg(long)]
    records: PathBuf,
    /// Output directory for results, rankings, and heatmaps.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RankArgs {
    /// Probe output directory (reads rankings.json).
    #[arg(long)]
    from: PathBuf,
    /// Restrict to one function code (e.g. "math_reasoning").
    #[arg(long)]
    function: Option<CognitiveFunction>,
    /// Heads to print per function.
    #[arg(long, default_value_t = 10)]
    top: usize,
}

#[derive(Args)]
struct HeatmapArgs {
    /// Directory containing heatmaps.json.
    #[arg(long)]
    from: PathBuf,
    /// PNG destination; defaults to the source directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Pixel size of one grid cell.
    #[arg(long, default_value_t = 24)]
    cell: u32,
}

#[derive(Args)]
struct InterveneArgs {
    /// Edit to apply: mask, patch-random, patch-mean, or steer.
    #[arg(long)]
    op: String,
    /// Heads to edit, comma-separated (e.g. "L0H0,L2H1").
    #[arg(long, value_delimiter = ',', required = true)]
    heads: Vec<HeadId>,
    /// Function whose tasks are evaluated.
    #[arg(long)]
    function: CognitiveFunction,
    /// Mask scale (mask op; defaults to the config value).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Steering strength (steer op; defaults to the config value).
    #[arg(long)]
    alpha: Option<f64>,
    /// Donor function (patch ops; defaults to the canonical cross-function source).
    #[arg(long)]
    source: Option<CognitiveFunction>,
    /// Evaluation suite seed.
    #[arg(long, default_value_t = 1)]
    suite_seed: u64,
    /// Partial-mask scale used to learn steering directions (steer op).
    #[arg(long)]
    partial_epsilon: Option<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// JSONL of {"candidate": ..., "reference": ..., "question"?: ...} pairs.
    #[arg(long)]
    pairs: PathBuf,
    /// Output directory for scores.jsonl and report.md.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Protocol to run: probing, masking-sweep, confusion-matrix, hierarchy,
    /// steering, or sensitivity.
    kind: ExperimentKind,
    /// Root for content-addressed run directories (defaults to the config's
    /// output_dir, or "runs").
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Finished run directory (containing config.json and report.json).
    dir: PathBuf,
}

// ============================================================================
// Configuration plumbing
// ============================================================================

/// Load the configuration tree, or synthesize defaults, then apply the
/// global overrides.
fn load_config(cli: &Cli, kind: ExperimentKind) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let body = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str::<ExperimentConfig>(&body)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => ExperimentConfig::new(kind, 0, "runs"),
    };
    config.kind = kind;
    if let Some(seed) = cli.seed {
        match &mut config.model {
            ModelSource::Desk { seed: s, .. } => *s = seed,
            ModelSource::DumpFiles { .. } => {
                bail!("--seed has no effect on a pre-recorded dump source")
            }
        }
    }
    Ok(config)
}

fn desk_model(config: &ExperimentConfig) -> Result<DeskModel> {
    Ok(desk_model_from(&config.model)?)
}

/// Bearer-token endpoint from `<var>_URL` / `<var>_API_KEY`, unless offline.
fn endpoint_from_env(offline: bool, var: &str) -> Option<Endpoint> {
    if offline {
        return None;
    }
    let url = std::env::var(format!("{var}_URL")).ok()?;
    let mut endpoint = Endpoint::new(url);
    endpoint.api_key = std::env::var(format!("{var}_API_KEY")).ok();
    Some(endpoint)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

// ============================================================================
// Subcommands
// ============================================================================

fn cmd_synth(cli: &Cli, args: &SynthArgs) -> Result<()> {
    let config = load_config(cli, ExperimentKind::Probing)?;
    let model = desk_model(&config)?;

    let mut suite_config = config.suite_config(args.suite_seed);
    if let Some(n) = args.n_per_function {
        suite_config.n_per_function = n;
    }
    if let Some(fraction) = args.chain_fraction {
        suite_config.chain_fraction = fraction;
    }

    let mut suite = generate_task_suite(&suite_config)?;
    let samples = run_and_capture(&model, &mut suite, args.capture_attention)?;
    let correct =
        suite.tasks.iter().filter(|t| t.record.model_correct == Some(true)).count();

    write_suite(&args.out, &suite)?;
    let manifest = write_dump(&args.out.join("dump"), model.geometry(), &samples)?;

    println!(
        "{} tasks ({} correct, exact match {:.4}) -> {}",
        suite.tasks.len(),
        correct,
        correct as f64 / suite.tasks.len() as f64,
        args.out.display()
    );
    println!(
        "dump: {} samples, schema v{}",
        manifest.sample_index.len(),
        manifest.schema_version
    );
    Ok(())
}

fn cmd_probe(cli: &Cli, args: &ProbeArgs) -> Result<()> {
    let config = load_config(cli, ExperimentKind::Probing)?;
    let dump = read_dump(&args.dump)?;
    let records = read_subqaf_jsonl(&args.records)?;
    let grid = probe_grid_from_dump(&dump, &records, &config)?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    write_grid(&args.out, &grid)?;

    for (function, ranking) in &grid.rankings {
        let (head, accuracy) = ranking[0];
        println!("{function}: top head {head} at {accuracy:.4}");
    }
    println!("-> {}", args.out.display());
    Ok(())
}

/// Serialize one trained grid the way `rank` and `heatmap` expect it.
fn write_grid(dir: &Path, grid: &GridOutcome) -> Result<()> {
    let results: Vec<_> = grid.results.values().flatten().collect();
    write_json(&dir.join("results.json"), &results)?;

    let rankings: BTreeMap<String, Vec<(String, f64)>> = grid
        .rankings
        .iter()
        .map(|(f, ranking)| {
            (f.code().to_string(), ranking.iter().map(|(h, a)| (h.to_string(), *a)).collect())
        })
        .collect();
    write_json(&dir.join("rankings.json"), &rankings)?;

    let selected: BTreeMap<String, Vec<String>> = grid
        .selected
        .iter()
        .map(|(f, heads)| {
            (f.code().to_string(), heads.iter().map(|h| h.to_string()).collect())
        })
        .collect();
    write_json(&dir.join("selected.json"), &selected)?;

    let heatmaps: Vec<_> = grid.heatmaps.values().collect();
    write_json(&dir.join("heatmaps.json"), &heatmaps)?;
    for (function, heatmap) in &grid.heatmaps {
        let path = dir.join(format!("heatmap-{}.csv", function.code()));
        std::fs::write(&path, heatmap.to_csv())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_rank(args: &RankArgs) -> Result<()> {
    let path = args.from.join("rankings.json");
    let body = std::fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))?;
    let rankings: BTreeMap<String, Vec<(String, f64)>> = serde_json::from_str(&body)?;

    for (function, ranking) in &rankings {
        if let Some(only) = args.function {
            if function != only.code() {
                continue;
            }
        }
        println!("## {function}\n");
        let rows: Vec<Vec<String>> = ranking
            .iter()
            .take(args.top)
            .enumerate()
            .map(|(i, (head, accuracy))| {
                vec![(i + 1).to_string(), head.clone(), fmt_acc(*accuracy)]
            })
            .collect();
        println!("{}", md_table(&["rank", "head", "probe acc"], &rows));
    }
    Ok(())
}

fn cmd_heatmap(args: &HeatmapArgs) -> Result<()> {
    let path = args.from.join("heatmaps.json");
    let body = std::fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))?;
    let heatmaps: Vec<HeatmapGrid> = serde_json::from_str(&body)?;

    let out = args.out.as_deref().unwrap_or(&args.from);
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for heatmap in &heatmaps {
        let png = out.join(format!("heatmap-{}.png", heatmap.function.code()));
        heatmap.render_png(&png, args.cell)?;
        println!("{}", png.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct InterveneOutcome {
    op: String,
    function: String,
    heads: Vec<String>,
    n_tasks: usize,
    baseline: f64,
    intervened: f64,
    /// baseline − intervened, signed.
    drop: f64,
}

fn cmd_intervene(cli: &Cli, args: &InterveneArgs) -> Result<()> {
    let config = load_config(cli, ExperimentKind::MaskingSweep)?;
    let model = desk_model(&config)?;
    let heads: BTreeSet<HeadId> = args.heads.iter().copied().collect();

    let suite = generate_task_suite(&config.suite_config(args.suite_seed))?;
    let tasks = suite.function_tasks(args.function);
    if tasks.is_empty() {
        bail!("suite has no {} tasks", args.function);
    }
    if args.op == "steer" {
        return cmd_steer(&config, &model, args, &suite, heads);
    }
    let baseline = evaluate_tasks(&model, &tasks, &[], &EvalContext::default())?;

    let intervened = match args.op.as_str() {
        "mask" => {
            let spec = InterventionSpec::Mask {
                heads,
                epsilon: args.epsilon.unwrap_or(config.intervention.mask_epsilon),
            };
            spec.validate(model.geometry(), Some(args.function))?;
            evaluate_tasks(&model, &tasks, &[&spec], &EvalContext::default())?
        }
        "patch-random" | "patch-mean" => {
            let source =
                args.source.unwrap_or_else(|| default_patch_source(args.function));
            let needs = BTreeMap::from([(source, heads.clone())]);
            let bank = build_patch_bank(&model, &suite, &needs)?;
            let spec = match args.op.as_str() {
                "patch-random" => InterventionSpec::PatchRandom {
                    heads,
                    source_function: source,
                    seed: config.intervention.patch_seed,
                },
                _ => InterventionSpec::PatchMean { heads, source_function: source },
            };
            spec.validate(model.geometry(), Some(args.function))?;
            let ctx = EvalContext { bank: Some(&bank), directions: None };
            evaluate_tasks(&model, &tasks, &[&spec], &ctx)?
        }
        other => bail!("unknown op {other:?}; expected mask, patch-random, patch-mean, or steer"),
    };

    print_outcome(args, tasks.len(), baseline, intervened)
}

/// Steering needs directions first: learn them from this suite under a
/// partial mask, then steer a held-out suite under the same mask.
fn cmd_steer(
    config: &ExperimentConfig,
    model: &DeskModel,
    args: &InterveneArgs,
    train_suite: &TaskSuite,
    heads: BTreeSet<HeadId>,
) -> Result<()> {
    let partial = InterventionSpec::Mask {
        heads: heads.clone(),
        epsilon: args.partial_epsilon.unwrap_or(config.intervention.partial_epsilon),
    };
    let train_tasks = train_suite.function_tasks(args.function);
    let runs = capture_head_outputs(
        model,
        &train_tasks,
        &[&partial],
        &EvalContext::default(),
        &heads,
    )?;

    let mut directions = BTreeMap::new();
    for &head in &heads {
        let correct: Vec<Vec<f32>> = runs
            .iter()
            .filter(|r| r.correct)
            .map(|r| r.outputs[&head].clone())
            .collect();
        let incorrect: Vec<Vec<f32>> = runs
            .iter()
            .filter(|r| !r.correct)
            .map(|r| r.outputs[&head].clone())
            .collect();
        let direction = compute_direction(&correct, &incorrect).with_context(|| {
            format!("head {head}: the partial mask left no mixed-correctness evidence")
        })?;
        directions.insert(head, direction);
    }

    let eval_suite =
        generate_task_suite(&config.suite_config(evaluation_seed(args.suite_seed)))?;
    let eval_tasks = eval_suite.function_tasks(args.function);
    let ctx = EvalContext { bank: None, directions: Some(&directions) };
    let before = evaluate_tasks(model, &eval_tasks, &[&partial], &EvalContext::default())?;
    let steer = InterventionSpec::Steer {
        heads,
        alpha: args.alpha.unwrap_or(0.1),
    };
    let after = evaluate_tasks(model, &eval_tasks, &[&partial, &steer], &ctx)?;
    print_outcome(args, eval_tasks.len(), before, after)
}

fn print_outcome(args: &InterveneArgs, n_tasks: usize, baseline: f64, intervened: f64) -> Result<()> {
    let outcome = InterveneOutcome {
        op: args.op.clone(),
        function: args.function.code().to_string(),
        heads: args.heads.iter().map(|h| h.to_string()).collect(),
        n_tasks,
        baseline,
        intervened,
        drop: baseline - intervened,
    };
    println!("{}", serde_json::to_string_pretty(&outcome)?);
    Ok(())
}

/// One line of the `evaluate` input file.
#[derive(Debug, Deserialize)]
struct PairRecord {
    #[serde(default)]
    question: String,
    candidate: String,
    reference: String,
}

#[derive(Serialize)]
struct ScoredPair<'a> {
    question: &'a str,
    candidate: &'a str,
    reference: &'a str,
    #[serde(flatten)]
    scores: MetricScores,
}

fn cmd_evaluate(cli: &Cli, args: &EvaluateArgs) -> Result<()> {
    let body = std::fs::read_to_string(&args.pairs)
        .with_context(|| format!("reading {}", args.pairs.display()))?;
    let mut pairs = Vec::new();
    for (i, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pair: PairRecord = serde_json::from_str(line)
            .with_context(|| format!("{} line {}", args.pairs.display(), i + 1))?;
        pairs.push(pair);
    }
    if pairs.is_empty() {
        bail!("{} contains no pairs", args.pairs.display());
    }

    // The embedder is fitted on the evaluated corpus itself so every token
    // owns a vocabulary slot; a remote embedder replaces it when configured.
    let offline = OfflineEmbedder::from_corpus(
        pairs.iter().flat_map(|p| [p.candidate.as_str(), p.reference.as_str()]),
    );
    let remote = endpoint_from_env(cli.offline, "HEADSCOPE_EMBED")
        .map(|endpoint| RemoteEmbedder { endpoint });
    let embedder: &dyn Embedder = match &remote {
        Some(r) => r,
        None => &offline,
    };

    let mut scores = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        scores.push(MetricScores::compute(&pair.candidate, &pair.reference, embedder)?);
    }

    let judged = endpoint_from_env(cli.offline, "HEADSCOPE_JUDGE").map(|endpoint| {
        let judge = JudgeConfig::new(endpoint);
        let requests: Vec<JudgeRequest> = pairs
            .iter()
            .map(|p| JudgeRequest {
                question: p.question.clone(),
                gold_answer: p.reference.clone(),
                model_answer: p.candidate.clone(),
            })
            .collect();
        judge_batch(&judge, &requests)
    });
    if let Some(outcomes) = &judged {
        for (score, outcome) in scores.iter_mut().zip(outcomes) {
            score.judge_verdict = outcome.verdict();
        }
    }

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let mut jsonl = String::new();
    for (pair, score) in pairs.iter().zip(&scores) {
        let row = ScoredPair {
            question: &pair.question,
            candidate: &pair.candidate,
            reference: &pair.reference,
            scores: score.clone(),
        };
        jsonl.push_str(&serde_json::to_string(&row)?);
        jsonl.push('\n');
    }
    let scores_path = args.out.join("scores.jsonl");
    std::fs::write(&scores_path, jsonl)
        .with_context(|| format!("writing {}", scores_path.display()))?;

    let n = scores.len() as f64;
    let acc = scores.iter().filter(|s| s.unaffected).count() as f64 / n;
    let llm = judged.as_deref().map(|outcomes| {
        let (correct, _, abstained) = tally_outcomes(outcomes);
        let judged_n = outcomes.len() - abstained;
        if judged_n == 0 { 0.0 } else { correct as f64 / judged_n as f64 }
    });
    let mean = |f: fn(&MetricScores) -> f64| scores.iter().map(f).sum::<f64>() / n;

    let mut report = String::from("# Evaluation\n\n");
    report.push_str(&format!("{} pairs from {}.\n\n", scores.len(), args.pairs.display()));
    report.push_str(&md_table(
        &["pairs", "acc", "llm", "mean bleu", "mean rouge-l", "mean semantic"],
        &[vec![
            scores.len().to_string(),
            fmt_acc(acc),
            fmt_llm(llm),
            fmt_acc(mean(|s| s.bleu)),
            fmt_acc(mean(|s| s.rouge_l_f1)),
            fmt_acc(mean(|s| s.semantic_sim)),
        ]],
    ));
    let report_path = args.out.join("report.md");
    std::fs::write(&report_path, &report)
        .with_context(|| format!("writing {}", report_path.display()))?;

    println!("acc {} llm {} -> {}", fmt_acc(acc), fmt_llm(llm), args.out.display());
    Ok(())
}

fn cmd_experiment(cli: &Cli, args: &ExperimentArgs) -> Result<()> {
    let mut config = load_config(cli, args.kind)?;
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    let dir = run_experiment(&config)?;
    println!("{}", dir.display());
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let config_path = args.dir.join("config.json");
    let body = std::fs::read_to_string(&config_path)
        .with_context(|| format!("reading {}", config_path.display()))?;
    let config: ExperimentConfig = serde_json::from_str(&body)?;

    let report_path = args.dir.join("report.json");
    let body = std::fs::read_to_string(&report_path)
        .with_context(|| format!("reading {}", report_path.display()))?;

    use headscope::exp::{
        ConfusionReport, HierarchyReport, MaskingSweepReport, SensitivityReport, SteeringReport,
    };
    let markdown = match config.kind {
        ExperimentKind::Probing => {
            serde_json::from_str::<headscope::exp::ProbingReport>(&body)?.to_markdown()
        }
        ExperimentKind::MaskingSweep => {
            serde_json::from_str::<MaskingSweepReport>(&body)?.to_markdown()
        }
        ExperimentKind::ConfusionMatrix => {
            serde_json::from_str::<ConfusionReport>(&body)?.to_markdown()
        }
        ExperimentKind::Hierarchy => {
            serde_json::from_str::<HierarchyReport>(&body)?.to_markdown()
        }
        ExperimentKind::Steering => {
            serde_json::from_str::<SteeringReport>(&body)?.to_markdown()
        }
        ExperimentKind::Sensitivity => {
            serde_json::from_str::<SensitivityReport>(&body)?.to_markdown()
        }
    };
    print!("{markdown}");
    Ok(())
}

// ============================================================================
// Entry
// ============================================================================

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(args) => cmd_synth(&cli, args),
        Command::Probe(args) => cmd_probe(&cli, args),
        Command::Rank(args) => cmd_rank(args),
        Command::Heatmap(args) => cmd_heatmap(args),
        Command::Intervene(args) => cmd_intervene(&cli, args),
        Command::Evaluate(args) => cmd_evaluate(&cli, args),
        Command::Experiment(args) => cmd_experiment(&cli, args),
        Command::Report(args) => cmd_report(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
