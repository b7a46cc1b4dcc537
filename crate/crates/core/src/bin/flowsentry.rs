//! Command-line front end: every stage of the detection pipeline as a
//! subcommand, all artifacts as plain files.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or
//! format error, 3 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flowsentry::config::RunConfig;
use flowsentry::datagen::generate;
use flowsentry::graph::build_graph;
use flowsentry::ingest::parse_flow_csv;
use flowsentry::metrics::{ablate, evaluate, export_attention};
use flowsentry::model::{HybridModel, Variant};
use flowsentry::pipeline::{prepare, PreparedData};
use flowsentry::preprocess::{fit_transform, make_windows};
use flowsentry::schema::SchemaSpec;
use flowsentry::train::{fit, load_checkpoint_matching};
use flowsentry::{Error, Result};

#[derive(Parser)]
#[command(
    name = "flowsentry",
    version,
    about = "Hybrid graph/sequence intrusion detection over flow records",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every pipeline subcommand. Effective values resolve in
/// order: built-in defaults, then --config file, then --set overrides,
/// then dedicated flags.
#[derive(Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines; # starts a comment
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config key, e.g. --set lr=0.01 (repeatable)
    #[arg(long, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Seed for every stage [default: 42]
    #[arg(long)]
    seed: Option<u64>,

    /// Print the merged configuration to stdout before running
    #[arg(long)]
    print_config: bool,
}

impl ConfigArgs {
    fn merge(&self) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        if let Some(path) = &self.config {
            config.apply_file(path)?;
        }
        for entry in &self.set {
            let (key, value) = entry.split_once('=').ok_or_else(|| {
                Error::Config(format!("--set '{entry}': expected KEY=VALUE"))
            })?;
            config.set(key.trim(), value.trim())?;
        }
        if let Some(seed) = self.seed {
            config.set_seed(seed);
        }
        Ok(config)
    }

    fn finish(&self, config: &RunConfig) {
        if self.print_config {
            print!("{}", config.to_text());
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic flow corpus
    Datagen(DatagenArgs),
    /// Fit the cleaning/encoding/selection transform and save it
    Preprocess(PreprocessArgs),
    /// Build and print the traffic graph of one window
    BuildGraph(BuildGraphArgs),
    /// Train a model and save the best checkpoint
    Train(TrainArgs),
    /// Evaluate a checkpoint on the held-out split
    Evaluate(EvaluateArgs),
    /// Train and evaluate every architecture variant
    Ablate(AblateArgs),
    /// Export attention traces for held-out windows
    Explain(ExplainArgs),
    /// Print the version string
    Version,
}

#[derive(Args)]
struct DatagenArgs {
    /// Output CSV path for the generated flows
    #[arg(long, value_name = "FILE")]
    out: PathBuf,

    /// Also write the column schema here [default: <out>.schema]
    #[arg(long, value_name = "FILE")]
    schema_out: Option<PathBuf>,

    /// Scenario length in seconds [default: 600]
    #[arg(long)]
    duration: Option<f64>,

    /// Background flows per second [default: 20]
    #[arg(long)]
    background_rate: Option<f64>,

    /// Number of regular hosts [default: 24]
    #[arg(long)]
    entities: Option<usize>,

    /// Attacks as kind:start:duration:intensity, comma-separated [default: none]
    #[arg(long)]
    attacks: Option<String>,

    #[command(flatten)]
    common: ConfigArgs,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Input flow CSV
    #[arg(long, value_name = "FILE")]
    data: PathBuf,

    /// Schema file describing the CSV columns
    #[arg(long, value_name = "FILE")]
    schema: PathBuf,

    /// Where to save the fitted transform artifact
    #[arg(long, value_name = "FILE")]
    transform_out: PathBuf,

    #[command(flatten)]
    common: ConfigArgs,
}

#[derive(Args)]
struct BuildGraphArgs {
    /// Input flow CSV
    #[arg(long, value_name = "FILE")]
    data: PathBuf,

    /// Schema file describing the CSV columns
    #[arg(long, value_name = "FILE")]
    schema: PathBuf,

    /// Zero-based window index [default: 0]
    #[arg(long)]
    window: Option<usize>,

    /// Where to write the graph text (stdout when omitted)
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,

    #[command(flatten)]
    common: ConfigArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// Input flow CSV
    #[arg(long, value_name = "FILE")]
    data: PathBuf,

    /// Schema file describing the CSV columns
    #[arg(long, value_name = "FILE")]
    schema: PathBuf,

    /// Where to save the best checkpoint
    #[arg(long, value_name = "FILE")]
    model_out: PathBuf,

    /// Where to write the per-epoch training log
    #[arg(long, value_name = "FILE")]
    log_out: Option<PathBuf>,

    /// Architecture variant [default: full]
    #[arg(long)]
    variant: Option<String>,

    #[command(flatten)]
    common: ConfigArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Input flow CSV
    #[arg(long, value_name = "FILE")]
    data: PathBuf,

    /// Schema file describing the CSV columns
    #[arg(long, value_name = "FILE")]
    schema: PathBuf,

    /// Checkpoint to evaluate
    #[arg(long, value_name = "FILE")]
    model: PathBuf,

    /// Where to write the metrics report
    #[arg(long, value_name = "FILE")]
    report_out: PathBuf,

    #[command(flatten)]
    common: ConfigArgs,
}

#[derive(Args)]
struct AblateArgs {
    /// Input flow CSV
    #[arg(long, value_name = "FILE")]
    data: PathBuf,

    /// Schema file describing the CSV columns
    #[arg(long, value_name = "FILE")]
    schema: PathBuf,

    /// Where to write the ablation table
    #[arg(long, value_name = "FILE")]
    out: PathBuf,

    /// Variants to run, comma-separated [default: all six]
    #[arg(long)]
    variants: Option<String>,

    #[command(flatten)]
    common: ConfigArgs,
}

#[derive(Args)]
struct ExplainArgs {
    /// Input flow CSV
    #[arg(long, value_name = "FILE")]
    data: PathBuf,

    /// Schema file describing the CSV columns
    #[arg(long, value_name = "FILE")]
    schema: PathBuf,

    /// Checkpoint whose attention to trace
    #[arg(long, value_name = "FILE")]
    model: PathBuf,

    /// Where to write the traces
    #[arg(long, value_name = "FILE")]
    out: PathBuf,

    /// Trace at most this many held-out windows [default: 8]
    #[arg(long)]
    limit: Option<usize>,

    #[command(flatten)]
    common: ConfigArgs,
}

// ── Shared plumbing ──────────────────────────────────────────────────────

fn load_records(data: &Path, schema_path: &Path) -> Result<(Vec<flowsentry::ingest::FlowRecord>, SchemaSpec)> {
    let schema = SchemaSpec::load(schema_path)?;
    let (records, stats) = parse_flow_csv(data, &schema)?;
    eprintln!(
        "parsed {} rows from {} ({} unparseable cells)",
        stats.rows,
        data.display(),
        stats.unparseable_cells
    );
    Ok((records, schema))
}

/// Runs the preparation pipeline and reconciles the model configuration
/// with what the data actually produced (class table, feature widths).
fn prepare_with_config(
    data: &Path,
    schema_path: &Path,
    config: &mut RunConfig,
) -> Result<PreparedData> {
    let (records, schema) = load_records(data, schema_path)?;
    let prepared = prepare(&records, &schema, &config.pipeline)?;
    for line in &prepared.log {
        eprintln!("{line}");
    }
    config.model.classes = prepared.class_names.len();
    config.model.node_dim = prepared.node_dim;
    config.model.tabular_dim = prepared.tabular_dim;
    config.model.seq_len = config.pipeline.window_len;
    Ok(prepared)
}

fn normal_class(class_names: &[String]) -> Option<usize> {
    class_names.iter().position(|c| c == "normal")
}

fn parse_variants(value: Option<&str>) -> Result<Vec<Variant>> {
    match value {
        None => Ok(Variant::ALL.to_vec()),
        Some(list) => list.split(',').map(|v| Variant::parse(v.trim())).collect(),
    }
}

// ── Subcommand bodies ────────────────────────────────────────────────────

fn run_datagen(args: &DatagenArgs) -> Result<()> {
    let mut config = args.common.merge()?;
    if let Some(v) = args.duration {
        config.scenario.duration = v;
    }
    if let Some(v) = args.background_rate {
        config.scenario.background_rate = v;
    }
    if let Some(v) = args.entities {
        config.scenario.entities = v;
    }
    if let Some(v) = &args.attacks {
        config.scenario.attacks = flowsentry::config::parse_attacks(v)?;
    }
    args.common.finish(&config);

    let corpus = generate(&config.scenario)?;
    for line in &corpus.log {
        eprintln!("{line}");
    }
    let schema = corpus.schema()?;
    flowsentry::ingest::write_flow_csv(&args.out, &schema, &corpus.records)?;
    let schema_path = args
        .schema_out
        .clone()
        .unwrap_or_else(|| args.out.with_extension("schema"));
    schema.save(&schema_path)?;
    println!(
        "wrote {} flows to {} (schema: {})",
        corpus.records.len(),
        args.out.display(),
        schema_path.display()
    );
    for (label, count) in &corpus.label_counts {
        println!("  {label}: {count}");
    }
    Ok(())
}

fn run_preprocess(args: &PreprocessArgs) -> Result<()> {
    let config = args.common.merge()?;
    args.common.finish(&config);
    let (records, schema) = load_records(&args.data, &args.schema)?;
    let (clean, dropped) = flowsentry::ingest::deduplicate(records);
    eprintln!("{dropped} exact duplicates removed");
    let (fitted, ds) = fit_transform(&clean, &schema, &config.pipeline.transform)?;
    fitted.save(&args.transform_out)?;
    println!(
        "fitted transform on {} rows -> {} features, saved to {}",
        ds.rows(),
        ds.feature_names().len(),
        args.transform_out.display()
    );
    for line in &fitted.provenance {
        println!("  {line}");
    }
    Ok(())
}

fn run_build_graph(args: &BuildGraphArgs) -> Result<()> {
    let config = args.common.merge()?;
    args.common.finish(&config);
    let (mut records, schema) = load_records(&args.data, &args.schema)?;
    records.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    let timestamps: Vec<f64> = records.iter().map(|r| r.timestamp).collect();
    let labels = vec![0usize; records.len()];
    let set = make_windows(
        &timestamps,
        &labels,
        config.pipeline.window_len,
        config.pipeline.stride,
    )?;
    let index = args.window.unwrap_or(0);
    if index >= set.len() {
        return Err(Error::Data(format!(
            "window {index} out of range, {} windows available",
            set.len()
        )));
    }
    let graph = build_graph(&records[set.window(index)], &schema, &config.pipeline.graph)?;
    let text = graph.to_text()?;
    match &args.out {
        Some(path) => {
            std::fs::write(path, &text)?;
            println!(
                "window {index}: {} nodes, {} edges -> {}",
                graph.node_count(),
                graph.edges.len(),
                path.display()
            );
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn run_train(args: &TrainArgs) -> Result<()> {
    let mut config = args.common.merge()?;
    if let Some(v) = &args.variant {
        config.model.variant = Variant::parse(v)?;
    }
    args.common.finish(&config);
    let prepared = prepare_with_config(&args.data, &args.schema, &mut config)?;
    let mut model = HybridModel::new(config.model.clone())?;
    let report = fit(
        &mut model,
        &prepared.train.windows,
        &prepared.train.labels,
        &prepared.class_names,
        &config.train,
    )?;
    model.save(&args.model_out)?;
    if let Some(path) = &args.log_out {
        std::fs::write(path, report.to_log())?;
    }
    println!(
        "trained {} for {} epochs, best validation macro-F1 {:.4} at epoch {} ({:.1}s)",
        config.model.variant.as_str(),
        report.history.len(),
        report.best_val_f1,
        report.best_epoch,
        report.wall_seconds
    );
    println!("checkpoint: {}", args.model_out.display());
    Ok(())
}

fn run_evaluate(args: &EvaluateArgs) -> Result<()> {
    let mut config = args.common.merge()?;
    args.common.finish(&config);
    let prepared = prepare_with_config(&args.data, &args.schema, &mut config)?;
    let mut model = load_checkpoint_matching(&args.model, &config.model)?;
    let evaluation = evaluate(
        &mut model,
        &prepared.test.windows,
        &prepared.test.labels,
        &prepared.class_names,
        normal_class(&prepared.class_names),
    )?;
    let text = evaluation.report.to_text(&evaluation.confusion);
    std::fs::write(&args.report_out, &text)?;
    print!("{text}");
    println!("report: {}", args.report_out.display());
    Ok(())
}

fn run_ablate(args: &AblateArgs) -> Result<()> {
    let mut config = args.common.merge()?;
    args.common.finish(&config);
    let variants = parse_variants(args.variants.as_deref())?;
    let prepared = prepare_with_config(&args.data, &args.schema, &mut config)?;
    let table = ablate(
        &config.model,
        &config.train,
        &variants,
        &prepared.train.windows,
        &prepared.train.labels,
        &prepared.test.windows,
        &prepared.test.labels,
        &prepared.class_names,
        normal_class(&prepared.class_names),
    )?;
    let text = table.to_text();
    std::fs::write(&args.out, &text)?;
    print!("{text}");
    println!("table: {}", args.out.display());
    Ok(())
}

fn run_explain(args: &ExplainArgs) -> Result<()> {
    let mut config = args.common.merge()?;
    args.common.finish(&config);
    let prepared = prepare_with_config(&args.data, &args.schema, &mut config)?;
    let mut model = load_checkpoint_matching(&args.model, &config.model)?;
    let limit = args.limit.unwrap_or(8).min(prepared.test.windows.len());
    if limit == 0 {
        return Err(Error::Data("no held-out windows to trace".into()));
    }
    let traces = export_attention(
        &mut model,
        &prepared.test.windows[..limit],
        &prepared.test.labels[..limit],
        &prepared.class_names,
        &args.out,
    )?;
    println!("wrote {} traces to {}", traces.len(), args.out.display());
    Ok(())
}

fn run(command: &Command) -> Result<()> {
    match command {
        Command::Datagen(args) => run_datagen(args),
        Command::Preprocess(args) => run_preprocess(args),
        Command::BuildGraph(args) => run_build_graph(args),
        Command::Train(args) => run_train(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Ablate(args) => run_ablate(args),
        Command::Explain(args) => run_explain(args),
        Command::Version => {
            println!("flowsentry {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; everything else is
            // a usage error.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
