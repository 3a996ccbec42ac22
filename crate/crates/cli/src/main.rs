use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use compbench::dataset::{validate_manifest, validate_manifest_as, ManifestKind};
use compbench::forge::{
    build_synthetic_bank, ingest_real_bank, parse_object_lists, sample_object_lists, save_bank, BankStore,
    ChatTextGen, ForgeOptions, HttpImageGen,
};
use compbench::http::JsonClient;
use compbench::runner::{
    evaluate, export_report, load_report, markdown_table, report_to_csv, run_sweep, BenchmarkReport, MockRegistry,
    ReportFormat, RunConfig, SweepCell, TableLayout,
};

#[derive(Parser)]
#[command(name = "compbench", version, about = "Compositional benchmark harness for vision-language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate every configured model.
    Eval(ConfigArgs),
    /// Run the zero/1/5-shot × bank grid.
    Sweep(ConfigArgs),
    /// Check a benchmark manifest and print a JSON report.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
    },
    /// Build a demonstration bank.
    Forge(ForgeArgs),
    /// Render a finished run as a table, CSV or JSON.
    Report {
        /// A report file, or a run directory.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "md")]
        format: String,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's cache directory.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Pairwise,
    Winoground,
}

#[derive(Args)]
struct ForgeArgs {
    /// Object lists, one per line, comma-separated.
    #[arg(long, required_unless_present_any = ["real", "sample"])]
    objects: Option<PathBuf>,
    /// Bank directory; its name becomes the bank id.
    #[arg(long)]
    out: PathBuf,
    /// Ingest real demonstrations from this JSONL manifest instead.
    #[arg(long, conflicts_with = "objects")]
    real: Option<PathBuf>,
    /// Sample this many object lists from the built-in vocabulary.
    #[arg(long, conflicts_with_all = ["objects", "real"])]
    sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    object_count: usize,
    #[arg(long, default_value_t = 3)]
    max_attempts: usize,
    #[arg(long, default_value_t = 1)]
    concurrency: usize,
    #[arg(long, env = "FORGE_TEXT_ENDPOINT", default_value = "https://api.openai.com/v1")]
    text_endpoint: String,
    #[arg(long, default_value = "gpt-4")]
    text_model: String,
    #[arg(long, env = "FORGE_IMAGE_ENDPOINT", default_value = "https://api.openai.com/v1")]
    image_endpoint: String,
    #[arg(long, default_value = "dall-e-3")]
    image_model: String,
    /// Environment variable holding the bearer token for both services.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    api_key_env: String,
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(dir) = &args.cache_dir {
        config.cache_dir = Some(dir.clone());
    }
    Ok(config)
}

fn cmd_eval(args: ConfigArgs) -> Result<bool> {
    let config = load_config(&args)?;
    let outcome = evaluate(&config, &MockRegistry::new())?;
    let refs: Vec<&BenchmarkReport> = outcome.reports.iter().collect();
    print!("{}", markdown_table(&refs, TableLayout::Models));
    for (model, e) in &outcome.failures {
        eprintln!("model `{model}` failed: {e}");
    }
    eprintln!("reports in {}", config.output_dir.display());
    Ok(outcome.all_completed())
}

fn cmd_sweep(args: ConfigArgs) -> Result<bool> {
    let config = load_config(&args)?;
    let outcome = run_sweep(&config, &MockRegistry::new())?;
    print!("{}", outcome.table());
    eprintln!("reports in {}", config.output_dir.display());
    Ok(outcome.all_completed())
}

fn cmd_validate(manifest: &Path, kind: Option<KindArg>) -> Result<bool> {
    let report = match kind {
        None => validate_manifest(manifest),
        Some(KindArg::Pairwise) => validate_manifest_as(manifest, ManifestKind::Pairwise),
        Some(KindArg::Winoground) => validate_manifest_as(manifest, ManifestKind::Winoground),
    };
    println!("{}", report.to_json());
    Ok(report.is_valid())
}

fn cmd_forge(args: ForgeArgs) -> Result<bool> {
    let store = BankStore::new(&args.out)?;
    if let Some(manifest) = &args.real {
        let manifest = manifest.canonicalize().with_context(|| format!("{}", manifest.display()))?;
        let mut bank = ingest_real_bank(&manifest)?;
        bank.bank_id = store.bank_id().to_string();
        save_bank(&bank, &store)?;
        eprintln!("wrote {} real demonstrations to {}", bank.demos.len(), store.manifest_path().display());
        return Ok(true);
    }
    let lists = match (&args.objects, args.sample) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
            parse_object_lists(&text)
        }
        (None, Some(n)) => sample_object_lists(n, args.object_count, args.seed),
        (None, None) => bail!("one of --objects, --sample or --real is required"),
    };
    let text_client = JsonClient::from_env(&args.text_endpoint, Some(&args.api_key_env), true)?;
    let image_client = JsonClient::from_env(&args.image_endpoint, Some(&args.api_key_env), true)?;
    let textgen = ChatTextGen::new(text_client, &args.text_model);
    let imagegen = HttpImageGen::new(image_client, &args.image_model);
    let opts = ForgeOptions {
        object_count: args.object_count,
        max_attempts: args.max_attempts,
        concurrency: args.concurrency,
        ..ForgeOptions::default()
    };
    let bank = build_synthetic_bank(&lists, &textgen, &imagegen, args.seed, &store, &opts)?;
    eprintln!("wrote {} synthetic demonstrations to {}", bank.demos.len(), store.manifest_path().display());
    Ok(true)
}

/// Reports in a run directory: `sweep.json` cells when present, otherwise
/// every complete `<model>.json`.
fn run_reports(dir: &Path) -> Result<(Vec<BenchmarkReport>, TableLayout)> {
    let sweep = dir.join("sweep.json");
    if sweep.exists() {
        let text = std::fs::read_to_string(&sweep)?;
        let cells: Vec<SweepCell> = serde_json::from_str(&text).with_context(|| format!("{}", sweep.display()))?;
        return Ok((cells.iter().filter_map(SweepCell::report).cloned().collect(), TableLayout::Sweep));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.ends_with(".json") && !name.ends_with(".partial.json")
        })
        .collect();
    paths.sort();
    let reports = paths.iter().map(load_report).collect::<Result<Vec<_>, _>>()?;
    Ok((reports, TableLayout::Models))
}

fn cmd_report(input: &Path, format: &str, out: Option<&Path>) -> Result<bool> {
    let format: ReportFormat = format.parse().map_err(anyhow::Error::msg)?;
    let (reports, layout) = if input.is_dir() {
        run_reports(input)?
    } else {
        (vec![load_report(input)?], TableLayout::Models)
    };
    if reports.is_empty() {
        bail!("no reports found in {}", input.display());
    }
    let text = match format {
        ReportFormat::MarkdownTable => markdown_table(&reports.iter().collect::<Vec<_>>(), layout),
        ReportFormat::Json if reports.len() == 1 => serde_json::to_string_pretty(&reports[0])? + "\n",
        ReportFormat::Json => serde_json::to_string_pretty(&reports)? + "\n",
        ReportFormat::Csv if reports.len() == 1 => report_to_csv(&reports[0])?,
        ReportFormat::Csv => bail!("CSV export takes a single report; pass a report file"),
    };
    match out {
        Some(path) if reports.len() == 1 => export_report(&reports[0], format, path)?,
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Validate { manifest, kind } => cmd_validate(&manifest, kind),
        Command::Forge(args) => cmd_forge(args),
        Command::Report { input, format, out } => cmd_report(&input, &format, out.as_deref()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
