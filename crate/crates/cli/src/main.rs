use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use rand::rngs::StdRng;
use rand::SeedableRng;
use reasongraph_core::synth::{print_with_prose, random_trace, SynthConfig};
use reasongraph_core::{
    analyze, emit, has_errors, parse, Diagnostic, Direction, ParseError, RawModelOutput,
    ReasoningMethod, Severity, VisualizationConfig,
};
use reasongraph_service::{
    load_registry_file, mock_provider, AppState, Gateway, MockBehavior, Registry, CONFIG_ENV,
};

const USAGE_ERROR: u8 = 2;

#[derive(Parser)]
#[command(name = "reasongraph", version, about = "Parse tagged LLM reasoning output into Mermaid flowcharts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse one stored model response and write diagram and/or trace JSON.
    Parse(ParseArgs),
    /// Parse every `<method>/<name>.txt` under a directory and report counts.
    Corpus(CorpusArgs),
    /// Run the REST service.
    Serve(ServeArgs),
    /// Write a synthetic well-formed corpus.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Emit {
    Mermaid,
    Json,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    #[value(name = "top_down", alias = "TD")]
    TopDown,
    #[value(name = "left_right", alias = "LR")]
    LeftRight,
}

#[derive(Args)]
struct VizArgs {
    /// JSON file with a full visualization config; flags below override it.
    #[arg(long, value_name = "FILE")]
    viz_config: Option<PathBuf>,
    #[arg(long)]
    direction: Option<DirectionArg>,
    #[arg(long)]
    wrap_width: Option<usize>,
    #[arg(long)]
    max_label_chars: Option<usize>,
    /// Omit "(score: …)" lines from node labels.
    #[arg(long)]
    no_scores: bool,
}

#[derive(Args)]
struct ParseArgs {
    #[arg(long, value_parser = parse_method)]
    method: ReasoningMethod,
    /// Raw model output; `-` reads standard input.
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "mermaid")]
    emit: Emit,
    /// Output path; its extension is replaced with .mmd / .json. `-` writes
    /// to standard output. Defaults to the input path.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Question text for the root node.
    #[arg(long, default_value = "")]
    question: String,
    #[command(flatten)]
    viz: VizArgs,
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long)]
    dir: PathBuf,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8765)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Provider config; falls back to $REASONGRAPH_CONFIG, then to a
    /// built-in demo mock provider.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory with the built web UI, served at /.
    #[arg(long)]
    static_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    per_method: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn parse_method(s: &str) -> Result<ReasoningMethod, String> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = ReasoningMethod::ALL.iter().map(|m| m.as_str()).collect();
        format!("unknown method `{s}`; expected one of {}", names.join(", "))
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                eprintln!("\n{}", Cli::command().render_usage());
                return ExitCode::from(USAGE_ERROR);
            }
            return ExitCode::SUCCESS;
        }
    };
    let result = match cli.command {
        Command::Parse(a) => run_parse(a),
        Command::Corpus(a) => run_corpus(a),
        Command::Serve(a) => run_serve(a),
        Command::Synth(a) => run_synth(a).map(|()| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn viz_config(args: &VizArgs) -> Result<VisualizationConfig, String> {
    let mut config = match &args.viz_config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => VisualizationConfig::default(),
    };
    if let Some(d) = args.direction {
        config.direction = match d {
            DirectionArg::TopDown => Direction::TopDown,
            DirectionArg::LeftRight => Direction::LeftRight,
        };
    }
    if let Some(w) = args.wrap_width {
        config.wrap_width = w;
    }
    if let Some(m) = args.max_label_chars {
        config.max_label_chars = m;
    }
    if args.no_scores {
        config.show_scores = false;
    }
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

fn print_diagnostics(source: &str, diagnostics: &[Diagnostic]) {
    for d in diagnostics {
        let severity = match d.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        let at = d.span.map(|s| format!(":{}-{}", s.start, s.end)).unwrap_or_default();
        eprintln!("{source}{at}: {severity}[{}]: {}", d.code, d.message);
    }
}

fn run_parse(args: ParseArgs) -> Result<u8> {
    let config = match viz_config(&args.viz) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(USAGE_ERROR);
        }
    };
    let (text, source) = if args.input.as_os_str() == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s).context("reading standard input")?;
        (s, "<stdin>".to_string())
    } else {
        let bytes = std::fs::read(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
        (String::from_utf8_lossy(&bytes).into_owned(), args.input.display().to_string())
    };
    let raw = RawModelOutput::new(text, args.method, args.question);
    let parsed = match parse(&raw) {
        Ok(p) => p,
        Err(e @ ParseError::NoElements { .. }) => {
            print_diagnostics(&source, &e.diagnostics());
            return Ok(1);
        }
    };
    let analyzed = analyze(parsed.trace);
    let mut diagnostics = parsed.diagnostics;
    diagnostics.extend(analyzed.diagnostics);
    print_diagnostics(&source, &diagnostics);

    let out = args.out.clone().unwrap_or_else(|| args.input.clone());
    let to_stdout = out.as_os_str() == "-";
    if matches!(args.emit, Emit::Mermaid | Emit::Both) {
        let doc = emit(&analyzed.trace, &config)?;
        write_artifact(&out, "mmd", to_stdout, &doc.text)?;
    }
    if matches!(args.emit, Emit::Json | Emit::Both) {
        let mut json = serde_json::to_string_pretty(&analyzed.trace)?;
        json.push('\n');
        write_artifact(&out, "json", to_stdout, &json)?;
    }
    Ok(if has_errors(&diagnostics) { 1 } else { 0 })
}

fn write_artifact(out: &Path, ext: &str, to_stdout: bool, text: &str) -> Result<()> {
    if to_stdout {
        io::stdout().write_all(text.as_bytes())?;
        return Ok(());
    }
    let path = out.with_extension(ext);
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

#[derive(Default, serde::Serialize)]
struct Counts {
    total: usize,
    clean: usize,
    warnings: usize,
    failed: usize,
}

fn run_corpus(args: CorpusArgs) -> Result<u8> {
    if !args.dir.is_dir() {
        eprintln!("error: {} is not a directory", args.dir.display());
        return Ok(USAGE_ERROR);
    }
    let mut report: BTreeMap<&'static str, Counts> = BTreeMap::new();
    for method in ReasoningMethod::ALL {
        let dir = args.dir.join(method.as_str());
        let counts = report.entry(method.as_str()).or_default();
        if !dir.is_dir() {
            continue;
        }
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect();
        files.sort();
        for file in files {
            let bytes = std::fs::read(&file)?;
            let raw = RawModelOutput::new(String::from_utf8_lossy(&bytes), method, "");
            counts.total += 1;
            match parse(&raw) {
                Err(_) => {
                    counts.failed += 1;
                    eprintln!("{}: no reasoning elements found", file.display());
                }
                Ok(p) if has_errors(&p.diagnostics) => {
                    counts.failed += 1;
                    print_diagnostics(&file.display().to_string(), &p.diagnostics);
                }
                Ok(p) if p.diagnostics.is_empty() => counts.clean += 1,
                Ok(_) => counts.warnings += 1,
            }
        }
    }
    let total: usize = report.values().map(|c| c.total).sum();
    let failed: usize = report.values().map(|c| c.failed).sum();
    let rate = if total == 0 { 1.0 } else { (total - failed) as f64 / total as f64 };
    if args.json {
        let v = serde_json::json!({ "methods": report, "total": total, "failed": failed, "parse_rate": rate });
        println!("{}", serde_json::to_string_pretty(&v)?);
    } else {
        println!("{:<20} {:>6} {:>6} {:>9} {:>7}", "method", "total", "clean", "warnings", "failed");
        for (m, c) in &report {
            println!("{m:<20} {:>6} {:>6} {:>9} {:>7}", c.total, c.clean, c.warnings, c.failed);
        }
        println!("parse rate: {:.2}% ({} of {total} files)", rate * 100.0, total - failed);
    }
    Ok(if failed == 0 { 0 } else { 1 })
}

const DEMO_OUTPUT: &str = "<step>Read the question and identify what is being asked.</step>\n<step>Work through the arithmetic one piece at a time.</step>\n<final_answer>This is the built-in demo provider; configure a real provider with --config.</final_answer>";

fn demo_registry() -> Registry {
    let mut p = mock_provider(vec![MockBehavior::Return(DEMO_OUTPUT.into())]);
    p.id = "demo".into();
    p.models = vec!["demo".into()];
    Registry::from_profiles(vec![p], |_| None).expect("single provider")
}

fn run_serve(args: ServeArgs) -> Result<u8> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(io::stdout)
        .init();
    let config = args.config.or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    let registry = match &config {
        Some(path) => match load_registry_file(path) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("error: {e}");
                return Ok(USAGE_ERROR);
            }
        },
        None => {
            eprintln!("no provider config given; serving the built-in demo provider");
            demo_registry()
        }
    };
    for w in &registry.warnings {
        eprintln!("warning: {w}");
    }
    let mut state = AppState::new(Gateway::new(registry));
    if let Some(dir) = args.static_dir {
        state = state.with_static_dir(dir);
    }
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = match tokio::net::TcpListener::bind((args.host.as_str(), args.port)).await {
            Ok(l) => l,
            Err(e) => {
                eprintln!("error: cannot bind {}:{}: {e}", args.host, args.port);
                return Ok(1);
            }
        };
        println!("reasongraph listening on http://{}", listener.local_addr()?);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        reasongraph_service::serve(listener, state, shutdown).await?;
        Ok(0)
    })
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let mut rng = StdRng::seed_from_u64(args.seed);
    let cfg = SynthConfig::default();
    for method in ReasoningMethod::ALL {
        let dir = args.out.join(method.as_str());
        std::fs::create_dir_all(&dir)?;
        for i in 0..args.per_method {
            let trace = random_trace(method, &mut rng, &cfg);
            let text = print_with_prose(&trace, &mut rng);
            std::fs::write(dir.join(format!("{:03}.txt", i + 1)), text + "\n")?;
        }
    }
    println!("wrote {} files to {}", args.per_method * 6, args.out.display());
    Ok(())
}
