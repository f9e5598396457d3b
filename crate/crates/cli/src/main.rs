use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use restory_core::aligner::{align, AlignmentResult};
use restory_core::ingest::{load_frame_dir, SamplingRate, Transcoder};
use restory_core::project::{
    render_storyboard, write_alignment_artifacts, Overrides, Project, ProjectConfig, ProjectError, SourceKind,
    CONFIG_FILE,
};
use restory_core::storyboard::{parse_manifest, render, RenderFormat, MANIFEST_FILE};
use restory_core::{SimilarityMatrix, Strategy};
use restory_server::{AppState, ServerError};

const EXIT_USAGE: u8 = 1;
const EXIT_PIPELINE: u8 = 2;
const EXIT_PROVIDER: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "restory", version, about = "Re-express a reference storyboard with frames from new footage")]
struct Cli {
    /// Project config file (or a directory holding restory.toml).
    #[arg(long, global = true, env = "RESTORY_CONFIG")]
    config: Option<PathBuf>,
    /// Pose weight in [0, 1]; the context weight is 1 - alpha.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    strategy: Option<Strategy>,
    /// Sampling rate in Hz, e.g. 2, 0.5 or 30000/1001.
    #[arg(long, global = true)]
    rate: Option<SamplingRate>,
    /// Use the deterministic mock providers regardless of the config.
    #[arg(long, global = true)]
    mock_providers: bool,
    #[arg(long, global = true, default_value_t = 8080)]
    port: u16,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample and crop a source: a project id, a frame directory, or a video file.
    Ingest { source: String },
    /// Caption a reference storyboard or input video (ingesting first if needed).
    Caption { id: String },
    /// Align a reference storyboard against an input video, or a stored matrix.
    Align {
        #[arg(required_unless_present = "matrix")]
        reference: Option<String>,
        #[arg(required_unless_present = "matrix")]
        video: Option<String>,
        /// JSON similarity matrix, or an array of weighted-similarity rows.
        #[arg(long, conflicts_with_all = ["reference", "video"])]
        matrix: Option<PathBuf>,
    },
    /// Re-render a stored storyboard.
    Render {
        id: String,
        #[arg(long, value_enum, default_value_t = Format::All)]
        format: Format,
    },
    /// Run every stage and write the generated storyboard.
    Generate { reference: String, video: String },
    /// Serve the review API (and UI assets, if given).
    Serve {
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    All,
    Manifest,
    Html,
    Markdown,
}

#[derive(Debug)]
enum Failure {
    Project(ProjectError),
    Server(ServerError),
    Usage(String),
}

impl From<ProjectError> for Failure {
    fn from(e: ProjectError) -> Self {
        Failure::Project(e)
    }
}

impl From<ServerError> for Failure {
    fn from(e: ServerError) -> Self {
        Failure::Server(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Project(e) if e.is_provider_failure() => EXIT_PROVIDER,
            Failure::Usage(_) => EXIT_USAGE,
            _ => EXIT_PIPELINE,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Project(e) => write!(f, "{e}"),
            Failure::Server(e) => write!(f, "serve: {e}"),
            Failure::Usage(m) => write!(f, "{m}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("RESTORY_LOG").unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}

fn load_config(cli: &Cli) -> Result<ProjectConfig, Failure> {
    let path = cli.config.clone().unwrap_or_else(|| PathBuf::from(CONFIG_FILE));
    let mut config = ProjectConfig::load(&path)?;
    config.apply(&Overrides {
        alpha: cli.alpha,
        strategy: cli.strategy,
        rate: cli.rate,
        mock_providers: cli.mock_providers,
        workers: cli.workers,
    })?;
    Ok(config)
}

fn open(cli: &Cli) -> Result<Project, Failure> {
    Ok(Project::open(load_config(cli)?)?)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Ingest { source } => ingest(&cli, source),
        Command::Caption { id } => {
            let project = open(&cli)?;
            let captions = project.caption(id)?;
            println!("{} frames captioned ({} model calls)", captions.len(), project.provider_calls().vlm);
            Ok(())
        }
        Command::Align { matrix: Some(path), .. } => align_matrix(&cli, path),
        Command::Align { reference: Some(reference), video: Some(video), .. } => {
            let project = open(&cli)?;
            let pair = project.align(reference, video)?;
            let dir = project.config().state_dir().join("alignments").join(format!("{reference}__{video}"));
            write_alignment_artifacts(&dir, &pair.alignment, &pair.matrix, &pair.pool)?;
            print_alignment(&pair.alignment);
            Ok(())
        }
        Command::Align { .. } => Err(Failure::Usage("align needs <REFERENCE> <VIDEO> or --matrix".into())),
        Command::Render { id, format } => {
            let config = load_config(&cli)?;
            let dir = config.storyboard_dir(id);
            let storyboard = parse_manifest(&dir.join(MANIFEST_FILE)).map_err(ProjectError::from)?;
            let paths = match format {
                Format::All => vec![render_storyboard(&config, &storyboard)?],
                Format::Manifest => vec![render_one(&config, &storyboard, RenderFormat::Manifest)?],
                Format::Html => vec![render_one(&config, &storyboard, RenderFormat::Html)?],
                Format::Markdown => vec![render_one(&config, &storyboard, RenderFormat::Markdown)?],
            };
            for path in paths {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Generate { reference, video } => {
            let project = open(&cli)?;
            let report = project.generate(reference, video)?;
            if report.kept_curated {
                println!("storyboard {} has been curated; left unchanged", report.storyboard.id);
            } else {
                print_alignment(&report.alignment);
            }
            let calls = report.provider_calls;
            println!(
                "provider calls: vlm {}, embedder {}, detector {}",
                calls.vlm, calls.embedder, calls.detector
            );
            println!("manifest: {}", report.manifest_path.display());
            println!("html: {}", report.html_path.display());
            Ok(())
        }
        Command::Serve { ui_dir, host } => serve(&cli, ui_dir.clone(), host),
    }
}

fn render_one(
    config: &ProjectConfig,
    storyboard: &restory_core::Storyboard,
    format: RenderFormat,
) -> Result<PathBuf, Failure> {
    let dir = config.storyboard_dir(&storyboard.id);
    Ok(render(storyboard, format, &dir, &config.project_root).map_err(ProjectError::from)?)
}

fn ingest(cli: &Cli, source: &str) -> Result<(), Failure> {
    let project = open(cli)?;
    let path = Path::new(source);
    let store = if path.is_file() {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("video");
        let out = project.config().state_dir().join("extracted").join(stem);
        let video = Transcoder::default()
            .extract(path, &out, project.config().sampling.rate_hz)
            .map_err(ProjectError::from)?;
        project.ingest_video(&video, SourceKind::Video)?
    } else if looks_like_path(source) {
        let video = load_frame_dir(path).map_err(ProjectError::from)?;
        project.ingest_video(&video, SourceKind::Video)?
    } else {
        project.ingest(source)?
    };
    println!("{} frames ingested", store.frames.len());
    Ok(())
}

/// Project ids never contain a separator, so anything that does is a path.
fn looks_like_path(source: &str) -> bool {
    source.contains(std::path::MAIN_SEPARATOR) || source.contains('/') || source.starts_with('.')
}

fn align_matrix(cli: &Cli, path: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let bad = |e: String| Failure::Usage(format!("{}: {e}", path.display()));
    let mut matrix: SimilarityMatrix = match serde_json::from_str::<Vec<Vec<f64>>>(&text) {
        Ok(rows) => {
            if rows.is_empty() || rows.iter().any(|r| r.len() != rows[0].len() || r.is_empty()) {
                return Err(bad("rows must be non-empty and of equal length".into()));
            }
            SimilarityMatrix::from_weighted_rows(&rows)
        }
        Err(_) => serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?,
    };
    // A project config is optional here; flags still apply.
    let mut config = match &cli.config {
        Some(_) => load_config(cli)?.alignment,
        None => restory_core::AlignmentConfig::default(),
    };
    if let Some(strategy) = cli.strategy {
        config.strategy = strategy;
    }
    if let Some(alpha) = cli.alpha {
        config.alpha = restory_core::Alpha::new(alpha).map_err(|e| Failure::Project(e.into()))?;
        matrix = matrix.with_alpha(config.alpha);
    } else {
        config.alpha = restory_core::Alpha::new(matrix.alpha).map_err(|e| bad(e.to_string()))?;
    }
    let result = align(&matrix, &config).map_err(|e| Failure::Project(e.into()))?;
    print_alignment(&result);
    Ok(())
}

fn print_alignment(result: &AlignmentResult) {
    for slot in &result.slots {
        let b = &slot.breakdown;
        println!(
            "slot {} -> frame {}  weighted {:.6}  (pose {:.6}, context {:.6})",
            slot.slot_index, slot.chosen_frame_index, b.weighted_sim, b.pose_sim, b.context_sim
        );
    }
    let chosen: Vec<String> = result.slots.iter().map(|s| s.chosen_frame_index.to_string()).collect();
    println!("choices: ({})  total {:.6}  strategy {}", chosen.join(", "), result.total_score, result.config.strategy);
}

fn serve(cli: &Cli, ui_dir: Option<PathBuf>, host: &str) -> Result<(), Failure> {
    let config = load_config(cli)?;
    let ip = host.parse().map_err(|_| Failure::Usage(format!("invalid host {host:?}")))?;
    let addr = SocketAddr::new(ip, cli.port);
    let state = AppState::load(config, ui_dir)?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Server(ServerError::Io(e)))?;
    runtime.block_on(async move {
        let listener = restory_server::bind(addr).await?;
        println!("listening on http://{}", listener.local_addr()?);
        restory_server::run(listener, state).await
    })?;
    Ok(())
}
