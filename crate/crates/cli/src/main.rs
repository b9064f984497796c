use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use handmend_core::backends::config::BackendConfig;
use handmend_core::backends::engine;
use handmend_core::dataset::{
    build_pairs, load_annotation_dir, read_pair_index, split_pairs, write_pair_index, write_split,
};
use handmend_core::evaluation::{
    evaluate_detection_dirs, evaluate_image_sets, extractor_by_name, render_detection_metrics,
    render_detection_table,
};
use handmend_core::pipeline::{ParamOverrides, StepReport};
use handmend_core::{fixtures, raster, Pipeline, SessionParams, StepName, StepStatus};
use handmend_service::ServiceConfig;

#[derive(Parser)]
#[command(name = "handmend", version, about = "Repair malformed hands in generated images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a session and run all five steps.
    Run(RunArgs),
    /// Rerun a step of an existing session, and everything after it.
    Step(StepArgs),
    #[command(subcommand)]
    Eval(EvalCommand),
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Write a synthetic scene image and a mock backend config for it.
    Demo {
        #[arg(long)]
        out: PathBuf,
    },
    /// Answer engine protocol requests on stdin/stdout with in-process backends.
    MockEngine {
        #[arg(long)]
        backend_config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Overrides {
    /// Template to place over each target hand.
    #[arg(long)]
    template: Option<String>,
    /// Also repair hands the detector labels standard.
    #[arg(long)]
    include_standard: bool,
    /// Also repair hands found only by pose estimation.
    #[arg(long)]
    include_undetected: bool,
    #[arg(long, value_name = "R")]
    bbox_expand: Option<f64>,
    #[arg(long, value_name = "R")]
    template_expand: Option<f64>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Use instruction variant N instead of the default instruction.
    #[arg(long, value_name = "N")]
    instruction_variant: Option<usize>,
}

impl Overrides {
    fn to_params(&self) -> ParamOverrides {
        ParamOverrides {
            include_standard_hands: self.include_standard.then_some(true),
            bbox_expand_ratio: self.bbox_expand,
            template_name: self.template.clone(),
            template_expand_ratio: self.template_expand,
            include_undetected_hand: self.include_undetected.then_some(true),
            seed: self.seed,
            instruction_variant: self.instruction_variant,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    image: PathBuf,
    /// Session directory to create.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    backend_config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct StepArgs {
    session: PathBuf,
    step: StepName,
    /// Run only this step; downstream steps are left pending.
    #[arg(long)]
    only: bool,
    #[arg(long)]
    backend_config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Confusion counts, precision and recall per IOU threshold.
    Detect {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.8,0.85,0.9,0.95")]
        iou: Vec<f64>,
        /// Also write key = value metrics here.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Frechet distance between the feature distributions of two image sets.
    Fid {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value = "pixels")]
        extractor: String,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Pair originals with their redrawn versions and write a pair index.
    Pairs {
        #[arg(long)]
        originals: PathBuf,
        #[arg(long)]
        redrawn: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, default_value = "_redrawn")]
        suffix: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a pair index into train.txt and test.txt.
    Split {
        #[arg(long)]
        index: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        train_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    bind: Option<std::net::SocketAddr>,
    #[arg(long)]
    artifact_root: Option<PathBuf>,
    #[arg(long)]
    backend_config: Option<PathBuf>,
    #[arg(long, value_name = "SECS")]
    session_ttl: Option<u64>,
    #[arg(long, value_name = "SECS")]
    step_timeout: Option<u64>,
    #[arg(long)]
    async_steps: bool,
}

fn load_pipeline(path: Option<&Path>) -> Result<Pipeline> {
    let cfg = match path {
        Some(p) => BackendConfig::load(p)?,
        None => BackendConfig::default(),
    };
    Ok(Pipeline::from_config(&cfg)?)
}

fn print_reports(reports: &[StepReport]) -> bool {
    let mut ok = true;
    for r in reports {
        match &r.status {
            StepStatus::Done => println!("{:<10} run {}  done  {} ms", r.step.as_str(), r.run, r.elapsed_ms),
            StepStatus::Failed { class, reason, .. } => {
                ok = false;
                println!("{:<10} run {}  FAILED  {class}: {reason}", r.step.as_str(), r.run);
            }
            StepStatus::Pending => println!("{:<10} run {}  pending", r.step.as_str(), r.run),
        }
        for w in &r.warnings {
            println!("           warning: {w}");
        }
    }
    ok
}

fn run(args: RunArgs) -> Result<bool> {
    let pipeline = load_pipeline(args.backend_config.as_deref())?;
    let image = raster::read_rgb(&args.image).with_context(|| format!("reading {}", args.image.display()))?;
    let params = args.overrides.to_params().apply(&SessionParams::default());
    let mut session = pipeline.create_session(&args.out, image, params)?;
    let reports = pipeline.run_all(&mut session)?;
    let ok = print_reports(&reports);
    println!("session    {}", args.out.display());
    Ok(ok)
}

fn step(args: StepArgs) -> Result<bool> {
    let pipeline = load_pipeline(args.backend_config.as_deref())?;
    let mut session = pipeline.open_session(&args.session)?;
    pipeline.update_params(&mut session, &args.overrides.to_params())?;
    let reports = if args.only {
        vec![pipeline.run_step(&mut session, args.step)?]
    } else {
        pipeline.rerun_from(&mut session, args.step)?
    };
    Ok(print_reports(&reports))
}

fn write_metrics(path: Option<&Path>, text: &str) -> Result<()> {
    if let Some(p) = path {
        std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn eval(cmd: EvalCommand) -> Result<bool> {
    match cmd {
        EvalCommand::Detect { pred, gt, iou, metrics } => {
            let rows = evaluate_detection_dirs(&pred, &gt, &iou)?;
            print!("{}", render_detection_table(&rows));
            write_metrics(metrics.as_deref(), &render_detection_metrics(&rows))?;
        }
        EvalCommand::Fid { a, b, extractor, metrics } => {
            let Some(x) = extractor_by_name(&extractor) else {
                bail!("unknown extractor `{extractor}` (available: pixels)");
            };
            let report = evaluate_image_sets(&a, &b, x.as_ref())?;
            print!("{}", report.render_text());
            write_metrics(metrics.as_deref(), &report.render_metrics())?;
        }
    }
    Ok(true)
}

fn dataset(cmd: DatasetCommand) -> Result<bool> {
    match cmd {
        DatasetCommand::Pairs {
            originals,
            redrawn,
            annotations,
            suffix,
            out,
        } => {
            let ann = load_annotation_dir(&annotations)?;
            let outcome = build_pairs(&originals, &redrawn, &ann, &suffix)?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            write_pair_index(&out, &outcome.pairs)?;
            println!(
                "{} pairs, {} excluded (no non-standard hand), {} warnings",
                outcome.pairs.len(),
                outcome.excluded.len(),
                outcome.warnings.len()
            );
        }
        DatasetCommand::Split {
            index,
            train_fraction,
            seed,
            out,
        } => {
            let pairs = read_pair_index(&index)?;
            let (train, test) = split_pairs(&pairs, train_fraction, seed)?;
            write_split(&out, &train, &test)?;
            println!("train {}  test {}", train.len(), test.len());
        }
    }
    Ok(true)
}

fn serve(args: ServeArgs) -> Result<bool> {
    let mut config = ServiceConfig::from_env()?;
    if let Some(b) = args.bind {
        config.bind = b;
    }
    if let Some(r) = args.artifact_root {
        config.artifact_root = r;
    }
    if args.backend_config.is_some() {
        config.backend_config = args.backend_config;
    }
    if let Some(s) = args.session_ttl {
        config.session_ttl = Duration::from_secs(s);
    }
    if let Some(s) = args.step_timeout {
        config.step_timeout = Duration::from_secs(s);
    }
    config.async_steps |= args.async_steps;
    let bind = config.bind;
    let state = handmend_service::build_state(config)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(bind).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        handmend_service::run(listener, state).await?;
        anyhow::Ok(())
    })?;
    Ok(true)
}

fn demo(out: &Path) -> Result<bool> {
    std::fs::create_dir_all(out)?;
    let image = out.join("scene.png");
    std::fs::write(&image, raster::encode_rgb_png(&fixtures::scene_image())?)?;
    let config = out.join("backends.toml");
    std::fs::write(&config, fixtures::scene_backend_config().to_toml()?)?;
    println!("{}\n{}", image.display(), config.display());
    Ok(true)
}

fn mock_engine(config: Option<&Path>) -> Result<bool> {
    let cfg = match config {
        Some(p) => BackendConfig::load(p)?,
        None => BackendConfig::default(),
    };
    let backends = cfg.build()?;
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let mut writer = stdout.lock();
    engine::serve(&mut stdin.lock(), &mut writer, &backends)?;
    writer.flush()?;
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Step(a) => step(a),
        Command::Eval(c) => eval(c),
        Command::Dataset(c) => dataset(c),
        Command::Serve(a) => serve(a),
        Command::Demo { out } => demo(&out),
        Command::MockEngine { backend_config } => mock_engine(backend_config.as_deref()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
