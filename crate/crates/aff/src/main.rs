use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aff_core::autodiff::{GradCheckConfig, Graph};
use aff_core::checks;
use aff_core::clustering::{balanced_cluster, no_anchor_cluster, silhouette};
use aff_core::model::{classify, make_toy_dataset, train_toy, Model, ModelConfig, TrainOptions};
use aff_core::sfc::CurveKind;
use aff_core::Point;
use clap::{Args, Parser, Subcommand};

use aff_tools::{checkpoint, config, overlay, pnm, tables, Error};

/// Irregular-token image backbone: clustering, adaptive downsampling,
/// gradient checks and toy training.
#[derive(Debug, Parser)]
#[command(name = "aff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Balanced clustering of a token set; prints the silhouette coefficient.
    Cluster(ClusterArgs),
    /// Runs a model on one image and dumps tokens and overlays per stage.
    DownsampleDemo(DemoArgs),
    /// Finite-difference check of every op and the composed losses.
    Gradcheck(GradcheckArgs),
    /// Trains a model on the synthetic textured-patch task.
    TrainToy(TrainArgs),
    /// Draws the tokens of a token CSV onto an image.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
struct ClusterArgs {
    /// CSV with `x` and `y` columns.
    #[arg(long, conflicts_with = "grid", required_unless_present = "grid")]
    input: Option<PathBuf>,
    /// Use an N x N unit grid instead of an input file.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long, default_value_t = 8)]
    cluster_size: usize,
    #[arg(long, default_value = "scanline")]
    curve: CurveKind,
    /// Order tokens by curve rank of their own cell instead of anchors.
    #[arg(long)]
    no_anchors: bool,
    /// Assignment CSV destination.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DemoArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Initialization seed when no checkpoint is given.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Model config JSON; the nano preset when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 2e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.05)]
    weight_decay: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 2000)]
    train_size: usize,
    #[arg(long, default_value_t = 500)]
    test_size: usize,
    /// Overrides the config's score weight.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    tokens: PathBuf,
    /// Only tokens marked selected.
    #[arg(long)]
    selected_only: bool,
    #[arg(long)]
    out: PathBuf,
}

/// Exit code 1: bad invocation or unreadable paths. Exit code 2: inputs that
/// parse but fail validation, or a failed check.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Invalid(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<aff_core::Error> for Failure {
    fn from(e: aff_core::Error) -> Self {
        Failure::Invalid(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn create_dir(dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Usage(format!("{}: {e}", dir.display())))
}

fn unit_grid(n: usize) -> Vec<Point> {
    (0..n * n).map(|i| Point::new((i % n) as f64, (i / n) as f64)).collect()
}

fn run_cluster(a: ClusterArgs) -> Outcome {
    let positions = match (&a.input, a.grid) {
        (Some(path), _) => tables::parse_positions(&tables::read_text(path)?)?,
        (None, Some(n)) if n > 0 => unit_grid(n),
        _ => return Err(Failure::Usage("--grid must be positive".into())),
    };
    let assignment = if a.no_anchors {
        no_anchor_cluster(&positions, a.cluster_size, a.curve)?
    } else {
        balanced_cluster(&positions, a.cluster_size, a.curve)?
    };
    if let Some(out) = &a.out {
        tables::write_text(out, &tables::format_assignment(&positions, &assignment))?;
    }
    let sil = silhouette(&positions, &assignment)?;
    println!(
        "tokens {} clusters {} curve {} anchors {} silhouette {sil:.6}",
        positions.len(),
        assignment.cluster_count(),
        a.curve.name(),
        if a.no_anchors { "no" } else { "yes" },
    );
    Ok(())
}

fn run_demo(a: DemoArgs) -> Outcome {
    let cfg = config::load(&a.config)?;
    let image = pnm::read_image(&a.image)?;
    let mut model = Model::<f64>::new(cfg, a.seed)?;
    if let Some(ck) = &a.checkpoint {
        checkpoint::load_into(ck, &mut model.store)?;
    }
    let input = image.to_image(model.config.in_channels)?;
    let mut g = Graph::new();
    let out = classify(&mut g, &model, &input)?;
    create_dir(&a.out)?;
    for record in &out.stages {
        let rows = tables::stage_rows(record);
        let stem = format!("stage{}", record.stage);
        tables::write_text(a.out.join(format!("{stem}_tokens.csv")), &tables::format_tokens(&rows))?;
        let drawn = overlay::render_overlay(&image, &record.positions)?;
        pnm::write_image(a.out.join(format!("{stem}_overlay.ppm")), &drawn)?;
        println!(
            "stage {} tokens {} selected {}{}",
            record.stage,
            record.positions.len(),
            record.selected.iter().filter(|&&s| s).count(),
            if record.global_attention {
                " (global attention)"
            } else {
                ""
            }
        );
    }
    let logits = g.value(out.logits);
    println!("logits {:?}", logits.data);
    Ok(())
}

fn run_gradcheck(a: GradcheckArgs) -> Outcome {
    let cfg = GradCheckConfig {
        seed: a.seed,
        ..GradCheckConfig::default()
    };
    let entries = checks::full_suite(&cfg)?;
    let mut worst = 0.0f64;
    for e in &entries {
        println!("{:<18} max rel err {:.3e}", e.name, e.max_rel_err());
        worst = worst.max(e.max_rel_err());
    }
    let score_norm: f64 = entries
        .iter()
        .filter(|e| e.name == "classifier")
        .flat_map(|e| e.report.params.iter())
        .filter(|p| p.name.ends_with(".score.w"))
        .map(|p| p.grad_norm)
        .fold(0.0, f64::max);
    println!("score layer gradient norm {score_norm:.3e}");
    println!("max rel err {worst:.3e}");
    if worst < a.tolerance && score_norm > 0.0 {
        Ok(())
    } else {
        Err(Failure::Invalid(format!(
            "gradient check failed (tolerance {:.1e})",
            a.tolerance
        )))
    }
}

fn run_train(a: TrainArgs) -> Outcome {
    let mut cfg = match &a.config {
        Some(path) => config::load(path)?,
        None => ModelConfig::aff_nano(),
    };
    if let Some(alpha) = a.alpha {
        cfg.alpha = alpha;
    }
    cfg.validate()?;
    let train = make_toy_dataset(a.seed, a.train_size, 32)?;
    let test = make_toy_dataset(a.seed.wrapping_add(1), a.test_size, 32)?;
    let opts = TrainOptions {
        epochs: a.epochs,
        lr: a.lr,
        weight_decay: a.weight_decay,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    create_dir(&a.out)?;
    let outcome = train_toy(&cfg, &train, &test, &opts, |m| {
        println!(
            "epoch {:>3} loss {:.6} acc {:.4} focus {:.4}",
            m.epoch, m.loss, m.acc, m.focus_ratio
        );
    })?;
    tables::write_text(a.out.join("metrics.csv"), &tables::format_metrics(&outcome.log))?;
    checkpoint::save(a.out.join("checkpoint.bin"), &outcome.model.store)?;
    config::save(a.out.join("config.json"), &outcome.model.config)?;
    Ok(())
}

fn run_render(a: RenderArgs) -> Outcome {
    let image = pnm::read_image(&a.image)?;
    let rows = tables::parse_tokens(&tables::read_text(&a.tokens)?)?;
    let points: Vec<Point> = rows
        .iter()
        .filter(|r| r.selected || !a.selected_only)
        .map(|r| Point::new(r.x, r.y))
        .collect();
    pnm::write_image(&a.out, &overlay::render_overlay(&image, &points)?)?;
    Ok(())
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Invalid(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Invalid(m) => m,
        }
    }
}

fn dispatch(command: Command) -> Outcome {
    match command {
        Command::Cluster(a) => run_cluster(a),
        Command::DownsampleDemo(a) => run_demo(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::TrainToy(a) => run_train(a),
        Command::Render(a) => run_render(a),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(run(std::env::args_os()))
}
