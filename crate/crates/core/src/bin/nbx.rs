use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nbx::batch::{self, AttackKind, Condition, OracleSpec, RunSpec};
use nbx::oracle::wire::WireMode;
use nbx::rng::Rng;
use nbx::service::{self, ServiceConfig, ServiceMode};
use nbx::synth::{self, FirstLayer, MlpSpec};
use nbx::tensor::Shape;
use nbx::transform::EotConfig;

/// Query-limited black-box adversarial examples.
#[derive(Parser)]
#[command(name = "nbx", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of attacks described by a TOML run spec.
    Attack(AttackArgs),
    /// Check an adversarial image against its original.
    Verify(VerifyArgs),
    /// Serve a model over HTTP.
    Serve(ServeArgs),
    /// Model utilities.
    Model {
        #[command(subcommand)]
        command: ModelCommand,
    },
}

#[derive(Args)]
struct AttackArgs {
    /// Run spec (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    kind: Option<Kind>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_queries: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Attack instances one at a time.
    #[arg(long)]
    sequential: bool,
    /// Print the resolved spec and exit without querying.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Targeted,
    Untargeted,
    PartialInfo,
    Eot,
    LabelSet,
}

impl From<Kind> for AttackKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Targeted => AttackKind::Targeted,
            Kind::Untargeted => AttackKind::Untargeted,
            Kind::PartialInfo => AttackKind::PartialInfo,
            Kind::Eot => AttackKind::Eot,
            Kind::LabelSet => AttackKind::LabelSet,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Full,
    Topk,
}

#[derive(Args)]
struct OracleArgs {
    /// Model file for an in-process oracle.
    #[arg(long, conflicts_with = "endpoint", required_unless_present = "endpoint")]
    model: Option<PathBuf>,
    /// URL of a running victim service.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, value_enum, default_value = "full")]
    mode: Mode,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    adv: PathBuf,
    #[arg(long)]
    original: PathBuf,
    #[arg(long)]
    epsilon: f64,
    /// target=N, not=N, misclassified, avoid=N,M or rotated-target=N.
    #[arg(long)]
    condition: Condition,
    #[command(flatten)]
    oracle: OracleArgs,
    /// Seed of the rotations for rotated-target.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rotation range in degrees for rotated-target.
    #[arg(long, default_value_t = 30.0)]
    max_angle: f64,
}

#[derive(Args)]
struct ServeArgs {
    /// Service config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    budget: Option<u64>,
    /// Requests per second.
    #[arg(long)]
    rate_limit: Option<f64>,
    #[arg(long, env = "NBX_BIND")]
    bind: Option<String>,
}

#[derive(Subcommand)]
enum ModelCommand {
    /// Write a seeded random MLP.
    Gen(GenArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Layer {
    Iid,
    SmoothDisk,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "16x16x1")]
    shape: Shape,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "64")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 16.0)]
    scale: f64,
    #[arg(long, value_enum, default_value = "iid")]
    first_layer: Layer,
    #[arg(long)]
    out: PathBuf,
    /// Also write this many smooth sample images next to the model.
    #[arg(long, default_value_t = 0)]
    images: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Attack(a) => attack(a),
        Command::Verify(v) => verify(v),
        Command::Serve(s) => serve(s),
        Command::Model {
            command: ModelCommand::Gen(g),
        } => model_gen(g),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

type CliResult = Result<ExitCode, Box<dyn std::error::Error>>;

fn attack(a: AttackArgs) -> CliResult {
    let mut spec = RunSpec::load(&a.config)?;
    if let Some(k) = a.kind {
        spec.kind = k.into();
    }
    if let Some(d) = a.output_dir {
        spec.output_dir = d;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(e) = a.epsilon {
        spec.attack.epsilon = e;
    }
    if let Some(q) = a.max_queries {
        spec.attack.max_queries = q;
    }
    if let Some(n) = a.samples {
        spec.attack.nes.n_samples = n;
    }
    if let Some(s) = a.sigma {
        spec.attack.nes.sigma = s;
    }
    if let Some(lr) = a.lr {
        spec.attack.lr = lr;
    }
    if let Some(t) = a.threshold {
        spec.success_threshold = t;
    }
    if a.sequential {
        spec.parallel = false;
    }
    spec.validate()?;
    if a.dry_run {
        print!("{}", spec.to_toml());
        return Ok(ExitCode::SUCCESS);
    }
    let report = batch::run_batch(&spec)?;
    println!("{}", report.summary);
    println!("outputs       {}", spec.output_dir.display());
    Ok(if report.summary.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn verify(v: VerifyArgs) -> CliResult {
    let spec = OracleSpec {
        model: v.oracle.model,
        endpoint: v.oracle.endpoint,
        mode: match v.oracle.mode {
            Mode::Full => WireMode::Full,
            Mode::Topk => WireMode::Topk,
        },
        k: v.oracle.k,
        ..OracleSpec::default()
    };
    let (oracle, _) = batch::build_oracle(&spec)?;
    let condition = match v.condition {
        Condition::RotatedTarget { label, eot, .. } => Condition::RotatedTarget {
            label,
            eot: EotConfig {
                theta_min: -v.max_angle,
                theta_max: v.max_angle,
                ..eot
            },
            seed: v.seed,
        },
        c => c,
    };
    let verdict = batch::verify_files(&v.adv, &v.original, v.epsilon, &*oracle, &condition)?;
    println!("{verdict}");
    Ok(if verdict.holds() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn serve(s: ServeArgs) -> CliResult {
    let mut cfg = match &s.config {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    };
    if let Some(m) = s.model {
        cfg.model_path = m;
    }
    if let Some(m) = s.mode {
        cfg.mode = match m {
            Mode::Full => ServiceMode::Full,
            Mode::Topk => ServiceMode::Topk,
        };
    }
    if let Some(k) = s.k {
        cfg.k = k;
    }
    if s.budget.is_some() {
        cfg.budget = s.budget;
    }
    if s.rate_limit.is_some() {
        cfg.rate_limit = s.rate_limit;
    }
    if s.bind.is_some() {
        cfg.bind_address = s.bind;
    }
    let handle = service::serve(&cfg)?;
    eprintln!("listening on {}", handle.url());
    handle.wait()?;
    Ok(ExitCode::SUCCESS)
}

fn model_gen(g: GenArgs) -> CliResult {
    let spec = MlpSpec {
        input_shape: g.shape,
        hidden: g.hidden,
        classes: g.classes,
        weight_scale: g.scale,
        first_layer: match g.first_layer {
            Layer::Iid => FirstLayer::Iid,
            Layer::SmoothDisk => FirstLayer::SmoothDisk { grid: 4 },
        },
        seed: g.seed,
    };
    let model = Arc::new(synth::random_mlp(&spec));
    model.save(&g.out)?;
    println!("wrote {} ({} -> {} classes)", g.out.display(), spec.input_shape, spec.classes);
    if g.images > 0 {
        let dir = g.out.parent().map(PathBuf::from).unwrap_or_default();
        let mut rng = Rng::derive(g.seed, 0x696d67);
        for i in 0..g.images {
            let x = synth::smooth_image(spec.input_shape, 4, synth::DESK_CONTRAST, &mut rng);
            let label = synth::argmax(&model.classify_full(&x)?);
            let path = dir.join(format!("sample_{i:03}.nbt"));
            nbx::imageio::save_raw(&path, &x)?;
            println!("wrote {} (class {label})", path.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}
