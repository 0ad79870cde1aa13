use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tinyvit::aug::MixChoice;
use tinyvit::cache::{estimate_storage, inspect, ValuePrecision};
use tinyvit::corpus::{synth_corpus, Corpus, SynthSpec};
use tinyvit::distill::{
    class_correlation, evaluate, predict, student_train_replay, teacher_save, train_supervised,
    CorrelationMatrix, LossTrace, RunConfig,
};
use tinyvit::model::{load_model, save_model, scale_window, ModelConfig, ModelStats, TinyVit};
use tinyvit::search::{
    search, throughput_proxy, Constraint, DistillScorer, FnScorer, Scorer, Trajectory,
};
use tinyvit::Error;

mod heatmap;

/// Run configuration saved next to a teacher cache, so students replaying
/// it start from the same settings.
const RUN_FILE: &str = "run.json";

#[derive(Parser)]
#[command(name = "tinyvit", version, about = "Sparse-logit distillation pipeline for TinyViT")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labelled image corpus.
    SynthCorpus(SynthArgs),
    /// Build a freshly initialized model file.
    InitModel(InitArgs),
    /// Supervised training on corpus labels (teachers and baselines).
    FitTeacher(FitArgs),
    /// Run the teacher once per epoch and store its sparse logits.
    SaveLogits(SaveArgs),
    /// Train a student by replaying a logit cache.
    Train(TrainArgs),
    /// Summarize cache files.
    Inspect(InspectArgs),
    /// Exact cache size for one operating point.
    EstimateStorage(EstimateArgs),
    /// Cache size as a function of K.
    SweepK(SweepArgs),
    /// Greedy constrained contraction of a seed config.
    Contract(ContractArgs),
    /// Parameter and MAC counts.
    Stats(StatsArgs),
    /// Class-to-class Pearson correlation of a model's predictions.
    Correlate(CorrelateArgs),
    /// Top-1 accuracy of a model on a labelled corpus.
    Evaluate(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output corpus directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of classes.
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Samples per class.
    #[arg(long, default_value_t = 20)]
    per_class: usize,
    /// Square image side in pixels.
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-pixel noise standard deviation.
    #[arg(long, default_value_t = 12.0)]
    noise: f64,
    /// Per-sample jitter of the class styles.
    #[arg(long, default_value_t = 1.0)]
    jitter: f64,
    /// Fraction of labels replaced by a random class.
    #[arg(long, default_value_t = 0.0)]
    label_noise: f64,
    /// Write the corpus without labels.
    #[arg(long)]
    unlabelled: bool,
}

#[derive(Args)]
struct InitArgs {
    /// Preset name or config file.
    #[arg(long)]
    config: String,
    /// Initialization seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the number of classes.
    #[arg(long)]
    classes: Option<usize>,
    /// Override the input resolution.
    #[arg(long)]
    resolution: Option<usize>,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
}

/// Optional overrides of a [`RunConfig`]; unset flags keep the base value.
#[derive(Args)]
struct RunArgs {
    /// JSON run config to start from.
    #[arg(long)]
    run_config: Option<PathBuf>,
    /// Number of epochs.
    #[arg(long)]
    epochs: Option<u32>,
    /// Seed of augmentation, shuffling and drop-path draws.
    #[arg(long)]
    run_seed: Option<u64>,
    /// Samples per step.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Peak learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Linear warmup length in steps.
    #[arg(long)]
    warmup_steps: Option<u64>,
    /// Disable the random augmentation recipe.
    #[arg(long)]
    no_augment: bool,
    /// Mix regularization.
    #[arg(long, value_enum)]
    mix: Option<Mix>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mix {
    Off,
    Mixup,
    Cutmix,
    Either,
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    Half,
    Single,
}

#[derive(Args)]
struct FitArgs {
    /// Initial model file.
    #[arg(long)]
    model: PathBuf,
    /// Labelled corpus directory.
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    run: RunArgs,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    /// Loss trace output (one JSON object per step).
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Args)]
struct SaveArgs {
    /// Teacher model file.
    #[arg(long)]
    teacher: PathBuf,
    /// Corpus directory; labels are never read.
    #[arg(long)]
    corpus: PathBuf,
    /// Number of top logits kept per sample.
    #[arg(long)]
    k: Option<usize>,
    /// Softmax temperature applied before keeping the top K.
    #[arg(long)]
    temperature: Option<f64>,
    /// Storage precision of the kept values.
    #[arg(long, value_enum)]
    precision: Option<Precision>,
    #[command(flatten)]
    run: RunArgs,
    /// Cache directory.
    #[arg(long, env = "TINYVIT_CACHE_DIR")]
    out_dir: PathBuf,
    /// Epochs written concurrently.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Preset name or config file of the student.
    #[arg(long)]
    student_config: String,
    /// Initialization seed of the student.
    #[arg(long, default_value_t = 0)]
    init_seed: u64,
    /// Cache directory written by save-logits.
    #[arg(long, env = "TINYVIT_CACHE_DIR")]
    cache_dir: PathBuf,
    /// Corpus directory the cache was written for.
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    run: RunArgs,
    /// Add a ground-truth cross-entropy term.
    #[arg(long)]
    ground_truth: bool,
    /// Loss trace output (one JSON object per step).
    #[arg(long)]
    trace_out: PathBuf,
    /// Final student model file.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    /// Epoch files, or cache directories (every epoch file inside).
    #[arg(required = true)]
    files: Vec<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Number of classes.
    #[arg(long)]
    classes: u32,
    /// Kept logits per sample.
    #[arg(long)]
    k: u32,
    /// Samples per epoch.
    #[arg(long)]
    samples: u64,
    /// Number of epochs.
    #[arg(long)]
    epochs: u32,
    /// Storage precision of the kept values.
    #[arg(long, value_enum, default_value = "half")]
    precision: Precision,
}

#[derive(Args)]
struct SweepArgs {
    /// Number of classes.
    #[arg(long)]
    classes: u32,
    /// Comma-separated K values.
    #[arg(long, value_delimiter = ',', default_value = "1,2,5,10,20,50,100")]
    k: Vec<u32>,
    /// Samples per epoch.
    #[arg(long)]
    samples: u64,
    /// Number of epochs.
    #[arg(long)]
    epochs: u32,
    /// Storage precision of the kept values.
    #[arg(long, value_enum, default_value = "half")]
    precision: Precision,
    /// Also write the table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScorerKind {
    /// Prefer fewer parameters.
    NegParams,
    /// Prefer higher proxy throughput.
    Throughput,
    /// Short distillation run from a cache; needs --corpus and --cache-dir.
    Distill,
}

#[derive(Args)]
struct ContractArgs {
    /// Preset name or config file to start from.
    #[arg(long)]
    seed_config: String,
    /// Parameter ceiling every step must respect.
    #[arg(long)]
    max_params: u64,
    /// Stop once a chosen config has at most this many parameters.
    #[arg(long)]
    target_params: u64,
    /// Maximum number of contraction steps.
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// Proxy throughput floor in images per second.
    #[arg(long)]
    min_throughput: Option<f64>,
    /// How candidates are ranked.
    #[arg(long, value_enum, default_value = "neg-params")]
    scorer: ScorerKind,
    /// Corpus for the distill scorer.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Teacher cache for the distill scorer.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Trajectory output.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    /// Preset name or config file.
    #[arg(long)]
    config: String,
    /// Evaluate at this resolution, rescaling windows with it.
    #[arg(long)]
    resolution: Option<usize>,
}

#[derive(Args)]
struct CorrelateArgs {
    /// Model file.
    #[arg(long)]
    model: PathBuf,
    /// Labelled corpus directory.
    #[arg(long)]
    corpus: PathBuf,
    /// Use at most this many samples of each class.
    #[arg(long)]
    per_class: Option<usize>,
    /// Correlate raw logits instead of probabilities.
    #[arg(long)]
    raw_logits: bool,
    /// Output prefix; writes <prefix>.bin, <prefix>.csv and <prefix>.png.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Model file.
    #[arg(long)]
    model: PathBuf,
    /// Labelled corpus directory.
    #[arg(long)]
    corpus: PathBuf,
}

enum Failure {
    Usage(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Run(e.to_string())
        }
    }
}

type CmdResult = Result<(), Failure>;

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Run(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn load_run(base: Option<&Path>, args: &RunArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match args.run_config.as_deref().or(base.filter(|p| p.exists())) {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.run_seed {
        cfg.run_seed = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.optim.lr = v;
    }
    if let Some(v) = args.warmup_steps {
        cfg.optim.warmup_steps = v;
    }
    if args.no_augment {
        cfg.augment = false;
    }
    if let Some(m) = args.mix {
        cfg.mix_enabled = !matches!(m, Mix::Off);
        match m {
            Mix::Off => {}
            Mix::Mixup => cfg.mix.choice = MixChoice::Mixup,
            Mix::Cutmix => cfg.mix.choice = MixChoice::Cutmix,
            Mix::Either => cfg.mix.choice = MixChoice::Either { cutmix_prob: 0.5 },
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn precision(p: Precision) -> ValuePrecision {
    match p {
        Precision::Half => ValuePrecision::Half,
        Precision::Single => ValuePrecision::Single,
    }
}

fn synth(a: SynthArgs) -> CmdResult {
    let mut spec = SynthSpec::new(a.classes, a.per_class, a.size, a.seed);
    spec.noise = a.noise;
    spec.jitter = a.jitter;
    spec.label_noise = a.label_noise;
    let mut corpus = synth_corpus(&spec)?;
    if a.unlabelled {
        corpus = Corpus::new(corpus.manifest().num_classes, (a.size, a.size), corpus.pixels().to_vec(), None)?;
    }
    corpus.save(&a.out)?;
    println!("wrote {} samples of {} classes to {}", corpus.manifest().num_samples, a.classes, a.out.display());
    Ok(())
}

fn init(a: InitArgs) -> CmdResult {
    let mut config = ModelConfig::resolve(&a.config)?;
    if let Some(c) = a.classes {
        config.num_classes = c;
    }
    if let Some(r) = a.resolution {
        config.resolution = r;
    }
    let model = TinyVit::build(&config, a.seed)?;
    save_model(&model, &a.out)?;
    println!("wrote {} ({} parameters)", a.out.display(), model.theta().len());
    Ok(())
}

fn write_trace(path: &Path, trace: &LossTrace) -> CmdResult {
    write_file(path, trace.to_jsonl())
}

fn print_epochs(trace: &LossTrace) {
    for (e, mean) in trace.epoch_means() {
        println!("epoch {e}: mean loss {mean:.6}");
    }
}

fn fit(a: FitArgs) -> CmdResult {
    let cfg = load_run(None, &a.run)?;
    let corpus = Corpus::load(&a.corpus)?;
    let (model, trace) = train_supervised(load_model(&a.model)?, &corpus, &cfg)?;
    print_epochs(&trace);
    save_model(&model, &a.out)?;
    if let Some(p) = &a.trace_out {
        write_trace(p, &trace)?;
    }
    Ok(())
}

fn save_logits(a: SaveArgs) -> CmdResult {
    let mut cfg = load_run(None, &a.run)?;
    if let Some(k) = a.k {
        cfg.k = k;
    }
    if let Some(t) = a.temperature {
        cfg.temperature = t;
    }
    if let Some(p) = a.precision {
        cfg.value_precision = precision(p);
    }
    cfg.validate()?;
    if a.parallel == 0 {
        return Err(Failure::Usage("--parallel must be at least 1".into()));
    }
    let teacher = load_model(&a.teacher)?;
    let corpus = Corpus::load(&a.corpus)?;
    let epochs: Vec<u32> = (0..cfg.epochs).collect();
    let saved = teacher_save(&teacher, &corpus, &cfg, &epochs, &a.out_dir, a.parallel)?;
    write_file(&a.out_dir.join(RUN_FILE), cfg.to_json())?;
    for s in &saved {
        let summary = inspect(&s.path)?;
        println!(
            "epoch {}: {} bytes, top-{} mass mean {:.6} min {:.6} max {:.6}",
            s.epoch, s.bytes, cfg.k, summary.mean_mass, summary.min_mass, summary.max_mass
        );
    }
    println!("total {} bytes", saved.iter().map(|s| s.bytes).sum::<u64>());
    Ok(())
}

fn train(a: TrainArgs) -> CmdResult {
    let mut cfg = load_run(Some(&a.cache_dir.join(RUN_FILE)), &a.run)?;
    if a.ground_truth {
        cfg.use_ground_truth = true;
    }
    let student = TinyVit::build(&ModelConfig::resolve(&a.student_config)?, a.init_seed)?;
    let corpus = Corpus::load(&a.corpus)?;
    let (model, trace) = student_train_replay(student, &corpus, &a.cache_dir, &cfg)?;
    print_epochs(&trace);
    write_trace(&a.trace_out, &trace)?;
    if let Some(p) = &a.model_out {
        save_model(&model, p)?;
    }
    Ok(())
}

fn inspect_files(a: InspectArgs) -> CmdResult {
    let mut files = Vec::new();
    for p in a.files {
        if p.is_dir() {
            let mut inner: Vec<PathBuf> = std::fs::read_dir(&p)
                .and_then(|d| d.map(|e| e.map(|e| e.path())).collect())
                .map_err(|e| io_err(&p, e))?;
            inner.retain(|f| f.extension().is_some_and(|x| x == "tvc"));
            inner.sort();
            files.extend(inner);
        } else {
            files.push(p);
        }
    }
    for f in &files {
        let s = inspect(f)?;
        let h = &s.header;
        println!("{}", f.display());
        println!(
            "  epoch {} run_seed {} samples {} classes {} k {} precision {:?}",
            h.epoch, h.run_seed, h.num_samples, h.num_classes, h.k, h.value_precision
        );
        println!("  file {} bytes, record {} bytes", s.file_size, s.record_size);
        println!("  mass mean {:.6} min {:.6} max {:.6}", s.mean_mass, s.min_mass, s.max_mass);
        println!("  seed mismatches {}", s.seed_mismatches);
        let top: Vec<String> = s.top_classes.iter().map(|(c, n)| format!("{c}:{n}")).collect();
        println!("  top classes {}", top.join(" "));
    }
    Ok(())
}

fn estimate(a: EstimateArgs) -> CmdResult {
    let e = estimate_storage(a.classes, a.k, a.samples, a.epochs, precision(a.precision))?;
    println!("bytes_per_record {}", e.bytes_per_record);
    println!("bytes_total {}", e.bytes_total);
    println!("gigabytes {:.3}", e.gigabytes());
    Ok(())
}

fn sweep(a: SweepArgs) -> CmdResult {
    let mut rows = Vec::new();
    for &k in &a.k {
        rows.push((k, estimate_storage(a.classes, k, a.samples, a.epochs, precision(a.precision))?));
    }
    // Sizes are affine in K: every pair of rows must lie on one line.
    if let Some(&(k0, e0)) = rows.first() {
        for &(k, e) in &rows {
            for &(k2, e2) in &rows {
                let lhs = (e.bytes_total as i128 - e0.bytes_total as i128) * (k2 as i128 - k0 as i128);
                let rhs = (e2.bytes_total as i128 - e0.bytes_total as i128) * (k as i128 - k0 as i128);
                if lhs != rhs {
                    return Err(Failure::Run(format!("storage is not linear in K at K = {k}, {k2}")));
                }
            }
        }
    }
    let mut csv = String::from("k,bytes_per_record,bytes_total,gigabytes\n");
    for (k, e) in &rows {
        let _ = writeln!(csv, "{k},{},{},{:.6}", e.bytes_per_record, e.bytes_total, e.gigabytes());
    }
    print!("{csv}");
    if let Some(p) = &a.out {
        write_file(p, &csv)?;
    }
    Ok(())
}

fn contract(a: ContractArgs) -> CmdResult {
    let seed = ModelConfig::resolve(&a.seed_config)?;
    let constraint = Constraint {
        max_params: a.max_params,
        min_throughput: a.min_throughput,
    };
    let res = seed.resolution;
    let neg_params = FnScorer(|c: &ModelConfig| -(ModelStats::of(c).params as f64));
    let throughput = FnScorer(move |c: &ModelConfig| throughput_proxy(c, res));
    let distill;
    let scorer: &dyn Scorer = match a.scorer {
        ScorerKind::NegParams => &neg_params,
        ScorerKind::Throughput => &throughput,
        ScorerKind::Distill => {
            let (Some(corpus), Some(cache_dir)) = (&a.corpus, &a.cache_dir) else {
                return Err(Failure::Usage("the distill scorer needs --corpus and --cache-dir".into()));
            };
            let run = load_run(Some(&cache_dir.join(RUN_FILE)), &RunArgs::none())?;
            distill = DistillScorer {
                corpus: Corpus::load(corpus)?,
                cache_dir: cache_dir.clone(),
                run,
                init_seed: 0,
            };
            &distill
        }
    };
    let t: Trajectory = search(&seed, &constraint, a.target_params, scorer, a.steps)?;
    write_file(&a.out, t.to_jsonl())?;
    for (i, c) in t.path().iter().enumerate() {
        let s = ModelStats::of(c);
        println!(
            "step {i}: dims {:?} depths {:?} windows {:?} params {}",
            c.contraction.embed_dims, c.contraction.depths, c.contraction.window_sizes, s.params
        );
    }
    println!("outcome {:?}", t.outcome);
    Ok(())
}

impl RunArgs {
    fn none() -> Self {
        RunArgs {
            run_config: None,
            epochs: None,
            run_seed: None,
            batch_size: None,
            lr: None,
            warmup_steps: None,
            no_augment: false,
            mix: None,
        }
    }
}

/// `config` moved to `resolution`, windows rescaled the way fine-tuning at
/// a new resolution rescales them.
fn at_resolution(config: &ModelConfig, resolution: usize) -> ModelConfig {
    let mut c = config.clone();
    let w = config.contraction.nominal_windows().map(|w| scale_window(w, config.resolution, resolution));
    c.contraction.window_sizes = [w[1], w[2], w[3]];
    c.resolution = resolution;
    c
}

fn stats(a: StatsArgs) -> CmdResult {
    let base = ModelConfig::resolve(&a.config)?;
    let config = match a.resolution {
        Some(r) => at_resolution(&base, r),
        None => base,
    };
    config.validate()?;
    let s = ModelStats::of(&config);
    println!("resolution {}", s.resolution);
    println!("windows {:?}", config.contraction.window_sizes);
    println!("params {} ({:.2} M)", s.params, s.params as f64 / 1e6);
    println!("macs {} ({:.2} G)", s.macs, s.macs as f64 / 1e9);
    Ok(())
}

fn per_class_subset(corpus: &Corpus, n: usize) -> Result<Corpus, Failure> {
    let labels = corpus
        .labels()
        .ok_or_else(|| Failure::Usage("correlation needs a labelled corpus".into()))?
        .to_vec();
    let mut seen = vec![0usize; corpus.manifest().num_classes];
    let keep: Vec<bool> = labels
        .iter()
        .map(|&l| {
            seen[l as usize] += 1;
            seen[l as usize] <= n
        })
        .collect();
    Ok(corpus.subset(|i| keep[i])?)
}

fn write_matrix(prefix: &Path, m: &CorrelationMatrix) -> CmdResult {
    let with = |ext: &str| {
        let mut p = prefix.as_os_str().to_owned();
        p.push(ext);
        PathBuf::from(p)
    };
    write_file(&with(".bin"), m.to_bytes())?;
    let mut csv = String::new();
    for i in 0..m.num_classes {
        let row: Vec<String> = (0..m.num_classes).map(|j| format!("{:.10}", m.get(i, j))).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    write_file(&with(".csv"), csv)?;
    let png = with(".png");
    heatmap::render(m)
        .save(&png)
        .map_err(|e| Failure::Run(format!("{}: {e}", png.display())))
}

fn correlate(a: CorrelateArgs) -> CmdResult {
    let model = load_model(&a.model)?;
    let mut corpus = Corpus::load(&a.corpus)?;
    if let Some(n) = a.per_class {
        corpus = per_class_subset(&corpus, n)?;
    }
    let labels = corpus
        .labels()
        .ok_or_else(|| Failure::Usage("correlation needs a labelled corpus".into()))?
        .to_vec();
    let rows = predict(&model, &corpus)?;
    let m = class_correlation(&rows, &labels, model.num_classes(), a.raw_logits)?;
    write_matrix(&a.out, &m)?;
    if !m.degenerate.is_empty() {
        println!("degenerate classes {:?}", m.degenerate);
    }
    println!("wrote {}x{} correlation matrix to {}.*", m.num_classes, m.num_classes, a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> CmdResult {
    let acc = evaluate(&load_model(&a.model)?, &Corpus::load(&a.corpus)?)?;
    println!("accuracy {acc:.6}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SynthCorpus(a) => synth(a),
        Command::InitModel(a) => init(a),
        Command::FitTeacher(a) => fit(a),
        Command::SaveLogits(a) => save_logits(a),
        Command::Train(a) => train(a),
        Command::Inspect(a) => inspect_files(a),
        Command::EstimateStorage(a) => estimate(a),
        Command::SweepK(a) => sweep(a),
        Command::Contract(a) => contract(a),
        Command::Stats(a) => stats(a),
        Command::Correlate(a) => correlate(a),
        Command::Evaluate(a) => eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
