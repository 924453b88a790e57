//! `cir`: data generation, training, gradient checks, indexing, retrieval,
//! evaluation and attention dumps.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure.

mod config;

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use cir_core::data::{Dataset, GridStore, GRIDS_FILE};
use cir_core::datagen::good4cir::{
    self, FixtureTransport, GatewayTransport, PipelineConfig, RecordingTransport, Retry, Transport,
};
use cir_core::datagen::synthetic::gen_synthetic;
use cir_core::losses::Reduction;
use cir_core::model::{ImageGrid, ModelConfig};
use cir_core::retrieval::{build_index, evaluate, query_topk, rank_dataset, GalleryIndex};
use cir_core::tensor::gradcheck::{GradCheckOptions, GradCheckReport};
use cir_core::tensor::sweep::{check_primitive, PRIMITIVES};
use cir_core::text::{tokenize, Lexicon};
use cir_core::train::{
    batch_indices, grad_check_total, load_checkpoint, prepare_samples, save_checkpoint, MetricsLog, Sample,
    TrainConfig, Trainer,
};
use cir_core::{probe, Error, Model, Result, TensorError};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use config::{apply, RunFile};

#[derive(Parser, Debug)]
#[command(
    name = "cir",
    version,
    about = "Composed image retrieval with concept-consistency training"
)]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Lexicon override (`word<TAB>TAG` lines).
    #[arg(long, global = true)]
    lexicon: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a triplet dataset.
    GenData(GenDataArgs),
    /// Train a model and write a checkpoint plus a metrics log.
    #[command(allow_negative_numbers = true)]
    Train(TrainArgs),
    /// Compare analytic gradients against central differences.
    GradCheck(GradCheckArgs),
    /// Embed every image of a dataset with the blank text.
    Index(IndexArgs),
    /// Print the top-K gallery images for one query.
    Query(QueryArgs),
    /// Rank every record of a dataset and report the retrieval metrics.
    Eval(EvalArgs),
    /// Write per-phrase attention images and weight sidecars.
    AttnDump(AttnDumpArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Source {
    Synthetic,
    Good4cir,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "synthetic")]
    source: Source,
    /// Number of synthetic triplets.
    #[arg(long)]
    n: Option<usize>,
    /// Edits per synthetic triplet, `k` or `lo-hi`.
    #[arg(long)]
    ops: Option<String>,
    #[arg(long)]
    grid: Option<usize>,
    /// Unedited images added to the synthetic gallery.
    #[arg(long)]
    extra_images: Option<usize>,
    /// Fixture directory for the good4cir source.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Call the live gateway and record its replies into `--fixtures`.
    #[arg(long)]
    live: bool,
    /// Maximum number of captions combined into one text.
    #[arg(long)]
    arity: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct ModelFlags {
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    max_text_tokens: Option<usize>,
    #[arg(long)]
    mlp_ratio: Option<usize>,
    #[arg(long)]
    init_seed: Option<u64>,
}

#[derive(Args, Debug, Default)]
struct TrainFlags {
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    lr_max: Option<f64>,
    #[arg(long)]
    lr_min: Option<f64>,
    #[arg(long)]
    period: Option<u64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    eps_adam: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epsilon_cc: Option<f64>,
    #[arg(long, value_enum)]
    cc_reduction: Option<ReductionArg>,
    #[arg(long)]
    cc_symmetric: Option<bool>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    max_nps: Option<usize>,
    #[arg(long)]
    freeze_image: Option<bool>,
    #[arg(long)]
    freeze_text: Option<bool>,
    #[arg(long)]
    leaf_only: Option<bool>,
    #[arg(long)]
    use_query_negative: Option<bool>,
    /// Global gradient-norm clip; 0 disables clipping.
    #[arg(long)]
    grad_clip: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ReductionArg {
    Sum,
    Mean,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint; only `--steps` may change the stored config.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Also save a checkpoint every N steps.
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args, Debug)]
struct GradCheckArgs {
    /// A primitive name, `total` for the end-to-end loss, or `all`.
    #[arg(long, default_value = "all")]
    op: String,
    /// Tolerance override; defaults are 1e-6 for primitives, 1e-4 for `total`.
    #[arg(long)]
    tol: Option<f64>,
    /// Entries checked per parameter tensor in `total` (0 = all).
    #[arg(long, default_value_t = 16)]
    entries: usize,
    /// Write the full report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args, Debug)]
struct IndexArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct QueryArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    index: PathBuf,
    /// Dataset holding the query image grid.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    image: String,
    #[arg(long, default_value = "")]
    text: String,
    #[arg(long, default_value_t = 10)]
    k: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Keep each query image in its own ranking.
    #[arg(long)]
    include_query: bool,
}

#[derive(Args, Debug)]
struct AttnDumpArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Query image id (with `--text`).
    #[arg(long, conflicts_with_all = ["record", "all"])]
    image: Option<String>,
    #[arg(long, requires = "image")]
    text: Option<String>,
    /// Dump one dataset record by position.
    #[arg(long, conflicts_with = "all")]
    record: Option<usize>,
    /// Dump every record into `<out>/<position>/`.
    #[arg(long)]
    all: bool,
    #[arg(long, default_value_t = 10)]
    max_nps: usize,
    #[arg(long)]
    leaf_only: bool,
    /// Pixels per patch in the images.
    #[arg(long, default_value_t = 8)]
    px: usize,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parameter(_) => 2,
        Error::NonFiniteLoss { .. } | Error::Tensor(TensorError::NonFinite { .. } | TensorError::Degenerate { .. }) => {
            4
        }
        _ => 3,
    }
}

/// A failed check: reported, exit code 4.
struct CheckFailed(String);

enum Failure {
    Error(Error),
    Check(CheckFailed),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Check(CheckFailed(msg))) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(4)
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    let file = RunFile::load(cli.config.as_deref())?;
    let seed = cli.seed.or(file.seed);
    let custom;
    let lexicon = match &cli.lexicon {
        Some(p) => {
            custom = Lexicon::from_path(p)?;
            &custom
        }
        None => Lexicon::builtin(),
    };
    match cli.cmd {
        Cmd::GenData(a) => gen_data(a, file, seed, lexicon),
        Cmd::Train(a) => train(a, file, seed, lexicon),
        Cmd::GradCheck(a) => grad_check(a, file, seed, lexicon),
        Cmd::Index(a) => index(a),
        Cmd::Query(a) => query(a, lexicon),
        Cmd::Eval(a) => eval(a, lexicon),
        Cmd::AttnDump(a) => attn_dump(a, lexicon),
    }
}

fn parse_ops(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("--ops expects `k` or `lo-hi`, got {s:?}"));
    let (lo, hi) = match s.split_once('-') {
        Some((a, b)) => (
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        ),
        None => {
            let k = s.trim().parse().map_err(|_| bad())?;
            (k, k)
        }
    };
    Ok((lo, hi))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(v).expect("value serializes") + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn gen_data(a: GenDataArgs, file: RunFile, seed: Option<u64>, lexicon: &Lexicon) -> CmdResult {
    match a.source {
        Source::Synthetic => {
            let mut cfg = file.synthetic;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = &a.ops {
                (cfg.ops_min, cfg.ops_max) = parse_ops(o)?;
            }
            apply!(cfg, a, n, grid, extra_images);
            let set = gen_synthetic(&cfg, lexicon)?;
            set.save(&a.out)?;
            println!(
                "wrote {} triplets and {} images to {}",
                set.dataset.records.len(),
                set.dataset.grids.len(),
                a.out.display()
            );
        }
        Source::Good4cir => {
            let dir = a
                .fixtures
                .clone()
                .ok_or_else(|| Error::Config("--source good4cir needs --fixtures DIR".into()))?;
            let mut cfg: PipelineConfig = file.good4cir;
            apply!(cfg, a, arity, workers);
            let pairs = good4cir::load_pairs(&dir)?;
            let transport: Box<dyn Transport> = if a.live {
                let live = Retry::new(GatewayTransport::from_env()?, 3, Duration::from_secs(2));
                Box::new(RecordingTransport::new(live, &dir)?)
            } else {
                Box::new(FixtureTransport::new(&dir)?)
            };
            let outputs = good4cir::run_pipeline(&pairs, transport.as_ref(), lexicon, &cfg)?;
            let grids = GridStore::read(&dir.join(GRIDS_FILE))?;
            let ds = good4cir::to_dataset(&outputs, &grids, lexicon)?;
            ds.save(&a.out)?;
            write_json(&a.out.join("good4cir.json"), &outputs)?;
            println!(
                "wrote {} triplets from {} pairs to {}",
                ds.records.len(),
                pairs.len(),
                a.out.display()
            );
        }
    }
    Ok(())
}

fn model_config(mut m: ModelConfig, f: &ModelFlags, seed: Option<u64>) -> ModelConfig {
    if let Some(s) = seed {
        m.init_seed = s;
    }
    apply!(m, f, d_model, heads, blocks, max_text_tokens, mlp_ratio, init_seed);
    m
}

fn train_config(mut t: TrainConfig, f: &TrainFlags, seed: Option<u64>) -> TrainConfig {
    if let Some(s) = seed {
        t.seed = s;
    }
    apply!(
        t,
        f,
        batch_size,
        steps,
        lr_max,
        lr_min,
        period,
        weight_decay,
        beta1,
        beta2,
        eps_adam,
        lambda,
        epsilon_cc,
        cc_symmetric,
        tau,
        max_nps,
        freeze_image,
        freeze_text,
        leaf_only,
        use_query_negative
    );
    if let Some(r) = f.cc_reduction {
        t.cc_reduction = match r {
            ReductionArg::Sum => Reduction::Sum,
            ReductionArg::Mean => Reduction::Mean,
        };
    }
    if let Some(c) = f.grad_clip {
        t.grad_clip = (c > 0.0).then_some(c);
    }
    t
}

const CHECKPOINT_FILE: &str = "checkpoint.bin";
const METRICS_FILE: &str = "metrics.jsonl";
const RESOLVED_FILE: &str = "config.json";

fn train(a: TrainArgs, file: RunFile, seed: Option<u64>, lexicon: &Lexicon) -> CmdResult {
    let ds = Dataset::load(&a.data)?;
    let mut trainer: Trainer<f64> = match &a.resume {
        Some(p) => {
            let (mut tr, _) = load_checkpoint(p)?;
            if let Some(s) = a.train.steps {
                tr.cfg.steps = s;
            }
            tr.cfg.validate()?;
            tr
        }
        None => {
            let mut mcfg = model_config(file.model, &a.model, seed);
            let grid = ds
                .grids
                .grid_side()
                .ok_or_else(|| Error::Data("dataset has no images".into()))?;
            mcfg.grid = grid;
            let tcfg = train_config(file.train, &a.train, seed);
            Trainer::new(Model::new(mcfg)?, tcfg)?
        }
    };
    let samples = prepare_samples(&ds, lexicon, trainer.cfg.max_nps, trainer.cfg.leaf_only)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let ckpt = a.out.join(CHECKPOINT_FILE);
    let resolved = serde_json::json!({"model": trainer.model.config, "train": trainer.cfg});
    write_json(&a.out.join(RESOLVED_FILE), &resolved)?;
    let log_path = a.out.join(METRICS_FILE);
    let log_file = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(a.resume.is_some())
        .truncate(a.resume.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut log = MetricsLog::new(BufWriter::new(log_file));
    let every = a.checkpoint_every.filter(|&k| k > 0);
    if samples.is_empty() {
        return Err(Error::Data("no training samples".into()).into());
    }
    let mut result = Ok(());
    while trainer.step < trainer.cfg.steps {
        let idx = batch_indices(trainer.cfg.seed, trainer.step, samples.len(), trainer.cfg.batch_size);
        let batch: Vec<&Sample> = idx.iter().map(|&i| &samples[i]).collect();
        match trainer.train_step(&batch) {
            Ok(m) => log.record(&m).map_err(|e| Error::io(&log_path, e))?,
            Err(e) => {
                result = Err(e);
                break;
            }
        }
        if every.is_some_and(|k| trainer.step % k == 0) {
            log.flush().map_err(|e| Error::io(&log_path, e))?;
            save_checkpoint(&trainer, &a.out.join(format!("checkpoint-{:06}.bin", trainer.step)))?;
        }
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    if let Err(e) = result {
        if let Error::NonFiniteLoss { step, sample_id } = &e {
            let dump = serde_json::json!({"step": step, "sample_id": sample_id});
            write_json(&a.out.join("nonfinite.json"), &dump)?;
            eprintln!("non-finite loss at step {step} (sample {sample_id}); parameters left at the previous step");
            save_checkpoint(&trainer, &a.out.join("checkpoint-last-finite.bin"))?;
        }
        return Err(e.into());
    }
    save_checkpoint(&trainer, &ckpt)?;
    println!("trained to step {}; checkpoint {}", trainer.step, ckpt.display());
    Ok(())
}

#[derive(Serialize)]
struct CheckLine {
    name: String,
    tolerance: f64,
    passed: bool,
    report: GradCheckReport,
}

/// Two synthetic triplets with at least two phrases each.
fn grad_check_batch(seed: u64, lexicon: &Lexicon, grid: usize) -> Result<Vec<Sample>> {
    use cir_core::datagen::synthetic::SynthConfig;
    let cfg = SynthConfig {
        n: 2,
        ops_min: 2,
        ops_max: 3,
        seed,
        grid,
        extra_images: 0,
    };
    let set = gen_synthetic(&cfg, lexicon)?;
    let s = prepare_samples(&set.dataset, lexicon, 10, false)?;
    if s.iter().any(|x| x.nps.len() < 2) {
        return Err(Error::Data(
            "grad-check batch has a text with fewer than two phrases".into(),
        ));
    }
    Ok(s)
}

fn grad_check(a: GradCheckArgs, file: RunFile, seed: Option<u64>, lexicon: &Lexicon) -> CmdResult {
    let seed = seed.unwrap_or(0);
    let names: Vec<String> = match a.op.as_str() {
        "all" => PRIMITIVES
            .iter()
            .map(|s| s.to_string())
            .chain(["total".to_string()])
            .collect(),
        op if op == "total" || PRIMITIVES.contains(&op) => vec![op.to_string()],
        other => {
            return Err(Error::Config(format!(
                "unknown --op {other:?}; expected all, total, or one of {}",
                PRIMITIVES.join(", ")
            ))
            .into())
        }
    };
    let opts = GradCheckOptions {
        seed,
        max_entries: (a.entries > 0).then_some(a.entries),
        ..GradCheckOptions::default()
    };
    let mut lines = Vec::new();
    for name in names {
        if name == "total" {
            let m = Model::new(model_config(file.model.clone(), &a.model, Some(seed)))?;
            let samples = grad_check_batch(seed, lexicon, m.config.grid)?;
            let batch: Vec<&Sample> = samples.iter().collect();
            let tol = a.tol.unwrap_or(1e-4);
            let base = TrainConfig {
                batch_size: 2,
                ..TrainConfig::default()
            };
            // The default slack rarely activates the hinge at initialization,
            // so the cc branch is also checked with ε = 0.
            let active = TrainConfig {
                epsilon_cc: 0.0,
                lambda: 1.0,
                ..base.clone()
            };
            for (label, cfg) in [("total", base), ("total_eps0", active)] {
                let report = grad_check_total(&m, &batch, &cfg, &opts)?;
                lines.push(CheckLine {
                    name: label.into(),
                    tolerance: tol,
                    passed: report.passes(tol),
                    report,
                });
            }
        } else {
            let tol = a.tol.unwrap_or(1e-6);
            let report = check_primitive(
                &name,
                seed,
                &GradCheckOptions {
                    max_entries: None,
                    ..opts.clone()
                },
            )?;
            lines.push(CheckLine {
                name,
                tolerance: tol,
                passed: report.passes(tol),
                report,
            });
        }
    }
    for l in &lines {
        let worst = l
            .report
            .worst
            .as_ref()
            .map_or("-".to_string(), |w| format!("{}[{}]", w.param, w.index));
        println!(
            "{:<20} {} entries={:<5} max_rel_err={:.3e} worst={worst}",
            l.name,
            if l.passed { "PASS" } else { "FAIL" },
            l.report.entries_checked,
            l.report.max_rel_err()
        );
    }
    if let Some(p) = &a.out {
        write_json(p, &lines)?;
    }
    let failed: Vec<&str> = lines.iter().filter(|l| !l.passed).map(|l| l.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(CheckFailed(format!(
            "gradient check failed for {}",
            failed.join(", ")
        ))))
    }
}

fn model_from(path: &Path) -> Result<Model> {
    Ok(load_checkpoint::<f64>(path)?.0.model)
}

fn index(a: IndexArgs) -> CmdResult {
    let model = model_from(&a.checkpoint)?;
    let ds = Dataset::load(&a.data)?;
    let idx = build_index(&model, ds.grids.iter())?;
    idx.save(&a.out)?;
    println!("indexed {} images (d = {}) into {}", idx.len(), idx.d, a.out.display());
    Ok(())
}

fn checked_index(path: &Path, model: &Model) -> Result<GalleryIndex> {
    let idx = GalleryIndex::load(path)?;
    if idx.fingerprint != model.fingerprint() {
        return Err(Error::Data(format!(
            "{} was built with a different model",
            path.display()
        )));
    }
    Ok(idx)
}

fn query(a: QueryArgs, lexicon: &Lexicon) -> CmdResult {
    let model = model_from(&a.checkpoint)?;
    let idx = checked_index(&a.index, &model)?;
    let grids = GridStore::read(&a.data.join(GRIDS_FILE))?;
    let img: &ImageGrid = grids.require(&a.image)?;
    let hits = query_topk(&idx, &model, img, &tokenize(&a.text, lexicon), a.k)?;
    for (i, h) in hits.iter().enumerate() {
        println!("{}\t{}\t{:.6}", i + 1, h.id, h.score);
    }
    Ok(())
}

fn eval(a: EvalArgs, lexicon: &Lexicon) -> CmdResult {
    let model = model_from(&a.checkpoint)?;
    let idx = checked_index(&a.index, &model)?;
    let ds = Dataset::load(&a.data)?;
    let records = rank_dataset(&model, &idx, &ds, lexicon, !a.include_query)?;
    let report = evaluate(&records)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let put = |name: &str, body: String| {
        let p = a.out.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    put("report.json", report.to_json())?;
    put("report.tsv", report.to_tsv())?;
    put("summary.txt", report.summary())?;
    print!("{}", report.summary());
    Ok(())
}

fn attn_dump(a: AttnDumpArgs, lexicon: &Lexicon) -> CmdResult {
    let model = model_from(&a.checkpoint)?;
    let ds = Dataset::load(&a.data)?;
    let one = |img_id: &str, raw: &str, dir: &Path| -> Result<usize> {
        let img = ds.grids.require(img_id)?;
        let text = tokenize(raw, lexicon);
        let nps = probe::phrases(&text, lexicon, a.max_nps, a.leaf_only);
        let maps = probe::np_attention(&model, img, &text, &nps)?;
        Ok(probe::dump(dir, &maps, a.px)?.len())
    };
    let mut total = 0;
    if let (Some(img), Some(text)) = (&a.image, &a.text) {
        total += one(img, text, &a.out)?;
    } else if let Some(i) = a.record {
        let r = ds
            .records
            .get(i)
            .ok_or_else(|| Error::Data(format!("record {i} out of range ({} records)", ds.records.len())))?;
        total += one(&r.query_id, &r.text, &a.out)?;
    } else if a.all {
        for (i, r) in ds.records.iter().enumerate() {
            total += one(&r.query_id, &r.text, &a.out.join(format!("{i:05}")))?;
        }
    } else {
        return Err(Error::Config("attn-dump needs --image/--text, --record, or --all".into()).into());
    }
    println!("wrote {total} phrase maps under {}", a.out.display());
    Ok(())
}
