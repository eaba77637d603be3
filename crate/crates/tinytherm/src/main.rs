use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tinytherm::config::Config;
use tinytherm::container::{read_model, write_f32, write_int8, ModelFile};
use tinytherm::dataset::{frame_paths, load_split, sequence_dir, write_sequence, Sequence};
use tinytherm::jsonl::{read_annotations, read_detections, write_detections, DetectionRecord};
use tinytherm::manifest::{hash_paths, Manifest};
use tinytherm::report::{pr_svg, write_pr_curve, write_prune_ledger, write_train_log, ModelReport};
use tinytherm::tiff::{read_frame, write_frame};
use tinytherm::timing::WallClock;
use tinytherm::{Error, Result};
use tinytherm_core::detect::{decode, kmeans_anchors, nms, AnchorSet, Detection, Rect};
use tinytherm_core::eval::{evaluate, EvalSummary};
use tinytherm_core::graph::ModelGraph;
use tinytherm_core::infer::{fold_batchnorm, forward};
use tinytherm_core::pipeline::{Executor, Pipeline};
use tinytherm_core::prune::{prune_campaign, PruneConfig, PruneObjective, TrainingObjective};
use tinytherm_core::quant::{calibrate, quantize_model};
use tinytherm_core::synth::synth_sequence;
use tinytherm_core::train::{prepare_sequence, train, Sample};
use tinytherm_core::ThermalFrame;

/// Tiny thermal person detector: synthesize data, train, prune, quantize,
/// evaluate and run the frame loop.
#[derive(Parser)]
#[command(name = "tinytherm", version)]
struct Cli {
    /// TOML configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configuration's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate labelled synthetic sequences in the dataset layout.
    Synth(SynthArgs),
    /// Train a detector from random initialization.
    Train(TrainArgs),
    /// Iterative channel pruning with conditional fine-tuning.
    Prune(PruneArgs),
    /// Post-training int8 quantization.
    Quantize(QuantizeArgs),
    /// AP and best-F1 of a detections file or of a model on a split.
    Eval(EvalArgs),
    /// Run the frame loop over one sequence directory.
    Detect(DetectArgs),
    /// Parameters, MACs and memory of a model.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Dataset root to create.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    train: Option<usize>,
    #[arg(long)]
    val: Option<usize>,
    #[arg(long)]
    test: Option<usize>,
    /// Frames per sequence.
    #[arg(long)]
    frames: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset root with `train` and `val` splits.
    #[arg(long)]
    data: PathBuf,
    /// Output model (`TPDM` container).
    #[arg(long)]
    out: PathBuf,
    /// Training log CSV [default: <out>.train.csv].
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    iters: Option<usize>,
    /// Feed the plain normalized frame instead of the background difference.
    #[arg(long)]
    no_bg_sub: bool,
}

#[derive(Args)]
struct PruneArgs {
    #[arg(long)]
    data: PathBuf,
    /// Trained `TPDM` model.
    #[arg(long)]
    model: PathBuf,
    /// Receives `iter_NNN.tpdm`, `pruned.tpdm`, `prune_ledger.csv`.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    iterations: Option<usize>,
    /// Remove filters only; no validation or fine-tuning.
    #[arg(long)]
    structural: bool,
}

#[derive(Args)]
struct QuantizeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Output `TPDQ` container.
    #[arg(long)]
    out: PathBuf,
    /// Calibration images drawn evenly from the training split.
    #[arg(long)]
    calibration: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Detections JSON-lines to score against `--annotations`.
    #[arg(long, requires = "annotations", conflicts_with_all = ["model", "data"])]
    detections: Option<PathBuf>,
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Model to run over every sequence of `--split` under `--data`.
    #[arg(long, requires = "data")]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    /// Write the PR curve as CSV (threshold, precision, recall).
    #[arg(long)]
    pr_csv: Option<PathBuf>,
    /// Render the PR curve as SVG.
    #[arg(long)]
    pr_svg: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExecutorKind {
    F32,
    Int8,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    model: PathBuf,
    /// Sequence directory of `frame_NNNNNN.tiff` files.
    #[arg(long)]
    input: PathBuf,
    /// Must match the container type of `--model`.
    #[arg(long, value_enum, default_value = "f32")]
    executor: ExecutorKind,
    /// Detections JSON-lines.
    #[arg(long)]
    out: PathBuf,
    /// Per-stage wall-clock CSV.
    #[arg(long)]
    timing: Option<PathBuf>,
    /// Confidence threshold [default: from config].
    #[arg(long)]
    conf: Option<f32>,
    /// Dump the background image every N frames (0 = off).
    #[arg(long)]
    bg_dump_every: Option<usize>,
    /// Directory for background dumps [default: next to --out].
    #[arg(long)]
    bg_dump_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    model: PathBuf,
    /// Also write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match cli.command {
        Command::Synth(a) => synth(cfg, a),
        Command::Train(a) => train_cmd(cfg, a),
        Command::Prune(a) => prune_cmd(cfg, a),
        Command::Quantize(a) => quantize_cmd(cfg, a),
        Command::Eval(a) => eval_cmd(cfg, a),
        Command::Detect(a) => detect_cmd(cfg, a),
        Command::Report(a) => report_cmd(cfg, a),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn finish_manifest(mut m: Manifest, inputs: &[&Path], outputs: &[&Path], at: &Path) -> Result<()> {
    m.inputs = hash_paths(inputs)?;
    m.outputs = hash_paths(outputs)?;
    m.write(at)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn samples(seqs: &[Sequence], cfg: &Config) -> Result<Vec<Sample>> {
    let spec = cfg.input_spec()?;
    let mut out = Vec::new();
    for s in seqs {
        out.extend(prepare_sequence(&s.frames, &s.boxes, &spec)?);
    }
    Ok(out)
}

fn load_f32(path: &Path) -> Result<ModelGraph> {
    match read_model(path)? {
        ModelFile::F32(g) => Ok(g),
        ModelFile::Int8(_) => Err(Error::Usage(format!("{} is an int8 model; this step needs the f32 model", path.display()))),
    }
}

fn synth(mut cfg: Config, a: SynthArgs) -> Result<()> {
    let s = &mut cfg.synth;
    s.train_sequences = a.train.unwrap_or(s.train_sequences);
    s.val_sequences = a.val.unwrap_or(s.val_sequences);
    s.test_sequences = a.test.unwrap_or(s.test_sequences);
    s.frames_per_sequence = a.frames.unwrap_or(s.frames_per_sequence);
    cfg.validate()?;
    create_dir(&a.out)?;
    let mut total = 0;
    for (split, n) in cfg.split_sizes() {
        for i in 0..n {
            let (frames, boxes) = synth_sequence(&cfg.scene(split, i)?)?;
            write_sequence(&sequence_dir(&a.out, split, i), &frames, &boxes)?;
            total += frames.len();
        }
        println!("{split}: {n} sequences");
    }
    println!("wrote {total} frames under {}", a.out.display());
    let m = Manifest::new("synth", cfg.seed, cfg.to_toml());
    let splits: Vec<PathBuf> = cfg.split_sizes().iter().filter(|(_, n)| *n > 0).map(|(s, _)| a.out.join(s)).collect();
    let outs: Vec<&Path> = splits.iter().map(PathBuf::as_path).collect();
    finish_manifest(m, &[], &outs, &a.out.join("manifest.json"))
}

fn train_cmd(mut cfg: Config, a: TrainArgs) -> Result<()> {
    if let Some(n) = a.iters {
        cfg.train.max_iters = n;
        cfg.train.warmup_iters = cfg.train.warmup_iters.min(n / 10);
    }
    if a.no_bg_sub {
        cfg.input.use_bg_sub = false;
    }
    cfg.validate()?;
    let train_seqs = load_split(&a.data, "train")?;
    let val_seqs = load_split(&a.data, "val")?;
    let train_set = samples(&train_seqs, &cfg)?;
    let val_set = samples(&val_seqs, &cfg)?;
    let anchors = if cfg.arch.fit_anchors {
        let shapes: Vec<(f32, f32)> = train_seqs.iter().flat_map(|s| s.boxes.iter().map(|b| (b.w, b.h))).collect();
        if shapes.len() < cfg.arch.num_anchors {
            return Err(Error::Config(format!("{} training boxes cannot fit {} anchors", shapes.len(), cfg.arch.num_anchors)));
        }
        kmeans_anchors(&shapes, cfg.arch.num_anchors, cfg.arch.kmeans_iterations)?
    } else {
        AnchorSet::default()
    };
    let spec = cfg.input_spec()?;
    let graph = ModelGraph::from_arch(&cfg.arch_config(), spec.input_channels(), anchors, cfg.seed)?;
    println!(
        "training {} params on {} samples ({} validation) for {} iterations",
        graph.count_params(),
        train_set.len(),
        val_set.len(),
        cfg.train.max_iters
    );
    let out = train(graph, &train_set, &val_set, &cfg.train_config())?;
    write_f32(&a.out, &out.best)?;
    let log = a.log.unwrap_or_else(|| with_suffix(&a.out, ".train.csv"));
    write_train_log(&log, &out.log)?;
    println!("best validation loss {:.5} after {} iterations -> {}", out.best_val_loss, out.iterations, a.out.display());
    let m = Manifest::new("train", cfg.seed, cfg.to_toml());
    finish_manifest(m, &[&a.data], &[&a.out, &log], &with_suffix(&a.out, ".manifest.json"))
}

/// Fine-tuning objective that also scores AP and best F1 on validation.
struct ScoredObjective<'a> {
    inner: TrainingObjective<'a>,
    match_iou: f32,
    score_floor: f32,
    nms_iou: f32,
}

impl PruneObjective for ScoredObjective<'_> {
    fn val_loss(&mut self, graph: &ModelGraph) -> tinytherm_core::Result<f64> {
        self.inner.val_loss(graph)
    }

    fn fine_tune(&mut self, graph: ModelGraph, target: f64, cfg: &PruneConfig) -> tinytherm_core::Result<(ModelGraph, f64, usize)> {
        self.inner.fine_tune(graph, target, cfg)
    }

    fn score(&mut self, graph: &ModelGraph) -> tinytherm_core::Result<Option<(f64, f64)>> {
        let s = score_samples(graph, self.inner.val_set, self.score_floor, self.nms_iou, self.match_iou)?;
        Ok(Some((s.ap, s.best.f1)))
    }
}

fn score_samples(graph: &ModelGraph, set: &[Sample], floor: f32, nms_iou: f32, match_iou: f32) -> tinytherm_core::Result<EvalSummary> {
    let mut dets = Vec::with_capacity(set.len());
    for s in set {
        dets.push(nms(&decode(&forward(graph, &s.input)?, &graph.anchors, floor)?, nms_iou));
    }
    let gts: Vec<Vec<Rect>> = set.iter().map(|s| s.boxes.clone()).collect();
    evaluate(&dets, &gts, match_iou)
}

fn prune_cmd(mut cfg: Config, a: PruneArgs) -> Result<()> {
    if let Some(n) = a.iterations {
        cfg.prune.max_iterations = n;
    }
    cfg.prune.structural_only |= a.structural;
    cfg.validate()?;
    let model = load_f32(&a.model)?;
    create_dir(&a.out_dir)?;
    let base_params = model.count_params();
    let (train_set, val_set) = if cfg.prune.structural_only {
        (Vec::new(), Vec::new())
    } else {
        (samples(&load_split(&a.data, "train")?, &cfg)?, samples(&load_split(&a.data, "val")?, &cfg)?)
    };
    let mut objective = ScoredObjective {
        inner: TrainingObjective { train_set: &train_set, val_set: &val_set, train_cfg: cfg.train_config() },
        match_iou: cfg.eval.match_iou,
        score_floor: cfg.eval.score_floor,
        nms_iou: cfg.detect.nms_iou,
    };
    let objective: Option<&mut dyn PruneObjective> = if cfg.prune.structural_only { None } else { Some(&mut objective) };
    let mut outputs = Vec::new();
    let mut io_error = None;
    let (pruned, records) = prune_campaign(model, objective, &cfg.prune_config(), |r, g| {
        let path = a.out_dir.join(format!("iter_{:03}.tpdm", r.iteration));
        println!(
            "iter {:>3}: {:>5} filters, {:>8} params (÷{:.1}), fine-tune {} iters",
            r.iteration,
            r.prunable_filters,
            r.params,
            base_params as f64 / r.params as f64,
            r.finetune_iters
        );
        if let Err(e) = write_f32(&path, g) {
            io_error = Some(e);
            return Err(tinytherm_core::Error::Validation("checkpoint could not be written".into()));
        }
        outputs.push(path);
        Ok(())
    })
    .map_err(|e| io_error.take().unwrap_or(Error::Core(e)))?;
    let final_path = a.out_dir.join("pruned.tpdm");
    write_f32(&final_path, &pruned)?;
    let ledger = a.out_dir.join("prune_ledger.csv");
    write_prune_ledger(&ledger, base_params, &records)?;
    println!("{} iterations: {} -> {} params -> {}", records.len(), base_params, pruned.count_params(), final_path.display());
    outputs.push(final_path);
    outputs.push(ledger);
    let m = Manifest::new("prune", cfg.seed, cfg.to_toml());
    let inputs: Vec<&Path> = if cfg.prune.structural_only { vec![&a.model] } else { vec![&a.model, &a.data] };
    let outs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    finish_manifest(m, &inputs, &outs, &a.out_dir.join("manifest.json"))
}

fn quantize_cmd(mut cfg: Config, a: QuantizeArgs) -> Result<()> {
    if let Some(n) = a.calibration {
        cfg.quantize.calibration_images = n;
    }
    cfg.validate()?;
    let folded = fold_batchnorm(&load_f32(&a.model)?)?;
    let set = samples(&load_split(&a.data, "train")?, &cfg)?;
    let n = cfg.quantize.calibration_images.min(set.len());
    let inputs: Vec<_> = (0..n).map(|i| set[i * set.len() / n].input.clone()).collect();
    let q = quantize_model(&folded, &calibrate(&folded, &inputs)?)?;
    write_int8(&a.out, &q)?;
    let plan = q.memory_plan();
    println!(
        "calibrated on {n} images: {} weight bytes, {} byte arena -> {}",
        plan.weight_bytes,
        plan.arena_bytes,
        a.out.display()
    );
    let m = Manifest::new("quantize", cfg.seed, cfg.to_toml());
    finish_manifest(m, &[&a.model, &a.data], &[&a.out], &with_suffix(&a.out, ".manifest.json"))
}

fn executor_for(model: ModelFile) -> Executor {
    match model {
        ModelFile::F32(g) => Executor::F32(g),
        ModelFile::Int8(q) => Executor::Int8(q),
    }
}

/// Run the frame loop over a split at a low threshold; frames still building
/// the background are excluded from scoring.
fn eval_model(cfg: &Config, model: &Path, data: &Path, split: &str) -> Result<EvalSummary> {
    let executor = executor_for(read_model(model)?);
    let (mut dets, mut gts) = (Vec::new(), Vec::new());
    for seq in load_split(data, split)? {
        let per_frame = tinytherm_core::frame::boxes_per_frame(&seq.boxes, seq.frames.len())?;
        let mut p = Pipeline::new(executor.clone(), cfg.pipeline_config(cfg.eval.score_floor)?)?;
        for (frame, truth) in seq.frames.iter().zip(per_frame) {
            if let Some(d) = p.step(frame, &mut ())?.detections {
                dets.push(d);
                gts.push(truth.iter().map(|b| b.rect()).collect());
            }
        }
    }
    Ok(evaluate(&dets, &gts, cfg.eval.match_iou)?)
}

fn eval_files(cfg: &Config, detections: &Path, annotations: &Path) -> Result<EvalSummary> {
    let records = read_detections(detections)?;
    let boxes = read_annotations(annotations)?;
    let frames = records.iter().map(|r| r.frame_index).chain(boxes.iter().map(|b| b.frame_index)).max().map_or(0, |m| m as usize + 1);
    let mut dets: Vec<Vec<Detection>> = vec![Vec::new(); frames];
    for r in &records {
        dets[r.frame_index as usize].push(r.detection());
    }
    let mut gts: Vec<Vec<Rect>> = vec![Vec::new(); frames];
    for b in &boxes {
        gts[b.frame_index as usize].push(b.rect());
    }
    Ok(evaluate(&dets, &gts, cfg.eval.match_iou)?)
}

fn eval_cmd(cfg: Config, a: EvalArgs) -> Result<()> {
    let (summary, inputs): (EvalSummary, Vec<&Path>) = match (&a.detections, &a.annotations, &a.model, &a.data) {
        (Some(d), Some(g), None, None) => (eval_files(&cfg, d, g)?, vec![d, g]),
        (None, _, Some(m), Some(data)) => (eval_model(&cfg, m, data, &a.split)?, vec![m, data]),
        _ => return Err(Error::Usage("pass either --detections with --annotations, or --model with --data".into())),
    };
    let b = summary.best;
    println!("AP {:.2}%", summary.ap * 100.0);
    println!("F1 {:.2}% at threshold {:.4} (precision {:.2}%, recall {:.2}%)", b.f1 * 100.0, b.threshold, b.precision * 100.0, b.recall * 100.0);
    let mut outputs = Vec::new();
    if let Some(p) = &a.pr_csv {
        write_pr_curve(p, &summary.curve)?;
        outputs.push(p.as_path());
    }
    if let Some(p) = &a.pr_svg {
        std::fs::write(p, pr_svg(&summary.curve, &b, summary.ap)).map_err(|e| Error::io(p, e))?;
        outputs.push(p.as_path());
    }
    match outputs.first() {
        Some(first) => finish_manifest(Manifest::new("eval", cfg.seed, cfg.to_toml()), &inputs, &outputs, &with_suffix(first, ".manifest.json")),
        None => Ok(()),
    }
}

fn dump_background(p: &Pipeline, dir: &Path, frame_index: u64) -> Result<Option<PathBuf>> {
    let Some(bg) = p.preprocessor().background() else { return Ok(None) };
    let n = p.preprocessor().spec().normalizer;
    let temps = bg.background.iter().map(|&v| n.lo() + v * (n.hi() - n.lo())).collect();
    let frame = ThermalFrame::new(bg.width, bg.height, temps, frame_index)?;
    let path = dir.join(format!("background_{frame_index:06}.tiff"));
    write_frame(&path, &frame)?;
    Ok(Some(path))
}

fn detect_cmd(cfg: Config, a: DetectArgs) -> Result<()> {
    cfg.validate()?;
    let executor = match (read_model(&a.model)?, a.executor) {
        (ModelFile::F32(g), ExecutorKind::F32) => Executor::F32(g),
        (ModelFile::Int8(q), ExecutorKind::Int8) => Executor::Int8(q),
        (ModelFile::F32(_), ExecutorKind::Int8) => return Err(Error::Usage("--executor int8 needs a quantized (TPDQ) model".into())),
        (ModelFile::Int8(_), ExecutorKind::F32) => return Err(Error::Usage("--executor f32 needs an f32 (TPDM) model".into())),
    };
    let conf = a.conf.unwrap_or(cfg.detect.conf_threshold);
    let dump_every = a.bg_dump_every.unwrap_or(cfg.detect.bg_dump_every);
    let dump_dir = a.bg_dump_dir.clone().unwrap_or_else(|| with_suffix(&a.out, ".background"));
    if dump_every > 0 {
        create_dir(&dump_dir)?;
    }
    let paths = frame_paths(&a.input)?;
    if paths.len() < tinytherm_core::background::INIT_FRAMES {
        return Err(tinytherm_core::Error::Init(format!("{} holds {} frames", a.input.display(), paths.len())).into());
    }
    let mut pipeline = Pipeline::new(executor, cfg.pipeline_config(conf)?)?;
    let mut clock = WallClock::default();
    let file = std::fs::File::create(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut out = std::io::BufWriter::new(file);
    let (mut total, mut scored) = (0usize, 0usize);
    let mut outputs = vec![a.out.clone()];
    // Frames are read and processed one at a time, as a sensor would deliver them.
    for (i, path) in paths.iter().enumerate() {
        let frame = read_frame(path, i as u64)?;
        let step = pipeline.step(&frame, &mut clock)?;
        if let Some(dets) = step.detections {
            let recs: Vec<DetectionRecord> = dets.iter().map(|d| DetectionRecord::new(step.frame_index, d)).collect();
            write_detections(&mut out, &recs).map_err(|e| Error::io(&a.out, e))?;
            total += recs.len();
            scored += 1;
        }
        if dump_every > 0 && (i + 1) % dump_every == 0 {
            outputs.extend(dump_background(&pipeline, &dump_dir, i as u64)?);
        }
    }
    out.flush().map_err(|e| Error::io(&a.out, e))?;
    println!("{} frames ({} after background warm-up), {} detections -> {}", paths.len(), scored, total, a.out.display());
    if let Some(t) = &a.timing {
        clock.write_csv(t)?;
        for r in clock.rows() {
            println!("{:<18} {:>6} calls {:>10.3} ms {:>10.1} us/call", r.stage, r.calls, r.total_ms, r.mean_us);
        }
        outputs.push(t.clone());
    }
    let outs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    finish_manifest(Manifest::new("detect", cfg.seed, cfg.to_toml()), &[&a.model, &a.input], &outs, &with_suffix(&a.out, ".manifest.json"))
}

fn report_cmd(cfg: Config, a: ReportArgs) -> Result<()> {
    let r = ModelReport::for_model(&read_model(&a.model)?);
    print!("{}", r.table());
    if let Some(p) = &a.csv {
        r.write_csv(p)?;
        finish_manifest(Manifest::new("report", cfg.seed, cfg.to_toml()), &[&a.model], &[p], &with_suffix(p, ".manifest.json"))?;
    }
    Ok(())
}
