//! Command line front end for the laser-scan object detector.

mod data;
mod serve;

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use scandet::dataio::synth::SyntheticSceneConfig;
use scandet::dataio::{self, synth, AnnotatedFrame, ObjectClass};
use scandet::eval::{self, FramePredictions, PRCurve};
use scandet::geometry::SensorConfig;
use scandet::nn::{Model, ModelSpec};
use scandet::pipeline::Detector;
use scandet::preprocess::PreprocessConfig;
use scandet::train::{self, TrainConfig, WindowDataset};
use scandet::tune::{self, SearchSpace};
use scandet::vote::{self, VoteConfig};

#[derive(Parser)]
#[command(name = "scandet", about = "2D laser scan object detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Cnn,
    Mlp,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic annotated dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        num_scans: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Expected clutter posts per scene.
        #[arg(long, default_value_t = 4.0)]
        clutter: f64,
        #[arg(long, default_value_t = false)]
        no_walls: bool,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON file with a full training configuration; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        steps_per_epoch: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = ModelKind::Cnn)]
        model: ModelKind,
        /// Disable window centering (ablation).
        #[arg(long, default_value_t = false)]
        no_center: bool,
        /// Disable clamping and normalization (ablation).
        #[arg(long, default_value_t = false)]
        no_clamp: bool,
        /// Disable angular resampling (ablation).
        #[arg(long, default_value_t = false)]
        no_resample: bool,
    },
    /// Run detection over a scan file, one output line per detection.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scans: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Evaluate a checkpoint on an annotated dataset, writing PR CSV files.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random search over the voting hyperparameters.
    Tune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 60)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Newline-delimited JSON trial log.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Write a copy of the checkpoint with the best voting config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure pipeline throughput on synthetic scans.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 100)]
        num_scans: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve detections over a line-oriented TCP protocol.
    Serve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        port: u16,
    },
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Synth {
            out,
            num_scans,
            seed,
            clutter,
            no_walls,
        } => cmd_synth(&out, num_scans, seed, clutter, !no_walls),
        Command::Train {
            data,
            out,
            config,
            epochs,
            batch_size,
            steps_per_epoch,
            seed,
            model,
            no_center,
            no_clamp,
            no_resample,
        } => {
            let mut cfg = match config {
                Some(path) => serde_json::from_str(&std::fs::read_to_string(&path)?)
                    .with_context(|| format!("parsing {}", path.display()))?,
                None => TrainConfig::default(),
            };
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(b) = batch_size {
                cfg.batch_size = b;
            }
            if steps_per_epoch.is_some() {
                cfg.steps_per_epoch = steps_per_epoch;
            }
            cfg.seed = seed;
            let preprocess = PreprocessConfig {
                do_center: !no_center,
                do_clamp: !no_clamp,
                do_resample: !no_resample,
                ..PreprocessConfig::default()
            };
            cmd_train(&data, &out, cfg, model, preprocess)
        }
        Command::Detect {
            model,
            scans,
            threshold,
        } => cmd_detect(&model, &scans, threshold),
        Command::Eval { model, data, out } => cmd_eval(&model, &data, &out),
        Command::Tune {
            model,
            data,
            budget,
            seed,
            log,
            out,
        } => cmd_tune(&model, &data, budget, seed, log.as_deref(), out.as_deref()),
        Command::Bench {
            model,
            num_scans,
            seed,
        } => cmd_bench(&model, num_scans, seed),
        Command::Serve { model, port } => {
            let detector = Detector::load(&model)?;
            serve::serve(detector, port)
        }
    }
}

fn cmd_synth(out: &PathBuf, num_scans: usize, seed: u64, clutter: f64, walls: bool) -> Result<()> {
    let cfg = SyntheticSceneConfig {
        num_scans,
        seed,
        clutter_density: clutter,
        walls,
        ..SyntheticSceneConfig::default()
    };
    let sequences = synth::synthesize(&cfg, &SensorConfig::default())?;
    data::save_dataset(out, &sequences)?;
    let frames: usize = sequences.iter().map(|s| s.len()).sum();
    println!(
        "wrote {} sequences ({} frames) to {}",
        sequences.len(),
        frames,
        out.display()
    );
    Ok(())
}

fn cmd_train(
    data_dir: &PathBuf,
    out: &PathBuf,
    cfg: TrainConfig,
    kind: ModelKind,
    preprocess: PreprocessConfig,
) -> Result<()> {
    let sensor = SensorConfig::default();
    let sequences = data::load_dataset(data_dir, &sensor)?;
    let (train_seqs, val_seqs, _test) = dataio::split(sequences, (0.7, 0.15, 0.15), cfg.seed)?;
    let train_frames: Vec<AnnotatedFrame> = train_seqs.into_iter().flatten().collect();
    let val_frames: Vec<AnnotatedFrame> = val_seqs.into_iter().flatten().collect();

    let train_data = WindowDataset::build(&train_frames, &sensor, &preprocess);
    let val_data = WindowDataset::build(&val_frames, &sensor, &preprocess);
    let [bg, wc, wa] = train_data.pool_sizes();
    println!("windows: {bg} background, {wc} wheelchair, {wa} walker");

    let spec = match kind {
        ModelKind::Cnn => ModelSpec::default_cnn(preprocess.n),
        ModelKind::Mlp => ModelSpec::mlp_baseline(preprocess.n),
    };
    let mut model = Model::<f32>::init(&spec, cfg.seed)?;
    let report = train::train(&mut model, &train_data, &val_data, &cfg)?;
    for e in &report.epochs {
        println!(
            "epoch {}: train loss {:.4}, val loss {:.4}",
            e.epoch, e.train_loss, e.val_loss
        );
    }

    let mut detector = Detector::new(model, sensor, preprocess, VoteConfig::default());
    detector.save(out)?;
    println!("checkpoint written to {}", out.display());
    Ok(())
}

fn cmd_detect(model: &PathBuf, scans: &PathBuf, threshold: Option<f64>) -> Result<()> {
    let mut detector = Detector::load(model)?;
    if let Some(t) = threshold {
        detector.vote.threshold = t;
    }
    let frames = dataio::load_sequence(scans, &[], &detector.sensor)?;
    let mut out = String::new();
    for frame in &frames {
        for d in detector.detect_scan(&frame.scan)? {
            out.push_str(&format!(
                "{},{:.3},{:.3},{},{:.4}\n",
                frame.scan.seq_id,
                d.position.0,
                d.position.1,
                d.klass.name(),
                d.score
            ));
        }
    }
    print!("{out}");
    Ok(())
}

fn predict_frames(detector: &mut Detector, frames: &[AnnotatedFrame]) -> Result<Vec<FramePredictions>> {
    frames
        .iter()
        .map(|f| Ok(detector.frame_predictions(&f.scan, &f.annotations)?))
        .collect()
}

fn write_curve(path: &PathBuf, curve: &PRCurve) -> Result<()> {
    let mut text = String::from("threshold,precision,recall\n");
    for p in &curve.points {
        text.push_str(&format!(
            "{:.3},{:.6},{:.6}\n",
            p.threshold, p.precision, p.recall
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn threshold_list() -> Vec<f64> {
    (1..20)
        .map(|k| k as f64 * 0.05)
        .chain((96..100).map(|k| k as f64 * 0.01))
        .collect()
}

fn cmd_eval(model: &PathBuf, data_dir: &PathBuf, out: &PathBuf) -> Result<()> {
    let mut detector = Detector::load(model)?;
    let sequences = data::load_dataset(data_dir, &detector.sensor)?;
    let frames: Vec<AnnotatedFrame> = sequences.into_iter().flatten().collect();
    let cached = predict_frames(&mut detector, &frames)?;
    std::fs::create_dir_all(out)?;

    let thresholds = threshold_list();
    let base = detector.vote;
    let radius = 0.5;

    for klass in [ObjectClass::Wheelchair, ObjectClass::Walker] {
        let curve = eval::pr_curve_class(&cached, &base, &thresholds, radius, klass)?;
        write_curve(&out.join(format!("pr_{}.csv", klass.name())), &curve)?;
    }
    let agnostic = eval::pr_curve(&cached, &base, &thresholds, radius, false)?;
    write_curve(&out.join("pr_agnostic.csv"), &agnostic)?;

    for r in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let curve = eval::pr_curve(&cached, &base, &thresholds, r, false)?;
        write_curve(&out.join(format!("pr_agnostic_r{r:.1}.csv")), &curve)?;
    }

    let cutoffs: Vec<f64> = (1..=15).map(|k| k as f64).collect();
    let sweep = eval::pr_by_distance(&cached, &base, &cutoffs, radius, false);
    let mut text = String::from("distance,precision,recall\n");
    for p in &sweep {
        match p.recall {
            Some(r) => text.push_str(&format!("{:.1},{:.6},{:.6}\n", p.distance, p.precision, r)),
            None => text.push_str(&format!("{:.1},{:.6},\n", p.distance, p.precision)),
        }
    }
    std::fs::write(out.join("distance_sweep.csv"), text)?;

    let m = eval::evaluate(&cached, &base, radius, false);
    println!(
        "agnostic at T={:.2}: precision {:.3}, recall {:.3}, F1 {:.3}",
        base.threshold,
        m.precision(),
        m.recall(),
        eval::f1(m.precision(), m.recall())
    );
    for klass in [ObjectClass::Wheelchair, ObjectClass::Walker] {
        let m = eval::evaluate_class(&cached, &base, radius, klass);
        println!(
            "{} at T={:.2}: precision {:.3}, recall {:.3}, F1 {:.3}",
            klass.name(),
            base.threshold,
            m.precision(),
            m.recall(),
            eval::f1(m.precision(), m.recall())
        );
    }
    println!("CSV reports written to {}", out.display());
    Ok(())
}

fn cmd_tune(
    model: &PathBuf,
    data_dir: &PathBuf,
    budget: usize,
    seed: u64,
    log: Option<&std::path::Path>,
    out: Option<&std::path::Path>,
) -> Result<()> {
    let mut detector = Detector::load(model)?;
    let sequences = data::load_dataset(data_dir, &detector.sensor)?;
    let frames: Vec<AnnotatedFrame> = sequences.into_iter().flatten().collect();
    let cached = predict_frames(&mut detector, &frames)?;

    let (best, trials) = tune::random_search(
        &SearchSpace::default(),
        &detector.vote,
        &cached,
        &threshold_list(),
        0.5,
        budget,
        seed,
    )?;
    if let Some(path) = log {
        let mut text = String::new();
        for t in &trials {
            text.push_str(&serde_json::to_string(t)?);
            text.push('\n');
        }
        std::fs::write(path, text)?;
    }
    println!(
        "best objective {:.4} at T={:.2}: weights ({:.3}, {:.3}, {:.3}), bin {:.3} m, sigma {:.2}",
        best.objective,
        best.best_threshold,
        best.config.class_weights.0,
        best.config.class_weights.1,
        best.config.class_weights.2,
        best.config.bin,
        best.config.sigma
    );
    if let Some(path) = out {
        detector.vote = VoteConfig {
            threshold: best.best_threshold,
            ..best.config
        };
        detector.save(path)?;
        println!("updated checkpoint written to {}", path.display());
    }
    Ok(())
}

fn cmd_bench(model: &PathBuf, num_scans: usize, seed: u64) -> Result<()> {
    let mut detector = Detector::load(model)?;
    let cfg = SyntheticSceneConfig {
        num_scans,
        seed,
        ..SyntheticSceneConfig::default()
    };
    let frames: Vec<AnnotatedFrame> = synth::synthesize(&cfg, &detector.sensor)?
        .into_iter()
        .flatten()
        .collect();

    let mut t_pre = 0.0f64;
    let mut t_nn = 0.0f64;
    let mut t_vote = 0.0f64;
    let mut detections = 0usize;
    let start = Instant::now();
    for frame in &frames {
        let mut scan = frame.scan.clone();
        scan.sanitize(&detector.sensor);

        let t0 = Instant::now();
        let windows = scandet::preprocess::cut_all_windows(&scan, &detector.sensor, &detector.preprocess);
        t_pre += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let n = detector.preprocess.n;
        let input = ndarray_input(&windows, n);
        let predictions = detector.model.predict(&input)?;
        t_nn += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        detections += vote::detect(&windows, &predictions, &detector.vote).len();
        t_vote += t0.elapsed().as_secs_f64();
    }
    let total = start.elapsed().as_secs_f64();
    println!("{} scans, {} detections", frames.len(), detections);
    println!(
        "preprocess {:.1} ms/scan, network {:.1} ms/scan, voting {:.1} ms/scan",
        1e3 * t_pre / frames.len() as f64,
        1e3 * t_nn / frames.len() as f64,
        1e3 * t_vote / frames.len() as f64
    );
    println!("throughput: {:.2} scans/s", frames.len() as f64 / total);
    Ok(())
}

fn ndarray_input(windows: &[scandet::preprocess::Window], n: usize) -> ndarray::Array2<f32> {
    let mut input = ndarray::Array2::<f32>::zeros((windows.len(), n));
    for (i, w) in windows.iter().enumerate() {
        for (j, &s) in w.samples.iter().enumerate() {
            input[[i, j]] = s as f32;
        }
    }
    input
}
