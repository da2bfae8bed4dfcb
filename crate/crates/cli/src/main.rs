//! `rattle`: generate synthetic shake corpora, extract features, train and
//! evaluate material classifiers and weight regressors, and run the noise
//! sweep and hyperparameter search.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rattle::audio::{AudioClip, ChannelPolicy};
use rattle::experiments::{
    noise_bank, random_search, run_noise_sweep, run_protocol, score_classification, score_regression, sweep_csv,
    sweep_from_csv, sweep_gnuplot, task_seed, train_splits, write_protocol_reports, LabeledFeatures, NoiseKind,
    NoiseSweepConfig, NoiseTarget, ProtocolReport, SearchSpace, Summary, Task, SUMMARY_FILE, SWEEP_FILE,
};
use rattle::features::{cached_features, digest_hex, extract_features, feature_digest};
use rattle::nn::{load_model, save_model, Output, Target};
use rattle::synth::{generate_dataset, Corpus, Material};
use rattle::wav::{load_wav, save_wav};

use rattle_cli::config::{self, RunConfig, CONFIG_FILE};

#[derive(Debug, Parser)]
#[command(name = "rattle", version, about = "Material and weight perception from shake audio")]
struct Cli {
    /// TOML configuration overlaid on the built-in defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// 270-clip corpora, 3 splits and small networks.
    #[arg(long, global = true)]
    desk_scale: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset directory holding manifest.json.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    #[arg(long, value_parser = parse_channels)]
    channels: Option<ChannelPolicy>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a labelled corpus of shake clips.
    Generate,
    /// Extract and cache MFCC features for a dataset.
    Features {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_parser = parse_task, default_value = "classify")]
        task: Task,
    },
    /// Train one model on the first split and save a checkpoint.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_parser = parse_task, default_value = "classify")]
        task: Task,
    },
    /// Run the split protocol, or score a saved checkpoint with --model.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        /// Both tasks when omitted (protocol mode only).
        #[arg(long, value_parser = parse_task)]
        task: Option<Task>,
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
    },
    /// Repeat the protocol with noise mixed in at increasing gains.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_parser = parse_task)]
        task: Option<Task>,
        /// Noise WAV files; synthetic noises are used when none are given.
        #[arg(long, value_name = "WAV", num_args = 1..)]
        noise: Vec<PathBuf>,
        #[arg(long)]
        noise_max: Option<f64>,
        #[arg(long)]
        noise_step: Option<f64>,
        /// Train on clean clips and add noise to the test clips only.
        #[arg(long)]
        test_only: bool,
    },
    /// Random hyperparameter search.
    Search {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_parser = parse_task, default_value = "classify")]
        task: Task,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Convert a sweep.csv into gnuplot columns.
    Report {
        #[arg(long, value_name = "CSV")]
        sweep: PathBuf,
    },
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse()
}

fn parse_channels(s: &str) -> Result<ChannelPolicy, String> {
    s.parse()
}

enum Failure {
    Config(String),
    Runtime(String),
}

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

fn resolve(cli: &Cli) -> Result<RunConfig, Failure> {
    let base = if cli.desk_scale { RunConfig::desk_scale() } else { RunConfig::default() };
    let mut cfg = match &cli.config {
        Some(path) => config::load(&base, path).map_err(Failure::Config)?,
        None => base,
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }
    let data = match &cli.command {
        Command::Features { data, .. }
        | Command::Train { data, .. }
        | Command::Eval { data, .. }
        | Command::Sweep { data, .. }
        | Command::Search { data, .. } => Some(data),
        Command::Generate | Command::Report { .. } => None,
    };
    if let Some(ch) = data.and_then(|d| d.channels) {
        cfg.experiment.channels = ch;
    }
    if let Command::Sweep { noise_max, noise_step, test_only, .. } = &cli.command {
        if let Some(m) = noise_max {
            cfg.sweep.max_gain = *m;
        }
        if let Some(s) = noise_step {
            cfg.sweep.step = *s;
        }
        if *test_only {
            cfg.sweep.target = NoiseTarget::TestOnly;
        }
    }
    if let Command::Search { budget: Some(b), .. } = &cli.command {
        cfg.search.budget = *b;
    }
    cfg.experiment.seed = cfg.seed;
    cfg.generator.validate().map_err(|e| Failure::Config(e.to_string()))?;
    cfg.experiment.validate().map_err(|e| Failure::Config(e.to_string()))?;
    cfg.sweep.gains().map_err(Failure::Config)?;
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn prepare_out(out: &Path, cfg: &RunConfig) -> Result<(), Failure> {
    fs::create_dir_all(out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    write(&out.join(CONFIG_FILE), &cfg.to_toml())
}

fn load_corpus(data: &DataArgs) -> Result<(Corpus, LabeledFeatures), Failure> {
    let corpus = Corpus::load(&data.data).map_err(runtime)?;
    let labels = LabeledFeatures::from_manifest(&corpus.manifest);
    Ok((corpus, labels))
}

fn tasks(task: Option<Task>) -> Vec<Task> {
    task.map_or_else(|| vec![Task::Classify, Task::Weigh], |t| vec![t])
}

fn source_id(corpus: &Corpus) -> String {
    format!("{}:{}:{}", corpus.manifest.config_digest, corpus.manifest.seed, corpus.len())
}

fn run(cli: &Cli, cfg: &RunConfig) -> Result<(), Failure> {
    let out = &cli.out;
    prepare_out(out, cfg)?;
    match &cli.command {
        Command::Generate => {
            let manifest = generate_dataset(&cfg.generator, out, cfg.seed).map_err(runtime)?;
            eprintln!("wrote {} clips from {} capsules to {}", manifest.len(), manifest.n_capsules(), out.display());
        }
        Command::Features { data, task } => {
            let (corpus, _) = load_corpus(data)?;
            let tc = cfg.experiment.task(*task);
            let path = out.join(format!("features_{}.bin", task.name()));
            let feats = cached_features(&path, &corpus.clips, &tc.mfcc, cfg.experiment.channels, &source_id(&corpus))
                .map_err(runtime)?;
            eprintln!(
                "{} sequences of width {} in {}",
                feats.len(),
                feats.first().map_or(0, |f| f.n_coeffs()),
                path.display()
            );
        }
        Command::Train { data, task } => {
            let (corpus, labels) = load_corpus(data)?;
            let tc = cfg.experiment.task(*task);
            let features = extract_features(&corpus.clips, &tc.mfcc, cfg.experiment.channels).map_err(runtime)?;
            let plan = cfg.experiment.splits(labels.len()).map_err(runtime)?.truncated(1);
            let seed = task_seed(cfg.seed, *task);
            let mut trained = train_splits(&features, &labels, &plan, *task, tc, seed).map_err(runtime)?;
            let mut report =
                ProtocolReport { n_samples: labels.len(), n_splits: 1, classification: None, regression: None };
            match task {
                Task::Classify => {
                    report.classification = Some(
                        score_classification(&trained, &features, &labels, &plan, cfg.experiment.averaging)
                            .map_err(runtime)?,
                    )
                }
                Task::Weigh => {
                    report.regression = Some(score_regression(&trained, &features, &labels, &plan).map_err(runtime)?)
                }
            }
            let t = trained.remove(0);
            let mut model = t.model;
            let digest = feature_digest(&tc.mfcc, cfg.experiment.channels, "");
            model.set_feature_digest(Some(digest_hex(&digest)));
            save_model(&model, out.join("model.ckpt")).map_err(runtime)?;
            write(&out.join("train_log.csv"), &t.history.to_csv())?;
            write_protocol_reports(out, &report).map_err(runtime)?;
            eprintln!(
                "trained {} epochs (best {}), checkpoint in {}",
                t.history.epochs.len(),
                t.history.best_epoch,
                out.join("model.ckpt").display()
            );
        }
        Command::Eval { data, task, model: Some(path) } => {
            let task = task.unwrap_or(Task::Classify);
            let model = load_model(path).map_err(runtime)?;
            let (corpus, labels) = load_corpus(data)?;
            let tc = cfg.experiment.task(task);
            let probe = match task {
                Task::Classify => Target::Class(labels.labels[0]),
                Task::Weigh => Target::Value(labels.weights[0]),
            };
            model.check_target(&probe).map_err(runtime)?;
            let expected = digest_hex(&feature_digest(&tc.mfcc, cfg.experiment.channels, ""));
            if model.feature_digest().is_some_and(|d| d != expected) {
                eprintln!("warning: checkpoint was trained with different feature settings");
            }
            let features = extract_features(&corpus.clips, &tc.mfcc, cfg.experiment.channels).map_err(runtime)?;
            let mut csv = String::from("path,material,weight_g,prediction\n");
            let (mut correct, mut abs) = (0usize, 0.0);
            for (i, (f, e)) in features.iter().zip(corpus.entries()).enumerate() {
                let out = model.forward(f).map_err(runtime)?;
                let pred = match out {
                    Output::Probabilities(_) => {
                        let c = out.predicted_class().unwrap_or(0);
                        correct += usize::from(c == labels.labels[i]);
                        Material::from_label(c).map_or(c.to_string(), |m| m.name().to_string())
                    }
                    Output::Value(v) => {
                        abs += (v - labels.weights[i]).abs();
                        format!("{v:.4}")
                    }
                };
                writeln!(csv, "{},{},{},{}", e.path, e.material, e.weight_g, pred).expect("string write");
            }
            write(&out.join("predictions.csv"), &csv)?;
            let n = features.len().max(1) as f64;
            let summary = match task {
                Task::Classify => serde_json::json!({ "n_samples": features.len(), "accuracy": correct as f64 / n }),
                Task::Weigh => serde_json::json!({ "n_samples": features.len(), "mae_g": abs / n }),
            };
            write(&out.join(SUMMARY_FILE), &(serde_json::to_string_pretty(&summary).expect("json") + "\n"))?;
            eprintln!("{summary}");
        }
        Command::Eval { data, task, model: None } => {
            let (corpus, labels) = load_corpus(data)?;
            let report = run_protocol(&corpus.clips, &labels, &cfg.experiment, &tasks(*task)).map_err(runtime)?;
            write_protocol_reports(out, &report).map_err(runtime)?;
            eprintln!("{}", serde_json::to_string(&Summary::of(&report)).expect("json"));
        }
        Command::Sweep { data, task, noise, .. } => {
            let (corpus, labels) = load_corpus(data)?;
            let first = corpus.clips.first().ok_or_else(|| Failure::Runtime("dataset is empty".into()))?;
            let noises: Vec<AudioClip> = if noise.is_empty() {
                let bank =
                    noise_bank(first.len(), first.n_channels(), first.sample_rate(), cfg.seed).map_err(runtime)?;
                let dir = out.join("noise");
                fs::create_dir_all(&dir).map_err(runtime)?;
                for (clip, kind) in bank.iter().zip(NoiseKind::ALL) {
                    save_wav(clip, dir.join(format!("{}.wav", kind.name()))).map_err(runtime)?;
                }
                bank
            } else {
                noise.iter().map(load_wav).collect::<Result<_, _>>().map_err(runtime)?
            };
            let sweep = NoiseSweepConfig {
                gains: cfg.sweep.gains().map_err(Failure::Config)?,
                target: cfg.sweep.target,
                tasks: tasks(*task),
            };
            let result = run_noise_sweep(&corpus.clips, &labels, &noises, &cfg.experiment, &sweep).map_err(runtime)?;
            write(&out.join(SWEEP_FILE), &sweep_csv(&result))?;
            let summaries: Vec<_> = result
                .points
                .iter()
                .map(|p| serde_json::json!({ "gain": p.gain, "summary": Summary::of(&p.report) }))
                .collect();
            write(&out.join(SUMMARY_FILE), &(serde_json::to_string_pretty(&summaries).expect("json") + "\n"))?;
            eprint!("{}", sweep_csv(&result));
        }
        Command::Search { data, task, .. } => {
            let (corpus, labels) = load_corpus(data)?;
            let space = match task {
                Task::Classify => &cfg.search.classify,
                Task::Weigh => &cfg.search.weigh,
            };
            let space = SearchSpace { task: *task, ..space.clone() };
            let result = random_search(
                &corpus.clips,
                &labels,
                &space,
                &cfg.experiment,
                cfg.search.budget,
                cfg.search.eval_splits,
                cfg.seed,
            )
            .map_err(runtime)?;
            let mut csv = String::from("rank,trial,cell,layer1_units,layer2_units,n_coeffs,learning_rate,val_loss\n");
            for (rank, t) in result.leaderboard.iter().enumerate() {
                writeln!(
                    csv,
                    "{},{},{},{},{},{},{:.6e},{:.9}",
                    rank + 1,
                    t.index,
                    t.cell.name(),
                    t.layer1_units,
                    t.layer2_units,
                    t.n_coeffs,
                    t.learning_rate,
                    t.val_loss
                )
                .expect("string write");
            }
            write(&out.join("leaderboard.csv"), &csv)?;
            write(&out.join("best.json"), &(serde_json::to_string_pretty(&result.best).expect("json") + "\n"))?;
            eprintln!("best: {:?}", result.best);
        }
        Command::Report { sweep } => {
            let text = fs::read_to_string(sweep).map_err(|e| Failure::Runtime(format!("{}: {e}", sweep.display())))?;
            let rows = sweep_from_csv(&text).map_err(runtime)?;
            let path = out.join("sweep.dat");
            write(&path, &sweep_gnuplot(&rows))?;
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let outcome = resolve(&cli).and_then(|cfg| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build().map_err(runtime)?;
        pool.install(|| run(&cli, &cfg))
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: configuration: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
