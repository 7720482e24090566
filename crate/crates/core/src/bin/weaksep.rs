use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use weaksep::dsp::{read_wav, write_wav, Stft};
use weaksep::eval::{self, extract_notes, mean_std, EvalReport, TranscribeOn};
use weaksep::nn::{Model, ModelKind};
use weaksep::score::{roll_to_text, write_midi, InstrumentMap, PianoRoll};
use weaksep::synth::{read_manifest, write_corpus, CorpusConfig, Dataset, Split};
use weaksep::train::{self, TrainConfig, TrainData, TrainLog};

#[derive(Parser)]
#[command(name = "weaksep", version, about = "Separate and transcribe music trained from mixtures and scores only")]
struct Cli {
    /// TOML file with `[corpus]` and `[train]` tables; flags override it.
    #[arg(long, global = true, env = "WEAKSEP_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a training corpus.
    GenData(GenData),
    /// Run one training step.
    Train(TrainArgs),
    /// Split a mixture WAV into one WAV per instrument.
    Separate(SeparateArgs),
    /// Transcribe a mixture WAV to MIDI or roll text.
    Transcribe(TranscribeArgs),
    /// Score checkpoints on a corpus split.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train: Option<usize>,
    #[arg(long)]
    validation: Option<usize>,
    #[arg(long)]
    test: Option<usize>,
    /// Bass plays whenever piano plays.
    #[arg(long)]
    correlated: bool,
    /// Write into a non-empty directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    step: u8,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Step-1 transcriptor, required by steps 2 and 3.
    #[arg(long)]
    transcriptor: Option<PathBuf>,
    /// Step-2 separator, required by step 3.
    #[arg(long)]
    separator: Option<PathBuf>,
    /// Classifier baseline: step 1 trains the classifier, step 2 uses it as critic.
    #[arg(long)]
    baseline: bool,
    /// Classifier checkpoint for `--baseline --step 2`.
    #[arg(long)]
    classifier: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    no_c_mix: bool,
    #[arg(long)]
    no_h_mix: bool,
    #[arg(long)]
    no_aml: bool,
    #[arg(long)]
    no_atl: bool,
    #[arg(long)]
    exclude_self: bool,
    /// No per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct SeparateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TranscribeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// `.mid` writes MIDI, anything else roll text.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum On {
    Mixture,
    Iso,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Separator checkpoint; repeat for one per seed.
    #[arg(long)]
    separator: Vec<PathBuf>,
    /// Transcriptor checkpoint; repeat for one per seed.
    #[arg(long)]
    transcriptor: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "mixture")]
    on: On,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Directory for `report.txt` and `report.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    corpus: CorpusConfig,
    train: TrainConfig,
}

/// Written next to every command's outputs.
#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config_file: Option<&'a Path>,
    config: serde_json::Value,
    seed: Option<u64>,
    outputs: Vec<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl<E: std::error::Error> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    let Some(path) = path else { return Ok(ConfigFile::default()) };
    let text = fs::read_to_string(path).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
}

fn write_run(dir: &Path, run: &RunManifest<'_>) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("run.json"), serde_json::to_string_pretty(run).expect("run manifest serializes"))?;
    Ok(())
}

fn gen_data(args: GenData, file: ConfigFile, config_file: Option<&Path>) -> Result<()> {
    let mut cfg = file.corpus;
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.train = args.train.unwrap_or(cfg.train);
    cfg.validation = args.validation.unwrap_or(cfg.validation);
    cfg.test = args.test.unwrap_or(cfg.test);
    cfg.generator.correlated |= args.correlated;
    let manifest = write_corpus(&args.out, &cfg, args.force)?;
    eprintln!(
        "wrote {} clips ({} train / {} validation / {} test) to {}",
        manifest.clips.len(),
        cfg.train,
        cfg.validation,
        cfg.test,
        args.out.display()
    );
    write_run(
        &args.out,
        &RunManifest {
            command: "gen-data",
            config_file,
            config: serde_json::to_value(&cfg).expect("config serializes"),
            seed: Some(cfg.seed),
            outputs: vec![args.out.join("manifest.json")],
        },
    )
}

fn require<'a>(path: &'a Option<PathBuf>, msg: &str) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| usage(msg))
}

fn load_model(path: &Path, kind: ModelKind) -> Result<Model> {
    Model::load(path, kind).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn train_cmd(args: TrainArgs, file: ConfigFile, config_file: Option<&Path>) -> Result<()> {
    let mut cfg = file.train;
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.max_epochs = args.epochs.unwrap_or(cfg.max_epochs);
    cfg.batch_size = args.batch_size.unwrap_or(cfg.batch_size);
    cfg.lr = args.lr.unwrap_or(cfg.lr);
    cfg.use_c_mix &= !args.no_c_mix;
    cfg.use_h_mix &= !args.no_h_mix;
    cfg.use_aml &= !args.no_aml;
    cfg.use_atl &= !args.no_atl;
    cfg.exclude_self |= args.exclude_self;
    cfg.validate().map_err(|e| usage(e.to_string()))?;

    let critic = match (args.step, args.baseline) {
        (2, false) => Some(load_model(
            require(&args.transcriptor, "--step 2 needs --transcriptor <checkpoint> from --step 1")?,
            ModelKind::Transcriptor,
        )?),
        (2, true) => Some(load_model(
            require(&args.classifier, "--baseline --step 2 needs --classifier <checkpoint> from --baseline --step 1")?,
            ModelKind::Classifier,
        )?),
        (3, true) => return Err(usage("the baseline has no step 3")),
        (3, false) => Some(load_model(
            require(&args.transcriptor, "--step 3 needs --transcriptor <checkpoint> from --step 1")?,
            ModelKind::Transcriptor,
        )?),
        _ => None,
    };
    let separator = if args.step == 3 {
        Some(load_model(require(&args.separator, "--step 3 needs --separator <checkpoint> from --step 2")?, ModelKind::Separator)?)
    } else {
        None
    };

    if read_manifest(&args.corpus).is_err() {
        return Err(Failure::Runtime(format!(
            "{} is not a corpus; create one with `weaksep gen-data --out {}`",
            args.corpus.display(),
            args.corpus.display()
        )));
    }
    let manifest = read_manifest(&args.corpus)?;
    let data = TrainData {
        instruments: manifest.instruments.clone(),
        train: Dataset::load(&args.corpus, Split::Train, false)?,
        validation: Dataset::load(&args.corpus, Split::Validation, true)?,
    };

    fs::create_dir_all(&args.out)?;
    let tag = if args.baseline { format!("baseline-step{}", args.step) } else { format!("step{}", args.step) };
    let log_path = args.out.join(format!("train-{tag}.jsonl"));
    let mut log = TrainLog::new(Some(Box::new(fs::File::create(&log_path)?)), !args.quiet);
    let mut outputs = vec![log_path];
    let mut save = |model: &Model, name: &str| -> Result<()> {
        let path = args.out.join(name);
        model.save(&path)?;
        eprintln!("saved {}", path.display());
        outputs.push(path);
        Ok(())
    };
    match (args.step, args.baseline) {
        (1, false) => save(&train::run_step1(&data, &cfg, &mut log)?.model, "transcriptor.ckpt")?,
        (1, true) => save(&train::run_classifier(&data, &cfg, &mut log)?.model, "classifier.ckpt")?,
        (2, false) => save(&train::run_step2(&data, &cfg, critic.as_ref().unwrap(), &mut log)?.model, "separator.ckpt")?,
        (2, true) => {
            save(&train::run_baseline(&data, &cfg, critic.as_ref().unwrap(), &mut log)?.model, "baseline-separator.ckpt")?
        }
        _ => {
            let out = train::run_step3(&data, &cfg, critic.as_ref().unwrap(), separator.as_ref().unwrap(), &mut log)?;
            save(&out.transcriptor, "transcriptor-joint.ckpt")?;
            save(&out.separator, "separator-joint.ckpt")?;
        }
    }
    write_run(
        &args.out,
        &RunManifest {
            command: "train",
            config_file,
            config: serde_json::json!({
                "step": args.step,
                "baseline": args.baseline,
                "corpus": args.corpus,
                "train": cfg,
            }),
            seed: Some(cfg.seed),
            outputs,
        },
    )
}

fn separate_cmd(args: SeparateArgs) -> Result<()> {
    let model = load_model(&args.checkpoint, ModelKind::Separator)?;
    let mixture = read_wav(&args.input)?;
    let stems = eval::separate_waveform(&Stft::new(), &model, &mixture)?;
    fs::create_dir_all(&args.out)?;
    let mut outputs = Vec::new();
    for (name, stem) in model.instruments().iter().zip(&stems) {
        let path = args.out.join(format!("{name}.wav"));
        write_wav(&path, stem)?;
        println!("{}", path.display());
        outputs.push(path);
    }
    write_run(
        &args.out,
        &RunManifest {
            command: "separate",
            config_file: None,
            config: serde_json::json!({ "checkpoint": args.checkpoint, "input": args.input }),
            seed: None,
            outputs,
        },
    )
}

fn transcribe_cmd(args: TranscribeArgs) -> Result<()> {
    if !(args.threshold > 0.0 && args.threshold < 1.0) {
        return Err(usage("--threshold must lie in (0, 1)"));
    }
    let model = load_model(&args.checkpoint, ModelKind::Transcriptor)?;
    let spec = Stft::new().analyze(&read_wav(&args.input)?)?;
    let p = model.predict(&spec.magnitude)?;
    let mut roll = PianoRoll::new(model.num_instruments(), spec.frames());
    for ev in extract_notes(&p, args.threshold) {
        roll.add_note(ev.instrument, ev.note, ev.onset, ev.offset)?;
    }
    let midi = matches!(args.out.extension().and_then(|e| e.to_str()), Some("mid" | "midi"));
    if midi {
        fs::write(&args.out, write_midi(&roll, &InstrumentMap::default())?)?;
    } else {
        fs::write(&args.out, roll_to_text(&roll))?;
    }
    println!("{} notes -> {}", roll.note_events().len(), args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct Aggregate {
    metric: String,
    mean: f64,
    std: f64,
    values: Vec<f64>,
}

fn aggregate(metric: &str, values: Vec<f64>) -> Aggregate {
    let (mean, std) = mean_std(&values);
    Aggregate { metric: metric.into(), mean, std, values }
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    if args.separator.is_empty() && args.transcriptor.is_empty() {
        return Err(usage("pass at least one --separator or --transcriptor checkpoint"));
    }
    let n = args.separator.len().max(args.transcriptor.len());
    if !args.separator.is_empty() && !args.transcriptor.is_empty() && args.separator.len() != args.transcriptor.len() {
        return Err(usage("give the same number of --separator and --transcriptor checkpoints"));
    }
    let needs_audio = !args.separator.is_empty() || matches!(args.on, On::Iso);
    let data = Dataset::load(&args.corpus, args.split, needs_audio)?;
    let on = match args.on {
        On::Mixture => TranscribeOn::Mixture,
        On::Iso => TranscribeOn::Iso,
    };
    let mut reports = Vec::new();
    for k in 0..n {
        let separation = match args.separator.get(k) {
            Some(p) => Some(eval::separation_report(&load_model(p, ModelKind::Separator)?, &data)?),
            None => None,
        };
        let transcription = match args.transcriptor.get(k) {
            Some(p) => Some(eval::transcription_report(&load_model(p, ModelKind::Transcriptor)?, &data, on, args.threshold)?),
            None => None,
        };
        let config = serde_json::json!({
            "corpus": args.corpus,
            "split": args.split.name(),
            "separator": args.separator.get(k),
            "transcriptor": args.transcriptor.get(k),
            "threshold": args.threshold,
        });
        reports.push(EvalReport { config, separation, transcription });
    }

    let mut text = String::new();
    for r in &reports {
        text.push_str(&r.to_table());
        text.push('\n');
    }
    let mut summary = Vec::new();
    if n > 1 {
        let collect = |f: &dyn Fn(&EvalReport) -> Option<f64>| reports.iter().filter_map(f).collect::<Vec<_>>();
        let metrics: [(&str, Box<dyn Fn(&EvalReport) -> Option<f64>>); 4] = [
            ("average SI-SDR (dB)", Box::new(|r| r.separation.as_ref()?.average)),
            ("SI-SDR gain over mixture (dB)", Box::new(|r| r.separation.as_ref()?.improvement())),
            ("average note accuracy", Box::new(|r| Some(r.transcription.as_ref()?.average_note_accuracy))),
            ("frame F1", Box::new(|r| Some(r.transcription.as_ref()?.frame_f1_all))),
        ];
        for (name, f) in &metrics {
            let v = collect(f.as_ref());
            if !v.is_empty() {
                summary.push(aggregate(name, v));
            }
        }
        text.push_str(&format!("over {n} checkpoints\n"));
        for a in &summary {
            text.push_str(&format!("  {:<32} {:>8.3} ± {:.3}\n", a.metric, a.mean, a.std));
        }
    }
    print!("{text}");
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.txt"), &text)?;
        let json = serde_json::json!({ "reports": reports, "summary": summary });
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(&json).expect("report serializes"))?;
        write_run(
            dir,
            &RunManifest {
                command: "eval",
                config_file: None,
                config: serde_json::json!({ "corpus": args.corpus, "split": args.split.name() }),
                seed: None,
                outputs: vec![dir.join("report.txt"), dir.join("report.json")],
            },
        )?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config_path = cli.config.as_deref();
    match cli.command {
        Command::GenData(a) => gen_data(a, load_config(config_path)?, config_path),
        Command::Train(a) => train_cmd(a, load_config(config_path)?, config_path),
        Command::Separate(a) => separate_cmd(a),
        Command::Transcribe(a) => transcribe_cmd(a),
        Command::Eval(a) => eval_cmd(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
