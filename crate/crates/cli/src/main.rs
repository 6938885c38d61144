mod args;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;

use honestcalib::config::{ReportFormat, RunConfig};
use honestcalib::metrics::{evaluate, ReportOptions};
use honestcalib::mining::{mine_triplets, triplet_line};
use honestcalib::policy::{decide, decision_line};
use honestcalib::records::{load_records, write_records, PredictionRecord, RecordError};
use honestcalib::synth::{generate, SynthConfig};
use honestcalib::training::{
    apply_temperature, gradcheck, load_checkpoint, loss_history_csv, save_checkpoint, train, Checkpoint, TrainingError,
};

use args::{Cli, Command, Format, Io, MiningFlags};

const THREADS_VAR: &str = "HONESTCALIB_THREADS";

/// Exit 2 for bad input or usage, 1 for everything else.
#[derive(Debug)]
enum Failure {
    Validation(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Internal(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Internal(m) => m,
        }
    }
}

impl From<RecordError> for Failure {
    fn from(e: RecordError) -> Self {
        match &e {
            RecordError::Io { source, .. } if source.kind() != io::ErrorKind::NotFound => {
                Failure::Internal(e.to_string())
            }
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<TrainingError> for Failure {
    fn from(e: TrainingError) -> Self {
        match e {
            TrainingError::Diverged { .. } => Failure::Internal(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

fn validation(e: impl ToString) -> Failure {
    Failure::Validation(e.to_string())
}

fn internal(e: impl ToString) -> Failure {
    Failure::Internal(e.to_string())
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| validation(format!("{THREADS_VAR} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(internal)
}

fn load_config(io: &Io) -> Result<RunConfig, Failure> {
    let mut config = match &io.config {
        Some(path) => RunConfig::load(path).map_err(validation)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &io.input {
        config.input = Some(p.display().to_string());
    }
    if let Some(p) = &io.out {
        config.output = Some(p.display().to_string());
    }
    Ok(config)
}

fn apply_mining_flags(config: &mut RunConfig, m: &MiningFlags) {
    let p = &mut config.params;
    if let Some(v) = m.delta {
        p.delta = v;
    }
    if let Some(v) = m.tau1 {
        p.tau1 = v;
    }
    if let Some(v) = m.tau2 {
        p.tau2 = v;
    }
    if let Some(v) = m.strict_alignment {
        p.strict_alignment = v;
    }
    if let Some(v) = m.use_gold_positive {
        p.use_gold_positive = v;
    }
    if let Some(v) = m.hard_negatives {
        p.hard_negatives = v;
    }
}

fn input_records(config: &RunConfig) -> Result<Vec<PredictionRecord>, Failure> {
    let path = config
        .input
        .as_ref()
        .ok_or_else(|| validation("no input: pass --input or set `input` in the config"))?;
    Ok(load_records(path)?)
}

/// Writes to `path`, or stdout when `None`.
fn emit(path: Option<&str>, write: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), Failure> {
    let result = match path {
        Some(p) => {
            let file = File::create(p).map_err(|e| internal(format!("{p}: {e}")))?;
            let mut w = BufWriter::new(file);
            write(&mut w).and_then(|_| w.flush())
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            write(&mut w).and_then(|_| w.flush())
        }
    };
    match result {
        // a closed downstream pipe (`| head`) is not an error
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        other => other.map_err(internal),
    }
}

fn with_temperature(
    records: Vec<PredictionRecord>,
    checkpoint: Option<&Path>,
) -> Result<Vec<PredictionRecord>, Failure> {
    let Some(path) = checkpoint else {
        return Ok(records);
    };
    let ck = load_checkpoint(path)?;
    Ok(records
        .into_iter()
        .map(|r| PredictionRecord {
            distribution: apply_temperature(&r.distribution, ck.log_t),
            ..r
        })
        .collect())
}

fn validate(config: &RunConfig) -> Result<(), Failure> {
    config.params.validate().map_err(validation)
}

fn metrics(a: args::MetricsArgs) -> Result<(), Failure> {
    let mut config = load_config(&a.io)?;
    let p = &mut config.params;
    if let Some(v) = a.c_min {
        p.c_min = v;
    }
    if let Some(v) = a.u_max_frac {
        p.u_max_frac = v;
    }
    if let Some(v) = a.iou_threshold {
        p.iou_threshold = v;
    }
    if let Some(f) = a.format {
        config.format = match f {
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
        };
    }
    if let Some(ck) = &a.checkpoint {
        config.checkpoint = Some(ck.display().to_string());
    }
    validate(&config)?;
    let records = input_records(&config)?;
    let records = with_temperature(records, config.checkpoint.as_deref().map(Path::new))?;
    let opts = ReportOptions {
        c_min: config.params.c_min,
        u_max_frac: config.params.u_max_frac,
        iou_threshold: config.params.iou_threshold,
    };
    let report = evaluate(&records, &opts).map_err(validation)?;
    let text = match config.format {
        ReportFormat::Json => report.to_json() + "\n",
        ReportFormat::Csv => report.to_csv(),
    };
    emit(config.output.as_deref(), |w| w.write_all(text.as_bytes()))
}

fn mine(a: args::MineArgs) -> Result<(), Failure> {
    let mut config = load_config(&a.io)?;
    apply_mining_flags(&mut config, &a.mining);
    if let Some(s) = a.seed {
        config.params.seed = s;
    }
    validate(&config)?;
    let records = input_records(&config)?;
    let triplets = mine_triplets(&records, &config.params, config.params.seed).map_err(validation)?;
    emit(config.output.as_deref(), |w| {
        for t in &triplets {
            writeln!(w, "{}", triplet_line(t))?;
        }
        Ok(())
    })
}

fn default_loss_path(checkpoint: &str) -> String {
    let path = PathBuf::from(checkpoint);
    path.with_extension("loss.csv").display().to_string()
}

fn train_cmd(a: args::TrainArgs) -> Result<(), Failure> {
    let mut config = load_config(&a.io)?;
    apply_mining_flags(&mut config, &a.mining);
    let p = &mut config.params;
    if let Some(v) = a.epochs {
        p.epochs = v;
    }
    if let Some(v) = a.lr {
        p.learning_rate = v;
    }
    if let Some(v) = a.seed {
        p.seed = v;
    }
    if let Some(v) = a.batch_size {
        p.batch_size = v;
    }
    if let Some(v) = a.projection_dim {
        p.projection_dim = v;
    }
    if let Some(v) = a.calibrate_temperature {
        p.calibrate_temperature = v;
    }
    if let Some(path) = &a.loss_history {
        config.loss_history = Some(path.display().to_string());
    }
    validate(&config)?;
    let out = config
        .output
        .clone()
        .ok_or_else(|| validation("no checkpoint path: pass --out or set `output` in the config"))?;
    let loss_path = config.loss_history.clone().unwrap_or_else(|| default_loss_path(&out));
    let records = input_records(&config)?;
    let state = train(&records, &config.params)?;
    save_checkpoint(&out, &Checkpoint::new(config, &state)).map_err(internal)?;
    let csv = loss_history_csv(&state.loss_history);
    emit(Some(&loss_path), |w| w.write_all(csv.as_bytes()))
}

fn infer(a: args::InferArgs) -> Result<(), Failure> {
    let mut config = load_config(&a.io)?;
    if let Some(v) = a.c_min {
        config.params.c_min = v;
    }
    if let Some(v) = a.u_max_frac {
        config.params.u_max_frac = v;
    }
    if let Some(ck) = &a.checkpoint {
        config.checkpoint = Some(ck.display().to_string());
    }
    validate(&config)?;
    let records = input_records(&config)?;
    let records = with_temperature(records, config.checkpoint.as_deref().map(Path::new))?;
    let mut lines = Vec::with_capacity(records.len());
    for r in &records {
        let d = decide(r, config.params.c_min, config.params.u_max_frac).map_err(validation)?;
        lines.push(decision_line(&r.record_id, &d));
    }
    emit(config.output.as_deref(), |w| {
        for l in &lines {
            writeln!(w, "{l}")?;
        }
        Ok(())
    })
}

fn synth(a: args::SynthArgs) -> Result<(), Failure> {
    let cfg = SynthConfig {
        n_records: a.n_records,
        vocab_size: a.vocab_size,
        calib_rho: a.calib_rho,
        d_in: a.d_in,
        d_tok: a.d_tok,
        noise_sigma: a.noise_sigma,
        seed: a.seed,
        base_accuracy: a.base_accuracy,
        base_temperature: a.base_temperature,
        peaked_frac: a.peaked_frac,
    };
    let records = generate(&cfg).map_err(validation)?;
    let out = a.out.as_ref().map(|p| p.display().to_string());
    emit(out.as_deref(), |w| write_records(w, &records))
}

fn gradcheck_cmd(a: args::GradcheckArgs) -> Result<(), Failure> {
    let report = gradcheck(a.seed, a.configs).map_err(internal)?;
    println!("{}", report.summary());
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Internal("gradient check failed".into()))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Metrics(a) => metrics(a),
        Command::Mine(a) => mine(a),
        Command::Train(a) => train_cmd(a),
        Command::Infer(a) => infer(a),
        Command::Synth(a) => synth(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
