use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde_json::json;

use mosare::dataio::RawSynth;
use mosare::evaluation::{
    ablation_table, export_attention, metric_table, run_ablation, run_cv, run_scenarios, scenario_table, Scores,
};
use mosare::training::write_json;
use mosare::{generate_synthetic, ingest, train_dataset, write_dataset, Checkpoint, Dataset, Error, RunConfig, SyntheticSpec};

const RUNS_ENV: &str = "MOSARE_RUNS_DIR";
const DEFAULT_RUNS_DIR: &str = "runs";

#[derive(Parser, Debug)]
#[command(name = "mosare", version, about = "Multimodal mixture-of-experts classifier: data, training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Flat `key = value` config file (`#` starts a comment).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted override, e.g. `--set fusion.k_loc=8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run directory. Defaults to `<runs root>/<timestamp>-<hash>-<command>`,
    /// where the root is $MOSARE_RUNS_DIR or `./runs`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct DataArg {
    /// Dataset directory (manifest.json plus samples/).
    #[arg(long)]
    data: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 40)]
        per_class: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 16)]
        c: usize,
        #[arg(long, default_value_t = 16)]
        n_h: usize,
        #[arg(long, default_value_t = 4.0)]
        separation: f64,
        #[arg(long, default_value_t = 0.5)]
        correlation: f64,
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        /// Also emit raw inputs (patches, RNA tokens, sentences).
        #[arg(long)]
        raw: bool,
        /// Dataset destination; defaults to `<run dir>/dataset`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Validate a dataset directory and summarize it.
    IngestCheck {
        #[command(flatten)]
        data: DataArg,
        #[command(flatten)]
        common: Common,
    },
    /// Train one model with `train.holdout_fold` held out.
    Train {
        #[command(flatten)]
        data: DataArg,
        #[command(flatten)]
        common: Common,
    },
    /// Cross-validate, or score a trained checkpoint on a dataset.
    Eval {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Missing-modality scenarios at several masking fractions.
    Scenarios {
        #[command(flatten)]
        data: DataArg,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5")]
        fractions: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Component ablations on complete and incomplete data.
    Ablate {
        #[command(flatten)]
        data: DataArg,
        #[command(flatten)]
        common: Common,
    },
    /// Export attention weights, selections and heatmaps.
    ExportAttn {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::IngestCheck { .. } => "ingest-check",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Scenarios { .. } => "scenarios",
            Command::Ablate { .. } => "ablate",
            Command::ExportAttn { .. } => "export-attn",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Synth { common, .. }
            | Command::IngestCheck { common, .. }
            | Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Scenarios { common, .. }
            | Command::Ablate { common, .. }
            | Command::ExportAttn { common, .. } => common,
        }
    }
}

fn resolve_config(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        cfg.apply_kv_text(&text)?;
    }
    for o in &common.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::config(o.as_str(), "override must look like key=value"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_dir(common: &Common, tag: &str, command: &str) -> Result<PathBuf, Error> {
    let dir = match &common.out_dir {
        Some(d) => d.clone(),
        None => {
            let root = std::env::var_os(RUNS_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_RUNS_DIR));
            let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
            let base = root.join(format!("{stamp}-{tag}-{command}"));
            let mut dir = base.clone();
            let mut n = 1;
            while dir.exists() {
                dir = PathBuf::from(format!("{}-{n}", base.display()));
                n += 1;
            }
            dir
        }
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

/// Copies log lines to stderr and to `run.log` in the run directory.
struct Tee(Arc<Mutex<Option<fs::File>>>);

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        std::io::stderr().write_all(buf)?;
        if let Some(f) = self.0.lock().expect("log file lock").as_mut() {
            f.write_all(buf)?;
        }
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        std::io::stderr().flush()
    }
}

fn existing(path: &Path, field: &str) -> Result<(), Error> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::config(field, format!("{} does not exist", path.display())))
    }
}

fn load(data: &DataArg) -> Result<Dataset, Error> {
    existing(&data.data, "--data")?;
    let ing = ingest(&data.data)?;
    for w in &ing.warnings {
        warn!("{w}");
    }
    Ok(ing.dataset)
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn execute(command: &Command, cfg: &RunConfig, dir: &Path) -> Result<(), Error> {
    match command {
        Command::Synth {
            seed,
            classes,
            per_class,
            dim,
            c,
            n_h,
            separation,
            correlation,
            noise,
            raw,
            out,
            ..
        } => {
            let spec = SyntheticSpec {
                n_classes: *classes,
                samples_per_class: *per_class,
                dim: *dim,
                c: *c,
                n_h: *n_h,
                class_separation: *separation,
                modality_correlation: *correlation,
                noise_std: *noise,
                seed: *seed,
                raw: raw.then(|| RawSynth {
                    n_patches: 64,
                    n_tokens: 8,
                    d_token: 4,
                    n_sentences: 2 * *c,
                }),
            };
            write_json(&dir.join("synth_spec.json"), &spec)?;
            let ds = generate_synthetic(&spec)?;
            let dest = out.clone().unwrap_or_else(|| dir.join("dataset"));
            write_dataset(&ds, &dest)?;
            info!("wrote {} samples to {}", ds.records.len(), dest.display());
        }
        Command::IngestCheck { data, .. } => {
            existing(&data.data, "--data")?;
            let ing = ingest(&data.data)?;
            let m = &ing.dataset.manifest;
            let complete = ing.dataset.records.iter().filter(|r| r.is_complete()).count();
            let summary = json!({
                "n_samples": m.n_samples,
                "n_classes": m.n_classes,
                "D": m.dim,
                "C": m.c,
                "N_h": m.n_h,
                "complete_samples": complete,
                "warnings": ing.warnings,
            });
            write_json(&dir.join("ingest.json"), &summary)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Train { data, .. } => {
            let ds = load(data)?;
            let out = train_dataset(&ds, cfg)?;
            write_text(&dir.join("metrics.jsonl"), &out.log_jsonl()?)?;
            out.checkpoint().save(&dir.join("checkpoint.bin"))?;
            if let Some(last) = out.log.iter().rev().find(|r| r.split == "holdout") {
                info!("holdout epoch {}: auc {:?} f1 {:?} acc {:?}", last.epoch, last.auc, last.f1, last.acc);
            }
        }
        Command::Eval { data, checkpoint, .. } => {
            let ds = load(data)?;
            match checkpoint {
                Some(path) => {
                    existing(path, "--checkpoint")?;
                    let model = Checkpoint::load(path)?.model()?;
                    let probs = model.predict(&model.prepare_all(&ds.records)?);
                    let scores = Scores::of(probs.view(), &ds.labels());
                    write_json(&dir.join("scores.json"), &scores)?;
                    println!("{}", serde_json::to_string_pretty(&scores)?);
                }
                None => {
                    let report = run_cv(&ds, cfg)?;
                    write_json(&dir.join("report.json"), &report)?;
                    let table = metric_table(&report);
                    write_text(&dir.join("report.txt"), &table)?;
                    print!("{table}");
                }
            }
        }
        Command::Scenarios { data, fractions, .. } => {
            let ds = load(data)?;
            let rows = run_scenarios(&ds, cfg, fractions)?;
            write_json(&dir.join("scenarios.json"), &rows)?;
            let table = scenario_table(&rows);
            write_text(&dir.join("scenarios.txt"), &table)?;
            print!("{table}");
        }
        Command::Ablate { data, .. } => {
            let ds = load(data)?;
            let tables = run_ablation(&ds, cfg)?;
            write_json(&dir.join("ablation.json"), &tables)?;
            let table = ablation_table(&tables);
            write_text(&dir.join("ablation.txt"), &table)?;
            print!("{table}");
        }
        Command::ExportAttn { data, checkpoint, .. } => {
            let ds = load(data)?;
            existing(checkpoint, "--checkpoint")?;
            let ck = Checkpoint::load(checkpoint)?;
            let summary = export_attention(&ck, &ds.records, &dir.join("attention"))?;
            write_json(&dir.join("export.json"), &summary)?;
            info!("exported {} records, {} heatmaps", summary.records, summary.images.len());
        }
    }
    Ok(())
}

fn error_json(e: &Error) -> serde_json::Value {
    let mut chain = Vec::new();
    let mut src: Option<&dyn std::error::Error> = std::error::Error::source(e);
    while let Some(s) = src {
        chain.push(s.to_string());
        src = s.source();
    }
    json!({
        "kind": if e.is_user_error() { "user" } else { "runtime" },
        "message": e.to_string(),
        "causes": chain,
        "debug": format!("{e:?}"),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let log_file = Arc::new(Mutex::new(None));
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Pipe(Box::new(Tee(log_file.clone()))))
        .init();

    let command = cli.command;
    let common = command.common().clone();
    let cfg = resolve_config(&common);
    let tag = cfg.as_ref().map(|c| c.hash()).unwrap_or_else(|_| "invalid".into());
    let dir = match run_dir(&common, &tag, command.name()) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let log_path = dir.join("run.log");
    if let Ok(f) = fs::File::create(&log_path) {
        *log_file.lock().expect("log file lock") = Some(f);
    }
    let result = cfg.and_then(|cfg| {
        write_text(&dir.join("config.txt"), &cfg.to_kv_text())?;
        write_json(
            &dir.join("invocation.json"),
            &json!({ "command": command.name(), "args": std::env::args().collect::<Vec<_>>() }),
        )?;
        info!("run directory {}", dir.display());
        execute(&command, &cfg, &dir)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let _ = write_json(&dir.join("error.json"), &error_json(&e));
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}
