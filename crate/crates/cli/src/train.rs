use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use ndreg::training::{
    load_checkpoint, resolve, save_checkpoint, train_until, CifarSource, DataSpec, EpochRange, ExperimentConfig,
    NeuralSource, TrainState,
};
use serde_json::json;

use crate::manifest::{digest, FileDigest, RunManifest, Status};
use crate::{data_path, CliResult};

pub const CHECKPOINT: &str = "checkpoint.ndck";
pub const METRICS: &str = "metrics.jsonl";

#[derive(Args)]
pub struct TrainArgs {
    /// Flat `key = value` config document.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// One run per listed λ.
    #[arg(long, num_args = 1..)]
    lambda: Vec<f64>,
    /// Run seeds 0..N.
    #[arg(long, conflicts_with = "seed")]
    seeds: Option<u64>,
    /// Run exactly these seeds.
    #[arg(long, num_args = 1..)]
    seed: Vec<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Epochs `a..b` in which the DCCA term is active.
    #[arg(long)]
    dcca_epochs: Option<String>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Replace an existing run directory written by a different config.
    #[arg(long)]
    force: bool,
}

/// Merged config: defaults, then file, then `--set`, then explicit flags.
pub fn base_config(a: &TrainArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(p) = &a.config {
        let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
        cfg.apply_document(&text).map_err(|e| format!("{}: {e}", p.display()))?;
    }
    for kv in &a.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| format!("override '{kv}' is not key=value"))?;
        cfg.set(k, v)?;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(r) = &a.dcca_epochs {
        cfg.dcca_active_epochs = Some(EpochRange::parse(r)?);
    }
    resolve_paths(&mut cfg.data);
    Ok(cfg)
}

fn resolve_paths(data: &mut DataSpec) {
    if let CifarSource::Dir { path, .. } = &mut data.cifar {
        *path = data_path(path);
    }
    if let NeuralSource::Prepared { population, stimuli } = &mut data.neural {
        *population = data_path(population);
        *stimuli = data_path(stimuli);
    }
}

fn input_digests(data: &DataSpec) -> CliResult<Vec<FileDigest>> {
    let mut files = Vec::new();
    if let CifarSource::Dir { path, .. } = &data.cifar {
        for name in ["train.bin", "test.bin"] {
            let p = path.join(name);
            if !p.exists() {
                return Err(format!("missing data file {}", p.display()).into());
            }
            files.push(p);
        }
    }
    if let NeuralSource::Prepared { population, stimuli } = &data.neural {
        for p in [population.clone(), ndreg::data::PseudoPopulation::sidecar(population), stimuli.clone()] {
            if !p.exists() {
                return Err(format!("missing data file {}", p.display()).into());
            }
            files.push(p);
        }
    }
    files.iter().map(|p| digest(p)).collect()
}

pub fn run_dir(out: &Path, lambda: f64, seed: u64) -> PathBuf {
    out.join(format!("lambda_{lambda}")).join(format!("seed_{seed}"))
}

pub fn run(a: &TrainArgs) -> CliResult<()> {
    let base = base_config(a)?;
    let lambdas = if a.lambda.is_empty() { vec![base.lambda] } else { a.lambda.clone() };
    let seeds: Vec<u64> = match (a.seeds, a.seed.is_empty()) {
        (Some(n), _) => (0..n).collect(),
        (None, false) => a.seed.clone(),
        (None, true) => vec![base.seed],
    };
    let inputs = input_digests(&base.data)?;
    let mut done = 0;
    for &lambda in &lambdas {
        for &seed in &seeds {
            let mut cfg = base.clone();
            cfg.lambda = lambda;
            cfg.seed = seed;
            cfg.validate()?;
            let dir = run_dir(&a.out, lambda, seed);
            train_one(&cfg, &dir, inputs.clone(), a.force)?;
            done += 1;
        }
    }
    println!("{done} run(s) under {}", a.out.display());
    Ok(())
}

fn train_one(cfg: &ExperimentConfig, dir: &Path, inputs: Vec<FileDigest>, force: bool) -> CliResult<()> {
    let hash = cfg.identity_hash();
    let config = serde_json::to_value(cfg)?;
    let ck_path = dir.join(CHECKPOINT);
    let metrics_path = dir.join(METRICS);
    let mut resume = false;
    if let Some(m) = RunManifest::load(dir)? {
        if m.config_hash != hash {
            if !force {
                return Err(format!(
                    "{} holds a run with config {} but this run has config {}; \
                     use another --out or --force to replace it",
                    dir.display(),
                    &m.config_hash[..12],
                    &hash[..12]
                )
                .into());
            }
            fs::remove_dir_all(dir)?;
        } else if m.status == Status::Complete && m.config == config && m.outputs_intact() {
            println!("{}: already complete, nothing to do", dir.display());
            return Ok(());
        } else {
            resume = ck_path.exists();
        }
    }
    fs::create_dir_all(dir)?;

    let data = resolve(&cfg.data, cfg.seed)?;
    let mut state = if resume {
        let s = load_checkpoint(&ck_path, cfg)?;
        log::info!("{}: resuming after epoch {}", dir.display(), s.epoch);
        s
    } else {
        TrainState::for_datasets(cfg, &data)?
    };
    let mut manifest = RunManifest::new("train", config, hash, inputs);
    manifest.save(dir)?;

    let mut metrics = File::create(&metrics_path)?;
    for m in &state.history {
        writeln!(metrics, "{}", serde_json::to_string(m)?)?;
    }
    drop(metrics);

    train_until(&mut state, cfg, &data, |s, m| {
        let mut f = OpenOptions::new().append(true).open(&metrics_path)?;
        writeln!(f, "{}", serde_json::to_string(m)?)?;
        save_checkpoint(&ck_path, cfg, s)?;
        log::info!(
            "λ={} seed={} epoch {}: val_acc {:.4} super {:.4} ce {} corr {}",
            m.lambda,
            m.seed,
            m.epoch,
            m.val_acc,
            m.val_superclass_acc,
            m.ce_loss.map_or("-".into(), |v| format!("{v:.4}")),
            m.mean_cca_corr.map_or("-".into(), |v| format!("{v:.4}")),
        );
        Ok(())
    })?;
    if state.epoch == 0 || !ck_path.exists() {
        save_checkpoint(&ck_path, cfg, &state)?;
    }
    let last = state.history.last().cloned();
    manifest.complete(&[ck_path, metrics_path], json!({ "final": last, "epochs": state.epoch }))?;
    manifest.save(dir)?;
    Ok(())
}
