use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use ndreg::eval::{evaluate, robustness_sweep, SweepPoint};
use ndreg::training::{read_checkpoint, resolve_labeled, Checkpoint, EpochMetrics, ExperimentConfig, NeuralSource};
use serde_json::json;

use crate::manifest::{digest, RunManifest, Status};
use crate::train::{CHECKPOINT, METRICS};
use crate::CliResult;

#[derive(Args)]
pub struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    run: PathBuf,
}

#[derive(Args)]
pub struct AttackArgs {
    #[arg(long)]
    run: PathBuf,
    /// Ascending FGSM strengths in pixel units, starting at 0.
    #[arg(long, value_delimiter = ',', default_value = "0,0.002,0.005,0.01,0.02,0.05,0.1")]
    strengths: Vec<f64>,
}

#[derive(Args)]
pub struct SummarizeArgs {
    /// Directory searched recursively for finished runs.
    #[arg(long, default_value = "runs")]
    runs: PathBuf,
    #[arg(long, default_value = "summary")]
    out: PathBuf,
}

/// Loads a run's checkpoint after checking it against the run manifest.
fn open_run(dir: &Path) -> CliResult<(RunManifest, Checkpoint)> {
    let manifest = RunManifest::load(dir)?.ok_or_else(|| format!("{} has no manifest", dir.display()))?;
    let ck_path = dir.join(CHECKPOINT);
    if !ck_path.exists() {
        return Err(format!("missing checkpoint {}", ck_path.display()).into());
    }
    let ck = read_checkpoint(&ck_path)?;
    if ck.config_hash != manifest.config_hash {
        return Err(format!(
            "checkpoint {} has config {} but the manifest records {}; refusing to report on a mismatched run",
            ck_path.display(),
            &ck.config_hash[..12],
            &manifest.config_hash[..12]
        )
        .into());
    }
    Ok((manifest, ck))
}

/// Adds report files to the run's manifest so every output stays traceable.
fn record_outputs(dir: &Path, mut manifest: RunManifest, files: &[PathBuf]) -> CliResult<()> {
    for f in files {
        let d = digest(f)?;
        manifest.outputs.retain(|o| o.path != d.path);
        manifest.outputs.push(d);
    }
    manifest.save(dir)
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    let (manifest, ck) = open_run(&a.run)?;
    let (_, test) = resolve_labeled(&ck.config.data)?;
    let report = evaluate(&ck.state.cnn, &test)?;
    let path = a.run.join("eval.json");
    let body = json!({
        "config_hash": ck.config_hash,
        "epoch": ck.state.epoch,
        "report": report,
    });
    fs::write(&path, serde_json::to_vec_pretty(&body)?)?;
    record_outputs(&a.run, manifest, &[path])?;
    println!(
        "{}: exact {:.4} super {:.4} over {} images",
        a.run.display(),
        report.exact_acc,
        report.super_acc,
        report.n
    );
    Ok(())
}

pub fn attack(a: &AttackArgs) -> CliResult<()> {
    let (manifest, mut ck) = open_run(&a.run)?;
    let (_, test) = resolve_labeled(&ck.config.data)?;
    let curve = robustness_sweep(&mut ck.state.cnn, &test, &a.strengths)?;
    let csv_path = a.run.join("attack.csv");
    let mut csv = String::from("epsilon,exact_acc,super_acc\n");
    for p in &curve {
        writeln!(csv, "{},{},{}", p.epsilon, p.exact_acc, p.super_acc)?;
    }
    fs::write(&csv_path, csv)?;
    let json_path = a.run.join("attack.json");
    fs::write(
        &json_path,
        serde_json::to_vec_pretty(&json!({ "config_hash": ck.config_hash, "curve": curve }))?,
    )?;
    record_outputs(&a.run, manifest, &[csv_path, json_path])?;
    for p in &curve {
        println!("eps {:<8} exact {:.4} super {:.4}", p.epsilon, p.exact_acc, p.super_acc);
    }
    Ok(())
}

struct RunData {
    lambda: f64,
    variant: String,
    metrics: Vec<EpochMetrics>,
    attack: Vec<SweepPoint>,
}

fn find_runs(root: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    if root.join(crate::manifest::FILE_NAME).exists() {
        out.push(root.to_path_buf());
    }
    for entry in fs::read_dir(root)? {
        let p = entry?.path();
        if p.is_dir() {
            find_runs(&p, out)?;
        }
    }
    Ok(())
}

/// Runs that differ only in seed share a variant label.
fn variant(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.seed = 0;
    c.lambda = 0.0;
    let neural = match &c.data.neural {
        NeuralSource::None => "none".to_string(),
        NeuralSource::Prepared { population, .. } => format!(
            "prepared:{}",
            population.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
        ),
        NeuralSource::Synthetic { surrogate, .. } => match surrogate {
            Some(k) => format!("synthetic:{}", k.name()),
            None => "synthetic".into(),
        },
    };
    format!("{neural}@{}", &c.identity_hash()[..8])
}

/// Mean and sample standard deviation.
fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

pub fn summarize(a: &SummarizeArgs) -> CliResult<()> {
    let mut dirs = Vec::new();
    find_runs(&a.runs, &mut dirs)?;
    dirs.sort();
    let mut runs = Vec::new();
    for dir in dirs {
        let Some(m) = RunManifest::load(&dir)? else { continue };
        if m.command != "train" || m.status != Status::Complete {
            continue;
        }
        let cfg: ExperimentConfig = serde_json::from_value(m.config.clone())?;
        let metrics = fs::read_to_string(dir.join(METRICS))?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<EpochMetrics>, _>>()?;
        let attack = match fs::read(dir.join("attack.json")) {
            Ok(b) => serde_json::from_value(serde_json::from_slice::<serde_json::Value>(&b)?["curve"].clone())?,
            Err(_) => Vec::new(),
        };
        runs.push(RunData { lambda: cfg.lambda, variant: variant(&cfg), metrics, attack });
    }
    if runs.is_empty() {
        return Err(format!("no finished runs under {}", a.runs.display()).into());
    }

    type Key = (String, String);
    let key = |r: &RunData| (format!("{}", r.lambda), r.variant.clone());
    let mut per_epoch: BTreeMap<(Key, usize), Vec<(f64, f64)>> = BTreeMap::new();
    let mut per_eps: BTreeMap<(Key, u64), Vec<f64>> = BTreeMap::new();
    let mut finals: BTreeMap<Key, Vec<(f64, f64)>> = BTreeMap::new();
    for r in &runs {
        for m in &r.metrics {
            per_epoch.entry((key(r), m.epoch)).or_default().push((m.val_acc, m.val_superclass_acc));
        }
        if let Some(m) = r.metrics.last() {
            finals.entry(key(r)).or_default().push((m.val_acc, m.val_superclass_acc));
        }
        for p in &r.attack {
            per_eps.entry((key(r), p.epsilon.to_bits())).or_default().push(p.exact_acc);
        }
    }

    fs::create_dir_all(&a.out)?;
    let mut acc = String::from("lambda,variant,epoch,n,mean,std,super_mean,super_std\n");
    for (((lambda, variant), epoch), v) in &per_epoch {
        let (m, s) = mean_std(&v.iter().map(|x| x.0).collect::<Vec<_>>());
        let (sm, ss) = mean_std(&v.iter().map(|x| x.1).collect::<Vec<_>>());
        writeln!(acc, "{lambda},{variant},{epoch},{},{m},{s},{sm},{ss}", v.len())?;
    }
    fs::write(a.out.join("accuracy.csv"), acc)?;

    let mut fin = String::from("lambda,variant,n,mean,std,super_mean,super_std\n");
    for ((lambda, variant), v) in &finals {
        let (m, s) = mean_std(&v.iter().map(|x| x.0).collect::<Vec<_>>());
        let (sm, ss) = mean_std(&v.iter().map(|x| x.1).collect::<Vec<_>>());
        writeln!(fin, "{lambda},{variant},{},{m},{s},{sm},{ss}", v.len())?;
        println!("λ={lambda:<5} {variant}: final acc {m:.4} ± {s:.4} (n={})", v.len());
    }
    fs::write(a.out.join("final.csv"), fin)?;

    let mut att = String::from("epsilon,lambda,variant,n,mean,std,stderr\n");
    let mut rows: Vec<_> = per_eps.iter().collect();
    rows.sort_by(|a, b| {
        (f64::from_bits(a.0 .1), &a.0 .0).partial_cmp(&(f64::from_bits(b.0 .1), &b.0 .0)).unwrap()
    });
    for (((lambda, variant), eps), v) in rows {
        let (m, s) = mean_std(v);
        let se = s / (v.len() as f64).sqrt();
        writeln!(att, "{},{lambda},{variant},{},{m},{s},{se}", f64::from_bits(*eps), v.len())?;
    }
    fs::write(a.out.join("attack.csv"), att)?;
    println!("summarized {} runs into {}", runs.len(), a.out.display());
    Ok(())
}
