//! Checkpoints: the network container plus run configuration, counters, RNG
//! positions and metric history in the header.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{DccaBranch, EpochMetrics, ExperimentConfig, TrainState};
use crate::error::{Error, Result};
use crate::nn::{read_container, write_container, Container, Network};
use crate::rng::RngState;

const KIND: &str = "ndreg-checkpoint";

#[derive(Serialize, Deserialize)]
struct Meta {
    kind: String,
    config: ExperimentConfig,
    config_hash: String,
    epoch: usize,
    cifar_steps: u64,
    neural_steps: u64,
    cifar_rng: RngState,
    neural_rng: RngState,
    history: Vec<EpochMetrics>,
    cnn: Value,
    dcca: Option<(Value, Value)>,
}

/// A checkpoint as stored on disk.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub state: TrainState,
}

/// Writes atomically through a temporary sibling file.
pub fn save_checkpoint(path: &Path, cfg: &ExperimentConfig, state: &TrainState) -> Result<()> {
    let mut arrays = Vec::new();
    let cnn = state.cnn.export("cnn", &mut arrays);
    let dcca = state
        .dcca
        .as_ref()
        .map(|b| (b.fx.export("dcca_x", &mut arrays), b.fy.export("dcca_y", &mut arrays)));
    let meta = Meta {
        kind: KIND.into(),
        config: cfg.clone(),
        config_hash: cfg.identity_hash(),
        epoch: state.epoch,
        cifar_steps: state.cifar_steps,
        neural_steps: state.neural_steps,
        cifar_rng: RngState::capture(&state.cifar_rng),
        neural_rng: RngState::capture(&state.neural_rng),
        history: state.history.clone(),
        cnn,
        dcca,
    };
    let container = Container { meta: serde_json::to_value(meta)?, arrays };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    {
        let mut out = BufWriter::new(File::create(&tmp)?);
        write_container(&mut out, &container)?;
        out.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let container = read_container(BufReader::new(File::open(path)?))?;
    let meta: Meta = serde_json::from_value(container.meta.clone())?;
    if meta.kind != KIND {
        return Err(Error::format(0, format!("{} is not a training checkpoint", path.display())));
    }
    if meta.config.identity_hash() != meta.config_hash {
        return Err(Error::State(format!(
            "{}: stored config does not match its recorded hash",
            path.display()
        )));
    }
    let cnn = Network::import(&meta.cnn, "cnn", &container)?;
    let dcca = match &meta.dcca {
        Some((x, y)) => Some(DccaBranch {
            fx: Network::import(x, "dcca_x", &container)?,
            fy: Network::import(y, "dcca_y", &container)?,
        }),
        None => None,
    };
    Ok(Checkpoint {
        state: TrainState {
            cnn,
            dcca,
            epoch: meta.epoch,
            cifar_steps: meta.cifar_steps,
            neural_steps: meta.neural_steps,
            cifar_rng: meta.cifar_rng.restore()?,
            neural_rng: meta.neural_rng.restore()?,
            history: meta.history,
        },
        config: meta.config,
        config_hash: meta.config_hash,
    })
}

/// Loads a checkpoint for continuing `cfg`, refusing one written by a
/// different configuration.
pub fn load_checkpoint(path: &Path, cfg: &ExperimentConfig) -> Result<TrainState> {
    let ck = read_checkpoint(path)?;
    let want = cfg.identity_hash();
    if ck.config_hash != want {
        return Err(Error::State(format!(
            "{} was written by config {} but this run has config {}; refusing to resume",
            path.display(),
            &ck.config_hash[..12],
            &want[..12]
        )));
    }
    Ok(ck.state)
}
