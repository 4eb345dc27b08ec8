//! Experiment configuration.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cca::DccaBranchConfig;
use crate::data::{SurrogateKind, WorldConfig, NUM_FINE};
use crate::error::{Error, Result};
use crate::nn::{CornetConfig, Init};

/// Half-open epoch range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochRange {
    pub start: usize,
    pub end: usize,
}

impl EpochRange {
    pub fn contains(&self, epoch: usize) -> bool {
        (self.start..self.end).contains(&epoch)
    }

    /// Parses `a..b`.
    pub fn parse(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once("..")
            .ok_or_else(|| Error::input(format!("epoch range '{s}' is not of the form a..b")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::input(format!("bad epoch '{v}' in range '{s}'")))
        };
        let r = Self { start: parse(a)?, end: parse(b)? };
        if r.start >= r.end {
            return Err(Error::input(format!("empty epoch range '{s}'")));
        }
        Ok(r)
    }
}

/// Where labeled images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum CifarSource {
    /// A directory with `train.bin` and `test.bin`.
    Dir {
        path: PathBuf,
        #[serde(default)]
        classes: Option<Vec<usize>>,
    },
    /// Images rendered from the shared synthetic world.
    Synthetic {
        classes: Vec<usize>,
        train_per_class: usize,
        test_per_class: usize,
        separation: f64,
        seed: u64,
    },
}

/// Where the neural view comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum NeuralSource {
    None,
    /// Files written by the `prepare` command.
    Prepared { population: PathBuf, stimuli: PathBuf },
    /// A synthetic corpus rendered from the shared world, reduced with
    /// per-session PCA.
    Synthetic {
        n_images: usize,
        n_sessions: usize,
        n_neurons: usize,
        n_repeats: usize,
        signal_strength: f64,
        k: usize,
        #[serde(default)]
        surrogate: Option<SurrogateKind>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub cifar: CifarSource,
    pub neural: NeuralSource,
    /// Appearance of synthetic images, shared by both synthetic sources.
    #[serde(default)]
    pub world: WorldConfig,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            cifar: CifarSource::Dir {
                path: PathBuf::from("cifar-100-binary"),
                classes: None,
            },
            neural: NeuralSource::None,
            world: WorldConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Share of the DCCA term in the total loss.
    pub lambda: f64,
    pub c: usize,
    pub reg: f64,
    pub lr_cnn: f64,
    pub lr_dcca: f64,
    pub batch_cifar: usize,
    pub batch_dcca: usize,
    pub epochs: usize,
    pub neural_cycles_per_epoch: usize,
    pub seed: u64,
    /// Epochs in which DCCA steps run; all epochs when absent.
    pub dcca_active_epochs: Option<EpochRange>,
    pub cornet: CornetConfig,
    pub dcca: DccaBranchConfig,
    pub data: DataSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            c: 10,
            reg: 1e-4,
            lr_cnn: 0.01,
            lr_dcca: 0.01,
            batch_cifar: 128,
            batch_dcca: 50,
            epochs: 100,
            neural_cycles_per_epoch: 20,
            seed: 0,
            dcca_active_epochs: None,
            cornet: CornetConfig::default(),
            dcca: DccaBranchConfig::default(),
            data: DataSpec::default(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::input(format!("bad value '{v}' for '{key}'")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse_num(key, s)).collect()
}

fn parse_init(key: &str, v: &str) -> Result<Init> {
    match v.trim() {
        "he" | "he_normal" => Ok(Init::HeNormal),
        other => match other.strip_prefix("normal:") {
            Some(std) => Ok(Init::Normal { std: parse_num(key, std)? }),
            None => Err(Error::input(format!("bad init '{v}' for '{key}' (he_normal or normal:<std>)"))),
        },
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::input(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.c == 0 {
            return Err(Error::input("c must be at least 1"));
        }
        if !(self.reg >= 0.0) || !self.reg.is_finite() {
            return Err(Error::input(format!("reg must be finite and >= 0, got {}", self.reg)));
        }
        for (name, lr) in [("lr_cnn", self.lr_cnn), ("lr_dcca", self.lr_dcca)] {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(Error::input(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.batch_cifar == 0 {
            return Err(Error::input("batch_cifar must be positive"));
        }
        if self.batch_dcca < 2 {
            return Err(Error::input("batch_dcca must be at least 2"));
        }
        if self.dcca.output_width < self.c {
            return Err(Error::input(format!(
                "dcca.output_width {} is smaller than c = {}",
                self.dcca.output_width, self.c
            )));
        }
        if let CifarSource::Synthetic { classes, .. } | CifarSource::Dir { classes: Some(classes), .. } =
            &self.data.cifar
        {
            if classes.len() < 2 || classes.iter().any(|&c| c >= NUM_FINE) {
                return Err(Error::input("class subsets need at least two valid fine ids"));
            }
        }
        Ok(())
    }

    /// Whether DCCA steps run in `epoch`.
    pub fn dcca_active(&self, epoch: usize) -> bool {
        self.lambda > 0.0 && self.dcca_active_epochs.is_none_or(|r| r.contains(epoch))
    }

    /// SHA-256 of everything that determines the training trajectory. The
    /// epoch budget is excluded so that a run can be extended.
    pub fn identity_hash(&self) -> String {
        let mut c = self.clone();
        c.epochs = 0;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex(&Sha256::digest(&bytes))
    }

    /// Sets one flat key. Nested fields use dotted names
    /// (`cornet.channels = 8,16,32,64`, `dcca.hidden_width = 64`).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "lambda" => self.lambda = parse_num(key, v)?,
            "c" => self.c = parse_num(key, v)?,
            "reg" => self.reg = parse_num(key, v)?,
            "lr" => {
                self.lr_cnn = parse_num(key, v)?;
                self.lr_dcca = self.lr_cnn;
            }
            "lr_cnn" => self.lr_cnn = parse_num(key, v)?,
            "lr_dcca" => self.lr_dcca = parse_num(key, v)?,
            "batch_cifar" => self.batch_cifar = parse_num(key, v)?,
            "batch_dcca" => self.batch_dcca = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "neural_cycles_per_epoch" => self.neural_cycles_per_epoch = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "dcca_active_epochs" | "dcca_epochs" => {
                self.dcca_active_epochs = match v {
                    "all" | "" => None,
                    r => Some(EpochRange::parse(r)?),
                }
            }
            "cornet.channels" => {
                let ch: Vec<usize> = parse_list(key, v)?;
                self.cornet.channels = ch
                    .try_into()
                    .map_err(|_| Error::input("cornet.channels needs four values"))?;
            }
            "cornet.kernel" => self.cornet.kernel = parse_num(key, v)?,
            "cornet.pool" => self.cornet.pool = parse_num(key, v)?,
            "cornet.dropout" => self.cornet.dropout = parse_num(key, v)?,
            "cornet.init" => self.cornet.init = parse_init(key, v)?,
            "dcca.hidden_width" => self.dcca.hidden_width = parse_num(key, v)?,
            "dcca.hidden_layers" => self.dcca.hidden_layers = parse_num(key, v)?,
            "dcca.output_width" => self.dcca.output_width = parse_num(key, v)?,
            "dcca.dropout" => self.dcca.dropout = parse_num(key, v)?,
            "dcca.init" => self.dcca.init = parse_init(key, v)?,
            "dcca.weight_decay" => self.dcca.weight_decay = parse_num(key, v)?,
            "cifar_dir" => {
                let classes = match &self.data.cifar {
                    CifarSource::Dir { classes, .. } => classes.clone(),
                    _ => None,
                };
                self.data.cifar = CifarSource::Dir { path: PathBuf::from(v), classes };
            }
            "cifar_classes" => {
                let list = match v {
                    "all" => None,
                    l => Some(parse_list(key, l)?),
                };
                match &mut self.data.cifar {
                    CifarSource::Dir { classes, .. } => *classes = list,
                    CifarSource::Synthetic { classes, .. } => {
                        *classes = list.ok_or_else(|| Error::input("synthetic images need explicit classes"))?
                    }
                }
            }
            "neural" if v == "none" => self.data.neural = NeuralSource::None,
            "neural_dir" => {
                let dir = PathBuf::from(v);
                self.data.neural = NeuralSource::Prepared {
                    population: dir.join("population.ndpp"),
                    stimuli: dir.join("stimuli.ndck"),
                };
            }
            "neural_population" | "neural_stimuli" => {
                let (mut population, mut stimuli) = match &self.data.neural {
                    NeuralSource::Prepared { population, stimuli } => (population.clone(), stimuli.clone()),
                    _ => (PathBuf::new(), PathBuf::new()),
                };
                if key.trim() == "neural_population" {
                    population = PathBuf::from(v);
                } else {
                    stimuli = PathBuf::from(v);
                }
                self.data.neural = NeuralSource::Prepared { population, stimuli };
            }
            k if k.starts_with("world.") => set_world(&mut self.data.world, &k[6..], v)?,
            k if k.starts_with("synthetic_cifar.") => self.set_synthetic_cifar(&k[16..], v)?,
            k if k.starts_with("synthetic_neural.") => self.set_synthetic_neural(&k[17..], v)?,
            other => return Err(Error::input(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    fn set_synthetic_cifar(&mut self, key: &str, v: &str) -> Result<()> {
        if !matches!(self.data.cifar, CifarSource::Synthetic { .. }) {
            self.data.cifar = CifarSource::Synthetic {
                classes: (0..10).collect(),
                train_per_class: 500,
                test_per_class: 100,
                separation: 1.0,
                seed: 0,
            };
        }
        let CifarSource::Synthetic { classes, train_per_class, test_per_class, separation, seed } =
            &mut self.data.cifar
        else {
            unreachable!()
        };
        match key {
            "classes" => *classes = parse_list(key, v)?,
            "train_per_class" => *train_per_class = parse_num(key, v)?,
            "test_per_class" => *test_per_class = parse_num(key, v)?,
            "separation" => *separation = parse_num(key, v)?,
            "seed" => *seed = parse_num(key, v)?,
            other => return Err(Error::input(format!("unknown key 'synthetic_cifar.{other}'"))),
        }
        Ok(())
    }

    fn set_synthetic_neural(&mut self, key: &str, v: &str) -> Result<()> {
        if !matches!(self.data.neural, NeuralSource::Synthetic { .. }) {
            self.data.neural = NeuralSource::Synthetic {
                n_images: 500,
                n_sessions: 2,
                n_neurons: 40,
                n_repeats: 20,
                signal_strength: 0.9,
                k: 20,
                surrogate: None,
            };
        }
        let NeuralSource::Synthetic { n_images, n_sessions, n_neurons, n_repeats, signal_strength, k, surrogate } =
            &mut self.data.neural
        else {
            unreachable!()
        };
        match key {
            "n_images" => *n_images = parse_num(key, v)?,
            "n_sessions" => *n_sessions = parse_num(key, v)?,
            "n_neurons" => *n_neurons = parse_num(key, v)?,
            "n_repeats" => *n_repeats = parse_num(key, v)?,
            "s" | "signal_strength" => *signal_strength = parse_num(key, v)?,
            "k" => *k = parse_num(key, v)?,
            "surrogate" => {
                *surrogate = match v {
                    "none" => None,
                    name => Some(SurrogateKind::parse(name)?),
                }
            }
            other => return Err(Error::input(format!("unknown key 'synthetic_neural.{other}'"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` document; `#` starts a comment.
    pub fn apply_document(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::input(format!("line {}: expected key = value", i + 1)))?;
            let v = v.trim().trim_matches('"');
            self.set(k, v)
                .map_err(|e| Error::input(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }
}

fn set_world(w: &mut WorldConfig, key: &str, v: &str) -> Result<()> {
    match key {
        "side" => w.side = parse_num(key, v)?,
        "latent_dim" => w.latent_dim = parse_num(key, v)?,
        "nuisance_dim" => w.nuisance_dim = parse_num(key, v)?,
        "signal_amp" => w.signal_amp = parse_num(key, v)?,
        "nuisance_amp" => w.nuisance_amp = parse_num(key, v)?,
        "pixel_noise" => w.pixel_noise = parse_num(key, v)?,
        "seed" => w.seed = parse_num(key, v)?,
        other => return Err(Error::input(format!("unknown key 'world.{other}'"))),
    }
    Ok(())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
