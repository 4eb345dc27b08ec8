//! Pseudo-populations: per-session PCA projections concatenated column-wise,
//! plus the surrogate controls built from them.
//!
//! Export format (`.ndpp`, little-endian):
//!
//! ```text
//! "NDPP"            4 bytes
//! rows, cols        u32 each
//! image_ids         rows × u32
//! responses         rows × cols × f64, row-major
//! ```
//!
//! accompanied by a JSON sidecar (`<file>.json`) holding [`PopulationMeta`].

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::pca::pca_top_k;
use crate::data::sessions::{average_repeats, check_alignment, NeuralSession};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"NDPP";

/// PCA summary of one session's block of columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionPca {
    pub session_id: String,
    pub n_neurons: usize,
    pub means: Vec<f64>,
    /// `[n_neurons, k]` row-major.
    pub components: Vec<f64>,
    pub explained_variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurrogateKind {
    ShuffledLabels,
    /// Gaussian draws matching the data's mean and standard deviation,
    /// either over all entries or per column.
    V1Statistics {
        #[serde(default)]
        per_neuron: bool,
    },
    StandardNormal,
}

impl SurrogateKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "shuffled_labels" => Ok(Self::ShuffledLabels),
            "v1_statistics" => Ok(Self::V1Statistics { per_neuron: false }),
            "v1_statistics_per_neuron" => Ok(Self::V1Statistics { per_neuron: true }),
            "standard_normal" => Ok(Self::StandardNormal),
            other => Err(Error::input(format!(
                "unknown surrogate '{other}' (expected shuffled_labels, v1_statistics, \
                 v1_statistics_per_neuron or standard_normal)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::ShuffledLabels => "shuffled_labels",
            Self::V1Statistics { per_neuron: false } => "v1_statistics",
            Self::V1Statistics { per_neuron: true } => "v1_statistics_per_neuron",
            Self::StandardNormal => "standard_normal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSpec {
    pub kind: SurrogateKind,
    pub seed: u64,
}

/// Where a population came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub sources: Vec<String>,
    pub k: usize,
    pub surrogate: Option<SurrogateSpec>,
    /// Row permutation applied by a shuffled-labels surrogate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationMeta {
    pub rows: usize,
    pub cols: usize,
    pub sessions: Vec<SessionPca>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoPopulation {
    /// `[n_images, k × n_sessions]`.
    pub responses: Tensor,
    pub image_ids: Vec<u32>,
    pub sessions: Vec<SessionPca>,
    pub provenance: Provenance,
}

/// Repeat-averages each session, keeps its top-`k` principal components and
/// concatenates the projections in session order.
pub fn build_pseudo_population(sessions: &[NeuralSession], k: usize) -> Result<PseudoPopulation> {
    check_alignment(sessions)?;
    let n = sessions[0].n_images();
    let cols = k * sessions.len();
    let mut responses = vec![0.0; n * cols];
    let mut meta = Vec::with_capacity(sessions.len());
    for (s, session) in sessions.iter().enumerate() {
        let avg = average_repeats(session);
        let pca = pca_top_k(&avg, k).map_err(|e| match e {
            Error::Input(msg) => Error::Input(format!("session {}: {msg}", session.session_id)),
            other => other,
        })?;
        for i in 0..n {
            responses[i * cols + s * k..i * cols + (s + 1) * k].copy_from_slice(pca.projected.row(i));
        }
        meta.push(SessionPca {
            session_id: session.session_id.clone(),
            n_neurons: session.n_neurons(),
            means: pca.means,
            components: pca.components.into_data(),
            explained_variance: pca.explained_variance,
        });
    }
    Ok(PseudoPopulation {
        responses: Tensor::new(vec![n, cols], responses)?,
        image_ids: sessions[0].image_ids.clone(),
        sessions: meta,
        provenance: Provenance {
            sources: sessions.iter().map(|s| s.session_id.clone()).collect(),
            k,
            surrogate: None,
            permutation: None,
        },
    })
}

/// Replaces the responses with a control dataset of the same shape.
pub fn make_surrogate(pop: &PseudoPopulation, spec: &SurrogateSpec) -> PseudoPopulation {
    let mut rng = stream(spec.seed, Stream::Surrogate);
    let (rows, cols) = (pop.responses.batch(), pop.responses.row_len());
    let data = pop.responses.data();
    let mut permutation = None;
    let new_data: Vec<f64> = match spec.kind {
        SurrogateKind::ShuffledLabels => {
            let mut perm: Vec<usize> = (0..rows).collect();
            perm.shuffle(&mut rng);
            let out = perm.iter().flat_map(|&r| pop.responses.row(r).iter().copied()).collect();
            permutation = Some(perm);
            out
        }
        SurrogateKind::V1Statistics { per_neuron: false } => {
            let (mean, std) = mean_std(data.iter().copied());
            (0..rows * cols)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    mean + std * z
                })
                .collect()
        }
        SurrogateKind::V1Statistics { per_neuron: true } => {
            let stats: Vec<(f64, f64)> = (0..cols)
                .map(|j| mean_std((0..rows).map(|i| data[i * cols + j])))
                .collect();
            let mut out = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                for &(m, s) in &stats {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    out.push(m + s * z);
                }
            }
            out
        }
        SurrogateKind::StandardNormal => (0..rows * cols)
            .map(|_| -> f64 { StandardNormal.sample(&mut rng) })
            .collect(),
    };
    let mut provenance = pop.provenance.clone();
    provenance.surrogate = Some(spec.clone());
    provenance.permutation = permutation;
    PseudoPopulation {
        responses: Tensor::new(vec![rows, cols], new_data).expect("same shape"),
        image_ids: pop.image_ids.clone(),
        sessions: pop.sessions.clone(),
        provenance,
    }
}

/// Population mean and (n−1) standard deviation.
fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

impl PseudoPopulation {
    pub fn meta(&self) -> PopulationMeta {
        PopulationMeta {
            rows: self.responses.batch(),
            cols: self.responses.row_len(),
            sessions: self.sessions.clone(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.responses.batch() as u32).to_le_bytes());
        out.extend_from_slice(&(self.responses.row_len() as u32).to_le_bytes());
        for id in &self.image_ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        for v in self.responses.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Sidecar path for an export file.
    pub fn sidecar(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    /// Writes the binary export and its JSON sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        fs::write(Self::sidecar(path), serde_json::to_vec_pretty(&self.meta())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(Error::format(0, format!("{}: missing NDPP header", path.display())));
        }
        let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let ids_end = 12 + 4 * rows;
        let expected = ids_end + 8 * rows * cols;
        if bytes.len() != expected || rows == 0 || cols == 0 {
            return Err(Error::format(
                bytes.len().min(expected) as u64,
                format!("{}: expected {expected} bytes for {rows}×{cols}, found {}", path.display(), bytes.len()),
            ));
        }
        let image_ids = bytes[12..ids_end]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let data = bytes[ids_end..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let sidecar = Self::sidecar(path);
        let meta: PopulationMeta = match fs::read(&sidecar) {
            Ok(b) => serde_json::from_slice(&b)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => PopulationMeta {
                rows,
                cols,
                sessions: Vec::new(),
                provenance: Provenance::default(),
            },
            Err(e) => return Err(e.into()),
        };
        if meta.rows != rows || meta.cols != cols {
            return Err(Error::Corpus(format!(
                "{}: sidecar says {}×{}, file holds {rows}×{cols}",
                sidecar.display(),
                meta.rows,
                meta.cols
            )));
        }
        Ok(Self {
            responses: Tensor::new(vec![rows, cols], data)?,
            image_ids,
            sessions: meta.sessions,
            provenance: meta.provenance,
        })
    }
}
