//! NDS1 neural session files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "NDS1"                       4 bytes
//! n_images, n_repeats, n_neurons   u32 each
//! image_ids                    n_images × u32
//! counts                       n_images × n_repeats × n_neurons × f64, image-major
//! ```
//!
//! A corpus directory holds one `*.nds` file per session; sessions are taken
//! in filename order and the file stem is the session id.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"NDS1";
const HEADER_BYTES: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralSession {
    pub session_id: String,
    pub image_ids: Vec<u32>,
    /// `[n_images, n_repeats, n_neurons]`, nonnegative.
    pub spike_counts: Tensor,
}

impl NeuralSession {
    pub fn new(session_id: impl Into<String>, image_ids: Vec<u32>, spike_counts: Tensor) -> Result<Self> {
        let s = Self {
            session_id: session_id.into(),
            image_ids,
            spike_counts,
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        let shape = self.spike_counts.shape();
        if shape.len() != 3 {
            return Err(Error::input(format!(
                "session {}: counts must be [images, repeats, neurons], got {shape:?}",
                self.session_id
            )));
        }
        if shape[0] != self.image_ids.len() {
            return Err(Error::input(format!(
                "session {}: {} image ids for {} images",
                self.session_id,
                self.image_ids.len(),
                shape[0]
            )));
        }
        if let Some(i) = self.spike_counts.data().iter().position(|&c| !(c >= 0.0) || !c.is_finite()) {
            return Err(Error::input(format!(
                "session {}: count #{i} is {}",
                self.session_id,
                self.spike_counts.data()[i]
            )));
        }
        Ok(())
    }

    pub fn n_images(&self) -> usize {
        self.spike_counts.shape()[0]
    }

    pub fn n_repeats(&self) -> usize {
        self.spike_counts.shape()[1]
    }

    pub fn n_neurons(&self) -> usize {
        self.spike_counts.shape()[2]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_BYTES + 4 * self.image_ids.len() + 8 * self.spike_counts.len());
        out.extend_from_slice(MAGIC);
        for d in [self.n_images(), self.n_repeats(), self.n_neurons()] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for id in &self.image_ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        for v in self.spike_counts.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(session_id: impl Into<String>, bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_BYTES {
            return Err(Error::format(bytes.len() as u64, "file shorter than the NDS1 header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::format(0, "missing NDS1 magic"));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (n_img, n_rep, n_neu) = (dim(0), dim(1), dim(2));
        if n_img == 0 || n_rep == 0 || n_neu == 0 {
            return Err(Error::format(4, format!("zero dimension in {n_img}×{n_rep}×{n_neu}")));
        }
        let ids_end = HEADER_BYTES + 4 * n_img;
        let n_counts = n_img
            .checked_mul(n_rep)
            .and_then(|v| v.checked_mul(n_neu))
            .ok_or_else(|| Error::format(4, "dimensions overflow"))?;
        let expected = ids_end + 8 * n_counts;
        if bytes.len() != expected {
            return Err(Error::format(
                bytes.len().min(expected) as u64,
                format!("expected {expected} bytes for {n_img}×{n_rep}×{n_neu}, found {}", bytes.len()),
            ));
        }
        let image_ids = bytes[HEADER_BYTES..ids_end]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut counts = Vec::with_capacity(n_counts);
        for (i, c) in bytes[ids_end..].chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(c.try_into().unwrap());
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::format((ids_end + 8 * i) as u64, format!("invalid spike count {v}")));
            }
            counts.push(v);
        }
        Ok(Self {
            session_id: session_id.into(),
            image_ids,
            spike_counts: Tensor::new(vec![n_img, n_rep, n_neu], counts)?,
        })
    }
}

pub fn write_session(path: &Path, session: &NeuralSession) -> Result<()> {
    fs::write(path, session.to_bytes())?;
    Ok(())
}

pub fn read_session(path: &Path) -> Result<NeuralSession> {
    let id = path
        .file_stem()
        .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
    let bytes = fs::read(path)?;
    NeuralSession::from_bytes(id, &bytes).map_err(|e| match e {
        Error::Format { offset, message } => Error::Format {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Checks that every session lists the same image ids in the same order.
pub fn check_alignment(sessions: &[NeuralSession]) -> Result<()> {
    let Some(first) = sessions.first() else {
        return Err(Error::Corpus("corpus has no sessions".into()));
    };
    for s in &sessions[1..] {
        if s.image_ids != first.image_ids {
            let at = s
                .image_ids
                .iter()
                .zip(&first.image_ids)
                .position(|(a, b)| a != b)
                .unwrap_or(s.image_ids.len().min(first.image_ids.len()));
            return Err(Error::Corpus(format!(
                "session {} image ids differ from session {} (first mismatch at row {at})",
                s.session_id, first.session_id
            )));
        }
    }
    Ok(())
}

/// Reads every `*.nds` file in `dir`, sorted by file name.
pub fn load_sessions(dir: &Path) -> Result<Vec<NeuralSession>> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "nds"))
        .collect();
    paths.sort();
    let sessions = paths.iter().map(|p| read_session(p)).collect::<Result<Vec<_>>>()?;
    check_alignment(&sessions)?;
    Ok(sessions)
}

/// Mean over the repeat axis, `[n_images, n_neurons]`.
pub fn average_repeats(session: &NeuralSession) -> Tensor {
    let (n_img, n_rep, n_neu) = (session.n_images(), session.n_repeats(), session.n_neurons());
    let d = session.spike_counts.data();
    let mut out = vec![0.0; n_img * n_neu];
    for i in 0..n_img {
        let row = &mut out[i * n_neu..(i + 1) * n_neu];
        for r in 0..n_rep {
            let base = (i * n_rep + r) * n_neu;
            for (o, &v) in row.iter_mut().zip(&d[base..base + n_neu]) {
                *o += v;
            }
        }
        for o in row.iter_mut() {
            *o /= n_rep as f64;
        }
    }
    Tensor::new(vec![n_img, n_neu], out).expect("dims are positive")
}
