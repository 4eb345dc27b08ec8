//! A desk-scale synthetic world: images rendered from latent factors, a
//! labeled image set whose classes live in the same latent space, and a
//! neural corpus whose firing rates read out those latents.
//!
//! Images are `0.5 + a·Σ zₗ·Pₗ/√L + b·Σ uⱼ·Qⱼ/√J + pixel noise`, clipped to
//! `[0, 1]`, where `Pₗ` are signal gratings, `Qⱼ` nuisance gratings and `u`
//! standard normal nuisance factors. Each neuron fires at
//!
//! ```text
//! rate = max(0, 20 + 5·(s·wᵀz/√L + (1−s)·ε))
//! ```
//!
//! with `ε` drawn once per (image, neuron), and every repeat is a Poisson
//! count at that rate.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::cifar::LabeledSet;
use crate::data::sessions::NeuralSession;
use crate::data::NUM_FINE;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

const BASE_RATE: f64 = 20.0;
const RATE_GAIN: f64 = 5.0;

/// Appearance of the synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub side: usize,
    pub latent_dim: usize,
    pub nuisance_dim: usize,
    pub signal_amp: f64,
    pub nuisance_amp: f64,
    pub pixel_noise: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            side: 32,
            latent_dim: 10,
            nuisance_dim: 10,
            signal_amp: 0.1,
            nuisance_amp: 0.1,
            pixel_noise: 0.05,
            seed: 0,
        }
    }
}

/// Shape of a synthetic neural corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_images: usize,
    pub n_sessions: usize,
    pub n_neurons: usize,
    pub n_repeats: usize,
    /// `s ∈ [0, 1]`: share of each neuron's rate driven by the image.
    pub signal_strength: f64,
    pub world: WorldConfig,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_images: 500,
            n_sessions: 2,
            n_neurons: 100,
            n_repeats: 20,
            signal_strength: 0.9,
            world: WorldConfig::default(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.signal_strength) {
            return Err(Error::input(format!(
                "signal strength {} outside [0, 1]",
                self.signal_strength
            )));
        }
        if self.n_images == 0 || self.n_sessions == 0 || self.n_neurons == 0 || self.n_repeats == 0 {
            return Err(Error::input("synthetic corpus dimensions must be positive"));
        }
        self.world.validate()
    }

    /// Sets one field from a `key=value` pair.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::input(format!("bad value '{v}' for synthetic key '{key}'")))
        }
        match key {
            "n_images" => self.n_images = num(key, value)?,
            "n_sessions" => self.n_sessions = num(key, value)?,
            "n_neurons" => self.n_neurons = num(key, value)?,
            "n_repeats" => self.n_repeats = num(key, value)?,
            "s" | "signal_strength" => self.signal_strength = num(key, value)?,
            "side" => self.world.side = num(key, value)?,
            "latent_dim" => self.world.latent_dim = num(key, value)?,
            "nuisance_dim" => self.world.nuisance_dim = num(key, value)?,
            "signal_amp" => self.world.signal_amp = num(key, value)?,
            "nuisance_amp" => self.world.nuisance_amp = num(key, value)?,
            "pixel_noise" => self.world.pixel_noise = num(key, value)?,
            "seed" => self.world.seed = num(key, value)?,
            other => return Err(Error::input(format!("unknown synthetic key '{other}'"))),
        }
        Ok(())
    }
}

impl WorldConfig {
    fn validate(&self) -> Result<()> {
        if self.side == 0 || self.latent_dim == 0 {
            return Err(Error::input("world side and latent_dim must be positive"));
        }
        let amps = [self.signal_amp, self.nuisance_amp, self.pixel_noise];
        if amps.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::input("world amplitudes must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// Fixed rendering patterns derived from a [`WorldConfig`].
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    cfg: WorldConfig,
    signal: Vec<Vec<f64>>,
    nuisance: Vec<Vec<f64>>,
}

fn sub_rng(seed: u64, tag: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x5157_0000 + tag);
    rng
}

/// A colored grating with unit RMS over `[side, side, 3]`.
fn grating(side: usize, theta: f64, freq: f64, phase: f64, color: [f64; 3]) -> Vec<f64> {
    let mut p = Vec::with_capacity(side * side * 3);
    let (c, s) = (theta.cos(), theta.sin());
    for y in 0..side {
        for x in 0..side {
            let t = 2.0 * PI * freq * (x as f64 * c + y as f64 * s) / side as f64 + phase;
            let v = t.cos();
            p.extend(color.iter().map(|w| w * v));
        }
    }
    let rms = (p.iter().map(|v| v * v).sum::<f64>() / p.len() as f64).sqrt();
    p.iter_mut().for_each(|v| *v /= rms.max(1e-12));
    p
}

fn random_gratings(n: usize, side: usize, rng: &mut SeededRng, theta_offset: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|l| {
            let theta = PI * (l as f64 + theta_offset + 0.3 * rng.random::<f64>()) / n as f64;
            let freq = 1.0 + 3.0 * rng.random::<f64>();
            let phase = 2.0 * PI * rng.random::<f64>();
            let mut color = [0.0; 3];
            for c in &mut color {
                *c = 0.3 + rng.random::<f64>();
            }
            grating(side, theta, freq, phase, color)
        })
        .collect()
}

impl SyntheticWorld {
    pub fn new(cfg: &WorldConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = sub_rng(cfg.seed, 1);
        let signal = random_gratings(cfg.latent_dim, cfg.side, &mut rng, 0.0);
        let nuisance = random_gratings(cfg.nuisance_dim, cfg.side, &mut rng, 0.5);
        Ok(Self {
            cfg: cfg.clone(),
            signal,
            nuisance,
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    pub fn image_len(&self) -> usize {
        self.cfg.side * self.cfg.side * 3
    }

    /// Renders one image for latent `z`, drawing nuisance and pixel noise
    /// from `rng`.
    pub fn render(&self, z: &[f64], rng: &mut SeededRng, out: &mut [f64]) {
        let l_scale = self.cfg.signal_amp / (self.signal.len() as f64).sqrt();
        let j_scale = self.cfg.nuisance_amp / (self.nuisance.len().max(1) as f64).sqrt();
        out.fill(0.5);
        for (p, &zl) in self.signal.iter().zip(z) {
            for (o, &v) in out.iter_mut().zip(p) {
                *o += l_scale * zl * v;
            }
        }
        for q in &self.nuisance {
            let u: f64 = StandardNormal.sample(rng);
            for (o, &v) in out.iter_mut().zip(q) {
                *o += j_scale * u * v;
            }
        }
        for o in out.iter_mut() {
            let e: f64 = StandardNormal.sample(rng);
            *o = (*o + self.cfg.pixel_noise * e).clamp(0.0, 1.0);
        }
    }

    /// Latent mean of a CIFAR-100 fine class. Fine classes that share a
    /// super-class share most of their mean.
    pub fn class_mean(&self, fine: usize) -> Vec<f64> {
        let coarse = usize::from(crate::data::cifar::FINE_TO_COARSE[fine]);
        let mut rc = sub_rng(self.cfg.seed, 1000 + coarse as u64);
        let mut rf = sub_rng(self.cfg.seed, 2000 + fine as u64);
        (0..self.cfg.latent_dim)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rc);
                let b: f64 = StandardNormal.sample(&mut rf);
                0.8 * a + 0.6 * b
            })
            .collect()
    }

    /// `n_per_class` images for each listed fine class, classes interleaved.
    /// Latents are `separation·μ_class + N(0, I)`.
    pub fn labeled_set(
        &self,
        classes: &[usize],
        n_per_class: usize,
        separation: f64,
        seed: u64,
    ) -> Result<LabeledSet> {
        if classes.is_empty() || n_per_class == 0 {
            return Err(Error::input("labeled set needs classes and images"));
        }
        if let Some(&f) = classes.iter().find(|&&f| f >= NUM_FINE) {
            return Err(Error::input(format!("fine class {f} out of range")));
        }
        let means: Vec<Vec<f64>> = classes.iter().map(|&f| self.class_mean(f)).collect();
        let mut rng = sub_rng(seed, 3);
        let n = classes.len() * n_per_class;
        let len = self.image_len();
        let mut data = vec![0.0; n * len];
        let mut labels = Vec::with_capacity(n);
        let mut z = vec![0.0; self.cfg.latent_dim];
        for (i, img) in data.chunks_exact_mut(len).enumerate() {
            let class = i % classes.len();
            for (zl, m) in z.iter_mut().zip(&means[class]) {
                let e: f64 = StandardNormal.sample(&mut rng);
                *zl = separation * m + e;
            }
            self.render(&z, &mut rng, img);
            labels.push(class);
        }
        Ok(LabeledSet {
            images: Tensor::new(vec![n, self.cfg.side, self.cfg.side, 3], data)?,
            labels,
            classes: classes.to_vec(),
        })
    }
}

/// Generated stimuli, their latents and the recorded sessions.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    /// `[n_images, side, side, 3]`.
    pub images: Tensor,
    /// `[n_images, latent_dim]`.
    pub latents: Tensor,
    pub image_ids: Vec<u32>,
    pub sessions: Vec<NeuralSession>,
}

pub fn make_synthetic_corpus(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let world = SyntheticWorld::new(&spec.world)?;
    let (n, l) = (spec.n_images, spec.world.latent_dim);
    let mut rng = sub_rng(spec.world.seed, 4);
    let latents: Vec<f64> = (0..n * l).map(|_| StandardNormal.sample(&mut rng)).collect();
    let len = world.image_len();
    let mut images = vec![0.0; n * len];
    for (i, img) in images.chunks_exact_mut(len).enumerate() {
        world.render(&latents[i * l..(i + 1) * l], &mut rng, img);
    }
    let image_ids: Vec<u32> = (0..n as u32).collect();
    let s = spec.signal_strength;
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let mut sessions = Vec::with_capacity(spec.n_sessions);
    for sess in 0..spec.n_sessions {
        let mut srng = sub_rng(spec.world.seed, 100 + sess as u64);
        let (k, r) = (spec.n_neurons, spec.n_repeats);
        let readout: Vec<f64> = (0..k * l).map(|_| unit.sample(&mut srng)).collect();
        let mut counts = Vec::with_capacity(n * r * k);
        let mut rates = vec![0.0; k];
        for i in 0..n {
            let z = &latents[i * l..(i + 1) * l];
            for (j, rate) in rates.iter_mut().enumerate() {
                let drive: f64 = readout[j * l..(j + 1) * l].iter().zip(z).map(|(w, z)| w * z).sum::<f64>()
                    / (l as f64).sqrt();
                let noise = unit.sample(&mut srng);
                *rate = (BASE_RATE + RATE_GAIN * (s * drive + (1.0 - s) * noise)).max(0.0);
            }
            for _ in 0..r {
                for &rate in &rates {
                    let c = if rate > 0.0 {
                        Poisson::new(rate).expect("positive rate").sample(&mut srng)
                    } else {
                        0.0
                    };
                    counts.push(c);
                }
            }
        }
        sessions.push(NeuralSession::new(
            format!("synthetic_{sess:02}"),
            image_ids.clone(),
            Tensor::new(vec![n, r, k], counts)?,
        )?);
    }
    Ok(SyntheticCorpus {
        images: Tensor::new(vec![n, spec.world.side, spec.world.side, 3], images)?,
        latents: Tensor::new(vec![n, l], latents)?,
        image_ids,
        sessions,
    })
}

/// Bilinear resize of `[N, H, W, C]` images with half-pixel centers and
/// edge clamping.
pub fn resize_bilinear(images: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let shape = images.shape();
    if shape.len() != 4 || out_h == 0 || out_w == 0 {
        return Err(Error::input(format!(
            "resize expects [N, H, W, C] and a positive target, got {shape:?} -> {out_h}×{out_w}"
        )));
    }
    let (n, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    if (h, w) == (out_h, out_w) {
        return Ok(images.clone());
    }
    let src = images.data();
    let axis = |o: usize, out: usize, inp: usize| -> (usize, usize, f64) {
        let pos = ((o as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(inp - 1);
        (lo, hi, pos - lo as f64)
    };
    let mut out = Vec::with_capacity(n * out_h * out_w * c);
    for b in 0..n {
        let img = &src[b * h * w * c..(b + 1) * h * w * c];
        for oy in 0..out_h {
            let (y0, y1, fy) = axis(oy, out_h, h);
            for ox in 0..out_w {
                let (x0, x1, fx) = axis(ox, out_w, w);
                for ch in 0..c {
                    let at = |y: usize, x: usize| img[(y * w + x) * c + ch];
                    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                    let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                    out.push(top * (1.0 - fy) + bot * fy);
                }
            }
        }
    }
    Tensor::new(vec![n, out_h, out_w, c], out)
}
