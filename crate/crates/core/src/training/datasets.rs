//! Materializes the datasets named by a [`DataSpec`].

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use crate::data::{
    build_pseudo_population, load_cifar100, make_surrogate, make_synthetic_corpus, resize_bilinear,
    LabeledSet, PseudoPopulation, SurrogateSpec, SyntheticSpec, SyntheticWorld,
};
use crate::error::{Error, Result};
use crate::nn::{read_container, write_container, Container, ArrayHeader};
use crate::tensor::Tensor;
use crate::training::config::{CifarSource, DataSpec, NeuralSource};

/// Stimulus images paired row-by-row with neural responses.
#[derive(Debug, Clone)]
pub struct NeuralPairs {
    /// `[n, h, w, 3]` at the CNN's input resolution.
    pub images: Tensor,
    /// `[n, d]`.
    pub responses: Tensor,
}

impl NeuralPairs {
    pub fn new(images: Tensor, responses: Tensor) -> Result<Self> {
        if images.batch() != responses.batch() {
            return Err(Error::Corpus(format!(
                "{} stimulus images for {} response rows",
                images.batch(),
                responses.batch()
            )));
        }
        if images.batch() < 2 {
            return Err(Error::Corpus("need at least two neural samples".into()));
        }
        Ok(Self { images, responses })
    }

    pub fn len(&self) -> usize {
        self.images.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.responses.row_len()
    }
}

#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: LabeledSet,
    pub test: LabeledSet,
    pub neural: Option<NeuralPairs>,
}

impl Datasets {
    pub fn input_shape(&self) -> Vec<usize> {
        self.train.images.shape()[1..].to_vec()
    }
}

/// Writes stimulus images as a container with a single `images` array and
/// their ids in the metadata.
pub fn write_stimuli(path: &Path, images: &Tensor, image_ids: &[u32]) -> Result<()> {
    let c = Container {
        meta: serde_json::json!({ "kind": "stimuli", "image_ids": image_ids }),
        arrays: vec![(
            ArrayHeader { name: "images".into(), shape: images.shape().to_vec() },
            images.data().to_vec(),
        )],
    };
    write_container(File::create(path)?, &c)
}

pub fn read_stimuli(path: &Path) -> Result<(Tensor, Vec<u32>)> {
    let c = read_container(BufReader::new(File::open(path)?))?;
    let (header, data) = c
        .arrays
        .into_iter()
        .find(|(h, _)| h.name == "images")
        .ok_or_else(|| Error::format(0, format!("{}: no images array", path.display())))?;
    let ids: Vec<u32> = serde_json::from_value(c.meta["image_ids"].clone())?;
    Ok((Tensor::new(header.shape, data)?, ids))
}

/// Pairs stimuli with population rows by image id and resizes the images to
/// `input_shape`.
pub fn pair_by_id(
    stimuli: &Tensor,
    stimulus_ids: &[u32],
    pop: &PseudoPopulation,
    input_shape: &[usize],
) -> Result<NeuralPairs> {
    let rows: Vec<usize> = pop
        .image_ids
        .iter()
        .map(|id| {
            stimulus_ids
                .iter()
                .position(|s| s == id)
                .ok_or_else(|| Error::Corpus(format!("no stimulus image for image id {id}")))
        })
        .collect::<Result<_>>()?;
    let images = stimuli.select_rows(&rows);
    let images = resize_bilinear(&images, input_shape[0], input_shape[1])?;
    if images.shape()[3] != input_shape[2] {
        return Err(Error::Corpus(format!(
            "stimuli have {} channels, network expects {}",
            images.shape()[3],
            input_shape[2]
        )));
    }
    NeuralPairs::new(images, pop.responses.clone())
}

/// Builds the labeled split described by `spec.cifar`.
pub fn resolve_labeled(spec: &DataSpec) -> Result<(LabeledSet, LabeledSet)> {
    match &spec.cifar {
        CifarSource::Dir { path, classes } => {
            let c = load_cifar100(path, classes.as_deref())?;
            Ok((c.train, c.test))
        }
        CifarSource::Synthetic { classes, train_per_class, test_per_class, separation, seed } => {
            let world = SyntheticWorld::new(&spec.world)?;
            let train = world.labeled_set(classes, *train_per_class, *separation, *seed)?;
            let test = world.labeled_set(classes, *test_per_class, *separation, seed ^ 0x7e57_7e57)?;
            Ok((train, test))
        }
    }
}

/// Builds the neural view for a network taking `input_shape` images.
pub fn resolve_neural(spec: &DataSpec, input_shape: &[usize], seed: u64) -> Result<Option<NeuralPairs>> {
    match &spec.neural {
        NeuralSource::None => Ok(None),
        NeuralSource::Prepared { population, stimuli } => {
            let pop = PseudoPopulation::load(population)?;
            let (images, ids) = read_stimuli(stimuli)?;
            pair_by_id(&images, &ids, &pop, input_shape).map(Some)
        }
        NeuralSource::Synthetic { n_images, n_sessions, n_neurons, n_repeats, signal_strength, k, surrogate } => {
            let corpus = make_synthetic_corpus(&SyntheticSpec {
                n_images: *n_images,
                n_sessions: *n_sessions,
                n_neurons: *n_neurons,
                n_repeats: *n_repeats,
                signal_strength: *signal_strength,
                world: spec.world.clone(),
            })?;
            let mut pop = build_pseudo_population(&corpus.sessions, *k)?;
            if let Some(kind) = surrogate {
                pop = make_surrogate(&pop, &SurrogateSpec { kind: kind.clone(), seed });
            }
            pair_by_id(&corpus.images, &corpus.image_ids, &pop, input_shape).map(Some)
        }
    }
}

pub fn resolve(spec: &DataSpec, seed: u64) -> Result<Datasets> {
    let (train, test) = resolve_labeled(spec)?;
    let shape = train.images.shape()[1..].to_vec();
    let neural = resolve_neural(spec, &shape, seed)?;
    Ok(Datasets { train, test, neural })
}
