//! Dataset ingestion and preprocessing.

pub mod cifar;
pub mod pca;
pub mod population;
pub mod sessions;
pub mod synthetic;

pub use cifar::{
    load_cifar100, parse_records, serialize_records, Cifar100, CifarRecord, LabeledSet, COARSE_NAMES,
    FINE_NAMES, FINE_TO_COARSE, NUM_COARSE, NUM_FINE, RECORD_BYTES,
};
pub use pca::{pca_top_k, Pca};
pub use population::{
    build_pseudo_population, make_surrogate, PopulationMeta, Provenance, PseudoPopulation, SessionPca,
    SurrogateKind, SurrogateSpec,
};
pub use sessions::{average_repeats, load_sessions, read_session, write_session, NeuralSession};
pub use synthetic::{
    make_synthetic_corpus, resize_bilinear, SyntheticCorpus, SyntheticSpec, SyntheticWorld, WorldConfig,
};
