use std::fs;
use std::path::PathBuf;

use clap::Args;
use ndreg::data::{
    build_pseudo_population, load_sessions, make_surrogate, make_synthetic_corpus, write_session,
    SurrogateKind, SurrogateSpec, SyntheticSpec,
};
use ndreg::training::{read_stimuli, write_stimuli};
use serde_json::json;

use crate::manifest::{digest, hash_bytes, RunManifest};
use crate::{data_path, CliResult};

#[derive(Args)]
pub struct PrepareArgs {
    /// Generate a synthetic corpus; optional `key=value` overrides
    /// (n_images, n_sessions, n_neurons, n_repeats, s, latent_dim, seed, ...).
    #[arg(long, num_args = 0.., value_name = "KEY=VALUE")]
    synthetic: Option<Vec<String>>,
    /// Directory of NDS1 session files.
    #[arg(long, conflicts_with = "synthetic")]
    sessions: Option<PathBuf>,
    /// Stimulus image container for real sessions.
    #[arg(long, requires = "sessions")]
    stimuli: Option<PathBuf>,
    /// Principal components kept per session.
    #[arg(long, default_value_t = 80)]
    pca_k: usize,
    /// Surrogate datasets to write alongside the population.
    #[arg(long, num_args = 1.., value_name = "KIND")]
    surrogate: Vec<String>,
    /// Seed of the surrogate generators.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "prepared")]
    out: PathBuf,
}

pub fn run(a: &PrepareArgs) -> CliResult<()> {
    let kinds = a
        .surrogate
        .iter()
        .map(|s| SurrogateKind::parse(s))
        .collect::<Result<Vec<_>, _>>()?;
    fs::create_dir_all(&a.out)?;
    let mut outputs = Vec::new();
    let mut inputs = Vec::new();

    let (sessions, stimuli, source) = match (&a.synthetic, &a.sessions) {
        (Some(kv), None) => {
            let mut spec = SyntheticSpec::default();
            for pair in kv {
                let (k, v) = pair
                    .split_once('=')
                    .ok_or_else(|| format!("synthetic override '{pair}' is not key=value"))?;
                spec.set(k, v)?;
            }
            let corpus = make_synthetic_corpus(&spec)?;
            let dir = a.out.join("sessions");
            fs::create_dir_all(&dir)?;
            for s in &corpus.sessions {
                let p = dir.join(format!("{}.nds", s.session_id));
                write_session(&p, s)?;
                outputs.push(p);
            }
            (
                corpus.sessions,
                Some((corpus.images, corpus.image_ids)),
                json!({ "synthetic": spec }),
            )
        }
        (None, Some(dir)) => {
            let dir = data_path(dir);
            let sessions = load_sessions(&dir)?;
            for s in &sessions {
                inputs.push(digest(&dir.join(format!("{}.nds", s.session_id)))?);
            }
            let stimuli = match &a.stimuli {
                Some(p) => {
                    let p = data_path(p);
                    inputs.push(digest(&p)?);
                    Some(read_stimuli(&p)?)
                }
                None => None,
            };
            (sessions, stimuli, json!({ "sessions": dir }))
        }
        _ => return Err("give either --synthetic or --sessions".into()),
    };

    let pop = build_pseudo_population(&sessions, a.pca_k)?;
    let pop_path = a.out.join("population.ndpp");
    pop.save(&pop_path)?;
    outputs.push(pop_path.clone());
    outputs.push(ndreg::data::PseudoPopulation::sidecar(&pop_path));
    log::info!(
        "pseudo-population {}×{} from {} sessions",
        pop.responses.batch(),
        pop.responses.row_len(),
        sessions.len()
    );

    if let Some((images, ids)) = &stimuli {
        let p = a.out.join("stimuli.ndck");
        write_stimuli(&p, images, ids)?;
        outputs.push(p);
    }

    for kind in kinds {
        let s = make_surrogate(&pop, &SurrogateSpec { kind: kind.clone(), seed: a.seed });
        let p = a.out.join(format!("population_{}.ndpp", kind.name()));
        s.save(&p)?;
        outputs.push(ndreg::data::PseudoPopulation::sidecar(&p));
        outputs.push(p);
        log::info!("wrote {} surrogate", kind.name());
    }

    let config = json!({
        "source": source,
        "pca_k": a.pca_k,
        "surrogates": a.surrogate,
        "seed": a.seed,
    });
    let hash = hash_bytes(&serde_json::to_vec(&config)?);
    let mut m = RunManifest::new("prepare", config, hash, inputs);
    m.complete(&outputs, json!({ "rows": pop.responses.batch(), "cols": pop.responses.row_len() }))?;
    m.save(&a.out)?;
    println!("prepared {} files in {}", outputs.len(), a.out.display());
    Ok(())
}
