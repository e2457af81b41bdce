//! Small seeded corpora and configs shared by the integration tests.

use trajcql::config::RunConfig;
use trajcql::cql::TrainingSet;
use trajcql::pipeline::training_set;
use trajcql::synthgen::{generate_corpus, CropArchive, SynthCorpus};

/// A run config with a narrow network and a small corpus, cheap enough for
/// debug-speed tests.
pub fn tiny_config(count: usize, epochs: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("synth_count", count.to_string()),
        ("synth_per_scene", "2".into()),
        ("crop_size", "16".into()),
        ("conv_channels", "4,8".into()),
        ("d_model", "16".into()),
        ("heads", "2".into()),
        ("layers", "1".into()),
        ("freq_pairs", "4".into()),
        ("coord_dim", "8".into()),
        ("state_hidden", "32".into()),
        ("state_dim", "16".into()),
        ("head_hidden", "32".into()),
        ("mag_hidden", "16".into()),
        ("epochs", epochs.to_string()),
        ("bc_epochs", epochs.to_string()),
        ("batch_size", "4".into()),
    ] {
        cfg.set(k, &v).unwrap_or_else(|e| panic!("{k}: {e}"));
    }
    cfg
}

pub struct Fixture {
    pub cfg: RunConfig,
    pub corpus: SynthCorpus,
    pub crops: CropArchive,
    pub train: TrainingSet,
}

pub fn fixture(cfg: RunConfig) -> Fixture {
    let corpus = generate_corpus(&cfg.synth).expect("corpus");
    let e = &cfg.model.encoder;
    let crops = CropArchive::render(&corpus, e.crop_size, e.crop_extent_px).expect("crops");
    let train = training_set(&cfg, &corpus.train, &crops).expect("training set");
    Fixture { cfg, corpus, crops, train }
}

pub fn split_set(f: &Fixture, split: &str) -> TrainingSet {
    let trajs = match split {
        "train" => &f.corpus.train,
        "val" => &f.corpus.val,
        "test" => &f.corpus.test,
        other => panic!("unknown split {other}"),
    };
    training_set(&f.cfg, trajs, &f.crops).expect("training set")
}
