#![allow(dead_code)]

use elicit_core::corpus::{generate_synthetic_corpus, Corpus, SynthSpec};
use elicit_core::detector::DetectorConfig;
use elicit_core::graph::{EmbedConfig, TransitionGraph};
use elicit_core::responder::{responder_examples, responder_vocab, ResponderArch, ResponderModel};
use elicit_service::artifacts::{train_detector, DetectorRecipe};
use elicit_service::{Engine, EngineSettings};

pub fn small_corpus() -> Corpus {
    generate_synthetic_corpus(&SynthSpec {
        n_users: 20,
        n_dialogues: 120,
        seed: 3,
    })
}

/// Trained detector, untrained small responder: enough to drive sessions.
pub fn small_engine() -> (Engine, Corpus) {
    let corpus = small_corpus();
    let graph = TransitionGraph::build(&corpus.goal_sequences());
    let recipe = DetectorRecipe {
        embed: EmbedConfig {
            dim: 16,
            ..EmbedConfig::default()
        },
        train: DetectorConfig {
            embed_dim: 16,
            ..DetectorConfig::desk()
        },
    };
    let detector = train_detector(&corpus, &graph, &recipe).unwrap();
    let arch = ResponderArch {
        hidden: 8,
        embed_dim: 8,
        scalar_delta: false,
    };
    let responder = ResponderModel::new(responder_vocab(&responder_examples(&corpus)), arch, 1).unwrap();
    let engine = Engine {
        graph,
        detector,
        responder,
        settings: EngineSettings {
            beam_size: 2,
            max_response_len: 12,
            strict_deviation: false,
        },
    };
    (engine, corpus)
}
