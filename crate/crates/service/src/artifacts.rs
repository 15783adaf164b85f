//! On-disk model layout, loading, and the training recipes the CLI runs.
//!
//! ```text
//! <models>/graph.json
//! <models>/detector/{manifest.json,weights.bin,vocab.txt}
//! <models>/responder/{manifest.json,weights.bin,vocab.txt}
//! <models>/spmlp/{manifest.json,weights.bin}
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use elicit_core::checkpoint::{missing_files, Checkpoint};
use elicit_core::corpus::{
    classify_resource, Corpus, LexiconSimilarity, PersonalKb, ResourceTriple, UserProfile, DEFAULT_THRESHOLD,
};
use elicit_core::detector::{
    detector_examples, detector_train, detector_vocab, DetectorConfig, DetectorModel, CHECKPOINT_KIND as DETECTOR_KIND,
};
use elicit_core::graph::{embed_nodes, EmbedConfig, TransitionGraph};
use elicit_core::planner::{FeatureMode, SpmlpModel};
use elicit_core::responder::{
    responder_examples, responder_train, responder_vocab, ResponderArch, ResponderConfig, ResponderModel,
    CHECKPOINT_KIND as RESPONDER_KIND,
};
use elicit_core::Domain;
use serde::{Deserialize, Serialize};

use crate::session::{Engine, EngineSettings};

pub const SPMLP_KIND: &str = "spmlp";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelPaths {
    pub root: PathBuf,
}

impl ModelPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ModelPaths { root: root.into() }
    }

    pub fn graph(&self) -> PathBuf {
        self.root.join("graph.json")
    }

    pub fn detector(&self) -> PathBuf {
        self.root.join("detector")
    }

    pub fn responder(&self) -> PathBuf {
        self.root.join("responder")
    }

    pub fn spmlp(&self) -> PathBuf {
        self.root.join("spmlp")
    }

    /// Every artifact the engine needs that is not on disk.
    pub fn missing(&self) -> Vec<PathBuf> {
        let mut out = Vec::new();
        if !self.graph().exists() {
            out.push(self.graph());
        }
        out.extend(missing_files(&self.detector()));
        out.extend(missing_files(&self.responder()));
        out
    }

    pub fn load_engine(&self, settings: EngineSettings) -> Result<Engine> {
        let missing = self.missing();
        if !missing.is_empty() {
            let list: Vec<String> = missing.iter().map(|p| format!("  {}", p.display())).collect();
            bail!("missing model artifacts:\n{}", list.join("\n"));
        }
        let graph =
            TransitionGraph::load(self.graph()).with_context(|| format!("loading {}", self.graph().display()))?;
        Ok(Engine {
            graph,
            detector: load_detector(&self.detector())?,
            responder: load_responder(&self.responder())?,
            settings,
        })
    }
}

pub fn load_detector(dir: &Path) -> Result<DetectorModel> {
    let c = Checkpoint::load(dir)?.expect_kind(DETECTOR_KIND, dir)?;
    DetectorModel::from_checkpoint(&c).with_context(|| format!("loading {}", dir.display()))
}

pub fn load_responder(dir: &Path) -> Result<ResponderModel> {
    let c = Checkpoint::load(dir)?.expect_kind(RESPONDER_KIND, dir)?;
    ResponderModel::from_checkpoint(&c).with_context(|| format!("loading {}", dir.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SpmlpMeta {
    mode: FeatureMode,
    hidden: Vec<usize>,
}

pub fn save_spmlp(model: &SpmlpModel, mode: FeatureMode, dir: &Path) -> Result<()> {
    let meta = SpmlpMeta {
        mode,
        hidden: model.hidden.clone(),
    };
    Checkpoint::new(SPMLP_KIND, model.params.clone(), None, serde_json::to_value(meta)?).save(dir)?;
    Ok(())
}

pub fn load_spmlp(dir: &Path) -> Result<(SpmlpModel, FeatureMode)> {
    let c = Checkpoint::load(dir)?.expect_kind(SPMLP_KIND, dir)?;
    let meta: SpmlpMeta = serde_json::from_value(c.config.clone())?;
    let model = SpmlpModel::from_params(meta.mode.width(), &meta.hidden, c.params)?;
    Ok((model, meta.mode))
}

/// Profile as `{domain: [entity, ...]}`.
pub fn parse_profile(user_id: &str, raw: &serde_json::Value) -> Result<UserProfile> {
    let map: std::collections::BTreeMap<String, Vec<String>> =
        serde_json::from_value(raw.clone()).context("profile must map domains to entity lists")?;
    let mut profile = UserProfile::new(user_id);
    for (domain, mut list) in map {
        let d: Domain = domain.parse()?;
        if d.is_wildcard() {
            bail!("profile cannot hold `*` entities");
        }
        let mut seen = std::collections::HashSet::new();
        list.retain(|e| seen.insert(e.clone()));
        profile.entities.insert(d, list);
    }
    Ok(profile)
}

/// Triples as `[s, p, o]` or `[s, p, o, domain]`; unlabeled ones are
/// classified from their predicate.
pub fn parse_kb(user_id: &str, raw: &[Vec<String>]) -> Result<PersonalKb> {
    let sim = LexiconSimilarity::default();
    let mut triples = Vec::with_capacity(raw.len());
    for (i, t) in raw.iter().enumerate() {
        if t.iter().take(3).any(|f| f.trim().is_empty()) {
            bail!("triple {i}: fields must be non-empty");
        }
        triples.push(match t.as_slice() {
            [s, p, o] => ResourceTriple::new(s, p, o, classify_resource(p, &sim, DEFAULT_THRESHOLD)),
            [s, p, o, d] => ResourceTriple::new(s, p, o, d.parse()?),
            _ => bail!("triple {i}: expected 3 or 4 fields, found {}", t.len()),
        });
    }
    Ok(PersonalKb {
        user_id: user_id.to_string(),
        triples,
    })
}

pub fn find_user<'a>(corpus: &'a Corpus, user_id: &str) -> Result<(&'a UserProfile, &'a PersonalKb)> {
    corpus
        .entries
        .iter()
        .find(|e| e.profile.user_id == user_id)
        .map(|e| (&e.profile, &e.kb))
        .with_context(|| format!("user `{user_id}` not found in corpus"))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectorRecipe {
    pub embed: EmbedConfig,
    pub train: DetectorConfig,
}

/// Embeds the graph, then trains a detector on the corpus's user turns.
pub fn train_detector(corpus: &Corpus, graph: &TransitionGraph, recipe: &DetectorRecipe) -> Result<DetectorModel> {
    let examples = detector_examples(corpus);
    let nodes = embed_nodes(graph, &recipe.embed)?;
    let mut model = DetectorModel::new(
        detector_vocab(&examples),
        nodes,
        recipe.train.embed_dim,
        recipe.train.seed,
    )?;
    detector_train(&mut model, &examples, &recipe.train)?;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResponderRecipe {
    pub arch: ResponderArch,
    pub train: ResponderConfig,
    /// Train on at most this many pairs, taken in corpus order.
    pub max_examples: Option<usize>,
}

/// Returns the model and its per-epoch training loss.
pub fn train_responder(corpus: &Corpus, recipe: &ResponderRecipe) -> Result<(ResponderModel, Vec<f64>)> {
    let mut examples = responder_examples(corpus);
    if let Some(n) = recipe.max_examples {
        examples.truncate(n);
    }
    let mut model = ResponderModel::new(responder_vocab(&examples), recipe.arch, recipe.train.seed)?;
    let losses = responder_train(&mut model, &examples, &recipe.train)?;
    Ok((model, losses))
}
