//! Dialogue corpora: profiles, personal knowledge bases, annotated turns.
//!
//! One JSON object per line:
//!
//! ```text
//! {"user_id": str, "profile": {domain: [entity, ...]},
//!  "kb": [[s, p, o], ...] | [[s, p, o, domain], ...],
//!  "goal_sequence": [req, ...],
//!  "turns": [{"speaker": "user"|"bot", "utterance": str,
//!             "requirement": req, "completed": bool}, ...]}
//! ```
//!
//! `completed` and `goal_sequence` may be omitted and are then derived;
//! unlabeled triples are labeled with [`classify_resource`] on load. Turns
//! may carry an optional `knowledge` triple naming the fact a bot turn
//! mentions.

mod classify;
pub mod synth;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{Domain, Requirement};

pub use classify::{classify_resource, LexiconSimilarity, Similarity, DEFAULT_THRESHOLD};
pub use synth::{generate_synthetic_corpus, template_items, SynthSpec, TemplateItem};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct UserProfile {
    pub user_id: String,
    /// Preferred entities per profile domain.
    pub entities: BTreeMap<Domain, Vec<String>>,
}

impl UserProfile {
    pub fn new(user_id: impl Into<String>) -> Self {
        UserProfile {
            user_id: user_id.into(),
            entities: BTreeMap::new(),
        }
    }

    pub fn with(mut self, domain: Domain, entities: &[&str]) -> Self {
        self.entities
            .insert(domain, entities.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn count(&self, domain: Domain) -> usize {
        self.entities.get(&domain).map_or(0, Vec::len)
    }

    pub fn total(&self) -> usize {
        self.entities.values().map(Vec::len).sum()
    }

    fn normalize(&mut self) -> Result<()> {
        for (domain, list) in &mut self.entities {
            if domain.is_wildcard() {
                return Err(Error::Schema("profile cannot hold `*` entities".into()));
            }
            let mut seen = HashSet::new();
            list.retain(|e| seen.insert(e.clone()));
            if list.iter().any(|e| e.trim().is_empty()) {
                return Err(Error::Schema(format!("empty entity in {domain} profile")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResourceTriple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    pub domain: Domain,
}

impl ResourceTriple {
    pub fn new(subject: &str, predicate: &str, object: &str, domain: Domain) -> Self {
        ResourceTriple {
            subject: subject.to_string(),
            predicate: predicate.to_string(),
            object: object.to_string(),
            domain,
        }
    }

    pub fn spo(&self) -> [&str; 3] {
        [&self.subject, &self.predicate, &self.object]
    }

    pub fn same_fact(&self, other: &ResourceTriple) -> bool {
        self.spo() == other.spo()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct PersonalKb {
    pub user_id: String,
    pub triples: Vec<ResourceTriple>,
}

impl PersonalKb {
    pub fn count(&self, domain: Domain) -> usize {
        self.triples.iter().filter(|t| t.domain == domain).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Bot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub utterance: String,
    pub requirement: Requirement,
    pub completed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knowledge: Option<[String; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueRecord {
    pub user_id: String,
    pub turns: Vec<Turn>,
    pub goal_sequence: Vec<Requirement>,
}

impl DialogueRecord {
    /// Requirement runs in turn order, adjacent repeats collapsed.
    pub fn project_goals(turns: &[Turn]) -> Vec<Requirement> {
        let mut out: Vec<Requirement> = Vec::new();
        for t in turns {
            if out.last() != Some(&t.requirement) {
                out.push(t.requirement);
            }
        }
        out
    }

    pub fn user_turns(&self) -> impl Iterator<Item = (usize, &Turn)> {
        self.turns
            .iter()
            .enumerate()
            .filter(|(_, t)| t.speaker == Speaker::User)
    }
}

/// A turn is completed iff it is the last turn of its requirement run.
pub fn derive_completion(requirements: &[Requirement]) -> Vec<bool> {
    (0..requirements.len())
        .map(|i| i + 1 == requirements.len() || requirements[i + 1] != requirements[i])
        .collect()
}

/// One corpus line: a dialogue with the profile and KB it was grounded on.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub profile: UserProfile,
    pub kb: PersonalKb,
    pub dialogue: DialogueRecord,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub entries: Vec<CorpusEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawLine {
    user_id: String,
    #[serde(default)]
    profile: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    kb: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    goal_sequence: Option<Vec<String>>,
    turns: Vec<RawTurn>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawTurn {
    speaker: Speaker,
    utterance: String,
    requirement: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    completed: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    knowledge: Option<Vec<String>>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn profiles(&self) -> impl Iterator<Item = &UserProfile> {
        self.entries.iter().map(|e| &e.profile)
    }

    pub fn kbs(&self) -> impl Iterator<Item = &PersonalKb> {
        self.entries.iter().map(|e| &e.kb)
    }

    pub fn dialogues(&self) -> impl Iterator<Item = &DialogueRecord> {
        self.entries.iter().map(|e| &e.dialogue)
    }

    pub fn goal_sequences(&self) -> Vec<Vec<Requirement>> {
        self.dialogues().map(|d| d.goal_sequence.clone()).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &LexiconSimilarity::default(), DEFAULT_THRESHOLD)
    }

    /// Parses JSONL text; line numbers in errors are 1-based.
    pub fn parse(text: &str, sim: &dyn Similarity, threshold: f64) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let line_no = i + 1;
            let raw: RawLine = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            let entry = Self::entry_from_raw(raw, sim, threshold).map_err(|e| match e {
                Error::Parse { .. } => e,
                other => Error::Parse {
                    line: line_no,
                    message: other.to_string(),
                },
            })?;
            entries.push(entry);
        }
        Ok(Corpus { entries })
    }

    fn entry_from_raw(raw: RawLine, sim: &dyn Similarity, threshold: f64) -> Result<CorpusEntry> {
        let mut profile = UserProfile::new(raw.user_id.clone());
        for (domain, list) in raw.profile {
            let d: Domain = domain.parse()?;
            profile.entities.insert(d, list);
        }
        profile.normalize()?;

        let mut triples = Vec::with_capacity(raw.kb.len());
        for t in raw.kb {
            if t.iter().take(3).any(|f| f.trim().is_empty()) {
                return Err(Error::Schema("triple fields must be non-empty".into()));
            }
            let triple = match t.as_slice() {
                [s, p, o] => {
                    let domain = classify_resource(p, sim, threshold);
                    ResourceTriple::new(s, p, o, domain)
                }
                [s, p, o, d] => ResourceTriple::new(s, p, o, d.parse()?),
                _ => {
                    return Err(Error::Schema(format!(
                        "triple must have 3 or 4 fields, found {}",
                        t.len()
                    )))
                }
            };
            triples.push(triple);
        }

        if raw.turns.is_empty() {
            return Err(Error::Schema("dialogue has no turns".into()));
        }
        let requirements: Vec<Requirement> = raw.turns.iter().map(|t| t.requirement.parse()).collect::<Result<_>>()?;
        let derived = derive_completion(&requirements);
        let mut turns = Vec::with_capacity(raw.turns.len());
        for ((t, req), done) in raw.turns.into_iter().zip(requirements).zip(derived) {
            let knowledge = match t.knowledge {
                None => None,
                Some(k) => Some(
                    <[String; 3]>::try_from(k)
                        .map_err(|k| Error::Schema(format!("knowledge must be [s, p, o], found {} fields", k.len())))?,
                ),
            };
            turns.push(Turn {
                speaker: t.speaker,
                utterance: t.utterance,
                requirement: req,
                completed: t.completed.unwrap_or(done),
                knowledge,
            });
        }
        let projected = DialogueRecord::project_goals(&turns);
        if let Some(goals) = raw.goal_sequence {
            let goals: Vec<Requirement> = goals.iter().map(|g| g.parse()).collect::<Result<_>>()?;
            if goals != projected {
                return Err(Error::Schema(
                    "goal_sequence is not the in-order projection of turn requirements".into(),
                ));
            }
        }
        Ok(CorpusEntry {
            kb: PersonalKb {
                user_id: raw.user_id.clone(),
                triples,
            },
            dialogue: DialogueRecord {
                user_id: raw.user_id,
                turns,
                goal_sequence: projected,
            },
            profile,
        })
    }

    /// Normalized JSONL: every optional field written out explicitly.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let raw = RawLine {
                user_id: e.dialogue.user_id.clone(),
                profile: e
                    .profile
                    .entities
                    .iter()
                    .map(|(d, l)| (d.name().to_string(), l.clone()))
                    .collect(),
                kb: e
                    .kb
                    .triples
                    .iter()
                    .map(|t| {
                        vec![
                            t.subject.clone(),
                            t.predicate.clone(),
                            t.object.clone(),
                            t.domain.name().to_string(),
                        ]
                    })
                    .collect(),
                goal_sequence: Some(e.dialogue.goal_sequence.iter().map(|r| r.name().to_string()).collect()),
                turns: e
                    .dialogue
                    .turns
                    .iter()
                    .map(|t| RawTurn {
                        speaker: t.speaker,
                        utterance: t.utterance.clone(),
                        requirement: t.requirement.name().to_string(),
                        completed: Some(t.completed),
                        knowledge: t.knowledge.clone().map(Vec::from),
                    })
                    .collect(),
            };
            out.push_str(&serde_json::to_string(&raw).expect("corpus line serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    /// Random 70/10/20 partition; sizes are `⌊0.7n⌋`, `⌊0.1n⌋`, remainder.
    pub fn split(&self, seed: u64) -> Result<Split> {
        let n = self.len();
        if n < 10 {
            return Err(Error::InvalidInput(format!(
                "corpus has {n} dialogues; splitting needs at least 10"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = n * 7 / 10;
        let n_dev = n / 10;
        let take = |idx: &[usize]| Corpus {
            entries: idx.iter().map(|&i| self.entries[i].clone()).collect(),
        };
        Ok(Split {
            train: take(&order[..n_train]),
            dev: take(&order[n_train..n_train + n_dev]),
            test: take(&order[n_train + n_dev..]),
        })
    }
}

/// Triples whose domain serves `requirement`, in KB order.
pub fn filter_resources(kb: &PersonalKb, requirement: Requirement) -> Vec<ResourceTriple> {
    kb.triples
        .iter()
        .filter(|t| requirement.serves(t.domain))
        .cloned()
        .collect()
}
