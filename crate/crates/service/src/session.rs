//! Live dialogue sessions: requirement-plan tracking and turn processing.

use std::fmt;
use std::time::Instant;

use elicit_core::corpus::{filter_resources, PersonalKb, ResourceTriple, UserProfile};
use elicit_core::detector::{detect, Detection, DetectorModel, SentenceInput};
use elicit_core::graph::{PathQuery, TransitionGraph};
use elicit_core::planner::{plan_sequence, PlanRequest, Strategy};
use elicit_core::responder::{ResponderModel, MAX_RESPONSE_LEN};
use elicit_core::{Error as CoreError, Requirement};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Planning,
    Detection,
    Generation,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Planning => "planning",
            Stage::Detection => "detection",
            Stage::Generation => "generation",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TurnError {
    #[error("{stage} failed: {source}")]
    Pipeline {
        stage: Stage,
        #[source]
        source: CoreError,
    },
    #[error("{0}")]
    InvalidInput(String),
}

impl TurnError {
    fn at(stage: Stage) -> impl FnOnce(CoreError) -> TurnError {
        move |source| TurnError::Pipeline { stage, source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineSettings {
    pub beam_size: usize,
    pub max_response_len: usize,
    /// Treat any predicted requirement other than the current node as a
    /// deviation, instead of also tolerating the next one.
    pub strict_deviation: bool,
}

impl Default for EngineSettings {
    fn default() -> Self {
        EngineSettings {
            beam_size: 4,
            max_response_len: MAX_RESPONSE_LEN,
            strict_deviation: false,
        }
    }
}

/// Loaded models, shared read-only by every session.
#[derive(Debug, Clone)]
pub struct Engine {
    pub graph: TransitionGraph,
    pub detector: DetectorModel,
    pub responder: ResponderModel,
    pub settings: EngineSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub strategy: Strategy,
    pub top_k: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            strategy: Strategy::One,
            top_k: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequirementPlan {
    pub path: Vec<Requirement>,
    pub cursor: usize,
    pub completed: Vec<bool>,
}

impl RequirementPlan {
    pub fn new(path: Vec<Requirement>) -> Self {
        assert!(!path.is_empty(), "plans have at least one node");
        let completed = vec![false; path.len()];
        RequirementPlan {
            path,
            cursor: 0,
            completed,
        }
    }

    pub fn current(&self) -> Requirement {
        self.path[self.cursor]
    }

    pub fn next(&self) -> Option<Requirement> {
        self.path.get(self.cursor + 1).copied()
    }

    /// Marks the current node done and moves on, staying on the last node.
    fn advance(&mut self) {
        self.completed[self.cursor] = true;
        self.cursor = (self.cursor + 1).min(self.path.len() - 1);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub utterance: String,
    pub detection: Detection,
    /// Requirement the turn was resolved to; the next turn's previous node.
    pub active: Requirement,
    pub replanned: bool,
    pub selected: Option<ResourceTriple>,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueSession {
    pub session_id: String,
    pub profile: UserProfile,
    pub kb: PersonalKb,
    pub config: SessionConfig,
    pub plan: RequirementPlan,
    pub history: Vec<HistoryEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub detection_ms: f64,
    pub planning_ms: f64,
    pub generation_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnOutcome {
    pub completion: bool,
    pub completion_confidence: f64,
    pub predicted_requirement: Requirement,
    pub requirement_confidence: f64,
    pub previous_requirement: Option<Requirement>,
    pub replanned: bool,
    pub advanced: bool,
    /// Present only when the turn re-planned.
    pub new_plan: Option<Vec<Requirement>>,
    pub plan: RequirementPlan,
    pub selected_triple: Option<ResourceTriple>,
    pub response: String,
    /// `None` when nothing was generated.
    pub lambda_mean: Option<f64>,
    pub timing: Timing,
}

/// Plans from `start` (the default start node when `None`). When no path of
/// the usual length exists the minimum length is relaxed down to the start
/// node alone.
pub fn plan_from(
    graph: &TransitionGraph,
    profile: &UserProfile,
    kb: &PersonalKb,
    config: &SessionConfig,
    start: Option<Requirement>,
) -> elicit_core::Result<Vec<Requirement>> {
    let base = PathQuery {
        start,
        ..PathQuery::default()
    };
    if let Some(s) = start {
        if graph.index_of(s).is_none() {
            return Ok(vec![s]);
        }
    }
    let mut last_err = None;
    for min_len in (1..=base.min_len).rev() {
        let request = PlanRequest {
            strategy: config.strategy,
            top_k: config.top_k,
            query: PathQuery { min_len, ..base },
            normalize: false,
        };
        match plan_sequence(graph, profile, kb, &request) {
            Ok(r) => return Ok(r.path),
            Err(e @ CoreError::NoCandidates { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanUpdate {
    pub replanned: bool,
    pub advanced: bool,
    pub active: Requirement,
}

/// Moves the plan in response to one detection.
///
/// A predicted requirement outside {current, next} re-plans from it. A jump
/// to the next node moves the cursor there. A completed turn then marks the
/// active node done and advances.
pub fn apply_detection(
    plan: &mut RequirementPlan,
    detection: &Detection,
    strict: bool,
    replan: impl FnOnce(Requirement) -> elicit_core::Result<Vec<Requirement>>,
) -> elicit_core::Result<PlanUpdate> {
    let predicted = detection.requirement;
    let on_next = !strict && plan.next() == Some(predicted);
    if predicted != plan.current() && !on_next {
        let path = replan(predicted)?;
        if path.first() != Some(&predicted) {
            return Err(CoreError::InvalidInput(format!(
                "re-plan did not start at `{predicted}`"
            )));
        }
        *plan = RequirementPlan::new(path);
        return Ok(PlanUpdate {
            replanned: true,
            advanced: false,
            active: predicted,
        });
    }
    if on_next {
        plan.cursor += 1;
    }
    let active = plan.current();
    let before = plan.cursor;
    if detection.completed {
        plan.advance();
    }
    Ok(PlanUpdate {
        replanned: false,
        advanced: plan.cursor != before,
        active,
    })
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

impl Engine {
    pub fn create_session(
        &self,
        session_id: impl Into<String>,
        profile: UserProfile,
        kb: PersonalKb,
        config: SessionConfig,
    ) -> Result<DialogueSession, TurnError> {
        if profile.total() == 0 {
            return Err(TurnError::InvalidInput("profile has no entities".into()));
        }
        if config.top_k == 0 {
            return Err(TurnError::InvalidInput("top_k must be at least 1".into()));
        }
        let path = plan_from(&self.graph, &profile, &kb, &config, None).map_err(TurnError::at(Stage::Planning))?;
        Ok(DialogueSession {
            session_id: session_id.into(),
            profile,
            kb,
            config,
            plan: RequirementPlan::new(path),
            history: Vec::new(),
        })
    }

    /// Applies a new strategy/top-k and re-plans from the current node.
    pub fn reconfigure(&self, session: &mut DialogueSession, config: SessionConfig) -> Result<(), TurnError> {
        if config.top_k == 0 {
            return Err(TurnError::InvalidInput("top_k must be at least 1".into()));
        }
        let start = if session.history.is_empty() {
            None
        } else {
            Some(session.plan.current())
        };
        let path = plan_from(&self.graph, &session.profile, &session.kb, &config, start)
            .map_err(TurnError::at(Stage::Planning))?;
        session.config = config;
        session.plan = RequirementPlan::new(path);
        Ok(())
    }

    pub fn process_turn(&self, session: &mut DialogueSession, utterance: &str) -> Result<TurnOutcome, TurnError> {
        if utterance.trim().is_empty() {
            return Err(TurnError::InvalidInput("utterance is empty".into()));
        }
        let t0 = Instant::now();
        let prev = session.history.last().map(|h| h.active);
        let detection =
            detect(&self.detector, &SentenceInput::text(utterance), prev).map_err(TurnError::at(Stage::Detection))?;
        let detection_ms = ms(t0);

        let t1 = Instant::now();
        let mut plan = session.plan.clone();
        let (graph, profile, kb, config) = (&self.graph, &session.profile, &session.kb, &session.config);
        let update = apply_detection(&mut plan, &detection, self.settings.strict_deviation, |start| {
            plan_from(graph, profile, kb, config, Some(start))
        })
        .map_err(TurnError::at(Stage::Planning))?;
        let planning_ms = ms(t1);

        let t2 = Instant::now();
        let resources = filter_resources(&session.kb, update.active);
        let generation = self
            .responder
            .generate(
                update.active,
                utterance,
                &resources,
                self.settings.beam_size,
                self.settings.max_response_len,
            )
            .map_err(TurnError::at(Stage::Generation))?;
        let generation_ms = ms(t2);

        let lambda_mean = (!generation.lambda_trace.is_empty())
            .then(|| generation.lambda_trace.iter().sum::<f64>() / generation.lambda_trace.len() as f64);
        session.plan = plan;
        session.history.push(HistoryEntry {
            utterance: utterance.to_string(),
            detection,
            active: update.active,
            replanned: update.replanned,
            selected: generation.selected_triple.clone(),
            response: generation.text.clone(),
        });
        Ok(TurnOutcome {
            completion: detection.completed,
            completion_confidence: detection.completion_confidence,
            predicted_requirement: detection.requirement,
            requirement_confidence: detection.requirement_confidence,
            previous_requirement: prev,
            replanned: update.replanned,
            advanced: update.advanced,
            new_plan: update.replanned.then(|| session.plan.path.clone()),
            plan: session.plan.clone(),
            selected_triple: generation.selected_triple,
            response: generation.text,
            lambda_mean,
            timing: Timing {
                detection_ms,
                planning_ms,
                generation_ms,
                total_ms: ms(t0),
            },
        })
    }
}
