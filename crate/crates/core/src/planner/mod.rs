//! Pre-conversation requirement planning: per-user requirement scores,
//! two-stage top-k path selection, and the learned SP-MLP planner.

mod spmlp;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use spmlp::{
    spmlp_features, spmlp_predict, spmlp_train, FeatureMode, SpmlpConfig, SpmlpExample, SpmlpModel, NONE_CLASS,
    N_CLASSES, N_HEADS,
};

use crate::corpus::{PersonalKb, UserProfile};
use crate::error::{Error, Result};
use crate::graph::{PathQuery, TransitionGraph, DEFAULT_START};
use crate::labels::{Domain, Requirement};

/// Preference satisfaction and knowledge abundance for all 20 requirements,
/// kept as integer numerators over a shared denominator so path sums compare
/// exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequirementScores {
    sat_num: [u64; Requirement::COUNT],
    sat_den: u64,
    abd_num: [u64; Requirement::COUNT],
    abd_den: u64,
}

fn profile_in(profile: &UserProfile, r: Requirement) -> u64 {
    Domain::PROFILE
        .iter()
        .filter(|&&d| r.serves(d))
        .map(|&d| profile.count(d) as u64)
        .sum()
}

fn kb_in(kb: &PersonalKb, r: Requirement) -> u64 {
    kb.triples.iter().filter(|t| r.serves(t.domain)).count() as u64
}

pub fn preference_satisfaction(profile: &UserProfile, r: Requirement) -> Result<f64> {
    let total = profile.total() as u64;
    if total == 0 {
        return Err(Error::ZeroDenominator("profile has no entities"));
    }
    Ok(profile_in(profile, r) as f64 / total as f64)
}

pub fn knowledge_abundance(kb: &PersonalKb, r: Requirement) -> Result<f64> {
    let total = kb.triples.len() as u64;
    if total == 0 {
        return Err(Error::ZeroDenominator("knowledge base is empty"));
    }
    Ok(kb_in(kb, r) as f64 / total as f64)
}

impl RequirementScores {
    pub fn compute(profile: &UserProfile, kb: &PersonalKb) -> Result<Self> {
        let sat_den = profile.total() as u64;
        if sat_den == 0 {
            return Err(Error::ZeroDenominator("profile has no entities"));
        }
        let abd_den = kb.triples.len() as u64;
        if abd_den == 0 {
            return Err(Error::ZeroDenominator("knowledge base is empty"));
        }
        let mut sat_num = [0; Requirement::COUNT];
        let mut abd_num = [0; Requirement::COUNT];
        for r in Requirement::ALL {
            sat_num[r.index()] = profile_in(profile, r);
            abd_num[r.index()] = kb_in(kb, r);
        }
        Ok(RequirementScores {
            sat_num,
            sat_den,
            abd_num,
            abd_den,
        })
    }

    pub fn sat(&self, r: Requirement) -> f64 {
        self.sat_num[r.index()] as f64 / self.sat_den as f64
    }

    pub fn abd(&self, r: Requirement) -> f64 {
        self.abd_num[r.index()] as f64 / self.abd_den as f64
    }

    fn numerator(&self, c: Criterion, path: &[Requirement]) -> u64 {
        let nums = match c {
            Criterion::Sat => &self.sat_num,
            Criterion::Abd => &self.abd_num,
        };
        path.iter().map(|r| nums[r.index()]).sum()
    }

    fn denominator(&self, c: Criterion) -> u64 {
        match c {
            Criterion::Sat => self.sat_den,
            Criterion::Abd => self.abd_den,
        }
    }

    pub fn path_sum(&self, c: Criterion, path: &[Requirement]) -> f64 {
        self.numerator(c, path) as f64 / self.denominator(c) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Sat,
    Abd,
}

impl Criterion {
    fn other(self) -> Criterion {
        match self {
            Criterion::Sat => Criterion::Abd,
            Criterion::Abd => Criterion::Sat,
        }
    }
}

/// Strategy 1 filters by preference satisfaction then picks by knowledge
/// abundance; Strategy 2 does the reverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "perf-only")]
    PerfOnly,
    #[serde(rename = "know-only")]
    KnowOnly,
}

impl Strategy {
    fn first(self) -> Criterion {
        match self {
            Strategy::One | Strategy::PerfOnly => Criterion::Sat,
            Strategy::Two | Strategy::KnowOnly => Criterion::Abd,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::One => "1",
            Strategy::Two => "2",
            Strategy::PerfOnly => "perf-only",
            Strategy::KnowOnly => "know-only",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(Strategy::One),
            "2" => Ok(Strategy::Two),
            "perf-only" => Ok(Strategy::PerfOnly),
            "know-only" => Ok(Strategy::KnowOnly),
            other => Err(Error::InvalidInput(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeScore {
    pub requirement: Requirement,
    pub sat: f64,
    pub abd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub path: Vec<Requirement>,
    pub strategy: Strategy,
    /// `None` for single-criterion plans.
    pub top_k: Option<usize>,
    pub candidate_count: usize,
    pub sat_sum: f64,
    pub abd_sum: f64,
    pub nodes: Vec<NodeScore>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanRequest {
    pub strategy: Strategy,
    pub top_k: usize,
    pub query: PathQuery,
    /// Compare path scores divided by path length.
    pub normalize: bool,
}

impl Default for PlanRequest {
    fn default() -> Self {
        PlanRequest {
            strategy: Strategy::One,
            top_k: 3,
            query: PathQuery::default(),
            normalize: false,
        }
    }
}

fn compare(
    scores: &RequirementScores,
    c: Criterion,
    a: &[Requirement],
    b: &[Requirement],
    normalize: bool,
) -> Ordering {
    let (na, nb) = (scores.numerator(c, a) as u128, scores.numerator(c, b) as u128);
    if normalize {
        (na * b.len() as u128).cmp(&(nb * a.len() as u128))
    } else {
        na.cmp(&nb)
    }
}

/// Index of the best candidate under `c` among `pool`; ties go to the
/// earliest (lexicographically smallest) candidate.
fn argmax(
    scores: &RequirementScores,
    c: Criterion,
    candidates: &[Vec<Requirement>],
    pool: impl Iterator<Item = usize>,
    normalize: bool,
) -> Option<usize> {
    let mut best: Option<usize> = None;
    for i in pool {
        match best {
            Some(b) if compare(scores, c, &candidates[i], &candidates[b], normalize) != Ordering::Greater => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Two-stage selection over candidates given in lexicographic order.
pub fn select_path(
    candidates: &[Vec<Requirement>],
    scores: &RequirementScores,
    strategy: Strategy,
    top_k: usize,
    normalize: bool,
) -> Result<usize> {
    if top_k == 0 {
        return Err(Error::InvalidInput("top_k must be at least 1".into()));
    }
    let first = strategy.first();
    let chosen = match strategy {
        Strategy::PerfOnly | Strategy::KnowOnly => argmax(scores, first, candidates, 0..candidates.len(), normalize),
        Strategy::One | Strategy::Two => {
            let mut order: Vec<usize> = (0..candidates.len()).collect();
            // Stable: equal first-stage scores keep lexicographic order.
            order.sort_by(|&a, &b| compare(scores, first, &candidates[b], &candidates[a], normalize));
            order.truncate(top_k);
            order.sort_unstable();
            argmax(scores, first.other(), candidates, order.into_iter(), normalize)
        }
    };
    chosen.ok_or_else(|| Error::InvalidInput("no candidate paths".into()))
}

fn no_candidates(q: &PathQuery) -> Error {
    Error::NoCandidates {
        start: q.start.unwrap_or(DEFAULT_START).to_string(),
        min_len: q.min_len,
        max_len: q.max_len,
    }
}

fn result(
    path: &[Requirement],
    scores: &RequirementScores,
    strategy: Strategy,
    top_k: Option<usize>,
    candidate_count: usize,
) -> PlanResult {
    PlanResult {
        path: path.to_vec(),
        strategy,
        top_k,
        candidate_count,
        sat_sum: scores.path_sum(Criterion::Sat, path),
        abd_sum: scores.path_sum(Criterion::Abd, path),
        nodes: path
            .iter()
            .map(|&r| NodeScore {
                requirement: r,
                sat: scores.sat(r),
                abd: scores.abd(r),
            })
            .collect(),
    }
}

/// Plans a requirement sequence with Strategy 1 or 2.
pub fn plan_sequence(
    graph: &TransitionGraph,
    profile: &UserProfile,
    kb: &PersonalKb,
    request: &PlanRequest,
) -> Result<PlanResult> {
    if !matches!(request.strategy, Strategy::One | Strategy::Two) {
        return Err(Error::InvalidInput(
            "plan_sequence takes strategy 1 or 2; use plan_single_criterion".into(),
        ));
    }
    let scores = RequirementScores::compute(profile, kb)?;
    let candidates = graph.enumerate_paths(&request.query)?;
    if candidates.is_empty() {
        return Err(no_candidates(&request.query));
    }
    let i = select_path(&candidates, &scores, request.strategy, request.top_k, request.normalize)?;
    Ok(result(
        &candidates[i],
        &scores,
        request.strategy,
        Some(request.top_k),
        candidates.len(),
    ))
}

/// Argmax of one criterion's path sum over all candidates.
pub fn plan_single_criterion(
    graph: &TransitionGraph,
    profile: &UserProfile,
    kb: &PersonalKb,
    criterion: Criterion,
    query: &PathQuery,
    normalize: bool,
) -> Result<PlanResult> {
    let scores = RequirementScores::compute(profile, kb)?;
    let candidates = graph.enumerate_paths(query)?;
    if candidates.is_empty() {
        return Err(no_candidates(query));
    }
    let strategy = match criterion {
        Criterion::Sat => Strategy::PerfOnly,
        Criterion::Abd => Strategy::KnowOnly,
    };
    let i = select_path(&candidates, &scores, strategy, 1, normalize)?;
    Ok(result(&candidates[i], &scores, strategy, None, candidates.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ResourceTriple;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest, Strategy as _};
    use Requirement::*;

    fn kb(domains: &[(Domain, usize)]) -> PersonalKb {
        let mut triples = Vec::new();
        for &(d, n) in domains {
            for i in 0..n {
                triples.push(ResourceTriple::new(&format!("s{i}"), "p", &format!("o{i}"), d));
            }
        }
        PersonalKb {
            user_id: "u".into(),
            triples,
        }
    }

    #[test]
    fn sat_examples() {
        let music = UserProfile::new("u").with(Domain::Music, &["a", "b", "c"]);
        assert_eq!(preference_satisfaction(&music, PlayMusic).unwrap(), 1.0);
        assert_eq!(preference_satisfaction(&music, AskTheWeather).unwrap(), 0.0);
        let mixed = UserProfile::new("u")
            .with(Domain::Music, &["a", "b", "c"])
            .with(Domain::Movie, &["m", "n"])
            .with(Domain::Star, &["s1", "s2", "s3", "s4", "s5"]);
        assert_eq!(preference_satisfaction(&mixed, RecommendMovie).unwrap(), 0.2);
        assert!(preference_satisfaction(&UserProfile::new("u"), PlayMusic).is_err());
    }

    #[test]
    fn abd_examples() {
        assert_eq!(
            knowledge_abundance(&kb(&[(Domain::Movie, 5)]), RecommendMovie).unwrap(),
            1.0
        );
        assert_eq!(knowledge_abundance(&kb(&[(Domain::Movie, 5)]), Goodbye).unwrap(), 0.0);
        let mixed = kb(&[(Domain::News, 4), (Domain::Music, 3), (Domain::Wildcard, 3)]);
        assert_eq!(knowledge_abundance(&mixed, NewsOrder).unwrap(), 0.4);
        assert_eq!(knowledge_abundance(&mixed, Goodbye).unwrap(), 0.0);
        assert!(knowledge_abundance(&kb(&[]), NewsOrder).is_err());
    }

    fn fixture() -> (TransitionGraph, UserProfile, PersonalKb) {
        let g = TransitionGraph::build(&[
            vec![DailyGreetings, ChitchatAboutCelebrities, PlayMusic, Goodbye],
            vec![DailyGreetings, RecommendMovie, AskMovieName, Goodbye],
            vec![DailyGreetings, AskTheWeather, Goodbye],
            vec![ChitchatAboutCelebrities, RecommendMovie],
        ]);
        let p = UserProfile::new("u")
            .with(Domain::Music, &["a", "b", "c"])
            .with(Domain::Movie, &["m"]);
        let k = kb(&[(Domain::Movie, 4), (Domain::Music, 1), (Domain::Weather, 2)]);
        (g, p, k)
    }

    #[test]
    fn strategies_diverge_on_fixture() {
        let (g, p, k) = fixture();
        let req = |strategy, top_k| PlanRequest {
            strategy,
            top_k,
            ..PlanRequest::default()
        };
        let s1 = plan_sequence(&g, &p, &k, &req(Strategy::One, 1)).unwrap();
        assert_eq!(s1.path, vec![DailyGreetings, ChitchatAboutCelebrities, PlayMusic]);
        let s2 = plan_sequence(&g, &p, &k, &req(Strategy::Two, 1)).unwrap();
        assert_eq!(s2.path[..3], [DailyGreetings, ChitchatAboutCelebrities, RecommendMovie]);
        assert_ne!(s1.path, s2.path);

        // With top_k covering everything, each strategy reduces to the other
        // criterion's argmax.
        let all = s1.candidate_count;
        let know = plan_single_criterion(&g, &p, &k, Criterion::Abd, &PathQuery::default(), false).unwrap();
        assert_eq!(
            plan_sequence(&g, &p, &k, &req(Strategy::One, all)).unwrap().path,
            know.path
        );
        let perf = plan_single_criterion(&g, &p, &k, Criterion::Sat, &PathQuery::default(), false).unwrap();
        assert_eq!(
            plan_sequence(&g, &p, &k, &req(Strategy::Two, all + 5)).unwrap().path,
            perf.path
        );
    }

    #[test]
    fn single_candidate_returned_by_all() {
        let g = TransitionGraph::build(&[vec![DailyGreetings, PlayMusic, Goodbye]]);
        let p = UserProfile::new("u").with(Domain::Music, &["a"]);
        let k = kb(&[(Domain::Music, 1)]);
        for strategy in [Strategy::One, Strategy::Two] {
            let r = plan_sequence(
                &g,
                &p,
                &k,
                &PlanRequest {
                    strategy,
                    ..PlanRequest::default()
                },
            )
            .unwrap();
            assert_eq!(r.path, vec![DailyGreetings, PlayMusic, Goodbye]);
            assert_eq!(r.candidate_count, 1);
        }
        for c in [Criterion::Sat, Criterion::Abd] {
            let r = plan_single_criterion(&g, &p, &k, c, &PathQuery::default(), false).unwrap();
            assert_eq!(r.path.len(), 3);
        }
    }

    #[test]
    fn no_candidates_error_and_bad_strategy() {
        let g = TransitionGraph::build(&[vec![DailyGreetings, Goodbye]]);
        let p = UserProfile::new("u").with(Domain::Music, &["a"]);
        let k = kb(&[(Domain::Music, 1)]);
        let err = plan_sequence(&g, &p, &k, &PlanRequest::default()).unwrap_err();
        assert!(matches!(err, Error::NoCandidates { .. }));
        let bad = PlanRequest {
            strategy: Strategy::PerfOnly,
            ..PlanRequest::default()
        };
        assert!(plan_sequence(&g, &p, &k, &bad).is_err());
    }

    #[test]
    fn normalization_prefers_dense_short_paths() {
        let g = TransitionGraph::build(&[
            vec![DailyGreetings, PlayMusic, MusicOrder],
            vec![DailyGreetings, AskTime, AskTheDate, PlayMusic, Goodbye],
        ]);
        let p = UserProfile::new("u")
            .with(Domain::Music, &["a", "b"])
            .with(Domain::Weather, &["c"]);
        let k = kb(&[(Domain::Music, 1)]);
        let q = PathQuery::default();
        let raw = plan_single_criterion(&g, &p, &k, Criterion::Sat, &q, false).unwrap();
        let norm = plan_single_criterion(&g, &p, &k, Criterion::Sat, &q, true).unwrap();
        assert_eq!(raw.path.len(), 5);
        assert_eq!(norm.path, vec![DailyGreetings, PlayMusic, MusicOrder]);
    }

    #[test]
    fn strategy_text_round_trip() {
        for s in [Strategy::One, Strategy::Two, Strategy::PerfOnly, Strategy::KnowOnly] {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{s}\""));
        }
    }

    fn arb_profile() -> impl proptest::strategy::Strategy<Value = Vec<usize>> {
        prop::collection::vec(0usize..6, 7).prop_filter("non-empty", |v| v.iter().sum::<usize>() > 0)
    }

    fn profile_from(counts: &[usize], mult: usize) -> UserProfile {
        let mut p = UserProfile::new("u");
        for (d, &n) in Domain::PROFILE.iter().zip(counts) {
            let names: Vec<String> = (0..n * mult).map(|i| format!("e{i}")).collect();
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            p = p.with(*d, &refs);
        }
        p
    }

    proptest! {
        #[test]
        fn sat_ratio_invariance(counts in arb_profile(), mult in 1usize..5, r in 0usize..20) {
            let r = Requirement::from_index(r).unwrap();
            let a = preference_satisfaction(&profile_from(&counts, 1), r).unwrap();
            let b = preference_satisfaction(&profile_from(&counts, mult), r).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn strategy_one_survives_filter(counts in arb_profile(), top_k in 1usize..9) {
            let (g, _, k) = fixture();
            let p = profile_from(&counts, 1);
            let scores = RequirementScores::compute(&p, &k).unwrap();
            let cands = g.enumerate_paths(&PathQuery::default()).unwrap();
            let i = select_path(&cands, &scores, Strategy::One, top_k, false).unwrap();
            let sat = |j: usize| scores.numerator(Criterion::Sat, &cands[j]);
            let beaten = (0..cands.len()).filter(|&j| j != i && sat(j) <= sat(i)).count();
            prop_assert!(beaten >= cands.len().saturating_sub(top_k));
        }
    }
}
