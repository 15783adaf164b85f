use elicit_core::checkpoint::Checkpoint;
use elicit_core::corpus::{filter_resources, generate_synthetic_corpus, Corpus, SynthSpec};
use elicit_core::detector::{
    detect, detector_examples, detector_train, detector_vocab, DetectorConfig, DetectorModel, SentenceInput,
};
use elicit_core::graph::{embed_nodes, EmbedConfig, PathQuery, TransitionGraph};
use elicit_core::planner::{plan_sequence, PlanRequest};
use elicit_core::responder::{responder_examples, responder_vocab, ResponderArch, ResponderModel};
use elicit_core::Requirement;

fn corpus() -> Corpus {
    generate_synthetic_corpus(&SynthSpec {
        n_users: 10,
        n_dialogues: 60,
        seed: 5,
    })
}

#[test]
fn corpus_round_trips_through_jsonl() {
    let c = corpus();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    c.save(&path).unwrap();
    let back = Corpus::load(&path).unwrap();
    assert_eq!(back.goal_sequences(), c.goal_sequences());
    assert_eq!(back.entries.len(), c.entries.len());
}

#[test]
fn graph_plans_and_saved_graph_plans_the_same() {
    let c = corpus();
    let g = TransitionGraph::build(&c.goal_sequences());
    let dir = tempfile::tempdir().unwrap();
    g.save(dir.path().join("g.json")).unwrap();
    let g2 = TransitionGraph::load(dir.path().join("g.json")).unwrap();
    assert_eq!(g, g2);
    for e in &c.entries {
        let a = plan_sequence(&g, &e.profile, &e.kb, &PlanRequest::default()).unwrap();
        let b = plan_sequence(&g2, &e.profile, &e.kb, &PlanRequest::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.path[0], Requirement::DailyGreetings);
        assert!((3..=6).contains(&a.path.len()));
        // Every planned step follows an observed transition.
        assert!(a.path.windows(2).all(|w| g.count(w[0], w[1]) > 0));
        assert!(g.enumerate_paths(&PathQuery::default()).unwrap().contains(&a.path));
    }
}

#[test]
fn detector_survives_a_checkpoint() {
    let c = corpus();
    let g = TransitionGraph::build(&c.goal_sequences());
    let nodes = embed_nodes(
        &g,
        &EmbedConfig {
            dim: 8,
            ..EmbedConfig::default()
        },
    )
    .unwrap();
    let examples = detector_examples(&c);
    let cfg = DetectorConfig {
        epochs: 2,
        embed_dim: 8,
        ..DetectorConfig::desk()
    };
    let mut m = DetectorModel::new(detector_vocab(&examples), nodes, cfg.embed_dim, 0).unwrap();
    detector_train(&mut m, &examples, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    m.to_checkpoint().save(dir.path()).unwrap();
    let back = DetectorModel::from_checkpoint(&Checkpoint::load(dir.path()).unwrap()).unwrap();
    let x = SentenceInput::text("play something by jay_chou");
    let (a, b) = (
        detect(&m, &x, Some(Requirement::RecommendMusic)).unwrap(),
        detect(&back, &x, Some(Requirement::RecommendMusic)).unwrap(),
    );
    assert_eq!(a.requirement, b.requirement);
    assert_eq!(a.completed, b.completed);
    assert!((a.requirement_confidence - b.requirement_confidence).abs() < 1e-4);
}

#[test]
fn responder_answers_from_filtered_resources() {
    let c = corpus();
    let ex = responder_examples(&c);
    let arch = ResponderArch {
        hidden: 8,
        embed_dim: 8,
        scalar_delta: false,
    };
    let m = ResponderModel::new(responder_vocab(&ex), arch, 3).unwrap();
    let kb = &c.entries[0].kb;
    let req = Requirement::ALL
        .into_iter()
        .find(|&r| !filter_resources(kb, r).is_empty())
        .unwrap();
    let res = filter_resources(kb, req);
    let g = m.generate(req, "tell me something", &res, 3, 10).unwrap();
    assert!(g.tokens.len() <= 10);
    assert!(res.contains(g.selected_triple.as_ref().unwrap()));
    assert!(g.lambda_trace.iter().all(|&l| l > 0.0 && l < 1.0));
    assert_eq!(m.generate(req, "tell me something", &res, 3, 10).unwrap(), g);
}
