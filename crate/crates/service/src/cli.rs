//! The `elicit` command-line tool.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use elicit_core::corpus::{generate_synthetic_corpus, Corpus, SynthSpec};
use elicit_core::detector::{detect, detector_examples, DetectorConfig};
use elicit_core::graph::{EmbedConfig, PathQuery, TransitionGraph};
use elicit_core::metrics::{
    averaged_goal_recall, bleu2, classification_metrics, corpus_bleu2, dist2, exact_match, knowledge_prf_text,
    knowledge_prf_triples, perplexity, MetricReport, Triple,
};
use elicit_core::planner::{
    plan_sequence, plan_single_criterion, spmlp_features, spmlp_predict, spmlp_train, Criterion, FeatureMode,
    PlanRequest, PlanResult, SpmlpConfig, SpmlpExample, Strategy,
};
use elicit_core::responder::{responder_examples, ResponderArch, ResponderConfig};
use elicit_core::text::{tokenize, TokenizerMode};
use elicit_core::Requirement;
use serde::Serialize;

use crate::artifacts::{
    find_user, load_responder, load_spmlp, parse_kb, save_spmlp, train_detector, train_responder, DetectorRecipe,
    ModelPaths, ResponderRecipe,
};
use crate::config::ServiceConfig;
use crate::http::{router, AppState};
use crate::session::{Engine, SessionConfig, TurnOutcome};
use crate::store::SessionStore;

#[derive(Debug, Parser)]
#[command(
    name = "elicit",
    version,
    about = "Plan, track and answer user requirements in dialogue"
)]
pub struct Cli {
    /// JSON config file (defaults to $ELICIT_CONFIG, then built-in values).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Model directory; overrides the config and $ELICIT_MODELS_DIR.
    #[arg(long, global = true)]
    pub models_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate and label a corpus, then write it with a 70/10/20 split.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Write a templated synthetic corpus and its split.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 60)]
        users: usize,
        #[arg(long, default_value_t = 400)]
        dialogues: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Count requirement transitions over a corpus's goal sequences.
    BuildGraph {
        #[arg(long)]
        corpus: PathBuf,
        /// Defaults to <models>/graph.json.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    #[command(subcommand)]
    Train(TrainCommand),
    /// Plan a requirement sequence for one corpus user.
    Plan {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        user: String,
        #[arg(long, default_value = "1")]
        strategy: Strategy,
        #[arg(long, default_value_t = 3)]
        top_k: usize,
        #[arg(long)]
        start: Option<Requirement>,
        #[arg(long)]
        normalize: bool,
    },
    /// Answer one utterance from a knowledge base file.
    Generate {
        #[arg(long)]
        requirement: Requirement,
        #[arg(long)]
        utterance: String,
        /// JSON array of [s, p, o] or [s, p, o, domain] triples.
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        beam: Option<usize>,
    },
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        host: Option<String>,
    },
    /// Converse on stdin as a corpus user.
    Chat {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        user: String,
        #[arg(long, default_value = "1")]
        strategy: Strategy,
        #[arg(long, default_value_t = 3)]
        top_k: usize,
        /// One JSON object per line: the initial plan, then each turn outcome.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum TrainCommand {
    Detector(DetectorArgs),
    Responder(ResponderArgs),
    Spmlp(SpmlpArgs),
}

#[derive(Debug, Args)]
pub struct DetectorArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Defaults to <models>/graph.json.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Defaults to <models>/detector.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// From-scratch settings for small corpora instead of the fine-tuning
    /// defaults.
    #[arg(long)]
    pub desk: bool,
    /// Node embedding and sentence vector width.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ResponderArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Defaults to <models>/responder.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub desk: bool,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_examples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Features {
    Of,
    Af,
}

impl From<Features> for FeatureMode {
    fn from(f: Features) -> Self {
        match f {
            Features::Of => FeatureMode::Original,
            Features::Af => FeatureMode::Augmented,
        }
    }
}

#[derive(Debug, Args)]
pub struct SpmlpArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Defaults to <models>/spmlp.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Features::Af)]
    pub features: Features,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Planner {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    PerfOnly,
    KnowOnly,
    Spmlp,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// EM, AGR and BLEU-2 of planned sequences against gold goal sequences.
    Planning {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = Planner::One)]
        strategy: Planner,
        #[arg(long, default_value_t = 3)]
        top_k: usize,
        /// Also print a CSV row.
        #[arg(long)]
        csv: bool,
    },
    /// Completion and requirement classification on user turns.
    Detection {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        csv: bool,
    },
    /// Knowledge selection and response quality on bot turns.
    Generation {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        csv: bool,
    },
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(v)?)?;
    Ok(())
}

fn emit(report: &MetricReport, csv: bool) -> Result<()> {
    print_json(report)?;
    if csv {
        write!(std::io::stdout().lock(), "{}", report.to_csv())?;
    }
    Ok(())
}

fn write_split(corpus: &Corpus, out_dir: &Path, seed: u64) -> Result<serde_json::Value> {
    std::fs::create_dir_all(out_dir)?;
    corpus.save(out_dir.join("corpus.jsonl"))?;
    let split = corpus.split(seed)?;
    split.train.save(out_dir.join("train.jsonl"))?;
    split.dev.save(out_dir.join("dev.jsonl"))?;
    split.test.save(out_dir.join("test.jsonl"))?;
    let turns: usize = corpus.dialogues().map(|d| d.turns.len()).sum();
    Ok(serde_json::json!({
        "dialogues": corpus.len(),
        "turns": turns,
        "train": split.train.len(),
        "dev": split.dev.len(),
        "test": split.test.len(),
        "out_dir": out_dir,
    }))
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    Corpus::load(path).with_context(|| format!("loading corpus {}", path.display()))
}

fn load_graph(path: &Path) -> Result<TransitionGraph> {
    TransitionGraph::load(path).with_context(|| format!("loading graph {}", path.display()))
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = ServiceConfig::load(cli.config.as_deref())?;
    if let Some(m) = cli.models_dir {
        cfg.models_dir = m;
    }
    let paths = ModelPaths::new(&cfg.models_dir);
    match cli.command {
        Command::Ingest { input, out_dir, seed } => {
            let corpus = load_corpus(&input)?;
            print_json(&write_split(&corpus, &out_dir, seed)?)
        }
        Command::Synth {
            out_dir,
            users,
            dialogues,
            seed,
        } => {
            let corpus = generate_synthetic_corpus(&SynthSpec {
                n_users: users,
                n_dialogues: dialogues,
                seed,
            });
            print_json(&write_split(&corpus, &out_dir, seed)?)
        }
        Command::BuildGraph { corpus, output } => {
            let c = load_corpus(&corpus)?;
            let g = TransitionGraph::build(&c.goal_sequences());
            let out = output.unwrap_or_else(|| paths.graph());
            if let Some(dir) = out.parent() {
                std::fs::create_dir_all(dir)?;
            }
            g.save(&out)?;
            print_json(&serde_json::json!({
                "output": out,
                "nodes": g.len(),
                "edges": g.edge_count(),
                "transitions": g.total_count(),
            }))
        }
        Command::Train(t) => run_train(t, &paths),
        Command::Plan {
            corpus,
            user,
            strategy,
            top_k,
            start,
            normalize,
        } => {
            let c = load_corpus(&corpus)?;
            let (profile, kb) = find_user(&c, &user)?;
            let graph = load_graph(&paths.graph())?;
            let query = PathQuery {
                start,
                ..PathQuery::default()
            };
            let result = plan_with(&graph, profile, kb, strategy, top_k, query, normalize)?;
            print_json(&result)
        }
        Command::Generate {
            requirement,
            utterance,
            kb,
            beam,
        } => {
            let text = std::fs::read_to_string(&kb).with_context(|| format!("reading {}", kb.display()))?;
            let raw: Vec<Vec<String>> = serde_json::from_str(&text).context("kb must be a JSON array of triples")?;
            let kb = parse_kb("cli", &raw)?;
            let model = load_responder(&paths.responder())?;
            let resources = elicit_core::corpus::filter_resources(&kb, requirement);
            let beam = beam.unwrap_or(cfg.engine.beam_size);
            let g = model.generate(requirement, &utterance, &resources, beam, cfg.engine.max_response_len)?;
            print_json(&serde_json::json!({
                "response": g.text,
                "selected_triple": g.selected_triple,
                "lambda_trace": g.lambda_trace,
            }))
        }
        Command::Eval(e) => run_eval(e, &paths, &cfg),
        Command::Serve { port, host } => {
            let engine = paths.load_engine(cfg.engine)?;
            let store = cfg.sessions_dir.as_ref().map(SessionStore::open).transpose()?;
            let addr = format!("{}:{}", host.unwrap_or(cfg.host), port.unwrap_or(cfg.port));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&addr)
                    .await
                    .with_context(|| format!("binding {addr}"))?;
                eprintln!("listening on {}", listener.local_addr()?);
                let app = router(AppState::new(Arc::new(engine), store));
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await?;
                Ok(())
            })
        }
        Command::Chat {
            corpus,
            user,
            strategy,
            top_k,
            json,
        } => {
            let engine = paths.load_engine(cfg.engine)?;
            let c = load_corpus(&corpus)?;
            let (profile, kb) = find_user(&c, &user)?;
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            chat(
                &engine,
                profile.clone(),
                kb.clone(),
                SessionConfig { strategy, top_k },
                stdin.lock(),
                &mut stdout.lock(),
                json,
            )
        }
    }
}

fn plan_with(
    graph: &TransitionGraph,
    profile: &elicit_core::corpus::UserProfile,
    kb: &elicit_core::corpus::PersonalKb,
    strategy: Strategy,
    top_k: usize,
    query: PathQuery,
    normalize: bool,
) -> Result<PlanResult> {
    Ok(match strategy {
        Strategy::One | Strategy::Two => plan_sequence(
            graph,
            profile,
            kb,
            &PlanRequest {
                strategy,
                top_k,
                query,
                normalize,
            },
        )?,
        Strategy::PerfOnly => plan_single_criterion(graph, profile, kb, Criterion::Sat, &query, normalize)?,
        Strategy::KnowOnly => plan_single_criterion(graph, profile, kb, Criterion::Abd, &query, normalize)?,
    })
}

fn run_train(t: TrainCommand, paths: &ModelPaths) -> Result<()> {
    match t {
        TrainCommand::Detector(a) => {
            let corpus = load_corpus(&a.corpus)?;
            let graph = load_graph(&a.graph.unwrap_or_else(|| paths.graph()))?;
            let mut train = if a.desk {
                DetectorConfig::desk()
            } else {
                DetectorConfig::default()
            };
            train.seed = a.seed;
            if let Some(v) = a.embed_dim {
                train.embed_dim = v;
            }
            if let Some(v) = a.epochs {
                train.epochs = v;
            }
            if let Some(v) = a.lr {
                train.lr = v;
            }
            let mut embed = EmbedConfig {
                seed: a.seed,
                ..EmbedConfig::default()
            };
            if let Some(d) = a.dim {
                embed.dim = d;
            }
            let model = train_detector(&corpus, &graph, &DetectorRecipe { embed, train })?;
            let out = a.output.unwrap_or_else(|| paths.detector());
            model.to_checkpoint().save(&out)?;
            print_json(&serde_json::json!({
                "output": out,
                "examples": detector_examples(&corpus).len(),
                "dim": model.dim,
                "config": train,
            }))
        }
        TrainCommand::Responder(a) => {
            let corpus = load_corpus(&a.corpus)?;
            let mut train = if a.desk {
                ResponderConfig::desk()
            } else {
                ResponderConfig::default()
            };
            train.seed = a.seed;
            if let Some(v) = a.epochs {
                train.epochs = v;
            }
            if let Some(v) = a.lr {
                train.lr = v;
            }
            let mut arch = ResponderArch::default();
            if let Some(v) = a.hidden {
                arch.hidden = v;
            }
            if let Some(v) = a.embed_dim {
                arch.embed_dim = v;
            }
            let recipe = ResponderRecipe {
                arch,
                train,
                max_examples: a.max_examples,
            };
            let (model, losses) = train_responder(&corpus, &recipe)?;
            let out = a.output.unwrap_or_else(|| paths.responder());
            model.to_checkpoint().save(&out)?;
            print_json(&serde_json::json!({
                "output": out,
                "vocab": model.vocab.len(),
                "epoch_loss": losses,
                "config": train,
                "arch": arch,
            }))
        }
        TrainCommand::Spmlp(a) => {
            let corpus = load_corpus(&a.corpus)?;
            let mode: FeatureMode = a.features.into();
            let examples: Vec<SpmlpExample> = corpus
                .entries
                .iter()
                .map(|e| SpmlpExample {
                    features: spmlp_features(&e.profile, &e.kb, mode),
                    sequence: e.dialogue.goal_sequence.clone(),
                })
                .collect();
            let mut cfg = SpmlpConfig {
                seed: a.seed,
                ..SpmlpConfig::default()
            };
            if let Some(v) = a.epochs {
                cfg.epochs = v;
            }
            let model = spmlp_train(&examples, mode, &cfg)?;
            let out = a.output.unwrap_or_else(|| paths.spmlp());
            save_spmlp(&model, mode, &out)?;
            print_json(&serde_json::json!({ "output": out, "examples": examples.len(), "features": mode }))
        }
    }
}

fn run_eval(e: EvalCommand, paths: &ModelPaths, cfg: &ServiceConfig) -> Result<()> {
    match e {
        EvalCommand::Planning {
            corpus,
            strategy,
            top_k,
            csv,
        } => {
            let c = load_corpus(&corpus)?;
            let gold = c.goal_sequences();
            let pred: Vec<Vec<Requirement>> = if strategy == Planner::Spmlp {
                let (model, mode) = load_spmlp(&paths.spmlp())?;
                c.entries
                    .iter()
                    .map(|e| spmlp_predict(&model, &spmlp_features(&e.profile, &e.kb, mode)))
                    .collect::<elicit_core::Result<_>>()?
            } else {
                let graph = load_graph(&paths.graph())?;
                let s = match strategy {
                    Planner::One => Strategy::One,
                    Planner::Two => Strategy::Two,
                    Planner::PerfOnly => Strategy::PerfOnly,
                    Planner::KnowOnly => Strategy::KnowOnly,
                    Planner::Spmlp => unreachable!(),
                };
                c.entries
                    .iter()
                    .map(|e| {
                        plan_with(&graph, &e.profile, &e.kb, s, top_k, PathQuery::default(), false).map(|r| r.path)
                    })
                    .collect::<Result<_>>()?
            };
            let name = match strategy {
                Planner::Spmlp => "planning/spmlp".to_string(),
                other => format!("planning/{}", other.to_possible_value().expect("named").get_name()),
            };
            let report = MetricReport::new(&name)
                .with("em", exact_match(&pred, &gold)?)
                .with("agr", averaged_goal_recall(&pred, &gold)?)
                .with("bleu2", bleu2(&pred, &gold)?)
                .with("corpus_bleu2", corpus_bleu2(&pred, &gold)?)
                .with("instances", pred.len() as f64);
            emit(&report, csv)
        }
        EvalCommand::Detection { corpus, csv } => {
            let c = load_corpus(&corpus)?;
            let model = crate::artifacts::load_detector(&paths.detector())?;
            let examples = detector_examples(&c);
            let mut pc = Vec::new();
            let mut gc = Vec::new();
            let mut pr = Vec::new();
            let mut gr = Vec::new();
            for ex in &examples {
                let d = detect(&model, &ex.input, ex.prev)?;
                pc.push(usize::from(d.completed));
                gc.push(usize::from(ex.completed));
                pr.push(d.requirement.index());
                gr.push(ex.requirement.index());
            }
            let comp = classification_metrics(&pc, &gc)?;
            let req = classification_metrics(&pr, &gr)?;
            let report = MetricReport::new("detection")
                .with("completion_accuracy", comp.accuracy)
                .with("completion_f1", comp.f1)
                .with("requirement_accuracy", req.accuracy)
                .with("requirement_precision", req.precision)
                .with("requirement_recall", req.recall)
                .with("requirement_f1", req.f1);
            emit(&report, csv)
        }
        EvalCommand::Generation { corpus, limit, csv } => {
            let c = load_corpus(&corpus)?;
            let model = load_responder(&paths.responder())?;
            let mut examples = responder_examples(&c);
            if let Some(n) = limit {
                examples.truncate(n);
            }
            if examples.is_empty() {
                bail!("corpus has no user/bot turn pairs");
            }
            let mut hyps = Vec::new();
            let mut refs = Vec::new();
            let mut texts = Vec::new();
            let mut selected: Vec<Option<Triple>> = Vec::new();
            let mut gold: Vec<Option<Triple>> = Vec::new();
            let mut candidates: Vec<Vec<Triple>> = Vec::new();
            let spo = |t: &elicit_core::corpus::ResourceTriple| -> Triple {
                [t.subject.clone(), t.predicate.clone(), t.object.clone()]
            };
            for ex in &examples {
                let utterance = ex.utterance.join(" ");
                let g = model.generate(
                    ex.requirement,
                    &utterance,
                    &ex.resources,
                    cfg.engine.beam_size,
                    cfg.engine.max_response_len,
                )?;
                hyps.push(tokenize(&g.text, TokenizerMode::Mixed));
                refs.push(ex.response.clone());
                texts.push(g.text);
                selected.push(g.selected_triple.as_ref().map(spo));
                gold.push(ex.gold.map(|i| spo(&ex.resources[i])));
                candidates.push(ex.resources.iter().map(spo).collect());
            }
            let triples = knowledge_prf_triples(&selected, &gold)?;
            let text = knowledge_prf_text(&texts, &gold, &candidates)?;
            let ppl = perplexity(&model.token_log_likelihoods(&examples)?)?;
            let report = MetricReport::new("generation")
                .with("knowledge_precision", triples.precision)
                .with("knowledge_recall", triples.recall)
                .with("knowledge_f1", triples.f1)
                .with("knowledge_text_f1", text.f1)
                .with("bleu2", bleu2(&hyps, &refs)?)
                .with("dist2", dist2(&hyps)?)
                .with("ppl", ppl);
            emit(&report, csv)
        }
    }
}

#[derive(Serialize)]
struct PlanLine<'a> {
    plan: &'a [Requirement],
}

fn render_plan(plan: &crate::session::RequirementPlan) -> String {
    plan.path
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mark = if plan.completed[i] { "+" } else { "" };
            if i == plan.cursor {
                format!("[{r}]{mark}")
            } else {
                format!("{r}{mark}")
            }
        })
        .collect::<Vec<_>>()
        .join(" -> ")
}

fn render_turn(o: &TurnOutcome) -> String {
    let mut s = format!(
        "  requirement: {} ({:.2})  completed: {} ({:.2})\n",
        o.predicted_requirement, o.requirement_confidence, o.completion, o.completion_confidence
    );
    if o.replanned {
        s.push_str("  re-planned\n");
    }
    s.push_str(&format!("  plan: {}\n", render_plan(&o.plan)));
    if let Some(t) = &o.selected_triple {
        s.push_str(&format!(
            "  knowledge: {} | {} | {}\n",
            t.subject, t.predicate, t.object
        ));
    }
    if let Some(l) = o.lambda_mean {
        s.push_str(&format!("  lambda: {l:.3}\n"));
    }
    s.push_str(&format!("bot: {}\n", o.response));
    s
}

/// Line-oriented conversation loop; `/quit` or end of input stops it.
pub fn chat(
    engine: &Engine,
    profile: elicit_core::corpus::UserProfile,
    kb: elicit_core::corpus::PersonalKb,
    config: SessionConfig,
    input: impl BufRead,
    out: &mut impl Write,
    json: bool,
) -> Result<()> {
    let id = profile.user_id.clone();
    let mut session = engine.create_session(id, profile, kb, config)?;
    if json {
        writeln!(
            out,
            "{}",
            serde_json::to_string(&PlanLine {
                plan: &session.plan.path
            })?
        )?;
    } else {
        writeln!(out, "plan: {}", render_plan(&session.plan))?;
    }
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "/quit" {
            break;
        }
        let outcome = engine.process_turn(&mut session, line)?;
        if json {
            writeln!(out, "{}", serde_json::to_string(&outcome)?)?;
        } else {
            write!(out, "{}", render_turn(&outcome))?;
        }
        out.flush()?;
    }
    Ok(())
}
