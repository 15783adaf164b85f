//! Joint requirement-completion and current-requirement detection.
//!
//! A sentence vector `v_s` and the previous requirement's node embedding
//! `v_n` pass through a weaken gate (completion head) and a reinforce gate
//! plus fusion vector (requirement head).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::corpus::{Corpus, Speaker};
use crate::error::{Error, Result};
use crate::graph::NodeEmbeddingTable;
use crate::labels::Requirement;
use crate::nn::{argmax, AdamW, Matrix, ParamId, Params, Tape, Var, WarmupSchedule};
use crate::text::{tokenize, TokenizerMode, Vocabulary};

pub const MAX_SEQ_LEN: usize = 128;
pub const CHECKPOINT_KIND: &str = "detector";
const NODE_TENSOR: &str = "node_embeddings";

/// What the sentence encoder sees: tokens, or a precomputed vector that
/// bypasses it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SentenceInput {
    Tokens(Vec<String>),
    Vector(Vec<f64>),
}

impl SentenceInput {
    pub fn text(text: &str) -> Self {
        SentenceInput::Tokens(tokenize(text, TokenizerMode::Mixed))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorExample {
    pub input: SentenceInput,
    pub prev: Option<Requirement>,
    pub completed: bool,
    pub requirement: Requirement,
}

/// User turns of every dialogue, each conditioned on the previous user
/// turn's requirement.
pub fn detector_examples(corpus: &Corpus) -> Vec<DetectorExample> {
    let mut out = Vec::new();
    for d in corpus.dialogues() {
        let mut prev = None;
        for t in d.turns.iter().filter(|t| t.speaker == Speaker::User) {
            out.push(DetectorExample {
                input: SentenceInput::text(&t.utterance),
                prev,
                completed: t.completed,
                requirement: t.requirement,
            });
            prev = Some(t.requirement);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Ids {
    emb: ParamId,
    w_s: ParamId,
    b_s: ParamId,
    w_c: ParamId,
    u_c: ParamId,
    b_c: ParamId,
    w_1: ParamId,
    b_1: ParamId,
    w_r: ParamId,
    u_r: ParamId,
    b_r: ParamId,
    w_p: ParamId,
    u_p: ParamId,
    b_p: ParamId,
    w_2: ParamId,
    b_2: ParamId,
}

/// Names of the thirteen gate and head tensors.
pub const GATE_TENSORS: [&str; 13] = [
    "W_c", "U_c", "b_c", "W_1", "b_1", "W_r", "U_r", "b_r", "W_p", "U_p", "b_p", "W_2", "b_2",
];

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub dim: usize,
    pub embed_dim: usize,
    pub vocab: Vocabulary,
    pub params: Params,
    /// Frozen; never updated by training.
    pub nodes: NodeEmbeddingTable,
    ids: Ids,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    /// (completed, not completed)
    pub y_c: [f64; 2],
    pub y_p: Vec<f64>,
    pub completed: bool,
    pub requirement: Requirement,
}

/// Gate activations of one forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intermediates {
    pub v_s: Vec<f64>,
    pub v_n: Vec<f64>,
    pub f_c: Vec<f64>,
    pub v_c: Vec<f64>,
    pub f_r: Vec<f64>,
    pub f_p: Vec<f64>,
    pub v_p: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub completed: bool,
    pub requirement: Requirement,
    pub completion_confidence: f64,
    pub requirement_confidence: f64,
}

struct Forward {
    v_s: Var,
    v_n: Var,
    f_c: Var,
    v_c: Var,
    f_r: Var,
    f_p: Var,
    v_p: Var,
    logits_c: Var,
    logits_p: Var,
}

impl DetectorModel {
    pub fn new(vocab: Vocabulary, nodes: NodeEmbeddingTable, embed_dim: usize, seed: u64) -> Result<Self> {
        let d = nodes.dim;
        if d == 0 || embed_dim == 0 {
            return Err(Error::Shape("detector dims must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::new();
        let mut sq =
            |p: &mut Params, name: &str, rows: usize, cols: usize| p.add(name, Matrix::xavier(rows, cols, &mut rng));
        let emb = p.add("emb", Matrix::zeros(vocab.len(), embed_dim));
        let w_s = sq(&mut p, "W_s", d, embed_dim);
        let b_s = p.add("b_s", Matrix::zeros(1, d));
        let w_c = sq(&mut p, "W_c", d, d);
        let u_c = sq(&mut p, "U_c", d, d);
        let b_c = p.add("b_c", Matrix::zeros(1, d));
        let w_1 = sq(&mut p, "W_1", 2, d);
        let b_1 = p.add("b_1", Matrix::zeros(1, 2));
        let w_r = sq(&mut p, "W_r", d, d);
        let u_r = sq(&mut p, "U_r", d, d);
        let b_r = p.add("b_r", Matrix::zeros(1, d));
        let w_p = sq(&mut p, "W_p", d, d);
        let u_p = sq(&mut p, "U_p", d, d);
        let b_p = p.add("b_p", Matrix::zeros(1, d));
        let w_2 = sq(&mut p, "W_2", Requirement::COUNT, d);
        let b_2 = p.add("b_2", Matrix::zeros(1, Requirement::COUNT));
        *p.get_mut(emb) = Matrix::uniform(vocab.len(), embed_dim, 0.5, &mut rng);
        Ok(DetectorModel {
            dim: d,
            embed_dim,
            vocab,
            params: p,
            nodes,
            ids: Ids {
                emb,
                w_s,
                b_s,
                w_c,
                u_c,
                b_c,
                w_1,
                b_1,
                w_r,
                u_r,
                b_r,
                w_p,
                u_p,
                b_p,
                w_2,
                b_2,
            },
        })
    }

    /// Sentence vectors for a batch, in input order.
    fn sentence_vectors(&self, tape: &mut Tape, inputs: &[&SentenceInput]) -> Result<Var> {
        let mut token_rows = Vec::new();
        let mut vector_rows = Vec::new();
        let mut slot = Vec::with_capacity(inputs.len());
        for (i, input) in inputs.iter().enumerate() {
            match input {
                SentenceInput::Tokens(_) => {
                    slot.push((false, token_rows.len()));
                    token_rows.push(i);
                }
                SentenceInput::Vector(v) => {
                    if v.len() != self.dim {
                        return Err(Error::Shape(format!(
                            "sentence vector has {} entries, expected {}",
                            v.len(),
                            self.dim
                        )));
                    }
                    slot.push((true, vector_rows.len()));
                    vector_rows.push(i);
                }
            }
        }
        let mut parts = Vec::new();
        if !token_rows.is_empty() {
            // Row i of `avg` averages the embeddings of input i's tokens.
            let mut avg = Matrix::zeros(token_rows.len(), self.vocab.len());
            for (r, &i) in token_rows.iter().enumerate() {
                if let SentenceInput::Tokens(toks) = inputs[i] {
                    let toks = &toks[..toks.len().min(MAX_SEQ_LEN)];
                    let w = 1.0 / toks.len().max(1) as f64;
                    for t in toks {
                        let id = self.vocab.id(t);
                        avg.set(r, id, avg.get(r, id) + w);
                    }
                }
            }
            let a = tape.constant(avg);
            let emb = tape.param(&self.params, self.ids.emb);
            let mean = tape.matmul(a, emb);
            let (w, b) = (
                tape.param(&self.params, self.ids.w_s),
                tape.param(&self.params, self.ids.b_s),
            );
            let lin = tape.linear(mean, w, b);
            parts.push(tape.tanh(lin));
        }
        if !vector_rows.is_empty() {
            let rows: Vec<Vec<f64>> = vector_rows
                .iter()
                .map(|&i| match inputs[i] {
                    SentenceInput::Vector(v) => v.clone(),
                    SentenceInput::Tokens(_) => unreachable!(),
                })
                .collect();
            parts.push(tape.constant(Matrix::from_rows(&rows)));
        }
        let stacked = tape.concat_rows(&parts);
        let offset = token_rows.len();
        let order: Vec<usize> = slot
            .iter()
            .map(|&(is_vec, k)| if is_vec { offset + k } else { k })
            .collect();
        Ok(tape.rows(stacked, &order))
    }

    fn forward_tape(
        &self,
        tape: &mut Tape,
        inputs: &[&SentenceInput],
        prev: &[Option<Requirement>],
    ) -> Result<Forward> {
        if self.nodes.dim != self.dim {
            return Err(Error::Shape(format!(
                "node embeddings have dim {}, detector {}",
                self.nodes.dim, self.dim
            )));
        }
        let v_s = self.sentence_vectors(tape, inputs)?;
        let nrows: Vec<Vec<f64>> = prev.iter().map(|&r| self.nodes.get(r).to_vec()).collect();
        let v_n = tape.constant(Matrix::from_rows(&nrows));
        let p = |tape: &mut Tape, id| tape.param(&self.params, id);
        let ids = self.ids;

        // Weaken factor and completion head.
        let (w_c, u_c, b_c) = (p(tape, ids.w_c), p(tape, ids.u_c), p(tape, ids.b_c));
        let a = tape.matmul_t(v_s, w_c);
        let b = tape.matmul_t(v_n, u_c);
        let ab = tape.add(a, b);
        let pre_c = tape.add_row(ab, b_c);
        let f_c = tape.sigmoid(pre_c);
        let v_c = tape.mul(f_c, v_s);
        let (w_1, b_1) = (p(tape, ids.w_1), p(tape, ids.b_1));
        let logits_c = tape.linear(v_c, w_1, b_1);

        // Reinforce factor, fusion vector, requirement head.
        let (w_r, u_r, b_r) = (p(tape, ids.w_r), p(tape, ids.u_r), p(tape, ids.b_r));
        let a = tape.matmul_t(v_s, w_r);
        let b = tape.matmul_t(v_n, u_r);
        let ab = tape.add(a, b);
        let pre_r = tape.add_row(ab, b_r);
        let f_r = tape.sigmoid(pre_r);
        let gated = tape.mul(f_r, v_c);
        let (w_p, u_p, b_p) = (p(tape, ids.w_p), p(tape, ids.u_p), p(tape, ids.b_p));
        let a = tape.matmul_t(v_s, w_p);
        let b = tape.matmul_t(gated, u_p);
        let ab = tape.add(a, b);
        let pre_p = tape.add_row(ab, b_p);
        let f_p = tape.tanh(pre_p);
        let fused = tape.mul(f_p, v_n);
        let v_p = tape.add(fused, v_s);
        let (w_2, b_2) = (p(tape, ids.w_2), p(tape, ids.b_2));
        let logits_p = tape.linear(v_p, w_2, b_2);
        Ok(Forward {
            v_s,
            v_n,
            f_c,
            v_c,
            f_r,
            f_p,
            v_p,
            logits_c,
            logits_p,
        })
    }

    pub fn forward(
        &self,
        input: &SentenceInput,
        prev: Option<Requirement>,
    ) -> Result<(DetectionResult, Intermediates)> {
        let mut tape = Tape::new();
        let f = self.forward_tape(&mut tape, &[input], &[prev])?;
        let yc = tape.softmax_rows(f.logits_c);
        let yp = tape.softmax_rows(f.logits_p);
        let y_c = [tape.value(yc).data[0], tape.value(yc).data[1]];
        let y_p = tape.value(yp).data.clone();
        let row = |v: Var| tape.value(v).data.clone();
        let inter = Intermediates {
            v_s: row(f.v_s),
            v_n: row(f.v_n),
            f_c: row(f.f_c),
            v_c: row(f.v_c),
            f_r: row(f.f_r),
            f_p: row(f.f_p),
            v_p: row(f.v_p),
        };
        let result = DetectionResult {
            completed: y_c[0] > y_c[1],
            requirement: Requirement::from_index(argmax(&y_p)).expect("20 classes"),
            y_c,
            y_p,
        };
        Ok((result, inter))
    }

    /// Mean joint cross-entropy over a batch.
    pub fn batch_loss(&self, batch: &[&DetectorExample]) -> Result<(Tape, Var)> {
        let mut tape = Tape::new();
        let inputs: Vec<&SentenceInput> = batch.iter().map(|e| &e.input).collect();
        let prev: Vec<Option<Requirement>> = batch.iter().map(|e| e.prev).collect();
        let f = self.forward_tape(&mut tape, &inputs, &prev)?;
        let lc = tape.log_softmax_rows(f.logits_c);
        let lp = tape.log_softmax_rows(f.logits_p);
        let at_c: Vec<(usize, usize)> = batch
            .iter()
            .enumerate()
            .map(|(i, e)| (i, usize::from(!e.completed)))
            .collect();
        let at_p: Vec<(usize, usize)> = batch
            .iter()
            .enumerate()
            .map(|(i, e)| (i, e.requirement.index()))
            .collect();
        let pc = tape.pick(lc, &at_c);
        let pp = tape.pick(lp, &at_p);
        let sc = tape.sum(pc);
        let sp = tape.sum(pp);
        let total = tape.add(sc, sp);
        let loss = tape.scale(total, -1.0 / batch.len() as f64);
        Ok((tape, loss))
    }

    pub fn mean_loss(&self, data: &[DetectorExample]) -> Result<f64> {
        let mut total = 0.0;
        for chunk in data.chunks(256) {
            let refs: Vec<&DetectorExample> = chunk.iter().collect();
            let (tape, loss) = self.batch_loss(&refs)?;
            total += tape.scalar(loss) * chunk.len() as f64;
        }
        Ok(total / data.len().max(1) as f64)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut params = self.params.clone();
        params.add(NODE_TENSOR, self.nodes.to_matrix());
        Checkpoint::new(
            CHECKPOINT_KIND,
            params,
            Some(self.vocab.clone()),
            serde_json::json!({ "dim": self.dim, "embed_dim": self.embed_dim }),
        )
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let shape = |m: String| Error::Shape(m);
        let dim = c.config["dim"].as_u64().ok_or_else(|| shape("missing dim".into()))? as usize;
        let embed_dim = c.config["embed_dim"]
            .as_u64()
            .ok_or_else(|| shape("missing embed_dim".into()))? as usize;
        let vocab = c
            .vocab
            .clone()
            .ok_or_else(|| shape("detector needs a vocabulary".into()))?;
        let node_id = c
            .params
            .id(NODE_TENSOR)
            .ok_or_else(|| shape("missing node embeddings".into()))?;
        let nodes = NodeEmbeddingTable::from_matrix(c.params.get(node_id))?;
        let mut model = DetectorModel::new(vocab, nodes, embed_dim, 0)?;
        if model.dim != dim {
            return Err(shape(format!("config dim {dim} disagrees with node embeddings")));
        }
        let mut rest = Params::new();
        for (name, m) in c.params.iter().filter(|(n, _)| *n != NODE_TENSOR) {
            rest.add(name, m.clone());
        }
        model.params.load_from(&rest)?;
        Ok(model)
    }
}

/// Cross-entropy of the completion head plus that of the requirement head.
pub fn detector_loss(result: &DetectionResult, completed: bool, requirement: Requirement) -> f64 {
    let pc = result.y_c[usize::from(!completed)];
    let pp = result.y_p[requirement.index()];
    -(pc.ln() + pp.ln())
}

pub fn detect(model: &DetectorModel, input: &SentenceInput, prev: Option<Requirement>) -> Result<Detection> {
    let (r, _) = model.forward(input, prev)?;
    Ok(Detection {
        completed: r.completed,
        requirement: r.requirement,
        completion_confidence: r.y_c[0].max(r.y_c[1]),
        requirement_confidence: r.y_p.iter().copied().fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub lr: f64,
    pub warmup_proportion: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub embed_dim: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            lr: 2e-5,
            warmup_proportion: 0.1,
            weight_decay: 0.01,
            epochs: 3,
            batch: 32,
            seed: 0,
            embed_dim: 100,
        }
    }
}

impl DetectorConfig {
    /// Settings for training from scratch on a small synthetic corpus: the
    /// nominal rate suits fine-tuning a pretrained encoder, not this one.
    pub fn desk() -> Self {
        DetectorConfig {
            lr: 3e-3,
            epochs: 8,
            batch: 32,
            embed_dim: 64,
            ..DetectorConfig::default()
        }
    }
}

/// Trains `model` in place on `train`.
pub fn detector_train(model: &mut DetectorModel, train: &[DetectorExample], cfg: &DetectorConfig) -> Result<()> {
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let batch = cfg.batch.max(1);
    let steps = cfg.epochs * train.len().div_ceil(batch);
    let schedule = WarmupSchedule::new(cfg.lr, steps, cfg.warmup_proportion);
    let mut opt = AdamW::new(&model.params, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let refs: Vec<&DetectorExample> = chunk.iter().map(|&i| &train[i]).collect();
            let (tape, loss) = model.batch_loss(&refs)?;
            let grads = tape.backward(loss, &model.params);
            opt.step(&mut model.params, &grads, schedule.lr(step));
            step += 1;
        }
    }
    Ok(())
}

/// Builds a vocabulary over the token inputs of `examples`.
pub fn detector_vocab(examples: &[DetectorExample]) -> Vocabulary {
    Vocabulary::build(
        examples.iter().filter_map(|e| match &e.input {
            SentenceInput::Tokens(t) => Some(t.iter()),
            SentenceInput::Vector(_) => None,
        }),
        1,
    )
}
