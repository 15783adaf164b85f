//! Knowledge-grounded response generation.
//!
//! A shared bidirectional GRU encodes the requirement name, the user
//! utterance, and each resource triple (`s p o #`). A selection network
//! scores every utterance position against every triple, the scores rescale
//! the utterance states, and the fused states feed an attentive GRU decoder
//! whose output mixes a vocabulary distribution with a copy distribution
//! over the utterance and resource tokens.

mod beam;

pub use beam::{beam_decode, best_of, greedy_decode, Hypothesis, StepModel};

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::corpus::{filter_resources, Corpus, ResourceTriple, Speaker, TemplateItem};
use crate::error::{Error, Result};
use crate::labels::Requirement;
use crate::nn::{dropout_mask, AdamW, Grads, Matrix, ParamId, Params, Tape, Var, WarmupSchedule};
use crate::text::{detokenize, tokenize, TokenizerMode, Vocabulary, BOS_ID, EOS_ID, UNK_ID};

pub const CHECKPOINT_KIND: &str = "responder";
pub const MAX_UTTERANCE_LEN: usize = 256;
pub const MAX_RESPONSE_LEN: usize = 64;
pub const SEP: &str = "#";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponderArch {
    /// Encoder hidden size per direction; encoder outputs are twice this.
    pub hidden: usize,
    pub embed_dim: usize,
    /// A single learnable scalar in place of the requirement fusion matrix.
    pub scalar_delta: bool,
}

impl Default for ResponderArch {
    fn default() -> Self {
        ResponderArch {
            hidden: 64,
            embed_dim: 64,
            scalar_delta: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct GruIds {
    wx: ParamId,
    bx: ParamId,
    u: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Ids {
    emb: ParamId,
    enc_f: GruIds,
    enc_b: GruIds,
    fuse_w: ParamId,
    fuse_v: ParamId,
    fuse_d: ParamId,
    init_w: ParamId,
    init_b: ParamId,
    dec: GruIds,
    out_v: ParamId,
    out_b: ParamId,
    out_v2: ParamId,
    out_b2: ParamId,
    lam_w: ParamId,
    lam_b: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponderModel {
    pub arch: ResponderArch,
    pub vocab: Vocabulary,
    pub params: Params,
    ids: Ids,
}

/// Selection scores, columns in the caller's resource order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionScores {
    /// `T × M`, each row a distribution over resources.
    pub per_step: Vec<Vec<f64>>,
    /// Row maxima.
    pub step_max: Vec<f64>,
    pub selected_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeStepOutput {
    pub attention: Vec<f64>,
    pub context: Vec<f64>,
    pub p_vocab: Vec<f64>,
    pub lambda: f64,
    /// Over the extended vocabulary.
    pub y: Vec<f64>,
}

/// Copy source and extended vocabulary for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Source {
    pub utterance: Vec<String>,
    /// `order[k]` is the caller's index of the k-th resource in canonical order.
    pub order: Vec<usize>,
    /// Per resource in canonical order, ending with the separator.
    pub resource_tokens: Vec<Vec<String>>,
    /// False when the resources are the empty placeholder.
    pub knowledge: bool,
    pub tokens: Vec<String>,
    pub ext_ids: Vec<usize>,
    /// Source tokens missing from the vocabulary, by first occurrence.
    pub oov: Vec<String>,
    vocab_len: usize,
}

impl Source {
    pub fn ext_width(&self) -> usize {
        self.vocab_len + self.oov.len()
    }

    fn ext_id(&self, vocab: &Vocabulary, tok: &str) -> usize {
        match vocab.get(tok) {
            Some(id) => id,
            None => match self.oov.iter().position(|o| o == tok) {
                Some(k) => self.vocab_len + k,
                None => UNK_ID,
            },
        }
    }

    pub fn token(&self, vocab: &Vocabulary, ext: usize) -> String {
        if ext < self.vocab_len {
            vocab.token(ext).unwrap_or("<unk>").to_string()
        } else {
            self.oov[ext - self.vocab_len].clone()
        }
    }
}

/// Encoder and selection outputs for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub source: Source,
    pub h_r: Vec<f64>,
    pub h_u: Matrix,
    /// One row per resource, in the caller's order.
    pub h_k: Matrix,
    /// `None` in no-knowledge mode.
    pub selection: Option<SelectionScores>,
    pub h_s: Matrix,
    /// Fused utterance states.
    pub h: Matrix,
    /// Attention memory: fused utterance states then resource token states.
    pub memory: Matrix,
    pub e0: Vec<f64>,
}

/// Decoder hidden state and the previous step's context, which is fed back
/// as input.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub e: Vec<f64>,
    pub c: Vec<f64>,
}

impl Encoded {
    pub fn initial_state(&self) -> DecoderState {
        DecoderState {
            e: self.e0.clone(),
            c: vec![0.0; self.e0.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub tokens: Vec<String>,
    pub text: String,
    pub selected: Option<usize>,
    pub selected_triple: Option<ResourceTriple>,
    pub lambda_trace: Vec<f64>,
    pub log_prob: f64,
}

struct EncVars {
    h_r: Var,
    h_u: Var,
    h_k: Var,
    scores: Var,
    h_s: Var,
    h: Var,
    memory: Var,
    e0: Var,
}

struct StepVars {
    attention: Var,
    context: Var,
    e: Var,
    p_vocab: Var,
    lambda: Var,
    y: Var,
}

struct Dropout<'a> {
    rate: f64,
    rng: &'a mut ChaCha8Rng,
}

fn canonical(a: &ResourceTriple, b: &ResourceTriple) -> Ordering {
    a.spo().cmp(&b.spo()).then_with(|| a.domain.name().cmp(b.domain.name()))
}

fn resource_tokens(t: &ResourceTriple) -> Vec<String> {
    let mut out = Vec::new();
    for field in t.spo() {
        out.extend(tokenize(field, TokenizerMode::Mixed));
    }
    out.push(SEP.to_string());
    out
}

fn gru_cell(tape: &mut Tape, xp: Var, h: Var, u: Var, n: usize) -> Var {
    let hu = tape.matmul_t(h, u);
    let xz = tape.slice_cols(xp, 0, n);
    let hz = tape.slice_cols(hu, 0, n);
    let z = tape.add(xz, hz);
    let z = tape.sigmoid(z);
    let xr = tape.slice_cols(xp, n, n);
    let hr = tape.slice_cols(hu, n, n);
    let r = tape.add(xr, hr);
    let r = tape.sigmoid(r);
    let xn = tape.slice_cols(xp, 2 * n, n);
    let hn = tape.slice_cols(hu, 2 * n, n);
    let rh = tape.mul(r, hn);
    let cand = tape.add(xn, rh);
    let cand = tape.tanh(cand);
    let keep = tape.one_minus(z);
    let a = tape.mul(keep, cand);
    let b = tape.mul(z, h);
    tape.add(a, b)
}

/// Selection scores, row maxima, and rescaled utterance states.
fn selection_ops(tape: &mut Tape, h_u: Var, h_k: Var) -> (Var, Var, Var) {
    let logits = tape.matmul_t(h_u, h_k);
    let scores = tape.softmax_rows(logits);
    let s_max = tape.max_cols(scores);
    let h_s = tape.scale_rows(h_u, s_max);
    (scores, s_max, h_s)
}

/// `h_u Wᵀ + h_s Vᵀ + r` with the `1 × 2H` requirement term `r` broadcast.
fn fusion_ops(tape: &mut Tape, h_u: Var, h_s: Var, r_term: Var, w: Var, v: Var) -> Var {
    let a = tape.matmul_t(h_u, w);
    let b = tape.matmul_t(h_s, v);
    let ab = tape.add(a, b);
    tape.add_row(ab, r_term)
}

fn row_vec(m: &Matrix, r: usize) -> Vec<f64> {
    m.row(r).to_vec()
}

/// Reorders rows so that row `order[k]` of the result is row `k` of `m`.
fn unsort_rows(m: &Matrix, order: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(m.rows, m.cols);
    for (k, &i) in order.iter().enumerate() {
        out.row_mut(i).copy_from_slice(m.row(k));
    }
    out
}

fn selection_from(scores: &Matrix, order: &[usize]) -> SelectionScores {
    let m = order.len();
    let mut per_step = vec![vec![0.0; m]; scores.rows];
    let mut step_max = Vec::with_capacity(scores.rows);
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (t, out) in per_step.iter_mut().enumerate() {
        let row = scores.row(t);
        for (k, &i) in order.iter().enumerate() {
            out[i] = row[k];
        }
        let k = crate::nn::argmax(row);
        step_max.push(row[k]);
        if row[k] > best.0 {
            best = (row[k], k);
        }
    }
    SelectionScores {
        per_step,
        step_max,
        selected_index: order[best.1],
    }
}

/// Selection network on raw states: `s[t][i] = softmax_i(h_u[t]·h_k[i])`,
/// row maxima, and `h_s[t] = max_i s[t][i] · h_u[t]`.
pub fn select_resource(h_u: &Matrix, h_k: &Matrix) -> (SelectionScores, Matrix) {
    let mut tape = Tape::new();
    let u = tape.constant(h_u.clone());
    let k = tape.constant(h_k.clone());
    let (scores, _, h_s) = selection_ops(&mut tape, u, k);
    let order: Vec<usize> = (0..h_k.rows).collect();
    (selection_from(tape.value(scores), &order), tape.value(h_s).clone())
}

/// `h[t] = W h_u[t] + V h_s[t] + D h_r`.
pub fn fuse_states(h_u: &Matrix, h_s: &Matrix, h_r: &[f64], w: &Matrix, v: &Matrix, d: &Matrix) -> Matrix {
    let mut tape = Tape::new();
    let (u, s) = (tape.constant(h_u.clone()), tape.constant(h_s.clone()));
    let r = tape.constant(Matrix::row_vector(h_r.to_vec()));
    let (w, v, d) = (
        tape.constant(w.clone()),
        tape.constant(v.clone()),
        tape.constant(d.clone()),
    );
    let r_term = tape.matmul_t(r, d);
    let h = fusion_ops(&mut tape, u, s, r_term, w, v);
    tape.value(h).clone()
}

/// `λ P_vocab(w) + (1 − λ) Σ_{t: src_t = w} a_t` over `width` extended ids.
pub fn mix_distribution(p_vocab: &[f64], attention: &[f64], src_ext: &[usize], lambda: f64, width: usize) -> Vec<f64> {
    let mut copy = vec![0.0; width];
    for (&t, &a) in src_ext.iter().zip(attention) {
        copy[t] += a;
    }
    (0..width)
        .map(|w| lambda * p_vocab.get(w).copied().unwrap_or(0.0) + (1.0 - lambda) * copy[w])
        .collect()
}

impl ResponderModel {
    pub fn new(vocab: Vocabulary, arch: ResponderArch, seed: u64) -> Result<Self> {
        if arch.hidden == 0 || arch.embed_dim == 0 {
            return Err(Error::Shape("responder dims must be positive".into()));
        }
        let (h, e, v) = (arch.hidden, arch.embed_dim, vocab.len());
        let d = 2 * h;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::new();
        let emb = p.add("emb", Matrix::uniform(v, e, 0.1, &mut rng));
        let gru = |p: &mut Params, pre: &str, n: usize, input: usize, rng: &mut ChaCha8Rng| GruIds {
            wx: p.add(&format!("{pre}.wx"), Matrix::xavier(3 * n, input, rng)),
            bx: p.add(&format!("{pre}.bx"), Matrix::zeros(1, 3 * n)),
            u: p.add(&format!("{pre}.u"), Matrix::xavier(3 * n, n, rng)),
        };
        let enc_f = gru(&mut p, "enc_f", h, e, &mut rng);
        let enc_b = gru(&mut p, "enc_b", h, e, &mut rng);
        let fuse_w = p.add("fuse.W", Matrix::xavier(d, d, &mut rng));
        let fuse_v = p.add("fuse.V", Matrix::xavier(d, d, &mut rng));
        let fuse_d = if arch.scalar_delta {
            p.add("fuse.delta", Matrix::filled(1, 1, 1.0))
        } else {
            p.add("fuse.delta", Matrix::xavier(d, d, &mut rng))
        };
        let init_w = p.add("init.W", Matrix::xavier(d, 2 * d, &mut rng));
        let init_b = p.add("init.b", Matrix::zeros(1, d));
        let dec = gru(&mut p, "dec", d, e + d, &mut rng);
        let out_v = p.add("out.V", Matrix::xavier(d, 2 * d, &mut rng));
        let out_b = p.add("out.b", Matrix::zeros(1, d));
        let out_v2 = p.add("out.V2", Matrix::xavier(v, d, &mut rng));
        let out_b2 = p.add("out.b2", Matrix::zeros(1, v));
        let lam_w = p.add("switch.W", Matrix::xavier(1, 2 * d, &mut rng));
        let lam_b = p.add("switch.b", Matrix::zeros(1, 1));
        Ok(ResponderModel {
            arch,
            vocab,
            params: p,
            ids: Ids {
                emb,
                enc_f,
                enc_b,
                fuse_w,
                fuse_v,
                fuse_d,
                init_w,
                init_b,
                dec,
                out_v,
                out_b,
                out_v2,
                out_b2,
                lam_w,
                lam_b,
            },
        })
    }

    pub fn hidden(&self) -> usize {
        self.arch.hidden
    }

    /// Builds the copy source. Empty `resources` are an error unless
    /// `placeholder` is set, in which case one empty triple stands in.
    pub fn prepare(&self, utterance: &[String], resources: &[ResourceTriple], placeholder: bool) -> Result<Source> {
        if utterance.is_empty() {
            return Err(Error::InvalidInput("empty utterance".into()));
        }
        if resources.is_empty() && !placeholder {
            return Err(Error::InvalidInput("no resources; use no-knowledge mode".into()));
        }
        let utterance: Vec<String> = utterance.iter().take(MAX_UTTERANCE_LEN).cloned().collect();
        let mut order: Vec<usize> = (0..resources.len()).collect();
        order.sort_by(|&a, &b| canonical(&resources[a], &resources[b]).then(a.cmp(&b)));
        let knowledge = !resources.is_empty();
        let resource_tokens: Vec<Vec<String>> = if knowledge {
            order.iter().map(|&i| resource_tokens(&resources[i])).collect()
        } else {
            vec![vec![SEP.to_string()]]
        };
        let tokens: Vec<String> = utterance
            .iter()
            .chain(resource_tokens.iter().flatten())
            .cloned()
            .collect();
        let mut oov: Vec<String> = Vec::new();
        for t in &tokens {
            if self.vocab.get(t).is_none() && !oov.contains(t) {
                oov.push(t.clone());
            }
        }
        let mut src = Source {
            utterance,
            order,
            resource_tokens,
            knowledge,
            tokens,
            ext_ids: Vec::new(),
            oov,
            vocab_len: self.vocab.len(),
        };
        src.ext_ids = src.tokens.iter().map(|t| src.ext_id(&self.vocab, t)).collect();
        Ok(src)
    }

    fn embed(&self, tape: &mut Tape, ids: &[usize], drop: &mut Option<Dropout<'_>>) -> Var {
        let emb = tape.param(&self.params, self.ids.emb);
        let x = tape.rows(emb, ids);
        match drop {
            Some(d) if d.rate > 0.0 => {
                let m = dropout_mask(ids.len(), self.arch.embed_dim, d.rate, d.rng);
                tape.mask(x, m)
            }
            _ => x,
        }
    }

    fn token_ids(&self, toks: &[String]) -> Vec<usize> {
        toks.iter().map(|t| self.vocab.id(t)).collect()
    }

    /// Returns all states (`n × 2H`) and the final states of each direction.
    fn bigru(&self, tape: &mut Tape, x: Var, n: usize) -> (Var, Var, Var) {
        let h = self.arch.hidden;
        let run = |tape: &mut Tape, g: GruIds, reverse: bool| {
            let (wx, bx, u) = (
                tape.param(&self.params, g.wx),
                tape.param(&self.params, g.bx),
                tape.param(&self.params, g.u),
            );
            let xp = tape.linear(x, wx, bx);
            let mut state = tape.constant(Matrix::zeros(1, h));
            let mut out = vec![state; n];
            let steps: Vec<usize> = if reverse {
                (0..n).rev().collect()
            } else {
                (0..n).collect()
            };
            for t in steps {
                let xt = tape.row(xp, t);
                state = gru_cell(tape, xt, state, u, h);
                out[t] = state;
            }
            out
        };
        let f = run(tape, self.ids.enc_f, false);
        let b = run(tape, self.ids.enc_b, true);
        let (f_last, b_first) = (f[n - 1], b[0]);
        let fm = tape.concat_rows(&f);
        let bm = tape.concat_rows(&b);
        (tape.concat_cols(&[fm, bm]), f_last, b_first)
    }

    fn encode_tape(&self, tape: &mut Tape, req: Requirement, src: &Source, drop: &mut Option<Dropout<'_>>) -> EncVars {
        let req_ids = self.token_ids(&tokenize(req.name(), TokenizerMode::Mixed));
        let x = self.embed(tape, &req_ids, drop);
        let (_, rf, rb) = self.bigru(tape, x, req_ids.len());
        let h_r = tape.concat_cols(&[rf, rb]);

        let utt_ids = self.token_ids(&src.utterance);
        let x = self.embed(tape, &utt_ids, drop);
        let (h_u, _, _) = self.bigru(tape, x, utt_ids.len());

        let mut res_states = Vec::new();
        let mut keys = Vec::new();
        for toks in &src.resource_tokens {
            let ids = self.token_ids(toks);
            let x = self.embed(tape, &ids, drop);
            let (s, _, _) = self.bigru(tape, x, ids.len());
            keys.push(tape.row(s, ids.len() - 1));
            res_states.push(s);
        }
        let h_k = tape.concat_rows(&keys);
        let (scores, _, h_s) = selection_ops(tape, h_u, h_k);

        let p = |tape: &mut Tape, id| tape.param(&self.params, id);
        let (w, v, d) = (
            p(tape, self.ids.fuse_w),
            p(tape, self.ids.fuse_v),
            p(tape, self.ids.fuse_d),
        );
        let r_term = if self.arch.scalar_delta {
            tape.scale_rows(h_r, d)
        } else {
            tape.matmul_t(h_r, d)
        };
        let h = fusion_ops(tape, h_u, h_s, r_term, w, v);
        let mut mem = vec![h];
        mem.extend(res_states);
        let memory = tape.concat_rows(&mem);
        let (iw, ib) = (p(tape, self.ids.init_w), p(tape, self.ids.init_b));
        let hm = tape.mean_rows(h);
        let ri = tape.concat_cols(&[h_r, hm]);
        let e0 = tape.linear(ri, iw, ib);
        let e0 = tape.tanh(e0);
        EncVars {
            h_r,
            h_u,
            h_k,
            scores,
            h_s,
            h,
            memory,
            e0,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn step_tape(
        &self,
        tape: &mut Tape,
        e_prev: Var,
        c_prev: Var,
        memory: Var,
        prev: usize,
        src: &Source,
        drop: &mut Option<Dropout<'_>>,
    ) -> StepVars {
        let d = 2 * self.arch.hidden;
        let input = if prev < self.vocab.len() { prev } else { UNK_ID };
        let x = self.embed(tape, &[input], drop);
        let x = tape.concat_cols(&[x, c_prev]);
        let p = |tape: &mut Tape, id| tape.param(&self.params, id);
        let g = self.ids.dec;
        let (wx, bx, u) = (p(tape, g.wx), p(tape, g.bx), p(tape, g.u));
        let xp = tape.linear(x, wx, bx);
        let e = gru_cell(tape, xp, e_prev, u, d);

        let logits = tape.matmul_t(e_prev, memory);
        let attention = tape.softmax_rows(logits);
        let context = tape.matmul(attention, memory);
        let ce = tape.concat_cols(&[context, e]);
        let (v, b, v2, b2) = (
            p(tape, self.ids.out_v),
            p(tape, self.ids.out_b),
            p(tape, self.ids.out_v2),
            p(tape, self.ids.out_b2),
        );
        let hid = tape.linear(ce, v, b);
        let out = tape.linear(hid, v2, b2);
        let p_vocab = tape.softmax_rows(out);
        let (lw, lb) = (p(tape, self.ids.lam_w), p(tape, self.ids.lam_b));
        let sw = tape.linear(ce, lw, lb);
        let lambda = tape.sigmoid(sw);

        let width = src.ext_width();
        let p_ext = if width > self.vocab.len() {
            let pad = tape.constant(Matrix::zeros(1, width - self.vocab.len()));
            tape.concat_cols(&[p_vocab, pad])
        } else {
            p_vocab
        };
        let gen = tape.scale_rows(p_ext, lambda);
        let copy = tape.scatter_cols(attention, &src.ext_ids, width);
        let rest = tape.one_minus(lambda);
        let copy = tape.scale_rows(copy, rest);
        let y = tape.add(gen, copy);
        StepVars {
            attention,
            context,
            e,
            p_vocab,
            lambda,
            y,
        }
    }

    fn encode_source(&self, req: Requirement, source: Source) -> Encoded {
        let mut tape = Tape::new();
        let v = self.encode_tape(&mut tape, req, &source, &mut None);
        let val = |v: Var| tape.value(v).clone();
        let (selection, h_k) = if source.knowledge {
            (
                Some(selection_from(tape.value(v.scores), &source.order)),
                unsort_rows(tape.value(v.h_k), &source.order),
            )
        } else {
            (None, val(v.h_k))
        };
        Encoded {
            h_r: row_vec(tape.value(v.h_r), 0),
            h_u: val(v.h_u),
            h_k,
            selection,
            h_s: val(v.h_s),
            h: val(v.h),
            memory: val(v.memory),
            e0: row_vec(tape.value(v.e0), 0),
            source,
        }
    }

    /// Encodes a request with at least one resource.
    pub fn encode(&self, req: Requirement, utterance: &[String], resources: &[ResourceTriple]) -> Result<Encoded> {
        let src = self.prepare(utterance, resources, false)?;
        Ok(self.encode_source(req, src))
    }

    /// Encodes a request against the empty placeholder resource.
    pub fn encode_without_knowledge(&self, req: Requirement, utterance: &[String]) -> Result<Encoded> {
        let src = self.prepare(utterance, &[], true)?;
        Ok(self.encode_source(req, src))
    }

    /// One decoder step after emitting `prev`.
    pub fn decode_step(&self, enc: &Encoded, state: &DecoderState, prev: usize) -> (DecodeStepOutput, DecoderState) {
        let mut tape = Tape::new();
        let e = tape.constant(Matrix::row_vector(state.e.clone()));
        let c = tape.constant(Matrix::row_vector(state.c.clone()));
        let mem = tape.constant(enc.memory.clone());
        let s = self.step_tape(&mut tape, e, c, mem, prev, &enc.source, &mut None);
        let r = |v: Var| tape.value(v).data.clone();
        (
            DecodeStepOutput {
                attention: r(s.attention),
                context: r(s.context),
                p_vocab: r(s.p_vocab),
                lambda: tape.value(s.lambda).data[0],
                y: r(s.y),
            },
            DecoderState {
                e: r(s.e),
                c: r(s.context),
            },
        )
    }

    pub fn decode(&self, enc: &Encoded, beam_size: usize, max_len: usize) -> Hypothesis {
        let run = DecoderRun { model: self, enc };
        if beam_size <= 1 {
            greedy_decode(&run, max_len)
        } else {
            beam_decode(&run, beam_size, max_len)
        }
    }

    /// Selects a resource and writes the reply. Empty `resources` switch to
    /// no-knowledge mode.
    pub fn generate(
        &self,
        req: Requirement,
        utterance: &str,
        resources: &[ResourceTriple],
        beam_size: usize,
        max_len: usize,
    ) -> Result<Generation> {
        let toks = tokenize(utterance, TokenizerMode::Mixed);
        let enc = if resources.is_empty() {
            self.encode_without_knowledge(req, &toks)?
        } else {
            self.encode(req, &toks, resources)?
        };
        let hyp = self.decode(&enc, beam_size, max_len);
        let mut lambda_trace = Vec::new();
        let mut state = enc.initial_state();
        let mut prev = BOS_ID;
        let ended = hyp.length > hyp.tokens.len();
        for &t in hyp.tokens.iter().chain(ended.then_some(&EOS_ID)) {
            let (out, next) = self.decode_step(&enc, &state, prev);
            lambda_trace.push(out.lambda);
            state = next;
            prev = t;
        }
        let tokens: Vec<String> = hyp.tokens.iter().map(|&t| enc.source.token(&self.vocab, t)).collect();
        let selected = enc.selection.as_ref().map(|s| s.selected_index);
        Ok(Generation {
            text: detokenize(&tokens),
            tokens,
            selected,
            selected_triple: selected.map(|i| resources[i].clone()),
            lambda_trace,
            log_prob: hyp.log_prob,
        })
    }

    /// Mean token negative log-likelihood plus the weighted selection
    /// cross-entropy on time-averaged scores.
    fn example_loss(
        &self,
        ex: &ResponderExample,
        selection_weight: f64,
        drop: &mut Option<Dropout<'_>>,
    ) -> Result<(Tape, Var)> {
        let src = self.prepare(&ex.utterance, &ex.resources, true)?;
        let mut tape = Tape::new();
        let enc = self.encode_tape(&mut tape, ex.requirement, &src, drop);
        let mut targets: Vec<usize> = ex
            .response
            .iter()
            .take(MAX_RESPONSE_LEN)
            .map(|t| src.ext_id(&self.vocab, t))
            .collect();
        targets.push(EOS_ID);
        let mut e = enc.e0;
        let mut c = tape.constant(Matrix::zeros(1, 2 * self.arch.hidden));
        let mut prev = BOS_ID;
        let mut terms = Vec::with_capacity(targets.len());
        for &g in &targets {
            let s = self.step_tape(&mut tape, e, c, enc.memory, prev, &src, drop);
            let py = tape.pick(s.y, &[(0, g)]);
            terms.push(tape.log(py));
            e = s.e;
            c = s.context;
            prev = g;
        }
        let all = tape.concat_rows(&terms);
        let nll = tape.sum(all);
        let mut loss = tape.scale(nll, -1.0 / targets.len() as f64);
        if let (Some(gold), true) = (ex.gold, src.knowledge && selection_weight > 0.0) {
            let pos = src
                .order
                .iter()
                .position(|&i| i == gold)
                .ok_or_else(|| Error::InvalidInput(format!("gold resource {gold} out of range")))?;
            let mean = tape.mean_rows(enc.scores);
            let pg = tape.pick(mean, &[(0, pos)]);
            let lg = tape.log(pg);
            let sel = tape.scale(lg, -selection_weight);
            loss = tape.add(loss, sel);
        }
        Ok((tape, loss))
    }

    pub fn loss(&self, ex: &ResponderExample, selection_weight: f64) -> Result<f64> {
        let (tape, l) = self.example_loss(ex, selection_weight, &mut None)?;
        Ok(tape.scalar(l))
    }

    pub fn mean_loss(&self, data: &[ResponderExample], selection_weight: f64) -> Result<f64> {
        let mut total = 0.0;
        for ex in data {
            total += self.loss(ex, selection_weight)?;
        }
        Ok(total / data.len().max(1) as f64)
    }

    /// Per-token log-likelihoods of the gold responses, EOS included.
    pub fn token_log_likelihoods(&self, data: &[ResponderExample]) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for ex in data {
            let src = self.prepare(&ex.utterance, &ex.resources, true)?;
            let enc = self.encode_source(ex.requirement, src);
            let mut state = enc.initial_state();
            let mut prev = BOS_ID;
            let targets = ex
                .response
                .iter()
                .take(MAX_RESPONSE_LEN)
                .map(|t| enc.source.ext_id(&self.vocab, t))
                .chain([EOS_ID]);
            for g in targets {
                let (o, next) = self.decode_step(&enc, &state, prev);
                out.push(o.y[g].ln());
                state = next;
                prev = g;
            }
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            CHECKPOINT_KIND,
            self.params.clone(),
            Some(self.vocab.clone()),
            serde_json::to_value(self.arch).expect("plain struct"),
        )
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let arch: ResponderArch = serde_json::from_value(c.config.clone())?;
        let vocab = c
            .vocab
            .clone()
            .ok_or_else(|| Error::Shape("responder needs a vocabulary".into()))?;
        let mut m = ResponderModel::new(vocab, arch, 0)?;
        m.params.load_from(&c.params)?;
        Ok(m)
    }
}

struct DecoderRun<'a> {
    model: &'a ResponderModel,
    enc: &'a Encoded,
}

impl StepModel for DecoderRun<'_> {
    type State = DecoderState;

    fn start(&self) -> DecoderState {
        self.enc.initial_state()
    }
    fn bos(&self) -> usize {
        BOS_ID
    }
    fn eos(&self) -> usize {
        EOS_ID
    }
    fn step(&self, state: &DecoderState, prev: usize) -> (Vec<f64>, DecoderState) {
        let (out, next) = self.model.decode_step(self.enc, state, prev);
        (out.y.iter().map(|p| p.ln()).collect(), next)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponderExample {
    pub requirement: Requirement,
    pub utterance: Vec<String>,
    pub resources: Vec<ResourceTriple>,
    pub gold: Option<usize>,
    pub response: Vec<String>,
}

impl From<&TemplateItem> for ResponderExample {
    fn from(it: &TemplateItem) -> Self {
        ResponderExample {
            requirement: it.requirement,
            utterance: tokenize(&it.utterance, TokenizerMode::Mixed),
            resources: it.resources.clone(),
            gold: Some(it.gold),
            response: tokenize(&it.response, TokenizerMode::Mixed),
        }
    }
}

/// Every bot turn that follows a user turn, with the user's utterance as
/// input and the KB triples serving the turn's requirement as resources.
pub fn responder_examples(corpus: &Corpus) -> Vec<ResponderExample> {
    let mut out = Vec::new();
    for entry in &corpus.entries {
        let turns = &entry.dialogue.turns;
        for pair in turns.windows(2) {
            let (u, b) = (&pair[0], &pair[1]);
            if u.speaker != Speaker::User || b.speaker != Speaker::Bot {
                continue;
            }
            let utterance = tokenize(&u.utterance, TokenizerMode::Mixed);
            if utterance.is_empty() {
                continue;
            }
            let resources = filter_resources(&entry.kb, b.requirement);
            let gold = b.knowledge.as_ref().and_then(|[s, p, o]| {
                resources
                    .iter()
                    .position(|t| t.spo() == [s.as_str(), p.as_str(), o.as_str()])
            });
            out.push(ResponderExample {
                requirement: b.requirement,
                utterance,
                resources,
                gold,
                response: tokenize(&b.utterance, TokenizerMode::Mixed),
            });
        }
    }
    out
}

pub fn responder_vocab(examples: &[ResponderExample]) -> Vocabulary {
    let mut seqs: Vec<Vec<String>> = Vec::new();
    for r in Requirement::ALL {
        seqs.push(tokenize(r.name(), TokenizerMode::Mixed));
    }
    for ex in examples {
        seqs.push(ex.utterance.clone());
        seqs.push(ex.response.clone());
        for t in &ex.resources {
            seqs.push(resource_tokens(t));
        }
    }
    Vocabulary::build(seqs.iter(), 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponderConfig {
    pub lr: f64,
    pub warmup_proportion: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub selection_weight: f64,
    pub clip: f64,
}

impl Default for ResponderConfig {
    fn default() -> Self {
        ResponderConfig {
            lr: 2e-4,
            warmup_proportion: 0.2,
            weight_decay: 0.01,
            dropout: 0.2,
            epochs: 10,
            batch: 8,
            seed: 0,
            selection_weight: 0.5,
            clip: 5.0,
        }
    }
}

impl ResponderConfig {
    /// From-scratch training on a few hundred templated pairs.
    pub fn desk() -> Self {
        ResponderConfig {
            lr: 3e-3,
            epochs: 30,
            ..ResponderConfig::default()
        }
    }
}

/// Trains `model` in place. Returns the mean training loss of each epoch.
pub fn responder_train(
    model: &mut ResponderModel,
    train: &[ResponderExample],
    cfg: &ResponderConfig,
) -> Result<Vec<f64>> {
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if !(0.0..1.0).contains(&cfg.dropout) {
        return Err(Error::InvalidInput(format!("dropout {} outside [0, 1)", cfg.dropout)));
    }
    let batch = cfg.batch.max(1);
    let steps = cfg.epochs * train.len().div_ceil(batch);
    let schedule = WarmupSchedule::new(cfg.lr, steps, cfg.warmup_proportion);
    let mut opt = AdamW::new(&model.params, cfg.weight_decay).with_clip(cfg.clip);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let mut grads = Grads::zeros_like(&model.params);
            for &i in chunk {
                let mut drop = Some(Dropout {
                    rate: cfg.dropout,
                    rng: &mut rng,
                });
                let (tape, loss) = model.example_loss(&train[i], cfg.selection_weight, &mut drop)?;
                epoch_loss += tape.scalar(loss);
                grads.accumulate(&tape.backward(loss, &model.params));
            }
            grads.scale(1.0 / chunk.len() as f64);
            opt.step(&mut model.params, &grads, schedule.lr(step));
            step += 1;
        }
        history.push(epoch_loss / train.len() as f64);
    }
    Ok(history)
}

#[cfg(test)]
mod tests;
