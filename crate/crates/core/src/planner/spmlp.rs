//! SP-MLP: six chained 21-way classifiers that predict a requirement
//! sequence slot by slot from user features.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{knowledge_abundance, preference_satisfaction};
use crate::corpus::{PersonalKb, UserProfile};
use crate::error::{Error, Result};
use crate::labels::{Domain, Requirement};
use crate::nn::{argmax, AdamW, Matrix, ParamId, Params, Tape, Var};

pub const N_HEADS: usize = 6;
/// 20 requirements plus the none label.
pub const N_CLASSES: usize = Requirement::COUNT + 1;
pub const NONE_CLASS: usize = Requirement::COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureMode {
    /// Profile entity counts per domain and KB triple counts per domain.
    #[serde(rename = "OF")]
    Original,
    /// `Original` followed by sat and abd for every requirement.
    #[serde(rename = "AF")]
    Augmented,
}

impl FeatureMode {
    pub fn width(self) -> usize {
        let of = Domain::PROFILE.len() + Domain::ALL.len();
        match self {
            FeatureMode::Original => of,
            FeatureMode::Augmented => of + 2 * Requirement::COUNT,
        }
    }
}

pub fn spmlp_features(profile: &UserProfile, kb: &PersonalKb, mode: FeatureMode) -> Vec<f64> {
    let mut f: Vec<f64> = Domain::PROFILE.iter().map(|&d| profile.count(d) as f64).collect();
    f.extend(Domain::ALL.iter().map(|&d| kb.count(d) as f64));
    if mode == FeatureMode::Augmented {
        // Undefined ratios (empty profile or KB) encode as zero.
        f.extend(
            Requirement::ALL
                .iter()
                .map(|&r| preference_satisfaction(profile, r).unwrap_or(0.0)),
        );
        f.extend(
            Requirement::ALL
                .iter()
                .map(|&r| knowledge_abundance(kb, r).unwrap_or(0.0)),
        );
    }
    f
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpmlpConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for SpmlpConfig {
    fn default() -> Self {
        SpmlpConfig {
            hidden: vec![128, 64, 32],
            lr: 1e-3,
            epochs: 200,
            batch: 16,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpmlpExample {
    pub features: Vec<f64>,
    pub sequence: Vec<Requirement>,
}

impl SpmlpExample {
    /// Gold class per slot, padded with the none label.
    pub fn targets(&self) -> [usize; N_HEADS] {
        let mut t = [NONE_CLASS; N_HEADS];
        for (slot, r) in t.iter_mut().zip(&self.sequence) {
            *slot = r.index();
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpmlpModel {
    pub input_width: usize,
    pub hidden: Vec<usize>,
    pub params: Params,
    /// Per head: (weight, bias) pairs, input layer first.
    layers: Vec<Vec<(ParamId, ParamId)>>,
}

impl SpmlpModel {
    pub fn new(input_width: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let mut layers = Vec::with_capacity(N_HEADS);
        for h in 0..N_HEADS {
            let mut width = input_width + if h > 0 { N_CLASSES } else { 0 };
            let mut head = Vec::new();
            for (l, &out) in hidden.iter().chain(std::iter::once(&N_CLASSES)).enumerate() {
                let w = params.add(&format!("head{h}.l{l}.w"), Matrix::xavier(out, width, &mut rng));
                let b = params.add(&format!("head{h}.l{l}.b"), Matrix::zeros(1, out));
                head.push((w, b));
                width = out;
            }
            layers.push(head);
        }
        SpmlpModel {
            input_width,
            hidden: hidden.to_vec(),
            params,
            layers,
        }
    }

    /// Rebuilds the layer table for loaded parameters.
    pub fn from_params(input_width: usize, hidden: &[usize], params: Params) -> Result<Self> {
        let mut model = SpmlpModel::new(input_width, hidden, 0);
        model.params.load_from(&params)?;
        Ok(model)
    }

    /// Per-head logits for a batch (`B × input_width`).
    fn logits(&self, tape: &mut Tape, x: Var) -> Vec<Var> {
        let mut out = Vec::with_capacity(N_HEADS);
        let mut prev: Option<Var> = None;
        for head in &self.layers {
            let mut a = match prev {
                Some(p) => tape.concat_cols(&[x, p]),
                None => x,
            };
            for (l, &(w, b)) in head.iter().enumerate() {
                let (w, b) = (tape.param(&self.params, w), tape.param(&self.params, b));
                a = tape.linear(a, w, b);
                if l + 1 < head.len() {
                    a = tape.relu(a);
                }
            }
            prev = Some(tape.softmax_rows(a));
            out.push(a);
        }
        out
    }

    /// Per-head class distributions for one feature vector.
    pub fn probabilities(&self, features: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_width(features.len())?;
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::row_vector(features.to_vec()));
        let logits = self.logits(&mut tape, x);
        Ok(logits
            .into_iter()
            .map(|l| {
                let p = tape.softmax_rows(l);
                tape.value(p).data.clone()
            })
            .collect())
    }

    fn check_width(&self, w: usize) -> Result<()> {
        if w != self.input_width {
            return Err(Error::Shape(format!(
                "SP-MLP expects {} features, got {w}",
                self.input_width
            )));
        }
        Ok(())
    }

    /// Summed per-head cross-entropy, averaged over the batch; returns the
    /// tape and the scalar loss node.
    pub fn loss(&self, batch: &[&SpmlpExample]) -> Result<(Tape, Var)> {
        for e in batch {
            self.check_width(e.features.len())?;
        }
        let mut tape = Tape::new();
        let rows: Vec<Vec<f64>> = batch.iter().map(|e| e.features.clone()).collect();
        let x = tape.constant(Matrix::from_rows(&rows));
        let targets: Vec<[usize; N_HEADS]> = batch.iter().map(|e| e.targets()).collect();
        let logits = self.logits(&mut tape, x);
        let mut total: Option<Var> = None;
        for (h, l) in logits.into_iter().enumerate() {
            let lp = tape.log_softmax_rows(l);
            let at: Vec<(usize, usize)> = targets.iter().enumerate().map(|(i, t)| (i, t[h])).collect();
            let picked = tape.pick(lp, &at);
            let s = tape.sum(picked);
            total = Some(match total {
                Some(t) => tape.add(t, s),
                None => s,
            });
        }
        let loss = tape.scale(total.expect("six heads"), -1.0 / batch.len() as f64);
        Ok((tape, loss))
    }
}

pub fn spmlp_train(train: &[SpmlpExample], mode: FeatureMode, cfg: &SpmlpConfig) -> Result<SpmlpModel> {
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut model = SpmlpModel::new(mode.width(), &cfg.hidden, cfg.seed);
    let mut opt = AdamW::new(&model.params, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch.max(1)) {
            let batch: Vec<&SpmlpExample> = chunk.iter().map(|&i| &train[i]).collect();
            let (tape, loss) = model.loss(&batch)?;
            let grads = tape.backward(loss, &model.params);
            opt.step(&mut model.params, &grads, cfg.lr);
        }
    }
    Ok(model)
}

/// Per-slot argmax, truncated at the first none label.
pub fn spmlp_predict(model: &SpmlpModel, features: &[f64]) -> Result<Vec<Requirement>> {
    let probs = model.probabilities(features)?;
    Ok(probs
        .iter()
        .map(|p| argmax(p))
        .take_while(|&c| c != NONE_CLASS)
        .map(|c| Requirement::from_index(c).expect("class below NONE_CLASS"))
        .collect())
}
