//! Length-normalized beam search over any step-wise scorer.

use std::cmp::Ordering;

/// A left-to-right model over token ids.
pub trait StepModel {
    type State: Clone;

    fn start(&self) -> Self::State;
    fn bos(&self) -> usize;
    fn eos(&self) -> usize;
    /// Consumes `prev`, returning log-probabilities of the next token and
    /// the updated state.
    fn step(&self, state: &Self::State, prev: usize) -> (Vec<f64>, Self::State);
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens, without BOS or EOS.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// Scored positions: the tokens plus EOS when one was emitted.
    pub length: usize,
}

impl Hypothesis {
    pub fn score(&self) -> f64 {
        self.log_prob / self.length.max(1) as f64
    }
}

/// Higher score first; ties go to the lexicographically smaller sequence.
fn better(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score()
        .total_cmp(&a.score())
        .then_with(|| a.tokens.cmp(&b.tokens))
        .then_with(|| a.length.cmp(&b.length))
}

pub fn best_of(pool: &[Hypothesis]) -> Option<&Hypothesis> {
    pool.iter().min_by(|a, b| better(a, b))
}

/// Argmax decoding; ties go to the lower token index.
pub fn greedy_decode<M: StepModel>(model: &M, max_len: usize) -> Hypothesis {
    let mut state = model.start();
    let mut prev = model.bos();
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    for _ in 0..max_len {
        let (lp, next) = model.step(&state, prev);
        let w = crate::nn::argmax(&lp);
        log_prob += lp[w];
        if w == model.eos() {
            let length = tokens.len() + 1;
            return Hypothesis {
                tokens,
                log_prob,
                length,
            };
        }
        tokens.push(w);
        state = next;
        prev = w;
    }
    let length = tokens.len();
    Hypothesis {
        tokens,
        log_prob,
        length,
    }
}

struct Live<S> {
    tokens: Vec<usize>,
    log_prob: f64,
    state: S,
}

/// Keeps the `beam_size` best expansions per step, counting finished ones
/// against the width, and returns the best finished hypothesis by
/// length-normalized log-probability. The greedy hypothesis joins the final
/// pool so the result never scores below it.
pub fn beam_decode<M: StepModel>(model: &M, beam_size: usize, max_len: usize) -> Hypothesis {
    let beam_size = beam_size.max(1);
    let eos = model.eos();
    let mut live = vec![Live {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: model.start(),
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for step in 0..max_len {
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        let mut states = Vec::with_capacity(live.len());
        for (b, h) in live.iter().enumerate() {
            let prev = h.tokens.last().copied().unwrap_or_else(|| model.bos());
            let (lp, next) = model.step(&h.state, prev);
            for (w, &l) in lp.iter().enumerate() {
                cands.push((h.log_prob + l, b, w));
            }
            states.push(next);
        }
        // Live hypotheses share a length, so raw log-probability ranks them.
        cands.sort_by(|x, y| {
            y.0.total_cmp(&x.0).then_with(|| {
                live[x.1]
                    .tokens
                    .iter()
                    .chain([&x.2])
                    .cmp(live[y.1].tokens.iter().chain([&y.2]))
            })
        });
        cands.truncate(beam_size);
        let mut next_live = Vec::new();
        for (lp, b, w) in cands {
            let tokens = live[b].tokens.clone();
            if w == eos {
                let length = tokens.len() + 1;
                finished.push(Hypothesis {
                    tokens,
                    log_prob: lp,
                    length,
                });
                continue;
            }
            let mut tokens = tokens;
            tokens.push(w);
            if step + 1 == max_len {
                let length = tokens.len();
                finished.push(Hypothesis {
                    tokens,
                    log_prob: lp,
                    length,
                });
            } else {
                next_live.push(Live {
                    tokens,
                    log_prob: lp,
                    state: states[b].clone(),
                });
            }
        }
        live = next_live;
        if live.is_empty() {
            break;
        }
    }
    if beam_size > 1 {
        finished.push(greedy_decode(model, max_len));
    }
    best_of(&finished).cloned().unwrap_or(Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        length: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::log_softmax;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Next-token log-probabilities depend on the full prefix through a
    /// random hash-seeded table.
    struct Toy {
        vocab: usize,
        seed: u64,
    }

    impl StepModel for Toy {
        type State = Vec<usize>;
        fn start(&self) -> Vec<usize> {
            Vec::new()
        }
        fn bos(&self) -> usize {
            self.vocab
        }
        fn eos(&self) -> usize {
            0
        }
        fn step(&self, state: &Vec<usize>, prev: usize) -> (Vec<f64>, Vec<usize>) {
            let mut s = state.clone();
            s.push(prev);
            let mut h = self.seed;
            for &t in &s {
                h = h.wrapping_mul(1_000_003).wrapping_add(t as u64 + 1);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(h);
            let logits: Vec<f64> = (0..self.vocab).map(|_| rng.gen_range(-2.0..2.0)).collect();
            (log_softmax(&logits), s)
        }
    }

    fn exhaustive<M: StepModel>(m: &M, max_len: usize) -> Hypothesis {
        fn go<M: StepModel>(
            m: &M,
            state: &M::State,
            prev: usize,
            tokens: &mut Vec<usize>,
            lp: f64,
            max_len: usize,
            out: &mut Vec<Hypothesis>,
        ) {
            let (dist, next) = m.step(state, prev);
            for (w, &l) in dist.iter().enumerate() {
                if w == m.eos() {
                    out.push(Hypothesis {
                        tokens: tokens.clone(),
                        log_prob: lp + l,
                        length: tokens.len() + 1,
                    });
                    continue;
                }
                tokens.push(w);
                if tokens.len() == max_len {
                    out.push(Hypothesis {
                        tokens: tokens.clone(),
                        log_prob: lp + l,
                        length: max_len,
                    });
                } else {
                    go(m, &next, w, tokens, lp + l, max_len, out);
                }
                tokens.pop();
            }
        }
        let mut out = Vec::new();
        go(m, &m.start(), m.bos(), &mut Vec::new(), 0.0, max_len, &mut out);
        best_of(&out).unwrap().clone()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn wide_beam_matches_exhaustive_search(seed in any::<u64>(), vocab in 2usize..5) {
            let m = Toy { vocab, seed };
            let width = vocab.pow(3);
            prop_assert_eq!(beam_decode(&m, width, 3), exhaustive(&m, 3));
        }

        #[test]
        fn width_one_is_greedy(seed in any::<u64>(), vocab in 2usize..6) {
            let m = Toy { vocab, seed };
            prop_assert_eq!(beam_decode(&m, 1, 8), greedy_decode(&m, 8));
        }

        #[test]
        fn beam_never_scores_below_greedy(seed in any::<u64>(), vocab in 2usize..6, width in 2usize..12) {
            let m = Toy { vocab, seed };
            prop_assert!(beam_decode(&m, width, 8).score() >= greedy_decode(&m, 8).score());
        }
    }

    #[test]
    fn stops_at_eos_and_max_len() {
        let m = Toy { vocab: 4, seed: 3 };
        for width in [1, 3, 10] {
            let h = beam_decode(&m, width, 5);
            assert!(h.tokens.len() <= 5);
            assert!(!h.tokens.contains(&0));
            assert!(h.length == h.tokens.len() || h.length == h.tokens.len() + 1);
        }
    }
}
