use super::*;
use crate::corpus::template_items;
use crate::labels::Domain;
use crate::nn::check::max_relative_error;
use crate::nn::{sigmoid, softmax};
use rand::Rng;
use Requirement::*;

fn toks(s: &str) -> Vec<String> {
    tokenize(s, TokenizerMode::Mixed)
}

fn toy_vocab(extra: &[&str]) -> Vocabulary {
    let mut v = Vocabulary::new();
    for w in extra {
        v.insert(w);
    }
    v
}

fn randomize(m: &mut ResponderModel, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in m.params.ids().collect::<Vec<_>>() {
        m.params
            .get_mut(id)
            .data
            .iter_mut()
            .for_each(|x| *x = rng.gen_range(-scale..scale));
    }
}

fn toy(hidden: usize, extra: &[&str], seed: u64) -> ResponderModel {
    let arch = ResponderArch {
        hidden,
        embed_dim: 3,
        scalar_delta: false,
    };
    let mut m = ResponderModel::new(toy_vocab(extra), arch, seed).unwrap();
    randomize(&mut m, seed, 0.7);
    m
}

fn triples() -> Vec<ResourceTriple> {
    vec![
        ResourceTriple::new("jay_chou", "sings", "rice_field", Domain::Music),
        ResourceTriple::new("lin_xia", "sings", "blue_moon", Domain::Music),
        ResourceTriple::new("zhou_xun", "sings", "qing_hua", Domain::Music),
    ]
}

fn p(m: &ResponderModel, name: &str) -> Matrix {
    m.params.get(m.params.id(name).unwrap()).clone()
}

fn mv(m: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..m.rows)
        .map(|r| m.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn addv(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

/// Straight-line GRU cell on plain vectors.
fn gru(wx: &Matrix, bx: &Matrix, u: &Matrix, x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = h.len();
    let xp = addv(&mv(wx, x), &bx.data);
    let hu = mv(u, h);
    (0..n)
        .map(|i| {
            let z = sigmoid(xp[i] + hu[i]);
            let r = sigmoid(xp[n + i] + hu[n + i]);
            let c = (xp[2 * n + i] + r * hu[2 * n + i]).tanh();
            (1.0 - z) * c + z * h[i]
        })
        .collect()
}

fn oracle_bigru(m: &ResponderModel, tokens: &[String]) -> Vec<Vec<f64>> {
    let h = m.arch.hidden;
    let emb = p(m, "emb");
    let xs: Vec<Vec<f64>> = tokens.iter().map(|t| emb.row(m.vocab.id(t)).to_vec()).collect();
    let dir = |pre: &str, rev: bool| {
        let (wx, bx, u) = (
            p(m, &format!("{pre}.wx")),
            p(m, &format!("{pre}.bx")),
            p(m, &format!("{pre}.u")),
        );
        let mut s = vec![0.0; h];
        let mut out = vec![Vec::new(); xs.len()];
        let idx: Vec<usize> = if rev {
            (0..xs.len()).rev().collect()
        } else {
            (0..xs.len()).collect()
        };
        for t in idx {
            s = gru(&wx, &bx, &u, &xs[t], &s);
            out[t] = s.clone();
        }
        out
    };
    let (f, b) = (dir("enc_f", false), dir("enc_b", true));
    f.into_iter().zip(b).map(|(a, b)| [a, b].concat()).collect()
}

#[test]
fn encoder_matches_straight_line_oracle() {
    let m = toy(3, &["play", "music", "jay_chou", "sings", "rice_field", "#"], 2);
    let utt = toks("play music by jay_chou please");
    let res = triples();
    let enc = m.encode(PlayMusic, &utt, &res).unwrap();
    let hu = oracle_bigru(&m, &utt);
    assert_eq!(enc.h_u.shape(), (5, 6));
    for (t, row) in hu.iter().enumerate() {
        assert!(close(enc.h_u.row(t), row, 1e-9));
    }
    let rq = oracle_bigru(&m, &toks("play music"));
    let h_r = [&rq[1][..3], &rq[0][3..]].concat();
    assert!(close(&enc.h_r, &h_r, 1e-9));
    assert_eq!(enc.h_k.rows, 3);
    for (i, t) in res.iter().enumerate() {
        let s = oracle_bigru(&m, &resource_tokens(t));
        assert!(close(enc.h_k.row(i), s.last().unwrap(), 1e-9));
    }
    // Same input twice gives identical states.
    assert_eq!(m.encode(PlayMusic, &utt, &res).unwrap(), enc);
}

#[test]
fn selection_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h_u = Matrix::uniform(3, 4, 1.0, &mut rng);
    let h_k = Matrix::uniform(2, 4, 1.0, &mut rng);
    let (s, h_s) = select_resource(&h_u, &h_k);
    for t in 0..3 {
        let logits: Vec<f64> = (0..2).map(|i| crate::nn::dot(h_u.row(t), h_k.row(i))).collect();
        let row = softmax(&logits);
        assert!(close(&s.per_step[t], &row, 1e-9));
        let mx = row.iter().copied().fold(f64::MIN, f64::max);
        assert!((s.step_max[t] - mx).abs() < 1e-12);
        let scaled: Vec<f64> = h_u.row(t).iter().map(|x| x * mx).collect();
        assert!(close(h_s.row(t), &scaled, 1e-9));
        assert!((s.per_step[t].iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    // One resource: every score is 1 and h_s = h_u.
    let (s1, hs1) = select_resource(&h_u, &Matrix::uniform(1, 4, 1.0, &mut rng));
    assert!(s1.per_step.iter().all(|r| r == &[1.0]));
    assert_eq!(hs1, h_u);

    // Orthogonal or identical resource states: uniform rows.
    let u = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![2.0, 0.0, 0.0]]);
    let k = Matrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 3.0], vec![0.0, -1.0, 1.0]]);
    let (so, _) = select_resource(&u, &k);
    let (ss, _) = select_resource(&h_u, &Matrix::from_rows(&vec![vec![0.3, -0.2, 0.9, 0.1]; 4]));
    for r in so.per_step.iter().chain(&ss.per_step) {
        let m = r.len() as f64;
        assert!(r.iter().all(|&x| (x - 1.0 / m).abs() < 1e-15));
    }
}

#[test]
fn fusion_matches_oracle_and_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 4;
    let h_u = Matrix::uniform(3, n, 1.0, &mut rng);
    let h_k = Matrix::uniform(2, n, 1.0, &mut rng);
    let (s, h_s) = select_resource(&h_u, &h_k);
    let h_r: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (w, v, d) = (
        Matrix::uniform(n, n, 1.0, &mut rng),
        Matrix::uniform(n, n, 1.0, &mut rng),
        Matrix::uniform(n, n, 1.0, &mut rng),
    );
    let h = fuse_states(&h_u, &h_s, &h_r, &w, &v, &d);
    for t in 0..3 {
        let want = addv(&addv(&mv(&w, h_u.row(t)), &mv(&v, h_s.row(t))), &mv(&d, &h_r));
        assert!(close(h.row(t), &want, 1e-9));
    }
    let (id, zero) = (Matrix::identity(n), Matrix::zeros(n, n));
    let h = fuse_states(&h_u, &h_s, &h_r, &id, &id, &zero);
    for t in 0..3 {
        let want: Vec<f64> = h_u.row(t).iter().map(|x| x * (1.0 + s.step_max[t])).collect();
        assert!(close(h.row(t), &want, 1e-12));
    }
    let h = fuse_states(&h_u, &h_s, &h_r, &zero, &zero, &id);
    for t in 0..3 {
        assert_eq!(h.row(t), &h_r[..]);
    }
}

#[test]
fn decode_step_matches_straight_line_oracle() {
    // Vocabulary of 10 (five specials plus five words), H = 3.
    let m = toy(3, &["play", "song", "now", "ok", "rice_field"], 9);
    assert_eq!(m.vocab.len(), 10);
    let utt = toks("play song now");
    let res = vec![ResourceTriple::new("jay_chou", "sings", "rice_field", Domain::Music)];
    let enc = m.encode(PlayMusic, &utt, &res).unwrap();
    // Utterance (3) plus `jay_chou sings rice_field #` (4) source positions.
    assert_eq!(enc.memory.rows, 7);
    assert_eq!(enc.source.oov, vec!["jay_chou".to_string(), "sings".to_string()]);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let e_prev: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let c_prev: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let state = DecoderState {
        e: e_prev.clone(),
        c: c_prev.clone(),
    };
    for prev in [BOS_ID, 5, 11] {
        let (out, next) = m.decode_step(&enc, &state, prev);
        let e = next.e;
        assert_eq!(next.c, out.context);
        let x = [p(&m, "emb").row(if prev < 10 { prev } else { UNK_ID }), &c_prev[..]].concat();
        let e_want = gru(&p(&m, "dec.wx"), &p(&m, "dec.bx"), &p(&m, "dec.u"), &x, &e_prev);
        assert!(close(&e, &e_want, 1e-9));
        let scores: Vec<f64> = (0..7).map(|t| crate::nn::dot(&e_prev, enc.memory.row(t))).collect();
        let a = softmax(&scores);
        assert!(close(&out.attention, &a, 1e-9));
        let c: Vec<f64> = (0..6)
            .map(|j| (0..7).map(|t| a[t] * enc.memory.get(t, j)).sum())
            .collect();
        assert!(close(&out.context, &c, 1e-9));
        let ce = [c.clone(), e_want.clone()].concat();
        let hid = addv(&mv(&p(&m, "out.V"), &ce), &p(&m, "out.b").data);
        let pv = softmax(&addv(&mv(&p(&m, "out.V2"), &hid), &p(&m, "out.b2").data));
        assert!(close(&out.p_vocab, &pv, 1e-9));
        let lam = sigmoid(crate::nn::dot(&p(&m, "switch.W").data, &ce) + p(&m, "switch.b").data[0]);
        assert!((out.lambda - lam).abs() < 1e-9);
        assert!(lam > 0.0 && lam < 1.0);
        let mut y = vec![0.0; 12];
        for w in 0..10 {
            y[w] = lam * pv[w];
        }
        for (t, &id) in enc.source.ext_ids.iter().enumerate() {
            y[id] += (1.0 - lam) * a[t];
        }
        assert!(close(&out.y, &y, 1e-9));
        for dist in [&out.attention, &out.p_vocab, &out.y] {
            assert!(dist.iter().all(|&q| q >= 0.0));
            assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn switch_extremes() {
    let m = toy(3, &["play", "song"], 4);
    let enc = m.encode(PlayMusic, &toks("play song"), &triples()).unwrap();
    let (out, _) = m.decode_step(&enc, &enc.initial_state(), BOS_ID);
    let src = &enc.source;
    let w = src.ext_width();
    let gen = mix_distribution(&out.p_vocab, &out.attention, &src.ext_ids, 1.0, w);
    assert_eq!(&gen[..m.vocab.len()], &out.p_vocab[..]);
    assert!(gen[m.vocab.len()..].iter().all(|&x| x == 0.0));
    let copy = mix_distribution(&out.p_vocab, &out.attention, &src.ext_ids, 0.0, w);
    for (id, &q) in copy.iter().enumerate() {
        if !src.ext_ids.contains(&id) {
            assert_eq!(q, 0.0);
        }
    }
    assert!((copy.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let mixed = mix_distribution(&out.p_vocab, &out.attention, &src.ext_ids, out.lambda, w);
    assert!(close(&mixed, &out.y, 1e-15));
}

#[test]
fn resource_permutation_is_exactly_equivariant() {
    let m = toy(3, &["play", "song", "jay_chou", "rice_field"], 7);
    let utt = toks("play a song by jay_chou");
    let res = triples();
    let base = m.encode(PlayMusic, &utt, &res).unwrap();
    let g0 = m.generate(PlayMusic, "play a song by jay_chou", &res, 3, 6).unwrap();
    for perm in [[1, 0, 2], [2, 1, 0], [1, 2, 0]] {
        let shuffled: Vec<ResourceTriple> = perm.iter().map(|&i| res[i].clone()).collect();
        let enc = m.encode(PlayMusic, &utt, &shuffled).unwrap();
        let (a, b) = (base.selection.as_ref().unwrap(), enc.selection.as_ref().unwrap());
        for t in 0..utt.len() {
            for (k, &i) in perm.iter().enumerate() {
                assert_eq!(b.per_step[t][k], a.per_step[t][i]);
            }
        }
        assert_eq!(a.step_max, b.step_max);
        assert_eq!(shuffled[b.selected_index], res[a.selected_index]);
        assert_eq!(enc.h_s, base.h_s);
        assert_eq!(enc.h, base.h);
        let g = m
            .generate(PlayMusic, "play a song by jay_chou", &shuffled, 3, 6)
            .unwrap();
        assert_eq!(g.tokens, g0.tokens);
        assert_eq!(g.selected_triple, g0.selected_triple);
    }
}

#[test]
fn beam_width_one_equals_greedy_on_model() {
    let m = toy(3, &["play", "song", "now", "ok"], 12);
    let enc = m.encode(PlayMusic, &toks("play song now"), &triples()).unwrap();
    let run = DecoderRun { model: &m, enc: &enc };
    assert_eq!(beam_decode(&run, 1, 8), greedy_decode(&run, 8));
    let wide = beam_decode(&run, 10, 8);
    assert!(wide.score() >= greedy_decode(&run, 8).score());
}

#[test]
fn input_errors_and_no_knowledge_mode() {
    let m = toy(3, &["hello"], 1);
    assert!(m.encode(DailyGreetings, &[], &triples()).is_err());
    assert!(m.encode(DailyGreetings, &toks("hello"), &[]).is_err());
    let enc = m.encode_without_knowledge(DailyGreetings, &toks("hello")).unwrap();
    assert!(enc.selection.is_none());
    assert_eq!(enc.h_k.rows, 1);
    let g = m.generate(DailyGreetings, "hello", &[], 2, 5).unwrap();
    assert_eq!(g.selected, None);
    assert!(g.lambda_trace.iter().all(|&l| l > 0.0 && l < 1.0));
    assert!(matches!(
        responder_train(&mut m.clone(), &[], &ResponderConfig::default()),
        Err(Error::EmptyTrainingSet)
    ));
}

#[test]
fn gradients_match_finite_differences() {
    // Vocabulary of 12, H = 4.
    let mut m = toy(4, &["play", "song", "by", "jay_chou", "sings", "rice_field", "now"], 21);
    assert_eq!(m.vocab.len(), 12);
    let ex = ResponderExample {
        requirement: PlayMusic,
        utterance: toks("play song by jay_chou"),
        resources: vec![
            ResourceTriple::new("jay_chou", "sings", "rice_field", Domain::Music),
            ResourceTriple::new("lin_xia", "sings", "blue_moon", Domain::Music),
        ],
        gold: Some(0),
        response: toks("now rice_field by blue_moon"),
    };
    let (tape, loss) = m.example_loss(&ex, 0.5, &mut None).unwrap();
    let grads = tape.backward(loss, &m.params);
    let shadow = m.clone();
    let err = max_relative_error(&mut m.params, &grads, |p| {
        let mut probe = shadow.clone();
        probe.params = p.clone();
        probe.loss(&ex, 0.5).unwrap()
    });
    assert!(err <= 1e-3, "max relative error {err}");
}

#[test]
fn scalar_delta_variant_runs() {
    let arch = ResponderArch {
        hidden: 3,
        embed_dim: 3,
        scalar_delta: true,
    };
    let m = ResponderModel::new(toy_vocab(&["play"]), arch, 0).unwrap();
    assert_eq!(p(&m, "fuse.delta").shape(), (1, 1));
    assert!(m.encode(PlayMusic, &toks("play"), &triples()).is_ok());
}

#[test]
fn checkpoint_round_trip() {
    let m = toy(3, &["play", "song"], 3);
    let dir = tempfile::tempdir().unwrap();
    m.to_checkpoint().save(dir.path()).unwrap();
    let back = ResponderModel::from_checkpoint(&Checkpoint::load(dir.path()).unwrap()).unwrap();
    assert_eq!(back.arch, m.arch);
    let a = m.encode(PlayMusic, &toks("play song"), &triples()).unwrap();
    let b = back.encode(PlayMusic, &toks("play song"), &triples()).unwrap();
    assert!(close(&a.h.data, &b.h.data, 1e-5));
}

fn small_model(data: &[ResponderExample]) -> ResponderModel {
    let arch = ResponderArch {
        hidden: 24,
        embed_dim: 24,
        scalar_delta: false,
    };
    ResponderModel::new(responder_vocab(data), arch, 0).unwrap()
}

#[test]
fn learns_to_copy_template_objects() {
    let data: Vec<ResponderExample> = template_items(20, 1).iter().map(ResponderExample::from).collect();
    let mut m = small_model(&data);
    let cfg = ResponderConfig {
        epochs: 40,
        batch: 4,
        dropout: 0.0,
        ..ResponderConfig::desk()
    };
    let history = responder_train(&mut m, &data, &cfg).unwrap();
    assert!(history[1] < history[0] && history[2] < history[1], "{history:?}");
    let mut hits = 0;
    for ex in &data {
        let enc = m.encode(ex.requirement, &ex.utterance, &ex.resources).unwrap();
        let h = m.decode(&enc, 1, 20);
        let out: Vec<String> = h.tokens.iter().map(|&t| enc.source.token(&m.vocab, t)).collect();
        let object = &ex.resources[ex.gold.unwrap()].object;
        hits += usize::from(out.contains(object));
    }
    assert!(hits >= 18, "{hits}/20 responses contain the gold object");
}

#[test]
fn corpus_examples_align_gold_triples() {
    let corpus = crate::corpus::generate_synthetic_corpus(&crate::corpus::SynthSpec {
        n_users: 5,
        n_dialogues: 10,
        seed: 2,
    });
    let ex = responder_examples(&corpus);
    assert!(!ex.is_empty());
    for e in &ex {
        if let Some(g) = e.gold {
            let o = &e.resources[g].object;
            assert!(e.response.contains(o));
        }
    }
}
