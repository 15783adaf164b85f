//! Evaluation metrics for planning, detection, selection and generation.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::InvalidInput(format!(
            "prediction and gold counts differ ({a} vs {b})"
        )));
    }
    Ok(())
}

/// Fraction of instances whose predicted sequence equals the gold one.
pub fn exact_match<T: PartialEq>(pred: &[Vec<T>], gold: &[Vec<T>]) -> Result<f64> {
    same_len(pred.len(), gold.len())?;
    if gold.is_empty() {
        return Err(Error::InvalidInput("no instances".into()));
    }
    let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Mean per-instance recall of gold nodes.
pub fn averaged_goal_recall<T: Eq + Hash>(pred: &[Vec<T>], gold: &[Vec<T>]) -> Result<f64> {
    same_len(pred.len(), gold.len())?;
    if gold.is_empty() {
        return Err(Error::InvalidInput("no instances".into()));
    }
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gold) {
        let gs: HashSet<&T> = g.iter().collect();
        if gs.is_empty() {
            return Err(Error::InvalidInput("empty gold sequence".into()));
        }
        let ps: HashSet<&T> = p.iter().collect();
        total += gs.intersection(&ps).count() as f64 / gs.len() as f64;
    }
    Ok(total / gold.len() as f64)
}

fn ngrams<T: Eq + Hash + Clone>(xs: &[T], n: usize) -> HashMap<Vec<T>, usize> {
    let mut out = HashMap::new();
    if xs.len() >= n {
        for w in xs.windows(n) {
            *out.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    out
}

/// Clipped n-gram matches and candidate n-gram count.
fn clipped<T: Eq + Hash + Clone>(pred: &[T], gold: &[T], n: usize) -> (usize, usize) {
    let p = ngrams(pred, n);
    let g = ngrams(gold, n);
    let matched = p.iter().map(|(k, &c)| c.min(g.get(k).copied().unwrap_or(0))).sum();
    (matched, pred.len().saturating_sub(n - 1))
}

fn smoothed(matched: usize, total: usize) -> f64 {
    if matched == 0 {
        1.0 / (total + 1) as f64
    } else {
        matched as f64 / total as f64
    }
}

fn brevity_penalty(pred_len: usize, gold_len: usize) -> f64 {
    if pred_len > gold_len {
        1.0
    } else {
        (1.0 - gold_len as f64 / pred_len as f64).exp()
    }
}

/// BLEU-2 of one pair: geometric mean of unigram and bigram modified
/// precision (add-one smoothed when a match count is zero) times the
/// brevity penalty. An empty prediction scores 0.
pub fn sentence_bleu2<T: Eq + Hash + Clone>(pred: &[T], gold: &[T]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let (m1, c1) = clipped(pred, gold, 1);
    let (m2, c2) = clipped(pred, gold, 2);
    let p1 = smoothed(m1, c1);
    let p2 = smoothed(m2, c2);
    brevity_penalty(pred.len(), gold.len()) * (p1 * p2).sqrt()
}

/// Mean sentence-level BLEU-2.
pub fn bleu2<T: Eq + Hash + Clone>(pred: &[Vec<T>], gold: &[Vec<T>]) -> Result<f64> {
    same_len(pred.len(), gold.len())?;
    if gold.is_empty() {
        return Err(Error::InvalidInput("no instances".into()));
    }
    let sum: f64 = pred.iter().zip(gold).map(|(p, g)| sentence_bleu2(p, g)).sum();
    Ok(sum / gold.len() as f64)
}

/// Corpus-level BLEU-2: counts pooled over all instances before dividing.
pub fn corpus_bleu2<T: Eq + Hash + Clone>(pred: &[Vec<T>], gold: &[Vec<T>]) -> Result<f64> {
    same_len(pred.len(), gold.len())?;
    let (mut m1, mut c1, mut m2, mut c2, mut pl, mut gl) = (0, 0, 0, 0, 0, 0);
    for (p, g) in pred.iter().zip(gold) {
        let (a, b) = clipped(p, g, 1);
        let (c, d) = clipped(p, g, 2);
        m1 += a;
        c1 += b;
        m2 += c;
        c2 += d;
        pl += p.len();
        gl += g.len();
    }
    if pl == 0 {
        return Ok(0.0);
    }
    Ok(brevity_penalty(pl, gl) * (smoothed(m1, c1) * smoothed(m2, c2)).sqrt())
}

/// Distinct bigrams over total bigrams across all responses.
pub fn dist2<T: Eq + Hash + Clone>(responses: &[Vec<T>]) -> Result<f64> {
    let mut distinct = HashSet::new();
    let mut total = 0usize;
    for r in responses {
        for w in r.windows(2) {
            distinct.insert(w.to_vec());
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::InvalidInput("no bigrams in responses".into()));
    }
    Ok(distinct.len() as f64 / total as f64)
}

/// `exp(-mean log-likelihood)` over per-token natural-log likelihoods.
pub fn perplexity(token_log_likelihoods: &[f64]) -> Result<f64> {
    if token_log_likelihoods.is_empty() {
        return Err(Error::InvalidInput("perplexity needs at least one token".into()));
    }
    let mean = token_log_likelihoods.iter().sum::<f64>() / token_log_likelihoods.len() as f64;
    Ok((-mean).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: BTreeMap<usize, ClassScores>,
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Accuracy plus macro-averaged precision, recall and F1 over every class
/// that occurs in either list. A class never predicted has precision 0.
pub fn classification_metrics(pred: &[usize], gold: &[usize]) -> Result<ClassificationReport> {
    same_len(pred.len(), gold.len())?;
    if gold.is_empty() {
        return Err(Error::InvalidInput("no instances".into()));
    }
    let classes: BTreeSet<usize> = pred.iter().chain(gold).copied().collect();
    let mut per_class = BTreeMap::new();
    for &c in &classes {
        let tp = pred.iter().zip(gold).filter(|(&p, &g)| p == c && g == c).count();
        let predicted = pred.iter().filter(|&&p| p == c).count();
        let support = gold.iter().filter(|&&g| g == c).count();
        let precision = if predicted == 0 {
            0.0
        } else {
            tp as f64 / predicted as f64
        };
        let recall = if support == 0 { 0.0 } else { tp as f64 / support as f64 };
        per_class.insert(
            c,
            ClassScores {
                precision,
                recall,
                f1: f1(precision, recall),
                support,
            },
        );
    }
    let k = per_class.len() as f64;
    let mean = |f: fn(&ClassScores) -> f64| per_class.values().map(f).sum::<f64>() / k;
    Ok(ClassificationReport {
        accuracy: pred.iter().zip(gold).filter(|(p, g)| p == g).count() as f64 / gold.len() as f64,
        precision: mean(|s| s.precision),
        recall: mean(|s| s.recall),
        f1: mean(|s| s.f1),
        per_class,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Micro P/R/F1 from hit, prediction and gold counts; empty denominators
/// give 0.
pub fn prf_from_counts(hits: usize, predictions: usize, gold: usize) -> Prf {
    let precision = if predictions == 0 {
        0.0
    } else {
        hits as f64 / predictions as f64
    };
    let recall = if gold == 0 { 0.0 } else { hits as f64 / gold as f64 };
    Prf {
        precision,
        recall,
        f1: f1(precision, recall),
    }
}

pub type Triple = [String; 3];

/// Triple mode: a hit is a selected triple identical to the gold one.
pub fn knowledge_prf_triples(selected: &[Option<Triple>], gold: &[Option<Triple>]) -> Result<Prf> {
    same_len(selected.len(), gold.len())?;
    let hits = selected.iter().zip(gold).filter(|(s, g)| s.is_some() && s == g).count();
    Ok(prf_from_counts(
        hits,
        selected.iter().flatten().count(),
        gold.iter().flatten().count(),
    ))
}

/// Text mode: a gold triple is hit when its object appears verbatim in the
/// response. A response counts as a prediction when it contains the object
/// of any of its candidate triples.
pub fn knowledge_prf_text(responses: &[String], gold: &[Option<Triple>], candidates: &[Vec<Triple>]) -> Result<Prf> {
    same_len(responses.len(), gold.len())?;
    same_len(responses.len(), candidates.len())?;
    let mut hits = 0;
    let mut predictions = 0;
    for ((r, g), cands) in responses.iter().zip(gold).zip(candidates) {
        let mentions = |t: &Triple| !t[2].is_empty() && r.contains(t[2].as_str());
        if cands.iter().any(mentions) || g.as_ref().is_some_and(mentions) {
            predictions += 1;
        }
        if g.as_ref().is_some_and(mentions) {
            hits += 1;
        }
    }
    Ok(prf_from_counts(hits, predictions, gold.iter().flatten().count()))
}

/// Named metric values with the averaging and smoothing variants used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: String,
    pub metrics: BTreeMap<String, f64>,
    pub metric_variant: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub instances: Vec<serde_json::Value>,
}

impl MetricReport {
    pub fn new(task: &str) -> Self {
        let mut metric_variant = BTreeMap::new();
        for (k, v) in [
            ("bleu2", "sentence-level mean, add-one smoothing on zero match counts"),
            (
                "classification",
                "macro average over classes present in gold or prediction",
            ),
            ("knowledge", "micro average over instances"),
            (
                "ppl",
                "exp of mean negative token log-likelihood under the output distribution",
            ),
        ] {
            metric_variant.insert(k.to_string(), v.to_string());
        }
        MetricReport {
            task: task.to_string(),
            metrics: BTreeMap::new(),
            metric_variant,
            instances: Vec::new(),
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.metrics.insert(name.to_string(), value);
        self
    }

    /// Header and one data row, values ×100 except PPL.
    pub fn to_csv(&self) -> String {
        let names: Vec<&String> = self.metrics.keys().collect();
        let header = std::iter::once("task".to_string())
            .chain(names.iter().map(|s| s.to_string()))
            .collect::<Vec<_>>()
            .join(",");
        let row = std::iter::once(self.task.clone())
            .chain(names.iter().map(|n| {
                let v = self.metrics[*n];
                if n.as_str() == "ppl" {
                    format!("{v:.2}")
                } else {
                    format!("{:.2}", v * 100.0)
                }
            }))
            .collect::<Vec<_>>()
            .join(",");
        format!("{header}\n{row}\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn exact_match_examples() {
        let g = vec![vec![1, 2], vec![3], vec![4, 5], vec![6]];
        close(exact_match(&g, &g).unwrap(), 1.0);
        let wrong = vec![vec![9], vec![9], vec![9], vec![9]];
        close(exact_match(&wrong, &g).unwrap(), 0.0);
        let three = vec![vec![1, 2], vec![3], vec![4, 5], vec![7]];
        close(exact_match(&three, &g).unwrap(), 0.75);
        assert!(exact_match(&three[..2], &g).is_err());
    }

    #[test]
    fn agr_examples() {
        let g = vec![vec![1, 2, 3, 4]];
        close(averaged_goal_recall(&g, &g).unwrap(), 1.0);
        close(averaged_goal_recall(&[vec![1, 2, 3]], &g).unwrap(), 0.75);
        close(averaged_goal_recall(&[vec![7]], &g).unwrap(), 0.0);
        assert!(averaged_goal_recall(&[vec![1]], &[vec![]]).is_err());
    }

    #[test]
    fn bleu_identity_and_floor() {
        let x = toks("the cat sat");
        close(sentence_bleu2(&x, &x), 1.0);
        let none = sentence_bleu2(&toks("a b c"), &x);
        // Both precisions smoothed to 1/(3+1) and 1/(2+1).
        close(none, (0.25f64 * (1.0 / 3.0)).sqrt());
        assert!(none < 0.3);
        assert_eq!(sentence_bleu2::<String>(&[], &x), 0.0);
    }

    #[test]
    fn bleu_worked_example() {
        // pred: the cat sat on mat (5); gold: the cat sat on the mat (6).
        // unigram clipped matches 5/5; bigrams {the cat, cat sat, sat on,
        // on mat} vs gold {the cat, cat sat, sat on, on the, the mat}: 3/4.
        // BP = exp(1 - 6/5).
        let pred = toks("the cat sat on mat");
        let gold = toks("the cat sat on the mat");
        let expected = (1.0f64 - 6.0 / 5.0).exp() * (1.0f64 * 0.75).sqrt();
        close(sentence_bleu2(&pred, &gold), expected);
        close(
            bleu2(std::slice::from_ref(&pred), std::slice::from_ref(&gold)).unwrap(),
            expected,
        );
        close(corpus_bleu2(&[pred], &[gold]).unwrap(), expected);
    }

    #[test]
    fn dist2_examples() {
        close(dist2(&[toks("a b a b")]).unwrap(), 2.0 / 3.0);
        close(dist2(&[toks("a b c d")]).unwrap(), 1.0);
        close(dist2(&[toks("x y"), toks("x y"), toks("x y")]).unwrap(), 1.0 / 3.0);
        assert!(dist2(&[toks("solo")]).is_err());
    }

    #[test]
    fn perplexity_examples() {
        let v = 37.0f64;
        close(perplexity(&[-(v.ln()); 11]).unwrap(), v);
        close(perplexity(&[0.0, 0.0]).unwrap(), 1.0);
        let ll = [-0.2, -1.3, -0.7];
        close(perplexity(&ll).unwrap(), (2.2f64 / 3.0).exp());
        assert!(perplexity(&[]).is_err());
    }

    #[test]
    fn classification_examples() {
        let gold = vec![0, 1, 1, 0];
        let r = classification_metrics(&gold, &gold).unwrap();
        close(r.accuracy, 1.0);
        close(r.f1, 1.0);

        // Confusion [[8,2],[1,9]]: rows gold, columns predicted.
        let mut pred = Vec::new();
        let mut gold = Vec::new();
        for (g, p, n) in [(0, 0, 8), (0, 1, 2), (1, 0, 1), (1, 1, 9)] {
            for _ in 0..n {
                gold.push(g);
                pred.push(p);
            }
        }
        let r = classification_metrics(&pred, &gold).unwrap();
        close(r.accuracy, 0.85);
        let (p0, r0, p1, r1) = (8.0 / 9.0, 0.8, 9.0 / 11.0, 0.9);
        close(r.per_class[&0].precision, p0);
        close(r.per_class[&0].recall, r0);
        close(r.per_class[&1].precision, p1);
        close(r.per_class[&1].recall, r1);
        close(r.precision, (p0 + p1) / 2.0);
        close(r.f1, (f1(p0, r0) + f1(p1, r1)) / 2.0);

        let constant = classification_metrics(&[1, 1, 1, 1], &[0, 1, 0, 1]).unwrap();
        close(constant.accuracy, 0.5);
        close(constant.per_class[&0].precision, 0.0);
        assert!(classification_metrics(&[], &[]).is_err());
    }

    fn t(s: &str, p: &str, o: &str) -> Triple {
        [s.into(), p.into(), o.into()]
    }

    #[test]
    fn knowledge_examples() {
        let g = vec![Some(t("a", "b", "c")), Some(t("d", "e", "f"))];
        let r = knowledge_prf_triples(&g, &g).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));

        let kfp = t("Jackie Chan", "starring", "Kung Fu Panda 3");
        let text = knowledge_prf_text(
            &["I recommend Kung Fu Panda 3 , starring Jackie Chan .".to_string()],
            &[Some(kfp.clone())],
            &[vec![kfp]],
        )
        .unwrap();
        close(text.recall, 1.0);

        let r = prf_from_counts(3, 4, 5);
        close(r.precision, 0.75);
        close(r.recall, 0.6);
        close(r.f1, 2.0 * 0.75 * 0.6 / 1.35);
        assert!((r.f1 - 0.667).abs() < 1e-3);

        // Same counts via triple mode: 4 selections, 5 gold, 3 correct.
        let gold: Vec<Option<Triple>> = (0..5).map(|i| Some(t("s", "p", &i.to_string()))).collect();
        let mut sel = gold.clone();
        sel[3] = Some(t("x", "y", "z"));
        sel[4] = None;
        let r2 = knowledge_prf_triples(&sel, &gold).unwrap();
        assert_eq!(r, r2);
    }

    #[test]
    fn report_csv() {
        let r = MetricReport::new("planning").with("em", 0.5).with("ppl", 3.0);
        assert_eq!(r.to_csv(), "task,em,ppl\nplanning,50.00,3.00\n");
        assert!(r.metric_variant.contains_key("bleu2"));
    }

    fn arb_corpus() -> impl Strategy<Value = (Vec<Vec<u8>>, Vec<Vec<u8>>)> {
        (1usize..20).prop_flat_map(|n| {
            (
                prop::collection::vec(prop::collection::vec(0u8..6, 0..6), n),
                prop::collection::vec(prop::collection::vec(0u8..6, 1..6), n),
            )
        })
    }

    proptest! {
        #[test]
        fn em_never_exceeds_agr((pred, gold) in arb_corpus()) {
            let em = exact_match(&pred, &gold).unwrap();
            let agr = averaged_goal_recall(&pred, &gold).unwrap();
            prop_assert!(em <= agr + 1e-12);
            prop_assert!((0.0..=1.0).contains(&agr));
        }

        #[test]
        fn bleu_bounded_and_identity((pred, gold) in arb_corpus()) {
            let b = bleu2(&pred, &gold).unwrap();
            prop_assert!((0.0..=1.0).contains(&b));
            prop_assert!((bleu2(&gold, &gold).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn dist2_order_invariant(mut rs in prop::collection::vec(prop::collection::vec(0u8..4, 2..6), 1..8)) {
            let a = dist2(&rs).unwrap();
            rs.reverse();
            prop_assert_eq!(a, dist2(&rs).unwrap());
            prop_assert!(a > 0.0 && a <= 1.0);
        }

        #[test]
        fn classification_bounded(pairs in prop::collection::vec((0usize..5, 0usize..5), 1..40)) {
            let (p, g): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let r = classification_metrics(&p, &g).unwrap();
            for v in [r.accuracy, r.precision, r.recall, r.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
