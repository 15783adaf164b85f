//! Domain labeling of knowledge triples by predicate similarity.

use std::collections::HashMap;

use crate::labels::Domain;

pub const DEFAULT_THRESHOLD: f64 = 0.7;

/// Similarity in `[0, 1]` between a predicate and a domain.
pub trait Similarity: Send + Sync {
    fn sim(&self, text: &str, domain: Domain) -> f64;
}

impl<F> Similarity for F
where
    F: Fn(&str, Domain) -> f64 + Send + Sync,
{
    fn sim(&self, text: &str, domain: Domain) -> f64 {
        self(text, domain)
    }
}

/// Returns the highest-similarity domain among those reaching `threshold`,
/// ties going to the earlier domain; `*` when none qualifies.
pub fn classify_resource(predicate: &str, sim: &dyn Similarity, threshold: f64) -> Domain {
    let mut best: Option<(Domain, f64)> = None;
    for d in Domain::PROFILE {
        let s = sim.sim(predicate, d);
        if s >= threshold && best.is_none_or(|(_, b)| s > b) {
            best = Some((d, s));
        }
    }
    best.map_or(Domain::Wildcard, |(d, _)| d)
}

/// Seed-lexicon similarity: the best character-bigram cosine between the
/// normalized predicate and any seed term of the domain (the domain name is
/// always a seed).
#[derive(Debug, Clone)]
pub struct LexiconSimilarity {
    seeds: HashMap<Domain, Vec<String>>,
}

const SEEDS: &[(Domain, &[&str])] = &[
    (
        Domain::Star,
        &[
            "star",
            "celebrity",
            "birthplace",
            "birthday",
            "height",
            "weight",
            "constellation",
            "blood type",
            "achievement",
            "comment",
            "idol",
            "明星",
            "生日",
            "身高",
            "星座",
            "血型",
            "成就",
            "评论",
        ],
    ),
    (
        Domain::Movie,
        &[
            "movie",
            "film",
            "starring",
            "directed by",
            "director",
            "actor",
            "role",
            "cinema",
            "box office",
            "电影",
            "主演",
            "导演",
            "票房",
        ],
    ),
    (
        Domain::Music,
        &[
            "music", "song", "sings", "singer", "album", "lyrics", "composer", "歌曲", "演唱", "音乐", "专辑",
        ],
    ),
    (
        Domain::Food,
        &[
            "food",
            "dish",
            "cuisine",
            "specialty",
            "recipe",
            "taste",
            "美食",
            "菜",
            "特色菜",
        ],
    ),
    (
        Domain::Poi,
        &[
            "poi",
            "landmark",
            "address",
            "attraction",
            "restaurant",
            "place",
            "地址",
            "景点",
            "餐厅",
        ],
    ),
    (Domain::News, &["news", "headline", "report", "新闻", "报道"]),
    (
        Domain::Weather,
        &[
            "weather",
            "temperature",
            "forecast",
            "wind",
            "rain",
            "time",
            "date",
            "天气",
            "气温",
            "日期",
            "时间",
        ],
    ),
];

impl Default for LexiconSimilarity {
    fn default() -> Self {
        let mut seeds: HashMap<Domain, Vec<String>> = HashMap::new();
        for d in Domain::PROFILE {
            seeds.insert(d, vec![normalize(d.name())]);
        }
        for (d, words) in SEEDS {
            seeds.entry(*d).or_default().extend(words.iter().map(|w| normalize(w)));
        }
        LexiconSimilarity { seeds }
    }
}

impl LexiconSimilarity {
    pub fn add_seed(&mut self, domain: Domain, term: &str) {
        self.seeds.entry(domain).or_default().push(normalize(term));
    }
}

impl Similarity for LexiconSimilarity {
    fn sim(&self, text: &str, domain: Domain) -> f64 {
        let t = normalize(text);
        if t.is_empty() {
            return 0.0;
        }
        self.seeds
            .get(&domain)
            .map(|seeds| seeds.iter().map(|s| bigram_cosine(&t, s)).fold(0.0, f64::max))
            .unwrap_or(0.0)
    }
}

fn normalize(s: &str) -> String {
    s.trim()
        .to_lowercase()
        .chars()
        .map(|c| if c == '_' || c == '-' { ' ' } else { c })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn bigrams(s: &str) -> HashMap<(char, char), f64> {
    let chars: Vec<char> = s.chars().collect();
    let mut out = HashMap::new();
    if chars.len() == 1 {
        *out.entry((chars[0], '\0')).or_insert(0.0) += 1.0;
    }
    for w in chars.windows(2) {
        *out.entry((w[0], w[1])).or_insert(0.0) += 1.0;
    }
    out
}

/// Cosine similarity of character-bigram count vectors.
pub(crate) fn bigram_cosine(a: &str, b: &str) -> f64 {
    if a == b {
        return 1.0;
    }
    let (va, vb) = (bigrams(a), bigrams(b));
    let dot: f64 = va.iter().filter_map(|(k, x)| vb.get(k).map(|y| x * y)).sum();
    let na: f64 = va.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = vb.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).min(1.0)
    }
}
