//! Templated synthetic corpora for desk-scale training.
//!
//! Users get a random profile skewed toward one or two favourite domains and
//! a personal KB with a few triples per domain. Each dialogue walks a fixed
//! requirement transition structure from `daily greetings` to `goodbye`,
//! preferring requirements in the user's favourite domains. Every user turn
//! mentions the subject of the triple the following bot turn mentions, so
//! requirement, completion, and gold-triple labels are all known.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusEntry, DialogueRecord, PersonalKb, ResourceTriple, Speaker, Turn, UserProfile};
use crate::labels::{Domain, Requirement};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_users: usize,
    pub n_dialogues: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_users: 60,
            n_dialogues: 400,
            seed: 7,
        }
    }
}

const STARS: &[&str] = &[
    "jay_chou",
    "lin_xia",
    "zhou_xun",
    "andy_lau",
    "faye_wong",
    "chen_kun",
    "zhang_ziyi",
    "huang_bo",
    "sun_li",
    "li_bing",
    "deng_chao",
    "gu_tianle",
    "xie_na",
    "yang_mi",
    "hu_ge",
    "shu_qi",
    "tang_wei",
    "wu_jing",
    "eason_chan",
    "jolin_tsai",
];
const MOVIES: &[&str] = &[
    "kung_fu_panda_3",
    "initial_d",
    "tian_court",
    "secret_melody",
    "silver_harbor",
    "night_train",
    "red_lantern",
    "jade_sword",
    "river_song",
    "paper_moon",
    "iron_bridge",
    "lost_in_rain",
    "blue_kite",
    "golden_hour",
    "wolf_valley",
    "city_of_glass",
    "snow_dance",
    "last_ferry",
    "quiet_storm",
    "summer_palace",
];
const SONGS: &[&str] = &[
    "waiting_for_you",
    "blue_and_white",
    "sunny_day",
    "rice_field",
    "nocturne",
    "east_wind",
    "simple_love",
    "rainbow",
    "starry_mood",
    "red_dust",
    "fireworks",
    "moonlight_tale",
    "distant_road",
    "little_luck",
    "ocean_heart",
    "windmill",
    "after_rain",
    "silk_road",
    "morning_bell",
    "lantern_song",
];
const CITIES: &[&str] = &[
    "beijing",
    "shanghai",
    "chengdu",
    "hangzhou",
    "xian",
    "guangzhou",
    "wuhan",
    "nanjing",
    "xiamen",
    "qingdao",
    "kunming",
    "harbin",
];
const DISHES: &[&str] = &[
    "hotpot",
    "roast_duck",
    "dumplings",
    "mapo_tofu",
    "noodles",
    "xiaolongbao",
    "dim_sum",
    "spring_rolls",
    "fish_soup",
    "rice_cake",
    "tea_eggs",
    "baozi",
];
const POIS: &[&str] = &[
    "west_lake",
    "forbidden_city",
    "the_bund",
    "panda_base",
    "terracotta_army",
    "yellow_crane",
    "gulangyu",
    "stone_forest",
    "ice_park",
    "zhongshan_park",
    "city_wall",
    "old_town",
];
const HEADLINES: &[&str] = &[
    "new_album_release",
    "charity_concert",
    "film_award_win",
    "world_tour",
    "wedding_news",
    "fan_meeting",
    "studio_launch",
    "drama_premiere",
    "record_break",
    "comeback_show",
];
const SIGNS: &[&str] = &[
    "aries", "leo", "virgo", "libra", "scorpio", "pisces", "gemini", "taurus",
];
const AWARDS: &[&str] = &["golden_horse", "hundred_flowers", "golden_melody", "golden_rooster"];
const CONDITIONS: &[&str] = &["sunny", "rainy", "cloudy", "windy", "snowy", "foggy"];
const TIMES: &[&str] = &["nine_am", "noon", "three_pm", "six_pm", "nine_pm", "midnight"];
const DATES: &[&str] = &[
    "may_first",
    "june_fifth",
    "july_tenth",
    "august_eighth",
    "october_first",
];
const NICKNAMES: &[&str] = &["little_tiger", "the_king", "sweet_heart", "big_brother"];

const CLOSERS: &[&str] = &["thanks", "great", "perfect", "wonderful"];

struct Templates {
    open: &'static [&'static str],
    close: &'static [&'static str],
    bot: &'static [&'static str],
}

fn templates(r: Requirement) -> Templates {
    use Requirement::*;
    match r {
        DailyGreetings => Templates {
            open: &[
                "hello , how are you today ?",
                "hi there , nice to talk to you",
                "good morning , how is it going ?",
            ],
            close: &[
                "hello , how are you today ?",
                "hi there , nice to talk to you",
                "good morning , how is it going ?",
            ],
            bot: &["hello ! nice to meet you .", "hi ! i am happy to chat with you ."],
        },
        Goodbye => Templates {
            open: &[
                "i have to go now , bye",
                "goodbye , see you next time",
                "bye bye , talk later",
            ],
            close: &[
                "i have to go now , bye",
                "goodbye , see you next time",
                "bye bye , talk later",
            ],
            bot: &["bye , have a nice day !", "goodbye , see you soon !"],
        },
        ChitchatAboutCelebrities => Templates {
            open: &[
                "do you know the star {s} ?",
                "let us chat about the celebrity {s}",
                "i am a fan of the star {s}",
            ],
            close: &["i really like the celebrity {s}", "the star {s} is so cool"],
            bot: &[
                "yes , {s} is amazing , the {p} is {o} .",
                "{s} is a famous star , {p} : {o} .",
            ],
        },
        QuestionAnswering => Templates {
            open: &[
                "i have a question about {s} and {p}",
                "can you answer a question on {p} of {s} ?",
            ],
            close: &["that answers my question about {s} and {p}"],
            bot: &["the answer is {o} .", "{s} {p} {o} , that is the answer ."],
        },
        RecommendMovie => Templates {
            open: &[
                "can you recommend a movie with {s} ?",
                "any good film starring {s} to recommend ?",
            ],
            close: &[
                "i will watch the recommended movie with {s}",
                "the movie recommendation with {s} sounds good",
            ],
            bot: &[
                "i recommend the movie {o} , {s} is in it .",
                "{o} is a great film starring {s} .",
            ],
        },
        AskMovieName => Templates {
            open: &[
                "what is the name of the movie with {s} ?",
                "which film name did {s} act in ?",
            ],
            close: &["now i know the movie name of {s}"],
            bot: &["the movie is called {o} .", "its name is {o} ."],
        },
        AskStarringRole => Templates {
            open: &[
                "what role does {s} play in movies ?",
                "which leading role did {s} star as ?",
            ],
            close: &["now i know the starring role of {s}"],
            bot: &["{s} played the lead role in {o} .", "{s} starred as the hero of {o} ."],
        },
        RecommendMusic => Templates {
            open: &["recommend me a song by {s}", "any good music from {s} to recommend ?"],
            close: &["i will listen to the recommended song by {s}"],
            bot: &["you may like the song {o} by {s} .", "try {o} , a lovely song by {s} ."],
        },
        PlayMusic => Templates {
            open: &["please play a song by {s}", "play some music of {s} now"],
            close: &["the music by {s} is playing , nice"],
            bot: &["now playing {o} by {s} .", "ok , playing {o} for you ."],
        },
        MusicOrder => Templates {
            open: &["i want to order the song of {s}", "order music by {s} for me"],
            close: &["the music order of {s} is done"],
            bot: &["ordered {o} for you .", "your order {o} by {s} is ready ."],
        },
        AskMusicName => Templates {
            open: &[
                "what is the name of the song {s} sings ?",
                "which song name does {s} sing ?",
            ],
            close: &["now i know the song name of {s}"],
            bot: &["the song is called {o} .", "it is named {o} ."],
        },
        RecommendFood => Templates {
            open: &["recommend some food in {s}", "what food should i eat in {s} ?"],
            close: &["i will try the food in {s}"],
            bot: &["try {o} , a specialty of {s} .", "you should eat {o} in {s} ."],
        },
        RecommendPoi => Templates {
            open: &["recommend a place to visit in {s}", "any attraction to visit in {s} ?"],
            close: &["i will visit the place in {s}"],
            bot: &["you can visit {o} in {s} .", "{o} is a nice place in {s} ."],
        },
        RecommendNews => Templates {
            open: &["recommend some news about {s}", "any news recommendation about {s} ?"],
            close: &["i will read the recommended news about {s}"],
            bot: &["here is news about {s} : {o} .", "{s} has news : {o} ."],
        },
        NewsOrder => Templates {
            open: &["i want to order news about {s}", "subscribe me to the news of {s}"],
            close: &["the news order for {s} is done"],
            bot: &["ordered the news {o} about {s} .", "you will get {o} news of {s} ."],
        },
        AskNewsType => Templates {
            open: &[
                "what type of news is about {s} ?",
                "what kind of news type about {s} is there ?",
            ],
            close: &["now i know the news type of {s}"],
            bot: &["the news about {s} is {o} .", "it is {o} type news ."],
        },
        AskTheWeather => Templates {
            open: &[
                "how is the weather in {s} ?",
                "will it rain in {s} today , what weather ?",
            ],
            close: &["i know the weather in {s} now"],
            bot: &["it is {o} in {s} today .", "the weather in {s} is {o} ."],
        },
        AskTime => Templates {
            open: &["what time is it in {s} ?", "tell me the time in {s}"],
            close: &["i know the time in {s} now"],
            bot: &["the time in {s} is {o} .", "it is {o} in {s} now ."],
        },
        AskTheDate => Templates {
            open: &["what is the date today in {s} ?", "which date is it in {s} ?"],
            close: &["i know the date in {s} now"],
            bot: &["today in {s} is {o} .", "the date is {o} ."],
        },
        WeatherInformationPush => Templates {
            open: &[
                "push me weather information for {s}",
                "send weather push updates for {s}",
            ],
            close: &["the weather information push for {s} is set"],
            bot: &["i will push weather for {s} : {o} .", "weather push on , {s} is {o} ."],
        },
    }
}

/// Successors in the generator's transition structure.
fn successors(r: Requirement) -> &'static [Requirement] {
    use Requirement::*;
    match r {
        DailyGreetings => &[
            ChitchatAboutCelebrities,
            QuestionAnswering,
            RecommendNews,
            AskTheWeather,
            AskTime,
            AskTheDate,
            WeatherInformationPush,
            RecommendFood,
            RecommendPoi,
        ],
        ChitchatAboutCelebrities => &[
            RecommendMovie,
            RecommendMusic,
            RecommendNews,
            QuestionAnswering,
            NewsOrder,
        ],
        QuestionAnswering => &[
            RecommendMovie,
            RecommendMusic,
            ChitchatAboutCelebrities,
            AskStarringRole,
            AskMovieName,
            AskMusicName,
        ],
        RecommendMovie => &[AskStarringRole, AskMovieName, RecommendFood, Goodbye],
        AskMovieName => &[RecommendMovie, AskStarringRole, Goodbye],
        AskStarringRole => &[RecommendMovie, ChitchatAboutCelebrities, Goodbye],
        RecommendMusic => &[PlayMusic, MusicOrder, AskMusicName, Goodbye],
        PlayMusic => &[AskMusicName, MusicOrder, Goodbye],
        MusicOrder => &[PlayMusic, Goodbye],
        AskMusicName => &[PlayMusic, RecommendMusic, Goodbye],
        RecommendFood => &[RecommendPoi, Goodbye],
        RecommendPoi => &[RecommendFood, AskTheWeather, Goodbye],
        RecommendNews => &[NewsOrder, AskNewsType, Goodbye],
        NewsOrder => &[AskNewsType, RecommendNews, Goodbye],
        AskNewsType => &[NewsOrder, Goodbye],
        AskTheWeather => &[WeatherInformationPush, AskTime, RecommendFood, Goodbye],
        AskTime => &[AskTheDate, AskTheWeather, Goodbye],
        AskTheDate => &[AskTime, WeatherInformationPush, Goodbye],
        WeatherInformationPush => &[RecommendPoi, Goodbye],
        Goodbye => &[],
    }
}

/// Predicate a requirement's gold triple should carry, when it matters.
fn preferred_predicate(r: Requirement) -> Option<&'static str> {
    use Requirement::*;
    match r {
        AskTheWeather | WeatherInformationPush => Some("weather"),
        AskTime => Some("time"),
        AskTheDate => Some("date"),
        _ => None,
    }
}

fn pick<'a, R: Rng>(rng: &mut R, xs: &'a [&'a str]) -> &'a str {
    xs.choose(rng).expect("non-empty pool")
}

fn sample<'a, R: Rng>(rng: &mut R, xs: &'a [&'a str], n: usize) -> Vec<&'a str> {
    xs.choose_multiple(rng, n.min(xs.len())).copied().collect()
}

fn make_user<R: Rng>(rng: &mut R, idx: usize) -> (UserProfile, PersonalKb) {
    let user_id = format!("user_{idx:04}");
    let mut profile = UserProfile::new(user_id.clone());
    let n_fav = rng.gen_range(1..=2);
    let favourites: Vec<Domain> = Domain::PROFILE.choose_multiple(rng, n_fav).copied().collect();
    for d in Domain::PROFILE {
        let n = if favourites.contains(&d) {
            rng.gen_range(3..=5)
        } else {
            rng.gen_range(0..=2)
        };
        if n == 0 {
            continue;
        }
        let pool = match d {
            Domain::Star | Domain::News => STARS,
            Domain::Movie => MOVIES,
            Domain::Music => SONGS,
            Domain::Food => DISHES,
            Domain::Poi => POIS,
            Domain::Weather => CITIES,
            Domain::Wildcard => unreachable!(),
        };
        profile
            .entities
            .insert(d, sample(rng, pool, n).into_iter().map(String::from).collect());
    }

    let extra = |d: Domain| usize::from(favourites.contains(&d));
    let mut triples = Vec::new();
    let stars = |rng: &mut R, n: usize| sample(rng, STARS, n);
    for s in {
        let n = rng.gen_range(2..=3);
        stars(rng, n)
    } {
        let (p, o) = match rng.gen_range(0..3) {
            0 => ("birthplace", pick(rng, CITIES)),
            1 => ("constellation", pick(rng, SIGNS)),
            _ => ("achievement", pick(rng, AWARDS)),
        };
        triples.push(ResourceTriple::new(s, p, o, Domain::Star));
    }
    for s in {
        let n = rng.gen_range(2..=3) + extra(Domain::Movie);
        stars(rng, n)
    } {
        triples.push(ResourceTriple::new(s, "starring", pick(rng, MOVIES), Domain::Movie));
    }
    for s in {
        let n = rng.gen_range(2..=3) + extra(Domain::Music);
        stars(rng, n)
    } {
        triples.push(ResourceTriple::new(s, "sings", pick(rng, SONGS), Domain::Music));
    }
    for s in {
        let n = rng.gen_range(2..=3) + extra(Domain::News);
        stars(rng, n)
    } {
        triples.push(ResourceTriple::new(s, "news", pick(rng, HEADLINES), Domain::News));
    }
    for c in {
        let n = rng.gen_range(1..=2) + extra(Domain::Food);
        sample(rng, CITIES, n)
    } {
        triples.push(ResourceTriple::new(c, "specialty", pick(rng, DISHES), Domain::Food));
    }
    for c in {
        let n = rng.gen_range(1..=2) + extra(Domain::Poi);
        sample(rng, CITIES, n)
    } {
        triples.push(ResourceTriple::new(c, "landmark", pick(rng, POIS), Domain::Poi));
    }
    for c in sample(rng, CITIES, 1 + extra(Domain::Weather)) {
        triples.push(ResourceTriple::new(
            c,
            "weather",
            pick(rng, CONDITIONS),
            Domain::Weather,
        ));
        triples.push(ResourceTriple::new(c, "time", pick(rng, TIMES), Domain::Weather));
        triples.push(ResourceTriple::new(c, "date", pick(rng, DATES), Domain::Weather));
    }
    let s = pick(rng, STARS);
    triples.push(ResourceTriple::new(
        s,
        "related_to",
        pick(rng, NICKNAMES),
        Domain::Wildcard,
    ));
    triples.shuffle(rng);

    (profile, PersonalKb { user_id, triples })
}

fn goal_walk<R: Rng>(rng: &mut R, profile: &UserProfile) -> Vec<Requirement> {
    let total = profile.total().max(1) as f64;
    let mut path = vec![Requirement::DailyGreetings];
    loop {
        let cur = *path.last().expect("non-empty");
        if cur == Requirement::Goodbye {
            break;
        }
        if path.len() >= 5 {
            path.push(Requirement::Goodbye);
            break;
        }
        let options: Vec<Requirement> = successors(cur).iter().copied().filter(|r| !path.contains(r)).collect();
        if options.is_empty() {
            path.push(Requirement::Goodbye);
            break;
        }
        let weights: Vec<f64> = options
            .iter()
            .map(|&r| {
                if r == Requirement::Goodbye {
                    if path.len() >= 3 {
                        1.5
                    } else {
                        0.0
                    }
                } else {
                    let share: usize = r.domains().iter().map(|&d| profile.count(d)).sum();
                    0.4 + 4.0 * share as f64 / total
                }
            })
            .collect();
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            path.push(Requirement::Goodbye);
            break;
        }
        let mut x = rng.gen::<f64>() * sum;
        let mut choice = options[options.len() - 1];
        for (&r, &w) in options.iter().zip(&weights) {
            if x < w {
                choice = r;
                break;
            }
            x -= w;
        }
        path.push(choice);
    }
    path
}

fn fill(template: &str, triple: Option<&ResourceTriple>) -> String {
    match triple {
        None => template.to_string(),
        Some(t) => template
            .replace("{s}", &t.subject)
            .replace("{p}", &t.predicate)
            .replace("{o}", &t.object),
    }
}

fn gold_triple<'a, R: Rng>(rng: &mut R, kb: &'a PersonalKb, req: Requirement) -> Option<&'a ResourceTriple> {
    let pool: Vec<&ResourceTriple> = kb.triples.iter().filter(|t| req.serves(t.domain)).collect();
    let preferred: Vec<&ResourceTriple> = match preferred_predicate(req) {
        Some(p) => pool.iter().copied().filter(|t| t.predicate == p).collect(),
        None => Vec::new(),
    };
    if preferred.is_empty() {
        pool.choose(rng).copied()
    } else {
        preferred.choose(rng).copied()
    }
}

fn dialogue<R: Rng>(rng: &mut R, profile: &UserProfile, kb: &PersonalKb) -> DialogueRecord {
    let goals = goal_walk(rng, profile);
    let mut turns = Vec::new();
    for &req in &goals {
        let t = templates(req);
        let exchanges = if req.is_wildcard() { 1 } else { rng.gen_range(1..=2) };
        for k in 0..exchanges {
            let last = k + 1 == exchanges;
            let triple = if req.is_wildcard() {
                None
            } else {
                gold_triple(rng, kb, req)
            };
            let user = if last && !req.is_wildcard() {
                format!("{} , {}", pick(rng, CLOSERS), fill(pick(rng, t.close), triple))
            } else if last {
                fill(pick(rng, t.close), triple)
            } else {
                fill(pick(rng, t.open), triple)
            };
            turns.push(Turn {
                speaker: Speaker::User,
                utterance: user,
                requirement: req,
                completed: last,
                knowledge: None,
            });
            turns.push(Turn {
                speaker: Speaker::Bot,
                utterance: fill(pick(rng, t.bot), triple),
                requirement: req,
                completed: last,
                knowledge: triple.map(|t| [t.subject.clone(), t.predicate.clone(), t.object.clone()]),
            });
        }
    }
    DialogueRecord {
        user_id: profile.user_id.clone(),
        goal_sequence: DialogueRecord::project_goals(&turns),
        turns,
    }
}

/// One templated exchange for response generation: the user's utterance,
/// the candidate resources for its requirement, the gold one among them, and
/// the bot reply mentioning it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateItem {
    pub requirement: Requirement,
    pub utterance: String,
    pub resources: Vec<ResourceTriple>,
    pub gold: usize,
    pub response: String,
}

/// `n` exchanges over fresh random users, for non-wildcard requirements only.
pub fn template_items(n: usize, seed: u64) -> Vec<TemplateItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reqs: Vec<Requirement> = Requirement::ALL.iter().copied().filter(|r| !r.is_wildcard()).collect();
    let mut out = Vec::with_capacity(n);
    let mut idx = 0;
    while out.len() < n {
        let (_, kb) = make_user(&mut rng, idx);
        idx += 1;
        let req = *reqs.choose(&mut rng).expect("non-empty");
        let Some(gold) = gold_triple(&mut rng, &kb, req).cloned() else {
            continue;
        };
        let resources = super::filter_resources(&kb, req);
        let t = templates(req);
        let utterance = if rng.gen_bool(0.5) {
            fill(pick(&mut rng, t.open), Some(&gold))
        } else {
            format!(
                "{} , {}",
                pick(&mut rng, CLOSERS),
                fill(pick(&mut rng, t.close), Some(&gold))
            )
        };
        out.push(TemplateItem {
            requirement: req,
            utterance,
            gold: resources.iter().position(|r| r == &gold).expect("gold is a candidate"),
            response: fill(pick(&mut rng, t.bot), Some(&gold)),
            resources,
        });
    }
    out
}

/// Deterministic for a fixed spec.
pub fn generate_synthetic_corpus(spec: &SynthSpec) -> Corpus {
    assert!(spec.n_users > 0 && spec.n_dialogues > 0, "sizes must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let users: Vec<(UserProfile, PersonalKb)> = (0..spec.n_users).map(|i| make_user(&mut rng, i)).collect();
    let entries = (0..spec.n_dialogues)
        .map(|i| {
            let (profile, kb) = &users[i % spec.n_users];
            CorpusEntry {
                dialogue: dialogue(&mut rng, profile, kb),
                profile: profile.clone(),
                kb: kb.clone(),
            }
        })
        .collect();
    Corpus { entries }
}

/// Count of each requirement across all turns; handy for coverage checks.
pub fn requirement_histogram(corpus: &Corpus) -> BTreeMap<Requirement, usize> {
    let mut out = BTreeMap::new();
    for d in corpus.dialogues() {
        for t in &d.turns {
            *out.entry(t.requirement).or_insert(0) += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{classify_resource, LexiconSimilarity, DEFAULT_THRESHOLD};

    fn small() -> Corpus {
        generate_synthetic_corpus(&SynthSpec {
            n_users: 10,
            n_dialogues: 40,
            seed: 3,
        })
    }

    #[test]
    fn deterministic_bytes() {
        assert_eq!(small().to_jsonl(), small().to_jsonl());
        let other = generate_synthetic_corpus(&SynthSpec {
            n_users: 10,
            n_dialogues: 40,
            seed: 4,
        });
        assert_ne!(other.to_jsonl(), small().to_jsonl());
    }

    #[test]
    fn gold_triple_object_in_bot_response() {
        for d in small().dialogues() {
            for t in &d.turns {
                if let Some([s, _, o]) = &t.knowledge {
                    assert_eq!(t.speaker, Speaker::Bot);
                    assert!(t.utterance.contains(o.as_str()), "{} lacks {o}", t.utterance);
                    let _ = s;
                }
            }
        }
    }

    #[test]
    fn gold_triple_domain_serves_requirement() {
        let c = small();
        for e in &c.entries {
            for t in &e.dialogue.turns {
                match &t.knowledge {
                    Some(k) => {
                        let triple =
                            e.kb.triples
                                .iter()
                                .find(|x| x.spo() == [k[0].as_str(), k[1].as_str(), k[2].as_str()])
                                .expect("gold triple comes from the user's KB");
                        assert!(t.requirement.serves(triple.domain));
                    }
                    None => assert!(t.speaker == Speaker::User || t.requirement.is_wildcard()),
                }
            }
        }
    }

    #[test]
    fn generated_kb_labels_agree_with_lexicon() {
        let lex = LexiconSimilarity::default();
        for kb in small().kbs() {
            for t in &kb.triples {
                assert_eq!(classify_resource(&t.predicate, &lex, DEFAULT_THRESHOLD), t.domain);
            }
        }
    }

    #[test]
    fn goal_sequences_are_simple_and_bounded() {
        for d in small().dialogues() {
            let g = &d.goal_sequence;
            assert!((3..=6).contains(&g.len()), "{g:?}");
            assert_eq!(g[0], Requirement::DailyGreetings);
            assert_eq!(*g.last().unwrap(), Requirement::Goodbye);
            let mut seen = std::collections::HashSet::new();
            assert!(g.iter().all(|r| seen.insert(*r)));
            assert!(d.turns.last().unwrap().completed);
        }
    }

    #[test]
    fn covers_all_requirements_at_200_dialogues() {
        let c = generate_synthetic_corpus(&SynthSpec {
            n_users: 40,
            n_dialogues: 200,
            seed: 11,
        });
        let hist = requirement_histogram(&c);
        for r in Requirement::ALL {
            assert!(hist.get(&r).copied().unwrap_or(0) > 0, "missing {r}");
        }
    }

    #[test]
    fn survives_jsonl_round_trip() {
        let c = small();
        let back = Corpus::parse(&c.to_jsonl(), &LexiconSimilarity::default(), 0.7).unwrap();
        assert_eq!(back, c);
    }
}
