//! Requirement and domain label sets.
//!
//! Seven profile domains plus the wildcard `*`, and twenty requirement
//! labels each mapped to the domains whose entities and resources serve it.
//! The same mapping ships as `data/labels.v1.json`; [`LabelRegistry`] loads
//! that file and checks it against the compiled-in tables.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const REGISTRY_JSON: &str = include_str!("../data/labels.v1.json");
pub const REGISTRY_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Domain {
    Star,
    Movie,
    Music,
    Food,
    Poi,
    News,
    Weather,
    /// Requirements unrelated to profile entities and KB resources.
    Wildcard,
}

impl Domain {
    pub const ALL: [Domain; 8] = [
        Domain::Star,
        Domain::Movie,
        Domain::Music,
        Domain::Food,
        Domain::Poi,
        Domain::News,
        Domain::Weather,
        Domain::Wildcard,
    ];

    /// The seven concrete profile domains.
    pub const PROFILE: [Domain; 7] = [
        Domain::Star,
        Domain::Movie,
        Domain::Music,
        Domain::Food,
        Domain::Poi,
        Domain::News,
        Domain::Weather,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Domain::Star => "Star",
            Domain::Movie => "Movie",
            Domain::Music => "Music",
            Domain::Food => "Food",
            Domain::Poi => "POI",
            Domain::News => "News",
            Domain::Weather => "Weather",
            Domain::Wildcard => "*",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_wildcard(self) -> bool {
        self == Domain::Wildcard
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Domain::ALL
            .iter()
            .copied()
            .find(|d| d.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownDomain(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Requirement {
    DailyGreetings,
    ChitchatAboutCelebrities,
    QuestionAnswering,
    RecommendMovie,
    AskMovieName,
    AskStarringRole,
    RecommendMusic,
    PlayMusic,
    MusicOrder,
    AskMusicName,
    RecommendFood,
    RecommendPoi,
    RecommendNews,
    NewsOrder,
    AskNewsType,
    AskTheWeather,
    AskTime,
    AskTheDate,
    WeatherInformationPush,
    Goodbye,
}

impl Requirement {
    pub const COUNT: usize = 20;

    pub const ALL: [Requirement; 20] = [
        Requirement::DailyGreetings,
        Requirement::ChitchatAboutCelebrities,
        Requirement::QuestionAnswering,
        Requirement::RecommendMovie,
        Requirement::AskMovieName,
        Requirement::AskStarringRole,
        Requirement::RecommendMusic,
        Requirement::PlayMusic,
        Requirement::MusicOrder,
        Requirement::AskMusicName,
        Requirement::RecommendFood,
        Requirement::RecommendPoi,
        Requirement::RecommendNews,
        Requirement::NewsOrder,
        Requirement::AskNewsType,
        Requirement::AskTheWeather,
        Requirement::AskTime,
        Requirement::AskTheDate,
        Requirement::WeatherInformationPush,
        Requirement::Goodbye,
    ];

    pub fn name(self) -> &'static str {
        use Requirement::*;
        match self {
            DailyGreetings => "daily greetings",
            ChitchatAboutCelebrities => "chitchat about celebrities",
            QuestionAnswering => "question answering",
            RecommendMovie => "recommend movie",
            AskMovieName => "ask movie name",
            AskStarringRole => "ask starring role",
            RecommendMusic => "recommend music",
            PlayMusic => "play music",
            MusicOrder => "music order",
            AskMusicName => "ask music name",
            RecommendFood => "recommend food",
            RecommendPoi => "recommend poi",
            RecommendNews => "recommend news",
            NewsOrder => "news order",
            AskNewsType => "ask news type",
            AskTheWeather => "ask the weather",
            AskTime => "ask time",
            AskTheDate => "ask the date",
            WeatherInformationPush => "weather information push",
            Goodbye => "goodbye",
        }
    }

    pub fn domains(self) -> &'static [Domain] {
        use Requirement::*;
        match self {
            DailyGreetings | Goodbye => &[Domain::Wildcard],
            ChitchatAboutCelebrities => &[Domain::Star],
            QuestionAnswering => &[Domain::Star, Domain::Movie, Domain::Music],
            RecommendMovie | AskMovieName | AskStarringRole => &[Domain::Movie],
            RecommendMusic | PlayMusic | MusicOrder | AskMusicName => &[Domain::Music],
            RecommendFood => &[Domain::Food],
            RecommendPoi => &[Domain::Poi],
            RecommendNews | NewsOrder | AskNewsType => &[Domain::News],
            AskTheWeather | AskTime | AskTheDate | WeatherInformationPush => &[Domain::Weather],
        }
    }

    pub fn is_wildcard(self) -> bool {
        self.domains().iter().all(|d| d.is_wildcard())
    }

    pub fn serves(self, domain: Domain) -> bool {
        !domain.is_wildcard() && self.domains().contains(&domain)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Requirement> {
        Requirement::ALL.get(i).copied()
    }
}

impl fmt::Display for Requirement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Requirement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let wanted = s.trim();
        Requirement::ALL
            .iter()
            .copied()
            .find(|r| r.name().eq_ignore_ascii_case(wanted))
            .ok_or_else(|| Error::UnknownRequirement(s.to_string()))
    }
}

macro_rules! serde_by_name {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(self.name())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

serde_by_name!(Domain);
serde_by_name!(Requirement);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RequirementEntry {
    pub name: String,
    pub domains: Vec<String>,
}

/// The versioned registry file, as shipped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelRegistry {
    pub version: u32,
    pub domains: Vec<String>,
    pub requirements: Vec<RequirementEntry>,
}

impl LabelRegistry {
    pub fn bundled() -> Self {
        serde_json::from_str(REGISTRY_JSON).expect("bundled label registry is valid JSON")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let reg: LabelRegistry = serde_json::from_str(text)?;
        reg.validate()?;
        Ok(reg)
    }

    /// Checks the file against the compiled label tables.
    pub fn validate(&self) -> Result<()> {
        if self.version != REGISTRY_VERSION {
            return Err(Error::Schema(format!(
                "label registry version {} unsupported (expected {REGISTRY_VERSION})",
                self.version
            )));
        }
        let domains: Vec<Domain> = self.domains.iter().map(|d| d.parse()).collect::<Result<_>>()?;
        if domains != Domain::ALL {
            return Err(Error::Schema("domain list differs from the built-in set".into()));
        }
        if self.requirements.len() != Requirement::COUNT {
            return Err(Error::Schema(format!(
                "expected {} requirements, found {}",
                Requirement::COUNT,
                self.requirements.len()
            )));
        }
        for (entry, req) in self.requirements.iter().zip(Requirement::ALL) {
            let parsed: Requirement = entry.name.parse()?;
            let doms: Vec<Domain> = entry.domains.iter().map(|d| d.parse()).collect::<Result<_>>()?;
            if parsed != req || doms != req.domains() {
                return Err(Error::Schema(format!(
                    "registry entry `{}` does not match built-in mapping",
                    entry.name
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_registry_matches_tables() {
        LabelRegistry::bundled().validate().unwrap();
    }

    #[test]
    fn label_counts() {
        assert_eq!(Domain::ALL.len(), 8);
        assert_eq!(Requirement::ALL.len(), 20);
        let wildcard: Vec<_> = Requirement::ALL.iter().filter(|r| r.is_wildcard()).collect();
        assert_eq!(wildcard, vec![&Requirement::DailyGreetings, &Requirement::Goodbye]);
        for (i, r) in Requirement::ALL.iter().enumerate() {
            assert_eq!(r.index(), i);
            assert!(!r.domains().is_empty());
        }
    }

    #[test]
    fn names_round_trip() {
        for r in Requirement::ALL {
            assert_eq!(r.name().parse::<Requirement>().unwrap(), r);
        }
        for d in Domain::ALL {
            assert_eq!(d.name().parse::<Domain>().unwrap(), d);
        }
        assert!("recommend pizza".parse::<Requirement>().is_err());
        assert!("Sports".parse::<Domain>().is_err());
    }

    #[test]
    fn serde_uses_names() {
        let s = serde_json::to_string(&Requirement::PlayMusic).unwrap();
        assert_eq!(s, "\"play music\"");
        let d: Domain = serde_json::from_str("\"POI\"").unwrap();
        assert_eq!(d, Domain::Poi);
    }

    #[test]
    fn tampered_registry_rejected() {
        let text = REGISTRY_JSON.replace("\"Food\"] }", "\"News\"] }");
        assert!(LabelRegistry::from_json(&text).is_err());
    }
}
