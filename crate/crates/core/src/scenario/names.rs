// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded synthetic entity names and collision checks against known labels.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::sync::Mutex;
use std::time::Duration;

use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::http::{CachedHttp, Fetched};

/// Base URL override for the label-search client.
pub const WIKIDATA_URL_ENV: &str = "PRISM_WIKIDATA_URL";
pub const DEFAULT_WIKIDATA_URL: &str = "https://www.wikidata.org";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NameStyle {
    DndHuman,
    Russian,
    French,
    German,
    Korean,
    Japanese,
    Place,
    Organisation,
}

impl NameStyle {
    pub const PEOPLE: [NameStyle; 6] = [
        NameStyle::DndHuman,
        NameStyle::Russian,
        NameStyle::French,
        NameStyle::German,
        NameStyle::Korean,
        NameStyle::Japanese,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NameStyle::DndHuman => "dnd_human",
            NameStyle::Russian => "russian",
            NameStyle::French => "french",
            NameStyle::German => "german",
            NameStyle::Korean => "korean",
            NameStyle::Japanese => "japanese",
            NameStyle::Place => "place",
            NameStyle::Organisation => "organisation",
        }
    }

    /// Styles suited to a relation's subject type.
    pub fn for_relation(relation: &str) -> Result<&'static [NameStyle]> {
        Ok(match relation {
            "P19" | "P20" | "P27" | "P101" => &NameStyle::PEOPLE,
            "P1376" => &[NameStyle::Place],
            "P495" | "P740" => &[NameStyle::Organisation],
            other => return Err(Error::UnknownRelation(other.to_string())),
        })
    }
}

impl fmt::Display for NameStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

struct Inventory {
    given: &'static [&'static str],
    family: &'static [&'static str],
    given_syllables: (usize, usize),
    family_syllables: (usize, usize),
}

fn inventory(style: NameStyle) -> Inventory {
    match style {
        NameStyle::DndHuman => Inventory {
            given: &["ba", "lo", "se", "rok", "ol", "re", "tha", "dri", "ven", "kal", "mor", "el"],
            family: &["wind", "hair", "nu", "vrome", "hell", "spirit", "storm", "ash", "vale", "thorn", "brook", "fell"],
            given_syllables: (2, 2),
            family_syllables: (2, 2),
        },
        NameStyle::Russian => Inventory {
            given: &["i", "van", "ser", "gei", "ol", "ga", "mi", "kha", "il", "da", "ri", "na"],
            family: &["vol", "kov", "pe", "trov", "so", "ko", "lov", "ze", "lin", "ski", "mi", "rov"],
            given_syllables: (2, 3),
            family_syllables: (2, 3),
        },
        NameStyle::French => Inventory {
            given: &["jean", "lu", "cien", "ma", "rie", "cla", "ude", "é", "mile", "gas", "ton", "re"],
            family: &["du", "bois", "mar", "tin", "le", "fèvre", "ro", "chard", "gi", "rard", "mo", "reau"],
            given_syllables: (2, 2),
            family_syllables: (2, 2),
        },
        NameStyle::German => Inventory {
            given: &["go", "tt", "fried", "lie", "sel", "wal", "ter", "hel", "ga", "ul", "rich", "er"],
            family: &["schnei", "der", "berg", "mann", "wei", "ss", "hof", "stein", "kra", "uss", "brun", "ner"],
            given_syllables: (2, 2),
            family_syllables: (2, 2),
        },
        NameStyle::Korean => Inventory {
            given: &["min", "seo", "ji", "hoon", "yeon", "woo", "su", "jin", "hye", "song", "eun", "ho"],
            family: &["kim", "park", "choi", "jung", "kang", "yoon", "jang", "lim", "han", "oh", "seo", "shin"],
            given_syllables: (2, 2),
            family_syllables: (1, 1),
        },
        NameStyle::Japanese => Inventory {
            given: &["hi", "de", "yo", "shi", "ta", "ka", "ha", "ru", "ki", "mi", "sa", "to"],
            family: &["hira", "shima", "ya", "ma", "mo", "to", "naka", "mura", "ta", "ni", "kawa", "da"],
            given_syllables: (2, 3),
            family_syllables: (2, 3),
        },
        NameStyle::Place => Inventory {
            given: &["li", "ma", "na", "ga", "sal", "cos", "vel", "dra", "tor", "ben", "ka", "ri"],
            family: &[],
            given_syllables: (3, 4),
            family_syllables: (0, 0),
        },
        NameStyle::Organisation => Inventory {
            given: &["so", "nar", "vex", "tri", "on", "mo", "da", "lux", "ker", "bel", "zu", "ra"],
            family: &["Kollektiv", "Records", "Collective", "Works", "Society", "Ensemble"],
            given_syllables: (2, 3),
            family_syllables: (1, 1),
        },
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn word(rng: &mut ChaCha8Rng, syllables: &[&str], range: (usize, usize)) -> String {
    let n = rng.random_range(range.0..=range.1);
    let w: String = (0..n).map(|_| *syllables.choose(rng).expect("nonempty inventory")).collect();
    capitalize(&w)
}

/// One name of the given style.
pub fn generate_name(style: NameStyle, rng: &mut ChaCha8Rng) -> String {
    let inv = inventory(style);
    let first = word(rng, inv.given, inv.given_syllables);
    match style {
        NameStyle::Place => first,
        NameStyle::Organisation => {
            let suffix = inv.family.choose(rng).expect("nonempty inventory");
            format!("{first} {suffix}")
        }
        NameStyle::Korean | NameStyle::Japanese => {
            // Family name first.
            let family = word(rng, inv.family, inv.family_syllables);
            format!("{family} {first}")
        }
        _ => {
            let family = word(rng, inv.family, inv.family_syllables);
            format!("{first} {family}")
        }
    }
}

pub trait EntityChecker: Send + Sync {
    /// Whether some known entity carries exactly this label.
    fn exists(&self, label: &str) -> Result<bool>;
}

/// In-memory label set.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelSet(pub HashSet<String>);

impl LabelSet {
    pub fn parse(text: &str) -> Self {
        LabelSet(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect(),
        )
    }
}

impl EntityChecker for LabelSet {
    fn exists(&self, label: &str) -> Result<bool> {
        Ok(self.0.contains(label))
    }
}

/// Label search against a Wikidata-style `wbsearchentities` endpoint.
pub struct WikidataChecker {
    http: CachedHttp,
    base_url: String,
    memo: Mutex<BTreeMap<String, bool>>,
}

#[derive(Deserialize)]
struct SearchResponse {
    #[serde(default)]
    search: Vec<SearchHit>,
}

#[derive(Deserialize)]
struct SearchHit {
    #[serde(default)]
    label: String,
}

impl WikidataChecker {
    pub fn new(base_url: &str, http: CachedHttp) -> Self {
        WikidataChecker {
            http,
            base_url: base_url.trim_end_matches('/').to_string(),
            memo: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn from_env(timeout: Duration) -> Self {
        let base = std::env::var(WIKIDATA_URL_ENV).unwrap_or_else(|_| DEFAULT_WIKIDATA_URL.into());
        Self::new(&base, CachedHttp::from_env(timeout))
    }
}

impl EntityChecker for WikidataChecker {
    fn exists(&self, label: &str) -> Result<bool> {
        if let Some(&v) = self.memo.lock().expect("memo lock").get(label) {
            return Ok(v);
        }
        let url = format!(
            "{}/w/api.php?action=wbsearchentities&format=json&language=en&type=item&limit=50&search={}",
            self.base_url,
            utf8_percent_encode(label, NON_ALPHANUMERIC)
        );
        let found = match self.http.get(&url)? {
            Fetched::NotFound => false,
            Fetched::Body(b) => {
                let r: SearchResponse = serde_json::from_str(&b)?;
                r.search.iter().any(|h| h.label == label)
            }
        };
        self.memo.lock().expect("memo lock").insert(label.to_string(), found);
        Ok(found)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSubject {
    pub name: String,
    pub style: NameStyle,
    pub entity_collision_checked: bool,
}

/// Attempts allowed per requested name before giving up.
pub const RETRIES_PER_NAME: usize = 50;

/// `n` unique names cycling through `styles`, none matching a known label.
pub fn generate_synthetic_subjects(
    styles: &[NameStyle],
    n: usize,
    checker: &dyn EntityChecker,
    seed: u64,
) -> Result<Vec<SyntheticSubject>> {
    if styles.is_empty() && n > 0 {
        return Err(Error::NameGeneration("no name styles given".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    let mut rejected = 0;
    while out.len() < n {
        if attempts >= n * RETRIES_PER_NAME {
            return Err(Error::NameGeneration(format!(
                "{} of {n} names after {attempts} attempts ({rejected} collisions)",
                out.len()
            )));
        }
        attempts += 1;
        let style = styles[out.len() % styles.len()];
        let name = generate_name(style, &mut rng);
        if seen.contains(&name) {
            continue;
        }
        if checker.exists(&name)? {
            rejected += 1;
            log::debug!("synthetic name `{name}` collides with a known entity");
            seen.insert(name);
            continue;
        }
        seen.insert(name.clone());
        out.push(SyntheticSubject {
            name,
            style,
            entity_collision_checked: true,
        });
    }
    Ok(out)
}

/// How many names of each style a batch holds.
pub fn style_distribution(subjects: &[SyntheticSubject]) -> BTreeMap<NameStyle, usize> {
    let mut out = BTreeMap::new();
    for s in subjects {
        *out.entry(s.style).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::testserver;

    #[test]
    fn seeded_and_unique() {
        let labels = LabelSet::default();
        let a = generate_synthetic_subjects(&NameStyle::PEOPLE, 60, &labels, 9).unwrap();
        let b = generate_synthetic_subjects(&NameStyle::PEOPLE, 60, &labels, 9).unwrap();
        assert_eq!(a, b);
        let names: BTreeSet<&str> = a.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names.len(), 60);
        assert_eq!(style_distribution(&a).values().copied().collect::<Vec<_>>(), vec![10; 6]);
        assert!(a.iter().all(|s| s.name.split(' ').count() == 2));
    }

    #[test]
    fn collisions_are_regenerated() {
        let free = generate_synthetic_subjects(&[NameStyle::Place], 3, &LabelSet::default(), 2).unwrap();
        let taken = LabelSet([free[0].name.clone()].into_iter().collect());
        let again = generate_synthetic_subjects(&[NameStyle::Place], 3, &taken, 2).unwrap();
        assert!(again.iter().all(|s| s.name != free[0].name));
        assert_eq!(again.len(), 3);
    }

    #[test]
    fn budget_exhaustion_is_an_error() {
        struct Everything;
        impl EntityChecker for Everything {
            fn exists(&self, _: &str) -> Result<bool> {
                Ok(true)
            }
        }
        assert!(matches!(
            generate_synthetic_subjects(&[NameStyle::German], 2, &Everything, 1),
            Err(Error::NameGeneration(_))
        ));
    }

    #[test]
    fn wikidata_exact_label_match() {
        let server = testserver::serve(vec![
            (
                "/w/api.php?action=wbsearchentities&format=json&language=en&type=item&limit=50&search=Thomas%20Ong".into(),
                200,
                r#"{"search":[{"label":"Thomas Ong"},{"label":"Thomas Onge"}]}"#.into(),
            ),
            (
                "/w/api.php?action=wbsearchentities&format=json&language=en&type=item&limit=50&search=Serok".into(),
                200,
                r#"{"search":[{"label":"Serok Nuvrome Jr"}]}"#.into(),
            ),
        ]);
        let c = WikidataChecker::new(&server.base, CachedHttp::new(Duration::from_secs(5), None));
        assert!(c.exists("Thomas Ong").unwrap());
        assert!(!c.exists("Serok Nuvrome").unwrap());
    }
}
