// SPDX-License-Identifier: MIT OR Apache-2.0

//! Fact tuples: `relation<TAB>subject<TAB>object` files and LAMA import.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{templates, AnswerSets};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FactTuple {
    pub relation: String,
    pub subject: String,
    pub object: String,
}

pub fn parse_fact_tsv(text: &str) -> Result<Vec<FactTuple>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        let [relation, subject, object] = parts.as_slice() else {
            return Err(Error::InvalidInput(format!(
                "fact line {}: expected relation<TAB>subject<TAB>object",
                n + 1
            )));
        };
        out.push(FactTuple {
            relation: relation.trim().to_string(),
            subject: subject.trim().to_string(),
            object: object.trim().to_string(),
        });
    }
    Ok(out)
}

pub fn load_fact_tsv(path: &Path) -> Result<Vec<FactTuple>> {
    parse_fact_tsv(&crate::io::read_to_string(path)?)
}

pub fn to_fact_tsv(tuples: &[FactTuple]) -> String {
    tuples
        .iter()
        .map(|t| format!("{}\t{}\t{}\n", t.relation, t.subject, t.object))
        .collect()
}

#[derive(Deserialize)]
struct LamaRecord {
    sub_label: String,
    obj_label: String,
    #[serde(default)]
    predicate_id: Option<String>,
}

/// Convert LAMA-style JSON lines (`sub_label`, `obj_label`, `predicate_id`).
/// `relation` is used when a line has no predicate. Lines for unsupported
/// relations are dropped.
pub fn import_lama_jsonl(text: &str, relation: Option<&str>) -> Result<Vec<FactTuple>> {
    let mut out = Vec::new();
    let mut dropped = 0usize;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let r: LamaRecord = serde_json::from_str(line)?;
        let rel = r
            .predicate_id
            .or_else(|| relation.map(str::to_string))
            .ok_or_else(|| Error::InvalidInput("LAMA line without predicate_id".into()))?;
        if !templates::is_supported(&rel) {
            dropped += 1;
            continue;
        }
        out.push(FactTuple {
            relation: rel,
            subject: r.sub_label.trim().to_string(),
            object: r.obj_label.trim().to_string(),
        });
    }
    if dropped > 0 {
        log::info!("dropped {dropped} LAMA lines for unsupported relations");
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// Object labels per relation.
pub fn answer_sets(tuples: &[FactTuple]) -> AnswerSets {
    let mut out = AnswerSets::new();
    for t in tuples {
        out.entry(t.relation.clone()).or_default().insert(t.object.clone());
    }
    out
}

/// Gold objects per (relation, subject), in file order.
pub fn by_subject(tuples: &[FactTuple]) -> BTreeMap<(String, String), Vec<String>> {
    let mut out: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
    for t in tuples {
        let golds = out.entry((t.relation.clone(), t.subject.clone())).or_default();
        if !golds.contains(&t.object) {
            golds.push(t.object.clone());
        }
    }
    out
}
