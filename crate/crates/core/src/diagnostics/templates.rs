// SPDX-License-Identifier: MIT OR Apache-2.0

//! Relation set and the embedded paraphrase-template table.

use std::ops::Range;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relations a dataset can be built for.
pub const RELATIONS: [&str; 7] = ["P19", "P20", "P27", "P101", "P495", "P740", "P1376"];

/// Relations where the name-bias probe applies. The last two occur only in
/// external audit data.
pub const NAME_BIAS_RELATIONS: [&str; 5] = ["P19", "P20", "P27", "P103", "P1412"];

const TEMPLATE_TABLE: &str = include_str!("../../data/pararel_templates.tsv");

/// One row of the table. `id` is the row's index within its relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub relation: String,
    pub id: usize,
    pub text: String,
}

impl Template {
    pub fn is_subject_first(&self) -> bool {
        self.text.starts_with("[X]")
    }
}

fn table() -> &'static [Template] {
    static TABLE: OnceLock<Vec<Template>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut out: Vec<Template> = Vec::new();
        for line in TEMPLATE_TABLE.lines() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let (relation, text) = line.split_once('\t').expect("embedded table is tab separated");
            let id = out.iter().filter(|t| t.relation == relation).count();
            out.push(Template {
                relation: relation.to_string(),
                id,
                text: text.to_string(),
            });
        }
        out
    })
}

pub fn is_supported(relation: &str) -> bool {
    RELATIONS.contains(&relation)
}

pub fn check_relation(relation: &str) -> Result<()> {
    if is_supported(relation) {
        Ok(())
    } else {
        Err(Error::UnknownRelation(relation.to_string()))
    }
}

/// Every template of a relation, including ones the subject does not start.
pub fn all_templates(relation: &str) -> Result<Vec<Template>> {
    check_relation(relation)?;
    Ok(table().iter().filter(|t| t.relation == relation).cloned().collect())
}

/// Templates usable for queries: subject first, object last.
pub fn templates(relation: &str) -> Result<Vec<Template>> {
    Ok(all_templates(relation)?
        .into_iter()
        .filter(Template::is_subject_first)
        .collect())
}

pub fn template(relation: &str, template_id: usize) -> Result<Template> {
    all_templates(relation)?
        .into_iter()
        .nth(template_id)
        .ok_or_else(|| Error::InvalidTemplate {
            relation: relation.to_string(),
            template_id,
            reason: "no such template".into(),
        })
}

/// A subject-first prompt built from one template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactQuery {
    pub relation_id: String,
    pub template_id: usize,
    pub subject: String,
    pub prompt: String,
    pub subject_char_span: Range<usize>,
}

impl FactQuery {
    pub fn new(relation: &str, template_id: usize, subject: &str) -> Result<Self> {
        let t = template(relation, template_id)?;
        let invalid = |reason: &str| Error::InvalidTemplate {
            relation: relation.to_string(),
            template_id,
            reason: reason.to_string(),
        };
        if !t.is_subject_first() {
            return Err(invalid("subject does not come first"));
        }
        if subject.trim().is_empty() {
            return Err(invalid("empty subject"));
        }
        let y = t.text.find("[Y]").ok_or_else(|| invalid("no object slot"))?;
        let prompt = t.text[..y].replace("[X]", subject).trim_end().to_string();
        Ok(FactQuery {
            relation_id: relation.to_string(),
            template_id,
            subject: subject.to_string(),
            prompt,
            subject_char_span: 0..subject.len(),
        })
    }

    /// One query per subject-first template of the relation.
    pub fn all_for(relation: &str, subject: &str) -> Result<Vec<Self>> {
        templates(relation)?
            .iter()
            .map(|t| FactQuery::new(relation, t.id, subject))
            .collect()
    }
}
