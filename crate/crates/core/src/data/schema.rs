use serde::{Deserialize, Serialize};

use super::ChoiceDataset;
use crate::error::Result;
use crate::kv::KvDoc;

/// Column mapping for a long-format CSV: one row per
/// (person, situation, alternative).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub person: String,
    pub situation: String,
    pub alternative: String,
    pub chosen: String,
    /// Missing availability column means every listed row is available.
    #[serde(default)]
    pub available: Option<String>,
    /// Choice-model attributes, one coefficient each, in coefficient order.
    #[serde(default)]
    pub attributes: Vec<AttributeSpec>,
    #[serde(default)]
    pub continuous: Vec<String>,
    #[serde(default)]
    pub binary: Vec<String>,
    /// Attribute names whose coefficients are fixed at zero; they are
    /// dropped from the design.
    #[serde(default)]
    pub fixed_zero: Vec<String>,
}

/// Maps one coefficient to a column. Without `column` the attribute is a
/// constant 1; with `alternatives` it is zero outside the listed ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeSpec {
    pub name: String,
    #[serde(default)]
    pub column: Option<String>,
    #[serde(default)]
    pub alternatives: Vec<String>,
}

impl AttributeSpec {
    pub fn applies_to(&self, alt_id: &str) -> bool {
        self.alternatives.is_empty() || self.alternatives.iter().any(|a| a == alt_id)
    }
}

impl Schema {
    /// Schema that reads back a dataset written by [`super::dump_dataset`].
    pub fn canonical(ds: &ChoiceDataset) -> Self {
        Schema {
            person: "person".into(),
            situation: "situation".into(),
            alternative: "alternative".into(),
            chosen: "chosen".into(),
            available: Some("available".into()),
            attributes: ds
                .attr_names()
                .iter()
                .map(|n| AttributeSpec {
                    name: n.clone(),
                    column: Some(n.clone()),
                    alternatives: vec![],
                })
                .collect(),
            continuous: ds.cont_names().to_vec(),
            binary: ds.bin_names().to_vec(),
            fixed_zero: vec![],
        }
    }

    pub(crate) fn active_attributes(&self) -> impl Iterator<Item = &AttributeSpec> {
        self.attributes
            .iter()
            .filter(|a| !self.fixed_zero.contains(&a.name))
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.push("person", &self.person);
        doc.push("situation", &self.situation);
        doc.push("alternative", &self.alternative);
        doc.push("chosen", &self.chosen);
        if let Some(av) = &self.available {
            doc.push("available", av);
        }
        doc.push_list("continuous", &self.continuous);
        doc.push_list("binary", &self.binary);
        doc.push_list("fixed_zero", &self.fixed_zero);
        doc.push("attributes", self.attributes.len());
        for (i, a) in self.attributes.iter().enumerate() {
            doc.push(format!("attr.{i}.name"), &a.name);
            if let Some(c) = &a.column {
                doc.push(format!("attr.{i}.column"), c);
            }
            doc.push_list(format!("attr.{i}.alternatives"), &a.alternatives);
        }
        doc
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let n: usize = doc.parse_value("attributes")?;
        let attributes = (0..n)
            .map(|i| {
                Ok(AttributeSpec {
                    name: doc.require(&format!("attr.{i}.name"))?.to_string(),
                    column: doc.get(&format!("attr.{i}.column")).map(str::to_string),
                    alternatives: doc.list(&format!("attr.{i}.alternatives"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Schema {
            person: doc.require("person")?.to_string(),
            situation: doc.require("situation")?.to_string(),
            alternative: doc.require("alternative")?.to_string(),
            chosen: doc.require("chosen")?.to_string(),
            available: doc.get("available").map(str::to_string),
            attributes,
            continuous: doc.list("continuous")?,
            binary: doc.list("binary")?,
            fixed_zero: doc.list("fixed_zero")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let schema = Schema {
            person: "pid".into(),
            situation: "sid".into(),
            alternative: "alt".into(),
            chosen: "y".into(),
            available: None,
            attributes: vec![
                AttributeSpec {
                    name: "asc_car".into(),
                    column: None,
                    alternatives: vec!["1".into()],
                },
                AttributeSpec {
                    name: "time".into(),
                    column: Some("tt".into()),
                    alternatives: vec![],
                },
            ],
            continuous: vec!["age".into()],
            binary: vec!["female".into(), "license".into()],
            fixed_zero: vec!["asc_car".into()],
        };
        let doc = KvDoc::parse(&schema.to_kv().to_string()).unwrap();
        assert_eq!(Schema::from_kv(&doc).unwrap(), schema);
        assert_eq!(schema.active_attributes().count(), 1);
    }
}
