//! Panel choice data: persons, their characteristics and their repeated
//! choice situations.

mod counts;
mod csv_io;
mod folds;
mod schema;
mod simulate;
mod standardize;

pub use counts::{binomial, enumerate_count_alternatives};
pub use csv_io::{dump_dataset, load_dataset, load_dataset_aligned, DatasetMeta};
pub use folds::split_folds;
pub use schema::{AttributeSpec, Schema};
pub use simulate::{simulate_dataset, AttributeColumn, AttributeSampler, Simulated};
pub use standardize::{standardize, StandardizationRecord, StandardizedVar};

use crate::error::{Error, Result};

/// One choice situation: a `J × P` attribute matrix stored row-major, the
/// availability of each alternative and the index of the chosen one.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceSituation {
    attrs: Vec<f64>,
    available: Vec<bool>,
    chosen: usize,
}

impl ChoiceSituation {
    pub fn new(attrs: Vec<f64>, available: Vec<bool>, chosen: usize) -> Result<Self> {
        let j = available.len();
        if j < 2 {
            return Err(Error::InvalidData(format!(
                "a choice situation needs at least 2 alternatives, got {j}"
            )));
        }
        if attrs.len() % j != 0 {
            return Err(Error::Ragged(format!(
                "{} attribute values cannot fill {j} alternatives",
                attrs.len()
            )));
        }
        if chosen >= j {
            return Err(Error::InvalidData(format!(
                "chosen index {chosen} out of range for {j} alternatives"
            )));
        }
        if !available[chosen] {
            return Err(Error::ChosenUnavailable {
                person: "?".into(),
                situation: "?".into(),
            });
        }
        if available.iter().filter(|&&a| a).count() < 2 {
            return Err(Error::InvalidData(
                "fewer than two alternatives available".into(),
            ));
        }
        Ok(Self {
            attrs,
            available,
            chosen,
        })
    }

    /// All alternatives available.
    pub fn full(attrs: Vec<f64>, alt_count: usize, chosen: usize) -> Result<Self> {
        Self::new(attrs, vec![true; alt_count], chosen)
    }

    #[inline]
    pub fn alt_count(&self) -> usize {
        self.available.len()
    }

    #[inline]
    pub fn attr_count(&self) -> usize {
        self.attrs.len() / self.available.len()
    }

    /// Attribute row of alternative `j`.
    #[inline]
    pub fn attrs_of(&self, j: usize) -> &[f64] {
        let p = self.attr_count();
        &self.attrs[j * p..(j + 1) * p]
    }

    pub fn attrs(&self) -> &[f64] {
        &self.attrs
    }

    #[inline]
    pub fn is_available(&self, j: usize) -> bool {
        self.available[j]
    }

    pub fn available(&self) -> &[bool] {
        &self.available
    }

    #[inline]
    pub fn chosen(&self) -> usize {
        self.chosen
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonRecord {
    pub id: String,
    pub s_cont: Vec<f64>,
    pub s_bin: Vec<bool>,
    pub situations: Vec<ChoiceSituation>,
}

impl PersonRecord {
    pub fn s_bin_f64(&self) -> impl Iterator<Item = f64> + '_ {
        self.s_bin.iter().map(|&b| if b { 1.0 } else { 0.0 })
    }
}

/// Immutable panel dataset. All persons share `J`, `P`, `D_c` and `D_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceDataset {
    persons: Vec<PersonRecord>,
    alt_ids: Vec<String>,
    attr_names: Vec<String>,
    cont_names: Vec<String>,
    bin_names: Vec<String>,
}

impl ChoiceDataset {
    pub fn new(
        persons: Vec<PersonRecord>,
        alt_ids: Vec<String>,
        attr_names: Vec<String>,
        cont_names: Vec<String>,
        bin_names: Vec<String>,
    ) -> Result<Self> {
        let j = alt_ids.len();
        if j < 2 {
            return Err(Error::InvalidData(format!("need J >= 2 alternatives, got {j}")));
        }
        if persons.is_empty() {
            return Err(Error::InvalidData("dataset has no persons".into()));
        }
        let (p, dc, dd) = (attr_names.len(), cont_names.len(), bin_names.len());
        for person in &persons {
            if person.situations.is_empty() {
                return Err(Error::InvalidData(format!(
                    "person {} has no choice situations",
                    person.id
                )));
            }
            if person.s_cont.len() != dc || person.s_bin.len() != dd {
                return Err(Error::Ragged(format!(
                    "person {} has {} continuous / {} binary characteristics, expected {dc} / {dd}",
                    person.id,
                    person.s_cont.len(),
                    person.s_bin.len()
                )));
            }
            if person.s_cont.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "person {} has a non-finite characteristic",
                    person.id
                )));
            }
            for sit in &person.situations {
                if sit.alt_count() != j || sit.attrs.len() != j * p {
                    return Err(Error::Ragged(format!(
                        "person {}: situation shape {}x{} differs from {j}x{p}",
                        person.id,
                        sit.alt_count(),
                        sit.attrs.len() / sit.alt_count().max(1)
                    )));
                }
            }
        }
        Ok(Self {
            persons,
            alt_ids,
            attr_names,
            cont_names,
            bin_names,
        })
    }

    pub fn persons(&self) -> &[PersonRecord] {
        &self.persons
    }

    pub fn person(&self, n: usize) -> &PersonRecord {
        &self.persons[n]
    }

    pub fn n_persons(&self) -> usize {
        self.persons.len()
    }

    /// Total number of choice situations, `Σ T_n`.
    pub fn n_situations(&self) -> usize {
        self.persons.iter().map(|p| p.situations.len()).sum()
    }

    pub fn alt_count(&self) -> usize {
        self.alt_ids.len()
    }

    pub fn attr_count(&self) -> usize {
        self.attr_names.len()
    }

    pub fn cont_count(&self) -> usize {
        self.cont_names.len()
    }

    pub fn bin_count(&self) -> usize {
        self.bin_names.len()
    }

    pub fn alt_ids(&self) -> &[String] {
        &self.alt_ids
    }

    pub fn attr_names(&self) -> &[String] {
        &self.attr_names
    }

    pub fn cont_names(&self) -> &[String] {
        &self.cont_names
    }

    pub fn bin_names(&self) -> &[String] {
        &self.bin_names
    }

    /// Dataset restricted to the given person indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let persons = indices
            .iter()
            .map(|&i| {
                self.persons.get(i).cloned().ok_or_else(|| {
                    Error::InvalidArgument(format!("person index {i} out of range"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            persons,
            self.alt_ids.clone(),
            self.attr_names.clone(),
            self.cont_names.clone(),
            self.bin_names.clone(),
        )
    }

    /// Same persons with a replacement continuous block.
    pub(crate) fn with_continuous(&self, rows: Vec<Vec<f64>>) -> Self {
        let mut out = self.clone();
        for (p, row) in out.persons.iter_mut().zip(rows) {
            p.s_cont = row;
        }
        out
    }

    /// Membership features for k-means: continuous then binary as 0/1.
    pub fn membership_features(&self) -> Vec<Vec<f64>> {
        self.persons
            .iter()
            .map(|p| p.s_cont.iter().copied().chain(p.s_bin_f64()).collect())
            .collect()
    }

    /// Fails unless `other` has the same alternatives, attributes and
    /// characteristics (names and order).
    pub fn check_compatible(&self, other: &ChoiceDataset) -> Result<()> {
        let check = |what: &str, a: &[String], b: &[String]| {
            if a != b {
                Err(Error::SchemaMismatch(format!(
                    "{what}: expected {a:?}, found {b:?}"
                )))
            } else {
                Ok(())
            }
        };
        check("alternatives", &self.alt_ids, &other.alt_ids)?;
        check("attributes", &self.attr_names, &other.attr_names)?;
        check("continuous characteristics", &self.cont_names, &other.cont_names)?;
        check("binary characteristics", &self.bin_names, &other.bin_names)
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Two alternatives, one attribute; person `n` has the given choices.
    pub fn binary_logit(xs: &[(f64, f64, usize)], persons: usize) -> ChoiceDataset {
        let per = xs.len() / persons;
        let people = (0..persons)
            .map(|n| PersonRecord {
                id: n.to_string(),
                s_cont: vec![],
                s_bin: vec![],
                situations: xs[n * per..(n + 1) * per]
                    .iter()
                    .map(|&(a, b, c)| ChoiceSituation::full(vec![a, b], 2, c).unwrap())
                    .collect(),
            })
            .collect();
        ChoiceDataset::new(
            people,
            vec!["0".into(), "1".into()],
            vec!["x".into()],
            vec![],
            vec![],
        )
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn situation_invariants() {
        assert!(matches!(
            ChoiceSituation::new(vec![0.0, 0.0], vec![true, false], 1),
            Err(Error::ChosenUnavailable { .. })
        ));
        assert!(ChoiceSituation::new(vec![0.0; 3], vec![true, true, false], 0).is_ok());
        assert!(ChoiceSituation::new(vec![0.0; 3], vec![true, false, false], 0).is_err());
        assert!(ChoiceSituation::new(vec![0.0; 3], vec![true, true], 0).is_err());
    }

    #[test]
    fn dataset_rejects_ragged_persons() {
        let sit = ChoiceSituation::full(vec![0.0, 1.0], 2, 0).unwrap();
        let a = PersonRecord {
            id: "a".into(),
            s_cont: vec![1.0],
            s_bin: vec![],
            situations: vec![sit.clone()],
        };
        let b = PersonRecord {
            id: "b".into(),
            s_cont: vec![],
            s_bin: vec![],
            situations: vec![sit],
        };
        let r = ChoiceDataset::new(
            vec![a, b],
            vec!["0".into(), "1".into()],
            vec!["x".into()],
            vec!["c".into()],
            vec![],
        );
        assert!(matches!(r, Err(Error::Ragged(_))));
    }

    #[test]
    fn no_situations_rejected() {
        let a = PersonRecord {
            id: "a".into(),
            s_cont: vec![],
            s_bin: vec![],
            situations: vec![],
        };
        assert!(ChoiceDataset::new(
            vec![a],
            vec!["0".into(), "1".into()],
            vec!["x".into()],
            vec![],
            vec![]
        )
        .is_err());
    }
}
