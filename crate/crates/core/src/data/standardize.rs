use super::ChoiceDataset;
use crate::error::{Error, Result};
use crate::kv::KvDoc;

#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedVar {
    /// Index into the continuous characteristics.
    pub index: usize,
    pub name: String,
    pub mean: f64,
    pub stddev: f64,
}

/// Affine transforms applied to continuous characteristics, kept with a
/// fitted model so holdout data gets the training-set transform.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StandardizationRecord {
    pub vars: Vec<StandardizedVar>,
}

/// Center and scale the selected continuous characteristics to sample mean 0
/// and sample standard deviation 1 (n − 1 denominator).
pub fn standardize(
    ds: &ChoiceDataset,
    vars: &[usize],
) -> Result<(ChoiceDataset, StandardizationRecord)> {
    let n = ds.n_persons();
    let mut record = StandardizationRecord::default();
    for &index in vars {
        let name = ds
            .cont_names()
            .get(index)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("continuous characteristic {index} out of range"))
            })?
            .clone();
        if record.vars.iter().any(|v| v.index == index) {
            continue;
        }
        let values: Vec<f64> = ds.persons().iter().map(|p| p.s_cont[index]).collect();
        let mean = values.iter().sum::<f64>() / n as f64;
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        let stddev = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
        if !(stddev > 1e-12 * mean.abs().max(1.0)) {
            return Err(Error::ZeroVariance(name));
        }
        record.vars.push(StandardizedVar {
            index,
            name,
            mean,
            stddev,
        });
    }
    let out = record.apply(ds)?;
    Ok((out, record))
}

impl StandardizationRecord {
    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Indices of continuous characteristics by name.
    pub fn resolve(ds: &ChoiceDataset, names: &[String]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|name| {
                ds.cont_names()
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| Error::MissingColumn(name.clone()))
            })
            .collect()
    }

    pub fn apply(&self, ds: &ChoiceDataset) -> Result<ChoiceDataset> {
        self.check(ds)?;
        Ok(self.map_rows(ds, |v, var| (v - var.mean) / var.stddev))
    }

    pub fn invert(&self, ds: &ChoiceDataset) -> Result<ChoiceDataset> {
        self.check(ds)?;
        Ok(self.map_rows(ds, |v, var| v * var.stddev + var.mean))
    }

    /// Original-scale value of continuous characteristic `index`.
    pub fn destandardize(&self, index: usize, value: f64) -> f64 {
        match self.vars.iter().find(|v| v.index == index) {
            Some(var) => value * var.stddev + var.mean,
            None => value,
        }
    }

    fn check(&self, ds: &ChoiceDataset) -> Result<()> {
        for var in &self.vars {
            match ds.cont_names().get(var.index) {
                Some(name) if *name == var.name => {}
                _ => {
                    return Err(Error::SchemaMismatch(format!(
                        "standardized variable `{}` not at continuous index {}",
                        var.name, var.index
                    )))
                }
            }
        }
        Ok(())
    }

    fn map_rows(&self, ds: &ChoiceDataset, f: impl Fn(f64, &StandardizedVar) -> f64) -> ChoiceDataset {
        let rows = ds
            .persons()
            .iter()
            .map(|p| {
                let mut row = p.s_cont.clone();
                for var in &self.vars {
                    row[var.index] = f(row[var.index], var);
                }
                row
            })
            .collect();
        ds.with_continuous(rows)
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.push("count", self.vars.len());
        for (i, v) in self.vars.iter().enumerate() {
            doc.push(format!("{i}.name"), &v.name);
            doc.push(format!("{i}.index"), v.index);
            doc.push_floats(format!("{i}.mean_sd"), &[v.mean, v.stddev]);
        }
        doc
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let count: usize = doc.parse_value("count")?;
        let mut vars = Vec::with_capacity(count);
        for i in 0..count {
            let ms = doc.floats(&format!("{i}.mean_sd"))?;
            if ms.len() != 2 || !(ms[1] > 0.0) {
                return Err(Error::Parse(format!("standardization entry {i} malformed")));
            }
            vars.push(StandardizedVar {
                index: doc.parse_value(&format!("{i}.index"))?,
                name: doc.require(&format!("{i}.name"))?.to_string(),
                mean: ms[0],
                stddev: ms[1],
            });
        }
        Ok(Self { vars })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ChoiceSituation, PersonRecord};
    use proptest::prelude::*;

    fn with_ages(ages: &[f64]) -> ChoiceDataset {
        let persons = ages
            .iter()
            .enumerate()
            .map(|(i, &a)| PersonRecord {
                id: i.to_string(),
                s_cont: vec![a, i as f64],
                s_bin: vec![],
                situations: vec![ChoiceSituation::full(vec![0.0, 1.0], 2, 0).unwrap()],
            })
            .collect();
        ChoiceDataset::new(
            persons,
            vec!["0".into(), "1".into()],
            vec!["x".into()],
            vec!["age".into(), "idx".into()],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn thirty_forty_fifty() {
        let (out, rec) = standardize(&with_ages(&[30.0, 40.0, 50.0]), &[0]).unwrap();
        let z: Vec<f64> = out.persons().iter().map(|p| p.s_cont[0]).collect();
        assert_eq!(z, vec![-1.0, 0.0, 1.0]);
        assert_eq!(rec.vars[0].mean, 40.0);
        assert_eq!(rec.vars[0].stddev, 10.0);
        // untouched column
        assert_eq!(out.person(2).s_cont[1], 2.0);
    }

    #[test]
    fn constant_column_rejected() {
        let r = standardize(&with_ages(&[40.0, 40.0, 40.0]), &[0]);
        assert!(matches!(r, Err(Error::ZeroVariance(name)) if name == "age"));
    }

    #[test]
    fn under_mean_is_negative() {
        let ages = [25.0, 38.0, 40.0, 42.0, 55.0];
        let (out, rec) = standardize(&with_ages(&ages), &[0]).unwrap();
        assert_eq!(rec.vars[0].mean, 40.0);
        for (p, a) in out.persons().iter().zip(ages) {
            assert_eq!(p.s_cont[0] < 0.0, a < 40.0);
        }
        let back = StandardizationRecord::from_kv(&KvDoc::parse(&rec.to_kv().to_string()).unwrap()).unwrap();
        assert_eq!(back, rec);
    }

    proptest! {
        #[test]
        fn standardized_moments_and_inverse(ages in proptest::collection::vec(-1e3f64..1e3, 2..60)) {
            let spread = ages.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - ages.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assume!(spread > 1e-3);
            let ds = with_ages(&ages);
            let (out, rec) = standardize(&ds, &[0]).unwrap();
            let z: Vec<f64> = out.persons().iter().map(|p| p.s_cont[0]).collect();
            let n = z.len() as f64;
            let mean = z.iter().sum::<f64>() / n;
            let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            prop_assert!(mean.abs() < 1e-10);
            prop_assert!((sd - 1.0).abs() < 1e-10);
            let back = rec.invert(&out).unwrap();
            for (p, q) in back.persons().iter().zip(ds.persons()) {
                prop_assert!((p.s_cont[0] - q.s_cont[0]).abs() < 1e-10);
            }
        }
    }
}
