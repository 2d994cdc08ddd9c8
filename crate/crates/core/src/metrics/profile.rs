use std::fmt;

use crate::data::{ChoiceDataset, StandardizationRecord};
use crate::em::{estep_lccm, GbmLccmParams, LccmParams};
use crate::error::{Error, Result};
use crate::kv::KvDoc;

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRow {
    pub variable: String,
    /// `Yes`/`No` for binary characteristics, empty for continuous ones.
    pub category: String,
    pub values: Vec<f64>,
}

/// Class shares and per-class characteristic means on the original scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProfile {
    pub shares: Vec<f64>,
    pub rows: Vec<ProfileRow>,
}

fn build(
    shares: Vec<f64>,
    cont_means: &[Vec<f64>],
    bin_means: &[Vec<f64>],
    standardization: &StandardizationRecord,
    cont_labels: &[String],
    bin_labels: &[String],
) -> Result<ClassProfile> {
    let k = shares.len();
    let dc = cont_means.first().map_or(0, Vec::len);
    let dd = bin_means.first().map_or(0, Vec::len);
    if cont_labels.len() != dc || bin_labels.len() != dd {
        return Err(Error::InvalidArgument(format!(
            "{} continuous and {} binary labels for {dc} and {dd} characteristics",
            cont_labels.len(),
            bin_labels.len()
        )));
    }
    let mut rows = Vec::with_capacity(dc + 2 * dd);
    for (d, label) in cont_labels.iter().enumerate() {
        rows.push(ProfileRow {
            variable: label.clone(),
            category: String::new(),
            values: (0..k).map(|c| standardization.destandardize(d, cont_means[c][d])).collect(),
        });
    }
    for (d, label) in bin_labels.iter().enumerate() {
        let yes: Vec<f64> = (0..k).map(|c| bin_means[c][d]).collect();
        rows.push(ProfileRow {
            variable: label.clone(),
            category: "Yes".into(),
            values: yes.clone(),
        });
        rows.push(ProfileRow {
            variable: label.clone(),
            category: "No".into(),
            values: yes.iter().map(|v| 1.0 - v).collect(),
        });
    }
    Ok(ClassProfile { shares, rows })
}

/// Profile read off the mixture parameters.
pub fn class_profile(
    params: &GbmLccmParams,
    standardization: &StandardizationRecord,
    cont_labels: &[String],
    bin_labels: &[String],
) -> Result<ClassProfile> {
    let m = &params.membership;
    build(m.pi.clone(), &m.mu_c, &m.mu_d, standardization, cont_labels, bin_labels)
}

/// Profile of a logit-membership model: posterior-weighted sample means.
/// `ds` must be on the scale the model was fitted on.
pub fn lccm_class_profile(
    ds: &ChoiceDataset,
    params: &LccmParams,
    standardization: &StandardizationRecord,
) -> Result<ClassProfile> {
    let resp = estep_lccm(ds, params)?;
    let r = resp.matrix();
    let k = params.class_count();
    let n = ds.n_persons() as f64;
    let mut cont = vec![vec![0.0; ds.cont_count()]; k];
    let mut bin = vec![vec![0.0; ds.bin_count()]; k];
    let mut sizes = vec![0.0; k];
    for (i, p) in ds.persons().iter().enumerate() {
        for c in 0..k {
            let w = r[(i, c)];
            sizes[c] += w;
            cont[c].iter_mut().zip(&p.s_cont).for_each(|(a, v)| *a += w * v);
            bin[c].iter_mut().zip(p.s_bin_f64()).for_each(|(a, v)| *a += w * v);
        }
    }
    for c in 0..k {
        cont[c].iter_mut().for_each(|v| *v /= sizes[c]);
        bin[c].iter_mut().for_each(|v| *v /= sizes[c]);
    }
    let shares = sizes.iter().map(|s| s / n).collect();
    build(shares, &cont, &bin, standardization, ds.cont_names(), ds.bin_names())
}

impl ClassProfile {
    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.push_floats("share", &self.shares);
        for row in &self.rows {
            let key = if row.category.is_empty() {
                row.variable.clone()
            } else {
                format!("{}.{}", row.variable, row.category)
            };
            doc.push_floats(key, &row.values);
        }
        doc
    }
}

impl fmt::Display for ClassProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .rows
            .iter()
            .map(|r| r.variable.len() + r.category.len() + 1)
            .max()
            .unwrap_or(0)
            .max(12);
        write!(f, "{:<width$}", "")?;
        for c in 0..self.shares.len() {
            write!(f, "  {:>10}", format!("class {}", c + 1))?;
        }
        writeln!(f)?;
        write!(f, "{:<width$}", "share")?;
        for s in &self.shares {
            write!(f, "  {s:>10.3}")?;
        }
        writeln!(f)?;
        for row in &self.rows {
            let label = if row.category.is_empty() {
                row.variable.clone()
            } else {
                format!("{} {}", row.variable, row.category)
            };
            write!(f, "{label:<width$}")?;
            for v in &row.values {
                write!(f, "  {v:>10.3}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::StandardizedVar;
    use crate::em::fixtures::{small_dataset, small_lccm, small_params};
    use crate::mixture::CovarianceStructure;

    fn labels(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn destandardizes_and_splits_binaries() {
        let ds = small_dataset(5, 2, 1, 2, 1);
        let mut params = small_params(&ds, 2, CovarianceStructure::Tied, 1);
        params.membership.mu_c[0][0] = 0.034;
        params.membership.mu_d[0][0] = 0.919;
        let record = StandardizationRecord {
            vars: vec![StandardizedVar { index: 0, name: "c0".into(), mean: 40.0, stddev: 12.5 }],
        };
        let p = class_profile(&params, &record, &labels("c", 2), &labels("d", 1)).unwrap();
        assert_eq!(p.rows.len(), 4);
        assert!((p.rows[0].values[0] - (40.0 + 0.034 * 12.5)).abs() < 1e-12);
        assert_eq!(p.rows[1].values[0], params.membership.mu_c[0][1]);
        assert!((p.rows[2].values[0] - 0.919).abs() < 1e-12);
        assert!((p.rows[3].values[0] - 0.081).abs() < 1e-12);
        for c in 0..2 {
            assert!((p.rows[2].values[c] + p.rows[3].values[c] - 1.0).abs() < 1e-12);
        }
        assert!(class_profile(&params, &record, &labels("c", 1), &labels("d", 1)).is_err());
        let text = p.to_string();
        assert!(text.contains("d0 Yes") && text.contains("class 2"));
    }

    #[test]
    fn single_class_gives_sample_shares() {
        let ds = small_dataset(40, 1, 2, 2, 3);
        let params = small_lccm(&ds, 1, 3);
        let p = lccm_class_profile(&ds, &params, &StandardizationRecord::default()).unwrap();
        assert_eq!(p.shares, vec![1.0]);
        let share = ds.persons().iter().filter(|q| q.s_bin[1]).count() as f64 / 40.0;
        assert!((p.rows[3].values[0] - share).abs() < 1e-12);
        let mean = ds.persons().iter().map(|q| q.s_cont[0]).sum::<f64>() / 40.0;
        assert!((p.rows[0].values[0] - mean).abs() < 1e-12);
    }
}
