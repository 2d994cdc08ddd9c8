use log::{info, warn};

use crate::data::{split_folds, standardize, ChoiceDataset};
use crate::em::{predict, run_restarts, ModelSpec, RestartPlan};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Default)]
pub struct CvSettings {
    pub plan: RestartPlan,
    /// Continuous characteristics standardized on each training split.
    pub standardize: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvFold {
    pub train_persons: usize,
    pub test_persons: usize,
    pub pred_ll: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub folds: Vec<CvFold>,
}

impl CvReport {
    /// Mean held-out log-likelihood; `None` if any fold failed.
    pub fn mean(&self) -> Option<f64> {
        let lls: Option<Vec<f64>> = self.folds.iter().map(|f| f.pred_ll).collect();
        lls.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn failed(&self) -> usize {
        self.folds.iter().filter(|f| f.pred_ll.is_none()).count()
    }
}

fn run_fold(ds: &ChoiceDataset, spec: &ModelSpec, test: &[usize], settings: &CvSettings) -> Result<f64> {
    let mut in_test = vec![false; ds.n_persons()];
    for &i in test {
        in_test[i] = true;
    }
    let train_idx: Vec<usize> = (0..ds.n_persons()).filter(|&i| !in_test[i]).collect();
    let train = ds.subset(&train_idx)?;
    let test = ds.subset(test)?;
    let (train, test) = if settings.standardize.is_empty() {
        (train, test)
    } else {
        let (train, record) = standardize(&train, &settings.standardize)?;
        let test = record.apply(&test)?;
        (train, test)
    };
    let fit = run_restarts(&train, spec, &settings.plan)?;
    Ok(predict(&fit.params, &test)?.total_ll)
}

/// Cross-validation over given person folds.
pub fn cross_validate_folds(
    ds: &ChoiceDataset,
    spec: &ModelSpec,
    folds: &[Vec<usize>],
    settings: &CvSettings,
) -> Result<CvReport> {
    if folds.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 folds".into()));
    }
    let mut seen = vec![false; ds.n_persons()];
    for &i in folds.iter().flatten() {
        if i >= ds.n_persons() || std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidArgument(format!("person {i} out of range or in two folds")));
        }
    }
    if folds.iter().any(Vec::is_empty) || seen.iter().any(|s| !s) {
        return Err(Error::InvalidArgument("folds must be non-empty and cover every person".into()));
    }
    let outcomes = par::map_indices(folds.len(), |f| run_fold(ds, spec, &folds[f], settings));
    let folds = outcomes
        .into_iter()
        .zip(folds)
        .enumerate()
        .map(|(f, (r, test))| {
            let (pred_ll, error) = match r {
                Ok(ll) => {
                    info!("fold {f}: predictive LL {ll:.4}");
                    (Some(ll), None)
                }
                Err(e) => {
                    warn!("fold {f} failed: {e}");
                    (None, Some(e.to_string()))
                }
            };
            CvFold { train_persons: ds.n_persons() - test.len(), test_persons: test.len(), pred_ll, error }
        })
        .collect();
    Ok(CvReport { folds })
}

/// `k`-fold cross-validation with seeded person folds.
pub fn cross_validate(ds: &ChoiceDataset, spec: &ModelSpec, k: usize, seed: u64, settings: &CvSettings) -> Result<CvReport> {
    let folds = split_folds(ds, k, seed)?;
    cross_validate_folds(ds, spec, &folds, settings)
}
