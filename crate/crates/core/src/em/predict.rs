use super::lccm::{membership_covariates, membership_probs};
use super::ModelParams;
use crate::data::ChoiceDataset;
use crate::error::{Error, Result};
use crate::mixture::{log_sum_exp, membership_posterior};
use crate::mnl::{choice_log_probs, person_choice_loglik};
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Marginal log-likelihood of the observed choices.
    pub total_ll: f64,
    pub person_ll: Vec<f64>,
    /// Choice probabilities per situation, persons in order; unavailable
    /// alternatives get 0.
    pub probs: Vec<Vec<f64>>,
}

fn check_schema(params: &ModelParams, ds: &ChoiceDataset) -> Result<()> {
    let p = params.betas()[0].beta.len();
    if p != ds.attr_count() {
        return Err(Error::SchemaMismatch(format!("model has {p} attributes, data has {}", ds.attr_count())));
    }
    let (dc, dd) = match params {
        ModelParams::Mnl(_) => return Ok(()),
        ModelParams::Gbm(g) => (g.membership.cont_dim(), g.membership.bin_dim()),
        ModelParams::Lccm(l) => {
            let width = l.gamma.first().map_or(1 + ds.cont_count() + ds.bin_count(), Vec::len);
            if width != 1 + ds.cont_count() + ds.bin_count() {
                return Err(Error::SchemaMismatch(format!(
                    "model has {} membership covariates, data has {}",
                    width - 1,
                    ds.cont_count() + ds.bin_count()
                )));
            }
            return Ok(());
        }
    };
    if dc != ds.cont_count() || dd != ds.bin_count() {
        return Err(Error::SchemaMismatch(format!(
            "model has {dc}+{dd} characteristics, data has {}+{}",
            ds.cont_count(),
            ds.bin_count()
        )));
    }
    Ok(())
}

/// Class weights given characteristics only.
fn class_weights(params: &ModelParams, ds: &ChoiceDataset, n: usize) -> Result<Vec<f64>> {
    let person = ds.person(n);
    match params {
        ModelParams::Mnl(_) => Ok(vec![1.0]),
        ModelParams::Gbm(g) => membership_posterior(&person.s_cont, &person.s_bin, &g.membership),
        ModelParams::Lccm(l) => Ok(membership_probs(&l.gamma, &membership_covariates(person))),
    }
}

/// Out-of-sample evaluation: class weights from the characteristics,
/// choices mixed over classes.
pub fn predict(params: &ModelParams, ds: &ChoiceDataset) -> Result<Prediction> {
    check_schema(params, ds)?;
    let betas = params.betas();
    let rows = par::map_indices(ds.n_persons(), |n| -> Result<(f64, Vec<Vec<f64>>)> {
        let w = class_weights(params, ds, n)?;
        let person = ds.person(n);
        let terms: Vec<f64> = w
            .iter()
            .zip(&betas)
            .map(|(wk, b)| wk.ln() + person_choice_loglik(person, &b.beta))
            .collect();
        let ll = log_sum_exp(&terms);
        let probs = person
            .situations
            .iter()
            .map(|sit| {
                let mut out = vec![0.0; sit.alt_count()];
                for (wk, b) in w.iter().zip(&betas) {
                    for (o, lp) in out.iter_mut().zip(choice_log_probs(sit, &b.beta)) {
                        *o += wk * lp.exp();
                    }
                }
                out
            })
            .collect();
        Ok((ll, probs))
    });
    let mut person_ll = Vec::with_capacity(ds.n_persons());
    let mut probs = Vec::with_capacity(ds.n_situations());
    for (n, row) in rows.into_iter().enumerate() {
        let (ll, p) = row?;
        if !ll.is_finite() {
            return Err(Error::NonFinite(format!("predictive log-likelihood of person {n}")));
        }
        person_ll.push(ll);
        probs.extend(p);
    }
    Ok(Prediction { total_ll: person_ll.iter().sum(), person_ll, probs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::fixtures::{small_dataset, small_lccm, small_params};
    use crate::em::{lccm_loglik, marginal_loglik};
    use crate::mixture::CovarianceStructure;

    #[test]
    fn matches_training_marginal() {
        let ds = small_dataset(25, 2, 1, 2, 40);
        let g = small_params(&ds, 3, CovarianceStructure::Full, 40);
        let pred = predict(&ModelParams::Gbm(g.clone()), &ds).unwrap();
        assert!((pred.total_ll - marginal_loglik(&ds, &g).unwrap()).abs() < 1e-10);
        let l = small_lccm(&ds, 2, 40);
        let pred = predict(&ModelParams::Lccm(l.clone()), &ds).unwrap();
        assert!((pred.total_ll - lccm_loglik(&ds, &l).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn rows_sum_to_one() {
        let ds = small_dataset(25, 1, 2, 3, 41);
        let g = small_params(&ds, 2, CovarianceStructure::Spherical, 41);
        let pred = predict(&ModelParams::Gbm(g), &ds).unwrap();
        assert_eq!(pred.probs.len(), ds.n_situations());
        for row in &pred.probs {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_class_is_mnl() {
        let ds = small_dataset(20, 1, 1, 2, 42);
        let g = small_params(&ds, 1, CovarianceStructure::Tied, 42);
        let a = predict(&ModelParams::Gbm(g.clone()), &ds).unwrap();
        let b = predict(&ModelParams::Mnl(g.betas[0].clone()), &ds).unwrap();
        assert!((a.total_ll - b.total_ll).abs() < 1e-12);
    }

    #[test]
    fn schema_mismatch() {
        let ds = small_dataset(5, 1, 1, 2, 43);
        let other = small_dataset(5, 2, 1, 2, 43);
        let g = small_params(&ds, 2, CovarianceStructure::Full, 1);
        assert!(matches!(predict(&ModelParams::Gbm(g), &other), Err(Error::SchemaMismatch(_))));
    }
}
