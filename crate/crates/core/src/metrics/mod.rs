//! Model comparison and interpretation: parameter counts, information
//! criteria, cross-validation, value of time, class profiles and standard
//! errors.

mod cv;
mod profile;
mod se;

pub use cv::{cross_validate, cross_validate_folds, CvFold, CvReport, CvSettings};
pub use profile::{class_profile, lccm_class_profile, ClassProfile, ProfileRow};
pub use se::{normal_p_value, standard_errors, ParamEstimate, FD_STEP};

use std::fmt::Write as _;

use crate::em::{FitResult, ModelKind, ModelParams};
use crate::error::{Error, Result};
use crate::kv::KvDoc;

/// Free parameters of a model with `classes` classes, `attrs` choice
/// coefficients per class and `cont`/`bin` membership characteristics.
/// The logit membership model has a constant plus every characteristic for
/// all classes but one.
pub fn count_params(kind: ModelKind, classes: usize, attrs: usize, cont: usize, bin: usize) -> usize {
    match kind {
        ModelKind::Mnl => attrs,
        ModelKind::Lccm => classes * attrs + classes.saturating_sub(1) * (1 + cont + bin),
        ModelKind::Gbm(s) => {
            classes * attrs + classes.saturating_sub(1) + classes * cont + s.param_count(classes, cont) + classes * bin
        }
    }
}

/// Parameter count of a fitted parameter set.
pub fn count_model_params(params: &ModelParams) -> usize {
    let attrs = params.betas()[0].beta.len();
    match params {
        ModelParams::Mnl(_) => attrs,
        ModelParams::Lccm(p) => {
            let width = p.gamma.first().map_or(1, Vec::len);
            count_params(ModelKind::Lccm, p.class_count(), attrs, width - 1, 0)
        }
        ModelParams::Gbm(p) => count_params(
            params.kind(),
            p.class_count(),
            attrs,
            p.membership.cont_dim(),
            p.membership.bin_dim(),
        ),
    }
}

/// `(AIC, BIC)`; `n_obs` counts choice situations.
pub fn information_criteria(loglik: f64, n_params: usize, n_obs: usize) -> (f64, f64) {
    let p = n_params as f64;
    let bic_penalty = if n_params == 0 { 0.0 } else { p * (n_obs as f64).ln() };
    (-2.0 * loglik + 2.0 * p, -2.0 * loglik + bic_penalty)
}

/// Value of time in dollars per hour from a per-hour time coefficient and a
/// coefficient per cost unit.
pub fn value_of_time(beta_time: f64, beta_cost: f64, cost_unit: f64, currency_per_dollar: f64) -> Result<f64> {
    if beta_cost == 0.0 || !beta_cost.is_finite() {
        return Err(Error::InvalidArgument("cost coefficient must be nonzero".into()));
    }
    if currency_per_dollar == 0.0 {
        return Err(Error::InvalidArgument("exchange rate must be nonzero".into()));
    }
    Ok(beta_time / beta_cost * cost_unit / currency_per_dollar)
}

/// One row of a model comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSummary {
    pub label: String,
    pub classes: usize,
    pub joint_ll: Option<f64>,
    pub marginal_ll: f64,
    pub ll_variance: f64,
    pub n_params: usize,
    pub n_obs: usize,
    pub aic: f64,
    pub bic: f64,
    pub pred_ll: Option<f64>,
    pub notes: String,
}

impl ModelSummary {
    pub fn new(label: impl Into<String>, fit: &FitResult, n_obs: usize) -> Self {
        let n_params = count_model_params(&fit.params);
        let (aic, bic) = information_criteria(fit.marginal_ll, n_params, n_obs);
        let failed = fit.restarts.len() - fit.completed_restarts();
        let mut notes = String::new();
        if !fit.converged {
            notes.push_str("not converged");
        }
        if failed > 0 {
            if !notes.is_empty() {
                notes.push_str("; ");
            }
            write!(notes, "{failed}/{} restarts failed", fit.restarts.len()).unwrap();
        }
        Self {
            label: label.into(),
            classes: fit.params.class_count(),
            joint_ll: fit.joint_ll,
            marginal_ll: fit.marginal_ll,
            ll_variance: fit.ll_variance,
            n_params,
            n_obs,
            aic,
            bic,
            pred_ll: None,
            notes,
        }
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.push("label", &self.label);
        doc.push("classes", self.classes);
        if let Some(j) = self.joint_ll {
            doc.push_floats("joint_ll", &[j]);
        }
        doc.push_floats("marginal_ll", &[self.marginal_ll]);
        doc.push_floats("ll_variance", &[self.ll_variance]);
        doc.push("params", self.n_params);
        doc.push("observations", self.n_obs);
        doc.push_floats("aic", &[self.aic]);
        doc.push_floats("bic", &[self.bic]);
        if let Some(p) = self.pred_ll {
            doc.push_floats("pred_ll", &[p]);
        }
        doc.push("notes", &self.notes);
        doc
    }
}

/// Aligned text table, one row per summary.
pub fn summary_table(rows: &[ModelSummary]) -> String {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
    let cells: Vec<[String; 10]> = rows
        .iter()
        .map(|r| {
            [
                r.label.clone(),
                r.classes.to_string(),
                opt(r.joint_ll),
                format!("{:.2}", r.marginal_ll),
                format!("{:.3}", r.ll_variance),
                r.n_params.to_string(),
                format!("{:.2}", r.aic),
                format!("{:.2}", r.bic),
                opt(r.pred_ll),
                r.notes.clone(),
            ]
        })
        .collect();
    let header = ["model", "K", "joint LL", "LL", "variance", "p", "AIC", "BIC", "pred LL", "notes"];
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let mut line = |cols: Vec<&str>| {
        let parts: Vec<String> = cols
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 || i == 9 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        writeln!(out, "{}", parts.join("  ").trim_end()).unwrap();
    };
    line(header.to_vec());
    for row in &cells {
        line(row.iter().map(String::as_str).collect());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::CovarianceStructure;
    use proptest::prelude::*;

    #[test]
    fn information_criteria_examples() {
        let (aic, bic) = information_criteria(-4017.47, 5, 7814);
        assert!((aic - 8044.94).abs() < 0.01);
        assert!((bic - 8079.76).abs() < 0.01);
        let (aic, bic) = information_criteria(-2920.81, 22, 7814);
        assert!((aic - 5885.62).abs() < 0.01);
        assert!((bic - 6038.82).abs() < 0.01);
        assert_eq!(information_criteria(0.0, 0, 0), (0.0, 0.0));
    }

    #[test]
    fn counts() {
        let gbm = |s, k| count_params(ModelKind::Gbm(s), k, 5, 1, 4);
        assert_eq!(count_params(ModelKind::Mnl, 1, 5, 1, 4), 5);
        assert_eq!(count_params(ModelKind::Lccm, 2, 5, 1, 4), 16);
        assert_eq!(count_params(ModelKind::Lccm, 3, 5, 1, 4), 27);
        assert_eq!(gbm(CovarianceStructure::Full, 2), 23);
        assert_eq!(gbm(CovarianceStructure::Full, 5), 59);
        assert_eq!(gbm(CovarianceStructure::Tied, 4), 44);
        assert_eq!(count_params(ModelKind::Gbm(CovarianceStructure::Full), 1, 3, 0, 0), 3);
    }

    #[test]
    fn vot_examples() {
        assert!((value_of_time(-0.653, -0.0462, 1000.0, 1500.0).unwrap() - 9.42).abs() < 0.02);
        assert!((value_of_time(-0.658, -0.0456, 1000.0, 1500.0).unwrap() - 9.61).abs() < 0.02);
        assert_eq!(value_of_time(2.0, 2.0, 7.0, 7.0).unwrap(), 1.0);
        assert!(value_of_time(1.0, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn table_renders_every_row() {
        let row = ModelSummary {
            label: "gbm-lccm tied".into(),
            classes: 2,
            joint_ll: Some(-100.0),
            marginal_ll: -50.0,
            ll_variance: 0.0,
            n_params: 22,
            n_obs: 100,
            aic: 144.0,
            bic: 201.3,
            pred_ll: None,
            notes: String::new(),
        };
        let text = summary_table(&[row.clone(), row]);
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("-50.00"));
    }

    proptest! {
        #[test]
        fn vot_scale_invariant(bt in -5.0..5.0f64, bc in 0.01..5.0f64, c in prop_oneof![-100.0..-0.01f64, 0.01..100.0f64]) {
            let a = value_of_time(bt, -bc, 1000.0, 1500.0).unwrap();
            let b = value_of_time(bt * c, -bc * c, 1000.0, 1500.0).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
