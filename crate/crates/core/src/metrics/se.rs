use nalgebra::{DMatrix, SymmetricEigen};

use crate::data::ChoiceDataset;
use crate::em::{estep_gbm, estep_lccm, membership_covariates, membership_probs, GbmLccmParams, LccmParams, ModelParams};
use crate::error::{Error, Result};
use crate::mnl::{weighted_panel_loglik, MnlParams};

/// Relative step of the central differences.
pub const FD_STEP: f64 = 1e-5;
/// Eigenvalues of the information matrix below this fraction of the
/// largest are treated as zero.
const SINGULAR_RATIO: f64 = 1e-8;
/// Squared loading on a null direction above which a parameter is reported
/// as not identified.
const NULL_LOADING: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEstimate {
    pub name: String,
    pub value: f64,
    /// `None` when the parameter lies in a flat direction of the
    /// likelihood.
    pub se: Option<f64>,
    pub p_value: Option<f64>,
}

fn class_gradients(ds: &ChoiceDataset, betas: &[f64], p: usize, resp: &DMatrix<f64>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(betas.len());
    for (k, beta) in betas.chunks(p).enumerate() {
        let w: Vec<f64> = resp.column(k).iter().copied().collect();
        out.extend(weighted_panel_loglik(ds, beta, &w)?.1);
    }
    Ok(out)
}

fn to_betas(x: &[f64], p: usize) -> Vec<MnlParams> {
    x.chunks(p).map(|b| MnlParams { beta: b.to_vec() }).collect()
}

/// Names, values and log-likelihood gradient of the parameters with
/// standard errors. Mixture membership parameters are held at their
/// estimates; the coefficient block is the derivative of the joint
/// likelihood.
type Gradient<'a> = Box<dyn Fn(&[f64]) -> Result<Vec<f64>> + 'a>;

fn parametrize<'a>(ds: &'a ChoiceDataset, params: &'a ModelParams) -> (Vec<String>, Vec<f64>, Gradient<'a>) {
    let p = ds.attr_count();
    let beta_names = |k: usize, multi: bool| -> Vec<String> {
        ds.attr_names()
            .iter()
            .map(|a| if multi { format!("beta[{}].{a}", k + 1) } else { format!("beta.{a}") })
            .collect()
    };
    match params {
        ModelParams::Mnl(b) => {
            let ones = vec![1.0; ds.n_persons()];
            let grad = move |x: &[f64]| Ok(weighted_panel_loglik(ds, x, &ones)?.1);
            (beta_names(0, false), b.beta.clone(), Box::new(grad))
        }
        ModelParams::Gbm(g) => {
            let k = g.class_count();
            let names = (0..k).flat_map(|c| beta_names(c, true)).collect();
            let x = g.betas.iter().flat_map(|b| b.beta.clone()).collect();
            let grad = move |x: &[f64]| {
                let trial = GbmLccmParams { membership: g.membership.clone(), betas: to_betas(x, p) };
                let resp = estep_gbm(ds, &trial)?;
                class_gradients(ds, x, p, resp.matrix())
            };
            (names, x, Box::new(grad))
        }
        ModelParams::Lccm(l) => {
            let k = l.class_count();
            let width = 1 + ds.cont_count() + ds.bin_count();
            let covariates: Vec<String> = std::iter::once("const".to_string())
                .chain(ds.cont_names().iter().cloned())
                .chain(ds.bin_names().iter().cloned())
                .collect();
            let mut names: Vec<String> = (0..k - 1)
                .flat_map(|c| covariates.iter().map(move |v| format!("gamma[{}].{v}", c + 1)))
                .collect();
            names.extend((0..k).flat_map(|c| beta_names(c, true)));
            let mut x: Vec<f64> = l.gamma.iter().flatten().copied().collect();
            x.extend(l.betas.iter().flat_map(|b| b.beta.clone()));
            let split = (k - 1) * width;
            let grad = move |x: &[f64]| {
                let gamma: Vec<Vec<f64>> = x[..split].chunks(width).map(<[f64]>::to_vec).collect();
                let trial = LccmParams { gamma, betas: to_betas(&x[split..], p) };
                let resp = estep_lccm(ds, &trial)?;
                let r = resp.matrix();
                let mut out = vec![0.0; split];
                for (n, person) in ds.persons().iter().enumerate() {
                    let z = membership_covariates(person);
                    let prior = membership_probs(&trial.gamma, &z);
                    for c in 0..k - 1 {
                        let coef = r[(n, c)] - prior[c];
                        for (o, zv) in out[c * width..(c + 1) * width].iter_mut().zip(&z) {
                            *o += coef * zv;
                        }
                    }
                }
                out.extend(class_gradients(ds, &x[split..], p, r)?);
                Ok(out)
            };
            (names, x, Box::new(grad))
        }
    }
}

/// Central-difference Hessian of `grad`, symmetrized.
fn hessian(grad: &dyn Fn(&[f64]) -> Result<Vec<f64>>, x: &[f64]) -> Result<DMatrix<f64>> {
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    let mut probe = x.to_vec();
    for i in 0..n {
        let step = FD_STEP * x[i].abs().max(1.0);
        probe[i] = x[i] + step;
        let up = grad(&probe)?;
        probe[i] = x[i] - step;
        let down = grad(&probe)?;
        probe[i] = x[i];
        for j in 0..n {
            h[(j, i)] = (up[j] - down[j]) / (2.0 * step);
        }
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Hessian".into()));
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Two-sided normal p-value of `z`.
pub fn normal_p_value(z: f64) -> f64 {
    libm::erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Standard errors and two-sided normal p-values of the choice
/// coefficients (and, for the logit membership model, of the membership
/// coefficients) from the observed information at `params`.
pub fn standard_errors(ds: &ChoiceDataset, params: &ModelParams) -> Result<Vec<ParamEstimate>> {
    if params.betas()[0].beta.len() != ds.attr_count() {
        return Err(Error::SchemaMismatch("coefficients do not match the data".into()));
    }
    let (names, x, grad) = parametrize(ds, params);
    let info = -hessian(grad.as_ref(), &x)?;
    let eig = SymmetricEigen::new(info);
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = SINGULAR_RATIO * scale;
    let n = x.len();
    let mut cov = vec![0.0; n];
    let mut null_loading = vec![0.0; n];
    for (c, &lambda) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(c);
        for i in 0..n {
            if lambda > cutoff {
                cov[i] += v[i] * v[i] / lambda;
            } else {
                null_loading[i] += v[i] * v[i];
            }
        }
    }
    Ok((0..n)
        .map(|i| {
            let se = (null_loading[i] <= NULL_LOADING && scale > 0.0).then(|| cov[i].sqrt());
            ParamEstimate {
                name: names[i].clone(),
                value: x[i],
                se,
                p_value: se.map(|s| normal_p_value(x[i] / s)),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{simulate_dataset, AttributeColumn, AttributeSampler, ChoiceSituation, PersonRecord};
    use crate::em::fixtures::{small_dataset, small_lccm, small_params};
    use crate::em::{GbmLccmParams, ModelParams};
    use crate::mixture::{CovarianceStructure, Covariances, GbmMembershipParams};
    use crate::mnl::{choice_log_probs, fit_mnl};

    fn mnl_truth(beta: Vec<f64>) -> GbmLccmParams {
        GbmLccmParams {
            membership: GbmMembershipParams {
                pi: vec![1.0],
                mu_c: vec![vec![]],
                sigma_c: Covariances::identity(CovarianceStructure::Full, 1, 0),
                mu_d: vec![vec![]],
            },
            betas: vec![MnlParams { beta }],
        }
    }

    fn sampler(p: usize) -> AttributeSampler {
        AttributeSampler { alt_count: 3, columns: vec![AttributeColumn::Normal { mean: 0.0, sd: 1.0 }; p] }
    }

    /// Analytic information of the logit: Σ Σ_j P_j (x_j − x̄)(x_j − x̄)ᵀ.
    fn analytic_information(ds: &ChoiceDataset, beta: &[f64]) -> DMatrix<f64> {
        let p = beta.len();
        let mut info = DMatrix::zeros(p, p);
        for sit in ds.persons().iter().flat_map(|q| &q.situations) {
            let probs: Vec<f64> = choice_log_probs(sit, beta).iter().map(|l| l.exp()).collect();
            let mean: Vec<f64> = (0..p)
                .map(|a| probs.iter().enumerate().map(|(j, pj)| pj * sit.attrs_of(j)[a]).sum())
                .collect();
            for (j, pj) in probs.iter().enumerate() {
                let d: Vec<f64> = sit.attrs_of(j).iter().zip(&mean).map(|(x, m)| x - m).collect();
                for a in 0..p {
                    for b in 0..p {
                        info[(a, b)] += pj * d[a] * d[b];
                    }
                }
            }
        }
        info
    }

    #[test]
    fn logit_matches_analytic_information() {
        let ds = small_dataset(80, 0, 0, 3, 5);
        let (beta, _) = fit_mnl(&ds).unwrap();
        let est = standard_errors(&ds, &ModelParams::Mnl(beta.clone())).unwrap();
        let cov = analytic_information(&ds, &beta.beta).try_inverse().unwrap();
        for (i, e) in est.iter().enumerate() {
            let expected = cov[(i, i)].sqrt();
            assert!((e.se.unwrap() - expected).abs() < 1e-6 * expected, "{} vs {expected}", e.se.unwrap());
        }
        assert_eq!(est[0].name, "beta.x0");
    }

    #[test]
    fn shrink_with_sample_size() {
        let truth = mnl_truth(vec![0.8, -0.5]);
        let se_at = |n: usize| {
            let ds = simulate_dataset(&truth, n, 1, &sampler(2), n as u64).unwrap().dataset;
            let (beta, _) = fit_mnl(&ds).unwrap();
            standard_errors(&ds, &ModelParams::Mnl(beta)).unwrap()[0].se.unwrap()
        };
        let ratio = se_at(1000) / se_at(4000);
        assert!((ratio - 2.0).abs() < 0.4, "{ratio}");
    }

    #[test]
    fn null_effect_is_rarely_significant() {
        let truth = mnl_truth(vec![1.0, 0.0]);
        let insignificant = (0..20)
            .filter(|&r| {
                let ds = simulate_dataset(&truth, 400, 1, &sampler(2), 1000 + r).unwrap().dataset;
                let (beta, _) = fit_mnl(&ds).unwrap();
                standard_errors(&ds, &ModelParams::Mnl(beta)).unwrap()[1].p_value.unwrap() > 0.05
            })
            .count();
        assert!(insignificant >= 16, "{insignificant}");
    }

    #[test]
    fn duplicated_column_is_flagged() {
        let base = small_dataset(60, 0, 0, 1, 8);
        let persons = base
            .persons()
            .iter()
            .map(|q| PersonRecord {
                situations: q
                    .situations
                    .iter()
                    .map(|s| {
                        let attrs = (0..3).flat_map(|j| [s.attrs_of(j)[0], s.attrs_of(j)[0], (j == 1) as u8 as f64]).collect();
                        ChoiceSituation::full(attrs, 3, s.chosen()).unwrap()
                    })
                    .collect(),
                ..q.clone()
            })
            .collect();
        let ds = ChoiceDataset::new(
            persons,
            base.alt_ids().to_vec(),
            vec!["x".into(), "x_copy".into(), "asc".into()],
            vec![],
            vec![],
        )
        .unwrap();
        let est = standard_errors(&ds, &ModelParams::Mnl(MnlParams { beta: vec![0.3, 0.3, 0.1] })).unwrap();
        assert!(est[0].se.is_none() && est[1].se.is_none());
        assert!(est[2].se.is_some());
    }

    #[test]
    fn mixture_models_report_every_coefficient() {
        let ds = small_dataset(60, 1, 1, 2, 9);
        let g = small_params(&ds, 2, CovarianceStructure::Tied, 9);
        let est = standard_errors(&ds, &ModelParams::Gbm(g)).unwrap();
        assert_eq!(est.len(), 4);
        assert_eq!(est[3].name, "beta[2].x1");
        let l = small_lccm(&ds, 2, 9);
        let est = standard_errors(&ds, &ModelParams::Lccm(l)).unwrap();
        assert_eq!(est.len(), 3 + 4);
        assert_eq!(est[0].name, "gamma[1].const");
    }

    #[test]
    fn p_values() {
        assert!((normal_p_value(1.959963984540054) - 0.05).abs() < 1e-12);
        assert_eq!(normal_p_value(0.0), 1.0);
    }
}
