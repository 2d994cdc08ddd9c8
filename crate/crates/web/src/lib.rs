//! Browser bindings: draw a synthetic panel, fit a two-characteristic
//! mixture membership model to it, and convert coefficients to a value of
//! time. Built for the page in `www/`.

use wasm_bindgen::prelude::*;

use lccm::data::{simulate_dataset, AttributeColumn, AttributeSampler, ChoiceDataset};
use lccm::em::{estep_gbm, run_restarts, GbmLccmParams, ModelKind, ModelParams, ModelSpec, RestartPlan};
use lccm::metrics::{count_model_params, information_criteria};
use lccm::mixture::{CovarianceStructure, Covariances, GbmMembershipParams};
use lccm::mnl::MnlParams;
use nalgebra::DMatrix;

const MAX_PERSONS: usize = 5000;
const SITUATIONS: usize = 4;

fn truth(separation: f64) -> GbmLccmParams {
    GbmLccmParams {
        membership: GbmMembershipParams {
            pi: vec![0.4, 0.6],
            mu_c: vec![vec![-separation, -0.5 * separation], vec![separation, 0.5 * separation]],
            sigma_c: Covariances::Tied(DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.8])),
            mu_d: vec![vec![0.8], vec![0.2]],
        },
        betas: vec![MnlParams { beta: vec![0.5, -1.0, 1.5] }, MnlParams { beta: vec![-0.5, 1.2, -0.8] }],
    }
}

/// A synthetic panel of persons with two continuous characteristics.
#[wasm_bindgen]
pub struct Panel {
    data: ChoiceDataset,
    classes: Vec<usize>,
}

#[wasm_bindgen]
impl Panel {
    /// `separation` is the distance of each true class mean from the origin.
    pub fn simulate(persons: usize, separation: f64, seed: u32) -> Result<Panel, String> {
        if persons == 0 || persons > MAX_PERSONS {
            return Err(format!("persons must be between 1 and {MAX_PERSONS}"));
        }
        if !(separation.is_finite() && separation >= 0.0) {
            return Err("separation must be a non-negative number".into());
        }
        let sampler = AttributeSampler {
            alt_count: 3,
            columns: vec![
                AttributeColumn::AltConstant { alt: 1 },
                AttributeColumn::Normal { mean: 0.0, sd: 1.0 },
                AttributeColumn::Normal { mean: 0.0, sd: 1.0 },
            ],
        };
        let sim = simulate_dataset(&truth(separation), persons, SITUATIONS, &sampler, u64::from(seed))
            .map_err(|e| e.to_string())?;
        Ok(Panel { data: sim.dataset, classes: sim.classes })
    }

    pub fn persons(&self) -> usize {
        self.data.n_persons()
    }

    /// Continuous characteristics, flattened as `x0, y0, x1, y1, ...`.
    pub fn points(&self) -> Vec<f64> {
        self.data.persons().iter().flat_map(|p| p.s_cont.iter().copied()).collect()
    }

    /// Class each person was drawn from.
    pub fn true_classes(&self) -> Vec<u32> {
        self.classes.iter().map(|&c| c as u32).collect()
    }

    /// Fit with the full restart plan, capped at `restarts`.
    pub fn fit(&self, classes: usize, structure: &str, restarts: usize, seed: u32) -> Result<Fit, String> {
        if !(1..=5).contains(&classes) {
            return Err("classes must be between 1 and 5".into());
        }
        let structure: CovarianceStructure = structure.parse().map_err(|e: lccm::Error| e.to_string())?;
        let spec = ModelSpec { kind: ModelKind::Gbm(structure), classes };
        let plan = RestartPlan { max_restarts: Some(restarts.max(1)), ..RestartPlan::with_seed(u64::from(seed)) };
        let fit = run_restarts(&self.data, &spec, &plan).map_err(|e| e.to_string())?;
        let ModelParams::Gbm(params) = fit.params.clone() else {
            return Err("unexpected model kind".into());
        };
        let resp = estep_gbm(&self.data, &params).map_err(|e| e.to_string())?;
        let assigned = (0..self.data.n_persons())
            .map(|n| {
                let row = resp.row(n);
                (0..row.len()).fold(0, |best, k| if row[k] > row[best] { k } else { best }) as u32
            })
            .collect();
        let n_params = count_model_params(&fit.params);
        let (aic, bic) = information_criteria(fit.marginal_ll, n_params, self.data.n_situations());
        Ok(Fit {
            trace: fit.ll_trace.clone(),
            assigned,
            means: params.membership.mu_c.iter().flatten().copied().collect(),
            shares: params.membership.pi.clone(),
            marginal_ll: fit.marginal_ll,
            ll_variance: fit.ll_variance,
            n_params,
            aic,
            bic,
        })
    }
}

/// Summary of one estimate, shaped for plotting.
#[wasm_bindgen]
pub struct Fit {
    trace: Vec<f64>,
    assigned: Vec<u32>,
    means: Vec<f64>,
    shares: Vec<f64>,
    marginal_ll: f64,
    ll_variance: f64,
    n_params: usize,
    aic: f64,
    bic: f64,
}

#[wasm_bindgen]
impl Fit {
    /// EM objective after each iteration of the best restart.
    pub fn trace(&self) -> Vec<f64> {
        self.trace.clone()
    }

    /// Most probable class of each person given characteristics and choices.
    pub fn assigned(&self) -> Vec<u32> {
        self.assigned.clone()
    }

    /// Class means of the continuous characteristics, flattened by class.
    pub fn means(&self) -> Vec<f64> {
        self.means.clone()
    }

    pub fn shares(&self) -> Vec<f64> {
        self.shares.clone()
    }

    pub fn summary(&self) -> String {
        format!(
            "LL {:.2}  variance {:.3}  parameters {}  AIC {:.2}  BIC {:.2}",
            self.marginal_ll, self.ll_variance, self.n_params, self.aic, self.bic
        )
    }

    #[wasm_bindgen(getter)]
    pub fn marginal_ll(&self) -> f64 {
        self.marginal_ll
    }
}

/// Dollars per hour from a time coefficient, a cost coefficient, the cost
/// unit and the exchange rate.
#[wasm_bindgen]
pub fn value_of_time(beta_time: f64, beta_cost: f64, cost_unit: f64, rate: f64) -> Result<f64, String> {
    lccm::metrics::value_of_time(beta_time, beta_cost, cost_unit, rate).map_err(|e| e.to_string())
}
