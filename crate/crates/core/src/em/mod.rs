//! EM estimation of latent class choice models: the Gaussian-Bernoulli
//! mixture membership model, the logit membership model, restarts and
//! prediction.

mod gbm;
mod lccm;
mod model_file;
mod predict;
mod restarts;

pub use gbm::{
    estep_gbm, fit_gbm_lccm, initial_gbm_params, joint_loglik, marginal_loglik, mstep_gbm,
    EMPTY_CLASS_FRACTION,
};
pub use lccm::{
    estep_lccm, fit_lccm, initial_lccm_params, lccm_loglik, membership_covariates, membership_probs,
    mstep_lccm,
};
pub use model_file::FittedModel;
pub use predict::{predict, Prediction};
pub use restarts::{run_restarts, RestartPlan, RestartRecord};

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::ChoiceDataset;
use crate::error::{Error, Result};
use crate::mixture::{CovarianceStructure, GbmMembershipParams};
use crate::mnl::{person_choice_loglik, MnlParams};
use crate::optim::BfgsOptions;
use crate::par;

/// Half-width of the uniform distribution random starting coefficients
/// are drawn from.
pub const RANDOM_START_SCALE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct GbmLccmParams {
    pub membership: GbmMembershipParams,
    pub betas: Vec<MnlParams>,
}

impl GbmLccmParams {
    pub fn class_count(&self) -> usize {
        self.betas.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.membership.validate()?;
        if self.betas.len() != self.membership.class_count() {
            return Err(Error::InvalidParams(format!(
                "{} coefficient vectors for {} classes",
                self.betas.len(),
                self.membership.class_count()
            )));
        }
        check_betas(&self.betas)
    }

    /// Classes reordered so that new class `i` is old class `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            membership: self.membership.permuted(order),
            betas: order.iter().map(|&i| self.betas[i].clone()).collect(),
        }
    }
}

/// Logit membership: `gamma[k]` holds the coefficients of class `k` on the
/// covariates `[1, continuous…, binary…]`; the last class is the
/// reference with all coefficients zero and is not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct LccmParams {
    pub gamma: Vec<Vec<f64>>,
    pub betas: Vec<MnlParams>,
}

impl LccmParams {
    pub fn class_count(&self) -> usize {
        self.betas.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.betas.is_empty() || self.gamma.len() + 1 != self.betas.len() {
            return Err(Error::InvalidParams(format!(
                "{} membership rows for {} classes",
                self.gamma.len(),
                self.betas.len()
            )));
        }
        let width = self.gamma.first().map(Vec::len);
        if self.gamma.iter().any(|g| Some(g.len()) != width || g.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidParams("membership coefficients ragged or non-finite".into()));
        }
        check_betas(&self.betas)
    }
}

fn check_betas(betas: &[MnlParams]) -> Result<()> {
    let p = betas.first().map_or(0, |b| b.beta.len());
    if betas.iter().any(|b| b.beta.len() != p || b.beta.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidParams("class coefficients ragged or non-finite".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Mnl(MnlParams),
    Lccm(LccmParams),
    Gbm(GbmLccmParams),
}

impl ModelParams {
    pub fn class_count(&self) -> usize {
        match self {
            ModelParams::Mnl(_) => 1,
            ModelParams::Lccm(p) => p.class_count(),
            ModelParams::Gbm(p) => p.class_count(),
        }
    }

    pub fn betas(&self) -> Vec<&MnlParams> {
        match self {
            ModelParams::Mnl(b) => vec![b],
            ModelParams::Lccm(p) => p.betas.iter().collect(),
            ModelParams::Gbm(p) => p.betas.iter().collect(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Mnl(_) => ModelKind::Mnl,
            ModelParams::Lccm(_) => ModelKind::Lccm,
            ModelParams::Gbm(p) => ModelKind::Gbm(p.membership.structure()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Mnl,
    Lccm,
    Gbm(CovarianceStructure),
}

impl ModelKind {
    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Mnl => "mnl",
            ModelKind::Lccm => "lccm",
            ModelKind::Gbm(_) => "gbm-lccm",
        }
    }

    pub fn structure(self) -> Option<CovarianceStructure> {
        match self {
            ModelKind::Gbm(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub classes: usize,
}

/// N × K posterior class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities(DMatrix<f64>);

impl Responsibilities {
    /// Rows must be non-negative and sum to 1.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        for row in m.row_iter() {
            let total: f64 = row.iter().sum();
            if row.iter().any(|v| !(*v >= 0.0 && *v <= 1.0)) || (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!("responsibility row {row} invalid")));
            }
        }
        Ok(Self(m))
    }

    /// Rows with a single 1 at `assign[n]`.
    pub fn one_hot(assign: &[usize], k: usize) -> Self {
        Self(DMatrix::from_fn(assign.len(), k, |n, c| if assign[n] == c { 1.0 } else { 0.0 }))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn class_count(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, n: usize) -> Vec<f64> {
        self.0.row(n).iter().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    /// Relative change of the objective below which EM stops.
    pub tol: f64,
    pub max_iter: usize,
    /// Inner solver for the coefficient updates (objective per unit weight).
    pub mstep: BfgsOptions,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 500,
            mstep: BfgsOptions {
                grad_tol: 1e-8,
                ..BfgsOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChoiceStart {
    Zero,
    Random,
}

impl ChoiceStart {
    pub fn tag(self) -> &'static str {
        match self {
            ChoiceStart::Zero => "zero",
            ChoiceStart::Random => "random",
        }
    }

    pub(crate) fn draw(self, p: usize, rng: &mut ChaCha8Rng) -> MnlParams {
        match self {
            ChoiceStart::Zero => MnlParams::zeros(p),
            ChoiceStart::Random => MnlParams {
                beta: (0..p).map(|_| rng.random_range(-RANDOM_START_SCALE..RANDOM_START_SCALE)).collect(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GbmInit {
    /// Soft assignment to randomly chosen persons as centers.
    Random(ChoiceStart),
    KMeans(ChoiceStart),
    /// Previous `K − 1` solution with one class split off its largest.
    Incremental(Box<GbmLccmParams>, ChoiceStart),
    Given(Box<GbmLccmParams>),
}

impl GbmInit {
    pub fn label(&self) -> String {
        match self {
            GbmInit::Random(c) => format!("random/{}", c.tag()),
            GbmInit::KMeans(c) => format!("kmeans/{}", c.tag()),
            GbmInit::Incremental(_, c) => format!("incremental/{}", c.tag()),
            GbmInit::Given(_) => "given".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LccmInit {
    Start { membership: ChoiceStart, choice: ChoiceStart },
    Incremental(Box<LccmParams>, ChoiceStart),
    Given(Box<LccmParams>),
}

impl LccmInit {
    pub fn label(&self) -> String {
        match self {
            LccmInit::Start { membership, choice } => format!("{}/{}", membership.tag(), choice.tag()),
            LccmInit::Incremental(_, c) => format!("incremental/{}", c.tag()),
            LccmInit::Given(_) => "given".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    /// Joint log-likelihood of characteristics and choices (mixture models
    /// with a generative membership part only).
    pub joint_ll: Option<f64>,
    pub marginal_ll: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each E-step, starting with the initial parameters.
    pub ll_trace: Vec<f64>,
    /// Wall-clock seconds since the start of the fit at each trace entry.
    pub elapsed: Vec<f64>,
    pub restarts: Vec<RestartRecord>,
    /// Population variance of the marginal LL over completed restarts.
    pub ll_variance: f64,
}

impl FitResult {
    /// Equality of everything except wall-clock timings.
    pub fn same_estimates(&self, other: &FitResult) -> bool {
        self.params == other.params
            && self.joint_ll.map(f64::to_bits) == other.joint_ll.map(f64::to_bits)
            && self.marginal_ll.to_bits() == other.marginal_ll.to_bits()
            && self.iterations == other.iterations
            && self.converged == other.converged
            && self.ll_trace.iter().map(|v| v.to_bits()).eq(other.ll_trace.iter().map(|v| v.to_bits()))
            && self.restarts == other.restarts
            && self.ll_variance.to_bits() == other.ll_variance.to_bits()
    }

    pub fn completed_restarts(&self) -> usize {
        self.restarts.iter().filter(|r| r.marginal_ll.is_some()).count()
    }
}

/// `N × K` matrix of `Σ_t log P(chosen | β_k)`.
pub fn choice_loglik_matrix(ds: &ChoiceDataset, betas: &[MnlParams]) -> Result<DMatrix<f64>> {
    let k = betas.len();
    let rows = par::map_indices(ds.n_persons(), |n| {
        betas
            .iter()
            .map(|b| person_choice_loglik(ds.person(n), &b.beta))
            .collect::<Vec<f64>>()
    });
    let m = DMatrix::from_fn(ds.n_persons(), k, |n, c| rows[n][c]);
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("choice log-likelihood".into()));
    }
    Ok(m)
}

/// Continuous (`N × D_c`) and binary (`N × D_d`, 0/1) characteristic blocks.
pub(crate) fn characteristic_blocks(ds: &ChoiceDataset) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = ds.n_persons();
    let s_c = DMatrix::from_fn(n, ds.cont_count(), |i, d| ds.person(i).s_cont[d]);
    let s_d = DMatrix::from_fn(n, ds.bin_count(), |i, d| {
        if ds.person(i).s_bin[d] {
            1.0
        } else {
            0.0
        }
    });
    (s_c, s_d)
}

fn relative_change(prev: f64, next: f64) -> f64 {
    (next - prev).abs() / prev.abs().max(f64::MIN_POSITIVE)
}

pub(crate) fn population_variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64
}

#[cfg(test)]
pub(crate) mod fixtures;
