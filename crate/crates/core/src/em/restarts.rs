use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gbm::fit_gbm_with_rng;
use super::lccm::fit_lccm_with_rng;
use super::{
    population_variance, ChoiceStart, EmOptions, FitResult, GbmInit, LccmInit, ModelKind, ModelParams, ModelSpec,
};
use crate::data::ChoiceDataset;
use crate::error::{Error, Result};
use crate::mnl::fit_mnl_with;
use crate::par;

/// Marginal log-likelihoods closer than this count as a tie; the lower
/// stream wins.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Outcome of one restart.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartRecord {
    pub label: String,
    /// Random stream of the restart; also its position in the plan.
    pub stream: u64,
    pub marginal_ll: Option<f64>,
    pub joint_ll: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub error: Option<String>,
}

/// Strategy grid: every membership start crossed with zero and random
/// coefficient starts, `trials` runs each, then `incremental` runs that
/// split one class off a `K − 1` solution.
#[derive(Debug, Clone)]
pub struct RestartPlan {
    pub seed: u64,
    pub trials: usize,
    pub incremental: usize,
    /// `K − 1` solution for the incremental starts. Estimated with the same
    /// plan when absent.
    pub warm: Option<ModelParams>,
    /// Keep only the first restarts of the grid.
    pub max_restarts: Option<usize>,
    pub em: EmOptions,
}

impl Default for RestartPlan {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 5,
            incremental: 5,
            warm: None,
            max_restarts: None,
            em: EmOptions::default(),
        }
    }
}

impl RestartPlan {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }
}

enum Start {
    Gbm(GbmInit),
    Lccm(LccmInit),
}

impl Start {
    fn label(&self) -> String {
        match self {
            Start::Gbm(i) => i.label(),
            Start::Lccm(i) => i.label(),
        }
    }
}

const CHOICE_STARTS: [ChoiceStart; 2] = [ChoiceStart::Zero, ChoiceStart::Random];

fn incremental_choice(trial: usize) -> ChoiceStart {
    if trial == 0 {
        ChoiceStart::Zero
    } else {
        ChoiceStart::Random
    }
}

fn base_grid(kind: ModelKind, trials: usize) -> Vec<Start> {
    let mut starts = Vec::new();
    match kind {
        ModelKind::Gbm(_) => {
            for membership in [GbmInit::Random, GbmInit::KMeans] {
                for choice in CHOICE_STARTS {
                    starts.extend((0..trials).map(|_| Start::Gbm(membership(choice))));
                }
            }
        }
        ModelKind::Lccm => {
            // An all-zero start is deterministic, so it runs once.
            if trials > 0 {
                starts.push(Start::Lccm(LccmInit::Start { membership: ChoiceStart::Zero, choice: ChoiceStart::Zero }));
            }
            for (membership, choice) in [
                (ChoiceStart::Zero, ChoiceStart::Random),
                (ChoiceStart::Random, ChoiceStart::Zero),
                (ChoiceStart::Random, ChoiceStart::Random),
            ] {
                starts.extend((0..trials).map(|_| Start::Lccm(LccmInit::Start { membership, choice })));
            }
        }
        ModelKind::Mnl => {}
    }
    starts
}

fn warm_params(ds: &ChoiceDataset, spec: &ModelSpec, plan: &RestartPlan) -> Result<ModelParams> {
    if let Some(w) = &plan.warm {
        if w.kind() == spec.kind && w.class_count() + 1 == spec.classes {
            return Ok(w.clone());
        }
        return Err(Error::InvalidArgument(format!(
            "warm start is a {}-class {} model, need {} classes of {}",
            w.class_count(),
            w.kind().tag(),
            spec.classes - 1,
            spec.kind.tag()
        )));
    }
    info!("estimating the {}-class model for incremental starts", spec.classes - 1);
    let smaller = ModelSpec { kind: spec.kind, classes: spec.classes - 1 };
    Ok(run_restarts(ds, &smaller, &RestartPlan { warm: None, max_restarts: None, ..plan.clone() })?.params)
}

fn plan_starts(ds: &ChoiceDataset, spec: &ModelSpec, plan: &RestartPlan) -> Result<Vec<Start>> {
    let limit = plan.max_restarts.unwrap_or(usize::MAX);
    let mut starts = base_grid(spec.kind, plan.trials);
    starts.truncate(limit);
    if spec.classes > 1 && plan.incremental > 0 && starts.len() < limit {
        let warm = warm_params(ds, spec, plan)?;
        let extra = plan.incremental.min(limit - starts.len());
        for trial in 0..extra {
            let choice = incremental_choice(trial);
            starts.push(match &warm {
                ModelParams::Gbm(p) => Start::Gbm(GbmInit::Incremental(Box::new(p.clone()), choice)),
                ModelParams::Lccm(p) => Start::Lccm(LccmInit::Incremental(Box::new(p.clone()), choice)),
                ModelParams::Mnl(_) => unreachable!("plain logit has no incremental start"),
            });
        }
    }
    if starts.is_empty() {
        return Err(Error::InvalidArgument("restart plan is empty".into()));
    }
    Ok(starts)
}

fn fit_mnl_result(ds: &ChoiceDataset, opts: &EmOptions) -> Result<FitResult> {
    let fit = fit_mnl_with(ds, &opts.mstep)?;
    Ok(FitResult {
        params: ModelParams::Mnl(fit.params),
        joint_ll: None,
        marginal_ll: fit.loglik,
        iterations: fit.iterations,
        converged: fit.converged,
        ll_trace: vec![fit.loglik],
        elapsed: vec![0.0],
        restarts: vec![super::RestartRecord {
            label: "mnl".into(),
            stream: 0,
            marginal_ll: Some(fit.loglik),
            joint_ll: None,
            iterations: fit.iterations,
            converged: fit.converged,
            error: None,
        }],
        ll_variance: 0.0,
    })
}

/// Runs the restart grid and returns the fit with the highest marginal
/// log-likelihood, carrying every restart's record.
pub fn run_restarts(ds: &ChoiceDataset, spec: &ModelSpec, plan: &RestartPlan) -> Result<FitResult> {
    if spec.classes == 0 {
        return Err(Error::InvalidArgument("need at least one class".into()));
    }
    if spec.kind == ModelKind::Mnl {
        if spec.classes != 1 {
            return Err(Error::InvalidArgument("plain logit has a single class".into()));
        }
        return fit_mnl_result(ds, &plan.em);
    }
    let starts = plan_starts(ds, spec, plan)?;
    let fits = par::map_indices(starts.len(), |r| {
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
        rng.set_stream(r as u64);
        match (&starts[r], spec.kind) {
            (Start::Gbm(init), ModelKind::Gbm(s)) => fit_gbm_with_rng(ds, spec.classes, s, init, &mut rng, &plan.em),
            (Start::Lccm(init), _) => fit_lccm_with_rng(ds, spec.classes, init, &mut rng, &plan.em),
            _ => unreachable!("start matches model kind"),
        }
    });
    let mut records = Vec::with_capacity(fits.len());
    let mut best: Option<FitResult> = None;
    for (r, (fit, start)) in fits.into_iter().zip(&starts).enumerate() {
        match fit {
            Ok(fit) => {
                let mut record = fit.restarts[0].clone();
                record.stream = r as u64;
                records.push(record);
                if best.as_ref().is_none_or(|b| fit.marginal_ll > b.marginal_ll + TIE_TOLERANCE) {
                    best = Some(fit);
                }
            }
            Err(e) => {
                warn!("restart {r} ({}) failed: {e}", start.label());
                records.push(RestartRecord {
                    label: start.label(),
                    stream: r as u64,
                    marginal_ll: None,
                    joint_ll: None,
                    iterations: 0,
                    converged: false,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    let mut best = best.ok_or(Error::AllRestartsFailed(records.len()))?;
    let completed: Vec<f64> = records.iter().filter_map(|r| r.marginal_ll).collect();
    best.ll_variance = population_variance(&completed);
    best.restarts = records;
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::fixtures::small_dataset;
    use crate::mixture::CovarianceStructure;

    fn quick() -> EmOptions {
        EmOptions { tol: 1e-6, max_iter: 50, ..EmOptions::default() }
    }

    #[test]
    fn grid_sizes() {
        assert_eq!(base_grid(ModelKind::Gbm(CovarianceStructure::Full), 5).len(), 20);
        assert_eq!(base_grid(ModelKind::Lccm, 5).len(), 16);
        assert_eq!(base_grid(ModelKind::Lccm, 0).len(), 0);
    }

    #[test]
    fn full_plan_counts_restarts() {
        let ds = small_dataset(40, 1, 1, 2, 6);
        let spec = ModelSpec { kind: ModelKind::Gbm(CovarianceStructure::Tied), classes: 2 };
        let plan = RestartPlan { trials: 1, incremental: 2, em: quick(), ..RestartPlan::default() };
        let fit = run_restarts(&ds, &spec, &plan).unwrap();
        assert_eq!(fit.restarts.len(), 6);
        assert_eq!(fit.restarts[4].label, "incremental/zero");
        let best = fit.restarts.iter().filter_map(|r| r.marginal_ll).fold(f64::NEG_INFINITY, f64::max);
        assert!(fit.marginal_ll >= best - TIE_TOLERANCE);
        assert!(fit.restarts.iter().enumerate().all(|(i, r)| r.stream == i as u64));
    }

    #[test]
    fn single_restart_is_the_result() {
        let ds = small_dataset(30, 1, 0, 2, 6);
        let spec = ModelSpec { kind: ModelKind::Lccm, classes: 2 };
        let plan = RestartPlan { max_restarts: Some(1), em: quick(), ..RestartPlan::default() };
        let fit = run_restarts(&ds, &spec, &plan).unwrap();
        assert_eq!(fit.restarts.len(), 1);
        assert_eq!(fit.restarts[0].marginal_ll, Some(fit.marginal_ll));
        assert_eq!(fit.ll_variance, 0.0);
    }

    #[test]
    fn ties_go_to_lower_stream() {
        // Zero starts are identical for one class: every restart ties.
        let ds = small_dataset(30, 1, 1, 2, 1);
        let spec = ModelSpec { kind: ModelKind::Gbm(CovarianceStructure::Full), classes: 1 };
        let plan = RestartPlan { trials: 2, em: quick(), ..RestartPlan::default() };
        let fit = run_restarts(&ds, &spec, &plan).unwrap();
        let lls: Vec<f64> = fit.restarts.iter().map(|r| r.marginal_ll.unwrap()).collect();
        assert!(lls.iter().all(|v| (v - lls[0]).abs() < TIE_TOLERANCE));
        assert_eq!(fit.marginal_ll.to_bits(), lls[0].to_bits());
        assert!(fit.ll_variance < 1e-18);
    }

    #[test]
    fn reproducible() {
        let ds = small_dataset(30, 2, 1, 2, 12);
        let spec = ModelSpec { kind: ModelKind::Gbm(CovarianceStructure::Diagonal), classes: 2 };
        let plan = RestartPlan { trials: 1, incremental: 1, seed: 9, em: quick(), ..RestartPlan::default() };
        let a = run_restarts(&ds, &spec, &plan).unwrap();
        let b = run_restarts(&ds, &spec, &plan).unwrap();
        assert!(a.same_estimates(&b));
    }

    #[test]
    fn all_failed_is_an_error() {
        // Two classes cannot be formed from one person.
        let ds = small_dataset(1, 1, 0, 2, 12);
        let spec = ModelSpec { kind: ModelKind::Gbm(CovarianceStructure::Full), classes: 2 };
        let plan = RestartPlan { trials: 1, incremental: 0, em: quick(), ..RestartPlan::default() };
        assert!(matches!(run_restarts(&ds, &spec, &plan), Err(Error::AllRestartsFailed(4))));
    }

    #[test]
    fn mnl_kind_is_single_fit() {
        let ds = small_dataset(30, 0, 0, 2, 3);
        let fit = run_restarts(&ds, &ModelSpec { kind: ModelKind::Mnl, classes: 1 }, &RestartPlan::default()).unwrap();
        assert_eq!(fit.restarts.len(), 1);
        assert_eq!(fit.params.class_count(), 1);
    }
}
