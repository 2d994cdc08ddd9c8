use std::time::Instant;

use log::debug;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{
    choice_loglik_matrix, relative_change, ChoiceStart, EmOptions, FitResult, LccmInit, LccmParams,
    ModelParams, RestartRecord, Responsibilities, RANDOM_START_SCALE,
};
use crate::data::{ChoiceDataset, PersonRecord};
use crate::error::{Error, Result};
use crate::mixture::{log_sum_exp, softmax_in_place};
use crate::mnl::fit_weighted_mnl;
use crate::optim::{BfgsOptions, OptimError};
use crate::par;

const SPLIT_PERTURBATION: f64 = 0.1;

/// Membership covariates `[1, continuous…, binary as 0/1…]`.
pub fn membership_covariates(person: &PersonRecord) -> Vec<f64> {
    std::iter::once(1.0)
        .chain(person.s_cont.iter().copied())
        .chain(person.s_bin_f64())
        .collect()
}

fn covariate_matrix(ds: &ChoiceDataset) -> DMatrix<f64> {
    let width = 1 + ds.cont_count() + ds.bin_count();
    let rows: Vec<Vec<f64>> = ds.persons().iter().map(membership_covariates).collect();
    DMatrix::from_fn(ds.n_persons(), width, |n, d| rows[n][d])
}

fn membership_logits(gamma: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
    gamma
        .iter()
        .map(|g| g.iter().zip(z).map(|(a, b)| a * b).sum())
        .chain(std::iter::once(0.0))
        .collect()
}

/// Class membership probabilities for covariates `z`.
pub fn membership_probs(gamma: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
    let mut v = membership_logits(gamma, z);
    softmax_in_place(&mut v);
    v
}

fn check_dataset(ds: &ChoiceDataset, params: &LccmParams) -> Result<()> {
    let width = 1 + ds.cont_count() + ds.bin_count();
    if params.gamma.iter().any(|g| g.len() != width) {
        return Err(Error::SchemaMismatch(format!(
            "membership coefficients do not match {width} covariates"
        )));
    }
    if params.betas.iter().any(|b| b.beta.len() != ds.attr_count()) {
        return Err(Error::SchemaMismatch(format!(
            "coefficients do not match the {} attributes",
            ds.attr_count()
        )));
    }
    Ok(())
}

fn estep_inner(ds: &ChoiceDataset, gamma: &[Vec<f64>], choice_ll: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let k = gamma.len() + 1;
    let rows = par::map_indices(ds.n_persons(), |n| {
        let z = membership_covariates(ds.person(n));
        let mut row = membership_logits(gamma, &z);
        let norm = log_sum_exp(&row);
        for (c, v) in row.iter_mut().enumerate() {
            *v += choice_ll[(n, c)] - norm;
        }
        let lse = softmax_in_place(&mut row);
        (row, lse)
    });
    let mut ll = 0.0;
    let mut resp = DMatrix::zeros(ds.n_persons(), k);
    for (n, (row, lse)) in rows.into_iter().enumerate() {
        if !lse.is_finite() {
            return Err(Error::NonFinite(format!("log-likelihood of person {n}")));
        }
        ll += lse;
        for (c, v) in row.into_iter().enumerate() {
            resp[(n, c)] = v;
        }
    }
    Ok((resp, ll))
}

pub fn estep_lccm(ds: &ChoiceDataset, params: &LccmParams) -> Result<Responsibilities> {
    check_dataset(ds, params)?;
    let choice_ll = choice_loglik_matrix(ds, &params.betas)?;
    Ok(Responsibilities(estep_inner(ds, &params.gamma, &choice_ll)?.0))
}

/// `Σ_n ln Σ_k P(k | S_n, γ) Π_t P(y_nt | β_k)`.
pub fn lccm_loglik(ds: &ChoiceDataset, params: &LccmParams) -> Result<f64> {
    check_dataset(ds, params)?;
    let choice_ll = choice_loglik_matrix(ds, &params.betas)?;
    Ok(estep_inner(ds, &params.gamma, &choice_ll)?.1)
}

/// Weighted multinomial logit over classes with responsibilities as soft
/// labels, warm-started at `gamma0`.
fn fit_gamma(z: &DMatrix<f64>, resp: &DMatrix<f64>, gamma0: &[Vec<f64>], opts: &BfgsOptions) -> Result<Vec<Vec<f64>>> {
    let (n, width) = z.shape();
    let k = resp.ncols();
    if k == 1 {
        return Ok(Vec::new());
    }
    let objective = |x: &[f64]| {
        let gamma: Vec<Vec<f64>> = x.chunks(width).map(<[f64]>::to_vec).collect();
        let parts = par::map_chunks(n, |range| {
            let mut f = 0.0;
            let mut g = vec![0.0; x.len()];
            let mut zrow = vec![0.0; width];
            for i in range {
                zrow.iter_mut().enumerate().for_each(|(d, v)| *v = z[(i, d)]);
                let mut lp = membership_logits(&gamma, &zrow);
                let norm = log_sum_exp(&lp);
                for c in 0..k {
                    lp[c] -= norm;
                    f += resp[(i, c)] * lp[c];
                }
                for c in 0..k - 1 {
                    let coef = resp[(i, c)] - lp[c].exp();
                    for d in 0..width {
                        g[c * width + d] += coef * zrow[d];
                    }
                }
            }
            (f, g)
        });
        let mut f = 0.0;
        let mut g = vec![0.0; x.len()];
        for (pf, pg) in parts {
            f += pf;
            g.iter_mut().zip(&pg).for_each(|(a, b)| *a += b);
        }
        (f / n as f64, g.into_iter().map(|v| v / n as f64).collect())
    };
    let x0: Vec<f64> = gamma0.iter().flatten().copied().collect();
    let x = match opts.maximize(objective, &x0) {
        Ok(r) => r.x_star,
        Err(OptimError::LineSearch { x, .. }) => x,
        Err(e) => return Err(e.into()),
    };
    Ok(x.chunks(width).map(<[f64]>::to_vec).collect())
}

fn mstep_inner(
    ds: &ChoiceDataset,
    z: &DMatrix<f64>,
    resp: &DMatrix<f64>,
    prev: &LccmParams,
    opts: &BfgsOptions,
) -> Result<LccmParams> {
    let n = ds.n_persons() as f64;
    for k in 0..resp.ncols() {
        let size: f64 = resp.column(k).iter().sum();
        if !(size >= super::EMPTY_CLASS_FRACTION * n) {
            return Err(Error::EmptyClass { class: k, size });
        }
    }
    let gamma = fit_gamma(z, resp, &prev.gamma, opts)?;
    let betas = prev
        .betas
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let w: Vec<f64> = resp.column(k).iter().copied().collect();
            fit_weighted_mnl(ds, &w, &b.beta, opts).map(|f| f.params)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LccmParams { gamma, betas })
}

pub fn mstep_lccm(ds: &ChoiceDataset, resp: &Responsibilities, prev: &LccmParams, opts: &BfgsOptions) -> Result<LccmParams> {
    check_dataset(ds, prev)?;
    if resp.matrix().nrows() != ds.n_persons() || resp.class_count() != prev.class_count() {
        return Err(Error::InvalidArgument("responsibilities do not match data and classes".into()));
    }
    mstep_inner(ds, &covariate_matrix(ds), resp.matrix(), prev, opts)
}

fn split_largest(ds: &ChoiceDataset, prev: &LccmParams, choice: ChoiceStart, rng: &mut ChaCha8Rng) -> LccmParams {
    let k = prev.class_count();
    let mut share = vec![0.0; k];
    for person in ds.persons() {
        let p = membership_probs(&prev.gamma, &membership_covariates(person));
        share.iter_mut().zip(&p).for_each(|(s, v)| *s += v);
    }
    let big = (0..k).max_by(|&a, &b| share[a].total_cmp(&share[b]).then(b.cmp(&a))).unwrap_or(0);
    // Unnormalized rows including the reference class.
    let width = 1 + ds.cont_count() + ds.bin_count();
    let mut rows: Vec<Vec<f64>> = prev.gamma.clone();
    rows.push(vec![0.0; width]);
    let mut new_row = rows[big].clone();
    for v in new_row.iter_mut().skip(1) {
        let z: f64 = StandardNormal.sample(rng);
        *v += SPLIT_PERTURBATION * z;
    }
    rows[big][0] -= std::f64::consts::LN_2;
    new_row[0] -= std::f64::consts::LN_2;
    // The new class is last and becomes the reference.
    let gamma = rows
        .iter()
        .map(|r| r.iter().zip(&new_row).map(|(a, b)| a - b).collect())
        .collect();
    let mut betas = prev.betas.clone();
    betas.push(choice.draw(ds.attr_count(), rng));
    LccmParams { gamma, betas }
}

pub fn initial_lccm_params(ds: &ChoiceDataset, k: usize, init: &LccmInit, rng: &mut ChaCha8Rng) -> Result<LccmParams> {
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one class".into()));
    }
    let width = 1 + ds.cont_count() + ds.bin_count();
    let params = match init {
        LccmInit::Start { membership, choice } => {
            let gamma = (0..k - 1)
                .map(|_| match membership {
                    ChoiceStart::Zero => vec![0.0; width],
                    ChoiceStart::Random => (0..width)
                        .map(|_| rng.random_range(-RANDOM_START_SCALE..RANDOM_START_SCALE))
                        .collect(),
                })
                .collect();
            let betas = (0..k).map(|_| choice.draw(ds.attr_count(), rng)).collect();
            LccmParams { gamma, betas }
        }
        LccmInit::Incremental(prev, choice) => {
            if prev.class_count() + 1 != k {
                return Err(Error::InvalidArgument(format!(
                    "incremental start needs a {}-class fit, got {}",
                    k - 1,
                    prev.class_count()
                )));
            }
            check_dataset(ds, prev)?;
            split_largest(ds, prev, *choice, rng)
        }
        LccmInit::Given(p) => {
            if p.class_count() != k {
                return Err(Error::InvalidArgument("given parameters do not match K".into()));
            }
            (**p).clone()
        }
    };
    params.validate()?;
    check_dataset(ds, &params)?;
    Ok(params)
}

pub(crate) fn fit_lccm_with_rng(
    ds: &ChoiceDataset,
    k: usize,
    init: &LccmInit,
    rng: &mut ChaCha8Rng,
    opts: &EmOptions,
) -> Result<FitResult> {
    let start = Instant::now();
    let z = covariate_matrix(ds);
    let mut params = initial_lccm_params(ds, k, init, rng)?;
    let choice_ll = choice_loglik_matrix(ds, &params.betas)?;
    let (mut resp, mut ll) = estep_inner(ds, &params.gamma, &choice_ll)?;
    let mut trace = vec![ll];
    let mut elapsed = vec![start.elapsed().as_secs_f64()];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let next = mstep_inner(ds, &z, &resp, &params, &opts.mstep)?;
        let next_choice = choice_loglik_matrix(ds, &next.betas)?;
        let (next_resp, next_ll) = estep_inner(ds, &next.gamma, &next_choice)?;
        iterations += 1;
        trace.push(next_ll);
        elapsed.push(start.elapsed().as_secs_f64());
        debug!("LCCM EM iteration {iterations}: LL {next_ll:.10}");
        let change = relative_change(ll, next_ll);
        params = next;
        resp = next_resp;
        ll = next_ll;
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(FitResult {
        params: ModelParams::Lccm(params),
        joint_ll: None,
        marginal_ll: ll,
        iterations,
        converged,
        ll_trace: trace,
        elapsed,
        restarts: vec![RestartRecord {
            label: init.label(),
            stream: 0,
            marginal_ll: Some(ll),
            joint_ll: None,
            iterations,
            converged,
            error: None,
        }],
        ll_variance: 0.0,
    })
}

/// One EM run of the logit-membership model. Deterministic in `seed`.
pub fn fit_lccm(ds: &ChoiceDataset, k: usize, init: &LccmInit, seed: u64, opts: &EmOptions) -> Result<FitResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fit_lccm_with_rng(ds, k, init, &mut rng, opts)
}
