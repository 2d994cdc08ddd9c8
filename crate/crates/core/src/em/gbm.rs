use std::time::Instant;

use log::debug;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{
    characteristic_blocks, choice_loglik_matrix, relative_change, ChoiceStart, EmOptions, FitResult,
    GbmInit, GbmLccmParams, ModelParams, RestartRecord, Responsibilities,
};
use crate::data::ChoiceDataset;
use crate::error::{Error, Result};
use crate::mixture::{
    bernoulli_mstep, class_sizes, covariance_mstep, floor_mixing, kmeans_init, log_sum_exp,
    mixing_mstep, softmax_in_place, weighted_means, CovarianceStructure, GbmMembershipParams,
    MU_D_MAX, MU_D_MIN,
};
use crate::mnl::{fit_weighted_mnl, MnlParams};
use crate::optim::BfgsOptions;
use crate::par;

/// A class whose total responsibility falls below this fraction of `N`
/// fails the restart.
pub const EMPTY_CLASS_FRACTION: f64 = 1e-6;
/// Weight moved off the hard assignment in random starts.
const RANDOM_START_SMOOTHING: f64 = 0.05;
/// Scale of the perturbation applied to a split-off class, in standard
/// deviations of the class being split.
const SPLIT_PERTURBATION: f64 = 0.1;

fn check_dataset(ds: &ChoiceDataset, params: &GbmLccmParams) -> Result<()> {
    let m = &params.membership;
    if m.cont_dim() != ds.cont_count() || m.bin_dim() != ds.bin_count() {
        return Err(Error::SchemaMismatch(format!(
            "parameters have {}+{} characteristics, data has {}+{}",
            m.cont_dim(),
            m.bin_dim(),
            ds.cont_count(),
            ds.bin_count()
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

/// Per-person log weights `ln π_k + ln f(S_n | k) + Σ_t ln P(y | β_k)`
/// turned into responsibilities; also returns the joint log-likelihood.
fn estep_inner(
    ds: &ChoiceDataset,
    params: &GbmLccmParams,
    choice_ll: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, f64)> {
    let prepared = params.membership.prepare()?;
    let k = params.class_count();
    let rows = par::map_indices(ds.n_persons(), |n| {
        let person = ds.person(n);
        let mut row = prepared.log_joint(&person.s_cont, &person.s_bin);
        for (c, v) in row.iter_mut().enumerate() {
            *v += choice_ll[(n, c)];
        }
        let lse = softmax_in_place(&mut row);
        (row, lse)
    });
    let mut ll = 0.0;
    let mut resp = DMatrix::zeros(ds.n_persons(), k);
    for (n, (row, lse)) in rows.into_iter().enumerate() {
        if !lse.is_finite() {
            return Err(Error::NonFinite(format!("joint log-likelihood of person {n}")));
        }
        ll += lse;
        for (c, v) in row.into_iter().enumerate() {
            resp[(n, c)] = v;
        }
    }
    Ok((resp, ll))
}

/// Posterior class probabilities given characteristics and choices.
pub fn estep_gbm(ds: &ChoiceDataset, params: &GbmLccmParams) -> Result<Responsibilities> {
    check_dataset(ds, params)?;
    let choice_ll = choice_loglik_matrix(ds, &params.betas)?;
    Ok(Responsibilities(estep_inner(ds, params, &choice_ll)?.0))
}

/// Log-likelihood of characteristics and choices together.
pub fn joint_loglik(ds: &ChoiceDataset, params: &GbmLccmParams) -> Result<f64> {
    check_dataset(ds, params)?;
    let choice_ll = choice_loglik_matrix(ds, &params.betas)?;
    Ok(estep_inner(ds, params, &choice_ll)?.1)
}

/// `Σ_n ln Σ_k P(k | S_n) Π_t P(y_nt | β_k)`, with the class posterior
/// conditioned on the characteristics only.
pub fn marginal_loglik(ds: &ChoiceDataset, params: &GbmLccmParams) -> Result<f64> {
    check_dataset(ds, params)?;
    let choice_ll = choice_loglik_matrix(ds, &params.betas)?;
    marginal_from(ds, params, &choice_ll)
}

fn marginal_from(ds: &ChoiceDataset, params: &GbmLccmParams, choice_ll: &DMatrix<f64>) -> Result<f64> {
    let prepared = params.membership.prepare()?;
    let terms = par::map_indices(ds.n_persons(), |n| {
        let person = ds.person(n);
        let mut post = prepared.log_joint(&person.s_cont, &person.s_bin);
        let norm = log_sum_exp(&post);
        for (c, v) in post.iter_mut().enumerate() {
            *v += choice_ll[(n, c)] - norm;
        }
        log_sum_exp(&post)
    });
    let ll: f64 = terms.iter().sum();
    if !ll.is_finite() {
        return Err(Error::NonFinite("marginal log-likelihood".into()));
    }
    Ok(ll)
}

/// Closed-form membership update from responsibilities.
pub(crate) fn membership_mstep(
    s_c: &DMatrix<f64>,
    s_d: &DMatrix<f64>,
    resp: &DMatrix<f64>,
    structure: CovarianceStructure,
) -> Result<GbmMembershipParams> {
    let n = resp.nrows() as f64;
    for (k, size) in class_sizes(resp).into_iter().enumerate() {
        if !(size >= EMPTY_CLASS_FRACTION * n) {
            return Err(Error::EmptyClass { class: k, size });
        }
    }
    let mu_c = weighted_means(s_c, resp);
    let sigma_c = covariance_mstep(s_c, resp, &mu_c, structure)?;
    Ok(GbmMembershipParams {
        pi: mixing_mstep(resp),
        mu_c,
        sigma_c,
        mu_d: bernoulli_mstep(s_d, resp),
    })
}

fn mstep_inner(
    ds: &ChoiceDataset,
    blocks: &(DMatrix<f64>, DMatrix<f64>),
    resp: &DMatrix<f64>,
    structure: CovarianceStructure,
    prev: &[MnlParams],
    opts: &BfgsOptions,
) -> Result<GbmLccmParams> {
    let membership = membership_mstep(&blocks.0, &blocks.1, resp, structure)?;
    let betas = prev
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let w: Vec<f64> = resp.column(k).iter().copied().collect();
            fit_weighted_mnl(ds, &w, &b.beta, opts).map(|f| f.params)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GbmLccmParams { membership, betas })
}

/// Maximizes the expected complete-data log-likelihood: closed forms for
/// the membership parameters, a warm-started weighted logit per class for
/// the coefficients.
pub fn mstep_gbm(
    ds: &ChoiceDataset,
    resp: &Responsibilities,
    structure: CovarianceStructure,
    prev: &GbmLccmParams,
    opts: &BfgsOptions,
) -> Result<GbmLccmParams> {
    check_dataset(ds, prev)?;
    if resp.matrix().nrows() != ds.n_persons() || resp.class_count() != prev.class_count() {
        return Err(Error::InvalidArgument("responsibilities do not match data and classes".into()));
    }
    mstep_inner(ds, &characteristic_blocks(ds), resp.matrix(), structure, &prev.betas, opts)
}

/// Random start: `K` distinct persons as centers, everyone softly assigned
/// to the nearest one.
fn random_assignment(features: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    let n = features.len();
    if k > n {
        return Err(Error::InvalidArgument(format!("{k} classes for {n} persons")));
    }
    let centers = rand::seq::index::sample(rng, n, k).into_vec();
    let eps = RANDOM_START_SMOOTHING;
    let mut resp = DMatrix::from_element(n, k, eps / k as f64);
    for (i, f) in features.iter().enumerate() {
        let mut best = (0, f64::INFINITY);
        for (c, &center) in centers.iter().enumerate() {
            let d: f64 = f.iter().zip(&features[center]).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (c, d);
            }
        }
        resp[(i, best.0)] += 1.0 - eps;
    }
    Ok(resp)
}

fn split_largest(
    prev: &GbmLccmParams,
    choice: ChoiceStart,
    p: usize,
    rng: &mut ChaCha8Rng,
) -> GbmLccmParams {
    let m = &prev.membership;
    let big = (0..m.class_count())
        .max_by(|&a, &b| m.pi[a].total_cmp(&m.pi[b]).then(b.cmp(&a)))
        .unwrap_or(0);
    let dc = m.cont_dim();
    let sigma = m.sigma_c.realized(big, dc);
    let mu_new: Vec<f64> = (0..dc)
        .map(|d| {
            let z: f64 = StandardNormal.sample(rng);
            m.mu_c[big][d] + SPLIT_PERTURBATION * sigma[(d, d)].sqrt() * z
        })
        .collect();
    let mu_d_new: Vec<f64> = m.mu_d[big]
        .iter()
        .map(|v| (v + rng.random_range(-0.05..0.05)).clamp(MU_D_MIN, MU_D_MAX))
        .collect();
    let mut pi = m.pi.clone();
    pi[big] /= 2.0;
    pi.push(pi[big]);
    let mut mu_c = m.mu_c.clone();
    mu_c.push(mu_new);
    let mut mu_d = m.mu_d.clone();
    mu_d.push(mu_d_new);
    let mut betas = prev.betas.clone();
    betas.push(choice.draw(p, rng));
    GbmLccmParams {
        membership: GbmMembershipParams {
            pi: floor_mixing(&pi),
            mu_c,
            sigma_c: m.sigma_c.with_copy_of(big),
            mu_d,
        },
        betas,
    }
}

/// Starting parameters for one EM run.
pub fn initial_gbm_params(
    ds: &ChoiceDataset,
    k: usize,
    structure: CovarianceStructure,
    init: &GbmInit,
    rng: &mut ChaCha8Rng,
) -> Result<GbmLccmParams> {
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one class".into()));
    }
    let p = ds.attr_count();
    let from_resp = |resp: DMatrix<f64>, choice: ChoiceStart, rng: &mut ChaCha8Rng| -> Result<GbmLccmParams> {
        let (s_c, s_d) = characteristic_blocks(ds);
        let membership = membership_mstep(&s_c, &s_d, &resp, structure)?;
        let betas = (0..k).map(|_| choice.draw(p, rng)).collect();
        Ok(GbmLccmParams { membership, betas })
    };
    let params = match init {
        GbmInit::Random(choice) => {
            let resp = random_assignment(&ds.membership_features(), k, rng)?;
            from_resp(resp, *choice, rng)?
        }
        GbmInit::KMeans(choice) => {
            let assign = kmeans_init(&ds.membership_features(), k, rng.random())?;
            from_resp(Responsibilities::one_hot(&assign, k).0, *choice, rng)?
        }
        GbmInit::Incremental(prev, choice) => {
            if prev.class_count() + 1 != k || prev.membership.structure() != structure {
                return Err(Error::InvalidArgument(format!(
                    "incremental start needs a {} {} fit, got {} {}",
                    k - 1,
                    structure,
                    prev.class_count(),
                    prev.membership.structure()
                )));
            }
            split_largest(prev, *choice, p, rng)
        }
        GbmInit::Given(params) => {
            if params.class_count() != k || params.membership.structure() != structure {
                return Err(Error::InvalidArgument("given parameters do not match K and structure".into()));
            }
            (**params).clone()
        }
    };
    check_dataset(ds, &params)?;
    params.validate()?;
    Ok(params)
}

pub(crate) fn fit_gbm_with_rng(
    ds: &ChoiceDataset,
    k: usize,
    structure: CovarianceStructure,
    init: &GbmInit,
    rng: &mut ChaCha8Rng,
    opts: &EmOptions,
) -> Result<FitResult> {
    let start = Instant::now();
    let blocks = characteristic_blocks(ds);
    let mut params = initial_gbm_params(ds, k, structure, init, rng)?;
    let mut choice_ll = choice_loglik_matrix(ds, &params.betas)?;
    let (mut resp, mut ll) = estep_inner(ds, &params, &choice_ll)?;
    let mut trace = vec![ll];
    let mut elapsed = vec![start.elapsed().as_secs_f64()];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let next = mstep_inner(ds, &blocks, &resp, structure, &params.betas, &opts.mstep)?;
        let next_choice = choice_loglik_matrix(ds, &next.betas)?;
        let (next_resp, next_ll) = estep_inner(ds, &next, &next_choice)?;
        iterations += 1;
        trace.push(next_ll);
        elapsed.push(start.elapsed().as_secs_f64());
        debug!("EM iteration {iterations}: joint LL {next_ll:.10}");
        let change = relative_change(ll, next_ll);
        params = next;
        choice_ll = next_choice;
        resp = next_resp;
        ll = next_ll;
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    let marginal_ll = marginal_from(ds, &params, &choice_ll)?;
    let record = RestartRecord {
        label: init.label(),
        stream: 0,
        marginal_ll: Some(marginal_ll),
        joint_ll: Some(ll),
        iterations,
        converged,
        error: None,
    };
    Ok(FitResult {
        params: ModelParams::Gbm(params),
        joint_ll: Some(ll),
        marginal_ll,
        iterations,
        converged,
        ll_trace: trace,
        elapsed,
        restarts: vec![record],
        ll_variance: 0.0,
    })
}

/// One EM run from the given start. Deterministic in `seed`.
pub fn fit_gbm_lccm(
    ds: &ChoiceDataset,
    k: usize,
    structure: CovarianceStructure,
    init: &GbmInit,
    seed: u64,
    opts: &EmOptions,
) -> Result<FitResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fit_gbm_with_rng(ds, k, structure, init, &mut rng, opts)
}
