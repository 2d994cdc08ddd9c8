//! Multinomial logit: choice probabilities, the weighted panel
//! log-likelihood with its analytic gradient, and weighted ML fitting.

use log::warn;
use nalgebra::DMatrix;

use crate::data::{ChoiceDataset, ChoiceSituation, PersonRecord};
use crate::error::{Error, Result};
use crate::optim::{BfgsOptions, OptimError};
use crate::par;

/// Coefficients at or beyond this magnitude suggest complete separation.
pub const SEPARATION_WARN: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct MnlParams {
    pub beta: Vec<f64>,
}

impl MnlParams {
    pub fn new(beta: Vec<f64>) -> Result<Self> {
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidParams(format!("non-finite coefficient in {beta:?}")));
        }
        Ok(Self { beta })
    }

    pub fn zeros(p: usize) -> Self {
        Self { beta: vec![0.0; p] }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Writes log-probabilities into `out` (−∞ for unavailable alternatives).
/// Returns `false` if some utility is not finite.
fn log_probs_into(sit: &ChoiceSituation, beta: &[f64], out: &mut [f64]) -> bool {
    let mut max = f64::NEG_INFINITY;
    for (j, slot) in out.iter_mut().enumerate() {
        if sit.is_available(j) {
            let v = dot(sit.attrs_of(j), beta);
            if !v.is_finite() {
                return false;
            }
            *slot = v;
            max = max.max(v);
        } else {
            *slot = f64::NEG_INFINITY;
        }
    }
    let mut sum = 0.0;
    for v in out.iter() {
        if *v > f64::NEG_INFINITY {
            sum += (v - max).exp();
        }
    }
    let lse = max + sum.ln();
    for v in out.iter_mut() {
        *v -= lse;
    }
    true
}

/// Log choice probabilities over the alternatives of one situation.
/// Unavailable alternatives get `−∞`.
pub fn choice_log_probs(sit: &ChoiceSituation, beta: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; sit.alt_count()];
    if !log_probs_into(sit, beta, &mut out) {
        out.fill(f64::NAN);
    }
    out
}

/// `Σ_t log P(chosen_t)` for one person.
pub fn person_choice_loglik(person: &PersonRecord, beta: &[f64]) -> f64 {
    let mut buf = vec![0.0; person.situations.first().map_or(0, |s| s.alt_count())];
    person
        .situations
        .iter()
        .map(|sit| {
            if log_probs_into(sit, beta, &mut buf) {
                buf[sit.chosen()]
            } else {
                f64::NAN
            }
        })
        .sum()
}

/// Weighted panel log-likelihood `Σ_n w_n Σ_t log P(chosen)` and its
/// gradient `Σ_n w_n Σ_t (x_chosen − Σ_j P_j x_j)`.
pub fn weighted_panel_loglik(
    ds: &ChoiceDataset,
    beta: &[f64],
    weights: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let p = ds.attr_count();
    if weights.len() != ds.n_persons() {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {} persons",
            weights.len(),
            ds.n_persons()
        )));
    }
    if beta.len() != p {
        return Err(Error::InvalidArgument(format!(
            "{} coefficients for {p} attributes",
            beta.len()
        )));
    }
    let j_count = ds.alt_count();
    let parts = par::map_chunks(ds.n_persons(), |range| {
        let mut ll = 0.0;
        let mut grad = vec![0.0; p];
        let mut lp = vec![0.0; j_count];
        for n in range {
            let w = weights[n];
            if w == 0.0 {
                continue;
            }
            for sit in &ds.person(n).situations {
                if !log_probs_into(sit, beta, &mut lp) {
                    return None;
                }
                ll += w * lp[sit.chosen()];
                for (g, x) in grad.iter_mut().zip(sit.attrs_of(sit.chosen())) {
                    *g += w * x;
                }
                for (j, &l) in lp.iter().enumerate() {
                    if l > f64::NEG_INFINITY {
                        let wp = w * l.exp();
                        for (g, x) in grad.iter_mut().zip(sit.attrs_of(j)) {
                            *g -= wp * x;
                        }
                    }
                }
            }
        }
        Some((ll, grad))
    });
    let mut ll = 0.0;
    let mut grad = vec![0.0; p];
    for part in parts {
        let (l, g) = part.ok_or_else(|| {
            Error::NonFinite(format!("utility not finite at beta = {beta:?}"))
        })?;
        ll += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((ll, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MnlFit {
    pub params: MnlParams,
    /// Weighted log-likelihood at `params`.
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Infinity norm of the gradient of the per-unit-weight objective.
    pub grad_norm: f64,
}

/// Maximize the weighted panel log-likelihood from `beta0`.
///
/// The optimizer sees the log-likelihood divided by the total weight so the
/// gradient tolerance does not depend on sample size. A line search that
/// stalls at the precision limit returns its last accepted iterate with
/// `converged == false`.
pub fn fit_weighted_mnl(
    ds: &ChoiceDataset,
    weights: &[f64],
    beta0: &[f64],
    opts: &BfgsOptions,
) -> Result<MnlFit> {
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("at least one weight must be positive".into()));
    }
    // Validates lengths up front; also the value the result must not undercut.
    weighted_panel_loglik(ds, beta0, weights)?;
    let objective = |b: &[f64]| match weighted_panel_loglik(ds, b, weights) {
        Ok((ll, g)) => (ll / total, g.into_iter().map(|v| v / total).collect()),
        Err(_) => (f64::NAN, vec![f64::NAN; b.len()]),
    };
    let (x, iterations, converged, grad_norm) = match opts.maximize(objective, beta0) {
        Ok(r) => (r.x_star, r.iterations, r.converged, r.grad_norm),
        Err(OptimError::LineSearch { x, iterations, .. }) => {
            (x, iterations, false, f64::NAN)
        }
        Err(e) => return Err(e.into()),
    };
    let (loglik, grad) = weighted_panel_loglik(ds, &x, weights)?;
    let grad_norm = if grad_norm.is_nan() {
        grad.iter().fold(0.0_f64, |m, g| m.max((g / total).abs()))
    } else {
        grad_norm
    };
    if let Some(b) = x.iter().find(|b| b.abs() > SEPARATION_WARN) {
        warn!("coefficient {b:.3} exceeds {SEPARATION_WARN}: possible complete separation");
    }
    Ok(MnlFit {
        params: MnlParams { beta: x },
        loglik,
        iterations,
        converged,
        grad_norm,
    })
}

/// Unit-weight MNL from `β = 0`. Returns the coefficients and the final LL.
pub fn fit_mnl(ds: &ChoiceDataset) -> Result<(MnlParams, f64)> {
    fit_mnl_with(ds, &BfgsOptions::default()).map(|f| (f.params, f.loglik))
}

pub fn fit_mnl_with(ds: &ChoiceDataset, opts: &BfgsOptions) -> Result<MnlFit> {
    let dim = null_space_dim(ds);
    if dim > 0 {
        warn!("attribute matrix has {dim} unidentified direction(s); fix a constant to zero");
    }
    let fit = fit_weighted_mnl(ds, &vec![1.0; ds.n_persons()], &vec![0.0; ds.attr_count()], opts)?;
    if !fit.converged {
        warn!(
            "MNL stopped after {} iterations with gradient {:e}",
            fit.iterations, fit.grad_norm
        );
    }
    Ok(fit)
}

/// Number of coefficient directions that leave every utility difference
/// unchanged: the null space of the within-situation demeaned attributes.
pub fn null_space_dim(ds: &ChoiceDataset) -> usize {
    let p = ds.attr_count();
    if p == 0 {
        return 0;
    }
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut centered = vec![0.0; p];
    for person in ds.persons() {
        for sit in &person.situations {
            let avail: Vec<usize> = (0..sit.alt_count()).filter(|&j| sit.is_available(j)).collect();
            let mut mean = vec![0.0; p];
            for &j in &avail {
                mean.iter_mut().zip(sit.attrs_of(j)).for_each(|(m, x)| *m += x);
            }
            mean.iter_mut().for_each(|m| *m /= avail.len() as f64);
            for &j in &avail {
                for ((c, x), m) in centered.iter_mut().zip(sit.attrs_of(j)).zip(&mean) {
                    *c = x - m;
                }
                for a in 0..p {
                    for b in 0..p {
                        xtx[(a, b)] += centered[a] * centered[b];
                    }
                }
            }
        }
    }
    let eig = xtx.symmetric_eigen().eigenvalues;
    let top = eig.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let tol = 1e-10 * top.max(f64::MIN_POSITIVE);
    eig.iter().filter(|v| v.abs() <= tol).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixtures::binary_logit;
    use crate::optim::check_gradient;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sit(attrs: Vec<f64>, avail: Vec<bool>, chosen: usize) -> ChoiceSituation {
        ChoiceSituation::new(attrs, avail, chosen).unwrap()
    }

    fn random_dataset(rng: &mut ChaCha8Rng, n: usize, j: usize, p: usize) -> ChoiceDataset {
        let persons = (0..n)
            .map(|i| {
                let t = rng.random_range(1..4);
                PersonRecord {
                    id: i.to_string(),
                    s_cont: vec![],
                    s_bin: vec![],
                    situations: (0..t)
                        .map(|_| {
                            let attrs = (0..j * p).map(|_| rng.random_range(-2.0..2.0)).collect();
                            let mut avail: Vec<bool> = (0..j).map(|_| rng.random_bool(0.8)).collect();
                            avail[0] = true;
                            avail[1] = true;
                            let chosen = loop {
                                let c = rng.random_range(0..j);
                                if avail[c] {
                                    break c;
                                }
                            };
                            sit(attrs, avail, chosen)
                        })
                        .collect(),
                }
            })
            .collect();
        ChoiceDataset::new(
            persons,
            (0..j).map(|a| a.to_string()).collect(),
            (0..p).map(|a| format!("x{a}")).collect(),
            vec![],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn equal_utilities_split_evenly() {
        let lp = choice_log_probs(&sit(vec![1.0, 1.0], vec![true; 2], 0), &[0.7]);
        assert!((lp[0] - 0.5f64.ln()).abs() < 1e-15);
        assert!((lp[1] - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn closed_form_binary_logit() {
        let lp = choice_log_probs(&sit(vec![0.0, 3f64.ln()], vec![true; 2], 0), &[1.0]);
        assert!((lp[0].exp() - 0.25).abs() < 1e-15);
        assert!((lp[1].exp() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn unavailable_alternative_is_masked() {
        let three = choice_log_probs(&sit(vec![0.0, 5.0, 3f64.ln()], vec![true, false, true], 0), &[1.0]);
        assert_eq!(three[1], f64::NEG_INFINITY);
        assert!((three[0].exp() - 0.25).abs() < 1e-15);
        assert!((three[2].exp() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn large_utilities_do_not_overflow() {
        let lp = choice_log_probs(&sit(vec![700.0, 699.0, -700.0], vec![true; 3], 0), &[1.0]);
        let total: f64 = lp.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(lp.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_weights_annihilate() {
        let ds = random_dataset(&mut ChaCha8Rng::seed_from_u64(1), 6, 3, 2);
        let (ll, g) = weighted_panel_loglik(&ds, &[0.4, -0.3], &[0.0; 6]).unwrap();
        assert_eq!(ll, 0.0);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn uniform_probabilities_at_zero() {
        let xs: Vec<(f64, f64, usize)> = (0..10).map(|i| (i as f64, 1.0, i % 2)).collect();
        let ds = binary_logit(&xs, 5);
        let (ll, _) = weighted_panel_loglik(&ds, &[0.0], &[1.0; 5]).unwrap();
        assert!((ll - 10.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let p = rng.random_range(1..5);
            let j = rng.random_range(2..5);
            let ds = random_dataset(&mut rng, 5, j, p);
            let w: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
            let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
            let err = check_gradient(|b| weighted_panel_loglik(&ds, b, &w).unwrap(), &beta, 1e-5).unwrap();
            assert!(err < 1e-6, "gradient error {err}");
        }
    }

    #[test]
    fn weighted_fit_matches_grid_search() {
        // Hand-enumerable: 6 persons with one situation each.
        let xs = [
            (0.0, 1.0, 1),
            (0.0, 2.0, 1),
            (0.0, 0.5, 0),
            (0.0, -1.0, 0),
            (0.0, 1.5, 0),
            (0.0, -0.5, 1),
        ];
        let ds = binary_logit(&xs, 6);
        let w = [1.0, 0.3, 0.8, 0.5, 0.9, 0.2];
        let fit = fit_weighted_mnl(&ds, &w, &[0.0], &BfgsOptions::default()).unwrap();
        let ll = |b: f64| -> f64 {
            xs.iter()
                .zip(&w)
                .map(|(&(a, c, y), w)| {
                    let (ua, uc) = (a * b, c * b);
                    let chosen = if y == 0 { ua } else { uc };
                    w * (chosen - (ua.exp() + uc.exp()).ln())
                })
                .sum()
        };
        let (mut best, mut arg) = (f64::NEG_INFINITY, 0.0);
        for i in 0..=200_000 {
            let b = -10.0 + i as f64 * 1e-4;
            let v = ll(b);
            if v > best {
                best = v;
                arg = b;
            }
        }
        assert!((fit.params.beta[0] - arg).abs() < 1e-4, "{} vs {arg}", fit.params.beta[0]);
        assert!(fit.loglik >= best - 1e-12);
    }

    #[test]
    fn unit_weights_are_plain_mnl() {
        let ds = random_dataset(&mut ChaCha8Rng::seed_from_u64(3), 40, 3, 2);
        let (plain, ll) = fit_mnl(&ds).unwrap();
        let weighted = fit_weighted_mnl(&ds, &[1.0; 40], &[0.0, 0.0], &BfgsOptions::default()).unwrap();
        assert_eq!(plain, weighted.params);
        assert_eq!(ll, weighted.loglik);
        let (ll0, _) = weighted_panel_loglik(&ds, &[0.0, 0.0], &[1.0; 40]).unwrap();
        assert!(ll >= ll0);
    }

    #[test]
    fn separation_drives_constant_up() {
        // Alternative 1 always chosen, with its own constant.
        let xs: Vec<(f64, f64, usize)> = (0..8).map(|_| (0.0, 1.0, 1)).collect();
        let ds = binary_logit(&xs, 8);
        let opts = BfgsOptions {
            max_iter: 30,
            grad_tol: 0.0,
            ..BfgsOptions::default()
        };
        let fit = fit_weighted_mnl(&ds, &[1.0; 8], &[0.0], &opts).unwrap();
        // Stops once the gradient underflows or the cap is hit; either way
        // the estimate is large and finite.
        assert!(fit.iterations <= 30);
        assert!(fit.params.beta[0] > 10.0 && fit.params.beta[0].is_finite(), "{fit:?}");
    }

    #[test]
    fn recovers_simulated_coefficients() {
        let truth = [-1.0, 0.5, 0.8];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let persons = (0..5000)
            .map(|n| {
                let attrs: Vec<f64> = (0..3)
                    .flat_map(|j| {
                        let asc = if j == 1 { 1.0 } else { 0.0 };
                        [rng.random_range(0.0..3.0), rng.random_range(-1.0..1.0), asc]
                    })
                    .collect();
                let u: Vec<f64> = (0..3).map(|j| dot(&attrs[j * 3..j * 3 + 3], &truth)).collect();
                let z: f64 = u.iter().map(|v| v.exp()).sum();
                let mut draw = rng.random_range(0.0..1.0) * z;
                let mut chosen = 2;
                for (j, v) in u.iter().enumerate() {
                    draw -= v.exp();
                    if draw < 0.0 {
                        chosen = j;
                        break;
                    }
                }
                PersonRecord {
                    id: n.to_string(),
                    s_cont: vec![],
                    s_bin: vec![],
                    situations: vec![ChoiceSituation::full(attrs, 3, chosen).unwrap()],
                }
            })
            .collect();
        let ds = ChoiceDataset::new(
            persons,
            vec!["a".into(), "b".into(), "c".into()],
            vec!["time".into(), "cost".into(), "asc_b".into()],
            vec![],
            vec![],
        )
        .unwrap();
        let (fit, _) = fit_mnl(&ds).unwrap();
        for (b, t) in fit.beta.iter().zip(truth) {
            assert!((b - t).abs() < 0.1, "{:?}", fit.beta);
        }
    }

    #[test]
    fn duplicated_column_is_unidentified() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ds = random_dataset(&mut rng, 10, 3, 2);
        assert_eq!(null_space_dim(&ds), 0);
        let persons = ds
            .persons()
            .iter()
            .map(|p| PersonRecord {
                situations: p
                    .situations
                    .iter()
                    .map(|s| {
                        let attrs = (0..3).flat_map(|j| [s.attrs_of(j)[0], s.attrs_of(j)[0]]).collect();
                        ChoiceSituation::new(attrs, s.available().to_vec(), s.chosen()).unwrap()
                    })
                    .collect(),
                ..p.clone()
            })
            .collect();
        let dup = ChoiceDataset::new(persons, ds.alt_ids().to_vec(), ds.attr_names().to_vec(), vec![], vec![]).unwrap();
        assert_eq!(null_space_dim(&dup), 1);
    }

    proptest! {
        #[test]
        fn probabilities_normalize(
            attrs in prop::collection::vec(-50.0..50.0f64, 12),
            beta in prop::collection::vec(-10.0..10.0f64, 3),
            mask in prop::collection::vec(any::<bool>(), 4),
        ) {
            let mut avail = mask;
            avail[0] = true;
            avail[3] = true;
            let lp = choice_log_probs(&sit(attrs, avail.clone(), 0), &beta);
            let total: f64 = lp.iter().zip(&avail).filter(|(_, a)| **a).map(|(v, _)| v.exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn common_shift_leaves_probabilities(
            attrs in prop::collection::vec(-5.0..5.0f64, 6),
            shift in -100.0..100.0f64,
        ) {
            // An attribute that is constant across alternatives adds the same
            // amount to every utility.
            let base: Vec<f64> = (0..3).flat_map(|j| [attrs[2 * j], attrs[2 * j + 1], 0.0]).collect();
            let moved: Vec<f64> = (0..3).flat_map(|j| [attrs[2 * j], attrs[2 * j + 1], shift]).collect();
            let beta = [0.3, -0.7, 1.0];
            let a = choice_log_probs(&sit(base, vec![true; 3], 0), &beta);
            let b = choice_log_probs(&sit(moved, vec![true; 3], 0), &beta);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn loglik_is_linear_in_weights(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ds = random_dataset(&mut rng, 8, 3, 2);
            let w1: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..1.0)).collect();
            let w2: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..1.0)).collect();
            let w12: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
            let beta = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let (l1, g1) = weighted_panel_loglik(&ds, &beta, &w1).unwrap();
            let (l2, g2) = weighted_panel_loglik(&ds, &beta, &w2).unwrap();
            let (l12, g12) = weighted_panel_loglik(&ds, &beta, &w12).unwrap();
            prop_assert!((l12 - l1 - l2).abs() < 1e-10);
            for i in 0..2 {
                prop_assert!((g12[i] - g1[i] - g2[i]).abs() < 1e-10);
            }
        }
    }
}
