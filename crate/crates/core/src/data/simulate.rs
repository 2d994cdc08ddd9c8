use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{ChoiceDataset, ChoiceSituation, PersonRecord};
use crate::em::GbmLccmParams;
use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::mnl::choice_log_probs;

/// Distribution of one attribute column, drawn independently for every
/// alternative of every situation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttributeColumn {
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, sd: f64 },
    /// 1 for alternative `alt`, 0 elsewhere.
    AltConstant { alt: usize },
}

impl fmt::Display for AttributeColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttributeColumn::Uniform { low, high } => write!(f, "uniform:{low:?}:{high:?}"),
            AttributeColumn::Normal { mean, sd } => write!(f, "normal:{mean:?}:{sd:?}"),
            AttributeColumn::AltConstant { alt } => write!(f, "asc:{alt}"),
        }
    }
}

impl FromStr for AttributeColumn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("attribute distribution `{s}`"));
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| parts.get(i).and_then(|v| v.parse::<f64>().ok()).ok_or_else(bad);
        let col = match (parts[0], parts.len()) {
            ("uniform", 3) => AttributeColumn::Uniform { low: num(1)?, high: num(2)? },
            ("normal", 3) => AttributeColumn::Normal { mean: num(1)?, sd: num(2)? },
            ("asc", 2) => AttributeColumn::AltConstant { alt: parts[1].parse().map_err(|_| bad())? },
            _ => return Err(bad()),
        };
        Ok(col)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeSampler {
    pub alt_count: usize,
    pub columns: Vec<AttributeColumn>,
}

impl AttributeSampler {
    pub fn validate(&self) -> Result<()> {
        if self.alt_count < 2 {
            return Err(Error::InvalidArgument("need at least 2 alternatives".into()));
        }
        for c in &self.columns {
            let ok = match *c {
                AttributeColumn::Uniform { low, high } => low.is_finite() && high.is_finite() && low < high,
                AttributeColumn::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
                AttributeColumn::AltConstant { alt } => alt < self.alt_count,
            };
            if !ok {
                return Err(Error::InvalidArgument(format!("invalid attribute distribution {c}")));
            }
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.push("alternatives", self.alt_count);
        doc.push_list("columns", &self.columns.iter().map(ToString::to_string).collect::<Vec<_>>());
        doc
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let sampler = Self {
            alt_count: doc.parse_value("alternatives")?,
            columns: doc.list("columns")?.iter().map(|c| c.parse()).collect::<Result<_>>()?,
        };
        sampler.validate()?;
        Ok(sampler)
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let p = self.columns.len();
        let mut attrs = vec![0.0; self.alt_count * p];
        for j in 0..self.alt_count {
            for (c, col) in self.columns.iter().enumerate() {
                attrs[j * p + c] = match *col {
                    AttributeColumn::Uniform { low, high } => rng.random_range(low..high),
                    AttributeColumn::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
                    AttributeColumn::AltConstant { alt } => f64::from(u8::from(alt == j)),
                };
            }
        }
        attrs
    }
}

/// Synthetic panel together with the class each person was drawn from.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub dataset: ChoiceDataset,
    pub classes: Vec<usize>,
}

fn draw_index(probs: impl Iterator<Item = f64>, rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        if p > 0.0 {
            last = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last
}

/// Draws `n` persons with `t` situations each from the mixture model.
/// Deterministic in `seed`.
pub fn simulate_dataset(
    params: &GbmLccmParams,
    n: usize,
    t: usize,
    sampler: &AttributeSampler,
    seed: u64,
) -> Result<Simulated> {
    params.validate()?;
    sampler.validate()?;
    if n == 0 || t == 0 {
        return Err(Error::InvalidArgument("need at least one person and one situation".into()));
    }
    if params.betas[0].beta.len() != sampler.columns.len() {
        return Err(Error::InvalidArgument(format!(
            "{} coefficients for {} attribute columns",
            params.betas[0].beta.len(),
            sampler.columns.len()
        )));
    }
    let m = &params.membership;
    let dc = m.cont_dim();
    let factors = (0..m.class_count())
        .map(|k| {
            m.sigma_c
                .realized(k, dc)
                .cholesky()
                .map(|c| c.l())
                .ok_or(Error::Factorization { class: k, ridge: 0.0 })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut persons = Vec::with_capacity(n);
    let mut classes = Vec::with_capacity(n);
    for i in 0..n {
        let k = draw_index(m.pi.iter().copied(), &mut rng);
        let z = DVector::from_fn(dc, |_, _| rng.sample::<f64, _>(StandardNormal));
        let s_cont: Vec<f64> = (&factors[k] * z).iter().zip(&m.mu_c[k]).map(|(a, b)| a + b).collect();
        let s_bin: Vec<bool> = m.mu_d[k].iter().map(|&p| rng.random::<f64>() < p).collect();
        let situations = (0..t)
            .map(|_| {
                let attrs = sampler.draw(&mut rng);
                let probe = ChoiceSituation::full(attrs.clone(), sampler.alt_count, 0)?;
                let lp = choice_log_probs(&probe, &params.betas[k].beta);
                if lp.iter().any(|v| v.is_nan()) {
                    return Err(Error::NonFinite("simulated utility".into()));
                }
                let chosen = draw_index(lp.iter().map(|v| v.exp()), &mut rng);
                ChoiceSituation::full(attrs, sampler.alt_count, chosen)
            })
            .collect::<Result<Vec<_>>>()?;
        persons.push(PersonRecord { id: format!("{i}"), s_cont, s_bin, situations });
        classes.push(k);
    }
    let dataset = ChoiceDataset::new(
        persons,
        (0..sampler.alt_count).map(|j| format!("alt{j}")).collect(),
        (0..sampler.columns.len()).map(|c| format!("x{c}")).collect(),
        (0..dc).map(|d| format!("s{d}")).collect(),
        (0..m.bin_dim()).map(|d| format!("b{d}")).collect(),
    )?;
    Ok(Simulated { dataset, classes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::{CovarianceStructure, Covariances, GbmMembershipParams};
    use crate::mnl::MnlParams;
    use nalgebra::DMatrix;

    fn one_class(beta: Vec<f64>) -> GbmLccmParams {
        GbmLccmParams {
            membership: GbmMembershipParams {
                pi: vec![1.0],
                mu_c: vec![vec![0.0]],
                sigma_c: Covariances::identity(CovarianceStructure::Full, 1, 1),
                mu_d: vec![vec![0.5]],
            },
            betas: vec![MnlParams { beta }],
        }
    }

    fn two_classes() -> GbmLccmParams {
        GbmLccmParams {
            membership: GbmMembershipParams {
                pi: vec![0.3, 0.7],
                mu_c: vec![vec![-2.0, 0.0], vec![2.0, 1.0]],
                sigma_c: Covariances::Tied(DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5])),
                mu_d: vec![vec![0.9], vec![0.2]],
            },
            betas: vec![MnlParams { beta: vec![1.0, -1.0] }, MnlParams { beta: vec![-1.0, 2.0] }],
        }
    }

    fn sampler(p: usize) -> AttributeSampler {
        AttributeSampler { alt_count: 2, columns: vec![AttributeColumn::Uniform { low: -1.0, high: 1.0 }; p] }
    }

    #[test]
    fn zero_coefficients_give_even_shares() {
        let sim = simulate_dataset(&one_class(vec![0.0]), 5000, 2, &sampler(1), 3).unwrap();
        let first = sim.dataset.persons().iter().flat_map(|p| &p.situations).filter(|s| s.chosen() == 0).count();
        let share = first as f64 / 10000.0;
        assert!((share - 0.5).abs() < 0.02, "{share}");
    }

    #[test]
    fn class_shares_follow_mixing() {
        let sim = simulate_dataset(&two_classes(), 5000, 1, &sampler(2), 4).unwrap();
        let share = sim.classes.iter().filter(|&&k| k == 0).count() as f64 / 5000.0;
        assert!((share - 0.3).abs() < 0.02, "{share}");
        let mean: f64 = sim
            .dataset
            .persons()
            .iter()
            .zip(&sim.classes)
            .filter(|(_, &k)| k == 1)
            .map(|(p, _)| p.s_cont[0])
            .sum::<f64>()
            / sim.classes.iter().filter(|&&k| k == 1).count() as f64;
        assert!((mean - 2.0).abs() < 0.1);
    }

    #[test]
    fn deterministic() {
        let a = simulate_dataset(&two_classes(), 50, 3, &sampler(2), 8).unwrap();
        let b = simulate_dataset(&two_classes(), 50, 3, &sampler(2), 8).unwrap();
        assert_eq!(a.dataset, b.dataset);
        let c = simulate_dataset(&two_classes(), 50, 3, &sampler(2), 9).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn rejects_bad_requests() {
        assert!(simulate_dataset(&two_classes(), 0, 3, &sampler(2), 8).is_err());
        assert!(simulate_dataset(&two_classes(), 5, 3, &sampler(3), 8).is_err());
    }

    #[test]
    fn sampler_text_round_trip() {
        let s = AttributeSampler {
            alt_count: 3,
            columns: vec![
                AttributeColumn::AltConstant { alt: 1 },
                AttributeColumn::Normal { mean: 0.1, sd: 2.0 },
                AttributeColumn::Uniform { low: -0.5, high: 3.0 },
            ],
        };
        assert_eq!(AttributeSampler::from_kv(&s.to_kv()).unwrap(), s);
        assert!("gamma:1".parse::<AttributeColumn>().is_err());
    }
}
