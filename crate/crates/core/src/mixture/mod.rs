//! Class membership as a Gaussian-Bernoulli mixture: densities, the four
//! covariance structures, closed-form updates and k-means seeding.

mod covariance;
mod kmeans;

pub use covariance::{
    covariance_mstep, gaussian_logpdf, CovarianceStructure, Covariances, GaussianFactor,
    MAX_RIDGE, MIN_CLASS_WEIGHT, VARIANCE_RIDGE,
};
pub use kmeans::{kmeans_init, KMEANS_MAX_ITER};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kv::KvDoc;

pub const PI_FLOOR: f64 = 1e-10;
pub const MU_D_MIN: f64 = 1e-6;
pub const MU_D_MAX: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GbmMembershipParams {
    pub pi: Vec<f64>,
    /// `K × D_c` class means of the continuous characteristics.
    pub mu_c: Vec<Vec<f64>>,
    pub sigma_c: Covariances,
    /// `K × D_d` class probabilities of each binary characteristic being 1.
    pub mu_d: Vec<Vec<f64>>,
}

impl GbmMembershipParams {
    pub fn class_count(&self) -> usize {
        self.pi.len()
    }

    pub fn cont_dim(&self) -> usize {
        self.mu_c.first().map_or(0, Vec::len)
    }

    pub fn bin_dim(&self) -> usize {
        self.mu_d.first().map_or(0, Vec::len)
    }

    pub fn structure(&self) -> CovarianceStructure {
        self.sigma_c.structure()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.class_count();
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if k == 0 {
            return bad("no classes".into());
        }
        if self.mu_c.len() != k || self.mu_d.len() != k {
            return bad(format!(
                "{k} mixing weights but {} continuous / {} binary mean rows",
                self.mu_c.len(),
                self.mu_d.len()
            ));
        }
        let (dc, dd) = (self.cont_dim(), self.bin_dim());
        if self.mu_c.iter().any(|m| m.len() != dc) || self.mu_d.iter().any(|m| m.len() != dd) {
            return bad("ragged class means".into());
        }
        let total: f64 = self.pi.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return bad(format!("mixing weights sum to {total}"));
        }
        if let Some(p) = self.pi.iter().find(|p| !(**p >= PI_FLOOR * (1.0 - 1e-9))) {
            return bad(format!("mixing weight {p} below floor {PI_FLOOR:e}"));
        }
        if self.mu_c.iter().flatten().any(|v| !v.is_finite()) {
            return bad("non-finite continuous mean".into());
        }
        if let Some(m) = self.mu_d.iter().flatten().find(|m| !(**m >= MU_D_MIN && **m <= MU_D_MAX)) {
            return bad(format!("binary mean {m} outside [{MU_D_MIN:e}, 1 - {MU_D_MIN:e}]"));
        }
        if let Some(stored) = self.sigma_c.class_count() {
            if stored != k {
                return bad(format!("{stored} covariance blocks for {k} classes"));
            }
        }
        for c in 0..k {
            let m = self.sigma_c.realized(c, dc);
            if m.nrows() != dc || m.ncols() != dc {
                return bad(format!("class {c} covariance is {}x{}, expected {dc}x{dc}", m.nrows(), m.ncols()));
            }
            if m.iter().any(|v| !v.is_finite()) || m != m.transpose() {
                return bad(format!("class {c} covariance not finite and symmetric"));
            }
            if dc > 0 && m.symmetric_eigen().eigenvalues.min() < -1e-10 {
                return bad(format!("class {c} covariance not positive semi-definite"));
            }
        }
        Ok(())
    }

    /// Factorized form for repeated evaluation.
    pub fn prepare(&self) -> Result<PreparedMembership> {
        let dc = self.cont_dim();
        let factors = (0..self.class_count())
            .map(|k| GaussianFactor::new(&self.sigma_c.realized(k, dc), k))
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedMembership {
            log_pi: self.pi.iter().map(|p| p.ln()).collect(),
            mu_c: self.mu_c.clone(),
            factors,
            log_mu: self.mu_d.iter().map(|m| m.iter().map(|v| v.ln()).collect()).collect(),
            log_1m: self.mu_d.iter().map(|m| m.iter().map(|v| (-v).ln_1p()).collect()).collect(),
        })
    }

    /// Classes reordered so that new class `i` is old class `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            pi: order.iter().map(|&i| self.pi[i]).collect(),
            mu_c: order.iter().map(|&i| self.mu_c[i].clone()).collect(),
            sigma_c: self.sigma_c.permuted(order),
            mu_d: order.iter().map(|&i| self.mu_d[i].clone()).collect(),
        }
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        let (k, dc) = (self.class_count(), self.cont_dim());
        doc.push("classes", k);
        doc.push("cont_dim", dc);
        doc.push("bin_dim", self.bin_dim());
        doc.push("structure", self.structure());
        doc.push_floats("pi", &self.pi);
        for c in 0..k {
            doc.push_floats(format!("mu_c.{c}"), &self.mu_c[c]);
        }
        for c in 0..k {
            doc.push_floats(format!("mu_d.{c}"), &self.mu_d[c]);
        }
        match &self.sigma_c {
            Covariances::Full(m) => {
                for (c, m) in m.iter().enumerate() {
                    doc.push_floats(format!("sigma.{c}"), m.transpose().as_slice());
                }
            }
            Covariances::Tied(m) => doc.push_floats("sigma", m.transpose().as_slice()),
            Covariances::Diagonal(v) => {
                for (c, v) in v.iter().enumerate() {
                    doc.push_floats(format!("sigma.{c}"), v);
                }
            }
            Covariances::Spherical(v) => doc.push_floats("sigma", v),
        }
        doc
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let k: usize = doc.parse_value("classes")?;
        let dc: usize = doc.parse_value("cont_dim")?;
        let dd: usize = doc.parse_value("bin_dim")?;
        let structure: CovarianceStructure = doc.parse_value("structure")?;
        let sized = |key: String, len: usize| -> Result<Vec<f64>> {
            let v = doc.floats(&key)?;
            if v.len() != len {
                return Err(Error::Parse(format!("`{key}` has {} values, expected {len}", v.len())));
            }
            Ok(v)
        };
        let matrix = |key: String| -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_row_slice(dc, dc, &sized(key, dc * dc)?))
        };
        let sigma_c = match structure {
            CovarianceStructure::Full => {
                Covariances::Full((0..k).map(|c| matrix(format!("sigma.{c}"))).collect::<Result<_>>()?)
            }
            CovarianceStructure::Tied => Covariances::Tied(matrix("sigma".into())?),
            CovarianceStructure::Diagonal => Covariances::Diagonal(
                (0..k).map(|c| sized(format!("sigma.{c}"), dc)).collect::<Result<_>>()?,
            ),
            CovarianceStructure::Spherical => Covariances::Spherical(sized("sigma".into(), k)?),
        };
        let params = Self {
            pi: sized("pi".into(), k)?,
            mu_c: (0..k).map(|c| sized(format!("mu_c.{c}"), dc)).collect::<Result<_>>()?,
            sigma_c,
            mu_d: (0..k).map(|c| sized(format!("mu_d.{c}"), dd)).collect::<Result<_>>()?,
        };
        params.validate()?;
        Ok(params)
    }
}

/// Membership parameters with covariance factors and log-means cached.
#[derive(Debug, Clone)]
pub struct PreparedMembership {
    log_pi: Vec<f64>,
    mu_c: Vec<Vec<f64>>,
    factors: Vec<GaussianFactor>,
    log_mu: Vec<Vec<f64>>,
    log_1m: Vec<Vec<f64>>,
}

impl PreparedMembership {
    pub fn class_count(&self) -> usize {
        self.log_pi.len()
    }

    /// `ln π_k + ln N(s_c | μ_ck, Σ_k) + ln Bern(s_d | μ_dk)` into `out`.
    pub fn log_joint_into(&self, s_c: &[f64], s_d: &[bool], out: &mut [f64]) {
        for (k, slot) in out.iter_mut().enumerate() {
            let gauss = self.factors[k].logpdf(s_c, &self.mu_c[k]);
            let bern: f64 = s_d
                .iter()
                .enumerate()
                .map(|(i, &b)| if b { self.log_mu[k][i] } else { self.log_1m[k][i] })
                .sum();
            *slot = self.log_pi[k] + gauss + bern;
        }
    }

    pub fn log_joint(&self, s_c: &[f64], s_d: &[bool]) -> Vec<f64> {
        let mut out = vec![0.0; self.class_count()];
        self.log_joint_into(s_c, s_d, &mut out);
        out
    }
}

/// `Σ_i [s_i ln μ_i + (1 − s_i) ln(1 − μ_i)]`.
pub fn bernoulli_logpmf(s_d: &[bool], mu_d: &[f64]) -> f64 {
    s_d.iter()
        .zip(mu_d)
        .map(|(&b, &m)| if b { m.ln() } else { (-m).ln_1p() })
        .sum()
}

pub fn membership_log_joint(s_c: &[f64], s_d: &[bool], params: &GbmMembershipParams) -> Result<Vec<f64>> {
    if s_c.len() != params.cont_dim() || s_d.len() != params.bin_dim() {
        return Err(Error::InvalidArgument(format!(
            "characteristics {}+{} do not match parameters {}+{}",
            s_c.len(),
            s_d.len(),
            params.cont_dim(),
            params.bin_dim()
        )));
    }
    Ok(params.prepare()?.log_joint(s_c, s_d))
}

/// Class posterior given characteristics only.
pub fn membership_posterior(s_c: &[f64], s_d: &[bool], params: &GbmMembershipParams) -> Result<Vec<f64>> {
    let mut v = membership_log_joint(s_c, s_d, params)?;
    softmax_in_place(&mut v);
    Ok(v)
}

/// Replaces log-weights by normalized probabilities; returns their
/// log-sum-exp.
pub fn softmax_in_place(v: &mut [f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        v.fill(f64::NAN);
        return max;
    }
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
    max + sum.ln()
}

/// `ln Σ_k exp(v_k)` without overflow.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Mixing weights floored at `PI_FLOOR`; the others absorb the difference
/// so the total stays 1.
pub fn floor_mixing(pi: &[f64]) -> Vec<f64> {
    let total: f64 = pi.iter().sum();
    let mut out: Vec<f64> = pi.iter().map(|p| p / total).collect();
    let low: Vec<bool> = out.iter().map(|&p| p < PI_FLOOR).collect();
    let n_low = low.iter().filter(|&&l| l).count();
    if n_low > 0 {
        let free: f64 = out.iter().zip(&low).filter(|(_, l)| !**l).map(|(p, _)| p).sum();
        let scale = (1.0 - n_low as f64 * PI_FLOOR) / free;
        for (p, l) in out.iter_mut().zip(&low) {
            *p = if *l { PI_FLOOR } else { *p * scale };
        }
    }
    out
}

/// Column sums of the responsibilities, `N_k`.
pub fn class_sizes(resp: &DMatrix<f64>) -> Vec<f64> {
    (0..resp.ncols()).map(|k| resp.column(k).iter().sum()).collect()
}

/// `π_k = N_k / N`, floored.
pub fn mixing_mstep(resp: &DMatrix<f64>) -> Vec<f64> {
    let sizes = class_sizes(resp);
    let n = resp.nrows() as f64;
    floor_mixing(&sizes.iter().map(|s| s / n).collect::<Vec<_>>())
}

/// Responsibility-weighted means of the columns of `x` (`N × D`), one row
/// per class.
pub fn weighted_means(x: &DMatrix<f64>, resp: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let sizes = class_sizes(resp);
    (0..resp.ncols())
        .map(|k| {
            (0..x.ncols())
                .map(|d| {
                    let mut acc = 0.0;
                    for n in 0..x.nrows() {
                        acc += resp[(n, k)] * x[(n, d)];
                    }
                    acc / sizes[k]
                })
                .collect()
        })
        .collect()
}

/// Bernoulli means clamped into `[MU_D_MIN, MU_D_MAX]`.
pub fn bernoulli_mstep(s_d: &DMatrix<f64>, resp: &DMatrix<f64>) -> Vec<Vec<f64>> {
    weighted_means(s_d, resp)
        .into_iter()
        .map(|row| row.into_iter().map(|m| m.clamp(MU_D_MIN, MU_D_MAX)).collect())
        .collect()
}
