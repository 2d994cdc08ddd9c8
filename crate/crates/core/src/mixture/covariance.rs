use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Ridge added to every variance by the M-step.
pub const VARIANCE_RIDGE: f64 = 1e-6;
/// Largest ridge tried when a covariance fails to factorize.
pub const MAX_RIDGE: f64 = 1e-2;
/// Classes with less total responsibility than this cannot be updated.
pub const MIN_CLASS_WEIGHT: f64 = 1e-8;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CovarianceStructure {
    Full,
    Tied,
    Diagonal,
    Spherical,
}

impl CovarianceStructure {
    pub const ALL: [CovarianceStructure; 4] = [
        CovarianceStructure::Full,
        CovarianceStructure::Tied,
        CovarianceStructure::Diagonal,
        CovarianceStructure::Spherical,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            CovarianceStructure::Full => "full",
            CovarianceStructure::Tied => "tied",
            CovarianceStructure::Diagonal => "diagonal",
            CovarianceStructure::Spherical => "spherical",
        }
    }

    /// Free covariance parameters for `k` classes of dimension `d`.
    pub fn param_count(self, k: usize, d: usize) -> usize {
        match self {
            CovarianceStructure::Full => k * d * (d + 1) / 2,
            CovarianceStructure::Tied => d * (d + 1) / 2,
            CovarianceStructure::Diagonal => k * d,
            CovarianceStructure::Spherical if d == 0 => 0,
            CovarianceStructure::Spherical => k,
        }
    }
}

impl fmt::Display for CovarianceStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for CovarianceStructure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(CovarianceStructure::Full),
            "tied" => Ok(CovarianceStructure::Tied),
            "diagonal" | "diag" => Ok(CovarianceStructure::Diagonal),
            "spherical" => Ok(CovarianceStructure::Spherical),
            other => Err(Error::Parse(format!("unknown covariance structure `{other}`"))),
        }
    }
}

/// Covariance storage in the shape each structure actually has.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariances {
    Full(Vec<DMatrix<f64>>),
    Tied(DMatrix<f64>),
    /// Per-class variances.
    Diagonal(Vec<Vec<f64>>),
    /// Per-class single variance.
    Spherical(Vec<f64>),
}

impl Covariances {
    pub fn structure(&self) -> CovarianceStructure {
        match self {
            Covariances::Full(_) => CovarianceStructure::Full,
            Covariances::Tied(_) => CovarianceStructure::Tied,
            Covariances::Diagonal(_) => CovarianceStructure::Diagonal,
            Covariances::Spherical(_) => CovarianceStructure::Spherical,
        }
    }

    /// Identity covariances (variance 1) for `k` classes in dimension `d`.
    pub fn identity(structure: CovarianceStructure, k: usize, d: usize) -> Self {
        match structure {
            CovarianceStructure::Full => Covariances::Full(vec![DMatrix::identity(d, d); k]),
            CovarianceStructure::Tied => Covariances::Tied(DMatrix::identity(d, d)),
            CovarianceStructure::Diagonal => Covariances::Diagonal(vec![vec![1.0; d]; k]),
            CovarianceStructure::Spherical => Covariances::Spherical(vec![1.0; k]),
        }
    }

    /// The `d × d` matrix class `k` actually uses.
    pub fn realized(&self, k: usize, d: usize) -> DMatrix<f64> {
        match self {
            Covariances::Full(m) => m[k].clone(),
            Covariances::Tied(m) => m.clone(),
            Covariances::Diagonal(v) => DMatrix::from_diagonal(&DVector::from_column_slice(&v[k])),
            Covariances::Spherical(v) => DMatrix::identity(d, d) * v[k],
        }
    }

    /// Number of classes stored, `None` for the shared matrix.
    pub fn class_count(&self) -> Option<usize> {
        match self {
            Covariances::Full(m) => Some(m.len()),
            Covariances::Tied(_) => None,
            Covariances::Diagonal(v) => Some(v.len()),
            Covariances::Spherical(v) => Some(v.len()),
        }
    }

    /// Copy of class `k` appended as a new last class.
    pub(crate) fn with_copy_of(&self, k: usize) -> Self {
        let mut out = self.clone();
        match &mut out {
            Covariances::Full(m) => m.push(m[k].clone()),
            Covariances::Tied(_) => {}
            Covariances::Diagonal(v) => v.push(v[k].clone()),
            Covariances::Spherical(v) => v.push(v[k]),
        }
        out
    }

    /// Classes reordered so that new class `i` is old class `order[i]`.
    pub(crate) fn permuted(&self, order: &[usize]) -> Self {
        match self {
            Covariances::Full(m) => Covariances::Full(order.iter().map(|&i| m[i].clone()).collect()),
            Covariances::Tied(m) => Covariances::Tied(m.clone()),
            Covariances::Diagonal(v) => {
                Covariances::Diagonal(order.iter().map(|&i| v[i].clone()).collect())
            }
            Covariances::Spherical(v) => Covariances::Spherical(order.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// Cholesky factor of a covariance matrix with its log-determinant, ready
/// for repeated density evaluation.
#[derive(Debug, Clone)]
pub struct GaussianFactor {
    chol: Option<Cholesky<f64, Dyn>>,
    log_det: f64,
    dim: usize,
}

impl GaussianFactor {
    /// Factorizes `sigma`, adding a ridge of 1e-6, 1e-5, … up to 1e-2 to the
    /// diagonal if plain factorization fails. `class` only labels the error.
    pub fn new(sigma: &DMatrix<f64>, class: usize) -> Result<Self> {
        let dim = sigma.nrows();
        if dim == 0 {
            return Ok(Self {
                chol: None,
                log_det: 0.0,
                dim,
            });
        }
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::Factorization { class, ridge: 0.0 });
        }
        let mut ridge = 0.0;
        loop {
            let m = if ridge > 0.0 {
                sigma + DMatrix::identity(dim, dim) * ridge
            } else {
                sigma.clone()
            };
            if let Some(chol) = Cholesky::new(m) {
                let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                if log_det.is_finite() {
                    if ridge > 0.0 {
                        log::debug!("class {class}: covariance needed ridge {ridge:e}");
                    }
                    return Ok(Self {
                        chol: Some(chol),
                        log_det,
                        dim,
                    });
                }
            }
            ridge = if ridge == 0.0 { VARIANCE_RIDGE } else { ridge * 10.0 };
            if ridge > MAX_RIDGE * 1.000_001 {
                return Err(Error::Factorization {
                    class,
                    ridge: MAX_RIDGE,
                });
            }
        }
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `−½[d ln 2π + ln|Σ| + (s−μ)ᵀΣ⁻¹(s−μ)]`.
    pub fn logpdf(&self, s: &[f64], mu: &[f64]) -> f64 {
        let Some(chol) = &self.chol else {
            return 0.0;
        };
        let diff = DVector::from_iterator(self.dim, s.iter().zip(mu).map(|(a, b)| a - b));
        let l = chol.l_dirty();
        // Forward substitution on the lower factor only.
        let mut z = diff;
        for i in 0..self.dim {
            let mut acc = z[i];
            for j in 0..i {
                acc -= l[(i, j)] * z[j];
            }
            z[i] = acc / l[(i, i)];
        }
        -0.5 * (self.dim as f64 * LN_2PI + self.log_det + z.norm_squared())
    }
}

/// Multivariate normal log-density of `s` under `N(mu, sigma)`.
pub fn gaussian_logpdf(s: &[f64], mu: &[f64], sigma: &DMatrix<f64>) -> Result<f64> {
    if s.len() != mu.len() || sigma.nrows() != s.len() || sigma.ncols() != s.len() {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: s {}, mu {}, sigma {}x{}",
            s.len(),
            mu.len(),
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    Ok(GaussianFactor::new(sigma, 0)?.logpdf(s, mu))
}

/// Per-class weighted scatter `Σ_n r_nk (s_n − μ_k)(s_n − μ_k)ᵀ / N_k`.
fn class_scatter(s_c: &DMatrix<f64>, resp: &DMatrix<f64>, mu: &[f64], k: usize, n_k: f64) -> DMatrix<f64> {
    let d = s_c.ncols();
    let mut out = DMatrix::zeros(d, d);
    let mut diff = vec![0.0; d];
    for n in 0..s_c.nrows() {
        let r = resp[(n, k)];
        if r == 0.0 {
            continue;
        }
        for (i, slot) in diff.iter_mut().enumerate() {
            *slot = s_c[(n, i)] - mu[i];
        }
        for a in 0..d {
            let ra = r * diff[a];
            for b in a..d {
                out[(a, b)] += ra * diff[b];
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = out[(a, b)] / n_k;
            out[(a, b)] = v;
            out[(b, a)] = v;
        }
    }
    out
}

/// Structure-constrained covariance update given responsibilities and the
/// updated class means (`mu_c[k]` has length `D_c`). Adds the variance ridge.
pub fn covariance_mstep(
    s_c: &DMatrix<f64>,
    resp: &DMatrix<f64>,
    mu_c: &[Vec<f64>],
    structure: CovarianceStructure,
) -> Result<Covariances> {
    let (n, d) = s_c.shape();
    let k_count = resp.ncols();
    if resp.nrows() != n || mu_c.len() != k_count || mu_c.iter().any(|m| m.len() != d) {
        return Err(Error::InvalidArgument("covariance update: dimension mismatch".into()));
    }
    let sizes: Vec<f64> = (0..k_count).map(|k| resp.column(k).iter().sum()).collect();
    if let Some((k, &size)) = sizes.iter().enumerate().find(|(_, s)| !(**s > MIN_CLASS_WEIGHT)) {
        return Err(Error::EmptyClass { class: k, size });
    }
    let ridge = DMatrix::<f64>::identity(d, d) * VARIANCE_RIDGE;
    let full: Vec<DMatrix<f64>> = (0..k_count)
        .map(|k| class_scatter(s_c, resp, &mu_c[k], k, sizes[k]))
        .collect();
    Ok(match structure {
        CovarianceStructure::Full => Covariances::Full(full.into_iter().map(|m| m + &ridge).collect()),
        CovarianceStructure::Tied => {
            let total: f64 = sizes.iter().sum();
            let mut pooled = DMatrix::zeros(d, d);
            for (m, size) in full.iter().zip(&sizes) {
                pooled += m * *size;
            }
            Covariances::Tied(pooled / total + ridge)
        }
        CovarianceStructure::Diagonal => Covariances::Diagonal(
            full.iter()
                .map(|m| m.diagonal().iter().map(|v| v + VARIANCE_RIDGE).collect())
                .collect(),
        ),
        CovarianceStructure::Spherical => Covariances::Spherical(
            full.iter()
                .map(|m| {
                    if d == 0 {
                        1.0
                    } else {
                        m.diagonal().sum() / d as f64 + VARIANCE_RIDGE
                    }
                })
                .collect(),
        ),
    })
}
