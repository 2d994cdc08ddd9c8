//! Small random instances shared by the EM unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GbmLccmParams, LccmParams};
use crate::data::{ChoiceDataset, ChoiceSituation, PersonRecord};
use crate::mixture::{floor_mixing, CovarianceStructure, Covariances, GbmMembershipParams};
use crate::mnl::MnlParams;

/// `n` persons with 1–3 situations over 3 alternatives and `p` attributes.
pub fn small_dataset(n: usize, dc: usize, dd: usize, p: usize, seed: u64) -> ChoiceDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let persons = (0..n)
        .map(|i| PersonRecord {
            id: format!("p{i:03}"),
            s_cont: (0..dc).map(|_| rng.random_range(-2.0..2.0)).collect(),
            s_bin: (0..dd).map(|_| rng.random_bool(0.4)).collect(),
            situations: (0..rng.random_range(1..4))
                .map(|_| {
                    let attrs = (0..3 * p).map(|_| rng.random_range(-1.5..1.5)).collect();
                    ChoiceSituation::full(attrs, 3, rng.random_range(0..3)).unwrap()
                })
                .collect(),
        })
        .collect();
    ChoiceDataset::new(
        persons,
        vec!["a".into(), "b".into(), "c".into()],
        (0..p).map(|i| format!("x{i}")).collect(),
        (0..dc).map(|i| format!("c{i}")).collect(),
        (0..dd).map(|i| format!("d{i}")).collect(),
    )
    .unwrap()
}

pub fn small_membership(k: usize, dc: usize, dd: usize, structure: CovarianceStructure, rng: &mut ChaCha8Rng) -> GbmMembershipParams {
    let mut spd = || {
        let a = nalgebra::DMatrix::from_fn(dc, dc, |_, _| rng.random_range(-0.8..0.8));
        &a * a.transpose() + nalgebra::DMatrix::identity(dc, dc) * 0.3
    };
    let sigma_c = match structure {
        CovarianceStructure::Full => Covariances::Full((0..k).map(|_| spd()).collect()),
        CovarianceStructure::Tied => Covariances::Tied(spd()),
        CovarianceStructure::Diagonal => {
            Covariances::Diagonal((0..k).map(|_| (0..dc).map(|_| rng.random_range(0.3..2.0)).collect()).collect())
        }
        CovarianceStructure::Spherical => Covariances::Spherical((0..k).map(|_| rng.random_range(0.3..2.0)).collect()),
    };
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    GbmMembershipParams {
        pi: floor_mixing(&raw),
        mu_c: (0..k).map(|_| (0..dc).map(|_| rng.random_range(-1.5..1.5)).collect()).collect(),
        sigma_c,
        mu_d: (0..k).map(|_| (0..dd).map(|_| rng.random_range(0.1..0.9)).collect()).collect(),
    }
}

pub fn small_params(ds: &ChoiceDataset, k: usize, structure: CovarianceStructure, seed: u64) -> GbmLccmParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let membership = small_membership(k, ds.cont_count(), ds.bin_count(), structure, &mut rng);
    let betas = (0..k)
        .map(|_| MnlParams {
            beta: (0..ds.attr_count()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        })
        .collect();
    GbmLccmParams { membership, betas }
}

pub fn small_lccm(ds: &ChoiceDataset, k: usize, seed: u64) -> LccmParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1cc);
    let width = 1 + ds.cont_count() + ds.bin_count();
    LccmParams {
        gamma: (0..k - 1).map(|_| (0..width).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
        betas: (0..k)
            .map(|_| MnlParams {
                beta: (0..ds.attr_count()).map(|_| rng.random_range(-1.0..1.0)).collect(),
            })
            .collect(),
    }
}
