//! Quick invariant sweep over every module, used by the CLI's `selftest`.

use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cdm::{cdm_forward, structural_loss, CdmConfig};
use crate::ctiem::{ctiem_forward, DEFAULT_STEPS};
use crate::dfb::{dfb_decompose, dfb_reconstruct, DfbConfig, DirectionalMasks};
use crate::error::Result;
use crate::losses::{mahalanobis_corr, response_kl_loss, total_loss, LossTerms, LossWeights};
use crate::pyramid::{lp_analyze, lp_synthesize, LpConfig};
use crate::sampler::{sample_regions, SamplerConfig};
use crate::tensor::FeatureMap;
use crate::tiem::{denoise, tiem_forward};
use crate::weights::{default_weights, DefaultDims};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn random_map(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> FeatureMap {
    FeatureMap::from_fn(c, h, w, |_, _, _| rng.gen_range(-1.0..1.0)).expect("finite values")
}

fn bounded(name: &'static str, value: Result<f64>, limit: f64) -> Check {
    match value {
        Ok(v) => Check {
            name,
            passed: v.is_finite() && v < limit,
            detail: format!("{v:.3e} (limit {limit:.0e})"),
        },
        Err(e) => Check {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

/// Runs every check with fixed seeds; the result is deterministic.
pub fn run() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7e57);
    let x = random_map(3, 32, 32, &mut rng);
    let gray = random_map(1, 32, 32, &mut rng);
    let weights = default_weights(&DefaultDims::for_channels(3));

    let lp = (|| {
        let cfg = LpConfig::default();
        let (low, high) = lp_analyze(&x, &cfg)?;
        Ok(f64::from(lp_synthesize(&low, &high, &cfg)?.max_abs_diff(&x)?))
    })();

    let partition = [1, 3, 4].iter().try_fold(0.0f64, |m, &l| {
            Ok(m.max(DirectionalMasks::new(32, 32, &DfbConfig::new(l))?.partition_error()))
        });

    let dfb = (|| {
        let bands = dfb_decompose(&gray, &DfbConfig::new(3))?;
        Ok(f64::from(dfb_reconstruct(&bands)?.max_abs_diff(&gray)?))
    })();

    let cdm = (|| {
        let f = cdm_forward(&x, &CdmConfig::default())?;
        structural_loss(&f, &f)
    })();

    let tiem = (|| {
        let out = tiem_forward(&x, 128, 0.9, &weights)?;
        let c: f64 = out.counting.counts.iter().sum();
        let d: f64 = out.counting.denoised.iter().sum();
        Ok((c - 1.0).abs().max((d - 1.0).abs()))
    })();

    let clip = (|| {
        let got = denoise(&[0.7, 0.1, 0.1, 0.1], 0.5)?;
        let want = [0.4375, 0.1875, 0.1875, 0.1875];
        Ok(got.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    })();

    let ctiem = (|| {
        let (state, _) = ctiem_forward(&x, 8, 0.9, &DEFAULT_STEPS, &weights)?;
        Ok(state
            .counts
            .iter()
            .chain(&state.denoised)
            .map(|c| (c.sum() - 1.0).abs())
            .fold(0.0, f64::max))
    })();

    let sampler = (|| {
        let cfg = SamplerConfig {
            seed: 7,
            ..SamplerConfig::default()
        };
        let a = sample_regions(&gray, &cfg)?;
        let b = sample_regions(&gray, &cfg)?;
        Ok(if a == b && a.len() == cfg.m_samples { 0.0 } else { 1.0 })
    })();

    let losses = (|| {
        let p = FeatureMap::new(2, 1, 2, vec![0.25, 0.5, 0.75, 0.5])?;
        let kl = response_kl_loss(&p, &p)?;
        let ones = LossTerms {
            segmentation: 1.0,
            structural: 1.0,
            statistical: 1.0,
            response: 1.0,
            adversarial: 1.0,
        };
        let total = (total_loss(&ones, &LossWeights::default()) - 5.79).abs();
        let corr = mahalanobis_corr(&array![[0.6, 0.8]], &Array1::zeros(2), &Array2::eye(2))?;
        Ok(kl.abs().max(total).max((corr[0] - 1.0).abs()))
    })();

    vec![
        bounded("pyramid reconstruction", lp, 1e-6),
        bounded("directional partition of unity", partition, 1e-6),
        bounded("directional reconstruction", dfb, 1e-5),
        bounded("contourlet self loss", cdm, 1e-12),
        bounded("histogram mass", tiem, 1e-9),
        bounded("clipping example", clip, 1e-15),
        bounded("co-occurrence mass", ctiem, 1e-9),
        bounded("sampler determinism", sampler, 0.5),
        bounded("loss identities", losses, 1e-6),
    ]
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
