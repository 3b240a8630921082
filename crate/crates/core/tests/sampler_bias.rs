//! Importance selection on a split-variance map when no anchor straddles the split.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use texturekit::sampler::{sample_regions, Origin, SamplerConfig};
use texturekit::FeatureMap;

#[test]
fn compact_anchors_favor_the_noisy_half() {
    let (mut right, mut total) = (0usize, 0usize);
    for t in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(t);
        let map = FeatureMap::from_fn(1, 64, 64, |_, _, x| if x < 32 { 0.0 } else { rng.gen_range(0.0..1.0) }).unwrap();
        let cfg = SamplerConfig {
            m_samples: 16,
            overgen_factor: 4.0,
            importance_fraction: 1.0,
            anchor_scales: [2.0, 4.0, 8.0],
            seed: t,
            ..SamplerConfig::default()
        };
        for s in sample_regions(&map, &cfg).unwrap() {
            assert_eq!(s.origin, Origin::Importance);
            total += 1;
            right += usize::from(s.center.1 >= 32);
        }
    }
    let frac = right as f64 / total as f64;
    assert!(frac > 0.9, "right-half fraction {frac}");
}
