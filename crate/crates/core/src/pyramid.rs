//! Laplacian pyramid analysis and synthesis.
//!
//! One analysis stage filters with the analysis kernel, keeps every `p`-th
//! sample per axis, and stores the residual between the input and the
//! prediction rebuilt from the decimated low-pass. Because the high-pass is
//! that residual, synthesis is exact for any pair of kernels.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

/// Burt–Adelson 5-tap binomial kernel.
pub const BURT_ADELSON: [f64; 5] = [0.0625, 0.25, 0.375, 0.25, 0.0625];

#[derive(Debug, Clone, PartialEq)]
pub struct LpConfig {
    /// Separable low-pass analysis kernel (odd length, unit DC gain).
    pub analysis: Vec<f64>,
    /// Separable low-pass synthesis kernel (odd length, unit DC gain).
    pub synthesis: Vec<f64>,
    /// Decimation factor per axis.
    pub factor: usize,
}

impl Default for LpConfig {
    fn default() -> Self {
        Self {
            analysis: BURT_ADELSON.to_vec(),
            synthesis: BURT_ADELSON.to_vec(),
            factor: 2,
        }
    }
}

impl LpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.factor < 2 {
            return Err(Error::InvalidConfig(format!(
                "downsample factor must be >= 2, got {}",
                self.factor
            )));
        }
        for (name, k) in [("analysis", &self.analysis), ("synthesis", &self.synthesis)] {
            if k.is_empty() || k.len() % 2 == 0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} kernel must have odd length, got {}",
                    k.len()
                )));
            }
            if k.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} kernel is not finite")));
            }
            let dc: f64 = k.iter().sum();
            if (dc - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidConfig(format!(
                    "{name} kernel must sum to 1, sums to {dc}"
                )));
            }
        }
        Ok(())
    }
}

/// Whole-sample symmetric reflection (`-1 -> 1`, `n -> n-2`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Separable convolution of an h×w plane with reflected borders.
pub(crate) fn convolve_separable(plane: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            rows[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(t, k)| k * src[reflect(x as isize + t as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(t, k)| k * rows[reflect(y as isize + t as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

fn decimate_plane(plane: &[f64], h: usize, w: usize, p: usize) -> Vec<f64> {
    (0..h / p)
        .flat_map(|y| (0..w / p).map(move |x| plane[(y * p) * w + x * p]))
        .collect()
}

/// Zero insertion followed by synthesis filtering with gain `p` per axis.
fn interpolate_plane(low: &[f64], lh: usize, lw: usize, cfg: &LpConfig) -> Vec<f64> {
    let p = cfg.factor;
    let (h, w) = (lh * p, lw * p);
    let mut up = vec![0.0; h * w];
    for y in 0..lh {
        for x in 0..lw {
            up[(y * p) * w + x * p] = low[y * lw + x];
        }
    }
    let kernel: Vec<f64> = cfg.synthesis.iter().map(|k| k * p as f64).collect();
    convolve_separable(&up, h, w, &kernel)
}

fn check_divisible(map: &FeatureMap, p: usize) -> Result<()> {
    if map.height() < p || map.width() < p || !map.height().is_multiple_of(p) || !map.width().is_multiple_of(p) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} is not divisible by factor {p}; reflect_pad the input first",
            map.height(),
            map.width()
        )));
    }
    Ok(())
}

/// Keeps every `p`-th sample per axis starting at index 0.
pub fn decimate(map: &FeatureMap, p: usize) -> Result<FeatureMap> {
    if p == 0 {
        return Err(Error::InvalidConfig("decimation factor must be positive".into()));
    }
    check_divisible(map, p)?;
    let (c, h, w) = map.dims();
    let data: Vec<f64> = (0..c)
        .flat_map(|ch| decimate_plane(&map.channel_f64(ch), h, w, p))
        .collect();
    FeatureMap::from_f64(c, h / p, w / p, &data)
}

/// Pads the bottom and right edges by reflection so both dims are multiples of `multiple`.
pub fn reflect_pad(map: &FeatureMap, multiple: usize) -> Result<FeatureMap> {
    if multiple == 0 {
        return Err(Error::InvalidConfig("pad multiple must be positive".into()));
    }
    let round_up = |n: usize| n.div_ceil(multiple) * multiple;
    let (c, h, w) = map.dims();
    let (ph, pw) = (round_up(h), round_up(w));
    FeatureMap::from_fn(c, ph, pw, |ch, y, x| {
        map.get(ch, reflect(y as isize, h), reflect(x as isize, w))
    })
}

/// Splits `x` into a decimated low-pass and a full-resolution high-pass residual.
pub fn lp_analyze(x: &FeatureMap, cfg: &LpConfig) -> Result<(FeatureMap, FeatureMap)> {
    cfg.validate()?;
    let p = cfg.factor;
    check_divisible(x, p)?;
    let (c, h, w) = x.dims();
    let (lh, lw) = (h / p, w / p);

    let per_channel: Vec<(Vec<f32>, Vec<f32>)> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let src = x.channel_f64(ch);
            let filtered = convolve_separable(&src, h, w, &cfg.analysis);
            let low: Vec<f32> = decimate_plane(&filtered, h, w, p)
                .into_iter()
                .map(|v| v as f32)
                .collect();
            // Predict from the stored (rounded) low-pass so synthesis sees the same values.
            let low64: Vec<f64> = low.iter().map(|&v| f64::from(v)).collect();
            let pred = interpolate_plane(&low64, lh, lw, cfg);
            let high = src.iter().zip(&pred).map(|(s, q)| (s - q) as f32).collect();
            (low, high)
        })
        .collect();

    let mut low = Vec::with_capacity(c * lh * lw);
    let mut high = Vec::with_capacity(c * h * w);
    for (l, hi) in per_channel {
        low.extend(l);
        high.extend(hi);
    }
    Ok((FeatureMap::new(c, lh, lw, low)?, FeatureMap::new(c, h, w, high)?))
}

/// Inverse of [`lp_analyze`]: high-pass plus the interpolated low-pass.
pub fn lp_synthesize(low: &FeatureMap, high: &FeatureMap, cfg: &LpConfig) -> Result<FeatureMap> {
    cfg.validate()?;
    let p = cfg.factor;
    let (c, lh, lw) = low.dims();
    if high.dims() != (c, lh * p, lw * p) {
        return Err(Error::ShapeMismatch(format!(
            "low {:?} and high {:?} are inconsistent for factor {p}",
            low.dims(),
            high.dims()
        )));
    }
    let planes: Vec<Vec<f32>> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let pred = interpolate_plane(&low.channel_f64(ch), lh, lw, cfg);
            pred.iter()
                .zip(high.channel(ch))
                .map(|(q, &hv)| (q + f64::from(hv)) as f32)
                .collect()
        })
        .collect();
    FeatureMap::new(c, lh * p, lw * p, planes.concat())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMap::from_fn(c, h, w, |_, _, _| rng.gen_range(-1.0..1.0)).unwrap()
    }

    /// Direct 2-D convolution with mirrored borders, written independently of the separable path.
    fn oracle_low(x: &[f64], h: usize, w: usize, k: &[f64], p: usize) -> Vec<f64> {
        let r = k.len() as isize / 2;
        let mirror = |i: isize, n: isize| -> usize {
            let mut i = i;
            while i < 0 || i >= n {
                if i < 0 {
                    i = -i;
                }
                if i >= n {
                    i = 2 * (n - 1) - i;
                }
            }
            i as usize
        };
        let mut out = Vec::new();
        for y in (0..h).step_by(p) {
            for xx in (0..w).step_by(p) {
                let mut acc = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let sy = mirror(y as isize + dy, h as isize);
                        let sx = mirror(xx as isize + dx, w as isize);
                        acc += k[(dy + r) as usize] * k[(dx + r) as usize] * x[sy * w + sx];
                    }
                }
                out.push(acc);
            }
        }
        out
    }

    #[test]
    fn constant_image_has_no_detail() {
        let x = FeatureMap::filled(2, 8, 8, 0.7);
        let (low, high) = lp_analyze(&x, &LpConfig::default()).unwrap();
        assert_eq!(low.dims(), (2, 4, 4));
        assert!(low.data().iter().all(|&v| (v - 0.7).abs() < 1e-6));
        assert!(high.data().iter().all(|&v| v.abs() < 1e-6));
        let back = lp_synthesize(&low, &FeatureMap::zeros(2, 8, 8), &LpConfig::default()).unwrap();
        assert!(back.data().iter().all(|&v| (v - 0.7).abs() < 1e-6));
    }

    #[test]
    fn impulse_matches_direct_convolution() {
        let cfg = LpConfig {
            analysis: vec![0.25, 0.5, 0.25],
            synthesis: vec![0.25, 0.5, 0.25],
            factor: 2,
        };
        let x = FeatureMap::from_fn(1, 4, 4, |_, y, x| if y == 0 && x == 0 { 1.0 } else { 0.0 }).unwrap();
        let (low, _) = lp_analyze(&x, &cfg).unwrap();
        let expected = oracle_low(&x.channel_f64(0), 4, 4, &cfg.analysis, 2);
        for (a, b) in low.data().iter().zip(&expected) {
            assert!((f64::from(*a) - b).abs() < 1e-7, "{a} vs {b}");
        }
        assert_eq!(low.get(0, 0, 0), 0.25);
    }

    #[test]
    fn zero_low_pass_returns_high() {
        let high = random_map(1, 8, 8, 3);
        let out = lp_synthesize(&FeatureMap::zeros(1, 4, 4), &high, &LpConfig::default()).unwrap();
        assert_eq!(out, high);
    }

    #[test]
    fn rejects_indivisible_and_bad_config() {
        let x = FeatureMap::zeros(1, 5, 4);
        assert!(matches!(lp_analyze(&x, &LpConfig::default()), Err(Error::ShapeMismatch(_))));
        let padded = reflect_pad(&x, 2).unwrap();
        assert_eq!(padded.dims(), (1, 6, 4));
        assert!(lp_analyze(&padded, &LpConfig::default()).is_ok());

        let bad = LpConfig {
            analysis: vec![0.5, 0.5],
            ..LpConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
        let unnormalized = LpConfig {
            analysis: vec![1.0, 1.0, 1.0],
            ..LpConfig::default()
        };
        assert!(unnormalized.validate().is_err());
        let p1 = LpConfig {
            factor: 1,
            ..LpConfig::default()
        };
        assert!(p1.validate().is_err());
    }

    #[test]
    fn synthesize_rejects_mismatch() {
        let r = lp_synthesize(&FeatureMap::zeros(1, 4, 4), &FeatureMap::zeros(1, 6, 8), &LpConfig::default());
        assert!(matches!(r, Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn factor_three_round_trips() {
        let cfg = LpConfig {
            factor: 3,
            ..LpConfig::default()
        };
        let x = random_map(1, 9, 12, 11);
        let (low, high) = lp_analyze(&x, &cfg).unwrap();
        assert_eq!(low.dims(), (1, 3, 4));
        assert!(lp_synthesize(&low, &high, &cfg).unwrap().max_abs_diff(&x).unwrap() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn perfect_reconstruction(seed in any::<u64>()) {
            let x = random_map(1, 8, 8, seed);
            let cfg = LpConfig::default();
            let (low, high) = lp_analyze(&x, &cfg).unwrap();
            let back = lp_synthesize(&low, &high, &cfg).unwrap();
            prop_assert!(back.max_abs_diff(&x).unwrap() < 1e-6);
        }

        #[test]
        fn analysis_is_linear(seed in any::<u64>(), a in -2.0f32..2.0, b in -2.0f32..2.0) {
            let x = random_map(2, 8, 8, seed);
            let y = random_map(2, 8, 8, seed ^ 0x5555);
            let combo = FeatureMap::new(2, 8, 8, x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
            let cfg = LpConfig::default();
            let (lx, hx) = lp_analyze(&x, &cfg).unwrap();
            let (ly, hy) = lp_analyze(&y, &cfg).unwrap();
            let (lc, hc) = lp_analyze(&combo, &cfg).unwrap();
            for (got, (p, q)) in lc.data().iter().zip(lx.data().iter().zip(ly.data())) {
                prop_assert!((got - (a * p + b * q)).abs() < 1e-5);
            }
            for (got, (p, q)) in hc.data().iter().zip(hx.data().iter().zip(hy.data())) {
                prop_assert!((got - (a * p + b * q)).abs() < 1e-5);
            }
        }
    }
}
