//! Anchor-based importance sampling of rectangular regions.
//!
//! Candidates are drawn uniformly, scored by the summed standard deviation
//! of nine anchor rectangles around each, and a `β` fraction of the output
//! is taken by weighted sampling without replacement (exponential keys). The
//! rest is drawn uniformly from the unchosen candidates.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Number of regions to return (M).
    pub m_samples: usize,
    /// Over-generation factor k > 1; ⌈kM⌉ candidates are drawn.
    pub overgen_factor: f64,
    /// Fraction β of the output chosen by importance.
    pub importance_fraction: f64,
    /// Side lengths of the square anchor bases, in pixels.
    pub anchor_scales: [f64; 3],
    /// Height/width ratios; area is preserved.
    pub anchor_ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            m_samples: 16,
            overgen_factor: 2.0,
            importance_fraction: 0.7,
            anchor_scales: [8.0, 16.0, 32.0],
            anchor_ratios: [0.5, 1.0, 2.0],
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn candidate_count(&self) -> usize {
        (self.overgen_factor * self.m_samples as f64).ceil() as usize
    }

    pub fn importance_count(&self) -> usize {
        (self.importance_fraction * self.m_samples as f64).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_samples == 0 {
            return Err(Error::InvalidConfig("M must be positive".into()));
        }
        if self.overgen_factor.is_nan() || self.overgen_factor <= 1.0 || self.overgen_factor.is_infinite() {
            return Err(Error::InvalidConfig(format!(
                "over-generation factor must be > 1, got {}",
                self.overgen_factor
            )));
        }
        if !(0.0..=1.0).contains(&self.importance_fraction) {
            return Err(Error::InvalidConfig(format!(
                "importance fraction must be in [0, 1], got {}",
                self.importance_fraction
            )));
        }
        if self.candidate_count() < self.m_samples {
            return Err(Error::InvalidConfig(format!(
                "kM = {} candidates cannot supply M = {}",
                self.candidate_count(),
                self.m_samples
            )));
        }
        let positive = |v: &f64| *v > 0.0 && v.is_finite();
        if !self.anchor_scales.iter().all(positive) || !self.anchor_ratios.iter().all(positive) {
            return Err(Error::InvalidConfig("anchor scales and ratios must be positive".into()));
        }
        Ok(())
    }

    /// The nine anchor (height, width) pairs, scale-major.
    pub fn anchor_sizes(&self) -> [(usize, usize); 9] {
        let mut out = [(1, 1); 9];
        for (i, s) in self.anchor_scales.iter().enumerate() {
            for (j, r) in self.anchor_ratios.iter().enumerate() {
                let h = (s * r.sqrt()).round().max(1.0) as usize;
                let w = (s / r.sqrt()).round().max(1.0) as usize;
                out[i * 3 + j] = (h, w);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    /// A `height`×`width` box centered on `(row, col)`, clipped to `dims`.
    fn centered(row: usize, col: usize, height: usize, width: usize, dims: (usize, usize)) -> Self {
        let span = |center: usize, len: usize, limit: usize| {
            let start = center as isize - (len / 2) as isize;
            let lo = start.max(0) as usize;
            let hi = ((start + len as isize).max(0) as usize).min(limit);
            (lo, hi.max(lo + 1).min(limit) - lo)
        };
        let (top, height) = span(row, height, dims.0);
        let (left, width) = span(col, width, dims.1);
        Self {
            top,
            left,
            height,
            width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Importance,
    Coverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSample {
    /// (row, col)
    pub center: (usize, usize),
    pub rect: Rect,
    /// Index of the chosen anchor among the nine.
    pub anchor: usize,
    /// Summed anchor standard deviation p_s.
    pub probability: f64,
    pub origin: Origin,
}

/// Summed-area tables over channel-pooled values, shifted by a reference
/// value so constant maps give exactly zero variance.
struct MomentTable {
    width: usize,
    channels: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl MomentTable {
    fn new(map: &FeatureMap) -> Self {
        let (c, h, w) = map.dims();
        let reference = f64::from(map.data()[0]);
        let stride = w + 1;
        let mut sum = vec![0.0; (h + 1) * stride];
        let mut sum_sq = vec![0.0; (h + 1) * stride];
        for y in 0..h {
            let (mut row, mut row_sq) = (0.0, 0.0);
            for x in 0..w {
                for ch in 0..c {
                    let v = f64::from(map.get(ch, y, x)) - reference;
                    row += v;
                    row_sq += v * v;
                }
                let i = (y + 1) * stride + x + 1;
                sum[i] = sum[i - stride] + row;
                sum_sq[i] = sum_sq[i - stride] + row_sq;
            }
        }
        Self {
            width: w,
            channels: c,
            sum,
            sum_sq,
        }
    }

    fn boxed(table: &[f64], stride: usize, r: &Rect) -> f64 {
        let (t, l, b, rt) = (r.top, r.left, r.top + r.height, r.left + r.width);
        table[b * stride + rt] - table[t * stride + rt] - table[b * stride + l] + table[t * stride + l]
    }

    /// Population standard deviation of every channel·pixel value in `r`.
    fn std(&self, r: &Rect) -> f64 {
        let stride = self.width + 1;
        let n = (r.height * r.width * self.channels) as f64;
        let mean = Self::boxed(&self.sum, stride, r) / n;
        let var = Self::boxed(&self.sum_sq, stride, r) / n - mean * mean;
        var.max(0.0).sqrt()
    }
}

/// Population standard deviation over all channel·pixel values of `rect`.
pub fn region_std(map: &FeatureMap, rect: &Rect) -> f64 {
    MomentTable::new(map).std(rect)
}

/// The nine clipped anchor rectangles around `center`.
pub fn anchor_rects(center: (usize, usize), dims: (usize, usize), cfg: &SamplerConfig) -> [Rect; 9] {
    cfg.anchor_sizes()
        .map(|(h, w)| Rect::centered(center.0, center.1, h, w, dims))
}

pub fn sample_regions(map: &FeatureMap, cfg: &SamplerConfig) -> Result<Vec<RegionSample>> {
    cfg.validate()?;
    let (_, h, w) = map.dims();
    let sizes = cfg.anchor_sizes();
    let min_h = sizes.iter().map(|s| s.0).min().unwrap_or(1);
    let min_w = sizes.iter().map(|s| s.1).min().unwrap_or(1);
    if h < min_h || w < min_w {
        return Err(Error::TooSmall(format!(
            "{h}x{w} map is smaller than the smallest anchor {min_h}x{min_w}"
        )));
    }
    let n_candidates = cfg.candidate_count();
    if n_candidates > h * w {
        return Err(Error::TooSmall(format!(
            "{n_candidates} distinct candidates requested from a {h}x{w} map"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers: Vec<(usize, usize)> = index::sample(&mut rng, h * w, n_candidates)
        .into_iter()
        .map(|p| (p / w, p % w))
        .collect();

    let table = MomentTable::new(map);
    let anchors: Vec<[Rect; 9]> = centers
        .iter()
        .map(|&c| anchor_rects(c, (h, w), cfg))
        .collect();
    let scores: Vec<f64> = anchors
        .par_iter()
        .map(|rects| rects.iter().map(|r| table.std(r)).sum())
        .collect();

    // Exponential keys: larger ln(u)/w wins. Zero-weight candidates rank
    // below every positive one and fall back to uniform order among themselves.
    let n_importance = cfg.importance_count();
    let mut keyed: Vec<(bool, f64, usize)> = scores
        .iter()
        .enumerate()
        .map(|(i, &wgt)| {
            let u: f64 = 1.0 - rng.gen::<f64>();
            if wgt > 0.0 {
                (true, u.ln() / wgt, i)
            } else {
                (false, u, i)
            }
        })
        .collect();
    keyed.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then(b.1.total_cmp(&a.1))
            .then(a.2.cmp(&b.2))
    });
    let importance: Vec<usize> = keyed[..n_importance].iter().map(|k| k.2).collect();

    let mut taken = vec![false; n_candidates];
    for &i in &importance {
        taken[i] = true;
    }
    let rest: Vec<usize> = (0..n_candidates).filter(|&i| !taken[i]).collect();
    let coverage: Vec<usize> = index::sample(&mut rng, rest.len(), cfg.m_samples - n_importance)
        .into_iter()
        .map(|j| rest[j])
        .collect();

    let chosen = importance
        .into_iter()
        .map(|i| (i, Origin::Importance))
        .chain(coverage.into_iter().map(|i| (i, Origin::Coverage)));
    Ok(chosen
        .map(|(i, origin)| {
            let anchor = rng.gen_range(0..9);
            RegionSample {
                center: centers[i],
                rect: anchors[i][anchor],
                anchor,
                probability: scores[i],
                origin,
            }
        })
        .collect())
}

fn round_half_up(v: f64) -> usize {
    (v + 0.5).floor().max(0.0) as usize
}

/// Rescales a sample from a map of `from` dims to one of `to` dims (both (height, width)).
pub fn scale_region(r: &RegionSample, from: (usize, usize), to: (usize, usize)) -> RegionSample {
    let axis = |start: usize, len: usize, f: usize, t: usize| -> (usize, usize) {
        let s = t as f64 / f as f64;
        let start = round_half_up(start as f64 * s).min(t.saturating_sub(1));
        let len = round_half_up(len as f64 * s).max(1).min(t - start);
        (start, len)
    };
    let (top, height) = axis(r.rect.top, r.rect.height, from.0, to.0);
    let (left, width) = axis(r.rect.left, r.rect.width, from.1, to.1);
    let scale_point = |p: usize, f: usize, t: usize| round_half_up(p as f64 * t as f64 / f as f64).min(t - 1);
    RegionSample {
        center: (scale_point(r.center.0, from.0, to.0), scale_point(r.center.1, from.1, to.1)),
        rect: Rect {
            top,
            left,
            height,
            width,
        },
        ..r.clone()
    }
}
