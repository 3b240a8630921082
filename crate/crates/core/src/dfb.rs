//! Directional filter bank realized with frequency-plane wedge masks.
//!
//! The half-plane of orientations `[π/4, 5π/4)` is split into `2^m` equal
//! sectors. Each mask is the sector indicator smoothed by a raised-cosine
//! kernel along the angle, so the masks sum to one at every frequency for any
//! transition width. Subbands are undecimated: each has the input's shape.
//!
//! Sectors `0..2^(m-1)` cover orientations where the vertical frequency
//! dominates, the remaining sectors those where the horizontal frequency does.

use std::f64::consts::{FRAC_PI_4, PI};
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

/// Orientation at which sector 0 begins.
const START_ANGLE: f64 = FRAC_PI_4;

#[derive(Debug, Clone, PartialEq)]
pub struct DfbConfig {
    /// Tree depth `m`; produces `2^m` subbands.
    pub levels: u32,
    /// Full width of each raised-cosine transition, as a fraction of π.
    pub transition_width: f64,
}

impl DfbConfig {
    pub fn new(levels: u32) -> Self {
        Self {
            levels,
            transition_width: 0.1,
        }
    }

    pub fn subbands(&self) -> usize {
        1usize << self.levels
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.levels > 16 {
            return Err(Error::InvalidConfig(format!(
                "DFB levels must be in 1..=16, got {}",
                self.levels
            )));
        }
        if !(0.0..0.5).contains(&self.transition_width) {
            return Err(Error::InvalidConfig(format!(
                "transition width must be in [0, 0.5), got {}",
                self.transition_width
            )));
        }
        Ok(())
    }
}

/// Smoothed step: the integral of a raised-cosine bump of half-width `half`.
fn smooth_step(u: f64, half: f64) -> f64 {
    if half == 0.0 {
        return if u >= 0.0 { 1.0 } else { 0.0 };
    }
    if u <= -half {
        0.0
    } else if u >= half {
        1.0
    } else {
        0.5 * (1.0 + u / half) + (PI * u / half).sin() / (2.0 * PI)
    }
}

fn signed_frequency(i: usize, n: usize) -> f64 {
    let i = i as isize;
    let n = n as isize;
    let f = if i > n / 2 { i - n } else { i };
    f as f64 / n as f64
}

/// The stack of wedge masks for an `height`×`width` spectrum.
#[derive(Debug, Clone)]
pub struct DirectionalMasks {
    height: usize,
    width: usize,
    masks: Vec<Vec<f64>>,
}

impl DirectionalMasks {
    pub fn new(height: usize, width: usize, cfg: &DfbConfig) -> Result<Self> {
        cfg.validate()?;
        let count = cfg.subbands();
        if height < count || width < count {
            return Err(Error::TooSmall(format!(
                "{height}x{width} input is smaller than 2^{} = {count}",
                cfg.levels
            )));
        }
        let sector = PI / count as f64;
        let half = 0.5 * cfg.transition_width * PI;
        let raw = |iy: usize, ix: usize, k: usize| -> f64 {
            let fy = signed_frequency(iy, height);
            let fx = signed_frequency(ix, width);
            if fy == 0.0 && fx == 0.0 {
                return 1.0 / count as f64;
            }
            let phi = START_ANGLE + (fy.atan2(fx) - START_ANGLE).rem_euclid(PI);
            let lo = START_ANGLE + k as f64 * sector;
            let hi = lo + sector;
            (-1..=1)
                .map(|j| {
                    let shifted = phi + j as f64 * PI;
                    smooth_step(shifted - lo, half) - smooth_step(shifted - hi, half)
                })
                .sum()
        };
        let masks = (0..count)
            .map(|k| {
                let mut m = vec![0.0; height * width];
                for iy in 0..height {
                    for ix in 0..width {
                        // Average with the conjugate bin so real inputs give real subbands.
                        let (py, px) = ((height - iy) % height, (width - ix) % width);
                        m[iy * width + ix] = 0.5 * (raw(iy, ix, k) + raw(py, px, k));
                    }
                }
                m
            })
            .collect();
        Ok(Self {
            height,
            width,
            masks,
        })
    }

    pub fn count(&self) -> usize {
        self.masks.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Mask `k` over the unshifted FFT grid, row-major.
    pub fn mask(&self, k: usize) -> &[f64] {
        &self.masks[k]
    }

    /// Largest deviation of the summed masks from one over all bins.
    pub fn partition_error(&self) -> f64 {
        (0..self.height * self.width)
            .map(|i| (self.masks.iter().map(|m| m[i]).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

struct Fft2d {
    height: usize,
    width: usize,
    rows: Arc<dyn Fft<f64>>,
    cols: Arc<dyn Fft<f64>>,
}

impl Fft2d {
    fn new(height: usize, width: usize, inverse: bool) -> Self {
        let mut planner = FftPlanner::new();
        let (rows, cols) = if inverse {
            (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height))
        } else {
            (planner.plan_fft_forward(width), planner.plan_fft_forward(height))
        };
        Self {
            height,
            width,
            rows,
            cols,
        }
    }

    fn process(&self, data: &mut [Complex64]) {
        for row in data.chunks_exact_mut(self.width) {
            self.rows.process(row);
        }
        let mut col = vec![Complex64::default(); self.height];
        for x in 0..self.width {
            for y in 0..self.height {
                col[y] = data[y * self.width + x];
            }
            self.cols.process(&mut col);
            for y in 0..self.height {
                data[y * self.width + x] = col[y];
            }
        }
    }
}

/// Complex subbands per channel: `out[k][c]` is the inverse transform of mask `k` times channel `c`.
pub(crate) fn decompose_complex(
    high: &FeatureMap,
    masks: &DirectionalMasks,
) -> Vec<Vec<Vec<Complex64>>> {
    let (c, h, w) = high.dims();
    let forward = Fft2d::new(h, w, false);
    let inverse = Fft2d::new(h, w, true);
    let norm = 1.0 / (h * w) as f64;
    let spectra: Vec<Vec<Complex64>> = (0..c)
        .map(|ch| {
            let mut buf: Vec<Complex64> = high
                .channel(ch)
                .iter()
                .map(|&v| Complex64::new(f64::from(v), 0.0))
                .collect();
            forward.process(&mut buf);
            buf
        })
        .collect();
    (0..masks.count())
        .into_par_iter()
        .map(|k| {
            let mask = masks.mask(k);
            spectra
                .iter()
                .map(|spec| {
                    let mut buf: Vec<Complex64> =
                        spec.iter().zip(mask).map(|(s, m)| s * (m * norm)).collect();
                    inverse.process(&mut buf);
                    buf
                })
                .collect()
        })
        .collect()
}

/// Splits a high-pass band into `2^m` directional subbands of the same shape.
pub fn dfb_decompose(high: &FeatureMap, cfg: &DfbConfig) -> Result<Vec<FeatureMap>> {
    let (c, h, w) = high.dims();
    let masks = DirectionalMasks::new(h, w, cfg)?;
    decompose_complex(high, &masks)
        .into_iter()
        .map(|channels| {
            let data: Vec<f32> = channels
                .iter()
                .flat_map(|plane| plane.iter().map(|z| z.re as f32))
                .collect();
            FeatureMap::new(c, h, w, data)
        })
        .collect()
}

/// Sums subbands back into the band they were split from.
pub fn dfb_reconstruct(subbands: &[FeatureMap]) -> Result<FeatureMap> {
    let first = subbands
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no subbands to reconstruct".into()))?;
    if !subbands.len().is_power_of_two() {
        return Err(Error::ShapeMismatch(format!(
            "subband count {} is not a power of two",
            subbands.len()
        )));
    }
    if let Some(bad) = subbands.iter().find(|s| !s.same_dims(first)) {
        return Err(Error::ShapeMismatch(format!(
            "subband dims {:?} differ from {:?}",
            bad.dims(),
            first.dims()
        )));
    }
    if subbands.len() == 1 {
        return Ok(first.clone());
    }
    let (c, h, w) = first.dims();
    let data: Vec<f32> = (0..first.data().len())
        .map(|i| subbands.iter().map(|s| f64::from(s.data()[i])).sum::<f64>() as f32)
        .collect();
    FeatureMap::new(c, h, w, data)
}

/// Fraction of subband energy carried by the first half of the subbands.
pub fn vertical_energy_fraction(subbands: &[FeatureMap]) -> f64 {
    let energy = |s: &FeatureMap| s.data().iter().map(|&v| f64::from(v).powi(2)).sum::<f64>();
    let half = subbands.len() / 2;
    let vertical: f64 = subbands[..half].iter().map(energy).sum();
    let total: f64 = subbands.iter().map(energy).sum();
    if total == 0.0 {
        0.0
    } else {
        vertical / total
    }
}
