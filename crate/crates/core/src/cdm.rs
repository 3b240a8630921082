//! Contourlet decomposition: a Laplacian pyramid whose decimated high-pass
//! at every level is split by the directional filter bank.

use crate::dfb::{dfb_decompose, DfbConfig};
use crate::error::{Error, Result};
use crate::pyramid::{decimate, lp_analyze, LpConfig};
use crate::tensor::FeatureMap;

#[derive(Debug, Clone, PartialEq)]
pub struct CdmConfig {
    pub num_levels: usize,
    /// DFB depth `m` for each level, outermost first.
    pub dfb_levels: Vec<u32>,
    pub lp: LpConfig,
    pub transition_width: f64,
}

impl Default for CdmConfig {
    fn default() -> Self {
        Self {
            num_levels: 2,
            dfb_levels: vec![4, 3],
            lp: LpConfig::default(),
            transition_width: 0.1,
        }
    }
}

impl CdmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_levels == 0 || self.dfb_levels.len() != self.num_levels {
            return Err(Error::InvalidConfig(format!(
                "{} DFB depths given for {} levels",
                self.dfb_levels.len(),
                self.num_levels
            )));
        }
        self.lp.validate()
    }

    fn dfb(&self, level: usize) -> DfbConfig {
        DfbConfig {
            levels: self.dfb_levels[level],
            transition_width: self.transition_width,
        }
    }
}

/// Directional subbands for every pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralFeature {
    pub levels: Vec<Vec<FeatureMap>>,
}

impl StructuralFeature {
    pub fn subband_count(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    /// All values, level by level and subband by subband.
    pub fn flatten(&self) -> Vec<f32> {
        self.levels
            .iter()
            .flatten()
            .flat_map(|s| s.data().iter().copied())
            .collect()
    }

    fn shape(&self) -> Vec<Vec<(usize, usize, usize)>> {
        self.levels
            .iter()
            .map(|l| l.iter().map(FeatureMap::dims).collect())
            .collect()
    }
}

pub fn cdm_forward(x: &FeatureMap, cfg: &CdmConfig) -> Result<StructuralFeature> {
    cfg.validate()?;
    let p = cfg.lp.factor;
    let total = p
        .checked_pow(cfg.num_levels as u32)
        .ok_or_else(|| Error::InvalidConfig("pyramid depth overflows".into()))?;
    if !x.height().is_multiple_of(total) || !x.width().is_multiple_of(total) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} is not divisible by {p}^{} = {total}",
            x.height(),
            x.width(),
            cfg.num_levels
        )));
    }
    let mut current = x.clone();
    let mut levels = Vec::with_capacity(cfg.num_levels);
    for level in 0..cfg.num_levels {
        let (low, high) = lp_analyze(&current, &cfg.lp)?;
        let band = decimate(&high, p)?;
        levels.push(dfb_decompose(&band, &cfg.dfb(level))?);
        current = low;
    }
    Ok(StructuralFeature { levels })
}

/// Squared error per level normalized by that level's spatial size, averaged over levels.
pub fn structural_loss(teacher: &StructuralFeature, student: &StructuralFeature) -> Result<f64> {
    if teacher.shape() != student.shape() {
        return Err(Error::ShapeMismatch(
            "teacher and student structural features differ in shape; resample the student first"
                .into(),
        ));
    }
    if teacher.levels.is_empty() {
        return Err(Error::ShapeMismatch("structural feature has no levels".into()));
    }
    let per_level: Vec<f64> = teacher
        .levels
        .iter()
        .zip(&student.levels)
        .map(|(t, s)| {
            let sq: f64 = t
                .iter()
                .zip(s)
                .flat_map(|(a, b)| a.data().iter().zip(b.data()))
                .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
                .sum();
            let spatial = t.first().map_or(1, FeatureMap::plane_len);
            sq / spatial as f64
        })
        .collect();
    Ok(per_level.iter().sum::<f64>() / per_level.len() as f64)
}
