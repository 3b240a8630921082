//! JSON run configuration. Every field is optional; command-line flags win.

use std::path::Path;

use serde::Deserialize;

use crate::Failure;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub contourlet: ContourletSection,
    #[serde(default)]
    pub tiem: TiemSection,
    #[serde(default)]
    pub ctiem: CtiemSection,
    #[serde(default)]
    pub sample: SampleSection,
    #[serde(default)]
    pub loss: LossSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContourletSection {
    pub levels: Option<usize>,
    pub dfb_levels: Option<Vec<u32>>,
    pub factor: Option<usize>,
    pub transition_width: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TiemSection {
    pub n: Option<usize>,
    pub theta: Option<f64>,
    pub weights: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CtiemSection {
    pub n: Option<usize>,
    pub theta: Option<f64>,
    pub steps: Option<Vec<usize>>,
    pub weights: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSection {
    pub m: Option<usize>,
    pub k: Option<f64>,
    pub beta: Option<f64>,
    pub scales: Option<[f64; 3]>,
    pub ratios: Option<[f64; 3]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub lambda3: Option<f64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Io(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Failure::Usage(format!("invalid config {}: {e}", path.display())))
    }
}
