//! Distillation losses over structural and statistical texture features.

use ndarray::{Array1, Array2, Axis};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, solve_lower};
use crate::tensor::FeatureMap;
use crate::tiem::StatFeature;

/// Ridge added to every covariance before factorization.
pub const COVARIANCE_RIDGE: f64 = 1e-6;
/// Probability floor inside the KL logarithm.
pub const KL_FLOOR: f64 = 1e-8;
/// Allowed deviation of a pixel's class probabilities from summing to one.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-5;

fn check_same(a: &Array2<f64>, b: &Array2<f64>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!("{what}: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Sum of squared differences of two statistical features, divided by the region area.
pub fn stat_feature_loss(teacher: &Array2<f64>, student: &Array2<f64>, region_dims: (usize, usize)) -> Result<f64> {
    check_same(teacher, student, "statistical features")?;
    let area = region_dims.0 * region_dims.1;
    if area == 0 {
        return Err(Error::InvalidConfig("region area is zero".into()));
    }
    let sq: f64 = teacher.iter().zip(student).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(sq / area as f64)
}

/// Row mean and population covariance of `rows` (N×C).
pub fn mean_and_covariance(rows: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let mean = rows
        .mean_axis(Axis(0))
        .ok_or_else(|| Error::ShapeMismatch("no level vectors".into()))?;
    let centered = rows - &mean;
    let cov = centered.t().dot(&centered) / rows.nrows() as f64;
    Ok((mean, cov))
}

/// Mahalanobis distance of every row of `levels` from `mean` under `covariance + ridge·I`.
pub fn mahalanobis_corr(levels: &Array2<f64>, mean: &Array1<f64>, covariance: &Array2<f64>) -> Result<Vec<f64>> {
    let c = mean.len();
    if levels.ncols() != c || covariance.dim() != (c, c) {
        return Err(Error::ShapeMismatch(format!(
            "levels {:?}, mean {c}, covariance {:?}",
            levels.dim(),
            covariance.dim()
        )));
    }
    let ridged = covariance + &(Array2::<f64>::eye(c) * COVARIANCE_RIDGE);
    let l = cholesky(&ridged)?;
    Ok(levels
        .rows()
        .into_iter()
        .map(|row| {
            let diff = &row - mean;
            let y = solve_lower(&l, diff.view());
            y.dot(&y).sqrt()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QclTerms {
    pub l_d: f64,
    pub corr_student_sum: f64,
    pub corr_teacher_sum: f64,
    pub l_qdl: f64,
    #[serde(skip)]
    pub mean: Array1<f64>,
    #[serde(skip)]
    pub covariance: Array2<f64>,
}

/// Statistical feature loss plus the gap in summed Mahalanobis distance,
/// both sets of levels measured against the teacher's level distribution.
pub fn qcl_loss(teacher: &StatFeature, student: &StatFeature, region_dims: (usize, usize)) -> Result<QclTerms> {
    let l_d = stat_feature_loss(&teacher.d, &student.d, region_dims)?;
    check_same(&teacher.levels, &student.levels, "reconstructed levels")?;
    let (mean, covariance) = mean_and_covariance(&teacher.levels)?;
    let corr_student_sum: f64 = mahalanobis_corr(&student.levels, &mean, &covariance)?.iter().sum();
    let corr_teacher_sum: f64 = mahalanobis_corr(&teacher.levels, &mean, &covariance)?.iter().sum();
    Ok(QclTerms {
        l_d,
        corr_student_sum,
        corr_teacher_sum,
        l_qdl: l_d + (corr_student_sum - corr_teacher_sum),
        mean,
        covariance,
    })
}

fn check_distribution(p: &FeatureMap) -> Result<()> {
    let (k, h, w) = p.dims();
    for pixel in 0..h * w {
        let mut sum = 0.0f64;
        for c in 0..k {
            let v = f64::from(p.data()[c * h * w + pixel]);
            if v < 0.0 {
                return Err(Error::NotNormalized { pixel, sum: v });
            }
            sum += v;
        }
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::NotNormalized { pixel, sum });
        }
    }
    Ok(())
}

/// Per-pixel `KL(teacher ‖ student)` over the class axis, averaged over pixels.
pub fn response_kl_loss(teacher: &FeatureMap, student: &FeatureMap) -> Result<f64> {
    if !teacher.same_dims(student) {
        return Err(Error::ShapeMismatch(format!(
            "probability maps {:?} vs {:?}",
            teacher.dims(),
            student.dims()
        )));
    }
    check_distribution(teacher)?;
    check_distribution(student)?;
    let (k, h, w) = teacher.dims();
    let plane = h * w;
    let total: f64 = (0..plane)
        .map(|pixel| {
            (0..k)
                .map(|c| {
                    let pt = f64::from(teacher.data()[c * plane + pixel]);
                    let ps = f64::from(student.data()[c * plane + pixel]);
                    if pt == 0.0 {
                        0.0
                    } else {
                        pt * (pt.max(KL_FLOOR) / ps.max(KL_FLOOR)).ln()
                    }
                })
                .sum::<f64>()
        })
        .sum();
    Ok(total / plane as f64)
}

/// Weights of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossWeights {
    /// Scales the structural plus statistical terms.
    pub texture: f64,
    pub response: f64,
    pub adversarial: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            texture: 0.9,
            response: 3.0,
            adversarial: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossTerms {
    pub segmentation: f64,
    pub structural: f64,
    pub statistical: f64,
    pub response: f64,
    /// Supplied by an external discriminator.
    pub adversarial: f64,
}

pub fn total_loss(t: &LossTerms, w: &LossWeights) -> f64 {
    t.segmentation + w.texture * (t.structural + t.statistical) + w.response * t.response
        - w.adversarial * t.adversarial
}
