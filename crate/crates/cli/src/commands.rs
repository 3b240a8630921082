use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;
use serde_json::json;
use texturekit::cdm::{cdm_forward, structural_loss, CdmConfig, StructuralFeature};
use texturekit::ctiem::{self, ctiem_forward};
use texturekit::dfb::{dfb_decompose, dfb_reconstruct, DfbConfig};
use texturekit::losses::{qcl_loss, response_kl_loss, total_loss, LossTerms, LossWeights};
use texturekit::pyramid::{lp_analyze, lp_synthesize, reflect_pad, LpConfig};
use texturekit::sampler::{sample_regions, SamplerConfig};
use texturekit::tiem::{self, tiem_forward, StatFeature};
use texturekit::{default_weights, load_image, load_weights, read_tensor, DefaultDims, FeatureMap, WeightSet};

use crate::config::RunConfig;
use crate::output::OutputDir;
use crate::Failure;

/// Reconstruction error above which `reconstruct` fails.
const RECONSTRUCTION_TOLERANCE: f32 = 1e-5;

fn load_input(path: &Path) -> Result<FeatureMap, Failure> {
    let is_tensor = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("txk"));
    Ok(if is_tensor { read_tensor(path)? } else { load_image(path)? })
}

/// Single-channel inputs become `(v, 1 - v)`: cosine similarity of scalars
/// only sees their sign, which would collapse every region to one level.
fn lift_gray(map: FeatureMap) -> Result<FeatureMap, Failure> {
    if map.channels() != 1 {
        return Ok(map);
    }
    let (_, h, w) = map.dims();
    Ok(FeatureMap::from_fn(2, h, w, |c, y, x| {
        let v = map.get(0, y, x);
        if c == 0 { v } else { 1.0 - v }
    })?)
}

fn row_matrix(a: &Array2<f64>) -> Result<FeatureMap, Failure> {
    let (r, c) = a.dim();
    Ok(FeatureMap::from_f64(1, r, c, &a.iter().copied().collect::<Vec<_>>())?)
}

fn vector_map(v: &[f64]) -> Result<FeatureMap, Failure> {
    Ok(FeatureMap::from_f64(1, 1, v.len(), v)?)
}

fn resolve_weights(path: Option<PathBuf>, fallback: Option<&String>, dims: DefaultDims) -> Result<WeightSet, Failure> {
    match path.or_else(|| fallback.map(PathBuf::from)) {
        Some(p) => Ok(load_weights(p)?),
        None => Ok(default_weights(&dims)),
    }
}

pub fn contourlet(
    cfg: &RunConfig,
    input: &Path,
    levels: Option<usize>,
    dfb_levels: Option<Vec<u32>>,
    factor: Option<usize>,
    out: &Path,
) -> Result<(), Failure> {
    let defaults = CdmConfig::default();
    let sec = &cfg.contourlet;
    let num_levels = levels.or(sec.levels).unwrap_or(defaults.num_levels);
    let dfb_levels = dfb_levels.or_else(|| sec.dfb_levels.clone()).unwrap_or_else(|| {
        // Extend the default depths when only the level count changes.
        (0..num_levels).map(|i| defaults.dfb_levels.get(i).copied().unwrap_or(3)).collect()
    });
    let cdm = CdmConfig {
        num_levels,
        dfb_levels,
        lp: LpConfig {
            factor: factor.or(sec.factor).unwrap_or(defaults.lp.factor),
            ..LpConfig::default()
        },
        transition_width: sec.transition_width.unwrap_or(defaults.transition_width),
    };
    cdm.validate()?;
    let x = load_input(input)?;
    let multiple = cdm
        .lp
        .factor
        .checked_pow(num_levels as u32)
        .ok_or_else(|| Failure::Usage("pyramid depth overflows".into()))?;
    let x = reflect_pad(&x, multiple)?;
    let feature = cdm_forward(&x, &cdm)?;
    let mut dir = OutputDir::create(out, "contourlet")?;
    for (l, bands) in feature.levels.iter().enumerate() {
        for (k, band) in bands.iter().enumerate() {
            dir.tensor(&format!("L{}_b{k:02}", l + 1), band)?;
        }
    }
    dir.finish()?;
    println!(
        "contourlet: {} subbands over {num_levels} levels from {}x{}x{}",
        feature.subband_count(),
        x.channels(),
        x.height(),
        x.width()
    );
    Ok(())
}

pub fn tiem(
    cfg: &RunConfig,
    input: &Path,
    n: Option<usize>,
    theta: Option<f64>,
    weights: Option<PathBuf>,
    region: Option<Vec<usize>>,
    out: &Path,
) -> Result<(), Failure> {
    let sec = &cfg.tiem;
    let n = n.or(sec.n).unwrap_or(tiem::DEFAULT_LEVELS);
    let theta = theta.or(sec.theta).unwrap_or(tiem::DEFAULT_THRESHOLD);
    let mut x = lift_gray(load_input(input)?)?;
    if let Some(r) = region {
        if r.len() != 4 {
            return Err(Failure::Usage("--region takes top,left,height,width".into()));
        }
        x = x.crop(r[0], r[1], r[2], r[3])?;
    }
    let weights = resolve_weights(weights, sec.weights.as_ref(), DefaultDims::for_channels(x.channels()))?;
    let result = tiem_forward(&x, n, theta, &weights)?;
    let (h, w) = result.region_dims;
    let mut dir = OutputDir::create(out, "tiem")?;
    dir.tensor("S", &FeatureMap::from_f64(1, h, w, &result.similarity.values)?)?;
    dir.tensor("C", &vector_map(&result.counting.counts)?)?;
    dir.tensor("Ctilde", &vector_map(&result.counting.denoised)?)?;
    dir.tensor("D", &row_matrix(&result.stat.d)?)?;
    dir.tensor("Lprime", &row_matrix(&result.stat.levels)?)?;
    dir.tensor("R", &result.stat.output_map(h, w)?)?;
    dir.finish()?;
    println!(
        "tiem: {n} levels over {h}x{w}, sum C = {:.12}, sum C~ = {:.12}",
        result.counting.counts.iter().sum::<f64>(),
        result.counting.denoised.iter().sum::<f64>()
    );
    Ok(())
}

pub fn ctiem(
    cfg: &RunConfig,
    input: &Path,
    n: Option<usize>,
    theta: Option<f64>,
    steps: Option<Vec<usize>>,
    weights: Option<PathBuf>,
    out: &Path,
) -> Result<(), Failure> {
    let sec = &cfg.ctiem;
    let n = n.or(sec.n).unwrap_or(ctiem::DEFAULT_LEVELS);
    let theta = theta.or(sec.theta).unwrap_or(tiem::DEFAULT_THRESHOLD);
    let steps = steps
        .or_else(|| sec.steps.clone())
        .unwrap_or_else(|| ctiem::DEFAULT_STEPS.to_vec());
    let x = lift_gray(load_input(input)?)?;
    let dims = DefaultDims {
        ctiem_steps: steps.len(),
        ..DefaultDims::for_channels(x.channels())
    };
    let weights = resolve_weights(weights, sec.weights.as_ref(), dims)?;
    let (state, _) = ctiem_forward(&x, n, theta, &steps, &weights)?;
    let mut dir = OutputDir::create(out, "ctiem")?;
    for (i, s) in steps.iter().enumerate() {
        dir.tensor(&format!("C_s{s}"), &row_matrix(&state.counts[i])?)?;
        dir.tensor(&format!("Ctilde_s{s}"), &row_matrix(&state.denoised[i])?)?;
    }
    dir.tensor("T", &FeatureMap::from_f64(state.texture.len(), 1, 1, &state.texture)?)?;
    dir.finish()?;
    println!(
        "ctiem: {n}x{n} co-occurrence at steps {steps:?}, texture width {}",
        state.texture.len()
    );
    Ok(())
}

pub fn sample(
    cfg: &RunConfig,
    input: &Path,
    m: Option<usize>,
    k: Option<f64>,
    beta: Option<f64>,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let d = SamplerConfig::default();
    let sec = &cfg.sample;
    let sampler = SamplerConfig {
        m_samples: m.or(sec.m).unwrap_or(d.m_samples),
        overgen_factor: k.or(sec.k).unwrap_or(d.overgen_factor),
        importance_fraction: beta.or(sec.beta).unwrap_or(d.importance_fraction),
        anchor_scales: sec.scales.unwrap_or(d.anchor_scales),
        anchor_ratios: sec.ratios.unwrap_or(d.anchor_ratios),
        seed: seed.or(cfg.seed).unwrap_or(d.seed),
    };
    let x = load_input(input)?;
    let samples = sample_regions(&x, &sampler)?;
    let record = json!({
        "height": x.height(),
        "width": x.width(),
        "seed": sampler.seed,
        "samples": samples,
    });
    if let Some(out) = out {
        let mut dir = OutputDir::create(out, "sample")?;
        dir.json("regions", &record)?;
        dir.finish()?;
    }
    println!("{}", serde_json::to_string(&record).expect("serializable samples"));
    Ok(())
}

/// Contourlet subbands keyed by level then band index.
fn read_structural(dir: &Path) -> Result<Option<StructuralFeature>, Failure> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::Io(format!("cannot list {}: {e}", dir.display())))?;
    let mut found: BTreeMap<usize, BTreeMap<usize, PathBuf>> = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Failure::Io(e.to_string()))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(rest) = name.strip_prefix("contourlet_L").and_then(|r| r.strip_suffix(".txk")) else {
            continue;
        };
        let parsed = rest
            .split_once("_b")
            .and_then(|(l, b)| Some((l.parse().ok()?, b.parse().ok()?)));
        if let Some((level, band)) = parsed {
            found.entry(level).or_default().insert(band, path.clone());
        }
    }
    if found.is_empty() {
        return Ok(None);
    }
    let levels = found
        .values()
        .map(|bands| bands.values().map(|p| read_tensor(p).map_err(Failure::from)).collect())
        .collect::<Result<Vec<Vec<_>>, _>>()?;
    Ok(Some(StructuralFeature { levels }))
}

fn read_optional(dir: &Path, name: &str) -> Result<Option<FeatureMap>, Failure> {
    let path = dir.join(name);
    if path.exists() { Ok(Some(read_tensor(&path)?)) } else { Ok(None) }
}

fn as_matrix(map: &FeatureMap) -> Array2<f64> {
    let (_, r, c) = map.dims();
    Array2::from_shape_fn((r, c), |(i, j)| f64::from(map.get(0, i, j)))
}

struct StatFiles {
    feature: StatFeature,
    region: (usize, usize),
}

fn read_stat(dir: &Path) -> Result<Option<StatFiles>, Failure> {
    let parts = (
        read_optional(dir, "tiem_D.txk")?,
        read_optional(dir, "tiem_Lprime.txk")?,
        read_optional(dir, "tiem_R.txk")?,
    );
    match parts {
        (None, None, None) => Ok(None),
        (Some(d), Some(l), Some(r)) => {
            let d = as_matrix(&d);
            Ok(Some(StatFiles {
                feature: StatFeature {
                    adjacency: Array2::zeros((d.nrows(), d.nrows())),
                    output: Array2::zeros((0, 0)),
                    d,
                    levels: as_matrix(&l),
                },
                region: (r.height(), r.width()),
            }))
        }
        _ => Err(Failure::Usage(format!(
            "{} has only some of tiem_D, tiem_Lprime and tiem_R",
            dir.display()
        ))),
    }
}

fn pair<T>(what: &str, t: Option<T>, s: Option<T>) -> Result<Option<(T, T)>, Failure> {
    match (t, s) {
        (Some(t), Some(s)) => Ok(Some((t, s))),
        (None, None) => Ok(None),
        _ => Err(Failure::Usage(format!("{what} present for only one of teacher and student"))),
    }
}

#[derive(Serialize)]
struct LossReport {
    terms: LossTerms,
    weights: LossWeights,
    l_d: Option<f64>,
    corr_student_sum: Option<f64>,
    corr_teacher_sum: Option<f64>,
    missing: Vec<&'static str>,
    total: f64,
}

pub fn distill_loss(
    cfg: &RunConfig,
    teacher: &Path,
    student: &Path,
    lambdas: [Option<f64>; 3],
    l_seg: f64,
    l_adv: f64,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let d = LossWeights::default();
    let sec = &cfg.loss;
    let weights = LossWeights {
        texture: lambdas[0].or(sec.lambda1).unwrap_or(d.texture),
        response: lambdas[1].or(sec.lambda2).unwrap_or(d.response),
        adversarial: lambdas[2].or(sec.lambda3).unwrap_or(d.adversarial),
    };
    let mut terms = LossTerms {
        segmentation: l_seg,
        adversarial: l_adv,
        ..LossTerms::default()
    };
    let mut missing = Vec::new();

    match pair("contourlet subbands", read_structural(teacher)?, read_structural(student)?)? {
        Some((t, s)) => terms.structural = structural_loss(&t, &s)?,
        None => missing.push("structural"),
    }
    let mut qcl = None;
    match pair("statistical features", read_stat(teacher)?, read_stat(student)?)? {
        Some((t, s)) => {
            let q = qcl_loss(&t.feature, &s.feature, t.region)?;
            terms.statistical = q.l_qdl;
            qcl = Some(q);
        }
        None => missing.push("statistical"),
    }
    match pair(
        "probs.txk",
        read_optional(teacher, "probs.txk")?,
        read_optional(student, "probs.txk")?,
    )? {
        Some((t, s)) => terms.response = response_kl_loss(&t, &s)?,
        None => missing.push("response"),
    }

    let report = LossReport {
        terms,
        weights,
        l_d: qcl.as_ref().map(|q| q.l_d),
        corr_student_sum: qcl.as_ref().map(|q| q.corr_student_sum),
        corr_teacher_sum: qcl.as_ref().map(|q| q.corr_teacher_sum),
        missing,
        total: total_loss(&terms, &weights),
    };
    if let Some(out) = out {
        let mut dir = OutputDir::create(out, "distill")?;
        dir.json("losses", &report)?;
        dir.finish()?;
    }
    println!("{}", serde_json::to_string(&report).expect("serializable report"));
    Ok(())
}

pub fn reconstruct(input: &Path, m: u32, out: Option<&Path>) -> Result<(), Failure> {
    let lp = LpConfig::default();
    let x = reflect_pad(&load_input(input)?, lp.factor)?;
    let (low, high) = lp_analyze(&x, &lp)?;
    let bands = dfb_decompose(&high, &DfbConfig::new(m))?;
    let back = lp_synthesize(&low, &dfb_reconstruct(&bands)?, &lp)?;
    let err = back.max_abs_diff(&x)?;
    if let Some(out) = out {
        let mut dir = OutputDir::create(out, "reconstruct")?;
        dir.tensor("output", &back)?;
        dir.json("report", &json!({ "max_abs_error": err, "directional_levels": m }))?;
        dir.finish()?;
    }
    let (c, h, w) = x.dims();
    println!("reconstruct: max abs error {err:.3e} over {c}x{h}x{w} (m={m})");
    if err >= RECONSTRUCTION_TOLERANCE {
        return Err(Failure::Invariant(format!(
            "reconstruction error {err:e} exceeds {RECONSTRUCTION_TOLERANCE:e}"
        )));
    }
    Ok(())
}

pub fn selftest(out: Option<&Path>) -> Result<(), Failure> {
    let checks = texturekit::selftest::run();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if let Some(out) = out {
        let mut dir = OutputDir::create(out, "selftest")?;
        dir.json("report", &checks)?;
        dir.finish()?;
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Failure::Invariant(format!("{failed} of {} checks failed", checks.len())));
    }
    Ok(())
}
