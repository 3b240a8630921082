//! Texture intensity equalization over one sampled region.
//!
//! The pipeline is quantization of cosine self-similarity into `N` soft
//! levels, counting the levels into a histogram, clipping histogram peaks and
//! spreading the excess evenly, then re-estimating the levels through a
//! softmax-normalized level graph and assigning them back to pixels.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::nn::{Linear, Mlp};
use crate::tensor::FeatureMap;
use crate::weights::{LayerNames, WeightSet};

pub const DEFAULT_LEVELS: usize = 128;
pub const DEFAULT_THRESHOLD: f64 = 0.9;

/// Cosine similarity of each pixel to the region's mean feature.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfSimilarity {
    /// One value per pixel, row-major, in [-1, 1].
    pub values: Vec<f64>,
    /// Per-channel spatial mean of the region.
    pub global_avg: Vec<f64>,
}

/// Computes pixel-to-mean cosine similarity. Zero-norm pixels get 0.
///
/// Values are divided by the region's largest magnitude first, which leaves
/// the similarities bit-identical when the region is scaled by a factor that
/// keeps its elements exact.
pub fn self_similarity(region: &FeatureMap) -> Result<SelfSimilarity> {
    let (c, h, w) = region.dims();
    let pixels = h * w;
    let peak = region
        .data()
        .iter()
        .fold(0.0f64, |m, &v| m.max(f64::from(v).abs()));
    if peak == 0.0 {
        return Err(Error::DegenerateRegion);
    }
    let unit: Vec<f64> = region.data().iter().map(|&v| f64::from(v) / peak).collect();
    let mean_of = |vals: &[f64], ch: usize| -> f64 {
        vals[ch * pixels..(ch + 1) * pixels].iter().sum::<f64>() / pixels as f64
    };
    let g: Vec<f64> = (0..c).map(|ch| mean_of(&unit, ch)).collect();
    let g_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if g_norm == 0.0 {
        return Err(Error::DegenerateRegion);
    }
    let values = (0..pixels)
        .map(|i| {
            let (mut dot, mut sq) = (0.0, 0.0);
            for (ch, gv) in g.iter().enumerate() {
                let a = unit[ch * pixels + i];
                dot += gv * a;
                sq += a * a;
            }
            if sq == 0.0 {
                0.0
            } else {
                (dot / (g_norm * sq.sqrt())).clamp(-1.0, 1.0)
            }
        })
        .collect();
    let raw: Vec<f64> = region.data().iter().map(|&v| f64::from(v)).collect();
    let global_avg = (0..c).map(|ch| mean_of(&raw, ch)).collect();
    Ok(SelfSimilarity { values, global_avg })
}

/// Level value `L_n = n / N` for 1-based `n`.
pub fn level_value(n: usize, levels: usize) -> f64 {
    n as f64 / levels as f64
}

/// Soft encoding of one normalized similarity: the 0-based level whose
/// window `-0.5/N <= L_n - s < 0.5/N` contains `s`, and weight `1 - |L_n - s|`.
pub fn encode_value(s: f64, levels: usize) -> Option<(usize, f64)> {
    let half = 0.5 / levels as f64;
    let guess = (s * levels as f64).round() as isize;
    (guess - 1..=guess + 1)
        .filter(|&n| n >= 1 && n as usize <= levels)
        .map(|n| n as usize)
        .find(|&n| {
            let d = level_value(n, levels) - s;
            -half <= d && d < half
        })
        .map(|n| (n - 1, 1.0 - (level_value(n, levels) - s).abs()))
}

/// Per-pixel soft quantization; at most one level per pixel is nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    levels: usize,
    cells: Vec<Option<(usize, f64)>>,
}

impl Encoding {
    pub fn new(levels: usize, cells: Vec<Option<(usize, f64)>>) -> Result<Self> {
        if let Some(bad) = cells.iter().flatten().find(|(n, w)| *n >= levels || !w.is_finite()) {
            return Err(Error::ShapeMismatch(format!(
                "encoding cell {bad:?} invalid for {levels} levels"
            )));
        }
        Ok(Self { levels, cells })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn pixels(&self) -> usize {
        self.cells.len()
    }

    /// `(level, weight)` of pixel `i`, if encoded.
    pub fn cell(&self, i: usize) -> Option<(usize, f64)> {
        self.cells[i]
    }

    pub fn cells(&self) -> &[Option<(usize, f64)>] {
        &self.cells
    }

    /// `E_{i,n}`.
    pub fn get(&self, pixel: usize, level: usize) -> f64 {
        match self.cells[pixel] {
            Some((n, w)) if n == level => w,
            _ => 0.0,
        }
    }

    /// Dense N×P matrix.
    pub fn dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.levels, self.cells.len()));
        for (i, cell) in self.cells.iter().enumerate() {
            if let Some((n, w)) = cell {
                out[[*n, i]] = *w;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationState {
    /// `L_1..L_N`, ascending; `L_N = 1`.
    pub levels: Vec<f64>,
    /// Similarity after min-max rescaling onto `[L_1, L_N]`.
    pub normalized: Vec<f64>,
    pub encoding: Encoding,
}

/// Quantizes a similarity vector into `levels` soft levels.
///
/// `S` is affinely mapped so its minimum lands on `L_1 = 1/N` and its maximum
/// on `L_N = 1`; the half-open windows then cover every value exactly once.
pub fn quantize(similarity: &[f64], levels: usize) -> Result<QuantizationState> {
    if levels < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 levels, got {levels}")));
    }
    if let Some(i) = similarity.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let (lo, hi) = similarity
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if similarity.is_empty() || hi <= lo {
        return Err(Error::DegenerateQuantization);
    }
    let first = level_value(1, levels);
    let gain = (1.0 - first) / (hi - lo);
    let normalized: Vec<f64> = similarity.iter().map(|&s| first + (s - lo) * gain).collect();
    let cells = normalized.iter().map(|&s| encode_value(s, levels)).collect();
    Ok(QuantizationState {
        levels: (1..=levels).map(|n| level_value(n, levels)).collect(),
        normalized,
        encoding: Encoding::new(levels, cells)?,
    })
}

/// Normalized level histogram `C_n = Σ_i E_{i,n} / Σ E`.
pub fn count(encoding: &Encoding) -> Result<Vec<f64>> {
    let mut counts = vec![0.0; encoding.levels()];
    for (n, w) in encoding.cells().iter().flatten() {
        counts[*n] += w;
    }
    normalize_mass(counts)
}

pub(crate) fn normalize_mass(mut counts: Vec<f64>) -> Result<Vec<f64>> {
    let total: f64 = counts.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::EmptyEncoding);
    }
    counts.iter_mut().for_each(|c| *c /= total);
    Ok(counts)
}

/// Clips bins above `θ·max(C)` and spreads the clipped mass evenly over all bins.
///
/// Single pass: redistributed mass may push a bin back over the cap.
pub fn denoise(counts: &[f64], threshold: f64) -> Result<Vec<f64>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "denoising threshold must be in (0, 1], got {threshold}"
        )));
    }
    if counts.is_empty() {
        return Err(Error::ShapeMismatch("empty histogram".into()));
    }
    if let Some(i) = counts.iter().position(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::InvalidConfig(format!("histogram bin {i} is negative or non-finite")));
    }
    let cap = threshold * counts.iter().copied().fold(0.0, f64::max);
    let excess: f64 = counts.iter().map(|&c| (c - cap).max(0.0)).sum();
    let share = excess / counts.len() as f64;
    Ok(counts
        .iter()
        .map(|&c| if c > cap { cap + share } else { c + share })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountingMap {
    pub counts: Vec<f64>,
    pub denoised: Vec<f64>,
    pub threshold: f64,
}

impl CountingMap {
    /// `C_e`, the mass clipped from peaks.
    pub fn excess(&self) -> f64 {
        let cap = self.threshold * self.counts.iter().copied().fold(0.0, f64::max);
        self.counts.iter().map(|&c| (c - cap).max(0.0)).sum()
    }
}

/// Statistical feature `D` (N×C₁): MLP over `[L_n, C̃_n]` followed by the broadcast mean feature.
pub fn build_stat_feature(
    levels: &[f64],
    denoised: &[f64],
    global_avg: &[f64],
    weights: &WeightSet,
) -> Result<Array2<f64>> {
    if levels.len() != denoised.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} levels but {} histogram bins",
            levels.len(),
            denoised.len()
        )));
    }
    let n = levels.len();
    let mlp = Mlp::load(weights, "tiem.mlp", 2)?;
    let input = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { levels[i] } else { denoised[i] });
    let hidden = mlp.apply_rows(&input)?;
    let g = Array1::from(global_avg.to_vec());
    let broadcast = g.broadcast((n, g.len())).expect("row broadcast").to_owned();
    Ok(ndarray::concatenate(Axis(1), &[hidden.view(), broadcast.view()])
        .expect("both blocks have n rows"))
}

/// Softmax along axis 0: every column sums to one.
pub fn softmax_columns(a: &Array2<f64>) -> Array2<f64> {
    let mut out = a.clone();
    for mut col in out.columns_mut() {
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        col.mapv_inplace(|v| (v - max).exp());
        let sum = col.sum();
        col.mapv_inplace(|v| v / sum);
    }
    out
}

/// Equalization outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct StatFeature {
    /// N×C₁
    pub d: Array2<f64>,
    /// N×N adjacency, column-normalized.
    pub adjacency: Array2<f64>,
    /// N×C₂ reconstructed levels `L′`.
    pub levels: Array2<f64>,
    /// C₂×P pixel assignment `R = L′ᵀ E`.
    pub output: Array2<f64>,
}

impl StatFeature {
    /// `R` reshaped to C₂×H×W.
    pub fn output_map(&self, height: usize, width: usize) -> Result<FeatureMap> {
        let (c2, p) = self.output.dim();
        if p != height * width {
            return Err(Error::ShapeMismatch(format!("{p} pixels cannot form {height}x{width}")));
        }
        let data: Vec<f64> = self.output.iter().copied().collect();
        FeatureMap::from_f64(c2, height, width, &data)
    }
}

pub fn equalize(d: &Array2<f64>, encoding: &Encoding, weights: &WeightSet) -> Result<StatFeature> {
    let c1 = d.ncols();
    let phi = |name: &str| Linear::load(weights, &LayerNames::linear(name), Some(c1));
    let (phi1, phi2, phi3) = (phi("tiem.phi1")?, phi("tiem.phi2")?, phi("tiem.phi3")?);
    if phi1.outputs() != phi2.outputs() {
        return Err(Error::ShapeMismatch("tiem.phi1 and tiem.phi2 widths differ".into()));
    }
    if encoding.levels() != d.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "encoding has {} levels, D has {} rows",
            encoding.levels(),
            d.nrows()
        )));
    }
    let q = phi1.apply_rows(d)?;
    let k = phi2.apply_rows(d)?;
    let v = phi3.apply_rows(d)?;
    let adjacency = softmax_columns(&q.dot(&k.t()));
    let levels = adjacency.dot(&v);
    let mut output = Array2::zeros((levels.ncols(), encoding.pixels()));
    for (i, cell) in encoding.cells().iter().enumerate() {
        if let Some((n, w)) = cell {
            output.column_mut(i).assign(&(&levels.row(*n) * *w));
        }
    }
    Ok(StatFeature {
        d: d.clone(),
        adjacency,
        levels,
        output,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TiemOutput {
    pub similarity: SelfSimilarity,
    pub quantization: QuantizationState,
    pub counting: CountingMap,
    pub stat: StatFeature,
    pub region_dims: (usize, usize),
}

pub fn tiem_forward(
    region: &FeatureMap,
    levels: usize,
    threshold: f64,
    weights: &WeightSet,
) -> Result<TiemOutput> {
    let similarity = self_similarity(region)?;
    let quantization = quantize(&similarity.values, levels)?;
    let counts = count(&quantization.encoding)?;
    let denoised = denoise(&counts, threshold)?;
    let d = build_stat_feature(&quantization.levels, &denoised, &similarity.global_avg, weights)?;
    let stat = equalize(&d, &quantization.encoding, weights)?;
    Ok(TiemOutput {
        similarity,
        quantization,
        counting: CountingMap {
            counts,
            denoised,
            threshold,
        },
        stat,
        region_dims: (region.height(), region.width()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::{default_weights, DefaultDims};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_region(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMap::from_fn(c, h, w, |_, _, _| rng.gen_range(-1.0..1.0)).unwrap()
    }

    fn put_layer(set: &mut WeightSet, names: LayerNames, w: Array2<f64>) {
        let out = w.nrows();
        set.insert_matrix(&names.weight, &w).unwrap();
        set.insert_vector(&names.bias, &Array1::zeros(out)).unwrap();
    }

    #[test]
    fn identical_pixels_are_fully_similar() {
        let r = FeatureMap::from_fn(3, 3, 3, |c, _, _| [0.2, -0.5, 0.9][c]).unwrap();
        let s = self_similarity(&r).unwrap();
        assert!(s.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!((s.global_avg[1] + 0.5).abs() < 1e-7);
    }

    #[test]
    fn orthogonal_pixel_has_zero_similarity() {
        // Mean (1, 0) requires the (0,1) pixel to be balanced out by the rest.
        let vals = [[2.0f32, 0.0], [0.0, 1.0], [2.0, -1.0], [0.0, 0.0]];
        let r = FeatureMap::from_fn(2, 2, 2, |c, y, x| vals[y * 2 + x][c]).unwrap();
        let s = self_similarity(&r).unwrap();
        assert_eq!(s.global_avg, vec![1.0, 0.0]);
        assert_eq!(s.values[1], 0.0);
        // zero-norm pixel
        assert_eq!(s.values[3], 0.0);
    }

    #[test]
    fn similarity_matches_cosine_oracle() {
        let r = random_region(4, 3, 3, 7);
        let s = self_similarity(&r).unwrap();
        let g: Vec<f64> = (0..4)
            .map(|c| (0..9).map(|i| f64::from(r.channel(c)[i])).sum::<f64>() / 9.0)
            .collect();
        for i in 0..9 {
            let a: Vec<f64> = (0..4).map(|c| f64::from(r.channel(c)[i])).collect();
            let dot: f64 = g.iter().zip(&a).map(|(x, y)| x * y).sum();
            let ng = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((s.values[i] - dot / (ng * na)).abs() < 1e-6);
        }
    }

    #[test]
    fn degenerate_regions() {
        assert!(matches!(self_similarity(&FeatureMap::zeros(2, 2, 2)), Err(Error::DegenerateRegion)));
        let balanced = FeatureMap::new(1, 1, 2, vec![1.0, -1.0]).unwrap();
        assert!(matches!(self_similarity(&balanced), Err(Error::DegenerateRegion)));
        assert!(matches!(quantize(&[0.3; 5], 4), Err(Error::DegenerateQuantization)));
        assert!(matches!(quantize(&[0.0, 1.0], 1), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn levels_and_exact_hits() {
        let q = quantize(&[0.0, 0.5, 1.0], 4).unwrap();
        assert_eq!(q.levels, vec![0.25, 0.5, 0.75, 1.0]);
        // extremes land exactly on L_1 and L_N
        assert_eq!(q.encoding.cell(0), Some((0, 1.0)));
        assert_eq!(q.encoding.cell(2).map(|c| c.0), Some(3));
        assert!((q.encoding.cell(2).unwrap().1 - 1.0).abs() < 1e-15);
        assert_eq!(encode_value(0.75, 4), Some((2, 1.0)));
    }

    #[test]
    fn window_is_half_open() {
        // d = L_n - s = -0.5/N is inside level n; d = +0.5/N is not.
        let n = 4;
        assert_eq!(encode_value(0.5 + 0.125, n).map(|c| c.0), Some(1));
        assert_eq!(encode_value(0.5 - 0.125, n).map(|c| c.0), Some(0));
    }

    #[test]
    fn encoding_weights_lie_in_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s: Vec<f64> = (0..500).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q = quantize(&s, 16).unwrap();
        for cell in q.encoding.cells() {
            let (_, w) = cell.expect("every pixel is encoded");
            assert!((1.0 - 0.5 / 16.0..=1.0).contains(&w));
        }
    }

    #[test]
    fn encoding_is_lipschitz_inside_windows() {
        let n = 8;
        let step = 1e-4;
        let mut s = level_value(1, n);
        while s + step <= 1.0 {
            let (a, b) = (encode_value(s, n), encode_value(s + step, n));
            if let (Some((la, wa)), Some((lb, wb))) = (a, b) {
                if la == lb {
                    assert!(((wb - wa) / step).abs() <= 1.0 + 1e-6);
                }
            }
            s += step;
        }
    }

    #[test]
    fn count_examples() {
        let one = Encoding::new(4, vec![Some((0, 1.0)); 5]).unwrap();
        assert_eq!(count(&one).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
        let two = Encoding::new(3, vec![Some((0, 0.9)), Some((2, 0.9))]).unwrap();
        assert_eq!(count(&two).unwrap(), vec![0.5, 0.0, 0.5]);
        let empty = Encoding::new(3, vec![None, None]).unwrap();
        assert!(matches!(count(&empty), Err(Error::EmptyEncoding)));
    }

    #[test]
    fn count_matches_accumulation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cells: Vec<_> = (0..300)
            .map(|_| Some((rng.gen_range(0..10), rng.gen_range(0.9..1.0))))
            .collect();
        let e = Encoding::new(10, cells).unwrap();
        let dense = e.dense();
        let total = dense.sum();
        let c = count(&e).unwrap();
        for n in 0..10 {
            assert!((c[n] - dense.row(n).sum() / total).abs() < 1e-9);
        }
        assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn denoise_examples() {
        let c = [0.4, 0.3, 0.2, 0.1];
        assert_eq!(denoise(&c, 1.0).unwrap(), c.to_vec());
        let uniform = [0.125; 8];
        for theta in [0.1, 0.5, 0.9] {
            let out = denoise(&uniform, theta).unwrap();
            assert!(out.iter().all(|v| (v - 0.125).abs() < 1e-15));
        }
        assert_eq!(
            denoise(&[0.7, 0.1, 0.1, 0.1], 0.5).unwrap(),
            vec![0.4375, 0.1875, 0.1875, 0.1875]
        );
        assert!(denoise(&c, 0.0).is_err());
        assert!(denoise(&c, 1.5).is_err());
    }

    fn identity_weights(c: usize) -> WeightSet {
        let mut w = WeightSet::new();
        put_layer(&mut w, LayerNames::mlp("tiem.mlp", 1), Array2::eye(2));
        put_layer(&mut w, LayerNames::mlp("tiem.mlp", 2), Array2::eye(2));
        for p in ["tiem.phi1", "tiem.phi2", "tiem.phi3"] {
            put_layer(&mut w, LayerNames::linear(p), Array2::zeros((3, 2 + c)));
        }
        w
    }

    #[test]
    fn zero_mlp_gives_broadcast_mean() {
        let dims = DefaultDims::for_channels(2);
        let mut w = WeightSet::new();
        put_layer(&mut w, LayerNames::mlp("tiem.mlp", 1), Array2::zeros((dims.tiem_hidden, 2)));
        put_layer(&mut w, LayerNames::mlp("tiem.mlp", 2), Array2::zeros((4, dims.tiem_hidden)));
        let d = build_stat_feature(&[0.5, 1.0], &[0.4, 0.6], &[0.3, -0.2], &w).unwrap();
        assert_eq!(d, array![[0.0, 0.0, 0.0, 0.0, 0.3, -0.2], [0.0, 0.0, 0.0, 0.0, 0.3, -0.2]]);
    }

    #[test]
    fn identity_mlp_passes_levels_through() {
        let w = identity_weights(1);
        let d = build_stat_feature(&[0.5, 1.0], &[0.25, 0.75], &[0.1], &w).unwrap();
        assert_eq!(d, array![[0.5, 0.25, 0.1], [1.0, 0.75, 0.1]]);
        let mut neg = identity_weights(1);
        neg = {
            let mut w = WeightSet::new();
            for (name, m) in neg.iter() {
                let m = if name == "tiem.mlp.w1" { m.scale(-1.0) } else { m.clone() };
                w.insert(name, m).unwrap();
            }
            w
        };
        let d = build_stat_feature(&[0.5], &[0.25], &[0.1], &neg).unwrap();
        assert!((d[[0, 0]] + 0.005).abs() < 1e-12 && (d[[0, 1]] + 0.0025).abs() < 1e-12);
    }

    #[test]
    fn stat_feature_matches_matrix_oracle() {
        let w = default_weights(&DefaultDims::for_channels(3));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let levels: Vec<f64> = (1..=8).map(|n| n as f64 / 8.0).collect();
        let hist: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..0.3)).collect();
        let g = vec![0.1, 0.2, -0.3];
        let d = build_stat_feature(&levels, &hist, &g, &w).unwrap();
        let w1 = w.matrix("tiem.mlp.w1", None, None).unwrap();
        let w2 = w.matrix("tiem.mlp.w2", None, None).unwrap();
        for n in 0..8 {
            let hidden: Vec<f64> = (0..w1.nrows())
                .map(|j| {
                    let z = w1[[j, 0]] * levels[n] + w1[[j, 1]] * hist[n];
                    if z < 0.0 { 0.01 * z } else { z }
                })
                .collect();
            for o in 0..w2.nrows() {
                let y: f64 = (0..hidden.len()).map(|j| w2[[o, j]] * hidden[j]).sum();
                assert!((d[[n, o]] - y).abs() < 1e-5);
            }
            assert_eq!(&d.row(n).to_vec()[16..], &g[..]);
        }
    }

    #[test]
    fn zero_projections_give_uniform_graph() {
        let w = identity_weights(1);
        let mut w2 = WeightSet::new();
        for (name, m) in w.iter() {
            let m = if name == "tiem.phi3.w" {
                FeatureMap::from_fn(1, 3, 3, |_, y, x| if y == x { 1.0 } else { 0.0 }).unwrap()
            } else {
                m.clone()
            };
            w2.insert(name, m).unwrap();
        }
        let d = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [0.0, 1.0, 0.0], [2.0, 2.0, 2.0]];
        let e = Encoding::new(4, vec![Some((1, 1.0)), Some((3, 0.5))]).unwrap();
        let out = equalize(&d, &e, &w2).unwrap();
        assert!(out.adjacency.iter().all(|v| (v - 0.25).abs() < 1e-15));
        let mean = d.mean_axis(Axis(0)).unwrap();
        for row in out.levels.rows() {
            for (a, b) in row.iter().zip(&mean) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        // one-hot selection scaled by the encoding weight
        assert!((out.output[[0, 1]] - 0.5 * out.levels[[3, 0]]).abs() < 1e-15);
    }

    #[test]
    fn equalize_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut w = WeightSet::new();
        for p in ["tiem.phi1", "tiem.phi2", "tiem.phi3"] {
            let m = Array2::from_shape_simple_fn((4, 4), || rng.gen_range(-1.0..1.0));
            put_layer(&mut w, LayerNames::linear(p), m);
        }
        let d = Array2::from_shape_simple_fn((8, 4), || rng.gen_range(-1.0..1.0));
        let cells: Vec<_> = (0..12).map(|_| Some((rng.gen_range(0..8), rng.gen_range(0.95..1.0)))).collect();
        let e = Encoding::new(8, cells).unwrap();
        let out = equalize(&d, &e, &w).unwrap();

        let mat = |name: &str| w.matrix(name, None, None).unwrap();
        let proj = |m: &Array2<f64>| -> Vec<Vec<f64>> {
            (0..8).map(|n| (0..4).map(|o| (0..4).map(|i| m[[o, i]] * d[[n, i]]).sum()).collect()).collect()
        };
        let (q, k, v) = (proj(&mat("tiem.phi1.w")), proj(&mat("tiem.phi2.w")), proj(&mat("tiem.phi3.w")));
        let a: Vec<Vec<f64>> = (0..8).map(|i| (0..8).map(|j| (0..4).map(|c| q[i][c] * k[j][c]).sum()).collect()).collect();
        for j in 0..8 {
            let z: f64 = (0..8).map(|i| a[i][j].exp()).sum();
            for i in 0..8 {
                assert!((out.adjacency[[i, j]] - a[i][j].exp() / z).abs() < 1e-5);
            }
            assert!((out.adjacency.column(j).sum() - 1.0).abs() < 1e-6);
        }
        let dense_e = e.dense();
        for n in 0..8 {
            for c in 0..4 {
                let l: f64 = (0..8).map(|m| out.adjacency[[n, m]] * v[m][c]).sum();
                assert!((out.levels[[n, c]] - l).abs() < 1e-5);
            }
        }
        for c in 0..4 {
            for p in 0..12 {
                let r: f64 = (0..8).map(|n| out.levels[[n, c]] * dense_e[[n, p]]).sum();
                assert!((out.output[[c, p]] - r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn missing_weights_reported() {
        let e = Encoding::new(2, vec![Some((0, 1.0))]).unwrap();
        let r = equalize(&Array2::zeros((2, 3)), &e, &WeightSet::new());
        assert!(matches!(r, Err(Error::MissingWeight(_))));
        assert!(build_stat_feature(&[1.0], &[1.0], &[0.0], &WeightSet::new()).is_err());
    }

    #[test]
    fn two_tone_region() {
        let vals = [[1.0f32, 0.0], [1.0, 0.0], [1.0, 1.0], [1.0, 1.0]];
        let r = FeatureMap::from_fn(2, 2, 2, |c, y, x| vals[y * 2 + x][c]).unwrap();
        let w = default_weights(&DefaultDims::for_channels(2));
        let out = tiem_forward(&r, 128, 0.9, &w).unwrap();
        let c = &out.counting.counts;
        assert!((c[0] - 0.5).abs() < 1e-12 && (c[127] - 0.5).abs() < 1e-12);
        let spread = 0.1 / 128.0;
        let d = &out.counting.denoised;
        assert!((d[0] - (0.45 + spread)).abs() < 1e-12);
        assert!((d[127] - (0.45 + spread)).abs() < 1e-12);
        assert!((d[64] - spread).abs() < 1e-15);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_region_is_degenerate() {
        let w = default_weights(&DefaultDims::for_channels(1));
        let r = tiem_forward(&FeatureMap::filled(1, 4, 4, 0.5), 8, 0.9, &w);
        assert!(matches!(r, Err(Error::DegenerateQuantization)));
    }

    #[test]
    fn defaults_on_random_region_satisfy_invariants() {
        let region = random_region(3, 32, 32, 11);
        let w = default_weights(&DefaultDims::for_channels(3));
        let out = tiem_forward(&region, DEFAULT_LEVELS, DEFAULT_THRESHOLD, &w).unwrap();
        let q = &out.quantization;
        assert!(q.levels.windows(2).all(|p| p[0] < p[1]));
        assert_eq!(*q.levels.last().unwrap(), 1.0);
        assert!(q.encoding.cells().iter().all(Option::is_some));
        let cm = &out.counting;
        assert!((cm.counts.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((cm.denoised.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let max_c = cm.counts.iter().copied().fold(0.0, f64::max);
        let max_d = cm.denoised.iter().copied().fold(0.0, f64::max);
        assert!(max_d <= 0.9 * max_c + cm.excess() / 128.0 + 1e-9);
        assert_eq!(out.stat.d.dim(), (128, 19));
        assert_eq!(out.stat.levels.dim(), (128, 64));
        let r = out.stat.output_map(32, 32).unwrap();
        assert_eq!(r.dims(), (64, 32, 32));
    }
}
