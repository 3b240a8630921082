//! Co-occurrence variant of the intensity equalizer.
//!
//! Level pairs of horizontally dilated pixel pairs are counted over the whole
//! map, clipped like the 1-D histogram, lifted by a per-cell MLP and averaged
//! into one texture vector.

use ndarray::{Array2, Array3, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::tensor::FeatureMap;
use crate::tiem::{self, Encoding};
use crate::weights::WeightSet;

pub const DEFAULT_LEVELS: usize = 8;
pub const DEFAULT_STEPS: [usize; 3] = [1, 3, 5];

/// Unnormalized pair mass `Σ_{i,j} E_{m,(i,j)} · E_{n,(i,j+step)}` as an N×N matrix.
///
/// Pairs whose right pixel falls outside the map are dropped. The per-pixel
/// outer products are accumulated straight from the sparse encoding.
pub fn cooccur(encoding: &Encoding, height: usize, width: usize, step: usize) -> Result<Array2<f64>> {
    if encoding.pixels() != height * width {
        return Err(Error::ShapeMismatch(format!(
            "encoding covers {} pixels, map is {height}x{width}",
            encoding.pixels()
        )));
    }
    if step == 0 || step >= width {
        return Err(Error::InvalidConfig(format!(
            "dilation step {step} must be in 1..{width}"
        )));
    }
    let n = encoding.levels();
    let rows: Vec<Array2<f64>> = (0..height)
        .into_par_iter()
        .map(|y| {
            let mut acc = Array2::zeros((n, n));
            for x in 0..width - step {
                let left = encoding.cell(y * width + x);
                let right = encoding.cell(y * width + x + step);
                if let (Some((a, wa)), Some((b, wb))) = (left, right) {
                    acc[[a, b]] += wa * wb;
                }
            }
            acc
        })
        .collect();
    // Fixed row order keeps the sum independent of the thread count.
    Ok(rows.into_iter().fold(Array2::zeros((n, n)), |s, r| s + r))
}

/// Normalizes pair mass to a joint distribution.
pub fn cooccur_count(pairs: &Array2<f64>) -> Result<Array2<f64>> {
    let flat = tiem::normalize_mass(pairs.iter().copied().collect())?;
    Ok(Array2::from_shape_vec(pairs.raw_dim(), flat).expect("same element count"))
}

/// The 1-D clipping rule applied to all N² bins at once.
pub fn cooccur_denoise(counts: &Array2<f64>, threshold: f64) -> Result<Array2<f64>> {
    let flat = tiem::denoise(counts.as_slice().expect("standard layout"), threshold)?;
    Ok(Array2::from_shape_vec(counts.raw_dim(), flat).expect("same element count"))
}

/// `[L_m, L_n]` for every cell, shaped 2×N×N.
pub fn level_pairs(levels: &[f64]) -> Array3<f64> {
    let n = levels.len();
    Array3::from_shape_fn((2, n, n), |(k, m, j)| if k == 0 { levels[m] } else { levels[j] })
}

/// Per-cell statistical feature: one row per cell `(m, n)` in row-major order,
/// each step contributing `[MLP(L_m, L_n, C̃_mn) | g]`.
pub fn cooccur_stat(
    levels: &[f64],
    denoised: &[Array2<f64>],
    global_avg: &[f64],
    weights: &WeightSet,
) -> Result<Array2<f64>> {
    let n = levels.len();
    if denoised.is_empty() {
        return Err(Error::InvalidConfig("no dilation steps".into()));
    }
    if let Some(bad) = denoised.iter().find(|c| c.dim() != (n, n)) {
        return Err(Error::ShapeMismatch(format!(
            "co-occurrence map {:?} does not match {n} levels",
            bad.dim()
        )));
    }
    let mlp = Mlp::load(weights, "ctiem.mlp", 3)?;
    let cells = n * n;
    let g = ndarray::Array1::from(global_avg.to_vec());
    let g_block = g.broadcast((cells, g.len())).expect("row broadcast").to_owned();
    let mut blocks = Vec::with_capacity(denoised.len() * 2);
    for c in denoised {
        let input = Array2::from_shape_fn((cells, 3), |(cell, k)| {
            let (m, j) = (cell / n, cell % n);
            match k {
                0 => levels[m],
                1 => levels[j],
                _ => c[[m, j]],
            }
        });
        blocks.push(mlp.apply_rows(&input)?);
        blocks.push(g_block.clone());
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    Ok(ndarray::concatenate(Axis(1), &views).expect("all blocks have N² rows"))
}

/// Texture vector: per-cell MLP, then the mean over cells.
pub fn adapt(d: &Array2<f64>, weights: &WeightSet) -> Result<(Array2<f64>, Vec<f64>)> {
    let mlp = Mlp::load(weights, "ctiem.adapt", d.ncols())?;
    let adapted = mlp.apply_rows(d)?;
    let texture = adapted
        .mean_axis(Axis(0))
        .ok_or_else(|| Error::ShapeMismatch("no cells to average".into()))?
        .to_vec();
    Ok((adapted, texture))
}

/// Spatially constant C₃×H×W map of the texture vector.
pub fn broadcast_texture(texture: &[f64], height: usize, width: usize) -> Result<FeatureMap> {
    FeatureMap::from_fn(texture.len(), height, width, |c, _, _| texture[c] as f32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceState {
    pub steps: Vec<usize>,
    pub levels: Vec<f64>,
    /// Normalized pair distribution per step.
    pub counts: Vec<Array2<f64>>,
    pub denoised: Vec<Array2<f64>>,
    /// N²×(steps·(mlp_out + C)).
    pub d: Array2<f64>,
    /// N²×C₃.
    pub adapted: Array2<f64>,
    pub texture: Vec<f64>,
}

pub fn ctiem_forward(
    map: &FeatureMap,
    levels: usize,
    threshold: f64,
    steps: &[usize],
    weights: &WeightSet,
) -> Result<(CooccurrenceState, FeatureMap)> {
    let (_, h, w) = map.dims();
    let similarity = tiem::self_similarity(map)?;
    let q = tiem::quantize(&similarity.values, levels)?;
    let mut counts = Vec::with_capacity(steps.len());
    let mut denoised = Vec::with_capacity(steps.len());
    for &s in steps {
        let c = cooccur_count(&cooccur(&q.encoding, h, w, s)?)?;
        denoised.push(cooccur_denoise(&c, threshold)?);
        counts.push(c);
    }
    let d = cooccur_stat(&q.levels, &denoised, &similarity.global_avg, weights)?;
    let (adapted, texture) = adapt(&d, weights)?;
    let t_map = broadcast_texture(&texture, h, w)?;
    Ok((
        CooccurrenceState {
            steps: steps.to_vec(),
            levels: q.levels,
            counts,
            denoised,
            d,
            adapted,
            texture,
        },
        t_map,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::{default_weights, DefaultDims, LayerNames};
    use ndarray::{array, Array1};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_encoding(n: usize, pixels: usize, rng: &mut ChaCha8Rng) -> Encoding {
        let cells = (0..pixels)
            .map(|_| Some((rng.gen_range(0..n), rng.gen_range(0.8..1.0))))
            .collect();
        Encoding::new(n, cells).unwrap()
    }

    /// Dense Ê summed over pixels via explicit outer products.
    fn dense_oracle(e: &Encoding, h: usize, w: usize, s: usize) -> Array2<f64> {
        let dense = e.dense();
        let n = e.levels();
        let mut out = Array2::zeros((n, n));
        for i in 0..h {
            for j in 0..w {
                if j + s >= w {
                    continue;
                }
                for m in 0..n {
                    for k in 0..n {
                        out[[m, k]] += dense[[m, i * w + j]] * dense[[k, i * w + j + s]];
                    }
                }
            }
        }
        out
    }

    fn put_layer(set: &mut WeightSet, names: LayerNames, w: Array2<f64>) {
        let out = w.nrows();
        set.insert_matrix(&names.weight, &w).unwrap();
        set.insert_vector(&names.bias, &Array1::zeros(out)).unwrap();
    }

    #[test]
    fn constant_level_concentrates() {
        let e = Encoding::new(4, vec![Some((2, 1.0)); 12]).unwrap();
        let pairs = cooccur(&e, 3, 4, 1).unwrap();
        assert_eq!(pairs[[2, 2]], 9.0);
        assert_eq!(pairs.sum(), 9.0);
        let c = cooccur_count(&pairs).unwrap();
        assert_eq!(c[[2, 2]], 1.0);
    }

    #[test]
    fn minimal_pair() {
        let e = Encoding::new(3, vec![Some((0, 1.0)), Some((2, 1.0))]).unwrap();
        let c = cooccur_count(&cooccur(&e, 1, 2, 1).unwrap()).unwrap();
        assert_eq!(c, array![[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
    }

    #[test]
    fn step_must_fit() {
        let e = Encoding::new(3, vec![Some((0, 1.0)); 4]).unwrap();
        assert!(cooccur(&e, 2, 2, 2).is_err());
        assert!(cooccur(&e, 2, 2, 0).is_err());
        assert!(cooccur(&e, 1, 3, 1).is_err());
        let empty = Encoding::new(3, vec![None; 4]).unwrap();
        assert!(matches!(
            cooccur_count(&cooccur(&empty, 2, 2, 1).unwrap()),
            Err(Error::EmptyEncoding)
        ));
    }

    #[test]
    fn matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let e = random_encoding(3, 16, &mut rng);
            for s in [1, 3] {
                let got = cooccur(&e, 4, 4, s).unwrap();
                let want = dense_oracle(&e, 4, 4, s);
                for (a, b) in got.iter().zip(&want) {
                    assert!((a - b).abs() < 1e-9);
                }
                let c = cooccur_count(&got).unwrap();
                let cw = &want / want.sum();
                for (a, b) in c.iter().zip(&cw) {
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn denoise_examples() {
        let c = array![[0.7, 0.1], [0.1, 0.1]];
        assert_eq!(cooccur_denoise(&c, 0.5).unwrap(), array![[0.4375, 0.1875], [0.1875, 0.1875]]);
        assert_eq!(cooccur_denoise(&c, 1.0).unwrap(), c);
        let u = Array2::from_elem((3, 3), 1.0 / 9.0);
        let out = cooccur_denoise(&u, 0.3).unwrap();
        assert!(out.iter().all(|v| (v - 1.0 / 9.0).abs() < 1e-15));
    }

    #[test]
    fn level_pairs_are_exact() {
        let l = [0.25, 0.5, 0.75, 1.0];
        let p = level_pairs(&l);
        for m in 0..4 {
            for n in 0..4 {
                assert_eq!((p[[0, m, n]], p[[1, m, n]]), (l[m], l[n]));
            }
        }
    }

    #[test]
    fn zero_mlp_leaves_broadcast_mean() {
        let mut w = WeightSet::new();
        put_layer(&mut w, LayerNames::mlp("ctiem.mlp", 1), Array2::zeros((4, 3)));
        put_layer(&mut w, LayerNames::mlp("ctiem.mlp", 2), Array2::zeros((2, 4)));
        let c = Array2::from_elem((2, 2), 0.25);
        let d = cooccur_stat(&[0.5, 1.0], &[c.clone(), c], &[0.3], &w).unwrap();
        assert_eq!(d.dim(), (4, 6));
        for row in d.rows() {
            assert_eq!(row.to_vec(), vec![0.0, 0.0, 0.3, 0.0, 0.0, 0.3]);
        }
    }

    #[test]
    fn identity_mlp_reproduces_cells() {
        let mut w = WeightSet::new();
        put_layer(&mut w, LayerNames::mlp("ctiem.mlp", 1), Array2::eye(3));
        put_layer(&mut w, LayerNames::mlp("ctiem.mlp", 2), Array2::eye(3));
        let c = array![[0.1, 0.2], [0.3, 0.4]];
        let d = cooccur_stat(&[0.5, 1.0], std::slice::from_ref(&c), &[], &w).unwrap();
        let l = [0.5, 1.0];
        for m in 0..2 {
            for n in 0..2 {
                assert_eq!(d.row(m * 2 + n).to_vec(), vec![l[m], l[n], c[[m, n]]]);
            }
        }
    }

    #[test]
    fn default_shapes() {
        let dims = DefaultDims::for_channels(2);
        let w = default_weights(&dims);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let map = FeatureMap::from_fn(2, 12, 12, |_, _, _| rng.gen_range(-1.0..1.0)).unwrap();
        let (state, t) = ctiem_forward(&map, DEFAULT_LEVELS, 0.9, &DEFAULT_STEPS, &w).unwrap();
        assert_eq!(state.d.dim(), (64, 3 * (16 + 2)));
        assert_eq!(state.adapted.dim(), (64, 32));
        assert_eq!(t.dims(), (32, 12, 12));
        for c in state.counts.iter().chain(&state.denoised) {
            assert!((c.sum() - 1.0).abs() < 1e-9);
        }
        for ch in 0..32 {
            let plane = t.channel(ch);
            assert!(plane.iter().all(|&v| v == plane[0]));
        }
    }

    #[test]
    fn adapt_matches_mean_oracle() {
        let w = default_weights(&DefaultDims::for_channels(1));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = Array2::from_shape_simple_fn((16, 3 * 17), || rng.gen_range(-1.0..1.0));
        let (_, t) = adapt(&d, &w).unwrap();
        let mat = |n: &str| w.matrix(n, None, None).unwrap();
        let (w1, w2) = (mat("ctiem.adapt.w1"), mat("ctiem.adapt.w2"));
        let mut mean = vec![0.0; w2.nrows()];
        for row in d.rows() {
            let h: Vec<f64> = (0..w1.nrows())
                .map(|j| {
                    let z: f64 = (0..row.len()).map(|i| w1[[j, i]] * row[i]).sum();
                    if z < 0.0 { 0.01 * z } else { z }
                })
                .collect();
            for (o, m) in mean.iter_mut().enumerate() {
                *m += (0..h.len()).map(|j| w2[[o, j]] * h[j]).sum::<f64>() / 16.0;
            }
        }
        for (a, b) in t.iter().zip(&mean) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_adapt_gives_zero_texture() {
        let mut w = WeightSet::new();
        put_layer(&mut w, LayerNames::mlp("ctiem.adapt", 1), Array2::zeros((3, 2)));
        put_layer(&mut w, LayerNames::mlp("ctiem.adapt", 2), Array2::zeros((5, 3)));
        let (_, t) = adapt(&Array2::ones((4, 2)), &w).unwrap();
        assert_eq!(t, vec![0.0; 5]);
        assert!(matches!(adapt(&Array2::ones((4, 2)), &WeightSet::new()), Err(Error::MissingWeight(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn mirror_transposes_counts(seed in any::<u64>(), s in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (h, w) = (4, 5);
            let e = random_encoding(3, h * w, &mut rng);
            let mirrored: Vec<_> = (0..h * w).map(|i| e.cell((i / w) * w + (w - 1 - i % w))).collect();
            let em = Encoding::new(3, mirrored).unwrap();
            let a = cooccur_count(&cooccur(&e, h, w, s).unwrap()).unwrap();
            let b = cooccur_count(&cooccur(&em, h, w, s).unwrap()).unwrap();
            for m in 0..3 {
                for n in 0..3 {
                    prop_assert!((a[[m, n]] - b[[n, m]]).abs() < 1e-9);
                }
            }
        }
    }
}
