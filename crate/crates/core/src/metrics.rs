//! Per-band complexity metrics: histogram entropy, variance, flatness and
//! Sobel edge density.
//!
//! Entropy, variance and flatness are computed on a per-band min-max rescale
//! to `[0, 255]`; edge density on a rescale to `[0, 1]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Band, MultiBandImage, RasterBand};
use crate::par::{self, Exec};

/// Added to probabilities (entropy) and pixel values (flatness).
pub const STABILITY: f64 = 1e-12;
/// Sobel magnitude above which a pixel counts as an edge.
pub const EDGE_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandMetrics {
    /// Shannon entropy of the 256-bin histogram, bits.
    pub entropy: f64,
    /// Population variance on the `[0, 255]` scale.
    pub variance: f64,
    /// Geometric over arithmetic mean on the `[0, 255]` scale.
    pub flatness: f64,
    /// Fraction of pixels with Sobel magnitude above [`EDGE_THRESHOLD`].
    pub edge_density: f64,
    /// Set when the band was constant and rescaled to all zeros.
    #[serde(skip)]
    pub degenerate: bool,
}

impl BandMetrics {
    pub fn new(entropy: f64, variance: f64, flatness: f64, edge_density: f64) -> Self {
        Self { entropy, variance, flatness, edge_density, degenerate: false }
    }

    pub fn is_finite(&self) -> bool {
        [self.entropy, self.variance, self.flatness, self.edge_density]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// 3x3 Sobel gradient magnitude with reflected borders.
pub fn sobel_magnitude(band: &RasterBand) -> Vec<f64> {
    let (h, w) = (band.height(), band.width());
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dy: isize, dx: isize| band.get_reflect(y + dy, x + dx);
            let gx = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let gy = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

pub fn band_metrics(band: &RasterBand) -> Result<BandMetrics> {
    if band.len() < 4 {
        return Err(Error::shape(format!("metrics need at least 4 pixels, got {}", band.len())));
    }
    let (scaled, degenerate) = band.rescaled(255.0);
    let n = scaled.len() as f64;

    let mut hist = [0usize; 256];
    for &v in &scaled {
        hist[(v.round() as usize).min(255)] += 1;
    }
    let entropy = -hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * (p + STABILITY).log2()
        })
        .sum::<f64>();

    let mean = scaled.iter().sum::<f64>() / n;
    let variance = scaled.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;

    let flatness = if degenerate {
        0.0
    } else {
        let log_gm = scaled.iter().map(|v| (v + STABILITY).ln()).sum::<f64>() / n;
        (log_gm.exp() / (mean + STABILITY)).clamp(0.0, 1.0)
    };

    let unit = band.rescaled_unit();
    let edges = sobel_magnitude(&unit).iter().filter(|&&g| g > EDGE_THRESHOLD).count();

    Ok(BandMetrics {
        entropy: entropy.clamp(0.0, 8.0),
        variance,
        flatness,
        edge_density: edges as f64 / n,
        degenerate,
    })
}

/// Per-metric arithmetic mean of [`band_metrics`] over a set of images.
pub fn dataset_band_metrics(images: &[MultiBandImage], band: Band) -> Result<BandMetrics> {
    dataset_band_metrics_with(images, band, Exec::default())
}

pub fn dataset_band_metrics_with(
    images: &[MultiBandImage],
    band: Band,
    exec: Exec,
) -> Result<BandMetrics> {
    if images.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    let per_image = par::try_map_range(exec, images.len(), |i| band_metrics(images[i].band(band)))?;
    Ok(mean_metrics(&per_image))
}

/// Arithmetic mean, accumulated in slice order.
pub fn mean_metrics(items: &[BandMetrics]) -> BandMetrics {
    let n = items.len() as f64;
    let mut m = BandMetrics::new(0.0, 0.0, 0.0, 0.0);
    for it in items {
        m.entropy += it.entropy;
        m.variance += it.variance;
        m.flatness += it.flatness;
        m.edge_density += it.edge_density;
    }
    m.entropy /= n;
    m.variance /= n;
    m.flatness /= n;
    m.edge_density /= n;
    m.degenerate = items.iter().all(|i| i.degenerate);
    m
}

/// Metrics for every band, keyed by band name.
pub fn metrics_report(images: &[MultiBandImage]) -> Result<BTreeMap<String, BandMetrics>> {
    Band::ALL
        .iter()
        .map(|&b| Ok((b.name().to_string(), dataset_band_metrics(images, b)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::features::ValueRange;

    fn raw(h: usize, w: usize, v: Vec<f64>) -> RasterBand {
        RasterBand::new(h, w, v, ValueRange::Raw).unwrap()
    }

    #[test]
    fn constant_band_is_degenerate() {
        let m = band_metrics(&RasterBand::filled(8, 8, 3.7, ValueRange::Raw).unwrap()).unwrap();
        assert_eq!(m.entropy, 0.0);
        assert_eq!(m.variance, 0.0);
        assert_eq!(m.edge_density, 0.0);
        assert_eq!(m.flatness, 0.0);
        assert!(m.degenerate);
    }

    #[test]
    fn full_range_band_has_eight_bits() {
        let v: Vec<f64> = (0..4096).map(|i| (i % 256) as f64).collect();
        let m = band_metrics(&raw(64, 64, v)).unwrap();
        assert!((m.entropy - 8.0).abs() < 1e-9, "{}", m.entropy);
        assert!(!m.degenerate);
    }

    #[test]
    fn uniform_noise_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v: Vec<f64> = (0..4096).map(|_| rng.gen::<f64>()).collect();
        let m = band_metrics(&raw(64, 64, v.clone())).unwrap();
        // population-variance oracle on the same rescale
        let (lo, hi) = v.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
        let s: Vec<f64> = v.iter().map(|x| (x - lo) / (hi - lo) * 255.0).collect();
        let mu = s.iter().sum::<f64>() / 4096.0;
        let var = s.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / 4096.0;
        assert!((m.variance - var).abs() < 1e-9 * var);
        assert!((m.variance - 5418.75).abs() < 0.05 * 5418.75);
        assert!(m.flatness > 0.0 && m.flatness <= 1.0);
        assert!(m.edge_density > 0.5);
    }

    #[test]
    fn step_edge_density() {
        // vertical step: Sobel fires on the two columns adjacent to the step
        let v: Vec<f64> = (0..64).map(|i| if i % 8 < 4 { 0.0 } else { 1.0 }).collect();
        let m = band_metrics(&raw(8, 8, v)).unwrap();
        assert!((m.edge_density - 2.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn too_small_band_is_rejected() {
        assert!(band_metrics(&raw(1, 3, vec![0.0, 1.0, 2.0])).is_err());
    }

    #[test]
    fn dataset_mean() {
        assert!(dataset_band_metrics(&[], Band::R).is_err());
        let a = BandMetrics::new(2.0, 10.0, 0.5, 0.1);
        let b = BandMetrics::new(6.0, 30.0, 0.7, 0.3);
        let m = mean_metrics(&[a, b]);
        assert_eq!(m.entropy, 4.0);
        assert_eq!(m.variance, 20.0);
    }

    proptest::proptest! {
        #[test]
        fn histogram_metrics_ignore_pixel_order(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = (0..144).map(|_| rng.gen_range(0..40) as f64).collect();
            let mut shuffled = v.clone();
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut rng);
            let a = band_metrics(&raw(12, 12, v)).unwrap();
            let b = band_metrics(&raw(12, 12, shuffled)).unwrap();
            proptest::prop_assert!((a.entropy - b.entropy).abs() < 1e-12);
            proptest::prop_assert!((a.variance - b.variance).abs() < 1e-9);
            proptest::prop_assert!((a.flatness - b.flatness).abs() < 1e-12);
        }

        #[test]
        fn metrics_are_invariant_to_positive_affine_maps(seed in 0u64..500, exp in 0i32..6, offset in -100i32..100) {
            // power-of-two slope and integer offset keep the arithmetic exact
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = (0..100).map(|_| rng.gen_range(0..1000) as f64).collect();
            let slope = 2f64.powi(exp);
            let w: Vec<f64> = v.iter().map(|x| slope * x + offset as f64).collect();
            let a = band_metrics(&raw(10, 10, v)).unwrap();
            let b = band_metrics(&raw(10, 10, w)).unwrap();
            proptest::prop_assert_eq!(a, b);
        }

        #[test]
        fn metric_ranges(seed in 0u64..500, levels in 1u32..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = (0..81).map(|_| rng.gen_range(0..levels) as f64).collect();
            let m = band_metrics(&raw(9, 9, v)).unwrap();
            proptest::prop_assert!(m.is_finite());
            proptest::prop_assert!((0.0..=8.0).contains(&m.entropy));
            proptest::prop_assert!((0.0..=1.0).contains(&m.flatness));
            proptest::prop_assert!((0.0..=1.0).contains(&m.edge_density));
        }
    }
}
