//! Six-channel feature engineering and non-overlapping patch extraction.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Exec};

/// Stabiliser in the NDVI denominator.
pub const NDVI_EPS: f64 = 1e-8;
/// EVI pixels whose denominator magnitude is at or below this are set to 0.
pub const EVI_DENOM_GUARD: f64 = 1e-6;
/// Radius of the disk window used by the local entropy filter.
pub const ENTROPY_DISK_RADIUS: usize = 5;

/// Declared value range of a raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueRange {
    Raw,
    /// `[0, 1]`, e.g. reflectance.
    Unit,
    /// `[0, 255]`.
    Byte,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterBand {
    height: usize,
    width: usize,
    values: Vec<f64>,
    range: ValueRange,
}

impl RasterBand {
    pub fn new(height: usize, width: usize, values: Vec<f64>, range: ValueRange) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape("raster must be non-empty"));
        }
        if values.len() != height * width {
            return Err(Error::shape(format!(
                "{} values for a {height}x{width} raster",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("raster contains non-finite values"));
        }
        Ok(Self { height, width, values, range })
    }

    pub fn filled(height: usize, width: usize, value: f64, range: ValueRange) -> Result<Self> {
        Self::new(height, width, vec![value; height * width], range)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        range: ValueRange,
        f: impl Fn(usize, usize) -> f64,
    ) -> Result<Self> {
        let values = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self::new(height, width, values, range)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Value at a possibly out-of-bounds coordinate under symmetric
    /// reflection (`c b a | a b c | c b a`).
    pub fn get_reflect(&self, y: isize, x: isize) -> f64 {
        self.get(reflect_index(y, self.height), reflect_index(x, self.width))
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn same_shape(&self, other: &RasterBand) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Min-max rescale to `[0, scale]`. A constant band maps to all zeros and
    /// the returned flag is `true`.
    pub fn rescaled(&self, scale: f64) -> (Vec<f64>, bool) {
        let (lo, hi) = self.min_max();
        let span = hi - lo;
        if span <= 0.0 {
            return (vec![0.0; self.values.len()], true);
        }
        (self.values.iter().map(|v| (v - lo) / span * scale).collect(), false)
    }

    pub fn rescaled_unit(&self) -> RasterBand {
        let (values, _) = self.rescaled(1.0);
        RasterBand { height: self.height, width: self.width, values, range: ValueRange::Unit }
    }
}

/// Folds any integer coordinate into `0..n` by symmetric reflection.
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// The six model channels, in concatenation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Band {
    R,
    G,
    B,
    #[serde(rename = "EVI")]
    Evi,
    #[serde(rename = "NDVI")]
    Ndvi,
    Entropy,
}

impl Band {
    pub const ALL: [Band; 6] = [Band::R, Band::G, Band::B, Band::Evi, Band::Ndvi, Band::Entropy];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Band::R => "R",
            Band::G => "G",
            Band::B => "B",
            Band::Evi => "EVI",
            Band::Ndvi => "NDVI",
            Band::Entropy => "Entropy",
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Band {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "r" | "red" => Ok(Band::R),
            "g" | "green" => Ok(Band::G),
            "b" | "blue" => Ok(Band::B),
            "evi" => Ok(Band::Evi),
            "ndvi" => Ok(Band::Ndvi),
            "entropy" => Ok(Band::Entropy),
            _ => Err(Error::Unknown { kind: "band", name: s.to_string() }),
        }
    }
}

/// Six co-registered channels in [`Band::ALL`] order plus a class label.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiBandImage {
    bands: Vec<RasterBand>,
    pub label: usize,
}

impl MultiBandImage {
    pub fn new(bands: Vec<RasterBand>, label: usize) -> Result<Self> {
        if bands.len() != Band::ALL.len() {
            return Err(Error::shape(format!("expected 6 bands, got {}", bands.len())));
        }
        if bands.iter().any(|b| !b.same_shape(&bands[0])) {
            return Err(Error::shape("bands differ in size"));
        }
        Ok(Self { bands, label })
    }

    pub fn band(&self, band: Band) -> &RasterBand {
        &self.bands[band.index()]
    }

    pub fn bands(&self) -> &[RasterBand] {
        &self.bands
    }

    pub fn height(&self) -> usize {
        self.bands[0].height
    }

    pub fn width(&self) -> usize {
        self.bands[0].width
    }

    /// Every channel min-max scaled to `[0, 1]` within this image.
    pub fn scaled_for_model(&self) -> MultiBandImage {
        MultiBandImage {
            bands: self.bands.iter().map(RasterBand::rescaled_unit).collect(),
            label: self.label,
        }
    }
}

fn check_same_shape(bands: &[&RasterBand]) -> Result<()> {
    if bands.iter().any(|b| !b.same_shape(bands[0])) {
        return Err(Error::shape(format!(
            "bands differ in size: {:?}",
            bands.iter().map(|b| (b.height, b.width)).collect::<Vec<_>>()
        )));
    }
    Ok(())
}

/// `(NIR - Red) / (NIR + Red + 1e-8)`.
pub fn compute_ndvi(nir: &RasterBand, red: &RasterBand) -> Result<RasterBand> {
    check_same_shape(&[nir, red])?;
    let values = nir
        .values
        .iter()
        .zip(&red.values)
        .map(|(&n, &r)| (n - r) / (n + r + NDVI_EPS))
        .collect();
    RasterBand::new(nir.height, nir.width, values, ValueRange::Raw)
}

/// `2.5 (NIR - Red) / (NIR + 6 Red - 7.5 Blue + 1)`, clamped to `[-1, 1]`
/// and zeroed where the denominator is near zero.
pub fn compute_evi(nir: &RasterBand, red: &RasterBand, blue: &RasterBand) -> Result<RasterBand> {
    check_same_shape(&[nir, red, blue])?;
    let values = (0..nir.len())
        .map(|i| {
            let (n, r, b) = (nir.values[i], red.values[i], blue.values[i]);
            let den = n + 6.0 * r - 7.5 * b + 1.0;
            if den.abs() <= EVI_DENOM_GUARD {
                0.0
            } else {
                (2.5 * (n - r) / den).clamp(-1.0, 1.0)
            }
        })
        .collect();
    RasterBand::new(nir.height, nir.width, values, ValueRange::Raw)
}

/// Offsets `(dy, dx)` with `dy^2 + dx^2 <= r^2`.
pub fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dy * dy + dx * dx <= r * r {
                out.push((dy, dx));
            }
        }
    }
    out
}

/// Equal-weight grayscale quantised to 8 bits. Each band is first brought to
/// `[0, 1]` according to its declared range; `Raw` bands share one joint
/// min-max so relative brightness between them is kept.
pub fn grayscale_u8(r: &RasterBand, g: &RasterBand, b: &RasterBand) -> Result<Vec<u8>> {
    check_same_shape(&[r, g, b])?;
    let (lo, hi) = [r, g, b]
        .iter()
        .filter(|band| band.range == ValueRange::Raw)
        .map(|band| band.min_max())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (c, d)| (a.min(c), b.max(d)));
    let to_unit = |band: &RasterBand, v: f64| match band.range {
        ValueRange::Unit => v,
        ValueRange::Byte => v / 255.0,
        ValueRange::Raw if hi > lo => (v - lo) / (hi - lo),
        ValueRange::Raw => 0.0,
    };
    Ok((0..r.len())
        .map(|i| {
            let gray =
                (to_unit(r, r.values[i]) + to_unit(g, g.values[i]) + to_unit(b, b.values[i])) / 3.0;
            (gray.clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect())
}

/// Shannon entropy (bits) of the 8-bit histogram inside a disk window around
/// every pixel, with reflected borders.
///
/// The histogram slides along each row: moving one pixel right removes the
/// left edge of every disk row and adds the new right edge, and the running
/// `sum c log2 c` is updated per count change.
pub fn local_entropy(
    gray: &[u8],
    height: usize,
    width: usize,
    radius: usize,
    exec: Exec,
) -> Result<Vec<f64>> {
    if gray.len() != height * width {
        return Err(Error::shape("gray buffer does not match dimensions"));
    }
    let r = radius as isize;
    // half-width of the disk on each row offset
    let spans: Vec<(isize, isize)> = (-r..=r)
        .map(|dy| {
            let w = ((r * r - dy * dy) as f64).sqrt().floor() as isize;
            (dy, w)
        })
        .collect();
    let n: usize = spans.iter().map(|&(_, w)| (2 * w + 1) as usize).sum();
    let clogc: Vec<f64> =
        (0..=n).map(|c| if c == 0 { 0.0 } else { c as f64 * (c as f64).log2() }).collect();
    let log_n = (n as f64).log2();
    let px = |y: isize, x: isize| {
        gray[reflect_index(y, height) * width + reflect_index(x, width)] as usize
    };

    let rows = par::map_range(exec, height, |y| {
        let y = y as isize;
        let mut hist = [0usize; 256];
        let mut s = 0.0;
        let bump = |hist: &mut [usize; 256], s: &mut f64, v: usize, up: bool| {
            let c = hist[v];
            let c2 = if up { c + 1 } else { c - 1 };
            *s += clogc[c2] - clogc[c];
            hist[v] = c2;
        };
        for &(dy, w) in &spans {
            for dx in -w..=w {
                bump(&mut hist, &mut s, px(y + dy, dx), true);
            }
        }
        let mut row = Vec::with_capacity(width);
        row.push((log_n - s / n as f64).max(0.0));
        for x in 1..width as isize {
            for &(dy, w) in &spans {
                bump(&mut hist, &mut s, px(y + dy, x - 1 - w), false);
                bump(&mut hist, &mut s, px(y + dy, x + w), true);
            }
            row.push((log_n - s / n as f64).max(0.0));
        }
        row
    });
    Ok(rows.into_iter().flatten().collect())
}

/// Texture channel: local entropy of the grayscale image over a radius-5
/// disk, min-max normalised to `[0, 1]` per image (all zeros when flat).
pub fn entropy_map(r: &RasterBand, g: &RasterBand, b: &RasterBand) -> Result<RasterBand> {
    entropy_map_with(r, g, b, Exec::default())
}

pub fn entropy_map_with(
    r: &RasterBand,
    g: &RasterBand,
    b: &RasterBand,
    exec: Exec,
) -> Result<RasterBand> {
    if r.height < 3 || r.width < 3 {
        return Err(Error::shape(format!(
            "entropy filter needs at least 3x3 pixels, got {}x{}",
            r.height, r.width
        )));
    }
    let gray = grayscale_u8(r, g, b)?;
    let ent = local_entropy(&gray, r.height, r.width, ENTROPY_DISK_RADIUS, exec)?;
    let raw = RasterBand::new(r.height, r.width, ent, ValueRange::Raw)?;
    Ok(raw.rescaled_unit())
}

/// Builds the six-channel image from visible and near-infrared reflectance.
pub fn engineer_features(
    red: RasterBand,
    green: RasterBand,
    blue: RasterBand,
    nir: &RasterBand,
    label: usize,
) -> Result<MultiBandImage> {
    let evi = compute_evi(nir, &red, &blue)?;
    let ndvi = compute_ndvi(nir, &red)?;
    let ent = entropy_map(&red, &green, &blue)?;
    MultiBandImage::new(vec![red, green, blue, evi, ndvi, ent], label)
}

/// Non-overlapping `p x p` tiles of each band, flattened row-major; tiles
/// are ordered row-major over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub grid_h: usize,
    pub grid_w: usize,
    pub patch_size: usize,
    /// `patches[band][patch]` is a `p*p` vector.
    pub patches: Vec<Vec<Vec<f64>>>,
}

impl PatchGrid {
    pub fn num_patches(&self) -> usize {
        self.grid_h * self.grid_w
    }

    /// Inverse of patch extraction for one band.
    pub fn reassemble(&self, band: usize) -> Vec<f64> {
        let p = self.patch_size;
        let w = self.grid_w * p;
        let mut out = vec![0.0; self.grid_h * p * w];
        for (k, patch) in self.patches[band].iter().enumerate() {
            let (gy, gx) = (k / self.grid_w, k % self.grid_w);
            for (i, &v) in patch.iter().enumerate() {
                out[(gy * p + i / p) * w + gx * p + i % p] = v;
            }
        }
        out
    }
}

/// Tiles of a single band.
pub fn band_patches(band: &RasterBand, p: usize) -> Result<Vec<Vec<f64>>> {
    if p == 0 || !band.height.is_multiple_of(p) || !band.width.is_multiple_of(p) {
        return Err(Error::shape(format!(
            "patch size {p} does not tile a {}x{} image",
            band.height, band.width
        )));
    }
    let (gh, gw) = (band.height / p, band.width / p);
    Ok((0..gh * gw)
        .map(|k| {
            let (gy, gx) = (k / gw, k % gw);
            let mut v = Vec::with_capacity(p * p);
            for y in gy * p..(gy + 1) * p {
                v.extend_from_slice(&band.values[y * band.width + gx * p..y * band.width + (gx + 1) * p]);
            }
            v
        })
        .collect())
}

pub fn extract_patches(image: &MultiBandImage, p: usize) -> Result<PatchGrid> {
    let patches = image.bands.iter().map(|b| band_patches(b, p)).collect::<Result<Vec<_>>>()?;
    Ok(PatchGrid {
        grid_h: image.height() / p,
        grid_w: image.width() / p,
        patch_size: p,
        patches,
    })
}
