//! QSAT dataset container, stratified splits, and a synthetic generator.
//!
//! QSAT layout (all integers little-endian):
//!
//! ```text
//! "QSAT" | u32 version | u32 count | u32 height | u32 width | u32 channels
//! channels x (u16 byte length, UTF-8 name)
//! u32 classes | classes x (u16 byte length, UTF-8 name)
//! count x (channels x height x width f32 rasters, channel-major | u8 label)
//! ```
//!
//! A file either carries the six model channels (`R G B EVI NDVI Entropy`,
//! any order) or at least `R G B NIR`, in which case the remaining channels
//! are engineered on load. Loaded rasters are tagged [`ValueRange::Raw`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{engineer_features, Band, MultiBandImage, RasterBand, ValueRange};
use crate::par::{self, Exec};

pub const QSAT_MAGIC: &[u8; 4] = b"QSAT";
pub const QSAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub images: Vec<MultiBandImage>,
}

impl Dataset {
    pub fn new(class_names: Vec<String>, images: Vec<MultiBandImage>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::invalid("dataset must contain at least one image"));
        }
        let (h, w) = (images[0].height(), images[0].width());
        if images.iter().any(|im| (im.height(), im.width()) != (h, w)) {
            return Err(Error::shape("all images must share one size".to_string()));
        }
        if let Some(im) = images.iter().find(|im| im.label >= class_names.len()) {
            return Err(Error::invalid(format!("label {} out of range for {} classes", im.label, class_names.len())));
        }
        Ok(Self { class_names, images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.images.iter().map(|im| im.label).collect()
    }

    pub fn height(&self) -> usize {
        self.images[0].height()
    }

    pub fn width(&self) -> usize {
        self.images[0].width()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset { class_names: self.class_names.clone(), images: indices.iter().map(|&i| self.images[i].clone()).collect() }
    }
}

/// Rounds every value to f32 and tags it raw, exactly as a load would.
pub fn storage_form(image: &MultiBandImage) -> Result<MultiBandImage> {
    let bands = image
        .bands()
        .iter()
        .map(|b| {
            let v = b.values().iter().map(|&x| x as f32 as f64).collect();
            RasterBand::new(b.height(), b.width(), v, ValueRange::Raw)
        })
        .collect::<Result<_>>()?;
    MultiBandImage::new(bands, image.label)
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format { what: "QSAT container", msg: msg.into() }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_name(r: &mut impl Read) -> Result<String> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    let mut s = vec![0u8; u16::from_le_bytes(b) as usize];
    r.read_exact(&mut s)?;
    String::from_utf8(s).map_err(|_| fmt_err("name is not UTF-8"))
}

fn write_name(w: &mut impl Write, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| Error::invalid(format!("name too long: {s}")))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QsatHeader {
    pub version: u32,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub channels: Vec<String>,
    pub class_names: Vec<String>,
}

enum Layout {
    /// Position of each model band among the stored channels.
    Direct([usize; 6]),
    /// Positions of R, G, B, NIR.
    Engineer([usize; 4]),
}

fn channel_position(channels: &[String], name: &str) -> Option<usize> {
    channels.iter().position(|c| c.eq_ignore_ascii_case(name))
}

fn layout(channels: &[String]) -> Result<Layout> {
    let direct: Option<Vec<usize>> = Band::ALL.iter().map(|b| channel_position(channels, b.name())).collect();
    if let Some(d) = direct {
        return Ok(Layout::Direct(d.try_into().expect("six bands")));
    }
    let eng: Option<Vec<usize>> = ["R", "G", "B", "NIR"].iter().map(|n| channel_position(channels, n)).collect();
    match eng {
        Some(e) => Ok(Layout::Engineer(e.try_into().expect("four bands"))),
        None => Err(fmt_err(format!("channels {channels:?} carry neither the six model bands nor R, G, B, NIR"))),
    }
}

/// Streaming reader; yields one engineered image per sample.
pub struct QsatReader<R> {
    inner: R,
    header: QsatHeader,
    layout: Layout,
    remaining: usize,
}

impl QsatReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: Read> QsatReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        inner.read_exact(&mut magic)?;
        if &magic != QSAT_MAGIC {
            return Err(fmt_err("bad magic"));
        }
        let version = read_u32(&mut inner)?;
        if version != QSAT_VERSION {
            return Err(fmt_err(format!("unsupported version {version}")));
        }
        let count = read_u32(&mut inner)? as usize;
        let height = read_u32(&mut inner)? as usize;
        let width = read_u32(&mut inner)? as usize;
        let nch = read_u32(&mut inner)? as usize;
        if count == 0 || height == 0 || width == 0 || nch == 0 {
            return Err(fmt_err("count, height, width and channels must be positive"));
        }
        let channels = (0..nch).map(|_| read_name(&mut inner)).collect::<Result<Vec<_>>>()?;
        let ncls = read_u32(&mut inner)? as usize;
        let class_names = (0..ncls).map(|_| read_name(&mut inner)).collect::<Result<Vec<_>>>()?;
        let layout = layout(&channels)?;
        let header = QsatHeader { version, count, height, width, channels, class_names };
        Ok(Self { inner, header, layout, remaining: count })
    }

    pub fn header(&self) -> &QsatHeader {
        &self.header
    }

    fn read_sample(&mut self) -> Result<MultiBandImage> {
        let (h, w) = (self.header.height, self.header.width);
        let mut buf = vec![0u8; h * w * 4];
        let mut rasters = Vec::with_capacity(self.header.channels.len());
        for _ in 0..self.header.channels.len() {
            self.inner.read_exact(&mut buf)?;
            let v = buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
            rasters.push(RasterBand::new(h, w, v, ValueRange::Raw)?);
        }
        let mut label = [0u8; 1];
        self.inner.read_exact(&mut label)?;
        let label = label[0] as usize;
        if label >= self.header.class_names.len() {
            return Err(fmt_err(format!("label {label} out of range")));
        }
        match self.layout {
            Layout::Direct(pos) => MultiBandImage::new(pos.iter().map(|&i| rasters[i].clone()).collect(), label),
            Layout::Engineer([r, g, b, n]) => {
                let img = engineer_features(rasters[r].clone(), rasters[g].clone(), rasters[b].clone(), &rasters[n], label)?;
                storage_form(&img)
            }
        }
    }
}

impl<R: Read> Iterator for QsatReader<R> {
    type Item = Result<MultiBandImage>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let item = self.read_sample();
        if item.is_err() {
            self.remaining = 0;
        }
        Some(item)
    }
}

pub fn read_qsat(path: &Path) -> Result<Dataset> {
    let reader = QsatReader::open(path)?;
    let class_names = reader.header().class_names.clone();
    let images = reader.collect::<Result<Vec<_>>>()?;
    Dataset::new(class_names, images)
}

/// Writes the six model channels.
pub fn write_qsat(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_qsat_to(&mut w, dataset)?;
    w.flush()?;
    Ok(())
}

pub fn write_qsat_to(w: &mut impl Write, dataset: &Dataset) -> Result<()> {
    w.write_all(QSAT_MAGIC)?;
    let count = u32::try_from(dataset.len()).map_err(|_| Error::invalid("too many samples"))?;
    for v in [QSAT_VERSION, count, dataset.height() as u32, dataset.width() as u32, Band::ALL.len() as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for b in Band::ALL {
        write_name(w, b.name())?;
    }
    w.write_all(&(dataset.num_classes() as u32).to_le_bytes())?;
    for c in &dataset.class_names {
        write_name(w, c)?;
    }
    for im in &dataset.images {
        for band in im.bands() {
            for &v in band.values() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        let label = u8::try_from(im.label).map_err(|_| Error::invalid("labels above 255 do not fit QSAT"))?;
        w.write_all(&[label])?;
    }
    Ok(())
}

/// How samples are partitioned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "scheme")]
pub enum SplitScheme {
    /// 70 / 15 / 15 per class.
    #[serde(rename = "eurosat-70-15-15")]
    Eurosat,
    /// Stratified 10% subsample, 80 / 20 train/test, then 20% of train held
    /// out for validation.
    #[serde(rename = "sat6-10pct-80-20")]
    Sat6,
    Custom { train: f64, val: f64, test: f64 },
}

impl FromStr for SplitScheme {
    type Err = Error;

    /// `eurosat-70-15-15`, `sat6-10pct-80-20` or `custom:TRAIN,VAL,TEST`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eurosat-70-15-15" => Ok(SplitScheme::Eurosat),
            "sat6-10pct-80-20" => Ok(SplitScheme::Sat6),
            _ => {
                let body = s.strip_prefix("custom:").ok_or_else(|| Error::Unknown { kind: "split scheme", name: s.into() })?;
                let f: Vec<f64> = body
                    .split(',')
                    .map(|x| x.trim().parse::<f64>().map_err(|_| Error::invalid(format!("bad split fraction `{x}`"))))
                    .collect::<Result<_>>()?;
                match f[..] {
                    [train, val, test] => Ok(SplitScheme::Custom { train, val, test }),
                    _ => Err(Error::invalid("custom split needs three fractions")),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn round_count(n: usize, f: f64) -> usize {
    ((n as f64 * f).round() as usize).min(n)
}

/// Stratified, seeded partition of sample indices. Each class is shuffled
/// on its own stream; per-class counts are rounded and the last split takes
/// the remainder. Index lists come back sorted.
pub fn make_splits(labels: &[usize], num_classes: usize, scheme: SplitScheme, seed: u64) -> Result<Splits> {
    if let SplitScheme::Custom { train, val, test } = scheme {
        if [train, val, test].iter().any(|f| !(0.0..=1.0).contains(f)) || ((train + val + test) - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("custom split fractions must lie in [0, 1] and sum to 1"));
        }
        if train == 0.0 {
            return Err(Error::invalid("custom split needs a non-empty training fraction"));
        }
    }
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(Error::invalid(format!("label {l} out of range for {num_classes} classes")));
        }
        by_class[l].push(i);
    }
    let mut out = Splits { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for (class, mut idx) in by_class.into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(class as u64);
        idx.shuffle(&mut rng);
        let n = idx.len();
        let (tr, va, te) = match scheme {
            SplitScheme::Eurosat => {
                let (a, b) = (round_count(n, 0.70), round_count(n, 0.15));
                (a, b, n - a - b)
            }
            SplitScheme::Custom { train, val, .. } => {
                let a = round_count(n, train);
                let b = round_count(n, val).min(n - a);
                (a, b, n - a - b)
            }
            SplitScheme::Sat6 => {
                let m = round_count(n, 0.10);
                let t = round_count(m, 0.80);
                let v = round_count(t, 0.20);
                (t - v, v, m - t)
            }
        };
        let wanted: Vec<bool> = match scheme {
            SplitScheme::Custom { train, val, test } => vec![train > 0.0, val > 0.0, test > 0.0],
            _ => vec![true; 3],
        };
        if [tr, va, te].iter().zip(&wanted).any(|(&c, &w)| w && c == 0) {
            return Err(Error::invalid(format!("class {class} has too few samples ({n}) for the split")));
        }
        out.train.extend_from_slice(&idx[..tr]);
        out.val.extend_from_slice(&idx[tr..tr + va]);
        // the SAT-6 subsample is the first m shuffled indices
        out.test.extend_from_slice(&idx[tr + va..tr + va + te]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

/// Per-class generator settings of [`synth_dataset`].
#[derive(Debug, Clone, Copy, PartialEq)]
struct ClassStyle {
    /// Share of rows covered by vegetation.
    vegetation: f64,
    /// Amplitude of the pixel noise.
    texture: f64,
}

fn class_style(class: usize, classes: usize) -> ClassStyle {
    ClassStyle {
        vegetation: (class + 1) as f64 / (classes + 1) as f64,
        texture: if class.is_multiple_of(2) { 0.015 } else { 0.06 },
    }
}

fn synth_image(seed: u64, index: usize, classes: usize, size: usize) -> Result<MultiBandImage> {
    let label = index % classes;
    let style = class_style(label, classes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let gain = rng.gen_range(0.85..1.15);
    let jitter = rng.gen_range(-0.04..0.04);
    let veg_rows = (((style.vegetation + jitter) * size as f64).round() as usize).min(size);
    let mut r = Vec::with_capacity(size * size);
    let mut g = Vec::with_capacity(size * size);
    let mut b = Vec::with_capacity(size * size);
    let mut nir = Vec::with_capacity(size * size);
    for y in 0..size {
        let veg = y < veg_rows;
        let (r0, g0, b0, n0) = if veg { (0.05, 0.10, 0.04, 0.50) } else { (0.25, 0.20, 0.15, 0.30) };
        for _ in 0..size {
            let mut px = |base: f64| -> f64 { (gain * base + style.texture * rng.gen_range(-1.0..1.0)).clamp(0.0, 1.0) };
            r.push(px(r0));
            g.push(px(g0));
            b.push(px(b0));
            nir.push(px(n0));
        }
    }
    let band = |v: Vec<f64>| RasterBand::new(size, size, v.into_iter().map(|x| x as f32 as f64).collect(), ValueRange::Raw);
    let img = engineer_features(band(r)?, band(g)?, band(b)?, &band(nir)?, label)?;
    storage_form(&img)
}

/// Deterministic six-channel images: class `k` has a vegetated top region
/// covering about `(k + 1) / (classes + 1)` of the rows and, alternating by
/// class, fine or coarse pixel noise. Labels cycle `0, 1, ..., classes - 1`.
/// Values are already in storage form, so a write/read round trip is exact.
pub fn synth_dataset(seed: u64, n: usize, classes: usize, size: usize) -> Result<Dataset> {
    synth_dataset_with(seed, n, classes, size, Exec::default())
}

pub fn synth_dataset_with(seed: u64, n: usize, classes: usize, size: usize, exec: Exec) -> Result<Dataset> {
    if !(2..=256).contains(&classes) {
        return Err(Error::invalid("synthetic data needs between 2 and 256 classes"));
    }
    if n == 0 || size < 3 {
        return Err(Error::invalid("synthetic data needs at least one image of at least 3x3 pixels"));
    }
    let images = par::try_map_range(exec, n, |i| synth_image(seed, i, classes, size))?;
    Dataset::new((0..classes).map(|k| format!("class-{k}")).collect(), images)
}
