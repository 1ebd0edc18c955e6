//! Raster I/O: hyperspectral cubes, ground-truth maps, synthetic scenes and
//! rendered classification maps.
//!
//! Cubes live on disk as little-endian `f32` band-sequential raw data next to
//! a JSON sidecar describing the dimensions. Ground truth and predictions use
//! PGM (P2/P5), rendered maps use PPM (P6). All formats round-trip exactly.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A hyperspectral data cube: `width * height` pixels with `bands` spectral
/// samples each, stored band-sequential (all of band 0, then band 1, ...).
#[derive(Debug, Clone)]
pub struct HsiCube {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    /// Band-sequential samples, `bands * height * width` long; within a band
    /// the layout is row-major.
    pub samples: Vec<f64>,
    pub band_names: Option<Vec<String>>,
}

impl HsiCube {
    pub fn new(width: usize, height: usize, bands: usize, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != width * height * bands {
            return Err(Error::Dimension(format!(
                "cube samples length {} does not equal {}x{}x{}",
                samples.len(),
                width,
                height,
                bands
            )));
        }
        if let Some(idx) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "cube contains non-finite sample at flat index {idx}"
            )));
        }
        Ok(HsiCube {
            width,
            height,
            bands,
            samples,
            band_names: None,
        })
    }

    #[inline]
    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn sample(&self, x: usize, y: usize, band: usize) -> f64 {
        self.samples[band * self.num_pixels() + y * self.width + x]
    }

    /// All samples of one band, row-major.
    #[inline]
    pub fn band(&self, band: usize) -> &[f64] {
        let n = self.num_pixels();
        &self.samples[band * n..(band + 1) * n]
    }

    /// Spectral vector of the pixel at flat index `p = y*width + x`.
    pub fn spectrum(&self, p: usize) -> Vec<f64> {
        let n = self.num_pixels();
        (0..self.bands).map(|b| self.samples[b * n + p]).collect()
    }
}

/// Per-pixel class labels; 0 means unlabeled, classes run 1..=num_classes.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    pub num_classes: usize,
}

impl GroundTruth {
    /// Validates that at least one class is present and that every class in
    /// `1..=max` occurs at least once.
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Dimension(format!(
                "ground truth length {} does not equal {}x{}",
                labels.len(),
                width,
                height
            )));
        }
        let max = labels.iter().copied().max().unwrap_or(0);
        if max == 0 {
            return Err(Error::InvalidArgument(
                "no labeled class present in ground truth".into(),
            ));
        }
        let mut seen = vec![false; max as usize + 1];
        for &v in &labels {
            seen[v as usize] = true;
        }
        if let Some(missing) = (1..=max as usize).find(|&c| !seen[c]) {
            return Err(Error::InvalidArgument(format!(
                "class {missing} has no pixels (classes must cover 1..={max})"
            )));
        }
        Ok(GroundTruth {
            width,
            height,
            labels,
            num_classes: max as usize,
        })
    }
}

/// RGB colors for rendering class maps; `background` is class 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassPalette {
    pub background: [u8; 3],
    /// Color of class `i + 1`.
    pub classes: Vec<[u8; 3]>,
}

impl ClassPalette {
    pub fn validate(&self) -> Result<()> {
        let mut all: Vec<[u8; 3]> = Vec::with_capacity(self.classes.len() + 1);
        all.push(self.background);
        all.extend_from_slice(&self.classes);
        for i in 0..all.len() {
            for j in (i + 1)..all.len() {
                if all[i] == all[j] {
                    return Err(Error::InvalidArgument(format!(
                        "palette colors {i} and {j} are identical"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Deterministic palette of visually separated colors, black background.
    pub fn generate(num_classes: usize) -> Self {
        let mut classes = Vec::with_capacity(num_classes);
        for i in 0..num_classes {
            // Golden-angle hue stepping with alternating value levels.
            let hue = (i as f64 * 137.50776405) % 360.0;
            let value = if i % 2 == 0 { 0.95 } else { 0.65 };
            classes.push(hsv_to_rgb(hue, 0.85, value));
        }
        let palette = ClassPalette {
            background: [0, 0, 0],
            classes,
        };
        debug_assert!(palette.validate().is_ok());
        palette
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let palette: ClassPalette = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })?;
        palette.validate()?;
        Ok(palette)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [
        ((r + m) * 255.0).round() as u8,
        ((g + m) * 255.0).round() as u8,
        ((b + m) * 255.0).round() as u8,
    ]
}

// ---------------------------------------------------------------------------
// Cube sidecar + raw
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CubeHeader {
    width: usize,
    height: usize,
    bands: usize,
    dtype: String,
    interleave: String,
    data: String,
}

/// Load a cube from its JSON sidecar; the raw file path is resolved relative
/// to the sidecar's directory.
pub fn load_cube(header_path: &Path) -> Result<HsiCube> {
    let text = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let header: CubeHeader = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: header_path.into(),
        source: e,
    })?;
    if header.dtype != "f32" {
        return Err(Error::format(
            "cube header",
            header_path,
            format!("unsupported dtype {:?} (expected \"f32\")", header.dtype),
        ));
    }
    if header.interleave != "bsq" {
        return Err(Error::format(
            "cube header",
            header_path,
            format!(
                "unsupported interleave {:?} (expected \"bsq\")",
                header.interleave
            ),
        ));
    }
    let raw_path = header_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&header.data);
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let expected = header.width * header.height * header.bands * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            "cube raw",
            &raw_path,
            format!(
                "raw size {} bytes does not match header ({}x{}x{} f32 = {} bytes)",
                bytes.len(),
                header.width,
                header.height,
                header.bands,
                expected
            ),
        ));
    }
    let samples: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    HsiCube::new(header.width, header.height, header.bands, samples)
}

/// Write a cube as JSON sidecar + raw f32 BSQ. The raw file sits next to the
/// sidecar, named after its stem with a `.raw` extension.
pub fn save_cube(cube: &HsiCube, header_path: &Path) -> Result<()> {
    let stem = header_path
        .file_stem()
        .ok_or_else(|| Error::InvalidArgument("cube header path has no file stem".into()))?;
    let raw_name = format!("{}.raw", stem.to_string_lossy());
    let raw_path: PathBuf = header_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&raw_name);

    let header = CubeHeader {
        width: cube.width,
        height: cube.height,
        bands: cube.bands,
        dtype: "f32".into(),
        interleave: "bsq".into(),
        data: raw_name,
    };
    let text = serde_json::to_string_pretty(&header).map_err(|e| Error::Json {
        path: header_path.into(),
        source: e,
    })?;
    fs::write(header_path, text).map_err(|e| Error::io(header_path, e))?;

    let mut bytes = Vec::with_capacity(cube.samples.len() * 4);
    for &v in &cube.samples {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(&raw_path, bytes).map_err(|e| Error::io(&raw_path, e))
}

// ---------------------------------------------------------------------------
// PGM / PPM
// ---------------------------------------------------------------------------

/// Tokenized Netpbm header reader that skips whitespace and `#` comments.
struct PnmTokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PnmTokens<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        PnmTokens { bytes, pos: 0 }
    }

    fn skip_separators(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Option<&'a [u8]> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if self.pos > start {
            Some(&self.bytes[start..self.pos])
        } else {
            None
        }
    }

    fn number(&mut self) -> Option<u64> {
        let tok = self.token()?;
        std::str::from_utf8(tok).ok()?.parse().ok()
    }
}

/// Read a PGM image (P2 ascii or P5 binary). Returns `(width, height, maxval,
/// values)`. 16-bit P5 samples are big-endian per the Netpbm convention.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, u32, Vec<u32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::format("PGM", path, reason);
    if bytes.len() < 2 {
        return Err(bad("file too short".into()));
    }
    let magic = &bytes[..2];
    let binary = match magic {
        b"P2" => false,
        b"P5" => true,
        _ => {
            return Err(bad(format!(
                "unsupported magic {:?}",
                String::from_utf8_lossy(magic)
            )))
        }
    };
    let mut toks = PnmTokens::new(&bytes[2..]);
    let width = toks.number().ok_or_else(|| bad("missing width".into()))? as usize;
    let height = toks.number().ok_or_else(|| bad("missing height".into()))? as usize;
    let maxval = toks.number().ok_or_else(|| bad("missing maxval".into()))? as u64;
    if maxval == 0 || maxval > 65535 {
        return Err(bad(format!("maxval {maxval} out of range 1..=65535")));
    }
    let count = width * height;
    let mut values = Vec::with_capacity(count);
    if binary {
        // Exactly one whitespace byte separates the header from the raster.
        let data_start = 2 + toks.pos + 1;
        let per_sample = if maxval > 255 { 2 } else { 1 };
        let expected = count * per_sample;
        if bytes.len() < data_start + expected {
            return Err(bad(format!(
                "raster truncated: need {expected} bytes, have {}",
                bytes.len().saturating_sub(data_start)
            )));
        }
        let raster = &bytes[data_start..data_start + expected];
        if per_sample == 1 {
            values.extend(raster.iter().map(|&b| b as u32));
        } else {
            values.extend(
                raster
                    .chunks_exact(2)
                    .map(|c| u32::from(c[0]) << 8 | u32::from(c[1])),
            );
        }
    } else {
        for _ in 0..count {
            let v = toks
                .number()
                .ok_or_else(|| bad("raster truncated".into()))?;
            values.push(v as u32);
        }
    }
    if let Some(&v) = values.iter().find(|&&v| v as u64 > maxval) {
        return Err(bad(format!("sample {v} exceeds maxval {maxval}")));
    }
    Ok((width, height, maxval as u32, values))
}

/// Write a PGM in binary (P5) form; samples wider than 8 bits go big-endian.
pub fn write_pgm(
    path: &Path,
    width: usize,
    height: usize,
    maxval: u32,
    values: &[u32],
) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::Dimension(format!(
            "pgm values length {} does not equal {width}x{height}",
            values.len()
        )));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::InvalidArgument(format!(
            "pgm maxval {maxval} out of range 1..=65535"
        )));
    }
    if let Some(&v) = values.iter().find(|&&v| v > maxval) {
        return Err(Error::InvalidArgument(format!(
            "pgm sample {v} exceeds maxval {maxval}"
        )));
    }
    let mut out = Vec::with_capacity(values.len() * 2 + 32);
    write!(out, "P5\n{width} {height}\n{maxval}\n").map_err(|e| Error::io(path, e))?;
    if maxval > 255 {
        for &v in values {
            out.extend_from_slice(&(v as u16).to_be_bytes());
        }
    } else {
        out.extend(values.iter().map(|&v| v as u8));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Load a ground-truth map from PGM; pixel value = class id, 0 = unlabeled.
pub fn load_ground_truth(path: &Path) -> Result<GroundTruth> {
    let (width, height, _maxval, values) = read_pgm(path)?;
    GroundTruth::new(width, height, values)
}

/// Write a ground-truth (or prediction) map as P5 PGM.
pub fn save_ground_truth(gt: &GroundTruth, path: &Path) -> Result<()> {
    let maxval = (gt.num_classes as u32).max(1);
    write_pgm(path, gt.width, gt.height, maxval, &gt.labels)
}

/// Read a P6 PPM image into RGB triples.
pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<[u8; 3]>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::format("PPM", path, reason);
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(bad("expected P6 magic".into()));
    }
    let mut toks = PnmTokens::new(&bytes[2..]);
    let width = toks.number().ok_or_else(|| bad("missing width".into()))? as usize;
    let height = toks.number().ok_or_else(|| bad("missing height".into()))? as usize;
    let maxval = toks.number().ok_or_else(|| bad("missing maxval".into()))?;
    if maxval != 255 {
        return Err(bad(format!("unsupported maxval {maxval} (expected 255)")));
    }
    let data_start = 2 + toks.pos + 1;
    let expected = width * height * 3;
    if bytes.len() < data_start + expected {
        return Err(bad("raster truncated".into()));
    }
    let pixels = bytes[data_start..data_start + expected]
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    Ok((width, height, pixels))
}

/// Render a per-pixel class map as a P6 PPM using the palette; class 0 maps
/// to the background color.
pub fn render_label_map(
    labels: &[u32],
    width: usize,
    height: usize,
    palette: &ClassPalette,
    path: &Path,
) -> Result<()> {
    if labels.len() != width * height {
        return Err(Error::Dimension(format!(
            "label map length {} does not equal {width}x{height}",
            labels.len()
        )));
    }
    let mut out = Vec::with_capacity(labels.len() * 3 + 32);
    write!(out, "P6\n{width} {height}\n255\n").map_err(|e| Error::io(path, e))?;
    for &v in labels {
        let rgb = if v == 0 {
            palette.background
        } else {
            *palette
                .classes
                .get(v as usize - 1)
                .ok_or_else(|| Error::InvalidArgument(format!("class {v} has no palette color")))?
        };
        out.extend_from_slice(&rgb);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

/// Standard normal via Box-Muller on ChaCha uniforms; deterministic per seed.
fn sample_normal(rng: &mut ChaCha12Rng) -> f64 {
    let u1: f64 = loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            break u;
        }
    };
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Split the image into exactly `num_classes` contiguous rectangles: a grid
/// of horizontal strips, each strip cut into vertical blocks.
fn block_partition(width: usize, height: usize, num_classes: usize) -> Result<Vec<u32>> {
    let strips = (num_classes as f64).sqrt().floor() as usize;
    let strips = strips.max(1).min(height);
    // Distribute classes over strips as evenly as possible.
    let base = num_classes / strips;
    let extra = num_classes % strips;
    let mut labels = vec![0u32; width * height];
    let mut class: u32 = 1;
    let mut y0 = 0;
    for s in 0..strips {
        let blocks = base + usize::from(s < extra);
        let strip_h = (height - y0) / (strips - s);
        if strip_h == 0 || blocks > width {
            return Err(Error::InvalidArgument(format!(
                "infeasible block partition: {num_classes} classes on {width}x{height}"
            )));
        }
        let mut x0 = 0;
        for b in 0..blocks {
            let block_w = (width - x0) / (blocks - b);
            if block_w == 0 {
                return Err(Error::InvalidArgument(format!(
                    "infeasible block partition: {num_classes} classes on {width}x{height}"
                )));
            }
            for y in y0..y0 + strip_h {
                for x in x0..x0 + block_w {
                    labels[y * width + x] = class;
                }
            }
            class += 1;
            x0 += block_w;
        }
        y0 += strip_h;
    }
    Ok(labels)
}

/// Draw unit-norm spectral signatures with pairwise angles of at least 30
/// degrees, by rejection sampling.
fn random_signatures(bands: usize, count: usize, rng: &mut ChaCha12Rng) -> Result<Vec<Vec<f64>>> {
    let max_cos = (30.0f64).to_radians().cos();
    let mut sigs: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut attempts = 0;
    while sigs.len() < count {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::Numerical(format!(
                "could not place {count} signatures at >=30 degrees in {bands} bands"
            )));
        }
        let mut v: Vec<f64> = (0..bands).map(|_| sample_normal(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            continue;
        }
        for x in &mut v {
            *x /= norm;
        }
        if sigs
            .iter()
            .all(|s| s.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>().abs() <= max_cos)
        {
            sigs.push(v);
        }
    }
    Ok(sigs)
}

/// Generate a fully labeled synthetic scene of rectangular class blocks with
/// Gaussian noise. Samples are quantized to f32 so that saving and reloading
/// reproduces them bit-exactly.
pub fn generate_synthetic_scene(
    width: usize,
    height: usize,
    bands: usize,
    num_classes: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<(HsiCube, GroundTruth)> {
    if num_classes == 0 || num_classes > width * height {
        return Err(Error::InvalidArgument(format!(
            "num_classes {num_classes} out of range 1..={}",
            width * height
        )));
    }
    if noise_sigma < 0.0 {
        return Err(Error::InvalidArgument("noise_sigma must be >= 0".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let labels = block_partition(width, height, num_classes)?;
    let signatures = random_signatures(bands, num_classes, &mut rng)?;

    let n = width * height;
    let mut samples = vec![0.0f64; n * bands];
    for p in 0..n {
        let sig = &signatures[labels[p] as usize - 1];
        for b in 0..bands {
            let noise = if noise_sigma > 0.0 {
                noise_sigma * sample_normal(&mut rng)
            } else {
                0.0
            };
            samples[b * n + p] = (sig[b] + noise) as f32 as f64;
        }
    }
    let cube = HsiCube::new(width, height, bands, samples)?;
    let gt = GroundTruth::new(width, height, labels)?;
    Ok((cube, gt))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("mfgl-data-io-{tag}-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn cube_load_identity() {
        let dir = tmp_dir("identity");
        let header = dir.join("tiny.json");
        fs::write(
            &header,
            r#"{"width":2,"height":2,"bands":1,"dtype":"f32","interleave":"bsq","data":"tiny.raw"}"#,
        )
        .unwrap();
        let mut raw = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 4.0] {
            raw.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(dir.join("tiny.raw"), raw).unwrap();
        let cube = load_cube(&header).unwrap();
        assert_eq!(cube.samples, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!((cube.width, cube.height, cube.bands), (2, 2, 1));
    }

    #[test]
    fn cube_size_mismatch_is_error() {
        let dir = tmp_dir("mismatch");
        let header = dir.join("bad.json");
        fs::write(
            &header,
            r#"{"width":2,"height":2,"bands":2,"dtype":"f32","interleave":"bsq","data":"bad.raw"}"#,
        )
        .unwrap();
        fs::write(dir.join("bad.raw"), vec![0u8; 16]).unwrap();
        let err = load_cube(&header).unwrap_err();
        assert!(err.to_string().contains("does not match"), "{err}");
    }

    #[test]
    fn cube_rejects_non_finite_samples() {
        let dir = tmp_dir("nan");
        let header = dir.join("nan.json");
        fs::write(
            &header,
            r#"{"width":2,"height":1,"bands":1,"dtype":"f32","interleave":"bsq","data":"nan.raw"}"#,
        )
        .unwrap();
        let mut raw = 1.0f32.to_le_bytes().to_vec();
        raw.extend_from_slice(&f32::NAN.to_le_bytes());
        fs::write(dir.join("nan.raw"), raw).unwrap();
        let err = load_cube(&header).unwrap_err();
        assert!(err.to_string().contains("non-finite"), "{err}");
    }

    #[test]
    fn cube_rejects_unknown_header_keys() {
        let dir = tmp_dir("unknown");
        let header = dir.join("extra.json");
        fs::write(
            &header,
            r#"{"width":1,"height":1,"bands":1,"dtype":"f32","interleave":"bsq","data":"x.raw","compress":true}"#,
        )
        .unwrap();
        assert!(load_cube(&header).is_err());
    }

    #[test]
    fn cube_save_load_round_trip() {
        let dir = tmp_dir("roundtrip");
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for case in 0..5 {
            let (w, h, b) = (3 + case, 2 + case, 1 + case % 3);
            let samples: Vec<f64> = (0..w * h * b)
                .map(|_| (rng.random::<f64>() * 100.0 - 50.0) as f32 as f64)
                .collect();
            let cube = HsiCube::new(w, h, b, samples).unwrap();
            let header = dir.join(format!("case{case}.json"));
            save_cube(&cube, &header).unwrap();
            let loaded = load_cube(&header).unwrap();
            assert_eq!(
                loaded.samples, cube.samples,
                "case {case} not bit-identical"
            );
        }
    }

    #[test]
    fn pgm_p2_maps_values_directly() {
        let dir = tmp_dir("p2");
        let path = dir.join("gt.pgm");
        fs::write(&path, "P2\n# two by two\n2 2\n2\n0 1\n1 2\n").unwrap();
        let gt = load_ground_truth(&path).unwrap();
        assert_eq!(gt.labels, vec![0, 1, 1, 2]);
        assert_eq!(gt.num_classes, 2);
    }

    #[test]
    fn pgm_all_zero_is_error() {
        let dir = tmp_dir("zeros");
        let path = dir.join("zero.pgm");
        fs::write(&path, "P2\n2 1\n255\n0 0\n").unwrap();
        let err = load_ground_truth(&path).unwrap_err();
        assert!(err.to_string().contains("no labeled class"), "{err}");
    }

    #[test]
    fn pgm_p2_and_p5_agree() {
        let dir = tmp_dir("p2p5");
        let values = vec![0u32, 3, 1, 2, 2, 3];
        let p2_body: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        let p2 = dir.join("a.pgm");
        fs::write(&p2, format!("P2\n3 2\n3\n{}\n", p2_body.join(" "))).unwrap();
        let p5 = dir.join("b.pgm");
        write_pgm(&p5, 3, 2, 3, &values).unwrap();
        let a = load_ground_truth(&p2).unwrap();
        let b = load_ground_truth(&p5).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.num_classes, b.num_classes);
    }

    #[test]
    fn pgm_header_comments_and_truncation() {
        let dir = tmp_dir("pgm-edge");
        // Comments between any header tokens are legal.
        let commented = dir.join("comment.pgm");
        fs::write(
            &commented,
            "P2 # magic\n# a comment line\n2 # width\n1 2\n1 2\n",
        )
        .unwrap();
        let (w, h, maxval, values) = read_pgm(&commented).unwrap();
        assert_eq!((w, h, maxval), (2, 1, 2));
        assert_eq!(values, vec![1, 2]);

        // Truncated P5 raster is rejected.
        let truncated = dir.join("short.pgm");
        fs::write(&truncated, b"P5\n4 4\n255\n\x01\x02").unwrap();
        let err = read_pgm(&truncated).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");

        // maxval above the 16-bit ceiling is rejected.
        let wide = dir.join("wide.pgm");
        fs::write(&wide, "P2\n1 1\n70000\n1\n").unwrap();
        assert!(read_pgm(&wide).is_err());
    }

    #[test]
    fn pgm_16bit_round_trip() {
        let dir = tmp_dir("wide");
        let path = dir.join("wide.pgm");
        let values = vec![0u32, 300, 65535, 12];
        write_pgm(&path, 2, 2, 65535, &values).unwrap();
        let (w, h, maxval, back) = read_pgm(&path).unwrap();
        assert_eq!((w, h, maxval), (2, 2, 65535));
        assert_eq!(back, values);
    }

    #[test]
    fn render_round_trip_recovers_labels() {
        let dir = tmp_dir("render");
        let palette = ClassPalette::generate(4);
        palette.validate().unwrap();
        let labels = vec![0u32, 1, 2, 3, 4, 2];
        let path = dir.join("map.ppm");
        render_label_map(&labels, 3, 2, &palette, &path).unwrap();
        let (w, h, pixels) = read_ppm(&path).unwrap();
        assert_eq!((w, h), (3, 2));
        let recovered: Vec<u32> = pixels
            .iter()
            .map(|rgb| {
                if *rgb == palette.background {
                    0
                } else {
                    palette.classes.iter().position(|c| c == rgb).unwrap() as u32 + 1
                }
            })
            .collect();
        assert_eq!(recovered, labels);
    }

    #[test]
    fn render_unmapped_class_is_error() {
        let dir = tmp_dir("unmapped");
        let palette = ClassPalette::generate(1);
        let err = render_label_map(&[2], 1, 1, &palette, &dir.join("x.ppm")).unwrap_err();
        assert!(err.to_string().contains("no palette color"), "{err}");
    }

    #[test]
    fn synthetic_zero_noise_pixels_equal_signature() {
        let (cube, gt) = generate_synthetic_scene(8, 6, 5, 3, 0.0, 42).unwrap();
        // Every pixel of a class matches every other pixel of that class.
        for class in 1..=3u32 {
            let pixels: Vec<usize> = (0..gt.labels.len())
                .filter(|&p| gt.labels[p] == class)
                .collect();
            let first = cube.spectrum(pixels[0]);
            for &p in &pixels[1..] {
                assert_eq!(cube.spectrum(p), first, "class {class} not constant");
            }
        }
    }

    #[test]
    fn synthetic_deterministic_per_seed() {
        let (a, _) = generate_synthetic_scene(10, 10, 4, 4, 0.1, 99).unwrap();
        let (b, _) = generate_synthetic_scene(10, 10, 4, 4, 0.1, 99).unwrap();
        let (c, _) = generate_synthetic_scene(10, 10, 4, 4, 0.1, 100).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn synthetic_class_means_recover_signatures() {
        // Law of large numbers: per-class mean spectra approach the (noise-free)
        // signatures, which we recover from the zero-noise scene at the same seed.
        let sigma = 0.05;
        let (noisy, gt) = generate_synthetic_scene(60, 60, 20, 4, sigma, 7).unwrap();
        let (clean, _) = generate_synthetic_scene(60, 60, 20, 4, 0.0, 7).unwrap();
        for class in 1..=4u32 {
            let pixels: Vec<usize> = (0..gt.labels.len())
                .filter(|&p| gt.labels[p] == class)
                .collect();
            let n = pixels.len() as f64;
            let sig = clean.spectrum(pixels[0]);
            let mut mean = vec![0.0; 20];
            for &p in &pixels {
                for (m, v) in mean.iter_mut().zip(noisy.spectrum(p)) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= n;
            }
            let err: f64 = mean
                .iter()
                .zip(&sig)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let bound = 3.0 * sigma * (20.0f64).sqrt() / n.sqrt();
            assert!(err <= bound, "class {class}: err {err} > bound {bound}");
        }
    }

    #[test]
    fn synthetic_infeasible_partition_is_error() {
        assert!(generate_synthetic_scene(2, 1, 3, 3, 0.0, 1).is_err());
    }

    #[test]
    fn synthetic_blocks_are_rectangles_for_odd_counts() {
        for classes in [2usize, 3, 5, 7, 16] {
            let (_, gt) = generate_synthetic_scene(24, 18, 4, classes, 0.0, 3).unwrap();
            assert_eq!(gt.num_classes, classes);
            for class in 1..=classes as u32 {
                let xs: Vec<usize> = (0..gt.labels.len())
                    .filter(|&p| gt.labels[p] == class)
                    .map(|p| p % 24)
                    .collect();
                let ys: Vec<usize> = (0..gt.labels.len())
                    .filter(|&p| gt.labels[p] == class)
                    .map(|p| p / 24)
                    .collect();
                let (x0, x1) = (*xs.iter().min().unwrap(), *xs.iter().max().unwrap());
                let (y0, y1) = (*ys.iter().min().unwrap(), *ys.iter().max().unwrap());
                assert_eq!(
                    xs.len(),
                    (x1 - x0 + 1) * (y1 - y0 + 1),
                    "class {class} of {classes} is not a filled rectangle"
                );
            }
        }
    }
}
