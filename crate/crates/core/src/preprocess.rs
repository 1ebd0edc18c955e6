//! Spectral preprocessing: band standardization and PCA reduction.

use crate::data_io::HsiCube;
use crate::error::{Error, Result};
use crate::linalg::{jacobi_eigh, Mat};

/// Fitted PCA basis. `components` rows are the principal axes (b x B),
/// orthonormal; `explained_variance` is non-increasing.
#[derive(Debug, Clone)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    pub components: Mat,
    pub explained_variance: Vec<f64>,
}

/// Z-score every band across pixels using the population (1/n) variance.
/// Constant bands map to all-zero.
pub fn standardize_bands(cube: &HsiCube) -> Result<HsiCube> {
    let n = cube.num_pixels();
    if n == 0 {
        return Err(Error::Dimension("empty cube".into()));
    }
    let mut samples = vec![0.0; cube.samples.len()];
    for b in 0..cube.bands {
        let band = cube.band(b);
        let mean = band.iter().sum::<f64>() / n as f64;
        let var = band.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let out = &mut samples[b * n..(b + 1) * n];
        if var > 0.0 {
            let inv_std = 1.0 / var.sqrt();
            for (o, v) in out.iter_mut().zip(band) {
                *o = (v - mean) * inv_std;
            }
        }
        // Zero-variance bands stay all-zero.
    }
    let mut out = HsiCube::new(cube.width, cube.height, cube.bands, samples)?;
    out.band_names = cube.band_names.clone();
    Ok(out)
}

/// Project the cube onto the smallest set of leading principal components
/// whose cumulative explained-variance fraction reaches `variance_target`.
pub fn pca_reduce(cube: &HsiCube, variance_target: f64) -> Result<(HsiCube, PcaModel)> {
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "variance_target {variance_target} outside (0, 1]"
        )));
    }
    let n = cube.num_pixels();
    let num_bands = cube.bands;
    if n == 0 || num_bands == 0 {
        return Err(Error::Dimension("empty cube".into()));
    }

    let means: Vec<f64> = (0..num_bands)
        .map(|b| cube.band(b).iter().sum::<f64>() / n as f64)
        .collect();

    // Population covariance over centered bands; bands are contiguous slices
    // so the pair loop stays cache-friendly.
    let mut cov = Mat::zeros(num_bands, num_bands);
    for (i, &mi) in means.iter().enumerate() {
        let bi = cube.band(i);
        for (j, &mj) in means.iter().enumerate().skip(i) {
            let bj = cube.band(j);
            let dot: f64 = bi.iter().zip(bj).map(|(a, b)| (a - mi) * (b - mj)).sum();
            let c = dot / n as f64;
            cov.set(i, j, c);
            cov.set(j, i, c);
        }
    }

    let (raw_values, mut vectors) = jacobi_eigh(&cov);
    let values: Vec<f64> = raw_values.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return Err(Error::Numerical(
            "degenerate covariance: data has no variance".into(),
        ));
    }

    // Canonical sign: the entry of largest magnitude in each axis is positive.
    for k in 0..num_bands {
        let row = vectors.row_mut(k);
        let mut arg = 0;
        for (j, v) in row.iter().enumerate() {
            if v.abs() > row[arg].abs() {
                arg = j;
            }
        }
        if row[arg] < 0.0 {
            for v in row.iter_mut() {
                *v = -*v;
            }
        }
    }

    let mut keep = num_bands;
    let mut cumulative = 0.0;
    for (k, &v) in values.iter().enumerate() {
        cumulative += v;
        // The final component always closes the target exactly.
        let fraction = if k + 1 == num_bands {
            1.0
        } else {
            cumulative / total
        };
        if fraction >= variance_target {
            keep = k + 1;
            break;
        }
    }

    let mut components = Mat::zeros(keep, num_bands);
    for k in 0..keep {
        components.row_mut(k).copy_from_slice(vectors.row(k));
    }

    // Project: out_k[p] = sum_b comp[k][b] * (band_b[p] - mean_b).
    let mut samples = vec![0.0; keep * n];
    for k in 0..keep {
        let out = &mut samples[k * n..(k + 1) * n];
        for (b, &mu) in means.iter().enumerate() {
            let w = components.get(k, b);
            if w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(cube.band(b)) {
                *o += w * (v - mu);
            }
        }
    }

    let reduced = HsiCube::new(cube.width, cube.height, keep, samples)?;
    let model = PcaModel {
        mean: means,
        components,
        explained_variance: values[..keep].to_vec(),
    };
    Ok((reduced, model))
}
