//! Superpixel segmentation and per-superpixel feature extraction.
//!
//! SLIC runs on the first principal component only. After the usual
//! local-k-means iterations, connectivity enforcement merges stray fragments
//! into their largest adjacent region so that every superpixel is a single
//! 4-connected area. Downstream stages consume the actual superpixel count N,
//! which may differ from the requested target.

use std::collections::BTreeSet;

use crate::data_io::HsiCube;
use crate::error::{Error, Result};
use crate::linalg::{sq_distance, Mat};
use crate::propagation::SoftLabelMatrix;

/// A complete segmentation: per-pixel assignment plus derived per-superpixel
/// pixel lists and the spatial adjacency structure (4-connectivity).
#[derive(Debug, Clone)]
pub struct SuperpixelSegmentation {
    pub width: usize,
    pub height: usize,
    /// Superpixel id per pixel, row-major, in `0..num_superpixels`.
    pub assignment: Vec<u32>,
    pub num_superpixels: usize,
    /// Pixel coordinates `(x, y)` of every superpixel.
    pub pixel_lists: Vec<Vec<(u32, u32)>>,
    /// Sorted ids of spatially adjacent superpixels; symmetric, irreflexive.
    pub adjacency_sets: Vec<Vec<u32>>,
}

impl SuperpixelSegmentation {
    /// Build the derived structures from a raw assignment and validate the
    /// segmentation invariants: ids form a gapless range, no superpixel is
    /// empty, and every superpixel is 4-connected.
    pub fn from_assignment(width: usize, height: usize, assignment: Vec<u32>) -> Result<Self> {
        if assignment.len() != width * height {
            return Err(Error::Dimension(format!(
                "assignment length {} does not equal {width}x{height}",
                assignment.len()
            )));
        }
        let n = match assignment.iter().max() {
            Some(&m) => m as usize + 1,
            None => return Err(Error::Dimension("empty assignment".into())),
        };

        let mut pixel_lists: Vec<Vec<(u32, u32)>> = vec![Vec::new(); n];
        for y in 0..height {
            for x in 0..width {
                let k = assignment[y * width + x] as usize;
                pixel_lists[k].push((x as u32, y as u32));
            }
        }
        if let Some(empty) = pixel_lists.iter().position(|l| l.is_empty()) {
            return Err(Error::InvalidArgument(format!(
                "superpixel {empty} has no pixels"
            )));
        }

        let mut adjacency: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); n];
        for y in 0..height {
            for x in 0..width {
                let a = assignment[y * width + x];
                if x + 1 < width {
                    let b = assignment[y * width + x + 1];
                    if a != b {
                        adjacency[a as usize].insert(b);
                        adjacency[b as usize].insert(a);
                    }
                }
                if y + 1 < height {
                    let b = assignment[(y + 1) * width + x];
                    if a != b {
                        adjacency[a as usize].insert(b);
                        adjacency[b as usize].insert(a);
                    }
                }
            }
        }

        let seg = SuperpixelSegmentation {
            width,
            height,
            assignment,
            num_superpixels: n,
            pixel_lists,
            adjacency_sets: adjacency
                .into_iter()
                .map(|s| s.into_iter().collect())
                .collect(),
        };
        seg.check_connected()?;
        Ok(seg)
    }

    fn check_connected(&self) -> Result<()> {
        let mut visited = vec![false; self.width * self.height];
        for (k, pixels) in self.pixel_lists.iter().enumerate() {
            // Flood fill from the first pixel; all pixels of k must be reached.
            let (sx, sy) = pixels[0];
            let mut stack = vec![(sx as usize, sy as usize)];
            visited[sy as usize * self.width + sx as usize] = true;
            let mut reached = 1usize;
            while let Some((x, y)) = stack.pop() {
                for (nx, ny) in neighbors4(x, y, self.width, self.height) {
                    let idx = ny * self.width + nx;
                    if !visited[idx] && self.assignment[idx] as usize == k {
                        visited[idx] = true;
                        reached += 1;
                        stack.push((nx, ny));
                    }
                }
            }
            if reached != pixels.len() {
                return Err(Error::InvalidArgument(format!(
                    "superpixel {k} is not 4-connected ({reached} of {} pixels reachable)",
                    pixels.len()
                )));
            }
        }
        Ok(())
    }
}

#[inline]
fn neighbors4(
    x: usize,
    y: usize,
    width: usize,
    height: usize,
) -> impl Iterator<Item = (usize, usize)> {
    let mut out = [(0usize, 0usize); 4];
    let mut n = 0;
    if x > 0 {
        out[n] = (x - 1, y);
        n += 1;
    }
    if x + 1 < width {
        out[n] = (x + 1, y);
        n += 1;
    }
    if y > 0 {
        out[n] = (x, y - 1);
        n += 1;
    }
    if y + 1 < height {
        out[n] = (x, y + 1);
        n += 1;
    }
    out.into_iter().take(n)
}

/// Superpixel statistical descriptors used as graph features.
#[derive(Debug, Clone)]
pub struct SuperpixelFeatures {
    /// Mean spectral vector per superpixel (N x b).
    pub mean: Mat,
    /// Neighborhood-smoothed means (N x b).
    pub spatial_mean: Mat,
    /// Mean pixel coordinates (N x 2).
    pub centroid: Mat,
    /// Smoothing scalar used for the spatial means.
    pub h: f64,
}

/// Which composite to form from two distance matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompositeMode {
    Multiplicative,
    Additive,
}

/// Dense symmetric matrix of squared feature distances for one view.
#[derive(Debug, Clone)]
pub struct FeatureDistanceMatrix {
    pub values: Mat,
    pub view_tag: String,
}

impl FeatureDistanceMatrix {
    pub fn len(&self) -> usize {
        self.values.rows
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows == 0
    }
}

const SLIC_ITERATIONS: usize = 10;

/// SLIC on a single scalar channel. `target_count` is the requested number of
/// superpixels; the returned segmentation reports the actual count.
pub fn slic_segment(
    pc1: &[f64],
    width: usize,
    height: usize,
    target_count: usize,
    compactness: f64,
) -> Result<SuperpixelSegmentation> {
    let n_pixels = width * height;
    if pc1.len() != n_pixels {
        return Err(Error::Dimension(format!(
            "pc1 length {} does not equal {width}x{height}",
            pc1.len()
        )));
    }
    if target_count == 0 || target_count > n_pixels {
        return Err(Error::InvalidArgument(format!(
            "superpixel count {target_count} out of range 1..={n_pixels}"
        )));
    }

    let spacing = (n_pixels as f64 / target_count as f64).sqrt();
    let nx = ((width as f64 / spacing).round() as usize).clamp(1, width);
    let ny = ((height as f64 / spacing).round() as usize).clamp(1, height);

    // Grid-seeded centers at the centroid of each seed cell: (x, y, color).
    // Centroid seeding avoids exact distance ties on the integer pixel grid.
    let mut centers: Vec<(f64, f64, f64)> = Vec::with_capacity(nx * ny);
    for gy in 0..ny {
        for gx in 0..nx {
            let x0 = gx * width / nx;
            let x1 = (gx + 1) * width / nx;
            let y0 = gy * height / ny;
            let y1 = (gy + 1) * height / ny;
            let cx = (x0 + x1 - 1) as f64 / 2.0;
            let cy = (y0 + y1 - 1) as f64 / 2.0;
            let px = (cx.round() as usize).min(width - 1);
            let py = (cy.round() as usize).min(height - 1);
            centers.push((cx, cy, pc1[py * width + px]));
        }
    }

    // Start from the seeding grid so every pixel is always assigned.
    let mut labels: Vec<u32> = (0..n_pixels)
        .map(|p| {
            let (x, y) = (p % width, p / width);
            let gx = (x * nx / width).min(nx - 1);
            let gy = (y * ny / height).min(ny - 1);
            (gy * nx + gx) as u32
        })
        .collect();

    let m2 = compactness * compactness;
    let inv_s2 = 1.0 / (spacing * spacing);
    let window = (2.0 * spacing).ceil() as isize;

    for _ in 0..SLIC_ITERATIONS {
        let mut best = vec![f64::INFINITY; n_pixels];
        let mut next = labels.clone();
        for (c, &(cx, cy, cc)) in centers.iter().enumerate() {
            let x0 = ((cx as isize) - window).max(0) as usize;
            let x1 = (((cx as isize) + window) as usize).min(width - 1);
            let y0 = ((cy as isize) - window).max(0) as usize;
            let y1 = (((cy as isize) + window) as usize).min(height - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let p = y * width + x;
                    let dc = pc1[p] - cc;
                    let dx = x as f64 - cx;
                    let dy = y as f64 - cy;
                    let d = dc * dc + (dx * dx + dy * dy) * inv_s2 * m2;
                    if d < best[p] {
                        best[p] = d;
                        next[p] = c as u32;
                    }
                }
            }
        }
        labels = next;

        // Recompute centers; clusters that captured nothing keep their seat.
        let mut sum = vec![(0.0f64, 0.0f64, 0.0f64, 0usize); centers.len()];
        for p in 0..n_pixels {
            let c = labels[p] as usize;
            let (x, y) = ((p % width) as f64, (p / width) as f64);
            sum[c].0 += x;
            sum[c].1 += y;
            sum[c].2 += pc1[p];
            sum[c].3 += 1;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let (sx, sy, sc, count) = sum[c];
            if count > 0 {
                let inv = 1.0 / count as f64;
                *center = (sx * inv, sy * inv, sc * inv);
            }
        }
    }

    let merged = enforce_connectivity(&labels, width, height);
    SuperpixelSegmentation::from_assignment(width, height, merged)
}

/// Merge every fragment that is not its label's largest connected component
/// into its largest adjacent region, then compact the label range.
fn enforce_connectivity(labels: &[u32], width: usize, height: usize) -> Vec<u32> {
    let n_pixels = width * height;

    // Connected components of the raw assignment.
    let mut comp = vec![usize::MAX; n_pixels];
    let mut comp_label: Vec<u32> = Vec::new();
    let mut comp_size: Vec<usize> = Vec::new();
    for start in 0..n_pixels {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = comp_label.len();
        let label = labels[start];
        comp_label.push(label);
        let mut stack = vec![start];
        comp[start] = id;
        let mut size = 0usize;
        while let Some(p) = stack.pop() {
            size += 1;
            let (x, y) = (p % width, p / width);
            for (nx2, ny2) in neighbors4(x, y, width, height) {
                let q = ny2 * width + nx2;
                if comp[q] == usize::MAX && labels[q] == label {
                    comp[q] = id;
                    stack.push(q);
                }
            }
        }
        comp_size.push(size);
    }
    let n_comps = comp_label.len();

    // Component adjacency.
    let mut comp_adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_comps];
    for y in 0..height {
        for x in 0..width {
            let a = comp[y * width + x];
            if x + 1 < width {
                let b = comp[y * width + x + 1];
                if a != b {
                    comp_adj[a].insert(b);
                    comp_adj[b].insert(a);
                }
            }
            if y + 1 < height {
                let b = comp[(y + 1) * width + x];
                if a != b {
                    comp_adj[a].insert(b);
                    comp_adj[b].insert(a);
                }
            }
        }
    }

    // The largest component of each label keeps it (ties: lower comp id).
    let mut keeper_of_label: Vec<Option<usize>> =
        vec![None; labels.iter().copied().max().unwrap_or(0) as usize + 1];
    for c in 0..n_comps {
        let l = comp_label[c] as usize;
        match keeper_of_label[l] {
            Some(k) if comp_size[k] >= comp_size[c] => {}
            _ => keeper_of_label[l] = Some(c),
        }
    }
    let mut is_keeper = vec![false; n_comps];
    for k in keeper_of_label.iter().flatten() {
        is_keeper[*k] = true;
    }

    // Union-find over components; merging adjacent regions keeps every union
    // 4-connected. Keeper-less roots are repeatedly glued to their largest
    // adjacent region.
    let mut parent: Vec<usize> = (0..n_comps).collect();
    let mut members: Vec<Vec<usize>> = (0..n_comps).map(|c| vec![c]).collect();
    let mut root_size = comp_size.clone();
    let mut root_keeper: Vec<Option<usize>> = (0..n_comps)
        .map(|c| if is_keeper[c] { Some(c) } else { None })
        .collect();

    fn find(parent: &mut [usize], mut c: usize) -> usize {
        while parent[c] != c {
            parent[c] = parent[parent[c]];
            c = parent[c];
        }
        c
    }

    let mut pending: std::collections::VecDeque<usize> = (0..n_comps).collect();
    while let Some(c) = pending.pop_front() {
        let r = find(&mut parent, c);
        if root_keeper[r].is_some() {
            continue;
        }
        // Largest adjacent root; ties broken by smaller root id.
        let mut best: Option<(usize, usize)> = None;
        for &m in &members[r] {
            for &a in &comp_adj[m] {
                let ra = find(&mut parent, a);
                if ra == r {
                    continue;
                }
                let candidate = (root_size[ra], ra);
                best = match best {
                    None => Some(candidate),
                    Some((bs, bid)) => {
                        if candidate.0 > bs || (candidate.0 == bs && candidate.1 < bid) {
                            Some(candidate)
                        } else {
                            Some((bs, bid))
                        }
                    }
                };
            }
        }
        let Some((_, target)) = best else {
            // Single-region image; nothing to merge into.
            continue;
        };
        // Merge r into target (small-into-large member lists).
        parent[r] = target;
        root_size[target] += root_size[r];
        if root_keeper[target].is_none() {
            root_keeper[target] = root_keeper[r];
        }
        let moved = std::mem::take(&mut members[r]);
        members[target].extend(moved);
        if root_keeper[target].is_none() {
            // Still keeper-less; revisit via any member.
            pending.push_back(target);
        }
    }

    // Final labels: the keeper's original label, compacted to 0..N-1.
    let mut label_map: Vec<u32> = vec![u32::MAX; n_comps];
    let mut used: Vec<u32> = Vec::new();
    for (c, slot) in label_map.iter_mut().enumerate() {
        let r = find(&mut parent, c);
        let keeper = root_keeper[r].unwrap_or(r);
        *slot = comp_label[keeper];
    }
    let mut out = vec![0u32; n_pixels];
    let mut compact: Vec<u32> = vec![u32::MAX; keeper_of_label.len()];
    for p in 0..n_pixels {
        let raw = label_map[comp[p]];
        let slot = &mut compact[raw as usize];
        if *slot == u32::MAX {
            *slot = used.len() as u32;
            used.push(raw);
        }
        out[p] = *slot;
    }
    out
}

/// Average the training-pixel class indicators over every superpixel:
/// `Y^S[k][j]` is the fraction of the superpixel's pixels labeled class j+1.
pub fn regularize_labels(
    seg: &SuperpixelSegmentation,
    train_labels: &[u32],
    num_classes: usize,
) -> Result<SoftLabelMatrix> {
    if train_labels.len() != seg.width * seg.height {
        return Err(Error::Dimension(format!(
            "training labels length {} does not equal {}x{}",
            train_labels.len(),
            seg.width,
            seg.height
        )));
    }
    let n = seg.num_superpixels;
    let mut scores = Mat::zeros(n, num_classes);
    let mut labeled = vec![false; n];
    for (k, pixels) in seg.pixel_lists.iter().enumerate() {
        let row = scores.row_mut(k);
        let mut any = false;
        for &(x, y) in pixels {
            let v = train_labels[y as usize * seg.width + x as usize];
            if v != 0 {
                if v as usize > num_classes {
                    return Err(Error::InvalidArgument(format!(
                        "training label {v} exceeds num_classes {num_classes}"
                    )));
                }
                row[v as usize - 1] += 1.0;
                any = true;
            }
        }
        if any {
            let inv = 1.0 / pixels.len() as f64;
            for r in row.iter_mut() {
                *r *= inv;
            }
            labeled[k] = true;
        }
    }
    SoftLabelMatrix::new(scores, labeled)
}

/// Mean spectral vector of every superpixel.
pub fn mean_features(seg: &SuperpixelSegmentation, cube: &HsiCube) -> Result<Mat> {
    if cube.width != seg.width || cube.height != seg.height {
        return Err(Error::Dimension(format!(
            "cube {}x{} does not match segmentation {}x{}",
            cube.width, cube.height, seg.width, seg.height
        )));
    }
    let n = seg.num_superpixels;
    let np = cube.num_pixels();
    let mut out = Mat::zeros(n, cube.bands);
    for (k, pixels) in seg.pixel_lists.iter().enumerate() {
        let row = out.row_mut(k);
        for &(x, y) in pixels {
            let p = y as usize * cube.width + x as usize;
            for (b, r) in row.iter_mut().enumerate() {
                *r += cube.samples[b * np + p];
            }
        }
        let inv = 1.0 / pixels.len() as f64;
        for r in row.iter_mut() {
            *r *= inv;
        }
    }
    Ok(out)
}

/// Softmax-weighted average of the mean features over the spatial
/// neighborhood of each superpixel (the superpixel itself included).
pub fn spatial_mean_features(seg: &SuperpixelSegmentation, mean: &Mat, h: f64) -> Result<Mat> {
    if h <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "h must be positive, got {h}"
        )));
    }
    if mean.rows != seg.num_superpixels {
        return Err(Error::Dimension(format!(
            "mean rows {} do not match superpixel count {}",
            mean.rows, seg.num_superpixels
        )));
    }
    let n = seg.num_superpixels;
    let mut out = Mat::zeros(n, mean.cols);
    for k in 0..n {
        let mut total = 0.0;
        let row_k = mean.row(k).to_vec();
        // Self weight is exp(0) = 1, so the denominator is always positive.
        let accumulate = |a: usize, out_row: &mut [f64], total: &mut f64| {
            let w = (-sq_distance(mean.row(a), &row_k) / h).exp();
            for (o, v) in out_row.iter_mut().zip(mean.row(a)) {
                *o += w * v;
            }
            *total += w;
        };
        let mut acc = vec![0.0; mean.cols];
        accumulate(k, &mut acc, &mut total);
        for &a in &seg.adjacency_sets[k] {
            accumulate(a as usize, &mut acc, &mut total);
        }
        let inv = 1.0 / total;
        for (o, v) in out.row_mut(k).iter_mut().zip(&acc) {
            *o = v * inv;
        }
    }
    Ok(out)
}

/// Mean pixel coordinate (x, y) of every superpixel.
pub fn centroid_features(seg: &SuperpixelSegmentation) -> Mat {
    let n = seg.num_superpixels;
    let mut out = Mat::zeros(n, 2);
    for (k, pixels) in seg.pixel_lists.iter().enumerate() {
        let mut sx = 0.0;
        let mut sy = 0.0;
        for &(x, y) in pixels {
            sx += x as f64;
            sy += y as f64;
        }
        let inv = 1.0 / pixels.len() as f64;
        out.set(k, 0, sx * inv);
        out.set(k, 1, sy * inv);
    }
    out
}

/// All three feature descriptors in one pass.
pub fn compute_features(
    seg: &SuperpixelSegmentation,
    cube: &HsiCube,
    h: f64,
) -> Result<SuperpixelFeatures> {
    let mean = mean_features(seg, cube)?;
    let spatial_mean = spatial_mean_features(seg, &mean, h)?;
    let centroid = centroid_features(seg);
    Ok(SuperpixelFeatures {
        mean,
        spatial_mean,
        centroid,
        h,
    })
}

/// Squared Euclidean distances between all feature rows.
pub fn pairwise_sq_distances(features: &Mat, view_tag: &str) -> FeatureDistanceMatrix {
    let n = features.rows;
    let norms: Vec<f64> = (0..n)
        .map(|i| features.row(i).iter().map(|v| v * v).sum())
        .collect();
    let mut values = Mat::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let g = crate::linalg::dot(features.row(i), features.row(j));
            let d = (norms[i] + norms[j] - 2.0 * g).max(0.0);
            values.set(i, j, d);
            values.set(j, i, d);
        }
    }
    FeatureDistanceMatrix {
        values,
        view_tag: view_tag.to_string(),
    }
}

/// Mean of all N^2 entries; the per-view scale sigma_v.
pub fn feature_scale(z: &FeatureDistanceMatrix) -> f64 {
    let n = z.values.rows;
    if n == 0 {
        return 0.0;
    }
    z.values.data.iter().sum::<f64>() / (n * n) as f64
}

/// Combine a spectral-feature distance with the centroid distance, either
/// elementwise (multiplicative) or as `Zv + lambda * Zc` (additive). A missing
/// lambda defaults to the scale ratio sigma_v / sigma_c.
pub fn composite_distance(
    zv: &FeatureDistanceMatrix,
    zc: &FeatureDistanceMatrix,
    mode: CompositeMode,
    lambda: Option<f64>,
) -> Result<FeatureDistanceMatrix> {
    let n = zv.values.rows;
    if zc.values.rows != n {
        return Err(Error::Dimension(format!(
            "composite views disagree: {} vs {} rows",
            n, zc.values.rows
        )));
    }
    let (values, tag) = match mode {
        CompositeMode::Multiplicative => {
            let mut values = Mat::zeros(n, n);
            for (o, (a, b)) in values
                .data
                .iter_mut()
                .zip(zv.values.data.iter().zip(&zc.values.data))
            {
                *o = a * b;
            }
            (values, format!("{}*{}", zv.view_tag, zc.view_tag))
        }
        CompositeMode::Additive => {
            let lambda = match lambda {
                Some(l) if l >= 0.0 => l,
                Some(l) => {
                    return Err(Error::InvalidArgument(format!(
                        "additive composite lambda must be >= 0, got {l}"
                    )))
                }
                None => {
                    let sv = feature_scale(zv);
                    let sc = feature_scale(zc);
                    if sc == 0.0 {
                        return Err(Error::Numerical(
                            "cannot default lambda: centroid view has zero scale".into(),
                        ));
                    }
                    sv / sc
                }
            };
            let mut values = Mat::zeros(n, n);
            for (o, (a, b)) in values
                .data
                .iter_mut()
                .zip(zv.values.data.iter().zip(&zc.values.data))
            {
                *o = a + lambda * b;
            }
            (values, format!("{}+l{}", zv.view_tag, zc.view_tag))
        }
    };
    Ok(FeatureDistanceMatrix {
        values,
        view_tag: tag,
    })
}
