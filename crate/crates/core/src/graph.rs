//! Affinity-graph learning.
//!
//! The closed-form row solution assigns each node its k nearest neighbors
//! with weights that decrease linearly in distance and sum to one; it is the
//! analytic minimizer of the row-wise graph objective and is scale-invariant
//! in the distances. Masked updates and feature-weight learning are Euclidean
//! projections onto the probabilistic simplex, computed exactly by
//! sort-and-threshold.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::superpixels::FeatureDistanceMatrix;

/// Sparse nonnegative weight matrix with zero diagonal. Rows hold
/// `(column, weight)` pairs sorted by column; weights of value zero are not
/// stored.
#[derive(Debug, Clone)]
pub struct AffinityGraph {
    pub rows: Vec<Vec<(u32, f64)>>,
    pub symmetric: bool,
}

impl AffinityGraph {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Weight at (i, j); zero when the edge is absent.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self.rows[i].binary_search_by_key(&(j as u32), |&(c, _)| c) {
            Ok(pos) => self.rows[i][pos].1,
            Err(_) => 0.0,
        }
    }

    /// Row sums (node degrees once symmetric).
    pub fn degrees(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(_, w)| w).sum())
            .collect()
    }

    pub fn total_weight(&self) -> f64 {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(_, w)| w).sum::<f64>())
            .sum()
    }

    /// Check the structural invariants; `symmetric` additionally requires
    /// W = W^T within 1e-12.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        for (i, row) in self.rows.iter().enumerate() {
            let mut prev: Option<u32> = None;
            for &(j, w) in row {
                if j as usize >= n {
                    return Err(Error::Dimension(format!("edge ({i},{j}) out of range")));
                }
                if j as usize == i {
                    return Err(Error::InvalidArgument(format!("diagonal entry at row {i}")));
                }
                if w < 0.0 || !w.is_finite() {
                    return Err(Error::Numerical(format!("bad weight {w} at ({i},{j})")));
                }
                if let Some(p) = prev {
                    if j <= p {
                        return Err(Error::InvalidArgument(format!("row {i} not sorted")));
                    }
                }
                prev = Some(j);
            }
        }
        if self.symmetric {
            for (i, row) in self.rows.iter().enumerate() {
                for &(j, w) in row {
                    if (self.get(j as usize, i) - w).abs() > 1e-12 {
                        return Err(Error::Numerical(format!(
                            "asymmetry at ({i},{j}): {w} vs {}",
                            self.get(j as usize, i)
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Parameters of the graph-learning stages.
#[derive(Debug, Clone)]
pub struct GraphLearnConfig {
    /// Edges per node in every closed-form construction.
    pub k: usize,
    /// Pseudo-label feature weight of the single-graph method.
    pub gamma: f64,
    /// Stage weights of the parameter-optimal method.
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    /// Per-view weights; learned weights are nonnegative and sum to one.
    pub feature_weights: Vec<f64>,
}

impl GraphLearnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        for (name, g) in [
            ("gamma", self.gamma),
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("gamma3", self.gamma3),
        ] {
            if g < 0.0 || !g.is_finite() {
                return Err(Error::Config(format!("{name} must be >= 0, got {g}")));
            }
        }
        if self.feature_weights.iter().any(|&c| c < 0.0) {
            return Err(Error::Config("feature weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// Closed-form kNN graph: per row, the k nearest off-diagonal entries get
/// weight `(Z_(k+1) - Z_(j)) / sum_h (Z_(k+1) - Z_(h))`; everything else is
/// zero. Ties sort by ascending node index. Rows where the k+1 nearest
/// distances are all equal fall back to uniform 1/k weights, the continuous
/// limit of the formula.
pub fn knn_graph_closed_form(z: &FeatureDistanceMatrix, k: usize) -> Result<AffinityGraph> {
    let n = z.len();
    if k < 1 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if n < k + 2 {
        return Err(Error::InvalidArgument(format!(
            "insufficient nodes for {k} edges: need at least {} nodes, have {n}",
            k + 2
        )));
    }
    let mut rows = Vec::with_capacity(n);
    let mut order: Vec<u32> = Vec::with_capacity(n - 1);
    for i in 0..n {
        order.clear();
        order.extend((0..n as u32).filter(|&j| j as usize != i));
        let zrow = z.values.row(i);
        // Ascending distance, ties by ascending index.
        order.sort_by(|&a, &b| {
            zrow[a as usize]
                .partial_cmp(&zrow[b as usize])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let boundary = zrow[order[k] as usize];
        let gaps: Vec<f64> = order[..k]
            .iter()
            .map(|&j| boundary - zrow[j as usize])
            .collect();
        let denom: f64 = gaps.iter().sum();
        let mut entries: Vec<(u32, f64)> = if denom == 0.0 {
            let w = 1.0 / k as f64;
            order[..k].iter().map(|&j| (j, w)).collect()
        } else {
            order[..k]
                .iter()
                .zip(&gaps)
                .filter(|&(_, &g)| g > 0.0)
                .map(|(&j, &g)| (j, g / denom))
                .collect()
        };
        entries.sort_by_key(|&(j, _)| j);
        rows.push(entries);
    }
    Ok(AffinityGraph {
        rows,
        symmetric: false,
    })
}

/// (W + W^T) / 2.
pub fn symmetrize(g: &AffinityGraph) -> AffinityGraph {
    let n = g.len();
    let mut acc: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
    for (i, row) in g.rows.iter().enumerate() {
        for &(j, w) in row {
            acc[i].push((j, 0.5 * w));
            acc[j as usize].push((i as u32, 0.5 * w));
        }
    }
    let rows = acc
        .into_iter()
        .map(|mut row| {
            row.sort_by_key(|&(j, _)| j);
            let mut merged: Vec<(u32, f64)> = Vec::with_capacity(row.len());
            for (j, w) in row {
                match merged.last_mut() {
                    Some(last) if last.0 == j => last.1 += w,
                    _ => merged.push((j, w)),
                }
            }
            merged
        })
        .collect();
    AffinityGraph {
        rows,
        symmetric: true,
    }
}

/// Dense Laplacian `L = D - W` together with the degree vector.
pub fn laplacian(g: &AffinityGraph) -> (Mat, Vec<f64>) {
    let n = g.len();
    let degrees = g.degrees();
    let mut l = Mat::zeros(n, n);
    for (i, row) in g.rows.iter().enumerate() {
        for &(j, w) in row {
            l.set(i, j as usize, -w);
        }
        l.set(i, i, degrees[i]);
    }
    (l, degrees)
}

/// Row-stochastic random-walk normalization `P = D^{-1} W`.
pub fn random_walk_normalize(g: &AffinityGraph) -> Result<AffinityGraph> {
    let degrees = g.degrees();
    if let Some(i) = degrees.iter().position(|&d| d <= 0.0) {
        return Err(Error::Numerical(format!(
            "node {i} has zero degree; cannot normalize"
        )));
    }
    let rows = g
        .rows
        .iter()
        .zip(&degrees)
        .map(|(row, &d)| row.iter().map(|&(j, w)| (j, w / d)).collect())
        .collect();
    Ok(AffinityGraph {
        rows,
        symmetric: false,
    })
}

/// Exact Euclidean projection onto the probabilistic simplex, optionally
/// restricted to a support set (coordinates off the support are fixed at
/// zero). Sort-and-threshold; the unique minimizer of `||c - v||^2` subject
/// to `c >= 0`, `sum c = 1`.
pub fn simplex_project(v: &[f64], support: Option<&[usize]>) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    match support {
        None => {
            let indices: Vec<usize> = (0..v.len()).collect();
            project_into(v, &indices, &mut out);
        }
        Some(support) => {
            assert!(
                !support.is_empty(),
                "simplex projection needs a nonempty support"
            );
            project_into(v, support, &mut out);
        }
    }
    out
}

fn project_into(v: &[f64], support: &[usize], out: &mut [f64]) {
    let mut vals: Vec<f64> = support.iter().map(|&i| v[i]).collect();
    vals.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    let mut rho = 0;
    for (i, &u) in vals.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            rho = i + 1;
            theta = t;
        }
    }
    debug_assert!(rho > 0, "projection must keep at least one coordinate");
    for &i in support {
        out[i] = (v[i] - theta).max(0.0);
    }
}

/// One row-wise masked graph update: project
/// `(sum_v c_v A^v_i - (gamma/2) * Z^F_i) / sum_v c_v`
/// onto the simplex restricted to the nonzero support of `mask_source`'s row.
/// Edge positions never move; weights are re-balanced or eliminated by the
/// pseudo-label distances.
pub fn masked_graph_update(
    a_views: &[AffinityGraph],
    c: &[f64],
    z_f: &FeatureDistanceMatrix,
    gamma: f64,
    mask_source: &AffinityGraph,
) -> Result<AffinityGraph> {
    if a_views.is_empty() || a_views.len() != c.len() {
        return Err(Error::InvalidArgument(format!(
            "got {} views and {} weights",
            a_views.len(),
            c.len()
        )));
    }
    let n = mask_source.len();
    if a_views.iter().any(|a| a.len() != n) || z_f.len() != n {
        return Err(Error::Dimension("view / mask dimension mismatch".into()));
    }
    if gamma < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "gamma must be >= 0, got {gamma}"
        )));
    }
    let c_total: f64 = c.iter().sum();
    if c_total <= 0.0 {
        return Err(Error::InvalidArgument(
            "feature weights must have positive sum".into(),
        ));
    }

    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let support: Vec<usize> = mask_source.rows[i]
            .iter()
            .map(|&(j, _)| j as usize)
            .collect();
        if support.is_empty() {
            return Err(Error::Numerical(format!(
                "row {i} of the mask has empty support"
            )));
        }
        let target: Vec<f64> = support
            .iter()
            .map(|&j| {
                let mixed: f64 = a_views.iter().zip(c).map(|(a, &cv)| cv * a.get(i, j)).sum();
                (mixed - 0.5 * gamma * z_f.values.get(i, j)) / c_total
            })
            .collect();
        let local: Vec<usize> = (0..support.len()).collect();
        let projected = simplex_project(&target, Some(&local));
        let mut entries: Vec<(u32, f64)> = support
            .iter()
            .zip(&projected)
            .filter(|&(_, &w)| w > 0.0)
            .map(|(&j, &w)| (j as u32, w))
            .collect();
        entries.sort_by_key(|&(j, _)| j);
        rows.push(entries);
    }
    Ok(AffinityGraph {
        rows,
        symmetric: false,
    })
}

/// Squared Frobenius norm of `W - A^v`.
pub fn view_residual(w: &AffinityGraph, a_v: &AffinityGraph) -> Result<f64> {
    if w.len() != a_v.len() {
        return Err(Error::Dimension(format!(
            "residual between graphs of size {} and {}",
            w.len(),
            a_v.len()
        )));
    }
    let mut total = 0.0;
    for i in 0..w.len() {
        let ra = &w.rows[i];
        let rb = &a_v.rows[i];
        let (mut p, mut q) = (0, 0);
        while p < ra.len() || q < rb.len() {
            let (ja, jb) = (
                ra.get(p).map(|&(j, _)| j).unwrap_or(u32::MAX),
                rb.get(q).map(|&(j, _)| j).unwrap_or(u32::MAX),
            );
            let d = if ja == jb {
                let d = ra[p].1 - rb[q].1;
                p += 1;
                q += 1;
                d
            } else if ja < jb {
                let d = ra[p].1;
                p += 1;
                d
            } else {
                let d = -rb[q].1;
                q += 1;
                d
            };
            total += d * d;
        }
    }
    Ok(total)
}

/// Learned per-view weights: the simplex projection of `-r / (2 * gamma2)`.
/// Large gamma2 pulls the weights toward uniform; small gamma2 concentrates
/// them on the views with the smallest residual.
pub fn feature_weight_update(r: &[f64], gamma2: f64) -> Result<Vec<f64>> {
    if gamma2 <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "gamma2 must be positive, got {gamma2}"
        )));
    }
    if r.is_empty() {
        return Err(Error::InvalidArgument("residual vector is empty".into()));
    }
    if r.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::InvalidArgument(
            "residuals must be finite and >= 0".into(),
        ));
    }
    let v: Vec<f64> = r.iter().map(|&x| -x / (2.0 * gamma2)).collect();
    Ok(simplex_project(&v, None))
}

/// Dump as `i j w` lines, one edge per line, rows in order.
pub fn write_edge_list(g: &AffinityGraph, path: &Path) -> Result<()> {
    let mut out = String::new();
    use std::fmt::Write;
    for (i, row) in g.rows.iter().enumerate() {
        for &(j, w) in row {
            writeln!(out, "{i} {j} {w}").expect("string write");
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path, e))
}
