//! Label propagation over the superpixel graph.
//!
//! The harmonic classifier clamps labeled rows and solves
//! `L_uu F_u = -L_ul Y_l` for the rest; the solution is the unique graph
//! signal that is harmonic on the unlabeled set. Pseudo-label features come
//! from a single random-walk step instead, without clamping.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::graph::AffinityGraph;
use crate::linalg::Mat;
use crate::superpixels::SuperpixelSegmentation;

/// Per-node class scores (N x c) plus the mask of nodes whose rows came from
/// training labels.
#[derive(Debug, Clone)]
pub struct SoftLabelMatrix {
    pub scores: Mat,
    pub labeled_mask: Vec<bool>,
}

impl SoftLabelMatrix {
    pub fn new(scores: Mat, labeled_mask: Vec<bool>) -> Result<Self> {
        if scores.rows != labeled_mask.len() {
            return Err(Error::Dimension(format!(
                "scores have {} rows but mask has {} entries",
                scores.rows,
                labeled_mask.len()
            )));
        }
        if scores.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite label score".into()));
        }
        Ok(SoftLabelMatrix {
            scores,
            labeled_mask,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.scores.rows
    }

    pub fn num_classes(&self) -> usize {
        self.scores.cols
    }

    pub fn num_labeled(&self) -> usize {
        self.labeled_mask.iter().filter(|&&m| m).count()
    }
}

const CG_REL_TOL: f64 = 1e-13;
const SINGULAR_EPS: f64 = 1e-10;

/// Harmonic label propagation: labeled rows are copied from `y`, unlabeled
/// rows solve the Laplacian system. Unlabeled components with no path to a
/// labeled node get a tiny diagonal regularization (their rows come out zero)
/// and a warning on stderr.
pub fn harmonic_propagate(w: &AffinityGraph, y: &SoftLabelMatrix) -> Result<SoftLabelMatrix> {
    let n = w.len();
    if y.num_nodes() != n {
        return Err(Error::Dimension(format!(
            "graph has {n} nodes but labels have {}",
            y.num_nodes()
        )));
    }
    if !w.symmetric {
        return Err(Error::InvalidArgument(
            "harmonic propagation requires a symmetrized graph".into(),
        ));
    }
    let labeled: Vec<usize> = (0..n).filter(|&i| y.labeled_mask[i]).collect();
    if labeled.is_empty() {
        return Err(Error::InvalidArgument("no labeled nodes".into()));
    }
    let unlabeled: Vec<usize> = (0..n).filter(|&i| !y.labeled_mask[i]).collect();

    let mut out = y.scores.clone();
    if unlabeled.is_empty() {
        return SoftLabelMatrix::new(out, y.labeled_mask.clone());
    }

    // Map node id -> position in the unlabeled block.
    let mut upos = vec![usize::MAX; n];
    for (p, &i) in unlabeled.iter().enumerate() {
        upos[i] = p;
    }

    let degrees = w.degrees();

    // Unlabeled nodes unreachable from every labeled node make L_uu singular.
    let reachable = reach_from_labeled(w, &y.labeled_mask);
    let mut diag: Vec<f64> = unlabeled.iter().map(|&i| degrees[i]).collect();
    let unreachable: Vec<usize> = unlabeled
        .iter()
        .enumerate()
        .filter(|&(_, &i)| !reachable[i])
        .map(|(p, _)| p)
        .collect();
    if !unreachable.is_empty() {
        eprintln!(
            "warning: {} unlabeled node(s) are disconnected from all labeled nodes; \
             regularizing the Laplacian diagonal by {SINGULAR_EPS}",
            unreachable.len()
        );
        for &p in &unreachable {
            diag[p] += SINGULAR_EPS;
        }
    }

    // L_uu x = diag .* x - W_uu x, restricted to unlabeled rows/columns.
    let apply = |x: &[f64], out: &mut [f64]| {
        for (p, &i) in unlabeled.iter().enumerate() {
            let mut acc = diag[p] * x[p];
            for &(j, wij) in &w.rows[i] {
                let q = upos[j as usize];
                if q != usize::MAX {
                    acc -= wij * x[q];
                }
            }
            out[p] = acc;
        }
    };

    let c = y.num_classes();
    let nu = unlabeled.len();
    // The residual target scales with the graph (alpha * W scales both sides
    // of the system by alpha).
    let scale = degrees
        .iter()
        .cloned()
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut rhs = vec![0.0; nu];
    let mut x = vec![0.0; nu];
    let mut residual = vec![0.0; nu];
    let mut correction = vec![0.0; nu];
    for col in 0..c {
        // b = -L_ul Y_l = W_ul Y_l (the degree part of L is diagonal).
        for (p, &i) in unlabeled.iter().enumerate() {
            let mut acc = 0.0;
            for &(j, wij) in &w.rows[i] {
                if y.labeled_mask[j as usize] {
                    acc += wij * y.scores.get(j as usize, col);
                }
            }
            rhs[p] = acc;
        }
        for v in x.iter_mut() {
            *v = 0.0;
        }
        cg_solve(&apply, &diag, &rhs, &mut x, CG_REL_TOL, 10 * nu.max(50));

        // Post-solve contract check with one refinement pass.
        for pass in 0..2 {
            apply(&x, &mut residual);
            let mut worst: f64 = 0.0;
            for (r, &b) in residual.iter_mut().zip(&rhs) {
                *r = b - *r;
                worst = worst.max(r.abs());
            }
            if worst <= 0.5e-8 * scale {
                break;
            }
            if pass == 1 {
                eprintln!("warning: harmonic solve column {col} stalled at residual {worst:.3e}");
                break;
            }
            for v in correction.iter_mut() {
                *v = 0.0;
            }
            cg_solve(
                &apply,
                &diag,
                &residual,
                &mut correction,
                CG_REL_TOL,
                10 * nu.max(50),
            );
            for (xi, &d) in x.iter_mut().zip(&correction) {
                *xi += d;
            }
        }

        for (p, &i) in unlabeled.iter().enumerate() {
            out.set(i, col, x[p]);
        }
    }

    SoftLabelMatrix::new(out, y.labeled_mask.clone())
}

fn reach_from_labeled(w: &AffinityGraph, labeled_mask: &[bool]) -> Vec<bool> {
    let n = w.len();
    let mut reached = vec![false; n];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for i in 0..n {
        if labeled_mask[i] {
            reached[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        for &(j, wij) in &w.rows[i] {
            if wij > 0.0 && !reached[j as usize] {
                reached[j as usize] = true;
                queue.push_back(j as usize);
            }
        }
    }
    reached
}

/// Jacobi-preconditioned conjugate gradients for the SPD system.
fn cg_solve(
    apply: &impl Fn(&[f64], &mut [f64]),
    diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) {
    let n = b.len();
    let norm_b = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_b == 0.0 {
        return;
    }
    let threshold = rel_tol * norm_b;

    let mut r = b.to_vec();
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    for (ri, &a) in r.iter_mut().zip(&ax) {
        *ri -= a;
    }
    let inv_diag: Vec<f64> = diag
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(&ri, &m)| ri * m).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(&a, &b)| a * b).sum();

    for _ in 0..max_iter {
        let norm_r = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm_r <= threshold {
            break;
        }
        apply(&p, &mut ax);
        let pap: f64 = p.iter().zip(&ax).map(|(&a, &b)| a * b).sum();
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ax[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(&a, &b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
}

/// Pseudo-label features from one random-walk step: `F = D^{-1} W Y`.
/// Labeled rows are deliberately not clamped.
pub fn pseudo_label_step(w0: &AffinityGraph, y: &SoftLabelMatrix) -> Result<SoftLabelMatrix> {
    let n = w0.len();
    if y.num_nodes() != n {
        return Err(Error::Dimension(format!(
            "graph has {n} nodes but labels have {}",
            y.num_nodes()
        )));
    }
    let p = crate::graph::random_walk_normalize(w0)?;
    let c = y.num_classes();
    let mut scores = Mat::zeros(n, c);
    for (i, row) in p.rows.iter().enumerate() {
        let out = scores.row_mut(i);
        for &(j, pij) in row {
            for (o, v) in out.iter_mut().zip(y.scores.row(j as usize)) {
                *o += pij * v;
            }
        }
    }
    SoftLabelMatrix::new(scores, y.labeled_mask.clone())
}

/// Argmax class decision, ties to the smallest class index. Rows with no
/// positive score fall back to the class of the nearest labeled node by
/// unweighted hop distance when a graph is supplied (class 1 otherwise),
/// with a warning.
pub fn assign_classes(f: &SoftLabelMatrix, graph: Option<&AffinityGraph>) -> Result<Vec<u32>> {
    let n = f.num_nodes();
    let c = f.num_classes();
    if c == 0 {
        return Err(Error::InvalidArgument("no classes to assign".into()));
    }
    let mut classes = vec![0u32; n];
    let mut fallback_nodes = Vec::new();
    for (i, slot) in classes.iter_mut().enumerate() {
        let row = f.scores.row(i);
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        if row[best] <= 0.0 && row.iter().all(|&v| v == 0.0) {
            fallback_nodes.push(i);
        }
        *slot = best as u32 + 1;
    }

    if !fallback_nodes.is_empty() {
        eprintln!(
            "warning: {} node(s) have all-zero scores; assigning the nearest labeled class",
            fallback_nodes.len()
        );
        for &i in &fallback_nodes {
            classes[i] = match graph.and_then(|g| nearest_labeled(g, &f.labeled_mask, i)) {
                Some(j) => classes[j],
                None => 1,
            };
        }
    }
    Ok(classes)
}

/// Breadth-first search for the closest labeled node; among equally close
/// candidates the smallest node index wins.
fn nearest_labeled(g: &AffinityGraph, labeled_mask: &[bool], start: usize) -> Option<usize> {
    let n = g.len();
    let mut seen = vec![false; n];
    seen[start] = true;
    let mut frontier = vec![start];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        let mut hit: Option<usize> = None;
        for &i in &frontier {
            if labeled_mask[i] {
                hit = Some(match hit {
                    Some(h) => h.min(i),
                    None => i,
                });
            }
        }
        if let Some(h) = hit {
            return Some(h);
        }
        for &i in &frontier {
            for &(j, _) in &g.rows[i] {
                if !seen[j as usize] {
                    seen[j as usize] = true;
                    next.push(j as usize);
                }
            }
        }
        next.sort_unstable();
        next.dedup();
        frontier = next;
    }
    None
}

/// Replicate superpixel classes down to the pixel raster.
pub fn broadcast_to_pixels(seg: &SuperpixelSegmentation, classes: &[u32]) -> Result<Vec<u32>> {
    if classes.len() != seg.num_superpixels {
        return Err(Error::Dimension(format!(
            "{} classes for {} superpixels",
            classes.len(),
            seg.num_superpixels
        )));
    }
    Ok(seg
        .assignment
        .iter()
        .map(|&k| classes[k as usize])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{knn_graph_closed_form, symmetrize};
    use crate::superpixels::FeatureDistanceMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn path_graph(n: usize) -> AffinityGraph {
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        for i in 0..n - 1 {
            rows[i].push(((i + 1) as u32, 1.0));
            rows[i + 1].push((i as u32, 1.0));
        }
        for row in &mut rows {
            row.sort_by_key(|&(j, _)| j);
        }
        AffinityGraph {
            rows,
            symmetric: true,
        }
    }

    fn labels(n: usize, given: &[(usize, Vec<f64>)], c: usize) -> SoftLabelMatrix {
        let mut scores = Mat::zeros(n, c);
        let mut mask = vec![false; n];
        for (i, row) in given {
            scores.row_mut(*i).copy_from_slice(row);
            mask[*i] = true;
        }
        SoftLabelMatrix::new(scores, mask).unwrap()
    }

    fn residual_inf(w: &AffinityGraph, y: &SoftLabelMatrix, f: &SoftLabelMatrix) -> f64 {
        // || L_uu F_u + L_ul Y_l ||_inf computed from scratch.
        let mut worst: f64 = 0.0;
        for (i, row) in w.rows.iter().enumerate() {
            if y.labeled_mask[i] {
                continue;
            }
            let degree: f64 = row.iter().map(|&(_, wij)| wij).sum();
            for col in 0..f.num_classes() {
                let mut acc = degree * f.scores.get(i, col);
                for &(j, wij) in row {
                    acc -= wij * f.scores.get(j as usize, col);
                }
                worst = worst.max(acc.abs());
            }
        }
        worst
    }

    #[test]
    fn path3_midpoint_is_half() {
        let w = path_graph(3);
        let y = labels(3, &[(0, vec![1.0, 0.0]), (2, vec![0.0, 1.0])], 2);
        let f = harmonic_propagate(&w, &y).unwrap();
        assert!((f.scores.get(1, 0) - 0.5).abs() < 1e-12);
        assert!((f.scores.get(1, 1) - 0.5).abs() < 1e-12);
        // Labeled rows are clamped exactly.
        assert_eq!(f.scores.row(0), &[1.0, 0.0]);
        assert_eq!(f.scores.row(2), &[0.0, 1.0]);
    }

    #[test]
    fn path4_interior_thirds() {
        let w = path_graph(4);
        let y = labels(4, &[(0, vec![1.0, 0.0]), (3, vec![0.0, 1.0])], 2);
        let f = harmonic_propagate(&w, &y).unwrap();
        assert!((f.scores.get(1, 0) - 2.0 / 3.0).abs() < 1e-12);
        assert!((f.scores.get(1, 1) - 1.0 / 3.0).abs() < 1e-12);
        assert!((f.scores.get(2, 0) - 1.0 / 3.0).abs() < 1e-12);
        assert!((f.scores.get(2, 1) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn constant_labels_extend_constant() {
        let w = path_graph(5);
        let y = labels(
            5,
            &[
                (0, vec![0.0, 1.0]),
                (2, vec![0.0, 1.0]),
                (4, vec![0.0, 1.0]),
            ],
            2,
        );
        let f = harmonic_propagate(&w, &y).unwrap();
        for i in 0..5 {
            assert!((f.scores.get(i, 1) - 1.0).abs() < 1e-10, "node {i}");
            assert!(f.scores.get(i, 0).abs() < 1e-10);
        }
    }

    #[test]
    fn no_labeled_nodes_is_error() {
        let w = path_graph(3);
        let y = labels(3, &[], 2);
        assert!(harmonic_propagate(&w, &y).is_err());
    }

    #[test]
    fn random_graph_residual_and_maximum_principle() {
        let mut rng = ChaCha12Rng::seed_from_u64(55);
        for trial in 0..5 {
            let n = 60;
            let mut values = Mat::zeros(n, n);
            for i in 0..n {
                for j in (i + 1)..n {
                    let d = rng.random::<f64>() * 4.0 + 0.01;
                    values.set(i, j, d);
                    values.set(j, i, d);
                }
            }
            let z = FeatureDistanceMatrix {
                values,
                view_tag: "t".into(),
            };
            let w = symmetrize(&knn_graph_closed_form(&z, 4).unwrap());
            let c = 3;
            let mut given = Vec::new();
            for i in 0..8 {
                let mut row = vec![0.0; c];
                row[i % c] = 1.0;
                given.push((i * 7 % n, row));
            }
            let y = labels(n, &given, c);
            let f = harmonic_propagate(&w, &y).unwrap();
            let res = residual_inf(&w, &y, &f);
            assert!(res <= 1e-8, "trial {trial}: residual {res}");

            for col in 0..c {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for (_, row) in given.iter() {
                    lo = lo.min(row[col]);
                    hi = hi.max(row[col]);
                }
                for i in 0..n {
                    if !y.labeled_mask[i] {
                        let v = f.scores.get(i, col);
                        assert!(
                            v >= lo - 1e-8 && v <= hi + 1e-8,
                            "column {col}, node {i}: {v} outside [{lo}, {hi}]"
                        );
                    }
                }
            }

            // Row sums obey the same bounds as the labeled row sums (all 1
            // here, since the labeled rows are one-hot).
            for i in 0..n {
                if !y.labeled_mask[i] {
                    let s: f64 = f.scores.row(i).iter().sum();
                    assert!(
                        (s - 1.0).abs() <= 1e-8,
                        "node {i}: propagated row sums to {s}"
                    );
                }
            }
        }
    }

    #[test]
    fn harmonic_scale_invariant() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let n = 40;
        let mut values = Mat::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let d = rng.random::<f64>() * 2.0 + 0.05;
                values.set(i, j, d);
                values.set(j, i, d);
            }
        }
        let z = FeatureDistanceMatrix {
            values,
            view_tag: "t".into(),
        };
        let w = symmetrize(&knn_graph_closed_form(&z, 4).unwrap());
        let y = labels(
            n,
            &[
                (0, vec![1.0, 0.0]),
                (11, vec![0.0, 1.0]),
                (29, vec![1.0, 0.0]),
            ],
            2,
        );
        let f = harmonic_propagate(&w, &y).unwrap();
        for alpha in [1e-3, 1e3] {
            let scaled = AffinityGraph {
                rows: w
                    .rows
                    .iter()
                    .map(|row| row.iter().map(|&(j, v)| (j, alpha * v)).collect())
                    .collect(),
                symmetric: true,
            };
            let fs = harmonic_propagate(&scaled, &y).unwrap();
            for i in 0..n {
                for col in 0..2 {
                    assert!(
                        (f.scores.get(i, col) - fs.scores.get(i, col)).abs() < 1e-8,
                        "alpha {alpha}, node {i}"
                    );
                }
            }
        }
    }

    #[test]
    fn disconnected_component_regularized_to_zero_rows() {
        // Two components: 0-1 (labeled) and 2-3 (no labels).
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); 4];
        rows[0].push((1, 1.0));
        rows[1].push((0, 1.0));
        rows[2].push((3, 1.0));
        rows[3].push((2, 1.0));
        let w = AffinityGraph {
            rows,
            symmetric: true,
        };
        let y = labels(4, &[(0, vec![1.0, 0.0])], 2);
        let f = harmonic_propagate(&w, &y).unwrap();
        assert!((f.scores.get(1, 0) - 1.0).abs() < 1e-8);
        assert_eq!(f.scores.row(2), &[0.0, 0.0]);
        assert_eq!(f.scores.row(3), &[0.0, 0.0]);
        // assign_classes falls back; with no labeled node reachable the class
        // defaults to 1.
        let classes = assign_classes(&f, Some(&w)).unwrap();
        assert_eq!(classes, vec![1, 1, 1, 1]);
    }

    #[test]
    fn two_labeled_components_propagate_independently() {
        // Components 0-1-2 and 3-4-5, each with its own labeled node; scores
        // never leak across the cut.
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); 6];
        for (a, b) in [(0u32, 1u32), (1, 2), (3, 4), (4, 5)] {
            rows[a as usize].push((b, 1.0));
            rows[b as usize].push((a, 1.0));
        }
        for row in &mut rows {
            row.sort_by_key(|&(j, _)| j);
        }
        let w = AffinityGraph {
            rows,
            symmetric: true,
        };
        let y = labels(6, &[(0, vec![1.0, 0.0]), (5, vec![0.0, 1.0])], 2);
        let f = harmonic_propagate(&w, &y).unwrap();
        for i in 1..3 {
            assert!((f.scores.get(i, 0) - 1.0).abs() < 1e-10, "node {i}");
            assert!(f.scores.get(i, 1).abs() < 1e-10);
        }
        for i in 3..5 {
            assert!((f.scores.get(i, 1) - 1.0).abs() < 1e-10, "node {i}");
            assert!(f.scores.get(i, 0).abs() < 1e-10);
        }
    }

    #[test]
    fn pseudo_label_step_averages_neighbors() {
        let w = path_graph(3);
        let y = labels(3, &[(0, vec![1.0, 0.0]), (2, vec![0.0, 1.0])], 2);
        let f = pseudo_label_step(&w, &y).unwrap();
        // Middle node: equal-weight average of the two one-hot neighbors.
        assert_eq!(f.scores.row(1), &[0.5, 0.5]);
        // End nodes are NOT clamped: they take their neighbor's row.
        assert_eq!(f.scores.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn pseudo_label_step_zero_labels_zero_output() {
        let w = path_graph(4);
        let y = labels(4, &[], 2);
        let f = pseudo_label_step(&w, &y).unwrap();
        assert!(f.scores.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pseudo_label_row_sums_bounded_by_max_input_row_sum() {
        let mut rng = ChaCha12Rng::seed_from_u64(71);
        let n = 30;
        let mut values = Mat::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let d = rng.random::<f64>() + 0.01;
                values.set(i, j, d);
                values.set(j, i, d);
            }
        }
        let z = FeatureDistanceMatrix {
            values,
            view_tag: "t".into(),
        };
        let w = symmetrize(&knn_graph_closed_form(&z, 3).unwrap());
        let mut scores = Mat::zeros(n, 2);
        let mut mask = vec![false; n];
        for (i, m) in mask.iter_mut().take(10).enumerate() {
            scores.set(i, i % 2, rng.random::<f64>());
            *m = true;
        }
        let y = SoftLabelMatrix::new(scores, mask).unwrap();
        let max_in: f64 = (0..n)
            .map(|i| y.scores.row(i).iter().sum::<f64>())
            .fold(0.0, f64::max);
        let f = pseudo_label_step(&w, &y).unwrap();
        for i in 0..n {
            let s: f64 = f.scores.row(i).iter().sum();
            assert!(s <= max_in + 1e-12);
        }
    }

    #[test]
    fn pseudo_label_one_hot_fixed_point_on_class_disconnected_graph() {
        // Two cliques, fully labeled one-hot per clique.
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); 6];
        for a in 0..3u32 {
            for b in 0..3u32 {
                if a != b {
                    rows[a as usize].push((b, 1.0));
                    rows[3 + a as usize].push((3 + b, 1.0));
                }
            }
        }
        for row in &mut rows {
            row.sort_by_key(|&(j, _)| j);
        }
        let w = AffinityGraph {
            rows,
            symmetric: true,
        };
        let mut scores = Mat::zeros(6, 2);
        for i in 0..3 {
            scores.set(i, 0, 1.0);
            scores.set(3 + i, 1, 1.0);
        }
        let y = SoftLabelMatrix::new(scores, vec![true; 6]).unwrap();
        let f = pseudo_label_step(&w, &y).unwrap();
        for i in 0..6 {
            assert_eq!(f.scores.row(i), y.scores.row(i), "node {i}");
        }
    }

    #[test]
    fn assign_argmax_and_ties() {
        let scores = Mat::from_rows(&[
            vec![0.2, 0.7, 0.1],
            vec![0.5, 0.5, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let f = SoftLabelMatrix::new(scores, vec![false; 3]).unwrap();
        let classes = assign_classes(&f, None).unwrap();
        assert_eq!(classes, vec![2, 1, 3]);
    }

    #[test]
    fn assign_zero_row_falls_back_to_nearest_labeled() {
        let w = path_graph(4);
        let scores = Mat::from_rows(&[
            vec![0.0, 1.0],
            vec![0.1, 0.6],
            vec![0.0, 0.0], // zero row, nearest labeled is node 0 two hops away
            vec![0.0, 0.0],
        ]);
        let f = SoftLabelMatrix::new(scores, vec![true, false, false, false]).unwrap();
        let classes = assign_classes(&f, Some(&w)).unwrap();
        assert_eq!(classes[2], 2, "inherits node 0's class");
        assert_eq!(classes[3], 2);
    }

    #[test]
    fn broadcast_replicates_and_counts() {
        let seg = SuperpixelSegmentation::from_assignment(4, 1, vec![0, 0, 1, 1]).unwrap();
        let map = broadcast_to_pixels(&seg, &[3, 1]).unwrap();
        assert_eq!(map, vec![3, 3, 1, 1]);
        // Histogram identity: class counts = sum of superpixel sizes.
        let count3 = map.iter().filter(|&&v| v == 3).count();
        assert_eq!(count3, seg.pixel_lists[0].len());
    }
}
