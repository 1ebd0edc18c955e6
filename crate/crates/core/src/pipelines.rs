//! End-to-end classification pipelines.
//!
//! `run_mgl` builds one fused multi-feature graph, injects a pseudo-label
//! distance term with weight gamma, rebuilds the graph and propagates.
//! `run_pmgl` instead keeps one graph per feature view, learns the view
//! weights from graph residuals, and perturbs edge weights through masked
//! simplex projections at two stages (gamma1, gamma3). Neither pipeline
//! iterates beyond the listed steps, and neither draws any randomness.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data_io::HsiCube;
use crate::error::{Error, Result};
use crate::graph::{
    feature_weight_update, knn_graph_closed_form, masked_graph_update, symmetrize, view_residual,
    AffinityGraph,
};
use crate::linalg::Mat;
use crate::preprocess::{pca_reduce, standardize_bands};
use crate::propagation::{
    assign_classes, broadcast_to_pixels, harmonic_propagate, pseudo_label_step, SoftLabelMatrix,
};
use crate::superpixels::{
    composite_distance, compute_features, pairwise_sq_distances, regularize_labels, slic_segment,
    CompositeMode, FeatureDistanceMatrix, SuperpixelFeatures, SuperpixelSegmentation,
};

/// One of the three base feature views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseView {
    M,
    S,
    C,
}

/// A composite view merging a spectral-content view with another (usually the
/// centroid view). `lambda: null` means the scale-ratio default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositeSpec {
    pub mode: CompositeModeSpec,
    pub base: BaseView,
    #[serde(rename = "with")]
    pub with_view: BaseView,
    #[serde(default)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompositeModeSpec {
    Multiplicative,
    Additive,
}

/// Feature-distance descriptor: a plain view (`"m"`, `"s"`, `"c"`) or a
/// composite object.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ViewSpec {
    Plain(BaseView),
    Composite(CompositeSpec),
}

/// Parameters of the single-graph pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MglParams {
    pub gamma: f64,
    pub c_m: f64,
    pub c_s: f64,
    pub c_c: f64,
}

/// Parameters of the parameter-optimal pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PmglParams {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub views: Vec<ViewSpec>,
}

/// Full pipeline configuration; the JSON config file uses exactly this shape
/// and unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_variance_target")]
    pub variance_target: f64,
    pub superpixel_count: usize,
    #[serde(default = "default_compactness")]
    pub compactness: f64,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default = "default_k")]
    pub k: usize,
    pub mgl: MglParams,
    pub pmgl: PmglParams,
}

fn default_variance_target() -> f64 {
    0.998
}
fn default_compactness() -> f64 {
    10.0
}
fn default_h() -> f64 {
    15.0
}
fn default_k() -> usize {
    10
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            variance_target: default_variance_target(),
            superpixel_count: 100,
            compactness: default_compactness(),
            h: default_h(),
            k: default_k(),
            mgl: MglParams {
                gamma: 10.0,
                c_m: 1.0,
                c_s: 1.0,
                c_c: 1e-2,
            },
            pmgl: PmglParams {
                gamma1: 1.0,
                gamma2: 30.0,
                gamma3: 1.0,
                views: vec![
                    ViewSpec::Plain(BaseView::M),
                    ViewSpec::Plain(BaseView::S),
                    ViewSpec::Composite(CompositeSpec {
                        mode: CompositeModeSpec::Additive,
                        base: BaseView::M,
                        with_view: BaseView::C,
                        lambda: None,
                    }),
                ],
            },
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: PipelineConfig = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.variance_target > 0.0 && self.variance_target <= 1.0) {
            return Err(Error::Config(format!(
                "variance_target {} outside (0, 1]",
                self.variance_target
            )));
        }
        if self.superpixel_count == 0 {
            return Err(Error::Config("superpixel_count must be positive".into()));
        }
        if self.compactness <= 0.0 {
            return Err(Error::Config("compactness must be positive".into()));
        }
        if self.h <= 0.0 {
            return Err(Error::Config("h must be positive".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        let m = &self.mgl;
        if m.c_m < 0.0 || m.c_s < 0.0 || m.c_c < 0.0 {
            return Err(Error::Config("mgl feature weights must be >= 0".into()));
        }
        if m.c_m + m.c_s + m.c_c <= 0.0 {
            return Err(Error::Config(
                "mgl feature weights must not all be zero".into(),
            ));
        }
        let p = &self.pmgl;
        self.graph_params().validate()?;
        if p.gamma2 <= 0.0 {
            return Err(Error::Config("pmgl.gamma2 must be positive".into()));
        }
        if p.views.is_empty() {
            return Err(Error::Config("pmgl.views must not be empty".into()));
        }
        for v in &p.views {
            if let ViewSpec::Composite(c) = v {
                if let Some(l) = c.lambda {
                    if l < 0.0 {
                        return Err(Error::Config(format!(
                            "composite lambda must be >= 0, got {l}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// The graph-stage slice of the configuration.
    pub fn graph_params(&self) -> crate::graph::GraphLearnConfig {
        crate::graph::GraphLearnConfig {
            k: self.k,
            gamma: self.mgl.gamma,
            gamma1: self.pmgl.gamma1,
            gamma2: self.pmgl.gamma2,
            gamma3: self.pmgl.gamma3,
            feature_weights: vec![self.mgl.c_m, self.mgl.c_s, self.mgl.c_c],
        }
    }
}

/// Run facts reported alongside the classification map.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub num_superpixels: usize,
    pub reduced_bands: usize,
    /// Learned view weights (parameter-optimal pipeline only).
    pub feature_weights: Option<Vec<f64>>,
    pub stage_timings_ms: Vec<(String, f64)>,
}

/// Shared front of both pipelines: standardize, reduce, segment, regularize
/// labels and extract features.
struct Prepared {
    seg: SuperpixelSegmentation,
    y_s: SoftLabelMatrix,
    features: SuperpixelFeatures,
    reduced_bands: usize,
}

fn prepare(
    cube: &HsiCube,
    train_labels: &[u32],
    num_classes: usize,
    config: &PipelineConfig,
    timings: &mut Vec<(String, f64)>,
) -> Result<Prepared> {
    if train_labels.len() != cube.num_pixels() {
        return Err(Error::Dimension(format!(
            "training labels length {} does not match cube {}x{}",
            train_labels.len(),
            cube.width,
            cube.height
        )));
    }
    let distinct = {
        let mut seen = vec![false; num_classes + 1];
        let mut count = 0;
        for &v in train_labels {
            if v != 0 && !seen[v as usize] {
                seen[v as usize] = true;
                count += 1;
            }
        }
        count
    };
    if distinct < 2 {
        return Err(Error::InvalidArgument(format!(
            "need training pixels in at least 2 classes, found {distinct}"
        )));
    }

    let mut mark = Instant::now();
    let mut lap = |name: &str, timings: &mut Vec<(String, f64)>| {
        let now = Instant::now();
        timings.push((name.to_string(), (now - mark).as_secs_f64() * 1e3));
        mark = now;
    };

    let standardized = standardize_bands(cube)?;
    lap("standardize", timings);
    let (reduced, _model) = pca_reduce(&standardized, config.variance_target)?;
    lap("pca", timings);
    let seg = slic_segment(
        &scale_to_intensity(reduced.band(0)),
        reduced.width,
        reduced.height,
        config.superpixel_count,
        config.compactness,
    )?;
    lap("slic", timings);
    let y_s = regularize_labels(&seg, train_labels, num_classes)?;
    let features = compute_features(&seg, &reduced, config.h)?;
    lap("features", timings);
    Ok(Prepared {
        seg,
        y_s,
        reduced_bands: reduced.bands,
        features,
    })
}

/// Min-max scale the first principal component to the [0, 100] intensity
/// range SLIC's compactness values are calibrated against.
fn scale_to_intensity(pc1: &[f64]) -> Vec<f64> {
    let lo = pc1.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = pc1.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return vec![0.0; pc1.len()];
    }
    let scale = 100.0 / (hi - lo);
    pc1.iter().map(|&v| (v - lo) * scale).collect()
}

fn base_distance(features: &SuperpixelFeatures, view: BaseView) -> FeatureDistanceMatrix {
    match view {
        BaseView::M => pairwise_sq_distances(&features.mean, "M"),
        BaseView::S => pairwise_sq_distances(&features.spatial_mean, "S"),
        BaseView::C => pairwise_sq_distances(&features.centroid, "C"),
    }
}

fn resolve_view(features: &SuperpixelFeatures, spec: &ViewSpec) -> Result<FeatureDistanceMatrix> {
    match spec {
        ViewSpec::Plain(v) => Ok(base_distance(features, *v)),
        ViewSpec::Composite(c) => {
            let zv = base_distance(features, c.base);
            let zc = base_distance(features, c.with_view);
            let mode = match c.mode {
                CompositeModeSpec::Multiplicative => CompositeMode::Multiplicative,
                CompositeModeSpec::Additive => CompositeMode::Additive,
            };
            composite_distance(&zv, &zc, mode, c.lambda)
        }
    }
}

#[cfg(debug_assertions)]
fn debug_check(g: &AffinityGraph, stage: &str) {
    if let Err(e) = g.validate() {
        panic!("graph invariant violated after {stage}: {e}");
    }
}

#[cfg(not(debug_assertions))]
fn debug_check(_g: &AffinityGraph, _stage: &str) {}

/// Single fused-graph pipeline (fixed feature weights, pseudo-label feature
/// folded into the distances with weight gamma).
pub fn run_mgl(
    cube: &HsiCube,
    train_labels: &[u32],
    num_classes: usize,
    config: &PipelineConfig,
) -> Result<(Vec<u32>, Diagnostics)> {
    config.validate()?;
    let mut timings = Vec::new();
    let prep = prepare(cube, train_labels, num_classes, config, &mut timings)?;
    let n = prep.seg.num_superpixels;

    let mark = Instant::now();
    let weights = [
        (BaseView::M, config.mgl.c_m),
        (BaseView::S, config.mgl.c_s),
        (BaseView::C, config.mgl.c_c),
    ];
    let mut fused = Mat::zeros(n, n);
    for (view, c_v) in weights {
        if c_v == 0.0 {
            continue;
        }
        let z = base_distance(&prep.features, view);
        for (o, v) in fused.data.iter_mut().zip(&z.values.data) {
            *o += c_v * v;
        }
    }
    let mut fused = FeatureDistanceMatrix {
        values: fused,
        view_tag: "fused".into(),
    };
    timings.push(("distances".into(), mark.elapsed().as_secs_f64() * 1e3));

    let mark = Instant::now();
    let w0 = symmetrize(&knn_graph_closed_form(&fused, config.k)?);
    debug_check(&w0, "initial graph");

    if config.mgl.gamma > 0.0 {
        let pseudo = pseudo_label_step(&w0, &prep.y_s)?;
        let z_pseudo = pairwise_sq_distances(&pseudo.scores, "F~");
        for (o, v) in fused.values.data.iter_mut().zip(&z_pseudo.values.data) {
            *o += config.mgl.gamma * v;
        }
    }
    let w = symmetrize(&knn_graph_closed_form(&fused, config.k)?);
    debug_check(&w, "pseudo-label graph");
    timings.push(("graph".into(), mark.elapsed().as_secs_f64() * 1e3));

    let mark = Instant::now();
    let f = harmonic_propagate(&w, &prep.y_s)?;
    let classes = assign_classes(&f, Some(&w))?;
    let map = broadcast_to_pixels(&prep.seg, &classes)?;
    timings.push(("propagate".into(), mark.elapsed().as_secs_f64() * 1e3));

    Ok((
        map,
        Diagnostics {
            num_superpixels: n,
            reduced_bands: prep.reduced_bands,
            feature_weights: None,
            stage_timings_ms: timings,
        },
    ))
}

/// Sum of per-view graphs with the given weights (sparse merge).
fn mix_graphs(views: &[AffinityGraph], c: &[f64]) -> AffinityGraph {
    let n = views[0].len();
    let mut rows: Vec<Vec<(u32, f64)>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut acc: std::collections::BTreeMap<u32, f64> = std::collections::BTreeMap::new();
        for (a, &cv) in views.iter().zip(c) {
            if cv == 0.0 {
                continue;
            }
            for &(j, w) in &a.rows[i] {
                *acc.entry(j).or_insert(0.0) += cv * w;
            }
        }
        rows.push(acc.into_iter().collect());
    }
    AffinityGraph {
        rows,
        symmetric: false,
    }
}

/// Parameter-optimal pipeline: per-view graphs, learned view weights, masked
/// pseudo-label updates at two stages, then the harmonic classifier.
pub fn run_pmgl(
    cube: &HsiCube,
    train_labels: &[u32],
    num_classes: usize,
    config: &PipelineConfig,
) -> Result<(Vec<u32>, Diagnostics)> {
    config.validate()?;
    let mut timings = Vec::new();
    let prep = prepare(cube, train_labels, num_classes, config, &mut timings)?;
    let n = prep.seg.num_superpixels;

    let mark = Instant::now();
    let mut views = Vec::with_capacity(config.pmgl.views.len());
    for spec in &config.pmgl.views {
        let z = resolve_view(&prep.features, spec)?;
        let a = symmetrize(&knn_graph_closed_form(&z, config.k)?);
        debug_check(&a, "per-view graph");
        views.push(a);
    }
    let num_views = views.len();
    let uniform = vec![1.0 / num_views as f64; num_views];
    let w0 = symmetrize(&mix_graphs(&views, &uniform));
    debug_check(&w0, "fused initial graph");
    timings.push(("view graphs".into(), mark.elapsed().as_secs_f64() * 1e3));

    // Stage 1: pseudo-labels on the uniform fusion, masked update (gamma1).
    let mark = Instant::now();
    let pseudo = harmonic_propagate(&w0, &prep.y_s)?;
    let z_pseudo = pairwise_sq_distances(&pseudo.scores, "F~");
    let w1 = symmetrize(&masked_graph_update(
        &views,
        &uniform,
        &z_pseudo,
        config.pmgl.gamma1,
        &w0,
    )?);
    debug_check(&w1, "stage-1 masked update");

    // Stage 2: view weights from residuals against the current graph.
    let residuals: Vec<f64> = views
        .iter()
        .map(|a| view_residual(&w1, a))
        .collect::<Result<_>>()?;
    let c = feature_weight_update(&residuals, config.pmgl.gamma2)?;

    // Stage 3: refreshed pseudo-labels, masked update (gamma3).
    let pseudo = harmonic_propagate(&w1, &prep.y_s)?;
    let z_pseudo = pairwise_sq_distances(&pseudo.scores, "F~");
    let w2 = symmetrize(&masked_graph_update(
        &views,
        &c,
        &z_pseudo,
        config.pmgl.gamma3,
        &w1,
    )?);
    debug_check(&w2, "stage-3 masked update");
    timings.push(("graph learning".into(), mark.elapsed().as_secs_f64() * 1e3));

    let mark = Instant::now();
    let f = harmonic_propagate(&w2, &prep.y_s)?;
    let classes = assign_classes(&f, Some(&w2))?;
    let map = broadcast_to_pixels(&prep.seg, &classes)?;
    timings.push(("propagate".into(), mark.elapsed().as_secs_f64() * 1e3));

    Ok((
        map,
        Diagnostics {
            num_superpixels: n,
            reduced_bands: prep.reduced_bands,
            feature_weights: Some(c),
            stage_timings_ms: timings,
        },
    ))
}

/// Segment-only entry point used by the CLI: the same preprocessing chain,
/// returning the segmentation itself.
pub fn segment_only(cube: &HsiCube, config: &PipelineConfig) -> Result<SuperpixelSegmentation> {
    config.validate()?;
    let standardized = standardize_bands(cube)?;
    let (reduced, _) = pca_reduce(&standardized, config.variance_target)?;
    slic_segment(
        &scale_to_intensity(reduced.band(0)),
        reduced.width,
        reduced.height,
        config.superpixel_count,
        config.compactness,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::generate_synthetic_scene;
    use crate::evaluation::{confusion_matrix, metrics, sample_training_labels};

    fn synthetic_config() -> PipelineConfig {
        PipelineConfig {
            superpixel_count: 36,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn config_json_round_trip_and_unknown_keys() {
        let config = PipelineConfig::default();
        let text = serde_json::to_string(&config).unwrap();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.superpixel_count, config.superpixel_count);

        let with_unknown = r#"{"superpixel_count": 10, "bogus": 1,
            "mgl": {"gamma": 1.0, "c_m": 1.0, "c_s": 1.0, "c_c": 0.1},
            "pmgl": {"gamma1": 0.0, "gamma2": 1.0, "gamma3": 0.0, "views": ["m"]}}"#;
        assert!(serde_json::from_str::<PipelineConfig>(with_unknown).is_err());
    }

    #[test]
    fn view_spec_json_shapes() {
        let text = r#"["m", "s", {"mode": "additive", "base": "m", "with": "c"},
                       {"mode": "multiplicative", "base": "s", "with": "c", "lambda": 2.0}]"#;
        let views: Vec<ViewSpec> = serde_json::from_str(text).unwrap();
        assert_eq!(views.len(), 4);
        match &views[2] {
            ViewSpec::Composite(c) => {
                assert_eq!(c.mode, CompositeModeSpec::Additive);
                assert!(c.lambda.is_none());
            }
            _ => panic!("expected composite"),
        }
    }

    #[test]
    fn mgl_gamma_zero_equals_static_fusion() {
        // With gamma = 0 the pseudo-label stage contributes nothing and the
        // pipeline must equal a plain fused-graph classification composed
        // from the individual stages.
        let (cube, gt) = generate_synthetic_scene(24, 24, 8, 4, 0.02, 5).unwrap();
        let train = sample_training_labels(&gt, 3, 11).unwrap();
        let mut config = synthetic_config();
        config.superpixel_count = 16;
        config.mgl.gamma = 0.0;
        let (map, _) = run_mgl(&cube, &train, gt.num_classes, &config).unwrap();

        let standardized = standardize_bands(&cube).unwrap();
        let (reduced, _) = pca_reduce(&standardized, config.variance_target).unwrap();
        let seg = segment_only(&cube, &config).unwrap();
        let y_s = regularize_labels(&seg, &train, gt.num_classes).unwrap();
        let feats = compute_features(&seg, &reduced, config.h).unwrap();
        let n = seg.num_superpixels;
        let mut fused = Mat::zeros(n, n);
        for (z, c_v) in [
            (pairwise_sq_distances(&feats.mean, "M"), config.mgl.c_m),
            (
                pairwise_sq_distances(&feats.spatial_mean, "S"),
                config.mgl.c_s,
            ),
            (pairwise_sq_distances(&feats.centroid, "C"), config.mgl.c_c),
        ] {
            for (o, v) in fused.data.iter_mut().zip(&z.values.data) {
                *o += c_v * v;
            }
        }
        let z = FeatureDistanceMatrix {
            values: fused,
            view_tag: "fused".into(),
        };
        let w = symmetrize(&knn_graph_closed_form(&z, config.k).unwrap());
        let f = harmonic_propagate(&w, &y_s).unwrap();
        let classes = assign_classes(&f, Some(&w)).unwrap();
        let static_map = broadcast_to_pixels(&seg, &classes).unwrap();
        assert_eq!(map, static_map);
    }

    #[test]
    fn mgl_separable_scene_high_accuracy() {
        let (cube, gt) = generate_synthetic_scene(36, 36, 12, 4, 0.05, 23).unwrap();
        let train = sample_training_labels(&gt, 7, 41).unwrap();
        let mut config = synthetic_config();
        config.superpixel_count = 16;
        let (map, diag) = run_mgl(&cube, &train, gt.num_classes, &config).unwrap();
        assert!(diag.num_superpixels >= config.k + 2);
        let cm = confusion_matrix(&map, &gt, &train).unwrap();
        let m = metrics(&cm).unwrap();
        assert!(m.oa >= 0.95, "OA {}", m.oa);
    }

    #[test]
    fn pmgl_learned_weights_on_simplex() {
        let (cube, gt) = generate_synthetic_scene(30, 30, 10, 4, 0.05, 9).unwrap();
        let train = sample_training_labels(&gt, 5, 3).unwrap();
        let mut config = synthetic_config();
        config.superpixel_count = 25;
        let (_, diag) = run_pmgl(&cube, &train, gt.num_classes, &config).unwrap();
        let c = diag.feature_weights.expect("pmgl reports weights");
        assert_eq!(c.len(), config.pmgl.views.len());
        assert!(c.iter().all(|&x| x >= 0.0));
        assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn pipelines_deterministic() {
        let (cube, gt) = generate_synthetic_scene(24, 24, 6, 4, 0.03, 77).unwrap();
        let train = sample_training_labels(&gt, 4, 19).unwrap();
        let mut config = synthetic_config();
        config.superpixel_count = 16;
        let (a, _) = run_pmgl(&cube, &train, gt.num_classes, &config).unwrap();
        let (b, _) = run_pmgl(&cube, &train, gt.num_classes, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_single_class_training() {
        let (cube, gt) = generate_synthetic_scene(12, 12, 4, 2, 0.0, 1).unwrap();
        let mut train = vec![0u32; 144];
        train[0] = 1;
        let err = run_mgl(&cube, &train, gt.num_classes, &synthetic_config()).unwrap_err();
        assert!(err.to_string().contains("at least 2 classes"), "{err}");
    }
}
