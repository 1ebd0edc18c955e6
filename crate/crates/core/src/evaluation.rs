//! Evaluation protocol: random training-label sampling, confusion matrices,
//! OA/AA/Kappa and repeated randomized trials.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::data_io::{GroundTruth, HsiCube};
use crate::error::{Error, Result};
use crate::pipelines::{run_mgl, run_pmgl, PipelineConfig};

/// Which pipeline a trial runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mgl,
    Pmgl,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mgl" => Ok(Method::Mgl),
            "pmgl" => Ok(Method::Pmgl),
            other => Err(Error::InvalidArgument(format!(
                "unknown method {other:?} (expected mgl or pmgl)"
            ))),
        }
    }
}

/// Uniformly sample `min(per_class, class_size - 1)` training pixels per
/// class, without replacement, leaving at least one test pixel per class.
/// Returns a label map with 0 everywhere else. Deterministic per seed.
pub fn sample_training_labels(gt: &GroundTruth, per_class: usize, seed: u64) -> Result<Vec<u32>> {
    if per_class == 0 {
        return Err(Error::InvalidArgument(
            "per_class must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = vec![0u32; gt.labels.len()];
    for class in 1..=gt.num_classes as u32 {
        let mut pixels: Vec<usize> = (0..gt.labels.len())
            .filter(|&p| gt.labels[p] == class)
            .collect();
        if pixels.len() <= 1 {
            return Err(Error::InvalidArgument(format!(
                "class {class} has {} pixel(s); need at least 2 to keep a test pixel",
                pixels.len()
            )));
        }
        let take = per_class.min(pixels.len() - 1);
        // Partial Fisher-Yates.
        for i in 0..take {
            let j = rng.random_range(i..pixels.len());
            pixels.swap(i, j);
            out[pixels[i]] = class;
        }
    }
    Ok(out)
}

/// Class-by-class counts over test pixels: entry `(a, b)` counts pixels whose
/// true class is `a+1` and predicted class is `b+1`. Training pixels and
/// ground-truth zeros are excluded.
#[derive(Debug, Clone, Serialize)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    /// Row-major counts, true class by predicted class.
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn get(&self, true_class: usize, predicted: usize) -> u64 {
        self.counts[true_class * self.num_classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

pub fn confusion_matrix(
    pred: &[u32],
    gt: &GroundTruth,
    train_labels: &[u32],
) -> Result<ConfusionMatrix> {
    if pred.len() != gt.labels.len() || train_labels.len() != gt.labels.len() {
        return Err(Error::Dimension(format!(
            "prediction ({}), ground truth ({}) and training ({}) lengths disagree",
            pred.len(),
            gt.labels.len(),
            train_labels.len()
        )));
    }
    let c = gt.num_classes;
    let mut counts = vec![0u64; c * c];
    for p in 0..pred.len() {
        let truth = gt.labels[p];
        if truth == 0 || train_labels[p] != 0 {
            continue;
        }
        let predicted = pred[p];
        if predicted == 0 || predicted as usize > c {
            return Err(Error::InvalidArgument(format!(
                "prediction {predicted} at pixel {p} outside 1..={c}"
            )));
        }
        counts[(truth as usize - 1) * c + (predicted as usize - 1)] += 1;
    }
    Ok(ConfusionMatrix {
        num_classes: c,
        counts,
    })
}

/// OA / AA / Kappa and the per-class accuracies. Classes with no test pixels
/// carry NaN accuracy and are excluded from AA.
#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    pub per_class: Vec<f64>,
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let c = cm.num_classes;
    let total = cm.total();
    if total == 0 {
        return Err(Error::InvalidArgument("empty confusion matrix".into()));
    }
    let total_f = total as f64;

    let mut trace = 0u64;
    let mut per_class = Vec::with_capacity(c);
    let mut aa_sum = 0.0;
    let mut aa_count = 0usize;
    let mut expected = 0.0;
    for a in 0..c {
        trace += cm.get(a, a);
        let row: u64 = (0..c).map(|b| cm.get(a, b)).sum();
        let col: u64 = (0..c).map(|b| cm.get(b, a)).sum();
        expected += (row as f64 / total_f) * (col as f64 / total_f);
        if row == 0 {
            eprintln!(
                "warning: class {} has no test pixels; excluded from AA",
                a + 1
            );
            per_class.push(f64::NAN);
        } else {
            let acc = cm.get(a, a) as f64 / row as f64;
            per_class.push(acc);
            aa_sum += acc;
            aa_count += 1;
        }
    }
    let oa = trace as f64 / total_f;
    let aa = aa_sum / aa_count.max(1) as f64;
    let denom = 1.0 - expected;
    let kappa = if denom <= f64::EPSILON {
        // All mass concentrated by chance alone; perfect agreement counts as 1.
        if (oa - 1.0).abs() < 1e-15 {
            1.0
        } else {
            0.0
        }
    } else {
        (oa - expected) / denom
    };
    Ok(Metrics {
        oa,
        aa,
        kappa,
        per_class,
    })
}

/// One randomized trial's outcome.
#[derive(Debug, Clone, Serialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub seed: u64,
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    pub per_class: Vec<f64>,
}

/// Summary over repeated trials: per-trial metrics plus sample mean and
/// sample standard deviation (n-1 denominator).
#[derive(Debug, Clone, Serialize)]
pub struct TrialReport {
    pub method: Method,
    pub per_class_requested: usize,
    pub num_trials: usize,
    pub trials: Vec<TrialOutcome>,
    pub mean_oa: f64,
    pub std_oa: f64,
    pub mean_aa: f64,
    pub std_aa: f64,
    pub mean_kappa: f64,
    pub std_kappa: f64,
    pub mean_per_class: Vec<f64>,
    pub std_per_class: Vec<f64>,
    /// True when a single trial makes the standard deviations 0 by convention.
    pub degenerate_std: bool,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let valid: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if valid.is_empty() {
        return (f64::NAN, 0.0);
    }
    let m = valid.iter().sum::<f64>() / valid.len() as f64;
    if n < 2 || valid.len() < 2 {
        return (m, 0.0);
    }
    let var = valid.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (valid.len() - 1) as f64;
    (m, var.sqrt())
}

/// Run `num_trials` independent trials; trial t samples training labels with
/// seed `base_seed + t`. Trials can run on several threads; per-trial seeding
/// makes results identical regardless of scheduling.
#[allow(clippy::too_many_arguments)]
pub fn run_trials(
    cube: &HsiCube,
    gt: &GroundTruth,
    method: Method,
    config: &PipelineConfig,
    per_class: usize,
    num_trials: usize,
    base_seed: u64,
    jobs: usize,
) -> Result<TrialReport> {
    if num_trials == 0 {
        return Err(Error::InvalidArgument(
            "num_trials must be at least 1".into(),
        ));
    }
    if gt.width != cube.width || gt.height != cube.height {
        return Err(Error::Dimension(format!(
            "ground truth {}x{} does not match cube {}x{}",
            gt.width, gt.height, cube.width, cube.height
        )));
    }

    let run_one = |t: usize| -> Result<TrialOutcome> {
        let seed = base_seed.wrapping_add(t as u64);
        let train = sample_training_labels(gt, per_class, seed)?;
        let (map, _diag) = match method {
            Method::Mgl => run_mgl(cube, &train, gt.num_classes, config)?,
            Method::Pmgl => run_pmgl(cube, &train, gt.num_classes, config)?,
        };
        let cm = confusion_matrix(&map, gt, &train)?;
        debug_assert!(
            (0..map.len()).all(|p| train[p] == 0 || gt.labels[p] == train[p]),
            "training labels must agree with ground truth"
        );
        let m = metrics(&cm)?;
        Ok(TrialOutcome {
            trial: t,
            seed,
            oa: m.oa,
            aa: m.aa,
            kappa: m.kappa,
            per_class: m.per_class,
        })
    };

    let jobs = jobs.max(1).min(num_trials);
    let mut trials: Vec<TrialOutcome> = Vec::with_capacity(num_trials);
    if jobs == 1 {
        for t in 0..num_trials {
            trials.push(run_one(t)?);
        }
    } else {
        let mut slots: Vec<Option<Result<TrialOutcome>>> = Vec::new();
        slots.resize_with(num_trials, || None);
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for (chunk_idx, chunk) in slots.chunks_mut(num_trials.div_ceil(jobs)).enumerate() {
                let run_one = &run_one;
                let start = chunk_idx * num_trials.div_ceil(jobs);
                handles.push(scope.spawn(move || {
                    for (offset, slot) in chunk.iter_mut().enumerate() {
                        *slot = Some(run_one(start + offset));
                    }
                }));
            }
            for h in handles {
                h.join().expect("trial thread panicked");
            }
        });
        for slot in slots {
            trials.push(slot.expect("trial not run")?);
        }
    }

    let collect = |f: &dyn Fn(&TrialOutcome) -> f64| -> Vec<f64> { trials.iter().map(f).collect() };
    let (mean_oa, std_oa) = mean_std(&collect(&|t| t.oa));
    let (mean_aa, std_aa) = mean_std(&collect(&|t| t.aa));
    let (mean_kappa, std_kappa) = mean_std(&collect(&|t| t.kappa));
    let c = gt.num_classes;
    let mut mean_per_class = Vec::with_capacity(c);
    let mut std_per_class = Vec::with_capacity(c);
    for class in 0..c {
        let vals: Vec<f64> = trials.iter().map(|t| t.per_class[class]).collect();
        let (m, s) = mean_std(&vals);
        mean_per_class.push(m);
        std_per_class.push(s);
    }

    Ok(TrialReport {
        method,
        per_class_requested: per_class,
        num_trials,
        trials,
        mean_oa,
        std_oa,
        mean_aa,
        std_aa,
        mean_kappa,
        std_kappa,
        mean_per_class,
        std_per_class,
        degenerate_std: num_trials == 1,
    })
}

impl TrialReport {
    /// CSV with one row per trial followed by `mean` and `std` summary rows.
    /// Columns: trial, seed, oa, aa, kappa, class_1..class_c.
    pub fn to_csv(&self) -> String {
        let c = self.mean_per_class.len();
        let mut out = String::new();
        out.push_str("trial,seed,oa,aa,kappa");
        for j in 1..=c {
            let _ = write!(out, ",class_{j}");
        }
        out.push('\n');
        for t in &self.trials {
            let _ = write!(out, "{},{},{},{},{}", t.trial, t.seed, t.oa, t.aa, t.kappa);
            for v in &t.per_class {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        let _ = write!(
            out,
            "mean,,{},{},{}",
            self.mean_oa, self.mean_aa, self.mean_kappa
        );
        for v in &self.mean_per_class {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
        let _ = write!(
            out,
            "std,,{},{},{}",
            self.std_oa, self.std_aa, self.std_kappa
        );
        for v in &self.std_per_class {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
