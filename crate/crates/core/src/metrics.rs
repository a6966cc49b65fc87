//! Class-level recall and confidence, degraded/improved class metrics, and
//! label-information curves under mixing.

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::rng::{keys, RngStream};
use crate::tensor::Tensor;
use crate::trainer::{argmax, Classifier};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "vanilla")]
    Vanilla,
    #[serde(rename = "msda")]
    Msda,
    #[serde(rename = "msda+dropmix")]
    MsdaDropMix,
}

/// Spread of a per-class quantity across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub condition: Condition,
    /// `None` for seed-averaged reports.
    pub seed: Option<u64>,
    pub recall: Vec<f64>,
    /// Mean max-softmax probability over the class's eval samples.
    pub confidence: Vec<f64>,
    /// Mean probability of the true class; logged alongside `confidence`.
    pub true_class_prob: Vec<f64>,
    pub correct: Vec<usize>,
    pub n_eval_per_class: Vec<usize>,
    /// One overall accuracy per contributing seed.
    pub seed_accuracies: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall_band: Option<Band>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence_band: Option<Band>,
}

impl ClassReport {
    pub fn n_classes(&self) -> usize {
        self.recall.len()
    }

    /// Mean over seeds of overall accuracy.
    pub fn accuracy(&self) -> f64 {
        mean(&self.seed_accuracies)
    }

    /// Population standard deviation of accuracy over seeds.
    pub fn accuracy_std(&self) -> f64 {
        std_dev(&self.seed_accuracies)
    }

    pub fn mean_recall(&self) -> f64 {
        mean(&self.recall)
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Builds a report from predicted probabilities (argmax, ties to the lowest
/// class index).
pub fn report_from_probs(
    probs: &Tensor,
    labels: &[usize],
    n_classes: usize,
    condition: Condition,
    seed: Option<u64>,
) -> Result<ClassReport> {
    if probs.shape() != [labels.len(), n_classes] {
        return Err(Error::Shape(format!(
            "probabilities {:?} for {} samples of {n_classes} classes",
            probs.shape(),
            labels.len()
        )));
    }
    let mut correct = vec![0usize; n_classes];
    let mut counts = vec![0usize; n_classes];
    let mut conf = vec![0.0; n_classes];
    let mut truep = vec![0.0; n_classes];
    for (i, &c) in labels.iter().enumerate() {
        let row = probs.row(i);
        let pred = argmax(row);
        counts[c] += 1;
        correct[c] += (pred == c) as usize;
        conf[c] += row[pred];
        truep[c] += row[c];
    }
    if let Some(empty) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Validation(format!("class {empty} has no evaluation samples")));
    }
    let per = |v: &[f64]| v.iter().zip(&counts).map(|(s, &n)| s / n as f64).collect::<Vec<_>>();
    let recall = correct.iter().zip(&counts).map(|(&k, &n)| k as f64 / n as f64).collect();
    let total_correct: usize = correct.iter().sum();
    Ok(ClassReport {
        condition,
        seed,
        recall,
        confidence: per(&conf),
        true_class_prob: per(&truep),
        correct,
        n_eval_per_class: counts,
        seed_accuracies: vec![total_correct as f64 / labels.len() as f64],
        recall_band: None,
        confidence_band: None,
    })
}

pub fn class_recall<C: Classifier + ?Sized>(
    model: &C,
    eval: &Dataset,
    condition: Condition,
    seed: Option<u64>,
) -> Result<ClassReport> {
    if model.n_outputs() != eval.n_classes {
        return Err(Error::Shape(format!(
            "model has {} outputs, eval set has {} classes",
            model.n_outputs(),
            eval.n_classes
        )));
    }
    let probs = model.predict_proba(&eval.features)?;
    report_from_probs(&probs, &eval.labels, eval.n_classes, condition, seed)
}

/// Per-class mean over seeds, keeping the per-class min/max band.
pub fn seed_average(reports: &[ClassReport]) -> Result<ClassReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Validation("no reports to average".into()))?;
    if reports.len() == 1 {
        return Ok(first.clone());
    }
    let m = first.n_classes();
    for r in reports {
        if r.condition != first.condition {
            return Err(Error::Validation("cannot average reports of different conditions".into()));
        }
        if r.n_classes() != m || r.n_eval_per_class != first.n_eval_per_class {
            return Err(Error::Validation("reports disagree on class layout".into()));
        }
    }
    let n = reports.len() as f64;
    let avg = |f: fn(&ClassReport) -> &Vec<f64>| -> Vec<f64> {
        (0..m)
            .map(|c| reports.iter().map(|r| f(r)[c]).sum::<f64>() / n)
            .collect()
    };
    let band = |f: fn(&ClassReport) -> &Vec<f64>| Band {
        min: (0..m)
            .map(|c| reports.iter().map(|r| f(r)[c]).fold(f64::INFINITY, f64::min))
            .collect(),
        max: (0..m)
            .map(|c| reports.iter().map(|r| f(r)[c]).fold(f64::NEG_INFINITY, f64::max))
            .collect(),
    };
    Ok(ClassReport {
        condition: first.condition,
        seed: None,
        recall: avg(|r| &r.recall),
        confidence: avg(|r| &r.confidence),
        true_class_prob: avg(|r| &r.true_class_prob),
        correct: (0..m).map(|c| reports.iter().map(|r| r.correct[c]).sum()).collect(),
        n_eval_per_class: first.n_eval_per_class.clone(),
        seed_accuracies: reports.iter().flat_map(|r| r.seed_accuracies.clone()).collect(),
        recall_band: Some(band(|r| &r.recall)),
        confidence_band: Some(band(|r| &r.confidence)),
    })
}

/// Summary of a set of per-class changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub classes: Vec<usize>,
    pub count: usize,
    pub mean: Option<f64>,
    /// Population standard deviation across the group's classes.
    pub std: Option<f64>,
}

impl GroupStats {
    fn of(values: &[f64], classes: Vec<usize>) -> Self {
        let picked: Vec<f64> = classes.iter().map(|&c| values[c]).collect();
        let (mean_v, std_v) = if picked.is_empty() {
            (None, None)
        } else {
            (Some(mean(&picked)), Some(std_dev(&picked)))
        };
        GroupStats {
            count: classes.len(),
            classes,
            mean: mean_v,
            std: std_v,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DependencyReport {
    /// Treated minus vanilla recall, percentage points.
    pub delta_recall_pp: Vec<f64>,
    pub degraded: GroupStats,
    pub improved: GroupStats,
    pub accuracy_vanilla: f64,
    pub accuracy_vanilla_std: f64,
    pub accuracy_treated: f64,
    pub accuracy_treated_std: f64,
}

impl DependencyReport {
    pub fn n_dc(&self) -> usize {
        self.degraded.count
    }

    pub fn mean_delta_dc(&self) -> Option<f64> {
        self.degraded.mean
    }

    /// Treated minus vanilla mean accuracy, percentage points.
    pub fn accuracy_gain_pp(&self) -> f64 {
        100.0 * (self.accuracy_treated - self.accuracy_vanilla)
    }

    /// Classes with `delta < -band`; for sensitivity analysis only.
    pub fn degraded_beyond(&self, band: f64) -> Vec<usize> {
        (0..self.delta_recall_pp.len())
            .filter(|&c| self.delta_recall_pp[c] < -band)
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn dependency_report(vanilla: &ClassReport, treated: &ClassReport) -> Result<DependencyReport> {
    if vanilla.n_classes() != treated.n_classes() {
        return Err(Error::Validation(format!(
            "class count mismatch: {} vs {}",
            vanilla.n_classes(),
            treated.n_classes()
        )));
    }
    let delta: Vec<f64> = treated
        .recall
        .iter()
        .zip(&vanilla.recall)
        .map(|(t, v)| (t - v) * 100.0)
        .collect();
    let m = delta.len();
    let degraded = (0..m).filter(|&c| delta[c] < 0.0).collect();
    let improved = (0..m).filter(|&c| delta[c] > 0.0).collect();
    Ok(DependencyReport {
        degraded: GroupStats::of(&delta, degraded),
        improved: GroupStats::of(&delta, improved),
        delta_recall_pp: delta,
        accuracy_vanilla: vanilla.accuracy(),
        accuracy_vanilla_std: vanilla.accuracy_std(),
        accuracy_treated: treated.accuracy(),
        accuracy_treated_std: treated.accuracy_std(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidencePoint {
    pub class: usize,
    pub delta_confidence: f64,
    pub delta_recall_pp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceAnalysis {
    pub degraded_mean_delta: Option<f64>,
    pub improved_mean_delta: Option<f64>,
    pub points: Vec<ConfidencePoint>,
}

pub fn confidence_analysis(
    vanilla: &ClassReport,
    treated: &ClassReport,
    report: &DependencyReport,
) -> Result<ConfidenceAnalysis> {
    let m = vanilla.n_classes();
    if treated.n_classes() != m || report.delta_recall_pp.len() != m {
        return Err(Error::Validation("inconsistent class counts".into()));
    }
    let dconf: Vec<f64> = (0..m).map(|c| treated.confidence[c] - vanilla.confidence[c]).collect();
    let group = |g: &GroupStats| GroupStats::of(&dconf, g.classes.clone()).mean;
    Ok(ConfidenceAnalysis {
        degraded_mean_delta: group(&report.degraded),
        improved_mean_delta: group(&report.improved),
        points: (0..m)
            .map(|c| ConfidencePoint {
                class: c,
                delta_confidence: dconf[c],
                delta_recall_pp: report.delta_recall_pp[c],
            })
            .collect(),
    })
}

/// What class `a` is mixed with in a label-information curve.
#[derive(Clone, Debug, PartialEq)]
pub enum Partner {
    Class(usize),
    /// Samples drawn uniformly from every other class.
    Pool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub lambda: f64,
    pub mean_prob: f64,
}

/// Mean `P(a | lambda x_a + (1 - lambda) x_b)` over pairs, per lambda.
///
/// Every class-`a` sample is used once per repeat, paired with a partner
/// drawn from the `(LABELINFO, repeat)` stream (a permutation of the partner
/// class for [`Partner::Class`]). Points come back sorted by ascending lambda.
pub fn label_information_curve<C: Classifier + ?Sized>(
    model: &C,
    eval: &Dataset,
    class_a: usize,
    partner: &Partner,
    lambda_grid: &[f64],
    repeats: usize,
    stream: &RngStream,
) -> Result<Vec<CurvePoint>> {
    if lambda_grid.iter().any(|l| !(0.0..=1.0).contains(l)) {
        return Err(Error::Parameter("lambda grid must lie in [0, 1]".into()));
    }
    let a_idx = eval.indices_of(class_a);
    if a_idx.is_empty() {
        return Err(Error::Validation(format!("class {class_a} has no eval samples")));
    }
    let pool: Vec<usize> = match partner {
        Partner::Class(b) => eval.indices_of(*b),
        Partner::Pool => (0..eval.len()).filter(|&i| eval.labels[i] != class_a).collect(),
    };
    if pool.is_empty() {
        return Err(Error::Validation("partner has no eval samples".into()));
    }
    let mut pairs = Vec::with_capacity(a_idx.len() * repeats.max(1));
    for r in 0..repeats.max(1) {
        let mut s = stream.derive(keys::LABELINFO, r as u64);
        let chosen: Vec<usize> = match partner {
            Partner::Class(_) if pool.len() == a_idx.len() => {
                s.permutation(pool.len()).into_iter().map(|j| pool[j]).collect()
            }
            _ => (0..a_idx.len()).map(|_| pool[s.below(pool.len())]).collect(),
        };
        pairs.extend(a_idx.iter().copied().zip(chosen));
    }
    let xa = eval.features.select_rows(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let xb = eval.features.select_rows(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    let mut grid = lambda_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid.into_iter()
        .map(|lambda| {
            let mixed = Tensor::lerp(&xa, &xb, lambda)?;
            let p = model.predict_proba(&mixed)?;
            let mean_prob = (0..p.rows()).map(|i| p.row(i)[class_a]).sum::<f64>() / p.rows() as f64;
            Ok(CurvePoint { lambda, mean_prob })
        })
        .collect()
}

/// Mix strength `1 - lambda` at which the curve first falls below 0.5 when
/// walking from `lambda = 1` downward, linearly interpolated; `None` if it
/// never does (or starts below 0.5).
pub fn crossing_strength(curve: &[CurvePoint]) -> Option<f64> {
    let mut pts: Vec<&CurvePoint> = curve.iter().collect();
    pts.sort_by(|a, b| b.lambda.total_cmp(&a.lambda));
    let first = pts.first()?;
    if first.mean_prob < 0.5 {
        return None;
    }
    pts.windows(2).find_map(|w| {
        let (hi, lo) = (w[0], w[1]);
        (lo.mean_prob < 0.5).then(|| {
            let t = (hi.mean_prob - 0.5) / (hi.mean_prob - lo.mean_prob);
            1.0 - (hi.lambda + t * (lo.lambda - hi.lambda))
        })
    })
}

/// `class_index,recall_vanilla,recall_treated,delta_pp,confidence_delta,group`
pub fn per_class_csv(vanilla: &ClassReport, treated: &ClassReport, report: &DependencyReport) -> String {
    let mut out = String::from("class_index,recall_vanilla,recall_treated,delta_pp,confidence_delta,group\n");
    for c in 0..report.delta_recall_pp.len() {
        let d = report.delta_recall_pp[c];
        let group = if d < 0.0 {
            "degraded"
        } else if d > 0.0 {
            "improved"
        } else {
            "unchanged"
        };
        out.push_str(&format!(
            "{c},{},{},{},{},{group}\n",
            vanilla.recall[c],
            treated.recall[c],
            d,
            treated.confidence[c] - vanilla.confidence[c]
        ));
    }
    out
}
