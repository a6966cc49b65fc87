//! Experiment orchestration: multi-seed runs, run comparison, rate/alpha
//! sweeps, label-information analysis and the files each one writes.
//!
//! Run directory layout:
//!
//! ```text
//! config.toml  data/train.mxds  data/eval.mxds
//! seed_<s>/model.mxmd  seed_<s>/log.csv  seed_<s>/report.json
//! report_avg.json  manifest.json
//! ```

pub mod config;
pub mod manifest;
pub mod plot;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{parse_overrides, RunConfig, RunMethod, SweepAxis, SweepConfig};
pub use manifest::{sha256_hex, verify_manifest, Manifest, SeedState, SeedStatus, StreamAddr};

use crate::datagen::{decode_cifar, encode_dataset, make_blobs, read_dataset, Dataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{
    class_recall, confidence_analysis, dependency_report, label_information_curve, per_class_csv,
    seed_average, ClassReport, Condition, ConfidenceAnalysis, CurvePoint, DependencyReport, Partner,
};
use crate::rng::RngStream;
use crate::trainer::{load_model, log_to_csv, save_model, train, Mlp};

/// Stream key of the dataset generator, under master seed `data_seed`.
pub const DATA_STREAM: u64 = 0x6461_7461;
/// Stream key of a training run, under master seed `seed`.
pub const TRAIN_STREAM: u64 = 0x7472_6169;
/// Stream key of label-information pairing, under master seed `seed`.
pub const LABELINFO_STREAM: u64 = 0x6c62_6c69;

pub struct RunData {
    pub train: Dataset,
    pub eval: Dataset,
    /// SHA-256 over the encoded train split followed by the encoded eval split.
    pub hash: String,
    pub generated: bool,
}

impl RunData {
    pub fn new(train: Dataset, eval: Dataset, generated: bool) -> Result<Self> {
        if train.n_features() != eval.n_features() || train.n_classes != eval.n_classes {
            return Err(Error::Shape("train and eval splits disagree on layout".into()));
        }
        let mut bytes = encode_dataset(&train);
        bytes.extend(encode_dataset(&eval));
        Ok(RunData {
            hash: sha256_hex(&bytes),
            train,
            eval,
            generated,
        })
    }
}

pub fn load_data(cfg: &RunConfig) -> Result<RunData> {
    match (&cfg.train_path, &cfg.eval_path) {
        (Some(t), Some(e)) => RunData::new(read_dataset(t)?, read_dataset(e)?, false),
        _ => {
            let spec = cfg.fragility();
            let stream = RngStream::new(cfg.data_seed, DATA_STREAM);
            let train = make_blobs(&spec, cfg.n_train_per_class, Split::Train, &stream)?;
            let eval = make_blobs(&spec, cfg.n_eval_per_class, Split::Eval, &stream)?;
            RunData::new(train, eval, true)
        }
    }
}

/// Creates `dir`, first clearing it if it holds an earlier output. Refuses
/// to touch a non-empty directory without a manifest.
fn prepare_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        let empty = std::fs::read_dir(dir)?.next().is_none();
        if !empty {
            if !dir.join(manifest::MANIFEST_FILE).exists() {
                return Err(Error::Validation(format!(
                    "{} is not empty and holds no earlier output",
                    dir.display()
                )));
            }
            std::fs::remove_dir_all(dir)?;
        }
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn data_streams(cfg: &RunConfig, data: &RunData, m: &mut Manifest) {
    if data.generated {
        m.streams.insert(
            "data".into(),
            StreamAddr {
                master_seed: cfg.data_seed,
                stream_key: DATA_STREAM,
            },
        );
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    /// Per-seed reports of the seeds that completed, in config order.
    pub reports: Vec<ClassReport>,
    pub average: Option<ClassReport>,
    pub failed: Vec<u64>,
    pub manifest: Manifest,
}

impl RunOutcome {
    pub fn report_for(&self, seed: u64) -> Option<&ClassReport> {
        self.reports.iter().find(|r| r.seed == Some(seed))
    }
}

/// Trains one model per seed into `cfg.out`.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    let dir = cfg
        .out
        .clone()
        .ok_or_else(|| Error::Config("no output directory given".into()))?;
    cfg.validate()?;
    let data = load_data(cfg)?;
    run_with_data(cfg, &data, &dir)
}

/// Like [`run`] with the datasets already loaded. A seed whose loss stops
/// being finite is recorded as failed; the others still complete.
pub fn run_with_data(cfg: &RunConfig, data: &RunData, dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let aug = cfg.augmentation(data.train.n_features())?;
    let widths = cfg.widths(data.train.n_features(), data.train.n_classes);
    let schedule = cfg.schedule();
    let condition = cfg.condition();
    prepare_dir(dir)?;
    write(&dir.join("config.toml"), cfg.to_toml())?;
    write(&dir.join("data/train.mxds"), encode_dataset(&data.train))?;
    write(&dir.join("data/eval.mxds"), encode_dataset(&data.eval))?;

    let results: Vec<(u64, std::result::Result<(Mlp, String, ClassReport), String>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let stream = RngStream::new(seed, TRAIN_STREAM);
            let model = Mlp::init(&widths, &stream)?;
            match train(&model, &data.train, &schedule, &aug, &stream, Some(&data.eval)) {
                Ok(out) => {
                    let report = class_recall(&out.model, &data.eval, condition, Some(seed))?;
                    Ok((seed, Ok((out.model, log_to_csv(&out.log), report))))
                }
                Err(e @ Error::Diverged { .. }) => Ok((seed, Err(e.to_string()))),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let mut manifest = Manifest::new("run");
    manifest.config_hash = Some(cfg.hash());
    manifest.dataset_hash = Some(data.hash.clone());
    manifest.extra.insert("condition".into(), serde_json::to_value(condition)?);
    data_streams(cfg, data, &mut manifest);
    let (mut reports, mut failed) = (Vec::new(), Vec::new());
    for (seed, result) in results {
        manifest.streams.insert(
            format!("seed_{seed}"),
            StreamAddr {
                master_seed: seed,
                stream_key: TRAIN_STREAM,
            },
        );
        let sd = dir.join(format!("seed_{seed}"));
        match result {
            Ok((model, log, report)) => {
                std::fs::create_dir_all(&sd)?;
                save_model(&model, &sd.join("model.mxmd"))?;
                write(&sd.join("log.csv"), log)?;
                write_json(&sd.join("report.json"), &report)?;
                manifest.seeds.push(SeedStatus {
                    seed,
                    status: SeedState::Ok,
                    error: None,
                });
                reports.push(report);
            }
            Err(msg) => {
                manifest.seeds.push(SeedStatus {
                    seed,
                    status: SeedState::Failed,
                    error: Some(msg),
                });
                failed.push(seed);
            }
        }
    }
    let average = if reports.is_empty() {
        None
    } else {
        let avg = seed_average(&reports)?;
        write_json(&dir.join("report_avg.json"), &avg)?;
        Some(avg)
    };
    let manifest = manifest.seal(dir)?;
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        reports,
        average,
        failed,
        manifest,
    })
}

/// Writes both splits plus a manifest into `dir`.
pub fn gen_data(cfg: &RunConfig, dir: &Path) -> Result<RunData> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    prepare_dir(dir)?;
    write(&dir.join("config.toml"), cfg.to_toml())?;
    write(&dir.join("train.mxds"), encode_dataset(&data.train))?;
    write(&dir.join("eval.mxds"), encode_dataset(&data.eval))?;
    let mut m = Manifest::new("data");
    m.config_hash = Some(cfg.hash());
    m.dataset_hash = Some(data.hash.clone());
    data_streams(cfg, &data, &mut m);
    m.seal(dir)?;
    Ok(data)
}

/// Converts CIFAR-style binary batches into `.mxds` splits in `dir`.
pub fn gen_cifar(train_bin: &Path, eval_bin: &Path, n_classes: usize, dir: &Path) -> Result<RunData> {
    let mut train = decode_cifar(&std::fs::read(train_bin)?, n_classes)?;
    let mut eval = decode_cifar(&std::fs::read(eval_bin)?, n_classes)?;
    train.split = Split::Train;
    eval.split = Split::Eval;
    let data = RunData::new(train, eval, false)?;
    prepare_dir(dir)?;
    write(&dir.join("train.mxds"), encode_dataset(&data.train))?;
    write(&dir.join("eval.mxds"), encode_dataset(&data.eval))?;
    let mut m = Manifest::new("data");
    m.dataset_hash = Some(data.hash.clone());
    if let Some(norm) = &data.train.normalization {
        m.extra.insert("train_normalization".into(), serde_json::to_value(norm)?);
    }
    if let Some(norm) = &data.eval.normalization {
        m.extra.insert("eval_normalization".into(), serde_json::to_value(norm)?);
    }
    m.seal(dir)?;
    Ok(data)
}

/// Scores a checkpoint on an eval split and writes `report.json`.
pub fn evaluate(model_path: &Path, eval_path: &Path, condition: Condition, dir: &Path) -> Result<ClassReport> {
    let model = load_model(model_path)?;
    let eval = read_dataset(eval_path)?;
    let report = class_recall(&model, &eval, condition, None)?;
    prepare_dir(dir)?;
    write_json(&dir.join("report.json"), &report)?;
    let mut m = Manifest::new("evaluate");
    m.extra.insert("model_sha256".into(), sha256_hex(&std::fs::read(model_path)?).into());
    m.extra.insert("eval_sha256".into(), sha256_hex(&std::fs::read(eval_path)?).into());
    m.seal(dir)?;
    Ok(report)
}

fn group_of(delta: f64) -> &'static str {
    if delta < 0.0 {
        "degraded"
    } else if delta > 0.0 {
        "improved"
    } else {
        "unchanged"
    }
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub report: DependencyReport,
    pub confidence: ConfidenceAnalysis,
}

fn averaged_report(dir: &Path) -> Result<ClassReport> {
    let path = dir.join("report_avg.json");
    if !path.exists() {
        return Err(Error::RunFailed(format!("{} has no completed seeds", dir.display())));
    }
    read_json(&path)
}

/// Writes every comparison artifact for two averaged reports into `dir`.
fn write_comparison(vanilla: &ClassReport, treated: &ClassReport, dir: &Path) -> Result<Comparison> {
    let report = dependency_report(vanilla, treated)?;
    let confidence = confidence_analysis(vanilla, treated, &report)?;
    write(&dir.join("dependency.json"), report.to_json() + "\n")?;
    write_json(&dir.join("confidence.json"), &confidence)?;
    write(&dir.join("per_class.csv"), per_class_csv(vanilla, treated, &report))?;

    let mut order: Vec<usize> = (0..report.delta_recall_pp.len()).collect();
    order.sort_by(|&a, &b| report.delta_recall_pp[b].total_cmp(&report.delta_recall_pp[a]).then(a.cmp(&b)));
    let mut bars = String::from("rank,class_index,delta_pp,group\n");
    for (rank, &c) in order.iter().enumerate() {
        let d = report.delta_recall_pp[c];
        bars.push_str(&format!("{rank},{c},{d},{}\n", group_of(d)));
    }
    write(&dir.join("delta_recall.csv"), &bars)?;
    write(&dir.join("delta_recall.svg"), plot::render(&bars)?)?;

    let mut scatter = String::from("class_index,delta_recall_pp,delta_confidence,group\n");
    for p in &confidence.points {
        scatter.push_str(&format!(
            "{},{},{},{}\n",
            p.class,
            p.delta_recall_pp,
            p.delta_confidence,
            group_of(p.delta_recall_pp)
        ));
    }
    write(&dir.join("confidence.csv"), &scatter)?;
    write(&dir.join("confidence.svg"), plot::render(&scatter)?)?;
    Ok(Comparison { report, confidence })
}

/// Dependency metrics of `treated` against `vanilla`. Refuses runs built on
/// different datasets.
pub fn compare(vanilla_dir: &Path, treated_dir: &Path, dir: &Path) -> Result<Comparison> {
    let mv = Manifest::read(vanilla_dir)?;
    let mt = Manifest::read(treated_dir)?;
    match (&mv.dataset_hash, &mt.dataset_hash) {
        (Some(a), Some(b)) if a == b => {}
        _ => {
            return Err(Error::Validation(
                "dataset hash mismatch: the runs are not comparable".into(),
            ))
        }
    }
    let vanilla = averaged_report(vanilla_dir)?;
    let treated = averaged_report(treated_dir)?;
    prepare_dir(dir)?;
    let cmp = write_comparison(&vanilla, &treated, dir)?;
    let mut m = Manifest::new("compare");
    m.dataset_hash = mv.dataset_hash.clone();
    m.extra.insert("vanilla_config_hash".into(), serde_json::to_value(&mv.config_hash)?);
    m.extra.insert("treated_config_hash".into(), serde_json::to_value(&mt.config_hash)?);
    m.seal(dir)?;
    Ok(cmp)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// `vanilla`, `reference` (pure MSDA) or `point`.
    pub kind: String,
    pub axis_value: Option<f64>,
    pub accuracy: Option<f64>,
    pub accuracy_std: Option<f64>,
    pub n_dc: Option<f64>,
    pub n_dc_std: Option<f64>,
    pub mean_delta_dc: Option<f64>,
    pub mean_delta_dc_std: Option<f64>,
    pub selected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub axis: SweepAxis,
    pub value: f64,
    /// `best_accuracy`, or `dependency` when no point beats the baseline.
    pub rule: String,
    pub baseline_accuracy: f64,
    /// Every grid value that tied on the deciding criterion.
    pub tied_values: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub dir: PathBuf,
    pub vanilla: RunOutcome,
    pub reference: Option<RunOutcome>,
    pub points: Vec<(f64, RunOutcome)>,
    pub rows: Vec<SweepRow>,
    pub selection: Option<Selection>,
}

fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    Some((m, (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt()))
}

fn sweep_row(kind: &str, axis_value: Option<f64>, vanilla: &RunOutcome, run: &RunOutcome) -> Result<SweepRow> {
    let mut row = SweepRow {
        kind: kind.into(),
        axis_value,
        accuracy: None,
        accuracy_std: None,
        n_dc: None,
        n_dc_std: None,
        mean_delta_dc: None,
        mean_delta_dc_std: None,
        selected: false,
    };
    let (Some(v), Some(t)) = (&vanilla.average, &run.average) else {
        return Ok(row);
    };
    let dep = dependency_report(v, t)?;
    row.accuracy = Some(t.accuracy());
    row.accuracy_std = Some(t.accuracy_std());
    row.n_dc = Some(dep.n_dc() as f64);
    row.mean_delta_dc = dep.mean_delta_dc();
    let (mut ndc, mut mdc) = (Vec::new(), Vec::new());
    for tr in &run.reports {
        if let Some(vr) = tr.seed.and_then(|s| vanilla.report_for(s)) {
            let d = dependency_report(vr, tr)?;
            ndc.push(d.n_dc() as f64);
            mdc.extend(d.mean_delta_dc());
        }
    }
    row.n_dc_std = mean_std(&ndc).map(|p| p.1);
    row.mean_delta_dc_std = mean_std(&mdc).map(|p| p.1);
    Ok(row)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "kind,axis_value,accuracy,accuracy_std,n_dc,n_dc_std,mean_delta_dc,mean_delta_dc_std,selected\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.kind,
            opt(r.axis_value),
            opt(r.accuracy),
            opt(r.accuracy_std),
            opt(r.n_dc),
            opt(r.n_dc_std),
            opt(r.mean_delta_dc),
            opt(r.mean_delta_dc_std),
            r.selected
        ));
    }
    out
}

/// Best average accuracy wins, ties to the smallest value. With no point
/// above `baseline`, the point whose degraded classes lost least wins
/// (fewer degraded classes breaks ties). A rate of 1 is plain vanilla
/// training and is only chosen when it is the sole point.
pub fn select_point(axis: SweepAxis, points: &[SweepRow], baseline: f64) -> Option<Selection> {
    let mut cands: Vec<&SweepRow> = points.iter().filter(|r| r.accuracy.is_some()).collect();
    if axis == SweepAxis::DropmixRate && cands.len() > 1 {
        cands.retain(|r| r.axis_value != Some(1.0));
    }
    let best = cands.iter().filter_map(|r| r.accuracy).fold(f64::NEG_INFINITY, f64::max);
    if cands.is_empty() {
        return None;
    }
    let (rule, tied): (&str, Vec<&SweepRow>) = if best > baseline {
        ("best_accuracy", cands.iter().copied().filter(|r| r.accuracy == Some(best)).collect())
    } else {
        let key = |r: &SweepRow| (r.mean_delta_dc.unwrap_or(0.0), -r.n_dc.unwrap_or(0.0));
        let top = cands
            .iter()
            .map(|r| key(r))
            .fold((f64::NEG_INFINITY, f64::NEG_INFINITY), |a, b| if b > a { b } else { a });
        ("dependency", cands.iter().copied().filter(|r| key(r) == top).collect())
    };
    let tied_values: Vec<f64> = tied.iter().filter_map(|r| r.axis_value).collect();
    Some(Selection {
        axis,
        value: tied_values[0],
        rule: rule.into(),
        baseline_accuracy: baseline,
        tied_values,
    })
}

/// Runs the shared vanilla baseline, the pure-MSDA reference (rate axis
/// only) and every grid point, then writes `sweep.csv`, `sweep.svg` and
/// `selection.json`.
pub fn sweep(cfg: &SweepConfig, dir: &Path) -> Result<SweepOutcome> {
    cfg.validate()?;
    let data = load_data(&cfg.base)?;
    prepare_dir(dir)?;
    let vanilla = run_with_data(&cfg.base.as_vanilla(), &data, &dir.join("vanilla"))?;
    let reference = match cfg.axis {
        SweepAxis::DropmixRate => {
            let msda = RunConfig {
                dropmix_rate: None,
                ..cfg.base.clone()
            };
            Some(run_with_data(&msda, &data, &dir.join("reference"))?)
        }
        SweepAxis::Alpha => None,
    };
    let mut points = Vec::new();
    for (i, &v) in cfg.grid.iter().enumerate() {
        let out = run_with_data(&cfg.point(v), &data, &dir.join(format!("point_{i:02}")))?;
        points.push((v, out));
    }
    let v_avg = vanilla
        .average
        .as_ref()
        .ok_or_else(|| Error::RunFailed("every vanilla seed failed".into()))?;

    let mut rows = vec![sweep_row("vanilla", None, &vanilla, &vanilla)?];
    rows[0].n_dc = Some(0.0);
    rows[0].n_dc_std = Some(0.0);
    if let Some(r) = &reference {
        rows.push(sweep_row("reference", None, &vanilla, r)?);
    }
    let mut point_rows: Vec<SweepRow> = points
        .iter()
        .map(|(v, out)| sweep_row("point", Some(*v), &vanilla, out))
        .collect::<Result<_>>()?;
    let baseline = reference
        .as_ref()
        .and_then(|r| r.average.as_ref())
        .map(|a| a.accuracy())
        .unwrap_or(v_avg.accuracy());
    let selection = select_point(cfg.axis, &point_rows, baseline);
    if let Some(sel) = &selection {
        for r in point_rows.iter_mut() {
            r.selected = r.axis_value == Some(sel.value);
        }
    }
    rows.extend(point_rows);

    let csv = sweep_csv(&rows);
    write(&dir.join("sweep.csv"), &csv)?;
    write(&dir.join("sweep.svg"), plot::render(&csv)?)?;
    write_json(&dir.join("selection.json"), &selection)?;
    let mut m = Manifest::new("sweep");
    m.config_hash = Some(cfg.base.hash());
    m.dataset_hash = Some(data.hash.clone());
    data_streams(&cfg.base, &data, &mut m);
    m.extra.insert("axis".into(), serde_json::to_value(cfg.axis)?);
    m.extra.insert("grid".into(), serde_json::to_value(&cfg.grid)?);
    m.extra.insert("selection".into(), serde_json::to_value(&selection)?);
    if let Some(sel) = selection.as_ref().filter(|s| s.tied_values.len() > 1) {
        m.extra.insert(
            "tie".into(),
            format!("values {:?} tied; chose the smallest", sel.tied_values).into(),
        );
    }
    m.seal(dir)?;
    Ok(SweepOutcome {
        dir: dir.to_path_buf(),
        vanilla,
        reference,
        points,
        rows,
        selection,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedCrossings {
    pub seed: u64,
    /// Mix strength `1 - lambda` at which each class's curve drops below 0.5.
    pub crossing: Vec<f64>,
    pub fragile_mean: Option<f64>,
    pub robust_mean: Option<f64>,
    pub fragile_lower: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelInfoSummary {
    pub fragile_classes: Vec<usize>,
    pub seeds: Vec<SeedCrossings>,
    /// Seeds in which the fragile mean crossing is strictly below the robust one.
    pub fragile_lower_count: usize,
}

/// Crossing strength with the two non-crossing cases pinned: a curve that
/// starts below 0.5 carries no label information (0), one that never drops
/// below it keeps it throughout (1).
pub fn crossing_or_bound(curve: &[CurvePoint]) -> f64 {
    crate::metrics::crossing_strength(curve).unwrap_or_else(|| {
        let start = curve
            .iter()
            .max_by(|a, b| a.lambda.total_cmp(&b.lambda))
            .map(|p| p.mean_prob)
            .unwrap_or(0.0);
        if start < 0.5 {
            0.0
        } else {
            1.0
        }
    })
}

fn group_mean(xs: &[f64], classes: &[usize]) -> Option<f64> {
    mean_std(&classes.iter().map(|&c| xs[c]).collect::<Vec<_>>()).map(|p| p.0)
}

/// Label-information curves of every class against the pool of other
/// classes, for every completed seed of a run.
pub fn analyze_labelinfo(run_dir: &Path, dir: &Path, steps: usize, repeats: usize) -> Result<LabelInfoSummary> {
    if steps < 2 {
        return Err(Error::Parameter("need at least 2 lambda steps".into()));
    }
    let cfg = RunConfig::load(&run_dir.join("config.toml"), &[])?;
    let manifest = Manifest::read(run_dir)?;
    let eval = read_dataset(&run_dir.join("data/eval.mxds"))?;
    let spec = cfg.fragility();
    let fragile = if cfg.train_path.is_none() && spec.magnitude_coding {
        spec.fragile_classes()
    } else {
        Vec::new()
    };
    let robust: Vec<usize> = (0..eval.n_classes).filter(|c| !fragile.contains(c)).collect();
    let grid: Vec<f64> = (0..steps).map(|k| k as f64 / (steps - 1) as f64).collect();
    let group = |c: usize| if fragile.contains(&c) { "fragile" } else { "robust" };

    let mut curves_csv = String::from("seed,class_index,group,lambda,mean_prob\n");
    let mut cross_csv = String::from("seed,class_index,group,crossing_strength\n");
    let mut seeds = Vec::new();
    for s in manifest.seeds.iter().filter(|s| s.status == SeedState::Ok) {
        let model = load_model(&run_dir.join(format!("seed_{}/model.mxmd", s.seed)))?;
        let stream = RngStream::new(s.seed, LABELINFO_STREAM);
        let mut crossing = Vec::with_capacity(eval.n_classes);
        for c in 0..eval.n_classes {
            let curve = label_information_curve(&model, &eval, c, &Partner::Pool, &grid, repeats, &stream)?;
            for p in &curve {
                curves_csv.push_str(&format!("{},{c},{},{},{}\n", s.seed, group(c), p.lambda, p.mean_prob));
            }
            let x = crossing_or_bound(&curve);
            cross_csv.push_str(&format!("{},{c},{},{x}\n", s.seed, group(c)));
            crossing.push(x);
        }
        let fragile_mean = group_mean(&crossing, &fragile);
        let robust_mean = group_mean(&crossing, &robust);
        let fragile_lower = fragile_mean.zip(robust_mean).map(|(f, r)| f < r);
        seeds.push(SeedCrossings {
            seed: s.seed,
            crossing,
            fragile_mean,
            robust_mean,
            fragile_lower,
        });
    }
    let summary = LabelInfoSummary {
        fragile_lower_count: seeds.iter().filter(|s| s.fragile_lower == Some(true)).count(),
        fragile_classes: fragile,
        seeds,
    };
    prepare_dir(dir)?;
    write(&dir.join("curves.csv"), curves_csv)?;
    write(&dir.join("crossings.csv"), cross_csv)?;
    write_json(&dir.join("summary.json"), &summary)?;
    let mut m = Manifest::new("labelinfo");
    m.config_hash = manifest.config_hash.clone();
    m.dataset_hash = manifest.dataset_hash.clone();
    for s in &summary.seeds {
        m.streams.insert(
            format!("seed_{}", s.seed),
            StreamAddr {
                master_seed: s.seed,
                stream_key: LABELINFO_STREAM,
            },
        );
    }
    m.seal(dir)?;
    Ok(summary)
}
