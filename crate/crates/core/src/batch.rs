//! Batch attack runs and post-hoc verification.
//!
//! A [`RunSpec`] (TOML) names the attack, the oracle, the inputs and the
//! targets. [`run_batch`] attacks every input independently and writes, under
//! the output directory:
//!
//! * `results.csv`: one row per instance;
//! * `histogram.csv`: query counts of successful instances in 20 equal-width
//!   bins from 0 to the largest count (`bin_start,bin_end,count`);
//! * `report.json`: the fully resolved spec (every hyperparameter, defaults
//!   included), the summary and the wall-clock time;
//! * `orig/<id>.nbt`, `adv/<id>.nbt` and `adv/<id>.png` per instance.
//!
//! Classifying the clean inputs (to pick random targets or the true label)
//! and searching for partial-information starting images cost oracle
//! queries outside the attacks; they are reported as `setup_queries`.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{
    eot_attack, label_set_attack, partial_info_attack, targeted_attack, untargeted_attack, AttackConfig,
    AttackResult,
};
use crate::imageio::{self, ImageIoError};
use crate::labels::LabelMap;
use crate::oracle::wire::WireMode;
use crate::oracle::{
    load_model, HttpOracle, LocalOracle, Metered, MlpModel, Oracle, OracleError, OutputMode, ScoreTransform,
};
use crate::rng::Rng;
use crate::synth;
use crate::tensor::{linf_dist, Image, Shape};
use crate::transform::{rotate, sample_theta, EotConfig};

pub const HISTOGRAM_BINS: usize = 20;
/// Slack allowed on the ℓ∞ bound when verifying.
pub const BOUND_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("invalid run spec: {0}")]
    Spec(String),
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("image {path}: {source}")]
    Image { path: PathBuf, source: ImageIoError },
    #[error("model: {0}")]
    Model(#[from] crate::oracle::ModelError),
    #[error("labels: {0}")]
    Labels(#[from] crate::labels::LabelError),
    #[error("oracle: {0}")]
    Oracle(#[from] OracleError),
    #[error("output: {0}")]
    Output(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Targeted,
    Untargeted,
    PartialInfo,
    Eot,
    LabelSet,
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AttackKind::Targeted => "targeted",
            AttackKind::Untargeted => "untargeted",
            AttackKind::PartialInfo => "partial_info",
            AttackKind::Eot => "eot",
            AttackKind::LabelSet => "label_set",
        };
        f.write_str(s)
    }
}

/// Where queries go: an in-process model file or a remote service.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSpec {
    pub model: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub mode: WireMode,
    /// Truncation level for top-k mode.
    pub k: Option<usize>,
    /// Local top-k mode only.
    pub score_transform: Option<ScoreTransform>,
    /// Needed for random targets when a remote service returns only top-k.
    pub num_classes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSpec {
    pub count: usize,
    pub seed: u64,
    pub contrast: f64,
    /// Coarse lattice size of the smooth images.
    pub grid: usize,
    /// Required when the oracle is remote; taken from the model otherwise.
    pub shape: Option<Shape>,
}

impl Default for GenerateSpec {
    fn default() -> Self {
        Self {
            count: 10,
            seed: 0,
            contrast: synth::DESK_CONTRAST,
            grid: 4,
            shape: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSpec {
    /// `.nbt` or `.png` files.
    pub images: Vec<PathBuf>,
    pub generate: Option<GenerateSpec>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSpec {
    /// Explicit targets, cycled over the instances. When empty, each
    /// instance gets a uniformly random target other than its clean top-1.
    pub labels: Vec<usize>,
    pub seed: u64,
    /// Labels to avoid in a label-set attack, by name or id.
    pub label_set: Vec<String>,
    /// Sidecar naming the classes, one per line.
    pub label_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub kind: AttackKind,
    pub oracle: OracleSpec,
    pub inputs: InputSpec,
    pub targets: TargetSpec,
    pub attack: AttackConfig,
    pub output_dir: PathBuf,
    /// Root seed; instance `i` attacks with NES seed derived from (seed, i).
    pub seed: u64,
    /// The batch passes when its success rate reaches this value.
    pub success_threshold: f64,
    /// Attack instances concurrently.
    pub parallel: bool,
    /// Partial information: explicit starting images, one per instance.
    pub start_images: Vec<PathBuf>,
    /// Partial information: candidate images tried per instance when
    /// searching for a start classified as the target.
    pub start_search: usize,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            kind: AttackKind::Targeted,
            oracle: OracleSpec::default(),
            inputs: InputSpec::default(),
            targets: TargetSpec::default(),
            attack: AttackConfig::default(),
            output_dir: PathBuf::from("nbx-out"),
            seed: 0,
            success_threshold: 0.0,
            parallel: true,
            start_images: Vec::new(),
            start_search: 10_000,
        }
    }
}

impl RunSpec {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Reads a spec file. Relative paths inside it are taken relative to the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, BatchError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| BatchError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut spec = Self::from_toml(&text).map_err(|message| BatchError::Parse {
            path: path.to_path_buf(),
            message,
        })?;
        if let Some(dir) = path.parent() {
            spec.rebase(dir);
        }
        Ok(spec)
    }

    fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let Some(m) = &mut self.oracle.model {
            fix(m);
        }
        self.inputs.images.iter_mut().for_each(fix);
        self.start_images.iter_mut().for_each(fix);
        if let Some(l) = &mut self.targets.label_file {
            fix(l);
        }
        fix(&mut self.output_dir);
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<(), BatchError> {
        let bad = |m: &str| Err(BatchError::Spec(m.to_string()));
        self.attack.validate().map_err(|e| BatchError::Spec(e.to_string()))?;
        match (&self.oracle.model, &self.oracle.endpoint) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return bad("set exactly one of oracle.model and oracle.endpoint"),
        }
        if self.oracle.mode == WireMode::Topk && self.oracle.k.is_none_or(|k| k == 0) {
            return bad("top-k mode needs oracle.k >= 1");
        }
        if self.inputs.images.is_empty() && self.inputs.generate.as_ref().is_none_or(|g| g.count == 0) {
            return bad("no inputs: give inputs.images or inputs.generate with count >= 1");
        }
        if !(0.0..=1.0).contains(&self.success_threshold) {
            return bad("success_threshold must lie in [0, 1]");
        }
        match self.kind {
            AttackKind::Eot if self.attack.eot.is_none() => return bad("eot runs need [attack.eot]"),
            AttackKind::Eot if self.oracle.mode == WireMode::Topk => return bad("eot runs need full outputs"),
            AttackKind::LabelSet if self.targets.label_set.is_empty() => {
                return bad("label_set runs need targets.label_set")
            }
            AttackKind::PartialInfo if !self.start_images.is_empty() && self.start_images.len() < self.instance_count() => {
                return bad("start_images must list one image per instance")
            }
            _ => {}
        }
        Ok(())
    }

    fn instance_count(&self) -> usize {
        self.inputs.images.len() + self.inputs.generate.as_ref().map_or(0, |g| g.count)
    }
}

/// One row of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub instance_id: usize,
    pub success: bool,
    pub queries: u64,
    pub linf: Option<f64>,
    pub final_prob: Option<f64>,
    pub weak_success: bool,
    pub source_label: Option<usize>,
    pub target: Option<usize>,
    pub epsilon: Option<f64>,
    pub adversariality: Option<f64>,
    pub error: Option<String>,
}

/// One row of `histogram.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_start: f64,
    pub bin_end: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub kind: AttackKind,
    pub instances: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean attack queries over successful instances.
    pub mean_queries: Option<f64>,
    pub median_queries: Option<f64>,
    pub errors: usize,
    pub setup_queries: u64,
    pub success_threshold: f64,
    pub passed: bool,
    pub wall_clock_secs: f64,
}

impl fmt::Display for BatchSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "attack        {}", self.kind)?;
        writeln!(
            f,
            "success rate  {:.1}% ({}/{})",
            100.0 * self.success_rate,
            self.successes,
            self.instances
        )?;
        match (self.mean_queries, self.median_queries) {
            (Some(mean), Some(median)) => writeln!(f, "queries       mean {mean:.1}, median {median:.1}")?,
            _ => writeln!(f, "queries       n/a")?,
        }
        writeln!(f, "errors        {}", self.errors)?;
        writeln!(f, "setup queries {}", self.setup_queries)?;
        writeln!(f, "wall clock    {:.1}s", self.wall_clock_secs)?;
        write!(
            f,
            "threshold     {:.1}% -> {}",
            100.0 * self.success_threshold,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchReport {
    pub summary: BatchSummary,
    pub records: Vec<InstanceRecord>,
    pub histogram: Vec<HistogramBin>,
}

/// 20 equal-width bins over `[0, max]`; the top edge belongs to the last bin.
pub fn histogram(values: &[u64]) -> Vec<HistogramBin> {
    let Some(&max) = values.iter().max() else {
        return Vec::new();
    };
    let width = max as f64 / HISTOGRAM_BINS as f64;
    let mut counts = [0usize; HISTOGRAM_BINS];
    for &v in values {
        let idx = if width > 0.0 {
            ((v as f64 / width).floor() as usize).min(HISTOGRAM_BINS - 1)
        } else {
            0
        };
        counts[idx] += 1;
    }
    counts
        .iter()
        .enumerate()
        .map(|(i, &count)| HistogramBin {
            bin_start: i as f64 * width,
            bin_end: (i + 1) as f64 * width,
            count,
        })
        .collect()
}

/// Mean and median attack queries over successful rows.
pub fn success_query_stats(records: &[InstanceRecord]) -> (Option<f64>, Option<f64>) {
    let mut q: Vec<u64> = records.iter().filter(|r| r.success).map(|r| r.queries).collect();
    if q.is_empty() {
        return (None, None);
    }
    q.sort_unstable();
    let mean = q.iter().sum::<u64>() as f64 / q.len() as f64;
    let mid = q.len() / 2;
    let median = if q.len().is_multiple_of(2) {
        (q[mid - 1] + q[mid]) as f64 / 2.0
    } else {
        q[mid] as f64
    };
    (Some(mean), Some(median))
}

/// An oracle and, when it runs in-process, its model.
pub type BuiltOracle = (Box<dyn Oracle + Send>, Option<Arc<MlpModel>>);

/// Builds the oracle an [`OracleSpec`] describes.
pub fn build_oracle(spec: &OracleSpec) -> Result<BuiltOracle, BatchError> {
    let mode = match spec.mode {
        WireMode::Full => OutputMode::Full,
        WireMode::Topk => OutputMode::Topk {
            k: spec.k.unwrap_or(1),
            transform: spec.score_transform,
        },
    };
    match (&spec.model, &spec.endpoint) {
        (Some(path), _) => {
            let model = Arc::new(load_model(path)?);
            Ok((Box::new(LocalOracle::new(model.clone(), mode)), Some(model)))
        }
        (None, Some(url)) => {
            let mut o = HttpOracle::new(url, spec.mode);
            if let Some(k) = spec.k {
                o = o.with_k(k);
            }
            Ok((Box::new(o), None))
        }
        (None, None) => Err(BatchError::Spec("no oracle configured".into())),
    }
}

fn load_inputs(spec: &RunSpec, model: Option<&MlpModel>) -> Result<Vec<Image>, BatchError> {
    let mut images = Vec::new();
    for path in &spec.inputs.images {
        images.push(imageio::load_image(path).map_err(|source| BatchError::Image {
            path: path.clone(),
            source,
        })?);
    }
    if let Some(g) = &spec.inputs.generate {
        let shape = g
            .shape
            .or(model.map(|m| m.input_shape()))
            .ok_or_else(|| BatchError::Spec("inputs.generate.shape is required for remote oracles".into()))?;
        let mut rng = Rng::derive(g.seed, 0x696e);
        images.extend((0..g.count).map(|_| synth::smooth_image(shape, g.grid, g.contrast, &mut rng)));
    }
    Ok(images)
}

fn instance_seed(root: u64, id: usize) -> u64 {
    Rng::derive(root, id as u64).next_u64()
}

struct Prepared<'a> {
    spec: &'a RunSpec,
    oracle: &'a dyn Oracle,
    setup: Metered<&'a dyn Oracle>,
    num_classes: Option<usize>,
    label_set: BTreeSet<usize>,
}

impl Prepared<'_> {
    fn run(&self, id: usize, x: &Image, out_dir: &Path) -> InstanceRecord {
        let mut rec = InstanceRecord {
            instance_id: id,
            success: false,
            queries: 0,
            linf: None,
            final_prob: None,
            weak_success: false,
            source_label: None,
            target: None,
            epsilon: None,
            adversariality: None,
            error: None,
        };
        match self.attack(id, x, &mut rec) {
            Ok(result) => {
                rec.success = result.success;
                rec.weak_success = result.weak_success;
                rec.queries = result.queries;
                rec.linf = linf_dist(&result.adv, x).ok();
                rec.final_prob = result.final_target_prob;
                rec.epsilon = Some(result.epsilon_achieved);
                rec.adversariality = result.adversariality;
                if let Err(e) = save_pair(out_dir, id, x, &result.adv) {
                    rec.error = Some(e);
                }
            }
            Err(e) => rec.error = Some(e),
        }
        rec
    }

    fn attack(&self, id: usize, x: &Image, rec: &mut InstanceRecord) -> Result<AttackResult, String> {
        let spec = self.spec;
        let mut cfg = spec.attack.clone();
        cfg.nes.seed = instance_seed(spec.seed, id);
        let clean = self.setup.classify(x).map_err(|e| e.to_string())?;
        let source = clean.top1().ok_or("oracle returned no labels")?;
        rec.source_label = Some(source);
        let target = || -> Result<usize, String> {
            if !spec.targets.labels.is_empty() {
                return Ok(spec.targets.labels[id % spec.targets.labels.len()]);
            }
            let classes = self
                .num_classes
                .or(clean.probabilities().map(<[f64]>::len))
                .ok_or("random targets need oracle.num_classes")?;
            if classes < 2 {
                return Err("random targets need at least two classes".into());
            }
            let mut t = Rng::derive(spec.targets.seed, id as u64).below(classes - 1);
            if t >= source {
                t += 1;
            }
            Ok(t)
        };
        let result = match spec.kind {
            AttackKind::Targeted => {
                let t = target()?;
                rec.target = Some(t);
                targeted_attack(self.oracle, x, t, &cfg)
            }
            AttackKind::Untargeted => untargeted_attack(self.oracle, x, source, &cfg),
            AttackKind::Eot => {
                let t = target()?;
                rec.target = Some(t);
                eot_attack(self.oracle, x, t, &cfg)
            }
            AttackKind::LabelSet => label_set_attack(self.oracle, x, &self.label_set, &cfg),
            AttackKind::PartialInfo => {
                let t = target()?;
                rec.target = Some(t);
                let start = self.start_image(id, x.shape(), t)?;
                partial_info_attack(self.oracle, x, &start, t, &cfg)
            }
        };
        result.map_err(|e| e.to_string())
    }

    fn start_image(&self, id: usize, shape: Shape, target: usize) -> Result<Image, String> {
        if let Some(path) = self.spec.start_images.get(id) {
            return imageio::load_image(path).map_err(|e| format!("{}: {e}", path.display()));
        }
        let g = self.spec.inputs.generate.clone().unwrap_or_default();
        let mut rng = Rng::derive(self.spec.seed ^ 0x0073_7461_7274, id as u64);
        for _ in 0..self.spec.start_search {
            let cand = synth::smooth_image(shape, g.grid, g.contrast, &mut rng);
            let out = self.setup.classify(&cand).map_err(|e| e.to_string())?;
            if out.top1() == Some(target) {
                return Ok(cand);
            }
        }
        Err(format!(
            "no starting image classified as {target} in {} candidates",
            self.spec.start_search
        ))
    }
}

fn save_pair(dir: &Path, id: usize, orig: &Image, adv: &Image) -> Result<(), String> {
    let name = format!("{id:04}");
    let run = || -> Result<(), ImageIoError> {
        imageio::save_raw(dir.join("orig").join(format!("{name}.nbt")), orig)?;
        imageio::save_raw(dir.join("adv").join(format!("{name}.nbt")), adv)?;
        if matches!(adv.shape().channels, 1 | 3) {
            imageio::save_png(dir.join("adv").join(format!("{name}.png")), adv)?;
        }
        Ok(())
    };
    run().map_err(|e| e.to_string())
}

/// Runs every instance of `spec` and writes the outputs described in the
/// module docs. Spec errors abort before any query; per-instance failures
/// are recorded and do not stop the batch.
pub fn run_batch(spec: &RunSpec) -> Result<BatchReport, BatchError> {
    spec.validate()?;
    let started = Instant::now();
    let (oracle, model) = build_oracle(&spec.oracle)?;
    let inputs = load_inputs(spec, model.as_deref())?;
    let label_set = if spec.kind == AttackKind::LabelSet {
        let map = match &spec.targets.label_file {
            Some(p) => LabelMap::load(p)?,
            None => LabelMap::default(),
        };
        map.resolve(&spec.targets.label_set)?
    } else {
        BTreeSet::new()
    };
    let out = &spec.output_dir;
    for sub in ["orig", "adv"] {
        fs::create_dir_all(out.join(sub)).map_err(|e| BatchError::Output(format!("{}: {e}", out.display())))?;
    }

    let oracle_ref: &dyn Oracle = &*oracle;
    let prepared = Prepared {
        spec,
        oracle: oracle_ref,
        setup: Metered::new(oracle_ref, None),
        num_classes: spec.oracle.num_classes.or(model.as_ref().map(|m| m.num_classes())),
        label_set,
    };
    let records: Vec<InstanceRecord> = if spec.parallel {
        inputs
            .par_iter()
            .enumerate()
            .map(|(id, x)| prepared.run(id, x, out))
            .collect()
    } else {
        inputs
            .iter()
            .enumerate()
            .map(|(id, x)| prepared.run(id, x, out))
            .collect()
    };

    let successes = records.iter().filter(|r| r.success).count();
    let success_rate = successes as f64 / records.len() as f64;
    let (mean_queries, median_queries) = success_query_stats(&records);
    let hist = histogram(
        &records
            .iter()
            .filter(|r| r.success)
            .map(|r| r.queries)
            .collect::<Vec<_>>(),
    );
    let summary = BatchSummary {
        kind: spec.kind,
        instances: records.len(),
        successes,
        success_rate,
        mean_queries,
        median_queries,
        errors: records.iter().filter(|r| r.error.is_some()).count(),
        setup_queries: prepared.setup.queries(),
        success_threshold: spec.success_threshold,
        passed: success_rate >= spec.success_threshold,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    let report = BatchReport {
        summary,
        records,
        histogram: hist,
    };
    write_report(spec, &report)?;
    Ok(report)
}

fn write_report(spec: &RunSpec, report: &BatchReport) -> Result<(), BatchError> {
    let out = &spec.output_dir;
    let err = |e: &dyn fmt::Display| BatchError::Output(e.to_string());
    let mut w = csv::Writer::from_path(out.join("results.csv")).map_err(|e| err(&e))?;
    for r in &report.records {
        w.serialize(r).map_err(|e| err(&e))?;
    }
    w.flush().map_err(|e| err(&e))?;
    let mut w = csv::Writer::from_path(out.join("histogram.csv")).map_err(|e| err(&e))?;
    for b in &report.histogram {
        w.serialize(b).map_err(|e| err(&e))?;
    }
    w.flush().map_err(|e| err(&e))?;
    let json = serde_json::json!({
        "spec": spec,
        "summary": report.summary,
    });
    fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&json).expect("report serializes"),
    )
    .map_err(|e| err(&e))?;
    Ok(())
}

/// Reads `results.csv` back.
pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<InstanceRecord>, BatchError> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| BatchError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    r.deserialize().collect::<Result<_, _>>().map_err(|e| BatchError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// What the adversarial image must achieve.
#[derive(Debug, Clone, PartialEq)]
pub enum Condition {
    /// Top-1 label equals the given label.
    Target(usize),
    /// Top-1 label differs from the given label.
    NotLabel(usize),
    /// Top-1 label of the adversarial image differs from the original's.
    Misclassified,
    /// Top-1 label lies outside the set.
    Avoid(BTreeSet<usize>),
    /// At least `threshold` of `samples` random rotations (seeded) are
    /// classified as `label`.
    RotatedTarget {
        label: usize,
        eot: EotConfig,
        seed: u64,
    },
}

impl FromStr for Condition {
    type Err = String;

    /// `target=3`, `not=3`, `misclassified`, `avoid=1,2`, `rotated-target=3`.
    fn from_str(s: &str) -> Result<Self, String> {
        let (key, value) = s.split_once('=').unwrap_or((s, ""));
        let label = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("bad label {v:?}: {e}"));
        match key.trim() {
            "target" => Ok(Condition::Target(label(value)?)),
            "not" => Ok(Condition::NotLabel(label(value)?)),
            "misclassified" => Ok(Condition::Misclassified),
            "avoid" => Ok(Condition::Avoid(value.split(',').map(label).collect::<Result<_, _>>()?)),
            "rotated-target" => Ok(Condition::RotatedTarget {
                label: label(value)?,
                eot: EotConfig::default(),
                seed: 0,
            }),
            other => Err(format!(
                "unknown condition {other:?} (expected target=, not=, misclassified, avoid=, rotated-target=)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub linf: f64,
    pub epsilon: f64,
    pub bound_holds: bool,
    pub top1: Option<usize>,
    pub condition_holds: bool,
    /// Fraction of rotations on target, for rotation conditions.
    pub adversariality: Option<f64>,
}

impl Verdict {
    pub fn holds(&self) -> bool {
        self.bound_holds && self.condition_holds
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "linf {:.6e} vs epsilon {} -> bound {}",
            self.linf,
            self.epsilon,
            if self.bound_holds { "holds" } else { "VIOLATED" }
        )?;
        if let Some(a) = self.adversariality {
            writeln!(f, "adversariality {a:.3}")?;
        }
        write!(
            f,
            "top-1 {} -> condition {}",
            self.top1.map_or("none".to_string(), |t| t.to_string()),
            if self.condition_holds { "holds" } else { "FAILS" }
        )
    }
}

/// Re-checks an attack output: the ℓ∞ distance to `original` (with
/// [`BOUND_TOLERANCE`] slack) and the classification condition.
pub fn verify(
    adv: &Image,
    original: &Image,
    epsilon: f64,
    oracle: &dyn Oracle,
    condition: &Condition,
) -> Result<Verdict, BatchError> {
    let linf = linf_dist(adv, original).map_err(|e| BatchError::Spec(e.to_string()))?;
    let top1 = oracle.classify(adv)?.top1();
    let mut adversariality = None;
    let condition_holds = match condition {
        Condition::Target(t) => top1 == Some(*t),
        Condition::NotLabel(t) => top1.is_some_and(|l| l != *t),
        Condition::Misclassified => {
            let orig = oracle.classify(original)?.top1();
            top1.is_some() && top1 != orig
        }
        Condition::Avoid(set) => top1.is_some_and(|l| !set.contains(&l)),
        Condition::RotatedTarget { label, eot, seed } => {
            let mut rng = Rng::new(*seed);
            let mut hits = 0;
            for _ in 0..eot.vote_samples {
                let out = oracle.classify(&rotate(adv, sample_theta(eot, &mut rng)))?;
                if out.top1() == Some(*label) {
                    hits += 1;
                }
            }
            let frac = hits as f64 / eot.vote_samples as f64;
            adversariality = Some(frac);
            frac >= eot.vote_threshold
        }
    };
    Ok(Verdict {
        linf,
        epsilon,
        bound_holds: linf <= epsilon + BOUND_TOLERANCE,
        top1,
        condition_holds,
        adversariality,
    })
}

/// [`verify`] on files.
pub fn verify_files(
    adv: impl AsRef<Path>,
    original: impl AsRef<Path>,
    epsilon: f64,
    oracle: &dyn Oracle,
    condition: &Condition,
) -> Result<Verdict, BatchError> {
    let load = |p: &Path| {
        imageio::load_image(p).map_err(|source| BatchError::Image {
            path: p.to_path_buf(),
            source,
        })
    };
    verify(&load(adv.as_ref())?, &load(original.as_ref())?, epsilon, oracle, condition)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_bins_cover_successes() {
        let h = histogram(&[1, 5, 10, 20, 20]);
        assert_eq!(h.len(), HISTOGRAM_BINS);
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 5);
        assert_eq!(h[0].bin_start, 0.0);
        assert_eq!(h[19].bin_end, 20.0);
        assert_eq!(h[19].count, 2);
        assert!(histogram(&[]).is_empty());
        let one = histogram(&[1]);
        assert_eq!(one[19].count, 1);
    }

    #[test]
    fn condition_parsing() {
        assert_eq!("target=3".parse::<Condition>().unwrap(), Condition::Target(3));
        assert_eq!("misclassified".parse::<Condition>().unwrap(), Condition::Misclassified);
        assert_eq!(
            "avoid=1,4".parse::<Condition>().unwrap(),
            Condition::Avoid([1, 4].into())
        );
        assert!("bogus".parse::<Condition>().is_err());
        assert!("target=x".parse::<Condition>().is_err());
    }

    #[test]
    fn spec_validation() {
        let mut spec = RunSpec::default();
        assert!(spec.validate().is_err());
        spec.oracle.model = Some("m.json".into());
        spec.inputs.generate = Some(GenerateSpec::default());
        assert!(spec.validate().is_ok());
        spec.kind = AttackKind::Eot;
        assert!(spec.validate().is_err());
        spec.kind = AttackKind::LabelSet;
        assert!(spec.validate().is_err());
        spec.kind = AttackKind::Targeted;
        spec.success_threshold = 1.5;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let mut spec = RunSpec::default();
        spec.oracle.model = Some("m.json".into());
        spec.attack.eot = Some(EotConfig::default());
        let back = RunSpec::from_toml(&spec.to_toml()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn median_and_mean() {
        let rec = |success, queries| InstanceRecord {
            instance_id: 0,
            success,
            queries,
            linf: None,
            final_prob: None,
            weak_success: success,
            source_label: None,
            target: None,
            epsilon: None,
            adversariality: None,
            error: None,
        };
        let rs = vec![rec(true, 10), rec(false, 99), rec(true, 30), rec(true, 20), rec(true, 40)];
        assert_eq!(success_query_stats(&rs), (Some(25.0), Some(25.0)));
    }
}
