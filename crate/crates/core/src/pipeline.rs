//! End-to-end orchestration: blind split, preprocessing, feature
//! extraction, clinical screening, classifier training, decision fusion and
//! blind-test evaluation.
//!
//! Every stage writes its artifacts under the output directory and can be
//! re-entered from them. Fitted artifacts record the case ids they were
//! fitted on; [`leakage_guard`] refuses to evaluate when any blind-test case
//! appears in one of those lists.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{
    default_k_grid, default_t_grid, fuse, fusion_grid_search, read_dl_probabilities, FusionCase, FusionParams,
    FusionSearchResult, ProbabilityVector,
};
use crate::gbt::{cross_val_predict, gbt_fit, grid_search, stratified_kfold, GbtModel, GbtParams, GridSearchResult};
use crate::metrics::{evaluate, roc_curve, EvalReport};
use crate::par;
use crate::preprocess::{
    correct_bias, default_ranks, denoise_median, nyul_train, NyulModel, DEFAULT_BIAS_SIGMA_MM, DEFAULT_MEDIAN_RADIUS,
    DEFAULT_SCALE,
};
use crate::radiomics::{extract_feature_vector, feature_names, Contrast, FeatureScaler, DEFAULT_BIN_COUNT};
use crate::stats::{stepwise_select, welch_ttest, OlsResult, WelchResult};
use crate::table::{
    align_by_case, read_clinical_csv, read_labels_csv, CaseLabel, ClinicalRecord, FeatureTable, TableRow, CLASS_NAMES,
    CLINICAL_COLUMNS, N_CLASSES,
};
use crate::volume::{load_mask, load_volume, save_nifti, Interpolation, Mask, Volume};

fn default_test_fraction() -> f64 {
    0.2
}
fn default_folds() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub target_spacing_mm: f64,
    pub bias_sigma_mm: f64,
    pub median_radius: usize,
    pub nyul_ranks: Vec<f64>,
    pub scale_bounds: [f64; 2],
    pub roi_margin_vox: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target_spacing_mm: 1.0,
            bias_sigma_mm: DEFAULT_BIAS_SIGMA_MM,
            median_radius: DEFAULT_MEDIAN_RADIUS,
            nyul_ranks: default_ranks(),
            scale_bounds: DEFAULT_SCALE,
            roi_margin_vox: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClinicalConfig {
    pub p_enter: f64,
    pub p_remove: f64,
    pub impute_missing: bool,
}

impl Default for ClinicalConfig {
    fn default() -> Self {
        ClinicalConfig {
            p_enter: 0.05,
            p_remove: 0.10,
            impute_missing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtConfig {
    pub n_estimators: Vec<usize>,
    pub max_depth: Vec<usize>,
    pub learning_rate: f64,
    pub min_leaf: usize,
    pub lambda: f64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        let d = GbtParams::default();
        GbtConfig {
            n_estimators: vec![60, 100, 140, 180],
            max_depth: vec![2, 3, 4, 5],
            learning_rate: d.learning_rate,
            min_leaf: d.min_leaf,
            lambda: d.lambda,
        }
    }
}

impl GbtConfig {
    pub fn grid(&self, seed: u64) -> Vec<GbtParams> {
        let mut out = Vec::new();
        for &n_estimators in &self.n_estimators {
            for &max_depth in &self.max_depth {
                out.push(GbtParams {
                    n_estimators,
                    max_depth,
                    learning_rate: self.learning_rate,
                    min_leaf: self.min_leaf,
                    lambda: self.lambda,
                    seed,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// External `case_id,p_healthy,p_low,p_high` file; fusion is skipped
    /// without one.
    pub dl_probabilities: Option<PathBuf>,
    pub k_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            dl_probabilities: None,
            k_grid: default_k_grid(),
            t_grid: default_t_grid(),
        }
    }
}

/// Which feature groups feed the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    T1,
    T2,
    T1T2,
    T1T2Clinical,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 4] = [
        FeatureSet::T1,
        FeatureSet::T2,
        FeatureSet::T1T2,
        FeatureSet::T1T2Clinical,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FeatureSet::T1 => "T1",
            FeatureSet::T2 => "T2",
            FeatureSet::T1T2 => "T1+T2",
            FeatureSet::T1T2Clinical => "T1+T2+clinical",
        }
    }

    fn contrasts(self) -> &'static [Contrast] {
        match self {
            FeatureSet::T1 => &[Contrast::T1],
            FeatureSet::T2 => &[Contrast::T2],
            _ => &[Contrast::T1, Contrast::T2],
        }
    }

    fn clinical(self) -> bool {
        self == FeatureSet::T1T2Clinical
    }
}

/// Test hooks that break the pipeline on purpose.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultInjection {
    /// Fit the feature scaler with the first blind-test case included.
    pub pollute_scaler: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub study_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_folds")]
    pub cv_folds: usize,
    #[serde(default = "default_feature_set")]
    pub feature_set: FeatureSet,
    #[serde(default = "default_bin_count")]
    pub bin_count: usize,
    /// Also report cross-validated accuracy of every feature set.
    #[serde(default)]
    pub ablation: bool,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub clinical: ClinicalConfig,
    #[serde(default)]
    pub gbt: GbtConfig,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub fault_injection: FaultInjection,
}

fn default_feature_set() -> FeatureSet {
    FeatureSet::T1T2Clinical
}
fn default_bin_count() -> usize {
    DEFAULT_BIN_COUNT
}

impl PipelineConfig {
    pub fn new(study_dir: impl Into<PathBuf>, out_dir: impl Into<PathBuf>, seed: u64) -> Self {
        PipelineConfig {
            study_dir: study_dir.into(),
            out_dir: out_dir.into(),
            seed,
            test_fraction: default_test_fraction(),
            cv_folds: default_folds(),
            feature_set: default_feature_set(),
            bin_count: default_bin_count(),
            ablation: false,
            preprocess: PreprocessConfig::default(),
            clinical: ClinicalConfig::default(),
            gbt: GbtConfig::default(),
            fusion: FusionConfig::default(),
            fault_injection: FaultInjection::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidInput(format!(
                "test_fraction {} outside (0, 1)",
                self.test_fraction
            )));
        }
        if self.cv_folds < 2 {
            return Err(Error::InvalidInput("cv_folds must be >= 2".into()));
        }
        if self.bin_count < 2 {
            return Err(Error::InvalidInput("bin_count must be >= 2".into()));
        }
        if self.gbt.n_estimators.is_empty() || self.gbt.max_depth.is_empty() {
            return Err(Error::InvalidInput("empty GBT grid".into()));
        }
        if !(self.preprocess.target_spacing_mm > 0.0) {
            return Err(Error::InvalidInput("target spacing must be > 0".into()));
        }
        Ok(())
    }
}

/// Logs the duration of a stage when dropped.
struct StageTimer(&'static str, Instant);

impl StageTimer {
    fn start(name: &'static str) -> Self {
        log::info!("stage {name}: start");
        StageTimer(name, Instant::now())
    }
}

impl Drop for StageTimer {
    fn drop(&mut self) {
        log::info!("stage {}: {:.2}s", self.0, self.1.elapsed().as_secs_f64());
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&s)?)
}

/// File names of the artifacts under the output directory.
pub mod artifact {
    pub const SPLIT: &str = "split.json";
    pub const NYUL_T1: &str = "nyul_t1.json";
    pub const NYUL_T2: &str = "nyul_t2.json";
    pub const PREPROCESSED: &str = "preprocessed";
    pub const FEATURES: &str = "features.csv";
    pub const CLINICAL: &str = "clinical_selection.json";
    pub const SCALER: &str = "scaler.json";
    pub const GRID: &str = "grid_search.json";
    pub const MODEL: &str = "model.json";
    pub const OOF: &str = "oof_predictions.json";
    pub const FUSION: &str = "fusion.json";
    pub const ABLATION: &str = "ablation.json";
    pub const REPORT: &str = "report.json";
    pub const SUMMARY: &str = "summary.txt";
    pub const PREDICTIONS: &str = "test_predictions.csv";
}

/// Labels and clinical records of a study tree, in `labels.csv` order.
#[derive(Debug, Clone)]
pub struct Study {
    pub root: PathBuf,
    pub labels: Vec<CaseLabel>,
    pub clinical: Vec<ClinicalRecord>,
}

impl Study {
    pub fn load(root: &Path, impute: bool) -> Result<Study> {
        let labels = read_labels_csv(&root.join("labels.csv"))?;
        if labels.is_empty() {
            return Err(Error::InsufficientData("labels.csv has no cases".into()));
        }
        let ids: Vec<String> = labels.iter().map(|l| l.case_id.clone()).collect();
        let clinical = read_clinical_csv(&root.join("clinical.csv"), impute)?;
        let clinical = align_by_case("clinical.csv", &ids, &clinical, |r| r.case_id.as_str())?;
        for (l, c) in labels.iter().zip(&clinical) {
            if l.label != c.label {
                return Err(Error::CaseMismatch(format!(
                    "case {} has label {} in labels.csv but {} in clinical.csv",
                    l.case_id, l.label, c.label
                )));
            }
        }
        for l in &labels {
            for f in ["t1.nii.gz", "t2.nii.gz", "mask.nii.gz"] {
                let p = root.join(&l.case_id).join(f);
                if !p.is_file() {
                    return Err(Error::io(
                        &p,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "missing case file"),
                    ));
                }
            }
        }
        Ok(Study {
            root: root.to_path_buf(),
            labels,
            clinical,
        })
    }

    pub fn ids(&self) -> Vec<String> {
        self.labels.iter().map(|l| l.case_id.clone()).collect()
    }
}

/// Blind-test split, stratified by (label, center).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub test_fraction: f64,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl Split {
    pub fn is_test(&self, id: &str) -> bool {
        self.test_ids.iter().any(|t| t == id)
    }
}

/// Split `total` over groups of the given sizes in proportion to size:
/// floors first, remainders to the largest fractional parts, earliest group
/// on ties, never exceeding a group's size.
fn largest_remainder(sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    let quotas: Vec<f64> = sizes.iter().map(|&s| s as f64 * total as f64 / n as f64).collect();
    let mut take: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut missing = total.saturating_sub(take.iter().sum());
    while missing > 0 {
        let before = missing;
        for &g in &order {
            if missing > 0 && take[g] < sizes[g] {
                take[g] += 1;
                missing -= 1;
            }
        }
        if before == missing {
            break;
        }
    }
    take
}

/// Hold out `round(n * fraction)` cases. Quotas are allocated to labels by
/// largest remainder, then within each label to centers the same way;
/// members are drawn by a seeded shuffle.
pub fn blind_split(labels: &[CaseLabel], test_fraction: f64, seed: u64) -> Result<Split> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let n = labels.len();
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::InsufficientData(format!(
            "cannot hold out {n_test} of {n} cases"
        )));
    }
    let mut strata: BTreeMap<usize, BTreeMap<&str, Vec<usize>>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        strata
            .entry(l.label)
            .or_default()
            .entry(l.center.as_str())
            .or_default()
            .push(i);
    }
    let label_sizes: Vec<usize> = strata.values().map(|c| c.values().map(Vec::len).sum()).collect();
    let label_take = largest_remainder(&label_sizes, n_test);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut is_test = vec![false; n];
    for (centers, &k_label) in strata.values().zip(&label_take) {
        let sizes: Vec<usize> = centers.values().map(Vec::len).collect();
        for (members, k) in centers.values().zip(largest_remainder(&sizes, k_label)) {
            let mut m = members.clone();
            m.shuffle(&mut rng);
            for &i in &m[..k] {
                is_test[i] = true;
            }
        }
    }
    let pick = |t: bool| {
        labels
            .iter()
            .zip(&is_test)
            .filter(|(_, &x)| x == t)
            .map(|(l, _)| l.case_id.clone())
            .collect()
    };
    Ok(Split {
        seed,
        test_fraction,
        train_ids: pick(false),
        test_ids: pick(true),
    })
}

/// Preprocessed, ROI-cropped images of one case.
#[derive(Debug, Clone)]
pub struct PreparedCase {
    pub case_id: String,
    pub t1: Volume,
    pub t2: Volume,
    pub mask: Mask,
}

/// A Nyul model plus the cases it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NyulArtifact {
    pub contrast: Contrast,
    pub model: NyulModel,
    pub training_ids: Vec<String>,
}

/// Reorient, resample, bias-correct, denoise and crop one case to its
/// mask's bounding box plus margin.
///
/// The median filter runs on a box wider by its radius, which gives the same
/// values inside the final crop as filtering the whole volume.
pub fn clean_case(root: &Path, case_id: &str, cfg: &PreprocessConfig) -> Result<PreparedCase> {
    let dir = root.join(case_id);
    let on_target = |s: [f64; 3]| s.iter().all(|&s| (s - cfg.target_spacing_mm).abs() < 1e-9);
    let raw_mask = load_mask(dir.join("mask.nii.gz"))?.reorient_ras()?;
    let mask = if on_target(raw_mask.spacing()) {
        raw_mask.clone()
    } else {
        raw_mask.resample_isotropic(cfg.target_spacing_mm)?
    };
    let wide = mask.bounding_box(cfg.roi_margin_vox + cfg.median_radius)?;
    let mask = mask.crop(&wide)?;
    let roi = mask.bounding_box(cfg.roi_margin_vox)?;
    let mut out = Vec::with_capacity(2);
    for name in ["t1.nii.gz", "t2.nii.gz"] {
        let v = load_volume(dir.join(name))?.reorient_ras()?;
        v.ensure_same_geometry(&raw_mask)?;
        let v = if on_target(v.spacing()) {
            v
        } else {
            v.resample_isotropic(cfg.target_spacing_mm, Interpolation::Linear)?
        };
        let v = correct_bias(&v, cfg.bias_sigma_mm)?.crop(&wide)?;
        out.push(denoise_median(&v, cfg.median_radius)?.crop(&roi)?);
    }
    let t2 = out.pop().expect("two contrasts");
    let t1 = out.pop().expect("two contrasts");
    Ok(PreparedCase {
        case_id: case_id.to_string(),
        t1,
        t2,
        mask: mask.crop(&roi)?,
    })
}

/// Values as stored in a float32 NIfTI file.
fn to_f32_precision(v: &Volume) -> Volume {
    v.map(|x| x as f32 as f64)
}

/// Clean every case, fit one Nyul model per contrast on the training cases
/// and standardize all cases with it. Writes the standardized volumes and
/// both models.
pub fn stage_preprocess(
    cfg: &PipelineConfig,
    study: &Study,
    split: &Split,
) -> Result<(Vec<PreparedCase>, [NyulArtifact; 2])> {
    let _t = StageTimer::start("preprocess");
    let ids = study.ids();
    let cleaned = par::try_map(&ids, |id| clean_case(&study.root, id, &cfg.preprocess))?;
    let train: Vec<&PreparedCase> = cleaned.iter().filter(|c| !split.is_test(&c.case_id)).collect();
    let masks: Vec<Mask> = train.iter().map(|c| c.mask.clone()).collect();
    let mut arts = Vec::with_capacity(2);
    for contrast in [Contrast::T1, Contrast::T2] {
        let images: Vec<Volume> = train
            .iter()
            .map(|c| {
                if contrast == Contrast::T1 {
                    c.t1.clone()
                } else {
                    c.t2.clone()
                }
            })
            .collect();
        let model = nyul_train(
            &images,
            Some(&masks),
            &cfg.preprocess.nyul_ranks,
            cfg.preprocess.scale_bounds,
        )?;
        arts.push(NyulArtifact {
            contrast,
            model,
            training_ids: train.iter().map(|c| c.case_id.clone()).collect(),
        });
    }
    let arts: [NyulArtifact; 2] = [arts[0].clone(), arts[1].clone()];
    let out_root = cfg.out_dir.join(artifact::PREPROCESSED);
    let prepared = par::try_map(&cleaned, |c| {
        let t1 = to_f32_precision(&arts[0].model.apply(&c.t1, Some(&c.mask))?);
        let t2 = to_f32_precision(&arts[1].model.apply(&c.t2, Some(&c.mask))?);
        let dir = out_root.join(&c.case_id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        save_nifti(&t1, dir.join("t1.nii.gz"))?;
        save_nifti(&t2, dir.join("t2.nii.gz"))?;
        save_nifti(&c.mask, dir.join("mask.nii.gz"))?;
        Ok::<_, Error>(PreparedCase {
            case_id: c.case_id.clone(),
            t1,
            t2,
            mask: c.mask.clone(),
        })
    })?;
    write_json(&cfg.out_dir.join(artifact::NYUL_T1), &arts[0])?;
    write_json(&cfg.out_dir.join(artifact::NYUL_T2), &arts[1])?;
    Ok((prepared, arts))
}

/// Reload the standardized volumes written by [`stage_preprocess`].
pub fn load_prepared(cfg: &PipelineConfig, ids: &[String]) -> Result<Vec<PreparedCase>> {
    let root = cfg.out_dir.join(artifact::PREPROCESSED);
    par::try_map(ids, |id| {
        let dir = root.join(id);
        Ok(PreparedCase {
            case_id: id.clone(),
            t1: load_volume(dir.join("t1.nii.gz"))?,
            t2: load_volume(dir.join("t2.nii.gz"))?,
            mask: load_mask(dir.join("mask.nii.gz"))?,
        })
    })
}

/// Column names `t1_<feature>` followed by `t2_<feature>`.
pub fn radiomics_columns() -> Vec<String> {
    [Contrast::T1, Contrast::T2]
        .iter()
        .flat_map(|c| feature_names().into_iter().map(move |n| format!("{}_{n}", c.prefix())))
        .collect()
}

/// 107 features per contrast for every case, in study order.
pub fn stage_extract(cfg: &PipelineConfig, study: &Study, cases: &[PreparedCase]) -> Result<FeatureTable> {
    let _t = StageTimer::start("extract");
    let rows = par::try_map(cases, |c| {
        let mut values = extract_feature_vector(&c.t1, &c.mask, cfg.bin_count)?.values;
        values.extend(extract_feature_vector(&c.t2, &c.mask, cfg.bin_count)?.values);
        Ok::<_, Error>(values)
    })?;
    let mut table = FeatureTable::new(radiomics_columns());
    for (l, values) in study.labels.iter().zip(rows) {
        table.push(TableRow {
            case_id: l.case_id.clone(),
            center: l.center.clone(),
            label: l.label,
            values,
        })?;
    }
    table.write_csv(&cfg.out_dir.join(artifact::FEATURES))?;
    Ok(table)
}

/// Stepwise screening of the clinical covariates on the training cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalSelection {
    pub candidates: Vec<String>,
    pub selected: Vec<String>,
    pub fit: OlsResult,
    /// Pancreas volume, healthy vs high risk.
    pub volume_ttest: Option<WelchResult>,
    pub training_ids: Vec<String>,
}

pub fn stage_clinical(cfg: &PipelineConfig, study: &Study, split: &Split) -> Result<ClinicalSelection> {
    let _t = StageTimer::start("clinical");
    let train: Vec<&ClinicalRecord> = study.clinical.iter().filter(|r| !split.is_test(&r.case_id)).collect();
    let rows: Vec<Vec<f64>> = train.iter().map(|r| r.values().to_vec()).collect();
    let y: Vec<f64> = train.iter().map(|r| r.label as f64).collect();
    let sw = stepwise_select(&rows, &y, cfg.clinical.p_enter, cfg.clinical.p_remove)?;
    let vol = |c: usize| -> Vec<f64> { train.iter().filter(|r| r.label == c).map(|r| r.volume_ml).collect() };
    let sel = ClinicalSelection {
        candidates: CLINICAL_COLUMNS.iter().map(|s| s.to_string()).collect(),
        selected: sw.selected.iter().map(|&j| CLINICAL_COLUMNS[j].to_string()).collect(),
        fit: sw.fit,
        volume_ttest: welch_ttest(&vol(0), &vol(2)).ok(),
        training_ids: train.iter().map(|r| r.case_id.clone()).collect(),
    };
    write_json(&cfg.out_dir.join(artifact::CLINICAL), &sel)?;
    Ok(sel)
}

/// Raw (unscaled) classifier inputs for one feature set.
pub fn design_table(
    features: &FeatureTable,
    clinical: &[ClinicalRecord],
    selected_clinical: &[String],
    set: FeatureSet,
) -> Result<FeatureTable> {
    let cols: Vec<String> = features
        .columns
        .iter()
        .filter(|c| {
            set.contrasts()
                .iter()
                .any(|k| c.starts_with(&format!("{}_", k.prefix())))
        })
        .cloned()
        .collect();
    let mut t = features.select_columns(&cols)?;
    if set.clinical() && !selected_clinical.is_empty() {
        let ids = features.case_ids();
        let recs = align_by_case("clinical records", &ids, clinical, |r| r.case_id.as_str())?;
        let idx: Vec<usize> = selected_clinical
            .iter()
            .map(|n| {
                CLINICAL_COLUMNS
                    .iter()
                    .position(|c| c == n)
                    .ok_or_else(|| Error::InvalidInput(format!("unknown clinical column {n}")))
            })
            .collect::<Result<_>>()?;
        let mut ct = FeatureTable::new(selected_clinical.iter().map(|n| format!("clinical_{n}")).collect());
        for (row, rec) in features.rows.iter().zip(&recs) {
            let v = rec.values();
            ct.push(TableRow {
                values: idx.iter().map(|&j| v[j]).collect(),
                ..row.clone()
            })?;
        }
        t = t.hconcat(&ct)?;
    }
    Ok(t)
}

fn rows_of(table: &FeatureTable, ids: &[String]) -> Result<Vec<usize>> {
    let pos: BTreeMap<&str, usize> = table
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| (r.case_id.as_str(), i))
        .collect();
    ids.iter()
        .map(|id| {
            pos.get(id.as_str())
                .copied()
                .ok_or_else(|| Error::CaseMismatch(format!("case {id} not in feature table")))
        })
        .collect()
}

fn scale_table(scaler: &FeatureScaler, t: &FeatureTable) -> Result<FeatureTable> {
    let mut out = FeatureTable::new(t.columns.clone());
    for r in &t.rows {
        out.push(TableRow {
            values: scaler.apply(&r.values)?,
            ..r.clone()
        })?;
    }
    Ok(out)
}

/// Out-of-fold class probabilities of the training cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OofPredictions {
    pub case_ids: Vec<String>,
    pub labels: Vec<usize>,
    pub probabilities: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub scaler: FeatureScaler,
    pub grid: GridSearchResult,
    pub model: GbtModel,
    pub oof: OofPredictions,
    /// Scaled design table over all cases.
    pub design: FeatureTable,
}

fn fit_scaler(cfg: &PipelineConfig, raw: &FeatureTable, split: &Split) -> Result<FeatureScaler> {
    let mut fit_ids = split.train_ids.clone();
    if cfg.fault_injection.pollute_scaler {
        log::warn!("fault injection: fitting the scaler with a blind-test case");
        fit_ids.extend(split.test_ids.first().cloned());
    }
    let idx = rows_of(raw, &fit_ids)?;
    let rows: Vec<&[f64]> = idx.iter().map(|&i| raw.rows[i].values.as_slice()).collect();
    let mut scaler = FeatureScaler::fit(&raw.columns, &rows)?;
    scaler.training_ids = fit_ids;
    Ok(scaler)
}

/// Scaler fit, grid search, final model and out-of-fold predictions, all on
/// the training cases.
pub fn stage_train(
    cfg: &PipelineConfig,
    features: &FeatureTable,
    study: &Study,
    selection: &ClinicalSelection,
    split: &Split,
) -> Result<TrainOutput> {
    let _t = StageTimer::start("train");
    let raw = design_table(features, &study.clinical, &selection.selected, cfg.feature_set)?;
    let scaler = fit_scaler(cfg, &raw, split)?;
    let design = scale_table(&scaler, &raw)?;
    let train = design.subset(&rows_of(&design, &split.train_ids)?);
    let grid = grid_search(&train, &cfg.gbt.grid(cfg.seed), cfg.cv_folds, cfg.seed)?;
    log::info!(
        "best grid point: n_estimators={} max_depth={} (cv accuracy {:.4})",
        grid.best.n_estimators,
        grid.best.max_depth,
        grid.points[grid.best_index].mean_accuracy
    );
    let model = gbt_fit(&train, &grid.best)?;
    let strata: Vec<(usize, String)> = train.rows.iter().map(|r| (r.label, r.center.clone())).collect();
    let folds = stratified_kfold(&strata, cfg.cv_folds, cfg.seed)?;
    let oof = OofPredictions {
        case_ids: train.case_ids(),
        labels: train.labels(),
        probabilities: cross_val_predict(&train, &grid.best, &folds)?,
    };
    write_json(&cfg.out_dir.join(artifact::SCALER), &scaler)?;
    write_json(&cfg.out_dir.join(artifact::GRID), &grid)?;
    write_json(&cfg.out_dir.join(artifact::MODEL), &model)?;
    write_json(&cfg.out_dir.join(artifact::OOF), &oof)?;
    Ok(TrainOutput {
        scaler,
        grid,
        model,
        oof,
        design,
    })
}

/// Selected fusion parameters and the training cases they were chosen on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionArtifact {
    pub search: FusionSearchResult,
    pub training_ids: Vec<String>,
}

/// Read the DL probabilities and align them with the study cases.
pub fn load_dl(cfg: &PipelineConfig, ids: &[String]) -> Result<Option<Vec<ProbabilityVector>>> {
    let Some(path) = &cfg.fusion.dl_probabilities else {
        return Ok(None);
    };
    let path = if path.is_relative() && !path.exists() {
        cfg.study_dir.join(path)
    } else {
        path.clone()
    };
    let rows = read_dl_probabilities(&path)?;
    if let Some((id, p)) = rows.iter().find(|(_, p)| p.len() != N_CLASSES) {
        return Err(Error::InvalidProbability {
            case_id: id.clone(),
            reason: format!("{} components", p.len()),
        });
    }
    let aligned = align_by_case("DL probabilities", ids, &rows, |r| r.0.as_str())?;
    Ok(Some(aligned.into_iter().map(|r| r.1).collect()))
}

/// Choose (k, t) on the out-of-fold training predictions.
pub fn stage_fuse(
    cfg: &PipelineConfig,
    oof: &OofPredictions,
    dl: &BTreeMap<String, ProbabilityVector>,
) -> Result<FusionArtifact> {
    let _t = StageTimer::start("fuse");
    let cases = oof
        .case_ids
        .iter()
        .zip(&oof.probabilities)
        .zip(&oof.labels)
        .map(|((id, p), &label)| {
            Ok(FusionCase {
                p_d: dl
                    .get(id)
                    .cloned()
                    .ok_or_else(|| Error::CaseMismatch(format!("no DL probabilities for {id}")))?,
                p_r: ProbabilityVector::new(p.clone())?,
                label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let search = fusion_grid_search(&cases, &cfg.fusion.k_grid, &cfg.fusion.t_grid)?;
    let art = FusionArtifact {
        search,
        training_ids: oof.case_ids.clone(),
    };
    write_json(&cfg.out_dir.join(artifact::FUSION), &art)?;
    Ok(art)
}

/// Fail if any blind-test case appears in any artifact's training list.
pub fn leakage_guard(test_ids: &[String], artifacts: &[(&str, &[String])]) -> Result<()> {
    let test: HashSet<&str> = test_ids.iter().map(String::as_str).collect();
    for (name, ids) in artifacts {
        if let Some(id) = ids.iter().find(|id| test.contains(id.as_str())) {
            return Err(Error::Leakage {
                artifact: name.to_string(),
                case_id: id.clone(),
            });
        }
    }
    Ok(())
}

/// Cross-validated accuracy of one feature set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub feature_set: FeatureSet,
    pub label: String,
    pub n_features: usize,
    pub cv_accuracy: f64,
    pub best: GbtParams,
}

/// Grid-searched k-fold accuracy on the training cases for every feature set.
pub fn stage_ablation(
    cfg: &PipelineConfig,
    features: &FeatureTable,
    study: &Study,
    selection: &ClinicalSelection,
    split: &Split,
) -> Result<Vec<AblationRow>> {
    let _t = StageTimer::start("ablation");
    let mut out = Vec::new();
    for set in FeatureSet::ALL {
        let raw = design_table(features, &study.clinical, &selection.selected, set)?;
        let scaler = fit_scaler(
            &PipelineConfig {
                fault_injection: FaultInjection::default(),
                ..cfg.clone()
            },
            &raw,
            split,
        )?;
        let design = scale_table(&scaler, &raw)?;
        let train = design.subset(&rows_of(&design, &split.train_ids)?);
        let grid = grid_search(&train, &cfg.gbt.grid(cfg.seed), cfg.cv_folds, cfg.seed)?;
        out.push(AblationRow {
            feature_set: set,
            label: set.label().into(),
            n_features: design.columns.len(),
            cv_accuracy: grid.points[grid.best_index].mean_accuracy,
            best: grid.best,
        });
    }
    write_json(&cfg.out_dir.join(artifact::ABLATION), &out)?;
    Ok(out)
}

/// Final blind-test report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub feature_set: FeatureSet,
    pub n_features: usize,
    pub selected_clinical: Vec<String>,
    pub best_params: GbtParams,
    pub cv_accuracy: f64,
    pub radiomics: EvalReport,
    pub deep_learning: Option<EvalReport>,
    pub fused: Option<EvalReport>,
    pub fusion_params: Option<FusionParams>,
    pub notices: Vec<String>,
    pub ablation: Option<Vec<AblationRow>>,
}

pub const FUSION_SKIPPED: &str = "fusion skipped: no deep-learning probabilities were provided";

fn write_roc(path: &Path, probs: &[Vec<f64>], labels: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv_open(path, e))?;
    w.write_record(["class", "threshold", "fpr", "tpr"])
        .map_err(|e| Error::csv(path, e))?;
    for (c, name) in CLASS_NAMES.iter().enumerate() {
        let s: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        for (thr, fpr, tpr) in roc_curve(&s, &pos) {
            w.write_record([name.to_string(), thr.to_string(), fpr.to_string(), tpr.to_string()])
                .map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Everything [`stage_evaluate`] needs, loaded from memory or disk.
pub struct EvalInputs<'a> {
    pub split: &'a Split,
    pub nyul: &'a [NyulArtifact],
    pub selection: &'a ClinicalSelection,
    pub train: &'a TrainOutput,
    pub fusion: Option<&'a FusionArtifact>,
    pub dl: Option<&'a BTreeMap<String, ProbabilityVector>>,
    pub ablation: Option<Vec<AblationRow>>,
}

pub fn stage_evaluate(cfg: &PipelineConfig, inp: EvalInputs<'_>) -> Result<Report> {
    let _t = StageTimer::start("evaluate");
    let mut artifacts: Vec<(&str, &[String])> = Vec::new();
    for n in inp.nyul {
        artifacts.push((
            if n.contrast == Contrast::T1 {
                artifact::NYUL_T1
            } else {
                artifact::NYUL_T2
            },
            &n.training_ids,
        ));
    }
    artifacts.push((artifact::CLINICAL, &inp.selection.training_ids));
    artifacts.push((artifact::SCALER, &inp.train.scaler.training_ids));
    artifacts.push((artifact::MODEL, &inp.train.model.meta.training_ids));
    artifacts.push((artifact::OOF, &inp.train.oof.case_ids));
    if let Some(f) = inp.fusion {
        artifacts.push((artifact::FUSION, &f.training_ids));
    }
    leakage_guard(&inp.split.test_ids, &artifacts)?;

    let design = &inp.train.design;
    let test = design.subset(&rows_of(design, &inp.split.test_ids)?);
    let labels = test.labels();
    let p_r: Vec<Vec<f64>> = test
        .rows
        .iter()
        .map(|r| inp.train.model.predict_proba(&r.values))
        .collect::<Result<_>>()?;
    let radiomics = evaluate(&p_r, &labels)?;
    let out = &cfg.out_dir;
    write_roc(&out.join("roc_radiomics.csv"), &p_r, &labels)?;

    let mut notices = Vec::new();
    let (mut deep_learning, mut fused, mut fusion_params) = (None, None, None);
    let mut p_f: Option<Vec<Vec<f64>>> = None;
    match (inp.fusion, inp.dl) {
        (Some(f), Some(dl)) => {
            let p_d: Vec<ProbabilityVector> = test
                .rows
                .iter()
                .map(|r| {
                    dl.get(&r.case_id)
                        .cloned()
                        .ok_or_else(|| Error::CaseMismatch(format!("no DL probabilities for {}", r.case_id)))
                })
                .collect::<Result<_>>()?;
            let pf: Vec<Vec<f64>> = p_d
                .iter()
                .zip(&p_r)
                .map(|(d, r)| {
                    Ok(fuse(d, &ProbabilityVector::new(r.clone())?, f.search.params)?
                        .as_slice()
                        .to_vec())
                })
                .collect::<Result<_>>()?;
            let pd: Vec<Vec<f64>> = p_d.iter().map(|p| p.as_slice().to_vec()).collect();
            deep_learning = Some(evaluate(&pd, &labels)?);
            fused = Some(evaluate(&pf, &labels)?);
            fusion_params = Some(f.search.params);
            write_roc(&out.join("roc_fused.csv"), &pf, &labels)?;
            p_f = Some(pf);
        }
        _ => notices.push(FUSION_SKIPPED.to_string()),
    }

    let path = out.join(artifact::PREDICTIONS);
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv_open(&path, e))?;
    let mut header = vec![
        "case_id".to_string(),
        "label".into(),
        "r_healthy".into(),
        "r_low".into(),
        "r_high".into(),
    ];
    if p_f.is_some() {
        header.extend(["f_healthy".into(), "f_low".into(), "f_high".into()]);
    }
    w.write_record(&header).map_err(|e| Error::csv(&path, e))?;
    for (i, r) in test.rows.iter().enumerate() {
        let mut rec = vec![r.case_id.clone(), r.label.to_string()];
        rec.extend(p_r[i].iter().map(|v| v.to_string()));
        if let Some(pf) = &p_f {
            rec.extend(pf[i].iter().map(|v| v.to_string()));
        }
        w.write_record(&rec).map_err(|e| Error::csv(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let grid = &inp.train.grid;
    let report = Report {
        seed: cfg.seed,
        n_train: inp.split.train_ids.len(),
        n_test: inp.split.test_ids.len(),
        feature_set: cfg.feature_set,
        n_features: design.columns.len(),
        selected_clinical: inp.selection.selected.clone(),
        best_params: grid.best,
        cv_accuracy: grid.points[grid.best_index].mean_accuracy,
        radiomics,
        deep_learning,
        fused,
        fusion_params,
        notices,
        ablation: inp.ablation,
    };
    write_json(&out.join(artifact::REPORT), &report)?;
    std::fs::write(out.join(artifact::SUMMARY), summary_text(&report))
        .map_err(|e| Error::io(out.join(artifact::SUMMARY), e))?;
    Ok(report)
}

fn summary_text(r: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "IPMN risk stratification, blind test report (seed {})", r.seed);
    let _ = writeln!(s, "train cases: {}   test cases: {}", r.n_train, r.n_test);
    let _ = writeln!(
        s,
        "features: {} ({} columns)",
        FeatureSet::label(r.feature_set),
        r.n_features
    );
    let sel = if r.selected_clinical.is_empty() {
        "none".to_string()
    } else {
        r.selected_clinical.join(", ")
    };
    let _ = writeln!(s, "stepwise clinical selection: {sel}");
    let _ = writeln!(
        s,
        "classifier: n_estimators={} max_depth={}  cv accuracy {:.4}",
        r.best_params.n_estimators, r.best_params.max_depth, r.cv_accuracy
    );
    let _ = writeln!(s, "\n{:<16} {:>7} {:>7} {:>7} {:>7}", "model", "ACC", "AUC", "PR", "RC");
    let mut line = |name: &str, e: &EvalReport| {
        let _ = writeln!(
            s,
            "{:<16} {:>7.4} {:>7.4} {:>7.4} {:>7.4}",
            name, e.acc, e.auc, e.pr, e.rc
        );
    };
    line("radiomics", &r.radiomics);
    if let Some(e) = &r.deep_learning {
        line("deep learning", e);
    }
    if let Some(e) = &r.fused {
        line("fused", e);
    }
    if let Some(p) = r.fusion_params {
        let _ = writeln!(s, "\nfusion parameters: k={} t={}", p.k, p.t);
    }
    if let Some(rows) = &r.ablation {
        let _ = writeln!(s, "\nablation (cv accuracy on training cases):");
        for a in rows {
            let _ = writeln!(s, "  {:<16} {:.4}", a.label, a.cv_accuracy);
        }
    }
    for n in &r.notices {
        let _ = writeln!(s, "\nnote: {n}");
    }
    let _ = writeln!(s, "\nAUC is the macro average of one-vs-rest AUCs.");
    s
}

/// Everything up to feature extraction: the image-dependent part of the run.
pub struct PreparedStudy {
    pub study: Study,
    pub split: Split,
    pub nyul: [NyulArtifact; 2],
    pub features: FeatureTable,
}

pub fn prepare(cfg: &PipelineConfig) -> Result<PreparedStudy> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let study = Study::load(&cfg.study_dir, cfg.clinical.impute_missing)?;
    let split = blind_split(&study.labels, cfg.test_fraction, cfg.seed)?;
    write_json(&cfg.out_dir.join(artifact::SPLIT), &split)?;
    let (cases, nyul) = stage_preprocess(cfg, &study, &split)?;
    let features = stage_extract(cfg, &study, &cases)?;
    Ok(PreparedStudy {
        study,
        split,
        nyul,
        features,
    })
}

/// Run every stage after feature extraction.
pub fn run_from_features(cfg: &PipelineConfig, p: &PreparedStudy) -> Result<Report> {
    let selection = stage_clinical(cfg, &p.study, &p.split)?;
    let train = stage_train(cfg, &p.features, &p.study, &selection, &p.split)?;
    let dl = load_dl(cfg, &p.study.ids())?.map(|v| p.study.ids().into_iter().zip(v).collect::<BTreeMap<_, _>>());
    let fusion = match &dl {
        Some(dl) => Some(stage_fuse(cfg, &train.oof, dl)?),
        None => {
            log::info!("{FUSION_SKIPPED}");
            None
        }
    };
    let ablation = if cfg.ablation {
        Some(stage_ablation(cfg, &p.features, &p.study, &selection, &p.split)?)
    } else {
        None
    };
    stage_evaluate(
        cfg,
        EvalInputs {
            split: &p.split,
            nyul: &p.nyul,
            selection: &selection,
            train: &train,
            fusion: fusion.as_ref(),
            dl: dl.as_ref(),
            ablation,
        },
    )
}

/// The full pipeline.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Report> {
    let _t = StageTimer::start("run");
    let p = prepare(cfg)?;
    run_from_features(cfg, &p)
}

/// Stages runnable on their own; each reads its inputs from the artifacts
/// of the earlier stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Preprocess,
    Extract,
    Clinical,
    Train,
    Fuse,
    Evaluate,
}

fn load_split(cfg: &PipelineConfig) -> Result<Split> {
    read_json(&cfg.out_dir.join(artifact::SPLIT))
}

fn load_train_output(
    cfg: &PipelineConfig,
    study: &Study,
    features: &FeatureTable,
    sel: &ClinicalSelection,
) -> Result<TrainOutput> {
    let scaler: FeatureScaler = read_json(&cfg.out_dir.join(artifact::SCALER))?;
    let raw = design_table(features, &study.clinical, &sel.selected, cfg.feature_set)?;
    if raw.columns != scaler.names {
        return Err(Error::InvalidInput(format!(
            "{} columns do not match the configured feature set",
            artifact::SCALER
        )));
    }
    Ok(TrainOutput {
        design: scale_table(&scaler, &raw)?,
        scaler,
        grid: read_json(&cfg.out_dir.join(artifact::GRID))?,
        model: read_json(&cfg.out_dir.join(artifact::MODEL))?,
        oof: read_json(&cfg.out_dir.join(artifact::OOF))?,
    })
}

/// Run one stage from on-disk artifacts. Returns the report for
/// [`Stage::Evaluate`].
pub fn run_stage(cfg: &PipelineConfig, stage: Stage) -> Result<Option<Report>> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let study = Study::load(&cfg.study_dir, cfg.clinical.impute_missing)?;
    let features = || FeatureTable::read_csv(&cfg.out_dir.join(artifact::FEATURES));
    let selection = || read_json::<ClinicalSelection>(&cfg.out_dir.join(artifact::CLINICAL));
    match stage {
        Stage::Preprocess => {
            let split = blind_split(&study.labels, cfg.test_fraction, cfg.seed)?;
            write_json(&cfg.out_dir.join(artifact::SPLIT), &split)?;
            stage_preprocess(cfg, &study, &split)?;
        }
        Stage::Extract => {
            let cases = load_prepared(cfg, &study.ids())?;
            stage_extract(cfg, &study, &cases)?;
        }
        Stage::Clinical => {
            stage_clinical(cfg, &study, &load_split(cfg)?)?;
        }
        Stage::Train => {
            stage_train(cfg, &features()?, &study, &selection()?, &load_split(cfg)?)?;
        }
        Stage::Fuse => {
            let oof: OofPredictions = read_json(&cfg.out_dir.join(artifact::OOF))?;
            match load_dl(cfg, &study.ids())? {
                Some(v) => {
                    let dl: BTreeMap<String, ProbabilityVector> = study.ids().into_iter().zip(v).collect();
                    stage_fuse(cfg, &oof, &dl)?;
                }
                None => log::warn!("{FUSION_SKIPPED}"),
            }
        }
        Stage::Evaluate => {
            let split = load_split(cfg)?;
            let features = features()?;
            let sel = selection()?;
            let nyul: Vec<NyulArtifact> = vec![
                read_json(&cfg.out_dir.join(artifact::NYUL_T1))?,
                read_json(&cfg.out_dir.join(artifact::NYUL_T2))?,
            ];
            let train = load_train_output(cfg, &study, &features, &sel)?;
            let dl = load_dl(cfg, &study.ids())?.map(|v| study.ids().into_iter().zip(v).collect::<BTreeMap<_, _>>());
            let fusion: Option<FusionArtifact> = match &dl {
                Some(_) => Some(read_json(&cfg.out_dir.join(artifact::FUSION))?),
                None => None,
            };
            let ablation = if cfg.ablation {
                Some(stage_ablation(cfg, &features, &study, &sel, &split)?)
            } else {
                None
            };
            let report = stage_evaluate(
                cfg,
                EvalInputs {
                    split: &split,
                    nyul: &nyul,
                    selection: &sel,
                    train: &train,
                    fusion: fusion.as_ref(),
                    dl: dl.as_ref(),
                    ablation,
                },
            )?;
            return Ok(Some(report));
        }
    }
    Ok(None)
}
