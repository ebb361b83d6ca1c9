//! Run configuration and the pipeline stages behind each CLI subcommand.
//!
//! Every stage reads its inputs from the paths in [`RunConfig`], writes into
//! `out_dir` only, and finishes with a manifest listing each artifact and its
//! SHA-256 so that reruns can be compared byte for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result, StageExt};
use crate::features::{DetrendMode, FeatureConfig, FeatureModel};
use crate::fpm::{
    monte_carlo_eval, train_class, FeatureTimeline, FpmSettings, HorizonSpec, McConfig, NnConfig, NnModel,
    SamplingPlan,
};
use crate::impute::{knn_impute, ImputeConfig};
use crate::metrics_econ::{energy_yield_with_sdm, theoretical_power, EnergyReport};
use crate::preprocess::{apply_cleaning, clean, CleaningReport, OutlierFitParams, PreprocessConfig};
use crate::scada_data::{
    format_timestamp, label_dataset, load_logbook, load_scada_csv, load_taxonomy, ClassId, InverterDatasheet,
    LabeledDataset, ScadaRecord, Tag, Taxonomy, NORMAL,
};
use crate::sdm::{
    daily_kpi_series, kpi_chain, train_som, update_warnings, evaluate_sdm, KpiSeries, SdmConfig, SdmEvaluation,
    SomModel, WarningConfig,
};
use crate::stats::derive_seed;
use crate::synth::{self, SynthConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FpmRunConfig {
    pub plan: SamplingPlan,
    pub nn: NnConfig,
    pub horizons: HorizonSpec,
    pub mc_runs: usize,
    /// Classes to model; all taxonomy classes when absent.
    pub classes: Option<Vec<ClassId>>,
}

impl Default for FpmRunConfig {
    fn default() -> Self {
        FpmRunConfig {
            plan: SamplingPlan::default(),
            nn: NnConfig::default(),
            horizons: HorizonSpec::default(),
            mc_runs: McConfig::default().runs,
            classes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scada: PathBuf,
    pub logbook: PathBuf,
    pub taxonomy: PathBuf,
    pub datasheet: PathBuf,
    pub out_dir: PathBuf,
    /// First and last day (inclusive) of the normal-operation period.
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub impute: ImputeConfig,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub sdm: SdmConfig,
    #[serde(default)]
    pub fpm: FpmRunConfig,
}

impl RunConfig {
    /// Parses a JSON config; relative paths are resolved against `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        for p in [
            &mut cfg.scada,
            &mut cfg.logbook,
            &mut cfg.taxonomy,
            &mut cfg.datasheet,
            &mut cfg.out_dir,
        ] {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_start > self.train_end {
            return Err(Error::Config(format!(
                "empty training interval {} .. {}",
                self.train_start, self.train_end
            )));
        }
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be >= 1".into()));
        }
        self.preprocess.validate()?;
        self.features.validate()?;
        self.sdm.som.validate()?;
        self.fpm.plan.validate()?;
        self.fpm.horizons.validate()?;
        if self.fpm.mc_runs == 0 {
            return Err(Error::Config("fpm.mc_runs must be >= 1".into()));
        }
        Ok(())
    }

    fn in_training(&self, r: &ScadaRecord) -> bool {
        let d = r.date();
        d >= self.train_start && d <= self.train_end
    }
}

// ---------------------------------------------------------------------------
// manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub global_seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub artifacts: Vec<Artifact>,
}

impl Manifest {
    pub fn file_name(command: &str) -> String {
        format!("manifest_{}.json", command.replace('-', "_"))
    }
}

/// Collects artifacts of one command while writing them.
struct Outputs {
    dir: PathBuf,
    manifest: Manifest,
}

impl Outputs {
    fn new(dir: &Path, command: &str, global_seed: u64) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            manifest: Manifest {
                command: command.to_string(),
                global_seed,
                seeds: BTreeMap::new(),
                artifacts: Vec::new(),
            },
        })
    }

    fn seed(&mut self, name: &str) -> u64 {
        let s = derive_seed(self.manifest.global_seed, name);
        self.manifest.seeds.insert(name.to_string(), s);
        s
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.manifest.artifacts.push(Artifact {
            path: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len() as u64,
        });
        Ok(path)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn finish(mut self) -> Result<Manifest> {
        self.manifest.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        let name = Manifest::file_name(&self.manifest.command);
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        let path = self.dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(self.manifest)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::io("<csv buffer>", e))?;
    w.into_inner().map_err(|e| Error::io("<csv buffer>", e.into_error()))
}

// ---------------------------------------------------------------------------
// synth

pub fn run_synth(config_path: &Path, out_dir: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| Error::Config(format!("{}: {e}", config_path.display())))?;
    let cfg = SynthConfig::from_json(&text)?;
    let out = synth::generate(&cfg).stage("generate")?;
    let mut o = Outputs::new(out_dir, "synth", cfg.seed)?;
    o.write(synth::SCADA_FILE, out.scada_csv.as_bytes())?;
    o.write(synth::LOGBOOK_FILE, out.logbook_csv.as_bytes())?;
    o.write(synth::TAXONOMY_FILE, out.taxonomy_csv.as_bytes())?;
    o.write(synth::DATASHEET_FILE, out.datasheet_json.as_bytes())?;
    o.finish()
}

// ---------------------------------------------------------------------------
// shared loading

/// Raw inputs of one inverter.
pub struct Inputs {
    pub raw: Vec<ScadaRecord>,
    pub labels: Vec<ClassId>,
    pub taxonomy: Taxonomy,
    pub datasheet: InverterDatasheet,
    pub unmatched_logbook_rows: usize,
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let raw = load_scada_csv(&cfg.scada).stage("load scada")?;
    let taxonomy = load_taxonomy(&cfg.taxonomy).stage("load taxonomy")?;
    let logbook = load_logbook(&cfg.logbook, &taxonomy).stage("load logbook")?;
    let datasheet = InverterDatasheet::load(&cfg.datasheet).stage("load datasheet")?;
    let (Some(first), Some(last)) = (raw.first(), raw.last()) else {
        return Err(Error::InsufficientData("SCADA file has no records".into())).stage("load scada");
    };
    if cfg.train_start < first.date() || cfg.train_end > last.date() {
        return Err(Error::Config(format!(
            "training interval {} .. {} is outside the data range {} .. {}",
            cfg.train_start,
            cfg.train_end,
            first.date(),
            last.date()
        )));
    }
    let labeled = label_dataset(raw.clone(), &logbook.events, &taxonomy).stage("label")?;
    Ok(Inputs {
        raw,
        labels: labeled.labels,
        taxonomy,
        datasheet,
        unmatched_logbook_rows: logbook.unmatched.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub outlier_fit: OutlierFitParams,
    pub report: CleaningReport,
    pub unmatched_logbook_rows: usize,
    pub n_records: usize,
    pub n_fault_samples: usize,
}

/// Cleans the records, fitting the outlier line on the training interval.
pub fn clean_inputs(cfg: &RunConfig, inputs: &Inputs) -> Result<(Vec<ScadaRecord>, OutlierFitParams, CleaningReport)> {
    let mut records = inputs.raw.clone();
    let (params, report) =
        clean(&mut records, &inputs.datasheet, &cfg.preprocess, |r| cfg.in_training(r)).stage("clean")?;
    Ok((records, params, report))
}

pub fn run_preprocess(cfg: &RunConfig) -> Result<Manifest> {
    let inputs = load_inputs(cfg)?;
    let (records, params, report) = clean_inputs(cfg, &inputs)?;
    let mut o = Outputs::new(&cfg.out_dir, "preprocess", cfg.seed)?;
    let n_fault_samples = inputs.labels.iter().filter(|&&l| l != NORMAL).count();
    let ds = LabeledDataset::new(records, inputs.labels).stage("preprocess")?;
    let mut buf = Vec::new();
    ds.write_csv(&mut buf)?;
    o.write("cleaned.csv", &buf)?;
    o.write_json(
        "cleaning_report.json",
        &PreprocessSummary {
            outlier_fit: params,
            report,
            unmatched_logbook_rows: inputs.unmatched_logbook_rows,
            n_records: ds.len(),
            n_fault_samples,
        },
    )?;
    o.finish()
}

// ---------------------------------------------------------------------------
// SDM

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdmModelFile {
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub outlier_fit: OutlierFitParams,
    pub features: FeatureModel,
    pub som: SomModel,
    pub warnings: WarningConfig,
    pub config: SdmConfig,
}

pub const SDM_MODEL_FILE: &str = "sdm_model.json";
pub const KPI_WARNINGS_FILE: &str = "kpi_warnings.csv";

/// Fills partially missing rows by k-NN against the complete training rows.
/// Rows with every tag missing are left as they are.
fn impute_records(records: &mut [ScadaRecord], reference: &[Vec<f64>], config: &ImputeConfig) -> Result<()> {
    if reference.len() < config.k {
        return Ok(());
    }
    let filled: Vec<Option<Vec<f64>>> = records
        .par_iter()
        .map(|r| {
            if r.is_complete() || r.n_missing() == r.values.len() {
                return Ok(None);
            }
            knn_impute(&r.values, reference, config).map(|imp| Some(imp.values))
        })
        .collect::<Result<_>>()?;
    for (r, f) in records.iter_mut().zip(filled) {
        if let Some(v) = f {
            for (slot, x) in r.values.iter_mut().zip(v) {
                *slot = Some(x);
            }
        }
    }
    Ok(())
}

/// Daily KPI series over all records: imputation, trailing features, SOM
/// occupancy, online de-trending and filtering.
pub fn sdm_kpi_series(
    records: &[ScadaRecord],
    train_reference: &[Vec<f64>],
    features: &FeatureModel,
    som: &SomModel,
    sdm: &SdmConfig,
    impute: &ImputeConfig,
) -> Result<KpiSeries> {
    let mut recs = records.to_vec();
    impute_records(&mut recs, train_reference, impute).stage("impute")?;
    let feats = features.transform(&recs, DetrendMode::Trailing);
    let daytime: Vec<bool> = recs.iter().map(|r| features.is_daytime(r)).collect();
    let timestamps: Vec<_> = recs.iter().map(|r| r.timestamp).collect();
    let mut series = daily_kpi_series(som, &timestamps, &feats, &daytime, sdm.min_daily_samples).stage("kpi")?;
    kpi_chain(&mut series, sdm);
    Ok(series)
}

fn complete_rows<'a>(records: impl IntoIterator<Item = &'a ScadaRecord>) -> Vec<Vec<f64>> {
    records
        .into_iter()
        .filter_map(|r| r.values.iter().copied().collect())
        .collect()
}

/// Trains the supervision model and derives its control limits.
pub fn train_sdm(cfg: &RunConfig, records: &[ScadaRecord], outlier_fit: OutlierFitParams, som_seed: u64) -> Result<SdmModelFile> {
    let train: Vec<ScadaRecord> = records.iter().filter(|r| cfg.in_training(r)).cloned().collect();
    if train.is_empty() {
        return Err(Error::Config("no records inside the training interval".into()));
    }
    let features = FeatureModel::fit(&train, &cfg.features, cfg.preprocess.night_ghi_threshold).stage("features")?;
    let train_feats = features.transform(&train, DetrendMode::Centered);
    let som_rows: Vec<Vec<f64>> = train_feats
        .iter()
        .zip(&train)
        .filter(|(_, r)| features.is_daytime(r))
        .filter_map(|(row, _)| row.iter().copied().collect())
        .collect();
    let mut hyper = cfg.sdm.som.clone();
    hyper.seed = som_seed;
    let som = train_som(&som_rows, &hyper).stage("som")?;

    let reference = complete_rows(&train);
    let series = sdm_kpi_series(records, &reference, &features, &som, &cfg.sdm, &cfg.impute)?;
    let calibration: Vec<f64> = series
        .days
        .iter()
        .skip(cfg.sdm.warmup_days)
        .filter(|d| d.date >= cfg.train_start && d.date <= cfg.train_end)
        .filter_map(|d| d.kpi_filtered)
        .collect();
    let warnings = WarningConfig::from_training(&calibration).stage("control limits")?;
    Ok(SdmModelFile {
        train_start: cfg.train_start,
        train_end: cfg.train_end,
        outlier_fit,
        features,
        som,
        warnings,
        config: cfg.sdm.clone(),
    })
}

pub fn run_sdm_train(cfg: &RunConfig) -> Result<Manifest> {
    let inputs = load_inputs(cfg)?;
    let (records, params, _) = clean_inputs(cfg, &inputs)?;
    let mut o = Outputs::new(&cfg.out_dir, "sdm-train", cfg.seed)?;
    let som_seed = o.seed("sdm.som");
    let model = train_sdm(cfg, &records, params, som_seed)?;
    o.write_json(SDM_MODEL_FILE, &model)?;
    o.finish()
}

/// One day of the KPI/warning report.
#[derive(Debug, Clone, PartialEq)]
pub struct WarningDay {
    pub date: NaiveDate,
    pub kpi_raw: Option<f64>,
    pub kpi_detrended: Option<f64>,
    pub kpi_filtered: Option<f64>,
    pub warning_level: u8,
    pub fault_frac: f64,
}

/// Fraction of each day's samples carrying a fault label, for `dates`.
fn fault_fractions(records: &[ScadaRecord], labels: &[ClassId], dates: &[NaiveDate]) -> Vec<f64> {
    let mut per_day: BTreeMap<NaiveDate, (usize, usize)> = BTreeMap::new();
    for (r, &l) in records.iter().zip(labels) {
        let e = per_day.entry(r.date()).or_default();
        e.0 += 1;
        if l != NORMAL {
            e.1 += 1;
        }
    }
    dates
        .iter()
        .map(|d| per_day.get(d).map_or(0.0, |&(n, f)| f as f64 / n as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdmMetricsFile {
    pub evaluation_start: Option<NaiveDate>,
    pub evaluation_days: usize,
    pub tau3: f64,
    pub tau5: f64,
    pub results: Vec<SdmEvaluation>,
}

pub fn sdm_warning_days(cfg: &RunConfig, model: &SdmModelFile, inputs: &Inputs) -> Result<Vec<WarningDay>> {
    let mut records = inputs.raw.clone();
    apply_cleaning(&mut records, &model.outlier_fit, &inputs.datasheet, &cfg.preprocess);
    let train: Vec<&ScadaRecord> = records
        .iter()
        .filter(|r| r.date() >= model.train_start && r.date() <= model.train_end)
        .collect();
    let reference = complete_rows(train);
    let series = sdm_kpi_series(&records, &reference, &model.features, &model.som, &model.config, &cfg.impute)?;
    let levels = update_warnings(&series.filtered(), &model.warnings);
    let dates: Vec<NaiveDate> = series.days.iter().map(|d| d.date).collect();
    let fault_frac = fault_fractions(&records, &inputs.labels, &dates);
    Ok(series
        .days
        .iter()
        .zip(levels)
        .zip(fault_frac)
        .map(|((d, w), f)| WarningDay {
            date: d.date,
            kpi_raw: d.kpi_raw,
            kpi_detrended: d.kpi_detrended,
            kpi_filtered: d.kpi_filtered,
            warning_level: w.level,
            fault_frac: f,
        })
        .collect())
}

pub const SDM_LOOKBACKS: [usize; 3] = [0, 3, 7];

pub fn sdm_metrics(days: &[WarningDay], train_end: NaiveDate, warnings: &WarningConfig) -> Result<SdmMetricsFile> {
    let eval: Vec<&WarningDay> = days.iter().filter(|d| d.date > train_end).collect();
    let levels: Vec<u8> = eval.iter().map(|d| d.warning_level).collect();
    let faults: Vec<bool> = eval.iter().map(|d| d.fault_frac > 0.0).collect();
    let results = SDM_LOOKBACKS
        .iter()
        .map(|&n| evaluate_sdm(&levels, &faults, n))
        .collect::<Result<_>>()?;
    Ok(SdmMetricsFile {
        evaluation_start: eval.first().map(|d| d.date),
        evaluation_days: eval.len(),
        tau3: warnings.tau3,
        tau5: warnings.tau5,
        results,
    })
}

pub fn load_sdm_model(path: &Path) -> Result<SdmModelFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn run_sdm_run(cfg: &RunConfig) -> Result<Manifest> {
    let model = load_sdm_model(&cfg.out_dir.join(SDM_MODEL_FILE)).stage("load SDM model")?;
    let inputs = load_inputs(cfg)?;
    let days = sdm_warning_days(cfg, &model, &inputs)?;
    let mut o = Outputs::new(&cfg.out_dir, "sdm-run", cfg.seed)?;
    let rows = days.iter().map(|d| {
        vec![
            d.date.to_string(),
            fmt_opt(d.kpi_raw),
            fmt_opt(d.kpi_detrended),
            fmt_opt(d.kpi_filtered),
            d.warning_level.to_string(),
            d.fault_frac.to_string(),
        ]
    });
    let csv = csv_bytes(
        &["date", "kpi_raw", "kpi_detrended", "kpi_filtered", "warning_level", "fault_frac"],
        rows,
    )?;
    o.write(KPI_WARNINGS_FILE, &csv)?;
    o.write_json("sdm_metrics.json", &sdm_metrics(&days, model.train_end, &model.warnings)?)?;
    o.finish()
}

/// Reads `date,...,warning_level,fault_frac` rows back.
pub fn read_warning_days(path: &Path) -> Result<Vec<(NaiveDate, u8, f64)>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(f);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("{}: missing column {name}", path.display())))
    };
    let (ci, wi, fi) = (col("date")?, col("warning_level")?, col("fault_frac")?);
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |m: &str| Error::Row {
            line,
            message: m.to_string(),
        };
        let date: NaiveDate = row[ci].parse().map_err(|_| bad("bad date"))?;
        let level: u8 = row[wi].parse().map_err(|_| bad("bad warning level"))?;
        let frac: f64 = row[fi].parse().map_err(|_| bad("bad fault fraction"))?;
        out.push((date, level, frac));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// FPM

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpmModelFile {
    pub model: NnModel,
    /// Feature model (scaler and de-trending) the inputs must go through.
    pub feature_model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedClass {
    pub class_id: ClassId,
    pub name: String,
    pub n_fault: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub model_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedClass {
    pub class_id: ClassId,
    pub name: String,
    pub n_fault: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpmSummary {
    pub trained: Vec<TrainedClass>,
    pub skipped_classes: Vec<SkippedClass>,
}

pub const FPM_FEATURES_FILE: &str = "fpm_features.json";

/// Labelled, scaled feature timeline over the whole cleaned record set.
pub fn fpm_timeline(cfg: &RunConfig, records: &[ScadaRecord], labels: &[ClassId]) -> Result<(FeatureModel, FeatureTimeline)> {
    let features = FeatureModel::fit(records, &cfg.features, cfg.preprocess.night_ghi_threshold).stage("features")?;
    let feats = features.transform(records, DetrendMode::Centered);
    let daytime = records.iter().map(|r| features.is_daytime(r)).collect();
    let timeline = FeatureTimeline::new(feats, labels.to_vec(), daytime)?;
    Ok((features, timeline))
}

fn fpm_classes(cfg: &RunConfig, taxonomy: &Taxonomy) -> Vec<ClassId> {
    let mut classes: Vec<ClassId> = match &cfg.fpm.classes {
        Some(c) => c.clone(),
        None => taxonomy.entries().iter().map(|e| e.class_id).collect(),
    };
    classes.sort_unstable();
    classes.dedup();
    classes
}

fn settings(cfg: &RunConfig) -> FpmSettings {
    FpmSettings {
        plan: cfg.fpm.plan.clone(),
        nn: cfg.fpm.nn.clone(),
        impute: cfg.impute.clone(),
    }
}

fn class_name(taxonomy: &Taxonomy, class: ClassId) -> String {
    taxonomy.get(class).map_or_else(|| class.to_string(), |e| e.name.clone())
}

pub fn run_fpm_train(cfg: &RunConfig) -> Result<Manifest> {
    let inputs = load_inputs(cfg)?;
    let (records, _, _) = clean_inputs(cfg, &inputs)?;
    let (features, timeline) = fpm_timeline(cfg, &records, &inputs.labels)?;
    let mut o = Outputs::new(&cfg.out_dir, "fpm-train", cfg.seed)?;
    let classes = fpm_classes(cfg, &inputs.taxonomy);
    let seeds: Vec<u64> = classes.iter().map(|c| o.seed(&format!("fpm.train.class{c}"))).collect();
    let settings = settings(cfg);
    let results: Vec<Result<_>> = classes
        .par_iter()
        .zip(&seeds)
        .map(|(&c, &s)| train_class(&timeline, c, &settings, s))
        .collect();

    o.write_json(FPM_FEATURES_FILE, &features)?;
    let mut summary = FpmSummary {
        trained: Vec::new(),
        skipped_classes: Vec::new(),
    };
    for (&c, res) in classes.iter().zip(results) {
        let name = class_name(&inputs.taxonomy, c);
        match res {
            Ok((model, train, test)) => {
                let file = format!("fpm_model_class{c}.json");
                o.write_json(
                    &file,
                    &FpmModelFile {
                        model,
                        feature_model: FPM_FEATURES_FILE.into(),
                    },
                )?;
                summary.trained.push(TrainedClass {
                    class_id: c,
                    name,
                    n_fault: timeline.fault_indices(c).len(),
                    n_train: train.len(),
                    n_test: test.len(),
                    model_file: file,
                });
            }
            Err(e @ (Error::SkipClass { .. } | Error::InsufficientData(_))) => {
                summary.skipped_classes.push(SkippedClass {
                    class_id: c,
                    name,
                    n_fault: timeline.fault_indices(c).len(),
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e).stage("fpm training"),
        }
    }
    o.write_json("fpm_summary.json", &summary)?;
    o.finish()
}

pub fn run_fpm_eval(cfg: &RunConfig) -> Result<Manifest> {
    let inputs = load_inputs(cfg)?;
    let (records, _, _) = clean_inputs(cfg, &inputs)?;
    let (_, timeline) = fpm_timeline(cfg, &records, &inputs.labels)?;
    let mut o = Outputs::new(&cfg.out_dir, "fpm-eval", cfg.seed)?;
    let mc = McConfig {
        runs: cfg.fpm.mc_runs,
        seed: o.seed("fpm.mc"),
    };
    let settings = settings(cfg);
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for c in fpm_classes(cfg, &inputs.taxonomy) {
        match monte_carlo_eval(&timeline, c, &cfg.fpm.horizons, &settings, &mc) {
            Ok(per_h) => {
                for h in per_h {
                    rows.push(vec![
                        c.to_string(),
                        h.horizon_hours.to_string(),
                        fmt_opt(h.accuracy),
                        fmt_opt(h.sensitivity),
                        fmt_opt(h.specificity),
                        h.n_faults.to_string(),
                        h.n_detected.to_string(),
                        h.n_runs.to_string(),
                    ]);
                }
            }
            Err(e @ (Error::SkipClass { .. } | Error::InsufficientData(_))) => {
                skipped.push(SkippedClass {
                    class_id: c,
                    name: class_name(&inputs.taxonomy, c),
                    n_fault: timeline.fault_indices(c).len(),
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e).stage("fpm evaluation"),
        }
    }
    let csv = csv_bytes(
        &["class", "horizon_hours", "acc", "sen", "spe", "n_faults", "n_detected", "n_mc_runs"],
        rows,
    )?;
    o.write("fpm_metrics.csv", &csv)?;
    o.write_json("fpm_eval_skipped.json", &skipped)?;
    o.finish()
}

// ---------------------------------------------------------------------------
// energy

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySummary {
    pub lookback_days: usize,
    pub energy_ideal_kwh: f64,
    pub energy_actual_kwh: f64,
    pub energy_counterfactual_kwh: f64,
    pub yield_ideal_pct: f64,
    pub yield_actual_pct: f64,
    pub yield_with_sdm_pct: f64,
}

/// Energy report over the raw records given daily warning levels.
///
/// Missing GTI gives zero theoretical power; missing module temperature is
/// treated as no thermal loss.
pub fn energy_report(
    raw: &[ScadaRecord],
    datasheet: &InverterDatasheet,
    days: &[(NaiveDate, u8, f64)],
    lookback_days: usize,
) -> Result<EnergyReport> {
    let index: BTreeMap<NaiveDate, usize> = days.iter().enumerate().map(|(i, d)| (d.0, i)).collect();
    let day_of_sample = raw
        .iter()
        .map(|r| {
            index
                .get(&r.date())
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("no warning row for {}", r.date())))
        })
        .collect::<Result<Vec<_>>>()?;
    let p_th: Vec<f64> = raw
        .iter()
        .map(|r| {
            r.get(Tag::Gti)
                .map_or(0.0, |g| theoretical_power(g.max(0.0), r.get(Tag::TMod).unwrap_or(25.0), datasheet))
        })
        .collect();
    let p_ac: Vec<Option<f64>> = raw.iter().map(|r| r.get(Tag::PAc)).collect();
    let levels: Vec<u8> = days.iter().map(|d| d.1).collect();
    let faults: Vec<bool> = days.iter().map(|d| d.2 > 0.0).collect();
    energy_yield_with_sdm(&p_th, &p_ac, &day_of_sample, &levels, &faults, lookback_days)
}

pub fn run_energy(cfg: &RunConfig, warnings_csv: Option<&Path>) -> Result<Manifest> {
    let raw = load_scada_csv(&cfg.scada).stage("load scada")?;
    let datasheet = InverterDatasheet::load(&cfg.datasheet).stage("load datasheet")?;
    let wpath = warnings_csv.map_or_else(|| cfg.out_dir.join(KPI_WARNINGS_FILE), Path::to_path_buf);
    let days = read_warning_days(&wpath).stage("load warnings")?;
    let lookback = cfg.sdm.lookback_days;
    let rep = energy_report(&raw, &datasheet, &days, lookback).stage("energy")?;
    let mut o = Outputs::new(&cfg.out_dir, "energy", cfg.seed)?;
    let rows = (0..raw.len()).map(|i| {
        vec![
            format_timestamp(&raw[i].timestamp),
            rep.p_ac[i].to_string(),
            rep.p_th[i].to_string(),
            rep.lp_cum[i].to_string(),
            rep.p_ac_counterfactual[i].to_string(),
        ]
    });
    let csv = csv_bytes(&["timestamp", "p_ac", "p_th", "lp_cum", "p_ac_counterfactual"], rows)?;
    o.write("energy.csv", &csv)?;
    o.write_json(
        "energy_summary.json",
        &EnergySummary {
            lookback_days: lookback,
            energy_ideal_kwh: rep.energy_ideal_kwh,
            energy_actual_kwh: rep.energy_actual_kwh,
            energy_counterfactual_kwh: rep.energy_counterfactual_kwh,
            yield_ideal_pct: 100.0,
            yield_actual_pct: rep.yield_actual_pct,
            yield_with_sdm_pct: rep.yield_with_sdm_pct,
        },
    )?;
    o.finish()
}
