//! Subcommand implementations behind the `kscu` binary.
//!
//! Each command reads an [`ExperimentConfig`], writes its outputs under an
//! output directory and brackets the work with a [`RunManifest`]: the manifest
//! is written with status `running` before anything else happens and
//! rewritten with the final status and output list afterwards.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::basetrain::{train_base, train_log_csv, MixtureDataset};
use crate::condmodel::{checkpoint, Denoiser};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::evalmetrics::{evaluate, EvalReport, ModeClassifier};
use crate::keystep::{start_step, KeyStepTable, TableParams};
use crate::rng;
use crate::schedule::NoiseSchedule;
use crate::spectra::{snr_table, snr_table_csv};
use crate::unlearn::run_unlearning;

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

pub const BASE_CKPT: &str = "base.ckpt";
pub const UNLEARNED_CKPT: &str = "unlearned.ckpt";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const UNLEARN_LOG: &str = "unlearn_log.csv";
pub const EVAL_REPORT: &str = "eval_report.csv";
pub const SNR_CURVE: &str = "snr_curve.csv";
pub const ABLATION: &str = "ablation.csv";
pub const KEYSTEP_HISTOGRAM: &str = "keystep_histogram.csv";

/// Process exit code for an error: 2 for configuration problems, 3 for
/// numeric failures, 1 for anything else (I/O, corrupt checkpoints).
pub fn exit_code(err: &Error) -> u8 {
    if err.is_config() {
        2
    } else if err.is_numeric() {
        3
    } else {
        1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

impl RunStatus {
    fn name(self) -> &'static str {
        match self {
            RunStatus::Running => "running",
            RunStatus::Complete => "complete",
            RunStatus::Failed => "failed",
        }
    }
}

const MANIFEST_MAGIC: &str = "kscu-run-manifest 1";
const CONFIG_MARKER: &str = "--- effective config ---";

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub status: RunStatus,
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    /// Output file names, relative to the output directory.
    pub outputs: Vec<String>,
    pub error: Option<String>,
    /// The rendered effective configuration.
    pub config: String,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn path(out: &Path, command: &str) -> PathBuf {
        out.join(format!("manifest-{command}.txt"))
    }

    pub fn new(command: &str, cfg: &ExperimentConfig) -> Self {
        Self {
            command: command.to_string(),
            status: RunStatus::Running,
            config_hash: cfg.hash(),
            code_version: CODE_VERSION.to_string(),
            seed: cfg.seed,
            started_unix: unix_now(),
            finished_unix: None,
            outputs: Vec::new(),
            error: None,
            config: cfg.render(),
        }
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "{MANIFEST_MAGIC}\ncommand = {}\nstatus = {}\nconfig_hash = {}\ncode_version = {}\nseed = {}\nstarted_unix = {}\nfinished_unix = {}\n",
            self.command,
            self.status.name(),
            self.config_hash,
            self.code_version,
            self.seed,
            self.started_unix,
            self.finished_unix.map_or_else(|| "-".to_string(), |t| t.to_string()),
        );
        for o in &self.outputs {
            s.push_str(&format!("output = {o}\n"));
        }
        if let Some(e) = &self.error {
            s.push_str(&format!("error = {}\n", e.replace('\n', " ")));
        }
        s.push_str(CONFIG_MARKER);
        s.push('\n');
        s.push_str(&self.config);
        s
    }

    /// Re-reads the echoed configuration of a manifest file.
    pub fn read_config(text: &str) -> Result<ExperimentConfig> {
        let (_, body) = text
            .split_once(&format!("{CONFIG_MARKER}\n"))
            .ok_or_else(|| Error::InvalidConfig("manifest has no config section".into()))?;
        ExperimentConfig::parse(body)
    }

    fn write(&self, out: &Path) -> Result<()> {
        std::fs::create_dir_all(out)?;
        std::fs::write(Self::path(out, &self.command), self.render())?;
        Ok(())
    }
}

/// Runs `body` between the two manifest writes.
pub fn with_manifest<F>(command: &str, cfg: &ExperimentConfig, out: &Path, body: F) -> Result<Vec<PathBuf>>
where
    F: FnOnce() -> Result<Vec<PathBuf>>,
{
    let mut manifest = RunManifest::new(command, cfg);
    manifest.write(out)?;
    let result = body();
    manifest.finished_unix = Some(unix_now());
    match &result {
        Ok(paths) => {
            manifest.status = RunStatus::Complete;
            manifest.outputs = paths.iter().map(|p| p.strip_prefix(out).unwrap_or(p).display().to_string()).collect();
        }
        Err(e) => {
            manifest.status = RunStatus::Failed;
            manifest.error = Some(e.to_string());
        }
    }
    manifest.write(out)?;
    result
}

fn write_text(out: &Path, name: &str, body: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(out)?;
    let path = out.join(name);
    std::fs::write(&path, body)?;
    Ok(path)
}

fn save_checkpoint(model: &Denoiser, out: &Path, name: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    let path = out.join(name);
    checkpoint::save(model, &path)?;
    Ok(vec![path.clone(), checkpoint::blob_path(&path)])
}

fn load_matching(cfg: &ExperimentConfig, path: &Path) -> Result<Denoiser> {
    let model = checkpoint::load(path)?;
    if model.dims() != &cfg.model {
        return Err(Error::InvalidConfig(format!(
            "checkpoint {} has dims {:?}, config expects {:?}",
            path.display(),
            model.dims(),
            cfg.model
        )));
    }
    Ok(model)
}

struct Setup {
    dataset: MixtureDataset,
    schedule: NoiseSchedule,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    Ok(Setup { dataset: cfg.dataset()?, schedule: cfg.schedule()? })
}

fn classifier(cfg: &ExperimentConfig, ds: &MixtureDataset) -> Result<ModeClassifier> {
    ModeClassifier::for_dataset(ds, Some(cfg.eval_radius()))
}

/// Trains the base model: writes `base.ckpt` and `train_log.csv`.
pub fn cmd_train_base(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    with_manifest("train-base", cfg, out, || {
        let s = setup(cfg)?;
        let trained = train_base(&s.dataset, &cfg.base_train(), &s.schedule, cfg.model)?;
        let mut paths = save_checkpoint(&trained.model, out, BASE_CKPT)?;
        paths.push(write_text(out, TRAIN_LOG, &train_log_csv(&trained.log))?);
        Ok(paths)
    })
}

/// Unlearns the configured concepts from `base`: writes `unlearned.ckpt` and `unlearn_log.csv`.
pub fn cmd_unlearn(cfg: &ExperimentConfig, out: &Path, base: &Path) -> Result<Vec<PathBuf>> {
    with_manifest("unlearn", cfg, out, || {
        let s = setup(cfg)?;
        let model = load_matching(cfg, base)?;
        let result = run_unlearning(&model, &cfg.unlearn_config(&s.dataset), &s.schedule)?;
        let mut paths = save_checkpoint(&result.model, out, UNLEARNED_CKPT)?;
        paths.push(write_text(out, UNLEARN_LOG, &result.log_csv())?);
        Ok(paths)
    })
}

/// Evaluates `model`, adding an MMD row when a reference checkpoint is given.
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    out: &Path,
    model: &Path,
    reference: Option<&Path>,
    want_mmd: bool,
) -> Result<Vec<PathBuf>> {
    with_manifest("eval", cfg, out, || {
        if want_mmd && reference.is_none() {
            return Err(Error::InvalidConfig("mmd requested without a reference checkpoint".into()));
        }
        let report = eval_report(
            cfg,
            &load_matching(cfg, model)?,
            reference.map(|p| load_matching(cfg, p)).transpose()?.as_ref(),
            cfg.seed,
        )?;
        let names: Vec<String> = cfg.concepts.iter().map(|c| c.name.clone()).collect();
        Ok(vec![write_text(out, EVAL_REPORT, &report.to_csv(&names))?])
    })
}

/// The evaluation used by `eval` and `ablate-steps`.
pub fn eval_report(
    cfg: &ExperimentConfig,
    model: &Denoiser,
    reference: Option<&Denoiser>,
    seed: u64,
) -> Result<EvalReport> {
    let s = setup(cfg)?;
    let clf = classifier(cfg, &s.dataset)?;
    evaluate(
        model,
        reference,
        &s.dataset,
        &clf,
        &s.schedule,
        &cfg.unlearn.forget,
        &cfg.unlearn.replace,
        cfg.eval.n_samples,
        cfg.eval.w,
        cfg.eval.mmd_pairs,
        seed,
    )
}

/// Generates a key-step table; returns the entries (one per line) and writes the histogram.
pub fn cmd_keystep_table(cfg: &ExperimentConfig, params: TableParams, out: &Path) -> Result<(String, Vec<PathBuf>)> {
    let mut listing = String::new();
    let paths = with_manifest("keystep-table", cfg, out, || {
        let table = KeyStepTable::generate(params).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        listing = table.entries().iter().map(|s| format!("{s}\n")).collect();
        let mut csv = String::from("step,count\n");
        for (step, count) in table.histogram() {
            csv.push_str(&format!("{step},{count}\n"));
        }
        Ok(vec![write_text(out, KEYSTEP_HISTOGRAM, &csv)?])
    })?;
    Ok((listing, paths))
}

/// Analytic and Monte-Carlo SNR per frequency: writes `snr_curve.csv`.
pub fn cmd_freq(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    with_manifest("freq", cfg, out, || {
        let (spec, noise) = cfg.spectra();
        let sp = &cfg.spectra;
        let rows = snr_table(&spec, &noise, sp.t, sp.snr_th, sp.n_trials, rng::substream_seed(cfg.seed, rng::SPECTRA))?;
        Ok(vec![write_text(out, SNR_CURVE, &snr_table_csv(&rows))?])
    })
}

/// One row of `ablation.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub fraction: f64,
    pub start: usize,
    pub len: usize,
    pub seed: u64,
    pub augment: bool,
    pub ua: f64,
    pub retain_min: f64,
    pub mmd2: f64,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("fraction,start,len,seed,aug,ua,retain_min,mmd2\n");
    for r in rows {
        s.push_str(&format!(
            "{:?},{},{},{},{},{:?},{:?},{:?}\n",
            r.fraction,
            r.start,
            r.len,
            r.seed,
            if r.augment { "on" } else { "off" },
            r.ua,
            r.retain_min,
            r.mmd2
        ));
    }
    s
}

/// Table length that keeps the per-entry budget of the reference table when
/// the start step moves: `L · (E − S + 1) / (E − S_ref + 1)`, rounded.
pub fn matched_len(reference: TableParams, start: usize) -> usize {
    let span = |s: usize| (reference.end - s + 1) as f64;
    (reference.len as f64 * span(start) / span(reference.start)).round() as usize
}

/// Runs unlearning for each start fraction and seed and evaluates the result.
pub fn ablate_rows(cfg: &ExperimentConfig, base: &Denoiser, fractions: &[f64]) -> Result<Vec<AblationRow>> {
    if fractions.is_empty() {
        return Err(Error::InvalidConfig("ablation needs at least one start fraction".into()));
    }
    let s = setup(cfg)?;
    let reference = cfg.table_params();
    let mut rows = Vec::new();
    for &fraction in fractions {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::InvalidConfig(format!("start fraction {fraction} outside [0, 1)")));
        }
        let start = start_step(fraction, cfg.schedule.n_sampler);
        let len = matched_len(reference, start);
        for i in 0..cfg.ablate.n_seeds as u64 {
            let mut run = cfg.clone();
            run.seed = cfg.seed + i;
            run.unlearn.start = Some(start);
            run.unlearn.len = Some(len);
            run.validate()?;
            let result = run_unlearning(base, &run.unlearn_config(&s.dataset), &s.schedule)?;
            let report = eval_report(&run, &result.model, Some(base), run.seed)?;
            rows.push(AblationRow {
                fraction,
                start,
                len,
                seed: run.seed,
                augment: cfg.augment.enabled,
                ua: report.mean_ua(),
                retain_min: report.min_retain().unwrap_or(f64::NAN),
                mmd2: report.mmd2.expect("reference model given"),
            });
        }
    }
    Ok(rows)
}

/// Key-step start ablation: writes `ablation.csv`.
pub fn cmd_ablate_steps(cfg: &ExperimentConfig, out: &Path, base: &Path, fractions: &[f64]) -> Result<Vec<PathBuf>> {
    with_manifest("ablate-steps", cfg, out, || {
        let model = load_matching(cfg, base)?;
        let rows = ablate_rows(cfg, &model, fractions)?;
        Ok(vec![write_text(out, ABLATION, &ablation_csv(&rows))?])
    })
}
