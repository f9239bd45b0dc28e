//! The `delirium-risk` command line: one subcommand per pipeline stage plus
//! `report`, which fills in missing stages and aggregates their artifacts.
//!
//! Exit codes: 0 success, 1 computation error, 2 usage or input error.

pub mod config;
pub mod plot;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::cohort::{build_cohort, cohort_flow, cohort_summary, CohortAssignment, CohortCriteria};
use crate::comorbidity::{patient_profile, CharlsonMap, ComorbidityFlags, Condition};
use crate::ehr::{load_dataset, write_dataset, Dataset, ADMISSIONS_FILE, DIAGNOSES_FILE, PATIENTS_FILE};
use crate::error::{Error, Result};
use crate::eval::{derive_seed, fit_pipeline, kfold_cv, pr_points, roc_points};
use crate::features::{build_sequences, flatten, read_sequences, write_sequences, FlatSample, SequenceConfig};
use crate::stats::comorbidity_table;
use crate::survival::{greenwood_band, km_fit, logrank_test, to_survival, BandTransform, KmCurve, SurvivalObservation};
use crate::syngen::{generate, write_ground_truth};
use config::RunConfig;
use plot::{km_svg, roc_svg, StepSeries};

pub const SEQUENCES_FILE: &str = "sequences.csv";
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Debug, Parser)]
#[command(name = "delirium-risk", version, about = "Delirium risk pipeline over longitudinal EHR tables")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for cross-validation folds (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, short, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Directory with patients.csv, admissions.csv and diagnoses.csv
    /// (defaults to the output directory).
    #[arg(long, short, global = true, value_name = "DIR")]
    input: Option<PathBuf>,
    /// More logging (-v info, -vv debug).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BandArg {
    Linear,
    Loglog,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Sequence file (defaults to <out>/sequences.csv).
    #[arg(long, value_name = "FILE")]
    features: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with ground-truth risk.
    Synth {
        #[arg(long)]
        patients: Option<usize>,
    },
    /// Validate the input tables and summarize them.
    Ingest,
    /// Apply exclusions, label MCI and delirium, emit the selection flow.
    Cohort,
    /// Per-patient Charlson indicators and index.
    Comorbidity,
    /// Prevalence with Wald intervals and chi-square tests per condition.
    ComorbidityStats,
    /// Kaplan-Meier curves for MCI vs non-MCI with a log-rank test.
    Km {
        #[arg(long, value_name = "YYYY-MM-DD")]
        study_end: Option<NaiveDate>,
        #[arg(long, value_enum)]
        band: Option<BandArg>,
        #[arg(long)]
        delirium_only: bool,
    },
    /// Build per-admission feature sequences.
    Features {
        #[arg(long)]
        max_seq_len: Option<usize>,
    },
    /// Train one model on all sequences and write a checkpoint.
    Train(ModelArgs),
    /// Stratified k-fold cross-validation with bootstrap intervals.
    Evaluate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        bootstrap: Option<usize>,
    },
    /// Run any stage whose artifacts are missing, then write summary.json
    /// and report.md.
    Report,
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    let mut ctx = match Context::new(&cli) {
        Ok(ctx) => ctx,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    match ctx.dispatch(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            ctx.out.discard();
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    if e.is_input_error() {
        2
    } else {
        1
    }
}

// ── Artifacts ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub master_seed: u64,
    pub config_hash: String,
}

impl Provenance {
    fn line(&self) -> String {
        format!(
            "{} {} seed={} config=sha256:{}",
            self.tool, self.version, self.master_seed, self.config_hash
        )
    }
}

/// Files written by this invocation, removed again if it fails.
struct Outputs {
    dir: PathBuf,
    provenance: Provenance,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn exists(&self, name: &str) -> bool {
        self.path(name).is_file()
    }

    fn write_with<F>(&mut self, name: &str, body: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        self.written.push(path.clone());
        let mut w = BufWriter::new(file);
        body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// CSV with a `#` provenance line ahead of the header.
    fn write_csv<F>(&mut self, name: &str, body: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    {
        let line = self.provenance.line();
        self.write_with(name, |w| {
            writeln!(w, "# {line}")?;
            body(w)
        })
    }

    /// JSON object with a `provenance` member added.
    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut v = serde_json::to_value(value).map_err(|e| Error::Config(e.to_string()))?;
        let prov = serde_json::to_value(&self.provenance).expect("provenance serializes");
        match &mut v {
            Value::Object(map) => {
                map.insert("provenance".into(), prov);
            }
            other => {
                v = json!({ "provenance": prov, "data": other.take() });
            }
        }
        let text = serde_json::to_string_pretty(&v).expect("JSON value serializes");
        self.write_with(name, |w| writeln!(w, "{text}"))
    }

    fn write_svg(&mut self, name: &str, svg: &str) -> Result<PathBuf> {
        let line = self.provenance.line();
        self.write_with(name, |w| {
            writeln!(w, "<!-- {line} -->")?;
            w.write_all(svg.as_bytes())
        })
    }

    fn discard(&mut self) {
        for path in self.written.drain(..) {
            if let Err(e) = std::fs::remove_file(&path) {
                log::warn!("could not remove partial artifact {}: {e}", path.display());
            }
        }
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::input(path, e.to_string()))
}

// ── Stages ──────────────────────────────────────────────────────────────────

struct Context {
    cfg: RunConfig,
    threads: usize,
    input_dir: PathBuf,
    out: Outputs,
}

#[derive(Serialize)]
struct Contrast {
    name: &'static str,
    group1: &'static str,
    group2: &'static str,
    #[serde(flatten)]
    outcome: ContrastOutcome,
}

#[derive(Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
enum ContrastOutcome {
    Ok { file: String, table: crate::stats::ComorbidityTable },
    Skipped { reason: String },
}

#[derive(Serialize)]
struct KmGroupSummary {
    name: &'static str,
    file: Option<String>,
    n: usize,
    n_events: usize,
    median_months: Option<f64>,
    milestones: Vec<crate::survival::KmPoint>,
}

impl Context {
    fn new(cli: &Cli) -> Result<Self> {
        let mut cfg = match &cli.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = cli.seed {
            cfg.seed = seed;
        }
        match &cli.command {
            Command::Synth { patients: Some(n) } => cfg.synth.n_patients = *n,
            Command::Km {
                study_end,
                band,
                delirium_only,
            } => {
                if study_end.is_some() {
                    cfg.km.study_end = *study_end;
                }
                if let Some(b) = band {
                    cfg.km.band = match b {
                        BandArg::Linear => BandTransform::Linear,
                        BandArg::Loglog => BandTransform::LogLog,
                    };
                }
                cfg.km.delirium_only |= *delirium_only;
            }
            Command::Features { max_seq_len: Some(n) } => cfg.features.max_seq_len = *n,
            Command::Train(m) => {
                if let Some(e) = m.epochs {
                    cfg.train.epochs = e;
                }
            }
            Command::Evaluate { model, folds, bootstrap } => {
                if let Some(e) = model.epochs {
                    cfg.train.epochs = e;
                }
                if let Some(f) = folds {
                    cfg.eval.folds = *f;
                }
                if let Some(b) = bootstrap {
                    cfg.eval.bootstrap_resamples = *b;
                }
            }
            _ => {}
        }
        let input_dir = cli
            .input
            .clone()
            .or_else(|| cfg.input.dir.clone())
            .unwrap_or_else(|| cli.out.clone());
        let provenance = Provenance {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            master_seed: cfg.seed,
            config_hash: cfg.hash(),
        };
        Ok(Self {
            threads: cli.threads.unwrap_or(0),
            input_dir,
            out: Outputs {
                dir: cli.out.clone(),
                provenance,
                written: Vec::new(),
            },
            cfg,
        })
    }

    fn dispatch(&mut self, command: &Command) -> Result<()> {
        match command {
            Command::Synth { .. } => self.synth(),
            Command::Ingest => self.ingest(),
            Command::Cohort => self.cohort(),
            Command::Comorbidity => self.comorbidity(),
            Command::ComorbidityStats => self.comorbidity_stats(),
            Command::Km { .. } => self.km(),
            Command::Features { .. } => self.features(),
            Command::Train(m) => self.train(m.features.as_deref()),
            Command::Evaluate { model, .. } => self.evaluate(model.features.as_deref()),
            Command::Report => self.report(),
        }
    }

    fn load(&self) -> Result<Dataset> {
        let file = |explicit: &Option<PathBuf>, name: &str| explicit.clone().unwrap_or_else(|| self.input_dir.join(name));
        let input = &self.cfg.input;
        load_dataset(
            &file(&input.patients, PATIENTS_FILE),
            &file(&input.admissions, ADMISSIONS_FILE),
            &file(&input.diagnoses, DIAGNOSES_FILE),
        )
    }

    fn criteria(&self) -> Result<CohortCriteria> {
        let min_age = (self.cfg.cohort.min_age > 0).then_some(self.cfg.cohort.min_age);
        match &self.cfg.cohort.criteria {
            Some(path) => CohortCriteria::from_file(path, min_age),
            None => Ok(CohortCriteria {
                min_age,
                ..CohortCriteria::default()
            }),
        }
    }

    fn charlson(&self) -> Result<CharlsonMap> {
        match &self.cfg.cohort.charlson {
            Some(path) => CharlsonMap::from_file(path),
            None => Ok(CharlsonMap::default()),
        }
    }

    fn cohort_data(&self) -> Result<(Dataset, Vec<CohortAssignment>)> {
        let dataset = self.load()?;
        let assignments = build_cohort(&dataset, &self.criteria()?);
        Ok((dataset, assignments))
    }

    fn synth(&mut self) -> Result<()> {
        let out = generate(&self.cfg.synth_config())?;
        let prov = vec![self.out.provenance.line()];
        let dir = self.out.dir.clone();
        let written = write_dataset(&out.dataset, &dir, &prov);
        // register before checking so a half-written set is cleaned up
        match written {
            Ok(paths) => self.out.written.extend(paths),
            Err(e) => {
                for name in [PATIENTS_FILE, ADMISSIONS_FILE, DIAGNOSES_FILE] {
                    self.out.written.push(dir.join(name));
                }
                return Err(e);
            }
        }
        let truth = out.ground_truth;
        self.out.write_with("ground_truth.csv", |w| write_ground_truth(&truth, w, &prov))?;
        let positives = truth.iter().filter(|g| g.label).count();
        println!(
            "synth: {} patients, {} admissions, {} with delirium -> {}",
            out.dataset.patients.len(),
            out.dataset.n_admissions(),
            positives,
            dir.display()
        );
        Ok(())
    }

    fn ingest(&mut self) -> Result<()> {
        let dataset = self.load()?;
        let n_dx: usize = dataset
            .patients
            .iter()
            .flat_map(|p| &p.admissions)
            .map(|a| a.diagnoses.len())
            .sum();
        let summary = json!({
            "source": dataset.provenance,
            "patients": dataset.patients.len(),
            "admissions": dataset.n_admissions(),
            "diagnoses": n_dx,
        });
        self.out.write_json("ingest.json", &summary)?;
        println!(
            "ingest: {} patients, {} admissions, {} diagnoses",
            dataset.patients.len(),
            dataset.n_admissions(),
            n_dx
        );
        Ok(())
    }

    fn cohort(&mut self) -> Result<()> {
        let (dataset, assignments) = self.cohort_data()?;
        let flow = cohort_flow(&assignments);
        self.out.write_json("cohort_flow.json", &flow)?;
        self.out.write_json("demographics.json", &cohort_summary(&assignments, &dataset))?;
        self.out.write_csv("cohort_assignments.csv", |w| {
            writeln!(
                w,
                "subject_id,excluded,exclusion_reasons,is_mci,has_delirium,first_delirium_time,index_admission_time,last_discharge_time"
            )?;
            let date = |d: Option<NaiveDate>| d.map(|d| d.to_string()).unwrap_or_default();
            for a in &assignments {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{}",
                    a.subject_id,
                    u8::from(a.excluded),
                    a.exclusion_reasons.join(";"),
                    u8::from(a.is_mci),
                    u8::from(a.has_delirium),
                    date(a.first_delirium_time),
                    date(a.index_admission_time),
                    date(a.last_discharge_time)
                )?;
            }
            Ok(())
        })?;
        println!(
            "cohort: {} patients, {} excluded, non-MCI {} ({} delirium), MCI {} ({} delirium)",
            flow.total, flow.excluded, flow.non_mci.n, flow.non_mci.delirium, flow.mci.n, flow.mci.delirium
        );
        Ok(())
    }

    fn included_profiles(&self) -> Result<Vec<(CohortAssignment, ComorbidityFlags, u32)>> {
        let (dataset, assignments) = self.cohort_data()?;
        let map = self.charlson()?;
        Ok(dataset
            .patients
            .iter()
            .zip(assignments)
            .filter(|(_, a)| !a.excluded)
            .map(|(p, a)| {
                let profile = patient_profile(p, &map);
                (a, profile.flags, profile.cci)
            })
            .collect())
    }

    fn comorbidity(&mut self) -> Result<()> {
        let rows = self.included_profiles()?;
        self.out.write_csv("comorbidity_profiles.csv", |w| {
            let keys: Vec<&str> = Condition::ALL.iter().map(|c| c.key()).collect();
            writeln!(w, "subject_id,{},cci", keys.join(","))?;
            for (a, flags, cci) in &rows {
                let bits: Vec<&str> = flags.0.iter().map(|&f| if f { "1" } else { "0" }).collect();
                writeln!(w, "{},{},{}", a.subject_id, bits.join(","), cci)?;
            }
            Ok(())
        })?;
        println!("comorbidity: {} profiles", rows.len());
        Ok(())
    }

    fn comorbidity_stats(&mut self) -> Result<()> {
        let rows = self.included_profiles()?;
        let pick = |f: &dyn Fn(&CohortAssignment) -> bool| -> Vec<ComorbidityFlags> {
            rows.iter().filter(|r| f(&r.0)).map(|r| r.1).collect()
        };
        let pairs: [(&'static str, &'static str, &'static str, Vec<ComorbidityFlags>, Vec<ComorbidityFlags>); 2] = [
            ("mci", "MCI", "No MCI", pick(&|a| a.is_mci), pick(&|a| !a.is_mci)),
            (
                "delirium",
                "MCI with delirium",
                "No MCI with delirium",
                pick(&|a| a.is_mci && a.has_delirium),
                pick(&|a| !a.is_mci && a.has_delirium),
            ),
        ];
        let mut contrasts = Vec::new();
        for (name, g1, g2, a, b) in pairs {
            let outcome = match comorbidity_table((g1, &a), (g2, &b), 0.95) {
                Ok(table) => {
                    let file = format!("comorbidity_{name}.csv");
                    self.out.write_csv(&file, |w| table.write_csv(w))?;
                    ContrastOutcome::Ok { file, table }
                }
                Err(Error::EmptyInput(reason)) => {
                    log::warn!("skipping {name} contrast: {reason}");
                    ContrastOutcome::Skipped { reason }
                }
                Err(e) => return Err(e),
            };
            contrasts.push(Contrast {
                name,
                group1: g1,
                group2: g2,
                outcome,
            });
        }
        self.out.write_json("comorbidity_stats.json", &json!({ "contrasts": contrasts }))?;
        for c in &contrasts {
            if let ContrastOutcome::Ok { table, .. } = &c.outcome {
                let significant: Vec<&str> = table
                    .rows
                    .iter()
                    .filter(|r| r.test.is_some_and(|t| t.p_value < 0.05))
                    .map(|r| r.condition.key())
                    .collect();
                let listed = if significant.is_empty() { "none".to_string() } else { significant.join(", ") };
                println!("comorbidity-stats {}: significant at 0.05: {listed}", c.name);
            }
        }
        Ok(())
    }

    fn km(&mut self) -> Result<()> {
        let (dataset, assignments) = self.cohort_data()?;
        let km = self.cfg.km.clone();
        let study_end = match km.study_end {
            Some(d) => d,
            None => dataset
                .patients
                .iter()
                .flat_map(|p| p.admissions.iter().map(|a| a.discharge_time))
                .max()
                .ok_or_else(|| Error::EmptyInput("no admissions to define the study end".into()))?,
        };
        let mut groups: [(&'static str, &'static str, Vec<SurvivalObservation>); 2] =
            [("MCI", "km_mci.csv", Vec::new()), ("No MCI", "km_non_mci.csv", Vec::new())];
        for a in assignments.iter().filter(|a| !a.excluded) {
            if km.delirium_only && !a.has_delirium {
                continue;
            }
            let slot = if a.is_mci { 0 } else { 1 };
            groups[slot].2.push(to_survival(a, study_end)?);
        }
        let mut summaries = Vec::new();
        let mut series_data: Vec<(&str, KmCurve)> = Vec::new();
        for (name, file, obs) in &groups {
            if obs.is_empty() {
                log::warn!("no patients in the {name} group; curve skipped");
                summaries.push(KmGroupSummary {
                    name,
                    file: None,
                    n: 0,
                    n_events: 0,
                    median_months: None,
                    milestones: Vec::new(),
                });
                continue;
            }
            let curve = greenwood_band(&km_fit(obs)?, km.level, km.band)?;
            self.out.write_csv(file, |w| curve.write_csv(w))?;
            summaries.push(KmGroupSummary {
                name,
                file: Some(file.to_string()),
                n: curve.n,
                n_events: curve.n_events,
                median_months: curve.median(),
                milestones: km.milestones.iter().map(|&t| curve.at(t)).collect(),
            });
            series_data.push((name, curve));
        }
        let logrank = match logrank_test(&groups[0].2, &groups[1].2) {
            Ok(r) => serde_json::to_value(r).expect("serializes"),
            Err(e @ (Error::NotTestable(_) | Error::EmptyInput(_))) => {
                log::warn!("log-rank test skipped: {e}");
                json!({ "status": "not_testable", "reason": e.to_string() })
            }
            Err(e) => return Err(e),
        };
        self.out.write_json("logrank.json", &logrank)?;
        let series: Vec<StepSeries> = series_data
            .iter()
            .map(|(name, curve)| {
                let mut points = vec![(0.0, 1.0, 1.0, 1.0)];
                for r in &curve.rows {
                    points.push((r.time, r.survival, r.ci_lo.unwrap_or(r.survival), r.ci_hi.unwrap_or(r.survival)));
                }
                let max_t = groups
                    .iter()
                    .flat_map(|g| g.2.iter().map(|o| o.duration))
                    .fold(0.0, f64::max);
                let last = *points.last().expect("non-empty");
                points.push((max_t, last.1, last.2, last.3));
                StepSeries {
                    label: name,
                    points,
                }
            })
            .collect();
        let svg = km_svg(&series, "Time to delirium onset", "Months since index admission");
        self.out.write_svg("km.svg", &svg)?;
        self.out.write_json(
            "km.json",
            &json!({
                "study_end": study_end,
                "band": km.band,
                "level": km.level,
                "delirium_only": km.delirium_only,
                "groups": summaries,
                "logrank": logrank,
            }),
        )?;
        match logrank.get("p_value") {
            Some(p) => println!("km: log-rank statistic {}, p = {}", logrank["statistic"], p),
            None => println!("km: log-rank not testable"),
        }
        Ok(())
    }

    fn features(&mut self) -> Result<()> {
        let (dataset, assignments) = self.cohort_data()?;
        let config = SequenceConfig {
            max_seq_len: self.cfg.features.max_seq_len,
        };
        let (sequences, dropped) = build_sequences(&dataset, &assignments, &self.charlson()?, config)?;
        self.out.write_csv(SEQUENCES_FILE, |w| write_sequences(&sequences, w))?;
        self.out.write_csv("dropped_sequences.csv", |w| {
            writeln!(w, "subject_id,reason")?;
            for d in &dropped {
                writeln!(w, "{},{}", d.subject_id, d.reason)?;
            }
            Ok(())
        })?;
        let positives = sequences.iter().filter(|s| s.label).count();
        self.out.write_json(
            "features.json",
            &json!({
                "sequences": sequences.len(),
                "positive": positives,
                "dropped": dropped.len(),
                "max_seq_len": config.max_seq_len,
            }),
        )?;
        println!(
            "features: {} sequences ({} positive), {} dropped",
            sequences.len(),
            positives,
            dropped.len()
        );
        Ok(())
    }

    fn read_samples(&self, explicit: Option<&Path>) -> Result<Vec<FlatSample>> {
        let path = explicit.map_or_else(|| self.out.path(SEQUENCES_FILE), Path::to_path_buf);
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let sequences = read_sequences(BufReader::new(file), &path)?;
        if sequences.is_empty() {
            return Err(Error::input(&path, "no sequences"));
        }
        let len = self.cfg.features.max_seq_len;
        sequences
            .iter()
            .map(|s| flatten(&s.repadded(len), len))
            .collect()
    }

    fn train(&mut self, features: Option<&Path>) -> Result<()> {
        let samples = self.read_samples(features)?;
        let cv = self.cfg.cv_config();
        let fitted = fit_pipeline(&samples, &cv, derive_seed(self.cfg.seed, 7))?;
        let prov = vec![self.out.provenance.line()];
        self.out
            .write_with("model.ckpt", |w| fitted.model.write_checkpoint(w, &prov))?;
        self.out.write_json("train_history.json", &fitted.history)?;
        println!(
            "train: {} samples after resampling, best epoch {} of {}",
            fitted.n_resampled,
            fitted.history.selected_epoch + 1,
            fitted.history.train_loss.len()
        );
        Ok(())
    }

    fn evaluate(&mut self, features: Option<&Path>) -> Result<()> {
        let samples = self.read_samples(features)?;
        let sequences: Vec<_> = samples
            .iter()
            .map(crate::features::unflatten)
            .collect::<Result<_>>()?;
        let outcome = kfold_cv(&sequences, &self.cfg.cv_config(), self.threads)?;
        let scores: Vec<f64> = outcome.predictions.iter().map(|p| p.score).collect();
        let labels: Vec<bool> = outcome.predictions.iter().map(|p| p.label).collect();
        let roc = roc_points(&scores, &labels)?;
        let pr = pr_points(&scores, &labels)?;
        let r = &outcome.report;
        self.out.write_json(METRICS_FILE, r)?;
        self.out.write_csv("roc_points.csv", |w| {
            writeln!(w, "fpr,tpr,threshold")?;
            for p in &roc {
                writeln!(w, "{},{},{}", p.fpr, p.tpr, p.threshold)?;
            }
            Ok(())
        })?;
        self.out.write_csv("pr_points.csv", |w| {
            writeln!(w, "recall,precision,threshold")?;
            for p in &pr {
                writeln!(w, "{},{},{}", p.recall, p.precision, p.threshold)?;
            }
            Ok(())
        })?;
        self.out.write_csv("oof_predictions.csv", |w| {
            writeln!(w, "subject_id,fold,label,score")?;
            for p in &outcome.predictions {
                writeln!(w, "{},{},{},{}", p.subject_id, p.fold, u8::from(p.label), p.score)?;
            }
            Ok(())
        })?;
        self.out.write_json("leakage_audit.json", &json!({ "folds": outcome.audit }))?;
        self.out.write_json("cv_history.json", &json!({ "folds": outcome.histories }))?;
        let curve: Vec<(f64, f64)> = roc.iter().map(|p| (p.fpr, p.tpr)).collect();
        self.out
            .write_svg("roc.svg", &roc_svg(&curve, r.auroc, "Out-of-fold ROC"))?;
        println!(
            "evaluate: AUROC {:.3} (95% CI {:.3}-{:.3}), AUPRC {:.3} (95% CI {:.3}-{:.3}), Brier {:.3}",
            r.auroc, r.auroc_ci.lo, r.auroc_ci.hi, r.auprc, r.auprc_ci.lo, r.auprc_ci.hi, r.brier
        );
        Ok(())
    }

    fn report(&mut self) -> Result<()> {
        if !self.out.exists("cohort_flow.json") || !self.out.exists("demographics.json") {
            self.cohort()?;
        }
        if !self.out.exists("comorbidity_stats.json") {
            self.comorbidity_stats()?;
        }
        if !self.out.exists("km.json") {
            self.km()?;
        }
        if !self.out.exists(METRICS_FILE) {
            if !self.out.exists(SEQUENCES_FILE) {
                self.features()?;
            }
            self.evaluate(None)?;
        }
        let mut summary = serde_json::Map::new();
        for (key, file) in [
            ("cohort_flow", "cohort_flow.json"),
            ("demographics", "demographics.json"),
            ("comorbidity", "comorbidity_stats.json"),
            ("survival", "km.json"),
            ("metrics", METRICS_FILE),
        ] {
            summary.insert(key.into(), read_json(&self.out.path(file))?);
        }
        let summary = Value::Object(summary);
        let markdown = render_report(&summary);
        self.out.write_json("summary.json", &summary)?;
        self.out.write_with("report.md", |w| w.write_all(markdown.as_bytes()))?;
        println!("report: {}", self.out.path("report.md").display());
        Ok(())
    }
}

// ── Report rendering ────────────────────────────────────────────────────────

fn num(v: &Value, digits: usize) -> String {
    v.as_f64().map_or_else(|| "n/a".into(), |x| format!("{x:.digits$}"))
}

fn render_report(s: &Value) -> String {
    let mut out = String::new();
    let mut line = |text: String| {
        out.push_str(&text);
        out.push('\n');
    };
    line("# Delirium risk report".into());
    line(String::new());
    if let Some(p) = s["metrics"]["provenance"].as_object() {
        line(format!(
            "Generated by {} {} (seed {}, config sha256:{}).",
            p["tool"].as_str().unwrap_or("?"),
            p["version"].as_str().unwrap_or("?"),
            p["master_seed"],
            p["config_hash"].as_str().unwrap_or("?")
        ));
        line(String::new());
    }

    let f = &s["cohort_flow"];
    line("## Cohort selection".into());
    line(String::new());
    line(format!("- Patients screened: {}", f["total"]));
    line(format!("- Excluded (cognitive impairment codes, age, no admissions): {}", f["excluded"]));
    line(format!("- No MCI: {} ({} with delirium)", f["non_mci"]["n"], f["non_mci"]["delirium"]));
    line(format!("- MCI: {} ({} with delirium)", f["mci"]["n"], f["mci"]["delirium"]));
    line(String::new());

    line("## Demographics".into());
    line(String::new());
    match s["demographics"]["rows"].as_array() {
        Some(rows) => {
            line("| Group | n (%) | Male (%) | Female (%) | Age, median (IQR) |".into());
            line("|---|---|---|---|---|".into());
            for r in rows {
                line(format!(
                    "| {} | {} ({}%) | {} ({}%) | {} ({}%) | {} ({}-{}) |",
                    r["group"].as_str().unwrap_or("?"),
                    r["n"],
                    num(&r["pct"], 2),
                    r["male"],
                    num(&r["male_pct"], 2),
                    r["female"],
                    num(&r["female_pct"], 2),
                    num(&r["median_age"], 0),
                    num(&r["age_q1"], 0),
                    num(&r["age_q3"], 0)
                ));
            }
        }
        None => line("Cohort is empty.".into()),
    }
    line(String::new());

    line("## Comorbidity prevalence".into());
    for c in s["comorbidity"]["contrasts"].as_array().into_iter().flatten() {
        let (g1, g2) = (c["group1"].as_str().unwrap_or("?"), c["group2"].as_str().unwrap_or("?"));
        line(String::new());
        line(format!("### {g1} vs {g2}"));
        line(String::new());
        if c["status"] != "ok" {
            line(format!("Skipped: {}", c["reason"].as_str().unwrap_or("?")));
            continue;
        }
        line(format!("| Condition | {g1} | {g2} | p-value |"));
        line("|---|---|---|---|".into());
        for r in c["table"]["rows"].as_array().into_iter().flatten() {
            let est = |g: &Value| format!("{} ({}-{})", num(&g["p_hat"], 3), num(&g["ci_lo"], 3), num(&g["ci_hi"], 3));
            let p = r["test"]["p_value"].as_f64();
            let p_text = match p {
                Some(p) if p < 0.05 => format!("**{p:.3}**"),
                Some(p) => format!("{p:.3}"),
                None => "n/a".into(),
            };
            line(format!("| {} | {} | {} | {} |", r["condition"].as_str().unwrap_or("?"), est(&r["group1"]), est(&r["group2"]), p_text));
        }
    }
    line(String::new());

    let km = &s["survival"];
    line("## Time to delirium".into());
    line(String::new());
    line(format!(
        "Kaplan-Meier estimates with {} {} bands; study end {}.",
        num(&km["level"], 2),
        km["band"].as_str().unwrap_or("?"),
        km["study_end"].as_str().unwrap_or("?")
    ));
    line(String::new());
    for g in km["groups"].as_array().into_iter().flatten() {
        let name = g["name"].as_str().unwrap_or("?");
        line(format!("- {name}: n = {}, events = {}", g["n"], g["n_events"]));
        for m in g["milestones"].as_array().into_iter().flatten() {
            let pct = |v: &Value| v.as_f64().map_or("n/a".into(), |x| format!("{:.2}%", 100.0 * x));
            line(format!(
                "  - {} months: {} (95% CI {}-{})",
                num(&m["time"], 0),
                pct(&m["survival"]),
                pct(&m["ci_lo"]),
                pct(&m["ci_hi"])
            ));
        }
    }
    match km["logrank"]["p_value"].as_f64() {
        Some(p) => line(format!("- Log-rank: statistic {}, p = {p:.4}", num(&km["logrank"]["statistic"], 3))),
        None => line("- Log-rank: not testable".into()),
    }
    line(String::new());

    let m = &s["metrics"];
    line("## Prediction".into());
    line(String::new());
    line(format!(
        "Pooled out-of-fold results over {} sequences ({} positive), {} folds:",
        m["n_samples"],
        m["n_positive"],
        m["folds"].as_array().map_or(0, Vec::len)
    ));
    line(String::new());
    line(format!(
        "- AUROC {} (95% CI: {}-{})",
        num(&m["auroc"], 2),
        num(&m["auroc_ci"]["lo"], 2),
        num(&m["auroc_ci"]["hi"], 2)
    ));
    line(format!(
        "- AUPRC {} (95% CI: {}-{})",
        num(&m["auprc"], 2),
        num(&m["auprc_ci"]["lo"], 2),
        num(&m["auprc_ci"]["hi"], 2)
    ));
    line(format!("- Brier score {}", num(&m["brier"], 3)));
    line(format!(
        "- Per-fold AUROC {} ± {}",
        num(&m["fold_auroc"]["mean"], 3),
        num(&m["fold_auroc"]["sd"], 3)
    ));
    line(format!("- Leakage audit passed: {}", m["leakage_audit_passed"]));
    out
}
