//! Command-line front end. Every command resolves its flags and config file
//! into a [`Job`], runs it, and writes a [`RunManifest`] next to its
//! outputs. `replay` turns a manifest back into the same job.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use metatrack_core::synth::generate;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use crate::checkpoint::Checkpoint;
use crate::config::{self, EvalSettings, ModeName, SynthSettings, TrackSettings, TrainSettings};
use crate::error::{read_file, write_file, CliError, ErrorKind};
use crate::formats::parse_features;
use crate::manifest::{manifest_path_for, RunManifest, TOOLKIT_VERSION};
use crate::pipeline::{self, EvalInput};
use crate::report;

#[derive(Debug, Parser)]
#[command(name = "metatrack", version, about = "Meta-learned Re-ID head training, tracking and MOT evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic sequence: gt.txt, det.txt and features.txt.
    Synth(SynthArgs),
    /// Meta-train the head on ground truth and write a checkpoint.
    Train(TrainArgs),
    /// Track detections with a checkpoint and write MOT results.
    Track(TrackArgs),
    /// Score results against ground truth.
    Eval(EvalArgs),
    /// Rerun the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Settings file; `preset = "random" | "crossing"` picks the base.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Manifest location (default: <out>/manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory holding gt.txt and features.txt; repeat for more sequences.
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch log (default: <out>.log.csv).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub inner_lr: Option<f64>,
    #[arg(long)]
    pub outer_lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeName>,
    /// Support samples per identity.
    #[arg(long)]
    pub k: Option<usize>,
    /// Query samples per identity.
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// MOT detection file.
    #[arg(long)]
    pub det: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Results file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Sequence name in the features file, if it holds several.
    #[arg(long)]
    pub sequence: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Track with the meta-learned head only: no memory-based
    /// initialization and no online updates.
    #[arg(long)]
    pub no_adapt: bool,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth file; repeat together with --results for more sequences.
    #[arg(long, required = true)]
    pub gt: Vec<PathBuf>,
    #[arg(long, required = true)]
    pub results: Vec<PathBuf>,
    /// Report file to write (the table is also printed).
    #[arg(long)]
    pub out: PathBuf,
    /// Sequence names (default: the ground truth's directory name).
    #[arg(long)]
    pub name: Vec<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub iou_thr: Option<f64>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Write outputs here instead of their recorded locations.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// A fully resolved command.
#[derive(Debug, Clone, PartialEq)]
pub enum Job {
    Synth {
        settings: SynthSettings,
        out_dir: PathBuf,
    },
    Train {
        settings: TrainSettings,
        data: Vec<PathBuf>,
        checkpoint: PathBuf,
        log: PathBuf,
    },
    Track {
        settings: TrackSettings,
        det: PathBuf,
        features: PathBuf,
        checkpoint: PathBuf,
        sequence: Option<String>,
        out: PathBuf,
    },
    Eval {
        settings: EvalSettings,
        gt: Vec<PathBuf>,
        results: Vec<PathBuf>,
        names: Vec<String>,
        out: PathBuf,
    },
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn default_name(gt: &Path, i: usize) -> String {
    gt.parent().and_then(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| format!("seq{}", i + 1))
}

impl Job {
    pub fn from_command(command: &Command) -> Result<(Self, Option<PathBuf>), CliError> {
        Ok(match command {
            Command::Synth(a) => {
                let mut settings = config::load_synth(&a.config)?;
                set(&mut settings.seed, a.seed);
                (Job::Synth { settings, out_dir: a.out.clone() }, a.manifest.clone())
            }
            Command::Train(a) => {
                let mut s: TrainSettings = config::load(a.config.as_deref())?;
                set(&mut s.seed, a.seed);
                set(&mut s.inner_lr, a.inner_lr);
                set(&mut s.outer_lr, a.outer_lr);
                set(&mut s.epochs, a.epochs);
                set(&mut s.batch_size, a.batch_size);
                set(&mut s.mode, a.mode);
                set(&mut s.k, a.k);
                set(&mut s.q, a.q);
                let log = a.log.clone().unwrap_or_else(|| {
                    let mut name = a.out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
                    name.push(".log.csv");
                    a.out.with_file_name(name)
                });
                (Job::Train { settings: s, data: a.data.clone(), checkpoint: a.out.clone(), log }, a.manifest.clone())
            }
            Command::Track(a) => {
                let mut settings: TrackSettings = config::load(a.config.as_deref())?;
                if a.no_adapt {
                    settings.adapt = false;
                }
                (
                    Job::Track {
                        settings,
                        det: a.det.clone(),
                        features: a.features.clone(),
                        checkpoint: a.checkpoint.clone(),
                        sequence: a.sequence.clone(),
                        out: a.out.clone(),
                    },
                    a.manifest.clone(),
                )
            }
            Command::Eval(a) => {
                let mut settings: EvalSettings = config::load(a.config.as_deref())?;
                set(&mut settings.iou_threshold, a.iou_thr);
                if a.gt.len() != a.results.len() {
                    return Err(CliError::config(format!(
                        "{} ground-truth files but {} results files",
                        a.gt.len(),
                        a.results.len()
                    )));
                }
                let names = if a.name.is_empty() {
                    a.gt.iter().enumerate().map(|(i, g)| default_name(g, i)).collect()
                } else if a.name.len() == a.gt.len() {
                    a.name.clone()
                } else {
                    return Err(CliError::config("give one --name per --gt or none"));
                };
                (
                    Job::Eval { settings, gt: a.gt.clone(), results: a.results.clone(), names, out: a.out.clone() },
                    a.manifest.clone(),
                )
            }
            Command::Replay(a) => {
                let manifest = RunManifest::read(&a.manifest)?;
                (Job::from_manifest(&manifest, a.out_dir.as_deref())?, None)
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Job::Synth { .. } => "synth",
            Job::Train { .. } => "train",
            Job::Track { .. } => "track",
            Job::Eval { .. } => "eval",
        }
    }

    /// Output files keyed by role.
    pub fn outputs(&self) -> BTreeMap<String, PathBuf> {
        let mut out = BTreeMap::new();
        match self {
            Job::Synth { out_dir, .. } => {
                for f in ["gt", "det", "features"] {
                    out.insert(f.to_string(), out_dir.join(format!("{f}.txt")));
                }
            }
            Job::Train { checkpoint, log, .. } => {
                out.insert("checkpoint".into(), checkpoint.clone());
                out.insert("log".into(), log.clone());
            }
            Job::Track { out: o, .. } => {
                out.insert("results".into(), o.clone());
            }
            Job::Eval { out: o, .. } => {
                out.insert("report".into(), o.clone());
            }
        }
        out
    }

    pub fn default_manifest_path(&self) -> PathBuf {
        match self {
            Job::Synth { out_dir, .. } => out_dir.join("manifest.json"),
            Job::Train { checkpoint, .. } => manifest_path_for(checkpoint),
            Job::Track { out, .. } | Job::Eval { out, .. } => manifest_path_for(out),
        }
    }

    fn config_value(&self) -> Value {
        let v = match self {
            Job::Synth { settings, .. } => serde_json::to_value(settings),
            Job::Train { settings, .. } => serde_json::to_value(settings),
            Job::Track { settings, .. } => serde_json::to_value(settings),
            Job::Eval { settings, .. } => serde_json::to_value(settings),
        };
        v.expect("settings serialize to JSON")
    }

    fn inputs(&self) -> BTreeMap<String, Value> {
        let mut m = BTreeMap::new();
        match self {
            Job::Synth { .. } => {}
            Job::Train { data, .. } => {
                m.insert("data".into(), json!(data));
            }
            Job::Track { det, features, checkpoint, sequence, .. } => {
                m.insert("det".into(), json!(det));
                m.insert("features".into(), json!(features));
                m.insert("checkpoint".into(), json!(checkpoint));
                m.insert("sequence".into(), json!(sequence));
            }
            Job::Eval { gt, results, names, .. } => {
                m.insert("gt".into(), json!(gt));
                m.insert("results".into(), json!(results));
                m.insert("names".into(), json!(names));
            }
        }
        m
    }

    fn seed(&self) -> Option<u64> {
        match self {
            Job::Synth { settings, .. } => Some(settings.seed),
            Job::Train { settings, .. } => Some(settings.seed),
            _ => None,
        }
    }

    pub fn manifest(&self, wall_time_secs: f64) -> RunManifest {
        RunManifest {
            command: self.name().to_string(),
            version: TOOLKIT_VERSION.to_string(),
            seed: self.seed(),
            config: self.config_value(),
            inputs: self.inputs(),
            outputs: self.outputs(),
            wall_time_secs,
        }
    }

    /// Rebuild the job a manifest records. With `out_dir`, every output is
    /// redirected there under its recorded file name.
    pub fn from_manifest(m: &RunManifest, out_dir: Option<&Path>) -> Result<Self, CliError> {
        fn field<T: DeserializeOwned>(m: &RunManifest, key: &str) -> Result<T, CliError> {
            let v = m.inputs.get(key).cloned().unwrap_or(Value::Null);
            serde_json::from_value(v).map_err(|e| CliError::config(format!("manifest input {key:?}: {e}")))
        }
        fn settings<T: DeserializeOwned>(m: &RunManifest) -> Result<T, CliError> {
            serde_json::from_value(m.config.clone()).map_err(|e| CliError::config(format!("manifest config: {e}")))
        }
        let output = |key: &str| -> Result<PathBuf, CliError> {
            let p = m.outputs.get(key).ok_or_else(|| CliError::config(format!("manifest has no {key:?} output")))?;
            Ok(match (out_dir, p.file_name()) {
                (Some(d), Some(name)) => d.join(name),
                _ => p.clone(),
            })
        };
        if m.version != TOOLKIT_VERSION {
            eprintln!("warning: manifest written by version {}, replaying with {TOOLKIT_VERSION}", m.version);
        }
        Ok(match m.command.as_str() {
            "synth" => {
                let gt = output("gt")?;
                Job::Synth { settings: settings(m)?, out_dir: gt.parent().map(Path::to_path_buf).unwrap_or_default() }
            }
            "train" => Job::Train {
                settings: settings(m)?,
                data: field(m, "data")?,
                checkpoint: output("checkpoint")?,
                log: output("log")?,
            },
            "track" => Job::Track {
                settings: settings(m)?,
                det: field(m, "det")?,
                features: field(m, "features")?,
                checkpoint: field(m, "checkpoint")?,
                sequence: field(m, "sequence")?,
                out: output("results")?,
            },
            "eval" => Job::Eval {
                settings: settings(m)?,
                gt: field(m, "gt")?,
                results: field(m, "results")?,
                names: field(m, "names")?,
                out: output("report")?,
            },
            other => return Err(CliError::config(format!("manifest records unknown command {other:?}"))),
        })
    }

    /// Run the job and return a short human-readable summary.
    pub fn run(&self) -> Result<String, CliError> {
        match self {
            Job::Synth { settings, out_dir } => {
                let seq = generate(&settings.to_config()).map_err(CliError::config)?;
                let files = pipeline::synth_files(&seq)?;
                write_file(&out_dir.join("gt.txt"), &files.gt)?;
                write_file(&out_dir.join("det.txt"), &files.det)?;
                write_file(&out_dir.join("features.txt"), &files.features)?;
                Ok(format!("{}: {} ground-truth rows, {} detections", seq.name, seq.gt.len(), seq.detections.len()))
            }
            Job::Train { settings, data, checkpoint, log } => {
                let mut samples = Vec::new();
                let mut seen = std::collections::BTreeSet::new();
                for dir in data {
                    let gt = read_file(&dir.join("gt.txt"), ErrorKind::Data)?;
                    let features = read_file(&dir.join("features.txt"), ErrorKind::Data)?;
                    let s = pipeline::training_samples(&gt, &features, &dir.display().to_string())?;
                    if let Some(first) = s.first() {
                        if !seen.insert(first.sequence.clone()) {
                            return Err(CliError::data(format!(
                                "sequence {:?} appears in more than one data directory",
                                first.sequence
                            )));
                        }
                    }
                    samples.extend(s);
                }
                let start = Instant::now();
                let clock = move || start.elapsed().as_secs_f64();
                let (ckpt, train_log) = pipeline::train(&samples, settings, &clock)?;
                write_file(checkpoint, &ckpt.to_text())?;
                write_file(log, &pipeline::render_train_log(&train_log))?;
                Ok(format!(
                    "trained {} epochs on {} samples, {} memory entries",
                    train_log.epochs.len(),
                    samples.len(),
                    ckpt.memory.len()
                ))
            }
            Job::Track { settings, det, features, checkpoint, sequence, out } => {
                let ckpt_text = read_file(checkpoint, ErrorKind::Model)?;
                let ckpt =
                    Checkpoint::parse(&ckpt_text).map_err(|e| CliError::model(format!("{}: {e}", checkpoint.display())))?;
                let table = parse_features(&read_file(features, ErrorKind::Data)?)
                    .map_err(|e| CliError::data(format!("{}: {e}", features.display())))?;
                let seq = pipeline::pick_sequence(&table, sequence.as_deref())?;
                let frames = pipeline::detections(&read_file(det, ErrorKind::Data)?, &table, &seq)?;
                let rows = pipeline::track(&frames, &ckpt, settings)?;
                write_file(out, &crate::formats::write_results(&rows))?;
                let ids: std::collections::BTreeSet<u32> = rows.iter().map(|r| r.id).collect();
                Ok(format!("{seq}: {} result rows, {} tracks", rows.len(), ids.len()))
            }
            Job::Eval { settings, gt, results, names, out } => {
                let mut inputs = Vec::with_capacity(gt.len());
                for ((g, r), name) in gt.iter().zip(results).zip(names) {
                    inputs.push(EvalInput {
                        name: name.clone(),
                        gt: read_file(g, ErrorKind::Eval)?,
                        results: read_file(r, ErrorKind::Eval)?,
                    });
                }
                let (report, warnings) = pipeline::evaluate(&inputs, settings.iou_threshold)?;
                for w in &warnings {
                    eprintln!("warning: {w}");
                }
                let text = report::render(&report);
                write_file(out, &text)?;
                Ok(report::render_table(&report))
            }
        }
    }
}

/// Parse-free entry point: resolve, run, write the manifest.
pub fn execute(command: &Command) -> Result<String, CliError> {
    let (job, manifest_path) = Job::from_command(command)?;
    let start = Instant::now();
    let summary = job.run()?;
    let manifest = job.manifest(start.elapsed().as_secs_f64());
    manifest.write(&manifest_path.unwrap_or_else(|| job.default_manifest_path()))?;
    Ok(summary)
}
