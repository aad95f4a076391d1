//! Versioned text checkpoint: training configuration, the meta-learned head
//! and the task memory bank. Floats are written in shortest round-trip
//! scientific notation, so loading is bit-exact.

use std::fmt::Write as _;

use metatrack_core::episodes::TaskConfig;
use metatrack_core::maml::{MamlConfig, MetaMode, TaskMemoryEntry};
use metatrack_core::model::{FeatureVector, HeadParams};
use thiserror::Error;

pub const MAGIC: &str = "metatrack-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckpointError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub maml: MamlConfig,
    pub tasks: TaskConfig,
    pub head: HeadParams,
    pub memory: Vec<TaskMemoryEntry>,
}

fn mode_name(mode: MetaMode) -> &'static str {
    match mode {
        MetaMode::Exact => "exact",
        MetaMode::FirstOrder => "fomaml",
    }
}

fn push_values(out: &mut String, key: &str, values: &[f64]) {
    out.push_str(key);
    for v in values {
        let _ = write!(out, " {v:e}");
    }
    out.push('\n');
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let m = &self.maml;
        let mut out = format!("{MAGIC} {VERSION}\n");
        let _ = writeln!(out, "inner_lr {:e}", m.inner_lr);
        let _ = writeln!(out, "outer_lr {:e}", m.outer_lr);
        let _ = writeln!(out, "inner_steps {}", m.inner_steps);
        let _ = writeln!(out, "epochs {}", m.epochs);
        let _ = writeln!(out, "batch_size {}", m.batch_size);
        let _ = writeln!(out, "mode {}", mode_name(m.mode));
        let _ = writeln!(out, "seed {}", m.seed);
        let _ = writeln!(out, "init_scale {:e}", m.init_scale);
        let _ = writeln!(out, "k {}", self.tasks.k);
        let _ = writeln!(out, "q {}", self.tasks.q);
        let _ = writeln!(out, "identities_per_task {}", self.tasks.identities_per_task);
        let _ = writeln!(out, "head {} {}", self.head.classes(), self.head.dim());
        push_values(&mut out, "weights", self.head.weights());
        push_values(&mut out, "bias", self.head.bias());
        let _ = writeln!(out, "memory {}", self.memory.len());
        for e in &self.memory {
            let _ = writeln!(out, "task {} {} {:e}", e.task_id, e.support_features.len(), e.query_loss);
            push_values(&mut out, "centroid", e.support_centroid.as_slice());
            push_values(&mut out, "weights", e.adapted.weights());
            push_values(&mut out, "bias", e.adapted.bias());
            for f in &e.support_features {
                push_values(&mut out, "support", f.as_slice());
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self, CheckpointError> {
        let mut r = Reader { lines: text.lines().enumerate(), line: 0 };
        let version: u32 = r.scalar(MAGIC)?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let maml = MamlConfig {
            inner_lr: r.scalar("inner_lr")?,
            outer_lr: r.scalar("outer_lr")?,
            inner_steps: r.scalar("inner_steps")?,
            epochs: r.scalar("epochs")?,
            batch_size: r.scalar("batch_size")?,
            mode: match r.scalar::<String>("mode")?.as_str() {
                "exact" => MetaMode::Exact,
                "fomaml" => MetaMode::FirstOrder,
                other => return Err(r.error(format!("unknown mode {other:?}"))),
            },
            seed: r.scalar("seed")?,
            init_scale: r.scalar("init_scale")?,
        };
        let tasks = TaskConfig { k: r.scalar("k")?, q: r.scalar("q")?, identities_per_task: r.scalar("identities_per_task")? };
        let shape = r.values::<usize>("head")?;
        let [classes, dim] = shape[..] else {
            return Err(r.error("expected `head classes dim`"));
        };
        let head = r.head(classes, dim)?;
        let n: usize = r.scalar("memory")?;
        let mut memory = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let fields = r.values::<String>("task")?;
            let [id, k, loss] = &fields[..] else {
                return Err(r.error("expected `task id k query_loss`"));
            };
            let task_id: u64 = r.parse_one(id)?;
            let k: usize = r.parse_one(k)?;
            let query_loss: f64 = r.parse_one(loss)?;
            let support_centroid = r.feature("centroid", dim)?;
            let adapted = r.head(classes, dim)?;
            let support_features = (0..k).map(|_| r.feature("support", dim)).collect::<Result<Vec<_>, _>>()?;
            memory.push(TaskMemoryEntry { task_id, support_centroid, adapted, support_features, query_loss });
        }
        r.values::<String>("end")?;
        Ok(Self { maml, tasks, head, memory })
    }
}

struct Reader<'a, I: Iterator<Item = (usize, &'a str)>> {
    lines: I,
    line: usize,
}

impl<'a, I: Iterator<Item = (usize, &'a str)>> Reader<'a, I> {
    fn error(&self, message: impl Into<String>) -> CheckpointError {
        CheckpointError::Malformed { line: self.line, message: message.into() }
    }

    fn parse_one<T: std::str::FromStr>(&self, s: &str) -> Result<T, CheckpointError> {
        s.parse().map_err(|_| self.error(format!("cannot parse {s:?}")))
    }

    fn values<T: std::str::FromStr>(&mut self, key: &str) -> Result<Vec<T>, CheckpointError> {
        let (i, l) = self.lines.next().ok_or_else(|| self.error(format!("unexpected end, expected `{key}`")))?;
        self.line = i + 1;
        let mut parts = l.split_ascii_whitespace();
        if parts.next() != Some(key) {
            return Err(self.error(format!("expected `{key}`")));
        }
        parts.map(|p| self.parse_one(p)).collect()
    }

    fn scalar<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, CheckpointError> {
        let mut v = self.values::<T>(key)?;
        if v.len() != 1 {
            return Err(self.error(format!("`{key}` takes one value")));
        }
        Ok(v.remove(0))
    }

    fn head(&mut self, classes: usize, dim: usize) -> Result<HeadParams, CheckpointError> {
        let weights = self.values("weights")?;
        let bias = self.values("bias")?;
        HeadParams::new(classes, dim, weights, bias).map_err(|e| self.error(e.to_string()))
    }

    fn feature(&mut self, key: &str, dim: usize) -> Result<FeatureVector, CheckpointError> {
        let v: Vec<f64> = self.values(key)?;
        if v.len() != dim {
            return Err(self.error(format!("`{key}` has {} values, expected {dim}", v.len())));
        }
        FeatureVector::new(v).map_err(|e| self.error(e.to_string()))
    }
}
