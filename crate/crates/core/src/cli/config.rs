//! Flat `key=value` run configuration with override precedence.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// Everything a command needs: model shape, training hyperparameters and
/// the paths it reads and writes.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Text files, one corpus cache file, or `synthetic`.
    pub corpus: Vec<PathBuf>,
    pub val_fraction: f64,
    pub data_seed: u64,
    /// Size of the generated corpus when `corpus` is `synthetic`.
    pub synthetic_bytes: usize,
    pub out: PathBuf,
    /// Bundled schedule name, schedule file, or `none`.
    pub schedule: Option<String>,
    pub scale: f64,
    pub stats: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            corpus: Vec::new(),
            val_fraction: 0.05,
            data_seed: 0,
            synthetic_bytes: 2_500_000,
            out: PathBuf::from("run"),
            schedule: None,
            scale: 1.0,
            stats: None,
            checkpoint: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean `{v}` for `{key}`"))),
    }
}

/// Every recognized key, in documentation order.
pub const KEYS: &[&str] = &[
    "n_layers",
    "n_heads",
    "d_model",
    "d_ff",
    "vocab_size",
    "context_length",
    "tie_embeddings",
    "micro_batch_size",
    "grad_accum",
    "seq_len",
    "total_steps",
    "lr_schedule",
    "base_lr",
    "min_lr",
    "warmup_steps",
    "decay_end_step",
    "beta1",
    "beta2",
    "eps",
    "weight_decay",
    "grad_clip",
    "eval_every",
    "eval_tokens",
    "seed",
    "divergence_threshold",
    "divergence_patience",
    "recollect_sigma",
    "sigma_prompts",
    "save_step_checkpoints",
    "corpus",
    "val_fraction",
    "data_seed",
    "synthetic_bytes",
    "out",
    "schedule",
    "scale",
    "stats",
    "checkpoint",
];

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let m = &mut self.model;
        let t = &mut self.train;
        match key.trim() {
            "n_layers" => m.n_layers = parse(key, v)?,
            "n_heads" => m.n_heads = parse(key, v)?,
            "d_model" => m.d_model = parse(key, v)?,
            "d_ff" => m.d_ff = parse(key, v)?,
            "vocab_size" => m.vocab_size = parse(key, v)?,
            "context_length" => m.context_length = parse(key, v)?,
            "tie_embeddings" => m.tie_embeddings = parse_bool(key, v)?,
            "micro_batch_size" => t.micro_batch_size = parse(key, v)?,
            "grad_accum" => t.grad_accum = parse(key, v)?,
            "seq_len" => t.seq_len = parse(key, v)?,
            "total_steps" => t.total_steps = parse(key, v)?,
            "lr_schedule" => t.lr.kind = v.parse()?,
            "base_lr" => t.lr.base_lr = parse(key, v)?,
            "min_lr" => t.lr.min_lr = parse(key, v)?,
            "warmup_steps" => t.lr.warmup_steps = parse(key, v)?,
            "decay_end_step" => t.lr.decay_end_step = parse(key, v)?,
            "beta1" => t.optimizer.beta1 = parse(key, v)?,
            "beta2" => t.optimizer.beta2 = parse(key, v)?,
            "eps" => t.optimizer.eps = parse(key, v)?,
            "weight_decay" => t.optimizer.weight_decay = parse(key, v)?,
            "grad_clip" => t.optimizer.grad_clip = parse(key, v)?,
            "eval_every" => t.eval_every = parse(key, v)?,
            "eval_tokens" => t.eval_tokens = parse(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "divergence_threshold" => t.divergence_threshold = parse(key, v)?,
            "divergence_patience" => t.divergence_patience = parse(key, v)?,
            "recollect_sigma" => t.recollect_sigma = parse_bool(key, v)?,
            "sigma_prompts" => t.sigma_prompts = parse(key, v)?,
            "save_step_checkpoints" => t.save_step_checkpoints = parse_bool(key, v)?,
            "corpus" => {
                self.corpus = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(PathBuf::from)
                    .collect()
            }
            "val_fraction" => self.val_fraction = parse(key, v)?,
            "data_seed" => self.data_seed = parse(key, v)?,
            "synthetic_bytes" => self.synthetic_bytes = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "schedule" => self.schedule = Some(v.to_string()),
            "scale" => self.scale = parse(key, v)?,
            "stats" => self.stats = Some(PathBuf::from(v)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// Applies one `KEY=VALUE` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` is not KEY=VALUE")))?;
        self.set(k, v)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!("val_fraction {} outside (0, 1)", self.val_fraction)));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("scale {} must be positive", self.scale)));
        }
        Ok(())
    }

    /// The configuration as `key=value` text that [`apply_text`](Self::apply_text) reads back.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let kind = match t.lr.kind {
            crate::schedule::LrKind::Constant => "constant",
            crate::schedule::LrKind::WarmupCosine => "warmup_cosine",
        };
        let corpus: Vec<String> = self.corpus.iter().map(|p| p.display().to_string()).collect();
        let mut lines = vec![
            format!("n_layers={}", m.n_layers),
            format!("n_heads={}", m.n_heads),
            format!("d_model={}", m.d_model),
            format!("d_ff={}", m.d_ff),
            format!("vocab_size={}", m.vocab_size),
            format!("context_length={}", m.context_length),
            format!("tie_embeddings={}", m.tie_embeddings),
            format!("micro_batch_size={}", t.micro_batch_size),
            format!("grad_accum={}", t.grad_accum),
            format!("seq_len={}", t.seq_len),
            format!("total_steps={}", t.total_steps),
            format!("lr_schedule={kind}"),
            format!("base_lr={}", t.lr.base_lr),
            format!("min_lr={}", t.lr.min_lr),
            format!("warmup_steps={}", t.lr.warmup_steps),
            format!("decay_end_step={}", t.lr.decay_end_step),
            format!("beta1={}", t.optimizer.beta1),
            format!("beta2={}", t.optimizer.beta2),
            format!("eps={}", t.optimizer.eps),
            format!("weight_decay={}", t.optimizer.weight_decay),
            format!("grad_clip={}", t.optimizer.grad_clip),
            format!("eval_every={}", t.eval_every),
            format!("eval_tokens={}", t.eval_tokens),
            format!("seed={}", t.seed),
            format!("divergence_threshold={}", t.divergence_threshold),
            format!("divergence_patience={}", t.divergence_patience),
            format!("recollect_sigma={}", t.recollect_sigma),
            format!("sigma_prompts={}", t.sigma_prompts),
            format!("save_step_checkpoints={}", t.save_step_checkpoints),
            format!("corpus={}", corpus.join(",")),
            format!("val_fraction={}", self.val_fraction),
            format!("data_seed={}", self.data_seed),
            format!("synthetic_bytes={}", self.synthetic_bytes),
            format!("out={}", self.out.display()),
            format!("scale={}", self.scale),
        ];
        if let Some(s) = &self.schedule {
            lines.push(format!("schedule={s}"));
        }
        if let Some(s) = &self.stats {
            lines.push(format!("stats={}", s.display()));
        }
        if let Some(c) = &self.checkpoint {
            lines.push(format!("checkpoint={}", c.display()));
        }
        lines.join("\n") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let mut c = RunConfig::default();
        assert!(matches!(c.apply_text("n_layers=2\nmystery=1\n"), Err(Error::Config(_))));
        assert!(c.set("seq_len", "abc").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\nn_layers = 2\nbase_lr=1e-3 # inline\ncorpus=a.txt,b.txt\nschedule=v5\nlr_schedule=constant\n")
            .unwrap();
        assert_eq!(c.model.n_layers, 2);
        assert_eq!(c.train.lr.base_lr, 1e-3);
        assert_eq!(c.corpus.len(), 2);
        let mut d = RunConfig::default();
        d.apply_text(&c.to_text()).unwrap();
        assert_eq!(c, d);
        for k in KEYS {
            assert!(c.to_text().contains(&format!("{k}=")) || ["stats", "checkpoint"].contains(k));
        }
    }

    #[test]
    fn later_sources_win() {
        let mut c = RunConfig::default();
        c.apply_text("seed=3\nseq_len=64\n").unwrap();
        c.apply_override("seed=9").unwrap();
        assert_eq!((c.train.seed, c.train.seq_len), (9, 64));
    }
}
