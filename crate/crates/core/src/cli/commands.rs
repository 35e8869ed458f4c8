//! The workflow steps behind each subcommand.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use crate::data::{evaluate, generate, load_corpus, synthetic_corpus, Corpus, EvalReport, SampleOptions, Split};
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, save_checkpoint, GptModel};
use crate::norm::{collect_sigma, fold_and_export, split_all, SigmaStats};
use crate::numerics::Scalar;
use crate::schedule::RemovalSchedule;
use crate::train::{read_metrics, sigma_prompts, train_loop, MetricsRecord, RunWriter, TrainOutcome};

/// Loads the configured corpus. The single path `synthetic` generates one.
pub fn load_run_corpus(cfg: &RunConfig) -> Result<Corpus> {
    match cfg.corpus.as_slice() {
        [] => Err(Error::Argument("no corpus given (use --corpus)".into())),
        [p] if p.as_os_str() == "synthetic" => {
            let text = synthetic_corpus(cfg.synthetic_bytes, cfg.data_seed);
            let docs = crate::data::split_documents(text.as_bytes())
                .into_iter()
                .map(<[u8]>::to_vec)
                .collect();
            Corpus::from_documents(docs, cfg.val_fraction, cfg.data_seed, Vec::new())
        }
        paths => load_corpus(paths, cfg.val_fraction, cfg.data_seed),
    }
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn checkpoint_arg(cfg: &RunConfig) -> Result<&Path> {
    cfg.checkpoint
        .as_deref()
        .ok_or_else(|| Error::Argument("no checkpoint given (use --checkpoint)".into()))
}

pub fn eval_model<F: Scalar>(model: &GptModel<F>, corpus: &Corpus, cfg: &RunConfig) -> Result<EvalReport> {
    evaluate(model, corpus, Split::Val, cfg.train.eval_tokens, cfg.train.seq_len)
}

#[derive(Clone, Debug)]
pub struct PretrainResult {
    pub dir: PathBuf,
    pub metrics: Vec<MetricsRecord>,
    pub best_val: Option<f64>,
    pub final_val: Option<f64>,
}

/// Trains a fresh model with every norm in standard mode.
pub fn cmd_pretrain<F: Scalar>(cfg: &RunConfig) -> Result<PretrainResult> {
    cfg.validate()?;
    let corpus = load_run_corpus(cfg)?;
    let dir = cfg.out.clone();
    mkdir(&dir)?;
    write_text(&dir.join("config.txt"), &cfg.to_text())?;
    corpus.save_cache(dir.join("corpus.bin"))?;
    let mut model = GptModel::<F>::init(cfg.model, cfg.train.seed)?;
    let mut writer = RunWriter::create(&dir, cfg.train.save_step_checkpoints)?;
    let out = train_loop(
        &mut model,
        &corpus,
        &RemovalSchedule::empty("none"),
        None,
        &cfg.train,
        &mut writer,
    )?;
    save_checkpoint(&model, dir.join("final.ckpt"))?;
    Ok(PretrainResult {
        dir,
        best_val: out.best.as_ref().map(|b| b.val_loss),
        final_val: out.final_val_loss,
        metrics: out.metrics,
    })
}

/// Collects sigma statistics for the checkpoint's sites into `sigma.txt`.
pub fn cmd_collect_sigma<F: Scalar>(cfg: &RunConfig) -> Result<(PathBuf, SigmaStats)> {
    cfg.validate()?;
    let model: GptModel<F> = load_checkpoint(checkpoint_arg(cfg)?)?;
    let corpus = load_run_corpus(cfg)?;
    let prompts = sigma_prompts(&corpus, cfg.train.sigma_prompts, cfg.train.seq_len);
    let stats = collect_sigma(&model, &prompts, cfg.train.sigma_prompts)?;
    mkdir(&cfg.out)?;
    let path = cfg.out.join("sigma.txt");
    stats.write(&path)?;
    Ok((path, stats))
}

/// Resolves the configured schedule, rescaled and restricted to `n_layers`.
pub fn resolve_schedule(cfg: &RunConfig, n_layers: usize) -> Result<RemovalSchedule> {
    let s = match cfg.schedule.as_deref() {
        None | Some("none") | Some("") => RemovalSchedule::empty("none"),
        Some(spec) => RemovalSchedule::load(spec)?,
    };
    let s = if cfg.scale != 1.0 { s.rescale(cfg.scale)? } else { s };
    Ok(s.restrict_to_layers(n_layers))
}

#[derive(Clone, Debug)]
pub struct RemoveLnResult<F> {
    pub dir: PathBuf,
    pub schedule: RemovalSchedule,
    pub baseline_val: f64,
    pub final_val: f64,
    /// `None` when the terminal model still had unfrozen sites.
    pub exported_val: Option<f64>,
    pub outcome: TrainOutcome<F>,
    pub exported: Option<GptModel<F>>,
}

impl<F> RemoveLnResult<F> {
    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "model      val_loss").unwrap();
        writeln!(s, "baseline   {:.6}", self.baseline_val).unwrap();
        writeln!(s, "final      {:.6}", self.final_val).unwrap();
        if let Some(b) = &self.outcome.best {
            writeln!(s, "best       {:.6}  (step {})", b.val_loss, b.step).unwrap();
        }
        match self.exported_val {
            Some(e) => writeln!(s, "exported   {:.6}  (|exported - final| = {:.3e})", e, (e - self.final_val).abs()).unwrap(),
            None => writeln!(s, "exported   -         (terminal model not fully frozen)").unwrap(),
        }
        s
    }
}

/// Splits the attention norms, fine-tunes under the removal schedule, and
/// folds the terminal model into `lnfree.ckpt`.
pub fn cmd_remove_ln<F: Scalar>(cfg: &RunConfig) -> Result<RemoveLnResult<F>> {
    cfg.validate()?;
    let mut model: GptModel<F> = load_checkpoint(checkpoint_arg(cfg)?)?;
    let corpus = load_run_corpus(cfg)?;
    remove_ln_with(cfg, &corpus, &mut model)
}

/// [`cmd_remove_ln`] on an already loaded model and corpus.
pub fn remove_ln_with<F: Scalar>(
    cfg: &RunConfig,
    corpus: &Corpus,
    model: &mut GptModel<F>,
) -> Result<RemoveLnResult<F>> {
    cfg.validate()?;
    let schedule = resolve_schedule(cfg, model.config.n_layers)?;
    let dir = cfg.out.clone();
    mkdir(&dir)?;
    write_text(&dir.join("config.txt"), &cfg.to_text())?;
    write_text(&dir.join("schedule.tsv"), &schedule.serialize())?;
    let baseline_val = eval_model(model, corpus, cfg)?.mean_loss;
    split_all(model);
    let stats = match &cfg.stats {
        Some(p) => Some(SigmaStats::read(p)?),
        None => None,
    };
    let mut writer = RunWriter::create(&dir, cfg.train.save_step_checkpoints)?;
    let outcome = train_loop(model, corpus, &schedule, stats, &cfg.train, &mut writer)?;
    if let Some(s) = &outcome.stats {
        s.write(dir.join("sigma.txt"))?;
    }
    save_checkpoint(model, dir.join("final.ckpt"))?;
    let final_val = match outcome.final_val_loss {
        Some(v) => v,
        None => eval_model(model, corpus, cfg)?.mean_loss,
    };
    let (exported, exported_val) = match fold_and_export(model) {
        Ok(e) => {
            save_checkpoint(&e, dir.join("lnfree.ckpt"))?;
            let v = eval_model(&e, corpus, cfg)?.mean_loss;
            (Some(e), Some(v))
        }
        Err(Error::Precondition(msg)) => {
            eprintln!("note: not exporting: {msg}");
            (None, None)
        }
        Err(e) => return Err(e),
    };
    let r = RemoveLnResult {
        dir,
        schedule,
        baseline_val,
        final_val,
        exported_val,
        outcome,
        exported,
    };
    write_text(&r.dir.join("summary.txt"), &r.summary_table())?;
    Ok(r)
}

pub fn cmd_eval<F: Scalar>(cfg: &RunConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let model: GptModel<F> = load_checkpoint(checkpoint_arg(cfg)?)?;
    let corpus = load_run_corpus(cfg)?;
    eval_model(&model, &corpus, cfg)
}

pub fn cmd_generate<F: Scalar>(cfg: &RunConfig, prompt: &str, n_tokens: usize, opts: &SampleOptions) -> Result<Vec<u8>> {
    let model: GptModel<F> = load_checkpoint(checkpoint_arg(cfg)?)?;
    generate(&model, prompt.as_bytes(), n_tokens, opts)
}

/// Folds a fully frozen checkpoint into `lnfree.ckpt`.
pub fn cmd_export<F: Scalar>(cfg: &RunConfig) -> Result<PathBuf> {
    let model: GptModel<F> = load_checkpoint(checkpoint_arg(cfg)?)?;
    let out = fold_and_export(&model)?;
    mkdir(&cfg.out)?;
    let path = cfg.out.join("lnfree.ckpt");
    save_checkpoint(&out, &path)?;
    Ok(path)
}

/// One row per distinct step (the last record wins) with an exponential
/// moving average of the training loss.
pub fn curves(records: &[MetricsRecord], ema_decay: f64) -> String {
    let mut rows: Vec<&MetricsRecord> = Vec::new();
    for r in records {
        match rows.iter_mut().find(|x| x.step == r.step) {
            Some(x) => *x = r,
            None => rows.push(r),
        }
    }
    rows.sort_by_key(|r| r.step);
    let mut out = String::from("step,train_loss,train_loss_ema,val_loss,lr,events\n");
    let mut ema: Option<f64> = None;
    for r in rows {
        let e = match ema {
            None => r.train_loss,
            Some(p) => ema_decay * p + (1.0 - ema_decay) * r.train_loss,
        };
        ema = Some(e);
        let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{},{}", r.step, r.train_loss, e, val, r.lr, r.events.join(";")).unwrap();
    }
    out
}

pub fn cmd_curves(metrics: &Path, ema_decay: f64) -> Result<String> {
    if !(0.0..1.0).contains(&ema_decay) {
        return Err(Error::Argument(format!("ema decay {ema_decay} outside [0, 1)")));
    }
    Ok(curves(&read_metrics(metrics)?, ema_decay))
}
