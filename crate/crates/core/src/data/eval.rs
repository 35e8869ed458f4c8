//! Held-out evaluation and autoregressive sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::corpus::{tokenize, Corpus, Split};
use super::sampler::Batch;
use super::EOT;
use crate::error::{Error, Result};
use crate::model::{sequence_flags, ForwardOptions, GptModel};
use crate::numerics::{Scalar, Trace};

/// Windows evaluated per forward pass.
const EVAL_BATCH: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub dataset: String,
    pub mean_loss: f64,
    pub tokens: usize,
    pub perplexity: f64,
    /// Normalization work done during the evaluation.
    pub trace: Trace,
}

impl EvalReport {
    pub fn machine_line(&self) -> String {
        format!(
            "eval dataset={} loss={:.9} tokens={} ppl={:.9} norm_ops={} sigma_rows={}",
            self.dataset,
            self.mean_loss,
            self.tokens,
            self.perplexity,
            self.trace.norm_ops,
            self.trace.sigma_rows
        )
    }
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: cross-entropy {:.4} nats over {} tokens (perplexity {:.3})",
            self.dataset, self.mean_loss, self.tokens, self.perplexity
        )
    }
}

/// Summed next-token negative log-likelihood of `logits` rows.
fn nll_sum<F: Scalar>(logits: &[F], vocab: usize, targets: &[u16]) -> f64 {
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let row = &logits[r * vocab..(r + 1) * vocab];
        let mx = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v.f64() - mx).exp()).sum();
        total += z.ln() + mx - row[t as usize].f64();
    }
    total
}

/// Mean cross-entropy over consecutive windows from the start of `split`,
/// using at most `max_tokens` predicted tokens.
pub fn evaluate<F: Scalar>(
    model: &GptModel<F>,
    corpus: &Corpus,
    split: Split,
    max_tokens: usize,
    seq_len: usize,
) -> Result<EvalReport> {
    if seq_len == 0 || max_tokens < seq_len {
        return Err(Error::Argument(format!(
            "max_tokens {max_tokens} must be at least the sequence length {seq_len}"
        )));
    }
    let stream = corpus.split(split);
    let n_windows = (max_tokens / seq_len).min(stream.len().saturating_sub(1) / seq_len);
    if n_windows == 0 {
        return Err(Error::Argument(format!("{split} split is shorter than one window")));
    }
    let starts: Vec<usize> = (0..n_windows).map(|w| w * seq_len).collect();
    let mut total = 0.0;
    let mut tokens = 0;
    let mut trace = Trace::default();
    for chunk in starts.chunks(EVAL_BATCH) {
        let windows: Vec<&[u16]> = chunk.iter().map(|&s| &stream[s..s + seq_len + 1]).collect();
        let b = Batch::from_windows(&windows);
        let out = model.forward(&b.as_ref(), ForwardOptions::default())?;
        total += nll_sum(out.logits.data(), model.config.vocab_size, &b.targets);
        tokens += b.targets.len();
        trace.norm_ops += out.trace.norm_ops;
        trace.sigma_rows += out.trace.sigma_rows;
    }
    let mean_loss = total / tokens as f64;
    Ok(EvalReport {
        dataset: split.to_string(),
        mean_loss,
        tokens,
        perplexity: mean_loss.exp(),
        trace,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleOptions {
    /// At or below zero the most likely token is always taken.
    pub temperature: f64,
    /// Restrict sampling to the `top_k` most likely tokens; 0 keeps all.
    pub top_k: usize,
    pub seed: u64,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions {
            temperature: 1.0,
            top_k: 0,
            seed: 0,
        }
    }
}

fn pick<R: Rng>(logits: &[f64], opts: &SampleOptions, rng: &mut R) -> usize {
    let argmax = || {
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        best
    };
    if opts.temperature <= 0.0 || opts.top_k == 1 {
        return argmax();
    }
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    if opts.top_k > 0 && opts.top_k < logits.len() {
        idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
        idx.truncate(opts.top_k);
    }
    let mx = idx.iter().map(|&i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = idx.iter().map(|&i| ((logits[i] - mx) / opts.temperature).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (&i, &wi) in idx.iter().zip(&w) {
        if u < wi {
            return i;
        }
        u -= wi;
    }
    *idx.last().unwrap()
}

/// Continues `prompt` by up to `n_tokens` bytes, stopping early at EOT. The
/// context is an EOT followed by the prompt; when it exceeds the model's
/// context length the oldest tokens are dropped.
pub fn generate<F: Scalar>(
    model: &GptModel<F>,
    prompt: &[u8],
    n_tokens: usize,
    opts: &SampleOptions,
) -> Result<Vec<u8>> {
    if n_tokens == 0 {
        return Err(Error::Argument("n_tokens must be at least 1".into()));
    }
    let max = model.config.context_length;
    let mut ctx = vec![EOT];
    ctx.extend(tokenize(prompt));
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::with_capacity(n_tokens);
    for _ in 0..n_tokens {
        if ctx.len() > max {
            ctx.drain(..ctx.len() - max);
        }
        let flags = sequence_flags(&ctx, EOT);
        let logits = model.forward(
            &crate::model::BatchRef::new(&ctx, &flags, 1, ctx.len()),
            ForwardOptions::default(),
        )?;
        let v = model.config.vocab_size;
        let last: Vec<f64> = logits.logits.data()[(ctx.len() - 1) * v..]
            .iter()
            .map(|x| x.f64())
            .collect();
        let t = pick(&last, opts, &mut rng) as u16;
        if t == EOT {
            break;
        }
        out.push(t as u8);
        ctx.push(t);
    }
    Ok(out)
}
