//! Times one forward and one forward+backward pass of the default model.
//!
//! `BENCH_B` sets the micro-batch size (default 16), `BENCH_IT` the number
//! of repetitions (default 8); the best time of each is printed.

use std::time::Instant;

use lnabl::data::{split_documents, synthetic_corpus, BatchSampler, Corpus, Split};
use lnabl::model::{ForwardOptions, GptModel, ModelConfig};

fn main() {
    let text = synthetic_corpus(300_000, 0);
    let docs = split_documents(text.as_bytes()).into_iter().map(<[u8]>::to_vec).collect();
    let c = Corpus::from_documents(docs, 0.05, 0, vec![]).unwrap();
    let m = GptModel::<f32>::init(ModelConfig::default(), 0).unwrap();
    let bsz: usize = std::env::var("BENCH_B").ok().and_then(|v| v.parse().ok()).unwrap_or(16);
    let iters: usize = std::env::var("BENCH_IT").ok().and_then(|v| v.parse().ok()).unwrap_or(8);
    let mut s = BatchSampler::new(&c, Split::Train, 256, bsz, 0).unwrap();
    let b = s.next_batch(&c);
    let (mut f, mut fb) = (f64::MAX, f64::MAX);
    for _ in 0..iters {
        let t = Instant::now();
        let _ = m.forward(&b.as_ref(), ForwardOptions::default()).unwrap();
        f = f.min(t.elapsed().as_secs_f64());
        let t = Instant::now();
        let _ = m.loss_and_grads(&b.as_ref(), &b.targets).unwrap();
        fb = fb.min(t.elapsed().as_secs_f64());
    }
    println!("forward {:.0} ms  fwd+bwd {:.0} ms", f * 1e3, fb * 1e3);
}
