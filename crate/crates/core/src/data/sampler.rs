//! Deterministic packed batches over a token stream.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::corpus::{Corpus, Split};
use super::EOT;
use crate::error::{Error, Result};
use crate::model::BatchRef;
use crate::norm::TokenFlags;

/// `batch` rows of `seq` inputs and their next-token targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub tokens: Vec<u16>,
    pub targets: Vec<u16>,
    pub flags: Vec<TokenFlags>,
    pub batch: usize,
    pub seq: usize,
}

impl Batch {
    pub fn as_ref(&self) -> BatchRef<'_> {
        BatchRef::new(&self.tokens, &self.flags, self.batch, self.seq)
    }

    /// Packs `seq + 1`-token windows into a batch.
    pub fn from_windows(windows: &[&[u16]]) -> Batch {
        let seq = windows[0].len() - 1;
        let mut b = Batch {
            tokens: Vec::with_capacity(windows.len() * seq),
            targets: Vec::with_capacity(windows.len() * seq),
            flags: Vec::with_capacity(windows.len() * seq),
            batch: windows.len(),
            seq,
        };
        for w in windows {
            debug_assert_eq!(w.len(), seq + 1);
            b.tokens.extend_from_slice(&w[..seq]);
            b.targets.extend_from_slice(&w[1..]);
            b.flags.extend(w[..seq].iter().enumerate().map(|(i, &t)| TokenFlags {
                is_bos: i == 0,
                is_eot: t == EOT,
            }));
        }
        b
    }
}

/// Serves non-overlapping windows (stride `seq_len`, length `seq_len + 1`)
/// in a seeded random order, reshuffling after every full pass. The tail of
/// the stream that does not fill a window is never served.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    pub seed: u64,
    pub seq_len: usize,
    pub batch_size: usize,
    split: Split,
    n_windows: usize,
    epoch: u64,
    cursor: usize,
    order: Vec<usize>,
}

impl BatchSampler {
    pub fn new(corpus: &Corpus, split: Split, seq_len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if seq_len == 0 || batch_size == 0 {
            return Err(Error::Argument("sequence length and batch size must be positive".into()));
        }
        let len = corpus.split(split).len();
        let n_windows = len.saturating_sub(1) / seq_len;
        if n_windows == 0 {
            return Err(Error::Argument(format!(
                "{split} split has {len} tokens, too few for one window of {}",
                seq_len + 1
            )));
        }
        let mut s = BatchSampler {
            seed,
            seq_len,
            batch_size,
            split,
            n_windows,
            epoch: 0,
            cursor: 0,
            order: Vec::new(),
        };
        s.shuffle();
        Ok(s)
    }

    fn shuffle(&mut self) {
        self.order = (0..self.n_windows).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ self.epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        self.order.shuffle(&mut rng);
    }

    pub fn n_windows(&self) -> usize {
        self.n_windows
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Start offset of the next window to be served.
    pub fn next_window_start(&mut self) -> usize {
        if self.cursor == self.n_windows {
            self.epoch += 1;
            self.cursor = 0;
            self.shuffle();
        }
        let w = self.order[self.cursor];
        self.cursor += 1;
        w * self.seq_len
    }

    pub fn next_batch(&mut self, corpus: &Corpus) -> Batch {
        let stream = corpus.split(self.split);
        let t = self.seq_len;
        let starts: Vec<usize> = (0..self.batch_size).map(|_| self.next_window_start()).collect();
        let windows: Vec<&[u16]> = starts.iter().map(|&s| &stream[s..s + t + 1]).collect();
        Batch::from_windows(&windows)
    }
}
