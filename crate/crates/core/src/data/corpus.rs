//! Byte-level corpus with document boundaries and a binary cache format.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::EOT;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CORP0001";
const VERSION: u32 = 1;
const DOC_SEPARATOR: &str = "<|endoftext|>";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

/// Documents, each terminated by one EOT, shuffled and split by document:
/// the first `n_train_docs` are training data, the rest validation.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    tokens: Vec<u16>,
    /// Exclusive end offset of every document in `tokens`.
    doc_ends: Vec<u64>,
    n_train_docs: usize,
    sources: Vec<[u8; 32]>,
    train: Vec<u16>,
    val: Vec<u16>,
}

/// Byte-level tokenization; every byte is its own token.
pub fn tokenize(text: &[u8]) -> Vec<u16> {
    text.iter().map(|&b| b as u16).collect()
}

/// Inverse of [`tokenize`]; EOT tokens are dropped.
pub fn detokenize(tokens: &[u16]) -> Vec<u8> {
    tokens.iter().filter(|&&t| t < 256).map(|&t| t as u8).collect()
}

/// Splits raw file contents into documents: on the end-of-text marker when
/// present, otherwise on blank lines. Whitespace-only pieces are skipped.
pub fn split_documents(text: &[u8]) -> Vec<&[u8]> {
    let sep = DOC_SEPARATOR.as_bytes();
    let mut docs = Vec::new();
    if text.windows(sep.len()).any(|w| w == sep) {
        let mut rest = text;
        while let Some(i) = rest.windows(sep.len()).position(|w| w == sep) {
            docs.push(&rest[..i]);
            rest = &rest[i + sep.len()..];
        }
        docs.push(rest);
    } else {
        let mut start = 0;
        let mut i = 0;
        while i + 1 < text.len() {
            if text[i] == b'\n' && text[i + 1] == b'\n' {
                docs.push(&text[start..i + 1]);
                while i < text.len() && text[i] == b'\n' {
                    i += 1;
                }
                start = i;
            } else {
                i += 1;
            }
        }
        docs.push(&text[start..]);
    }
    docs.into_iter()
        .map(|d| {
            let s = d.iter().position(|b| !b.is_ascii_whitespace()).unwrap_or(d.len());
            &d[s..]
        })
        .filter(|d| !d.is_empty())
        .collect()
}

impl Corpus {
    /// Builds a corpus from in-memory documents (already split).
    pub fn from_documents(
        docs: Vec<Vec<u8>>,
        val_fraction: f64,
        seed: u64,
        sources: Vec<[u8; 32]>,
    ) -> Result<Self> {
        if !(val_fraction > 0.0 && val_fraction < 1.0) {
            return Err(Error::Argument(format!("val_fraction {val_fraction} must lie in (0, 1)")));
        }
        if docs.len() < 2 {
            return Err(Error::Argument(format!(
                "corpus needs at least two documents for a train/val split, found {}",
                docs.len()
            )));
        }
        let mut order: Vec<usize> = (0..docs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n = docs.len();
        let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
        let mut tokens = Vec::with_capacity(docs.iter().map(|d| d.len() + 1).sum());
        let mut doc_ends = Vec::with_capacity(n);
        for &i in &order {
            tokens.extend(tokenize(&docs[i]));
            tokens.push(EOT);
            doc_ends.push(tokens.len() as u64);
        }
        Self::assemble(tokens, doc_ends, n - n_val, sources)
    }

    fn assemble(
        tokens: Vec<u16>,
        doc_ends: Vec<u64>,
        n_train_docs: usize,
        sources: Vec<[u8; 32]>,
    ) -> Result<Self> {
        let cut = doc_ends[n_train_docs - 1] as usize;
        let stream = |s: &[u16]| {
            let mut v = Vec::with_capacity(s.len() + 1);
            v.push(EOT);
            v.extend_from_slice(s);
            v
        };
        Ok(Corpus {
            train: stream(&tokens[..cut]),
            val: stream(&tokens[cut..]),
            tokens,
            doc_ends,
            n_train_docs,
            sources,
        })
    }

    pub fn tokens(&self) -> &[u16] {
        &self.tokens
    }

    pub fn n_docs(&self) -> usize {
        self.doc_ends.len()
    }

    pub fn n_train_docs(&self) -> usize {
        self.n_train_docs
    }

    pub fn n_val_docs(&self) -> usize {
        self.n_docs() - self.n_train_docs
    }

    pub fn doc_ends(&self) -> &[u64] {
        &self.doc_ends
    }

    pub fn source_digests(&self) -> &[[u8; 32]] {
        &self.sources
    }

    /// Token stream of a split, starting with an EOT.
    pub fn split(&self, split: Split) -> &[u16] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        }
    }

    /// SHA-256 over the token payload, document index and source digests.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.to_le_bytes());
        }
        for e in &self.doc_ends {
            h.update(e.to_le_bytes());
        }
        h.update((self.n_train_docs as u64).to_le_bytes());
        for s in &self.sources {
            h.update(s);
        }
        h.finalize().into()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(48 + 8 * self.doc_ends.len() + 2 * self.tokens.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tokens.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.doc_ends.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.n_train_docs as u64).to_le_bytes());
        for e in &self.doc_ends {
            out.extend_from_slice(&e.to_le_bytes());
        }
        out.extend_from_slice(&(self.sources.len() as u64).to_le_bytes());
        for s in &self.sources {
            out.extend_from_slice(s);
        }
        for t in &self.tokens {
            out.extend_from_slice(&t.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::format(0, "bad corpus magic"));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::format(8, format!("unsupported corpus version {version}")));
        }
        let n_tokens = r.u64()?;
        let at = r.pos as u64;
        let n_docs = r.u64()? as usize;
        let n_train = r.u64()? as usize;
        if n_docs < 2 || n_train == 0 || n_train >= n_docs {
            return Err(Error::format(at, format!("{n_train} training docs out of {n_docs}")));
        }
        let mut doc_ends = Vec::with_capacity(n_docs.min(1 << 24));
        let mut prev = 0;
        for _ in 0..n_docs {
            let at = r.pos as u64;
            let e = r.u64()?;
            if e <= prev || e > n_tokens {
                return Err(Error::format(at, format!("document end {e} out of order")));
            }
            doc_ends.push(e);
            prev = e;
        }
        if prev != n_tokens {
            return Err(Error::format(r.pos as u64, "documents do not cover the payload"));
        }
        let n_sources = r.u64()? as usize;
        let mut sources = Vec::with_capacity(n_sources.min(1 << 16));
        for _ in 0..n_sources {
            sources.push(r.take(32)?.try_into().unwrap());
        }
        let payload_at = r.pos as u64;
        let payload = r.take(n_tokens as usize * 2)?;
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos as u64, "trailing bytes after payload"));
        }
        let tokens: Vec<u16> = payload
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        for (d, &e) in doc_ends.iter().enumerate() {
            if tokens[e as usize - 1] != EOT {
                return Err(Error::format(
                    payload_at + 2 * (e - 1),
                    format!("document {d} is not terminated by EOT"),
                ));
            }
        }
        if let Some(i) = tokens.iter().position(|&t| t > EOT) {
            return Err(Error::format(payload_at + 2 * i as u64, "token outside the byte vocabulary"));
        }
        Self::assemble(tokens, doc_ends, n_train, sources)
    }

    pub fn save_cache(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load_cache(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated: wanted {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Reads, splits and tokenizes `paths` (a corpus cache file is loaded as is).
pub fn load_corpus<P: AsRef<Path>>(paths: &[P], val_fraction: f64, seed: u64) -> Result<Corpus> {
    if paths.is_empty() {
        return Err(Error::Argument("no corpus files given".into()));
    }
    let mut docs = Vec::new();
    let mut sources = Vec::new();
    for p in paths {
        let path: PathBuf = p.as_ref().to_path_buf();
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if paths.len() == 1 && bytes.starts_with(MAGIC) {
            return Corpus::decode(&bytes);
        }
        sources.push(Sha256::digest(&bytes).into());
        docs.extend(split_documents(&bytes).into_iter().map(<[u8]>::to_vec));
    }
    if docs.is_empty() {
        return Err(Error::Argument("corpus is empty".into()));
    }
    Corpus::from_documents(docs, val_fraction, seed, sources)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_ten_byte_documents() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.txt");
        let b = dir.path().join("b.txt");
        std::fs::write(&a, b"0123456789").unwrap();
        std::fs::write(&b, b"abcdefghij").unwrap();
        let c = load_corpus(&[&a, &b], 0.5, 3).unwrap();
        assert_eq!(c.tokens().len(), 22);
        assert_eq!(c.tokens().iter().filter(|&&t| t == EOT).count(), 2);
        assert_eq!(c.source_digests().len(), 2);
        let again = load_corpus(&[&a, &b], 0.5, 3).unwrap();
        assert_eq!(c.digest(), again.digest());
    }

    #[test]
    fn split_arithmetic() {
        let docs: Vec<Vec<u8>> = (0..100).map(|i| format!("doc {i:03}").into_bytes()).collect();
        let c = Corpus::from_documents(docs, 0.1, 7, vec![]).unwrap();
        assert_eq!(c.n_val_docs(), 10);
        assert_eq!(c.n_train_docs(), 90);
        assert_eq!(c.split(Split::Train)[0], EOT);
        assert_eq!(c.split(Split::Val)[0], EOT);
        assert_eq!(
            c.split(Split::Train).len() + c.split(Split::Val).len(),
            c.tokens().len() + 2
        );
    }

    #[test]
    fn document_splitting() {
        let d = split_documents(b"one<|endoftext|>two\n\nthree<|endoftext|>");
        assert_eq!(d, vec![&b"one"[..], &b"two\n\nthree"[..]]);
        let d = split_documents(b"para one\nline\n\n\npara two\n");
        assert_eq!(d, vec![&b"para one\nline\n"[..], &b"para two\n"[..]]);
        assert!(split_documents(b"  \n\n \n").is_empty());
    }

    #[test]
    fn empty_and_unreadable() {
        let dir = tempfile::tempdir().unwrap();
        let e = dir.path().join("e.txt");
        std::fs::write(&e, b"").unwrap();
        assert!(matches!(load_corpus(&[&e], 0.1, 0), Err(Error::Argument(_))));
        let missing = dir.path().join("nope.txt");
        match load_corpus(&[&missing], 0.1, 0) {
            Err(Error::Io { path, .. }) => assert_eq!(path, missing),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cache_round_trip_and_errors() {
        let docs: Vec<Vec<u8>> = (0..5).map(|i| vec![b'a' + i; 3 + i as usize]).collect();
        let c = Corpus::from_documents(docs, 0.4, 1, vec![[9; 32]]).unwrap();
        let bytes = c.encode();
        assert_eq!(Corpus::decode(&bytes).unwrap(), c);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Corpus::decode(&bad), Err(Error::Format { offset: 0, .. })));
        let cut = &bytes[..bytes.len() - 1];
        assert!(matches!(Corpus::decode(cut), Err(Error::Format { .. })));
    }
}
