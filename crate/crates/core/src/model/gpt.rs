//! Decoder-only pre-norm transformer with individually addressable norm sites.

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::norm::{norm_on_tape, NormSiteId, NormState, SiteKind, TokenFlags};
use crate::numerics::{Scalar, Tape, Tensor, Trace, Var};

/// The norm in front of attention. `Split` feeds queries/keys and values
/// from separate states; `Removed` appears only in exported models.
#[derive(Clone, Debug, PartialEq)]
pub enum AttnNorm<F> {
    Shared(NormState<F>),
    Split { qk: NormState<F>, v: NormState<F> },
    Removed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block<F> {
    pub attn_norm: AttnNorm<F>,
    /// Query and key projections side by side, `[H × 2H]`.
    pub w_qk: Tensor<F>,
    pub b_qk: Tensor<F>,
    pub w_v: Tensor<F>,
    pub b_v: Tensor<F>,
    pub w_o: Tensor<F>,
    pub b_o: Tensor<F>,
    pub mlp_norm: Option<NormState<F>>,
    pub w_fc: Tensor<F>,
    pub b_fc: Tensor<F>,
    pub w_proj: Tensor<F>,
    pub b_proj: Tensor<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GptModel<F> {
    pub config: ModelConfig,
    pub wte: Tensor<F>,
    pub wpe: Tensor<F>,
    pub blocks: Vec<Block<F>>,
    pub lnf: Option<NormState<F>>,
    /// `[H × V]`; `None` when the unembedding is tied to `wte`.
    pub unembed: Option<Tensor<F>>,
    /// Only present after folding a final-norm bias into the unembedding.
    pub unembed_bias: Option<Tensor<F>>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    pub record_sigma: bool,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<F> {
    /// `[batch·seq × vocab]`
    pub logits: Tensor<F>,
    pub trace: Trace,
    /// Per-row standard deviations at the input of each evaluated site.
    pub sigmas: Vec<(NormSiteId, Vec<f64>)>,
}

/// A batch of equal-length token sequences with per-position flags.
#[derive(Clone, Copy, Debug)]
pub struct BatchRef<'a> {
    pub tokens: &'a [u16],
    pub flags: &'a [TokenFlags],
    pub batch: usize,
    pub seq: usize,
}

impl<'a> BatchRef<'a> {
    pub fn new(tokens: &'a [u16], flags: &'a [TokenFlags], batch: usize, seq: usize) -> Self {
        BatchRef {
            tokens,
            flags,
            batch,
            seq,
        }
    }
}

/// Default per-position flags for one sequence: BOS at position 0 and EOT
/// wherever the token equals `eot`.
pub fn sequence_flags(tokens: &[u16], eot: u16) -> Vec<TokenFlags> {
    tokens
        .iter()
        .enumerate()
        .map(|(i, &t)| TokenFlags {
            is_bos: i == 0,
            is_eot: t == eot,
        })
        .collect()
}

fn block_prefix(i: usize) -> String {
    format!("blocks.{i}")
}

fn norm_prefix(site: NormSiteId) -> String {
    match site.block_index() {
        Some(i) => format!("blocks.{i}.{}", site.kind.as_str()),
        None => "lnf".to_string(),
    }
}

impl<F: Scalar> GptModel<F> {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, ff, v, t) = (
            config.d_model,
            config.d_ff,
            config.vocab_size,
            config.context_length,
        );
        let std = 0.02;
        let resid_std = std / (2.0 * config.n_layers as f64).sqrt();
        let wte = Tensor::randn(&[v, h], std, &mut rng);
        let wpe = Tensor::randn(&[t, h], std, &mut rng);
        let mut blocks = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            blocks.push(Block {
                attn_norm: AttnNorm::Shared(NormState::new(h)),
                w_qk: Tensor::randn(&[h, 2 * h], std, &mut rng),
                b_qk: Tensor::zeros(&[2 * h]),
                w_v: Tensor::randn(&[h, h], std, &mut rng),
                b_v: Tensor::zeros(&[h]),
                w_o: Tensor::randn(&[h, h], resid_std, &mut rng),
                b_o: Tensor::zeros(&[h]),
                mlp_norm: Some(NormState::new(h)),
                w_fc: Tensor::randn(&[h, ff], std, &mut rng),
                b_fc: Tensor::zeros(&[ff]),
                w_proj: Tensor::randn(&[ff, h], resid_std, &mut rng),
                b_proj: Tensor::zeros(&[h]),
            });
        }
        let unembed = if config.tie_embeddings {
            None
        } else {
            Some(Tensor::randn(&[h, v], std, &mut rng))
        };
        Ok(GptModel {
            config,
            wte,
            wpe,
            blocks,
            lnf: Some(NormState::new(h)),
            unembed,
            unembed_bias: None,
        })
    }

    /// Every norm site currently present, in block order with `lnf` last.
    pub fn sites(&self) -> Vec<NormSiteId> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            match &b.attn_norm {
                AttnNorm::Shared(_) => out.push(NormSiteId::new(i, SiteKind::Ln1)),
                AttnNorm::Split { .. } => {
                    out.push(NormSiteId::new(i, SiteKind::Ln1qk));
                    out.push(NormSiteId::new(i, SiteKind::Ln1v));
                }
                AttnNorm::Removed => {}
            }
            if b.mlp_norm.is_some() {
                out.push(NormSiteId::new(i, SiteKind::Ln2));
            }
        }
        if self.lnf.is_some() {
            out.push(NormSiteId::LNF);
        }
        out
    }

    pub fn is_norm_free(&self) -> bool {
        self.sites().is_empty()
    }

    pub fn norm_state(&self, site: NormSiteId) -> Option<&NormState<F>> {
        match (site.block_index(), site.kind) {
            (None, SiteKind::Lnf) => self.lnf.as_ref(),
            (Some(i), kind) => {
                let b = self.blocks.get(i)?;
                match (kind, &b.attn_norm) {
                    (SiteKind::Ln1, AttnNorm::Shared(s)) => Some(s),
                    (SiteKind::Ln1qk, AttnNorm::Split { qk, .. }) => Some(qk),
                    (SiteKind::Ln1v, AttnNorm::Split { v, .. }) => Some(v),
                    (SiteKind::Ln2, _) => b.mlp_norm.as_ref(),
                    _ => None,
                }
            }
            _ => None,
        }
    }

    pub fn norm_state_mut(&mut self, site: NormSiteId) -> Option<&mut NormState<F>> {
        match (site.block_index(), site.kind) {
            (None, SiteKind::Lnf) => self.lnf.as_mut(),
            (Some(i), kind) => {
                let b = self.blocks.get_mut(i)?;
                match (kind, &mut b.attn_norm) {
                    (SiteKind::Ln1, AttnNorm::Shared(s)) => Some(s),
                    (SiteKind::Ln1qk, AttnNorm::Split { qk, .. }) => Some(qk),
                    (SiteKind::Ln1v, AttnNorm::Split { v, .. }) => Some(v),
                    (SiteKind::Ln2, _) => b.mlp_norm.as_mut(),
                    _ => None,
                }
            }
            _ => None,
        }
    }

    /// Visits every trainable tensor with a stable dotted name.
    pub fn visit_params<'a>(&'a self, mut f: impl FnMut(&str, &'a Tensor<F>)) {
        f("wte", &self.wte);
        f("wpe", &self.wpe);
        for (i, b) in self.blocks.iter().enumerate() {
            let p = block_prefix(i);
            match &b.attn_norm {
                AttnNorm::Shared(s) => {
                    f(&format!("{p}.ln1.gamma"), &s.gamma);
                    f(&format!("{p}.ln1.beta"), &s.beta);
                }
                AttnNorm::Split { qk, v } => {
                    f(&format!("{p}.ln1qk.gamma"), &qk.gamma);
                    f(&format!("{p}.ln1qk.beta"), &qk.beta);
                    f(&format!("{p}.ln1v.gamma"), &v.gamma);
                    f(&format!("{p}.ln1v.beta"), &v.beta);
                }
                AttnNorm::Removed => {}
            }
            f(&format!("{p}.attn.w_qk"), &b.w_qk);
            f(&format!("{p}.attn.b_qk"), &b.b_qk);
            f(&format!("{p}.attn.w_v"), &b.w_v);
            f(&format!("{p}.attn.b_v"), &b.b_v);
            f(&format!("{p}.attn.w_o"), &b.w_o);
            f(&format!("{p}.attn.b_o"), &b.b_o);
            if let Some(s) = &b.mlp_norm {
                f(&format!("{p}.ln2.gamma"), &s.gamma);
                f(&format!("{p}.ln2.beta"), &s.beta);
            }
            f(&format!("{p}.mlp.w_fc"), &b.w_fc);
            f(&format!("{p}.mlp.b_fc"), &b.b_fc);
            f(&format!("{p}.mlp.w_proj"), &b.w_proj);
            f(&format!("{p}.mlp.b_proj"), &b.b_proj);
        }
        if let Some(s) = &self.lnf {
            f("lnf.gamma", &s.gamma);
            f("lnf.beta", &s.beta);
        }
        if let Some(u) = &self.unembed {
            f("unembed", u);
        }
        if let Some(u) = &self.unembed_bias {
            f("unembed_bias", u);
        }
    }

    /// Mutable counterpart of [`visit_params`](Self::visit_params), same order.
    pub fn visit_params_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor<F>)) {
        f("wte", &mut self.wte);
        f("wpe", &mut self.wpe);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = block_prefix(i);
            match &mut b.attn_norm {
                AttnNorm::Shared(s) => {
                    f(&format!("{p}.ln1.gamma"), &mut s.gamma);
                    f(&format!("{p}.ln1.beta"), &mut s.beta);
                }
                AttnNorm::Split { qk, v } => {
                    f(&format!("{p}.ln1qk.gamma"), &mut qk.gamma);
                    f(&format!("{p}.ln1qk.beta"), &mut qk.beta);
                    f(&format!("{p}.ln1v.gamma"), &mut v.gamma);
                    f(&format!("{p}.ln1v.beta"), &mut v.beta);
                }
                AttnNorm::Removed => {}
            }
            f(&format!("{p}.attn.w_qk"), &mut b.w_qk);
            f(&format!("{p}.attn.b_qk"), &mut b.b_qk);
            f(&format!("{p}.attn.w_v"), &mut b.w_v);
            f(&format!("{p}.attn.b_v"), &mut b.b_v);
            f(&format!("{p}.attn.w_o"), &mut b.w_o);
            f(&format!("{p}.attn.b_o"), &mut b.b_o);
            if let Some(s) = &mut b.mlp_norm {
                f(&format!("{p}.ln2.gamma"), &mut s.gamma);
                f(&format!("{p}.ln2.beta"), &mut s.beta);
            }
            f(&format!("{p}.mlp.w_fc"), &mut b.w_fc);
            f(&format!("{p}.mlp.b_fc"), &mut b.b_fc);
            f(&format!("{p}.mlp.w_proj"), &mut b.w_proj);
            f(&format!("{p}.mlp.b_proj"), &mut b.b_proj);
        }
        if let Some(s) = &mut self.lnf {
            f("lnf.gamma", &mut s.gamma);
            f("lnf.beta", &mut s.beta);
        }
        if let Some(u) = &mut self.unembed {
            f("unembed", u);
        }
        if let Some(u) = &mut self.unembed_bias {
            f("unembed_bias", u);
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(|_, t| n += t.len());
        n
    }

    /// Converts every parameter to another precision.
    pub fn cast<G: Scalar>(&self) -> GptModel<G> {
        let norm = |s: &NormState<F>| NormState {
            mode: s.mode,
            gamma: s.gamma.cast(),
            beta: s.beta.cast(),
            sigma_bar: s.sigma_bar,
            sigma0_bar: s.sigma0_bar,
            special_bos_active: s.special_bos_active,
            special_eot_active: s.special_eot_active,
            center_mean: s.center_mean,
        };
        GptModel {
            config: self.config,
            wte: self.wte.cast(),
            wpe: self.wpe.cast(),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    attn_norm: match &b.attn_norm {
                        AttnNorm::Shared(s) => AttnNorm::Shared(norm(s)),
                        AttnNorm::Split { qk, v } => AttnNorm::Split {
                            qk: norm(qk),
                            v: norm(v),
                        },
                        AttnNorm::Removed => AttnNorm::Removed,
                    },
                    w_qk: b.w_qk.cast(),
                    b_qk: b.b_qk.cast(),
                    w_v: b.w_v.cast(),
                    b_v: b.b_v.cast(),
                    w_o: b.w_o.cast(),
                    b_o: b.b_o.cast(),
                    mlp_norm: b.mlp_norm.as_ref().map(norm),
                    w_fc: b.w_fc.cast(),
                    b_fc: b.b_fc.cast(),
                    w_proj: b.w_proj.cast(),
                    b_proj: b.b_proj.cast(),
                })
                .collect(),
            lnf: self.lnf.as_ref().map(norm),
            unembed: self.unembed.as_ref().map(Tensor::cast),
            unembed_bias: self.unembed_bias.as_ref().map(Tensor::cast),
        }
    }

    fn check_batch(&self, batch: &BatchRef<'_>) -> Result<()> {
        let n = batch.batch * batch.seq;
        if batch.batch == 0 || batch.seq == 0 {
            return Err(Error::Argument("empty batch".into()));
        }
        if batch.seq > self.config.context_length {
            return Err(Error::Length {
                len: batch.seq,
                max: self.config.context_length,
            });
        }
        if batch.tokens.len() != n || batch.flags.len() != n {
            return Err(Error::Dimension(format!(
                "{} tokens and {} flags for a {}x{} batch",
                batch.tokens.len(),
                batch.flags.len(),
                batch.batch,
                batch.seq
            )));
        }
        let v = self.config.vocab_size;
        if let Some(&t) = batch.tokens.iter().find(|&&t| t as usize >= v) {
            return Err(Error::Index(format!("token {t} outside vocabulary of {v}")));
        }
        Ok(())
    }

    /// Registers all parameters on `tape`.
    pub fn bind(&self, tape: &mut Tape<F>, trainable: bool) -> HashMap<String, Var> {
        let mut binds = HashMap::new();
        self.visit_params(|name, t| {
            let v = if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            };
            binds.insert(name.to_string(), v);
        });
        binds
    }

    /// Builds the forward graph; returns the logits node and the output
    /// node of every evaluated norm site.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape<F>,
        binds: &HashMap<String, Var>,
        batch: &BatchRef<'_>,
    ) -> Result<(Var, Vec<(NormSiteId, Var)>)> {
        self.check_batch(batch)?;
        let get = |name: &str| -> Var { binds[name] };
        let flags = batch.flags;
        let positions: Vec<usize> = (0..batch.batch).flat_map(|_| 0..batch.seq).collect();
        let ids: Vec<usize> = batch.tokens.iter().map(|&t| t as usize).collect();
        let tok = tape.embed(get("wte"), &ids)?;
        let pos = tape.embed(get("wpe"), &positions)?;
        let mut x = tape.add(tok, pos)?;
        let mut norms = Vec::new();

        let site = |tape: &mut Tape<F>,
                        norms: &mut Vec<(NormSiteId, Var)>,
                        x: Var,
                        id: NormSiteId,
                        state: &NormState<F>|
         -> Result<Var> {
            let p = norm_prefix(id);
            let out = norm_on_tape(
                tape,
                x,
                binds[&format!("{p}.gamma")],
                binds[&format!("{p}.beta")],
                state,
                flags,
            )?;
            norms.push((id, out));
            Ok(out)
        };

        for (i, b) in self.blocks.iter().enumerate() {
            let p = block_prefix(i);
            let (qk_in, v_in) = match &b.attn_norm {
                AttnNorm::Shared(s) => {
                    let a = site(tape, &mut norms, x, NormSiteId::new(i, SiteKind::Ln1), s)?;
                    (a, a)
                }
                AttnNorm::Split { qk, v } => (
                    site(tape, &mut norms, x, NormSiteId::new(i, SiteKind::Ln1qk), qk)?,
                    site(tape, &mut norms, x, NormSiteId::new(i, SiteKind::Ln1v), v)?,
                ),
                AttnNorm::Removed => (x, x),
            };
            let qk = tape.linear(
                qk_in,
                get(&format!("{p}.attn.w_qk")),
                Some(get(&format!("{p}.attn.b_qk"))),
            )?;
            let v = tape.linear(
                v_in,
                get(&format!("{p}.attn.w_v")),
                Some(get(&format!("{p}.attn.b_v"))),
            )?;
            let att = tape.causal_attention(qk, v, batch.batch, batch.seq, self.config.n_heads)?;
            let o = tape.linear(
                att,
                get(&format!("{p}.attn.w_o")),
                Some(get(&format!("{p}.attn.b_o"))),
            )?;
            x = tape.add(x, o)?;

            let m_in = match &b.mlp_norm {
                Some(s) => site(tape, &mut norms, x, NormSiteId::new(i, SiteKind::Ln2), s)?,
                None => x,
            };
            let hdn = tape.linear(
                m_in,
                get(&format!("{p}.mlp.w_fc")),
                Some(get(&format!("{p}.mlp.b_fc"))),
            )?;
            let act = tape.gelu(hdn);
            let out = tape.linear(
                act,
                get(&format!("{p}.mlp.w_proj")),
                Some(get(&format!("{p}.mlp.b_proj"))),
            )?;
            x = tape.add(x, out)?;
        }

        let f_in = match &self.lnf {
            Some(s) => site(tape, &mut norms, x, NormSiteId::LNF, s)?,
            None => x,
        };
        let bias = binds.get("unembed_bias").copied();
        let logits = match binds.get("unembed") {
            Some(&u) => tape.linear(f_in, u, bias)?,
            None => tape.linear_t(f_in, get("wte"), bias)?,
        };
        Ok((logits, norms))
    }

    pub fn forward(&self, batch: &BatchRef<'_>, opts: ForwardOptions) -> Result<ForwardOutput<F>> {
        let mut tape = Tape::new();
        let binds = self.bind(&mut tape, false);
        let (logits, norms) = self.forward_on_tape(&mut tape, &binds, batch)?;
        let sigmas = if opts.record_sigma {
            norms
                .iter()
                .filter_map(|(id, v)| {
                    tape.norm_sigmas(*v)
                        .map(|s| (*id, s.iter().map(|x| x.f64()).collect()))
                })
                .collect()
        } else {
            Vec::new()
        };
        let trace = tape.trace();
        Ok(ForwardOutput {
            logits: tape.into_value(logits),
            trace,
            sigmas,
        })
    }

    /// Logits for one sequence with default BOS/EOT flags.
    pub fn forward_sequence(&self, tokens: &[u16], eot: u16) -> Result<Tensor<F>> {
        let flags = sequence_flags(tokens, eot);
        let out = self.forward(
            &BatchRef::new(tokens, &flags, 1, tokens.len()),
            ForwardOptions::default(),
        )?;
        Ok(out.logits)
    }

    /// Mean next-token cross-entropy of `batch` against `targets`.
    pub fn loss(&self, batch: &BatchRef<'_>, targets: &[u16]) -> Result<f64> {
        let mut tape = Tape::new();
        let binds = self.bind(&mut tape, false);
        let (logits, _) = self.forward_on_tape(&mut tape, &binds, batch)?;
        let t: Vec<usize> = targets.iter().map(|&t| t as usize).collect();
        let loss = tape.cross_entropy(logits, &t)?;
        Ok(tape.value(loss).data()[0].f64())
    }

    /// Loss and its gradient with respect to every parameter, keyed by name.
    pub fn loss_and_grads(
        &self,
        batch: &BatchRef<'_>,
        targets: &[u16],
    ) -> Result<(f64, BTreeMap<String, Tensor<F>>)> {
        let mut tape = Tape::new();
        let binds = self.bind(&mut tape, true);
        let (logits, _) = self.forward_on_tape(&mut tape, &binds, batch)?;
        let t: Vec<usize> = targets.iter().map(|&t| t as usize).collect();
        let loss = tape.cross_entropy(logits, &t)?;
        let value = tape.value(loss).data()[0].f64();
        let mut grads = tape.backward(loss)?;
        let mut out = BTreeMap::new();
        self.visit_params(|name, p| {
            let g = grads
                .take(binds[name])
                .unwrap_or_else(|| Tensor::zeros(p.shape()));
            out.insert(name.to_string(), g);
        });
        Ok((value, out))
    }
}
