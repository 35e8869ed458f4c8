//! Composing frozen norm sites into the linear maps that consume them.

use super::state::NormState;
use crate::error::{Error, Result};
use crate::model::{AttnNorm, GptModel};
use crate::numerics::{Scalar, Tensor};

/// Folds `state` into the weight `w` (`[H × N]`, applied as `x·w`) and bias
/// `b` (`[N]`): the affine map `γ ⊙ (C x) / σ̄ + β` followed by `x·w + b`
/// becomes a single `x·w' + b'`.
pub fn fold_into_linear(state: &NormState<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let (h, n) = w.as_matrix_dims();
    if state.width() != h || b.len() != n || w.ndim() != 2 {
        return Err(Error::Dimension(format!(
            "cannot fold a width-{} norm into a {:?} weight with {} biases",
            state.width(),
            w.shape(),
            b.len()
        )));
    }
    let gamma = state.gamma.data();
    let beta = state.beta.data();
    let mut a = w.data().to_vec();
    for j in 0..h {
        let s = gamma[j] / state.sigma_bar;
        for v in &mut a[j * n..(j + 1) * n] {
            *v *= s;
        }
    }
    if state.center_mean {
        let mut mean = vec![0.0; n];
        for j in 0..h {
            for (m, v) in mean.iter_mut().zip(&a[j * n..(j + 1) * n]) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= h as f64;
        }
        for j in 0..h {
            for (v, m) in a[j * n..(j + 1) * n].iter_mut().zip(&mean) {
                *v -= m;
            }
        }
    }
    let mut bias = b.data().to_vec();
    for (j, &bj) in beta.iter().enumerate().take(h) {
        if bj != 0.0 {
            for (o, v) in bias.iter_mut().zip(&w.data()[j * n..(j + 1) * n]) {
                *o += bj * v;
            }
        }
    }
    Ok((Tensor::new(vec![h, n], a)?, Tensor::new(vec![n], bias)?))
}

fn transpose(t: &Tensor<f64>) -> Tensor<f64> {
    let (r, c) = t.as_matrix_dims();
    let d = t.data();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = d[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out).expect("shape matches")
}

/// Exports a model with no normalization operations. Every site must be
/// frozen with both special cases dropped. The arithmetic runs in 64 bits.
pub fn fold_and_export<F: Scalar>(model: &GptModel<F>) -> Result<GptModel<F>> {
    let offending: Vec<String> = model
        .sites()
        .into_iter()
        .filter(|s| !model.norm_state(*s).expect("site exists").is_fully_frozen())
        .map(|s| s.to_string())
        .collect();
    if !offending.is_empty() {
        return Err(Error::Precondition(format!(
            "sites not fully frozen: {}",
            offending.join(", ")
        )));
    }
    let mut m: GptModel<f64> = model.cast();
    for s in m.sites() {
        m.norm_state(s).expect("site exists").validate()?;
    }
    for b in &mut m.blocks {
        let (qk, v) = match std::mem::replace(&mut b.attn_norm, AttnNorm::Removed) {
            AttnNorm::Shared(s) => (Some(s.clone()), Some(s)),
            AttnNorm::Split { qk, v } => (Some(qk), Some(v)),
            AttnNorm::Removed => (None, None),
        };
        if let Some(s) = qk {
            (b.w_qk, b.b_qk) = fold_into_linear(&s, &b.w_qk, &b.b_qk)?;
        }
        if let Some(s) = v {
            (b.w_v, b.b_v) = fold_into_linear(&s, &b.w_v, &b.b_v)?;
        }
        if let Some(s) = b.mlp_norm.take() {
            (b.w_fc, b.b_fc) = fold_into_linear(&s, &b.w_fc, &b.b_fc)?;
        }
    }
    let unembed = m.unembed.take().unwrap_or_else(|| transpose(&m.wte));
    let v = unembed.shape()[1];
    let bias = m.unembed_bias.take().unwrap_or_else(|| Tensor::zeros(&[v]));
    let (unembed, bias) = match m.lnf.take() {
        Some(s) => fold_into_linear(&s, &unembed, &bias)?,
        None => (unembed, bias),
    };
    m.unembed = Some(unembed);
    m.unembed_bias = Some(bias);
    m.config.tie_embeddings = false;
    Ok(m.cast())
}
