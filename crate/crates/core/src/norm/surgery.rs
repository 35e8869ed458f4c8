//! Splitting the attention norm and applying removal events.

use std::fmt;
use std::str::FromStr;

use super::sigma::SigmaStats;
use super::site::{NormSiteId, SiteKind};
use super::state::NormMode;
use crate::error::{Error, Result};
use crate::model::{AttnNorm, GptModel};
use crate::numerics::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NormAction {
    FreezeMain,
    DropEotSpecial,
    DropBosSpecial,
    SetInterpolation(f64),
}

impl fmt::Display for NormAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormAction::FreezeMain => f.write_str("freeze"),
            NormAction::DropEotSpecial => f.write_str("drop_eot"),
            NormAction::DropBosSpecial => f.write_str("drop_bos"),
            NormAction::SetInterpolation(w) => write!(f, "interp:{w}"),
        }
    }
}

impl FromStr for NormAction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "freeze" => NormAction::FreezeMain,
            "drop_eot" => NormAction::DropEotSpecial,
            "drop_bos" => NormAction::DropBosSpecial,
            other => {
                let w = other
                    .strip_prefix("interp:")
                    .and_then(|w| w.parse::<f64>().ok())
                    .ok_or_else(|| Error::Argument(format!("unknown action `{other}`")))?;
                if !(0.0..=1.0).contains(&w) {
                    return Err(Error::Argument(format!("interpolation weight {w} outside [0, 1]")));
                }
                NormAction::SetInterpolation(w)
            }
        })
    }
}

/// Replaces block `block`'s shared attention norm by two identical,
/// independent states feeding queries/keys and values.
pub fn split_ln1<F: Scalar>(model: &mut GptModel<F>, block: usize) -> Result<()> {
    let site = NormSiteId::new(block, SiteKind::Ln1);
    let b = model
        .blocks
        .get_mut(block)
        .ok_or_else(|| Error::Argument(format!("model has no block {block}")))?;
    match &b.attn_norm {
        AttnNorm::Shared(s) => {
            b.attn_norm = AttnNorm::Split {
                qk: s.clone(),
                v: s.clone(),
            };
            Ok(())
        }
        AttnNorm::Split { .. } => Err(Error::state(site, "attention norm is already split")),
        AttnNorm::Removed => Err(Error::state(site, "attention norm was folded away")),
    }
}

/// Splits every block that still has a shared attention norm.
pub fn split_all<F: Scalar>(model: &mut GptModel<F>) -> usize {
    let mut n = 0;
    for i in 0..model.blocks.len() {
        if matches!(model.blocks[i].attn_norm, AttnNorm::Shared(_)) {
            split_ln1(model, i).expect("shared norm splits");
            n += 1;
        }
    }
    n
}

pub fn apply_event<F: Scalar>(
    model: &mut GptModel<F>,
    site: NormSiteId,
    action: NormAction,
    stats: &SigmaStats,
) -> Result<()> {
    let state = model
        .norm_state_mut(site)
        .ok_or_else(|| Error::state(site, "no such norm site in the model"))?;
    let mode = state.mode;
    let load_constants = |stats: &SigmaStats| -> Result<(f64, f64)> {
        let s = stats
            .get(site)
            .ok_or_else(|| Error::Argument(format!("sigma stats do not cover {site}")))?;
        let main = s
            .sigma_bar()
            .filter(|v| *v > 0.0)
            .ok_or_else(|| Error::Argument(format!("no positive sigma_bar for {site}")))?;
        let first = s
            .sigma0_bar()
            .filter(|v| *v > 0.0)
            .ok_or_else(|| Error::Argument(format!("no positive sigma0_bar for {site}")))?;
        Ok((main, first))
    };
    match action {
        NormAction::FreezeMain | NormAction::SetInterpolation(_) => {
            if mode == NormMode::Frozen {
                return Err(Error::state(site, format!("cannot {action}: site is {mode:?}")));
            }
            if let NormAction::SetInterpolation(w) = action {
                if !(0.0..=1.0).contains(&w) {
                    return Err(Error::Argument(format!("interpolation weight {w} outside [0, 1]")));
                }
            }
            // An interpolating site keeps the constants it was given.
            if mode == NormMode::Standard {
                let (main, first) = load_constants(stats)?;
                state.sigma_bar = main;
                state.sigma0_bar = first;
                state.special_bos_active = true;
                state.special_eot_active = site.kind == SiteKind::Ln1v;
            }
            state.mode = match action {
                NormAction::SetInterpolation(w) => NormMode::Interpolating(w),
                _ => NormMode::Frozen,
            };
        }
        NormAction::DropEotSpecial | NormAction::DropBosSpecial => {
            let flag = if action == NormAction::DropEotSpecial {
                &mut state.special_eot_active
            } else {
                &mut state.special_bos_active
            };
            if mode != NormMode::Frozen || !*flag {
                return Err(Error::state(
                    site,
                    format!("cannot {action}: site is {mode:?} without that special case active"),
                ));
            }
            *flag = false;
        }
    }
    Ok(())
}
