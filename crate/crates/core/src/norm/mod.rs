//! Normalization sites: forward semantics, statistics, surgery and folding.

pub mod fold;
pub mod forward;
pub mod sigma;
pub mod site;
pub mod state;
pub mod surgery;

pub use fold::{fold_and_export, fold_into_linear};
pub use forward::{norm_forward, norm_on_tape};
pub use sigma::{collect_sigma, observe_sigma, SigmaStats, SiteSigma, DEFAULT_PROMPTS};
pub use site::{BlockRef, NormSiteId, SiteKind};
pub use state::{NormMode, NormState, TokenClass, TokenFlags};
pub use surgery::{apply_event, split_all, split_ln1, NormAction};
