//! Average per-token standard deviations at every norm site.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::site::{BlockRef, NormSiteId, SiteKind};
use super::state::{NormMode, TokenClass};
use crate::data::EOT;
use crate::error::{Error, Result};
use crate::model::{sequence_flags, BatchRef, ForwardOptions, GptModel};
use crate::numerics::Scalar;

/// Default number of prompts averaged over.
pub const DEFAULT_PROMPTS: usize = 16;

/// Means for one site. A mean is meaningful only when its count is positive.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SiteSigma {
    pub sigma_bar: f64,
    pub sigma0_bar: f64,
    pub sigma_eot_bar: f64,
    pub n: u64,
    pub n0: u64,
    pub n_eot: u64,
}

impl SiteSigma {
    pub fn sigma_bar(&self) -> Option<f64> {
        (self.n > 0).then_some(self.sigma_bar)
    }

    pub fn sigma0_bar(&self) -> Option<f64> {
        (self.n0 > 0).then_some(self.sigma0_bar)
    }

    pub fn sigma_eot_bar(&self) -> Option<f64> {
        (self.n_eot > 0).then_some(self.sigma_eot_bar)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SigmaStats {
    sites: BTreeMap<NormSiteId, SiteSigma>,
}

#[derive(Default)]
struct Acc {
    sum: [f64; 3],
    n: [u64; 3],
}

impl Acc {
    fn push(&mut self, class: TokenClass, sigma: f64) {
        let i = match class {
            TokenClass::Regular => 0,
            TokenClass::Bos => 1,
            TokenClass::Eot => 2,
        };
        self.sum[i] += sigma;
        self.n[i] += 1;
    }

    fn finish(&self) -> SiteSigma {
        let mean = |i: usize| {
            if self.n[i] > 0 {
                self.sum[i] / self.n[i] as f64
            } else {
                0.0
            }
        };
        SiteSigma {
            sigma_bar: mean(0),
            sigma0_bar: mean(1),
            sigma_eot_bar: mean(2),
            n: self.n[0],
            n0: self.n[1],
            n_eot: self.n[2],
        }
    }
}

impl SigmaStats {
    pub fn insert(&mut self, site: NormSiteId, s: SiteSigma) {
        self.sites.insert(site, s);
    }

    /// Overwrites entries with those present in `fresh`.
    pub fn update(&mut self, fresh: &SigmaStats) {
        for (k, v) in &fresh.sites {
            self.sites.insert(*k, *v);
        }
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NormSiteId, &SiteSigma)> {
        self.sites.iter()
    }

    /// Stats for `site`; a split attention site falls back to the shared
    /// `ln1` it was split from.
    pub fn get(&self, site: NormSiteId) -> Option<&SiteSigma> {
        self.sites
            .get(&site)
            .or_else(|| site.shared_parent().and_then(|p| self.sites.get(&p)))
    }

    /// Accumulates per-row sigmas tagged with token classes into stats.
    pub fn from_observations(obs: impl IntoIterator<Item = (NormSiteId, TokenClass, f64)>) -> Self {
        let mut accs: BTreeMap<NormSiteId, Acc> = BTreeMap::new();
        for (site, class, sigma) in obs {
            accs.entry(site).or_default().push(class, sigma);
        }
        SigmaStats {
            sites: accs.into_iter().map(|(k, a)| (k, a.finish())).collect(),
        }
    }

    /// Whitespace-separated table, one line per site.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# site kind sigma_bar sigma0_bar sigma_eot_bar n n0 n_eot\n");
        for (id, s) in &self.sites {
            let block = match id.block {
                BlockRef::Block(i) => i.to_string(),
                BlockRef::Final => "final".to_string(),
            };
            writeln!(
                out,
                "{block} {} {} {} {} {} {} {}",
                id.kind.as_str(),
                decimal(s.sigma_bar),
                decimal(s.sigma0_bar),
                decimal(s.sigma_eot_bar),
                s.n,
                s.n0,
                s.n_eot
            )
            .unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut sites = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |d: &str| Error::Argument(format!("sigma table line {}: {d}", lineno + 1));
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 8 {
                return Err(bad("expected 8 fields"));
            }
            let kind: SiteKind = f[1].parse()?;
            let id = match (f[0], kind) {
                ("final", SiteKind::Lnf) => NormSiteId::LNF,
                (b, k) if k != SiteKind::Lnf => {
                    NormSiteId::new(b.parse().map_err(|_| bad("bad block"))?, k)
                }
                _ => return Err(bad("lnf must be in block `final`")),
            };
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
            let cnt = |s: &str| s.parse::<u64>().map_err(|_| bad("bad count"));
            let s = SiteSigma {
                sigma_bar: num(f[2])?,
                sigma0_bar: num(f[3])?,
                sigma_eot_bar: num(f[4])?,
                n: cnt(f[5])?,
                n0: cnt(f[6])?,
                n_eot: cnt(f[7])?,
            };
            if sites.insert(id, s).is_some() {
                return Err(bad("duplicate site"));
            }
        }
        Ok(SigmaStats { sites })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Fixed-point rendering with 17 significant digits.
fn decimal(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v:.1}");
    }
    let mag = v.abs().log10().floor() as i32;
    let decimals = (16 - mag).clamp(1, 340) as usize;
    format!("{v:.decimals$}")
}

/// Runs `model` on the first `n_prompts` prompts and averages the per-token
/// standard deviation at the input of every norm site. Every site must be in
/// standard mode.
pub fn collect_sigma<F: Scalar>(
    model: &GptModel<F>,
    prompts: &[Vec<u16>],
    n_prompts: usize,
) -> Result<SigmaStats> {
    for site in model.sites() {
        let s = model.norm_state(site).expect("site exists");
        if s.mode != NormMode::Standard {
            return Err(Error::Precondition(format!(
                "sigma collection needs every site in standard mode; {site} is {:?}",
                s.mode
            )));
        }
    }
    observe_sigma(model, prompts, n_prompts)
}

/// Like [`collect_sigma`] but without the mode check: sites whose divisor
/// no longer depends on the per-token sigma are absent from the result.
pub fn observe_sigma<F: Scalar>(
    model: &GptModel<F>,
    prompts: &[Vec<u16>],
    n_prompts: usize,
) -> Result<SigmaStats> {
    if n_prompts == 0 || prompts.is_empty() {
        return Err(Error::Argument("sigma collection needs at least one prompt".into()));
    }
    if prompts.len() < n_prompts {
        return Err(Error::Argument(format!(
            "{n_prompts} prompts requested, {} available",
            prompts.len()
        )));
    }
    let mut obs = Vec::new();
    for p in &prompts[..n_prompts] {
        if p.is_empty() {
            return Err(Error::Argument("empty prompt".into()));
        }
        let flags = sequence_flags(p, EOT);
        let out = model.forward(
            &BatchRef::new(p, &flags, 1, p.len()),
            ForwardOptions { record_sigma: true },
        )?;
        for (site, sigmas) in out.sigmas {
            for (f, s) in flags.iter().zip(sigmas) {
                obs.push((site, f.class(), s));
            }
        }
    }
    Ok(SigmaStats::from_observations(obs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_statistic() {
        let site = NormSiteId::new(0, SiteKind::Ln2);
        let s = SigmaStats::from_observations((0..10).map(|_| (site, TokenClass::Regular, 0.75)));
        assert_eq!(s.get(site).unwrap().sigma_bar(), Some(0.75));
    }

    #[test]
    fn mean_of_two_rows() {
        let site = NormSiteId::LNF;
        let s = SigmaStats::from_observations([
            (site, TokenClass::Regular, 1.0),
            (site, TokenClass::Regular, 3.0),
        ]);
        assert_eq!(s.get(site).unwrap().sigma_bar(), Some(2.0));
    }

    #[test]
    fn position_zero_only_feeds_sigma0() {
        let site = NormSiteId::new(1, SiteKind::Ln1);
        let s = SigmaStats::from_observations([
            (site, TokenClass::Bos, 40.0),
            (site, TokenClass::Regular, 2.0),
            (site, TokenClass::Eot, 9.0),
        ]);
        let r = s.get(site).unwrap();
        assert_eq!((r.sigma_bar, r.sigma0_bar, r.sigma_eot_bar), (2.0, 40.0, 9.0));
        assert_eq!((r.n, r.n0, r.n_eot), (1, 1, 1));
    }

    #[test]
    fn split_site_falls_back_to_shared() {
        let shared = NormSiteId::new(2, SiteKind::Ln1);
        let s = SigmaStats::from_observations([(shared, TokenClass::Regular, 1.5)]);
        assert!(s.get(NormSiteId::new(2, SiteKind::Ln1v)).is_some());
        assert!(s.get(NormSiteId::new(3, SiteKind::Ln1v)).is_none());
    }

    #[test]
    fn text_round_trip_keeps_full_precision() {
        let mut s = SigmaStats::default();
        s.insert(
            NormSiteId::new(0, SiteKind::Ln1qk),
            SiteSigma {
                sigma_bar: 0.123_456_789_012_345_6,
                sigma0_bar: 12_345.678_901_234_56,
                sigma_eot_bar: 0.0,
                n: 10,
                n0: 2,
                n_eot: 0,
            },
        );
        s.insert(
            NormSiteId::LNF,
            SiteSigma {
                sigma_bar: 3.0,
                sigma0_bar: 1e-7,
                sigma_eot_bar: 2.5,
                n: 1,
                n0: 1,
                n_eot: 1,
            },
        );
        let text = s.to_text();
        assert!(text.contains("final lnf"));
        assert!(text.contains("0 ln1qk 0.123456789012345"));
        assert_eq!(SigmaStats::parse(&text).unwrap(), s);
    }

    #[test]
    fn empty_prompt_set_is_rejected() {
        let m = GptModel::<f32>::init(crate::model::ModelConfig::default(), 0).unwrap();
        assert!(matches!(collect_sigma(&m, &[], 16), Err(Error::Argument(_))));
    }
}
