//! Addresses of normalization sites inside the model.

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockRef {
    Block(usize),
    Final,
}

/// Which normalization inside a block (or the final one).
///
/// `Ln1` is the shared attention-input norm before it is split into
/// `Ln1qk` (feeding queries and keys) and `Ln1v` (feeding values).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SiteKind {
    Ln1,
    Ln1qk,
    Ln1v,
    Ln2,
    Lnf,
}

impl SiteKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SiteKind::Ln1 => "ln1",
            SiteKind::Ln1qk => "ln1qk",
            SiteKind::Ln1v => "ln1v",
            SiteKind::Ln2 => "ln2",
            SiteKind::Lnf => "lnf",
        }
    }
}

impl FromStr for SiteKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Ok(match s {
            "ln1" => SiteKind::Ln1,
            "ln1qk" => SiteKind::Ln1qk,
            "ln1v" => SiteKind::Ln1v,
            "ln2" => SiteKind::Ln2,
            "lnf" => SiteKind::Lnf,
            _ => return Err(Error::Argument(format!("unknown norm kind `{s}`"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NormSiteId {
    pub block: BlockRef,
    pub kind: SiteKind,
}

impl NormSiteId {
    pub const LNF: NormSiteId = NormSiteId {
        block: BlockRef::Final,
        kind: SiteKind::Lnf,
    };

    pub fn new(block: usize, kind: SiteKind) -> Self {
        assert!(kind != SiteKind::Lnf, "lnf lives outside the blocks");
        NormSiteId {
            block: BlockRef::Block(block),
            kind,
        }
    }

    pub fn block_index(self) -> Option<usize> {
        match self.block {
            BlockRef::Block(i) => Some(i),
            BlockRef::Final => None,
        }
    }

    /// For split attention sites, the shared site they were split from.
    pub fn shared_parent(self) -> Option<NormSiteId> {
        match (self.block, self.kind) {
            (BlockRef::Block(i), SiteKind::Ln1qk | SiteKind::Ln1v) => {
                Some(NormSiteId::new(i, SiteKind::Ln1))
            }
            _ => None,
        }
    }
}

impl fmt::Display for NormSiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.block {
            BlockRef::Block(i) => write!(f, "{i}.{}", self.kind.as_str()),
            BlockRef::Final => f.write_str("lnf"),
        }
    }
}

impl FromStr for NormSiteId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let s = s.trim();
        if s == "lnf" {
            return Ok(NormSiteId::LNF);
        }
        let (block, kind) = s
            .split_once('.')
            .ok_or_else(|| Error::Argument(format!("bad site `{s}`")))?;
        let block: usize = block
            .parse()
            .map_err(|_| Error::Argument(format!("bad block index in `{s}`")))?;
        let kind: SiteKind = kind.parse()?;
        if kind == SiteKind::Lnf {
            return Err(Error::Argument(format!("`{s}`: lnf has no block index")));
        }
        Ok(NormSiteId::new(block, kind))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        for s in ["0.ln1", "3.ln1v", "11.ln1qk", "2.ln2", "lnf"] {
            let id: NormSiteId = s.parse().unwrap();
            assert_eq!(id.to_string(), s);
        }
        assert!("4.lnf".parse::<NormSiteId>().is_err());
        assert!("x.ln2".parse::<NormSiteId>().is_err());
        assert!("0.ln3".parse::<NormSiteId>().is_err());
    }

    #[test]
    fn final_sorts_last() {
        assert!(NormSiteId::new(40, SiteKind::Ln2) < NormSiteId::LNF);
        assert!(NormSiteId::new(0, SiteKind::Ln1qk) < NormSiteId::new(0, SiteKind::Ln1v));
    }
}
