//! Step-indexed norm removal schedules.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::norm::{NormAction, NormSiteId, SiteKind};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RemovalEvent {
    pub step: u64,
    pub site: NormSiteId,
    pub action: NormAction,
}

impl RemovalEvent {
    /// `site:action`, the form used in metrics logs.
    pub fn label(&self) -> String {
        format!("{}:{}", self.site, self.action)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RemovalSchedule {
    pub name: String,
    events: Vec<RemovalEvent>,
}

const BUNDLED: [(&str, &str); 5] = [
    ("v1", include_str!("../../schedules/v1.tsv")),
    ("v2", include_str!("../../schedules/v2.tsv")),
    ("v3", include_str!("../../schedules/v3.tsv")),
    ("v4", include_str!("../../schedules/v4.tsv")),
    ("v5", include_str!("../../schedules/v5.tsv")),
];

/// Names accepted by [`RemovalSchedule::bundled`].
pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

fn rank(a: NormAction) -> u8 {
    match a {
        NormAction::SetInterpolation(_) => 0,
        NormAction::FreezeMain => 1,
        NormAction::DropEotSpecial | NormAction::DropBosSpecial => 2,
    }
}

/// Whether `action` on a site of `kind` can ever be legal once frozen.
fn special_exists(kind: SiteKind, action: NormAction) -> bool {
    match action {
        NormAction::DropEotSpecial => kind == SiteKind::Ln1v,
        _ => true,
    }
}

enum Row {
    Explicit(NormSiteId),
    /// `N.eot` / `N.bos`.
    Shorthand(usize),
}

impl RemovalSchedule {
    pub fn empty(name: impl Into<String>) -> Self {
        RemovalSchedule {
            name: name.into(),
            events: Vec::new(),
        }
    }

    /// Sorts and validates explicit events.
    pub fn from_events(name: impl Into<String>, mut events: Vec<RemovalEvent>) -> Result<Self> {
        events.sort_by_key(|e| (e.step, rank(e.action)));
        let lines: Vec<usize> = (1..=events.len()).collect();
        validate(&events, &lines)?;
        Ok(RemovalSchedule {
            name: name.into(),
            events,
        })
    }

    /// Parses `step<TAB>site<TAB>action` lines.
    ///
    /// Besides explicit sites, two shorthand rows are accepted: `N.eot` with
    /// `drop_eot` drops the EOT special on `N.ln1v`, and `N.bos` with
    /// `drop_bos` drops the BOS special on every site of block N that the
    /// schedule freezes, plus `lnf` when N is 0. A shorthand drop that would
    /// precede its site's freeze is moved to the freeze step.
    pub fn parse(name: impl Into<String>, text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        let mut last_step = 0u64;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let bad = |detail: String| Error::Schedule { line, detail };
            let fields: Vec<&str> = if content.contains('\t') {
                content.split('\t').map(str::trim).collect()
            } else {
                content.split_whitespace().collect()
            };
            if fields.len() != 3 {
                return Err(bad(format!("expected 3 fields, found {}", fields.len())));
            }
            let step: u64 = fields[0]
                .parse()
                .map_err(|_| bad(format!("bad step `{}`", fields[0])))?;
            if step < last_step {
                return Err(bad(format!("step {step} follows step {last_step}")));
            }
            last_step = step;
            let action: NormAction = fields[2].parse().map_err(|e: Error| bad(e.to_string()))?;
            let row = match fields[1].split_once('.') {
                Some((b, "eot")) | Some((b, "bos")) => {
                    let block: usize = b.parse().map_err(|_| bad(format!("bad block `{b}`")))?;
                    let want = if fields[1].ends_with("eot") {
                        NormAction::DropEotSpecial
                    } else {
                        NormAction::DropBosSpecial
                    };
                    if action != want {
                        return Err(bad(format!("`{}` rows take `{want}`", fields[1])));
                    }
                    Row::Shorthand(block)
                }
                _ => Row::Explicit(fields[1].parse().map_err(|e: Error| bad(e.to_string()))?),
            };
            rows.push((line, step, row, action));
        }

        let freeze_at: HashMap<NormSiteId, u64> = rows
            .iter()
            .filter_map(|(_, step, row, a)| match (row, a) {
                (Row::Explicit(s), NormAction::FreezeMain) => Some((*s, *step)),
                _ => None,
            })
            .collect();

        let mut tagged: Vec<(RemovalEvent, usize)> = Vec::new();
        for (line, step, row, action) in rows {
            match row {
                Row::Explicit(site) => tagged.push((RemovalEvent { step, site, action }, line)),
                Row::Shorthand(block) => {
                    let targets: Vec<NormSiteId> = if action == NormAction::DropEotSpecial {
                        vec![NormSiteId::new(block, SiteKind::Ln1v)]
                    } else {
                        let mut t = vec![
                            NormSiteId::new(block, SiteKind::Ln1),
                            NormSiteId::new(block, SiteKind::Ln1qk),
                            NormSiteId::new(block, SiteKind::Ln1v),
                            NormSiteId::new(block, SiteKind::Ln2),
                        ];
                        if block == 0 {
                            t.push(NormSiteId::LNF);
                        }
                        t.retain(|s| freeze_at.contains_key(s));
                        t
                    };
                    if targets.is_empty() || !targets.iter().all(|s| freeze_at.contains_key(s)) {
                        return Err(Error::Schedule {
                            line,
                            detail: format!("block {block} has no frozen site for `{action}`"),
                        });
                    }
                    for site in targets {
                        let step = step.max(freeze_at[&site]);
                        tagged.push((RemovalEvent { step, site, action }, line));
                    }
                }
            }
        }
        tagged.sort_by_key(|(e, _)| (e.step, rank(e.action)));
        let (events, lines): (Vec<_>, Vec<_>) = tagged.into_iter().unzip();
        validate(&events, &lines)?;
        Ok(RemovalSchedule {
            name: name.into(),
            events,
        })
    }

    /// One of the bundled schedules `v1` … `v5`.
    pub fn bundled(name: &str) -> Result<Self> {
        let (n, text) = BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Argument(format!("no bundled schedule `{name}`")))?;
        Self::parse(*n, text)
    }

    /// A bundled name or a path to a schedule file.
    pub fn load(spec: &str) -> Result<Self> {
        if BUNDLED.iter().any(|(n, _)| *n == spec) {
            return Self::bundled(spec);
        }
        let path = Path::new(spec);
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| spec.to_string());
        Self::parse(name, &text)
    }

    /// Explicit, fully expanded events in file form.
    pub fn serialize(&self) -> String {
        let mut out = format!("# schedule {}\n", self.name);
        for e in &self.events {
            writeln!(out, "{}\t{}\t{}", e.step, e.site, e.action).unwrap();
        }
        out
    }

    pub fn events(&self) -> &[RemovalEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events scheduled exactly at `step`, in application order.
    pub fn events_at(&self, step: u64) -> &[RemovalEvent] {
        let lo = self.events.partition_point(|e| e.step < step);
        let hi = self.events.partition_point(|e| e.step <= step);
        &self.events[lo..hi]
    }

    pub fn last_step(&self) -> Option<u64> {
        self.events.last().map(|e| e.step)
    }

    /// Distinct steps carrying a freeze, in order.
    pub fn freeze_steps(&self) -> Vec<u64> {
        let mut s: Vec<u64> = self
            .events
            .iter()
            .filter(|e| e.action == NormAction::FreezeMain)
            .map(|e| e.step)
            .collect();
        s.dedup();
        s
    }

    /// Multiplies every step by `factor`, rounding half up and clamping to
    /// at least 1. Distinct original steps stay distinct and ordered.
    pub fn rescale(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::Argument(format!("scale factor {factor} must be positive")));
        }
        let mut map: BTreeMap<u64, u64> = BTreeMap::new();
        let mut prev: Option<u64> = None;
        for e in &self.events {
            if map.contains_key(&e.step) {
                continue;
            }
            let scaled = (e.step as f64 * factor + 0.5).floor().max(1.0) as u64;
            let s = match prev {
                Some(p) => scaled.max(p + 1),
                None => scaled,
            };
            map.insert(e.step, s);
            prev = Some(s);
        }
        let events = self
            .events
            .iter()
            .map(|e| RemovalEvent {
                step: map[&e.step],
                ..*e
            })
            .collect();
        Ok(RemovalSchedule {
            name: self.name.clone(),
            events,
        })
    }

    /// Drops events for blocks at or beyond `n_layers`.
    pub fn restrict_to_layers(&self, n_layers: usize) -> Self {
        RemovalSchedule {
            name: self.name.clone(),
            events: self
                .events
                .iter()
                .filter(|e| e.site.block_index().is_none_or(|b| b < n_layers))
                .copied()
                .collect(),
        }
    }
}

/// Per-site progression: interpolations, then one freeze, then each
/// existing special dropped at most once. `lines[i]` locates `events[i]`.
fn validate(events: &[RemovalEvent], lines: &[usize]) -> Result<()> {
    #[derive(Default)]
    struct Seen {
        frozen: bool,
        eot: bool,
        bos: bool,
    }
    let mut seen: HashMap<NormSiteId, Seen> = HashMap::new();
    for (e, &line) in events.iter().zip(lines) {
        let bad = |detail: String| Error::Schedule { line, detail };
        let s = seen.entry(e.site).or_default();
        match e.action {
            NormAction::SetInterpolation(_) if s.frozen => {
                return Err(bad(format!("{} interpolates after its freeze", e.site)))
            }
            NormAction::SetInterpolation(_) => {}
            NormAction::FreezeMain if s.frozen => {
                return Err(bad(format!("{} is frozen twice", e.site)))
            }
            NormAction::FreezeMain => s.frozen = true,
            a => {
                if !s.frozen {
                    return Err(bad(format!("{} drops a special before its freeze", e.site)));
                }
                if !special_exists(e.site.kind, a) {
                    return Err(bad(format!("{} has no EOT special to drop", e.site)));
                }
                let flag = if a == NormAction::DropEotSpecial {
                    &mut s.eot
                } else {
                    &mut s.bos
                };
                if *flag {
                    return Err(bad(format!("{} drops `{a}` twice", e.site)));
                }
                *flag = true;
            }
        }
    }
    Ok(())
}
