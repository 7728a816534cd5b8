//! Rejuvenation policies, plan construction and replacement selection.
//!
//! Plans are pure data; the engine in [`crate::system`] executes them as
//! MP-Boot event sequences.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::kernel::Cycle;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefreshMode {
    #[default]
    Refresh,
    Diversify,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    #[default]
    Replace,
    Relocate,
}

/// Target tile count after a rejuvenation. Written as `keep`,
/// `scale_out:<n>` or `scale_in:<n>` in scenario files.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Scaling {
    #[default]
    Keep,
    ScaleOut(u16),
    ScaleIn(u16),
}

impl FromStr for Scaling {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let parse_n = |v: &str| v.parse::<u16>().map_err(|_| format!("bad scaling target in {s:?}"));
        match s.split_once(':') {
            None if s == "keep" => Ok(Scaling::Keep),
            Some(("scale_out", v)) => Ok(Scaling::ScaleOut(parse_n(v)?)),
            Some(("scale_in", v)) => Ok(Scaling::ScaleIn(parse_n(v)?)),
            _ => Err(format!("unknown scaling {s:?}")),
        }
    }
}

impl TryFrom<String> for Scaling {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl fmt::Display for Scaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scaling::Keep => write!(f, "keep"),
            Scaling::ScaleOut(n) => write!(f, "scale_out:{n}"),
            Scaling::ScaleIn(n) => write!(f, "scale_in:{n}"),
        }
    }
}

impl From<Scaling> for String {
    fn from(s: Scaling) -> String {
        s.to_string()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerKind {
    #[default]
    Reactive,
    Proactive,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RejuvPolicy {
    pub refresh_mode: RefreshMode,
    pub placement: Placement,
    pub scaling: Scaling,
    pub trigger: TriggerKind,
    /// Proactive period in cycles; required when `trigger` is proactive.
    pub period: Option<u64>,
}

impl RejuvPolicy {
    pub fn proactive_period(&self) -> Option<u64> {
        match self.trigger {
            TriggerKind::Proactive => self.period,
            TriggerKind::Reactive => None,
        }
    }

    pub fn validate(&self, min_tiles: u16, max_tiles: u16) -> Result<(), String> {
        if self.trigger == TriggerKind::Proactive && !matches!(self.period, Some(p) if p > 0) {
            return Err("proactive trigger needs a positive period".into());
        }
        match self.scaling {
            Scaling::ScaleOut(n) | Scaling::ScaleIn(n) if n < min_tiles || n > max_tiles || n % 2 == 0 => {
                Err(format!("scaling target {n} must be odd and within [{min_tiles}, {max_tiles}]"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    Boot,
    PartialMatch,
    NoQuorum,
    Proactive,
    ReadyTimeout,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanMode {
    Partial { suspects: BTreeSet<u16> },
    Full,
}

impl PlanMode {
    pub fn is_full(&self) -> bool {
        matches!(self, PlanMode::Full)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Checkpoint,
    Flush(u16),
    LoadFloorplan(String),
    Load { slot: u16, bitstream: String },
    ReRoute,
    RestoreState,
    AwaitReady(BTreeSet<u16>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejuvPlan {
    pub id: u64,
    pub reason: Reason,
    pub mode: PlanMode,
    pub actions: Vec<Action>,
    /// Escalation level within the current incident.
    pub level: u8,
    pub refresh_mode: RefreshMode,
    pub placement: Placement,
    /// Tile set after the plan completes.
    pub active_after: BTreeSet<u16>,
    /// Notes on fallbacks taken while building the plan.
    pub notes: Vec<String>,
}

impl RejuvPlan {
    pub fn loads(&self) -> impl Iterator<Item = (u16, &str)> {
        self.actions.iter().filter_map(|a| match a {
            Action::Load { slot, bitstream } => Some((*slot, bitstream.as_str())),
            _ => None,
        })
    }

    pub fn flushed(&self) -> BTreeSet<u16> {
        self.actions.iter().filter_map(|a| if let Action::Flush(s) = a { Some(*s) } else { None }).collect()
    }

    pub fn awaited(&self) -> BTreeSet<u16> {
        self.actions.iter().find_map(|a| if let Action::AwaitReady(s) = a { Some(s.clone()) } else { None }).unwrap_or_default()
    }
}

/// What a tile slot currently runs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotImage {
    pub softcore: String,
    pub version: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Selection {
    pub softcore: String,
    pub version: String,
    pub slot: u16,
    /// Set when Diversify had to fall back to Refresh.
    pub no_diversity: bool,
    /// Set when Relocate had no free slot and replaced in place.
    pub no_free_slot: bool,
}

impl Selection {
    pub fn bitstream(&self) -> String {
        format!("{}-{}", self.softcore, self.version)
    }
}

/// Picks the image and slot replacing `current` at `slot`.
///
/// Diversify walks the version list round-robin from the current version,
/// skipping versions recently loaded in the slot when possible. Relocate
/// takes the first slot of `free` after `slot` in cyclic order.
pub fn select_replacement(
    refresh: RefreshMode,
    placement: Placement,
    current: &SlotImage,
    slot: u16,
    versions: &[String],
    history: &[String],
    free: &BTreeSet<u16>,
) -> Selection {
    let mut no_diversity = false;
    let version = match refresh {
        RefreshMode::Refresh => current.version.clone(),
        RefreshMode::Diversify => {
            let start = versions.iter().position(|v| *v == current.version).unwrap_or(0);
            let ring: Vec<&String> = (1..versions.len()).map(|k| &versions[(start + k) % versions.len()]).collect();
            let recent: BTreeSet<&String> = history.iter().rev().take(versions.len().saturating_sub(1)).collect();
            match ring.iter().find(|v| !recent.contains(*v)).or_else(|| ring.first()) {
                Some(v) => (*v).clone(),
                None => {
                    no_diversity = true;
                    current.version.clone()
                }
            }
        }
    };
    let mut no_free_slot = false;
    let target = match placement {
        Placement::Replace => slot,
        Placement::Relocate => match free.range(slot + 1..).next().or_else(|| free.range(..slot).next()) {
            Some(s) => *s,
            None => {
                no_free_slot = true;
                slot
            }
        },
    };
    Selection { softcore: current.softcore.clone(), version, slot: target, no_diversity, no_free_slot }
}

/// Everything plan construction needs to know about the platform.
#[derive(Clone, Debug)]
pub struct PlanContext<'a> {
    pub policy: &'a RejuvPolicy,
    pub active: &'a BTreeMap<u16, SlotImage>,
    pub pool_slots: u16,
    pub versions: &'a BTreeMap<String, Vec<String>>,
    pub history: &'a BTreeMap<u16, Vec<String>>,
    pub floorplan: &'a str,
    pub stateful: bool,
}

/// Escalation chain: Partial(Refresh), Partial(Diversify), Full,
/// Full(Diversify + Relocate). Full mode starts at level 2.
pub const MAX_LEVEL: u8 = 3;

/// Builds a plan. `Full` requests, and any level ≥ 2, produce a full plan.
pub fn trigger(ctx: &PlanContext<'_>, id: u64, mode: PlanMode, reason: Reason, level: u8, target_n: Option<u16>) -> RejuvPlan {
    let level = if mode.is_full() { level.max(2) } else { level }.min(MAX_LEVEL);
    let (mode, refresh, placement) = match level {
        0 => (mode, ctx.policy.refresh_mode, ctx.policy.placement),
        1 => (mode, RefreshMode::Diversify, ctx.policy.placement),
        2 => (PlanMode::Full, ctx.policy.refresh_mode, ctx.policy.placement),
        _ => (PlanMode::Full, RefreshMode::Diversify, Placement::Relocate),
    };
    let mut notes = Vec::new();
    let mut actions = Vec::new();
    let mut active_after: BTreeSet<u16> = ctx.active.keys().copied().collect();
    let mut loads: Vec<(u16, String)> = Vec::new();
    let empty = Vec::new();
    let versions_of = |sc: &str| ctx.versions.get(sc).unwrap_or(&empty).clone();

    match &mode {
        PlanMode::Partial { suspects } => {
            let mut free: BTreeSet<u16> = (0..ctx.pool_slots).filter(|s| !ctx.active.contains_key(s)).collect();
            for s in suspects {
                let Some(img) = ctx.active.get(s) else { continue };
                let sel = select_replacement(refresh, placement, img, *s, &versions_of(&img.softcore), history(ctx, *s), &free);
                note(&mut notes, &sel, *s);
                actions.push(Action::Flush(*s));
                active_after.remove(s);
                free.remove(&sel.slot);
                if sel.slot != *s {
                    free.insert(*s);
                }
                active_after.insert(sel.slot);
                loads.push((sel.slot, sel.bitstream()));
            }
        }
        PlanMode::Full => {
            if ctx.stateful {
                actions.push(Action::Checkpoint);
            }
            for s in ctx.active.keys() {
                actions.push(Action::Flush(*s));
            }
            actions.push(Action::LoadFloorplan(ctx.floorplan.to_string()));
            // every slot is flushed: relocation rotates the whole tile set
            let n = ctx.active.len() as u16;
            active_after.clear();
            for (s, img) in ctx.active {
                let all_free: BTreeSet<u16> = [(*s + n) % ctx.pool_slots].into_iter().filter(|t| t != s).collect();
                let sel = select_replacement(refresh, placement, img, *s, &versions_of(&img.softcore), history(ctx, *s), &all_free);
                note(&mut notes, &sel, *s);
                active_after.insert(sel.slot);
                loads.push((sel.slot, sel.bitstream()));
            }
        }
    }

    // scaling: grow with fresh images in free slots, shrink by retiring the
    // highest slots not being reloaded
    if let Some(target) = target_n {
        let template = ctx.active.values().next().cloned();
        while (active_after.len() as u16) < target {
            let Some(slot) = (0..ctx.pool_slots).find(|s| !active_after.contains(s)) else {
                notes.push("scale-out: no free slot".into());
                break;
            };
            let Some(img) = &template else { break };
            let v = versions_of(&img.softcore).first().cloned().unwrap_or_else(|| img.version.clone());
            active_after.insert(slot);
            loads.push((slot, format!("{}-{}", img.softcore, v)));
        }
        while (active_after.len() as u16) > target {
            let reloaded: BTreeSet<u16> = loads.iter().map(|(s, _)| *s).collect();
            let victim = active_after.iter().rev().find(|s| !reloaded.contains(s)).copied();
            let Some(v) = victim.or_else(|| active_after.iter().next_back().copied()) else { break };
            active_after.remove(&v);
            loads.retain(|(s, _)| *s != v);
            if !actions.contains(&Action::Flush(v)) {
                actions.push(Action::Flush(v));
            }
        }
    }

    for (slot, bitstream) in &loads {
        actions.push(Action::Load { slot: *slot, bitstream: bitstream.clone() });
    }
    if mode.is_full() {
        actions.push(Action::ReRoute);
    }
    actions.push(Action::RestoreState);
    actions.push(Action::AwaitReady(loads.iter().map(|(s, _)| *s).collect()));

    RejuvPlan { id, reason, mode, actions, level, refresh_mode: refresh, placement, active_after, notes }
}

fn history<'a>(ctx: &'a PlanContext<'_>, slot: u16) -> &'a [String] {
    ctx.history.get(&slot).map(|v| v.as_slice()).unwrap_or(&[])
}

fn note(notes: &mut Vec<String>, sel: &Selection, slot: u16) {
    if sel.no_diversity {
        notes.push(format!("slot {slot}: no diversity available, refreshed"));
    }
    if sel.no_free_slot {
        notes.push(format!("slot {slot}: no free slot, replaced in place"));
    }
}

/// Proactive trigger instants in `(0, horizon]`.
pub fn proactive_schedule(period: u64, horizon: Cycle) -> impl Iterator<Item = Cycle> {
    (1..).map(move |k| Cycle(k * period)).take_while(move |c| *c <= horizon)
}

/// Trace record of one executed plan.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejuvRecord {
    pub cycle: Cycle,
    pub plan: u64,
    pub mode: String,
    pub reason: Reason,
    pub level: u8,
    pub suspects: Vec<u16>,
    pub actions: Vec<Action>,
    pub outcome: String,
    pub duration_cycles: u64,
}
