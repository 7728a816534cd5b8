//! The MPSoC substrate: access-controlled PL memories, the on-chip SRAM
//! checkpoint slot, the tamper-resistant digest registry and the bitstream
//! library.
//!
//! Every memory operation is attributed to the entity performing it and is
//! checked against the [`AccessMatrix`]. Denied operations leave memory
//! untouched and are recorded as `Violation` trace entries.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::kernel::Cycle;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityKind {
    Controller,
    Tile,
    Application,
    MPBoot,
    Adversary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityId {
    pub kind: EntityKind,
    pub index: u16,
}

impl EntityId {
    pub const CONTROLLER: EntityId = EntityId { kind: EntityKind::Controller, index: 0 };
    pub const MPBOOT: EntityId = EntityId { kind: EntityKind::MPBoot, index: 0 };
    pub const ADVERSARY: EntityId = EntityId { kind: EntityKind::Adversary, index: 0 };

    pub fn new(kind: EntityKind, index: u16) -> Self {
        match kind {
            EntityKind::Controller | EntityKind::MPBoot => EntityId { kind, index: 0 },
            _ => EntityId { kind, index },
        }
    }

    pub fn tile(slot: u16) -> Self {
        EntityId { kind: EntityKind::Tile, index: slot }
    }

    pub fn app(id: u16) -> Self {
        EntityId { kind: EntityKind::Application, index: id }
    }

    pub(crate) fn stream_code(&self) -> u64 {
        ((self.kind as u64) << 16) | self.index as u64
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            EntityKind::Controller => write!(f, "controller"),
            EntityKind::MPBoot => write!(f, "mpboot"),
            EntityKind::Tile => write!(f, "tile{}", self.index),
            EntityKind::Application => write!(f, "app{}", self.index),
            EntityKind::Adversary => write!(f, "adversary{}", self.index),
        }
    }
}

/// SHA-256 digest.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({}..)", &self.to_hex()[..12])
    }
}

pub fn digest(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// Digest over several byte strings, each length-prefixed.
pub fn digest_parts<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    Digest(h.finalize().into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RegionId {
    PlmC,
    PlmTile(u16),
}

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegionId::PlmC => write!(f, "PLM_C"),
            RegionId::PlmTile(i) => write!(f, "PLM_{i}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Access {
    None,
    Read,
    ReadWrite,
}

impl Access {
    pub fn allows_read(self) -> bool {
        self != Access::None
    }

    pub fn allows_write(self) -> bool {
        self == Access::ReadWrite
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Read,
    Write,
}

/// Read/write grants of every entity on every PL memory.
///
/// The controller writes only its own memory and reads all tile memories; a
/// tile writes only its own memory and reads the controller's; applications,
/// MP-Boot and the adversary have no data-path access (MP-Boot and the
/// controller may still reset regions through [`Platform::reset_region`]).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccessMatrix {
    grants: BTreeMap<(EntityId, RegionId), Access>,
}

impl AccessMatrix {
    pub fn rule(entity: EntityId, region: RegionId) -> Access {
        match (entity.kind, region) {
            (EntityKind::Controller, RegionId::PlmC) => Access::ReadWrite,
            (EntityKind::Controller, RegionId::PlmTile(_)) => Access::Read,
            (EntityKind::Tile, RegionId::PlmC) => Access::Read,
            (EntityKind::Tile, RegionId::PlmTile(j)) if j == entity.index => Access::ReadWrite,
            _ => Access::None,
        }
    }

    /// Materializes the grants for `slots` tile slots and `apps` applications.
    pub fn for_platform(slots: u16, apps: u16) -> Self {
        let mut entities = vec![EntityId::CONTROLLER, EntityId::MPBOOT, EntityId::ADVERSARY];
        entities.extend((0..slots).map(EntityId::tile));
        entities.extend((0..apps).map(EntityId::app));
        let mut regions = vec![RegionId::PlmC];
        regions.extend((0..slots).map(RegionId::PlmTile));
        let mut grants = BTreeMap::new();
        for e in &entities {
            for r in &regions {
                grants.insert((*e, *r), Self::rule(*e, *r));
            }
        }
        AccessMatrix { grants }
    }

    pub fn grant(&self, entity: EntityId, region: RegionId) -> Access {
        self.grants.get(&(entity, region)).copied().unwrap_or_else(|| Self::rule(entity, region))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(EntityId, RegionId), &Access)> {
        self.grants.iter()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemoryRegion {
    pub id: RegionId,
    pub owner: EntityId,
    cells: Vec<u8>,
}

impl MemoryRegion {
    pub fn new(id: RegionId, owner: EntityId, capacity: usize) -> Self {
        MemoryRegion { id, owner, cells: vec![0; capacity] }
    }

    pub fn capacity(&self) -> usize {
        self.cells.len()
    }

    pub fn is_zeroed(&self) -> bool {
        self.cells.iter().all(|&b| b == 0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MemError {
    #[error("{entity} has no {mode:?} access to {region}")]
    AccessViolation { entity: EntityId, region: RegionId, mode: Mode },
    #[error("access [{offset}, {offset}+{len}) exceeds {region} capacity {capacity}")]
    OutOfBounds { region: RegionId, offset: usize, len: usize, capacity: usize },
    #[error("no such region {0}")]
    NoSuchRegion(RegionId),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LoadError {
    #[error("{0} may not configure the programmable logic")]
    Unauthorized(EntityId),
    #[error("bitstream {0} digest is not registered in tamper-resistant storage")]
    UnknownDigest(String),
    #[error("no bitstream named {0} in the library")]
    UnknownBitstream(String),
    #[error("slot {0} is not defined by the loaded floorplan")]
    UndefinedSlot(u16),
    #[error("bitstream {0} has the wrong kind for this operation")]
    WrongKind(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{0} is not authorized for this operation")]
pub struct Unauthorized(pub EntityId);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitstreamKind {
    Full,
    Partial,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bitstream {
    pub id: String,
    pub softcore: String,
    pub version: String,
    pub kind: BitstreamKind,
    pub digest: Digest,
    pub load_cost: Cycle,
}

impl Bitstream {
    /// A synthetic bitstream whose digest is derived from its identity.
    pub fn synthetic(softcore: &str, version: &str, kind: BitstreamKind, load_cost: Cycle) -> Self {
        let id = match kind {
            BitstreamKind::Full => format!("{softcore}-floorplan-{version}"),
            BitstreamKind::Partial => format!("{softcore}-{version}"),
        };
        let digest = digest_parts([id.as_bytes(), softcore.as_bytes(), version.as_bytes()]);
        Bitstream { id, softcore: softcore.into(), version: version.into(), kind, digest, load_cost }
    }
}

/// Snapshot of the controller's delivered-request log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Uid of the last request covered, if any request was ever delivered.
    pub last_uid: Option<u64>,
    /// Number of delivered requests covered since genesis.
    pub delivered: u64,
    /// Chained digest over every logged (uid, req, rep) since genesis.
    pub chain: Digest,
    /// Application state carried by the last delivered reply.
    pub state: Vec<u8>,
}

impl Checkpoint {
    pub fn genesis() -> Self {
        Checkpoint { last_uid: None, delivered: 0, chain: Digest::ZERO, state: Vec::new() }
    }

    /// Digest identifying the checkpoint contents.
    pub fn digest(&self) -> Digest {
        let uid = self.last_uid.map(|u| u + 1).unwrap_or(0).to_le_bytes();
        digest_parts([&uid[..], &self.delivered.to_le_bytes()[..], &self.chain.0[..], &self.state[..]])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceKind {
    MemAccess,
    Violation,
    Load,
    Reset,
    Checkpoint,
}

/// One platform trace record; serialized as a JSON Lines object.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub cycle: Cycle,
    pub kind: TraceKind,
    pub entity: String,
    pub region: Option<String>,
    pub offset: Option<u64>,
    pub len: Option<u64>,
    pub outcome: String,
}

/// Fixed geometry of the PL memories.
///
/// The controller memory holds `checkpoint_max` request slots, then
/// `checkpoint_max` log slots, then one header slot. Tile memories hold
/// `checkpoint_max` reply slots. A request or reply for `uid` lives at slot
/// `uid mod checkpoint_max`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub slot_size: usize,
    pub checkpoint_max: usize,
}

impl Layout {
    pub const DEFAULT_SLOT_SIZE: usize = 512;

    pub fn slot_offset(&self, uid: u64) -> usize {
        (uid % self.checkpoint_max as u64) as usize * self.slot_size
    }

    pub fn log_offset(&self, index: usize) -> usize {
        (self.checkpoint_max + index) * self.slot_size
    }

    pub fn header_offset(&self) -> usize {
        2 * self.checkpoint_max * self.slot_size
    }

    pub fn controller_capacity(&self) -> usize {
        (2 * self.checkpoint_max + 1) * self.slot_size
    }

    pub fn tile_capacity(&self) -> usize {
        self.checkpoint_max * self.slot_size
    }
}

#[derive(Clone, Debug, Default)]
pub struct BitstreamLibrary {
    entries: BTreeMap<String, Bitstream>,
}

impl BitstreamLibrary {
    pub fn insert(&mut self, b: Bitstream) {
        self.entries.insert(b.id.clone(), b);
    }

    pub fn get(&self, id: &str) -> Option<&Bitstream> {
        self.entries.get(id)
    }

    pub fn partial(&self, softcore: &str, version: &str) -> Option<&Bitstream> {
        self.entries.values().find(|b| b.kind == BitstreamKind::Partial && b.softcore == softcore && b.version == version)
    }

    /// Versions available for `softcore`, in catalog order.
    pub fn versions(&self, softcore: &str) -> Vec<String> {
        let mut v: Vec<String> = self
            .entries
            .values()
            .filter(|b| b.kind == BitstreamKind::Partial && b.softcore == softcore)
            .map(|b| b.version.clone())
            .collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn iter(&self) -> impl Iterator<Item = &Bitstream> {
        self.entries.values()
    }
}

/// Result of a successful tile load.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoadedTile {
    pub slot: u16,
    pub bitstream: String,
    pub softcore: String,
    pub version: String,
    pub ready_at: Cycle,
}

pub struct Platform {
    layout: Layout,
    slots: u16,
    regions: BTreeMap<RegionId, MemoryRegion>,
    access: AccessMatrix,
    trs: BTreeSet<Digest>,
    library: BitstreamLibrary,
    floorplan: Option<String>,
    sram: Option<Checkpoint>,
    trace: Vec<TraceEntry>,
    record_accesses: bool,
    violations: u64,
}

impl Platform {
    pub fn new(layout: Layout, slots: u16, apps: u16) -> Self {
        let mut regions = BTreeMap::new();
        regions.insert(RegionId::PlmC, MemoryRegion::new(RegionId::PlmC, EntityId::CONTROLLER, layout.controller_capacity()));
        for s in 0..slots {
            regions.insert(RegionId::PlmTile(s), MemoryRegion::new(RegionId::PlmTile(s), EntityId::tile(s), layout.tile_capacity()));
        }
        Platform {
            layout,
            slots,
            regions,
            access: AccessMatrix::for_platform(slots, apps),
            trs: BTreeSet::new(),
            library: BitstreamLibrary::default(),
            floorplan: None,
            sram: None,
            trace: Vec::new(),
            record_accesses: true,
            violations: 0,
        }
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn slots(&self) -> u16 {
        self.slots
    }

    pub fn access(&self) -> &AccessMatrix {
        &self.access
    }

    pub fn library(&self) -> &BitstreamLibrary {
        &self.library
    }

    pub fn region(&self, id: RegionId) -> Option<&MemoryRegion> {
        self.regions.get(&id)
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn violations(&self) -> u64 {
        self.violations
    }

    /// Disables per-access trace records (violations, loads, resets and
    /// checkpoints are always kept). Large batch runs use this.
    pub fn set_record_accesses(&mut self, on: bool) {
        self.record_accesses = on;
    }

    /// Adds a bitstream to the library without registering its digest.
    pub fn add_bitstream(&mut self, b: Bitstream) {
        self.library.insert(b);
    }

    /// Adds a bitstream and registers its digest in the TRS.
    pub fn register_bitstream(&mut self, b: Bitstream) {
        self.trs.insert(b.digest);
        self.library.insert(b);
    }

    pub fn is_registered(&self, d: &Digest) -> bool {
        self.trs.contains(d)
    }

    fn log(
        &mut self,
        now: Cycle,
        kind: TraceKind,
        entity: EntityId,
        region: Option<RegionId>,
        span: Option<(usize, usize)>,
        outcome: &str,
    ) {
        self.trace.push(TraceEntry {
            cycle: now,
            kind,
            entity: entity.to_string(),
            region: region.map(|r| r.to_string()),
            offset: span.map(|(o, _)| o as u64),
            len: span.map(|(_, l)| l as u64),
            outcome: outcome.to_string(),
        });
    }

    fn check(&mut self, now: Cycle, entity: EntityId, region: RegionId, offset: usize, len: usize, mode: Mode) -> Result<(), MemError> {
        let cap = match self.regions.get(&region) {
            Some(r) => r.capacity(),
            None => return Err(MemError::NoSuchRegion(region)),
        };
        let grant = self.access.grant(entity, region);
        let ok = match mode {
            Mode::Read => grant.allows_read(),
            Mode::Write => grant.allows_write(),
        };
        if !ok {
            self.violations += 1;
            self.log(
                now,
                TraceKind::Violation,
                entity,
                Some(region),
                Some((offset, len)),
                match mode {
                    Mode::Read => "denied-read",
                    Mode::Write => "denied-write",
                },
            );
            return Err(MemError::AccessViolation { entity, region, mode });
        }
        if offset.checked_add(len).is_none_or(|end| end > cap) {
            self.log(now, TraceKind::MemAccess, entity, Some(region), Some((offset, len)), "out-of-bounds");
            return Err(MemError::OutOfBounds { region, offset, len, capacity: cap });
        }
        Ok(())
    }

    pub fn mem_write(&mut self, now: Cycle, entity: EntityId, region: RegionId, offset: usize, data: &[u8]) -> Result<(), MemError> {
        self.check(now, entity, region, offset, data.len(), Mode::Write)?;
        let r = self.regions.get_mut(&region).expect("checked");
        r.cells[offset..offset + data.len()].copy_from_slice(data);
        if self.record_accesses {
            self.log(now, TraceKind::MemAccess, entity, Some(region), Some((offset, data.len())), "write");
        }
        Ok(())
    }

    pub fn mem_read(&mut self, now: Cycle, entity: EntityId, region: RegionId, offset: usize, len: usize) -> Result<Vec<u8>, MemError> {
        self.check(now, entity, region, offset, len, Mode::Read)?;
        let r = &self.regions[&region];
        let out = r.cells[offset..offset + len].to_vec();
        if self.record_accesses {
            self.log(now, TraceKind::MemAccess, entity, Some(region), Some((offset, len)), "read");
        }
        Ok(out)
    }

    /// Zeroes a region. Only the controller and MP-Boot may reset memories.
    pub fn reset_region(&mut self, now: Cycle, invoker: EntityId, region: RegionId) -> Result<(), Unauthorized> {
        if !matches!(invoker.kind, EntityKind::Controller | EntityKind::MPBoot) {
            self.violations += 1;
            self.log(now, TraceKind::Violation, invoker, Some(region), None, "denied-reset");
            return Err(Unauthorized(invoker));
        }
        if let Some(r) = self.regions.get_mut(&region) {
            r.cells.iter_mut().for_each(|b| *b = 0);
        }
        self.log(now, TraceKind::Reset, invoker, Some(region), None, "ok");
        Ok(())
    }

    /// Loads the full (floorplan) bitstream defining the tile slots.
    pub fn load_full(&mut self, now: Cycle, invoker: EntityId, bitstream: &str) -> Result<Cycle, LoadError> {
        if invoker.kind != EntityKind::MPBoot {
            self.violations += 1;
            self.log(now, TraceKind::Violation, invoker, None, None, "denied-load");
            return Err(LoadError::Unauthorized(invoker));
        }
        let b = self.library.get(bitstream).cloned().ok_or_else(|| LoadError::UnknownBitstream(bitstream.to_string()))?;
        if b.kind != BitstreamKind::Full {
            return Err(LoadError::WrongKind(b.id));
        }
        if !self.trs.contains(&b.digest) {
            self.log(now, TraceKind::Load, invoker, None, None, "unknown-digest");
            return Err(LoadError::UnknownDigest(b.id));
        }
        let ids: Vec<RegionId> = self.regions.keys().copied().collect();
        for id in ids {
            let _ = self.reset_region(now, invoker, id);
        }
        self.floorplan = Some(b.id.clone());
        self.log(now, TraceKind::Load, invoker, None, None, &format!("full:{}", b.id));
        Ok(now + b.load_cost)
    }

    pub fn floorplan(&self) -> Option<&str> {
        self.floorplan.as_deref()
    }

    /// Loads a partial bitstream into `slot`, flushing the slot's memory
    /// first. Only MP-Boot may configure the PL and only TRS-registered
    /// bitstreams are accepted.
    pub fn load_tile(&mut self, now: Cycle, invoker: EntityId, slot: u16, bitstream: &str) -> Result<LoadedTile, LoadError> {
        if invoker.kind != EntityKind::MPBoot {
            self.violations += 1;
            self.log(now, TraceKind::Violation, invoker, Some(RegionId::PlmTile(slot)), None, "denied-load");
            return Err(LoadError::Unauthorized(invoker));
        }
        if self.floorplan.is_none() || slot >= self.slots {
            return Err(LoadError::UndefinedSlot(slot));
        }
        let b = self.library.get(bitstream).cloned().ok_or_else(|| LoadError::UnknownBitstream(bitstream.to_string()))?;
        if b.kind != BitstreamKind::Partial {
            return Err(LoadError::WrongKind(b.id));
        }
        if !self.trs.contains(&b.digest) {
            self.log(now, TraceKind::Load, invoker, Some(RegionId::PlmTile(slot)), None, "unknown-digest");
            return Err(LoadError::UnknownDigest(b.id));
        }
        self.reset_region(now, invoker, RegionId::PlmTile(slot)).expect("mpboot may reset");
        self.log(now, TraceKind::Load, invoker, Some(RegionId::PlmTile(slot)), None, &format!("partial:{}", b.id));
        Ok(LoadedTile {
            slot,
            bitstream: b.id.clone(),
            softcore: b.softcore.clone(),
            version: b.version.clone(),
            ready_at: now + b.load_cost,
        })
    }

    pub fn checkpoint_store(&mut self, now: Cycle, invoker: EntityId, cp: Checkpoint) -> Result<(), Unauthorized> {
        if invoker.kind != EntityKind::Controller {
            self.violations += 1;
            self.log(now, TraceKind::Violation, invoker, None, None, "denied-checkpoint");
            return Err(Unauthorized(invoker));
        }
        self.log(now, TraceKind::Checkpoint, invoker, None, None, &cp.digest().to_hex());
        self.sram = Some(cp);
        Ok(())
    }

    /// Returns the stored checkpoint; `Ok(None)` means the SRAM slot is empty.
    pub fn checkpoint_fetch(&self, invoker: EntityId) -> Result<Option<Checkpoint>, Unauthorized> {
        if invoker.kind != EntityKind::Controller {
            return Err(Unauthorized(invoker));
        }
        Ok(self.sram.clone())
    }

    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.trace {
            out.push_str(&serde_json::to_string(e).expect("trace entries serialize"));
            out.push('\n');
        }
        out
    }
}
