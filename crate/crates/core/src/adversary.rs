//! Scenario files and the fault schedules compiled from them.
//!
//! The adversary never calls privileged platform operations: it acts only
//! through tile behaviors, in-transit transforms on the read-notification
//! path, and application traffic.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::app::AppKind;
use crate::config::{Hashing, PlatformConfig, RateLimit};
use crate::cost::CostModel;
use crate::kernel::Cycle;
use crate::metrics::Protocol;
use crate::rejuvenation::{RejuvPolicy, Scaling};
use crate::tiles::Behavior;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid scenario: {0}")]
pub struct InvalidScenario(pub String);

fn invalid<T>(msg: impl Into<String>) -> Result<T, InvalidScenario> {
    Err(InvalidScenario(msg.into()))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workload {
    pub requests: u64,
    #[serde(default)]
    pub interarrival_cycles: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    /// `tile:<slot>`, `network`, `network:<slot>` or `app:<id>`.
    pub target: String,
    pub behavior: String,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
    #[serde(default)]
    pub onset: u64,
    /// `None` means permanent.
    #[serde(default)]
    pub duration: Option<u64>,
}

/// Optional knobs layered over the defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Overrides {
    pub checkpoint_max: Option<usize>,
    pub timer_budget: Option<u64>,
    pub ready_budget: Option<u64>,
    pub stateful: Option<bool>,
    pub slot_size: Option<usize>,
    pub message_bytes: Option<usize>,
    pub min_tiles: Option<u16>,
    pub max_tiles: Option<u16>,
    pub spare_slots: Option<u16>,
    pub softcore: Option<String>,
    pub versions: Option<Vec<String>>,
    pub delta_min: Option<u64>,
    pub burst_max: Option<u32>,
    pub window: Option<u64>,
    pub per_reader_messages: Option<bool>,
    pub protocols: Option<Vec<Protocol>>,
    pub cost: Option<CostModel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub seed: u64,
    pub f: u16,
    pub n: u16,
    pub app: AppKind,
    pub workload: Workload,
    pub hashing: Hashing,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub policy: RejuvPolicy,
    #[serde(default)]
    pub overrides: Overrides,
}

impl ScenarioSpec {
    pub fn from_json(text: &str) -> Result<Self, InvalidScenario> {
        serde_json::from_str(text).map_err(|e| InvalidScenario(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// A fault-free scenario with default knobs.
    pub fn basic(name: &str, seed: u64, f: u16, app: AppKind, requests: u64) -> Self {
        ScenarioSpec {
            name: name.into(),
            seed,
            f,
            n: 2 * f + 1,
            app,
            workload: Workload { requests, interarrival_cycles: 0 },
            hashing: Hashing::Hardware,
            faults: Vec::new(),
            policy: RejuvPolicy::default(),
            overrides: Overrides::default(),
        }
    }

    pub fn message_bytes(&self) -> usize {
        self.overrides.message_bytes.unwrap_or(32)
    }

    pub fn stateful(&self) -> bool {
        self.overrides.stateful.unwrap_or(self.app.is_stateful())
    }

    /// Protocols to run: explicit list, or H-Quorum under the scenario's hashing.
    pub fn protocols(&self) -> Vec<Protocol> {
        self.overrides.protocols.clone().unwrap_or_else(|| vec![Protocol::hquorum(self.hashing)])
    }

    pub fn platform_config(&self) -> PlatformConfig {
        let o = &self.overrides;
        let d = PlatformConfig::default();
        let rl = RateLimit::default();
        let softcore = o.softcore.clone().unwrap_or_else(|| d.softcore[0].clone());
        PlatformConfig {
            softcore: vec![softcore],
            version: vec![o.versions.clone().unwrap_or_else(|| d.version[0].clone())],
            min_tiles: o.min_tiles.unwrap_or(3),
            max_tiles: o.max_tiles.unwrap_or(self.n.max(d.max_tiles)),
            spare_slots: o.spare_slots.unwrap_or(d.spare_slots),
            stateful: self.stateful(),
            rejuv_policy: self.policy,
            checkpoint_max: o.checkpoint_max.unwrap_or(d.checkpoint_max),
            slot_size: o.slot_size.unwrap_or(d.slot_size),
            timer_budget: o.timer_budget,
            hashing: self.hashing,
            cost_model: o.cost.unwrap_or_default(),
            rate_limit: RateLimit {
                delta_min: o.delta_min.unwrap_or(rl.delta_min),
                burst_max: o.burst_max.unwrap_or(rl.burst_max),
                window: o.window.unwrap_or(rl.window),
            },
            per_reader_messages: o.per_reader_messages.unwrap_or(false),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Requests,
    Replies,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkFault {
    pub drop_prob: f64,
    pub corrupt_prob: f64,
    /// Fixed corruption pattern; identical across paths, so corrupted
    /// replies can collude. Random single-byte flips when absent.
    pub xor_mask: Option<Vec<u8>>,
    pub direction: Direction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FaultKind {
    Tile {
        slot: u16,
        behavior: Behavior,
        at_uid: Option<u64>,
        /// Bind to this version instead of whatever runs at onset.
        version: Option<String>,
        /// Cleared by any reload of the slot.
        transient: bool,
    },
    Network {
        slot: Option<u16>,
        fault: NetworkFault,
    },
    Flood {
        app: u16,
        burst: u32,
        period: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    pub id: usize,
    pub kind: FaultKind,
    pub onset: Cycle,
    pub until: Option<Cycle>,
}

impl Fault {
    pub fn active_at(&self, now: Cycle) -> bool {
        now >= self.onset && self.until.is_none_or(|u| now < u)
    }

    /// Slot whose tile this fault makes faulty, if any.
    pub fn faulty_slot(&self) -> Option<u16> {
        match &self.kind {
            FaultKind::Tile { slot, .. } => Some(*slot),
            FaultKind::Network { slot, .. } => *slot,
            FaultKind::Flood { .. } => None,
        }
    }
}

/// A validated scenario with its compiled fault schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct CompiledScenario {
    pub spec: ScenarioSpec,
    pub config: PlatformConfig,
    pub faults: Vec<Fault>,
    /// Workload submission instants, one per request.
    pub submissions: Vec<Cycle>,
}

struct Params<'a> {
    map: &'a BTreeMap<String, Value>,
    used: BTreeSet<&'static str>,
    ctx: String,
}

impl<'a> Params<'a> {
    fn u64(&mut self, key: &'static str) -> Result<Option<u64>, InvalidScenario> {
        self.used.insert(key);
        match self.map.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v.as_u64().map(Some).ok_or_else(|| InvalidScenario(format!("{}: {key} must be a non-negative integer", self.ctx))),
        }
    }

    fn prob(&mut self, key: &'static str) -> Result<f64, InvalidScenario> {
        self.used.insert(key);
        match self.map.get(key) {
            None => Ok(0.0),
            Some(v) => match v.as_f64() {
                Some(p) if (0.0..=1.0).contains(&p) => Ok(p),
                _ => invalid(format!("{}: {key} must be a probability", self.ctx)),
            },
        }
    }

    fn bytes(&mut self, key: &'static str) -> Result<Option<Vec<u8>>, InvalidScenario> {
        self.used.insert(key);
        match self.map.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::Number(n)) => match n.as_u64() {
                Some(b) if b <= 255 => Ok(Some(vec![b as u8])),
                _ => invalid(format!("{}: {key} must be a byte", self.ctx)),
            },
            Some(Value::Array(a)) if !a.is_empty() => a
                .iter()
                .map(|v| v.as_u64().filter(|b| *b <= 255).map(|b| b as u8))
                .collect::<Option<Vec<u8>>>()
                .map(Some)
                .ok_or_else(|| InvalidScenario(format!("{}: {key} must be a byte array", self.ctx))),
            _ => invalid(format!("{}: {key} must be a byte or byte array", self.ctx)),
        }
    }

    fn string(&mut self, key: &'static str) -> Result<Option<String>, InvalidScenario> {
        self.used.insert(key);
        match self.map.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            _ => invalid(format!("{}: {key} must be a string", self.ctx)),
        }
    }

    fn flag(&mut self, key: &'static str) -> Result<bool, InvalidScenario> {
        self.used.insert(key);
        match self.map.get(key) {
            None => Ok(false),
            Some(Value::Bool(b)) => Ok(*b),
            _ => invalid(format!("{}: {key} must be a boolean", self.ctx)),
        }
    }

    fn finish(self) -> Result<(), InvalidScenario> {
        match self.map.keys().find(|k| !self.used.contains(k.as_str())) {
            Some(k) => invalid(format!("{}: unknown parameter {k:?}", self.ctx)),
            None => Ok(()),
        }
    }
}

fn parse_target(t: &str) -> Result<(&str, Option<u16>), InvalidScenario> {
    match t.split_once(':') {
        None => Ok((t, None)),
        Some((k, v)) => v.parse().map(|i| (k, Some(i))).map_err(|_| InvalidScenario(format!("bad target {t:?}"))),
    }
}

fn compile_fault(id: usize, fs: &FaultSpec, pool: u16, versions: &[String]) -> Result<Fault, InvalidScenario> {
    let mut p = Params { map: &fs.params, used: BTreeSet::new(), ctx: format!("fault {id} ({})", fs.behavior) };
    let (kind, index) = parse_target(&fs.target)?;
    let onset = Cycle(fs.onset);
    let until = match fs.duration {
        Some(0) => return invalid(format!("fault {id}: zero duration")),
        Some(d) => Some(onset + d),
        None => None,
    };
    let kind = match kind {
        "tile" => {
            let Some(slot) = index else { return invalid(format!("fault {id}: tile target needs a slot")) };
            if slot >= pool {
                return invalid(format!("fault {id}: slot {slot} outside the {pool}-slot pool"));
            }
            let behavior = match fs.behavior.as_str() {
                "correct" => Behavior::Correct,
                "crash" => Behavior::Crash,
                "slow" => Behavior::Slow { extra_cycles: p.u64("extra_cycles")?.unwrap_or(1_000_000) },
                "wrong_output" => Behavior::WrongOutput { mask: p.bytes("mask")?.unwrap_or_else(|| vec![0x20]) },
                "bad_digest" => Behavior::BadDigest,
                "wrong_uid" => Behavior::WrongUid,
                "silent" => Behavior::Silent,
                "tamper_plmc" => Behavior::TamperPlmc,
                "tamper_peer" => {
                    let peer = p.u64("peer")?.ok_or_else(|| InvalidScenario(format!("fault {id}: tamper_peer needs a peer")))?;
                    if peer >= pool as u64 || peer == slot as u64 {
                        return invalid(format!("fault {id}: bad peer {peer}"));
                    }
                    Behavior::TamperPeer { peer: peer as u16 }
                }
                "stale_replay" => Behavior::StaleReplay,
                other => return invalid(format!("fault {id}: unknown tile behavior {other:?}")),
            };
            let version = p.string("version")?;
            if let Some(v) = &version {
                if !versions.contains(v) {
                    return invalid(format!("fault {id}: unknown version {v:?}"));
                }
            }
            FaultKind::Tile { slot, behavior, at_uid: p.u64("at_uid")?, version, transient: p.flag("transient")? }
        }
        "network" => {
            if fs.behavior != "network" {
                return invalid(format!("fault {id}: network targets take the network behavior"));
            }
            if let Some(s) = index {
                if s >= pool {
                    return invalid(format!("fault {id}: slot {s} outside the pool"));
                }
            }
            let direction = match p.string("direction")?.as_deref() {
                None | Some("replies") => Direction::Replies,
                Some("requests") => Direction::Requests,
                Some("both") => Direction::Both,
                Some(d) => return invalid(format!("fault {id}: unknown direction {d:?}")),
            };
            let fault = NetworkFault {
                drop_prob: p.prob("drop_prob")?,
                corrupt_prob: p.prob("corrupt_prob")?,
                xor_mask: p.bytes("xor_mask")?,
                direction,
            };
            if fault.xor_mask.as_ref().is_some_and(|m| m.iter().all(|b| *b == 0)) {
                return invalid(format!("fault {id}: xor_mask must flip at least one bit"));
            }
            FaultKind::Network { slot: index, fault }
        }
        "app" => {
            let Some(app) = index else { return invalid(format!("fault {id}: app target needs an id")) };
            if app == 0 {
                return invalid(format!("fault {id}: app 0 is the workload application"));
            }
            if fs.behavior != "flood" {
                return invalid(format!("fault {id}: application targets take the flood behavior"));
            }
            let burst = p.u64("burst")?.unwrap_or(64) as u32;
            let period = p.u64("period")?.unwrap_or(1024);
            if period == 0 || burst == 0 {
                return invalid(format!("fault {id}: flood needs positive burst and period"));
            }
            FaultKind::Flood { app, burst, period }
        }
        other => return invalid(format!("fault {id}: unknown target kind {other:?}")),
    };
    p.finish()?;
    Ok(Fault { id, kind, onset, until })
}

/// Largest number of distinct faulty slots active at one instant.
pub fn max_concurrent_faulty(faults: &[Fault]) -> usize {
    faults
        .iter()
        .map(|f| f.onset)
        .map(|t| faults.iter().filter(|g| g.active_at(t)).filter_map(|g| g.faulty_slot()).collect::<BTreeSet<u16>>().len())
        .max()
        .unwrap_or(0)
}

/// Validates a scenario and compiles its schedule. With `f_bounded` set,
/// schedules with more than f concurrently faulty tiles are rejected.
pub fn compile(spec: &ScenarioSpec, f_bounded: bool) -> Result<CompiledScenario, InvalidScenario> {
    let config = spec.platform_config();
    if spec.n != 2 * spec.f + 1 {
        return invalid(format!("n = {} but 2f+1 = {}", spec.n, 2 * spec.f + 1));
    }
    config.validate(spec.n, spec.f).map_err(InvalidScenario)?;
    config.rejuv_policy.validate(config.min_tiles, config.max_tiles).map_err(InvalidScenario)?;
    let msg = spec.message_bytes();
    let req_room = config.slot_size.saturating_sub(crate::wire::RequestMessage::HEADER);
    let sample_len = match spec.app {
        AppKind::Counter => 5,
        AppKind::VectorMultiply => 88,
        _ => msg,
    };
    if sample_len > req_room {
        return invalid(format!("{sample_len}-byte requests do not fit a {}-byte slot", config.slot_size));
    }
    if spec.workload.requests == 0 && spec.faults.is_empty() && spec.policy.proactive_period().is_none() {
        // nothing happens; still valid
    }
    let pool = config.pool_slots();
    let faults =
        spec.faults.iter().enumerate().map(|(i, fs)| compile_fault(i, fs, pool, &config.version[0])).collect::<Result<Vec<_>, _>>()?;
    if f_bounded {
        let worst = max_concurrent_faulty(&faults);
        if worst > spec.f as usize {
            return invalid(format!("{worst} concurrently faulty tiles exceed f = {}", spec.f));
        }
        let sticky = faults.iter().any(|f| matches!(&f.kind, FaultKind::Tile { transient: false, .. }));
        if sticky && config.version[0].len() < 2 && pool <= spec.n {
            return invalid("persistent tile faults need a second version or a spare slot");
        }
    }
    if let Scaling::ScaleOut(t) = config.rejuv_policy.scaling {
        if t > pool {
            return invalid(format!("scale-out target {t} exceeds the {pool}-slot pool"));
        }
    }
    let submissions = (0..spec.workload.requests).map(|k| Cycle(k * spec.workload.interarrival_cycles)).collect();
    Ok(CompiledScenario { spec: spec.clone(), config, faults, submissions })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transit {
    Intact,
    Dropped,
    Corrupted(Vec<u8>),
}

/// Applies a network fault to a payload in flight. Corruption flips at
/// least one payload byte; headers (who wrote where) are never touched.
pub fn network_transform<R: Rng>(payload: &[u8], fault: &NetworkFault, rng: &mut R) -> Transit {
    if fault.drop_prob > 0.0 && rng.gen_bool(fault.drop_prob) {
        return Transit::Dropped;
    }
    if payload.is_empty() || fault.corrupt_prob <= 0.0 || !rng.gen_bool(fault.corrupt_prob) {
        return Transit::Intact;
    }
    let mut out = payload.to_vec();
    match &fault.xor_mask {
        Some(mask) => out.iter_mut().enumerate().for_each(|(i, b)| *b ^= mask[i % mask.len()]),
        None => {
            let i = rng.gen_range(0..out.len());
            out[i] ^= rng.gen_range(1..=255u8);
        }
    }
    Transit::Corrupted(out)
}

/// Run-time binding of a fault to what it compromised.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Binding {
    Unbound,
    /// Tile fault bound to a slot image (and a load epoch when transient).
    Image {
        version: String,
        epoch: Option<u64>,
    },
    /// Network fault bound to a route epoch.
    Route(u64),
}

/// Mutable view of the compiled faults during a run.
#[derive(Clone, Debug)]
pub struct Adversary {
    pub faults: Vec<Fault>,
    bindings: Vec<Binding>,
}

impl Adversary {
    pub fn new(faults: Vec<Fault>) -> Self {
        let bindings = faults
            .iter()
            .map(|f| match &f.kind {
                FaultKind::Tile { version: Some(v), .. } => Binding::Image { version: v.clone(), epoch: None },
                _ => Binding::Unbound,
            })
            .collect();
        Adversary { faults, bindings }
    }

    /// Behavior of the tile in `slot` running `version` (load `epoch`) for
    /// request `uid` at `now`. Faults bind on first eligibility.
    pub fn tile_behavior(&mut self, now: Cycle, slot: u16, version: &str, epoch: u64, uid: Option<u64>) -> Behavior {
        let mut out = Behavior::Correct;
        for (f, b) in self.faults.iter().zip(self.bindings.iter_mut()) {
            let FaultKind::Tile { slot: s, behavior, at_uid, transient, .. } = &f.kind else { continue };
            if *s != slot || !f.active_at(now) {
                continue;
            }
            if *b == Binding::Unbound {
                *b = Binding::Image { version: version.to_string(), epoch: transient.then_some(epoch) };
            }
            let Binding::Image { version: bv, epoch: be } = &*b else { continue };
            if bv != version || be.is_some_and(|e| e != epoch) {
                continue;
            }
            if let (Some(a), Some(u)) = (at_uid, uid) {
                if u < *a {
                    continue;
                }
            }
            if out == Behavior::Correct {
                out = behavior.clone();
            }
        }
        out
    }

    /// Network faults currently affecting `slot`'s path in `dir`.
    pub fn network_faults(&mut self, now: Cycle, slot: u16, route_epoch: u64, dir: Direction) -> Vec<NetworkFault> {
        let mut out = Vec::new();
        for (f, b) in self.faults.iter().zip(self.bindings.iter_mut()) {
            let FaultKind::Network { slot: s, fault } = &f.kind else { continue };
            if s.is_some_and(|s| s != slot) || !f.active_at(now) {
                continue;
            }
            if fault.direction != Direction::Both && fault.direction != dir {
                continue;
            }
            if *b == Binding::Unbound {
                *b = Binding::Route(route_epoch);
            }
            if *b == Binding::Route(route_epoch) {
                out.push(fault.clone());
            }
        }
        out
    }

    pub fn floods(&self) -> impl Iterator<Item = (usize, &Fault)> {
        self.faults.iter().enumerate().filter(|(_, f)| matches!(f.kind, FaultKind::Flood { .. }))
    }

    pub fn binding(&self, id: usize) -> &Binding {
        &self.bindings[id]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec_with(faults: Vec<FaultSpec>) -> ScenarioSpec {
        let mut s = ScenarioSpec::basic("t", 1, 1, AppKind::NullOp, 10);
        s.faults = faults;
        s
    }

    fn fault(target: &str, behavior: &str, params: Value, onset: u64, duration: Option<u64>) -> FaultSpec {
        let params = if params.is_null() { BTreeMap::new() } else { serde_json::from_value(params).unwrap() };
        FaultSpec { target: target.into(), behavior: behavior.into(), params, onset, duration }
    }

    #[test]
    fn fault_free_schedule() {
        let c = compile(&spec_with(vec![]), true).unwrap();
        assert_eq!(c.submissions.len(), 10);
        assert!(c.faults.is_empty());
    }

    #[test]
    fn wrong_output_binds_to_tile_at_uid() {
        let c = compile(&spec_with(vec![fault("tile:1", "wrong_output", serde_json::json!({"at_uid": 5}), 0, None)]), true).unwrap();
        let mut adv = Adversary::new(c.faults);
        assert_eq!(adv.tile_behavior(Cycle(0), 1, "v1", 1, Some(4)), Behavior::Correct);
        assert!(matches!(adv.tile_behavior(Cycle(0), 1, "v1", 1, Some(5)), Behavior::WrongOutput { .. }));
        assert_eq!(adv.tile_behavior(Cycle(0), 0, "v1", 1, Some(5)), Behavior::Correct);
        // a diversified image escapes the binding
        assert_eq!(adv.tile_behavior(Cycle(0), 1, "v2", 2, Some(9)), Behavior::Correct);
    }

    #[test]
    fn transient_fault_cleared_by_reload() {
        let c = compile(&spec_with(vec![fault("tile:0", "silent", serde_json::json!({"transient": true}), 0, None)]), true).unwrap();
        let mut adv = Adversary::new(c.faults);
        assert_eq!(adv.tile_behavior(Cycle(0), 0, "v1", 3, None), Behavior::Silent);
        assert_eq!(adv.tile_behavior(Cycle(1), 0, "v1", 4, None), Behavior::Correct);
    }

    #[test]
    fn two_concurrent_faults_violate_f_bound() {
        let s = spec_with(vec![fault("tile:0", "crash", Value::Null, 0, None), fault("tile:1", "silent", Value::Null, 100, Some(50))]);
        assert!(compile(&s, true).is_err());
        assert!(compile(&s, false).is_ok());
        let sequential =
            spec_with(vec![fault("tile:0", "crash", Value::Null, 0, Some(100)), fault("tile:1", "silent", Value::Null, 100, Some(50))]);
        assert!(compile(&sequential, true).is_ok());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(compile(&spec_with(vec![fault("tile:9", "crash", Value::Null, 0, None)]), false).is_err());
        assert!(compile(&spec_with(vec![fault("tile:1", "explode", Value::Null, 0, None)]), false).is_err());
        assert!(compile(&spec_with(vec![fault("tile:1", "slow", serde_json::json!({"typo": 1}), 0, None)]), false).is_err());
        assert!(compile(&spec_with(vec![fault("network", "network", serde_json::json!({"drop_prob": 2.0}), 0, None)]), false).is_err());
        let mut s = spec_with(vec![]);
        s.n = 4;
        assert!(compile(&s, false).is_err());
        assert!(ScenarioSpec::from_json(
            r#"{"name":"x","seed":1,"f":1,"n":3,"app":"null_op","workload":{"requests":1},"hashing":"disabled","extra":1}"#
        )
        .is_err());
    }

    #[test]
    fn scenario_json_roundtrip() {
        let text = r#"{"name":"x","seed":7,"f":1,"n":3,"app":"counter","workload":{"requests":4,"interarrival_cycles":100},
            "hashing":"hardware_hash","faults":[{"target":"network:2","behavior":"network","params":{"corrupt_prob":1.0},"onset":0,"duration":null}],
            "policy":{"refresh_mode":"diversify","placement":"relocate","scaling":"keep","trigger":"reactive","period":null},
            "overrides":{"checkpoint_max":10}}"#;
        let s = ScenarioSpec::from_json(text).unwrap();
        assert_eq!(s.hashing, Hashing::Hardware);
        assert_eq!(ScenarioSpec::from_json(&s.to_json()).unwrap(), s);
        assert!(compile(&s, true).is_ok());
    }

    #[test]
    fn transform_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let corrupt = NetworkFault { drop_prob: 0.0, corrupt_prob: 1.0, xor_mask: None, direction: Direction::Replies };
        for _ in 0..100 {
            match network_transform(b"payload", &corrupt, &mut rng) {
                Transit::Corrupted(b) => assert_ne!(b, b"payload"),
                other => panic!("{other:?}"),
            }
        }
        let drop = NetworkFault { drop_prob: 1.0, ..corrupt.clone() };
        assert_eq!(network_transform(b"p", &drop, &mut rng), Transit::Dropped);
        let same = NetworkFault { xor_mask: Some(vec![1]), ..corrupt };
        assert_eq!(network_transform(b"ab", &same, &mut rng), network_transform(b"ab", &same, &mut rng));
    }

    #[test]
    fn network_fault_cleared_by_reroute() {
        let c = compile(&spec_with(vec![fault("network", "network", serde_json::json!({"drop_prob": 1.0}), 0, None)]), false).unwrap();
        let mut adv = Adversary::new(c.faults);
        assert_eq!(adv.network_faults(Cycle(0), 1, 0, Direction::Replies).len(), 1);
        assert_eq!(adv.network_faults(Cycle(0), 1, 0, Direction::Requests).len(), 0);
        assert_eq!(adv.network_faults(Cycle(0), 1, 1, Direction::Replies).len(), 0);
    }
}
