//! The event-driven engine: boot, H-Quorum rounds (and the single-core and
//! TMR baselines), rejuvenation plans, fault activation and the runtime
//! safety monitor.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{network_transform, Adversary, CompiledScenario, Direction, FaultKind, NetworkFault, Transit};
use crate::app::{AppKind, ApplicationState};
use crate::config::{Hashing, PlatformConfig};
use crate::controller::{evaluate_votes, Controller, Decision, DecisionKind, DecisionRecord, Pending, ReplyOutcome, Status, SubmitOutcome};
use crate::cost::{cycle_cost, Breakdown, Category, Charge, ClosedVia, Closure, CostModel, CostRecord, Ctx, Lane};
use crate::kernel::{Cycle, Event, Kernel, KernelError, RunState, TimerId, World};
use crate::metrics::{Family, MetricsRecord, Protocol};
use crate::platform::{digest, digest_parts, Bitstream, BitstreamKind, Digest, EntityId, Platform, RegionId};
use crate::rejuvenation::{self, Action, PlanContext, PlanMode, Reason, RejuvPlan, RejuvRecord, Scaling, SlotImage};
use crate::streams::Streams;
use crate::tiles::{tile_execute, tile_poll, tile_reply, tile_state_sync, Behavior, SyncOutcome, TileDescriptor, TileStatus};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Ev {
    Boot,
    Submit { tag: u64 },
    Flood { fault: usize },
    TileRead { slot: u16, uid: u64, epoch: u64 },
    TileWrite { slot: u16, uid: u64, epoch: u64 },
    CtlRead { slot: u16, uid: u64 },
    RoundTimer { uid: u64 },
    Deliver { uid: u64 },
    TileLoaded { slot: u16, epoch: u64, plan: u64 },
    TileReady { slot: u16, epoch: u64, plan: u64 },
    ReadyTimer { plan: u64 },
    Proactive,
}

/// Run options independent of the scenario file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunOptions {
    pub max_cycles: u64,
    /// Record every legal memory access in the platform trace.
    pub record_accesses: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { max_cycles: 10_000_000, record_accesses: false }
    }
}

/// One request delivered to an application.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub uid: u64,
    pub app: u16,
    pub tag: Option<u64>,
    pub req: Vec<u8>,
    pub rep: Vec<u8>,
    pub cycle: Cycle,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub record: MetricsRecord,
    pub exhausted: bool,
    pub run_state: RunState,
    pub trace_digest: String,
    pub decisions: Vec<DecisionRecord>,
    pub rejuvenations: Vec<RejuvRecord>,
    pub deliveries: Vec<Delivery>,
    /// Denied accesses recorded by the platform.
    pub access_violations: u64,
    /// Deliveries that disagree with the reference replay.
    pub safety_violations: u64,
    /// TMR rounds without a majority.
    pub unresolved: u64,
    /// Requests dropped without delivery (baselines only).
    pub abandoned: u64,
    pub max_incident_rounds: u32,
    pub proactive_triggers: u64,
    pub breakdown: Breakdown,
    /// Sum of every closed round and rejuvenation, measured on the clock.
    pub measured_cycles: u64,
    pub round_cycles: u64,
    pub boot_cycles: u64,
    pub reply_outcomes: BTreeMap<String, u64>,
    pub tile_digests: BTreeMap<u16, Digest>,
    pub oracle_digest: Digest,
    /// Reloaded tiles whose synced state was compared with the reference.
    pub state_checks: u64,
    pub state_mismatches: u64,
    pub checkpoints: u64,
    pub final_n: u16,
    pub final_f: u16,
    pub workload_submitted: u64,
    pub workload_delivered: u64,
    pub workload_requests: u64,
    pub rejected_not_ready: u64,
    pub rejected_rate_limit: u64,
}

struct Round {
    uid: u64,
    start: Cycle,
    pending: Pending,
    timer: TimerId,
    decided: Option<Decision>,
    via: Option<ClosedVia>,
}

struct PlanRun {
    plan: RejuvPlan,
    ctx: Ctx,
    start: Cycle,
    awaiting: BTreeSet<u16>,
    ready: BTreeSet<u16>,
    timer: Option<TimerId>,
}

pub struct Sim {
    name: String,
    protocol: Protocol,
    family: Family,
    app: AppKind,
    cfg: PlatformConfig,
    cost: CostModel,
    hashing: Hashing,
    stateful: bool,
    n0: u16,
    f0: u16,
    f: u16,
    pub platform: Platform,
    pub controller: Controller,
    tiles: BTreeMap<u16, TileDescriptor>,
    active: BTreeSet<u16>,
    versions: BTreeMap<String, Vec<String>>,
    history: BTreeMap<u16, Vec<String>>,
    adversary: Adversary,
    rng_tiles: BTreeMap<u16, ChaCha8Rng>,
    rng_net: ChaCha8Rng,
    rng_route: ChaCha8Rng,
    rng_flood: ChaCha8Rng,
    route_epoch: u64,
    route_lat: BTreeMap<u16, u64>,
    records: Vec<CostRecord>,
    closures: Vec<Closure>,
    round: Option<Round>,
    plan: Option<PlanRun>,
    next_plan: u64,
    incident_level: u8,
    incident_rounds: u32,
    max_incident_rounds: u32,
    proactive_pending: bool,
    proactive_cursor: usize,
    proactive_triggers: u64,
    payloads: Vec<Vec<u8>>,
    submissions: Vec<Cycle>,
    parked: BTreeSet<u64>,
    pending_replies: BTreeMap<(u16, u64), (Vec<u8>, Behavior)>,
    booted: bool,
    ready_override: Option<u64>,
    oracle: ApplicationState,
    submitted: u64,
    delivered: u64,
    workload_submitted: u64,
    workload_delivered: u64,
    workload_resolved: u64,
    abandoned: u64,
    unresolved: u64,
    safety_violations: u64,
    full_match: u64,
    partial_rejuv: u64,
    full_rejuv: u64,
    steps: u64,
    messages: u64,
    rejuv_count: u64,
    checkpoints: u64,
    state_checks: u64,
    state_mismatches: u64,
    rejected_not_ready: u64,
    rejected_rate_limit: u64,
    reply_outcomes: BTreeMap<String, u64>,
    decisions: Vec<DecisionRecord>,
    rejuvenations: Vec<RejuvRecord>,
    deliveries: Vec<Delivery>,
}

const WORKLOAD_APP: u16 = 0;

impl Sim {
    pub fn new(sc: &CompiledScenario, protocol: Protocol, opts: &RunOptions) -> Self {
        let spec = &sc.spec;
        let family = protocol.family();
        let hashing = protocol.hashing();
        let (n0, f0) = match family {
            Family::Single => (1, 0),
            Family::Tmr => (3, 1),
            Family::HQuorum => (spec.n, spec.f),
        };
        let mut cfg = sc.config.clone();
        cfg.hashing = hashing;
        let apps = 1 + sc
            .faults
            .iter()
            .filter_map(|f| if let FaultKind::Flood { app, .. } = f.kind { Some(app) } else { None })
            .max()
            .unwrap_or(0);
        let pool = cfg.pool_slots().max(n0);
        let mut platform = Platform::new(cfg.layout(), pool, apps);
        platform.set_record_accesses(opts.record_accesses);
        let streams = Streams::new(spec.seed);
        let mut rng_work = streams.for_purpose(2);
        let payloads = (0..spec.workload.requests).map(|_| spec.app.sample_request(&mut rng_work, spec.message_bytes())).collect();
        let versions: BTreeMap<String, Vec<String>> = cfg.softcore.iter().cloned().zip(cfg.version.iter().cloned()).collect();
        let tiles = (0..pool).map(|s| (s, TileDescriptor::empty(s, spec.app))).collect();
        let rng_tiles = (0..pool).map(|s| (s, streams.for_entity(EntityId::tile(s)))).collect();
        let stateful = cfg.stateful && spec.app.is_stateful();
        Sim {
            name: spec.name.clone(),
            protocol,
            family,
            app: spec.app,
            cost: cfg.cost_model,
            hashing,
            stateful,
            n0,
            f0,
            f: f0,
            controller: Controller::new(cfg.checkpoint_max, hashing.enabled(), cfg.rate_limit),
            platform,
            tiles,
            active: BTreeSet::new(),
            versions,
            history: BTreeMap::new(),
            adversary: Adversary::new(sc.faults.clone()),
            rng_tiles,
            rng_net: streams.for_entity(EntityId::ADVERSARY),
            rng_route: streams.for_purpose(1),
            rng_flood: streams.for_purpose(3),
            route_epoch: 0,
            route_lat: BTreeMap::new(),
            records: Vec::new(),
            closures: Vec::new(),
            round: None,
            plan: None,
            next_plan: 0,
            incident_level: 0,
            incident_rounds: 0,
            max_incident_rounds: 0,
            proactive_pending: false,
            proactive_cursor: 0,
            proactive_triggers: 0,
            payloads,
            submissions: sc.submissions.clone(),
            parked: BTreeSet::new(),
            pending_replies: BTreeMap::new(),
            booted: false,
            ready_override: spec.overrides.ready_budget,
            oracle: ApplicationState::genesis(spec.app),
            submitted: 0,
            delivered: 0,
            workload_submitted: 0,
            workload_delivered: 0,
            workload_resolved: 0,
            abandoned: 0,
            unresolved: 0,
            safety_violations: 0,
            full_match: 0,
            partial_rejuv: 0,
            full_rejuv: 0,
            steps: 0,
            messages: 0,
            rejuv_count: 0,
            checkpoints: 0,
            state_checks: 0,
            state_mismatches: 0,
            rejected_not_ready: 0,
            rejected_rate_limit: 0,
            reply_outcomes: BTreeMap::new(),
            decisions: Vec::new(),
            rejuvenations: Vec::new(),
            deliveries: Vec::new(),
            cfg,
        }
    }

    /// Schedules boot, the workload, floods and proactive ticks.
    pub fn prime(&mut self, k: &mut Kernel<Ev>) {
        k.schedule(Cycle::ZERO, EntityId::MPBOOT, Ev::Boot).expect("fresh kernel");
        for (tag, at) in self.submissions.iter().enumerate() {
            k.schedule(*at, EntityId::app(WORKLOAD_APP), Ev::Submit { tag: tag as u64 }).expect("future");
        }
        for (id, f) in self.adversary.floods() {
            if let FaultKind::Flood { app, .. } = f.kind {
                k.schedule(f.onset, EntityId::app(app), Ev::Flood { fault: id }).expect("future");
            }
        }
        if self.family == Family::HQuorum {
            if let Some(p) = self.cfg.rejuv_policy.proactive_period() {
                k.schedule(Cycle(p), EntityId::CONTROLLER, Ev::Proactive).expect("future");
            }
        }
    }

    /// All workload requests resolved and no workload round or plan in
    /// progress. Queued or in-flight flood traffic does not keep the run
    /// alive.
    pub fn finished(&self) -> bool {
        self.booted
            && self.workload_resolved == self.payloads.len() as u64
            && self.round.as_ref().is_none_or(|r| r.pending.tag.is_none())
            && self.plan.is_none()
            && !self.proactive_pending
    }

    // ---- accounting ----

    fn charge(&mut self, now: Cycle, ctx: Ctx, lane: Lane, entity: EntityId, charge: Charge) -> u64 {
        let (_, cycles) = self.cost.cycles(&charge);
        if cycles > 0 {
            self.records.push(CostRecord { cycle: now, ctx, lane, entity, charge });
        }
        cycles
    }

    /// One tile-side transfer of `len` bytes plus its route latency.
    fn tile_transfer(&mut self, now: Cycle, ctx: Ctx, slot: u16, len: usize) -> u64 {
        let e = EntityId::tile(slot);
        let lane = Lane::Path(slot);
        let mut c = self.charge(now, ctx, lane, e, Charge::MemWords(CostModel::words(len)));
        c += self.charge(now, ctx, lane, e, Charge::Bus);
        let lat = self.route_lat.get(&slot).copied().unwrap_or(0);
        c + self.charge(now, ctx, lane, e, Charge::Raw { category: Category::Jitter, cycles: lat })
    }

    /// One controller-side transfer of `len` bytes.
    fn ctl_transfer(&mut self, now: Cycle, ctx: Ctx, lane: Lane, len: usize) -> u64 {
        let e = EntityId::CONTROLLER;
        let mut c = self.charge(now, ctx, lane, e, Charge::MemWords(CostModel::words(len)));
        c += self.charge(now, ctx, lane, e, Charge::Bus);
        c + self.charge(now, ctx, lane, e, Charge::ControllerMemory)
    }

    /// The wait from `start` until an expiry at `now`.
    fn charge_wait(&mut self, ctx: Ctx, start: Cycle, now: Cycle) {
        self.records.push(CostRecord {
            cycle: now,
            ctx,
            lane: Lane::Timeout,
            entity: EntityId::CONTROLLER,
            charge: Charge::Raw { category: Category::Timeout, cycles: now - start },
        });
    }

    fn close(&mut self, ctx: Ctx, via: ClosedVia, start: Cycle, end: Cycle) {
        self.closures.push(Closure { ctx, via, start, end });
    }

    // ---- bootstrapping ----

    fn boot(&mut self, k: &mut Kernel<Ev>, now: Cycle) {
        let sc = self.cfg.softcore[0].clone();
        let floor = Bitstream::synthetic(&sc, "base", BitstreamKind::Full, Cycle(self.cost.full_pl_load));
        let floor_id = floor.id.clone();
        self.platform.register_bitstream(floor);
        for v in self.cfg.version[0].clone() {
            self.platform.register_bitstream(Bitstream::synthetic(&sc, &v, BitstreamKind::Partial, Cycle(self.cost.partial_load)));
        }
        let v0 = self.cfg.version[0][0].clone();
        let slots: BTreeSet<u16> = (0..self.n0).collect();
        let mut actions = vec![Action::LoadFloorplan(floor_id), Action::RestoreState];
        actions.extend(slots.iter().map(|s| Action::Load { slot: *s, bitstream: format!("{sc}-{v0}") }));
        actions.push(Action::AwaitReady(slots.clone()));
        let plan = RejuvPlan {
            id: self.alloc_plan(),
            reason: Reason::Boot,
            mode: PlanMode::Full,
            actions,
            level: 0,
            refresh_mode: self.cfg.rejuv_policy.refresh_mode,
            placement: self.cfg.rejuv_policy.placement,
            active_after: slots,
            notes: Vec::new(),
        };
        self.execute_plan(k, now, plan);
    }

    fn alloc_plan(&mut self) -> u64 {
        let id = self.next_plan;
        self.next_plan += 1;
        id
    }

    // ---- admission ----

    fn submit(&mut self, k: &mut Kernel<Ev>, now: Cycle, tag: u64) {
        let payload = self.payloads[tag as usize].clone();
        match self.controller.submit_request(WORKLOAD_APP, payload, now, Some(tag)) {
            SubmitOutcome::Accepted(_) => {
                self.submitted += 1;
                self.workload_submitted += 1;
                self.try_issue(k, now);
            }
            SubmitOutcome::RejectedNotReady => {
                self.rejected_not_ready += 1;
                self.parked.insert(tag);
            }
            SubmitOutcome::RejectedRateLimit => {
                self.rejected_rate_limit += 1;
                let wait = self.cfg.rate_limit.window.max(self.cfg.rate_limit.delta_min).max(1);
                k.schedule_in(wait, EntityId::app(WORKLOAD_APP), Ev::Submit { tag });
            }
        }
    }

    fn flood(&mut self, k: &mut Kernel<Ev>, now: Cycle, id: usize) {
        let f = self.adversary.faults[id].clone();
        let FaultKind::Flood { app, burst, period } = f.kind else { return };
        if !f.active_at(now) {
            return;
        }
        for _ in 0..burst {
            let req = self.app.sample_request(&mut self.rng_flood, 8);
            match self.controller.submit_request(app, req, now, None) {
                SubmitOutcome::Accepted(_) => self.submitted += 1,
                SubmitOutcome::RejectedNotReady => self.rejected_not_ready += 1,
                SubmitOutcome::RejectedRateLimit => self.rejected_rate_limit += 1,
            }
        }
        if f.active_at(now + period) {
            k.schedule_in(period, EntityId::app(app), Ev::Flood { fault: id });
        }
        self.try_issue(k, now);
    }

    fn wake_parked(&mut self, k: &mut Kernel<Ev>) {
        for tag in std::mem::take(&mut self.parked) {
            k.schedule_in(0, EntityId::app(WORKLOAD_APP), Ev::Submit { tag });
        }
    }

    fn try_issue(&mut self, k: &mut Kernel<Ev>, now: Cycle) {
        if self.controller.status != Status::Ready || self.round.is_some() || self.plan.is_some() {
            return;
        }
        if self.proactive_pending {
            self.proactive_pending = false;
            self.start_proactive(k, now);
            return;
        }
        if let Some(p) = self.controller.admission.pop() {
            self.issue(k, now, p);
        }
    }

    // ---- rounds ----

    fn issue(&mut self, k: &mut Kernel<Ev>, t0: Cycle, pending: Pending) {
        let (m, traffic) = self.controller.issue_request(&mut self.platform, t0, pending.payload.clone()).expect("controller slot fits");
        let uid = m.uid;
        let ctx = Ctx::Round(uid);
        let mut head = self.ctl_transfer(t0, ctx, Lane::Head, traffic.written);
        if let Some(sw) = self.hashing.software() {
            head += self.charge(t0, ctx, Lane::Head, EntityId::CONTROLLER, Charge::Hash { software: sw });
        }
        let budget = self.cfg.timer_for(self.app, m.req.len());
        let timer = k.arm_timer(EntityId::CONTROLLER, t0 + budget, Ev::RoundTimer { uid }).expect("future").id;
        self.steps += self.protocol.steps();
        self.messages += match self.family {
            Family::Tmr => 0,
            _ if self.cfg.per_reader_messages => self.active.len() as u64,
            _ => 1,
        };
        let t1 = t0 + head;
        for s in self.active.clone() {
            let epoch = self.tiles[&s].epoch;
            k.schedule(t1, EntityId::tile(s), Ev::TileRead { slot: s, uid, epoch }).expect("future");
        }
        self.round = Some(Round { uid, start: t0, pending, timer, decided: None, via: None });
    }

    fn tile_read(&mut self, k: &mut Kernel<Ev>, now: Cycle, slot: u16, uid: u64, epoch: u64) {
        let (version, status, tepoch, vidx) = {
            let t = &self.tiles[&slot];
            (t.version.clone(), t.status, t.epoch, t.version_index)
        };
        if tepoch != epoch || status != TileStatus::Active {
            return;
        }
        let behavior = self.adversary.tile_behavior(now, slot, &version, epoch, Some(uid));
        if behavior == Behavior::Crash {
            return;
        }
        let ctx = Ctx::Round(uid);
        let lane = Lane::Path(slot);
        let me = EntityId::tile(slot);
        let hashing = self.hashing.enabled();
        let mut faults = self.adversary.network_faults(now, slot, self.route_epoch, Direction::Requests);
        let rng = &mut self.rng_net;
        let (res, read) = tile_poll(&mut self.platform, now, &self.tiles[&slot], uid, hashing, |req| apply_transit(&mut faults, rng, req));
        let mut d = self.tile_transfer(now, ctx, slot, read);
        let m = match res {
            Ok(m) => m,
            Err(why) => {
                *self.reply_outcomes.entry(format!("Poll{why:?}")).or_insert(0) += 1;
                return;
            }
        };
        if self.hashing == Hashing::Software {
            d += self.charge(now, ctx, lane, me, Charge::Hash { software: true });
        }
        let elements = ApplicationState::elements(&m.req);
        d += self.charge(now, ctx, lane, me, Charge::Exec { app: self.app, elements });
        d += self.charge(now, ctx, lane, me, Charge::Raw { category: Category::Exec, cycles: vidx as u64 * self.cost.version_skew });
        if self.cost.jitter_max > 0 {
            let j = self.rng_tiles.get_mut(&slot).expect("tile stream").gen_range(0..=self.cost.jitter_max);
            d += self.charge(now, ctx, lane, me, Charge::Raw { category: Category::Jitter, cycles: j });
        }
        if let Behavior::Slow { extra_cycles } = behavior {
            d += self.charge(now, ctx, lane, me, Charge::Raw { category: Category::Stall, cycles: extra_cycles });
        }
        if self.hashing == Hashing::Software {
            d += self.charge(now, ctx, lane, me, Charge::Hash { software: true });
        }
        let tile = self.tiles.get_mut(&slot).expect("tile");
        let rep = tile_execute(tile, &m, &behavior);
        self.pending_replies.insert((slot, uid), (rep, behavior));
        k.schedule_in(d, me, Ev::TileWrite { slot, uid, epoch });
    }

    fn tile_write(&mut self, k: &mut Kernel<Ev>, now: Cycle, slot: u16, uid: u64, epoch: u64) {
        if self.tiles[&slot].epoch != epoch {
            return;
        }
        let Some((rep, behavior)) = self.pending_replies.remove(&(slot, uid)) else { return };
        let hashing = self.hashing.enabled();
        let tile = self.tiles.get_mut(&slot).expect("tile");
        let Some(len) = tile_reply(&mut self.platform, now, tile, uid, rep, hashing, &behavior) else { return };
        self.messages += 1;
        let ctx = Ctx::Round(uid);
        let mut d = self.tile_transfer(now, ctx, slot, len);
        d += self.ctl_transfer(now, ctx, Lane::Path(slot), len);
        let lat = self.route_lat.get(&slot).copied().unwrap_or(0);
        d += self.charge(now, ctx, Lane::Path(slot), EntityId::CONTROLLER, Charge::Raw { category: Category::Jitter, cycles: lat });
        if self.hashing == Hashing::Software {
            d += self.charge(now, ctx, Lane::Path(slot), EntityId::CONTROLLER, Charge::Hash { software: true });
        }
        k.schedule_in(d, EntityId::CONTROLLER, Ev::CtlRead { slot, uid });
    }

    fn ctl_read(&mut self, k: &mut Kernel<Ev>, now: Cycle, slot: u16, uid: u64) {
        let mut faults = self.adversary.network_faults(now, slot, self.route_epoch, Direction::Replies);
        let rng = &mut self.rng_net;
        let (outcome, _) = self.controller.collect_reply(&mut self.platform, now, slot, uid, |rep| apply_transit(&mut faults, rng, rep));
        *self.reply_outcomes.entry(format!("{outcome:?}")).or_insert(0) += 1;
        if outcome != ReplyOutcome::Counted {
            return;
        }
        let Some(vs) = self.controller.inflight.as_ref() else { return };
        let decision = match self.family {
            Family::HQuorum => evaluate_votes(vs, &self.active, self.f as usize, false),
            Family::Tmr => tmr_vote(vs, self.active.len(), false),
            Family::Single => vs.replies.values().next().map(|r| Decision {
                kind: DecisionKind::DeliverFull,
                rep: Some(r.rep.clone()),
                matches: 1,
                suspects: BTreeSet::new(),
            }),
        };
        if let Some(d) = decision {
            self.decide(k, now, d, ClosedVia::Path(slot));
        }
    }

    fn round_timer(&mut self, k: &mut Kernel<Ev>, now: Cycle, uid: u64) {
        let Some(round) = self.round.as_ref() else { return };
        if round.uid != uid || round.decided.is_some() {
            return;
        }
        let vs = self.controller.inflight.as_ref().expect("vote set of the open round");
        let decision = match self.family {
            Family::HQuorum => evaluate_votes(vs, &self.active, self.f as usize, true),
            Family::Tmr => tmr_vote(vs, self.active.len(), true),
            Family::Single => None,
        };
        let start = round.start;
        self.charge_wait(Ctx::Round(uid), start, now);
        match decision {
            Some(d) => self.decide(k, now, d, ClosedVia::Timeout),
            None => {
                // single core: nothing arrived, the request is lost
                self.abandon(k, now, uid, ClosedVia::Timeout);
            }
        }
    }

    fn abandon(&mut self, k: &mut Kernel<Ev>, now: Cycle, uid: u64, via: ClosedVia) {
        let round = self.round.take().expect("open round");
        k.cancel_timer(round.timer);
        self.controller.inflight = None;
        self.close(Ctx::Round(uid), via, round.start, now);
        self.abandoned += 1;
        if round.pending.tag.is_some() {
            self.workload_resolved += 1;
        }
        self.try_issue(k, now);
    }

    fn decide(&mut self, k: &mut Kernel<Ev>, now: Cycle, d: Decision, via: ClosedVia) {
        let round = self.round.as_mut().expect("open round");
        let uid = round.uid;
        if via != ClosedVia::Timeout {
            k.cancel_timer(round.timer);
        }
        round.via = Some(via);
        if let Some(vs) = self.controller.inflight.as_mut() {
            vs.decision = Some(d.clone());
        }
        self.decisions.push(DecisionRecord {
            cycle: now,
            uid,
            kind: d.kind,
            matches: d.matches,
            suspects: d.suspects.iter().copied().collect(),
            delivered_digest: d.rep.as_ref().map(|r| digest(r).to_hex()),
        });
        let Some(rep) = d.rep.clone() else {
            if self.family == Family::Tmr {
                self.unresolved += 1;
                self.round.as_mut().expect("open").decided = Some(d);
                return self.abandon(k, now, uid, via);
            }
            // no quorum: full rejuvenation, the request is re-issued later
            self.full_rejuv += 1;
            let round = self.round.take().expect("open round");
            self.controller.inflight = None;
            self.close(Ctx::Round(uid), via, round.start, now);
            self.controller.admission.requeue_front(round.pending);
            let suspects = d.suspects.clone();
            self.trigger(k, now, PlanMode::Full, suspects, Reason::NoQuorum);
            return;
        };
        match d.kind {
            DecisionKind::DeliverFull => self.full_match += 1,
            DecisionKind::DeliverPartialRejuv => self.partial_rejuv += 1,
            DecisionKind::FullRejuv => unreachable!("full rejuvenation carries no output"),
        }
        let ctx = Ctx::Round(uid);
        let mut tail = 0;
        if self.family != Family::Single {
            tail += self.charge(now, ctx, Lane::Tail, EntityId::CONTROLLER, Charge::Agreement);
        }
        let req = self.round.as_ref().expect("open").pending.payload.clone();
        let traffic = self.controller.record_delivery(&mut self.platform, now, uid, &req, &rep, self.stateful).expect("log fits");
        if traffic.transfers > 0 {
            tail += self.charge(now, ctx, Lane::Tail, EntityId::CONTROLLER, Charge::MemWords(CostModel::words(traffic.written)));
            for _ in 0..traffic.transfers {
                tail += self.charge(now, ctx, Lane::Tail, EntityId::CONTROLLER, Charge::Bus);
            }
        }
        let entries = self.controller.log_count() as u64;
        if self.controller.maybe_checkpoint(&mut self.platform, now).is_some() {
            self.checkpoints += 1;
            tail += self.charge(now, ctx, Lane::Tail, EntityId::CONTROLLER, Charge::CheckpointDigest { entries });
        }
        self.round.as_mut().expect("open").decided = Some(d);
        k.schedule_in(tail, EntityId::CONTROLLER, Ev::Deliver { uid });
    }

    fn deliver(&mut self, k: &mut Kernel<Ev>, now: Cycle, uid: u64) {
        let Some(round) = self.round.take() else { return };
        debug_assert_eq!(round.uid, uid);
        self.controller.inflight = None;
        let d = round.decided.clone().expect("decided");
        let rep = d.rep.clone().expect("delivery carries output");
        let expected = self.oracle.apply(&round.pending.payload);
        if expected != rep {
            self.safety_violations += 1;
        }
        self.delivered += 1;
        if round.pending.tag.is_some() {
            self.workload_delivered += 1;
            self.workload_resolved += 1;
        }
        self.deliveries.push(Delivery {
            uid,
            app: round.pending.app,
            tag: round.pending.tag,
            req: round.pending.payload.clone(),
            rep,
            cycle: now,
        });
        self.close(Ctx::Round(uid), round.via.expect("closed"), round.start, now);
        match d.kind {
            DecisionKind::DeliverPartialRejuv => {
                self.trigger(k, now, PlanMode::Partial { suspects: d.suspects.clone() }, d.suspects, Reason::PartialMatch)
            }
            _ => {
                if self.plan.is_none() {
                    self.incident_level = 0;
                    self.incident_rounds = 0;
                }
                self.try_issue(k, now);
            }
        }
    }

    // ---- rejuvenation ----

    fn images(&self, slots: &BTreeSet<u16>) -> BTreeMap<u16, SlotImage> {
        slots
            .iter()
            .map(|s| {
                let t = &self.tiles[s];
                (*s, SlotImage { softcore: t.softcore.clone(), version: t.version.clone() })
            })
            .collect()
    }

    fn trigger(&mut self, k: &mut Kernel<Ev>, now: Cycle, mode: PlanMode, _suspects: BTreeSet<u16>, reason: Reason) {
        if self.family != Family::HQuorum {
            self.try_issue(k, now);
            return;
        }
        let reactive = reason != Reason::Proactive;
        let level = if reactive { self.incident_level } else { 0 };
        let target = match self.cfg.rejuv_policy.scaling {
            Scaling::ScaleOut(t) if reactive && (self.active.len() as u16) < t => Some(t),
            Scaling::ScaleIn(t) if !reactive && (self.active.len() as u16) > t => Some(t),
            _ => None,
        };
        let images = self.images(&self.active);
        let floor = self.platform.floorplan().unwrap_or_default().to_string();
        let id = self.alloc_plan();
        let plan = {
            let ctx = PlanContext {
                policy: &self.cfg.rejuv_policy,
                active: &images,
                pool_slots: self.platform.slots(),
                versions: &self.versions,
                history: &self.history,
                floorplan: &floor,
                stateful: self.stateful,
            };
            rejuvenation::trigger(&ctx, id, mode, reason, level, target)
        };
        if reactive {
            self.incident_level = (plan.level + 1).min(rejuvenation::MAX_LEVEL);
            self.incident_rounds += 1;
            self.max_incident_rounds = self.max_incident_rounds.max(self.incident_rounds);
        }
        self.execute_plan(k, now, plan);
    }

    fn start_proactive(&mut self, k: &mut Kernel<Ev>, now: Cycle) {
        let slots: Vec<u16> = self.active.iter().copied().collect();
        if slots.is_empty() {
            return;
        }
        let victim = slots[self.proactive_cursor % slots.len()];
        self.proactive_cursor += 1;
        let suspects: BTreeSet<u16> = [victim].into_iter().collect();
        self.trigger(k, now, PlanMode::Partial { suspects: suspects.clone() }, suspects, Reason::Proactive);
    }

    /// Twice the load plus sync time of one tile: the header read and, for
    /// stateful apps, one read and one re-execution per live log entry.
    fn ready_budget(&self) -> u64 {
        if let Some(b) = self.ready_override {
            return b;
        }
        let entries = if self.stateful { self.controller.log_count() as u64 } else { 0 };
        let read = self.cost.transfer(self.cfg.slot_size) + self.cost.route_jitter_max;
        let replay = read + self.cost.exec_cost(self.app, 0);
        2 * (self.cost.partial_load + read + entries * replay)
    }

    fn execute_plan(&mut self, k: &mut Kernel<Ev>, now: Cycle, plan: RejuvPlan) {
        self.controller.status = Status::Loading;
        let ctx = if plan.reason == Reason::Boot { Ctx::Boot } else { Ctx::Rejuv(plan.id) };
        let mpboot = EntityId::MPBOOT;
        let mut head = 0u64;
        let mut loads = Vec::new();
        for a in &plan.actions {
            match a {
                Action::Checkpoint => {
                    let entries = self.controller.log_count() as u64;
                    self.controller.take_checkpoint(&mut self.platform, now, false);
                    self.checkpoints += 1;
                    head += self.charge(now, ctx, Lane::Head, EntityId::CONTROLLER, Charge::CheckpointDigest { entries });
                }
                Action::Flush(s) => {
                    self.tiles.get_mut(s).expect("slot").flush();
                    self.platform.reset_region(now, mpboot, RegionId::PlmTile(*s)).expect("mpboot may reset");
                    self.active.remove(s);
                    self.pending_replies.retain(|(p, _), _| p != s);
                }
                Action::LoadFloorplan(id) => {
                    self.platform.load_full(now, mpboot, id).expect("registered floorplan");
                    head += self.charge(now, ctx, Lane::Head, mpboot, Charge::FullLoad);
                }
                Action::ReRoute => {
                    self.route_epoch += 1;
                    let max = self.cost.route_jitter_max;
                    for s in 0..self.platform.slots() {
                        let lat = if max > 0 { self.rng_route.gen_range(0..=max) } else { 0 };
                        self.route_lat.insert(s, lat);
                    }
                }
                Action::RestoreState => {
                    let len = self.controller.restore_state(&mut self.platform, now).expect("header fits");
                    head += self.ctl_transfer(now, ctx, Lane::Head, len);
                }
                Action::Load { slot, bitstream } => loads.push((*slot, bitstream.clone())),
                Action::AwaitReady(_) => {}
            }
        }
        let t1 = now + head;
        let awaiting = plan.awaited();
        for (slot, bs) in loads {
            let loaded = self.platform.load_tile(t1, mpboot, slot, &bs).expect("registered bitstream");
            let vidx = self.versions[&loaded.softcore].iter().position(|v| *v == loaded.version).unwrap_or(0);
            let tile = self.tiles.get_mut(&slot).expect("slot");
            tile.begin_load(&loaded.softcore, &loaded.version, vidx);
            let epoch = tile.epoch;
            self.history.entry(slot).or_default().push(loaded.version.clone());
            let d = self.charge(t1, ctx, Lane::Path(slot), mpboot, Charge::PartialLoad);
            k.schedule(t1 + d, mpboot, Ev::TileLoaded { slot, epoch, plan: plan.id }).expect("future");
        }
        let id = plan.id;
        let timer = if awaiting.is_empty() {
            None
        } else {
            Some(k.arm_timer(EntityId::CONTROLLER, t1 + self.ready_budget(), Ev::ReadyTimer { plan: id }).expect("future").id)
        };
        self.plan = Some(PlanRun { plan, ctx, start: now, awaiting, ready: BTreeSet::new(), timer });
        if timer.is_none() {
            self.complete_plan(k, t1, ClosedVia::Head);
        }
    }

    fn tile_loaded(&mut self, k: &mut Kernel<Ev>, now: Cycle, slot: u16, epoch: u64, plan: u64) {
        let Some(run) = self.plan.as_ref().filter(|r| r.plan.id == plan) else { return };
        let ctx = run.ctx;
        let (version, tepoch) = {
            let t = &self.tiles[&slot];
            (t.version.clone(), t.epoch)
        };
        if tepoch != epoch {
            return;
        }
        let next_uid = self.controller.next_uid;
        if self.adversary.tile_behavior(now, slot, &version, epoch, Some(next_uid)).is_mute() {
            return;
        }
        let tile = self.tiles.get_mut(&slot).expect("slot");
        let (outcome, traffic) = tile_state_sync(&mut self.platform, now, tile, self.stateful);
        let mut d = 0;
        for len in &traffic.transfers {
            d += self.tile_transfer(now, ctx, slot, *len);
        }
        for _ in 0..traffic.replayed {
            d += self.charge(now, ctx, Lane::Path(slot), EntityId::tile(slot), Charge::Exec { app: self.app, elements: 0 });
        }
        if outcome == SyncOutcome::Failed {
            *self.reply_outcomes.entry("sync_failed".into()).or_insert(0) += 1;
            return;
        }
        k.schedule_in(d, EntityId::tile(slot), Ev::TileReady { slot, epoch, plan });
    }

    fn tile_ready(&mut self, k: &mut Kernel<Ev>, now: Cycle, slot: u16, epoch: u64, plan: u64) {
        if self.tiles[&slot].epoch != epoch {
            return;
        }
        let Some(run) = self.plan.as_mut().filter(|r| r.plan.id == plan) else { return };
        self.tiles.get_mut(&slot).expect("slot").set_status(TileStatus::Ready);
        run.ready.insert(slot);
        if run.ready.is_superset(&run.awaiting) {
            self.complete_plan(k, now, ClosedVia::Path(slot));
        }
    }

    fn activate(&mut self, run: &PlanRun) {
        self.active = run.plan.active_after.clone();
        for s in &run.ready {
            let t = self.tiles.get_mut(s).expect("slot");
            if t.status == TileStatus::Ready {
                t.set_status(TileStatus::Active);
            }
        }
        self.f = (self.active.len() as u16).saturating_sub(1) / 2;
        if self.stateful {
            let expect = self.oracle.state_digest();
            for s in &run.ready {
                self.state_checks += 1;
                if self.tiles[s].app_state.state_digest() != expect {
                    self.state_mismatches += 1;
                }
            }
        }
    }

    fn record_plan(&mut self, run: &PlanRun, now: Cycle, outcome: &str) {
        let suspects = match &run.plan.mode {
            PlanMode::Partial { suspects } => suspects.iter().copied().collect(),
            PlanMode::Full => Vec::new(),
        };
        self.rejuvenations.push(RejuvRecord {
            cycle: run.start,
            plan: run.plan.id,
            mode: if run.plan.mode.is_full() { "full".into() } else { "partial".into() },
            reason: run.plan.reason,
            level: run.plan.level,
            suspects,
            actions: run.plan.actions.clone(),
            outcome: outcome.into(),
            duration_cycles: now - run.start,
        });
        if run.plan.reason != Reason::Boot {
            self.rejuv_count += 1;
        }
    }

    fn complete_plan(&mut self, k: &mut Kernel<Ev>, now: Cycle, via: ClosedVia) {
        let run = self.plan.take().expect("running plan");
        if let Some(t) = run.timer {
            k.cancel_timer(t);
        }
        self.close(run.ctx, via, run.start, now);
        self.activate(&run);
        self.record_plan(&run, now, "completed");
        if run.plan.reason == Reason::Boot {
            self.booted = true;
        }
        self.controller.status = Status::Ready;
        self.wake_parked(k);
        self.try_issue(k, now);
    }

    fn ready_timeout(&mut self, k: &mut Kernel<Ev>, now: Cycle, plan: u64) {
        let Some(run) = self.plan.take_if(|r| r.plan.id == plan) else { return };
        self.charge_wait(run.ctx, run.start, now);
        self.close(run.ctx, ClosedVia::Timeout, run.start, now);
        let unready: BTreeSet<u16> = run.awaiting.difference(&run.ready).copied().collect();
        self.activate(&run);
        self.record_plan(&run, now, "escalated");
        if self.family != Family::HQuorum {
            // baselines have no recovery path: run with whatever is up
            self.active.retain(|s| !unready.contains(s));
            self.booted = true;
            self.controller.status = Status::Ready;
            self.wake_parked(k);
            self.try_issue(k, now);
            return;
        }
        if run.plan.reason == Reason::Boot {
            self.booted = true;
        }
        if run.plan.reason == Reason::Proactive {
            self.incident_rounds = self.incident_rounds.max(1);
        }
        let minority = (unready.len() as u16) <= self.f;
        let mode = if minority { PlanMode::Partial { suspects: unready.clone() } } else { PlanMode::Full };
        self.trigger(k, now, mode, unready, Reason::ReadyTimeout);
    }

    fn proactive(&mut self, k: &mut Kernel<Ev>, now: Cycle) {
        self.proactive_triggers += 1;
        if let Some(p) = self.cfg.rejuv_policy.proactive_period() {
            k.schedule_in(p, EntityId::CONTROLLER, Ev::Proactive);
        }
        // a tick landing inside a running plan is absorbed by it
        if self.booted && self.plan.is_none() {
            self.proactive_pending = true;
            self.try_issue(k, now);
        }
    }

    // ---- reporting ----

    pub fn report(&self, run_state: RunState, exhausted: bool, requests: u64) -> RunReport {
        let rounds = |c: &Ctx| matches!(c, Ctx::Round(_));
        let rejuvs = |c: &Ctx| matches!(c, Ctx::Rejuv(_));
        let breakdown = cycle_cost(&self.cost, &self.records, &self.closures, |c| rounds(c) || rejuvs(c));
        let span = |pred: &dyn Fn(&Ctx) -> bool| self.closures.iter().filter(|c| pred(&c.ctx)).map(|c| c.end - c.start).sum::<u64>();
        let round_cycles = span(&rounds);
        let rejuv_cycles = span(&rejuvs);
        let boot_cycles = span(&|c: &Ctx| *c == Ctx::Boot);
        let per = |x: u64| if self.delivered == 0 { 0.0 } else { x as f64 / self.delivered as f64 };
        let cycles_total = breakdown.total();
        let record = MetricsRecord {
            scenario: self.name.clone(),
            protocol: self.protocol,
            n: self.n0,
            f: self.f0,
            submitted: self.submitted,
            delivered: self.delivered,
            full_match: self.full_match,
            partial_rejuv: self.partial_rejuv,
            full_rejuv: self.full_rejuv,
            steps_per_req: per(self.steps),
            msgs_per_req: per(self.messages),
            cycles_total,
            cycles_per_req: per(cycles_total),
            rejuv_count: self.rejuv_count,
            rejuv_cycles,
            violations: self.safety_violations,
        };
        // the event digest covers timing and routing; payloads enter through
        // the decisions and deliveries
        let decisions = serde_json::to_vec(&self.decisions).expect("serializes");
        let deliveries = serde_json::to_vec(&self.deliveries).expect("serializes");
        let trace_digest = digest_parts([&run_state.trace_digest[..], &decisions, &deliveries]).to_hex();
        RunReport {
            record,
            exhausted,
            trace_digest,
            run_state,
            decisions: self.decisions.clone(),
            rejuvenations: self.rejuvenations.clone(),
            deliveries: self.deliveries.clone(),
            access_violations: self.platform.violations(),
            safety_violations: self.safety_violations,
            unresolved: self.unresolved,
            abandoned: self.abandoned,
            max_incident_rounds: self.max_incident_rounds,
            proactive_triggers: self.proactive_triggers,
            breakdown,
            measured_cycles: round_cycles + rejuv_cycles,
            round_cycles,
            boot_cycles,
            reply_outcomes: self.reply_outcomes.clone(),
            tile_digests: self.active.iter().map(|s| (*s, self.tiles[s].app_state.state_digest())).collect(),
            oracle_digest: self.oracle.state_digest(),
            state_checks: self.state_checks,
            state_mismatches: self.state_mismatches,
            checkpoints: self.checkpoints,
            final_n: self.active.len() as u16,
            final_f: self.f,
            workload_submitted: self.workload_submitted,
            workload_delivered: self.workload_delivered,
            workload_requests: requests,
            rejected_not_ready: self.rejected_not_ready,
            rejected_rate_limit: self.rejected_rate_limit,
        }
    }

    pub fn tiles(&self) -> &BTreeMap<u16, TileDescriptor> {
        &self.tiles
    }

    pub fn active(&self) -> &BTreeSet<u16> {
        &self.active
    }
}

fn apply_transit(faults: &mut Vec<NetworkFault>, rng: &mut ChaCha8Rng, payload: &mut Vec<u8>) -> bool {
    for nf in faults.drain(..) {
        match network_transform(payload, &nf, rng) {
            Transit::Intact => {}
            Transit::Dropped => return false,
            Transit::Corrupted(b) => *payload = b,
        }
    }
    true
}

/// Majority-of-n vote without recovery. Resolves as soon as a majority
/// matches; unresolved once every tile answered or the timer expired.
pub fn tmr_vote(vs: &crate::controller::VoteSet, n: usize, at_expiry: bool) -> Option<Decision> {
    let majority = n / 2 + 1;
    let (m, rep, _) = vs.largest_class().unwrap_or((0, Vec::new(), BTreeSet::new()));
    if m >= majority {
        return Some(Decision { kind: DecisionKind::DeliverFull, rep: Some(rep), matches: m, suspects: BTreeSet::new() });
    }
    if at_expiry || vs.replies.len() >= n {
        return Some(Decision { kind: DecisionKind::FullRejuv, rep: None, matches: m, suspects: BTreeSet::new() });
    }
    None
}

impl World<Ev> for Sim {
    fn handle(&mut self, k: &mut Kernel<Ev>, ev: Event<Ev>) {
        let now = ev.at;
        match ev.body {
            Ev::Boot => self.boot(k, now),
            Ev::Submit { tag } => self.submit(k, now, tag),
            Ev::Flood { fault } => self.flood(k, now, fault),
            Ev::TileRead { slot, uid, epoch } => self.tile_read(k, now, slot, uid, epoch),
            Ev::TileWrite { slot, uid, epoch } => self.tile_write(k, now, slot, uid, epoch),
            Ev::CtlRead { slot, uid } => self.ctl_read(k, now, slot, uid),
            Ev::RoundTimer { uid } => self.round_timer(k, now, uid),
            Ev::Deliver { uid } => self.deliver(k, now, uid),
            Ev::TileLoaded { slot, epoch, plan } => self.tile_loaded(k, now, slot, epoch, plan),
            Ev::TileReady { slot, epoch, plan } => self.tile_ready(k, now, slot, epoch, plan),
            Ev::ReadyTimer { plan } => self.ready_timeout(k, now, plan),
            Ev::Proactive => self.proactive(k, now),
        }
    }
}

/// Runs one compiled scenario under `protocol`.
pub fn run(sc: &CompiledScenario, protocol: Protocol, opts: &RunOptions) -> RunReport {
    let (report, _) = run_with_platform(sc, protocol, opts);
    report
}

/// Like [`run`], also returning the platform trace as JSON Lines.
pub fn run_with_platform(sc: &CompiledScenario, protocol: Protocol, opts: &RunOptions) -> (RunReport, String) {
    let mut sim = Sim::new(sc, protocol, opts);
    let mut k: Kernel<Ev> = Kernel::new();
    sim.prime(&mut k);
    let result = k.run_until(&mut sim, |s| s.finished(), Cycle(opts.max_cycles));
    let (state, exhausted) = match result {
        Ok(s) => (s, false),
        Err(KernelError::Exhausted { state, .. }) => (state, true),
        Err(e) => panic!("kernel failure: {e}"),
    };
    let report = sim.report(state, exhausted, sc.spec.workload.requests);
    (report, sim.platform.trace_jsonl())
}

pub fn decisions_jsonl(r: &RunReport) -> String {
    r.decisions.iter().map(|d| serde_json::to_string(d).expect("serializes") + "\n").collect()
}

pub fn rejuvenations_jsonl(r: &RunReport) -> String {
    r.rejuvenations.iter().map(|d| serde_json::to_string(d).expect("serializes") + "\n").collect()
}
