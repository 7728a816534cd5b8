//! Property tests over seeded random scenarios and the building blocks.

use std::collections::BTreeSet;

use proptest::prelude::*;
use serde::Serialize;

use tilequorum::adversary::compile;
use tilequorum::controller::DecisionKind;
use tilequorum::kernel::{Cycle, Event, Kernel, World};
use tilequorum::metrics::{export_bytes, parse_csv, parse_jsonl, Format, MetricsRecord, Protocol};
use tilequorum::platform::EntityId;
use tilequorum::scenarios::{liveness_case, safety_case, state_transfer_case, FAULT_KINDS};
use tilequorum::system::{run, RunOptions, RunReport};
use tilequorum::tiles::TileStatus;
use tilequorum::wire::{ReplyMessage, RequestMessage};

fn run_spec(s: &tilequorum::ScenarioSpec, bounded: bool) -> RunReport {
    let c = compile(s, bounded).unwrap();
    run(&c, s.protocols()[0], &RunOptions::default())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn bounded_faults_preserve_safety(seed in any::<u64>(), f in 1u16..=2, kind in 0usize..FAULT_KINDS.len()) {
        let s = safety_case(seed, f, FAULT_KINDS[kind]);
        let r = run_spec(&s, true);
        prop_assert_eq!(r.safety_violations, 0);
        // one delivery per uid, in uid order
        let uids: Vec<u64> = r.deliveries.iter().map(|d| d.uid).collect();
        prop_assert!(uids.windows(2).all(|w| w[0] < w[1]));
        // every delivery corresponds to exactly one delivering decision
        let delivering = r.decisions.iter().filter(|d| d.kind != DecisionKind::FullRejuv).count() as u64;
        prop_assert_eq!(delivering, r.record.delivered);
        prop_assert_eq!(r.record.full_match + r.record.partial_rejuv, r.record.delivered);
    }

    #[test]
    fn cycle_accounting_is_additive(seed in any::<u64>(), f in 1u16..=2) {
        let r = run_spec(&safety_case(seed, f, FAULT_KINDS[(seed % 10) as usize]), true);
        prop_assert_eq!(r.record.cycles_total, r.measured_cycles);
        prop_assert_eq!(r.breakdown.total(), r.measured_cycles);
    }

    #[test]
    fn bounded_runs_terminate(seed in any::<u64>(), f in 1u16..=2) {
        let s = liveness_case(seed, f);
        let r = run_spec(&s, true);
        prop_assert!(!r.exhausted);
        prop_assert_eq!(r.workload_delivered, s.workload.requests);
        prop_assert!(r.max_incident_rounds <= 4);
    }

    #[test]
    fn reruns_are_identical(seed in any::<u64>()) {
        let s = safety_case(seed, 1, FAULT_KINDS[(seed % 10) as usize]);
        let a = run_spec(&s, true);
        let b = run_spec(&s, true);
        prop_assert_eq!(&a.trace_digest, &b.trace_digest);
        prop_assert_eq!(export_bytes(&[a.record], Format::Csv), export_bytes(&[b.record], Format::Csv));
    }

    #[test]
    fn synced_state_matches_the_reference(seed in any::<u64>()) {
        let r = run_spec(&state_transfer_case(seed), false);
        prop_assert!(!r.exhausted);
        prop_assert_eq!(r.state_mismatches, 0);
        prop_assert_eq!(r.safety_violations, 0);
        for d in r.tile_digests.values() {
            prop_assert_eq!(*d, r.oracle_digest);
        }
    }
}

#[derive(Clone, Debug, Serialize)]
struct Tick(u32);

#[derive(Default)]
struct Recorder {
    seen: Vec<(Cycle, u64)>,
    fired_timers: Vec<u32>,
}

impl World<Tick> for Recorder {
    fn handle(&mut self, _k: &mut Kernel<Tick>, ev: Event<Tick>) {
        assert!(self.seen.last().is_none_or(|(at, seq)| (*at, *seq) < (ev.at, ev.seq)));
        self.seen.push((ev.at, ev.seq));
        if ev.timer.is_some() {
            self.fired_timers.push(ev.body.0);
        }
    }
}

proptest! {
    #[test]
    fn kernel_dispatches_in_time_order_and_honours_cancellation(
        events in proptest::collection::vec(0u64..1_000, 0..50),
        timers in proptest::collection::vec((0u64..1_000, any::<bool>()), 0..20),
    ) {
        let mut k: Kernel<Tick> = Kernel::new();
        for (i, at) in events.iter().enumerate() {
            k.schedule(Cycle(*at), EntityId::CONTROLLER, Tick(i as u32)).unwrap();
        }
        let mut kept = BTreeSet::new();
        for (i, (at, cancel)) in timers.iter().enumerate() {
            let t = k.arm_timer(EntityId::CONTROLLER, Cycle(*at), Tick(1000 + i as u32)).unwrap();
            if *cancel {
                prop_assert!(k.cancel_timer(t.id));
            } else {
                kept.insert(1000 + i as u32);
            }
        }
        let mut w = Recorder::default();
        let res = k.run_until(&mut w, |_| false, Cycle(2_000));
        prop_assert!(res.is_err());
        prop_assert_eq!(w.seen.len(), events.len() + kept.len());
        prop_assert_eq!(w.fired_timers.iter().copied().collect::<BTreeSet<u32>>(), kept);
    }

    #[test]
    fn wire_roundtrip(uid in any::<u64>(), tid in any::<u16>(), body in proptest::collection::vec(any::<u8>(), 0..300), hashing in any::<bool>()) {
        let m = RequestMessage::new(uid, body.clone(), hashing);
        prop_assert_eq!(RequestMessage::decode(&m.encode()).unwrap(), m.clone());
        prop_assert_eq!(m.encode().len(), RequestMessage::HEADER + body.len());
        let r = ReplyMessage::new(uid, body.clone(), tid, hashing);
        prop_assert_eq!(ReplyMessage::decode(&r.encode()).unwrap(), r.clone());
        prop_assert_eq!(r.verifies(), hashing);
        prop_assert_eq!(m.verifies(), hashing);
    }

    #[test]
    fn flipped_reply_fails_verification(body in proptest::collection::vec(any::<u8>(), 1..64), at in any::<prop::sample::Index>(), bit in 0u8..8) {
        let mut r = ReplyMessage::new(1, body, 0, true);
        let i = at.index(r.rep.len());
        r.rep[i] ^= 1 << bit;
        prop_assert!(!r.verifies());
    }

    #[test]
    fn metrics_roundtrip(delivered in 0u64..1_000, cycles in 0u64..1u64 << 40, ratio in 0.0f64..1e6, name in "[a-z_,\" ]{0,12}") {
        let rec = MetricsRecord {
            scenario: name,
            protocol: Protocol::HQuorumSwh,
            n: 5,
            f: 2,
            submitted: delivered,
            delivered,
            full_match: delivered,
            partial_rejuv: 0,
            full_rejuv: 0,
            steps_per_req: 2.0,
            msgs_per_req: ratio,
            cycles_total: cycles,
            cycles_per_req: ratio / 3.0,
            rejuv_count: 0,
            rejuv_cycles: 0,
            violations: 0,
        };
        let csv = String::from_utf8(export_bytes(std::slice::from_ref(&rec), Format::Csv)).unwrap();
        prop_assert_eq!(parse_csv(&csv).unwrap(), vec![rec.clone()]);
        let jl = String::from_utf8(export_bytes(std::slice::from_ref(&rec), Format::Jsonl)).unwrap();
        prop_assert_eq!(parse_jsonl(&jl).unwrap(), vec![rec]);
    }
}

#[test]
fn tile_lifecycle_edges() {
    use TileStatus::*;
    let all = [Empty, Loading, Ready, Active, Flushed];
    let allowed =
        [(Empty, Loading), (Loading, Ready), (Ready, Active), (Active, Flushed), (Ready, Flushed), (Loading, Flushed), (Flushed, Loading)];
    for a in all {
        for b in all {
            assert_eq!(a.can_become(b), allowed.contains(&(a, b)), "{a:?} -> {b:?}");
        }
    }
}
