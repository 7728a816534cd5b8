//! Built-in scenarios and the seeded generators behind the verification
//! suites.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::adversary::{FaultSpec, ScenarioSpec};
use crate::app::AppKind;
use crate::config::Hashing;
use crate::metrics::Protocol;
use crate::rejuvenation::{Placement, RefreshMode, RejuvPolicy, Scaling, TriggerKind};

/// Every scripted tile behavior plus the network fault.
pub const FAULT_KINDS: [&str; 10] =
    ["crash", "slow", "wrong_output", "bad_digest", "wrong_uid", "silent", "tamper_plmc", "tamper_peer", "stale_replay", "network"];

pub fn fault(target: &str, behavior: &str, onset: u64, duration: Option<u64>, params: Value) -> FaultSpec {
    let params: BTreeMap<String, Value> = match params {
        Value::Object(m) => m.into_iter().collect(),
        _ => BTreeMap::new(),
    };
    FaultSpec { target: target.into(), behavior: behavior.into(), params, onset, duration }
}

fn tile_fault(slot: u16, behavior: &str, onset: u64) -> FaultSpec {
    let params = match behavior {
        "tamper_peer" => json!({ "peer": (slot + 1) % 3 }),
        "slow" => json!({ "extra_cycles": 2_000_000 }),
        _ => json!({}),
    };
    fault(&format!("tile:{slot}"), behavior, onset, None, params)
}

fn named(name: &str, seed: u64, f: u16, app: AppKind, requests: u64) -> ScenarioSpec {
    ScenarioSpec::basic(name, seed, f, app, requests)
}

/// The scenario shipped with the tool, by name.
pub fn builtin() -> Vec<ScenarioSpec> {
    let mut out = Vec::new();

    let mut s = named("fault_free_n3", 1, 1, AppKind::NullOp, 10);
    s.overrides.protocols = Some(Protocol::ALL.to_vec());
    out.push(s);

    let mut s = named("fault_free_n5", 2, 2, AppKind::NullOp, 10);
    s.overrides.protocols = Some(vec![Protocol::HQuorum, Protocol::HQuorumHwh, Protocol::HQuorumSwh]);
    out.push(s);

    for (i, b) in FAULT_KINDS.iter().enumerate() {
        let mut s = named(&format!("{b}_tile"), 10 + i as u64, 1, AppKind::Counter, 12);
        s.faults.push(if *b == "network" {
            fault("network:1", "network", 0, None, json!({ "corrupt_prob": 1.0, "direction": "replies" }))
        } else {
            tile_fault(1, b, 0)
        });
        out.push(s);
    }

    let mut s = named("diversify_relocate", 30, 1, AppKind::HashChain, 12);
    s.policy = RejuvPolicy { refresh_mode: RefreshMode::Diversify, placement: Placement::Relocate, ..RejuvPolicy::default() };
    s.faults.push(tile_fault(2, "wrong_output", 50_000));
    out.push(s);

    let mut s = named("escalation_chain", 31, 1, AppKind::NullOp, 8);
    s.faults.push(fault("tile:1", "wrong_output", 0, None, json!({ "version": "v1" })));
    s.faults.push(fault("tile:1", "wrong_output", 0, None, json!({ "version": "v2" })));
    out.push(s);

    let mut s = named("proactive_rotation", 32, 1, AppKind::Counter, 30);
    s.workload.interarrival_cycles = 40_000;
    s.policy = RejuvPolicy {
        trigger: TriggerKind::Proactive,
        period: Some(300_000),
        refresh_mode: RefreshMode::Diversify,
        ..RejuvPolicy::default()
    };
    out.push(s);

    let mut s = named("scale_out", 33, 1, AppKind::NullOp, 10);
    s.policy.scaling = Scaling::ScaleOut(5);
    s.faults.push(tile_fault(0, "crash", 30_000));
    out.push(s);

    let mut s = named("scale_in", 34, 2, AppKind::NullOp, 20);
    s.workload.interarrival_cycles = 50_000;
    s.policy =
        RejuvPolicy { trigger: TriggerKind::Proactive, period: Some(200_000), scaling: Scaling::ScaleIn(3), ..RejuvPolicy::default() };
    out.push(s);

    // boot ends near 2.2M cycles and the 100th delivery near 3.4M: the
    // crash lands after the first checkpoint
    let mut s = named("checkpoint_crossing", 35, 1, AppKind::Counter, 130);
    s.faults.push(fault("tile:2", "crash", 3_600_000, None, json!({ "transient": true })));
    out.push(s);

    // boot takes about 2.2M cycles; flood once the controller is up
    let mut s = named("dos_flood", 36, 1, AppKind::NullOp, 20);
    s.workload.interarrival_cycles = 150_000;
    s.faults.push(fault("app:1", "flood", 2_500_000, Some(300_000), json!({ "burst": 64, "period": 1024 })));
    out.push(s);

    let mut s = named("software_hashing", 37, 1, AppKind::HashChain, 4);
    s.hashing = Hashing::Software;
    s.policy.refresh_mode = RefreshMode::Diversify;
    s.faults.push(tile_fault(0, "bad_digest", 0));
    out.push(s);

    out.push(negative_safety());
    out.push(tmr_three_way());
    out.push(single_core_wrong_output());
    out
}

/// The only core returns wrong output; nothing catches it.
pub fn single_core_wrong_output() -> ScenarioSpec {
    let mut s = named("single_core_wrong_output", 42, 1, AppKind::Counter, 3);
    s.overrides.protocols = Some(vec![Protocol::SingleCore, Protocol::HQuorumHwh]);
    s.faults.push(fault("tile:0", "wrong_output", 0, None, json!({ "mask": [1] })));
    s
}

/// Hashing disabled and two identical corrupted replies out of three:
/// outside the fault bound, the corrupted value wins the vote.
pub fn negative_safety() -> ScenarioSpec {
    let mut s = named("unbounded_corruption", 40, 1, AppKind::Counter, 4);
    s.hashing = Hashing::Disabled;
    for slot in [1, 2] {
        s.faults.push(fault(
            &format!("network:{slot}"),
            "network",
            0,
            None,
            json!({ "corrupt_prob": 1.0, "xor_mask": [1], "direction": "replies" }),
        ));
    }
    s
}

/// Three pairwise different replies: majority voting cannot resolve.
pub fn tmr_three_way() -> ScenarioSpec {
    let mut s = named("three_way_split", 41, 1, AppKind::Counter, 3);
    s.overrides.protocols = Some(vec![Protocol::Tmr, Protocol::SingleCore, Protocol::HQuorumHwh]);
    s.faults.push(fault("tile:1", "wrong_output", 0, None, json!({ "mask": [1] })));
    s.faults.push(fault("tile:2", "wrong_output", 0, None, json!({ "mask": [2] })));
    s
}

pub fn find(name: &str) -> Option<ScenarioSpec> {
    builtin().into_iter().find(|s| s.name == name)
}

fn random_policy(rng: &mut ChaCha8Rng, n: u16) -> RejuvPolicy {
    let refresh_mode = *[RefreshMode::Refresh, RefreshMode::Diversify].choose(rng).expect("non-empty");
    let placement = *[Placement::Replace, Placement::Relocate].choose(rng).expect("non-empty");
    let proactive = rng.gen_bool(0.25);
    let scaling = match rng.gen_range(0..6) {
        0 if n == 3 => Scaling::ScaleOut(5),
        1 if n == 5 && proactive => Scaling::ScaleIn(3),
        _ => Scaling::Keep,
    };
    RejuvPolicy {
        refresh_mode,
        placement,
        scaling,
        trigger: if proactive { TriggerKind::Proactive } else { TriggerKind::Reactive },
        period: proactive.then(|| rng.gen_range(150_000..600_000)),
    }
}

fn random_fault(rng: &mut ChaCha8Rng, kind: &str, slot: u16, n: u16, onset: u64) -> FaultSpec {
    let duration = rng.gen_bool(0.3).then(|| rng.gen_range(50_000..2_000_000));
    if kind == "network" {
        let p = json!({
            "drop_prob": if rng.gen_bool(0.5) { rng.gen_range(0.0..1.0) } else { 0.0 },
            "corrupt_prob": rng.gen_range(0.0..=1.0),
            "direction": *["replies", "requests", "both"].choose(rng).expect("non-empty"),
        });
        return fault(&format!("network:{slot}"), "network", onset, duration, p);
    }
    let mut p = serde_json::Map::new();
    match kind {
        "tamper_peer" => {
            p.insert("peer".into(), json!((slot + 1 + rng.gen_range(0..n - 1)) % n));
        }
        "slow" => {
            p.insert("extra_cycles".into(), json!(rng.gen_range(1_000..3_000_000)));
        }
        "wrong_output" => {
            p.insert("mask".into(), json!([rng.gen_range(1..=255u8)]));
        }
        _ => {}
    }
    if rng.gen_bool(0.3) {
        p.insert("transient".into(), json!(true));
    }
    if rng.gen_bool(0.2) {
        p.insert("at_uid".into(), json!(rng.gen_range(0..6)));
    }
    fault(&format!("tile:{slot}"), kind, onset, duration, Value::Object(p))
}

/// A random f-bounded scenario. `kind` picks the behavior of the first
/// faulty slot; the others draw uniformly.
pub fn safety_case(seed: u64, f: u16, kind: &str) -> ScenarioSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5afe_0000);
    let n = 2 * f + 1;
    let app = *[AppKind::NullOp, AppKind::Counter, AppKind::HashChain, AppKind::VectorMultiply].choose(&mut rng).expect("non-empty");
    let mut s = named(&format!("safety_{f}_{seed}"), seed, f, app, rng.gen_range(3..10));
    s.hashing = *[Hashing::Hardware, Hashing::Software, Hashing::Disabled].choose(&mut rng).expect("non-empty");
    s.workload.interarrival_cycles = rng.gen_range(0..30_000);
    s.policy = random_policy(&mut rng, n);
    let mut slots: Vec<u16> = (0..n).collect();
    slots.shuffle(&mut rng);
    let faulty = rng.gen_range(1..=f) as usize;
    for (i, slot) in slots.into_iter().take(faulty).enumerate() {
        let k = if i == 0 { kind } else { FAULT_KINDS.choose(&mut rng).expect("non-empty") };
        let onset = if rng.gen_bool(0.5) { 0 } else { rng.gen_range(0..150_000) };
        s.faults.push(random_fault(&mut rng, k, slot, n, onset));
    }
    s
}

/// A random f-bounded scenario with faults starting mid-run, hashed in
/// hardware or not at all.
pub fn liveness_case(seed: u64, f: u16) -> ScenarioSpec {
    let mut s = safety_case(seed, f, FAULT_KINDS[(seed % FAULT_KINDS.len() as u64) as usize]);
    s.name = format!("liveness_{f}_{seed}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x11fe);
    // one software-hashed timer expiry alone costs about half the liveness
    // budget; those runs are covered with a larger budget elsewhere
    if s.hashing == Hashing::Software {
        s.hashing = if rng.gen_bool(0.5) { Hashing::Hardware } else { Hashing::Disabled };
    }
    for fs in &mut s.faults {
        fs.onset = rng.gen_range(20_000..200_000);
    }
    s
}

/// A stateful run with forced partial or full rejuvenations; some runs
/// deliver more than a checkpoint's worth of requests.
pub fn state_transfer_case(seed: u64) -> ScenarioSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x57a7e);
    let app = if rng.gen_bool(0.5) { AppKind::Counter } else { AppKind::HashChain };
    let requests = if seed.is_multiple_of(4) { rng.gen_range(101..140) } else { rng.gen_range(5..60) };
    let mut s = named(&format!("state_{seed}"), seed, 1, app, requests);
    s.policy = random_policy(&mut rng, 3);
    s.policy.scaling = Scaling::Keep;
    // a full-log replay takes up to about 500k cycles; shorter periods leave
    // no room for requests between refreshes
    if s.policy.period.is_some() {
        s.policy.period = Some(rng.gen_range(700_000..1_400_000));
    }
    // boot ends near 2.25M cycles and a round takes about 12k; land the
    // faults inside the workload
    let span = requests * 12_000;
    let onset = 2_300_000 + rng.gen_range(0..span);
    let full = rng.gen_bool(0.5);
    let victims: &[u16] = if full { &[0, 1] } else { &[2] };
    for v in victims {
        s.faults.push(fault(&format!("tile:{v}"), "crash", onset, None, json!({ "transient": true })));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::compile;

    #[test]
    fn builtins_compile_and_have_unique_names() {
        let all = builtin();
        let mut names: Vec<&str> = all.iter().map(|s| s.name.as_str()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), all.len());
        for s in &all {
            let bounded = !matches!(s.name.as_str(), "unbounded_corruption" | "three_way_split");
            compile(s, bounded).unwrap_or_else(|e| panic!("{}: {e}", s.name));
        }
    }

    #[test]
    fn generated_cases_are_f_bounded() {
        for seed in 0..200 {
            for f in [1, 2] {
                compile(&safety_case(seed, f, FAULT_KINDS[seed as usize % 10]), true).unwrap();
                compile(&liveness_case(seed, f), true).unwrap();
            }
            compile(&state_transfer_case(seed), false).unwrap();
        }
    }

    #[test]
    fn builtins_roundtrip_through_json() {
        for s in builtin() {
            assert_eq!(ScenarioSpec::from_json(&s.to_json()).unwrap(), s);
        }
    }
}
