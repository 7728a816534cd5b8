//! Comparison runs of the same scenario under the single-core and TMR
//! baselines and under H-Quorum.

use crate::adversary::CompiledScenario;
use crate::config::Hashing;
use crate::metrics::Protocol;
use crate::system::{run, RunOptions, RunReport};

/// One core, no voting, no hashing. A lost request is abandoned.
pub fn run_single(sc: &CompiledScenario, opts: &RunOptions) -> RunReport {
    run(sc, Protocol::SingleCore, opts)
}

/// Three replicas with majority voting and no recovery. Software hashing is
/// not a TMR configuration and falls back to hardware hashing.
pub fn run_tmr(sc: &CompiledScenario, hashing: Hashing, opts: &RunOptions) -> RunReport {
    let p = if hashing.enabled() { Protocol::TmrHwh } else { Protocol::Tmr };
    run(sc, p, opts)
}

pub fn run_hquorum(sc: &CompiledScenario, hashing: Hashing, opts: &RunOptions) -> RunReport {
    run(sc, Protocol::hquorum(hashing), opts)
}

/// Every protocol the scenario asks for, in order.
pub fn run_all(sc: &CompiledScenario, opts: &RunOptions) -> Vec<RunReport> {
    sc.spec.protocols().into_iter().map(|p| run(sc, p, opts)).collect()
}
