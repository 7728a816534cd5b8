//! Exhaustive check of the quorum decision rule over every reply pattern.

mod common;

use std::collections::BTreeSet;

use common::{check, vote_set, Cell};
use tilequorum::controller::{evaluate_votes, DecisionKind};

#[test]
fn all_patterns_n3() {
    assert_eq!(check(3), 2 * 27);
}

#[test]
fn all_patterns_n5() {
    assert_eq!(check(5), 2 * 243);
}

#[test]
fn known_rows() {
    use Cell::*;
    let active: BTreeSet<u16> = (0..3).collect();
    let kind = |p: &[Cell]| evaluate_votes(&vote_set(p), &active, 1, true).unwrap().kind;
    assert_eq!(kind(&[X, X, X]), DecisionKind::DeliverFull);
    assert_eq!(kind(&[X, X, Y]), DecisionKind::DeliverPartialRejuv);
    assert_eq!(kind(&[X, X, Absent]), DecisionKind::DeliverPartialRejuv);
    assert_eq!(kind(&[X, Y, Absent]), DecisionKind::FullRejuv);
    assert_eq!(kind(&[Absent, Absent, Absent]), DecisionKind::FullRejuv);
}
