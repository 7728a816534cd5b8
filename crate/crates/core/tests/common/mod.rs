//! Independent reference for the quorum decision rule, shared by the
//! decision-table and acceptance targets.

use std::collections::BTreeSet;

use tilequorum::controller::{evaluate_votes, DecisionKind, VoteSet};
use tilequorum::kernel::Cycle;
use tilequorum::wire::ReplyMessage;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Cell {
    X,
    Y,
    Absent,
}

pub const CELLS: [Cell; 3] = [Cell::X, Cell::Y, Cell::Absent];

pub fn patterns(n: usize) -> Vec<Vec<Cell>> {
    (0..3usize.pow(n as u32))
        .map(|mut k| {
            (0..n)
                .map(|_| {
                    let c = CELLS[k % 3];
                    k /= 3;
                    c
                })
                .collect()
        })
        .collect()
}

pub fn vote_set(p: &[Cell]) -> VoteSet {
    let mut vs = VoteSet::new(9, b"req".to_vec(), Cycle(0));
    for (i, c) in p.iter().enumerate() {
        let rep: &[u8] = match c {
            Cell::X => b"X",
            Cell::Y => b"Y",
            Cell::Absent => continue,
        };
        vs.replies.insert(i as u16, ReplyMessage::new(9, rep.to_vec(), i as u16, true));
    }
    vs
}

/// Expected outcome computed from the class counts alone.
#[allow(clippy::int_plus_one)]
pub fn expected(p: &[Cell], f: usize, at_expiry: bool) -> Option<(DecisionKind, Option<Cell>)> {
    let x = p.iter().filter(|c| **c == Cell::X).count();
    let y = p.iter().filter(|c| **c == Cell::Y).count();
    let (m, winner) = if x >= y { (x, Cell::X) } else { (y, Cell::Y) };
    if m >= 2 * f + 1 {
        Some((DecisionKind::DeliverFull, Some(winner)))
    } else if !at_expiry {
        None
    } else if m > f {
        Some((DecisionKind::DeliverPartialRejuv, Some(winner)))
    } else {
        Some((DecisionKind::FullRejuv, None))
    }
}

pub fn check(n: usize) -> usize {
    let f = (n - 1) / 2;
    let active: BTreeSet<u16> = (0..n as u16).collect();
    let mut checked = 0;
    for p in patterns(n) {
        let vs = vote_set(&p);
        for at_expiry in [false, true] {
            let got = evaluate_votes(&vs, &active, f, at_expiry);
            let want = expected(&p, f, at_expiry);
            match (got, want) {
                (None, None) => {}
                (Some(d), Some((kind, winner))) => {
                    assert_eq!(d.kind, kind, "pattern {p:?} expiry={at_expiry}");
                    let rep = winner.map(|w| if w == Cell::X { b"X".to_vec() } else { b"Y".to_vec() });
                    assert_eq!(d.rep, rep, "pattern {p:?}");
                    if kind == DecisionKind::DeliverPartialRejuv {
                        let w = winner.unwrap();
                        let suspects: BTreeSet<u16> = p.iter().enumerate().filter(|(_, c)| **c != w).map(|(i, _)| i as u16).collect();
                        assert_eq!(d.suspects, suspects, "pattern {p:?}");
                    }
                }
                (g, w) => panic!("pattern {p:?} expiry={at_expiry}: got {g:?}, want {w:?}"),
            }
            checked += 1;
        }
    }
    checked
}
