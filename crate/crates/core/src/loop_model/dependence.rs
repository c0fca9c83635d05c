//! Conservative loop-carried dependence test.
//!
//! A loop over index `x` is accepted as parallel only when, for every pair of
//! references to the same variable where at least one is a write, some
//! subscript position is `x + c` in both references with the same `c`. Equal
//! subscripts there force equal iterations of `x`, so no two distinct
//! iterations can touch the same element. Scalars written in the body and
//! every subscript that is not of that form are treated as dependences.

use super::ast::{ForLoop, VarRef};

/// `true` when no iteration of `lp` can touch an element written by another
/// iteration, judged from the syntax alone.
pub fn is_dependence_free(lp: &ForLoop) -> bool {
    let mut writes: Vec<&VarRef> = Vec::new();
    let mut touches: Vec<&VarRef> = Vec::new();
    for assign in lp.all_assigns() {
        writes.push(&assign.target);
        touches.push(&assign.target);
        touches.extend(assign.read_refs());
    }
    writes.iter().all(|w| {
        touches
            .iter()
            .filter(|r| r.name == w.name)
            .all(|r| separated_by_index(w, r, &lp.index))
    })
}

fn separated_by_index(a: &VarRef, b: &VarRef, index: &str) -> bool {
    a.indices.iter().zip(&b.indices).any(|(ia, ib)| {
        match (ia.unit_offset_of(index), ib.unit_offset_of(index)) {
            (Some(ca), Some(cb)) => ca == cb,
            _ => false,
        }
    })
}
