//! Seeded random construction of update ops and values, shared by the
//! randomized checker drivers and the test suites.

use rand::Rng;

use super::{ActorId, LatticeKind, LatticeValue, UpdateOp};

/// A random op valid for `kind`. Actors are drawn from `0..actors`,
/// elements from `0..elem_span`, assign stamps from `0..stamp_span`.
pub fn random_op(
    kind: LatticeKind,
    rng: &mut impl Rng,
    actors: u32,
    elem_span: i64,
    stamp_span: u64,
) -> UpdateOp {
    let actor = ActorId(rng.gen_range(0..actors.max(1)));
    let elem = rng.gen_range(0..elem_span.max(1));
    match kind {
        LatticeKind::GCounter => UpdateOp::Increment(actor),
        LatticeKind::PnCounter => {
            if rng.gen_bool(0.5) {
                UpdateOp::Increment(actor)
            } else {
                UpdateOp::Decrement(actor)
            }
        }
        LatticeKind::GSet => UpdateOp::Add(elem),
        LatticeKind::TwoPSet | LatticeKind::OrSet => {
            if rng.gen_bool(0.7) {
                UpdateOp::Add(elem)
            } else {
                UpdateOp::Remove(elem)
            }
        }
        LatticeKind::LwwRegister => UpdateOp::Assign {
            elem,
            stamp_ms: rng.gen_range(0..stamp_span.max(1)),
            actor,
        },
    }
}

/// A random value of `kind` built by applying `n_ops` random ops to bottom.
/// The issuing actor of each op doubles as the tag actor for OR-set adds.
pub fn random_value(
    kind: LatticeKind,
    rng: &mut impl Rng,
    actors: u32,
    elem_span: i64,
    n_ops: usize,
) -> LatticeValue {
    let mut value = LatticeValue::bottom(kind);
    for _ in 0..n_ops {
        let op = random_op(kind, rng, actors, elem_span, 1_000);
        let actor = op_actor(&op).unwrap_or(ActorId(rng.gen_range(0..actors.max(1))));
        value = value.update(&op, actor).expect("generated op is valid");
    }
    value
}

fn op_actor(op: &UpdateOp) -> Option<ActorId> {
    match op {
        UpdateOp::Increment(a) | UpdateOp::Decrement(a) => Some(*a),
        UpdateOp::Assign { actor, .. } => Some(*actor),
        UpdateOp::Add(_) | UpdateOp::Remove(_) => None,
    }
}
