//! Tour of the six replicated value kinds: local updates, divergence,
//! merge-as-join, and the set transformations.
//!
//! ```bash
//! cargo run -p caplab --example crdt_playground
//! ```

use caplab::lattice::{ActorId, LatticeKind, LatticeValue, UpdateOp};

fn show(label: &str, v: &LatticeValue) {
    println!("  {label:<26} {v}   query={}", v.query().render());
}

fn main() {
    let alice = ActorId(0);
    let bob = ActorId(1);

    println!("grow-only counter (merge = pointwise max):");
    let mut a = LatticeValue::bottom(LatticeKind::GCounter);
    for _ in 0..3 {
        a = a.update(&UpdateOp::Increment(alice), alice).unwrap();
    }
    let mut b = LatticeValue::bottom(LatticeKind::GCounter);
    for _ in 0..2 {
        b = b.update(&UpdateOp::Increment(bob), bob).unwrap();
    }
    show("alice's replica", &a);
    show("bob's replica", &b);
    show("merged", &a.merge(&b).unwrap());

    println!("\npn-counter (decrements tracked separately):");
    let mut t = LatticeValue::bottom(LatticeKind::PnCounter);
    for op in [UpdateOp::Increment(alice), UpdateOp::Increment(alice), UpdateOp::Decrement(bob)] {
        t = t.update(&op, alice).unwrap();
    }
    show("after +1 +1 -1", &t);

    println!("\ntwo-phase set (remove wins, permanently):");
    let mut tp = LatticeValue::bottom(LatticeKind::TwoPSet);
    tp = tp.update(&UpdateOp::Add(7), alice).unwrap();
    tp = tp.update(&UpdateOp::Remove(7), bob).unwrap();
    tp = tp.update(&UpdateOp::Add(7), alice).unwrap(); // too late
    show("add, remove, re-add", &tp);

    println!("\nobserved-remove set (concurrent re-add wins):");
    let mut ra = LatticeValue::bottom(LatticeKind::OrSet).update(&UpdateOp::Add(7), alice).unwrap();
    let mut rb = ra.clone(); // bob saw alice's add
    rb = rb.update(&UpdateOp::Remove(7), bob).unwrap(); // removes the observed tag
    ra = ra.update(&UpdateOp::Add(7), alice).unwrap(); // concurrent fresh tag
    show("alice re-added", &ra);
    show("bob removed", &rb);
    show("merged (7 survives)", &ra.merge(&rb).unwrap());

    println!("\nlast-writer-wins register (ties break on the larger actor):");
    let x = LatticeValue::bottom(LatticeKind::LwwRegister)
        .update(&UpdateOp::Assign { elem: 10, stamp_ms: 5, actor: alice }, alice)
        .unwrap();
    let y = LatticeValue::bottom(LatticeKind::LwwRegister)
        .update(&UpdateOp::Assign { elem: 20, stamp_ms: 5, actor: bob }, bob)
        .unwrap();
    show("alice wrote 10 @5ms", &x);
    show("bob wrote 20 @5ms", &y);
    show("merged", &x.merge(&y).unwrap());

    println!("\nfunctional views recompute from any input state:");
    let mut s = LatticeValue::bottom(LatticeKind::GSet);
    for e in 1..=5 {
        s = s.update(&UpdateOp::Add(e), alice).unwrap();
    }
    show("source", &s);
    show("map (*10)", &s.map_set(|e| e * 10).unwrap());
    show("filter (even)", &s.filter_set(|e| e % 2 == 0).unwrap());
}
