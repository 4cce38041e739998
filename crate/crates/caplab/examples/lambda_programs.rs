//! The evaluation kernel: call-by-value lambda programs in s-expression
//! syntax, with register access as the only effect.
//!
//! Pure programs reduce without consuming simulated time under every
//! policy. A register access suspends the machine at the access site;
//! the register's policy decides when (and with what) it resumes — the
//! second half shows the suspension happening step by step.
//!
//! ```bash
//! cargo run -p caplab --example lambda_programs
//! ```

use caplab::kernel::sexpr::parse;
use caplab::kernel::{eval_pure, Machine, MachineState, Value};

fn main() {
    println!("pure reduction (no registers, no simulated time):");
    for src in [
        "(app (lam x x) 5)",
        "(app (app (lam x (lam y (+ x y))) 3) 4)",
        "(app (app (lam f (lam x (app f (app f x)))) (lam n (* n 2))) 3)",
        "(size (union (set 1 2) (set 2 3)))",
        "(and (contains (set 1 2 3) 2) (not (= 1 2)))",
    ] {
        let value = eval_pure(&parse(src).expect("parses")).expect("evaluates");
        println!("  {src:<55} => {}", value.render());
    }

    println!("\nregister access suspends the machine:");
    let program = parse("(+ (deref hits) (size (deref tags)))").unwrap();
    let mut machine = Machine::new(program);
    loop {
        match machine.run() {
            MachineState::NeedsRegister { reg, access } => {
                println!("  suspended on {reg} ({access:?}); the policy layer decides when to resume");
                // Stand in for the runtime: answer with canned values.
                let answer = if reg.as_str() == "hits" {
                    Value::Int(40)
                } else {
                    Value::Set([7, 8].into_iter().collect())
                };
                println!("    ... resuming with {}", answer.render());
                machine.resume(answer);
            }
            MachineState::Done(value) => {
                println!("  done: {}", value.render());
                break;
            }
            MachineState::Failed(error) => {
                println!("  failed: {error}");
                break;
            }
        }
    }
}
