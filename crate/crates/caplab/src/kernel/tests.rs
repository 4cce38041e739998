use proptest::prelude::*;

use super::sexpr::{parse, render};
use super::*;

fn run_pure(src: &str) -> Result<Value, EvalError> {
    eval_pure(&parse(src).unwrap())
}

#[test]
fn identity_application() {
    assert_eq!(run_pure("(app (lam x x) 5)").unwrap(), Value::Int(5));
}

#[test]
fn nested_closures_capture_their_environment() {
    // ((lam x (lam y (+ x y))) 3) 4 = 7
    let src = "(app (app (lam x (lam y (+ x y))) 3) 4)";
    assert_eq!(run_pure(src).unwrap(), Value::Int(7));
}

#[test]
fn shadowing_resolves_to_innermost_binding() {
    let src = "(app (lam x (app (lam x (* x 10)) 2)) 9)";
    assert_eq!(run_pure(src).unwrap(), Value::Int(20));
}

#[test]
fn arithmetic_comparison_and_sets() {
    assert_eq!(run_pure("(+ 2 (* 3 4))").unwrap(), Value::Int(14));
    assert_eq!(run_pure("(<= 3 3)").unwrap(), Value::Bool(true));
    assert_eq!(run_pure("(and (not false) (= 2 2))").unwrap(), Value::Bool(true));
    assert_eq!(
        run_pure("(union (set 1 2) (set 2 3))").unwrap(),
        Value::Set([1, 2, 3].into_iter().collect())
    );
    assert_eq!(run_pure("(size (inter (set 1 2) (set 2 3)))").unwrap(), Value::Int(1));
    assert_eq!(run_pure("(contains (set 1 2) 2)").unwrap(), Value::Bool(true));
    assert_eq!(run_pure("(set)").unwrap(), Value::Set(Default::default()));
}

#[test]
fn type_errors_are_reported() {
    assert!(matches!(run_pure("(app 3 4)"), Err(EvalError::TypeError(_))));
    assert!(matches!(run_pure("(+ true 1)"), Err(EvalError::TypeError(_))));
    assert!(matches!(run_pure("(size 3)"), Err(EvalError::TypeError(_))));
    assert!(matches!(run_pure("(= 1 true)"), Err(EvalError::TypeError(_))));
}

#[test]
fn unbound_variable_fails() {
    assert_eq!(
        eval_pure(&Expr::Var("ghost".into())),
        Err(EvalError::UnboundVariable("ghost".into()))
    );
}

#[test]
fn register_access_suspends_the_machine() {
    let mut m = Machine::new(parse("(+ 1 (deref r1))").unwrap());
    match m.run() {
        MachineState::NeedsRegister { reg, access } => {
            assert_eq!(reg, RegisterId::new("r1"));
            assert_eq!(access, Access::Read);
        }
        other => panic!("expected suspension, got {other:?}"),
    }
    m.resume(Value::Int(41));
    assert_eq!(m.run(), MachineState::Done(Value::Int(42)));
}

#[test]
fn store_suspends_with_the_op() {
    let mut m = Machine::new(parse("(store r2 (add 3))").unwrap());
    match m.run() {
        MachineState::NeedsRegister { reg, access } => {
            assert_eq!(reg, RegisterId::new("r2"));
            assert_eq!(access, Access::Write(StoreOp::Add(3)));
        }
        other => panic!("expected suspension, got {other:?}"),
    }
}

#[test]
fn accesses_happen_left_to_right() {
    let mut m = Machine::new(parse("(+ (deref a) (deref b))").unwrap());
    match m.run() {
        MachineState::NeedsRegister { reg, .. } => assert_eq!(reg, RegisterId::new("a")),
        other => panic!("{other:?}"),
    }
    m.resume(Value::Int(1));
    match m.run() {
        MachineState::NeedsRegister { reg, .. } => assert_eq!(reg, RegisterId::new("b")),
        other => panic!("{other:?}"),
    }
    m.resume(Value::Int(2));
    assert_eq!(m.run(), MachineState::Done(Value::Int(3)));
}

#[test]
fn pure_eval_rejects_register_forms() {
    assert!(matches!(run_pure("(deref r1)"), Err(EvalError::UnboundRegister(_))));
}

#[test]
fn register_refs_in_textual_order() {
    let e = parse("(+ (store b (inc)) (app (lam x (deref a)) (deref b)))").unwrap();
    let refs: Vec<String> = e.register_refs().iter().map(|r| r.to_string()).collect();
    assert_eq!(refs, vec!["b", "a", "b"]);
}

#[test]
fn parse_rejects_malformed_programs() {
    for bad in [
        "",
        "(",
        ")",
        "(lam 3 x)",
        "(app f)",
        "(deref)",
        "(store r1)",
        "(store r1 (frob 3))",
        "(store r1 (inc 3))",
        "(unknown 1 2)",
        "(+ 1)",
        "(not 1 2)",
        "1 2",
        "((lam x x) 5)",
    ] {
        assert!(parse(bad).is_err(), "{bad:?} should not parse");
    }
}

#[test]
fn store_op_forms_parse() {
    for (src, op) in [
        ("(store r (inc))", StoreOp::Inc),
        ("(store r (dec))", StoreOp::Dec),
        ("(store r (add -3))", StoreOp::Add(-3)),
        ("(store r (remove 7))", StoreOp::Remove(7)),
        ("(store r (assign 9))", StoreOp::Assign(9)),
    ] {
        assert_eq!(parse(src).unwrap(), Expr::Store(RegisterId::new("r"), op));
    }
}

/// Strategy for random pure expressions (closed, register-free).
fn pure_expr(depth: u32) -> BoxedStrategy<Expr> {
    let leaf = prop_oneof![
        (-20i64..20).prop_map(|n| Expr::Lit(Const::Int(n))),
        any::<bool>().prop_map(|b| Expr::Lit(Const::Bool(b))),
    ];
    leaf.prop_recursive(depth, 64, 3, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone())
                .prop_map(|(f, x)| Expr::App(Box::new(Expr::Lam("v".into(), Box::new(Expr::Var("v".into())))), Box::new(Expr::App(Box::new(Expr::Lam("w".into(), Box::new(f))), Box::new(x))))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Prim(PrimOp::Add, vec![a, b])),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Prim(PrimOp::Mul, vec![a, b])),
            inner.clone().prop_map(|a| Expr::App(
                Box::new(Expr::Lam("x".into(), Box::new(Expr::Var("x".into())))),
                Box::new(a)
            )),
        ]
    })
    .boxed()
}

proptest! {
    // Round-trip through the s-expression syntax is exact.
    #[test]
    fn render_parse_round_trips(e in pure_expr(3)) {
        let text = render(&e);
        prop_assert_eq!(parse(&text).unwrap(), e);
    }

    // The machine agrees with a straightforward recursive evaluator on the
    // pure fragment.
    #[test]
    fn machine_matches_recursive_reference(e in pure_expr(3)) {
        fn reference(e: &Expr, env: &Env) -> Result<Value, EvalError> {
            match e {
                Expr::Var(n) => env.lookup(n).cloned().ok_or_else(|| EvalError::UnboundVariable(n.clone())),
                Expr::Lam(p, b) => Ok(Value::Closure(std::rc::Rc::new(Closure {
                    param: p.clone(),
                    body: (**b).clone(),
                    env: env.clone(),
                }))),
                Expr::App(f, x) => {
                    let fv = reference(f, env)?;
                    let xv = reference(x, env)?;
                    match fv {
                        Value::Closure(c) => reference(&c.body, &c.env.bind(&c.param, xv)),
                        v => Err(EvalError::TypeError(format!("cannot apply {}", v.render()))),
                    }
                }
                Expr::Lit(Const::Int(n)) => Ok(Value::Int(*n)),
                Expr::Lit(Const::Bool(b)) => Ok(Value::Bool(*b)),
                Expr::Prim(op, args) => {
                    let vals: Result<Vec<Value>, EvalError> =
                        args.iter().map(|a| reference(a, env)).collect();
                    super::apply_prim(*op, vals?)
                }
                Expr::Deref(r) | Expr::Store(r, _) => Err(EvalError::UnboundRegister(r.clone())),
            }
        }
        let expected = reference(&e, &Env::empty());
        let actual = eval_pure(&e);
        match (expected, actual) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "reference {a:?} vs machine {b:?}"),
        }
    }
}
