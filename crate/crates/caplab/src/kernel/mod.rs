//! Call-by-value lambda kernel with register access forms.
//!
//! The expression language is a plain lambda calculus over integer, boolean
//! and integer-set constants, extended with two effectful forms: `Deref`
//! reads a named replicated register, `Store` applies an inflationary
//! update to one. Pure forms reduce without touching simulated time.
//!
//! Register access is where synchronization policies hook in. The
//! [`Machine`] evaluates with an explicit continuation stack; on reaching a
//! `Deref`/`Store` it stops and reports [`MachineState::NeedsRegister`],
//! leaving a resumable value behind. The runtime decides (per the
//! register's policy) when and with what value to [`Machine::resume`] it.
//! The machine itself never sees network or replica state, which keeps the
//! pure fragment confluent by construction: evaluation order is fixed
//! left-to-right, and all delay lives in the resume schedule.

pub mod sexpr;

use std::collections::BTreeSet;
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

use crate::replica::RegisterId;
use crate::simnet::NodeId;

/// Literal constants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Const {
    Int(i64),
    Bool(bool),
}

/// Built-in strict operators: arithmetic, comparison, booleans and
/// integer-set construction/combination.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrimOp {
    Add,
    Sub,
    Mul,
    Eq,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
    Not,
    Union,
    Inter,
    Contains,
    Size,
    MkSet,
}

impl PrimOp {
    pub fn symbol(self) -> &'static str {
        match self {
            PrimOp::Add => "+",
            PrimOp::Sub => "-",
            PrimOp::Mul => "*",
            PrimOp::Eq => "=",
            PrimOp::Lt => "<",
            PrimOp::Le => "<=",
            PrimOp::Gt => ">",
            PrimOp::Ge => ">=",
            PrimOp::And => "and",
            PrimOp::Or => "or",
            PrimOp::Not => "not",
            PrimOp::Union => "union",
            PrimOp::Inter => "inter",
            PrimOp::Contains => "contains",
            PrimOp::Size => "size",
            PrimOp::MkSet => "set",
        }
    }

    /// `None` means variadic.
    pub fn arity(self) -> Option<usize> {
        match self {
            PrimOp::Not | PrimOp::Size => Some(1),
            PrimOp::MkSet => None,
            _ => Some(2),
        }
    }
}

/// Surface form of a register update: the issuing replica and, for
/// assigns, the timestamp are bound at the access site by the runtime, not
/// written in the program.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StoreOp {
    Inc,
    Dec,
    Add(i64),
    Remove(i64),
    Assign(i64),
}

impl fmt::Display for StoreOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StoreOp::Inc => write!(f, "(inc)"),
            StoreOp::Dec => write!(f, "(dec)"),
            StoreOp::Add(e) => write!(f, "(add {e})"),
            StoreOp::Remove(e) => write!(f, "(remove {e})"),
            StoreOp::Assign(e) => write!(f, "(assign {e})"),
        }
    }
}

/// Expressions. Programs must be closed; register ids are resolved against
/// the scenario's register table at evaluation time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expr {
    Var(String),
    Lam(String, Box<Expr>),
    App(Box<Expr>, Box<Expr>),
    Lit(Const),
    Prim(PrimOp, Vec<Expr>),
    Deref(RegisterId),
    Store(RegisterId, StoreOp),
}

impl Expr {
    /// Register ids referenced anywhere in the expression, in textual
    /// order, duplicates preserved.
    pub fn register_refs(&self) -> Vec<RegisterId> {
        let mut out = Vec::new();
        self.collect_refs(&mut out);
        out
    }

    fn collect_refs(&self, out: &mut Vec<RegisterId>) {
        match self {
            Expr::Var(_) | Expr::Lit(_) => {}
            Expr::Lam(_, body) => body.collect_refs(out),
            Expr::App(f, x) => {
                f.collect_refs(out);
                x.collect_refs(out);
            }
            Expr::Prim(_, args) => {
                for arg in args {
                    arg.collect_refs(out);
                }
            }
            Expr::Deref(r) => out.push(r.clone()),
            Expr::Store(r, _) => out.push(r.clone()),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&sexpr::render(self))
    }
}

/// Runtime values.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Int(i64),
    Bool(bool),
    Set(BTreeSet<i64>),
    Closure(Rc<Closure>),
}

#[derive(Debug, PartialEq)]
pub struct Closure {
    pub param: String,
    pub body: Expr,
    pub env: Env,
}

impl Value {
    pub fn render(&self) -> String {
        match self {
            Value::Int(n) => n.to_string(),
            Value::Bool(b) => b.to_string(),
            Value::Set(es) => {
                let inner: Vec<String> = es.iter().map(|e| e.to_string()).collect();
                format!("{{{}}}", inner.join(","))
            }
            Value::Closure(c) => format!("<lam {}>", c.param),
        }
    }

    fn type_name(&self) -> &'static str {
        match self {
            Value::Int(_) => "int",
            Value::Bool(_) => "bool",
            Value::Set(_) => "set",
            Value::Closure(_) => "closure",
        }
    }
}

/// Persistent binding environment (shared tails, cheap clones).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Env(Option<Rc<EnvNode>>);

#[derive(Debug, PartialEq)]
struct EnvNode {
    name: String,
    value: Value,
    parent: Env,
}

impl Env {
    pub fn empty() -> Env {
        Env(None)
    }

    pub fn bind(&self, name: &str, value: Value) -> Env {
        Env(Some(Rc::new(EnvNode {
            name: name.to_string(),
            value,
            parent: self.clone(),
        })))
    }

    pub fn lookup(&self, name: &str) -> Option<&Value> {
        let mut cur = self;
        while let Some(node) = &cur.0 {
            if node.name == name {
                return Some(&node.value);
            }
            cur = &node.parent;
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unbound variable {0}")]
    UnboundVariable(String),
    #[error("unbound register {0}")]
    UnboundRegister(RegisterId),
    #[error("type error: {0}")]
    TypeError(String),
    #[error("invalid update on {reg}: {detail}")]
    InvalidUpdate { reg: RegisterId, detail: String },
    #[error("node {node} is not a replica of {reg}")]
    NotAReplica { node: NodeId, reg: RegisterId },
    #[error("node {0} is down")]
    NodeDown(NodeId),
    #[error("staleness unsatisfiable on {reg}: age {age_ms}ms exceeds bound {bound_ms}ms")]
    StalenessUnsatisfiable {
        reg: RegisterId,
        age_ms: u64,
        bound_ms: u64,
    },
    #[error("transaction aborted: {reason}")]
    TxnAborted { reason: String },
}

impl EvalError {
    /// Short machine-readable label for history files.
    pub fn label(&self) -> String {
        match self {
            EvalError::UnboundVariable(v) => format!("unbound_variable({v})"),
            EvalError::UnboundRegister(r) => format!("unbound_register({r})"),
            EvalError::TypeError(_) => "type_error".to_string(),
            EvalError::InvalidUpdate { reg, .. } => format!("invalid_update({reg})"),
            EvalError::NotAReplica { node, reg } => format!("not_a_replica(n{},{reg})", node.0),
            EvalError::NodeDown(n) => format!("node_down(n{})", n.0),
            EvalError::StalenessUnsatisfiable { reg, age_ms, bound_ms } => {
                format!("staleness_unsatisfiable({reg},age={age_ms},bound={bound_ms})")
            }
            EvalError::TxnAborted { reason } => format!("txn_aborted({reason})"),
        }
    }
}

/// Why a suspended evaluation has not resumed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockReason {
    AwaitingTxn { txn: u64 },
    AwaitingRefresh { reg: RegisterId },
}

impl fmt::Display for BlockReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockReason::AwaitingTxn { txn } => write!(f, "awaiting_txn({txn})"),
            BlockReason::AwaitingRefresh { reg } => write!(f, "awaiting_refresh({reg})"),
        }
    }
}

/// Final fate of one workload operation.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Completed { value: Value, finished_at: u64 },
    Blocked { reason: BlockReason, since: u64 },
    Failed(EvalError),
}

/// Register access the machine is suspended on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Access {
    Read,
    Write(StoreOp),
}

/// What `Machine::run` stopped on.
#[derive(Debug, Clone, PartialEq)]
pub enum MachineState {
    Done(Value),
    NeedsRegister { reg: RegisterId, access: Access },
    Failed(EvalError),
}

enum Ctrl {
    Eval(Expr, Env),
    Ret(Value),
}

enum Frame {
    AppArg { arg: Expr, env: Env },
    AppApply { func: Value },
    Prim { op: PrimOp, done: Vec<Value>, rest: Vec<Expr>, env: Env },
}

/// A resumable call-by-value evaluator.
pub struct Machine {
    ctrl: Option<Ctrl>,
    stack: Vec<Frame>,
    awaiting: bool,
}

impl Machine {
    pub fn new(program: Expr) -> Machine {
        Machine {
            ctrl: Some(Ctrl::Eval(program, Env::empty())),
            stack: Vec::new(),
            awaiting: false,
        }
    }

    /// Supplies the value of the register access the machine is suspended
    /// on. Must follow a `NeedsRegister` result.
    pub fn resume(&mut self, value: Value) {
        assert!(self.awaiting, "resume without a pending register access");
        self.awaiting = false;
        self.ctrl = Some(Ctrl::Ret(value));
    }

    /// Steps until the program finishes, fails, or suspends on a register.
    pub fn run(&mut self) -> MachineState {
        assert!(!self.awaiting, "run while awaiting a register value");
        loop {
            let ctrl = self.ctrl.take().expect("machine already finished");
            match ctrl {
                Ctrl::Eval(expr, env) => match expr {
                    Expr::Var(name) => match env.lookup(&name) {
                        Some(v) => self.ctrl = Some(Ctrl::Ret(v.clone())),
                        None => return MachineState::Failed(EvalError::UnboundVariable(name)),
                    },
                    Expr::Lam(param, body) => {
                        self.ctrl = Some(Ctrl::Ret(Value::Closure(Rc::new(Closure {
                            param,
                            body: *body,
                            env,
                        }))));
                    }
                    Expr::App(f, x) => {
                        self.stack.push(Frame::AppArg { arg: *x, env: env.clone() });
                        self.ctrl = Some(Ctrl::Eval(*f, env));
                    }
                    Expr::Lit(Const::Int(n)) => self.ctrl = Some(Ctrl::Ret(Value::Int(n))),
                    Expr::Lit(Const::Bool(b)) => self.ctrl = Some(Ctrl::Ret(Value::Bool(b))),
                    Expr::Prim(op, args) => {
                        let mut rest = args;
                        rest.reverse();
                        match rest.pop() {
                            Some(first) => {
                                self.stack.push(Frame::Prim {
                                    op,
                                    done: Vec::new(),
                                    rest,
                                    env: env.clone(),
                                });
                                self.ctrl = Some(Ctrl::Eval(first, env));
                            }
                            None => match apply_prim(op, Vec::new()) {
                                Ok(v) => self.ctrl = Some(Ctrl::Ret(v)),
                                Err(e) => return MachineState::Failed(e),
                            },
                        }
                    }
                    Expr::Deref(reg) => {
                        self.awaiting = true;
                        return MachineState::NeedsRegister { reg, access: Access::Read };
                    }
                    Expr::Store(reg, op) => {
                        self.awaiting = true;
                        return MachineState::NeedsRegister { reg, access: Access::Write(op) };
                    }
                },
                Ctrl::Ret(value) => match self.stack.pop() {
                    None => return MachineState::Done(value),
                    Some(Frame::AppArg { arg, env }) => {
                        self.stack.push(Frame::AppApply { func: value });
                        self.ctrl = Some(Ctrl::Eval(arg, env));
                    }
                    Some(Frame::AppApply { func }) => match func {
                        Value::Closure(c) => {
                            let env = c.env.bind(&c.param, value);
                            self.ctrl = Some(Ctrl::Eval(c.body.clone(), env));
                        }
                        other => {
                            return MachineState::Failed(EvalError::TypeError(format!(
                                "cannot apply {}",
                                other.type_name()
                            )));
                        }
                    },
                    Some(Frame::Prim { op, mut done, mut rest, env }) => {
                        done.push(value);
                        match rest.pop() {
                            Some(next) => {
                                self.stack.push(Frame::Prim { op, done, rest, env: env.clone() });
                                self.ctrl = Some(Ctrl::Eval(next, env));
                            }
                            None => match apply_prim(op, done) {
                                Ok(v) => self.ctrl = Some(Ctrl::Ret(v)),
                                Err(e) => return MachineState::Failed(e),
                            },
                        }
                    }
                },
            }
        }
    }
}

fn int(v: &Value) -> Result<i64, EvalError> {
    match v {
        Value::Int(n) => Ok(*n),
        other => Err(EvalError::TypeError(format!("expected int, got {}", other.type_name()))),
    }
}

fn boolean(v: &Value) -> Result<bool, EvalError> {
    match v {
        Value::Bool(b) => Ok(*b),
        other => Err(EvalError::TypeError(format!("expected bool, got {}", other.type_name()))),
    }
}

fn set(v: &Value) -> Result<&BTreeSet<i64>, EvalError> {
    match v {
        Value::Set(s) => Ok(s),
        other => Err(EvalError::TypeError(format!("expected set, got {}", other.type_name()))),
    }
}

fn apply_prim(op: PrimOp, args: Vec<Value>) -> Result<Value, EvalError> {
    if let Some(arity) = op.arity() {
        if args.len() != arity {
            return Err(EvalError::TypeError(format!(
                "{} expects {arity} argument(s), got {}",
                op.symbol(),
                args.len()
            )));
        }
    }
    match op {
        PrimOp::Add => Ok(Value::Int(int(&args[0])?.wrapping_add(int(&args[1])?))),
        PrimOp::Sub => Ok(Value::Int(int(&args[0])?.wrapping_sub(int(&args[1])?))),
        PrimOp::Mul => Ok(Value::Int(int(&args[0])?.wrapping_mul(int(&args[1])?))),
        PrimOp::Eq => match (&args[0], &args[1]) {
            (Value::Int(x), Value::Int(y)) => Ok(Value::Bool(x == y)),
            (Value::Bool(x), Value::Bool(y)) => Ok(Value::Bool(x == y)),
            (Value::Set(x), Value::Set(y)) => Ok(Value::Bool(x == y)),
            (x, y) => Err(EvalError::TypeError(format!(
                "cannot compare {} with {}",
                x.type_name(),
                y.type_name()
            ))),
        },
        PrimOp::Lt => Ok(Value::Bool(int(&args[0])? < int(&args[1])?)),
        PrimOp::Le => Ok(Value::Bool(int(&args[0])? <= int(&args[1])?)),
        PrimOp::Gt => Ok(Value::Bool(int(&args[0])? > int(&args[1])?)),
        PrimOp::Ge => Ok(Value::Bool(int(&args[0])? >= int(&args[1])?)),
        PrimOp::And => Ok(Value::Bool(boolean(&args[0])? && boolean(&args[1])?)),
        PrimOp::Or => Ok(Value::Bool(boolean(&args[0])? || boolean(&args[1])?)),
        PrimOp::Not => Ok(Value::Bool(!boolean(&args[0])?)),
        PrimOp::Union => Ok(Value::Set(set(&args[0])?.union(set(&args[1])?).copied().collect())),
        PrimOp::Inter => Ok(Value::Set(
            set(&args[0])?.intersection(set(&args[1])?).copied().collect(),
        )),
        PrimOp::Contains => Ok(Value::Bool(set(&args[0])?.contains(&int(&args[1])?))),
        PrimOp::Size => Ok(Value::Int(set(&args[0])?.len() as i64)),
        PrimOp::MkSet => {
            let mut out = BTreeSet::new();
            for v in &args {
                out.insert(int(v)?);
            }
            Ok(Value::Set(out))
        }
    }
}

/// Evaluates a register-free program to completion. Any register access
/// fails with `UnboundRegister` (there is no datastore here).
pub fn eval_pure(program: &Expr) -> Result<Value, EvalError> {
    let mut machine = Machine::new(program.clone());
    match machine.run() {
        MachineState::Done(v) => Ok(v),
        MachineState::Failed(e) => Err(e),
        MachineState::NeedsRegister { reg, .. } => Err(EvalError::UnboundRegister(reg)),
    }
}

#[cfg(test)]
mod tests;
