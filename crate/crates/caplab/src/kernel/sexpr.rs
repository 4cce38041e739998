//! S-expression syntax for programs, e.g. `(app (lam x x) 5)`,
//! `(deref r1)`, `(store r1 (add 3))`.

use thiserror::Error;

use crate::replica::RegisterId;

use super::{Const, Expr, PrimOp, StoreOp};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad program syntax: {msg}")]
pub struct ParseExprError {
    pub msg: String,
}

fn bad<T>(msg: impl Into<String>) -> Result<T, ParseExprError> {
    Err(ParseExprError { msg: msg.into() })
}

#[derive(Debug, Clone, PartialEq)]
enum SExp {
    Atom(String),
    List(Vec<SExp>),
}

fn tokenize(src: &str) -> Result<Vec<String>, ParseExprError> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for c in src.chars() {
        match c {
            '(' | ')' => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
                tokens.push(c.to_string());
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    if tokens.is_empty() {
        return bad("empty program");
    }
    Ok(tokens)
}

fn read(tokens: &[String], pos: &mut usize) -> Result<SExp, ParseExprError> {
    match tokens.get(*pos) {
        None => bad("unexpected end of input"),
        Some(t) if t == "(" => {
            *pos += 1;
            let mut items = Vec::new();
            loop {
                match tokens.get(*pos) {
                    None => return bad("missing closing parenthesis"),
                    Some(t) if t == ")" => {
                        *pos += 1;
                        return Ok(SExp::List(items));
                    }
                    _ => items.push(read(tokens, pos)?),
                }
            }
        }
        Some(t) if t == ")" => bad("unexpected closing parenthesis"),
        Some(t) => {
            *pos += 1;
            Ok(SExp::Atom(t.clone()))
        }
    }
}

fn prim_by_symbol(sym: &str) -> Option<PrimOp> {
    [
        PrimOp::Add,
        PrimOp::Sub,
        PrimOp::Mul,
        PrimOp::Eq,
        PrimOp::Lt,
        PrimOp::Le,
        PrimOp::Gt,
        PrimOp::Ge,
        PrimOp::And,
        PrimOp::Or,
        PrimOp::Not,
        PrimOp::Union,
        PrimOp::Inter,
        PrimOp::Contains,
        PrimOp::Size,
        PrimOp::MkSet,
    ]
    .into_iter()
    .find(|p| p.symbol() == sym)
}

fn is_symbol(s: &str) -> bool {
    !s.is_empty()
        && s.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn atom_expr(atom: &str) -> Result<Expr, ParseExprError> {
    if let Ok(n) = atom.parse::<i64>() {
        return Ok(Expr::Lit(Const::Int(n)));
    }
    match atom {
        "true" => Ok(Expr::Lit(Const::Bool(true))),
        "false" => Ok(Expr::Lit(Const::Bool(false))),
        s if is_symbol(s) => Ok(Expr::Var(s.to_string())),
        s => bad(format!("bad atom {s:?}")),
    }
}

fn store_op(sexp: &SExp) -> Result<StoreOp, ParseExprError> {
    let items = match sexp {
        SExp::List(items) => items,
        SExp::Atom(a) => return bad(format!("expected an update op, got {a:?}")),
    };
    let name = match items.first() {
        Some(SExp::Atom(name)) => name.as_str(),
        _ => return bad("expected an update op"),
    };
    let elem_arg = || -> Result<i64, ParseExprError> {
        match items.get(1) {
            Some(SExp::Atom(a)) if items.len() == 2 => {
                a.parse().map_err(|_| ParseExprError {
                    msg: format!("{name} expects an integer, got {a:?}"),
                })
            }
            _ => bad(format!("{name} expects exactly one integer argument")),
        }
    };
    match name {
        "inc" if items.len() == 1 => Ok(StoreOp::Inc),
        "dec" if items.len() == 1 => Ok(StoreOp::Dec),
        "inc" | "dec" => bad(format!("{name} takes no arguments")),
        "add" => Ok(StoreOp::Add(elem_arg()?)),
        "remove" => Ok(StoreOp::Remove(elem_arg()?)),
        "assign" => Ok(StoreOp::Assign(elem_arg()?)),
        other => bad(format!("unknown update op {other:?}")),
    }
}

fn expr(sexp: &SExp) -> Result<Expr, ParseExprError> {
    let items = match sexp {
        SExp::Atom(a) => return atom_expr(a),
        SExp::List(items) => items,
    };
    let head = match items.first() {
        Some(SExp::Atom(h)) => h.as_str(),
        Some(SExp::List(_)) => return bad("application must be written (app f x)"),
        None => return bad("empty list"),
    };
    match head {
        "lam" => match &items[1..] {
            [SExp::Atom(param), body] if is_symbol(param) => {
                Ok(Expr::Lam(param.clone(), Box::new(expr(body)?)))
            }
            _ => bad("lam expects (lam name body)"),
        },
        "app" => match &items[1..] {
            [f, x] => Ok(Expr::App(Box::new(expr(f)?), Box::new(expr(x)?))),
            _ => bad("app expects (app f x)"),
        },
        "deref" => match &items[1..] {
            [SExp::Atom(reg)] if is_symbol(reg) => Ok(Expr::Deref(RegisterId::new(reg))),
            _ => bad("deref expects (deref register)"),
        },
        "store" => match &items[1..] {
            [SExp::Atom(reg), op] if is_symbol(reg) => {
                Ok(Expr::Store(RegisterId::new(reg), store_op(op)?))
            }
            _ => bad("store expects (store register (op ...))"),
        },
        sym => match prim_by_symbol(sym) {
            Some(op) => {
                let args: Vec<Expr> = items[1..].iter().map(expr).collect::<Result<_, _>>()?;
                if let Some(arity) = op.arity() {
                    if args.len() != arity {
                        return bad(format!("{sym} expects {arity} argument(s), got {}", args.len()));
                    }
                }
                Ok(Expr::Prim(op, args))
            }
            None => bad(format!("unknown form {sym:?}")),
        },
    }
}

/// Parses one program.
pub fn parse(src: &str) -> Result<Expr, ParseExprError> {
    let tokens = tokenize(src)?;
    let mut pos = 0;
    let sexp = read(&tokens, &mut pos)?;
    if pos != tokens.len() {
        return bad("trailing tokens after program");
    }
    expr(&sexp)
}

/// Canonical rendering; `parse(render(e)) == e`.
pub fn render(expr: &Expr) -> String {
    match expr {
        Expr::Var(name) => name.clone(),
        Expr::Lam(param, body) => format!("(lam {param} {})", render(body)),
        Expr::App(f, x) => format!("(app {} {})", render(f), render(x)),
        Expr::Lit(Const::Int(n)) => n.to_string(),
        Expr::Lit(Const::Bool(b)) => b.to_string(),
        Expr::Prim(op, args) => {
            let mut out = format!("({}", op.symbol());
            for arg in args {
                out.push(' ');
                out.push_str(&render(arg));
            }
            out.push(')');
            out
        }
        Expr::Deref(reg) => format!("(deref {reg})"),
        Expr::Store(reg, op) => format!("(store {reg} {op})"),
    }
}
