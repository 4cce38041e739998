//! Canonical text rendering for lattice state, update ops and observable
//! values, plus the matching parsers.
//!
//! The rendering is injective per kind (maps and sets iterate in key order)
//! and round-trips exactly, so it can be used in traces, history files and
//! test fixtures.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use super::{ActorId, Elem, LatticeValue, LwwEntry, ObservableValue, Tag, UpdateOp};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot parse {what}: {input:?}")]
pub struct ParseLatticeError {
    pub what: &'static str,
    pub input: String,
}

fn err(what: &'static str, input: &str) -> ParseLatticeError {
    ParseLatticeError {
        what,
        input: input.to_string(),
    }
}

impl fmt::Display for LatticeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatticeValue::GCounter(counts) => {
                write!(f, "gcounter{{{}}}", render_counts(counts))
            }
            LatticeValue::PnCounter { inc, dec } => {
                write!(f, "pncounter{{inc{{{}}},dec{{{}}}}}", render_counts(inc), render_counts(dec))
            }
            LatticeValue::GSet(elems) => write!(f, "gset{{{}}}", render_elems(elems)),
            LatticeValue::TwoPSet { added, removed } => {
                write!(f, "twopset{{add{{{}}},rem{{{}}}}}", render_elems(added), render_elems(removed))
            }
            LatticeValue::OrSet { entries, removed } => {
                let ent: Vec<String> = entries
                    .iter()
                    .map(|(e, tags)| format!("{e}:[{}]", render_tags(tags)))
                    .collect();
                write!(f, "orset{{entries{{{}}},rem[{}]}}", ent.join(","), render_tags(removed))
            }
            LatticeValue::Lww(None) => write!(f, "lww{{}}"),
            LatticeValue::Lww(Some(e)) => write!(f, "lww{{{}@{}.{}}}", e.elem, e.stamp_ms, e.actor),
        }
    }
}

fn render_counts(counts: &BTreeMap<ActorId, u64>) -> String {
    let parts: Vec<String> = counts.iter().map(|(a, n)| format!("{a}:{n}")).collect();
    parts.join(",")
}

fn render_elems(elems: &BTreeSet<Elem>) -> String {
    let parts: Vec<String> = elems.iter().map(|e| e.to_string()).collect();
    parts.join(",")
}

fn render_tags(tags: &BTreeSet<Tag>) -> String {
    let parts: Vec<String> = tags.iter().map(|t| t.to_string()).collect();
    parts.join(",")
}

pub fn render_update_op(op: &UpdateOp) -> String {
    match op {
        UpdateOp::Increment(a) => format!("inc({a})"),
        UpdateOp::Decrement(a) => format!("dec({a})"),
        UpdateOp::Add(e) => format!("add({e})"),
        UpdateOp::Remove(e) => format!("remove({e})"),
        UpdateOp::Assign { elem, stamp_ms, actor } => format!("assign({elem},{stamp_ms},{actor})"),
    }
}

impl fmt::Display for UpdateOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_update_op(self))
    }
}

/// Byte-level cursor for the hand-rolled parsers below.
struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(src: &'a str) -> Self {
        Cursor { src, pos: 0 }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn eat(&mut self, token: &str) -> bool {
        if self.rest().starts_with(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, token: &str, what: &'static str) -> Result<(), ParseLatticeError> {
        if self.eat(token) {
            Ok(())
        } else {
            Err(err(what, self.src))
        }
    }

    fn int(&mut self, what: &'static str) -> Result<i64, ParseLatticeError> {
        let rest = self.rest();
        let mut end = 0;
        for (i, c) in rest.char_indices() {
            if c == '-' && i == 0 || c.is_ascii_digit() {
                end = i + c.len_utf8();
            } else {
                break;
            }
        }
        if end == 0 {
            return Err(err(what, self.src));
        }
        let n = rest[..end].parse().map_err(|_| err(what, self.src))?;
        self.pos += end;
        Ok(n)
    }

    fn uint(&mut self, what: &'static str) -> Result<u64, ParseLatticeError> {
        let n = self.int(what)?;
        u64::try_from(n).map_err(|_| err(what, self.src))
    }

    fn actor(&mut self) -> Result<ActorId, ParseLatticeError> {
        self.expect("a", "actor id")?;
        Ok(ActorId(self.uint("actor id")? as u32))
    }

    fn tag(&mut self) -> Result<Tag, ParseLatticeError> {
        let actor = self.actor()?;
        self.expect(".", "tag")?;
        Ok(Tag { actor, seq: self.uint("tag")? })
    }

    fn done(&self, what: &'static str) -> Result<(), ParseLatticeError> {
        if self.pos == self.src.len() {
            Ok(())
        } else {
            Err(err(what, self.src))
        }
    }
}

fn parse_counts(c: &mut Cursor, what: &'static str) -> Result<BTreeMap<ActorId, u64>, ParseLatticeError> {
    let mut out = BTreeMap::new();
    c.expect("{", what)?;
    if c.eat("}") {
        return Ok(out);
    }
    loop {
        let actor = c.actor()?;
        c.expect(":", what)?;
        let n = c.uint(what)?;
        out.insert(actor, n);
        if c.eat("}") {
            return Ok(out);
        }
        c.expect(",", what)?;
    }
}

fn parse_elems_until(c: &mut Cursor, close: &str, what: &'static str) -> Result<BTreeSet<Elem>, ParseLatticeError> {
    let mut out = BTreeSet::new();
    if c.eat(close) {
        return Ok(out);
    }
    loop {
        out.insert(c.int(what)?);
        if c.eat(close) {
            return Ok(out);
        }
        c.expect(",", what)?;
    }
}

fn parse_tags_until(c: &mut Cursor, close: &str, what: &'static str) -> Result<BTreeSet<Tag>, ParseLatticeError> {
    let mut out = BTreeSet::new();
    if c.eat(close) {
        return Ok(out);
    }
    loop {
        out.insert(c.tag()?);
        if c.eat(close) {
            return Ok(out);
        }
        c.expect(",", what)?;
    }
}

/// Parses the canonical rendering produced by `Display`.
pub fn parse_lattice_value(s: &str) -> Result<LatticeValue, ParseLatticeError> {
    let what = "lattice value";
    let mut c = Cursor::new(s);
    let value = if c.eat("gcounter") {
        LatticeValue::GCounter(parse_counts(&mut c, what)?)
    } else if c.eat("pncounter{inc") {
        let inc = parse_counts(&mut c, what)?;
        c.expect(",dec", what)?;
        let dec = parse_counts(&mut c, what)?;
        c.expect("}", what)?;
        LatticeValue::PnCounter { inc, dec }
    } else if c.eat("gset{") {
        LatticeValue::GSet(parse_elems_until(&mut c, "}", what)?)
    } else if c.eat("twopset{add{") {
        let added = parse_elems_until(&mut c, "}", what)?;
        c.expect(",rem{", what)?;
        let removed = parse_elems_until(&mut c, "}", what)?;
        c.expect("}", what)?;
        LatticeValue::TwoPSet { added, removed }
    } else if c.eat("orset{entries{") {
        let mut entries = BTreeMap::new();
        if !c.eat("}") {
            loop {
                let elem = c.int(what)?;
                c.expect(":[", what)?;
                let tags = parse_tags_until(&mut c, "]", what)?;
                entries.insert(elem, tags);
                if c.eat("}") {
                    break;
                }
                c.expect(",", what)?;
            }
        }
        c.expect(",rem[", what)?;
        let removed = parse_tags_until(&mut c, "]", what)?;
        c.expect("}", what)?;
        LatticeValue::OrSet { entries, removed }
    } else if c.eat("lww{") {
        if c.eat("}") {
            LatticeValue::Lww(None)
        } else {
            let elem = c.int(what)?;
            c.expect("@", what)?;
            let stamp_ms = c.uint(what)?;
            c.expect(".", what)?;
            let actor = c.actor()?;
            c.expect("}", what)?;
            LatticeValue::Lww(Some(LwwEntry { stamp_ms, actor, elem }))
        }
    } else {
        return Err(err(what, s));
    };
    c.done(what)?;
    Ok(value)
}

/// Parses the canonical rendering of an update op.
pub fn parse_update_op(s: &str) -> Result<UpdateOp, ParseLatticeError> {
    let what = "update op";
    let mut c = Cursor::new(s);
    let op = if c.eat("inc(") {
        let a = c.actor()?;
        c.expect(")", what)?;
        UpdateOp::Increment(a)
    } else if c.eat("dec(") {
        let a = c.actor()?;
        c.expect(")", what)?;
        UpdateOp::Decrement(a)
    } else if c.eat("add(") {
        let e = c.int(what)?;
        c.expect(")", what)?;
        UpdateOp::Add(e)
    } else if c.eat("remove(") {
        let e = c.int(what)?;
        c.expect(")", what)?;
        UpdateOp::Remove(e)
    } else if c.eat("assign(") {
        let elem = c.int(what)?;
        c.expect(",", what)?;
        let stamp_ms = c.uint(what)?;
        c.expect(",", what)?;
        let actor = c.actor()?;
        c.expect(")", what)?;
        UpdateOp::Assign { elem, stamp_ms, actor }
    } else {
        return Err(err(what, s));
    };
    c.done(what)?;
    Ok(op)
}

pub fn parse_observable(s: &str) -> Result<ObservableValue, ParseLatticeError> {
    let what = "observable value";
    let mut c = Cursor::new(s);
    let value = if c.eat("c:") {
        ObservableValue::Count(c.int(what)?)
    } else if c.eat("s:{") {
        ObservableValue::Elems(parse_elems_until(&mut c, "}", what)?)
    } else if c.eat("r:-") {
        ObservableValue::Register(None)
    } else if c.eat("r:") {
        ObservableValue::Register(Some(c.int(what)?))
    } else {
        return Err(err(what, s));
    };
    c.done(what)?;
    Ok(value)
}
