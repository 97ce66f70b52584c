//! A small BAN-logic engine: parser for an ASCII rendering of the notation,
//! the handful of postulates needed for challenge-response protocols, and a
//! forward-chaining prover that emits minimal proof traces.
//!
//! Grammar (whitespace insignificant, `#` starts a comment in files):
//!
//! ```text
//! stmt  := simple [ "=>" simple ]          implication, assumptions only
//! simple:= NAME "|=" simple                believes
//!        | NAME "<|" term                  sees
//!        | NAME "|~" term                  once said
//!        | "fresh" "(" term ")"
//!        | term                            a formula held true
//! term  := NAME "<-" NAME "->" NAME        shared key
//!        | "(" term { "," term } ")"       right-nested pairs
//!        | "{" term "}" "_" NAME           encryption; {{t}_K}_K is double
//!        | NAME
//! ```

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Serialize, Serializer};
use thiserror::Error;

/// Maximum nesting of `|=`.
pub const MAX_BELIEF_DEPTH: usize = 6;
pub const DEFAULT_MAX_DEPTH: usize = 16;

pub const BUNDLED_PROTOCOL: &str = include_str!("../protocols/bms_readout.protocol");
pub const BUNDLED_GOALS: &str = include_str!("../protocols/bms_readout.goals");

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Principal(String),
    Key(String),
    Nonce(String),
    SharedKey(String, String, String),
    Pair(Box<Term>, Box<Term>),
    Encrypted(Box<Term>, String),
    DoubleEncrypted(Box<Term>, String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Statement {
    Believes(String, Box<Statement>),
    Sees(String, Term),
    Said(String, Term),
    Fresh(Term),
    Holds(Term),
    Implies(Box<Statement>, Box<Statement>),
}

impl Term {
    pub fn pair(a: Term, b: Term) -> Self {
        Term::Pair(Box::new(a), Box::new(b))
    }

    pub fn shared_key(p: &str, k: &str, q: &str) -> Self {
        Term::SharedKey(p.into(), k.into(), q.into())
    }

    /// `{t}_K`, collapsing `{{t}_K}_K` into the double-encryption form.
    pub fn encrypt(t: Term, key: &str) -> Self {
        match t {
            Term::Encrypted(inner, k) if k == key => Term::DoubleEncrypted(inner, k),
            other => Term::Encrypted(Box::new(other), key.into()),
        }
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Term)) {
        f(self);
        match self {
            Term::Pair(a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Term::Encrypted(t, _) | Term::DoubleEncrypted(t, _) => t.visit(f),
            _ => {}
        }
    }

    fn rename(&self, f: &impl Fn(&str) -> String) -> Term {
        match self {
            Term::Principal(n) => Term::Principal(f(n)),
            Term::Key(n) => Term::Key(f(n)),
            Term::Nonce(n) => Term::Nonce(f(n)),
            Term::SharedKey(p, k, q) => Term::SharedKey(f(p), f(k), f(q)),
            Term::Pair(a, b) => Term::pair(a.rename(f), b.rename(f)),
            Term::Encrypted(t, k) => Term::Encrypted(Box::new(t.rename(f)), f(k)),
            Term::DoubleEncrypted(t, k) => Term::DoubleEncrypted(Box::new(t.rename(f)), f(k)),
        }
    }
}

impl Statement {
    pub fn believes(p: &str, s: Statement) -> Self {
        Statement::Believes(p.into(), Box::new(s))
    }

    pub fn belief_depth(&self) -> usize {
        match self {
            Statement::Believes(_, s) => 1 + s.belief_depth(),
            Statement::Implies(a, b) => a.belief_depth().max(b.belief_depth()),
            _ => 0,
        }
    }

    fn visit_terms<'a>(&'a self, f: &mut impl FnMut(&'a Term)) {
        match self {
            Statement::Believes(_, s) => s.visit_terms(f),
            Statement::Sees(_, t)
            | Statement::Said(_, t)
            | Statement::Fresh(t)
            | Statement::Holds(t) => t.visit(f),
            Statement::Implies(a, b) => {
                a.visit_terms(f);
                b.visit_terms(f);
            }
        }
    }

    /// Applies `f` to every name, used to mirror a protocol.
    pub fn rename(&self, f: &impl Fn(&str) -> String) -> Statement {
        match self {
            Statement::Believes(p, s) => Statement::Believes(f(p), Box::new(s.rename(f))),
            Statement::Sees(p, t) => Statement::Sees(f(p), t.rename(f)),
            Statement::Said(p, t) => Statement::Said(f(p), t.rename(f)),
            Statement::Fresh(t) => Statement::Fresh(t.rename(f)),
            Statement::Holds(t) => Statement::Holds(t.rename(f)),
            Statement::Implies(a, b) => {
                Statement::Implies(Box::new(a.rename(f)), Box::new(b.rename(f)))
            }
        }
    }

    fn split_prefix(&self) -> (Vec<&str>, &Statement) {
        let mut prefix = Vec::new();
        let mut cur = self;
        while let Statement::Believes(p, s) = cur {
            prefix.push(p.as_str());
            cur = s;
        }
        (prefix, cur)
    }

    fn with_prefix(prefix: &[&str], inner: Statement) -> Statement {
        prefix
            .iter()
            .rev()
            .fold(inner, |s, p| Statement::believes(p, s))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Principal(n) | Term::Key(n) | Term::Nonce(n) => f.write_str(n),
            Term::SharedKey(p, k, q) => write!(f, "{p} <-{k}-> {q}"),
            Term::Pair(a, b) => {
                write!(f, "({a}")?;
                let mut rest = b.as_ref();
                while let Term::Pair(x, y) = rest {
                    write!(f, ", {x}")?;
                    rest = y;
                }
                write!(f, ", {rest})")
            }
            Term::Encrypted(t, k) => write!(f, "{{{t}}}_{k}"),
            Term::DoubleEncrypted(t, k) => write!(f, "{{{{{t}}}_{k}}}_{k}"),
        }
    }
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statement::Believes(p, s) => write!(f, "{p} |= {s}"),
            Statement::Sees(p, t) => write!(f, "{p} <| {t}"),
            Statement::Said(p, t) => write!(f, "{p} |~ {t}"),
            Statement::Fresh(t) => write!(f, "fresh({t})"),
            Statement::Holds(t) => write!(f, "{t}"),
            Statement::Implies(a, b) => write!(f, "{a} => {b}"),
        }
    }
}

impl Serialize for Statement {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

// ---------------------------------------------------------------- parsing

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("syntax error at {position}: {message}")]
pub struct SyntaxError {
    /// Byte offset into the parsed text.
    pub position: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Principal,
    Key,
    Nonce,
}

/// Declared names. When present, every name must be declared and its
/// category decides how a bare name parses.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Symbols {
    pub principals: BTreeSet<String>,
    pub keys: BTreeSet<String>,
    pub nonces: BTreeSet<String>,
}

impl Symbols {
    fn kind(&self, name: &str) -> Option<Kind> {
        if self.principals.contains(name) {
            Some(Kind::Principal)
        } else if self.keys.contains(name) {
            Some(Kind::Key)
        } else if self.nonces.contains(name) {
            Some(Kind::Nonce)
        } else {
            None
        }
    }

    fn declare(&mut self, kind: Kind, name: &str) -> Result<(), String> {
        if self.kind(name).is_some() {
            return Err(format!("`{name}` declared twice"));
        }
        let set = match kind {
            Kind::Principal => &mut self.principals,
            Kind::Key => &mut self.keys,
            Kind::Nonce => &mut self.nonces,
        };
        set.insert(name.to_string());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Name(String),
    Believes,
    Sees,
    Said,
    KeyL,
    KeyR,
    Implies,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Under,
    Comma,
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, SyntaxError> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let c = b[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let two = b.get(i..i + 2).unwrap_or(&[]);
        let tok2 = match two {
            b"|=" => Some(Tok::Believes),
            b"<|" => Some(Tok::Sees),
            b"|~" => Some(Tok::Said),
            b"<-" => Some(Tok::KeyL),
            b"->" => Some(Tok::KeyR),
            b"=>" => Some(Tok::Implies),
            _ => None,
        };
        if let Some(t) = tok2 {
            out.push((i, t));
            i += 2;
            continue;
        }
        let tok1 = match c {
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            b'{' => Some(Tok::LBrace),
            b'}' => Some(Tok::RBrace),
            b'_' => Some(Tok::Under),
            b',' => Some(Tok::Comma),
            _ => None,
        };
        if let Some(t) = tok1 {
            out.push((i, t));
            i += 1;
            continue;
        }
        if c.is_ascii_alphabetic() {
            let start = i;
            while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_' || b[i] == b'\'') {
                i += 1;
            }
            out.push((start, Tok::Name(text[start..i].to_string())));
            continue;
        }
        return Err(SyntaxError {
            position: i,
            message: format!(
                "unexpected character {:?}",
                text[i..].chars().next().unwrap_or('?')
            ),
        });
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
    symbols: Option<&'a Symbols>,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, SyntaxError> {
        Err(SyntaxError {
            position: self.offset(),
            message: message.into(),
        })
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |t| t.0)
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn peek2(&self) -> Option<&Tok> {
        self.toks.get(self.pos + 1).map(|t| &t.1)
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), SyntaxError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected {what}"))
        }
    }

    fn name(&mut self, want: Option<Kind>) -> Result<String, SyntaxError> {
        let Some(Tok::Name(n)) = self.peek().cloned() else {
            return self.err("expected a name");
        };
        if let (Some(sym), Some(want)) = (self.symbols, want) {
            match sym.kind(&n) {
                None => return self.err(format!("undeclared name `{n}`")),
                Some(k) if k != want => {
                    return self.err(format!("`{n}` is not a {}", kind_name(want)))
                }
                _ => {}
            }
        }
        self.pos += 1;
        Ok(n)
    }

    fn statement(&mut self) -> Result<Statement, SyntaxError> {
        let lhs = self.simple()?;
        if self.peek() == Some(&Tok::Implies) {
            self.pos += 1;
            let rhs = self.simple()?;
            return Ok(Statement::Implies(Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn simple(&mut self) -> Result<Statement, SyntaxError> {
        if let Some(Tok::Name(n)) = self.peek() {
            if n == "fresh" && self.peek2() == Some(&Tok::LParen) {
                self.pos += 2;
                let t = self.term()?;
                self.expect(Tok::RParen, "`)`")?;
                return Ok(Statement::Fresh(t));
            }
            match self.peek2() {
                Some(Tok::Believes) => {
                    let p = self.name(Some(Kind::Principal))?;
                    self.pos += 1;
                    let s = self.simple()?;
                    if s.belief_depth() >= MAX_BELIEF_DEPTH {
                        return self.err("belief nesting too deep");
                    }
                    return Ok(Statement::believes(&p, s));
                }
                Some(Tok::Sees) => {
                    let p = self.name(Some(Kind::Principal))?;
                    self.pos += 1;
                    return Ok(Statement::Sees(p, self.term()?));
                }
                Some(Tok::Said) => {
                    let p = self.name(Some(Kind::Principal))?;
                    self.pos += 1;
                    return Ok(Statement::Said(p, self.term()?));
                }
                _ => {}
            }
        }
        Ok(Statement::Holds(self.term()?))
    }

    fn term(&mut self) -> Result<Term, SyntaxError> {
        match self.peek().cloned() {
            Some(Tok::LParen) => {
                self.pos += 1;
                let mut items = vec![self.term()?];
                while self.peek() == Some(&Tok::Comma) {
                    self.pos += 1;
                    items.push(self.term()?);
                }
                self.expect(Tok::RParen, "`)` or `,`")?;
                let last = items.pop().expect("at least one item");
                Ok(items
                    .into_iter()
                    .rev()
                    .fold(last, |acc, t| Term::pair(t, acc)))
            }
            Some(Tok::LBrace) => {
                self.pos += 1;
                let t = self.term()?;
                self.expect(Tok::RBrace, "`}`")?;
                self.expect(Tok::Under, "`_`")?;
                let k = self.name(Some(Kind::Key))?;
                Ok(Term::encrypt(t, &k))
            }
            Some(Tok::Name(_)) => {
                if self.peek2() == Some(&Tok::KeyL) {
                    let p = self.name(Some(Kind::Principal))?;
                    self.pos += 1;
                    let k = self.name(Some(Kind::Key))?;
                    self.expect(Tok::KeyR, "`->`")?;
                    let q = self.name(Some(Kind::Principal))?;
                    return Ok(Term::SharedKey(p, k, q));
                }
                let n = self.name(None)?;
                match self.symbols.map(|s| s.kind(&n)) {
                    None => Ok(Term::Nonce(n)),
                    Some(Some(Kind::Principal)) => Ok(Term::Principal(n)),
                    Some(Some(Kind::Key)) => Ok(Term::Key(n)),
                    Some(Some(Kind::Nonce)) => Ok(Term::Nonce(n)),
                    Some(None) => {
                        self.pos -= 1;
                        self.err(format!("undeclared name `{n}`"))
                    }
                }
            }
            _ => self.err("expected a term"),
        }
    }
}

fn kind_name(k: Kind) -> &'static str {
    match k {
        Kind::Principal => "principal",
        Kind::Key => "key",
        Kind::Nonce => "nonce",
    }
}

/// Parses a statement without a symbol table; bare names become nonces.
pub fn parse_statement(text: &str) -> Result<Statement, SyntaxError> {
    parse_statement_with(text, None)
}

pub fn parse_statement_with(
    text: &str,
    symbols: Option<&Symbols>,
) -> Result<Statement, SyntaxError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
        end: text.len(),
        symbols,
    };
    let s = p.statement()?;
    if p.pos != p.toks.len() {
        return p.err("unexpected trailing input");
    }
    if let Statement::Implies(a, b) = &s {
        if !is_fresh_belief(a) || !is_fresh_belief(b) {
            return Err(SyntaxError {
                position: 0,
                message: "`=>` only relates freshness beliefs".into(),
            });
        }
    }
    Ok(s)
}

fn is_fresh_belief(s: &Statement) -> bool {
    matches!(s.split_prefix().1, Statement::Fresh(_))
}

/// A protocol description: symbols, idealized messages and assumptions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Protocol {
    pub symbols: Symbols,
    /// `(message number, Sees fact for the receiver)`.
    pub messages: Vec<(u32, Statement)>,
    pub assumptions: Vec<Statement>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Goal {
    pub label: String,
    pub statement: Statement,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {source}")]
pub struct FileError {
    pub line: usize,
    #[source]
    pub source: SyntaxError,
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

fn at(line: usize, message: impl Into<String>) -> FileError {
    FileError {
        line,
        source: SyntaxError {
            position: 0,
            message: message.into(),
        },
    }
}

impl Protocol {
    pub fn parse(text: &str) -> Result<Self, FileError> {
        let mut symbols = Symbols::default();
        let mut messages = Vec::new();
        let mut assumptions = Vec::new();
        for (line, l) in lines(text) {
            let (head, rest) = l.split_once(char::is_whitespace).unwrap_or((l, ""));
            let rest = rest.trim();
            let kind = match head {
                "principals" => Some(Kind::Principal),
                "keys" => Some(Kind::Key),
                "nonces" => Some(Kind::Nonce),
                _ => None,
            };
            if let Some(kind) = kind {
                for n in rest.split_whitespace() {
                    let ok = n.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
                        && n.chars()
                            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '\'');
                    if !ok || n == "fresh" {
                        return Err(at(line, format!("invalid name `{n}`")));
                    }
                    symbols.declare(kind, n).map_err(|m| at(line, m))?;
                }
                continue;
            }
            let parse = |s: &str| {
                parse_statement_with(s, Some(&symbols)).map_err(|source| FileError { line, source })
            };
            match head {
                "assume" => assumptions.push(parse(rest)?),
                "message" => {
                    let (num, body) = rest
                        .split_once(':')
                        .ok_or_else(|| at(line, "expected `message N: P <| term`"))?;
                    let num: u32 = num
                        .trim()
                        .parse()
                        .map_err(|_| at(line, format!("bad message number `{}`", num.trim())))?;
                    let s = parse(body.trim())?;
                    if !matches!(s, Statement::Sees(..)) {
                        return Err(at(line, "a message must be a `<|` fact"));
                    }
                    messages.push((num, s));
                }
                other => return Err(at(line, format!("unknown directive `{other}`"))),
            }
        }
        Ok(Self {
            symbols,
            messages,
            assumptions,
        })
    }

    /// Parses `goal LABEL: statement` lines against this protocol's symbols.
    pub fn parse_goals(&self, text: &str) -> Result<Vec<Goal>, FileError> {
        let mut goals = Vec::new();
        for (line, l) in lines(text) {
            let rest = l
                .strip_prefix("goal")
                .filter(|r| r.starts_with(char::is_whitespace))
                .ok_or_else(|| at(line, "expected `goal LABEL: statement`"))?;
            let (label, body) = rest
                .split_once(':')
                .ok_or_else(|| at(line, "missing `:` after goal label"))?;
            let statement = parse_statement_with(body.trim(), Some(&self.symbols))
                .map_err(|source| FileError { line, source })?;
            goals.push(Goal {
                label: label.trim().to_string(),
                statement,
            });
        }
        Ok(goals)
    }

    pub fn bundled() -> (Self, Vec<Goal>) {
        let p = Self::parse(BUNDLED_PROTOCOL).expect("bundled protocol parses");
        let g = p.parse_goals(BUNDLED_GOALS).expect("bundled goals parse");
        (p, g)
    }

    pub fn message_facts(&self) -> Vec<Statement> {
        self.messages.iter().map(|(_, s)| s.clone()).collect()
    }
}

// ------------------------------------------------------------------ rules

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Rule {
    MessageMeaning,
    FreshnessPromotion,
    NonceVerification,
    Belief,
    /// Modus ponens on an assumed freshness implication.
    FreshnessTransfer,
}

impl Rule {
    pub const ALL: [Rule; 5] = [
        Rule::MessageMeaning,
        Rule::FreshnessPromotion,
        Rule::NonceVerification,
        Rule::Belief,
        Rule::FreshnessTransfer,
    ];

    pub fn arity(self) -> usize {
        match self {
            Rule::Belief => 1,
            _ => 2,
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

fn message_meaning(a: &Statement, b: &Statement, out: &mut Vec<Statement>) {
    let Statement::Believes(p, inner) = a else {
        return;
    };
    let Statement::Holds(Term::SharedKey(x, k, y)) = inner.as_ref() else {
        return;
    };
    let Statement::Sees(p2, t) = b else { return };
    if p != p2 {
        return;
    }
    let (Term::Encrypted(m, k2) | Term::DoubleEncrypted(m, k2)) = t else {
        return;
    };
    if k != k2 {
        return;
    }
    let q = if p == x {
        y
    } else if p == y {
        x
    } else {
        return;
    };
    out.push(Statement::believes(
        p,
        Statement::Said(q.clone(), (**m).clone()),
    ));
}

fn freshness_promotion(a: &Statement, b: &Statement, out: &mut Vec<Statement>) {
    let (prefix, core) = a.split_prefix();
    let Statement::Fresh(x) = core else { return };
    b.visit_terms(&mut |t| {
        if let Term::Pair(l, r) = t {
            if **l == *x || **r == *x {
                out.push(Statement::with_prefix(&prefix, Statement::Fresh(t.clone())));
            }
        }
    });
}

fn nonce_verification(a: &Statement, b: &Statement, out: &mut Vec<Statement>) {
    let (pa, ca) = a.split_prefix();
    let (pb, cb) = b.split_prefix();
    if pa.is_empty() || pa != pb {
        return;
    }
    if let (Statement::Fresh(x), Statement::Said(q, y)) = (ca, cb) {
        if x == y {
            let conclusion = Statement::believes(q, Statement::Holds(x.clone()));
            out.push(Statement::with_prefix(&pa, conclusion));
        }
    }
}

fn belief(a: &Statement, out: &mut Vec<Statement>) {
    let (prefix, core) = a.split_prefix();
    if prefix.is_empty() {
        return;
    }
    if let Statement::Holds(Term::Pair(x, y)) = core {
        out.push(Statement::with_prefix(
            &prefix,
            Statement::Holds((**x).clone()),
        ));
        out.push(Statement::with_prefix(
            &prefix,
            Statement::Holds((**y).clone()),
        ));
    }
}

fn freshness_transfer(a: &Statement, b: &Statement, out: &mut Vec<Statement>) {
    if let Statement::Implies(l, r) = a {
        if **l == *b {
            out.push((**r).clone());
        }
    }
}

fn apply_ordered(rule: Rule, premises: &[&Statement], out: &mut Vec<Statement>) {
    match (rule, premises) {
        (Rule::MessageMeaning, [a, b]) => message_meaning(a, b, out),
        (Rule::FreshnessPromotion, [a, b]) => freshness_promotion(a, b, out),
        (Rule::NonceVerification, [a, b]) => nonce_verification(a, b, out),
        (Rule::Belief, [a]) => belief(a, out),
        (Rule::FreshnessTransfer, [a, b]) => freshness_transfer(a, b, out),
        _ => {}
    }
    out.retain(|s| s.belief_depth() <= MAX_BELIEF_DEPTH);
}

/// All conclusions `rule` yields from `premises`, tried in every order.
/// Returns an empty list when the premise count or shapes do not fit.
pub fn apply_rule(rule: Rule, premises: &[Statement]) -> Vec<Statement> {
    let mut out = Vec::new();
    match premises {
        [a] if rule.arity() == 1 => apply_ordered(rule, &[a], &mut out),
        [a, b] if rule.arity() == 2 => {
            apply_ordered(rule, &[a, b], &mut out);
            apply_ordered(rule, &[b, a], &mut out);
        }
        _ => {}
    }
    let mut seen = BTreeSet::new();
    out.retain(|s| seen.insert(s.clone()));
    out
}

// ------------------------------------------------------------- derivation

#[derive(Debug, Clone, PartialEq, Eq)]
enum Origin {
    Assumption,
    Message(u32),
    Derived(Rule, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Fact {
    statement: Statement,
    origin: Origin,
}

/// Result of forward chaining, before any trace is cut out of it.
#[derive(Debug, Clone)]
pub struct Closure {
    facts: Vec<Fact>,
    index: HashMap<Statement, usize>,
    /// Rounds of rule application performed.
    pub rounds: usize,
    /// No further statement is derivable.
    pub fixpoint: bool,
}

impl Closure {
    pub fn contains(&self, s: &Statement) -> bool {
        self.index.contains_key(s)
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn statements(&self) -> impl Iterator<Item = &Statement> {
        self.facts.iter().map(|f| &f.statement)
    }
}

/// Forward-chains for at most `max_rounds` rounds, stopping early once every
/// statement in `stop_when` is known or nothing new appears.
pub fn saturate(
    assumptions: &[Statement],
    messages: &[(u32, Statement)],
    stop_when: &[Statement],
    max_rounds: usize,
) -> Closure {
    let mut c = Closure {
        facts: Vec::new(),
        index: HashMap::new(),
        rounds: 0,
        fixpoint: false,
    };
    let add = |c: &mut Closure, statement: Statement, origin: Origin| {
        if !c.index.contains_key(&statement) {
            c.index.insert(statement.clone(), c.facts.len());
            c.facts.push(Fact { statement, origin });
        }
    };
    for a in assumptions {
        add(&mut c, a.clone(), Origin::Assumption);
    }
    for (n, m) in messages {
        add(&mut c, m.clone(), Origin::Message(*n));
    }
    let done = |c: &Closure| !stop_when.is_empty() && stop_when.iter().all(|g| c.contains(g));
    let mut buf = Vec::new();
    while !done(&c) && c.rounds < max_rounds {
        let n = c.facts.len();
        for rule in Rule::ALL {
            for i in 0..n {
                if rule.arity() == 1 {
                    buf.clear();
                    apply_ordered(rule, &[&c.facts[i].statement], &mut buf);
                    for s in buf.drain(..) {
                        add(&mut c, s, Origin::Derived(rule, vec![i]));
                    }
                    continue;
                }
                for j in 0..n {
                    buf.clear();
                    apply_ordered(
                        rule,
                        &[&c.facts[i].statement, &c.facts[j].statement],
                        &mut buf,
                    );
                    for s in buf.drain(..) {
                        add(&mut c, s, Origin::Derived(rule, vec![i, j]));
                    }
                }
            }
        }
        c.rounds += 1;
        if c.facts.len() == n {
            c.fixpoint = true;
            break;
        }
    }
    c
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DeriveError {
    #[error("max_depth must be at least 1")]
    InvalidDepth,
    #[error("not derivable: {}", .unreached.join(", "))]
    NotDerivable { unreached: Vec<String> },
    #[error("depth bound {max_depth} reached before: {}", .unreached.join(", "))]
    DepthExceeded {
        max_depth: usize,
        unreached: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Premise {
    pub id: String,
    pub statement: Statement,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MessageFact {
    pub id: String,
    pub number: u32,
    pub statement: Statement,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProofStep {
    pub id: String,
    pub rule: Rule,
    pub premises: Vec<String>,
    pub conclusion: Statement,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GoalProof {
    pub label: String,
    pub statement: Statement,
    /// Id of the fact proving the goal.
    pub proved_by: String,
    /// Ids of the steps this goal depends on, in trace order.
    pub steps: Vec<String>,
}

/// Minimal derivation of a goal set. Ids: `A*` assumptions, `M*` messages
/// (by message number), `S*` steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProofTrace {
    pub assumptions: Vec<Premise>,
    pub messages: Vec<MessageFact>,
    pub steps: Vec<ProofStep>,
    pub goals: Vec<GoalProof>,
}

impl ProofTrace {
    pub fn goal(&self, label: &str) -> Option<&GoalProof> {
        self.goals.iter().find(|g| g.label == label)
    }

    /// Rules used for one goal, in trace order.
    pub fn rule_sequence(&self, label: &str) -> Vec<Rule> {
        let Some(g) = self.goal(label) else {
            return Vec::new();
        };
        g.steps
            .iter()
            .filter_map(|id| self.steps.iter().find(|s| &s.id == id))
            .map(|s| s.rule)
            .collect()
    }

    pub fn lookup(&self, id: &str) -> Option<&Statement> {
        self.assumptions
            .iter()
            .map(|p| (&p.id, &p.statement))
            .chain(self.messages.iter().map(|m| (&m.id, &m.statement)))
            .chain(self.steps.iter().map(|s| (&s.id, &s.conclusion)))
            .find(|(i, _)| i.as_str() == id)
            .map(|(_, s)| s)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for a in &self.assumptions {
            out.push_str(&format!("{:<4} assume   {}\n", a.id, a.statement));
        }
        for m in &self.messages {
            out.push_str(&format!("{:<4} message  {}\n", m.id, m.statement));
        }
        for s in &self.steps {
            out.push_str(&format!(
                "{:<4} {} [{}]\n     => {}\n",
                s.id,
                s.rule,
                s.premises.join(", "),
                s.conclusion
            ));
        }
        for g in &self.goals {
            out.push_str(&format!(
                "goal {} proved by {}: {}\n",
                g.label, g.proved_by, g.statement
            ));
        }
        out
    }
}

/// Derives every goal from the assumptions and messages, or reports which
/// goals stay out of reach.
pub fn derive(
    assumptions: &[Statement],
    messages: &[(u32, Statement)],
    goals: &[Goal],
    max_depth: usize,
) -> Result<ProofTrace, DeriveError> {
    if max_depth == 0 {
        return Err(DeriveError::InvalidDepth);
    }
    let targets: Vec<Statement> = goals.iter().map(|g| g.statement.clone()).collect();
    let c = saturate(assumptions, messages, &targets, max_depth);
    let unreached: Vec<String> = goals
        .iter()
        .filter(|g| !c.contains(&g.statement))
        .map(|g| g.label.clone())
        .collect();
    if !unreached.is_empty() {
        return Err(if c.fixpoint {
            DeriveError::NotDerivable { unreached }
        } else {
            DeriveError::DepthExceeded {
                max_depth,
                unreached,
            }
        });
    }
    Ok(build_trace(&c, goals))
}

fn support(c: &Closure, root: usize, acc: &mut BTreeSet<usize>) {
    let mut stack = vec![root];
    while let Some(i) = stack.pop() {
        if !acc.insert(i) {
            continue;
        }
        if let Origin::Derived(_, ps) = &c.facts[i].origin {
            stack.extend(ps.iter().copied());
        }
    }
}

fn build_trace(c: &Closure, goals: &[Goal]) -> ProofTrace {
    let roots: Vec<usize> = goals.iter().map(|g| c.index[&g.statement]).collect();
    let mut used = BTreeSet::new();
    for &r in &roots {
        support(c, r, &mut used);
    }
    let mut labels: HashMap<usize, String> = HashMap::new();
    let (mut na, mut ns) = (0, 0);
    let mut trace = ProofTrace {
        assumptions: Vec::new(),
        messages: Vec::new(),
        steps: Vec::new(),
        goals: Vec::new(),
    };
    for &i in &used {
        let f = &c.facts[i];
        let label = match &f.origin {
            Origin::Assumption => {
                na += 1;
                let id = format!("A{na}");
                trace.assumptions.push(Premise {
                    id: id.clone(),
                    statement: f.statement.clone(),
                });
                id
            }
            Origin::Message(n) => {
                let id = format!("M{n}");
                trace.messages.push(MessageFact {
                    id: id.clone(),
                    number: *n,
                    statement: f.statement.clone(),
                });
                id
            }
            Origin::Derived(rule, ps) => {
                ns += 1;
                let id = format!("S{ns}");
                trace.steps.push(ProofStep {
                    id: id.clone(),
                    rule: *rule,
                    premises: ps.iter().map(|p| labels[p].clone()).collect(),
                    conclusion: f.statement.clone(),
                });
                id
            }
        };
        labels.insert(i, label);
    }
    for (g, &r) in goals.iter().zip(&roots) {
        let mut own = BTreeSet::new();
        support(c, r, &mut own);
        trace.goals.push(GoalProof {
            label: g.label.clone(),
            statement: g.statement.clone(),
            proved_by: labels[&r].clone(),
            steps: own
                .iter()
                .filter(|i| matches!(c.facts[**i].origin, Origin::Derived(..)))
                .map(|i| labels[i].clone())
                .collect(),
        });
    }
    trace
}

/// Re-applies every step's rule to its cited premises.
pub fn check_trace(trace: &ProofTrace) -> Result<(), String> {
    let mut known: HashMap<&str, &Statement> = HashMap::new();
    for a in &trace.assumptions {
        known.insert(&a.id, &a.statement);
    }
    for m in &trace.messages {
        known.insert(&m.id, &m.statement);
    }
    for s in &trace.steps {
        let premises: Vec<Statement> = s
            .premises
            .iter()
            .map(|p| {
                known
                    .get(p.as_str())
                    .map(|st| (*st).clone())
                    .ok_or(format!("{}: unknown premise {p}", s.id))
            })
            .collect::<Result<_, _>>()?;
        if !apply_rule(s.rule, &premises).contains(&s.conclusion) {
            return Err(format!("{}: conclusion does not follow", s.id));
        }
        known.insert(&s.id, &s.conclusion);
    }
    for g in &trace.goals {
        if known.get(g.proved_by.as_str()) != Some(&&g.statement) {
            return Err(format!("goal {} not established", g.label));
        }
    }
    Ok(())
}
