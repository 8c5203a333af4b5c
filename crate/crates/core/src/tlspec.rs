//! Temporal-logic specifications over named atomic propositions.
//!
//! Surface syntax accepted by [`parse_spec`]:
//!
//! ```text
//! formula := or
//! or      := and ('|' and)*
//! and     := until ('&' until)*
//! until   := unary ('U' until)?          right-associative
//! unary   := ('!' | 'F' | 'G' | 'X') unary | atom | '(' formula ')'
//! atom    := [a-z][a-z0-9_]*
//! ```
//!
//! Precedence from tightest to loosest: unary operators, `U`, `&`, `|`.
//! `F`, `G`, `X` and `U` are reserved single-letter keywords; identifiers
//! always start with a lowercase letter so the two never collide.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

/// A named visual event. `index` is its position in the owning [`PropositionSet`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Proposition {
    pub name: String,
    pub index: usize,
}

/// Ordered, duplicate-free set of propositions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PropositionSet {
    items: Vec<Proposition>,
}

impl PropositionSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a set from names, keeping the first occurrence of duplicates.
    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = Self::new();
        for n in names {
            set.insert(n.as_ref());
        }
        set
    }

    /// Inserts `name` if absent and returns its index.
    pub fn insert(&mut self, name: &str) -> usize {
        if let Some(i) = self.index_of(name) {
            return i;
        }
        let index = self.items.len();
        self.items.push(Proposition {
            name: name.to_string(),
            index,
        });
        index
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.items.iter().position(|p| p.name == name)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Proposition> {
        self.items.iter()
    }

    pub fn names(&self) -> Vec<String> {
        self.items.iter().map(|p| p.name.clone()).collect()
    }

    pub fn get(&self, index: usize) -> Option<&Proposition> {
        self.items.get(index)
    }
}

/// Temporal-logic formula. Atoms are referenced by name; resolution against a
/// [`PropositionSet`] happens where indices are needed.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Formula {
    Atom(String),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Eventually(Box<Formula>),
    Always(Box<Formula>),
    Until(Box<Formula>, Box<Formula>),
    Next(Box<Formula>),
}

impl Formula {
    pub fn atom(name: impl Into<String>) -> Self {
        Formula::Atom(name.into())
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Self {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Self {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn eventually(f: Formula) -> Self {
        Formula::Eventually(Box::new(f))
    }

    pub fn always(f: Formula) -> Self {
        Formula::Always(Box::new(f))
    }

    pub fn until(a: Formula, b: Formula) -> Self {
        Formula::Until(Box::new(a), Box::new(b))
    }

    pub fn next(f: Formula) -> Self {
        Formula::Next(Box::new(f))
    }

    pub fn depth(&self) -> usize {
        match self {
            Formula::Atom(_) => 1,
            Formula::Not(f) | Formula::Eventually(f) | Formula::Always(f) | Formula::Next(f) => {
                1 + f.depth()
            }
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Until(a, b) => {
                1 + a.depth().max(b.depth())
            }
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Formula::Atom(_) => "atom",
            Formula::Not(_) => "not",
            Formula::And(..) => "and",
            Formula::Or(..) => "or",
            Formula::Eventually(_) => "eventually",
            Formula::Always(_) => "always",
            Formula::Until(..) => "until",
            Formula::Next(_) => "next",
        }
    }

    /// JSON debugging tree: `{"kind": ..., "children": [...]}`, atoms carry `name`.
    pub fn to_json_tree(&self) -> Value {
        match self {
            Formula::Atom(name) => json!({ "kind": "atom", "name": name }),
            Formula::Not(f) | Formula::Eventually(f) | Formula::Always(f) | Formula::Next(f) => {
                json!({ "kind": self.kind(), "children": [f.to_json_tree()] })
            }
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Until(a, b) => {
                json!({ "kind": self.kind(), "children": [a.to_json_tree(), b.to_json_tree()] })
            }
        }
    }

    pub fn from_json_tree(value: &Value) -> Result<Formula, SpecError> {
        let bad = |msg: &str| SpecError::Json(msg.to_string());
        let kind = value
            .get("kind")
            .and_then(Value::as_str)
            .ok_or_else(|| bad("missing `kind`"))?;
        if kind == "atom" {
            let name = value
                .get("name")
                .and_then(Value::as_str)
                .ok_or_else(|| bad("atom without `name`"))?;
            if !is_identifier(name) {
                return Err(bad(&format!("invalid atom name {name:?}")));
            }
            return Ok(Formula::atom(name));
        }
        let children = value
            .get("children")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("missing `children`"))?;
        let child = |i: usize| -> Result<Formula, SpecError> {
            Formula::from_json_tree(children.get(i).ok_or_else(|| bad("too few children"))?)
        };
        let arity = match kind {
            "not" | "eventually" | "always" | "next" => 1,
            "and" | "or" | "until" => 2,
            other => return Err(bad(&format!("unknown node kind {other:?}"))),
        };
        if children.len() != arity {
            return Err(bad(&format!("`{kind}` expects {arity} children")));
        }
        Ok(match kind {
            "not" => Formula::not(child(0)?),
            "eventually" => Formula::eventually(child(0)?),
            "always" => Formula::always(child(0)?),
            "next" => Formula::next(child(0)?),
            "and" => Formula::and(child(0)?, child(1)?),
            "or" => Formula::or(child(0)?, child(1)?),
            _ => Formula::until(child(0)?, child(1)?),
        })
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Atom(name) => write!(f, "{name}"),
            Formula::Not(x) => write!(f, "(! {x})"),
            Formula::Eventually(x) => write!(f, "(F {x})"),
            Formula::Always(x) => write!(f, "(G {x})"),
            Formula::Next(x) => write!(f, "(X {x})"),
            Formula::And(a, b) => write!(f, "({a} & {b})"),
            Formula::Or(a, b) => write!(f, "({a} | {b})"),
            Formula::Until(a, b) => write!(f, "({a} U {b})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecError {
    #[error("empty specification")]
    Empty,
    #[error("syntax error at byte {offset}: expected one of [{}], found {found}", expected.join(", "))]
    Syntax {
        offset: usize,
        expected: Vec<String>,
        found: String,
    },
    #[error("malformed formula tree: {0}")]
    Json(String),
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Not,
    Eventually,
    Always,
    Next,
    Until,
    And,
    Or,
    LParen,
    RParen,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Not => "`!`".into(),
            Tok::Eventually => "`F`".into(),
            Tok::Always => "`G`".into(),
            Tok::Next => "`X`".into(),
            Tok::Until => "`U`".into(),
            Tok::And => "`&`".into(),
            Tok::Or => "`|`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, SpecError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let tok = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'!' => Tok::Not,
            b'&' => Tok::And,
            b'|' => Tok::Or,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'F' => Tok::Eventually,
            b'G' => Tok::Always,
            b'X' => Tok::Next,
            b'U' => Tok::Until,
            b'a'..=b'z' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_lowercase() || bytes[i].is_ascii_digit() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push((start, Tok::Ident(text[start..i].to_string())));
                continue;
            }
            _ => {
                let found = text[i..].chars().next().unwrap_or('?');
                return Err(SpecError::Syntax {
                    offset: i,
                    expected: vec![
                        "identifier".into(),
                        "`!`".into(),
                        "`F`".into(),
                        "`G`".into(),
                        "`X`".into(),
                        "`(`".into(),
                        "`&`".into(),
                        "`|`".into(),
                        "`U`".into(),
                        "`)`".into(),
                    ],
                    found: format!("character {found:?}"),
                });
            }
        };
        out.push((i, tok));
        i += 1;
    }
    out.push((text.len(), Tok::Eof));
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
}

const UNARY_START: [&str; 6] = ["identifier", "`!`", "`F`", "`G`", "`X`", "`(`"];

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].1.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> SpecError {
        let (offset, tok) = &self.toks[self.pos];
        SpecError::Syntax {
            offset: *offset,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: tok.describe(),
        }
    }

    fn or(&mut self) -> Result<Formula, SpecError> {
        let mut lhs = self.and()?;
        while *self.peek() == Tok::Or {
            self.bump();
            lhs = Formula::or(lhs, self.and()?);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Formula, SpecError> {
        let mut lhs = self.until()?;
        while *self.peek() == Tok::And {
            self.bump();
            lhs = Formula::and(lhs, self.until()?);
        }
        Ok(lhs)
    }

    fn until(&mut self) -> Result<Formula, SpecError> {
        let lhs = self.unary()?;
        if *self.peek() == Tok::Until {
            self.bump();
            return Ok(Formula::until(lhs, self.until()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula, SpecError> {
        match self.peek().clone() {
            Tok::Not => {
                self.bump();
                Ok(Formula::not(self.unary()?))
            }
            Tok::Eventually => {
                self.bump();
                Ok(Formula::eventually(self.unary()?))
            }
            Tok::Always => {
                self.bump();
                Ok(Formula::always(self.unary()?))
            }
            Tok::Next => {
                self.bump();
                Ok(Formula::next(self.unary()?))
            }
            Tok::Ident(name) => {
                self.bump();
                Ok(Formula::Atom(name))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.or()?;
                if *self.peek() != Tok::RParen {
                    return Err(self.error(&["`&`", "`|`", "`U`", "`)`"]));
                }
                self.bump();
                Ok(inner)
            }
            _ => Err(self.error(&UNARY_START)),
        }
    }
}

/// Parses TL source text into a formula and its propositions in first-occurrence order.
pub fn parse_spec(text: &str) -> Result<(Formula, PropositionSet), SpecError> {
    if text.trim().is_empty() {
        return Err(SpecError::Empty);
    }
    let mut parser = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let formula = parser.or()?;
    if *parser.peek() != Tok::Eof {
        return Err(parser.error(&["`&`", "`|`", "`U`", "end of input"]));
    }
    let props = free_propositions(&formula);
    Ok((formula, props))
}

/// Canonical fully-parenthesized rendering.
pub fn print_spec(f: &Formula) -> String {
    f.to_string()
}

/// Distinct atoms of `f` in leftmost-first order.
pub fn free_propositions(f: &Formula) -> PropositionSet {
    fn walk(f: &Formula, seen: &mut HashSet<String>, out: &mut PropositionSet) {
        match f {
            Formula::Atom(name) => {
                if seen.insert(name.clone()) {
                    out.insert(name);
                }
            }
            Formula::Not(x) | Formula::Eventually(x) | Formula::Always(x) | Formula::Next(x) => {
                walk(x, seen, out)
            }
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Until(a, b) => {
                walk(a, seen, out);
                walk(b, seen, out);
            }
        }
    }
    let mut out = PropositionSet::new();
    walk(f, &mut HashSet::new(), &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn a(n: &str) -> Formula {
        Formula::atom(n)
    }

    #[test]
    fn single_eventually() {
        let (f, props) = parse_spec("F p1").unwrap();
        assert_eq!(f, Formula::eventually(a("p1")));
        assert_eq!(props.names(), vec!["p1"]);
    }

    #[test]
    fn running_example() {
        let text = "(going_into_forest & (finds_branches & debark_branches)) U use_branches";
        let (f, props) = parse_spec(text).unwrap();
        assert_eq!(
            f,
            Formula::until(
                Formula::and(
                    a("going_into_forest"),
                    Formula::and(a("finds_branches"), a("debark_branches"))
                ),
                a("use_branches")
            )
        );
        assert_eq!(
            props.names(),
            vec!["going_into_forest", "finds_branches", "debark_branches", "use_branches"]
        );
    }

    #[test]
    fn until_is_right_associative() {
        let (f, _) = parse_spec("p1 U p2 U p3").unwrap();
        assert_eq!(f, Formula::until(a("p1"), Formula::until(a("p2"), a("p3"))));
    }

    #[test]
    fn precedence() {
        let (f, _) = parse_spec("a | b & c U d").unwrap();
        assert_eq!(
            f,
            Formula::or(a("a"), Formula::and(a("b"), Formula::until(a("c"), a("d"))))
        );
        let (g, _) = parse_spec("!a U F b").unwrap();
        assert_eq!(g, Formula::until(Formula::not(a("a")), Formula::eventually(a("b"))));
        let (h, _) = parse_spec("a & b & c").unwrap();
        assert_eq!(h, Formula::and(Formula::and(a("a"), a("b")), a("c")));
    }

    #[test]
    fn printing() {
        assert_eq!(print_spec(&Formula::eventually(a("p1"))), "(F p1)");
        assert_eq!(print_spec(&Formula::and(a("a"), a("b"))), "(a & b)");
    }

    #[test]
    fn free_props_dedup() {
        assert_eq!(free_propositions(&a("p1")).names(), vec!["p1"]);
        assert_eq!(
            free_propositions(&Formula::and(a("p1"), a("p1"))).names(),
            vec!["p1"]
        );
    }

    #[test]
    fn errors_are_located() {
        assert_eq!(parse_spec("   "), Err(SpecError::Empty));
        match parse_spec("p1 &") {
            Err(SpecError::Syntax { offset, expected, .. }) => {
                assert_eq!(offset, 4);
                assert!(expected.contains(&"identifier".to_string()));
            }
            other => panic!("unexpected {other:?}"),
        }
        match parse_spec("(a | b") {
            Err(SpecError::Syntax { offset, expected, .. }) => {
                assert_eq!(offset, 6);
                assert!(expected.contains(&"`)`".to_string()));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_spec("a b"), Err(SpecError::Syntax { offset: 2, .. })));
        assert!(matches!(parse_spec("Pa"), Err(SpecError::Syntax { offset: 0, .. })));
    }

    #[test]
    fn json_tree_roundtrip() {
        let (f, _) = parse_spec("G (a | X b)").unwrap();
        let tree = f.to_json_tree();
        assert_eq!(tree["kind"], "always");
        assert_eq!(Formula::from_json_tree(&tree).unwrap(), f);
        assert!(Formula::from_json_tree(&json!({"kind": "and", "children": []})).is_err());
    }

    pub(crate) fn arb_formula(depth: u32) -> impl Strategy<Value = Formula> {
        let leaf = prop::sample::select(vec!["p", "q", "r1", "going_into_forest"])
            .prop_map(Formula::atom);
        leaf.prop_recursive(depth, 256, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(Formula::not),
                inner.clone().prop_map(Formula::eventually),
                inner.clone().prop_map(Formula::always),
                inner.clone().prop_map(Formula::next),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::and(a, b)),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::or(a, b)),
                (inner.clone(), inner).prop_map(|(a, b)| Formula::until(a, b)),
            ]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn print_parse_roundtrip(f in arb_formula(7)) {
            prop_assert!(f.depth() <= 8);
            let (g, _) = parse_spec(&print_spec(&f)).unwrap();
            prop_assert_eq!(g, f);
        }

        #[test]
        fn parse_never_panics(s in "[a-zFGXU!&|() ]{0,40}") {
            let _ = parse_spec(&s);
        }
    }
}
