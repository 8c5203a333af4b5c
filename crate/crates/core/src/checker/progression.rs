//! Formula progression over finite traces.
//!
//! Residual formulas are hash-consed with And/Or flattened, sorted and
//! deduplicated, so the set of reachable residuals stays finite and each one
//! serves as a deterministic automaton state. Atoms are referenced by bit
//! position in the symbol word.

use std::collections::HashMap;

use crate::tlspec::Formula;

pub type NodeId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Node {
    True,
    False,
    Atom(u32),
    Not(NodeId),
    And(Vec<NodeId>),
    Or(Vec<NodeId>),
    Next(NodeId),
    Eventually(NodeId),
    Always(NodeId),
    Until(NodeId, NodeId),
}

#[derive(Debug, Default)]
pub struct Progressor {
    nodes: Vec<Node>,
    index: HashMap<Node, NodeId>,
    prog_memo: HashMap<(NodeId, u32), NodeId>,
    last_memo: HashMap<(NodeId, u32), bool>,
}

pub const TRUE: NodeId = 0;
pub const FALSE: NodeId = 1;

impl Progressor {
    pub fn new() -> Self {
        let mut p = Self::default();
        p.intern(Node::True);
        p.intern(Node::False);
        p
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn intern(&mut self, n: Node) -> NodeId {
        if let Some(&id) = self.index.get(&n) {
            return id;
        }
        let id = self.nodes.len() as NodeId;
        self.nodes.push(n.clone());
        self.index.insert(n, id);
        id
    }

    /// Interns `f`; `atom_bit` maps an atom name to its symbol bit.
    pub fn compile(&mut self, f: &Formula, atom_bit: &dyn Fn(&str) -> u32) -> NodeId {
        match f {
            Formula::Atom(name) => self.intern(Node::Atom(atom_bit(name))),
            Formula::Not(x) => {
                let x = self.compile(x, atom_bit);
                self.not(x)
            }
            Formula::And(a, b) => {
                let (a, b) = (self.compile(a, atom_bit), self.compile(b, atom_bit));
                self.and(vec![a, b])
            }
            Formula::Or(a, b) => {
                let (a, b) = (self.compile(a, atom_bit), self.compile(b, atom_bit));
                self.or(vec![a, b])
            }
            Formula::Next(x) => {
                let x = self.compile(x, atom_bit);
                self.next(x)
            }
            Formula::Eventually(x) => {
                let x = self.compile(x, atom_bit);
                self.eventually(x)
            }
            Formula::Always(x) => {
                let x = self.compile(x, atom_bit);
                self.always(x)
            }
            Formula::Until(a, b) => {
                let (a, b) = (self.compile(a, atom_bit), self.compile(b, atom_bit));
                self.until(a, b)
            }
        }
    }

    fn not(&mut self, x: NodeId) -> NodeId {
        match self.nodes[x as usize] {
            Node::True => FALSE,
            Node::False => TRUE,
            Node::Not(inner) => inner,
            _ => self.intern(Node::Not(x)),
        }
    }

    fn junction(&mut self, items: Vec<NodeId>, conj: bool) -> NodeId {
        let (unit, zero) = if conj { (TRUE, FALSE) } else { (FALSE, TRUE) };
        let mut flat = Vec::with_capacity(items.len());
        for id in items {
            match &self.nodes[id as usize] {
                Node::And(xs) if conj => flat.extend_from_slice(xs),
                Node::Or(xs) if !conj => flat.extend_from_slice(xs),
                _ => flat.push(id),
            }
        }
        flat.retain(|&id| id != unit);
        if flat.contains(&zero) {
            return zero;
        }
        flat.sort_unstable();
        flat.dedup();
        for &id in &flat {
            if let Node::Not(inner) = self.nodes[id as usize] {
                if flat.binary_search(&inner).is_ok() {
                    return zero;
                }
            }
        }
        match flat.len() {
            0 => unit,
            1 => flat[0],
            _ if conj => self.intern(Node::And(flat)),
            _ => self.intern(Node::Or(flat)),
        }
    }

    fn and(&mut self, items: Vec<NodeId>) -> NodeId {
        self.junction(items, true)
    }

    fn or(&mut self, items: Vec<NodeId>) -> NodeId {
        self.junction(items, false)
    }

    fn next(&mut self, x: NodeId) -> NodeId {
        if x == FALSE {
            FALSE
        } else {
            self.intern(Node::Next(x))
        }
    }

    fn eventually(&mut self, x: NodeId) -> NodeId {
        match x {
            TRUE | FALSE => x,
            _ => self.intern(Node::Eventually(x)),
        }
    }

    fn always(&mut self, x: NodeId) -> NodeId {
        match x {
            TRUE | FALSE => x,
            _ => self.intern(Node::Always(x)),
        }
    }

    fn until(&mut self, a: NodeId, b: NodeId) -> NodeId {
        match (a, b) {
            (_, TRUE) | (_, FALSE) => b,
            (FALSE, _) => b,
            (TRUE, _) => self.eventually(b),
            _ => self.intern(Node::Until(a, b)),
        }
    }

    /// Residual obligation on the rest of the trace after reading `sym`,
    /// valid when at least one more position follows.
    pub fn step(&mut self, q: NodeId, sym: u32) -> NodeId {
        if let Some(&r) = self.prog_memo.get(&(q, sym)) {
            return r;
        }
        let r = match self.nodes[q as usize].clone() {
            Node::True => TRUE,
            Node::False => FALSE,
            Node::Atom(bit) => {
                if sym >> bit & 1 == 1 {
                    TRUE
                } else {
                    FALSE
                }
            }
            Node::Not(x) => {
                let px = self.step(x, sym);
                self.not(px)
            }
            Node::And(xs) => {
                let ps = xs.iter().map(|&x| self.step(x, sym)).collect();
                self.and(ps)
            }
            Node::Or(xs) => {
                let ps = xs.iter().map(|&x| self.step(x, sym)).collect();
                self.or(ps)
            }
            Node::Next(x) => x,
            Node::Eventually(x) => {
                let px = self.step(x, sym);
                self.or(vec![px, q])
            }
            Node::Always(x) => {
                let px = self.step(x, sym);
                self.and(vec![px, q])
            }
            Node::Until(a, b) => {
                let pb = self.step(b, sym);
                let pa = self.step(a, sym);
                let keep = self.and(vec![pa, q]);
                self.or(vec![pb, keep])
            }
        };
        self.prog_memo.insert((q, sym), r);
        r
    }

    /// Whether the one-position trace `sym` satisfies `q`.
    pub fn accepts_last(&mut self, q: NodeId, sym: u32) -> bool {
        if let Some(&r) = self.last_memo.get(&(q, sym)) {
            return r;
        }
        let r = match self.nodes[q as usize].clone() {
            Node::True => true,
            Node::False => false,
            Node::Atom(bit) => sym >> bit & 1 == 1,
            Node::Not(x) => !self.accepts_last(x, sym),
            Node::And(xs) => xs.iter().all(|&x| self.accepts_last(x, sym)),
            Node::Or(xs) => xs.iter().any(|&x| self.accepts_last(x, sym)),
            Node::Next(_) => false,
            Node::Eventually(x) | Node::Always(x) => self.accepts_last(x, sym),
            Node::Until(_, b) => self.accepts_last(b, sym),
        };
        self.last_memo.insert((q, sym), r);
        r
    }

    /// Runs a deterministic symbol word from `q` and reports acceptance.
    pub fn accepts(&mut self, q: NodeId, word: &[u32]) -> bool {
        let Some((&last, prefix)) = word.split_last() else {
            return false;
        };
        let mut state = q;
        for &s in prefix {
            state = self.step(state, s);
        }
        self.accepts_last(state, last)
    }
}
