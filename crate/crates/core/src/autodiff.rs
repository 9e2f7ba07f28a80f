//! Scalar reverse-mode automatic differentiation with nested differentiation.
//!
//! A [`Graph`] is an immutable expression DAG over named root variables.
//! First derivatives come from a numeric reverse sweep ([`Graph::grad`]);
//! higher orders come from differentiating the graph itself into a new graph
//! ([`Graph::derive`]) and repeating, which keeps every order exact rather
//! than approximated. Third-order mixed partials are enough for the viscous
//! term of the vorticity-transport residual, so [`Graph::derive_n`] stops
//! there.
//!
//! The leaky-rectifier derivative at exactly zero uses the positive-side
//! slope (1), and the gate's own derivative is taken as zero almost
//! everywhere; both conventions are fixed for determinism.

use std::collections::HashMap;

use crate::error::AutodiffError;

pub type NodeId = usize;

/// A single operation node. Operand ids always point at earlier nodes, so
/// the node list is topologically ordered by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    /// Independent variable, payload is the root slot.
    Var(usize),
    Const(f64),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Exp(NodeId),
    Tanh(NodeId),
    /// max(x, slope*x); derivative at 0 takes the positive side.
    LeakyRelu(NodeId, f64),
    /// Derivative of the leaky rectifier: 1 for x >= 0, else `slope`.
    PosGate(NodeId, f64),
}

/// Immutable expression DAG. Construction goes through [`GraphBuilder`];
/// evaluation and differentiation never mutate the graph, so a graph can be
/// shared across threads and evaluated concurrently.
#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<Op>,
    n_roots: usize,
    output: NodeId,
}

/// Partial derivatives keyed by root slot. Roots that do not feed the output
/// have no entry (their partial is structurally zero).
#[derive(Debug, Clone, Default)]
pub struct Gradient {
    partials: std::collections::BTreeMap<usize, f64>,
}

impl Gradient {
    pub fn partial(&self, root: usize) -> f64 {
        self.partials.get(&root).copied().unwrap_or(0.0)
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.partials.iter().map(|(&k, &v)| (k, v))
    }

    pub fn contains(&self, root: usize) -> bool {
        self.partials.contains_key(&root)
    }
}

/// Builder with hash-consing and constant folding. Shared subexpressions are
/// merged, which keeps repeatedly differentiated graphs compact.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    nodes: Vec<Op>,
    n_roots: usize,
    cache: HashMap<(u8, usize, usize, u64), NodeId>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn intern(&mut self, op: Op) -> NodeId {
        let key = match op {
            Op::Var(r) => (0u8, r, 0, 0),
            Op::Const(v) => (1, 0, 0, v.to_bits()),
            Op::Add(a, b) => (2, a.min(b), a.max(b), 0),
            Op::Sub(a, b) => (3, a, b, 0),
            Op::Mul(a, b) => (4, a.min(b), a.max(b), 0),
            Op::Div(a, b) => (5, a, b, 0),
            Op::Neg(a) => (6, a, 0, 0),
            Op::Sin(a) => (7, a, 0, 0),
            Op::Cos(a) => (8, a, 0, 0),
            Op::Exp(a) => (9, a, 0, 0),
            Op::Tanh(a) => (10, a, 0, 0),
            Op::LeakyRelu(a, s) => (11, a, 0, s.to_bits()),
            Op::PosGate(a, s) => (12, a, 0, s.to_bits()),
        };
        if let Some(&id) = self.cache.get(&key) {
            return id;
        }
        let id = self.nodes.len();
        self.nodes.push(op);
        self.cache.insert(key, id);
        id
    }

    fn const_of(&self, id: NodeId) -> Option<f64> {
        match self.nodes[id] {
            Op::Const(v) => Some(v),
            _ => None,
        }
    }

    pub fn var(&mut self, root: usize) -> NodeId {
        self.n_roots = self.n_roots.max(root + 1);
        self.intern(Op::Var(root))
    }

    pub fn constant(&mut self, v: f64) -> NodeId {
        self.intern(Op::Const(v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        match (self.const_of(a), self.const_of(b)) {
            (Some(x), Some(y)) => self.constant(x + y),
            (Some(0.0), None) => b,
            (None, Some(0.0)) => a,
            _ => self.intern(Op::Add(a, b)),
        }
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        match (self.const_of(a), self.const_of(b)) {
            (Some(x), Some(y)) => self.constant(x - y),
            (None, Some(0.0)) => a,
            (Some(0.0), None) => self.neg(b),
            _ => self.intern(Op::Sub(a, b)),
        }
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        match (self.const_of(a), self.const_of(b)) {
            (Some(x), Some(y)) => self.constant(x * y),
            (Some(0.0), _) | (_, Some(0.0)) => self.constant(0.0),
            (Some(1.0), None) => b,
            (None, Some(1.0)) => a,
            (Some(-1.0), None) => self.neg(b),
            (None, Some(-1.0)) => self.neg(a),
            _ => self.intern(Op::Mul(a, b)),
        }
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        match (self.const_of(a), self.const_of(b)) {
            (Some(x), Some(y)) => self.constant(x / y),
            (Some(0.0), None) => self.constant(0.0),
            (None, Some(1.0)) => a,
            _ => self.intern(Op::Div(a, b)),
        }
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        match self.nodes[a] {
            Op::Const(v) => self.constant(-v),
            Op::Neg(inner) => inner,
            _ => self.intern(Op::Neg(a)),
        }
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        match self.const_of(a) {
            Some(v) => self.constant(v.sin()),
            None => self.intern(Op::Sin(a)),
        }
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        match self.const_of(a) {
            Some(v) => self.constant(v.cos()),
            None => self.intern(Op::Cos(a)),
        }
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        match self.const_of(a) {
            Some(v) => self.constant(v.exp()),
            None => self.intern(Op::Exp(a)),
        }
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        match self.const_of(a) {
            Some(v) => self.constant(v.tanh()),
            None => self.intern(Op::Tanh(a)),
        }
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        match self.const_of(a) {
            Some(v) => self.constant(leaky(v, slope)),
            None => self.intern(Op::LeakyRelu(a, slope)),
        }
    }

    pub fn pos_gate(&mut self, a: NodeId, slope: f64) -> NodeId {
        match self.const_of(a) {
            Some(v) => self.constant(if v >= 0.0 { 1.0 } else { slope }),
            None => self.intern(Op::PosGate(a, slope)),
        }
    }

    pub fn finish(self, output: NodeId) -> Graph {
        assert!(output < self.nodes.len());
        Graph {
            nodes: self.nodes,
            n_roots: self.n_roots,
            output,
        }
    }
}

#[inline]
fn leaky(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

impl Graph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_roots(&self) -> usize {
        self.n_roots
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    fn check_inputs(&self, inputs: &[f64]) -> Result<(), AutodiffError> {
        if inputs.len() != self.n_roots {
            return Err(AutodiffError::InputShape {
                expected: self.n_roots,
                got: inputs.len(),
            });
        }
        Ok(())
    }

    fn forward(&self, inputs: &[f64]) -> Result<Vec<f64>, AutodiffError> {
        let mut vals = vec![0.0; self.nodes.len()];
        for (i, op) in self.nodes.iter().enumerate() {
            let v = match *op {
                Op::Var(r) => inputs[r],
                Op::Const(c) => c,
                Op::Add(a, b) => vals[a] + vals[b],
                Op::Sub(a, b) => vals[a] - vals[b],
                Op::Mul(a, b) => vals[a] * vals[b],
                Op::Div(a, b) => vals[a] / vals[b],
                Op::Neg(a) => -vals[a],
                Op::Sin(a) => vals[a].sin(),
                Op::Cos(a) => vals[a].cos(),
                Op::Exp(a) => vals[a].exp(),
                Op::Tanh(a) => vals[a].tanh(),
                Op::LeakyRelu(a, s) => leaky(vals[a], s),
                Op::PosGate(a, s) => {
                    if vals[a] >= 0.0 {
                        1.0
                    } else {
                        s
                    }
                }
            };
            if !v.is_finite() {
                return Err(AutodiffError::NonFinite { node: i });
            }
            vals[i] = v;
        }
        Ok(vals)
    }

    /// Primal value of the composed function at `inputs`.
    pub fn evaluate(&self, inputs: &[f64]) -> Result<f64, AutodiffError> {
        self.check_inputs(inputs)?;
        Ok(self.forward(inputs)?[self.output])
    }

    /// Marks nodes that feed the output.
    fn reachable(&self) -> Vec<bool> {
        let mut live = vec![false; self.nodes.len()];
        live[self.output] = true;
        for i in (0..self.nodes.len()).rev() {
            if !live[i] {
                continue;
            }
            match self.nodes[i] {
                Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                    live[a] = true;
                    live[b] = true;
                }
                Op::Neg(a)
                | Op::Sin(a)
                | Op::Cos(a)
                | Op::Exp(a)
                | Op::Tanh(a)
                | Op::LeakyRelu(a, _)
                | Op::PosGate(a, _) => live[a] = true,
                Op::Var(_) | Op::Const(_) => {}
            }
        }
        live
    }

    /// Exact partial derivatives of the output with respect to every
    /// reachable root, by one numeric reverse sweep.
    pub fn grad(&self, inputs: &[f64]) -> Result<Gradient, AutodiffError> {
        self.check_inputs(inputs)?;
        let vals = self.forward(inputs)?;
        let live = self.reachable();
        let mut adj = vec![0.0; self.nodes.len()];
        adj[self.output] = 1.0;
        for i in (0..self.nodes.len()).rev() {
            if !live[i] || adj[i] == 0.0 {
                continue;
            }
            let a = adj[i];
            match self.nodes[i] {
                Op::Var(_) | Op::Const(_) => {}
                Op::Add(x, y) => {
                    adj[x] += a;
                    adj[y] += a;
                }
                Op::Sub(x, y) => {
                    adj[x] += a;
                    adj[y] -= a;
                }
                Op::Mul(x, y) => {
                    adj[x] += a * vals[y];
                    adj[y] += a * vals[x];
                }
                Op::Div(x, y) => {
                    adj[x] += a / vals[y];
                    adj[y] -= a * vals[i] / vals[y];
                }
                Op::Neg(x) => adj[x] -= a,
                Op::Sin(x) => adj[x] += a * vals[x].cos(),
                Op::Cos(x) => adj[x] -= a * vals[x].sin(),
                Op::Exp(x) => adj[x] += a * vals[i],
                Op::Tanh(x) => adj[x] += a * (1.0 - vals[i] * vals[i]),
                Op::LeakyRelu(x, s) => {
                    adj[x] += a * if vals[x] >= 0.0 { 1.0 } else { s };
                }
                // a.e. constant; measure-zero kink contributes nothing
                Op::PosGate(_, _) => {}
            }
        }
        let mut grad = Gradient::default();
        for (i, op) in self.nodes.iter().enumerate() {
            if let Op::Var(r) = *op {
                if live[i] {
                    *grad.partials.entry(r).or_insert(0.0) += adj[i];
                }
            }
        }
        Ok(grad)
    }

    /// Builds a new graph computing d(output)/d(root `wrt`) by symbolic
    /// reverse-mode transformation. The new graph keeps the same root slots.
    pub fn derive(&self, wrt: usize) -> Result<Graph, AutodiffError> {
        if wrt >= self.n_roots {
            return Err(AutodiffError::BadRoot {
                index: wrt,
                roots: self.n_roots,
            });
        }
        let mut b = GraphBuilder::new();
        b.n_roots = self.n_roots;
        // copy primal nodes (smart constructors may simplify)
        let mut map = vec![0usize; self.nodes.len()];
        for (i, op) in self.nodes.iter().enumerate() {
            map[i] = match *op {
                Op::Var(r) => b.var(r),
                Op::Const(c) => b.constant(c),
                Op::Add(x, y) => b.add(map[x], map[y]),
                Op::Sub(x, y) => b.sub(map[x], map[y]),
                Op::Mul(x, y) => b.mul(map[x], map[y]),
                Op::Div(x, y) => b.div(map[x], map[y]),
                Op::Neg(x) => b.neg(map[x]),
                Op::Sin(x) => b.sin(map[x]),
                Op::Cos(x) => b.cos(map[x]),
                Op::Exp(x) => b.exp(map[x]),
                Op::Tanh(x) => b.tanh(map[x]),
                Op::LeakyRelu(x, s) => b.leaky_relu(map[x], s),
                Op::PosGate(x, s) => b.pos_gate(map[x], s),
            };
        }
        let live = self.reachable();
        let zero = b.constant(0.0);
        let one = b.constant(1.0);
        let mut adj: Vec<NodeId> = vec![zero; self.nodes.len()];
        adj[self.output] = one;
        for i in (0..self.nodes.len()).rev() {
            if !live[i] || adj[i] == zero {
                continue;
            }
            let a = adj[i];
            match self.nodes[i] {
                Op::Var(_) | Op::Const(_) => {}
                Op::Add(x, y) => {
                    adj[x] = b.add(adj[x], a);
                    adj[y] = b.add(adj[y], a);
                }
                Op::Sub(x, y) => {
                    adj[x] = b.add(adj[x], a);
                    let t = b.sub(adj[y], a);
                    adj[y] = t;
                }
                Op::Mul(x, y) => {
                    let tx = b.mul(a, map[y]);
                    adj[x] = b.add(adj[x], tx);
                    let ty = b.mul(a, map[x]);
                    adj[y] = b.add(adj[y], ty);
                }
                Op::Div(x, y) => {
                    let tx = b.div(a, map[y]);
                    adj[x] = b.add(adj[x], tx);
                    // d/dy (x/y) = -(x/y)/y, reusing the primal quotient
                    let q = b.div(map[i], map[y]);
                    let ty = b.mul(a, q);
                    adj[y] = b.sub(adj[y], ty);
                }
                Op::Neg(x) => {
                    adj[x] = b.sub(adj[x], a);
                }
                Op::Sin(x) => {
                    let c = b.cos(map[x]);
                    let t = b.mul(a, c);
                    adj[x] = b.add(adj[x], t);
                }
                Op::Cos(x) => {
                    let s = b.sin(map[x]);
                    let t = b.mul(a, s);
                    adj[x] = b.sub(adj[x], t);
                }
                Op::Exp(x) => {
                    let t = b.mul(a, map[i]);
                    adj[x] = b.add(adj[x], t);
                }
                Op::Tanh(x) => {
                    let t2 = b.mul(map[i], map[i]);
                    let d = b.sub(one, t2);
                    let t = b.mul(a, d);
                    adj[x] = b.add(adj[x], t);
                }
                Op::LeakyRelu(x, s) => {
                    let g = b.pos_gate(map[x], s);
                    let t = b.mul(a, g);
                    adj[x] = b.add(adj[x], t);
                }
                Op::PosGate(_, _) => {}
            }
        }
        // derivative with respect to wrt = sum of adjoints on its var node
        let mut result = zero;
        for (i, op) in self.nodes.iter().enumerate() {
            if let Op::Var(r) = *op {
                if r == wrt && live[i] {
                    result = b.add(result, adj[i]);
                }
            }
        }
        Ok(prune(b, result))
    }

    /// Rebuilds this graph's nodes inside `b` (sharing structure through the
    /// builder's interning) and returns the mapped output node. Root slots
    /// are preserved, which lets callers combine graphs over the same
    /// variables into one expression.
    pub fn import_into(&self, b: &mut GraphBuilder) -> NodeId {
        b.n_roots = b.n_roots.max(self.n_roots);
        let mut map = vec![0usize; self.nodes.len()];
        for (i, op) in self.nodes.iter().enumerate() {
            map[i] = match *op {
                Op::Var(r) => b.var(r),
                Op::Const(c) => b.constant(c),
                Op::Add(x, y) => b.add(map[x], map[y]),
                Op::Sub(x, y) => b.sub(map[x], map[y]),
                Op::Mul(x, y) => b.mul(map[x], map[y]),
                Op::Div(x, y) => b.div(map[x], map[y]),
                Op::Neg(x) => b.neg(map[x]),
                Op::Sin(x) => b.sin(map[x]),
                Op::Cos(x) => b.cos(map[x]),
                Op::Exp(x) => b.exp(map[x]),
                Op::Tanh(x) => b.tanh(map[x]),
                Op::LeakyRelu(x, s) => b.leaky_relu(map[x], s),
                Op::PosGate(x, s) => b.pos_gate(map[x], s),
            };
        }
        map[self.output]
    }

    /// Mixed partial of order `wrt.len()` (1 to 3), differentiating the graph
    /// repeatedly and finishing with a numeric reverse sweep.
    pub fn derive_n(&self, inputs: &[f64], wrt: &[usize]) -> Result<f64, AutodiffError> {
        if wrt.is_empty() || wrt.len() > 3 {
            return Err(AutodiffError::UnsupportedOrder { order: wrt.len() });
        }
        self.check_inputs(inputs)?;
        for &r in wrt {
            if r >= self.n_roots {
                return Err(AutodiffError::BadRoot {
                    index: r,
                    roots: self.n_roots,
                });
            }
        }
        let (head, last) = wrt.split_at(wrt.len() - 1);
        let mut g: Option<Graph> = None;
        for &r in head {
            let base = g.as_ref().unwrap_or(self);
            g = Some(base.derive(r)?);
        }
        let base = g.as_ref().unwrap_or(self);
        Ok(base.grad(inputs)?.partial(last[0]))
    }
}

/// Dead-code elimination: rebuilds the graph keeping only nodes reachable
/// from `output`, preserving root slot numbering.
fn prune(b: GraphBuilder, output: NodeId) -> Graph {
    let nodes = b.nodes;
    let n_roots = b.n_roots;
    let mut live = vec![false; nodes.len()];
    live[output] = true;
    for i in (0..nodes.len()).rev() {
        if !live[i] {
            continue;
        }
        match nodes[i] {
            Op::Add(a, b2) | Op::Sub(a, b2) | Op::Mul(a, b2) | Op::Div(a, b2) => {
                live[a] = true;
                live[b2] = true;
            }
            Op::Neg(a)
            | Op::Sin(a)
            | Op::Cos(a)
            | Op::Exp(a)
            | Op::Tanh(a)
            | Op::LeakyRelu(a, _)
            | Op::PosGate(a, _) => live[a] = true,
            Op::Var(_) | Op::Const(_) => {}
        }
    }
    let mut map = vec![usize::MAX; nodes.len()];
    let mut out = Vec::with_capacity(live.iter().filter(|&&l| l).count());
    for (i, op) in nodes.iter().enumerate() {
        if !live[i] {
            continue;
        }
        let remapped = match *op {
            Op::Var(r) => Op::Var(r),
            Op::Const(c) => Op::Const(c),
            Op::Add(a, b2) => Op::Add(map[a], map[b2]),
            Op::Sub(a, b2) => Op::Sub(map[a], map[b2]),
            Op::Mul(a, b2) => Op::Mul(map[a], map[b2]),
            Op::Div(a, b2) => Op::Div(map[a], map[b2]),
            Op::Neg(a) => Op::Neg(map[a]),
            Op::Sin(a) => Op::Sin(map[a]),
            Op::Cos(a) => Op::Cos(map[a]),
            Op::Exp(a) => Op::Exp(map[a]),
            Op::Tanh(a) => Op::Tanh(map[a]),
            Op::LeakyRelu(a, s) => Op::LeakyRelu(map[a], s),
            Op::PosGate(a, s) => Op::PosGate(map[a], s),
        };
        map[i] = out.len();
        out.push(remapped);
    }
    Graph {
        nodes: out,
        n_roots,
        output: map[output],
    }
}
