//! Reverse-mode automatic differentiation on a recording tape.
//!
//! Every value is a scalar `f64` node on a [`Tape`]. Recording an operation
//! appends a node; the node id doubles as a topological order, so a single
//! reverse sweep computes adjoints. Two backward passes are provided:
//!
//! * [`Tape::gradient`] / [`Tape::jacobian`] emit the adjoint arithmetic as
//!   *new tape nodes*, so a derivative is itself differentiable. This is what
//!   lets a loss contain input-gradients of a network and still be
//!   differentiated with respect to the network weights.
//! * [`Tape::backward_values`] runs a value-only sweep with no allocation of
//!   nodes, for the common case where only numbers are needed (optimizer
//!   steps, rollouts).
//!
//! The primitive set is `{+, -, *, /, neg, tanh, exp, ln, sin, cos, powi,
//! powf, sum, dot}`; each primitive's derivative is expressed in the same set,
//! so differentiation can be nested to any depth. `sum` and `dot` are n-ary,
//! which keeps dense-layer graphs compact: the adjoint of a node with many
//! consumers is emitted as a single `dot` over the consumers' adjoints
//! instead of a chain of binary ops.
//!
//! A tape is single-threaded by construction (`RefCell` interior). Distinct
//! tapes are independent and can be used from different threads.

use std::cell::RefCell;
use std::collections::HashMap;
use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

/// Errors from recording or differentiating.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdError {
    /// A differentiation target does not belong to the tape it was handed to.
    #[error("unknown leaf: node does not belong to this tape")]
    UnknownLeaf,
    #[error("division by zero")]
    DivisionByZero,
    #[error("log of non-positive value {0}")]
    LogDomain(f64),
    #[error("power of non-positive base {0}")]
    PowDomain(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum OpKind {
    Leaf,
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Tanh,
    Exp,
    Ln,
    Sin,
    Cos,
    Powi(i32),
    Powf(f64),
    Sum,
    /// Parent list is the concatenation of two equal-length halves.
    Dot,
}

#[derive(Default)]
struct TapeInner {
    kinds: Vec<OpKind>,
    vals: Vec<f64>,
    pstart: Vec<u32>,
    plen: Vec<u32>,
    parents: Vec<u32>,
    /// Interned constants, keyed by bit pattern.
    consts: HashMap<u64, u32>,
}

impl TapeInner {
    fn push(&mut self, kind: OpKind, val: f64, parents: &[u32]) -> u32 {
        let id = self.kinds.len() as u32;
        self.kinds.push(kind);
        self.vals.push(val);
        self.pstart.push(self.parents.len() as u32);
        self.plen.push(parents.len() as u32);
        self.parents.extend_from_slice(parents);
        id
    }

    fn parent_slice(&self, id: u32) -> &[u32] {
        let s = self.pstart[id as usize] as usize;
        let l = self.plen[id as usize] as usize;
        &self.parents[s..s + l]
    }
}

/// Scratch buffers for the graph-emitting backward pass, reused across calls.
#[derive(Default)]
struct GradScratch {
    /// Generation-stamped id -> dense cone index map.
    stamp: Vec<u32>,
    dense: Vec<u32>,
    generation: u32,
    cone: Vec<u32>,
    stack: Vec<u32>,
    counts: Vec<u32>,
    cursors: Vec<u32>,
    contribs: Vec<Contribution>,
    adjoint_of: Vec<u32>,
    pbuf: Vec<u32>,
}

#[derive(Clone, Copy)]
enum Contribution {
    /// Adjoint flows through unchanged (sign-adjusted).
    Pass { node: u32, negate: bool },
    /// `adj * factor`, sign-adjusted.
    Prod { adj: u32, factor: u32, negate: bool },
}

/// A recording tape. See the module docs for the overall contract.
pub struct Tape {
    inner: RefCell<TapeInner>,
    scratch: RefCell<GradScratch>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// A value recorded on a [`Tape`]. Copyable handle; arithmetic on it records
/// new nodes. All operands of one expression must come from the same tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{} = {})", self.idx, self.value())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(TapeInner::default()),
            scratch: RefCell::new(GradScratch::default()),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total parent-edge count; a proxy for the memory the tape holds.
    pub fn edge_count(&self) -> usize {
        self.inner.borrow().parents.len()
    }

    /// Drop all recorded nodes but keep allocations. Requires exclusive
    /// access, so no `Var` from the previous recording can survive a clear.
    pub fn clear(&mut self) {
        let mut inner = self.inner.borrow_mut();
        inner.kinds.clear();
        inner.vals.clear();
        inner.pstart.clear();
        inner.plen.clear();
        inner.parents.clear();
        inner.consts.clear();
    }

    /// Register a differentiable input (a leaf of the graph).
    pub fn leaf(&self, value: f64) -> Var<'_> {
        let idx = self.inner.borrow_mut().push(OpKind::Leaf, value, &[]);
        Var { tape: self, idx }
    }

    /// Register a constant. Constants are interned by bit pattern and carry
    /// no derivative.
    pub fn constant(&self, value: f64) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let bits = value.to_bits();
        if let Some(&idx) = inner.consts.get(&bits) {
            return Var { tape: self, idx };
        }
        let idx = inner.push(OpKind::Constant, value, &[]);
        inner.consts.insert(bits, idx);
        Var { tape: self, idx }
    }

    /// Current value of a node.
    pub fn value(&self, v: Var<'_>) -> f64 {
        self.check(v);
        self.inner.borrow().vals[v.idx as usize]
    }

    pub fn is_leaf(&self, v: Var<'_>) -> bool {
        self.check(v);
        self.inner.borrow().kinds[v.idx as usize] == OpKind::Leaf
    }

    fn check(&self, v: Var<'_>) {
        assert!(
            std::ptr::eq(v.tape, self),
            "Var used with a tape it does not belong to"
        );
    }

    fn owns(&self, v: Var<'_>) -> bool {
        std::ptr::eq(v.tape, self)
    }

    fn push(&self, kind: OpKind, val: f64, parents: &[u32]) -> Var<'_> {
        let idx = self.inner.borrow_mut().push(kind, val, parents);
        Var { tape: self, idx }
    }

    /// Sum of several nodes as one n-ary node.
    pub fn sum<'t>(&'t self, xs: &[Var<'t>]) -> Var<'t> {
        assert!(!xs.is_empty(), "sum of empty node list");
        for x in xs {
            self.check(*x);
        }
        if xs.len() == 1 {
            return xs[0];
        }
        let (val, ids) = {
            let inner = self.inner.borrow();
            let mut acc = 0.0;
            let mut ids = Vec::with_capacity(xs.len());
            for x in xs {
                acc += inner.vals[x.idx as usize];
                ids.push(x.idx);
            }
            (acc, ids)
        };
        self.push(OpKind::Sum, val, &ids)
    }

    /// Inner product of two equal-length node slices as one n-ary node.
    pub fn dot<'t>(&'t self, a: &[Var<'t>], b: &[Var<'t>]) -> Var<'t> {
        assert_eq!(a.len(), b.len(), "dot of unequal lengths");
        assert!(!a.is_empty(), "dot of empty node lists");
        for x in a.iter().chain(b) {
            self.check(*x);
        }
        let (val, ids) = {
            let inner = self.inner.borrow();
            let mut acc = 0.0;
            let mut ids = Vec::with_capacity(2 * a.len());
            for (x, y) in a.iter().zip(b) {
                acc += inner.vals[x.idx as usize] * inner.vals[y.idx as usize];
            }
            ids.extend(a.iter().map(|v| v.idx));
            ids.extend(b.iter().map(|v| v.idx));
            (acc, ids)
        };
        self.push(OpKind::Dot, val, &ids)
    }

    /// Recompute every node value from the leaves in recorded order and
    /// compare bit-for-bit with the stored values.
    pub fn replay_identical(&self) -> bool {
        let inner = self.inner.borrow();
        let n = inner.kinds.len();
        let mut vals = vec![0.0f64; n];
        for i in 0..n {
            let p = inner.parent_slice(i as u32);
            let v = match inner.kinds[i] {
                OpKind::Leaf | OpKind::Constant => inner.vals[i],
                OpKind::Add => vals[p[0] as usize] + vals[p[1] as usize],
                OpKind::Sub => vals[p[0] as usize] - vals[p[1] as usize],
                OpKind::Mul => vals[p[0] as usize] * vals[p[1] as usize],
                OpKind::Div => vals[p[0] as usize] / vals[p[1] as usize],
                OpKind::Neg => -vals[p[0] as usize],
                OpKind::Tanh => vals[p[0] as usize].tanh(),
                OpKind::Exp => vals[p[0] as usize].exp(),
                OpKind::Ln => vals[p[0] as usize].ln(),
                OpKind::Sin => vals[p[0] as usize].sin(),
                OpKind::Cos => vals[p[0] as usize].cos(),
                OpKind::Powi(k) => vals[p[0] as usize].powi(k),
                OpKind::Powf(e) => vals[p[0] as usize].powf(e),
                OpKind::Sum => p.iter().map(|&q| vals[q as usize]).sum(),
                OpKind::Dot => {
                    let h = p.len() / 2;
                    let mut acc = 0.0;
                    for k in 0..h {
                        acc += vals[p[k] as usize] * vals[p[h + k] as usize];
                    }
                    acc
                }
            };
            vals[i] = v;
        }
        vals.iter()
            .zip(inner.vals.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Value-only reverse sweep from `f`. Returns the adjoint of every node
    /// with id `<= f`; read individual entries through [`Adjoints::wrt`].
    pub fn backward_values(&self, f: Var<'_>) -> Result<Adjoints, AdError> {
        if !self.owns(f) {
            return Err(AdError::UnknownLeaf);
        }
        let inner = self.inner.borrow();
        let n = f.idx as usize + 1;
        let mut adj = vec![0.0f64; n];
        adj[f.idx as usize] = 1.0;
        for i in (0..n).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let p = inner.parent_slice(i as u32);
            match inner.kinds[i] {
                OpKind::Leaf | OpKind::Constant => {}
                OpKind::Add => {
                    adj[p[0] as usize] += a;
                    adj[p[1] as usize] += a;
                }
                OpKind::Sub => {
                    adj[p[0] as usize] += a;
                    adj[p[1] as usize] -= a;
                }
                OpKind::Mul => {
                    adj[p[0] as usize] += a * inner.vals[p[1] as usize];
                    adj[p[1] as usize] += a * inner.vals[p[0] as usize];
                }
                OpKind::Div => {
                    let b = inner.vals[p[1] as usize];
                    adj[p[0] as usize] += a / b;
                    adj[p[1] as usize] -= a * inner.vals[i] / b;
                }
                OpKind::Neg => adj[p[0] as usize] -= a,
                OpKind::Tanh => {
                    let t = inner.vals[i];
                    adj[p[0] as usize] += a * (1.0 - t * t);
                }
                OpKind::Exp => adj[p[0] as usize] += a * inner.vals[i],
                OpKind::Ln => adj[p[0] as usize] += a / inner.vals[p[0] as usize],
                OpKind::Sin => adj[p[0] as usize] += a * inner.vals[p[0] as usize].cos(),
                OpKind::Cos => adj[p[0] as usize] -= a * inner.vals[p[0] as usize].sin(),
                OpKind::Powi(k) => {
                    let x = inner.vals[p[0] as usize];
                    adj[p[0] as usize] += a * f64::from(k) * x.powi(k - 1);
                }
                OpKind::Powf(e) => {
                    let x = inner.vals[p[0] as usize];
                    adj[p[0] as usize] += a * e * x.powf(e - 1.0);
                }
                OpKind::Sum => {
                    for &q in p {
                        adj[q as usize] += a;
                    }
                }
                OpKind::Dot => {
                    let h = p.len() / 2;
                    for k in 0..h {
                        let (x, y) = (p[k] as usize, p[h + k] as usize);
                        adj[x] += a * inner.vals[y];
                        adj[y] += a * inner.vals[x];
                    }
                }
            }
        }
        Ok(Adjoints {
            tape: self as *const Tape as usize,
            vals: adj,
        })
    }

    /// Derivatives of scalar `f` with respect to each node in `xs`, emitted
    /// as new tape nodes so they can be differentiated again. Targets are
    /// usually leaves but any node of the same tape is accepted; the result
    /// is the sensitivity of `f` to that node's value.
    pub fn gradient<'t>(&'t self, f: Var<'t>, xs: &[Var<'t>]) -> Result<Vec<Var<'t>>, AdError> {
        if !self.owns(f) || xs.iter().any(|x| !self.owns(*x)) {
            return Err(AdError::UnknownLeaf);
        }
        let one = self.constant(1.0);

        let mut scratch = self.scratch.borrow_mut();
        let s = &mut *scratch;
        let n_now = self.len();
        if s.stamp.len() < n_now {
            s.stamp.resize(n_now, 0);
            s.dense.resize(n_now, 0);
        }
        s.generation = s.generation.wrapping_add(1);
        if s.generation == 0 {
            s.stamp.iter_mut().for_each(|v| *v = 0);
            s.generation = 1;
        }
        let generation = s.generation;

        // Mark the cone: every node f depends on, f itself included.
        s.cone.clear();
        s.stack.clear();
        s.stack.push(f.idx);
        s.stamp[f.idx as usize] = generation;
        {
            let inner = self.inner.borrow();
            while let Some(i) = s.stack.pop() {
                s.cone.push(i);
                for &p in inner.parent_slice(i) {
                    if s.stamp[p as usize] != generation {
                        s.stamp[p as usize] = generation;
                        s.stack.push(p);
                    }
                }
            }
        }
        // Process consumers before producers.
        s.cone.sort_unstable_by(|a, b| b.cmp(a));
        for (d, &id) in s.cone.iter().enumerate() {
            s.dense[id as usize] = d as u32;
        }

        // Count contributions per cone node, then carve segments.
        let cone_len = s.cone.len();
        s.counts.clear();
        s.counts.resize(cone_len, 0);
        {
            let inner = self.inner.borrow();
            for &id in &s.cone {
                if matches!(
                    inner.kinds[id as usize],
                    OpKind::Leaf | OpKind::Constant | OpKind::Powi(0)
                ) {
                    continue;
                }
                for &p in inner.parent_slice(id) {
                    s.counts[s.dense[p as usize] as usize] += 1;
                }
            }
        }
        s.cursors.clear();
        s.cursors.resize(cone_len, 0);
        let mut offset = 0u32;
        for d in 0..cone_len {
            s.cursors[d] = offset;
            offset += s.counts[d];
        }
        s.contribs.clear();
        s.contribs.resize(
            offset as usize,
            Contribution::Pass {
                node: 0,
                negate: false,
            },
        );
        let seg_start: Vec<u32> = {
            let mut v = Vec::with_capacity(cone_len);
            let mut acc = 0u32;
            for d in 0..cone_len {
                v.push(acc);
                acc += s.counts[d];
            }
            v
        };

        s.adjoint_of.clear();
        s.adjoint_of.resize(cone_len, u32::MAX);

        // Reverse sweep: finalize this node's adjoint, then deposit
        // contributions into its parents' segments.
        for d in 0..cone_len {
            let id = s.cone[d];
            let adj = if id == f.idx {
                one.idx
            } else {
                let lo = seg_start[d] as usize;
                let hi = s.cursors[d] as usize;
                self.finalize_adjoint(&s.contribs[lo..hi], one.idx)
            };
            s.adjoint_of[d] = adj;

            let kind;
            {
                let inner = self.inner.borrow();
                kind = inner.kinds[id as usize];
                s.pbuf.clear();
                s.pbuf.extend_from_slice(inner.parent_slice(id));
            }
            self.emit_contributions(kind, id, adj, s, one.idx)?;
        }

        let mut out = Vec::with_capacity(xs.len());
        for x in xs {
            let d = if s.stamp[x.idx as usize] == generation {
                Some(s.dense[x.idx as usize] as usize)
            } else {
                None
            };
            match d {
                Some(d) => out.push(Var {
                    tape: self,
                    idx: s.adjoint_of[d],
                }),
                // Not in the cone: f does not depend on x.
                None => out.push(self.constant(0.0)),
            }
        }
        Ok(out)
    }

    /// Rows are `gradient(f_i, xs)`; entries stay differentiable.
    pub fn jacobian<'t>(
        &'t self,
        fs: &[Var<'t>],
        xs: &[Var<'t>],
    ) -> Result<Vec<Vec<Var<'t>>>, AdError> {
        fs.iter().map(|&f| self.gradient(f, xs)).collect()
    }

    /// Build the adjoint node for one cone node from its contribution list.
    fn finalize_adjoint(&self, contribs: &[Contribution], one: u32) -> u32 {
        let mut pos: Vec<u32> = Vec::new();
        let mut neg: Vec<u32> = Vec::new();
        let mut pos_pairs: Vec<(u32, u32)> = Vec::new();
        let mut neg_pairs: Vec<(u32, u32)> = Vec::new();
        for c in contribs {
            match *c {
                Contribution::Pass { node, negate } => {
                    if negate {
                        neg.push(node);
                    } else {
                        pos.push(node);
                    }
                }
                Contribution::Prod { adj, factor, negate } => {
                    // Multiplying by the seed constant 1 is a no-op.
                    let (a, f) = (adj, factor);
                    if a == one {
                        if negate {
                            neg.push(f);
                        } else {
                            pos.push(f);
                        }
                    } else if negate {
                        neg_pairs.push((a, f));
                    } else {
                        pos_pairs.push((a, f));
                    }
                }
            }
        }
        let combine_pairs = |pairs: &[(u32, u32)]| -> Option<u32> {
            match pairs.len() {
                0 => None,
                1 => {
                    let (a, f) = pairs[0];
                    let va = Var { tape: self, idx: a };
                    let vf = Var { tape: self, idx: f };
                    Some((va * vf).idx)
                }
                _ => {
                    let avs: Vec<Var> = pairs
                        .iter()
                        .map(|&(a, _)| Var { tape: self, idx: a })
                        .collect();
                    let fvs: Vec<Var> = pairs
                        .iter()
                        .map(|&(_, f)| Var { tape: self, idx: f })
                        .collect();
                    Some(self.dot(&avs, &fvs).idx)
                }
            }
        };
        if let Some(p) = combine_pairs(&pos_pairs) {
            pos.push(p);
        }
        if let Some(p) = combine_pairs(&neg_pairs) {
            neg.push(p);
        }
        let total = |ids: &[u32]| -> Option<u32> {
            match ids.len() {
                0 => None,
                1 => Some(ids[0]),
                _ => {
                    let vs: Vec<Var> = ids.iter().map(|&i| Var { tape: self, idx: i }).collect();
                    Some(self.sum(&vs).idx)
                }
            }
        };
        match (total(&pos), total(&neg)) {
            (Some(p), Some(n)) => {
                let vp = Var { tape: self, idx: p };
                let vn = Var { tape: self, idx: n };
                (vp - vn).idx
            }
            (Some(p), None) => p,
            (None, Some(n)) => {
                let vn = Var { tape: self, idx: n };
                (-vn).idx
            }
            (None, None) => self.constant(0.0).idx,
        }
    }

    /// Deposit this node's backward contributions into its parents'
    /// segments. `s.pbuf` holds the parent ids.
    fn emit_contributions(
        &self,
        kind: OpKind,
        id: u32,
        adj: u32,
        s: &mut GradScratch,
        one: u32,
    ) -> Result<(), AdError> {
        let vadj = Var { tape: self, idx: adj };
        let node = Var { tape: self, idx: id };
        let deposit = |s: &mut GradScratch, parent: u32, c: Contribution| {
            let d = s.dense[parent as usize] as usize;
            let cur = s.cursors[d] as usize;
            s.contribs[cur] = c;
            s.cursors[d] += 1;
        };
        match kind {
            OpKind::Leaf | OpKind::Constant => {}
            OpKind::Add => {
                let (a, b) = (s.pbuf[0], s.pbuf[1]);
                deposit(s, a, Contribution::Pass { node: adj, negate: false });
                deposit(s, b, Contribution::Pass { node: adj, negate: false });
            }
            OpKind::Sub => {
                let (a, b) = (s.pbuf[0], s.pbuf[1]);
                deposit(s, a, Contribution::Pass { node: adj, negate: false });
                deposit(s, b, Contribution::Pass { node: adj, negate: true });
            }
            OpKind::Neg => {
                let a = s.pbuf[0];
                deposit(s, a, Contribution::Pass { node: adj, negate: true });
            }
            OpKind::Mul => {
                let (a, b) = (s.pbuf[0], s.pbuf[1]);
                deposit(s, a, Contribution::Prod { adj, factor: b, negate: false });
                deposit(s, b, Contribution::Prod { adj, factor: a, negate: false });
            }
            OpKind::Div => {
                let (a, b) = (s.pbuf[0], s.pbuf[1]);
                let vb = Var { tape: self, idx: b };
                let inv_b = self.push(OpKind::Div, 1.0 / vb.value(), &[one, b]);
                let z_over_b = self.push(OpKind::Div, node.value() / vb.value(), &[id, b]);
                deposit(s, a, Contribution::Prod { adj, factor: inv_b.idx, negate: false });
                deposit(s, b, Contribution::Prod { adj, factor: z_over_b.idx, negate: true });
            }
            OpKind::Tanh => {
                let a = s.pbuf[0];
                let sq = node * node;
                let one_v = Var { tape: self, idx: one };
                let sech2 = one_v - sq;
                deposit(s, a, Contribution::Prod { adj, factor: sech2.idx, negate: false });
            }
            OpKind::Exp => {
                let a = s.pbuf[0];
                deposit(s, a, Contribution::Prod { adj, factor: id, negate: false });
            }
            OpKind::Ln => {
                let a = s.pbuf[0];
                let va = Var { tape: self, idx: a };
                let inv = self.push(OpKind::Div, 1.0 / va.value(), &[one, a]);
                deposit(s, a, Contribution::Prod { adj, factor: inv.idx, negate: false });
            }
            OpKind::Sin => {
                let a = s.pbuf[0];
                let va = Var { tape: self, idx: a };
                let c = self.push(OpKind::Cos, va.value().cos(), &[a]);
                deposit(s, a, Contribution::Prod { adj, factor: c.idx, negate: false });
            }
            OpKind::Cos => {
                let a = s.pbuf[0];
                let va = Var { tape: self, idx: a };
                let sn = self.push(OpKind::Sin, va.value().sin(), &[a]);
                deposit(s, a, Contribution::Prod { adj, factor: sn.idx, negate: true });
            }
            OpKind::Powi(k) => {
                if k != 0 {
                    let a = s.pbuf[0];
                    let va = Var { tape: self, idx: a };
                    let pw = self.push(OpKind::Powi(k - 1), va.value().powi(k - 1), &[a]);
                    let coeff = self.constant(f64::from(k));
                    let factor = coeff * pw;
                    deposit(s, a, Contribution::Prod { adj, factor: factor.idx, negate: false });
                }
            }
            OpKind::Powf(e) => {
                let a = s.pbuf[0];
                let va = Var { tape: self, idx: a };
                let pw = self.push(OpKind::Powf(e - 1.0), va.value().powf(e - 1.0), &[a]);
                let coeff = self.constant(e);
                let factor = coeff * pw;
                deposit(s, a, Contribution::Prod { adj, factor: factor.idx, negate: false });
            }
            OpKind::Sum => {
                for i in 0..s.pbuf.len() {
                    let p = s.pbuf[i];
                    deposit(s, p, Contribution::Pass { node: adj, negate: false });
                }
            }
            OpKind::Dot => {
                let h = s.pbuf.len() / 2;
                for k in 0..h {
                    let (x, y) = (s.pbuf[k], s.pbuf[h + k]);
                    deposit(s, x, Contribution::Prod { adj: vadj.idx, factor: y, negate: false });
                    deposit(s, y, Contribution::Prod { adj: vadj.idx, factor: x, negate: false });
                }
            }
        }
        Ok(())
    }
}

/// Result of a value-only backward sweep.
pub struct Adjoints {
    tape: usize,
    vals: Vec<f64>,
}

impl Adjoints {
    /// Adjoint (derivative of the swept output) with respect to `x`.
    /// Zero for nodes recorded after the output or unrelated to it.
    pub fn wrt(&self, x: Var<'_>) -> f64 {
        assert_eq!(
            x.tape as *const Tape as usize, self.tape,
            "Var used with adjoints of a different tape"
        );
        self.vals.get(x.idx as usize).copied().unwrap_or(0.0)
    }
}

impl<'t> Var<'t> {
    pub fn value(self) -> f64 {
        self.tape.inner.borrow().vals[self.idx as usize]
    }

    pub fn tanh(self) -> Var<'t> {
        self.tape
            .push(OpKind::Tanh, self.value().tanh(), &[self.idx])
    }

    pub fn exp(self) -> Var<'t> {
        self.tape.push(OpKind::Exp, self.value().exp(), &[self.idx])
    }

    pub fn ln(self) -> Result<Var<'t>, AdError> {
        let v = self.value();
        if v <= 0.0 {
            return Err(AdError::LogDomain(v));
        }
        Ok(self.tape.push(OpKind::Ln, v.ln(), &[self.idx]))
    }

    pub fn sin(self) -> Var<'t> {
        self.tape.push(OpKind::Sin, self.value().sin(), &[self.idx])
    }

    pub fn cos(self) -> Var<'t> {
        self.tape.push(OpKind::Cos, self.value().cos(), &[self.idx])
    }

    pub fn powi(self, k: i32) -> Result<Var<'t>, AdError> {
        let v = self.value();
        if k < 0 && v == 0.0 {
            return Err(AdError::DivisionByZero);
        }
        Ok(self.tape.push(OpKind::Powi(k), v.powi(k), &[self.idx]))
    }

    pub fn powf(self, e: f64) -> Result<Var<'t>, AdError> {
        let v = self.value();
        if v <= 0.0 {
            return Err(AdError::PowDomain(v));
        }
        Ok(self.tape.push(OpKind::Powf(e), v.powf(e), &[self.idx]))
    }

    pub fn div(self, rhs: Var<'t>) -> Result<Var<'t>, AdError> {
        self.tape.check(rhs);
        let d = rhs.value();
        if d == 0.0 {
            return Err(AdError::DivisionByZero);
        }
        Ok(self
            .tape
            .push(OpKind::Div, self.value() / d, &[self.idx, rhs.idx]))
    }

    /// Squared value; shorthand for `self * self`.
    pub fn square(self) -> Var<'t> {
        self * self
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.check(rhs);
        self.tape.push(
            OpKind::Add,
            self.value() + rhs.value(),
            &[self.idx, rhs.idx],
        )
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.check(rhs);
        self.tape.push(
            OpKind::Sub,
            self.value() - rhs.value(),
            &[self.idx, rhs.idx],
        )
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.check(rhs);
        self.tape.push(
            OpKind::Mul,
            self.value() * rhs.value(),
            &[self.idx, rhs.idx],
        )
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.tape.push(OpKind::Neg, -self.value(), &[self.idx])
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self + self.tape.constant(rhs)
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        rhs.tape.constant(self) + rhs
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self - self.tape.constant(rhs)
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        rhs.tape.constant(self) - rhs
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self * self.tape.constant(rhs)
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs.tape.constant(self) * rhs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad1(tape: &Tape, f: Var<'_>, x: Var<'_>) -> f64 {
        tape.gradient(f, &[x]).unwrap()[0].value()
    }

    #[test]
    fn tanh_gradient_at_zero_is_one() {
        let tape = Tape::new();
        let x = tape.leaf(0.0);
        let f = x.tanh();
        assert_eq!(grad1(&tape, f, x), 1.0);
    }

    #[test]
    fn square_first_and_second_order() {
        let tape = Tape::new();
        let x = tape.leaf(3.0);
        let f = x * x;
        let g = tape.gradient(f, &[x]).unwrap()[0];
        assert_eq!(g.value(), 6.0);
        let gg = tape.gradient(g, &[x]).unwrap()[0];
        assert_eq!(gg.value(), 2.0);
    }

    #[test]
    fn third_order_also_works() {
        let tape = Tape::new();
        let x = tape.leaf(1.5);
        let f = x * x * x;
        let g1 = tape.gradient(f, &[x]).unwrap()[0];
        let g2 = tape.gradient(g1, &[x]).unwrap()[0];
        let g3 = tape.gradient(g2, &[x]).unwrap()[0];
        assert!((g1.value() - 3.0 * 1.5 * 1.5).abs() < 1e-14);
        assert!((g2.value() - 6.0 * 1.5).abs() < 1e-14);
        assert!((g3.value() - 6.0).abs() < 1e-14);
    }

    #[test]
    fn backward_values_matches_graph_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(0.7);
        let y = tape.leaf(-1.2);
        let f = (x * y).tanh() + x.exp() * 0.5 - y * y;
        let g = tape.gradient(f, &[x, y]).unwrap();
        let adj = tape.backward_values(f).unwrap();
        assert!((g[0].value() - adj.wrt(x)).abs() < 1e-15);
        assert!((g[1].value() - adj.wrt(y)).abs() < 1e-15);
    }

    /// Central finite differences of a closure, step 1e-5.
    fn fd<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], i: usize) -> f64 {
        let h = 1e-5;
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += h;
        xm[i] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1.0)
    }

    #[test]
    fn random_polynomial_matches_finite_differences() {
        // Fixed LCG so the probe set is reproducible.
        let mut state = 0x9E3779B97F4A7C15u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
        };
        for _ in 0..20 {
            let p: Vec<f64> = (0..6).map(|_| next()).collect();
            let xv: Vec<f64> = (0..3).map(|_| next()).collect();
            let poly = |x: &[f64]| -> f64 {
                p[0] * x[0] * x[0] * x[1] + p[1] * x[1] * x[2] + p[2] * x[2] * x[2] * x[2]
                    + p[3] * x[0] * x[1] * x[2]
                    + p[4] * x[0]
                    + p[5]
            };
            let tape = Tape::new();
            let xs: Vec<Var> = xv.iter().map(|&v| tape.leaf(v)).collect();
            let c: Vec<Var> = p.iter().map(|&v| tape.constant(v)).collect();
            let f = c[0] * xs[0] * xs[0] * xs[1] + c[1] * xs[1] * xs[2]
                + c[2] * xs[2] * xs[2] * xs[2]
                + c[3] * xs[0] * xs[1] * xs[2]
                + c[4] * xs[0]
                + c[5];
            let g = tape.gradient(f, &xs).unwrap();
            for i in 0..3 {
                let expect = fd(&poly, &xv, i);
                assert!(
                    rel_err(g[i].value(), expect) < 1e-6,
                    "component {i}: got {}, finite differences {expect}",
                    g[i].value()
                );
            }
        }
    }

    #[test]
    fn all_primitives_match_finite_differences() {
        let points = [-1.7, -0.6, 0.3, 0.9, 1.8];
        type Case = (
            fn(Var<'_>) -> Var<'_>,
            fn(f64) -> f64,
            fn(f64) -> bool,
        );
        let cases: [Case; 6] = [
            (|x| x.tanh(), |x| x.tanh(), |_| true),
            (|x| x.exp(), |x| x.exp(), |_| true),
            (|x| x.ln().unwrap(), |x| x.ln(), |x| x > 0.0),
            (|x| x.sin(), |x| x.sin(), |_| true),
            (|x| x.cos(), |x| x.cos(), |_| true),
            (|x| x.powi(3).unwrap(), |x| x.powi(3), |_| true),
        ];
        for (rec, num, dom) in cases {
            for &p in &points {
                if !dom(p) {
                    continue;
                }
                let tape = Tape::new();
                let x = tape.leaf(p);
                let f = rec(x);
                let g = grad1(&tape, f, x);
                let h = 1e-5;
                let expect = (num(p + h) - num(p - h)) / (2.0 * h);
                assert!(rel_err(g, expect) < 1e-6, "primitive at {p}: {g} vs {expect}");
            }
        }
    }

    #[test]
    fn second_order_composite_matches_fd_of_first_derivative() {
        fn build<'t>(x: Var<'t>) -> Var<'t> {
            let cube = x * x * x;
            let denom = x * x + 2.0;
            (x.tanh() * x.exp() + cube.div(denom).unwrap()).sin()
        }
        for &p in &[-1.3, -0.4, 0.2, 0.8, 1.6] {
            let tape = Tape::new();
            let x = tape.leaf(p);
            let f = build(x);
            let g1 = tape.gradient(f, &[x]).unwrap()[0];
            let g2 = tape.gradient(g1, &[x]).unwrap()[0].value();
            // Finite differences of the tape's own first derivative.
            let h = 1e-5;
            let d1 = |v: f64| {
                let t = Tape::new();
                let x = t.leaf(v);
                let f = build(x);
                t.gradient(f, &[x]).unwrap()[0].value()
            };
            let expect = (d1(p + h) - d1(p - h)) / (2.0 * h);
            assert!(
                (g2 - expect).abs() / expect.abs().max(1.0) < 1e-4,
                "second derivative at {p}: {g2} vs {expect}"
            );
        }
    }

    #[test]
    fn gradient_is_linear_in_the_function() {
        let tape = Tape::new();
        let x = tape.leaf(0.37);
        let y = tape.leaf(-0.81);
        let f = (x * y).tanh() + x * x;
        let g = x.exp() - y * x;
        let (a, b) = (2.5, -1.25);
        let combo = a * f + b * g;
        let gc = tape.gradient(combo, &[x, y]).unwrap();
        let gf = tape.gradient(f, &[x, y]).unwrap();
        let gg = tape.gradient(g, &[x, y]).unwrap();
        for i in 0..2 {
            let lin = a * gf[i].value() + b * gg[i].value();
            assert!((gc[i].value() - lin).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_of_identity_and_rotation() {
        let tape = Tape::new();
        let x = tape.leaf(0.3);
        let y = tape.leaf(-1.1);
        let jac = tape.jacobian(&[x, y], &[x, y]).unwrap();
        let expect = [[1.0, 0.0], [0.0, 1.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(jac[i][j].value(), expect[i][j]);
            }
        }
        let f0 = y * 1.0;
        let f1 = -x;
        let jac = tape.jacobian(&[f0, f1], &[x, y]).unwrap();
        let expect = [[0.0, 1.0], [-1.0, 0.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(jac[i][j].value(), expect[i][j]);
            }
        }
    }

    #[test]
    fn sum_and_dot_gradients() {
        let tape = Tape::new();
        let xs: Vec<Var> = [1.0, 2.0, 3.0].iter().map(|&v| tape.leaf(v)).collect();
        let ys: Vec<Var> = [-1.0, 0.5, 2.0].iter().map(|&v| tape.leaf(v)).collect();
        let s = tape.sum(&xs);
        assert_eq!(s.value(), 6.0);
        let g = tape.gradient(s, &xs).unwrap();
        assert!(g.iter().all(|v| v.value() == 1.0));
        let d = tape.dot(&xs, &ys);
        assert_eq!(d.value(), -1.0 + 1.0 + 6.0);
        let g = tape.gradient(d, &xs).unwrap();
        for (gi, yi) in g.iter().zip(&ys) {
            assert_eq!(gi.value(), yi.value());
        }
    }

    #[test]
    fn domain_errors_are_loud() {
        let tape = Tape::new();
        let x = tape.leaf(-2.0);
        let z = tape.leaf(0.0);
        assert_eq!(x.ln().unwrap_err(), AdError::LogDomain(-2.0));
        let y = tape.leaf(1.0);
        assert_eq!(y.div(z).unwrap_err(), AdError::DivisionByZero);
        assert_eq!(x.powf(0.5).unwrap_err(), AdError::PowDomain(-2.0));
    }

    #[test]
    fn cross_tape_gradient_is_unknown_leaf() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let x = t1.leaf(1.0);
        let w = t2.leaf(2.0);
        let f = x * x;
        assert_eq!(t1.gradient(f, &[w]).unwrap_err(), AdError::UnknownLeaf);
    }

    #[test]
    fn gradient_wrt_unrelated_leaf_is_zero() {
        let tape = Tape::new();
        let x = tape.leaf(1.0);
        let y = tape.leaf(5.0);
        let f = x.tanh();
        let g = tape.gradient(f, &[y]).unwrap();
        assert_eq!(g[0].value(), 0.0);
    }

    #[test]
    fn replay_reproduces_values_bit_for_bit() {
        let tape = Tape::new();
        let x = tape.leaf(0.123456789);
        let y = tape.leaf(-2.5);
        let f = (x.exp() * y.tanh() - x.div(y).unwrap()).sin() + x.powf(1.7).unwrap();
        let _ = tape.gradient(f, &[x, y]).unwrap();
        assert!(tape.replay_identical());
    }

    #[test]
    fn independent_tapes_run_in_parallel() {
        let results: Vec<f64> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..4)
                .map(|i| {
                    scope.spawn(move || {
                        let tape = Tape::new();
                        let x = tape.leaf(0.1 * (i as f64 + 1.0));
                        let f = (x * x).tanh();
                        tape.gradient(f, &[x]).unwrap()[0].value()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for (i, r) in results.iter().enumerate() {
            let x = 0.1 * (i as f64 + 1.0);
            let expect = {
                let t = x * x;
                (1.0 - t.tanh().powi(2)) * 2.0 * x
            };
            assert!((r - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn clear_keeps_tape_reusable() {
        let mut tape = Tape::new();
        {
            let x = tape.leaf(1.0);
            let _ = x.tanh();
        }
        assert_eq!(tape.len(), 2);
        tape.clear();
        assert_eq!(tape.len(), 0);
        let x = tape.leaf(2.0);
        assert_eq!(x.value(), 2.0);
    }
}
