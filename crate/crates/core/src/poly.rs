//! Polynomial vector fields with rational coefficients.
//!
//! A field is stored as a shared straight-line program (hash-consed
//! expression nodes) so that evaluation cost tracks the construction rather
//! than the expanded monomial count. `terms` expands to sparse monomials for
//! serialization and coefficient majorants.

use std::collections::{BTreeMap, HashMap};

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde_json::{json, Value};

use crate::arith::Arith;
use crate::error::{Error, Result};
use crate::num::{fmt_q, parse_q, qi, Q};
use crate::trace::Roles;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Node {
    Const(Q),
    Var(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Pow(usize, u32),
}

/// Sorted `(variable, exponent)` pairs.
pub type Monomial = Vec<(usize, u32)>;
pub type Poly = BTreeMap<Monomial, Q>;

/// Expansion refuses to produce more monomials than this per node.
pub const MAX_EXPANDED_TERMS: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct PolyField {
    pub dim: usize,
    nodes: Vec<Node>,
    roots: Vec<usize>,
    pub roles: Roles,
}

#[derive(Debug, Default)]
pub struct FieldBuilder {
    nodes: Vec<Node>,
    memo: HashMap<Node, usize>,
}

/// Handle to a node under construction.
pub type Expr = usize;

impl FieldBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn intern(&mut self, n: Node) -> Expr {
        if let Some(&i) = self.memo.get(&n) {
            return i;
        }
        self.nodes.push(n.clone());
        self.memo.insert(n, self.nodes.len() - 1);
        self.nodes.len() - 1
    }

    fn as_const(&self, e: Expr) -> Option<&Q> {
        match &self.nodes[e] {
            Node::Const(q) => Some(q),
            _ => None,
        }
    }

    pub fn c(&mut self, q: Q) -> Expr {
        self.intern(Node::Const(q))
    }

    pub fn int(&mut self, n: i64) -> Expr {
        self.c(qi(n))
    }

    pub fn var(&mut self, i: usize) -> Expr {
        self.intern(Node::Var(i))
    }

    pub fn add(&mut self, a: Expr, b: Expr) -> Expr {
        match (self.as_const(a).cloned(), self.as_const(b).cloned()) {
            (Some(x), Some(y)) => self.c(x + y),
            (Some(x), None) if x.is_zero() => b,
            (None, Some(y)) if y.is_zero() => a,
            _ => self.intern(Node::Add(a.min(b), a.max(b))),
        }
    }

    pub fn sub(&mut self, a: Expr, b: Expr) -> Expr {
        match (self.as_const(a).cloned(), self.as_const(b).cloned()) {
            (Some(x), Some(y)) => self.c(x - y),
            (None, Some(y)) if y.is_zero() => a,
            _ if a == b => self.int(0),
            _ => self.intern(Node::Sub(a, b)),
        }
    }

    pub fn mul(&mut self, a: Expr, b: Expr) -> Expr {
        match (self.as_const(a).cloned(), self.as_const(b).cloned()) {
            (Some(x), Some(y)) => self.c(x * y),
            (Some(x), _) if x.is_zero() => a,
            (_, Some(y)) if y.is_zero() => b,
            (Some(x), _) if x.is_one() => b,
            (_, Some(y)) if y.is_one() => a,
            _ => self.intern(Node::Mul(a.min(b), a.max(b))),
        }
    }

    pub fn scale(&mut self, q: Q, a: Expr) -> Expr {
        let c = self.c(q);
        self.mul(c, a)
    }

    pub fn pow(&mut self, a: Expr, k: u32) -> Expr {
        match (k, self.as_const(a).cloned()) {
            (0, _) => self.int(1),
            (1, _) => a,
            (_, Some(x)) => self.c(num_traits::pow(x, k as usize)),
            _ => self.intern(Node::Pow(a, k)),
        }
    }

    pub fn sum(&mut self, items: impl IntoIterator<Item = Expr>) -> Expr {
        let zero = self.int(0);
        items.into_iter().fold(zero, |acc, e| self.add(acc, e))
    }

    pub fn prod(&mut self, items: impl IntoIterator<Item = Expr>) -> Expr {
        let one = self.int(1);
        items.into_iter().fold(one, |acc, e| self.mul(acc, e))
    }

    pub fn finish(self, dim: usize, roots: Vec<Expr>, roles: Roles) -> Result<PolyField> {
        if roots.len() != dim {
            return Err(Error::Dimension(format!("{} component polynomials for dimension {dim}", roots.len())));
        }
        if self.nodes.iter().any(|n| matches!(n, Node::Var(i) if *i >= dim)) {
            return Err(Error::Dimension("variable index past the field dimension".into()));
        }
        Ok(PolyField { dim, nodes: self.nodes, roots, roles })
    }
}

fn poly_mul(a: &Poly, b: &Poly) -> Result<Poly> {
    let mut out = Poly::new();
    for (ma, ca) in a {
        for (mb, cb) in b {
            let mut m: BTreeMap<usize, u32> = ma.iter().copied().collect();
            for &(v, e) in mb {
                *m.entry(v).or_insert(0) += e;
            }
            let key: Monomial = m.into_iter().collect();
            let entry = out.entry(key).or_insert_with(Q::zero);
            *entry += ca * cb;
        }
        if out.len() > MAX_EXPANDED_TERMS {
            return Err(Error::Invalid("polynomial expansion exceeds the term limit".into()));
        }
    }
    out.retain(|_, c| !c.is_zero());
    Ok(out)
}

fn poly_add(a: &Poly, b: &Poly, sign: i64) -> Poly {
    let mut out = a.clone();
    for (m, c) in b {
        let entry = out.entry(m.clone()).or_insert_with(Q::zero);
        *entry += c * qi(sign);
    }
    out.retain(|_, c| !c.is_zero());
    out
}

pub fn monomial_degree(m: &Monomial) -> u32 {
    m.iter().map(|(_, e)| e).sum()
}

/// Reusable evaluation buffers for one arithmetic.
pub struct Evaluator<'a, A: Arith> {
    field: &'a PolyField,
    ar: &'a A,
    consts: Vec<Option<A::T>>,
    buf: Vec<A::T>,
}

impl<'a, A: Arith> Evaluator<'a, A> {
    pub fn new(field: &'a PolyField, ar: &'a A) -> Self {
        let zero = ar.constant(&Q::zero());
        let consts = field
            .nodes
            .iter()
            .map(|n| match n {
                Node::Const(q) => Some(ar.constant(q)),
                _ => None,
            })
            .collect();
        Evaluator { field, ar, consts, buf: vec![zero; field.nodes.len()] }
    }

    pub fn eval_into(&mut self, y: &[A::T], out: &mut Vec<A::T>) {
        let ar = self.ar;
        for (i, n) in self.field.nodes.iter().enumerate() {
            let v = match n {
                Node::Const(_) => self.consts[i].clone().expect("constant cached"),
                Node::Var(k) => y[*k].clone(),
                Node::Add(a, b) => ar.add(&self.buf[*a], &self.buf[*b]),
                Node::Sub(a, b) => ar.sub(&self.buf[*a], &self.buf[*b]),
                Node::Mul(a, b) => ar.mul(&self.buf[*a], &self.buf[*b]),
                Node::Pow(a, k) => {
                    let base = self.buf[*a].clone();
                    let mut acc = base.clone();
                    for _ in 1..*k {
                        acc = ar.mul(&acc, &base);
                    }
                    acc
                }
            };
            self.buf[i] = v;
        }
        out.clear();
        out.extend(self.field.roots.iter().map(|&r| self.buf[r].clone()));
    }

    pub fn eval(&mut self, y: &[A::T]) -> Vec<A::T> {
        let mut out = Vec::with_capacity(self.field.dim);
        self.eval_into(y, &mut out);
        out
    }
}

impl PolyField {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn degree(&self) -> u32 {
        let mut deg = vec![0u32; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            deg[i] = match n {
                Node::Const(_) => 0,
                Node::Var(_) => 1,
                Node::Add(a, b) | Node::Sub(a, b) => deg[*a].max(deg[*b]),
                Node::Mul(a, b) => deg[*a] + deg[*b],
                Node::Pow(a, k) => deg[*a] * k,
            };
        }
        self.roots.iter().map(|&r| deg[r]).max().unwrap_or(0)
    }

    /// Exact evaluation.
    pub fn eval_q(&self, y: &[Q]) -> Vec<Q> {
        Evaluator::new(self, &crate::arith::Exact).eval(y)
    }

    /// Sparse monomial expansion of every component.
    pub fn terms(&self) -> Result<Vec<Poly>> {
        let mut memo: Vec<Option<Poly>> = vec![None; self.nodes.len()];
        // only nodes reachable from a root are expanded
        let mut needed = vec![false; self.nodes.len()];
        for &r in &self.roots {
            needed[r] = true;
        }
        for i in (0..self.nodes.len()).rev() {
            if !needed[i] {
                continue;
            }
            match &self.nodes[i] {
                Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) => {
                    needed[*a] = true;
                    needed[*b] = true;
                }
                Node::Pow(a, _) => needed[*a] = true,
                _ => {}
            }
        }
        for i in 0..self.nodes.len() {
            if !needed[i] {
                continue;
            }
            let p = match &self.nodes[i] {
                Node::Const(q) => {
                    let mut p = Poly::new();
                    if !q.is_zero() {
                        p.insert(vec![], q.clone());
                    }
                    p
                }
                Node::Var(k) => Poly::from([(vec![(*k, 1)], Q::one())]),
                Node::Add(a, b) => {
                    poly_add(memo[*a].as_ref().expect("expanded"), memo[*b].as_ref().expect("expanded"), 1)
                }
                Node::Sub(a, b) => {
                    poly_add(memo[*a].as_ref().expect("expanded"), memo[*b].as_ref().expect("expanded"), -1)
                }
                Node::Mul(a, b) => {
                    poly_mul(memo[*a].as_ref().expect("expanded"), memo[*b].as_ref().expect("expanded"))?
                }
                Node::Pow(a, k) => {
                    let base = memo[*a].as_ref().expect("expanded");
                    let mut acc = base.clone();
                    for _ in 1..*k {
                        acc = poly_mul(&acc, base)?;
                    }
                    acc
                }
            };
            memo[i] = Some(p);
        }
        Ok(self.roots.iter().map(|&r| memo[r].clone().expect("expanded")).collect())
    }

    pub fn from_terms(dim: usize, components: &[Poly], roles: Roles) -> Result<PolyField> {
        let mut b = FieldBuilder::new();
        let mut roots = Vec::with_capacity(components.len());
        for comp in components {
            let mut acc = b.int(0);
            for (mono, c) in comp {
                let mut t = b.c(c.clone());
                for &(v, e) in mono {
                    if v >= dim {
                        return Err(Error::Dimension(format!(
                            "monomial reads coordinate {v} of a {dim}-dimensional field"
                        )));
                    }
                    let x = b.var(v);
                    let p = b.pow(x, e);
                    t = b.mul(t, p);
                }
                acc = b.add(acc, t);
            }
            roots.push(acc);
        }
        b.finish(dim, roots, roles)
    }

    pub fn to_json(&self) -> Result<Value> {
        let terms = self.terms()?;
        let rows: Vec<Value> = terms
            .iter()
            .map(|p| {
                Value::Array(
                    p.iter()
                        .map(|(m, c)| {
                            let mut e = vec![0u32; self.dim];
                            for &(v, k) in m {
                                e[v] = k;
                            }
                            json!({"c": fmt_q(c), "e": e})
                        })
                        .collect(),
                )
            })
            .collect();
        Ok(json!({"M": self.dim, "degree": self.degree(), "terms": rows, "roles": self.roles}))
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let bad = |m: &str| Error::Invalid(format!("polynomial field: {m}"));
        let dim = v["M"].as_u64().ok_or_else(|| bad("missing M"))? as usize;
        let rows = v["terms"].as_array().ok_or_else(|| bad("missing terms"))?;
        let mut comps = Vec::with_capacity(rows.len());
        for row in rows {
            let mut p = Poly::new();
            for t in row.as_array().ok_or_else(|| bad("component is not a list"))? {
                let c = parse_q(t["c"].as_str().ok_or_else(|| bad("coefficient"))?)?;
                let e = t["e"].as_array().ok_or_else(|| bad("exponents"))?;
                if e.len() != dim {
                    return Err(Error::Dimension(format!("exponent vector of length {} for M = {dim}", e.len())));
                }
                let mut m = Monomial::new();
                for (k, x) in e.iter().enumerate() {
                    let x = x.as_u64().and_then(|x| x.to_u32()).ok_or_else(|| bad("exponent"))?;
                    if x > 0 {
                        m.push((k, x));
                    }
                }
                *p.entry(m).or_insert_with(Q::zero) += c;
            }
            p.retain(|_, c| !c.is_zero());
            comps.push(p);
        }
        let roles: Roles = serde_json::from_value(v["roles"].clone()).map_err(|e| bad(&e.to_string()))?;
        PolyField::from_terms(dim, &comps, roles)
    }
}

/// `Σ |c|·R^deg` and `Σ |c|·deg·R^{deg−1}` of one expanded component.
pub fn coefficient_majorants(p: &Poly, r: &Q) -> (Q, Q) {
    // integer numerators over one common denominator, grouped by degree
    let lcm = p.values().fold(BigInt::one(), |l, c| l.lcm(c.denom()));
    let mut by_degree: BTreeMap<u32, BigInt> = BTreeMap::new();
    for (m, c) in p {
        *by_degree.entry(monomial_degree(m)).or_default() += c.numer().abs() * (&lcm / c.denom());
    }
    let mut value = Q::zero();
    let mut slope = Q::zero();
    for (d, n) in by_degree {
        let n = Q::from_integer(n);
        value += &n * num_traits::pow(r.clone(), d as usize);
        if d > 0 {
            slope += &n * qi(i64::from(d)) * num_traits::pow(r.clone(), d as usize - 1);
        }
    }
    let lcm = Q::from_integer(lcm);
    (value / &lcm, slope / lcm)
}
