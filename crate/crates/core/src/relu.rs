//! Recurrent ReLU block: a fixed alternation of rational affine layers and
//! coordinatewise ReLU, iterated on the raw state. One iteration performs two
//! normal-form steps (phase A then phase B), so iteration `n` reproduces
//! normal-form step `2n` exactly.

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::normal_form::NormalForm;
use crate::num::{fmt_q, parse_q, qi, qz, Q};
use crate::trace::{Roles, Trace};

pub fn relu(t: &Q) -> Q {
    if t.is_positive() {
        t.clone()
    } else {
        Q::zero()
    }
}

/// `ReLU(t) − ReLU(t − 1)`: 0 below 0, 1 above 1, linear in between.
pub fn gate(u: &Q) -> Q {
    relu(u) - relu(&(u - Q::one()))
}

/// Rational affine map with sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RatAffine {
    pub cols: usize,
    pub rows: Vec<Vec<(usize, Q)>>,
    pub offset: Vec<Q>,
}

impl RatAffine {
    fn new(cols: usize) -> Self {
        RatAffine { cols, rows: Vec::new(), offset: Vec::new() }
    }

    fn push(&mut self, mut row: Vec<(usize, Q)>, offset: Q) -> usize {
        row.sort_by_key(|e| e.0);
        let mut merged: Vec<(usize, Q)> = Vec::with_capacity(row.len());
        for (c, v) in row {
            match merged.last_mut() {
                Some((lc, lv)) if *lc == c => *lv += v,
                _ => merged.push((c, v)),
            }
        }
        merged.retain(|(_, v)| !v.is_zero());
        self.rows.push(merged);
        self.offset.push(offset);
        self.rows.len() - 1
    }

    pub fn width(&self) -> usize {
        self.rows.len()
    }

    pub fn eval(&self, x: &[Q]) -> Vec<Q> {
        self.rows
            .iter()
            .zip(&self.offset)
            .map(|(row, off)| row.iter().fold(off.clone(), |acc, (c, v)| acc + &x[*c] * v))
            .collect()
    }

    /// `self ∘ inner`.
    fn compose(&self, inner: &RatAffine) -> RatAffine {
        let mut out = RatAffine::new(inner.cols);
        for (row, off) in self.rows.iter().zip(&self.offset) {
            let mut acc: Vec<(usize, Q)> = Vec::new();
            let mut o = off.clone();
            for (k, v) in row {
                o += v * &inner.offset[*k];
                acc.extend(inner.rows[*k].iter().map(|(c, w)| (*c, v * w)));
            }
            out.push(acc, o);
        }
        out
    }

    fn to_json(&self) -> Value {
        let matrix: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|row| {
                let mut dense = vec![String::from("0"); self.cols];
                for (c, v) in row {
                    dense[*c] = fmt_q(v);
                }
                dense
            })
            .collect();
        json!({"matrix": matrix, "offset": self.offset.iter().map(fmt_q).collect::<Vec<_>>()})
    }

    fn from_json(v: &Value) -> Result<Self> {
        let bad = || Error::Invalid("relu layer".into());
        let matrix = v["matrix"].as_array().ok_or_else(bad)?;
        let offset = v["offset"].as_array().ok_or_else(bad)?;
        let cols = matrix.first().and_then(Value::as_array).map_or(0, Vec::len);
        let mut a = RatAffine::new(cols);
        for (row, off) in matrix.iter().zip(offset) {
            let row = row.as_array().ok_or_else(bad)?;
            let entries = row
                .iter()
                .enumerate()
                .map(|(c, e)| Ok((c, parse_q(e.as_str().ok_or_else(bad)?)?)))
                .collect::<Result<Vec<_>>>()?;
            a.push(entries, parse_q(off.as_str().ok_or_else(bad)?)?);
        }
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReluBlock {
    pub m: usize,
    pub inputs: usize,
    /// `layers[0..L]` are followed by ReLU, the last one is not.
    pub layers: Vec<RatAffine>,
    pub layout: Roles,
    pub outputs: Vec<usize>,
}

impl ReluBlock {
    /// Number of ReLU layers.
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.m).chain(self.layers.iter().map(RatAffine::width)).collect()
    }

    pub fn apply(&self, y: &[Q]) -> Vec<Q> {
        let mut v = y.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            v = layer.eval(&v);
            if k + 1 < self.layers.len() {
                v.iter_mut().for_each(|t| *t = relu(t));
            }
        }
        v
    }

    pub fn to_json(&self) -> Value {
        json!({
            "m": self.m,
            "inputs": self.inputs,
            "depth": self.depth(),
            "widths": self.widths(),
            "layers": self.layers.iter().map(RatAffine::to_json).collect::<Vec<_>>(),
            "layout": self.layout,
            "outputs": self.outputs,
        })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let bad = |m: &str| Error::Invalid(format!("relu block: {m}"));
        let layers = v["layers"]
            .as_array()
            .ok_or_else(|| bad("missing layers"))?
            .iter()
            .map(RatAffine::from_json)
            .collect::<Result<Vec<_>>>()?;
        Ok(ReluBlock {
            m: v["m"].as_u64().ok_or_else(|| bad("missing m"))? as usize,
            inputs: v["inputs"].as_u64().ok_or_else(|| bad("missing inputs"))? as usize,
            layers,
            layout: serde_json::from_value(v["layout"].clone()).map_err(|e| bad(&e.to_string()))?,
            outputs: serde_json::from_value(v["outputs"].clone()).map_err(|e| bad(&e.to_string()))?,
        })
    }
}

/// Affine maps (ReLU between consecutive ones) computing one normal-form step.
fn phase_layers(nf: &NormalForm) -> Result<Vec<RatAffine>> {
    let m = nf.m;
    let s = nf.gated.len();
    let ctl = nf.control_mask();
    // bit products Θ(q_j)·y_k needed by addends that read control bits
    let mut products: Vec<(usize, usize)> = Vec::new();
    for (j, g) in nf.gated.iter().enumerate() {
        for r in 0..m {
            for (c, _) in &g.a.entries[r] {
                if !ctl[*c] {
                    return Err(Error::UnsupportedForm(format!(
                        "gate {j} multiplies coordinate {c}, which is not a control bit"
                    )));
                }
                products.push((j, *c));
            }
        }
    }
    products.sort_unstable();
    products.dedup();

    let z = |v: &BigInt| qz(v);
    let mut first = RatAffine::new(m);
    for c in 0..m {
        first.push(vec![(c, qi(1))], Q::zero());
        first.push(vec![(c, qi(-1))], Q::zero());
    }
    for g in &nf.gated {
        let row: Vec<(usize, Q)> = g.q.entries[0].iter().map(|(c, v)| (*c, z(v))).collect();
        first.push(row.clone(), z(&g.q.offset[0]));
        first.push(row, z(&g.q.offset[0]) - Q::one());
    }
    let pos = |c: usize| 2 * c;
    let neg = |c: usize| 2 * c + 1;
    let ga = |j: usize| 2 * m + 2 * j;
    let gb = |j: usize| 2 * m + 2 * j + 1;

    if products.is_empty() {
        let mut last = RatAffine::new(first.width());
        for r in 0..m {
            let mut row: Vec<(usize, Q)> = Vec::new();
            for (c, v) in &nf.base.entries[r] {
                row.push((pos(*c), z(v)));
                row.push((neg(*c), -z(v)));
            }
            for (j, g) in nf.gated.iter().enumerate() {
                let o = &g.a.offset[r];
                if !o.is_zero() {
                    row.push((ga(j), z(o)));
                    row.push((gb(j), -z(o)));
                }
            }
            last.push(row, z(&nf.base.offset[r]));
        }
        return Ok(vec![first, last]);
    }

    let mut mid = RatAffine::new(first.width());
    for c in 0..m {
        mid.push(vec![(pos(c), qi(1)), (neg(c), qi(-1))], Q::zero());
        mid.push(vec![(pos(c), qi(-1)), (neg(c), qi(1))], Q::zero());
    }
    for j in 0..s {
        mid.push(vec![(ga(j), qi(1)), (gb(j), qi(-1))], Q::zero());
    }
    for &(j, k) in &products {
        mid.push(vec![(ga(j), qi(1)), (gb(j), qi(-1)), (pos(k), qi(1)), (neg(k), qi(-1))], qi(-1));
    }
    let gate_at = |j: usize| 2 * m + j;
    let prod_at = |j: usize, k: usize| 2 * m + s + products.binary_search(&(j, k)).expect("product listed");
    let mut last = RatAffine::new(mid.width());
    for r in 0..m {
        let mut row: Vec<(usize, Q)> = Vec::new();
        for (c, v) in &nf.base.entries[r] {
            row.push((pos(*c), z(v)));
            row.push((neg(*c), -z(v)));
        }
        for (j, g) in nf.gated.iter().enumerate() {
            if !g.a.offset[r].is_zero() {
                row.push((gate_at(j), z(&g.a.offset[r])));
            }
            for (k, v) in &g.a.entries[r] {
                row.push((prod_at(j, *k), z(v)));
            }
        }
        last.push(row, z(&nf.base.offset[r]));
    }
    Ok(vec![first, mid, last])
}

/// Fuses two normal-form phases into one block.
pub fn compile_nf_to_relu(nf: &NormalForm) -> Result<ReluBlock> {
    nf.check_dims()?;
    let phase = phase_layers(nf)?;
    let mut layers: Vec<RatAffine> = phase[..phase.len() - 1].to_vec();
    layers.push(phase[0].compose(&phase[phase.len() - 1]));
    layers.extend(phase[1..].iter().cloned());
    Ok(ReluBlock { m: nf.m, inputs: nf.inputs, layers, layout: nf.layout.clone(), outputs: nf.outputs.clone() })
}

/// Iterates the block `t` times from `(x, 0, …, 0)`.
pub fn relu_run(block: &ReluBlock, x: &[BigInt], t: usize) -> Result<Trace> {
    if x.len() != block.inputs {
        return Err(Error::Arity(format!("block takes {} inputs, got {}", block.inputs, x.len())));
    }
    let mut y = vec![Q::zero(); block.m];
    for (i, v) in x.iter().enumerate() {
        y[i] = qz(v);
    }
    let halt = block.layout.get("halt").and_then(|h| h.first().copied());
    let mut trace = Trace::new(y, block.layout.clone());
    for n in 1..=t {
        let y = block.apply(trace.last());
        if trace.halted_at.is_none() && halt.is_some_and(|h| y[h].is_one()) {
            trace.halted_at = Some(n);
        }
        trace.states.push(y);
    }
    Ok(trace)
}

/// Runs until the halt bit is set, at most `cap` iterations.
pub fn relu_run_to_halt(block: &ReluBlock, x: &[BigInt], cap: usize) -> Result<Trace> {
    let halt = block
        .layout
        .get("halt")
        .and_then(|h| h.first().copied())
        .ok_or_else(|| Error::UnsupportedForm("block has no halt bit".into()))?;
    let mut trace = relu_run(block, x, 0)?;
    for n in 1..=cap {
        let y = block.apply(trace.last());
        let done = y[halt].is_one();
        trace.states.push(y);
        if done {
            trace.halted_at = Some(n);
            return Ok(trace);
        }
    }
    Err(Error::CapExceeded(cap))
}
