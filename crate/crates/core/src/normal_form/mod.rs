//! Threshold-affine normal form: `P(y) = A0(y) + Σ_j Θ(q_j(y))·A_j(y)` with
//! integer affine maps, its exact evaluator, and JSON (de)serialization.

mod compile;

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::num::{is_integer, qi, qr, qz, Q};
use crate::trace::{Roles, Trace};

pub use compile::{compile_to_nf, default_cap};

/// Integer affine map stored by sparse rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntAffine {
    pub rows: usize,
    pub cols: usize,
    /// `entries[r]` holds `(col, coeff)` pairs, sorted by column, no zeros.
    pub entries: Vec<Vec<(usize, BigInt)>>,
    pub offset: Vec<BigInt>,
}

impl IntAffine {
    pub fn zero(rows: usize, cols: usize) -> Self {
        IntAffine { rows, cols, entries: vec![Vec::new(); rows], offset: vec![BigInt::zero(); rows] }
    }

    pub fn identity(n: usize) -> Self {
        let mut a = Self::zero(n, n);
        for i in 0..n {
            a.set(i, i, 1);
        }
        a
    }

    pub fn set(&mut self, r: usize, c: usize, v: impl Into<BigInt>) {
        let v = v.into();
        let row = &mut self.entries[r];
        match row.binary_search_by_key(&c, |e| e.0) {
            Ok(k) if v.is_zero() => {
                row.remove(k);
            }
            Ok(k) => row[k].1 = v,
            Err(_) if v.is_zero() => {}
            Err(k) => row.insert(k, (c, v)),
        }
    }

    pub fn add_to(&mut self, r: usize, c: usize, v: impl Into<BigInt>) {
        let cur = self.get(r, c);
        self.set(r, c, cur + v.into());
    }

    pub fn get(&self, r: usize, c: usize) -> BigInt {
        let row = &self.entries[r];
        match row.binary_search_by_key(&c, |e| e.0) {
            Ok(k) => row[k].1.clone(),
            Err(_) => BigInt::zero(),
        }
    }

    pub fn eval_row(&self, r: usize, y: &[Q]) -> Q {
        let mut acc = qz(&self.offset[r]);
        for (c, v) in &self.entries[r] {
            acc += &y[*c] * qz(v);
        }
        acc
    }

    pub fn eval(&self, y: &[Q]) -> Vec<Q> {
        (0..self.rows).map(|r| self.eval_row(r, y)).collect()
    }

    pub fn is_constant(&self) -> bool {
        self.entries.iter().all(Vec::is_empty)
    }

    /// Rows with a nonzero offset or a nonzero linear part.
    pub fn support(&self) -> Vec<usize> {
        (0..self.rows).filter(|&r| !self.entries[r].is_empty() || !self.offset[r].is_zero()).collect()
    }

    /// Operator ∞-norm of the linear part.
    pub fn norm_inf(&self) -> BigInt {
        self.entries.iter().map(|row| row.iter().map(|(_, v)| v.abs()).sum::<BigInt>()).max().unwrap_or_default()
    }

    pub fn to_json(&self) -> Value {
        let matrix: Vec<Vec<String>> =
            (0..self.rows).map(|r| (0..self.cols).map(|c| self.get(r, c).to_string()).collect()).collect();
        json!({
            "matrix": matrix,
            "offset": self.offset.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
        })
    }

    pub fn from_json(v: &Value, cols: usize) -> Result<Self> {
        let bad = |m: &str| Error::Invalid(format!("affine map: {m}"));
        let matrix = v["matrix"].as_array().ok_or_else(|| bad("missing matrix"))?;
        let offset = v["offset"].as_array().ok_or_else(|| bad("missing offset"))?;
        if matrix.len() != offset.len() {
            return Err(bad("matrix and offset lengths differ"));
        }
        let mut a = IntAffine::zero(matrix.len(), cols);
        for (r, row) in matrix.iter().enumerate() {
            let row = row.as_array().ok_or_else(|| bad("row is not an array"))?;
            if row.len() != cols {
                return Err(bad("row width"));
            }
            for (c, e) in row.iter().enumerate() {
                a.set(r, c, parse_int(e)?);
            }
            a.offset[r] = parse_int(&offset[r])?;
        }
        Ok(a)
    }
}

fn parse_int(v: &Value) -> Result<BigInt> {
    match v {
        Value::String(s) => s.parse().map_err(|_| Error::Invalid(format!("not an integer: {s:?}"))),
        Value::Number(n) => n.as_i64().map(BigInt::from).ok_or_else(|| Error::Invalid(format!("not an integer: {n}"))),
        other => Err(Error::Invalid(format!("not an integer: {other}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gated {
    /// Gate argument `q_j`, a 1×m map.
    pub q: IntAffine,
    /// Addend `A_j`, an m×m map.
    pub a: IntAffine,
}

/// Roles used by the compiler. Control roles hold values in {0,1} on every
/// reachable state.
pub const CONTROL_ROLES: [&str; 4] = ["pc", "test", "phase", "halt"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalForm {
    pub m: usize,
    /// Input dimension d: the raw initial state is `(x, 0, …, 0)`.
    pub inputs: usize,
    pub base: IntAffine,
    pub gated: Vec<Gated>,
    pub layout: Roles,
    pub outputs: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaMode {
    /// 0 on u ≤ 0, 1 on u ≥ 1.
    Strict,
    /// 0 on u ≤ 1/4, 1 on u ≥ 3/4.
    UniformMargin,
}

fn theta_at(u: &Q, mode: ThetaMode, gate: usize) -> Result<u8> {
    let (lo, hi) = match mode {
        ThetaMode::Strict => (Q::zero(), Q::one()),
        ThetaMode::UniformMargin => (qr(1, 4), qr(3, 4)),
    };
    if *u <= lo {
        Ok(0)
    } else if *u >= hi {
        Ok(1)
    } else {
        Err(Error::AmbiguousGate { gate, value: u.to_string() })
    }
}

pub fn theta(u: &Q, mode: ThetaMode) -> Result<u8> {
    theta_at(u, mode, 0)
}

/// `1 − Θ(u) − Θ(−u)`: 1 exactly at u = 0 on the integers.
pub fn zero_gate(u: &Q, mode: ThetaMode) -> Result<u8> {
    let a = theta(u, mode)?;
    let b = theta(&-u.clone(), mode)?;
    Ok(1 - a - b)
}

/// How a gate argument can be realized by the smooth backends.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GateShape {
    /// Θ(Σ pos − Σ neg − (|pos| − 1)) over control bits: a conjunction of literals.
    Conjunction { pos: Vec<usize>, neg: Vec<usize> },
    /// Θ(a·y_r) with a ≥ 1 on a non-control coordinate: the register is nonzero.
    Positive { coord: usize },
}

impl NormalForm {
    pub fn role(&self, name: &str) -> &[usize] {
        self.layout.get(name).map_or(&[], Vec::as_slice)
    }

    /// Coordinates holding control bits.
    pub fn control_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.m];
        for r in CONTROL_ROLES {
            for &i in self.role(r) {
                mask[i] = true;
            }
        }
        mask
    }

    pub fn halt_coord(&self) -> Option<usize> {
        self.role("halt").first().copied()
    }

    pub fn initial_state(&self, x: &[BigInt]) -> Result<Vec<Q>> {
        if x.len() != self.inputs {
            return Err(Error::Arity(format!("normal form takes {} inputs, got {}", self.inputs, x.len())));
        }
        let mut y = vec![Q::zero(); self.m];
        for (i, v) in x.iter().enumerate() {
            y[i] = qz(v);
        }
        Ok(y)
    }

    pub fn gate_args(&self, y: &[Q]) -> Vec<Q> {
        self.gated.iter().map(|g| g.q.eval_row(0, y)).collect()
    }

    pub fn check_dims(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Dimension(m));
        if self.base.rows != self.m || self.base.cols != self.m {
            return bad("base map is not m×m".into());
        }
        for (j, g) in self.gated.iter().enumerate() {
            if g.q.rows != 1 || g.q.cols != self.m {
                return bad(format!("gate {j} argument is not 1×m"));
            }
            if g.a.rows != self.m || g.a.cols != self.m {
                return bad(format!("gate {j} addend is not m×m"));
            }
        }
        if self.inputs > self.m || self.outputs.iter().any(|&i| i >= self.m) {
            return bad("input or output index out of range".into());
        }
        for (role, idx) in &self.layout {
            if idx.iter().any(|&i| i >= self.m) {
                return bad(format!("role {role} indexes past m"));
            }
        }
        Ok(())
    }

    /// Classifies gate `j`, or reports why no smooth realization applies.
    pub fn gate_shape(&self, j: usize) -> Result<GateShape> {
        let g = &self.gated[j].q;
        let ctl = self.control_mask();
        let row = &g.entries[0];
        let off = &g.offset[0];
        if row.len() == 1 && !ctl[row[0].0] && row[0].1.is_positive() && off.is_zero() {
            return Ok(GateShape::Positive { coord: row[0].0 });
        }
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (c, v) in row {
            if !ctl[*c] {
                return Err(Error::UnsupportedForm(format!("gate {j} mixes a register into a Boolean test")));
            }
            if v.is_one() {
                pos.push(*c);
            } else if *v == -BigInt::one() {
                neg.push(*c);
            } else {
                return Err(Error::UnsupportedForm(format!("gate {j} has a non-unit coefficient")));
            }
        }
        if *off != BigInt::one() - BigInt::from(pos.len()) {
            return Err(Error::UnsupportedForm(format!("gate {j} is not a conjunction of literals")));
        }
        Ok(GateShape::Conjunction { pos, neg })
    }

    /// Checks the translation-gated discipline used by the coded and smooth
    /// backends: data rows of the base map are translations, data rows of
    /// addends are constants, and control rows read control bits only.
    pub fn check_translation_gated(&self) -> Result<()> {
        let ctl = self.control_mask();
        for r in 0..self.m {
            let row = &self.base.entries[r];
            if ctl[r] {
                if row.iter().any(|(c, _)| !ctl[*c]) {
                    return Err(Error::UnsupportedForm(format!("base row {r} reads a register into a control bit")));
                }
            } else if !(row.len() == 1 && row[0].0 == r && row[0].1.is_one()) {
                return Err(Error::UnsupportedForm(format!("base row {r} is not a translation")));
            }
        }
        for (j, g) in self.gated.iter().enumerate() {
            for r in 0..self.m {
                let row = &g.a.entries[r];
                if row.is_empty() {
                    continue;
                }
                if !ctl[r] || row.iter().any(|(c, _)| !ctl[*c]) {
                    return Err(Error::UnsupportedForm(format!("gate {j} scales an unbounded value in row {r}")));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        json!({
            "m": self.m,
            "inputs": self.inputs,
            "phase_period": 2,
            "base": self.base.to_json(),
            "gated": self.gated.iter().map(|g| json!({"q": g.q.to_json(), "A": g.a.to_json()})).collect::<Vec<_>>(),
            "layout": self.layout,
            "outputs": self.outputs,
        })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let bad = |m: &str| Error::Invalid(format!("normal form: {m}"));
        let m = v["m"].as_u64().ok_or_else(|| bad("missing m"))? as usize;
        let inputs = v["inputs"].as_u64().ok_or_else(|| bad("missing inputs"))? as usize;
        let base = IntAffine::from_json(&v["base"], m)?;
        let gated = v["gated"]
            .as_array()
            .ok_or_else(|| bad("missing gated"))?
            .iter()
            .map(|g| Ok(Gated { q: IntAffine::from_json(&g["q"], m)?, a: IntAffine::from_json(&g["A"], m)? }))
            .collect::<Result<Vec<_>>>()?;
        let layout: Roles = serde_json::from_value(v["layout"].clone()).map_err(|e| bad(&e.to_string()))?;
        let outputs: Vec<usize> = serde_json::from_value(v["outputs"].clone()).map_err(|e| bad(&e.to_string()))?;
        let nf = NormalForm { m, inputs, base, gated, layout, outputs };
        nf.check_dims()?;
        Ok(nf)
    }
}

/// One application of `P`.
pub fn nf_step(nf: &NormalForm, y: &[Q], mode: ThetaMode) -> Result<Vec<Q>> {
    if y.len() != nf.m {
        return Err(Error::Dimension(format!("state has {} coordinates, expected {}", y.len(), nf.m)));
    }
    let mut out = nf.base.eval(y);
    for (j, g) in nf.gated.iter().enumerate() {
        let u = g.q.eval_row(0, y);
        if theta_at(&u, mode, j)? == 1 {
            for r in g.a.support() {
                out[r] += g.a.eval_row(r, y);
            }
        }
    }
    Ok(out)
}

fn halted(nf: &NormalForm, y: &[Q]) -> bool {
    nf.halt_coord().is_some_and(|h| y[h] == qi(1))
}

/// Runs from the raw initial state until the halt bit is set.
pub fn nf_run(nf: &NormalForm, x: &[BigInt], max_steps: usize, mode: ThetaMode) -> Result<Trace> {
    let mut y = nf.initial_state(x)?;
    let mut trace = Trace::new(y.clone(), nf.layout.clone());
    if halted(nf, &y) {
        trace.halted_at = Some(0);
        return Ok(trace);
    }
    for n in 1..=max_steps {
        y = nf_step(nf, &y, mode)?;
        trace.states.push(y.clone());
        if halted(nf, &y) {
            trace.halted_at = Some(n);
            return Ok(trace);
        }
    }
    Err(Error::CapExceeded(max_steps))
}

/// Runs exactly `steps` steps, halted or not.
pub fn nf_run_for(nf: &NormalForm, x: &[BigInt], steps: usize, mode: ThetaMode) -> Result<Trace> {
    let mut y = nf.initial_state(x)?;
    let mut trace = Trace::new(y.clone(), nf.layout.clone());
    for n in 0..=steps {
        if trace.halted_at.is_none() && halted(nf, &y) {
            trace.halted_at = Some(n);
        }
        if n == steps {
            break;
        }
        y = nf_step(nf, &y, mode)?;
        trace.states.push(y.clone());
    }
    Ok(trace)
}

pub fn outputs_at(nf: &NormalForm, y: &[Q]) -> Vec<Q> {
    nf.outputs.iter().map(|&i| y[i].clone()).collect()
}

/// Largest absolute coordinate over a trace.
pub fn trace_bound(trace: &Trace) -> Q {
    crate::num::abs_max(trace.states.iter().flatten())
}

/// Every state integral and every gate argument integral.
pub fn lattice_report(nf: &NormalForm, trace: &Trace) -> std::result::Result<(), String> {
    for (n, y) in trace.states.iter().enumerate() {
        if let Some(i) = y.iter().position(|v| !is_integer(v)) {
            return Err(format!("state {n} coordinate {i} = {}", y[i]));
        }
        if let Some((j, u)) = nf.gate_args(y).iter().enumerate().find(|(_, u)| !is_integer(u)) {
            return Err(format!("state {n} gate {j} argument {u}"));
        }
    }
    Ok(())
}

/// The full one-hot PC vector, the implicit entry bit first.
pub fn pc_vector(nf: &NormalForm, y: &[Q]) -> Vec<Q> {
    let stored: Vec<Q> = nf.role("pc").iter().map(|&i| y[i].clone()).collect();
    let entry = qi(1) - stored.iter().fold(Q::zero(), |a, b| a + b);
    std::iter::once(entry).chain(stored).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theta_values() {
        assert_eq!(theta(&qi(0), ThetaMode::Strict).unwrap(), 0);
        assert_eq!(theta(&qi(3), ThetaMode::Strict).unwrap(), 1);
        assert!(matches!(theta(&qr(1, 2), ThetaMode::UniformMargin), Err(Error::AmbiguousGate { .. })));
        assert!(matches!(theta(&qr(1, 2), ThetaMode::Strict), Err(Error::AmbiguousGate { .. })));
        assert_eq!(theta(&qr(1, 4), ThetaMode::UniformMargin).unwrap(), 0);
        assert_eq!(theta(&qr(3, 4), ThetaMode::UniformMargin).unwrap(), 1);
    }

    #[test]
    fn zero_gate_values() {
        for mode in [ThetaMode::Strict, ThetaMode::UniformMargin] {
            assert_eq!(zero_gate(&qi(0), mode).unwrap(), 1);
            assert_eq!(zero_gate(&qi(5), mode).unwrap(), 0);
            assert_eq!(zero_gate(&qi(-2), mode).unwrap(), 0);
        }
    }

    #[test]
    fn no_gates_is_base_map() {
        let mut base = IntAffine::zero(2, 2);
        base.set(0, 1, 2);
        base.offset[1] = BigInt::from(-1);
        let nf = NormalForm { m: 2, inputs: 2, base, gated: vec![], layout: Roles::new(), outputs: vec![0] };
        assert_eq!(nf_step(&nf, &[qi(3), qi(4)], ThetaMode::Strict).unwrap(), vec![qi(8), qi(-1)]);
    }

    #[test]
    fn sparse_set_and_clear() {
        let mut a = IntAffine::zero(1, 3);
        a.set(0, 2, 5);
        a.set(0, 0, 1);
        assert_eq!(a.entries[0], vec![(0, BigInt::from(1)), (2, BigInt::from(5))]);
        a.add_to(0, 2, -5);
        assert_eq!(a.entries[0], vec![(0, BigInt::from(1))]);
    }
}
