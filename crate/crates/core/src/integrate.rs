//! Fixed-step integration of polynomial fields with dense samples.

use std::fmt::Write as _;

use num_traits::{Signed, Zero};

use crate::arith::{Arith, Dyadic, Exact, F64};
use crate::error::{Error, Result};
use crate::num::{qi, to_f64, Q};
use crate::poly::{Evaluator, PolyField};
use crate::trace::Roles;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Classical fourth-order Runge–Kutta.
    Rk4,
    /// Forward Euler.
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arithmetic {
    Float,
    /// Fixed point with the given number of fractional bits.
    Dyadic(u32),
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig {
    pub method: Method,
    pub step: Q,
    pub arithmetic: Arithmetic,
}

/// States at requested times, converted to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledTrace {
    pub times: Vec<Q>,
    pub states: Vec<Vec<f64>>,
    /// Cycle index for samples taken at cycle boundaries.
    pub cycles: Vec<Option<usize>>,
    pub roles: Roles,
    /// Largest |coordinate| over every grid state and sample.
    pub max_abs: f64,
}

impl SampledTrace {
    /// Long-format CSV: `time,coord,role,value,cycle` with `digits` decimals.
    pub fn to_csv(&self, digits: usize) -> String {
        let m = self.states.first().map_or(0, Vec::len);
        let mut names = vec![String::from("coord"); m];
        for (role, idx) in &self.roles {
            for (k, &i) in idx.iter().enumerate() {
                if i < m {
                    names[i] = format!("{role}[{k}]");
                }
            }
        }
        let mut s = String::from("time,coord,role,value,cycle\n");
        for ((t, st), c) in self.times.iter().zip(&self.states).zip(&self.cycles) {
            let cyc = c.map(|c| c.to_string()).unwrap_or_default();
            let t = to_f64(t);
            for (i, v) in st.iter().enumerate() {
                let _ = writeln!(s, "{t:.digits$},{i},{},{v:.digits$},{cyc}", names[i]);
            }
        }
        s
    }
}

struct Stepper<'a, A: Arith> {
    ar: &'a A,
    ev: Evaluator<'a, A>,
    method: Method,
    scratch: Vec<A::T>,
}

impl<'a, A: Arith> Stepper<'a, A> {
    fn axpy(&self, y: &[A::T], h: &A::T, k: &[A::T]) -> Vec<A::T> {
        y.iter().zip(k).map(|(a, b)| self.ar.add(a, &self.ar.mul(h, b))).collect()
    }

    fn step(&mut self, y: &[A::T], h: &A::T) -> Vec<A::T> {
        let ar = self.ar;
        match self.method {
            Method::Euler => {
                let mut k = std::mem::take(&mut self.scratch);
                self.ev.eval_into(y, &mut k);
                let out = self.axpy(y, h, &k);
                self.scratch = k;
                out
            }
            Method::Rk4 => {
                let half = ar.mul(h, &ar.constant(&Q::new(1.into(), 2.into())));
                let sixth = ar.mul(h, &ar.constant(&Q::new(1.into(), 6.into())));
                let two = ar.constant(&qi(2));
                let k1 = self.ev.eval(y);
                let k2 = self.ev.eval(&self.axpy(y, &half, &k1));
                let k3 = self.ev.eval(&self.axpy(y, &half, &k2));
                let k4 = self.ev.eval(&self.axpy(y, h, &k3));
                y.iter()
                    .enumerate()
                    .map(|(i, yi)| {
                        let s = ar.add(&ar.add(&k1[i], &ar.mul(&two, &k2[i])), &ar.add(&ar.mul(&two, &k3[i]), &k4[i]));
                        ar.add(yi, &ar.mul(&sixth, &s))
                    })
                    .collect()
            }
        }
    }
}

fn run<A: Arith>(
    ar: &A,
    field: &PolyField,
    y0: &[Q],
    t_end: &Q,
    cfg: &IntegratorConfig,
    samples: &[(Q, Option<usize>)],
) -> Result<SampledTrace> {
    let mut st = Stepper { ar, ev: Evaluator::new(field, ar), method: cfg.method, scratch: Vec::new() };
    let h = ar.constant(&cfg.step);
    let to_f = |y: &[A::T]| y.iter().map(|v| ar.to_f64(v)).collect::<Vec<f64>>();
    let norm = |y: &[f64]| y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut y: Vec<A::T> = y0.iter().map(|q| ar.constant(q)).collect();
    let mut out =
        SampledTrace { times: vec![], states: vec![], cycles: vec![], roles: field.roles.clone(), max_abs: 0.0 };
    let mut t = Q::zero();
    let mut k: u64 = 0;
    let mut next = 0;
    loop {
        let yf = to_f(&y);
        if yf.iter().any(|v| !v.is_finite()) {
            return Err(Error::Overflow);
        }
        out.max_abs = out.max_abs.max(norm(&yf));
        let t_next = &cfg.step * qi((k + 1) as i64);
        // samples in [t, t_next) come from a partial step off the grid state
        while next < samples.len() && samples[next].0 < t_next {
            let (ts, tag) = &samples[next];
            let dt = ts - &t;
            let ys = if dt.is_zero() { yf.clone() } else { to_f(&st.step(&y, &ar.constant(&dt))) };
            ar.take_overflow()?;
            out.max_abs = out.max_abs.max(norm(&ys));
            out.times.push(ts.clone());
            out.states.push(ys);
            out.cycles.push(*tag);
            next += 1;
        }
        if t >= *t_end && next == samples.len() {
            break;
        }
        y = st.step(&y, &h);
        ar.take_overflow()?;
        t = t_next;
        k += 1;
    }
    Ok(out)
}

/// Integrates `y' = F(y)` on the grid `k·step` up to `t_end` and returns the
/// state at each requested `(time, cycle tag)`; times must be sorted and
/// non-negative.
pub fn integrate(
    field: &PolyField,
    y0: &[Q],
    t_end: &Q,
    cfg: &IntegratorConfig,
    samples: &[(Q, Option<usize>)],
) -> Result<SampledTrace> {
    if !cfg.step.is_positive() {
        return Err(Error::Invalid("integration step must be positive".into()));
    }
    if y0.len() != field.dim {
        return Err(Error::Dimension(format!("initial state has {} coordinates, field has {}", y0.len(), field.dim)));
    }
    if samples.windows(2).any(|w| w[0].0 > w[1].0) || samples.first().is_some_and(|s| s.0.is_negative()) {
        return Err(Error::Invalid("sample times must be sorted and non-negative".into()));
    }
    match cfg.arithmetic {
        Arithmetic::Float => run(&F64, field, y0, t_end, cfg, samples),
        Arithmetic::Dyadic(bits) => run(&Dyadic::new(bits)?, field, y0, t_end, cfg, samples),
        Arithmetic::Exact => run(&Exact, field, y0, t_end, cfg, samples),
    }
}
