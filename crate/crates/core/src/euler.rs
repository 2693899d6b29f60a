//! Euler simulator `(Y, h) ↦ (Y + h·F(Y), h)` over a compiled ODE field,
//! with worst-case and measured step-size thresholds.

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde_json::{json, Value};

use crate::arith::{precision_from_env, Arith, Dyadic, Exact, F64};
use crate::error::{Error, Result};
use crate::integrate::{integrate, Arithmetic, IntegratorConfig, Method};
use crate::normal_form::trace_bound;
use crate::num::{fmt_decimal, from_f64, pow2, qi, qz, round_q, Q};
use crate::ode::{tau, OdeProgram};
use crate::poly::{coefficient_majorants, Evaluator, Poly, PolyField};
use crate::trace::Trace;

/// Default fixed-point precision of the simulator.
pub const DEFAULT_PRECISION_BITS: u32 = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct EulerSystem {
    pub program: OdeProgram,
    pub arithmetic: Arithmetic,
}

impl EulerSystem {
    /// Dyadic arithmetic at `DYNCOMP_PRECISION_BITS` (default 40).
    pub fn new(program: OdeProgram) -> Result<Self> {
        let bits = precision_from_env(DEFAULT_PRECISION_BITS)?;
        Dyadic::new(bits)?;
        Ok(EulerSystem { program, arithmetic: Arithmetic::Dyadic(bits) })
    }

    pub fn with_arithmetic(program: OdeProgram, arithmetic: Arithmetic) -> Self {
        EulerSystem { program, arithmetic }
    }

    /// Simulator dimension `M + 1`.
    pub fn dim(&self) -> usize {
        self.program.field.dim + 1
    }

    /// `Z_0 = (Y_0(x), 2^{-s})`.
    pub fn initial_state(&self, x: &[BigInt], s: u32) -> Result<Vec<Q>> {
        let mut z = self.program.initial_state(x)?;
        z.push(pow2(-i64::from(s)));
        Ok(z)
    }
}

/// One exact simulator step; the last coordinate is the step size.
pub fn euler_step(field: &PolyField, z: &[Q]) -> Result<Vec<Q>> {
    if z.len() != field.dim + 1 {
        return Err(Error::Dimension(format!(
            "simulator state has {} coordinates, expected {}",
            z.len(),
            field.dim + 1
        )));
    }
    let (y, h) = z.split_at(field.dim);
    let f = field.eval_q(y);
    let mut out: Vec<Q> = y.iter().zip(&f).map(|(a, b)| a + &h[0] * b).collect();
    out.push(h[0].clone());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MajorantReport {
    pub r: BigUint,
    /// `‖F(Y)‖∞ ≤ m_sharp` on `[−R, R]^M`.
    pub m_sharp: BigUint,
    /// `‖F(Y) − F(Z)‖∞ ≤ l_sharp·‖Y − Z‖∞` on `[−R, R]^M`.
    pub l_sharp: BigUint,
}

impl MajorantReport {
    /// `C(R, T) = L·M·T·e^{L·T}` as `(L·M·T, L·T)`.
    pub fn constant(&self, t: &BigUint) -> (BigUint, BigUint) {
        (&self.l_sharp * &self.m_sharp * t, &self.l_sharp * t)
    }
}

fn ceil_nat(q: &Q) -> BigUint {
    q.ceil().to_integer().to_biguint().unwrap_or_default()
}

/// Coefficient-norm majorants of the expanded field on the box of radius `r`.
pub fn majorants(field: &PolyField, r: &BigUint) -> Result<MajorantReport> {
    majorants_of_terms(&field.terms()?, r)
}

pub fn majorants_of_terms(terms: &[Poly], r: &BigUint) -> Result<MajorantReport> {
    if r.is_zero() {
        return Err(Error::Invalid("majorant radius must be at least 1".into()));
    }
    let rq = qz(&BigInt::from(r.clone()));
    let mut m = Q::zero();
    let mut l = Q::zero();
    for p in terms {
        let (v, s) = coefficient_majorants(p, &rq);
        m = m.max(v);
        l = l.max(s);
    }
    Ok(MajorantReport { r: r.clone(), m_sharp: ceil_nat(&m), l_sharp: ceil_nat(&l) })
}

/// Enclosure `[lo, hi]·2^{-w}` of a positive real.
#[derive(Debug, Clone)]
struct Bracket {
    lo: BigInt,
    hi: BigInt,
}

/// `atanh(y)` for rational `0 ≤ y ≤ 1/3` at `w` fractional bits.
fn atanh_bracket(y: &Q, w: u64) -> Bracket {
    let one = BigInt::one() << w;
    let scaled = y * qz(&one);
    let (y_lo, y_hi) = (scaled.floor().to_integer(), scaled.ceil().to_integer());
    let y2_lo = (&y_lo * &y_lo) >> w;
    let y2_hi = (&y_hi * &y_hi + &one - 1u8) >> w;
    let (mut p_lo, mut p_hi) = (y_lo, y_hi);
    let (mut lo, mut hi) = (BigInt::zero(), BigInt::zero());
    let mut k: u32 = 0;
    loop {
        let d = BigInt::from(2 * k + 1);
        lo += p_lo.div_floor(&d);
        hi += p_hi.div_ceil(&d);
        p_lo = (&p_lo * &y2_lo) >> w;
        p_hi = (&p_hi * &y2_hi + &one - 1u8) >> w;
        k += 1;
        if p_hi <= BigInt::one() {
            // remaining terms sum to at most p_hi/(1 − y²) ≤ 9/8·p_hi, plus one ulp per term
            hi += (&p_hi * 9u8).div_ceil(&BigInt::from(8u8)) + BigInt::from(k) + 1u8;
            return Bracket { lo, hi };
        }
    }
}

/// `ln q` for rational `q > 0`, as `k·ln 2 + ln r` with `r ∈ [1, 2)`.
fn ln_bracket(q: &Q, ln2: &Bracket, w: u64) -> Bracket {
    let k = q.numer().bits() as i64 - q.denom().bits() as i64;
    let mut k = k;
    let mut r = q * pow2(-k);
    if r < qi(1) {
        r *= qi(2);
        k -= 1;
    }
    let y = (&r - qi(1)) / (&r + qi(1));
    let a = atanh_bracket(&y, w);
    let (lo, hi) = (a.lo * 2, a.hi * 2);
    if k >= 0 {
        Bracket { lo: lo + &ln2.lo * k, hi: hi + &ln2.hi * k }
    } else {
        Bracket { lo: lo + &ln2.hi * k, hi: hi + &ln2.lo * k }
    }
}

/// Smallest `s ≥ 0` with `2^{-s}·coef·e^{exponent} < 1/4`.
pub fn step_threshold(coef: &Q, exponent: &BigUint) -> BigUint {
    if !coef.is_positive() {
        return BigUint::zero();
    }
    let four_c = coef * qi(4);
    if exponent.is_zero() {
        // 4C < 2^s
        let mut s = BigUint::from((four_c.to_integer().bits()).saturating_sub(1));
        while qz(&(BigInt::one() << s.to_usize().expect("threshold fits in memory"))) <= four_c {
            s += 1u8;
        }
        return s;
    }
    // s·ln 2 > ln(4C) + exponent
    let mut w = exponent.bits() + 64;
    loop {
        let ln2 = atanh_bracket(&Q::new(1.into(), 3.into()), w);
        let ln2 = Bracket { lo: ln2.lo * 2, hi: ln2.hi * 2 };
        let l = ln_bracket(&four_c, &ln2, w);
        let shift = BigInt::from(exponent.clone()) << w;
        let (num_lo, num_hi) = (l.lo + &shift, l.hi + &shift);
        let floor_div = |n: &BigInt, d: &BigInt| n.div_floor(d);
        let s_lo = floor_div(&num_lo, &ln2.hi);
        let s_hi = floor_div(&num_hi, &ln2.lo);
        if s_lo == s_hi {
            let s: BigInt = s_lo + 1;
            return if s.sign() == Sign::Minus { BigUint::zero() } else { s.to_biguint().expect("non-negative") };
        }
        w *= 2;
    }
}

/// `N(x, s) = ⌈τ·2^s⌉`.
pub fn observation_count(tau: u64, s: u32) -> BigUint {
    BigUint::from(tau) << s
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdReport {
    pub majorants: MajorantReport,
    pub tau: u64,
    /// `T = τ + 1`.
    pub horizon: BigUint,
    pub s: BigUint,
}

/// Worst-case threshold with `R = B̃(x) + 1` and `T = τ(x) + 1`.
pub fn theoretical_threshold(sys: &EulerSystem, reference: &Trace) -> Result<ThresholdReport> {
    theoretical_threshold_from_terms(&sys.program.field.terms()?, reference)
}

/// As [`theoretical_threshold`], reusing an expansion of the field.
pub fn theoretical_threshold_from_terms(terms: &[Poly], reference: &Trace) -> Result<ThresholdReport> {
    let h = reference.halted_at.ok_or_else(|| Error::Invalid("reference orbit did not halt".into()))?;
    let tau_v = tau(h);
    let safety = trace_bound(reference).ceil().to_integer().to_biguint().unwrap_or_default() + 2u8;
    let r = safety + 1u8;
    let t = BigUint::from(tau_v + 1);
    let maj = majorants_of_terms(terms, &r)?;
    let (coef, exponent) = maj.constant(&t);
    let s = step_threshold(&qz(&BigInt::from(coef)), &exponent);
    Ok(ThresholdReport { majorants: maj, tau: tau_v, horizon: t, s })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EulerOutcome {
    pub input: Vec<BigInt>,
    pub s: u32,
    pub n: BigUint,
    /// Outputs of `Z_N` before rounding.
    pub pre_rounding: Vec<Q>,
    pub rounded: Vec<BigInt>,
    /// Times `k·h` of window samples in `[τ, τ + 1]`.
    pub window_times: Vec<Q>,
    /// Full states (without the step register) at the window samples.
    pub window_states: Vec<Vec<f64>>,
}

impl EulerOutcome {
    pub fn to_json(&self, theoretical: Option<&BigUint>, empirical: Option<u32>) -> Value {
        json!({
            "input": self.input.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
            "s": self.s,
            "N": self.n.to_string(),
            "pre_rounding": self.pre_rounding.iter().map(|q| fmt_decimal(q, 12)).collect::<Vec<_>>(),
            "rounded": self.rounded.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
            "theoretical_S": theoretical.map(|s| s.to_string()),
            "empirical_S": empirical,
        })
    }
}

fn window_steps(n: u64, s: u32) -> Vec<u64> {
    let per_unit = 1u64 << s;
    if per_unit < 10 {
        (n..=n + per_unit).collect()
    } else {
        (0..=10).map(|j| n + j * per_unit / 10).collect()
    }
}

fn iterate<A: Arith>(ar: &A, sys: &EulerSystem, z0: &[Q], n: u64, window: &[u64]) -> Result<(Vec<Q>, Vec<Vec<f64>>)> {
    let field = &sys.program.field;
    let mut ev = Evaluator::new(field, ar);
    let mut z: Vec<A::T> = z0.iter().map(|q| ar.constant(q)).collect();
    let h = z[field.dim].clone();
    let mut f = Vec::with_capacity(field.dim);
    let mut at_n = Vec::new();
    let mut states = Vec::with_capacity(window.len());
    let mut next = 0;
    let last = *window.last().unwrap_or(&n);
    for k in 0..=last {
        if k == n {
            at_n = z[..field.dim].iter().map(|v| ar.to_q(v)).collect();
        }
        if next < window.len() && window[next] == k {
            let st: Vec<f64> = z[..field.dim].iter().map(|v| ar.to_f64(v)).collect();
            if st.iter().any(|v| !v.is_finite()) {
                return Err(Error::Overflow);
            }
            states.push(st);
            next += 1;
        }
        if k == last {
            break;
        }
        ev.eval_into(&z[..field.dim], &mut f);
        for (zi, fi) in z.iter_mut().zip(&f) {
            *zi = ar.add(zi, &ar.mul(&h, fi));
        }
        ar.take_overflow()?;
        if k % 64 == 0 && z.iter().any(|v| !ar.to_f64(v).is_finite()) {
            return Err(Error::Overflow);
        }
    }
    Ok((at_n, states))
}

/// Iterates `N(x, s)` steps from `Z_0`, then on through `[τ, τ + 1]`.
pub fn euler_run(sys: &EulerSystem, x: &[BigInt], tau_v: u64, s: u32) -> Result<EulerOutcome> {
    if let Arithmetic::Dyadic(bits) = sys.arithmetic {
        if s > bits {
            return Err(Error::Invalid(format!("step 2^-{s} is not representable with {bits} fractional bits")));
        }
    }
    let z0 = sys.initial_state(x, s)?;
    let n_big = observation_count(tau_v, s);
    let n = n_big.to_u64().ok_or(Error::Overflow)?;
    let window = window_steps(n, s);
    let (at_n, states) = match sys.arithmetic {
        Arithmetic::Float => iterate(&F64, sys, &z0, n, &window)?,
        Arithmetic::Dyadic(bits) => iterate(&Dyadic::new(bits)?, sys, &z0, n, &window)?,
        Arithmetic::Exact => iterate(&Exact, sys, &z0, n, &window)?,
    };
    let pre: Vec<Q> = sys.program.outputs.iter().map(|&i| at_n[i].clone()).collect();
    let h = pow2(-i64::from(s));
    Ok(EulerOutcome {
        input: x.to_vec(),
        s,
        n: n_big,
        rounded: pre.iter().map(round_q).collect(),
        pre_rounding: pre,
        window_times: window.iter().map(|&k| &h * qi(k as i64)).collect(),
        window_states: states,
    })
}

/// Smallest `s ≤ s_max` such that runs at `s` and `s + 1` both round to
/// `expected`; overflowing runs count as incorrect.
pub fn empirical_threshold(
    sys: &EulerSystem,
    x: &[BigInt],
    tau_v: u64,
    expected: &[BigInt],
    s_max: u32,
) -> Result<u32> {
    let correct = |s: u32| -> Result<bool> {
        match euler_run(sys, x, tau_v, s) {
            Ok(o) => Ok(o.rounded == expected),
            Err(Error::Overflow) => Ok(false),
            Err(e) => Err(e),
        }
    };
    let mut prev = correct(0)?;
    for s in 1..=s_max + 1 {
        let now = correct(s)?;
        if prev && now {
            return Ok(s - 1);
        }
        prev = now;
    }
    Err(Error::NotReached(s_max))
}

/// Reference solution at the window times of an Euler run.
pub fn reference_window(prog: &OdeProgram, x: &[BigInt], times: &[Q], steps_per_cycle: u32) -> Result<Vec<Vec<f64>>> {
    let cfg = IntegratorConfig {
        method: Method::Rk4,
        step: from_f64(2.0 * std::f64::consts::PI / f64::from(steps_per_cycle)),
        arithmetic: Arithmetic::Float,
    };
    let samples: Vec<(Q, Option<usize>)> = times.iter().map(|t| (t.clone(), None)).collect();
    let end = times.last().cloned().unwrap_or_else(Q::zero);
    Ok(integrate(&prog.field, &prog.initial_state(x)?, &end, &cfg, &samples)?.states)
}

/// `max_k ‖Z_k − Y(t_k)‖∞` over the window samples of an Euler run.
pub fn window_deviation(run: &EulerOutcome, reference: &[Vec<f64>]) -> f64 {
    run.window_states
        .iter()
        .zip(reference)
        .map(|(a, b)| a.iter().zip(b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs())))
        .fold(0.0, f64::max)
}
