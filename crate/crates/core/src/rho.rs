//! ν-coded recurrent network with a bounded activation.
//!
//! Registers are carried as codes `ν(R) = 2^{-R}` and updated by scalings
//! `z ↦ 2^{-c}·z`; control bits are carried raw and re-cleaned through the
//! detector `Z` after every step. Zero tests read the code directly:
//! `ν(R) = 1` iff `R = 0` and `ν(R) ≤ 1/2` otherwise.

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::normal_form::{nf_step, GateShape, NormalForm, ThetaMode};
use crate::num::{floor_dyadic, fmt_q, parse_q, pow2, qi, qr, qz, Q};
use crate::trace::Trace;

pub fn nu_encode(n: u64) -> Q {
    pow2(-(n as i64))
}

/// Smallest `k` with `2^k ≥ q`, for `q > 0`.
pub fn ceil_log2(q: &Q) -> i64 {
    let mut k = q.numer().bits() as i64 - q.denom().bits() as i64;
    while pow2(k) < *q {
        k += 1;
    }
    while pow2(k - 1) >= *q {
        k -= 1;
    }
    k
}

/// The unique `n` with `|q − ν(n)| < ν(n)/4`.
pub fn nu_decode(q: &Q) -> Result<u64> {
    let unreadable = || Error::Unreadable(fmt_q(q));
    if !q.is_positive() {
        return Err(unreadable());
    }
    // least k ≥ 0 with 2^k·q ≥ 3/4
    let mut k = (q.denom().bits() as i64 - q.numer().bits() as i64 - 2).max(0);
    while pow2(k) * q < qr(3, 4) {
        k += 1;
    }
    let code = pow2(-k);
    if (q - &code).abs() * qi(4) < code {
        Ok(k as u64)
    } else {
        Err(unreadable())
    }
}

/// Admissible activation. `Z = ρ` serves as the detector: `|Z| ≤ η` on
/// `[0, 5/8]` and `|Z − 1| ≤ η` on `[7/8, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub enum Activation {
    /// `clamp(4u − 5/2)`, exactly 0 and 1 on the two detector regions.
    HardSigmoid,
    /// `1/(1 + e^{−k(u − 3/4)})`; `eta` is a rational upper bound on
    /// `1/(1 + e^{k/8})`.
    Logistic { steepness: Q, eta: Q },
}

pub fn make_hard_sigmoid() -> Activation {
    Activation::HardSigmoid
}

pub fn make_logistic(steepness: Q) -> Result<Activation> {
    if !steepness.is_positive() {
        return Err(Error::InadmissibleParameters("steepness must be positive".into()));
    }
    // partial sums of the exponential series are lower bounds
    let x = &steepness / qi(8);
    let terms = 40 + (&x * qi(3)).ceil().to_integer().to_u64().unwrap_or(400).min(400);
    let mut term = Q::one();
    let mut exp_lower = Q::one();
    for i in 1..=terms {
        term = term * &x / qi(i as i64);
        exp_lower += &term;
    }
    let eta = Q::one() / (Q::one() + exp_lower);
    if eta >= qr(1, 8) {
        return Err(Error::InadmissibleParameters(format!("margin {} is not below 1/8", fmt_q(&eta))));
    }
    Ok(Activation::Logistic { steepness, eta })
}

/// `e^x·2^w` rounded toward zero, with relative error below `2^{-w+1}`.
fn exp_fixed(x: &Q, w: u32) -> BigInt {
    let mut j = 0u32;
    while x.abs() > pow2(j as i64 - 1) {
        j += 1;
    }
    let y = x / pow2(j as i64);
    let wp = w + j + 16;
    let one = BigInt::one() << wp;
    let mut sum = one.clone();
    let mut term = one;
    let mut i = 1u64;
    loop {
        term = term * y.numer() / (y.denom() * BigInt::from(i));
        if term.is_zero() {
            break;
        }
        sum += &term;
        i += 1;
    }
    for _ in 0..j {
        sum = (&sum * &sum) >> wp;
    }
    sum >> (wp - w)
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::HardSigmoid => "hard_sigmoid",
            Activation::Logistic { .. } => "logistic",
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Activation::HardSigmoid)
    }

    pub fn eta(&self) -> Q {
        match self {
            Activation::HardSigmoid => Q::zero(),
            Activation::Logistic { eta, .. } => eta.clone(),
        }
    }

    /// ρ(u) within `2^{-s}`; exact for the hard sigmoid.
    pub fn eval(&self, u: &Q, s: u32) -> Q {
        match self {
            Activation::HardSigmoid => {
                let v = u * qi(4) - qr(5, 2);
                v.clamp(Q::zero(), Q::one())
            }
            Activation::Logistic { steepness, .. } => {
                let t = steepness * (u - qr(3, 4));
                let lim = qi(i64::from(s) + 2);
                // e^{-|t|} < 2^{-s-2} beyond the limit
                if t >= lim {
                    return Q::one();
                }
                if t <= -lim {
                    return Q::zero();
                }
                let w = s + 8;
                let e = exp_fixed(&-t, w);
                let one = BigInt::one() << w;
                floor_dyadic(&Q::new(one.clone(), one + e), s + 4)
            }
        }
    }

    /// `|u − v| ≤ 2^{-modulus(s)}` implies `|ρ(u) − ρ(v)| ≤ 2^{-s}`.
    pub fn modulus(&self, s: u32) -> u32 {
        match self {
            Activation::HardSigmoid => s + 2,
            Activation::Logistic { steepness, .. } => s + ceil_log2(&(steepness / qi(4))).max(0) as u32,
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            Activation::HardSigmoid => json!({"name": self.name()}),
            Activation::Logistic { steepness, eta } => {
                json!({"name": self.name(), "steepness": fmt_q(steepness), "eta": fmt_q(eta)})
            }
        }
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        match v["name"].as_str() {
            Some("hard_sigmoid") => Ok(make_hard_sigmoid()),
            Some("logistic") => {
                make_logistic(parse_q(v["steepness"].as_str().ok_or_else(|| Error::Invalid("steepness".into()))?)?)
            }
            other => Err(Error::Invalid(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Detector {
    /// Θ(R) = 1 − Z(ν(R)) on a coded register.
    Nonzero { coord: usize },
    /// AND tree of bit literals, `AND(a, b) = Z((a + b)/2)`, `NOT(a) = 1 − a`.
    Conjunction { pos: Vec<usize>, neg: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhoSystem {
    pub nf: NormalForm,
    /// Coordinates carried as ν-codes; the rest are raw control bits.
    pub coded: Vec<bool>,
    pub detectors: Vec<Detector>,
    /// Per coded register: unconditional scale exponent and the gated ones.
    base_shift: Vec<BigInt>,
    gated_shift: Vec<Vec<(usize, BigInt)>>,
    pub activation: Activation,
}

pub fn compile_nf_to_rho(nf: &NormalForm, act: Activation) -> Result<RhoSystem> {
    nf.check_dims()?;
    nf.check_translation_gated()?;
    let ctl = nf.control_mask();
    let coded: Vec<bool> = ctl.iter().map(|c| !c).collect();
    let detectors = (0..nf.gated.len())
        .map(|j| {
            Ok(match nf.gate_shape(j)? {
                GateShape::Positive { coord } => Detector::Nonzero { coord },
                GateShape::Conjunction { pos, neg } => Detector::Conjunction { pos, neg },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut gated_shift = vec![Vec::new(); nf.m];
    for (j, g) in nf.gated.iter().enumerate() {
        for r in (0..nf.m).filter(|&r| coded[r]) {
            if !g.a.offset[r].is_zero() {
                gated_shift[r].push((j, g.a.offset[r].clone()));
            }
        }
    }
    Ok(RhoSystem { nf: nf.clone(), coded, detectors, base_shift: nf.base.offset.clone(), gated_shift, activation: act })
}

impl RhoSystem {
    pub fn m(&self) -> usize {
        self.nf.m
    }

    /// `(ν(x), ν(0), …, ν(0))` on codes, 0 on bits.
    pub fn initial_state(&self, x: &[BigInt]) -> Result<Vec<Q>> {
        let y = self.nf.initial_state(x)?;
        self.encode_state(&y)
    }

    /// `⌊y⌋_ν` on coded coordinates, identity on bits.
    pub fn encode_state(&self, y: &[Q]) -> Result<Vec<Q>> {
        y.iter()
            .zip(&self.coded)
            .map(|(v, &c)| {
                if !c {
                    return Ok(v.clone());
                }
                let n = v.to_integer().to_u64().filter(|_| v.denom().is_one());
                n.map(nu_encode).ok_or_else(|| Error::Invalid(format!("register value {v} is not a natural")))
            })
            .collect()
    }

    fn detector(&self, d: &Detector, z: &[Q], s: u32) -> Q {
        let act = &self.activation;
        match d {
            Detector::Nonzero { coord } => Q::one() - act.eval(&z[*coord], s),
            Detector::Conjunction { pos, neg } => {
                let mut lits: Vec<Q> = pos.iter().map(|&i| z[i].clone()).collect();
                lits.extend(neg.iter().map(|&i| Q::one() - &z[i]));
                match lits.len() {
                    0 => Q::one(),
                    1 => act.eval(&lits[0], s),
                    _ => {
                        while lits.len() > 1 {
                            lits = lits
                                .chunks(2)
                                .map(|c| match c {
                                    [a, b] => act.eval(&((a + b) / qi(2)), s),
                                    [a] => a.clone(),
                                    _ => unreachable!(),
                                })
                                .collect();
                        }
                        lits.pop().expect("nonempty")
                    }
                }
            }
        }
    }

    /// One coded step; `s` is the evaluation precision of ρ.
    pub fn step(&self, z: &[Q], s: u32) -> Result<Vec<Q>> {
        if z.len() != self.m() {
            return Err(Error::Dimension(format!("state has {} coordinates, expected {}", z.len(), self.m())));
        }
        let g: Vec<Q> = self.detectors.iter().map(|d| self.detector(d, z, s)).collect();
        let mut out = Vec::with_capacity(self.m());
        for r in 0..self.m() {
            if self.coded[r] {
                let mut factor = Q::one();
                for (j, c) in &self.gated_shift[r] {
                    factor += &g[*j] * (pow2(-c.to_i64().unwrap_or(i64::MAX / 2)) - Q::one());
                }
                let v = &z[r] * factor * pow2(-self.base_shift[r].to_i64().unwrap_or(i64::MAX / 2));
                // codes never exceed ν(0) = 1
                out.push(v.min(Q::one()));
            } else {
                let mut pre = self.nf.base.eval_row(r, z);
                for (j, gj) in self.nf.gated.iter().enumerate() {
                    if !g[j].is_zero() && (!gj.a.offset[r].is_zero() || !gj.a.entries[r].is_empty()) {
                        pre += &g[j] * gj.a.eval_row(r, z);
                    }
                }
                out.push(self.activation.eval(&pre, s));
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Value {
        let detectors: Vec<Value> = self
            .detectors
            .iter()
            .map(|d| match d {
                Detector::Nonzero { coord } => json!({"kind": "nonzero", "coord": coord}),
                Detector::Conjunction { pos, neg } => json!({"kind": "and", "pos": pos, "neg": neg}),
            })
            .collect();
        let mut v = self.nf.to_json();
        v["coded"] = json!((0..self.m()).filter(|&i| self.coded[i]).collect::<Vec<_>>());
        v["detectors"] = json!(detectors);
        v["activation"] = self.activation.to_json();
        v
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        compile_nf_to_rho(&NormalForm::from_json(v)?, Activation::from_json(&v["activation"])?)
    }
}

fn check_domain(z: &[Q], step: usize) -> Result<()> {
    for (coord, v) in z.iter().enumerate() {
        if v.is_negative() || *v > Q::one() {
            return Err(Error::DomainEscape { step, coord, value: fmt_q(v) });
        }
    }
    Ok(())
}

/// Binary exponent of the smallest coded coordinate, used to size the
/// working precision so that rounding stays relatively small.
fn code_depth(sys: &RhoSystem, z: &[Q]) -> u32 {
    z.iter()
        .zip(&sys.coded)
        .filter(|(v, c)| **c && v.is_positive())
        .map(|(v, _)| (-ceil_log2(v)).max(0) as u32 + 1)
        .max()
        .unwrap_or(0)
}

fn advance(sys: &RhoSystem, z: &[Q], s: u32, horizon: usize, step: usize) -> Result<Vec<Q>> {
    let next = if sys.activation.is_exact() {
        sys.step(z, s)?
    } else {
        let p = s + code_depth(sys, z) + (usize::BITS - horizon.leading_zeros()) + 8;
        sys.step(z, p)?.iter().map(|v| floor_dyadic(v, p)).collect()
    };
    check_domain(&next, step)?;
    Ok(next)
}

/// Runs `t` coded steps at output precision `s ≥ 2`.
pub fn rho_run(sys: &RhoSystem, x: &[BigInt], t: usize, s: u32) -> Result<Trace> {
    if s < 2 {
        return Err(Error::Invalid("output precision must be at least 2".into()));
    }
    let z0 = sys.initial_state(x)?;
    check_domain(&z0, 0)?;
    let halt = sys.nf.halt_coord();
    let mut trace = Trace::new(z0, sys.nf.layout.clone());
    for n in 1..=t {
        let z = advance(sys, trace.last(), s, t, n)?;
        if trace.halted_at.is_none() && halt.is_some_and(|h| z[h] >= qr(1, 2)) {
            trace.halted_at = Some(n);
        }
        trace.states.push(z);
    }
    Ok(trace)
}

/// Runs until the halt bit reads 1, at most `cap` steps.
pub fn rho_run_to_halt(sys: &RhoSystem, x: &[BigInt], cap: usize, s: u32) -> Result<Trace> {
    if s < 2 {
        return Err(Error::Invalid("output precision must be at least 2".into()));
    }
    let halt = sys.nf.halt_coord().ok_or_else(|| Error::UnsupportedForm("no halt bit".into()))?;
    let z0 = sys.initial_state(x)?;
    check_domain(&z0, 0)?;
    let mut trace = Trace::new(z0, sys.nf.layout.clone());
    for n in 1..=cap {
        let z = advance(sys, trace.last(), s, cap, n)?;
        let done = z[halt] >= qr(1, 2);
        trace.states.push(z);
        if done {
            trace.halted_at = Some(n);
            return Ok(trace);
        }
    }
    Err(Error::CapExceeded(cap))
}

pub fn decode_outputs(sys: &RhoSystem, z: &[Q]) -> Result<Vec<u64>> {
    sys.nf.outputs.iter().map(|&i| nu_decode(&z[i])).collect()
}

/// `s0 = max(c·β, 2)` with `β = B + ‖A‖·m` and `c = 1 + ⌈log2(1 + ‖A‖)⌉`,
/// where `B` bounds the reference orbit and `‖A‖` the gated addends.
pub fn basin_exponent(nf: &NormalForm, orbit_bound: &BigInt) -> BigInt {
    let norm =
        nf.gated.iter().map(|g| g.a.norm_inf()).chain(std::iter::once(nf.base.norm_inf())).max().unwrap_or_default();
    let beta = orbit_bound + &norm * BigInt::from(nf.m);
    let c = 1 + ceil_log2(&(Q::one() + qz(&norm))).max(0);
    (beta * BigInt::from(c)).max(BigInt::from(2))
}

/// Membership of `z` in `B_ε(y)`: relative intervals on codes, absolute
/// intervals on bits, both intersected with `[0, 1]`. Returns the first
/// offending coordinate.
pub fn basin_miss(sys: &RhoSystem, z: &[Q], y: &[Q], eps: &Q) -> Option<(usize, String)> {
    let center = sys.encode_state(y).ok()?;
    for (i, (v, c)) in z.iter().zip(&center).enumerate() {
        let radius = if sys.coded[i] { eps * c } else { eps.clone() };
        if (v - c).abs() > radius {
            return Some((i, format!("{} is not within {} of {}", fmt_q(v), fmt_q(&radius), fmt_q(c))));
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasinReport {
    pub points: usize,
    /// Largest `|R(z)_i − ν(P(y)_i)| / ν(P(y)_i)` over codes.
    pub max_code_error: Q,
    /// Largest `|R(z)_i − P(y)_i|` over bits.
    pub max_bit_error: Q,
}

/// Checks `R(B_ε(y)) ⊆ B_ε(P(y))` on corners and random points of the box.
/// All `2^m` corners are enumerated when `m ≤ 12`.
pub fn basin_step_check(sys: &RhoSystem, y: &[BigInt], eps: &Q, samples: usize, seed: u64) -> Result<BasinReport> {
    if eps.is_negative() || *eps >= qr(1, 8) {
        return Err(Error::Invalid(format!("basin radius {} must lie in [0, 1/8)", fmt_q(eps))));
    }
    let yq: Vec<Q> = y.iter().map(qz).collect();
    let target = nf_step(&sys.nf, &yq, ThetaMode::Strict)?;
    let center = sys.encode_state(&yq)?;
    let coded_target = sys.encode_state(&target)?;
    let m = sys.m();
    let bounds: Vec<(Q, Q)> = center
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let r = if sys.coded[i] { eps * c } else { eps.clone() };
            ((c - &r).max(Q::zero()), (c + r).min(Q::one()))
        })
        .collect();
    let mut points: Vec<Vec<Q>> = vec![center.clone()];
    if !eps.is_zero() {
        if m <= 12 {
            for mask in 0u32..(1 << m) {
                points.push(
                    (0..m)
                        .map(|i| if mask >> i & 1 == 1 { bounds[i].1.clone() } else { bounds[i].0.clone() })
                        .collect(),
                );
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for k in 0..samples {
                let corner = k % 2 == 0;
                points.push(
                    bounds
                        .iter()
                        .map(|(lo, hi)| {
                            if corner {
                                if rng.gen::<bool>() {
                                    hi.clone()
                                } else {
                                    lo.clone()
                                }
                            } else {
                                let t = qr(rng.gen_range(0..=1024), 1024);
                                lo + (hi - lo) * t
                            }
                        })
                        .collect(),
                );
            }
        }
    }
    let precision = 64 + code_depth(sys, &center) + code_depth(sys, &coded_target);
    let mut report = BasinReport { points: points.len(), max_code_error: Q::zero(), max_bit_error: Q::zero() };
    for z in &points {
        let image = sys.step(z, precision)?;
        for i in 0..m {
            let dev = (&image[i] - &coded_target[i]).abs();
            if sys.coded[i] {
                let rel = dev / &coded_target[i];
                if rel > *eps {
                    return Err(Error::BasinViolation {
                        coord: i,
                        detail: format!("relative error {} exceeds {}", fmt_q(&rel), fmt_q(eps)),
                    });
                }
                report.max_code_error = report.max_code_error.max(rel);
            } else {
                if dev > *eps {
                    return Err(Error::BasinViolation {
                        coord: i,
                        detail: format!("bit error {} exceeds {}", fmt_q(&dev), fmt_q(eps)),
                    });
                }
                report.max_bit_error = report.max_bit_error.max(dev);
            }
        }
    }
    Ok(report)
}
