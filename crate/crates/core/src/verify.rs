//! Shadowing checks, impossibility witnesses, the continuous rounder and the
//! all-backends cross-check.

use std::cell::RefCell;

use num_bigint::{BigInt, BigUint};
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::euler::{
    empirical_threshold, euler_run, reference_window, theoretical_threshold_from_terms, window_deviation, EulerSystem,
};
use crate::loop_lang::{interpret_u64, LoopProgram};
use crate::normal_form::{
    compile_to_nf, default_cap, lattice_report, nf_run, nf_step, outputs_at, trace_bound, NormalForm, ThetaMode,
};
use crate::num::{floor_dyadic, fmt_q, is_integer, pow2, qi, qr, qz, round_q, to_f64, Q};
use crate::ode::{
    compile_nf_to_ode, measure_cycle_contraction, ode_run, read_output, GadgetParams, OdeConfig, OdeProgram,
};
use crate::poly::{Poly, PolyField};
use crate::relu::{compile_nf_to_relu, relu_run, relu_run_to_halt, ReluBlock};
use crate::rho::{
    basin_exponent, compile_nf_to_rho, decode_outputs, nu_encode, rho_run_to_halt, Activation, RhoSystem,
};
use crate::trace::Trace;

pub type Map<'a> = dyn Fn(&[Q]) -> Result<Vec<Q>> + 'a;

fn dist(a: &[Q], b: &[Q]) -> Q {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).max().unwrap_or_else(Q::zero)
}

// ------------------------------------------------------------ faithfulness

#[derive(Debug, Clone, PartialEq)]
pub struct FaithfulReport {
    pub max_deviation: Q,
    /// First sampled point with deviation `≥ 1/2`.
    pub witness: Option<Vec<BigInt>>,
}

impl FaithfulReport {
    pub fn pass(&self) -> bool {
        self.witness.is_none()
    }
}

/// `‖F̃(y) − F(y)‖∞ < 1/2` on every sampled lattice point.
pub fn check_integer_faithful(f_tilde: &Map, f: &Map, points: &[Vec<BigInt>]) -> Result<FaithfulReport> {
    let half = qr(1, 2);
    let mut report = FaithfulReport { max_deviation: Q::zero(), witness: None };
    for p in points {
        let y: Vec<Q> = p.iter().map(qz).collect();
        let exact = f(&y)?;
        if let Some(v) = exact.iter().find(|v| !is_integer(v)) {
            return Err(Error::NotLatticePreserving(format!("F({p:?}) has coordinate {}", fmt_q(v))));
        }
        let d = dist(&f_tilde(&y)?, &exact);
        if d >= half && report.witness.is_none() {
            report.witness = Some(p.clone());
        }
        report.max_deviation = report.max_deviation.max(d);
    }
    Ok(report)
}

/// `ỹ_{n+1} = round(F̃(ỹ_n))` from the reference start, compared step by step.
pub fn decoded_shadow_run(f_tilde: &Map, reference: &Trace, steps: usize) -> Result<Trace> {
    if steps >= reference.len() {
        return Err(Error::Invalid(format!("reference has {} states, {steps} steps requested", reference.len())));
    }
    let mut trace = Trace::new(reference.states[0].clone(), reference.roles.clone());
    for n in 0..steps {
        let next: Vec<Q> = f_tilde(trace.last())?.iter().map(|v| qz(&round_q(v))).collect();
        if next != reference.states[n + 1] {
            return Err(Error::DecodeDiverged(n + 1));
        }
        trace.states.push(next);
    }
    trace.halted_at = reference.halted_at.filter(|h| *h <= steps);
    Ok(trace)
}

/// The normal-form map plus seeded uniform noise in `[−a, a]` on `coords`.
pub struct NoisyStep<'a> {
    nf: &'a NormalForm,
    amplitude: Q,
    coords: Vec<usize>,
    rng: RefCell<ChaCha8Rng>,
}

impl<'a> NoisyStep<'a> {
    pub fn new(nf: &'a NormalForm, amplitude: Q, coords: Vec<usize>, seed: u64) -> Self {
        NoisyStep { nf, amplitude, coords, rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)) }
    }

    pub fn apply(&self, y: &[Q]) -> Result<Vec<Q>> {
        let mut out = nf_step(self.nf, y, ThetaMode::Strict)?;
        let mut rng = self.rng.borrow_mut();
        for &i in &self.coords {
            // dyadic uniform sample in [−1, 1], scaled
            let u = Q::new(BigInt::from(rng.gen_range(-(1i64 << 30)..=(1i64 << 30))), BigInt::from(1i64 << 30));
            out[i] += u * &self.amplitude;
        }
        Ok(out)
    }
}

// ------------------------------------------------------------- Grönwall

#[derive(Debug, Clone, PartialEq)]
pub struct ShadowReport {
    pub errors: Vec<Q>,
    /// `ε·Σ_{k<n} L^k`.
    pub bounds: Vec<Q>,
    pub tube: Q,
    pub states: Vec<Vec<Q>>,
}

impl ShadowReport {
    pub fn pass(&self) -> bool {
        self.errors.iter().zip(&self.bounds).all(|(e, b)| e <= b && b <= &self.tube)
    }
}

/// Runs `z_{n+1} = Φ(z_n)` from `y_0` along the reference orbit and checks
/// `‖z_n − y_n‖∞ ≤ ε·Σ_{k<n} L^k` under the tube condition.
pub fn gronwall_verify(reference: &Trace, phi: &Map, l: &Q, eps: &Q, r: &Q) -> Result<ShadowReport> {
    if l.is_negative() || eps.is_negative() || !r.is_positive() {
        return Err(Error::Invalid("need L ≥ 0, ε ≥ 0 and r > 0".into()));
    }
    let t = reference.len() - 1;
    let mut bounds = vec![Q::zero()];
    let mut power = Q::one();
    for _ in 0..t {
        let next = bounds.last().expect("nonempty") + eps * &power;
        bounds.push(next);
        power *= l;
    }
    if bounds[t] > *r {
        return Err(Error::TubeViolated(format!("ε·Σ L^k = {} exceeds r = {}", fmt_q(&bounds[t]), fmt_q(r))));
    }
    let mut states = vec![reference.states[0].clone()];
    let mut errors = vec![Q::zero()];
    for n in 0..t {
        let z = phi(&states[n])?;
        let e = dist(&z, &reference.states[n + 1]);
        if e > bounds[n + 1] {
            return Err(Error::BoundViolated {
                step: n + 1,
                detail: format!("‖z − y‖ = {} > {}", fmt_q(&e), fmt_q(&bounds[n + 1])),
            });
        }
        states.push(z);
        errors.push(e);
    }
    Ok(ShadowReport { errors, bounds, tube: r.clone(), states })
}

/// `Φ(z) = P(round z) + λ(z − round z) + ξ·1`: a perturbed normal-form map
/// whose orbit error obeys `e_{n+1} ≤ λ·e_n + |ξ|` near the lattice.
pub fn perturbed_nf_map(nf: &NormalForm, lambda: Q, xi: Q) -> impl Fn(&[Q]) -> Result<Vec<Q>> + '_ {
    move |z: &[Q]| {
        let r: Vec<Q> = z.iter().map(|v| qz(&round_q(v))).collect();
        let p = nf_step(nf, &r, ThetaMode::Strict)?;
        Ok(p.iter().zip(z.iter().zip(&r)).map(|(pv, (zv, rv))| pv + &lambda * (zv - rv) + &xi).collect())
    }
}

// ------------------------------------------------------------- witnesses

/// Univariate polynomial by ascending coefficients.
pub fn poly_eval(coeffs: &[Q], u: &Q) -> Q {
    coeffs.iter().rev().fold(Q::zero(), |acc, c| acc * u + c)
}

pub fn poly_iterate(coeffs: &[Q], n: u32, u: &Q) -> Q {
    (0..n).fold(u.clone(), |v, _| poly_eval(coeffs, &v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RounderWitness {
    pub u: Q,
    pub m: BigInt,
    /// `p^{[N]}(u)`.
    pub value: Q,
    pub epsilon: Q,
}

impl RounderWitness {
    /// `|u − m| ≤ δ` and `|p^{[N]}(u) − m| > ε`, recomputed.
    pub fn holds(&self, coeffs: &[Q], n: u32, delta: &Q) -> bool {
        let v = poly_iterate(coeffs, n, &self.u);
        v == self.value && (&self.u - qz(&self.m)).abs() <= *delta && (v - qz(&self.m)).abs() > self.epsilon
    }
}

/// Searches `u ∈ {m, m + δ, m − δ}` for `|m| ≤ m_max`, smallest `|m|` first.
pub fn rounder_witness(coeffs: &[Q], n: u32, delta: &Q, eps: &Q, m_max: u64) -> Result<RounderWitness> {
    if !(eps.is_positive() && eps < delta && *delta < qr(1, 2)) || n == 0 {
        return Err(Error::Invalid("need 0 < ε < δ < 1/2 and N ≥ 1".into()));
    }
    for a in 0..=m_max as i64 {
        for m in if a == 0 { vec![0] } else { vec![a, -a] } {
            let mq = qi(m);
            for u in [mq.clone(), &mq + delta, &mq - delta] {
                let value = poly_iterate(coeffs, n, &u);
                if (&value - &mq).abs() > *eps {
                    return Ok(RounderWitness { u, m: m.into(), value, epsilon: eps.clone() });
                }
            }
        }
    }
    Err(Error::NotFound)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectorWitness {
    pub c: u64,
    pub n: u64,
    /// `π(P^{[n]}(C, 0, …, 0))`.
    pub value: Q,
    /// 1 if `n < C`, else 0.
    pub required: Q,
}

fn selector_value(p: &PolyField, i: usize, c: u64, n: u64) -> Q {
    let mut z = vec![Q::zero(); p.dim];
    z[0] = qi(c as i64);
    for _ in 0..n {
        z = p.eval_q(&z);
    }
    z[i].clone()
}

impl SelectorWitness {
    pub fn holds(&self, p: &PolyField, i: usize) -> bool {
        let required = if self.n < self.c { qi(1) } else { qi(0) };
        let v = selector_value(p, i, self.c, self.n);
        v == self.value && required == self.required && v != required
    }
}

/// Searches the diagonal `n = C` first, then all pairs by increasing `C + n`.
pub fn selector_witness(p: &PolyField, i: usize, c_max: u64, n_max: u64) -> Result<SelectorWitness> {
    if c_max == 0 || n_max == 0 || i >= p.dim {
        return Err(Error::Invalid("selector bounds must be at least 1".into()));
    }
    let diagonal = (1..=c_max.min(n_max)).map(|c| (c, c));
    let rest = (0..=c_max + n_max).flat_map(|sum| (0..=sum.min(c_max)).map(move |c| (c, sum - c)));
    for (c, n) in diagonal.chain(rest.filter(|&(c, n)| n <= n_max && c <= c_max)) {
        let required = if n < c { qi(1) } else { qi(0) };
        let value = selector_value(p, i, c, n);
        if value != required {
            return Ok(SelectorWitness { c, n, value, required });
        }
    }
    Err(Error::NotFound)
}

/// Seeded polynomial map of dimension 1 to 3 and degree at most 2: each
/// coordinate sums three terms `c·z_i` or `c·z_i·z_j` with `c ∈ {−2..2}` and
/// a constant in `{−1, 0, 1}`.
pub fn sampled_selector(seed: u64) -> PolyField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.gen_range(1..=3usize);
    let mut b = crate::poly::FieldBuilder::new();
    let mut roots = Vec::new();
    for _ in 0..dim {
        let mut terms = Vec::new();
        for _ in 0..3 {
            let coef = b.int(rng.gen_range(-2..=2));
            let vi = b.var(rng.gen_range(0..dim));
            let vj = b.var(rng.gen_range(0..dim));
            let mono = if rng.gen_bool(0.5) { b.mul(vi, vj) } else { vi };
            terms.push(b.mul(coef, mono));
        }
        terms.push(b.int(rng.gen_range(-1..=1)));
        roots.push(b.sum(terms));
    }
    b.finish(dim, roots, crate::trace::Roles::new()).expect("sampled roots are in range")
}

/// Search bound `max(2·degree·dimension, 4)` for a selector map.
pub fn selector_bound(p: &PolyField) -> u64 {
    (2 * p.degree() as u64 * p.dim as u64).max(4)
}

// ------------------------------------------------------- continuous rounder

/// Closed rational interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Interval {
    pub lo: Q,
    pub hi: Q,
}

impl Interval {
    pub fn point(q: Q) -> Self {
        Interval { lo: q.clone(), hi: q }
    }

    pub fn contains(&self, q: &Q) -> bool {
        self.lo <= *q && *q <= self.hi
    }

    pub fn mid(&self) -> Q {
        (&self.lo + &self.hi) / qi(2)
    }

    pub fn width(&self) -> Q {
        &self.hi - &self.lo
    }

    fn add(&self, o: &Interval) -> Interval {
        Interval { lo: &self.lo + &o.lo, hi: &self.hi + &o.hi }
    }

    fn sub(&self, o: &Interval) -> Interval {
        Interval { lo: &self.lo - &o.hi, hi: &self.hi - &o.lo }
    }

    fn mul(&self, o: &Interval) -> Interval {
        let p = [&self.lo * &o.lo, &self.lo * &o.hi, &self.hi * &o.lo, &self.hi * &o.hi];
        Interval { lo: p.iter().min().expect("4").clone(), hi: p.iter().max().expect("4").clone() }
    }

    /// Outward rounding to `bits` fractional bits.
    fn round_out(&self, bits: u32) -> Interval {
        Interval { lo: floor_dyadic(&self.lo, bits), hi: -floor_dyadic(&-&self.hi, bits) }
    }
}

/// `atan(1/k)` by its alternating series; partial sums bracket the limit.
fn atan_inv(k: i64, bits: u32) -> Interval {
    let x = qr(1, k);
    let x2 = &x * &x;
    let tol = pow2(-i64::from(bits) - 8);
    let mut power = x.clone();
    let mut sum = Q::zero();
    let mut j = 0i64;
    loop {
        let term = &power / qi(2 * j + 1);
        let before = sum.clone();
        sum = if j % 2 == 0 { &sum + &term } else { &sum - &term };
        if term < tol {
            let (lo, hi) = if sum < before { (sum, before) } else { (before, sum) };
            return Interval { lo, hi }.round_out(bits + 4);
        }
        power *= &x2;
        j += 1;
    }
}

/// `π = 16·atan(1/5) − 4·atan(1/239)`.
pub fn pi_enclosure(bits: u32) -> Interval {
    let a = atan_inv(5, bits).mul(&Interval::point(qi(16)));
    let b = atan_inv(239, bits).mul(&Interval::point(qi(4)));
    a.sub(&b).round_out(bits)
}

/// `sin θ` for `|θ| ≤ 4` by Taylor series with the Lagrange remainder.
fn sin_enclosure(theta: &Interval, bits: u32) -> Interval {
    let bound = theta.lo.abs().max(theta.hi.abs());
    let tol = pow2(-i64::from(bits) - 8);
    let mut sum = Interval::point(Q::zero());
    let mut power = theta.clone();
    let mut fact = Q::one();
    let mut k = 1i64;
    let mut mag = bound.clone();
    loop {
        let term = power.mul(&Interval::point(Q::one() / &fact));
        sum = if (k / 2) % 2 == 0 { sum.add(&term) } else { sum.sub(&term) };
        sum = sum.round_out(bits + 16);
        // next odd term magnitude bounds the remainder
        let next_fact = &fact * qi((k + 1) * (k + 2));
        let next_mag = &mag * &bound * &bound;
        if &next_mag / &next_fact < tol {
            let r = &next_mag / &next_fact;
            return Interval { lo: &sum.lo - &r, hi: &sum.hi + &r };
        }
        let sq = theta.mul(theta);
        power = power.mul(&sq).round_out(bits + 16);
        fact = next_fact;
        mag = next_mag;
        k += 2;
    }
}

/// Enclosure of `σ(x) = x − sin(2πx)/(2π)` over an interval argument.
pub fn sigma_enclosure(x: &Interval, bits: u32) -> Interval {
    let pi = pi_enclosure(bits + 16);
    let n = qz(&round_q(&x.mid()));
    let frac = x.sub(&Interval::point(n));
    if frac.lo.is_zero() && frac.hi.is_zero() {
        return x.clone();
    }
    let two_pi = pi.mul(&Interval::point(qi(2)));
    let s = sin_enclosure(&two_pi.mul(&frac), bits + 8);
    let inv = Interval { lo: Q::one() / &two_pi.hi, hi: Q::one() / &two_pi.lo };
    x.sub(&s.mul(&inv)).round_out(bits)
}

/// Working precision of [`continuous_rounder_iterate`].
pub const SIGMA_BITS: u32 = 160;

/// Enclosure of the `k`-fold iterate of `σ` from `x`.
pub fn sigma_iterate_enclosure(x: &Q, k: u32, bits: u32) -> Interval {
    (0..k).fold(Interval::point(x.clone()), |acc, _| sigma_enclosure(&acc, bits))
}

/// `σ^{[k]}(x)` as the midpoint of a `SIGMA_BITS` enclosure.
pub fn continuous_rounder_iterate(x: &Q, k: u32) -> Q {
    sigma_iterate_enclosure(x, k, SIGMA_BITS).mid()
}

/// Upper bound of `max |σ(m + δ) − m| / |δ|` over the offsets, for each `m`.
pub fn sigma_contraction(ms: &[i64], offsets: &[Q]) -> f64 {
    let mut worst = 0.0f64;
    for &m in ms {
        for d in offsets.iter().filter(|d| !d.is_zero()) {
            let e = sigma_enclosure(&Interval::point(qi(m) + d), SIGMA_BITS);
            let dev = (&e.hi - qi(m)).abs().max((&e.lo - qi(m)).abs());
            worst = worst.max(to_f64(&(dev / d.abs())));
        }
    }
    worst
}

// ----------------------------------------------------------- cross-check

#[derive(Debug, Clone)]
pub struct CrossConfig {
    pub activation: Activation,
    pub gadget: GadgetParams,
    pub ode: OdeConfig,
    /// Largest step exponent tried by the empirical Euler sweep.
    pub s_max: u32,
    /// Also compute the worst-case Euler threshold.
    pub theoretical: bool,
}

impl Default for CrossConfig {
    fn default() -> Self {
        CrossConfig {
            activation: crate::rho::make_hard_sigmoid(),
            gadget: GadgetParams::default(),
            ode: OdeConfig::default(),
            s_max: 12,
            theoretical: true,
        }
    }
}

/// Every backend compiled from one program.
pub struct Backends {
    pub program: LoopProgram,
    pub nf: NormalForm,
    pub relu: ReluBlock,
    pub rho: RhoSystem,
    pub ode: OdeProgram,
    pub euler: EulerSystem,
    pub terms: Option<Vec<Poly>>,
}

impl Backends {
    pub fn compile(program: &LoopProgram, cfg: &CrossConfig) -> Result<Self> {
        Self::from_nf(program, compile_to_nf(program), cfg)
    }

    /// Uses a supplied normal form instead of compiling one.
    pub fn from_nf(program: &LoopProgram, nf: NormalForm, cfg: &CrossConfig) -> Result<Self> {
        let relu = compile_nf_to_relu(&nf)?;
        let rho = compile_nf_to_rho(&nf, cfg.activation.clone())?;
        let ode = compile_nf_to_ode(&nf, &cfg.gadget)?;
        let euler = EulerSystem::new(ode.clone())?;
        let terms = if cfg.theoretical { Some(ode.field.terms()?) } else { None };
        Ok(Backends { program: program.clone(), nf, relu, rho, ode, euler, terms })
    }
}

pub const BACKENDS: [&str; 6] = ["interpreter", "nf", "relu", "rho", "ode", "euler"];

#[derive(Debug, Clone, PartialEq)]
pub struct CrossRow {
    pub input: Vec<u64>,
    /// Outputs in [`BACKENDS`] order.
    pub values: Vec<Vec<BigInt>>,
    pub nf_steps: usize,
    pub orbit_bound: BigInt,
    pub s0: BigInt,
    /// `max_j |out_j − ν(f_j)| / ν(f_j)` of the coded run.
    pub rho_relative_error: Q,
    pub tau: u64,
    pub lambda: f64,
    pub eta: f64,
    pub max_cycle_error: f64,
    pub halving_ratio: f64,
    pub window_samples: usize,
    pub hold_drift: f64,
    /// `None` when no `s ≤ s_max` reproduces the interpreter.
    pub empirical_s: Option<u32>,
    pub euler_n: BigUint,
    pub theoretical_s: Option<BigUint>,
}

impl CrossRow {
    pub fn agree(&self) -> bool {
        self.values.iter().all(|v| v == &self.values[0])
    }

    pub fn to_json(&self) -> Value {
        let vals: serde_json::Map<String, Value> = BACKENDS
            .iter()
            .zip(&self.values)
            .map(|(k, v)| (k.to_string(), json!(v.iter().map(|b| b.to_string()).collect::<Vec<_>>())))
            .collect();
        json!({
            "input": self.input,
            "values": vals,
            "agree": self.agree(),
            "T": self.nf_steps,
            "B": self.orbit_bound.to_string(),
            "s0": self.s0.to_string(),
            "rho_relative_error": fmt_q(&self.rho_relative_error),
            "tau": self.tau,
            "lambda": self.lambda,
            "eta": self.eta,
            "max_cycle_error": self.max_cycle_error,
            "halving_ratio": self.halving_ratio,
            "window_samples": self.window_samples,
            "hold_drift": self.hold_drift,
            "empirical_S": self.empirical_s,
            "N": self.euler_n.to_string(),
            "theoretical_S": self.theoretical_s.as_ref().map(|s| s.to_string()),
        })
    }
}

/// Largest step-halving change, as a fraction of the remaining margin.
pub const HALVING_LIMIT: f64 = 0.1;
/// Fewest window samples that must round identically.
pub const MIN_WINDOW_SAMPLES: usize = 10;

impl CrossRow {
    /// Every violated backend inequality, in a fixed order.
    pub fn contract_failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.agree() {
            let v: Vec<String> = BACKENDS.iter().zip(&self.values).map(|(k, v)| format!("{k}={v:?}")).collect();
            out.push(format!("backends disagree: {}", v.join(" ")));
        }
        if self.s0 < BigInt::from(2) {
            out.push(format!("s0 = {} < 2", self.s0));
        }
        let s0 = self.s0.to_i64().unwrap_or(i64::MAX);
        if self.rho_relative_error > pow2(-s0) {
            out.push(format!("rho relative error {} > 2^-{}", fmt_q(&self.rho_relative_error), self.s0));
        }
        if !(self.lambda < 1.0 && self.eta / (1.0 - self.lambda) < 0.25) {
            out.push(format!("contraction λ = {}, η = {:e} gives no margin", self.lambda, self.eta));
        }
        if !(self.max_cycle_error < 0.25) {
            out.push(format!("cycle error {:e} ≥ 1/4", self.max_cycle_error));
        }
        if self.window_samples < MIN_WINDOW_SAMPLES {
            out.push(format!("{} window samples < {MIN_WINDOW_SAMPLES}", self.window_samples));
        }
        if !(self.halving_ratio < HALVING_LIMIT) {
            out.push(format!("step halving moved samples by {:e} of the margin", self.halving_ratio));
        }
        match (self.empirical_s, &self.theoretical_s) {
            (None, _) => out.push("Euler rounding never recovered the output".into()),
            (Some(e), Some(t)) if *t < BigUint::from(e) => out.push(format!("theoretical S = {t} < empirical {e}")),
            _ => {}
        }
        out
    }
}

fn ints(v: &[Q]) -> Result<Vec<BigInt>> {
    v.iter()
        .map(|q| {
            if is_integer(q) {
                Ok(q.to_integer())
            } else {
                Err(Error::Mismatch(format!("non-integer output {}", fmt_q(q))))
            }
        })
        .collect()
}

/// Evaluates one input on every backend.
pub fn cross_row(b: &Backends, x: &[u64], cfg: &CrossConfig) -> Result<CrossRow> {
    let xb: Vec<BigInt> = x.iter().map(|&v| BigInt::from(v)).collect();
    let run = interpret_u64(&b.program, x)?;
    let interp: Vec<BigInt> = run.outputs.iter().map(|v| BigInt::from(v.clone())).collect();
    let reference = nf_run(&b.nf, &xb, default_cap(&run), ThetaMode::Strict)?;
    let h = reference.halted_at.expect("nf_run returns halted traces");
    let nf_out = ints(&outputs_at(&b.nf, reference.last()))?;

    let relu_tr = relu_run_to_halt(&b.relu, &xb, h)?;
    let relu_out = ints(&b.relu.outputs.iter().map(|&i| relu_tr.last()[i].clone()).collect::<Vec<_>>())?;

    let bound = trace_bound(&reference).ceil().to_integer();
    let s0 = basin_exponent(&b.nf, &bound);
    let s = s0.to_u32().ok_or(Error::Overflow)?;
    let rho_tr = rho_run_to_halt(&b.rho, &xb, 2 * h + 2, s)?;
    let rho_out: Vec<BigInt> = decode_outputs(&b.rho, rho_tr.last())?.into_iter().map(BigInt::from).collect();
    let rho_err = b
        .rho
        .nf
        .outputs
        .iter()
        .zip(&interp)
        .map(|(&i, f)| {
            let nu = nu_encode(f.to_u64().unwrap_or(u64::MAX));
            (&rho_tr.last()[i] - &nu).abs() / nu
        })
        .max()
        .unwrap_or_else(Q::zero);

    let ode = ode_run(&b.ode, &b.nf, &reference, &xb, &cfg.ode)?;
    let contraction = measure_cycle_contraction(&ode)?;
    let ode_out: Vec<BigInt> = read_output(&ode)?.into_iter().map(BigInt::from).collect();

    // an unreached threshold leaves the Euler row at `s_max` to disagree
    let s_emp = match empirical_threshold(&b.euler, &xb, ode.tau, &interp, cfg.s_max) {
        Ok(s) => Some(s),
        Err(Error::NotReached(_)) => None,
        Err(e) => return Err(e),
    };
    let eul = euler_run(&b.euler, &xb, ode.tau, s_emp.unwrap_or(cfg.s_max))?;
    let theoretical_s = match &b.terms {
        Some(t) => Some(theoretical_threshold_from_terms(t, &reference)?.s),
        None => None,
    };
    Ok(CrossRow {
        input: x.to_vec(),
        values: vec![interp, nf_out, relu_out, rho_out, ode_out, eul.rounded],
        nf_steps: h,
        orbit_bound: bound,
        s0,
        rho_relative_error: rho_err,
        tau: ode.tau,
        lambda: contraction.lambda,
        eta: contraction.eta,
        max_cycle_error: ode.cycle_errors.iter().cloned().fold(0.0, f64::max),
        halving_ratio: ode.halving_ratio.unwrap_or(f64::NAN),
        window_samples: ode.window_outputs.len(),
        hold_drift: ode.hold_drift,
        empirical_s: s_emp,
        euler_n: eul.n,
        theoretical_s,
    })
}

/// Rows for every input; `Mismatch` names the first disagreeing input.
pub fn cross_check(b: &Backends, inputs: &[Vec<u64>], cfg: &CrossConfig) -> Result<Vec<CrossRow>> {
    let rows = inputs.iter().map(|x| cross_row(b, x, cfg)).collect::<Result<Vec<_>>>()?;
    if let Some(r) = rows.iter().find(|r| !r.agree()) {
        let detail: Vec<String> = BACKENDS.iter().zip(&r.values).map(|(k, v)| format!("{k}={v:?}")).collect();
        return Err(Error::Mismatch(format!("{}{:?}: {}", b.program.name, r.input, detail.join(" "))));
    }
    Ok(rows)
}

/// Exactness of the hard models on one input: integral NF states and gate
/// arguments, Strict and UniformMargin traces equal, and ReLU iterate `n`
/// equal to NF state `2n`.
pub fn hard_exactness(b: &Backends, x: &[u64]) -> Result<()> {
    let xb: Vec<BigInt> = x.iter().map(|&v| BigInt::from(v)).collect();
    let cap = default_cap(&interpret_u64(&b.program, x)?);
    let strict = nf_run(&b.nf, &xb, cap, ThetaMode::Strict)?;
    lattice_report(&b.nf, &strict).map_err(Error::Mismatch)?;
    let margin = nf_run(&b.nf, &xb, cap, ThetaMode::UniformMargin)?;
    if margin != strict {
        return Err(Error::Mismatch(format!("{}{x:?}: threshold modes disagree", b.program.name)));
    }
    let h = strict.halted_at.expect("halted");
    let relu = relu_run(&b.relu, &xb, h / 2)?;
    for (n, y) in relu.states.iter().enumerate() {
        if y != &strict.states[2 * n] {
            return Err(Error::Mismatch(format!(
                "{}{x:?}: ReLU iterate {n} differs from NF step {}",
                b.program.name,
                2 * n
            )));
        }
    }
    Ok(())
}

/// Accepted range of the error ratio when the Euler step halves.
pub const FIRST_ORDER_RATIO: (f64, f64) = (0.3, 0.7);
/// Step exponents of the first-order check.
pub const RATIO_STEPS: (u32, u32) = (8, 9);
/// RK4 steps per cycle of the reference solution.
pub const REFERENCE_STEPS_PER_CYCLE: u32 = 1024;

/// Global Euler error over the window at `h` and `h/2`.
pub fn euler_deviation_ratio(b: &Backends, x: &[u64], tau_v: u64) -> Result<(f64, f64)> {
    let xb: Vec<BigInt> = x.iter().map(|&v| BigInt::from(v)).collect();
    let mut devs = [0.0; 2];
    for (k, s) in [RATIO_STEPS.0, RATIO_STEPS.1].into_iter().enumerate() {
        let run = euler_run(&b.euler, &xb, tau_v, s)?;
        let reference = reference_window(&b.ode, &xb, &run.window_times, REFERENCE_STEPS_PER_CYCLE)?;
        devs[k] = window_deviation(&run, &reference);
    }
    Ok((devs[0], devs[1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pi_is_enclosed_tightly() {
        let p = pi_enclosure(100);
        assert!(to_f64(&p.lo) <= std::f64::consts::PI && std::f64::consts::PI <= to_f64(&p.hi));
        assert!(p.width() < pow2(-95));
    }

    #[test]
    fn sine_enclosure_matches_float() {
        for k in -12..=12 {
            let t = qr(k, 4);
            let s = sin_enclosure(&Interval::point(t.clone()), 80);
            let f = to_f64(&t).sin();
            assert!(to_f64(&s.lo) - 1e-15 <= f && f <= to_f64(&s.hi) + 1e-15);
            assert!(s.width() < pow2(-70));
        }
    }
}
