//! Clocked polynomial ODE simulating the normal form, one step per cycle.
//!
//! State layout: the `state` block `v` (a copy of the normal-form state, so
//! the first coordinates carry the input), the `buffer` block `u`, the clock
//! pair `(c1, c2)` and, for every tested register, a shadow code pair
//! tracking `2^{-R}`. With `c1 = cos t`, `c2 = sin t`:
//!
//! * during `(0, π)` the driver `A((1+c2)/2)^K` pulls `u` to the one-step
//!   target `P(v)`, computed by polynomial gates on `v` and the shadows;
//! * during `(π, 2π)` the driver `A((1−c2)/2)^K` pulls `v` to `u`, with
//!   control bits passed through the smoothstep `3u² − 2u³`.
//!
//! Sampling `v` at `t = 2πn` therefore shadows the normal-form orbit.

use std::f64::consts::PI;

use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::integrate::{integrate, Arithmetic, IntegratorConfig, Method, SampledTrace};
use crate::normal_form::{nf_step, trace_bound, GateShape, NormalForm, ThetaMode};
use crate::num::{fmt_q, from_f64, parse_q, pow2, qi, qr, Q};
use crate::poly::{Expr, FieldBuilder, PolyField};
use crate::rho::nu_encode;
use crate::trace::{Roles, Trace};

#[derive(Debug, Clone, PartialEq)]
pub struct GadgetParams {
    /// Driver sharpness, even.
    pub k: u32,
    /// Driver amplitude `A` (the relaxation rate at the pulse peak).
    pub rate: Q,
    /// Radial stabilization of the clock.
    pub gamma: Q,
}

impl Default for GadgetParams {
    fn default() -> Self {
        GadgetParams { k: 48, rate: qi(48), gamma: qi(1) }
    }
}

impl GadgetParams {
    /// Search grid: the default sharpness with increasing rates.
    pub fn default_grid() -> Vec<GadgetParams> {
        [24, 32, 48, 64].iter().map(|&a| GadgetParams { rate: qi(a), ..GadgetParams::default() }).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 || !self.k.is_multiple_of(2) {
            return Err(Error::InadmissibleParameters(format!(
                "driver sharpness {} must be even and at least 2",
                self.k
            )));
        }
        if self.rate <= Q::zero() || self.gamma < Q::zero() {
            return Err(Error::InadmissibleParameters("driver rate must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        json!({"K": self.k, "rate": fmt_q(&self.rate), "gamma": fmt_q(&self.gamma)})
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let bad = || Error::Invalid("gadget parameters".into());
        Ok(GadgetParams {
            k: v["K"].as_u64().ok_or_else(bad)? as u32,
            rate: parse_q(v["rate"].as_str().ok_or_else(bad)?)?,
            gamma: parse_q(v["gamma"].as_str().ok_or_else(bad)?)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeProgram {
    pub field: PolyField,
    pub params: GadgetParams,
    /// Normal-form dimension; `v` is `0..m`, `u` is `m..2m`.
    pub m: usize,
    pub inputs: usize,
    pub clock: (usize, usize),
    /// `(register, shadow in v, shadow in u)`.
    pub shadows: Vec<(usize, usize, usize)>,
    /// Normal-form coordinates that are registers (not control bits).
    pub registers: Vec<usize>,
    pub outputs: Vec<usize>,
    pub cycles_per_machine_step: usize,
}

pub fn compile_nf_to_ode(nf: &NormalForm, params: &GadgetParams) -> Result<OdeProgram> {
    params.validate()?;
    nf.check_dims()?;
    nf.check_translation_gated()?;
    let m = nf.m;
    let ctl = nf.control_mask();
    let shapes = (0..nf.gated.len()).map(|j| nf.gate_shape(j)).collect::<Result<Vec<_>>>()?;
    let mut tested: Vec<usize> =
        shapes.iter().filter_map(|s| if let GateShape::Positive { coord } = s { Some(*coord) } else { None }).collect();
    tested.sort_unstable();
    tested.dedup();
    let clock = (2 * m, 2 * m + 1);
    let shadows: Vec<(usize, usize, usize)> =
        tested.iter().enumerate().map(|(k, &r)| (r, 2 * m + 2 + 2 * k, 2 * m + 3 + 2 * k)).collect();
    let dim = 2 * m + 2 + 2 * shadows.len();
    let shadow_of = |r: usize| shadows.iter().find(|s| s.0 == r).expect("tested register has a shadow");
    let pc: Vec<usize> = nf.role("pc").to_vec();

    let mut b = FieldBuilder::new();
    let one = b.int(1);
    let c1 = b.var(clock.0);
    let c2 = b.var(clock.1);
    let half = qr(1, 2);
    let up = b.add(one, c2);
    let up = b.scale(half.clone(), up);
    let up = b.pow(up, params.k);
    let drive_u = b.scale(params.rate.clone(), up);
    let down = b.sub(one, c2);
    let down = b.scale(half, down);
    let down = b.pow(down, params.k);
    let drive_v = b.scale(params.rate.clone(), down);

    // gates
    let mut gates: Vec<Expr> = Vec::with_capacity(shapes.len());
    for shape in &shapes {
        let g = match shape {
            GateShape::Positive { coord } => {
                // Θ(R) = 1 − ψ(ν(R)), ψ(z) = (z(2 − z))^{2K}
                let z = b.var(shadow_of(*coord).1);
                let two = b.int(2);
                let w = b.sub(two, z);
                let w = b.mul(z, w);
                let psi = b.pow(w, 2 * params.k);
                b.sub(one, psi)
            }
            GateShape::Conjunction { pos, neg } => {
                let mut lits: Vec<Expr> = pos.iter().map(|&i| b.var(i)).collect();
                let (neg_pc, neg_rest): (Vec<usize>, Vec<usize>) = neg.iter().partition(|i| pc.contains(i));
                // pc bits are mutually exclusive, so ¬b1 ∧ … ∧ ¬bn = 1 − Σ b
                if neg_pc.len() >= 2 {
                    let vs: Vec<Expr> = neg_pc.iter().map(|&i| b.var(i)).collect();
                    let s = b.sum(vs);
                    lits.push(b.sub(one, s));
                } else {
                    for &i in &neg_pc {
                        let x = b.var(i);
                        lits.push(b.sub(one, x));
                    }
                }
                for &i in &neg_rest {
                    let x = b.var(i);
                    lits.push(b.sub(one, x));
                }
                b.prod(lits)
            }
        };
        gates.push(g);
    }

    let affine_row = |b: &mut FieldBuilder, a: &crate::normal_form::IntAffine, r: usize| -> Expr {
        let mut acc = b.c(Q::from_integer(a.offset[r].clone()));
        for (c, v) in &a.entries[r] {
            let x = b.var(*c);
            let t = b.scale(Q::from_integer(v.clone()), x);
            acc = b.add(acc, t);
        }
        acc
    };

    let mut roots: Vec<Expr> = vec![0; dim];
    for i in 0..m {
        let v = b.var(i);
        let u = b.var(m + i);
        let mut target = affine_row(&mut b, &nf.base, i);
        for (j, g) in nf.gated.iter().enumerate() {
            if g.a.offset[i].is_zero() && g.a.entries[i].is_empty() {
                continue;
            }
            let a = affine_row(&mut b, &g.a, i);
            let t = b.mul(gates[j], a);
            target = b.add(target, t);
        }
        let du = b.sub(target, u);
        roots[m + i] = b.mul(drive_u, du);
        let pulled = if ctl[i] {
            // smoothstep 3u² − 2u³ cleans bits toward {0, 1}
            let u2 = b.pow(u, 2);
            let u3 = b.pow(u, 3);
            let a = b.scale(qi(3), u2);
            let c = b.scale(qi(2), u3);
            b.sub(a, c)
        } else {
            u
        };
        let dv = b.sub(pulled, v);
        roots[i] = b.mul(drive_v, dv);
    }
    for &(r, zv, zu) in &shadows {
        let zvx = b.var(zv);
        let zux = b.var(zu);
        let mut factor = one;
        for (j, g) in nf.gated.iter().enumerate() {
            let c = &g.a.offset[r];
            if c.is_zero() {
                continue;
            }
            let scale = pow2(-c.to_i64().ok_or(Error::Overflow)?) - qi(1);
            let t = b.scale(scale, gates[j]);
            factor = b.add(factor, t);
        }
        let base_shift = pow2(-nf.base.offset[r].to_i64().ok_or(Error::Overflow)?);
        let target = b.mul(zvx, factor);
        let target = b.scale(base_shift, target);
        let d = b.sub(target, zux);
        roots[zu] = b.mul(drive_u, d);
        let d = b.sub(zux, zvx);
        roots[zv] = b.mul(drive_v, d);
    }
    // c1' = −c2 + γ c1 (1 − |c|²), c2' = c1 + γ c2 (1 − |c|²)
    let c1s = b.pow(c1, 2);
    let c2s = b.pow(c2, 2);
    let r2 = b.add(c1s, c2s);
    let radial = b.sub(one, r2);
    let radial = b.scale(params.gamma.clone(), radial);
    let t1 = b.mul(c1, radial);
    let t2 = b.mul(c2, radial);
    let zero = b.int(0);
    let mc2 = b.sub(zero, c2);
    roots[clock.0] = b.add(mc2, t1);
    roots[clock.1] = b.add(c1, t2);

    let mut roles = Roles::new();
    for (name, idx) in &nf.layout {
        roles.insert(name.clone(), idx.clone());
        roles.insert(format!("buffer.{name}"), idx.iter().map(|i| m + i).collect());
    }
    roles.insert("clock".into(), vec![clock.0, clock.1]);
    roles.insert("shadow".into(), shadows.iter().map(|s| s.1).collect());
    roles.insert("buffer.shadow".into(), shadows.iter().map(|s| s.2).collect());
    let field = b.finish(dim, roots, roles)?;
    Ok(OdeProgram {
        field,
        params: params.clone(),
        m,
        inputs: nf.inputs,
        clock,
        shadows,
        registers: (0..m).filter(|&i| !ctl[i]).collect(),
        outputs: nf.outputs.clone(),
        cycles_per_machine_step: 2,
    })
}

impl OdeProgram {
    /// `v = u = (x, 0, …, 0)`, clock at `(1, 0)`, shadows at `ν` of the
    /// initial registers.
    pub fn initial_state(&self, x: &[BigInt]) -> Result<Vec<Q>> {
        if x.len() != self.inputs {
            return Err(Error::Arity(format!("program takes {} inputs, got {}", self.inputs, x.len())));
        }
        let mut y = vec![Q::zero(); self.field.dim];
        for (i, v) in x.iter().enumerate() {
            y[i] = Q::from_integer(v.clone());
            y[self.m + i] = y[i].clone();
        }
        y[self.clock.0] = qi(1);
        for &(r, zv, zu) in &self.shadows {
            let n = if r < x.len() {
                x[r].to_u64().ok_or_else(|| Error::Invalid("input is not a natural".into()))?
            } else {
                0
            };
            y[zv] = nu_encode(n);
            y[zu] = nu_encode(n);
        }
        Ok(y)
    }

    pub fn to_json(&self) -> Result<Value> {
        Ok(json!({
            "field": self.field.to_json()?,
            "params": self.params.to_json(),
            "m": self.m,
            "inputs": self.inputs,
            "clock": [self.clock.0, self.clock.1],
            "shadows": self.shadows.iter().map(|s| json!([s.0, s.1, s.2])).collect::<Vec<_>>(),
            "outputs": self.outputs,
            "cycles_per_machine_step": self.cycles_per_machine_step,
            "tau": "ceil(2*pi*(halted_at + 1))",
        }))
    }
}

/// Observation time: the start of the hold half of `v` one cycle after the
/// normal form halts at step `halted_at`, rounded up.
pub fn tau(halted_at: usize) -> u64 {
    (2.0 * PI * (halted_at as f64 + 1.0)).ceil() as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeConfig {
    pub steps_per_cycle: u32,
    pub arithmetic: Arithmetic,
    pub method: Method,
    /// Re-run at half the step and compare cycle samples.
    pub check_halving: bool,
}

impl Default for OdeConfig {
    fn default() -> Self {
        OdeConfig { steps_per_cycle: 128, arithmetic: Arithmetic::Float, method: Method::Rk4, check_halving: true }
    }
}

impl OdeConfig {
    pub fn integrator(&self) -> IntegratorConfig {
        IntegratorConfig {
            method: self.method,
            step: from_f64(2.0 * PI / f64::from(self.steps_per_cycle)),
            arithmetic: self.arithmetic,
        }
    }

    /// Declared integrator tolerance `step^order`.
    pub fn tolerance(&self) -> f64 {
        let h = 2.0 * PI / f64::from(self.steps_per_cycle);
        match self.method {
            Method::Rk4 => h.powi(4),
            Method::Euler => h,
        }
    }
}

/// Number of samples taken in the observation window `[τ, τ + 1]`.
pub const WINDOW_SAMPLES: usize = 11;

#[derive(Debug, Clone, PartialEq)]
pub struct OdeRun {
    pub tau: u64,
    pub halted_at: usize,
    /// `‖v(2πn) − y_n‖∞` for `n = 0..=halted_at + 1`.
    pub cycle_errors: Vec<f64>,
    pub cycle_states: Vec<Vec<f64>>,
    pub window_times: Vec<Q>,
    pub window_outputs: Vec<Vec<f64>>,
    /// `B̃(x) = B + 2` with `B` the reference orbit bound.
    pub safety_bound: u64,
    pub max_abs: f64,
    /// `max |c1² + c2² − 1|` over samples.
    pub clock_drift: f64,
    /// Largest move of a register coordinate of `v` over a hold half.
    pub hold_drift: f64,
    /// Largest `‖Δ cycle sample‖ / (1/4 − e_n)` under step halving.
    pub halving_ratio: Option<f64>,
    pub samples: SampledTrace,
}

fn cycle_samples(cfg: &OdeConfig, cycles: usize, tau_v: u64) -> Vec<(Q, Option<usize>)> {
    let step = cfg.integrator().step;
    let n_c = i64::from(cfg.steps_per_cycle);
    let mut s: Vec<(Q, Option<usize>)> = Vec::new();
    for n in 0..=cycles {
        s.push((&step * qi(n as i64 * n_c), Some(n)));
        if n < cycles {
            s.push((&step * qi(n as i64 * n_c + n_c / 2), None));
        }
    }
    for j in 0..WINDOW_SAMPLES {
        s.push((qi(tau_v as i64) + qr(j as i64, (WINDOW_SAMPLES - 1) as i64), None));
    }
    s.sort_by(|a, b| a.0.cmp(&b.0));
    s
}

/// Integrates the program against a halted reference orbit and collects the
/// per-cycle shadowing data.
pub fn ode_run(prog: &OdeProgram, nf: &NormalForm, reference: &Trace, x: &[BigInt], cfg: &OdeConfig) -> Result<OdeRun> {
    let h = reference.halted_at.ok_or_else(|| Error::Invalid("reference orbit did not halt".into()))?;
    let mut ys: Vec<Vec<Q>> = reference.states[..=h].to_vec();
    ys.push(nf_step(nf, &ys[h], ThetaMode::Strict)?);
    let tau_v = tau(h);
    let cycles = h + 1;
    let y0 = prog.initial_state(x)?;
    let t_end = qi(tau_v as i64 + 1);
    let samples = cycle_samples(cfg, cycles, tau_v);
    let tr = integrate(&prog.field, &y0, &t_end, &cfg.integrator(), &samples)?;

    let mut cycle_states = vec![Vec::new(); cycles + 1];
    let mut half_states = vec![Vec::new(); cycles];
    let mut window_times = Vec::new();
    let mut window_outputs = Vec::new();
    let step = cfg.integrator().step;
    let n_c = i64::from(cfg.steps_per_cycle);
    for ((t, st), tag) in tr.times.iter().zip(&tr.states).zip(&tr.cycles) {
        if let Some(n) = tag {
            cycle_states[*n] = st.clone();
        } else if *t >= qi(tau_v as i64) {
            window_times.push(t.clone());
            window_outputs.push(prog.outputs.iter().map(|&i| st[i]).collect());
        } else {
            // half-cycle sample: t = (n·n_c + n_c/2)·step
            let n = ((t / &step).to_integer() / BigInt::from(n_c)).to_usize().unwrap_or(0);
            if n < cycles {
                half_states[n] = st.clone();
            }
        }
    }
    let cycle_errors: Vec<f64> = cycle_states
        .iter()
        .zip(&ys)
        .map(|(z, y)| (0..prog.m).fold(0.0f64, |a, i| a.max((z[i] - crate::num::to_f64(&y[i])).abs())))
        .collect();
    let clock_drift = tr.states.iter().fold(0.0f64, |a, st| {
        let (c1, c2) = (st[prog.clock.0], st[prog.clock.1]);
        a.max((c1 * c1 + c2 * c2 - 1.0).abs())
    });
    let hold_drift = (0..cycles).fold(0.0f64, |a, n| {
        prog.registers.iter().fold(a, |a, &i| a.max((half_states[n][i] - cycle_states[n][i]).abs()))
    });
    let bound = trace_bound(reference).ceil().to_integer().to_u64().unwrap_or(u64::MAX - 2) + 2;

    for (n, e) in cycle_errors.iter().enumerate() {
        if !(*e < 0.25) {
            return Err(Error::ContractViolated {
                cycle: n,
                detail: format!("sampled error {e:.3e} is not below 1/4"),
            });
        }
    }
    let halving_ratio = if cfg.check_halving {
        let fine = OdeConfig { steps_per_cycle: 2 * cfg.steps_per_cycle, check_halving: false, ..cfg.clone() };
        let fine_samples: Vec<(Q, Option<usize>)> =
            (0..=cycles).map(|n| (fine.integrator().step * qi(n as i64 * 2 * n_c), Some(n))).collect();
        let fine_tr =
            integrate(&prog.field, &y0, &fine_samples.last().expect("cycles").0, &fine.integrator(), &fine_samples)?;
        let mut worst = 0.0f64;
        for (n, st) in fine_tr.states.iter().enumerate() {
            let change = (0..prog.m).fold(0.0f64, |a, i| a.max((st[i] - cycle_states[n][i]).abs()));
            let tolerance = 0.1 * (0.25 - cycle_errors[n]);
            if change >= tolerance {
                return Err(Error::StepUnstable { cycle: n, change, tolerance });
            }
            worst = worst.max(change / (0.25 - cycle_errors[n]));
        }
        Some(worst)
    } else {
        None
    };
    Ok(OdeRun {
        tau: tau_v,
        halted_at: h,
        cycle_errors,
        cycle_states,
        window_times,
        window_outputs,
        safety_bound: bound,
        max_abs: tr.max_abs,
        clock_drift,
        hold_drift,
        halving_ratio,
        samples: tr,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contraction {
    pub lambda: f64,
    pub eta: f64,
}

impl Contraction {
    /// `η/(1 − λ)`, the stationary error level of the recursion.
    pub fn stationary(&self) -> f64 {
        self.eta / (1.0 - self.lambda)
    }
}

/// Fits `e_{n+1} ≤ λ e_n + η` to the sampled errors: for each `λ` on a grid
/// in `[0, 1)`, `η(λ)` is the smallest admissible offset, and the pair with
/// the smallest `η/(1 − λ)` is returned.
pub fn measure_cycle_contraction(run: &OdeRun) -> Result<Contraction> {
    let e = &run.cycle_errors;
    let mut best: Option<Contraction> = None;
    for k in 0..64 {
        let lambda = f64::from(k) / 64.0;
        let eta = e.windows(2).fold(0.0f64, |a, w| a.max(w[1] - lambda * w[0]));
        let c = Contraction { lambda, eta };
        if best.is_none_or(|b| c.stationary() < b.stationary()) {
            best = Some(c);
        }
    }
    let c = best.expect("grid is nonempty");
    if !(c.stationary() < 0.25) {
        let worst = e.iter().enumerate().fold((0, 0.0f64), |a, (n, v)| if *v > a.1 { (n, *v) } else { a });
        return Err(Error::ContractViolated {
            cycle: worst.0,
            detail: format!("η/(1−λ) = {:.3e} is not below 1/4 (λ = {}, η = {:.3e})", c.stationary(), c.lambda, c.eta),
        });
    }
    Ok(c)
}

/// Rounds the outputs at every window sample; all samples must agree.
pub fn read_output(run: &OdeRun) -> Result<Vec<u64>> {
    if run.window_outputs.len() < 10 {
        return Err(Error::Invalid(format!("only {} samples in the observation window", run.window_outputs.len())));
    }
    let round = |v: &[f64]| -> Result<Vec<u64>> {
        v.iter()
            .map(|x| {
                let r = x.round();
                if r < 0.0 || !r.is_finite() {
                    Err(Error::WindowInconsistent(format!("output {x} does not round to a natural")))
                } else {
                    Ok(r as u64)
                }
            })
            .collect()
    };
    let first = round(&run.window_outputs[0])?;
    for (t, v) in run.window_times.iter().zip(&run.window_outputs).skip(1) {
        let r = round(v)?;
        if r != first {
            return Err(Error::WindowInconsistent(format!(
                "{first:?} at τ but {r:?} at t = {}",
                crate::num::fmt_decimal(t, 3)
            )));
        }
    }
    Ok(first)
}

/// First parameter pair on the grid whose probe runs meet the one-cycle
/// contract.
pub fn search_gadget(
    nf: &NormalForm,
    probes: &[(Vec<BigInt>, Trace)],
    grid: &[GadgetParams],
    cfg: &OdeConfig,
) -> Result<GadgetParams> {
    'grid: for p in grid {
        let Ok(prog) = compile_nf_to_ode(nf, p) else { continue };
        for (x, reference) in probes {
            let ok = ode_run(&prog, nf, reference, x, cfg).and_then(|r| measure_cycle_contraction(&r).map(|_| r));
            match ok {
                Ok(r) if read_output(&r).is_ok() => {}
                _ => continue 'grid,
            }
        }
        return Ok(p.clone());
    }
    Err(Error::GadgetBudgetUnsatisfiable)
}
