mod common;

use std::cell::Cell;

use common::{big, oracle};
use dyncomp::corpus;
use dyncomp::loop_lang::interpret_u64;
use dyncomp::normal_form::{compile_to_nf, default_cap, nf_run, nf_step, NormalForm, ThetaMode};
use dyncomp::num::{from_f64, pow2, qi, qr, qz, round_q, to_f64, Q};
use dyncomp::ode::{measure_cycle_contraction, ode_run, OdeConfig};
use dyncomp::poly::{FieldBuilder, PolyField};
use dyncomp::trace::{Roles, Trace};
use dyncomp::verify::*;
use dyncomp::Error;
use num_bigint::BigInt;
use num_traits::{Signed, Zero};
use proptest::prelude::*;

fn nf_of(name: &str) -> NormalForm {
    compile_to_nf(&corpus::program(name).unwrap())
}

fn reference(nf: &NormalForm, name: &str, x: &[u64]) -> Trace {
    let cap = default_cap(&interpret_u64(&corpus::program(name).unwrap(), x).unwrap());
    nf_run(nf, &big(x), cap, ThetaMode::Strict).unwrap()
}

fn lattice_points(tr: &Trace) -> Vec<Vec<BigInt>> {
    tr.states.iter().map(|s| s.iter().map(|q| q.to_integer()).collect()).collect()
}

fn all_coords(nf: &NormalForm) -> Vec<usize> {
    (0..nf.m).collect()
}

fn shifted<'a>(nf: &'a NormalForm, coord: usize, by: Q) -> impl Fn(&[Q]) -> dyncomp::Result<Vec<Q>> + 'a {
    move |y: &[Q]| {
        let mut out = nf_step(nf, y, ThetaMode::Strict)?;
        out[coord] += &by;
        Ok(out)
    }
}

#[test]
fn constant_shifts_on_one_coordinate() {
    let nf = nf_of("add");
    let pts = lattice_points(&reference(&nf, "add", &[2, 3]));
    let exact = |y: &[Q]| nf_step(&nf, y, ThetaMode::Strict);
    let rep = check_integer_faithful(&exact, &exact, &pts).unwrap();
    assert!(rep.pass() && rep.max_deviation.is_zero());
    let rep = check_integer_faithful(&shifted(&nf, 0, qr(2, 5)), &exact, &pts).unwrap();
    assert!(rep.pass());
    assert_eq!(rep.max_deviation, qr(2, 5));
    let rep = check_integer_faithful(&shifted(&nf, 0, qr(3, 5)), &exact, &pts).unwrap();
    assert_eq!(rep.witness.as_ref(), Some(&pts[0]));
    assert_eq!(rep.max_deviation, qr(3, 5));
}

#[test]
fn bounded_noise_is_integer_faithful() {
    for (name, x) in [("add", vec![2, 3]), ("mul", vec![2, 2]), ("triangular", vec![3])] {
        let nf = nf_of(name);
        let tr = reference(&nf, name, &x);
        let noisy = NoisyStep::new(&nf, qr(3, 10), all_coords(&nf), 7);
        let exact = |y: &[Q]| nf_step(&nf, y, ThetaMode::Strict);
        let rep = check_integer_faithful(&|y| noisy.apply(y), &exact, &lattice_points(&tr)).unwrap();
        assert!(rep.pass(), "{name}");
        assert!(rep.max_deviation <= qr(3, 10));
        assert!(rep.max_deviation > Q::zero());
    }
    let nf = nf_of("add");
    let tr = reference(&nf, "add", &[3, 3]);
    let noisy = NoisyStep::new(&nf, qi(2), all_coords(&nf), 1);
    let exact = |y: &[Q]| nf_step(&nf, y, ThetaMode::Strict);
    let rep = check_integer_faithful(&|y| noisy.apply(y), &exact, &lattice_points(&tr)).unwrap();
    assert!(!rep.pass());
    assert!(rep.max_deviation >= qr(1, 2));
}

#[test]
fn non_lattice_map_is_rejected() {
    let half = |y: &[Q]| Ok(y.iter().map(|v| v / qi(2)).collect());
    let res = check_integer_faithful(&half, &half, &[vec![BigInt::from(1)]]);
    assert!(matches!(res, Err(Error::NotLatticePreserving(_))));
}

#[test]
fn decoded_orbit_tracks_the_exact_orbit() {
    for p in corpus::all() {
        let nf = compile_to_nf(&p);
        let x = vec![2; p.in_arity];
        let tr = reference(&nf, &p.name, &x);
        let steps = tr.len() - 1;
        for amp in [qi(0), qr(3, 10)] {
            let noisy = NoisyStep::new(&nf, amp, nf.layout["data"].clone(), 11);
            let dec = decoded_shadow_run(&|y| noisy.apply(y), &tr, steps).unwrap();
            assert_eq!(dec.states, tr.states, "{}", p.name);
        }
    }
}

#[test]
fn decoded_orbit_diverges_under_large_noise() {
    let nf = nf_of("mul");
    let tr = reference(&nf, "mul", &[3, 3]);
    let noisy = NoisyStep::new(&nf, qr(51, 100), nf.layout["data"].clone(), 3);
    let res = decoded_shadow_run(&|y| noisy.apply(y), &tr, tr.len() - 1);
    assert!(matches!(res, Err(Error::DecodeDiverged(n)) if n >= 1));
    assert!(matches!(decoded_shadow_run(&|y| noisy.apply(y), &tr, tr.len()), Err(Error::Invalid(_))));
}

/// `Φ(z) = P(round z) + λ(z − round z) + ξ` with a deterministic `ξ`.
fn contracting_map<'a>(nf: &'a NormalForm, lambda: Q, xi: Q) -> impl Fn(&[Q]) -> dyncomp::Result<Vec<Q>> + 'a {
    move |z: &[Q]| {
        let r: Vec<Q> = z.iter().map(|v| qz(&round_q(v))).collect();
        let p = nf_step(nf, &r, ThetaMode::Strict)?;
        Ok(p.iter().zip(z.iter().zip(&r)).map(|(pv, (zv, rv))| pv + &lambda * (zv - rv) + &xi).collect())
    }
}

#[test]
fn gronwall_bound_holds_for_a_contracting_perturbation() {
    for (name, x) in [("add", vec![2, 1]), ("triangular", vec![3]), ("min", vec![3, 2])] {
        let nf = nf_of(name);
        let tr = reference(&nf, name, &x);
        let (l, eps) = (qr(1, 2), qr(1, 100));
        let phi = contracting_map(&nf, l.clone(), eps.clone());
        let rep = gronwall_verify(&tr, &phi, &l, &eps, &qr(1, 4)).unwrap();
        assert!(rep.pass());
        // double entry: re-derive every error from the stored states
        for (n, z) in rep.states.iter().enumerate() {
            let e = z.iter().zip(&tr.states[n]).map(|(a, b)| (a - b).abs()).max().unwrap();
            assert_eq!(e, rep.errors[n]);
            assert!(e <= rep.bounds[n]);
        }
        // closed form of the recursion with equality
        let n = rep.errors.len() - 1;
        assert_eq!(rep.errors[n], &eps * (qi(1) - num_traits::pow(l.clone(), n)) / (qi(1) - &l));
    }
}

#[test]
fn exact_map_has_zero_error_inside_a_short_tube() {
    let nf = nf_of("succ");
    let full = reference(&nf, "succ", &[1]);
    let mut tr = full.clone();
    tr.states.truncate(4);
    let exact = |y: &[Q]| nf_step(&nf, y, ThetaMode::Strict);
    let rep = gronwall_verify(&tr, &exact, &qr(1, 2), &qr(1, 8), &qr(1, 4)).unwrap();
    assert_eq!(rep.bounds[3], qr(7, 32));
    assert!(rep.errors.iter().all(Zero::is_zero));
    assert!(rep.pass());
}

#[test]
fn oversized_perturbation_is_reported_at_the_first_step() {
    let nf = nf_of("add");
    let tr = reference(&nf, "add", &[2, 1]);
    let (l, eps) = (qr(1, 2), qr(1, 100));
    let phi = contracting_map(&nf, l.clone(), &eps * qi(2));
    assert!(matches!(gronwall_verify(&tr, &phi, &l, &eps, &qr(1, 4)), Err(Error::BoundViolated { step: 1, .. })));
}

#[test]
fn tube_condition_is_enforced() {
    let nf = nf_of("triangular");
    let tr = reference(&nf, "triangular", &[3]);
    let phi = contracting_map(&nf, qi(1), qr(1, 10));
    assert!(matches!(gronwall_verify(&tr, &phi, &qi(1), &qr(1, 10), &qr(1, 4)), Err(Error::TubeViolated(_))));
    assert!(matches!(gronwall_verify(&tr, &phi, &qi(1), &qr(1, 10), &qi(0)), Err(Error::Invalid(_))));
}

#[test]
fn ode_cycle_map_satisfies_the_gronwall_bound() {
    let nf = nf_of("add");
    let x = [2u64, 1];
    let tr = reference(&nf, "add", &x);
    let prog = dyncomp::ode::compile_nf_to_ode(&nf, &Default::default()).unwrap();
    let run = ode_run(&prog, &nf, &tr, &big(&x), &OdeConfig::default()).unwrap();
    let c = measure_cycle_contraction(&run).unwrap();
    let cycles: Vec<Vec<Q>> =
        run.cycle_states.iter().map(|s| s[..nf.m].iter().map(|v| from_f64(*v)).collect()).collect();
    // reference aligned with the cycles: the halted state is followed by one more step
    let mut aligned = tr.clone();
    aligned.states.truncate(tr.halted_at.unwrap() + 1);
    aligned.states.push(nf_step(&nf, aligned.last(), ThetaMode::Strict).unwrap());
    let l = from_f64(c.lambda);
    // exact offset of the sampled recursion
    let errs: Vec<Q> = run.cycle_errors.iter().map(|e| from_f64(*e)).collect();
    let eps = errs.windows(2).map(|w| &w[1] - &l * &w[0]).max().unwrap().max(Q::zero());
    assert!((to_f64(&eps) - c.eta).abs() <= 1e-15);
    let n = Cell::new(0usize);
    let phi = |_: &[Q]| {
        n.set(n.get() + 1);
        Ok(cycles[n.get()].clone())
    };
    let rep = gronwall_verify(&aligned, &phi, &l, &eps, &qr(1, 4)).unwrap();
    assert!(rep.pass());
    assert_eq!(rep.errors, errs);
}

fn coeffs(c: &[i64]) -> Vec<Q> {
    c.iter().map(|&v| qi(v)).collect()
}

#[test]
fn rounder_witness_examples() {
    let (delta, eps) = (qr(2, 5), qr(1, 10));
    let id = coeffs(&[0, 1]);
    let w = rounder_witness(&id, 1, &delta, &eps, 2).unwrap();
    assert_eq!((w.u.clone(), w.m.clone(), w.value.clone()), (qr(2, 5), BigInt::from(0), qr(2, 5)));
    assert!(w.holds(&id, 1, &delta));
    // p = id + c with |c| ≤ ε passes at u = m, so the witness sits at ±δ
    for c in [qr(-1, 10), qr(0, 1), qr(1, 20)] {
        let p = vec![c.clone(), qi(1)];
        let w = rounder_witness(&p, 1, &delta, &eps, 2).unwrap();
        assert_eq!((&w.u - qz(&w.m)).abs(), delta, "c = {}", to_f64(&c));
        assert!(w.holds(&p, 1, &delta));
    }
    assert!(matches!(rounder_witness(&id, 1, &eps, &delta, 2), Err(Error::Invalid(_))));
    // ε must stay below δ
    assert!(matches!(rounder_witness(&id, 1, &qr(1, 20), &qr(1, 10), 2), Err(Error::Invalid(_))));
}

#[test]
fn cubic_contraction_variants_have_witnesses() {
    let (delta, eps) = (qr(2, 5), qr(1, 10));
    for a in [qr(1, 4), qr(1, 2), qi(1), qi(2)] {
        // u − a·u(1 − u)(1 + u) = u − a·u + a·u³
        let p = vec![qi(0), qi(1) - &a, qi(0), a.clone()];
        for n in 1..=3u32 {
            let w = rounder_witness(&p, n, &delta, &eps, 3 * u64::from(n) + 2).unwrap();
            assert!(w.holds(&p, n, &delta), "a = {}, N = {n}", to_f64(&a));
        }
    }
}

#[test]
fn every_small_polynomial_has_a_rounder_witness() {
    let (delta, eps) = (qr(2, 5), qr(1, 10));
    let mut count = 0;
    for code in 0..625usize {
        let c: Vec<i64> = (0..4).map(|k| (code / 5usize.pow(k)) as i64 % 5 - 2).collect();
        let deg = c.iter().rposition(|v| *v != 0).unwrap_or(0) as u64;
        for n in 1..=2u32 {
            let w = rounder_witness(&coeffs(&c), n, &delta, &eps, deg * u64::from(n) + 2)
                .unwrap_or_else(|e| panic!("{c:?}, N = {n}: {e}"));
            assert!(w.holds(&coeffs(&c), n, &delta));
            count += 1;
        }
    }
    assert_eq!(count, 1250);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn rounder_witness_validates(c in proptest::collection::vec(-3i64..=3, 1..5), n in 1u32..4, dk in 2i64..8) {
        let delta = qr(1, 2 * dk);
        let eps = &delta / qi(2);
        let deg = c.len() as u64;
        let w = rounder_witness(&coeffs(&c), n, &delta, &eps, deg * u64::from(n) + 2).unwrap();
        prop_assert!(w.holds(&coeffs(&c), n, &delta));
    }
}

fn field(dim: usize, build: impl FnOnce(&mut FieldBuilder) -> Vec<usize>) -> PolyField {
    let mut b = FieldBuilder::new();
    let roots = build(&mut b);
    b.finish(dim, roots, Roles::new()).unwrap()
}

#[test]
fn selector_witness_examples() {
    let id = field(1, |b| vec![b.var(0)]);
    let w = selector_witness(&id, 0, 4, 4).unwrap();
    assert_eq!((w.c, w.n), (1, 1));
    assert!(w.holds(&id, 0));
    // counter down with a constant selector output
    let down = field(2, |b| {
        let c = b.var(0);
        let one = b.int(1);
        vec![b.sub(c, one), one]
    });
    let w = selector_witness(&down, 1, 4, 4).unwrap();
    assert!(w.holds(&down, 1));
    assert_eq!((w.c, w.n, w.value.clone(), w.required.clone()), (1, 1, qi(1), qi(0)));
    assert!(matches!(selector_witness(&id, 0, 0, 3), Err(Error::Invalid(_))));
}

#[test]
fn sampled_polynomial_selectors_fail() {
    for seed in 0..8u64 {
        let p = sampled_selector(seed);
        let bound = selector_bound(&p);
        assert_eq!(bound, (2 * p.degree() as u64 * p.dim as u64).max(4));
        let i = seed as usize % p.dim;
        let w = selector_witness(&p, i, bound, bound).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        assert!(w.holds(&p, i), "seed {seed}");
    }
    assert_eq!(sampled_selector(3), sampled_selector(3));
}

#[test]
fn continuous_rounder_fixes_integers_only() {
    let quarter = to_f64(&continuous_rounder_iterate(&qr(1, 4), 1));
    assert!((quarter - (0.25 - 1.0 / std::f64::consts::TAU)).abs() < 1e-15);
    assert!((quarter - 0.0908).abs() < 5e-5);
    for m in -3..=3 {
        assert_eq!(continuous_rounder_iterate(&qi(m), 1), qi(m));
        assert_eq!(continuous_rounder_iterate(&qi(m), 5), qi(m));
        for k in 1..8 {
            let u = qi(m) + qr(k, 8) - qr(1, 2);
            if k == 4 {
                continue;
            }
            let e = sigma_enclosure(&Interval::point(u.clone()), SIGMA_BITS);
            assert!(!e.contains(&u), "{}", to_f64(&u));
        }
    }
}

#[test]
fn continuous_rounder_matches_float() {
    for k in -20..=20 {
        let x = qr(k, 7);
        let f = to_f64(&x);
        let tau = std::f64::consts::TAU;
        let want = f - (tau * f).sin() / tau;
        let got = to_f64(&continuous_rounder_iterate(&x, 1));
        assert!((got - want).abs() < 1e-14, "{f}: {got} vs {want}");
        let e = sigma_iterate_enclosure(&x, 3, SIGMA_BITS);
        assert!(e.width() < pow2(-140));
    }
}

#[test]
fn five_iterates_round_within_tolerance() {
    let tol = qr(1, 1000);
    let mut lambda_eff = 0.0f64;
    for m in -2..=2 {
        for k in -40..=40 {
            let d = qr(k, 100);
            let e = sigma_iterate_enclosure(&(qi(m) + &d), 5, SIGMA_BITS);
            let dev = (&e.hi - qi(m)).abs().max((&e.lo - qi(m)).abs());
            assert!(dev <= tol, "m = {m}, δ = {}", to_f64(&d));
            if !d.is_zero() {
                lambda_eff = lambda_eff.max((to_f64(&dev) / to_f64(&d.abs())).powf(0.2));
            }
        }
    }
    assert!(lambda_eff.powi(5) * 0.4 < 1e-3);
    // the one-step worst case over the whole band is much weaker
    let offsets: Vec<Q> = (-40..=40).map(|k| qr(k, 100)).collect();
    let uniform = sigma_contraction(&[-2, 0, 3], &offsets);
    assert!(uniform > lambda_eff && uniform < 0.8);
}

#[test]
fn cross_check_agrees_on_small_inputs() {
    let cfg = CrossConfig { theoretical: false, ..Default::default() };
    for (name, inputs) in [("succ", vec![vec![0], vec![2]]), ("monus", vec![vec![1, 2], vec![3, 1]])] {
        let p = corpus::program(name).unwrap();
        let b = Backends::compile(&p, &cfg).unwrap();
        let rows = cross_check(&b, &inputs, &cfg).unwrap();
        for (row, x) in rows.iter().zip(&inputs) {
            let want: Vec<BigInt> = oracle(name, x).into_iter().map(BigInt::from).collect();
            assert_eq!(row.values.len(), BACKENDS.len());
            assert!(row.values.iter().all(|v| v == &want), "{name}{x:?}");
            assert!(row.rho_relative_error <= pow2(-row.s0.to_string().parse::<i64>().unwrap()));
            assert!(row.window_samples >= 10);
            assert!(row.theoretical_s.is_none());
            let j = row.to_json();
            assert_eq!(j["agree"], true);
            assert_eq!(serde_json::to_string(&j).unwrap(), serde_json::to_string(&row.to_json()).unwrap());
        }
        hard_exactness(&b, &inputs[0]).unwrap();
    }
}

#[test]
fn corrupted_normal_form_is_a_mismatch() {
    let cfg = CrossConfig { theoretical: false, ..Default::default() };
    let p = corpus::program("succ").unwrap();
    let mut nf = compile_to_nf(&p);
    nf.outputs = vec![0];
    let b = Backends::from_nf(&p, nf, &cfg).unwrap();
    let r = cross_check(&b, &[vec![2]], &cfg);
    assert!(matches!(r, Err(Error::Mismatch(_))), "{r:?}");
}
