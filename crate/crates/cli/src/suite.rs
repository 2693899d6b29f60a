//! `verify`: cross-check and invariant suites over a manifest.

use std::path::Path;

use dyncomp::corpus::grid;
use dyncomp::normal_form::{default_cap, nf_run, NormalForm, ThetaMode};
use dyncomp::num::{fmt_q, qi, qr, to_f64, Q};
use dyncomp::ode::tau;
use dyncomp::verify::{
    continuous_rounder_iterate, cross_row, decoded_shadow_run, euler_deviation_ratio, gronwall_verify, hard_exactness,
    perturbed_nf_map, rounder_witness, sampled_selector, selector_bound, selector_witness, sigma_contraction,
    sigma_iterate_enclosure, Backends, CrossConfig, NoisyStep, BACKENDS, FIRST_ORDER_RATIO, RATIO_STEPS, SIGMA_BITS,
};
use dyncomp::Error;
use num_bigint::BigInt;
use num_traits::{Signed, Zero};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::opts::{BackendOpts, Format};
use crate::run::{load_program, pretty};
use crate::{emit, read_file, CmdResult, Failure};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    name: Option<String>,
    #[serde(default)]
    programs: Vec<Entry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    /// `.loop` source, relative to the manifest.
    file: String,
    /// Inputs are `{0..=grid_max}^d`.
    #[serde(default = "default_grid_max")]
    grid_max: u64,
    /// Serialized normal form used instead of compiling the source.
    nf: Option<String>,
    #[serde(default)]
    expected: Vec<Expected>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Expected {
    input: Vec<u64>,
    output: Vec<u64>,
}

fn default_grid_max() -> u64 {
    4
}

/// Noise amplitude of the decoded-shadowing check.
const DECODE_NOISE: (i64, i64) = (3, 10);
/// Contraction and offset of the injected Grönwall perturbation.
const PERTURBATION: ((i64, i64), (i64, i64)) = ((1, 2), (1, 100));
/// Offset and tolerance of the rounder sweep.
const ROUNDER_DELTA: (i64, i64) = (2, 5);
const ROUNDER_EPS: (i64, i64) = (1, 10);
const SELECTOR_SEEDS: u64 = 8;
/// Iterates of σ and the distance they must reach.
const SIGMA_ITERATES: u32 = 5;
const SIGMA_TOLERANCE: f64 = 1e-3;

struct ProgramReport {
    name: String,
    json: Value,
    failures: Vec<String>,
}

fn program_checks(b: &Backends, failures: &mut Vec<String>) -> CmdResult<Value> {
    let name = &b.program.name;
    let x = vec![2u64; b.program.in_arity];
    let xb: Vec<BigInt> = x.iter().map(|&v| BigInt::from(v)).collect();
    let eval = dyncomp::loop_lang::interpret_u64(&b.program, &x)?;
    let reference = nf_run(&b.nf, &xb, default_cap(&eval), ThetaMode::Strict)?;

    let data = b.nf.layout.get("data").cloned().unwrap_or_default();
    let noisy = NoisyStep::new(&b.nf, qr(DECODE_NOISE.0, DECODE_NOISE.1), data, 0);
    let decoded = decoded_shadow_run(&|y| noisy.apply(y), &reference, reference.len() - 1);
    if let Err(e) = &decoded {
        failures.push(format!("{name}{x:?}: decoded shadowing: {e}"));
    }

    let (l, eps) = (qr(PERTURBATION.0 .0, PERTURBATION.0 .1), qr(PERTURBATION.1 .0, PERTURBATION.1 .1));
    let r = qr(1, 4);
    let within = gronwall_verify(&reference, &perturbed_nf_map(&b.nf, l.clone(), eps.clone()), &l, &eps, &r);
    let within_max = match &within {
        Ok(rep) if rep.pass() => Some(rep.errors.iter().max().cloned().unwrap_or_else(Q::zero)),
        Ok(_) => None,
        Err(e) => {
            failures.push(format!("{name}{x:?}: Grönwall bound on an admissible perturbation: {e}"));
            None
        }
    };
    let oversized = gronwall_verify(&reference, &perturbed_nf_map(&b.nf, l.clone(), &eps * qi(2)), &l, &eps, &r);
    let rejected = matches!(oversized, Err(Error::BoundViolated { .. }) | Err(Error::TubeViolated(_)));
    if !rejected {
        failures.push(format!("{name}{x:?}: oversized perturbation was not rejected"));
    }

    let t = tau(reference.halted_at.expect("nf_run returns halted traces"));
    let (d0, d1) = euler_deviation_ratio(b, &x, t)?;
    let ratio = d1 / d0;
    if !(FIRST_ORDER_RATIO.0..=FIRST_ORDER_RATIO.1).contains(&ratio) {
        failures.push(format!("{name}{x:?}: Euler error ratio {ratio} outside {FIRST_ORDER_RATIO:?}"));
    }
    Ok(json!({
        "input": x,
        "decoded_shadowing": decoded.is_ok(),
        "gronwall": {
            "lambda": fmt_q(&l),
            "epsilon": fmt_q(&eps),
            "max_error": within_max.as_ref().map(fmt_q),
            "oversized_rejected": rejected,
        },
        "euler_first_order": {"s": [RATIO_STEPS.0, RATIO_STEPS.1], "deviation": [d0, d1], "ratio": ratio},
    }))
}

fn check_program(entry: &Entry, dir: &Path, cfg: &CrossConfig) -> CmdResult<ProgramReport> {
    let prog = load_program(&dir.join(&entry.file))?;
    let name = prog.name.clone();
    let mut failures = Vec::new();
    let backends = match &entry.nf {
        Some(nf_file) => {
            let path = dir.join(nf_file);
            let v: Value = serde_json::from_str(&read_file(&path)?)
                .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
            Backends::from_nf(&prog, NormalForm::from_json(&v)?, cfg)
        }
        None => Backends::compile(&prog, cfg),
    };
    let b = match backends {
        Ok(b) => b,
        Err(e) => {
            failures.push(format!("{name}: compilation: {e}"));
            let json = json!({"name": name, "file": entry.file, "error": e.to_string(), "failures": failures});
            return Ok(ProgramReport { name, json, failures });
        }
    };
    let inputs = grid(prog.in_arity, entry.grid_max);
    eprintln!("verify {name}: {} inputs", inputs.len());
    let mut rows = Vec::new();
    let mut agreeing = 0;
    for x in &inputs {
        let expected = entry.expected.iter().find(|e| &e.input == x).map(|e| &e.output);
        let mut row = match cross_row(&b, x, cfg) {
            Ok(row) => {
                failures.extend(row.contract_failures().into_iter().map(|f| format!("{name}{x:?}: {f}")));
                if let Some(want) = expected {
                    let want: Vec<BigInt> = want.iter().map(|&v| BigInt::from(v)).collect();
                    if row.values[0] != want {
                        failures.push(format!(
                            "{name}{x:?}: interpreter gives {:?}, manifest expects {want:?}",
                            row.values[0]
                        ));
                    }
                }
                agreeing += usize::from(row.agree());
                row.to_json()
            }
            Err(e) => {
                failures.push(format!("{name}{x:?}: {e}"));
                json!({"input": x, "error": e.to_string()})
            }
        };
        let exact = hard_exactness(&b, x);
        if let Err(e) = &exact {
            failures.push(format!("{name}{x:?}: hard exactness: {e}"));
        }
        row["hard_exact"] = json!(exact.is_ok());
        row["expected"] = json!(expected);
        rows.push(row);
    }
    let checks = match program_checks(&b, &mut failures) {
        Ok(v) => v,
        Err(Failure::Check(m)) => {
            failures.push(format!("{name}: {m}"));
            Value::Null
        }
        Err(e) => return Err(e),
    };
    let json = json!({
        "name": name,
        "file": entry.file,
        "inputs": inputs.len(),
        "agreeing": agreeing,
        "rows": rows,
        "checks": checks,
        "failures": failures,
    });
    Ok(ProgramReport { name, json, failures })
}

fn invariants(failures: &mut Vec<String>) -> Value {
    let (delta, eps) = (qr(ROUNDER_DELTA.0, ROUNDER_DELTA.1), qr(ROUNDER_EPS.0, ROUNDER_EPS.1));
    let mut found = 0;
    for code in 0..625usize {
        let c: Vec<Q> = (0..4).map(|k| qi((code / 5usize.pow(k)) as i64 % 5 - 2)).collect();
        let deg = c.iter().rposition(|v| !v.is_zero()).unwrap_or(0) as u64;
        for n in 1..=2u32 {
            match rounder_witness(&c, n, &delta, &eps, deg * u64::from(n) + 2) {
                Ok(w) if w.holds(&c, n, &delta) => found += 1,
                Ok(_) => failures.push(format!("rounder witness for {c:?}, N = {n} does not re-validate")),
                Err(e) => failures.push(format!("rounder witness for {c:?}, N = {n}: {e}")),
            }
        }
    }
    let mut selectors = Vec::new();
    for seed in 0..SELECTOR_SEEDS {
        let p = sampled_selector(seed);
        let (bound, i) = (selector_bound(&p), seed as usize % p.dim);
        match selector_witness(&p, i, bound, bound) {
            Ok(w) if w.holds(&p, i) => {
                selectors.push(json!({"seed": seed, "C": w.c, "n": w.n, "value": fmt_q(&w.value)}))
            }
            Ok(_) => failures.push(format!("selector witness for seed {seed} does not re-validate")),
            Err(e) => failures.push(format!("selector witness for seed {seed}: {e}")),
        }
    }
    let offsets: Vec<Q> = (-40..=40).map(|k| qr(k, 100)).collect();
    let (mut worst, mut lambda_eff) = (0.0f64, 0.0f64);
    for m in -2..=2i64 {
        if continuous_rounder_iterate(&qi(m), 1) != qi(m) {
            failures.push(format!("σ moves the integer {m}"));
        }
        for d in &offsets {
            let e = sigma_iterate_enclosure(&(qi(m) + d), SIGMA_ITERATES, SIGMA_BITS);
            let dev = to_f64(&(&e.hi - qi(m)).abs().max((&e.lo - qi(m)).abs()));
            worst = worst.max(dev);
            if !d.is_zero() {
                lambda_eff = lambda_eff.max((dev / to_f64(&d.abs())).powf(1.0 / f64::from(SIGMA_ITERATES)));
            }
        }
    }
    if !(worst <= SIGMA_TOLERANCE) {
        failures.push(format!("σ^{SIGMA_ITERATES} misses the nearest integer by {worst:e}"));
    }
    json!({
        "rounder": {"delta": fmt_q(&delta), "epsilon": fmt_q(&eps), "polynomials": 625, "witnesses": found},
        "selectors": selectors,
        "sigma": {
            "iterates": SIGMA_ITERATES,
            "max_deviation": worst,
            "lambda_eff": lambda_eff,
            "lambda_one_step": sigma_contraction(&[-2, -1, 0, 1, 2], &offsets),
        },
    })
}

/// One line per program and input with every backend's outputs.
fn csv(report: &Value) -> String {
    let mut s = format!("program,input,{},agree\n", BACKENDS.join(","));
    let join = |v: &Value| {
        v.as_array().map_or(String::new(), |a| {
            a.iter().map(|x| x.as_str().map_or_else(|| x.to_string(), str::to_string)).collect::<Vec<_>>().join(" ")
        })
    };
    for p in report["programs"].as_array().into_iter().flatten() {
        for r in p["rows"].as_array().into_iter().flatten() {
            let vals: Vec<String> = BACKENDS.iter().map(|b| join(&r["values"][*b])).collect();
            s += &format!(
                "{},{},{},{}\n",
                p["name"].as_str().unwrap_or("?"),
                join(&r["input"]),
                vals.join(","),
                r["agree"]
            );
        }
    }
    s
}

fn table(report: &Value) -> String {
    let mut s = format!("{:<12} {:>6} {:>6} {:>9}  {}\n", "program", "inputs", "agree", "failures", "Euler ratio");
    for p in report["programs"].as_array().into_iter().flatten() {
        s += &format!(
            "{:<12} {:>6} {:>6} {:>9}  {}\n",
            p["name"].as_str().unwrap_or("?"),
            p["inputs"],
            p["agreeing"],
            p["failures"].as_array().map_or(0, Vec::len),
            p["checks"]["euler_first_order"]["ratio"].as_f64().map_or("-".into(), |r| format!("{r:.3}")),
        );
    }
    let inv = &report["invariants"];
    s += &format!("rounder witnesses   {}\n", inv["rounder"]["witnesses"]);
    s += &format!("selector witnesses  {}\n", inv["selectors"].as_array().map_or(0, Vec::len));
    s += &format!("sigma max deviation {}\n", inv["sigma"]["max_deviation"]);
    s += &format!("verdict             {}\n", report["verdict"].as_str().unwrap_or("?"));
    s
}

pub fn verify(suite: &Path, opts: &BackendOpts, format: Format, out: Option<&Path>) -> CmdResult<bool> {
    let cfg = opts.cross(true)?;
    let manifest: Manifest =
        serde_json::from_str(&read_file(suite)?).map_err(|e| Failure::Input(format!("{}: {e}", suite.display())))?;
    let dir = suite.parent().unwrap_or(Path::new("."));
    if manifest.programs.is_empty() {
        eprintln!("warning: suite {} lists no programs", suite.display());
    }
    let mut reports = manifest.programs.iter().map(|e| check_program(e, dir, &cfg)).collect::<CmdResult<Vec<_>>>()?;
    reports.sort_by(|a, b| a.name.cmp(&b.name));
    let mut failures: Vec<String> = reports.iter().flat_map(|r| r.failures.clone()).collect();
    let inv = invariants(&mut failures);
    let rows: usize = reports.iter().map(|r| r.json["inputs"].as_u64().unwrap_or(0) as usize).sum();
    let report = json!({
        "suite": manifest.name,
        "config": {
            "activation": cfg.activation.name(),
            "gadget": cfg.gadget.to_json(),
            "steps_per_cycle": cfg.ode.steps_per_cycle,
            "s_max": cfg.s_max,
        },
        "programs": reports.iter().map(|r| r.json.clone()).collect::<Vec<_>>(),
        "invariants": inv,
        "summary": {"programs": reports.len(), "rows": rows, "failures": failures.len()},
        "verdict": if failures.is_empty() { "pass" } else { "fail" },
    });
    let text = match format {
        Format::Json => pretty(&report),
        Format::Table => table(&report),
        Format::Csv => csv(&report),
    };
    emit(&text, out)?;
    if let Some(first) = failures.first() {
        eprintln!("error: {first}");
    }
    Ok(failures.is_empty())
}
