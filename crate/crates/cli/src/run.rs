//! `compile`, `run` and `bounds`.

use std::path::{Path, PathBuf};

use dyncomp::euler::{
    empirical_threshold, euler_run, observation_count, theoretical_threshold_from_terms, EulerSystem,
};
use dyncomp::integrate::Arithmetic;
use dyncomp::loop_lang::{interpret_u64, parse_loop, LoopProgram};
use dyncomp::normal_form::{compile_to_nf, default_cap, nf_run, outputs_at, trace_bound, ThetaMode};
use dyncomp::num::{fmt_q, Q};
use dyncomp::ode::{compile_nf_to_ode, measure_cycle_contraction, ode_run, read_output, tau};
use dyncomp::relu::{compile_nf_to_relu, relu_run_to_halt};
use dyncomp::rho::{basin_exponent, compile_nf_to_rho, decode_outputs, rho_run_to_halt};
use dyncomp::trace::Trace;
use dyncomp::verify::{cross_row, Backends};
use num_bigint::BigInt;
use num_traits::ToPrimitive;
use serde_json::{json, Map, Value};

use crate::opts::{BackendOpts, CompileBackend, Format, RunBackend, S_MAX};
use crate::{emit, read_file, CmdResult, Failure};

pub fn load_program(path: &Path) -> CmdResult<LoopProgram> {
    let src = read_file(path)?;
    parse_loop(&src).map_err(|e| Failure::Check(format!("{}: {e}", path.display())))
}

pub fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("values serialize") + "\n"
}

fn strings<T: ToString>(v: &[T]) -> Vec<String> {
    v.iter().map(ToString::to_string).collect()
}

fn exact_outputs(v: &[Q]) -> CmdResult<Vec<String>> {
    v.iter()
        .map(|q| {
            if q.is_integer() {
                Ok(q.to_integer().to_string())
            } else {
                Err(Failure::Check(format!("output {} is not an integer", fmt_q(q))))
            }
        })
        .collect()
}

/// `key: value` lines over the flattened object; nested keys joined by `.`.
fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, out);
            }
        }
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        Value::Array(a) if a.iter().all(|x| !x.is_object() && !x.is_array()) => {
            let items: Vec<String> =
                a.iter().map(|x| x.as_str().map_or_else(|| x.to_string(), str::to_string)).collect();
            out.push((prefix.to_string(), items.join(" ")));
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

pub fn render(v: &Value, format: Format) -> String {
    let mut rows = Vec::new();
    flatten("", v, &mut rows);
    match format {
        Format::Json => pretty(v),
        Format::Table => {
            let w = rows.iter().map(|(k, _)| k.chars().count()).max().unwrap_or(0);
            rows.iter().map(|(k, x)| format!("{k:<w$}  {x}\n")).collect()
        }
        Format::Csv => {
            let quote = |s: &str| {
                if s.contains([',', '"', '\n']) {
                    format!("\"{}\"", s.replace('"', "\"\""))
                } else {
                    s.to_string()
                }
            };
            std::iter::once("key,value\n".to_string())
                .chain(rows.iter().map(|(k, x)| format!("{},{}\n", quote(k), quote(x))))
                .collect()
        }
    }
}

pub fn compile(backend: CompileBackend, path: &Path, opts: &BackendOpts, out: Option<&Path>) -> CmdResult<()> {
    // parameters are validated before anything is compiled
    let (act, gadget) = (opts.activation()?, opts.gadget()?);
    let prog = load_program(path)?;
    let nf = compile_to_nf(&prog);
    let v = match backend {
        CompileBackend::Nf => nf.to_json(),
        CompileBackend::Relu => compile_nf_to_relu(&nf)?.to_json(),
        CompileBackend::Rho => compile_nf_to_rho(&nf, act)?.to_json(),
        CompileBackend::Ode => compile_nf_to_ode(&nf, &gadget)?.to_json()?,
        CompileBackend::Euler => {
            let sys = EulerSystem::new(compile_nf_to_ode(&nf, &gadget)?)?;
            let Arithmetic::Dyadic(bits) = sys.arithmetic else { unreachable!("Euler runs in fixed point") };
            json!({"ode": sys.program.to_json()?, "step_register": sys.dim() - 1, "precision_bits": bits})
        }
    };
    let default =
        PathBuf::from(format!("{}.{}.json", path.file_stem().unwrap_or_default().to_string_lossy(), backend.name()));
    let target = out.map(Path::to_path_buf).unwrap_or(default);
    emit(&pretty(&v), Some(&target))?;
    if target != Path::new("-") {
        eprintln!("wrote {}", target.display());
    }
    Ok(())
}

fn trace_or(format: Format, tr: &Trace, v: Value) -> String {
    if format == Format::Csv {
        tr.to_csv()
    } else {
        render(&v, format)
    }
}

pub fn run(
    backend: RunBackend,
    path: &Path,
    x: &[u64],
    opts: &BackendOpts,
    format: Format,
    out: Option<&Path>,
) -> CmdResult<()> {
    let cfg = opts.cross(true)?;
    let prog = load_program(path)?;
    let xb: Vec<BigInt> = x.iter().map(|&v| BigInt::from(v)).collect();
    let eval = interpret_u64(&prog, x)?;
    let mut head = Map::new();
    head.insert("program".into(), json!(prog.name));
    head.insert("input".into(), json!(x));
    let with = |mut m: Map<String, Value>, rest: Value| {
        if let Value::Object(r) = rest {
            m.extend(r);
        }
        Value::Object(m)
    };
    let text = match backend {
        RunBackend::Interp => render(
            &with(
                head,
                json!({"backend": "interp", "outputs": strings(&eval.outputs), "machine_steps": eval.machine_steps,
                "max_register": eval.max_register.to_string()}),
            ),
            format,
        ),
        RunBackend::All => {
            let b = Backends::compile(&prog, &cfg)?;
            let row = cross_row(&b, x, &cfg)?;
            let text = render(&with(head, row.to_json()), format);
            if !row.agree() {
                emit(&text, out)?;
                let failures = row.contract_failures();
                return Err(Failure::Check(failures.join("; ")));
            }
            text
        }
        _ => {
            let nf = compile_to_nf(&prog);
            let reference = nf_run(&nf, &xb, default_cap(&eval), ThetaMode::Strict)?;
            let h = reference.halted_at.expect("nf_run returns halted traces");
            let bound = trace_bound(&reference).ceil().to_integer();
            match backend {
                RunBackend::Nf => {
                    let v = with(
                        head,
                        json!({"backend": "nf", "outputs": exact_outputs(&outputs_at(&nf, reference.last()))?,
                        "T": h, "B": bound.to_string()}),
                    );
                    trace_or(format, &reference, v)
                }
                RunBackend::Relu => {
                    let block = compile_nf_to_relu(&nf)?;
                    let tr = relu_run_to_halt(&block, &xb, h)?;
                    let outs: Vec<Q> = block.outputs.iter().map(|&i| tr.last()[i].clone()).collect();
                    let v = with(
                        head,
                        json!({"backend": "relu", "outputs": exact_outputs(&outs)?,
                        "iterations": tr.halted_at, "depth": block.depth(), "widths": block.widths()}),
                    );
                    trace_or(format, &tr, v)
                }
                RunBackend::Rho => {
                    let sys = compile_nf_to_rho(&nf, cfg.activation.clone())?;
                    let s0 = basin_exponent(&nf, &bound);
                    let s = match opts.s {
                        Some(s) => s,
                        None => s0.to_u32().ok_or(dyncomp::Error::Overflow)?,
                    };
                    let tr = rho_run_to_halt(&sys, &xb, 2 * h + 2, s)?;
                    let v = with(
                        head,
                        json!({"backend": "rho", "outputs": strings(&decode_outputs(&sys, tr.last())?),
                        "activation": sys.activation.name(), "eta": fmt_q(&sys.activation.eta()), "s0": s0.to_string(), "s": s,
                        "T": tr.halted_at, "B": bound.to_string()}),
                    );
                    trace_or(format, &tr, v)
                }
                RunBackend::Ode => {
                    let ode = compile_nf_to_ode(&nf, &cfg.gadget)?;
                    let run = ode_run(&ode, &nf, &reference, &xb, &cfg.ode)?;
                    let c = measure_cycle_contraction(&run)?;
                    let outs = read_output(&run)?;
                    if format == Format::Csv {
                        run.samples.to_csv(17)
                    } else {
                        render(
                            &with(
                                head,
                                json!({"backend": "ode", "outputs": strings(&outs), "tau": run.tau, "lambda": c.lambda,
                                "eta": c.eta, "max_cycle_error": run.cycle_errors.iter().cloned().fold(0.0, f64::max),
                                "halving_ratio": run.halving_ratio, "hold_drift": run.hold_drift,
                                "window_samples": run.window_outputs.len(), "gadget": cfg.gadget.to_json()}),
                            ),
                            format,
                        )
                    }
                }
                RunBackend::Euler => {
                    let ode = compile_nf_to_ode(&nf, &cfg.gadget)?;
                    let terms = ode.field.terms()?;
                    let sys = EulerSystem::new(ode)?;
                    let t = tau(h);
                    let want: Vec<BigInt> = eval.outputs.iter().map(|v| BigInt::from(v.clone())).collect();
                    let (s, empirical) = match opts.s {
                        Some(s) => (s, None),
                        None => {
                            let e = empirical_threshold(&sys, &xb, t, &want, S_MAX)?;
                            (e, Some(e))
                        }
                    };
                    let th = theoretical_threshold_from_terms(&terms, &reference)?;
                    let o = euler_run(&sys, &xb, t, s)?;
                    let mut v = o.to_json(Some(&th.s), empirical);
                    v["outputs"] = json!(strings(&o.rounded));
                    v["backend"] = json!("euler");
                    v["tau"] = json!(t);
                    render(&with(head, v), format)
                }
                RunBackend::Interp | RunBackend::All => unreachable!("handled above"),
            }
        }
    };
    emit(&text, out)
}

pub fn bounds(path: &Path, x: &[u64], opts: &BackendOpts, format: Format, out: Option<&Path>) -> CmdResult<()> {
    let gadget = opts.gadget()?;
    let prog = load_program(path)?;
    let xb: Vec<BigInt> = x.iter().map(|&v| BigInt::from(v)).collect();
    let eval = interpret_u64(&prog, x)?;
    let nf = compile_to_nf(&prog);
    let reference = nf_run(&nf, &xb, default_cap(&eval), ThetaMode::Strict)?;
    let h = reference.halted_at.expect("nf_run returns halted traces");
    let bound = trace_bound(&reference).ceil().to_integer();
    let ode = compile_nf_to_ode(&nf, &gadget)?;
    let th = theoretical_threshold_from_terms(&ode.field.terms()?, &reference)?;
    // N = τ·2^S is printed in closed form once it outgrows a machine word
    let n = match th.s.to_u32() {
        Some(s) if s < 64 => observation_count(th.tau, s).to_string(),
        _ => format!("{}·2^{}", th.tau, th.s),
    };
    let v = json!({
        "program": prog.name,
        "input": x,
        "machine_steps": eval.machine_steps,
        "T": h,
        "B": bound.to_string(),
        "s0": basin_exponent(&nf, &bound).to_string(),
        "tau": th.tau,
        "R": th.majorants.r.to_string(),
        "M_sharp": th.majorants.m_sharp.to_string(),
        "L_sharp": th.majorants.l_sharp.to_string(),
        "horizon": th.horizon.to_string(),
        "theoretical_S": th.s.to_string(),
        "N": n,
    });
    emit(&render(&v, format), out)
}
