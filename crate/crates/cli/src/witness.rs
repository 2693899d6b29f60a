//! `witness rounder|selector|sigma`.

use std::path::{Path, PathBuf};

use clap::Subcommand;
use dyncomp::num::{fmt_decimal, fmt_q, parse_q, round_q, Q};
use dyncomp::poly::PolyField;
use dyncomp::verify::{
    rounder_witness, sampled_selector, selector_bound, selector_witness, sigma_iterate_enclosure, SIGMA_BITS,
};
use num_traits::Signed;
use serde_json::json;

use crate::opts::Format;
use crate::run::render;
use crate::{emit, read_file, CmdResult, Failure};

#[derive(Subcommand)]
pub enum Kind {
    /// A point `u = m ± δ` where `p^[N]` misses `m` by more than ε.
    Rounder {
        /// Coefficients in ascending degree, comma separated rationals.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        coeffs: Vec<String>,
        /// Iteration count N.
        #[arg(long, default_value_t = 1)]
        iterations: u32,
        #[arg(long, default_value = "2/5")]
        delta: String,
        #[arg(long, default_value = "1/10")]
        eps: String,
        /// Largest |m| searched; defaults to `deg·N + 2`.
        #[arg(long)]
        m_max: Option<u64>,
    },
    /// A pair `(C, n)` where `π(P^[n](C, 0, …))` is not the indicator of `n < C`.
    Selector {
        /// Polynomial map as serialized JSON; `--seed` samples one instead.
        #[arg(long, conflicts_with = "seed", required_unless_present = "seed")]
        field: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Defaults to `max(2·degree·dimension, 4)`.
        #[arg(long)]
        c_max: Option<u64>,
        #[arg(long)]
        n_max: Option<u64>,
    },
    /// Iterates `σ(x) = x − sin(2πx)/(2π)` with an interval enclosure.
    Sigma {
        #[arg(long, allow_hyphen_values = true)]
        x: String,
        #[arg(long, default_value_t = 5)]
        k: u32,
    },
}

fn rational(s: &str) -> CmdResult<Q> {
    parse_q(s).map_err(|_| Failure::Input(format!("not a rational: {s:?}")))
}

pub fn witness(kind: Kind, format: Format, out: Option<&Path>) -> CmdResult<()> {
    let v = match kind {
        Kind::Rounder { coeffs, iterations, delta, eps, m_max } => {
            let c = coeffs.iter().map(|s| rational(s)).collect::<CmdResult<Vec<_>>>()?;
            let (delta, eps) = (rational(&delta)?, rational(&eps)?);
            let deg = c.iter().rposition(|v| !num_traits::Zero::is_zero(v)).unwrap_or(0) as u64;
            let m_max = m_max.unwrap_or(deg * u64::from(iterations) + 2);
            let w = rounder_witness(&c, iterations, &delta, &eps, m_max)?;
            json!({
                "kind": "rounder",
                "u": fmt_q(&w.u),
                "m": w.m.to_string(),
                "value": fmt_q(&w.value),
                "deviation": fmt_decimal(&(&w.value - Q::from_integer(w.m.clone())).abs(), 12),
                "epsilon": fmt_q(&w.epsilon),
                "holds": w.holds(&c, iterations, &delta),
            })
        }
        Kind::Selector { field, seed, index, c_max, n_max } => {
            let p = match (field, seed) {
                (Some(path), _) => {
                    let v: serde_json::Value = serde_json::from_str(&read_file(&path)?)
                        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
                    PolyField::from_json(&v)?
                }
                (None, Some(s)) => sampled_selector(s),
                (None, None) => unreachable!("clap requires one of the two"),
            };
            let bound = selector_bound(&p);
            let w = selector_witness(&p, index, c_max.unwrap_or(bound), n_max.unwrap_or(bound))?;
            json!({
                "kind": "selector",
                "dimension": p.dim,
                "degree": p.degree(),
                "C": w.c,
                "n": w.n,
                "value": fmt_q(&w.value),
                "required": fmt_q(&w.required),
                "holds": w.holds(&p, index),
            })
        }
        Kind::Sigma { x, k } => {
            let x = rational(&x)?;
            let e = sigma_iterate_enclosure(&x, k, SIGMA_BITS);
            json!({
                "kind": "sigma",
                "x": fmt_q(&x),
                "k": k,
                "iterate": fmt_decimal(&e.mid(), 30),
                "enclosure": [fmt_decimal(&e.lo, 40), fmt_decimal(&e.hi, 40)],
                "nearest_integer": round_q(&x).to_string(),
            })
        }
    };
    emit(&render(&v, format), out)
}
