//! Backend parameters shared by the subcommands, validated before compiling.

use clap::{Args, ValueEnum};
use dyncomp::integrate::{Arithmetic, Method};
use dyncomp::num::{parse_q, qi};
use dyncomp::ode::{GadgetParams, OdeConfig};
use dyncomp::rho::{make_hard_sigmoid, make_logistic, Activation};
use dyncomp::verify::CrossConfig;

use crate::{CmdResult, Failure};

#[derive(Clone, Copy, ValueEnum)]
pub enum CompileBackend {
    Nf,
    Relu,
    Rho,
    Ode,
    Euler,
}

impl CompileBackend {
    pub fn name(self) -> &'static str {
        match self {
            CompileBackend::Nf => "nf",
            CompileBackend::Relu => "relu",
            CompileBackend::Rho => "rho",
            CompileBackend::Ode => "ode",
            CompileBackend::Euler => "euler",
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
pub enum RunBackend {
    Interp,
    Nf,
    Relu,
    Rho,
    Ode,
    Euler,
    All,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Table,
}

/// Largest step exponent of the empirical Euler sweep.
pub const S_MAX: u32 = 12;
/// Logistic steepness when `--activation logistic` gives none.
pub const DEFAULT_STEEPNESS: i64 = 400;

#[derive(Args, Clone)]
pub struct BackendOpts {
    /// `hard` or `logistic[:steepness]`.
    #[arg(long, default_value = "hard")]
    pub activation: String,
    /// Output precision of ρ runs (default s0) or step exponent of Euler runs
    /// (default: the empirical threshold).
    #[arg(long)]
    pub s: Option<u32>,
    /// Driver sharpness of the sample-and-hold gadget, even.
    #[arg(long = "gadget-K", default_value_t = GadgetParams::default().k)]
    pub gadget_k: u32,
    /// Driver amplitude, a rational.
    #[arg(long = "gadget-rate", default_value = "48")]
    pub gadget_rate: String,
    /// `rk4[:steps per cycle]` or `euler[:steps per cycle]`.
    #[arg(long, default_value = "rk4:128")]
    pub integrator: String,
}

fn bad(m: impl Into<String>) -> Failure {
    Failure::Input(m.into())
}

impl BackendOpts {
    pub fn activation(&self) -> CmdResult<Activation> {
        match self.activation.split_once(':') {
            None if self.activation == "hard" => Ok(make_hard_sigmoid()),
            None if self.activation == "logistic" => Ok(make_logistic(qi(DEFAULT_STEEPNESS))?),
            Some(("logistic", k)) => {
                let k = parse_q(k).map_err(|_| bad(format!("bad steepness {k:?}")))?;
                Ok(make_logistic(k)?)
            }
            _ => Err(bad(format!("unknown activation {:?}; expected hard or logistic[:k]", self.activation))),
        }
    }

    pub fn gadget(&self) -> CmdResult<GadgetParams> {
        let rate = parse_q(&self.gadget_rate).map_err(|_| bad(format!("bad gadget rate {:?}", self.gadget_rate)))?;
        let g = GadgetParams { k: self.gadget_k, rate, ..GadgetParams::default() };
        g.validate()?;
        Ok(g)
    }

    pub fn ode(&self) -> CmdResult<OdeConfig> {
        let (method, steps) = match self.integrator.split_once(':') {
            Some((m, n)) => (m, n.parse::<u32>().map_err(|_| bad(format!("bad step count {n:?}")))?),
            None => (self.integrator.as_str(), OdeConfig::default().steps_per_cycle),
        };
        let method = match method {
            "rk4" => Method::Rk4,
            "euler" => Method::Euler,
            m => return Err(bad(format!("unknown integrator {m:?}; expected rk4 or euler"))),
        };
        if steps == 0 || steps % 2 == 1 {
            return Err(bad("steps per cycle must be even and positive"));
        }
        Ok(OdeConfig { steps_per_cycle: steps, method, arithmetic: Arithmetic::Float, ..OdeConfig::default() })
    }

    pub fn cross(&self, theoretical: bool) -> CmdResult<CrossConfig> {
        Ok(CrossConfig {
            activation: self.activation()?,
            gadget: self.gadget()?,
            ode: self.ode()?,
            s_max: S_MAX,
            theoretical,
        })
    }
}
