use thiserror::Error;

/// Every failure the toolkit can report. Variants carry enough context to
/// reproduce the violated condition.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("arity mismatch: {0}")]
    Arity(String),
    #[error("undeclared register `{name}` at {line}:{col}")]
    Undeclared { name: String, line: usize, col: usize },

    #[error("ambiguous gate {gate}: argument {value} lies in the undefined region")]
    AmbiguousGate { gate: usize, value: String },
    #[error("no halt within {0} steps")]
    CapExceeded(usize),
    #[error("unsupported normal form: {0}")]
    UnsupportedForm(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("value {0} is not in the readable basin of any code")]
    Unreadable(String),
    #[error("coordinate {coord} left [0,1] at step {step}: {value}")]
    DomainEscape { step: usize, coord: usize, value: String },
    #[error("basin violation at coordinate {coord}: {detail}")]
    BasinViolation { coord: usize, detail: String },
    #[error("inadmissible activation parameters: {0}")]
    InadmissibleParameters(String),

    #[error("step halving changed cycle {cycle} by {change:e}, above tolerance {tolerance:e}")]
    StepUnstable { cycle: usize, change: f64, tolerance: f64 },
    #[error("one-cycle contract violated at cycle {cycle}: {detail}")]
    ContractViolated { cycle: usize, detail: String },
    #[error("window samples round differently: {0}")]
    WindowInconsistent(String),
    #[error("no gadget parameters in the search grid meet the contract")]
    GadgetBudgetUnsatisfiable,
    #[error("arithmetic overflow in fixed-point mode")]
    Overflow,

    #[error("no precision up to {0} rounds correctly twice in a row")]
    NotReached(u32),

    #[error("reference map leaves the lattice at {0}")]
    NotLatticePreserving(String),
    #[error("decoded orbit diverges from the reference at step {0}")]
    DecodeDiverged(usize),
    #[error("tube condition fails: {0}")]
    TubeViolated(String),
    #[error("shadowing bound violated at step {step}: {detail}")]
    BoundViolated { step: usize, detail: String },
    #[error("no witness on the search grid")]
    NotFound,
    #[error("backends disagree: {0}")]
    Mismatch(String),

    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
