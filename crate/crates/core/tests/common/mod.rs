#![allow(dead_code)]

use num_bigint::BigInt;

/// Independent closed forms for the bundled corpus.
pub fn oracle(name: &str, x: &[u64]) -> Vec<u64> {
    let v = match (name, x) {
        ("zero", [_]) => 0,
        ("succ", [a]) => a + 1,
        ("proj", [_, b]) => *b,
        ("add", [a, b]) => a + b,
        ("monus", [a, b]) => a.saturating_sub(*b),
        ("pred", [a]) => a.saturating_sub(1),
        ("mul", [a, b]) => a * b,
        ("min", [a, b]) => *a.min(b),
        ("triangular", [n]) => n * (n + 1) / 2,
        _ => panic!("no oracle for {name}{x:?}"),
    };
    vec![v]
}

pub fn big(x: &[u64]) -> Vec<BigInt> {
    x.iter().map(|&v| BigInt::from(v)).collect()
}
