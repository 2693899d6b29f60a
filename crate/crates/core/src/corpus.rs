//! The bundled program corpus.

use crate::loop_lang::{parse_loop, LoopProgram};

/// `(name, source)` for every bundled program, in a fixed order.
pub const PROGRAMS: [(&str, &str); 9] = [
    ("zero", include_str!("../corpus/zero.loop")),
    ("succ", include_str!("../corpus/succ.loop")),
    ("proj", include_str!("../corpus/proj.loop")),
    ("add", include_str!("../corpus/add.loop")),
    ("monus", include_str!("../corpus/monus.loop")),
    ("pred", include_str!("../corpus/pred.loop")),
    ("mul", include_str!("../corpus/mul.loop")),
    ("min", include_str!("../corpus/min.loop")),
    ("triangular", include_str!("../corpus/triangular.loop")),
];

pub fn program(name: &str) -> Option<LoopProgram> {
    PROGRAMS.iter().find(|(n, _)| *n == name).map(|(_, src)| parse_loop(src).expect("bundled program parses"))
}

pub fn all() -> Vec<LoopProgram> {
    PROGRAMS.iter().map(|(_, src)| parse_loop(src).expect("bundled program parses")).collect()
}

/// Every input vector in `{0..=max}^d`, in lexicographic order.
pub fn grid(d: usize, max: u64) -> Vec<Vec<u64>> {
    let mut out = vec![vec![]];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..=max).map(move |v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}
