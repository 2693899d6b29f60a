mod common;

use common::oracle;
use dyncomp::corpus::{self, grid};
use dyncomp::loop_lang::{interpret, interpret_u64, parse_loop, space_bound, time_bound, Instr, LoopProgram};
use dyncomp::Error;
use num_bigint::BigUint;
use proptest::prelude::*;

fn nat(v: u64) -> BigUint {
    BigUint::from(v)
}

fn nats(x: &[u64]) -> Vec<BigUint> {
    x.iter().map(|&v| nat(v)).collect()
}

/// Straight-line and looped statements over `regs`, decoded from a byte string.
fn body_from(seed: &[u8], regs: &[&str]) -> String {
    let n = regs.len();
    let mut body = String::new();
    let mut open = 0;
    for (k, b) in seed.iter().enumerate() {
        let r = regs[(k + *b as usize) % n];
        let s = regs[(*b as usize / 2) % n];
        match b % 4 {
            0 => body.push_str(&format!("{r} := 0\n")),
            1 => body.push_str(&format!("{r} := {s}\n")),
            2 => body.push_str(&format!("{r} := {s} + 1\n")),
            _ if open < 2 => {
                body.push_str(&format!("for {s} do\n"));
                open += 1;
            }
            _ => body.push_str(&format!("{r} := {r} + 1\n")),
        }
    }
    body + &"end\n".repeat(open)
}

fn max_index(body: &[Instr]) -> usize {
    body.iter()
        .map(|i| match i {
            Instr::Clear(a) => *a,
            Instr::Copy(a, b) | Instr::IncrCopy(a, b) => *a.max(b),
            Instr::For(a, inner) => (*a).max(max_index(inner)),
        })
        .max()
        .unwrap_or(0)
}

#[test]
fn corpus_matches_closed_forms_on_grid() {
    for p in corpus::all() {
        for x in grid(p.in_arity, 4) {
            let run = interpret_u64(&p, &x).unwrap();
            assert_eq!(run.outputs, nats(&oracle(&p.name, &x)), "{}{x:?}", p.name);
            // inputs and outputs are registers too
            assert!(x.iter().chain(&oracle(&p.name, &x)).all(|&v| nat(v) <= run.max_register));
        }
    }
}

#[test]
fn interface_examples() {
    let prog = |n: &str| corpus::program(n).unwrap();
    assert_eq!(interpret_u64(&prog("add"), &[2, 3]).unwrap().outputs, vec![nat(5)]);
    assert_eq!(interpret_u64(&prog("mul"), &[3, 4]).unwrap().outputs, vec![nat(12)]);
    assert_eq!(interpret_u64(&prog("monus"), &[2, 5]).unwrap().outputs, vec![nat(0)]);

    let add = prog("add");
    let t = time_bound(&add, &nats(&[0, 0])).unwrap();
    assert!(t >= 1);
    assert_eq!(t, interpret_u64(&add, &[0, 0]).unwrap().machine_steps);
    assert_eq!(space_bound(&add, &nats(&[2, 3])).unwrap(), nat(5));

    let mul = prog("mul");
    assert_eq!(interpret_u64(&mul, &[0, 7]).unwrap().outputs, vec![nat(0)]);
    assert_eq!(space_bound(&mul, &nats(&[0, 7])).unwrap(), nat(7));
}

#[test]
fn parse_examples() {
    let p = parse_loop("prog succ(x)->r { r := x + 1 }").unwrap();
    assert_eq!(p.body, vec![Instr::IncrCopy(1, 0)]);
    let p = parse_loop("prog add(x,y)->r { r := x; for y do r := r + 1 end }").unwrap();
    assert_eq!(p.body, vec![Instr::Copy(2, 0), Instr::For(1, vec![Instr::IncrCopy(2, 2)])]);
    assert!(matches!(parse_loop("for do end"), Err(Error::Syntax { .. })));
}

#[test]
fn corpus_programs_are_well_formed() {
    for p in corpus::all() {
        assert!(p.in_arity <= p.num_registers && p.registers.len() == p.num_registers, "{}", p.name);
        assert!(max_index(&p.body) < p.num_registers, "{}", p.name);
        assert!(p.outputs.iter().all(|&o| o < p.num_registers) && p.outputs.len() == p.out_arity, "{}", p.name);
    }
}

#[test]
fn arithmetic_is_unbounded() {
    let p = corpus::program("add").unwrap();
    let big = BigUint::from(u64::MAX) * 5u32;
    let out = interpret(&p, &[big.clone(), nat(3)]).unwrap();
    assert_eq!(out.outputs, vec![&big + 3u32]);
    assert_eq!(out.max_register, &big + 3u32);
}

fn two_input(body: &str) -> LoopProgram {
    parse_loop(&format!("prog p(x, y) -> a, b {{\n{body}}}")).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn interpretation_is_deterministic(seed in proptest::collection::vec(0u8..8, 1..8), x in 0u64..4, y in 0u64..4) {
        let p = two_input(&body_from(&seed, &["x", "y", "a", "b"]));
        prop_assert_eq!(interpret_u64(&p, &[x, y]).unwrap(), interpret_u64(&p, &[x, y]).unwrap());
    }

    #[test]
    fn loop_count_is_frozen_at_entry(seed in proptest::collection::vec(0u8..8, 0..6), n in 0u64..5, y in 0u64..3) {
        // the body may overwrite the loop register; only c counts iterations
        let inner = body_from(&seed, &["n", "y", "a"]);
        let src = format!("prog p(n, y) -> c {{\nc := 0\na := 0\nfor n do\n{inner}c := c + 1\nend\n}}");
        let p = parse_loop(&src).unwrap();
        prop_assert_eq!(interpret_u64(&p, &[n, y]).unwrap().outputs, vec![nat(n)]);
    }

    #[test]
    fn accounting_is_monotone_under_extension(
        seed in proptest::collection::vec(0u8..8, 1..8),
        tail in 0u8..3,
        x in 0u64..4,
        y in 0u64..4,
    ) {
        let regs = ["x", "y", "a", "b"];
        let body = body_from(&seed, &regs);
        let base = interpret_u64(&two_input(&body), &[x, y]).unwrap();
        let extra = match tail {
            0 => "a := 0\n",
            1 => "a := b\n",
            _ => "b := x + 1\n",
        };
        // appended after every open loop has closed
        let extended = interpret_u64(&two_input(&format!("{body}{extra}")), &[x, y]).unwrap();
        prop_assert!(extended.machine_steps > base.machine_steps);
        prop_assert!(extended.max_register >= base.max_register);
    }
}
