//! LOOP → normal form through a counter machine.
//!
//! Every LOOP instruction is lowered to micro-instructions that either apply
//! fixed ±1 translations unconditionally or branch on a single zero test.
//! Each micro-instruction takes two normal-form steps: phase A recomputes the
//! test bits `t_r = Θ(R_r)`, phase B moves the program counter and applies the
//! translations selected by gates over PC, phase and test bits.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::ToPrimitive;

use super::{Gated, IntAffine, NormalForm};
use crate::loop_lang::{EvalResult, Instr, LoopProgram};

type Delta = Vec<(usize, i64)>;

#[derive(Debug, Clone)]
enum Micro {
    Step { delta: Delta, next: usize },
    Branch { reg: usize, zero: (Delta, usize), nonzero: (Delta, usize) },
    Halt,
}

struct Lowering {
    code: Vec<Micro>,
    registers: usize,
    counters: usize,
    scratch_used: bool,
}

/// Register indices: program registers, then loop counters, then one scratch.
/// The scratch index is resolved once all counters are known.
const SCRATCH: usize = usize::MAX;

impl Lowering {
    fn alloc(&mut self) -> usize {
        self.code.push(Micro::Halt);
        self.code.len() - 1
    }

    /// Moves `src` into every register of `dsts`, then restores `src` from
    /// the scratch register; `extra` is applied on the way out.
    fn copy_loops(&mut self, src: usize, dsts: &[usize], extra: Delta, exit: usize) -> usize {
        self.scratch_used = true;
        let mv = self.alloc();
        let restore = self.alloc();
        let mut d: Delta = vec![(src, -1), (SCRATCH, 1)];
        d.extend(dsts.iter().map(|&r| (r, 1)));
        self.code[mv] = Micro::Branch { reg: src, zero: (vec![], restore), nonzero: (d, mv) };
        self.code[restore] =
            Micro::Branch { reg: SCRATCH, zero: (extra, exit), nonzero: (vec![(SCRATCH, -1), (src, 1)], restore) };
        mv
    }

    fn clear_loop(&mut self, reg: usize, exit: usize) -> usize {
        let l = self.alloc();
        self.code[l] = Micro::Branch { reg, zero: (vec![], exit), nonzero: (vec![(reg, -1)], l) };
        l
    }

    /// Lowers `body`, continuing at `exit`; returns the entry label.
    fn block(&mut self, body: &[Instr], exit: usize) -> usize {
        let mut k = exit;
        for ins in body.iter().rev() {
            k = self.instr(ins, k);
        }
        k
    }

    fn instr(&mut self, ins: &Instr, k: usize) -> usize {
        match ins {
            Instr::Clear(i) => self.clear_loop(*i, k),
            Instr::Copy(i, j) if i == j => k,
            Instr::Copy(i, j) => {
                let fill = self.copy_loops(*j, &[*i], vec![], k);
                self.clear_loop(*i, fill)
            }
            Instr::IncrCopy(i, j) if i == j => {
                let l = self.alloc();
                self.code[l] = Micro::Step { delta: vec![(*i, 1)], next: k };
                l
            }
            Instr::IncrCopy(i, j) => {
                let fill = self.copy_loops(*j, &[*i], vec![(*i, 1)], k);
                self.clear_loop(*i, fill)
            }
            Instr::For(r, body) => {
                let c = self.registers + self.counters;
                self.counters += 1;
                let head = self.alloc();
                let entry = self.block(body, head);
                self.code[head] = Micro::Branch { reg: c, zero: (vec![], k), nonzero: (vec![(c, -1)], entry) };
                // the counter is zero outside its loop, so loading is a pure copy
                self.copy_loops(*r, &[c], vec![], head)
            }
        }
    }
}

fn targets(m: &Micro) -> Vec<usize> {
    match m {
        Micro::Step { next, .. } => vec![*next],
        Micro::Branch { zero, nonzero, .. } => vec![zero.1, nonzero.1],
        Micro::Halt => vec![],
    }
}

/// Static cap on normal-form steps: 8·(machine_steps+1)·(space_bound+2).
pub fn default_cap(run: &EvalResult) -> usize {
    let b = run.max_register.to_u64().unwrap_or(u64::MAX / 64);
    let t = run.machine_steps;
    (8u64.saturating_mul(t + 1).saturating_mul(b.saturating_add(2))).min(usize::MAX as u64) as usize
}

pub fn compile_to_nf(prog: &LoopProgram) -> NormalForm {
    let mut low = Lowering { code: vec![Micro::Halt], registers: prog.num_registers, counters: 0, scratch_used: false };
    let halt = 0;
    let mut entry = low.block(&prog.body, halt);
    // label 0 of the final numbering is implicit in the state, so it must be
    // entered only from itself
    let entered_from_elsewhere = low.code.iter().enumerate().any(|(l, m)| l != entry && targets(m).contains(&entry));
    if entry == halt || entered_from_elsewhere {
        let l = low.alloc();
        low.code[l] = Micro::Step { delta: vec![], next: entry };
        entry = l;
    }

    // renumber: entry first, halt last
    let n = low.code.len();
    let mut order: Vec<usize> = vec![entry];
    order.extend((0..n).filter(|&l| l != entry && l != halt));
    order.push(halt);
    let mut new_of = vec![0; n];
    for (new, &old) in order.iter().enumerate() {
        new_of[old] = new;
    }

    let scratch = prog.num_registers + low.counters;
    let nregs = scratch + usize::from(low.scratch_used);
    let fix = |r: usize| if r == SCRATCH { scratch } else { r };
    let code: Vec<Micro> = order
        .iter()
        .map(|&old| match &low.code[old] {
            Micro::Step { delta, next } => {
                Micro::Step { delta: delta.iter().map(|&(r, v)| (fix(r), v)).collect(), next: new_of[*next] }
            }
            Micro::Branch { reg, zero, nonzero } => Micro::Branch {
                reg: fix(*reg),
                zero: (zero.0.iter().map(|&(r, v)| (fix(r), v)).collect(), new_of[zero.1]),
                nonzero: (nonzero.0.iter().map(|&(r, v)| (fix(r), v)).collect(), new_of[nonzero.1]),
            },
            Micro::Halt => Micro::Halt,
        })
        .collect();
    build(prog, &code, nregs, low.counters, low.scratch_used)
}

fn build(prog: &LoopProgram, code: &[Micro], nregs: usize, counters: usize, scratch: bool) -> NormalForm {
    let labels = code.len();
    let halt_label = labels - 1;
    let mut tested: Vec<usize> = code
        .iter()
        .filter_map(|m| match m {
            Micro::Branch { reg, .. } => Some(*reg),
            _ => None,
        })
        .collect();
    tested.sort_unstable();
    tested.dedup();

    let test0 = nregs;
    let pc0 = test0 + tested.len();
    let phase = pc0 + labels - 1;
    let halt = phase + 1;
    let m = halt + 1;
    let test_of: BTreeMap<usize, usize> = tested.iter().enumerate().map(|(k, &r)| (r, test0 + k)).collect();
    let pc = |l: usize| if l == 0 { None } else { Some(pc0 + l - 1) };

    let mut base = IntAffine::identity(m);
    for &t in test_of.values() {
        base.set(t, t, 0);
    }
    base.set(phase, phase, -1);
    base.offset[phase] = BigInt::from(1);

    let mut gated = Vec::new();
    for (&r, &t) in &test_of {
        let mut q = IntAffine::zero(1, m);
        q.set(0, r, 1);
        let mut a = IntAffine::zero(m, m);
        a.offset[t] = BigInt::from(1);
        gated.push(Gated { q, a });
    }

    // q = PC_l + phase + Σ pos − Σ neg − (|pos| + 1), with PC_0 = 1 − Σ PC
    let gate = |l: usize, pos: &[usize], neg: &[usize]| {
        let mut q = IntAffine::zero(1, m);
        let mut off = -(pos.len() as i64) - 1;
        match pc(l) {
            Some(i) => q.set(0, i, 1),
            None => {
                for k in 1..labels {
                    q.set(0, pc0 + k - 1, -1);
                }
                off += 1;
            }
        }
        q.set(0, phase, 1);
        for &p in pos {
            q.set(0, p, 1);
        }
        for &n in neg {
            q.set(0, n, -1);
        }
        q.offset[0] = BigInt::from(off);
        q
    };
    let addend = |from: usize, delta: &Delta, to: usize| {
        let mut a = IntAffine::zero(m, m);
        let mut off = vec![0i64; m];
        for &(r, v) in delta {
            off[r] += v;
        }
        if let Some(i) = pc(from) {
            off[i] -= 1;
        }
        if let Some(i) = pc(to) {
            off[i] += 1;
        }
        if to == halt_label {
            off[halt] += 1;
        }
        for (r, v) in off.into_iter().enumerate() {
            a.offset[r] = BigInt::from(v);
        }
        a
    };

    for (l, micro) in code.iter().enumerate() {
        match micro {
            Micro::Step { delta, next } => {
                gated.push(Gated { q: gate(l, &[], &[]), a: addend(l, delta, *next) });
            }
            Micro::Branch { reg, zero, nonzero } => {
                let t = test_of[reg];
                gated.push(Gated { q: gate(l, &[t], &[]), a: addend(l, &nonzero.0, nonzero.1) });
                gated.push(Gated { q: gate(l, &[], &[t]), a: addend(l, &zero.0, zero.1) });
            }
            Micro::Halt => {}
        }
    }

    let mut layout = BTreeMap::new();
    layout.insert("data".to_string(), (0..prog.num_registers).collect());
    layout.insert("loop_counter".to_string(), (prog.num_registers..prog.num_registers + counters).collect());
    if scratch {
        layout.insert("scratch".to_string(), vec![nregs - 1]);
    }
    layout.insert("test".to_string(), (test0..pc0).collect());
    layout.insert("pc".to_string(), (pc0..phase).collect());
    layout.insert("phase".to_string(), vec![phase]);
    layout.insert("halt".to_string(), vec![halt]);
    NormalForm { m, inputs: prog.in_arity, base, gated, layout, outputs: prog.outputs.clone() }
}
