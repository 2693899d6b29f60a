//! LOOP programs: parser and the reference interpreter.
//!
//! Surface syntax:
//!
//! ```text
//! prog add(x, y) -> r {
//!     r := x
//!     for y do r := r + 1 end
//! }
//! ```
//!
//! Statements are separated by `;` or newlines and `#` starts a line comment.
//! Registers other than inputs and outputs are declared by their first
//! assignment and start at 0. A loop runs as many times as its register held
//! on entry, whatever the body does to it.

use num_bigint::BigUint;
use num_traits::{One, Zero};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Instr {
    Clear(usize),
    Copy(usize, usize),
    /// `R_i := R_j + 1`
    IncrCopy(usize, usize),
    For(usize, Vec<Instr>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopProgram {
    pub name: String,
    pub in_arity: usize,
    pub out_arity: usize,
    pub num_registers: usize,
    /// Register names by index; inputs occupy `0..in_arity`.
    pub registers: Vec<String>,
    pub body: Vec<Instr>,
    pub outputs: Vec<usize>,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalResult {
    pub outputs: Vec<BigUint>,
    pub machine_steps: u64,
    pub max_register: BigUint,
}

// ---------------------------------------------------------------- lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(String),
    Assign,
    Plus,
    Arrow,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Sep,
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(src: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        let mut push = |tok| out.push(Token { tok, line: l0, col: c0 });
        match c {
            '\n' => {
                push(Tok::Sep);
                i += 1;
                line += 1;
                col = 1;
                continue;
            }
            ' ' | '\t' | '\r' => {}
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                continue;
            }
            ';' => push(Tok::Sep),
            '+' => push(Tok::Plus),
            '(' => push(Tok::LParen),
            ')' => push(Tok::RParen),
            '{' => push(Tok::LBrace),
            '}' => push(Tok::RBrace),
            ',' => push(Tok::Comma),
            ':' if chars.get(i + 1) == Some(&'=') => {
                push(Tok::Assign);
                i += 2;
                col += 2;
                continue;
            }
            '-' if chars.get(i + 1) == Some(&'>') => {
                push(Tok::Arrow);
                i += 2;
                col += 2;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                col += i - start;
                out.push(Token { tok: Tok::Ident(s), line: l0, col: c0 });
                continue;
            }
            c if c.is_ascii_digit() => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                col += i - start;
                out.push(Token { tok: Tok::Num(s), line: l0, col: c0 });
                continue;
            }
            other => {
                return Err(Error::Syntax { line, col, msg: format!("unexpected character {other:?}") });
            }
        }
        i += 1;
        col += 1;
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

// ---------------------------------------------------------------- parser

const KEYWORDS: [&str; 4] = ["prog", "for", "do", "end"];

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    names: Vec<String>,
    depth: usize,
    max_depth: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, t: &Token, msg: impl Into<String>) -> Result<T> {
        Err(Error::Syntax { line: t.line, col: t.col, msg: msg.into() })
    }

    fn skip_seps(&mut self) {
        while self.peek().tok == Tok::Sep {
            self.next();
        }
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<()> {
        self.skip_seps();
        let t = self.next();
        if t.tok == want {
            Ok(())
        } else {
            self.err(&t, format!("expected {what}"))
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<()> {
        self.skip_seps();
        let t = self.next();
        match &t.tok {
            Tok::Ident(s) if s == kw => Ok(()),
            _ => self.err(&t, format!("expected `{kw}`")),
        }
    }

    /// An identifier that is not a keyword.
    fn ident(&mut self, what: &str) -> Result<Token> {
        let t = self.next();
        match &t.tok {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => Ok(t),
            _ => self.err(&t, format!("expected {what}")),
        }
    }

    fn name_of(t: &Token) -> &str {
        match &t.tok {
            Tok::Ident(s) => s,
            _ => unreachable!(),
        }
    }

    fn lookup(&self, t: &Token) -> Result<usize> {
        let name = Self::name_of(t);
        self.names.iter().position(|n| n == name).ok_or_else(|| Error::Undeclared {
            name: name.to_string(),
            line: t.line,
            col: t.col,
        })
    }

    fn declare(&mut self, t: &Token) -> usize {
        let name = Self::name_of(t);
        match self.names.iter().position(|n| n == name) {
            Some(i) => i,
            None => {
                self.names.push(name.to_string());
                self.names.len() - 1
            }
        }
    }

    fn ids(&mut self, what: &str) -> Result<Vec<Token>> {
        self.skip_seps();
        let mut out = Vec::new();
        if matches!(&self.peek().tok, Tok::Ident(s) if !KEYWORDS.contains(&s.as_str())) {
            out.push(self.ident(what)?);
            loop {
                self.skip_seps();
                if self.peek().tok != Tok::Comma {
                    break;
                }
                self.next();
                self.skip_seps();
                out.push(self.ident(what)?);
            }
        }
        Ok(out)
    }

    fn stmts(&mut self, closers: &[&str]) -> Result<Vec<Instr>> {
        let mut body = Vec::new();
        loop {
            self.skip_seps();
            let t = self.peek().clone();
            let closes = match &t.tok {
                Tok::RBrace => closers.contains(&"}"),
                Tok::Ident(s) => closers.contains(&s.as_str()),
                _ => false,
            };
            if closes {
                return Ok(body);
            }
            body.push(self.stmt()?);
            let after = self.peek().clone();
            match &after.tok {
                Tok::Sep => {}
                Tok::RBrace if closers.contains(&"}") => {}
                Tok::Ident(s) if closers.contains(&s.as_str()) => {}
                _ => return self.err(&after, "expected `;` or newline between statements"),
            }
        }
    }

    fn stmt(&mut self) -> Result<Instr> {
        let t = self.peek().clone();
        match &t.tok {
            Tok::Ident(s) if s == "for" => {
                self.next();
                let reg_tok = self.ident("loop register after `for`")?;
                let reg = self.lookup(&reg_tok)?;
                self.keyword("do")?;
                self.depth += 1;
                self.max_depth = self.max_depth.max(self.depth);
                let body = self.stmts(&["end"])?;
                self.depth -= 1;
                self.keyword("end")?;
                Ok(Instr::For(reg, body))
            }
            Tok::Ident(_) => {
                let dst_tok = self.ident("register")?;
                self.expect(Tok::Assign, "`:=`")?;
                let rhs = self.next();
                let instr = match &rhs.tok {
                    Tok::Num(n) if n == "0" => None,
                    Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                        let src = self.lookup(&rhs)?;
                        if self.peek().tok == Tok::Plus {
                            self.next();
                            let one = self.next();
                            if one.tok != Tok::Num("1".into()) {
                                return self.err(&one, "only `+ 1` is allowed");
                            }
                            Some((src, true))
                        } else {
                            Some((src, false))
                        }
                    }
                    _ => return self.err(&rhs, "expected `0` or a register"),
                };
                let dst = self.declare(&dst_tok);
                Ok(match instr {
                    None => Instr::Clear(dst),
                    Some((src, false)) => Instr::Copy(dst, src),
                    Some((src, true)) => Instr::IncrCopy(dst, src),
                })
            }
            _ => self.err(&t, "expected a statement"),
        }
    }
}

pub fn parse_loop(source: &str) -> Result<LoopProgram> {
    let mut p = Parser { toks: lex(source)?, pos: 0, names: Vec::new(), depth: 0, max_depth: 0 };
    p.keyword("prog")?;
    p.skip_seps();
    let name_tok = p.ident("program name")?;
    let name = Parser::name_of(&name_tok).to_string();
    p.expect(Tok::LParen, "`(`")?;
    let inputs = p.ids("input register")?;
    p.expect(Tok::RParen, "`)`")?;
    p.expect(Tok::Arrow, "`->`")?;
    let outputs = p.ids("output register")?;
    if outputs.is_empty() {
        return Err(Error::Arity(format!("program `{name}` declares no outputs")));
    }
    for t in &inputs {
        if p.names.iter().any(|n| n == Parser::name_of(t)) {
            return Err(Error::Arity(format!("input `{}` declared twice", Parser::name_of(t))));
        }
        p.declare(t);
    }
    let out_idx: Vec<usize> = outputs.iter().map(|t| p.declare(t)).collect();
    p.expect(Tok::LBrace, "`{`")?;
    let body = p.stmts(&["}"])?;
    p.expect(Tok::RBrace, "`}`")?;
    p.skip_seps();
    let tail = p.peek().clone();
    if tail.tok != Tok::Eof {
        return p.err(&tail, "trailing input after program");
    }
    Ok(LoopProgram {
        name,
        in_arity: inputs.len(),
        out_arity: out_idx.len(),
        num_registers: p.names.len(),
        registers: p.names,
        body,
        outputs: out_idx,
        depth: p.max_depth,
    })
}

// ---------------------------------------------------------------- interpreter

struct Machine {
    regs: Vec<BigUint>,
    steps: u64,
    max: BigUint,
}

impl Machine {
    fn set(&mut self, i: usize, v: BigUint) {
        if v > self.max {
            self.max = v.clone();
        }
        self.regs[i] = v;
    }

    fn exec(&mut self, body: &[Instr]) {
        for ins in body {
            match ins {
                Instr::Clear(i) => {
                    self.steps += 1;
                    self.set(*i, BigUint::zero());
                }
                Instr::Copy(i, j) => {
                    self.steps += 1;
                    let v = self.regs[*j].clone();
                    self.set(*i, v);
                }
                Instr::IncrCopy(i, j) => {
                    self.steps += 1;
                    let v = &self.regs[*j] + BigUint::one();
                    self.set(*i, v);
                }
                Instr::For(r, inner) => {
                    self.steps += 1;
                    let mut n = self.regs[*r].clone();
                    while !n.is_zero() {
                        self.exec(inner);
                        n -= 1u32;
                    }
                    self.steps += 1;
                }
            }
        }
    }
}

pub fn interpret(prog: &LoopProgram, x: &[BigUint]) -> Result<EvalResult> {
    if x.len() != prog.in_arity {
        return Err(Error::Arity(format!("`{}` takes {} inputs, got {}", prog.name, prog.in_arity, x.len())));
    }
    let mut regs = vec![BigUint::zero(); prog.num_registers];
    regs[..x.len()].clone_from_slice(x);
    let max = x.iter().max().cloned().unwrap_or_default();
    let mut m = Machine { regs, steps: 0, max };
    m.exec(&prog.body);
    Ok(EvalResult {
        outputs: prog.outputs.iter().map(|&i| m.regs[i].clone()).collect(),
        machine_steps: m.steps,
        max_register: m.max,
    })
}

/// Convenience wrapper for small inputs.
pub fn interpret_u64(prog: &LoopProgram, x: &[u64]) -> Result<EvalResult> {
    let x: Vec<BigUint> = x.iter().map(|&v| BigUint::from(v)).collect();
    interpret(prog, &x)
}

pub fn time_bound(prog: &LoopProgram, x: &[BigUint]) -> Result<u64> {
    Ok(interpret(prog, x)?.machine_steps)
}

pub fn space_bound(prog: &LoopProgram, x: &[BigUint]) -> Result<BigUint> {
    Ok(interpret(prog, x)?.max_register)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn succ_and_add_shapes() {
        let p = parse_loop("prog succ(x)->r { r := x + 1 }").unwrap();
        assert_eq!(p.body, vec![Instr::IncrCopy(1, 0)]);
        let p = parse_loop("prog add(x,y)->r { r := x; for y do r := r + 1 end }").unwrap();
        assert_eq!(p.body, vec![Instr::Copy(2, 0), Instr::For(1, vec![Instr::IncrCopy(2, 2)])]);
        assert_eq!(p.depth, 1);
    }

    #[test]
    fn malformed_loop_reports_position() {
        let e = parse_loop("prog f(x)->r {\n  for do end\n}").unwrap_err();
        assert!(matches!(e, Error::Syntax { line: 2, col: 7, .. }), "{e:?}");
        assert!(matches!(parse_loop("for do end"), Err(Error::Syntax { .. })));
    }

    #[test]
    fn reading_unknown_register_fails() {
        let e = parse_loop("prog f(x)->r { r := q }").unwrap_err();
        assert!(matches!(e, Error::Undeclared { ref name, .. } if name == "q"));
    }

    #[test]
    fn only_plus_one() {
        assert!(parse_loop("prog f(x)->r { r := x + 2 }").is_err());
        assert!(parse_loop("prog f(x)->r { r := 1 }").is_err());
    }

    #[test]
    fn comments_and_separators() {
        let src = "# header\nprog f(x) -> r { # trailing\n r := x ; r := r + 1\n\n }\n";
        let p = parse_loop(src).unwrap();
        assert_eq!(p.body.len(), 2);
        assert_eq!(interpret_u64(&p, &[4]).unwrap().outputs, vec![BigUint::from(5u32)]);
    }

    #[test]
    fn arity_checks() {
        assert!(matches!(parse_loop("prog f(x, x) -> r { r := x }"), Err(Error::Arity(_))));
        assert!(matches!(parse_loop("prog f(x) -> { }"), Err(Error::Arity(_))));
        let p = parse_loop("prog f(x) -> r { r := x }").unwrap();
        assert!(matches!(interpret_u64(&p, &[1, 2]), Err(Error::Arity(_))));
    }

    #[test]
    fn loop_count_frozen_at_entry() {
        let p = parse_loop("prog f(n) -> r { for n do n := 0; r := r + 1 end }").unwrap();
        let out = interpret_u64(&p, &[3]).unwrap();
        assert_eq!(out.outputs, vec![BigUint::from(3u32)]);
    }

    #[test]
    fn step_accounting() {
        let p = parse_loop("prog add(x,y)->r { r := x; for y do r := r + 1 end }").unwrap();
        // copy, loop entry, three increments, loop exit
        assert_eq!(interpret_u64(&p, &[2, 3]).unwrap().machine_steps, 6);
        assert_eq!(interpret_u64(&p, &[2, 3]).unwrap().max_register, BigUint::from(5u32));
    }
}
