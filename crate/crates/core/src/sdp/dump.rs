//! Plain-text problem dump for cross-checking against external solvers.
//!
//! ```text
//! condreg-sdp 1
//! vars <n>
//! block <name> <dim>
//! entry <block> <row> <col> <var> <coeff>
//! eq <name> <rhs>
//! le <name> <rhs>
//! a <row> <var> <coeff>        (row indexes eq lines)
//! g <row> <var> <coeff>        (row indexes le lines)
//! c <var> <coeff>
//! q <var> <weight>
//! ```
//!
//! Blocks, equality and inequality rows are numbered in order of
//! appearance. Names must not contain whitespace.

use std::fmt::Write as _;

use super::problem::{LinearRow, PsdBlock, SdpProblem};
use crate::error::{Error, Result};

const MAGIC: &str = "condreg-sdp 1";

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name.chars().any(char::is_whitespace) {
        return Err(Error::Input(format!("name {name:?} cannot be dumped")));
    }
    Ok(())
}

pub fn write_problem(p: &SdpProblem) -> Result<String> {
    let mut s = String::new();
    writeln!(s, "{MAGIC}").unwrap();
    writeln!(s, "vars {}", p.n_vars).unwrap();
    for b in &p.blocks {
        check_name(&b.name)?;
        writeln!(s, "block {} {}", b.name, b.dim).unwrap();
    }
    for (bi, b) in p.blocks.iter().enumerate() {
        for e in &b.entries {
            writeln!(s, "entry {bi} {} {} {} {:e}", e.row, e.col, e.var, e.coeff).unwrap();
        }
    }
    for (tag, coef_tag, rows) in [("eq", "a", &p.equalities), ("le", "g", &p.inequalities)] {
        for r in rows {
            check_name(&r.name)?;
            writeln!(s, "{tag} {} {:e}", r.name, r.rhs).unwrap();
        }
        for (ri, r) in rows.iter().enumerate() {
            for (v, c) in r.vars.iter().zip(&r.coeffs) {
                writeln!(s, "{coef_tag} {ri} {v} {c:e}").unwrap();
            }
        }
    }
    for &(v, c) in &p.linear_objective {
        writeln!(s, "c {v} {c:e}").unwrap();
    }
    for &(v, q) in &p.quadratic_objective {
        writeln!(s, "q {v} {q:e}").unwrap();
    }
    Ok(s)
}

pub fn parse_problem(text: &str) -> Result<SdpProblem> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, l)) if l.trim() == MAGIC => {}
        _ => return Err(Error::Input(format!("missing `{MAGIC}` header"))),
    }
    let mut p = SdpProblem::default();
    for (ln, line) in lines {
        let bad = |msg: &str| Error::Input(format!("line {}: {msg}: {line:?}", ln + 1));
        let f: Vec<&str> = line.split_whitespace().collect();
        let num = |i: usize| -> Result<usize> {
            f.get(i).and_then(|t| t.parse().ok()).ok_or_else(|| bad("expected an integer"))
        };
        let real = |i: usize| -> Result<f64> {
            f.get(i).and_then(|t| t.parse().ok()).ok_or_else(|| bad("expected a number"))
        };
        let row_of = |rows: &mut Vec<LinearRow>, i: usize| -> Result<usize> {
            let r = num(i)?;
            if r < rows.len() {
                Ok(r)
            } else {
                Err(bad("row index before its declaration"))
            }
        };
        match f[0] {
            "vars" => p.n_vars = num(1)?,
            "block" => p.blocks.push(PsdBlock::new(*f.get(1).ok_or_else(|| bad("missing name"))?, num(2)?)),
            "entry" => {
                let b = num(1)?;
                let blk = p.blocks.get_mut(b).ok_or_else(|| bad("unknown block"))?;
                blk.push(num(2)?, num(3)?, num(4)?, real(5)?);
            }
            "eq" | "le" => {
                let name = f.get(1).ok_or_else(|| bad("missing name"))?;
                let row = LinearRow::new(*name, [], real(2)?);
                if f[0] == "eq" {
                    p.equalities.push(row);
                } else {
                    p.inequalities.push(row);
                }
            }
            "a" | "g" => {
                let rows = if f[0] == "a" { &mut p.equalities } else { &mut p.inequalities };
                let r = row_of(rows, 1)?;
                rows[r].vars.push(num(2)?);
                rows[r].coeffs.push(real(3)?);
            }
            "c" => p.linear_objective.push((num(1)?, real(2)?)),
            "q" => p.quadratic_objective.push((num(1)?, real(2)?)),
            _ => return Err(bad("unknown record")),
        }
    }
    p.validate()?;
    Ok(p)
}
