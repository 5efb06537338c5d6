//! Line-oriented text format for BQP instances.
//!
//! ```text
//! # comments and blank lines are ignored
//! bqp <n> <pm1|zo1>
//! family <generic | bisection | threshold <kappa> | matching <K> <L> | partial>
//! offset <v>
//! quad <count>          # objective triplets "i j v", 0-based, one entry
//! ...                   # per unordered pair
//! lin <count>           # objective linear entries "i v"
//! ...
//! outer <coeff> <left_nnz> <right_nnz>   # optional rank-one terms,
//! l <i> <v> ...                          # coeff*(l rᵀ + r lᵀ)/2
//! r <i> <v> ...
//! con <eq|le> <rhs>     # one block per constraint, closed by "end"
//! quad <count> / lin <count> / outer ... as above
//! end
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so saving
//! and loading reproduces every value bit-exactly. The parser rejects
//! duplicate triplets, non-finite numbers and dimension mismatches with
//! line-numbered diagnostics.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{OuterTerm, SymMat};
use crate::model::{BqpConstraint, BqpInstance, ConstraintKind, Family, VarDomain};

pub fn save_instance(path: &Path, bqp: &BqpInstance) -> Result<()> {
    std::fs::write(path, format_instance(bqp)).map_err(Error::from)
}

pub fn load_instance(path: &Path) -> Result<BqpInstance> {
    let text = std::fs::read_to_string(path)?;
    parse_instance(&text, &path.display().to_string())
}

pub fn format_instance(bqp: &BqpInstance) -> String {
    let mut out = String::new();
    let domain = match bqp.domain {
        VarDomain::PlusMinusOne => "pm1",
        VarDomain::ZeroOne => "zo1",
    };
    let _ = writeln!(out, "bqp {} {}", bqp.n, domain);
    match bqp.family {
        Family::Generic => {}
        Family::Bisection => {
            let _ = writeln!(out, "family bisection");
        }
        Family::ThresholdBalance { kappa } => {
            let _ = writeln!(out, "family threshold {kappa}");
        }
        Family::Matching { k, l } => {
            let _ = writeln!(out, "family matching {k} {l}");
        }
        Family::PartialGrouping => {
            let _ = writeln!(out, "family partial");
        }
    }
    if bqp.offset != 0.0 {
        let _ = writeln!(out, "offset {}", bqp.offset);
    }
    write_mat(&mut out, &bqp.quad, &bqp.lin);
    for c in &bqp.constraints {
        let kind = match c.kind {
            ConstraintKind::Eq => "eq",
            ConstraintKind::Ineq => "le",
        };
        let _ = writeln!(out, "con {} {}", kind, c.rhs);
        write_mat(&mut out, &c.quad, &c.lin);
        let _ = writeln!(out, "end");
    }
    out
}

fn write_mat(out: &mut String, quad: &SymMat, lin: &DVector<f64>) {
    let _ = writeln!(out, "quad {}", quad.triplets().nnz());
    for (i, j, v) in quad.triplets().iter() {
        let _ = writeln!(out, "{i} {j} {v}");
    }
    let lin_nnz = lin.iter().filter(|&&v| v != 0.0).count();
    let _ = writeln!(out, "lin {lin_nnz}");
    for (i, &v) in lin.iter().enumerate() {
        if v != 0.0 {
            let _ = writeln!(out, "{i} {v}");
        }
    }
    for t in quad.outers() {
        let lnnz = t.left.iter().filter(|&&v| v != 0.0).count();
        let rnnz = t.right.iter().filter(|&&v| v != 0.0).count();
        let _ = writeln!(out, "outer {} {} {}", t.coeff, lnnz, rnnz);
        for (i, &v) in t.left.iter().enumerate() {
            if v != 0.0 {
                let _ = writeln!(out, "l {i} {v}");
            }
        }
        for (i, &v) in t.right.iter().enumerate() {
            if v != 0.0 {
                let _ = writeln!(out, "r {i} {v}");
            }
        }
    }
}

struct Lines<'a> {
    path: &'a str,
    items: Vec<(usize, Vec<&'a str>)>,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str, path: &'a str) -> Self {
        let items = text
            .lines()
            .enumerate()
            .filter_map(|(no, raw)| {
                let body = raw.split('#').next().unwrap_or("").trim();
                if body.is_empty() {
                    None
                } else {
                    Some((no + 1, body.split_whitespace().collect()))
                }
            })
            .collect();
        Lines { path, items, pos: 0 }
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse { path: self.path.to_string(), line, msg: msg.into() }
    }

    fn next(&mut self) -> Option<(usize, Vec<&'a str>)> {
        let item = self.items.get(self.pos)?;
        self.pos += 1;
        Some((item.0, item.1.clone()))
    }

    fn peek_keyword(&self) -> Option<&'a str> {
        self.items.get(self.pos).map(|(_, toks)| toks[0])
    }

    fn last_line(&self) -> usize {
        self.items.last().map(|(no, _)| *no).unwrap_or(1)
    }
}

fn parse_f64(lines: &Lines, line: usize, tok: &str) -> Result<f64> {
    let v: f64 =
        tok.parse().map_err(|_| lines.err(line, format!("expected a number, got {tok:?}")))?;
    if !v.is_finite() {
        return Err(lines.err(line, format!("non-finite value {tok:?}")));
    }
    Ok(v)
}

fn parse_usize(lines: &Lines, line: usize, tok: &str) -> Result<usize> {
    tok.parse().map_err(|_| lines.err(line, format!("expected a count/index, got {tok:?}")))
}

/// Parses `quad`/`lin`/`outer` blocks into a matrix and linear part.
fn parse_mat(lines: &mut Lines, n: usize) -> Result<(SymMat, DVector<f64>)> {
    let (line, toks) = lines
        .next()
        .ok_or_else(|| lines.err(lines.last_line(), "unexpected end of file, expected quad"))?;
    if toks[0] != "quad" || toks.len() != 2 {
        return Err(lines.err(line, format!("expected `quad <count>`, got {:?}", toks.join(" "))));
    }
    let count = parse_usize(lines, line, toks[1])?;
    let mut entries = Vec::with_capacity(count);
    let mut seen = BTreeSet::new();
    for _ in 0..count {
        let (line, toks) =
            lines.next().ok_or_else(|| lines.err(lines.last_line(), "missing quad entry"))?;
        if toks.len() != 3 {
            return Err(lines.err(line, "quad entry must be `i j v`"));
        }
        let i = parse_usize(lines, line, toks[0])?;
        let j = parse_usize(lines, line, toks[1])?;
        let v = parse_f64(lines, line, toks[2])?;
        if i >= n || j >= n {
            return Err(lines.err(line, format!("index out of range (n = {n})")));
        }
        if !seen.insert((i.max(j), i.min(j))) {
            return Err(lines.err(line, format!("duplicate triplet ({i}, {j})")));
        }
        entries.push((i, j, v));
    }
    let mut quad = SymMat::from_triplets(n, entries)?;

    let (line, toks) = lines
        .next()
        .ok_or_else(|| lines.err(lines.last_line(), "unexpected end of file, expected lin"))?;
    if toks[0] != "lin" || toks.len() != 2 {
        return Err(lines.err(line, format!("expected `lin <count>`, got {:?}", toks.join(" "))));
    }
    let count = parse_usize(lines, line, toks[1])?;
    let mut lin = DVector::zeros(n);
    let mut seen = BTreeSet::new();
    for _ in 0..count {
        let (line, toks) =
            lines.next().ok_or_else(|| lines.err(lines.last_line(), "missing lin entry"))?;
        if toks.len() != 2 {
            return Err(lines.err(line, "lin entry must be `i v`"));
        }
        let i = parse_usize(lines, line, toks[0])?;
        if i >= n {
            return Err(lines.err(line, format!("index out of range (n = {n})")));
        }
        if !seen.insert(i) {
            return Err(lines.err(line, format!("duplicate linear entry {i}")));
        }
        lin[i] = parse_f64(lines, line, toks[1])?;
    }

    while lines.peek_keyword() == Some("outer") {
        let (line, toks) = lines.next().unwrap();
        if toks.len() != 4 {
            return Err(lines.err(line, "expected `outer <coeff> <left_nnz> <right_nnz>`"));
        }
        let coeff = parse_f64(lines, line, toks[1])?;
        let lnnz = parse_usize(lines, line, toks[2])?;
        let rnnz = parse_usize(lines, line, toks[3])?;
        let mut left = DVector::zeros(n);
        let mut right = DVector::zeros(n);
        for (count, tag, vec) in [(lnnz, "l", &mut left), (rnnz, "r", &mut right)] {
            let mut seen = BTreeSet::new();
            for _ in 0..count {
                let (line, toks) = lines
                    .next()
                    .ok_or_else(|| lines.err(lines.last_line(), "missing outer entry"))?;
                if toks.len() != 3 || toks[0] != tag {
                    return Err(lines.err(line, format!("expected `{tag} <i> <v>`")));
                }
                let i = parse_usize(lines, line, toks[1])?;
                if i >= n {
                    return Err(lines.err(line, format!("index out of range (n = {n})")));
                }
                if !seen.insert(i) {
                    return Err(lines.err(line, format!("duplicate outer entry {i}")));
                }
                vec[i] = parse_f64(lines, line, toks[2])?;
            }
        }
        quad.push_outer(OuterTerm { coeff, left, right })?;
    }
    Ok((quad, lin))
}

pub fn parse_instance(text: &str, path: &str) -> Result<BqpInstance> {
    let mut lines = Lines::new(text, path);
    let (line, toks) = lines.next().ok_or_else(|| lines.err(1, "empty instance file"))?;
    if toks[0] != "bqp" || toks.len() != 3 {
        return Err(lines.err(line, format!("expected header `bqp <n> <pm1|zo1>`, got {:?}", toks.join(" "))));
    }
    let n = parse_usize(&lines, line, toks[1])?;
    if n == 0 {
        return Err(lines.err(line, "n must be positive"));
    }
    let domain = match toks[2] {
        "pm1" => VarDomain::PlusMinusOne,
        "zo1" => VarDomain::ZeroOne,
        other => return Err(lines.err(line, format!("unknown domain {other:?}"))),
    };

    let mut family = Family::Generic;
    if lines.peek_keyword() == Some("family") {
        let (line, toks) = lines.next().unwrap();
        family = match toks.get(1).copied() {
            Some("generic") => Family::Generic,
            Some("bisection") => Family::Bisection,
            Some("threshold") if toks.len() == 3 => {
                Family::ThresholdBalance { kappa: parse_f64(&lines, line, toks[2])? }
            }
            Some("matching") if toks.len() == 4 => Family::Matching {
                k: parse_usize(&lines, line, toks[2])?,
                l: parse_usize(&lines, line, toks[3])?,
            },
            Some("partial") => Family::PartialGrouping,
            _ => return Err(lines.err(line, format!("unknown family {:?}", toks[1..].join(" ")))),
        };
    }

    let mut offset = 0.0;
    if lines.peek_keyword() == Some("offset") {
        let (line, toks) = lines.next().unwrap();
        if toks.len() != 2 {
            return Err(lines.err(line, "expected `offset <v>`"));
        }
        offset = parse_f64(&lines, line, toks[1])?;
    }

    let (quad, lin) = parse_mat(&mut lines, n)?;
    let mut bqp = BqpInstance::new(n, quad, lin, domain)?;
    bqp.family = family;
    bqp.offset = offset;

    while let Some((line, toks)) = lines.next() {
        if toks[0] != "con" || toks.len() != 3 {
            return Err(lines.err(line, format!("expected `con <eq|le> <rhs>`, got {:?}", toks.join(" "))));
        }
        let kind = match toks[1] {
            "eq" => ConstraintKind::Eq,
            "le" => ConstraintKind::Ineq,
            other => return Err(lines.err(line, format!("unknown constraint kind {other:?}"))),
        };
        let rhs = parse_f64(&lines, line, toks[2])?;
        let (quad, lin) = parse_mat(&mut lines, n)?;
        let (line_end, toks_end) = lines
            .next()
            .ok_or_else(|| lines.err(lines.last_line(), "constraint block not closed by `end`"))?;
        if toks_end[0] != "end" {
            return Err(lines.err(line_end, format!("expected `end`, got {:?}", toks_end.join(" "))));
        }
        bqp.push_constraint(BqpConstraint { quad, lin, rhs, kind })?;
    }
    if matches!(bqp.family, Family::Matching { k, l } if k * l != n) {
        return Err(lines.err(1, "matching family dimensions do not multiply to n"));
    }
    Ok(bqp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apps::{gen_bisection, gen_matching, GraphSpec, MatchingSpec};

    #[test]
    fn bisection_round_trips_bit_exactly() {
        let bqp = gen_bisection(&GraphSpec::dense_uniform(8, 17)).unwrap();
        let text = format_instance(&bqp);
        let back = parse_instance(&text, "mem").unwrap();
        assert_eq!(back.n, bqp.n);
        assert_eq!(back.domain, bqp.domain);
        assert_eq!(back.family, bqp.family);
        assert_eq!(back.quad, bqp.quad);
        assert_eq!(back.lin, bqp.lin);
        assert_eq!(back.constraints.len(), bqp.constraints.len());
        for (a, b) in back.constraints.iter().zip(bqp.constraints.iter()) {
            assert_eq!(a.quad, b.quad);
            assert_eq!(a.lin, b.lin);
            assert!(a.rhs == b.rhs && a.kind == b.kind);
        }
    }

    #[test]
    fn matching_keeps_k_l_metadata() {
        let inst =
            gen_matching(&MatchingSpec { k: 2, l: 3, jitter: 0.01, sigma: None, seed: 4 }).unwrap();
        let text = format_instance(&inst.bqp);
        let back = parse_instance(&text, "mem").unwrap();
        assert_eq!(back.family, Family::Matching { k: 2, l: 3 });
        assert_eq!(back.lin, inst.bqp.lin);
    }

    #[test]
    fn malformed_header_names_line_one() {
        let err = parse_instance("qubo 3 pm1\n", "f.bqp").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn hand_written_fixture_with_inequality() {
        let text = "\
# three variables, one inequality
bqp 3 pm1
quad 2
0 0 1.5
1 0 -0.25
lin 1
2 0.75
con le 2.5
quad 1
2 2 1
lin 0
end
";
        let bqp = parse_instance(text, "mem").unwrap();
        assert_eq!(bqp.n, 3);
        assert_eq!(bqp.constraints.len(), 1);
        assert_eq!(bqp.constraints[0].kind, ConstraintKind::Ineq);
        assert_eq!(bqp.constraints[0].rhs, 2.5);
        let x = DVector::from_vec(vec![1.0, -1.0, 1.0]);
        // objective: 1.5 + 2·(−0.25)·(−1) + 0.75 = 2.75
        assert!((bqp.objective(&x) - 2.75).abs() < 1e-12);
    }

    #[test]
    fn rejects_duplicates_nan_and_bad_indices() {
        let dup = "bqp 2 pm1\nquad 2\n0 1 1.0\n1 0 2.0\nlin 0\n";
        assert!(matches!(parse_instance(dup, "f"), Err(Error::Parse { line: 4, .. })));
        let nan = "bqp 2 pm1\nquad 1\n0 0 nan\nlin 0\n";
        assert!(parse_instance(nan, "f").is_err());
        let oob = "bqp 2 pm1\nquad 1\n0 2 1.0\nlin 0\n";
        assert!(parse_instance(oob, "f").is_err());
    }
}
