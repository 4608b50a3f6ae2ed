//! Program induction: compress a symbol trace into loops, palindromes and
//! plain sequences.

use crate::program::{ProgramAst, SymbolId};

/// Shortest palindrome (in expanded symbols) that gets folded.
pub const MIN_PALINDROME_SPAN: usize = 7;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Literal(Vec<SymbolId>),
    Palindrome(Vec<SymbolId>),
    Loop { count: u32, body: Vec<Segment> },
}

impl Segment {
    fn expand_into(&self, out: &mut Vec<SymbolId>) {
        match self {
            Segment::Literal(s) => out.extend_from_slice(s),
            Segment::Palindrome(half) => {
                out.extend_from_slice(half);
                out.extend(half.iter().rev().skip(1));
            }
            Segment::Loop { count, body } => {
                for _ in 0..*count {
                    body.iter().for_each(|b| b.expand_into(out));
                }
            }
        }
    }
}

pub fn expand_segments(segments: &[Segment]) -> Vec<SymbolId> {
    let mut out = Vec::new();
    segments.iter().for_each(|s| s.expand_into(&mut out));
    out
}

/// Best run of consecutive repeats as `(start, unit, repeats)`: most repeats,
/// then longer unit, then earlier start.
fn best_run(trace: &[SymbolId]) -> Option<(usize, usize, usize)> {
    let n = trace.len();
    let mut best: Option<(usize, usize, usize)> = None;
    let mut matches = vec![0usize; n];
    for unit in 1..=n / 2 {
        // matches[i] = length of the run of trace[j] == trace[j + unit] from i
        for i in (0..n - unit).rev() {
            matches[i] = if trace[i] == trace[i + unit] {
                1 + if i + 1 < n - unit { matches[i + 1] } else { 0 }
            } else {
                0
            };
        }
        for start in 0..n - unit {
            let reps = 1 + matches[start] / unit;
            if reps < 2 {
                continue;
            }
            let better = match best {
                None => true,
                Some((bs, bu, br)) => (reps, unit, std::cmp::Reverse(start)) > (br, bu, std::cmp::Reverse(bs)),
            };
            if better {
                best = Some((start, unit, reps));
            }
        }
    }
    best
}

/// Replaces the strongest repeated run with a loop and recurses on the text
/// before it, after it and inside the loop body.
pub fn roll_loops(trace: &[SymbolId]) -> Vec<Segment> {
    let mut out = Vec::new();
    roll_into(trace, &mut out);
    out
}

fn roll_into(trace: &[SymbolId], out: &mut Vec<Segment>) {
    if trace.is_empty() {
        return;
    }
    let Some((start, unit, reps)) = best_run(trace) else {
        match out.last_mut() {
            Some(Segment::Literal(prev)) => prev.extend_from_slice(trace),
            _ => out.push(Segment::Literal(trace.to_vec())),
        }
        return;
    };
    roll_into(&trace[..start], out);
    out.push(Segment::Loop {
        count: reps as u32,
        body: roll_loops(&trace[start..start + unit]),
    });
    roll_into(&trace[start + unit * reps..], out);
}

/// Longest odd-length palindrome of at least `MIN_PALINDROME_SPAN` symbols,
/// earliest on ties, as `(start, len)`.
fn longest_odd_palindrome(s: &[SymbolId]) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    for center in 0..s.len() {
        let mut r = 0;
        while r < center && center + r + 1 < s.len() && s[center - r - 1] == s[center + r + 1] {
            r += 1;
        }
        let len = 2 * r + 1;
        let start = center - r;
        if len >= MIN_PALINDROME_SPAN && best.map_or(true, |(bs, bl)| len > bl || (len == bl && start < bs)) {
            best = Some((start, len));
        }
    }
    best
}

fn fold_literal(s: &[SymbolId], out: &mut Vec<Segment>) {
    if s.is_empty() {
        return;
    }
    match longest_odd_palindrome(s) {
        None => out.push(Segment::Literal(s.to_vec())),
        Some((start, len)) => {
            fold_literal(&s[..start], out);
            out.push(Segment::Palindrome(s[start..start + len / 2 + 1].to_vec()));
            fold_literal(&s[start + len..], out);
        }
    }
}

/// Folds odd palindromes inside every literal, including loop bodies.
pub fn fold_palindromes(segments: Vec<Segment>) -> Vec<Segment> {
    let mut out = Vec::new();
    for seg in segments {
        match seg {
            Segment::Literal(s) => fold_literal(&s, &mut out),
            Segment::Loop { count, body } => out.push(Segment::Loop {
                count,
                body: fold_palindromes(body),
            }),
            p @ Segment::Palindrome(_) => out.push(p),
        }
    }
    out
}

fn to_statements(segments: &[Segment]) -> Vec<ProgramAst> {
    let mut stmts = Vec::new();
    for seg in segments {
        match seg {
            Segment::Literal(s) => stmts.extend(s.iter().map(|&x| ProgramAst::Exec(x))),
            Segment::Palindrome(half) => stmts.push(ProgramAst::Palindrome(half.clone())),
            Segment::Loop { count, body } => {
                let mut inner = to_statements(body);
                let body = if inner.len() == 1 {
                    inner.pop().unwrap()
                } else {
                    ProgramAst::Seq(inner)
                };
                stmts.push(ProgramAst::Loop {
                    count: *count,
                    body: Box::new(body),
                });
            }
        }
    }
    stmts
}

/// Loops first, then palindromes; the result is a top-level `Seq` whose
/// expansion is exactly `trace`.
pub fn induce_program(trace: &[SymbolId]) -> ProgramAst {
    ProgramAst::Seq(to_statements(&fold_palindromes(roll_loops(trace))))
}

pub fn pretty_print(p: &ProgramAst) -> String {
    p.to_dsl()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_period() {
        assert_eq!(
            roll_loops(&[1, 2, 1, 2, 1, 2]),
            vec![Segment::Loop {
                count: 3,
                body: vec![Segment::Literal(vec![1, 2])]
            }]
        );
        assert_eq!(roll_loops(&[1, 2, 3]), vec![Segment::Literal(vec![1, 2, 3])]);
    }

    #[test]
    fn tie_prefers_longer_unit_then_earlier_start() {
        // unit 1 and unit 3 both repeat twice
        let segs = roll_loops(&[1, 1, 2, 1, 1, 2]);
        assert_eq!(
            segs,
            vec![Segment::Loop {
                count: 2,
                body: vec![
                    Segment::Loop {
                        count: 2,
                        body: vec![Segment::Literal(vec![1])]
                    },
                    Segment::Literal(vec![2])
                ]
            }]
        );
        assert_eq!(best_run(&[5, 5, 7, 6, 6]), Some((0, 1, 2)));
    }

    #[test]
    fn palindrome_examples() {
        let fold = |s: &[SymbolId]| fold_palindromes(vec![Segment::Literal(s.to_vec())]);
        assert_eq!(fold(&[2, 1, 4, 0, 3, 0, 4, 1, 2]), vec![Segment::Palindrome(vec![2, 1, 4, 0, 3])]);
        assert_eq!(fold(&[1, 2, 3, 2, 1]), vec![Segment::Literal(vec![1, 2, 3, 2, 1])]);
        // flanked by equal symbols the whole run is the longest palindrome
        assert_eq!(
            fold(&[9, 2, 1, 4, 0, 3, 0, 4, 1, 2, 9]),
            vec![Segment::Palindrome(vec![9, 2, 1, 4, 0, 3])]
        );
        assert_eq!(
            fold(&[8, 2, 1, 4, 0, 3, 0, 4, 1, 2, 9]),
            vec![
                Segment::Literal(vec![8]),
                Segment::Palindrome(vec![2, 1, 4, 0, 3]),
                Segment::Literal(vec![9])
            ]
        );
        // even palindromes stay literal
        assert_eq!(fold(&[1, 2, 3, 4, 4, 3, 2, 1]).len(), 1);
    }

    #[test]
    fn listing_trace_structure() {
        let trace = crate::program::patrol_trace(&[3, 2, 1, 4, 0, 3], 65);
        let rolled = roll_loops(&trace);
        assert_eq!(
            rolled,
            vec![
                Segment::Loop {
                    count: 6,
                    body: vec![Segment::Literal(vec![2, 1, 4, 0, 3, 0, 4, 1, 2, 3])]
                },
                Segment::Literal(vec![2, 1, 4, 0, 3])
            ]
        );
        let p = induce_program(&trace);
        assert_eq!(
            pretty_print(&p),
            "loop 6 {\n    palin [2,1,4,0,3]\n    exec 3\n}\nexec 2\nexec 1\nexec 4\nexec 0\nexec 3\n"
        );
        assert_eq!(p.node_count(), 8);
        assert_eq!(ProgramAst::parse(&pretty_print(&p)).unwrap(), p);
    }

    #[test]
    fn empty_and_increasing_traces() {
        assert_eq!(induce_program(&[]), ProgramAst::Seq(vec![]));
        let inc: Vec<SymbolId> = (0..15).collect();
        let p = induce_program(&inc);
        assert_eq!(p, ProgramAst::sequence(&inc));
        assert!(!p.contains_structure());
    }
}
