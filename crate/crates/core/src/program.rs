//! Controller primitives, the program AST and its text form.
//!
//! A program is built from four node kinds:
//!
//! ```text
//! exec 3                 run controller 3 to convergence
//! loop 6 { ... }         repeat the block six times
//! palin [2,1,4,0,3]      2 1 4 0 3 0 4 1 2 (forward, then back to the start)
//! seq { ... }            nested block (only emitted for non-canonical ASTs)
//! ```
//!
//! Statements are newline separated; `#` starts a comment.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::JointState;

pub type SymbolId = u32;

/// Minimum list length of a palindrome node; its expansion then has at least
/// seven symbols.
pub const MIN_PALINDROME_LIST: usize = 4;

/// A proportional controller: goal joint angles and a scalar gain (1/s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub goal: JointState,
    pub gain: f64,
}

impl ControllerParams {
    pub fn new(goal: JointState, gain: f64) -> Result<Self> {
        if !(gain.is_finite() && gain > 0.0) {
            return Err(Error::invalid(format!("controller gain must be positive, got {gain}")));
        }
        if !goal.is_finite() {
            return Err(Error::invalid("controller goal must be finite"));
        }
        Ok(ControllerParams { goal, gain })
    }
}

/// Controllers keyed by dense symbol ids `0..C`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ControllerLibrary {
    controllers: Vec<ControllerParams>,
}

impl ControllerLibrary {
    pub fn new(controllers: Vec<ControllerParams>) -> Self {
        ControllerLibrary { controllers }
    }

    pub fn get(&self, id: SymbolId) -> Option<&ControllerParams> {
        self.controllers.get(id as usize)
    }

    pub fn require(&self, id: SymbolId) -> Result<&ControllerParams> {
        self.get(id)
            .ok_or_else(|| Error::invalid(format!("symbol {id} is not in the controller library")))
    }

    pub fn len(&self) -> usize {
        self.controllers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controllers.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (SymbolId, &ControllerParams)> {
        self.controllers
            .iter()
            .enumerate()
            .map(|(i, c)| (i as SymbolId, c))
    }

    pub fn controllers(&self) -> &[ControllerParams] {
        &self.controllers
    }

    pub fn controllers_mut(&mut self) -> &mut [ControllerParams] {
        &mut self.controllers
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProgramAst {
    Exec(SymbolId),
    Seq(Vec<ProgramAst>),
    Loop { count: u32, body: Box<ProgramAst> },
    Palindrome(Vec<SymbolId>),
}

impl ProgramAst {
    pub fn looped(count: u32, body: ProgramAst) -> Result<Self> {
        if count < 2 {
            return Err(Error::invalid(format!("loop count must be at least 2, got {count}")));
        }
        Ok(ProgramAst::Loop {
            count,
            body: Box::new(body),
        })
    }

    pub fn palindrome(list: Vec<SymbolId>) -> Result<Self> {
        if list.len() < MIN_PALINDROME_LIST {
            return Err(Error::invalid(format!(
                "palindrome list needs at least {MIN_PALINDROME_LIST} controllers, got {}",
                list.len()
            )));
        }
        Ok(ProgramAst::Palindrome(list))
    }

    pub fn sequence(symbols: &[SymbolId]) -> Self {
        ProgramAst::Seq(symbols.iter().map(|&s| ProgramAst::Exec(s)).collect())
    }

    /// Flattens the program into its execution order.
    pub fn expand(&self) -> Vec<SymbolId> {
        let mut out = Vec::new();
        self.expand_into(&mut out);
        out
    }

    fn expand_into(&self, out: &mut Vec<SymbolId>) {
        match self {
            ProgramAst::Exec(s) => out.push(*s),
            ProgramAst::Seq(nodes) => nodes.iter().for_each(|n| n.expand_into(out)),
            ProgramAst::Loop { count, body } => {
                let start = out.len();
                body.expand_into(out);
                let end = out.len();
                for _ in 1..*count {
                    out.extend_from_within(start..end);
                }
            }
            ProgramAst::Palindrome(list) => {
                out.extend_from_slice(list);
                out.extend(list.iter().rev().skip(1));
            }
        }
    }

    pub fn expanded_len(&self) -> usize {
        match self {
            ProgramAst::Exec(_) => 1,
            ProgramAst::Seq(nodes) => nodes.iter().map(ProgramAst::expanded_len).sum(),
            ProgramAst::Loop { count, body } => *count as usize * body.expanded_len(),
            ProgramAst::Palindrome(list) => (2 * list.len()).saturating_sub(1),
        }
    }

    /// Number of statement nodes (`Exec`, `Loop`, `Palindrome`); `Seq` is a
    /// container and does not count.
    pub fn node_count(&self) -> usize {
        match self {
            ProgramAst::Exec(_) | ProgramAst::Palindrome(_) => 1,
            ProgramAst::Seq(nodes) => nodes.iter().map(ProgramAst::node_count).sum(),
            ProgramAst::Loop { body, .. } => 1 + body.node_count(),
        }
    }

    pub fn symbols(&self) -> Vec<SymbolId> {
        let mut s = self.expand();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn contains_structure(&self) -> bool {
        match self {
            ProgramAst::Exec(_) => false,
            ProgramAst::Seq(nodes) => nodes.iter().any(ProgramAst::contains_structure),
            ProgramAst::Loop { .. } | ProgramAst::Palindrome(_) => true,
        }
    }

    /// Canonical form: the top level is a `Seq`, nested `Seq`s are spliced
    /// into their parent and single-statement loop bodies are unwrapped.
    pub fn canonical(&self) -> ProgramAst {
        ProgramAst::Seq(self.canonical_stmts())
    }

    fn canonical_stmts(&self) -> Vec<ProgramAst> {
        match self {
            ProgramAst::Seq(nodes) => nodes.iter().flat_map(|n| n.canonical_stmts()).collect(),
            ProgramAst::Loop { count, body } => {
                let mut stmts = body.canonical_stmts();
                let body = if stmts.len() == 1 {
                    stmts.pop().unwrap()
                } else {
                    ProgramAst::Seq(stmts)
                };
                vec![ProgramAst::Loop {
                    count: *count,
                    body: Box::new(body),
                }]
            }
            other => vec![other.clone()],
        }
    }

    /// Renders the program in the text DSL.
    pub fn to_dsl(&self) -> String {
        let mut out = String::new();
        match self {
            ProgramAst::Seq(nodes) => nodes.iter().for_each(|n| write_stmt(n, 0, &mut out)),
            other => write_stmt(other, 0, &mut out),
        }
        out
    }

    pub fn parse(text: &str) -> Result<ProgramAst> {
        let mut parser = Parser {
            lines: text.lines().enumerate(),
        };
        let stmts = parser.block(None)?;
        Ok(ProgramAst::Seq(stmts))
    }
}

fn write_stmt(node: &ProgramAst, depth: usize, out: &mut String) {
    let pad = "    ".repeat(depth);
    match node {
        ProgramAst::Exec(s) => {
            let _ = writeln!(out, "{pad}exec {s}");
        }
        ProgramAst::Palindrome(list) => {
            let items: Vec<String> = list.iter().map(|s| s.to_string()).collect();
            let _ = writeln!(out, "{pad}palin [{}]", items.join(","));
        }
        ProgramAst::Loop { count, body } => {
            let _ = writeln!(out, "{pad}loop {count} {{");
            match body.as_ref() {
                ProgramAst::Seq(nodes) => nodes.iter().for_each(|n| write_stmt(n, depth + 1, out)),
                other => write_stmt(other, depth + 1, out),
            }
            let _ = writeln!(out, "{pad}}}");
        }
        ProgramAst::Seq(nodes) => {
            let _ = writeln!(out, "{pad}seq {{");
            nodes.iter().for_each(|n| write_stmt(n, depth + 1, out));
            let _ = writeln!(out, "{pad}}}");
        }
    }
}

struct Parser<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl Parser<'_> {
    /// Parses statements until the closing brace of a block opened on
    /// `opened_at`, or end of input at the top level.
    fn block(&mut self, opened_at: Option<usize>) -> Result<Vec<ProgramAst>> {
        let mut stmts = Vec::new();
        while let Some((idx, raw)) = self.lines.next() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |message: String| Error::Syntax {
                line: line_no,
                message,
            };
            if line == "}" {
                return match opened_at {
                    Some(_) => Ok(stmts),
                    None => Err(syntax("unmatched '}'".into())),
                };
            }
            let (keyword, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let rest = rest.trim();
            match keyword {
                "exec" => stmts.push(ProgramAst::Exec(parse_symbol(rest).map_err(syntax)?)),
                "palin" => {
                    let list = rest
                        .strip_prefix('[')
                        .and_then(|r| r.strip_suffix(']'))
                        .ok_or_else(|| syntax("expected palin [a,b,...]".into()))?;
                    let ids = list
                        .split(',')
                        .map(|s| parse_symbol(s.trim()))
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(syntax)?;
                    stmts.push(ProgramAst::palindrome(ids).map_err(|e| syntax(e.to_string()))?);
                }
                "loop" => {
                    let count = rest
                        .strip_suffix('{')
                        .map(str::trim)
                        .ok_or_else(|| syntax("expected loop N {".into()))?;
                    let count: u32 = count
                        .parse()
                        .map_err(|_| syntax(format!("bad loop count {count:?}")))?;
                    let mut body = self.block(Some(line_no))?;
                    let body = if body.len() == 1 {
                        body.pop().unwrap()
                    } else {
                        ProgramAst::Seq(body)
                    };
                    stmts.push(ProgramAst::looped(count, body).map_err(|e| syntax(e.to_string()))?);
                }
                "seq" => {
                    if rest != "{" {
                        return Err(syntax("expected seq {".into()));
                    }
                    stmts.push(ProgramAst::Seq(self.block(Some(line_no))?));
                }
                other => return Err(syntax(format!("unknown statement {other:?}"))),
            }
        }
        match opened_at {
            Some(line) => Err(Error::Syntax {
                line,
                message: "block is never closed".into(),
            }),
            None => Ok(stmts),
        }
    }
}

fn parse_symbol(s: &str) -> std::result::Result<SymbolId, String> {
    s.parse().map_err(|_| format!("bad symbol id {s:?}"))
}

/// Symbol trace produced by the patrol state machine that walks a ring of
/// `explanation.len() - 1` positions back and forth: the state advances by
/// one per step and reverses direction at both ends. The first entry of
/// `explanation` is the start position, which is not emitted.
pub fn patrol_trace(explanation: &[SymbolId], steps: usize) -> Vec<SymbolId> {
    let last = explanation.len().saturating_sub(1);
    if last == 0 {
        return Vec::new();
    }
    let mut state = 0usize;
    let mut up = true;
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        state = if up { state + 1 } else { state - 1 };
        if state == last {
            up = false;
        }
        if state == 0 {
            up = true;
        }
        out.push(explanation[state]);
    }
    out
}
