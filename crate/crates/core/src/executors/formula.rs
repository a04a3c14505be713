//! Whitelisted formula language: numbers, strings, TRUE/FALSE, cell refs,
//! ranges, sheet-qualified refs, `+ - * / ^`, comparisons, parentheses and
//! the functions SUM, AVERAGE, MIN, MAX, COUNT, IF.
//!
//! Precedence, loosest first: comparisons, `+ -`, `* /`, `^`, unary minus.
//! All binary operators are left-associative, so `2^3^2` is 64 and `-2^2`
//! is 4.

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::workbook::{a1_ref, column_number, format_number, CellKind, CellRange, CellValue, Workbook};

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Number(f64),
    Text(String),
    Bool(bool),
    Empty,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormulaError {
    #[error("parse error at offset {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("unknown function {0}")]
    UnknownFunction(String),
    #[error("circular reference through {0}")]
    CycleDetected(String),
    #[error("division by zero")]
    DivByZero,
    #[error("{0}")]
    Value(String),
    #[error("{0}")]
    Num(String),
    #[error("bad reference {0}")]
    Ref(String),
}

impl FormulaError {
    /// Spreadsheet-style error code.
    pub fn code(&self) -> &'static str {
        match self {
            FormulaError::Parse { .. } => "#ERROR!",
            FormulaError::UnknownFunction(_) => "#NAME?",
            FormulaError::CycleDetected(_) => "#CIRC!",
            FormulaError::DivByZero => "#DIV/0!",
            FormulaError::Value(_) => "#VALUE!",
            FormulaError::Num(_) => "#NUM!",
            FormulaError::Ref(_) => "#REF!",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sum,
    Average,
    Min,
    Max,
    Count,
    If,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name.to_ascii_uppercase().as_str() {
            "SUM" => Func::Sum,
            "AVERAGE" => Func::Average,
            "MIN" => Func::Min,
            "MAX" => Func::Max,
            "COUNT" => Func::Count,
            "IF" => Func::If,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Number(f64),
    Text(String),
    Bool(bool),
    Ref {
        sheet: Option<String>,
        row: u32,
        col: u32,
    },
    Range {
        sheet: Option<String>,
        range: CellRange,
    },
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Str(String),
    Ident(String),
    Sheet(String),
    Op(&'static str),
    LParen,
    RParen,
    Comma,
    Colon,
}

fn perr(pos: usize, msg: impl Into<String>) -> FormulaError {
    FormulaError::Parse { pos, msg: msg.into() }
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, FormulaError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let tok = match c {
            '(' => {
                i += 1;
                Tok::LParen
            }
            ')' => {
                i += 1;
                Tok::RParen
            }
            ',' => {
                i += 1;
                Tok::Comma
            }
            ':' => {
                i += 1;
                Tok::Colon
            }
            '+' | '-' | '*' | '/' | '^' | '=' => {
                i += 1;
                Tok::Op(match c {
                    '+' => "+",
                    '-' => "-",
                    '*' => "*",
                    '/' => "/",
                    '^' => "^",
                    _ => "=",
                })
            }
            '<' | '>' => {
                i += 1;
                let next = chars.get(i).copied();
                let op = match (c, next) {
                    ('<', Some('=')) => "<=",
                    ('<', Some('>')) => "<>",
                    ('>', Some('=')) => ">=",
                    ('<', _) => "<",
                    _ => ">",
                };
                if op.len() == 2 {
                    i += 1;
                }
                Tok::Op(op)
            }
            '"' => {
                i += 1;
                let mut s = String::new();
                loop {
                    match chars.get(i) {
                        None => return Err(perr(start, "unterminated string")),
                        Some('"') if chars.get(i + 1) == Some(&'"') => {
                            s.push('"');
                            i += 2;
                        }
                        Some('"') => {
                            i += 1;
                            break;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            i += 1;
                        }
                    }
                }
                Tok::Str(s)
            }
            '\'' => {
                i += 1;
                let mut s = String::new();
                loop {
                    match chars.get(i) {
                        None => return Err(perr(start, "unterminated sheet name")),
                        Some('\'') if chars.get(i + 1) == Some(&'\'') => {
                            s.push('\'');
                            i += 2;
                        }
                        Some('\'') => {
                            i += 1;
                            break;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            i += 1;
                        }
                    }
                }
                if chars.get(i) != Some(&'!') {
                    return Err(perr(i, "expected `!` after quoted sheet name"));
                }
                i += 1;
                Tok::Sheet(s)
            }
            c if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(char::is_ascii_digit)) => {
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && matches!(chars[i], 'e' | 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && matches!(chars[j], '+' | '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = chars[start..i].iter().collect();
                // a digit-led name such as `1A` is not a number
                if i < chars.len() && (chars[i].is_alphabetic() || chars[i] == '_') {
                    return Err(perr(start, format!("invalid token starting at `{text}`")));
                }
                Tok::Num(text.parse().map_err(|_| perr(start, format!("invalid number `{text}`")))?)
            }
            c if c.is_alphabetic() || c == '_' || c == '$' => {
                while i < chars.len() && (chars[i].is_alphanumeric() || matches!(chars[i], '_' | '$' | '.')) {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                if chars.get(i) == Some(&'!') {
                    i += 1;
                    Tok::Sheet(text)
                } else {
                    Tok::Ident(text)
                }
            }
            other => return Err(perr(start, format!("unexpected character `{other}`"))),
        };
        out.push((start, tok));
    }
    Ok(out)
}

/// Parses an A1 reference with optional `$` anchors.
fn parse_cell(s: &str) -> Option<(u32, u32)> {
    let s: String = s.chars().filter(|&c| c != '$').collect();
    let split = s.find(|c: char| c.is_ascii_digit())?;
    let (letters, digits) = s.split_at(split);
    if letters.is_empty() || !letters.chars().all(|c| c.is_ascii_alphabetic()) || !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let col = column_number(letters)?;
    let row: u64 = digits.parse().ok()?;
    if row < 1 || row > crate::workbook::MAX_ROWS as u64 || col > crate::workbook::MAX_COLS as u64 {
        return None;
    }
    Some((row as u32, col as u32))
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(p, _)| *p)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn eat_op(&mut self, ops: &[&'static str]) -> Option<&'static str> {
        match self.peek() {
            Some(Tok::Op(o)) if ops.contains(o) => {
                let o = *o;
                self.pos += 1;
                Some(o)
            }
            _ => None,
        }
    }

    fn comparison(&mut self) -> Result<Expr, FormulaError> {
        let mut left = self.additive()?;
        while let Some(op) = self.eat_op(&["=", "<>", "<", "<=", ">", ">="]) {
            let right = self.additive()?;
            let op = match op {
                "=" => BinOp::Eq,
                "<>" => BinOp::Ne,
                "<" => BinOp::Lt,
                "<=" => BinOp::Le,
                ">" => BinOp::Gt,
                _ => BinOp::Ge,
            };
            left = Expr::Binary(op, Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn additive(&mut self) -> Result<Expr, FormulaError> {
        let mut left = self.term()?;
        while let Some(op) = self.eat_op(&["+", "-"]) {
            let right = self.term()?;
            let op = if op == "+" { BinOp::Add } else { BinOp::Sub };
            left = Expr::Binary(op, Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn term(&mut self) -> Result<Expr, FormulaError> {
        let mut left = self.power()?;
        while let Some(op) = self.eat_op(&["*", "/"]) {
            let right = self.power()?;
            let op = if op == "*" { BinOp::Mul } else { BinOp::Div };
            left = Expr::Binary(op, Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn power(&mut self) -> Result<Expr, FormulaError> {
        let mut left = self.unary()?;
        while self.eat_op(&["^"]).is_some() {
            let right = self.unary()?;
            left = Expr::Binary(BinOp::Pow, Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<Expr, FormulaError> {
        match self.eat_op(&["-", "+"]) {
            Some("-") => Ok(Expr::Neg(Box::new(self.unary()?))),
            Some(_) => self.unary(),
            None => self.primary(),
        }
    }

    fn reference(&mut self, sheet: Option<String>) -> Result<Expr, FormulaError> {
        let at = self.offset();
        let first = match self.next() {
            Some(Tok::Ident(s)) => s,
            _ => return Err(perr(at, "expected a cell reference")),
        };
        let (r1, c1) = parse_cell(&first).ok_or_else(|| perr(at, format!("`{first}` is not a cell reference")))?;
        if self.peek() != Some(&Tok::Colon) {
            return Ok(Expr::Ref { sheet, row: r1, col: c1 });
        }
        self.pos += 1;
        let at = self.offset();
        let second = match self.next() {
            Some(Tok::Ident(s)) => s,
            Some(Tok::Sheet(s)) if sheet.as_deref() == Some(s.as_str()) => match self.next() {
                Some(Tok::Ident(i)) => i,
                _ => return Err(perr(at, "expected a cell reference after `:`")),
            },
            _ => return Err(perr(at, "expected a cell reference after `:`")),
        };
        let (r2, c2) = parse_cell(&second).ok_or_else(|| perr(at, format!("`{second}` is not a cell reference")))?;
        Ok(Expr::Range {
            sheet,
            range: CellRange::new(r1, c1, r2, c2),
        })
    }

    fn primary(&mut self) -> Result<Expr, FormulaError> {
        let at = self.offset();
        match self.peek().cloned() {
            None => Err(perr(at, "unexpected end of formula")),
            Some(Tok::Num(n)) => {
                self.pos += 1;
                Ok(Expr::Number(n))
            }
            Some(Tok::Str(s)) => {
                self.pos += 1;
                Ok(Expr::Text(s))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.comparison()?;
                match self.next() {
                    Some(Tok::RParen) => Ok(e),
                    _ => Err(perr(at, "unbalanced parenthesis")),
                }
            }
            Some(Tok::Sheet(s)) => {
                self.pos += 1;
                self.reference(Some(s))
            }
            Some(Tok::Ident(name)) => {
                if self.toks.get(self.pos + 1).map(|(_, t)| t) == Some(&Tok::LParen) {
                    let func = Func::lookup(&name).ok_or_else(|| FormulaError::UnknownFunction(name.to_ascii_uppercase()))?;
                    self.pos += 2;
                    let mut args = Vec::new();
                    if self.peek() == Some(&Tok::RParen) {
                        self.pos += 1;
                    } else {
                        loop {
                            args.push(self.comparison()?);
                            match self.next() {
                                Some(Tok::Comma) => continue,
                                Some(Tok::RParen) => break,
                                _ => return Err(perr(self.offset(), "expected `,` or `)`")),
                            }
                        }
                    }
                    let ok = match func {
                        Func::If => (2..=3).contains(&args.len()),
                        _ => !args.is_empty(),
                    };
                    if !ok {
                        return Err(perr(at, format!("wrong number of arguments to {}", name.to_ascii_uppercase())));
                    }
                    return Ok(Expr::Call(func, args));
                }
                match name.to_ascii_uppercase().as_str() {
                    "TRUE" => {
                        self.pos += 1;
                        Ok(Expr::Bool(true))
                    }
                    "FALSE" => {
                        self.pos += 1;
                        Ok(Expr::Bool(false))
                    }
                    _ => self.reference(None),
                }
            }
            Some(t) => Err(perr(at, format!("unexpected token {t:?}"))),
        }
    }
}

/// Parses a formula; the leading `=` is required.
pub fn parse_formula(src: &str) -> Result<Expr, FormulaError> {
    let body = src
        .strip_prefix('=')
        .ok_or_else(|| perr(0, "formula must start with `=`"))?;
    let toks: Vec<(usize, Tok)> = lex(body)?.into_iter().map(|(p, t)| (p + 1, t)).collect();
    let mut p = Parser {
        toks,
        pos: 0,
        end: src.len(),
    };
    let e = p.comparison()?;
    if p.pos < p.toks.len() {
        return Err(perr(p.offset(), "unexpected trailing input"));
    }
    Ok(e)
}

/// Cell lookup used during evaluation. `sheet` is `None` for unqualified
/// references.
pub trait Resolver {
    fn cell(&self, sheet: Option<&str>, row: u32, col: u32) -> Result<Value, FormulaError>;
}

impl<F> Resolver for F
where
    F: Fn(Option<&str>, u32, u32) -> Result<Value, FormulaError>,
{
    fn cell(&self, sheet: Option<&str>, row: u32, col: u32) -> Result<Value, FormulaError> {
        self(sheet, row, col)
    }
}

pub fn to_number(v: &Value) -> Result<f64, FormulaError> {
    match v {
        Value::Number(n) => Ok(*n),
        Value::Bool(b) => Ok(if *b { 1.0 } else { 0.0 }),
        Value::Empty => Ok(0.0),
        Value::Text(s) => s
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|n| n.is_finite())
            .ok_or_else(|| FormulaError::Value(format!("text {s:?} is not a number"))),
    }
}

fn to_bool(v: &Value) -> Result<bool, FormulaError> {
    match v {
        Value::Bool(b) => Ok(*b),
        Value::Number(n) => Ok(*n != 0.0),
        Value::Empty => Ok(false),
        Value::Text(s) if s.eq_ignore_ascii_case("true") => Ok(true),
        Value::Text(s) if s.eq_ignore_ascii_case("false") => Ok(false),
        Value::Text(s) => Err(FormulaError::Value(format!("text {s:?} is not a condition"))),
    }
}

/// Type order for mixed comparisons: numbers < text < booleans.
fn compare(a: &Value, b: &Value) -> std::cmp::Ordering {
    use std::cmp::Ordering;
    let norm = |v: &Value, other: &Value| match v {
        Value::Empty => match other {
            Value::Text(_) => Value::Text(String::new()),
            Value::Bool(_) => Value::Bool(false),
            _ => Value::Number(0.0),
        },
        v => v.clone(),
    };
    let (a, b) = (norm(a, b), norm(b, a));
    let rank = |v: &Value| match v {
        Value::Number(_) | Value::Empty => 0,
        Value::Text(_) => 1,
        Value::Bool(_) => 2,
    };
    match (&a, &b) {
        (Value::Number(x), Value::Number(y)) => x.partial_cmp(y).unwrap_or(Ordering::Equal),
        (Value::Text(x), Value::Text(y)) => x.to_lowercase().cmp(&y.to_lowercase()),
        (Value::Bool(x), Value::Bool(y)) => x.cmp(y),
        _ => rank(&a).cmp(&rank(&b)),
    }
}

fn finite(n: f64) -> Result<f64, FormulaError> {
    if n.is_finite() {
        Ok(n)
    } else {
        Err(FormulaError::Num("result is not a finite number".into()))
    }
}

/// Evaluates a parsed expression. A reference to an empty cell yields
/// [`Value::Empty`]; [`eval_formula`] turns a top-level empty into 0.
pub fn eval_expr(expr: &Expr, resolver: &dyn Resolver) -> Result<Value, FormulaError> {
    match expr {
        Expr::Number(n) => Ok(Value::Number(*n)),
        Expr::Text(s) => Ok(Value::Text(s.clone())),
        Expr::Bool(b) => Ok(Value::Bool(*b)),
        Expr::Ref { sheet, row, col } => resolver.cell(sheet.as_deref(), *row, *col),
        Expr::Range { .. } => Err(FormulaError::Value("a range cannot be used as a single value".into())),
        Expr::Neg(e) => Ok(Value::Number(-to_number(&eval_expr(e, resolver)?)?)),
        Expr::Binary(op, l, r) => {
            let a = eval_expr(l, resolver)?;
            let b = eval_expr(r, resolver)?;
            let ord = || compare(&a, &b);
            use std::cmp::Ordering::*;
            Ok(match op {
                BinOp::Eq => Value::Bool(ord() == Equal),
                BinOp::Ne => Value::Bool(ord() != Equal),
                BinOp::Lt => Value::Bool(ord() == Less),
                BinOp::Le => Value::Bool(ord() != Greater),
                BinOp::Gt => Value::Bool(ord() == Greater),
                BinOp::Ge => Value::Bool(ord() != Less),
                arith => {
                    let (x, y) = (to_number(&a)?, to_number(&b)?);
                    Value::Number(match arith {
                        BinOp::Add => finite(x + y)?,
                        BinOp::Sub => finite(x - y)?,
                        BinOp::Mul => finite(x * y)?,
                        BinOp::Div if y == 0.0 => return Err(FormulaError::DivByZero),
                        BinOp::Div => finite(x / y)?,
                        BinOp::Pow if x == 0.0 && y < 0.0 => return Err(FormulaError::DivByZero),
                        BinOp::Pow => finite(x.powf(y))?,
                        _ => unreachable!("comparisons handled above"),
                    })
                }
            })
        }
        Expr::Call(Func::If, args) => {
            if to_bool(&eval_expr(&args[0], resolver)?)? {
                eval_expr(&args[1], resolver)
            } else if let Some(e) = args.get(2) {
                eval_expr(e, resolver)
            } else {
                Ok(Value::Bool(false))
            }
        }
        Expr::Call(func, args) => {
            let mut nums = Vec::new();
            for a in args {
                collect_numbers(a, resolver, &mut nums)?;
            }
            Ok(Value::Number(match func {
                Func::Sum => finite(nums.iter().sum())?,
                Func::Average if nums.is_empty() => return Err(FormulaError::DivByZero),
                Func::Average => finite(nums.iter().sum::<f64>() / nums.len() as f64)?,
                Func::Min => nums.iter().copied().reduce(f64::min).unwrap_or(0.0),
                Func::Max => nums.iter().copied().reduce(f64::max).unwrap_or(0.0),
                Func::Count => nums.len() as f64,
                Func::If => unreachable!("handled above"),
            }))
        }
    }
}

/// Aggregate arguments: cells in refs and ranges contribute only numbers
/// (text, booleans and empties are skipped); other arguments are coerced.
fn collect_numbers(arg: &Expr, resolver: &dyn Resolver, out: &mut Vec<f64>) -> Result<(), FormulaError> {
    let mut take_cell = |v: Value| {
        if let Value::Number(n) = v {
            out.push(n);
        }
    };
    match arg {
        Expr::Ref { sheet, row, col } => take_cell(resolver.cell(sheet.as_deref(), *row, *col)?),
        Expr::Range { sheet, range } => {
            for (r, c) in range.iter() {
                take_cell(resolver.cell(sheet.as_deref(), r, c)?);
            }
        }
        e => out.push(to_number(&eval_expr(e, resolver)?)?),
    }
    Ok(())
}

/// Parses and evaluates `src`. A result referring to an empty cell is 0.
pub fn eval_formula(src: &str, resolver: &dyn Resolver) -> Result<Value, FormulaError> {
    let expr = parse_formula(src)?;
    match eval_expr(&expr, resolver)? {
        Value::Empty => Ok(Value::Number(0.0)),
        v => Ok(v),
    }
}

/// Stores an evaluation outcome as the cached value of a formula cell.
pub fn apply_result(cell: &mut CellValue, result: &Result<Value, FormulaError>) {
    cell.eval_error = None;
    match result {
        Ok(Value::Number(n)) => {
            cell.raw = format_number(*n);
            cell.numeric = Some(*n);
        }
        Ok(Value::Text(s)) => {
            cell.raw = s.clone();
            cell.numeric = None;
        }
        Ok(Value::Bool(b)) => {
            cell.raw = if *b { "TRUE" } else { "FALSE" }.into();
            cell.numeric = Some(if *b { 1.0 } else { 0.0 });
        }
        Ok(Value::Empty) => {
            cell.raw = "0".into();
            cell.numeric = Some(0.0);
        }
        Err(e) => {
            cell.raw = e.code().into();
            cell.numeric = None;
            cell.eval_error = Some(format!("{}: {e}", e.code()));
        }
    }
}

type CellKey = (usize, u32, u32);

/// Evaluates formula cells of a workbook on demand, following references
/// across sheets and memoizing results. Cached values stored in formula
/// cells are ignored; formulas are always recomputed.
pub struct WorkbookEvaluator<'a> {
    wb: &'a Workbook,
    memo: RefCell<HashMap<CellKey, Result<Value, FormulaError>>>,
    visiting: RefCell<HashSet<CellKey>>,
}

struct Scope<'e, 'a> {
    ev: &'e WorkbookEvaluator<'a>,
    sheet: usize,
}

impl Resolver for Scope<'_, '_> {
    fn cell(&self, sheet: Option<&str>, row: u32, col: u32) -> Result<Value, FormulaError> {
        let idx = match sheet {
            None => self.sheet,
            Some(name) => self
                .ev
                .sheet_index(name)
                .ok_or_else(|| FormulaError::Ref(format!("unknown sheet `{name}`")))?,
        };
        self.ev.value_at(idx, row, col)
    }
}

impl<'a> WorkbookEvaluator<'a> {
    pub fn new(wb: &'a Workbook) -> Self {
        WorkbookEvaluator {
            wb,
            memo: RefCell::new(HashMap::new()),
            visiting: RefCell::new(HashSet::new()),
        }
    }

    fn sheet_index(&self, name: &str) -> Option<usize> {
        self.wb.sheets.iter().position(|s| s.name == name)
    }

    fn label(&self, key: CellKey) -> String {
        let name = &self.wb.sheets[key.0].name;
        let a1 = a1_ref(key.1 as i64, key.2 as i64).unwrap_or_default();
        format!("{name}!{a1}")
    }

    fn value_at(&self, sheet: usize, row: u32, col: u32) -> Result<Value, FormulaError> {
        let key = (sheet, row, col);
        let Some(cell) = self.wb.sheets[sheet].get(row, col) else {
            return Ok(Value::Empty);
        };
        match cell.kind {
            CellKind::Empty => Ok(Value::Empty),
            CellKind::Text => Ok(Value::Text(cell.raw.clone())),
            CellKind::Boolean => Ok(Value::Bool(cell.numeric.unwrap_or(0.0) != 0.0)),
            CellKind::Number | CellKind::Datetime => Ok(cell.numeric.map_or(Value::Empty, Value::Number)),
            CellKind::Formula => {
                if let Some(r) = self.memo.borrow().get(&key) {
                    return r.clone();
                }
                if !self.visiting.borrow_mut().insert(key) {
                    return Err(FormulaError::CycleDetected(self.label(key)));
                }
                let src = cell.formula_text.as_deref().unwrap_or("=");
                let scope = Scope { ev: self, sheet };
                let r = parse_formula(src).and_then(|e| eval_expr(&e, &scope));
                self.visiting.borrow_mut().remove(&key);
                self.memo.borrow_mut().insert(key, r.clone());
                r
            }
        }
    }

    /// Value of a cell, with formulas evaluated. Fails for unknown sheets.
    pub fn cell_value(&self, sheet: &str, row: u32, col: u32) -> Result<Value, FormulaError> {
        let idx = self
            .sheet_index(sheet)
            .ok_or_else(|| FormulaError::Ref(format!("unknown sheet `{sheet}`")))?;
        self.value_at(idx, row, col)
    }

    /// Evaluates a free-standing formula as if entered on `sheet`.
    pub fn eval_on(&self, sheet: &str, src: &str) -> Result<Value, FormulaError> {
        let idx = self
            .sheet_index(sheet)
            .ok_or_else(|| FormulaError::Ref(format!("unknown sheet `{sheet}`")))?;
        eval_formula(src, &Scope { ev: self, sheet: idx })
    }
}

/// Recomputes every formula cell and stores the cached values. Returns the
/// cells whose evaluation failed, as `Sheet!A1` labels.
pub fn evaluate_workbook(wb: &mut Workbook) -> Vec<(String, FormulaError)> {
    let mut updates = Vec::new();
    {
        let ev = WorkbookEvaluator::new(wb);
        for (si, sheet) in wb.sheets.iter().enumerate() {
            for ((r, c), v) in sheet.cells() {
                if v.kind == CellKind::Formula {
                    let res = ev.value_at(si, r, c).map(|v| match v {
                        Value::Empty => Value::Number(0.0),
                        v => v,
                    });
                    updates.push((si, r, c, res));
                }
            }
        }
    }
    let mut errors = Vec::new();
    for (si, r, c, res) in updates {
        let sheet = &mut wb.sheets[si];
        let mut cell = sheet.get(r, c).cloned().expect("formula cell present");
        apply_result(&mut cell, &res);
        sheet.set(r, c, cell).expect("coordinates already valid");
        if let Err(e) = res {
            let label = format!("{}!{}", sheet.name, a1_ref(r as i64, c as i64).unwrap_or_default());
            errors.push((label, e));
        }
    }
    errors
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workbook::Sheet;

    fn grid(values: &[((u32, u32), Value)]) -> impl Fn(Option<&str>, u32, u32) -> Result<Value, FormulaError> + '_ {
        move |_, r, c| Ok(values.iter().find(|(k, _)| *k == (r, c)).map_or(Value::Empty, |(_, v)| v.clone()))
    }

    fn num(src: &str) -> f64 {
        match eval_formula(src, &grid(&[])).unwrap() {
            Value::Number(n) => n,
            v => panic!("{src} gave {v:?}"),
        }
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(num("=1+2*3"), 7.0);
        assert_eq!(num("=(1+2)*3"), 9.0);
        assert_eq!(num("=2^3^2"), 64.0);
        assert_eq!(num("=-2^2"), 4.0);
        assert_eq!(num("=10-4-3"), 3.0);
        assert_eq!(num("=8/4/2"), 1.0);
        assert_eq!(num("=1.5e2"), 150.0);
    }

    #[test]
    fn aggregates_skip_empty() {
        let cells = [((1, 1), Value::Number(2.0)), ((2, 1), Value::Number(4.0))];
        let r = grid(&cells);
        assert_eq!(eval_formula("=AVERAGE(A1:A3)", &r).unwrap(), Value::Number(3.0));
        assert_eq!(eval_formula("=COUNT(A1:A3)", &r).unwrap(), Value::Number(2.0));
        assert_eq!(eval_formula("=SUM(A1:A3)+A3", &r).unwrap(), Value::Number(6.0));
        assert_eq!(eval_formula("=MIN(A1:A3)", &r).unwrap(), Value::Number(2.0));
        assert_eq!(eval_formula("=A3", &r).unwrap(), Value::Number(0.0));
        assert_eq!(eval_formula("=AVERAGE(B1:B2)", &r), Err(FormulaError::DivByZero));
    }

    #[test]
    fn if_and_comparisons() {
        let cells = [((1, 1), Value::Number(-1.0))];
        let r = grid(&cells);
        assert_eq!(eval_formula("=IF(A1>0, \"pos\", \"neg\")", &r).unwrap(), Value::Text("neg".into()));
        assert_eq!(eval_formula("=IF(A1<0, 1)", &r).unwrap(), Value::Number(1.0));
        assert_eq!(eval_formula("=IF(A1>0, 1)", &r).unwrap(), Value::Bool(false));
        assert_eq!(eval_formula("=\"abc\"=\"ABC\"", &r).unwrap(), Value::Bool(true));
        assert_eq!(eval_formula("=A1<>-1", &r).unwrap(), Value::Bool(false));
    }

    #[test]
    fn errors() {
        let r = grid(&[]);
        assert!(matches!(eval_formula("=FOO(1)", &r), Err(FormulaError::UnknownFunction(f)) if f == "FOO"));
        assert!(matches!(eval_formula("=1+", &r), Err(FormulaError::Parse { .. })));
        assert!(matches!(eval_formula("1+1", &r), Err(FormulaError::Parse { .. })));
        assert!(matches!(eval_formula("=(1", &r), Err(FormulaError::Parse { .. })));
        assert!(matches!(eval_formula("=1&2", &r), Err(FormulaError::Parse { .. })));
        assert!(matches!(eval_formula("=IF(1)", &r), Err(FormulaError::Parse { .. })));
        assert_eq!(eval_formula("=1/0", &r), Err(FormulaError::DivByZero));
        assert!(matches!(eval_formula("=\"x\"+1", &r), Err(FormulaError::Value(_))));
        assert!(matches!(eval_formula("=A1:A2", &r), Err(FormulaError::Value(_))));
        assert!(matches!(eval_formula("=10^400", &r), Err(FormulaError::Num(_))));
    }

    #[test]
    fn sheet_qualified_refs() {
        match parse_formula("='P&L'!B2+Data!$A$1:C3").unwrap() {
            Expr::Binary(BinOp::Add, l, r) => {
                assert_eq!(
                    *l,
                    Expr::Ref {
                        sheet: Some("P&L".into()),
                        row: 2,
                        col: 2
                    }
                );
                assert_eq!(
                    *r,
                    Expr::Range {
                        sheet: Some("Data".into()),
                        range: CellRange::new(1, 1, 3, 3)
                    }
                );
            }
            e => panic!("{e:?}"),
        }
    }

    fn workbook() -> Workbook {
        let mut a = Sheet::new("A");
        a.set(1, 1, CellValue::number(2.0)).unwrap();
        a.set(2, 1, CellValue::number(3.0)).unwrap();
        a.set(3, 1, CellValue::formula("=SUM(A1:A2)")).unwrap();
        a.set(1, 2, CellValue::formula("=B2+1")).unwrap();
        a.set(2, 2, CellValue::formula("=B1*2")).unwrap();
        a.set(4, 1, CellValue::formula("=FOO()")).unwrap();
        let mut b = Sheet::new("B");
        b.set(1, 1, CellValue::formula("=A!A3*10")).unwrap();
        Workbook::new("wb", vec![a, b]).unwrap()
    }

    #[test]
    fn workbook_evaluation() {
        let mut wb = workbook();
        let errors = evaluate_workbook(&mut wb);
        let a3 = wb.sheet("A").unwrap().get(3, 1).unwrap();
        assert_eq!(a3.numeric, Some(5.0));
        assert_eq!(a3.raw, "5");
        assert_eq!(wb.sheet("B").unwrap().get(1, 1).unwrap().numeric, Some(50.0));
        let labels: Vec<&str> = errors.iter().map(|(l, _)| l.as_str()).collect();
        assert_eq!(labels, vec!["A!B1", "A!B2", "A!A4"]);
        assert!(matches!(errors[0].1, FormulaError::CycleDetected(_)));
        let a4 = wb.sheet("A").unwrap().get(4, 1).unwrap();
        assert_eq!(a4.formula_text.as_deref(), Some("=FOO()"));
        assert!(a4.eval_error.as_deref().unwrap().starts_with("#NAME?"));
    }
}
