//! Lexer and recursive-descent parser for the restricted loop language.
//!
//! ```text
//! unit   := item*
//! item   := "#define" IDENT const ";"? | decl | annot* for
//! decl   := "const" type IDENT "=" const ";" | type declarator ("," declarator)* ";"
//! type   := int | long | float | double | char
//! for    := "for" "(" [int] IDENT "=" const ";" IDENT cmp const ";" step ")" body
//! body   := "{" stmt* "}" | stmt
//! stmt   := annot* for | lvalue ("=" | "+=" | "-=" | "*=" | "/=") expr ";"
//! annot  := "//@seq" | "//@ops(" INT ")" | "//@bytes(" INT ")"
//! ```

use std::collections::BTreeMap;

use thiserror::Error;

use super::ast::{Annotations, Assign, BinOp, Decl, Expr, ForLoop, SourceUnit, Stmt, VarRef};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {col}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("undeclared variable `{0}`")]
    Undeclared(String),
    #[error("trip count is not a compile-time constant: {0}")]
    NonConstantTripCount(String),
    #[error("loop `{0}` never executes")]
    EmptyLoop(String),
    #[error("`{0}` is declared twice")]
    Redeclared(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    Punct(&'static str),
    Annot(String),
    Hash,
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const PUNCT: [&str; 25] = [
    "<=", ">=", "++", "--", "+=", "-=", "*=", "/=", "==", "(", ")", "{", "}", "[", "]", ";", ",",
    "=", "+", "-", "*", "/", "%", "<", ">",
];

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |line, col, msg: String| ParseError {
        line,
        col,
        kind: ParseErrorKind::Syntax(msg),
    };
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            let start = i + 2;
            let mut end = start;
            while end < chars.len() && chars[end] != '\n' {
                end += 1;
            }
            let body: String = chars[start..end].iter().collect();
            if let Some(annot) = body.strip_prefix('@') {
                out.push(Token {
                    tok: Tok::Annot(annot.trim().to_string()),
                    line: tl,
                    col: tc,
                });
            }
            col += end - i;
            i = end;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'*') {
            i += 2;
            col += 2;
            loop {
                match chars.get(i) {
                    None => return Err(err(tl, tc, "unterminated block comment".into())),
                    Some('*') if chars.get(i + 1) == Some(&'/') => {
                        i += 2;
                        col += 2;
                        break;
                    }
                    Some('\n') => {
                        i += 1;
                        line += 1;
                        col = 1;
                    }
                    Some(_) => {
                        i += 1;
                        col += 1;
                    }
                }
            }
            continue;
        }
        if c == '#' {
            out.push(Token {
                tok: Tok::Hash,
                line: tl,
                col: tc,
            });
            i += 1;
            col += 1;
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += i - start;
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                line: tl,
                col: tc,
            });
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            let mut is_float = false;
            while i < chars.len() {
                let d = chars[i];
                if d.is_ascii_digit() {
                    i += 1;
                } else if d == '.' && !is_float {
                    is_float = true;
                    i += 1;
                } else if (d == 'e' || d == 'E')
                    && chars
                        .get(i + 1)
                        .is_some_and(|n| n.is_ascii_digit() || *n == '-' || *n == '+')
                {
                    is_float = true;
                    i += 2;
                } else {
                    break;
                }
            }
            let lexeme: String = chars[start..i].iter().collect();
            // float suffix
            if i < chars.len() && (chars[i] == 'f' || chars[i] == 'F') {
                is_float = true;
                i += 1;
            }
            col += i - start;
            let tok = if is_float {
                Tok::Float(
                    lexeme
                        .parse()
                        .map_err(|_| err(tl, tc, format!("bad number `{lexeme}`")))?,
                )
            } else {
                Tok::Int(
                    lexeme
                        .parse()
                        .map_err(|_| err(tl, tc, format!("bad integer `{lexeme}`")))?,
                )
            };
            out.push(Token { tok, line: tl, col: tc });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        match PUNCT.iter().find(|p| rest.starts_with(**p)) {
            Some(p) => {
                i += p.len();
                col += p.len();
                out.push(Token {
                    tok: Tok::Punct(p),
                    line: tl,
                    col: tc,
                });
            }
            None => return Err(err(tl, tc, format!("unexpected character `{c}`"))),
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

fn type_size(name: &str) -> Option<u64> {
    match name {
        "char" => Some(1),
        "int" | "float" => Some(4),
        "long" | "double" => Some(8),
        _ => None,
    }
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    consts: BTreeMap<String, i64>,
    vars: BTreeMap<String, Decl>,
    indices: Vec<String>,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    fn fail<T>(&self, kind: ParseErrorKind) -> PResult<T> {
        let (line, col) = self.here();
        Err(ParseError { line, col, kind })
    }

    fn syntax<T>(&self, msg: impl Into<String>) -> PResult<T> {
        self.fail(ParseErrorKind::Syntax(msg.into()))
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, p: &str) -> bool {
        if matches!(self.peek(), Tok::Punct(q) if *q == p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, p: &str) -> PResult<()> {
        if self.eat(p) {
            Ok(())
        } else {
            self.syntax(format!("expected `{p}`, found {}", describe(self.peek())))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(name) => {
                self.bump();
                Ok(name)
            }
            other => self.syntax(format!("expected identifier, found {}", describe(&other))),
        }
    }

    fn keyword(&mut self, kw: &str) -> bool {
        if matches!(self.peek(), Tok::Ident(n) if n == kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn unit(mut self) -> PResult<SourceUnit> {
        let mut loops = Vec::new();
        let mut decls: Vec<String> = Vec::new();
        loop {
            match self.peek().clone() {
                Tok::Eof => break,
                Tok::Hash => self.define()?,
                Tok::Annot(_) => loops.push(self.annotated_loop()?),
                Tok::Ident(word) if word == "for" => loops.push(self.annotated_loop()?),
                Tok::Ident(word) if word == "const" => self.const_decl()?,
                Tok::Ident(word) if type_size(&word).is_some() => decls.extend(self.var_decl()?),
                other => {
                    return self.syntax(format!(
                        "expected a declaration or a loop at top level, found {}",
                        describe(&other)
                    ))
                }
            }
        }
        let decls = decls
            .into_iter()
            .map(|n| self.vars.remove(&n).expect("declared"))
            .collect();
        Ok(SourceUnit { decls, loops })
    }

    fn define(&mut self) -> PResult<()> {
        self.bump();
        if !self.keyword("define") {
            return self.syntax("only `#define NAME value` directives are supported");
        }
        let name = self.ident()?;
        let value = self.const_expr()?;
        self.eat(";");
        self.declare_const(name, value)
    }

    fn declare_const(&mut self, name: String, value: i64) -> PResult<()> {
        if self.consts.contains_key(&name) || self.vars.contains_key(&name) {
            return self.fail(ParseErrorKind::Redeclared(name));
        }
        self.consts.insert(name, value);
        Ok(())
    }

    fn const_decl(&mut self) -> PResult<()> {
        self.bump();
        let ty = self.ident()?;
        if !matches!(ty.as_str(), "int" | "long" | "char") {
            return self.syntax("constants must have an integer type");
        }
        let name = self.ident()?;
        self.expect("=")?;
        let value = self.const_expr()?;
        self.expect(";")?;
        self.declare_const(name, value)
    }

    fn var_decl(&mut self) -> PResult<Vec<String>> {
        let ty = self.ident()?;
        let elem_size = type_size(&ty).expect("checked by caller");
        let mut names = Vec::new();
        loop {
            let name = self.ident()?;
            let mut dims = Vec::new();
            while self.eat("[") {
                let d = self.const_expr()?;
                if d <= 0 {
                    return self.syntax(format!("array dimension of `{name}` must be positive"));
                }
                dims.push(d as u64);
                self.expect("]")?;
            }
            if self.consts.contains_key(&name) || self.vars.contains_key(&name) {
                return self.fail(ParseErrorKind::Redeclared(name));
            }
            self.vars.insert(
                name.clone(),
                Decl {
                    name: name.clone(),
                    elem_size,
                    dims,
                },
            );
            names.push(name);
            if !self.eat(",") {
                break;
            }
        }
        self.expect(";")?;
        Ok(names)
    }

    fn annotations(&mut self) -> PResult<Annotations> {
        let mut ann = Annotations::default();
        while let Tok::Annot(text) = self.peek().clone() {
            let parsed = if text == "seq" {
                ann.seq = true;
                Some(())
            } else if let Some(k) = annotation_arg(&text, "ops") {
                ann.ops = Some(k);
                Some(())
            } else if let Some(k) = annotation_arg(&text, "bytes") {
                ann.bytes = Some(k);
                Some(())
            } else {
                None
            };
            if parsed.is_none() {
                return self.syntax(format!("unknown annotation `@{text}`"));
            }
            self.bump();
        }
        Ok(ann)
    }

    fn annotated_loop(&mut self) -> PResult<ForLoop> {
        let annotations = self.annotations()?;
        if !matches!(self.peek(), Tok::Ident(w) if w == "for") {
            return self.syntax("annotation must be followed by a `for` loop");
        }
        self.for_loop(annotations)
    }

    fn for_loop(&mut self, annotations: Annotations) -> PResult<ForLoop> {
        let (line, _) = self.here();
        self.bump();
        self.expect("(")?;
        self.keyword("int");
        let index = self.ident()?;
        if self.indices.contains(&index) {
            return self.syntax(format!("loop index `{index}` is already used by an enclosing loop"));
        }
        if self.consts.contains_key(&index) {
            return self.syntax(format!("`{index}` is a constant and cannot be a loop index"));
        }
        self.expect("=")?;
        let start = self.bound()?;
        self.expect(";")?;
        let cond_var = self.ident()?;
        if cond_var != index {
            return self.syntax(format!("loop condition must test `{index}`"));
        }
        let cmp = match self.bump() {
            Tok::Punct(p @ ("<" | "<=" | ">" | ">=")) => p,
            other => return self.syntax(format!("expected comparison, found {}", describe(&other))),
        };
        let bound = self.bound()?;
        self.expect(";")?;
        let step = self.step(&index)?;
        self.expect(")")?;

        let ascending = matches!(cmp, "<" | "<=");
        if ascending != (step > 0) {
            return self.syntax("loop step moves away from its bound");
        }
        let span = match cmp {
            "<" => bound - start,
            "<=" => bound - start + 1,
            ">" => start - bound,
            _ => start - bound + 1,
        };
        let stride = step.abs();
        if span <= 0 {
            return self.fail(ParseErrorKind::EmptyLoop(index));
        }
        let trip_count = ((span + stride - 1) / stride) as u64;

        self.indices.push(index.clone());
        let body = self.body();
        self.indices.pop();
        Ok(ForLoop {
            index,
            start,
            step,
            trip_count,
            annotations,
            body: body?,
            line,
        })
    }

    fn bound(&mut self) -> PResult<i64> {
        let (line, col) = self.here();
        let e = self.expr()?;
        eval_const(&e).ok_or(ParseError {
            line,
            col,
            kind: ParseErrorKind::NonConstantTripCount(e.to_string()),
        })
    }

    fn step(&mut self, index: &str) -> PResult<i64> {
        if self.eat("++") {
            self.expect_index(index)?;
            return Ok(1);
        }
        if self.eat("--") {
            self.expect_index(index)?;
            return Ok(-1);
        }
        self.expect_index(index)?;
        let step = match self.bump() {
            Tok::Punct("++") => 1,
            Tok::Punct("--") => -1,
            Tok::Punct("+=") => self.bound()?,
            Tok::Punct("-=") => -self.bound()?,
            Tok::Punct("=") => {
                self.expect_index(index)?;
                let sign = match self.bump() {
                    Tok::Punct("+") => 1,
                    Tok::Punct("-") => -1,
                    other => return self.syntax(format!("unsupported step {}", describe(&other))),
                };
                sign * self.bound()?
            }
            other => return self.syntax(format!("unsupported step {}", describe(&other))),
        };
        if step == 0 {
            return self.syntax("loop step must be non-zero");
        }
        Ok(step)
    }

    fn expect_index(&mut self, index: &str) -> PResult<()> {
        let name = self.ident()?;
        if name != index {
            return self.syntax(format!("loop step must update `{index}`"));
        }
        Ok(())
    }

    fn body(&mut self) -> PResult<Vec<Stmt>> {
        if !self.eat("{") {
            return Ok(vec![self.stmt()?]);
        }
        let mut stmts = Vec::new();
        while !self.eat("}") {
            if *self.peek() == Tok::Eof {
                return self.syntax("unterminated loop body");
            }
            stmts.push(self.stmt()?);
        }
        Ok(stmts)
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        match self.peek() {
            Tok::Annot(_) => return Ok(Stmt::Loop(self.annotated_loop()?)),
            Tok::Ident(w) if w == "for" => return Ok(Stmt::Loop(self.for_loop(Annotations::default())?)),
            Tok::Ident(w) if type_size(w).is_some() || w == "const" => {
                return self.syntax("declarations are only allowed at top level")
            }
            _ => {}
        }
        let (line, col) = self.here();
        let name = self.ident()?;
        if self.indices.contains(&name) {
            return self.syntax(format!("loop index `{name}` cannot be assigned"));
        }
        if self.consts.contains_key(&name) {
            return self.syntax(format!("constant `{name}` cannot be assigned"));
        }
        let target = self.var_ref(name, line, col)?;
        let compound = match self.bump() {
            Tok::Punct("=") => None,
            Tok::Punct("+=") => Some(BinOp::Add),
            Tok::Punct("-=") => Some(BinOp::Sub),
            Tok::Punct("*=") => Some(BinOp::Mul),
            Tok::Punct("/=") => Some(BinOp::Div),
            other => return self.syntax(format!("expected assignment, found {}", describe(&other))),
        };
        let value = self.expr()?;
        self.expect(";")?;
        Ok(Stmt::Assign(Assign {
            target,
            compound,
            value,
        }))
    }

    fn var_ref(&mut self, name: String, line: usize, col: usize) -> PResult<VarRef> {
        let Some(decl) = self.vars.get(&name) else {
            return Err(ParseError {
                line,
                col,
                kind: ParseErrorKind::Undeclared(name),
            });
        };
        let rank = decl.dims.len();
        let mut indices = Vec::new();
        while self.eat("[") {
            indices.push(self.expr()?);
            self.expect("]")?;
        }
        if indices.len() != rank {
            return Err(ParseError {
                line,
                col,
                kind: ParseErrorKind::Syntax(format!(
                    "`{name}` has {rank} dimension(s) but is indexed with {}",
                    indices.len()
                )),
            });
        }
        Ok(VarRef { name, indices })
    }

    fn const_expr(&mut self) -> PResult<i64> {
        let (line, col) = self.here();
        let e = self.expr()?;
        eval_const(&e).ok_or(ParseError {
            line,
            col,
            kind: ParseErrorKind::Syntax(format!("`{e}` is not an integer constant")),
        })
    }

    fn expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Punct("+") => BinOp::Add,
                Tok::Punct("-") => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Punct("*") => BinOp::Mul,
                Tok::Punct("/") => BinOp::Div,
                Tok::Punct("%") => BinOp::Rem,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.eat("-") {
            return Ok(match self.unary()? {
                Expr::Int(v) => Expr::Int(-v),
                Expr::Float(v) => Expr::Float(-v),
                e => Expr::Neg(Box::new(e)),
            });
        }
        if self.eat("+") {
            return self.unary();
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<Expr> {
        let (line, col) = self.here();
        match self.bump() {
            Tok::Int(v) => Ok(Expr::Int(v)),
            Tok::Float(v) => Ok(Expr::Float(v)),
            Tok::Punct("(") => {
                let e = self.expr()?;
                self.expect(")")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if self.indices.contains(&name) {
                    return Ok(Expr::Index(name));
                }
                if let Some(v) = self.consts.get(&name) {
                    return Ok(Expr::Const(name, *v));
                }
                if !self.vars.contains_key(&name) && matches!(self.peek(), Tok::Punct("(")) {
                    self.bump();
                    let mut args = Vec::new();
                    if !self.eat(")") {
                        loop {
                            args.push(self.expr()?);
                            if self.eat(")") {
                                break;
                            }
                            self.expect(",")?;
                        }
                    }
                    return Ok(Expr::Call(name, args));
                }
                Ok(Expr::Var(self.var_ref(name, line, col)?))
            }
            other => Err(ParseError {
                line,
                col,
                kind: ParseErrorKind::Syntax(format!("expected expression, found {}", describe(&other))),
            }),
        }
    }
}

fn annotation_arg(text: &str, name: &str) -> Option<u64> {
    text.strip_prefix(name)?
        .trim()
        .strip_prefix('(')?
        .strip_suffix(')')?
        .trim()
        .parse()
        .ok()
}

fn eval_const(e: &Expr) -> Option<i64> {
    match e {
        Expr::Int(v) | Expr::Const(_, v) => Some(*v),
        Expr::Neg(inner) => eval_const(inner).map(|v| -v),
        Expr::Binary(op, l, r) => {
            let (l, r) = (eval_const(l)?, eval_const(r)?);
            match op {
                BinOp::Add => l.checked_add(r),
                BinOp::Sub => l.checked_sub(r),
                BinOp::Mul => l.checked_mul(r),
                BinOp::Div => l.checked_div(r),
                BinOp::Rem => l.checked_rem(r),
            }
        }
        _ => None,
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(n) => format!("`{n}`"),
        Tok::Int(v) => format!("`{v}`"),
        Tok::Float(v) => format!("`{v}`"),
        Tok::Punct(p) => format!("`{p}`"),
        Tok::Annot(a) => format!("annotation `@{a}`"),
        Tok::Hash => "`#`".into(),
        Tok::Eof => "end of input".into(),
    }
}

pub fn parse_unit(text: &str) -> Result<SourceUnit, ParseError> {
    let parser = Parser {
        toks: lex(text)?,
        pos: 0,
        consts: BTreeMap::new(),
        vars: BTreeMap::new(),
        indices: Vec::new(),
    };
    parser.unit()
}
