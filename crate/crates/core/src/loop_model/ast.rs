//! Syntax tree for the restricted loop language.
//!
//! Identifiers are resolved while parsing, so every expression node already
//! knows whether it names a loop index, a compile-time constant or a declared
//! variable.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct SourceUnit {
    pub decls: Vec<Decl>,
    pub loops: Vec<ForLoop>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decl {
    pub name: String,
    pub elem_size: u64,
    pub dims: Vec<u64>,
}

impl Decl {
    pub fn size_bytes(&self) -> u64 {
        self.dims.iter().product::<u64>() * self.elem_size
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Annotations {
    pub seq: bool,
    pub ops: Option<u64>,
    pub bytes: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForLoop {
    pub index: String,
    pub start: i64,
    pub step: i64,
    pub trip_count: u64,
    pub annotations: Annotations,
    pub body: Vec<Stmt>,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Assign(Assign),
    Loop(ForLoop),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assign {
    pub target: VarRef,
    /// `Some(op)` for compound assignments such as `+=`.
    pub compound: Option<BinOp>,
    pub value: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarRef {
    pub name: String,
    pub indices: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Int(i64),
    Float(f64),
    Const(String, i64),
    Index(String),
    Var(VarRef),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(String, Vec<Expr>),
}

impl fmt::Display for VarRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        for idx in &self.indices {
            write!(f, "[{idx}]")?;
        }
        Ok(())
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Int(v) => write!(f, "{v}"),
            Expr::Float(v) => write!(f, "{v:?}"),
            Expr::Const(name, _) | Expr::Index(name) => f.write_str(name),
            Expr::Var(r) => write!(f, "{r}"),
            Expr::Neg(e) => write!(f, "-({e})"),
            Expr::Binary(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
            Expr::Call(name, args) => {
                write!(f, "{name}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

impl Expr {
    /// Visits every variable reference, including ones nested in index
    /// expressions.
    pub fn for_each_ref<'a>(&'a self, visit: &mut impl FnMut(&'a VarRef)) {
        match self {
            Expr::Var(r) => {
                visit(r);
                for idx in &r.indices {
                    idx.for_each_ref(visit);
                }
            }
            Expr::Neg(e) => e.for_each_ref(visit),
            Expr::Binary(_, l, r) => {
                l.for_each_ref(visit);
                r.for_each_ref(visit);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.for_each_ref(visit)),
            Expr::Int(_) | Expr::Float(_) | Expr::Const(..) | Expr::Index(_) => {}
        }
    }

    /// Arithmetic operations performed when evaluating the value. Index
    /// arithmetic is address computation and is not counted.
    pub fn op_count(&self) -> u64 {
        match self {
            Expr::Neg(e) => 1 + e.op_count(),
            Expr::Binary(_, l, r) => 1 + l.op_count() + r.op_count(),
            Expr::Call(_, args) => 1 + args.iter().map(Expr::op_count).sum::<u64>(),
            _ => 0,
        }
    }

    /// Affine form over loop indices: `(coefficients, constant)`. `None` when
    /// the expression reads memory, calls a function or is non-linear.
    pub fn affine(&self) -> Option<(Vec<(String, i64)>, i64)> {
        fn add_term(terms: &mut Vec<(String, i64)>, name: &str, coeff: i64) {
            if let Some(t) = terms.iter_mut().find(|(n, _)| n == name) {
                t.1 += coeff;
            } else {
                terms.push((name.to_string(), coeff));
            }
        }
        fn scale(terms: &mut [(String, i64)], k: i64) {
            terms.iter_mut().for_each(|t| t.1 *= k);
        }
        match self {
            Expr::Int(v) | Expr::Const(_, v) => Some((Vec::new(), *v)),
            Expr::Index(name) => Some((vec![(name.clone(), 1)], 0)),
            Expr::Neg(e) => {
                let (mut t, c) = e.affine()?;
                scale(&mut t, -1);
                Some((t, -c))
            }
            Expr::Binary(op, l, r) => {
                let (lt, lc) = l.affine()?;
                let (rt, rc) = r.affine()?;
                match op {
                    BinOp::Add | BinOp::Sub => {
                        let sign = if *op == BinOp::Add { 1 } else { -1 };
                        let mut terms = lt;
                        for (n, k) in rt {
                            add_term(&mut terms, &n, sign * k);
                        }
                        Some((terms, lc + sign * rc))
                    }
                    BinOp::Mul if lt.is_empty() => {
                        let mut terms = rt;
                        scale(&mut terms, lc);
                        Some((terms, lc * rc))
                    }
                    BinOp::Mul if rt.is_empty() => {
                        let mut terms = lt;
                        scale(&mut terms, rc);
                        Some((terms, lc * rc))
                    }
                    _ => None,
                }
            }
            Expr::Float(_) | Expr::Var(_) | Expr::Call(..) => None,
        }
    }

    /// `Some(c)` when the expression is exactly `index + c` and mentions no
    /// other loop index.
    pub fn unit_offset_of(&self, index: &str) -> Option<i64> {
        let (terms, c) = self.affine()?;
        let mut coeff = 0;
        for (name, k) in terms {
            if k == 0 {
                continue;
            }
            if name == index {
                coeff = k;
            } else {
                return None;
            }
        }
        (coeff == 1).then_some(c)
    }
}

impl ForLoop {
    /// Nested loops in body order.
    pub fn child_loops(&self) -> impl Iterator<Item = &ForLoop> {
        self.body.iter().filter_map(|s| match s {
            Stmt::Loop(l) => Some(l),
            Stmt::Assign(_) => None,
        })
    }

    pub fn direct_assigns(&self) -> impl Iterator<Item = &Assign> {
        self.body.iter().filter_map(|s| match s {
            Stmt::Assign(a) => Some(a),
            Stmt::Loop(_) => None,
        })
    }

    /// Every assignment in the body, nested loops included.
    pub fn all_assigns(&self) -> Vec<&Assign> {
        let mut out = Vec::new();
        fn walk<'a>(l: &'a ForLoop, out: &mut Vec<&'a Assign>) {
            for s in &l.body {
                match s {
                    Stmt::Assign(a) => out.push(a),
                    Stmt::Loop(inner) => walk(inner, out),
                }
            }
        }
        walk(self, &mut out);
        out
    }
}

impl Assign {
    /// References read by this statement: the right-hand side, the target for
    /// compound assignments, and anything used inside the target's indices.
    pub fn read_refs(&self) -> Vec<&VarRef> {
        let mut out = Vec::new();
        self.value.for_each_ref(&mut |r| out.push(r));
        for idx in &self.target.indices {
            idx.for_each_ref(&mut |r| out.push(r));
        }
        if self.compound.is_some() {
            out.push(&self.target);
        }
        out
    }

    pub fn op_count(&self) -> u64 {
        self.value.op_count() + u64::from(self.compound.is_some())
    }
}
