//! Factorable expressions as a DAG with structural sharing.
//!
//! Every distinct subexpression is stored exactly once (hash-consing), so a
//! repeated factor such as the `0.5` in `0.5*z*(1 - 0.5*z)` occupies a single
//! node and gets a single set of range bounds. The schedule orders nodes
//! children-first; all evaluators and the tightening pass walk it.

use std::collections::HashMap;
use std::fmt;

use crate::interval::{
    self, DomainViolation, Interval, IntervalBox,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpKind {
    Var(usize),
    Const(f64),
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    /// Integer power with exponent >= 2 or <= -1; `^0`/`^1` are normalized
    /// away and `^2` becomes `Sqr` during construction.
    Pow(i32),
    Exp,
    Log,
    Sqrt,
    Sqr,
    Xlog,
    Sin,
    Cos,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Var(_) => "var",
            OpKind::Const(_) => "const",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::Neg => "neg",
            OpKind::Pow(_) => "pow",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Sqrt => "sqrt",
            OpKind::Sqr => "sqr",
            OpKind::Xlog => "xlog",
            OpKind::Sin => "sin",
            OpKind::Cos => "cos",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub op: OpKind,
    pub args: Vec<NodeId>,
}

/// Immutable expression DAG. `schedule` lists every node, children before
/// parents, variables first, roots last.
#[derive(Clone, Debug, PartialEq)]
pub struct Dag {
    pub nodes: Vec<Node>,
    pub schedule: Vec<NodeId>,
    pub var_names: Vec<String>,
    position: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "parse error at {}:{}: {}", self.line, self.col, self.msg)
    }
}

impl std::error::Error for ParseError {}

/// Evaluation failure, attributed to the offending factor.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalError {
    pub node: NodeId,
    pub op: &'static str,
    pub reason: String,
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "domain error at factor #{} ({}): {}",
            self.node.0, self.op, self.reason
        )
    }
}

impl std::error::Error for EvalError {}

fn domain_err(node: NodeId, op: &'static str, v: DomainViolation) -> EvalError {
    EvalError {
        node,
        op,
        reason: v.to_string(),
    }
}

#[derive(PartialEq, Eq, Hash)]
enum MemoKey {
    Var(usize),
    Const(u64),
    Op(u8, i32, Vec<NodeId>),
}

fn op_tag(op: &OpKind) -> (u8, i32) {
    match op {
        OpKind::Var(_) | OpKind::Const(_) => unreachable!("leaf ops are keyed separately"),
        OpKind::Add => (0, 0),
        OpKind::Sub => (1, 0),
        OpKind::Mul => (2, 0),
        OpKind::Div => (3, 0),
        OpKind::Neg => (4, 0),
        OpKind::Pow(k) => (5, *k),
        OpKind::Exp => (6, 0),
        OpKind::Log => (7, 0),
        OpKind::Sqrt => (8, 0),
        OpKind::Sqr => (9, 0),
        OpKind::Xlog => (10, 0),
        OpKind::Sin => (11, 0),
        OpKind::Cos => (12, 0),
    }
}

/// Builds a `Dag`, interning structurally identical subexpressions. Multiple
/// expressions (objective plus constraints) can be parsed into one builder so
/// they share factors.
pub struct DagBuilder {
    nodes: Vec<Node>,
    memo: HashMap<MemoKey, NodeId>,
    var_names: Vec<String>,
}

impl DagBuilder {
    pub fn new<S: AsRef<str>>(var_names: &[S]) -> DagBuilder {
        let mut b = DagBuilder {
            nodes: Vec::new(),
            memo: HashMap::new(),
            var_names: var_names.iter().map(|s| s.as_ref().to_string()).collect(),
        };
        for i in 0..b.var_names.len() {
            b.intern(OpKind::Var(i), vec![]);
        }
        b
    }

    fn intern(&mut self, op: OpKind, args: Vec<NodeId>) -> NodeId {
        let key = match op {
            OpKind::Var(i) => MemoKey::Var(i),
            OpKind::Const(c) => MemoKey::Const(c.to_bits()),
            _ => {
                let (tag, k) = op_tag(&op);
                MemoKey::Op(tag, k, args.clone())
            }
        };
        if let Some(&id) = self.memo.get(&key) {
            return id;
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, args });
        self.memo.insert(key, id);
        id
    }

    pub fn var(&mut self, i: usize) -> NodeId {
        assert!(i < self.var_names.len(), "variable index out of range");
        self.intern(OpKind::Var(i), vec![])
    }

    pub fn constant(&mut self, c: f64) -> NodeId {
        assert!(!c.is_nan(), "NaN constant");
        self.intern(OpKind::Const(c), vec![])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.intern(OpKind::Add, vec![a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.intern(OpKind::Sub, vec![a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.intern(OpKind::Mul, vec![a, b])
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.intern(OpKind::Div, vec![a, b])
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.intern(OpKind::Neg, vec![a])
    }

    /// Normalizes: `^0` -> 1, `^1` -> identity, `^2` -> `Sqr`.
    pub fn pow(&mut self, a: NodeId, k: i32) -> NodeId {
        match k {
            0 => self.constant(1.0),
            1 => a,
            2 => self.unary(OpKind::Sqr, a),
            _ => self.intern(OpKind::Pow(k), vec![a]),
        }
    }

    pub fn unary(&mut self, op: OpKind, a: NodeId) -> NodeId {
        debug_assert!(matches!(
            op,
            OpKind::Neg
                | OpKind::Exp
                | OpKind::Log
                | OpKind::Sqrt
                | OpKind::Sqr
                | OpKind::Xlog
                | OpKind::Sin
                | OpKind::Cos
        ));
        self.intern(op, vec![a])
    }

    /// Parses an infix expression over the builder's variables and interns
    /// it, sharing any factors already present.
    pub fn parse(&mut self, src: &str) -> Result<NodeId, ParseError> {
        let tokens = lex(src)?;
        let mut p = Parser {
            builder: self,
            tokens,
            pos: 0,
        };
        let root = p.expr()?;
        p.expect_end()?;
        Ok(root)
    }

    pub fn finish(self) -> Dag {
        let n = self.nodes.len();
        let mut level = vec![0usize; n];
        for (i, node) in self.nodes.iter().enumerate() {
            level[i] = node
                .args
                .iter()
                .map(|a| level[a.0] + 1)
                .max()
                .unwrap_or(0);
        }
        let mut schedule: Vec<NodeId> = (0..n).map(NodeId).collect();
        schedule.sort_by_key(|id| (level[id.0], id.0));
        let mut position = vec![0usize; n];
        for (pos, id) in schedule.iter().enumerate() {
            position[id.0] = pos;
        }
        Dag {
            nodes: self.nodes,
            schedule,
            var_names: self.var_names,
            position,
        }
    }
}

impl Dag {
    pub fn nvars(&self) -> usize {
        self.var_names.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    /// Position of `id` in the schedule.
    pub fn schedule_pos(&self, id: NodeId) -> usize {
        self.position[id.0]
    }

    /// Values of every node at `point`, indexed by node id.
    pub fn eval_real(&self, point: &[f64]) -> Result<Vec<f64>, EvalError> {
        assert_eq!(point.len(), self.nvars(), "point dimension mismatch");
        let mut val = vec![f64::NAN; self.nodes.len()];
        for &id in &self.schedule {
            let node = &self.nodes[id.0];
            let a = node.args.first().map(|c| val[c.0]);
            let b = node.args.get(1).map(|c| val[c.0]);
            val[id.0] = eval_op(id, &node.op, a, b, point)?;
        }
        Ok(val)
    }

    /// Natural interval extension of every node over `domain`.
    pub fn eval_interval(&self, domain: &IntervalBox) -> Result<Vec<Interval>, EvalError> {
        assert_eq!(domain.ndim(), self.nvars(), "domain dimension mismatch");
        let mut val = vec![Interval::point(0.0); self.nodes.len()];
        for &id in &self.schedule {
            let node = &self.nodes[id.0];
            let a = node.args.first().map(|c| val[c.0]);
            let b = node.args.get(1).map(|c| val[c.0]);
            val[id.0] = interval_op(id, &node.op, a, b, domain)?;
        }
        Ok(val)
    }

    /// Rebuilds the subexpression rooted at `root` in `out`, returning the
    /// copied root. Both DAGs must use the same variable numbering.
    pub fn copy_into(&self, root: NodeId, out: &mut DagBuilder) -> NodeId {
        let mut map: HashMap<NodeId, NodeId> = HashMap::new();
        self.copy_rec(root, out, &mut map)
    }

    fn copy_rec(
        &self,
        id: NodeId,
        out: &mut DagBuilder,
        map: &mut HashMap<NodeId, NodeId>,
    ) -> NodeId {
        if let Some(&m) = map.get(&id) {
            return m;
        }
        let node = self.nodes[id.0].clone();
        let args: Vec<NodeId> = node.args.iter().map(|&a| self.copy_rec(a, out, map)).collect();
        let copied = match node.op {
            OpKind::Var(i) => out.var(i),
            OpKind::Const(c) => out.constant(c),
            OpKind::Add => out.add(args[0], args[1]),
            OpKind::Sub => out.sub(args[0], args[1]),
            OpKind::Mul => out.mul(args[0], args[1]),
            OpKind::Div => out.div(args[0], args[1]),
            OpKind::Pow(k) => out.pow(args[0], k),
            op => out.unary(op, args[0]),
        };
        map.insert(id, copied);
        copied
    }

    /// Symbolic derivative of the subexpression at `root` with respect to the
    /// single variable. Only defined for univariate DAGs.
    pub fn derivative(&self, root: NodeId) -> (Dag, NodeId) {
        assert_eq!(self.nvars(), 1, "derivative requires a univariate DAG");
        let mut out = DagBuilder::new(&self.var_names);
        let mut copies: HashMap<NodeId, NodeId> = HashMap::new();
        let mut derivs: HashMap<NodeId, NodeId> = HashMap::new();
        let d_root = self.deriv_rec(root, &mut out, &mut copies, &mut derivs);
        (out.finish(), d_root)
    }

    fn deriv_rec(
        &self,
        id: NodeId,
        out: &mut DagBuilder,
        copies: &mut HashMap<NodeId, NodeId>,
        derivs: &mut HashMap<NodeId, NodeId>,
    ) -> NodeId {
        if let Some(&d) = derivs.get(&id) {
            return d;
        }
        let node = self.nodes[id.0].clone();
        let d = match node.op {
            OpKind::Var(_) => out.constant(1.0),
            OpKind::Const(_) => out.constant(0.0),
            OpKind::Add => {
                let da = self.deriv_rec(node.args[0], out, copies, derivs);
                let db = self.deriv_rec(node.args[1], out, copies, derivs);
                out.add(da, db)
            }
            OpKind::Sub => {
                let da = self.deriv_rec(node.args[0], out, copies, derivs);
                let db = self.deriv_rec(node.args[1], out, copies, derivs);
                out.sub(da, db)
            }
            OpKind::Mul => {
                let da = self.deriv_rec(node.args[0], out, copies, derivs);
                let db = self.deriv_rec(node.args[1], out, copies, derivs);
                let a = self.copy_rec(node.args[0], out, copies);
                let b = self.copy_rec(node.args[1], out, copies);
                let t1 = out.mul(da, b);
                let t2 = out.mul(a, db);
                out.add(t1, t2)
            }
            OpKind::Div => {
                let da = self.deriv_rec(node.args[0], out, copies, derivs);
                let db = self.deriv_rec(node.args[1], out, copies, derivs);
                let a = self.copy_rec(node.args[0], out, copies);
                let b = self.copy_rec(node.args[1], out, copies);
                let num1 = out.mul(da, b);
                let num2 = out.mul(a, db);
                let num = out.sub(num1, num2);
                let den = out.unary(OpKind::Sqr, b);
                out.div(num, den)
            }
            OpKind::Neg => {
                let da = self.deriv_rec(node.args[0], out, copies, derivs);
                out.neg(da)
            }
            OpKind::Pow(k) => {
                let da = self.deriv_rec(node.args[0], out, copies, derivs);
                let a = self.copy_rec(node.args[0], out, copies);
                let kc = out.constant(k as f64);
                let p = out.pow(a, k - 1);
                let t = out.mul(kc, p);
                out.mul(t, da)
            }
            OpKind::Exp => {
                let da = self.deriv_rec(node.args[0], out, copies, derivs);
                let e = self.copy_rec(id, out, copies);
                out.mul(e, da)
            }
            OpKind::Log => {
                let da = self.deriv_rec(node.args[0], out, copies, derivs);
                let a = self.copy_rec(node.args[0], out, copies);
                out.div(da, a)
            }
            OpKind::Sqrt => {
                let da = self.deriv_rec(node.args[0], out, copies, derivs);
                let s = self.copy_rec(id, out, copies);
                let two = out.constant(2.0);
                let den = out.mul(two, s);
                out.div(da, den)
            }
            OpKind::Sqr => {
                let da = self.deriv_rec(node.args[0], out, copies, derivs);
                let a = self.copy_rec(node.args[0], out, copies);
                let two = out.constant(2.0);
                let t = out.mul(two, a);
                out.mul(t, da)
            }
            OpKind::Xlog => {
                let da = self.deriv_rec(node.args[0], out, copies, derivs);
                let a = self.copy_rec(node.args[0], out, copies);
                let l = out.unary(OpKind::Log, a);
                let one = out.constant(1.0);
                let t = out.add(l, one);
                out.mul(t, da)
            }
            OpKind::Sin => {
                let da = self.deriv_rec(node.args[0], out, copies, derivs);
                let a = self.copy_rec(node.args[0], out, copies);
                let c = out.unary(OpKind::Cos, a);
                out.mul(c, da)
            }
            OpKind::Cos => {
                let da = self.deriv_rec(node.args[0], out, copies, derivs);
                let a = self.copy_rec(node.args[0], out, copies);
                let s = out.unary(OpKind::Sin, a);
                let ns = out.neg(s);
                out.mul(ns, da)
            }
        };
        derivs.insert(id, d);
        d
    }

    /// Second-order Taylor-form enclosure of the factor at `root` over `x`,
    /// expanded at the midpoint. Returns the raw Taylor interval; callers
    /// that feed it into bound storage intersect with the natural extension.
    pub fn taylor2_extension(&self, root: NodeId, x: Interval) -> Result<Interval, EvalError> {
        assert_eq!(self.nvars(), 1, "taylor form requires a univariate DAG");
        let c = x.mid();
        let h_c = self.eval_real(&[c])?[root.0];
        let (d1, d1_root) = self.derivative(root);
        let dh_c = d1.eval_real(&[c])?[d1_root.0];
        let (d2, d2_root) = d1.derivative(d1_root);
        let domain = IntervalBox::new(vec![x]);
        let d2h = d2.eval_interval(&domain)?[d2_root.0];
        Ok(interval::taylor2(h_c, dh_c, d2h, x, c))
    }

    /// Infix rendering of the subexpression at `root`.
    pub fn render(&self, root: NodeId) -> String {
        self.render_prec(root, 0)
    }

    // prec: 0 additive context, 1 multiplicative, 2 unary/power operand.
    fn render_prec(&self, id: NodeId, prec: u8) -> String {
        let node = &self.nodes[id.0];
        let (s, my_prec) = match node.op {
            OpKind::Var(i) => (self.var_names[i].clone(), 3),
            OpKind::Const(c) => {
                let s = format!("{c}");
                (s, if c < 0.0 { 2 } else { 3 })
            }
            OpKind::Add => (
                format!(
                    "{} + {}",
                    self.render_prec(node.args[0], 0),
                    self.render_prec(node.args[1], 1)
                ),
                0,
            ),
            OpKind::Sub => (
                format!(
                    "{} - {}",
                    self.render_prec(node.args[0], 0),
                    self.render_prec(node.args[1], 1)
                ),
                0,
            ),
            OpKind::Mul => (
                format!(
                    "{}*{}",
                    self.render_prec(node.args[0], 1),
                    self.render_prec(node.args[1], 2)
                ),
                1,
            ),
            OpKind::Div => (
                format!(
                    "{}/{}",
                    self.render_prec(node.args[0], 1),
                    self.render_prec(node.args[1], 2)
                ),
                1,
            ),
            OpKind::Neg => (format!("-{}", self.render_prec(node.args[0], 2)), 1),
            OpKind::Pow(k) => {
                // The grammar does not chain '^', so any non-atomic base
                // needs parentheses; prec 3 forces them.
                let base = self.render_prec(node.args[0], 3);
                if k < 0 {
                    (format!("{base}^({k})"), 2)
                } else {
                    (format!("{base}^{k}"), 2)
                }
            }
            op => (
                format!("{}({})", op.name(), self.render_prec(node.args[0], 0)),
                3,
            ),
        };
        if my_prec < prec {
            format!("({s})")
        } else {
            s
        }
    }
}

fn eval_op(
    id: NodeId,
    op: &OpKind,
    a: Option<f64>,
    b: Option<f64>,
    point: &[f64],
) -> Result<f64, EvalError> {
    let a = a.unwrap_or(f64::NAN);
    let v = match op {
        OpKind::Var(i) => point[*i],
        OpKind::Const(c) => *c,
        OpKind::Add => a + b.unwrap(),
        OpKind::Sub => a - b.unwrap(),
        OpKind::Mul => a * b.unwrap(),
        OpKind::Div => {
            let b = b.unwrap();
            if b == 0.0 {
                return Err(EvalError {
                    node: id,
                    op: "div",
                    reason: "division by zero".into(),
                });
            }
            a / b
        }
        OpKind::Neg => -a,
        OpKind::Pow(k) => {
            if *k < 0 && a == 0.0 {
                return Err(EvalError {
                    node: id,
                    op: "pow",
                    reason: "negative power of zero".into(),
                });
            }
            a.powi(*k)
        }
        OpKind::Exp => a.exp(),
        OpKind::Log => {
            if a <= 0.0 {
                return Err(EvalError {
                    node: id,
                    op: "log",
                    reason: format!("log of non-positive value {a}"),
                });
            }
            a.ln()
        }
        OpKind::Sqrt => {
            if a < 0.0 {
                return Err(EvalError {
                    node: id,
                    op: "sqrt",
                    reason: format!("sqrt of negative value {a}"),
                });
            }
            a.sqrt()
        }
        OpKind::Sqr => a * a,
        OpKind::Xlog => {
            if a < 0.0 {
                return Err(EvalError {
                    node: id,
                    op: "xlog",
                    reason: format!("x*log(x) of negative value {a}"),
                });
            }
            interval::xlog_val(a)
        }
        OpKind::Sin => a.sin(),
        OpKind::Cos => a.cos(),
    };
    Ok(v)
}

fn interval_op(
    id: NodeId,
    op: &OpKind,
    a: Option<Interval>,
    b: Option<Interval>,
    domain: &IntervalBox,
) -> Result<Interval, EvalError> {
    let a = a.unwrap_or_else(|| Interval::point(0.0));
    let v = match op {
        OpKind::Var(i) => domain.dims[*i],
        OpKind::Const(c) => Interval::point(*c),
        OpKind::Add => interval::iadd(a, b.unwrap()),
        OpKind::Sub => interval::isub(a, b.unwrap()),
        OpKind::Mul => interval::imul(a, b.unwrap()),
        OpKind::Div => {
            interval::idiv(a, b.unwrap()).map_err(|e| domain_err(id, "div", e))?
        }
        OpKind::Neg => interval::ineg(a),
        OpKind::Pow(k) => interval::ipow_int(a, *k).map_err(|e| domain_err(id, "pow", e))?,
        OpKind::Exp => interval::iexp(a),
        OpKind::Log => interval::ilog(a).map_err(|e| domain_err(id, "log", e))?,
        OpKind::Sqrt => interval::isqrt(a).map_err(|e| domain_err(id, "sqrt", e))?,
        OpKind::Sqr => interval::isqr(a),
        OpKind::Xlog => interval::ixlog(a).map_err(|e| domain_err(id, "xlog", e))?,
        OpKind::Sin => interval::isin(a),
        OpKind::Cos => interval::icos(a),
    };
    Ok(v)
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(src: &str) -> Result<Vec<Spanned>, ParseError> {
    let mut out = Vec::new();
    let mut line = 1usize;
    let mut col = 1usize;
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let (tline, tcol) = (line, col);
        let mut push = |tok| {
            out.push(Spanned {
                tok,
                line: tline,
                col: tcol,
            })
        };
        match c {
            '\n' => {
                line += 1;
                col = 1;
                i += 1;
                continue;
            }
            c if c.is_whitespace() => {}
            '+' => push(Tok::Plus),
            '-' => push(Tok::Minus),
            '*' => push(Tok::Star),
            '/' => push(Tok::Slash),
            '^' => push(Tok::Caret),
            '(' => push(Tok::LParen),
            ')' => push(Tok::RParen),
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_digit()
                        || chars[i] == '.'
                        || chars[i] == 'e'
                        || chars[i] == 'E'
                        || ((chars[i] == '+' || chars[i] == '-')
                            && i > start
                            && (chars[i - 1] == 'e' || chars[i - 1] == 'E')))
                {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                let v: f64 = text.parse().map_err(|_| ParseError {
                    line: tline,
                    col: tcol,
                    msg: format!("bad number literal '{text}'"),
                })?;
                out.push(Spanned {
                    tok: Tok::Num(v),
                    line: tline,
                    col: tcol,
                });
                col += i - start;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_alphanumeric() || chars[i] == '_')
                {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                out.push(Spanned {
                    tok: Tok::Ident(text),
                    line: tline,
                    col: tcol,
                });
                col += i - start;
                continue;
            }
            other => {
                return Err(ParseError {
                    line: tline,
                    col: tcol,
                    msg: format!("unexpected character '{other}'"),
                })
            }
        }
        i += 1;
        col += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    builder: &'a mut DagBuilder,
    tokens: Vec<Spanned>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|s| &s.tok)
    }

    fn here(&self) -> (usize, usize) {
        self.tokens
            .get(self.pos.min(self.tokens.len().saturating_sub(1)))
            .map(|s| (s.line, s.col))
            .unwrap_or((1, 1))
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        let (line, col) = self.here();
        ParseError {
            line,
            col,
            msg: msg.into(),
        }
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.pos).map(|s| s.tok.clone());
        self.pos += 1;
        t
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == Some(t) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_end(&self) -> Result<(), ParseError> {
        if self.pos == self.tokens.len() {
            Ok(())
        } else {
            Err(self.err("trailing input after expression"))
        }
    }

    fn expr(&mut self) -> Result<NodeId, ParseError> {
        let mut acc = self.term()?;
        loop {
            if self.eat(&Tok::Plus) {
                let rhs = self.term()?;
                acc = self.builder.add(acc, rhs);
            } else if self.eat(&Tok::Minus) {
                let rhs = self.term()?;
                acc = self.builder.sub(acc, rhs);
            } else {
                return Ok(acc);
            }
        }
    }

    fn term(&mut self) -> Result<NodeId, ParseError> {
        let mut acc = self.unary()?;
        loop {
            if self.eat(&Tok::Star) {
                let rhs = self.unary()?;
                acc = self.builder.mul(acc, rhs);
            } else if self.eat(&Tok::Slash) {
                let rhs = self.unary()?;
                acc = self.builder.div(acc, rhs);
            } else {
                return Ok(acc);
            }
        }
    }

    fn unary(&mut self) -> Result<NodeId, ParseError> {
        if self.eat(&Tok::Minus) {
            let inner = self.unary()?;
            Ok(self.builder.neg(inner))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<NodeId, ParseError> {
        let base = self.atom()?;
        if self.eat(&Tok::Caret) {
            let k = self.exponent()?;
            Ok(self.builder.pow(base, k))
        } else {
            Ok(base)
        }
    }

    fn exponent(&mut self) -> Result<i32, ParseError> {
        let parens = self.eat(&Tok::LParen);
        let neg = self.eat(&Tok::Minus);
        let k = match self.bump() {
            Some(Tok::Num(v)) => {
                if v.fract() != 0.0 || v.abs() > i32::MAX as f64 {
                    return Err(self.err(format!("exponent must be an integer, got {v}")));
                }
                v as i32
            }
            _ => return Err(self.err("expected integer exponent after '^'")),
        };
        if parens && !self.eat(&Tok::RParen) {
            return Err(self.err("expected ')' closing exponent"));
        }
        Ok(if neg { -k } else { k })
    }

    fn atom(&mut self) -> Result<NodeId, ParseError> {
        match self.bump() {
            Some(Tok::Num(v)) => Ok(self.builder.constant(v)),
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                if !self.eat(&Tok::RParen) {
                    return Err(self.err("expected ')'"));
                }
                Ok(inner)
            }
            Some(Tok::Ident(name)) => {
                if self.peek() == Some(&Tok::LParen) {
                    let op = match name.as_str() {
                        "exp" => OpKind::Exp,
                        "log" => OpKind::Log,
                        "sqrt" => OpKind::Sqrt,
                        "sqr" => OpKind::Sqr,
                        "xlog" => OpKind::Xlog,
                        "sin" => OpKind::Sin,
                        "cos" => OpKind::Cos,
                        _ => return Err(self.err(format!("unknown function '{name}'"))),
                    };
                    self.pos += 1; // consume '('
                    let inner = self.expr()?;
                    if !self.eat(&Tok::RParen) {
                        return Err(self.err("expected ')'"));
                    }
                    Ok(self.builder.unary(op, inner))
                } else if name == "pi" {
                    Ok(self.builder.constant(std::f64::consts::PI))
                } else {
                    match self.builder.var_names.iter().position(|v| *v == name) {
                        Some(i) => Ok(self.builder.var(i)),
                        None => Err(self.err(format!("unknown identifier '{name}'"))),
                    }
                }
            }
            _ => Err(self.err("expected a number, variable, function call or '('")),
        }
    }
}

/// Convenience: parse a single expression over the named variables.
pub fn parse_expression<S: AsRef<str>>(
    src: &str,
    var_names: &[S],
) -> Result<(Dag, NodeId), ParseError> {
    let mut b = DagBuilder::new(var_names);
    let root = b.parse(src)?;
    Ok((b.finish(), root))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn shared_factors_are_stored_once() {
        let (dag, root) = parse_expression("0.5*z*(1 - 0.5*z)", &["z"]).unwrap();
        // Nodes: z, 0.5, 0.5*z, 1, 1 - 0.5*z, product. The repeated literal
        // and the repeated product both unify.
        assert_eq!(dag.len(), 6);
        assert_eq!(root.0, dag.len() - 1);
    }

    #[test]
    fn example_dag_has_seven_factors() {
        let (dag, _) = parse_expression("(z-z^2)*(z^3-exp(z))", &["z"]).unwrap();
        assert_eq!(dag.len(), 7);
    }

    #[test]
    fn schedule_orders_children_first() {
        let (dag, _) = parse_expression("(x+y)*exp(x+y) - log(x+3)", &["x", "y"]).unwrap();
        let mut seen = vec![false; dag.len()];
        for &id in &dag.schedule {
            for arg in &dag.node(id).args {
                assert!(seen[arg.0], "child scheduled after parent");
            }
            seen[id.0] = true;
        }
        assert!(seen.iter().all(|&s| s));
        // Variables come first.
        assert!(matches!(dag.node(dag.schedule[0]).op, OpKind::Var(0)));
        assert!(matches!(dag.node(dag.schedule[1]).op, OpKind::Var(1)));
    }

    #[test]
    fn pow_normalization() {
        let (dag, root) = parse_expression("z^1", &["z"]).unwrap();
        assert!(matches!(dag.node(root).op, OpKind::Var(0)));
        let (dag, root) = parse_expression("z^2", &["z"]).unwrap();
        assert!(matches!(dag.node(root).op, OpKind::Sqr));
        let (dag, root) = parse_expression("z^0", &["z"]).unwrap();
        assert!(matches!(dag.node(root).op, OpKind::Const(c) if c == 1.0));
        let (dag, root) = parse_expression("z^-2", &["z"]).unwrap();
        assert!(matches!(dag.node(root).op, OpKind::Pow(-2)));
        let (dag, root) = parse_expression("z^(-3)", &["z"]).unwrap();
        assert!(matches!(dag.node(root).op, OpKind::Pow(-3)));
    }

    #[test]
    fn parse_errors_carry_position() {
        let mut b = DagBuilder::new(&["z"]);
        let e = b.parse("z + q").unwrap_err();
        assert!(e.msg.contains("unknown identifier 'q'"), "{e}");
        assert_eq!((e.line, e.col), (1, 5));
        let e = b.parse("z^2.5").unwrap_err();
        assert!(e.msg.contains("integer"), "{e}");
        let e = b.parse("z*").unwrap_err();
        assert!(e.msg.contains("expected"), "{e}");
    }

    #[test]
    fn eval_matches_hand_computation() {
        let (dag, root) = parse_expression("(z-z^2)*(z^3-exp(z))", &["z"]).unwrap();
        let z = 0.25f64;
        let want = (z - z * z) * (z * z * z - z.exp());
        let got = dag.eval_real(&[z]).unwrap()[root.0];
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn eval_reports_offending_factor() {
        let (dag, _) = parse_expression("log(z) + 1", &["z"]).unwrap();
        let err = dag.eval_real(&[-2.0]).unwrap_err();
        assert_eq!(err.op, "log");
        let err = dag
            .eval_interval(&IntervalBox::new(vec![Interval::new(-1.0, 1.0)]))
            .unwrap_err();
        assert_eq!(err.op, "log");
    }

    #[test]
    fn derivative_of_composite() {
        let (dag, root) = parse_expression("log(z+1) - z^2", &["z"]).unwrap();
        let (d1, d1r) = dag.derivative(root);
        // h' = 1/(z+1) - 2z at z = 0.25 -> 0.8 - 0.5 = 0.3
        let v = d1.eval_real(&[0.25]).unwrap()[d1r.0];
        assert!((v - 0.3).abs() < 1e-15);
        let (d2, d2r) = d1.derivative(d1r);
        // h'' = -1/(z+1)^2 - 2 at z = 0 -> -3
        let v = d2.eval_real(&[0.0]).unwrap()[d2r.0];
        assert!((v + 3.0).abs() < 1e-12);
    }

    #[test]
    fn taylor_form_is_exact_for_constants_and_encloses_samples() {
        let (dag, root) = parse_expression("log(z+1) - exp(z - 0.5)", &["z"]).unwrap();
        let x = Interval::new(-0.5, 1.0);
        let t = dag.taylor2_extension(root, x).unwrap();
        for i in 0..=200 {
            let z = -0.5 + 1.5 * i as f64 / 200.0;
            let v = dag.eval_real(&[z]).unwrap()[root.0];
            assert!(t.contains(v), "taylor form fails to enclose f({z}) = {v}");
        }

        let (dag, root) = parse_expression("3.5", &["z"]).unwrap();
        let t = dag.taylor2_extension(root, x).unwrap();
        assert_eq!(t, Interval::point(3.5));
    }

    #[test]
    fn render_round_trips() {
        let src = "(z - z^2)*(z^3 - exp(z)) + sqrt(z + 2)/(z + 3)";
        let (dag, root) = parse_expression(src, &["z"]).unwrap();
        let rendered = dag.render(root);
        let (dag2, root2) = parse_expression(&rendered, &["z"]).unwrap();
        assert_eq!(dag.node(root), dag2.node(root2));
        assert_eq!(dag, dag2);
    }

    prop_compose! {
        fn leaf()(k in 0..3usize, c in -3.0..3.0f64) -> String {
            match k {
                0 => "x".to_string(),
                1 => "y".to_string(),
                _ => format!("{c:.3}"),
            }
        }
    }

    fn arb_expr() -> impl Strategy<Value = String> {
        leaf().prop_recursive(4, 64, 3, |inner| {
            (inner.clone(), inner, 0..7usize, 2..4i32).prop_map(|(a, b, op, k)| match op {
                0 => format!("({a} + {b})"),
                1 => format!("({a} - {b})"),
                2 => format!("({a}*{b})"),
                3 => format!("exp({a})"),
                4 => format!("sin({a})"),
                5 => format!("({a})^{k}"),
                _ => format!("-({a})"),
            })
        })
    }

    proptest! {
        // Parser round-trip against a straightforward reference evaluation:
        // parse, evaluate, compare with evaluating the re-rendered text.
        #[test]
        fn parse_render_parse_preserves_value(src in arb_expr(), x in -2.0..2.0f64, y in -2.0..2.0f64) {
            let (dag, root) = parse_expression(&src, &["x", "y"]).unwrap();
            let v1 = dag.eval_real(&[x, y]).unwrap()[root.0];
            let rendered = dag.render(root);
            let (dag2, root2) = parse_expression(&rendered, &["x", "y"]).unwrap();
            let v2 = dag2.eval_real(&[x, y]).unwrap()[root2.0];
            prop_assert!((v1 - v2).abs() <= 1e-9 * v1.abs().max(1.0), "{src} vs {rendered}: {v1} != {v2}");
        }

        // Natural interval extension encloses sampled values.
        #[test]
        fn interval_extension_encloses_samples(src in arb_expr(), t in 0.0..1.0f64, u in 0.0..1.0f64) {
            let (dag, root) = parse_expression(&src, &["x", "y"]).unwrap();
            let domain = IntervalBox::new(vec![
                Interval::new(-1.5, 2.0),
                Interval::new(0.5, 1.75),
            ]);
            let bounds = dag.eval_interval(&domain).unwrap()[root.0];
            let p = [
                domain.dims[0].lo + t * domain.dims[0].width(),
                domain.dims[1].lo + u * domain.dims[1].width(),
            ];
            let v = dag.eval_real(&p).unwrap()[root.0];
            prop_assert!(bounds.inflated(1e-9).contains(v), "{src}: {v} outside {bounds:?}");
        }
    }
}
