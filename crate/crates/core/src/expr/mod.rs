//! Coefficient expressions over the coordinates x1..xd: parsing, evaluation
//! and exact symbolic differentiation.
//!
//! Expressions are immutable after parsing and safe to evaluate from any
//! number of threads. Out-of-domain evaluation (log of a non-positive value,
//! division by zero, overflow to a non-finite result) is always a reported
//! error, never a silent NaN/inf.

mod parse;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Unary elementary functions of the grammar. `Step` is the indicator
/// step(t) = 1 if t > 0 else 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Tanh,
    Step,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Tanh => "tanh",
            Func::Step => "step",
        }
    }
}

/// Expression tree. Variables are 0-based coordinate indices (x1 -> Var(0)).
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Fun(Func, Box<Node>),
    Min(Box<Node>, Box<Node>),
    Max(Box<Node>, Box<Node>),
}

/// A parsed scalar expression tied to an ambient dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: Node,
    dim: usize,
}

/// A vector field given componentwise; component count equals the dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorExpression {
    components: Vec<Expression>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("`{name}` expects {expected} argument(s), got {got} (offset {offset})")]
    WrongArity {
        name: String,
        expected: usize,
        got: usize,
        offset: usize,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("dimension mismatch: expression over {expected} variables evaluated at a point of dimension {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("domain error in `{subexpr}`: {message}")]
    Domain { subexpr: String, message: String },
    #[error("non-finite result in `{subexpr}`")]
    NonFinite { subexpr: String },
}

impl Expression {
    /// Parses `text` as an expression over x1..x{dim}.
    pub fn parse(text: &str, dim: usize) -> Result<Self, ParseError> {
        assert!(dim >= 1, "dimension must be positive");
        let root = parse::parse(text, dim)?;
        Ok(Expression { root, dim })
    }

    pub fn constant(value: f64, dim: usize) -> Self {
        Expression {
            root: Node::Num(value),
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// Some(value) when the expression references no variables.
    pub fn as_const(&self) -> Option<f64> {
        fn no_vars(n: &Node) -> bool {
            match n {
                Node::Num(_) => true,
                Node::Var(_) => false,
                Node::Neg(a) | Node::Fun(_, a) => no_vars(a),
                Node::Add(a, b)
                | Node::Sub(a, b)
                | Node::Mul(a, b)
                | Node::Div(a, b)
                | Node::Pow(a, b)
                | Node::Min(a, b)
                | Node::Max(a, b) => no_vars(a) && no_vars(b),
            }
        }
        if no_vars(&self.root) {
            self.eval(&vec![0.0; self.dim]).ok()
        } else {
            None
        }
    }

    pub fn contains_step(&self) -> bool {
        fn walk(n: &Node) -> bool {
            match n {
                Node::Num(_) | Node::Var(_) => false,
                Node::Fun(f, a) => *f == Func::Step || walk(a),
                Node::Neg(a) => walk(a),
                Node::Add(a, b)
                | Node::Sub(a, b)
                | Node::Mul(a, b)
                | Node::Div(a, b)
                | Node::Pow(a, b)
                | Node::Min(a, b)
                | Node::Max(a, b) => walk(a) || walk(b),
            }
        }
        walk(&self.root)
    }

    /// True when the expression contains no kinked primitive
    /// (step, abs, min, max).
    pub fn is_kink_free(&self) -> bool {
        fn walk(n: &Node) -> bool {
            match n {
                Node::Num(_) | Node::Var(_) => true,
                Node::Fun(f, a) => !matches!(f, Func::Step | Func::Abs) && walk(a),
                Node::Neg(a) => walk(a),
                Node::Min(..) | Node::Max(..) => false,
                Node::Add(a, b)
                | Node::Sub(a, b)
                | Node::Mul(a, b)
                | Node::Div(a, b)
                | Node::Pow(a, b) => walk(a) && walk(b),
            }
        }
        walk(&self.root)
    }

    /// IEEE-accurate evaluation; any out-of-domain operation or non-finite
    /// intermediate is reported with the offending subexpression.
    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        if x.len() != self.dim {
            return Err(EvalError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        eval_node(&self.root, x)
    }

    /// Exact symbolic partial derivative with respect to coordinate `i`
    /// (0-based). `step` differentiates to 0 away from its kink; the returned
    /// flag is true when the result involved differentiating through a kink
    /// (step, abs, min, max), where pointwise validity at the kink itself is
    /// not guaranteed.
    pub fn differentiate(&self, i: usize) -> Derivative {
        assert!(i < self.dim, "coordinate index out of range");
        let mut kink = false;
        let root = diff_node(&self.root, i, &mut kink);
        Derivative {
            expr: Expression {
                root,
                dim: self.dim,
            },
            kink_warning: kink,
        }
    }
}

/// Result of symbolic differentiation.
#[derive(Debug, Clone)]
pub struct Derivative {
    pub expr: Expression,
    /// True when a kinked primitive (step/abs/min/max) was differentiated.
    pub kink_warning: bool,
}

impl VectorExpression {
    pub fn parse(texts: &[&str], dim: usize) -> Result<Self, ParseError> {
        assert_eq!(
            texts.len(),
            dim,
            "component count must equal the ambient dimension"
        );
        let components = texts
            .iter()
            .map(|t| Expression::parse(t, dim))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(VectorExpression { components })
    }

    pub fn zero(dim: usize) -> Self {
        VectorExpression {
            components: (0..dim).map(|_| Expression::constant(0.0, dim)).collect(),
        }
    }

    pub fn from_components(components: Vec<Expression>) -> Self {
        assert!(!components.is_empty());
        let dim = components[0].dim();
        assert!(components.iter().all(|c| c.dim() == dim));
        assert_eq!(components.len(), dim);
        VectorExpression { components }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn component(&self, i: usize) -> &Expression {
        &self.components[i]
    }

    pub fn components(&self) -> &[Expression] {
        &self.components
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        for (i, c) in self.components.iter().enumerate() {
            out[i] = c.eval(x)?;
        }
        Ok(())
    }

    /// True when every component is the literal constant zero.
    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|c| c.as_const() == Some(0.0))
    }

    /// Symbolic divergence sum_i d(component_i)/dx_i.
    pub fn divergence(&self) -> Derivative {
        let dim = self.dim();
        let mut kink = false;
        let mut acc = Node::Num(0.0);
        for (i, c) in self.components.iter().enumerate() {
            let d = c.differentiate(i);
            kink |= d.kink_warning;
            acc = smart_add(acc, d.expr.root);
        }
        Derivative {
            expr: Expression { root: acc, dim },
            kink_warning: kink,
        }
    }
}

fn eval_node(n: &Node, x: &[f64]) -> Result<f64, EvalError> {
    let v = match n {
        Node::Num(v) => *v,
        Node::Var(i) => x[*i],
        Node::Neg(a) => -eval_node(a, x)?,
        Node::Add(a, b) => eval_node(a, x)? + eval_node(b, x)?,
        Node::Sub(a, b) => eval_node(a, x)? - eval_node(b, x)?,
        Node::Mul(a, b) => eval_node(a, x)? * eval_node(b, x)?,
        Node::Div(a, b) => {
            let den = eval_node(b, x)?;
            if den == 0.0 {
                return Err(domain(n, "division by zero"));
            }
            eval_node(a, x)? / den
        }
        Node::Pow(a, b) => {
            let base = eval_node(a, x)?;
            let exp = eval_node(b, x)?;
            if base == 0.0 && exp == 0.0 {
                1.0
            } else if base < 0.0 && exp.fract() != 0.0 {
                return Err(domain(n, "negative base with non-integer exponent"));
            } else if base == 0.0 && exp < 0.0 {
                return Err(domain(n, "zero base with negative exponent"));
            } else {
                base.powf(exp)
            }
        }
        Node::Fun(f, a) => {
            let v = eval_node(a, x)?;
            match f {
                Func::Sin => v.sin(),
                Func::Cos => v.cos(),
                Func::Exp => v.exp(),
                Func::Log => {
                    if v <= 0.0 {
                        return Err(domain(n, "log of a non-positive value"));
                    }
                    v.ln()
                }
                Func::Sqrt => {
                    if v < 0.0 {
                        return Err(domain(n, "sqrt of a negative value"));
                    }
                    v.sqrt()
                }
                Func::Abs => v.abs(),
                Func::Tanh => v.tanh(),
                Func::Step => {
                    if v > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
            }
        }
        Node::Min(a, b) => eval_node(a, x)?.min(eval_node(b, x)?),
        Node::Max(a, b) => eval_node(a, x)?.max(eval_node(b, x)?),
    };
    if !v.is_finite() {
        return Err(EvalError::NonFinite {
            subexpr: render(n),
        });
    }
    Ok(v)
}

fn domain(n: &Node, message: &str) -> EvalError {
    EvalError::Domain {
        subexpr: render(n),
        message: message.to_string(),
    }
}

// Constant-folding constructors keep derivative trees from exploding.
fn smart_add(a: Node, b: Node) -> Node {
    match (a, b) {
        (Node::Num(0.0), b) => b,
        (a, Node::Num(0.0)) => a,
        (Node::Num(x), Node::Num(y)) => Node::Num(x + y),
        (a, b) => Node::Add(Box::new(a), Box::new(b)),
    }
}

fn smart_sub(a: Node, b: Node) -> Node {
    match (a, b) {
        (a, Node::Num(0.0)) => a,
        (Node::Num(0.0), b) => smart_neg(b),
        (Node::Num(x), Node::Num(y)) => Node::Num(x - y),
        (a, b) => Node::Sub(Box::new(a), Box::new(b)),
    }
}

fn smart_neg(a: Node) -> Node {
    match a {
        Node::Num(x) => Node::Num(-x),
        Node::Neg(inner) => *inner,
        a => Node::Neg(Box::new(a)),
    }
}

fn smart_mul(a: Node, b: Node) -> Node {
    match (a, b) {
        (Node::Num(0.0), _) | (_, Node::Num(0.0)) => Node::Num(0.0),
        (Node::Num(1.0), b) => b,
        (a, Node::Num(1.0)) => a,
        (Node::Num(x), Node::Num(y)) => Node::Num(x * y),
        (a, b) => Node::Mul(Box::new(a), Box::new(b)),
    }
}

fn smart_div(a: Node, b: Node) -> Node {
    match (a, b) {
        (Node::Num(0.0), _) => Node::Num(0.0),
        (a, Node::Num(1.0)) => a,
        (a, b) => Node::Div(Box::new(a), Box::new(b)),
    }
}

fn smart_pow(a: Node, b: Node) -> Node {
    match (a, b) {
        (a, Node::Num(1.0)) => a,
        (_, Node::Num(0.0)) => Node::Num(1.0),
        (a, b) => Node::Pow(Box::new(a), Box::new(b)),
    }
}

fn diff_node(n: &Node, i: usize, kink: &mut bool) -> Node {
    match n {
        Node::Num(_) => Node::Num(0.0),
        Node::Var(j) => Node::Num(if *j == i { 1.0 } else { 0.0 }),
        Node::Neg(a) => smart_neg(diff_node(a, i, kink)),
        Node::Add(a, b) => smart_add(diff_node(a, i, kink), diff_node(b, i, kink)),
        Node::Sub(a, b) => smart_sub(diff_node(a, i, kink), diff_node(b, i, kink)),
        Node::Mul(a, b) => smart_add(
            smart_mul(diff_node(a, i, kink), (**b).clone()),
            smart_mul((**a).clone(), diff_node(b, i, kink)),
        ),
        Node::Div(a, b) => {
            // (a/b)' = (a'b - ab') / b^2
            let num = smart_sub(
                smart_mul(diff_node(a, i, kink), (**b).clone()),
                smart_mul((**a).clone(), diff_node(b, i, kink)),
            );
            smart_div(num, smart_pow((**b).clone(), Node::Num(2.0)))
        }
        Node::Pow(a, b) => {
            let da = diff_node(a, i, kink);
            let db = diff_node(b, i, kink);
            if db == Node::Num(0.0) {
                // a^c: c * a^(c-1) * a'
                let cm1 = smart_sub((**b).clone(), Node::Num(1.0));
                smart_mul(
                    smart_mul((**b).clone(), smart_pow((**a).clone(), cm1)),
                    da,
                )
            } else {
                // general: a^b * (b' log a + b a'/a)
                let t1 = smart_mul(db, Node::Fun(Func::Log, Box::new((**a).clone())));
                let t2 = smart_mul((**b).clone(), smart_div(da, (**a).clone()));
                smart_mul(n.clone(), smart_add(t1, t2))
            }
        }
        Node::Fun(f, a) => {
            let da = diff_node(a, i, kink);
            let inner = (**a).clone();
            let outer = match f {
                Func::Sin => Node::Fun(Func::Cos, Box::new(inner)),
                Func::Cos => smart_neg(Node::Fun(Func::Sin, Box::new(inner))),
                Func::Exp => n.clone(),
                Func::Log => smart_div(Node::Num(1.0), inner),
                Func::Sqrt => smart_div(
                    Node::Num(1.0),
                    smart_mul(Node::Num(2.0), n.clone()),
                ),
                Func::Tanh => smart_sub(
                    Node::Num(1.0),
                    smart_pow(n.clone(), Node::Num(2.0)),
                ),
                Func::Abs => {
                    // sign(a) = 2 step(a) - 1, kink at 0
                    *kink = true;
                    smart_sub(
                        smart_mul(Node::Num(2.0), Node::Fun(Func::Step, Box::new(inner))),
                        Node::Num(1.0),
                    )
                }
                Func::Step => {
                    // zero away from the kink; mollification, not differentiation,
                    // is the sanctioned route for rough fields
                    *kink = true;
                    return Node::Num(0.0);
                }
            };
            smart_mul(outer, da)
        }
        Node::Min(a, b) => {
            // min(a,b)' = step(b-a) a' + (1-step(b-a)) b'
            *kink = true;
            let sel = Node::Fun(
                Func::Step,
                Box::new(smart_sub((**b).clone(), (**a).clone())),
            );
            let da = diff_node(a, i, kink);
            let db = diff_node(b, i, kink);
            smart_add(
                smart_mul(sel.clone(), da),
                smart_mul(smart_sub(Node::Num(1.0), sel), db),
            )
        }
        Node::Max(a, b) => {
            *kink = true;
            let sel = Node::Fun(
                Func::Step,
                Box::new(smart_sub((**a).clone(), (**b).clone())),
            );
            let da = diff_node(a, i, kink);
            let db = diff_node(b, i, kink);
            smart_add(
                smart_mul(sel.clone(), da),
                smart_mul(smart_sub(Node::Num(1.0), sel), db),
            )
        }
    }
}

// Precedence levels for printing: + - (1), * / (2), unary - (3), ^ (4).
fn prec(n: &Node) -> u8 {
    match n {
        Node::Add(..) | Node::Sub(..) => 1,
        Node::Mul(..) | Node::Div(..) => 2,
        Node::Neg(..) => 3,
        Node::Pow(..) => 4,
        Node::Num(v) if *v < 0.0 => 3,
        _ => 5,
    }
}

fn render(n: &Node) -> String {
    fn go(n: &Node, out: &mut String) {
        // child is wrapped when its precedence is too low for the slot
        fn child(c: &Node, min_prec: u8, out: &mut String) {
            if prec(c) < min_prec {
                out.push('(');
                go(c, out);
                out.push(')');
            } else {
                go(c, out);
            }
        }
        match n {
            Node::Num(v) => {
                out.push_str(&format!("{v}"));
            }
            Node::Var(i) => out.push_str(&format!("x{}", i + 1)),
            Node::Neg(a) => {
                out.push('-');
                child(a, 3, out);
            }
            Node::Add(a, b) => {
                child(a, 1, out);
                out.push_str(" + ");
                child(b, 2, out);
            }
            Node::Sub(a, b) => {
                child(a, 1, out);
                out.push_str(" - ");
                child(b, 2, out);
            }
            Node::Mul(a, b) => {
                child(a, 2, out);
                out.push_str(" * ");
                child(b, 3, out);
            }
            Node::Div(a, b) => {
                child(a, 2, out);
                out.push_str(" / ");
                child(b, 3, out);
            }
            Node::Pow(a, b) => {
                child(a, 5, out);
                out.push('^');
                child(b, 4, out);
            }
            Node::Fun(f, a) => {
                out.push_str(f.name());
                out.push('(');
                go(a, out);
                out.push(')');
            }
            Node::Min(a, b) => {
                out.push_str("min(");
                go(a, out);
                out.push_str(", ");
                go(b, out);
                out.push(')');
            }
            Node::Max(a, b) => {
                out.push_str("max(");
                go(a, out);
                out.push_str(", ");
                go(b, out);
                out.push(')');
            }
        }
    }
    let mut s = String::new();
    go(n, &mut s);
    s
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render(&self.root))
    }
}

/// Anything evaluable as a scalar field on R^d.
pub trait ScalarField: Send + Sync {
    fn value(&self, x: &[f64]) -> Result<f64, EvalError>;
    /// Some(value) when the field is known to be constant.
    fn as_const(&self) -> Option<f64> {
        None
    }
    /// True when the field is known to be free of kinks and jumps; enables
    /// fast kernel-space convolution quadrature.
    fn is_smooth(&self) -> bool {
        false
    }
}

impl ScalarField for Expression {
    fn value(&self, x: &[f64]) -> Result<f64, EvalError> {
        self.eval(x)
    }
    fn as_const(&self) -> Option<f64> {
        Expression::as_const(self)
    }
    fn is_smooth(&self) -> bool {
        self.is_kink_free()
    }
}

impl<T: ScalarField + ?Sized> ScalarField for &T {
    fn value(&self, x: &[f64]) -> Result<f64, EvalError> {
        (**self).value(x)
    }
    fn as_const(&self) -> Option<f64> {
        (**self).as_const()
    }
    fn is_smooth(&self) -> bool {
        (**self).is_smooth()
    }
}

impl<T: ScalarField + ?Sized> ScalarField for Arc<T> {
    fn value(&self, x: &[f64]) -> Result<f64, EvalError> {
        (**self).value(x)
    }
    fn as_const(&self) -> Option<f64> {
        (**self).as_const()
    }
    fn is_smooth(&self) -> bool {
        (**self).is_smooth()
    }
}

/// A constant scalar field.
#[derive(Debug, Clone, Copy)]
pub struct ConstField(pub f64);

impl ScalarField for ConstField {
    fn value(&self, _x: &[f64]) -> Result<f64, EvalError> {
        Ok(self.0)
    }
    fn as_const(&self) -> Option<f64> {
        Some(self.0)
    }
    fn is_smooth(&self) -> bool {
        true
    }
}

/// A scalar field backed by a closure.
pub struct FnField<F>(pub F);

impl<F: Fn(&[f64]) -> Result<f64, EvalError> + Send + Sync> ScalarField for FnField<F> {
    fn value(&self, x: &[f64]) -> Result<f64, EvalError> {
        (self.0)(x)
    }
}

/// Anything evaluable as a vector field on R^d.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;
    fn value_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError>;
    fn is_zero(&self) -> bool {
        false
    }
    /// True when every component is known to be kink-free.
    fn is_smooth(&self) -> bool {
        false
    }
}

impl VectorField for VectorExpression {
    fn dim(&self) -> usize {
        VectorExpression::dim(self)
    }
    fn value_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        self.eval_into(x, out)
    }
    fn is_zero(&self) -> bool {
        VectorExpression::is_zero(self)
    }
    fn is_smooth(&self) -> bool {
        self.components.iter().all(|c| c.is_kink_free())
    }
}
