//! Guard expressions.
//!
//! ```text
//! cond  := conj ("or" conj)*
//! conj  := atom ("and" atom)*
//! atom  := "(" cond ")" | "true" | "false" | term OP term
//! term  := event.NAME | user.pref.NAME | INT | "string"
//! OP    := == | != | < | <= | > | >=
//! ```
//!
//! Evaluation is total: a comparison with a missing attribute or preference
//! is false. Integers compare numerically; strings support only `==`/`!=`;
//! an integer never equals a string.

use std::collections::HashMap;
use std::fmt;

use crate::wire::ArgValue;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    EventAttr(String),
    UserPref(String),
    Literal(ArgValue),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [
        CmpOp::Eq,
        CmpOp::Ne,
        CmpOp::Lt,
        CmpOp::Le,
        CmpOp::Gt,
        CmpOp::Ge,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Condition {
    Const(bool),
    Compare(Term, CmpOp, Term),
    And(Box<Condition>, Box<Condition>),
    Or(Box<Condition>, Box<Condition>),
}

impl Default for Condition {
    fn default() -> Self {
        Condition::Const(true)
    }
}

/// Values a condition can see: event attributes and user preferences.
pub trait Bindings {
    fn event_attr(&self, name: &str) -> Option<ArgValue>;
    fn user_pref(&self, name: &str) -> Option<ArgValue>;
}

/// Plain-map bindings, handy for tests and offline evaluation.
#[derive(Debug, Clone, Default)]
pub struct MapBindings {
    pub attrs: HashMap<String, ArgValue>,
    pub prefs: HashMap<String, ArgValue>,
}

impl Bindings for MapBindings {
    fn event_attr(&self, name: &str) -> Option<ArgValue> {
        self.attrs.get(name).cloned()
    }

    fn user_pref(&self, name: &str) -> Option<ArgValue> {
        self.prefs.get(name).cloned()
    }
}

impl Condition {
    pub fn parse(src: &str) -> Result<Condition, String> {
        let tokens = lex(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let cond = p.disjunction()?;
        match p.peek() {
            None => Ok(cond),
            Some(t) => Err(format!("unexpected {t} after condition")),
        }
    }

    pub fn eval(&self, b: &dyn Bindings) -> bool {
        match self {
            Condition::Const(v) => *v,
            Condition::Compare(l, op, r) => match (resolve(l, b), resolve(r, b)) {
                (Some(l), Some(r)) => compare(&l, *op, &r),
                _ => false,
            },
            Condition::And(a, c) => a.eval(b) && c.eval(b),
            Condition::Or(a, c) => a.eval(b) || c.eval(b),
        }
    }
}

fn resolve(t: &Term, b: &dyn Bindings) -> Option<ArgValue> {
    match t {
        Term::EventAttr(n) => b.event_attr(n),
        Term::UserPref(n) => b.user_pref(n),
        Term::Literal(v) => Some(v.clone()),
    }
}

fn compare(l: &ArgValue, op: CmpOp, r: &ArgValue) -> bool {
    match (l, r) {
        (ArgValue::Int(a), ArgValue::Int(b)) => match op {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        },
        (ArgValue::Text(a), ArgValue::Text(b)) => match op {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            _ => false,
        },
        _ => op == CmpOp::Ne,
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::EventAttr(n) => write!(f, "event.{n}"),
            Term::UserPref(n) => write!(f, "user.pref.{n}"),
            Term::Literal(ArgValue::Int(v)) => write!(f, "{v}"),
            Term::Literal(ArgValue::Text(s)) => {
                f.write_str("\"")?;
                for c in s.chars() {
                    match c {
                        '"' => f.write_str("\\\"")?,
                        '\\' => f.write_str("\\\\")?,
                        c => write!(f, "{c}")?,
                    }
                }
                f.write_str("\"")
            }
        }
    }
}

impl fmt::Display for Condition {
    /// Fully parenthesized rendering; parses back to the same tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Const(v) => write!(f, "{v}"),
            Condition::Compare(l, op, r) => write!(f, "{l} {} {r}", op.symbol()),
            Condition::And(a, b) => write!(f, "({a} and {b})"),
            Condition::Or(a, b) => write!(f, "({a} or {b})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Ident(String),
    Int(i64),
    Str(String),
    Op(CmpOp),
    LParen,
    RParen,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Ident(s) => write!(f, "'{s}'"),
            Token::Int(v) => write!(f, "{v}"),
            Token::Str(s) => write!(f, "{s:?}"),
            Token::Op(op) => write!(f, "'{}'", op.symbol()),
            Token::LParen => f.write_str("'('"),
            Token::RParen => f.write_str("')'"),
        }
    }
}

fn lex(src: &str) -> Result<Vec<Token>, String> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '(' => {
                out.push(Token::LParen);
                i += 1;
            }
            ')' => {
                out.push(Token::RParen);
                i += 1;
            }
            '=' | '!' | '<' | '>' => {
                let next = chars.get(i + 1).copied();
                let (op, len) = match (c, next) {
                    ('=', Some('=')) => (CmpOp::Eq, 2),
                    ('!', Some('=')) => (CmpOp::Ne, 2),
                    ('<', Some('=')) => (CmpOp::Le, 2),
                    ('>', Some('=')) => (CmpOp::Ge, 2),
                    ('<', _) => (CmpOp::Lt, 1),
                    ('>', _) => (CmpOp::Gt, 1),
                    _ => return Err(format!("unexpected '{c}' at column {}", i + 1)),
                };
                out.push(Token::Op(op));
                i += len;
            }
            '"' => {
                let mut s = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None => return Err("unterminated string literal".into()),
                        Some('"') => {
                            i += 1;
                            break;
                        }
                        Some('\\') => {
                            match chars.get(i + 1) {
                                Some(e @ ('"' | '\\')) => s.push(*e),
                                _ => return Err(format!("bad escape at column {}", i + 1)),
                            }
                            i += 2;
                        }
                        Some(ch) => {
                            s.push(*ch);
                            i += 1;
                        }
                    }
                }
                out.push(Token::Str(s));
            }
            c if c.is_ascii_digit()
                || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) =>
            {
                let start = i;
                i += 1;
                while chars.get(i).is_some_and(|d| d.is_ascii_digit()) {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                let v = text
                    .parse::<i64>()
                    .map_err(|_| format!("integer literal {text} out of range"))?;
                out.push(Token::Int(v));
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while chars
                    .get(i)
                    .is_some_and(|d| d.is_alphanumeric() || *d == '_' || *d == '.')
                {
                    i += 1;
                }
                out.push(Token::Ident(chars[start..i].iter().collect()));
            }
            _ => return Err(format!("unexpected '{c}' at column {}", i + 1)),
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn keyword(&mut self, kw: &str) -> bool {
        if matches!(self.peek(), Some(Token::Ident(s)) if s == kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn disjunction(&mut self) -> Result<Condition, String> {
        let mut left = self.conjunction()?;
        while self.keyword("or") {
            let right = self.conjunction()?;
            left = Condition::Or(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn conjunction(&mut self) -> Result<Condition, String> {
        let mut left = self.atom()?;
        while self.keyword("and") {
            let right = self.atom()?;
            left = Condition::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn atom(&mut self) -> Result<Condition, String> {
        match self.peek() {
            Some(Token::LParen) => {
                self.pos += 1;
                let inner = self.disjunction()?;
                match self.next() {
                    Some(Token::RParen) => Ok(inner),
                    Some(t) => Err(format!("expected ')', found {t}")),
                    None => Err("expected ')', found end of condition".into()),
                }
            }
            Some(Token::Ident(s)) if s == "true" || s == "false" => {
                let v = s == "true";
                self.pos += 1;
                Ok(Condition::Const(v))
            }
            _ => {
                let left = self.term()?;
                let op = match self.next() {
                    Some(Token::Op(op)) => op,
                    Some(t) => return Err(format!("expected comparison operator, found {t}")),
                    None => {
                        return Err("expected comparison operator, found end of condition".into())
                    }
                };
                let right = self.term()?;
                Ok(Condition::Compare(left, op, right))
            }
        }
    }

    fn term(&mut self) -> Result<Term, String> {
        match self.next() {
            Some(Token::Int(v)) => Ok(Term::Literal(ArgValue::Int(v))),
            Some(Token::Str(s)) => Ok(Term::Literal(ArgValue::Text(s))),
            Some(Token::Ident(path)) => {
                if let Some(name) = path.strip_prefix("event.") {
                    check_name(name, &path)?;
                    Ok(Term::EventAttr(name.to_string()))
                } else if let Some(name) = path.strip_prefix("user.pref.") {
                    check_name(name, &path)?;
                    Ok(Term::UserPref(name.to_string()))
                } else {
                    Err(format!(
                        "unknown term '{path}', expected event.NAME or user.pref.NAME"
                    ))
                }
            }
            Some(t) => Err(format!("expected a term, found {t}")),
            None => Err("expected a term, found end of condition".into()),
        }
    }
}

fn check_name(name: &str, path: &str) -> Result<(), String> {
    if name.is_empty() || name.contains('.') {
        Err(format!("malformed term '{path}'"))
    } else {
        Ok(())
    }
}
