//! Parser for the entity specification language.
//!
//! ```text
//! class Account
//!   accountNumber: Iban @identity
//!   balance: Money
//!
//!   initial init
//!     on Open(initialDeposit: Money): opened
//!       pre: initialDeposit >= EUR(0.00)
//!       post: this.balance == initialDeposit
//!   ...
//! ```
//!
//! The language is whitespace-insensitive; `//` starts a line comment.
//! Unicode operators (`≥`, `≤`, `≡`, `€`) and their ASCII spellings
//! (`>=`, `<=`, `==`, `EUR(...)`) are interchangeable. A parameter or field
//! may be declared with another class's name as its kind (`from: Account`);
//! it then holds that entity's identity and may be used as a `sync:` target.

use thiserror::Error;

use crate::expr::{CmpOp, Expr};
use crate::money::Money;
use crate::spec::{ActionDef, EntitySpec, FieldDef, StateDef, SyncTemplate};
use crate::value::{Kind, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at {line}:{col}: {message}")]
pub struct ParseError {
    pub line: u32,
    pub col: u32,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Class,
    Initial,
    Final,
    On,
    Pre,
    Post,
    Sync,
    This,
    ScaleKw,
    True,
    False,
    Not,
    And,
    Or,
    AtIdentity,
    Ident(String),
    Int(i64),
    MoneyLit(Money),
    Colon,
    Comma,
    Dot,
    LParen,
    RParen,
    Plus,
    Minus,
    Lt,
    Le,
    EqEq,
    Ge,
    Gt,
    Eof,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: u32,
    col: u32,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: u32,
    col: u32,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            chars: src.chars().peekable(),
            line: 1,
            col: 1,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn err(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            line: self.line,
            col: self.col,
            message: message.into(),
        }
    }

    fn lex(mut self) -> Result<Vec<Spanned>, ParseError> {
        let mut out = Vec::new();
        loop {
            // Skip whitespace and comments.
            loop {
                match self.chars.peek() {
                    Some(c) if c.is_whitespace() => {
                        self.bump();
                    }
                    Some('/') => {
                        let mut ahead = self.chars.clone();
                        ahead.next();
                        if ahead.peek() == Some(&'/') {
                            while let Some(&c) = self.chars.peek() {
                                if c == '\n' {
                                    break;
                                }
                                self.bump();
                            }
                        } else {
                            return Err(self.err("unexpected `/`"));
                        }
                    }
                    _ => break,
                }
            }
            let (line, col) = (self.line, self.col);
            let Some(&c) = self.chars.peek() else {
                out.push(Spanned {
                    tok: Tok::Eof,
                    line,
                    col,
                });
                return Ok(out);
            };
            let tok = match c {
                ':' => {
                    self.bump();
                    Tok::Colon
                }
                ',' => {
                    self.bump();
                    Tok::Comma
                }
                '.' => {
                    self.bump();
                    Tok::Dot
                }
                '(' => {
                    self.bump();
                    Tok::LParen
                }
                ')' => {
                    self.bump();
                    Tok::RParen
                }
                '+' => {
                    self.bump();
                    Tok::Plus
                }
                '-' => {
                    self.bump();
                    Tok::Minus
                }
                '\u{2264}' => {
                    self.bump();
                    Tok::Le
                }
                '\u{2265}' => {
                    self.bump();
                    Tok::Ge
                }
                '\u{2261}' => {
                    self.bump();
                    Tok::EqEq
                }
                '<' => {
                    self.bump();
                    if self.chars.peek() == Some(&'=') {
                        self.bump();
                        Tok::Le
                    } else {
                        Tok::Lt
                    }
                }
                '>' => {
                    self.bump();
                    if self.chars.peek() == Some(&'=') {
                        self.bump();
                        Tok::Ge
                    } else {
                        Tok::Gt
                    }
                }
                '=' => {
                    self.bump();
                    if self.chars.peek() == Some(&'=') {
                        self.bump();
                    }
                    Tok::EqEq
                }
                '@' => {
                    self.bump();
                    let word = self.lex_word();
                    if word != "identity" {
                        return Err(self.err(format!("unknown annotation `@{word}`")));
                    }
                    Tok::AtIdentity
                }
                '\u{20ac}' => {
                    self.bump();
                    Tok::MoneyLit(self.lex_money_amount()?)
                }
                c if c.is_ascii_digit() => {
                    let n = self.lex_int()?;
                    Tok::Int(n)
                }
                c if c.is_alphabetic() || c == '_' => {
                    let word = self.lex_word();
                    match word.as_str() {
                        "class" => Tok::Class,
                        "initial" => Tok::Initial,
                        "final" => Tok::Final,
                        "on" => Tok::On,
                        "pre" => Tok::Pre,
                        "post" => Tok::Post,
                        "sync" => Tok::Sync,
                        "this" => Tok::This,
                        "scale" => Tok::ScaleKw,
                        "true" => Tok::True,
                        "false" => Tok::False,
                        "not" => Tok::Not,
                        "and" => Tok::And,
                        "or" => Tok::Or,
                        "EUR" => {
                            // EUR(12.34)
                            if self.chars.peek() != Some(&'(') {
                                return Err(self.err("expected `(` after EUR"));
                            }
                            self.bump();
                            let m = self.lex_money_amount()?;
                            if self.chars.peek() != Some(&')') {
                                return Err(self.err("expected `)` after EUR amount"));
                            }
                            self.bump();
                            Tok::MoneyLit(m)
                        }
                        _ => Tok::Ident(word),
                    }
                }
                other => return Err(self.err(format!("unexpected character `{other}`"))),
            };
            out.push(Spanned { tok, line, col });
        }
    }

    fn lex_word(&mut self) -> String {
        let mut s = String::new();
        while let Some(&c) = self.chars.peek() {
            if c.is_alphanumeric() || c == '_' {
                s.push(c);
                self.bump();
            } else {
                break;
            }
        }
        s
    }

    fn lex_int(&mut self) -> Result<i64, ParseError> {
        let mut s = String::new();
        while let Some(&c) = self.chars.peek() {
            if c.is_ascii_digit() {
                s.push(c);
                self.bump();
            } else {
                break;
            }
        }
        s.parse()
            .map_err(|_| self.err(format!("integer literal `{s}` out of range")))
    }

    /// Amount after a currency marker: `12` or `12.34` (exactly two decimals).
    fn lex_money_amount(&mut self) -> Result<Money, ParseError> {
        let euros = self.lex_int()?;
        let cents = if self.chars.peek() == Some(&'.') {
            self.bump();
            let d1 = self.bump().filter(char::is_ascii_digit);
            let d2 = self.bump().filter(char::is_ascii_digit);
            match (d1, d2) {
                (Some(a), Some(b)) => (a as i64 - '0' as i64) * 10 + (b as i64 - '0' as i64),
                _ => return Err(self.err("money literal needs two decimal digits")),
            }
        } else {
            0
        };
        euros
            .checked_mul(100)
            .and_then(|e| e.checked_add(cents))
            .map(Money)
            .ok_or_else(|| self.err("money literal out of range"))
    }
}

/// Parse a source file containing one or more `class` definitions.
pub fn parse_specs(source: &str) -> Result<Vec<EntitySpec>, ParseError> {
    let toks = Lexer::new(source).lex()?;
    Parser { toks, pos: 0 }.parse_file()
}

/// Parse a source file expected to contain exactly one `class`.
pub fn parse_spec(source: &str) -> Result<EntitySpec, ParseError> {
    let mut specs = parse_specs(source)?;
    match specs.len() {
        1 => Ok(specs.pop().unwrap()),
        n => Err(ParseError {
            line: 1,
            col: 1,
            message: format!("expected exactly one class, found {n}"),
        }),
    }
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

/// Declared kind plus, for entity-reference kinds, the referenced class.
fn resolve_kind(name: &str) -> (Kind, Option<String>) {
    match name {
        "Money" => (Kind::Money, None),
        "Int" => (Kind::Int, None),
        "Bool" => (Kind::Bool, None),
        // `Iban` is an identity kind from the banking domain; both it and
        // plain `Id` are opaque identifiers.
        "Id" | "Iban" => (Kind::Id, None),
        other => (Kind::Id, Some(other.to_string())),
    }
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek2(&self) -> &Tok {
        &self.toks[(self.pos + 1).min(self.toks.len() - 1)].tok
    }

    fn next(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err_here(&self, message: impl Into<String>) -> ParseError {
        let s = &self.toks[self.pos];
        ParseError {
            line: s.line,
            col: s.col,
            message: message.into(),
        }
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        if *self.peek() == want {
            self.next();
            Ok(())
        } else {
            Err(self.err_here(format!("expected {what}")))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.next();
                Ok(s)
            }
            _ => Err(self.err_here(format!("expected {what}"))),
        }
    }

    fn parse_file(&mut self) -> Result<Vec<EntitySpec>, ParseError> {
        let mut specs = Vec::new();
        while *self.peek() != Tok::Eof {
            specs.push(self.parse_class()?);
        }
        if specs.is_empty() {
            return Err(self.err_here("expected `class`"));
        }
        Ok(specs)
    }

    fn parse_class(&mut self) -> Result<EntitySpec, ParseError> {
        self.expect(Tok::Class, "`class`")?;
        let name = self.ident("class name")?;

        // Fields: IDENT ':' KIND ['@identity'], distinguished from a state
        // declaration by the colon.
        let mut fields = Vec::new();
        let mut identity_field = None;
        while matches!(self.peek(), Tok::Ident(_)) && *self.peek2() == Tok::Colon {
            let fname = self.ident("field name")?;
            self.expect(Tok::Colon, "`:`")?;
            let kind_name = self.ident("field kind")?;
            let (kind, entity_ref) = resolve_kind(&kind_name);
            if *self.peek() == Tok::AtIdentity {
                self.next();
                if identity_field.is_some() {
                    return Err(self.err_here("more than one @identity field"));
                }
                identity_field = Some(fname.clone());
            }
            fields.push(FieldDef {
                name: fname,
                kind,
                entity_ref,
            });
        }
        let identity_field = identity_field
            .ok_or_else(|| self.err_here(format!("class {name} has no @identity field")))?;

        let mut states = Vec::new();
        let mut actions = Vec::new();
        loop {
            let (initial, terminal) = match self.peek() {
                Tok::Initial => {
                    self.next();
                    (true, false)
                }
                Tok::Final => {
                    self.next();
                    (false, true)
                }
                Tok::Ident(_) => (false, false),
                _ => break,
            };
            let sname = self.ident("state name")?;
            states.push(StateDef {
                name: sname.clone(),
                initial,
                terminal,
            });
            while *self.peek() == Tok::On {
                actions.push(self.parse_handler(&sname, &fields)?);
            }
        }
        if states.is_empty() {
            return Err(self.err_here(format!("class {name} has no states")));
        }

        Ok(EntitySpec {
            name,
            identity_field,
            fields,
            states,
            actions,
        })
    }

    fn parse_handler(
        &mut self,
        from_state: &str,
        fields: &[FieldDef],
    ) -> Result<ActionDef, ParseError> {
        self.expect(Tok::On, "`on`")?;
        let name = self.ident("action name")?;
        self.expect(Tok::LParen, "`(`")?;
        let mut params = Vec::new();
        if *self.peek() != Tok::RParen {
            loop {
                let pname = self.ident("parameter name")?;
                self.expect(Tok::Colon, "`:`")?;
                let kind_name = self.ident("parameter kind")?;
                let (kind, entity_ref) = resolve_kind(&kind_name);
                params.push(FieldDef {
                    name: pname,
                    kind,
                    entity_ref,
                });
                if *self.peek() == Tok::Comma {
                    self.next();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        self.expect(Tok::Colon, "`:` before target state")?;
        let to_state = self.ident("target state")?;

        let names = NameScope { fields, params: &params };

        let mut guards = Vec::new();
        if *self.peek() == Tok::Pre {
            self.next();
            self.expect(Tok::Colon, "`:` after pre")?;
            loop {
                guards.push(self.parse_expr(&names)?);
                if *self.peek() == Tok::Comma {
                    self.next();
                } else {
                    break;
                }
            }
        }

        let mut effects = Vec::new();
        if *self.peek() == Tok::Post {
            self.next();
            self.expect(Tok::Colon, "`:` after post")?;
            loop {
                self.expect(Tok::This, "`this`")?;
                self.expect(Tok::Dot, "`.`")?;
                let field = self.ident("field name")?;
                self.expect(Tok::EqEq, "`==`")?;
                let rhs = self.parse_expr(&names)?;
                effects.push((field, rhs));
                if *self.peek() == Tok::Comma {
                    self.next();
                } else {
                    break;
                }
            }
        }

        let mut syncs = Vec::new();
        if *self.peek() == Tok::Sync {
            self.next();
            self.expect(Tok::Colon, "`:` after sync")?;
            // Sync calls: IDENT '.' Action '(' args ')'. A bare identifier
            // not followed by a dot starts the next state declaration.
            let mut any = false;
            while matches!(self.peek(), Tok::Ident(_)) && *self.peek2() == Tok::Dot {
                let target_name = self.ident("sync target")?;
                let target_ref = names
                    .entity_ref_of(&target_name)
                    .ok_or_else(|| {
                        self.err_here(format!(
                            "sync target `{target_name}` is not declared with an entity kind"
                        ))
                    })?;
                let target_id = names.resolve(&target_name).ok_or_else(|| {
                    self.err_here(format!("unknown sync target `{target_name}`"))
                })?;
                self.expect(Tok::Dot, "`.`")?;
                let action = self.ident("sync action name")?;
                self.expect(Tok::LParen, "`(`")?;
                let mut args = Vec::new();
                if *self.peek() != Tok::RParen {
                    loop {
                        args.push(self.parse_expr(&names)?);
                        if *self.peek() == Tok::Comma {
                            self.next();
                        } else {
                            break;
                        }
                    }
                }
                self.expect(Tok::RParen, "`)`")?;
                syncs.push(SyncTemplate {
                    target_spec: target_ref,
                    target_id,
                    action,
                    args,
                });
                any = true;
            }
            if !any {
                return Err(self.err_here("`sync:` lists no calls"));
            }
        }

        Ok(ActionDef {
            name,
            params,
            from_state: from_state.to_string(),
            to_state,
            guards,
            effects,
            syncs,
        })
    }

    fn parse_expr(&mut self, names: &NameScope<'_>) -> Result<Expr, ParseError> {
        self.parse_or(names)
    }

    fn parse_or(&mut self, names: &NameScope<'_>) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_and(names)?;
        while *self.peek() == Tok::Or {
            self.next();
            let rhs = self.parse_and(names)?;
            lhs = Expr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_and(&mut self, names: &NameScope<'_>) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_cmp(names)?;
        while *self.peek() == Tok::And {
            self.next();
            let rhs = self.parse_cmp(names)?;
            lhs = Expr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_cmp(&mut self, names: &NameScope<'_>) -> Result<Expr, ParseError> {
        let lhs = self.parse_add(names)?;
        let op = match self.peek() {
            Tok::Lt => CmpOp::Lt,
            Tok::Le => CmpOp::Le,
            Tok::EqEq => CmpOp::Eq,
            Tok::Ge => CmpOp::Ge,
            Tok::Gt => CmpOp::Gt,
            _ => return Ok(lhs),
        };
        self.next();
        let rhs = self.parse_add(names)?;
        Ok(Expr::Cmp(op, Box::new(lhs), Box::new(rhs)))
    }

    fn parse_add(&mut self, names: &NameScope<'_>) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_unary(names)?;
        loop {
            let mk: fn(Box<Expr>, Box<Expr>) -> Expr = match self.peek() {
                Tok::Plus => Expr::Add,
                Tok::Minus => Expr::Sub,
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.parse_unary(names)?;
            lhs = mk(Box::new(lhs), Box::new(rhs));
        }
    }

    fn parse_unary(&mut self, names: &NameScope<'_>) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Not {
            self.next();
            let inner = self.parse_unary(names)?;
            return Ok(Expr::Not(Box::new(inner)));
        }
        self.parse_primary(names)
    }

    fn parse_primary(&mut self, names: &NameScope<'_>) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Tok::Int(n) => {
                self.next();
                Ok(Expr::Lit(Value::Int(n)))
            }
            Tok::MoneyLit(m) => {
                self.next();
                Ok(Expr::Lit(Value::Money(m)))
            }
            Tok::True => {
                self.next();
                Ok(Expr::Lit(Value::Bool(true)))
            }
            Tok::False => {
                self.next();
                Ok(Expr::Lit(Value::Bool(false)))
            }
            Tok::LParen => {
                self.next();
                let e = self.parse_expr(names)?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::This => {
                self.next();
                self.expect(Tok::Dot, "`.`")?;
                let field = self.ident("field name")?;
                Ok(Expr::Field(field))
            }
            Tok::ScaleKw => {
                self.next();
                self.expect(Tok::LParen, "`(`")?;
                let e = self.parse_expr(names)?;
                self.expect(Tok::Comma, "`,`")?;
                let p = self.parse_int_literal()?;
                self.expect(Tok::Comma, "`,`")?;
                let q = self.parse_int_literal()?;
                self.expect(Tok::RParen, "`)`")?;
                if q <= 0 {
                    return Err(self.err_here("scale denominator must be positive"));
                }
                Ok(Expr::Scale {
                    expr: Box::new(e),
                    p,
                    q,
                })
            }
            Tok::Ident(name) => {
                self.next();
                names
                    .resolve(&name)
                    .ok_or_else(|| self.err_here(format!("unknown identifier `{name}`")))
            }
            _ => Err(self.err_here("expected expression")),
        }
    }

    fn parse_int_literal(&mut self) -> Result<i64, ParseError> {
        let negative = if *self.peek() == Tok::Minus {
            self.next();
            true
        } else {
            false
        };
        match self.peek().clone() {
            Tok::Int(n) => {
                self.next();
                Ok(if negative { -n } else { n })
            }
            _ => Err(self.err_here("expected integer literal")),
        }
    }
}

struct NameScope<'a> {
    fields: &'a [FieldDef],
    params: &'a [FieldDef],
}

impl NameScope<'_> {
    fn resolve(&self, name: &str) -> Option<Expr> {
        if self.params.iter().any(|p| p.name == name) {
            Some(Expr::Param(name.to_string()))
        } else if self.fields.iter().any(|f| f.name == name) {
            Some(Expr::Field(name.to_string()))
        } else {
            None
        }
    }

    fn entity_ref_of(&self, name: &str) -> Option<String> {
        self.params
            .iter()
            .chain(self.fields.iter())
            .find(|d| d.name == name)
            .and_then(|d| d.entity_ref.clone())
    }
}
