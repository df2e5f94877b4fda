//! Exact rational expression evaluator: integers, `+ - * /`, unary minus,
//! parentheses, standard precedence. No floating point anywhere, so results
//! never depend on formatting.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CalcError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("division by zero")]
    DivisionByZero,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Int(BigInt),
    Plus,
    Minus,
    Star,
    Slash,
    Open,
    Close,
}

fn lex(input: &str) -> Result<Vec<Token>, CalcError> {
    let mut tokens = Vec::new();
    let bytes = input.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' => i += 1,
            '+' => {
                tokens.push(Token::Plus);
                i += 1;
            }
            '-' => {
                tokens.push(Token::Minus);
                i += 1;
            }
            '*' => {
                tokens.push(Token::Star);
                i += 1;
            }
            '/' => {
                tokens.push(Token::Slash);
                i += 1;
            }
            '(' => {
                tokens.push(Token::Open);
                i += 1;
            }
            ')' => {
                tokens.push(Token::Close);
                i += 1;
            }
            '0'..='9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let text = &input[start..i];
                let n = text
                    .parse::<BigInt>()
                    .map_err(|_| CalcError::Syntax(format!("bad integer: {text}")))?;
                tokens.push(Token::Int(n));
            }
            other => return Err(CalcError::Syntax(format!("unexpected character: {other}"))),
        }
    }
    Ok(tokens)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<&Token> {
        let t = self.tokens.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<BigRational, CalcError> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.pos += 1;
                    acc += self.term()?;
                }
                Some(Token::Minus) => {
                    self.pos += 1;
                    acc -= self.term()?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<BigRational, CalcError> {
        let mut acc = self.factor()?;
        loop {
            match self.peek() {
                Some(Token::Star) => {
                    self.pos += 1;
                    acc *= self.factor()?;
                }
                Some(Token::Slash) => {
                    self.pos += 1;
                    let rhs = self.factor()?;
                    if rhs.is_zero() {
                        return Err(CalcError::DivisionByZero);
                    }
                    acc /= rhs;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<BigRational, CalcError> {
        match self.next() {
            Some(Token::Minus) => Ok(-self.factor()?),
            Some(Token::Int(n)) => Ok(BigRational::from_integer(n.clone())),
            Some(Token::Open) => {
                let inner = self.expr()?;
                match self.next() {
                    Some(Token::Close) => Ok(inner),
                    _ => Err(CalcError::Syntax("missing closing parenthesis".into())),
                }
            }
            Some(t) => Err(CalcError::Syntax(format!("unexpected token: {t:?}"))),
            None => Err(CalcError::Syntax("unexpected end of expression".into())),
        }
    }
}

/// Renders a rational: integers plainly, everything else as `p/q` in lowest
/// terms.
pub fn render_rational(v: &BigRational) -> String {
    if v.denom().is_one() {
        v.numer().to_string()
    } else {
        format!("{}/{}", v.numer(), v.denom())
    }
}

/// Evaluates an arithmetic expression exactly.
pub fn eval_expr(input: &str) -> Result<String, CalcError> {
    Ok(render_rational(&eval_rational(input)?))
}

/// Evaluates to the rational value itself (used where callers compare
/// values rather than text).
pub fn eval_rational(input: &str) -> Result<BigRational, CalcError> {
    let tokens = lex(input)?;
    if tokens.is_empty() {
        return Err(CalcError::Syntax("empty expression".into()));
    }
    let mut p = Parser { tokens: &tokens, pos: 0 };
    let v = p.expr()?;
    if p.pos != tokens.len() {
        return Err(CalcError::Syntax("trailing tokens after expression".into()));
    }
    Ok(v)
}
