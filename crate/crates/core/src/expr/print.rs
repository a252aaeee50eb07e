//! Canonical text form. The output re-parses to a tree that evaluates
//! bit-for-bit like the original.

use super::Expr;
use std::borrow::Cow;
use std::fmt::{self, Write};

const SUM: u8 = 1;
const PRODUCT: u8 = 2;
const UNARY: u8 = 3;
const POWER: u8 = 4;
const ATOM: u8 = 5;

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Const(c) if c.is_sign_negative() && *c != 0.0 => UNARY,
        Expr::Const(_) | Expr::Var(_) | Expr::Call(..) => ATOM,
        Expr::Sum(ch) | Expr::Product(ch) if ch.is_empty() => ATOM,
        Expr::Sum(ch) | Expr::Product(ch) if ch.len() == 1 => precedence(&ch[0]),
        Expr::Sum(_) => SUM,
        Expr::Product(_) | Expr::Quotient(..) => PRODUCT,
        Expr::Neg(_) => UNARY,
        Expr::Pow(..) => POWER,
    }
}

fn write_number(out: &mut impl Write, c: f64) -> fmt::Result {
    if c.fract() == 0.0 && c.abs() < 1e15 {
        write!(out, "{}", c as i64)
    } else {
        write!(out, "{c:?}")
    }
}

/// Writes `e`, parenthesised when its precedence is below `min`.
fn write_child(out: &mut impl Write, e: &Expr, min: u8) -> fmt::Result {
    if precedence(e) < min {
        out.write_char('(')?;
        write_expr(out, e)?;
        out.write_char(')')
    } else {
        write_expr(out, e)
    }
}

/// For a sum term printed after ` - `, the term with its leading sign removed.
fn negated_view(e: &Expr) -> Option<Cow<'_, Expr>> {
    match e {
        Expr::Neg(inner) => Some(Cow::Borrowed(inner)),
        Expr::Const(c) if c.is_sign_negative() && *c != 0.0 => Some(Cow::Owned(Expr::Const(-c))),
        Expr::Product(f) if f.len() > 1 => match f[0] {
            Expr::Const(c) if c.is_sign_negative() && c != 0.0 => {
                let mut g = f.clone();
                g[0] = Expr::Const(-c);
                Some(Cow::Owned(Expr::Product(g)))
            }
            _ => None,
        },
        _ => None,
    }
}

fn write_expr(out: &mut impl Write, e: &Expr) -> fmt::Result {
    match e {
        Expr::Const(c) => {
            if c.is_sign_negative() && *c != 0.0 {
                out.write_char('-')?;
                write_number(out, -c)
            } else {
                write_number(out, c.abs())
            }
        }
        Expr::Var(v) => write!(out, "{v}"),
        Expr::Sum(terms) if terms.is_empty() => out.write_char('0'),
        Expr::Product(factors) if factors.is_empty() => out.write_char('1'),
        Expr::Sum(terms) => {
            for (i, t) in terms.iter().enumerate() {
                if i == 0 {
                    write_child(out, t, PRODUCT)?;
                } else if let Some(view) = negated_view(t) {
                    out.write_str(" - ")?;
                    write_child(out, &view, PRODUCT)?;
                } else {
                    out.write_str(" + ")?;
                    write_child(out, t, PRODUCT)?;
                }
            }
            Ok(())
        }
        Expr::Product(factors) => {
            for (i, t) in factors.iter().enumerate() {
                if i > 0 {
                    out.write_char('*')?;
                }
                write_child(out, t, UNARY)?;
            }
            Ok(())
        }
        Expr::Quotient(a, b) => {
            write_child(out, a, PRODUCT)?;
            out.write_char('/')?;
            write_child(out, b, UNARY)
        }
        Expr::Neg(a) => {
            out.write_char('-')?;
            write_child(out, a, UNARY)
        }
        Expr::Pow(a, k) => {
            write_child(out, a, ATOM)?;
            write!(out, "^{k}")
        }
        Expr::Call(f, a) => {
            write!(out, "{}(", f.name())?;
            write_expr(out, a)?;
            out.write_char(')')
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(f, self)
    }
}

#[cfg(test)]
mod tests {
    use crate::expr::{parse_expr, VarContext};

    #[test]
    fn canonical_forms() {
        let ctx = VarContext::new(2, 1);
        for (src, want) in [
            ("x1^3/3 - x1", "x1^3/3 - x1"),
            ("4*tanh(x1)", "4*tanh(x1)"),
            ("-x1 - y1", "-x1 - y1"),
            ("x1*(x2/3)", "x1*(x2/3)"),
            ("(x1 + x2)^2", "(x1 + x2)^2"),
            ("(-x1)^2", "(-x1)^2"),
            ("x1 - (x2 - y1)", "x1 - (x2 - y1)"),
            ("x1/(x2*y1)", "x1/(x2*y1)"),
            ("0.25*x1", "0.25*x1"),
            ("x1^-2", "x1^-2"),
        ] {
            let e = parse_expr(src, ctx).unwrap();
            assert_eq!(e.to_string(), want, "{src}");
        }
    }

    #[test]
    fn folded_negative_coefficient_prints_as_subtraction() {
        use crate::expr::{Expr, Var};
        let e = Expr::sum(vec![Expr::var(Var::slow(1)), Expr::scale(-2.0, Expr::var(Var::slow(0)))]);
        assert_eq!(e.to_string(), "x2 - 2*x1");
        assert_eq!(Expr::scale(-2.0, Expr::var(Var::slow(0))).to_string(), "-2*x1");
        assert_eq!(Expr::Const(1e-7).to_string(), "1e-7");
    }
}
