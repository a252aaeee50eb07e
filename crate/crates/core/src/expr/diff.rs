use super::{Expr, Func, Var};

impl Expr {
    /// Exact symbolic derivative with respect to `v`. The result is folded
    /// but otherwise unsimplified.
    pub fn differentiate(&self, v: Var) -> Expr {
        match self {
            Expr::Const(_) => Expr::ZERO,
            Expr::Var(w) => {
                if *w == v {
                    Expr::ONE
                } else {
                    Expr::ZERO
                }
            }
            Expr::Sum(terms) => Expr::sum(terms.iter().map(|t| t.differentiate(v)).collect()),
            Expr::Product(factors) => {
                let mut terms = Vec::with_capacity(factors.len());
                for (i, fi) in factors.iter().enumerate() {
                    let d = fi.differentiate(v);
                    if d.is_zero() {
                        continue;
                    }
                    let mut parts = factors.clone();
                    parts[i] = d;
                    terms.push(Expr::product(parts));
                }
                Expr::sum(terms)
            }
            Expr::Quotient(a, b) => {
                let da = a.differentiate(v);
                let db = b.differentiate(v);
                if db.is_zero() {
                    return Expr::div(da, (**b).clone());
                }
                let num = Expr::sub(
                    Expr::mul(da, (**b).clone()),
                    Expr::mul((**a).clone(), db),
                );
                Expr::div(num, Expr::powi((**b).clone(), 2))
            }
            Expr::Pow(a, k) => {
                let da = a.differentiate(v);
                if *k == 0 || da.is_zero() {
                    return Expr::ZERO;
                }
                Expr::product(vec![Expr::Const(*k as f64), Expr::powi((**a).clone(), k - 1), da])
            }
            Expr::Neg(a) => Expr::neg(a.differentiate(v)),
            Expr::Call(f, a) => {
                let da = a.differentiate(v);
                if da.is_zero() {
                    return Expr::ZERO;
                }
                let inner = (**a).clone();
                let outer = match f {
                    Func::Tanh => Expr::sub(Expr::ONE, Expr::powi(Expr::call(Func::Tanh, inner), 2)),
                    Func::Exp => Expr::call(Func::Exp, inner),
                    Func::Sin => Expr::call(Func::Cos, inner),
                    Func::Cos => Expr::neg(Expr::call(Func::Sin, inner)),
                    Func::Ln => Expr::div(Expr::ONE, inner),
                    Func::Sqrt => Expr::div(Expr::ONE, Expr::scale(2.0, Expr::call(Func::Sqrt, inner))),
                };
                Expr::mul(outer, da)
            }
        }
    }
}
