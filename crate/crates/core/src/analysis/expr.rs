//! Canonical symbolic dimension expressions.
//!
//! An expression is a polynomial with integer coefficients over atoms. Atoms
//! are symbols or opaque non-polynomial nodes (`floordiv`, `ceildiv`, `max`,
//! `min`) whose children are themselves canonical. Constructors always return
//! the canonical form, so structural equality is expression equality.

use std::collections::BTreeMap;
use std::fmt;

/// Interned symbol; ids are assigned in order of first appearance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SymbolId(pub u32);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Atom {
    Sym(SymbolId),
    FloorDiv(Box<SymExpr>, Box<SymExpr>),
    CeilDiv(Box<SymExpr>, Box<SymExpr>),
    Max(Vec<SymExpr>),
    Min(Vec<SymExpr>),
}

/// Monomial (sorted atoms, empty for the constant term) → nonzero coefficient.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SymExpr {
    terms: BTreeMap<Vec<Atom>, i64>,
}

fn floor_div(a: i64, b: i64) -> Option<i64> {
    let q = a.checked_div(b)?;
    if a % b != 0 && ((a < 0) != (b < 0)) {
        Some(q - 1)
    } else {
        Some(q)
    }
}

impl SymExpr {
    pub fn lit(v: i64) -> SymExpr {
        let mut terms = BTreeMap::new();
        if v != 0 {
            terms.insert(Vec::new(), v);
        }
        SymExpr { terms }
    }

    pub fn sym(id: SymbolId) -> SymExpr {
        SymExpr::atom(Atom::Sym(id))
    }

    fn atom(a: Atom) -> SymExpr {
        let mut terms = BTreeMap::new();
        terms.insert(vec![a], 1);
        SymExpr { terms }
    }

    /// The constant value, if the expression has no atoms.
    pub fn as_lit(&self) -> Option<i64> {
        match self.terms.len() {
            0 => Some(0),
            1 => self.terms.get(&Vec::new()).copied(),
            _ => None,
        }
    }

    /// The symbol, if the expression is exactly one symbol.
    pub fn as_sym(&self) -> Option<SymbolId> {
        match self.single_atom()? {
            Atom::Sym(id) => Some(*id),
            _ => None,
        }
    }

    fn single_atom(&self) -> Option<&Atom> {
        if self.terms.len() != 1 {
            return None;
        }
        let (mono, &coef) = self.terms.iter().next()?;
        (coef == 1 && mono.len() == 1).then(|| &mono[0])
    }

    pub fn add(&self, other: &SymExpr) -> Option<SymExpr> {
        let mut terms = self.terms.clone();
        for (mono, &c) in &other.terms {
            let entry = terms.entry(mono.clone()).or_insert(0);
            *entry = entry.checked_add(c)?;
            if *entry == 0 {
                terms.remove(mono);
            }
        }
        Some(SymExpr { terms })
    }

    pub fn neg(&self) -> Option<SymExpr> {
        self.scale(-1)
    }

    pub fn sub(&self, other: &SymExpr) -> Option<SymExpr> {
        self.add(&other.neg()?)
    }

    fn scale(&self, k: i64) -> Option<SymExpr> {
        if k == 0 {
            return Some(SymExpr::lit(0));
        }
        let mut terms = BTreeMap::new();
        for (mono, &c) in &self.terms {
            terms.insert(mono.clone(), c.checked_mul(k)?);
        }
        Some(SymExpr { terms })
    }

    pub fn mul(&self, other: &SymExpr) -> Option<SymExpr> {
        let mut out = SymExpr::default();
        for (ma, &ca) in &self.terms {
            for (mb, &cb) in &other.terms {
                let mut mono: Vec<Atom> = ma.iter().chain(mb.iter()).cloned().collect();
                mono.sort();
                let mut term = BTreeMap::new();
                term.insert(mono, ca.checked_mul(cb)?);
                out = out.add(&SymExpr { terms: term })?;
            }
        }
        Some(out)
    }

    /// `floor(self / d)`. `None` on division by a literal zero or overflow.
    pub fn floordiv(&self, d: &SymExpr) -> Option<SymExpr> {
        match d.as_lit() {
            Some(0) => None,
            Some(1) => Some(self.clone()),
            Some(k) if k > 0 => {
                if let Some(v) = self.as_lit() {
                    return Some(SymExpr::lit(floor_div(v, k)?));
                }
                // floor((k*P + R) / k) = P + floor(R / k) for integer P.
                let mut quotient = SymExpr::default();
                let mut rest = SymExpr::default();
                for (mono, &c) in &self.terms {
                    let q = floor_div(c, k)?;
                    let r = c - q * k;
                    if !mono.is_empty() && r != 0 {
                        // Keep non-divisible atom terms whole in the remainder.
                        rest.terms.insert(mono.clone(), c);
                        continue;
                    }
                    if q != 0 {
                        quotient.terms.insert(mono.clone(), q);
                    }
                    if r != 0 {
                        rest.terms.insert(mono.clone(), r);
                    }
                }
                if rest.terms.is_empty() {
                    return Some(quotient);
                }
                if rest.as_lit().is_some() {
                    // 0 < r < k.
                    return Some(quotient);
                }
                // floor(floor(x, a) / b) = floor(x, a*b) for positive a, b.
                let inner = match rest.single_atom() {
                    Some(Atom::FloorDiv(x, a)) => a
                        .as_lit()
                        .filter(|&a| a > 0)
                        .and_then(|a| a.checked_mul(k))
                        .and_then(|ak| x.floordiv(&SymExpr::lit(ak))),
                    _ => None,
                };
                let tail = match inner {
                    Some(e) => e,
                    None => SymExpr::atom(Atom::FloorDiv(Box::new(rest), Box::new(d.clone()))),
                };
                quotient.add(&tail)
            }
            _ => {
                if let (Some(a), Some(b)) = (self.as_lit(), d.as_lit()) {
                    return Some(SymExpr::lit(floor_div(a, b)?));
                }
                Some(SymExpr::atom(Atom::FloorDiv(Box::new(self.clone()), Box::new(d.clone()))))
            }
        }
    }

    /// `ceil(self / d)`.
    pub fn ceildiv(&self, d: &SymExpr) -> Option<SymExpr> {
        match d.as_lit() {
            Some(0) => None,
            // ceil(x / k) = -floor(-x / k)
            Some(k) if k > 0 => self.neg()?.floordiv(d)?.neg(),
            _ => Some(SymExpr::atom(Atom::CeilDiv(Box::new(self.clone()), Box::new(d.clone())))),
        }
    }

    pub fn max(items: &[SymExpr]) -> Option<SymExpr> {
        SymExpr::extremum(items, true)
    }

    pub fn min(items: &[SymExpr]) -> Option<SymExpr> {
        SymExpr::extremum(items, false)
    }

    fn extremum(items: &[SymExpr], is_max: bool) -> Option<SymExpr> {
        let mut flat: Vec<SymExpr> = Vec::new();
        let mut lit: Option<i64> = None;
        for e in items {
            let nested = match e.single_atom() {
                Some(Atom::Max(xs)) if is_max => Some(xs),
                Some(Atom::Min(xs)) if !is_max => Some(xs),
                _ => None,
            };
            for x in nested.map(|xs| xs.as_slice()).unwrap_or(std::slice::from_ref(e)) {
                match x.as_lit() {
                    Some(v) => {
                        lit = Some(match lit {
                            None => v,
                            Some(l) if is_max => l.max(v),
                            Some(l) => l.min(v),
                        })
                    }
                    None => flat.push(x.clone()),
                }
            }
        }
        flat.sort();
        flat.dedup();
        // Dimension symbols are non-negative, which settles comparisons with 0.
        if let Some(v) = lit {
            if is_max && v <= 0 && flat.iter().any(SymExpr::is_nonneg) {
                lit = None;
            }
            if !is_max && v <= 0 && !flat.is_empty() && flat.iter().all(SymExpr::is_nonneg) {
                return Some(SymExpr::lit(v));
            }
        }
        if let Some(v) = lit {
            flat.push(SymExpr::lit(v));
            flat.sort();
        }
        match flat.len() {
            0 => None,
            1 => flat.pop(),
            _ => Some(SymExpr::atom(if is_max { Atom::Max(flat) } else { Atom::Min(flat) })),
        }
    }

    /// Conservative: true only when the value is provably ≥ 0 given that
    /// every symbol is a non-negative extent.
    pub fn is_nonneg(&self) -> bool {
        self.terms
            .iter()
            .all(|(mono, &c)| c >= 0 && mono.iter().all(Atom::is_nonneg))
    }

    /// Exact division by a literal or a single monomial; `None` when the
    /// quotient is not a polynomial.
    pub fn div_exact(&self, d: &SymExpr) -> Option<SymExpr> {
        if d.terms.len() != 1 {
            return None;
        }
        let (dmono, &dc) = d.terms.iter().next()?;
        let mut out = BTreeMap::new();
        for (mono, &c) in &self.terms {
            if c % dc != 0 {
                return None;
            }
            let mut rest = mono.clone();
            for a in dmono {
                let pos = rest.iter().position(|x| x == a)?;
                rest.remove(pos);
            }
            out.insert(rest, c / dc);
        }
        Some(SymExpr { terms: out })
    }

    /// Nesting depth: 0 for literals and bare symbols.
    pub fn depth(&self) -> usize {
        if self.as_lit().is_some() {
            return 0;
        }
        if let Some(a) = self.single_atom() {
            return a.depth();
        }
        1 + self
            .terms
            .keys()
            .flat_map(|m| m.iter().map(Atom::depth))
            .max()
            .unwrap_or(0)
    }

    pub fn symbols(&self) -> Vec<SymbolId> {
        let mut out = Vec::new();
        for mono in self.terms.keys() {
            for a in mono {
                a.collect_symbols(&mut out);
            }
        }
        out.sort();
        out.dedup();
        out
    }

    /// Evaluates under a symbol assignment; `None` if a symbol is unbound,
    /// a division by zero occurs or arithmetic overflows.
    pub fn eval(&self, lookup: &dyn Fn(SymbolId) -> Option<i64>) -> Option<i64> {
        let mut total: i64 = 0;
        for (mono, &c) in &self.terms {
            let mut term = c;
            for a in mono {
                term = term.checked_mul(a.eval(lookup)?)?;
            }
            total = total.checked_add(term)?;
        }
        Some(total)
    }

    pub fn display<'a>(&'a self, names: &'a dyn Fn(SymbolId) -> String) -> impl fmt::Display + 'a {
        ExprDisplay { expr: self, names }
    }
}

impl Atom {
    fn depth(&self) -> usize {
        match self {
            Atom::Sym(_) => 0,
            Atom::FloorDiv(a, b) | Atom::CeilDiv(a, b) => 1 + a.depth().max(b.depth()),
            Atom::Max(xs) | Atom::Min(xs) => 1 + xs.iter().map(SymExpr::depth).max().unwrap_or(0),
        }
    }

    fn is_nonneg(&self) -> bool {
        match self {
            Atom::Sym(_) => true,
            Atom::FloorDiv(a, b) | Atom::CeilDiv(a, b) => a.is_nonneg() && b.as_lit().is_some_and(|k| k > 0),
            Atom::Max(xs) => xs.iter().any(SymExpr::is_nonneg),
            Atom::Min(xs) => xs.iter().all(SymExpr::is_nonneg),
        }
    }

    fn collect_symbols(&self, out: &mut Vec<SymbolId>) {
        match self {
            Atom::Sym(id) => out.push(*id),
            Atom::FloorDiv(a, b) | Atom::CeilDiv(a, b) => {
                out.extend(a.symbols());
                out.extend(b.symbols());
            }
            Atom::Max(xs) | Atom::Min(xs) => xs.iter().for_each(|x| out.extend(x.symbols())),
        }
    }

    fn eval(&self, lookup: &dyn Fn(SymbolId) -> Option<i64>) -> Option<i64> {
        match self {
            Atom::Sym(id) => lookup(*id),
            Atom::FloorDiv(a, b) => floor_div(a.eval(lookup)?, b.eval(lookup)?),
            Atom::CeilDiv(a, b) => {
                let (x, y) = (a.eval(lookup)?, b.eval(lookup)?);
                floor_div(x.checked_neg()?, y)?.checked_neg()
            }
            Atom::Max(xs) => xs.iter().map(|x| x.eval(lookup)).collect::<Option<Vec<_>>>()?.into_iter().max(),
            Atom::Min(xs) => xs.iter().map(|x| x.eval(lookup)).collect::<Option<Vec<_>>>()?.into_iter().min(),
        }
    }
}

struct ExprDisplay<'a> {
    expr: &'a SymExpr,
    names: &'a dyn Fn(SymbolId) -> String,
}

impl ExprDisplay<'_> {
    fn atom(&self, a: &Atom, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sub = |e: &SymExpr| ExprDisplay { expr: e, names: self.names }.to_string();
        match a {
            Atom::Sym(id) => f.write_str(&(self.names)(*id)),
            Atom::FloorDiv(x, y) => write!(f, "floordiv({}, {})", sub(x), sub(y)),
            Atom::CeilDiv(x, y) => write!(f, "ceildiv({}, {})", sub(x), sub(y)),
            Atom::Max(xs) | Atom::Min(xs) => {
                f.write_str(if matches!(a, Atom::Max(_)) { "max(" } else { "min(" })?;
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    f.write_str(&sub(x))?;
                }
                f.write_str(")")
            }
        }
    }
}

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.expr.terms.is_empty() {
            return f.write_str("0");
        }
        let mut first = true;
        // Atom terms first, constant last.
        let ordered = self
            .expr
            .terms
            .iter()
            .filter(|(m, _)| !m.is_empty())
            .chain(self.expr.terms.iter().filter(|(m, _)| m.is_empty()));
        for (mono, &c) in ordered {
            let mag = c.unsigned_abs();
            if c < 0 {
                f.write_str("-")?;
            } else if !first {
                f.write_str("+")?;
            }
            first = false;
            if mono.is_empty() {
                write!(f, "{mag}")?;
                continue;
            }
            if mag != 1 {
                write!(f, "{mag}*")?;
            }
            for (i, a) in mono.iter().enumerate() {
                if i > 0 {
                    f.write_str("*")?;
                }
                self.atom(a, f)?;
            }
        }
        Ok(())
    }
}

/// Parses the display form back into a canonical expression.
pub fn parse_expr(text: &str, lookup: &dyn Fn(&str) -> Option<SymbolId>) -> Result<SymExpr, String> {
    let mut p = ExprParser {
        src: text.as_bytes(),
        pos: 0,
        lookup,
    };
    let e = p.sum()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(format!("unexpected `{}` at {} in `{text}`", p.src[p.pos] as char, p.pos));
    }
    Ok(e)
}

struct ExprParser<'a> {
    src: &'a [u8],
    pos: usize,
    lookup: &'a dyn Fn(&str) -> Option<SymbolId>,
}

impl ExprParser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), String> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(format!("expected `{}` at {}", c as char, self.pos))
        }
    }

    fn overflow() -> String {
        "integer overflow".to_string()
    }

    fn sum(&mut self) -> Result<SymExpr, String> {
        let mut acc = self.product()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    let rhs = self.product()?;
                    acc = acc.add(&rhs).ok_or_else(Self::overflow)?;
                }
                Some(b'-') => {
                    self.pos += 1;
                    let rhs = self.product()?;
                    acc = acc.sub(&rhs).ok_or_else(Self::overflow)?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn product(&mut self) -> Result<SymExpr, String> {
        let mut acc = self.unary()?;
        while self.peek() == Some(b'*') {
            self.pos += 1;
            let rhs = self.unary()?;
            acc = acc.mul(&rhs).ok_or_else(Self::overflow)?;
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<SymExpr, String> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return self.unary()?.neg().ok_or_else(Self::overflow);
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<SymExpr, String> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.sum()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() => {
                let start = self.pos;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
                let s = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                s.parse::<i64>().map(SymExpr::lit).map_err(|e| e.to_string())
            }
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string();
                if self.peek() == Some(b'(') {
                    self.pos += 1;
                    let mut args = vec![self.sum()?];
                    while self.peek() == Some(b',') {
                        self.pos += 1;
                        args.push(self.sum()?);
                    }
                    self.expect(b')')?;
                    let two = |args: &[SymExpr]| -> Result<(), String> {
                        if args.len() == 2 {
                            Ok(())
                        } else {
                            Err(format!("{name} takes 2 arguments"))
                        }
                    };
                    let r = match name.as_str() {
                        "floordiv" => {
                            two(&args)?;
                            args[0].floordiv(&args[1])
                        }
                        "ceildiv" => {
                            two(&args)?;
                            args[0].ceildiv(&args[1])
                        }
                        "max" => SymExpr::max(&args),
                        "min" => SymExpr::min(&args),
                        other => return Err(format!("unknown function `{other}`")),
                    };
                    r.ok_or_else(|| format!("cannot evaluate {name}"))
                } else {
                    (self.lookup)(&name)
                        .map(SymExpr::sym)
                        .ok_or_else(|| format!("unknown symbol `{name}`"))
                }
            }
            other => Err(format!(
                "unexpected {} at {}",
                other.map(|c| format!("`{}`", c as char)).unwrap_or_else(|| "end of input".into()),
                self.pos
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const H: SymbolId = SymbolId(0);
    const W: SymbolId = SymbolId(1);

    fn h() -> SymExpr {
        SymExpr::sym(H)
    }
    fn w() -> SymExpr {
        SymExpr::sym(W)
    }
    fn lit(v: i64) -> SymExpr {
        SymExpr::lit(v)
    }
    fn names(id: SymbolId) -> String {
        ["H", "W", "C"][id.0 as usize].to_string()
    }
    fn lookup(name: &str) -> Option<SymbolId> {
        ["H", "W", "C"].iter().position(|n| *n == name).map(|i| SymbolId(i as u32))
    }
    fn show(e: &SymExpr) -> String {
        e.display(&names).to_string()
    }

    #[test]
    fn conv_same_padding_simplifies() {
        // floordiv(H + 1 + 1 - 3, 1) + 1
        let e = h().add(&lit(2)).unwrap().sub(&lit(3)).unwrap();
        let e = e.floordiv(&lit(1)).unwrap().add(&lit(1)).unwrap();
        assert_eq!(e, h());
        assert_eq!(e.as_sym(), Some(H));
    }

    #[test]
    fn strided_conv_stays_symbolic() {
        let e = h().sub(&lit(1)).unwrap().floordiv(&lit(2)).unwrap().add(&lit(1)).unwrap();
        // The constant is folded into the numerator's [0, 2) remainder.
        assert_eq!(show(&e), "floordiv(H+1, 2)");
        assert_eq!(e.eval(&|_| Some(7)), Some(4));
        let f = h().floordiv(&lit(2)).unwrap().add(&lit(1)).unwrap();
        assert_eq!(show(&f), "floordiv(H, 2)+1");
    }

    #[test]
    fn floordiv_extracts_multiples() {
        let e = h().mul(&lit(4)).unwrap().add(&lit(6)).unwrap().floordiv(&lit(2)).unwrap();
        assert_eq!(e, h().mul(&lit(2)).unwrap().add(&lit(3)).unwrap());
        let nested = h().floordiv(&lit(2)).unwrap().floordiv(&lit(3)).unwrap();
        assert_eq!(nested, h().floordiv(&lit(6)).unwrap());
    }

    #[test]
    fn like_terms_combine() {
        let e = h().add(&h()).unwrap();
        assert_eq!(e, h().mul(&lit(2)).unwrap());
        assert_eq!(show(&e), "2*H");
        assert_eq!(h().sub(&h()).unwrap(), lit(0));
    }

    #[test]
    fn max_rules() {
        assert_eq!(SymExpr::max(&[h(), lit(0)]).unwrap(), h());
        assert_eq!(SymExpr::min(&[h(), lit(0)]).unwrap(), lit(0));
        assert_eq!(SymExpr::max(&[lit(3), lit(5)]).unwrap(), lit(5));
        assert_eq!(SymExpr::max(&[w(), h()]).unwrap(), SymExpr::max(&[h(), w(), h()]).unwrap());
    }

    #[test]
    fn exact_division() {
        let hw = h().mul(&w()).unwrap().mul(&lit(3)).unwrap();
        assert_eq!(hw.div_exact(&lit(3)).unwrap(), h().mul(&w()).unwrap());
        assert_eq!(hw.div_exact(&h()).unwrap(), w().mul(&lit(3)).unwrap());
        assert_eq!(hw.div_exact(&lit(2)), None);
    }

    #[test]
    fn depth_counts_nesting() {
        assert_eq!(lit(4).depth(), 0);
        assert_eq!(h().depth(), 0);
        assert_eq!(h().add(&lit(2)).unwrap().depth(), 1);
        let e = h().add(&lit(1)).unwrap().floordiv(&lit(2)).unwrap();
        assert_eq!(e.depth(), 2);
        assert_eq!(e.add(&lit(1)).unwrap().depth(), 3);
    }

    #[test]
    fn parse_display_examples() {
        for text in ["H+2", "2*H*W-1", "floordiv(H+1, 2)", "floordiv(H, 2)+1", "max(H, W)", "-H+3", "0"] {
            let e = parse_expr(text, &lookup).unwrap();
            assert_eq!(show(&e), text);
        }
        assert!(parse_expr("H +", &lookup).is_err());
        assert!(parse_expr("Q", &lookup).is_err());
    }

    fn arb_expr() -> impl Strategy<Value = SymExpr> {
        let leaf = prop_oneof![
            (-6i64..12).prop_map(SymExpr::lit),
            (0u32..3).prop_map(|i| SymExpr::sym(SymbolId(i))),
        ];
        leaf.prop_recursive(4, 24, 3, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| a.add(&b).unwrap()),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| a.sub(&b).unwrap()),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| a.mul(&b).unwrap()),
                (inner.clone(), 1i64..5).prop_map(|(a, k)| a.floordiv(&SymExpr::lit(k)).unwrap()),
                (inner.clone(), 1i64..5).prop_map(|(a, k)| a.ceildiv(&SymExpr::lit(k)).unwrap()),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| SymExpr::max(&[a, b]).unwrap()),
                (inner.clone(), inner).prop_map(|(a, b)| SymExpr::min(&[a, b]).unwrap()),
            ]
        })
    }

    proptest! {
        #[test]
        fn display_parse_round_trip(e in arb_expr()) {
            let text = show(&e);
            let back = parse_expr(&text, &lookup).unwrap();
            prop_assert_eq!(back, e);
        }

        #[test]
        fn canonical_ops_agree_with_integers(a in arb_expr(), b in arb_expr(),
                                             hv in 0i64..20, wv in 0i64..20, cv in 0i64..20) {
            let env = move |id: SymbolId| Some([hv, wv, cv][id.0 as usize]);
            let (x, y) = (a.eval(&env).unwrap(), b.eval(&env).unwrap());
            prop_assert_eq!(a.add(&b).unwrap().eval(&env), Some(x + y));
            prop_assert_eq!(a.mul(&b).unwrap().eval(&env), Some(x * y));
            prop_assert_eq!(a.floordiv(&SymExpr::lit(3)).unwrap().eval(&env), Some(x.div_euclid(3)));
            prop_assert_eq!(a.ceildiv(&SymExpr::lit(2)).unwrap().eval(&env), Some(-((-x).div_euclid(2))));
            prop_assert_eq!(SymExpr::max(&[a.clone(), b.clone()]).unwrap().eval(&env), Some(x.max(y)));
        }
    }
}
