//! Lattice values for dimensions, shapes and small integer tensor values.
//!
//! `Undef` is the top element, `Nac` (not-a-constant) the bottom. Known
//! constants, symbols and inferred expressions sit between them and are
//! mutually incomparable: joining two different ones gives `Nac`.

use super::expr::{SymExpr, SymbolId};

/// Expressions nested deeper than this widen to `Nac`.
pub const MAX_EXPR_DEPTH: usize = 8;
/// Integer tensors with more elements than this get `Nac` value info.
pub const MAX_TRACKED_ELEMS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum DimLattice {
    Undef,
    Known(i64),
    Sym(SymbolId),
    Expr(SymExpr),
    Nac,
}

impl DimLattice {
    /// Canonical lattice point for an expression.
    pub fn from_expr(e: SymExpr) -> DimLattice {
        if let Some(v) = e.as_lit() {
            DimLattice::Known(v)
        } else if let Some(s) = e.as_sym() {
            DimLattice::Sym(s)
        } else if e.depth() > MAX_EXPR_DEPTH {
            DimLattice::Nac
        } else {
            DimLattice::Expr(e)
        }
    }

    pub fn from_opt(e: Option<SymExpr>) -> DimLattice {
        e.map_or(DimLattice::Nac, DimLattice::from_expr)
    }

    pub fn to_expr(&self) -> Option<SymExpr> {
        match self {
            DimLattice::Known(v) => Some(SymExpr::lit(*v)),
            DimLattice::Sym(s) => Some(SymExpr::sym(*s)),
            DimLattice::Expr(e) => Some(e.clone()),
            DimLattice::Undef | DimLattice::Nac => None,
        }
    }

    pub fn known(&self) -> Option<i64> {
        match self {
            DimLattice::Known(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_undef(&self) -> bool {
        matches!(self, DimLattice::Undef)
    }

    pub fn is_nac(&self) -> bool {
        matches!(self, DimLattice::Nac)
    }

    /// Known, symbolic or inferred: a compile-time description exists.
    pub fn is_constant(&self) -> bool {
        !self.is_undef() && !self.is_nac()
    }

    /// Least upper bound toward `Nac`.
    pub fn join(&self, other: &DimLattice) -> DimLattice {
        join_dim(self, other)
    }

    /// Evaluates under a symbol assignment (`None` for Undef/Nac or unbound
    /// symbols).
    pub fn eval(&self, lookup: &dyn Fn(SymbolId) -> Option<i64>) -> Option<i64> {
        self.to_expr()?.eval(lookup)
    }

    /// Whether a concrete value is in this point's concretization.
    pub fn admits(&self, actual: i64, lookup: &dyn Fn(SymbolId) -> Option<i64>) -> bool {
        match self {
            DimLattice::Nac => true,
            DimLattice::Undef => false,
            other => other.eval(lookup) == Some(actual),
        }
    }
}

/// Join of two dimension lattice values.
pub fn join_dim(a: &DimLattice, b: &DimLattice) -> DimLattice {
    match (a, b) {
        (DimLattice::Undef, x) | (x, DimLattice::Undef) => x.clone(),
        (DimLattice::Nac, _) | (_, DimLattice::Nac) => DimLattice::Nac,
        (x, y) if x == y => x.clone(),
        _ => DimLattice::Nac,
    }
}

fn join_lists(a: &[DimLattice], b: &[DimLattice]) -> Option<Vec<DimLattice>> {
    (a.len() == b.len()).then(|| a.iter().zip(b).map(|(x, y)| join_dim(x, y)).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ShapeInfo {
    Undef,
    Ranked(Vec<DimLattice>),
    Nac,
}

impl ShapeInfo {
    pub fn known(dims: &[i64]) -> ShapeInfo {
        ShapeInfo::Ranked(dims.iter().map(|&d| DimLattice::Known(d)).collect())
    }

    pub fn dims(&self) -> Option<&[DimLattice]> {
        match self {
            ShapeInfo::Ranked(d) => Some(d),
            _ => None,
        }
    }

    pub fn rank(&self) -> Option<usize> {
        self.dims().map(<[_]>::len)
    }

    pub fn join(&self, other: &ShapeInfo) -> ShapeInfo {
        match (self, other) {
            (ShapeInfo::Undef, x) | (x, ShapeInfo::Undef) => x.clone(),
            (ShapeInfo::Nac, _) | (_, ShapeInfo::Nac) => ShapeInfo::Nac,
            (ShapeInfo::Ranked(a), ShapeInfo::Ranked(b)) => {
                join_lists(a, b).map_or(ShapeInfo::Nac, ShapeInfo::Ranked)
            }
        }
    }

    /// Every dim is Known, Sym or Expr.
    pub fn is_fully_constant(&self) -> bool {
        self.dims().is_some_and(|d| d.iter().all(DimLattice::is_constant))
    }

    /// Concrete dims, if all of them evaluate under `lookup`.
    pub fn eval(&self, lookup: &dyn Fn(SymbolId) -> Option<i64>) -> Option<Vec<i64>> {
        self.dims()?.iter().map(|d| d.eval(lookup)).collect()
    }

    /// Whether concrete dims are in this shape's concretization.
    pub fn admits(&self, actual: &[usize], lookup: &dyn Fn(SymbolId) -> Option<i64>) -> bool {
        match self {
            ShapeInfo::Nac => true,
            ShapeInfo::Undef => false,
            ShapeInfo::Ranked(dims) => {
                dims.len() == actual.len()
                    && dims.iter().zip(actual).all(|(d, &a)| d.admits(a as i64, lookup))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ValueInfo {
    Undef,
    Elems(Vec<DimLattice>),
    Nac,
}

impl ValueInfo {
    pub fn elems(&self) -> Option<&[DimLattice]> {
        match self {
            ValueInfo::Elems(e) => Some(e),
            _ => None,
        }
    }

    pub fn join(&self, other: &ValueInfo) -> ValueInfo {
        match (self, other) {
            (ValueInfo::Undef, x) | (x, ValueInfo::Undef) => x.clone(),
            (ValueInfo::Nac, _) | (_, ValueInfo::Nac) => ValueInfo::Nac,
            (ValueInfo::Elems(a), ValueInfo::Elems(b)) => {
                join_lists(a, b).map_or(ValueInfo::Nac, ValueInfo::Elems)
            }
        }
    }

    pub fn admits(&self, actual: &[i64], lookup: &dyn Fn(SymbolId) -> Option<i64>) -> bool {
        match self {
            ValueInfo::Nac => true,
            ValueInfo::Undef => false,
            ValueInfo::Elems(e) => {
                e.len() == actual.len() && e.iter().zip(actual).all(|(d, &a)| d.admits(a, lookup))
            }
        }
    }
}

/// Shape and value facts for one tensor.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TensorInfo {
    pub shape: ShapeInfo,
    pub value: ValueInfo,
}

impl TensorInfo {
    pub const UNDEF: TensorInfo = TensorInfo {
        shape: ShapeInfo::Undef,
        value: ValueInfo::Undef,
    };
    pub const NAC: TensorInfo = TensorInfo {
        shape: ShapeInfo::Nac,
        value: ValueInfo::Nac,
    };

    pub fn shape_only(shape: ShapeInfo) -> TensorInfo {
        TensorInfo {
            shape,
            value: ValueInfo::Nac,
        }
    }

    pub fn join(&self, other: &TensorInfo) -> TensorInfo {
        TensorInfo {
            shape: self.shape.join(&other.shape),
            value: self.value.join(&other.value),
        }
    }

    /// `self` lies at or below `other` (closer to `Nac`).
    pub fn is_below(&self, other: &TensorInfo) -> bool {
        &self.join(other) == self
    }
}

/// Join of per-branch results for the same logical outputs.
pub fn merge(branches: &[Vec<TensorInfo>]) -> Vec<TensorInfo> {
    let Some(first) = branches.first() else {
        return Vec::new();
    };
    let mut out = first.clone();
    for b in &branches[1..] {
        for (acc, x) in out.iter_mut().zip(b) {
            *acc = acc.join(x);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    use DimLattice::*;

    fn ranked(dims: &[DimLattice]) -> TensorInfo {
        TensorInfo::shape_only(ShapeInfo::Ranked(dims.to_vec()))
    }

    #[test]
    fn join_examples() {
        assert_eq!(join_dim(&Known(64), &Known(64)), Known(64));
        assert_eq!(join_dim(&Known(64), &Known(32)), Nac);
        assert_eq!(join_dim(&Undef, &Sym(SymbolId(0))), Sym(SymbolId(0)));
        assert_eq!(join_dim(&Nac, &Undef), Nac);
    }

    #[test]
    fn merge_examples() {
        let a = ranked(&[Known(1), Known(3), Known(64), Known(64)]);
        let b = ranked(&[Known(1), Known(3), Known(32), Known(32)]);
        assert_eq!(merge(&[vec![a.clone()], vec![a.clone()]]), vec![a.clone()]);
        assert_eq!(
            merge(&[vec![a.clone()], vec![b]])[0].shape,
            ShapeInfo::Ranked(vec![Known(1), Known(3), Nac, Nac])
        );
        let r2 = ranked(&[Known(1), Known(3)]);
        assert_eq!(merge(&[vec![a.clone()], vec![r2]])[0].shape, ShapeInfo::Nac);
        // Unreached branches are identities.
        assert_eq!(merge(&[vec![TensorInfo::UNDEF], vec![a.clone()]]), vec![a]);
    }

    #[test]
    fn deep_expressions_widen() {
        let mut e = SymExpr::sym(SymbolId(0));
        for _ in 0..MAX_EXPR_DEPTH + 1 {
            e = SymExpr::max(&[e, SymExpr::sym(SymbolId(1))]).unwrap();
            e = e.floordiv(&SymExpr::sym(SymbolId(2))).unwrap();
        }
        assert_eq!(DimLattice::from_expr(e), Nac);
    }

    pub(crate) fn arb_dim() -> impl Strategy<Value = DimLattice> {
        prop_oneof![
            Just(Undef),
            Just(Nac),
            (0i64..4).prop_map(Known),
            (0u32..3).prop_map(|i| Sym(SymbolId(i))),
            (0u32..2, 1i64..3).prop_map(|(i, k)| DimLattice::from_expr(
                SymExpr::sym(SymbolId(i)).add(&SymExpr::lit(k)).unwrap()
            )),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(4000))]

        #[test]
        fn join_is_idempotent(a in arb_dim()) {
            prop_assert_eq!(join_dim(&a, &a), a);
        }

        #[test]
        fn join_is_commutative(a in arb_dim(), b in arb_dim()) {
            prop_assert_eq!(join_dim(&a, &b), join_dim(&b, &a));
        }

        #[test]
        fn join_is_associative(a in arb_dim(), b in arb_dim(), c in arb_dim()) {
            prop_assert_eq!(join_dim(&join_dim(&a, &b), &c), join_dim(&a, &join_dim(&b, &c)));
        }

        #[test]
        fn shape_join_is_lattice(a in proptest::collection::vec(arb_dim(), 0..3),
                                 b in proptest::collection::vec(arb_dim(), 0..3)) {
            let (sa, sb) = (ShapeInfo::Ranked(a), ShapeInfo::Ranked(b));
            let j = sa.join(&sb);
            prop_assert_eq!(&j, &sb.join(&sa));
            prop_assert_eq!(j.join(&sa), j.clone());
        }
    }
}
