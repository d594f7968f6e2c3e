//! Normal separable bases `Ψ(x, u) = [H(x); G(u) H(x)]`.
//!
//! A [`NormalBasis`] pairs a state dictionary `H` with an input factor `G`.
//! The top `n_H` entries of `Ψ` are always `H(x)` itself; the remaining
//! `n_Ψ - n_H` entries are `G(u) H(x)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{KcfError, Result};
use crate::learning::mlp::Mlp;
use crate::linalg::row_major;

/// Tolerance on `‖R₁₂‖_F / ‖R‖_F` for a change of normal basis.
pub const R12_TOLERANCE: f64 = 1e-9;

/// Closed-form scalar function of a vector argument.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Expr {
    Coord {
        index: usize,
    },
    Const {
        value: f64,
    },
    /// `Π x_i^{powers[i]}`.
    Monomial {
        powers: Vec<u32>,
    },
    Product {
        factors: Vec<Expr>,
    },
}

impl Expr {
    pub fn coord(index: usize) -> Self {
        Expr::Coord { index }
    }

    pub fn constant(value: f64) -> Self {
        Expr::Const { value }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Coord { index } => x[*index],
            Expr::Const { value } => *value,
            Expr::Monomial { powers } => powers
                .iter()
                .zip(x)
                .map(|(&p, &v)| v.powi(p as i32))
                .product(),
            Expr::Product { factors } => factors.iter().map(|f| f.eval(x)).product(),
        }
    }

    /// Width of the argument the expression reads.
    fn arity(&self) -> usize {
        match self {
            Expr::Coord { index } => index + 1,
            Expr::Const { .. } => 0,
            Expr::Monomial { powers } => powers.len(),
            Expr::Product { factors } => factors.iter().map(Expr::arity).max().unwrap_or(0),
        }
    }

    fn is_constant(&self) -> bool {
        match self {
            Expr::Coord { .. } => false,
            Expr::Const { .. } => true,
            Expr::Monomial { powers } => powers.iter().all(|&p| p == 0),
            Expr::Product { factors } => factors.iter().all(Expr::is_constant),
        }
    }

    /// Coordinate index when the expression is exactly `x_i`.
    fn as_coord(&self) -> Option<usize> {
        match self {
            Expr::Coord { index } => Some(*index),
            Expr::Monomial { powers } if powers.iter().sum::<u32>() == 1 => {
                powers.iter().position(|&p| p == 1)
            }
            _ => None,
        }
    }
}

/// All exponent vectors of `n` variables with total degree in `1..=degree`,
/// graded by degree, lexicographic (descending on the first variable) within a degree.
pub fn monomial_exponents(n: usize, degree: u32) -> Vec<Vec<u32>> {
    fn rec(n: usize, remaining: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() + 1 == n {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for p in (0..=remaining).rev() {
            prefix.push(p);
            rec(n, remaining - p, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    for d in 1..=degree {
        rec(n, d, &mut Vec::new(), &mut out);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DictionaryKind {
    Analytic,
    Polynomial,
    Neural,
}

/// State dictionary `H: ℝⁿ → ℝ^{n_H}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StateDictionary {
    Expressions {
        n: usize,
        functions: Vec<Expr>,
    },
    /// All monomials of total degree `1..=degree` (no constant).
    Polynomial {
        n: usize,
        degree: u32,
    },
    /// `[x[pinned[0]], …, x[pinned[k-1]], net(x)]`.
    Neural {
        n: usize,
        pinned: Vec<usize>,
        net: Mlp,
    },
    /// `[inner(x); 1]`.
    WithConstant {
        inner: Box<StateDictionary>,
    },
    /// `matrix · inner(x)`.
    Transformed {
        #[serde(with = "row_major")]
        matrix: DMatrix<f64>,
        inner: Box<StateDictionary>,
    },
}

impl StateDictionary {
    pub fn coordinates(n: usize) -> Self {
        StateDictionary::Expressions {
            n,
            functions: (0..n).map(Expr::coord).collect(),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            StateDictionary::Expressions { n, .. }
            | StateDictionary::Polynomial { n, .. }
            | StateDictionary::Neural { n, .. } => *n,
            StateDictionary::WithConstant { inner }
            | StateDictionary::Transformed { inner, .. } => inner.n(),
        }
    }

    pub fn n_h(&self) -> usize {
        match self {
            StateDictionary::Expressions { functions, .. } => functions.len(),
            StateDictionary::Polynomial { n, degree } => monomial_exponents(*n, *degree).len(),
            StateDictionary::Neural { pinned, net, .. } => pinned.len() + net.output_dim(),
            StateDictionary::WithConstant { inner } => inner.n_h() + 1,
            StateDictionary::Transformed { matrix, .. } => matrix.nrows(),
        }
    }

    pub fn kind(&self) -> DictionaryKind {
        match self {
            StateDictionary::Expressions { .. } => DictionaryKind::Analytic,
            StateDictionary::Polynomial { .. } => DictionaryKind::Polynomial,
            StateDictionary::Neural { .. } => DictionaryKind::Neural,
            StateDictionary::WithConstant { inner }
            | StateDictionary::Transformed { inner, .. } => inner.kind(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            StateDictionary::Expressions { n, functions } => {
                if functions.is_empty() {
                    return Err(KcfError::invalid("state dictionary", "no functions"));
                }
                if let Some(e) = functions.iter().find(|e| e.arity() > *n) {
                    return Err(KcfError::invalid(
                        "state dictionary",
                        format!("expression {e:?} reads beyond state dimension {n}"),
                    ));
                }
                Ok(())
            }
            StateDictionary::Polynomial { n, degree } => {
                if *n == 0 || *degree == 0 {
                    return Err(KcfError::invalid(
                        "state dictionary",
                        "empty polynomial family",
                    ));
                }
                Ok(())
            }
            StateDictionary::Neural { n, pinned, net } => {
                net.validate()?;
                if net.input_dim() != *n {
                    return Err(KcfError::dim(
                        "neural state dictionary input",
                        *n,
                        net.input_dim(),
                    ));
                }
                if let Some(p) = pinned.iter().find(|&&p| p >= *n) {
                    return Err(KcfError::invalid(
                        "state dictionary",
                        format!("pinned coordinate {p} out of range"),
                    ));
                }
                Ok(())
            }
            StateDictionary::WithConstant { inner } => inner.validate(),
            StateDictionary::Transformed { matrix, inner } => {
                inner.validate()?;
                if matrix.ncols() != inner.n_h() {
                    return Err(KcfError::dim(
                        "state transform",
                        inner.n_h(),
                        matrix.ncols(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Whether a slot of the dictionary is a declared constant function.
    pub fn has_constant_slot(&self) -> bool {
        match self {
            StateDictionary::Expressions { functions, .. } => {
                functions.iter().any(Expr::is_constant)
            }
            StateDictionary::WithConstant { .. } => true,
            StateDictionary::Transformed { inner, .. } => inner.has_constant_slot(),
            _ => false,
        }
    }

    /// Row of `H` holding each raw state coordinate, when every coordinate has one.
    pub fn state_rows(&self) -> Option<Vec<usize>> {
        let n = self.n();
        let mut rows = vec![None; n];
        match self {
            StateDictionary::Expressions { functions, .. } => {
                for (r, e) in functions.iter().enumerate() {
                    if let Some(c) = e.as_coord() {
                        rows[c].get_or_insert(r);
                    }
                }
            }
            StateDictionary::Polynomial { n, degree } => {
                for (r, p) in monomial_exponents(*n, *degree).iter().enumerate() {
                    if p.iter().sum::<u32>() == 1 {
                        let c = p.iter().position(|&e| e == 1)?;
                        rows[c].get_or_insert(r);
                    }
                }
            }
            StateDictionary::Neural { pinned, .. } => {
                for (r, &c) in pinned.iter().enumerate() {
                    rows[c].get_or_insert(r);
                }
            }
            StateDictionary::WithConstant { inner } => return inner.state_rows(),
            StateDictionary::Transformed { .. } => return None,
        }
        rows.into_iter().collect()
    }

    /// `H(x)` for a single state.
    pub fn eval(&self, x: &[f64]) -> Result<DVector<f64>> {
        let m = self.eval_batch(&DMatrix::from_column_slice(x.len(), 1, x))?;
        Ok(m.column(0).into_owned())
    }

    /// `H(X) = [H(x₁), …, H(x_N)]` for an `n × N` state matrix.
    pub fn eval_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.n() {
            return Err(KcfError::dim("state matrix rows", self.n(), x.nrows()));
        }
        let cols = x.ncols();
        Ok(match self {
            StateDictionary::Expressions { functions, .. } => {
                let mut out = DMatrix::zeros(functions.len(), cols);
                for j in 0..cols {
                    let xj: Vec<f64> = x.column(j).iter().copied().collect();
                    for (i, f) in functions.iter().enumerate() {
                        out[(i, j)] = f.eval(&xj);
                    }
                }
                out
            }
            StateDictionary::Polynomial { n, degree } => {
                let exps = monomial_exponents(*n, *degree);
                let mut out = DMatrix::zeros(exps.len(), cols);
                for j in 0..cols {
                    for (i, p) in exps.iter().enumerate() {
                        out[(i, j)] = p
                            .iter()
                            .enumerate()
                            .map(|(k, &e)| x[(k, j)].powi(e as i32))
                            .product();
                    }
                }
                out
            }
            StateDictionary::Neural { pinned, net, .. } => {
                let learned = net.forward(x);
                let mut out = DMatrix::zeros(pinned.len() + learned.nrows(), cols);
                for (r, &c) in pinned.iter().enumerate() {
                    out.row_mut(r).copy_from(&x.row(c));
                }
                out.rows_mut(pinned.len(), learned.nrows())
                    .copy_from(&learned);
                out
            }
            StateDictionary::WithConstant { inner } => {
                let h = inner.eval_batch(x)?;
                let k = h.nrows();
                let mut out = h.insert_row(k, 1.0);
                out.row_mut(k).fill(1.0);
                out
            }
            StateDictionary::Transformed { matrix, inner } => matrix * inner.eval_batch(x)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    General,
    LiftedLinear,
    Bilinear,
}

/// Input factor `G: ℝᵐ → ℝ^{(n_Ψ − n_H) × n_H}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InputFactor {
    /// `G(u) = [0_{m×(n_H−1)}, u]`.
    LiftedLinear { m: usize, n_h: usize },
    /// `G(u) = [u₁I; …; u_mI]`.
    Bilinear { m: usize, n_h: usize },
    /// Entry expressions in `u`, row-major over `rows × n_h`.
    Expressions {
        m: usize,
        n_h: usize,
        rows: usize,
        entries: Vec<Expr>,
    },
    /// Network output reshaped row-major into `rows × n_h`.
    Neural {
        m: usize,
        n_h: usize,
        rows: usize,
        net: Mlp,
    },
    /// `(R₂₁ + R₂₂ G(u)) R₁₁⁻¹`.
    Transformed {
        #[serde(with = "row_major")]
        r21: DMatrix<f64>,
        #[serde(with = "row_major")]
        r22: DMatrix<f64>,
        #[serde(with = "row_major")]
        r11_inv: DMatrix<f64>,
        inner: Box<InputFactor>,
    },
}

impl InputFactor {
    pub fn m(&self) -> usize {
        match self {
            InputFactor::LiftedLinear { m, .. }
            | InputFactor::Bilinear { m, .. }
            | InputFactor::Expressions { m, .. }
            | InputFactor::Neural { m, .. } => *m,
            InputFactor::Transformed { inner, .. } => inner.m(),
        }
    }

    pub fn n_h(&self) -> usize {
        match self {
            InputFactor::LiftedLinear { n_h, .. }
            | InputFactor::Bilinear { n_h, .. }
            | InputFactor::Expressions { n_h, .. }
            | InputFactor::Neural { n_h, .. } => *n_h,
            InputFactor::Transformed { r11_inv, .. } => r11_inv.ncols(),
        }
    }

    /// Number of rows of `G(u)`, i.e. `n_Ψ − n_H`.
    pub fn rows(&self) -> usize {
        match self {
            InputFactor::LiftedLinear { m, .. } => *m,
            InputFactor::Bilinear { m, n_h } => m * n_h,
            InputFactor::Expressions { rows, .. } | InputFactor::Neural { rows, .. } => *rows,
            InputFactor::Transformed { r22, .. } => r22.nrows(),
        }
    }

    pub fn structure(&self) -> Structure {
        match self {
            InputFactor::LiftedLinear { .. } => Structure::LiftedLinear,
            InputFactor::Bilinear { .. } => Structure::Bilinear,
            _ => Structure::General,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            InputFactor::LiftedLinear { m, n_h } | InputFactor::Bilinear { m, n_h } => {
                if *m == 0 || *n_h == 0 {
                    return Err(KcfError::invalid("input factor", "zero dimension"));
                }
            }
            InputFactor::Expressions {
                m,
                n_h,
                rows,
                entries,
            } => {
                if entries.len() != rows * n_h {
                    return Err(KcfError::dim(
                        "input factor entries",
                        rows * n_h,
                        entries.len(),
                    ));
                }
                if entries.iter().any(|e| e.arity() > *m) {
                    return Err(KcfError::invalid(
                        "input factor",
                        "entry reads beyond input dimension",
                    ));
                }
            }
            InputFactor::Neural { m, n_h, rows, net } => {
                net.validate()?;
                if net.input_dim() != *m {
                    return Err(KcfError::dim(
                        "neural input factor input",
                        *m,
                        net.input_dim(),
                    ));
                }
                if net.output_dim() != rows * n_h {
                    return Err(KcfError::dim(
                        "neural input factor output",
                        rows * n_h,
                        net.output_dim(),
                    ));
                }
            }
            InputFactor::Transformed {
                r21,
                r22,
                r11_inv,
                inner,
            } => {
                inner.validate()?;
                let (g, h) = (inner.rows(), inner.n_h());
                if r22.shape() != (g, g) || r21.shape() != (g, h) || r11_inv.shape() != (h, h) {
                    return Err(KcfError::invalid(
                        "input factor",
                        "transform blocks have wrong shapes",
                    ));
                }
            }
        }
        Ok(())
    }

    /// `G(u)`.
    pub fn eval(&self, u: &[f64]) -> Result<DMatrix<f64>> {
        if u.len() != self.m() {
            return Err(KcfError::dim("input length", self.m(), u.len()));
        }
        Ok(match self {
            InputFactor::LiftedLinear { m, n_h } => {
                let mut g = DMatrix::zeros(*m, *n_h);
                g.column_mut(n_h - 1).copy_from_slice(u);
                g
            }
            InputFactor::Bilinear { m, n_h } => {
                let mut g = DMatrix::zeros(m * n_h, *n_h);
                for (i, &ui) in u.iter().enumerate() {
                    for k in 0..*n_h {
                        g[(i * n_h + k, k)] = ui;
                    }
                }
                g
            }
            InputFactor::Expressions {
                n_h, rows, entries, ..
            } => DMatrix::from_row_iterator(*rows, *n_h, entries.iter().map(|e| e.eval(u))),
            InputFactor::Neural { n_h, rows, net, .. } => {
                let out = net.forward(&DMatrix::from_column_slice(u.len(), 1, u));
                DMatrix::from_row_slice(*rows, *n_h, out.as_slice())
            }
            InputFactor::Transformed {
                r21,
                r22,
                r11_inv,
                inner,
            } => (r21 + r22 * inner.eval(u)?) * r11_inv,
        })
    }

    /// `G(u_i)` for every column of `U`.
    pub fn eval_batch(&self, u: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        if u.nrows() != self.m() {
            return Err(KcfError::dim("input matrix rows", self.m(), u.nrows()));
        }
        if let InputFactor::Neural { n_h, rows, net, .. } = self {
            let out = net.forward(u);
            return Ok(out
                .column_iter()
                .map(|c| DMatrix::from_row_slice(*rows, *n_h, c.as_slice()))
                .collect());
        }
        u.column_iter().map(|c| self.eval(c.as_slice())).collect()
    }
}

/// Non-degenerate normal separable basis `Ψ = [I; G] H`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalBasis {
    state: StateDictionary,
    input: InputFactor,
}

impl NormalBasis {
    pub fn new(state: StateDictionary, input: InputFactor) -> Result<Self> {
        state.validate()?;
        input.validate()?;
        if input.n_h() != state.n_h() {
            return Err(KcfError::dim(
                "input factor columns (n_H)",
                state.n_h(),
                input.n_h(),
            ));
        }
        if input.rows() == 0 {
            return Err(KcfError::invalid(
                "normal basis",
                "degenerate: G has no rows, so n_Ψ must exceed n_H",
            ));
        }
        Ok(Self { state, input })
    }

    pub fn state(&self) -> &StateDictionary {
        &self.state
    }

    pub fn input(&self) -> &InputFactor {
        &self.input
    }

    pub fn n(&self) -> usize {
        self.state.n()
    }

    pub fn m(&self) -> usize {
        self.input.m()
    }

    pub fn n_h(&self) -> usize {
        self.state.n_h()
    }

    pub fn n_psi(&self) -> usize {
        self.n_h() + self.input.rows()
    }

    pub fn structure(&self) -> Structure {
        self.input.structure()
    }

    pub fn eval_h(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.state.eval_batch(x)
    }

    pub fn eval_g(&self, u: &[f64]) -> Result<DMatrix<f64>> {
        self.input.eval(u)
    }

    /// `Ψ(x, u)` for a single pair.
    pub fn eval_point(&self, x: &[f64], u: &[f64]) -> Result<DVector<f64>> {
        let psi = self.eval_psi(
            &DMatrix::from_column_slice(x.len(), 1, x),
            &DMatrix::from_column_slice(u.len(), 1, u),
        )?;
        Ok(psi.column(0).into_owned())
    }

    /// `Ψ(X, U) = [Ψ(x₁, u₁), …, Ψ(x_N, u_N)]`.
    pub fn eval_psi(&self, x: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != u.ncols() {
            return Err(KcfError::dim("snapshot count of U", x.ncols(), u.ncols()));
        }
        let h = self.eval_h(x)?;
        let gs = self.input.eval_batch(u)?;
        Ok(stack_psi(&h, &gs, self.input.rows()))
    }

    /// Normal basis `Ψ̄ = RΨ` for a block lower-triangular `R` (`R₁₂ = 0`, `R₁₁` invertible).
    pub fn change_of_basis(&self, r: &DMatrix<f64>) -> Result<NormalBasis> {
        let (nh, np) = (self.n_h(), self.n_psi());
        if r.shape() != (np, np) {
            return Err(KcfError::dim("change-of-basis size", np, r.nrows()));
        }
        let r11 = r.view((0, 0), (nh, nh)).into_owned();
        let r12 = r.view((0, nh), (nh, np - nh));
        let r21 = r.view((nh, 0), (np - nh, nh)).into_owned();
        let r22 = r.view((nh, nh), (np - nh, np - nh)).into_owned();
        let rn = r.norm();
        if r12.norm() > R12_TOLERANCE * rn {
            return Err(KcfError::invalid(
                "change of basis",
                format!(
                    "top-right block has norm {:.3e}, the result would not be in normal form",
                    r12.norm()
                ),
            ));
        }
        if !well_conditioned(&r11) {
            return Err(KcfError::invalid("change of basis", "R11 is singular"));
        }
        if !well_conditioned(&r22) {
            return Err(KcfError::invalid("change of basis", "R is singular"));
        }
        let r11_inv = r11
            .clone()
            .try_inverse()
            .ok_or_else(|| KcfError::invalid("change of basis", "R11 is singular"))?;
        let state = StateDictionary::Transformed {
            matrix: r11,
            inner: Box::new(self.state.clone()),
        };
        let input = InputFactor::Transformed {
            r21,
            r22,
            r11_inv,
            inner: Box::new(self.input.clone()),
        };
        NormalBasis::new(state, input)
    }

    pub fn to_document(&self) -> DictionaryDocument {
        DictionaryDocument {
            kind: self.state.kind(),
            n: self.n(),
            m: self.m(),
            n_h: self.n_h(),
            n_psi: self.n_psi(),
            structure: self.structure(),
            params: BasisParams {
                state: self.state.clone(),
                input: self.input.clone(),
            },
        }
    }

    pub fn from_document(doc: DictionaryDocument) -> Result<Self> {
        let basis = NormalBasis::new(doc.params.state, doc.params.input)?;
        let declared = [doc.n, doc.m, doc.n_h, doc.n_psi];
        let actual = [basis.n(), basis.m(), basis.n_h(), basis.n_psi()];
        if declared != actual {
            return Err(KcfError::invalid(
                "dictionary document",
                format!(
                    "declared dims (n, m, n_H, n_Psi) = {declared:?}, parameters give {actual:?}"
                ),
            ));
        }
        if doc.structure != basis.structure() || doc.kind != basis.state.kind() {
            return Err(KcfError::invalid(
                "dictionary document",
                "kind/structure tags disagree with parameters",
            ));
        }
        Ok(basis)
    }
}

/// Stacks `[h_i; G_i h_i]` column by column.
pub(crate) fn stack_psi(h: &DMatrix<f64>, gs: &[DMatrix<f64>], rows: usize) -> DMatrix<f64> {
    let nh = h.nrows();
    let mut psi = DMatrix::zeros(nh + rows, h.ncols());
    for (j, g) in gs.iter().enumerate() {
        let hj = h.column(j);
        psi.view_mut((0, j), (nh, 1)).copy_from(&hj);
        psi.view_mut((nh, j), (rows, 1)).copy_from(&(g * hj));
    }
    psi
}

fn well_conditioned(m: &DMatrix<f64>) -> bool {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    max > 0.0 && min > 1e-12 * max
}

/// JSON form of a normal basis.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DictionaryDocument {
    pub kind: DictionaryKind,
    pub n: usize,
    pub m: usize,
    #[serde(rename = "n_H")]
    pub n_h: usize,
    #[serde(rename = "n_Psi")]
    pub n_psi: usize,
    pub structure: Structure,
    pub params: BasisParams,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BasisParams {
    pub state: StateDictionary,
    pub input: InputFactor,
}

/// Lifted-linear basis: `H = [H̄; 1]`, `G(u) = [0, u]`.
pub fn make_lifted_linear(core: StateDictionary, m: usize) -> Result<NormalBasis> {
    if core.has_constant_slot() {
        return Err(KcfError::invalid(
            "lifted-linear core dictionary",
            "already contains a constant function",
        ));
    }
    let n_h = core.n_h() + 1;
    NormalBasis::new(
        StateDictionary::WithConstant {
            inner: Box::new(core),
        },
        InputFactor::LiftedLinear { m, n_h },
    )
}

/// Bilinear basis: `G(u) = [u₁I; …; u_mI]`, `n_Ψ = (m + 1) n_H`.
pub fn make_bilinear(state: StateDictionary, m: usize) -> Result<NormalBasis> {
    let n_h = state.n_h();
    NormalBasis::new(state, InputFactor::Bilinear { m, n_h })
}
