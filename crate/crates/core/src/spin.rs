//! Spin operators, tensor-product layouts and singlet/triplet projectors.
//!
//! Basis convention: factors are ordered electron 1, electron 2, the nuclei of
//! radical 1, then the nuclei of radical 2. The first factor is the most
//! significant digit of the composite index, and within a factor the basis
//! runs from m = +s down to m = -s.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tolerance::TOL;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
#[cfg(test)]
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Dimension of a single spin's Hilbert space: 2 for spin-1/2, 3 for spin-1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpinMultiplicity(usize);

impl SpinMultiplicity {
    pub const HALF: SpinMultiplicity = SpinMultiplicity(2);
    pub const ONE: SpinMultiplicity = SpinMultiplicity(3);

    pub fn new(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidMultiplicity(m));
        }
        Ok(Self(m))
    }

    pub fn dim(self) -> usize {
        self.0
    }

    /// Spin quantum number s = (m - 1)/2.
    pub fn spin(self) -> f64 {
        (self.0 as f64 - 1.0) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FactorRole {
    Electron1,
    Electron2,
    /// A nucleus coupled to radical 1 or 2.
    Nucleus { radical: u8 },
    /// A free-standing factor, used for single-spin operators.
    Bare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Factor {
    pub role: FactorRole,
    pub multiplicity: SpinMultiplicity,
}

/// Ordered tensor-product structure of the composite Hilbert space.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HilbertLayout {
    factors: Vec<Factor>,
    dim: usize,
}

impl HilbertLayout {
    /// Layout of a radical pair: two spin-1/2 electrons, then the nuclei of
    /// radical 1 and radical 2 in the given order.
    pub fn radical_pair(nuclei_a: &[SpinMultiplicity], nuclei_b: &[SpinMultiplicity]) -> Self {
        let mut factors = vec![
            Factor {
                role: FactorRole::Electron1,
                multiplicity: SpinMultiplicity::HALF,
            },
            Factor {
                role: FactorRole::Electron2,
                multiplicity: SpinMultiplicity::HALF,
            },
        ];
        factors.extend(nuclei_a.iter().map(|&m| Factor {
            role: FactorRole::Nucleus { radical: 1 },
            multiplicity: m,
        }));
        factors.extend(nuclei_b.iter().map(|&m| Factor {
            role: FactorRole::Nucleus { radical: 2 },
            multiplicity: m,
        }));
        Self::from_factors(factors)
    }

    /// Layout with a single free factor.
    pub fn single(m: SpinMultiplicity) -> Self {
        Self::from_factors(vec![Factor {
            role: FactorRole::Bare,
            multiplicity: m,
        }])
    }

    fn from_factors(factors: Vec<Factor>) -> Self {
        let dim = factors.iter().map(|f| f.multiplicity.dim()).product();
        Self { factors, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    fn nuclear_dim_of(&self, radical: u8) -> usize {
        self.factors
            .iter()
            .filter(|f| f.role == FactorRole::Nucleus { radical })
            .map(|f| f.multiplicity.dim())
            .product()
    }

    /// Z_A: nuclear dimension of radical 1.
    pub fn nuclear_dim_a(&self) -> usize {
        self.nuclear_dim_of(1)
    }

    /// Z_B: nuclear dimension of radical 2.
    pub fn nuclear_dim_b(&self) -> usize {
        self.nuclear_dim_of(2)
    }

    /// Z = Z_A Z_B.
    pub fn nuclear_dim(&self) -> usize {
        self.nuclear_dim_a() * self.nuclear_dim_b()
    }

    /// True when the first two factors are spin-1/2 electrons.
    pub fn is_radical_pair(&self) -> bool {
        self.factors.len() >= 2
            && self.factors[0].role == FactorRole::Electron1
            && self.factors[1].role == FactorRole::Electron2
            && self.factors[0].multiplicity == SpinMultiplicity::HALF
            && self.factors[1].multiplicity == SpinMultiplicity::HALF
    }

    /// Index of the first factor with the given role.
    pub fn index_of(&self, role: FactorRole) -> Option<usize> {
        self.factors.iter().position(|f| f.role == role)
    }

    /// Product of factor dimensions strictly before / after `index`.
    fn split_dims(&self, index: usize) -> (usize, usize) {
        let left = self.factors[..index]
            .iter()
            .map(|f| f.multiplicity.dim())
            .product();
        let right = self.factors[index + 1..]
            .iter()
            .map(|f| f.multiplicity.dim())
            .product();
        (left, right)
    }
}

/// A square complex matrix on a given layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    matrix: DMatrix<Complex64>,
    layout: Arc<HilbertLayout>,
}

impl Operator {
    pub fn new(matrix: DMatrix<Complex64>, layout: Arc<HilbertLayout>) -> Result<Self> {
        let d = layout.dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: matrix.nrows().max(matrix.ncols()),
            });
        }
        Ok(Self { matrix, layout })
    }

    /// Construct and verify Hermiticity to [`TOL.hermitian`](crate::tolerance::Tolerances).
    pub fn new_hermitian(matrix: DMatrix<Complex64>, layout: Arc<HilbertLayout>) -> Result<Self> {
        let op = Self::new(matrix, layout)?;
        let defect = op.hermitian_defect();
        if defect > TOL.hermitian {
            return Err(Error::InvalidParameter(format!(
                "operator flagged Hermitian has defect {defect:.3e}"
            )));
        }
        Ok(op)
    }

    pub fn zeros(layout: Arc<HilbertLayout>) -> Self {
        let d = layout.dim();
        Self {
            matrix: DMatrix::zeros(d, d),
            layout,
        }
    }

    pub fn identity(layout: Arc<HilbertLayout>) -> Self {
        let d = layout.dim();
        Self {
            matrix: DMatrix::identity(d, d),
            layout,
        }
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.matrix
    }

    pub fn layout(&self) -> &Arc<HilbertLayout> {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> Complex64 {
        self.matrix.trace()
    }

    /// Max |A - A†|.
    pub fn hermitian_defect(&self) -> f64 {
        max_abs(&(&self.matrix - self.matrix.adjoint()))
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_defect() <= tol
    }

    /// Same matrix, new payload; layout is shared.
    pub(crate) fn with_matrix(&self, matrix: DMatrix<Complex64>) -> Self {
        Self {
            matrix,
            layout: Arc::clone(&self.layout),
        }
    }

    pub fn commutator(&self, other: &Operator) -> DMatrix<Complex64> {
        &self.matrix * &other.matrix - &other.matrix * &self.matrix
    }
}

pub(crate) fn max_abs(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Cartesian components of a spin vector operator.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinVector {
    pub x: Operator,
    pub y: Operator,
    pub z: Operator,
}

impl SpinVector {
    pub fn components(&self) -> [&Operator; 3] {
        [&self.x, &self.y, &self.z]
    }

    /// Σ_k n_k S_k.
    pub fn project(&self, n: [f64; 3]) -> DMatrix<Complex64> {
        self.x.matrix() * Complex64::from(n[0])
            + self.y.matrix() * Complex64::from(n[1])
            + self.z.matrix() * Complex64::from(n[2])
    }

    /// S·T = Σ_k S_k T_k.
    pub fn dot(&self, other: &SpinVector) -> DMatrix<Complex64> {
        self.x.matrix() * other.x.matrix()
            + self.y.matrix() * other.y.matrix()
            + self.z.matrix() * other.z.matrix()
    }
}

/// Sx, Sy, Sz for a single spin of multiplicity `m`, from the ladder operators.
pub fn spin_operators(m: SpinMultiplicity) -> SpinVector {
    let n = m.dim();
    let s = m.spin();
    let layout = Arc::new(HilbertLayout::single(m));
    let mz = |k: usize| s - k as f64;
    // S+ |m> = sqrt(s(s+1) - m(m+1)) |m+1>; basis index k has m = s - k.
    let mut plus = DMatrix::<Complex64>::zeros(n, n);
    for k in 1..n {
        let m_k = mz(k);
        plus[(k - 1, k)] = Complex64::from((s * (s + 1.0) - m_k * (m_k + 1.0)).sqrt());
    }
    let minus = plus.adjoint();
    let sx = (&plus + &minus) * Complex64::new(0.5, 0.0);
    let sy = (&plus - &minus) * Complex64::new(0.0, -0.5);
    let sz = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(n, |k, _| Complex64::from(mz(k))));
    SpinVector {
        x: Operator::new(sx, Arc::clone(&layout)).expect("dimension"),
        y: Operator::new(sy, Arc::clone(&layout)).expect("dimension"),
        z: Operator::new(sz, layout).expect("dimension"),
    }
}

/// I ⊗ … ⊗ op ⊗ … ⊗ I with `op` at `factor_index` of `layout`.
pub fn embed(op: &Operator, factor_index: usize, layout: &Arc<HilbertLayout>) -> Result<Operator> {
    let factors = layout.factors().len();
    if factor_index >= factors {
        return Err(Error::FactorIndex {
            index: factor_index,
            factors,
        });
    }
    let m = layout.factors()[factor_index].multiplicity.dim();
    if op.dim() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: op.dim(),
        });
    }
    let (left, right) = layout.split_dims(factor_index);
    let d = layout.dim();
    let mut out = DMatrix::<Complex64>::zeros(d, d);
    let src = op.matrix();
    for l in 0..left {
        let base = l * m * right;
        for a in 0..m {
            for b in 0..m {
                let v = src[(a, b)];
                if v == ZERO {
                    continue;
                }
                for r in 0..right {
                    out[(base + a * right + r, base + b * right + r)] = v;
                }
            }
        }
    }
    Operator::new(out, Arc::clone(layout))
}

/// Spin vector of the factor at `index`, embedded in `layout`.
pub fn embedded_spin(layout: &Arc<HilbertLayout>, index: usize) -> Result<SpinVector> {
    let m = layout
        .factors()
        .get(index)
        .ok_or(Error::FactorIndex {
            index,
            factors: layout.factors().len(),
        })?
        .multiplicity;
    let local = spin_operators(m);
    Ok(SpinVector {
        x: embed(&local.x, index, layout)?,
        y: embed(&local.y, index, layout)?,
        z: embed(&local.z, index, layout)?,
    })
}

/// The two electron spin vectors of a radical-pair layout.
pub fn electron_spins(layout: &Arc<HilbertLayout>) -> Result<(SpinVector, SpinVector)> {
    if !layout.is_radical_pair() {
        return Err(Error::UnsupportedSystem(
            "layout does not start with two spin-1/2 electrons".into(),
        ));
    }
    Ok((embedded_spin(layout, 0)?, embedded_spin(layout, 1)?))
}

/// P_S = I/4 − S₁·S₂ on the electrons, identity on the nuclei.
pub fn singlet_projector(layout: &Arc<HilbertLayout>) -> Result<Operator> {
    let (s1, s2) = electron_spins(layout)?;
    let d = layout.dim();
    let p = DMatrix::<Complex64>::identity(d, d) * Complex64::from(0.25) - s1.dot(&s2);
    Operator::new(p, Arc::clone(layout))
}

/// P_T = I − P_S.
pub fn triplet_projector(layout: &Arc<HilbertLayout>) -> Result<Operator> {
    let ps = singlet_projector(layout)?;
    let d = layout.dim();
    Ok(ps.with_matrix(DMatrix::identity(d, d) - ps.matrix()))
}
