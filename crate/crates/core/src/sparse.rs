//! Sparse Cholesky factorization for 3x3-block symmetric systems.
//!
//! The block matrix is expanded to a scalar lower-triangular CSC matrix and
//! factored with faer's sparse LLT (AMD ordering). The ordering and fill
//! pattern are computed once per sparsity structure, so the numeric
//! factorization can be repeated for every damping value the optimizer
//! tries. Everything runs sequentially so results do not depend on the
//! thread count.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::llt::factor::{LltError, LltParams, LltRegularization};
use faer::sparse::linalg::cholesky::{factorize_symbolic_cholesky, LltRef, SymbolicCholesky};
use faer::sparse::{Argsort, Pair, SparseColMat, SymbolicSparseColMat};
use faer::{Conj, MatMut, Par, Side, Spec};
use nalgebra::{Matrix3, Vector3};

/// Symmetric matrix stored as 3x3 blocks; only the lower triangle of
/// off-diagonal blocks is kept.
#[derive(Clone, Debug)]
pub struct BlockMatrix {
    diag: Vec<Matrix3<f64>>,
    /// `(row, col, block)` with `row > col`. Duplicates are summed.
    lower: Vec<(usize, usize, Matrix3<f64>)>,
}

impl BlockMatrix {
    pub fn new(n_blocks: usize) -> Self {
        Self {
            diag: vec![Matrix3::zeros(); n_blocks],
            lower: Vec::new(),
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.diag.len()
    }

    pub fn add_diag(&mut self, i: usize, block: &Matrix3<f64>) {
        self.diag[i] += block;
    }

    /// Adds `block` at `(row, col)` and its transpose at `(col, row)`.
    pub fn add_off_diag(&mut self, row: usize, col: usize, block: Matrix3<f64>) {
        assert_ne!(row, col, "use add_diag for diagonal blocks");
        if row > col {
            self.lower.push((row, col, block));
        } else {
            self.lower.push((col, row, block.transpose()));
        }
    }

    /// Stored strictly-lower blocks as `(row, col, block)`, possibly repeated.
    pub fn lower_blocks(&self) -> &[(usize, usize, Matrix3<f64>)] {
        &self.lower
    }

    pub fn diag(&self, i: usize) -> &Matrix3<f64> {
        &self.diag[i]
    }

    /// Largest diagonal scalar entry, used to scale damping.
    pub fn max_diagonal(&self) -> f64 {
        self.diag
            .iter()
            .flat_map(|b| (0..3).map(move |k| b[(k, k)]))
            .fold(0.0, f64::max)
    }

    /// Dense copy, for tests and tiny systems.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = 3 * self.n_blocks();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        for (i, b) in self.diag.iter().enumerate() {
            m.view_mut((3 * i, 3 * i), (3, 3)).copy_from(b);
        }
        for &(r, c, ref b) in &self.lower {
            let mut v = m.view_mut((3 * r, 3 * c), (3, 3));
            v += b;
            let mut v = m.view_mut((3 * c, 3 * r), (3, 3));
            v += b.transpose();
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FactorError {
    #[error("matrix is not positive definite (pivot block {0})")]
    NotPositiveDefinite(usize),
    #[error("matrix has {got} blocks but the symbolic factor expects {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("matrix sparsity differs from the analyzed structure")]
    StructureMismatch,
    #[error("sparse factorization failed: {0}")]
    Backend(String),
}

/// Ordering and fill pattern, independent of numeric values.
#[derive(Debug)]
pub struct SymbolicFactor {
    n_blocks: usize,
    /// Block coordinates of `BlockMatrix::lower`, in storage order.
    pattern: Vec<(usize, usize)>,
    lower: SymbolicSparseColMat<usize>,
    argsort: Argsort<usize>,
    cholesky: SymbolicCholesky<usize>,
}

impl SymbolicFactor {
    pub fn analyze(matrix: &BlockMatrix) -> Self {
        let n = matrix.n_blocks();
        let mut idx = Vec::with_capacity(6 * n + 9 * matrix.lower.len());
        for i in 0..n {
            for r in 0..3 {
                for c in 0..=r {
                    idx.push(Pair { row: 3 * i + r, col: 3 * i + c });
                }
            }
        }
        for &(br, bc, _) in &matrix.lower {
            for r in 0..3 {
                for c in 0..3 {
                    idx.push(Pair { row: 3 * br + r, col: 3 * bc + c });
                }
            }
        }
        let (lower, argsort) = SymbolicSparseColMat::try_new_from_indices(3 * n, 3 * n, &idx)
            .expect("block indices are in range");
        let cholesky = factorize_symbolic_cholesky(lower.as_ref(), Side::Lower, Default::default(), Default::default())
            .expect("symbolic analysis of a well-formed pattern");
        Self {
            n_blocks: n,
            pattern: matrix.lower.iter().map(|&(r, c, _)| (r, c)).collect(),
            lower,
            argsort,
            cholesky,
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    /// Stored scalar entries of the factor.
    pub fn fill(&self) -> usize {
        self.cholesky.len_val()
    }

    /// Numeric factorization of `matrix + damping * I`.
    pub fn factor(&self, matrix: &BlockMatrix, damping: f64) -> Result<CholeskyFactor<'_>, FactorError> {
        if matrix.n_blocks() != self.n_blocks {
            return Err(FactorError::SizeMismatch {
                expected: self.n_blocks,
                got: matrix.n_blocks(),
            });
        }
        if matrix.lower.len() != self.pattern.len()
            || matrix.lower.iter().zip(&self.pattern).any(|(&(r, c, _), &p)| (r, c) != p)
        {
            return Err(FactorError::StructureMismatch);
        }
        let mut vals = Vec::with_capacity(6 * matrix.n_blocks() + 9 * matrix.lower.len());
        for d in &matrix.diag {
            for r in 0..3 {
                for c in 0..=r {
                    vals.push(d[(r, c)] + if r == c { damping } else { 0.0 });
                }
            }
        }
        for (_, _, b) in &matrix.lower {
            for r in 0..3 {
                for c in 0..3 {
                    vals.push(b[(r, c)]);
                }
            }
        }
        let a = SparseColMat::new_from_argsort(self.lower.clone(), &self.argsort, &vals)
            .map_err(|e| FactorError::Backend(format!("{e:?}")))?;

        let params: Spec<LltParams, f64> = Default::default();
        let mut buf = MemBuffer::new(self.cholesky.factorize_numeric_llt_scratch::<f64>(Par::Seq, params));
        let mut values = vec![0.0; self.cholesky.len_val()];
        let result = self.cholesky.factorize_numeric_llt(
            &mut values,
            a.as_ref(),
            Side::Lower,
            LltRegularization::default(),
            Par::Seq,
            MemStack::new(&mut buf),
            params,
        );
        if let Err(LltError::NonPositivePivot { index }) = result {
            let orig = match self.cholesky.perm() {
                Some(p) => p.arrays().0[index],
                None => index,
            };
            return Err(FactorError::NotPositiveDefinite(orig / 3));
        }
        Ok(CholeskyFactor { symbolic: self, values })
    }
}

pub struct CholeskyFactor<'a> {
    symbolic: &'a SymbolicFactor,
    values: Vec<f64>,
}

impl CholeskyFactor<'_> {
    /// Solves `A x = rhs`.
    pub fn solve(&self, rhs: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        let n = self.symbolic.n_blocks;
        assert_eq!(rhs.len(), n);
        let mut x: Vec<f64> = rhs.iter().flat_map(|v| v.iter().copied()).collect();
        let cholesky = &self.symbolic.cholesky;
        let mut buf = MemBuffer::new(cholesky.solve_in_place_scratch::<f64>(1, Par::Seq));
        LltRef::new(cholesky, &self.values).solve_in_place_with_conj(
            Conj::No,
            MatMut::from_column_major_slice_mut(&mut x, 3 * n, 1),
            Par::Seq,
            MemStack::new(&mut buf),
        );
        x.chunks_exact(3).map(Vector3::from_column_slice).collect()
    }
}
