//! Direct linear solvers: dense Cholesky for small systems, sparse Cholesky
//! with symbolic reuse for medium 2D systems. Factorizations are kept so
//! adjoint solves cost one substitution.

use faer::linalg::solvers::{Llt as DenseLlt, Solve};
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMat, Triplet};
use faer::Side;

use crate::{Error, Result};

use super::multigrid::{ElemKe, LevelOp};

pub(crate) struct DenseDirect {
    factor: Option<DenseLlt<f64>>,
}

impl DenseDirect {
    pub fn new() -> Self {
        DenseDirect { factor: None }
    }

    pub fn factor(&mut self, op: &LevelOp) -> Result<()> {
        let m = op.assemble_dense();
        self.factor = Some(m.llt(Side::Lower).map_err(|_| {
            Error::Solver("dense factorization failed; system may be singular (insufficient constraints)".into())
        })?);
        Ok(())
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let factor = self
            .factor
            .as_ref()
            .ok_or_else(|| Error::State("solve called before factorization".into()))?;
        let mut b = faer::Mat::<f64>::zeros(rhs.len(), 1);
        for (i, v) in rhs.iter().enumerate() {
            b[(i, 0)] = *v;
        }
        factor.solve_in_place(b.as_mut());
        Ok((0..rhs.len()).map(|i| b[(i, 0)]).collect())
    }
}

pub(crate) struct SparseDirect {
    symbolic: Option<SymbolicLlt<usize>>,
    factor: Option<Llt<usize, f64>>,
}

impl SparseDirect {
    pub fn new() -> Self {
        SparseDirect { symbolic: None, factor: None }
    }

    fn triplets(op: &LevelOp) -> Vec<Triplet<usize, usize, f64>> {
        let n = op.n_dofs();
        let mut trips: Vec<Triplet<usize, usize, f64>> = Vec::new();
        let grid = &op.grid;
        match &op.ke {
            ElemKe::Quad(ke) => {
                for j in 0..grid.ny {
                    for i in 0..grid.nx {
                        let e = op.e[grid.idx(i, j, 0)];
                        let dofs = op.elem_dofs_2d(i, j);
                        for (a, &ra) in dofs.iter().enumerate() {
                            if op.fixed[ra] {
                                continue;
                            }
                            for (b, &cb) in dofs.iter().enumerate() {
                                if op.fixed[cb] || ra < cb {
                                    continue;
                                }
                                trips.push(Triplet::new(ra, cb, e * ke[a][b]));
                            }
                        }
                    }
                }
            }
            ElemKe::Hex(ke) => {
                for k in 0..grid.nz {
                    for j in 0..grid.ny {
                        for i in 0..grid.nx {
                            let e = op.e[grid.idx(i, j, k)];
                            let dofs = op.elem_dofs_3d(i, j, k);
                            for (a, &ra) in dofs.iter().enumerate() {
                                if op.fixed[ra] {
                                    continue;
                                }
                                for (b, &cb) in dofs.iter().enumerate() {
                                    if op.fixed[cb] || ra < cb {
                                        continue;
                                    }
                                    trips.push(Triplet::new(ra, cb, e * ke[a][b]));
                                }
                            }
                        }
                    }
                }
            }
        }
        for (dof, k) in &op.springs {
            if !op.fixed[*dof] {
                trips.push(Triplet::new(*dof, *dof, *k));
            }
        }
        for (d, fx) in op.fixed.iter().enumerate() {
            if *fx {
                trips.push(Triplet::new(d, d, 1.0));
            }
        }
        debug_assert!(trips.iter().all(|t| t.row < n && t.col < n));
        trips
    }

    pub fn factor(&mut self, op: &LevelOp) -> Result<()> {
        let n = op.n_dofs();
        let trips = Self::triplets(op);
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trips)
            .map_err(|e| Error::Solver(format!("sparse assembly failed: {e:?}")))?;
        if self.symbolic.is_none() {
            self.symbolic = Some(
                SymbolicLlt::try_new(mat.symbolic(), Side::Lower)
                    .map_err(|e| Error::Solver(format!("symbolic factorization failed: {e:?}")))?,
            );
        }
        let sym = self.symbolic.as_ref().unwrap().clone();
        self.factor = Some(Llt::try_new_with_symbolic(sym, mat.as_ref(), Side::Lower).map_err(
            |e| Error::Solver(format!("numeric factorization failed (singular system?): {e:?}")),
        )?);
        Ok(())
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let factor = self
            .factor
            .as_ref()
            .ok_or_else(|| Error::State("solve called before factorization".into()))?;
        let mut b = faer::Mat::<f64>::zeros(rhs.len(), 1);
        for (i, v) in rhs.iter().enumerate() {
            b[(i, 0)] = *v;
        }
        factor.solve_in_place(b.as_mut());
        Ok((0..rhs.len()).map(|i| b[(i, 0)]).collect())
    }
}
