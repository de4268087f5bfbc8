//! Geometric multigrid preconditioned conjugate gradients for structured-grid
//! elasticity, matrix-free on every level.
//!
//! Levels are re-discretizations: each coarse element takes the average
//! Young's modulus of its (up to) 2^dim fine children, and the level operator
//! is the standard Q4/H8 operator on the coarser grid. Prolongation is
//! bi/trilinear node interpolation; restriction is its transpose. The V-cycle
//! smooths with damped Jacobi and solves the coarsest level with a dense
//! Cholesky factorization. All reductions are deterministic.

use rayon::prelude::*;

use crate::field::Grid;
use crate::util::{det_dot, det_sum};
use crate::{Error, Result};

use super::element::{ke_hex, ke_quad};

const JACOBI_OMEGA: f64 = 0.6;
const SMOOTH_SWEEPS: usize = 2;
const COARSE_DOF_LIMIT: usize = 800;
pub(crate) const PCG_MAX_ITERS: usize = 800;

/// Per-element stiffness matrix for one level, including the element-size
/// scaling (3D stiffness grows linearly with the edge length).
#[derive(Debug, Clone)]
pub(crate) enum ElemKe {
    Quad(Box<[[f64; 8]; 8]>),
    Hex(Box<[[f64; 24]; 24]>),
}

impl ElemKe {
    pub(crate) fn new(grid: &Grid, nu: f64) -> Self {
        if grid.dim() == 2 {
            ElemKe::Quad(Box::new(ke_quad(nu)))
        } else {
            let mut ke = ke_hex(nu);
            let h = grid.elem_size;
            for row in ke.iter_mut() {
                for v in row.iter_mut() {
                    *v *= h;
                }
            }
            ElemKe::Hex(Box::new(ke))
        }
    }
}

/// Matrix-free stiffness operator on one structured-grid level.
#[derive(Debug, Clone)]
pub(crate) struct LevelOp {
    pub grid: Grid,
    pub ke: ElemKe,
    /// Per-element Young's modulus (SIMP-interpolated on the fine level,
    /// child-averaged on coarser ones).
    pub e: Vec<f64>,
    /// Per-dof fixed flags; fixed rows act as identity.
    pub fixed: Vec<bool>,
    /// Diagonal springs (dof, stiffness).
    pub springs: Vec<(usize, f64)>,
    /// Operator diagonal for Jacobi smoothing (1.0 on fixed dofs).
    pub diag: Vec<f64>,
}

impl LevelOp {
    pub fn n_nodes(&self) -> usize {
        (self.grid.nx + 1) * (self.grid.ny + 1) * (self.grid.nz + 1).max(1)
    }

    pub fn n_dofs(&self) -> usize {
        self.grid.dim() * if self.grid.dim() == 2 {
            (self.grid.nx + 1) * (self.grid.ny + 1)
        } else {
            (self.grid.nx + 1) * (self.grid.ny + 1) * (self.grid.nz + 1)
        }
    }

    #[inline]
    fn node(&self, i: usize, j: usize, k: usize) -> usize {
        i + (self.grid.nx + 1) * (j + (self.grid.ny + 1) * k)
    }

    /// Global dof indices of one element's nodes.
    #[inline]
    pub(crate) fn elem_dofs_2d(&self, i: usize, j: usize) -> [usize; 8] {
        let n0 = self.node(i, j, 0);
        let n1 = self.node(i + 1, j, 0);
        let n2 = self.node(i + 1, j + 1, 0);
        let n3 = self.node(i, j + 1, 0);
        [2 * n0, 2 * n0 + 1, 2 * n1, 2 * n1 + 1, 2 * n2, 2 * n2 + 1, 2 * n3, 2 * n3 + 1]
    }

    #[inline]
    pub(crate) fn elem_dofs_3d(&self, i: usize, j: usize, k: usize) -> [usize; 24] {
        let n = [
            self.node(i, j, k),
            self.node(i + 1, j, k),
            self.node(i + 1, j + 1, k),
            self.node(i, j + 1, k),
            self.node(i, j, k + 1),
            self.node(i + 1, j, k + 1),
            self.node(i + 1, j + 1, k + 1),
            self.node(i, j + 1, k + 1),
        ];
        let mut dofs = [0usize; 24];
        for (a, &nd) in n.iter().enumerate() {
            dofs[3 * a] = 3 * nd;
            dofs[3 * a + 1] = 3 * nd + 1;
            dofs[3 * a + 2] = 3 * nd + 2;
        }
        dofs
    }

    /// `out = K u`, with identity rows on fixed dofs. Elements are processed
    /// in even/odd slabs so the scatter is race-free under rayon while the
    /// accumulation order stays deterministic.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        debug_assert_eq!(u.len(), self.n_dofs());
        out.fill(0.0);
        let slab_len = if self.grid.dim() == 2 {
            2 * (self.grid.nx + 1) // dofs per node row
        } else {
            3 * (self.grid.nx + 1) * (self.grid.ny + 1) // dofs per node layer
        };
        let n_slabs = if self.grid.dim() == 2 { self.grid.ny } else { self.grid.nz };
        for parity in 0..2 {
            // element slab s touches node slabs s and s+1; slabs of equal
            // parity are disjoint
            let slabs: Vec<usize> = (parity..n_slabs).step_by(2).collect();
            // SAFETY: each task writes only to node slabs s..s+2, disjoint
            // within one parity class.
            let out_ptr = SendPtr(out.as_mut_ptr());
            slabs.par_iter().for_each(|&s| {
                let out = unsafe {
                    std::slice::from_raw_parts_mut(out_ptr.get().add(s * slab_len), 2 * slab_len)
                };
                self.apply_slab(s, u, out, s * slab_len);
            });
        }
        for (dof, k) in &self.springs {
            if !self.fixed[*dof] {
                out[*dof] += k * u[*dof];
            }
        }
        out.par_iter_mut().zip(self.fixed.par_iter()).zip(u.par_iter()).for_each(
            |((o, &fx), &ui)| {
                if fx {
                    *o = ui;
                }
            },
        );
    }

    /// Scatter the contributions of element slab `s` into `out`, whose slice
    /// starts at global dof `offset`.
    fn apply_slab(&self, s: usize, u: &[f64], out: &mut [f64], offset: usize) {
        match &self.ke {
            ElemKe::Quad(ke) => {
                let j = s;
                for i in 0..self.grid.nx {
                    let e = self.e[self.grid.idx(i, j, 0)];
                    if e == 0.0 {
                        continue;
                    }
                    let dofs = self.elem_dofs_2d(i, j);
                    let mut ue = [0.0; 8];
                    for (a, &d) in dofs.iter().enumerate() {
                        ue[a] = if self.fixed[d] { 0.0 } else { u[d] };
                    }
                    for r in 0..8 {
                        let row = &ke[r];
                        let mut acc = 0.0;
                        for c in 0..8 {
                            acc += row[c] * ue[c];
                        }
                        out[dofs[r] - offset] += e * acc;
                    }
                }
            }
            ElemKe::Hex(ke) => {
                let k = s;
                for j in 0..self.grid.ny {
                    for i in 0..self.grid.nx {
                        let e = self.e[self.grid.idx(i, j, k)];
                        if e == 0.0 {
                            continue;
                        }
                        let dofs = self.elem_dofs_3d(i, j, k);
                        let mut ue = [0.0; 24];
                        for (a, &d) in dofs.iter().enumerate() {
                            ue[a] = if self.fixed[d] { 0.0 } else { u[d] };
                        }
                        for r in 0..24 {
                            let row = &ke[r];
                            let mut acc = 0.0;
                            for c in 0..24 {
                                acc += row[c] * ue[c];
                            }
                            out[dofs[r] - offset] += e * acc;
                        }
                    }
                }
            }
        }
    }

    /// Recompute the Jacobi diagonal from the current moduli.
    pub fn rebuild_diag(&mut self) {
        let mut diag = vec![0.0; self.n_dofs()];
        match &self.ke {
            ElemKe::Quad(ke) => {
                for j in 0..self.grid.ny {
                    for i in 0..self.grid.nx {
                        let e = self.e[self.grid.idx(i, j, 0)];
                        let dofs = self.elem_dofs_2d(i, j);
                        for (a, &d) in dofs.iter().enumerate() {
                            diag[d] += e * ke[a][a];
                        }
                    }
                }
            }
            ElemKe::Hex(ke) => {
                for k in 0..self.grid.nz {
                    for j in 0..self.grid.ny {
                        for i in 0..self.grid.nx {
                            let e = self.e[self.grid.idx(i, j, k)];
                            let dofs = self.elem_dofs_3d(i, j, k);
                            for (a, &d) in dofs.iter().enumerate() {
                                diag[d] += e * ke[a][a];
                            }
                        }
                    }
                }
            }
        }
        for (dof, k) in &self.springs {
            diag[*dof] += k;
        }
        for (d, fx) in diag.iter_mut().zip(&self.fixed) {
            if *fx || *d == 0.0 {
                *d = 1.0;
            }
        }
        self.diag = diag;
    }

    /// Assemble the operator densely (coarsest level only).
    pub(crate) fn assemble_dense(&self) -> faer::Mat<f64> {
        let n = self.n_dofs();
        let mut m = faer::Mat::<f64>::zeros(n, n);
        let mut add_elem = |dofs: &[usize], ke: &[&[f64]], e: f64| {
            for (a, &ra) in dofs.iter().enumerate() {
                if self.fixed[ra] {
                    continue;
                }
                for (b, &cb) in dofs.iter().enumerate() {
                    if self.fixed[cb] {
                        continue;
                    }
                    m[(ra, cb)] += e * ke[a][b];
                }
            }
        };
        match &self.ke {
            ElemKe::Quad(ke) => {
                let rows: Vec<&[f64]> = ke.iter().map(|r| r.as_slice()).collect();
                for j in 0..self.grid.ny {
                    for i in 0..self.grid.nx {
                        let dofs = self.elem_dofs_2d(i, j);
                        add_elem(&dofs, &rows, self.e[self.grid.idx(i, j, 0)]);
                    }
                }
            }
            ElemKe::Hex(ke) => {
                let rows: Vec<&[f64]> = ke.iter().map(|r| r.as_slice()).collect();
                for k in 0..self.grid.nz {
                    for j in 0..self.grid.ny {
                        for i in 0..self.grid.nx {
                            let dofs = self.elem_dofs_3d(i, j, k);
                            add_elem(&dofs, &rows, self.e[self.grid.idx(i, j, k)]);
                        }
                    }
                }
            }
        }
        for (dof, k) in &self.springs {
            if !self.fixed[*dof] {
                m[(*dof, *dof)] += *k;
            }
        }
        for (d, fx) in self.fixed.iter().enumerate() {
            if *fx {
                m[(d, d)] = 1.0;
            }
        }
        m
    }
}

struct SendPtr(*mut f64);
unsafe impl Send for SendPtr {}
unsafe impl Sync for SendPtr {}

impl SendPtr {
    fn get(&self) -> *mut f64 {
        self.0
    }
}

/// Per-axis node interpolation tables between two levels.
#[derive(Debug, Clone, Default)]
struct AxisMap {
    /// For each fine node: (coarse node, weight) pairs.
    fine_to_coarse: Vec<Vec<(usize, f64)>>,
    /// For each coarse node: (fine node, weight) pairs (transpose).
    coarse_to_fine: Vec<Vec<(usize, f64)>>,
}

fn axis_map(fine_elems: usize, coarse_elems: usize) -> AxisMap {
    let nf = fine_elems + 1;
    let nc = coarse_elems + 1;
    let mut f2c = vec![Vec::new(); nf];
    for (f, pairs) in f2c.iter_mut().enumerate() {
        if f % 2 == 0 {
            pairs.push(((f / 2).min(nc - 1), 1.0));
        } else {
            pairs.push((f / 2, 0.5));
            pairs.push((((f + 1) / 2).min(nc - 1), 0.5));
        }
    }
    let mut c2f = vec![Vec::new(); nc];
    for (f, pairs) in f2c.iter().enumerate() {
        for &(c, w) in pairs {
            c2f[c].push((f, w));
        }
    }
    AxisMap { fine_to_coarse: f2c, coarse_to_fine: c2f }
}

/// Node interpolation between two consecutive levels.
#[derive(Debug, Clone)]
struct Transfer {
    x: AxisMap,
    y: AxisMap,
    z: AxisMap,
    fine: Grid,
    coarse: Grid,
}

impl Transfer {
    fn new(fine: Grid, coarse: Grid) -> Self {
        Transfer {
            x: axis_map(fine.nx, coarse.nx),
            y: axis_map(fine.ny, coarse.ny),
            z: if fine.dim() == 3 {
                axis_map(fine.nz, coarse.nz)
            } else {
                AxisMap {
                    fine_to_coarse: vec![vec![(0, 1.0)]],
                    coarse_to_fine: vec![vec![(0, 1.0)]],
                }
            },
            fine,
            coarse,
        }
    }

    /// Fine value at each node interpolated from the coarse vector.
    fn prolong(&self, coarse: &[f64], fine_out: &mut [f64]) {
        let dim = self.fine.dim();
        let (nfx, nfy) = (self.fine.nx + 1, self.fine.ny + 1);
        let (ncx, ncy) = (self.coarse.nx + 1, self.coarse.ny + 1);
        fine_out.par_chunks_mut(dim * nfx).enumerate().for_each(|(line, out)| {
            let fj = line % nfy;
            let fk = line / nfy;
            for fi in 0..nfx {
                let mut acc = [0.0; 3];
                for &(ci, wi) in &self.x.fine_to_coarse[fi] {
                    for &(cj, wj) in &self.y.fine_to_coarse[fj] {
                        for &(ck, wk) in &self.z.fine_to_coarse[fk] {
                            let w = wi * wj * wk;
                            let cn = ci + ncx * (cj + ncy * ck);
                            for d in 0..dim {
                                acc[d] += w * coarse[dim * cn + d];
                            }
                        }
                    }
                }
                for d in 0..dim {
                    out[dim * fi + d] = acc[d];
                }
            }
        });
    }

    /// Transpose interpolation: coarse residual gathered from fine.
    fn restrict(&self, fine: &[f64], coarse_out: &mut [f64]) {
        let dim = self.fine.dim();
        let (nfx, nfy) = (self.fine.nx + 1, self.fine.ny + 1);
        let (ncx, ncy) = (self.coarse.nx + 1, self.coarse.ny + 1);
        coarse_out.par_chunks_mut(dim * ncx).enumerate().for_each(|(line, out)| {
            let cj = line % ncy;
            let ck = line / ncy;
            for ci in 0..ncx {
                let mut acc = [0.0; 3];
                for &(fi, wi) in &self.x.coarse_to_fine[ci] {
                    for &(fj, wj) in &self.y.coarse_to_fine[cj] {
                        for &(fk, wk) in &self.z.coarse_to_fine[ck] {
                            let w = wi * wj * wk;
                            let fn_ = fi + nfx * (fj + nfy * fk);
                            for d in 0..dim {
                                acc[d] += w * fine[dim * fn_ + d];
                            }
                        }
                    }
                }
                for d in 0..dim {
                    out[dim * ci + d] = acc[d];
                }
            }
        });
    }
}

fn coarsen_grid(g: &Grid) -> Grid {
    if g.dim() == 2 {
        Grid::new_2d(g.nx.div_ceil(2), g.ny.div_ceil(2), g.elem_size * 2.0)
    } else {
        Grid::new_3d(g.nx.div_ceil(2), g.ny.div_ceil(2), g.nz.div_ceil(2), g.elem_size * 2.0)
    }
}

/// Average the fine element moduli into the coarse elements.
fn coarsen_moduli(fine: &Grid, coarse: &Grid, ef: &[f64], ec: &mut Vec<f64>) {
    ec.clear();
    ec.resize(coarse.n_elems(), 0.0);
    let kz = if fine.dim() == 3 { 2 } else { 1 };
    for ck in 0..coarse.nz {
        for cj in 0..coarse.ny {
            for ci in 0..coarse.nx {
                let mut sum = 0.0;
                let mut count = 0.0;
                for dk in 0..kz {
                    for dj in 0..2 {
                        for di in 0..2 {
                            let (fi, fj, fk) = (2 * ci + di, 2 * cj + dj, 2 * ck + dk);
                            if fi < fine.nx && fj < fine.ny && fk < fine.nz.max(1) {
                                sum += ef[fine.idx(fi, fj, fk)];
                                count += 1.0;
                            }
                        }
                    }
                }
                ec[coarse.idx(ci, cj, ck)] = sum / count;
            }
        }
    }
}

/// Multigrid-preconditioned CG solver bound to one mesh and BC set.
pub(crate) struct MgSolver {
    levels: Vec<LevelOp>,
    transfers: Vec<Transfer>,
    coarse_factor: Option<faer::linalg::solvers::Llt<f64>>,
    /// Residual / correction work vectors per level.
    work_r: Vec<Vec<f64>>,
    work_e: Vec<Vec<f64>>,
    work_t: Vec<Vec<f64>>,
}

impl MgSolver {
    /// Build the level skeleton. Moduli must be set via `set_moduli` before
    /// solving. Coarse fixed dofs and springs are inherited through the node
    /// injection maps.
    pub fn new(fine: LevelOp, nu: f64) -> Self {
        let mut levels = vec![fine];
        let mut transfers = Vec::new();
        while levels.last().unwrap().n_dofs() > COARSE_DOF_LIMIT {
            let prev = levels.last().unwrap();
            let cg = coarsen_grid(&prev.grid);
            let transfer = Transfer::new(prev.grid, cg);
            // coarse dof fixed if its injected fine node dof is fixed
            let dim = cg.dim();
            let (ncx, ncy, ncz) = (cg.nx + 1, cg.ny + 1, cg.nz + 1);
            let (nfx, nfy) = (prev.grid.nx + 1, prev.grid.ny + 1);
            let mut fixed = vec![false; dim * ncx * ncy * if dim == 3 { ncz } else { 1 }];
            let kz = if dim == 3 { ncz } else { 1 };
            for ck in 0..kz {
                for cj in 0..ncy {
                    for ci in 0..ncx {
                        let fi = (2 * ci).min(prev.grid.nx);
                        let fj = (2 * cj).min(prev.grid.ny);
                        let fk = if dim == 3 { (2 * ck).min(prev.grid.nz) } else { 0 };
                        let fnode = fi + nfx * (fj + nfy * fk);
                        let cnode = ci + ncx * (cj + ncy * ck);
                        for d in 0..dim {
                            fixed[dim * cnode + d] = prev.fixed[dim * fnode + d];
                        }
                    }
                }
            }
            // springs split onto bracketing coarse nodes with squared weights
            let mut springs: Vec<(usize, f64)> = Vec::new();
            for &(dof, k) in &prev.springs {
                let d = dof % dim;
                let fnode = dof / dim;
                let fi = fnode % nfx;
                let fj = (fnode / nfx) % nfy;
                let fk = fnode / (nfx * nfy);
                for &(ci, wi) in &transfer.x.fine_to_coarse[fi] {
                    for &(cj, wj) in &transfer.y.fine_to_coarse[fj] {
                        for &(ck, wk) in &transfer.z.fine_to_coarse[fk] {
                            let w = wi * wj * wk;
                            let cnode = ci + ncx * (cj + ncy * ck);
                            springs.push((dim * cnode + d, k * w * w));
                        }
                    }
                }
            }
            let level = LevelOp {
                grid: cg,
                ke: ElemKe::new(&cg, nu),
                e: vec![0.0; cg.n_elems()],
                fixed,
                springs,
                diag: Vec::new(),
            };
            transfers.push(transfer);
            levels.push(level);
        }
        let work_r = levels.iter().map(|l| vec![0.0; l.n_dofs()]).collect();
        let work_e = levels.iter().map(|l| vec![0.0; l.n_dofs()]).collect();
        let work_t = levels.iter().map(|l| vec![0.0; l.n_dofs()]).collect();
        MgSolver { levels, transfers, coarse_factor: None, work_r, work_e, work_t }
    }

    pub fn fine(&self) -> &LevelOp {
        &self.levels[0]
    }

    /// Install the fine-level element moduli and refresh every level.
    pub fn set_moduli(&mut self, e_fine: &[f64]) -> Result<()> {
        self.levels[0].e.clear();
        self.levels[0].e.extend_from_slice(e_fine);
        for l in 0..self.levels.len() - 1 {
            let (fine, coarse) = self.levels.split_at_mut(l + 1);
            let fg = fine[l].grid;
            let cg = coarse[0].grid;
            let mut ec = std::mem::take(&mut coarse[0].e);
            coarsen_moduli(&fg, &cg, &fine[l].e, &mut ec);
            coarse[0].e = ec;
        }
        for level in &mut self.levels {
            level.rebuild_diag();
        }
        let dense = self.levels.last().unwrap().assemble_dense();
        let llt = dense
            .llt(faer::Side::Lower)
            .map_err(|_| Error::Solver("coarse-level factorization failed; system may be singular (insufficient constraints)".into()))?;
        self.coarse_factor = Some(llt);
        Ok(())
    }

    fn smooth(&self, l: usize, f: &[f64], u: &mut [f64], r: &mut [f64]) {
        let level = &self.levels[l];
        for _ in 0..SMOOTH_SWEEPS {
            level.apply(u, r);
            u.par_iter_mut()
                .zip(r.par_iter())
                .zip(f.par_iter().zip(level.diag.par_iter()))
                .for_each(|((ui, &ri), (&fi, &di))| {
                    *ui += JACOBI_OMEGA * (fi - ri) / di;
                });
        }
    }

    fn vcycle(&mut self, l: usize, f: &[f64], u: &mut [f64]) {
        if l + 1 == self.levels.len() {
            // coarsest: dense direct
            use faer::linalg::solvers::Solve;
            let mut rhs = faer::Mat::<f64>::zeros(f.len(), 1);
            for (i, v) in f.iter().enumerate() {
                rhs[(i, 0)] = *v;
            }
            self.coarse_factor.as_ref().unwrap().solve_in_place(rhs.as_mut());
            for (i, ui) in u.iter_mut().enumerate() {
                *ui = rhs[(i, 0)];
            }
            return;
        }
        u.fill(0.0);
        let mut r = std::mem::take(&mut self.work_r[l]);
        self.smooth(l, f, u, &mut r);
        // residual
        self.levels[l].apply(u, &mut r);
        r.par_iter_mut().zip(f.par_iter()).for_each(|(ri, &fi)| *ri = fi - *ri);
        // coarse correction
        let mut rc = std::mem::take(&mut self.work_t[l + 1]);
        self.transfers[l].restrict(&r, &mut rc);
        for (d, fx) in rc.iter_mut().zip(&self.levels[l + 1].fixed) {
            if *fx {
                *d = 0.0;
            }
        }
        let mut ec = std::mem::take(&mut self.work_e[l + 1]);
        self.vcycle(l + 1, &rc, &mut ec);
        self.transfers[l].prolong(&ec, &mut r);
        self.work_t[l + 1] = rc;
        self.work_e[l + 1] = ec;
        let fixed = &self.levels[l].fixed;
        u.par_iter_mut().zip(r.par_iter()).zip(fixed.par_iter()).for_each(|((ui, &ei), &fx)| {
            if !fx {
                *ui += ei;
            }
        });
        self.smooth(l, f, u, &mut r);
        self.work_r[l] = r;
    }

    /// Preconditioned CG to `tol * ||f||`, warm-started from `u`.
    pub fn solve(&mut self, f: &[f64], u: &mut [f64], tol: f64) -> Result<usize> {
        let n = f.len();
        let norm_f = det_dot(f, f).sqrt();
        if norm_f == 0.0 {
            u.fill(0.0);
            return Ok(0);
        }
        // enforce consistency on fixed dofs
        let fixed = self.levels[0].fixed.clone();
        for (ui, fx) in u.iter_mut().zip(&fixed) {
            if *fx {
                *ui = 0.0;
            }
        }
        let mut r = vec![0.0; n];
        self.levels[0].apply(u, &mut r);
        r.par_iter_mut().zip(f.par_iter()).for_each(|(ri, &fi)| *ri = fi - *ri);
        let mut z = vec![0.0; n];
        let mut p = vec![0.0; n];
        let mut ap = vec![0.0; n];
        let mut rz_old = 0.0;
        for it in 0..PCG_MAX_ITERS {
            let rnorm = det_dot(&r, &r).sqrt();
            if rnorm <= tol * norm_f {
                return Ok(it);
            }
            self.vcycle(0, &r, &mut z);
            let rz = det_dot(&r, &z);
            if it == 0 {
                p.copy_from_slice(&z);
            } else {
                let beta = rz / rz_old;
                p.par_iter_mut().zip(z.par_iter()).for_each(|(pi, &zi)| *pi = zi + beta * *pi);
            }
            rz_old = rz;
            self.levels[0].apply(&p, &mut ap);
            let pap = det_dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::Solver(format!(
                    "indefinite or singular system in PCG (p'Ap = {pap}); check boundary conditions"
                )));
            }
            let alpha = rz / pap;
            u.par_iter_mut().zip(p.par_iter()).for_each(|(ui, &pi)| *ui += alpha * pi);
            r.par_iter_mut().zip(ap.par_iter()).for_each(|(ri, &api)| *ri -= alpha * api);
        }
        let rnorm = det_dot(&r, &r).sqrt();
        Err(Error::Solver(format!(
            "PCG did not reach tolerance in {PCG_MAX_ITERS} iterations (relative residual {:.3e})",
            rnorm / norm_f
        )))
    }
}

/// Deterministic residual norm ||f - K u|| / ||f|| for verification.
pub(crate) fn relative_residual(op: &LevelOp, u: &[f64], f: &[f64]) -> f64 {
    let mut r = vec![0.0; f.len()];
    op.apply(u, &mut r);
    let mut num = 0.0_f64;
    let mut den = 0.0_f64;
    for ((ri, fi), fx) in r.iter().zip(f).zip(&op.fixed) {
        if !fx {
            num += (fi - ri) * (fi - ri);
            den += fi * fi;
        }
    }
    if den == 0.0 {
        return det_sum(&[num]).sqrt();
    }
    (num / den).sqrt()
}
