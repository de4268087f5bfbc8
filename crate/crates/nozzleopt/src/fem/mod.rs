//! Structured-grid linear-elastic finite element analysis with SIMP
//! interpolation: bilinear quads (plane stress) in 2D, trilinear hexahedra in
//! 3D. Provides compliance, output displacement and von Mises stress together
//! with their adjoint sensitivities with respect to the projected density
//! field.
//!
//! Solver selection: dense Cholesky for small systems, sparse Cholesky for
//! medium 2D systems (factorization reused by adjoint solves), and matrix-free
//! geometric multigrid PCG for everything larger, warm-started across
//! optimization iterations. Every accepted solve satisfies
//! `||Ku - f|| <= 1e-8 ||f||`.

mod element;
pub(crate) mod multigrid;
mod solver;

pub use element::{b_quad, d_plane_stress, ke_hex, ke_quad};

use rayon::prelude::*;

use crate::field::{DensityField, Grid};
use crate::{Error, Result};

use multigrid::{relative_residual, ElemKe, LevelOp, MgSolver};
use solver::{DenseDirect, SparseDirect};

const RESIDUAL_TOL: f64 = 1e-8;
const DENSE_DOF_LIMIT: usize = 800;
const SPARSE_DOF_LIMIT: usize = 30_000;

/// Structured mesh: the element grid plus node/dof numbering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mesh {
    pub grid: Grid,
}

impl Mesh {
    pub fn new(grid: Grid) -> Self {
        Mesh { grid }
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn n_nodes(&self) -> usize {
        let g = &self.grid;
        (g.nx + 1) * (g.ny + 1) * if g.dim() == 3 { g.nz + 1 } else { 1 }
    }

    pub fn n_dofs(&self) -> usize {
        self.dim() * self.n_nodes()
    }

    /// Node index from grid coordinates (`k` ignored in 2D).
    pub fn node(&self, i: usize, j: usize, k: usize) -> usize {
        let g = &self.grid;
        debug_assert!(i <= g.nx && j <= g.ny && (g.dim() == 2 || k <= g.nz));
        i + (g.nx + 1) * (j + (g.ny + 1) * k)
    }

    /// Dof index of a node direction (0 = x, 1 = y, 2 = z).
    pub fn dof(&self, i: usize, j: usize, k: usize, dir: usize) -> usize {
        debug_assert!(dir < self.dim());
        self.dim() * self.node(i, j, k) + dir
    }
}

/// Dirichlet constraints, point loads and grounded springs, all by dof index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundaryConditions {
    pub fixed: Vec<usize>,
    pub loads: Vec<(usize, f64)>,
    pub springs: Vec<(usize, f64)>,
}

impl BoundaryConditions {
    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        let n = mesh.n_dofs();
        if let Some(d) = self.fixed.iter().find(|d| **d >= n) {
            return Err(Error::Config(format!("fixed dof {d} out of range ({n} dofs)")));
        }
        for (d, v) in &self.loads {
            if *d >= n {
                return Err(Error::Config(format!("load dof {d} out of range ({n} dofs)")));
            }
            if !v.is_finite() {
                return Err(Error::Data(format!("non-finite load {v} on dof {d}")));
            }
        }
        for (d, k) in &self.springs {
            if *d >= n {
                return Err(Error::Config(format!("spring dof {d} out of range ({n} dofs)")));
            }
            if !(*k >= 0.0) {
                return Err(Error::Config(format!("spring stiffness must be >= 0, got {k}")));
            }
        }
        if self.fixed.is_empty() {
            return Err(Error::Config("no fixed dofs; rigid-body modes present".into()));
        }
        Ok(())
    }
}

/// SIMP material: `E_i = emin + rho_bar_i^p (e0 - emin)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub e0: f64,
    pub emin: f64,
    pub nu: f64,
    pub simp_p: f64,
}

impl Default for Material {
    fn default() -> Self {
        Material { e0: 1.0, emin: 1e-9, nu: 0.3, simp_p: 3.0 }
    }
}

impl Material {
    pub fn validate(&self) -> Result<()> {
        if !(self.emin > 0.0 && self.emin < 0.01 * self.e0) {
            return Err(Error::Config(format!(
                "void stiffness must satisfy 0 < emin << e0, got emin={}, e0={}",
                self.emin, self.e0
            )));
        }
        if !(self.simp_p >= 1.0 && self.simp_p <= 3.0 + 1e-12) {
            return Err(Error::Config(format!(
                "SIMP exponent must lie in [1, 3], got {}",
                self.simp_p
            )));
        }
        Ok(())
    }

    #[inline]
    fn youngs(&self, rho: f64) -> f64 {
        self.emin + rho.powf(self.simp_p) * (self.e0 - self.emin)
    }

    #[inline]
    fn dyoungs(&self, rho: f64) -> f64 {
        self.simp_p * rho.powf(self.simp_p - 1.0) * (self.e0 - self.emin)
    }
}

/// Displacement solution bound to the field and material it was computed for.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub u: Vec<f64>,
    pub material: Material,
    pub rho_bar: Vec<f64>,
    /// PCG iteration count (0 for direct solves).
    pub iters: usize,
    snapshot: u64,
}

enum Backend {
    Dense(DenseDirect),
    Sparse(SparseDirect),
    Multigrid(MgSolver),
}

/// FEA context bound to one mesh, boundary-condition set and Poisson ratio;
/// reused across optimization iterations so symbolic factorizations and the
/// multigrid skeleton are built once.
pub struct FemContext {
    pub mesh: Mesh,
    pub bc: BoundaryConditions,
    nu: f64,
    f: Vec<f64>,
    backend: Backend,
    /// Fine-level operator for direct backends (the multigrid backend owns
    /// its own copy as level 0).
    fine: Option<LevelOp>,
    snapshot: u64,
}

impl FemContext {
    pub fn new(mesh: Mesh, bc: BoundaryConditions, nu: f64) -> Result<Self> {
        Self::new_with_limits(mesh, bc, nu, DENSE_DOF_LIMIT, SPARSE_DOF_LIMIT)
    }

    /// Backend-selection limits exposed for tests and tuning.
    pub(crate) fn new_with_limits(
        mesh: Mesh,
        bc: BoundaryConditions,
        nu: f64,
        dense_limit: usize,
        sparse_limit: usize,
    ) -> Result<Self> {
        bc.validate(&mesh)?;
        let n = mesh.n_dofs();
        let mut fixed = vec![false; n];
        for &d in &bc.fixed {
            fixed[d] = true;
        }
        let mut f = vec![0.0; n];
        for &(d, v) in &bc.loads {
            if !fixed[d] {
                f[d] += v;
            }
        }
        let fine = LevelOp {
            grid: mesh.grid,
            ke: ElemKe::new(&mesh.grid, nu),
            e: vec![0.0; mesh.grid.n_elems()],
            fixed,
            springs: bc.springs.clone(),
            diag: Vec::new(),
        };
        let backend = if n <= dense_limit {
            Backend::Dense(DenseDirect::new())
        } else if mesh.dim() == 2 && n <= sparse_limit {
            Backend::Sparse(SparseDirect::new())
        } else {
            Backend::Multigrid(MgSolver::new(fine.clone(), nu))
        };
        let fine = match backend {
            Backend::Multigrid(_) => None,
            _ => Some(fine),
        };
        Ok(FemContext { mesh, bc, nu, f, backend, fine, snapshot: 0 })
    }

    fn fine_op(&self) -> &LevelOp {
        match &self.backend {
            Backend::Multigrid(mg) => mg.fine(),
            _ => self.fine.as_ref().unwrap(),
        }
    }

    /// Assembled load vector (zero on fixed dofs).
    pub fn loads(&self) -> &[f64] {
        &self.f
    }

    /// Factor/refresh the operator for the given field and solve `K u = f`.
    pub fn solve(
        &mut self,
        material: &Material,
        rho_bar: &DensityField,
        warm: Option<&[f64]>,
    ) -> Result<SolveResult> {
        material.validate()?;
        if (material.nu - self.nu).abs() > 1e-14 {
            return Err(Error::Config("Poisson ratio differs from the context's".into()));
        }
        if rho_bar.grid() != &self.mesh.grid {
            return Err(Error::Shape("field grid does not match the mesh".into()));
        }
        let e: Vec<f64> = rho_bar.values().par_iter().map(|&r| material.youngs(r)).collect();
        let (u, iters) = match &mut self.backend {
            Backend::Dense(d) => {
                let fine = self.fine.as_mut().unwrap();
                fine.e.copy_from_slice(&e);
                d.factor(fine)?;
                (d.solve(&self.f)?, 0)
            }
            Backend::Sparse(s) => {
                let fine = self.fine.as_mut().unwrap();
                fine.e.copy_from_slice(&e);
                s.factor(fine)?;
                (s.solve(&self.f)?, 0)
            }
            Backend::Multigrid(mg) => {
                mg.set_moduli(&e)?;
                let mut u = match warm {
                    Some(w) if w.len() == self.f.len() => w.to_vec(),
                    _ => vec![0.0; self.f.len()],
                };
                let iters = mg.solve(&self.f, &mut u, RESIDUAL_TOL)?;
                (u, iters)
            }
        };
        if let Some(bad) = u.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite displacement {bad}")));
        }
        let res = relative_residual(self.fine_op(), &u, &self.f);
        if !(res <= RESIDUAL_TOL) {
            return Err(Error::Solver(format!(
                "solve residual {res:.3e} exceeds tolerance {RESIDUAL_TOL:.0e}"
            )));
        }
        self.snapshot += 1;
        Ok(SolveResult {
            u,
            material: *material,
            rho_bar: rho_bar.values().to_vec(),
            iters,
            snapshot: self.snapshot,
        })
    }

    /// Solve `K lambda = rhs` with the operator of `result`, reusing the
    /// factorization (direct) or hierarchy (multigrid).
    pub fn solve_adjoint(
        &mut self,
        result: &SolveResult,
        rhs: &[f64],
        warm: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        if result.snapshot != self.snapshot {
            return Err(Error::State(
                "adjoint requested for a stale solve result; re-solve first".into(),
            ));
        }
        let mut b = rhs.to_vec();
        let fixed = &self.fine_op().fixed;
        for (bi, fx) in b.iter_mut().zip(fixed.iter()) {
            if *fx {
                *bi = 0.0;
            }
        }
        let lambda = match &mut self.backend {
            Backend::Dense(d) => d.solve(&b)?,
            Backend::Sparse(s) => s.solve(&b)?,
            Backend::Multigrid(mg) => {
                let mut x = match warm {
                    Some(w) if w.len() == b.len() => w.to_vec(),
                    _ => vec![0.0; b.len()],
                };
                mg.solve(&b, &mut x, RESIDUAL_TOL)?;
                x
            }
        };
        Ok(lambda)
    }

    /// Per-element cross energies `lambda_e' k0 u_e` with the unit-modulus
    /// element matrix.
    fn cross_energies(&self, u: &[f64], lambda: &[f64]) -> Vec<f64> {
        let op = self.fine_op();
        let grid = &op.grid;
        let n = grid.n_elems();
        (0..n)
            .into_par_iter()
            .map(|elem| {
                let (i, j, k) = grid.coords(elem);
                match &op.ke {
                    ElemKe::Quad(ke) => {
                        let dofs = op.elem_dofs_2d(i, j);
                        let mut acc = 0.0;
                        for (a, &ra) in dofs.iter().enumerate() {
                            let la = if op.fixed[ra] { 0.0 } else { lambda[ra] };
                            if la == 0.0 {
                                continue;
                            }
                            let mut row = 0.0;
                            for (b, &cb) in dofs.iter().enumerate() {
                                let ub = if op.fixed[cb] { 0.0 } else { u[cb] };
                                row += ke[a][b] * ub;
                            }
                            acc += la * row;
                        }
                        acc
                    }
                    ElemKe::Hex(ke) => {
                        let dofs = op.elem_dofs_3d(i, j, k);
                        let mut acc = 0.0;
                        for (a, &ra) in dofs.iter().enumerate() {
                            let la = if op.fixed[ra] { 0.0 } else { lambda[ra] };
                            if la == 0.0 {
                                continue;
                            }
                            let mut row = 0.0;
                            for (b, &cb) in dofs.iter().enumerate() {
                                let ub = if op.fixed[cb] { 0.0 } else { u[cb] };
                                row += ke[a][b] * ub;
                            }
                            acc += la * row;
                        }
                        acc
                    }
                }
            })
            .collect()
    }

    /// Compliance `c = f' u` (springs excluded from `f`) and its gradient
    /// with respect to the projected densities (self-adjoint).
    pub fn compliance(&self, result: &SolveResult) -> (f64, Vec<f64>) {
        let c: f64 = self.bc.loads.iter().map(|&(d, v)| v * result.u[d]).sum();
        let energies = self.cross_energies(&result.u, &result.u);
        let m = &result.material;
        let grad: Vec<f64> = energies
            .par_iter()
            .zip(result.rho_bar.par_iter())
            .map(|(&en, &r)| -m.dyoungs(r) * en)
            .collect();
        (c, grad)
    }

    /// Output displacement `c = u[output_dof]` with its adjoint gradient and
    /// the adjoint vector (for warm starts). The output dof must carry a
    /// spring (force-inverter convention) and be free.
    pub fn output_displacement(
        &mut self,
        result: &SolveResult,
        output_dof: usize,
        warm_adjoint: Option<&[f64]>,
    ) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        if self.fine_op().fixed.get(output_dof).copied().unwrap_or(true) {
            return Err(Error::Config(format!("output dof {output_dof} is fixed or out of range")));
        }
        if !self.bc.springs.iter().any(|&(d, _)| d == output_dof) {
            return Err(Error::Config(format!(
                "output dof {output_dof} carries no spring; attach the output stiffness first"
            )));
        }
        let mut rhs = vec![0.0; result.u.len()];
        rhs[output_dof] = 1.0;
        let lambda = self.solve_adjoint(result, &rhs, warm_adjoint)?;
        let energies = self.cross_energies(&result.u, &lambda);
        let m = &result.material;
        let grad: Vec<f64> = energies
            .par_iter()
            .zip(result.rho_bar.par_iter())
            .map(|(&en, &r)| -m.dyoungs(r) * en)
            .collect();
        Ok((result.u[output_dof], grad, lambda))
    }
}

/// One-shot assembly and solve, building a throwaway context.
pub fn assemble_and_solve(
    mesh: Mesh,
    bc: BoundaryConditions,
    material: &Material,
    rho_bar: &DensityField,
) -> Result<(FemContext, SolveResult)> {
    let mut ctx = FemContext::new(mesh, bc, material.nu)?;
    let result = ctx.solve(material, rho_bar, None)?;
    Ok((ctx, result))
}

/// Element-centroid von Mises stress of the solid material and the relaxed
/// measure `s_i = rho_bar_i^0.5 sigma_vm_i` (2D plane stress only).
#[derive(Debug, Clone)]
pub struct StressField {
    pub sigma_vm: Vec<f64>,
    pub relaxed: Vec<f64>,
}

/// Centroid stresses `[sx, sy, txy]` per element for the solid material.
fn centroid_stresses(ctx: &FemContext, u: &[f64]) -> Result<Vec<[f64; 3]>> {
    if ctx.mesh.dim() != 2 {
        return Err(Error::Unsupported("stress recovery is 2D-only in this build".into()));
    }
    let op = ctx.fine_op();
    let grid = &op.grid;
    let h = grid.elem_size;
    let b = b_quad(0.0, 0.0);
    let d = d_plane_stress(ctx.nu);
    let n = grid.n_elems();
    Ok((0..n)
        .into_par_iter()
        .map(|elem| {
            let (i, j, _) = grid.coords(elem);
            let dofs = op.elem_dofs_2d(i, j);
            let mut ue = [0.0; 8];
            for (a, &dd) in dofs.iter().enumerate() {
                ue[a] = if op.fixed[dd] { 0.0 } else { u[dd] };
            }
            let mut strain = [0.0; 3];
            for r in 0..3 {
                for c in 0..8 {
                    strain[r] += b[r][c] * ue[c];
                }
                strain[r] /= h;
            }
            let mut sigma = [0.0; 3];
            for r in 0..3 {
                for c in 0..3 {
                    sigma[r] += d[r][c] * strain[c];
                }
            }
            sigma
        })
        .collect())
}

#[inline]
fn vm_of(sigma: &[f64; 3]) -> f64 {
    (sigma[0] * sigma[0] + sigma[1] * sigma[1] - sigma[0] * sigma[1]
        + 3.0 * sigma[2] * sigma[2])
        .max(0.0)
        .sqrt()
}

/// Von Mises stress of the solid material at element centroids, with the
/// density-relaxed measure used by stress constraints.
pub fn von_mises(ctx: &FemContext, result: &SolveResult) -> Result<StressField> {
    let sigmas = centroid_stresses(ctx, &result.u)?;
    let sigma_vm: Vec<f64> = sigmas.par_iter().map(vm_of).collect();
    let relaxed: Vec<f64> = sigma_vm
        .par_iter()
        .zip(result.rho_bar.par_iter())
        .map(|(&vm, &r)| r.max(0.0).sqrt() * vm)
        .collect();
    Ok(StressField { sigma_vm, relaxed })
}

/// p-mean aggregate of the relaxed stresses normalized by the limit,
/// `G = (mean (s_i/sigma*)^p)^(1/p) - 1 <= 0`, with its full adjoint gradient
/// with respect to the projected densities. Also returns the adjoint vector
/// for warm starts.
pub fn aggregated_stress(
    ctx: &mut FemContext,
    result: &SolveResult,
    sigma_star: f64,
    p_agg: f64,
    warm_adjoint: Option<&[f64]>,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if !(sigma_star > 0.0) {
        return Err(Error::Config(format!("stress limit must be positive, got {sigma_star}")));
    }
    let sigmas = centroid_stresses(ctx, &result.u)?;
    let vm: Vec<f64> = sigmas.par_iter().map(vm_of).collect();
    let n = vm.len();
    let s: Vec<f64> = vm
        .par_iter()
        .zip(result.rho_bar.par_iter())
        .map(|(&v, &r)| r.max(0.0).sqrt() * v)
        .collect();
    let m_max = crate::util::det_max(&s) / sigma_star;
    if m_max <= 0.0 {
        return Ok((-1.0, vec![0.0; n], vec![0.0; result.u.len()]));
    }
    let scaled: Vec<f64> =
        s.par_iter().map(|&si| (si / (sigma_star * m_max)).powf(p_agg)).collect();
    let mean = crate::util::det_sum(&scaled) / n as f64;
    let value = m_max * mean.powf(1.0 / p_agg) - 1.0;
    // w_i = dG/ds_i
    let coeff = mean.powf(1.0 / p_agg - 1.0) / (n as f64 * sigma_star);
    let w: Vec<f64> = s
        .par_iter()
        .map(|&si| coeff * (si / (sigma_star * m_max)).powf(p_agg - 1.0))
        .collect();

    // explicit density term: ds_i/drho_i = 0.5 rho^{-1/2} vm_i
    let mut grad: Vec<f64> = w
        .par_iter()
        .zip(result.rho_bar.par_iter().zip(vm.par_iter()))
        .map(|(&wi, (&r, &v))| wi * 0.5 * r.max(1e-12).powf(-0.5) * v)
        .collect();

    // adjoint right-hand side: dG/du
    let op = ctx.fine_op();
    let grid = op.grid;
    let h = grid.elem_size;
    let b = b_quad(0.0, 0.0);
    let d = d_plane_stress(ctx.nu);
    let mut rhs = vec![0.0; result.u.len()];
    for elem in 0..n {
        if w[elem] == 0.0 || vm[elem] <= 0.0 {
            continue;
        }
        let (i, j, _) = grid.coords(elem);
        let dofs = op.elem_dofs_2d(i, j);
        let sg = &sigmas[elem];
        let dvm = [
            (2.0 * sg[0] - sg[1]) / (2.0 * vm[elem]),
            (2.0 * sg[1] - sg[0]) / (2.0 * vm[elem]),
            6.0 * sg[2] / (2.0 * vm[elem]),
        ];
        let scale = w[elem] * result.rho_bar[elem].max(0.0).sqrt() / h;
        for (c, &dof) in dofs.iter().enumerate() {
            if op.fixed[dof] {
                continue;
            }
            let mut acc = 0.0;
            for r in 0..3 {
                for q in 0..3 {
                    acc += dvm[r] * d[r][q] * b[q][c];
                }
            }
            rhs[dof] += scale * acc;
        }
    }
    let lambda = ctx.solve_adjoint(result, &rhs, warm_adjoint)?;
    let energies = ctx.cross_energies(&result.u, &lambda);
    let m = &result.material;
    grad.par_iter_mut()
        .zip(energies.par_iter().zip(result.rho_bar.par_iter()))
        .for_each(|(g, (&en, &r))| {
            *g -= m.dyoungs(r) * en;
        });
    Ok((value, grad, lambda))
}

#[cfg(test)]
mod tests;
