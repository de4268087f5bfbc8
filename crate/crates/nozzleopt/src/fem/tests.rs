use super::*;
use crate::field::{DensityField, Grid};

fn cantilever_bc(mesh: &Mesh, load_dir: usize, magnitude: f64) -> BoundaryConditions {
    // left edge fully clamped, point load at the middle of the right edge
    let mut bc = BoundaryConditions::default();
    for j in 0..=mesh.grid.ny {
        bc.fixed.push(mesh.dof(0, j, 0, 0));
        bc.fixed.push(mesh.dof(0, j, 0, 1));
    }
    bc.loads.push((mesh.dof(mesh.grid.nx, mesh.grid.ny / 2, 0, load_dir), magnitude));
    bc
}

#[test]
fn single_element_matches_hand_assembled_oracle() {
    // frozen 8-dof solve: unit square, left edge fixed, unit -y load at the
    // top-right node
    let mesh = Mesh::new(Grid::new_2d(1, 1, 1.0));
    let mut bc = BoundaryConditions::default();
    for j in 0..=1 {
        bc.fixed.push(mesh.dof(0, j, 0, 0));
        bc.fixed.push(mesh.dof(0, j, 0, 1));
    }
    bc.loads.push((mesh.dof(1, 1, 0, 1), -1.0));
    let material = Material::default();
    let rho = DensityField::uniform(mesh.grid, 1.0);
    let (ctx, res) = assemble_and_solve(mesh, bc, &material, &rho).unwrap();
    let expect = [
        (mesh.dof(1, 0, 0, 0), -1.8214869281045736),
        (mesh.dof(1, 0, 0, 1), -3.9531045751633953),
        (mesh.dof(1, 1, 0, 0), 2.2229575163398678),
        (mesh.dof(1, 1, 0, 1), -5.2913398692810425),
    ];
    for (dof, val) in expect {
        assert!(
            (res.u[dof] - val).abs() < 1e-9,
            "dof {dof}: {} vs oracle {val}",
            res.u[dof]
        );
    }
    let (c, _) = ctx.compliance(&res);
    assert!((c - 5.2913398692810425).abs() < 1e-9);
}

#[test]
fn void_field_scales_displacements_by_stiffness_ratio() {
    let mesh = Mesh::new(Grid::new_2d(4, 2, 1.0));
    let material = Material::default();
    let bc = cantilever_bc(&mesh, 1, -1.0);
    let solid = DensityField::uniform(mesh.grid, 1.0);
    let (_, rs) = assemble_and_solve(mesh, bc.clone(), &material, &solid).unwrap();
    let void = DensityField::uniform(mesh.grid, 0.0);
    let (_, rv) = assemble_and_solve(mesh, bc, &material, &void).unwrap();
    let ratio = material.e0 / material.emin;
    for (uv, us) in rv.u.iter().zip(&rs.u) {
        if us.abs() > 1e-12 {
            assert!(
                ((uv / us) - ratio).abs() / ratio < 1e-6,
                "ratio {} vs {ratio}",
                uv / us
            );
        }
    }
}

#[test]
fn doubled_load_doubles_displacements_and_quadruples_compliance() {
    let mesh = Mesh::new(Grid::new_2d(5, 3, 1.0));
    let material = Material::default();
    let rho = DensityField::uniform(mesh.grid, 0.6);
    let (ctx1, r1) = assemble_and_solve(mesh, cantilever_bc(&mesh, 1, -1.0), &material, &rho).unwrap();
    let (ctx2, r2) = assemble_and_solve(mesh, cantilever_bc(&mesh, 1, -2.0), &material, &rho).unwrap();
    for (a, b) in r1.u.iter().zip(&r2.u) {
        assert!((2.0 * a - b).abs() < 1e-9 * b.abs().max(1.0));
    }
    let (c1, _) = ctx1.compliance(&r1);
    let (c2, _) = ctx2.compliance(&r2);
    assert!((c2 / c1 - 4.0).abs() < 1e-9);
}

#[test]
fn compliance_ratio_void_over_solid_is_stiffness_ratio() {
    let mesh = Mesh::new(Grid::new_2d(3, 2, 1.0));
    let material = Material::default();
    let bc = cantilever_bc(&mesh, 1, -1.0);
    let (ctx_s, rs) =
        assemble_and_solve(mesh, bc.clone(), &material, &DensityField::uniform(mesh.grid, 1.0))
            .unwrap();
    let (ctx_v, rv) =
        assemble_and_solve(mesh, bc, &material, &DensityField::uniform(mesh.grid, 0.0)).unwrap();
    let (cs, _) = ctx_s.compliance(&rs);
    let (cv, _) = ctx_v.compliance(&rv);
    let expect = material.e0 / material.emin;
    assert!((cv / cs - expect).abs() / expect < 1e-6);
}

fn pseudo_random_field(grid: Grid, lo: f64, hi: f64, seed: usize) -> DensityField {
    let n = grid.n_elems();
    let vals: Vec<f64> = (0..n)
        .map(|i| {
            let r = ((i * 2654435761 + seed * 97) % 10_000) as f64 / 10_000.0;
            lo + (hi - lo) * r
        })
        .collect();
    DensityField::from_values(grid, vals).unwrap()
}

#[test]
fn compliance_gradient_matches_central_differences() {
    let mesh = Mesh::new(Grid::new_2d(4, 3, 1.0));
    let material = Material { simp_p: 3.0, ..Material::default() };
    let bc = cantilever_bc(&mesh, 1, -1.0);
    let base = pseudo_random_field(mesh.grid, 0.25, 0.95, 7);
    let (ctx, res) = assemble_and_solve(mesh, bc.clone(), &material, &base).unwrap();
    let (_, grad) = ctx.compliance(&res);
    let h = 1e-6;
    for e in 0..mesh.grid.n_elems() {
        let mut up = base.values().to_vec();
        let mut dn = up.clone();
        up[e] += h;
        dn[e] -= h;
        let cu = {
            let f = DensityField::from_values(mesh.grid, up).unwrap();
            let (ctx2, r) = assemble_and_solve(mesh, bc.clone(), &material, &f).unwrap();
            ctx2.compliance(&r).0
        };
        let cd = {
            let f = DensityField::from_values(mesh.grid, dn).unwrap();
            let (ctx2, r) = assemble_and_solve(mesh, bc.clone(), &material, &f).unwrap();
            ctx2.compliance(&r).0
        };
        let fd = (cu - cd) / (2.0 * h);
        assert!(
            (grad[e] - fd).abs() / fd.abs().max(1e-8) < 1e-5,
            "element {e}: adjoint {} vs fd {fd}",
            grad[e]
        );
    }
}

fn spring_bc(mesh: &Mesh) -> (BoundaryConditions, usize, usize) {
    // left edge clamped; input spring+load on the left-bottom x dof is not
    // needed here: drive the structure at the mid-right x dof and read the
    // same dof (spring attached).
    let mut bc = BoundaryConditions::default();
    for j in 0..=mesh.grid.ny {
        bc.fixed.push(mesh.dof(0, j, 0, 0));
        bc.fixed.push(mesh.dof(0, j, 0, 1));
    }
    let in_dof = mesh.dof(mesh.grid.nx, mesh.grid.ny / 2, 0, 0);
    let out_dof = mesh.dof(mesh.grid.nx, mesh.grid.ny, 0, 0);
    bc.loads.push((in_dof, 1.0));
    bc.springs.push((in_dof, 0.1));
    bc.springs.push((out_dof, 0.1));
    (bc, in_dof, out_dof)
}

#[test]
fn output_at_input_dof_equals_compliance_for_unit_load() {
    let mesh = Mesh::new(Grid::new_2d(5, 4, 1.0));
    let material = Material::default();
    let (bc, in_dof, _) = spring_bc(&mesh);
    let rho = pseudo_random_field(mesh.grid, 0.4, 1.0, 3);
    let (mut ctx, res) = assemble_and_solve(mesh, bc, &material, &rho).unwrap();
    let (c, _) = ctx.compliance(&res);
    let (uout, _, _) = ctx.output_displacement(&res, in_dof, None).unwrap();
    assert!((uout - c).abs() < 1e-12);
}

#[test]
fn zero_load_gives_zero_output() {
    let mesh = Mesh::new(Grid::new_2d(4, 3, 1.0));
    let material = Material::default();
    let (mut bc, _, out_dof) = spring_bc(&mesh);
    bc.loads.clear();
    let rho = DensityField::uniform(mesh.grid, 0.7);
    let mut ctx = FemContext::new(mesh, bc, material.nu).unwrap();
    let res = ctx.solve(&material, &rho, None).unwrap();
    let (uout, _, _) = ctx.output_displacement(&res, out_dof, None).unwrap();
    assert_eq!(uout, 0.0);
}

#[test]
fn output_displacement_gradient_matches_fd() {
    let mesh = Mesh::new(Grid::new_2d(5, 3, 1.0));
    let material = Material::default();
    let (bc, _, out_dof) = spring_bc(&mesh);
    let base = pseudo_random_field(mesh.grid, 0.3, 0.9, 11);
    let (mut ctx, res) = assemble_and_solve(mesh, bc.clone(), &material, &base).unwrap();
    let (_, grad, _) = ctx.output_displacement(&res, out_dof, None).unwrap();
    let h = 1e-6;
    for e in (0..mesh.grid.n_elems()).step_by(2) {
        let eval = |vals: Vec<f64>| {
            let f = DensityField::from_values(mesh.grid, vals).unwrap();
            let (mut c2, r) = assemble_and_solve(mesh, bc.clone(), &material, &f).unwrap();
            c2.output_displacement(&r, out_dof, None).unwrap().0
        };
        let mut up = base.values().to_vec();
        let mut dn = up.clone();
        up[e] += h;
        dn[e] -= h;
        let fd = (eval(up) - eval(dn)) / (2.0 * h);
        assert!(
            (grad[e] - fd).abs() / fd.abs().max(1e-8) < 1e-5,
            "element {e}: adjoint {} vs fd {fd}",
            grad[e]
        );
    }
}

#[test]
fn fixed_output_dof_is_rejected() {
    let mesh = Mesh::new(Grid::new_2d(3, 3, 1.0));
    let material = Material::default();
    let (bc, _, _) = spring_bc(&mesh);
    let rho = DensityField::uniform(mesh.grid, 0.5);
    let (mut ctx, res) = assemble_and_solve(mesh, bc, &material, &rho).unwrap();
    let fixed_dof = mesh.dof(0, 0, 0, 0);
    assert!(matches!(
        ctx.output_displacement(&res, fixed_dof, None),
        Err(Error::Config(_))
    ));
}

/// Uniaxial unit-stress patch: symmetry constraints on the left/bottom edges
/// and consistent tractions on the right edge.
fn uniaxial_patch_2d(n: usize) -> (Mesh, BoundaryConditions) {
    let mesh = Mesh::new(Grid::new_2d(n, n, 1.0));
    let mut bc = BoundaryConditions::default();
    for j in 0..=n {
        bc.fixed.push(mesh.dof(0, j, 0, 0));
    }
    for i in 0..=n {
        bc.fixed.push(mesh.dof(i, 0, 0, 1));
    }
    for j in 0..=n {
        let w = if j == 0 || j == n { 0.5 } else { 1.0 };
        bc.loads.push((mesh.dof(n, j, 0, 0), w));
    }
    (mesh, bc)
}

#[test]
fn uniaxial_patch_gives_unit_von_mises() {
    let (mesh, bc) = uniaxial_patch_2d(2);
    let material = Material::default();
    let rho = DensityField::uniform(mesh.grid, 1.0);
    let (ctx, res) = assemble_and_solve(mesh, bc, &material, &rho).unwrap();
    let stress = von_mises(&ctx, &res).unwrap();
    for &vm in &stress.sigma_vm {
        assert!((vm - 1.0).abs() < 1e-10, "vm = {vm}");
    }
    // exact uniform strain: ux = x * sigma/E
    for i in 0..=2 {
        assert!((res.u[mesh.dof(i, 1, 0, 0)] - i as f64).abs() < 1e-10);
    }
}

#[test]
fn equibiaxial_patch_von_mises_equals_principal_stress() {
    // sigma_x = sigma_y, tau = 0: von Mises reduces to |sigma_x|
    let (mesh, mut bc) = uniaxial_patch_2d(2);
    for i in 0..=2 {
        let w = if i == 0 || i == 2 { 0.5 } else { 1.0 };
        bc.loads.push((mesh.dof(i, 2, 0, 1), w));
    }
    let material = Material::default();
    let rho = DensityField::uniform(mesh.grid, 1.0);
    let (ctx, res) = assemble_and_solve(mesh, bc, &material, &rho).unwrap();
    let stress = von_mises(&ctx, &res).unwrap();
    for &vm in &stress.sigma_vm {
        assert!((vm - 1.0).abs() < 1e-10, "vm = {vm}");
    }
}

#[test]
fn relaxed_stress_vanishes_in_void() {
    let (mesh, bc) = uniaxial_patch_2d(2);
    let material = Material::default();
    let rho = DensityField::uniform(mesh.grid, 0.0);
    let (ctx, res) = assemble_and_solve(mesh, bc, &material, &rho).unwrap();
    let stress = von_mises(&ctx, &res).unwrap();
    for &s in &stress.relaxed {
        assert_eq!(s, 0.0);
    }
}

#[test]
fn stress_in_3d_is_unsupported() {
    let mesh = Mesh::new(Grid::new_3d(2, 2, 2, 1.0));
    let mut bc = BoundaryConditions::default();
    for j in 0..=2 {
        for k in 0..=2 {
            for d in 0..3 {
                bc.fixed.push(mesh.dof(0, j, k, d));
            }
        }
    }
    bc.loads.push((mesh.dof(2, 2, 2, 1), -1.0));
    let material = Material::default();
    let rho = DensityField::uniform(mesh.grid, 1.0);
    let (ctx, res) = assemble_and_solve(mesh, bc, &material, &rho).unwrap();
    assert!(matches!(von_mises(&ctx, &res), Err(Error::Unsupported(_))));
}

#[test]
fn aggregated_stress_gradient_matches_fd() {
    let mesh = Mesh::new(Grid::new_2d(4, 3, 1.0));
    let material = Material::default();
    let bc = cantilever_bc(&mesh, 1, -1.0);
    let base = pseudo_random_field(mesh.grid, 0.35, 0.95, 23);
    let sigma_star = 2.0;
    let p_agg = 12.0;
    let (mut ctx, res) = assemble_and_solve(mesh, bc.clone(), &material, &base).unwrap();
    let (_, grad, _) = aggregated_stress(&mut ctx, &res, sigma_star, p_agg, None).unwrap();
    let h = 1e-6;
    for e in (0..mesh.grid.n_elems()).step_by(2) {
        let eval = |vals: Vec<f64>| {
            let f = DensityField::from_values(mesh.grid, vals).unwrap();
            let (mut c2, r) = assemble_and_solve(mesh, bc.clone(), &material, &f).unwrap();
            aggregated_stress(&mut c2, &r, sigma_star, p_agg, None).unwrap().0
        };
        let mut up = base.values().to_vec();
        let mut dn = up.clone();
        up[e] += h;
        dn[e] -= h;
        let fd = (eval(up) - eval(dn)) / (2.0 * h);
        assert!(
            (grad[e] - fd).abs() / fd.abs().max(1e-8) < 1e-4,
            "element {e}: adjoint {} vs fd {fd}",
            grad[e]
        );
    }
}

#[test]
fn transverse_load_response_is_mirror_symmetric() {
    let mesh = Mesh::new(Grid::new_2d(8, 6, 1.0));
    let material = Material::default();
    let bc = cantilever_bc(&mesh, 1, -1.0);
    let rho = DensityField::uniform(mesh.grid, 0.8);
    let (_, res) = assemble_and_solve(mesh, bc, &material, &rho).unwrap();
    // mirror about the mid-line: ux odd, uy even
    for i in 0..=8 {
        for d in 0..=3 {
            let top = mesh.node(i, 3 + d, 0);
            let bot = mesh.node(i, 3 - d, 0);
            assert!((res.u[2 * top] + res.u[2 * bot]).abs() < 1e-9);
            assert!((res.u[2 * top + 1] - res.u[2 * bot + 1]).abs() < 1e-9);
        }
    }
}

#[test]
fn multigrid_agrees_with_dense_reference() {
    // 10x6x6 3D grid: 1617 dofs, above the dense limit, so the context picks
    // multigrid; cross-check against an independent dense factorization
    let mesh = Mesh::new(Grid::new_3d(10, 6, 6, 1.0));
    let mut bc = BoundaryConditions::default();
    for j in 0..=6 {
        for k in 0..=6 {
            for d in 0..3 {
                bc.fixed.push(mesh.dof(0, j, k, d));
            }
        }
    }
    bc.loads.push((mesh.dof(10, 3, 3, 1), -1.0));
    bc.loads.push((mesh.dof(10, 0, 3, 1), -0.5));
    let material = Material::default();
    let rho = pseudo_random_field(mesh.grid, 0.2, 1.0, 5);
    let (mut ctx, res) = assemble_and_solve(mesh, bc.clone(), &material, &rho).unwrap();
    assert!(matches!(ctx.backend, Backend::Multigrid(_)));
    assert!(res.iters > 0);

    // independent dense solve of the same operator
    let mut fixed = vec![false; mesh.n_dofs()];
    for &d in &bc.fixed {
        fixed[d] = true;
    }
    let mut op = LevelOp {
        grid: mesh.grid,
        ke: ElemKe::new(&mesh.grid, material.nu),
        e: rho.values().iter().map(|&r| material.youngs(r)).collect(),
        fixed,
        springs: vec![],
        diag: Vec::new(),
    };
    op.rebuild_diag();
    let dense = op.assemble_dense();
    let llt = dense.llt(faer::Side::Lower).unwrap();
    let mut rhs = faer::Mat::<f64>::zeros(mesh.n_dofs(), 1);
    for &(d, v) in &bc.loads {
        rhs[(d, 0)] = v;
    }
    use faer::linalg::solvers::Solve;
    llt.solve_in_place(rhs.as_mut());
    let norm: f64 = res.u.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut err = 0.0_f64;
    for (i, ui) in res.u.iter().enumerate() {
        err += (ui - rhs[(i, 0)]).powi(2);
    }
    let rel = err.sqrt() / norm;
    assert!(rel < 1e-6, "multigrid vs dense relative error {rel}");
}

#[test]
fn sparse_direct_agrees_with_multigrid_in_2d() {
    let mesh = Mesh::new(Grid::new_2d(40, 20, 1.0));
    let material = Material::default();
    let bc = cantilever_bc(&mesh, 1, -1.0);
    let rho = pseudo_random_field(mesh.grid, 0.3, 1.0, 9);
    // default backend: sparse direct (1722 dofs)
    let (ctx, res_direct) = assemble_and_solve(mesh, bc.clone(), &material, &rho).unwrap();
    assert!(matches!(ctx.backend, Backend::Sparse(_)));
    // forced multigrid on the same problem
    let mut ctx_mg = FemContext::new_with_limits(mesh, bc, material.nu, 0, 0).unwrap();
    assert!(matches!(ctx_mg.backend, Backend::Multigrid(_)));
    let res_mg = ctx_mg.solve(&material, &rho, None).unwrap();
    let norm: f64 = res_direct.u.iter().map(|v| v * v).sum::<f64>().sqrt();
    let err: f64 = res_direct
        .u
        .iter()
        .zip(&res_mg.u)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    assert!(err / norm < 1e-6, "direct vs multigrid relative error {}", err / norm);
}

#[test]
fn stale_adjoint_is_rejected() {
    let mesh = Mesh::new(Grid::new_2d(4, 3, 1.0));
    let material = Material::default();
    let (bc, _, out_dof) = spring_bc(&mesh);
    let mut ctx = FemContext::new(mesh, bc, material.nu).unwrap();
    let r1 = ctx.solve(&material, &DensityField::uniform(mesh.grid, 0.5), None).unwrap();
    let _r2 = ctx.solve(&material, &DensityField::uniform(mesh.grid, 0.6), None).unwrap();
    assert!(matches!(
        ctx.output_displacement(&r1, out_dof, None),
        Err(Error::State(_))
    ));
}

#[test]
fn missing_constraints_fail_as_solver_error() {
    let mesh = Mesh::new(Grid::new_2d(3, 3, 1.0));
    let bc = BoundaryConditions {
        fixed: vec![],
        loads: vec![(mesh.dof(3, 3, 0, 1), -1.0)],
        springs: vec![],
    };
    assert!(FemContext::new(mesh, bc, 0.3).is_err());
}

#[test]
fn uniaxial_patch_3d_reproduces_uniform_strain() {
    // triple-symmetry constraints and consistent face tractions: exact
    // uniform strain on an all-solid block
    let n = 2;
    let mesh = Mesh::new(Grid::new_3d(n, n, n, 1.0));
    let mut bc = BoundaryConditions::default();
    for j in 0..=n {
        for k in 0..=n {
            bc.fixed.push(mesh.dof(0, j, k, 0));
        }
    }
    for i in 0..=n {
        for k in 0..=n {
            bc.fixed.push(mesh.dof(i, 0, k, 1));
        }
    }
    for i in 0..=n {
        for j in 0..=n {
            bc.fixed.push(mesh.dof(i, j, 0, 2));
        }
    }
    for j in 0..=n {
        for k in 0..=n {
            let wj = if j == 0 || j == n { 0.5 } else { 1.0 };
            let wk = if k == 0 || k == n { 0.5 } else { 1.0 };
            bc.loads.push((mesh.dof(n, j, k, 0), wj * wk));
        }
    }
    let material = Material::default();
    let rho = DensityField::uniform(mesh.grid, 1.0);
    let (_, res) = assemble_and_solve(mesh, bc, &material, &rho).unwrap();
    // sigma_x = 1: ux = x, uy = -nu y, uz = -nu z
    for i in 0..=n {
        for j in 0..=n {
            for k in 0..=n {
                let (x, y, z) = (i as f64, j as f64, k as f64);
                assert!((res.u[mesh.dof(i, j, k, 0)] - x).abs() < 1e-9);
                assert!((res.u[mesh.dof(i, j, k, 1)] + material.nu * y).abs() < 1e-9);
                assert!((res.u[mesh.dof(i, j, k, 2)] + material.nu * z).abs() < 1e-9);
            }
        }
    }
}
