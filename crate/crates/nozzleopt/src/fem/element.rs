//! Reference element stiffness matrices and centroid strain operators for
//! square bilinear quads (plane stress, unit thickness) and cubic trilinear
//! hexahedra, integrated with full Gauss quadrature.
//!
//! In 2D the stiffness of a square element is independent of its edge length;
//! in 3D it scales linearly with it. Both matrices below are for unit Young's
//! modulus; SIMP scaling multiplies them per element.

const GAUSS: f64 = 0.577_350_269_189_625_8; // 1/sqrt(3)

/// Plane-stress constitutive matrix for unit Young's modulus.
pub fn d_plane_stress(nu: f64) -> [[f64; 3]; 3] {
    let c = 1.0 / (1.0 - nu * nu);
    [[c, c * nu, 0.0], [c * nu, c, 0.0], [0.0, 0.0, c * (1.0 - nu) / 2.0]]
}

fn d_solid_3d(nu: f64) -> [[f64; 6]; 6] {
    let c = 1.0 / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let a = c * (1.0 - nu);
    let b = c * nu;
    let g = 1.0 / (2.0 * (1.0 + nu));
    [
        [a, b, b, 0.0, 0.0, 0.0],
        [b, a, b, 0.0, 0.0, 0.0],
        [b, b, a, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, g, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, g, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, g],
    ]
}

/// Strain-displacement matrix of the unit-square Q4 element at local
/// coordinates `(xi, eta) in [-1, 1]^2`. Node order is counterclockwise from
/// the lower-left corner; dofs are `[ux0, uy0, ux1, uy1, ...]`.
pub fn b_quad(xi: f64, eta: f64) -> [[f64; 8]; 3] {
    // dN/dxi * dxi/dx with dxi/dx = 2 for the unit square
    let dndx = [
        -(1.0 - eta) / 2.0,
        (1.0 - eta) / 2.0,
        (1.0 + eta) / 2.0,
        -(1.0 + eta) / 2.0,
    ];
    let dndy = [
        -(1.0 - xi) / 2.0,
        -(1.0 + xi) / 2.0,
        (1.0 + xi) / 2.0,
        (1.0 - xi) / 2.0,
    ];
    let mut b = [[0.0; 8]; 3];
    for a in 0..4 {
        b[0][2 * a] = dndx[a];
        b[1][2 * a + 1] = dndy[a];
        b[2][2 * a] = dndy[a];
        b[2][2 * a + 1] = dndx[a];
    }
    b
}

/// Stiffness matrix of a unit-modulus square Q4 element (any edge length,
/// plane stress, unit thickness), 2x2 Gauss quadrature.
pub fn ke_quad(nu: f64) -> [[f64; 8]; 8] {
    let d = d_plane_stress(nu);
    let mut ke = [[0.0; 8]; 8];
    for &xi in &[-GAUSS, GAUSS] {
        for &eta in &[-GAUSS, GAUSS] {
            let b = b_quad(xi, eta);
            // detJ = 1/4 for the unit square mapped from [-1,1]^2
            let w = 0.25;
            for r in 0..8 {
                for c in 0..8 {
                    let mut acc = 0.0;
                    for i in 0..3 {
                        for j in 0..3 {
                            acc += b[i][r] * d[i][j] * b[j][c];
                        }
                    }
                    ke[r][c] += w * acc;
                }
            }
        }
    }
    ke
}

/// Strain-displacement matrix of the unit-cube H8 element at local
/// coordinates. Node order: bottom face counterclockwise, then top face;
/// dofs `[ux0, uy0, uz0, ux1, ...]`. Strain order
/// `[exx, eyy, ezz, gxy, gyz, gzx]`.
pub fn b_hex(xi: f64, eta: f64, zeta: f64) -> [[f64; 24]; 6] {
    let signs = [
        (-1.0, -1.0, -1.0),
        (1.0, -1.0, -1.0),
        (1.0, 1.0, -1.0),
        (-1.0, 1.0, -1.0),
        (-1.0, -1.0, 1.0),
        (1.0, -1.0, 1.0),
        (1.0, 1.0, 1.0),
        (-1.0, 1.0, 1.0),
    ];
    let mut b = [[0.0; 24]; 6];
    for (a, &(sx, sy, sz)) in signs.iter().enumerate() {
        // dN/dx = sx (1 + sy eta)(1 + sz zeta)/8 * 2 for the unit cube
        let dndx = sx * (1.0 + sy * eta) * (1.0 + sz * zeta) / 4.0;
        let dndy = sy * (1.0 + sx * xi) * (1.0 + sz * zeta) / 4.0;
        let dndz = sz * (1.0 + sx * xi) * (1.0 + sy * eta) / 4.0;
        let (ux, uy, uz) = (3 * a, 3 * a + 1, 3 * a + 2);
        b[0][ux] = dndx;
        b[1][uy] = dndy;
        b[2][uz] = dndz;
        b[3][ux] = dndy;
        b[3][uy] = dndx;
        b[4][uy] = dndz;
        b[4][uz] = dndy;
        b[5][ux] = dndz;
        b[5][uz] = dndx;
    }
    b
}

/// Stiffness matrix of a unit-modulus, unit-edge H8 element, 2x2x2 Gauss
/// quadrature. Scale by the edge length for other element sizes.
pub fn ke_hex(nu: f64) -> [[f64; 24]; 24] {
    let d = d_solid_3d(nu);
    let mut ke = [[0.0; 24]; 24];
    for &xi in &[-GAUSS, GAUSS] {
        for &eta in &[-GAUSS, GAUSS] {
            for &zeta in &[-GAUSS, GAUSS] {
                let b = b_hex(xi, eta, zeta);
                let w = 0.125; // detJ of the unit cube
                for r in 0..24 {
                    for c in 0..24 {
                        let mut acc = 0.0;
                        for i in 0..6 {
                            for j in 0..6 {
                                acc += b[i][r] * d[i][j] * b[j][c];
                            }
                        }
                        ke[r][c] += w * acc;
                    }
                }
            }
        }
    }
    ke
}

#[cfg(test)]
mod tests {
    use super::*;

    // Exact integration of the Q4 plane-stress stiffness (E=1, nu=0.3),
    // frozen from a symbolic computation; identical to the classical
    // closed-form eight-coefficient pattern.
    #[rustfmt::skip]
    const KE_Q4_NU03: [[f64; 8]; 8] = [
        [ 4.9450549450549453e-01,  1.7857142857142858e-01, -3.0219780219780218e-01, -1.3736263736263736e-02, -2.4725274725274726e-01, -1.7857142857142858e-01,  5.4945054945054944e-02,  1.3736263736263736e-02],
        [ 1.7857142857142858e-01,  4.9450549450549453e-01,  1.3736263736263736e-02,  5.4945054945054944e-02, -1.7857142857142858e-01, -2.4725274725274726e-01, -1.3736263736263736e-02, -3.0219780219780218e-01],
        [-3.0219780219780218e-01,  1.3736263736263736e-02,  4.9450549450549453e-01, -1.7857142857142858e-01,  5.4945054945054944e-02, -1.3736263736263736e-02, -2.4725274725274726e-01,  1.7857142857142858e-01],
        [-1.3736263736263736e-02,  5.4945054945054944e-02, -1.7857142857142858e-01,  4.9450549450549453e-01,  1.3736263736263736e-02, -3.0219780219780218e-01,  1.7857142857142858e-01, -2.4725274725274726e-01],
        [-2.4725274725274726e-01, -1.7857142857142858e-01,  5.4945054945054944e-02,  1.3736263736263736e-02,  4.9450549450549453e-01,  1.7857142857142858e-01, -3.0219780219780218e-01, -1.3736263736263736e-02],
        [-1.7857142857142858e-01, -2.4725274725274726e-01, -1.3736263736263736e-02, -3.0219780219780218e-01,  1.7857142857142858e-01,  4.9450549450549453e-01,  1.3736263736263736e-02,  5.4945054945054944e-02],
        [ 5.4945054945054944e-02, -1.3736263736263736e-02, -2.4725274725274726e-01,  1.7857142857142858e-01, -3.0219780219780218e-01,  1.3736263736263736e-02,  4.9450549450549453e-01, -1.7857142857142858e-01],
        [ 1.3736263736263736e-02, -3.0219780219780218e-01,  1.7857142857142858e-01, -2.4725274725274726e-01, -1.3736263736263736e-02,  5.4945054945054944e-02, -1.7857142857142858e-01,  4.9450549450549453e-01],
    ];

    #[test]
    fn quad_matches_exact_integration() {
        let ke = ke_quad(0.3);
        for r in 0..8 {
            for c in 0..8 {
                assert!(
                    (ke[r][c] - KE_Q4_NU03[r][c]).abs() < 1e-14,
                    "entry ({r},{c}): {} vs {}",
                    ke[r][c],
                    KE_Q4_NU03[r][c]
                );
            }
        }
    }

    #[test]
    fn quad_rigid_body_modes_are_null() {
        let ke = ke_quad(0.3);
        // translations and in-plane rotation about the element center
        let coords = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        let tx: Vec<f64> = (0..8).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let ty: Vec<f64> = (0..8).map(|i| if i % 2 == 1 { 1.0 } else { 0.0 }).collect();
        let rot: Vec<f64> = coords
            .iter()
            .flat_map(|&(x, y)| [-(y - 0.5), x - 0.5])
            .collect();
        for mode in [tx, ty, rot] {
            for r in 0..8 {
                let v: f64 = (0..8).map(|c| ke[r][c] * mode[c]).sum();
                assert!(v.abs() < 1e-13, "row {r} residual {v}");
            }
        }
    }

    #[test]
    fn hex_is_symmetric_with_rigid_nullspace() {
        let ke = ke_hex(0.3);
        for r in 0..24 {
            for c in 0..24 {
                assert!((ke[r][c] - ke[c][r]).abs() < 1e-13);
            }
        }
        let coords = [
            (0.0, 0.0, 0.0),
            (1.0, 0.0, 0.0),
            (1.0, 1.0, 0.0),
            (0.0, 1.0, 0.0),
            (0.0, 0.0, 1.0),
            (1.0, 0.0, 1.0),
            (1.0, 1.0, 1.0),
            (0.0, 1.0, 1.0),
        ];
        // three translations and three rotations about the center
        let mut modes: Vec<Vec<f64>> = Vec::new();
        for d in 0..3 {
            modes.push((0..24).map(|i| if i % 3 == d { 1.0 } else { 0.0 }).collect());
        }
        modes.push(coords.iter().flat_map(|&(_, y, z)| [0.0, -(z - 0.5), y - 0.5]).collect());
        modes.push(coords.iter().flat_map(|&(x, _, z)| [z - 0.5, 0.0, -(x - 0.5)]).collect());
        modes.push(coords.iter().flat_map(|&(x, y, _)| [-(y - 0.5), x - 0.5, 0.0]).collect());
        for mode in modes {
            for r in 0..24 {
                let v: f64 = (0..24).map(|c| ke[r][c] * mode[c]).sum();
                assert!(v.abs() < 1e-13, "row {r} residual {v}");
            }
        }
    }

    #[test]
    fn hex_uniform_strain_energy_is_exact() {
        // u = [x*e, 0, 0]: strain exx = e everywhere; energy density
        // 0.5 * D[0][0] * e^2 over the unit cube
        let ke = ke_hex(0.3);
        let e = 0.37;
        let coords = [
            (0.0, 0.0, 0.0),
            (1.0, 0.0, 0.0),
            (1.0, 1.0, 0.0),
            (0.0, 1.0, 0.0),
            (0.0, 0.0, 1.0),
            (1.0, 0.0, 1.0),
            (1.0, 1.0, 1.0),
            (0.0, 1.0, 1.0),
        ];
        let u: Vec<f64> = coords.iter().flat_map(|&(x, _, _)| [x * e, 0.0, 0.0]).collect();
        let mut energy = 0.0;
        for r in 0..24 {
            for c in 0..24 {
                energy += 0.5 * u[r] * ke[r][c] * u[c];
            }
        }
        let d = d_solid_3d(0.3);
        let exact = 0.5 * d[0][0] * e * e;
        assert!((energy - exact).abs() < 1e-13, "{energy} vs {exact}");
    }
}
