//! Built-in benchmark problems at native and reduced scales: the 2D and 3D
//! cantilevers, the L-beam with an optional stress constraint, and the half
//! force inverter.
//!
//! Geometry notes, where the classical setups leave freedom:
//!
//! * 2D cantilever: left edge fully clamped, unit point load at the middle of
//!   the right edge.
//! * 3D cantilever: the build direction is the height (y); the x = 0 face is
//!   clamped and a unit load is spread along the bottom edge of the free end.
//! * L-beam: square bounding grid with the upper-right quadrant passive; the
//!   top edge of the vertical arm is clamped and the load is spread over four
//!   nodes at the arm tip to avoid a stress singularity.
//! * Force inverter: top half modeled, symmetry line on the bottom edge;
//!   input spring and unit force on the left end of the symmetry line, output
//!   spring on the right end, upper-left corner clamped.

use crate::fem::{BoundaryConditions, Material, Mesh};
use crate::field::Grid;
use crate::lengthscale::{method1_lengthscale, method2_lengthscale};
use crate::maxsize::AggregationParams;
use crate::problems::{
    BuildGeometry, ContinuationSchedule, ProblemKind, ProblemSpec, SizeControl,
};
use crate::{Error, Result};

/// Size-control method selector shared by the benchmark constructors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Reference,
    SizeConstrained,
    AmConstrained,
}

/// Build direction handling for the 3D cantilever.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuildDirection {
    /// Layers orthogonal to the height; in-plane max-size regions.
    FixedAxis,
    /// Free (robot-arm style) deposition; spherical max-size regions.
    Free,
}

/// Spring stiffness attached to the inverter input/output ports, relative to
/// the solid Young's modulus and element size.
pub const INVERTER_SPRING: f64 = 0.1;

fn lengthscale_for(method: Method, r_nozzle: f64, elem: f64) -> Result<crate::lengthscale::LengthScaleSpec> {
    match method {
        // the reference run uses the same robust minimum-size parameters as
        // the uniform-width method, just without the max-size constraint
        Method::Reference | Method::SizeConstrained => method1_lengthscale(r_nozzle, elem, 2),
        Method::AmConstrained => method2_lengthscale(r_nozzle, elem, 2),
    }
}

fn kind_for(method: Method) -> ProblemKind {
    match method {
        Method::Reference => ProblemKind::Reference,
        Method::SizeConstrained => ProblemKind::SizeConstrained,
        Method::AmConstrained => ProblemKind::AmConstrained,
    }
}

/// 2D cantilever, 300 x 150 mm at 1 mm elements.
pub fn cantilever2d(v: f64, method: Method, r_nozzle: f64) -> Result<ProblemSpec> {
    cantilever2d_scaled(v, method, r_nozzle, 1.0)
}

/// 2D cantilever at a reduced resolution (element counts and lengths scale
/// together, so the element size stays 1 mm).
pub fn cantilever2d_scaled(v: f64, method: Method, r_nozzle: f64, scale: f64) -> Result<ProblemSpec> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::Config(format!("scale must lie in (0, 1], got {scale}")));
    }
    let nx = (300.0 * scale).round() as usize;
    let ny = (150.0 * scale).round() as usize;
    let mesh = Mesh::new(Grid::new_2d(nx, ny, 1.0));
    let mut bc = BoundaryConditions::default();
    for j in 0..=ny {
        bc.fixed.push(mesh.dof(0, j, 0, 0));
        bc.fixed.push(mesh.dof(0, j, 0, 1));
    }
    bc.loads.push((mesh.dof(nx, ny / 2, 0, 1), -1.0));
    Ok(ProblemSpec {
        kind: kind_for(method),
        mesh,
        bc,
        material: Material::default(),
        lengthscale: lengthscale_for(method, r_nozzle * scale, 1.0)?,
        volume_fraction: v,
        build: BuildGeometry::Planar2d,
        schedule: ContinuationSchedule::default(),
        aggregation: AggregationParams::default(),
        stress_agg_p: 100.0,
        passive: None,
    })
}

/// 3D cantilever, 240 x 120 x 96 mm at full scale with a 5 mm nozzle; the
/// desk-scale variant uses `scale = 0.5`.
pub fn cantilever3d(v: f64, method: Method, direction: BuildDirection, scale: f64) -> Result<ProblemSpec> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::Config(format!("scale must lie in (0, 1], got {scale}")));
    }
    let nx = (240.0 * scale).round() as usize;
    let ny = (120.0 * scale).round() as usize;
    let nz = (96.0 * scale).round() as usize;
    let r_nozzle = 5.0 * scale;
    let mesh = Mesh::new(Grid::new_3d(nx, ny, nz, 1.0));
    let mut bc = BoundaryConditions::default();
    for j in 0..=ny {
        for k in 0..=nz {
            for d in 0..3 {
                bc.fixed.push(mesh.dof(0, j, k, d));
            }
        }
    }
    // unit load spread along the bottom edge of the free end
    let w = 1.0 / (nz + 1) as f64;
    for k in 0..=nz {
        bc.loads.push((mesh.dof(nx, 0, k, 1), -w));
    }
    let build = match direction {
        BuildDirection::FixedAxis => BuildGeometry::FixedAxis { build_axis: 1 },
        BuildDirection::Free => BuildGeometry::FreeDirection,
    };
    Ok(ProblemSpec {
        kind: kind_for(method),
        mesh,
        bc,
        material: Material::default(),
        lengthscale: lengthscale_for(method, r_nozzle, 1.0)?,
        volume_fraction: v,
        build,
        schedule: ContinuationSchedule::default(),
        aggregation: AggregationParams::default(),
        stress_agg_p: 100.0,
        passive: None,
    })
}

/// L-beam variants: plain compliance, the skeleton method, and the skeleton
/// method with a stress bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LbeamVariant {
    Reference,
    AmConstrained,
    /// Stress limit, typically 0.8 x the reference design's peak.
    AmStress { sigma_star: f64 },
}

/// L-shaped beam: 200-element long edges, upper-right quadrant removed,
/// minimum solid radius of 4 elements. The projection cap is 20 and the SIMP
/// exponent stays at 3.
pub fn lbeam(v: f64, variant: LbeamVariant) -> Result<ProblemSpec> {
    let n = 200usize;
    let arm = n / 2;
    let mesh = Mesh::new(Grid::new_2d(n, n, 1.0));
    let mut bc = BoundaryConditions::default();
    // top edge of the vertical arm clamped
    for i in 0..=arm {
        bc.fixed.push(mesh.dof(i, n, 0, 0));
        bc.fixed.push(mesh.dof(i, n, 0, 1));
    }
    // load spread over 4 nodes at the tip of the horizontal arm
    for j in (arm - 3)..=arm {
        bc.loads.push((mesh.dof(n, j, 0, 1), -0.25));
    }
    // upper-right quadrant is outside the L
    let grid = mesh.grid;
    let mut passive = vec![false; grid.n_elems()];
    for j in arm..n {
        for i in arm..n {
            passive[grid.idx(i, j, 0)] = true;
        }
    }
    let active_fraction = 0.75;
    let method = match variant {
        LbeamVariant::Reference => Method::Reference,
        _ => Method::AmConstrained,
    };
    let kind = match variant {
        LbeamVariant::Reference => ProblemKind::Reference,
        LbeamVariant::AmConstrained => ProblemKind::AmConstrained,
        LbeamVariant::AmStress { sigma_star } => ProblemKind::AmStress { sigma_star },
    };
    Ok(ProblemSpec {
        kind,
        mesh,
        bc,
        material: Material::default(),
        lengthscale: lengthscale_for(method, 2.0, 1.0)?,
        volume_fraction: v * active_fraction,
        build: BuildGeometry::Planar2d,
        schedule: ContinuationSchedule {
            beta_cap: 20.0,
            ..ContinuationSchedule::default()
        }
        .with_fixed_simp(3.0),
        aggregation: AggregationParams::default(),
        stress_agg_p: 100.0,
        passive: Some(passive),
    })
}

/// Half force inverter: 200 x 100 elements, symmetry line along the bottom
/// edge, input on the left end of the symmetry line, output on the right.
/// Minimum solid radius 4 elements; SIMP fixed at 3, projection cap 38.
pub fn force_inverter(v: f64, method: Method) -> Result<ProblemSpec> {
    let (nx, ny) = (200usize, 100usize);
    let mesh = Mesh::new(Grid::new_2d(nx, ny, 1.0));
    let mut bc = BoundaryConditions::default();
    // symmetry: no vertical motion across the bottom edge
    for i in 0..=nx {
        bc.fixed.push(mesh.dof(i, 0, 0, 1));
    }
    // clamp the upper-left corner region
    for j in [ny - 1, ny] {
        bc.fixed.push(mesh.dof(0, j, 0, 0));
        bc.fixed.push(mesh.dof(0, j, 0, 1));
    }
    let input_dof = mesh.dof(0, 0, 0, 0);
    let output_dof = mesh.dof(nx, 0, 0, 0);
    bc.loads.push((input_dof, 1.0));
    bc.springs.push((input_dof, INVERTER_SPRING));
    bc.springs.push((output_dof, INVERTER_SPRING));
    let size_control = match method {
        Method::Reference => SizeControl::None,
        Method::SizeConstrained => SizeControl::DilatedField,
        Method::AmConstrained => SizeControl::IntermediateField,
    };
    Ok(ProblemSpec {
        kind: ProblemKind::ForceInverter { size_control, output_dof },
        mesh,
        bc,
        material: Material::default(),
        lengthscale: lengthscale_for(method, 2.0, 1.0)?,
        volume_fraction: v,
        build: BuildGeometry::Planar2d,
        schedule: ContinuationSchedule::default().with_fixed_simp(3.0),
        aggregation: AggregationParams::default(),
        stress_agg_p: 100.0,
        passive: None,
    })
}

/// Benchmark names exposed to the command-line front end.
pub const BENCHMARK_NAMES: [&str; 4] = ["cantilever2d", "cantilever3d", "lbeam", "inverter"];

/// Length scales small enough for derivative-verification meshes (minimum
/// member radius of two elements, one bead).
fn mini_lengthscale(thresholds: crate::field::Thresholds) -> crate::lengthscale::LengthScaleSpec {
    crate::lengthscale::LengthScaleSpec {
        r_nozzle: 2.0,
        r_min_solid: 2.0,
        min_size_target: crate::maxsize::TargetField::Int,
        r_min_void: 2.0,
        r_max: Some(3.0),
        r_fil: 4.0,
        thresholds,
        t_dil: 1.2,
        beads_per_member: 1,
    }
}

/// Small instance of a benchmark family for adjoint-versus-finite-difference
/// verification. `elems` bounds the long edge (clamped to a practical range);
/// every instance keeps all gradient paths of its family active.
pub fn gradcheck_instance(benchmark: &str, elems: usize) -> Result<ProblemSpec> {
    let thresholds = crate::field::Thresholds::new(0.75, 0.5, 0.25)?;
    let e = elems.clamp(8, 32);
    match benchmark {
        "cantilever2d" => {
            let (nx, ny) = (e, (e / 2).max(4));
            let mesh = Mesh::new(Grid::new_2d(nx, ny, 1.0));
            let mut bc = BoundaryConditions::default();
            for j in 0..=ny {
                bc.fixed.push(mesh.dof(0, j, 0, 0));
                bc.fixed.push(mesh.dof(0, j, 0, 1));
            }
            bc.loads.push((mesh.dof(nx, ny / 2, 0, 1), -1.0));
            Ok(ProblemSpec {
                kind: ProblemKind::SizeConstrained,
                mesh,
                bc,
                material: Material::default(),
                lengthscale: mini_lengthscale(thresholds),
                volume_fraction: 0.45,
                build: BuildGeometry::Planar2d,
                schedule: ContinuationSchedule::default(),
                aggregation: AggregationParams::default(),
                stress_agg_p: 100.0,
                passive: None,
            })
        }
        "cantilever3d" => {
            let nx = e.min(12);
            let (ny, nz) = ((nx / 2).max(4), (nx / 2).max(4));
            let mesh = Mesh::new(Grid::new_3d(nx, ny, nz, 1.0));
            let mut bc = BoundaryConditions::default();
            for j in 0..=ny {
                for k in 0..=nz {
                    for d in 0..3 {
                        bc.fixed.push(mesh.dof(0, j, k, d));
                    }
                }
            }
            for k in 0..=nz {
                bc.loads.push((mesh.dof(nx, 0, k, 1), -1.0 / (nz + 1) as f64));
            }
            Ok(ProblemSpec {
                kind: ProblemKind::SizeConstrained,
                mesh,
                bc,
                material: Material::default(),
                lengthscale: mini_lengthscale(thresholds),
                volume_fraction: 0.3,
                build: BuildGeometry::FixedAxis { build_axis: 1 },
                schedule: ContinuationSchedule::default(),
                aggregation: AggregationParams::default(),
                stress_agg_p: 100.0,
                passive: None,
            })
        }
        "lbeam" => {
            // stress-constrained variant: exercises the blended objective,
            // volume, max-size and stress rows at once
            let n = e.max(12);
            let arm = n / 2;
            let mesh = Mesh::new(Grid::new_2d(n, n, 1.0));
            let mut bc = BoundaryConditions::default();
            for i in 0..=arm {
                bc.fixed.push(mesh.dof(i, n, 0, 0));
                bc.fixed.push(mesh.dof(i, n, 0, 1));
            }
            bc.loads.push((mesh.dof(n, arm, 0, 1), -1.0));
            let grid = mesh.grid;
            let mut passive = vec![false; grid.n_elems()];
            for j in arm..n {
                for i in arm..n {
                    passive[grid.idx(i, j, 0)] = true;
                }
            }
            let ls = mini_lengthscale(crate::field::Thresholds::new(0.75, 0.5, 0.2)?);
            Ok(ProblemSpec {
                kind: ProblemKind::AmStress { sigma_star: 0.5 },
                mesh,
                bc,
                material: Material::default(),
                lengthscale: crate::lengthscale::LengthScaleSpec {
                    min_size_target: crate::maxsize::TargetField::Dil,
                    ..ls
                },
                volume_fraction: 0.35,
                build: BuildGeometry::Planar2d,
                schedule: ContinuationSchedule { beta_cap: 20.0, ..ContinuationSchedule::default() }
                    .with_fixed_simp(3.0),
                aggregation: AggregationParams::default(),
                stress_agg_p: 100.0,
                passive: Some(passive),
            })
        }
        "inverter" => {
            let (nx, ny) = (e, (e / 2).max(4));
            let mesh = Mesh::new(Grid::new_2d(nx, ny, 1.0));
            let mut bc = BoundaryConditions::default();
            for i in 0..=nx {
                bc.fixed.push(mesh.dof(i, 0, 0, 1));
            }
            for j in [ny - 1, ny] {
                bc.fixed.push(mesh.dof(0, j, 0, 0));
                bc.fixed.push(mesh.dof(0, j, 0, 1));
            }
            let input_dof = mesh.dof(0, 0, 0, 0);
            let output_dof = mesh.dof(nx, 0, 0, 0);
            bc.loads.push((input_dof, 1.0));
            bc.springs.push((input_dof, INVERTER_SPRING));
            bc.springs.push((output_dof, INVERTER_SPRING));
            Ok(ProblemSpec {
                kind: ProblemKind::ForceInverter {
                    size_control: SizeControl::DilatedField,
                    output_dof,
                },
                mesh,
                bc,
                material: Material::default(),
                lengthscale: mini_lengthscale(thresholds),
                volume_fraction: 0.35,
                build: BuildGeometry::Planar2d,
                schedule: ContinuationSchedule::default().with_fixed_simp(3.0),
                aggregation: AggregationParams::default(),
                stress_agg_p: 100.0,
                passive: None,
            })
        }
        other => Err(Error::Config(format!(
            "unknown benchmark '{other}' (expected one of {})",
            BENCHMARK_NAMES.join(" | ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maxsize::TargetField;

    #[test]
    fn cantilever2d_wires_method_parameters() {
        let size = cantilever2d(0.4, Method::SizeConstrained, 2.5).unwrap();
        assert_eq!(size.lengthscale.r_min_solid, 5.0);
        assert_eq!(size.lengthscale.r_max, Some(6.0));
        assert_eq!(size.mesh.grid.nx, 300);
        assert_eq!(size.mesh.grid.ny, 150);

        let am = cantilever2d(0.4, Method::AmConstrained, 2.5).unwrap();
        assert!((am.lengthscale.r_fil - 5.6).abs() < 0.06, "r_fil = {}", am.lengthscale.r_fil);
        assert_eq!(am.lengthscale.thresholds.dil, 0.20);

        let reference = cantilever2d(0.4, Method::Reference, 2.5).unwrap();
        assert_eq!(reference.kind, ProblemKind::Reference);
        // no max-size constraint in the reference formulation
        let problem = crate::problems::Problem::new(reference).unwrap();
        assert_eq!(problem.constraint_names, vec!["volume"]);
    }

    #[test]
    fn cantilever3d_element_counts_and_scaling() {
        let full = cantilever3d(0.15, Method::Reference, BuildDirection::FixedAxis, 1.0).unwrap();
        assert_eq!(full.mesh.grid.n_elems(), 2_764_800);
        let desk = cantilever3d(0.15, Method::SizeConstrained, BuildDirection::FixedAxis, 0.5).unwrap();
        assert_eq!(
            (desk.mesh.grid.nx, desk.mesh.grid.ny, desk.mesh.grid.nz),
            (120, 60, 48)
        );
        // lengths halve with the mesh
        assert_eq!(desk.lengthscale.r_nozzle, 2.5);
        assert_eq!(desk.lengthscale.r_fil, 10.0);
        let free = cantilever3d(0.15, Method::AmConstrained, BuildDirection::Free, 0.5).unwrap();
        assert_eq!(free.build, BuildGeometry::FreeDirection);
        // too coarse a scale violates the resolution guard
        assert!(cantilever3d(0.15, Method::Reference, BuildDirection::FixedAxis, 0.2).is_err());
    }

    #[test]
    fn lbeam_masks_quadrant_and_fixes_continuation() {
        let spec = lbeam(0.4, LbeamVariant::Reference).unwrap();
        let passive = spec.passive.as_ref().unwrap();
        let grid = spec.mesh.grid;
        assert!(passive[grid.idx(150, 150, 0)]);
        assert!(!passive[grid.idx(50, 150, 0)]);
        assert!(!passive[grid.idx(150, 50, 0)]);
        assert_eq!(passive.iter().filter(|p| **p).count(), 100 * 100);
        assert_eq!(spec.schedule.beta_cap, 20.0);
        assert_eq!(spec.schedule.simp_start, 3.0);
        assert_eq!(spec.schedule.simp_cap, 3.0);
        // volume target is stated relative to the L-shaped area
        assert!((spec.volume_fraction - 0.3).abs() < 1e-12);

        let stress = lbeam(0.4, LbeamVariant::AmStress { sigma_star: 1.0 }).unwrap();
        assert!(matches!(stress.kind, ProblemKind::AmStress { .. }));
    }

    #[test]
    fn inverter_ports_and_variants() {
        let spec = force_inverter(0.3, Method::SizeConstrained).unwrap();
        let ProblemKind::ForceInverter { size_control, output_dof } = spec.kind else {
            panic!("wrong kind");
        };
        assert_eq!(size_control, SizeControl::DilatedField);
        assert!(spec.bc.springs.iter().any(|&(d, k)| d == output_dof && k == INVERTER_SPRING));
        assert_eq!(spec.schedule.beta_cap, 38.0);
        assert_eq!(spec.schedule.simp_start, 3.0);
        // dilated-field annulus radii grow by the dilation distance
        let (ri, ro) = spec.lengthscale.annulus_radii(TargetField::Dil).unwrap();
        assert!((ri - (4.0 + 2.4)).abs() < 1e-12);
        assert!((ro - (5.0 + 2.4)).abs() < 1e-12);

        let am = force_inverter(0.3, Method::AmConstrained).unwrap();
        let ProblemKind::ForceInverter { size_control, .. } = am.kind else {
            panic!("wrong kind");
        };
        assert_eq!(size_control, SizeControl::IntermediateField);
    }
}
