//! Maximum member-size control: local annular void-fraction constraints and
//! their p-mean aggregation into one differentiable constraint.
//!
//! Around every element `i`, an annular (2D), in-plane annular, or
//! spherical-shell (3D) region `Omega_i` must contain at least a fraction
//! `epsilon` of void:
//!
//! ```text
//! g_i = epsilon - sum_{j in Omega_i} v_j (1 - rho_bar_j)^q / sum_{j in Omega_i} v_j  <= 0
//! ```
//!
//! which forbids solid members thicker than the annulus outer radius. The
//! per-element constraints are aggregated with a p-mean,
//!
//! ```text
//! G_ms = ( mean_i (g_i + 1 - epsilon)^p )^(1/p) - 1 + epsilon ,
//! ```
//!
//! evaluated by factoring out the largest term so that `p = 100` does not
//! overflow. `G_ms <= max_i g_i`, so feasibility of the aggregate implies
//! feasibility of every local constraint up to the aggregation gap.

use rayon::prelude::*;

use crate::field::{DensityField, Grid, MapKind, NeighborhoodMap, StencilEntry};
use crate::{Error, Result};

/// Region shape for the local constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnulusGeometry {
    /// Full annulus in a 2D grid.
    FullDisk2d,
    /// Annulus within the layer plane of a 3D grid; neighbors restricted to
    /// the element's own one-element slab along the build axis (0 = x, 1 = y,
    /// 2 = z).
    InPlane { build_axis: usize },
    /// Spherical shell in a 3D grid (free build direction).
    SphericalShell,
}

/// Which projected field the constraint is formulated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetField {
    Ero,
    Int,
    Dil,
}

/// Annular region radii (mm). When the constraint targets the dilated field,
/// both radii already include the dilation distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnulusSpec {
    pub r_inner: f64,
    pub r_outer: f64,
    pub geometry: AnnulusGeometry,
    pub target_field: TargetField,
}

impl AnnulusSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_inner >= 0.0 && self.r_inner < self.r_outer) {
            return Err(Error::Config(format!(
                "annulus requires 0 <= r_inner < r_outer, got ({}, {})",
                self.r_inner, self.r_outer
            )));
        }
        Ok(())
    }
}

/// Aggregation parameters: exponent `p`, void-fraction bound and shift
/// `epsilon`, void-measure penalty `q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregationParams {
    pub p: f64,
    pub epsilon: f64,
    pub q: f64,
}

impl Default for AggregationParams {
    fn default() -> Self {
        AggregationParams { p: 100.0, epsilon: 0.05, q: 2.0 }
    }
}

impl AggregationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 1.0 && self.epsilon > 0.0 && self.epsilon < 1.0 && self.q >= 1.0) {
            return Err(Error::Config(format!(
                "aggregation requires p >= 1, 0 < epsilon < 1, q >= 1, got p={}, epsilon={}, q={}",
                self.p, self.epsilon, self.q
            )));
        }
        Ok(())
    }
}

/// Build the annular neighborhood map for the local constraints.
///
/// Rows contain all elements with `r_inner <= d <= r_outer` (unit weights).
/// The in-plane variant measures distance within the layer plane and keeps
/// neighbors in the element's own layer. Elements whose annulus lies entirely
/// outside the domain make the constraint meaningless, which is reported as a
/// config error naming the offenders.
pub fn build_annulus_map(grid: Grid, spec: &AnnulusSpec) -> Result<NeighborhoodMap> {
    spec.validate()?;
    if spec.r_outer <= grid.elem_size {
        return Err(Error::Config(format!(
            "annulus outer radius {} must exceed one element edge {}",
            spec.r_outer, grid.elem_size
        )));
    }
    match spec.geometry {
        AnnulusGeometry::FullDisk2d => {
            if grid.dim() != 2 {
                return Err(Error::Config("full-disk annulus requires a 2D grid".into()));
            }
        }
        AnnulusGeometry::InPlane { build_axis } => {
            if grid.dim() != 3 || build_axis > 2 {
                return Err(Error::Config(
                    "in-plane annulus requires a 3D grid and build axis in 0..3".into(),
                ));
            }
        }
        AnnulusGeometry::SphericalShell => {
            if grid.dim() != 3 {
                return Err(Error::Config("spherical shell requires a 3D grid".into()));
            }
        }
    }
    let h = grid.elem_size;
    let reach = (spec.r_outer / h).floor() as i32;
    let mut stencil = Vec::new();
    let mut push = |di: i32, dj: i32, dk: i32| {
        let d = h * ((di * di + dj * dj + dk * dk) as f64).sqrt();
        if d >= spec.r_inner && d <= spec.r_outer {
            stencil.push(StencilEntry { di, dj, dk, w: 1.0 });
        }
    };
    match spec.geometry {
        AnnulusGeometry::FullDisk2d => {
            for dj in -reach..=reach {
                for di in -reach..=reach {
                    push(di, dj, 0);
                }
            }
        }
        AnnulusGeometry::InPlane { build_axis } => {
            for db in -reach..=reach {
                for da in -reach..=reach {
                    match build_axis {
                        0 => push(0, da, db),
                        1 => push(da, 0, db),
                        _ => push(da, db, 0),
                    }
                }
            }
        }
        AnnulusGeometry::SphericalShell => {
            for dk in -reach..=reach {
                for dj in -reach..=reach {
                    for di in -reach..=reach {
                        push(di, dj, dk);
                    }
                }
            }
        }
    }
    let map = NeighborhoodMap::from_stencil(grid, MapKind::Annulus, stencil, false);
    let empty: Vec<usize> =
        map.row_wsum().iter().enumerate().filter(|(_, w)| **w == 0.0).map(|(e, _)| e).collect();
    if !empty.is_empty() {
        let shown: Vec<String> = empty.iter().take(8).map(|e| e.to_string()).collect();
        return Err(Error::Config(format!(
            "{} elements have an empty annulus (domain thinner than r_inner); first offenders: {}",
            empty.len(),
            shown.join(", ")
        )));
    }
    Ok(map)
}

/// Per-element local constraint values `g_i` on the given projected field.
pub fn local_void_fractions(
    rho_bar: &DensityField,
    map: &NeighborhoodMap,
    params: &AggregationParams,
) -> Result<Vec<f64>> {
    params.validate()?;
    if map.kind() != MapKind::Annulus {
        return Err(Error::Config("local void fractions require an annulus-kind map".into()));
    }
    if rho_bar.grid() != map.grid() {
        return Err(Error::Shape("field grid does not match annulus map grid".into()));
    }
    let q = params.q;
    let void_measure: Vec<f64> =
        rho_bar.values().par_iter().map(|&r| (1.0 - r).powf(q)).collect();
    let mut sums = vec![0.0; void_measure.len()];
    map.weighted_gather(&void_measure, &mut sums);
    let eps = params.epsilon;
    sums.par_iter_mut().zip(map.row_wsum().par_iter()).for_each(|(s, count)| {
        *s = eps - *s / count;
    });
    Ok(sums)
}

/// p-mean aggregate of the local constraints and its gradient `dG/dg_i`.
pub fn aggregate(g: &[f64], params: &AggregationParams) -> (f64, Vec<f64>) {
    let eps = params.epsilon;
    let p = params.p;
    let n = g.len() as f64;
    // shifted terms a_i = g_i + 1 - eps lie in [0, 1]
    let a: Vec<f64> = g.iter().map(|&gi| (gi + 1.0 - eps).max(0.0)).collect();
    let m = crate::util::det_max(&a);
    if m <= 0.0 {
        return (eps - 1.0, vec![0.0; g.len()]);
    }
    let scaled_mean = crate::util::det_sum(
        &a.par_iter().map(|&ai| (ai / m).powf(p)).collect::<Vec<f64>>(),
    ) / n;
    let value = m * scaled_mean.powf(1.0 / p) - 1.0 + eps;
    let coeff = scaled_mean.powf(1.0 / p - 1.0) / n;
    let grad: Vec<f64> = a.par_iter().map(|&ai| coeff * (ai / m).powf(p - 1.0)).collect();
    (value, grad)
}

/// Aggregated maximum-size constraint on a projected field, with its gradient
/// with respect to that field.
pub fn maxsize_constraint(
    rho_bar: &DensityField,
    map: &NeighborhoodMap,
    params: &AggregationParams,
) -> Result<(f64, Vec<f64>)> {
    let g = local_void_fractions(rho_bar, map, params)?;
    let (value, dg) = aggregate(&g, params);
    // dG/drho_bar_j = q (1-rho_bar_j)^(q-1) * sum_{i: j in Omega_i} dG/dg_i / |Omega_i|
    let seed: Vec<f64> =
        dg.par_iter().zip(map.row_wsum().par_iter()).map(|(d, count)| d / count).collect();
    let mut gathered = vec![0.0; seed.len()];
    map.weighted_gather(&seed, &mut gathered);
    let q = params.q;
    let grad: Vec<f64> = gathered
        .par_iter()
        .zip(rho_bar.values().par_iter())
        .map(|(&s, &r)| q * (1.0 - r).powf(q - 1.0) * s)
        .collect();
    Ok((value, grad))
}
