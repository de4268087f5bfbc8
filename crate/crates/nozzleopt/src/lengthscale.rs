//! Length-scale calibration: the numerical relations between filter radius,
//! projection thresholds, minimum member sizes and dilation distance, plus
//! the two closed parameter recipes that pin a design to a nozzle size.
//!
//! `calibrate` reproduces the 1D numerical procedure: a solid seed of growing
//! width on a finely sampled 1D line is filtered and projected; the smallest
//! seed surviving the eroded projection fixes the minimum size of the
//! intermediate design, and the offset between the intermediate- and
//! dilated-threshold crossings of the filtered profile fixes the dilation
//! distance. The numerical route carries smaller rounding errors than the
//! closed-form alternative at the radii used in practice.
//!
//! The two recipes:
//!
//! * `method1_lengthscale` (uniform-width members): minimum and maximum solid
//!   size pinned to an integer number of bead widths,
//!   `r_min = beads * r_nozzle`, `r_max = r_min + elem_size`,
//!   thresholds (0.75, 0.50, 0.25), `r_fil = 2 r_min`, `t_dil = 0.60 r_min`.
//! * `method2_lengthscale` (skeleton dilation): the manufactured design is the
//!   dilated "AM" field with `r_min_am = beads * r_nozzle`; thresholds
//!   (0.75, 0.50, 0.20) and `r_fil = 1.11 r_min_am` (or the 0.25/1.25
//!   variant), with the max-size constraint acting on the thin intermediate
//!   skeleton.

use crate::field::Thresholds;
use crate::maxsize::TargetField;
use crate::{Error, Result};

/// Complete length-scale parameter set for one optimization problem.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthScaleSpec {
    /// Deposition nozzle radius (mm).
    pub r_nozzle: f64,
    /// Minimum solid member radius (mm) on `min_size_target`.
    pub r_min_solid: f64,
    /// Field the minimum solid size refers to (Int for the uniform-width
    /// method, Dil/AM for skeleton dilation).
    pub min_size_target: TargetField,
    /// Minimum cavity radius (mm) in the intermediate design.
    pub r_min_void: f64,
    /// Maximum solid member radius (mm) on the constrained field, when a
    /// maximum-size constraint applies.
    pub r_max: Option<f64>,
    /// Density filter radius (mm).
    pub r_fil: f64,
    pub thresholds: Thresholds,
    /// Dilation distance (mm): boundary offset between the intermediate and
    /// dilated designs.
    pub t_dil: f64,
    /// Number of deposition beads across a minimum-width member.
    pub beads_per_member: u32,
}

impl LengthScaleSpec {
    /// Annulus radii (inner, outer) for a max-size constraint applied to the
    /// given field. Constraints on the dilated field use radii grown by the
    /// dilation distance.
    pub fn annulus_radii(&self, target: TargetField) -> Result<(f64, f64)> {
        let r_max = self.r_max.ok_or_else(|| {
            Error::Config("length-scale spec has no maximum size; no annulus applies".into())
        })?;
        let (r_min_int, r_max_int) = match self.min_size_target {
            // uniform-width method: sizes are stated on the intermediate field
            TargetField::Int => (self.r_min_solid, r_max),
            // skeleton method: sizes are stated on the AM field; the
            // constraint radii live on the intermediate skeleton, whose
            // minimum size is 0.5 r_fil for the (0.75, 0.50) threshold pair
            TargetField::Dil => (0.5 * self.r_fil, r_max),
            TargetField::Ero => {
                return Err(Error::Config("minimum size on the eroded field is not used".into()))
            }
        };
        match target {
            TargetField::Int => Ok((r_min_int, r_max_int)),
            TargetField::Dil => Ok((r_min_int + self.t_dil, r_max_int + self.t_dil)),
            TargetField::Ero => {
                Err(Error::Config("max-size constraint on the eroded field is not used".into()))
            }
        }
    }
}

/// Dimensionless output of the 1D calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub r_min_int_over_rfil: f64,
    pub r_min_void_over_rfil: f64,
    pub t_dil_over_rmin: f64,
}

const OVERSAMPLE: usize = 10;

/// 1D filtered profile of a centered solid seed of `width` samples on a line
/// of `len` samples; sample spacing is `1/OVERSAMPLE` elements.
fn seed_profile(len: usize, width: usize, r_fil_samples: f64) -> Vec<f64> {
    let lo = (len - width) / 2;
    let hi = lo + width;
    let reach = r_fil_samples.ceil() as i64;
    let mut out = vec![0.0; len];
    for i in 0..len {
        let mut num = 0.0;
        let mut den = 0.0;
        for d in -reach..=reach {
            let j = i as i64 + d;
            if j < 0 || j >= len as i64 {
                continue;
            }
            let w = 1.0 - (d.abs() as f64) / r_fil_samples;
            if w <= 0.0 {
                continue;
            }
            den += w;
            if (j as usize) >= lo && (j as usize) < hi {
                num += w;
            }
        }
        out[i] = num / den;
    }
    out
}

/// Distance (in samples) from the profile center to the downward crossing of
/// `level`, by linear interpolation.
fn crossing_from_center(profile: &[f64], level: f64) -> f64 {
    let c = profile.len() / 2;
    for i in c..profile.len() - 1 {
        if profile[i] >= level && profile[i + 1] < level {
            let frac = (profile[i] - level) / (profile[i] - profile[i + 1]);
            return (i - c) as f64 + frac;
        }
    }
    (profile.len() - 1 - c) as f64
}

/// Smallest centered seed (in samples) whose eroded projection survives, and
/// its filtered profile.
fn critical_seed(
    len: usize,
    r_fil_samples: f64,
    beta: f64,
    mu_ero: f64,
) -> Result<(usize, Vec<f64>)> {
    let p = crate::field::ProjectionParams::new(beta, mu_ero)?;
    let mut width = 1;
    while width < len / 2 {
        let profile = seed_profile(len, width, r_fil_samples);
        let peak = profile.iter().cloned().fold(0.0, f64::max);
        if p.apply(peak) >= 0.5 {
            return Ok((width, profile));
        }
        width += 2; // keep the seed centered
    }
    Err(Error::Config(
        "no seed width survives the eroded projection; thresholds too aggressive".into(),
    ))
}

/// Numerical relation between thresholds, filter radius, minimum sizes and
/// dilation distance, on a 10x-oversampled 1D profile.
///
/// Returns dimensionless ratios; `r_fil_elems >= 6` guards discretization
/// error.
pub fn calibrate(thresholds: Thresholds, beta: f64, r_fil_elems: f64) -> Result<Calibration> {
    if !(beta > 0.0) {
        return Err(Error::Config(format!("calibrate requires beta > 0, got {beta}")));
    }
    if r_fil_elems < 6.0 {
        return Err(Error::Config(format!(
            "calibrate requires r_fil >= 6 elements to bound rounding error, got {r_fil_elems}"
        )));
    }
    let r_fil_samples = r_fil_elems * OVERSAMPLE as f64;
    let len = (6.0 * r_fil_samples) as usize | 1; // odd length, centered seed

    // solid phase: smallest seed surviving erosion; crossings of the filtered
    // profile at the intermediate and dilated thresholds
    let (_, profile) = critical_seed(len, r_fil_samples, beta, thresholds.ero)?;
    let x_int = crossing_from_center(&profile, thresholds.inter);
    let x_dil = crossing_from_center(&profile, thresholds.dil);
    let r_min_int = x_int / OVERSAMPLE as f64;
    let t_dil = (x_dil - x_int) / OVERSAMPLE as f64;

    // void phase by solid/void symmetry: swap phases and mirror thresholds
    let (_, void_profile) =
        critical_seed(len, r_fil_samples, beta, 1.0 - thresholds.dil)?;
    let x_void = crossing_from_center(&void_profile, 1.0 - thresholds.inter);
    let r_min_void = x_void / OVERSAMPLE as f64;

    Ok(Calibration {
        r_min_int_over_rfil: r_min_int / r_fil_elems,
        r_min_void_over_rfil: r_min_void / r_fil_elems,
        t_dil_over_rmin: t_dil / r_min_int,
    })
}

fn resolution_guard(r_nozzle: f64, elem_size: f64) -> Result<()> {
    if r_nozzle < 2.0 * elem_size {
        return Err(Error::Config(format!(
            "nozzle radius {r_nozzle} mm is below twice the element size {elem_size} mm; \
             refine the mesh or enlarge the nozzle"
        )));
    }
    Ok(())
}

/// Uniform-width recipe: members exactly `beads` beads wide.
pub fn method1_lengthscale(r_nozzle: f64, elem_size: f64, beads: u32) -> Result<LengthScaleSpec> {
    resolution_guard(r_nozzle, elem_size)?;
    if beads == 0 {
        return Err(Error::Config("at least one bead per member is required".into()));
    }
    let r_min = beads as f64 * r_nozzle;
    Ok(LengthScaleSpec {
        r_nozzle,
        r_min_solid: r_min,
        min_size_target: TargetField::Int,
        r_min_void: r_min,
        r_max: Some(r_min + elem_size),
        r_fil: 2.0 * r_min,
        thresholds: Thresholds::new(0.75, 0.50, 0.25)?,
        t_dil: 0.60 * r_min,
        beads_per_member: beads,
    })
}

/// Dilation threshold variants for the skeleton recipe, with the calibrated
/// `(t_dil / r_min_int, r_fil / r_min_am)` factors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AmThreshold {
    /// mu_am = 0.20: t_dil = 0.80 r_min_int, r_fil = 1.11 r_min_am. Preferred;
    /// the larger dilation distance rounds to a full extra element and merges
    /// adjacent beads more reliably.
    Low,
    /// mu_am = 0.25: t_dil = 0.60 r_min_int, r_fil = 1.25 r_min_am.
    Quarter,
}

impl AmThreshold {
    fn mu(self) -> f64 {
        match self {
            AmThreshold::Low => 0.20,
            AmThreshold::Quarter => 0.25,
        }
    }
    fn t_dil_over_rmin_int(self) -> f64 {
        match self {
            AmThreshold::Low => 0.80,
            AmThreshold::Quarter => 0.60,
        }
    }
    fn r_fil_over_rmin_am(self) -> f64 {
        match self {
            AmThreshold::Low => 1.11,
            AmThreshold::Quarter => 1.25,
        }
    }
}

/// Skeleton-dilation recipe: a thin size-constrained intermediate skeleton is
/// dilated into the manufactured AM design of minimum size
/// `beads * r_nozzle`.
pub fn method2_lengthscale(r_nozzle: f64, elem_size: f64, beads: u32) -> Result<LengthScaleSpec> {
    method2_lengthscale_with(r_nozzle, elem_size, beads, AmThreshold::Low)
}

/// Skeleton-dilation recipe with an explicit dilation-threshold variant.
pub fn method2_lengthscale_with(
    r_nozzle: f64,
    elem_size: f64,
    beads: u32,
    variant: AmThreshold,
) -> Result<LengthScaleSpec> {
    resolution_guard(r_nozzle, elem_size)?;
    if beads == 0 {
        return Err(Error::Config("at least one bead per member is required".into()));
    }
    let r_min_am = beads as f64 * r_nozzle;
    let r_fil = variant.r_fil_over_rmin_am() * r_min_am;
    let r_min_int = 0.5 * r_fil;
    let t_dil = variant.t_dil_over_rmin_int() * r_min_int;
    Ok(LengthScaleSpec {
        r_nozzle,
        r_min_solid: r_min_am,
        min_size_target: TargetField::Dil,
        r_min_void: r_min_int,
        r_max: Some(r_min_int + elem_size),
        r_fil,
        thresholds: Thresholds::new(0.75, 0.50, variant.mu())?,
        t_dil,
        beads_per_member: beads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibrate_reproduces_quarter_threshold_anchors() {
        let c = calibrate(Thresholds::new(0.75, 0.50, 0.25).unwrap(), 38.0, 10.0).unwrap();
        assert!(
            (c.r_min_int_over_rfil - 0.5).abs() / 0.5 < 0.10,
            "r_min_int/r_fil = {}",
            c.r_min_int_over_rfil
        );
        assert!(
            (c.t_dil_over_rmin - 0.60).abs() / 0.60 < 0.10,
            "t_dil/r_min = {}",
            c.t_dil_over_rmin
        );
        // symmetric thresholds couple void and solid minimum sizes
        assert!((c.r_min_void_over_rfil - c.r_min_int_over_rfil).abs() < 0.02);
    }

    #[test]
    fn calibrate_reproduces_low_threshold_anchors() {
        let c = calibrate(Thresholds::new(0.75, 0.50, 0.20).unwrap(), 38.0, 10.0).unwrap();
        let rfil_over_rmin = 1.0 / c.r_min_int_over_rfil;
        assert!((rfil_over_rmin - 2.0).abs() / 2.0 < 0.10, "r_fil/r_min = {rfil_over_rmin}");
        assert!(
            (c.t_dil_over_rmin - 0.80).abs() / 0.80 < 0.10,
            "t_dil/r_min = {}",
            c.t_dil_over_rmin
        );
    }

    #[test]
    fn equal_thresholds_rejected() {
        assert!(Thresholds::new(0.75, 0.5, 0.5).is_err());
    }

    #[test]
    fn small_radius_rejected() {
        let t = Thresholds::new(0.75, 0.5, 0.25).unwrap();
        assert!(matches!(calibrate(t, 38.0, 4.0), Err(Error::Config(_))));
    }

    #[test]
    fn lower_dilation_threshold_increases_dilation_distance() {
        let mut last = 0.0;
        for mu_dil in [0.30, 0.25, 0.20] {
            let c = calibrate(Thresholds::new(0.75, 0.50, mu_dil).unwrap(), 38.0, 10.0).unwrap();
            assert!(
                c.t_dil_over_rmin > last,
                "t_dil/r_min not increasing at mu_dil={mu_dil}: {} vs {last}",
                c.t_dil_over_rmin
            );
            last = c.t_dil_over_rmin;
        }
    }

    #[test]
    fn calibration_is_scale_invariant() {
        let t = Thresholds::new(0.75, 0.50, 0.25).unwrap();
        let a = calibrate(t, 38.0, 10.0).unwrap();
        let b = calibrate(t, 38.0, 20.0).unwrap();
        assert!((a.r_min_int_over_rfil - b.r_min_int_over_rfil).abs() / b.r_min_int_over_rfil < 0.10);
        assert!((a.t_dil_over_rmin - b.t_dil_over_rmin).abs() / b.t_dil_over_rmin < 0.10);
    }

    #[test]
    fn method1_example_values() {
        let ls = method1_lengthscale(2.5, 1.0, 2).unwrap();
        assert_eq!(ls.r_min_solid, 5.0);
        assert_eq!(ls.r_max, Some(6.0));
        assert_eq!(ls.r_fil, 10.0);
        assert!((ls.t_dil - 3.0).abs() < 1e-12);
        assert_eq!(ls.thresholds, Thresholds::new(0.75, 0.50, 0.25).unwrap());
        let (ri, ro) = ls.annulus_radii(TargetField::Dil).unwrap();
        assert!((ri - 8.0).abs() < 1e-12 && (ro - 9.0).abs() < 1e-12);
    }

    #[test]
    fn method1_four_beads() {
        let ls = method1_lengthscale(2.5, 1.0, 4).unwrap();
        assert_eq!(ls.r_min_solid, 10.0);
    }

    #[test]
    fn method1_resolution_guard() {
        assert!(matches!(method1_lengthscale(1.5, 1.0, 2), Err(Error::Config(_))));
    }

    #[test]
    fn method2_example_values() {
        let ls = method2_lengthscale(2.5, 1.0, 2).unwrap();
        assert_eq!(ls.r_min_solid, 5.0);
        assert_eq!(ls.min_size_target, TargetField::Dil);
        // 1.11 * 5 = 5.55 mm; reported as 5.6 mm after rounding
        assert!((ls.r_fil - 5.6).abs() < 0.06, "r_fil = {}", ls.r_fil);
        assert_eq!(ls.thresholds.dil, 0.20);
        // t_dil = 0.8 * 0.5 * 1.11 * 5 = 2.22 elements (reported 2.20)
        assert!((ls.t_dil - 2.2).abs() < 0.05, "t_dil = {}", ls.t_dil);

        let quarter = method2_lengthscale_with(2.5, 1.0, 2, AmThreshold::Quarter).unwrap();
        assert!((quarter.r_fil - 1.25 * 5.0).abs() < 1e-12);
        // t_dil = 0.6 * 0.5 * 1.25 * 5 = 1.875 elements (reported 1.88)
        assert!((quarter.t_dil - 1.88).abs() < 0.02, "t_dil = {}", quarter.t_dil);
    }

    #[test]
    fn method2_chain_consistency_with_calibration() {
        // r_min_am from the recipe must equal r_min_int + t_dil within one
        // element, with r_min_int and t_dil taken from calibrate() at the
        // same thresholds.
        for variant in [AmThreshold::Low, AmThreshold::Quarter] {
            let ls = method2_lengthscale_with(2.5, 1.0, 2, variant).unwrap();
            let c = calibrate(ls.thresholds, 38.0, 10.0).unwrap();
            let r_min_int = c.r_min_int_over_rfil * ls.r_fil;
            let t_dil = c.t_dil_over_rmin * r_min_int;
            let r_min_am = r_min_int + t_dil;
            assert!(
                (r_min_am - ls.r_min_solid).abs() <= 1.0,
                "{variant:?}: chained r_min_am = {r_min_am} vs recipe {}",
                ls.r_min_solid
            );
        }
    }

    #[test]
    fn method2_annulus_targets_intermediate_skeleton() {
        let ls = method2_lengthscale(2.5, 1.0, 2).unwrap();
        let (ri, ro) = ls.annulus_radii(TargetField::Int).unwrap();
        // skeleton radii: r_min_int = 0.5 * r_fil, r_max = r_min_int + 1 elem
        assert!((ri - 0.5 * ls.r_fil).abs() < 1e-12);
        assert!((ro - (0.5 * ls.r_fil + 1.0)).abs() < 1e-12);
    }
}
