//! Optimization formulations, continuation scheduling, and the iteration
//! driver.
//!
//! Five formulations share one driver:
//!
//! * `Reference` - minimize eroded compliance subject to a dilated volume
//!   bound rescaled to hit the intermediate-field target.
//! * `SizeConstrained` - reference plus the aggregated maximum-size
//!   constraint on the dilated field (annulus radii grown by the dilation
//!   distance); members come out between the minimum and maximum width.
//! * `AmConstrained` - the skeleton method: objective blends eroded and
//!   dilated ("AM") compliance with a weight that ramps from 0 to 1 across
//!   the run, volume is bounded directly on the AM field, and the max-size
//!   constraint acts on the intermediate skeleton.
//! * `AmStress` - AM-constrained plus a p-mean bound on the relaxed von Mises
//!   stress of the AM field.
//! * `ForceInverter` - output-displacement version: the objective blends a
//!   smooth maximum of the eroded/intermediate outputs with the AM-field
//!   output, with optional size control in either style.
//!
//! The continuation schedule raises the projection steepness and SIMP
//! exponent on fixed plateaus; runs stop at the iteration cap or when the
//! design change drops below tolerance after every cap is reached.

use rayon::prelude::*;

use crate::field::{
    apply_filter, backprop_multi, build_filter_map, project, three_field, DensityField,
    NeighborhoodMap, ProjectionParams, ThreeField,
};
use crate::fem::{
    aggregated_stress, BoundaryConditions, FemContext, Material, Mesh, SolveResult,
};
use crate::lengthscale::LengthScaleSpec;
use crate::maxsize::{build_annulus_map, maxsize_constraint, AggregationParams, AnnulusGeometry, TargetField};
use crate::mma::{mma_update, MmaState};
use crate::{Error, Result};

/// Size-control styles available to the force inverter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeControl {
    None,
    /// Max-size constraint on the dilated field (uniform-width members).
    DilatedField,
    /// Max-size constraint on the intermediate skeleton (AM method).
    IntermediateField,
}

/// Which optimization problem to solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProblemKind {
    Reference,
    SizeConstrained,
    AmConstrained,
    AmStress { sigma_star: f64 },
    ForceInverter { size_control: SizeControl, output_dof: usize },
}

/// Annulus geometry selector tied to the build process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuildGeometry {
    /// 2D designs: full-disk annulus.
    Planar2d,
    /// 3D with a fixed build direction: in-plane annulus within each layer.
    FixedAxis { build_axis: usize },
    /// 3D with a free build direction: spherical shell.
    FreeDirection,
}

impl BuildGeometry {
    pub fn annulus_geometry(&self) -> AnnulusGeometry {
        match *self {
            BuildGeometry::Planar2d => AnnulusGeometry::FullDisk2d,
            BuildGeometry::FixedAxis { build_axis } => AnnulusGeometry::InPlane { build_axis },
            BuildGeometry::FreeDirection => AnnulusGeometry::SphericalShell,
        }
    }

    /// Layer axis for printability analysis (z for 2D by convention).
    pub fn build_axis(&self) -> usize {
        match *self {
            BuildGeometry::Planar2d => 2,
            BuildGeometry::FixedAxis { build_axis } => build_axis,
            BuildGeometry::FreeDirection => 2,
        }
    }
}

/// Projection steepness and SIMP exponent continuation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuationSchedule {
    pub beta_start: f64,
    pub beta_factor: f64,
    pub beta_cap: f64,
    pub simp_start: f64,
    pub simp_step: f64,
    pub simp_cap: f64,
    pub update_every: usize,
    pub max_iters: usize,
    pub move_tol: f64,
}

impl Default for ContinuationSchedule {
    fn default() -> Self {
        ContinuationSchedule {
            beta_start: 1.5,
            beta_factor: 1.5,
            beta_cap: 38.0,
            simp_start: 1.0,
            simp_step: 0.25,
            simp_cap: 3.0,
            update_every: 50,
            max_iters: 450,
            move_tol: 0.001,
        }
    }
}

impl ContinuationSchedule {
    /// Fixed SIMP exponent variant (stress and inverter benchmarks).
    pub fn with_fixed_simp(mut self, p: f64) -> Self {
        self.simp_start = p;
        self.simp_step = 0.0;
        self.simp_cap = p;
        self
    }

    fn plateau(&self, iter: usize) -> u32 {
        ((iter - 1) / self.update_every) as u32
    }

    pub fn beta_at(&self, iter: usize) -> f64 {
        (self.beta_start * self.beta_factor.powi(self.plateau(iter) as i32)).min(self.beta_cap)
    }

    pub fn simp_at(&self, iter: usize) -> f64 {
        (self.simp_start + self.simp_step * self.plateau(iter) as f64).min(self.simp_cap)
    }

    /// True once both continuation parameters sit at their caps.
    pub fn caps_reached(&self, iter: usize) -> bool {
        self.beta_at(iter) >= self.beta_cap - 1e-12 && self.simp_at(iter) >= self.simp_cap - 1e-12
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.update_every == 0 {
            return Err(Error::Config("schedule needs positive iteration counts".into()));
        }
        if !(self.beta_factor >= 1.0 && self.simp_step >= 0.0) {
            return Err(Error::Config("continuation must be nondecreasing".into()));
        }
        Ok(())
    }
}

/// Objective blend weight: 0 at the first iteration, 1 at the last.
pub fn alpha_at(iter: usize, iter_max: usize) -> f64 {
    if iter_max <= 1 {
        return 1.0;
    }
    (iter as f64 - 1.0) / (iter_max as f64 - 1.0)
}

/// Rescaled dilated-field volume bound: the bound moves so the intermediate
/// field tracks its target fraction.
pub fn rescale_dilated_volume_bound(v_dil_prev: f64, v_target_int: f64, vol_frac_inter: f64) -> f64 {
    if vol_frac_inter <= 0.0 {
        return v_dil_prev;
    }
    v_dil_prev * v_target_int / vol_frac_inter
}

/// Full description of one optimization run.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub mesh: Mesh,
    pub bc: BoundaryConditions,
    pub material: Material,
    pub lengthscale: LengthScaleSpec,
    /// Volume-fraction target; applies to the intermediate field (reference,
    /// size-constrained, inverter without AM control) or directly to the AM
    /// field (AM-constrained kinds).
    pub volume_fraction: f64,
    pub build: BuildGeometry,
    pub schedule: ContinuationSchedule,
    pub aggregation: AggregationParams,
    /// p-mean exponent for the stress aggregate.
    pub stress_agg_p: f64,
    /// Elements forced void throughout the run (non-rectangular domains such
    /// as the L-beam are carved from the bounding grid this way).
    pub passive: Option<Vec<bool>>,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.aggregation.validate()?;
        self.material.validate()?;
        if !(self.volume_fraction > 0.0 && self.volume_fraction < 1.0) {
            return Err(Error::Config(format!(
                "volume fraction must lie in (0, 1), got {}",
                self.volume_fraction
            )));
        }
        if self.mesh.dim() == 2 && self.build != BuildGeometry::Planar2d {
            return Err(Error::Config("2D problems use planar annulus geometry".into()));
        }
        if self.mesh.dim() == 3 && self.build == BuildGeometry::Planar2d {
            return Err(Error::Config("3D problems need a fixed-axis or free build geometry".into()));
        }
        if let ProblemKind::AmStress { sigma_star } = self.kind {
            if !(sigma_star > 0.0) {
                return Err(Error::Config(format!("stress limit must be positive, got {sigma_star}")));
            }
            if self.mesh.dim() != 2 {
                return Err(Error::Unsupported("stress constraints are 2D-only".into()));
            }
        }
        if let Some(p) = &self.passive {
            if p.len() != self.mesh.grid.n_elems() {
                return Err(Error::Shape("passive mask length does not match the grid".into()));
            }
        }
        Ok(())
    }

    fn apply_passive(&self, rho: &mut DensityField) {
        if let Some(passive) = &self.passive {
            for (v, &p) in rho.values_mut().iter_mut().zip(passive) {
                if p {
                    *v = 0.0;
                }
            }
        }
    }

    /// Does the volume bound act on the dilated field through rescaling?
    fn uses_rescaled_volume(&self) -> bool {
        match self.kind {
            ProblemKind::Reference | ProblemKind::SizeConstrained => true,
            ProblemKind::AmConstrained | ProblemKind::AmStress { .. } => false,
            ProblemKind::ForceInverter { size_control, .. } => {
                size_control != SizeControl::IntermediateField
            }
        }
    }

    /// Max-size target field, if the formulation carries the constraint.
    fn maxsize_target(&self) -> Option<TargetField> {
        match self.kind {
            ProblemKind::Reference => None,
            ProblemKind::SizeConstrained => Some(TargetField::Dil),
            ProblemKind::AmConstrained | ProblemKind::AmStress { .. } => Some(TargetField::Int),
            ProblemKind::ForceInverter { size_control, .. } => match size_control {
                SizeControl::None => None,
                SizeControl::DilatedField => Some(TargetField::Dil),
                SizeControl::IntermediateField => Some(TargetField::Int),
            },
        }
    }

    fn is_am_objective(&self) -> bool {
        matches!(self.kind, ProblemKind::AmConstrained | ProblemKind::AmStress { .. })
    }
}

/// One iteration record; optional entries are only computed by the
/// formulations that need them.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub beta: f64,
    pub simp_p: f64,
    pub alpha: f64,
    pub objective: f64,
    pub obj_ero: f64,
    pub obj_int: Option<f64>,
    pub obj_am: Option<f64>,
    pub vol_ero: f64,
    pub vol_int: f64,
    pub vol_dil: f64,
    pub v_dil_bound: f64,
    pub constraints: Vec<f64>,
    pub max_change: f64,
    pub restoration: bool,
}

/// Per-run history: one record per iteration plus the constraint labels.
#[derive(Debug, Clone, Default)]
pub struct History {
    pub constraint_names: Vec<String>,
    pub records: Vec<IterationRecord>,
}

/// Final state of a completed (or aborted) run.
#[derive(Debug)]
pub struct RunOutcome {
    pub design: DensityField,
    pub fields: ThreeField,
    pub history: History,
    pub iterations: usize,
    /// Error that aborted the run, if any (history preserved).
    pub aborted: Option<Error>,
}

impl RunOutcome {
    /// The field that would be manufactured: intermediate for the reference
    /// and uniform-width methods, AM (dilated) for the skeleton method.
    pub fn manufactured(&self, spec: &ProblemSpec) -> &DensityField {
        let am = match spec.kind {
            ProblemKind::AmConstrained | ProblemKind::AmStress { .. } => true,
            ProblemKind::ForceInverter { size_control, .. } => {
                size_control == SizeControl::IntermediateField
            }
            _ => false,
        };
        if am {
            &self.fields.dil
        } else {
            &self.fields.inter
        }
    }
}

struct Warm {
    u_ero: Option<Vec<f64>>,
    u_int: Option<Vec<f64>>,
    u_am: Option<Vec<f64>>,
    adj_ero: Option<Vec<f64>>,
    adj_int: Option<Vec<f64>>,
    adj_am: Option<Vec<f64>>,
}

/// Runtime state of one optimization problem.
pub struct Problem {
    pub spec: ProblemSpec,
    filter_map: NeighborhoodMap,
    annulus_map: Option<NeighborhoodMap>,
    fem: FemContext,
    v_dil_bound: f64,
    warm: Warm,
    pub constraint_names: Vec<String>,
}

/// Everything the optimizer needs for one design iterate.
pub struct Evaluation {
    pub f0: f64,
    pub df0: Vec<f64>,
    pub g: Vec<f64>,
    pub dg: Vec<Vec<f64>>,
    pub fields: ThreeField,
    pub obj_ero: f64,
    pub obj_int: Option<f64>,
    pub obj_am: Option<f64>,
    pub alpha: f64,
}

impl Problem {
    pub fn new(spec: ProblemSpec) -> Result<Self> {
        spec.validate()?;
        let grid = spec.mesh.grid;
        let filter_map = build_filter_map(grid, spec.lengthscale.r_fil)?;
        let annulus_map = match spec.maxsize_target() {
            None => None,
            Some(target) => {
                let (r_inner, r_outer) = spec.lengthscale.annulus_radii(target)?;
                let annulus = crate::maxsize::AnnulusSpec {
                    r_inner,
                    r_outer,
                    geometry: spec.build.annulus_geometry(),
                    target_field: target,
                };
                Some(build_annulus_map(grid, &annulus)?)
            }
        };
        let fem = FemContext::new(spec.mesh, spec.bc.clone(), spec.material.nu)?;
        let v = spec.volume_fraction;
        let mut names = vec!["volume".to_string()];
        if spec.maxsize_target().is_some() {
            names.push("maxsize".to_string());
        }
        if matches!(spec.kind, ProblemKind::AmStress { .. }) {
            names.push("stress".to_string());
        }
        Ok(Problem {
            spec,
            filter_map,
            annulus_map,
            fem,
            v_dil_bound: v,
            warm: Warm {
                u_ero: None,
                u_int: None,
                u_am: None,
                adj_ero: None,
                adj_int: None,
                adj_am: None,
            },
            constraint_names: names,
        })
    }

    fn params(&self, beta: f64, mu: f64) -> Result<ProjectionParams> {
        ProjectionParams::new(beta, mu)
    }

    /// Volume-fraction gradient seed on a projected field (uniform element
    /// volumes): d(mean/bound - 1)/d rho_bar_j.
    fn volume_seed(&self, bound: f64) -> Vec<f64> {
        let n = self.spec.mesh.grid.n_elems();
        vec![1.0 / (n as f64 * bound); n]
    }

    /// Evaluate objective, constraints and design-space gradients at `rho`.
    pub fn objective_and_constraints(&mut self, rho: &DensityField, iter: usize) -> Result<Evaluation> {
        let spec = &self.spec;
        let sched = &spec.schedule;
        let beta = sched.beta_at(iter);
        let simp = sched.simp_at(iter);
        let alpha = alpha_at(iter, sched.max_iters);
        let material = Material { simp_p: simp, ..spec.material };
        let thresholds = spec.lengthscale.thresholds;
        let tf = three_field(rho, &self.filter_map, beta, thresholds)?;
        let p_ero = self.params(beta, thresholds.ero)?;
        let p_int = self.params(beta, thresholds.inter)?;
        let p_dil = self.params(beta, thresholds.dil)?;

        let mut g = Vec::new();
        let mut dg = Vec::new();

        // volume constraint
        let vol_bound = if spec.uses_rescaled_volume() { self.v_dil_bound } else { spec.volume_fraction };
        let (vol_field, vol_params) = (&tf.dil, p_dil);
        let g_vol = vol_field.vol_frac() / vol_bound - 1.0;
        let dvol = backprop_multi(
            &[(vol_params, &self.volume_seed(vol_bound))],
            &tf.rho_tilde,
            &self.filter_map,
        )?;
        g.push(g_vol);
        dg.push(dvol);

        // max-size constraint
        if let Some(target) = spec.maxsize_target() {
            let map = self.annulus_map.as_ref().unwrap();
            let (field, params) = match target {
                TargetField::Dil => (&tf.dil, p_dil),
                TargetField::Int => (&tf.inter, p_int),
                TargetField::Ero => unreachable!("max-size never targets the eroded field"),
            };
            let (gms, dgms_bar) = maxsize_constraint(field, map, &spec.aggregation)?;
            let dgms = backprop_multi(&[(params, &dgms_bar)], &tf.rho_tilde, &self.filter_map)?;
            g.push(gms);
            dg.push(dgms);
        }

        // objective and, for the stress variant, the stress constraint
        let (f0, df0, obj_ero, obj_int, obj_am) = match spec.kind {
            ProblemKind::Reference | ProblemKind::SizeConstrained => {
                let res = self.fem.solve(&material, &tf.ero, self.warm.u_ero.as_deref())?;
                self.warm.u_ero = Some(res.u.clone());
                let (c, dc_bar) = self.fem.compliance(&res);
                let df0 = backprop_multi(&[(p_ero, &dc_bar)], &tf.rho_tilde, &self.filter_map)?;
                (c, df0, c, None, None)
            }
            ProblemKind::AmConstrained | ProblemKind::AmStress { .. } => {
                let res_ero = self.fem.solve(&material, &tf.ero, self.warm.u_ero.as_deref())?;
                self.warm.u_ero = Some(res_ero.u.clone());
                let (c_ero, dc_ero) = self.fem.compliance(&res_ero);
                let res_am = self.fem.solve(&material, &tf.dil, self.warm.u_am.as_deref())?;
                self.warm.u_am = Some(res_am.u.clone());
                let (c_am, dc_am) = self.fem.compliance(&res_am);
                if let ProblemKind::AmStress { sigma_star } = spec.kind {
                    let (gs, dgs_bar, adj) = aggregated_stress(
                        &mut self.fem,
                        &res_am,
                        sigma_star,
                        spec.stress_agg_p,
                        self.warm.adj_am.as_deref(),
                    )?;
                    self.warm.adj_am = Some(adj);
                    let dgs =
                        backprop_multi(&[(p_dil, &dgs_bar)], &tf.rho_tilde, &self.filter_map)?;
                    g.push(gs);
                    dg.push(dgs);
                }
                let f0 = alpha * c_am + (1.0 - alpha) * c_ero;
                let w_ero: Vec<f64> = dc_ero.iter().map(|v| (1.0 - alpha) * v).collect();
                let w_am: Vec<f64> = dc_am.iter().map(|v| alpha * v).collect();
                let df0 = backprop_multi(
                    &[(p_ero, &w_ero), (p_dil, &w_am)],
                    &tf.rho_tilde,
                    &self.filter_map,
                )?;
                (f0, df0, c_ero, None, Some(c_am))
            }
            ProblemKind::ForceInverter { output_dof, .. } => {
                let res_ero = self.fem.solve(&material, &tf.ero, self.warm.u_ero.as_deref())?;
                self.warm.u_ero = Some(res_ero.u.clone());
                let (c_ero, dc_ero, adj) =
                    self.fem
                        .output_displacement(&res_ero, output_dof, self.warm.adj_ero.as_deref())?;
                self.warm.adj_ero = Some(adj);

                let res_int = self.fem.solve(&material, &tf.inter, self.warm.u_int.as_deref())?;
                self.warm.u_int = Some(res_int.u.clone());
                let (c_int, dc_int, adj) =
                    self.fem
                        .output_displacement(&res_int, output_dof, self.warm.adj_int.as_deref())?;
                self.warm.adj_int = Some(adj);

                let res_am = self.fem.solve(&material, &tf.dil, self.warm.u_am.as_deref())?;
                self.warm.u_am = Some(res_am.u.clone());
                let (c_am, dc_am, adj) =
                    self.fem
                        .output_displacement(&res_am, output_dof, self.warm.adj_am.as_deref())?;
                self.warm.adj_am = Some(adj);

                // smooth maximum of the eroded/intermediate outputs
                let (smax, w_ero_s, w_int_s) = smooth_max_pair(c_ero, c_int, SMOOTH_MAX_SHARPNESS);
                let f0 = (1.0 - alpha) * smax + alpha * c_am;
                let we: Vec<f64> =
                    dc_ero.iter().map(|v| (1.0 - alpha) * w_ero_s * v).collect();
                let wi: Vec<f64> =
                    dc_int.iter().map(|v| (1.0 - alpha) * w_int_s * v).collect();
                let wa: Vec<f64> = dc_am.iter().map(|v| alpha * v).collect();
                let df0 = backprop_multi(
                    &[(p_ero, &we), (p_int, &wi), (p_dil, &wa)],
                    &tf.rho_tilde,
                    &self.filter_map,
                )?;
                (f0, df0, c_ero, Some(c_int), Some(c_am))
            }
        };

        Ok(Evaluation {
            f0,
            df0,
            g,
            dg,
            fields: tf,
            obj_ero,
            obj_int,
            obj_am,
            alpha,
        })
    }

    /// Compliance of an arbitrary projected field under the final material
    /// (evaluation helper for benchmarks and acceptance checks).
    pub fn compliance_of(&mut self, field: &DensityField) -> Result<f64> {
        let material = Material {
            simp_p: self.spec.schedule.simp_cap,
            ..self.spec.material
        };
        let res = self.fem.solve(&material, field, None)?;
        Ok(self.fem.compliance(&res).0)
    }

    /// Output displacement of a projected field (force inverter metric).
    pub fn output_of(&mut self, field: &DensityField) -> Result<f64> {
        let output_dof = match self.spec.kind {
            ProblemKind::ForceInverter { output_dof, .. } => output_dof,
            _ => return Err(Error::Config("output displacement requires an inverter problem".into())),
        };
        let material = Material {
            simp_p: self.spec.schedule.simp_cap,
            ..self.spec.material
        };
        let res = self.fem.solve(&material, field, None)?;
        Ok(res.u[output_dof])
    }

    /// Relaxed von Mises stresses of a projected field.
    pub fn stress_of(&mut self, field: &DensityField) -> Result<crate::fem::StressField> {
        let material = Material {
            simp_p: self.spec.schedule.simp_cap,
            ..self.spec.material
        };
        let res = self.fem.solve(&material, field, None)?;
        crate::fem::von_mises(&self.fem, &res)
    }

    /// Drive the optimization to completion.
    pub fn run(mut self) -> Result<RunOutcome> {
        let sched = self.spec.schedule;
        let grid = self.spec.mesh.grid;
        let n = grid.n_elems();
        let mut rho = DensityField::uniform(grid, self.spec.volume_fraction);
        self.spec.apply_passive(&mut rho);
        let mut mma = MmaState::new(n);
        let mut history = History {
            constraint_names: self.constraint_names.clone(),
            records: Vec::with_capacity(sched.max_iters),
        };
        let mut iterations = 0;
        let mut aborted = None;
        for iter in 1..=sched.max_iters {
            iterations = iter;
            // periodic rescaling of the dilated volume bound
            if self.spec.uses_rescaled_volume() && iter % VOLUME_RESCALE_EVERY == 0 {
                let tf = three_field(&rho, &self.filter_map, sched.beta_at(iter), self.spec.lengthscale.thresholds)?;
                self.v_dil_bound = rescale_dilated_volume_bound(
                    self.v_dil_bound,
                    self.spec.volume_fraction,
                    tf.inter.vol_frac(),
                );
            }
            let eval = match self.objective_and_constraints(&rho, iter) {
                Ok(e) => e,
                Err(e) => {
                    aborted = Some(e);
                    break;
                }
            };
            let update = match mma_update(rho.values(), eval.f0, &eval.df0, &eval.g, &eval.dg, &mut mma) {
                Ok(u) => u,
                Err(e) => {
                    aborted = Some(e);
                    break;
                }
            };
            let mut new_rho = DensityField::from_values(grid, update.x)?;
            new_rho.clamp_unit();
            self.spec.apply_passive(&mut new_rho);
            let max_change = crate::util::det_max_abs_diff(new_rho.values(), rho.values());
            history.records.push(IterationRecord {
                iter,
                beta: sched.beta_at(iter),
                simp_p: sched.simp_at(iter),
                alpha: eval.alpha,
                objective: eval.f0,
                obj_ero: eval.obj_ero,
                obj_int: eval.obj_int,
                obj_am: eval.obj_am,
                vol_ero: eval.fields.ero.vol_frac(),
                vol_int: eval.fields.inter.vol_frac(),
                vol_dil: eval.fields.dil.vol_frac(),
                v_dil_bound: self.v_dil_bound,
                constraints: eval.g.clone(),
                max_change,
                restoration: update.restoration,
            });
            rho = new_rho;
            if max_change < sched.move_tol && sched.caps_reached(iter) {
                break;
            }
        }
        let final_beta = sched.beta_at(iterations.max(1));
        let fields = three_field(&rho, &self.filter_map, final_beta, self.spec.lengthscale.thresholds)?;
        Ok(RunOutcome { design: rho, fields, history, iterations, aborted })
    }
}

const VOLUME_RESCALE_EVERY: usize = 20;
const SMOOTH_MAX_SHARPNESS: f64 = 8.0;

/// Smooth maximum of two values via a log-sum-exp with the given sharpness,
/// with the softmax weights for the chain rule. Valid for any signs;
/// overestimates the true maximum by at most `ln 2 / sharpness`.
pub fn smooth_max_pair(a: f64, b: f64, sharpness: f64) -> (f64, f64, f64) {
    let m = a.max(b);
    let ea = (sharpness * (a - m)).exp();
    let eb = (sharpness * (b - m)).exp();
    let sum = ea + eb;
    let val = m + sum.ln() / sharpness;
    (val, ea / sum, eb / sum)
}

/// Convenience wrapper: build and run a problem.
pub fn run(spec: ProblemSpec) -> Result<RunOutcome> {
    Problem::new(spec)?.run()
}

/// Worst relative disagreement between the adjoint gradient and central
/// finite differences, per objective/constraint row.
#[derive(Debug, Clone)]
pub struct GradientRow {
    pub name: String,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradientCheck {
    pub rows: Vec<GradientRow>,
}

/// Compare every adjoint gradient of a problem against central finite
/// differences on a deterministic pseudo-random field. `iter` fixes the
/// continuation state; every `stride`-th element is probed.
pub fn verify_gradients(
    spec: &ProblemSpec,
    iter: usize,
    stride: usize,
    seed: u64,
) -> Result<GradientCheck> {
    let mut problem = Problem::new(spec.clone())?;
    let grid = spec.mesh.grid;
    let n = grid.n_elems();
    let mut state = seed | 1;
    let mut next = move || {
        // xorshift64*; plenty for test fields
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state.wrapping_mul(0x2545F4914F6CDD1D) >> 11) as f64 / (1u64 << 53) as f64
    };
    let base: Vec<f64> = (0..n).map(|_| 0.25 + 0.6 * next()).collect();
    let rho = DensityField::from_values(grid, base.clone())?;
    let eval = problem.objective_and_constraints(&rho, iter)?;
    let mut names = vec!["objective".to_string()];
    names.extend(problem.constraint_names.iter().cloned());
    let mut max_err = vec![0.0f64; 1 + eval.g.len()];
    let h = 1e-6;
    for e in (0..n).step_by(stride.max(1)) {
        let mut up = base.clone();
        let mut dn = base.clone();
        up[e] += h;
        dn[e] -= h;
        let eu = problem.objective_and_constraints(&DensityField::from_values(grid, up)?, iter)?;
        let ed = problem.objective_and_constraints(&DensityField::from_values(grid, dn)?, iter)?;
        let rel = |adj: f64, a: f64, b: f64| -> f64 {
            let fd = (a - b) / (2.0 * h);
            (adj - fd).abs() / fd.abs().max(adj.abs()).max(1e-8)
        };
        max_err[0] = max_err[0].max(rel(eval.df0[e], eu.f0, ed.f0));
        for row in 0..eval.g.len() {
            max_err[1 + row] = max_err[1 + row].max(rel(eval.dg[row][e], eu.g[row], ed.g[row]));
        }
    }
    Ok(GradientCheck {
        rows: names
            .into_iter()
            .zip(max_err)
            .map(|(name, max_rel_err)| GradientRow { name, max_rel_err })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;
    use crate::lengthscale::method1_lengthscale;

    #[test]
    fn alpha_endpoints_and_midpoint() {
        assert_eq!(alpha_at(1, 450), 0.0);
        assert_eq!(alpha_at(450, 450), 1.0);
        assert!((alpha_at(226, 451) - 0.5).abs() < 1e-15);
        assert_eq!(alpha_at(1, 1), 1.0);
    }

    #[test]
    fn volume_rescaling_fixed_point_and_ratio() {
        assert!((rescale_dilated_volume_bound(0.5, 0.4, 0.4) - 0.5).abs() < 1e-15);
        assert!((rescale_dilated_volume_bound(0.5, 0.4, 0.8) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn schedule_follows_plateaus_exactly() {
        let s = ContinuationSchedule::default();
        let mut last_beta = 0.0;
        let mut last_simp = 0.0;
        for iter in 1..=450 {
            let k = (iter - 1) / 50;
            let expect_beta = (1.5 * 1.5f64.powi(k as i32)).min(38.0);
            let expect_simp = (1.0 + 0.25 * k as f64).min(3.0);
            assert_eq!(s.beta_at(iter), expect_beta, "iter {iter}");
            assert_eq!(s.simp_at(iter), expect_simp, "iter {iter}");
            assert!(s.beta_at(iter) >= last_beta && s.simp_at(iter) >= last_simp);
            last_beta = s.beta_at(iter);
            last_simp = s.simp_at(iter);
        }
        assert_eq!(s.beta_at(450), 38.0);
        assert_eq!(s.simp_at(450), 3.0);
        assert!(s.caps_reached(401));
        assert!(!s.caps_reached(350));
    }

    #[test]
    fn smooth_max_brackets_maximum() {
        for &(a, b) in &[(-1.0, -0.5), (0.3, -0.2), (-2.0, -2.0), (1.5, 1.2)] {
            let (v, wa, wb) = smooth_max_pair(a, b, 8.0);
            let m = a.max(b);
            assert!(v >= m && v <= m + (2.0f64).ln() / 8.0, "smax({a},{b}) = {v}");
            assert!((wa + wb - 1.0).abs() < 1e-12);
        }
    }

    fn small_cantilever_spec(kind: ProblemKind, iters: usize) -> ProblemSpec {
        let grid = Grid::new_2d(16, 8, 1.0);
        let mesh = Mesh::new(grid);
        let mut bc = BoundaryConditions::default();
        for j in 0..=8 {
            bc.fixed.push(mesh.dof(0, j, 0, 0));
            bc.fixed.push(mesh.dof(0, j, 0, 1));
        }
        bc.loads.push((mesh.dof(16, 4, 0, 1), -1.0));
        ProblemSpec {
            kind,
            mesh,
            bc,
            material: Material::default(),
            lengthscale: method1_lengthscale(2.0, 1.0, 1).unwrap(),
            volume_fraction: 0.5,
            build: BuildGeometry::Planar2d,
            schedule: ContinuationSchedule {
                update_every: 5,
                max_iters: iters,
                ..ContinuationSchedule::default()
            },
            aggregation: AggregationParams::default(),
            stress_agg_p: 100.0,
            passive: None,
        }
    }

    #[test]
    fn reference_kind_has_exactly_one_constraint() {
        let spec = small_cantilever_spec(ProblemKind::Reference, 5);
        let mut problem = Problem::new(spec).unwrap();
        let rho = DensityField::uniform(problem.spec.mesh.grid, 0.5);
        let eval = problem.objective_and_constraints(&rho, 1).unwrap();
        assert_eq!(eval.g.len(), 1);
        assert_eq!(problem.constraint_names, vec!["volume"]);
    }

    #[test]
    fn size_constrained_adds_maxsize_row() {
        let spec = small_cantilever_spec(ProblemKind::SizeConstrained, 5);
        let mut problem = Problem::new(spec).unwrap();
        let rho = DensityField::uniform(problem.spec.mesh.grid, 0.5);
        let eval = problem.objective_and_constraints(&rho, 1).unwrap();
        assert_eq!(eval.g.len(), 2);
        assert_eq!(problem.constraint_names, vec!["volume", "maxsize"]);
    }

    #[test]
    fn am_objective_is_pure_eroded_compliance_at_first_iteration() {
        let spec = small_cantilever_spec(ProblemKind::AmConstrained, 7);
        let mut problem = Problem::new(spec).unwrap();
        let rho = DensityField::uniform(problem.spec.mesh.grid, 0.5);
        let eval = problem.objective_and_constraints(&rho, 1).unwrap();
        assert_eq!(eval.alpha, 0.0);
        assert_eq!(eval.f0, eval.obj_ero);
        // at the last iteration the blend is fully on the AM field
        let eval_end = problem.objective_and_constraints(&rho, 7).unwrap();
        assert_eq!(eval_end.alpha, 1.0);
        assert_eq!(eval_end.f0, eval_end.obj_am.unwrap());
    }

    #[test]
    fn objective_gradient_matches_fd_through_whole_pipeline() {
        let spec = small_cantilever_spec(ProblemKind::SizeConstrained, 9);
        let mut problem = Problem::new(spec).unwrap();
        let grid = problem.spec.mesh.grid;
        let n = grid.n_elems();
        let base: Vec<f64> = (0..n).map(|i| 0.3 + 0.4 * (((i * 37) % 29) as f64 / 29.0)).collect();
        let rho = DensityField::from_values(grid, base.clone()).unwrap();
        let eval = problem.objective_and_constraints(&rho, 4).unwrap();
        let h = 1e-6;
        for e in (0..n).step_by(11) {
            let mut up = base.clone();
            let mut dn = base.clone();
            up[e] += h;
            dn[e] -= h;
            let fu = problem
                .objective_and_constraints(&DensityField::from_values(grid, up).unwrap(), 4)
                .unwrap();
            let fd_ = problem
                .objective_and_constraints(&DensityField::from_values(grid, dn).unwrap(), 4)
                .unwrap();
            let fd = (fu.f0 - fd_.f0) / (2.0 * h);
            assert!(
                (eval.df0[e] - fd).abs() / fd.abs().max(1e-8) < 1e-5,
                "f0 at {e}: {} vs {fd}",
                eval.df0[e]
            );
            for row in 0..eval.g.len() {
                let fdr = (fu.g[row] - fd_.g[row]) / (2.0 * h);
                let tol = if row == 0 { 1e-5 } else { 1e-4 };
                assert!(
                    (eval.dg[row][e] - fdr).abs() / fdr.abs().max(1e-7) < tol,
                    "g[{row}] at {e}: {} vs {fdr}",
                    eval.dg[row][e]
                );
            }
        }
    }

    #[test]
    fn short_run_completes_with_full_history() {
        let spec = small_cantilever_spec(ProblemKind::Reference, 12);
        let outcome = run(spec).unwrap();
        assert!(outcome.aborted.is_none());
        assert_eq!(outcome.history.records.len(), outcome.iterations);
        assert_eq!(outcome.iterations, 12);
        for (i, rec) in outcome.history.records.iter().enumerate() {
            assert_eq!(rec.iter, i + 1);
            assert!(rec.objective.is_finite());
        }
    }

    #[test]
    fn identical_specs_give_bitwise_identical_runs() {
        let a = run(small_cantilever_spec(ProblemKind::SizeConstrained, 8)).unwrap();
        let b = run(small_cantilever_spec(ProblemKind::SizeConstrained, 8)).unwrap();
        assert_eq!(a.design.values(), b.design.values());
        assert_eq!(a.history.records, b.history.records);
    }
}
