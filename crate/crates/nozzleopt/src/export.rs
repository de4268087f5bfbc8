//! Run artifact export: raw field dumps with text sidecars, grayscale and
//! overlay images, the iteration history as CSV, and printability reports.
//!
//! Field dumps are flat little-endian 64-bit reals plus a self-describing
//! `.meta` text header (grid, element size, field name, projection
//! parameters); structured grids need no connectivity, so no mesh format is
//! involved. Images map density 0 to white and 1 to black, one pixel per
//! element.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::field::{DensityField, Grid, Thresholds};
use crate::printability::PrintabilityReport;
use crate::problems::{History, ProblemSpec, RunOutcome};
use crate::{Error, Result};

/// Sidecar metadata of a field dump.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMeta {
    pub field_name: String,
    pub grid: Grid,
    pub beta: f64,
    pub thresholds: Thresholds,
}

/// Write a field as `<stem>.f64` (raw little-endian values) plus
/// `<stem>.meta`.
pub fn dump_field(stem: &Path, field: &DensityField, meta: &FieldMeta) -> Result<()> {
    let grid = field.grid();
    let mut bytes = Vec::with_capacity(8 * field.values().len());
    for v in field.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(stem.with_extension("f64"), bytes)?;
    let mut text = String::new();
    let _ = writeln!(text, "field: {}", meta.field_name);
    let _ = writeln!(text, "grid: {} {} {}", grid.nx, grid.ny, grid.nz);
    let _ = writeln!(text, "dim: {}", grid.dim());
    let _ = writeln!(text, "elem_size: {:.17e}", grid.elem_size);
    let _ = writeln!(text, "beta: {:.17e}", meta.beta);
    let _ = writeln!(
        text,
        "thresholds: {:.17e} {:.17e} {:.17e}",
        meta.thresholds.ero, meta.thresholds.inter, meta.thresholds.dil
    );
    fs::write(stem.with_extension("meta"), text)?;
    Ok(())
}

/// Load a dump written by [`dump_field`]; accepts the stem or either file.
pub fn load_field(path: &Path) -> Result<(DensityField, FieldMeta)> {
    let stem = path.with_extension("");
    let meta_text = fs::read_to_string(stem.with_extension("meta"))?;
    let mut field_name = String::new();
    let mut dims = (0usize, 0usize, 0usize);
    let mut dim = 0usize;
    let mut elem_size = 0.0f64;
    let mut beta = 0.0f64;
    let mut thresholds = (0.0f64, 0.0f64, 0.0f64);
    for line in meta_text.lines() {
        let Some((key, value)) = line.split_once(':') else {
            continue;
        };
        let value = value.trim();
        match key.trim() {
            "field" => field_name = value.to_string(),
            "grid" => {
                let parts: Vec<&str> = value.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(Error::Data(format!("malformed grid line: {value}")));
                }
                dims = (
                    parts[0].parse().map_err(|e| Error::Data(format!("grid: {e}")))?,
                    parts[1].parse().map_err(|e| Error::Data(format!("grid: {e}")))?,
                    parts[2].parse().map_err(|e| Error::Data(format!("grid: {e}")))?,
                );
            }
            "dim" => dim = value.parse().map_err(|e| Error::Data(format!("dim: {e}")))?,
            "elem_size" => {
                elem_size = value.parse().map_err(|e| Error::Data(format!("elem_size: {e}")))?
            }
            "beta" => beta = value.parse().map_err(|e| Error::Data(format!("beta: {e}")))?,
            "thresholds" => {
                let parts: Vec<&str> = value.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(Error::Data(format!("malformed thresholds line: {value}")));
                }
                thresholds = (
                    parts[0].parse().map_err(|e| Error::Data(format!("thresholds: {e}")))?,
                    parts[1].parse().map_err(|e| Error::Data(format!("thresholds: {e}")))?,
                    parts[2].parse().map_err(|e| Error::Data(format!("thresholds: {e}")))?,
                );
            }
            _ => {}
        }
    }
    let grid = match dim {
        2 => Grid::new_2d(dims.0, dims.1, elem_size),
        3 => Grid::new_3d(dims.0, dims.1, dims.2, elem_size),
        other => return Err(Error::Data(format!("unsupported dim {other} in sidecar"))),
    };
    let bytes = fs::read(stem.with_extension("f64"))?;
    if bytes.len() != 8 * grid.n_elems() {
        return Err(Error::Shape(format!(
            "dump holds {} bytes, grid needs {}",
            bytes.len(),
            8 * grid.n_elems()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let field = DensityField::from_values(grid, values)?;
    let meta = FieldMeta {
        field_name,
        grid,
        beta,
        thresholds: Thresholds::new(thresholds.0, thresholds.1, thresholds.2)?,
    };
    Ok((field, meta))
}

/// In-plane values of one layer along the build axis (the whole field in 2D).
fn layer_values(field: &DensityField, axis: usize, layer: usize) -> (usize, usize, Vec<f64>) {
    let grid = field.grid();
    if grid.dim() == 2 {
        return (grid.nx, grid.ny, field.values().to_vec());
    }
    let (la, lb) = match axis {
        0 => (grid.ny, grid.nz),
        1 => (grid.nx, grid.nz),
        _ => (grid.nx, grid.ny),
    };
    let mut vals = vec![0.0; la * lb];
    for b in 0..lb {
        for a in 0..la {
            let (i, j, k) = match axis {
                0 => (layer, a, b),
                1 => (a, layer, b),
                _ => (a, b, layer),
            };
            vals[a + la * b] = field.values()[grid.idx(i, j, k)];
        }
    }
    (la, lb, vals)
}

fn gray_image(nx: usize, ny: usize, vals: &[f64]) -> image::GrayImage {
    image::GrayImage::from_fn(nx as u32, ny as u32, |x, y| {
        // image rows run downward; the grid's y axis runs upward
        let v = vals[x as usize + nx * (ny - 1 - y as usize)];
        image::Luma([(255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8])
    })
}

/// One grayscale PNG per field (mid-layer for 3D fields).
pub fn write_field_image(path: &Path, field: &DensityField, build_axis: usize) -> Result<()> {
    let grid = field.grid();
    let layer = if grid.dim() == 2 {
        0
    } else {
        match build_axis {
            0 => grid.nx / 2,
            1 => grid.ny / 2,
            _ => grid.nz / 2,
        }
    };
    let (nx, ny, vals) = layer_values(field, build_axis, layer);
    gray_image(nx, ny, &vals)
        .save(path)
        .map_err(|e| Error::Data(format!("image encode failed: {e}")))?;
    Ok(())
}

/// Overlay of the eroded skeleton (red) on the manufactured design (gray).
pub fn write_overlay_image(
    path: &Path,
    manufactured: &DensityField,
    eroded: &DensityField,
    build_axis: usize,
) -> Result<()> {
    let grid = manufactured.grid();
    let layer = if grid.dim() == 2 {
        0
    } else {
        match build_axis {
            0 => grid.nx / 2,
            1 => grid.ny / 2,
            _ => grid.nz / 2,
        }
    };
    let (nx, ny, base) = layer_values(manufactured, build_axis, layer);
    let (_, _, skel) = layer_values(eroded, build_axis, layer);
    let img = image::RgbImage::from_fn(nx as u32, ny as u32, |x, y| {
        let e = x as usize + nx * (ny - 1 - y as usize);
        let g = (255.0 * (1.0 - base[e].clamp(0.0, 1.0))).round() as u8;
        if skel[e] >= 0.5 {
            image::Rgb([200, 30, 30])
        } else {
            image::Rgb([g, g, g])
        }
    });
    img.save(path).map_err(|e| Error::Data(format!("image encode failed: {e}")))?;
    Ok(())
}

/// Unreachable-region mask: design in light gray, unfilled elements in red.
pub fn write_unfilled_image(
    path: &Path,
    report: &PrintabilityReport,
    layer_index: usize,
) -> Result<()> {
    let layer = report
        .unfilled
        .get(layer_index)
        .ok_or_else(|| Error::Config(format!("no layer {layer_index} in report")))?;
    let (nx, ny) = (layer.nx, layer.ny);
    let img = image::RgbImage::from_fn(nx as u32, ny as u32, |x, y| {
        let e = x as usize + nx * (ny - 1 - y as usize);
        if layer.occupancy[e] {
            image::Rgb([200, 30, 30])
        } else {
            image::Rgb([255, 255, 255])
        }
    });
    img.save(path).map_err(|e| Error::Data(format!("image encode failed: {e}")))?;
    Ok(())
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.17e}")).unwrap_or_default()
}

/// Iteration history as a comma-separated table with a header row.
pub fn write_history_csv(path: &Path, history: &History) -> Result<()> {
    let mut out = String::new();
    let mut header = String::from(
        "iter,beta,simp_p,alpha,objective,obj_ero,obj_int,obj_am,vol_ero,vol_int,vol_dil,v_dil_bound",
    );
    for name in &history.constraint_names {
        let _ = write!(header, ",g_{name}");
    }
    header.push_str(",max_change,restoration");
    let _ = writeln!(out, "{header}");
    for r in &history.records {
        let _ = write!(
            out,
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{},{:.17e},{:.17e},{:.17e},{:.17e}",
            r.iter,
            r.beta,
            r.simp_p,
            r.alpha,
            r.objective,
            r.obj_ero,
            opt_cell(r.obj_int),
            opt_cell(r.obj_am),
            r.vol_ero,
            r.vol_int,
            r.vol_dil,
            r.v_dil_bound,
        );
        for g in &r.constraints {
            let _ = write!(out, ",{g:.17e}");
        }
        let _ = writeln!(out, ",{:.17e},{}", r.max_change, r.restoration);
    }
    fs::write(path, out)?;
    Ok(())
}

/// Printability report as structured text.
pub fn write_printability_report(path: &Path, r_nozzle: f64, report: &PrintabilityReport) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "printability report")?;
    writeln!(f, "nozzle_radius_mm: {r_nozzle}")?;
    writeln!(f, "layers: {}", report.layers.len())?;
    writeln!(f, "index_percent: {:.4}", report.index)?;
    writeln!(f, "empty_design: {}", report.empty_design)?;
    writeln!(f, "layer area filled fraction_percent")?;
    for (layer, area, filled) in &report.layers {
        let frac = if *area == 0 { 100.0 } else { 100.0 * *filled as f64 / *area as f64 };
        writeln!(f, "{layer} {area} {filled} {frac:.4}")?;
    }
    Ok(())
}

/// Export selection switches.
#[derive(Debug, Clone, Copy)]
pub struct ExportToggles {
    pub png: bool,
    pub csv: bool,
    pub fields: bool,
    pub printability: bool,
}

impl Default for ExportToggles {
    fn default() -> Self {
        ExportToggles { png: true, csv: true, fields: true, printability: true }
    }
}

/// Outcome of an export pass; failures are collected per file so one bad path
/// does not lose the remaining artifacts.
#[derive(Debug, Default)]
pub struct ExportSummary {
    pub written: Vec<PathBuf>,
    pub failures: Vec<(PathBuf, Error)>,
}

impl ExportSummary {
    fn attempt(&mut self, path: PathBuf, result: Result<()>) {
        match result {
            Ok(()) => self.written.push(path),
            Err(e) => self.failures.push((path, e)),
        }
    }
}

/// Write every enabled artifact of a finished run into `dir`.
pub fn export_outputs(
    dir: &Path,
    spec: &ProblemSpec,
    outcome: &RunOutcome,
    report: Option<&PrintabilityReport>,
    toggles: ExportToggles,
) -> Result<ExportSummary> {
    fs::create_dir_all(dir)?;
    let mut summary = ExportSummary::default();
    let axis = spec.build.build_axis();
    let beta = spec.schedule.beta_at(outcome.iterations.max(1));
    let meta = |name: &str| FieldMeta {
        field_name: name.to_string(),
        grid: spec.mesh.grid,
        beta,
        thresholds: spec.lengthscale.thresholds,
    };
    let fields = [
        ("design", &outcome.design),
        ("eroded", &outcome.fields.ero),
        ("intermediate", &outcome.fields.inter),
        ("dilated", &outcome.fields.dil),
    ];
    if toggles.fields {
        for (name, field) in &fields {
            let stem = dir.join(name);
            let r = dump_field(&stem, field, &meta(name));
            summary.attempt(stem.with_extension("f64"), r);
        }
    }
    if toggles.png {
        for (name, field) in &fields[1..] {
            let path = dir.join(format!("{name}.png"));
            let r = write_field_image(&path, field, axis);
            summary.attempt(path, r);
        }
        let path = dir.join("overlay.png");
        let r = write_overlay_image(&path, outcome.manufactured(spec), &outcome.fields.ero, axis);
        summary.attempt(path, r);
    }
    if toggles.csv {
        let path = dir.join("history.csv");
        let r = write_history_csv(&path, &outcome.history);
        summary.attempt(path, r);
    }
    if let Some(report) = report {
        if toggles.printability {
            let path = dir.join("printability.txt");
            let r = write_printability_report(&path, spec.lengthscale.r_nozzle, report);
            summary.attempt(path, r);
            if toggles.png && !report.unfilled.is_empty() {
                // the least filled layer carries the interesting mask
                let worst = report
                    .layers
                    .iter()
                    .enumerate()
                    .min_by(|(_, a), (_, b)| {
                        let fa = if a.1 == 0 { 1.0 } else { a.2 as f64 / a.1 as f64 };
                        let fb = if b.1 == 0 { 1.0 } else { b.2 as f64 / b.1 as f64 };
                        fa.partial_cmp(&fb).unwrap()
                    })
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                let path = dir.join("unfilled.png");
                let r = write_unfilled_image(&path, report, worst);
                summary.attempt(path, r);
            }
        }
    }
    Ok(summary)
}
