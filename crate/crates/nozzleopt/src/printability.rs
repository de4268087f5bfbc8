//! Morphological printability analysis and inscribed-radius measurement.
//!
//! The printability index is the fraction of design area reachable by a
//! nozzle whose circular footprint stays inside the design: per layer, the
//! morphological opening of the binarized design by a disk of the nozzle
//! radius. This is an idealized best-case proxy for slicer-derived fill
//! percentages: it reproduces orderings between designs, not absolute
//! numbers of any particular deposition pattern.
//!
//! Openings are evaluated through exact squared Euclidean distance
//! transforms, which is equivalent to (and much faster than) sliding the
//! discrete disk directly: a disk element belongs to the structuring element
//! iff its center lies within the radius, and everything outside the grid
//! counts as void.

use crate::field::DensityField;
use crate::{Error, Result};

/// Boolean occupancy of one build layer (a 2D design is a single layer).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryLayer {
    pub nx: usize,
    pub ny: usize,
    pub layer_index: usize,
    pub occupancy: Vec<bool>,
}

impl BinaryLayer {
    pub fn count(&self) -> usize {
        self.occupancy.iter().filter(|o| **o).count()
    }

    fn complement(&self) -> BinaryLayer {
        BinaryLayer {
            nx: self.nx,
            ny: self.ny,
            layer_index: self.layer_index,
            occupancy: self.occupancy.iter().map(|o| !o).collect(),
        }
    }
}

/// Per-layer fill statistics and the aggregate printability index.
#[derive(Debug, Clone)]
pub struct PrintabilityReport {
    /// (layer index, layer area in elements, filled elements).
    pub layers: Vec<(usize, usize, usize)>,
    /// Percentage of the design area fillable by the nozzle, in `[0, 100]`.
    pub index: f64,
    /// Elements of each layer the nozzle cannot reach.
    pub unfilled: Vec<BinaryLayer>,
    /// Set when the design contained no solid elements (index defined as
    /// 100: there is nothing to fill).
    pub empty_design: bool,
}

/// Threshold a density field into per-layer occupancy along the build axis
/// (values >= threshold count as solid; 0 = x, 1 = y, 2 = z).
pub fn binarize(field: &DensityField, threshold: f64, build_axis: usize) -> Result<Vec<BinaryLayer>> {
    let grid = field.grid();
    if grid.dim() == 2 {
        let occupancy = field.values().iter().map(|&v| v >= threshold).collect();
        return Ok(vec![BinaryLayer { nx: grid.nx, ny: grid.ny, layer_index: 0, occupancy }]);
    }
    if build_axis > 2 {
        return Err(Error::Config(format!("build axis must be 0, 1 or 2, got {build_axis}")));
    }
    let (la, lb, nl) = match build_axis {
        0 => (grid.ny, grid.nz, grid.nx),
        1 => (grid.nx, grid.nz, grid.ny),
        _ => (grid.nx, grid.ny, grid.nz),
    };
    let mut layers = Vec::with_capacity(nl);
    for l in 0..nl {
        let mut occupancy = vec![false; la * lb];
        for b in 0..lb {
            for a in 0..la {
                let (i, j, k) = match build_axis {
                    0 => (l, a, b),
                    1 => (a, l, b),
                    _ => (a, b, l),
                };
                occupancy[a + la * b] = field.values()[grid.idx(i, j, k)] >= threshold;
            }
        }
        layers.push(BinaryLayer { nx: la, ny: lb, layer_index: l, occupancy });
    }
    Ok(layers)
}

/// 1D squared-distance transform (lower envelope of parabolas).
fn dt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if !f[q].is_finite() && f[q] > 0.0 {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        out[q] = d * d + f[p];
    }
}

/// Exact squared Euclidean distance (in element units) from every element to
/// the nearest seed (seeds have cost 0, the rest infinity).
fn distance_sq(nx: usize, ny: usize, seed: impl Fn(usize) -> bool) -> Vec<f64> {
    let mut g = vec![f64::INFINITY; nx * ny];
    for (e, gi) in g.iter_mut().enumerate() {
        if seed(e) {
            *gi = 0.0;
        }
    }
    // columns then rows
    let mut tmp = vec![0.0f64; ny.max(nx)];
    let mut col = vec![0.0f64; ny];
    for i in 0..nx {
        for j in 0..ny {
            col[j] = g[i + nx * j];
        }
        dt_1d(&col, &mut tmp[..ny]);
        for j in 0..ny {
            g[i + nx * j] = tmp[j];
        }
    }
    let mut row = vec![0.0f64; nx];
    for j in 0..ny {
        row.copy_from_slice(&g[nx * j..nx * (j + 1)]);
        dt_1d(&row, &mut tmp[..nx]);
        g[nx * j..nx * (j + 1)].copy_from_slice(&tmp[..nx]);
    }
    g
}

/// Squared distance to the nearest void element or domain boundary.
fn void_distance_sq(layer: &BinaryLayer) -> Vec<f64> {
    let (nx, ny) = (layer.nx, layer.ny);
    let occ = &layer.occupancy;
    let mut d = distance_sq(nx, ny, |e| !occ[e]);
    for j in 0..ny {
        for i in 0..nx {
            let border = (i + 1).min(nx - i).min(j + 1).min(ny - j) as f64;
            let e = i + nx * j;
            d[e] = d[e].min(border * border);
        }
    }
    d
}

/// Morphological opening by a discrete disk: erosion then dilation, element
/// centers within `radius_elems` of the disk center (everything outside the
/// grid is void).
pub fn opening(layer: &BinaryLayer, radius_elems: f64) -> Result<BinaryLayer> {
    if !(radius_elems >= 0.0) {
        return Err(Error::Config(format!("opening radius must be >= 0, got {radius_elems}")));
    }
    let r2 = radius_elems * radius_elems;
    let (nx, ny) = (layer.nx, layer.ny);
    // erosion: solid elements farther than the radius from any void/boundary
    let dv = void_distance_sq(layer);
    let eroded: Vec<bool> = layer
        .occupancy
        .iter()
        .zip(&dv)
        .map(|(&occ, &d)| occ && d > r2)
        .collect();
    // dilation of the eroded set by the same disk
    if eroded.iter().all(|e| !e) {
        return Ok(BinaryLayer { nx, ny, layer_index: layer.layer_index, occupancy: eroded });
    }
    let ds = distance_sq(nx, ny, |e| eroded[e]);
    let occupancy = ds.iter().map(|&d| d <= r2).collect();
    Ok(BinaryLayer { nx, ny, layer_index: layer.layer_index, occupancy })
}

/// Printability of a design for a given nozzle radius (mm): the fraction of
/// binarized area covered by the opening of each layer, aggregated over
/// layers.
pub fn printability_index(
    field: &DensityField,
    r_nozzle: f64,
    build_axis: usize,
) -> Result<PrintabilityReport> {
    let h = field.grid().elem_size;
    let layers = binarize(field, 0.5, build_axis)?;
    let mut total_area = 0usize;
    let mut total_filled = 0usize;
    let mut per_layer = Vec::with_capacity(layers.len());
    let mut unfilled = Vec::with_capacity(layers.len());
    for layer in &layers {
        let opened = opening(layer, r_nozzle / h)?;
        let area = layer.count();
        let filled = opened.count();
        total_area += area;
        total_filled += filled;
        per_layer.push((layer.layer_index, area, filled));
        let mask = BinaryLayer {
            nx: layer.nx,
            ny: layer.ny,
            layer_index: layer.layer_index,
            occupancy: layer
                .occupancy
                .iter()
                .zip(&opened.occupancy)
                .map(|(&a, &b)| a && !b)
                .collect(),
        };
        unfilled.push(mask);
    }
    let empty_design = total_area == 0;
    let index = if empty_design {
        100.0
    } else {
        100.0 * total_filled as f64 / total_area as f64
    };
    Ok(PrintabilityReport { layers: per_layer, index, unfilled, empty_design })
}

/// Per-element inscribed radius (mm) of the solid phase: the largest opening
/// radius that still covers the element, swept in half-element steps.
///
/// The sweep is evaluated in closed form: a disk center `c` supports radius
/// `R(c)`, the largest half-step strictly below its void distance, and every
/// element within `R(c)` of `c` inherits at least that size.
pub fn member_size_map(layer: &BinaryLayer, elem_size: f64) -> Vec<f64> {
    let (nx, ny) = (layer.nx, layer.ny);
    let dv = void_distance_sq(layer);
    // largest k (in half-elements) with (k/2)^2 < d^2
    let support: Vec<f64> = layer
        .occupancy
        .iter()
        .zip(&dv)
        .map(|(&occ, &d2)| {
            if !occ {
                return -1.0;
            }
            let mut k = (2.0 * d2.sqrt()).ceil() as i64;
            while k > 0 && (k * k) as f64 >= 4.0 * d2 {
                k -= 1;
            }
            k as f64 / 2.0
        })
        .collect();
    let mut size = vec![0.0f64; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let s = support[i + nx * j];
            if s < 0.0 {
                continue;
            }
            let reach = s.floor() as i64;
            let s2 = s * s;
            for dj in -reach..=reach {
                let jj = j as i64 + dj;
                if jj < 0 || jj >= ny as i64 {
                    continue;
                }
                for di in -reach..=reach {
                    let ii = i as i64 + di;
                    if ii < 0 || ii >= nx as i64 {
                        continue;
                    }
                    if ((di * di + dj * dj) as f64) <= s2 {
                        let e = ii as usize + nx * jj as usize;
                        if size[e] < s {
                            size[e] = s;
                        }
                    }
                }
            }
        }
    }
    for (sz, &occ) in size.iter_mut().zip(&layer.occupancy) {
        if !occ {
            *sz = 0.0;
        } else {
            *sz *= elem_size;
        }
    }
    size
}

/// Inscribed radii of the void phase (complement of the layer).
pub fn void_size_map(layer: &BinaryLayer, elem_size: f64) -> Vec<f64> {
    member_size_map(&layer.complement(), elem_size)
}
