//! Heterogeneous Young's modulus fields and the derived coefficient fields.
//!
//! Media are piecewise constant per fine cell. Cell `(x, y[, z])` has linear
//! index `x + n (y + n z)`; raster files use the same order.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CemError, Result};
use crate::grid::{for_each_in_box, GridHierarchy, PartitionOfUnity};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    fn from_index(k: usize) -> Self {
        [Axis::X, Axis::Y, Axis::Z][k]
    }
}

/// Second leg of an L-shaped channel, starting where the first leg ends.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bend {
    pub direction: Axis,
    pub length: usize,
}

/// Straight or L-shaped strip of high-modulus cells with a square cross
/// section of `thickness` cells.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub start: [usize; 3],
    pub direction: Axis,
    pub length: usize,
    pub thickness: usize,
    #[serde(default)]
    pub bend: Option<Bend>,
}

/// Box of high-modulus cells.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inclusion {
    pub corner: [usize; 3],
    pub extents: [usize; 3],
}

/// Seeded random placement of channels and inclusions. Sizes are fractions
/// of the domain width so layouts look alike across resolutions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomLayout {
    pub channels: usize,
    pub inclusions: usize,
    /// Channel thickness as a fraction of the domain width.
    pub thickness: f64,
    /// Channel length range, as fractions of the domain width.
    pub min_length: f64,
    pub max_length: f64,
    /// Probability that a channel has a second leg.
    pub bend_probability: f64,
    /// Inclusion edge length range, as fractions of the domain width.
    pub min_inclusion: f64,
    pub max_inclusion: f64,
    /// Smallest background gap between features, as a fraction of the
    /// domain width. Candidates closer than this are redrawn.
    #[serde(default)]
    pub min_gap: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Model1Like,
    Model2Like,
}

impl Preset {
    pub fn dim(self) -> usize {
        match self {
            Preset::Model1Like => 2,
            Preset::Model2Like => 3,
        }
    }

    pub fn default_resolution(self) -> usize {
        match self {
            Preset::Model1Like => 128,
            Preset::Model2Like => 32,
        }
    }

    pub fn default_seed(self) -> u64 {
        match self {
            Preset::Model1Like => 20_190_707,
            Preset::Model2Like => 20_190_708,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Model1Like => "model1-like",
            Preset::Model2Like => "model2-like",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = CemError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "model1-like" => Ok(Preset::Model1Like),
            "model2-like" => Ok(Preset::Model2Like),
            _ => Err(CemError::InvalidMedium(format!("unknown preset `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MediumSpec {
    pub dim: usize,
    pub n_fine: usize,
    #[serde(default = "one")]
    pub e_background: f64,
    pub e_high: f64,
    #[serde(default)]
    pub channels: Vec<Channel>,
    #[serde(default)]
    pub inclusions: Vec<Inclusion>,
    #[serde(default)]
    pub random: Option<RandomLayout>,
    #[serde(default)]
    pub seed: u64,
    /// Cell-value file replacing everything above except `dim` and `n_fine`.
    #[serde(default)]
    pub raster: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}

impl MediumSpec {
    pub fn uniform(dim: usize, n_fine: usize) -> Self {
        Self {
            dim,
            n_fine,
            e_background: 1.0,
            e_high: 1.0,
            channels: Vec::new(),
            inclusions: Vec::new(),
            random: None,
            seed: 0,
            raster: None,
        }
    }

    /// Shipped preset at resolution `n_fine` and high value `contrast`.
    pub fn preset(preset: Preset, n_fine: usize, contrast: f64) -> Self {
        let mut spec = Self::uniform(preset.dim(), n_fine);
        spec.e_high = contrast;
        spec.seed = preset.default_seed();
        spec.random = Some(match preset {
            Preset::Model1Like => RandomLayout {
                channels: 10,
                inclusions: 30,
                thickness: 1.0 / 64.0,
                min_length: 0.35,
                max_length: 0.9,
                bend_probability: 0.35,
                min_inclusion: 1.0 / 64.0,
                max_inclusion: 3.0 / 64.0,
                min_gap: 1.0 / 8.0,
            },
            Preset::Model2Like => RandomLayout {
                channels: 20,
                inclusions: 40,
                thickness: 1.0 / 16.0,
                min_length: 0.4,
                max_length: 0.9,
                bend_probability: 0.3,
                min_inclusion: 1.0 / 16.0,
                max_inclusion: 3.0 / 32.0,
                min_gap: 0.0,
            },
        });
        spec
    }

    /// Explicit channels of the spec followed by the seeded random ones.
    pub fn resolved_channels(&self) -> Vec<Channel> {
        let mut out = self.channels.clone();
        if let Some(layout) = &self.random {
            out.extend(random_features(self, layout).0);
        }
        out
    }

    fn check(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return Err(CemError::InvalidMedium(format!("dimension must be 2 or 3, got {}", self.dim)));
        }
        if self.n_fine == 0 {
            return Err(CemError::InvalidMedium("fine resolution must be positive".into()));
        }
        for (what, v) in [("e_background", self.e_background), ("e_high", self.e_high)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(CemError::InvalidMedium(format!("{what} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-cell Young's modulus for `spec`.
pub fn generate_medium(spec: &MediumSpec) -> Result<Vec<f64>> {
    spec.check()?;
    if let Some(path) = &spec.raster {
        return load_raster(path, spec.dim, spec.n_fine);
    }
    let n = spec.n_fine;
    let dim = spec.dim;
    let mut field = vec![spec.e_background; n.pow(dim as u32)];
    let mut paint = |lo: [usize; 3], hi: [usize; 3]| {
        for_each_in_box(lo, hi, dim, |c| {
            let mut idx = 0;
            for k in (0..dim).rev() {
                idx = idx * n + c[k];
            }
            field[idx] = spec.e_high;
        });
    };

    for (ci, ch) in spec.channels.iter().enumerate() {
        for (lo, hi) in channel_boxes(ch, dim)? {
            check_box(lo, hi, dim, n).map_err(|e| {
                CemError::InvalidMedium(format!("channel {ci} starting at {:?}: {e}", &ch.start[..dim]))
            })?;
            paint(lo, hi);
        }
    }
    for (ii, inc) in spec.inclusions.iter().enumerate() {
        let (lo, hi) = inclusion_box(inc, dim);
        check_box(lo, hi, dim, n).map_err(|e| {
            CemError::InvalidMedium(format!("inclusion {ii} at {:?}: {e}", &inc.corner[..dim]))
        })?;
        paint(lo, hi);
    }
    if let Some(layout) = &spec.random {
        let (channels, inclusions) = random_features(spec, layout);
        for ch in &channels {
            for (lo, hi) in channel_boxes(ch, dim)? {
                paint(lo, hi);
            }
        }
        for inc in &inclusions {
            let (lo, hi) = inclusion_box(inc, dim);
            paint(lo, hi);
        }
    }
    Ok(field)
}

fn inclusion_box(inc: &Inclusion, dim: usize) -> ([usize; 3], [usize; 3]) {
    let mut lo = [0; 3];
    let mut hi = [1; 3];
    for k in 0..dim {
        lo[k] = inc.corner[k];
        hi[k] = inc.corner[k] + inc.extents[k];
    }
    (lo, hi)
}

fn channel_boxes(ch: &Channel, dim: usize) -> Result<Vec<([usize; 3], [usize; 3])>> {
    let leg = |start: [usize; 3], dir: Axis, len: usize| -> Result<([usize; 3], [usize; 3])> {
        let a = dir.index();
        if a >= dim {
            return Err(CemError::InvalidMedium(format!("channel direction {dir:?} in {dim}D")));
        }
        let mut lo = [0; 3];
        let mut hi = [1; 3];
        for k in 0..dim {
            lo[k] = start[k];
            hi[k] = start[k] + if k == a { len } else { ch.thickness };
        }
        Ok((lo, hi))
    };
    let first = leg(ch.start, ch.direction, ch.length)?;
    let mut out = vec![first];
    if let Some(bend) = ch.bend {
        let mut corner = ch.start;
        let a = ch.direction.index();
        corner[a] = (ch.start[a] + ch.length).saturating_sub(ch.thickness);
        out.push(leg(corner, bend.direction, bend.length)?);
    }
    Ok(out)
}

fn check_box(lo: [usize; 3], hi: [usize; 3], dim: usize, n: usize) -> std::result::Result<(), String> {
    for k in 0..dim {
        if hi[k] <= lo[k] {
            return Err(format!("empty extent along axis {k}"));
        }
        if hi[k] > n {
            return Err(format!("extends to {} along axis {k}, beyond {n} cells", hi[k]));
        }
    }
    Ok(())
}

/// Draws per feature before giving up on placing it.
const PLACEMENT_ATTEMPTS: usize = 200;

type CellBox = ([usize; 3], [usize; 3]);

/// Background cells between two boxes along the most separated axis.
fn box_gap(a: &CellBox, b: &CellBox, dim: usize) -> usize {
    (0..dim)
        .map(|k| b.0[k].saturating_sub(a.1[k]).max(a.0[k].saturating_sub(b.1[k])))
        .max()
        .unwrap_or(0)
}

fn random_features(spec: &MediumSpec, layout: &RandomLayout) -> (Vec<Channel>, Vec<Inclusion>) {
    let n = spec.n_fine;
    let dim = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cells = |frac: f64| ((frac * n as f64).round() as usize).clamp(1, n);
    let thickness = cells(layout.thickness);
    let gap = (layout.min_gap * n as f64).round() as usize;
    let mut placed: Vec<CellBox> = Vec::new();
    let fits = |boxes: &[CellBox], placed: &mut Vec<CellBox>| {
        if gap > 0 && boxes.iter().any(|b| placed.iter().any(|p| box_gap(b, p, dim) < gap)) {
            return false;
        }
        placed.extend_from_slice(boxes);
        true
    };
    let mut channels = Vec::with_capacity(layout.channels);
    for _ in 0..layout.channels {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let axis = rng.random_range(0..dim);
            let len = rng.random_range(cells(layout.min_length)..=cells(layout.max_length).max(cells(layout.min_length)));
            let mut start = [0; 3];
            for (k, s) in start.iter_mut().enumerate().take(dim) {
                let extent = if k == axis { len } else { thickness };
                *s = rng.random_range(0..=n - extent);
            }
            let mut ch = Channel {
                start,
                direction: Axis::from_index(axis),
                length: len,
                thickness,
                bend: None,
            };
            if rng.random_bool(layout.bend_probability) {
                let mut other = rng.random_range(0..dim - 1);
                if other >= axis {
                    other += 1;
                }
                let room = n - start[other];
                let blen = rng.random_range(cells(layout.min_length) / 2..=cells(layout.max_length) / 2).min(room);
                if blen > thickness {
                    ch.bend = Some(Bend {
                        direction: Axis::from_index(other),
                        length: blen,
                    });
                }
            }
            let boxes = channel_boxes(&ch, dim).expect("generated channel lies in the domain");
            if fits(&boxes, &mut placed) {
                channels.push(ch);
                break;
            }
        }
    }
    let mut inclusions = Vec::with_capacity(layout.inclusions);
    let (lo, hi) = (cells(layout.min_inclusion), cells(layout.max_inclusion).max(cells(layout.min_inclusion)));
    for _ in 0..layout.inclusions {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let mut corner = [0; 3];
            let mut extents = [1; 3];
            for k in 0..dim {
                extents[k] = rng.random_range(lo..=hi);
                corner[k] = rng.random_range(0..=n - extents[k]);
            }
            let inc = Inclusion { corner, extents };
            if fits(&[inclusion_box(&inc, dim)], &mut placed) {
                inclusions.push(inc);
                break;
            }
        }
    }
    (channels, inclusions)
}

/// Reads `n^dim` positive cell values. Files ending in `.csv` or `.txt` are
/// parsed as text (commas, whitespace or newlines between values); anything
/// else is read as little-endian `f64`.
pub fn load_raster(path: &Path, dim: usize, n: usize) -> Result<Vec<f64>> {
    let expected = n.pow(dim as u32);
    let is_text = matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("csv") | Some("txt")
    );
    let values: Vec<f64> = if is_text {
        let text = std::fs::read_to_string(path)?;
        text.split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| CemError::InvalidMedium(format!("{}: bad value `{t}`: {e}", path.display())))
            })
            .collect::<Result<_>>()?
    } else {
        let bytes = std::fs::read(path)?;
        if bytes.len() % 8 != 0 {
            return Err(CemError::InvalidMedium(format!(
                "{}: size {} is not a multiple of 8",
                path.display(),
                bytes.len()
            )));
        }
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    if values.len() != expected {
        return Err(CemError::InvalidMedium(format!(
            "{}: expected {expected} values, found {}",
            path.display(),
            values.len()
        )));
    }
    if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
        return Err(CemError::InvalidMedium(format!("{}: cell {i} has value {v}", path.display())));
    }
    Ok(values)
}

/// Writes cell values in the raster format chosen by the file extension.
pub fn write_raster(path: &Path, values: &[f64], n: usize) -> Result<()> {
    let is_text = matches!(path.extension().and_then(|e| e.to_str()), Some("csv") | Some("txt"));
    if is_text {
        let mut s = String::with_capacity(values.len() * 8);
        for row in values.chunks(n) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        std::fs::write(path, s)?;
    } else {
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(path, bytes)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LameConvention {
    #[default]
    Paper,
    Standard,
}

/// Lamé parameters `(λ, μ)` for one value of Young's modulus.
pub fn lame_pair(e: f64, nu: f64, convention: LameConvention) -> (f64, f64) {
    let lambda = match convention {
        LameConvention::Paper => nu / ((1.0 + 2.0 * nu) * (1.0 - nu)) * e,
        LameConvention::Standard => nu * e / ((1.0 + nu) * (1.0 - 2.0 * nu)),
    };
    (lambda, e / (2.0 * (1.0 + nu)))
}

/// Pointwise Lamé fields from a Young's modulus field.
pub fn lame_from_young(e: &[f64], nu: f64, convention: LameConvention) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(nu > 0.0 && nu < 0.5) {
        return Err(CemError::InvalidMedium(format!("Poisson ratio must lie in (0, 0.5), got {nu}")));
    }
    let mut lambda = Vec::with_capacity(e.len());
    let mut mu = Vec::with_capacity(e.len());
    for (cell, &v) in e.iter().enumerate() {
        if !(v.is_finite() && v > 0.0) {
            return Err(CemError::NonPositiveCoefficient { cell, what: "E", value: v });
        }
        let (l, m) = lame_pair(v, nu, convention);
        lambda.push(l);
        mu.push(m);
    }
    Ok((lambda, mu))
}

/// Nodal `κ̃ = Σ_i (λ+2μ)|∇χ_i|²`, averaging the evaluations from the cells
/// adjacent to each node.
pub fn kappa_tilde(grid: &GridHierarchy, lambda: &[f64], mu: &[f64], pou: &PartitionOfUnity) -> Vec<f64> {
    let r = grid.ratio();
    let dim = grid.dim();
    (0..grid.n_nodes())
        .map(|node| {
            let c = grid.node_coords(node);
            let mut t = [0; 3];
            for k in 0..dim {
                t[k] = c[k] % r;
            }
            let g = pou.grad_sq_sum(t);
            let cells = grid.node_cells(node);
            let w: f64 = cells.iter().map(|&e| lambda[e] + 2.0 * mu[e]).sum::<f64>() / cells.len() as f64;
            w * g
        })
        .collect()
}

/// `(λ+2μ)|∇χ|²` as seen from each cell at each of its corners, laid out
/// `[cell * corners + a]`. Integrating this with the vertex rule keeps the
/// weight of a cell inside that cell, so a block restriction never sees the
/// coefficient of a neighbouring block.
pub fn kappa_corners(grid: &GridHierarchy, lambda: &[f64], mu: &[f64], pou: &PartitionOfUnity) -> Vec<f64> {
    let r = grid.ratio();
    let dim = grid.dim();
    let nc = grid.corners_per_cell();
    let mut out = Vec::with_capacity(grid.n_cells() * nc);
    for cell in 0..grid.n_cells() {
        let p = lambda[cell] + 2.0 * mu[cell];
        for &node in grid.cell_nodes(cell).iter().take(nc) {
            let c = grid.node_coords(node);
            let mut t = [0; 3];
            for k in 0..dim {
                t[k] = c[k] % r;
            }
            out.push(p * pou.grad_sq_sum(t));
        }
    }
    out
}

/// Every coefficient field used downstream.
#[derive(Clone, Debug)]
pub struct CoefficientField {
    pub young: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    /// Nodal `κ̃`.
    pub kappa: Vec<f64>,
    /// Per cell corner weights, see [`kappa_corners`].
    pub kappa_corner: Vec<f64>,
}

impl CoefficientField {
    pub fn new(
        grid: &GridHierarchy,
        young: Vec<f64>,
        nu: f64,
        convention: LameConvention,
        pou: &PartitionOfUnity,
    ) -> Result<Self> {
        if young.len() != grid.n_cells() {
            return Err(CemError::InvalidMedium(format!(
                "medium has {} cells, grid has {}",
                young.len(),
                grid.n_cells()
            )));
        }
        let (lambda, mu) = lame_from_young(&young, nu, convention)?;
        let kappa = kappa_tilde(grid, &lambda, &mu, pou);
        let kappa_corner = kappa_corners(grid, &lambda, &mu, pou);
        Ok(Self {
            young,
            lambda,
            mu,
            kappa,
            kappa_corner,
        })
    }

    /// `λ+2μ` per cell.
    pub fn p_modulus(&self) -> Vec<f64> {
        self.lambda.iter().zip(&self.mu).map(|(l, m)| l + 2.0 * m).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_pou;

    #[test]
    fn empty_spec_is_uniform() {
        let e = generate_medium(&MediumSpec::uniform(2, 16)).unwrap();
        assert_eq!(e, vec![1.0; 256]);
    }

    #[test]
    fn full_width_channel_count() {
        let mut spec = MediumSpec::uniform(2, 32);
        spec.e_high = 1e4;
        spec.channels.push(Channel {
            start: [0, 10, 0],
            direction: Axis::X,
            length: 32,
            thickness: 2,
            bend: None,
        });
        let e = generate_medium(&spec).unwrap();
        assert_eq!(e.iter().filter(|&&v| v == 1e4).count(), 64);
    }

    #[test]
    fn l_shaped_channel() {
        let mut spec = MediumSpec::uniform(2, 16);
        spec.e_high = 5.0;
        spec.channels.push(Channel {
            start: [2, 2, 0],
            direction: Axis::X,
            length: 8,
            thickness: 1,
            bend: Some(Bend { direction: Axis::Y, length: 5 }),
        });
        let e = generate_medium(&spec).unwrap();
        assert_eq!(e.iter().filter(|&&v| v == 5.0).count(), 8 + 4);
        assert_eq!(e[9 + 16 * 6], 5.0);
    }

    #[test]
    fn out_of_bounds_rejected() {
        let mut spec = MediumSpec::uniform(2, 16);
        spec.e_high = 2.0;
        spec.inclusions.push(Inclusion { corner: [14, 3, 0], extents: [4, 1, 1] });
        let err = generate_medium(&spec).unwrap_err().to_string();
        assert!(err.contains("inclusion 0"), "{err}");
    }

    #[test]
    fn presets_are_deterministic_and_binary() {
        for preset in [Preset::Model1Like, Preset::Model2Like] {
            let spec = MediumSpec::preset(preset, preset.default_resolution(), 1e4);
            let a = generate_medium(&spec).unwrap();
            let b = generate_medium(&spec).unwrap();
            assert_eq!(a, b);
            assert!(a.iter().all(|&v| v == 1.0 || v == 1e4));
            let frac = a.iter().filter(|&&v| v > 1.0).count() as f64 / a.len() as f64;
            assert!(frac > 0.03 && frac < 0.4, "{frac}");
        }
    }

    #[test]
    fn preset_has_long_channel() {
        let spec = MediumSpec::preset(Preset::Model1Like, 128, 1e4);
        let longest = spec.resolved_channels().iter().map(|c| c.length).max().unwrap();
        assert!(longest >= 2 * 128 / 8);
    }

    #[test]
    fn lame_values() {
        let (l, m) = lame_pair(1.0, 0.2, LameConvention::Paper);
        assert!((l - 0.2 / (1.4 * 0.8)).abs() < 1e-15);
        assert!((l - 0.178_571_428_571_428_6).abs() < 1e-12);
        assert!((m - 0.416_666_666_666_666_7).abs() < 1e-12);
        let (l, m) = lame_pair(1e4, 0.2, LameConvention::Paper);
        assert!((l - 1785.714_285_714_285_7).abs() < 1e-9);
        assert!((m - 4166.666_666_666_667).abs() < 1e-9);
        let (l, _) = lame_pair(1.0, 0.2, LameConvention::Standard);
        assert!((l - 0.2 / (1.2 * 0.6)).abs() < 1e-15);
        assert!(lame_from_young(&[0.0], 0.2, LameConvention::Paper).is_err());
        assert!(lame_from_young(&[1.0], 0.5, LameConvention::Paper).is_err());
    }

    #[test]
    fn kappa_at_block_center() {
        let g = GridHierarchy::new(2, 64, 8).unwrap();
        let pou = build_pou(&g);
        let (l, m) = lame_from_young(&vec![1.0; g.n_cells()], 0.2, LameConvention::Paper).unwrap();
        let k = kappa_tilde(&g, &l, &m, &pou);
        let center = g.node_index([4 + 8 * 2, 4 + 8 * 5, 0]);
        let expected = (l[0] + 2.0 * m[0]) * 128.0;
        assert!((k[center] - expected).abs() < 1e-10 * expected);
        assert!((k[center] - 129.52).abs() < 0.01);

        let g2 = GridHierarchy::new(2, 64, 16).unwrap();
        let k2 = kappa_tilde(&g2, &l, &m, &build_pou(&g2));
        let c2 = g2.node_index([2 + 4 * 3, 2 + 4 * 7, 0]);
        assert!((k2[c2] / k[center] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn kappa_matches_direct_gradients() {
        // Brute force: finite differences of every hat on the cell around a point.
        let g = GridHierarchy::new(2, 12, 3).unwrap();
        let pou = build_pou(&g);
        let big_h = g.coarse_h();
        for node in [g.node_index([5, 7, 0]), g.node_index([4, 4, 0]), g.node_index([1, 11, 0])] {
            let x = g.node_position(node);
            // Evaluate inside the block containing the node (lower-left preference).
            let mut s = 0.0;
            for v in 0..g.n_vertices() {
                let xv = g.vertex_position(v);
                let mut grad = [0.0; 2];
                for k in 0..2 {
                    let mut prod = 1.0;
                    let mut d = 0.0;
                    for l in 0..2 {
                        let t = (x[l] - xv[l]) / big_h;
                        let hat = (1.0 - t.abs()).max(0.0);
                        if l == k {
                            d = if t.abs() < 1.0 { -t.signum() / big_h } else { 0.0 };
                            if t == 0.0 {
                                d = 0.0;
                            }
                        } else {
                            prod *= hat;
                        }
                    }
                    grad[k] = d * prod;
                }
                s += grad[0] * grad[0] + grad[1] * grad[1];
            }
            let c = g.node_coords(node);
            let on_line = (0..2).any(|k| c[k] % g.ratio() == 0);
            if !on_line {
                let t = [c[0] % g.ratio(), c[1] % g.ratio(), 0];
                assert!((pou.grad_sq_sum(t) - s).abs() < 1e-10 * s);
            }
        }
    }

    #[test]
    fn kappa_linear_in_modulus() {
        let g = GridHierarchy::new(2, 16, 4).unwrap();
        let pou = build_pou(&g);
        let mut spec = MediumSpec::preset(Preset::Model1Like, 16, 100.0);
        spec.seed = 3;
        let e = generate_medium(&spec).unwrap();
        let a = CoefficientField::new(&g, e.clone(), 0.2, LameConvention::Paper, &pou).unwrap();
        let b = CoefficientField::new(&g, e.iter().map(|v| 2.0 * v).collect(), 0.2, LameConvention::Paper, &pou).unwrap();
        for (x, y) in a.kappa.iter().zip(&b.kappa) {
            assert!((2.0 * x - y).abs() <= 1e-12 * y);
            assert!(*x > 0.0);
        }
    }

    #[test]
    fn raster_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = MediumSpec::preset(Preset::Model1Like, 16, 1e3);
        let e = generate_medium(&spec).unwrap();
        for name in ["m.csv", "m.bin"] {
            let path = dir.path().join(name);
            write_raster(&path, &e, 16).unwrap();
            let mut s = MediumSpec::uniform(2, 16);
            s.raster = Some(path.clone());
            assert_eq!(generate_medium(&s).unwrap(), e);
            assert!(load_raster(&path, 2, 8).is_err());
        }
    }
}
