//! Evaluation: matched mean IoU, identity switches on sequences, latent
//! traversal grids and single-object manipulation.

use objman_tensor::Scalar;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::datagen::GroundTruth;
use crate::image::{ImageTensor, LabelMap};
use crate::model::Networks;
use crate::segnet::MaskStack;
use crate::{Error, Result};

/// Largest number of ground-truth regions the exact matcher accepts.
pub const MAX_REGIONS: usize = 16;

/// Optimal one-to-one matching between predicted channels and ground-truth regions.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    /// For each predicted channel, the matched region (0 is background, `r` object `r`).
    pub assignment: Vec<Option<usize>>,
    /// `iou[c][r]` between hard-assigned channel `c` and region `r`.
    pub iou: Vec<Vec<f64>>,
    /// Whether each region has at least one pixel.
    pub present: Vec<bool>,
}

impl MatchResult {
    /// Matched channel of region `r`.
    pub fn channel_of(&self, r: usize) -> Option<usize> {
        self.assignment.iter().position(|&a| a == Some(r))
    }

    /// IoU achieved by region `r` under the matching (0 when unmatched).
    pub fn region_iou(&self, r: usize) -> f64 {
        self.channel_of(r).map_or(0.0, |c| self.iou[c][r])
    }

    fn mean_over(&self, regions: impl Iterator<Item = usize>) -> f64 {
        let (sum, n) = regions.filter(|&r| self.present[r]).fold((0.0, 0usize), |(s, n), r| (s + self.region_iou(r), n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Mean over present regions including background.
    pub fn mean_with_background(&self) -> f64 {
        self.mean_over(0..self.present.len())
    }

    /// Mean over present object regions only.
    pub fn mean_objects_only(&self) -> f64 {
        self.mean_over(1..self.present.len())
    }
}

/// IoU matrix `[channels][regions]` between two label maps.
pub fn iou_matrix(pred: &LabelMap, channels: usize, gt: &LabelMap, regions: usize) -> Result<Vec<Vec<f64>>> {
    if (pred.height, pred.width) != (gt.height, gt.width) {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height, pred.width, gt.height, gt.width
        )));
    }
    let mut inter = vec![vec![0usize; regions]; channels];
    let mut pa = vec![0usize; channels];
    let mut ga = vec![0usize; regions];
    for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
        let (p, g) = (p as usize, g as usize);
        if p >= channels || g >= regions {
            return Err(Error::Shape(format!("label {p}/{g} outside {channels} channels / {regions} regions")));
        }
        inter[p][g] += 1;
        pa[p] += 1;
        ga[g] += 1;
    }
    Ok((0..channels)
        .map(|c| {
            (0..regions)
                .map(|r| {
                    let union = pa[c] + ga[r] - inter[c][r];
                    if union == 0 {
                        0.0
                    } else {
                        inter[c][r] as f64 / union as f64
                    }
                })
                .collect()
        })
        .collect())
}

/// Injective channel→region assignment maximizing the summed score.
///
/// Exact dynamic programme over subsets of regions; ties resolve toward
/// leaving lower channels matched to lower regions.
pub fn optimal_assignment(score: &[Vec<f64>], regions: usize) -> Result<Vec<Option<usize>>> {
    if regions > MAX_REGIONS {
        return Err(Error::Argument(format!("{regions} regions exceed the exact matcher limit of {MAX_REGIONS}")));
    }
    let k = score.len();
    let full = 1usize << regions;
    // best[c][s]: best total using channels c.. with region set s already used.
    let mut best = vec![vec![0.0f64; full]; k + 1];
    for c in (0..k).rev() {
        for s in 0..full {
            let mut b = best[c + 1][s];
            for r in 0..regions {
                if s & (1 << r) == 0 {
                    let v = score[c][r] + best[c + 1][s | (1 << r)];
                    if v > b {
                        b = v;
                    }
                }
            }
            best[c][s] = b;
        }
    }
    let mut assignment = vec![None; k];
    let mut s = 0usize;
    for (c, slot) in assignment.iter_mut().enumerate() {
        let target = best[c][s];
        if best[c + 1][s] == target {
            continue;
        }
        for r in 0..regions {
            if s & (1 << r) == 0 && score[c][r] + best[c + 1][s | (1 << r)] == target {
                *slot = Some(r);
                s |= 1 << r;
                break;
            }
        }
    }
    Ok(assignment)
}

/// Matched mean IoU between predicted masks and ground truth; the scalar
/// includes the background region. Regions with no pixels are left out of
/// the means; present regions left unmatched score 0.
pub fn mean_iou<T: Scalar>(pred: &MaskStack<T>, gt: &GroundTruth) -> Result<(f64, MatchResult)> {
    let regions = gt.num_objects() + 1;
    let labels = pred.hard_assign();
    let iou = iou_matrix(&labels, pred.k(), &gt.label_map, regions)?;
    let assignment = optimal_assignment(&iou, regions)?;
    let mut present = vec![false; regions];
    for &l in &gt.label_map.labels {
        present[l as usize] = true;
    }
    let m = MatchResult { assignment, iou, present };
    Ok((m.mean_with_background(), m))
}

/// Identity switches over a set of sequences.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SwitchReport {
    /// Object-level switch events per sequence.
    pub per_sequence: Vec<usize>,
}

impl SwitchReport {
    pub fn total_sequences(&self) -> usize {
        self.per_sequence.len()
    }

    /// Sequences with at least one switch.
    pub fn switched_sequences(&self) -> usize {
        self.per_sequence.iter().filter(|&&c| c > 0).count()
    }

    pub fn switch_events(&self) -> usize {
        self.per_sequence.iter().sum()
    }

    pub fn rate(&self) -> f64 {
        if self.per_sequence.is_empty() {
            0.0
        } else {
            self.switched_sequences() as f64 / self.total_sequences() as f64
        }
    }

    /// `switched/total`, e.g. `3/200`.
    pub fn fraction(&self) -> String {
        format!("{}/{}", self.switched_sequences(), self.total_sequences())
    }
}

/// Object-level switch events in one sequence.
///
/// Each frame is matched independently. An object switches when its matched
/// channel differs from the previous frame's; frames where either match is
/// missing (object absent or unmatched) are not compared.
pub fn sequence_switches<T: Scalar>(masks: &[MaskStack<T>], gts: &[GroundTruth]) -> Result<usize> {
    if masks.is_empty() || masks.len() != gts.len() {
        return Err(Error::Argument(format!("sequence has {} mask frames and {} ground truths", masks.len(), gts.len())));
    }
    let objects = gts[0].num_objects();
    if gts.iter().any(|g| g.num_objects() != objects) {
        return Err(Error::Argument("ground-truth object count changes within a sequence".into()));
    }
    let mut prev: Option<Vec<Option<usize>>> = None;
    let mut switches = 0;
    for (m, g) in masks.iter().zip(gts) {
        let (_, matched) = mean_iou(m, g)?;
        let channels: Vec<Option<usize>> = (1..=objects)
            .map(|r| matched.channel_of(r).filter(|&c| matched.present[r] && matched.iou[c][r] > 0.0))
            .collect();
        if let Some(p) = &prev {
            switches += p.iter().zip(&channels).filter(|(a, b)| matches!((a, b), (Some(x), Some(y)) if x != y)).count();
        }
        prev = Some(channels);
    }
    Ok(switches)
}

/// Switch counts over many sequences of (masks, ground truth) frames.
pub fn identity_switch_count<T: Scalar>(sequences: &[(Vec<MaskStack<T>>, Vec<GroundTruth>)]) -> Result<SwitchReport> {
    let per_sequence = sequences.iter().map(|(m, g)| sequence_switches(m, g)).collect::<Result<_>>()?;
    Ok(SwitchReport { per_sequence })
}

fn check_object<T: Scalar>(nets: &Networks<T>, object: usize) -> Result<()> {
    if object >= nets.k() {
        return Err(Error::Argument(format!("object index {object} out of range for K = {}", nets.k())));
    }
    Ok(())
}

/// Tiles `rows × cols` equally sized images with 1-pixel white separators.
pub fn tile_grid(cells: &[Vec<ImageTensor>]) -> Result<ImageTensor> {
    let first = cells.first().and_then(|r| r.first()).ok_or_else(|| Error::Argument("empty grid".into()))?;
    let (h, w) = (first.height(), first.width());
    let rows = cells.len();
    let cols = cells[0].len();
    if cells.iter().any(|r| r.len() != cols || r.iter().any(|c| (c.height(), c.width()) != (h, w))) {
        return Err(Error::Shape("grid cells must form a full grid of equal sizes".into()));
    }
    let mut grid = ImageTensor::filled(rows * h + rows - 1, cols * w + cols - 1, [1.0; 3]);
    for (ri, row) in cells.iter().enumerate() {
        for (ci, cell) in row.iter().enumerate() {
            for i in 0..h {
                for j in 0..w {
                    grid.set_pixel(ri * (h + 1) + i, ci * (w + 1) + j, cell.pixel(i, j));
                }
            }
        }
    }
    Ok(grid)
}

/// Latent traversal of one object.
#[derive(Clone, Debug, PartialEq)]
pub struct TraversalGrid {
    /// One row per traversed dimension, one column per value.
    pub cells: Vec<Vec<ImageTensor>>,
    pub grid: ImageTensor,
}

/// Sets latent coordinate `dim` of `object` (posterior mean) to each value in turn and decodes.
pub fn latent_traversal_grid<T: Scalar>(
    nets: &Networks<T>,
    image: &ImageTensor,
    object: usize,
    dims: &[usize],
    values: &[f64],
) -> Result<TraversalGrid> {
    check_object(nets, object)?;
    let d = nets.config.latent_dim();
    if let Some(&bad) = dims.iter().find(|&&x| x >= d) {
        return Err(Error::Argument(format!("latent dimension {bad} out of range for {d}")));
    }
    if dims.is_empty() || values.is_empty() {
        return Err(Error::Argument("traversal needs at least one dimension and one value".into()));
    }
    let (_, latents) = nets.encode_scene(image)?;
    let base = latents.means();
    let mut cells = Vec::with_capacity(dims.len());
    for &dim in dims {
        let mut row = Vec::with_capacity(values.len());
        for &v in values {
            let mut z = base.clone();
            z[object][dim] = v;
            row.push(nets.decode(&z)?.fused_image()?);
        }
        cells.push(row);
    }
    let grid = tile_grid(&cells)?;
    Ok(TraversalGrid { cells, grid })
}

/// Adds each `(object, delta)` edit to the latents; edits on different objects commute.
pub fn edit_latents(latents: &[Vec<f64>], edits: &[(usize, Vec<f64>)]) -> Result<Vec<Vec<f64>>> {
    let mut z = latents.to_vec();
    for (object, delta) in edits {
        let row = z.get_mut(*object).ok_or_else(|| Error::Argument(format!("object index {object} out of range")))?;
        if delta.len() != row.len() {
            return Err(Error::Argument(format!("delta has {} entries, latent has {}", delta.len(), row.len())));
        }
        for (a, b) in row.iter_mut().zip(delta) {
            *a += b;
        }
    }
    Ok(z)
}

/// Re-synthesizes the scene with `object`'s latent mean shifted by `delta`.
pub fn manipulate<T: Scalar>(nets: &Networks<T>, image: &ImageTensor, object: usize, delta: &[f64]) -> Result<ImageTensor> {
    check_object(nets, object)?;
    let (_, latents) = nets.encode_scene(image)?;
    let z = edit_latents(&latents.means(), &[(object, delta.to_vec())])?;
    nets.decode(&z)?.fused_image()
}

/// Mean absolute pixel change inside and outside a region after an edit.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LocalityStats {
    pub inside: f64,
    pub outside: f64,
}

impl LocalityStats {
    pub fn ratio(&self) -> f64 {
        self.inside / self.outside.max(1e-12)
    }
}

/// Perturbs the channel matched to ground-truth object `r` by `delta` and
/// compares the re-synthesized image with the plain reconstruction. Returns
/// `None` when the object is absent or unmatched.
pub fn edit_locality<T: Scalar>(
    nets: &Networks<T>,
    image: &ImageTensor,
    gt: &GroundTruth,
    r: usize,
    delta: &[f64],
) -> Result<Option<LocalityStats>> {
    let (masks, latents) = nets.encode_scene(image)?;
    let (_, matched) = mean_iou(&masks, gt)?;
    let Some(channel) = matched.channel_of(r).filter(|_| matched.present.get(r) == Some(&true)) else {
        return Ok(None);
    };
    let base = latents.means();
    let plain = nets.decode(&base)?.fused_image()?;
    let edited = nets.decode(&edit_latents(&base, &[(channel, delta.to_vec())])?)?.fused_image()?;
    let region = gt.region_mask(r);
    let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
    for (p, &inside) in region.iter().enumerate() {
        let d: f64 = (0..3).map(|c| (plain.data()[p * 3 + c] - edited.data()[p * 3 + c]).abs() as f64).sum::<f64>() / 3.0;
        if inside {
            si += d;
            ni += 1;
        } else {
            so += d;
            no += 1;
        }
    }
    if ni == 0 || no == 0 {
        return Ok(None);
    }
    Ok(Some(LocalityStats { inside: si / ni as f64, outside: so / no as f64 }))
}

/// Standard-normal latent perturbation of the model's latent size.
pub fn random_delta<T: Scalar, R: Rng + ?Sized>(nets: &Networks<T>, rng: &mut R) -> Vec<f64> {
    (0..nets.config.latent_dim()).map(|_| rng.sample(StandardNormal)).collect()
}

/// Mean absolute change of `object`'s decoded mask under an appearance-only edit.
pub fn appearance_edit_mask_shift<T: Scalar>(
    nets: &Networks<T>,
    image: &ImageTensor,
    object: usize,
    appearance_delta: &[f64],
) -> Result<f64> {
    check_object(nets, object)?;
    let na = nets.config.appearance_dim;
    if appearance_delta.len() != na {
        return Err(Error::Argument(format!("appearance delta needs {na} entries")));
    }
    let mut delta = appearance_delta.to_vec();
    delta.resize(nets.config.latent_dim(), 0.0);
    let (_, latents) = nets.encode_scene(image)?;
    let base = latents.means();
    let a = nets.decode(&base)?.mask(object);
    let b = nets.decode(&edit_latents(&base, &[(object, delta)])?)?.mask(object);
    Ok(a.iter().zip(&b).map(|(x, y)| (x.as_f64() - y.as_f64()).abs()).sum::<f64>() / a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignment_prefers_larger_total() {
        let score = vec![vec![0.9, 0.8], vec![0.85, 0.1]];
        assert_eq!(optimal_assignment(&score, 2).unwrap(), vec![Some(1), Some(0)]);
    }

    #[test]
    fn zero_scores_leave_channels_unmatched() {
        let score = vec![vec![0.0, 0.0]; 3];
        assert_eq!(optimal_assignment(&score, 2).unwrap(), vec![None; 3]);
    }

    #[test]
    fn grid_layout() {
        let cell = ImageTensor::filled(3, 2, [0.0; 3]);
        let g = tile_grid(&vec![vec![cell.clone(); 4]; 2]).unwrap();
        assert_eq!((g.height(), g.width()), (2 * 3 + 1, 4 * 2 + 3));
        assert_eq!(g.pixel(3, 0), [1.0; 3]);
        assert_eq!(g.pixel(0, 2), [1.0; 3]);
        assert_eq!(g.pixel(4, 3), [0.0; 3]);
    }

    #[test]
    fn edits_commute() {
        let z = vec![vec![0.0, 1.0], vec![2.0, 3.0]];
        let a = edit_latents(&z, &[(0, vec![0.5, -1.0]), (1, vec![1.0, 1.0])]).unwrap();
        let b = edit_latents(&z, &[(1, vec![1.0, 1.0]), (0, vec![0.5, -1.0])]).unwrap();
        assert_eq!(a, b);
        assert!(edit_latents(&z, &[(2, vec![0.0, 0.0])]).is_err());
        assert!(edit_latents(&z, &[(0, vec![0.0])]).is_err());
    }
}
