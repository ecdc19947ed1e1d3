//! Segmentation masks, Dice scores and connected components.

use std::collections::HashMap;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Integer label map; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMask {
    labels: Array2<u32>,
}

impl SegMask {
    pub fn new(labels: Array2<u32>) -> Self {
        Self { labels }
    }

    pub fn from_binary(fg: &Array2<bool>) -> Self {
        Self { labels: fg.mapv(|b| if b { 1 } else { 0 }) }
    }

    pub fn height(&self) -> usize {
        self.labels.dim().0
    }

    pub fn width(&self) -> usize {
        self.labels.dim().1
    }

    pub fn labels(&self) -> &Array2<u32> {
        &self.labels
    }

    pub fn foreground_count(&self) -> usize {
        self.labels.iter().filter(|&&v| v > 0).count()
    }

    /// Distinct non-background labels, ascending.
    pub fn object_labels(&self) -> Vec<u32> {
        let mut set: Vec<u32> = self.labels.iter().copied().filter(|&v| v > 0).collect();
        set.sort_unstable();
        set.dedup();
        set
    }
}

/// Labels 4-connected foreground components of a binary mask, row-major
/// discovery order starting at 1.
pub fn connected_components(mask: &SegMask) -> SegMask {
    let (h, w) = mask.labels.dim();
    let mut out = Array2::<u32>::zeros((h, w));
    let mut next = 1u32;
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if mask.labels[[y, x]] == 0 || out[[y, x]] != 0 {
                continue;
            }
            out[[y, x]] = next;
            stack.push((y, x));
            while let Some((cy, cx)) = stack.pop() {
                let visit = |ny: usize, nx: usize, out: &mut Array2<u32>, stack: &mut Vec<(usize, usize)>| {
                    if mask.labels[[ny, nx]] != 0 && out[[ny, nx]] == 0 {
                        out[[ny, nx]] = next;
                        stack.push((ny, nx));
                    }
                };
                if cy > 0 {
                    visit(cy - 1, cx, &mut out, &mut stack);
                }
                if cy + 1 < h {
                    visit(cy + 1, cx, &mut out, &mut stack);
                }
                if cx > 0 {
                    visit(cy, cx - 1, &mut out, &mut stack);
                }
                if cx + 1 < w {
                    visit(cy, cx + 1, &mut out, &mut stack);
                }
            }
            next += 1;
        }
    }
    SegMask::new(out)
}

fn check_shapes(a: &SegMask, b: &SegMask) -> Result<()> {
    if a.labels.dim() != b.labels.dim() {
        return Err(Error::Dimension(format!(
            "mask shapes differ: {:?} vs {:?}",
            a.labels.dim(),
            b.labels.dim()
        )));
    }
    Ok(())
}

/// Pixel-wise Dice over binarized masks: `2|A∩B| / (|A| + |B|)`;
/// both empty scores 1.0 by convention.
pub fn dice_pixel(a: &SegMask, b: &SegMask) -> Result<f64> {
    check_shapes(a, b)?;
    let mut inter = 0usize;
    let mut na = 0usize;
    let mut nb = 0usize;
    for (&va, &vb) in a.labels.iter().zip(b.labels.iter()) {
        let fa = va > 0;
        let fb = vb > 0;
        na += fa as usize;
        nb += fb as usize;
        inter += (fa && fb) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Object-wise Dice over labeled masks.
///
/// Predicted and ground-truth objects are matched one-to-one greedily by
/// descending pairwise IoU; a match requires IoU > 0.5. The score is
/// `2·matches / (n_a + n_b)`; two empty masks score 1.0.
pub fn dice_object(a: &SegMask, b: &SegMask) -> Result<f64> {
    check_shapes(a, b)?;
    let labels_a = a.object_labels();
    let labels_b = b.object_labels();
    if labels_a.is_empty() && labels_b.is_empty() {
        return Ok(1.0);
    }
    if labels_a.is_empty() || labels_b.is_empty() {
        return Ok(0.0);
    }

    // Areas and pairwise intersections in one pass.
    let mut area_a: HashMap<u32, usize> = HashMap::new();
    let mut area_b: HashMap<u32, usize> = HashMap::new();
    let mut inter: HashMap<(u32, u32), usize> = HashMap::new();
    for (&va, &vb) in a.labels.iter().zip(b.labels.iter()) {
        if va > 0 {
            *area_a.entry(va).or_insert(0) += 1;
        }
        if vb > 0 {
            *area_b.entry(vb).or_insert(0) += 1;
        }
        if va > 0 && vb > 0 {
            *inter.entry((va, vb)).or_insert(0) += 1;
        }
    }

    let mut candidates: Vec<(f64, u32, u32)> = inter
        .iter()
        .map(|(&(la, lb), &i)| {
            let union = area_a[&la] + area_b[&lb] - i;
            (i as f64 / union as f64, la, lb)
        })
        .filter(|&(iou, _, _)| iou > 0.5)
        .collect();
    // Descending IoU; label order breaks exact ties deterministically.
    candidates.sort_by(|x, y| {
        y.0.partial_cmp(&x.0)
            .unwrap()
            .then(x.1.cmp(&y.1))
            .then(x.2.cmp(&y.2))
    });

    let mut used_a = std::collections::HashSet::new();
    let mut used_b = std::collections::HashSet::new();
    let mut matches = 0usize;
    for (_, la, lb) in candidates {
        if used_a.contains(&la) || used_b.contains(&lb) {
            continue;
        }
        used_a.insert(la);
        used_b.insert(lb);
        matches += 1;
    }
    Ok(2.0 * matches as f64 / (labels_a.len() + labels_b.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(rows: Vec<Vec<u32>>) -> SegMask {
        let h = rows.len();
        let w = rows[0].len();
        let flat: Vec<u32> = rows.into_iter().flatten().collect();
        SegMask::new(Array2::from_shape_vec((h, w), flat).unwrap())
    }

    #[test]
    fn dice_pixel_identity_and_disjoint() {
        let a = mask(vec![vec![1, 1, 0], vec![0, 0, 0], vec![0, 0, 1]]);
        assert_eq!(dice_pixel(&a, &a).unwrap(), 1.0);
        let b = mask(vec![vec![0, 0, 1], vec![1, 0, 0], vec![0, 1, 0]]);
        assert_eq!(dice_pixel(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn dice_pixel_counts() {
        // |A| = 4, |B| = 4, |A∩B| = 2 -> 0.5.
        let a = mask(vec![
            vec![1, 1, 0, 0],
            vec![1, 1, 0, 0],
            vec![0, 0, 0, 0],
            vec![0, 0, 0, 0],
        ]);
        let b = mask(vec![
            vec![0, 1, 1, 0],
            vec![0, 1, 1, 0],
            vec![0, 0, 0, 0],
            vec![0, 0, 0, 0],
        ]);
        assert_eq!(dice_pixel(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn dice_pixel_both_empty_is_one() {
        let a = mask(vec![vec![0; 3]; 3]);
        assert_eq!(dice_pixel(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn dice_pixel_exhaustive_3x3_matches_set_oracle() {
        // All 2^9 x 2^9 binary pairs against a direct set-count oracle.
        for abits in 0u32..512 {
            for bbits in 0u32..512 {
                let a = SegMask::new(Array2::from_shape_fn((3, 3), |(y, x)| {
                    (abits >> (y * 3 + x)) & 1
                }));
                let b = SegMask::new(Array2::from_shape_fn((3, 3), |(y, x)| {
                    (bbits >> (y * 3 + x)) & 1
                }));
                let na = abits.count_ones() as f64;
                let nb = bbits.count_ones() as f64;
                let ni = (abits & bbits).count_ones() as f64;
                let expect = if na + nb == 0.0 { 1.0 } else { 2.0 * ni / (na + nb) };
                assert_eq!(dice_pixel(&a, &b).unwrap(), expect);
            }
        }
    }

    #[test]
    fn dice_object_identity() {
        let a = mask(vec![
            vec![1, 1, 0, 2],
            vec![1, 0, 0, 2],
            vec![0, 0, 0, 0],
            vec![3, 0, 0, 0],
        ]);
        assert_eq!(dice_object(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn dice_object_empty_prediction() {
        let truth = mask(vec![
            vec![1, 0, 2, 0],
            vec![0, 0, 0, 0],
            vec![3, 0, 0, 0],
            vec![0, 0, 0, 0],
        ]);
        let empty = mask(vec![vec![0; 4]; 4]);
        assert_eq!(dice_object(&empty, &truth).unwrap(), 0.0);
        assert_eq!(dice_object(&empty, &empty).unwrap(), 1.0);
    }

    #[test]
    fn dice_object_partial_match_hand_counted() {
        // Truth: two 3x3 squares. Prediction: one exact match, one shifted
        // two columns (IoU = 3/15 = 0.2 < 0.5) -> 2*1/(2+2) = 0.5.
        let mut t = Array2::<u32>::zeros((8, 16));
        let mut p = Array2::<u32>::zeros((8, 16));
        for y in 1..4 {
            for x in 1..4 {
                t[[y, x]] = 1;
                p[[y, x]] = 1;
            }
            for x in 9..12 {
                t[[y, x]] = 2;
            }
            for x in 11..14 {
                p[[y, x]] = 2;
            }
        }
        // Hand count: overlap of truth object 2 and prediction object 2 is
        // one column of 3 pixels, union 15, IoU 0.2.
        let d = dice_object(&SegMask::new(p), &SegMask::new(t)).unwrap();
        assert_eq!(d, 0.5);
    }

    #[test]
    fn dice_object_accepts_above_half_iou() {
        // Shift by one column: IoU = 6/12 = 0.5 (not accepted, strict >),
        // shift with larger overlap accepted.
        let mut t = Array2::<u32>::zeros((6, 8));
        let mut p = Array2::<u32>::zeros((6, 8));
        for y in 1..4 {
            for x in 1..4 {
                t[[y, x]] = 1;
            }
            for x in 2..5 {
                p[[y, x]] = 1;
            }
        }
        let d = dice_object(&SegMask::new(p.clone()), &SegMask::new(t.clone())).unwrap();
        assert_eq!(d, 0.0, "IoU exactly 0.5 must not match");
        // Identical second object to check matching still works.
        for y in 4..6 {
            t[[y, 6]] = 2;
            p[[y, 6]] = 2;
        }
        let d = dice_object(&SegMask::new(p), &SegMask::new(t)).unwrap();
        assert_eq!(d, 0.5);
    }

    #[test]
    fn connected_components_labels_islands() {
        let binary = mask(vec![
            vec![1, 1, 0, 1],
            vec![0, 1, 0, 1],
            vec![0, 0, 0, 0],
            vec![1, 0, 1, 1],
        ]);
        let cc = connected_components(&binary);
        assert_eq!(cc.object_labels().len(), 4);
        // Diagonal pixels are not connected (4-connectivity).
        assert_ne!(cc.labels()[[3, 0]], cc.labels()[[3, 2]]);
        assert_eq!(cc.labels()[[0, 3]], cc.labels()[[1, 3]]);
    }
}
