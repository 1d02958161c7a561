use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::occ::{classes, Mask3, OccGrid};

const K: usize = classes::NUM_SEMANTIC;

/// Per-class intersection and union voxel counts, poolable across samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IouCounts {
    pub intersection: [u64; K],
    pub union: [u64; K],
}

impl IouCounts {
    /// Adds one prediction/ground-truth pair; voxels outside `observe`
    /// are skipped.
    pub fn add(&mut self, pred: &OccGrid, gt: &OccGrid, observe: Option<&Mask3>) -> Result<()> {
        if pred.dims() != gt.dims() {
            return Err(Error::dim("iou_per_class", "pred vs gt (X,Y,Z)", &pred.dims(), &gt.dims()));
        }
        if let Some(m) = observe {
            if m.dims != gt.dims() {
                return Err(Error::dim("iou_per_class", "observe mask vs gt (X,Y,Z)", &m.dims, &gt.dims()));
            }
        }
        for (i, (&p, &g)) in pred.classes().iter().zip(gt.classes()).enumerate() {
            if observe.is_some_and(|m| !m.data[i]) {
                continue;
            }
            let (p, g) = (p as usize, g as usize);
            if p == g {
                if p < K {
                    self.intersection[p] += 1;
                    self.union[p] += 1;
                }
            } else {
                if p < K {
                    self.union[p] += 1;
                }
                if g < K {
                    self.union[g] += 1;
                }
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) {
        for c in 0..K {
            self.intersection[c] += other.intersection[c];
            self.union[c] += other.union[c];
        }
    }

    /// IoU per class; `None` where the class appears in neither grid.
    pub fn iou(&self) -> Vec<Option<f64>> {
        (0..K)
            .map(|c| (self.union[c] > 0).then(|| self.intersection[c] as f64 / self.union[c] as f64))
            .collect()
    }
}

pub fn iou_per_class(pred: &OccGrid, gt: &OccGrid, observe: Option<&Mask3>) -> Result<Vec<Option<f64>>> {
    let mut counts = IouCounts::default();
    counts.add(pred, gt, observe)?;
    Ok(counts.iou())
}

/// Per-class IoUs and their means over all, dynamic and static classes.
/// Means skip undefined classes and are `None` when a group has none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_class: Vec<Option<f64>>,
    pub miou: Option<f64>,
    pub d_miou: Option<f64>,
    pub s_miou: Option<f64>,
    pub defined_classes: usize,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

pub fn aggregate_defined(per_class: &[Option<f64>]) -> Result<MetricReport> {
    if per_class.len() != K {
        return Err(Error::dim("aggregate", "per-class values", &[per_class.len()], &[K]));
    }
    let group = |ids: std::ops::RangeInclusive<u8>| mean(ids.map(|c| per_class[c as usize]));
    Ok(MetricReport {
        per_class: per_class.to_vec(),
        miou: mean(per_class.iter().copied()),
        d_miou: group(classes::DYNAMIC),
        s_miou: group(classes::STATIC),
        defined_classes: per_class.iter().flatten().count(),
    })
}

/// [`aggregate_defined`] with every class defined.
pub fn aggregate(per_class: &[f64]) -> Result<MetricReport> {
    let all: Vec<Option<f64>> = per_class.iter().map(|&v| Some(v)).collect();
    aggregate_defined(&all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ones() {
        let r = aggregate(&[1.0; 17]).unwrap();
        assert_eq!((r.miou, r.d_miou, r.s_miou), (Some(1.0), Some(1.0), Some(1.0)));
        assert_eq!(r.defined_classes, 17);
        assert_eq!(aggregate(&[1.0; 16]).unwrap_err().kind(), "dimension");
    }

    #[test]
    fn identical_grids_score_one() {
        let g = OccGrid::new([2, 2, 2], vec![0, 4, 4, 11, 17, 17, 13, 4]).unwrap();
        let iou = iou_per_class(&g, &g, None).unwrap();
        for c in [0, 4, 11, 13] {
            assert_eq!(iou[c], Some(1.0));
        }
        assert_eq!(iou.iter().flatten().count(), 4);
    }

    #[test]
    fn disjoint_classes_score_zero() {
        let a = OccGrid::filled([2, 2, 1], 4).unwrap();
        let b = OccGrid::filled([2, 2, 1], 11).unwrap();
        let iou = iou_per_class(&a, &b, None).unwrap();
        assert_eq!((iou[4], iou[11]), (Some(0.0), Some(0.0)));
        let r = aggregate_defined(&iou).unwrap();
        assert_eq!((r.miou, r.d_miou, r.s_miou, r.defined_classes), (Some(0.0), Some(0.0), Some(0.0), 2));
    }

    #[test]
    fn observe_mask_excludes_voxels() {
        let a = OccGrid::new([1, 1, 2], vec![4, 4]).unwrap();
        let b = OccGrid::new([1, 1, 2], vec![4, 7]).unwrap();
        let mask = Mask3 { dims: [1, 1, 2], data: vec![true, false] };
        let iou = iou_per_class(&a, &b, Some(&mask)).unwrap();
        assert_eq!(iou[4], Some(1.0));
        assert_eq!(iou[7], None);
    }

    #[test]
    fn pooled_counts_differ_from_per_sample_mean() {
        let a1 = OccGrid::new([1, 1, 4], vec![4, 4, 4, 4]).unwrap();
        let b1 = a1.clone();
        let a2 = OccGrid::new([1, 1, 4], vec![4, 17, 17, 17]).unwrap();
        let b2 = OccGrid::new([1, 1, 4], vec![17, 17, 17, 17]).unwrap();
        let mut c = IouCounts::default();
        c.add(&a1, &b1, None).unwrap();
        c.add(&a2, &b2, None).unwrap();
        assert_eq!(c.iou()[4], Some(4.0 / 5.0));
    }
}
