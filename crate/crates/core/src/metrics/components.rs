//! 3D connected-component labeling by two-pass union-find.

use serde::{Deserialize, Serialize};

use super::{MetricError, Result};
use crate::volume::Mask3D;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Connectivity {
    /// Face neighbors only.
    Six,
    /// Face, edge, and corner neighbors.
    #[default]
    TwentySix,
}

impl TryFrom<u32> for Connectivity {
    type Error = MetricError;

    fn try_from(v: u32) -> Result<Self> {
        match v {
            6 => Ok(Connectivity::Six),
            26 => Ok(Connectivity::TwentySix),
            other => Err(MetricError::InvalidConnectivity(other)),
        }
    }
}

impl From<Connectivity> for u32 {
    fn from(c: Connectivity) -> u32 {
        match c {
            Connectivity::Six => 6,
            Connectivity::TwentySix => 26,
        }
    }
}

impl std::fmt::Display for Connectivity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", u32::from(*self))
    }
}

impl Connectivity {
    /// Neighbor offsets that precede the origin in raster order.
    fn backward_offsets(self) -> Vec<[isize; 3]> {
        match self {
            Connectivity::Six => vec![[-1, 0, 0], [0, -1, 0], [0, 0, -1]],
            Connectivity::TwentySix => {
                let mut out = Vec::with_capacity(13);
                for dd in -1..=1isize {
                    for dh in -1..=1isize {
                        for dw in -1..=1isize {
                            if (dd, dh, dw) < (0, 0, 0) {
                                out.push([dd, dh, dw]);
                            }
                        }
                    }
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CCLabeling {
    /// 0 for background, otherwise 1..=count in order of each component's
    /// first voxel in raster order.
    pub labels: Vec<u32>,
    pub count: usize,
    pub connectivity: Connectivity,
}

impl CCLabeling {
    /// Voxel count per component, indexed by `label - 1`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.count];
        for &l in &self.labels {
            if l > 0 {
                sizes[l as usize - 1] += 1;
            }
        }
        sizes
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

pub fn label_components(m: &Mask3D, connectivity: Connectivity) -> CCLabeling {
    let dims = m.dims();
    let offsets = connectivity.backward_offsets();
    let mut provisional = vec![u32::MAX; dims.len()];
    let mut sets = DisjointSet { parent: Vec::new() };

    for d in 0..dims.d {
        for h in 0..dims.h {
            for w in 0..dims.w {
                let i = dims.index(d, h, w);
                if m.data()[i] == 0 {
                    continue;
                }
                let mut current: Option<u32> = None;
                for off in &offsets {
                    let (nd, nh, nw) = (d as isize + off[0], h as isize + off[1], w as isize + off[2]);
                    if nd < 0 || nh < 0 || nw < 0 || nw >= dims.w as isize || nh >= dims.h as isize {
                        continue;
                    }
                    let j = dims.index(nd as usize, nh as usize, nw as usize);
                    let lbl = provisional[j];
                    if lbl == u32::MAX {
                        continue;
                    }
                    match current {
                        None => current = Some(lbl),
                        Some(c) => sets.union(c, lbl),
                    }
                }
                provisional[i] = current.unwrap_or_else(|| sets.make());
            }
        }
    }

    let mut final_of_root = vec![0u32; sets.parent.len()];
    let mut count = 0u32;
    let labels = provisional
        .iter()
        .map(|&p| {
            if p == u32::MAX {
                return 0;
            }
            let root = sets.find(p) as usize;
            if final_of_root[root] == 0 {
                count += 1;
                final_of_root[root] = count;
            }
            final_of_root[root]
        })
        .collect();
    CCLabeling {
        labels,
        count: count as usize,
        connectivity,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims3;

    #[test]
    fn solid_cube_is_one_component() {
        let m = Mask3D::from_fn(Dims3::cube(5), |d, h, w| {
            d > 0 && h > 0 && w > 0 && d < 4 && h < 4 && w < 4
        })
        .unwrap();
        for c in [Connectivity::Six, Connectivity::TwentySix] {
            let l = label_components(&m, c);
            assert_eq!(l.count, 1);
            assert_eq!(l.sizes(), vec![27]);
        }
    }

    #[test]
    fn diagonal_pair_depends_on_connectivity() {
        let m = Mask3D::from_fn(Dims3::cube(2), |d, h, w| {
            (d, h, w) == (0, 0, 0) || (d, h, w) == (0, 1, 1)
        })
        .unwrap();
        assert_eq!(label_components(&m, Connectivity::Six).count, 2);
        assert_eq!(label_components(&m, Connectivity::TwentySix).count, 1);
    }

    #[test]
    fn empty_mask_has_no_components() {
        let m = Mask3D::empty(Dims3::cube(3)).unwrap();
        let l = label_components(&m, Connectivity::TwentySix);
        assert_eq!(l.count, 0);
        assert!(l.labels.iter().all(|&x| x == 0));
    }

    #[test]
    fn u_shape_merges_late() {
        // two arms joined only at the bottom row: provisional labels must merge
        let dims = Dims3::new(1, 3, 3);
        let m = Mask3D::new(dims, vec![1, 0, 1, 1, 0, 1, 1, 1, 1]).unwrap();
        let l = label_components(&m, Connectivity::Six);
        assert_eq!(l.count, 1);
        assert!(l.labels.iter().filter(|&&x| x > 0).all(|&x| x == 1));
    }

    #[test]
    fn labels_follow_first_voxel_order() {
        let dims = Dims3::new(1, 1, 5);
        let m = Mask3D::new(dims, vec![1, 0, 1, 0, 1]).unwrap();
        assert_eq!(label_components(&m, Connectivity::Six).labels, vec![1, 0, 2, 0, 3]);
    }

    #[test]
    fn connectivity_codes() {
        assert_eq!(Connectivity::try_from(6).unwrap(), Connectivity::Six);
        assert!(matches!(
            Connectivity::try_from(8),
            Err(MetricError::InvalidConnectivity(8))
        ));
    }
}
