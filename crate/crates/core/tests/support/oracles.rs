//! Brute-force reference implementations. Deliberately naive: each one is
//! written from the definition, shares no code with the library, and is
//! only fast enough for small inputs.
#![allow(dead_code)]

use std::collections::VecDeque;
use std::f64::consts::PI;

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Direct O(N^2) 3D DFT, `X[k] = sum_n x[n] exp(-2 pi i k.n / dims)`, in
/// natural (uncentered) order. Returns (re, im) per bin, row-major.
pub fn naive_dft3(x: &[f64], dims: [usize; 3]) -> Vec<(f64, f64)> {
    let [nd, nh, nw] = dims;
    let mut out = Vec::with_capacity(x.len());
    for kd in 0..nd {
        for kh in 0..nh {
            for kw in 0..nw {
                let (mut re, mut im) = (CompensatedSum::default(), CompensatedSum::default());
                for d in 0..nd {
                    for h in 0..nh {
                        for w in 0..nw {
                            // reduce the integer phase before scaling to keep the angle small
                            let fd = ((kd * d) % nd) as f64 / nd as f64;
                            let fh = ((kh * h) % nh) as f64 / nh as f64;
                            let fw = ((kw * w) % nw) as f64 / nw as f64;
                            let ang = -2.0 * PI * (fd + fh + fw);
                            let v = x[(d * nh + h) * nw + w];
                            re.add(v * ang.cos());
                            im.add(v * ang.sin());
                        }
                    }
                }
                out.push((re.value(), im.value()));
            }
        }
    }
    out
}

/// Natural-order bin shown at centered position `p` along an axis of
/// length `n`: the zero frequency sits at `n / 2`.
pub fn centered_to_natural(p: usize, n: usize) -> usize {
    (p + n - n / 2) % n
}

/// Same volume in centered order.
pub fn naive_dft3_centered(x: &[f64], dims: [usize; 3]) -> Vec<(f64, f64)> {
    let nat = naive_dft3(x, dims);
    let [nd, nh, nw] = dims;
    let mut out = Vec::with_capacity(nat.len());
    for pd in 0..nd {
        for ph in 0..nh {
            for pw in 0..nw {
                let (d, h, w) = (
                    centered_to_natural(pd, nd),
                    centered_to_natural(ph, nh),
                    centered_to_natural(pw, nw),
                );
                out.push(nat[(d * nh + h) * nw + w]);
            }
        }
    }
    out
}

fn neighbor_offsets(conn: u32) -> Vec<[i64; 3]> {
    let mut v = Vec::new();
    for dd in -1i64..=1 {
        for dh in -1i64..=1 {
            for dw in -1i64..=1 {
                let manhattan = dd.abs() + dh.abs() + dw.abs();
                if manhattan == 0 {
                    continue;
                }
                if conn == 6 && manhattan != 1 {
                    continue;
                }
                v.push([dd, dh, dw]);
            }
        }
    }
    v
}

/// Connected-component count by breadth-first flood fill.
pub fn flood_fill_count(mask: &[bool], dims: [usize; 3], conn: u32) -> usize {
    let [nd, nh, nw] = dims;
    let offs = neighbor_offsets(conn);
    let mut seen = vec![false; mask.len()];
    let mut count = 0;
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (d, h, w) = ((i / (nh * nw)) as i64, ((i / nw) % nh) as i64, (i % nw) as i64);
            for o in &offs {
                let (a, b, c) = (d + o[0], h + o[1], w + o[2]);
                if a < 0 || b < 0 || c < 0 || a >= nd as i64 || b >= nh as i64 || c >= nw as i64 {
                    continue;
                }
                let j = (a as usize * nh + b as usize) * nw + c as usize;
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    count
}

/// Dice by plain counting; two empty masks agree perfectly.
pub fn brute_dice(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let total = a.iter().filter(|x| **x).count() + b.iter().filter(|x| **x).count();
    if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    }
}

/// Foreground voxels touching background (or the array edge) across a face.
pub fn brute_surface(mask: &[bool], dims: [usize; 3]) -> Vec<[usize; 3]> {
    let [nd, nh, nw] = dims;
    let at = |d: i64, h: i64, w: i64| -> bool {
        if d < 0 || h < 0 || w < 0 || d >= nd as i64 || h >= nh as i64 || w >= nw as i64 {
            return false;
        }
        mask[(d as usize * nh + h as usize) * nw + w as usize]
    };
    let mut out = Vec::new();
    for d in 0..nd as i64 {
        for h in 0..nh as i64 {
            for w in 0..nw as i64 {
                if !at(d, h, w) {
                    continue;
                }
                let faces = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)];
                if faces.iter().any(|&(a, b, c)| !at(d + a, h + b, w + c)) {
                    out.push([d as usize, h as usize, w as usize]);
                }
            }
        }
    }
    out
}

/// 95th percentile of pooled nearest-surface distances, each computed by
/// scanning every surface voxel of the other mask. Linear interpolation
/// between order statistics. `None` when either mask is empty.
pub fn brute_hd95(a: &[bool], b: &[bool], dims: [usize; 3], spacing: [f64; 3]) -> Option<f64> {
    let sa = brute_surface(a, dims);
    let sb = brute_surface(b, dims);
    if sa.is_empty() || sb.is_empty() {
        return None;
    }
    let dist = |p: &[usize; 3], q: &[usize; 3]| -> f64 {
        (0..3)
            .map(|k| {
                let x = (p[k] as f64 - q[k] as f64) * spacing[k];
                x * x
            })
            .sum::<f64>()
            .sqrt()
    };
    let nearest = |p: &[usize; 3], set: &[[usize; 3]]| set.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min);
    let mut all: Vec<f64> = sa.iter().map(|p| nearest(p, &sb)).collect();
    all.extend(sb.iter().map(|p| nearest(p, &sa)));
    all.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let pos = 0.95 * (all.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(all[lo] + (all[hi] - all[lo]) * (pos - lo as f64))
}
