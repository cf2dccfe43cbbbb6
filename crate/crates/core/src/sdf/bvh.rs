//! Bounding-volume hierarchy over axis-aligned boxes with best-first nearest queries.

use crate::Vec3;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy)]
struct Node {
    lo: Vec3,
    hi: Vec3,
    /// Leaf: first primitive slot in `order`. Inner: index of the left child (right is `left + 1`).
    start: u32,
    /// Leaf: number of primitives. Inner: 0.
    count: u32,
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
}

#[inline]
fn box_dist2(lo: &Vec3, hi: &Vec3, q: &Vec3) -> f64 {
    let mut d2 = 0.0;
    for d in 0..3 {
        let v = if q[d] < lo[d] {
            lo[d] - q[d]
        } else if q[d] > hi[d] {
            q[d] - hi[d]
        } else {
            0.0
        };
        d2 += v * v;
    }
    d2
}

impl Bvh {
    /// Builds over primitive boxes `(lo, hi)`, split at the centroid median of the widest axis.
    pub fn build(boxes: &[(Vec3, Vec3)]) -> Bvh {
        let mut bvh = Bvh {
            nodes: Vec::with_capacity(2 * boxes.len() / LEAF_SIZE + 1),
            order: (0..boxes.len() as u32).collect(),
        };
        if boxes.is_empty() {
            return bvh;
        }
        let centroids: Vec<Vec3> = boxes.iter().map(|(lo, hi)| (lo + hi) * 0.5).collect();
        bvh.nodes.push(Node {
            lo: Vec3::zeros(),
            hi: Vec3::zeros(),
            start: 0,
            count: boxes.len() as u32,
        });
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let (start, count) = (bvh.nodes[ni].start as usize, bvh.nodes[ni].count as usize);
            let slots = &mut bvh.order[start..start + count];
            let (mut lo, mut hi) = boxes[slots[0] as usize];
            let (mut clo, mut chi) = (centroids[slots[0] as usize], centroids[slots[0] as usize]);
            for &p in slots.iter() {
                let (plo, phi) = &boxes[p as usize];
                lo = lo.inf(plo);
                hi = hi.sup(phi);
                clo = clo.inf(&centroids[p as usize]);
                chi = chi.sup(&centroids[p as usize]);
            }
            bvh.nodes[ni].lo = lo;
            bvh.nodes[ni].hi = hi;
            if count <= LEAF_SIZE {
                continue;
            }
            let axis = (chi - clo).imax();
            let mid = count / 2;
            slots.select_nth_unstable_by(mid, |a, b| {
                centroids[*a as usize][axis].total_cmp(&centroids[*b as usize][axis])
            });
            let left = bvh.nodes.len();
            bvh.nodes.push(Node {
                lo,
                hi,
                start: start as u32,
                count: mid as u32,
            });
            bvh.nodes.push(Node {
                lo,
                hi,
                start: (start + mid) as u32,
                count: (count - mid) as u32,
            });
            bvh.nodes[ni].start = left as u32;
            bvh.nodes[ni].count = 0;
            stack.push(left);
            stack.push(left + 1);
        }
        bvh
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Finds the primitive minimizing `dist2(prim)`, a squared distance that must be
    /// bounded below by the squared distance from `q` to the primitive's box.
    pub fn nearest(&self, q: &Vec3, mut dist2: impl FnMut(usize) -> f64) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<(usize, f64)> = None;
        let mut best_d2 = f64::INFINITY;
        let mut stack: Vec<(u32, f64)> = Vec::with_capacity(64);
        stack.push((0, box_dist2(&self.nodes[0].lo, &self.nodes[0].hi, q)));
        while let Some((ni, bound)) = stack.pop() {
            if bound > best_d2 {
                continue;
            }
            let node = &self.nodes[ni as usize];
            if node.count > 0 {
                let start = node.start as usize;
                for &p in &self.order[start..start + node.count as usize] {
                    let d2 = dist2(p as usize);
                    // ties resolve to the lowest primitive index for determinism
                    let better = match best {
                        None => true,
                        Some((bp, _)) => d2 < best_d2 || (d2 == best_d2 && (p as usize) < bp),
                    };
                    if better {
                        best_d2 = d2;
                        best = Some((p as usize, d2));
                    }
                }
            } else {
                let l = node.start;
                let (a, b) = (&self.nodes[l as usize], &self.nodes[l as usize + 1]);
                let da = box_dist2(&a.lo, &a.hi, q);
                let db = box_dist2(&b.lo, &b.hi, q);
                // visit the closer child first
                if da <= db {
                    stack.push((l + 1, db));
                    stack.push((l, da));
                } else {
                    stack.push((l, da));
                    stack.push((l + 1, db));
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nearest_point_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let points: Vec<Vec3> = (0..2000)
            .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        let boxes: Vec<_> = points.iter().map(|p| (*p, *p)).collect();
        let bvh = Bvh::build(&boxes);
        for _ in 0..300 {
            let q = Vec3::new(rng.gen(), rng.gen(), rng.gen()) * 1.4 - Vec3::repeat(0.2);
            let (i, d2) = bvh.nearest(&q, |p| (points[p] - q).norm_squared()).unwrap();
            let (bi, bd2) = points
                .iter()
                .enumerate()
                .map(|(i, p)| (i, (p - q).norm_squared()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            assert_eq!(d2, bd2);
            assert_eq!(i, bi);
        }
    }

    #[test]
    fn empty_tree() {
        let bvh = Bvh::build(&[]);
        assert!(bvh.nearest(&Vec3::zeros(), |_| 0.0).is_none());
    }
}
