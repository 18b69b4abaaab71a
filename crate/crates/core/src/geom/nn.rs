//! Exact nearest-neighbor search over a fixed point set.
//!
//! A static k-d tree; queries are exact (never approximate) and distance ties
//! resolve to the smallest point index, so downstream vote counting is
//! reproducible across platforms and thread counts.

use super::Point3;

#[derive(Debug, Clone)]
struct Node {
    point: u32,
    axis: u8,
    left: i32,
    right: i32,
}

/// Spatial index over an immutable cloud; safe for concurrent queries.
#[derive(Debug, Clone)]
pub struct NnIndex {
    points: Vec<Point3>,
    nodes: Vec<Node>,
    root: i32,
}

const LEAF: i32 = -1;

impl NnIndex {
    /// Builds the tree; `points` must be non-empty.
    pub fn build(points: &[Point3]) -> NnIndex {
        assert!(!points.is_empty(), "NnIndex over an empty point set");
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut index = NnIndex {
            points: points.to_vec(),
            nodes: Vec::with_capacity(points.len()),
            root: LEAF,
        };
        index.root = index.build_rec(&mut order);
        index
    }

    fn build_rec(&mut self, order: &mut [u32]) -> i32 {
        if order.is_empty() {
            return LEAF;
        }
        let axis = self.widest_axis(order);
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&a, &b| {
            let ca = coord(&self.points[a as usize], axis);
            let cb = coord(&self.points[b as usize], axis);
            ca.partial_cmp(&cb).unwrap().then(a.cmp(&b))
        });
        let point = order[mid];
        let id = self.nodes.len() as i32;
        self.nodes.push(Node {
            point,
            axis,
            left: LEAF,
            right: LEAF,
        });
        let (lo, rest) = order.split_at_mut(mid);
        let hi = &mut rest[1..];
        let left = self.build_rec(lo);
        let right = self.build_rec(hi);
        self.nodes[id as usize].left = left;
        self.nodes[id as usize].right = right;
        id
    }

    fn widest_axis(&self, order: &[u32]) -> u8 {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for &i in order {
            let p = &self.points[i as usize];
            let c = [p.x, p.y, p.z];
            for a in 0..3 {
                min[a] = min[a].min(c[a]);
                max[a] = max[a].max(c[a]);
            }
        }
        let mut best = 0;
        for a in 1..3 {
            if max[a] - min[a] > max[best] - min[best] {
                best = a;
            }
        }
        best as u8
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, id: usize) -> &Point3 {
        &self.points[id]
    }

    /// Exact nearest neighbor of `q`: (point index, distance). Ties go to the
    /// smallest index.
    pub fn nearest(&self, q: &Point3) -> (usize, f64) {
        let mut best = (f64::INFINITY, u32::MAX);
        self.nearest_rec(self.root, q, &mut best);
        (best.1 as usize, best.0.sqrt())
    }

    fn nearest_rec(&self, node: i32, q: &Point3, best: &mut (f64, u32)) {
        if node == LEAF {
            return;
        }
        let n = &self.nodes[node as usize];
        let p = &self.points[n.point as usize];
        let d_sq = p.distance_sq(q);
        if d_sq < best.0 || (d_sq == best.0 && n.point < best.1) {
            *best = (d_sq, n.point);
        }
        let delta = coord(q, n.axis) - coord(p, n.axis);
        let (near, far) = if delta < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.nearest_rec(near, q, best);
        // <= keeps equal-distance candidates reachable for the index tie-break
        if delta * delta <= best.0 {
            self.nearest_rec(far, q, best);
        }
    }

    /// The k nearest neighbors of `q`, ascending by (distance, index).
    pub fn k_nearest(&self, q: &Point3, k: usize) -> Vec<(usize, f64)> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let mut heap: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        self.k_nearest_rec(self.root, q, k, &mut heap);
        heap.sort_by(|a, b| a.partial_cmp(b).unwrap());
        heap.into_iter()
            .map(|(d_sq, i)| (i as usize, d_sq.sqrt()))
            .collect()
    }

    fn k_nearest_rec(&self, node: i32, q: &Point3, k: usize, heap: &mut Vec<(f64, u32)>) {
        if node == LEAF {
            return;
        }
        let n = &self.nodes[node as usize];
        let p = &self.points[n.point as usize];
        let d_sq = p.distance_sq(q);
        let cand = (d_sq, n.point);
        if heap.len() < k {
            heap.push(cand);
            if heap.len() == k {
                heap.sort_by(|a, b| b.partial_cmp(a).unwrap());
            }
        } else if cand < heap[0] {
            heap[0] = cand;
            // restore descending order by the worst-first invariant
            heap.sort_by(|a, b| b.partial_cmp(a).unwrap());
        }
        let delta = coord(q, n.axis) - coord(p, n.axis);
        let (near, far) = if delta < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.k_nearest_rec(near, q, k, heap);
        if heap.len() < k || delta * delta <= heap[0].0 {
            self.k_nearest_rec(far, q, k, heap);
        }
    }

    /// Indices of all points within `radius` of `q`, ascending.
    pub fn within_radius(&self, q: &Point3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.radius_rec(self.root, q, radius * radius, &mut out);
        out.sort_unstable();
        out
    }

    fn radius_rec(&self, node: i32, q: &Point3, r_sq: f64, out: &mut Vec<usize>) {
        if node == LEAF {
            return;
        }
        let n = &self.nodes[node as usize];
        let p = &self.points[n.point as usize];
        if p.distance_sq(q) <= r_sq {
            out.push(n.point as usize);
        }
        let delta = coord(q, n.axis) - coord(p, n.axis);
        let (near, far) = if delta < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.radius_rec(near, q, r_sq, out);
        if delta * delta <= r_sq {
            self.radius_rec(far, q, r_sq, out);
        }
    }
}

fn coord(p: &Point3, axis: u8) -> f64 {
    match axis {
        0 => p.x,
        1 => p.y,
        _ => p.z,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(points: &[Point3], q: &Point3) -> (usize, f64) {
        let mut best = (0usize, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = p.distance(q);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    #[test]
    fn single_point_always_wins() {
        let pts = vec![Point3::new(0.0, 0.0, 0.0)];
        let idx = NnIndex::build(&pts);
        for q in [
            Point3::new(1.0, 2.0, 3.0),
            Point3::new(-5.0, 0.0, 0.1),
            Point3::ORIGIN,
        ] {
            let (i, d) = idx.nearest(&q);
            assert_eq!(i, 0);
            assert_eq!(d, pts[0].distance(&q));
        }
    }

    #[test]
    fn two_point_examples() {
        let pts = vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0)];
        let idx = NnIndex::build(&pts);
        let (i, d) = idx.nearest(&Point3::new(0.2, 0.0, 0.0));
        assert_eq!(i, 0);
        assert!((d - 0.2).abs() < 1e-15);
        // equidistant: smallest index wins
        let (i, d) = idx.nearest(&Point3::new(0.5, 0.0, 0.0));
        assert_eq!(i, 0);
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn coincident_points_report_well_defined_distance() {
        let pts = vec![Point3::new(1.0, 1.0, 1.0), Point3::new(1.0, 1.0, 1.0)];
        let idx = NnIndex::build(&pts);
        let q = Point3::new(2.0, 1.0, 1.0);
        let (i, d) = idx.nearest(&q);
        assert_eq!(i, 0);
        assert!((d - 1.0).abs() < 1e-15);
    }

    #[test]
    fn agrees_with_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let n = rng.random_range(1..500);
            let pts: Vec<Point3> = (0..n)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    )
                })
                .collect();
            let idx = NnIndex::build(&pts);
            for _ in 0..50 {
                let q = Point3::new(
                    rng.random_range(-1.2..1.2),
                    rng.random_range(-1.2..1.2),
                    rng.random_range(-1.2..1.2),
                );
                let (bi, bd) = brute_force(&pts, &q);
                let (i, d) = idx.nearest(&q);
                assert_eq!(i, bi);
                assert_eq!(d, bd);
            }
        }
    }

    #[test]
    fn grid_ties_resolve_to_smallest_index() {
        // 2x2x2 grid queried from the exact center: all 8 corners tie
        let mut pts = Vec::new();
        for z in 0..2 {
            for y in 0..2 {
                for x in 0..2 {
                    pts.push(Point3::new(x as f64, y as f64, z as f64));
                }
            }
        }
        let idx = NnIndex::build(&pts);
        let (i, _) = idx.nearest(&Point3::new(0.5, 0.5, 0.5));
        assert_eq!(i, 0);
    }

    #[test]
    fn k_nearest_matches_sorted_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Point3> = (0..200)
            .map(|_| {
                Point3::new(
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                )
            })
            .collect();
        let idx = NnIndex::build(&pts);
        for _ in 0..20 {
            let q = Point3::new(
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
            );
            let got = idx.k_nearest(&q, 10);
            let mut all: Vec<(f64, usize)> =
                pts.iter().enumerate().map(|(i, p)| (p.distance(&q), i)).collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (g, w) in got.iter().zip(all.iter().take(10)) {
                assert_eq!(g.0, w.1);
            }
        }
    }

    #[test]
    fn radius_query_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let pts: Vec<Point3> = (0..300)
            .map(|_| {
                Point3::new(
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                )
            })
            .collect();
        let idx = NnIndex::build(&pts);
        let q = Point3::new(0.5, 0.5, 0.5);
        let r = 0.25;
        let got = idx.within_radius(&q, r);
        let want: Vec<usize> = pts
            .iter()
            .enumerate()
            .filter(|(_, p)| p.distance(&q) <= r)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(got, want);
    }
}
