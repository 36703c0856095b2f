//! Max-norm neighbor searches over column-major samples. Points are visited
//! in order of their first coordinate so each query only scans a window.

/// `ψ(0..=n)` with `ψ(1) = −γ` and `ψ(m + 1) = ψ(m) + 1/m`.
fn digamma_table(n: usize) -> Vec<f64> {
    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
    let mut t = vec![f64::NEG_INFINITY; n + 1];
    if n >= 1 {
        t[1] = -EULER_GAMMA;
    }
    for m in 1..n {
        t[m + 1] = t[m] + 1.0 / m as f64;
    }
    t
}

struct Sorted<'a> {
    cols: &'a [Vec<f64>],
    /// point indices ordered by first coordinate
    order: Vec<usize>,
    /// first coordinate in that order
    keys: Vec<f64>,
}

impl<'a> Sorted<'a> {
    fn new(cols: &'a [Vec<f64>]) -> Self {
        let n = cols[0].len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| cols[0][a].total_cmp(&cols[0][b]).then(a.cmp(&b)));
        let keys = order.iter().map(|&i| cols[0][i]).collect();
        Self { cols, order, keys }
    }

    fn dist(&self, a: usize, b: usize) -> f64 {
        self.cols.iter().map(|c| (c[a] - c[b]).abs()).fold(0.0, f64::max)
    }

    /// Points other than `i` strictly within `eps` of it.
    fn count_within(&self, i: usize, eps: f64) -> usize {
        let x0 = self.cols[0][i];
        // widened window, then the exact test decides
        let slack = eps * 1e-9;
        let lo = self.keys.partition_point(|&v| v < x0 - eps - slack);
        let hi = self.keys.partition_point(|&v| v <= x0 + eps + slack);
        self.order[lo..hi].iter().filter(|&&j| j != i && self.dist(i, j) < eps).count()
    }
}

/// Distance from every point to its `k`-th nearest neighbor.
fn kth_neighbor_distances(space: &Sorted<'_>, k: usize) -> Vec<f64> {
    let n = space.order.len();
    let mut out = vec![0.0; n];
    let mut best: Vec<f64> = Vec::with_capacity(k + 1);
    for (pos, &i) in space.order.iter().enumerate() {
        best.clear();
        let x0 = space.keys[pos];
        let (mut left, mut right) = (pos, pos + 1);
        loop {
            let bound = if best.len() == k { best[k - 1] } else { f64::INFINITY };
            let gap_left = if left > 0 { x0 - space.keys[left - 1] } else { f64::INFINITY };
            let gap_right = if right < n { space.keys[right] - x0 } else { f64::INFINITY };
            let (gap, go_left) = if gap_left <= gap_right {
                (gap_left, true)
            } else {
                (gap_right, false)
            };
            if gap >= bound || gap == f64::INFINITY {
                break;
            }
            let j = if go_left {
                left -= 1;
                space.order[left]
            } else {
                right += 1;
                space.order[right - 1]
            };
            let d = space.dist(i, j);
            if best.len() < k || d < best[best.len() - 1] {
                let at = best.partition_point(|&b| b <= d);
                best.insert(at, d);
                best.truncate(k);
            }
        }
        out[i] = best[k - 1];
    }
    out
}

pub(super) fn ksg(x: &[Vec<f64>], y: &[Vec<f64>], k: usize) -> f64 {
    let n = x[0].len();
    let joint: Vec<Vec<f64>> = x.iter().chain(y).cloned().collect();
    let eps = kth_neighbor_distances(&Sorted::new(&joint), k);
    let (sx, sy) = (Sorted::new(x), Sorted::new(y));
    let psi = digamma_table(n + 1);
    let mut avg = 0.0;
    for i in 0..n {
        let nx = sx.count_within(i, eps[i]);
        let ny = sy.count_within(i, eps[i]);
        avg += psi[nx + 1] + psi[ny + 1];
    }
    psi[k] + psi[n] - avg / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::digamma;

    #[test]
    fn table_matches_series() {
        let t = digamma_table(200);
        for m in [1usize, 2, 3, 7, 50, 200] {
            assert!((t[m] - digamma(m as f64)).abs() < 1e-12);
        }
    }

    /// Brute-force reference for the windowed searches.
    fn brute(cols: &[Vec<f64>], i: usize, k: usize) -> f64 {
        let n = cols[0].len();
        let mut d: Vec<f64> = (0..n)
            .filter(|&j| j != i)
            .map(|j| cols.iter().map(|c| (c[i] - c[j]).abs()).fold(0.0, f64::max))
            .collect();
        d.sort_by(f64::total_cmp);
        d[k - 1]
    }

    #[test]
    fn windowed_search_matches_brute_force() {
        let mut s = 12345u64;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        let cols: Vec<Vec<f64>> = (0..3).map(|_| (0..300).map(|_| next()).collect()).collect();
        let sorted = Sorted::new(&cols);
        let eps = kth_neighbor_distances(&sorted, 3);
        for i in 0..300 {
            assert_eq!(eps[i], brute(&cols, i, 3));
            let strict = (0..300)
                .filter(|&j| j != i && cols.iter().map(|c| (c[i] - c[j]).abs()).fold(0.0, f64::max) < eps[i])
                .count();
            assert_eq!(sorted.count_within(i, eps[i]), strict);
        }
        let one = &cols[..1];
        let s1 = Sorted::new(one);
        for i in 0..300 {
            let e = 0.01;
            let strict = (0..300).filter(|&j| j != i && (one[0][i] - one[0][j]).abs() < e).count();
            assert_eq!(s1.count_within(i, e), strict);
        }
    }
}
