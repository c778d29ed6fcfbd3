//! Pairwise cost functions. Every cost is non-negative and zero for
//! identical inputs; lower means more similar.

use thiserror::Error;

use crate::descriptors::{HuVector, ShapeContextSet};
use crate::mask::{BinaryMask, Point};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("histograms have {0} and {1} bins")]
    BinCountMismatch(usize, usize),
    #[error("cost matrix is not square: row {row} has {len} entries, expected {n}")]
    NonSquare { row: usize, len: usize, n: usize },
    #[error("cost matrix is empty")]
    EmptyMatrix,
    #[error("cost matrix entry ({0}, {1}) is not finite")]
    NonFiniteEntry(usize, usize),
    #[error("cost matrix entry ({0}, {1}) is negative")]
    NegativeEntry(usize, usize),
    #[error("shape context sets have {0} and {1} points")]
    PointCountMismatch(usize, usize),
    #[error("combined-cost input {0} lies outside [0, 1]")]
    OutOfRangeInput(f64),
    #[error("invalid weights alpha={alpha}, beta={beta}")]
    InvalidWeights { alpha: f64, beta: f64 },
    #[error("masks have widths {0} and {1}")]
    WidthMismatch(usize, usize),
    #[error("point set is empty")]
    EmptySet,
}

/// Chi-square distance. Bins where both histograms are zero contribute nothing.
pub fn chi_square(h1: &[f64], h2: &[f64]) -> Result<f64, MatchError> {
    if h1.len() != h2.len() {
        return Err(MatchError::BinCountMismatch(h1.len(), h2.len()));
    }
    Ok(chi_square_unchecked(h1, h2))
}

#[inline]
fn chi_square_unchecked(h1: &[f64], h2: &[f64]) -> f64 {
    h1.iter()
        .zip(h2)
        .map(|(&a, &b)| {
            let s = a + b;
            if s > 0.0 {
                (a - b) * (a - b) / s
            } else {
                0.0
            }
        })
        .sum()
}

/// Square matrix of non-negative finite matching costs, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self, MatchError> {
        if n == 0 {
            return Err(MatchError::EmptyMatrix);
        }
        if data.len() != n * n {
            return Err(MatchError::NonSquare {
                row: data.len() / n,
                len: data.len() % n,
                n,
            });
        }
        for (k, &v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(MatchError::NonFiniteEntry(k / n, k % n));
            }
            if v < 0.0 {
                return Err(MatchError::NegativeEntry(k / n, k % n));
            }
        }
        Ok(Self { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MatchError> {
        let n = rows.len();
        if n == 0 {
            return Err(MatchError::EmptyMatrix);
        }
        for (row, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(MatchError::NonSquare { row, len: r.len(), n });
            }
        }
        Self::new(n, rows.concat())
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `permutation[i]` is the column assigned to row `i`.
    pub permutation: Vec<usize>,
    pub total_cost: f64,
}

/// Minimum-cost perfect assignment (Kuhn-Munkres with potentials, O(n^3)).
///
/// Among optimal permutations the lexicographically smallest is returned:
/// after the solve, rows are fixed in order to the smallest column that still
/// admits a perfect matching on the tight (zero reduced cost) edges.
pub fn hungarian(cost: &CostMatrix) -> Assignment {
    let n = cost.n;
    let scale = cost.data.iter().fold(0.0f64, |m, &v| m.max(v));
    let eps = 1e-12 * (1.0 + scale) * n as f64;

    // 1-based shortest augmenting path formulation; column 0 is a sentinel.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut col_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0f64; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        col_row[0] = i;
        let mut j0 = 0usize;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = col_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_col = vec![0usize; n];
    let mut col_of = vec![0usize; n];
    for j in 1..=n {
        row_col[col_row[j] - 1] = j - 1;
        col_of[j - 1] = col_row[j] - 1;
    }
    let tight = |i: usize, j: usize| (cost.get(i, j) - u[i + 1] - v[j + 1]).abs() <= eps;
    lexicographic_matching(n, &tight, &mut row_col, &mut col_of);

    let total_cost = row_col.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum();
    Assignment {
        permutation: row_col,
        total_cost,
    }
}

/// Rewrites a perfect matching on the tight graph into the lexicographically
/// smallest one by alternating-path exchanges.
fn lexicographic_matching(
    n: usize,
    tight: &dyn Fn(usize, usize) -> bool,
    row_col: &mut [usize],
    col_row: &mut [usize],
) {
    let mut fixed_col = vec![false; n];
    let mut seen = vec![false; n];
    let mut parent = vec![usize::MAX; n];
    for i in 0..n {
        for j in 0..n {
            if fixed_col[j] || !tight(i, j) {
                continue;
            }
            if row_col[i] == j {
                break;
            }
            // Give j to i; j's owner must reach i's old column through
            // tight edges among unfixed rows other than i.
            let target = row_col[i];
            let owner = col_row[j];
            seen.fill(false);
            parent.fill(usize::MAX);
            let mut stack = vec![owner];
            seen[j] = true;
            let mut reached = None;
            'search: while let Some(r) = stack.pop() {
                for c in 0..n {
                    if seen[c] || fixed_col[c] || !tight(r, c) {
                        continue;
                    }
                    seen[c] = true;
                    parent[c] = r;
                    if c == target {
                        reached = Some(c);
                        break 'search;
                    }
                    stack.push(col_row[c]);
                }
            }
            if let Some(mut c) = reached {
                // walk back: each row on the path takes the column it reached
                loop {
                    let r = parent[c];
                    let prev = row_col[r];
                    row_col[r] = c;
                    col_row[c] = r;
                    if r == owner {
                        break;
                    }
                    c = prev;
                }
                row_col[i] = j;
                col_row[j] = i;
                break;
            }
        }
        fixed_col[row_col[i]] = true;
    }
}

/// Per-pair point cost matrix: chi-square of the two histograms, halved so
/// each entry lies in `[0, 1]` for unit-sum rows.
pub fn sc_cost_matrix(a: &ShapeContextSet, b: &ShapeContextSet) -> Result<CostMatrix, MatchError> {
    if a.len() != b.len() {
        return Err(MatchError::PointCountMismatch(a.len(), b.len()));
    }
    if a.bins() != b.bins() {
        return Err(MatchError::BinCountMismatch(a.bins(), b.bins()));
    }
    let n = a.len();
    let mut data = Vec::with_capacity(n * n);
    for ra in a.rows() {
        for rb in b.rows() {
            data.push(chi_square_unchecked(ra, rb) / 2.0);
        }
    }
    CostMatrix::new(n, data)
}

/// Mean matched-pair cost under the optimal assignment, in `[0, 1]`.
pub fn sc_cost(a: &ShapeContextSet, b: &ShapeContextSet) -> Result<f64, MatchError> {
    let m = sc_cost_matrix(a, b)?;
    Ok(hungarian(&m).total_cost / m.size() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombineWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for CombineWeights {
    fn default() -> Self {
        Self {
            alpha: 0.17,
            beta: 1.0,
        }
    }
}

impl CombineWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, MatchError> {
        let w = Self { alpha, beta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), MatchError> {
        let (alpha, beta) = (self.alpha, self.beta);
        if !(alpha >= 0.0 && beta >= 0.0 && alpha + beta > 0.0 && (alpha + beta).is_finite()) {
            return Err(MatchError::InvalidWeights { alpha, beta });
        }
        Ok(())
    }
}

/// `alpha * c_sc + beta * d_app` with both inputs normalized to `[0, 1]`.
pub fn combined_cost(c_sc: f64, d_app: f64, w: &CombineWeights) -> Result<f64, MatchError> {
    w.validate()?;
    for x in [c_sc, d_app] {
        if !(0.0..=1.0).contains(&x) {
            return Err(MatchError::OutOfRangeInput(x));
        }
    }
    Ok(w.alpha * c_sc + w.beta * d_app)
}

/// Sliding sum of squared differences between two equal-width masks.
///
/// The shorter mask is the template and slides vertically over the taller
/// one; the best offset's SSD is divided by the template's pixel count.
pub fn template_ssd(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MatchError> {
    if a.width() != b.width() {
        return Err(MatchError::WidthMismatch(a.width(), b.width()));
    }
    let (tpl, img) = if a.height() <= b.height() { (a, b) } else { (b, a) };
    let w = tpl.width();
    let th = tpl.height();
    let words = w.div_ceil(64);
    let t = pack_rows(tpl, words);
    let s = pack_rows(img, words);
    let mut best = u64::MAX;
    for j in 0..=img.height() - th {
        let window = &s[j * words..(j + th) * words];
        let mut r = 0u64;
        for (row_t, row_s) in t.chunks_exact(words).zip(window.chunks_exact(words)) {
            r += row_t.iter().zip(row_s).map(|(&p, &q)| u64::from((p ^ q).count_ones())).sum::<u64>();
            if r >= best {
                break;
            }
        }
        best = best.min(r);
        if best == 0 {
            break;
        }
    }
    Ok(best as f64 / (w * th) as f64)
}

fn pack_rows(m: &BinaryMask, words: usize) -> Vec<u64> {
    let w = m.width();
    let mut out = vec![0u64; words * m.height()];
    for (y, row) in m.pixels().chunks_exact(w).enumerate() {
        for (x, _) in row.iter().enumerate().filter(|(_, &p)| p) {
            out[y * words + x / 64] |= 1 << (x % 64);
        }
    }
    out
}

fn directed_hausdorff(a: &[Point], b: &[Point]) -> f64 {
    let mut worst = 0.0f64;
    for &p in a {
        let mut nearest = f64::INFINITY;
        for &q in b {
            let d = p.dist_sq(q);
            if d < nearest {
                nearest = d;
                if nearest <= worst {
                    // cannot raise the running max
                    break;
                }
            }
        }
        worst = worst.max(nearest);
    }
    worst.sqrt()
}

/// Symmetric Hausdorff distance between two finite point sets.
pub fn hausdorff(a: &[Point], b: &[Point]) -> Result<f64, MatchError> {
    if a.is_empty() || b.is_empty() {
        return Err(MatchError::EmptySet);
    }
    Ok(directed_hausdorff(a, b).max(directed_hausdorff(b, a)))
}

const HU_EPS: f64 = 1e-30;

/// Signed log-magnitude of a Hu invariant.
pub fn hu_log(phi: f64) -> f64 {
    let m = (phi.abs() + HU_EPS).log10();
    if phi < 0.0 {
        -m
    } else if phi > 0.0 {
        m
    } else {
        0.0
    }
}

/// L1 distance between signed log-magnitudes of the seven invariants.
pub fn hu_distance(a: &HuVector, b: &HuVector) -> f64 {
    a.0.iter()
        .zip(&b.0)
        .map(|(&x, &y)| (hu_log(x) - hu_log(y)).abs())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_square_cases() {
        assert_eq!(chi_square(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert_eq!(chi_square(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0);
        assert_eq!(chi_square(&[2.0, 0.0, 0.0], &[0.0, 2.0, 0.0]).unwrap(), 4.0);
        assert_eq!(chi_square(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(chi_square(&[1.0], &[0.5, 0.5]), Err(MatchError::BinCountMismatch(1, 2)));
    }

    #[test]
    fn hungarian_small_cases() {
        let z = CostMatrix::new(3, vec![0.0; 9]).unwrap();
        let a = hungarian(&z);
        assert_eq!(a.permutation, vec![0, 1, 2]);
        assert_eq!(a.total_cost, 0.0);

        let m = CostMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        let a = hungarian(&m);
        assert_eq!(a.permutation, vec![0, 1]);
        assert_eq!(a.total_cost, 2.0);

        let m = CostMatrix::from_rows(&[
            vec![4.0, 1.0, 3.0],
            vec![2.0, 0.0, 5.0],
            vec![3.0, 2.0, 2.0],
        ])
        .unwrap();
        let a = hungarian(&m);
        assert_eq!(a.permutation, vec![1, 0, 2]);
        assert_eq!(a.total_cost, 5.0);
    }

    #[test]
    fn hungarian_prefers_smallest_permutation_on_ties() {
        // both (0,1) and (1,0) cost 2
        let m = CostMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(hungarian(&m).permutation, vec![0, 1]);
        let m = CostMatrix::from_rows(&[
            vec![5.0, 0.0, 0.0],
            vec![0.0, 5.0, 0.0],
            vec![0.0, 0.0, 5.0],
        ])
        .unwrap();
        assert_eq!(hungarian(&m).permutation, vec![1, 2, 0]);
    }

    #[test]
    fn cost_matrix_validation() {
        assert_eq!(CostMatrix::new(0, vec![]), Err(MatchError::EmptyMatrix));
        assert!(matches!(
            CostMatrix::from_rows(&[vec![1.0, 2.0], vec![1.0]]),
            Err(MatchError::NonSquare { row: 1, len: 1, n: 2 })
        ));
        assert_eq!(
            CostMatrix::new(1, vec![f64::NAN]),
            Err(MatchError::NonFiniteEntry(0, 0))
        );
        assert_eq!(
            CostMatrix::new(2, vec![0.0, 1.0, f64::INFINITY, 0.0]),
            Err(MatchError::NonFiniteEntry(1, 0))
        );
    }

    #[test]
    fn combined_cost_examples() {
        let w = CombineWeights::default();
        assert_eq!(combined_cost(0.0, 0.0, &w).unwrap(), 0.0);
        assert!((combined_cost(1.0, 1.0, &w).unwrap() - 1.17).abs() < 1e-12);
        assert!((combined_cost(0.5, 0.2, &w).unwrap() - 0.285).abs() < 1e-12);
        assert_eq!(combined_cost(1.5, 0.0, &w), Err(MatchError::OutOfRangeInput(1.5)));
        assert_eq!(combined_cost(0.0, -0.1, &w), Err(MatchError::OutOfRangeInput(-0.1)));
        assert!(CombineWeights::new(0.0, 0.0).is_err());
        assert!(CombineWeights::new(-1.0, 2.0).is_err());
    }

    fn rows(rows: &[&str]) -> BinaryMask {
        BinaryMask::from_fn(rows[0].len(), rows.len(), |x, y| rows[y].as_bytes()[x] == b'#').unwrap()
    }

    #[test]
    fn template_ssd_cases() {
        let a = rows(&["#..#", ".##.", "####"]);
        assert_eq!(template_ssd(&a, &a).unwrap(), 0.0);
        let inv = BinaryMask::from_fn(4, 3, |x, y| !a.get(x, y)).unwrap();
        assert_eq!(template_ssd(&a, &inv).unwrap(), 1.0);
        // 2-row template appearing verbatim at offset 1 of a 4-row image
        let img = rows(&["....", "#.#.", ".#.#", "####"]);
        let tpl = rows(&["#.#.", ".#.#"]);
        assert_eq!(template_ssd(&tpl, &img).unwrap(), 0.0);
        assert_eq!(template_ssd(&img, &tpl).unwrap(), 0.0);
        // offsets: j=0 -> 4 + 4 = 4 differences? enumerate explicitly
        let tpl2 = rows(&["##..", "##.."]);
        // j=0: row0 vs "...." 2, row1 vs "#.#." 2 -> 4
        // j=1: "#.#." 2, ".#.#" 4 -> 6
        // j=2: ".#.#" 4, "####" 2 -> 6
        assert_eq!(template_ssd(&tpl2, &img).unwrap(), 4.0 / 8.0);
        let narrow = rows(&["##"]);
        assert_eq!(template_ssd(&narrow, &img), Err(MatchError::WidthMismatch(2, 4)));
    }

    #[test]
    fn hausdorff_cases() {
        let p = |x, y| Point::new(x, y);
        assert_eq!(hausdorff(&[p(1.0, 2.0)], &[p(1.0, 2.0)]).unwrap(), 0.0);
        assert_eq!(hausdorff(&[p(0.0, 0.0)], &[p(3.0, 4.0)]).unwrap(), 5.0);
        assert_eq!(hausdorff(&[p(0.0, 0.0), p(10.0, 0.0)], &[p(0.0, 0.0)]).unwrap(), 10.0);
        assert_eq!(hausdorff(&[p(0.0, 0.0)], &[p(0.0, 0.0), p(10.0, 0.0)]).unwrap(), 10.0);
        assert_eq!(hausdorff(&[], &[p(0.0, 0.0)]), Err(MatchError::EmptySet));
    }

    #[test]
    fn hu_distance_basics() {
        let a = HuVector([0.2, 0.01, 1e-4, 1e-5, -1e-10, 1e-7, 3e-11]);
        let b = HuVector([0.25, 0.02, 1e-4, 2e-5, 1e-10, -1e-7, -3e-11]);
        assert_eq!(hu_distance(&a, &a), 0.0);
        assert_eq!(hu_distance(&a, &b), hu_distance(&b, &a));
        assert!(hu_distance(&a, &b) > 0.0);
        assert_eq!(hu_log(0.0), 0.0);
        assert!((hu_log(-1e-3) - 3.0).abs() < 1e-12);
    }
}
