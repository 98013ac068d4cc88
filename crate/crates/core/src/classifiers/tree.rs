//! Exact greedy regression/classification trees over presorted columns.
//!
//! Every column is ranked once per dataset (sorted unique values plus the
//! rank of each row). A node evaluates every distinct value boundary of a
//! feature, either by accumulating a histogram over the column's ranks or by
//! sorting the node's rows, whichever is cheaper; both are exact. Thresholds
//! are placed between adjacent distinct values and `x <= threshold` goes left.

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::preprocess::Dataset;

/// Row ranks of one column, stored in the narrowest integer type.
#[derive(Debug, Clone)]
enum Ranks {
    U8(Vec<u8>),
    U16(Vec<u16>),
    U32(Vec<u32>),
}

impl Ranks {
    #[inline]
    fn get(&self, r: usize) -> usize {
        match self {
            Ranks::U8(v) => v[r] as usize,
            Ranks::U16(v) => v[r] as usize,
            Ranks::U32(v) => v[r] as usize,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RankedColumn {
    pub uniques: Vec<f32>,
    ranks: Ranks,
}

impl RankedColumn {
    fn build(values: Vec<f32>) -> RankedColumn {
        let mut uniques = values.clone();
        uniques.sort_by(|a, b| a.total_cmp(b));
        uniques.dedup_by(|a, b| a.total_cmp(b).is_eq());
        let rank_of = |v: &f32| uniques.binary_search_by(|u| u.total_cmp(v)).expect("value present");
        let ranks = if uniques.len() <= u8::MAX as usize + 1 {
            Ranks::U8(values.iter().map(|v| rank_of(v) as u8).collect())
        } else if uniques.len() <= u16::MAX as usize + 1 {
            Ranks::U16(values.iter().map(|v| rank_of(v) as u16).collect())
        } else {
            Ranks::U32(values.iter().map(|v| rank_of(v) as u32).collect())
        };
        RankedColumn { uniques, ranks }
    }

    #[inline]
    pub fn rank(&self, row: usize) -> usize {
        self.ranks.get(row)
    }
}

#[derive(Debug, Clone)]
pub struct RankedColumns {
    pub columns: Vec<RankedColumn>,
}

impl RankedColumns {
    pub fn build(data: &Dataset) -> RankedColumns {
        use rayon::prelude::*;
        let n = data.n_rows();
        let d = data.n_cols();
        let columns = (0..d)
            .into_par_iter()
            .map(|c| RankedColumn::build((0..n).map(|r| data.x[r * d + c]).collect()))
            .collect();
        RankedColumns { columns }
    }
}

/// How node statistics `(a, b)` turn into split scores and leaf values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Criterion {
    /// `a` = weighted positives, `b` = weight. Leaf = positive share.
    Gini,
    /// `a` = gradient sum, `b` = hessian sum. Leaf = -G / (H + lambda).
    Newton { lambda: f64 },
}

impl Criterion {
    /// Larger is better; gain of a split = score(L) + score(R) - score(parent).
    #[inline]
    fn score(self, a: f64, b: f64) -> f64 {
        match self {
            Criterion::Gini => {
                if b <= 0.0 {
                    0.0
                } else {
                    (a * a + (b - a) * (b - a)) / b
                }
            }
            Criterion::Newton { lambda } => 0.5 * a * a / (b + lambda),
        }
    }

    fn leaf(self, a: f64, b: f64) -> f64 {
        match self {
            Criterion::Gini => {
                if b > 0.0 {
                    a / b
                } else {
                    0.0
                }
            }
            Criterion::Newton { lambda } => -a / (b + lambda),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    /// Minimum `b` statistic (weight or hessian) in each child.
    pub min_child: f64,
    /// Features tried per node; `None` tries all.
    pub max_features: Option<usize>,
    pub min_gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub feature: u32,
    pub threshold: f32,
    pub left: u32,
    pub right: u32,
    pub value: f64,
    pub leaf: bool,
}

/// A fitted tree in flat form; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "TreeRecord", from = "TreeRecord")]
pub struct Tree {
    pub nodes: Vec<Node>,
}

/// Nested split record used for serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeRecord {
    Leaf {
        value: f64,
    },
    Split {
        feature: u32,
        threshold: f32,
        left: Box<TreeRecord>,
        right: Box<TreeRecord>,
    },
}

impl From<Tree> for TreeRecord {
    fn from(t: Tree) -> TreeRecord {
        fn rec(nodes: &[Node], k: usize) -> TreeRecord {
            let n = &nodes[k];
            if n.leaf {
                TreeRecord::Leaf { value: n.value }
            } else {
                TreeRecord::Split {
                    feature: n.feature,
                    threshold: n.threshold,
                    left: Box::new(rec(nodes, n.left as usize)),
                    right: Box::new(rec(nodes, n.right as usize)),
                }
            }
        }
        rec(&t.nodes, 0)
    }
}

impl From<TreeRecord> for Tree {
    fn from(r: TreeRecord) -> Tree {
        fn push(nodes: &mut Vec<Node>, r: &TreeRecord) -> u32 {
            let k = nodes.len();
            nodes.push(Node {
                feature: 0,
                threshold: 0.0,
                left: 0,
                right: 0,
                value: 0.0,
                leaf: true,
            });
            match r {
                TreeRecord::Leaf { value } => nodes[k].value = *value,
                TreeRecord::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let l = push(nodes, left);
                    let rr = push(nodes, right);
                    nodes[k] = Node {
                        feature: *feature,
                        threshold: *threshold,
                        left: l,
                        right: rr,
                        value: 0.0,
                        leaf: false,
                    };
                }
            }
            k as u32
        }
        let mut nodes = Vec::new();
        push(&mut nodes, &r);
        Tree { nodes }
    }
}

impl Tree {
    #[inline]
    pub fn predict_row(&self, row: &[f32]) -> f64 {
        let mut k = 0usize;
        loop {
            let n = &self.nodes[k];
            if n.leaf {
                return n.value;
            }
            k = if row[n.feature as usize] <= n.threshold {
                n.left as usize
            } else {
                n.right as usize
            };
        }
    }

    pub fn depth(&self) -> usize {
        fn d(nodes: &[Node], k: usize) -> usize {
            let n = &nodes[k];
            if n.leaf {
                0
            } else {
                1 + d(nodes, n.left as usize).max(d(nodes, n.right as usize))
            }
        }
        d(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.leaf).count()
    }
}

#[derive(Debug, Clone, Copy)]
struct Split {
    gain: f64,
    feature: usize,
    /// Rows with rank <= `rank` go left.
    rank: usize,
    threshold: f32,
}

/// Midpoint strictly below `hi` and not below `lo`.
fn threshold_between(lo: f32, hi: f32) -> f32 {
    let mid = lo + (hi - lo) / 2.0;
    if mid >= hi || mid < lo {
        lo
    } else {
        mid
    }
}

struct Workspace {
    hist: Vec<(f64, f64)>,
    touched: Vec<bool>,
    sorted: Vec<(u32, f64, f64)>,
    ga: Vec<f64>,
    gb: Vec<f64>,
}

/// Fitted tree plus the leaf value reached by every training row.
pub struct Fitted {
    pub tree: Tree,
    /// (row, leaf value) for every training row.
    pub assignments: Vec<(u32, f64)>,
}

/// Offsets of the columns with at most 256 distinct values inside a flat
/// per-node histogram of `[a, b, count]` cells.
struct SmallLayout {
    offset: Vec<Option<usize>>,
    columns: Vec<(usize, usize)>,
    len: usize,
}

impl SmallLayout {
    fn new(ranked: &RankedColumns) -> SmallLayout {
        let mut offset = vec![None; ranked.columns.len()];
        let mut columns = Vec::new();
        let mut len = 0;
        for (f, col) in ranked.columns.iter().enumerate() {
            if matches!(col.ranks, Ranks::U8(_)) && col.uniques.len() >= 2 {
                offset[f] = Some(len);
                columns.push((f, len));
                len += col.uniques.len();
            }
        }
        SmallLayout { offset, columns, len }
    }

    fn histogram(&self, ranked: &RankedColumns, rows: &[u32], a: &[f64], b: &[f64]) -> Vec<[f64; 3]> {
        let mut h = vec![[0.0; 3]; self.len];
        for &(f, off) in &self.columns {
            let Ranks::U8(ranks) = &ranked.columns[f].ranks else {
                unreachable!("layout holds u8 columns only")
            };
            let cells = &mut h[off..off + ranked.columns[f].uniques.len()];
            for &r in rows {
                let r = r as usize;
                // SAFETY: rows index the ranked dataset; ranks are < uniques.len().
                unsafe {
                    let c = cells.get_unchecked_mut(*ranks.get_unchecked(r) as usize);
                    c[0] += *a.get_unchecked(r);
                    c[1] += *b.get_unchecked(r);
                    c[2] += 1.0;
                }
            }
        }
        h
    }
}

struct Ctx<'a> {
    ranked: &'a RankedColumns,
    a: &'a [f64],
    b: &'a [f64],
    criterion: Criterion,
    params: &'a TreeParams,
    n_features: usize,
    /// Present when every node sees every feature, so sibling histograms
    /// can be derived by subtraction.
    small: Option<SmallLayout>,
}

pub fn fit_tree(
    ranked: &RankedColumns,
    rows: Vec<u32>,
    a: &[f64],
    b: &[f64],
    criterion: Criterion,
    params: &TreeParams,
    rng: &mut ChaCha8Rng,
) -> Fitted {
    let n_features = ranked.columns.len();
    let max_unique = ranked.columns.iter().map(|c| c.uniques.len()).max().unwrap_or(0);
    let all_features = params.max_features.is_none_or(|m| m >= n_features);
    let ctx = Ctx {
        ranked,
        a,
        b,
        criterion,
        params,
        n_features,
        small: all_features.then(|| SmallLayout::new(ranked)),
    };
    let mut ws = Workspace {
        hist: vec![(0.0, 0.0); max_unique],
        touched: vec![false; max_unique],
        sorted: Vec::new(),
        ga: Vec::new(),
        gb: Vec::new(),
    };
    let mut nodes = Vec::new();
    let mut rows = rows;
    let mut assignments = Vec::with_capacity(rows.len());
    let mut scratch = Vec::with_capacity(rows.len());
    build(&ctx, &mut rows[..], &mut scratch, 0, None, rng, &mut ws, &mut nodes, &mut assignments);
    Fitted {
        tree: Tree { nodes },
        assignments,
    }
}

#[allow(clippy::too_many_arguments)]
fn build(
    ctx: &Ctx,
    rows: &mut [u32],
    scratch: &mut Vec<u32>,
    depth: usize,
    hist: Option<Vec<[f64; 3]>>,
    rng: &mut ChaCha8Rng,
    ws: &mut Workspace,
    nodes: &mut Vec<Node>,
    assignments: &mut Vec<(u32, f64)>,
) -> u32 {
    let (a, b) = (ctx.a, ctx.b);
    let (sa, sb) = rows
        .iter()
        .fold((0.0, 0.0), |(x, y), &r| (x + a[r as usize], y + b[r as usize]));
    let k = nodes.len() as u32;
    let value = ctx.criterion.leaf(sa, sb);
    nodes.push(Node {
        feature: 0,
        threshold: 0.0,
        left: 0,
        right: 0,
        value,
        leaf: true,
    });
    let splittable = depth < ctx.params.max_depth && rows.len() >= 2;
    let hist = match (&ctx.small, hist) {
        (Some(layout), None) if splittable => Some(layout.histogram(ctx.ranked, rows, a, b)),
        (_, h) => h,
    };
    let split = if splittable {
        best_split(ctx, rows, sa, sb, hist.as_deref(), rng, ws)
    } else {
        None
    };
    let Some(split) = split else {
        assignments.extend(rows.iter().map(|&r| (r, value)));
        return k;
    };

    // Stable partition: left rows first, both halves keep their order.
    let col = &ctx.ranked.columns[split.feature];
    scratch.clear();
    let mut w = 0;
    for i in 0..rows.len() {
        let r = rows[i];
        if col.rank(r as usize) <= split.rank {
            rows[w] = r;
            w += 1;
        } else {
            scratch.push(r);
        }
    }
    rows[w..].copy_from_slice(scratch);
    let (left_rows, right_rows) = rows.split_at_mut(w);

    let (left_hist, right_hist) = match (&ctx.small, hist) {
        (Some(layout), Some(mut parent)) if depth + 1 < ctx.params.max_depth => {
            let left_small = left_rows.len() <= right_rows.len();
            let small_rows: &[u32] = if left_small { left_rows } else { right_rows };
            let child = layout.histogram(ctx.ranked, small_rows, a, b);
            for (p, c) in parent.iter_mut().zip(&child) {
                p[0] -= c[0];
                p[1] -= c[1];
                p[2] -= c[2];
            }
            if left_small {
                (Some(child), Some(parent))
            } else {
                (Some(parent), Some(child))
            }
        }
        _ => (None, None),
    };
    let l = build(ctx, left_rows, scratch, depth + 1, left_hist, rng, ws, nodes, assignments);
    let r = build(ctx, right_rows, scratch, depth + 1, right_hist, rng, ws, nodes, assignments);
    nodes[k as usize] = Node {
        feature: split.feature as u32,
        threshold: split.threshold,
        left: l,
        right: r,
        value,
        leaf: false,
    };
    k
}

trait RankInt: Copy {
    fn idx(self) -> usize;
}

impl RankInt for u8 {
    #[inline]
    fn idx(self) -> usize {
        self as usize
    }
}

impl RankInt for u16 {
    #[inline]
    fn idx(self) -> usize {
        self as usize
    }
}

impl RankInt for u32 {
    #[inline]
    fn idx(self) -> usize {
        self as usize
    }
}

/// Calls `consider(left_rank, next_rank, left_a, left_b)` for every
/// boundary between distinct values present among `rows`, in rank order.
#[allow(clippy::too_many_arguments)]
fn scan_boundaries<T: RankInt>(
    ranks: &[T],
    u: usize,
    rows: &[u32],
    ga: &[f64],
    gb: &[f64],
    use_hist: bool,
    ws_hist: &mut [(f64, f64)],
    ws_touched: &mut [bool],
    sorted: &mut Vec<(u32, f64, f64)>,
    consider: &mut impl FnMut(usize, usize, f64, f64),
) {
    if use_hist {
        let hist = &mut ws_hist[..u];
        let touched = &mut ws_touched[..u];
        for (i, &r) in rows.iter().enumerate() {
            // SAFETY: ranks are < u, rows index the ranked dataset and
            // ga/gb have rows.len() entries.
            unsafe {
                let q = ranks.get_unchecked(r as usize).idx();
                let cell = hist.get_unchecked_mut(q);
                cell.0 += *ga.get_unchecked(i);
                cell.1 += *gb.get_unchecked(i);
                *touched.get_unchecked_mut(q) = true;
            }
        }
        let mut prev: Option<usize> = None;
        let (mut la, mut lb) = (0.0, 0.0);
        for q in 0..u {
            if !touched[q] {
                continue;
            }
            if let Some(p) = prev {
                consider(p, q, la, lb);
            }
            la += hist[q].0;
            lb += hist[q].1;
            prev = Some(q);
            hist[q] = (0.0, 0.0);
            touched[q] = false;
        }
    } else {
        sorted.clear();
        sorted.extend(
            rows.iter()
                .enumerate()
                .map(|(i, &r)| (ranks[r as usize].idx() as u32, ga[i], gb[i])),
        );
        sorted.sort_unstable_by_key(|t| t.0);
        let (mut la, mut lb) = (0.0, 0.0);
        let mut i = 0;
        while i < sorted.len() {
            let q = sorted[i].0;
            let mut j = i;
            let (mut sa, mut sb) = (0.0, 0.0);
            while j < sorted.len() && sorted[j].0 == q {
                sa += sorted[j].1;
                sb += sorted[j].2;
                j += 1;
            }
            if i > 0 {
                consider(sorted[i - 1].0 as usize, q as usize, la, lb);
            }
            la += sa;
            lb += sb;
            i = j;
        }
    }
}

/// Boundaries from a precomputed `[a, b, count]` histogram.
fn scan_histogram(cells: &[[f64; 3]], consider: &mut impl FnMut(usize, usize, f64, f64)) {
    let mut prev: Option<usize> = None;
    let (mut la, mut lb) = (0.0, 0.0);
    for (q, c) in cells.iter().enumerate() {
        if c[2] < 0.5 {
            continue;
        }
        if let Some(p) = prev {
            consider(p, q, la, lb);
        }
        la += c[0];
        lb += c[1];
        prev = Some(q);
    }
}

fn best_split(
    ctx: &Ctx,
    rows: &[u32],
    sa: f64,
    sb: f64,
    small_hist: Option<&[[f64; 3]]>,
    rng: &mut ChaCha8Rng,
    ws: &mut Workspace,
) -> Option<Split> {
    let params = ctx.params;
    let criterion = ctx.criterion;
    let n_features = ctx.n_features;
    let parent = criterion.score(sa, sb);
    let mut features: Vec<usize> = match params.max_features {
        Some(m) if m < n_features => sample(rng, n_features, m).into_vec(),
        _ => (0..n_features).collect(),
    };
    features.sort_unstable();
    let m = rows.len();
    let log_m = (usize::BITS - m.leading_zeros()) as usize;
    let Workspace {
        hist,
        touched,
        sorted,
        ga,
        gb,
    } = ws;
    let mut gathered = false;
    let mut best: Option<Split> = None;
    for f in features {
        let col = &ctx.ranked.columns[f];
        let u = col.uniques.len();
        if u < 2 {
            continue;
        }
        let mut consider = |left_rank: usize, next_rank: usize, la: f64, lb: f64| {
            let (ra, rb) = (sa - la, sb - lb);
            if lb < params.min_child || rb < params.min_child {
                return;
            }
            let gain = criterion.score(la, lb) + criterion.score(ra, rb) - parent;
            if gain > params.min_gain && best.is_none_or(|s| gain > s.gain) {
                best = Some(Split {
                    gain,
                    feature: f,
                    rank: left_rank,
                    threshold: threshold_between(col.uniques[left_rank], col.uniques[next_rank]),
                });
            }
        };
        let offset = ctx.small.as_ref().and_then(|l| l.offset[f]);
        if let (Some(h), Some(off)) = (small_hist, offset) {
            scan_histogram(&h[off..off + u], &mut consider);
            continue;
        }
        if !gathered {
            ga.clear();
            ga.extend(rows.iter().map(|&r| ctx.a[r as usize]));
            gb.clear();
            gb.extend(rows.iter().map(|&r| ctx.b[r as usize]));
            gathered = true;
        }
        let use_hist = u <= m.saturating_mul(log_m.max(1));
        match &col.ranks {
            Ranks::U8(v) => scan_boundaries(v, u, rows, ga, gb, use_hist, hist, touched, sorted, &mut consider),
            Ranks::U16(v) => scan_boundaries(v, u, rows, ga, gb, use_hist, hist, touched, sorted, &mut consider),
            Ranks::U32(v) => scan_boundaries(v, u, rows, ga, gb, use_hist, hist, touched, sorted, &mut consider),
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn fit(rows: &[Vec<f64>], y: &[u8], depth: usize) -> Tree {
        let ds = Dataset::from_rows(rows, y).unwrap();
        let a: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        let b = vec![1.0; y.len()];
        let params = TreeParams {
            max_depth: depth,
            min_child: 1.0,
            max_features: None,
            min_gain: 1e-12,
        };
        fit_tree(
            &ds.ranked(),
            (0..y.len() as u32).collect(),
            &a,
            &b,
            Criterion::Gini,
            &params,
            &mut stream(0, &[]),
        )
        .tree
    }

    #[test]
    fn separates_one_feature() {
        let rows: Vec<Vec<f64>> = (0..10).map(|k| vec![k as f64]).collect();
        let y: Vec<u8> = (0..10).map(|k| (k >= 6) as u8).collect();
        let t = fit(&rows, &y, 3);
        assert_eq!(t.depth(), 1);
        assert_eq!(t.nodes[0].threshold, 5.5);
        assert_eq!(t.predict_row(&[5.0]), 0.0);
        assert_eq!(t.predict_row(&[6.0]), 1.0);
    }

    #[test]
    fn ties_prefer_lower_feature() {
        let rows: Vec<Vec<f64>> = (0..8).map(|k| vec![k as f64, k as f64]).collect();
        let y: Vec<u8> = (0..8).map(|k| (k >= 4) as u8).collect();
        let t = fit(&rows, &y, 1);
        assert_eq!(t.nodes[0].feature, 0);
    }

    #[test]
    fn threshold_is_strictly_below_next_value() {
        let lo = 1.0f32;
        let hi = f32::from_bits(lo.to_bits() + 1);
        let t = threshold_between(lo, hi);
        assert!(lo <= t && t < hi);
    }

    #[test]
    fn nested_record_round_trip() {
        let rows: Vec<Vec<f64>> = (0..20).map(|k| vec![(k % 7) as f64, (k / 3) as f64]).collect();
        let y: Vec<u8> = (0..20).map(|k| ((k % 7) > 3 || k > 15) as u8).collect();
        let t = fit(&rows, &y, 4);
        let json = serde_json::to_string(&t).unwrap();
        assert!(json.contains("threshold"));
        let back: Tree = serde_json::from_str(&json).unwrap();
        for r in &rows {
            let row: Vec<f32> = r.iter().map(|&v| v as f32).collect();
            assert_eq!(back.predict_row(&row), t.predict_row(&row));
        }
    }

    #[test]
    fn histogram_and_sort_paths_agree() {
        // Many uniques relative to node size forces the sorting path deeper down.
        let rows: Vec<Vec<f64>> = (0..300).map(|k| vec![((k * 7919) % 1000) as f64 / 3.0]).collect();
        let y: Vec<u8> = rows.iter().map(|r| ((r[0] as i64 / 40) % 2) as u8).collect();
        let t = fit(&rows, &y, 8);
        let ds = Dataset::from_rows(&rows, &y).unwrap();
        let acc = (0..ds.n_rows())
            .filter(|&k| (t.predict_row(ds.row(k)) >= 0.5) as u8 == y[k])
            .count();
        assert!(acc as f64 / 300.0 > 0.9);
    }
}
