//! Exact split enumeration over pre-sorted columns.

use std::ops::Range;

use super::matrix::{ColumnIndex, FeatureMatrix, NEW_VALUE, ROW_MASK};
use super::{GradHess, TrainParams};

/// Best split found for one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    /// Present values strictly below the threshold go left.
    pub threshold: f64,
    /// Where rows with a missing value for `feature` are routed.
    pub default_left: bool,
    pub gain: f64,
    pub left_count: usize,
    pub right_count: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct NodeStats {
    pub g: f64,
    pub h: f64,
    pub count: usize,
}

impl NodeStats {
    #[inline]
    pub(crate) fn add(&mut self, g: f64, h: f64) {
        self.g += g;
        self.h += h;
        self.count += 1;
    }

    #[inline]
    fn minus(&self, other: &NodeStats) -> NodeStats {
        NodeStats { g: self.g - other.g, h: self.h - other.h, count: self.count - other.count }
    }

    #[inline]
    fn plus(&self, other: &NodeStats) -> NodeStats {
        NodeStats { g: self.g + other.g, h: self.h + other.h, count: self.count + other.count }
    }
}

/// Threshold strictly between two consecutive distinct values, so that
/// `lo < t` and `!(hi < t)` both hold.
#[inline]
fn midpoint(lo: f64, hi: f64) -> f64 {
    let t = lo + (hi - lo) * 0.5;
    if t > lo {
        t
    } else {
        hi
    }
}

/// Per-feature entries of the open nodes, grouped by node in slot order and
/// sorted by value within each node. Rebuilt from the [`ColumnIndex`] at the
/// start of every tree and partitioned in place after each level. Each
/// freshly written segment is handed to a visitor while it is still in
/// cache, which is where split search runs.
#[derive(Debug, Default)]
pub(crate) struct NodeColumns {
    cols: Vec<NodeColumn>,
    /// Holds the right-going entries of the segment being partitioned.
    spill: NodeColumn,
    /// Shared hessian when every row has the same one; per-entry hessians
    /// are only stored otherwise.
    h_const: Option<f64>,
}

/// Arrays keep their high-water length between trees so that refilling
/// never reallocates or zero-fills; the live prefix ends at the last bound.
#[derive(Debug, Default, Clone)]
pub(crate) struct NodeColumn {
    /// Row ids tagged with [`NEW_VALUE`] when the value differs from the
    /// previous entry of the same node.
    rows: Vec<u32>,
    g: Vec<f64>,
    h: Vec<f64>,
    /// Segment of open node `o` is `bounds[o]..bounds[o + 1]`.
    bounds: Vec<usize>,
}

impl NodeColumn {
    fn reserve_len(&mut self, len: usize, with_h: bool) {
        if self.rows.len() < len {
            self.rows.resize(len, 0);
            self.g.resize(len, 0.0);
        }
        if with_h && self.h.len() < len {
            self.h.resize(len, 0.0);
        }
    }
}

/// Read-only view of one node's entries for one feature.
#[derive(Clone, Copy)]
pub(crate) struct SegmentView<'a> {
    pub feature: usize,
    rows: &'a [u32],
    g: &'a [f64],
    /// Empty when the hessian is shared.
    h: &'a [f64],
    h_const: Option<f64>,
}

impl<'a> SegmentView<'a> {
    fn of(col: &'a NodeColumn, feature: usize, range: Range<usize>, h_const: Option<f64>) -> Self {
        let h = if h_const.is_some() { &[][..] } else { &col.h[range.clone()] };
        SegmentView { feature, rows: &col.rows[range.clone()], g: &col.g[range], h, h_const }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }
}

/// The hessian shared by every row, if there is one.
pub(crate) fn shared_hessian(gh: &[GradHess]) -> Option<f64> {
    let h0 = gh.first()?.h;
    gh.iter().all(|d| d.h == h0).then_some(h0)
}

impl NodeColumns {
    /// Row ids of open node `o` for one feature, in value order.
    pub(crate) fn segment(&self, feature: usize, o: usize) -> impl Iterator<Item = u32> + '_ {
        let col = &self.cols[feature];
        col.rows[col.bounds[o]..col.bounds[o + 1]].iter().map(|&e| e & ROW_MASK)
    }

    /// Places every row into a single root node, or only the rows flagged in
    /// `members` when given, and visits the root segment of every feature.
    pub(crate) fn reset(
        &mut self,
        index: &ColumnIndex,
        gh: &[GradHess],
        members: Option<&[bool]>,
        mut visit: impl FnMut(SegmentView),
    ) {
        self.h_const = shared_hessian(gh);
        let with_h = self.h_const.is_none();
        let g_row: Vec<f64> = gh.iter().map(|d| d.g).collect();
        self.cols.resize_with(index.columns.len(), NodeColumn::default);
        for (feature, (dst, col)) in self.cols.iter_mut().zip(&index.columns).enumerate() {
            dst.reserve_len(col.len(), with_h);
            let len = match members {
                None => {
                    dst.rows[..col.len()].copy_from_slice(col);
                    col.len()
                }
                Some(keep) => {
                    let mut n = 0;
                    let mut pending = 0;
                    for &e in col {
                        pending |= e & NEW_VALUE;
                        if keep[(e & ROW_MASK) as usize] {
                            dst.rows[n] = e | pending;
                            pending = 0;
                            n += 1;
                        }
                    }
                    n
                }
            };
            for (g, &e) in dst.g[..len].iter_mut().zip(&dst.rows[..len]) {
                *g = g_row[(e & ROW_MASK) as usize];
            }
            if with_h {
                for (h, &e) in dst.h[..len].iter_mut().zip(&dst.rows[..len]) {
                    *h = gh[(e & ROW_MASK) as usize].h;
                }
            }
            dst.bounds.clear();
            dst.bounds.extend([0, len]);
            visit(SegmentView::of(dst, feature, 0..len, self.h_const));
        }
    }

    /// Moves every entry into its child segment and visits each child
    /// segment as `(child slot, view)` right after it is written.
    /// `left_slot[o]` is the slot of the left child of open node `o` (the
    /// right child follows it), or `None` when `o` became a leaf and its
    /// entries are dropped.
    pub(crate) fn partition(
        &mut self,
        left_slot: &[Option<u32>],
        goes_left: &RowBits,
        mut visit: impl FnMut(usize, SegmentView),
    ) {
        let h_const = self.h_const;
        let with_h = h_const.is_none();
        let spill = &mut self.spill;
        for (feature, col) in self.cols.iter_mut().enumerate() {
            let old_bounds = std::mem::take(&mut col.bounds);
            col.bounds.push(0);
            let mut w = 0;
            for (o, slot) in left_slot.iter().enumerate() {
                let Some(slot) = slot else { continue };
                let (lo, hi) = (old_bounds[o], old_bounds[o + 1]);
                spill.reserve_len(hi - lo, with_h);
                let n_left = split_segment(col, spill, lo..hi, w, goes_left, with_h);
                let len = hi - lo;
                col.rows[w + n_left..w + len].copy_from_slice(&spill.rows[..len - n_left]);
                col.g[w + n_left..w + len].copy_from_slice(&spill.g[..len - n_left]);
                if with_h {
                    col.h[w + n_left..w + len].copy_from_slice(&spill.h[..len - n_left]);
                }
                col.bounds.extend([w + n_left, w + len]);
                let slot = *slot as usize;
                visit(slot, SegmentView::of(col, feature, w..w + n_left, h_const));
                visit(slot + 1, SegmentView::of(col, feature, w + n_left..w + len, h_const));
                w += len;
            }
            debug_assert!(col.bounds.windows(2).all(|b| b[0] <= b[1]));
        }
    }
}

/// Stable split of `col[range]`: left-going entries are compacted to start
/// at `dst` (which never overtakes the read position) and right-going ones
/// are copied to the front of `spill`. A value change seen anywhere since a
/// child's previous entry carries over to that child's next entry. Returns
/// the number of left-going entries.
fn split_segment(
    col: &mut NodeColumn,
    spill: &mut NodeColumn,
    range: Range<usize>,
    dst: usize,
    goes_left: &RowBits,
    with_h: bool,
) -> usize {
    debug_assert!(dst <= range.start);
    let (mut wl, mut wr) = (dst, 0);
    let (mut pend_l, mut pend_r) = (NEW_VALUE, NEW_VALUE);
    for i in range {
        let e = col.rows[i];
        let gi = col.g[i];
        let left = goes_left.get(e & ROW_MASK);
        // Both destinations are written and only the chosen cursor advances,
        // which keeps the loop free of data-dependent branches. The write to
        // the other side is overwritten later; wl <= i always holds.
        let mask = (left as u32).wrapping_neg();
        pend_l |= e & NEW_VALUE;
        pend_r |= e & NEW_VALUE;
        col.rows[wl] = (e & ROW_MASK) | pend_l;
        col.g[wl] = gi;
        spill.rows[wr] = (e & ROW_MASK) | pend_r;
        spill.g[wr] = gi;
        if with_h {
            let hi = col.h[i];
            col.h[wl] = hi;
            spill.h[wr] = hi;
        }
        pend_l &= !mask;
        pend_r &= mask;
        wl += left as usize;
        wr += !left as usize;
    }
    wl - dst
}

/// One bit per row; small enough to stay in cache during partitioning.
#[derive(Debug, Default)]
pub(crate) struct RowBits {
    words: Vec<u64>,
}

impl RowBits {
    pub(crate) fn reset(&mut self, n: usize) {
        self.words.clear();
        self.words.resize(n.div_ceil(64), 0);
    }

    #[inline]
    pub(crate) fn set(&mut self, row: usize, value: bool) {
        let (w, b) = (row / 64, row % 64);
        self.words[w] = (self.words[w] & !(1 << b)) | ((value as u64) << b);
    }

    #[inline]
    pub(crate) fn get(&self, row: u32) -> bool {
        (self.words[row as usize / 64] >> (row % 64)) & 1 != 0
    }
}

#[derive(Debug, Clone, Copy)]
struct Best {
    score: f64,
    feature: usize,
    /// Rows holding the values just below and at the threshold.
    lo_row: u32,
    hi_row: u32,
    /// Entries before this position in the node's segment go left.
    pos: usize,
    default_left: bool,
    left_count: usize,
    right_count: usize,
}

/// Running best of one node while its segments are scanned.
#[derive(Debug, Clone, Copy)]
struct NodeBest {
    /// Best structure score so far; a candidate must beat it strictly.
    /// Starts at the parent score plus 2γ, i.e. the zero-gain level.
    bar: f64,
    best: Option<Best>,
}

/// What a scan of one node segment needs to know about the node.
struct Segment<'a> {
    feature: usize,
    rows: &'a [u32],
    g: &'a [f64],
    total: NodeStats,
    present: NodeStats,
}

impl Segment<'_> {
    #[inline]
    fn missing(&self) -> NodeStats {
        self.total.minus(&self.present)
    }

    /// Candidate `i` sends entries `0..i` left. `i = 0` is the split of the
    /// missing rows from all present ones, with the lowest value as threshold.
    fn record(&self, i: usize, score: f64, default_left: bool, left_count: usize) -> Best {
        Best {
            score,
            feature: self.feature,
            pos: i,
            lo_row: self.rows[i.saturating_sub(1)] & ROW_MASK,
            hi_row: self.rows[i] & ROW_MASK,
            default_left,
            left_count,
            right_count: self.total.count - left_count,
        }
    }
}

/// Reusable scratch space for scanning the open nodes of one tree level.
#[derive(Debug, Default)]
pub(crate) struct SplitSearch {
    nodes: Vec<NodeBest>,
    totals: Vec<NodeStats>,
    active: Vec<bool>,
    parent_score: Vec<f64>,
    h_const: Option<f64>,
    fast_h: Option<f64>,
    /// `inv[n] = 1 / (n·h + λ)` for a constant hessian `h`.
    inv: Vec<f64>,
    inv_key: Option<(u64, u64)>,
    block: Block,
}

impl SplitSearch {
    /// Prepares a search over the open nodes of one level. Segments are
    /// then fed through [`scan`](Self::scan) in ascending feature order per
    /// node, and [`finish`](Self::finish) turns the winners into splits.
    pub(crate) fn begin(
        &mut self,
        totals: &[NodeStats],
        active: &[bool],
        h_const: Option<f64>,
        n_rows: usize,
        params: &TrainParams,
    ) {
        let lambda = params.lambda;
        self.totals.clear();
        self.totals.extend_from_slice(totals);
        self.active.clear();
        self.active.extend_from_slice(active);
        self.parent_score.clear();
        self.parent_score.extend(totals.iter().map(|t| t.g * t.g / (t.h + lambda)));
        self.nodes.clear();
        self.nodes
            .extend(self.parent_score.iter().map(|&p| NodeBest { bar: p + 2.0 * params.gamma, best: None }));
        self.h_const = h_const;
        // The reciprocal table needs h·n + λ > 0 for every count that can
        // occur on either side of a split.
        self.fast_h = h_const.filter(|&h0| h0 > 0.0 || (h0 == 0.0 && lambda > 0.0));
        if let Some(h0) = self.fast_h {
            let key = (h0.to_bits(), lambda.to_bits());
            let n = n_rows + 1;
            if self.inv_key != Some(key) || self.inv.len() < n {
                self.inv.clear();
                self.inv.extend((0..n).map(|k| 1.0 / (k as f64 * h0 + lambda)));
                self.inv_key = Some(key);
            }
        }
    }

    /// Scans the entries of open node `o` for one feature.
    pub(crate) fn scan(&mut self, o: usize, view: SegmentView, params: &TrainParams) {
        if !self.active[o] || view.len() == 0 {
            return;
        }
        let total = self.totals[o];
        let g = view.g;
        let node = &mut self.nodes[o];
        match self.fast_h {
            Some(h0) => {
                let present = NodeStats { g: lane_sum(g), h: h0 * g.len() as f64, count: g.len() };
                let seg = Segment { feature: view.feature, rows: view.rows, g, total, present };
                scan_constant_h(node, &seg, &self.inv, params.min_samples_leaf, &mut self.block);
            }
            None => {
                let present = NodeStats {
                    g: g.iter().sum(),
                    h: view.h_const.map_or_else(|| view.h.iter().sum(), |h0| h0 * g.len() as f64),
                    count: g.len(),
                };
                let seg = Segment { feature: view.feature, rows: view.rows, g, total, present };
                scan_general(node, &seg, view.h, view.h_const, params);
            }
        }
    }

    /// Best split of every open node; `None` when nothing has positive gain.
    /// Each split comes with the number of present entries of its feature
    /// in the node that go left.
    pub(crate) fn finish(
        &self,
        matrix: &FeatureMatrix,
        params: &TrainParams,
        best: &mut Vec<Option<(SplitCandidate, usize)>>,
    ) {
        best.clear();
        best.extend(self.nodes.iter().enumerate().map(|(o, node)| {
            let b = node.best?;
            let gain = 0.5 * (b.score - self.parent_score[o]) - params.gamma;
            (gain > 0.0).then(|| {
                let lo = matrix.raw(b.lo_row as usize, b.feature);
                let hi = matrix.raw(b.hi_row as usize, b.feature);
                let split = SplitCandidate {
                    feature: b.feature,
                    threshold: midpoint(lo, hi),
                    default_left: b.default_left,
                    gain,
                    left_count: b.left_count,
                    right_count: b.right_count,
                };
                (split, b.pos)
            })
        }));
    }
}

/// Scalar scan for arbitrary hessians. Candidates are visited in threshold
/// order with the left default first, and only a strictly higher score
/// replaces the incumbent.
fn scan_general(node: &mut NodeBest, seg: &Segment, h: &[f64], h_const: Option<f64>, params: &TrainParams) {
    let hess = |i: usize| h_const.unwrap_or_else(|| h[i]);
    let missing = seg.missing();
    let (lambda, min_leaf) = (params.lambda, params.min_samples_leaf);
    let consider = |l: NodeStats, i: usize, default_left: bool, node: &mut NodeBest| {
        let r = seg.total.minus(&l);
        if l.count < min_leaf || r.count < min_leaf {
            return;
        }
        let (a, b) = (l.h + lambda, r.h + lambda);
        if a <= 0.0 || b <= 0.0 {
            return;
        }
        let score = l.g * l.g / a + r.g * r.g / b;
        if score > node.bar {
            node.bar = score;
            node.best = Some(seg.record(i, score, default_left, l.count));
        }
    };
    if missing.count > 0 {
        consider(missing, 0, true, node);
    }
    let mut acc = NodeStats { g: seg.g[0], h: hess(0), count: 1 };
    for i in 1..seg.g.len() {
        if seg.rows[i] & NEW_VALUE != 0 {
            consider(acc.plus(&missing), i, true, node);
            if missing.count > 0 {
                consider(acc, i, false, node);
            }
        }
        acc.add(seg.g[i], hess(i));
    }
}

const BLOCK: usize = 64;
const LANES: usize = 4;

/// Per-block scores, kept outside the scan so the arrays are reused.
#[derive(Debug)]
struct Block {
    prefix: [f64; BLOCK],
    with_missing: [f64; BLOCK],
    without_missing: [f64; BLOCK],
}

impl Default for Block {
    fn default() -> Self {
        Self { prefix: [0.0; BLOCK], with_missing: [0.0; BLOCK], without_missing: [0.0; BLOCK] }
    }
}

/// Scalar inputs shared by every block of one segment.
#[derive(Clone, Copy)]
struct SegmentSums {
    g_total: f64,
    g_miss: f64,
    n_miss: usize,
    m: usize,
    n: usize,
}

/// Scan for a hessian shared by all rows. Side hessians are then `h·count`,
/// so every score only needs table lookups and products. Scores are
/// computed a block at a time and a block is only walked in order when its
/// maximum beats the incumbent, which keeps the strict tie-breaking of the
/// scalar scan.
fn scan_constant_h(node: &mut NodeBest, seg: &Segment, inv: &[f64], min_leaf: usize, blk: &mut Block) {
    let m = seg.g.len();
    let n = seg.total.count;
    let missing = seg.missing();
    let sums = SegmentSums { g_total: seg.total.g, g_miss: missing.g, n_miss: missing.count, m, n };
    // Candidate i puts entries 0..i on the left; these are the inclusive
    // ranges of i that satisfy min_samples_leaf on both sides.
    let with_range = (min_leaf.saturating_sub(sums.n_miss).max(1), m.saturating_sub(min_leaf));
    let without_range = if sums.n_miss > 0 {
        (min_leaf.max(1), n.saturating_sub(min_leaf).min(m - 1))
    } else {
        // Same partition as the left default, which wins the tie.
        (1, 0)
    };

    if sums.n_miss >= min_leaf.max(1) && m >= min_leaf {
        // Missing rows left, every present entry right.
        let gr = sums.g_total - sums.g_miss;
        let score = sums.g_miss * sums.g_miss * inv[sums.n_miss] + gr * gr * inv[m];
        if score > node.bar {
            node.bar = score;
            node.best = Some(seg.record(0, score, true, sums.n_miss));
        }
    }

    let mut run = 0.0;
    let mut start = 0;
    while start < m {
        let len = BLOCK.min(m - start);
        run = prefix_block(&mut blk.prefix[..len], &seg.g[start..start + len], run);
        let block_max = score_block(blk, seg.rows, inv, &sums, start, len, with_range, without_range);
        if block_max > node.bar {
            for k in 0..len {
                let i = start + k;
                if blk.with_missing[k] > node.bar {
                    node.bar = blk.with_missing[k];
                    node.best = Some(seg.record(i, node.bar, true, i + sums.n_miss));
                }
                if blk.without_missing[k] > node.bar {
                    node.bar = blk.without_missing[k];
                    node.best = Some(seg.record(i, node.bar, false, i));
                }
            }
        }
        start += len;
    }
}

/// Writes the exclusive running sums of `g` offset by `run` and returns the
/// new running total. Full blocks use independent lanes to shorten the
/// dependency chain.
#[inline]
fn prefix_block(out: &mut [f64], g: &[f64], run: f64) -> f64 {
    if g.len() != BLOCK {
        let mut run = run;
        for (p, &gi) in out.iter_mut().zip(g) {
            *p = run;
            run += gi;
        }
        return run;
    }
    const STRIDE: usize = BLOCK / LANES;
    let mut lane = [0.0; LANES];
    for k in 0..STRIDE {
        for l in 0..LANES {
            out[l * STRIDE + k] = lane[l];
            lane[l] += g[l * STRIDE + k];
        }
    }
    let mut offset = [run; LANES];
    for l in 1..LANES {
        offset[l] = offset[l - 1] + lane[l - 1];
    }
    for l in 0..LANES {
        for p in &mut out[l * STRIDE..(l + 1) * STRIDE] {
            *p += offset[l];
        }
    }
    offset[LANES - 1] + lane[LANES - 1]
}

#[allow(clippy::too_many_arguments)]
fn score_block(
    blk: &mut Block,
    rows: &[u32],
    inv: &[f64],
    sums: &SegmentSums,
    start: usize,
    len: usize,
    with_range: (usize, usize),
    without_range: (usize, usize),
) -> f64 {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked just above.
            return unsafe { score_block_avx2(blk, rows, inv, sums, start, len, with_range, without_range) };
        }
    }
    score_block_impl(blk, rows, inv, sums, start, len, with_range, without_range)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
#[allow(clippy::too_many_arguments)]
unsafe fn score_block_avx2(
    blk: &mut Block,
    rows: &[u32],
    inv: &[f64],
    sums: &SegmentSums,
    start: usize,
    len: usize,
    with_range: (usize, usize),
    without_range: (usize, usize),
) -> f64 {
    score_block_impl(blk, rows, inv, sums, start, len, with_range, without_range)
}

/// Fills both score arrays for entries `start..start + len`, with −∞ for
/// entries that are not candidates, and returns the largest score. Only
/// plain IEEE operations are used, so every code path gives the same bits.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn score_block_impl(
    blk: &mut Block,
    rows: &[u32],
    inv: &[f64],
    sums: &SegmentSums,
    start: usize,
    len: usize,
    with_range: (usize, usize),
    without_range: (usize, usize),
) -> f64 {
    let flags = &rows[start..start + len];
    let prefix = &blk.prefix[..len];
    let mut block_max = f64::NEG_INFINITY;

    blk.with_missing[..len].fill(f64::NEG_INFINITY);
    if let Some((a, b)) = clip(with_range, start, len) {
        // Left holds the missing rows plus entries 0..i, right holds i..m.
        let il = &inv[start + a + sums.n_miss..start + b + sums.n_miss];
        let ir = &inv[sums.m - (start + b) + 1..sums.m - (start + a) + 1];
        let out = &mut blk.with_missing[a..b];
        for ((((o, &p), &f), &a_inv), &b_inv) in
            out.iter_mut().zip(&prefix[a..b]).zip(&flags[a..b]).zip(il).zip(ir.iter().rev())
        {
            let gl = p + sums.g_miss;
            let gr = sums.g_total - gl;
            let s = gl * gl * a_inv + gr * gr * b_inv;
            *o = if f & NEW_VALUE != 0 { s } else { f64::NEG_INFINITY };
        }
        block_max = block_max.max(max_of(out));
    }

    blk.without_missing[..len].fill(f64::NEG_INFINITY);
    if let Some((a, b)) = clip(without_range, start, len) {
        let il = &inv[start + a..start + b];
        let ir = &inv[sums.n - (start + b) + 1..sums.n - (start + a) + 1];
        let out = &mut blk.without_missing[a..b];
        for ((((o, &p), &f), &a_inv), &b_inv) in
            out.iter_mut().zip(&prefix[a..b]).zip(&flags[a..b]).zip(il).zip(ir.iter().rev())
        {
            let gr = sums.g_total - p;
            let s = p * p * a_inv + gr * gr * b_inv;
            *o = if f & NEW_VALUE != 0 { s } else { f64::NEG_INFINITY };
        }
        block_max = block_max.max(max_of(out));
    }
    block_max
}

/// Sum accumulated in independent lanes, shortening the dependency chain.
#[inline]
fn lane_sum(xs: &[f64]) -> f64 {
    let mut lanes = [0.0; LANES];
    let mut chunks = xs.chunks_exact(LANES);
    for c in &mut chunks {
        for (s, &x) in lanes.iter_mut().zip(c) {
            *s += x;
        }
    }
    let tail: f64 = chunks.remainder().iter().sum();
    lanes.iter().sum::<f64>() + tail
}

/// Largest element, using independent lanes so the comparisons pipeline.
/// Scores are never NaN, so the order of comparison does not matter.
#[inline(always)]
fn max_of(xs: &[f64]) -> f64 {
    let mut lanes = [f64::NEG_INFINITY; 8];
    let mut chunks = xs.chunks_exact(8);
    for c in &mut chunks {
        for (m, &x) in lanes.iter_mut().zip(c) {
            *m = if x > *m { x } else { *m };
        }
    }
    let tail = chunks.remainder().iter().fold(f64::NEG_INFINITY, |m, &x| if x > m { x } else { m });
    lanes.iter().fold(tail, |m, &x| if x > m { x } else { m })
}

/// Intersects an inclusive candidate range with the block `start..start+len`,
/// returning block-relative half-open bounds.
#[inline]
fn clip((lo, hi): (usize, usize), start: usize, len: usize) -> Option<(usize, usize)> {
    let a = lo.max(start);
    let b = (hi + 1).min(start + len);
    (a < b).then(|| (a - start, b - start))
}

/// Best split of the node made of `members`, or `None` when no split with
/// positive gain satisfies `min_samples_leaf`.
///
/// Candidates are every midpoint between consecutive distinct present
/// values of every feature, each tried with missing values routed left and
/// right, plus the split of missing from present values, whose threshold is
/// the lowest present value. Ties go to the lowest feature, then the lowest threshold, then
/// the left default.
pub fn find_best_split(
    matrix: &FeatureMatrix,
    gh: &[GradHess],
    members: &[usize],
    params: &TrainParams,
) -> Option<SplitCandidate> {
    assert_eq!(gh.len(), matrix.n_rows(), "one GradHess per row");
    if members.len() < 2 * params.min_samples_leaf {
        return None;
    }
    let mut member = vec![false; gh.len()];
    let mut total = NodeStats::default();
    for &m in members {
        member[m] = true;
        total.add(gh[m].g, gh[m].h);
    }
    let index = ColumnIndex::build(matrix);
    let h_const = shared_hessian(gh);
    let mut search = SplitSearch::default();
    search.begin(&[total], &[true], h_const, matrix.n_rows(), params);
    NodeColumns::default().reset(&index, gh, Some(&member), |view| search.scan(0, view, params));
    let mut best = Vec::new();
    search.finish(matrix, params, &mut best);
    best[0].map(|(split, _)| split)
}
