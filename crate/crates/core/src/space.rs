//! Hierarchical cell decomposition of a periodic box.
//!
//! Top-level cells form a grid with edges no smaller than the largest
//! smoothing length, so interactions never reach past adjacent cells. Crowded
//! cells with mostly-small h split recursively into octants. Interactions are
//! described by a flat table of self entries (one cell) and pair entries (two
//! cells plus a periodic image shift), refined down the tree until a subtree
//! falls below the grouping threshold; the remaining recursion happens inside
//! the task that executes the entry. Cells also carry the hierarchical lock
//! state (lock plus descendant-hold counter) and cached per-axis sort lists.

use std::cell::UnsafeCell;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use crate::physics::{Particle, RunConfig};
use crate::util::{dot, SharedSlot, V3};

pub const NONE: u32 = u32::MAX;
pub const N_DIRS: usize = 13;

/// Canonical inter-cell offsets: one representative per +-o pair, chosen so
/// the first nonzero component is positive.
pub const DIR_OFFSETS: [[i32; 3]; N_DIRS] = [
    [0, 0, 1],
    [0, 1, -1],
    [0, 1, 0],
    [0, 1, 1],
    [1, -1, -1],
    [1, -1, 0],
    [1, -1, 1],
    [1, 0, -1],
    [1, 0, 0],
    [1, 0, 1],
    [1, 1, -1],
    [1, 1, 0],
    [1, 1, 1],
];

/// Relative cost of a pair interaction by squared offset length (face, edge,
/// corner): the fraction of particle pairs actually in range drops sharply
/// with the contact dimension.
pub const PAIR_COST_FACTOR: [f64; 4] = [0.0, 0.335, 0.162, 0.036];

/// Map any nonzero offset in {-1,0,1}^3 to (canonical index, flipped).
pub fn canon_dir(o: [i32; 3]) -> (usize, bool) {
    let lead = o.iter().find(|&&c| c != 0).copied();
    let flip = match lead {
        Some(c) => c < 0,
        None => panic!("zero cell offset has no direction"),
    };
    let oc = if flip { [-o[0], -o[1], -o[2]] } else { o };
    let idx = DIR_OFFSETS
        .iter()
        .position(|&d| d == oc)
        .expect("offset components must lie in {-1, 0, 1}");
    (idx, flip)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SortEntry {
    /// Projection of the particle position onto the axis at sort time.
    pub proj: f64,
    /// Index into the particle store.
    pub idx: u32,
}

/// Cached per-axis sorted particle lists for one cell, written by sort tasks
/// under task-graph ordering. Empty until built; stays valid until the next
/// tree rebuild (drift in between is absorbed by a sweep margin).
#[derive(Default)]
pub struct SortData {
    pub lists: Vec<Vec<SortEntry>>,
}

impl SortData {
    #[inline]
    pub fn built(&self) -> bool {
        !self.lists.is_empty()
    }
}

pub struct CellNode {
    pub lo: V3,
    pub edge: V3,
    /// Particles of the subtree occupy store[first .. first + count).
    pub first: u32,
    pub count: u32,
    pub parent: u32,
    pub children: Option<[u32; 8]>,
    pub depth: u8,
    /// Top-level ancestor rank (scheduler affinity key).
    pub top: u32,
    /// Largest smoothing length in the subtree; refreshed by ghost tasks
    /// after h updates, hence atomic (f64 bits).
    h_max: AtomicU64,
    /// 0 = free, 1 = held. Owning a cell means owning its whole subtree.
    pub lock: AtomicU32,
    /// Number of currently locked cells strictly below this one.
    pub hold: AtomicU32,
    pub sort: SharedSlot<SortData>,
}

impl CellNode {
    #[inline]
    pub fn h_max(&self) -> f64 {
        f64::from_bits(self.h_max.load(Ordering::Acquire))
    }

    #[inline]
    pub fn set_h_max(&self, v: f64) {
        self.h_max.store(v.to_bits(), Ordering::Release);
    }

    #[inline]
    pub fn is_split(&self) -> bool {
        self.children.is_some()
    }

    #[inline]
    pub fn min_edge(&self) -> f64 {
        self.edge[0].min(self.edge[1]).min(self.edge[2])
    }

    #[inline]
    pub fn range(&self) -> (usize, usize) {
        (self.first as usize, (self.first + self.count) as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEntry {
    /// Sweep i-side cell.
    pub a: u32,
    /// Sweep j-side cell; its positions are shifted by `shift`.
    pub b: u32,
    /// Canonical axis index into Tree::dirs, pointing from a towards b.
    pub dir: u8,
    /// Squared offset length (1 face, 2 edge, 3 corner).
    pub cls: u8,
    /// Periodic image shift applied to b's positions.
    pub shift: V3,
}

/// Shared-memory particle array. Workers mutate disjoint index ranges under
/// the cell locks; all unsafe accessors require the caller to hold whatever
/// lock covers the range.
pub struct ParticleStore {
    data: Vec<UnsafeCell<Particle>>,
}

unsafe impl Sync for ParticleStore {}

impl ParticleStore {
    pub fn from_vec(v: Vec<Particle>) -> Self {
        ParticleStore {
            data: v.into_iter().map(UnsafeCell::new).collect(),
        }
    }

    pub fn into_vec(self) -> Vec<Particle> {
        self.data.into_iter().map(|c| c.into_inner()).collect()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Safe exclusive view; use from single-threaded phases.
    pub fn as_mut_slice(&mut self) -> &mut [Particle] {
        unsafe { std::slice::from_raw_parts_mut(self.data.as_ptr() as *mut Particle, self.data.len()) }
    }

    /// Caller must ensure no concurrent writer overlaps [lo, hi).
    #[inline]
    pub unsafe fn slice(&self, lo: usize, hi: usize) -> &[Particle] {
        std::slice::from_raw_parts(self.data[lo..hi].as_ptr() as *const Particle, hi - lo)
    }

    /// Caller must hold exclusive access to [lo, hi).
    #[inline]
    #[allow(clippy::mut_from_ref)]
    pub unsafe fn slice_mut(&self, lo: usize, hi: usize) -> &mut [Particle] {
        std::slice::from_raw_parts_mut(self.data[lo..hi].as_ptr() as *mut Particle, hi - lo)
    }

    /// Raw element pointer; caller must hold exclusive access to index i for
    /// the duration of any write through it.
    #[inline]
    pub unsafe fn ptr(&self, i: usize) -> *mut Particle {
        self.data[i].get()
    }
}

pub struct Tree {
    pub cells: Vec<CellNode>,
    pub dims: [usize; 3],
    pub n_top: usize,
    pub box_size: V3,
    pub root_edge: V3,
    /// Unit vectors for the 13 canonical directions in physical coordinates.
    pub dirs: [V3; N_DIRS],
    /// Cells owning a self-interaction entry.
    pub selfs: Vec<u32>,
    pub pairs: Vec<PairEntry>,
    /// Smallest cell edge among emitted pair entries; pair-table exactness
    /// assumes reach + drift stays below this.
    pub min_pair_edge: f64,
    pub min_leaf_edge: f64,
}

pub fn wrap_point(x: &mut V3, box_size: V3) {
    for a in 0..3 {
        x[a] = x[a].rem_euclid(box_size[a]);
        // rem_euclid can return exactly box_size for tiny negative inputs.
        if x[a] >= box_size[a] {
            x[a] = 0.0;
        }
    }
}

impl Tree {
    /// Build the tree over the particles, reordering them so every cell's
    /// subtree is a contiguous store range. Positions are wrapped into the
    /// box here; they drift unwrapped until the next rebuild.
    pub fn build(parts: &mut Vec<Particle>, cfg: &RunConfig) -> Tree {
        let n = parts.len();
        assert!(n > 0, "cannot build a cell tree over zero particles");
        let bx = cfg.box_size;
        let mut max_h: f64 = 0.0;
        for p in parts.iter_mut() {
            assert!(
                p.x.iter().all(|v| v.is_finite()) && p.h.is_finite() && p.h > 0.0,
                "non-finite position or bad h for particle {}",
                p.id
            );
            wrap_point(&mut p.x, bx);
            max_h = max_h.max(p.h);
        }

        // Minimum-image pairing needs h <= box/2: past that a particle sees
        // two images of the same neighbour and the pair set is ill defined.
        // The bound also makes every top grid at least 2 cells per axis, so
        // a pair entry never joins a cell to its own periodic image.
        assert!(
            (0..3).all(|a| 2.0 * max_h <= bx[a]),
            "smoothing length {max_h} exceeds half a box edge; interactions past the nearest periodic image are not supported"
        );
        // Past this the top grid stops paying for itself (tiny h with few
        // particles would allocate millions of empty cells); splitting
        // refines dense regions instead. Capping only widens cell edges, so
        // the one-ring reach guarantee (edge >= max_h) is preserved.
        const MAX_TOP_DIMS: usize = 64;
        let mut dims = [1usize; 3];
        for a in 0..3 {
            dims[a] = ((bx[a] / max_h).floor() as usize).clamp(2, MAX_TOP_DIMS);
        }
        let root_edge = [
            bx[0] / dims[0] as f64,
            bx[1] / dims[1] as f64,
            bx[2] / dims[2] as f64,
        ];
        let n_top = dims[0] * dims[1] * dims[2];

        let rank_of = |x: &V3| -> u32 {
            let mut r = 0usize;
            for a in 0..3 {
                let i = ((x[a] / root_edge[a]) as usize).min(dims[a] - 1);
                r = r * dims[a] + i;
            }
            r as u32
        };

        // Stable counting sort into top-level cells.
        let keys: Vec<u32> = parts.iter().map(|p| rank_of(&p.x)).collect();
        let mut counts = vec![0u32; n_top];
        for &k in &keys {
            counts[k as usize] += 1;
        }
        let mut starts = vec![0u32; n_top];
        let mut acc = 0u32;
        for (s, &c) in starts.iter_mut().zip(counts.iter()) {
            *s = acc;
            acc += c;
        }
        {
            let src = parts.clone();
            let mut cursor = starts.clone();
            for (p, &k) in src.iter().zip(keys.iter()) {
                parts[cursor[k as usize] as usize] = *p;
                cursor[k as usize] += 1;
            }
        }

        let mut cells: Vec<CellNode> = Vec::with_capacity(n_top * 2);
        for r in 0..n_top {
            let iz = r % dims[2];
            let iy = (r / dims[2]) % dims[1];
            let ix = r / (dims[2] * dims[1]);
            cells.push(CellNode {
                lo: [
                    ix as f64 * root_edge[0],
                    iy as f64 * root_edge[1],
                    iz as f64 * root_edge[2],
                ],
                edge: root_edge,
                first: starts[r],
                count: counts[r],
                parent: NONE,
                children: None,
                depth: 0,
                top: r as u32,
                h_max: AtomicU64::new(0),
                lock: AtomicU32::new(0),
                hold: AtomicU32::new(0),
                sort: SharedSlot::new(SortData::default()),
            });
        }

        let mut scratch: Vec<Particle> = Vec::new();
        for r in 0..n_top {
            split_cell(&mut cells, parts, r as u32, cfg, &mut scratch);
        }

        let min_leaf_edge = cells
            .iter()
            .filter(|c| !c.is_split())
            .map(CellNode::min_edge)
            .fold(f64::INFINITY, f64::min);

        let mut dirs = [[0.0; 3]; N_DIRS];
        for (d, o) in DIR_OFFSETS.iter().enumerate() {
            let v = [
                o[0] as f64 * root_edge[0],
                o[1] as f64 * root_edge[1],
                o[2] as f64 * root_edge[2],
            ];
            let len = dot(v, v).sqrt();
            dirs[d] = [v[0] / len, v[1] / len, v[2] / len];
        }

        let mut builder = EntryBuilder {
            cells: &cells,
            cfg,
            selfs: Vec::new(),
            pairs: Vec::new(),
            min_pair_edge: f64::INFINITY,
        };
        for r in 0..n_top {
            builder.self_rec(r as u32);
            for o in DIR_OFFSETS.iter() {
                let mut coord = [0usize; 3];
                let iz = r % dims[2];
                let iy = (r / dims[2]) % dims[1];
                let ix = r / (dims[2] * dims[1]);
                let base = [ix as i64, iy as i64, iz as i64];
                let mut shift = [0.0; 3];
                for a in 0..3 {
                    let d = dims[a] as i64;
                    let raw = base[a] + o[a] as i64;
                    let wrapped = raw.rem_euclid(d);
                    coord[a] = wrapped as usize;
                    shift[a] = (raw - wrapped) as f64 / d as f64 * bx[a];
                }
                let b = ((coord[0] * dims[1] + coord[1]) * dims[2] + coord[2]) as u32;
                builder.pair_rec(r as u32, b, shift);
            }
        }

        let EntryBuilder {
            selfs,
            pairs,
            min_pair_edge,
            ..
        } = builder;
        Tree {
            cells,
            dims,
            n_top,
            box_size: bx,
            root_edge,
            dirs,
            selfs,
            pairs,
            min_pair_edge,
            min_leaf_edge,
        }
    }

    #[inline]
    pub fn cell(&self, c: u32) -> &CellNode {
        &self.cells[c as usize]
    }

    /// Largest smoothing length over all particles, from top-cell caches.
    pub fn global_h_max(&self) -> f64 {
        (0..self.n_top).map(|r| self.cells[r].h_max()).fold(0.0, f64::max)
    }

    /// Coverage margin before drift or smoothing-length growth can push an
    /// interaction past the entry table. Two reach bounds matter: anything
    /// may cross at most one top cell (the top grid guarantees edge >=
    /// h_max at build), and a cross-parent entry's particles must not reach
    /// past the touching ring at its refinement level. Sibling entries are
    /// exempt: all octants of one parent touch each other, and reach beyond
    /// the parent is covered by the parent's own entries. Positive by
    /// construction on a fresh tree.
    pub fn reach_slack(&self) -> f64 {
        let min_top_edge = (0..3)
            .map(|a| self.box_size[a] / self.dims[a] as f64)
            .fold(f64::INFINITY, f64::min);
        let mut slack = min_top_edge - self.global_h_max();
        for e in self.pairs.iter() {
            let ca = self.cell(e.a);
            let cb = self.cell(e.b);
            if ca.parent != NONE && ca.parent == cb.parent {
                continue;
            }
            let edge = ca.min_edge().min(cb.min_edge());
            slack = slack.min(edge - ca.h_max().max(cb.h_max()));
        }
        slack
    }

    /// Euclidean lower bound on the distance between any point of a and any
    /// point of b shifted by `shift`, from the boxes recorded at build time.
    pub fn box_gap(&self, a: u32, b: u32, shift: V3) -> f64 {
        let ca = self.cell(a);
        let cb = self.cell(b);
        let mut s2 = 0.0;
        for k in 0..3 {
            let lo_b = cb.lo[k] + shift[k];
            let g = (lo_b - (ca.lo[k] + ca.edge[k]))
                .max(ca.lo[k] - (lo_b + cb.edge[k]))
                .max(0.0);
            s2 += g * g;
        }
        s2.sqrt()
    }

    /// Try to take exclusive ownership of a cell's subtree. Fails (leaving no
    /// trace) if the cell or any descendant is locked, or an ancestor is
    /// locked, or a competing walk holds an ancestor transiently.
    pub fn lock_cell(&self, c: u32) -> bool {
        let cell = self.cell(c);
        if cell
            .lock
            .compare_exchange(0, 1, Ordering::Acquire, Ordering::Relaxed)
            .is_err()
        {
            return false;
        }
        if cell.hold.load(Ordering::Acquire) != 0 {
            cell.lock.store(0, Ordering::Release);
            return false;
        }
        // Register on every ancestor: take its lock transiently so the check
        // against a locked ancestor and the hold increment are atomic.
        let mut cur = cell.parent;
        while cur != NONE {
            let anc = self.cell(cur);
            if anc
                .lock
                .compare_exchange(0, 1, Ordering::Acquire, Ordering::Relaxed)
                .is_err()
            {
                // Roll back the holds taken so far, then release the cell.
                let mut r = cell.parent;
                while r != cur {
                    let x = self.cell(r);
                    x.hold.fetch_sub(1, Ordering::AcqRel);
                    r = x.parent;
                }
                cell.lock.store(0, Ordering::Release);
                return false;
            }
            anc.hold.fetch_add(1, Ordering::AcqRel);
            anc.lock.store(0, Ordering::Release);
            cur = anc.parent;
        }
        true
    }

    /// Release a subtree lock. The cell unlocks before the ancestor holds
    /// drop: the reverse order would let an ancestor be claimed while this
    /// cell is still held.
    pub fn unlock_cell(&self, c: u32) {
        let cell = self.cell(c);
        debug_assert_eq!(cell.lock.load(Ordering::Relaxed), 1);
        cell.lock.store(0, Ordering::Release);
        let mut cur = cell.parent;
        while cur != NONE {
            let anc = self.cell(cur);
            anc.hold.fetch_sub(1, Ordering::AcqRel);
            cur = anc.parent;
        }
    }

    /// Lock both cells of a task (b == NONE or b == a means one cell). The
    /// fixed index order avoids wasted work when two walks collide.
    pub fn lock_task_cells(&self, a: u32, b: u32) -> bool {
        if b == NONE || b == a {
            return self.lock_cell(a);
        }
        let (x, y) = (a.min(b), a.max(b));
        if !self.lock_cell(x) {
            return false;
        }
        if !self.lock_cell(y) {
            self.unlock_cell(x);
            return false;
        }
        true
    }

    pub fn unlock_task_cells(&self, a: u32, b: u32) {
        if b == NONE || b == a {
            self.unlock_cell(a);
        } else {
            self.unlock_cell(a);
            self.unlock_cell(b);
        }
    }

    /// Build (or reuse) the 13 sorted projection lists of one cell. Leaves
    /// sort their range; internal cells merge their children's lists, which
    /// must already be built (sort tasks are ordered so they are).
    ///
    /// # Safety
    /// Caller must guarantee exclusive access to this cell's SortData and
    /// that no one mutates the child lists or particle positions meanwhile.
    pub unsafe fn build_cell_sort(&self, c: u32, store: &ParticleStore) {
        let cell = self.cell(c);
        let sd = &mut *cell.sort.get();
        if sd.built() {
            return;
        }
        let mut lists: Vec<Vec<SortEntry>> = Vec::with_capacity(N_DIRS);
        match cell.children {
            None => {
                let (lo, hi) = cell.range();
                let ps = store.slice(lo, hi);
                for dir in self.dirs.iter() {
                    let mut v: Vec<SortEntry> = ps
                        .iter()
                        .enumerate()
                        .map(|(k, p)| SortEntry {
                            proj: dot(p.x, *dir),
                            idx: cell.first + k as u32,
                        })
                        .collect();
                    v.sort_unstable_by(|a, b| a.proj.total_cmp(&b.proj));
                    lists.push(v);
                }
            }
            Some(ch) => {
                for d in 0..N_DIRS {
                    let mut acc: Vec<SortEntry> = Vec::new();
                    for &k in ch.iter() {
                        if self.cells[k as usize].count == 0 {
                            continue;
                        }
                        let child = &*self.cells[k as usize].sort.get();
                        debug_assert!(child.built(), "child sort list missing");
                        acc = merge_sorted(&acc, &child.lists[d]);
                    }
                    lists.push(acc);
                }
            }
        }
        sd.lists = lists;
    }

    /// Whether a cell's sort lists are already valid (cache hit).
    pub fn sort_built(&self, c: u32) -> bool {
        unsafe { (*self.cell(c).sort.get()).built() }
    }

    /// Whether two cell boxes touch when b is shifted by `shift`.
    pub(crate) fn touching(&self, a: u32, b: u32, shift: V3) -> bool {
        boxes_touch(self.cell(a), self.cell(b), shift)
    }

    /// Canonical direction between two adjacent same-depth cells: the axis
    /// index and whether the pair must swap sides to match it.
    pub(crate) fn offset_dir(&self, a: u32, b: u32, shift: V3) -> (usize, bool) {
        canon_dir(offset_between(self.cell(a), self.cell(b), shift))
    }
}

fn merge_sorted(a: &[SortEntry], b: &[SortEntry]) -> Vec<SortEntry> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i].proj <= b[j].proj {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Split a cell into octants if it is crowded and nearly all smoothing
/// lengths fit below half its edge; recurse. Returns the subtree h_max.
fn split_cell(
    cells: &mut Vec<CellNode>,
    parts: &mut [Particle],
    c: u32,
    cfg: &RunConfig,
    scratch: &mut Vec<Particle>,
) -> f64 {
    let (first, count, lo, edge, depth, top) = {
        let cell = &cells[c as usize];
        (
            cell.first as usize,
            cell.count as usize,
            cell.lo,
            cell.edge,
            cell.depth,
            cell.top,
        )
    };
    let range = &parts[first..first + count];
    let h_here = range.iter().map(|p| p.h).fold(0.0, f64::max);

    let half = 0.5 * edge[0].min(edge[1]).min(edge[2]);
    let small = range.iter().filter(|p| p.h < half).count();
    let splittable = count > cfg.split_count
        && (small as f64) > cfg.split_fraction * count as f64
        && depth < 50;
    if !splittable {
        cells[c as usize].set_h_max(h_here);
        return h_here;
    }

    let center = [
        lo[0] + 0.5 * edge[0],
        lo[1] + 0.5 * edge[1],
        lo[2] + 0.5 * edge[2],
    ];
    let oct = |p: &Particle| -> usize {
        let mut k = 0;
        for a in 0..3 {
            k = k * 2 + usize::from(p.x[a] >= center[a]);
        }
        k
    };

    // Stable 8-bucket counting sort of the range through a scratch copy.
    scratch.clear();
    scratch.extend_from_slice(&parts[first..first + count]);
    let mut bcount = [0usize; 8];
    for p in scratch.iter() {
        bcount[oct(p)] += 1;
    }
    let mut bstart = [0usize; 8];
    let mut acc = 0usize;
    for k in 0..8 {
        bstart[k] = acc;
        acc += bcount[k];
    }
    {
        let mut cursor = bstart;
        for p in scratch.iter() {
            let k = oct(p);
            parts[first + cursor[k]] = *p;
            cursor[k] += 1;
        }
    }

    let child_edge = [0.5 * edge[0], 0.5 * edge[1], 0.5 * edge[2]];
    let base = cells.len() as u32;
    let mut ids = [0u32; 8];
    for k in 0..8 {
        let kb = [(k >> 2) & 1, (k >> 1) & 1, k & 1];
        ids[k] = base + k as u32;
        cells.push(CellNode {
            lo: [
                lo[0] + kb[0] as f64 * child_edge[0],
                lo[1] + kb[1] as f64 * child_edge[1],
                lo[2] + kb[2] as f64 * child_edge[2],
            ],
            edge: child_edge,
            first: (first + bstart[k]) as u32,
            count: bcount[k] as u32,
            parent: c,
            children: None,
            depth: depth + 1,
            top,
            h_max: AtomicU64::new(0),
            lock: AtomicU32::new(0),
            hold: AtomicU32::new(0),
            sort: SharedSlot::new(SortData::default()),
        });
    }
    cells[c as usize].children = Some(ids);

    let mut h_max = 0.0f64;
    for k in 0..8 {
        if bcount[k] > 0 {
            h_max = h_max.max(split_cell(cells, parts, ids[k], cfg, scratch));
        }
    }
    cells[c as usize].set_h_max(h_max);
    h_max
}

struct EntryBuilder<'a> {
    cells: &'a [CellNode],
    cfg: &'a RunConfig,
    selfs: Vec<u32>,
    pairs: Vec<PairEntry>,
    min_pair_edge: f64,
}

impl EntryBuilder<'_> {
    fn self_rec(&mut self, c: u32) {
        let cell = &self.cells[c as usize];
        if cell.count < 2 {
            return;
        }
        if let Some(ch) = cell.children {
            if cell.count as usize >= self.cfg.group_count {
                for &k in ch.iter() {
                    self.self_rec(k);
                }
                for i in 0..8 {
                    for j in (i + 1)..8 {
                        self.pair_rec(ch[i], ch[j], [0.0; 3]);
                    }
                }
                return;
            }
        }
        self.selfs.push(c);
    }

    fn pair_rec(&mut self, a: u32, b: u32, shift: V3) {
        let ca = &self.cells[a as usize];
        let cb = &self.cells[b as usize];
        if ca.count == 0 || cb.count == 0 {
            return;
        }
        // Refine only while every smoothing length fits below half the cell
        // edge: then nothing reaches past a touching child, so the touching
        // child pairs cover the interaction exactly.
        let half = 0.5 * ca.min_edge().min(cb.min_edge());
        let refinable = ca.is_split()
            && cb.is_split()
            && ca.h_max() < half
            && cb.h_max() < half
            && (ca.count + cb.count) as usize >= self.cfg.group_count;
        if refinable {
            let (cha, chb) = (ca.children.unwrap(), cb.children.unwrap());
            for &sa in cha.iter() {
                for &sb in chb.iter() {
                    if boxes_touch(&self.cells[sa as usize], &self.cells[sb as usize], shift) {
                        self.pair_rec(sa, sb, shift);
                    }
                }
            }
            return;
        }

        let o = offset_between(ca, cb, shift);
        let (dir, flip) = canon_dir(o);
        let cls = (o[0] * o[0] + o[1] * o[1] + o[2] * o[2]) as u8;
        self.min_pair_edge = self.min_pair_edge.min(ca.min_edge()).min(cb.min_edge());
        if flip {
            self.pairs.push(PairEntry {
                a: b,
                b: a,
                dir: dir as u8,
                cls,
                shift: [-shift[0], -shift[1], -shift[2]],
            });
        } else {
            self.pairs.push(PairEntry {
                a,
                b,
                dir: dir as u8,
                cls,
                shift,
            });
        }
    }
}

fn boxes_touch(ca: &CellNode, cb: &CellNode, shift: V3) -> bool {
    (0..3).all(|k| {
        let lo_b = cb.lo[k] + shift[k];
        let eps = 1e-9 * ca.edge[k];
        lo_b <= ca.lo[k] + ca.edge[k] + eps && ca.lo[k] <= lo_b + cb.edge[k] + eps
    })
}

/// Grid offset from a to b (same-depth cells), in units of the cell edge.
fn offset_between(ca: &CellNode, cb: &CellNode, shift: V3) -> [i32; 3] {
    let mut o = [0i32; 3];
    for k in 0..3 {
        o[k] = ((cb.lo[k] + shift[k] - ca.lo[k]) / ca.edge[k]).round() as i32;
        debug_assert!(o[k].abs() <= 1, "pair cells are not adjacent");
    }
    o
}
