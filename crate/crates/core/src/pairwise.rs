//! Execution bodies for self and pair interaction entries.
//!
//! A pair entry walks down the hierarchy while every smoothing length (plus a
//! drift margin) fits below half the cell edge, then runs two sorted sweeps
//! over the cached projection lists: pass one scans forward and handles every
//! pair within the i-side particle's reach, pass two scans backward and picks
//! up the pairs only the j-side particle can see. Self entries recurse into
//! children, pruning sibling pairs by box distance, and run a direct double
//! loop at the leaves. Brute-force references for the same quantities live at
//! the bottom; tests hold the fast paths to them.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::kernel::{accumulate_density, DensitySummary};
use crate::physics::{interact_force_pair, Particle};
use crate::space::{PairEntry, ParticleStore, Tree};
use crate::util::{dot, V3};

#[derive(Default, Debug)]
pub struct Counters {
    /// Candidate pairs whose distance was actually computed.
    pub dist_evals: AtomicU64,
    /// Coincident distinct particles skipped (diagnostic, not an error).
    pub degenerate: AtomicU64,
}

#[derive(Clone, Copy)]
pub struct SweepParams<'a> {
    /// Twice the maximum drift since the tree was built: cached projections
    /// and cell boxes are stale by at most this much per pair.
    pub margin: f64,
    pub alpha: f64,
    pub counters: &'a Counters,
}

#[inline]
unsafe fn pos_h(store: &ParticleStore, i: usize) -> (V3, f64) {
    let p = &*store.ptr(i);
    (p.x, p.h)
}

/// Density gather for one in-range pair; each side accumulates only when the
/// pair lies within its own reach and it is flagged for (re)computation.
#[inline]
unsafe fn apply_density(store: &ParticleStore, counters: &Counters, gi: usize, gj: usize, dx: V3, rij: f64) {
    if rij <= 0.0 {
        counters.degenerate.fetch_add(1, Ordering::Relaxed);
        return;
    }
    let pi = &mut *store.ptr(gi);
    let pj = &mut *store.ptr(gj);
    let dv = [pi.v[0] - pj.v[0], pi.v[1] - pj.v[1], pi.v[2] - pj.v[2]];
    if rij < pi.h && pi.needs_redo() {
        accumulate_density(&mut pi.dens, pj.m, pi.h, rij, dx, dv);
    }
    if rij < pj.h && pj.needs_redo() {
        accumulate_density(
            &mut pj.dens,
            pi.m,
            pj.h,
            rij,
            [-dx[0], -dx[1], -dx[2]],
            [-dv[0], -dv[1], -dv[2]],
        );
    }
}

#[inline]
unsafe fn apply_force(store: &ParticleStore, counters: &Counters, alpha: f64, gi: usize, gj: usize, dx: V3, rij: f64) {
    let pi = &mut *store.ptr(gi);
    let pj = &mut *store.ptr(gj);
    let apply_i = pi.is_active();
    let apply_j = pj.is_active();
    if !interact_force_pair(pi, pj, dx, rij, alpha, apply_i, apply_j) {
        counters.degenerate.fetch_add(1, Ordering::Relaxed);
    }
}

/// Run the density gather for a self entry.
///
/// # Safety
/// Caller must hold the cell's subtree lock (or otherwise guarantee
/// exclusive access to its particle range).
pub unsafe fn self_density(tree: &Tree, store: &ParticleStore, c: u32, prm: &SweepParams) {
    walk_self(tree, store, c, prm.margin, prm.counters, &mut |gi, gj, dx, rij| {
        apply_density(store, prm.counters, gi, gj, dx, rij)
    });
}

/// Run the force computation for a self entry. Safety as for self_density.
pub unsafe fn self_force(tree: &Tree, store: &ParticleStore, c: u32, prm: &SweepParams) {
    walk_self(tree, store, c, prm.margin, prm.counters, &mut |gi, gj, dx, rij| {
        apply_force(store, prm.counters, prm.alpha, gi, gj, dx, rij)
    });
}

/// Run the density gather for a pair entry.
///
/// # Safety
/// Caller must hold both subtree locks and have built the sort lists of both
/// cells (and their descendants).
pub unsafe fn pair_density(tree: &Tree, store: &ParticleStore, e: &PairEntry, prm: &SweepParams) {
    walk_pair(
        tree,
        store,
        e.a,
        e.b,
        e.dir as usize,
        e.shift,
        prm.margin,
        prm.counters,
        &mut |gi, gj, dx, rij| apply_density(store, prm.counters, gi, gj, dx, rij),
    );
}

/// Run the force computation for a pair entry. Safety as for pair_density.
pub unsafe fn pair_force(tree: &Tree, store: &ParticleStore, e: &PairEntry, prm: &SweepParams) {
    walk_pair(
        tree,
        store,
        e.a,
        e.b,
        e.dir as usize,
        e.shift,
        prm.margin,
        prm.counters,
        &mut |gi, gj, dx, rij| apply_force(store, prm.counters, prm.alpha, gi, gj, dx, rij),
    );
}

/// Visit every unordered in-cell pair with rij < max(h_i, h_j) exactly once.
unsafe fn walk_self(
    tree: &Tree,
    store: &ParticleStore,
    c: u32,
    margin: f64,
    counters: &Counters,
    visit: &mut dyn FnMut(usize, usize, V3, f64),
) {
    let cell = tree.cell(c);
    if cell.count < 2 {
        return;
    }
    match cell.children {
        Some(ch) => {
            for &k in ch.iter() {
                walk_self(tree, store, k, margin, counters, visit);
            }
            for i in 0..8 {
                for j in (i + 1)..8 {
                    walk_pair_naive(tree, store, ch[i], ch[j], [0.0; 3], margin, counters, visit);
                }
            }
        }
        None => {
            let (lo, hi) = cell.range();
            let mut evals = 0u64;
            for i in lo..hi {
                let (xi, h_i) = pos_h(store, i);
                for j in (i + 1)..hi {
                    let (xj, h_j) = pos_h(store, j);
                    let dx = [xi[0] - xj[0], xi[1] - xj[1], xi[2] - xj[2]];
                    let rij = dot(dx, dx).sqrt();
                    evals += 1;
                    if rij < h_i.max(h_j) {
                        visit(i, j, dx, rij);
                    }
                }
            }
            counters.dist_evals.fetch_add(evals, Ordering::Relaxed);
        }
    }
}

/// Dual-tree walk between disjoint sibling subtrees (no sort lists), pruning
/// by the Euclidean gap between the recorded boxes padded with the margin.
unsafe fn walk_pair_naive(
    tree: &Tree,
    store: &ParticleStore,
    a: u32,
    b: u32,
    shift: V3,
    margin: f64,
    counters: &Counters,
    visit: &mut dyn FnMut(usize, usize, V3, f64),
) {
    let ca = tree.cell(a);
    let cb = tree.cell(b);
    if ca.count == 0 || cb.count == 0 {
        return;
    }
    let reach = ca.h_max().max(cb.h_max()) + margin;
    if tree.box_gap(a, b, shift) >= reach {
        return;
    }
    match (ca.children, cb.children) {
        (Some(cha), Some(chb)) => {
            for &sa in cha.iter() {
                for &sb in chb.iter() {
                    walk_pair_naive(tree, store, sa, sb, shift, margin, counters, visit);
                }
            }
        }
        (Some(cha), None) => {
            for &sa in cha.iter() {
                walk_pair_naive(tree, store, sa, b, shift, margin, counters, visit);
            }
        }
        (None, Some(chb)) => {
            for &sb in chb.iter() {
                walk_pair_naive(tree, store, a, sb, shift, margin, counters, visit);
            }
        }
        (None, None) => {
            let (alo, ahi) = ca.range();
            let (blo, bhi) = cb.range();
            let mut evals = 0u64;
            for i in alo..ahi {
                let (xi, h_i) = pos_h(store, i);
                for j in blo..bhi {
                    let (xj0, h_j) = pos_h(store, j);
                    let dx = [
                        xi[0] - (xj0[0] + shift[0]),
                        xi[1] - (xj0[1] + shift[1]),
                        xi[2] - (xj0[2] + shift[2]),
                    ];
                    let rij = dot(dx, dx).sqrt();
                    evals += 1;
                    if rij < h_i.max(h_j) {
                        visit(i, j, dx, rij);
                    }
                }
            }
            counters.dist_evals.fetch_add(evals, Ordering::Relaxed);
        }
    }
}

/// Visit every unordered cross pair (i in a, j in b shifted) with
/// rij < max(h_i, h_j) exactly once. Descends while reach plus margin fits
/// below half the cell edge (touching children then cover everything),
/// otherwise runs the two sorted sweeps over the merged subtree lists.
unsafe fn walk_pair(
    tree: &Tree,
    store: &ParticleStore,
    a: u32,
    b: u32,
    dir: usize,
    shift: V3,
    margin: f64,
    counters: &Counters,
    visit: &mut dyn FnMut(usize, usize, V3, f64),
) {
    let ca = tree.cell(a);
    let cb = tree.cell(b);
    if ca.count == 0 || cb.count == 0 {
        return;
    }
    let min_child_edge = 0.5 * ca.min_edge().min(cb.min_edge());
    if ca.is_split()
        && cb.is_split()
        && ca.h_max() + margin < min_child_edge
        && cb.h_max() + margin < min_child_edge
    {
        let cha = ca.children.unwrap();
        let chb = cb.children.unwrap();
        for &sa in cha.iter() {
            for &sb in chb.iter() {
                if tree.cell(sa).count == 0 || tree.cell(sb).count == 0 {
                    continue;
                }
                if !tree.touching(sa, sb, shift) {
                    continue;
                }
                let (d, flip) = tree.offset_dir(sa, sb, shift);
                if flip {
                    // Swap sides to the canonical orientation for the sweep,
                    // but swap back in the callback so callers always see
                    // dx = x_first - (x_second + original shift).
                    walk_pair(
                        tree,
                        store,
                        sb,
                        sa,
                        d,
                        [-shift[0], -shift[1], -shift[2]],
                        margin,
                        counters,
                        &mut |gi, gj, dx: V3, rij| {
                            visit(gj, gi, [-dx[0], -dx[1], -dx[2]], rij)
                        },
                    );
                } else {
                    walk_pair(tree, store, sa, sb, d, shift, margin, counters, visit);
                }
            }
        }
        return;
    }
    sweep_pair(tree, store, a, b, dir, shift, margin, counters, visit);
}

/// Two-pass sorted sweep over one cell pair using the cached lists.
unsafe fn sweep_pair(
    tree: &Tree,
    store: &ParticleStore,
    a: u32,
    b: u32,
    dir: usize,
    shift: V3,
    margin: f64,
    counters: &Counters,
    visit: &mut dyn FnMut(usize, usize, V3, f64),
) {
    let sa = &*tree.cell(a).sort.get();
    let sb = &*tree.cell(b).sort.get();
    debug_assert!(sa.built() && sb.built(), "sweep before sort lists built");
    let la = &sa.lists[dir];
    let lb = &sb.lists[dir];
    let su = dot(shift, tree.dirs[dir]);
    let mut evals = 0u64;

    // Pass 1: ascending over the j side for each i; i's reach bounds the
    // window. Handles every pair within h_i.
    for ei in la.iter() {
        let gi = ei.idx as usize;
        let (xi, h_i) = pos_h(store, gi);
        let reach = ei.proj + h_i + margin;
        for ej in lb.iter() {
            if ej.proj + su > reach {
                break;
            }
            let gj = ej.idx as usize;
            if gi == gj {
                continue; // own periodic image, never in range
            }
            let xj = (*store.ptr(gj)).x;
            let dx = [
                xi[0] - (xj[0] + shift[0]),
                xi[1] - (xj[1] + shift[1]),
                xi[2] - (xj[2] + shift[2]),
            ];
            let rij = dot(dx, dx).sqrt();
            evals += 1;
            if rij < h_i {
                visit(gi, gj, dx, rij);
            }
        }
    }

    // Pass 2: descending over the i side for each j; picks up pairs seen
    // only from the j side (h_i <= rij < h_j).
    for ej in lb.iter() {
        let gj = ej.idx as usize;
        let (xj0, h_j) = pos_h(store, gj);
        let xj = [xj0[0] + shift[0], xj0[1] + shift[1], xj0[2] + shift[2]];
        let floor = ej.proj + su - h_j - margin;
        for ei in la.iter().rev() {
            if ei.proj < floor {
                break;
            }
            let gi = ei.idx as usize;
            if gi == gj {
                continue;
            }
            let (xi, h_i) = pos_h(store, gi);
            let dx = [xi[0] - xj[0], xi[1] - xj[1], xi[2] - xj[2]];
            let rij = dot(dx, dx).sqrt();
            evals += 1;
            if rij < h_j && rij >= h_i {
                visit(gi, gj, dx, rij);
            }
        }
    }
    counters.dist_evals.fetch_add(evals, Ordering::Relaxed);
}

/// Periodic image key for a physical shift, in box units.
fn image_key(shift: V3, box_size: V3) -> [i8; 3] {
    let mut k = [0i8; 3];
    for a in 0..3 {
        k[a] = (shift[a] / box_size[a]).round() as i8;
    }
    k
}

/// Enumerate every interaction the entry tables produce, as canonical
/// (low index, high index, image) keys. Builds any missing sort lists.
/// Single-threaded test/diagnostic helper; requires no concurrent access.
pub fn collect_interactions(tree: &Tree, store: &ParticleStore, margin: f64) -> Vec<(u32, u32, [i8; 3])> {
    let counters = Counters::default();
    let mut out: Vec<(u32, u32, [i8; 3])> = Vec::new();
    unsafe {
        fn build_rec(tree: &Tree, store: &ParticleStore, c: u32) {
            if let Some(ch) = tree.cell(c).children {
                for &k in ch.iter() {
                    build_rec(tree, store, k);
                }
            }
            unsafe { tree.build_cell_sort(c, store) };
        }
        for r in 0..tree.n_top {
            build_rec(tree, store, r as u32);
        }
        for &c in tree.selfs.iter() {
            walk_self(tree, store, c, margin, &counters, &mut |gi, gj, _dx, _rij| {
                let (lo, hi) = (gi.min(gj) as u32, gi.max(gj) as u32);
                out.push((lo, hi, [0; 3]));
            });
        }
        for e in tree.pairs.iter() {
            let img = image_key(e.shift, tree.box_size);
            walk_pair(
                tree,
                store,
                e.a,
                e.b,
                e.dir as usize,
                e.shift,
                margin,
                &counters,
                &mut |gi, gj, _dx, _rij| {
                    // dx = x_i - (x_j + S): canonical key orders indices and
                    // re-signs the image so (i, j, S) == (j, i, -S).
                    if gi <= gj {
                        out.push((gi as u32, gj as u32, img));
                    } else {
                        out.push((gj as u32, gi as u32, [-img[0], -img[1], -img[2]]));
                    }
                },
            );
        }
    }
    out.sort_unstable();
    out
}

/// Brute-force enumeration of all in-range pairs over the 27 periodic
/// images, same key convention as collect_interactions. Assumes every h is
/// at most half the smallest box edge (as the tree also requires).
pub fn naive_interactions(parts: &[Particle], box_size: V3) -> Vec<(u32, u32, [i8; 3])> {
    let mut out = Vec::new();
    for i in 0..parts.len() {
        for j in i..parts.len() {
            for img in all_images() {
                if i == j && img == [0; 3] {
                    continue;
                }
                let mut dx = [0.0; 3];
                for a in 0..3 {
                    dx[a] = parts[i].x[a] - (parts[j].x[a] + img[a] as f64 * box_size[a]);
                }
                let rij = dot(dx, dx).sqrt();
                if rij < parts[i].h.max(parts[j].h) {
                    if i == j {
                        // A particle and its own image: count the +-S pair once.
                        if img > [0; 3] {
                            out.push((i as u32, j as u32, img));
                        }
                    } else {
                        out.push((i as u32, j as u32, img));
                    }
                }
            }
        }
    }
    out.sort_unstable();
    out
}

fn all_images() -> impl Iterator<Item = [i8; 3]> {
    (-1i8..=1).flat_map(move |x| (-1i8..=1).flat_map(move |y| (-1i8..=1).map(move |z| [x, y, z])))
}

/// Brute-force density for every particle (ignores activity flags): reseeds
/// the accumulators and gathers over all images.
pub fn naive_density(parts: &mut [Particle], box_size: V3) {
    for p in parts.iter_mut() {
        p.dens = DensitySummary::seeded(p.m, p.h);
    }
    for i in 0..parts.len() {
        for j in (i + 1)..parts.len() {
            for img in all_images() {
                let mut dx = [0.0; 3];
                for a in 0..3 {
                    dx[a] = parts[i].x[a] - (parts[j].x[a] + img[a] as f64 * box_size[a]);
                }
                let rij = dot(dx, dx).sqrt();
                if rij <= 0.0 {
                    continue;
                }
                let dv = [
                    parts[i].v[0] - parts[j].v[0],
                    parts[i].v[1] - parts[j].v[1],
                    parts[i].v[2] - parts[j].v[2],
                ];
                if rij < parts[i].h {
                    let (mj, hi) = (parts[j].m, parts[i].h);
                    accumulate_density(&mut parts[i].dens, mj, hi, rij, dx, dv);
                }
                if rij < parts[j].h {
                    let (mi, hj) = (parts[i].m, parts[j].h);
                    accumulate_density(
                        &mut parts[j].dens,
                        mi,
                        hj,
                        rij,
                        [-dx[0], -dx[1], -dx[2]],
                        [-dv[0], -dv[1], -dv[2]],
                    );
                }
            }
        }
    }
}

/// Brute-force forces for every particle (treats all as active): zeroes the
/// accumulators and applies the symmetric pair interaction over all images.
pub fn naive_force(parts: &mut [Particle], box_size: V3, alpha: f64) {
    for p in parts.iter_mut() {
        p.a = [0.0; 3];
        p.du_dt = 0.0;
        p.v_sig = 0.0;
    }
    for i in 0..parts.len() {
        for j in (i + 1)..parts.len() {
            for img in all_images() {
                let mut dx = [0.0; 3];
                for a in 0..3 {
                    dx[a] = parts[i].x[a] - (parts[j].x[a] + img[a] as f64 * box_size[a]);
                }
                let rij = dot(dx, dx).sqrt();
                if rij < parts[i].h.max(parts[j].h) {
                    let (lo, hi) = parts.split_at_mut(j);
                    interact_force_pair(&mut lo[i], &mut hi[0], dx, rij, alpha, true, true);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{
        balsara_factor, equation_of_state, omega_correction, RunConfig, FLAG_ACTIVE, FLAG_REDO,
    };
    use crate::util::norm;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_parts(n: usize, bx: V3, hlo: f64, hhi: f64, seed: u64) -> Vec<Particle> {
        let mut rng = StdRng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let x = [
                    rng.gen::<f64>() * bx[0],
                    rng.gen::<f64>() * bx[1],
                    rng.gen::<f64>() * bx[2],
                ];
                let v = [
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                ];
                let h = hlo + (hhi - hlo) * rng.gen::<f64>();
                let mut p = Particle::new(x, v, 0.5 + rng.gen::<f64>(), 0.5 + rng.gen::<f64>(), h, i as u64);
                p.flags = FLAG_ACTIVE | FLAG_REDO;
                p
            })
            .collect()
    }

    fn check_set_equality(mut parts: Vec<Particle>, bx: V3, split_count: usize, group_count: usize) {
        let cfg = RunConfig {
            box_size: bx,
            split_count,
            group_count,
            ..RunConfig::default()
        };
        let tree = Tree::build(&mut parts, &cfg);
        let naive = naive_interactions(&parts, bx);
        let store = ParticleStore::from_vec(parts);
        let fast = collect_interactions(&tree, &store, 0.0);
        assert_eq!(
            fast.len(),
            naive.len(),
            "interaction count mismatch (fast {} vs naive {})",
            fast.len(),
            naive.len()
        );
        assert_eq!(fast, naive, "interaction sets differ");
    }

    #[test]
    fn interaction_set_matches_naive_basic() {
        let parts = random_parts(400, [1.0; 3], 0.2, 0.34, 11);
        check_set_equality(parts, [1.0; 3], 300, 6000);
    }

    #[test]
    fn interaction_set_matches_naive_coarse_grid_images() {
        // Half-box smoothing lengths on the coarsest legal 2x2x2 grid:
        // nearly every interaction crosses a boundary, many via the wrap.
        let parts = random_parts(60, [1.0; 3], 0.4, 0.5, 12);
        check_set_equality(parts, [1.0; 3], 300, 6000);
    }

    #[test]
    fn interaction_set_matches_naive_thin_box() {
        let parts = random_parts(500, [2.0, 1.0, 1.0], 0.4, 0.48, 13);
        check_set_equality(parts, [2.0, 1.0, 1.0], 300, 6000);
    }

    #[test]
    fn interaction_set_matches_naive_deep_tree() {
        let mut parts = random_parts(1500, [1.0; 3], 0.05, 0.09, 14);
        parts[7].h = 0.35; // one fat particle forces mixed refinement depths
        for (split, group) in [(60, 1), (60, 100), (60, usize::MAX)] {
            check_set_equality(parts.clone(), [1.0; 3], split, group);
        }
    }

    #[test]
    fn interaction_set_matches_naive_clustered() {
        let mut rng = StdRng::seed_from_u64(15);
        let mut parts = Vec::new();
        for i in 0..1200usize {
            // Dense blob in one corner plus a sparse background.
            let x = if i % 3 == 0 {
                [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()]
            } else {
                [
                    0.2 * rng.gen::<f64>(),
                    0.2 * rng.gen::<f64>(),
                    0.2 * rng.gen::<f64>(),
                ]
            };
            let h = 0.03 + 0.1 * rng.gen::<f64>();
            let mut p = Particle::new(x, [0.0; 3], 1.0, 1.0, h, i as u64);
            p.flags = FLAG_ACTIVE | FLAG_REDO;
            parts.push(p);
        }
        check_set_equality(parts, [1.0; 3], 80, 200);
    }

    #[test]
    fn margin_absorbs_drift() {
        let mut parts = random_parts(900, [1.0; 3], 0.08, 0.13, 16);
        let cfg = RunConfig {
            box_size: [1.0; 3],
            split_count: 100,
            group_count: 50,
            ..RunConfig::default()
        };
        let tree = Tree::build(&mut parts, &cfg);
        let mut store = ParticleStore::from_vec(parts);
        // Build the lists against the current positions, then drift.
        let _ = collect_interactions(&tree, &store, 0.0);
        let drift = 0.01;
        let mut rng = StdRng::seed_from_u64(17);
        for p in store.as_mut_slice().iter_mut() {
            for a in 0..3 {
                p.x[a] += drift * (2.0 * rng.gen::<f64>() - 1.0);
            }
        }
        let drifted: Vec<Particle> = store.as_mut_slice().to_vec();
        let fast = collect_interactions(&tree, &store, 2.0 * drift);
        let naive = naive_interactions(&drifted, [1.0; 3]);
        assert_eq!(fast, naive, "stale lists with margin must still be exact");
    }

    #[test]
    fn density_matches_naive() {
        let mut parts = random_parts(700, [1.0; 3], 0.1, 0.2, 18);
        let cfg = RunConfig {
            box_size: [1.0; 3],
            split_count: 120,
            group_count: 60,
            ..RunConfig::default()
        };
        let tree = Tree::build(&mut parts, &cfg);
        let mut oracle = parts.clone();
        naive_density(&mut oracle, [1.0; 3]);

        for p in parts.iter_mut() {
            p.dens = DensitySummary::seeded(p.m, p.h);
        }
        let store = ParticleStore::from_vec(parts);
        let counters = Counters::default();
        let prm = SweepParams {
            margin: 0.0,
            alpha: 0.8,
            counters: &counters,
        };
        let _ = collect_interactions(&tree, &store, 0.0); // build sort lists
        unsafe {
            for &c in tree.selfs.iter() {
                self_density(&tree, &store, c, &prm);
            }
            for e in tree.pairs.iter() {
                pair_density(&tree, &store, e, &prm);
            }
        }
        let got = store.into_vec();
        for (g, o) in got.iter().zip(oracle.iter()) {
            assert_eq!(g.id, o.id);
            let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-300);
            assert!(rel(g.dens.rho, o.dens.rho) < 1e-12, "rho {} vs {}", g.dens.rho, o.dens.rho);
            assert!(rel(g.dens.wcount, o.dens.wcount) < 1e-12);
            assert!(rel(g.dens.drho_dh, o.dens.drho_dh) < 1e-11);
            assert!((g.dens.div_v - o.dens.div_v).abs() < 1e-10 * (1.0 + o.dens.div_v.abs()));
            for k in 0..3 {
                assert!((g.dens.curl_v[k] - o.dens.curl_v[k]).abs() < 1e-10 * (1.0 + o.dens.curl_v[k].abs()));
            }
        }
    }

    #[test]
    fn density_respects_redo_mask() {
        let mut parts = random_parts(300, [1.0; 3], 0.15, 0.25, 19);
        for (k, p) in parts.iter_mut().enumerate() {
            if k % 2 == 0 {
                p.flags = FLAG_ACTIVE; // not flagged for recomputation
            }
        }
        let cfg = RunConfig {
            box_size: [1.0; 3],
            ..RunConfig::default()
        };
        let tree = Tree::build(&mut parts, &cfg);
        let mut oracle = parts.clone();
        naive_density(&mut oracle, [1.0; 3]);
        for p in parts.iter_mut() {
            p.dens = DensitySummary::seeded(p.m, p.h);
        }
        let seeded: Vec<DensitySummary> = parts.iter().map(|p| p.dens).collect();
        let store = ParticleStore::from_vec(parts);
        let counters = Counters::default();
        let prm = SweepParams {
            margin: 0.0,
            alpha: 0.8,
            counters: &counters,
        };
        let _ = collect_interactions(&tree, &store, 0.0);
        unsafe {
            for &c in tree.selfs.iter() {
                self_density(&tree, &store, c, &prm);
            }
            for e in tree.pairs.iter() {
                pair_density(&tree, &store, e, &prm);
            }
        }
        let got = store.into_vec();
        for (k, (g, o)) in got.iter().zip(oracle.iter()).enumerate() {
            if g.needs_redo() {
                assert!((g.dens.rho - o.dens.rho).abs() < 1e-12 * o.dens.rho);
            } else {
                assert_eq!(g.dens, seeded[k], "masked particle was touched");
            }
        }
    }

    #[test]
    fn force_matches_naive() {
        let mut parts = random_parts(500, [1.0; 3], 0.12, 0.2, 20);
        let cfg = RunConfig {
            box_size: [1.0; 3],
            split_count: 100,
            group_count: 40,
            ..RunConfig::default()
        };
        let tree = Tree::build(&mut parts, &cfg);
        // Prepare thermodynamic state the way the ghost pass would.
        naive_density(&mut parts, [1.0; 3]);
        let gamma = 5.0 / 3.0;
        for p in parts.iter_mut() {
            let rho = p.dens.rho;
            p.omega = omega_correction(p.h, rho, p.dens.drho_dh);
            let (pr, c) = equation_of_state(rho, p.u, gamma).unwrap();
            p.p = pr;
            p.c = c;
            let curl = norm([
                p.dens.curl_v[0] / rho,
                p.dens.curl_v[1] / rho,
                p.dens.curl_v[2] / rho,
            ]);
            p.balsara = balsara_factor((p.dens.div_v / rho).abs(), curl, p.c, p.h);
        }
        let mut oracle = parts.clone();
        naive_force(&mut oracle, [1.0; 3], 0.8);

        for p in parts.iter_mut() {
            p.a = [0.0; 3];
            p.du_dt = 0.0;
            p.v_sig = 0.0;
        }
        let store = ParticleStore::from_vec(parts);
        let counters = Counters::default();
        let prm = SweepParams {
            margin: 0.0,
            alpha: 0.8,
            counters: &counters,
        };
        let _ = collect_interactions(&tree, &store, 0.0);
        unsafe {
            for &c in tree.selfs.iter() {
                self_force(&tree, &store, c, &prm);
            }
            for e in tree.pairs.iter() {
                pair_force(&tree, &store, e, &prm);
            }
        }
        let got = store.into_vec();
        for (g, o) in got.iter().zip(oracle.iter()) {
            let scale = norm(o.a).max(1e-12);
            for k in 0..3 {
                assert!(
                    (g.a[k] - o.a[k]).abs() < 1e-10 * scale,
                    "a mismatch: {:?} vs {:?}",
                    g.a,
                    o.a
                );
            }
            assert!((g.du_dt - o.du_dt).abs() < 1e-10 * o.du_dt.abs().max(1e-12));
            assert!((g.v_sig - o.v_sig).abs() < 1e-12 * o.v_sig.max(1e-12));
        }
    }

    #[test]
    fn coincident_particles_diagnosed() {
        let mut parts = random_parts(20, [1.0; 3], 0.3, 0.3, 21);
        parts[1].x = parts[0].x;
        let cfg = RunConfig {
            box_size: [1.0; 3],
            ..RunConfig::default()
        };
        let tree = Tree::build(&mut parts, &cfg);
        let store = ParticleStore::from_vec(parts);
        let counters = Counters::default();
        let prm = SweepParams {
            margin: 0.0,
            alpha: 0.8,
            counters: &counters,
        };
        let _ = collect_interactions(&tree, &store, 0.0);
        unsafe {
            for &c in tree.selfs.iter() {
                self_density(&tree, &store, c, &prm);
            }
            for e in tree.pairs.iter() {
                pair_density(&tree, &store, e, &prm);
            }
        }
        assert!(counters.degenerate.load(Ordering::SeqCst) >= 1);
        let got = store.into_vec();
        assert!(got.iter().all(|p| p.dens.rho.is_finite()));
    }
}
