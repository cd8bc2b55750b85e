//! Time integration driver.
//!
//! Owns the particle store, the cell tree, and the task graph, and advances
//! the state with a kick-drift-kick scheme under individual time-step bins.
//! Per step: mark active bins, first half-kick the actives and drift
//! everyone, iterate the density phase until the smoothing lengths
//! converge, then run the force phase whose integrator tasks apply the
//! second half-kick and reassign bins. Trees are rebuilt when accumulated
//! drift or smoothing-length growth invalidates the cached decomposition.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::time::Instant;

use crate::kernel::{update_smoothing_length, DensitySummary};
use crate::pairwise::{self, Counters, SweepParams};
use crate::physics::{
    assign_timestep_bin, balsara_factor, compute_timestep, drift, eos_unchecked, half_kick,
    omega_correction, Particle, RunConfig, FLAG_ACTIVE, FLAG_CONVERGED, FLAG_REDO,
};
use crate::scheduler::{run_phase, TimelineEvent};
use crate::space::{wrap_point, ParticleStore, Tree};
use crate::taskgraph::{Graph, Phase, TaskKind};
use crate::util::{dot, norm};

pub const MAX_DENSITY_ROUNDS: usize = 10;
/// Bins above this would overflow the shift arithmetic; a particle this far
/// above dt_base is effectively frozen anyway.
const MAX_BIN: u32 = 40;

#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    pub n_active: usize,
    pub density_rounds: usize,
    pub rebuilt: bool,
    /// Particles finalized at the round cap without neighbour convergence.
    pub forced_h: u64,
}

pub struct Engine {
    pub cfg: RunConfig,
    store: ParticleStore,
    pub tree: Tree,
    pub graph: Graph,
    pub t: f64,
    pub step_count: u64,
    /// Bin phase counter: bin k is active when bin_step % 2^k == 0. Reset
    /// on resync so all cycles restart together.
    bin_step: u64,
    pub dt_base: f64,
    /// Upper bound on any position change since the last tree build.
    max_drift: f64,
    u_min: f64,
    pub counters: Counters,
    forced_h: AtomicU64,
    pub n_rebuilds: u64,
    pub record_timeline: bool,
    pub timeline: Vec<TimelineEvent>,
    epoch: Instant,
}

impl Engine {
    pub fn new(mut parts: Vec<Particle>, cfg: RunConfig) -> Result<Engine, String> {
        cfg.validate()?;
        if parts.is_empty() {
            return Err("no particles".into());
        }
        let mut u_sum = 0.0;
        for p in &parts {
            if !(p.m > 0.0 && p.u > 0.0 && p.h > 0.0)
                || !p.x.iter().all(|v| v.is_finite())
                || !p.v.iter().all(|v| v.is_finite())
            {
                return Err(format!("invalid particle id={}: m={} u={} h={}", p.id, p.m, p.u, p.h));
            }
            if (0..3).any(|a| 2.0 * p.h > cfg.box_size[a]) {
                return Err(format!(
                    "particle id={} has h={} above half the smallest box edge; \
                     the box is too small (or too sparsely sampled) for minimum-image pairing",
                    p.id, p.h
                ));
            }
            u_sum += p.u;
        }
        let u_min = cfg.u_min_frac * u_sum / parts.len() as f64;
        for p in &mut parts {
            wrap_point(&mut p.x, cfg.box_size);
        }
        let tree = Tree::build(&mut parts, &cfg);
        let graph = Graph::build(&tree);
        let mut eng = Engine {
            cfg,
            store: ParticleStore::from_vec(parts),
            tree,
            graph,
            t: 0.0,
            step_count: 0,
            bin_step: 0,
            dt_base: 0.0,
            max_drift: 0.0,
            u_min,
            counters: Counters::default(),
            forced_h: AtomicU64::new(0),
            n_rebuilds: 0,
            record_timeline: false,
            timeline: Vec::new(),
            epoch: Instant::now(),
        };
        eng.bootstrap()?;
        Ok(eng)
    }

    /// Read-only view. Mutation happens only inside step()/bootstrap(),
    /// which take &mut self, so no aliasing can be live here.
    pub fn particles(&self) -> &[Particle] {
        unsafe { self.store.slice(0, self.store.len()) }
    }

    pub fn particles_mut(&mut self) -> &mut [Particle] {
        self.store.as_mut_slice()
    }

    pub fn total_energy(&self) -> f64 {
        self.particles()
            .iter()
            .map(|p| p.m * (p.u + 0.5 * dot(p.v, p.v)))
            .sum()
    }

    pub fn total_momentum(&self) -> [f64; 3] {
        let mut s = [0.0; 3];
        for p in self.particles() {
            for a in 0..3 {
                s[a] += p.m * p.v[a];
            }
        }
        s
    }

    /// Initial state: converge densities, compute forces and time-steps,
    /// set dt_base and bins. No kicks; the first step opens the leapfrog.
    fn bootstrap(&mut self) -> Result<(), String> {
        for p in self.store.as_mut_slice() {
            p.flags = FLAG_ACTIVE | FLAG_REDO;
            p.dens = DensitySummary::seeded(p.m, p.h);
            p.a = [0.0; 3];
            p.du_dt = 0.0;
            p.v_sig = 0.0;
        }
        self.density_loop();
        self.refresh_liveness(|p| p.is_active());
        self.force_phase(true);

        let dt_min = self
            .particles()
            .iter()
            .map(|p| p.dt)
            .fold(f64::INFINITY, f64::min);
        if !(dt_min > 0.0 && dt_min.is_finite()) {
            return Err(format!("bootstrap produced unusable time-step {dt_min}"));
        }
        if self.cfg.dt_fixed {
            self.dt_base = self.cfg.dt_fixed_frac * dt_min;
            for p in self.store.as_mut_slice() {
                p.dt_bin = 0;
            }
        } else {
            // Half the minimum leaves headroom: a particle sitting exactly
            // at dt_base would trigger a resync on any downward jitter.
            self.dt_base = if self.cfg.dt_base > 0.0 {
                self.cfg.dt_base.min(dt_min)
            } else {
                0.5 * dt_min
            };
            self.assign_all_bins();
        }
        Ok(())
    }

    fn assign_all_bins(&mut self) {
        let dt_base = self.dt_base;
        for p in self.store.as_mut_slice() {
            let dt_eff = p.dt.min(dt_base * (1u64 << MAX_BIN) as f64);
            p.dt_bin = assign_timestep_bin(dt_eff, dt_base)
                .expect("dt_base was set at or below the smallest dt")
                .min(MAX_BIN);
        }
    }

    /// One full step at the current dt_base. Time advances by dt_base.
    /// Bin phase counter driving per-step activity: bin k is active when
    /// bin_phase() % 2^k == 0 at the start of the step.
    pub fn bin_phase(&self) -> u64 {
        self.bin_step
    }

    pub fn step(&mut self) -> StepStats {
        let mut stats = StepStats::default();
        let dt_used = self.dt_base;
        stats.rebuilt |= self.maybe_rebuild();

        // Kick actives with their own half-step, drift everyone by dt_base.
        let fixed = self.cfg.dt_fixed;
        let bin_step = self.bin_step;
        let u_min = self.u_min;
        let mut v2_max = 0.0f64;
        for p in self.store.as_mut_slice() {
            let active = fixed || bin_step % (1u64 << p.dt_bin) == 0;
            p.flags = 0;
            if active {
                stats.n_active += 1;
                let dt_half = 0.5 * (1u64 << p.dt_bin) as f64 * dt_used;
                half_kick(p, dt_half, u_min);
                p.flags = FLAG_ACTIVE | FLAG_REDO;
                p.a = [0.0; 3];
                p.du_dt = 0.0;
                p.v_sig = 0.0;
                p.dens = DensitySummary::seeded(p.m, p.h);
            }
            drift(p, dt_used);
            v2_max = v2_max.max(dot(p.v, p.v));
        }
        self.max_drift += v2_max.sqrt() * dt_used;

        let (rounds, rebuilt) = self.density_loop();
        stats.density_rounds = rounds;
        stats.rebuilt |= rebuilt;
        stats.forced_h = self.forced_h.swap(0, Ordering::Relaxed);

        self.refresh_liveness(|p| p.is_active());
        let underflow = self.force_phase(false);

        self.t += dt_used;
        self.step_count += 1;
        if fixed {
            let dt_min = self
                .particles()
                .iter()
                .map(|p| p.dt)
                .fold(f64::INFINITY, f64::min);
            self.dt_base = self.cfg.dt_fixed_frac * dt_min;
        } else if underflow {
            // A particle needs a shorter step than dt_base allows: shrink
            // the base and restart every bin cycle together.
            let dt_min = self
                .particles()
                .iter()
                .map(|p| p.dt)
                .fold(f64::INFINITY, f64::min);
            self.dt_base = 0.5 * dt_min;
            self.assign_all_bins();
            self.bin_step = 0;
        } else {
            self.bin_step += 1;
        }
        stats
    }

    /// Run steps until t_end; prints one progress line per step to stderr.
    pub fn run(&mut self) -> Result<(), String> {
        self.run_with(|_| {})
    }

    /// Like run(), invoking the callback after every completed step.
    pub fn run_with<F: FnMut(&Engine)>(&mut self, mut on_step: F) -> Result<(), String> {
        let t_end = self.cfg.t_end;
        while self.t < t_end {
            if self.cfg.dt_fixed {
                self.dt_base = self.dt_base.min(t_end - self.t);
            }
            if !(self.dt_base > t_end * 1e-14) {
                return Err(format!("time-step collapsed to {} at t={}", self.dt_base, self.t));
            }
            let dt = self.dt_base;
            let stats = self.step();
            eprintln!(
                "step {} t={:.6e} dt={:.3e} active={} rounds={} forced_h={}{}",
                self.step_count,
                self.t,
                dt,
                stats.n_active,
                stats.density_rounds,
                stats.forced_h,
                if stats.rebuilt { " rebuild" } else { "" },
            );
            on_step(self);
        }
        Ok(())
    }

    /// Density phase with smoothing-length iteration. Returns (rounds,
    /// rebuilt). On the final round unconverged particles are finalized at
    /// their current h (counted in forced_h) so the step can proceed.
    fn density_loop(&mut self) -> (usize, bool) {
        let mut rebuilt = false;
        self.refresh_liveness(|p| p.needs_redo());
        for round in 0..MAX_DENSITY_ROUNDS {
            let last = round == MAX_DENSITY_ROUNDS - 1;
            self.run_density_round(last);
            let n_redo = self
                .particles()
                .iter()
                .filter(|p| p.needs_redo())
                .count();
            if n_redo == 0 {
                return (round + 1, rebuilt);
            }
            if self.maybe_rebuild() {
                rebuilt = true;
                // The fresh tree has no sort lists. The next round must
                // cover every cell later phases touch, not just the redo
                // closure; accumulation stays gated on the redo flag.
                self.refresh_liveness(|p| p.is_active());
            } else {
                self.refresh_liveness(|p| p.needs_redo());
            }
        }
        (MAX_DENSITY_ROUNDS, rebuilt)
    }

    fn run_density_round(&mut self, last_round: bool) {
        let prm = SweepParams {
            margin: 2.0 * self.max_drift,
            alpha: self.cfg.alpha,
            counters: &self.counters,
        };
        let tree = &self.tree;
        let store = &self.store;
        let graph = &self.graph;
        let gamma = self.cfg.gamma;
        let target = self.cfg.n_ngb_target;
        let tol = self.cfg.n_ngb_tol;
        let forced = &self.forced_h;
        let exec = |t: u32| {
            let task = graph.tasks[t as usize];
            match task.kind {
                TaskKind::Sort => unsafe { tree.build_cell_sort(task.a, store) },
                TaskKind::DensitySelf => unsafe { pairwise::self_density(tree, store, task.a, &prm) },
                TaskKind::DensityPair => unsafe {
                    pairwise::pair_density(tree, store, &tree.pairs[task.entry as usize], &prm)
                },
                TaskKind::Ghost => ghost_task(
                    tree, store, task.a, gamma, target, tol, last_round, forced,
                ),
                k => unreachable!("density phase scheduled {k:?}"),
            }
        };
        let tl = run_phase(
            graph,
            tree,
            Phase::Density,
            self.cfg.n_threads,
            self.step_count,
            self.epoch,
            self.record_timeline,
            &exec,
        );
        self.timeline.extend(tl);
    }

    fn force_phase(&mut self, bootstrap: bool) -> bool {
        let underflow = AtomicBool::new(false);
        {
            let prm = SweepParams {
                margin: 2.0 * self.max_drift,
                alpha: self.cfg.alpha,
                counters: &self.counters,
            };
            let tree = &self.tree;
            let store = &self.store;
            let graph = &self.graph;
            let dt_base = self.dt_base;
            let u_min = self.u_min;
            let cfl = self.cfg.cfl;
            let fixed = self.cfg.dt_fixed;
            let underflow = &underflow;
            let exec = |t: u32| {
                let task = graph.tasks[t as usize];
                match task.kind {
                    TaskKind::ForceSelf => unsafe { pairwise::self_force(tree, store, task.a, &prm) },
                    TaskKind::ForcePair => unsafe {
                        pairwise::pair_force(tree, store, &tree.pairs[task.entry as usize], &prm)
                    },
                    TaskKind::Integrator => integrator_task(
                        tree, store, task.a, dt_base, u_min, cfl, fixed, bootstrap, underflow,
                    ),
                    k => unreachable!("force phase scheduled {k:?}"),
                }
            };
            let tl = run_phase(
                graph,
                tree,
                Phase::Force,
                self.cfg.n_threads,
                self.step_count,
                self.epoch,
                self.record_timeline,
                &exec,
            );
            self.timeline.extend(tl);
        }
        underflow.load(Ordering::Relaxed)
    }

    fn refresh_liveness(&mut self, pred: impl Fn(&Particle) -> bool) {
        let n = self.tree.cells.len();
        let mut act = vec![false; n];
        // Children follow their parent in the cell vector, so a reverse
        // sweep sees children before parents.
        for c in (0..n).rev() {
            let cell = self.tree.cell(c as u32);
            if cell.count == 0 {
                continue;
            }
            act[c] = match cell.children {
                Some(ch) => ch.iter().any(|&k| act[k as usize]),
                None => {
                    let (lo, hi) = cell.range();
                    unsafe { self.store.slice(lo, hi) }.iter().any(&pred)
                }
            };
        }
        self.graph.compute_liveness(&act);
    }

    /// Rebuild when drift ate the skin or reach threatens the pair table's
    /// coverage. Ghosts refresh the h_max caches every round, so the slack
    /// check also catches smoothing lengths growing mid-iteration.
    fn maybe_rebuild(&mut self) -> bool {
        let drifted = self.max_drift > self.cfg.rebuild_skin * self.tree.min_leaf_edge;
        let reach = 2.0 * self.max_drift > self.tree.reach_slack();
        if !(drifted || reach) {
            return false;
        }
        let store = std::mem::replace(&mut self.store, ParticleStore::from_vec(Vec::new()));
        let mut parts = store.into_vec();
        for p in &mut parts {
            wrap_point(&mut p.x, self.cfg.box_size);
        }
        self.tree = Tree::build(&mut parts, &self.cfg);
        self.store = ParticleStore::from_vec(parts);
        self.graph = Graph::build(&self.tree);
        self.max_drift = 0.0;
        self.n_rebuilds += 1;
        true
    }
}

/// Leaf ghosts finalize the density pass for their particles; internal
/// ghosts refresh h_max from their children (already finalized: the graph
/// orders child ghosts first).
#[allow(clippy::too_many_arguments)]
fn ghost_task(
    tree: &Tree,
    store: &ParticleStore,
    c: u32,
    gamma: f64,
    target: f64,
    tol: f64,
    last_round: bool,
    forced: &AtomicU64,
) {
    let cell = tree.cell(c);
    if let Some(ch) = cell.children {
        let mut hm = 0.0f64;
        for &k in ch.iter() {
            if tree.cell(k).count > 0 {
                hm = hm.max(tree.cell(k).h_max());
            }
        }
        cell.set_h_max(hm);
        return;
    }
    let (lo, hi) = cell.range();
    let parts = unsafe { store.slice_mut(lo, hi) };
    let mut hm = 0.0f64;
    for p in parts.iter_mut() {
        if p.needs_redo() {
            let upd = update_smoothing_length(&p.dens, p.h, target, tol);
            if upd.converged || last_round {
                if !upd.converged {
                    forced.fetch_add(1, Ordering::Relaxed);
                }
                let rho = p.dens.rho;
                p.dens.div_v /= rho;
                for a in 0..3 {
                    p.dens.curl_v[a] /= rho;
                }
                p.omega = omega_correction(p.h, rho, p.dens.drho_dh);
                let (pr, cs) = eos_unchecked(rho, p.u, gamma);
                p.p = pr;
                p.c = cs;
                p.balsara = balsara_factor(p.dens.div_v.abs(), norm(p.dens.curl_v), cs, p.h);
                p.flags &= !FLAG_REDO;
                if upd.converged {
                    p.flags |= FLAG_CONVERGED;
                }
            } else {
                p.h = upd.h_new;
                p.dens = DensitySummary::seeded(p.m, p.h);
            }
        }
        hm = hm.max(p.h);
    }
    cell.set_h_max(hm);
}

/// Leaf integrators close the leapfrog for their active particles and
/// recompute per-particle time-steps and bins; internal integrators are
/// pure synchronization points.
#[allow(clippy::too_many_arguments)]
fn integrator_task(
    tree: &Tree,
    store: &ParticleStore,
    c: u32,
    dt_base: f64,
    u_min: f64,
    cfl: f64,
    fixed: bool,
    bootstrap: bool,
    underflow: &AtomicBool,
) {
    let cell = tree.cell(c);
    if cell.children.is_some() {
        return;
    }
    let (lo, hi) = cell.range();
    let parts = unsafe { store.slice_mut(lo, hi) };
    for p in parts.iter_mut() {
        if !p.is_active() {
            continue;
        }
        if !bootstrap {
            let dt_half = 0.5 * (1u64 << p.dt_bin) as f64 * dt_base;
            half_kick(p, dt_half, u_min);
        }
        p.dt = compute_timestep(p, cfl);
        if bootstrap {
            continue;
        }
        if fixed {
            p.dt_bin = 0;
        } else {
            let dt_eff = p.dt.min(dt_base * (1u64 << MAX_BIN) as f64);
            match assign_timestep_bin(dt_eff, dt_base) {
                Ok(k) => p.dt_bin = k.min(MAX_BIN),
                Err(_) => underflow.store(true, Ordering::Relaxed),
            }
        }
    }
}
