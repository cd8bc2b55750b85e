//! Work-stealing executor for one phase of the task graph.
//!
//! Each worker owns a binary max-heap keyed by critical-path weight. Ready
//! tasks land on the queue of their top-level cell (row-major rank modulo
//! worker count; two-cell tasks pick the shorter candidate queue). To pick
//! work, a worker scans the first few heap slots for a task whose cells it
//! can lock, preferring tasks that touch its recently used cells, and
//! steals from other queues when its own yields nothing. A failed lock
//! leaves the task in place for a later scan: acquisition is all-or-nothing
//! with rollback, so conflicts cost a retry, never a deadlock.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::space::{Tree, NONE};
use crate::taskgraph::{Graph, Phase, TaskKind};

/// How many heap slots a scan inspects before giving up on a queue.
pub const SCAN_LIMIT: usize = 50;
/// A worker that sees no global progress for this long declares the run
/// wedged; locks make true deadlock impossible, so this only trips on bugs.
const STALL_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, Copy)]
pub struct TimelineEvent {
    pub step: u64,
    pub worker: u32,
    pub kind: TaskKind,
    pub a: u32,
    pub b: u32,
    pub t_start_ns: u64,
    pub t_end_ns: u64,
}

/// Max-heap order: heavier first, ties by id for determinism.
fn heavier(g: &Graph, s: u32, t: u32) -> bool {
    let ws = g.tasks[s as usize].weight;
    let wt = g.tasks[t as usize].weight;
    ws > wt || (ws == wt && s < t)
}

fn sift_up(q: &mut [u32], g: &Graph, mut i: usize) {
    while i > 0 {
        let p = (i - 1) / 2;
        if heavier(g, q[i], q[p]) {
            q.swap(i, p);
            i = p;
        } else {
            break;
        }
    }
}

fn sift_down(q: &mut [u32], g: &Graph, mut i: usize) {
    loop {
        let l = 2 * i + 1;
        let r = 2 * i + 2;
        let mut m = i;
        if l < q.len() && heavier(g, q[l], q[m]) {
            m = l;
        }
        if r < q.len() && heavier(g, q[r], q[m]) {
            m = r;
        }
        if m == i {
            break;
        }
        q.swap(i, m);
        i = m;
    }
}

fn heap_push(q: &mut Vec<u32>, g: &Graph, t: u32) {
    q.push(t);
    let last = q.len() - 1;
    sift_up(q, g, last);
}

fn heap_remove(q: &mut Vec<u32>, g: &Graph, i: usize) -> u32 {
    let t = q[i];
    let last = q.pop().expect("heap_remove on empty heap");
    if i < q.len() {
        q[i] = last;
        sift_down(q, g, i);
        sift_up(q, g, i);
    }
    t
}

struct Ctx<'a> {
    graph: &'a Graph,
    tree: &'a Tree,
    queues: Vec<Mutex<Vec<u32>>>,
    n_done: AtomicUsize,
    total: usize,
}

impl Ctx<'_> {
    fn preferred_queue(&self, t: u32) -> usize {
        let task = &self.graph.tasks[t as usize];
        let n = self.queues.len();
        let qa = self.tree.cell(task.a).top as usize % n;
        if task.b == NONE || task.b == task.a {
            return qa;
        }
        let qb = self.tree.cell(task.b).top as usize % n;
        if qa == qb {
            return qa;
        }
        // Length reads race with other pushes; this is a balance heuristic,
        // not an invariant.
        let la = self.queues[qa].lock().unwrap().len();
        let lb = self.queues[qb].lock().unwrap().len();
        if lb < la {
            qb
        } else {
            qa
        }
    }

    fn push(&self, t: u32) {
        let q = self.preferred_queue(t);
        let mut guard = self.queues[q].lock().unwrap();
        heap_push(&mut guard, self.graph, t);
    }

    fn try_take_from(&self, q: usize, affinity: &[u32; 2], require_affinity: bool) -> Option<u32> {
        let mut guard = self.queues[q].lock().unwrap();
        let limit = guard.len().min(SCAN_LIMIT);
        for i in 0..limit {
            let t = guard[i];
            let task = &self.graph.tasks[t as usize];
            if require_affinity {
                let touches = affinity.contains(&task.a)
                    || (task.b != NONE && affinity.contains(&task.b));
                if !touches {
                    continue;
                }
            }
            if self.tree.lock_task_cells(task.a, task.b) {
                heap_remove(&mut guard, self.graph, i);
                return Some(t);
            }
        }
        None
    }

    fn get_task(&self, w: usize, affinity: &[u32; 2]) -> Option<u32> {
        if let Some(t) = self.try_take_from(w, affinity, true) {
            return Some(t);
        }
        if let Some(t) = self.try_take_from(w, affinity, false) {
            return Some(t);
        }
        let n = self.queues.len();
        for k in 1..n {
            if let Some(t) = self.try_take_from((w + k) % n, affinity, false) {
                return Some(t);
            }
        }
        None
    }
}

fn worker<F>(
    ctx: &Ctx,
    w: usize,
    step: u64,
    epoch: Instant,
    record: bool,
    exec: &F,
) -> Vec<TimelineEvent>
where
    F: Fn(u32) + Sync,
{
    let mut events = Vec::new();
    let mut affinity = [NONE; 2];
    let mut idle = 0u32;
    let mut last_done = usize::MAX;
    let mut stall = Instant::now();
    while ctx.n_done.load(Ordering::Acquire) < ctx.total {
        match ctx.get_task(w, &affinity) {
            Some(t) => {
                idle = 0;
                let task = ctx.graph.tasks[t as usize];
                let t0 = epoch.elapsed().as_nanos() as u64;
                exec(t);
                let t1 = epoch.elapsed().as_nanos() as u64;
                // Unlock before waking dependents so they can lock these
                // cells on first try.
                ctx.tree.unlock_task_cells(task.a, task.b);
                ctx.graph.complete(t, |d| ctx.push(d));
                ctx.n_done.fetch_add(1, Ordering::AcqRel);
                affinity = [task.a, if task.b == NONE { task.a } else { task.b }];
                if record {
                    events.push(TimelineEvent {
                        step,
                        worker: w as u32,
                        kind: task.kind,
                        a: task.a,
                        b: task.b,
                        t_start_ns: t0,
                        t_end_ns: t1,
                    });
                }
            }
            None => {
                idle += 1;
                if idle < 64 {
                    std::hint::spin_loop();
                } else {
                    std::thread::yield_now();
                }
                let d = ctx.n_done.load(Ordering::Acquire);
                if d != last_done {
                    last_done = d;
                    stall = Instant::now();
                } else if stall.elapsed() > STALL_TIMEOUT {
                    panic!("scheduler stalled at {d}/{} tasks", ctx.total);
                }
            }
        }
    }
    events
}

/// Activate the phase on the graph and drain it with `n_threads` workers.
/// `exec` runs each task body with the task's cells locked. Returns the
/// merged timeline (empty unless `record`).
pub fn run_phase<F>(
    graph: &Graph,
    tree: &Tree,
    phase: Phase,
    n_threads: usize,
    step: u64,
    epoch: Instant,
    record: bool,
    exec: &F,
) -> Vec<TimelineEvent>
where
    F: Fn(u32) + Sync,
{
    let (ready, total) = graph.activate(phase, tree);
    if total == 0 {
        return Vec::new();
    }
    assert!(!ready.is_empty(), "live tasks but none ready: graph cycle");
    let n_w = n_threads.max(1);
    let ctx = Ctx {
        graph,
        tree,
        queues: (0..n_w).map(|_| Mutex::new(Vec::new())).collect(),
        n_done: AtomicUsize::new(0),
        total,
    };
    for t in ready {
        ctx.push(t);
    }
    if n_w == 1 {
        return worker(&ctx, 0, step, epoch, record, exec);
    }
    let mut all = Vec::new();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..n_w)
            .map(|w| {
                let ctx = &ctx;
                s.spawn(move || worker(ctx, w, step, epoch, record, exec))
            })
            .collect();
        for h in handles {
            all.extend(h.join().expect("worker panicked"));
        }
    });
    all.sort_by_key(|e| e.t_start_ns);
    all
}
