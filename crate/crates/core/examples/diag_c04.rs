use tasksph::engine::Engine;
use tasksph::physics::{Particle, RunConfig};

fn seeded_h(n_per_vol: f64, target: f64) -> f64 {
    (3.0 * target / (4.0 * std::f64::consts::PI * n_per_vol)).cbrt()
}

fn main() {
    let n_side = 11usize;
    let refine = 5usize;
    let center = [0.3, 0.3, 0.3];
    let r_blob = 0.1f64;
    let inside = |x: &[f64; 3]| {
        let d2: f64 = (0..3).map(|k| (x[k] - center[k]).powi(2)).sum();
        d2 < r_blob * r_blob
    };
    let h_bg = seeded_h((n_side * n_side * n_side) as f64, 48.0);
    let h_blob = h_bg / refine as f64;
    let mut parts = Vec::new();
    let mut id = 0u64;
    for i in 0..n_side {
        for j in 0..n_side {
            for k in 0..n_side {
                let x = [(i as f64 + 0.5) / n_side as f64, (j as f64 + 0.5) / n_side as f64, (k as f64 + 0.5) / n_side as f64];
                if !inside(&x) { parts.push(Particle::new(x, [0.0; 3], 1.0, 1.0, h_bg, id)); id += 1; }
            }
        }
    }
    let n_fine = n_side * refine;
    for i in 0..n_fine {
        for j in 0..n_fine {
            for k in 0..n_fine {
                let x = [(i as f64 + 0.5) / n_fine as f64, (j as f64 + 0.5) / n_fine as f64, (k as f64 + 0.5) / n_fine as f64];
                if inside(&x) { parts.push(Particle::new(x, [0.0; 3], 1.0, 1.0, h_blob, id)); id += 1; }
            }
        }
    }
    println!("N = {}", parts.len());
    let cfg = RunConfig { rebuild_skin: 2.0, split_count: 40, group_count: 64, dt_fixed: true, dt_fixed_frac: 0.1, ..RunConfig::default() };
    let probe = Engine::new(parts.clone(), cfg.clone()).expect("probe");
    let rho_mean = probe.particles().iter().map(|p| p.dens.rho).sum::<f64>() / probe.particles().len() as f64;
    let rho: std::collections::HashMap<u64, f64> = probe.particles().iter().map(|p| (p.id, p.dens.rho)).collect();
    for p in &mut parts { p.u = rho_mean / rho[&p.id]; }
    let mut eng = Engine::new(parts, cfg).expect("engine");
    println!("bootstrap: slack={:.4} min_leaf_edge={:.4} dims={:?} cells={} dt_base={:.3e}", eng.tree.reach_slack(), eng.tree.min_leaf_edge, eng.tree.dims, eng.tree.cells.len(), eng.dt_base);
    let mut bins: Vec<u32> = eng.particles().iter().map(|p| p.dt_bin).collect();
    bins.sort_unstable(); bins.dedup();
    println!("bins in use: {:?}", bins);
    for s in 0..25 {
        let st = eng.step();
        let vmax = eng.particles().iter().map(|p| (p.v[0]*p.v[0]+p.v[1]*p.v[1]+p.v[2]*p.v[2]).sqrt()).fold(0.0f64, f64::max);
        println!("s={s} slack={:.4} rebuilds={} rounds={} rebuilt={} vmax={:.3e} dt={:.3e} forced={}", eng.tree.reach_slack(), eng.n_rebuilds, st.density_rounds, st.rebuilt, vmax, eng.dt_base, st.forced_h);
    }
}
