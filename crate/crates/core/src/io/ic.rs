//! Initial-condition generators: shock tube, point blast, perturbed grid.
//!
//! Density contrasts are realized by lattice spacing with equal particle
//! masses. Generators return the particle set together with a run
//! configuration carrying the case's standard end time and box.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::physics::{Particle, RunConfig};
use crate::util::V3;

/// Shock-tube half states as (rho, P).
pub const SOD_LEFT: (f64, f64) = (4.0, 1.0);
pub const SOD_RIGHT: (f64, f64) = (1.0, 0.1795);
pub const SOD_BOX: V3 = [8.0, 1.0, 1.0];
pub const SOD_T_END: f64 = 0.12;

pub const SEDOV_P_BG: f64 = 1.0;
/// Heated particles carry this pressure at unit density.
pub const SEDOV_P_BLAST: f64 = 100.0;
pub const SEDOV_T_END: f64 = 0.075;

pub struct IcSet {
    pub particles: Vec<Particle>,
    pub cfg: RunConfig,
    /// Energy injected above the ambient bath, for cases that define one.
    pub e_blast: Option<f64>,
    pub warning: Option<String>,
}

fn ngb_h(number_density: f64, target: f64) -> f64 {
    (3.0 * target / (4.0 * std::f64::consts::PI * number_density)).cbrt()
}

/// Periodic 8x1x1 box split at x = 4: dense (rho 4, P 1) left half, light
/// (rho 1, P 0.1795) right half, both at rest with equal particle masses.
/// The right half is a simple cubic lattice with `a` sites per unit length;
/// the left half adds a 4-point face-centred basis to the same lattice for
/// the 4:1 density ratio. Total count is 20 a^3; `n_total` is rounded to
/// the nearest such value.
pub fn make_sod(n_total: usize, seed: u64) -> IcSet {
    let a = ((n_total as f64 / 20.0).cbrt().round() as usize).max(2);
    let count = 20 * a * a * a;
    let warning = (count != n_total)
        .then(|| format!("requested {n_total} particles, lattice gives {count} (20 x {a}^3)"));

    let cfg = RunConfig {
        t_end: SOD_T_END,
        box_size: SOD_BOX,
        ..RunConfig::default()
    };
    let gamma = cfg.gamma;
    let d = 1.0 / a as f64;
    let m = SOD_RIGHT.0 * d * d * d;
    let u_left = SOD_LEFT.1 / (SOD_LEFT.0 * (gamma - 1.0));
    let u_right = SOD_RIGHT.1 / (SOD_RIGHT.0 * (gamma - 1.0));
    let h_left = ngb_h(4.0 / (d * d * d), cfg.n_ngb_target);
    let h_right = ngb_h(1.0 / (d * d * d), cfg.n_ngb_target);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Tiny jitter breaks lattice degeneracies without disturbing the states.
    let mut jit = |x: f64| x + (rng.gen::<f64>() - 0.5) * 2e-4 * d;
    let mut particles = Vec::with_capacity(count);
    let mut id = 0u64;
    const FCC_BASIS: [[f64; 3]; 4] =
        [[0.0, 0.0, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]];
    for ix in 0..4 * a {
        for iy in 0..a {
            for iz in 0..a {
                for b in FCC_BASIS {
                    let x = [
                        jit((ix as f64 + 0.25 + b[0]) * d),
                        jit((iy as f64 + 0.25 + b[1]) * d),
                        jit((iz as f64 + 0.25 + b[2]) * d),
                    ];
                    particles.push(Particle::new(x, [0.0; 3], m, u_left, h_left, id));
                    id += 1;
                }
            }
        }
    }
    for ix in 0..4 * a {
        for iy in 0..a {
            for iz in 0..a {
                let x = [
                    jit(4.0 + (ix as f64 + 0.5) * d),
                    jit((iy as f64 + 0.5) * d),
                    jit((iz as f64 + 0.5) * d),
                ];
                particles.push(Particle::new(x, [0.0; 3], m, u_right, h_right, id));
                id += 1;
            }
        }
    }
    IcSet { particles, cfg, e_blast: None, warning }
}

/// Unit-box cubic lattice at rest, rho = 1, ambient P = 1; the 26 lattice
/// neighbours of the central site (the surrounding 3x3x3 shell) are set to
/// P = 100. `heat_center` extends the deposit to the centre site itself.
pub fn make_sedov(n_side: usize, heat_center: bool) -> Result<IcSet, String> {
    if n_side < 5 {
        return Err(format!("n_side must be at least 5, got {n_side}"));
    }
    if n_side % 2 == 0 {
        return Err(format!("n_side must be odd so a central site exists, got {n_side}"));
    }
    let cfg = RunConfig {
        t_end: SEDOV_T_END,
        dt_fixed: true,
        ..RunConfig::default()
    };
    let gamma = cfg.gamma;
    let n = n_side;
    let d = 1.0 / n as f64;
    let m = d * d * d;
    let u_bg = SEDOV_P_BG / (gamma - 1.0);
    let u_hot = SEDOV_P_BLAST / (gamma - 1.0);
    let h0 = ngb_h((n * n * n) as f64, cfg.n_ngb_target);
    let mc = (n as i64 - 1) / 2;

    let mut particles = Vec::with_capacity(n * n * n);
    let mut heated = 0usize;
    let mut id = 0u64;
    for ix in 0..n as i64 {
        for iy in 0..n as i64 {
            for iz in 0..n as i64 {
                let shell = (ix - mc).abs().max((iy - mc).abs()).max((iz - mc).abs());
                let hot = shell == 1 || (heat_center && shell == 0);
                let u = if hot { u_hot } else { u_bg };
                heated += hot as usize;
                let x = [
                    (ix as f64 + 0.5) * d,
                    (iy as f64 + 0.5) * d,
                    (iz as f64 + 0.5) * d,
                ];
                particles.push(Particle::new(x, [0.0; 3], m, u, h0, id));
                id += 1;
            }
        }
    }
    let e_blast = heated as f64 * m * (u_hot - u_bg);
    Ok(IcSet { particles, cfg, e_blast: Some(e_blast), warning: None })
}

/// Unit-box cubic lattice, uniform rho = P = 1, random displacements up to
/// `amplitude` lattice spacings per coordinate (amplitude < 0.5).
pub fn make_grid(n_total: usize, amplitude: f64, seed: u64) -> Result<IcSet, String> {
    if !(0.0..0.5).contains(&amplitude) {
        return Err(format!(
            "amplitude must lie in [0, 0.5) lattice spacings, got {amplitude}"
        ));
    }
    let n = ((n_total as f64).cbrt().round() as usize).max(2);
    let count = n * n * n;
    let warning = (count != n_total)
        .then(|| format!("requested {n_total} particles, lattice gives {count} ({n}^3)"));
    let cfg = RunConfig::default();
    let gamma = cfg.gamma;
    let d = 1.0 / n as f64;
    let m = d * d * d;
    let u = 1.0 / (gamma - 1.0);
    let h0 = ngb_h(count as f64, cfg.n_ngb_target);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut particles = Vec::with_capacity(count);
    let mut id = 0u64;
    for ix in 0..n {
        for iy in 0..n {
            for iz in 0..n {
                let mut x = [
                    (ix as f64 + 0.5) * d,
                    (iy as f64 + 0.5) * d,
                    (iz as f64 + 0.5) * d,
                ];
                for c in &mut x {
                    *c += (rng.gen::<f64>() * 2.0 - 1.0) * amplitude * d;
                }
                particles.push(Particle::new(x, [0.0; 3], m, u, h0, id));
                id += 1;
            }
        }
    }
    Ok(IcSet { particles, cfg, e_blast: None, warning })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sod_rounds_count_and_balances_masses() {
        let set = make_sod(50_000, 1);
        assert_eq!(set.particles.len(), 54_880);
        assert!(set.warning.as_deref().unwrap().contains("54880"));

        let exact = make_sod(160, 1);
        assert_eq!(exact.particles.len(), 160);
        assert!(exact.warning.is_none());

        // Equal masses; per-region mass = rho x volume.
        let m0 = set.particles[0].m;
        assert!(set.particles.iter().all(|p| p.m == m0));
        let left: f64 = set
            .particles
            .iter()
            .filter(|p| p.x[0] < 4.0)
            .map(|p| p.m)
            .sum();
        let right: f64 = set
            .particles
            .iter()
            .filter(|p| p.x[0] >= 4.0)
            .map(|p| p.m)
            .sum();
        assert!((left / 16.0 - 1.0).abs() < 1e-12, "left mass {left}");
        assert!((right / 4.0 - 1.0).abs() < 1e-12, "right mass {right}");
    }

    #[test]
    fn sod_internal_energies_invert_the_eos() {
        let set = make_sod(160, 1);
        for p in &set.particles {
            let want = if p.x[0] < 4.0 { 0.375 } else { 0.26925 };
            assert!((p.u - want).abs() < 1e-15, "u={} at x={}", p.u, p.x[0]);
        }
    }

    #[test]
    fn sedov_heats_exactly_the_central_shell() {
        let set = make_sedov(5, false).unwrap();
        assert_eq!(set.particles.len(), 125);
        let hot: Vec<&Particle> = set.particles.iter().filter(|p| p.u > 100.0).collect();
        assert_eq!(hot.len(), 26);
        // All heated sites sit within one spacing of the centre in each axis.
        for p in &hot {
            for c in p.x {
                assert!((c - 0.5).abs() < 0.21, "hot particle at {:?}", p.x);
            }
        }
        // The centre site itself stays ambient.
        let center = set
            .particles
            .iter()
            .find(|p| p.x.iter().all(|&c| (c - 0.5).abs() < 1e-12))
            .unwrap();
        assert!((center.u - 1.5).abs() < 1e-15);
        let e = set.e_blast.unwrap();
        assert!((e - 26.0 * (1.0 / 125.0) * 148.5).abs() < 1e-12, "{e}");

        let with_center = make_sedov(5, true).unwrap();
        let hot27 = with_center.particles.iter().filter(|p| p.u > 100.0).count();
        assert_eq!(hot27, 27);
    }

    #[test]
    fn sedov_rejects_even_or_tiny_lattices() {
        assert!(make_sedov(4, false).is_err());
        assert!(make_sedov(3, false).is_err());
        assert!(make_sedov(7, false).is_ok());
    }

    #[test]
    fn grid_respects_amplitude_bound() {
        let perfect = make_grid(27, 0.0, 7).unwrap();
        let d = 1.0 / 3.0;
        for p in &perfect.particles {
            for c in p.x {
                let off = (c / d - 0.5).round() * d + 0.5 * d - c;
                assert!(off.abs() < 1e-12);
            }
        }
        let shaken = make_grid(1000, 0.4, 7).unwrap();
        assert_eq!(shaken.particles.len(), 1000);
        let ds = 1.0 / 10.0;
        for p in &shaken.particles {
            for c in p.x {
                let nearest = ((c / ds - 0.5).round() + 0.5) * ds;
                assert!((c - nearest).abs() <= 0.4 * ds + 1e-12);
            }
        }
        assert!(make_grid(27, 0.5, 7).is_err());
    }
}
