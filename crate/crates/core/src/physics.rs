//! Equation of state, symmetric pair forces with Monaghan-Balsara viscosity,
//! signal-velocity time-step, bin assignment, and the kick/drift pieces of
//! the velocity-Verlet integrator.

use crate::kernel::{kernel_eval, DensitySummary};
use crate::util::V3;

/// Particle activity flags (multiple time-stepping and h-iteration masks).
pub const FLAG_ACTIVE: u8 = 1;
/// Density accumulators need (re)computation this round.
pub const FLAG_REDO: u8 = 2;
/// Smoothing length accepted by the last update.
pub const FLAG_CONVERGED: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub x: V3,
    pub v: V3,
    pub m: f64,
    /// Internal energy per unit mass.
    pub u: f64,
    pub h: f64,
    /// Density-phase accumulators (rho, drho_dh, neighbour count, curl/div).
    pub dens: DensitySummary,
    /// Correction term Omega = 1 + (h / 3 rho) drho/dh.
    pub omega: f64,
    pub p: f64,
    pub c: f64,
    /// Viscosity limiter f in [0, 1].
    pub balsara: f64,
    pub a: V3,
    pub du_dt: f64,
    /// Max over interacting pairs of c_i + c_j + max{0, -3 r.v/r}.
    pub v_sig: f64,
    /// Per-particle maximum stable time-step.
    pub dt: f64,
    /// Time-step bin k: active on steps that are multiples of 2^k.
    pub dt_bin: u32,
    pub id: u64,
    pub flags: u8,
}

impl Particle {
    pub fn new(x: V3, v: V3, m: f64, u: f64, h: f64, id: u64) -> Self {
        Particle {
            x,
            v,
            m,
            u,
            h,
            dens: DensitySummary::default(),
            omega: 1.0,
            p: 0.0,
            c: 0.0,
            balsara: 1.0,
            a: [0.0; 3],
            du_dt: 0.0,
            v_sig: 0.0,
            dt: f64::INFINITY,
            dt_bin: 0,
            id,
            flags: FLAG_ACTIVE,
        }
    }

    #[inline]
    pub fn is_active(&self) -> bool {
        self.flags & FLAG_ACTIVE != 0
    }

    #[inline]
    pub fn needs_redo(&self) -> bool {
        self.flags & FLAG_REDO != 0
    }

    #[inline]
    pub fn rho(&self) -> f64 {
        self.dens.rho
    }
}

/// Run parameters. Thresholds follow the standard values (neighbour target
/// 48, CFL 1/4, alpha 0.8, split above 300 particles at 87.5% small-h,
/// grouping below 6000 particles); all are configurable.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub gamma: f64,
    pub n_ngb_target: f64,
    pub n_ngb_tol: f64,
    pub cfl: f64,
    pub alpha: f64,
    pub dt_base: f64,
    pub t_end: f64,
    pub split_count: usize,
    pub split_fraction: f64,
    pub group_count: usize,
    pub n_threads: usize,
    pub rebuild_skin: f64,
    /// Global lockstep mode: every particle active every step, dt set to
    /// dt_fixed_frac times the smallest per-particle dt each step.
    pub dt_fixed: bool,
    pub dt_fixed_frac: f64,
    /// u floor as a fraction of the initial mean internal energy.
    pub u_min_frac: f64,
    pub box_size: V3,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            gamma: 5.0 / 3.0,
            n_ngb_target: 48.0,
            n_ngb_tol: 1.0,
            cfl: 0.25,
            alpha: 0.8,
            dt_base: 0.0,
            t_end: 0.0,
            split_count: 300,
            split_fraction: 0.875,
            group_count: 6000,
            n_threads: 1,
            rebuild_skin: 0.1,
            dt_fixed: false,
            dt_fixed_frac: 0.9,
            u_min_frac: 1e-10,
            box_size: [1.0, 1.0, 1.0],
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma > 1.0) {
            return Err(format!("gamma must exceed 1, got {}", self.gamma));
        }
        if !(self.cfl > 0.0 && self.cfl < 1.0) {
            return Err(format!("cfl must lie in (0,1), got {}", self.cfl));
        }
        if self.alpha < 0.0 {
            return Err(format!("alpha must be non-negative, got {}", self.alpha));
        }
        if self.n_ngb_target <= 0.0 || self.n_ngb_tol <= 0.0 {
            return Err("neighbour target and tolerance must be positive".into());
        }
        if self.split_count == 0 || self.group_count == 0 {
            return Err("split_count and group_count must be positive".into());
        }
        if !(self.split_fraction > 0.0 && self.split_fraction <= 1.0) {
            return Err(format!(
                "split_fraction must lie in (0,1], got {}",
                self.split_fraction
            ));
        }
        if self.n_threads == 0 {
            return Err("n_threads must be at least 1".into());
        }
        if self.box_size.iter().any(|&b| !(b > 0.0)) {
            return Err("box edges must be positive".into());
        }
        Ok(())
    }
}

/// P = rho u (gamma - 1), c = sqrt(gamma P / rho). Domain-checked variant.
pub fn equation_of_state(rho: f64, u: f64, gamma: f64) -> Result<(f64, f64), String> {
    if !(rho > 0.0) || !(u > 0.0) {
        return Err(format!("equation of state needs rho, u > 0; got rho={rho}, u={u}"));
    }
    Ok(eos_unchecked(rho, u, gamma))
}

/// Hot-path EOS; positivity is established by the density self-term and the
/// internal-energy floor before this runs.
#[inline]
pub fn eos_unchecked(rho: f64, u: f64, gamma: f64) -> (f64, f64) {
    let p = rho * u * (gamma - 1.0);
    (p, (gamma * p / rho).sqrt())
}

/// Adaptive-h correction Omega = 1 + (h / 3 rho) drho/dh, guarded: when the
/// h iteration is badly conditioned the raw value can reach zero, which
/// would blow up the pressure terms, so fall back to the uncorrected form.
#[inline]
pub fn omega_correction(h: f64, rho: f64, drho_dh: f64) -> f64 {
    let om = 1.0 + h / (3.0 * rho) * drho_dh;
    if om.is_finite() && om > 0.05 {
        om
    } else {
        1.0
    }
}

/// Viscosity limiter: suppresses the artificial viscosity in shear flows
/// (curl-dominated) while leaving compressive flows untouched.
#[inline]
pub fn balsara_factor(div_abs: f64, curl_norm: f64, c: f64, h: f64) -> f64 {
    div_abs / (div_abs + curl_norm + 1e-4 * c / h)
}

/// Pressure-gradient and viscosity updates for one particle pair, applied
/// symmetrically; each in-range pair must reach here exactly once per step.
/// `dx` is x_i - x_j with any periodic shift already applied, `rij` its norm.
/// `apply_i`/`apply_j` gate the writes per side (inactive particles still
/// contribute to their neighbours but receive no updates).
///
/// Returns false (and makes no updates) for coincident distinct particles;
/// the caller records the degeneracy diagnostic.
#[inline]
pub fn interact_force_pair(
    pi: &mut Particle,
    pj: &mut Particle,
    dx: V3,
    rij: f64,
    alpha: f64,
    apply_i: bool,
    apply_j: bool,
) -> bool {
    if rij <= 0.0 {
        return false;
    }
    let dwi = kernel_eval(rij, pi.h).dw_dr;
    let dwj = kernel_eval(rij, pj.h).dw_dr;
    let er = [dx[0] / rij, dx[1] / rij, dx[2] / rij];
    let dv = [pi.v[0] - pj.v[0], pi.v[1] - pj.v[1], pi.v[2] - pj.v[2]];
    let dvdr = dv[0] * er[0] + dv[1] * er[1] + dv[2] * er[2];

    // Pressure-gradient terms with the Omega corrections. The kernel's
    // compact support makes each side's term vanish beyond its own h, so no
    // extra range conditions are needed here.
    let term_i = pi.p / (pi.omega * pi.dens.rho * pi.dens.rho);
    let term_j = pj.p / (pj.omega * pj.dens.rho * pj.dens.rho);
    let grad_scalar = term_i * dwi + term_j * dwj;

    // Monaghan-Balsara viscosity.
    let w_ij = dvdr.min(0.0);
    let pi_visc = -alpha * (pi.c + pj.c - 3.0 * w_ij) * w_ij / (pi.dens.rho + pj.dens.rho);
    let fsum = pi.balsara + pj.balsara;
    let visc_acc = 0.25 * pi_visc * (dwi + dwj) * fsum;
    let visc_du = 0.125 * pi_visc * dvdr * (dwi + dwj) * fsum;

    // Signal velocity for the CFL condition (-3 w_ij = max{0, -3 r.v/r}).
    let vs = pi.c + pj.c - 3.0 * w_ij;

    let acc = grad_scalar + visc_acc;
    if apply_i {
        let s = -pj.m * acc;
        pi.a[0] += s * er[0];
        pi.a[1] += s * er[1];
        pi.a[2] += s * er[2];
        pi.du_dt += pj.m * (term_i * dvdr * dwi + visc_du);
        if vs > pi.v_sig {
            pi.v_sig = vs;
        }
    }
    if apply_j {
        let s = pi.m * acc;
        pj.a[0] += s * er[0];
        pj.a[1] += s * er[1];
        pj.a[2] += s * er[2];
        pj.du_dt += pi.m * (term_j * dvdr * dwj + visc_du);
        if vs > pj.v_sig {
            pj.v_sig = vs;
        }
    }
    true
}

/// Per-particle time-step from the accumulated signal velocity, falling back
/// to the particle's own sound speed when it had no interactions.
#[inline]
pub fn compute_timestep(p: &Particle, cfl: f64) -> f64 {
    let denom = if p.v_sig > 0.0 { p.v_sig } else { p.c };
    if denom > 0.0 {
        cfl * 2.0 * p.h / denom
    } else {
        f64::INFINITY
    }
}

/// Smallest k >= 0 with 2^(k-1) dt_base < dt_i <= 2^k dt_base. A dt_i below
/// dt_base is signalled so the engine can shrink dt_base and reassign.
pub fn assign_timestep_bin(dt_i: f64, dt_base: f64) -> Result<u32, DtUnderflow> {
    assert!(dt_base > 0.0 && dt_i > 0.0, "time-steps must be positive");
    if dt_i < dt_base {
        return Err(DtUnderflow { dt_i, dt_base });
    }
    let ratio = dt_i / dt_base;
    let k = ratio.log2().ceil();
    // log2 rounding can land one bin high when dt_i is an exact power-of-two
    // multiple; nudge down while the left boundary still admits it.
    let mut k = k.max(0.0) as u32;
    while k > 0 && dt_i <= 2f64.powi(k as i32 - 1) * dt_base {
        k -= 1;
    }
    Ok(k)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtUnderflow {
    pub dt_i: f64,
    pub dt_base: f64,
}

/// Half-kick: advance v and u by the accumulated rates over dt_half. Returns
/// true if the internal-energy floor engaged.
#[inline]
pub fn half_kick(p: &mut Particle, dt_half: f64, u_min: f64) -> bool {
    p.v[0] += p.a[0] * dt_half;
    p.v[1] += p.a[1] * dt_half;
    p.v[2] += p.a[2] * dt_half;
    p.u += p.du_dt * dt_half;
    if p.u < u_min {
        p.u = u_min;
        true
    } else {
        false
    }
}

/// Drift: advance the position by v dt. Positions are left unwrapped so that
/// cached sort projections and pair shifts stay in the frame the cell tree
/// was built in; the rebuild wraps everything back into [0, box).
#[inline]
pub fn drift(p: &mut Particle, dt: f64) {
    for a in 0..3 {
        p.x[a] += p.v[a] * dt;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::kernel_eval;

    fn assert_rel(a: f64, b: f64, tol: f64) {
        let scale = a.abs().max(b.abs()).max(1e-300);
        assert!(
            (a - b).abs() / scale <= tol,
            "values differ: {a} vs {b} (rel {})",
            (a - b).abs() / scale
        );
    }

    #[test]
    fn eos_examples() {
        let g = 5.0 / 3.0;
        let (p, _) = equation_of_state(1.0, 1.0, g).unwrap();
        assert_rel(p, 2.0 / 3.0, 1e-15);
        // Invert P = rho u (gamma-1) for the shock-tube left state.
        let u = 1.0 / (4.0 * (g - 1.0));
        assert_rel(u, 0.375, 1e-15);
        let (_, c) = equation_of_state(1.0, 1.0 / (g - 1.0), g).unwrap();
        assert_rel(c, (5.0f64 / 3.0).sqrt(), 1e-15);
        assert!(equation_of_state(-1.0, 1.0, g).is_err());
        assert!(equation_of_state(1.0, 0.0, g).is_err());
    }

    #[test]
    fn timestep_bins() {
        assert_eq!(assign_timestep_bin(1.0, 1.0).unwrap(), 0);
        assert_eq!(assign_timestep_bin(2.0, 1.0).unwrap(), 1);
        assert_eq!(assign_timestep_bin(3.5, 1.0).unwrap(), 2);
        assert_eq!(assign_timestep_bin(4.0, 1.0).unwrap(), 2);
        assert_eq!(assign_timestep_bin(4.0001, 1.0).unwrap(), 3);
        assert!(assign_timestep_bin(0.99, 1.0).is_err());
    }

    #[test]
    fn timestep_from_signal_velocity() {
        let mut p = Particle::new([0.0; 3], [0.0; 3], 1.0, 1.0, 0.5, 0);
        p.c = 2.0;
        p.v_sig = 4.0; // uniform gas at rest: v_sig = 2c
        assert_rel(compute_timestep(&p, 0.25), 0.25 * 2.0 * 0.5 / 4.0, 1e-15);
        p.v_sig = 0.0; // isolated: fall back to own sound speed
        assert_rel(compute_timestep(&p, 0.25), 0.25 * 2.0 * 0.5 / 2.0, 1e-15);
    }

    /// Independent transcription of the pair equations, scalar step by step,
    /// for one hand-built pair. Everything is recomputed from raw fields so a
    /// sign or prefactor slip in the implementation cannot hide.
    #[test]
    fn pair_force_matches_scalar_oracle() {
        let gamma = 5.0 / 3.0;
        let alpha = 0.8;
        let mut pi = Particle::new([0.1, 0.2, 0.3], [0.4, -0.1, 0.2], 1.3, 2.1, 0.9, 0);
        let mut pj = Particle::new([0.5, -0.1, 0.6], [-0.2, 0.3, 0.0], 0.7, 1.4, 1.2, 1);
        pi.dens.rho = 2.0;
        pi.dens.drho_dh = -0.6;
        pj.dens.rho = 1.1;
        pj.dens.drho_dh = -0.2;
        for (p, f) in [(&mut pi, 0.77), (&mut pj, 0.91)] {
            p.omega = 1.0 + p.h / (3.0 * p.dens.rho) * p.dens.drho_dh;
            let (pr, c) = equation_of_state(p.dens.rho, p.u, gamma).unwrap();
            p.p = pr;
            p.c = c;
            p.balsara = f;
        }
        let dx = [
            pi.x[0] - pj.x[0],
            pi.x[1] - pj.x[1],
            pi.x[2] - pj.x[2],
        ];
        let rij = (dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2]).sqrt();
        assert!(rij < pi.h.max(pj.h));

        // Oracle, written independently from the implementation above.
        let o = {
            let dwi = kernel_eval(rij, pi.h).dw_dr;
            let dwj = kernel_eval(rij, pj.h).dw_dr;
            let er: Vec<f64> = dx.iter().map(|d| d / rij).collect();
            let dv = [
                pi.v[0] - pj.v[0],
                pi.v[1] - pj.v[1],
                pi.v[2] - pj.v[2],
            ];
            let dvdr = dv[0] * er[0] + dv[1] * er[1] + dv[2] * er[2];
            let ti = pi.p / (pi.omega * pi.dens.rho * pi.dens.rho);
            let tj = pj.p / (pj.omega * pj.dens.rho * pj.dens.rho);
            let w = dvdr.min(0.0);
            let visc = -alpha * (pi.c + pj.c - 3.0 * w) * w / (pi.dens.rho + pj.dens.rho);
            let f2 = pi.balsara + pj.balsara;
            let ai: Vec<f64> = (0..3)
                .map(|k| {
                    -pj.m * (ti * dwi + tj * dwj) * er[k]
                        - 0.25 * pj.m * visc * (dwi + dwj) * f2 * er[k]
                })
                .collect();
            let dui = ti * pj.m * dvdr * dwi + 0.125 * pj.m * visc * dvdr * (dwi + dwj) * f2;
            let duj = tj * pi.m * dvdr * dwj + 0.125 * pi.m * visc * dvdr * (dwi + dwj) * f2;
            (ai, dui, duj, pi.c + pj.c - 3.0 * w)
        };

        assert!(interact_force_pair(&mut pi, &mut pj, dx, rij, alpha, true, true));
        for k in 0..3 {
            assert_rel(pi.a[k], o.0[k], 1e-12);
            // Momentum antisymmetry: m_i a_i = -m_j a_j per pair.
            assert_rel(pi.m * pi.a[k], -pj.m * pj.a[k], 1e-12);
        }
        assert_rel(pi.du_dt, o.1, 1e-12);
        assert_rel(pj.du_dt, o.2, 1e-12);
        assert_rel(pi.v_sig, o.3, 1e-12);
        assert_rel(pj.v_sig, o.3, 1e-12);
    }

    #[test]
    fn equal_velocities_have_no_viscosity() {
        let mut pi = Particle::new([0.0; 3], [0.3, 0.1, -0.2], 1.0, 1.0, 1.0, 0);
        let mut pj = Particle::new([0.5, 0.0, 0.0], [0.3, 0.1, -0.2], 1.0, 1.0, 1.0, 1);
        for p in [&mut pi, &mut pj] {
            p.dens.rho = 1.0;
            p.p = 1.0;
            p.c = 1.0;
            p.omega = 1.0;
            p.balsara = 1.0;
        }
        // Same pressure terms, equal velocities: dvdr = 0, so du/dt = 0 and
        // v_sig reduces to c_i + c_j.
        assert!(interact_force_pair(
            &mut pi,
            &mut pj,
            [-0.5, 0.0, 0.0],
            0.5,
            0.8,
            true,
            true
        ));
        assert_eq!(pi.du_dt, 0.0);
        assert_eq!(pj.du_dt, 0.0);
        assert_rel(pi.v_sig, 2.0, 1e-15);
    }

    #[test]
    fn coincident_pair_is_skipped() {
        let mut pi = Particle::new([0.0; 3], [0.0; 3], 1.0, 1.0, 1.0, 0);
        let mut pj = pi.clone();
        pj.id = 1;
        assert!(!interact_force_pair(&mut pi, &mut pj, [0.0; 3], 0.0, 0.8, true, true));
        assert_eq!(pi.a, [0.0; 3]);
    }

    #[test]
    fn kick_and_drift() {
        let mut p = Particle::new([0.9, 0.5, 0.5], [0.3, 0.0, 0.0], 1.0, 1.0, 0.1, 0);
        p.a = [1.0, 0.0, 0.0];
        p.du_dt = -0.5;
        assert!(!half_kick(&mut p, 0.5, 1e-12));
        assert_rel(p.v[0], 0.8, 1e-15);
        assert_rel(p.u, 0.75, 1e-15);
        // Drift leaves positions unwrapped; the tree rebuild wraps them.
        drift(&mut p, 0.5);
        assert!((p.x[0] - 1.3).abs() < 1e-12, "x = {}", p.x[0]);
        // Energy floor engages with a diagnostic.
        p.du_dt = -1e9;
        assert!(half_kick(&mut p, 1.0, 1e-12));
        assert_eq!(p.u, 1e-12);
    }

    #[test]
    fn constant_acceleration_is_exact() {
        let mut p = Particle::new([0.0; 3], [0.1, 0.0, 0.0], 1.0, 1.0, 0.1, 0);
        p.a = [0.25, 0.0, 0.0];
        let dt = 0.01;
        for _ in 0..100 {
            half_kick(&mut p, dt / 2.0, 0.0);
            drift(&mut p, dt);
            half_kick(&mut p, dt / 2.0, 0.0);
        }
        assert_rel(p.v[0], 0.1 + 0.25 * 1.0, 1e-12);
    }

    #[test]
    fn balsara_limits() {
        // Pure compression: f -> 1 (regularizer keeps it just below).
        let f = balsara_factor(10.0, 0.0, 1.0, 1.0);
        assert!(f > 0.99 && f <= 1.0);
        // Pure shear: f -> 0.
        let f = balsara_factor(0.0, 10.0, 1.0, 1.0);
        assert!(f < 1e-10);
    }

    #[test]
    fn config_validation() {
        assert!(RunConfig::default().validate().is_ok());
        let mut bad = RunConfig::default();
        bad.gamma = 1.0;
        assert!(bad.validate().is_err());
        let mut bad = RunConfig::default();
        bad.cfl = 1.5;
        assert!(bad.validate().is_err());
    }
}
