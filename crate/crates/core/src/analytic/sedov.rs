//! Self-similar point-explosion solution for a spherical blast wave in a
//! cold uniform ideal gas.
//!
//! With the ansatz v = (2r/5t) f(xi), rho = rho0 g(xi), P = rho0 (2r/5t)^2
//! h(xi) on xi = r/R(t), the Euler equations reduce to an ODE system that is
//! integrated inward from the strong-shock jump values at xi = 1. The energy
//! integral fixes the shock scale R = xi0 (E t^2 / rho0)^(1/5).

use std::f64::consts::PI;

const XI_MIN: f64 = 1e-3;
const N_STEPS: usize = 16000;

#[derive(Debug, Clone, Copy)]
pub struct SedovSample {
    pub rho: f64,
    pub v: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy)]
struct Row {
    ln_xi: f64,
    f: f64,
    g: f64,
    h: f64,
}

pub struct SedovSolution {
    pub gamma: f64,
    /// Shock position scale: R(t) = xi0 * (E t^2 / rho0)^(1/5).
    pub xi0: f64,
    /// Swept-mass closure integral 3 int xi^2 g dxi; equals 1 exactly.
    pub mass_integral: f64,
    /// Ascending in xi from XI_MIN to 1.
    rows: Vec<Row>,
}

/// Right-hand side in l = ln(xi). State is (f, g, h, I_energy, I_mass);
/// the integrals ride along so they share RK4 accuracy with the profile.
fn derivs(l: f64, s: [f64; 5], gamma: f64) -> [f64; 5] {
    let [f, g, h, _, _] = s;
    let hg = h / g;
    let q = (2.0 * f - 5.0) / (f - 1.0);
    let y = (3.0 * f * (f - 1.0) - f * f + 2.5 * f - hg * (2.0 - q))
        / (gamma * hg - (f - 1.0) * (f - 1.0));
    let x = -3.0 * f - y * (f - 1.0);
    let z = gamma * y - q;
    let xi = l.exp();
    let w_energy = xi.powi(5) * (0.5 * g * f * f + h / (gamma - 1.0));
    let w_mass = 3.0 * xi.powi(3) * g;
    [x, g * y, h * z, w_energy, w_mass]
}

impl SedovSolution {
    pub fn new(gamma: f64) -> SedovSolution {
        assert!(gamma > 1.0 && gamma < 7.0, "gamma out of range: {gamma}");
        let gp = gamma + 1.0;
        let gm = gamma - 1.0;
        // Strong-shock jump values just behind the front.
        let mut s = [2.0 / gp, gp / gm, 2.0 / gp, 0.0, 0.0];
        let mut l = 0.0;
        let dl = XI_MIN.ln() / N_STEPS as f64;
        let mut rows = Vec::with_capacity(N_STEPS + 1);
        rows.push(Row { ln_xi: l, f: s[0], g: s[1], h: s[2] });
        for _ in 0..N_STEPS {
            let k1 = derivs(l, s, gamma);
            let k2 = derivs(l + 0.5 * dl, step(s, k1, 0.5 * dl), gamma);
            let k3 = derivs(l + 0.5 * dl, step(s, k2, 0.5 * dl), gamma);
            let k4 = derivs(l + dl, step(s, k3, dl), gamma);
            for i in 0..5 {
                s[i] += dl / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            l += dl;
            rows.push(Row { ln_xi: l, f: s[0], g: s[1], h: s[2] });
        }
        rows.reverse();
        // Integrated downward, so the accumulators carry a sign flip.
        let i_energy = -s[3];
        let i_mass = -s[4];
        let xi0 = (25.0 / (16.0 * PI * i_energy)).powf(0.2);
        SedovSolution { gamma, xi0, mass_integral: i_mass, rows }
    }

    pub fn shock_radius(&self, e: f64, rho0: f64, t: f64) -> f64 {
        assert!(e > 0.0 && rho0 > 0.0 && t > 0.0);
        self.xi0 * (e * t * t / rho0).powf(0.2)
    }

    /// Flow state at radius r and time t for blast energy e into ambient
    /// density rho0. Outside the shock the ambient cold gas is returned.
    pub fn sample(&self, r: f64, t: f64, e: f64, rho0: f64) -> SedovSample {
        let radius = self.shock_radius(e, rho0, t);
        let xi = r / radius;
        if xi >= 1.0 {
            return SedovSample { rho: rho0, v: 0.0, p: 0.0 };
        }
        let scale = 2.0 * r / (5.0 * t);
        if xi <= XI_MIN {
            // Central asymptotics: f -> 1/gamma, g ~ xi^(3/(gamma-1)),
            // xi^2 h -> const (finite central pressure).
            let inner = self.rows[0];
            let g = inner.g * (xi / XI_MIN).powf(3.0 / (self.gamma - 1.0));
            let scale_r = 2.0 * radius / (5.0 * t);
            let p = rho0 * scale_r * scale_r * (XI_MIN * XI_MIN * inner.h);
            return SedovSample { rho: rho0 * g, v: scale / self.gamma, p };
        }
        let ln_xi = xi.ln();
        let idx = self
            .rows
            .partition_point(|row| row.ln_xi < ln_xi)
            .clamp(1, self.rows.len() - 1);
        let (a, b) = (self.rows[idx - 1], self.rows[idx]);
        let w = (ln_xi - a.ln_xi) / (b.ln_xi - a.ln_xi);
        let f = a.f + w * (b.f - a.f);
        let g = a.g + w * (b.g - a.g);
        let h = a.h + w * (b.h - a.h);
        SedovSample { rho: rho0 * g, v: scale * f, p: rho0 * scale * scale * h }
    }
}

fn step(s: [f64; 5], k: [f64; 5], dl: f64) -> [f64; 5] {
    let mut out = s;
    for i in 0..5 {
        out[i] += dl * k[i];
    }
    out
}
