//! Exact Riemann solver for the 1D Euler equations of an ideal gas.
//!
//! Newton iteration on the star-region pressure using the standard shock
//! and rarefaction functions, then self-similar sampling in xi = x / t.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GasState {
    pub rho: f64,
    pub v: f64,
    pub p: f64,
}

impl GasState {
    pub fn sound_speed(&self, gamma: f64) -> f64 {
        (gamma * self.p / self.rho).sqrt()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RiemannSolution {
    pub left: GasState,
    pub right: GasState,
    pub gamma: f64,
    pub p_star: f64,
    pub u_star: f64,
}

/// Pressure function f_K(p) and its derivative for one side.
fn side_fn(p: f64, s: &GasState, gamma: f64) -> (f64, f64) {
    let a = s.sound_speed(gamma);
    if p > s.p {
        // Shock branch.
        let ak = 2.0 / ((gamma + 1.0) * s.rho);
        let bk = (gamma - 1.0) / (gamma + 1.0) * s.p;
        let root = (ak / (p + bk)).sqrt();
        let f = (p - s.p) * root;
        let df = root * (1.0 - 0.5 * (p - s.p) / (p + bk));
        (f, df)
    } else {
        // Rarefaction branch.
        let pr = p / s.p;
        let f = 2.0 * a / (gamma - 1.0) * (pr.powf((gamma - 1.0) / (2.0 * gamma)) - 1.0);
        let df = 1.0 / (s.rho * a) * pr.powf(-(gamma + 1.0) / (2.0 * gamma));
        (f, df)
    }
}

pub fn solve(left: GasState, right: GasState, gamma: f64) -> Result<RiemannSolution, String> {
    for (name, s) in [("left", &left), ("right", &right)] {
        if !(s.rho > 0.0 && s.p > 0.0) {
            return Err(format!("{name} state needs rho, p > 0: {s:?}"));
        }
    }
    let al = left.sound_speed(gamma);
    let ar = right.sound_speed(gamma);
    let dv = right.v - left.v;
    if 2.0 * (al + ar) / (gamma - 1.0) <= dv {
        return Err("states separate into vacuum".into());
    }

    // Two-rarefaction estimate is positive and a good opener everywhere.
    let z = (gamma - 1.0) / (2.0 * gamma);
    let p0 = ((al + ar - 0.5 * (gamma - 1.0) * dv)
        / (al / left.p.powf(z) + ar / right.p.powf(z)))
    .powf(1.0 / z);
    let mut p = p0.max(1e-12 * (left.p + right.p));

    let mut converged = false;
    for _ in 0..100 {
        let (fl, dfl) = side_fn(p, &left, gamma);
        let (fr, dfr) = side_fn(p, &right, gamma);
        let g = fl + fr + dv;
        let dg = dfl + dfr;
        let step = g / dg;
        let p_new = (p - step).max(1e-14 * p);
        let rel = (p_new - p).abs() / (0.5 * (p_new + p));
        p = p_new;
        if rel < 1e-15 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(format!("pressure iteration stalled at p={p}"));
    }
    let (fl, _) = side_fn(p, &left, gamma);
    let (fr, _) = side_fn(p, &right, gamma);
    let u_star = 0.5 * (left.v + right.v) + 0.5 * (fr - fl);
    Ok(RiemannSolution {
        left,
        right,
        gamma,
        p_star: p,
        u_star,
    })
}

impl RiemannSolution {
    /// Wave-front positions in xi = x/t, ascending: rarefaction head and
    /// tail or shock on each side, with the contact between them.
    pub fn wave_speeds(&self) -> Vec<f64> {
        let g = self.gamma;
        let gm = g - 1.0;
        let gp = g + 1.0;
        let mut out = Vec::with_capacity(5);
        let al = self.left.sound_speed(g);
        if self.p_star > self.left.p {
            let ratio = self.p_star / self.left.p;
            out.push(self.left.v - al * (gp / (2.0 * g) * ratio + gm / (2.0 * g)).sqrt());
        } else {
            let a_star = al * (self.p_star / self.left.p).powf(gm / (2.0 * g));
            out.push(self.left.v - al);
            out.push(self.u_star - a_star);
        }
        out.push(self.u_star);
        let ar = self.right.sound_speed(g);
        if self.p_star > self.right.p {
            let ratio = self.p_star / self.right.p;
            out.push(self.right.v + ar * (gp / (2.0 * g) * ratio + gm / (2.0 * g)).sqrt());
        } else {
            let a_star = ar * (self.p_star / self.right.p).powf(gm / (2.0 * g));
            out.push(self.u_star + a_star);
            out.push(self.right.v + ar);
        }
        out
    }

    /// State on the ray x / t = xi through the initial discontinuity.
    pub fn sample(&self, xi: f64) -> GasState {
        let g = self.gamma;
        let gm = g - 1.0;
        let gp = g + 1.0;
        if xi <= self.u_star {
            let s = &self.left;
            let a = s.sound_speed(g);
            if self.p_star > s.p {
                // Left shock.
                let ratio = self.p_star / s.p;
                let speed = s.v - a * (gp / (2.0 * g) * ratio + gm / (2.0 * g)).sqrt();
                if xi <= speed {
                    *s
                } else {
                    GasState {
                        rho: s.rho * (ratio + gm / gp) / (gm / gp * ratio + 1.0),
                        v: self.u_star,
                        p: self.p_star,
                    }
                }
            } else {
                // Left rarefaction.
                let a_star = a * (self.p_star / s.p).powf(gm / (2.0 * g));
                let head = s.v - a;
                let tail = self.u_star - a_star;
                if xi <= head {
                    *s
                } else if xi >= tail {
                    GasState {
                        rho: s.rho * (self.p_star / s.p).powf(1.0 / g),
                        v: self.u_star,
                        p: self.p_star,
                    }
                } else {
                    let af = 2.0 / gp * (a + 0.5 * gm * (s.v - xi));
                    GasState {
                        rho: s.rho * (af / a).powf(2.0 / gm),
                        v: 2.0 / gp * (a + 0.5 * gm * s.v + xi),
                        p: s.p * (af / a).powf(2.0 * g / gm),
                    }
                }
            }
        } else {
            let s = &self.right;
            let a = s.sound_speed(g);
            if self.p_star > s.p {
                // Right shock.
                let ratio = self.p_star / s.p;
                let speed = s.v + a * (gp / (2.0 * g) * ratio + gm / (2.0 * g)).sqrt();
                if xi >= speed {
                    *s
                } else {
                    GasState {
                        rho: s.rho * (ratio + gm / gp) / (gm / gp * ratio + 1.0),
                        v: self.u_star,
                        p: self.p_star,
                    }
                }
            } else {
                // Right rarefaction.
                let a_star = a * (self.p_star / s.p).powf(gm / (2.0 * g));
                let head = s.v + a;
                let tail = self.u_star + a_star;
                if xi >= head {
                    *s
                } else if xi <= tail {
                    GasState {
                        rho: s.rho * (self.p_star / s.p).powf(1.0 / g),
                        v: self.u_star,
                        p: self.p_star,
                    }
                } else {
                    let af = 2.0 / gp * (a - 0.5 * gm * (s.v - xi));
                    GasState {
                        rho: s.rho * (af / a).powf(2.0 / gm),
                        v: 2.0 / gp * (-a + 0.5 * gm * s.v + xi),
                        p: s.p * (af / a).powf(2.0 * g / gm),
                    }
                }
            }
        }
    }
}
