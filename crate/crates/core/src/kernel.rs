//! Cubic-spline smoothing kernel, its analytic derivatives, and the
//! smoothing-length update.
//!
//! W(r,h) = 8/(pi h^3) * f(q), q = r/h, with
//!   f(q) = 1 - 6q^2 + 6q^3   for q <= 1/2,
//!   f(q) = 2 (1 - q)^3       for 1/2 < q <= 1,
//!   f(q) = 0                 for q > 1.
//! Both f and f' are continuous at q = 1/2 (f = 1/4, f' = -3/2).

use std::f64::consts::PI;

/// Kernel value and its analytic derivatives at (r, h).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelValue {
    /// W(r,h), units length^-3.
    pub w: f64,
    /// dW/dr, units length^-4.
    pub dw_dr: f64,
    /// dW/dh, units length^-4.
    pub dw_dh: f64,
}

pub const KERNEL_NORM: f64 = 8.0 / PI;

#[inline]
fn spline(q: f64) -> (f64, f64) {
    // Returns (f(q), f'(q)).
    if q <= 0.5 {
        (1.0 + q * q * (6.0 * q - 6.0), q * (18.0 * q - 12.0))
    } else if q <= 1.0 {
        let s = 1.0 - q;
        (2.0 * s * s * s, -6.0 * s * s)
    } else {
        (0.0, 0.0)
    }
}

/// Evaluate the kernel and both analytic derivatives.
///
/// Panics if h <= 0 or r < 0; negative distances and degenerate smoothing
/// lengths are programming errors, not data.
#[inline]
pub fn kernel_eval(r: f64, h: f64) -> KernelValue {
    assert!(h > 0.0, "kernel_eval: h must be positive, got {h}");
    debug_assert!(r >= 0.0, "kernel_eval: negative distance {r}");
    let q = r / h;
    if q > 1.0 {
        return KernelValue { w: 0.0, dw_dr: 0.0, dw_dh: 0.0 };
    }
    let (f, df) = spline(q);
    let h3 = h * h * h;
    let norm = KERNEL_NORM / h3;
    // W = C h^-3 f(q); dW/dr = C h^-4 f'; dW/dh = -C h^-4 (3 f + q f').
    KernelValue {
        w: norm * f,
        dw_dr: norm / h * df,
        dw_dh: -norm / h * (3.0 * f + q * df),
    }
}

/// Gather-side accumulators for one particle's density pass. All sums are
/// unnormalized; the ghost finalization divides curl/div by rho and converts
/// wcount into the weighted neighbour count.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DensitySummary {
    pub rho: f64,
    pub drho_dh: f64,
    /// sum_j W(r_ij, h_i); N_ngb = (4 pi / 3) h^3 * wcount.
    pub wcount: f64,
    /// sum_j dW/dh(r_ij, h_i).
    pub wcount_dh: f64,
    pub curl_v: [f64; 3],
    pub div_v: f64,
}

impl DensitySummary {
    /// Seed with the self contribution (j = i, r = 0), which the density sum
    /// always includes since r_ii = 0 < h_i.
    pub fn seeded(m: f64, h: f64) -> Self {
        let kv = kernel_eval(0.0, h);
        DensitySummary {
            rho: m * kv.w,
            drho_dh: m * kv.dw_dh,
            wcount: kv.w,
            wcount_dh: kv.dw_dh,
            curl_v: [0.0; 3],
            div_v: 0.0,
        }
    }

    /// Weighted neighbour count for smoothing length h.
    #[inline]
    pub fn n_ngb(&self, h: f64) -> f64 {
        4.0 / 3.0 * PI * h * h * h * self.wcount
    }

    /// d(N_ngb)/dh for smoothing length h.
    #[inline]
    pub fn dn_dh(&self, h: f64) -> f64 {
        4.0 / 3.0 * PI * h * h * (3.0 * self.wcount + h * self.wcount_dh)
    }
}

/// One gather contribution from a neighbour at distance rij < h: mass and
/// relative velocity terms for the density, neighbour count, and the raw
/// curl/divergence accumulators. `dx` is x_i - x_j (shift already applied)
/// and `dv` is v_i - v_j.
#[inline]
pub fn accumulate_density(
    sum: &mut DensitySummary,
    mj: f64,
    h_i: f64,
    rij: f64,
    dx: [f64; 3],
    dv: [f64; 3],
) {
    let kv = kernel_eval(rij, h_i);
    sum.rho += mj * kv.w;
    sum.drho_dh += mj * kv.dw_dh;
    sum.wcount += kv.w;
    sum.wcount_dh += kv.dw_dh;
    // m_j grad_i W = m_j dW/dr * dx / rij. The rij = 0 self term never
    // reaches here (callers pass only distinct in-range neighbours;
    // coincident pairs are skipped upstream with a diagnostic).
    let gw = mj * kv.dw_dr / rij;
    let grad = [dx[0] * gw, dx[1] * gw, dx[2] * gw];
    // curl and divergence of v: -(v_j - v_i) = dv, so the curl accumulator
    // with its leading minus sign becomes sum of dv x (m_j grad W), and the
    // divergence becomes -sum of dv . (m_j grad W). Normalization by 1/rho
    // happens in the ghost finalization.
    sum.curl_v[0] += dv[1] * grad[2] - dv[2] * grad[1];
    sum.curl_v[1] += dv[2] * grad[0] - dv[0] * grad[2];
    sum.curl_v[2] += dv[0] * grad[1] - dv[1] * grad[0];
    sum.div_v -= dv[0] * grad[0] + dv[1] * grad[1] + dv[2] * grad[2];
}

/// Result of one smoothing-length update step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HUpdate {
    pub h_new: f64,
    pub converged: bool,
}

/// One Newton step on N_ngb(h) = target, clamped to [h/2, 2h]. Falls back to
/// a multiplicative bisection step when the derivative is unusable. The
/// caller re-runs the density phase until `converged`.
pub fn update_smoothing_length(
    sum: &DensitySummary,
    h: f64,
    target: f64,
    tol: f64,
) -> HUpdate {
    let n = sum.n_ngb(h);
    if (n - target).abs() <= tol {
        return HUpdate { h_new: h, converged: true };
    }
    let dn = sum.dn_dh(h);
    let h_new = if dn > 0.0 && dn.is_finite() {
        (h - (n - target) / dn).clamp(0.5 * h, 2.0 * h)
    } else {
        // No usable derivative (isolated particle, or a pathological
        // configuration): grow or shrink by the cube-root density guess.
        h * (target / n.max(1e-300)).cbrt().clamp(0.5, 2.0)
    };
    HUpdate { h_new, converged: false }
}
