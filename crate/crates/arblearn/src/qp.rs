//! Dense primal-dual interior-point solver for small convex quadratic
//! programs of the form
//!
//! ```text
//!     minimize    (1/2) x' diag(q) x + c' x
//!     subject to  G x <= h
//! ```
//!
//! with `q >= 0` componentwise, so the linear-programming case `q = 0` is
//! handled by the same path. The dispatch problems this crate builds have a
//! few hundred variables at most, so everything is dense and factorizations
//! are plain Cholesky on the condensed normal equations
//!
//! ```text
//!     (diag(q) + G' D G) dx = rhs,   D = diag(z / s).
//! ```
//!
//! The iteration is Mehrotra predictor-corrector with an infeasible start.
//! On ties (a face of optima) the central path converges to the analytic
//! center of the optimal face, which is the tie-breaking behavior the rest of
//! the crate relies on.

/// Inputs are borrowed; `g` is row-major with `m` rows and `n` columns.
pub(crate) struct QpProblem<'a> {
    pub quad_diag: &'a [f64],
    pub linear: &'a [f64],
    pub g: &'a [f64],
    pub h: &'a [f64],
    pub n: usize,
    pub m: usize,
}

pub(crate) struct QpSettings {
    /// Relative duality-gap tolerance, `s'z / (1 + |obj|) <= tol`.
    pub tol: f64,
    /// Relative residual tolerance for primal and dual feasibility.
    pub feas_tol: f64,
    pub max_iter: usize,
}

pub(crate) struct QpSolution {
    pub x: Vec<f64>,
}

pub(crate) enum QpOutcome {
    Converged(QpSolution),
    /// Best relative duality gap seen before hitting the iteration cap.
    IterationLimit { gap: f64 },
}

/// In-place lower Cholesky factorization. Returns false on a non-positive
/// pivot so the caller can add regularization and retry.
fn cholesky_factor(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / d;
        }
    }
    true
}

/// Solves `L L' x = b` given the factor from [`cholesky_factor`].
fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= l[i * n + k] * b[k];
        }
        b[i] = v / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in (i + 1)..n {
            v -= l[k * n + i] * b[k];
        }
        b[i] = v / l[i * n + i];
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |a, b| a.max(b.abs()))
}

/// Solves the QP starting from `x0` (any point; the start may violate the
/// constraints). Deterministic for fixed inputs.
pub(crate) fn solve(p: &QpProblem, settings: &QpSettings, x0: &[f64]) -> QpOutcome {
    let (n, m) = (p.n, p.m);
    debug_assert_eq!(p.quad_diag.len(), n);
    debug_assert_eq!(p.linear.len(), n);
    debug_assert_eq!(p.g.len(), m * n);
    debug_assert_eq!(p.h.len(), m);
    debug_assert_eq!(x0.len(), n);

    let mut x = x0.to_vec();
    let mut s = vec![0.0; m];
    let mut z = vec![1.0; m];

    let gx = mat_vec(p.g, m, n, &x);
    for i in 0..m {
        s[i] = (p.h[i] - gx[i]).max(1.0);
    }

    let h_scale = 1.0 + inf_norm(p.h);
    let c_scale = 1.0 + inf_norm(p.linear);

    let mut r_d = vec![0.0; n];
    let mut r_p = vec![0.0; m];
    let mut normal = vec![0.0; n * n];
    let mut best_gap = f64::INFINITY;

    for _ in 0..settings.max_iter {
        // Residuals at the current iterate.
        let gx = mat_vec(p.g, m, n, &x);
        for i in 0..m {
            r_p[i] = gx[i] + s[i] - p.h[i];
        }
        let gtz = mat_t_vec(p.g, m, n, &z);
        for j in 0..n {
            r_d[j] = p.quad_diag[j] * x[j] + p.linear[j] + gtz[j];
        }

        let dot_sz: f64 = s.iter().zip(&z).map(|(a, b)| a * b).sum();
        let mu = dot_sz / m as f64;
        let obj = objective(p, &x);
        let gap_rel = dot_sz / (1.0 + obj.abs());
        best_gap = best_gap.min(gap_rel);

        // Residuals are judged relative to the largest term entering them:
        // near a degenerate face the multipliers z grow large and r_d cannot
        // be evaluated below roundoff in G'z, so an absolute test would
        // reject iterates that are optimal to working precision.
        let p_scale = h_scale.max(inf_norm(&gx)).max(inf_norm(&s));
        let d_scale = c_scale.max(inf_norm(&gtz));
        let rp_ok = inf_norm(&r_p) <= settings.feas_tol * p_scale;
        let rd_rel = inf_norm(&r_d) / d_scale;
        if gap_rel <= settings.tol && rp_ok && rd_rel <= settings.feas_tol {
            return QpOutcome::Converged(QpSolution { x });
        }
        // Working-precision exit for degenerate faces: when two constraint
        // columns nearly coincide the dual residual bottoms out at roundoff
        // while complementarity keeps shrinking. A gap several orders below
        // the request, machine-level primal feasibility, and a dual residual
        // within a hundred times its target certify the iterate; pushing on
        // only drives z/s toward overflow.
        if gap_rel <= 1e-4 * settings.tol && rp_ok && rd_rel <= 1e2 * settings.feas_tol {
            return QpOutcome::Converged(QpSolution { x });
        }

        // Normal matrix diag(q) + G' D G with D = diag(z/s).
        let d: Vec<f64> = z.iter().zip(&s).map(|(zi, si)| zi / si).collect();
        normal.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            normal[j * n + j] = p.quad_diag[j];
        }
        for i in 0..m {
            let row = &p.g[i * n..(i + 1) * n];
            let di = d[i];
            for a in 0..n {
                let ga = row[a];
                if ga == 0.0 {
                    continue;
                }
                let w = di * ga;
                for b in a..n {
                    normal[a * n + b] += w * row[b];
                }
            }
        }
        for a in 0..n {
            for b in (a + 1)..n {
                normal[b * n + a] = normal[a * n + b];
            }
        }

        // An unattainable tolerance can drive a slack to zero and overflow
        // z/s; no diagonal bump repairs a non-finite matrix, so report the
        // best gap reached instead.
        if normal.iter().any(|v| !v.is_finite()) {
            return QpOutcome::IterationLimit { gap: best_gap };
        }

        // Factor, bumping the diagonal if roundoff makes a pivot collapse.
        let max_diag = (0..n)
            .map(|j| normal[j * n + j])
            .fold(0.0_f64, f64::max)
            .max(1.0);
        let mut factor = normal.clone();
        let mut reg = 0.0;
        let mut ok = cholesky_factor(&mut factor, n);
        while !ok {
            reg = if reg == 0.0 { 1e-12 * max_diag } else { reg * 100.0 };
            if !(reg <= 1e-2 * max_diag) {
                return QpOutcome::IterationLimit { gap: best_gap };
            }
            factor.copy_from_slice(&normal);
            for j in 0..n {
                factor[j * n + j] += reg;
            }
            ok = cholesky_factor(&mut factor, n);
        }

        // Predictor (affine) direction: target s.z -> 0.
        let (_dx_aff, ds_aff, dz_aff) = {
            let rc: Vec<f64> = s.iter().zip(&z).map(|(si, zi)| si * zi).collect();
            newton_step(p, &factor, &d, &r_d, &r_p, &rc, &s, &z)
        };
        let alpha_p_aff = max_step(&s, &ds_aff);
        let alpha_d_aff = max_step(&z, &dz_aff);
        let mut mu_aff = 0.0;
        for i in 0..m {
            mu_aff += (s[i] + alpha_p_aff * ds_aff[i]) * (z[i] + alpha_d_aff * dz_aff[i]);
        }
        mu_aff /= m as f64;
        let sigma = if mu > 0.0 {
            (mu_aff / mu).powi(3).clamp(0.0, 1.0)
        } else {
            0.0
        };

        // Corrector: recenter toward sigma*mu and cancel the second-order
        // term from the predictor.
        let (dx, ds, dz) = {
            let rc: Vec<f64> = (0..m)
                .map(|i| s[i] * z[i] + ds_aff[i] * dz_aff[i] - sigma * mu)
                .collect();
            newton_step(p, &factor, &d, &r_d, &r_p, &rc, &s, &z)
        };

        let tau = 0.995;
        let alpha_p = (tau * max_step(&s, &ds)).min(1.0);
        let alpha_d = (tau * max_step(&z, &dz)).min(1.0);
        for j in 0..n {
            x[j] += alpha_p * dx[j];
        }
        for i in 0..m {
            s[i] += alpha_p * ds[i];
            z[i] += alpha_d * dz[i];
        }
    }

    QpOutcome::IterationLimit { gap: best_gap }
}

/// One condensed Newton solve for a given complementarity target `rc`
/// (entries `s_i z_i - target_i`). Returns `(dx, ds, dz)`.
#[allow(clippy::too_many_arguments)]
fn newton_step(
    p: &QpProblem,
    factor: &[f64],
    d: &[f64],
    r_d: &[f64],
    r_p: &[f64],
    rc: &[f64],
    s: &[f64],
    z: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (n, m) = (p.n, p.m);
    // rhs = -r_d - G' [(z.r_p - rc) / s]
    let w: Vec<f64> = (0..m).map(|i| (z[i] * r_p[i] - rc[i]) / s[i]).collect();
    let gtw = mat_t_vec(p.g, m, n, &w);
    let mut dx: Vec<f64> = (0..n).map(|j| -r_d[j] - gtw[j]).collect();
    cholesky_solve(factor, n, &mut dx);

    let gdx = mat_vec(p.g, m, n, &dx);
    let mut ds = vec![0.0; m];
    let mut dz = vec![0.0; m];
    for i in 0..m {
        ds[i] = -r_p[i] - gdx[i];
        dz[i] = d[i] * gdx[i] + w[i];
    }
    (dx, ds, dz)
}

/// Largest step in [0, 1] keeping `v + alpha dv` strictly positive.
fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    let mut alpha = 1.0_f64;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            alpha = alpha.min(-v[i] / dv[i]);
        }
    }
    alpha
}

fn objective(p: &QpProblem, x: &[f64]) -> f64 {
    let mut obj = 0.0;
    for j in 0..p.n {
        obj += 0.5 * p.quad_diag[j] * x[j] * x[j] + p.linear[j] * x[j];
    }
    obj
}

fn mat_vec(g: &[f64], m: usize, n: usize, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m];
    for i in 0..m {
        let row = &g[i * n..(i + 1) * n];
        out[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
    out
}

fn mat_t_vec(g: &[f64], m: usize, n: usize, y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for i in 0..m {
        let row = &g[i * n..(i + 1) * n];
        let yi = y[i];
        if yi == 0.0 {
            continue;
        }
        for j in 0..n {
            out[j] += yi * row[j];
        }
    }
    out
}
