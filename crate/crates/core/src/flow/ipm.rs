//! Primal-dual interior point method (Mehrotra predictor-corrector) for
//!
//! ```text
//!     minimize    1/2 x' diag(q) x + c' x
//!     subject to  A x = b
//!                 0 <= x <= u          (u_k may be +inf)
//! ```
//!
//! with a sparse `A` stored by column. Search directions come from the normal
//! equations `A D^-1 A' dy = r`, where `D = diag(q) + Z/X + W/S` is diagonal,
//! factored with a dense Cholesky. This suits problems with few rows and many
//! columns, like the fleet flow problem.
//!
//! Dual sign convention: the Lagrangian is
//! `f(x) - y'(Ax - b) - z'x - w'(u - x)`, so stationarity reads
//! `q x + c - A'y - z + w = 0` with `z, w >= 0`.

/// Problem data. Column `k` of `A` is `cols[k]` as `(row, value)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadProgram {
    pub q_diag: Vec<f64>,
    pub c: Vec<f64>,
    pub cols: Vec<Vec<(usize, f64)>>,
    pub b: Vec<f64>,
    pub upper: Vec<Option<f64>>,
}

impl QuadProgram {
    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn num_rows(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.q_diag)
            .zip(&self.c)
            .map(|((xk, qk), ck)| 0.5 * qk * xk * xk + ck * xk)
            .sum()
    }

    /// `A x`.
    pub fn mul_a(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_rows()];
        for (col, &xk) in self.cols.iter().zip(x) {
            if xk != 0.0 {
                for &(r, a) in col {
                    out[r] += a * xk;
                }
            }
        }
        out
    }

    /// `A' y`.
    pub fn mul_at(&self, y: &[f64]) -> Vec<f64> {
        self.cols
            .iter()
            .map(|col| col.iter().map(|&(r, a)| a * y[r]).sum())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpmSettings {
    /// Relative tolerance on primal residual, dual residual and gap.
    pub tol: f64,
    pub max_iter: usize,
    /// Fraction of the step to the boundary.
    pub step_fraction: f64,
}

impl Default for IpmSettings {
    fn default() -> Self {
        IpmSettings { tol: 1e-10, max_iter: 200, step_fraction: 0.995 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpmStatus {
    Converged,
    /// Progress stopped before reaching `tol`; the caller decides whether the
    /// iterate is good enough.
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct IpmResult {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub w: Vec<f64>,
    pub iterations: usize,
    pub status: IpmStatus,
    /// Final `max(|r_p|) / (1 + max|b|)`.
    pub primal_rel: f64,
    /// Final `max(|r_d|) / (1 + max|c|)`.
    pub dual_rel: f64,
    /// Final `(x'z + s'w) / (1 + |f(x)|)`.
    pub gap_rel: f64,
}

/// Solves `qp`, holding the duals of `dropped_rows` at zero. Those rows must
/// be linear combinations of the others (e.g. one row of a circulation).
pub fn solve(qp: &QuadProgram, dropped_rows: &[usize], settings: &IpmSettings) -> IpmResult {
    let n = qp.num_vars();
    let nrows = qp.num_rows();

    // Compact row numbering without the dropped rows.
    let mut row_map = vec![usize::MAX; nrows];
    let mut kept = 0;
    for (r, slot) in row_map.iter_mut().enumerate() {
        if !dropped_rows.contains(&r) {
            *slot = kept;
            kept += 1;
        }
    }
    let cols: Vec<Vec<(usize, f64)>> = qp
        .cols
        .iter()
        .map(|col| {
            col.iter()
                .filter(|(r, _)| row_map[*r] != usize::MAX)
                .map(|&(r, a)| (row_map[r], a))
                .collect()
        })
        .collect();
    let b: Vec<f64> = (0..nrows).filter(|&r| row_map[r] != usize::MAX).map(|r| qp.b[r]).collect();
    let upper: Vec<f64> = qp.upper.iter().map(|u| u.unwrap_or(f64::INFINITY)).collect();
    let bounded: Vec<bool> = upper.iter().map(|u| u.is_finite()).collect();
    let n_bounded = bounded.iter().filter(|&&f| f).count();

    let b_norm = inf_norm(&b);
    let c_norm = inf_norm(&qp.c);

    let mut x: Vec<f64> = upper
        .iter()
        .map(|&u| if u.is_finite() { 0.5 * u } else { 1.0 })
        .collect();
    let mut z = vec![1.0; n];
    let mut w: Vec<f64> = bounded.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect();
    let mut y = vec![0.0; kept];

    let mut best: Option<(f64, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, [f64; 3])> = None;
    let mut status = IpmStatus::MaxIterations;
    let mut iterations = 0;
    let mut best_iter = 0;

    let mut dx = vec![0.0; n];
    let mut dz = vec![0.0; n];
    let mut dw = vec![0.0; n];

    for iter in 0..=settings.max_iter {
        iterations = iter;
        let s: Vec<f64> = (0..n)
            .map(|k| if bounded[k] { upper[k] - x[k] } else { f64::INFINITY })
            .collect();

        // residuals
        let mut rp = vec![0.0; kept];
        for (col, &xk) in cols.iter().zip(&x) {
            for &(r, a) in col {
                rp[r] += a * xk;
            }
        }
        for (r, bi) in rp.iter_mut().zip(&b) {
            *r -= bi;
        }
        let rd: Vec<f64> = (0..n)
            .map(|k| {
                let aty: f64 = cols[k].iter().map(|&(r, a)| a * y[r]).sum();
                qp.q_diag[k] * x[k] + qp.c[k] - aty - z[k] + w[k]
            })
            .collect();
        let comp: f64 = (0..n)
            .map(|k| x[k] * z[k] + if bounded[k] { s[k] * w[k] } else { 0.0 })
            .sum();
        let mu = comp / (n + n_bounded) as f64;
        let obj = qp.objective(&x);

        let metrics = [
            inf_norm(&rp) / (1.0 + b_norm),
            inf_norm(&rd) / (1.0 + c_norm),
            comp / (1.0 + obj.abs()),
        ];
        let merit = metrics.iter().copied().fold(0.0, f64::max);
        if best.as_ref().map_or(true, |bst| merit < bst.0) {
            best = Some((merit, x.clone(), y.clone(), z.clone(), w.clone(), metrics));
            best_iter = iter;
        }
        if merit <= settings.tol {
            status = IpmStatus::Converged;
            break;
        }
        if iter == settings.max_iter {
            break;
        }
        if iter - best_iter >= 15 || !merit.is_finite() {
            status = IpmStatus::Stalled;
            break;
        }

        // D and the normal matrix
        let d_inv: Vec<f64> = (0..n)
            .map(|k| {
                let mut d = qp.q_diag[k] + z[k] / x[k];
                if bounded[k] {
                    d += w[k] / s[k];
                }
                1.0 / d
            })
            .collect();
        let mut normal = vec![0.0; kept * kept];
        for (col, &dk) in cols.iter().zip(&d_inv) {
            for &(r1, a1) in col {
                let scaled = a1 * dk;
                for &(r2, a2) in col {
                    if r2 <= r1 {
                        normal[r1 * kept + r2] += scaled * a2;
                    }
                }
            }
        }
        let chol = match Cholesky::factor(normal, kept) {
            Some(f) => f,
            None => {
                status = IpmStatus::Stalled;
                break;
            }
        };

        // Solves for a direction given complementarity targets.
        let direction = |rxz: &[f64], rsw: &[f64], dx: &mut [f64], dz: &mut [f64], dw: &mut [f64]| {
            let h: Vec<f64> = (0..n)
                .map(|k| {
                    let mut h = -rd[k] - rxz[k] / x[k];
                    if bounded[k] {
                        h += rsw[k] / s[k];
                    }
                    h
                })
                .collect();
            let mut rhs: Vec<f64> = rp.iter().map(|r| -r).collect();
            for k in 0..n {
                let t = d_inv[k] * h[k];
                for &(r, a) in &cols[k] {
                    rhs[r] -= a * t;
                }
            }
            let dy = chol.solve(&rhs);
            for k in 0..n {
                let aty: f64 = cols[k].iter().map(|&(r, a)| a * dy[r]).sum();
                dx[k] = d_inv[k] * (h[k] + aty);
                dz[k] = -(rxz[k] + z[k] * dx[k]) / x[k];
                dw[k] = if bounded[k] { -(rsw[k] - w[k] * dx[k]) / s[k] } else { 0.0 };
            }
            dy
        };

        // predictor
        let rxz: Vec<f64> = (0..n).map(|k| x[k] * z[k]).collect();
        let rsw: Vec<f64> = (0..n).map(|k| if bounded[k] { s[k] * w[k] } else { 0.0 }).collect();
        direction(&rxz, &rsw, &mut dx, &mut dz, &mut dw);
        let alpha_aff = max_step(&x, &s, &z, &w, &bounded, &dx, &dz, &dw);
        let comp_aff: f64 = (0..n)
            .map(|k| {
                let mut t = (x[k] + alpha_aff * dx[k]) * (z[k] + alpha_aff * dz[k]);
                if bounded[k] {
                    t += (s[k] - alpha_aff * dx[k]) * (w[k] + alpha_aff * dw[k]);
                }
                t
            })
            .sum();
        let mu_aff = comp_aff / (n + n_bounded) as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // corrector
        let rxz: Vec<f64> = (0..n).map(|k| x[k] * z[k] + dx[k] * dz[k] - sigma * mu).collect();
        let rsw: Vec<f64> = (0..n)
            .map(|k| if bounded[k] { s[k] * w[k] - dx[k] * dw[k] - sigma * mu } else { 0.0 })
            .collect();
        let dy = direction(&rxz, &rsw, &mut dx, &mut dz, &mut dw);
        let alpha = (settings.step_fraction * max_step(&x, &s, &z, &w, &bounded, &dx, &dz, &dw)).min(1.0);

        for k in 0..n {
            x[k] += alpha * dx[k];
            z[k] += alpha * dz[k];
            if bounded[k] {
                w[k] += alpha * dw[k];
            }
        }
        for (yr, d) in y.iter_mut().zip(&dy) {
            *yr += alpha * d;
        }
    }

    let (_, x, y_kept, z, w, metrics) = best.expect("at least one iterate evaluated");
    let mut y = vec![0.0; nrows];
    for (r, &slot) in row_map.iter().enumerate() {
        if slot != usize::MAX {
            y[r] = y_kept[slot];
        }
    }
    IpmResult {
        x,
        y,
        z,
        w,
        iterations,
        status,
        primal_rel: metrics[0],
        dual_rel: metrics[1],
        gap_rel: metrics[2],
    }
}

#[allow(clippy::too_many_arguments)]
fn max_step(
    x: &[f64],
    s: &[f64],
    z: &[f64],
    w: &[f64],
    bounded: &[bool],
    dx: &[f64],
    dz: &[f64],
    dw: &[f64],
) -> f64 {
    let mut alpha: f64 = 1.0;
    for k in 0..x.len() {
        if dx[k] < 0.0 {
            alpha = alpha.min(-x[k] / dx[k]);
        }
        if dz[k] < 0.0 {
            alpha = alpha.min(-z[k] / dz[k]);
        }
        if bounded[k] {
            if dx[k] > 0.0 {
                alpha = alpha.min(s[k] / dx[k]);
            }
            if dw[k] < 0.0 {
                alpha = alpha.min(-w[k] / dw[k]);
            }
        }
    }
    alpha
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Dense lower Cholesky factor of a symmetric matrix given by its lower
/// triangle (row-major). Pivots that collapse relative to the diagonal are
/// replaced by a huge value, which zeroes the matching solution component.
struct Cholesky {
    l: Vec<f64>,
    n: usize,
}

impl Cholesky {
    fn factor(mut a: Vec<f64>, n: usize) -> Option<Self> {
        let max_diag = (0..n).map(|i| a[i * n + i]).fold(0.0, f64::max);
        if !(max_diag.is_finite()) {
            return None;
        }
        let tiny = 1e-30 * max_diag.max(1.0);
        for j in 0..n {
            let mut d = a[j * n + j];
            for k in 0..j {
                d -= a[j * n + k] * a[j * n + k];
            }
            if !d.is_finite() {
                return None;
            }
            let d = if d <= tiny { 1e64 } else { d.sqrt() };
            a[j * n + j] = d;
            for i in (j + 1)..n {
                let mut v = a[i * n + j];
                let (ri, rj) = (i * n, j * n);
                for k in 0..j {
                    v -= a[ri + k] * a[rj + k];
                }
                a[ri + j] = v / d;
            }
        }
        Some(Cholesky { l: a, n })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let l = &self.l;
        let mut y = rhs.to_vec();
        for i in 0..n {
            let mut v = y[i];
            for k in 0..i {
                v -= l[i * n + k] * y[k];
            }
            y[i] = v / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut v = y[i];
            for k in (i + 1)..n {
                v -= l[k * n + i] * y[k];
            }
            y[i] = v / l[i * n + i];
        }
        y
    }
}
