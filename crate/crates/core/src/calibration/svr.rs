//! Sequential minimal optimization for the epsilon-SVR dual.
//!
//! The dual is written over `2l` variables `beta`, the first `l` carrying the
//! upper tube multipliers and the last `l` the lower ones:
//!
//! ```text
//! minimize   1/2 beta' Q beta + p' beta
//! subject to y' beta = 0,  0 <= beta_t <= C
//! y_t = +1 (t < l), -1 (t >= l)
//! p_t = eps - z_t (t < l),  eps + z_t (t >= l)
//! Q_st = y_s y_t K(s mod l, t mod l)
//! ```
//!
//! Each iteration picks a maximal violating pair using second-order
//! information, solves the two-variable subproblem in closed form, clips to
//! the box and updates the gradient. Iteration stops once the maximal KKT
//! violation `Gmax + Gmax2` drops below the tolerance.

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Solution {
    /// `beta_i - beta_{i+l}` for each training point.
    pub coef: Vec<f64>,
    /// Offset added to the kernel expansion.
    pub bias: f64,
    /// Maximal KKT violation at exit.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Row-major `l x l` kernel matrix.
pub(crate) struct Kernel {
    l: usize,
    k: Vec<f64>,
}

impl Kernel {
    pub fn rbf(points: &[[f64; 2]], gamma: f64) -> Self {
        let l = points.len();
        let mut k = vec![0.0; l * l];
        for i in 0..l {
            for j in i..l {
                let v = rbf(&points[i], &points[j], gamma);
                k[i * l + j] = v;
                k[j * l + i] = v;
            }
        }
        Self { l, k }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.k[i * self.l..(i + 1) * self.l]
    }
}

pub(crate) fn rbf(a: &[f64; 2], b: &[f64; 2], gamma: f64) -> f64 {
    let d0 = a[0] - b[0];
    let d1 = a[1] - b[1];
    (-gamma * (d0 * d0 + d1 * d1)).exp()
}

pub(crate) fn solve(kernel: &Kernel, z: &[f64], c: f64, eps: f64, tol: f64, max_iter: usize) -> Solution {
    let l = kernel.l;
    let n = 2 * l;
    let y = |t: usize| if t < l { 1.0 } else { -1.0 };
    let base = |t: usize| if t < l { t } else { t - l };
    let diag = |t: usize| kernel.k[base(t) * l + base(t)];
    // Q_st = y_s y_t K(base s, base t)
    let q = |s: usize, t: usize| y(s) * y(t) * kernel.row(base(s))[base(t)];

    let mut beta = vec![0.0; n];
    let mut grad: Vec<f64> = (0..n).map(|t| if t < l { eps - z[t] } else { eps + z[t - l] }).collect();
    let at_upper = |b: f64| b >= c;
    let at_lower = |b: f64| b <= 0.0;

    let mut iterations = 0;
    let mut residual;
    loop {
        // Working set selection.
        let mut gmax = f64::NEG_INFINITY;
        let mut gmax2 = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            let v = if y(t) > 0.0 {
                if at_upper(beta[t]) {
                    continue;
                }
                -grad[t]
            } else {
                if at_lower(beta[t]) {
                    continue;
                }
                grad[t]
            };
            if v >= gmax {
                gmax = v;
                i_sel = Some(t);
            }
        }
        let mut j_sel = None;
        if let Some(i) = i_sel {
            let mut best = f64::INFINITY;
            for t in 0..n {
                let (grad_diff, violation) = if y(t) > 0.0 {
                    if at_lower(beta[t]) {
                        continue;
                    }
                    (gmax + grad[t], grad[t])
                } else {
                    if at_upper(beta[t]) {
                        continue;
                    }
                    (gmax - grad[t], -grad[t])
                };
                if violation >= gmax2 {
                    gmax2 = violation;
                }
                if grad_diff > 0.0 {
                    let k_it = kernel.row(base(i))[base(t)];
                    let quad = diag(i) + diag(t) - 2.0 * k_it;
                    let obj = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                    if obj <= best {
                        best = obj;
                        j_sel = Some(t);
                    }
                }
            }
        }
        residual = (gmax + gmax2).max(0.0);
        if !residual.is_finite() {
            residual = 0.0;
        }
        let (Some(i), Some(j)) = (i_sel, j_sel) else {
            break;
        };
        if gmax + gmax2 < tol {
            break;
        }
        if iterations >= max_iter {
            return finish(kernel, &beta, &grad, c, residual, iterations, false);
        }
        iterations += 1;

        let (old_i, old_j) = (beta[i], beta[j]);
        let q_ij = q(i, j);
        if y(i) != y(j) {
            let mut quad = diag(i) + diag(j) + 2.0 * q_ij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = beta[i] - beta[j];
            beta[i] += delta;
            beta[j] += delta;
            if diff > 0.0 {
                if beta[j] < 0.0 {
                    beta[j] = 0.0;
                    beta[i] = diff;
                }
            } else if beta[i] < 0.0 {
                beta[i] = 0.0;
                beta[j] = -diff;
            }
            if diff > 0.0 {
                if beta[i] > c {
                    beta[i] = c;
                    beta[j] = c - diff;
                }
            } else if beta[j] > c {
                beta[j] = c;
                beta[i] = c + diff;
            }
        } else {
            let mut quad = diag(i) + diag(j) - 2.0 * q_ij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = beta[i] + beta[j];
            beta[i] -= delta;
            beta[j] += delta;
            if sum > c {
                if beta[i] > c {
                    beta[i] = c;
                    beta[j] = sum - c;
                }
            } else if beta[j] < 0.0 {
                beta[j] = 0.0;
                beta[i] = sum;
            }
            if sum > c {
                if beta[j] > c {
                    beta[j] = c;
                    beta[i] = sum - c;
                }
            } else if beta[i] < 0.0 {
                beta[i] = 0.0;
                beta[j] = sum;
            }
        }

        let (di, dj) = (beta[i] - old_i, beta[j] - old_j);
        let (row_i, row_j) = (kernel.row(base(i)), kernel.row(base(j)));
        let (yi, yj) = (y(i), y(j));
        for t in 0..n {
            let yt = y(t);
            let bt = base(t);
            grad[t] += yi * yt * row_i[bt] * di + yj * yt * row_j[bt] * dj;
        }
    }
    finish(kernel, &beta, &grad, c, residual, iterations, true)
}

fn finish(
    kernel: &Kernel,
    beta: &[f64],
    grad: &[f64],
    c: f64,
    residual: f64,
    iterations: usize,
    converged: bool,
) -> Solution {
    let l = kernel.l;
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut free = 0usize;
    let mut sum_free = 0.0;
    for (t, (&b, &g)) in beta.iter().zip(grad).enumerate() {
        let yt = if t < l { 1.0 } else { -1.0 };
        let yg = yt * g;
        if b >= c {
            if yt < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if b <= 0.0 {
            if yt > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 { sum_free / free as f64 } else { (ub + lb) / 2.0 };
    Solution {
        coef: (0..l).map(|i| beta[i] - beta[i + l]).collect(),
        bias: -rho,
        residual,
        iterations,
        converged,
    }
}
