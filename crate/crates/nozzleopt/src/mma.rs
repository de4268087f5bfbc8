//! Method of Moving Asymptotes update step for box-constrained problems with
//! a small number of inequality constraints.
//!
//! Standard asymptote adaptation (init 0.5, grow 1.2, shrink 0.7 on
//! oscillation) around the separable convex subproblem, solved with a
//! primal-dual interior point method to tight complementarity. Elastic
//! variables keep the subproblem feasible for any constraint values; a large
//! elastic optimum is reported as a constraint-restoration step.
//!
//! Constraints are rescaled once, on the first update, so each gradient has
//! unit infinity-norm order; the p-mean aggregation of the size constraint
//! otherwise produces badly scaled rows.

use crate::{Error, Result};

const ASY_INIT: f64 = 0.5;
const ASY_INCR: f64 = 1.2;
const ASY_DECR: f64 = 0.7;
const MOVE_LIMIT: f64 = 0.2;
const TRUST_FACTOR: f64 = 2.5;
const ASY_FLOOR: f64 = 1e-6;
const MAX_CONSTRAINTS: usize = 8;
const EPSI_MIN: f64 = 1e-9;
const ELASTIC_PENALTY: f64 = 1000.0;
/// Constraint scale factors are clamped into this range.
const SCALE_RANGE: (f64, f64) = (1.0, 1e3);

/// Optimizer state carried between iterations.
#[derive(Debug, Clone)]
pub struct MmaState {
    n: usize,
    iter: usize,
    low: Vec<f64>,
    upp: Vec<f64>,
    xold1: Vec<f64>,
    xold2: Vec<f64>,
    constraint_scale: Vec<f64>,
    objective_scale: f64,
    pub move_limit: f64,
}

/// Result of one MMA update.
#[derive(Debug, Clone)]
pub struct MmaUpdate {
    pub x: Vec<f64>,
    /// True when the elastic variables stayed active: the subproblem could
    /// not satisfy the linearized constraints and the step mainly restores
    /// feasibility.
    pub restoration: bool,
}

impl MmaState {
    pub fn new(n: usize) -> Self {
        MmaState {
            n,
            iter: 0,
            low: vec![0.0; n],
            upp: vec![1.0; n],
            xold1: vec![0.0; n],
            xold2: vec![0.0; n],
            constraint_scale: Vec::new(),
            objective_scale: 1.0,
            move_limit: MOVE_LIMIT,
        }
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }
}

fn check_finite(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite {name} passed to the MMA update")));
    }
    Ok(())
}

/// One MMA design update on box bounds `[0, 1]`.
///
/// `g`/`dg` hold the inequality constraints `g_k <= 0` and their gradients
/// (one row per constraint).
pub fn mma_update(
    x: &[f64],
    _f0: f64,
    df0: &[f64],
    g: &[f64],
    dg: &[Vec<f64>],
    state: &mut MmaState,
) -> Result<MmaUpdate> {
    let n = state.n;
    let m = g.len();
    if x.len() != n || df0.len() != n {
        return Err(Error::Shape("design/gradient length does not match the MMA state".into()));
    }
    if m > MAX_CONSTRAINTS {
        return Err(Error::Config(format!(
            "at most {MAX_CONSTRAINTS} constraints supported, got {m}"
        )));
    }
    check_finite("objective gradient", df0)?;
    check_finite("constraint values", g)?;
    for row in dg {
        if row.len() != n {
            return Err(Error::Shape("constraint gradient row length mismatch".into()));
        }
        check_finite("constraint gradient", row)?;
    }

    // freeze scaling on the first call so all rows are O(1)
    if state.iter == 0 {
        state.constraint_scale = dg
            .iter()
            .map(|row| {
                let norm = row.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
                (1.0 / norm.max(1e-12)).clamp(SCALE_RANGE.0, SCALE_RANGE.1)
            })
            .collect();
        let obj_norm = df0.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        state.objective_scale = 1.0 / obj_norm.max(1e-12);
    }
    if state.constraint_scale.len() != m {
        return Err(Error::Config(format!(
            "constraint count changed from {} to {m} mid-run",
            state.constraint_scale.len()
        )));
    }

    let iter = state.iter;
    // asymptote update
    if iter < 2 {
        for i in 0..n {
            state.low[i] = x[i] - ASY_INIT;
            state.upp[i] = x[i] + ASY_INIT;
        }
    } else {
        for i in 0..n {
            let osc = (x[i] - state.xold1[i]) * (state.xold1[i] - state.xold2[i]);
            let gamma = if osc < 0.0 {
                ASY_DECR
            } else if osc > 0.0 {
                ASY_INCR
            } else {
                1.0
            };
            let mut low = x[i] - gamma * (state.xold1[i] - state.low[i]);
            let mut upp = x[i] + gamma * (state.upp[i] - state.xold1[i]);
            // trust-region coupling: the asymptote span may not exceed a
            // multiple of the last actual step, which contracts the
            // approximation onto stationary points instead of letting the
            // near-linear subproblem bounce between the move bounds
            let trust = (TRUST_FACTOR * (x[i] - state.xold1[i]).abs()).max(ASY_FLOOR);
            low = low.max(x[i] - trust);
            upp = upp.min(x[i] + trust);
            low = low.max(x[i] - 10.0).min(x[i] - ASY_FLOOR);
            upp = upp.min(x[i] + 10.0).max(x[i] + ASY_FLOOR);
            state.low[i] = low;
            state.upp[i] = upp;
        }
    }

    // move-limited box
    let move_limit = state.move_limit;
    let mut alfa = vec![0.0; n];
    let mut beta = vec![0.0; n];
    for i in 0..n {
        alfa[i] = (state.low[i] + 0.1 * (x[i] - state.low[i]))
            .max(x[i] - move_limit)
            .max(0.0);
        beta[i] = (state.upp[i] - 0.1 * (state.upp[i] - x[i]))
            .min(x[i] + move_limit)
            .min(1.0);
    }

    // separable approximations
    const RAA0: f64 = 1e-5;
    let fscale = state.objective_scale;
    let mut p0 = vec![0.0; n];
    let mut q0 = vec![0.0; n];
    for i in 0..n {
        let ux = state.upp[i] - x[i];
        let xl = x[i] - state.low[i];
        let dplus = (fscale * df0[i]).max(0.0);
        let dminus = (-fscale * df0[i]).max(0.0);
        let pq = 0.001 * (dplus + dminus) + RAA0;
        p0[i] = (dplus + pq) * ux * ux;
        q0[i] = (dminus + pq) * xl * xl;
    }
    let mut pmat = vec![vec![0.0; n]; m];
    let mut qmat = vec![vec![0.0; n]; m];
    let mut b = vec![0.0; m];
    for k in 0..m {
        let s = state.constraint_scale[k];
        let mut bk = -s * g[k];
        for i in 0..n {
            let ux = state.upp[i] - x[i];
            let xl = x[i] - state.low[i];
            let dplus = (s * dg[k][i]).max(0.0);
            let dminus = (-s * dg[k][i]).max(0.0);
            let pq = 0.001 * (dplus + dminus) + RAA0;
            pmat[k][i] = (dplus + pq) * ux * ux;
            qmat[k][i] = (dminus + pq) * xl * xl;
            // b_k = sum_i (P_ki/ux + Q_ki/xl) - g_k, both evaluated at x
            bk += pmat[k][i] / ux + qmat[k][i] / xl;
        }
        b[k] = bk;
    }

    let (x_new, restoration) =
        solve_subproblem(n, m, &alfa, &beta, &state.low, &state.upp, &p0, &q0, &pmat, &qmat, &b)?;

    state.xold2 = std::mem::take(&mut state.xold1);
    state.xold1 = x.to_vec();
    state.iter += 1;
    Ok(MmaUpdate { x: x_new, restoration })
}

/// Unconstrained separable minimum: closed form per variable.
fn solve_unconstrained(
    n: usize,
    alfa: &[f64],
    beta: &[f64],
    low: &[f64],
    upp: &[f64],
    p0: &[f64],
    q0: &[f64],
) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let sp = p0[i].sqrt();
            let sq = q0[i].sqrt();
            let x = (sp * low[i] + sq * upp[i]) / (sp + sq);
            x.clamp(alfa[i], beta[i])
        })
        .collect()
}

/// Primal-dual interior point solver for the MMA subproblem (elastic
/// variables y, minimax variable z).
#[allow(clippy::too_many_arguments)]
fn solve_subproblem(
    n: usize,
    m: usize,
    alfa: &[f64],
    beta: &[f64],
    low: &[f64],
    upp: &[f64],
    p0: &[f64],
    q0: &[f64],
    pmat: &[Vec<f64>],
    qmat: &[Vec<f64>],
    b: &[f64],
) -> Result<(Vec<f64>, bool)> {
    if m == 0 {
        return Ok((solve_unconstrained(n, alfa, beta, low, upp, p0, q0), false));
    }
    let a0 = 1.0;
    let avec = vec![0.0; m];
    let cvec = vec![ELASTIC_PENALTY; m];
    let dvec = vec![1.0; m];

    let mut x: Vec<f64> = (0..n).map(|i| 0.5 * (alfa[i] + beta[i])).collect();
    let mut y = vec![1.0; m];
    let mut z = 1.0;
    let mut lam = vec![1.0; m];
    let mut xsi: Vec<f64> = (0..n).map(|i| (1.0 / (x[i] - alfa[i])).max(1.0)).collect();
    let mut eta: Vec<f64> = (0..n).map(|i| (1.0 / (beta[i] - x[i])).max(1.0)).collect();
    let mut mu: Vec<f64> = cvec.iter().map(|c| (0.5 * c).max(1.0)).collect();
    let mut zet = 1.0;
    let mut s = vec![1.0; m];

    #[allow(clippy::too_many_arguments)]
    let residual = |x: &[f64],
                    y: &[f64],
                    z: f64,
                    lam: &[f64],
                    xsi: &[f64],
                    eta: &[f64],
                    mu: &[f64],
                    zet: f64,
                    s: &[f64],
                    epsi: f64|
     -> (f64, f64) {
        let mut sq = 0.0_f64;
        let mut mx = 0.0_f64;
        let mut push = |r: f64| {
            sq += r * r;
            mx = mx.max(r.abs());
        };
        for i in 0..n {
            let ux = upp[i] - x[i];
            let xl = x[i] - low[i];
            let mut plam = p0[i];
            let mut qlam = q0[i];
            for k in 0..m {
                plam += pmat[k][i] * lam[k];
                qlam += qmat[k][i] * lam[k];
            }
            push(plam / (ux * ux) - qlam / (xl * xl) - xsi[i] + eta[i]);
        }
        for k in 0..m {
            push(cvec[k] + dvec[k] * y[k] - mu[k] - lam[k]);
        }
        push(a0 - zet - lam.iter().zip(&avec).map(|(l, a)| l * a).sum::<f64>());
        for k in 0..m {
            let mut gk = 0.0;
            for i in 0..n {
                gk += pmat[k][i] / (upp[i] - x[i]) + qmat[k][i] / (x[i] - low[i]);
            }
            push(gk - avec[k] * z - y[k] + s[k] - b[k]);
        }
        for i in 0..n {
            push(xsi[i] * (x[i] - alfa[i]) - epsi);
            push(eta[i] * (beta[i] - x[i]) - epsi);
        }
        for k in 0..m {
            push(mu[k] * y[k] - epsi);
            push(lam[k] * s[k] - epsi);
        }
        push(zet * z - epsi);
        (sq.sqrt(), mx)
    };

    let mut epsi = 1.0;
    while epsi > EPSI_MIN {
        let (mut resnorm, mut resmax) = residual(&x, &y, z, &lam, &xsi, &eta, &mu, zet, &s, epsi);
        let mut inner = 0;
        while resmax > 0.9 * epsi && inner < 200 {
            inner += 1;
            // Newton direction
            let mut delx = vec![0.0; n];
            let mut diagx = vec![0.0; n];
            let mut gg = vec![vec![0.0; n]; m];
            for i in 0..n {
                let ux = upp[i] - x[i];
                let xl = x[i] - low[i];
                let (ux2, xl2) = (ux * ux, xl * xl);
                let mut plam = p0[i];
                let mut qlam = q0[i];
                for k in 0..m {
                    plam += pmat[k][i] * lam[k];
                    qlam += qmat[k][i] * lam[k];
                    gg[k][i] = pmat[k][i] / ux2 - qmat[k][i] / xl2;
                }
                delx[i] = plam / ux2 - qlam / xl2 - epsi / (x[i] - alfa[i])
                    + epsi / (beta[i] - x[i]);
                diagx[i] = 2.0 * (plam / (ux2 * ux) + qlam / (xl2 * xl))
                    + xsi[i] / (x[i] - alfa[i])
                    + eta[i] / (beta[i] - x[i]);
            }
            let mut dely = vec![0.0; m];
            let mut dellam = vec![0.0; m];
            let mut diagy = vec![0.0; m];
            let mut diaglamyi = vec![0.0; m];
            for k in 0..m {
                dely[k] = cvec[k] + dvec[k] * y[k] - lam[k] - epsi / y[k];
                let mut gk = 0.0;
                for i in 0..n {
                    gk += pmat[k][i] / (upp[i] - x[i]) + qmat[k][i] / (x[i] - low[i]);
                }
                dellam[k] = gk - avec[k] * z - y[k] - b[k] + epsi / lam[k];
                diagy[k] = dvec[k] + mu[k] / y[k];
                diaglamyi[k] = s[k] / lam[k] + 1.0 / diagy[k];
            }
            let delz = a0 - lam.iter().zip(&avec).map(|(l, a)| l * a).sum::<f64>() - epsi / z;

            // Schur system in (lam, z)
            let dim = m + 1;
            let mut aa = vec![vec![0.0; dim]; dim];
            let mut bb = vec![0.0; dim];
            for k in 0..m {
                bb[k] = dellam[k] + dely[k] / diagy[k];
                for i in 0..n {
                    bb[k] -= gg[k][i] * delx[i] / diagx[i];
                }
                for l in 0..m {
                    let mut acc = if k == l { diaglamyi[k] } else { 0.0 };
                    for i in 0..n {
                        acc += gg[k][i] * gg[l][i] / diagx[i];
                    }
                    aa[k][l] = acc;
                }
                aa[k][m] = avec[k];
                aa[m][k] = avec[k];
            }
            aa[m][m] = -zet / z;
            bb[m] = delz;
            let sol = solve_dense_small(&mut aa, &mut bb)?;
            let dlam = sol[..m].to_vec();
            let dz = sol[m];

            let mut dx = vec![0.0; n];
            for i in 0..n {
                let mut acc = -delx[i];
                for k in 0..m {
                    acc -= gg[k][i] * dlam[k];
                }
                dx[i] = acc / diagx[i];
            }
            let mut dy = vec![0.0; m];
            for k in 0..m {
                dy[k] = -dely[k] / diagy[k] + dlam[k] / diagy[k];
            }
            let mut dxsi = vec![0.0; n];
            let mut deta = vec![0.0; n];
            for i in 0..n {
                dxsi[i] = -xsi[i] + (epsi - xsi[i] * dx[i]) / (x[i] - alfa[i]);
                deta[i] = -eta[i] + (epsi + eta[i] * dx[i]) / (beta[i] - x[i]);
            }
            let mut dmu = vec![0.0; m];
            let mut ds = vec![0.0; m];
            for k in 0..m {
                dmu[k] = -mu[k] + (epsi - mu[k] * dy[k]) / y[k];
                ds[k] = -s[k] + (epsi - s[k] * dlam[k]) / lam[k];
            }
            let dzet = -zet + (epsi - zet * dz) / z;

            // largest feasible step
            let mut t = 1.0_f64;
            {
                let mut bound = |v: f64, dv: f64| {
                    if dv < 0.0 {
                        t = t.min(-v / (1.01 * dv));
                    }
                };
                for k in 0..m {
                    bound(y[k], dy[k]);
                    bound(lam[k], dlam[k]);
                    bound(mu[k], dmu[k]);
                    bound(s[k], ds[k]);
                }
                bound(z, dz);
                bound(zet, dzet);
                for i in 0..n {
                    bound(x[i] - alfa[i], dx[i]);
                    bound(beta[i] - x[i], -dx[i]);
                    bound(xsi[i], dxsi[i]);
                    bound(eta[i], deta[i]);
                }
            }

            // backtracking on the residual norm
            let (xo, yo, zo, lamo, xsio, etao, muo, zeto, so) = (
                x.clone(),
                y.clone(),
                z,
                lam.clone(),
                xsi.clone(),
                eta.clone(),
                mu.clone(),
                zet,
                s.clone(),
            );
            let mut step = t;
            let mut accepted = false;
            for _ in 0..50 {
                for i in 0..n {
                    x[i] = xo[i] + step * dx[i];
                    xsi[i] = xsio[i] + step * dxsi[i];
                    eta[i] = etao[i] + step * deta[i];
                }
                for k in 0..m {
                    y[k] = yo[k] + step * dy[k];
                    lam[k] = lamo[k] + step * dlam[k];
                    mu[k] = muo[k] + step * dmu[k];
                    s[k] = so[k] + step * ds[k];
                }
                z = zo + step * dz;
                zet = zeto + step * dzet;
                let (rn, rm) = residual(&x, &y, z, &lam, &xsi, &eta, &mu, zet, &s, epsi);
                if rn < resnorm {
                    resnorm = rn;
                    resmax = rm;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break; // stagnated at this barrier level; tighten epsi
            }
        }
        epsi *= 0.1;
    }
    // active elastic variables signal a restoration step
    let restoration = y.iter().any(|&yk| yk > 1e-4);
    Ok((x, restoration))
}

/// Gaussian elimination with partial pivoting for the (m+1)-sized Schur
/// system.
fn solve_dense_small(a: &mut [Vec<f64>], b: &mut [f64]) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        if a[piv][col].abs() < 1e-300 {
            return Err(Error::Solver("singular MMA subproblem system".into()));
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut acc = b[r];
        for c in r + 1..n {
            acc -= a[r][c] * x[c];
        }
        x[r] = acc / a[r][r];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn converges_to_quadratic_minimum_without_constraints() {
        let n = 1;
        let mut state = MmaState::new(n);
        let mut x = vec![0.9];
        for _ in 0..30 {
            let f0 = (x[0] - 0.3) * (x[0] - 0.3);
            let df0 = vec![2.0 * (x[0] - 0.3)];
            let up = mma_update(&x, f0, &df0, &[], &[], &mut state).unwrap();
            x = up.x;
        }
        assert!((x[0] - 0.3).abs() < 1e-4, "x = {}", x[0]);
    }

    #[test]
    fn converges_to_active_linear_constraint() {
        let n = 40;
        let mut state = MmaState::new(n);
        let mut x = vec![0.2; n];
        for _ in 0..60 {
            let df0 = vec![-1.0; n];
            let f0 = -x.iter().sum::<f64>();
            let mean = x.iter().sum::<f64>() / n as f64;
            let g = vec![mean / 0.5 - 1.0];
            let dg = vec![vec![1.0 / (0.5 * n as f64); n]];
            let up = mma_update(&x, f0, &df0, &g, &dg, &mut state).unwrap();
            x = up.x;
        }
        let mean = x.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 1e-4, "mean = {mean}");
    }

    #[test]
    fn update_respects_move_limited_box() {
        let n = 12;
        let mut state = MmaState::new(n);
        let x: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let df0: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 55.0 } else { -95.0 }).collect();
        let g = vec![0.6];
        let dg = vec![(0..n).map(|i| (i as f64 - 4.5) * 3.0).collect::<Vec<f64>>()];
        let up = mma_update(&x, 1.0, &df0, &g, &dg, &mut state).unwrap();
        for i in 0..n {
            let lo = (x[i] - state.move_limit).max(0.0);
            let hi = (x[i] + state.move_limit).min(1.0);
            assert!(up.x[i] >= lo - 1e-12 && up.x[i] <= hi + 1e-12);
        }
    }

    #[test]
    fn identical_inputs_give_identical_outputs() {
        let n = 20;
        let x: Vec<f64> = (0..n).map(|i| 0.3 + 0.01 * i as f64).collect();
        let df0: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let g = vec![-0.1, 0.05];
        let dg: Vec<Vec<f64>> = (0..2)
            .map(|k| (0..n).map(|i| ((i + k) as f64).cos()).collect())
            .collect();
        let run = || {
            let mut state = MmaState::new(n);
            let mut xs = x.clone();
            for _ in 0..5 {
                let up = mma_update(&xs, 0.0, &df0, &g, &dg, &mut state).unwrap();
                xs = up.x;
            }
            xs
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut state = MmaState::new(2);
        let x = vec![0.5, 0.5];
        let df0 = vec![f64::NAN, 0.0];
        assert!(matches!(
            mma_update(&x, 0.0, &df0, &[], &[], &mut state),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn too_many_constraints_rejected() {
        let mut state = MmaState::new(2);
        let x = vec![0.5, 0.5];
        let df0 = vec![1.0, 1.0];
        let g = vec![0.0; 9];
        let dg = vec![vec![0.0, 0.0]; 9];
        assert!(matches!(
            mma_update(&x, 0.0, &df0, &g, &dg, &mut state),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn infeasible_linearization_flags_restoration() {
        // constraint that cannot be met inside the move box: g = 5 with a
        // tiny gradient
        let n = 4;
        let mut state = MmaState::new(n);
        let x = vec![0.5; n];
        let df0 = vec![1.0; n];
        let g = vec![5.0];
        let dg = vec![vec![1e-6; n]];
        let up = mma_update(&x, 0.0, &df0, &g, &dg, &mut state).unwrap();
        assert!(up.restoration);
    }
}
