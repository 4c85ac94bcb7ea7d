//! Small derivative-free and quasi-Newton minimizers used by the
//! heteroscedastic fitter.

/// Outcome of a minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop when the simplex diameter falls below `xtol`.
    pub xtol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            max_evals: 200,
            xtol: 1e-8,
        }
    }
}

/// Nelder–Mead with coefficients (1, 2, 0.5, 0.5). The start point is a
/// vertex of the initial simplex, so the result is never worse than `x0`.
pub fn nelder_mead(mut f: impl FnMut(&[f64]) -> f64, x0: &[f64], step: &[f64], opts: NelderMeadOptions) -> Minimum {
    let n = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    pts.push(x0.to_vec());
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += step[i];
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(p, &mut evals)).collect();
    let mut converged = false;
    while evals < opts.max_evals {
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = idx.iter().map(|&i| pts[i].clone()).collect();
        vals = idx.iter().map(|&i| vals[i]).collect();

        let diam = pts[1..]
            .iter()
            .map(|p| {
                p.iter()
                    .zip(&pts[0])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        if diam < opts.xtol {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| pts[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&pts[n]).map(|(c, w)| c + t * (c - w)).collect() };
        let xr = along(1.0);
        let fr = eval(&xr, &mut evals);
        if fr < vals[0] {
            let xe = along(2.0);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
        } else {
            let (xc, fc) = if fr < vals[n] {
                let xc = along(0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < vals[n].min(fr) {
                pts[n] = xc;
                vals[n] = fc;
            } else {
                for i in 1..=n {
                    let p: Vec<f64> = pts[0].iter().zip(&pts[i]).map(|(b, q)| b + 0.5 * (q - b)).collect();
                    vals[i] = eval(&p, &mut evals);
                    pts[i] = p;
                }
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
    Minimum {
        x: pts[best].clone(),
        f: vals[best],
        evals,
        converged,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsbOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when the infinity norm of the projected gradient is below `pgtol`.
    pub pgtol: f64,
    /// Stop when the relative decrease of `f` is below `ftol`.
    pub ftol: f64,
}

impl Default for LbfgsbOptions {
    fn default() -> Self {
        LbfgsbOptions {
            memory: 10,
            max_iter: 50,
            pgtol: 1e-10,
            ftol: 1e-14,
        }
    }
}

/// Projected limited-memory BFGS for box constraints `lower ≤ x ≤ upper`.
///
/// Variables at a bound whose gradient points outward are frozen for the
/// step; the quasi-Newton direction is computed on the free variables and
/// the trial point is projected back onto the box. Backtracking with an
/// Armijo condition keeps `f` non-increasing.
pub fn lbfgsb(
    mut fg: impl FnMut(&[f64]) -> (f64, Vec<f64>),
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: LbfgsbOptions,
) -> Minimum {
    let n = x0.len();
    let project = |x: &mut [f64]| {
        for i in 0..n {
            x[i] = x[i].clamp(lower[i], upper[i]);
        }
    };
    let mut x = x0.to_vec();
    project(&mut x);
    let (mut f, mut g) = fg(&x);
    let mut evals = 1;
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut converged = false;
    if !f.is_finite() {
        return Minimum { x, f, evals, converged };
    }
    for _ in 0..opts.max_iter {
        let active: Vec<bool> = (0..n)
            .map(|i| (x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0))
            .collect();
        let pg_inf = (0..n).filter(|&i| !active[i]).map(|i| g[i].abs()).fold(0.0, f64::max);
        if pg_inf < opts.pgtol {
            converged = true;
            break;
        }
        let mut q: Vec<f64> = (0..n).map(|i| if active[i] { 0.0 } else { g[i] }).collect();
        let m = s_hist.len();
        let mut alpha = vec![0.0; m];
        let rho: Vec<f64> = (0..m).map(|k| 1.0 / dot(&s_hist[k], &y_hist[k])).collect();
        for k in (0..m).rev() {
            alpha[k] = rho[k] * masked_dot(&s_hist[k], &q, &active);
            for i in 0..n {
                if !active[i] {
                    q[i] -= alpha[k] * y_hist[k][i];
                }
            }
        }
        let gamma = if m > 0 {
            dot(&s_hist[m - 1], &y_hist[m - 1]) / dot(&y_hist[m - 1], &y_hist[m - 1])
        } else {
            1.0 / pg_inf.max(1e-300)
        };
        q.iter_mut().for_each(|v| *v *= gamma);
        for k in 0..m {
            let beta = rho[k] * masked_dot(&y_hist[k], &q, &active);
            for i in 0..n {
                if !active[i] {
                    q[i] += s_hist[k][i] * (alpha[k] - beta);
                }
            }
        }
        let mut d: Vec<f64> = (0..n).map(|i| if active[i] { 0.0 } else { -q[i] }).collect();
        if dot(&d, &g) >= 0.0 {
            d = (0..n)
                .map(|i| if active[i] { 0.0 } else { -g[i] * gamma.abs() })
                .collect();
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut xn: Vec<f64> = (0..n).map(|i| x[i] + t * d[i]).collect();
            project(&mut xn);
            let step: Vec<f64> = (0..n).map(|i| xn[i] - x[i]).collect();
            let decrease = dot(&g, &step);
            if decrease >= 0.0 && step.iter().all(|v| *v == 0.0) {
                break;
            }
            let (fnew, gnew) = fg(&xn);
            evals += 1;
            if fnew.is_finite() && fnew <= f + 1e-4 * decrease.min(0.0) {
                accepted = Some((xn, fnew, gnew, step));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew, gnew, s)) = accepted else {
            converged = true;
            break;
        };
        let yv: Vec<f64> = (0..n).map(|i| gnew[i] - g[i]).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&yv, &yv).sqrt() {
            if s_hist.len() == opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(yv);
        }
        let rel = (f - fnew).abs() / f.abs().max(fnew.abs()).max(1.0);
        x = xn;
        f = fnew;
        g = gnew;
        if rel < opts.ftol {
            converged = true;
            break;
        }
    }
    Minimum { x, f, evals, converged }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn masked_dot(a: &[f64], b: &[f64], active: &[bool]) -> f64 {
    a.iter()
        .zip(b)
        .zip(active)
        .filter(|(_, &act)| !act)
        .map(|((x, y), _)| x * y)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let m = nelder_mead(
            |x| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2),
            &[0.0, 0.0],
            &[0.5, 0.5],
            NelderMeadOptions {
                max_evals: 500,
                xtol: 1e-10,
            },
        );
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-8 && (m.x[1] + 2.0).abs() < 1e-8);
    }

    #[test]
    fn nelder_mead_never_worse_than_start() {
        let x0 = [1.0, 1.0];
        let m = nelder_mead(rosenbrock, &x0, &[0.3, 0.3], NelderMeadOptions::default());
        assert!(m.f <= rosenbrock(&x0));
        let m = nelder_mead(rosenbrock, &[-1.2, 1.0], &[0.1, 0.1], NelderMeadOptions::default());
        assert!(m.f <= rosenbrock(&[-1.2, 1.0]));
        assert!(m.evals <= 200 + 3);
    }

    #[test]
    fn lbfgsb_unconstrained_rosenbrock() {
        let fg = |x: &[f64]| {
            let f = rosenbrock(x);
            let g = vec![
                -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
                200.0 * (x[1] - x[0] * x[0]),
            ];
            (f, g)
        };
        let inf = f64::INFINITY;
        let m = lbfgsb(
            fg,
            &[-1.2, 1.0],
            &[-inf, -inf],
            &[inf, inf],
            LbfgsbOptions {
                max_iter: 200,
                ..Default::default()
            },
        );
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{:?}", m);
    }

    #[test]
    fn lbfgsb_respects_active_bound() {
        let fg = |x: &[f64]| {
            (
                (x[0] + 1.0).powi(2) + (x[1] - 2.0).powi(2),
                vec![2.0 * (x[0] + 1.0), 2.0 * (x[1] - 2.0)],
            )
        };
        let m = lbfgsb(
            fg,
            &[3.0, 0.0],
            &[0.0, f64::NEG_INFINITY],
            &[f64::INFINITY, f64::INFINITY],
            LbfgsbOptions::default(),
        );
        assert_eq!(m.x[0], 0.0);
        assert!((m.x[1] - 2.0).abs() < 1e-8);
        assert!(m.converged);
    }
}
