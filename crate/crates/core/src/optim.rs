//! Derivative-free minimisers used by the maximum-likelihood estimators.
//!
//! Bounds are handled upstream by smooth reparameterisation (log for
//! variances, logit for the Hurst exponent), so both routines work on
//! unconstrained coordinates.

/// Downhill-simplex options. Convergence requires both the relative
/// objective spread and the relative simplex extent to fall below their
/// tolerances.
#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub max_iterations: usize,
    pub rel_obj_tol: f64,
    pub rel_param_tol: f64,
    /// Initial simplex step per coordinate (transformed units).
    pub initial_step: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            rel_obj_tol: 1e-8,
            rel_param_tol: 1e-6,
            initial_step: 0.25,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub fmin: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Nelder–Mead downhill simplex with standard coefficients
/// (reflection 1, expansion 2, contraction 0.5, shrink 0.5).
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    opts: &SimplexOptions,
) -> SimplexResult {
    let dim = x0.len();
    assert!(dim > 0, "empty parameter vector");

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    simplex.push(x0.to_vec());
    for i in 0..dim {
        let mut v = x0.to_vec();
        v[i] += opts.initial_step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iterations {
        iterations += 1;
        // Order best..worst.
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
        let best = order[0];
        let worst = order[dim];
        let second_worst = order[dim - 1];

        let f_best = values[best];
        let f_worst = values[worst];
        let obj_spread = (f_worst - f_best).abs();
        let obj_scale = f_best.abs().max(f_worst.abs()).max(1e-300);
        let mut param_spread = 0.0f64;
        let mut param_scale = 1.0f64;
        for i in 0..dim {
            for v in &simplex {
                param_spread = param_spread.max((v[i] - simplex[best][i]).abs());
                param_scale = param_scale.max(v[i].abs());
            }
        }
        if obj_spread <= opts.rel_obj_tol * obj_scale
            && param_spread <= opts.rel_param_tol * param_scale
        {
            converged = true;
            break;
        }

        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; dim];
        for (k, v) in simplex.iter().enumerate() {
            if k != worst {
                for i in 0..dim {
                    centroid[i] += v[i];
                }
            }
        }
        for c in &mut centroid {
            *c /= dim as f64;
        }

        let reflect: Vec<f64> = (0..dim)
            .map(|i| centroid[i] + (centroid[i] - simplex[worst][i]))
            .collect();
        let f_reflect = f(&reflect);

        if f_reflect < f_best {
            let expand: Vec<f64> = (0..dim)
                .map(|i| centroid[i] + 2.0 * (centroid[i] - simplex[worst][i]))
                .collect();
            let f_expand = f(&expand);
            if f_expand < f_reflect {
                simplex[worst] = expand;
                values[worst] = f_expand;
            } else {
                simplex[worst] = reflect;
                values[worst] = f_reflect;
            }
        } else if f_reflect < values[second_worst] {
            simplex[worst] = reflect;
            values[worst] = f_reflect;
        } else {
            // Contract toward the better of worst/reflected.
            let (anchor, f_anchor) = if f_reflect < f_worst {
                (&reflect, f_reflect)
            } else {
                (&simplex[worst].clone(), f_worst)
            };
            let contract: Vec<f64> = (0..dim)
                .map(|i| centroid[i] + 0.5 * (anchor[i] - centroid[i]))
                .collect();
            let f_contract = f(&contract);
            if f_contract < f_anchor {
                simplex[worst] = contract;
                values[worst] = f_contract;
            } else {
                // Shrink toward the best vertex.
                let best_v = simplex[best].clone();
                for (k, v) in simplex.iter_mut().enumerate() {
                    if k != best {
                        for i in 0..dim {
                            v[i] = best_v[i] + 0.5 * (v[i] - best_v[i]);
                        }
                        values[k] = f(v);
                    }
                }
            }
        }
    }

    let mut best = 0;
    for k in 1..=dim {
        if values[k] < values[best] {
            best = k;
        }
    }
    SimplexResult {
        x: simplex[best].clone(),
        fmin: values[best],
        iterations,
        converged,
    }
}

/// Brent's 1-D minimiser on `[lo, hi]` (golden section with parabolic
/// acceleration). Returns `(x_min, f_min)`.
pub fn brent_min(
    mut f: impl FnMut(f64) -> f64,
    lo: f64,
    hi: f64,
    tol: f64,
    max_iterations: usize,
) -> (f64, f64) {
    const GOLD: f64 = 0.381_966_011_250_105; // (3 - sqrt(5)) / 2
    let (mut a, mut b) = if lo < hi { (lo, hi) } else { (hi, lo) };
    let mut x = a + GOLD * (b - a);
    let mut w = x;
    let mut v = x;
    let mut fx = f(x);
    let mut fw = fx;
    let mut fv = fx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;

    for _ in 0..max_iterations {
        let m = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut use_golden = true;
        if e.abs() > tol1 {
            // Fit a parabola through (v,fv), (w,fw), (x,fx).
            let r = (x - w) * (fx - fv);
            let q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            let mut q2 = 2.0 * (q - r);
            if q2 > 0.0 {
                p = -p;
            }
            q2 = q2.abs();
            let e_old = e;
            e = d;
            if p.abs() < (0.5 * q2 * e_old).abs() && p > q2 * (a - x) && p < q2 * (b - x) {
                d = p / q2;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if m > x { tol1 } else { -tol1 };
                }
                use_golden = false;
            }
        }
        if use_golden {
            e = if x < m { b - x } else { a - x };
            d = GOLD * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = f(u);
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_minimises_quadratic_bowl() {
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 1.0).powi(2) + 5.0;
        let res = nelder_mead(f, &[0.0, 0.0], &SimplexOptions::default());
        assert!(res.converged);
        assert!((res.x[0] - 3.0).abs() < 1e-5);
        assert!((res.x[1] + 1.0).abs() < 1e-5);
        assert!((res.fmin - 5.0).abs() < 1e-9);
    }

    #[test]
    fn simplex_handles_rosenbrock_2d() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let res = nelder_mead(f, &[-1.2, 1.0], &SimplexOptions::default());
        assert!((res.x[0] - 1.0).abs() < 1e-3, "{:?}", res.x);
        assert!((res.x[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn simplex_is_deterministic() {
        let f = |x: &[f64]| x[0].sin() * x[1].cos() + 0.1 * (x[0] * x[0] + x[1] * x[1]);
        let a = nelder_mead(f, &[1.0, 2.0], &SimplexOptions::default());
        let b = nelder_mead(f, &[1.0, 2.0], &SimplexOptions::default());
        assert_eq!(a.x, b.x);
        assert_eq!(a.fmin, b.fmin);
    }

    #[test]
    fn simplex_respects_iteration_cap() {
        let f = |x: &[f64]| x[0].abs().sqrt();
        let opts = SimplexOptions { max_iterations: 3, ..Default::default() };
        let res = nelder_mead(f, &[100.0], &opts);
        assert_eq!(res.iterations, 3);
        assert!(!res.converged);
    }

    #[test]
    fn brent_finds_scalar_minimum() {
        let (x, fx) = brent_min(|x| (x - 1.7).powi(2) + 0.25, -10.0, 10.0, 1e-10, 200);
        assert!((x - 1.7).abs() < 1e-7);
        assert!((fx - 0.25).abs() < 1e-12);
    }

    #[test]
    fn brent_handles_boundary_minimum() {
        let (x, _) = brent_min(|x| x, 0.0, 5.0, 1e-10, 200);
        assert!(x < 1e-5);
    }
}
