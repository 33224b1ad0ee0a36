//! Nelder–Mead on a box. Points are projected onto the box before every
//! evaluation, which keeps the simplex feasible without a penalty term.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    /// Initial edge length as a fraction of each bound's width.
    pub initial_step: f64,
    /// Stop when the spread of simplex values falls below this.
    pub f_tol: f64,
    /// ... and every vertex lies within this (scaled) distance of the best.
    pub x_tol: f64,
    pub max_evaluations: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self { initial_step: 0.1, f_tol: 1e-10, x_tol: 1e-8, max_evaluations: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimize `f` over `[lo_i, hi_i]` from `start`. Zero-dimensional problems
/// are evaluated once.
pub fn minimize_in_box<F>(mut f: F, start: &[f64], bounds: &[[f64; 2]], opts: SimplexOptions) -> SimplexResult
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(start.len(), bounds.len());
    let n = start.len();
    let width: Vec<f64> = bounds.iter().map(|b| b[1] - b[0]).collect();
    // work in unit coordinates so that tolerances are scale free
    let to_x = |u: &[f64]| -> Vec<f64> {
        u.iter().zip(bounds).map(|(u, b)| b[0] + u.clamp(0.0, 1.0) * (b[1] - b[0])).collect()
    };
    let mut evals = 0;
    let mut eval = |u: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(&to_x(u));
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let u0: Vec<f64> = start
        .iter()
        .zip(bounds)
        .zip(&width)
        .map(|((x, b), w)| if *w > 0.0 { ((x - b[0]) / w).clamp(0.0, 1.0) } else { 0.0 })
        .collect();
    if n == 0 {
        let value = eval(&u0, &mut evals);
        return SimplexResult { x: vec![], value, evaluations: evals, converged: true };
    }

    let mut simplex = vec![u0.clone()];
    for i in 0..n {
        let mut v = u0.clone();
        // step inwards when the start sits on the upper face
        v[i] = if v[i] + opts.initial_step <= 1.0 { v[i] + opts.initial_step } else { v[i] - opts.initial_step };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evals)).collect();
    let project = |v: Vec<f64>| v.into_iter().map(|x| x.clamp(0.0, 1.0)).collect::<Vec<_>>();
    let mut converged = false;

    while evals < opts.max_evaluations {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        let size = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if (spread <= opts.f_tol || !values[0].is_finite()) && size <= opts.x_tol {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| project(centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (c - w)).collect());

        let reflected = along(1.0);
        let fr = eval(&reflected, &mut evals);
        if fr < values[0] {
            let expanded = along(2.0);
            let fe = eval(&expanded, &mut evals);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
            continue;
        }
        // outside contraction when the reflection improved on the worst vertex
        let contracted = along(if fr < values[n] { 0.5 } else { -0.5 });
        let fc = eval(&contracted, &mut evals);
        if fc < values[n].min(fr) {
            simplex[n] = contracted;
            values[n] = fc;
            continue;
        }
        let best = simplex[0].clone();
        for i in 1..=n {
            simplex[i] = best.iter().zip(&simplex[i]).map(|(b, v)| b + 0.5 * (v - b)).collect();
            values[i] = eval(&simplex[i], &mut evals);
        }
    }

    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    SimplexResult { x: to_x(&simplex[best]), value: values[best], evaluations: evals, converged }
}
