//! Active-set projected Newton ascent for a smooth concave objective on a
//! polyhedron `{x : A x <= b}`.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub coeffs: Vec<f64>,
    pub bound: f64,
}

impl LinearConstraint {
    fn slack(&self, x: &[f64]) -> f64 {
        self.bound - dot(&self.coeffs, x)
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// Norm of the gradient projected on the active face.
    pub grad_norm: f64,
    /// `(constraint index, KKT multiplier)` of the active set at exit.
    pub active: Vec<(usize, f64)>,
    pub converged: bool,
}

pub struct Options {
    pub max_iterations: usize,
    /// Stationarity test `||P g|| <= rel_tol (1 + |F|)`.
    pub rel_tol: f64,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            rel_tol: 1e-8,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Face {
    projector: DMatrix<f64>,
    /// Maps a gradient to active-constraint multipliers.
    multiplier_map: Option<DMatrix<f64>>,
}

fn face(constraints: &[LinearConstraint], active: &[usize], dim: usize) -> Face {
    if active.is_empty() {
        return Face {
            projector: DMatrix::identity(dim, dim),
            multiplier_map: None,
        };
    }
    let a = DMatrix::from_fn(active.len(), dim, |r, c| constraints[active[r]].coeffs[c]);
    let gram = &a * a.transpose();
    let gram_pinv = gram
        .pseudo_inverse(1e-12)
        .unwrap_or_else(|_| DMatrix::zeros(active.len(), active.len()));
    let map = &gram_pinv * &a;
    Face {
        projector: DMatrix::identity(dim, dim) - a.transpose() * &map,
        multiplier_map: Some(map),
    }
}

/// Maximizes `value` from the feasible start `x0`. `value` returns `None`
/// outside its domain; `derivatives` gives gradient and Hessian.
pub fn maximize<V, D>(
    value: V,
    derivatives: D,
    constraints: &[LinearConstraint],
    x0: Vec<f64>,
    options: &Options,
) -> Solution
where
    V: Fn(&[f64]) -> Option<f64>,
    D: Fn(&[f64]) -> (Vec<f64>, Vec<Vec<f64>>),
{
    let dim = x0.len();
    let mut x = x0;
    let mut f = value(&x).expect("optimizer start must be inside the domain");
    let mut active: Vec<usize> = constraints
        .iter()
        .enumerate()
        .filter(|(_, c)| c.slack(&x) <= 1e-14 * (1.0 + c.bound.abs()))
        .map(|(k, _)| k)
        .collect();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < options.max_iterations {
        iterations += 1;
        let (g, h) = derivatives(&x);
        let gv = DVector::from_vec(g.clone());
        let fc = face(constraints, &active, dim);
        let pg = &fc.projector * &gv;
        let tol = options.rel_tol * (1.0 + f.abs());

        if pg.norm() <= tol {
            let Some(map) = &fc.multiplier_map else {
                converged = true;
                break;
            };
            let mu = map * &gv;
            let (worst, min_mu) = mu
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (k, &m)| if m < acc.1 { (k, m) } else { acc });
            if min_mu >= -tol {
                converged = true;
                break;
            }
            active.remove(worst);
            continue;
        }

        let neg_h = DMatrix::from_fn(dim, dim, |r, c| -h[r][c]);
        let id = DMatrix::<f64>::identity(dim, dim);
        let mut m = &fc.projector * neg_h * &fc.projector + (&id - &fc.projector);
        let shift = 1e-12 * (1.0 + m.trace().abs());
        m += &id * shift;
        let mut d = match m.cholesky() {
            Some(ch) => &fc.projector * ch.solve(&pg),
            None => pg.clone(),
        };
        if gv.dot(&d) <= 0.0 {
            d = pg.clone();
        }
        let d: Vec<f64> = d.iter().copied().collect();
        let slope = dot(&g, &d);

        let mut alpha_max = f64::INFINITY;
        let mut blocking = None;
        for (k, c) in constraints.iter().enumerate() {
            if active.contains(&k) {
                continue;
            }
            let rate = dot(&c.coeffs, &d);
            if rate > 0.0 {
                let a = c.slack(&x).max(0.0) / rate;
                if a < alpha_max {
                    alpha_max = a;
                    blocking = Some(k);
                }
            }
        }

        let mut alpha = alpha_max.min(1.0);
        let hits_bound = alpha_max <= 1.0;
        let mut accepted = None;
        let mut halvings = 0;
        while alpha > 0.0 && halvings < 80 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            if let Some(ft) = value(&trial) {
                if ft >= f + 1e-4 * alpha * slope {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            alpha *= 0.5;
            halvings += 1;
        }
        let Some((trial, ft)) = accepted else {
            break;
        };
        let step_norm = alpha * d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let gain = ft - f;
        x = trial;
        f = ft;
        if hits_bound && halvings == 0 {
            if let Some(k) = blocking {
                active.push(k);
            }
        }
        if step_norm <= 1e-15 * (1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max))
            && gain <= 1e-15 * f.abs()
        {
            break;
        }
    }

    let (g, _) = derivatives(&x);
    let gv = DVector::from_vec(g);
    let fc = face(constraints, &active, dim);
    let grad_norm = (&fc.projector * &gv).norm();
    let multipliers: Vec<f64> = match &fc.multiplier_map {
        Some(map) => (map * &gv).iter().copied().collect(),
        None => Vec::new(),
    };
    if !converged {
        let tol = options.rel_tol * (1.0 + f.abs());
        converged = grad_norm <= tol && multipliers.iter().all(|&m| m >= -tol);
    }
    Solution {
        x,
        value: f,
        iterations,
        grad_norm,
        active: active.into_iter().zip(multipliers).collect(),
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Concave quadratic `-(x - a)^2 - (y - b)^2` over `x >= 0, y >= 0, x + y <= 1`.
    fn run(a: f64, b: f64) -> Solution {
        let value = |v: &[f64]| Some(-(v[0] - a).powi(2) - (v[1] - b).powi(2));
        let derivs = |v: &[f64]| {
            (
                vec![-2.0 * (v[0] - a), -2.0 * (v[1] - b)],
                vec![vec![-2.0, 0.0], vec![0.0, -2.0]],
            )
        };
        let cons = vec![
            LinearConstraint { coeffs: vec![-1.0, 0.0], bound: 0.0 },
            LinearConstraint { coeffs: vec![0.0, -1.0], bound: 0.0 },
            LinearConstraint { coeffs: vec![1.0, 1.0], bound: 1.0 },
        ];
        maximize(value, derivs, &cons, vec![0.2, 0.2], &Options::default())
    }

    #[test]
    fn interior_optimum() {
        let s = run(0.3, 0.4);
        assert!(s.converged && s.active.is_empty());
        assert!((s.x[0] - 0.3).abs() < 1e-10 && (s.x[1] - 0.4).abs() < 1e-10);
    }

    #[test]
    fn bound_optimum_has_positive_multiplier() {
        let s = run(-0.5, 0.4);
        assert!(s.converged);
        assert!(s.x[0].abs() < 1e-12 && (s.x[1] - 0.4).abs() < 1e-10);
        assert_eq!(s.active.len(), 1);
        assert_eq!(s.active[0].0, 0);
        assert!((s.active[0].1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn simplex_edge_optimum() {
        let s = run(1.0, 1.0);
        assert!(s.converged);
        assert!((s.x[0] - 0.5).abs() < 1e-10 && (s.x[1] - 0.5).abs() < 1e-10);
        assert!(s.active.iter().all(|&(_, m)| m >= 0.0));
    }

    #[test]
    fn releases_wrong_constraint() {
        // start on x = 0 while the optimum is interior
        let value = |v: &[f64]| Some(-(v[0] - 0.5).powi(2));
        let derivs = |v: &[f64]| (vec![-2.0 * (v[0] - 0.5)], vec![vec![-2.0]]);
        let cons = vec![LinearConstraint { coeffs: vec![-1.0], bound: 0.0 }];
        let s = maximize(value, derivs, &cons, vec![0.0], &Options::default());
        assert!(s.converged && s.active.is_empty());
        assert!((s.x[0] - 0.5).abs() < 1e-12);
    }
}
