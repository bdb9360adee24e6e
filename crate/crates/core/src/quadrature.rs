//! Quadrature on the reference triangle `{(0,0), (1,0), (0,1)}`.

/// Points in barycentric coordinates, weights in reference-triangle measure
/// (summing to 1/2).
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadratureRule {
    /// Symmetric 7-point rule, exact for polynomials of degree 5.
    pub fn seven_point() -> Self {
        let s15 = 15f64.sqrt();
        let a1 = (6.0 - s15) / 21.0;
        let b1 = (9.0 + 2.0 * s15) / 21.0;
        let a2 = (6.0 + s15) / 21.0;
        let b2 = (9.0 - 2.0 * s15) / 21.0;
        let w1 = (155.0 - s15) / 2400.0;
        let w2 = (155.0 + s15) / 2400.0;
        let third = 1.0 / 3.0;
        let points = vec![
            [third, third, third],
            [b1, a1, a1],
            [a1, b1, a1],
            [a1, a1, b1],
            [b2, a2, a2],
            [a2, b2, a2],
            [a2, a2, b2],
        ];
        let weights = vec![9.0 / 80.0, w1, w1, w1, w2, w2, w2];
        Self {
            points,
            weights,
            degree: 5,
        }
    }

    /// Collapsed (Duffy) tensor Gauss-Legendre rule with `n` points per
    /// direction, exact for degree `2n - 2`.
    pub fn collapsed_gauss(n: usize) -> Self {
        assert!(n >= 1);
        let (x, w) = gauss_legendre_unit(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let xi = x[i];
                let eta = x[j] * (1.0 - x[i]);
                points.push([1.0 - xi - eta, xi, eta]);
                weights.push(w[i] * w[j] * (1.0 - x[i]));
            }
        }
        Self {
            points,
            weights,
            degree: 2 * n - 2,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Reference coordinates `(xi, eta)` of point `q`.
    pub fn reference_point(&self, q: usize) -> [f64; 2] {
        [self.points[q][1], self.points[q][2]]
    }
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev-like initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d.is_finite() {
            dp = d;
        }
        nodes[i] = 0.5 * (1.0 - x);
        weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrate(rule: &QuadratureRule, f: impl Fn(f64, f64) -> f64) -> f64 {
        (0..rule.len())
            .map(|q| {
                let [x, y] = rule.reference_point(q);
                rule.weights[q] * f(x, y)
            })
            .sum()
    }

    // \int_T x^a y^b = a! b! / (a + b + 2)!
    fn monomial_exact(a: u32, b: u32) -> f64 {
        let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
        fact(a) * fact(b) / fact(a + b + 2)
    }

    #[test]
    fn seven_point_weights_and_exactness() {
        let r = QuadratureRule::seven_point();
        let s: f64 = r.weights.iter().sum();
        assert!((s - 0.5).abs() < 1e-15);
        for p in &r.points {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        for a in 0..=5 {
            for b in 0..=(5 - a) {
                let got = integrate(&r, |x, y| x.powi(a as i32) * y.powi(b as i32));
                assert!(
                    (got - monomial_exact(a, b)).abs() < 1e-15,
                    "x^{a} y^{b}: {got}"
                );
            }
        }
        assert!((integrate(&r, |x, _| x) - 1.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn collapsed_rule_exactness() {
        for n in 1..8 {
            let r = QuadratureRule::collapsed_gauss(n);
            let d = r.degree as u32;
            for a in 0..=d {
                for b in 0..=(d - a) {
                    let got = integrate(&r, |x, y| x.powi(a as i32) * y.powi(b as i32));
                    let exact = monomial_exact(a, b);
                    assert!((got - exact).abs() < 1e-14, "n={n} x^{a} y^{b}");
                }
            }
        }
    }
}
