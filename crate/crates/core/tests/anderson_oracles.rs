use boussinesq::anderson::{drive, solve_ls, AndersonConfig, Euclidean, InnerProduct};
use boussinesq::Status;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `<x, y> = x^T B y` for a dense SPD `B`.
struct DenseSpd(DMatrix<f64>);

impl DenseSpd {
    fn random(rng: &mut ChaCha8Rng, n: usize) -> Self {
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        Self(&a * a.transpose() + DMatrix::identity(n, n) * 0.5)
    }
}

impl InnerProduct<f64> for DenseSpd {
    fn gram(&self, x: &[f64]) -> Vec<f64> {
        (&self.0 * DVector::from_column_slice(x))
            .as_slice()
            .to_vec()
    }
}

fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn single_column_gamma_matches_brute_force_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..5 {
        let b = DenseSpd::random(&mut rng, 6);
        let w = random(&mut rng, 6);
        let dw = random(&mut rng, 6);
        let sol = solve_ls(&w, std::slice::from_ref(&dw), &b, 1e-14);

        let closed = b.inner(&w, &dw) / b.inner(&dw, &dw);
        assert!((sol.gamma[0] - closed).abs() < 1e-12);

        // 10^6 point scan of || w - gamma dw ||_B^2 on [-10, 10]
        let (lo, hi, n) = (-10.0, 10.0, 1_000_000);
        let h = (hi - lo) / (n - 1) as f64;
        let bw = b.gram(&w);
        let bdw = b.gram(&dw);
        let (ww, wd, dd) = (
            w.iter().zip(&bw).map(|(a, c)| a * c).sum::<f64>(),
            w.iter().zip(&bdw).map(|(a, c)| a * c).sum::<f64>(),
            dw.iter().zip(&bdw).map(|(a, c)| a * c).sum::<f64>(),
        );
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..n {
            let g = lo + h * i as f64;
            let f = ww - 2.0 * g * wd + g * g * dd;
            if f < best.0 {
                best = (f, g);
            }
        }
        assert!(closed.abs() < 10.0);
        assert!(
            (sol.gamma[0] - best.1).abs() <= h,
            "{} vs {}",
            sol.gamma[0],
            best.1
        );
    }
}

#[test]
fn five_columns_match_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let n = 12;
        let b = DenseSpd::random(&mut rng, n);
        let w = random(&mut rng, n);
        let cols: Vec<Vec<f64>> = (0..5).map(|_| random(&mut rng, n)).collect();
        let sol = solve_ls(&w, &cols, &b, 1e-14);

        let f = DMatrix::from_fn(n, 5, |i, j| cols[j][i]);
        let wv = DVector::from_column_slice(&w);
        let gram = f.transpose() * &b.0 * &f;
        let rhs = f.transpose() * &b.0 * &wv;
        let gamma = gram.lu().solve(&rhs).unwrap();
        let r = &wv - &f * &gamma;
        let objective = (r.transpose() * &b.0 * &r)[(0, 0)].sqrt();

        assert_eq!(sol.rank, 5);
        assert!(
            (sol.objective - objective).abs() <= 1e-10 * objective,
            "{} vs {objective}",
            sol.objective
        );
        for j in 0..5 {
            assert!((sol.gamma[j] - gamma[j]).abs() <= 1e-8 * gamma.amax().max(1.0));
        }
    }
}

#[test]
fn gain_never_exceeds_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let n = rng.gen_range(2..10);
        let m = rng.gen_range(1..6);
        let b = DenseSpd::random(&mut rng, n);
        let w = random(&mut rng, n);
        let cols: Vec<Vec<f64>> = (0..m).map(|_| random(&mut rng, n)).collect();
        let sol = solve_ls(&w, &cols, &b, 1e-10);
        assert!(sol.objective / sol.initial <= 1.0 + 1e-14);
    }
}

#[test]
fn affine_map_solved_exactly_with_two_columns() {
    let a = [[0.3, -0.5], [0.4, 0.2]];
    let c = [1.0, -2.0];
    // (I - A) x* = c
    let det = (1.0 - a[0][0]) * (1.0 - a[1][1]) - a[0][1] * a[1][0];
    let xstar = [
        ((1.0 - a[1][1]) * c[0] + a[0][1] * c[1]) / det,
        (a[1][0] * c[0] + (1.0 - a[0][0]) * c[1]) / det,
    ];
    let g = |x: &[f64]| {
        Ok(vec![
            a[0][0] * x[0] + a[0][1] * x[1] + c[0],
            a[1][0] * x[0] + a[1][1] * x[1] + c[1],
        ])
    };
    let cfg = AndersonConfig::constant(2, 1.0).with_tol(1e-13);
    let out = drive(g, vec![0.0, 0.0], &Euclidean, &cfg).unwrap();
    assert_eq!(out.record.status, Status::Converged);
    // one plain step plus at most three accelerated steps
    assert!(out.record.iterations <= 4, "{}", out.record.iterations);
    for (got, want) in out.solution.iter().zip(xstar) {
        assert!((got - want).abs() < 1e-14);
    }
}

#[test]
fn plain_iteration_is_the_depth_zero_case() {
    let g = |x: &[f64]| Ok(vec![0.5 * x[0].cos(), 0.25 * (x[0] + x[1]).sin()]);
    let cfg = AndersonConfig::constant(0, 0.7).with_tol(1e-12);
    let out = drive(g, vec![1.0, -1.0], &Euclidean, &cfg).unwrap();
    let mut x = vec![1.0f64, -1.0];
    for row in &out.record.rows {
        let gx = g(&x).unwrap();
        let w: Vec<f64> = gx.iter().zip(&x).map(|(a, b)| a - b).collect();
        assert_eq!(row.residual.to_bits(), Euclidean.norm(&w).to_bits());
        x = x.iter().zip(&w).map(|(a, b)| a + 0.7 * b).collect();
    }
}
