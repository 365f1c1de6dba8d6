//! Oracles shared by integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub mod pencil_oracle {
    use nalgebra::DMatrix;

    /// Characteristic polynomial of `m` (monic, highest degree first) by
    /// Faddeev–LeVerrier.
    pub fn char_poly(m: &DMatrix<f64>) -> Vec<f64> {
        let n = m.nrows();
        let mut coeffs = vec![1.0];
        let mut mk = DMatrix::<f64>::zeros(n, n);
        let id = DMatrix::<f64>::identity(n, n);
        for k in 1..=n {
            mk = m * (&mk + &id * coeffs[k - 1]);
            coeffs.push(-mk.trace() / k as f64);
        }
        coeffs
    }

    fn horner(c: &[f64], z: (f64, f64)) -> (f64, f64) {
        c.iter().fold((0.0, 0.0), |acc, &a| {
            (acc.0 * z.0 - acc.1 * z.1 + a, acc.0 * z.1 + acc.1 * z.0)
        })
    }

    fn cdiv(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
        let d = b.0 * b.0 + b.1 * b.1;
        ((a.0 * b.0 + a.1 * b.1) / d, (a.1 * b.0 - a.0 * b.1) / d)
    }

    /// Durand–Kerner iteration followed by Newton polishing.
    pub fn roots(c: &[f64]) -> Vec<f64> {
        let n = c.len() - 1;
        let radius = 1.0 + c[1..].iter().map(|a| a.abs()).fold(0.0, f64::max);
        let mut z: Vec<(f64, f64)> = (0..n)
            .map(|k| {
                let t = 0.4 + 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                (radius * t.cos(), radius * t.sin())
            })
            .collect();
        for _ in 0..500 {
            for i in 0..n {
                let mut den = (1.0, 0.0);
                for j in 0..n {
                    if i != j {
                        let d = (z[i].0 - z[j].0, z[i].1 - z[j].1);
                        den = (den.0 * d.0 - den.1 * d.1, den.0 * d.1 + den.1 * d.0);
                    }
                }
                let step = cdiv(horner(c, z[i]), den);
                z[i] = (z[i].0 - step.0, z[i].1 - step.1);
            }
        }
        let deriv: Vec<f64> = c[..n]
            .iter()
            .enumerate()
            .map(|(i, a)| a * (n - i) as f64)
            .collect();
        let mut out: Vec<f64> = z
            .into_iter()
            .map(|(mut x, _)| {
                for _ in 0..5 {
                    let d = horner(&deriv, (x, 0.0)).0;
                    if d != 0.0 {
                        x -= horner(c, (x, 0.0)).0 / d;
                    }
                }
                x
            })
            .collect();
        out.sort_by(f64::total_cmp);
        out
    }
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    &b * b.transpose() + DMatrix::identity(n, n) * 0.5
}
