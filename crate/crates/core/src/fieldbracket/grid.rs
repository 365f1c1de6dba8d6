use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::FieldError;

/// `N` components sampled at `x_i = 2π i / M`, `M` a power of two.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    /// `values[ν][i]`
    values: Vec<Vec<f64>>,
}

impl GridField {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self, FieldError> {
        let m = values.first().map_or(0, Vec::len);
        if values.is_empty() {
            return Err(FieldError::Shape(
                "a field needs at least one component".into(),
            ));
        }
        if !m.is_power_of_two() || m < 2 {
            return Err(FieldError::GridSize(m));
        }
        if values.iter().any(|c| c.len() != m) {
            return Err(FieldError::Shape(
                "components have different lengths".into(),
            ));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite);
        }
        Ok(GridField { values })
    }

    pub fn from_fn(n: usize, m: usize, f: impl Fn(f64) -> Vec<f64>) -> Result<Self, FieldError> {
        let mut values = vec![Vec::with_capacity(m); n];
        for i in 0..m {
            let u = f(grid_x(i, m));
            if u.len() != n {
                return Err(FieldError::Shape(format!(
                    "point function returned {} values, expected {n}",
                    u.len()
                )));
            }
            for (c, v) in values.iter_mut().zip(u) {
                c.push(v);
            }
        }
        GridField::new(values)
    }

    /// Smooth field `base_ν + amplitude · Σ_{k ≤ harmonics} (a cos kx + b sin kx)/k`
    /// with seeded coefficients in `[-1, 1]`.
    pub fn smooth_random(
        base: &[f64],
        amplitude: f64,
        harmonics: usize,
        m: usize,
        seed: u64,
    ) -> Result<Self, FieldError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs: Vec<Vec<(f64, f64)>> = base
            .iter()
            .map(|_| {
                (1..=harmonics)
                    .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                    .collect()
            })
            .collect();
        let norm: f64 = (1..=harmonics)
            .map(|k| 2.0 / k as f64)
            .sum::<f64>()
            .max(1.0);
        GridField::from_fn(base.len(), m, |x| {
            base.iter()
                .zip(&coeffs)
                .map(|(b, cs)| {
                    let wave: f64 = cs
                        .iter()
                        .enumerate()
                        .map(|(k, (a, s))| {
                            let k = (k + 1) as f64;
                            (a * (k * x).cos() + s * (k * x).sin()) / k
                        })
                        .sum();
                    b + amplitude * wave / norm
                })
                .collect()
        })
    }

    pub fn components(&self) -> usize {
        self.values.len()
    }

    pub fn len(&self) -> usize {
        self.values[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        2.0 * PI / self.len() as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        grid_x(i, self.len())
    }

    pub fn component(&self, nu: usize) -> &[f64] {
        &self.values[nu]
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.values.iter().map(|c| c[i]).collect()
    }

    pub fn max_abs_diff(&self, other: &GridField) -> f64 {
        self.values
            .iter()
            .flatten()
            .zip(other.values.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Columns `x, <names>`; names default to `U1..UN`.
    pub fn write_csv<W: Write>(&self, out: W, names: Option<&[String]>) -> Result<(), FieldError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["x".to_string()];
        match names {
            Some(names) => header.extend(names.iter().cloned()),
            None => header.extend((1..=self.components()).map(|k| format!("U{k}"))),
        }
        w.write_record(&header).map_err(csv_error)?;
        for i in 0..self.len() {
            let row = std::iter::once(self.x(i)).chain(self.point(i));
            w.write_record(row.map(|v| format!("{v:.17e}")))
                .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a field written by [`GridField::write_csv`]. The `x` column
    /// must match the uniform periodic grid.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, FieldError> {
        let mut r = csv::Reader::from_reader(input);
        let n = r.headers().map_err(csv_error)?.len().saturating_sub(1);
        if n == 0 {
            return Err(FieldError::Shape("expected columns x, U1..UN".into()));
        }
        let mut xs = Vec::new();
        let mut values = vec![Vec::new(); n];
        for (line, record) in r.records().enumerate() {
            let record = record.map_err(csv_error)?;
            let parsed: Vec<f64> = record
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| FieldError::Csv(format!("row {}: {e}", line + 2)))?;
            if parsed.len() != n + 1 {
                return Err(FieldError::Csv(format!(
                    "row {} has {} columns",
                    line + 2,
                    parsed.len()
                )));
            }
            xs.push(parsed[0]);
            for (c, v) in values.iter_mut().zip(&parsed[1..]) {
                c.push(*v);
            }
        }
        let field = GridField::new(values)?;
        for (i, x) in xs.iter().enumerate() {
            if (x - field.x(i)).abs() > 1e-9 {
                return Err(FieldError::Csv(format!(
                    "x column is not the uniform grid at row {}",
                    i + 2
                )));
            }
        }
        Ok(field)
    }
}

fn csv_error(e: csv::Error) -> FieldError {
    FieldError::Csv(e.to_string())
}

pub(crate) fn grid_x(i: usize, m: usize) -> f64 {
    2.0 * PI * i as f64 / m as f64
}

/// Fourier differentiation on `[0, 2π)` with the Nyquist mode zeroed, so
/// the discrete operator is real and antisymmetric.
#[derive(Clone)]
pub struct SpectralDerivative {
    m: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl SpectralDerivative {
    pub fn new(m: usize) -> Self {
        let mut planner = FftPlanner::new();
        SpectralDerivative {
            m,
            forward: planner.plan_fft_forward(m),
            inverse: planner.plan_fft_inverse(m),
        }
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        let m = self.m;
        assert_eq!(values.len(), m);
        let mut buf: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        for (k, c) in buf.iter_mut().enumerate() {
            let wave = if k < m / 2 {
                k as f64
            } else if k == m / 2 {
                0.0
            } else {
                k as f64 - m as f64
            };
            *c = Complex::new(-c.im * wave, c.re * wave);
        }
        self.inverse.process(&mut buf);
        buf.iter().map(|c| c.re / m as f64).collect()
    }
}

impl std::fmt::Debug for SpectralDerivative {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SpectralDerivative({})", self.m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_derivative_of_harmonics() {
        let d = SpectralDerivative::new(32);
        let f: Vec<f64> = (0..32).map(|i| (3.0 * grid_x(i, 32)).sin()).collect();
        let df = d.apply(&f);
        for (i, v) in df.iter().enumerate() {
            assert!((v - 3.0 * (3.0 * grid_x(i, 32)).cos()).abs() < 1e-12);
        }
        let constant = d.apply(&[2.5; 32]);
        assert!(constant.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(matches!(
            GridField::new(vec![vec![0.0; 6]]),
            Err(FieldError::GridSize(6))
        ));
        assert!(matches!(
            GridField::new(vec![vec![f64::NAN; 4]]),
            Err(FieldError::NonFinite)
        ));
        assert!(GridField::new(vec![vec![0.0; 4], vec![0.0; 8]]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let f = GridField::smooth_random(&[1.0, -2.0], 0.3, 2, 16, 4).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf, None).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x,U1,U2\n"));
        assert_eq!(GridField::read_csv(&buf[..]).unwrap(), f);
        let bad = "x,U1\n0.0,1.0\n0.5,2.0\n";
        assert!(matches!(
            GridField::read_csv(bad.as_bytes()),
            Err(FieldError::Csv(_))
        ));
    }
}
