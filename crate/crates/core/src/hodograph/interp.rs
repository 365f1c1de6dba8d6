//! Cubic Hermite patches and fourth-order finite differences on uniform
//! node sets.

/// Value and derivative weights of the cubic Hermite basis at `u ∈ [0, 1]`:
/// `(value-at-0, slope-at-0, value-at-1, slope-at-1)`.
fn hermite(u: f64) -> ([f64; 4], [f64; 4]) {
    let u2 = u * u;
    let u3 = u2 * u;
    (
        [
            2.0 * u3 - 3.0 * u2 + 1.0,
            u3 - 2.0 * u2 + u,
            -2.0 * u3 + 3.0 * u2,
            u3 - u2,
        ],
        [
            6.0 * u2 - 6.0 * u,
            3.0 * u2 - 4.0 * u + 1.0,
            -6.0 * u2 + 6.0 * u,
            3.0 * u2 - 2.0 * u,
        ],
    )
}

/// Nodal data of one scalar on a patch corner.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct Corner {
    pub f: f64,
    pub fx: f64,
    pub fy: f64,
    pub fxy: f64,
}

/// Bicubic Hermite interpolant on the cell `[0, hx] × [0, hy]` with
/// corners `[(0,0), (1,0), (0,1), (1,1)]` at local coordinates `(u, v)`.
/// Returns `(f, ∂f/∂x, ∂f/∂y)`.
pub(crate) fn bicubic(corners: &[Corner; 4], hx: f64, hy: f64, u: f64, v: f64) -> [f64; 3] {
    let (bu, du) = hermite(u);
    let (bv, dv) = hermite(v);
    let mut out = [0.0; 3];
    for (k, c) in corners.iter().enumerate() {
        let (a, b) = (k % 2, k / 2);
        // value and slope weights for this corner along each axis
        let (vu, su, dvu, dsu) = (bu[2 * a], bu[2 * a + 1], du[2 * a], du[2 * a + 1]);
        let (vv, sv, dvv, dsv) = (bv[2 * b], bv[2 * b + 1], dv[2 * b], dv[2 * b + 1]);
        let terms = |wu: f64, wsu: f64, wv: f64, wsv: f64| {
            wu * wv * c.f
                + hx * wsu * wv * c.fx
                + hy * wu * wsv * c.fy
                + hx * hy * wsu * wsv * c.fxy
        };
        out[0] += terms(vu, su, vv, sv);
        out[1] += terms(dvu, dsu, vv, sv) / hx;
        out[2] += terms(vu, su, dvv, dsv) / hy;
    }
    out
}

/// Fourth-order first derivative of samples with spacing `h`; one-sided
/// five-point stencils near the ends. Needs at least 5 samples.
pub(crate) fn derivative4(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    assert!(n >= 5, "fourth-order differences need 5 samples");
    let mut d = vec![0.0; n];
    for i in 2..n - 2 {
        d[i] = (8.0 * (f[i + 1] - f[i - 1]) - (f[i + 2] - f[i - 2])) / (12.0 * h);
    }
    let edge0 = |g: &dyn Fn(usize) -> f64| {
        (-25.0 * g(0) + 48.0 * g(1) - 36.0 * g(2) + 16.0 * g(3) - 3.0 * g(4)) / (12.0 * h)
    };
    let edge1 = |g: &dyn Fn(usize) -> f64| {
        (-3.0 * g(0) - 10.0 * g(1) + 18.0 * g(2) - 6.0 * g(3) + g(4)) / (12.0 * h)
    };
    d[0] = edge0(&|k| f[k]);
    d[1] = edge1(&|k| f[k]);
    d[n - 1] = -edge0(&|k| f[n - 1 - k]);
    d[n - 2] = -edge1(&|k| f[n - 1 - k]);
    d
}

/// Fourth-order central derivative at `i` of `f(i)`, or `None` when
/// the stencil leaves `0..n`.
pub(crate) fn central4(f: impl Fn(usize) -> f64, i: usize, n: usize, h: f64) -> Option<f64> {
    if i < 2 || i + 2 >= n {
        return None;
    }
    Some((8.0 * (f(i + 1) - f(i - 1)) - (f(i + 2) - f(i - 2))) / (12.0 * h))
}
