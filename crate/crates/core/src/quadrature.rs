//! Quadrature rules on the reference triangle `(0,0), (1,0), (0,1)`.

/// Points in barycentric coordinates, weights summing to the reference area 1/2.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadratureRule {
    /// Symmetric 6-point rule exact to degree 4.
    pub fn degree4() -> Self {
        const A: f64 = 0.445_948_490_915_964_886_32;
        const WA: f64 = 0.223_381_589_678_011_465_70 / 2.0;
        const B: f64 = 0.091_576_213_509_770_743_46;
        const WB: f64 = 0.109_951_743_655_321_867_64 / 2.0;
        let a2 = 1.0 - 2.0 * A;
        let b2 = 1.0 - 2.0 * B;
        QuadratureRule {
            points: vec![
                [A, A, a2],
                [A, a2, A],
                [a2, A, A],
                [B, B, b2],
                [B, b2, B],
                [b2, B, B],
            ],
            weights: vec![WA, WA, WA, WB, WB, WB],
            degree: 4,
        }
    }

    /// Collapsed Gauss–Legendre product rule with `n * n` points,
    /// exact to degree `2n - 2`.
    pub fn collapsed_gauss(n: usize) -> Self {
        let (x, w) = gauss_legendre(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for i in 0..n {
            // map [-1,1] -> [0,1]
            let xi = 0.5 * (x[i] + 1.0);
            let wi = 0.5 * w[i];
            for j in 0..n {
                let eta = 0.5 * (x[j] + 1.0);
                let wj = 0.5 * w[j];
                let rx = xi;
                let ry = eta * (1.0 - xi);
                points.push([1.0 - rx - ry, rx, ry]);
                weights.push(wi * wj * (1.0 - xi));
            }
        }
        QuadratureRule {
            points,
            weights,
            degree: 2 * n - 2,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            // p1 = P_n(z), p0 = P_{n-1}(z)
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}
