//! Periodic cubic interpolating splines with vector values.

/// Value and first three derivatives of a spline at one parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet<const D: usize> {
    pub value: [f64; D],
    pub d1: [f64; D],
    pub d2: [f64; D],
    pub d3: [f64; D],
}

/// C² periodic cubic spline through `(knots[i], values[i])` with period
/// `period`. The knots must be strictly increasing and span less than one
/// period.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicSpline<const D: usize> {
    knots: Vec<f64>,
    period: f64,
    // per segment: value, slope, curvature/2, jerk/6 at the left knot
    coeffs: Vec<[[f64; 4]; D]>,
}

impl<const D: usize> PeriodicSpline<D> {
    /// Fits the spline. Panics on fewer than three knots or non-increasing
    /// knots; callers validate meshes before fitting.
    pub fn fit(knots: &[f64], values: &[[f64; D]], period: f64) -> Self {
        let n = knots.len();
        assert!(n >= 3 && values.len() == n, "periodic spline needs >= 3 knots");
        let h: Vec<f64> = (0..n)
            .map(|i| {
                let next = if i + 1 == n { knots[0] + period } else { knots[i + 1] };
                next - knots[i]
            })
            .collect();
        assert!(h.iter().all(|&x| x > 0.0), "knots must be strictly increasing");

        // second derivatives M solve the cyclic tridiagonal system
        //   h[i-1] M[i-1] + 2 (h[i-1] + h[i]) M[i] + h[i] M[i+1] = rhs[i]
        let mut second = vec![[0.0; D]; n];
        for d in 0..D {
            let rhs: Vec<f64> = (0..n)
                .map(|i| {
                    let ip = (i + 1) % n;
                    let im = (i + n - 1) % n;
                    6.0 * ((values[ip][d] - values[i][d]) / h[i]
                        - (values[i][d] - values[im][d]) / h[im])
                })
                .collect();
            let sol = solve_cyclic(&h, &rhs);
            for i in 0..n {
                second[i][d] = sol[i];
            }
        }

        let coeffs = (0..n)
            .map(|i| {
                let ip = (i + 1) % n;
                let mut c = [[0.0; 4]; D];
                for d in 0..D {
                    let (y0, y1) = (values[i][d], values[ip][d]);
                    let (m0, m1) = (second[i][d], second[ip][d]);
                    c[d] = [
                        y0,
                        (y1 - y0) / h[i] - h[i] * (2.0 * m0 + m1) / 6.0,
                        m0 / 2.0,
                        (m1 - m0) / (6.0 * h[i]),
                    ];
                }
                c
            })
            .collect();
        Self {
            knots: knots.to_vec(),
            period,
            coeffs,
        }
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Maps `t` into `[knots[0], knots[0] + period)`.
    #[inline]
    pub fn wrap(&self, t: f64) -> f64 {
        let t0 = self.knots[0];
        let mut x = (t - t0).rem_euclid(self.period);
        if x >= self.period {
            x = 0.0;
        }
        t0 + x
    }

    /// Segment containing the wrapped parameter. `hint` is tried first.
    #[inline]
    pub fn locate(&self, t: f64, hint: usize) -> usize {
        let n = self.knots.len();
        let upper = |i: usize| {
            if i + 1 == n {
                self.knots[0] + self.period
            } else {
                self.knots[i + 1]
            }
        };
        let i = hint.min(n - 1);
        if t >= self.knots[i] && t < upper(i) {
            return i;
        }
        let j = (i + 1) % n;
        if t >= self.knots[j] && t < upper(j) {
            return j;
        }
        let k = (i + n - 1) % n;
        if t >= self.knots[k] && t < upper(k) {
            return k;
        }
        match self.knots.binary_search_by(|k| k.partial_cmp(&t).unwrap()) {
            Ok(idx) => idx,
            Err(idx) => idx.saturating_sub(1),
        }
    }

    #[inline]
    pub fn jet_in(&self, seg: usize, t: f64) -> Jet<D> {
        let x = t - self.knots[seg];
        let c = &self.coeffs[seg];
        let mut jet = Jet {
            value: [0.0; D],
            d1: [0.0; D],
            d2: [0.0; D],
            d3: [0.0; D],
        };
        for d in 0..D {
            let [a, b, cc, e] = c[d];
            jet.value[d] = a + x * (b + x * (cc + x * e));
            jet.d1[d] = b + x * (2.0 * cc + 3.0 * e * x);
            jet.d2[d] = 2.0 * cc + 6.0 * e * x;
            jet.d3[d] = 6.0 * e;
        }
        jet
    }

    /// Value and derivatives at an arbitrary (unwrapped) parameter.
    pub fn jet(&self, t: f64) -> Jet<D> {
        let t = self.wrap(t);
        let seg = self.locate(t, 0);
        self.jet_in(seg, t)
    }

    /// Jet exactly at knot `i`.
    pub fn jet_at_knot(&self, i: usize) -> Jet<D> {
        self.jet_in(i, self.knots[i])
    }

    /// Polynomial coefficients of segment `seg` (lowest order first) in the
    /// local variable `t - knots[seg]`, together with the segment length.
    pub fn segment(&self, seg: usize) -> (&[[f64; 4]; D], f64) {
        let n = self.knots.len();
        let next = if seg + 1 == n {
            self.knots[0] + self.period
        } else {
            self.knots[seg + 1]
        };
        (&self.coeffs[seg], next - self.knots[seg])
    }
}

/// Solves the symmetric cyclic tridiagonal system of the spline via
/// Sherman-Morrison on top of the Thomas algorithm.
fn solve_cyclic(h: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = h.len();
    let diag: Vec<f64> = (0..n).map(|i| 2.0 * (h[(i + n - 1) % n] + h[i])).collect();
    // sub[i] couples i with i-1, sup[i] couples i with i+1
    let sub: Vec<f64> = (0..n).map(|i| h[(i + n - 1) % n]).collect();
    let sup: Vec<f64> = h.to_vec();
    let alpha = sup[n - 1]; // A[n-1][0]
    let beta = sub[0]; // A[0][n-1]
    let gamma = -diag[0];

    let mut b = diag.clone();
    b[0] -= gamma;
    b[n - 1] -= alpha * beta / gamma;

    let x = thomas(&sub, &b, &sup, rhs);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = thomas(&sub, &b, &sup, &u);
    let fact = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect()
}

fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i] * c[i - 1];
        c[i] = if i + 1 < n { sup[i] / m } else { 0.0 };
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}
