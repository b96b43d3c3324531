//! Special functions and quadrature primitives.

use std::sync::OnceLock;

/// Euler–Mascheroni constant γ_E.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Entire exponential integral `Ein(x) = ∫_0^x (1 − e^{−t})/t dt`.
///
/// Stable for small arguments, where `E₁` is dominated by the logarithm.
pub fn ein(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x == 0.0 {
        return 0.0;
    }
    if x <= 3.0 {
        // Σ_{k≥1} (−1)^{k+1} x^k / (k·k!)
        let mut term = x; // x^k / k!
        let mut sum = x;
        let mut k = 1.0;
        loop {
            k += 1.0;
            term *= -x / k;
            let add = term / k;
            sum += add;
            if add.abs() <= 1e-17 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        e1(x) + EULER_GAMMA + x.ln()
    }
}

/// Exponential integral `E₁(x) = ∫_x^∞ e^{−t}/t dt` for `x > 0`.
pub fn e1(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x <= 1.0 {
        return -EULER_GAMMA - x.ln() + ein(x);
    }
    if x > 740.0 {
        return 0.0;
    }
    // Modified Lentz evaluation of the continued fraction.
    let tiny = 1e-300;
    let mut b = x + 1.0;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..400 {
        let an = -((i * i) as f64);
        b += 2.0;
        d = 1.0 / (an * d + b);
        c = b + an / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h * (-x).exp()
}

/// `1 − J₀(x)` without cancellation at small `x`.
pub fn one_minus_j0(x: f64) -> f64 {
    if x.abs() < 1.0 {
        -bessel_series(x, |m| if m == 0 { 0.0 } else { 1.0 })
    } else {
        1.0 - libm::j0(x)
    }
}

/// `J₀(x)`.
pub fn j0(x: f64) -> f64 {
    libm::j0(x)
}

/// Σ_m c(m) (−1)^m (x/2)^{2m}/(m!)², the J₀ power series with weights.
fn bessel_series(x: f64, c: impl Fn(u32) -> f64) -> f64 {
    let q = 0.25 * x * x;
    let mut t = 1.0;
    let mut sum = c(0);
    for m in 1..40u32 {
        t *= -q / ((m * m) as f64);
        let add = c(m) * t;
        sum += add;
        if t.abs() * (c(m).abs() + 1.0) < 1e-18 * (sum.abs() + 1e-300) {
            break;
        }
    }
    sum
}

/// Angular average of `|e^{ik₀} − 1|²` over directions of `k`: `2(1 − J₀(k))`.
pub fn angular_first(k: f64) -> f64 {
    2.0 * one_minus_j0(k)
}

/// Angular average of `|e^{ik₀} − 1|⁴`: `6 − 8J₀(k) + 2J₀(2k)`.
pub fn angular_second_diag(k: f64) -> f64 {
    if k < 1.0 {
        bessel_series(k, |m| if m == 0 { 0.0 } else { -8.0 + 2.0 * 4f64.powi(m as i32) })
    } else {
        6.0 - 8.0 * j0(k) + 2.0 * j0(2.0 * k)
    }
}

/// Angular average of `|e^{ik₀} − 1|²|e^{ik₁} − 1|²`: `4 − 8J₀(k) + 4J₀(√2 k)`.
pub fn angular_second_mixed(k: f64) -> f64 {
    if k < 1.0 {
        bessel_series(k, |m| if m == 0 { 0.0 } else { -8.0 + 4.0 * 2f64.powi(m as i32) })
    } else {
        4.0 - 8.0 * j0(k) + 4.0 * j0(std::f64::consts::SQRT_2 * k)
    }
}

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Nodes and weights by Newton iteration on `P_n`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
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
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }

    /// Shared 20-point rule.
    pub fn g20() -> &'static GaussLegendre {
        static R: OnceLock<GaussLegendre> = OnceLock::new();
        R.get_or_init(|| GaussLegendre::new(20))
    }

    /// Shared 12-point rule.
    pub fn g12() -> &'static GaussLegendre {
        static R: OnceLock<GaussLegendre> = OnceLock::new();
        R.get_or_init(|| GaussLegendre::new(12))
    }

    /// ∫_a^b f.
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let h = 0.5 * (b - a);
        let c = 0.5 * (b + a);
        let mut s = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            s += w * f(c + h * x);
        }
        s * h
    }

    /// Visit the mapped nodes and weights on `[a, b]`.
    pub fn for_each(&self, a: f64, b: f64, mut f: impl FnMut(f64, f64)) {
        let h = 0.5 * (b - a);
        let c = 0.5 * (b + a);
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            f(c + h * x, w * h);
        }
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Breakpoints between `a > 0` and `b` that are uniform in `ln x`, with at
/// most `width` per panel.
pub fn log_breaks(a: f64, b: f64, width: f64) -> Vec<f64> {
    assert!(a > 0.0 && b > a);
    let span = (b / a).ln();
    let n = (span / width).ceil().max(1.0) as usize;
    let step = span / n as f64;
    let mut v: Vec<f64> = (0..=n).map(|i| a * (step * i as f64).exp()).collect();
    v[n] = b;
    v
}

/// Composite Gauss–Legendre integral over consecutive breakpoints.
pub fn integrate_breaks(rule: &GaussLegendre, breaks: &[f64], mut f: impl FnMut(f64) -> f64) -> f64 {
    let mut acc = NeumaierSum::default();
    for w in breaks.windows(2) {
        acc.add(rule.integrate(w[0], w[1], &mut f));
    }
    acc.value()
}

/// Compensated (Neumaier) summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::iter::FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = NeumaierSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Σ of an iterator with compensation.
pub fn kahan_sum(iter: impl IntoIterator<Item = f64>) -> f64 {
    iter.into_iter().collect::<NeumaierSum>().value()
}

/// Lattice shells `{y ∈ ℤ² : |y|² = n}` for `n ≤ n_max`, as `(n, multiplicity)`.
pub fn lattice_shells(n_max: u64) -> Vec<(u64, u32)> {
    let r = (n_max as f64).sqrt().floor() as i64 + 1;
    let mut counts = vec![0u32; n_max as usize + 1];
    for a in -r..=r {
        for b in -r..=r {
            let n = (a * a + b * b) as u64;
            if n <= n_max {
                counts[n as usize] += 1;
            }
        }
    }
    counts.into_iter().enumerate().filter(|(_, c)| *c > 0).map(|(n, c)| (n as u64, c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        let g = GaussLegendre::new(7);
        let v = g.integrate(-1.0, 2.0, |x| x.powi(13) - 3.0 * x.powi(4));
        let exact = (2f64.powi(14) - 1.0) / 14.0 - 3.0 * (2f64.powi(5) + 1.0) / 5.0;
        assert!((v - exact).abs() < 1e-10 * exact.abs());
        assert!((g.weights.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn ein_and_e1_are_consistent_across_the_branch_point() {
        for &x in &[0.5, 0.999, 1.0, 1.001, 2.9, 3.0, 3.1, 10.0] {
            let lhs = ein(x);
            let rhs = e1(x) + EULER_GAMMA + f64::ln(x);
            assert!((lhs - rhs).abs() < 2e-15 * lhs.abs().max(1.0), "x={x}");
        }
    }

    #[test]
    fn bessel_combinations_match_direct_evaluation() {
        for &k in &[0.5, 0.9, 0.999] {
            let d1 = 2.0 - 2.0 * j0(k);
            let d2 = 6.0 - 8.0 * j0(k) + 2.0 * j0(2.0 * k);
            let d3 = 4.0 - 8.0 * j0(k) + 4.0 * j0(std::f64::consts::SQRT_2 * k);
            assert!((angular_first(k) - d1).abs() < 1e-14);
            assert!((angular_second_diag(k) - d2).abs() < 1e-13);
            assert!((angular_second_mixed(k) - d3).abs() < 1e-13);
        }
        // leading behaviour: k²/2, 3k⁴/8, k⁴/8
        let k = 1e-4;
        assert!((angular_first(k) / (k * k / 2.0) - 1.0).abs() < 1e-8);
        assert!((angular_second_diag(k) / (3.0 * k.powi(4) / 8.0) - 1.0).abs() < 1e-7);
        assert!((angular_second_mixed(k) / (k.powi(4) / 8.0) - 1.0).abs() < 1e-7);
    }

    #[test]
    fn shells_count_points() {
        let s = lattice_shells(25);
        let total: u32 = s.iter().map(|(_, c)| c).sum();
        let mut direct = 0;
        for a in -5i64..=5 {
            for b in -5i64..=5 {
                if a * a + b * b <= 25 {
                    direct += 1;
                }
            }
        }
        assert_eq!(total, direct);
        assert_eq!(s[0], (0, 1));
        assert_eq!(s.iter().find(|(n, _)| *n == 25).unwrap().1, 12);
    }

    #[test]
    fn neumaier_recovers_lost_bits() {
        let v = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(kahan_sum(v), 2.0);
    }
}
