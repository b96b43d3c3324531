//! Brute-force ground truth on small tori: grand-canonical enumeration,
//! sine-Gordon Monte Carlo, Wick moments and Gaussian identity checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{CovarianceFamily, Direction};
use crate::error::{Error, Result};
use crate::lattice_green::{LatticeSpec, Particle, PotentialTable};
use crate::special::NeumaierSum;

/// Largest enumeration order.
pub const MAX_ORDER: usize = 6;
/// Largest number of position tuples visited by one enumeration.
const MAX_LEAVES: f64 = 4e9;
/// Samples per independently keyed RNG stream.
const BLOCK: usize = 4096;
/// Default series-control threshold: last order below this fraction of the total.
pub const SERIES_FRACTION: f64 = 1e-2;

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Truncated grand-canonical sums with and without probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumerationResult {
    #[serde(rename = "Z")]
    pub z: f64,
    #[serde(rename = "Z_probe")]
    pub z_probe: Option<f64>,
    pub n_max: usize,
    /// Order-`n` contributions to `Z` (zero for skipped orders).
    pub contributions: Vec<f64>,
    pub probe_contributions: Option<Vec<f64>>,
    /// Last nonzero order relative to the total.
    pub last_fraction: f64,
    pub series_controlled: bool,
}

impl EnumerationResult {
    /// `Z_probe / Z`.
    pub fn ratio(&self) -> Option<f64> {
        self.z_probe.map(|p| p / self.z)
    }
}

/// Pair-interaction lookup `V(x_p − x_q)` over site indices.
struct PairTable {
    volume: usize,
    v: Vec<f64>,
    v0: f64,
}

impl PairTable {
    fn new(table: &PotentialTable) -> Self {
        let s = table.spec;
        let n = s.volume;
        let mut v = vec![0.0; n * n];
        for p in 0..n {
            let a = s.point(p);
            for q in 0..n {
                let b = s.point(q);
                v[p * n + q] = table.get([a[0] - b[0], a[1] - b[1]]);
            }
        }
        PairTable { volume: n, v, v0: table.get([0, 0]) }
    }

    fn get(&self, p: usize, q: usize) -> f64 {
        self.v[p * self.volume + q]
    }
}

/// `Σ_x exp(−(β/2) Σ_{i,j} q_i q_j V(x_i − x_j))` over gas positions with the
/// given charges; probes sit at fixed sites. With `fix_first` the first
/// particle is pinned at site 0 and the sum multiplied by the volume.
fn pattern_sum(pt: &PairTable, beta: f64, charges: &[f64], probes: &[(usize, f64)], fix_first: bool) -> f64 {
    let n = charges.len();
    let mut base = 0.0;
    for (a, &(pa, qa)) in probes.iter().enumerate() {
        base += 0.5 * qa * qa * pt.v0;
        for &(pb, qb) in &probes[a + 1..] {
            base += qa * qb * pt.get(pa, pb);
        }
    }
    if n == 0 {
        return (-beta * base).exp();
    }
    let self_e: f64 = charges.iter().map(|q| 0.5 * q * q * pt.v0).sum();
    let base = base + self_e;
    // energy of particle k at site p against probes
    let probe_e = |k: usize, p: usize| probes.iter().map(|&(pp, qp)| charges[k] * qp * pt.get(pp, p)).sum::<f64>();

    fn dfs(
        pt: &PairTable,
        beta: f64,
        charges: &[f64],
        probe_e: &dyn Fn(usize, usize) -> f64,
        pos: &mut Vec<usize>,
        energy: f64,
    ) -> f64 {
        let k = pos.len();
        if k == charges.len() {
            return (-beta * energy).exp();
        }
        let mut acc = 0.0;
        for p in 0..pt.volume {
            let mut e = energy + probe_e(k, p);
            for (i, &pi) in pos.iter().enumerate() {
                e += charges[i] * charges[k] * pt.get(pi, p);
            }
            pos.push(p);
            acc += dfs(pt, beta, charges, probe_e, pos, e);
            pos.pop();
        }
        acc
    }

    let first: Vec<usize> = if fix_first { vec![0] } else { (0..pt.volume).collect() };
    let total: f64 = first
        .par_iter()
        .map(|&p| {
            let mut pos = vec![p];
            dfs(pt, beta, charges, &probe_e, &mut pos, base + probe_e(0, p))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<NeumaierSum>()
        .value();
    if fix_first {
        total * pt.volume as f64
    } else {
        total
    }
}

fn check_probes(spec: &LatticeSpec, probes: &[Particle]) -> Result<Vec<(usize, f64)>> {
    probes
        .iter()
        .map(|p| {
            if !(p.charge.abs() > 0.0 && p.charge.abs() < 1.0) {
                return Err(Error::Domain(format!("probe charge {} must satisfy 0 < |eta| < 1", p.charge)));
            }
            Ok((spec.index(p.pos), p.charge))
        })
        .collect()
}

/// Order-`n` sum `(zⁿ/n!) Σ_{patterns} Σ_x e^{−βH}`.
fn order_term(pt: &PairTable, beta: f64, z: f64, n: usize, neutral_only: bool, probes: &[(usize, f64)]) -> f64 {
    let free = probes.is_empty();
    let ks: Vec<usize> = if neutral_only {
        if n % 2 == 1 {
            return 0.0;
        }
        vec![n / 2]
    } else {
        (0..=n).collect()
    };
    let mut acc = 0.0;
    for k in ks {
        // global charge flip maps pattern k to n−k when no probe breaks the symmetry
        if free && !neutral_only && k > n - k {
            continue;
        }
        let charges: Vec<f64> = (0..n).map(|i| if i < k { 1.0 } else { -1.0 }).collect();
        let mult = if free && !neutral_only && 2 * k != n { 2.0 } else { 1.0 };
        acc += mult * binomial(n, k) * pattern_sum(pt, beta, &charges, probes, free);
    }
    z.powi(n as i32) / factorial(n) * acc
}

/// Truncated grand-canonical partition function.
///
/// With the Coulomb table only neutral configurations contribute, with pair
/// energy `W(x|0)`. With a Yukawa table every charge pattern contributes with
/// weight `exp(−(β/2) Σ_{i,j} σ_iσ_j W(x_i − x_j; m))`, which is the exact
/// z-expansion of the sine-Gordon expectation at mass `m`.
pub fn enumerate_z(
    table: &PotentialTable,
    beta: f64,
    z: f64,
    n_max: usize,
    probes: &[Particle],
) -> Result<EnumerationResult> {
    if n_max > MAX_ORDER {
        return Err(Error::Resource(format!("enumeration order {n_max} exceeds {MAX_ORDER}")));
    }
    if !(beta > 0.0) || !(z >= 0.0) {
        return Err(Error::Domain(format!("need beta > 0 and z >= 0 (beta={beta}, z={z})")));
    }
    let spec = table.spec;
    let leaves = (spec.volume as f64).powi(n_max as i32) * (n_max + 1) as f64;
    if leaves > MAX_LEAVES {
        return Err(Error::Resource(format!("{leaves:.2e} position tuples exceed the budget {MAX_LEAVES:.0e}")));
    }
    let probes = check_probes(&spec, probes)?;
    let pt = PairTable::new(table);
    let neutral = table.is_coulomb();
    let contributions: Vec<f64> = (0..=n_max).map(|n| order_term(&pt, beta, z, n, neutral, &[])).collect();
    let probe_contributions = if probes.is_empty() {
        None
    } else {
        Some((0..=n_max).map(|n| order_term(&pt, beta, z, n, neutral, &probes)).collect::<Vec<_>>())
    };
    let zsum: f64 = contributions.iter().sum();
    let last = contributions.iter().rev().find(|c| **c != 0.0).copied().unwrap_or(0.0);
    let last_fraction = if contributions.iter().filter(|c| **c != 0.0).count() > 1 { last / zsum } else { 0.0 };
    Ok(EnumerationResult {
        z: zsum,
        z_probe: probe_contributions.as_ref().map(|c| c.iter().sum()),
        n_max,
        contributions,
        probe_contributions,
        last_fraction,
        series_controlled: last_fraction < SERIES_FRACTION,
    })
}

/// `M_n = E[(Σ_x cos φ_x)ⁿ]` for `n ≤ n_max` under covariance `β W(·; m)`,
/// from `E[Π_k cos φ_{x_k}] = 2^{−n} Σ_σ exp(−½ Σ_{i,j} σ_iσ_j C(x_i − x_j))`.
pub fn wick_moments(table: &PotentialTable, beta: f64, n_max: usize) -> Result<Vec<f64>> {
    if table.is_coulomb() {
        return Err(Error::Domain("Wick moments need a massive (Yukawa) covariance".into()));
    }
    if n_max > MAX_ORDER {
        return Err(Error::Resource(format!("Wick order {n_max} exceeds {MAX_ORDER}")));
    }
    let spec = table.spec;
    let v = spec.volume;
    let c: Vec<f64> = table.values.iter().map(|w| beta * w).collect();
    let diff = |p: usize, q: usize| {
        let (a, b) = (spec.point(p), spec.point(q));
        c[spec.index([a[0] - b[0], a[1] - b[1]])]
    };
    let mut out = vec![1.0];
    for n in 1..=n_max {
        // translation invariance pins x_1 = 0; σ and −σ give equal terms
        let tuples = v.pow(n as u32 - 1);
        let total: f64 = (0..tuples)
            .into_par_iter()
            .map(|t| {
                let mut xs = vec![0usize; n];
                let mut r = t;
                for x in xs.iter_mut().skip(1) {
                    *x = r % v;
                    r /= v;
                }
                let mut cm = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        cm[i * n + j] = diff(xs[i], xs[j]);
                    }
                }
                let mut acc = 0.0;
                for mask in 0..(1u32 << (n - 1)) {
                    let s: Vec<f64> =
                        (0..n).map(|i| if i > 0 && (mask >> (i - 1)) & 1 == 1 { -1.0 } else { 1.0 }).collect();
                    let mut q = 0.0;
                    for i in 0..n {
                        for j in 0..n {
                            q += s[i] * s[j] * cm[i * n + j];
                        }
                    }
                    acc += (-0.5 * q).exp();
                }
                acc
            })
            .collect::<Vec<_>>()
            .into_iter()
            .collect::<NeumaierSum>()
            .value();
        out.push(total * v as f64 * 2.0 / 2f64.powi(n as i32));
    }
    Ok(out)
}

/// `Σ_{n ≤ N} (2z)ⁿ/n! · M_n`.
pub fn wick_series(moments: &[f64], z: f64) -> f64 {
    moments.iter().enumerate().map(|(n, m)| (2.0 * z).powi(n as i32) / factorial(n) * m).sum()
}

/// Monte Carlo estimate of a (possibly complex) expectation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: u64,
    pub seed: u64,
    /// Imaginary part, reported when an insertion makes the integrand complex.
    pub imag_mean: Option<f64>,
    pub imag_stderr: Option<f64>,
}

impl MCEstimate {
    /// `|mean − target| ≤ k · stderr`.
    pub fn agrees(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr
    }
}

/// Probe pair `e^{iη(φ_x − φ_y)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Insertion {
    pub eta: f64,
    pub x: [i64; 2],
    pub y: [i64; 2],
}

/// Real synthesis matrix `A` (row-major, `V × 2V`) with `A Aᵀ = β W(·; m)`.
fn synthesis_matrix(spec: &LatticeSpec, beta: f64, m: f64) -> Result<Vec<f64>> {
    let n = spec.side;
    let v = n * n;
    let mut a = vec![0.0; v * 2 * v];
    for ka in 0..n {
        for kb in 0..n {
            let lam = beta / (spec.laplacian_symbol(ka, kb) + m * m);
            if !(lam > 0.0 && lam.is_finite()) {
                return Err(Error::Spec(format!("non-positive spectrum at mode ({ka},{kb})")));
            }
            let c = (lam / v as f64).sqrt();
            let k = ka * n + kb;
            for x in 0..v {
                let (x0, x1) = ((x / n) as f64, (x % n) as f64);
                let ph = 2.0 * std::f64::consts::PI * (ka as f64 * x0 + kb as f64 * x1) / n as f64;
                a[x * 2 * v + 2 * k] = c * ph.cos();
                a[x * 2 * v + 2 * k + 1] = c * ph.sin();
            }
        }
    }
    Ok(a)
}

fn mean_err(n: u64, s: f64, s2: f64) -> (f64, f64) {
    let nf = n as f64;
    let mean = s / nf;
    let var = ((s2 - nf * mean * mean) / (nf - 1.0)).max(0.0);
    (mean, (var / nf).sqrt())
}

/// RNG for one block: keyed by the seed, stream selected by the block index.
fn block_rng(seed: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block);
    rng
}

/// Streams sine-Gordon fields `φ` (covariance `β W(·; m)`) block by block,
/// folding each into a `width`-wide accumulator; blocks merge in order.
fn stream_fields(
    spec: &LatticeSpec,
    beta: f64,
    m: f64,
    samples: u64,
    seed: u64,
    width: usize,
    fold: impl Fn(&[f64], &mut [f64]) + Sync,
) -> Result<Vec<f64>> {
    if !(m > 0.0) {
        return Err(Error::Domain(format!("regulator mass must be positive, got {m}")));
    }
    if samples < 2 {
        return Err(Error::Domain("need at least two samples".into()));
    }
    let a = synthesis_matrix(spec, beta, m)?;
    let v = spec.volume;
    let blocks = samples.div_ceil(BLOCK as u64);
    let parts: Vec<Vec<f64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = block_rng(seed, b);
            let count = (samples - b * BLOCK as u64).min(BLOCK as u64);
            let mut xi = vec![0.0; 2 * v];
            let mut phi = vec![0.0; v];
            let mut acc = vec![0.0; width];
            for _ in 0..count {
                xi.iter_mut().for_each(|g| *g = rng.sample(StandardNormal));
                for (x, p) in phi.iter_mut().enumerate() {
                    *p = a[x * 2 * v..(x + 1) * 2 * v].iter().zip(&xi).map(|(u, w)| u * w).sum();
                }
                fold(&phi, &mut acc);
            }
            acc
        })
        .collect();
    Ok(parts.into_iter().fold(vec![0.0; width], |mut t, p| {
        t.iter_mut().zip(&p).for_each(|(x, y)| *x += y);
        t
    }))
}

fn boltzmann(phi: &[f64], z: f64) -> f64 {
    (2.0 * z * phi.iter().map(|p| p.cos()).sum::<f64>()).exp()
}

/// Sample mean of `e^{2z Σ_x cos φ_x}` (times `e^{iη(φ_x − φ_y)}` with an
/// insertion) for `φ` with covariance `β W(·; m)`.
pub fn sine_gordon_mc(
    spec: &LatticeSpec,
    beta: f64,
    m: f64,
    z: f64,
    samples: u64,
    seed: u64,
    insertion: Option<Insertion>,
) -> Result<MCEstimate> {
    let ins = insertion.map(|i| (i.eta, spec.index(i.x), spec.index(i.y)));
    let acc = stream_fields(spec, beta, m, samples, seed, 4, |phi, acc| {
        let w = boltzmann(phi, z);
        let (re, im) = match ins {
            None => (w, 0.0),
            Some((eta, ix, iy)) => {
                let t = eta * (phi[ix] - phi[iy]);
                (w * t.cos(), w * t.sin())
            }
        };
        acc[0] += re;
        acc[1] += re * re;
        acc[2] += im;
        acc[3] += im * im;
    })?;
    let (mean, stderr) = mean_err(samples, acc[0], acc[1]);
    let (im, ime) = mean_err(samples, acc[2], acc[3]);
    Ok(MCEstimate { mean, stderr, samples, seed, imag_mean: ins.map(|_| im), imag_stderr: ins.map(|_| ime) })
}

/// `⟨e^{iη(φ_x − φ_y)}⟩ = E[e^{iη(φ_x−φ_y)} e^{2zΣcos φ}] / E[e^{2zΣcos φ}]`
/// from one sample stream; the error is the delta-method standard error.
pub fn sine_gordon_correlation_mc(
    spec: &LatticeSpec,
    beta: f64,
    m: f64,
    z: f64,
    samples: u64,
    seed: u64,
    insertion: Insertion,
) -> Result<MCEstimate> {
    let (eta, ix, iy) = (insertion.eta, spec.index(insertion.x), spec.index(insertion.y));
    let acc = stream_fields(spec, beta, m, samples, seed, 7, |phi, acc| {
        let w = boltzmann(phi, z);
        let t = eta * (phi[ix] - phi[iy]);
        let (n, i) = (w * t.cos(), w * t.sin());
        for (k, v) in [w, n, w * w, n * n, w * n, i, i * i].into_iter().enumerate() {
            acc[k] += v;
        }
    })?;
    let nf = samples as f64;
    let (d, nm) = (acc[0] / nf, acc[1] / nf);
    let var_d = (acc[2] / nf - d * d) * nf / (nf - 1.0);
    let var_n = (acc[3] / nf - nm * nm) * nf / (nf - 1.0);
    let cov = (acc[4] / nf - d * nm) * nf / (nf - 1.0);
    let r = nm / d;
    let var_r = (var_n - 2.0 * r * cov + r * r * var_d) / (d * d * nf);
    let (im, ime) = mean_err(samples, acc[5], acc[6]);
    Ok(MCEstimate {
        mean: r,
        stderr: var_r.max(0.0).sqrt(),
        samples,
        seed,
        imag_mean: Some(im / d),
        imag_stderr: Some(ime / d),
    })
}

/// One regulator value of a sine-Gordon identity check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityAtMass {
    pub m: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SineGordonIdentityReport {
    pub total_charge: f64,
    pub neutral: bool,
    /// `m → 0` value: the Coulomb form when neutral, otherwise 0.
    pub limit: f64,
    pub values: Vec<IdentityAtMass>,
    /// Distance to the limit shrinks along the (decreasing) mass sequence.
    pub converging: bool,
}

/// Checks `E_m[exp(iΣ_j σ_j φ_{x_j})] = exp(−(β/2) Σ_{i,j} σ_iσ_j W(x_i − x_j; m))`
/// along a decreasing mass sequence against its `m → 0` limit.
pub fn verify_sine_gordon_identity(
    spec: &LatticeSpec,
    beta: f64,
    m_sequence: &[f64],
    charges: &[f64],
    positions: &[[i64; 2]],
) -> Result<SineGordonIdentityReport> {
    if charges.len() != positions.len() || charges.is_empty() {
        return Err(Error::Domain("charges and positions must be non-empty and of equal length".into()));
    }
    let quad = |t: &PotentialTable| {
        let mut q = 0.0;
        for (i, a) in positions.iter().enumerate() {
            for (j, b) in positions.iter().enumerate() {
                q += charges[i] * charges[j] * t.get([a[0] - b[0], a[1] - b[1]]);
            }
        }
        q
    };
    let total: f64 = charges.iter().sum();
    let neutral = total.abs() < 1e-12;
    let limit =
        if neutral { (-0.5 * beta * quad(&crate::lattice_green::coulomb_potential(*spec)?)).exp() } else { 0.0 };
    let values = m_sequence
        .iter()
        .map(|&m| {
            let t = crate::lattice_green::yukawa_potential(*spec, m)?;
            Ok(IdentityAtMass { m, value: (-0.5 * beta * quad(&t)).exp() })
        })
        .collect::<Result<Vec<_>>>()?;
    let dist: Vec<f64> = values.iter().map(|v| (v.value - limit).abs()).collect();
    let converging = dist.windows(2).all(|w| w[1] <= w[0]);
    Ok(SineGordonIdentityReport { total_charge: total, neutral, limit, values, converging })
}

/// In-place Cholesky factor (lower, row-major) of a small SPD matrix.
fn cholesky(c: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                let d = c[i * n + i] - s;
                if !(d > 0.0) {
                    return Err(Error::Numeric(format!("covariance not positive definite (pivot {i}: {d:e})")));
                }
                l[i * n + i] = d.sqrt();
            } else {
                l[i * n + j] = (c[i * n + j] - s) / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Covariance matrix of `Γ_j` restricted to `points`.
fn point_covariance(family: &CovarianceFamily, j: usize, points: &[[i64; 2]]) -> Result<Vec<f64>> {
    let n = points.len();
    let mut c = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            c[a * n + b] = family.kernel(j, [points[a][0] - points[b][0], points[a][1] - points[b][1]])?;
        }
    }
    Ok(c)
}

/// Draws `ζ = Lξ` for each sample of a block.
fn gaussian_block(l: &[f64], n: usize, rng: &mut ChaCha8Rng, out: &mut [f64]) {
    let xi: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    for i in 0..n {
        out[i] = (0..=i).map(|k| l[i * n + k] * xi[k]).sum();
    }
}

/// Streams `samples` draws of `ζ = Lξ` block by block and folds each into a
/// per-block accumulator; block results are merged in block order.
fn stream_sums(
    samples: u64,
    seed: u64,
    lc: &[f64],
    np: usize,
    width: usize,
    fold: impl Fn(&[f64], &mut [f64]) + Sync,
) -> Vec<f64> {
    let blocks = samples.div_ceil(BLOCK as u64);
    let parts: Vec<Vec<f64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = block_rng(seed, b);
            let count = (samples - b * BLOCK as u64).min(BLOCK as u64);
            let mut zeta = vec![0.0; np];
            let mut acc = vec![0.0; width];
            for _ in 0..count {
                gaussian_block(lc, np, &mut rng, &mut zeta);
                fold(&zeta, &mut acc);
            }
            acc
        })
        .collect();
    parts.into_iter().fold(vec![0.0; width], |mut a, p| {
        a.iter_mut().zip(&p).for_each(|(x, y)| *x += y);
        a
    })
}

/// Parameters of the Gaussian identity check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityParams {
    pub j: usize,
    pub alpha: f64,
    pub y: [i64; 2],
    pub mu: Direction,
    pub nu: Direction,
    /// Sign `ε′` in the exponential-exponential identity.
    pub eps_prime: f64,
    pub samples: u64,
    pub seed: u64,
}

impl IdentityParams {
    pub fn new(j: usize, alpha: f64, samples: u64, seed: u64) -> Self {
        IdentityParams { j, alpha, y: [1, 0], mu: Direction::E0, nu: Direction::E1, eps_prime: -1.0, samples, seed }
    }
}

/// One truncated-moment identity: closed form, covariance-algebra value and MC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub closed_form: [f64; 2],
    pub exact: [f64; 2],
    pub exact_error: f64,
    pub mc: [f64; 2],
    pub mc_stderr: [f64; 2],
    pub exact_pass: bool,
    pub mc_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianIdentityReport {
    pub params: IdentityParams,
    pub checks: Vec<IdentityCheck>,
    pub all_pass: bool,
}

impl GaussianIdentityReport {
    /// Names of failing identities.
    pub fn failures(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !(c.exact_pass && c.mc_pass)).map(|c| c.name.as_str()).collect()
    }
}

/// Exact tolerance for the covariance-algebra comparison.
const EXACT_TOL: f64 = 1e-14;
/// MC acceptance in standard errors.
const MC_SIGMAS: f64 = 3.0;

/// Observable on the sampled points: either a linear functional or `e^{iα·}` of one.
#[derive(Clone)]
enum Obs {
    Lin(Vec<f64>),
    Sq(Vec<f64>),
    Exp(Vec<f64>),
}

impl Obs {
    fn eval(&self, z: &[f64]) -> (f64, f64) {
        let dot = |u: &[f64]| u.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        match self {
            Obs::Lin(u) => (dot(u), 0.0),
            Obs::Sq(u) => (dot(u).powi(2), 0.0),
            Obs::Exp(u) => {
                let t = dot(u);
                (t.cos(), t.sin())
            }
        }
    }
}

fn quad(u: &[f64], c: &[f64], v: &[f64]) -> f64 {
    let n = u.len();
    let mut s = 0.0;
    for i in 0..n {
        for k in 0..n {
            s += u[i] * c[i * n + k] * v[k];
        }
    }
    s
}

/// `E^T[F; G]` by Gaussian algebra on the covariance matrix.
fn exact_truncated(f: &Obs, g: &Obs, c: &[f64]) -> [f64; 2] {
    match (f, g) {
        (Obs::Lin(a), Obs::Lin(b)) => [quad(a, c, b), 0.0],
        (Obs::Sq(a), Obs::Sq(b)) => [2.0 * quad(a, c, b).powi(2), 0.0],
        (Obs::Exp(u), Obs::Sq(b)) => [-quad(u, c, b).powi(2) * (-0.5 * quad(u, c, u)).exp(), 0.0],
        (Obs::Exp(u), Obs::Lin(b)) => [0.0, quad(u, c, b) * (-0.5 * quad(u, c, u)).exp()],
        (Obs::Exp(u), Obs::Exp(v)) => {
            let w: Vec<f64> = u.iter().zip(v).map(|(a, b)| a + b).collect();
            [(-0.5 * quad(&w, c, &w)).exp() - (-0.5 * quad(u, c, u) - 0.5 * quad(v, c, v)).exp(), 0.0]
        }
        _ => unreachable!("identity pairs are fixed"),
    }
}

/// Checks the seven truncated-moment identities for a field with covariance `Γ_j`.
pub fn verify_gaussian_identities(family: &CovarianceFamily, params: IdentityParams) -> Result<GaussianIdentityReport> {
    let IdentityParams { j, alpha, y, mu, nu, eps_prime, samples, seed } = params;
    if samples < 2 {
        return Err(Error::Domain("need at least two samples".into()));
    }
    let add = |a: [i64; 2], b: [i64; 2]| [a[0] + b[0], a[1] + b[1]];
    // distinct sites: x = 0, x + μ, x + y, x + y + μ, x + y + ν
    let wanted = [[0, 0], mu.shift(), y, add(y, mu.shift()), add(y, nu.shift())];
    let mut points: Vec<[i64; 2]> = Vec::new();
    for p in wanted {
        if !points.contains(&p) {
            points.push(p);
        }
    }
    let at = |p: [i64; 2]| points.iter().position(|q| *q == p).expect("site registered above");
    let np = points.len();
    let c = point_covariance(family, j, &points)?;
    let lc = cholesky(&c, np)?;
    let unit = |p: [i64; 2]| (0..np).map(|k| if k == at(p) { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
    let diff = |from: [i64; 2], d: Direction| {
        let (a, b) = (unit(add(from, d.shift())), unit(from));
        a.iter().zip(&b).map(|(u, v)| d.sign() * (u - v)).collect::<Vec<f64>>()
    };
    let scaled = |v: Vec<f64>, s: f64| v.into_iter().map(|x| x * s).collect::<Vec<f64>>();
    let d_mu_x = diff([0, 0], mu);
    let d_mu_xy = diff(y, mu);
    let d_nu_xy = diff(y, nu);

    let g0 = family.kernel(j, [0, 0])?;
    let gy = family.kernel(j, y)?;
    let e_half = (-0.5 * alpha * alpha * g0).exp();
    let d = |p: [i64; 2], dirs: &[Direction]| family.lattice_derivative(j, p, dirs);
    let dmn = d(y, &[mu.reversed(), nu])?;
    let dm = d(y, &[mu])?;
    let dmr = d(y, &[mu.reversed()])?;

    let cases: Vec<(&str, Obs, Obs, [f64; 2])> = vec![
        ("grad2_grad2", Obs::Sq(d_mu_x.clone()), Obs::Sq(d_nu_xy.clone()), [2.0 * dmn * dmn, 0.0]),
        ("grad_grad", Obs::Lin(d_mu_x.clone()), Obs::Lin(d_nu_xy), [-dmn, 0.0]),
        (
            "exp_grad2_far",
            Obs::Exp(scaled(unit([0, 0]), alpha)),
            Obs::Sq(d_mu_xy.clone()),
            [-alpha * alpha * e_half * dm * dm, 0.0],
        ),
        (
            "exp_grad2_near",
            Obs::Exp(scaled(unit(y), alpha)),
            Obs::Sq(d_mu_x.clone()),
            [-alpha * alpha * e_half * dmr * dmr, 0.0],
        ),
        ("exp_grad_far", Obs::Exp(scaled(unit([0, 0]), alpha)), Obs::Lin(d_mu_xy), [0.0, alpha * e_half * dm]),
        ("exp_grad_near", Obs::Exp(scaled(unit(y), alpha)), Obs::Lin(d_mu_x), [0.0, -alpha * e_half * dmr]),
        (
            "exp_exp",
            Obs::Exp(scaled(unit([0, 0]), alpha)),
            Obs::Exp(scaled(unit(y), alpha * eps_prime)),
            [e_half * e_half * ((-alpha * alpha * eps_prime * gy).exp() - 1.0), 0.0],
        ),
    ];

    let ncase = cases.len();
    let evals = |zeta: &[f64]| -> Vec<[f64; 2]> {
        cases
            .iter()
            .flat_map(|(_, f, g, _)| {
                let (fr, fi) = f.eval(zeta);
                let (gr, gi) = g.eval(zeta);
                [[fr, fi], [gr, gi]]
            })
            .collect()
    };
    // pass 1: means of F and G
    let first = stream_sums(samples, seed, &lc, np, 4 * ncase, |zeta, acc| {
        for (k, v) in evals(zeta).iter().enumerate() {
            acc[2 * k] += v[0];
            acc[2 * k + 1] += v[1];
        }
    });
    let nf = samples as f64;
    let means: Vec<f64> = first.iter().map(|s| s / nf).collect();
    // pass 2 (same stream): moments of the centred products (F − F̄)(G − Ḡ)
    let second = stream_sums(samples, seed, &lc, np, 4 * ncase, |zeta, acc| {
        let v = evals(zeta);
        for ci in 0..ncase {
            let (a, b) = (v[2 * ci], v[2 * ci + 1]);
            let (ar, ai) = (a[0] - means[4 * ci], a[1] - means[4 * ci + 1]);
            let (br, bi) = (b[0] - means[4 * ci + 2], b[1] - means[4 * ci + 3]);
            let p = [ar * br - ai * bi, ar * bi + ai * br];
            for k in 0..2 {
                acc[4 * ci + 2 * k] += p[k];
                acc[4 * ci + 2 * k + 1] += p[k] * p[k];
            }
        }
    });
    let mut checks = Vec::with_capacity(ncase);
    for (ci, (name, f, g, closed)) in cases.iter().enumerate() {
        let mut mc = [0.0; 2];
        let mut se = [0.0; 2];
        for k in 0..2 {
            let (m, e) = mean_err(samples, second[4 * ci + 2 * k], second[4 * ci + 2 * k + 1]);
            mc[k] = m * nf / (nf - 1.0);
            se[k] = e;
        }
        let exact = exact_truncated(f, g, &c);
        let exact_error = (exact[0] - closed[0]).abs().max((exact[1] - closed[1]).abs());
        let scale = closed[0].abs().max(closed[1].abs()).max(1.0);
        let mc_pass =
            (0..2).all(|k| (mc[k] - closed[k]).abs() <= MC_SIGMAS * se[k] || (se[k] == 0.0 && closed[k] == 0.0));
        checks.push(IdentityCheck {
            name: name.to_string(),
            closed_form: *closed,
            exact,
            exact_error,
            mc,
            mc_stderr: se,
            exact_pass: exact_error <= EXACT_TOL * scale,
            mc_pass,
        });
    }
    let all_pass = checks.iter().all(|c| c.exact_pass && c.mc_pass);
    Ok(GaussianIdentityReport { params, checks, all_pass })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceCheck {
    pub displacement: [i64; 2],
    pub expected: f64,
    pub mc: f64,
    pub stderr: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiscaleReport {
    #[serde(rename = "J")]
    pub j_top: usize,
    pub samples: u64,
    pub seed: u64,
    pub covariance: Vec<CovarianceCheck>,
    /// `max |Γ_{J,0}(x|0) + ln|x|/2π − c̃_E|` over sampled `4 ≤ |x| ≤ L^{J−1}`.
    pub log_residual: f64,
    pub log_radii: Vec<f64>,
    pub all_pass: bool,
}

/// Samples independent `ζ^{(j)}`, `j ≤ J`, and compares the covariance of
/// their sum with `Σ_j Γ_j`.
pub fn verify_multiscale_sampling(
    family: &CovarianceFamily,
    j_top: usize,
    samples: u64,
    seed: u64,
) -> Result<MultiscaleReport> {
    if j_top > family.j_max() {
        return Err(Error::Domain(format!("J={j_top} exceeds j_max={}", family.j_max())));
    }
    if samples < 2 {
        return Err(Error::Domain("need at least two samples".into()));
    }
    let points: Vec<[i64; 2]> = vec![[0, 0], [1, 0], [2, 1], [4, 0], [8, 3]];
    let np = points.len();
    let factors =
        (0..=j_top).map(|j| cholesky(&point_covariance(family, j, &points)?, np)).collect::<Result<Vec<_>>>()?;
    let blocks = samples.div_ceil(BLOCK as u64);
    let sums: Vec<Vec<f64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = block_rng(seed, b);
            let count = (samples - b * BLOCK as u64).min(BLOCK as u64) as usize;
            let mut out = Vec::with_capacity(count);
            let mut part = vec![0.0; np];
            for _ in 0..count {
                let mut tot = vec![0.0; np];
                for lc in &factors {
                    gaussian_block(lc, np, &mut rng, &mut part);
                    tot.iter_mut().zip(&part).for_each(|(t, p)| *t += p);
                }
                out.push(tot);
            }
            out
        })
        .flatten()
        .collect();
    let nf = sums.len() as f64;
    let covariance = (0..np)
        .map(|k| {
            let prods: Vec<f64> = sums.iter().map(|s| s[0] * s[k]).collect();
            let m = prods.iter().sum::<f64>() / nf;
            let v = prods.iter().map(|p| (p - m).powi(2)).sum::<f64>() / (nf - 1.0);
            let expected = (0..=j_top).map(|j| family.kernel(j, points[k])).sum::<Result<f64>>()?;
            let stderr = (v / nf).sqrt();
            Ok(CovarianceCheck {
                displacement: points[k],
                expected,
                mc: m,
                stderr,
                pass: (m - expected).abs() <= MC_SIGMAS * stderr,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let hi = family.l_f64().powi(j_top as i32 - 1);
    let log_radii: Vec<f64> = if hi >= 4.0 { crate::correlation::log_grid(4.0, hi, 10) } else { Vec::new() };
    let ct = family.c_tilde_e();
    let log_residual = log_radii
        .iter()
        .map(|&r| {
            let g: f64 = (0..=j_top).map(|j| family.continuum(j, r) - family.gamma0()).sum();
            (g + r.ln() / (2.0 * std::f64::consts::PI) - ct).abs()
        })
        .fold(0.0, f64::max);
    let all_pass = covariance.iter().all(|c| c.pass) && log_residual <= 1e-3;
    Ok(MultiscaleReport { j_top, samples, seed, covariance, log_residual, log_radii, all_pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice_green::{coulomb_potential, yukawa_potential};

    fn spec5() -> LatticeSpec {
        LatticeSpec::new(5, 1).unwrap()
    }

    #[test]
    fn empty_configuration_only_at_zero_fugacity() {
        let t = coulomb_potential(spec5()).unwrap();
        let r = enumerate_z(&t, 2.0, 0.0, 4, &[]).unwrap();
        assert_eq!(r.z, 1.0);
    }

    #[test]
    fn second_order_double_sum() {
        let s = LatticeSpec::new(3, 1).unwrap();
        let t = coulomb_potential(s).unwrap();
        let (beta, z) = (1.3, 0.2);
        let r = enumerate_z(&t, beta, z, 2, &[]).unwrap();
        let mut direct = 0.0;
        for a in 0..9 {
            for b in 0..9 {
                let (p, q) = (s.point(a), s.point(b));
                direct += (beta * t.get([p[0] - q[0], p[1] - q[1]])).exp();
            }
        }
        assert!((r.z - (1.0 + z * z * direct)).abs() < 1e-13);
    }

    #[test]
    fn free_probe_ratio() {
        let s = spec5();
        let t = coulomb_potential(s).unwrap();
        let eta = 0.4;
        let probes = [Particle { pos: [0, 0], charge: eta }, Particle { pos: [2, 1], charge: -eta }];
        let r = enumerate_z(&t, 2.0, 0.0, 4, &probes).unwrap();
        assert_eq!(r.ratio().unwrap(), (2.0 * eta * eta * t.get([2, 1])).exp());
    }

    #[test]
    fn yukawa_enumeration_equals_wick_series() {
        let s = LatticeSpec::new(3, 1).unwrap();
        let t = yukawa_potential(s, 0.3).unwrap();
        let (beta, z) = (1.0, 0.07);
        let e = enumerate_z(&t, beta, z, 4, &[]).unwrap();
        let w = wick_series(&wick_moments(&t, beta, 4).unwrap(), z);
        assert!((e.z / w - 1.0).abs() < 1e-13, "{} vs {}", e.z, w);
    }

    #[test]
    fn mc_constant_integrand() {
        let m = sine_gordon_mc(&spec5(), 2.0, 0.1, 0.0, 10_000, 7, None).unwrap();
        assert_eq!((m.mean, m.stderr), (1.0, 0.0));
    }

    #[test]
    fn cholesky_round_trip() {
        let c = [4.0, 2.0, 0.4, 2.0, 3.0, 0.5, 0.4, 0.5, 2.0];
        let l = cholesky(&c, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| l[i * 3 + k] * l[j * 3 + k]).sum();
                assert!((v - c[i * 3 + j]).abs() < 1e-14);
            }
        }
        assert!(cholesky(&[1.0, 2.0, 2.0, 1.0], 2).is_err());
    }
}
