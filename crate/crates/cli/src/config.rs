//! Flat `key = value` run configuration.
//!
//! Values are resolved in order: built-in defaults, command defaults, the
//! config file, environment (`BKTRG_<KEY>`), then command-line flags.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use bktrg::output::Metadata;
use sha2::{Digest, Sha256};

/// `(key, default, help)` for every configuration key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("L", "16", "block size L (torus side is L^R)"),
    ("R", "1", "torus exponent R"),
    ("alpha2", "25.132741228718345", "coupling alpha^2 (default 8 pi)"),
    ("eta", "0.5", "probe charge eta in (0,1)"),
    ("z", "1e-3", "activity"),
    ("s0", "0", "initial s for `flow`"),
    ("jmax", "2000", "top scale (covariance, coeffs) or number of RG steps (flows)"),
    ("j_table", "12", "top scale of the coefficient table used by flows"),
    ("family_tol", "1e-12", "covariance truncation tolerance"),
    ("shoot_tol", "1e-17", "bisection width for the separatrix"),
    ("cutoff", "gaussian", "cutoff label (only `gaussian` is available from the CLI)"),
    ("seed", "20241015", "RNG seed"),
    ("m", "0", "Yukawa mass (0 selects the Coulomb potential)"),
    ("beta", "2", "inverse temperature for lattice oracles"),
    ("samples", "100000", "Monte Carlo samples"),
    ("n_max", "4", "enumeration / Wick order"),
    ("half_width", "8", "half width of emitted lattice windows"),
    ("k_lo", "3", "correlation grid starts at L^k_lo"),
    ("k_hi", "7", "correlation grid ends at L^k_hi"),
    ("source", "series", "correlation source: series | asymptotic"),
    ("fit", "none", "correlation fit: none | pure_power | power_log"),
    ("mode", "mc", "oracle mode: mc | correlation-mc | enumerate | identities | multiscale | sine-gordon"),
    ("probe", "2,1", "second probe site x0,x1 (first probe at the origin)"),
    ("alpha", "1", "field charge alpha for the Gaussian identities"),
    ("ell_end", "10", "Kosterlitz ODE length"),
    ("h", "1e-3", "Kosterlitz ODE step"),
    ("s_min", "-0.05", "phase-diagram s0 grid start"),
    ("s_max", "0.2", "phase-diagram s0 grid end"),
    ("n_s", "6", "phase-diagram s0 grid points"),
    ("z_min", "0.002", "phase-diagram z0 grid start"),
    ("z_max", "0.02", "phase-diagram z0 grid end"),
    ("n_z", "4", "phase-diagram z0 grid points"),
    ("stride", "100", "phase-diagram row stride"),
];

/// Command-specific defaults layered over [`KEYS`].
fn command_defaults(command: &str) -> &'static [(&'static str, &'static str)] {
    match command {
        "potential" => &[("L", "63")],
        "covariance" | "coeffs" => &[("jmax", "8")],
        "oracle" => &[("L", "5"), ("z", "0.05"), ("m", "0.1")],
        _ => &[],
    }
}

/// Parses a config file: `key = value` lines, `#` comments.
pub fn parse_file(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected key = value", i + 1))?;
        let k = k.trim();
        if !KEYS.iter().any(|(key, ..)| *key == k) {
            bail!("line {}: unknown key `{k}`", i + 1);
        }
        map.insert(k.to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Resolved, validated configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: String,
    values: BTreeMap<String, String>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Layers defaults, file values and overrides (env and flags, already merged by clap).
    pub fn resolve(
        command: &str,
        file: BTreeMap<String, String>,
        overrides: BTreeMap<String, String>,
        out: Option<PathBuf>,
    ) -> Result<Self> {
        let mut values: BTreeMap<String, String> =
            KEYS.iter().map(|(k, d, _)| (k.to_string(), d.to_string())).collect();
        for (k, v) in command_defaults(command) {
            values.insert(k.to_string(), v.to_string());
        }
        values.extend(file);
        values.extend(overrides);
        let cfg = RunConfig { command: command.to_string(), values, out };
        cfg.validate()?;
        Ok(cfg)
    }

    fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_default()
    }

    pub fn str(&self, key: &str) -> &str {
        self.raw(key)
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let v: f64 =
            self.raw(key).parse().with_context(|| format!("`{key}` must be a number, got `{}`", self.raw(key)))?;
        if !v.is_finite() {
            bail!("`{key}` must be finite");
        }
        Ok(v)
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.raw(key)
            .parse()
            .with_context(|| format!("`{key}` must be a non-negative integer, got `{}`", self.raw(key)))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        Ok(self.u64(key)? as usize)
    }

    pub fn u32(&self, key: &str) -> Result<u32> {
        u32::try_from(self.u64(key)?).with_context(|| format!("`{key}` is too large"))
    }

    pub fn site(&self, key: &str) -> Result<[i64; 2]> {
        let parts: Vec<&str> = self.raw(key).split(',').map(str::trim).collect();
        match parts.as_slice() {
            [a, b] => Ok([a.parse()?, b.parse()?]),
            _ => bail!("`{key}` must be `x0,x1`, got `{}`", self.raw(key)),
        }
    }

    /// Type checks every key and the cross-key constraints.
    fn validate(&self) -> Result<()> {
        for k in ["alpha2", "eta", "z", "s0", "family_tol", "shoot_tol", "m", "beta", "alpha", "ell_end", "h"] {
            self.f64(k)?;
        }
        for k in ["s_min", "s_max", "z_min", "z_max"] {
            self.f64(k)?;
        }
        for k in [
            "L",
            "R",
            "jmax",
            "j_table",
            "seed",
            "samples",
            "n_max",
            "half_width",
            "k_lo",
            "k_hi",
            "n_s",
            "n_z",
            "stride",
        ] {
            self.u64(k)?;
        }
        self.site("probe")?;
        let eta = self.f64("eta")?;
        if !(eta > 0.0 && eta < 1.0) {
            bail!("`eta` must lie in (0,1), got {eta}");
        }
        if self.f64("alpha2")? <= 0.0 {
            bail!("`alpha2` must be positive");
        }
        if self.f64("z")? < 0.0 {
            bail!("`z` must be non-negative");
        }
        if self.str("cutoff") != "gaussian" {
            bail!("cutoff `{}` is not available from the command line (only `gaussian`)", self.str("cutoff"));
        }
        if !matches!(self.str("source"), "series" | "asymptotic") {
            bail!("`source` must be series or asymptotic");
        }
        if !matches!(self.str("fit"), "none" | "pure_power" | "power_log") {
            bail!("`fit` must be none, pure_power or power_log");
        }
        if self.u64("k_lo")? >= self.u64("k_hi")? {
            bail!("`k_lo` must be below `k_hi`");
        }
        if self.u64("stride")? == 0 {
            bail!("`stride` must be positive");
        }
        Ok(())
    }

    /// Every key in sorted order, as written into output headers.
    pub fn entries(&self) -> impl Iterator<Item = (&String, &String)> {
        self.values.iter()
    }

    /// Header block: command, code version and the full configuration.
    pub fn metadata(&self) -> Metadata {
        let mut m = Metadata::new().with("command", &self.command).with("code_version", bktrg::CODE_VERSION);
        for (k, v) in &self.values {
            m.set(k.clone(), v);
        }
        m
    }

    /// SHA-256 of the canonical `key=value` listing, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.command.as_bytes());
        for (k, v) in &self.values {
            h.update(format!("\n{k}={v}").as_bytes());
        }
        hex(&h.finalize()[..])
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let file = parse_file("# comment\nL = 8\nz=2e-3 # trailing\n").unwrap();
        let over = BTreeMap::from([("z".to_string(), "5e-4".to_string())]);
        let c = RunConfig::resolve("flow", file, over, None).unwrap();
        assert_eq!(c.u32("L").unwrap(), 8);
        assert_eq!(c.f64("z").unwrap(), 5e-4);
    }

    #[test]
    fn unknown_key_and_bad_value() {
        assert!(parse_file("nope = 1").is_err());
        let over = BTreeMap::from([("eta".to_string(), "1.5".to_string())]);
        assert!(RunConfig::resolve("flow", BTreeMap::new(), over, None).is_err());
    }

    #[test]
    fn hash_depends_on_values_only() {
        let a = RunConfig::resolve("flow", BTreeMap::new(), BTreeMap::new(), None).unwrap();
        let b = RunConfig::resolve("flow", BTreeMap::new(), BTreeMap::new(), Some("x".into())).unwrap();
        let over = BTreeMap::from([("z".to_string(), "2e-3".to_string())]);
        let c = RunConfig::resolve("flow", BTreeMap::new(), over, None).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }
}
