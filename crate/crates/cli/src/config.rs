//! JSON experiment configurations. Matrices are nested arrays, row-major.
//! Relative paths inside a config resolve against the config file's directory.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use willems::numerics::{from_rows, Matrix, RankTolerance, Vector};
use willems::predictive::Bounds;
use willems::LtiSystem;

/// Schema or value error in a config file; maps to the usage exit code.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub type ConfigResult<T> = std::result::Result<T, ConfigError>;

pub fn bad(field: &str, msg: impl fmt::Display) -> ConfigError {
    ConfigError(format!("{field}: {msg}"))
}

/// A parsed config together with the directory its relative paths refer to.
pub struct Loaded<T> {
    pub config: T,
    pub base: PathBuf,
}

impl<T> Loaded<T> {
    pub fn resolve(&self, path: &str) -> PathBuf {
        self.base.join(path)
    }
}

pub fn load<T: DeserializeOwned>(path: &Path) -> ConfigResult<Loaded<T>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
    let config =
        serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { config, base })
}

/// Echoes a config's free-text description.
pub fn announce(description: &Option<String>) {
    if let Some(d) = description {
        println!("{d}");
    }
}

pub fn matrix(field: &str, rows: &[Vec<f64>]) -> ConfigResult<Matrix> {
    from_rows(rows).map_err(|e| bad(field, e))
}

pub fn vector(field: &str, v: &[f64]) -> ConfigResult<Vector> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(bad(field, format!("entry {i} is not finite")));
    }
    Ok(Vector::from_column_slice(v))
}

pub fn interval(field: &str, range: [f64; 2]) -> ConfigResult<(f64, f64)> {
    if !(range[0].is_finite() && range[1].is_finite() && range[0] < range[1]) {
        return Err(bad(field, "expected [low, high] with low < high"));
    }
    Ok((range[0], range[1]))
}

pub fn rank_tolerance(field: &str, tol: Option<f64>) -> ConfigResult<RankTolerance> {
    match tol {
        None => Ok(RankTolerance::DEFAULT),
        Some(t) => RankTolerance::relative(t).map_err(|e| bad(field, e)),
    }
}

pub fn positive(field: &str, v: usize) -> ConfigResult<usize> {
    if v == 0 {
        Err(bad(field, "must be at least 1"))
    } else {
        Ok(v)
    }
}

/// Explicit `(A, B, C, D)` or a seeded random recipe.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub a: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<Vec<f64>>>,
    pub c: Option<Vec<Vec<f64>>>,
    /// Zero when omitted.
    pub d: Option<Vec<Vec<f64>>>,
    pub random: Option<RandomSystem>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSystem {
    pub n: usize,
    pub m: usize,
    pub p: usize,
}

impl SystemConfig {
    pub fn build(&self, field: &str, seed: u64) -> ConfigResult<LtiSystem> {
        let explicit = self.a.is_some() || self.b.is_some() || self.c.is_some() || self.d.is_some();
        match (&self.random, explicit) {
            (Some(_), true) => Err(bad(
                field,
                "give either matrices a/b/c[/d] or `random`, not both",
            )),
            (Some(r), false) => random_system(field, r, seed),
            (None, _) => {
                let get = |name: &str, m: &Option<Vec<Vec<f64>>>| {
                    let sub = format!("{field}.{name}");
                    m.as_deref()
                        .ok_or_else(|| bad(&sub, "missing"))
                        .and_then(|rows| matrix(&sub, rows))
                };
                let a = get("a", &self.a)?;
                let b = get("b", &self.b)?;
                let c = get("c", &self.c)?;
                let d = match &self.d {
                    Some(rows) => matrix(&format!("{field}.d"), rows)?,
                    None => Matrix::zeros(c.nrows(), b.ncols()),
                };
                LtiSystem::new(a, b, c, d).map_err(|e| bad(field, e))
            }
        }
    }
}

/// Dense random system with entries uniform in `[-1, 1]`, `A` scaled by
/// `1/sqrt(n)` to keep its spectrum near the unit disc, and `D = 0`.
fn random_system(field: &str, r: &RandomSystem, seed: u64) -> ConfigResult<LtiSystem> {
    if r.n == 0 || r.m == 0 || r.p == 0 {
        return Err(bad(
            &format!("{field}.random"),
            "n, m and p must be positive",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut draw =
        |rows: usize, cols: usize| Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0));
    let a = draw(r.n, r.n) / (r.n as f64).sqrt();
    let b = draw(r.n, r.m);
    let c = draw(r.p, r.n);
    LtiSystem::new(a, b, c, Matrix::zeros(r.p, r.m)).map_err(|e| bad(field, e))
}

/// Box with `null` entries for unbounded sides.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
}

impl BoundsConfig {
    pub fn build(&self, field: &str) -> ConfigResult<Bounds> {
        let side = |v: &[Option<f64>], inf: f64| {
            Vector::from_iterator(v.len(), v.iter().map(|x| x.unwrap_or(inf)))
        };
        if self.lower.len() != self.upper.len() {
            return Err(bad(field, "lower and upper have different lengths"));
        }
        Bounds::new(
            side(&self.lower, f64::NEG_INFINITY),
            side(&self.upper, f64::INFINITY),
        )
        .map_err(|e| bad(field, e))
    }
}

pub fn bounds(field: &str, cfg: &Option<BoundsConfig>, dim: usize) -> ConfigResult<Bounds> {
    match cfg {
        None => Ok(Bounds::unbounded(dim)),
        Some(b) => {
            let out = b.build(field)?;
            if out.dim() != dim {
                return Err(bad(
                    field,
                    format!("has dimension {}, expected {dim}", out.dim()),
                ));
            }
            Ok(out)
        }
    }
}

/// A matrix given inline or as a trajectory CSV path (its `u_*` columns).
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SignalSource {
    Path(String),
    Inline(Vec<Vec<f64>>),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn explicit_system_defaults_d_to_zero() {
        let cfg: SystemConfig =
            serde_json::from_str(r#"{"a": [[0.5]], "b": [[1.0]], "c": [[1.0], [2.0]]}"#).unwrap();
        let sys = cfg.build("system", 0).unwrap();
        assert_eq!(sys.d().shape(), (2, 1));
        assert_eq!(sys.d().amax(), 0.0);
    }

    #[test]
    fn schema_errors_name_the_field() {
        let cfg: SystemConfig =
            serde_json::from_str(r#"{"a": [[1.0, 0.0], [0.0]], "b": [[1.0]], "c": [[1.0]]}"#)
                .unwrap();
        assert!(cfg
            .build("system", 0)
            .unwrap_err()
            .0
            .starts_with("system.a:"));
        let cfg: SystemConfig = serde_json::from_str(r#"{"b": [[1.0]], "c": [[1.0]]}"#).unwrap();
        assert_eq!(cfg.build("system", 0).unwrap_err().0, "system.a: missing");
        assert!(serde_json::from_str::<SystemConfig>(r#"{"A": [[1.0]]}"#).is_err());
    }

    #[test]
    fn random_recipe_is_seeded() {
        let cfg: SystemConfig =
            serde_json::from_str(r#"{"random": {"n": 3, "m": 1, "p": 2}}"#).unwrap();
        assert_eq!(cfg.build("s", 4).unwrap(), cfg.build("s", 4).unwrap());
        assert_ne!(cfg.build("s", 4).unwrap(), cfg.build("s", 5).unwrap());
    }

    #[test]
    fn null_bounds_are_infinite() {
        let cfg: BoundsConfig =
            serde_json::from_str(r#"{"lower": [-1.0, null], "upper": [1.0, null]}"#).unwrap();
        let b = cfg.build("input_bounds").unwrap();
        assert_eq!(b.upper[1], f64::INFINITY);
        assert!(bounds("input_bounds", &Some(cfg), 3).is_err());
    }
}
