//! Line-oriented run configuration: `section.key = value`, `#` comments.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{ConeError, Result};
use crate::field::{Field, FieldExpr};
use crate::geometry::{BaseBox, ConeDomain, GConditionParams};
use crate::solver::{SolverConfig, UpwindMode};

const KEYS: &[(&str, &[&str])] = &[
    ("domain", &["n", "base_min", "base_max", "t_min", "k0", "d0", "sigma"]),
    ("problem", &["p", "f", "dirichlet", "omega", "exact"]),
    ("grid", &["a_count", "x_count", "refinements", "nodes_per_unit", "j_max"]),
    (
        "solver",
        &["eps_reg_schedule", "tol", "max_iter", "damping", "upwind_factor", "upwind"],
    ),
    (
        "verify",
        &[
            "solution", "other", "f_other", "rho", "rhos", "center", "d", "d_min", "d_max", "balls", "radii", "p0",
            "alphas", "mode", "tol", "c_ref", "bumps", "weak_tol", "eps", "samples", "min_order",
        ],
    ),
    ("output", &["dir", "formats"]),
];

#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub p: f64,
    pub f: Field,
    pub dirichlet: Field,
    pub omega: f64,
    /// Exact solution for `manufacture` and `convergence-study`.
    pub exact: Option<FieldExpr>,
}

#[derive(Clone, Debug)]
pub struct GridSpec {
    pub a_count: usize,
    pub x_counts: Vec<usize>,
    pub refinements: usize,
    pub nodes_per_unit: usize,
    pub j_max: usize,
}

#[derive(Clone, Debug)]
pub struct VerifySpec {
    pub solution: Option<PathBuf>,
    pub other: Option<PathBuf>,
    pub f_other: Option<Field>,
    pub rhos: Vec<f64>,
    pub center: Option<Vec<f64>>,
    pub d: Option<f64>,
    pub d_range: (f64, f64),
    pub balls: usize,
    pub radii: Option<Vec<f64>>,
    pub p0: Vec<f64>,
    pub alphas: Vec<f64>,
    pub full_doubling: bool,
    /// Absolute tolerance; `None` means `10·h²` of the grid in use.
    pub tol: Option<f64>,
    pub c_ref: f64,
    pub bumps: usize,
    pub weak_tol: Option<f64>,
    pub eps: Option<f64>,
    pub samples: usize,
    pub min_order: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub json: bool,
    pub csv: bool,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub domain: ConeDomain,
    pub problem: ProblemSpec,
    pub grid: GridSpec,
    pub solver: SolverConfig,
    pub verify: VerifySpec,
    pub output: OutputSpec,
    /// Sorted `key = value` lines, the input of the config hash.
    canonical: String,
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
    base: PathBuf,
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T> {
    Err(ConeError::Config {
        line,
        message: message.into(),
    })
}

impl Entries {
    fn raw(&self, key: &str) -> Option<(usize, &str)> {
        self.map.get(key).map(|(l, v)| (*l, v.as_str()))
    }

    fn line(&self, key: &str) -> usize {
        self.map.get(key).map_or(0, |e| e.0)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse::<T>()
                .map(Some)
                .or_else(|e| err(line, format!("{key}: cannot parse '{v}': {e}"))),
        }
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some((line, v)) = self.raw(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse::<T>()
                    .or_else(|e| err(line, format!("{key}: cannot parse '{}': {e}", s.trim())))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    fn path(&self, key: &str) -> Result<Option<PathBuf>> {
        let Some((line, v)) = self.raw(key) else {
            return Ok(None);
        };
        let p = self.base.join(v);
        if !p.exists() {
            return err(line, format!("{key}: file '{}' does not exist", p.display()));
        }
        Ok(Some(p))
    }

    /// Field syntax with `file(…)` paths resolved against the config directory.
    fn field(&self, key: &str, dim: usize, g: GConditionParams) -> Result<Option<Field>> {
        let Some((line, v)) = self.raw(key) else {
            return Ok(None);
        };
        let resolved = match v.strip_prefix("file(").and_then(|r| r.strip_suffix(')')) {
            Some(inner) => {
                let p = self.base.join(inner.trim());
                if !p.exists() {
                    return err(line, format!("{key}: file '{}' does not exist", p.display()));
                }
                format!("file({})", p.display())
            }
            None => v.to_string(),
        };
        Field::parse(&resolved, dim, g).map(Some).or_else(|e| err(line, format!("{key}: {e}")))
    }
}

fn check(line: usize, ok: bool, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        err(line, message)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("cannot read '{}': {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    /// Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            let Some((key, value)) = s.split_once('=') else {
                return err(line, format!("expected 'section.key = value', got '{s}'"));
            };
            let key = key.trim();
            let value = value.trim();
            let Some((section, name)) = key.split_once('.') else {
                return err(line, format!("key '{key}' has no section"));
            };
            let Some((_, names)) = KEYS.iter().find(|(sec, _)| *sec == section) else {
                return err(line, format!("unknown section '{section}'"));
            };
            if !names.contains(&name) {
                return err(line, format!("unknown key '{name}' in section '{section}'"));
            }
            if value.is_empty() {
                return err(line, format!("{key} has an empty value"));
            }
            if let Some((prev, _)) = map.insert(key.to_string(), (line, value.to_string())) {
                return err(line, format!("{key} already set on line {prev}"));
            }
        }
        let canonical: String = map.iter().map(|(k, (_, v))| format!("{k} = {v}\n")).collect();
        let e = Entries {
            map,
            base: base.to_path_buf(),
        };

        // domain
        let n: usize = e.or("domain.n", 2)?;
        check(e.line("domain.n"), n >= 2, "domain.n must be at least 2")?;
        let bmin = e.list::<f64>("domain.base_min")?.unwrap_or_else(|| vec![0.0]);
        let bmax = e.list::<f64>("domain.base_max")?.unwrap_or_else(|| vec![1.0]);
        let expand = |v: Vec<f64>, key: &str| -> Result<Vec<f64>> {
            match v.len() {
                1 => Ok(vec![v[0]; n - 1]),
                m if m == n - 1 => Ok(v),
                m => err(e.line(key), format!("{key} has {m} entries, expected 1 or {}", n - 1)),
            }
        };
        let base_box = BaseBox::new(expand(bmin, "domain.base_min")?, expand(bmax, "domain.base_max")?)
            .or_else(|x| err(e.line("domain.base_max"), x.to_string()))?;
        let g_params = GConditionParams::new(e.or("domain.k0", 2.0)?, e.or("domain.d0", 0.5)?, e.or("domain.sigma", 0.5)?)
            .or_else(|x| err(e.line("domain.k0").max(e.line("domain.d0")).max(e.line("domain.sigma")), x.to_string()))?;
        let t_min: f64 = e.or("domain.t_min", (-1f64).exp())?;
        let domain = ConeDomain::new(base_box, t_min, g_params).or_else(|x| err(e.line("domain.t_min"), x.to_string()))?;

        // problem
        let p: f64 = e.or("problem.p", 2.0)?;
        check(e.line("problem.p"), p >= 2.0 && p.is_finite(), "problem.p must be at least 2")?;
        let omega: f64 = e.or("problem.omega", 0.0)?;
        check(e.line("problem.omega"), omega >= 0.0, "problem.omega must be non-negative")?;
        let exact = match e.raw("problem.exact") {
            None => None,
            Some((line, v)) => Some(FieldExpr::parse(v, n).or_else(|x| err(line, format!("problem.exact: {x}")))?),
        };
        let problem = ProblemSpec {
            p,
            f: e.field("problem.f", n, g_params)?.unwrap_or_else(|| Field::zero(n)),
            dirichlet: e.field("problem.dirichlet", n, g_params)?.unwrap_or_else(|| Field::zero(n)),
            omega,
            exact,
        };

        // grid
        let a_count: usize = e.or("grid.a_count", 17)?;
        check(e.line("grid.a_count"), a_count >= 3, "grid.a_count must be at least 3")?;
        let xc = e.list::<usize>("grid.x_count")?.unwrap_or_else(|| vec![a_count]);
        let x_counts = match xc.len() {
            1 => vec![xc[0]; n - 1],
            m if m == n - 1 => xc,
            m => return err(e.line("grid.x_count"), format!("grid.x_count has {m} entries, expected 1 or {}", n - 1)),
        };
        check(e.line("grid.x_count"), x_counts.iter().all(|&c| c >= 3), "grid.x_count must be at least 3")?;
        let grid = GridSpec {
            a_count,
            x_counts,
            refinements: e.or("grid.refinements", 3)?,
            nodes_per_unit: e.or("grid.nodes_per_unit", 32)?,
            j_max: e.or("grid.j_max", 6)?,
        };
        check(e.line("grid.refinements"), grid.refinements >= 2, "grid.refinements must be at least 2")?;
        check(e.line("grid.nodes_per_unit"), grid.nodes_per_unit >= 2, "grid.nodes_per_unit must be at least 2")?;
        check(e.line("grid.j_max"), grid.j_max >= 1, "grid.j_max must be at least 1")?;

        // solver
        let mut solver = SolverConfig::default();
        if let Some(s) = e.list::<f64>("solver.eps_reg_schedule")? {
            solver.eps_reg_schedule = s;
        }
        solver.tol = e.or("solver.tol", solver.tol)?;
        solver.max_iter = e.or("solver.max_iter", solver.max_iter)?;
        solver.damping = e.or("solver.damping", solver.damping)?;
        solver.upwind_factor = e.or("solver.upwind_factor", solver.upwind_factor)?;
        if let Some((line, v)) = e.raw("solver.upwind") {
            solver.upwind = match v {
                "auto" => UpwindMode::Auto,
                "always" => UpwindMode::Always,
                "never" => UpwindMode::Never,
                _ => return err(line, format!("solver.upwind must be auto, always or never, got '{v}'")),
            };
        }
        let solver_line = ["eps_reg_schedule", "tol", "max_iter", "damping"]
            .iter()
            .map(|k| e.line(&format!("solver.{k}")))
            .max()
            .unwrap_or(0);
        solver.validate().or_else(|x| err(solver_line, x.to_string()))?;

        // verify
        let rhos = match e.list::<f64>("verify.rhos")? {
            Some(r) => r,
            None => vec![e.or("verify.rho", 0.25)?],
        };
        let rho_line = e.line("verify.rhos").max(e.line("verify.rho"));
        check(rho_line, rhos.iter().all(|&r| r > 0.0 && r <= 1.0), "Hölder exponents must lie in (0, 1]")?;
        let center = e.list::<f64>("verify.center")?;
        if let Some(c) = &center {
            check(e.line("verify.center"), c.len() == n, "verify.center needs one coordinate per dimension")?;
        }
        let d: Option<f64> = e.get("verify.d")?;
        check(e.line("verify.d"), d.is_none_or(|d| d > 0.0), "verify.d must be positive")?;
        let d_range = (e.or("verify.d_min", 0.1)?, e.or("verify.d_max", 0.3)?);
        check(
            e.line("verify.d_min").max(e.line("verify.d_max")),
            d_range.0 > 0.0 && d_range.1 >= d_range.0,
            "need 0 < verify.d_min <= verify.d_max",
        )?;
        let p0 = e.list::<f64>("verify.p0")?.unwrap_or_else(|| vec![0.1, 0.25, 0.5, 1.0]);
        check(e.line("verify.p0"), p0.iter().all(|&q| q > 0.0 && q <= 1.0), "verify.p0 values must lie in (0, 1]")?;
        let alphas = e.list::<f64>("verify.alphas")?.unwrap_or_else(|| vec![1.0, 10.0, 100.0, 1000.0]);
        check(e.line("verify.alphas"), alphas.iter().all(|&a| a > 0.0), "verify.alphas must be positive")?;
        let full_doubling = match e.raw("verify.mode") {
            None | Some((_, "windowed")) => false,
            Some((_, "full")) => true,
            Some((line, v)) => return err(line, format!("verify.mode must be windowed or full, got '{v}'")),
        };
        let eps: Option<f64> = e.get("verify.eps")?;
        check(e.line("verify.eps"), eps.is_none_or(|x| x > 0.0), "verify.eps must be positive")?;
        let verify = VerifySpec {
            solution: e.path("verify.solution")?,
            other: e.path("verify.other")?,
            f_other: e.field("verify.f_other", n, g_params)?,
            rhos,
            center,
            d,
            d_range,
            balls: e.or("verify.balls", 20)?,
            radii: e.list("verify.radii")?,
            p0,
            alphas,
            full_doubling,
            tol: e.get("verify.tol")?,
            c_ref: e.or("verify.c_ref", 0.0)?,
            bumps: e.or("verify.bumps", 10)?,
            weak_tol: e.get("verify.weak_tol")?,
            eps,
            samples: e.or("verify.samples", 2000)?,
            min_order: e.get("verify.min_order")?,
        };
        check(e.line("verify.c_ref"), verify.c_ref >= 0.0, "verify.c_ref must be non-negative")?;

        // output
        let formats = e.list::<String>("output.formats")?.unwrap_or_else(|| vec!["json".into(), "csv".into()]);
        if let Some(f) = formats.iter().find(|f| *f != "json" && *f != "csv") {
            return err(e.line("output.formats"), format!("unknown output format '{f}'"));
        }
        let output = OutputSpec {
            dir: base.join(e.raw("output.dir").map_or("out", |(_, v)| v)),
            json: formats.iter().any(|f| f == "json"),
            csv: formats.iter().any(|f| f == "csv"),
        };

        Ok(Self {
            domain,
            problem,
            grid,
            solver,
            verify,
            output,
            canonical,
        })
    }

    /// SHA-256 of the canonical config and the seed, in hex.
    pub fn hash(&self, seed: u64) -> String {
        let mut h = Sha256::new();
        h.update(self.canonical.as_bytes());
        h.update(format!("seed = {seed}\n").as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<RunConfig> {
        RunConfig::parse(s, Path::new("."))
    }

    fn line_of(e: ConeError) -> usize {
        match e {
            ConeError::Config { line, .. } => line,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn defaults_and_overrides() {
        let c = parse("# comment\ndomain.n = 3\nproblem.p = 3\ngrid.x_count = 9, 11\nsolver.upwind = always\n").unwrap();
        assert_eq!(c.domain.n, 3);
        assert_eq!(c.grid.x_counts, vec![9, 11]);
        assert_eq!(c.grid.a_count, 17);
        assert_eq!(c.solver.upwind, UpwindMode::Always);
        assert!(c.output.json && c.output.csv);
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(line_of(parse("\n\nproblem.p = 1.5\n").unwrap_err()), 3);
        assert_eq!(line_of(parse("domain.n = 2\nbogus.key = 1\n").unwrap_err()), 2);
        assert_eq!(line_of(parse("grid.a_count = x\n").unwrap_err()), 1);
        assert_eq!(line_of(parse("problem.f = nonsense(\n").unwrap_err()), 1);
        assert_eq!(line_of(parse("verify.solution = missing.txt\n").unwrap_err()), 1);
        assert_eq!(line_of(parse("a = 1\ndomain.t_min = 2\n").unwrap_err()), 1);
        assert_eq!(line_of(parse("domain.t_min = 2\n").unwrap_err()), 1);
        assert_eq!(line_of(parse("solver.damping = 0.5\nsolver.damping = 0.6\n").unwrap_err()), 2);
    }

    #[test]
    fn hash_ignores_layout_but_not_content() {
        let a = parse("problem.p = 3\ngrid.a_count = 9\n").unwrap();
        let b = parse("# x\ngrid.a_count   =   9\n\nproblem.p = 3\n").unwrap();
        let c = parse("problem.p = 3\ngrid.a_count = 11\n").unwrap();
        assert_eq!(a.hash(0), b.hash(0));
        assert_ne!(a.hash(0), c.hash(0));
        assert_ne!(a.hash(0), a.hash(1));
        assert_eq!(a.hash(0).len(), 64);
    }
}
