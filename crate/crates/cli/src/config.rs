use std::path::{Path, PathBuf};

use pxfb::optimizer::ContinuationSchedule;
use pxfb::verify::{oracle_free_boundary, Instance, SuiteOptions};
use pxfb::{field, BoundaryData, CoefficientField, ExponentField, Grid, Location, ScalarField};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::output::read_field_csv;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    /// Inferred from `lower` when omitted.
    #[serde(default)]
    pub dim: Option<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Cells per axis.
    pub n: Vec<usize>,
}

/// How a scalar field is given. Affine coefficients are `[c, a_x]` in 1D and
/// `[c, a_x, a_y]` in 2D for `c + a . x`; tables are CSV files in the layout
/// written by `export`, resolved relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FieldSpec {
    Constant {
        value: f64,
    },
    Affine {
        coeffs: Vec<f64>,
        #[serde(default)]
        positive_part: bool,
    },
    Table {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleOverrides {
    pub eps_list: Option<Vec<f64>>,
    pub delta_list: Option<Vec<f64>>,
    pub inner_tol: Option<f64>,
    pub max_inner_iters: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub domain: Domain,
    pub p: FieldSpec,
    pub lambda: FieldSpec,
    pub phi0: FieldSpec,
    #[serde(default)]
    pub schedule: ScheduleOverrides,
    #[serde(default)]
    pub verify: SuiteOptions,
    /// Directory table paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("output")
}

/// Parameters a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[clap(rename_all = "snake_case")]
pub enum Axis {
    N,
    LambdaConst,
    PConst,
    PSlope,
    Phi0Scale,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::N => "n",
            Axis::LambdaConst => "lambda_const",
            Axis::PConst => "p_const",
            Axis::PSlope => "p_slope",
            Axis::Phi0Scale => "phi0_scale",
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> CliResult<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Config::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Parses and normalizes; structural errors carry TOML line and column.
    pub fn parse(text: &str) -> CliResult<Config> {
        let mut cfg: Config = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.normalize()?;
        Ok(cfg)
    }

    fn normalize(&mut self) -> CliResult<()> {
        let d = &mut self.domain;
        let dim = d.dim.unwrap_or(d.lower.len());
        if !(1..=2).contains(&dim) {
            return Err(CliError::Config(format!("domain.dim: must be 1 or 2, got {dim}")));
        }
        for (name, len) in [("lower", d.lower.len()), ("upper", d.upper.len()), ("n", d.n.len())] {
            if len != dim {
                return Err(CliError::Config(format!("domain.{name}: expected {dim} entries, got {len}")));
            }
        }
        d.dim = Some(dim);
        for (name, spec) in [("p", &self.p), ("lambda", &self.lambda), ("phi0", &self.phi0)] {
            if let FieldSpec::Affine { coeffs, .. } = spec {
                if coeffs.len() != dim + 1 {
                    return Err(CliError::Config(format!(
                        "{name}.coeffs: expected {} entries for dim {dim}, got {}",
                        dim + 1,
                        coeffs.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.domain.dim.unwrap_or(self.domain.lower.len())
    }

    /// Normalized TOML; parsing it yields the same config.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn grid(&self) -> CliResult<Grid> {
        let d = &self.domain;
        Grid::new(self.dim(), &d.lower, &d.upper, &d.n).map_err(|e| CliError::Config(format!("domain: {e}")))
    }

    fn sample(&self, name: &str, spec: &FieldSpec, grid: Grid, location: Location) -> CliResult<ScalarField> {
        let err = |e: pxfb::Error| CliError::Config(format!("{name}: {e}"));
        match spec {
            FieldSpec::Constant { value } => ScalarField::constant(grid, location, *value).map_err(err),
            FieldSpec::Affine { coeffs, positive_part } => ScalarField::sample(grid, location, |x| {
                let v = coeffs[0] + x.iter().zip(&coeffs[1..]).map(|(x, a)| x * a).sum::<f64>();
                if *positive_part {
                    v.max(0.0)
                } else {
                    v
                }
            })
            .map_err(err),
            FieldSpec::Table { path } => {
                let path = self.base_dir.join(path);
                let values = read_field_csv(&path, &grid, location)
                    .map_err(|e| CliError::Config(format!("{name}.path: {e}")))?;
                ScalarField::from_values(grid, location, values).map_err(err)
            }
        }
    }

    /// Builds and validates every field; no solve happens here.
    pub fn instance(&self) -> CliResult<Instance> {
        let grid = self.grid()?;
        let p = ExponentField::new(self.sample("p", &self.p, grid, Location::Cell)?)
            .map_err(|e| CliError::Config(format!("p: {e}")))?;
        let lam_values = self.sample("lambda", &self.lambda, grid, Location::Cell)?;
        let lambda = if lam_values.values().iter().all(|&v| v == 0.0) {
            CoefficientField::zero(grid)
        } else {
            CoefficientField::new(lam_values)
        }
        .map_err(|e| CliError::Config(format!("lambda: {e}")))?;
        // only boundary values enter the problem
        let raw = self.sample("phi0", &self.phi0, grid, Location::Node)?;
        let boundary =
            (0..grid.node_count()).map(|k| if grid.is_boundary_node(k) { raw.values()[k] } else { 0.0 }).collect();
        let phi0 = ScalarField::from_values(grid, Location::Node, boundary)
            .and_then(BoundaryData::new)
            .map_err(|e| CliError::Config(format!("phi0: {e}")))?;
        let ls_max = field::lambda_star(&p, &lambda).map_err(|e| CliError::Config(format!("lambda: {e}")))?.max();
        let mut schedule = ContinuationSchedule::default_for(&grid, &p, ls_max, phi0.sup());
        let o = &self.schedule;
        if let Some(v) = &o.eps_list {
            schedule.eps_list = v.clone();
        }
        if let Some(v) = &o.delta_list {
            schedule.delta_list = v.clone();
        }
        if let Some(v) = o.inner_tol {
            schedule.inner_tol = v;
        }
        if let Some(v) = o.max_inner_iters {
            schedule.max_inner_iters = v;
        }
        Instance::new(phi0, p, lambda, Some(schedule), self.meta())
            .map_err(|e| CliError::Config(format!("schedule: {e}")))
    }

    /// The config as report metadata, without the output location so that
    /// reports do not depend on where they are written.
    pub fn meta(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes to JSON");
        if let Some(m) = v.as_object_mut() {
            m.remove("output_dir");
        }
        v
    }

    pub fn suite_options(&self) -> SuiteOptions {
        SuiteOptions { seed: self.seed, ..self.verify.clone() }
    }

    /// Closed-form free-boundary location for a 1D config with constant `p`
    /// and `lambda`, positive data on the left end and zero on the right.
    pub fn oracle_location(&self) -> Option<f64> {
        if self.dim() != 1 {
            return None;
        }
        let (FieldSpec::Constant { value: p }, FieldSpec::Constant { value: lambda }) = (&self.p, &self.lambda) else {
            return None;
        };
        let (lo, hi) = (self.domain.lower[0], self.domain.upper[0]);
        let eval = |x: f64| match &self.phi0 {
            FieldSpec::Constant { value } => Some(*value),
            FieldSpec::Affine { coeffs, positive_part } => {
                let v = coeffs[0] + coeffs[1] * x;
                Some(if *positive_part { v.max(0.0) } else { v })
            }
            FieldSpec::Table { .. } => None,
        };
        let (a, b) = (eval(lo)?, eval(hi)?);
        if !(a > 0.0) || b != 0.0 || !(*lambda > 0.0) || !(*p > 1.0) {
            return None;
        }
        let s = lo + oracle_free_boundary(*p, *lambda, a);
        (s < hi).then_some(s)
    }

    /// Copy of the config with one sweep parameter set to `value`.
    pub fn with_axis(&self, axis: Axis, value: f64) -> CliResult<Config> {
        let mut c = self.clone();
        let dim = self.dim();
        match axis {
            Axis::N => {
                if !(value >= 2.0) || value.fract() != 0.0 {
                    return Err(CliError::Config(format!("n: sweep value {value} is not an integer >= 2")));
                }
                c.domain.n = vec![value as usize; dim];
            }
            Axis::LambdaConst => c.lambda = FieldSpec::Constant { value },
            Axis::PConst => match &mut c.p {
                FieldSpec::Constant { value: v } => *v = value,
                FieldSpec::Affine { coeffs, .. } => coeffs[0] = value,
                FieldSpec::Table { .. } => {
                    return Err(CliError::Config("p_const: cannot sweep a tabulated p".into()));
                }
            },
            Axis::PSlope => {
                let base = match &c.p {
                    FieldSpec::Constant { value } => *value,
                    FieldSpec::Affine { coeffs, .. } => coeffs[0],
                    FieldSpec::Table { .. } => {
                        return Err(CliError::Config("p_slope: cannot sweep a tabulated p".into()));
                    }
                };
                let mut coeffs = vec![0.0; dim + 1];
                coeffs[0] = base;
                coeffs[1] = value;
                c.p = FieldSpec::Affine { coeffs, positive_part: false };
            }
            Axis::Phi0Scale => match &mut c.phi0 {
                FieldSpec::Constant { value: v } => *v *= value,
                FieldSpec::Affine { coeffs, .. } => coeffs.iter_mut().for_each(|a| *a *= value),
                FieldSpec::Table { .. } => {
                    return Err(CliError::Config("phi0_scale: cannot sweep a tabulated phi0".into()));
                }
            },
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ORACLE: &str = r#"
seed = 3
[domain]
lower = [0.0]
upper = [1.0]
n = [64]
[p]
kind = "constant"
value = 2.0
[lambda]
kind = "constant"
value = 0.5
[phi0]
kind = "affine"
coeffs = [0.5, -0.5]
[schedule]
inner_tol = 1e-8
[verify]
holder_gamma = 0.8
"#;

    #[test]
    fn canonical_form_round_trips() {
        let cfg = Config::parse(ORACLE).unwrap();
        assert_eq!(cfg.domain.dim, Some(1));
        let text = cfg.canonical();
        let again = Config::parse(&text).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.canonical(), text);
        assert_eq!(again.verify.holder_gamma, 0.8);
        assert_eq!(again.verify.vx_trials, SuiteOptions::default().vx_trials);
    }

    #[test]
    fn oracle_location_from_affine_data() {
        let cfg = Config::parse(ORACLE).unwrap();
        assert!((cfg.oracle_location().unwrap() - 0.5).abs() < 1e-15);
        let swept = cfg.with_axis(Axis::LambdaConst, 0.25).unwrap();
        assert!((swept.oracle_location().unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn diagnostics_name_the_field() {
        let bad = ORACLE.replace("coeffs = [0.5, -0.5]", "coeffs = [0.5]");
        let e = Config::parse(&bad).unwrap_err().to_string();
        assert!(e.contains("phi0.coeffs"), "{e}");
        let bad = ORACLE.replace("value = 2.0", "value = 0.9");
        let e = Config::parse(&bad).unwrap().instance().unwrap_err().to_string();
        assert!(e.contains("p:"), "{e}");
        let bad = ORACLE.replace("seed = 3", "seed = 3\nbogus = 1");
        let e = Config::parse(&bad).unwrap_err().to_string();
        assert!(e.contains("line"), "{e}");
    }

    #[test]
    fn axis_application() {
        let cfg = Config::parse(ORACLE).unwrap();
        assert_eq!(cfg.with_axis(Axis::N, 128.0).unwrap().domain.n, vec![128]);
        assert!(cfg.with_axis(Axis::N, 12.5).is_err());
        let sloped = cfg.with_axis(Axis::PSlope, 0.5).unwrap();
        assert_eq!(sloped.p, FieldSpec::Affine { coeffs: vec![2.0, 0.5], positive_part: false });
        let scaled = cfg.with_axis(Axis::Phi0Scale, 2.0).unwrap();
        // a = 1 puts the plateau point on the right end: no free boundary
        assert_eq!(scaled.oracle_location(), None);
    }
}
