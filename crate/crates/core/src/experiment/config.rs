use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::elliptic::{AdmissiblePair, SolverSettings, SourceConfig};
use crate::error::{Error, Result};
use crate::inverse::{Penalty, ReconSettings, DEFAULT_V1_FLOOR};
use crate::mesh::{poly_bump, read_field, Grid, IndexBox, Point, QuadratureSpec, ScalarField, DEFAULT_PAIR_BUDGET};
use crate::stability::{PerturbationSpec, StabilitySettings, Target};
use crate::ucp::{NearSourceSettings, RandomSolutionSpec, LADDER_RATIO};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeCount {
    Uniform(usize),
    PerAxis([usize; 3]),
}

impl NodeCount {
    pub fn dims(self) -> [usize; 3] {
        match self {
            NodeCount::Uniform(n) => [n; 3],
            NodeCount::PerAxis(d) => d,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: Point,
    pub upper: Point,
    pub n: NodeCount,
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        Grid::from_bounds(self.lower, self.upper, self.n.dims())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub lower: Point,
    pub upper: Point,
}

impl BoxSpec {
    pub fn center(&self) -> Point {
        [0, 1, 2].map(|a| 0.5 * (self.lower[a] + self.upper[a]))
    }

    pub fn half_width(&self) -> f64 {
        (0..3)
            .map(|a| 0.5 * (self.upper[a] - self.lower[a]))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    Constant,
    BumpSum,
    FieldFile,
}

/// `amp_a * bump` and `amp_b * bump` added to the constant background.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumpSpec {
    pub center: Point,
    pub radius: f64,
    #[serde(default)]
    pub amp_a: f64,
    #[serde(default)]
    pub amp_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSpec {
    pub kind: PairKind,
    /// Constant value, or background for `bump_sum`.
    pub a: Option<f64>,
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bumps: Vec<BumpSpec>,
    pub a_path: Option<PathBuf>,
    pub b_path: Option<PathBuf>,
    /// Certificate bounds; the tightest admissible ones when both are absent.
    pub lambda: Option<f64>,
    pub kappa: Option<f64>,
}

impl PairSpec {
    fn shape_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let need = |out: &mut Vec<String>, present: bool, key: &str| {
            if !present {
                out.push(format!("pair.{key} is required for kind = {:?}", self.kind));
            }
        };
        match self.kind {
            PairKind::Constant | PairKind::BumpSum => {
                need(&mut out, self.a.is_some(), "a");
                need(&mut out, self.b.is_some(), "b");
                if self.a_path.is_some() || self.b_path.is_some() {
                    out.push("pair.a_path and pair.b_path only apply to kind = \"field_file\"".into());
                }
            }
            PairKind::FieldFile => {
                need(&mut out, self.a_path.is_some(), "a_path");
                need(&mut out, self.b_path.is_some(), "b_path");
            }
        }
        if self.kind == PairKind::BumpSum && self.bumps.is_empty() {
            out.push("pair.bumps must list at least one bump for kind = \"bump_sum\"".into());
        }
        if self.kind != PairKind::BumpSum && !self.bumps.is_empty() {
            out.push("pair.bumps only applies to kind = \"bump_sum\"".into());
        }
        for (i, bump) in self.bumps.iter().enumerate() {
            if !(bump.radius > 0.0) {
                out.push(format!("pair.bumps[{i}].radius must be positive"));
            }
        }
        match (self.lambda, self.kappa) {
            (Some(l), Some(k)) => {
                if !(l > 0.0 && k > 0.0) {
                    out.push(format!("pair.lambda = {l} and pair.kappa = {k} must be positive"));
                }
            }
            (None, None) => {}
            _ => out.push("pair.lambda and pair.kappa must be given together".into()),
        }
        out
    }

    /// Samples the coefficients on `grid` and certifies them.
    pub fn build(&self, grid: Grid) -> Result<AdmissiblePair> {
        let shape = self.shape_violations();
        if !shape.is_empty() {
            return Err(Error::Config(shape));
        }
        let (a, b) = match self.kind {
            PairKind::Constant => (
                ScalarField::constant(grid, self.a.unwrap()),
                ScalarField::constant(grid, self.b.unwrap()),
            ),
            PairKind::BumpSum => {
                let sum = |base: f64, amp: fn(&BumpSpec) -> f64| {
                    ScalarField::from_fn(grid, |p| {
                        base + self
                            .bumps
                            .iter()
                            .map(|s| amp(s) * poly_bump(p, s.center, s.radius))
                            .sum::<f64>()
                    })
                };
                (sum(self.a.unwrap(), |s| s.amp_a), sum(self.b.unwrap(), |s| s.amp_b))
            }
            PairKind::FieldFile => {
                let load = |p: &Path| -> Result<ScalarField> {
                    let f = read_field(p)?;
                    if *f.grid() != grid {
                        return Err(Error::Shape(format!(
                            "{} does not lie on the configured grid",
                            p.display()
                        )));
                    }
                    Ok(f)
                };
                (
                    load(self.a_path.as_ref().unwrap())?,
                    load(self.b_path.as_ref().unwrap())?,
                )
            }
        };
        match (self.lambda, self.kappa) {
            (Some(l), Some(k)) => AdmissiblePair::certify(a, b, l, k),
            _ => AdmissiblePair::certify_tight(a, b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconConfig {
    pub reg_lambda_rel: f64,
    pub penalty: Penalty,
    pub v1_floor: f64,
    /// Directory holding `v1.json` and `v2.json`; the data are simulated when absent.
    pub data_dir: Option<PathBuf>,
}

impl Default for ReconConfig {
    fn default() -> Self {
        let d = ReconSettings::default();
        Self {
            reg_lambda_rel: d.reg_lambda_rel,
            penalty: d.penalty,
            v1_floor: DEFAULT_V1_FLOOR,
            data_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormSpec {
    pub alpha: f64,
    /// Interpolation exponent in `(0, alpha)`; recorded, not used.
    pub theta: f64,
}

impl Default for NormSpec {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            theta: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilityConfig {
    pub epsilons: Vec<f64>,
    /// Defaults to the centre of the measurement region.
    pub bump_center: Option<Point>,
    /// Defaults to 0.8 of the region's half width.
    pub bump_radius: Option<f64>,
    pub target: Target,
    pub pair_budget: usize,
    pub reconstruction_ladder: bool,
    /// Radii of the weighted interpolation check; empty disables it.
    pub interpolation_radii: Vec<f64>,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![1e-3, 3e-3, 1e-2, 3e-2, 1e-1],
            bump_center: None,
            bump_radius: None,
            target: Target::A,
            pair_budget: DEFAULT_PAIR_BUDGET,
            reconstruction_ladder: false,
            interpolation_radii: vec![0.1, 0.2, 0.3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UcpField {
    /// `w = v2/v1` with `sigma = a u1^2` on the measurement region.
    #[default]
    Quotient,
    /// Seeded random conductivity solution on the whole grid.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThreeBallConfig {
    pub center: Option<Point>,
    pub r: f64,
    pub radii: [f64; 3],
}

impl Default for ThreeBallConfig {
    fn default() -> Self {
        Self {
            center: None,
            r: 0.1,
            radii: [1.0, 2.0, 4.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub x: Option<Point>,
    pub x0: Option<Point>,
    pub delta: f64,
    pub m: f64,
    pub eta: f64,
    pub gamma: f64,
    pub c: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            x: None,
            x0: None,
            delta: 0.1,
            m: 1.0,
            eta: 0.5,
            gamma: 0.5,
            c: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UcpConfig {
    pub field: UcpField,
    pub random: RandomSolutionSpec,
    pub quadrature: QuadratureSpec,
    /// Centre of the frequency curve; defaults to the centre of the field's grid.
    pub center: Option<Point>,
    pub r0: f64,
    pub ratio: f64,
    pub count: usize,
    pub three_ball: ThreeBallConfig,
    pub chain: ChainConfig,
    pub near_source: NearSourceSettings,
}

impl Default for UcpConfig {
    fn default() -> Self {
        Self {
            field: UcpField::default(),
            random: RandomSolutionSpec::default(),
            quadrature: QuadratureSpec::default(),
            center: None,
            r0: 0.05,
            ratio: LADDER_RATIO,
            count: 32,
            three_ball: ThreeBallConfig::default(),
            chain: ChainConfig::default(),
            near_source: NearSourceSettings::default(),
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("qpat-out")
}

/// Everything one run needs: geometry, coefficients, sources, measurement
/// region, numerics and output location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out", skip_serializing)]
    pub out: PathBuf,
    pub grid: GridSpec,
    pub pair: PairSpec,
    pub sources: SourceConfig,
    pub omega: BoxSpec,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub reconstruction: ReconConfig,
    #[serde(default)]
    pub norms: NormSpec,
    #[serde(default)]
    pub stability: StabilityConfig,
    #[serde(default)]
    pub ucp: UcpConfig,
    /// SHA-256 of the canonical form of the input document.
    #[serde(skip)]
    pub config_hash: String,
}

impl ExperimentConfig {
    pub fn grid(&self) -> Result<Grid> {
        self.grid.build()
    }

    pub fn omega(&self, grid: &Grid) -> Result<IndexBox> {
        let region = grid.index_box(self.omega.lower, self.omega.upper)?;
        grid.sub_grid(&region)?;
        Ok(region)
    }

    pub fn pair(&self, grid: Grid) -> Result<AdmissiblePair> {
        self.pair.build(grid)
    }

    pub fn recon_settings(&self) -> ReconSettings {
        ReconSettings {
            reg_lambda_rel: self.reconstruction.reg_lambda_rel,
            penalty: self.reconstruction.penalty,
            v1_floor: self.reconstruction.v1_floor,
            solver: self.solver,
        }
    }

    pub fn stability_settings(&self) -> StabilitySettings {
        StabilitySettings {
            alpha: self.norms.alpha,
            solver: self.solver,
            pair_budget: self.stability.pair_budget,
            seed: self.seed,
        }
    }

    /// Defaults to a bump filling 80% of the node-aligned measurement region.
    pub fn perturbation(&self) -> PerturbationSpec {
        let snapped = self
            .grid()
            .and_then(|g| {
                let o = self.omega(&g)?;
                Ok(BoxSpec {
                    lower: g.coords(o.lo),
                    upper: g.coords(o.hi),
                })
            })
            .unwrap_or(self.omega);
        PerturbationSpec {
            bump_center: self.stability.bump_center.unwrap_or_else(|| snapped.center()),
            bump_radius: self.stability.bump_radius.unwrap_or(0.8 * snapped.half_width()),
            target: self.stability.target,
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut Option<PathBuf>| {
            if let Some(path) = p.as_mut() {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        join(&mut self.pair.a_path);
        join(&mut self.pair.b_path);
        join(&mut self.reconstruction.data_dir);
    }

    /// Every semantic problem with the configuration, empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let grid = match self.grid() {
            Ok(g) => Some(g),
            Err(e) => {
                out.push(format!("grid: {e}"));
                None
            }
        };
        let (lo, hi) = (self.omega.lower, self.omega.upper);
        let omega = grid.and_then(|g| match self.omega(&g) {
            Ok(o) => Some(o),
            Err(e) => {
                out.push(format!("omega: {e}"));
                None
            }
        });
        if let Some(g) = grid {
            out.extend(
                self.sources
                    .violations(&g, (lo, hi))
                    .into_iter()
                    .map(|v| format!("sources: {v}")),
            );
        }
        if !(self.solver.tol > 0.0 && self.solver.tol < 1.0) {
            out.push(format!("solver.tol = {} must lie in (0, 1)", self.solver.tol));
        }
        if self.solver.max_iter == 0 {
            out.push("solver.max_iter must be positive".into());
        }

        let shape = self.pair.shape_violations();
        if shape.is_empty() {
            if let Some(g) = grid {
                if let Err(e) = self.pair(g) {
                    out.push(format!("pair: {e}"));
                }
            }
        } else {
            out.extend(shape);
        }

        let NormSpec { alpha, theta } = self.norms;
        if !(alpha > 0.0 && alpha <= 1.0) {
            out.push(format!("norms.alpha = {alpha} must lie in (0, 1]"));
        }
        if !(theta > 0.0 && theta < alpha) {
            out.push(format!("norms.theta = {theta} must lie in (0, alpha)"));
        }
        let rc = &self.reconstruction;
        if !(rc.reg_lambda_rel > 0.0) {
            out.push("reconstruction.reg_lambda_rel must be positive".into());
        }
        if !(rc.v1_floor > 0.0) {
            out.push("reconstruction.v1_floor must be positive".into());
        }

        let st = &self.stability;
        if st.epsilons.is_empty() || st.epsilons.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            out.push("stability.epsilons must be a non-empty list of finite non-negative values".into());
        } else if st.epsilons.windows(2).any(|w| w[1] <= w[0]) {
            out.push("stability.epsilons must be strictly increasing".into());
        }
        if st.pair_budget == 0 {
            out.push("stability.pair_budget must be positive".into());
        }
        if st.interpolation_radii.iter().any(|r| !(*r > 0.0)) {
            out.push("stability.interpolation_radii must be positive".into());
        }
        if let (Some(g), Some(o)) = (grid, omega) {
            if let Err(e) = self.perturbation().validate(&g, &o) {
                out.push(format!("stability: {e}"));
            }
        }

        let u = &self.ucp;
        if !(u.r0 > 0.0) {
            out.push("ucp.r0 must be positive".into());
        }
        if !(u.ratio > 1.0) {
            out.push("ucp.ratio must exceed 1".into());
        }
        if u.count == 0 {
            out.push("ucp.count must be positive".into());
        }
        if u.quadrature.radial == 0 || u.quadrature.sphere < 2 {
            out.push("ucp.quadrature needs radial >= 1 and sphere >= 2".into());
        }
        if !(u.random.amplitude >= 0.0 && u.random.amplitude < 1.0) {
            out.push("ucp.random.amplitude must lie in [0, 1)".into());
        }
        let [k, l, m] = u.three_ball.radii;
        if !(0.0 < k && k < l && l < m && u.three_ball.r > 0.0) {
            out.push("ucp.three_ball needs r > 0 and 0 < radii[0] < radii[1] < radii[2]".into());
        }
        if !(u.chain.delta > 0.0) {
            out.push("ucp.chain.delta must be positive".into());
        }
        out
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

fn toml_error(text: &str, e: &toml::de::Error) -> String {
    match e.span() {
        Some(span) => {
            let (line, col) = line_col(text, span.start);
            format!("line {line}, column {col}: {}", e.message().trim())
        }
        None => e.message().trim().to_string(),
    }
}

fn canonical(value: &toml::Value, out: &mut String) {
    match value {
        toml::Value::Table(t) => {
            let mut keys: Vec<&String> = t.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("string serializes"));
                out.push(':');
                canonical(&t[k], out);
            }
            out.push('}');
        }
        toml::Value::Array(a) => {
            out.push('[');
            for (i, v) in a.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                canonical(v, out);
            }
            out.push(']');
        }
        toml::Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string serializes")),
        toml::Value::Integer(i) => {
            let _ = write!(out, "{i}");
        }
        toml::Value::Float(f) => {
            let _ = write!(out, "{f:?}");
        }
        toml::Value::Boolean(b) => {
            let _ = write!(out, "{b}");
        }
        toml::Value::Datetime(d) => {
            let _ = write!(out, "\"{d}\"");
        }
    }
}

/// SHA-256 over a key-sorted rendering of the document, so reordering keys
/// or tables leaves it unchanged.
pub fn config_hash(table: &toml::Table) -> String {
    let mut s = String::new();
    canonical(&toml::Value::Table(table.clone()), &mut s);
    hex::encode(Sha256::digest(s.as_bytes()))
}

/// Parses and validates a TOML document. Relative paths are kept as written.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_in(text, None)
}

pub fn parse_config_file(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let base = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    parse_config_in(&text, Some(base))
}

/// As [`parse_config`], resolving relative input paths against `base`.
pub fn parse_config_in(text: &str, base: Option<&Path>) -> Result<ExperimentConfig> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(vec![format!("syntax error at {}", toml_error(text, &e))]))?;
    let mut unknown = Vec::new();
    let parsed: std::result::Result<ExperimentConfig, _> =
        serde_ignored::deserialize(toml::Deserializer::new(text), |path| unknown.push(path.to_string()));
    let mut config = parsed.map_err(|e| {
        let mut v = vec![toml_error(text, &e)];
        v.extend(unknown.iter().map(|k| format!("unknown key `{k}`")));
        Error::Config(v)
    })?;
    if let Some(base) = base {
        config.resolve_paths(base);
    }
    let mut violations: Vec<String> = unknown.into_iter().map(|k| format!("unknown key `{k}`")).collect();
    violations.extend(config.violations());
    if !violations.is_empty() {
        return Err(Error::Config(violations));
    }
    config.config_hash = config_hash(&table);
    Ok(config)
}
