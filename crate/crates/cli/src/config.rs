//! Problem configuration: a versioned JSON document whose expression
//! strings use the exprlang grammar.

use std::path::Path;
use std::sync::Arc;

use jetconn::connection::{FundamentalVerticalMetric, NonlinearConnection, QuadraticLagrangian};
use jetconn::exprlang;
use jetconn::geometry::{MetricField, MetricKind};
use jetconn::harmonic::Quadrature;
use jetconn::jet::{CoordinateChange, JetBox, JetDims, JetPoint};
use jetconn::smooth::Field;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

/// Row-major matrix of expression strings.
pub type Matrix = Vec<Vec<String>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub version: u32,
    pub dims: Dims,
    /// Temporal metric `h_αβ(t)`.
    pub h: Matrix,
    /// Temporal metric used to split a vertical metric; defaults to `h`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<Matrix>,
    /// Spatial metric `φ_ij(x)` for Γ₀.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Matrix>,
    /// Spatial metric used by GML when the vertical metric is not regular.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lagrangian: Option<Lagrangian>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertical: Option<Vertical>,
    /// A user connection, checked by `verify --which torsion --construction user`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub connection: Option<UserConnection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub change: Option<Change>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub construction: Option<Construction>,
    pub samples: Samples,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geodesic: Option<Geodesic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy: Option<Energy>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub p: usize,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Lagrangian {
    /// A free-form scalar on J¹.
    Expr(String),
    /// `h^{αβ} g_ij x^i_α x^j_β + U^(α)_(i) x^i_α + F`; `u[α][i]`.
    Quadratic { g: Matrix, u: Vec<Vec<String>>, f: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Vertical {
    /// `G = h^{αβ} g_ij` with `g` possibly fiber dependent.
    Product { g: Matrix },
    /// All `(np)²` components, row `α·n + i`, column `β·n + j`.
    Components(Matrix),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserConnection {
    /// `m[(i·p + α)·p + β]`.
    pub m: Vec<String>,
    /// `n[(i·p + α)·n + j]`.
    pub n: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Change {
    pub temporal: Vec<String>,
    pub temporal_inverse: Vec<String>,
    pub spatial: Vec<String>,
    pub spatial_inverse: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    Gamma0,
    Ml,
    Gml,
    User,
}

impl Construction {
    pub fn tag(self) -> &'static str {
        match self {
            Construction::Gamma0 => "gamma0",
            Construction::Ml => "ml",
            Construction::Gml => "gml",
            Construction::User => "user",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Samples {
    /// Flat jet-layout points `(t, x, v)`.
    Points(Vec<Vec<f64>>),
    Random { count: usize, t: Vec<[f64; 2]>, x: Vec<[f64; 2]>, v: [f64; 2] },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub naturality: f64,
    pub torsion: f64,
    pub regularity: f64,
    pub equivalence: f64,
    pub conservation: f64,
    pub variation: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            naturality: 1e-8,
            torsion: 1e-10,
            regularity: 1e-9,
            equivalence: 1e-6,
            conservation: 1e-8,
            variation: 1e-5,
        }
    }
}

impl Tolerances {
    pub fn override_all(&mut self, tol: f64) {
        *self = Tolerances {
            naturality: tol,
            torsion: tol,
            regularity: tol,
            equivalence: tol,
            conservation: tol,
            variation: tol,
        };
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Connection,
    Semispray,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Initial {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geodesic {
    pub initial: Initial,
    pub t_end: f64,
    pub steps: usize,
    #[serde(default = "default_route")]
    pub route: Route,
    #[serde(default = "default_construction")]
    pub construction: Construction,
    /// Closed-form endpoint to check against, to `tolerances.equivalence`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_endpoint: Option<Endpoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoint {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

fn default_route() -> Route {
    Route::Connection
}

fn default_construction() -> Construction {
    Construction::Gamma0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Trapezoid,
    Simpson,
}

impl From<Rule> for Quadrature {
    fn from(r: Rule) -> Self {
        match r {
            Rule::Trapezoid => Quadrature::Trapezoid,
            Rule::Simpson => Quadrature::Simpson,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Energy {
    /// Map components `x^i(t)` in the variables `t1..tp`.
    pub map: Vec<String>,
    pub lower: f64,
    pub upper: f64,
    pub nodes: usize,
    #[serde(default = "default_rule")]
    pub rule: Rule,
    #[serde(default)]
    pub perturbations: Vec<Vec<String>>,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Check that every listed variation vanishes to `tolerances.variation`.
    #[serde(default)]
    pub extremal: bool,
}

fn default_rule() -> Rule {
    Rule::Simpson
}

fn default_eps() -> f64 {
    jetconn::harmonic::DEFAULT_VARIATION_STEP
}

/// Parse a config document, reporting the schema path of any error.
pub fn parse(text: &str) -> Result<(Config, serde_json::Value), CliError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CliError::config("$", format!("invalid JSON: {e}")))?;
    let config: Config = serde_path_to_error::deserialize(value.clone()).map_err(|e| {
        let path = e.path().to_string();
        CliError::config(&format!("$.{path}"), e.into_inner().to_string())
    })?;
    if config.version != CONFIG_VERSION {
        return Err(CliError::config(
            "$.version",
            format!("unsupported version {} (expected {CONFIG_VERSION})", config.version),
        ));
    }
    if config.dims.p == 0 || config.dims.n == 0 {
        return Err(CliError::config("$.dims", "p and n must be positive"));
    }
    Ok((config, value))
}

pub fn load(path: &Path) -> Result<(Config, serde_json::Value), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config("$", format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

/// Parsed inputs, built lazily from a [`Config`].
pub struct Problem<'a> {
    pub config: &'a Config,
    pub dims: JetDims,
}

fn metric(kind: MetricKind, dims: JetDims, rows: &Matrix, path: &str) -> Result<MetricField, CliError> {
    MetricField::from_sources(kind, dims, rows).map_err(|e| CliError::config(path, e.to_string()))
}

fn expr(src: &str, dims: JetDims, path: &str) -> Result<Field, CliError> {
    exprlang::parse(src, dims)
        .map(|e| Arc::new(e) as Field)
        .map_err(|e| CliError::config(path, e.to_string()))
}

impl<'a> Problem<'a> {
    pub fn new(config: &'a Config) -> Self {
        Problem { config, dims: JetDims::new(config.dims.p, config.dims.n) }
    }

    pub fn h(&self) -> Result<MetricField, CliError> {
        metric(MetricKind::Temporal, self.dims, &self.config.h, "$.h")
    }

    pub fn psi(&self) -> Result<MetricField, CliError> {
        match &self.config.psi {
            Some(rows) => metric(MetricKind::Temporal, self.dims, rows, "$.psi"),
            None => self.h(),
        }
    }

    pub fn metric(&self) -> Result<MetricField, CliError> {
        let rows = self.config.metric.as_ref().ok_or_else(|| CliError::config("$.metric", "required"))?;
        metric(MetricKind::Spatial, self.dims, rows, "$.metric")
    }

    pub fn fallback(&self) -> Result<Option<MetricField>, CliError> {
        self.config
            .fallback
            .as_ref()
            .map(|rows| metric(MetricKind::Spatial, self.dims, rows, "$.fallback"))
            .transpose()
    }

    /// The Lagrangian as a scalar on J¹.
    pub fn lagrangian(&self) -> Result<Field, CliError> {
        match &self.config.lagrangian {
            Some(Lagrangian::Expr(src)) => expr(src, self.dims, "$.lagrangian.expr"),
            Some(Lagrangian::Quadratic { .. }) => Ok(self.quadratic()?.scalar()),
            None => Err(CliError::config("$.lagrangian", "required")),
        }
    }

    pub fn quadratic(&self) -> Result<QuadraticLagrangian, CliError> {
        let Some(Lagrangian::Quadratic { g, u, f }) = &self.config.lagrangian else {
            return Err(CliError::config("$.lagrangian.quadratic", "required"));
        };
        let JetDims { p, n } = self.dims;
        if u.len() != p || u.iter().any(|row| row.len() != n) {
            return Err(CliError::config("$.lagrangian.quadratic.u", format!("expected {p} rows of {n}")));
        }
        let mut fields = Vec::with_capacity(p * n);
        for (a, row) in u.iter().enumerate() {
            for (i, src) in row.iter().enumerate() {
                fields.push(expr(src, self.dims, &format!("$.lagrangian.quadratic.u[{a}][{i}]"))?);
            }
        }
        let g = metric(MetricKind::Parametric, self.dims, g, "$.lagrangian.quadratic.g")?;
        let f = expr(f, self.dims, "$.lagrangian.quadratic.f")?;
        QuadraticLagrangian::new(self.h()?, g, fields, f).map_err(|e| CliError::config("$.lagrangian.quadratic", e.to_string()))
    }

    /// The vertical metric, from `vertical` or else from the Lagrangian.
    pub fn vertical(&self) -> Result<FundamentalVerticalMetric, CliError> {
        let d = self.dims;
        match &self.config.vertical {
            Some(Vertical::Product { g }) => {
                let g = metric(MetricKind::FiberDependent, d, g, "$.vertical.product.g")?;
                FundamentalVerticalMetric::product(&self.h()?, &g).map_err(|e| CliError::config("$.vertical", e.to_string()))
            }
            Some(Vertical::Components(rows)) => {
                let m = d.p * d.n;
                if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                    return Err(CliError::config("$.vertical.components", format!("expected a {m}x{m} matrix")));
                }
                let mut fields = Vec::with_capacity(m * m);
                for (r, row) in rows.iter().enumerate() {
                    for (c, src) in row.iter().enumerate() {
                        fields.push(expr(src, d, &format!("$.vertical.components[{r}][{c}]"))?);
                    }
                }
                FundamentalVerticalMetric::from_fields(d, fields).map_err(|e| CliError::config("$.vertical", e.to_string()))
            }
            None => {
                let l = self.lagrangian()?;
                jetconn::connection::fundamental_metric(&l, d).map_err(CliError::math)
            }
        }
    }

    pub fn user_connection(&self) -> Result<NonlinearConnection, CliError> {
        let c = self.config.connection.as_ref().ok_or_else(|| CliError::config("$.connection", "required"))?;
        NonlinearConnection::from_sources(self.dims, &c.m, &c.n).map_err(|e| CliError::config("$.connection", e.to_string()))
    }

    pub fn change(&self) -> Result<CoordinateChange, CliError> {
        let c = self.config.change.as_ref().ok_or_else(|| CliError::config("$.change", "required"))?;
        CoordinateChange::from_sources(self.dims, &c.temporal, &c.temporal_inverse, &c.spatial, &c.spatial_inverse)
            .map_err(|e| CliError::config("$.change", e.to_string()))
    }

    pub fn samples(&self, seed: u64) -> Result<Vec<JetPoint>, CliError> {
        let d = self.dims;
        match &self.config.samples {
            Samples::Points(points) => points
                .iter()
                .enumerate()
                .map(|(k, flat)| {
                    JetPoint::from_flat(d, flat).map_err(|e| CliError::config(&format!("$.samples.points[{k}]"), e.to_string()))
                })
                .collect(),
            Samples::Random { count, t, x, v } => {
                let pairs = |r: &[[f64; 2]]| r.iter().map(|&[a, b]| (a, b)).collect::<Vec<_>>();
                let jet_box = JetBox::new(d, pairs(t), pairs(x), (v[0], v[1]))
                    .map_err(|e| CliError::config("$.samples.random", e.to_string()))?;
                Ok(jet_box.sample(*count, seed))
            }
        }
    }
}
