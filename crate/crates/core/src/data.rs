//! Network data, model dimensions, parameters and fitted results, together
//! with the `network.csv` and `model.json` file formats.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::atomic::write_atomic;
use crate::error::{MltaError, Result};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// A multi-layer bipartite network: binary incidence rows of sending nodes
/// (grouped by layer) against `R` receiving nodes, plus nodal covariates.
///
/// Rows are stored layer by layer. Column 0 of the covariate matrix is the
/// constant intercept.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkData {
    layer_ids: Vec<String>,
    layer_offsets: Vec<usize>,
    node_layer: Vec<usize>,
    r: usize,
    j: usize,
    y: Vec<u8>,
    x: Vec<f64>,
}

impl NetworkData {
    /// Build from row-major `y` (`n × r`) and `x` (`n × j`, intercept
    /// included), with rows already grouped by layer.
    pub fn new(
        layer_ids: Vec<String>,
        layer_sizes: Vec<usize>,
        r: usize,
        y: Vec<u8>,
        j: usize,
        x: Vec<f64>,
    ) -> Result<Self> {
        if layer_ids.is_empty() || layer_ids.len() != layer_sizes.len() {
            return Err(MltaError::InvalidInput(format!(
                "{} layer ids for {} layer sizes",
                layer_ids.len(),
                layer_sizes.len()
            )));
        }
        if r == 0 || j == 0 {
            return Err(MltaError::InvalidInput(
                "need at least one response column and the intercept".into(),
            ));
        }
        if let Some(h) = layer_sizes.iter().position(|&s| s == 0) {
            return Err(MltaError::InvalidInput(format!(
                "layer '{}' is empty",
                layer_ids[h]
            )));
        }
        let n: usize = layer_sizes.iter().sum();
        if y.len() != n * r || x.len() != n * j {
            return Err(MltaError::InvalidInput(format!(
                "expected {n} rows: got {} incidence and {} covariate values",
                y.len(),
                x.len()
            )));
        }
        if let Some(p) = y.iter().position(|&v| v > 1) {
            return Err(MltaError::InvalidInput(format!(
                "binary violation at node {}, column y{}",
                p / r,
                p % r + 1
            )));
        }
        if let Some(p) = x.iter().position(|v| !v.is_finite()) {
            return Err(MltaError::InvalidInput(format!(
                "non-finite covariate at node {}, column {}",
                p / j,
                p % j
            )));
        }
        if (0..n).any(|i| x[i * j] != 1.0) {
            return Err(MltaError::InvalidInput(
                "covariate column 0 must be the constant intercept".into(),
            ));
        }
        let mut layer_offsets = Vec::with_capacity(layer_sizes.len() + 1);
        let mut node_layer = Vec::with_capacity(n);
        layer_offsets.push(0);
        for (h, &s) in layer_sizes.iter().enumerate() {
            layer_offsets.push(layer_offsets[h] + s);
            node_layer.extend(std::iter::repeat_n(h, s));
        }
        Ok(NetworkData {
            layer_ids,
            layer_offsets,
            node_layer,
            r,
            j,
            y,
            x,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.layer_ids.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.node_layer.len()
    }

    /// Number of receiving nodes `R`.
    pub fn n_responses(&self) -> usize {
        self.r
    }

    /// Number of covariate columns `J`, intercept included.
    pub fn n_covariates(&self) -> usize {
        self.j
    }

    pub fn layer_ids(&self) -> &[String] {
        &self.layer_ids
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layer_offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Global row range of layer `h`.
    pub fn layer_range(&self, h: usize) -> std::ops::Range<usize> {
        self.layer_offsets[h]..self.layer_offsets[h + 1]
    }

    pub fn layer_of(&self, node: usize) -> usize {
        self.node_layer[node]
    }

    pub fn y_row(&self, node: usize) -> &[u8] {
        &self.y[node * self.r..(node + 1) * self.r]
    }

    pub fn x_row(&self, node: usize) -> &[f64] {
        &self.x[node * self.j..(node + 1) * self.j]
    }

    pub fn y(&self) -> &[u8] {
        &self.y
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    /// New network made of the given global rows; layer membership follows
    /// the rows, and layers keep their original order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<NetworkData> {
        let mut per_layer = vec![Vec::new(); self.n_layers()];
        for &i in rows {
            per_layer[self.node_layer[i]].push(i);
        }
        let mut y = Vec::with_capacity(rows.len() * self.r);
        let mut x = Vec::with_capacity(rows.len() * self.j);
        let mut ids = Vec::new();
        let mut sizes = Vec::new();
        for (h, idx) in per_layer.iter().enumerate() {
            if idx.is_empty() {
                continue;
            }
            ids.push(self.layer_ids[h].clone());
            sizes.push(idx.len());
            for &i in idx {
                y.extend_from_slice(self.y_row(i));
                x.extend_from_slice(self.x_row(i));
            }
        }
        NetworkData::new(ids, sizes, self.r, y, self.j, x)
    }
}

/// Count the `y*` response columns in a `network.csv` header.
pub fn infer_response_count(path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?;
    Ok(headers.iter().skip(1).take_while(|h| is_response_name(h)).count())
}

fn is_response_name(h: &str) -> bool {
    h.strip_prefix('y')
        .is_some_and(|s| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()))
}

fn csv_error(path: &Path, e: csv::Error) -> MltaError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => MltaError::io(path, io),
            _ => unreachable!(),
        }
    } else {
        MltaError::Csv(format!("{}: {e}", path.display()))
    }
}

/// Read a `network.csv` file with header `layer,y1..yR,<covariates>`.
///
/// Rows are regrouped by layer in order of first appearance and the
/// intercept column is prepended to the covariates.
pub fn load_network(path: impl AsRef<Path>, r: usize) -> Result<NetworkData> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.get(0) != Some("layer") {
        return Err(MltaError::Csv(format!(
            "{}: first column must be 'layer'",
            path.display()
        )));
    }
    for k in 0..r {
        let want = format!("y{}", k + 1);
        if headers.get(k + 1) != Some(want.as_str()) {
            return Err(MltaError::Csv(format!(
                "{}: expected column {} to be '{want}'",
                path.display(),
                k + 2
            )));
        }
    }
    let cov_names: Vec<String> = headers.iter().skip(1 + r).map(str::to_owned).collect();
    if let Some(extra) = cov_names.iter().find(|h| is_response_name(h)) {
        return Err(MltaError::Csv(format!(
            "{}: found response column '{extra}' beyond R = {r}",
            path.display()
        )));
    }
    let jraw = cov_names.len();
    let width = 1 + r + jraw;

    let mut order: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut y_by_layer: Vec<Vec<u8>> = Vec::new();
    let mut x_by_layer: Vec<Vec<f64>> = Vec::new();
    let mut sizes: Vec<usize> = Vec::new();

    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(MltaError::Csv(format!(
                "{}: row {line} has {} fields, expected {width}",
                path.display(),
                rec.len()
            )));
        }
        let layer = &rec[0];
        if layer.is_empty() {
            return Err(MltaError::Validation {
                message: "empty layer label".into(),
                row: line,
                column: "layer".into(),
            });
        }
        let h = *index.entry(layer.to_owned()).or_insert_with(|| {
            order.push(layer.to_owned());
            y_by_layer.push(Vec::new());
            x_by_layer.push(Vec::new());
            sizes.push(0);
            order.len() - 1
        });
        for k in 0..r {
            let v = match &rec[1 + k] {
                "0" => 0,
                "1" => 1,
                _ => {
                    return Err(MltaError::Validation {
                        message: "binary violation".into(),
                        row: line,
                        column: format!("y{}", k + 1),
                    })
                }
            };
            y_by_layer[h].push(v);
        }
        x_by_layer[h].push(1.0);
        for (c, name) in cov_names.iter().enumerate() {
            let raw = &rec[1 + r + c];
            let v: f64 = raw.parse().map_err(|_| MltaError::Validation {
                message: format!("unparseable covariate '{raw}'"),
                row: line,
                column: name.clone(),
            })?;
            if !v.is_finite() {
                return Err(MltaError::Validation {
                    message: "non-finite covariate".into(),
                    row: line,
                    column: name.clone(),
                });
            }
            x_by_layer[h].push(v);
        }
        sizes[h] += 1;
    }
    if order.is_empty() {
        return Err(MltaError::Csv(format!("{}: no data rows", path.display())));
    }
    let y = y_by_layer.concat();
    let x = x_by_layer.concat();
    NetworkData::new(order, sizes, r, y, jraw + 1, x)
}

/// Write `data` in the `network.csv` format (covariates named `x1..xJ`,
/// intercept omitted). Floats use the shortest exact representation.
pub fn write_network(data: &NetworkData, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["layer".to_string()];
    header.extend((1..=data.r).map(|k| format!("y{k}")));
    header.extend((1..data.j).map(|j| format!("x{j}")));
    wtr.write_record(&header).map_err(|e| csv_error(path, e))?;
    let mut rec: Vec<String> = Vec::with_capacity(header.len());
    for i in 0..data.n_nodes() {
        rec.clear();
        rec.push(data.layer_ids[data.node_layer[i]].clone());
        rec.extend(data.y_row(i).iter().map(|v| v.to_string()));
        rec.extend(data.x_row(i)[1..].iter().map(|v| v.to_string()));
        wtr.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| MltaError::Csv(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Dimensions of one candidate model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelDims {
    #[serde(rename = "G")]
    pub g: usize,
    #[serde(rename = "D")]
    pub d: usize,
    #[serde(rename = "Q")]
    pub q: usize,
    /// Loadings shared across groups (`w_gk = w_k`).
    pub parsimonious: bool,
}

impl ModelDims {
    pub fn new(g: usize, d: usize, q: usize, parsimonious: bool) -> Self {
        ModelDims {
            g,
            d,
            q,
            parsimonious,
        }
    }

    pub fn validate(&self, data: &NetworkData) -> Result<()> {
        if self.g == 0 || self.d == 0 || self.q == 0 {
            return Err(MltaError::InvalidInput(format!(
                "G, D and Q must be at least 1 (got {self:?})"
            )));
        }
        if self.q > data.n_layers() {
            return Err(MltaError::InvalidInput(format!(
                "Q = {} exceeds the number of layers H = {}",
                self.q,
                data.n_layers()
            )));
        }
        Ok(())
    }
}

/// Trait loadings: one `R × D` matrix shared by all groups, or one per group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Loadings {
    Shared(Vec<Vec<f64>>),
    PerGroup(Vec<Vec<Vec<f64>>>),
}

impl Loadings {
    pub fn zeros(g: usize, r: usize, d: usize, parsimonious: bool) -> Self {
        if parsimonious {
            Loadings::Shared(vec![vec![0.0; d]; r])
        } else {
            Loadings::PerGroup(vec![vec![vec![0.0; d]; r]; g])
        }
    }

    /// The `R` loading rows used by group `g`.
    pub fn group(&self, g: usize) -> &[Vec<f64>] {
        match self {
            Loadings::Shared(w) => w,
            Loadings::PerGroup(w) => &w[g],
        }
    }

    pub fn is_shared(&self) -> bool {
        matches!(self, Loadings::Shared(_))
    }

    fn values(&self) -> Box<dyn Iterator<Item = f64> + '_> {
        match self {
            Loadings::Shared(w) => Box::new(w.iter().flatten().copied()),
            Loadings::PerGroup(w) => Box::new(w.iter().flatten().flatten().copied()),
        }
    }
}

/// Free model parameters.
///
/// Class 1 is the multinomial-logit reference (`beta` holds rows for
/// classes `2..G`), and fitted parameters pin `gamma[0] = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub beta: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub w: Loadings,
    pub gamma: Vec<f64>,
    pub rho: Vec<f64>,
}

impl Params {
    pub fn n_groups(&self) -> usize {
        self.b.len()
    }

    pub fn n_layer_groups(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_finite(&self) -> bool {
        self.beta.iter().flatten().all(|v| v.is_finite())
            && self.b.iter().flatten().all(|v| v.is_finite())
            && self.w.values().all(f64::is_finite)
            && self.gamma.iter().all(|v| v.is_finite())
            && self.rho.iter().all(|v| v.is_finite())
    }

    /// Check shapes against `dims`, `J` (intercept included) and `R`.
    pub fn check_shape(&self, dims: &ModelDims, j: usize, r: usize) -> Result<()> {
        let bad = |what: &str| {
            Err(MltaError::InvalidInput(format!(
                "parameter '{what}' does not match dims {dims:?}, J = {j}, R = {r}"
            )))
        };
        if self.beta.len() != dims.g - 1 || self.beta.iter().any(|row| row.len() != j) {
            return bad("beta");
        }
        if self.b.len() != dims.g || self.b.iter().any(|row| row.len() != r) {
            return bad("b");
        }
        let w_ok = match &self.w {
            Loadings::Shared(w) => {
                dims.parsimonious && w.len() == r && w.iter().all(|row| row.len() == dims.d)
            }
            Loadings::PerGroup(w) => {
                !dims.parsimonious
                    && w.len() == dims.g
                    && w.iter()
                        .all(|m| m.len() == r && m.iter().all(|row| row.len() == dims.d))
            }
        };
        if !w_ok {
            return bad("w");
        }
        if self.gamma.len() != dims.q {
            return bad("gamma");
        }
        if self.rho.len() != dims.q
            || self.rho.iter().any(|&p| !(p >= 0.0))
            || (self.rho.iter().sum::<f64>() - 1.0).abs() > 1e-8
        {
            return bad("rho");
        }
        Ok(())
    }

    /// Equivalent parameters with `gamma[0] = 0`: the offset moves into the
    /// intercepts (covariate column 0) of every non-reference class.
    pub fn gauge_fixed(&self) -> Params {
        let mut p = self.clone();
        if let Some(&g0) = self.gamma.first() {
            for gq in &mut p.gamma {
                *gq -= g0;
            }
            if !p.beta.is_empty() {
                for row in &mut p.beta {
                    row[0] += g0;
                }
            }
        }
        p
    }
}

/// Per-node variational state for every group: `xi` (`G × R`), trait
/// posterior means `mu` (`G × D`), covariances `sigma` (`G × D × D`,
/// row-major) and the bound `log_ftilde` (`G`).
#[derive(Clone, Debug, PartialEq)]
pub struct NodeVar {
    pub xi: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub log_ftilde: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarState {
    pub g: usize,
    pub r: usize,
    pub d: usize,
    pub nodes: Vec<NodeVar>,
}

impl VarState {
    /// Every `xi` set to `xi0`, trait posteriors at the prior.
    pub fn new(n: usize, g: usize, r: usize, d: usize, xi0: f64) -> Self {
        let mut sigma = vec![0.0; g * d * d];
        for gg in 0..g {
            for a in 0..d {
                sigma[gg * d * d + a * d + a] = 1.0;
            }
        }
        let node = NodeVar {
            xi: vec![xi0; g * r],
            mu: vec![0.0; g * d],
            sigma,
            log_ftilde: vec![0.0; g],
        };
        VarState {
            g,
            r,
            d,
            nodes: vec![node; n],
        }
    }

    pub fn xi(&self, node: usize, g: usize) -> &[f64] {
        &self.nodes[node].xi[g * self.r..(g + 1) * self.r]
    }

    pub fn mu(&self, node: usize, g: usize) -> &[f64] {
        &self.nodes[node].mu[g * self.d..(g + 1) * self.d]
    }

    pub fn sigma(&self, node: usize, g: usize) -> &[f64] {
        let dd = self.d * self.d;
        &self.nodes[node].sigma[g * dd..(g + 1) * dd]
    }
}

/// A fitted model with posteriors and MAP assignments. Labels are 0-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub dims: ModelDims,
    pub params: Params,
    pub loglik: f64,
    pub bic: f64,
    pub zhat: Vec<Vec<f64>>,
    pub vhat: Vec<Vec<f64>>,
    pub node_map: Vec<usize>,
    pub layer_map: Vec<usize>,
    pub converged: bool,
    pub n_iterations: usize,
    pub start_index: usize,
}

impl FitResult {
    fn is_finite(&self) -> bool {
        self.params.is_finite()
            && self.loglik.is_finite()
            && self.bic.is_finite()
            && self.zhat.iter().flatten().all(|v| v.is_finite())
            && self.vhat.iter().flatten().all(|v| v.is_finite())
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Serialize)]
struct ModelFileOut<'a> {
    schema_version: u32,
    #[serde(flatten)]
    result: &'a FitResult,
}

#[derive(Deserialize)]
struct ModelFileIn {
    schema_version: u32,
    #[serde(flatten)]
    result: FitResult,
}

pub fn model_to_json(result: &FitResult) -> Result<String> {
    if !result.is_finite() {
        return Err(MltaError::InvalidInput(
            "refusing to serialize a fit with non-finite values".into(),
        ));
    }
    let file = ModelFileOut {
        schema_version: MODEL_SCHEMA_VERSION,
        result,
    };
    serde_json::to_string_pretty(&file).map_err(|e| MltaError::Schema(e.to_string()))
}

pub fn model_from_json(text: &str) -> Result<FitResult> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| MltaError::Schema(e.to_string()))?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == MODEL_SCHEMA_VERSION as u64 => {}
        Some(v) => {
            return Err(MltaError::Schema(format!(
                "schema_version {v} is not supported (expected {MODEL_SCHEMA_VERSION})"
            )))
        }
        None => return Err(MltaError::Schema("missing schema_version".into())),
    }
    let file: ModelFileIn =
        serde_json::from_value(value).map_err(|e| MltaError::Schema(e.to_string()))?;
    debug_assert_eq!(file.schema_version, MODEL_SCHEMA_VERSION);
    Ok(file.result)
}

pub fn write_model(result: &FitResult, path: impl AsRef<Path>) -> Result<()> {
    let text = model_to_json(result)?;
    write_atomic(path.as_ref(), text.as_bytes())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<FitResult> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| MltaError::io(path, e))?;
    model_from_json(&text)
}
