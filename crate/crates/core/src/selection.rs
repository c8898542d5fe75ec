//! Parameter counting, BIC, and grid search over `(G, D, Q)`.

use std::ops::RangeInclusive;
use std::path::Path;

use crate::atomic::write_atomic;
use crate::data::{FitResult, ModelDims, NetworkData};
use crate::em::{fit_multistart, FitConfig};
use crate::error::{MltaError, Result};
use crate::par;

/// Number of free parameters: `(G−1)J` logit coefficients, `GR` intercepts,
/// the loadings less the `D(D−1)/2` rotational degrees of freedom (once if
/// shared, per group otherwise), `Q−1` free support points and `Q−1` free
/// weights.
pub fn n_free_params(dims: &ModelDims, j: usize, r: usize) -> usize {
    let per_matrix = r * dims.d - dims.d * (dims.d - 1) / 2;
    let loadings = if dims.parsimonious {
        per_matrix
    } else {
        dims.g * per_matrix
    };
    (dims.g - 1) * j + dims.g * r + loadings + 2 * (dims.q - 1)
}

/// `−2ℓ̃ + p log N` with `N` the number of sending nodes.
pub fn bic(loglik: f64, dims: &ModelDims, j: usize, r: usize, n_nodes: usize) -> f64 {
    -2.0 * loglik + n_free_params(dims, j, r) as f64 * (n_nodes as f64).ln()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridSpec {
    pub g: RangeInclusive<usize>,
    pub d: RangeInclusive<usize>,
    pub q: RangeInclusive<usize>,
    pub parsimonious: bool,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("G", &self.g), ("D", &self.d), ("Q", &self.q)] {
            if r.is_empty() || *r.start() == 0 {
                return Err(MltaError::InvalidInput(format!(
                    "{name} range {}..{} must be non-empty and start at 1 or more",
                    r.start(),
                    r.end()
                )));
            }
        }
        Ok(())
    }

    /// Cells in table order: `G` outermost, then `D`, then `Q`.
    pub fn cells(&self) -> Vec<ModelDims> {
        let mut out = Vec::new();
        for g in self.g.clone() {
            for d in self.d.clone() {
                for q in self.q.clone() {
                    out.push(ModelDims::new(g, d, q, self.parsimonious));
                }
            }
        }
        out
    }
}

/// One grid cell: the winning multi-start fit, or why every start failed.
#[derive(Clone, Debug)]
pub struct GridCell {
    pub dims: ModelDims,
    pub n_params: usize,
    pub fit: std::result::Result<FitResult, String>,
}

#[derive(Clone, Debug)]
pub struct Selection {
    pub best: FitResult,
    pub table: Vec<GridCell>,
}

/// Fit every cell of `grid` and pick the smallest BIC. Ties go to the
/// smaller `G`, then `Q`, then `D`. Cells that fail are kept in the table
/// and skipped.
pub fn select_model(data: &NetworkData, grid: &GridSpec, cfg: &FitConfig) -> Result<Selection> {
    grid.validate()?;
    let cells = grid.cells();
    let (j, r) = (data.n_covariates(), data.n_responses());
    let fits = par::map_indexed(cells.len(), |c| {
        let dims = cells[c];
        if dims.q > data.n_layers() {
            return Err(format!("Q = {} exceeds H = {}", dims.q, data.n_layers()));
        }
        fit_multistart(data, &dims, cfg).map_err(|e| e.to_string())
    });
    let table: Vec<GridCell> = cells
        .iter()
        .zip(fits)
        .map(|(dims, fit)| GridCell {
            dims: *dims,
            n_params: n_free_params(dims, j, r),
            fit,
        })
        .collect();

    let key = |d: &ModelDims| (d.g, d.q, d.d);
    let mut best: Option<&FitResult> = None;
    for cell in &table {
        let Ok(fit) = &cell.fit else { continue };
        let better = match best {
            None => true,
            Some(b) => {
                fit.bic < b.bic || (fit.bic == b.bic && key(&fit.dims) < key(&b.dims))
            }
        };
        if better {
            best = Some(fit);
        }
    }
    match best {
        Some(b) => Ok(Selection {
            best: b.clone(),
            table,
        }),
        None => Err(MltaError::AllStartsFailed(
            table
                .iter()
                .filter_map(|c| c.fit.as_ref().err().map(|e| format!("{:?}: {e}", c.dims)))
                .collect(),
        )),
    }
}

/// `bic_table.csv`: `G,D,Q,loglik,bic,converged,n_params`; failed cells
/// carry `NA`.
pub fn bic_table_csv(table: &[GridCell]) -> String {
    let mut out = String::from("G,D,Q,loglik,bic,converged,n_params\n");
    for c in table {
        let (ll, bic, conv) = match &c.fit {
            Ok(f) => (f.loglik.to_string(), f.bic.to_string(), f.converged.to_string()),
            Err(_) => ("NA".into(), "NA".into(), "false".into()),
        };
        out.push_str(&format!(
            "{},{},{},{ll},{bic},{conv},{}\n",
            c.dims.g, c.dims.d, c.dims.q, c.n_params
        ));
    }
    out
}

pub fn write_bic_table(table: &[GridCell], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), bic_table_csv(table).as_bytes())
}
