use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::dataset::LayerId;
use crate::plot::Heatmap;
use crate::probes::{ProbeResult, ProbeType};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub test_r2: f64,
    /// The result the value was taken from.
    pub source: ProbeType,
    /// Index into the input slice.
    pub index: usize,
}

/// Best test R² per `(layer, K)`; rows follow `layers`, columns `ks`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerKGrid {
    pub layers: Vec<LayerId>,
    pub ks: Vec<usize>,
    pub cells: Vec<Vec<Option<GridCell>>>,
}

impl LayerKGrid {
    pub fn get(&self, layer: LayerId, k: usize) -> Option<&GridCell> {
        let r = self.layers.iter().position(|&l| l == layer)?;
        let c = self.ks.iter().position(|&x| x == k)?;
        self.cells[r][c].as_ref()
    }

    /// `(layer, K, R²)` of the largest cell; the first in row-major order wins ties.
    pub fn argmax(&self) -> Option<(LayerId, usize, f64)> {
        let mut best: Option<(LayerId, usize, f64)> = None;
        for (r, row) in self.cells.iter().enumerate() {
            for (c, cell) in row.iter().enumerate() {
                if let Some(cell) = cell {
                    if best.is_none_or(|b| cell.test_r2 > b.2) {
                        best = Some((self.layers[r], self.ks[c], cell.test_r2));
                    }
                }
            }
        }
        best
    }
}

/// Maximum test R² over every probe kind and activation-reading mode for
/// each `(layer, K)`. Results without a layer (embedding baselines) do not
/// enter the grid. Earlier results win exact ties.
pub fn layer_k_grid(results: &[ProbeResult]) -> Result<LayerKGrid, AnalysisError> {
    let mut best: BTreeMap<(LayerId, usize), GridCell> = BTreeMap::new();
    for (index, r) in results.iter().enumerate() {
        let Some(layer) = r.layer() else { continue };
        if !r.test_r2.is_finite() {
            continue;
        }
        let entry = best.entry((layer, r.k));
        let cell = GridCell {
            test_r2: r.test_r2,
            source: r.probe_type,
            index,
        };
        entry
            .and_modify(|c| {
                if cell.test_r2 > c.test_r2 {
                    *c = cell.clone();
                }
            })
            .or_insert_with(|| cell.clone());
    }
    if best.is_empty() {
        return Err(AnalysisError::Empty("no layer-resolved probe results".into()));
    }
    let mut layers: Vec<LayerId> = best.keys().map(|k| k.0).collect();
    layers.dedup();
    let mut ks: Vec<usize> = best.keys().map(|k| k.1).collect();
    ks.sort_unstable();
    ks.dedup();
    let cells = layers
        .iter()
        .map(|&l| ks.iter().map(|&k| best.get(&(l, k)).cloned()).collect())
        .collect();
    Ok(LayerKGrid { layers, ks, cells })
}

pub fn write_grid_csv<W: Write>(out: W, grid: &LayerKGrid) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["layer", "K", "best_test_r2", "probe_type"])?;
    for (r, &layer) in grid.layers.iter().enumerate() {
        for (c, &k) in grid.ks.iter().enumerate() {
            if let Some(cell) = &grid.cells[r][c] {
                w.write_record([
                    layer.to_string(),
                    k.to_string(),
                    format!("{}", cell.test_r2),
                    cell.source.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_grid_svg(path: &Path, grid: &LayerKGrid, title: &str) -> Result<(), AnalysisError> {
    let map = Heatmap {
        title: title.to_string(),
        row_label: "layer".into(),
        col_label: "K".into(),
        row_names: grid.layers.iter().map(|l| l.to_string()).collect(),
        col_names: grid.ks.iter().map(|k| k.to_string()).collect(),
        values: grid
            .cells
            .iter()
            .map(|row| row.iter().map(|c| c.as_ref().map_or(f64::NAN, |c| c.test_r2)).collect())
            .collect(),
        upsample: 12,
    };
    std::fs::write(path, map.to_svg())?;
    Ok(())
}
