use regicp::sim::generate_dataset;
use serde::Serialize;

use crate::{create_dir, Layout, Result, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerateSummary {
    pub count: usize,
    pub input_dim: usize,
    pub label_min: f64,
    pub label_max: f64,
}

/// Renders the training dataset and writes it with its CSV label index.
pub fn generate(cfg: &RunConfig) -> Result<GenerateSummary> {
    cfg.validate()?;
    let ds = generate_dataset(&cfg.dataset_config(cfg.dataset.count, cfg.stream("data")))?;
    let layout = Layout::new(&cfg.out);
    create_dir(&layout.root)?;
    ds.save(&layout.dataset(), &layout.dataset_index())?;
    let labels = ds.examples.iter().map(|e| e.y);
    Ok(GenerateSummary {
        count: ds.len(),
        input_dim: ds.examples[0].x.len(),
        label_min: labels.clone().fold(f64::INFINITY, f64::min),
        label_max: labels.fold(f64::NEG_INFINITY, f64::max),
    })
}
