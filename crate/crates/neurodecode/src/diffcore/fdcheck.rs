//! Central finite-difference verification of analytic gradients.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::util::seeded_rng;

use super::graph::{Graph, TensorMap};
use super::tensor::Tensor;

/// Denominator floor for the relative error, guarding 0/0.
pub const REL_ERR_FLOOR: f64 = 1e-12;

/// Per-parameter maximum relative gradient error from a finite-difference probe.
///
/// For each parameter tensor the relative error is
/// `max_i |analytic_i − numeric_i| / max(max_i |analytic_i|, max_i |numeric_i|, floor)`,
/// i.e. the worst component deviation measured against the gradient's own
/// scale. The floor guards all-zero gradients against 0/0.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub per_param: BTreeMap<String, f64>,
    pub tolerance: f64,
    pub floor: f64,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.per_param.values().cloned().fold(0.0, f64::max)
    }

    pub fn passes(&self) -> bool {
        self.max_rel_err() < self.tolerance
    }
}

/// Options for [`finite_difference_check`].
#[derive(Debug, Clone, Copy)]
pub struct FdOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Pass/fail threshold recorded in the report.
    pub tolerance: f64,
    /// Maximum probed components per parameter tensor (`None` probes all).
    pub max_probes_per_tensor: Option<usize>,
    /// Seed for probe-site sampling when subsampling.
    pub seed: u64,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            eps: 1e-5,
            tolerance: 1e-6,
            max_probes_per_tensor: None,
            seed: 0,
        }
    }
}

/// Compare analytic gradients of a scalar-output graph against central
/// finite differences, probing every parameter tensor.
pub fn finite_difference_check(
    graph: &Graph,
    inputs: &TensorMap,
    params: &TensorMap,
    opts: FdOptions,
) -> Result<GradReport> {
    let outputs = graph.outputs();
    if outputs.len() != 1 {
        return Err(Error::Graph(format!(
            "finite-difference check requires exactly one output, got {}",
            outputs.len()
        )));
    }
    let out_name = outputs[0].0.clone();

    let exec = graph.forward(inputs, params)?;
    if graph.output(&exec, &out_name)?.numel() != 1 {
        return Err(Error::Graph(
            "finite-difference check requires a scalar output".into(),
        ));
    }
    let mut cot = TensorMap::new();
    cot.insert(out_name.clone(), Tensor::scalar(1.0));
    let grads = graph.backward(&exec, &cot)?;

    let mut rng = seeded_rng(opts.seed);
    let mut per_param = BTreeMap::new();
    for (name, shape) in graph.param_shapes() {
        let base = params
            .get(&name)
            .ok_or_else(|| Error::MissingTensor(format!("param '{name}'")))?;
        let numel: usize = shape.iter().product();
        let probe_sites: Vec<usize> = match opts.max_probes_per_tensor {
            Some(k) if k < numel => {
                let mut sites: Vec<usize> = (0..k).map(|_| rng.random_range(0..numel)).collect();
                sites.sort_unstable();
                sites.dedup();
                sites
            }
            _ => (0..numel).collect(),
        };
        let analytic = grads.params.get(&name);
        let mut max_dev = 0.0f64;
        let mut max_a = 0.0f64;
        let mut max_n = 0.0f64;
        for site in probe_sites {
            let mut plus = params.clone();
            plus.get_mut(&name).unwrap().data_mut()[site] = base.data()[site] + opts.eps;
            let f_plus = graph
                .output(&graph.forward(inputs, &plus)?, &out_name)?
                .item();
            let mut minus = params.clone();
            minus.get_mut(&name).unwrap().data_mut()[site] = base.data()[site] - opts.eps;
            let f_minus = graph
                .output(&graph.forward(inputs, &minus)?, &out_name)?
                .item();
            let numeric = (f_plus - f_minus) / (2.0 * opts.eps);
            let a = analytic.map_or(0.0, |g| g.data()[site]);
            max_dev = max_dev.max((a - numeric).abs());
            max_a = max_a.max(a.abs());
            max_n = max_n.max(numeric.abs());
        }
        let rel = max_dev / max_a.max(max_n).max(REL_ERR_FLOOR);
        per_param.insert(name, rel);
    }
    Ok(GradReport {
        per_param,
        tolerance: opts.tolerance,
        floor: REL_ERR_FLOOR,
    })
}
