// SPDX-License-Identifier: MIT OR Apache-2.0

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Case;
use crate::error::{Result, WasdError};
use crate::search::{explain, ExplainParams};

/// Default scaling grid for both WASD and the top-k baselines.
pub const LAMBDA_GRID: [f64; 6] = [1.0, 2.0, 4.0, 6.5, 8.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub lambda: f64,
    pub mean_precision: f64,
    pub mean_size: f64,
    pub reached_tau: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best_lambda: f64,
    pub rows: Vec<GridRow>,
}

/// Run [`explain`] for every `(lambda, case)` and keep the lambda with the
/// highest mean final precision; ties go to the smaller mean rule size, then
/// the smaller lambda.
pub fn grid_search_lambda(
    cases: &[Case<'_>],
    grid: &[f64],
    params: &ExplainParams,
) -> Result<GridSearchResult> {
    if grid.is_empty() {
        return Err(WasdError::InvalidConfig("lambda grid is empty".into()));
    }
    if cases.is_empty() {
        return Err(WasdError::InvalidConfig(
            "grid search needs at least one prompt".into(),
        ));
    }
    let rows = grid
        .iter()
        .map(|&lambda| {
            let per_case = cases
                .par_iter()
                .enumerate()
                .map(|(i, case)| {
                    let p = ExplainParams {
                        lambda,
                        ..params.clone()
                    };
                    let e = explain(case.model, case.prompt, &super::case_params(&p, i))?;
                    Ok((
                        e.result.precision.value,
                        e.result.rule.len(),
                        e.result.reached_tau,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let n = per_case.len() as f64;
            Ok(GridRow {
                lambda,
                mean_precision: per_case.iter().map(|c| c.0).sum::<f64>() / n,
                mean_size: per_case.iter().map(|c| c.1 as f64).sum::<f64>() / n,
                reached_tau: per_case.iter().filter(|c| c.2).count(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = rows
        .iter()
        .min_by(|a, b| {
            b.mean_precision
                .total_cmp(&a.mean_precision)
                .then(a.mean_size.total_cmp(&b.mean_size))
                .then(a.lambda.total_cmp(&b.lambda))
        })
        .expect("grid is non-empty");
    Ok(GridSearchResult {
        best_lambda: best.lambda,
        rows,
    })
}
