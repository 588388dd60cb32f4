//! Two-dimensional PCA projection of per-timestep observations.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dataset::BatchDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub x: f64,
    pub y: f64,
    pub source: String,
}

/// Fit a 2-component PCA on the union of all observations and project each.
/// Each axis is signed so its largest-magnitude loading is positive.
pub fn project2d(real: &BatchDataset, synthetic: &BatchDataset) -> Result<Vec<ProjectedPoint>> {
    let schema = real.visible_schema()?;
    if schema != synthetic.visible_schema()? {
        return Err(Error::config("projection needs datasets with the same visible schema"));
    }
    let rows: Vec<(&Vec<f64>, &str)> = real
        .trajectories
        .iter()
        .flat_map(|t| t.observations.iter().map(|x| (x, "real")))
        .chain(synthetic.trajectories.iter().flat_map(|t| t.observations.iter().map(|x| (x, "synthetic"))))
        .collect();
    if rows.len() < 3 {
        return Err(Error::Config(format!("projection needs at least 3 points, got {}", rows.len())));
    }
    let d = schema.temporal_space.dim();
    let n = rows.len();
    let mut mean = vec![0.0; d];
    for (x, _) in &rows {
        for k in 0..d {
            mean[k] += x[k] / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, d, |i, k| rows[i].0[k] - mean[k]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let axis = |j: usize| -> Vec<f64> {
        let Some(&c) = order.get(j) else { return vec![0.0; d] };
        let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        let big = v.iter().copied().fold(0.0, |m: f64, x| if x.abs() > m.abs() { x } else { m });
        if big < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    let (a1, a2) = (axis(0), axis(1));
    Ok((0..n)
        .map(|i| {
            let row = centered.row(i);
            ProjectedPoint {
                x: row.iter().zip(&a1).map(|(r, w)| r * w).sum(),
                y: row.iter().zip(&a2).map(|(r, w)| r * w).sum(),
                source: rows[i].1.to_string(),
            }
        })
        .collect())
}

pub fn write_projection_csv<W: Write>(points: &[ProjectedPoint], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for p in points {
        out.serialize(p)?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_projection_csv(points: &[ProjectedPoint], path: impl AsRef<Path>) -> Result<()> {
    write_projection_csv(points, std::fs::File::create(path)?)
}
