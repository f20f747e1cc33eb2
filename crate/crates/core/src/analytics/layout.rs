//! Stress majorization (SMACOF) with weights `d^-2`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AnalyticsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutOptions {
    pub dims: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for LayoutOptions {
    fn default() -> Self {
        LayoutOptions {
            dims: 2,
            max_iter: 300,
            tol: 1e-9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphLayout {
    pub dims: usize,
    pub nodes: Vec<String>,
    pub coords: Vec<Vec<f64>>,
    pub final_stress: f64,
    pub iterations: usize,
    /// Stress of the initial configuration followed by the stress after
    /// each iteration.
    pub stress_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutNode {
    pub id: String,
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
}

/// Exported form `{dims, nodes: [{id, x, y[, z]}], final_stress}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutExport {
    pub dims: usize,
    pub nodes: Vec<LayoutNode>,
    pub final_stress: f64,
}

impl GraphLayout {
    pub fn export(&self) -> LayoutExport {
        LayoutExport {
            dims: self.dims,
            nodes: self
                .nodes
                .iter()
                .zip(&self.coords)
                .map(|(id, p)| LayoutNode {
                    id: id.clone(),
                    x: p[0],
                    y: p[1],
                    z: p.get(2).copied(),
                })
                .collect(),
            final_stress: self.final_stress,
        }
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        dist(&self.coords[a], &self.coords[b])
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn check(d: &[Vec<f64>], n: usize) -> Result<(), AnalyticsError> {
    let bad = |m: String| Err(AnalyticsError::InvalidDissimilarity(m));
    if d.len() != n || d.iter().any(|r| r.len() != n) {
        return bad(format!("expected a {n}×{n} matrix"));
    }
    for i in 0..n {
        if d[i][i] != 0.0 {
            return bad(format!("diagonal entry {i} is not zero"));
        }
        for j in 0..n {
            if !d[i][j].is_finite() || d[i][j] < 0.0 {
                return bad(format!("entry ({i},{j}) is not a finite non-negative number"));
            }
            if d[i][j] != d[j][i] {
                return bad(format!("entries ({i},{j}) and ({j},{i}) differ"));
            }
        }
    }
    Ok(())
}

fn stress(x: &DMatrix<f64>, d: &[Vec<f64>], w: &DMatrix<f64>) -> f64 {
    let n = d.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            if w[(i, j)] > 0.0 {
                let e = (x.row(i) - x.row(j)).norm();
                s += w[(i, j)] * (e - d[i][j]).powi(2);
            }
        }
    }
    s
}

type Run = (DMatrix<f64>, f64, usize, Vec<f64>);

fn smacof(mut x: DMatrix<f64>, d: &[Vec<f64>], w: &DMatrix<f64>, v_plus: &DMatrix<f64>, options: &LayoutOptions) -> Run {
    let n = d.len();
    let mut sigma = stress(&x, d, w);
    let mut trace = vec![sigma];
    let mut iterations = 0;
    while iterations < options.max_iter && sigma > 1e-15 {
        let mut b = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j && w[(i, j)] > 0.0 {
                    let e = (x.row(i) - x.row(j)).norm();
                    if e > 0.0 {
                        b[(i, j)] = -w[(i, j)] * d[i][j] / e;
                    }
                }
            }
            b[(i, i)] = -b.row(i).sum();
        }
        let candidate = v_plus * (b * &x);
        let next = stress(&candidate, d, w);
        if next > sigma {
            // only rounding can raise stress; we are at the fixed point
            break;
        }
        x = candidate;
        iterations += 1;
        trace.push(next);
        let rel = (sigma - next) / sigma;
        sigma = next;
        if rel < options.tol {
            break;
        }
    }
    (x, sigma, iterations, trace)
}

/// Classical (Torgerson) scaling: the top eigenvectors of the doubly
/// centred squared dissimilarities. `None` when it collapses to a point.
fn classical_start(d: &[Vec<f64>], dims: usize) -> Option<DMatrix<f64>> {
    let n = d.len();
    let sq = DMatrix::from_fn(n, n, |i, j| d[i][j] * d[i][j]);
    let j = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    let b = -0.5 * &j * sq * &j;
    let eig = b.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].partial_cmp(&eig.eigenvalues[*a]).expect("finite eigenvalues").then(a.cmp(b)));
    let mut x = DMatrix::zeros(n, dims);
    for (c, &k) in order.iter().take(dims).enumerate() {
        let scale = eig.eigenvalues[k].max(0.0).sqrt();
        for i in 0..n {
            x[(i, c)] = eig.eigenvectors[(i, k)] * scale;
        }
    }
    (x.norm() > 1e-12).then_some(x)
}

/// Lays out `nodes` so that Euclidean distances approximate `dissimilarity`.
///
/// Each iteration applies the Guttman transform `X ← V⁺ B(X) X`, which never
/// increases stress. Iteration stops after `max_iter` steps, once the
/// relative stress decrease falls below `tol`, or when stress reaches zero.
/// Two runs are made, one from seeded uniform coordinates in the unit cube
/// and one from classical scaling, and the lower final stress wins.
pub fn layout(
    nodes: &[String],
    dissimilarity: &[Vec<f64>],
    options: LayoutOptions,
) -> Result<GraphLayout, AnalyticsError> {
    let n = nodes.len();
    let dims = options.dims;
    if !(dims == 2 || dims == 3) {
        return Err(AnalyticsError::InvalidDissimilarity(format!("dims must be 2 or 3, got {dims}")));
    }
    check(dissimilarity, n)?;
    if n > 1 && dissimilarity.iter().flatten().all(|v| *v == 0.0) {
        return Err(AnalyticsError::DegenerateInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let x = DMatrix::from_fn(n, dims, |_, _| rng.gen::<f64>());
    if n <= 1 {
        return Ok(GraphLayout {
            dims,
            nodes: nodes.to_vec(),
            coords: (0..n).map(|_| vec![0.0; dims]).collect(),
            final_stress: 0.0,
            iterations: 0,
            stress_trace: vec![0.0],
        });
    }

    let w = DMatrix::from_fn(n, n, |i, j| {
        let d = dissimilarity[i][j];
        if i == j || d == 0.0 {
            0.0
        } else {
            d.powi(-2)
        }
    });
    let mut v = -w.clone();
    for i in 0..n {
        v[(i, i)] = w.row(i).sum();
    }
    let v_plus = v
        .pseudo_inverse(1e-10)
        .map_err(|e| AnalyticsError::InvalidDissimilarity(e.to_string()))?;

    let random = smacof(x, dissimilarity, &w, &v_plus, &options);
    let (x, sigma, iterations, trace) = match classical_start(dissimilarity, dims) {
        Some(x0) => {
            let classical = smacof(x0, dissimilarity, &w, &v_plus, &options);
            if classical.1 < random.1 {
                classical
            } else {
                random
            }
        }
        None => random,
    };
    let mut x = x;
    // centre the configuration
    let mean = x.row_mean();
    for mut row in x.row_iter_mut() {
        row -= &mean;
    }
    Ok(GraphLayout {
        dims,
        nodes: nodes.to_vec(),
        coords: x.row_iter().map(|r| r.iter().copied().collect()).collect(),
        final_stress: sigma,
        iterations,
        stress_trace: trace,
    })
}
