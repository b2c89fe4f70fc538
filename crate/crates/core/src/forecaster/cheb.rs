//! Reference forecaster: one linear Chebyshev spatio-temporal layer.
//!
//! For horizon step `h` the prediction is
//!
//! ```text
//! ŷ[h] = Σ_k Σ_τ θ[h][k][τ] · (T_k(L̃) X[τ]) + b[h]
//! ```
//!
//! with `X[τ]` the node vector at lookback step `τ` and `T_k` the Chebyshev
//! polynomials of the scaled Laplacian `L̃ = 2L/λ_max − I`. Coefficients are
//! shared by all nodes, so the parameter count depends only on
//! `(K, T, T′)` and not on the subgraph a cloudlet trains on.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Forecaster, ForecasterParams, Sample, ShapeTag};
use crate::error::{Error, Result};
use crate::graph::WeightedGraph;

pub const MODEL_NAME: &str = "cheb";

const POWER_TOL: f64 = 1e-9;
const POWER_MAX_ITER: usize = 10_000;

/// `L = I − D^{-1/2} W D^{-1/2}`; rows of isolated nodes are zero.
pub fn normalized_laplacian(adjacency: &DMatrix<f64>) -> DMatrix<f64> {
    let n = adjacency.nrows();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = adjacency.row(i).sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| {
        let off = adjacency[(i, j)] * inv_sqrt[i] * inv_sqrt[j];
        if i == j {
            if inv_sqrt[i] > 0.0 {
                1.0 - off
            } else {
                0.0
            }
        } else {
            -off
        }
    })
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix by power
/// iteration from a fixed pseudo-random start.
pub fn largest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_1a4d);
    let mut v = DVector::from_fn(n, |_, _| rng.gen_range(0.5..1.5));
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let w = m * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - lambda).abs() <= POWER_TOL * next.abs().max(1.0) {
            // one more Rayleigh quotient on the normalized iterate
            return (m * &v).dot(&v).max(next);
        }
        lambda = next;
    }
    lambda
}

/// `(L̃, λ_max)` for a weighted graph. An edgeless graph uses `λ_max = 2`.
pub fn scaled_laplacian(graph: &WeightedGraph) -> (DMatrix<f64>, f64) {
    let lap = normalized_laplacian(graph.adjacency());
    let mut lambda = largest_eigenvalue(&lap);
    if lambda < 1e-12 {
        lambda = 2.0;
    }
    let n = lap.nrows();
    let scaled = lap * (2.0 / lambda) - DMatrix::identity(n, n);
    (scaled, lambda)
}

/// `[T₀X, T₁X, …, T_{K−1}X]` by the three-term recursion.
pub fn chebyshev_basis(scaled: &DMatrix<f64>, order: usize, x: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    if order == 0 {
        return Err(Error::Shape("Chebyshev order must be at least 1".into()));
    }
    if !scaled.is_square() || scaled.ncols() != x.nrows() {
        return Err(Error::Shape(format!(
            "operator is {}x{}, features have {} rows",
            scaled.nrows(),
            scaled.ncols(),
            x.nrows()
        )));
    }
    let mut basis = Vec::with_capacity(order);
    basis.push(x.clone());
    if order > 1 {
        basis.push(scaled * x);
    }
    for k in 2..order {
        let next = (scaled * &basis[k - 1]) * 2.0 - &basis[k - 2];
        basis.push(next);
    }
    Ok(basis)
}

#[derive(Debug, Clone)]
pub struct ChebModel {
    order: usize,
    lookback: usize,
    horizon: usize,
    scaled_laplacian: DMatrix<f64>,
    lambda_max: f64,
}

impl ChebModel {
    pub fn new(graph: &WeightedGraph, order: usize, lookback: usize, horizon: usize) -> Result<Self> {
        if order == 0 || lookback == 0 || horizon == 0 {
            return Err(Error::Config(format!(
                "order, lookback and horizon must be positive (got {order}, {lookback}, {horizon})"
            )));
        }
        let (scaled_laplacian, lambda_max) = scaled_laplacian(graph);
        Ok(Self {
            order,
            lookback,
            horizon,
            scaled_laplacian,
            lambda_max,
        })
    }

    pub fn shape_for(order: usize, lookback: usize, horizon: usize) -> ShapeTag {
        ShapeTag {
            model: MODEL_NAME.into(),
            order,
            lookback,
            horizon,
            len: horizon * order * lookback + horizon,
        }
    }

    /// Copy-last wiring plus uniform `(-noise, noise)` jitter on every entry.
    pub fn init_params(order: usize, lookback: usize, horizon: usize, noise: f64, seed: u64) -> ForecasterParams {
        let mut p = ForecasterParams::zeros(Self::shape_for(order, lookback, horizon));
        for h in 0..horizon {
            p.theta[coef_index(order, lookback, h, 0, lookback - 1)] = 1.0;
        }
        if noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for x in p.theta.iter_mut() {
                *x += rng.gen_range(-noise..noise);
            }
        }
        p
    }

    pub fn num_nodes(&self) -> usize {
        self.scaled_laplacian.nrows()
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn scaled_laplacian(&self) -> &DMatrix<f64> {
        &self.scaled_laplacian
    }

    fn check(&self, params: &ForecasterParams, input: &DMatrix<f64>) -> Result<()> {
        let expected = Self::shape_for(self.order, self.lookback, self.horizon);
        if params.shape != expected {
            return Err(Error::IncompatibleModels(params.shape.to_string(), expected.to_string()));
        }
        if input.nrows() != self.lookback || input.ncols() != self.num_nodes() {
            return Err(Error::Shape(format!(
                "input is {}x{}, model expects {}x{}",
                input.nrows(),
                input.ncols(),
                self.lookback,
                self.num_nodes()
            )));
        }
        Ok(())
    }

    /// Basis matrices of shape `nodes × lookback`.
    fn features(&self, input: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        chebyshev_basis(&self.scaled_laplacian, self.order, &input.transpose())
            .expect("dimensions checked")
    }

    /// `horizon × lookback` coefficient block for order `k`.
    fn coefficients(&self, params: &ForecasterParams, k: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.horizon, self.lookback, |h, tau| {
            params.theta[coef_index(self.order, self.lookback, h, k, tau)]
        })
    }

    fn bias_index(&self, h: usize) -> usize {
        self.horizon * self.order * self.lookback + h
    }

    fn predict_features(&self, params: &ForecasterParams, features: &[DMatrix<f64>]) -> DMatrix<f64> {
        let n = self.num_nodes();
        let mut out = DMatrix::from_fn(self.horizon, n, |h, _| params.theta[self.bias_index(h)]);
        for (k, z) in features.iter().enumerate() {
            out += self.coefficients(params, k) * z.transpose();
        }
        out
    }
}

pub(crate) fn coef_index(order: usize, lookback: usize, h: usize, k: usize, tau: usize) -> usize {
    (h * order + k) * lookback + tau
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Forecaster for ChebModel {
    fn shape_tag(&self) -> ShapeTag {
        Self::shape_for(self.order, self.lookback, self.horizon)
    }

    fn predict(&self, params: &ForecasterParams, input: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(params, input)?;
        Ok(self.predict_features(params, &self.features(input)))
    }

    fn loss_and_grad(&self, params: &ForecasterParams, batch: &[&Sample]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; params.len()];
        let mut loss = 0.0;
        let mut entries = 0usize;
        for sample in batch {
            self.check(params, &sample.input)?;
            let outputs = sample.target.ncols();
            if sample.target.nrows() != self.horizon || outputs > self.num_nodes() {
                return Err(Error::Shape(format!(
                    "target is {}x{}, model predicts {}x{}",
                    sample.target.nrows(),
                    outputs,
                    self.horizon,
                    self.num_nodes()
                )));
            }
            let features = self.features(&sample.input);
            let pred = self.predict_features(params, &features);
            let residual = pred.columns(0, outputs) - &sample.target;
            loss += residual.iter().map(|r| r.abs()).sum::<f64>();
            entries += residual.len();
            let signs = residual.map(sign);
            for (k, z) in features.iter().enumerate() {
                // horizon × lookback
                let g = &signs * z.rows(0, outputs);
                for h in 0..self.horizon {
                    for tau in 0..self.lookback {
                        grad[coef_index(self.order, self.lookback, h, k, tau)] += g[(h, tau)];
                    }
                }
            }
            for h in 0..self.horizon {
                grad[self.bias_index(h)] += signs.row(h).sum();
            }
        }
        if entries == 0 {
            return Ok((0.0, grad));
        }
        let scale = 1.0 / entries as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        Ok((loss * scale, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_graph(n: usize) -> WeightedGraph {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        WeightedGraph::from_edges(n, &edges).unwrap()
    }

    #[test]
    fn order_one_is_identity() {
        let x = DMatrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64);
        let b = chebyshev_basis(&DMatrix::identity(4, 4), 1, &x).unwrap();
        assert_eq!(b, vec![x]);
    }

    #[test]
    fn zero_operator() {
        let x = DMatrix::from_element(3, 2, 1.5);
        let b = chebyshev_basis(&DMatrix::zeros(3, 3), 2, &x).unwrap();
        assert_eq!(b[0], x);
        assert_eq!(b[1], DMatrix::zeros(3, 2));
        assert!(chebyshev_basis(&DMatrix::zeros(3, 3), 0, &x).is_err());
        assert!(chebyshev_basis(&DMatrix::zeros(2, 2), 2, &x).is_err());
    }

    #[test]
    fn lambda_matches_dense_eigensolver() {
        let g = line_graph(7);
        let lap = normalized_laplacian(g.adjacency());
        let exact = lap.clone().symmetric_eigen().eigenvalues.max();
        assert!((largest_eigenvalue(&lap) - exact).abs() < 1e-7);
        let (scaled, _) = scaled_laplacian(&g);
        let radius = scaled.symmetric_eigen().eigenvalues.abs().max();
        assert!(radius <= 1.0 + 1e-6);
    }

    #[test]
    fn edgeless_graph_falls_back() {
        let g = WeightedGraph::from_edges(3, &[]).unwrap();
        let (scaled, lambda) = scaled_laplacian(&g);
        assert_eq!(lambda, 2.0);
        assert_eq!(scaled, -DMatrix::<f64>::identity(3, 3));
    }

    #[test]
    fn zero_params_predict_zero() {
        let g = line_graph(4);
        let m = ChebModel::new(&g, 3, 12, 3).unwrap();
        let p = ForecasterParams::zeros(m.shape_tag());
        let x = DMatrix::from_fn(12, 4, |t, j| (t + j) as f64 * 0.1);
        assert_eq!(m.predict(&p, &x).unwrap(), DMatrix::zeros(3, 4));
    }

    #[test]
    fn copy_last_is_persistence() {
        let g = line_graph(5);
        let m = ChebModel::new(&g, 3, 12, 6).unwrap();
        let p = ChebModel::init_params(3, 12, 6, 0.0, 0);
        let x = DMatrix::from_fn(12, 5, |t, j| ((t * 7 + j * 3) % 5) as f64 - 2.0);
        let y = m.predict(&p, &x).unwrap();
        for h in 0..6 {
            for j in 0..5 {
                assert!((y[(h, j)] - x[(11, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exact_fit_has_zero_loss_and_grad() {
        let g = line_graph(3);
        let m = ChebModel::new(&g, 2, 4, 2).unwrap();
        let p = ChebModel::init_params(2, 4, 2, 0.0, 0);
        let x = DMatrix::from_fn(4, 3, |t, j| (t as f64) - (j as f64));
        let y = m.predict(&p, &x).unwrap();
        let (loss, grad) = m
            .loss_and_grad(&p, &[&Sample { input: x, target: y.columns(0, 2).into_owned() }])
            .unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn rejects_wrong_shapes() {
        let g = line_graph(3);
        let m = ChebModel::new(&g, 2, 4, 2).unwrap();
        let p = ChebModel::init_params(2, 4, 2, 0.0, 0);
        assert!(matches!(m.predict(&p, &DMatrix::zeros(4, 2)), Err(Error::Shape(_))));
        let other = ChebModel::init_params(3, 4, 2, 0.0, 0);
        assert!(matches!(
            m.predict(&other, &DMatrix::zeros(4, 3)),
            Err(Error::IncompatibleModels(..))
        ));
    }
}
