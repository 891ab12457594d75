//! Empirical polynomial-degree measurement.
//!
//! With attention frozen to uniform averaging and an identity activation, the
//! whole network is a polynomial in the input features. Restricting to a line
//! x + t d makes every logit a univariate polynomial in t, whose degree falls
//! out of repeated finite differencing on an equally spaced grid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::DirectedGraph;
use crate::layers::{ForwardOpts, Sigma};
use crate::model::GraphModel;
use crate::tensor::{Tape, Tensor, TensorError};

/// Relative magnitude below which a difference order counts as vanished.
pub const DEGREE_TOL: f64 = 1e-6;

const GRID_STEP: f64 = 0.5;

#[derive(Debug, Error)]
pub enum PolycheckError {
    #[error("degree measurement needs frozen attention, eval mode and identity sigma")]
    HarnessInvalid,
    #[error("direction shape {dir:?} does not match features {x:?}")]
    DirectionShape { dir: (usize, usize), x: (usize, usize) },
    #[error("no difference order up to {max_order} vanished; degree exceeds the claim")]
    DegreeUnresolved { max_order: usize },
    #[error("tensor error: {0}")]
    Tensor(#[from] TensorError),
}

pub fn harness_opts() -> ForwardOpts {
    ForwardOpts {
        train: false,
        requires_grad: false,
        frozen_attention: true,
    }
}

/// Measure the polynomial degree of `model` along `direction`, defined as the
/// smallest k whose (k+1)-th finite difference vanishes below [`DEGREE_TOL`]
/// relative to the sampled magnitude, maximized over all output coordinates.
///
/// `max_degree_claim` sizes the grid; a model exceeding it is an error, not a
/// large return value.
pub fn polynomial_degree_check(
    model: &GraphModel,
    g: &DirectedGraph,
    x: &Tensor,
    direction: &Tensor,
    max_degree_claim: usize,
    opts: &ForwardOpts,
) -> Result<usize, PolycheckError> {
    if !opts.frozen_attention || opts.train || model.config.sigma != Sigma::Identity {
        return Err(PolycheckError::HarnessInvalid);
    }
    if direction.shape() != x.shape() {
        return Err(PolycheckError::DirectionShape { dir: direction.shape(), x: x.shape() });
    }

    let grid_points = max_degree_claim + 3;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    // samples[j] holds every logit coordinate at t = j * GRID_STEP.
    let mut samples: Vec<Vec<f64>> = Vec::with_capacity(grid_points);
    for j in 0..grid_points {
        let t = j as f64 * GRID_STEP;
        let mut shifted = x.clone();
        for (s, d) in shifted.data_mut().iter_mut().zip(direction.data()) {
            *s += t * d;
        }
        let mut tape = Tape::new();
        let (logits, _) = model.forward(&mut tape, g, &shifted, opts, &mut rng)?;
        samples.push(tape.value(logits).data().to_vec());
    }

    let scale = samples
        .iter()
        .flat_map(|row| row.iter().map(|v| v.abs()))
        .fold(0.0_f64, f64::max)
        .max(1e-12);

    // diffs[j] starts as f(t_j) per coordinate; each pass replaces it with
    // the next-order forward difference, losing one grid point.
    let mut diffs = samples;
    for order in 1..grid_points {
        for j in 0..grid_points - order {
            for c in 0..diffs[j].len() {
                diffs[j][c] = diffs[j + 1][c] - diffs[j][c];
            }
        }
        diffs.pop();
        let max_abs = diffs
            .iter()
            .flat_map(|row| row.iter().map(|v| v.abs()))
            .fold(0.0_f64, f64::max);
        if max_abs / scale < DEGREE_TOL {
            return Ok(order - 1);
        }
    }
    Err(PolycheckError::DegreeUnresolved { max_order: grid_points - 1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Sigma;
    use crate::model::{Blocks, GraphModel, ModelConfig, ModelKind};
    use crate::testsupport::{random_graph, random_tensor};
    use rand_chacha::ChaCha8Rng;

    fn harness_model(kind: ModelKind, layers: usize, seed: u64) -> GraphModel {
        let config = ModelConfig {
            kind,
            in_dim: 4,
            hidden: 8,
            out_dim: 3,
            layers,
            heads: 1,
            sigma: Sigma::Identity,
            dropout: 0.0,
        };
        GraphModel::new(config, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn setup(seed: u64) -> (crate::graph::DirectedGraph, Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(10, 0.3, &mut rng);
        let x = random_tensor(10, 4, &mut rng);
        let dir = random_tensor(10, 4, &mut rng);
        (g, x, dir)
    }

    #[test]
    fn gcn_measures_degree_one() {
        let (g, x, dir) = setup(1);
        let model = harness_model(ModelKind::Gcn, 2, 2);
        let deg = polynomial_degree_check(&model, &g, &x, &dir, 4, &harness_opts()).unwrap();
        assert_eq!(deg, 1);
    }

    #[test]
    fn poly_one_layer_measures_degree_two() {
        let (g, x, dir) = setup(3);
        let model = harness_model(ModelKind::Poly, 1, 4);
        let deg = polynomial_degree_check(&model, &g, &x, &dir, 2, &harness_opts()).unwrap();
        assert_eq!(deg, 2);
    }

    #[test]
    fn poly_two_layers_within_doubling_bound() {
        let (g, x, dir) = setup(5);
        for kind in [ModelKind::Poly, ModelKind::DirPoly] {
            let model = harness_model(kind, 2, 6);
            let deg = polynomial_degree_check(&model, &g, &x, &dir, 4, &harness_opts()).unwrap();
            assert!(deg <= 4, "kind {kind} measured {deg}");
            assert!(deg >= 2, "kind {kind} measured {deg}");
        }
    }

    #[test]
    fn saturated_beta_collapses_to_linear() {
        let (g, x, dir) = setup(7);
        let mut model = harness_model(ModelKind::Poly, 1, 8);
        if let Blocks::Poly(bs) = &mut model.blocks {
            for b in bs {
                b.beta_raw = Tensor::scalar(30.0);
            }
        }
        let deg = polynomial_degree_check(&model, &g, &x, &dir, 2, &harness_opts()).unwrap();
        assert_eq!(deg, 1);
    }

    #[test]
    fn rejects_invalid_harness() {
        let (g, x, dir) = setup(9);
        let model = harness_model(ModelKind::Poly, 1, 10);
        let mut thawed = harness_opts();
        thawed.frozen_attention = false;
        assert!(matches!(
            polynomial_degree_check(&model, &g, &x, &dir, 2, &thawed),
            Err(PolycheckError::HarnessInvalid)
        ));

        let mut relu = harness_model(ModelKind::Poly, 1, 10);
        relu.config.sigma = Sigma::Relu;
        assert!(matches!(
            polynomial_degree_check(&relu, &g, &x, &dir, 2, &harness_opts()),
            Err(PolycheckError::HarnessInvalid)
        ));

        let bad_dir = Tensor::zeros(3, 3);
        assert!(matches!(
            polynomial_degree_check(&model, &g, &x, &bad_dir, 2, &harness_opts()),
            Err(PolycheckError::DirectionShape { .. })
        ));
    }

    #[test]
    fn degree_beyond_grid_is_an_error() {
        let (g, x, dir) = setup(11);
        let model = harness_model(ModelKind::Poly, 2, 12);
        // A degree-4 network measured against a claim of 1 cannot resolve.
        let res = polynomial_degree_check(&model, &g, &x, &dir, 1, &harness_opts());
        assert!(matches!(res, Err(PolycheckError::DegreeUnresolved { .. })));
    }
}
