use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, NumericsError, Tensor, Var};

/// Central-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-5;
/// Coordinates sampled per parameter tensor.
pub const GRAD_CHECK_SAMPLES: usize = 24;

fn evaluate<F>(f: &F, params: &[Tensor<f64>]) -> Result<(f64, Graph<f64>, Vec<Var>), NumericsError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, NumericsError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let value = g.value(loss);
    if value.len() != 1 {
        return Err(NumericsError::NotScalar(value.shape().to_vec()));
    }
    let v = value.data()[0];
    if !v.is_finite() {
        return Err(NumericsError::NonFinite(format!("loss {v}")));
    }
    g.backward(loss)?;
    Ok((v, g, vars))
}

/// Compares analytic gradients of the scalar built by `f` against central
/// finite differences on sampled coordinates of every parameter. Returns the
/// largest `|a - n| / max(1e-8, |a| + |n|)`. Graphs are built in evaluation
/// mode, so dropout is off.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], seed: u64) -> Result<f64, NumericsError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, NumericsError>,
{
    let (_, graph, vars) = evaluate(&f, params)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| {
            graph
                .grad(v)
                .map_or_else(|| vec![0.0; p.len()], <[f64]>::to_vec)
        })
        .collect();
    drop(graph);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let picks = index::sample(&mut rng, p.len(), GRAD_CHECK_SAMPLES.min(p.len()));
        for ci in picks {
            let orig = p.data()[ci];
            work[pi].data_mut()[ci] = orig + GRAD_CHECK_STEP;
            let plus = evaluate(&f, &work)?.0;
            work[pi].data_mut()[ci] = orig - GRAD_CHECK_STEP;
            let minus = evaluate(&f, &work)?.0;
            work[pi].data_mut()[ci] = orig;
            let numeric = (plus - minus) / (2.0 * GRAD_CHECK_STEP);
            let a = analytic[pi][ci];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
