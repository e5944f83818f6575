use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, TensorError, Var};

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Max relative error between backward and central differences for a
/// scalar function of one tensor.
pub fn gradient_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var, TensorError>,
{
    gradient_check_many(|g, xs| f(g, xs[0]), std::slice::from_ref(x), h)
}

/// Same as [`gradient_check`] over every coordinate of several inputs.
pub fn gradient_check_many<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>,
{
    gradient_check_sampled(f, inputs, h, usize::MAX, 0)
}

/// Checks at most `per_input` coordinates of each input. When sampling,
/// half the budget goes to coordinates with a nonzero analytic gradient
/// (so sparse gradients such as embedding tables are actually exercised)
/// and the rest is drawn uniformly.
pub fn gradient_check_sampled<F>(
    f: F,
    inputs: &[Tensor<f64>],
    h: f64,
    per_input: usize,
    seed: u64,
) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| g.grad(v).expect("param grad")).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        for j in pick_coordinates(grad.data(), per_input, &mut rng) {
            let orig = probe[i].data()[j];
            probe[i].data_mut()[j] = orig + h;
            let plus = eval(&probe)?;
            probe[i].data_mut()[j] = orig - h;
            let minus = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(grad.data()[j], numeric));
        }
    }
    Ok(worst)
}

fn pick_coordinates(grad: &[f64], budget: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if grad.len() <= budget {
        return (0..grad.len()).collect();
    }
    let mut nonzero: Vec<usize> = (0..grad.len()).filter(|&j| grad[j] != 0.0).collect();
    nonzero.shuffle(rng);
    let mut chosen: Vec<usize> = nonzero.into_iter().take(budget / 2).collect();
    let mut rest: Vec<usize> = (0..grad.len()).filter(|j| !chosen.contains(j)).collect();
    rest.shuffle(rng);
    chosen.extend(rest.into_iter().take(budget - chosen.len()));
    chosen
}
