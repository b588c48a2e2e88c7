use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn projected_loss<F>(f: &F, inputs: &[Tensor], weights: &mut Option<Tensor>) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let shape = tape.shape(out);
    if shape.iter().product::<usize>() == 1 {
        return Ok((tape, vars, out));
    }
    // non-scalar outputs are reduced with fixed random weights so every
    // output element contributes a distinct direction
    let w = weights.get_or_insert_with(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0))
    });
    let w = tape.constant(w.clone());
    let loss = tape.sum(tape.mul(out, w)?);
    Ok((tape, vars, loss))
}

/// Largest discrepancy between analytic and central-difference gradients.
///
/// The error is normwise: `max_i |a_i - n_i| / max_i max(|a_i|, |n_i|)` over all
/// input elements, and 0 when both gradients vanish identically.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(Error::arg("grad_check step must be positive"));
    }
    let mut weights = None;
    let (tape, vars, loss) = projected_loss(&f, inputs, &mut weights)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
        .collect();

    let eval = |ins: &[Tensor], weights: &mut Option<Tensor>| -> Result<f64> {
        let (tape, _, loss) = projected_loss(&f, ins, weights)?;
        tape.item(loss)
    };

    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    let mut work = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = eval(&work, &mut weights)?;
            work[i].data_mut()[j] = orig - h;
            let minus = eval(&work, &mut weights)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[i].data()[j];
            worst = worst.max((a - numeric).abs());
            scale = scale.max(a.abs()).max(numeric.abs());
        }
    }
    if worst == 0.0 {
        return Ok(0.0);
    }
    Ok(worst / scale)
}
