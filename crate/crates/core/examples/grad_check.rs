//! Reverse-mode gradients of a two-layer elu+1 network checked against
//! central differences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use patchbook::autodiff::{grad_check, Linear, ParamStore, Tensor};

fn main() -> patchbook::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let first = Linear::new(&mut store, "first", 3, 8, &mut rng);
    let second = Linear::new(&mut store, "second", 8, 1, &mut rng);
    let input = Tensor::from_rows(&[[0.1, -0.4, 0.7], [1.2, 0.3, -0.5], [-0.9, 0.8, 0.05]])?;

    let report = grad_check(&store, 1e-5, |tape, bound| {
        let x = tape.constant(input.clone())?;
        let h = first.forward(tape, bound, x)?;
        let h = tape.elu_plus_one(h)?;
        let y = second.forward(tape, bound, h)?;
        tape.sum_all(y)
    })?;
    println!("{} components, max relative error {:.2e}", report.components, report.max_rel_error);
    Ok(())
}
