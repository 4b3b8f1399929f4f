//! A two-layer conv net on a tape: forward, backward, and a finite-difference
//! check of the first layer's weight gradient.
//!
//!     cargo run -p adar-tensor --example autodiff

use adar_tensor::{finite_difference_check, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> adar_tensor::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::<f64>::randn([2, 3, 8, 8], 0.0, 1.0, &mut rng);
    let w1 = Tensor::<f64>::randn([4, 3, 3, 3], 0.0, 0.3, &mut rng);
    let w2 = Tensor::<f64>::randn([4, 3, 4, 4], 0.0, 0.3, &mut rng);

    let net = |t: &mut Tape<f64>, w: adar_tensor::Var| -> adar_tensor::Result<adar_tensor::Var> {
        let xv = t.constant(x.clone());
        let h = t.conv2d(xv, w, None, 2, 1)?;
        let h = t.relu(h);
        let w2v = t.constant(w2.clone());
        let y = t.conv_transpose2d(h, w2v, None, 2, 1)?;
        let y = t.tanh(y);
        let d = t.sub(y, xv)?;
        let d = t.square(d);
        Ok(t.mean(d))
    };

    let mut tape = Tape::new();
    let w = tape.leaf(w1.clone());
    let loss = net(&mut tape, w)?;
    tape.backward(loss)?;
    let g = tape.grad(w).expect("leaf has a gradient");
    println!("loss {:.6}", tape.value(loss).item());
    println!("|dL/dw1| = {:.6}", g.data().iter().map(|v| v * v).sum::<f64>().sqrt());

    let check = finite_difference_check(net, &w1, 1e-6)?;
    println!(
        "finite differences: max relative error {:.2e} at index {}",
        check.max_relative_error, check.worst_index
    );
    Ok(())
}
