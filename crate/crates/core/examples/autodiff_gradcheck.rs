//! Building a small computation on the tape, reading gradients, and checking them
//! against central differences.
//!
//! ```text
//! cargo run --example autodiff_gradcheck
//! ```

use llie::tensor_core::{gradient_check, ConvGeometry};
use llie::{Graph, Result, Shape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::uniform(Shape::new(2, 3, 6, 6), 0.0, 1.0, &mut rng);
    let w = Tensor::uniform(Shape::new(4, 3, 3, 3), -0.5, 0.5, &mut rng);

    // mean(tanh(conv(x, w))^2)
    let f = |g: &mut Graph, x| {
        let wv = g.constant(w.clone());
        let y = g.conv2d(x, wv, None, ConvGeometry::same(1))?;
        let y = g.tanh(y)?;
        let y = g.square(y)?;
        g.mean_all(y)
    };

    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let out = f(&mut g, xv)?;
    let grads = g.backward(out)?;
    println!("value {:.6}, tape of {} nodes, |grad|max {:.3e}", g.scalar(out)?, g.len(), grads.wrt(xv).max_abs());

    let report = gradient_check(f, &x)?;
    println!(
        "gradient check over {} coordinates: max relative error {:.2e}",
        report.coordinates, report.max_relative_error
    );

    // a deliberately wrong gradient is caught
    let wrong = llie::tensor_core::gradcheck::compare_gradients(
        |args| {
            let mut g = Graph::new();
            let v = g.constant(args[0].clone());
            let o = f(&mut g, v)?;
            g.scalar(o)
        },
        std::slice::from_ref(&x),
        &[grads.wrt(xv).scale(2.0)],
    )?;
    println!("doubled gradient: max relative error {:.3}", wrong.max_relative_error);
    Ok(())
}

fn main() -> Result<()> {
    run_example()
}
