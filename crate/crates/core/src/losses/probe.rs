//! Evaluation points for finite-difference checks of the piecewise-linear histogram term.

use rand::Rng;

use crate::losses::histogram::HIST_BINS;
use crate::tensor_core::{Shape, Tensor};

/// Draws a pair at which the histogram loss has a well-defined, nonzero gradient in
/// every coordinate.
///
/// The loss is piecewise linear. It kinks where a value crosses a bin centre and where
/// a bin's predicted and reference masses tie, and its gradient is exactly zero for a
/// value whose two bins sit on the same side of the reference; there a central
/// difference returns only rounding noise (about `ulp(loss) / 2h`), which the relative
/// error cannot tell apart from a wrong gradient. Each prediction value therefore gets
/// its own bin pair `(2j, 2j+1)`, away from the bin centres, and the reference value is
/// the same value nudged by 0.1 to 0.15 of a bin, so the two bins always disagree in
/// sign and the gaps are far wider than one step.
pub fn histogram_check_pair(rng: &mut impl Rng, shape: Shape) -> (Tensor, Tensor) {
    let n = shape.plane();
    assert!(n <= HIST_BINS / 2, "at most 128 values per plane");
    let mut pred = Tensor::zeros(shape);
    let mut truth = Tensor::zeros(shape);
    for (pp, tp) in pred.data_mut().chunks_mut(n).zip(truth.data_mut().chunks_mut(n)) {
        let mut pairs: Vec<usize> = (0..HIST_BINS / 2).collect();
        for (i, (p, t)) in pp.iter_mut().zip(tp.iter_mut()).enumerate() {
            let j = rng.random_range(i..pairs.len());
            pairs.swap(i, j);
            let f = rng.random_range(0.35..0.65);
            let nudge = rng.random_range(0.1..0.15) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let k = 2.0 * pairs[i] as f64;
            *p = (k + f) / 255.0;
            *t = (k + f + nudge) / 255.0;
        }
    }
    (pred, truth)
}

/// Pair for checking losses that include the histogram term on planes too large for
/// [`histogram_check_pair`]. The prediction only occupies bins `4m, 4m+1` and the reference
/// only bins `4m+2, 4m+3`, so no bin can tie. The histogram gradient is then zero
/// everywhere; use it only where other terms carry the gradient.
pub fn disjoint_support_pair(rng: &mut impl Rng, shape: Shape) -> (Tensor, Tensor) {
    let mut draw = |offset: f64| {
        Tensor::from_fn(shape, |_, _, _, _| {
            let m = rng.random_range(0..63) as f64;
            (4.0 * m + offset + rng.random_range(0.2..0.8)) / 255.0
        })
    };
    let pred = draw(0.0);
    (pred, draw(2.0))
}


/// Reference image whose histogram support stays disjoint from the prediction's under
/// any change of less than one bin in a prediction value, so the histogram term is locally
/// constant. Each reference value is placed in the free bin pair nearest its prediction
/// value, which keeps the other terms in the regime of a nearly converged model.
///
/// Panics if a prediction value is outside `(0.01, 0.99)`, where the clamp would add
/// kinks, or if a plane leaves no free bin pair.
pub fn nearest_disjoint_reference(pred: &Tensor, rng: &mut impl Rng) -> Tensor {
    let n = pred.shape().plane();
    let top = (HIST_BINS - 1) as f64;
    let mut out = Tensor::zeros(pred.shape());
    for (pp, tp) in pred.data().chunks(n).zip(out.data_mut().chunks_mut(n)) {
        let mut taken = [false; HIST_BINS + 2];
        for &v in pp {
            assert!(v > 0.01 && v < 0.99, "prediction {v} too close to the clamp");
            let k = (top * v).floor() as usize;
            taken[k.saturating_sub(1)..=k + 2].fill(true);
        }
        let free: Vec<usize> = (0..HIST_BINS - 1).filter(|&j| !taken[j] && !taken[j + 1]).collect();
        assert!(!free.is_empty(), "no free bin pair");
        for (&v, t) in pp.iter().zip(tp.iter_mut()) {
            let j = *free
                .iter()
                .min_by(|&&a, &&b| (a as f64 + 0.5 - top * v).abs().total_cmp(&(b as f64 + 0.5 - top * v).abs()))
                .expect("non-empty");
            *t = (j as f64 + rng.random_range(0.2..0.8)) / top;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::losses::eval_pair;

    #[test]
    fn disjoint_reference_makes_the_histogram_term_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pred = Tensor::uniform(Shape::new(1, 3, 8, 8), 0.1, 0.9, &mut rng);
        let truth = nearest_disjoint_reference(&pred, &mut rng);
        let hist = |p: &Tensor| eval_pair(p, &truth, |g, p, t| g.histogram_loss(p, t)).unwrap();
        let base = hist(&pred);
        assert!((base - 2.0).abs() < 1e-12);
        // moving any value by most of a bin keeps the supports apart
        let moved = pred.map(|v| v + 0.9 / 255.0);
        assert!((hist(&moved) - base).abs() < 1e-12);
        let near = pred.max_abs_diff(&truth);
        assert!(near < 0.1, "{near}");
    }
}
