//! Central finite-difference gradient verification.
//!
//! Independent of the reverse sweep: only forward evaluations of the closure
//! are used to form the reference gradient.

use crate::tensor::{Tape, Tensor};

/// Largest symmetric relative error between reverse-mode gradients and
/// central finite differences over every element of every input.
///
/// `f` must rebuild the graph from the given leaves and return a scalar loss.
pub fn finite_diff_max_rel_err(
    inputs: &[(Vec<f64>, Vec<usize>)],
    h: f64,
    f: impl Fn(&Tape, &[Tensor]) -> Tensor,
) -> f64 {
    let tape = Tape::new();
    let leaves: Vec<Tensor> = inputs
        .iter()
        .map(|(data, shape)| Tensor::leaf(&tape, data.clone(), shape.clone()))
        .collect();
    let loss = f(&tape, &leaves);
    let grads = tape.backward(&loss);

    let eval = |perturbed: &[(Vec<f64>, Vec<usize>)]| -> f64 {
        let t = Tape::new();
        let ls: Vec<Tensor> = perturbed
            .iter()
            .map(|(d, s)| Tensor::leaf(&t, d.clone(), s.clone()))
            .collect();
        f(&t, &ls).item()
    };

    let mut worst = 0.0f64;
    for (k, (data, _)) in inputs.iter().enumerate() {
        let ad: Vec<f64> = match grads.wrt(&leaves[k]) {
            Some(g) => g.to_vec(),
            None => vec![0.0; data.len()],
        };
        for i in 0..data.len() {
            let mut up = inputs.to_vec();
            up[k].0[i] += h;
            let mut dn = inputs.to_vec();
            dn[k].0[i] -= h;
            let fd = (eval(&up) - eval(&dn)) / (2.0 * h);
            let denom = (ad[i].abs() + fd.abs()).max(1e-6);
            worst = worst.max((ad[i] - fd).abs() / denom);
        }
    }
    worst
}

/// Panics unless reverse-mode and finite-difference gradients agree to `tol`.
pub fn assert_grads_match(
    inputs: &[(Vec<f64>, Vec<usize>)],
    tol: f64,
    f: impl Fn(&Tape, &[Tensor]) -> Tensor,
) {
    let err = finite_diff_max_rel_err(inputs, 1e-5, f);
    assert!(err < tol, "gradient check failed: max relative error {err:.3e} >= {tol:.1e}");
}
