//! Small neural-net building blocks composed from tape primitives.

use crate::param::ParamStore;
use crate::rng::Rng;
use crate::tape::{DTensor, Tape};
use crate::tensor::Tensor;

/// Glorot-style uniform init: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.uniform_in(-a, a)).collect();
    Tensor::from_vec(rows, cols, data)
}

/// Handles of one LSTM cell's parameters bound on a tape.
/// Gate layout along columns: input, forget, cell, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    pub w_ih: DTensor,
    pub w_hh: DTensor,
    pub b_ih: DTensor,
    pub b_hh: DTensor,
}

impl LstmParams {
    /// Inserts freshly initialized cell parameters under `prefix`.
    pub fn init(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut Rng) {
        store.insert(format!("{prefix}.w_ih"), glorot_uniform(rng, input, 4 * hidden));
        store.insert(format!("{prefix}.w_hh"), glorot_uniform(rng, hidden, 4 * hidden));
        store.insert(format!("{prefix}.b_ih"), Tensor::zeros(1, 4 * hidden));
        store.insert(format!("{prefix}.b_hh"), Tensor::zeros(1, 4 * hidden));
    }

    pub fn bind(tape: &mut Tape, store: &ParamStore, prefix: &str, trainable: bool) -> Self {
        LstmParams {
            w_ih: tape.param(store, &format!("{prefix}.w_ih"), trainable),
            w_hh: tape.param(store, &format!("{prefix}.w_hh"), trainable),
            b_ih: tape.param(store, &format!("{prefix}.b_ih"), trainable),
            b_hh: tape.param(store, &format!("{prefix}.b_hh"), trainable),
        }
    }
}

/// One LSTM step. `x` is 1 x input, `h` and `c` are 1 x hidden.
pub fn lstm_cell(
    tape: &mut Tape,
    params: &LstmParams,
    x: DTensor,
    h: DTensor,
    c: DTensor,
) -> (DTensor, DTensor) {
    let hidden = tape.shape(h).1;
    let xi = tape.matmul(x, params.w_ih);
    let xi = tape.add_row_broadcast(xi, params.b_ih);
    let hh = tape.matmul(h, params.w_hh);
    let hh = tape.add_row_broadcast(hh, params.b_hh);
    let z = tape.add(xi, hh);

    let cols = |tape: &mut Tape, z: DTensor, k: usize| {
        let range: Vec<usize> = (k * hidden..(k + 1) * hidden).collect();
        tape.submatrix(z, vec![0], range)
    };
    let zi = cols(tape, z, 0);
    let zf = cols(tape, z, 1);
    let zg = cols(tape, z, 2);
    let zo = cols(tape, z, 3);

    let i = tape.sigmoid(zi);
    let f = tape.sigmoid(zf);
    let g = tape.tanh(zg);
    let o = tape.sigmoid(zo);

    let fc = tape.mul(f, c);
    let ig = tape.mul(i, g);
    let c_next = tape.add(fc, ig);
    let tc = tape.tanh(c_next);
    let h_next = tape.mul(o, tc);
    (h_next, c_next)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glorot_is_seed_deterministic_and_bounded() {
        let a = glorot_uniform(&mut Rng::from_seed(5), 4, 8);
        let b = glorot_uniform(&mut Rng::from_seed(5), 4, 8);
        assert_eq!(a, b);
        let bound = (6.0 / 12.0f64).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn lstm_zero_state_zero_input_is_zero_output_with_zero_params() {
        let mut store = ParamStore::new();
        store.insert("c.w_ih", Tensor::zeros(3, 8));
        store.insert("c.w_hh", Tensor::zeros(2, 8));
        store.insert("c.b_ih", Tensor::zeros(1, 8));
        store.insert("c.b_hh", Tensor::zeros(1, 8));
        let mut tape = Tape::new();
        let p = LstmParams::bind(&mut tape, &store, "c", false);
        let x = tape.constant(Tensor::zeros(1, 3));
        let h = tape.constant(Tensor::zeros(1, 2));
        let c = tape.constant(Tensor::zeros(1, 2));
        let (h1, c1) = lstm_cell(&mut tape, &p, x, h, c);
        assert!(tape.value(h1).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(c1).data().iter().all(|&v| v == 0.0));
    }
}
