//! Central-difference checks for every tape operation.

use highair_core::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-6;
const TOL: f64 = 1e-6;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduces the op output against a fixed random projection so every output
/// element contributes a distinct weight to the scalar.
fn scalar_loss(tape: &mut Tape, out: Var, proj: &Tensor) -> Var {
    let p = tape.constant(proj.clone());
    let prod = tape.mul(out, p).unwrap();
    tape.sum_all(prod)
}

fn evaluate(inputs: &[Tensor], proj: &Tensor, f: &dyn Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let loss = scalar_loss(&mut tape, out, proj);
    tape.value(loss).data()[0]
}

fn check(name: &str, inputs: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let proj = random(&mut rng, tape.shape(out));
    let loss = scalar_loss(&mut tape, out, &proj);
    tape.backward(loss).unwrap();

    for (i, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v).expect("gradient reaches every input").to_vec();
        for j in 0..inputs[i].len() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += EPS;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= EPS;
            let numeric = (evaluate(&plus, &proj, &f) - evaluate(&minus, &proj, &f)) / (2.0 * EPS);
            let err = (analytic[j] - numeric).abs() / analytic[j].abs().max(numeric.abs()).max(1.0);
            assert!(
                err < TOL,
                "{name}: input {i} element {j}: analytic {} numeric {numeric}",
                analytic[j]
            );
        }
    }
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

#[test]
fn elementwise_binary() {
    let mut r = rng();
    let (a, b) = (random(&mut r, &[3, 4]), random(&mut r, &[3, 4]));
    check("add", vec![a.clone(), b.clone()], |t, v| t.add(v[0], v[1]).unwrap());
    check("sub", vec![a.clone(), b.clone()], |t, v| t.sub(v[0], v[1]).unwrap());
    check("mul", vec![a.clone(), b], |t, v| t.mul(v[0], v[1]).unwrap());
    check("square", vec![a.clone()], |t, v| t.mul(v[0], v[0]).unwrap());
    check("scale", vec![a], |t, v| t.scale(v[0], -2.5));
}

#[test]
fn matmul_and_linear() {
    let mut r = rng();
    // Row counts on both sides of the four-row blocking.
    for m in [1, 3, 4, 7, 9] {
        let (a, b) = (random(&mut r, &[m, 5]), random(&mut r, &[5, 6]));
        check("matmul", vec![a.clone(), b.clone()], |t, v| t.matmul(v[0], v[1]).unwrap());
        let bias = random(&mut r, &[6]);
        check("linear", vec![a, b, bias], |t, v| t.linear(v[0], v[1], v[2]).unwrap());
    }
    let sq = random(&mut r, &[4, 4]);
    check("matmul self", vec![sq], |t, v| t.matmul(v[0], v[0]).unwrap());
}

#[test]
fn activations() {
    let mut r = rng();
    let x = random(&mut r, &[4, 3]);
    check("tanh", vec![x.clone()], |t, v| t.tanh(v[0]));
    check("sigmoid", vec![x], |t, v| t.sigmoid(v[0]));
    // Keep relu inputs away from the kink.
    let data = vec![0.5, -0.7, 1.2, -0.1, 0.3, -2.0];
    check("relu", vec![Tensor::matrix(2, 3, data)], |t, v| t.relu(v[0]));
}

#[test]
fn shape_ops() {
    let mut r = rng();
    let (a, b) = (random(&mut r, &[2, 3]), random(&mut r, &[2, 4]));
    check("concat cols", vec![a.clone(), b], |t, v| t.concat(&[v[0], v[1]], 1).unwrap());
    let c = random(&mut r, &[5, 3]);
    check("concat rows", vec![a.clone(), c.clone()], |t, v| t.concat(&[v[0], v[1]], 0).unwrap());
    check("slice cols", vec![c.clone()], |t, v| t.slice(v[0], 1, 1, 2).unwrap());
    check("slice rows", vec![c.clone()], |t, v| t.slice(v[0], 0, 2, 3).unwrap());
    check("sum axis 0", vec![c.clone()], |t, v| t.sum(v[0], 0).unwrap());
    check("sum axis 1", vec![c.clone()], |t, v| t.sum(v[0], 1).unwrap());
    check("mean axis 1", vec![c.clone()], |t, v| t.mean(v[0], 1).unwrap());
    let row = random(&mut r, &[3]);
    check("broadcast row", vec![c.clone(), row], |t, v| t.broadcast_add_row(v[0], v[1]).unwrap());
    check("gather with repeats", vec![c.clone()], |t, v| t.gather_rows(v[0], &[4, 0, 4, 2, 4]).unwrap());
    check("segment mean", vec![c], |t, v| t.segment_mean(v[0], &[2, 0, 2, 2, 0], 4).unwrap());
}

#[test]
fn fused_lstm_ops() {
    let mut r = rng();
    let h = 3;
    let z = random(&mut r, &[2, 4 * h]);
    check("lstm_gates", vec![z.clone()], |t, v| t.lstm_gates(v[0]).unwrap());
    let c_prev = random(&mut r, &[2, h]);
    check("lstm_cell_state", vec![z.clone(), c_prev.clone()], |t, v| {
        let g = t.lstm_gates(v[0]).unwrap();
        t.lstm_cell_state(g, v[1]).unwrap()
    });
    check("lstm_hidden", vec![z, c_prev], |t, v| {
        let g = t.lstm_gates(v[0]).unwrap();
        let c = t.lstm_cell_state(g, v[1]).unwrap();
        t.lstm_hidden(g, c).unwrap()
    });
}

#[test]
fn three_layer_network() {
    let mut r = rng();
    let inputs = vec![
        random(&mut r, &[5, 4]),
        random(&mut r, &[4, 6]),
        random(&mut r, &[6]),
        random(&mut r, &[6, 3]),
        random(&mut r, &[3]),
        random(&mut r, &[3, 2]),
        random(&mut r, &[2]),
    ];
    check("3-layer", inputs, |t, v| {
        let h1 = t.linear(v[0], v[1], v[2]).unwrap();
        let h1 = t.tanh(h1);
        let h2 = t.linear(h1, v[3], v[4]).unwrap();
        let h2 = t.sigmoid(h2);
        t.linear(h2, v[5], v[6]).unwrap()
    });
}

#[test]
fn gradients_accumulate_over_uses() {
    // y = x·x + 3x has dy/dx = 2x + 3.
    let mut tape = Tape::new();
    let x = tape.param(Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]));
    let sq = tape.mul(x, x).unwrap();
    let lin = tape.scale(x, 3.0);
    let y = tape.add(sq, lin).unwrap();
    let loss = tape.sum_all(y);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[5.0, -1.0, 4.0]);
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::new();
    let c = tape.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]));
    let p = tape.param(Tensor::matrix(1, 2, vec![3.0, 4.0]));
    let y = tape.mul(c, p).unwrap();
    let loss = tape.sum_all(y);
    tape.backward(loss).unwrap();
    assert!(tape.grad(c).is_none());
    assert_eq!(tape.grad(p).unwrap(), &[1.0, 2.0]);
}

#[test]
fn backward_rules() {
    let mut tape = Tape::new();
    let p = tape.param(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
    assert!(tape.backward(p).is_err(), "non-scalar loss");
    let loss = tape.sum_all(p);
    tape.backward(loss).unwrap();
    assert!(tape.backward(loss).is_err(), "second backward on one tape");
    tape.reset();
    assert!(tape.is_empty());
}

#[test]
fn shape_errors() {
    let mut tape = Tape::new();
    let a = tape.param(Tensor::zeros(&[2, 3]));
    let b = tape.param(Tensor::zeros(&[2, 3]));
    assert!(tape.matmul(a, b).is_err());
    let bad_bias = tape.param(Tensor::zeros(&[2]));
    let w = tape.param(Tensor::zeros(&[3, 4]));
    assert!(tape.linear(a, w, bad_bias).is_err());
    let odd = tape.param(Tensor::zeros(&[1, 6]));
    assert!(tape.lstm_gates(odd).is_err());
}

#[test]
fn repeated_runs_are_bit_identical() {
    let run = || {
        let mut r = rng();
        let mut tape = Tape::new();
        let x = tape.param(random(&mut r, &[6, 5]));
        let w = tape.param(random(&mut r, &[5, 8]));
        let b = tape.param(random(&mut r, &[8]));
        let z = tape.linear(x, w, b).unwrap();
        let g = tape.lstm_gates(z).unwrap();
        let loss = tape.sum_all(g);
        tape.backward(loss).unwrap();
        (tape.grad(x).unwrap().to_vec(), tape.grad(w).unwrap().to_vec())
    };
    assert_eq!(run(), run());
}
