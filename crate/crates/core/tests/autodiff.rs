//! Central finite-difference checks of every differentiable op, in f64.

use paydpi::tensor::{gradient_check, gradient_check_many, Graph, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;
const PER_OP_TOL: f64 = 1e-4;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape, v).unwrap()
}

/// Reduces any tensor to a scalar with non-uniform weights so every
/// coordinate of the output gets a distinct upstream gradient.
fn weighted_sum(g: &mut Graph<f64>, x: Var) -> Result<Var, TensorError> {
    let n = g.value(x).len();
    let w: Vec<f64> = (0..n).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.4).collect();
    let w = g.constant(Tensor::new(g.shape(x), w)?);
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

fn check(name: &str, err: f64, tol: f64) {
    println!("{name:<28} max rel err {err:.3e}");
    assert!(err < tol, "{name}: {err:e} >= {tol:e}");
}

#[test]
fn sum_of_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = randn(&mut rng, &[5]);
    let err = gradient_check(
        |g, x| {
            let sq = g.mul(x, x)?;
            Ok(g.sum(sq))
        },
        &x,
        H,
    )
    .unwrap();
    check("sum of squares", err, 1e-7);
}

#[test]
fn every_op() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);

    let a = randn(&mut rng, &[2, 3, 4]);
    let b = randn(&mut rng, &[4, 5]);
    let err = gradient_check_many(|g, v| { let y = g.matmul(v[0], v[1])?; weighted_sum(g, y) }, &[a.clone(), b], H).unwrap();
    check("matmul (shared rhs)", err, PER_OP_TOL);

    let c = randn(&mut rng, &[2, 4, 3]);
    let err = gradient_check_many(|g, v| { let y = g.matmul(v[0], v[1])?; weighted_sum(g, y) }, &[a.clone(), c], H).unwrap();
    check("matmul (batched)", err, PER_OP_TOL);

    let bias = randn(&mut rng, &[4]);
    let err = gradient_check_many(|g, v| { let y = g.add(v[0], v[1])?; weighted_sum(g, y) }, &[a.clone(), bias], H).unwrap();
    check("add (broadcast)", err, PER_OP_TOL);

    let a2 = randn(&mut rng, &[2, 3, 4]);
    let err = gradient_check_many(|g, v| { let y = g.mul(v[0], v[1])?; weighted_sum(g, y) }, &[a.clone(), a2], H).unwrap();
    check("mul", err, PER_OP_TOL);

    let err = gradient_check(|g, x| { let y = g.scale(x, -2.5); weighted_sum(g, y) }, &a, H).unwrap();
    check("scale", err, PER_OP_TOL);

    let err = gradient_check(|g, x| { let y = g.transpose(x, 0, 2)?; weighted_sum(g, y) }, &a, H).unwrap();
    check("transpose", err, PER_OP_TOL);

    let err = gradient_check(|g, x| { let y = g.reshape(x, &[6, 4])?; weighted_sum(g, y) }, &a, H).unwrap();
    check("reshape", err, PER_OP_TOL);

    let table = randn(&mut rng, &[6, 3]);
    let err = gradient_check(|g, t| { let y = g.embedding(t, &[0, 5, 2, 5], &[2, 2])?; weighted_sum(g, y) }, &table, H).unwrap();
    check("embedding", err, PER_OP_TOL);

    let err = gradient_check(|g, x| { let y = g.softmax(x); weighted_sum(g, y) }, &a, H).unwrap();
    check("softmax", err, PER_OP_TOL);

    let gain = randn(&mut rng, &[4]);
    let beta = randn(&mut rng, &[4]);
    let err = gradient_check_many(
        |g, v| { let y = g.layer_norm(v[0], v[1], v[2], 1e-12)?; weighted_sum(g, y) },
        &[a.clone(), gain, beta],
        H,
    )
    .unwrap();
    check("layer_norm", err, PER_OP_TOL);

    let err = gradient_check(|g, x| { let y = g.gelu(x); weighted_sum(g, y) }, &a, H).unwrap();
    check("gelu", err, PER_OP_TOL);

    // keep inputs away from the kink
    let away: Vec<f64> = a.data().iter().map(|v| if v.abs() < 0.05 { v + 0.2 } else { *v }).collect();
    let away = Tensor::new(a.shape(), away).unwrap();
    let err = gradient_check(|g, x| { let y = g.relu(x); weighted_sum(g, y) }, &away, H).unwrap();
    check("relu", err, PER_OP_TOL);

    let err = gradient_check(|g, x| { let y = g.dropout(x, 0.25, 9); weighted_sum(g, y) }, &a, H).unwrap();
    check("dropout", err, PER_OP_TOL);

    let mask: Vec<bool> = (0..a.len()).map(|i| i % 3 == 0).collect();
    let err = gradient_check(
        |g, x| {
            let y = g.masked_fill(x, &mask, f64::NEG_INFINITY)?;
            let s = g.softmax(y);
            weighted_sum(g, s)
        },
        &a,
        H,
    )
    .unwrap();
    check("masked_fill + softmax", err, PER_OP_TOL);

    let err = gradient_check(|g, x| Ok(g.mean(x)), &a, H).unwrap();
    check("mean", err, PER_OP_TOL);

    let err = gradient_check(|g, x| { let y = g.select(x, 1, 2)?; weighted_sum(g, y) }, &a, H).unwrap();
    check("select", err, PER_OP_TOL);

    let logits = randn(&mut rng, &[5, 3]);
    let err = gradient_check(|g, x| g.cross_entropy(x, &[0, 2, 1, 1, 0]), &logits, H).unwrap();
    check("cross_entropy", err, PER_OP_TOL);
}

#[test]
fn softmax_cross_entropy_composite() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = randn(&mut rng, &[4, 6]);
    let w = randn(&mut rng, &[6, 3]);
    let err = gradient_check_many(
        |g, v| {
            let logits = g.matmul(v[0], v[1])?;
            g.cross_entropy(logits, &[2, 0, 1, 2])
        },
        &[x, w],
        H,
    )
    .unwrap();
    check("softmax-cross-entropy", err, 1e-4);
}

#[test]
fn two_layer_mlp_every_parameter() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = randn(&mut rng, &[6, 5]);
    let params = vec![
        randn(&mut rng, &[5, 7]),
        randn(&mut rng, &[7]),
        randn(&mut rng, &[7, 3]),
        randn(&mut rng, &[3]),
    ];
    let labels = [0, 1, 2, 2, 1, 0];
    let err = gradient_check_many(
        |g, p| {
            let input = g.constant(x.clone());
            let h = g.matmul(input, p[0])?;
            let h = g.add(h, p[1])?;
            let h = g.gelu(h);
            let o = g.matmul(h, p[2])?;
            let o = g.add(o, p[3])?;
            g.cross_entropy(o, &labels)
        },
        &params,
        H,
    )
    .unwrap();
    check("2-layer MLP", err, 1e-4);
}
