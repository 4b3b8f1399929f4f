use adar_tensor::{finite_difference_check, finite_difference_check_with_fault, Fault, NormMode, Result, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

/// Random projection so every output coordinate contributes to the scalar.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = tape.constant(Tensor::randn(tape.shape(y).to_vec(), 0.0, 1.0, &mut rng));
    let p = tape.mul(y, r)?;
    Ok(tape.sum(p))
}

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape.to_vec(), 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    randn(shape, seed).map(|v| if v.abs() < 0.05 { v.signum() * 0.05 + v } else { v })
}

fn assert_ok(name: &str, f: impl Fn(&mut Tape<f64>, Var) -> Result<Var>, x: &Tensor<f64>, h: f64) {
    let r = finite_difference_check(f, x, h).unwrap();
    assert!(r.max_relative_error < TOL, "{name}: {r:?}");
}

#[test]
fn conv2d_gradients() {
    let x = randn(&[2, 2, 5, 5], 1);
    let w = randn(&[3, 2, 3, 3], 2);
    let b = randn(&[3], 3);
    let (wc, bc) = (w.clone(), b.clone());
    assert_ok(
        "conv2d/input",
        move |t, v| {
            let (w, b) = (t.constant(wc.clone()), t.constant(bc.clone()));
            let y = t.conv2d(v, w, Some(b), 2, 1)?;
            project(t, y, 9)
        },
        &x,
        1e-4,
    );
    let (xc, bc) = (x.clone(), b.clone());
    assert_ok(
        "conv2d/weight",
        move |t, v| {
            let (x, b) = (t.constant(xc.clone()), t.constant(bc.clone()));
            let y = t.conv2d(x, v, Some(b), 2, 1)?;
            project(t, y, 9)
        },
        &w,
        1e-4,
    );
    let (xc, wc) = (x.clone(), w.clone());
    assert_ok(
        "conv2d/bias",
        move |t, v| {
            let (x, w) = (t.constant(xc.clone()), t.constant(wc.clone()));
            let y = t.conv2d(x, w, Some(v), 2, 1)?;
            project(t, y, 9)
        },
        &b,
        1e-4,
    );
}

#[test]
fn conv_transpose2d_gradients() {
    let x = randn(&[2, 3, 3, 3], 4);
    let w = randn(&[3, 2, 4, 4], 5);
    let b = randn(&[2], 6);
    let (wc, bc) = (w.clone(), b.clone());
    assert_ok(
        "conv_transpose2d/input",
        move |t, v| {
            let (w, b) = (t.constant(wc.clone()), t.constant(bc.clone()));
            let y = t.conv_transpose2d(v, w, Some(b), 2, 1)?;
            project(t, y, 8)
        },
        &x,
        1e-4,
    );
    let (xc, bc) = (x.clone(), b.clone());
    assert_ok(
        "conv_transpose2d/weight",
        move |t, v| {
            let (x, b) = (t.constant(xc.clone()), t.constant(bc.clone()));
            let y = t.conv_transpose2d(x, v, Some(b), 2, 1)?;
            project(t, y, 8)
        },
        &w,
        1e-4,
    );
    let (xc, wc) = (x, w);
    assert_ok(
        "conv_transpose2d/bias",
        move |t, v| {
            let (x, w) = (t.constant(xc.clone()), t.constant(wc.clone()));
            let y = t.conv_transpose2d(x, w, Some(v), 2, 1)?;
            project(t, y, 8)
        },
        &b,
        1e-4,
    );
}

#[test]
fn batched_conv2d_gradients() {
    let x = randn(&[2, 3, 4, 4], 7);
    let k = randn(&[2, 2, 3, 3, 3], 8);
    let kc = k.clone();
    assert_ok(
        "batched_conv2d/input",
        move |t, v| {
            let k = t.constant(kc.clone());
            let y = t.batched_conv2d(v, k, 1, 1)?;
            project(t, y, 3)
        },
        &x,
        1e-4,
    );
    let xc = x;
    assert_ok(
        "batched_conv2d/kernels",
        move |t, v| {
            let x = t.constant(xc.clone());
            let y = t.batched_conv2d(x, v, 1, 1)?;
            project(t, y, 3)
        },
        &k,
        1e-4,
    );
}

#[test]
fn batchnorm_gradients_in_both_modes() {
    let x = randn(&[3, 2, 3, 3], 10);
    let gamma = randn(&[2], 11).map(|v| 1.0 + 0.3 * v);
    let beta = randn(&[2], 12);
    for mode in [NormMode::Train, NormMode::Eval] {
        let (g, b) = (gamma.clone(), beta.clone());
        assert_ok(
            "batchnorm/input",
            move |t, v| {
                let (g, b) = (t.constant(g.clone()), t.constant(b.clone()));
                let mut running = Tensor::new([2, 2], vec![0.1, -0.2, 0.8, 1.3]).unwrap();
                let y = t.batchnorm2d(v, g, b, &mut running, mode)?;
                project(t, y, 4)
            },
            &x,
            1e-4,
        );
        let (xc, b) = (x.clone(), beta.clone());
        assert_ok(
            "batchnorm/gamma",
            move |t, v| {
                let (x, b) = (t.constant(xc.clone()), t.constant(b.clone()));
                let mut running = Tensor::new([2, 2], vec![0.1, -0.2, 0.8, 1.3]).unwrap();
                let y = t.batchnorm2d(x, v, b, &mut running, mode)?;
                project(t, y, 4)
            },
            &gamma,
            1e-4,
        );
        let (xc, g) = (x.clone(), gamma.clone());
        assert_ok(
            "batchnorm/beta",
            move |t, v| {
                let (x, g) = (t.constant(xc.clone()), t.constant(g.clone()));
                let mut running = Tensor::new([2, 2], vec![0.1, -0.2, 0.8, 1.3]).unwrap();
                let y = t.batchnorm2d(x, g, v, &mut running, mode)?;
                project(t, y, 4)
            },
            &beta,
            1e-4,
        );
    }
}

#[test]
fn pointwise_gradients() {
    let x = away_from_zero(&[2, 3, 2, 2], 20);
    assert_ok("relu", |t, v| { let y = t.relu(v); project(t, y, 1) }, &x, 1e-4);
    assert_ok("leaky_relu", |t, v| { let y = t.leaky_relu(v, 0.2); project(t, y, 1) }, &x, 1e-4);
    assert_ok("tanh", |t, v| { let y = t.tanh(v); project(t, y, 1) }, &x, 1e-4);
    assert_ok("sigmoid", |t, v| { let y = t.sigmoid(v); project(t, y, 1) }, &x, 1e-4);
    assert_ok("softplus", |t, v| { let y = t.softplus(v); project(t, y, 1) }, &x, 1e-4);
    assert_ok("abs", |t, v| { let y = t.abs(v); project(t, y, 1) }, &x, 1e-4);
    assert_ok("square", |t, v| { let y = t.square(v); project(t, y, 1) }, &x, 1e-4);
    assert_ok("scale", |t, v| { let y = t.scale(v, -1.7); project(t, y, 1) }, &x, 1e-4);
    assert_ok("mean", |t, v| { let y = t.square(v); Ok(t.mean(y)) }, &x, 1e-4);
    assert_ok(
        "channel_affine",
        |t, v| {
            let y = t.channel_affine(v, &[0.5, -2.0, 3.0], &[0.1, 0.2, 0.3])?;
            project(t, y, 1)
        },
        &x,
        1e-4,
    );
    let other = randn(&[2, 3, 2, 2], 21);
    let o = other.clone();
    assert_ok(
        "mul",
        move |t, v| {
            let c = t.constant(o.clone());
            let y = t.mul(v, c)?;
            let z = t.mul(y, v)?;
            project(t, z, 1)
        },
        &x,
        1e-4,
    );
    let o = other;
    assert_ok(
        "add_sub",
        move |t, v| {
            let c = t.constant(o.clone());
            let a = t.add(v, c)?;
            let s = t.sub(c, a)?;
            let y = t.mul(s, a)?;
            project(t, y, 1)
        },
        &x,
        1e-4,
    );
}

#[test]
fn structural_gradients() {
    let x = randn(&[2, 3, 4, 4], 30);
    assert_ok("gram", |t, v| { let y = t.gram(v)?; project(t, y, 2) }, &x, 1e-4);
    assert_ok("global_avg_pool", |t, v| { let y = t.global_avg_pool(v)?; project(t, y, 2) }, &x, 1e-4);
    assert_ok("max_pool2", |t, v| { let y = t.max_pool2(v)?; project(t, y, 2) }, &x, 1e-4);
    assert_ok(
        "reshape",
        |t, v| {
            let y = t.reshape(v, [6, 16])?;
            let y = t.tanh(y);
            project(t, y, 2)
        },
        &x,
        1e-4,
    );
    let other = randn(&[2, 1, 4, 4], 31);
    assert_ok(
        "concat_channels",
        move |t, v| {
            let c = t.constant(other.clone());
            let y = t.concat_channels(&[c, v, c])?;
            let y = t.square(y);
            project(t, y, 2)
        },
        &x,
        1e-4,
    );
}

#[test]
fn composite_conv_bn_relu_pipeline() {
    let x = randn(&[2, 2, 6, 6], 40);
    let w = randn(&[4, 2, 4, 4], 41).map(|v| 0.3 * v);
    let f = move |t: &mut Tape<f64>, v: Var| {
        let w = t.constant(w.clone());
        let y = t.conv2d(v, w, None, 2, 1)?;
        let g = t.constant(Tensor::full([4], 1.2));
        let b = t.constant(Tensor::full([4], 0.1));
        let mut running = Tensor::zeros([2, 4]);
        let y = t.batchnorm2d(y, g, b, &mut running, NormMode::Train)?;
        let y = t.relu(y);
        Ok(t.sum(y))
    };
    assert_ok("conv_bn_relu_sum", f, &x, 1e-4);
}

#[test]
fn corrupted_conv_backward_is_caught() {
    let x = randn(&[1, 2, 5, 5], 50);
    let w = randn(&[2, 2, 3, 3], 51);
    let f = move |t: &mut Tape<f64>, v: Var| {
        let w = t.constant(w.clone());
        let y = t.conv2d(v, w, None, 1, 1)?;
        project(t, y, 5)
    };
    let r = finite_difference_check_with_fault(f, &x, 1e-4, Some(Fault::Conv2dBackward)).unwrap();
    assert!(r.max_relative_error > TOL);
}
