use adar_tensor::{Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Six nested loops (plus the batch loop), straight from the definition.
#[allow(clippy::too_many_arguments)]
fn direct_conv(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    wt: &[f64],
    (co, k): (usize, usize),
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * co * oh * ow];
    for b in 0..n {
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[o];
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += x[((b * c + ci) * h + iy as usize) * w + ix as usize]
                                        * wt[((o * c + ci) * k + ky) * k + kx];
                                }
                            }
                        }
                    }
                    out[((b * co + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

/// Transposed convolution in scatter form: every input pixel stamps a
/// weighted copy of the kernel into the output.
fn direct_conv_transpose(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    wt: &[f64],
    (co, k): (usize, usize),
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h - 1) * stride + k - 2 * pad;
    let ow = (w - 1) * stride + k - 2 * pad;
    let mut out = vec![0.0; n * co * oh * ow];
    for b in 0..n {
        for ci in 0..c {
            for iy in 0..h {
                for ix in 0..w {
                    let v = x[((b * c + ci) * h + iy) * w + ix];
                    for o in 0..co {
                        for ky in 0..k {
                            for kx in 0..k {
                                let oy = (iy * stride + ky) as isize - pad as isize;
                                let ox = (ix * stride + kx) as isize - pad as isize;
                                if oy >= 0 && ox >= 0 && (oy as usize) < oh && (ox as usize) < ow {
                                    out[((b * co + o) * oh + oy as usize) * ow + ox as usize] +=
                                        v * wt[((ci * co + o) * k + ky) * k + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (out, oh, ow)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn conv2d_matches_loop_oracle_on_reference_geometry() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = Tensor::<f64>::randn([1, 2, 5, 5], 0.0, 1.0, &mut rng);
    let w = Tensor::<f64>::randn([3, 2, 3, 3], 0.0, 1.0, &mut rng);
    let b = Tensor::<f64>::randn([3], 0.0, 1.0, &mut rng);
    let mut tape = Tape::new();
    let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
    let y = tape.conv2d(xv, wv, Some(bv), 2, 1).unwrap();
    let (want, oh, ow) = direct_conv(x.data(), (1, 2, 5, 5), w.data(), (3, 3), b.data(), 2, 1);
    assert_eq!(tape.shape(y), &[1, 3, oh, ow]);
    assert!(max_diff(tape.value(y).data(), &want) < 1e-6);
}

#[test]
fn conv_and_transpose_match_oracles_on_random_geometries() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let n = rng.gen_range(1..3);
        let c = rng.gen_range(1..4);
        let co = rng.gen_range(1..4);
        let k = rng.gen_range(1..5);
        let stride = rng.gen_range(1..4);
        let pad = rng.gen_range(0..k);
        let h = rng.gen_range(k.max(1)..9);
        let w = rng.gen_range(k.max(1)..9);
        let x = Tensor::<f64>::randn([n, c, h, w], 0.0, 1.0, &mut rng);
        let wt = Tensor::<f64>::randn([co, c, k, k], 0.0, 1.0, &mut rng);
        let b = Tensor::<f64>::randn([co], 0.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(wt.clone()), tape.constant(b.clone()));
        let y = tape.conv2d(xv, wv, Some(bv), stride, pad).unwrap();
        let (want, _, _) = direct_conv(x.data(), (n, c, h, w), wt.data(), (co, k), b.data(), stride, pad);
        assert!(max_diff(tape.value(y).data(), &want) < 1e-6);

        if (h - 1) * stride + k > 2 * pad {
            let tw = Tensor::<f64>::randn([c, co, k, k], 0.0, 1.0, &mut rng);
            let twv = tape.constant(tw.clone());
            let t = tape.conv_transpose2d(xv, twv, None, stride, pad).unwrap();
            let (want, oh, ow) = direct_conv_transpose(x.data(), (n, c, h, w), tw.data(), (co, k), stride, pad);
            assert_eq!(tape.shape(t), &[n, co, oh, ow]);
            assert!(max_diff(tape.value(t).data(), &want) < 1e-6);
        }
    }
}

#[test]
fn transpose_is_adjoint_of_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let c = rng.gen_range(1..4);
        let co = rng.gen_range(1..4);
        let k = rng.gen_range(1..5);
        let stride = rng.gen_range(1..3);
        let pad = rng.gen_range(0..k);
        let h = rng.gen_range(k..10);
        let x = Tensor::<f64>::randn([2, c, h, h], 0.0, 1.0, &mut rng);
        let w = Tensor::<f64>::randn([co, c, k, k], 0.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let (xv, wv) = (tape.constant(x.clone()), tape.constant(w));
        let cx = tape.conv2d(xv, wv, None, stride, pad).unwrap();
        let y = Tensor::<f64>::randn(tape.shape(cx).to_vec(), 0.0, 1.0, &mut rng);
        let yv = tape.constant(y.clone());
        let ty = tape.conv_transpose2d(yv, wv, None, stride, pad).unwrap();
        // The transpose may produce a smaller map when the forward conv
        // dropped trailing rows; those rows contribute nothing to <Cx, y>.
        if tape.shape(ty) != x.shape() {
            continue;
        }
        let lhs = tape.value(cx).dot(&y).unwrap();
        let rhs = x.dot(tape.value(ty)).unwrap();
        assert!((lhs - rhs).abs() <= 1e-5 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
    }
}

#[test]
fn repeated_forward_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = Tensor::<f32>::randn([2, 3, 9, 9], 0.0, 1.0, &mut rng);
    let w = Tensor::<f32>::randn([4, 3, 3, 3], 0.0, 1.0, &mut rng);
    let run = || {
        let mut tape = Tape::new();
        let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
        let y = tape.conv2d(xv, wv, None, 2, 1).unwrap();
        tape.value(y).clone()
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn output_shapes_follow_closed_forms(
        n in 1usize..3, c in 1usize..4, co in 1usize..4, k in 1usize..5,
        stride in 1usize..4, pad in 0usize..3, h in 1usize..12, w in 1usize..12,
    ) {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros([n, c, h, w]));
        let wt = tape.constant(Tensor::zeros([co, c, k, k]));
        let res = tape.conv2d(x, wt, None, stride, pad);
        if h + 2 * pad >= k && w + 2 * pad >= k {
            let y = res.unwrap();
            prop_assert_eq!(tape.shape(y), &[n, co, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1][..]);
        } else {
            prop_assert!(res.is_err());
        }
        let tw = tape.constant(Tensor::zeros([c, co, k, k]));
        let res = tape.conv_transpose2d(x, tw, None, stride, pad);
        let (fh, fw) = ((h - 1) * stride + k, (w - 1) * stride + k);
        if fh > 2 * pad && fw > 2 * pad {
            let y = res.unwrap();
            prop_assert_eq!(tape.shape(y), &[n, co, fh - 2 * pad, fw - 2 * pad][..]);
        } else {
            prop_assert!(res.is_err());
        }
    }
}
