mod common;

use common::{check_case, Case};
use spatial_mtl::autodiff::{ConvParams, Tape, Tensor};

#[test]
fn every_op_matches_finite_differences() {
    for &case in Case::ALL {
        for seed in 0..5 {
            let (e64, e32) = check_case(case, seed);
            assert!(e64 < 1e-6, "{case:?} seed {seed}: 64-bit error {e64:e}");
            assert!(e32 < 1e-3, "{case:?} seed {seed}: 32-bit error {e32:e}");
        }
    }
}

#[test]
fn matmul_examples() {
    let mut tape = Tape::<f64>::new();
    let eye = tape.constant(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let x = tape.constant(&[2, 2], vec![0.3, -1.0, 2.5, 4.0]).unwrap();
    let y = tape.matmul(eye, x).unwrap();
    assert_eq!(tape.value(y), tape.value(x));

    let a = tape.constant(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let ones = tape.constant(&[2, 1], vec![1.0, 1.0]).unwrap();
    let c = tape.matmul(a, ones).unwrap();
    assert_eq!(tape.value(c), &[3.0, 7.0]);
    assert_eq!(tape.shape(c), &[2, 1]);

    let col = tape_col(&mut tape);
    let err = tape.matmul(a, col).unwrap_err().to_string();
    assert!(err.contains("[2, 2]") && err.contains("[3, 1]"), "{err}");
}

fn tape_col(tape: &mut Tape<f64>) -> spatial_mtl::autodiff::Var {
    tape.constant(&[3, 1], vec![1.0; 3]).unwrap()
}

#[test]
fn conv2d_examples() {
    let mut tape = Tape::<f64>::new();
    let img: Vec<f64> = (0..25).map(|i| i as f64 * 0.1).collect();
    let x = tape.constant(&[1, 5, 5], img.clone()).unwrap();
    let k1 = tape.constant(&[1, 1, 1, 1], vec![1.0]).unwrap();
    let y = tape.conv2d(x, k1, ConvParams::default()).unwrap();
    assert_eq!(tape.value(y), img.as_slice());

    let flat = tape.constant(&[1, 6, 6], vec![0.75; 36]).unwrap();
    let k3 = tape.constant(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
    let y = tape.conv2d(flat, k3, ConvParams::default()).unwrap();
    assert_eq!(tape.shape(y), &[1, 4, 4]);
    assert!(tape.value(y).iter().all(|&v| (v - 9.0 * 0.75).abs() < 1e-12));

    // (5 + 0 − 2) / 2 is not integral
    let k2 = tape.constant(&[1, 1, 2, 2], vec![1.0; 4]).unwrap();
    assert!(tape.conv2d(x, k2, ConvParams::new(2, 0)).is_err());
}

#[test]
fn transposed_conv_geometry_and_adjoint() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(&[1, 3, 4, 4], vec![1.0; 48]).unwrap();
    let k = tape.constant(&[3, 2, 2, 2], vec![0.5; 24]).unwrap();
    let y = tape.conv_transpose2d(x, k, ConvParams::new(2, 0)).unwrap();
    assert_eq!(tape.shape(y), &[1, 2, 8, 8]);

    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    for (stride, padding) in [(1, 0), (2, 0), (2, 1), (3, 1)] {
        let kernel: Vec<f64> = (0..2 * 3 * 3 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let big = 7;
        let xs: Vec<f64> = (0..3 * big * big).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut t = Tape::<f64>::new();
        let xv = t.constant(&[3, big, big], xs.clone()).unwrap();
        let kv = t.constant(&[2, 3, 3, 3], kernel).unwrap();
        let Ok(cx) = t.conv2d(xv, kv, ConvParams::new(stride, padding)) else {
            continue;
        };
        let small = t.shape(cx).to_vec();
        let ys: Vec<f64> = (0..small.iter().product::<usize>()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let yv = t.constant(&small, ys.clone()).unwrap();
        let ty = t.conv_transpose2d(yv, kv, ConvParams::new(stride, padding)).unwrap();
        assert_eq!(t.shape(ty), &[3, big, big]);
        let lhs: f64 = t.value(cx).iter().zip(&ys).map(|(a, b)| a * b).sum();
        let rhs: f64 = xs.iter().zip(t.value(ty)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-5, "stride {stride} padding {padding}: {lhs} vs {rhs}");
    }
}

#[test]
fn pointwise_examples() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
    let r = tape.relu(x).unwrap();
    assert_eq!(tape.value(r), &[0.0, 0.0, 2.0]);
    let z = tape.constant(&[1], vec![0.0]).unwrap();
    let s = tape.sigmoid(z).unwrap();
    assert_eq!(tape.value(s), &[0.5]);
    let a = tape.constant(&[2], vec![1.0, 2.0]).unwrap();
    let b = tape.constant(&[3], vec![1.0, 2.0, 3.0]).unwrap();
    assert!(tape.add(a, b).is_err());
    assert!(tape.mul(a, b).is_err());
}

#[test]
fn layer_norm_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(&[2, 2], vec![4.0, 4.0, 1.0, 3.0]).unwrap();
    let g = tape.constant(&[2], vec![1.0, 1.0]).unwrap();
    let b = tape.constant(&[2], vec![0.0, 0.0]).unwrap();
    let y = tape.layer_norm(x, g, b, 1e-12).unwrap();
    let v = tape.value(y);
    assert_eq!(&v[..2], &[0.0, 0.0]);
    assert!((v[2] + 1.0).abs() < 1e-9 && (v[3] - 1.0).abs() < 1e-9);
    assert!(tape.layer_norm(x, g, b, 0.0).is_err());
}

#[test]
fn attention_examples() {
    let mut tape = Tape::<f64>::new();
    let q = tape.constant(&[1, 1, 4], vec![0.3, -0.2, 1.0, 0.5]).unwrap();
    let k = tape.constant(&[1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let v = tape.constant(&[1, 1, 4], vec![9.0, 8.0, 7.0, 6.0]).unwrap();
    let o = tape.softmax_attention(q, k, v, None).unwrap();
    assert_eq!(tape.value(o), tape.value(v));

    let q = tape.constant(&[1, 3, 2], vec![0.1, 0.2, -0.5, 0.9, 3.0, 1.0]).unwrap();
    let k = tape.constant(&[1, 3, 2], vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
    let v = tape.constant(&[1, 3, 2], vec![0.0, 3.0, 6.0, 0.0, 3.0, 3.0]).unwrap();
    let o = tape.softmax_attention(q, k, v, None).unwrap();
    for row in tape.value(o).chunks(2) {
        assert!((row[0] - 3.0).abs() < 1e-12 && (row[1] - 2.0).abs() < 1e-12);
    }

    let empty = tape.constant(&[1, 2, 0], vec![]).unwrap();
    assert!(tape.softmax_attention(empty, empty, empty, None).is_err());
}

#[test]
fn loss_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(&[2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let l = tape.mse(x, x, None).unwrap();
    assert_eq!(tape.scalar(l), 0.0);

    let p = tape.constant(&[1], vec![0.5]).unwrap();
    let t = tape.constant(&[1], vec![1.0]).unwrap();
    let l = tape.bce(p, t, None).unwrap();
    assert!((tape.scalar(l) - std::f64::consts::LN_2).abs() < 1e-12);

    let bad = tape.constant(&[1], vec![1.5]).unwrap();
    assert!(tape.bce(p, bad, None).is_err());

    let zeros = Tensor::<f64>::zeros(&[2, 2]);
    let y = tape.constant(&[2, 2], vec![1.0; 4]).unwrap();
    let l = tape.mse(x, y, Some(&zeros)).unwrap();
    assert_eq!(tape.scalar(l), 0.0);
    assert_eq!(tape.warnings().len(), 1);
}

#[test]
fn masked_mse_equals_cropped_mse() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let p: Vec<f64> = (0..64).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let t: Vec<f64> = (0..64).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let m: Vec<f64> = (0..64).map(|_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 }).collect();
        let count = m.iter().filter(|&&v| v == 1.0).count();
        if count == 0 {
            continue;
        }
        let direct: f64 = (0..64)
            .filter(|&i| m[i] == 1.0)
            .map(|i| (p[i] - t[i]).powi(2))
            .sum::<f64>()
            / count as f64;
        let mut tape = Tape::<f64>::new();
        let pv = tape.constant(&[8, 8], p).unwrap();
        let tv = tape.constant(&[8, 8], t).unwrap();
        let mask = Tensor::new(&[8, 8], m).unwrap();
        let l = tape.mse(pv, tv, Some(&mask)).unwrap();
        assert!((tape.scalar(l) - direct).abs() < 1e-12);
    }
}

#[test]
fn backward_examples_and_errors() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(&Tensor::new(&[3], vec![1.0, -2.0, 5.0]).unwrap().with_grad());
    let s = tape.sum(x).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    assert_eq!(tape.backward(s), Err(spatial_mtl::autodiff::AutodiffError::BackwardTwice));

    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(&Tensor::scalar(3.0).with_grad());
    let y = tape.leaf(&Tensor::scalar(4.0).with_grad());
    let xy = tape.mul(x, y).unwrap();
    tape.backward(xy).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[4.0]);
    assert_eq!(tape.grad(y).unwrap(), &[3.0]);

    let mut tape = Tape::<f64>::new();
    let v = tape.leaf(&Tensor::new(&[2], vec![1.0, 2.0]).unwrap().with_grad());
    assert!(matches!(
        tape.backward(v),
        Err(spatial_mtl::autodiff::AutodiffError::NotScalar(_))
    ));
    let mut other = Tape::<f64>::new();
    assert_eq!(other.backward(v), Err(spatial_mtl::autodiff::AutodiffError::ForeignVar));
}

#[test]
fn gradients_are_deterministic() {
    let run = || {
        let inputs = common::case_inputs(Case::Conv2dStrided, 9);
        let mut tape = Tape::<f32>::new();
        let cast: Vec<Tensor<f32>> = inputs.iter().map(|t| t.cast()).collect();
        let x = tape.leaf(&cast[0]);
        let k = tape.leaf(&cast[1]);
        let y = tape.conv2d(x, k, ConvParams::new(2, 0)).unwrap();
        let t = tape.tanh(y).unwrap();
        let s = tape.sum(t).unwrap();
        tape.backward(s).unwrap();
        let bits: Vec<u32> = tape.grad(k).unwrap().iter().map(|g| g.to_bits()).collect();
        bits
    };
    assert_eq!(run(), run());
}
