//! Finite-difference oracle shared by the gradient and acceptance suites.
#![allow(dead_code)]

pub mod canny_ref;
pub mod ensemble_ref;
pub mod model_fixtures;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spatial_mtl::autodiff::{ConvParams, Real, Tape, Tensor, Var};

/// One differentiable op under test. Every case reduces its output to a
/// scalar with a constant random probe so all output cells matter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Case {
    MatMul,
    Add,
    Sub,
    Mul,
    MulScalar,
    Scale,
    Relu,
    Sigmoid,
    Tanh,
    RowBias,
    ChannelBias,
    LayerNorm,
    Attention,
    AttentionMasked,
    Reshape,
    Permute,
    Gather,
    Concat,
    Conv2d,
    Conv2dStrided,
    ConvTranspose,
    ConvTransposePadded,
    Sum,
    Mean,
    Mse,
    MseMasked,
    Bce,
    BceMasked,
    SoftmaxCrossEntropy,
}

impl Case {
    pub const ALL: &'static [Case] = &[
        Case::MatMul,
        Case::Add,
        Case::Sub,
        Case::Mul,
        Case::MulScalar,
        Case::Scale,
        Case::Relu,
        Case::Sigmoid,
        Case::Tanh,
        Case::RowBias,
        Case::ChannelBias,
        Case::LayerNorm,
        Case::Attention,
        Case::AttentionMasked,
        Case::Reshape,
        Case::Permute,
        Case::Gather,
        Case::Concat,
        Case::Conv2d,
        Case::Conv2dStrided,
        Case::ConvTranspose,
        Case::ConvTransposePadded,
        Case::Sum,
        Case::Mean,
        Case::Mse,
        Case::MseMasked,
        Case::Bce,
        Case::BceMasked,
        Case::SoftmaxCrossEntropy,
    ];

    /// Input shapes; `(shape, trainable, range)` where range picks values.
    fn spec(&self) -> Vec<(Vec<usize>, bool, Range)> {
        use Range::*;
        let t = true;
        match self {
            Case::MatMul => vec![(vec![4, 4], t, Sym), (vec![4, 4], t, Sym)],
            Case::Add | Case::Sub | Case::Mul => vec![(vec![3, 5], t, Sym), (vec![3, 5], t, Sym)],
            Case::MulScalar => vec![(vec![3, 5], t, Sym), (vec![], t, Sym)],
            Case::Scale | Case::Sigmoid | Case::Tanh | Case::Sum | Case::Mean | Case::Reshape => {
                vec![(vec![3, 4], t, Sym)]
            }
            Case::Relu => vec![(vec![3, 4], t, AwayFromZero)],
            Case::RowBias => vec![(vec![3, 4], t, Sym), (vec![4], t, Sym)],
            Case::ChannelBias => vec![(vec![2, 3, 2, 2], t, Sym), (vec![3], t, Sym)],
            Case::LayerNorm => vec![(vec![3, 5], t, Sym), (vec![5], t, Sym), (vec![5], t, Sym)],
            Case::Attention | Case::AttentionMasked => {
                vec![(vec![1, 3, 4], t, Sym), (vec![1, 3, 4], t, Sym), (vec![1, 3, 4], t, Sym)]
            }
            Case::Permute => vec![(vec![2, 3, 4], t, Sym)],
            Case::Gather => vec![(vec![4, 3], t, Sym)],
            Case::Concat => vec![(vec![2, 3], t, Sym), (vec![1, 3], t, Sym)],
            Case::Conv2d => vec![(vec![1, 8, 8], t, Sym), (vec![2, 1, 3, 3], t, Sym)],
            Case::Conv2dStrided => vec![(vec![2, 2, 7, 7], t, Sym), (vec![3, 2, 3, 3], t, Sym)],
            Case::ConvTranspose => vec![(vec![2, 2, 3, 3], t, Sym), (vec![2, 3, 2, 2], t, Sym)],
            Case::ConvTransposePadded => vec![(vec![1, 2, 4, 4], t, Sym), (vec![2, 1, 3, 3], t, Sym)],
            Case::Mse => vec![(vec![4, 4], t, Sym), (vec![4, 4], t, Sym)],
            Case::MseMasked => vec![(vec![4, 4], t, Sym), (vec![4, 4], t, Sym), (vec![4, 4], false, Binary)],
            Case::Bce => vec![(vec![4, 4], t, Prob), (vec![4, 4], t, Prob)],
            Case::BceMasked => vec![(vec![4, 4], t, Prob), (vec![4, 4], t, Prob), (vec![4, 4], false, Binary)],
            Case::SoftmaxCrossEntropy => vec![(vec![4, 2], t, Sym)],
        }
    }

    fn output_is_scalar(&self) -> bool {
        matches!(
            self,
            Case::Sum
                | Case::Mean
                | Case::Mse
                | Case::MseMasked
                | Case::Bce
                | Case::BceMasked
                | Case::SoftmaxCrossEntropy
        )
    }

    /// The op itself, unreduced.
    fn apply<T: Real>(&self, tape: &mut Tape<T>, v: &[Var], inputs: &[Tensor<T>]) -> Var {
        match self {
            Case::MatMul => tape.matmul(v[0], v[1]),
            Case::Add => tape.add(v[0], v[1]),
            Case::Sub => tape.sub(v[0], v[1]),
            Case::Mul | Case::MulScalar => tape.mul(v[0], v[1]),
            Case::Scale => tape.scale(v[0], T::of(-1.7)),
            Case::Relu => tape.relu(v[0]),
            Case::Sigmoid => tape.sigmoid(v[0]),
            Case::Tanh => tape.tanh(v[0]),
            Case::RowBias => tape.add_row_bias(v[0], v[1]),
            Case::ChannelBias => tape.add_channel_bias(v[0], v[1]),
            Case::LayerNorm => tape.layer_norm(v[0], v[1], v[2], T::of(1e-5)),
            Case::Attention => tape.softmax_attention(v[0], v[1], v[2], None),
            Case::AttentionMasked => {
                tape.softmax_attention(v[0], v[1], v[2], Some(&[true, false, true]))
            }
            Case::Reshape => tape.reshape(v[0], &[2, 6]),
            Case::Permute => tape.permute(v[0], &[2, 0, 1]),
            Case::Gather => tape.gather_rows(v[0], &[3, 0, 3, 1, 2]),
            Case::Concat => tape.concat_rows(&[v[0], v[1], v[0]]),
            Case::Conv2d => tape.conv2d(v[0], v[1], ConvParams::new(1, 1)),
            Case::Conv2dStrided => tape.conv2d(v[0], v[1], ConvParams::new(2, 0)),
            Case::ConvTranspose => tape.conv_transpose2d(v[0], v[1], ConvParams::new(2, 0)),
            Case::ConvTransposePadded => tape.conv_transpose2d(v[0], v[1], ConvParams::new(2, 1)),
            Case::Sum => tape.sum(v[0]),
            Case::Mean => tape.mean(v[0]),
            Case::Mse => tape.mse(v[0], v[1], None),
            Case::MseMasked => tape.mse(v[0], v[1], Some(&inputs[2])),
            Case::Bce => tape.bce(v[0], v[1], None),
            Case::BceMasked => tape.bce(v[0], v[1], Some(&inputs[2])),
            Case::SoftmaxCrossEntropy => tape.softmax_cross_entropy(v[0], &[0, 1, 1, 0]),
        }
        .expect("op builds")
    }

    /// The op reduced to a scalar; non-scalar outputs are dotted with the
    /// probe, which is the last input.
    fn build<T: Real>(&self, tape: &mut Tape<T>, v: &[Var], inputs: &[Tensor<T>]) -> Var {
        let out = self.apply(tape, v, inputs);
        if self.output_is_scalar() {
            return out;
        }
        let shape = tape.shape(out).to_vec();
        let probe = tape.reshape(*v.last().unwrap(), &shape).unwrap();
        let prod = tape.mul(out, probe).unwrap();
        tape.sum(prod).unwrap()
    }

    fn probe_len(&self, inputs: &[Tensor<f64>]) -> usize {
        if self.output_is_scalar() {
            return 0;
        }
        let mut tape = Tape::<f64>::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
        let out = self.apply(&mut tape, &vars, inputs);
        tape.value(out).len()
    }
}

#[derive(Debug, Clone, Copy)]
enum Range {
    Sym,
    AwayFromZero,
    Prob,
    Binary,
}

fn sample(rng: &mut ChaCha8Rng, shape: &[usize], range: Range) -> Vec<f64> {
    let n: usize = shape.iter().product();
    (0..n)
        .map(|_| match range {
            Range::Sym => rng.gen_range(-1.0..1.0),
            Range::AwayFromZero => {
                let m: f64 = rng.gen_range(0.1..1.0);
                if rng.gen_bool(0.5) {
                    m
                } else {
                    -m
                }
            }
            Range::Prob => rng.gen_range(0.1..0.9),
            Range::Binary => {
                if rng.gen_bool(0.6) {
                    1.0
                } else {
                    0.0
                }
            }
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖ + ‖b‖, tiny)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (na + nb).max(1e-30)
}

/// Analytic gradients of every trainable input at precision `T`, flattened.
fn analytic<T: Real>(case: Case, inputs: &[Tensor<f64>]) -> Vec<f64> {
    let cast: Vec<Tensor<T>> = inputs.iter().map(|t| t.cast::<T>()).collect();
    let mut tape = Tape::<T>::new();
    let vars: Vec<Var> = cast.iter().map(|t| tape.leaf(t)).collect();
    let loss = case.build(&mut tape, &vars, &cast);
    tape.backward(loss).unwrap();
    let mut out = Vec::new();
    for (t, v) in cast.iter().zip(&vars) {
        if t.requires_grad {
            let g = tape.grad(*v).map(|g| g.to_vec()).unwrap_or_else(|| vec![T::zero(); t.len()]);
            out.extend(g.iter().map(|x| x.as_f64()));
        }
    }
    out
}

fn value_f64(case: Case, inputs: &[Tensor<f64>]) -> f64 {
    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let loss = case.build(&mut tape, &vars, inputs);
    tape.scalar(loss)
}

/// Central finite differences in 64-bit arithmetic.
fn numeric(case: Case, inputs: &[Tensor<f64>], h: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut work = inputs.to_vec();
    for i in 0..work.len() {
        if !work[i].requires_grad {
            continue;
        }
        for j in 0..work[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = value_f64(case, &work);
            work[i].data_mut()[j] = orig - h;
            let minus = value_f64(case, &work);
            work[i].data_mut()[j] = orig;
            out.push((plus - minus) / (2.0 * h));
        }
    }
    out
}

pub fn case_inputs(case: Case, seed: u64) -> Vec<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs: Vec<Tensor<f64>> = case
        .spec()
        .into_iter()
        .map(|(shape, trainable, range)| {
            let t = Tensor::new(&shape, sample(&mut rng, &shape, range)).unwrap();
            if trainable {
                t.with_grad()
            } else {
                t
            }
        })
        .collect();
    let probe_len = case.probe_len(&inputs);
    if probe_len > 0 {
        let probe = sample(&mut rng, &[probe_len], Range::Sym);
        inputs.push(Tensor::new(&[probe_len], probe).unwrap());
    }
    inputs
}

/// Returns `(64-bit error, 32-bit error)` against the finite-difference oracle.
pub fn check_case(case: Case, seed: u64) -> (f64, f64) {
    let inputs = case_inputs(case, seed);
    let fd = numeric(case, &inputs, 1e-5);
    let a64 = analytic::<f64>(case, &inputs);
    let a32 = analytic::<f32>(case, &inputs);
    (relative_error(&a64, &fd), relative_error(&a32, &fd))
}
