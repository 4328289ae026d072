use super::*;
use ndarray::{Array1, Array2, Array4, ArrayD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn rand_arr(shape: &[usize], rng: &mut ChaCha12Rng) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(-1.0..1.0))
}

/// Compare tape gradients against central finite differences, elementwise.
fn gradcheck<F>(inputs: &[ArrayD<f64>], build: F, tol: f64)
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> NodeId,
{
    let eval = |arrays: &[ArrayD<f64>]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = arrays.iter().map(|a| tape.var(a.clone())).collect();
        let root = build(&mut tape, &ids);
        tape.scalar(root)
    };

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|a| tape.var(a.clone())).collect();
    let root = build(&mut tape, &ids);
    let grads = tape.backward(root);

    let h = 1e-5;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(ids[k])
            .cloned()
            .unwrap_or_else(|| ArrayD::zeros(input.raw_dim()));
        for flat in 0..input.len() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            plus[k].as_slice_mut().unwrap()[flat] += h;
            minus[k].as_slice_mut().unwrap()[flat] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.as_slice().unwrap()[flat];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (a - numeric).abs() / denom < tol,
                "input {k} element {flat}: analytic {a} vs numeric {numeric}"
            );
        }
    }
}

#[test]
fn gradcheck_conv_bias_lrelu() {
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let x = rand_arr(&[2, 2, 6, 4], &mut rng);
    let w = rand_arr(&[3, 2, 3, 3], &mut rng);
    let b = rand_arr(&[3], &mut rng);
    gradcheck(
        &[x, w, b],
        |tape, ids| {
            let c = tape.conv2d(ids[0], ids[1], 2, 1);
            let c = tape.bias_channel(c, ids[2]);
            let a = tape.leaky_relu(c, 0.2);
            tape.mean_all(a)
        },
        1e-6,
    );
}

#[test]
fn gradcheck_dense_tanh() {
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    let x = rand_arr(&[3, 5], &mut rng);
    let w = rand_arr(&[5, 4], &mut rng);
    let b = rand_arr(&[4], &mut rng);
    gradcheck(
        &[x, w, b],
        |tape, ids| {
            let m = tape.matmul(ids[0], ids[1]);
            let m = tape.bias_row(m, ids[2]);
            let t = tape.tanh(m);
            tape.mean_all(t)
        },
        1e-6,
    );
}

#[test]
fn gradcheck_spatial_ops() {
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let x = rand_arr(&[1, 2, 4, 4], &mut rng);
    gradcheck(
        &[x],
        |tape, ids| {
            let up = tape.upsample2(ids[0]);
            let mp = tape.max_pool2(up);
            let ap = tape.avg_pool(mp, 2);
            tape.mean_all(ap)
        },
        1e-5,
    );
}

#[test]
fn gradcheck_concat_reshape_abs() {
    let mut rng = ChaCha12Rng::seed_from_u64(4);
    let a = rand_arr(&[2, 3], &mut rng);
    let b = rand_arr(&[2, 2], &mut rng);
    gradcheck(
        &[a, b],
        |tape, ids| {
            let c = tape.concat(&[ids[0], ids[1]], 1);
            let r = tape.reshape(c, &[2, 5]);
            let ab = tape.abs(r);
            let per = tape.mean_per_sample(ab);
            tape.dot_const(per, Array1::from_vec(vec![0.25, 0.75]))
        },
        1e-6,
    );
}

#[test]
fn gradcheck_arithmetic() {
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let a = rand_arr(&[3, 3], &mut rng);
    let b = rand_arr(&[3, 3], &mut rng);
    let mask = rand_arr(&[3, 3], &mut rng);
    gradcheck(
        &[a, b],
        move |tape, ids| {
            let s = tape.add(ids[0], ids[1]);
            let d = tape.sub(s, ids[1]);
            let m = tape.mul(d, ids[1]);
            let mc = tape.mul_const(m, mask.clone());
            let sc = tape.scale(mc, -1.7);
            tape.mean_all(sc)
        },
        1e-6,
    );
}

#[test]
fn constants_do_not_accumulate_gradients() {
    let mut tape = Tape::<f64>::new();
    let c = tape.constant(ArrayD::from_elem(IxDyn(&[2, 2]), 1.0));
    let v = tape.var(ArrayD::from_elem(IxDyn(&[2, 2]), 2.0));
    let m = tape.mul(c, v);
    let root = tape.mean_all(m);
    let grads = tape.backward(root);
    assert!(grads.get(c).is_none());
    assert!(grads.get(v).is_some());
}

#[test]
fn gradients_accumulate_across_shared_use() {
    // f(v) = mean(v * v) => df/dv = 2v/n; the var feeds two op inputs.
    let mut tape = Tape::<f64>::new();
    let v = tape.var(ArrayD::from_shape_vec(IxDyn(&[1, 2]), vec![3.0, -2.0]).unwrap());
    let m = tape.mul(v, v);
    let root = tape.mean_all(m);
    let grads = tape.backward(root);
    let g = grads.wrt(v);
    assert!((g.as_slice().unwrap()[0] - 3.0).abs() < 1e-12);
    assert!((g.as_slice().unwrap()[1] + 2.0).abs() < 1e-12);
}

/// Tiny leaky-relu MLP critic for validating the gradient-penalty machinery:
/// score(x) = w2 . lrelu(W1 x + b1).
struct TinyCritic {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
}

const TINY_ALPHA: f64 = 0.2;

impl TinyCritic {
    fn new(rng: &mut ChaCha12Rng, d_in: usize, d_h: usize) -> Self {
        TinyCritic {
            w1: Array2::from_shape_fn((d_in, d_h), |_| rng.random_range(-0.5..0.5)),
            b1: Array1::from_shape_fn(d_h, |_| rng.random_range(-0.1..0.1)),
            w2: Array2::from_shape_fn((d_h, 1), |_| rng.random_range(-0.5..0.5)),
        }
    }

    fn bind(&self, tape: &mut Tape<f64>) -> [NodeId; 3] {
        [
            tape.var(self.w1.clone().into_dyn()),
            tape.var(self.b1.clone().into_dyn()),
            tape.var(self.w2.clone().into_dyn()),
        ]
    }

    /// Primal score for a (1, d_in) input node.
    fn forward(&self, tape: &mut Tape<f64>, params: [NodeId; 3], x: NodeId) -> NodeId {
        let h = tape.matmul(x, params[0]);
        let h = tape.bias_row(h, params[1]);
        let h = tape.leaky_relu(h, TINY_ALPHA);
        tape.matmul(h, params[2])
    }

    /// Directional derivative of the score along constant direction `u`,
    /// built from first-order ops (tangent of each layer).
    fn forward_tangent(
        &self,
        tape: &mut Tape<f64>,
        params: [NodeId; 3],
        x: NodeId,
        u: ArrayD<f64>,
    ) -> NodeId {
        let pre = tape.matmul(x, params[0]);
        let pre = tape.bias_row(pre, params[1]);
        // lrelu mask from the primal pre-activation, held constant.
        let mask = tape
            .value(pre)
            .mapv(|e| if e > 0.0 { 1.0 } else { TINY_ALPHA });
        let t = tape.constant(u);
        let t = tape.matmul(t, params[0]);
        let t = tape.mul_const(t, mask);
        tape.matmul(t, params[2])
    }

    /// Gradient penalty (||grad_x score|| - 1)^2 and its parameter gradients.
    fn penalty_and_param_grads(&self, x: &Array2<f64>) -> (f64, Vec<ArrayD<f64>>) {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape);
        let xn = tape.var(x.clone().into_dyn());
        let score = self.forward(&mut tape, params, xn);
        let grads = tape.backward(score);
        let gx = grads.wrt(xn).clone();
        let norm = gx.iter().map(|v| v * v).sum::<f64>().sqrt();
        let penalty = (norm - 1.0) * (norm - 1.0);

        // d penalty / d theta = 2 (norm - 1) * d norm / d theta, and
        // d norm / d theta is the parameter gradient of the directional
        // derivative along u = gx / norm.
        let u = gx.mapv(|v| v / norm);
        let tangent = self.forward_tangent(&mut tape, params, xn, u);
        let tgrads = tape.backward(tangent);
        let coeff = 2.0 * (norm - 1.0);
        // A bias has no path into the tangent stream of a piecewise-linear
        // critic, so its penalty gradient is identically zero.
        let pgrads = params
            .iter()
            .map(|&p| match tgrads.get(p) {
                Some(g) => g.mapv(|v| v * coeff),
                None => ArrayD::zeros(tape.value(p).raw_dim()),
            })
            .collect();
        (penalty, pgrads)
    }

    fn penalty_value(&self, x: &Array2<f64>) -> f64 {
        self.penalty_and_param_grads(x).0
    }
}

#[test]
fn gradient_penalty_parameter_gradients_match_finite_differences() {
    // The WGAN-GP critic update needs d/d_theta of (||grad_x D|| - 1)^2.
    // Validate the directional-derivative construction against finite
    // differences on every parameter of a tiny critic.
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let critic = TinyCritic::new(&mut rng, 6, 5);
    let x = Array2::from_shape_fn((1, 6), |_| rng.random_range(-1.0..1.0));

    let (_, pgrads) = critic.penalty_and_param_grads(&x);

    let h = 1e-6;
    let mut check = |get: &dyn Fn(&TinyCritic) -> &Array2<f64>,
                     make: &dyn Fn(&TinyCritic, Array2<f64>) -> TinyCritic,
                     analytic: &ArrayD<f64>| {
        let base = get(&critic).clone();
        for flat in 0..base.len() {
            let mut plus = base.clone();
            plus.as_slice_mut().unwrap()[flat] += h;
            let mut minus = base.clone();
            minus.as_slice_mut().unwrap()[flat] -= h;
            let fp = make(&critic, plus).penalty_value(&x);
            let fm = make(&critic, minus).penalty_value(&x);
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.as_slice().unwrap()[flat];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (a - numeric).abs() / denom < 1e-5,
                "element {flat}: analytic {a} vs numeric {numeric}"
            );
        }
    };

    check(
        &|c| &c.w1,
        &|c, w1| TinyCritic {
            w1,
            b1: c.b1.clone(),
            w2: c.w2.clone(),
        },
        &pgrads[0],
    );
    check(
        &|c| &c.w2,
        &|c, w2| TinyCritic {
            w1: c.w1.clone(),
            b1: c.b1.clone(),
            w2,
        },
        &pgrads[2],
    );

    // b1 is rank 1; handle separately.
    let base = critic.b1.clone();
    for flat in 0..base.len() {
        let mut plus = base.clone();
        plus[flat] += h;
        let mut minus = base.clone();
        minus[flat] -= h;
        let fp = TinyCritic {
            w1: critic.w1.clone(),
            b1: plus,
            w2: critic.w2.clone(),
        }
        .penalty_value(&x);
        let fm = TinyCritic {
            w1: critic.w1.clone(),
            b1: minus,
            w2: critic.w2.clone(),
        }
        .penalty_value(&x);
        let numeric = (fp - fm) / (2.0 * h);
        let a = pgrads[1].as_slice().unwrap()[flat];
        let denom = a.abs().max(numeric.abs()).max(1e-6);
        assert!(
            (a - numeric).abs() / denom < 1e-5,
            "b1 element {flat}: analytic {a} vs numeric {numeric}"
        );
    }
}
