use super::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_values(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn mean_of_square_gradient() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::param(vec![1], vec![3.0]));
    let sq = tape.mul(x, x);
    let loss = tape.mean_reduce(sq);
    assert_eq!(tape.values(loss), &[9.0]);
    let grads = tape.backward(loss);
    assert_eq!(grads.get(x).unwrap(), &[6.0]);
}

#[test]
fn unused_parameter_gets_zero_gradient() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::param(vec![2], vec![1.0, 2.0]));
    let unused = tape.constant(Tensor::param(vec![3], vec![5.0, 6.0, 7.0]));
    let loss = tape.mean_reduce(x);
    let grads = tape.backward(loss);
    assert!(grads.get(unused).is_none());
    assert_eq!(grads.get_or_zeros(unused, 3), vec![0.0; 3]);
}

#[test]
fn activation_values() {
    assert_eq!(gelu(0.0), 0.0);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]));
    let r = tape.relu(x);
    assert_eq!(tape.values(r), &[0.0, 0.0, 2.0]);
    let g = tape.gelu(x);
    assert_eq!(tape.values(g)[1], 0.0);
    assert!(tape.values(g)[0] < 0.0 && tape.values(g)[0] > -0.2);
}

#[test]
fn channel_linear_identity() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![3, 4, 4], random_values(&mut rng(1), 48)));
    let eye = Tensor::new(
        vec![3, 3],
        (0..9).map(|i| if i % 4 == 0 { 1.0 } else { 0.0 }).collect(),
    );
    let w = tape.constant(eye);
    let b = tape.constant(Tensor::zeros(vec![3]));
    let y = tape.channel_linear(x, w, b);
    assert_eq!(tape.values(y), tape.values(x));
}

#[test]
fn spectral_all_ones_full_modes_is_identity_on_bandlimited_field() {
    // 8x8 grid, full mode blocks (4,4). Column-Nyquist content (|f_x| = 4) is
    // outside the representable set, so the test field avoids it.
    let (h, w) = (8usize, 8usize);
    let mut values = vec![0.0; h * w];
    for (idx, v) in values.iter_mut().enumerate() {
        let (y, x) = ((idx / w) as f64, (idx % w) as f64);
        *v = 1.3 + (2.0 * PI * (3.0 * y / 8.0 + 2.0 * x / 8.0)).cos()
            + 0.7 * (2.0 * PI * (4.0 * y / 8.0 + 1.0 * x / 8.0)).sin()
            - 0.4 * (2.0 * PI * (1.0 * y / 8.0 - 3.0 * x / 8.0)).cos();
    }
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![1, h, w], values.clone()));
    let ones = |len: usize| {
        Tensor::new(
            vec![1, 1, 4, 4, 2],
            (0..len).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect(),
        )
    };
    let wp = tape.constant(ones(32));
    let wn = tape.constant(ones(32));
    let y = tape.spectral_conv(x, wp, wn, 4, 4);
    for (a, b) in tape.values(y).iter().zip(values.iter()) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut r = rng(99);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2, 8, 8], random_values(&mut r, 128)));
        let wp = tape.constant(Tensor::new(vec![2, 2, 3, 3, 2], random_values(&mut r, 72)));
        let wn = tape.constant(Tensor::new(vec![2, 2, 3, 3, 2], random_values(&mut r, 72)));
        let s = tape.spectral_conv(x, wp, wn, 3, 3);
        let g = tape.gelu(s);
        let loss = tape.l2_norm(g);
        tape.values(loss)[0]
    };
    assert_eq!(run().to_bits(), run().to_bits());
}

/// Builds a loss from a flat parameter vector; returns the loss node and the
/// registered parameter nodes in `theta` slice order.
type Builder = dyn Fn(&mut Tape, &[f64]) -> (NodeId, Vec<NodeId>);

fn check(builder: &Builder, theta: &[f64], eps: f64) -> f64 {
    let analytic = {
        let mut tape = Tape::new();
        let (loss, params) = builder(&mut tape, theta);
        let mut grads = tape.backward(loss);
        let mut flat = Vec::with_capacity(theta.len());
        for p in params {
            let len = tape.values(p).len();
            flat.extend(match grads.take(p) {
                Some(g) => g,
                None => vec![0.0; len],
            });
        }
        flat
    };
    gradient_check(
        |t| {
            let mut tape = Tape::new();
            let (loss, _) = builder(&mut tape, t);
            tape.values(loss)[0]
        },
        theta,
        &analytic,
        eps,
    )
}

/// Wraps a field-shaped output into a scalar by a fixed random probe so every
/// output element receives a distinct cotangent.
fn probe_loss(tape: &mut Tape, out: NodeId, seed: u64) -> NodeId {
    let len = tape.values(out).len();
    let probe = tape.constant(Tensor::new(
        tape.shape(out).to_vec(),
        random_values(&mut rng(seed), len),
    ));
    let mixed = tape.mul(out, probe);
    tape.mean_reduce(mixed)
}

#[test]
fn gradcheck_elementwise_and_reductions() {
    let mut r = rng(7);
    let theta = random_values(&mut r, 24);
    // add/sub/mul/scale chain: both halves of theta participate.
    let dev = check(
        &|tape, t| {
            let a = tape.constant(Tensor::param(vec![2, 2, 3], t[..12].to_vec()));
            let b = tape.constant(Tensor::param(vec![2, 2, 3], t[12..].to_vec()));
            let s = tape.add(a, b);
            let d = tape.sub(s, b);
            let m = tape.mul(d, b);
            let sc = tape.scale(m, -0.7);
            (probe_loss(tape, sc, 1), vec![a, b])
        },
        &theta,
        1e-5,
    );
    assert!(dev < 1e-4, "elementwise dev {dev}");

    let dev = check(
        &|tape, t| {
            let a = tape.constant(Tensor::param(vec![2, 2, 2], t.to_vec()));
            let n = tape.l2_norm(a);
            (n, vec![a])
        },
        &random_values(&mut r, 8),
        1e-5,
    );
    assert!(dev < 1e-4, "l2_norm dev {dev}");

    let dev = check(
        &|tape, t| {
            let a = tape.constant(Tensor::param(vec![6], t.to_vec()));
            let m = tape.mean_reduce(a);
            (m, vec![a])
        },
        &random_values(&mut r, 6),
        1e-5,
    );
    assert!(dev < 1e-4, "mean_reduce dev {dev}");
}

#[test]
fn gradcheck_activations() {
    let mut r = rng(8);
    // Keep relu inputs away from the kink.
    let theta: Vec<f64> = random_values(&mut r, 16)
        .into_iter()
        .map(|v| if v.abs() < 0.05 { v + 0.1 } else { v })
        .collect();
    let cases: [(&str, fn(&mut Tape, NodeId) -> NodeId); 2] =
        [("gelu", Tape::gelu), ("relu", Tape::relu)];
    for (name, act) in cases {
        let dev = check(
            &move |tape: &mut Tape, t: &[f64]| {
                let a = tape.constant(Tensor::param(vec![1, 4, 4], t.to_vec()));
                let y = act(tape, a);
                (probe_loss(tape, y, 2), vec![a])
            },
            &theta,
            1e-5,
        );
        assert!(dev < 1e-4, "{name} dev {dev}");
    }
}

#[test]
fn gradcheck_channel_linear() {
    let mut r = rng(9);
    let (ci, co, n) = (4usize, 4usize, 16usize);
    let mut theta = random_values(&mut r, ci * n);
    theta.extend(random_values(&mut r, co * ci));
    theta.extend(random_values(&mut r, co));
    let dev = check(
        &move |tape, t| {
            let x = tape.constant(Tensor::param(vec![ci, 4, 4], t[..ci * n].to_vec()));
            let w = tape.constant(Tensor::param(
                vec![co, ci],
                t[ci * n..ci * n + co * ci].to_vec(),
            ));
            let b = tape.constant(Tensor::param(vec![co], t[ci * n + co * ci..].to_vec()));
            let y = tape.channel_linear(x, w, b);
            (probe_loss(tape, y, 3), vec![x, w, b])
        },
        &theta,
        1e-5,
    );
    assert!(dev < 1e-4, "channel_linear dev {dev}");
}

#[test]
fn gradcheck_conv3x3() {
    let mut r = rng(10);
    let (ci, co, h, w) = (2usize, 3usize, 5usize, 6usize);
    let mut theta = random_values(&mut r, ci * h * w);
    theta.extend(random_values(&mut r, co * ci * 9));
    theta.extend(random_values(&mut r, co));
    let dev = check(
        &move |tape, t| {
            let n = ci * h * w;
            let x = tape.constant(Tensor::param(vec![ci, h, w], t[..n].to_vec()));
            let wt = tape.constant(Tensor::param(
                vec![co, ci, 3, 3],
                t[n..n + co * ci * 9].to_vec(),
            ));
            let b = tape.constant(Tensor::param(vec![co], t[n + co * ci * 9..].to_vec()));
            let y = tape.conv3x3(x, wt, b);
            (probe_loss(tape, y, 4), vec![x, wt, b])
        },
        &theta,
        1e-5,
    );
    assert!(dev < 1e-4, "conv3x3 dev {dev}");
}

#[test]
fn gradcheck_spectral_conv() {
    let mut r = rng(11);
    let (ci, co, h, w, mh, mw) = (2usize, 2usize, 8usize, 8usize, 4usize, 4usize);
    let wlen = co * ci * mh * mw * 2;
    let mut theta = random_values(&mut r, ci * h * w);
    theta.extend(random_values(&mut r, 2 * wlen));
    let dev = check(
        &move |tape, t| {
            let n = ci * h * w;
            let x = tape.constant(Tensor::param(vec![ci, h, w], t[..n].to_vec()));
            let wp = tape.constant(Tensor::param(
                vec![co, ci, mh, mw, 2],
                t[n..n + wlen].to_vec(),
            ));
            let wn = tape.constant(Tensor::param(
                vec![co, ci, mh, mw, 2],
                t[n + wlen..].to_vec(),
            ));
            let y = tape.spectral_conv(x, wp, wn, mh, mw);
            (probe_loss(tape, y, 5), vec![x, wp, wn])
        },
        &theta,
        1e-5,
    );
    assert!(dev < 1e-4, "spectral_conv dev {dev}");
}
