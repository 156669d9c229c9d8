//! Analytic gradients against central finite differences.

use mres_tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Compares the tape gradient of `f` against central differences for every
/// entry of every input, returning the worst relative error.
fn check(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let eval = |ts: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ts.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();

    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()));
        for idx in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[idx] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[idx] -= H;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let a = analytic.data()[idx];
            let rel = (a - fd).abs() / (a.abs() + 1e-8);
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn three_layer_mlp_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..3 {
        let inputs = vec![
            random(&mut rng, 4, 5, 1.0),
            random(&mut rng, 5, 7, 0.8),
            random(&mut rng, 1, 7, 0.5),
            random(&mut rng, 7, 6, 0.8),
            random(&mut rng, 1, 6, 0.5),
            random(&mut rng, 6, 1, 0.8),
        ];
        let worst = check(&inputs, |t, v| {
            let h = t.matmul(v[0], v[1]).unwrap();
            let h = t.add_row(h, v[2]).unwrap();
            let h = t.tanh(h).unwrap();
            let h = t.matmul(h, v[3]).unwrap();
            let h = t.add_row(h, v[4]).unwrap();
            let h = t.tanh(h).unwrap();
            let y = t.matmul(h, v[5]).unwrap();
            let y = t.mul(y, y).unwrap();
            t.mean(y).unwrap()
        });
        assert!(worst <= 1e-4, "worst relative error {}", worst);
    }
}

#[test]
fn attention_block_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 5;
    let d = 6;
    let inputs = vec![
        random(&mut rng, n, d, 1.0),
        random(&mut rng, d, 3 * d, 0.7),
        random(&mut rng, 1, d, 0.5),
        random(&mut rng, 1, d, 0.5),
        random(&mut rng, n, n, 0.5),
        random(&mut rng, 1, 1, 1.0),
        random(&mut rng, d, 1, 0.7),
    ];
    let mask = [false, true, false, false, false];
    let worst = check(&inputs, |t, v| {
        let x = t.layer_norm(v[0], v[2], v[3]).unwrap();
        let qkv = t.matmul(x, v[1]).unwrap();
        let mut heads = Vec::new();
        for h in 0..2 {
            let q = t.slice_cols(qkv, h * 3, 3).unwrap();
            let k = t.slice_cols(qkv, d + h * 3, 3).unwrap();
            let val = t.slice_cols(qkv, 2 * d + h * 3, 3).unwrap();
            let s = t.matmul_t(q, k).unwrap();
            let s = t.scale(s, 0.5).unwrap();
            let s = t.add(s, v[4]).unwrap();
            let a = t.masked_softmax(s, Some(&mask)).unwrap();
            heads.push(t.matmul(a, val).unwrap());
        }
        let o = t.concat(&heads).unwrap();
        let o = t.relu(o).unwrap();
        let o = t.add(o, x).unwrap();
        let g = t.mean_rows(o).unwrap();
        let sel = t.gather_rows(o, &[2, 0, 2]).unwrap();
        let sel = t.mean_rows(sel).unwrap();
        let both = t.sub(g, sel).unwrap();
        let both = t.scale_by(both, v[5]).unwrap();
        let logits = t.matmul(both, v[6]).unwrap();
        let logits = t.reshape(logits, &[1]).unwrap();
        let e = t.exp(logits).unwrap();
        let e = t.scale(e, 2.0).unwrap();
        let one = t.constant(Tensor::row(vec![1.0]));
        let e = t.add(e, one).unwrap();
        let l = t.log(e).unwrap();
        t.sum(l).unwrap()
    });
    assert!(worst <= 1e-4, "worst relative error {}", worst);
}

#[test]
fn log_softmax_pick_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = vec![random(&mut rng, 1, 6, 2.0), random(&mut rng, 6, 6, 1.0)];
    let mask = [false, false, true, false, true, false];
    let worst = check(&inputs, |t, v| {
        let u = t.matmul(v[0], v[1]).unwrap();
        let u = t.tanh(u).unwrap();
        let u = t.scale(u, 10.0).unwrap();
        let p = t.masked_softmax(u, Some(&mask)).unwrap();
        let p3 = t.pick(p, 3).unwrap();
        t.log(p3).unwrap()
    });
    assert!(worst <= 1e-4, "worst relative error {}", worst);
}

#[test]
fn fused_attention_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let (m, n, heads, dh) = (3, 5, 2, 3);
    let d = heads * dh;
    let inputs = vec![
        random(&mut rng, m, d, 1.0),
        random(&mut rng, n, d, 1.0),
        random(&mut rng, n, d, 1.0),
        random(&mut rng, m * n, heads, 0.8),
        random(&mut rng, d, 1, 0.7),
    ];
    let mask = [false, false, true, false, false];
    let worst = check(&inputs, |t, v| {
        let o = t
            .attention(v[0], v[1], v[2], Some(v[3]), heads, 0.6, Some(&mask))
            .unwrap();
        let o = t.tanh(o).unwrap();
        let y = t.matmul(o, v[4]).unwrap();
        let y = t.mul(y, y).unwrap();
        t.sum(y).unwrap()
    });
    assert!(worst <= 1e-4, "worst relative error {}", worst);
}

#[test]
fn fused_attention_agrees_with_composed_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (m, n, heads, dh) = (4, 6, 3, 2);
    let d = heads * dh;
    let q = random(&mut rng, m, d, 1.0);
    let k = random(&mut rng, n, d, 1.0);
    let v = random(&mut rng, n, d, 1.0);
    let bias = random(&mut rng, m * n, heads, 1.0);
    let mask = [true, false, false, true, false, false];

    let mut t = Tape::new();
    let (qv, kv, vv) = (t.leaf(q.clone()), t.leaf(k.clone()), t.leaf(v.clone()));
    let bv = t.leaf(bias.clone());
    let fused = t.attention(qv, kv, vv, Some(bv), heads, 0.3, Some(&mask)).unwrap();

    let mut heads_out = Vec::new();
    for h in 0..heads {
        let qh = t.slice_cols(qv, h * dh, dh).unwrap();
        let kh = t.slice_cols(kv, h * dh, dh).unwrap();
        let vh = t.slice_cols(vv, h * dh, dh).unwrap();
        let s = t.matmul_t(qh, kh).unwrap();
        let s = t.scale(s, 0.3).unwrap();
        let bh = t.slice_cols(bv, h, 1).unwrap();
        let bh = t.reshape(bh, &[m, n]).unwrap();
        let s = t.add(s, bh).unwrap();
        let a = t.masked_softmax(s, Some(&mask)).unwrap();
        heads_out.push(t.matmul(a, vh).unwrap());
    }
    let composed = t.concat(&heads_out).unwrap();
    for (a, b) in t.value(fused).data().iter().zip(t.value(composed).data()) {
        assert!((a - b).abs() < 1e-12);
    }

    // The two paths share leaves, so the gradient of their difference must
    // vanish while each half is far from zero.
    let w = t.constant(random(&mut rng, d, 1, 1.0));
    let diff = t.sub(fused, composed).unwrap();
    let l = t.matmul(diff, w).unwrap();
    let l = t.sum(l).unwrap();
    let g = t.backward(l).unwrap();
    for var in [qv, kv, vv, bv] {
        assert!(g.get(var).unwrap().data().iter().all(|x| x.abs() < 1e-12));
    }

    let mut t = Tape::new();
    let (qv, kv, vv) = (t.leaf(q), t.leaf(k), t.leaf(v));
    let bv = t.leaf(bias);
    let fused = t.attention(qv, kv, vv, Some(bv), heads, 0.3, Some(&mask)).unwrap();
    let l = t.sum(fused).unwrap();
    let g = t.backward(l).unwrap();
    assert!(g.get(qv).unwrap().data().iter().any(|x| x.abs() > 1e-3));
    assert!(g.get(bv).unwrap().data().iter().any(|x| x.abs() > 1e-3));
}

#[test]
fn row_slicing_and_stacking_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let inputs = vec![
        random(&mut rng, 5, 3, 1.0),
        random(&mut rng, 2, 3, 1.0),
        random(&mut rng, 3, 1, 1.0),
    ];
    let worst = check(&inputs, |t, v| {
        let top = t.slice_rows(v[0], 1, 3).unwrap();
        let s = t.stack_rows(&[v[1], top, v[0]]).unwrap();
        let s = t.tanh(s).unwrap();
        let y = t.matmul(s, v[2]).unwrap();
        let y = t.exp(y).unwrap();
        t.sum(y).unwrap()
    });
    assert!(worst <= 1e-4, "worst relative error {}", worst);
}
