use jointscore_nn::{bce_loss, grad_check, grad_check_with, CheckLoss, GraphBuilder, Network, Padding, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    Tensor::from_f64(shape, &(0..n).map(|_| rng.gen_range(lo..hi)).collect::<Vec<_>>()).unwrap()
}

fn dense_sigmoid() -> Network<f64> {
    let mut b = GraphBuilder::<f64>::new(&[6], 3);
    let h = b.dense(0, 8, "d1").unwrap();
    let h = b.sigmoid(h).unwrap();
    let o = b.dense(h, 3, "d2").unwrap();
    let o = b.sigmoid(o).unwrap();
    b.finish(o).unwrap()
}

fn conv_pool_dense() -> Network<f64> {
    let mut b = GraphBuilder::<f64>::new(&[2, 8, 8], 5);
    let c = b.conv_relu(0, 4, 3, "c1").unwrap();
    let p = b.max_pool(c).unwrap();
    let c = b.conv(p, 3, 3, Padding::Valid, "c2").unwrap();
    let f = b.flatten(c).unwrap();
    let d = b.dense(f, 4, "d").unwrap();
    let o = b.sigmoid(d).unwrap();
    b.finish(o).unwrap()
}

/// Encoder/decoder with a skip connection: covers upsample and concat.
fn tiny_unet() -> Network<f64> {
    let mut b = GraphBuilder::<f64>::new(&[1, 8, 8], 9);
    let e = b.conv_relu(0, 3, 3, "e").unwrap();
    let p = b.max_pool(e).unwrap();
    let m = b.conv_relu(p, 4, 3, "m").unwrap();
    let k1 = b.conv(m, 2, 1, Padding::Same, "k1").unwrap();
    let k5 = b.conv(m, 2, 5, Padding::Same, "k5").unwrap();
    let cat = b.concat(&[k1, k5]).unwrap();
    let u = b.upsample(cat).unwrap();
    let s = b.concat(&[u, e]).unwrap();
    let o = b.conv(s, 1, 3, Padding::Same, "o").unwrap();
    let o = b.sigmoid(o).unwrap();
    b.finish(o).unwrap()
}

#[test]
fn dense_sigmoid_gradients_are_tight() {
    let net = dense_sigmoid();
    let x = random(&[6], 1, -1.0, 1.0);
    let t = random(&[3], 2, 0.0, 1.0);
    let err = grad_check(&net, &x, &t, 1e-5).unwrap();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn conv_pool_dense_gradients_match() {
    let net = conv_pool_dense();
    let x = random(&[2, 8, 8], 3, -1.0, 1.0);
    let t = random(&[4], 4, 0.0, 1.0);
    let r = grad_check_with(&net, &x, &t, 1e-5, CheckLoss::Bce, 150, 7).unwrap();
    assert!(r.checked >= 100);
    assert!(r.max_rel_error < 1e-3, "{r:?}");
}

#[test]
fn unet_like_gradients_match() {
    let net = tiny_unet();
    let x = random(&[1, 8, 8], 5, 0.0, 1.0);
    let t = random(&[1, 8, 8], 6, 0.0, 1.0).map(|v| if v > 0.5 { 1.0 } else { 0.0 });
    let r = grad_check_with(&net, &x, &t, 1e-5, CheckLoss::Bce, 200, 1).unwrap();
    assert!(r.max_rel_error < 1e-3, "{r:?}");
}

#[test]
fn planted_gradient_bug_is_flagged() {
    // Doubling a conv weight's contribution to the loss makes the true
    // gradient half the analytic one we report below.
    let net = conv_pool_dense();
    let x = random(&[2, 8, 8], 3, -1.0, 1.0);
    let t = random(&[4], 4, 0.0, 1.0);
    let trace = net.forward(&x).unwrap();
    let (_, up) = jointscore_nn::sum_squared_error(trace.output(), &t).unwrap();
    let mut g = net.params().zero_gradients();
    net.backward(&trace, &up, &mut g, false).unwrap();
    let wid = net.params().id("c1.weight").unwrap();
    let analytic = g.tensors[wid].data().to_vec();

    let mut worst: f64 = 0.0;
    let mut work = net.clone();
    for (i, &a) in analytic.iter().enumerate().take(20) {
        let orig = work.params().by_id(wid).value.data()[i];
        let eval = |w: &Network<f64>| {
            let y = w.predict(&x).unwrap();
            jointscore_nn::sum_squared_error(&y, &t).unwrap().0
        };
        work.params_mut().by_id_mut(wid).value.data_mut()[i] = orig + 1e-5;
        let lp = eval(&work);
        work.params_mut().by_id_mut(wid).value.data_mut()[i] = orig - 1e-5;
        let lm = eval(&work);
        work.params_mut().by_id_mut(wid).value.data_mut()[i] = orig;
        let num = (lp - lm) / 2e-5;
        if num.abs() > 1e-3 {
            worst = worst.max((2.0 * a - num).abs() / num.abs());
        }
    }
    assert!((worst - 1.0).abs() < 1e-3, "{worst}");
}

#[test]
fn bce_loss_gradient_matches_finite_differences() {
    let p = random(&[50], 8, 0.05, 0.95);
    let y = random(&[50], 9, 0.0, 1.0).map(|v| v.round());
    let (_, g) = bce_loss(&p, &y).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let mut pp = p.clone();
        pp.data_mut()[i] += h;
        let mut pm = p.clone();
        pm.data_mut()[i] -= h;
        let num = (bce_loss(&pp, &y).unwrap().0 - bce_loss(&pm, &y).unwrap().0) / (2.0 * h);
        worst = worst.max((g.data()[i] - num).abs() / num.abs());
    }
    assert!(worst < 1e-5, "{worst}");
}

#[test]
fn forward_is_deterministic() {
    let a = tiny_unet();
    let b = tiny_unet();
    let x = random(&[1, 8, 8], 5, 0.0, 1.0);
    assert_eq!(a.predict(&x).unwrap(), b.predict(&x).unwrap());
}
