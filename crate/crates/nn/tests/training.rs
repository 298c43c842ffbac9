use jointscore_nn::{
    bce_loss, fit, Checkpoint, Gradients, GraphBuilder, Network, NnError, Objective, Tensor, TrainConfig,
};
use proptest::prelude::*;

struct Xor;

impl Objective<f64> for Xor {
    type Sample = ([f64; 2], f64);

    fn accumulate(
        &self,
        net: &Network<f64>,
        s: &Self::Sample,
        g: &mut Gradients<f64>,
        scale: f64,
    ) -> jointscore_nn::Result<f64> {
        let x = Tensor::from_f64(&[2], &s.0)?;
        let tr = net.forward(&x)?;
        let (l, mut up) = bce_loss(tr.output(), &Tensor::from_f64(&[1], &[s.1])?)?;
        up.data_mut().iter_mut().for_each(|v| *v *= scale);
        net.backward(&tr, &up, g, false)?;
        Ok(l)
    }

    fn evaluate(&self, net: &Network<f64>, s: &Self::Sample) -> jointscore_nn::Result<f64> {
        let y = net.predict(&Tensor::from_f64(&[2], &s.0)?)?;
        Ok(bce_loss(&y, &Tensor::from_f64(&[1], &[s.1])?)?.0)
    }
}

/// Validation loss that never improves after the first epoch.
struct Plateau;

impl Objective<f64> for Plateau {
    type Sample = ();
    fn accumulate(&self, _: &Network<f64>, _: &(), _: &mut Gradients<f64>, _: f64) -> jointscore_nn::Result<f64> {
        Ok(1.0)
    }
    fn evaluate(&self, _: &Network<f64>, _: &()) -> jointscore_nn::Result<f64> {
        Ok(0.5)
    }
}

fn mlp(seed: u64) -> Network<f64> {
    let mut b = GraphBuilder::<f64>::new(&[2], seed);
    let h = b.dense(0, 8, "h").unwrap();
    let h = b.relu(h).unwrap();
    let o = b.dense(h, 1, "o").unwrap();
    let o = b.sigmoid(o).unwrap();
    b.finish(o).unwrap()
}

fn xor_data() -> Vec<([f64; 2], f64)> {
    vec![([0., 0.], 0.), ([0., 1.], 1.), ([1., 0.], 1.), ([1., 1.], 0.)]
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.05,
        batch_size: 2,
        max_epochs: epochs,
        early_stop_patience: None,
        seed: 11,
    }
}

#[test]
fn learns_xor() {
    let mut net = mlp(4);
    let h = fit(&mut net, &Xor, &xor_data(), &[], &cfg(400), |_, _| 1.0).unwrap();
    assert!(h.train_loss[399] < h.train_loss[0]);
    for (x, y) in xor_data() {
        let p = net.predict(&Tensor::from_f64(&[2], &x).unwrap()).unwrap().data()[0];
        assert_eq!(p > 0.5, y > 0.5, "{x:?} -> {p}");
    }
}

#[test]
fn same_seed_gives_identical_parameters() {
    let mut a = mlp(4);
    let mut b = mlp(4);
    fit(&mut a, &Xor, &xor_data(), &[], &cfg(20), |_, _| 1.0).unwrap();
    fit(&mut b, &Xor, &xor_data(), &[], &cfg(20), |_, _| 1.0).unwrap();
    assert_eq!(a.params(), b.params());
}

#[test]
fn plateau_stops_at_best_plus_patience() {
    let mut net = mlp(1);
    let mut c = cfg(100);
    c.early_stop_patience = Some(10);
    let h = fit(&mut net, &Plateau, &[(); 4], &[(); 2], &c, |_, _| 1.0).unwrap();
    assert_eq!(h.best_epoch, Some(0));
    assert!(h.stopped_early);
    assert_eq!(h.epochs_run(), 11);
}

#[test]
fn early_stopping_keeps_best_validation_parameters() {
    let mut net = mlp(2);
    let mut c = cfg(60);
    c.early_stop_patience = Some(5);
    let data = xor_data();
    let h = fit(&mut net, &Xor, &data, &data[..2], &c, |_, _| 1.0).unwrap();
    let best = h.val_loss[h.best_epoch.unwrap()];
    assert!(h.val_loss.iter().all(|&v| v >= best));
    let now: f64 = data[..2].iter().map(|s| Xor.evaluate(&net, s).unwrap()).sum::<f64>() / 2.0;
    assert!((now - best).abs() < 1e-12);
}

#[test]
fn empty_training_set_is_rejected() {
    let mut net = mlp(1);
    assert!(matches!(
        fit(&mut net, &Xor, &[], &[], &cfg(1), |_, _| 1.0),
        Err(NnError::EmptyTrainingSet)
    ));
}

#[test]
fn invalid_config_is_rejected() {
    let mut c = cfg(1);
    c.batch_size = 0;
    assert!(c.validate().is_err());
    c = cfg(0);
    assert!(c.validate().is_err());
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let mut net = mlp(3);
    net.params_mut().set_frozen("h.weight", true).unwrap();
    let mut ck = Checkpoint::new("unit", 42).with_network("main", net.clone());
    ck.meta.insert("anchors".into(), serde_json::json!([[0.1, 0.2]]));
    let bytes = ck.to_bytes();
    assert_eq!(&bytes[..4], b"JSNN");
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.identity(), ck.identity());
    assert!(back.network("main").unwrap().params().get("h.weight").unwrap().frozen);
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    assert!(Checkpoint::from_bytes(b"nope").is_err());

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.ckpt");
    ck.save(&p).unwrap();
    assert_eq!(Checkpoint::load(&p).unwrap(), ck);
}

#[test]
fn unknown_layer_kind_is_rejected() {
    let json =
        r#"{"nodes":[{"layer":{"kind":"input","shape":[2]}},{"layer":{"kind":"gelu"},"inputs":[0]}],"output":1}"#;
    assert!(serde_json::from_str::<jointscore_nn::Graph>(json).is_err());
    let ok = json.replace("gelu", "relu");
    assert!(serde_json::from_str::<jointscore_nn::Graph>(&ok).is_ok());
}

proptest! {
    #[test]
    fn f32_and_f64_forward_agree(xs in proptest::collection::vec(-2.0f64..2.0, 2)) {
        let net = mlp(9);
        let x = Tensor::from_f64(&[2], &xs).unwrap();
        let a = net.predict(&x).unwrap().data()[0];
        let b = net.cast::<f32>().predict(&x.cast()).unwrap().data()[0] as f64;
        prop_assert!((a - b).abs() < 1e-5);
    }
}
