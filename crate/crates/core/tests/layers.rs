use bimanip::layers::{glorot_bound, Gat, GatConfig, GruCell, Linear, Mlp, OutputActivation};
use bimanip::tensor::gradcheck::check_params;
use bimanip::tensor::{ParamStore, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| r.random_range(-2.0..2.0)).collect()).unwrap()
}

fn zero_all(store: &mut ParamStore) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        store.get_mut(id).data_mut().fill(0.0);
    }
}

#[test]
fn linear_closed_forms() {
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "fc", 3, 2, 0, &mut rng(0));
    store.get_mut(lin.weight).data_mut().fill(0.0);
    store.get_mut(lin.bias).data_mut().copy_from_slice(&[1.0, 2.0]);
    let mut t = Tape::new();
    let x = t.constant(&Tensor::matrix(1, 3, vec![4.0, -3.0, 9.0]).unwrap());
    let y = lin.forward(&mut t, &store, x).unwrap();
    assert_eq!(t.value(y), &[1.0, 2.0]);

    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "fc", 2, 2, 0, &mut rng(0));
    store.get_mut(lin.weight).data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
    let mut t = Tape::new();
    let x = t.constant(&Tensor::matrix(1, 2, vec![0.7, -0.1]).unwrap());
    let y = lin.forward(&mut t, &store, x).unwrap();
    assert_eq!(t.value(y), &[0.7, -0.1]);
    let wide = t.constant(&Tensor::matrix(1, 3, vec![0.0; 3]).unwrap());
    assert!(lin.forward(&mut t, &store, wide).is_err());
}

#[test]
fn linear_and_mlp_gradients() {
    let mut r = rng(1);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, "mlp", &[3, 5, 4, 2], 0, &mut r);
    let x = random(&mut r, 4, 3);
    let target = random(&mut r, 4, 2);
    let err = check_params(&mut store, 1e-5, |t, s| {
        let xv = t.constant(&x);
        let y = mlp.forward(t, s, xv)?;
        let tv = t.constant(&target);
        t.mse(y, tv)
    })
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn gru_zero_weights() {
    let mut store = ParamStore::new();
    let cell = GruCell::new(&mut store, "gru", 2, 3, 0, &mut rng(2));
    zero_all(&mut store);
    let mut t = Tape::new();
    let x = t.constant(&Tensor::matrix(1, 2, vec![0.3, -0.8]).unwrap());
    let h = t.constant(&Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]).unwrap());
    let h1 = cell.step(&mut t, &store, x, h).unwrap();
    assert_eq!(t.value(h1), &[0.5, -1.0, 0.25]);
    let h0 = t.zeros(&[1, 3]);
    let h1 = cell.step(&mut t, &store, x, h0).unwrap();
    assert_eq!(t.value(h1), &[0.0, 0.0, 0.0]);
    assert_eq!(cell.params().count(), 9);
    assert_eq!(store.scalar_count(), 3 * (2 * 3 + 3 * 3 + 3));
}

#[test]
fn gru_three_step_gradient() {
    let mut r = rng(3);
    for trial in 0..10 {
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "gru", 3, 4, 0, &mut r);
        let xs: Vec<Tensor> = (0..3).map(|_| random(&mut r, 2, 3)).collect();
        let h0 = random(&mut r, 2, 4);
        let err = check_params(&mut store, 1e-5, |t, s| {
            let mut h = t.constant(&h0);
            for x in &xs {
                let xv = t.constant(x);
                h = cell.step(t, s, xv, h)?;
            }
            let sq = t.mul(h, h)?;
            Ok(t.sum(sq))
        })
        .unwrap();
        assert!(err < 1e-4, "trial {trial}: {err}");
    }
}

#[test]
fn gat_uniform_attention_for_identical_nodes() {
    let mut store = ParamStore::new();
    let gat = Gat::new(&mut store, "gat", GatConfig::default(), 0, &mut rng(4));
    let mut t = Tape::new();
    let x = t.constant(&Tensor::matrix(2, 21, vec![0.42; 42]).unwrap());
    let out = gat.forward(&mut t, &store, x, 21).unwrap();
    assert_eq!(t.shape(out.attention[0]), &[42, 21]);
    for &a in t.value(out.attention[0]) {
        assert!((a - 1.0 / 21.0).abs() < 1e-9);
    }
    assert_eq!(t.shape(out.features), &[2, 21 * 4]);
}

#[test]
fn gat_single_node_is_activation_of_projection() {
    let mut store = ParamStore::new();
    let gat = Gat::new(&mut store, "gat", GatConfig::default(), 0, &mut rng(5));
    let w = store.get(store.find("gat.head0.w").unwrap()).data().to_vec();
    let mut t = Tape::new();
    let x = t.constant(&Tensor::matrix(1, 1, vec![-1.3]).unwrap());
    let out = gat.forward(&mut t, &store, x, 1).unwrap();
    for (o, wi) in t.value(out.features).iter().zip(&w) {
        let z = wi * -1.3;
        let expected = if z > 0.0 { z } else { z.exp_m1() };
        assert!((o - expected).abs() < 1e-15);
    }
    assert!(gat.forward(&mut t, &store, x, 0).is_err());
}

#[test]
fn gat_rows_sum_to_one_and_gradient() {
    let mut r = rng(6);
    let config = GatConfig {
        heads: 2,
        width: 3,
        ..GatConfig::default()
    };
    let mut store = ParamStore::new();
    let gat = Gat::new(&mut store, "gat", config, 0, &mut r);
    let x = random(&mut r, 3, 5);
    let mut t = Tape::new();
    let xv = t.constant(&x);
    let out = gat.forward(&mut t, &store, xv, 5).unwrap();
    for head in &out.attention {
        for row in t.value(*head).chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }
    let err = check_params(&mut store, 1e-5, |t, s| {
        let xv = t.constant(&x);
        let o = gat.forward(t, s, xv, 5)?;
        let sq = t.mul(o.features, o.features)?;
        Ok(t.sum(sq))
    })
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn gat_is_permutation_equivariant() {
    let mut r = rng(7);
    let mut store = ParamStore::new();
    let gat = Gat::new(&mut store, "gat", GatConfig::default(), 0, &mut r);
    let n = 6;
    let x: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
    let perm = [3, 0, 5, 1, 4, 2];
    let px: Vec<f64> = perm.iter().map(|&p| x[p]).collect();
    let mut t = Tape::new();
    let a = t.constant(&Tensor::matrix(1, n, x).unwrap());
    let b = t.constant(&Tensor::matrix(1, n, px).unwrap());
    let oa = gat.forward(&mut t, &store, a, n).unwrap();
    let ob = gat.forward(&mut t, &store, b, n).unwrap();
    let d = 4;
    let va = t.value(oa.features);
    let vb = t.value(ob.features);
    for (i, &p) in perm.iter().enumerate() {
        for k in 0..d {
            assert!((vb[i * d + k] - va[p * d + k]).abs() < 1e-12);
        }
    }
}

#[test]
fn gat_identity_activation() {
    let config = GatConfig {
        activation: OutputActivation::Identity,
        ..GatConfig::default()
    };
    let mut store = ParamStore::new();
    let gat = Gat::new(&mut store, "gat", config, 0, &mut rng(8));
    let w = store.get(store.find("gat.head0.w").unwrap()).data().to_vec();
    let mut t = Tape::new();
    let x = t.constant(&Tensor::matrix(1, 1, vec![-1.3]).unwrap());
    let out = gat.forward(&mut t, &store, x, 1).unwrap();
    for (o, wi) in t.value(out.features).iter().zip(&w) {
        assert!((o - wi * -1.3).abs() < 1e-15);
    }
}

#[test]
fn initialization_is_seeded_and_bounded() {
    let build = |seed| {
        let mut store = ParamStore::new();
        GruCell::new(&mut store, "gru", 5, 7, 0, &mut rng(seed));
        Linear::new(&mut store, "fc", 7, 3, 0, &mut rng(seed));
        store
    };
    let a = build(9);
    let b = build(9);
    for ((na, ta), (nb, tb)) in a.named().zip(b.named()) {
        assert_eq!(na, nb);
        assert_eq!(ta.data(), tb.data());
        let bound = match ta.shape() {
            [rows, cols] => glorot_bound(*cols, *rows),
            _ => {
                assert!(ta.data().iter().all(|&v| v == 0.0), "{na} bias not zero");
                continue;
            }
        };
        assert!(ta.data().iter().all(|v| v.abs() <= bound), "{na}");
    }
}

proptest! {
    #[test]
    fn gru_state_stays_bounded(seed in 0u64..500, scale in 0.1f64..5.0) {
        let mut r = rng(seed);
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "gru", 2, 3, 0, &mut r);
        let h: Vec<f64> = (0..3).map(|_| r.random_range(-scale..scale)).collect();
        let mut t = Tape::new();
        let x = t.constant(&random(&mut r, 1, 2));
        let hv = t.constant(&Tensor::matrix(1, 3, h.clone()).unwrap());
        let h1 = cell.step(&mut t, &store, x, hv).unwrap();
        for (new, old) in t.value(h1).iter().zip(&h) {
            prop_assert!(new.abs() <= old.abs().max(1.0) + 1e-12);
        }
    }
}
