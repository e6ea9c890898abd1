use super::*;
use crate::autodiff::grad_check;
use crate::sampler::sample_noise;

fn forward(spec: &MlpSpec, params: &MlpParams, x: &Array2) -> Array2 {
    forward_values(spec, params, x).unwrap()
}

/// Independent forward oracle with explicit loops.
fn hand_forward(spec: &MlpSpec, params: &MlpParams, x: &Array2) -> Array2 {
    let mut h: Vec<Vec<f64>> = (0..x.rows()).map(|r| x.row(r).to_vec()).collect();
    for l in 0..spec.n_layers() {
        let w = &params.weights[l];
        let b = &params.biases[l];
        h = h
            .iter()
            .map(|row| {
                (0..w.cols())
                    .map(|j| {
                        let z = b.get(0, j) + (0..w.rows()).map(|i| row[i] * w.get(i, j)).sum::<f64>();
                        if l + 1 < spec.n_layers() {
                            match spec.activation() {
                                Activation::Tanh => z.tanh(),
                                Activation::LeakyRelu(s) => {
                                    if z > 0.0 {
                                        z
                                    } else {
                                        s * z
                                    }
                                }
                                Activation::Elu => {
                                    if z > 0.0 {
                                        z
                                    } else {
                                        z.exp() - 1.0
                                    }
                                }
                            }
                        } else {
                            z
                        }
                    })
                    .collect()
            })
            .collect();
    }
    for row in &mut h {
        match spec.output() {
            OutputTransform::Linear => {}
            OutputTransform::Tanh => row.iter_mut().for_each(|v| *v = v.tanh()),
            OutputTransform::L2Normalize => {
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
    }
    Array2::from_rows(&h).unwrap()
}

#[test]
fn presets_have_the_published_shapes() {
    assert_eq!(MlpSpec::ring_generator().layer_sizes(), &[128, 128, 128, 128, 2]);
    assert_eq!(MlpSpec::ring_generator().activation(), Activation::Tanh);
    let critic = MlpSpec::ring_critic(16).unwrap();
    assert_eq!(critic.layer_sizes(), &[2, 32, 32, 32, 16]);
    assert_eq!(critic.output(), OutputTransform::L2Normalize);
    assert_eq!(MlpSpec::ring_critic(1).unwrap().output(), OutputTransform::Linear);
    let g = MlpSpec::mnist_generator();
    assert_eq!(g.layer_sizes(), &[128, 256, 512, 1024, 1024]);
    assert_eq!(g.activation(), Activation::LeakyRelu(0.2));
    assert_eq!(g.output(), OutputTransform::Tanh);
    assert_eq!(MlpSpec::mnist_critic(16).unwrap().layer_sizes(), &[1024, 1024, 512, 256, 16]);
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(MlpSpec::new(vec![2, 3], Activation::Tanh, OutputTransform::Linear).is_err());
    assert!(MlpSpec::new(vec![2, 0, 3], Activation::Tanh, OutputTransform::Linear).is_err());
    assert!(MlpSpec::new(vec![2, 3, 1], Activation::Tanh, OutputTransform::L2Normalize).is_err());
}

#[test]
fn description_round_trips() {
    for spec in [
        MlpSpec::ring_generator(),
        MlpSpec::ring_critic(16).unwrap(),
        MlpSpec::mnist_generator(),
        MlpSpec::new(vec![3, 4, 2], Activation::Elu, OutputTransform::Linear).unwrap(),
    ] {
        assert_eq!(MlpSpec::parse_description(&spec.describe()).unwrap(), spec);
    }
    assert!(MlpSpec::parse_description("sizes=2,3 activation=tanh").is_err());
}

#[test]
fn init_is_deterministic_with_zero_biases() {
    let spec = MlpSpec::new(vec![2, 3, 1], Activation::Tanh, OutputTransform::Linear).unwrap();
    let a = build_mlp(&spec, 7);
    let b = build_mlp(&spec, 7);
    let bits = |p: &MlpParams| p.tensors().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_ne!(a, build_mlp(&spec, 8));
    assert!(a.biases.iter().all(|b| b.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn glorot_variance_of_a_square_layer() {
    let spec = MlpSpec::new(vec![128, 128, 1], Activation::Tanh, OutputTransform::Linear).unwrap();
    let w = &build_mlp(&spec, 3).weights[0];
    let n = w.len() as f64;
    let mean = w.sum() / n;
    let var = w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let want = 2.0 / 256.0;
    assert!((var - want).abs() / want < 0.2, "{var}");
}

#[test]
fn zero_network_maps_zero_to_zero() {
    let spec = MlpSpec::ring_generator();
    let params = MlpParams::zeros(&spec);
    let y = forward(&spec, &params, &Array2::zeros(4, 128));
    assert_eq!(y, Array2::zeros(4, 2));
}

#[test]
fn rows_do_not_interact() {
    let spec = MlpSpec::ring_generator();
    let params = build_mlp(&spec, 1);
    let z = sample_noise(512, 128, &mut Rng::new(2));
    let big = forward(&spec, &params, &z);
    let small = forward(&spec, &params, &z.select_rows(&[0]));
    for c in 0..2 {
        assert!((big.get(0, c) - small.get(0, c)).abs() <= 1e-15);
    }
}

#[test]
fn forward_matches_hand_rolled_loops() {
    let mut rng = Rng::new(10);
    for (act, out) in [
        (Activation::Tanh, OutputTransform::Linear),
        (Activation::LeakyRelu(0.2), OutputTransform::Tanh),
        (Activation::Elu, OutputTransform::L2Normalize),
    ] {
        let spec = MlpSpec::new(vec![5, 7, 6, 3], act, out).unwrap();
        let mut params = build_mlp_with(&spec, &mut rng);
        for b in &mut params.biases {
            for v in b.data_mut() {
                *v = 0.3 * rng.normal();
            }
        }
        let x = sample_noise(9, 5, &mut rng);
        let got = forward(&spec, &params, &x);
        let want = hand_forward(&spec, &params, &x);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn forward_is_permutation_equivariant() {
    let spec = MlpSpec::ring_critic(16).unwrap();
    let params = build_mlp(&spec, 5);
    let x = sample_noise(6, 2, &mut Rng::new(6));
    let perm = [3, 0, 5, 1, 4, 2];
    let y = forward(&spec, &params, &x);
    let yp = forward(&spec, &params, &x.select_rows(&perm));
    for (i, &p) in perm.iter().enumerate() {
        for c in 0..16 {
            assert!((yp.get(i, c) - y.get(p, c)).abs() <= 1e-15);
        }
    }
}

fn critic(spec: &MlpSpec, params: &MlpParams, x: &Array2, feature_dim: usize, normalize: bool) -> Result<Array2, ModelError> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let y = critic_forward(&mut g, spec, &p, xv, feature_dim, normalize)?;
    Ok(g.value(y).clone())
}

#[test]
fn normalized_critic_rows_are_unit() {
    let spec = MlpSpec::ring_critic(16).unwrap();
    let params = build_mlp(&spec, 9);
    let x = sample_noise(64, 2, &mut Rng::new(1)).map(|v| 5.0 * v);
    let y = critic(&spec, &params, &x, 16, true).unwrap();
    for r in 0..y.rows() {
        let n = y.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn vanilla_critic_outputs_one_logit() {
    let spec = MlpSpec::ring_critic(1).unwrap();
    let params = build_mlp(&spec, 9);
    let y = critic(&spec, &params, &Array2::zeros(10, 2), 1, false).unwrap();
    assert_eq!(y.shape(), (10, 1));
    assert!(critic(&spec, &params, &Array2::zeros(10, 2), 1, true).is_err());
}

#[test]
fn zero_critic_cannot_be_normalized() {
    let spec = MlpSpec::ring_critic(16).unwrap();
    let params = MlpParams::zeros(&spec);
    let err = critic(&spec, &params, &Array2::ones(3, 2), 16, true).unwrap_err();
    assert!(matches!(err, ModelError::DegenerateFeature { row: 0, norm } if norm == 0.0));
}

#[test]
fn shape_errors_name_both_sizes() {
    let spec = MlpSpec::ring_critic(16).unwrap();
    let params = build_mlp(&spec, 1);
    let err = critic(&spec, &params, &Array2::zeros(2, 2), 17, true).unwrap_err();
    assert!(matches!(err, ModelError::FeatureDim { network: 16, requested: 17 }));
    assert!(err.to_string().contains("16") && err.to_string().contains("17"));
    assert!(matches!(critic(&spec, &params, &Array2::zeros(2, 3), 16, true), Err(ModelError::Shape { .. })));
    let other = build_mlp(&MlpSpec::ring_critic(17).unwrap(), 1);
    assert!(matches!(other.check(&spec, "critic"), Err(ModelError::Shape { .. })));
    assert!(params.check(&spec, "critic").is_ok());
}

#[test]
fn critic_gradient_through_normalization() {
    let spec = MlpSpec::new(vec![2, 6, 6, 4], Activation::Tanh, OutputTransform::L2Normalize).unwrap();
    let mut rng = Rng::new(77);
    let base = build_mlp_with(&spec, &mut rng);
    let x = sample_noise(5, 2, &mut rng);
    let target = sample_noise(5, 4, &mut rng);
    for which in 0..base.tensors().len() {
        let point = base.tensors()[which].clone();
        let f = |g: &mut Graph, t: Var| -> Result<Var, AutodiffError> {
            let mut p = base.bind(g, false);
            if which % 2 == 0 {
                p.weights[which / 2] = t;
            } else {
                p.biases[which / 2] = t;
            }
            let xv = g.constant(x.clone());
            let y = critic_forward(g, &spec, &p, xv, 4, true).map_err(|e| AutodiffError::Contract(e.to_string()))?;
            let tv = g.constant(target.clone());
            let prod = g.mul(y, tv)?;
            g.mean_all(prod)
        };
        let err = grad_check(f, &point, 1e-6).unwrap();
        assert!(err <= 1e-4, "tensor {which}: {err}");
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    let spec = MlpSpec::ring_critic(16).unwrap();
    let params = build_mlp(&spec, 4);
    let mut ckpt = Checkpoint::default();
    ckpt.set_meta("critic", spec.describe());
    ckpt.set_meta("step", "12");
    for (name, t) in MlpParams::tensor_names("critic", spec.n_layers()).into_iter().zip(params.tensors()) {
        ckpt.push(name, t.clone());
    }
    write_checkpoint(&path, &ckpt).unwrap();
    let back = read_checkpoint(&path).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.meta("step"), Some("12"));
    assert_eq!(MlpSpec::parse_description(back.meta("critic").unwrap()).unwrap(), spec);
    assert_eq!(back.tensor("critic.w3").unwrap(), &params.weights[3]);
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let mut ckpt = Checkpoint::default();
    ckpt.push("w", Array2::ones(2, 2));
    let bytes = ckpt.to_bytes().unwrap();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    assert!(Checkpoint::from_bytes(b"w 2 2\n").is_err());
    assert!(Checkpoint::from_bytes(b"w two 2\n\n").is_err());
    let mut bad = Checkpoint::default();
    bad.push("has space", Array2::ones(1, 1));
    assert!(bad.to_bytes().is_err());
}

#[test]
fn networks_survive_a_checkpoint() {
    let nets = GanNetworks::init(MlpSpec::ring_generator(), MlpSpec::ring_critic(16).unwrap(), &mut Rng::new(3)).unwrap();
    let ckpt = nets.to_checkpoint(&[("step", "5".to_string())]);
    let bytes = ckpt.to_bytes().unwrap();
    let back = GanNetworks::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back, nets);
    assert_eq!(back.feature_dim(), 16);

    let mut broken = ckpt.clone();
    broken.tensors.retain(|(n, _)| n != "critic.b3");
    assert!(GanNetworks::from_checkpoint(&broken).is_err());
    assert!(GanNetworks::init(MlpSpec::ring_generator(), MlpSpec::mnist_critic(16).unwrap(), &mut Rng::new(1)).is_err());
}
