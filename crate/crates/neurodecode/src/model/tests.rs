use super::*;
use crate::diffcore::{finite_difference_check, FdOptions, GraphBuilder};
use crate::model::build::SentenceItem;
use crate::signal::Epoch;
use crate::util::{gauss_vec, seeded_rng};

fn toy_cfg() -> ModelConfig {
    let mut cfg = ModelConfig::desk_default(5, 8);
    cfg.hidden_channels = 6;
    cfg.conv_dilations = vec![1, 2];
    cfg.tf_layers = 2;
    cfg.tf_heads = 2;
    cfg
}

fn toy_params(cfg: &ModelConfig, n_subjects: usize) -> DecoderParams {
    let ids = (0..n_subjects).map(|i| format!("s{i}")).collect();
    DecoderParams::init(cfg, ids, 7).unwrap()
}

fn rand_tensor(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut rng = seeded_rng(seed);
    let n: usize = shape.iter().product();
    Tensor::new(shape, gauss_vec(&mut rng, n)).unwrap()
}

fn toy_positions(n: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = seeded_rng(seed);
    (0..n)
        .map(|_| [rand::Rng::random::<f64>(&mut rng), rand::Rng::random::<f64>(&mut rng)])
        .collect()
}

fn toy_epoch(t: usize, n: usize, seed: u64) -> Epoch {
    let mut rng = seeded_rng(seed);
    Epoch {
        data: gauss_vec(&mut rng, t * n),
        t_samples: t,
        n_sensors: n,
        word: "w".into(),
        onset_s: 0.0,
        subject_id: "s0".into(),
        sentence_id: 0,
    }
}

#[test]
fn spatial_attention_sensor_permutation_equivariant() {
    let cfg = toy_cfg();
    let params = toy_params(&cfg, 1);
    let positions = toy_positions(5, 3);
    let x = rand_tensor(vec![12, 5], 4);
    let base = spatial_attention(&cfg, &params, &x, &positions).unwrap();

    let perm = [3usize, 0, 4, 2, 1];
    let mut xp = Tensor::zeros(vec![12, 5]);
    for t in 0..12 {
        for (new_s, &old_s) in perm.iter().enumerate() {
            xp.data_mut()[t * 5 + new_s] = x.data()[t * 5 + old_s];
        }
    }
    let pp: Vec<[f64; 2]> = perm.iter().map(|&i| positions[i]).collect();
    let permuted = spatial_attention(&cfg, &params, &xp, &pp).unwrap();
    // equivariant up to float-summation order
    for (a, b) in base.data().iter().zip(permuted.data()) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn spatial_attention_single_sensor_scalar_multiple() {
    let mut cfg = toy_cfg();
    cfg.n_sensors = 1;
    let params = toy_params(&cfg, 1);
    let positions = toy_positions(1, 5);
    let x = rand_tensor(vec![10, 1], 6);
    let out = spatial_attention(&cfg, &params, &x, &positions).unwrap();
    // softmax over one sensor puts weight 1 on it: every channel equals x
    for ch in 0..cfg.hidden_channels {
        for t in 0..10 {
            assert!((out.data()[t * cfg.hidden_channels + ch] - x.data()[t]).abs() < 1e-12);
        }
    }
}

#[test]
fn spatial_attention_zero_epoch_gives_zero() {
    let cfg = toy_cfg();
    let params = toy_params(&cfg, 1);
    let positions = toy_positions(5, 3);
    let x = Tensor::zeros(vec![12, 5]);
    let out = spatial_attention(&cfg, &params, &x, &positions).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn spatial_attention_position_mismatch_rejected() {
    let cfg = toy_cfg();
    let params = toy_params(&cfg, 1);
    let x = rand_tensor(vec![12, 5], 4);
    assert!(spatial_attention(&cfg, &params, &x, &toy_positions(4, 3)).is_err());
}

#[test]
fn subject_layer_identity_at_init() {
    let cfg = toy_cfg();
    let params = toy_params(&cfg, 3);
    let f = rand_tensor(vec![12, 6], 8);
    let out = subject_layer(&cfg, &params, &f, "s1").unwrap();
    for (a, b) in out.data().iter().zip(f.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn subject_layer_differs_between_trained_subjects() {
    let cfg = toy_cfg();
    let mut params = toy_params(&cfg, 2);
    // perturb subject 1's transform
    let c = cfg.hidden_channels;
    params.tensors.get_mut("subject.mats").unwrap().data_mut()[c * c] += 0.5;
    let f = rand_tensor(vec![12, 6], 9);
    let a = subject_layer(&cfg, &params, &f, "s0").unwrap();
    let b = subject_layer(&cfg, &params, &f, "s1").unwrap();
    assert_ne!(a.data(), b.data());
}

#[test]
fn subject_layer_unknown_id_named() {
    let cfg = toy_cfg();
    let params = toy_params(&cfg, 2);
    let f = rand_tensor(vec![12, 6], 10);
    let err = subject_layer(&cfg, &params, &f, "s9").unwrap_err();
    assert!(err.to_string().contains("s9"), "{err}");
}

#[test]
fn absent_subject_gets_zero_gradient() {
    let cfg = toy_cfg();
    let params = toy_params(&cfg, 3);
    let positions = toy_positions(5, 11);
    let epoch = toy_epoch(12, 5, 12);
    // batch contains only subject 0
    let mut g = GraphBuilder::new();
    let pred = append_decode(
        &mut g,
        &cfg,
        &positions,
        &[SentenceItem { subject_index: 0, n_words: 1 }],
        12,
        3,
        None,
    )
    .unwrap();
    let sq = g.mul(pred, pred).unwrap();
    let loss = g.mean_all(sq);
    g.output("loss", loss);
    let graph = g.build();
    let inputs = build::decode_inputs(&[(0, vec![&epoch])]);
    let exec = graph.forward(&inputs, &params.tensors).unwrap();
    let mut cot = crate::diffcore::TensorMap::new();
    cot.insert("loss".into(), Tensor::scalar(1.0));
    let grads = graph.backward(&exec, &cot).unwrap();
    let dmats = &grads.params["subject.mats"];
    let c = cfg.hidden_channels;
    let slice0 = &dmats.data()[..c * c];
    assert!(slice0.iter().any(|&v| v != 0.0), "present subject must get gradient");
    assert!(
        dmats.data()[c * c..].iter().all(|&v| v == 0.0),
        "absent subjects must get exactly zero gradient"
    );
}

#[test]
fn conv_stack_preserves_shape_and_residual_path() {
    let cfg = toy_cfg();
    let mut params = toy_params(&cfg, 1);
    let f = rand_tensor(vec![12, 6], 13);
    let out = conv_stack(&cfg, &params, &f).unwrap();
    assert_eq!(out.shape(), f.shape());

    // zero kernels + zero beta: conv output is exactly zero, residual passes input
    for i in 0..cfg.conv_dilations.len() {
        params
            .tensors
            .get_mut(&format!("conv{i}.w"))
            .unwrap()
            .data_mut()
            .fill(0.0);
    }
    let out = conv_stack(&cfg, &params, &f).unwrap();
    for (a, b) in out.data().iter().zip(f.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn conv_stack_too_short_window_rejected() {
    let cfg = toy_cfg(); // max span = (3-1)*2+1 = 5
    let params = toy_params(&cfg, 1);
    let f = rand_tensor(vec![4, 6], 14);
    assert!(conv_stack(&cfg, &params, &f).is_err());
}

#[test]
fn attention_pool_single_timestep() {
    let cfg = toy_cfg();
    let params = toy_params(&cfg, 1);
    let s = rand_tensor(vec![1, 8], 15);
    let out = attention_pool(&cfg, &params, &s).unwrap();
    // value projection is identity at init
    for (a, b) in out.iter().zip(s.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn attention_pool_zero_scores_is_time_mean() {
    let cfg = toy_cfg();
    let params = toy_params(&cfg, 1); // pool.score zero-initialized
    let s = rand_tensor(vec![9, 8], 16);
    let out = attention_pool(&cfg, &params, &s).unwrap();
    for j in 0..8 {
        let mean: f64 = (0..9).map(|t| s.data()[t * 8 + j]).sum::<f64>() / 9.0;
        assert!((out[j] - mean).abs() < 1e-9, "{} vs {mean}", out[j]);
    }
}

#[test]
fn transformer_singleton_sequence_defined() {
    let cfg = toy_cfg();
    let params = toy_params(&cfg, 1);
    let w = rand_tensor(vec![1, 8], 17);
    let out = transformer_pass(&cfg, &params, &w, None).unwrap();
    assert_eq!(out.shape(), &[1, 8]);
    assert!(out.is_finite());
}

#[test]
fn transformer_eval_mode_deterministic() {
    let cfg = toy_cfg();
    let params = toy_params(&cfg, 1);
    let w = rand_tensor(vec![5, 8], 18);
    let a = transformer_pass(&cfg, &params, &w, None).unwrap();
    let b = transformer_pass(&cfg, &params, &w, None).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn transformer_dropout_seed_reproducible() {
    let cfg = toy_cfg();
    let params = toy_params(&cfg, 1);
    let w = rand_tensor(vec![5, 8], 19);
    let a = transformer_pass(&cfg, &params, &w, Some(33)).unwrap();
    let b = transformer_pass(&cfg, &params, &w, Some(33)).unwrap();
    let c = transformer_pass(&cfg, &params, &w, Some(34)).unwrap();
    assert_eq!(a.data(), b.data());
    assert_ne!(a.data(), c.data());
}

#[test]
fn rotary_logits_depend_only_on_relative_position() {
    // content-fixed q and k at shifted positions give identical logits
    let dh = 4;
    let m = 9;
    let row: Vec<f64> = vec![0.3, -0.7, 1.1, 0.25];
    let q = Tensor::new(vec![m, dh], row.repeat(m)).unwrap();
    let mut g = GraphBuilder::new();
    let qi = g.input("q", vec![m, dh]);
    let qr = g.rotary(qi, 10_000.0).unwrap();
    let kt = g.transpose(qr).unwrap();
    let logits = g.matmul(qr, kt).unwrap();
    g.output("logits", logits);
    let graph = g.build();
    let mut inputs = crate::diffcore::TensorMap::new();
    inputs.insert("q".into(), q);
    let exec = graph.forward(&inputs, &crate::diffcore::TensorMap::new()).unwrap();
    let l = graph.output(&exec, "logits").unwrap();
    for delta in 1..4usize {
        for i in 0..(m - delta - 2) {
            for j in 0..(m - delta - 2) {
                let a = l.data()[i * m + j];
                let b = l.data()[(i + delta) * m + (j + delta)];
                assert!(
                    (a - b).abs() < 1e-6,
                    "logit({i},{j})={a} vs logit({},{})={b}",
                    i + delta,
                    j + delta
                );
            }
        }
    }
}

#[test]
fn decode_batch_shape_and_permutation() {
    let cfg = toy_cfg();
    let params = toy_params(&cfg, 2);
    let positions = toy_positions(5, 20);
    let e: Vec<Epoch> = (0..5).map(|i| toy_epoch(12, 5, 40 + i)).collect();
    let groups = vec![
        ("s0".to_string(), vec![&e[0], &e[1], &e[2]]),
        ("s1".to_string(), vec![&e[3], &e[4]]),
    ];
    let pred = decode_word_batch(&cfg, &params, &positions, &groups).unwrap();
    assert_eq!(pred.shape(), &[5, 8]);
    assert!(pred.is_finite());

    // swapping sentence order permutes rows identically
    let swapped = vec![groups[1].clone(), groups[0].clone()];
    let pred2 = decode_word_batch(&cfg, &params, &positions, &swapped).unwrap();
    assert_eq!(&pred.data()[..3 * 8], &pred2.data()[2 * 8..]);
    assert_eq!(&pred.data()[3 * 8..], &pred2.data()[..2 * 8]);
}

#[test]
fn no_transformer_flag_bypasses_refinement() {
    let mut cfg = toy_cfg();
    let params = toy_params(&cfg, 1);
    let positions = toy_positions(5, 21);
    let e = toy_epoch(12, 5, 50);
    let groups = vec![("s0".to_string(), vec![&e])];
    cfg.use_transformer = false;
    let bare = decode_word_batch(&cfg, &params, &positions, &groups).unwrap();
    cfg.use_transformer = true;
    let full = decode_word_batch(&cfg, &params, &positions, &groups).unwrap();
    assert_ne!(bare.data(), full.data());
    // the bypassed path equals the pooled CNN features directly
    let x = Tensor::new(vec![12, 5], e.data.clone()).unwrap();
    let s = spatial_attention(&cfg, &params, &x, &positions).unwrap();
    let s = subject_layer(&cfg, &params, &s, "s0").unwrap();
    let s = conv_stack(&cfg, &params, &s).unwrap();
    // project to d and pool
    let st = crate::diffcore::transpose(&s);
    let p = crate::diffcore::matmul(&params.tensors["proj.w"], &st);
    let mut pt = crate::diffcore::transpose(&p);
    for row in 0..pt.rows() {
        let cdat: Vec<f64> = params.tensors["proj.b"].data().to_vec();
        let n = pt.cols();
        for j in 0..n {
            pt.data_mut()[row * n + j] += cdat[j];
        }
    }
    let pooled = attention_pool(&cfg, &params, &pt).unwrap();
    for (a, b) in bare.data().iter().zip(&pooled) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn full_model_fd_smoke() {
    // micro two-sentence batch through the complete model and CLIP loss
    let cfg = toy_cfg();
    let params = toy_params(&cfg, 2);
    let positions = toy_positions(5, 22);
    let epochs: Vec<Epoch> = (0..3).map(|i| toy_epoch(12, 5, 60 + i)).collect();
    let targets = rand_tensor(vec![3, 8], 70);

    let mut g = GraphBuilder::new();
    let pred = append_decode(
        &mut g,
        &cfg,
        &positions,
        &[
            SentenceItem { subject_index: 0, n_words: 2 },
            SentenceItem { subject_index: 1, n_words: 1 },
        ],
        12,
        2,
        None,
    )
    .unwrap();
    let cos = crate::objective::append_cosine(&mut g, pred, &targets).unwrap();
    let tp = g.param("loss.tprime", vec![1]);
    let loss = crate::objective::append_clip(&mut g, cos, tp, false).unwrap();
    g.output("loss", loss);
    let graph = g.build();
    let inputs = build::decode_inputs(&[(0, vec![&epochs[0], &epochs[1]]), (1, vec![&epochs[2]])]);
    let report = finite_difference_check(
        &graph,
        &inputs,
        &params.tensors,
        FdOptions {
            tolerance: 1e-4,
            max_probes_per_tensor: Some(6),
            seed: 1,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(report.passes(), "max rel err {}", report.max_rel_err());
}
