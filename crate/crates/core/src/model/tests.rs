use super::*;
use crate::error::Error;
use crate::nn::{grad_check_params, Graph, ParamStore, Tensor, Var};

fn toy() -> CaiTts {
    CaiTts::new(ModelConfig::toy(), 11).unwrap()
}

fn toy_item(model: &CaiTts) -> TrainingItem {
    let cfg = &model.config;
    let durations = vec![1, 3];
    let frames: usize = durations.iter().sum();
    let mel: Vec<f64> = (0..frames * cfg.mel_dim).map(|k| ((k as f64) * 0.37).sin()).collect();
    TrainingItem {
        utterance_id: "toy".into(),
        phoneme_ids: vec![2, 5],
        speaker_id: 1,
        accent_id: 0,
        intensity: 0.7,
        targets: LossTargets {
            mel: Tensor::new(vec![frames, cfg.mel_dim], mel).unwrap(),
            durations,
            pitch: vec![0.4, -1.1],
            energy: vec![-0.3, 0.8],
        },
    }
}

fn item_loss(g: &mut Graph, model: &CaiTts, item: &TrainingItem, mode: Consistency) -> LossVars {
    let i = g.constant(Tensor::new(vec![1, 1], vec![item.intensity]).unwrap());
    let vt = VarianceTargets {
        durations: item.targets.durations.clone(),
        pitch: item.targets.pitch.clone(),
        energy: item.targets.energy.clone(),
    };
    let pred = model
        .forward_train(g, &item.phoneme_ids, item.speaker_id, item.accent_id, i, &vt, mode)
        .unwrap();
    total_loss(g, &pred, &item.targets, item.intensity).unwrap()
}

#[test]
fn encoder_shapes_and_positions() {
    let m = toy();
    let mut g = Graph::eval();
    let h = m.encode_text(&mut g, &[3]).unwrap();
    assert_eq!(g.value(h).shape(), &[1, 8]);
    let h = m.encode_text(&mut g, &[4, 4]).unwrap();
    let v = g.value(h);
    assert!(v.row(0).iter().zip(v.row(1)).any(|(a, b)| a != b));
    assert!(matches!(
        m.encode_text(&mut g, &[6]),
        Err(Error::IndexError { index: 6, len: 6 })
    ));
    assert!(matches!(m.encode_text(&mut g, &[]), Err(Error::EmptyInput(_))));
}

#[test]
fn length_regulator_repeats_rows() {
    let m = toy();
    let mut g = Graph::eval();
    let h = m.encode_text(&mut g, &[0, 1, 2]).unwrap();
    let i = g.constant(Tensor::new(vec![1, 1], vec![0.5]).unwrap());
    let vt = VarianceTargets {
        durations: vec![2, 3, 1],
        pitch: vec![0.0; 3],
        energy: vec![0.0; 3],
    };
    let ad = m
        .accent_variance_adaptor(&mut g, h, 0, 1, i, Regulation::Teacher(&vt))
        .unwrap();
    let src = g.value(ad.accented_prosody);
    let fm = g.value(ad.frames);
    assert_eq!(fm.shape(), &[6, 8]);
    for (r, p) in [0, 0, 1, 1, 1, 2].into_iter().enumerate() {
        assert_eq!(fm.row(r), src.row(p));
    }
}

#[test]
fn full_widths_concatenate_to_hidden() {
    let m = CaiTts::new(ModelConfig::full(), 0).unwrap();
    let mut g = Graph::eval();
    let h = m.encode_text(&mut g, &[1, 2]).unwrap();
    let i = g.constant(Tensor::new(vec![1, 1], vec![0.5]).unwrap());
    let ad = m
        .accent_variance_adaptor(&mut g, h, 13, 5, i, Regulation::Predicted)
        .unwrap();
    assert_eq!(g.value(ad.accent_code).shape(), &[1, 256]);
    assert_eq!(g.value(ad.speaker_code).shape(), &[1, 256]);
}

#[test]
fn intensity_changes_prosody_not_speaker_code() {
    let m = toy();
    let run = |x: f64| {
        let mut g = Graph::eval();
        let h = m.encode_text(&mut g, &[1, 3, 2]).unwrap();
        let i = g.constant(Tensor::new(vec![1, 1], vec![x]).unwrap());
        let ad = m
            .accent_variance_adaptor(&mut g, h, 1, 1, i, Regulation::Predicted)
            .unwrap();
        (
            g.value(ad.speaker_code).clone(),
            g.value(ad.pitch_embedding).clone(),
            g.value(ad.energy_embedding).clone(),
            g.value(ad.pitch_pred).clone(),
        )
    };
    let (s1, p1, e1, pp1) = run(0.1);
    let (s9, p9, e9, pp9) = run(0.9);
    assert_eq!(s1, s9);
    assert!(p1.max_abs_diff(&p9) > 0.0);
    assert!(e1.max_abs_diff(&e9) > 0.0);
    assert!(pp1.max_abs_diff(&pp9) > 0.0);
}

#[test]
fn adaptor_rejects_bad_intensity() {
    let m = toy();
    let mut g = Graph::eval();
    let h = m.encode_text(&mut g, &[1]).unwrap();
    for bad in [0.0, 1.0, 1.5, -0.2, f64::NAN] {
        let i = g.constant(Tensor::new(vec![1, 1], vec![bad]).unwrap());
        assert!(matches!(
            m.accent_variance_adaptor(&mut g, h, 0, 0, i, Regulation::Predicted),
            Err(Error::IntensityRange(_))
        ));
    }
    let i = g.constant(Tensor::new(vec![1, 1], vec![0.5]).unwrap());
    assert!(matches!(
        m.accent_variance_adaptor(&mut g, h, 2, 0, i, Regulation::Predicted),
        Err(Error::IndexError { index: 2, len: 2 })
    ));
}

#[test]
fn decoder_shape_and_determinism() {
    let m = CaiTts::new(ModelConfig::desk(), 1).unwrap();
    let x = Tensor::new(vec![6, 64], (0..384).map(|k| (k as f64 * 0.1).cos()).collect()).unwrap();
    let run = || {
        let mut g = Graph::eval();
        let v = g.constant(x.clone());
        let y = m.decode_mel(&mut g, v).unwrap();
        g.value(y).clone()
    };
    let a = run();
    assert_eq!(a.shape(), &[6, 80]);
    assert!(a.is_finite());
    assert_eq!(a, run());
}

#[test]
fn intensity_predictor_range_and_zero_head() {
    let mut m = toy();
    let mel = Tensor::new(vec![4, 6], (0..24).map(|k| k as f64 - 10.0).collect()).unwrap();
    let v = m.measure_intensity(&mel).unwrap();
    assert!(v > 0.0 && v < 1.0);
    m.params
        .get_mut("intensity_predictor.fc.weight")
        .unwrap()
        .data_mut()
        .fill(0.0);
    assert_eq!(m.measure_intensity(&mel).unwrap(), 0.5);
    assert!(matches!(
        m.measure_intensity(&Tensor::zeros(&[0, 6])),
        Err(Error::EmptyInput(_))
    ));
}

fn const_predictions(g: &mut Graph, item: &TrainingItem, i_hat: f64) -> Predictions {
    let log_d: Vec<f64> = item.targets.durations.iter().map(|&d| (1.0 + d as f64).ln()).collect();
    let col = |v: &[f64]| Tensor::new(vec![v.len(), 1], v.to_vec()).unwrap();
    Predictions {
        text: g.constant(Tensor::zeros(&[1, 1])),
        mel: g.constant(item.targets.mel.clone()),
        log_duration: g.constant(col(&log_d)),
        pitch: g.constant(col(&item.targets.pitch)),
        energy: g.constant(col(&item.targets.energy)),
        intensity: g.constant(Tensor::new(vec![1, 1], vec![i_hat]).unwrap()),
    }
}

#[test]
fn loss_identities() {
    let item = toy_item(&toy());
    let mut g = Graph::eval();
    let p = const_predictions(&mut g, &item, 0.7);
    let l = total_loss(&mut g, &p, &item.targets, 0.7).unwrap().values(&g);
    assert_eq!(l, Losses::default());

    let p = const_predictions(&mut g, &item, 0.5);
    let l = total_loss(&mut g, &p, &item.targets, 0.7).unwrap().values(&g);
    assert!((l.l_final - 0.04).abs() < 1e-15);
    assert!((l.l_cc - 0.04).abs() < 1e-15);
}

#[test]
fn loss_shape_mismatch() {
    let item = toy_item(&toy());
    let mut g = Graph::eval();
    let mut p = const_predictions(&mut g, &item, 0.7);
    p.mel = g.constant(Tensor::zeros(&[3, 6]));
    assert!(matches!(
        total_loss(&mut g, &p, &item.targets, 0.7),
        Err(Error::ShapeError(_))
    ));
}

#[test]
fn final_loss_is_exact_sum() {
    let m = toy();
    let item = toy_item(&m);
    for mode in [Consistency::Joint, Consistency::Detached] {
        let mut g = Graph::new(true, 5);
        let l = item_loss(&mut g, &m, &item, mode).values(&g);
        assert!(l.l_final > 0.0);
        assert_eq!(l.l_final, l.l_mel + l.l_dur + l.l_p_pitch + l.l_p_energy + l.l_cc);
    }
}

#[test]
fn synthesize_is_deterministic_and_controllable() {
    let m = toy();
    let req = SynthesisRequest {
        phoneme_ids: vec![1, 2, 3],
        speaker_id: 0,
        accent_id: 1,
        intensity: 0.1,
    };
    let a = m.synthesize(&req).unwrap();
    assert_eq!(a, m.synthesize(&req).unwrap());
    assert_eq!(a.mel.rows(), a.durations.iter().sum::<usize>());
    assert!(a.durations.iter().all(|&d| d >= 1));
    let b = m
        .synthesize(&SynthesisRequest {
            intensity: 0.9,
            ..req.clone()
        })
        .unwrap();
    let differs = a.mel.shape() != b.mel.shape() || a.mel.max_abs_diff(&b.mel) > 0.0;
    assert!(differs);
    assert!(matches!(
        m.synthesize(&SynthesisRequest {
            intensity: 1.5,
            ..req.clone()
        }),
        Err(Error::IntensityRange(_))
    ));
    assert!(matches!(
        m.synthesize(&SynthesisRequest { accent_id: 9, ..req }),
        Err(Error::IndexError { .. })
    ));
}

#[test]
fn duration_rounding() {
    assert_eq!(duration_from_log((1.0f64 + 3.0).ln()), 3);
    assert_eq!(duration_from_log(-4.0), 1);
    assert_eq!(duration_from_log(f64::NAN), 1);
    assert_eq!(expand_durations(&[2, 3, 1]), vec![0, 0, 1, 1, 1, 2]);
}

#[test]
fn full_model_gradient_check() {
    let m = toy();
    let item = toy_item(&m);
    let report = grad_check_params(
        &m.params,
        |g: &mut Graph, store: &ParamStore| {
            let mm = CaiTts {
                params: store.clone(),
                ..m.clone()
            };
            Ok(item_loss(g, &mm, &item, Consistency::Joint).l_final)
        },
        1e-5,
    )
    .unwrap();
    let worst = report.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    assert_eq!(report.len(), m.params.len());
    assert!(
        worst < 1e-4,
        "{:?}",
        report.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    );
}

#[test]
fn intensity_input_is_connected() {
    let m = toy();
    let item = toy_item(&m);
    let mut g = Graph::eval();
    let i = g.leaf(Tensor::new(vec![1, 1], vec![0.6]).unwrap(), true);
    let vt = VarianceTargets {
        durations: item.targets.durations.clone(),
        pitch: item.targets.pitch.clone(),
        energy: item.targets.energy.clone(),
    };
    let pred = m
        .forward_train(&mut g, &item.phoneme_ids, 1, 0, i, &vt, Consistency::Joint)
        .unwrap();
    let l = total_loss(&mut g, &pred, &item.targets, 0.6).unwrap();
    let gr = g.backward(l.l_final).unwrap();
    assert!(gr.get(i).unwrap()[0].abs() > 0.0);
}

fn grad_norms(m: &CaiTts, g: &Graph, loss: Var) -> Vec<(String, f64)> {
    let gr = g.backward(loss).unwrap();
    g.bound_params()
        .map(|(id, v)| {
            let n = gr.get(v).map_or(0.0, |d| d.iter().map(|x| x * x).sum::<f64>().sqrt());
            (m.params.name(id).to_string(), n)
        })
        .collect()
}

#[test]
fn consistency_gradient_reaches_generator() {
    let m = toy();
    let item = toy_item(&m);
    let norm_of = |mode: Consistency, prefix: &str| {
        let mut g = Graph::eval();
        let l = item_loss(&mut g, &m, &item, mode);
        grad_norms(&m, &g, l.l_cc)
            .into_iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, v)| v)
            .sum::<f64>()
    };
    assert!(norm_of(Consistency::Joint, "decoder.") > 0.0);
    assert!(norm_of(Consistency::Joint, "adaptor.") > 0.0);
    assert!(norm_of(Consistency::Joint, "intensity_predictor.") > 0.0);
    assert_eq!(norm_of(Consistency::Detached, "decoder."), 0.0);
    assert_eq!(norm_of(Consistency::Detached, "adaptor."), 0.0);
    assert!(norm_of(Consistency::Detached, "intensity_predictor.") > 0.0);
}

#[test]
fn single_utterance_loss_trends_down() {
    let m = toy();
    let item = toy_item(&m);
    let cfg = TrainConfig {
        steps: 60,
        batch_size: 1,
        warmup_steps: 10,
        lr_scale: 0.5,
        consistency: Consistency::Joint,
        seed: 2,
        ..TrainConfig::default()
    };
    let mut tr = Trainer::new(m, cfg).unwrap();
    tr.fit(std::slice::from_ref(&item), |_, _| {}).unwrap();
    let f: Vec<f64> = tr.history.iter().map(|l| l.l_final).collect();
    let avg: Vec<f64> = f.windows(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
    assert!(avg.last().unwrap() < &avg[0], "{avg:?}");
    assert!(f[..50].iter().all(|x| x.is_finite()));
    assert!(tr.history.iter().all(Losses::is_finite));
}
