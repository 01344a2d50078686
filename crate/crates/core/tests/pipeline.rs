use sfda_core::data::{generate_synthetic, ShiftConfig};
use sfda_core::model::Backbone;
use sfda_core::pipeline::{adapt, train_source, AdaptConfig, Variant};

fn small_cfg() -> AdaptConfig {
    AdaptConfig {
        source_epochs: 2,
        stage_epochs: (1, 1),
        batch_size: 4,
        sigma: 0.25,
        k: 3,
        seed: 2,
        ..AdaptConfig::default()
    }
}

#[test]
fn frozen_teacher_stays_at_source_while_student_moves() {
    let src = generate_synthetic(8, (32, 32), &ShiftConfig::identity(), 1).unwrap();
    let tgt = generate_synthetic(8, (32, 32), &ShiftConfig { intensity_scale: 0.9, ..ShiftConfig::identity() }, 2).unwrap();
    let cfg = AdaptConfig { alpha: 1.0, ..small_cfg() };
    let source = train_source(&src, Backbone::UnetTiny.net_config(0.2), &cfg).unwrap().checkpoint.to_model().unwrap();
    let run = adapt(&source, &tgt, &cfg, Variant::Full).unwrap();
    assert_eq!(run.teacher.params(), source.params());
    assert_ne!(run.student.params(), source.params());
    assert_eq!(run.history.len(), 2);
    let p = run.partition.expect("full variant partitions");
    assert_eq!(p.reliable_ids.len() + p.unreliable_ids.len(), 8);
}

#[test]
fn every_variant_runs_and_logs_both_stages() {
    let tgt = generate_synthetic(6, (32, 32), &ShiftConfig::identity(), 3).unwrap();
    let cfg = small_cfg();
    let source = sfda_core::nn::SegNet::new(Backbone::UnetTiny.net_config(0.2), 4).unwrap();
    for v in [Variant::Baseline, Variant::Dpm, Variant::Reliable, Variant::ReliableDpm, Variant::Full] {
        let run = adapt(&source, &tgt, &cfg, v).unwrap();
        assert_eq!(run.history.len(), 2, "{v:?}");
        assert!(run.history.iter().all(|s| s.mean_loss.is_finite()), "{v:?}");
    }
}
