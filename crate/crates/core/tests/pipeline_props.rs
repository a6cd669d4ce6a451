use std::sync::OnceLock;

use rdcomm_core::entropy_coder::CoderVariant;
use rdcomm_core::mi_estimator::Discriminator;
use rdcomm_core::pipeline::{
    run_round, run_round_prepared, run_sweep, train_all, PreparedWorld, RoundMode, RoundSettings, Selector,
    SweepConfig, TrainConfig, TrainedModel, Trainer,
};
use rdcomm_core::simworld::{
    self, decode_labels, generate, posterior_from_features, posterior_from_observations, score_iou, Fov, WorldConfig,
};
use rdcomm_core::vq_codec::{Codebook, LayeredCodebook, Projection};
use rdcomm_core::Error;

fn world(seed: u64) -> WorldConfig {
    WorldConfig::two_agent(16, 16, 4, 0.1, 0.3, seed)
}

fn small_train_config() -> TrainConfig {
    let mut cfg = TrainConfig::new(world(0), (500..504).collect(), 9);
    cfg.n_base = 8;
    cfg.n_res = 16;
    cfg.disc_hidden = vec![16];
    cfg.disc_steps = 60;
    cfg.disc_max_pairs = 600;
    cfg
}

fn model() -> &'static TrainedModel {
    static MODEL: OnceLock<TrainedModel> = OnceLock::new();
    MODEL.get_or_init(|| train_all(&small_train_config()).unwrap())
}

fn settings(tau_c: f64, tau_mi: f64, selector: Selector) -> RoundSettings {
    RoundSettings {
        tau_c,
        tau_mi,
        coder: CoderVariant::TaskEntropy,
        selector,
        mode: RoundMode::AllPairs,
    }
}

#[test]
fn training_is_deterministic() {
    let again = train_all(&small_train_config()).unwrap();
    assert_eq!(&again, model());
    assert_eq!(again.tau_c_draws.len(), 4);
}

#[test]
fn training_stages_must_run_in_order() {
    let cfg = small_train_config();
    let mut t = Trainer::new(&cfg).unwrap();
    assert!(matches!(t.accumulate_frequencies(), Err(Error::StageOrder(_))));
    assert!(matches!(t.train_discriminator(), Err(Error::StageOrder(_))));
    assert!(matches!(t.build_codes(CoderVariant::TaskEntropy), Err(Error::StageOrder(_))));
    t.fit_codebooks().unwrap();
    assert!(matches!(t.build_codes(CoderVariant::TaskEntropy), Err(Error::StageOrder(_))));
    t.train_discriminator().unwrap();
    assert!(matches!(Trainer::new(&cfg).unwrap().finish(), Err(Error::StageOrder(_))));
    assert!(matches!(t.finish(), Err(Error::StageOrder(_))));
}

#[test]
fn confidence_mass_concentrates_on_object_embeddings() {
    let cb = &model().codebook;
    let k = 4;
    let is_object = |row: &[f64]| {
        let best = (0..k).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        best != 0 && row[best] > 0.5
    };
    let (mut conf_obj, mut conf_all, mut occ_obj, mut occ_all) = (0.0, 0.0, 0.0, 0.0);
    for (i, row) in cb.base.rows().enumerate() {
        let (c, o) = (cb.base.conf_freq[i], cb.base.occ_freq[i]);
        conf_all += c;
        occ_all += o;
        if is_object(row) {
            conf_obj += c;
            occ_obj += o;
        }
    }
    assert!(conf_obj / conf_all > occ_obj / occ_all, "{conf_obj}/{conf_all} vs {occ_obj}/{occ_all}");
    assert!(conf_obj / conf_all > 0.5);
}

#[test]
fn rounds_are_deterministic_and_round_trip() {
    let set = settings(0.3, 0.5, Selector::Mi);
    let a = run_round(&world(77), model(), &set).unwrap();
    let b = run_round(&world(77), model(), &set).unwrap();
    assert_eq!(a.bitstreams, b.bitstreams);
    assert_eq!(a.total_bits, b.total_bits);
    assert_eq!(a.mean_iou, b.mean_iou);
    assert_eq!(a.n_messages, 2);
    let sum: u64 = a.bitstreams.iter().map(|s| s.len() as u64 * 8).sum();
    assert!(sum >= a.total_bits, "byte streams hold at least the counted bits");
}

#[test]
fn rate_never_increases_with_tau_c() {
    for seed in 0..5 {
        let prep = PreparedWorld::new(generate(&world(900 + seed)).unwrap(), model(), RoundMode::AllPairs).unwrap();
        let codes = model().codes(CoderVariant::TaskEntropy).unwrap();
        for selector in Selector::ALL {
            if selector == Selector::None {
                continue;
            }
            for tau_mi in [0.2, 0.6, f64::INFINITY] {
                let mut last = u64::MAX;
                for tau_c in [0.0, 0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0] {
                    let r = run_round_prepared(&prep, model(), &codes, &settings(tau_c, tau_mi, selector)).unwrap();
                    assert!(r.total_bits <= last, "seed {seed} {selector:?} tau_mi {tau_mi} tau_c {tau_c}");
                    last = r.total_bits;
                }
            }
        }
    }
}

#[test]
fn mi_selector_spends_bits_on_the_abstract() {
    let r = run_round(&world(31), model(), &settings(0.3, 0.5, Selector::Mi)).unwrap();
    assert!(r.abstract_bits > 0);
    assert!(r.abstract_fraction() > 0.0 && r.abstract_fraction() <= 1.0);
    let none = run_round(&world(31), model(), &settings(0.3, 0.5, Selector::ConfidenceOnly)).unwrap();
    assert_eq!(none.abstract_bits, 0);
    assert_eq!(none.abstract_fraction(), 0.0);
}

#[test]
fn everything_sent_exactly_matches_full_share() {
    let cfg = WorldConfig {
        fovs: vec![Fov::Full, Fov::Full],
        ..WorldConfig::two_agent(12, 12, 3, 0.2, 0.3, 4)
    };
    let w = generate(&cfg).unwrap();
    // exact codebook: every distinct feature vector is a base row, one zero residual
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for a in 0..2 {
        for cell in w.features(a).cells() {
            if !rows.iter().any(|r| r.as_slice() == cell) {
                rows.push(cell.to_vec());
            }
        }
    }
    let c = cfg.channels();
    let cb = LayeredCodebook::new(
        Codebook::new(c, &rows).unwrap(),
        Codebook::new(c, &[vec![0.0; c]]).unwrap(),
        Projection::identity(c),
        Projection::identity(c),
    )
    .unwrap();
    let m = TrainedModel {
        codebook: cb,
        discriminator: Discriminator::zeros(2 * c, &[4]).unwrap(),
        tau_c_draws: vec![],
        disc_loss: vec![],
    };
    let set = RoundSettings {
        coder: CoderVariant::Fixed,
        ..settings(0.0, f64::INFINITY, Selector::Mi)
    };
    let prep = PreparedWorld::new(w, &m, RoundMode::AllPairs).unwrap();
    let base = prep.baselines(RoundMode::AllPairs).unwrap();
    let r = run_round_prepared(&prep, &m, &m.codes(CoderVariant::Fixed).unwrap(), &set).unwrap();
    assert_eq!(r.mean_iou, base.full_share.mean);
    assert_eq!(r.per_class_iou, base.full_share.per_class);
    assert!(r.distortion_nats.abs() < 1e-12);
}

#[test]
fn fusing_a_second_agent_does_not_hurt() {
    for seed in 0..20 {
        let cfg = world(seed);
        let w = generate(&cfg).unwrap();
        for a in 0..2 {
            let single = decode_labels(&posterior_from_observations(&[&w.observations[a]], &cfg).unwrap());
            let both = decode_labels(&posterior_from_observations(&[&w.observations[0], &w.observations[1]], &cfg).unwrap());
            let s = score_iou(&single, &w.truth, cfg.k).unwrap().mean;
            let f = score_iou(&both, &w.truth, cfg.k).unwrap().mean;
            assert!(f >= s - 0.01, "seed {seed} agent {a}: {f} < {s}");
        }
    }
}

#[test]
fn unseen_cells_decode_to_the_prior_argmax() {
    let cfg = WorldConfig {
        fovs: vec![
            Fov::Rect { u0: 0, v0: 0, u1: 16, v1: 5 },
            Fov::Rect { u0: 0, v0: 11, u1: 16, v1: 16 },
        ],
        ..world(3)
    };
    let prior = cfg.prior();
    let prior_argmax = (0..cfg.k).max_by(|&a, &b| prior[a].total_cmp(&prior[b]).then(b.cmp(&a))).unwrap();
    let w = generate(&cfg).unwrap();
    let fused = simworld::fuse(&w.features(0), &w.features(1)).unwrap();
    let labels = decode_labels(&posterior_from_features(&fused, &cfg).unwrap());
    for u in 0..16 {
        for v in 5..11 {
            assert_eq!(*labels.get(u, v), prior_argmax);
        }
    }
}

#[test]
fn singleton_sweep_has_one_point() {
    let sweep = SweepConfig {
        world: world(0),
        tau_c: vec![0.3],
        tau_mi: vec![0.5],
        seeds: vec![12],
        coder: CoderVariant::Occurrence,
        selector: Selector::Mi,
        mode: RoundMode::AllPairs,
    };
    let res = run_sweep(&sweep, model()).unwrap();
    assert_eq!(res.points.len(), 1);
    assert_eq!(res.rounds.len(), 1);
    assert!(res.points[0].pareto);
    assert_eq!(res.points[0].bpp.std, 0.0);
    let direct = run_round(&world(12), model(), &RoundSettings { coder: CoderVariant::Occurrence, ..settings(0.3, 0.5, Selector::Mi) }).unwrap();
    assert_eq!(res.rounds[0].bitstreams, direct.bitstreams);
}

#[test]
fn sweep_rows_are_ordered_and_reject_bad_thresholds() {
    let mut sweep = SweepConfig {
        world: world(0),
        tau_c: vec![0.1, 0.5],
        tau_mi: vec![0.3, f64::INFINITY],
        seeds: vec![3, 1, 2],
        coder: CoderVariant::TaskEntropy,
        selector: Selector::Mi,
        mode: RoundMode::AllPairs,
    };
    let res = run_sweep(&sweep, model()).unwrap();
    let keys: Vec<(f64, f64, u64)> = res.rounds.iter().map(|r| (r.tau_c, r.tau_mi, r.seed)).collect();
    let mut want = Vec::new();
    for tc in [0.1, 0.5] {
        for tm in [0.3, f64::INFINITY] {
            for s in [3, 1, 2] {
                want.push((tc, tm, s));
            }
        }
    }
    assert_eq!(keys, want);
    sweep.tau_c = vec![f64::NAN];
    assert!(run_sweep(&sweep, model()).is_err());
    sweep.tau_c = vec![0.1];
    sweep.tau_mi = vec![f64::NAN];
    assert!(run_sweep(&sweep, model()).is_err());
}
