mod common;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use situate_core::data_io::{situation_vector, PriorProposal};
use situate_core::engine::{
    init_pool, run_image, run_image_seeded, total_support, Action, Agent, AgentKind, EngineConfig, ImageInput,
    Promotion, Proposal, Run, Workspace,
};
use situate_core::features::FeatureProvider;
use situate_core::geometry::{to_params, PixelBox};
use situate_core::learners::{apply_refinement, RefinerModel};
use situate_core::prob_models::{fit_gaussian, GaussianModel, BLOCK_LEN};

use common::{fixture, Fixture};

fn prior(id: &str, category: &str, conf: f64) -> PriorProposal {
    PriorProposal {
        image_id: id.into(),
        category: category.into(),
        bbox: PixelBox::new(10.0, 10.0, 50.0, 40.0),
        detector_confidence: conf,
    }
}

#[test]
fn pool_initialization_sizes() {
    let f = fixture();
    let cfg = EngineConfig::default();
    let full: Vec<PriorProposal> = f
        .model
        .categories
        .iter()
        .flat_map(|c| (0..12).map(move |i| prior("x", c, i as f64 / 12.0)))
        .collect();
    let pool = init_pool(&full, &f.model, &cfg);
    assert_eq!(pool.len(), 3 * 10 + 30);
    assert_eq!(pool.count_explorers(), 30);
    // the kept priors are the highest-confidence ones
    for a in pool.agents() {
        if let Agent::Prior { detector_confidence, .. } = a {
            assert!(*detector_confidence >= 2.0 / 12.0);
        }
    }

    assert_eq!(init_pool(&[], &f.model, &cfg).len(), 30);

    let five: Vec<PriorProposal> = (0..5).map(|i| prior("x", "dog", 0.1 * i as f64)).collect();
    let pool = init_pool(&five, &f.model, &cfg);
    assert_eq!(pool.len() - pool.count_explorers(), 5);
}

#[test]
fn single_explorer_is_replaced() {
    let f = fixture();
    let cfg = EngineConfig {
        p_prime: 1,
        ..Default::default()
    };
    let input = ImageInput {
        priors: &[],
        ..f.input(0)
    };
    let mut run = Run::new(input, &f.model, &f.oracle, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        run.step(&mut rng);
        assert!(run.pool().count_explorers() >= 1);
    }
}

#[test]
fn zero_budget_scores_minimum() {
    let f = fixture();
    let cfg = EngineConfig {
        max_iterations: 0,
        ..Default::default()
    };
    let r = run_image_seeded(f.input(0), &f.model, &f.oracle, &cfg, 1).unwrap();
    assert_eq!(r.score, 0.01);
    assert!(r.trace.is_empty());
}

#[test]
fn seeded_runs_are_bit_identical() {
    let f = fixture();
    let cfg = EngineConfig::default();
    for i in [0, 60, 120] {
        let a = run_image_seeded(f.input(i), &f.model, &f.oracle, &cfg, 11).unwrap();
        let b = run_image_seeded(f.input(i), &f.model, &f.oracle, &cfg, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.score.to_bits(), b.score.to_bits());
    }
}

#[test]
fn clean_positives_usually_stop_early() {
    let f = fixture();
    let cfg = EngineConfig::default();
    let mut executed: Vec<usize> = f
        .positives()
        .map(|i| {
            let r = run_image_seeded(f.input(i), &f.model, &f.oracle, &cfg, 5).unwrap();
            assert!(r.stats.executed <= 300);
            assert_eq!(r.trace.len(), r.stats.executed);
            r.stats.executed
        })
        .collect();
    executed.sort_unstable();
    assert!(executed[executed.len() / 2] < 300, "median {}", executed[executed.len() / 2]);
}

/// Steps a run by hand and checks pool accounting, support coherence,
/// refiner depth, replacement monotonicity and the discard rule after every
/// agent.
fn check_invariants(f: &Fixture, i: usize, cfg: &EngineConfig, seed: u64) {
    let mut run = Run::new(f.input(i), &f.model, &f.oracle, cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial = run.pool().len();
    while !run.is_finished() {
        let before: Vec<Option<f64>> = run
            .workspace()
            .detections()
            .iter()
            .map(|d| d.as_ref().map(|d| d.proposal.total))
            .collect();
        let ev = run.step(&mut rng).unwrap().clone();
        let c = f.model.category_index(&ev.category).unwrap();
        match ev.action {
            Action::Replaced => assert!(ev.total > before[c].unwrap()),
            Action::KeptIncumbent => assert!(ev.total <= before[c].unwrap()),
            Action::Detected => assert!(before[c].is_none() && ev.total > cfg.tau_detect),
            Action::Discarded => assert!(!ev.spawned_refiner && ev.total <= cfg.tau_detect),
            Action::MarkedForRefinement => assert!(ev.spawned_refiner && ev.internal > cfg.tau_refine),
            Action::FeatureUnavailable => {}
        }
        if ev.agent != AgentKind::Refiner && ev.internal <= cfg.tau_refine {
            assert!(!ev.spawned_refiner);
        }

        let s = run.stats();
        assert_eq!(s.executed + run.pool().len() - s.spawned_refiners - s.explorer_replacements, initial);
        assert!(run.pool().count_explorers() >= cfg.p_prime);
        for a in run.pool().agents() {
            if let Agent::Refiner { depth, .. } = a {
                assert!(*depth >= 1 && *depth <= cfg.r_max);
            }
        }

        let ws = run.workspace();
        for (c, d) in ws.detections().iter().enumerate() {
            let Some(d) = d else { continue };
            let ext = ws.external_support(c, &d.proposal.params, cfg);
            let total = total_support(d.proposal.internal, ext, cfg);
            assert!((d.proposal.external - ext).abs() <= 1e-12);
            assert!((d.proposal.total - total).abs() <= 1e-12);
            assert_eq!(d.weak, d.proposal.total < cfg.tau_detect);
            assert!((0.0..=1.0).contains(&d.proposal.internal));
        }
    }
}

#[test]
fn loop_invariants_hold_at_every_step() {
    let f = fixture();
    let cfg = EngineConfig::default();
    for (k, i) in [0usize, 3, 17, 50, 51, 52, 53, 54, 120, 249].into_iter().enumerate() {
        check_invariants(f, i, &cfg, 100 + k as u64);
    }
    let deep = EngineConfig {
        r_max: 4,
        tau_refine: 0.1,
        ..Default::default()
    };
    check_invariants(f, 1, &deep, 9);
}

#[test]
fn first_detection_conditions_other_categories() {
    let f = fixture();
    let cfg = EngineConfig::default();
    let r = &f.corpus.test[0];
    let mut ws = Workspace::new(&r.image_id, r.dims, 3);
    assert!((0..3).all(|c| ws.conditioned(c).is_none()));
    let params = to_params(r.box_for("dog").unwrap(), r.dims).unwrap();
    let proposal = Proposal {
        category: 1,
        bbox: *r.box_for("dog").unwrap(),
        params,
        internal: 0.9,
        external: 0.5,
        total: total_support(0.9, 0.5, &cfg),
        source: AgentKind::Prior,
    };
    assert_eq!(ws.promote(proposal, &f.model, &cfg), Promotion::Installed);
    assert!(ws.conditioned(0).is_some() && ws.conditioned(2).is_some());
    assert!(ws.conditioned(1).is_none());
    // the detection's own context is still empty, so its external stays neutral
    assert_eq!(ws.detection(1).unwrap().proposal.external, 0.5);
}

#[test]
fn external_support_is_one_at_conditional_mean() {
    let f = fixture();
    let cfg = EngineConfig::default();
    let r = &f.corpus.test[0];
    let mut ws = Workspace::new(&r.image_id, r.dims, 3);
    let b = *r.box_for("dog-walker").unwrap();
    let p = Proposal {
        category: 0,
        bbox: b,
        params: to_params(&b, r.dims).unwrap(),
        internal: 1.0,
        external: 0.5,
        total: 0.8,
        source: AgentKind::Explorer,
    };
    ws.promote(p, &f.model, &cfg);
    let mean = ws.conditioned(1).unwrap().mean().clone();
    let at_mean = situate_core::geometry::BoxParams::from_slice(mean.as_slice());
    assert!((ws.external_support(1, &at_mean, &cfg) - 1.0).abs() < 1e-12);
    let far = situate_core::geometry::BoxParams {
        cx: at_mean.cx + 0.8,
        ..at_mean
    };
    assert!(ws.external_support(1, &far, &cfg) < 0.05);
}

#[test]
fn replacement_weakens_ill_fitting_detection() {
    let f = fixture();
    let cfg = EngineConfig::default();
    let r = &f.corpus.test[0];
    let mut ws = Workspace::new(&r.image_id, r.dims, 3);
    let mk = |c: usize, b: PixelBox, internal: f64| Proposal {
        category: c,
        bbox: b,
        params: to_params(&b, r.dims).unwrap(),
        internal,
        external: 0.5,
        total: total_support(internal, 0.5, &cfg),
        source: AgentKind::Explorer,
    };
    // a far-off leash first, then the true dog-walker
    let leash = PixelBox::new(r.dims.w() - 30.0, r.dims.h() - 8.0, 30.0, 8.0);
    assert_eq!(ws.promote(mk(2, leash, 0.8), &f.model, &cfg), Promotion::Installed);
    assert!(!ws.detection(2).unwrap().weak);
    let walker = *r.box_for("dog-walker").unwrap();
    assert_eq!(ws.promote(mk(0, walker, 0.95), &f.model, &cfg), Promotion::Installed);
    let d = ws.detection(2).unwrap();
    assert!(d.weak, "leash total {}", d.proposal.total);
    assert_eq!(ws.detected_count(), 2);

    // equal totals keep the incumbent
    let same = ws.detection(0).unwrap().proposal.clone();
    assert_eq!(ws.promote(same, &f.model, &cfg), Promotion::Rejected);
}

#[test]
fn uniform_mode_ignores_relationship_model() {
    let f = fixture();
    let cfg = EngineConfig {
        uniform_mode: true,
        ..Default::default()
    };
    let mut other = f.model.clone();
    other.relationship = GaussianModel::new(DVector::from_element(12, 0.3), DMatrix::identity(12, 12) * 2.0)
        .unwrap()
        .with_layout(&f.model.categories)
        .unwrap();
    for i in [0, 100] {
        let a = run_image_seeded(f.input(i), &f.model, &f.oracle, &cfg, 4).unwrap();
        let b = run_image_seeded(f.input(i), &other, &f.oracle, &cfg, 4).unwrap();
        assert_eq!(a, b);
        assert!(a.trace.iter().all(|e| e.external == 0.5 || e.action == Action::FeatureUnavailable));
    }
}

#[test]
fn oracle_internal_support_tracks_overlap() {
    let clean = Fixture::build(21, 0.0);
    for i in clean.positives().take(10) {
        let r = &clean.corpus.test[i];
        for c in &clean.model.categories {
            let gt = r.box_for(c).unwrap();
            let loc = &clean.model.localizers[c];
            let on = loc.predict(&clean.oracle.features(&r.image_id, gt).unwrap()).unwrap();
            assert!(on > 0.85, "{c}: ground-truth box internal {on}");
            // a box in the farthest corner from the object
            let (cx, cy) = gt.center();
            let x = if cx < r.dims.w() / 2.0 { r.dims.w() - 20.0 } else { 0.0 };
            let y = if cy < r.dims.h() / 2.0 { r.dims.h() - 20.0 } else { 0.0 };
            let off_box = PixelBox::new(x, y, 20.0, 20.0);
            if situate_core::geometry::iou(&off_box, gt) == 0.0 {
                let off = loc.predict(&clean.oracle.features(&r.image_id, &off_box).unwrap()).unwrap();
                assert!(on > off);
            }
        }
    }
}

#[test]
fn zero_delta_refiner_keeps_box() {
    let f = fixture();
    let r = &f.corpus.test[0];
    let mut z = f.model.refiners["dog"].clone();
    for m in [&mut z.tx, &mut z.ty, &mut z.tw, &mut z.th] {
        m.weights.iter_mut().for_each(|w| *w = 0.0);
        m.bias = 0.0;
    }
    let zero: RefinerModel = z;
    let b = *r.box_for("dog").unwrap();
    let out = apply_refinement(&zero, &f.oracle.features(&r.image_id, &b).unwrap(), &b, r.dims).unwrap();
    assert!((out.x - b.x).abs() < 1e-9 && (out.w - b.w).abs() < 1e-9);
}

#[test]
fn planted_relationship_mean_recovered() {
    let f = fixture();
    let vectors: Vec<Vec<f64>> = f
        .corpus
        .train
        .iter()
        .map(|r| situation_vector(r, &f.model.categories).unwrap())
        .collect();
    let direct = fit_gaussian(&vectors, 1e-6).unwrap();
    let planted = f.spec.planted.mean();
    for d in 0..3 * BLOCK_LEN {
        assert!((f.model.relationship.mean()[d] - planted[d]).abs() < 0.05, "dim {d}");
        assert!((f.model.relationship.mean()[d] - direct.mean()[d]).abs() < 1e-12);
    }
    // log-normal median tracks the median area ratio
    for c in &f.model.categories {
        let mut areas: Vec<f64> = f
            .corpus
            .train
            .iter()
            .map(|r| to_params(r.box_for(c).unwrap(), r.dims).unwrap().area_ratio)
            .collect();
        areas.sort_by(f64::total_cmp);
        let median = areas[areas.len() / 2];
        let m = f.model.size_shape_priors[c].area.median();
        assert!((m / median - 1.0).abs() < 0.15, "{c}: {m} vs {median}");
    }
}

#[test]
fn identical_training_images_still_train() {
    let f = fixture();
    let base = f.corpus.train[0].clone();
    let scene = f.corpus.scenes.iter().find(|s| s.image_id == base.image_id).unwrap().clone();
    let mut records = Vec::new();
    let mut scenes = Vec::new();
    for i in 0..20 {
        let mut r = base.clone();
        r.image_id = format!("copy-{i}");
        let mut s = scene.clone();
        s.image_id = r.image_id.clone();
        records.push(r);
        scenes.push(s);
    }
    let oracle = situate_core::features::OracleFeatures::new(f.oracle.config().clone(), scenes).unwrap();
    let model =
        situate_core::engine::train_situation(&records, &f.spec.situation, &oracle, &EngineConfig::default()).unwrap();
    assert!(model.relationship.cov().iter().all(|v| v.is_finite()));
    let r = run_image_seeded(
        ImageInput {
            image_id: "copy-0",
            dims: base.dims,
            priors: &[],
        },
        &model,
        &oracle,
        &EngineConfig::default(),
        0,
    )
    .unwrap();
    assert!(r.score.is_finite());
}

#[test]
fn training_rejects_missing_category() {
    let f = fixture();
    let mut bad = f.corpus.train[..20].to_vec();
    bad[3].boxes.retain(|b| b.category != "leash");
    assert!(situate_core::engine::train_situation(&bad, &f.spec.situation, &f.oracle, &EngineConfig::default()).is_err());
}

#[test]
fn model_document_round_trips() {
    let f = fixture();
    let text = f.model.to_json().unwrap();
    let back = situate_core::engine::TrainedSituationModel::from_json(&text).unwrap();
    assert_eq!(back, f.model);
    assert_eq!(back.to_json().unwrap(), text);
    let wrong = text.replacen("situation_model", "gmm", 1);
    assert!(situate_core::engine::TrainedSituationModel::from_json(&wrong).is_err());
}

#[test]
fn explicit_rng_matches_seeded_helper() {
    let f = fixture();
    let cfg = EngineConfig::default();
    let id = &f.corpus.test[2].image_id;
    let mut rng = ChaCha8Rng::seed_from_u64(situate_core::engine::image_seed(8, id));
    let a = run_image(f.input(2), &f.model, &f.oracle, &cfg, &mut rng).unwrap();
    let b = run_image_seeded(f.input(2), &f.model, &f.oracle, &cfg, 8).unwrap();
    assert_eq!(a, b);
}
