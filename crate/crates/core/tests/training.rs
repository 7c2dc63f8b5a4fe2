use mosare::alignment::ClassGmms;
use mosare::encoders::EncodedInputs;
use mosare::evaluation::Scores;
use mosare::fusion::Routing;
use mosare::graph::Graph;
use mosare::model::PassOptions;
use mosare::training::total_loss;
use mosare::{generate_synthetic, train, train_dataset, Dataset, Error, Model, RunConfig, SyntheticSpec};

fn dataset(separation: f64) -> Dataset {
    generate_synthetic(&SyntheticSpec {
        samples_per_class: 12,
        dim: 8,
        c: 4,
        n_h: 4,
        class_separation: separation,
        ..Default::default()
    })
    .unwrap()
}

fn fast_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model.c = 4;
    cfg.model.n_h = 4;
    cfg.fusion.k_loc = 2;
    cfg.align.m_comp = 2;
    cfg.train.lr = 1e-3;
    cfg.train.batch_size = 8;
    cfg.train.epochs = 12;
    cfg.train.warmup = 3;
    cfg
}

#[test]
fn breakdown_reconstructs_the_total() {
    let ds = dataset(4.0);
    let cfg = fast_config();
    let model = Model::for_training(cfg.clone(), 3, 8, &ds.records).unwrap();
    let inputs = model.prepare_all(&ds.records).unwrap();
    let labels = ds.labels();
    let gmms = ClassGmms::init_kmeans(model.embed(&inputs).view(), &labels, 3, 2, 0).unwrap();
    let refs: Vec<&EncodedInputs> = inputs.iter().collect();
    for epoch in [0, cfg.train.warmup] {
        let mut g = Graph::new();
        let p = model.store.bind(&mut g, false);
        let mut routing = Routing::new();
        let fwd = model.forward(&mut g, &p, &refs, &mut routing, PassOptions::default());
        let nodes = total_loss(&mut g, &fwd, &labels, &cfg, epoch, Some(&gmms), &mut routing).unwrap();
        let b = nodes.breakdown(&g);
        let l = &cfg.loss;
        let sum = l.lambda1 * b.symcl + l.lambda2 * b.mcl + l.lambda3 * b.rec + l.lambda4 * b.cls();
        assert!((sum - b.total).abs() < 1e-10, "epoch {epoch}: {sum} vs {}", b.total);
        if epoch == 0 {
            assert_eq!((b.symcl, b.mcl), (0.0, 0.0));
        } else {
            assert!(b.symcl > 0.0 && b.mcl > 0.0);
        }
    }
}

#[test]
fn supervised_only_training_learns_separable_classes() {
    let ds = dataset(6.0);
    let mut cfg = fast_config();
    cfg.loss.lambda1 = 0.0;
    cfg.loss.lambda2 = 0.0;
    cfg.loss.lambda3 = 0.0;
    let out = train_dataset(&ds, &cfg).unwrap();
    let hold: Vec<usize> = (0..ds.records.len())
        .filter(|&i| ds.fold_of().unwrap()[i] == cfg.train.holdout_fold)
        .map(|i| ds.records[i].label)
        .collect();
    let scores = Scores::of(out.holdout_probs.view(), &hold);
    assert!(scores.auc.unwrap() > 0.9, "{scores:?}");
    let last = out.log.iter().rev().find(|r| r.split == "train").unwrap();
    // the other terms are still logged, but carry zero weight
    assert!((last.losses.total - cfg.loss.lambda4 * last.losses.cls()).abs() < 1e-9);
}

#[test]
fn log_has_a_train_and_holdout_line_per_epoch() {
    let ds = dataset(4.0);
    let cfg = fast_config();
    let mut seen = 0;
    let mut count = |_: &mosare::EpochRecord| seen += 1;
    let folds = ds.fold_of().unwrap();
    let (tr, ho): (Vec<usize>, Vec<usize>) = (0..folds.len()).partition(|&i| folds[i] != 0);
    let out = train(&ds.subset(&tr), &ds.subset(&ho), 3, 8, &cfg, Some(&mut count)).unwrap();
    assert_eq!(out.log.len(), 2 * cfg.train.epochs);
    assert_eq!(seen, out.log.len());
    for (e, pair) in out.log.chunks(2).enumerate() {
        assert_eq!((pair[0].epoch, pair[0].split.as_str()), (e, "train"));
        assert_eq!((pair[1].epoch, pair[1].split.as_str()), (e, "holdout"));
        assert!(pair[1].auc.is_some());
    }
    let active: Vec<bool> = out.log.iter().step_by(2).map(|r| r.losses.symcl > 0.0).collect();
    assert!(active[..cfg.train.warmup].iter().all(|&a| !a));
    assert!(active[cfg.train.warmup..].iter().all(|&a| a));
}

#[test]
fn rejects_bad_schedules_and_labels() {
    let ds = dataset(4.0);
    let mut cfg = fast_config();
    cfg.train.warmup = cfg.train.epochs;
    assert!(matches!(train_dataset(&ds, &cfg), Err(Error::Config { .. })));

    let mut bad = ds.clone();
    bad.records[0].label = 7;
    let err = train(&bad.records, &[], 3, 8, &fast_config(), None).err().expect("label error");
    assert!(matches!(err, Error::Label { label: 7, n_classes: 3 }), "{err}");
}

#[test]
fn holdout_fold_must_exist() {
    let ds = dataset(4.0);
    let mut cfg = fast_config();
    cfg.train.holdout_fold = 9;
    assert!(matches!(train_dataset(&ds, &cfg), Err(Error::Config { .. })));
}
