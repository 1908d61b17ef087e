use cropwise_core::data::{fixture_dataset, stratified_split};
use cropwise_core::evaluation::evaluate;
use cropwise_core::models::{
    load_model, save_model, train_model, Classifier, Criterion, DtParams, Hyperparameters, ModelArtifact,
    ModelKind, RfParams, Splitter,
};

fn quick(kind: ModelKind) -> Hyperparameters {
    match Hyperparameters::best(kind) {
        Hyperparameters::Rf(_) => Hyperparameters::Rf(RfParams {
            max_depth: 6,
            n_estimators: 20,
            criterion: Criterion::Entropy,
        }),
        Hyperparameters::Knn(mut p) => {
            p.n_neighbours = 3;
            Hyperparameters::Knn(p)
        }
        Hyperparameters::Mlp(mut p) => {
            p.hidden_layer_sizes = vec![16];
            p.alpha = 1e-3;
            p.learning_rate_init = 1e-2;
            Hyperparameters::Mlp(p)
        }
        other => other,
    }
}

#[test]
fn every_kind_trains_evaluates_and_round_trips() {
    let data = fixture_dataset();
    let (train, test) = stratified_split(&data, 0.3, 42).unwrap();
    assert_eq!(test.len(), 12);
    for kind in ModelKind::ALL {
        let model = train_model(kind, &quick(kind), &train, 42).unwrap();
        let report = evaluate(&model, &test).unwrap();
        assert_eq!(report.confusion.total(), 12);
        assert!(report.accuracy >= 75.0, "{kind}: {}", report.accuracy);

        let bytes = save_model(&model);
        let loaded = load_model(&bytes).unwrap();
        assert_eq!(save_model(&loaded), bytes, "{kind} re-serializes identically");
        for s in &test.samples {
            let a = model.predict_proba(&s.features);
            let b = loaded.predict_proba(&s.features);
            assert_eq!(
                a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}

#[test]
fn training_twice_gives_identical_bytes() {
    let data = fixture_dataset();
    for kind in ModelKind::ALL {
        let a = save_model(&train_model(kind, &quick(kind), &data, 7).unwrap());
        let b = save_model(&train_model(kind, &quick(kind), &data, 7).unwrap());
        assert_eq!(a, b, "{kind}");
    }
}

#[test]
fn artifact_carries_background_rows() {
    let data = fixture_dataset();
    let params = Hyperparameters::Dt(DtParams {
        max_depth: 4,
        criterion: Criterion::Gini,
        splitter: Splitter::Best,
        min_samples_split: 2,
    });
    let model = train_model(ModelKind::Dt, &params, &data, 1).unwrap();
    let artifact = ModelArtifact::new(&model, data.samples[..5].to_vec());
    let back = ModelArtifact::from_bytes(&artifact.to_bytes()).unwrap();
    assert_eq!(back.background, data.samples[..5].to_vec());
    assert_eq!(back.into_model(), model);
}

#[test]
fn unlabeled_test_rows_are_rejected() {
    let data = fixture_dataset();
    let model = train_model(ModelKind::Knn, &quick(ModelKind::Knn), &data, 0).unwrap();
    let mut test = data.clone();
    test.samples[3].label = None;
    let err = evaluate(&model, &test).unwrap_err();
    assert!(err.to_string().contains("sample 3"), "{err}");
}
