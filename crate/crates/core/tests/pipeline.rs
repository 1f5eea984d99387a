use dhash::codes::CodeMatrix;
use dhash::dataset::{load_labeled_csv, one_hot_encode, read_raw, save_features_csv, write_raw, LabelMap};
use dhash::fsdh;
use dhash::hamming::PackedIndex;
use dhash::metrics::{MetricsReport, QuerySet};
use dhash::model::TrainConfig;
use dhash::persist::{load_codes, load_model, save_codes, save_model};
use dhash::rbf::embed;
use dhash::sdh::{sdh_train, DccConfig};
use dhash::synth::{generate, ClusterSpec};

fn data() -> (dhash::FeatureMatrix, Vec<usize>) {
    generate(
        &ClusterSpec {
            classes: 3,
            n: 300,
            dim: 5,
            spread: 1.0,
        },
        21,
    )
    .unwrap()
}

#[test]
fn csv_train_persist_encode() {
    let dir = tempfile::tempdir().unwrap();
    let (x, labels) = data();
    let text: String = (0..x.rows())
        .map(|i| {
            let feats: Vec<String> = x.row(i).iter().map(|v| format!("{v:?}")).collect();
            format!("{},c{}\n", feats.join(","), labels[i])
        })
        .collect();
    let csv = dir.path().join("data.csv");
    std::fs::write(&csv, format!("f0,f1,f2,f3,f4,label\n{text}")).unwrap();

    let (loaded, names) = load_labeled_csv(&csv, true).unwrap();
    assert_eq!(loaded, x);
    let map = LabelMap::fit(&names);
    assert_eq!(map.classes(), 3);
    let y = one_hot_encode(&map.encode(&names).unwrap(), 3).unwrap();

    let config = TrainConfig {
        bits: 16,
        anchors: 50,
        ..TrainConfig::default()
    };
    let (model, codes, trace) = fsdh::train(&loaded, &y, &config).unwrap();
    assert!(trace.iterations() >= 1);

    let path = dir.path().join("model.dh");
    save_model(&path, &model).unwrap();
    let back = load_model(&path).unwrap();
    let encoded = back.encode(&loaded).unwrap();
    let direct = CodeMatrix::from_signs(&(embed(&loaded, &model.rbf).unwrap() * &model.projection));
    assert_eq!(encoded, direct);

    let codes_path = dir.path().join("train.codes");
    let stored: Vec<u32> = y.ids().iter().map(|&i| i as u32).collect();
    save_codes(&codes_path, &codes, &stored).unwrap();
    let (c2, l2) = load_codes(&codes_path).unwrap();
    assert_eq!((c2, l2), (codes, stored));
}

#[test]
fn raw_and_csv_feature_files_agree() {
    let dir = tempfile::tempdir().unwrap();
    let (x, _) = data();
    let csv = dir.path().join("x.csv");
    save_features_csv(&csv, &x).unwrap();
    let mut raw = Vec::new();
    write_raw(&mut raw, &x).unwrap();
    assert_eq!(&raw[..4], b"DHMX");
    let from_raw = read_raw(raw.as_slice()).unwrap();
    let from_csv = dhash::dataset::load_features(&csv, dhash::dataset::MatrixFormat::Csv).unwrap();
    assert_eq!(from_raw, x);
    assert_eq!(from_csv, x);
}

#[test]
fn both_methods_retrieve_well_on_clustered_data() {
    let (x, labels) = data();
    let y = one_hot_encode(&labels, 3).unwrap();
    let config = TrainConfig {
        bits: 32,
        anchors: 60,
        seed: 4,
        ..TrainConfig::default()
    };
    let (fm, _, _) = fsdh::train(&x, &y, &config).unwrap();
    let (sm, _, _) = sdh_train(&x, &y, &config, &DccConfig::default()).unwrap();
    for model in [fm, sm] {
        let codes = model.encode(&x).unwrap();
        let index = PackedIndex::new(codes.clone(), labels.clone()).unwrap();
        let queries = QuerySet::new(&codes, &labels).excluding_self();
        let report = MetricsReport::compute(&index, &queries, 50, 2, None).unwrap();
        assert!(report.map > 0.6, "{} map {}", model.method, report.map);
        assert!(report.accuracy > 0.8, "{} accuracy {}", model.method, report.accuracy);
    }
}
