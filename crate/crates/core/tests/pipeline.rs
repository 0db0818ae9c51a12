use tension_core::brnn::{predict, read_model, train, write_model, Example, ModelFile, TrainConfig};
use tension_core::dataset::{extract_piece, Piece};
use tension_core::eval_stats::Standardizer;
use tension_core::mi_select::{mi_table, select_features};
use tension_core::performance_params::{read_targets_csv, targets_csv, Target};
use tension_core::score_features::{canonical_features, FeatureMatrix};
use tension_core::spiral_array::SpiralParams;
use tension_core::symbolic_io::{parse_performance, parse_score, write_performance, write_score};
use tension_core::synth::{synth_corpus, Rule, SynthConfig};
use tension_core::tension::WindowConfig;

fn corpus() -> Vec<Piece> {
    let (w, p) = (WindowConfig::default(), SpiralParams::default());
    let cfg = SynthConfig { pieces: 5, length: 40, seed: 21, rule: Rule::TcdSlow, noise_sd: 0.05 };
    synth_corpus(&cfg, &w, &p)
        .unwrap()
        .into_iter()
        .map(|s| {
            // go through the text formats as the command-line tool does
            let score = parse_score(&write_score(&s.score)).unwrap();
            assert_eq!(score, s.score);
            let perf = parse_performance(&write_performance(&s.performance), &score).unwrap();
            assert_eq!(perf, s.performance);
            extract_piece(&s.id, &score, &perf, &w, &p).unwrap()
        })
        .collect()
}

#[test]
fn csv_round_trips_preserve_pieces() {
    for piece in corpus() {
        let meta = vec!["piece=".to_string() + &piece.id];
        let features = FeatureMatrix::from_csv(&piece.features.to_csv(&meta)).unwrap();
        let targets = read_targets_csv(&targets_csv(&piece.targets, &meta)).unwrap();
        assert_eq!(Piece::new(piece.id.clone(), features, targets).unwrap(), piece);
        let names: Vec<String> = canonical_features().iter().map(|s| s.to_string()).collect();
        assert_eq!(piece.features.names, names);
    }
}

#[test]
fn selection_favours_the_generating_feature() {
    let pieces = corpus();
    let refs: Vec<&Piece> = pieces.iter().collect();
    let table = mi_table(&refs, &[Target::Bpr], 3, 0).unwrap();
    let top = select_features(&table, Target::Bpr, 3).unwrap();
    assert!(top.iter().any(|f| f == "t_cd"), "{top:?}");
}

#[test]
fn trained_model_survives_file_round_trip() {
    let pieces = corpus();
    let names: Vec<String> = vec!["t_cd".into(), "b_phi".into(), "vic1".into()];
    let inputs: Vec<Vec<Vec<f64>>> = pieces.iter().map(|p| p.inputs(&names).unwrap()).collect();
    let seqs: Vec<&[Vec<f64>]> = inputs.iter().map(Vec::as_slice).collect();
    let std = Standardizer::fit(&seqs, names.len());
    let data: Vec<Example> = inputs
        .iter()
        .zip(&pieces)
        .map(|(x, p)| Example { inputs: std.apply(x), targets: p.target(Target::Bpr) })
        .collect();
    let cfg = TrainConfig { epochs: 10, seed: 4, ..Default::default() };
    let (params, log) = train(&data, names.len(), &cfg).unwrap();
    assert!(log.epochs.len() <= 11);
    let file = ModelFile {
        params,
        features: names.clone(),
        input_mean: std.mean.clone(),
        input_scale: std.scale.clone(),
        meta: cfg.to_kv(),
    };
    let back = read_model(&write_model(&file)).unwrap();
    assert_eq!(back, file);
    let raw = pieces[0].inputs(&names).unwrap();
    assert_eq!(
        predict(&back.params, &back.standardize(&raw)).unwrap(),
        predict(&file.params, &std.apply(&raw)).unwrap()
    );
}
