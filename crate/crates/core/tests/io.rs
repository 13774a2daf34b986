mod common;

use std::path::Path;

use proptest::prelude::*;
use volcal::dupire::{OptionKind, OptionQuote};
use volcal::io::{
    load_config, parse_quotes, read_key_values, read_quotes, read_surface, save_config, sidecar_path, write_dataset,
    write_quotes, Coordinates, ExperimentConfig, ExportGrid, SurfaceSource,
};
use volcal::mc::{ExactField, SimConfig};
use volcal::net::{init_params, NetConfig, PriceSurfaceModel};
use volcal::pipeline::generate;
use volcal::Error;

fn parse(bytes: &[u8]) -> volcal::Result<volcal::io::QuoteFile> {
    parse_quotes(bytes, Path::new("mem.csv"), 1000.0, OptionKind::Call)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn ingestion_never_panics_on_arbitrary_bytes(bytes in proptest::collection::vec(any::<u8>(), 0..400)) {
        match parse(&bytes) {
            Ok(file) => {
                prop_assert!(!file.quotes.is_empty());
                for q in &file.quotes {
                    prop_assert!(q.check(1000.0, OptionKind::Call).is_ok());
                }
            }
            Err(Error::MalformedHeader { .. } | Error::EmptyAfterValidation(_) | Error::VersionMismatch(_)) => {}
            Err(e) => prop_assert!(false, "unexpected error {e:?}"),
        }
    }

    #[test]
    fn every_data_row_is_accepted_or_rejected(
        rows in proptest::collection::vec((0.0..900.0f64, 1.0..3000.0f64, 0.01..2.0f64, any::<bool>()), 1..40)
    ) {
        let mut text = String::from("strike,maturity,price\n");
        let mut good = 0;
        for (price, strike, maturity, corrupt) in &rows {
            if *corrupt {
                text.push_str(&format!("{strike},{maturity},abc\n"));
            } else {
                if OptionQuote::new(*price, *strike, *maturity).check(1000.0, OptionKind::Call).is_ok() {
                    good += 1;
                }
                text.push_str(&format!("{strike:?},{maturity:?},{price:?}\n"));
            }
        }
        match parse(text.as_bytes()) {
            Ok(file) => {
                prop_assert_eq!(file.quotes.len(), good);
                prop_assert_eq!(file.quotes.len() + file.rejections.len(), rows.len());
            }
            Err(Error::EmptyAfterValidation(_)) => prop_assert_eq!(good, 0),
            Err(e) => prop_assert!(false, "unexpected error {e:?}"),
        }
    }

    #[test]
    fn quote_files_round_trip_exactly(
        rows in proptest::collection::vec((0.0..1000.0f64, 1.0..3000.0f64, 0.01..2.0f64), 1..30)
    ) {
        let quotes: Vec<OptionQuote> = rows.iter().map(|&(p, k, t)| OptionQuote::new(p, k, t)).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.csv");
        write_quotes(&path, &quotes).unwrap();
        let back = read_quotes(&path, 1e9, OptionKind::Call).unwrap();
        prop_assert_eq!(back.quotes, quotes);
    }
}

#[test]
fn rejection_lines_point_at_the_offending_row() {
    let text = "# volcal-format v1\nprice,strike,maturity\n10,900,0.5\n-1,900,0.5\n5,x,0.5\n";
    let file = parse(text.as_bytes()).unwrap();
    assert_eq!(file.quotes.len(), 1);
    let lines: Vec<usize> = file.rejections.iter().map(|r| r.line).collect();
    assert_eq!(lines, vec![4, 5]);
}

#[test]
fn generated_dataset_has_one_row_per_node() {
    let dir = tempfile::tempdir().unwrap();
    for (m, k, rows) in [(10, 20, 200), (3, 6, 18)] {
        let mut cfg = ExperimentConfig::default();
        cfg.grid.maturities = m;
        cfg.grid.strikes = k;
        cfg.sim = SimConfig {
            n_paths: 2_000,
            seed: 4,
            ..Default::default()
        };
        let (data, frame) = generate(&cfg).unwrap();
        let path = dir.path().join(format!("quotes-{m}x{k}.csv"));
        write_dataset(&path, &data, &frame).unwrap();
        let back = read_quotes(&path, 1000.0, OptionKind::Call).unwrap();
        assert_eq!(back.quotes.len(), rows);
        assert_eq!(back.quotes, data.quotes);
        let meta = read_key_values(&sidecar_path(&path)).unwrap();
        assert_eq!(meta["seed"], "4");
        assert_eq!(meta["quotes"], rows.to_string());
    }
}

#[test]
fn generated_calls_decrease_in_strike() {
    let mut cfg = ExperimentConfig::default();
    cfg.sim = SimConfig {
        n_paths: 20_000,
        seed: 6,
        ..Default::default()
    };
    let (data, _) = generate(&cfg).unwrap();
    let strikes = cfg.grid.strikes;
    for row in 0..cfg.grid.maturities {
        for j in 1..strikes {
            let (a, b) = (row * strikes + j - 1, row * strikes + j);
            let tol = 3.0 * (data.std_errors[a].powi(2) + data.std_errors[b].powi(2)).sqrt();
            assert!(data.quotes[b].price <= data.quotes[a].price + tol, "row {row} col {j}");
        }
    }
}

#[test]
fn surface_exports_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let frame = common::standard_frame(OptionKind::Call);
    let model = PriceSurfaceModel::new(init_params(&NetConfig::new(2, 8).unwrap(), 3).unwrap(), frame);
    let grid = ExportGrid {
        rows: 7,
        cols: 9,
        maturity_range: None,
        strike_range: None,
    };
    for coords in [Coordinates::Original, Coordinates::Scaled] {
        let path = dir.path().join(format!("price-{coords}.csv"));
        let written = volcal::io::export_surface(&SurfaceSource::Price(&model), &grid, coords, &path).unwrap();
        assert_eq!(read_surface(&path).unwrap(), written);
        if coords == Coordinates::Scaled {
            for r in 0..grid.rows {
                assert!(written.at(r, grid.cols - 1).abs() < 1e-12);
            }
        }
    }
    let exact = ExactField::new(frame);
    let path = dir.path().join("exact.csv");
    let written = volcal::io::export_surface(&SurfaceSource::ExactVol(&exact), &grid, Coordinates::Original, &path).unwrap();
    assert_eq!(written.metadata["surface"], "vol");
    assert_eq!(written.at(3, 4), exact.at_strike(written.col_axis[4], written.row_axis[3]));
}

#[test]
fn config_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    let mut cfg = ExperimentConfig::default();
    cfg.train.lambda_dup = 0.25;
    cfg.train.max_iters = 123;
    cfg.sim.n_paths = 777;
    save_config(&path, &cfg).unwrap();
    assert_eq!(load_config(&path).unwrap(), cfg);
    std::fs::write(&path, "[train]\nlambda_dup = -1\n").unwrap();
    assert!(load_config(&path).is_err());
}
