mod common;

use common::standard_frame;
use volcal::dupire::{scale_quotes, MarketFrame, OptionKind, OptionQuote, ScaledQuote};
use volcal::mc::{bs_closed_form, linspace};
use volcal::net::NetConfig;
use volcal::trainer::{checkpoint_load, StopReason, TrainConfig, TrainTrace, Trainer};
use volcal::Error;

fn bs_quotes(n_mat: usize, n_strk: usize) -> (Vec<ScaledQuote>, MarketFrame) {
    let frame = standard_frame(OptionKind::Call);
    let mut quotes = Vec::new();
    for t in linspace(0.3, 1.5, n_mat) {
        for k in linspace(500.0, 3000.0, n_strk) {
            let p = bs_closed_form(1000.0, k, t, 0.04, 0.3, OptionKind::Call).unwrap().price;
            quotes.push(OptionQuote::new(p, k, t));
        }
    }
    (scale_quotes(&quotes, &frame).unwrap(), frame)
}

fn small_config(max_iters: usize) -> TrainConfig {
    TrainConfig {
        m1: 16,
        m2: 64,
        max_iters,
        seed: 9,
        net: NetConfig::new(2, 12).unwrap(),
        early_stop: false,
        ..Default::default()
    }
}

fn trajectory(trace: &TrainTrace) -> Vec<(usize, f64, [f64; 5])> {
    trace
        .records
        .iter()
        .map(|r| (r.iter, r.lr, [r.loss.fit, r.loss.ini, r.loss.arb, r.loss.dup, r.loss.total]))
        .collect()
}

#[test]
fn identical_runs_are_bitwise_identical() {
    let (quotes, frame) = bs_quotes(4, 5);
    let run = || {
        let mut t = Trainer::new(&quotes, frame, small_config(40)).unwrap();
        t.run(None).unwrap();
        (serde_json::to_string(&t.checkpoint()).unwrap(), trajectory(t.trace()))
    };
    assert_eq!(run(), run());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let (quotes, frame) = bs_quotes(4, 5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");

    let mut straight = Trainer::new(&quotes, frame, small_config(100)).unwrap();
    straight.run(None).unwrap();

    let mut first = Trainer::new(&quotes, frame, small_config(50)).unwrap();
    first.run(Some(&path)).unwrap();
    let head = trajectory(first.trace());
    let loaded = checkpoint_load(&path).unwrap();
    let mut second = Trainer::resume(&quotes, loaded, small_config(100)).unwrap();
    second.run(None).unwrap();

    let mut joined = head;
    joined.extend(trajectory(second.trace()));
    assert_eq!(joined, trajectory(straight.trace()));
    assert_eq!(second.checkpoint(), straight.checkpoint());
}

#[test]
fn resume_rejects_incompatible_checkpoints() {
    let (quotes, frame) = bs_quotes(3, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    let mut t = Trainer::new(&quotes, frame, small_config(3)).unwrap();
    t.run(Some(&path)).unwrap();

    let other_net = TrainConfig {
        net: NetConfig::new(3, 12).unwrap(),
        ..small_config(10)
    };
    let err = Trainer::resume(&quotes, checkpoint_load(&path).unwrap(), other_net).err().unwrap();
    assert!(matches!(err, Error::VersionMismatch(_)), "{err:?}");

    let other_lambda = TrainConfig {
        lambda_dup: 0.5,
        ..small_config(10)
    };
    let err = Trainer::resume(&quotes, checkpoint_load(&path).unwrap(), other_lambda).err().unwrap();
    assert!(matches!(err, Error::ConfigMismatch(_)), "{err:?}");

    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("v1", "v7", 1)).unwrap();
    let err = checkpoint_load(&path).unwrap_err();
    assert!(matches!(err, Error::VersionMismatch(_)), "{err:?}");

    std::fs::write(&path, "not a checkpoint").unwrap();
    assert!(matches!(checkpoint_load(&path), Err(Error::VersionMismatch(_))));
}

#[test]
fn frozen_vol_is_untouched_without_dupire_weight() {
    let (quotes, frame) = bs_quotes(3, 4);
    let cfg = TrainConfig {
        lambda_dup: 0.0,
        freeze_vol_when_unregularized: true,
        ..small_config(30)
    };
    let mut t = Trainer::new(&quotes, frame, cfg).unwrap();
    let before = t.state().vol.clone();
    let price_before = t.state().price.clone();
    t.run(None).unwrap();
    assert_eq!(t.state().vol, before);
    assert_ne!(t.state().price, price_before);
}

#[test]
fn trace_totals_are_weighted_sums() {
    let (quotes, frame) = bs_quotes(3, 4);
    let cfg = TrainConfig {
        lambda_ini: 0.7,
        lambda_arb: 2.0,
        lambda_dup: 0.3,
        ..small_config(25)
    };
    let mut t = Trainer::new(&quotes, frame, cfg).unwrap();
    t.run(None).unwrap();
    assert_eq!(t.trace().len(), 25);
    for r in &t.trace().records {
        let l = r.loss;
        let expect = l.fit + 0.7 * l.ini + 2.0 * l.arb + 0.3 * l.dup;
        assert!((l.total - expect).abs() <= 1e-12 * expect.abs().max(1.0), "{l:?}");
    }
}

#[test]
fn divergence_rolls_back_once_then_aborts() {
    let (quotes, frame) = bs_quotes(3, 4);
    let cfg = TrainConfig {
        lr0: 1e306,
        ..small_config(20)
    };
    let mut t = Trainer::new(&quotes, frame, cfg).unwrap();
    let err = t.run(None).unwrap_err();
    assert!(matches!(err, Error::DivergedTraining { .. }), "{err:?}");
    assert_eq!(t.trace().rollbacks, 1);
    assert!(t.state().price.is_finite() && t.state().vol.is_finite());
}

#[test]
fn early_stop_fires_on_a_flat_loss() {
    let (quotes, frame) = bs_quotes(3, 4);
    let cfg = TrainConfig {
        lr0: 1e-300,
        early_stop: true,
        early_stop_window: 5,
        early_stop_tol: 1e-3,
        ..small_config(100)
    };
    let mut t = Trainer::new(&quotes, frame, cfg).unwrap();
    assert_eq!(t.run(None).unwrap(), StopReason::EarlyStop);
    assert!(t.iteration() < 100);
    assert!(t.trace().stopped_early);
}

#[test]
fn fit_loss_drops_a_hundredfold_without_dupire_weight() {
    let (quotes, frame) = bs_quotes(10, 20);
    let cfg = TrainConfig {
        m2: 256,
        lambda_dup: 0.0,
        max_iters: 5000,
        seed: 0,
        early_stop: false,
        ..Default::default()
    };
    let mut t = Trainer::new(&quotes, frame, cfg).unwrap();
    t.run(None).unwrap();
    let at10 = t.trace().records[10].loss.fit;
    let last = t.trace().last().unwrap().loss.fit;
    assert!(last * 100.0 <= at10, "iteration 10: {at10:e}, final: {last:e}");
}
