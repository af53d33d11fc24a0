//! Temporary calibration bench for the end-to-end criterion (deleted once
//! tuned).

use scalocast_core::forecast::{self, ExperimentConfig};
use scalocast_core::synth::{self, SynthSpec};

#[test]
#[ignore]
fn calibrate_end_to_end() {
    let t0 = std::time::Instant::now();
    let spec = SynthSpec {
        years: 3,
        ..SynthSpec::default()
    };
    let data = synth::synth_generate(42, &spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = synth::write_dataset(dir.path(), &data).unwrap();
    println!("synth+write: {:.1}s", t0.elapsed().as_secs_f64());

    let mut cfg = ExperimentConfig::from_json("{}").unwrap();
    cfg.dataset.demand_csv = paths.demand_csv.clone();
    cfg.dataset.weather_csvs = vec![dir.path().join("weather_t_amb.csv")];
    cfg.dataset.holiday_file = Some(paths.holiday_file.clone());
    cfg.features = ["c24.d", "c168.d", "t_amb.d"]
        .iter()
        .map(|n| scalocast_core::features::FeatureSpec::parse(n).unwrap())
        .collect();
    cfg.architecture.conv_filters = vec![16, 32, 64];
    cfg.architecture.dense = vec![128, 128];
    cfg.training.lr = 3e-4;
    cfg.training.batch_size = std::env::var("BATCH").ok().and_then(|v| v.parse().ok()).unwrap_or(8);
    cfg.training.max_epochs = std::env::var("EPOCHS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(40);
    cfg.training.patience = 15;
    cfg.training.scheduler_patience = 3;
    cfg.training.shuffle = true;
    cfg.seed = 42;

    let out = forecast::run_experiment(&cfg).unwrap();
    println!(
        "split train/val/test = {}/{}/{}",
        out.split.train, out.split.val, out.split.test
    );
    println!(
        "timing: load {:.1}s feat {:.1}s cwt {:.1}s train {:.1}s eval {:.1}s total {:.1}s",
        out.timing.load_s,
        out.timing.features_s,
        out.timing.cwt_s,
        out.timing.train_s,
        out.timing.eval_s,
        out.timing.total_s
    );
    println!(
        "epochs run {} best {} ({:.2}s/epoch)",
        out.history.epochs.len(),
        out.history.best_epoch,
        out.timing.train_s / out.history.epochs.len() as f64
    );
    for (i, e) in out.history.epochs.iter().enumerate() {
        if i % 5 == 0 || i + 1 == out.history.epochs.len() {
            println!(
                "  epoch {:3} train {:.5} val {:.5} lr {:.2e}",
                i + 1,
                e.train_loss,
                e.val_loss,
                e.lr
            );
        }
    }
    let naive = out.naive24.as_ref().unwrap().aggregate.mape_mean;
    println!(
        "MAPE: cnn {:.2}%  naive24 {:.2}% (0.8x = {:.2}%)  linear {:.2}%",
        out.cnn.aggregate.mape_mean,
        naive,
        0.8 * naive,
        out.linear.aggregate.mape_mean
    );
    println!("total bench: {:.1}s", t0.elapsed().as_secs_f64());
}
