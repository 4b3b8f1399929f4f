//! Trains a small model on an in-memory sprite dataset, writes the run
//! directory (config, loss log, sample grids, checkpoints), then scores the
//! model and the echo baseline on the held-out identities.
//!
//!     cargo run --example train_and_evaluate -- runs/demo 150

use adar::batch::PairSet;
use adar::config::RunConfig;
use adar::detector::SpriteDetector;
use adar::metrics::{evaluate_dataset, EchoReference};
use adar::sprites::{DatasetConfig, Split, SpriteDataset};
use adar::trainer::Trainer;
use adar::workflow::{preview_batch, run_training, RunDir};

fn main() -> adar::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "runs/demo".into());
    let cycles = args.next().map(|c| c.parse().expect("cycle count")).unwrap_or(150);

    let data = SpriteDataset::generate(
        &DatasetConfig {
            identities: 24,
            poses_per_identity: 4,
            resolution: 32,
            train_fraction: 0.75,
        },
        0,
    )?;
    let train = PairSet::new(&data, Split::Train)?;

    let set = |k: &str, v: &str| (k.to_string(), v.to_string());
    let run = RunConfig::resolve(&[
        set("resolution", "32"),
        set("encoder_channels", "16,32,32"),
        set("fcn_channels", "8,16,16"),
        set("disc_channels", "8,16"),
        set("feature_channels", "8,16,16"),
        set("batch_size", "8"),
        set("cycles", &cycles.to_string()),
        set("sample_every", "50"),
        set("checkpoint_every", "50"),
    ])?;
    let mut trainer = Trainer::new(run.train.clone())?;
    let dir = RunDir::new(&out);
    run_training(&mut trainer, &run, &train, &preview_batch(&train)?, &dir, |m| {
        if m.cycle % 25 == 0 {
            println!("cycle {:4}  G {:.4}  D {:.4}  L1 {:.4}", m.cycle, m.loss_g, m.loss_d, m.l1);
        }
    })?;
    println!("checkpoint: {}", dir.latest_checkpoint().display());

    let model = evaluate_dataset(&mut trainer.renderer, &data, Split::Test, &SpriteDetector, 16, serde_json::Value::Null)?;
    let echo = evaluate_dataset(&mut EchoReference, &data, Split::Test, &SpriteDetector, 16, serde_json::Value::Null)?;
    for (name, r) in [("model", &model.summary), ("echo", &echo.summary)] {
        println!("{name:6} ssim {:.4}  psnr {:.2}  pose {:.4}", r.ssim, r.psnr, r.pose_score);
    }
    Ok(())
}
