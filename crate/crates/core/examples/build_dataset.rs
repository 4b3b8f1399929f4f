//! Writes a sprite dataset to disk, reloads it, and prints its split
//! summary and one training pair.
//!
//!     cargo run --example build_dataset -- data/sprites

use adar::sprites::{build_dataset, DatasetConfig, Split, SpriteDataset};

fn main() -> adar::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "data/sprites".into());
    let cfg = DatasetConfig {
        identities: 20,
        ..DatasetConfig::default()
    };
    build_dataset(&cfg, 7, &out)?;
    let data = SpriteDataset::load(&out)?;
    let m = data.manifest();
    println!(
        "{}: {} images, {} ordered pairs ({} train, {} test)",
        out, m.sample_count, m.pair_count, m.train_pairs, m.test_pairs
    );
    let pair = data.pairs(Split::Train)[0];
    let s = data.sample(pair)?;
    let white = s.posemap.data().iter().filter(|&&v| v == 1.0).count();
    println!(
        "first train pair: identity {}, pose {} -> pose {}, posemap has {white} white pixels",
        pair.identity, pair.reference, pair.target
    );
    Ok(())
}
