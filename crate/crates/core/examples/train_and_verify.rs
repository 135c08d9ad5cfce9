//! Trains a model on synthetic subjects, saves and reloads it, and runs the
//! cross-session verification protocol.
//!
//! ```text
//! cargo run --release --example train_and_verify -- [variant] [epochs]
//! ```
//! `variant` is one of siamese-cnn, transformer, lstm-transformer,
//! attlstm-transformer, emmixformer.

use emmixformer::data::{spread_profiles, synthesize, Dataset, Split, DEFAULT_DIFFICULTY};
use emmixformer::eval::{roc_export, score_verification, Report};
use emmixformer::model::{evaluate_accuracy, load_checkpoint, save_checkpoint, train_with, ModelConfig, TrainConfig, Variant};
use emmixformer::nn::Module;
use emmixformer::preprocess::PreprocessConfig;

fn main() -> emmixformer::Result<()> {
    let mut args = std::env::args().skip(1);
    let variant: Variant = args.next().map_or(Ok(Variant::EmMixformer), |a| a.parse())?;
    let epochs: usize = args.next().map_or(30, |a| a.parse().expect("epoch count"));

    let profiles = spread_profiles(6, DEFAULT_DIFFICULTY, 0)?;
    let recs = synthesize(&profiles, 2, 40.0, 50.0, 0)?;
    let ds = Dataset::from_recordings(
        &recs,
        &PreprocessConfig {
            window_length: 256,
            window_stride: 128,
            ..Default::default()
        },
    )?;
    println!(
        "{} windows ({} train / {} test) from {} subjects",
        ds.len(),
        ds.indices(Split::Train).len(),
        ds.indices(Split::Test).len(),
        ds.subjects.len()
    );

    let mc = ModelConfig::variant(variant, ds.subjects.len());
    let cfg = TrainConfig {
        epochs,
        ..Default::default()
    };
    let tm = train_with(&ds, &mc, &cfg, |e| {
        if e.epoch % 5 == 0 || e.epoch == 1 {
            println!("epoch {:>3}  loss {:.4}  acc {:.3}", e.epoch, e.loss, e.accuracy);
        }
    })?;
    println!("{variant}: {} parameters", tm.model.parameter_count());

    let dir = tempfile_dir();
    let path = dir.join("model.ckpt");
    save_checkpoint(&tm, &path)?;
    let tm = load_checkpoint(&path)?;

    println!("train accuracy {:.3}", evaluate_accuracy(&tm, &ds, Split::Train)?);
    println!("test accuracy  {:.3}", evaluate_accuracy(&tm, &ds, Split::Test)?);
    let scores = score_verification(&tm, &ds)?;
    print!("{}", Report::from_scores(&scores)?.to_text());
    roc_export(&scores, dir.join("roc.csv"))?;
    println!("checkpoint and ROC curve in {}", dir.display());
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join("emmix-example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    dir
}
