//! Trains the five network configurations on the same data and seed and
//! compares their verification error.
//!
//! ```text
//! cargo run --release --example ablation -- [epochs]
//! ```

use emmixformer::cli::{ablation_table, AblationRow};
use emmixformer::data::{spread_profiles, synthesize, Dataset, Split, DEFAULT_DIFFICULTY};
use emmixformer::eval::{score_verification, Report};
use emmixformer::model::{evaluate_accuracy, train, ModelConfig, TrainConfig, Variant};
use emmixformer::nn::Module;
use emmixformer::preprocess::PreprocessConfig;

fn main() -> emmixformer::Result<()> {
    let epochs: usize = std::env::args().nth(1).map_or(20, |a| a.parse().expect("epoch count"));
    let recs = synthesize(&spread_profiles(6, DEFAULT_DIFFICULTY, 1)?, 2, 30.0, 50.0, 1)?;
    let pc = PreprocessConfig {
        window_length: 256,
        window_stride: 128,
        ..Default::default()
    };
    let ds = Dataset::from_recordings(&recs, &pc)?;
    let cfg = TrainConfig {
        epochs,
        seed: 1,
        ..Default::default()
    };

    let mut rows = Vec::new();
    for v in Variant::ALL {
        let tm = train(&ds, &ModelConfig::variant(v, ds.subjects.len()), &cfg)?;
        let report = Report::from_scores(&score_verification(&tm, &ds)?)?;
        eprintln!("{v} done");
        rows.push(AblationRow {
            variant: v,
            eer: report.eer,
            frr_at_far: report.frr_at_far.iter().map(|f| f.frr).collect(),
            train_accuracy: evaluate_accuracy(&tm, &ds, Split::Train)?,
            final_loss: tm.final_loss().unwrap_or(f64::NAN),
            parameters: tm.model.parameter_count(),
        });
    }
    print!("{}", ablation_table(&rows));
    Ok(())
}
