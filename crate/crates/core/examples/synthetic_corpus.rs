//! Generates a small synthetic gaze corpus and prints what each subject
//! looks like.
//!
//! ```text
//! cargo run --release --example synthetic_corpus -- [subjects] [difficulty] [out.csv]
//! ```

use emmixformer::data::{save_csv, spread_profiles, synthesize, DEFAULT_DIFFICULTY};
use emmixformer::preprocess::velocities;

fn main() -> emmixformer::Result<()> {
    let mut args = std::env::args().skip(1);
    let subjects: usize = args.next().map_or(6, |a| a.parse().expect("subject count"));
    let difficulty: f64 = args.next().map_or(DEFAULT_DIFFICULTY, |a| a.parse().expect("difficulty"));
    let out = args.next();

    let profiles = spread_profiles(subjects, difficulty, 7)?;
    let recs = synthesize(&profiles, 2, 30.0, 50.0, 7)?;

    println!("{:<6} {:>9} {:>9} {:>9} {:>9} {:>9}", "id", "peak°/s", "sacc ms", "fix ms", "tremor°", "tremorHz");
    for p in &profiles {
        println!(
            "{:<6} {:>9.1} {:>9.1} {:>9.1} {:>9.3} {:>9.2}",
            p.subject_id, p.peak_velocity, p.saccade_duration_ms, p.fixation_mean_ms, p.tremor_amplitude, p.tremor_frequency_hz
        );
    }

    println!();
    for r in &recs {
        let (dx, dy) = velocities(r)?;
        let speed: Vec<f64> = dx.iter().zip(&dy).map(|(a, b)| a.hypot(*b)).collect();
        let fast = speed.iter().filter(|&&s| s >= 40.0).count();
        let max = speed.iter().cloned().fold(0.0, f64::max);
        println!(
            "{} session {}: {} samples, {:.1}% above 40°/s, max speed {:.0}°/s",
            r.subject_id,
            r.session_id,
            r.len(),
            100.0 * fast as f64 / r.len() as f64,
            max
        );
    }

    if let Some(path) = out {
        save_csv(&path, &recs)?;
        println!("\nwrote {path}");
    }
    Ok(())
}
