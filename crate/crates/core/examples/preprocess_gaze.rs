//! Velocity transform, fast/slow split and windowing on one recording.
//!
//! Reads the first recording of a gaze CSV (`t,x,y,subject,session`) if a
//! path is given, otherwise synthesizes one.

use emmixformer::data::{load_csv, spread_profiles, synthesize, ColumnMap};
use emmixformer::preprocess::{split_fast_slow, truncated_positions, velocities, window, PreprocessConfig};

fn main() -> emmixformer::Result<()> {
    let rec = match std::env::args().nth(1) {
        Some(path) => load_csv(path, &ColumnMap::default())?.swap_remove(0),
        None => synthesize(&spread_profiles(1, 0.0, 3)?, 1, 20.0, 50.0, 3)?.swap_remove(0),
    };
    let cfg = PreprocessConfig {
        window_length: 256,
        window_stride: 128,
        ..Default::default()
    };

    let (dx, dy) = velocities(&rec)?;
    let cut = truncated_positions(&dx, &dy, cfg.v_min);
    let ch = split_fast_slow(&dx, &dy, cfg.v_min, cfg.c)?;
    println!(
        "{} / {}: {} samples at {:.0} Hz, {} below v_min = {} ({:.1}%)",
        rec.subject_id,
        rec.session_id,
        rec.len(),
        rec.sample_rate_hz,
        cut.len(),
        cfg.v_min,
        100.0 * cut.len() as f64 / rec.len() as f64
    );

    for (axis, name) in ["x", "y"].iter().enumerate() {
        let fast = &ch.fast[axis];
        let slow = &ch.slow[axis];
        let lo = slow.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = slow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = fast.iter().sum::<f64>() / fast.len() as f64;
        println!("  δ{name}: fast mean {mean:+.3}, slow range [{lo:+.6}, {hi:+.6}]");
    }

    let windows = window(&ch, cfg.window_length, cfg.window_stride, &rec.subject_id, &rec.session_id)?;
    println!("  {} windows of {} samples, stride {}", windows.len(), cfg.window_length, cfg.window_stride);
    if let Some(w) = windows.first() {
        let preview: Vec<String> = w.slow[..8].iter().map(|v| format!("{v:+.3}")).collect();
        println!("  first window, slow δx: {} ...", preview.join(" "));
    }
    Ok(())
}
