//! EER, FRR at fixed FAR and the ROC sweep on a hand-made score set.

use emmixformer::eval::{eer, frr_at_far, sweep, ScoreSet, FAR_TARGETS};

fn main() -> emmixformer::Result<()> {
    let genuine = vec![0.91, 0.88, 0.85, 0.80, 0.78, 0.74, 0.66, 0.52];
    let impostor = vec![0.70, 0.61, 0.55, 0.49, 0.45, 0.40, 0.33, 0.31, 0.22, 0.15, 0.12, 0.05];
    let s = ScoreSet::new(genuine, impostor);

    println!("threshold    FAR     FRR");
    for p in sweep(&s)? {
        println!("{:>9.2}  {:.3}  {:.3}", p.threshold, p.far, p.frr);
    }

    let (rate, threshold) = eer(&s)?;
    println!("\nEER {rate:.4} at threshold {threshold:.4}");
    for f in frr_at_far(&s, &FAR_TARGETS)? {
        let note = if f.insufficient { " (too few impostor scores)" } else { "" };
        println!("FRR at FAR {:e}: {:.3}{note}", f.target, f.frr);
    }
    Ok(())
}
