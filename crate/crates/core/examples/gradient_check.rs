//! Finite-difference check of every differentiable module, plus the
//! detector's own sanity check with a deliberately scaled gradient.

use emmixformer::gradcheck::{check, check_distorted, Target, TOLERANCE};

fn main() -> emmixformer::Result<()> {
    for t in Target::ALL {
        let r = check(t, 0)?;
        let worst = r
            .groups
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
            .expect("at least one group");
        println!(
            "{:<15} {:>3} groups  max rel error {:.2e}  (worst: {})  {}",
            t.name(),
            r.groups.len(),
            r.max_rel_error(),
            worst.name,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }

    let broken = check_distorted(Target::Attlstm, 0, 1.001)?;
    println!(
        "\ngradient scaled by 1.001: max rel error {:.2e}, {} (tolerance {TOLERANCE:e})",
        broken.max_rel_error(),
        if broken.passed() { "not detected" } else { "detected" }
    );
    Ok(())
}
