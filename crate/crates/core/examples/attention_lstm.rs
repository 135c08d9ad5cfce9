//! Runs the attention LSTM and the peephole baseline over the same sequence
//! and prints the gate attentions of the first step.

use emmixformer::attlstm::{AttLstm, LstmState, PeepholeLstm};
use emmixformer::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn norm(t: &Tensor) -> f64 {
    t.to_vec().iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn main() -> emmixformer::Result<()> {
    let (d, tokens, steps) = (64, 8, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let att = AttLstm::new(&mut rng, d, tokens)?;
    let peep = PeepholeLstm::new(&mut rng, d);

    let xs = Tensor::from_vec(
        &[1, steps, d],
        (0..steps * d).map(|i| ((i * 31 % 17) as f64 - 8.0) / 8.0).collect(),
    )?;

    let first = xs.select(1, 0)?;
    let g = att.attention_gates(&first, &LstmState::zeros(1, d))?;
    println!("step 1 attention outputs (L2 norm):");
    for (name, t) in [("SA_x", &g.sa_x), ("SA_h", &g.sa_h), ("CA_x", &g.ca_x), ("CA_h", &g.ca_h), ("CA_c", &g.ca_c)] {
        println!("  {name}  {:.4}", norm(t));
    }

    let ha = att.sequence(&xs)?;
    let hp = peep.sequence(&xs)?;
    println!("\n step   |h| attention   |h| peephole");
    for s in 0..steps {
        println!("{:>5}   {:>13.4}   {:>12.4}", s + 1, norm(&ha.select(1, s)?), norm(&hp.select(1, s)?));
    }
    Ok(())
}
