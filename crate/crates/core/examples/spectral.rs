//! Amplitude and phase of a short signal, the inverse transform, and the
//! FourierFormer with and without its transformers.

use emmixformer::attention::TransformerConfig;
use emmixformer::fourier::{from_spectrum, to_spectrum, FourierFormer};
use emmixformer::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> emmixformer::Result<()> {
    let t = 8;
    let signal: Vec<f64> = (0..t)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / t as f64;
            1.0 + a.cos() + 0.5 * (3.0 * a).sin()
        })
        .collect();
    let x = Tensor::from_vec(&[t, 1], signal.clone())?;

    let sp = to_spectrum(&x)?;
    println!(" k   amplitude      phase");
    for (k, (a, p)) in sp.amplitude.to_vec().iter().zip(sp.phase.to_vec()).enumerate() {
        println!("{k:>2}  {a:>10.6}  {p:>+10.6}");
    }
    let back = from_spectrum(&sp)?.to_vec();
    let err = back.iter().zip(&signal).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("inverse transform max error {err:.1e}");

    let tokens = Tensor::from_vec(&[1, t, 16], (0..t * 16).map(|i| (i as f64 * 0.37).sin()).collect())?;
    let bypass = FourierFormer::bypass().forward(&tokens)?;
    let err = bypass
        .to_vec()
        .iter()
        .zip(tokens.to_vec())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("identity bypass max error {err:.1e}");

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let ff = FourierFormer::new(&mut rng, &TransformerConfig::new(16))?;
    let y = ff.forward(&tokens)?;
    println!("with spectral attention: output {:?}, first row {:.3?}", y.shape(), &y.to_vec()[..4]);
    Ok(())
}
