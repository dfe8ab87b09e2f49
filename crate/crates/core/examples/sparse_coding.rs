// Orthogonal matching pursuit and vector quantization against a small dictionary.
//
// ```text
// cargo run --example sparse_coding
// ```

use hmpir::sparse_coding::omp_encode_traced;
use hmpir::{vq_encode, Dictionary, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Codes a signal built from atoms 3 and 11 and returns the OMP support.
pub fn run_example() -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (dim, size) = (16, 24);
    let raw: Vec<f64> = (0..dim * size).map(|_| rng.sample(StandardNormal)).collect();
    let dict = Dictionary::from_columns(dim, size, raw)?;

    let y: Vec<f64> = dict
        .atom(3)
        .iter()
        .zip(dict.atom(11))
        .map(|(a, b)| 1.5 * a - 0.8 * b)
        .collect();

    let trace = omp_encode_traced(&dict, &y, 4)?;
    println!("selected atoms: {:?}", trace.selected);
    println!("residual norms: {:?}", trace.residual_norms);
    for &(j, x) in trace.code.entries() {
        println!("  x[{j:2}] = {x:+.6}");
    }

    let vq = vq_encode(&dict, &y)?;
    println!("nearest atom (vq): {}", vq.entries()[0].0);

    let mut support: Vec<usize> = trace.code.entries().iter().map(|e| e.0).collect();
    support.sort_unstable();
    Ok(support)
}

fn main() -> Result<()> {
    run_example()?;
    Ok(())
}
