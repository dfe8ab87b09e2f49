// KSVD on mean-subtracted 5x5 patches of a synthetic texture, with and without
// the incoherence penalty.
//
// ```text
// cargo run --release --example train_dictionary
// ```

use hmpir::dictionary::coherence;
use hmpir::patches::extract_patches;
use hmpir::synth::{texture_corpus, CorpusSpec};
use hmpir::{train, Result, TrainConfig, TrainingSet};

/// Returns the final objective for `λ = 0` and `λ = 0.1`.
pub fn run_example() -> Result<[f64; 2]> {
    let corpus = texture_corpus(&CorpusSpec {
        groups: 2,
        ..CorpusSpec::default()
    });
    let mut signals = Vec::new();
    for (_, img) in &corpus.images {
        let grid = extract_patches(img, 5, 2)?;
        signals.extend(grid.patches.into_iter().filter(|p| p.iter().any(|v| *v != 0.0)));
    }
    let set = TrainingSet::from_signals(&signals)?;
    println!("{} training patches of dimension {}", set.len(), set.dim());

    let mut out = [0.0; 2];
    for (slot, lambda) in [0.0, 0.1].into_iter().enumerate() {
        let mut cfg = TrainConfig::new(32, 3);
        cfg.iterations = 8;
        cfg.incoherence_weight = lambda;
        cfg.seed = 1;
        let (dict, trace) = train(&set, &cfg)?;
        let c = coherence(&dict);
        println!("λ = {lambda}:");
        println!("  objective {:?}", trace.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
        println!("  coherence sum {:.3}, max {:.3}", c.sum, c.max);
        out[slot] = *trace.last().expect("at least one iteration");
    }
    Ok(out)
}

fn main() -> Result<()> {
    run_example()?;
    Ok(())
}
