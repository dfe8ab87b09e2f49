// Two-layer HMP vs one-layer HMP vs bag-of-features on a synthetic texture corpus,
// run through the same file-based stages the `hmpir` binary uses.
//
// ```text
// cargo run --release --example retrieval_comparison -- [seed ...]
// ```

use std::path::Path;

use hmpir::cli;
use hmpir::config::{architecture_to_toml, RunConfig, TrainingSection};
use hmpir::synth::{texture_corpus, CorpusSpec};
use hmpir::{ArchitectureConfig, Result};

/// Desk-scale geometry: 64 final atoms, 2 nonzeros per final code, and layer-1
/// units sampled at every pixel so pooled features tolerate small shifts.
pub fn architecture(depth: usize) -> Result<ArchitectureConfig> {
    let mut arch = ArchitectureConfig::hmp_ir(depth, 64)?;
    arch.layers.last_mut().expect("at least one layer").sparsity = 2;
    if depth > 1 {
        arch.layers[0].codebook_size = 48;
        if let Some(p) = arch.layers[0].pooling.as_mut() {
            p.unit_stride = Some(1);
        }
    }
    Ok(arch)
}

fn mean_ap(dir: &Path, name: &str, arch: &ArchitectureConfig, baseline: bool, seed: u64) -> Result<f64> {
    let arch_path = dir.join(format!("{name}.toml"));
    std::fs::write(&arch_path, architecture_to_toml(arch))?;
    let cfg = RunConfig {
        manifest: dir.join("manifest.tsv"),
        architecture: arch_path,
        dictionary_dir: dir.join(name).join("dicts"),
        descriptor_dir: dir.join(name).join("descriptors"),
        index: dir.join(name).join("index.hmpi"),
        ground_truth: Some(dir.join("truth.txt")),
        report: None,
        seed,
        threads: 0,
        max_side: None,
        baseline,
        idf: false,
        training: TrainingSection {
            samples: 4000,
            iterations: 5,
            incoherence_weight: 0.1,
            stall_swaps: 0,
        },
    };
    cli::train_dictionaries(&cfg)?;
    cli::encode_all(&cfg)?;
    cli::build_index(&cfg)?;
    let (_, report) = cli::evaluate_run(&cfg, true)?;
    Ok(report.mean_average_precision)
}

/// `(hmp2, hmp1, bof)` mAP on the 30-image corpus generated from `seed`.
pub fn compare(seed: u64) -> Result<[f64; 3]> {
    let tmp = tempfile::tempdir()?;
    let dir = tmp.path();
    texture_corpus(&CorpusSpec {
        seed,
        ..CorpusSpec::default()
    })
    .write_to_dir(dir)?;
    Ok([
        mean_ap(dir, "hmp2", &architecture(2)?, false, seed)?,
        mean_ap(dir, "hmp1", &architecture(1)?, false, seed)?,
        mean_ap(dir, "bof", &architecture(1)?, true, seed)?,
    ])
}

pub fn run_example_with(seeds: &[u64]) -> Result<[f64; 3]> {
    let mut mean = [0.0; 3];
    for &seed in seeds {
        let m = compare(seed)?;
        println!("seed {seed}: hmp2 {:.4}  hmp1 {:.4}  bof {:.4}", m[0], m[1], m[2]);
        for (acc, v) in mean.iter_mut().zip(m) {
            *acc += v / seeds.len() as f64;
        }
    }
    println!("mean:   hmp2 {:.4}  hmp1 {:.4}  bof {:.4}", mean[0], mean[1], mean[2]);
    Ok(mean)
}

pub fn run_example() -> Result<[f64; 3]> {
    run_example_with(&[1])
}

fn main() -> Result<()> {
    let seeds: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if seeds.is_empty() {
        run_example_with(&[1, 2, 3])?;
    } else {
        run_example_with(&seeds)?;
    }
    Ok(())
}
