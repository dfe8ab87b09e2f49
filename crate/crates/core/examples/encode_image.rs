// Two-layer HMP descriptor of one image, with a 1+2+3 spatial pyramid.
//
// ```text
// cargo run --release --example encode_image [image]
// ```

use hmpir::encoder::layer_input;
use hmpir::image::load_image;
use hmpir::patches::extract_patches;
use hmpir::synth::{texture_corpus, CorpusSpec};
use hmpir::{train, ArchitectureConfig, HmpEncoder, IntensityImage, Result, SparseVector, TrainConfig, TrainingSet};

fn layer_dictionaries(img: &IntensityImage, arch: &ArchitectureConfig) -> Result<Vec<hmpir::Dictionary>> {
    let mut dicts = Vec::new();
    for l in 0..arch.depth() {
        let signals: Vec<Vec<f64>> = if l == 0 {
            extract_patches(img, arch.patch_size, 2)?.patches
        } else {
            let map = layer_input(img, arch, &dicts, l)?;
            map.elements().map(<[f64]>::to_vec).collect()
        };
        let layer = &arch.layers[l];
        let mut cfg = TrainConfig::new(layer.codebook_size, layer.sparsity);
        cfg.iterations = 3;
        let (dict, _) = train(&TrainingSet::from_signals(&signals)?, &cfg)?;
        println!("layer {}: {} atoms of dimension {}", l + 1, dict.size(), dict.dim());
        dicts.push(dict);
    }
    Ok(dicts)
}

pub fn encode(img: &IntensityImage) -> Result<SparseVector> {
    let mut arch = ArchitectureConfig::hmp_ir(2, 64)?.with_pyramid(vec![1, 2, 3]);
    arch.layers[0].codebook_size = 32;
    let dicts = layer_dictionaries(img, &arch)?;
    let encoder = HmpEncoder::new(arch.clone(), dicts)?;
    let v = encoder.encode(img)?;
    println!(
        "descriptor: length {} (= 2·{}·14), {} nonzeros, norm {:.6}",
        v.dim(),
        arch.final_codebook_size(),
        v.nnz(),
        v.norm()
    );
    Ok(v)
}

pub fn run_example() -> Result<SparseVector> {
    let corpus = texture_corpus(&CorpusSpec {
        groups: 1,
        ..CorpusSpec::default()
    });
    encode(&corpus.images[0].1)
}

fn main() -> Result<()> {
    match std::env::args().nth(1) {
        Some(path) => encode(&load_image(path)?)?,
        None => run_example()?,
    };
    Ok(())
}
