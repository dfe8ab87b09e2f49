// Average precision by hand and mAP over a planted-cluster corpus.
//
// ```text
// cargo run --example evaluate_map
// ```

use std::collections::{BTreeSet, HashMap};

use hmpir::{average_precision, evaluate, GroundTruth, ImageDescriptor, InvertedIndex, Result, SparseVector};

/// Returns the mAP of the planted corpus.
pub fn run_example() -> Result<f64> {
    let relevant: BTreeSet<String> = ["a", "b"].map(String::from).into();
    for ranked in [["a", "b", "x"], ["x", "a", "b"], ["a", "x", "b"]] {
        println!("AP{ranked:?} = {:.6}", average_precision(&ranked, &relevant)?);
    }

    // three groups of four identical descriptors; a base image queries its group
    let mut descriptors = HashMap::new();
    let mut groups = Vec::new();
    for g in 0..3 {
        let mut dense = vec![0.0; 6];
        dense[2 * g] = 0.8;
        dense[2 * g + 1] = 0.6;
        let ids: Vec<String> = (0..4).map(|m| format!("g{g}_{m}")).collect();
        for id in &ids {
            descriptors.insert(id.clone(), ImageDescriptor::new(id.clone(), SparseVector::from_dense(&dense)));
        }
        groups.push(ids);
    }
    let truth = GroundTruth::from_groups(&groups)?;
    print!("ground truth:\n{}", truth.to_text());
    let index = InvertedIndex::from_descriptors(6, descriptors.values())?;
    let report = evaluate(&index, &descriptors, &truth, true, "planted")?;
    let mut text = Vec::new();
    report.write_to(&mut text)?;
    print!("{}", String::from_utf8_lossy(&text));
    Ok(report.mean_average_precision)
}

fn main() -> Result<()> {
    run_example()?;
    Ok(())
}
