// Inverted-file cosine search over sparse descriptors, checked against a full scan.
//
// ```text
// cargo run --example inverted_index
// ```

use hmpir::{exhaustive_scan, ImageDescriptor, InvertedIndex, Result, SparseVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIM: usize = 2000;

fn random_descriptor(rng: &mut ChaCha8Rng, id: String) -> ImageDescriptor {
    let mut dense = vec![0.0; DIM];
    for d in sample(rng, DIM, 40) {
        dense[d] = rng.random_range(0.0..1.0);
    }
    let n = dense.iter().map(|v| v * v).sum::<f64>().sqrt();
    dense.iter_mut().for_each(|v| *v /= n);
    ImageDescriptor::new(id, SparseVector::from_dense(&dense))
}

/// Returns the top hit for a query that is a stored descriptor.
pub fn run_example() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let docs: Vec<ImageDescriptor> = (0..1000).map(|i| random_descriptor(&mut rng, format!("img{i:04}"))).collect();
    let index = InvertedIndex::from_descriptors(DIM, &docs)?;
    println!("{} documents, {} postings", index.doc_count(), index.posting_count());

    let q = &docs[42];
    let hits = index.query(q, 5, false)?;
    for (rank, (id, score)) in hits.hits.iter().enumerate() {
        println!("{:2}  {id}  {score:.6}", rank + 1);
    }
    let scan = exhaustive_scan(&docs, q, 5);
    assert_eq!(hits.ids().collect::<Vec<_>>(), scan.ids().collect::<Vec<_>>());

    let mut bytes = Vec::new();
    index.write_to(&mut bytes)?;
    let loaded = InvertedIndex::read_from(bytes.as_slice())?;
    println!("serialized size {} bytes, reload identical: {}", bytes.len(), loaded == index);

    let without_self = index.query(q, 1, true)?;
    println!("best match other than itself: {:?}", without_self.hits.first());
    Ok(hits.hits[0].0.clone())
}

fn main() -> Result<()> {
    run_example()?;
    Ok(())
}
