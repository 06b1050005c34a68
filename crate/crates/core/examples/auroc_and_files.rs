//! Rank-based AUROC, score histograms and the binary tensor file format.
//!
//! Run with `cargo run --example auroc_and_files`.

use diffpath::eval::{auroc, auroc_bruteforce, common_range, histogram, ScoredSets};
use diffpath::tensor_file::TensorFile;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> diffpath::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inl = Normal::new(0.0, 1.0).expect("valid");
    let out = Normal::new(-1.0, 1.5).expect("valid");
    let sets = ScoredSets::new(
        (0..2000).map(|_| inl.sample(&mut rng)).collect(),
        (0..1500).map(|_| out.sample(&mut rng)).collect(),
    )?;
    println!("AUROC {:.4} (pairwise {:.4})", auroc(&sets), auroc_bruteforce(&sets));

    let range = common_range([sets.inlier_scores.as_slice(), sets.outlier_scores.as_slice()]).expect("finite");
    let h = histogram(&sets.outlier_scores, 12, range)?;
    for (w, c) in h.edges.windows(2).zip(&h.counts) {
        println!("[{:>7.3}, {:>7.3}) {}", w[0], w[1], "#".repeat((*c / 10) as usize));
    }

    let mut file = TensorFile::new();
    file.push("inlier", &[sets.inlier_scores.len()], &sets.inlier_scores)?;
    file.push("summary", &[2], &[auroc(&sets), h.out_of_range as f64])?;
    let bytes = file.to_bytes();
    let back = TensorFile::from_bytes(&bytes)?;
    println!("tensor file: {} bytes, sections {:?}", bytes.len(), back.sections().iter().map(|s| &s.name).collect::<Vec<_>>());
    Ok(())
}
