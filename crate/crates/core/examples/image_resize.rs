//! Bringing image sets of different resolutions to a common size before
//! they reach the score model.
//!
//! Run with `cargo run --example image_resize`.

use diffpath::data::{equalize_resolutions, resize_bilinear, Dataset, ImageShape};

fn main() -> diffpath::Result<()> {
    let small = ImageShape::square(4, 1);
    let large = ImageShape::square(8, 1);
    let gradient: Vec<u8> = (0..16).map(|i| (i * 17) as u8).collect();
    let checker: Vec<u8> = (0..64).map(|i| if (i / 8 + i % 8) % 2 == 0 { 255 } else { 0 }).collect();
    let a = Dataset::from_u8_images("gradient4", &[gradient], small)?;
    let b = Dataset::from_u8_images("checker8", &[checker], large)?;

    let up = resize_bilinear(&a.samples[0], small, 8, 8)?;
    println!("4x4 gradient upsampled to 8x8:");
    for row in up.chunks(8) {
        println!("  {}", row.iter().map(|v| format!("{v:6.3}")).collect::<Vec<_>>().join(" "));
    }

    // both sets pass through the lower resolution, then up to the model size
    let eq = equalize_resolutions(&[a, b], 8)?;
    for d in &eq {
        println!("{}: shape {:?}, first row {:?}", d.name, d.shape, &d.samples[0][..8]);
    }
    Ok(())
}
