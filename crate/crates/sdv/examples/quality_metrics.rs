//! PSNR and SSIM behavior under common distortions.

use sdv::image::ImageBuffer;
use sdv::metrics::{psnr, ssim};
use sdv::synth::textures;

fn main() {
    let img = textures::filtered_noise(128, 128, 5, 2.0, 0.1, 0.9);

    let cases: Vec<(&str, ImageBuffer)> = vec![
        ("identical", img.clone()),
        ("plus 0.01 bias", shift(&img, 0.01)),
        ("plus 0.05 bias", shift(&img, 0.05)),
        ("smoothed (sigma 1)", textures::gaussian_blur(&img, 1.0)),
        ("smoothed (sigma 3)", textures::gaussian_blur(&img, 3.0)),
        ("negated", negate(&img)),
    ];

    println!("{:22} {:>10} {:>10}", "distortion", "psnr (dB)", "ssim");
    for (name, distorted) in &cases {
        println!(
            "{name:22} {:>10.2} {:>10.4}",
            psnr(&img, distorted).unwrap(),
            ssim(&img, distorted).unwrap()
        );
    }
}

fn shift(img: &ImageBuffer, delta: f64) -> ImageBuffer {
    ImageBuffer::from_data(
        img.width(),
        img.height(),
        img.channels(),
        img.data().iter().map(|v| (v + delta).min(1.0)).collect(),
    )
}

fn negate(img: &ImageBuffer) -> ImageBuffer {
    ImageBuffer::from_data(
        img.width(),
        img.height(),
        img.channels(),
        img.data().iter().map(|v| 1.0 - v).collect(),
    )
}
