//! Synthetic datasets and PGM-directory ingestion.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::pgm;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const GAUSS_MIX_MODES_DEFAULT: usize = 8;
pub const GAUSS_MIX_RADIUS_DEFAULT: f64 = 4.0;
pub const GAUSS_MIX_SIGMA_DEFAULT: f64 = 0.3;
pub const SHAPES_SIDE: usize = 16;

#[derive(Debug, Clone)]
pub enum DatasetSpec {
    /// Equally spaced Gaussian modes on a circle; label = mode index.
    GaussMix2d {
        modes: usize,
        radius: f64,
        sigma: f64,
    },
    /// Two interleaved half-moons; label = moon.
    TwoMoons2d { noise: f64 },
    /// 16x16 grayscale images in [0,1], one circle or square each;
    /// label 0 = circle, 1 = square.
    Shapes16,
    /// P5 PGM files from a directory (sorted by name), values scaled to
    /// [0,1]; labels from labels.csv when present.
    PgmDir { path: std::path::PathBuf },
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// [N, dim] rows.
    pub data: Tensor,
    pub labels: Option<Vec<usize>>,
    pub dim: usize,
    /// Side length when samples are square images.
    pub image_side: Option<usize>,
    pub classes: Option<usize>,
}

pub fn generate(spec: &DatasetSpec, n: usize, rng: &mut Rng) -> Result<Dataset> {
    match spec {
        DatasetSpec::GaussMix2d {
            modes,
            radius,
            sigma,
        } => gauss_mix(*modes, *radius, *sigma, n, rng),
        DatasetSpec::TwoMoons2d { noise } => two_moons(*noise, n, rng),
        DatasetSpec::Shapes16 => shapes16(n, rng),
        DatasetSpec::PgmDir { path } => load_pgm_dir(path),
    }
}

/// Center of mode `m` out of `modes` on a circle of the given radius.
pub fn gauss_mix_center(m: usize, modes: usize, radius: f64) -> (f64, f64) {
    let theta = 2.0 * std::f64::consts::PI * m as f64 / modes as f64;
    (radius * theta.cos(), radius * theta.sin())
}

fn gauss_mix(modes: usize, radius: f64, sigma: f64, n: usize, rng: &mut Rng) -> Result<Dataset> {
    if modes == 0 {
        return Err(Error::invalid("gauss-mix-2d needs at least one mode"));
    }
    let mut data = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let m = rng.below(modes);
        let (cx, cy) = gauss_mix_center(m, modes, radius);
        data.push(cx + sigma * rng.normal());
        data.push(cy + sigma * rng.normal());
        labels.push(m);
    }
    Ok(Dataset {
        data: Tensor::new(vec![n, 2], data)?,
        labels: Some(labels),
        dim: 2,
        image_side: None,
        classes: Some(modes),
    })
}

fn two_moons(noise: f64, n: usize, rng: &mut Rng) -> Result<Dataset> {
    let mut data = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let moon = rng.below(2);
        let theta = std::f64::consts::PI * rng.uniform();
        let (mut x, mut y) = if moon == 0 {
            (theta.cos(), theta.sin())
        } else {
            (1.0 - theta.cos(), 0.5 - theta.sin())
        };
        x += noise * rng.normal();
        y += noise * rng.normal();
        data.push(x);
        data.push(y);
        labels.push(moon);
    }
    Ok(Dataset {
        data: Tensor::new(vec![n, 2], data)?,
        labels: Some(labels),
        dim: 2,
        image_side: None,
        classes: Some(2),
    })
}

/// Render one shape image: anti-aliased filled circle or square of random
/// position and size.
pub fn render_shape(class: usize, rng: &mut Rng) -> Tensor {
    let side = SHAPES_SIDE;
    let half = 2.5 + 2.5 * rng.uniform(); // 2.5..5.0 radius / half-side
    let lo = half + 0.5;
    let hi = side as f64 - 1.0 - half - 0.5;
    let cx = lo + (hi - lo) * rng.uniform();
    let cy = lo + (hi - lo) * rng.uniform();
    let mut img = Tensor::zeros(&[side, side]);
    for y in 0..side {
        for x in 0..side {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let dist = if class == 0 {
                (dx * dx + dy * dy).sqrt()
            } else {
                dx.abs().max(dy.abs())
            };
            img.data_mut()[y * side + x] = (half + 0.5 - dist).clamp(0.0, 1.0);
        }
    }
    img
}

fn shapes16(n: usize, rng: &mut Rng) -> Result<Dataset> {
    let side = SHAPES_SIDE;
    let mut data = Vec::with_capacity(n * side * side);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let class = rng.below(2);
        let img = render_shape(class, rng);
        data.extend_from_slice(img.data());
        labels.push(class);
    }
    Ok(Dataset {
        data: Tensor::new(vec![n, side * side], data)?,
        labels: Some(labels),
        dim: side * side,
        image_side: Some(side),
        classes: Some(2),
    })
}

fn load_pgm_dir(dir: &Path) -> Result<Dataset> {
    let mut names: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".pgm"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::invalid(format!(
            "no .pgm files in {}",
            dir.display()
        )));
    }
    let mut side = None;
    let mut data = Vec::new();
    for name in &names {
        let img = pgm::read(&dir.join(name))?;
        let (h, w) = (img.shape()[0], img.shape()[1]);
        if h != w {
            return Err(Error::invalid(format!("{name}: images must be square")));
        }
        match side {
            None => side = Some(h),
            Some(s) if s != h => {
                return Err(Error::invalid(format!(
                    "{name}: size {h} differs from earlier {s}"
                )))
            }
            _ => {}
        }
        data.extend_from_slice(img.data());
    }
    let side = side.unwrap();
    let labels = read_labels_csv(&dir.join("labels.csv"), &names)?;
    let classes = labels.as_ref().map(|ls| ls.iter().max().map_or(0, |m| m + 1));
    Ok(Dataset {
        data: Tensor::new(vec![names.len(), side * side], data)?,
        labels,
        dim: side * side,
        image_side: Some(side),
        classes,
    })
}

fn read_labels_csv(path: &Path, names: &[String]) -> Result<Option<Vec<usize>>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path)?;
    let mut map = std::collections::HashMap::new();
    for line in text.lines().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(2, ',');
        let file = parts.next().unwrap_or("").trim();
        let label: usize = parts
            .next()
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("labels.csv: bad line '{line}'")))?;
        map.insert(file.to_string(), label);
    }
    let mut labels = Vec::with_capacity(names.len());
    for name in names {
        match map.get(name) {
            Some(&l) => labels.push(l),
            None => return Err(Error::invalid(format!("labels.csv misses {name}"))),
        }
    }
    Ok(Some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_mix_defaults_land_near_modes() {
        let mut rng = Rng::new(1);
        let ds = generate(
            &DatasetSpec::GaussMix2d {
                modes: 8,
                radius: 4.0,
                sigma: 0.3,
            },
            400,
            &mut rng,
        )
        .unwrap();
        let labels = ds.labels.as_ref().unwrap();
        for i in 0..400 {
            let (cx, cy) = gauss_mix_center(labels[i], 8, 4.0);
            let dx = ds.data.data()[i * 2] - cx;
            let dy = ds.data.data()[i * 2 + 1] - cy;
            let dist = (dx * dx + dy * dy).sqrt();
            assert!(dist < 0.3 * 6.0, "sample {i} too far from its mode: {dist}");
        }
    }

    #[test]
    fn shapes_are_in_unit_range_with_binary_labels() {
        let mut rng = Rng::new(2);
        let ds = generate(&DatasetSpec::Shapes16, 50, &mut rng).unwrap();
        assert_eq!(ds.dim, 256);
        assert!(ds.data.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(ds.labels.as_ref().unwrap().iter().all(|&l| l < 2));
        // every image has some foreground
        for i in 0..50 {
            let mass: f64 = ds.data.data()[i * 256..(i + 1) * 256].iter().sum();
            assert!(mass > 5.0, "image {i} nearly empty");
        }
    }

    #[test]
    fn generation_is_deterministic_under_seed() {
        let mut a = Rng::new(3);
        let mut b = Rng::new(3);
        let da = generate(&DatasetSpec::Shapes16, 10, &mut a).unwrap();
        let db = generate(&DatasetSpec::Shapes16, 10, &mut b).unwrap();
        assert_eq!(da.data, db.data);
        assert_eq!(da.labels, db.labels);
    }

    #[test]
    fn two_moons_has_two_classes() {
        let mut rng = Rng::new(4);
        let ds = generate(&DatasetSpec::TwoMoons2d { noise: 0.05 }, 200, &mut rng).unwrap();
        let labels = ds.labels.unwrap();
        assert!(labels.iter().any(|&l| l == 0) && labels.iter().any(|&l| l == 1));
    }
}
