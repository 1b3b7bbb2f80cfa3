//! Two-phase high-contrast permeability fields and the spectral weight `κ̃`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridHierarchy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MediumStyle {
    /// Long horizontal channels with a few inclusions.
    #[serde(rename = "A")]
    A,
    /// Scattered inclusions with short channels.
    #[serde(rename = "B")]
    B,
    /// Independent Bernoulli inclusions per fine element.
    #[serde(rename = "random")]
    Random,
}

impl FromStr for MediumStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(MediumStyle::A),
            "B" | "b" => Ok(MediumStyle::B),
            "random" => Ok(MediumStyle::Random),
            _ => Err(Error::config(format!("unknown medium style `{s}` (expected A, B or random)"))),
        }
    }
}

impl fmt::Display for MediumStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MediumStyle::A => "A",
            MediumStyle::B => "B",
            MediumStyle::Random => "random",
        })
    }
}

/// Piecewise-constant coefficient, one value per fine element.
#[derive(Clone, Debug, PartialEq)]
pub struct PermeabilityField {
    nx: usize,
    ny: usize,
    values: Vec<f64>,
}

const INCLUSION_FRACTION: f64 = 0.15;

impl PermeabilityField {
    pub fn constant(g: &GridHierarchy, value: f64) -> Self {
        Self {
            nx: g.nx_fine(),
            ny: g.ny_fine(),
            values: vec![value; g.n_elements()],
        }
    }

    pub fn from_values(nx: usize, ny: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != nx * ny {
            return Err(Error::config(format!(
                "medium has {} values, expected {nx}×{ny} = {}",
                values.len(),
                nx * ny
            )));
        }
        if let Some((e, v)) = values.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::config(format!("medium value {v} at element {e} is not positive and finite")));
        }
        Ok(Self { nx, ny, values })
    }

    /// Two-valued field with matrix value 1 and inclusion value `kappa_r`.
    /// The geometry depends only on `(style, seed, grid)`.
    pub fn generate(g: &GridHierarchy, style: MediumStyle, kappa_r: f64, seed: u64) -> Result<Self> {
        if !(kappa_r >= 1.0) || !kappa_r.is_finite() {
            return Err(Error::config(format!("contrast ratio {kappa_r} must be at least 1")));
        }
        let mask = inclusion_mask(g.nx_fine(), style, seed);
        let values = mask.into_iter().map(|m| if m { kappa_r } else { 1.0 }).collect();
        Ok(Self {
            nx: g.nx_fine(),
            ny: g.ny_fine(),
            values,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, e: usize) -> f64 {
        self.values[e]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn contrast(&self) -> f64 {
        self.max() / self.min()
    }

    pub fn matches(&self, g: &GridHierarchy) -> bool {
        self.nx == g.nx_fine() && self.ny == g.ny_fine()
    }

    pub fn check_grid(&self, g: &GridHierarchy) -> Result<()> {
        if self.matches(g) {
            Ok(())
        } else {
            Err(Error::config(format!(
                "medium is {}×{} but the fine grid is {}×{}",
                self.nx,
                self.ny,
                g.nx_fine(),
                g.ny_fine()
            )))
        }
    }

    /// Text form: `nx ny` on the first line, then row-major values.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.nx, self.ny);
        for row in self.values.chunks(self.nx) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut tokens = text.split_whitespace();
        let mut size = |what: &str| -> std::result::Result<usize, String> {
            tokens
                .next()
                .ok_or_else(|| format!("missing {what}"))?
                .parse()
                .map_err(|e| format!("bad {what}: {e}"))
        };
        let nx = size("nx")?;
        let ny = size("ny")?;
        let values = tokens
            .map(|t| t.parse::<f64>().map_err(|e| format!("bad value `{t}`: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::from_values(nx, ny, values).map_err(|e| e.to_string())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn paint(mask: &mut [bool], n: usize, x0: usize, x1: usize, y0: usize, y1: usize) {
    for ey in y0.min(n)..y1.min(n) {
        for ex in x0.min(n)..x1.min(n) {
            mask[ey * n + ex] = true;
        }
    }
}

/// Inclusion indicator on an `n × n` fine grid. Feature thickness scales with
/// the grid so the geometry looks the same at every resolution.
fn inclusion_mask(n: usize, style: MediumStyle, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = vec![false; n * n];
    let t = (n / 100).max(1);
    let cells = |frac: f64| ((frac * n as f64).round() as usize).max(1);
    let inclusion = |rng: &mut ChaCha8Rng, mask: &mut [bool]| {
        let w = t * rng.random_range(1..=3usize);
        let hgt = t * rng.random_range(1..=3usize);
        let x0 = rng.random_range(0..n);
        let y0 = rng.random_range(0..n);
        paint(mask, n, x0, x0 + w, y0, y0 + hgt);
    };
    match style {
        MediumStyle::A => {
            let channels = (n / 25).max(1);
            for c in 0..channels {
                // one channel per horizontal band, jittered inside it
                let band = n as f64 / channels as f64;
                let y = ((c as f64 + rng.random_range(0.2..0.8)) * band) as usize;
                let len = cells(rng.random_range(0.55..0.95));
                let x0 = rng.random_range(0..=n - len.min(n));
                paint(&mut mask, n, x0, x0 + len, y, y + t);
            }
            for _ in 0..(n * n / 800).max(1) {
                inclusion(&mut rng, &mut mask);
            }
        }
        MediumStyle::B => {
            for _ in 0..(n * n / 300).max(1) {
                inclusion(&mut rng, &mut mask);
            }
            for _ in 0..(n / 20).max(1) {
                let len = cells(rng.random_range(0.1..0.3));
                let a = rng.random_range(0..=n - len.min(n));
                let b = rng.random_range(0..n);
                if rng.random_bool(0.5) {
                    paint(&mut mask, n, a, a + len, b, b + t);
                } else {
                    paint(&mut mask, n, b, b + t, a, a + len);
                }
            }
        }
        MediumStyle::Random => {
            for m in mask.iter_mut() {
                *m = rng.random_bool(INCLUSION_FRACTION);
            }
        }
    }
    mask
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightMode {
    /// `κ̃ = 24 κ / H²`.
    #[default]
    #[serde(rename = "simplified")]
    Simplified,
    /// `κ̃ = 3 Σ_j κ |∇η_j|²` with the bilinear coarse Lagrange basis.
    #[serde(rename = "lagrange-sum")]
    LagrangeSum,
}

impl FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simplified" => Ok(WeightMode::Simplified),
            "lagrange-sum" => Ok(WeightMode::LagrangeSum),
            _ => Err(Error::config(format!(
                "unknown weight mode `{s}` (expected simplified or lagrange-sum)"
            ))),
        }
    }
}

/// Per-fine-element weight `κ̃` for the local spectral problems.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightField {
    pub mode: WeightMode,
    values: Vec<f64>,
}

impl WeightField {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, e: usize) -> f64 {
        self.values[e]
    }
}

/// `Σ_j |∇η_j|²` for the four bilinear Lagrange functions of a coarse element
/// of size `H`, at local coordinates `(ξ, ζ) ∈ [0, 1]²`.
pub fn lagrange_gradient_sum(xi: f64, zeta: f64, coarse_h: f64) -> f64 {
    let s = |t: f64| (1.0 - t).powi(2) + t * t;
    2.0 * (s(xi) + s(zeta)) / (coarse_h * coarse_h)
}

pub fn compute_weight(g: &GridHierarchy, kappa: &PermeabilityField, mode: WeightMode) -> WeightField {
    let big_h = g.coarse_h();
    let values = match mode {
        WeightMode::Simplified => kappa.values.iter().map(|k| 24.0 * k / (big_h * big_h)).collect(),
        WeightMode::LagrangeSum => {
            let r = g.ratio() as f64;
            (0..g.n_elements())
                .map(|e| {
                    let (ex, ey) = g.element_ij(e);
                    let xi = ((ex % g.ratio()) as f64 + 0.5) / r;
                    let zeta = ((ey % g.ratio()) as f64 + 0.5) / r;
                    3.0 * kappa.get(e) * lagrange_gradient_sum(xi, zeta, big_h)
                })
                .collect()
        }
    };
    WeightField { mode, values }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_contrast_is_constant() {
        let g = GridHierarchy::new(16, 4).unwrap();
        for style in [MediumStyle::A, MediumStyle::B, MediumStyle::Random] {
            let k = PermeabilityField::generate(&g, style, 1.0, 3).unwrap();
            assert!(k.values().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn generated_fields_are_two_valued() {
        let g = GridHierarchy::new(400, 100).unwrap();
        let k = PermeabilityField::generate(&g, MediumStyle::A, 1e3, 0).unwrap();
        assert_eq!(k.values().len(), 160_000);
        assert_eq!(k.contrast(), 1e3);
        assert!(k.values().iter().all(|&v| v == 1.0 || v == 1e3));
    }

    #[test]
    fn generation_is_deterministic() {
        let g = GridHierarchy::new(8, 2).unwrap();
        let a = PermeabilityField::generate(&g, MediumStyle::Random, 10.0, 7).unwrap();
        let b = PermeabilityField::generate(&g, MediumStyle::Random, 10.0, 7).unwrap();
        assert_eq!(
            a.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn contrast_scales_with_inclusion_value() {
        let g = GridHierarchy::new(40, 10).unwrap();
        for style in [MediumStyle::A, MediumStyle::B, MediumStyle::Random] {
            let a = PermeabilityField::generate(&g, style, 1e2, 5).unwrap();
            let b = PermeabilityField::generate(&g, style, 1e3, 5).unwrap();
            assert_eq!(b.contrast(), 10.0 * a.contrast());
            let geom = |k: &PermeabilityField| k.values().iter().map(|&v| v > 1.0).collect::<Vec<_>>();
            assert_eq!(geom(&a), geom(&b));
        }
    }

    #[test]
    fn sub_unit_contrast_is_rejected() {
        let g = GridHierarchy::new(4, 2).unwrap();
        assert!(matches!(
            PermeabilityField::generate(&g, MediumStyle::A, 0.5, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn simplified_weight() {
        let g = GridHierarchy::new(4, 2).unwrap();
        let k = PermeabilityField::constant(&g, 1.0);
        let w = compute_weight(&g, &k, WeightMode::Simplified);
        assert!(w.values().iter().all(|&v| v == 96.0));
    }

    /// Brute force: finite-difference gradients of the four bilinear shape
    /// functions on the unit element.
    #[test]
    fn lagrange_sum_at_unit_center() {
        let shapes: [fn(f64, f64) -> f64; 4] = [
            |x, y| (1.0 - x) * (1.0 - y),
            |x, y| x * (1.0 - y),
            |x, y| x * y,
            |x, y| (1.0 - x) * y,
        ];
        let d = 1e-6;
        let (x, y) = (0.5, 0.5);
        let fd: f64 = shapes
            .iter()
            .map(|f| {
                let gx = (f(x + d, y) - f(x - d, y)) / (2.0 * d);
                let gy = (f(x, y + d) - f(x, y - d)) / (2.0 * d);
                gx * gx + gy * gy
            })
            .sum();
        assert!((fd - 2.0).abs() < 1e-8);
        assert!((lagrange_gradient_sum(0.5, 0.5, 1.0) - fd).abs() < 1e-8);
        assert!((3.0 * lagrange_gradient_sum(0.5, 0.5, 1.0) - 6.0).abs() < 1e-14);
    }

    #[test]
    fn weight_modes_are_comparable() {
        let g = GridHierarchy::new(20, 2).unwrap();
        let k = PermeabilityField::constant(&g, 1.0);
        let s = compute_weight(&g, &k, WeightMode::Simplified);
        let l = compute_weight(&g, &k, WeightMode::LagrangeSum);
        for (a, b) in s.values().iter().zip(l.values()) {
            assert!(*b > 0.0);
            let ratio = a / b;
            assert!((1.0 / 16.0..=16.0).contains(&ratio), "{ratio}");
        }
    }

    #[test]
    fn text_round_trip() {
        let g = GridHierarchy::new(6, 3).unwrap();
        let k = PermeabilityField::generate(&g, MediumStyle::B, 1e4, 11).unwrap();
        let back = PermeabilityField::parse(&k.to_text()).unwrap();
        assert_eq!(back, k);
        assert!(PermeabilityField::parse("2 2\n1 1 1").is_err());
        assert!(PermeabilityField::parse("1 1\n-1").is_err());
    }
}
