//! Procedural target styles. Each transform is a pure function of the image
//! and its named parameters.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::nets::image_shape;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StyleName {
    RealismAnalog,
    Pixelation,
    Polygonal,
    PaletteShift,
    SurebAnalog,
    AnimeAnalog,
}

/// Whether applying a transform twice equals applying it once.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Idempotence {
    Idempotent,
    NotIdempotent,
}

struct ParamDecl {
    name: &'static str,
    default: f64,
    min: f64,
    max: f64,
    integer: bool,
}

const fn real(name: &'static str, default: f64, min: f64, max: f64) -> ParamDecl {
    ParamDecl { name, default, min, max, integer: false }
}

const fn int(name: &'static str, default: f64, min: f64, max: f64) -> ParamDecl {
    ParamDecl { name, default, min, max, integer: true }
}

const REALISM: &[ParamDecl] = &[real("blur", 0.35, 0.0, 1.0), real("grain", 0.03, 0.0, 0.2)];
const PIXELATION: &[ParamDecl] = &[int("block", 4.0, 1.0, 16.0), int("levels", 4.0, 2.0, 32.0)];
const POLYGONAL: &[ParamDecl] = &[int("cells", 24.0, 4.0, 96.0), real("shade", 0.25, 0.0, 0.5)];
const PALETTE: &[ParamDecl] = &[real("strength", 0.6, 0.0, 1.0), real("vignette", 0.4, 0.0, 1.0)];
const SUREB: &[ParamDecl] = &[int("levels", 5.0, 2.0, 16.0), real("edges", 0.7, 0.0, 1.0), real("swap", 0.5, 0.0, 1.0)];
const ANIME: &[ParamDecl] =
    &[real("saturation", 1.6, 1.0, 3.0), int("levels", 4.0, 2.0, 16.0), real("outline", 0.8, 0.0, 1.0)];

impl StyleName {
    pub const ALL: [StyleName; 6] = [
        StyleName::RealismAnalog,
        StyleName::Pixelation,
        StyleName::Polygonal,
        StyleName::PaletteShift,
        StyleName::SurebAnalog,
        StyleName::AnimeAnalog,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StyleName::RealismAnalog => "realism_analog",
            StyleName::Pixelation => "pixelation",
            StyleName::Polygonal => "polygonal",
            StyleName::PaletteShift => "palette_shift",
            StyleName::SurebAnalog => "sureb_analog",
            StyleName::AnimeAnalog => "anime_analog",
        }
    }

    fn decls(self) -> &'static [ParamDecl] {
        match self {
            StyleName::RealismAnalog => REALISM,
            StyleName::Pixelation => PIXELATION,
            StyleName::Polygonal => POLYGONAL,
            StyleName::PaletteShift => PALETTE,
            StyleName::SurebAnalog => SUREB,
            StyleName::AnimeAnalog => ANIME,
        }
    }

    pub fn idempotence(self) -> Idempotence {
        match self {
            StyleName::Pixelation => Idempotence::Idempotent,
            _ => Idempotence::NotIdempotent,
        }
    }
}

impl fmt::Display for StyleName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StyleName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StyleName::ALL
            .iter()
            .copied()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| invalid!("unknown style `{}`", s))
    }
}

/// A named transform with a complete, validated parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleTransformSpec {
    name: StyleName,
    params: Vec<(&'static str, f64)>,
}

impl StyleTransformSpec {
    pub fn new(name: StyleName) -> Self {
        Self { name, params: name.decls().iter().map(|d| (d.name, d.default)).collect() }
    }

    /// Defaults overridden by `overrides`; unknown names and out-of-range
    /// values are rejected.
    pub fn with_params(name: StyleName, overrides: &[(&str, f64)]) -> Result<Self> {
        let mut spec = Self::new(name);
        for (key, value) in overrides {
            spec.set(key, *value)?;
        }
        Ok(spec)
    }

    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        let decl = self
            .name
            .decls()
            .iter()
            .find(|d| d.name == key)
            .ok_or_else(|| invalid!("style {} has no parameter `{}`", self.name, key))?;
        if !value.is_finite() || value < decl.min || value > decl.max {
            return Err(invalid!(
                "{}.{} = {} outside [{}, {}]",
                self.name,
                key,
                value,
                decl.min,
                decl.max
            ));
        }
        if decl.integer && value != libm::round(value) {
            return Err(invalid!("{}.{} must be an integer, got {}", self.name, key, value));
        }
        if self.name == StyleName::Pixelation && key == "block" && 32 % (value as usize) != 0 {
            return Err(invalid!("pixelation block {} must divide 32", value));
        }
        for p in &mut self.params {
            if p.0 == key {
                p.1 = value;
            }
        }
        Ok(())
    }

    pub fn name(&self) -> StyleName {
        self.name
    }

    pub fn params(&self) -> &[(&'static str, f64)] {
        &self.params
    }

    pub fn param(&self, key: &str) -> f64 {
        self.params.iter().find(|p| p.0 == key).map(|p| p.1).expect("declared parameter")
    }

    pub fn idempotence(&self) -> Idempotence {
        self.name.idempotence()
    }

    /// Identifier used for dataset directories: the name, plus every
    /// parameter that differs from its default.
    pub fn style_id(&self) -> String {
        let mut id = String::from(self.name.as_str());
        for (d, (_, v)) in self.name.decls().iter().zip(&self.params) {
            if *v != d.default {
                id.push_str(&format!("-{}{}", d.name, v));
            }
        }
        id
    }

    /// The auxiliary style paired with this target by default: realism for
    /// pixel art, a soft painterly palette for the faceted style and a smooth
    /// painting-like rendering otherwise.
    pub fn default_aux(&self) -> StyleTransformSpec {
        match self.name {
            StyleName::Pixelation => Self::new(StyleName::RealismAnalog),
            StyleName::Polygonal => Self::new(StyleName::PaletteShift),
            _ => Self::with_params(StyleName::RealismAnalog, &[("blur", 1.0), ("grain", 0.0)]).expect("in range"),
        }
    }

    pub fn apply(&self, image: &Image) -> Image {
        let px = Pixels::from_image(image);
        let out = match self.name {
            StyleName::RealismAnalog => realism(&px, self.param("blur"), self.param("grain")),
            StyleName::Pixelation => pixelate(&px, self.param("block") as usize, self.param("levels") as usize),
            StyleName::Polygonal => polygonal(&px, self.param("cells") as usize, self.param("shade")),
            StyleName::PaletteShift => palette_shift(&px, self.param("strength"), self.param("vignette")),
            StyleName::SurebAnalog => {
                sureb(&px, self.param("levels") as usize, self.param("edges"), self.param("swap"))
            }
            StyleName::AnimeAnalog => {
                anime(&px, self.param("saturation"), self.param("levels") as usize, self.param("outline"))
            }
        };
        out.into_image()
    }
}

impl fmt::Display for StyleTransformSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.name)?;
        for (i, (k, v)) in self.params.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{k}={v}")?;
        }
        f.write_str(")")
    }
}

const N: usize = 32;

#[derive(Clone)]
struct Pixels(Vec<[f64; 3]>);

impl Pixels {
    fn from_image(img: &Image) -> Self {
        let d = img.tensor().data();
        Self((0..N * N).map(|p| [d[p], d[1024 + p], d[2048 + p]]).collect())
    }

    fn into_image(self) -> Image {
        let px = self.0;
        Image::from_clamped(Tensor::from_fn(&image_shape(), |i| px[i % 1024][i / 1024])).expect("static shape")
    }

    fn at(&self, x: i32, y: i32) -> [f64; 3] {
        let cx = x.clamp(0, N as i32 - 1) as usize;
        let cy = y.clamp(0, N as i32 - 1) as usize;
        self.0[cy * N + cx]
    }

    fn box_blur(&self) -> Self {
        let mut out = self.clone();
        for y in 0..N as i32 {
            for x in 0..N as i32 {
                let mut acc = [0.0; 3];
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let p = self.at(x + dx, y + dy);
                        for c in 0..3 {
                            acc[c] += p[c] / 9.0;
                        }
                    }
                }
                out.0[y as usize * N + x as usize] = acc;
            }
        }
        out
    }

    /// Sobel gradient magnitude of luminance, roughly in `[0, 1]`.
    fn edges(&self) -> Vec<f64> {
        let lum: Vec<f64> = self.0.iter().map(|p| luminance(*p)).collect();
        let l = |x: i32, y: i32| lum[y.clamp(0, N as i32 - 1) as usize * N + x.clamp(0, N as i32 - 1) as usize];
        let mut out = vec![0.0; N * N];
        for y in 0..N as i32 {
            for x in 0..N as i32 {
                let gx = l(x + 1, y - 1) + 2.0 * l(x + 1, y) + l(x + 1, y + 1)
                    - l(x - 1, y - 1)
                    - 2.0 * l(x - 1, y)
                    - l(x - 1, y + 1);
                let gy = l(x - 1, y + 1) + 2.0 * l(x, y + 1) + l(x + 1, y + 1)
                    - l(x - 1, y - 1)
                    - 2.0 * l(x, y - 1)
                    - l(x + 1, y - 1);
                out[y as usize * N + x as usize] = (libm::sqrt(gx * gx + gy * gy) / 4.0).min(1.0);
            }
        }
        out
    }
}

fn luminance(p: [f64; 3]) -> f64 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn quantize(v: f64, levels: usize) -> f64 {
    let k = (levels - 1) as f64;
    libm::round(v.clamp(0.0, 1.0) * k) / k
}

/// Deterministic position hash in `[-1, 1]`.
fn hash_noise(x: usize, y: usize, c: usize) -> f64 {
    let mut h = (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (c as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
    h ^= h >> 29;
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 32;
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn realism(px: &Pixels, blur: f64, grain: f64) -> Pixels {
    let b = px.box_blur();
    let mut out = px.clone();
    for (i, p) in out.0.iter_mut().enumerate() {
        for c in 0..3 {
            p[c] = (1.0 - blur) * p[c] + blur * b.0[i][c] + grain * hash_noise(i % N, i / N, c);
        }
    }
    out
}

fn pixelate(px: &Pixels, block: usize, levels: usize) -> Pixels {
    let mut out = px.clone();
    let area = (block * block) as f64;
    for by in (0..N).step_by(block) {
        for bx in (0..N).step_by(block) {
            let mut acc = [0.0; 3];
            for y in by..by + block {
                for x in bx..bx + block {
                    for c in 0..3 {
                        acc[c] += px.0[y * N + x][c];
                    }
                }
            }
            let q = [quantize(acc[0] / area, levels), quantize(acc[1] / area, levels), quantize(acc[2] / area, levels)];
            for y in by..by + block {
                for x in bx..bx + block {
                    out.0[y * N + x] = q;
                }
            }
        }
    }
    out
}

/// Voronoi sites on a jittered grid, fixed for a given cell count.
fn sites(cells: usize) -> Vec<(f64, f64)> {
    let cols = libm::ceil(libm::sqrt(cells as f64)) as usize;
    (0..cells)
        .map(|i| {
            let (gx, gy) = (i % cols, i / cols);
            let rows = cells.div_ceil(cols);
            let cw = N as f64 / cols as f64;
            let ch = N as f64 / rows as f64;
            let jx = 0.5 + 0.35 * hash_noise(i, 17, 0);
            let jy = 0.5 + 0.35 * hash_noise(i, 29, 1);
            ((gx as f64 + jx) * cw, (gy as f64 + jy) * ch)
        })
        .collect()
}

fn polygonal(px: &Pixels, cells: usize, shade: f64) -> Pixels {
    let sites = sites(cells);
    let owner: Vec<usize> = (0..N * N)
        .map(|i| {
            let (x, y) = ((i % N) as f64 + 0.5, (i / N) as f64 + 0.5);
            let mut best = (f64::INFINITY, 0);
            for (k, (sx, sy)) in sites.iter().enumerate() {
                let d = (x - sx) * (x - sx) + (y - sy) * (y - sy);
                if d < best.0 {
                    best = (d, k);
                }
            }
            best.1
        })
        .collect();
    let mut sum = vec![[0.0; 3]; cells];
    let mut count = vec![0.0; cells];
    for (i, &k) in owner.iter().enumerate() {
        for c in 0..3 {
            sum[k][c] += px.0[i][c];
        }
        count[k] += 1.0;
    }
    let mut out = px.clone();
    for (i, &k) in owner.iter().enumerate() {
        let (x, y) = ((i % N) as f64 + 0.5, (i / N) as f64 + 0.5);
        // Each facet is lit from the upper left.
        let lit = 1.0 + shade * ((sites[k].0 - x) + (sites[k].1 - y)) / 8.0;
        for c in 0..3 {
            out.0[i][c] = sum[k][c] / count[k] * lit;
        }
    }
    out
}

fn palette_shift(px: &Pixels, strength: f64, vignette: f64) -> Pixels {
    const M: [[f64; 3]; 3] = [[0.85, 0.35, 0.12], [0.25, 0.65, 0.1], [0.1, 0.22, 0.45]];
    let mut out = px.clone();
    for (i, p) in out.0.iter_mut().enumerate() {
        let (x, y) = ((i % N) as f64 + 0.5 - 16.0, (i / N) as f64 + 0.5 - 16.0);
        let fall = 1.0 - vignette * (x * x + y * y) / 512.0;
        let src = *p;
        for c in 0..3 {
            let shifted = M[c][0] * src[0] + M[c][1] * src[1] + M[c][2] * src[2];
            p[c] = ((1.0 - strength) * src[c] + strength * shifted) * fall;
        }
    }
    out
}

fn sureb(px: &Pixels, levels: usize, edges: f64, swap: f64) -> Pixels {
    let e = px.edges();
    let mut out = px.clone();
    for (i, p) in out.0.iter_mut().enumerate() {
        let src = *p;
        let rotated = [src[2], src[0], src[1]];
        let dark = 1.0 - edges * e[i];
        for c in 0..3 {
            p[c] = quantize((1.0 - swap) * src[c] + swap * rotated[c], levels) * dark;
        }
    }
    out
}

fn anime(px: &Pixels, saturation: f64, levels: usize, outline: f64) -> Pixels {
    let smooth = px.box_blur();
    let e = px.edges();
    let mut out = smooth.clone();
    for (i, p) in out.0.iter_mut().enumerate() {
        let l = luminance(*p);
        let ink = if e[i] > 0.25 { 1.0 - outline } else { 1.0 };
        for c in 0..3 {
            p[c] = quantize(l + saturation * (p[c] - l), levels) * ink;
        }
    }
    out
}
