//! Procedural 32x32 scenes: landscapes with placed props, people on
//! landscapes, and fabric-like patterns. Rendering also yields the pixel mask
//! of the person sprite.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::image::Image;
use crate::nets::image_shape;
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

const SIZE: i32 = 32;
const HORIZON: i32 = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Color {
    Red,
    Blue,
    Green,
    Yellow,
    Purple,
    Orange,
    White,
    Black,
    Pink,
    Brown,
}

impl Color {
    pub const ALL: [Color; 10] = [
        Color::Red,
        Color::Blue,
        Color::Green,
        Color::Yellow,
        Color::Purple,
        Color::Orange,
        Color::White,
        Color::Black,
        Color::Pink,
        Color::Brown,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Blue => "blue",
            Color::Green => "green",
            Color::Yellow => "yellow",
            Color::Purple => "purple",
            Color::Orange => "orange",
            Color::White => "white",
            Color::Black => "black",
            Color::Pink => "pink",
            Color::Brown => "brown",
        }
    }

    pub fn rgb(self) -> [f64; 3] {
        match self {
            Color::Red => [0.85, 0.12, 0.12],
            Color::Blue => [0.15, 0.3, 0.85],
            Color::Green => [0.15, 0.65, 0.2],
            Color::Yellow => [0.95, 0.85, 0.15],
            Color::Purple => [0.55, 0.2, 0.7],
            Color::Orange => [0.95, 0.5, 0.1],
            Color::White => [0.95, 0.95, 0.95],
            Color::Black => [0.08, 0.08, 0.08],
            Color::Pink => [0.95, 0.55, 0.7],
            Color::Brown => [0.5, 0.3, 0.15],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeOfDay {
    Day,
    Sunset,
    Night,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Prop {
    Tree,
    Mountain,
    House,
    Sun,
    Cloud,
    Lake,
    Flower,
}

impl Prop {
    pub const ALL: [Prop; 7] = [Prop::Tree, Prop::Mountain, Prop::House, Prop::Sun, Prop::Cloud, Prop::Lake, Prop::Flower];

    /// Noun phrase; the sun turns into the moon at night.
    pub fn phrase(self, time: TimeOfDay) -> &'static str {
        match (self, time) {
            (Prop::Tree, _) => "a tree",
            (Prop::Mountain, _) => "a mountain",
            (Prop::House, _) => "a house",
            (Prop::Sun, TimeOfDay::Night) => "the moon",
            (Prop::Sun, _) => "the sun",
            (Prop::Cloud, _) => "a cloud",
            (Prop::Lake, _) => "a lake",
            (Prop::Flower, _) => "a flower",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Figure {
    Person,
    Woman,
    Man,
    Child,
}

impl Figure {
    pub const ALL: [Figure; 4] = [Figure::Person, Figure::Woman, Figure::Man, Figure::Child];

    pub fn word(self) -> &'static str {
        match self {
            Figure::Person => "person",
            Figure::Woman => "woman",
            Figure::Man => "man",
            Figure::Child => "child",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PersonSpec {
    pub figure: Figure,
    pub shirt: Color,
    /// Horizontal centre column.
    pub x: i32,
    pub waving: bool,
    pub skin: usize,
    pub hair: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub time: TimeOfDay,
    /// Props with their horizontal centre columns.
    pub props: Vec<(Prop, i32)>,
    pub person: Option<PersonSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatternKind {
    Stripes,
    Checks,
    Dots,
    Plaid,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatternSpec {
    pub kind: PatternKind,
    pub fg: Color,
    pub bg: Color,
    pub period: i32,
    pub diagonal: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Content {
    Scene(SceneSpec),
    Pattern(PatternSpec),
}

/// How much of a scene a caption mentions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mention {
    /// Only the person (or, without a person, the props).
    Subject,
    /// The person and the props.
    Everything,
}

impl SceneSpec {
    pub fn random_background(rng: &mut Rng) -> Self {
        let time = random_time(rng);
        let n = rng::uniform_int(rng, 2, 3);
        let props = place_props(rng, n, None);
        Self { time, props, person: None }
    }

    pub fn random_person(rng: &mut Rng) -> Self {
        let time = random_time(rng);
        let figure = Figure::ALL[rng::index(rng, Figure::ALL.len())];
        let shirt = pick_color(rng, &[Color::Black]);
        let x = rng::uniform_int(rng, 11, 21) as i32;
        let waving = rng::uniform(rng) < 0.3;
        let skin = rng::index(rng, SKIN.len());
        let hair = rng::index(rng, HAIR.len());
        let n = rng::uniform_int(rng, 1, 2);
        let props = place_props(rng, n, Some(x));
        Self { time, props, person: Some(PersonSpec { figure, shirt, x, waving, skin, hair }) }
    }

    /// Content phrase, e.g. `a woman in red near a tree` or
    /// `a mountain and a house at night`.
    pub fn phrase(&self, mention: Mention) -> String {
        let props: Vec<&str> = self.props.iter().map(|(p, _)| p.phrase(self.time)).collect();
        let time = match self.time {
            TimeOfDay::Day => "",
            TimeOfDay::Sunset => " at sunset",
            TimeOfDay::Night => " at night",
        };
        match &self.person {
            Some(p) => {
                let mut s = format!("a {} in {}", p.figure.word(), p.shirt.word());
                if p.waving {
                    s.push_str(" waving");
                }
                if mention == Mention::Everything && !props.is_empty() {
                    s.push_str(" near ");
                    s.push_str(&props[..props.len().min(2)].join(" and "));
                    s.push_str(time);
                }
                s
            }
            None => {
                let mut s = props[..props.len().min(2)].join(" and ");
                s.push_str(time);
                s
            }
        }
    }
}

impl PatternSpec {
    pub fn random(rng: &mut Rng) -> Self {
        let kind = [PatternKind::Stripes, PatternKind::Checks, PatternKind::Dots, PatternKind::Plaid][rng::index(rng, 4)];
        let fg = pick_color(rng, &[]);
        let bg = pick_color(rng, &[fg]);
        let period = rng::uniform_int(rng, 4, 8) as i32;
        Self { kind, fg, bg, period, diagonal: rng::uniform(rng) < 0.4 }
    }

    pub fn phrase(&self) -> String {
        match self.kind {
            PatternKind::Stripes => format!("{} stripes", self.fg.word()),
            PatternKind::Checks => format!("{} checks", self.fg.word()),
            PatternKind::Dots => format!("{} dots", self.fg.word()),
            PatternKind::Plaid => format!("a {} plaid pattern", self.fg.word()),
        }
    }
}

fn random_time(rng: &mut Rng) -> TimeOfDay {
    let u = rng::uniform(rng);
    if u < 0.6 {
        TimeOfDay::Day
    } else if u < 0.8 {
        TimeOfDay::Sunset
    } else {
        TimeOfDay::Night
    }
}

fn pick_color(rng: &mut Rng, exclude: &[Color]) -> Color {
    loop {
        let c = Color::ALL[rng::index(rng, Color::ALL.len())];
        if !exclude.contains(&c) {
            return c;
        }
    }
}

/// Distinct props at distinct columns, keeping clear of a person column.
fn place_props(rng: &mut Rng, n: usize, person_x: Option<i32>) -> Vec<(Prop, i32)> {
    let mut props: Vec<(Prop, i32)> = Vec::new();
    let mut guard = 0;
    while props.len() < n && guard < 200 {
        guard += 1;
        let p = Prop::ALL[rng::index(rng, Prop::ALL.len())];
        if props.iter().any(|(q, _)| *q == p) {
            continue;
        }
        let x = rng::uniform_int(rng, 5, 27) as i32;
        // Sky props may overlap ground props; ground props need their own column.
        let ground = !matches!(p, Prop::Sun | Prop::Cloud);
        if ground {
            if props.iter().any(|(q, qx)| !matches!(q, Prop::Sun | Prop::Cloud) && (qx - x).abs() < 9) {
                continue;
            }
            if let Some(px) = person_x {
                if (px - x).abs() < 8 {
                    continue;
                }
            }
        }
        props.push((p, x));
    }
    props
}

const SKIN: [[f64; 3]; 3] = [[0.96, 0.8, 0.66], [0.78, 0.57, 0.42], [0.45, 0.3, 0.2]];
const HAIR: [[f64; 3]; 3] = [[0.12, 0.08, 0.05], [0.45, 0.28, 0.12], [0.9, 0.78, 0.4]];

struct Canvas {
    px: Vec<[f64; 3]>,
    mask: Vec<f64>,
    marking: bool,
}

impl Canvas {
    fn new() -> Self {
        Self { px: vec![[0.0; 3]; (SIZE * SIZE) as usize], mask: vec![0.0; (SIZE * SIZE) as usize], marking: false }
    }

    fn set(&mut self, x: i32, y: i32, c: [f64; 3]) {
        if (0..SIZE).contains(&x) && (0..SIZE).contains(&y) {
            let i = (y * SIZE + x) as usize;
            self.px[i] = c;
            if self.marking {
                self.mask[i] = 1.0;
            }
        }
    }

    fn rect(&mut self, x0: i32, y0: i32, x1: i32, y1: i32, c: [f64; 3]) {
        for y in y0..y1 {
            for x in x0..x1 {
                self.set(x, y, c);
            }
        }
    }

    fn ellipse(&mut self, cx: f64, cy: f64, rx: f64, ry: f64, c: [f64; 3]) {
        for y in 0..SIZE {
            for x in 0..SIZE {
                let dx = (x as f64 + 0.5 - cx) / rx;
                let dy = (y as f64 + 0.5 - cy) / ry;
                if dx * dx + dy * dy <= 1.0 {
                    self.set(x, y, c);
                }
            }
        }
    }

    /// Triangle with a flat base on row `base_y` and apex at `(cx, apex_y)`.
    fn triangle(&mut self, cx: f64, apex_y: i32, base_y: i32, half_width: f64, c: [f64; 3]) {
        let h = (base_y - apex_y).max(1) as f64;
        for y in apex_y..base_y {
            let w = half_width * (y - apex_y) as f64 / h;
            for x in 0..SIZE {
                if (x as f64 + 0.5 - cx).abs() <= w + 0.5 {
                    self.set(x, y, c);
                }
            }
        }
    }

    /// Thick line between two points.
    fn line(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, thickness: f64, c: [f64; 3]) {
        let steps = 4 * (((x1 - x0).abs().max((y1 - y0).abs())) as usize + 1);
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
            let r = thickness / 2.0;
            let (xa, xb) = (libm::floor(x - r + 0.5) as i32, libm::floor(x + r - 0.5) as i32);
            let (ya, yb) = (libm::floor(y - r + 0.5) as i32, libm::floor(y + r - 0.5) as i32);
            for yy in ya..=yb {
                for xx in xa..=xb {
                    self.set(xx, yy, c);
                }
            }
        }
    }

    fn into_image(self) -> (Image, Vec<f64>) {
        let px = self.px;
        let t = Tensor::from_fn(&image_shape(), |i| {
            let (c, p) = (i / 1024, i % 1024);
            px[p][c].clamp(0.0, 1.0)
        });
        (Image::from_clamped(t).expect("canvas shape"), self.mask)
    }
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])]
}

fn shade(c: [f64; 3], k: f64) -> [f64; 3] {
    [c[0] * k, c[1] * k, c[2] * k]
}

fn draw_backdrop(cv: &mut Canvas, time: TimeOfDay) {
    let (top, bottom, ground) = match time {
        TimeOfDay::Day => ([0.45, 0.68, 0.95], [0.75, 0.87, 0.98], [0.35, 0.62, 0.25]),
        TimeOfDay::Sunset => ([0.55, 0.3, 0.55], [0.97, 0.6, 0.35], [0.3, 0.42, 0.2]),
        TimeOfDay::Night => ([0.03, 0.04, 0.15], [0.1, 0.12, 0.3], [0.08, 0.18, 0.1]),
    };
    for y in 0..HORIZON {
        let c = mix(top, bottom, y as f64 / (HORIZON - 1) as f64);
        cv.rect(0, y, SIZE, y + 1, c);
    }
    for y in HORIZON..SIZE {
        let c = shade(ground, 1.0 - 0.25 * (y - HORIZON) as f64 / (SIZE - HORIZON) as f64);
        cv.rect(0, y, SIZE, y + 1, c);
    }
}

fn draw_prop(cv: &mut Canvas, prop: Prop, x: i32, time: TimeOfDay) {
    let dim = if time == TimeOfDay::Night { 0.55 } else { 1.0 };
    let xf = x as f64;
    match prop {
        Prop::Tree => {
            cv.rect(x - 1, HORIZON - 6, x + 1, HORIZON + 2, shade([0.42, 0.26, 0.12], dim));
            cv.ellipse(xf, (HORIZON - 9) as f64, 4.5, 5.0, shade([0.12, 0.5, 0.15], dim));
        }
        Prop::Mountain => {
            cv.triangle(xf, 5, HORIZON, 8.0, shade([0.5, 0.5, 0.56], dim));
            cv.triangle(xf, 5, 9, 2.0, shade([0.95, 0.95, 0.98], dim));
        }
        Prop::House => {
            cv.rect(x - 4, HORIZON - 6, x + 4, HORIZON + 1, shade([0.9, 0.82, 0.6], dim));
            cv.triangle(xf, HORIZON - 11, HORIZON - 6, 5.0, shade([0.7, 0.15, 0.1], dim));
            cv.rect(x - 1, HORIZON - 3, x + 1, HORIZON + 1, shade([0.3, 0.18, 0.08], dim));
        }
        Prop::Sun => {
            let c = if time == TimeOfDay::Night { [0.92, 0.92, 0.82] } else { [1.0, 0.88, 0.2] };
            cv.ellipse(xf, 5.0, 3.2, 3.2, c);
        }
        Prop::Cloud => {
            let c = shade([0.97, 0.97, 0.97], if time == TimeOfDay::Night { 0.4 } else { 1.0 });
            cv.ellipse(xf, 6.0, 5.0, 2.2, c);
            cv.ellipse(xf + 1.5, 4.5, 2.8, 2.0, c);
        }
        Prop::Lake => {
            cv.ellipse(xf, 25.5, 6.5, 2.8, shade([0.2, 0.42, 0.85], dim));
        }
        Prop::Flower => {
            cv.rect(x, 24, x + 1, 29, shade([0.1, 0.5, 0.12], dim));
            cv.ellipse(xf + 0.5, 23.5, 2.0, 2.0, shade([0.95, 0.35, 0.6], dim));
            cv.set(x, 23, shade([1.0, 0.9, 0.2], dim));
        }
    }
}

fn draw_person(cv: &mut Canvas, p: &PersonSpec) {
    cv.marking = true;
    let child = p.figure == Figure::Child;
    // Vertical layout (rows) for adults / children, feet on row 30.
    let (head_r, torso_h, leg_h, torso_w) = if child { (2.6, 5, 5, 5) } else { (3.2, 8, 7, 7) };
    let feet = 30;
    let hip = feet - leg_h;
    let shoulder = hip - torso_h;
    let head_cy = shoulder as f64 - head_r;
    let x = p.x;
    let xf = x as f64 + 0.5;
    let skin = SKIN[p.skin];
    let hair = HAIR[p.hair];
    let shirt = p.shirt.rgb();
    let pants = [0.18, 0.2, 0.35];

    // Legs.
    cv.rect(x - 2, hip, x, feet + 1, pants);
    cv.rect(x + 1, hip, x + 3, feet + 1, pants);
    // Torso; the woman wears a flared dress.
    if p.figure == Figure::Woman {
        cv.triangle(xf, shoulder, hip + 2, (torso_w / 2 + 2) as f64, shirt);
        cv.rect(x - torso_w / 2 + 1, shoulder, x + torso_w / 2, shoulder + 3, shirt);
    } else {
        cv.rect(x - torso_w / 2, shoulder, x + torso_w / 2 + 1, hip, shirt);
    }
    // Arms: thickness 2.
    let half = (torso_w / 2) as f64 + 1.0;
    let arm_len = if child { 5.0 } else { 7.0 };
    cv.line(xf - half, shoulder as f64 + 1.0, xf - half - 1.0, shoulder as f64 + arm_len, 2.0, shirt);
    if p.waving {
        cv.line(xf + half, shoulder as f64 + 1.0, xf + half + 3.0, shoulder as f64 - arm_len + 2.0, 2.0, shirt);
    } else {
        cv.line(xf + half, shoulder as f64 + 1.0, xf + half + 1.0, shoulder as f64 + arm_len, 2.0, shirt);
    }
    // Neck and head.
    cv.rect(x - 1, shoulder - 1, x + 2, shoulder + 1, skin);
    cv.ellipse(xf, head_cy, head_r, head_r + 0.3, skin);
    // Hair: long for the woman, a cap otherwise.
    match p.figure {
        Figure::Woman => {
            cv.ellipse(xf, head_cy - 1.6, head_r + 0.4, 1.8, hair);
            let hy = head_cy as i32;
            cv.rect(x - head_r as i32 - 1, hy - 1, x - head_r as i32 + 1, shoulder + 3, hair);
            cv.rect(x + head_r as i32, hy - 1, x + head_r as i32 + 2, shoulder + 3, hair);
        }
        _ => cv.ellipse(xf, head_cy - 1.9, head_r, 1.5, hair),
    }
    // Face: two eyes and a three-pixel mouth.
    let ey = libm::round(head_cy) as i32;
    cv.set(x - 1, ey, [0.05, 0.05, 0.05]);
    cv.set(x + 1, ey, [0.05, 0.05, 0.05]);
    cv.rect(x - 1, ey + 2, x + 2, ey + 3, [0.6, 0.15, 0.15]);
    cv.marking = false;
}

fn draw_pattern(cv: &mut Canvas, p: &PatternSpec) {
    let (fg, bg) = (p.fg.rgb(), p.bg.rgb());
    let per = p.period.max(2);
    for y in 0..SIZE {
        for x in 0..SIZE {
            let u = if p.diagonal { x + y } else { y };
            let c = match p.kind {
                PatternKind::Stripes => {
                    if u.rem_euclid(per) < per / 2 {
                        fg
                    } else {
                        bg
                    }
                }
                PatternKind::Checks => {
                    if ((x / (per / 2 + 1)) + (y / (per / 2 + 1))) % 2 == 0 {
                        fg
                    } else {
                        bg
                    }
                }
                PatternKind::Dots => {
                    let (dx, dy) = (x.rem_euclid(per) - per / 2, y.rem_euclid(per) - per / 2);
                    if dx * dx + dy * dy <= 2 {
                        fg
                    } else {
                        bg
                    }
                }
                PatternKind::Plaid => {
                    let a = x.rem_euclid(per) < 2;
                    let b = y.rem_euclid(per) < 2;
                    match (a, b) {
                        (true, true) => shade(fg, 0.7),
                        (true, false) | (false, true) => mix(bg, fg, 0.6),
                        _ => bg,
                    }
                }
            };
            cv.set(x, y, c);
        }
    }
}

/// Renders content to an image and its person mask (1 on person pixels).
pub fn render(content: &Content) -> (Image, Vec<f64>) {
    let mut cv = Canvas::new();
    match content {
        Content::Scene(s) => {
            draw_backdrop(&mut cv, s.time);
            // Sky props first so ground props overlap them.
            for (p, x) in s.props.iter().filter(|(p, _)| matches!(p, Prop::Sun | Prop::Cloud)) {
                draw_prop(&mut cv, *p, *x, s.time);
            }
            for (p, x) in s.props.iter().filter(|(p, _)| !matches!(p, Prop::Sun | Prop::Cloud)) {
                draw_prop(&mut cv, *p, *x, s.time);
            }
            if let Some(person) = &s.person {
                draw_person(&mut cv, person);
            }
        }
        Content::Pattern(p) => draw_pattern(&mut cv, p),
    }
    cv.into_image()
}

/// Average of a full-resolution mask over the 4x4 pixel cells of the 8x8
/// latent grid.
pub fn downsample_mask(mask: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; 64];
    for y in 0..32 {
        for x in 0..32 {
            out[(y / 4) * 8 + x / 4] += mask[y * 32 + x] / 16.0;
        }
    }
    out
}
