//! Division-of-focal-plane mosaics: superpixel extraction of the four
//! polarizer planes, the exact inverse used for synthesis, and color
//! demosaicing for sensors with a Bayer filter over 2×2 polarizer superpixels.
//!
//! Color layout: a 4×4 macro-pixel holds four 2×2 polarizer superpixels; the
//! superpixel at `(sy, sx)` carries color `bayer[sy][sx]`, and inside it the
//! cell `(ay, ax)` carries angle `angles[ay][ax]`. The raw pixel is thus
//! `(4·Y + 2·sy + ay, 4·X + 2·sx + ax)`.

use std::fmt;
use std::str::FromStr;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::polar::{Plane, QuadIntensities, ANGLES_DEG};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BayerColor {
    R,
    G,
    B,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MosaicPattern {
    angles: [[u32; 2]; 2],
    bayer: Option<[[BayerColor; 2]; 2]>,
}

/// Layout of the common commercial polarization sensors.
pub const DEFAULT_ANGLES: [[u32; 2]; 2] = [[90, 45], [135, 0]];
pub const DEFAULT_BAYER: [[BayerColor; 2]; 2] = [
    [BayerColor::R, BayerColor::G],
    [BayerColor::G, BayerColor::B],
];

impl MosaicPattern {
    pub fn new(angles: [[u32; 2]; 2], bayer: Option<[[BayerColor; 2]; 2]>) -> Result<Self> {
        let mut seen = [false; 4];
        for a in angles.iter().flatten() {
            let k = ANGLES_DEG
                .iter()
                .position(|x| x == a)
                .ok_or_else(|| Error::Pattern(format!("unsupported polarizer angle {a}")))?;
            if seen[k] {
                return Err(Error::Pattern(format!(
                    "angle {a} appears twice in the layout"
                )));
            }
            seen[k] = true;
        }
        if let Some(b) = bayer {
            let count = |c| b.iter().flatten().filter(|&&x| x == c).count();
            let diagonal_g = (b[0][0] == BayerColor::G && b[1][1] == BayerColor::G)
                || (b[0][1] == BayerColor::G && b[1][0] == BayerColor::G);
            if count(BayerColor::R) != 1 || count(BayerColor::B) != 1 || !diagonal_g {
                return Err(Error::Pattern(format!(
                    "{} is not a Bayer arrangement (one R, one B, diagonal G pair)",
                    format_bayer(&b)
                )));
            }
        }
        Ok(Self { angles, bayer })
    }

    pub fn mono() -> Self {
        Self {
            angles: DEFAULT_ANGLES,
            bayer: None,
        }
    }

    pub fn color() -> Self {
        Self {
            angles: DEFAULT_ANGLES,
            bayer: Some(DEFAULT_BAYER),
        }
    }

    /// Parses `--angles "90,45;135,0"` and optional `--bayer "RG;GB"` strings.
    pub fn parse(angles: &str, bayer: Option<&str>) -> Result<Self> {
        let angles = parse_grid(angles, |s| {
            s.trim()
                .parse::<u32>()
                .map_err(|_| Error::Pattern(format!("bad angle `{s}`")))
        })?;
        let bayer = match bayer {
            None => None,
            Some(text) => {
                let rows: Vec<&str> = text.split(';').map(str::trim).collect();
                if rows.len() != 2 || rows.iter().any(|r| r.chars().count() != 2) {
                    return Err(Error::Pattern(format!(
                        "bayer layout `{text}` must look like `RG;GB`"
                    )));
                }
                let mut grid = [[BayerColor::G; 2]; 2];
                for (y, row) in rows.iter().enumerate() {
                    for (x, ch) in row.chars().enumerate() {
                        grid[y][x] = match ch.to_ascii_uppercase() {
                            'R' => BayerColor::R,
                            'G' => BayerColor::G,
                            'B' => BayerColor::B,
                            other => {
                                return Err(Error::Pattern(format!(
                                    "unknown bayer color `{other}`"
                                )))
                            }
                        };
                    }
                }
                Some(grid)
            }
        };
        Self::new(angles, bayer)
    }

    pub fn angles(&self) -> [[u32; 2]; 2] {
        self.angles
    }

    pub fn bayer(&self) -> Option<[[BayerColor; 2]; 2]> {
        self.bayer
    }

    pub fn is_color(&self) -> bool {
        self.bayer.is_some()
    }

    /// Tiling period of the full pattern (2 for monochrome, 4 for color).
    pub fn period(&self) -> usize {
        if self.is_color() {
            4
        } else {
            2
        }
    }

    /// Cell offsets `(dy, dx)` of each angle in 0°, 45°, 90°, 135° order.
    pub fn angle_offsets(&self) -> [(usize, usize); 4] {
        let mut out = [(0, 0); 4];
        for (y, row) in self.angles.iter().enumerate() {
            for (x, a) in row.iter().enumerate() {
                let k = ANGLES_DEG
                    .iter()
                    .position(|v| v == a)
                    .expect("validated layout");
                out[k] = (y, x);
            }
        }
        out
    }

    /// Superpixel offsets of R, the two G cells (row-major order) and B.
    fn color_offsets(&self) -> Option<[(usize, usize); 4]> {
        let b = self.bayer?;
        let mut r = (0, 0);
        let mut blue = (0, 0);
        let mut greens = Vec::with_capacity(2);
        for (y, row) in b.iter().enumerate() {
            for (x, c) in row.iter().enumerate() {
                match c {
                    BayerColor::R => r = (y, x),
                    BayerColor::B => blue = (y, x),
                    BayerColor::G => greens.push((y, x)),
                }
            }
        }
        Some([r, greens[0], greens[1], blue])
    }
}

impl Default for MosaicPattern {
    fn default() -> Self {
        Self::mono()
    }
}

fn parse_grid<V: Copy + Default>(text: &str, f: impl Fn(&str) -> Result<V>) -> Result<[[V; 2]; 2]> {
    let rows: Vec<&str> = text.split(';').collect();
    if rows.len() != 2 {
        return Err(Error::Pattern(format!(
            "layout `{text}` must have two `;`-separated rows"
        )));
    }
    let mut grid = [[V::default(); 2]; 2];
    for (y, row) in rows.iter().enumerate() {
        let cells: Vec<&str> = row.split(',').collect();
        if cells.len() != 2 {
            return Err(Error::Pattern(format!(
                "layout row `{row}` must have two cells"
            )));
        }
        for (x, cell) in cells.iter().enumerate() {
            grid[y][x] = f(cell)?;
        }
    }
    Ok(grid)
}

fn format_bayer(b: &[[BayerColor; 2]; 2]) -> String {
    let ch = |c: &BayerColor| match c {
        BayerColor::R => 'R',
        BayerColor::G => 'G',
        BayerColor::B => 'B',
    };
    format!(
        "{}{};{}{}",
        ch(&b[0][0]),
        ch(&b[0][1]),
        ch(&b[1][0]),
        ch(&b[1][1])
    )
}

impl fmt::Display for MosaicPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = self.angles;
        write!(f, "{},{};{},{}", a[0][0], a[0][1], a[1][0], a[1][1])?;
        match &self.bayer {
            Some(b) => write!(f, " {}", format_bayer(b)),
            None => Ok(()),
        }
    }
}

impl FromStr for MosaicPattern {
    type Err = Error;

    /// `"90,45;135,0"` or `"90,45;135,0 RG;GB"`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split_whitespace();
        let angles = parts
            .next()
            .ok_or_else(|| Error::Pattern("empty pattern".into()))?;
        let bayer = parts.next();
        if let Some(extra) = parts.next() {
            return Err(Error::Pattern(format!(
                "unexpected `{extra}` after the pattern"
            )));
        }
        Self::parse(angles, bayer)
    }
}

/// A raw single-plane sensor frame and the pattern it was captured with.
#[derive(Clone, Debug, PartialEq)]
pub struct MosaicFrame<T = f32> {
    data: Plane<T>,
    pattern: MosaicPattern,
}

impl<T: Float> MosaicFrame<T> {
    pub fn new(data: Plane<T>, pattern: MosaicPattern) -> Result<Self> {
        if data.channels() != 1 {
            return Err(Error::shape(format!(
                "a mosaic frame is a single plane, got {} channels",
                data.channels()
            )));
        }
        let p = pattern.period();
        if !data.height().is_multiple_of(p) || !data.width().is_multiple_of(p) {
            return Err(Error::shape(format!(
                "mosaic of {}x{} is not divisible by the pattern period {p}",
                data.height(),
                data.width()
            )));
        }
        Ok(Self { data, pattern })
    }

    pub fn data(&self) -> &Plane<T> {
        &self.data
    }

    pub fn pattern(&self) -> &MosaicPattern {
        &self.pattern
    }

    pub fn into_parts(self) -> (Plane<T>, MosaicPattern) {
        (self.data, self.pattern)
    }
}

/// Splits a monochrome mosaic into four quarter-area angle planes.
pub fn split_quad<T: Float>(frame: &MosaicFrame<T>) -> Result<QuadIntensities<T>> {
    if frame.pattern.is_color() {
        return Err(Error::Pattern(
            "split_quad needs a monochrome frame; use demosaic_color".into(),
        ));
    }
    let src = &frame.data;
    let (h, w) = (src.height() / 2, src.width() / 2);
    let planes = frame.pattern.angle_offsets().map(|(dy, dx)| {
        let mut p = Plane::zeros(1, h, w);
        for y in 0..h {
            for x in 0..w {
                p.set(0, y, x, src.get(0, 2 * y + dy, 2 * x + dx));
            }
        }
        p
    });
    QuadIntensities::from_planes(planes)
}

/// Inverse of [`split_quad`] (monochrome) and of [`demosaic_color`] for
/// trichromatic quads; G values are written to both G cells.
pub fn merge_quad<T: Float>(
    quad: &QuadIntensities<T>,
    pattern: &MosaicPattern,
) -> Result<MosaicFrame<T>> {
    let (c, h, w) = quad.dims();
    let offsets = pattern.angle_offsets();
    match (c, pattern.color_offsets()) {
        (1, None) => {
            let mut out = Plane::zeros(1, 2 * h, 2 * w);
            for (plane, (dy, dx)) in quad.planes().into_iter().zip(offsets) {
                for y in 0..h {
                    for x in 0..w {
                        out.set(0, 2 * y + dy, 2 * x + dx, plane.get(0, y, x));
                    }
                }
            }
            MosaicFrame::new(out, pattern.clone())
        }
        (3, Some(colors)) => {
            let mut out = Plane::zeros(1, 4 * h, 4 * w);
            // color cells R, G, G, B read channels 0, 1, 1, 2
            let channel_of = [0, 1, 1, 2];
            for (plane, (ay, ax)) in quad.planes().into_iter().zip(offsets) {
                for ((sy, sx), ch) in colors.iter().zip(channel_of) {
                    for y in 0..h {
                        for x in 0..w {
                            out.set(
                                0,
                                4 * y + 2 * sy + ay,
                                4 * x + 2 * sx + ax,
                                plane.get(ch, y, x),
                            );
                        }
                    }
                }
            }
            MosaicFrame::new(out, pattern.clone())
        }
        (3, None) => Err(Error::Pattern(
            "trichromatic quad needs a pattern with a bayer layout".into(),
        )),
        (1, Some(_)) => Err(Error::Pattern(
            "monochrome quad cannot be merged into a color pattern".into(),
        )),
        (c, _) => Err(Error::shape(format!(
            "quad has {c} channels, expected 1 or 3"
        ))),
    }
}

/// Superpixel demosaicing of a color polarization mosaic into a trichromatic
/// quad at quarter resolution per axis. G is the mean of the two G cells.
pub fn demosaic_color<T: Float>(frame: &MosaicFrame<T>) -> Result<QuadIntensities<T>> {
    let colors = frame
        .pattern
        .color_offsets()
        .ok_or_else(|| Error::Pattern("demosaic_color needs a bayer layout".into()))?;
    let src = &frame.data;
    let (h, w) = (src.height() / 4, src.width() / 4);
    let half = T::from(0.5).expect("float constant");
    let [(ry, rx), (g1y, g1x), (g2y, g2x), (by, bx)] = colors;
    let planes = frame.pattern.angle_offsets().map(|(ay, ax)| {
        let mut p = Plane::zeros(3, h, w);
        for y in 0..h {
            for x in 0..w {
                let at =
                    |sy: usize, sx: usize| src.get(0, 4 * y + 2 * sy + ay, 4 * x + 2 * sx + ax);
                p.set(0, y, x, at(ry, rx));
                p.set(1, y, x, (at(g1y, g1x) + at(g2y, g2x)) * half);
                p.set(2, y, x, at(by, bx));
            }
        }
        p
    });
    QuadIntensities::from_planes(planes)
}

/// Dispatches to [`split_quad`] or [`demosaic_color`] by pattern.
pub fn extract_quad<T: Float>(frame: &MosaicFrame<T>) -> Result<QuadIntensities<T>> {
    if frame.pattern.is_color() {
        demosaic_color(frame)
    } else {
        split_quad(frame)
    }
}
