//! Tiling sampled frames into one numbered prompt image.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::codecs::jpeg::JpegEncoder;
use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text;

/// Default longest side of the composed canvas, in pixels.
pub const DEFAULT_CANVAS_PX: u32 = 2048;
/// JPEG quality used for images sent to a model.
pub const PAYLOAD_JPEG_QUALITY: u8 = 85;

const CIRCLE_DIAMETER_FRAC: f64 = 0.12;
const CORNER_INSET_FRAC: f64 = 0.02;
const SPACING_FRAC: f64 = 0.02;
const CIRCLE_FILL: Rgb<u8> = Rgb([24, 24, 24]);
const LABEL_INK: Rgb<u8> = Rgb([255, 255, 255]);
const LETTERBOX_FILL: Rgb<u8> = Rgb([0, 0, 0]);
const SPACING_FILL: Rgb<u8> = Rgb([255, 255, 255]);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationStyle {
    CornerCircle,
    CenterCircle,
}

/// Named rendering presets: `original` (corner labels, no gaps), `center`
/// (labels in the middle of each cell) and `spacing` (corner labels with a
/// gutter between cells).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStyle {
    Original,
    Center,
    Spacing,
}

impl PromptStyle {
    pub const ALL: [PromptStyle; 3] = [PromptStyle::Original, PromptStyle::Center, PromptStyle::Spacing];

    pub fn annotation(self) -> AnnotationStyle {
        match self {
            PromptStyle::Center => AnnotationStyle::CenterCircle,
            PromptStyle::Original | PromptStyle::Spacing => AnnotationStyle::CornerCircle,
        }
    }
}

impl fmt::Display for PromptStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptStyle::Original => "original",
            PromptStyle::Center => "center",
            PromptStyle::Spacing => "spacing",
        })
    }
}

impl FromStr for PromptStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "original" => Ok(PromptStyle::Original),
            "center" | "centre" => Ok(PromptStyle::Center),
            "spacing" => Ok(PromptStyle::Spacing),
            other => Err(Error::Config(format!(
                "unknown style `{other}` (expected original, center or spacing)"
            ))),
        }
    }
}

/// Grid shape `rows x cols`, parsed from strings like `5x5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GridShape {
    pub rows: u32,
    pub cols: u32,
}

impl GridShape {
    pub fn new(rows: u32, cols: u32) -> Self {
        Self { rows, cols }
    }

    pub fn cells(self) -> usize {
        (self.rows * self.cols) as usize
    }
}

impl fmt::Display for GridShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl FromStr for GridShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad grid size `{s}` (expected e.g. 5x5)"));
        let (r, c) = s.trim().split_once(['x', 'X']).ok_or_else(bad)?;
        let rows: u32 = r.trim().parse().map_err(|_| bad())?;
        let cols: u32 = c.trim().parse().map_err(|_| bad())?;
        if rows == 0 || cols == 0 {
            return Err(bad());
        }
        Ok(Self { rows, cols })
    }
}

impl TryFrom<String> for GridShape {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<GridShape> for String {
    fn from(g: GridShape) -> String {
        g.to_string()
    }
}

/// Full pixel geometry of a grid image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: u32,
    pub cols: u32,
    pub cell_w: u32,
    pub cell_h: u32,
    pub annotation_style: AnnotationStyle,
    pub spacing_px: u32,
}

impl GridSpec {
    pub fn new(
        shape: GridShape,
        cell_px: (u32, u32),
        annotation_style: AnnotationStyle,
        spacing_px: u32,
    ) -> Result<Self> {
        let spec = Self {
            rows: shape.rows,
            cols: shape.cols,
            cell_w: cell_px.0,
            cell_h: cell_px.1,
            annotation_style,
            spacing_px,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Derives cell size so the canvas's longest side is at most `canvas_px`
    /// while cells keep the frames' aspect ratio.
    pub fn fit(shape: GridShape, style: PromptStyle, canvas_px: u32, frame_size: (u32, u32)) -> Result<Self> {
        if frame_size.0 == 0 || frame_size.1 == 0 {
            return Err(Error::Spec("frame size is zero".into()));
        }
        let aspect = frame_size.0 as f64 / frame_size.1 as f64;
        let (rows, cols) = (shape.rows as f64, shape.cols as f64);
        let canvas = canvas_px as f64;

        let cell_w_for = |sp: f64| {
            let by_width = (canvas - (cols - 1.0) * sp) / cols;
            let by_height = (canvas - (rows - 1.0) * sp) / rows * aspect;
            by_width.min(by_height).floor()
        };

        let mut spacing = 0.0;
        let mut cell_w = cell_w_for(0.0);
        if style == PromptStyle::Spacing {
            spacing = (SPACING_FRAC * cell_w).round().max(1.0);
            cell_w = cell_w_for(spacing);
        }
        let mut cell_h = (cell_w / aspect).floor();
        // Rounding can overshoot on the height axis for tall frames.
        while rows * cell_h + (rows - 1.0) * spacing > canvas && cell_h > 1.0 {
            cell_h -= 1.0;
        }
        if cell_w < 1.0 || cell_h < 1.0 {
            return Err(Error::Spec(format!(
                "a {canvas_px}px canvas cannot hold a {shape} grid"
            )));
        }
        Self::new(shape, (cell_w as u32, cell_h as u32), style.annotation(), spacing as u32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Spec(format!("grid {}x{} has no cells", self.rows, self.cols)));
        }
        if self.cell_w == 0 || self.cell_h == 0 {
            return Err(Error::Spec(format!("cell {}x{} px is empty", self.cell_w, self.cell_h)));
        }
        Ok(())
    }

    pub fn shape(&self) -> GridShape {
        GridShape::new(self.rows, self.cols)
    }

    pub fn cells(&self) -> usize {
        (self.rows * self.cols) as usize
    }

    pub fn output_px(&self) -> (u32, u32) {
        (
            self.cols * self.cell_w + (self.cols - 1) * self.spacing_px,
            self.rows * self.cell_h + (self.rows - 1) * self.spacing_px,
        )
    }

    /// Top-left pixel of the cell holding `label` (1-based, row-major).
    pub fn cell_origin(&self, label: u32) -> (u32, u32) {
        let i = label - 1;
        let (r, c) = (i / self.cols, i % self.cols);
        (
            c * (self.cell_w + self.spacing_px),
            r * (self.cell_h + self.spacing_px),
        )
    }
}

/// Bijection from grid labels `1..=N` to the timestamps they show.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "BTreeMap<u32, f64>", try_from = "BTreeMap<u32, f64>")]
pub struct LabelMap(Vec<f64>);

impl LabelMap {
    /// `times` must be strictly increasing and non-empty.
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Validation("label map is empty".into()));
        }
        if let Some(i) = times.windows(2).position(|w| !(w[0] < w[1])) {
            return Err(Error::Validation(format!(
                "timestamps not strictly increasing at label {}",
                i + 2
            )));
        }
        Ok(Self(times))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn time_of(&self, label: u32) -> Option<f64> {
        (label as usize).checked_sub(1).and_then(|i| self.0.get(i).copied())
    }

    pub fn contains(&self, label: u32) -> bool {
        label >= 1 && label as usize <= self.0.len()
    }

    pub fn labels(&self) -> impl Iterator<Item = u32> + '_ {
        1..=self.0.len() as u32
    }

    pub fn times(&self) -> &[f64] {
        &self.0
    }

    /// Middle label, used when a model never gives a usable answer.
    pub fn center_label(&self) -> u32 {
        (self.0.len() as u32 + 1) / 2
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.0.iter().enumerate().map(|(i, t)| (i as u32 + 1, *t))
    }
}

impl From<LabelMap> for BTreeMap<u32, f64> {
    fn from(m: LabelMap) -> Self {
        m.iter().collect()
    }
}

impl TryFrom<BTreeMap<u32, f64>> for LabelMap {
    type Error = Error;

    fn try_from(map: BTreeMap<u32, f64>) -> Result<Self> {
        if map.keys().copied().ne(1..=map.len() as u32) {
            return Err(Error::Validation("label map keys must be 1..N".into()));
        }
        LabelMap::new(map.into_values().collect())
    }
}

/// A composed prompt image and what each label in it points to.
#[derive(Debug, Clone)]
pub struct FrameGrid {
    pub image: RgbImage,
    pub label_map: LabelMap,
    pub spec: GridSpec,
}

impl FrameGrid {
    pub fn to_jpeg(&self, quality: u8) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        JpegEncoder::new_with_quality(Cursor::new(&mut buf), quality).encode_image(&self.image)?;
        Ok(buf)
    }
}

/// Lays `frames` out row-major, letterboxed into equal cells, and stamps
/// each cell with its 1-based label.
pub fn compose_grid(frames: &[(RgbImage, f64)], spec: &GridSpec) -> Result<FrameGrid> {
    spec.validate()?;
    if frames.len() != spec.cells() {
        return Err(Error::Arity {
            what: "frames for grid",
            expected: spec.cells(),
            got: frames.len(),
        });
    }
    let label_map = LabelMap::new(frames.iter().map(|(_, t)| *t).collect())?;

    let (w, h) = spec.output_px();
    let fill = if spec.spacing_px > 0 { SPACING_FILL } else { LETTERBOX_FILL };
    let mut canvas = RgbImage::from_pixel(w, h, fill);

    for (label, (frame, _)) in (1u32..).zip(frames) {
        let (x0, y0) = spec.cell_origin(label);
        if spec.spacing_px > 0 {
            let pad = RgbImage::from_pixel(spec.cell_w, spec.cell_h, LETTERBOX_FILL);
            imageops::replace(&mut canvas, &pad, x0 as i64, y0 as i64);
        }
        let fitted = letterbox(frame, spec.cell_w, spec.cell_h);
        let ox = x0 + (spec.cell_w - fitted.width()) / 2;
        let oy = y0 + (spec.cell_h - fitted.height()) / 2;
        imageops::replace(&mut canvas, &fitted, ox as i64, oy as i64);
        stamp_label(&mut canvas, spec, x0, y0, label);
    }

    Ok(FrameGrid {
        image: canvas,
        label_map,
        spec: *spec,
    })
}

fn letterbox(frame: &RgbImage, cell_w: u32, cell_h: u32) -> RgbImage {
    let (fw, fh) = frame.dimensions();
    if (fw, fh) == (cell_w, cell_h) {
        return frame.clone();
    }
    let scale = (cell_w as f64 / fw as f64).min(cell_h as f64 / fh as f64);
    let nw = ((fw as f64 * scale).round() as u32).clamp(1, cell_w);
    let nh = ((fh as f64 * scale).round() as u32).clamp(1, cell_h);
    imageops::resize(frame, nw, nh, FilterType::Triangle)
}

fn stamp_label(canvas: &mut RgbImage, spec: &GridSpec, x0: u32, y0: u32, label: u32) {
    let (cw, ch) = (spec.cell_w as f64, spec.cell_h as f64);
    let diameter = (CIRCLE_DIAMETER_FRAC * ch).round().max(3.0);
    let (cx, cy) = match spec.annotation_style {
        AnnotationStyle::CornerCircle => (
            x0 as f64 + (CORNER_INSET_FRAC * cw).round() + diameter / 2.0,
            y0 as f64 + (CORNER_INSET_FRAC * ch).round() + diameter / 2.0,
        ),
        AnnotationStyle::CenterCircle => (x0 as f64 + cw / 2.0, y0 as f64 + ch / 2.0),
    };
    text::fill_circle(canvas, cx, cy, diameter, CIRCLE_FILL);

    let digits = label.to_string();
    let fit = (0.75 * diameter) / (text::GLYPH_PX as f64 * digits.len() as f64);
    let scale = fit.floor().max(1.0) as u32;
    let (tw, th) = text::text_size(&digits, scale);
    text::draw_text(
        canvas,
        (cx - tw as f64 / 2.0).round() as i64,
        (cy - th as f64 / 2.0).round() as i64,
        scale,
        LABEL_INK,
        &digits,
    );
}

#[derive(Serialize, Deserialize)]
struct DebugSidecar {
    spec: GridSpec,
    label_map: LabelMap,
}

/// Writes the grid as `<path>.png` plus a `<path>.json` label-map sidecar and
/// returns both paths.
pub fn render_debug(grid: &FrameGrid, path: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
    let png = path.as_ref().with_extension("png");
    let json = path.as_ref().with_extension("json");
    if let Some(parent) = png.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    grid.image
        .save_with_format(&png, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(&png, io),
            other => other.into(),
        })?;
    let sidecar = DebugSidecar {
        spec: grid.spec,
        label_map: grid.label_map.clone(),
    };
    fs::write(&json, serde_json::to_string_pretty(&sidecar)? + "\n").map_err(|e| Error::io(&json, e))?;
    Ok((png, json))
}

/// Reads the label map back from a sidecar written by [`render_debug`].
pub fn read_debug_sidecar(path: impl AsRef<Path>) -> Result<(GridSpec, LabelMap)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let sidecar: DebugSidecar = serde_json::from_str(&text)?;
    Ok((sidecar.spec, sidecar.label_map))
}
