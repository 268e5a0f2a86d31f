use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};

/// One binary silhouette mask, row-major, values exactly 0.0 or 1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteFrame {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl SilhouetteFrame {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(GaitError::param(format!(
                "frame of {height}x{width} needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|&&p| p != 0.0 && p != 1.0) {
            return Err(GaitError::param(format!("non-binary pixel value {bad}")));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn from_mask(height: usize, width: usize, mask: &[bool]) -> Result<Self> {
        Self::new(
            height,
            width,
            mask.iter().map(|&on| if on { 1.0 } else { 0.0 }).collect(),
        )
    }

    pub fn blank(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.pixels[row * self.width + col] == 1.0
    }

    pub fn foreground(&self) -> usize {
        self.pixels.iter().filter(|&&p| p == 1.0).count()
    }
}

/// Walking condition of a sequence: normal, carrying a bag, wearing a coat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "NM")]
    Normal,
    #[serde(rename = "BG")]
    Bag,
    #[serde(rename = "CL")]
    Coat,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Normal, Condition::Bag, Condition::Coat];

    pub fn tag(self) -> &'static str {
        match self {
            Condition::Normal => "NM",
            Condition::Bag => "BG",
            Condition::Coat => "CL",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Condition {
    type Err = GaitError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "NM" => Ok(Condition::Normal),
            "BG" => Ok(Condition::Bag),
            "CL" => Ok(Condition::Coat),
            other => Err(GaitError::param(format!("unknown condition tag {other:?}"))),
        }
    }
}

/// An unordered set of frames for one walk, plus its tags.
#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteSequence {
    pub id: String,
    pub frames: Vec<SilhouetteFrame>,
    /// `None` for unlabeled target data.
    pub identity: Option<String>,
    pub condition: Condition,
    /// Run number within the condition, starting at 1.
    pub run: u32,
    pub view: u32,
    pub domain: String,
}

impl SilhouetteSequence {
    pub fn validate(&self) -> Result<()> {
        let first = self
            .frames
            .first()
            .ok_or_else(|| GaitError::param(format!("sequence {} has no frames", self.id)))?;
        let (h, w) = (first.height(), first.width());
        if self
            .frames
            .iter()
            .any(|f| f.height() != h || f.width() != w)
        {
            return Err(GaitError::param(format!(
                "sequence {} mixes frame sizes",
                self.id
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}
