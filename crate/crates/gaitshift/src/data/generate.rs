//! Synthetic walking silhouettes.
//!
//! Each identity is a latent body shape (torso ellipse, head, two legs and
//! a gait stride). A frame renders the body at one phase of the gait cycle,
//! projected for the camera view, then the domain's style is applied:
//! limb dilation or erosion, global scale and shear, and salt-and-pepper
//! noise. The domain's gait period and frame resampling rate decide how
//! the phase advances between frames.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{Condition, SilhouetteFrame, SilhouetteSequence};
use crate::error::{GaitError, Result};
use crate::numerics::Rng;

/// Appearance and timing of one synthetic domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub name: String,
    pub height: usize,
    pub width: usize,
    /// Frames per sequence.
    pub frames: usize,
    /// Frames per gait cycle.
    pub period: f64,
    /// Random start-phase range, as a fraction of a cycle.
    pub phase_jitter: f64,
    /// Phase step multiplier; 1.0 samples every frame of the cycle.
    pub resample: f64,
    /// Added to every body half-width, in nominal pixels. Negative erodes.
    pub dilation: f64,
    /// Per-pixel flip probability after binarization.
    pub noise: f64,
    pub scale: f64,
    pub shear: f64,
    /// Camera azimuths in degrees; 90 is a side view.
    pub views: Vec<u32>,
    /// Runs per identity and view for each condition.
    pub runs: BTreeMap<Condition, u32>,
    pub train_identities: usize,
    pub test_identities: usize,
    /// Width of the identity shape distribution; 1.0 spans the full ranges.
    pub identity_spread: f64,
    /// Maximum random horizontal offset of the walker, nominal pixels.
    pub position_jitter: f64,
}

impl DomainSpec {
    /// Default source-like domain.
    pub fn source() -> Self {
        Self {
            name: "source".into(),
            height: 16,
            width: 16,
            frames: 12,
            period: 8.0,
            phase_jitter: 0.15,
            resample: 1.0,
            dilation: 0.0,
            noise: 0.0,
            scale: 1.0,
            shear: 0.0,
            views: vec![54, 90, 126],
            runs: BTreeMap::from([
                (Condition::Normal, 4),
                (Condition::Bag, 1),
                (Condition::Coat, 1),
            ]),
            train_identities: 20,
            test_identities: 10,
            identity_spread: 1.0,
            position_jitter: 0.5,
        }
    }

    /// Default target domain: slower rhythm, thicker and sheared silhouettes,
    /// light noise, and twice the test identities of the source.
    pub fn target() -> Self {
        Self {
            name: "target".into(),
            period: 12.0,
            resample: 1.0,
            dilation: 0.45,
            noise: 0.01,
            scale: 0.92,
            shear: 0.18,
            test_identities: 20,
            ..Self::source()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GaitError::param(format!("domain {}: {m}", self.name)));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad("name must be a non-empty path segment".into());
        }
        if self.height < 4 || self.width < 4 {
            return bad(format!(
                "frame size {}x{} too small",
                self.height, self.width
            ));
        }
        if self.frames == 0 {
            return bad("frames must be >= 1".into());
        }
        if !(0.0..0.5).contains(&self.noise) {
            return bad(format!("noise rate {} outside [0, 0.5)", self.noise));
        }
        if !(self.period >= 4.0) {
            return bad(format!("gait period {} below 4 frames", self.period));
        }
        if !(self.scale > 0.0) || !(self.resample > 0.0) {
            return bad("scale and resample must be > 0".into());
        }
        if self.views.is_empty() || self.runs.values().all(|&r| r == 0) {
            return bad("needs at least one view and one run".into());
        }
        if self.train_identities + self.test_identities == 0 {
            return bad("needs at least one identity".into());
        }
        if !(0.0..=1.0).contains(&self.identity_spread) {
            return bad("identity_spread must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Latent body shape of one walker, in nominal 16-pixel-high units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyShape {
    pub torso_half_height: f64,
    pub torso_half_width: f64,
    pub torso_half_depth: f64,
    pub head_radius: f64,
    pub leg_length: f64,
    pub leg_width: f64,
    pub hip_half_width: f64,
    /// Peak leg swing, radians.
    pub stride: f64,
}

impl BodyShape {
    /// Draws each attribute uniformly from `mid +- spread * half_range`.
    pub fn sample(rng: &mut Rng, spread: f64) -> Self {
        let mut draw = |lo: f64, hi: f64| {
            let mid = 0.5 * (lo + hi);
            mid + spread * (hi - lo) * (rng.next_f64() - 0.5)
        };
        Self {
            torso_half_height: draw(1.9, 3.3),
            torso_half_width: draw(0.9, 2.2),
            torso_half_depth: draw(0.8, 1.8),
            head_radius: draw(0.9, 1.6),
            leg_length: draw(4.5, 7.0),
            leg_width: draw(0.8, 1.7),
            hip_half_width: draw(0.4, 1.1),
            stride: draw(0.25, 0.65),
        }
    }
}

fn segment_distance(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Binary mask of one body pose, before noise.
fn render_pose(
    body: &BodyShape,
    condition: Condition,
    view_deg: u32,
    phase: f64,
    offset: f64,
    spec: &DomainSpec,
) -> Vec<bool> {
    let (h, w) = (spec.height, spec.width);
    let unit = h as f64 / 16.0;
    let view = (view_deg as f64).to_radians();
    let (side, front) = (view.sin().abs(), view.cos().abs());
    // walking direction flips beyond the side view
    let facing = if view_deg > 90 { -1.0 } else { 1.0 };
    let dil = spec.dilation;

    let cx = 8.0 + offset;
    let bob = 0.25 * (2.0 * phase).cos();
    let hip_y = 15.2 - body.leg_length + bob;
    let coat = condition == Condition::Coat;
    let torso_a = (body.torso_half_width * front + body.torso_half_depth * side)
        * if coat { 1.35 } else { 1.0 }
        + dil;
    let torso_b = body.torso_half_height * if coat { 1.2 } else { 1.0 } + dil;
    let torso_cy = hip_y - body.torso_half_height + if coat { 0.5 } else { 0.0 };
    let head_cy = hip_y - 2.0 * body.torso_half_height - body.head_radius * 0.9;
    let head_r = body.head_radius + dil;
    let leg_r = 0.5 * body.leg_width + dil;
    let swing = body.stride * phase.sin();
    let legs = [
        (cx - body.hip_half_width * front, swing),
        (cx + body.hip_half_width * front, -swing),
    ];
    let bag = (condition == Condition::Bag).then(|| {
        let r = 1.1 + 0.5 * dil;
        (
            cx + facing * (torso_a + 0.6),
            hip_y - 0.3 * body.torso_half_height,
            r,
        )
    });

    let (cx0, cy0) = (w as f64 / 2.0, h as f64 / 2.0);
    let mut mask = vec![false; h * w];
    for row in 0..h {
        for col in 0..w {
            // pixel centre back to nominal body coordinates
            let (px, py) = (col as f64 + 0.5, row as f64 + 0.5);
            let y = (py - cy0) / spec.scale + cy0;
            let x = (px - cx0 - spec.shear * (py - cy0)) / spec.scale + cx0;
            let (x, y) = (x / unit, y / unit);

            let in_torso = ((x - cx) / torso_a).powi(2) + ((y - torso_cy) / torso_b).powi(2) <= 1.0;
            let in_head = (x - cx).powi(2) + (y - head_cy).powi(2) <= head_r * head_r;
            let in_leg = legs.iter().any(|&(hx, angle)| {
                let fx = hx + facing * side * body.leg_length * angle.sin();
                let fy = hip_y + body.leg_length * angle.cos();
                segment_distance(x, y, hx, hip_y, fx, fy) <= leg_r
            });
            let in_bag =
                bag.is_some_and(|(bx, by, r)| (x - bx).powi(2) + (y - by).powi(2) <= r * r);
            mask[row * w + col] = in_torso || in_head || in_leg || in_bag;
        }
    }
    mask
}

/// Renders one walk of `frames` frames.
pub fn render_sequence(
    body: &BodyShape,
    condition: Condition,
    view_deg: u32,
    spec: &DomainSpec,
    rng: &mut Rng,
) -> Result<Vec<SilhouetteFrame>> {
    let start = TAU * spec.phase_jitter * rng.next_f64();
    let offset = spec.position_jitter * (2.0 * rng.next_f64() - 1.0);
    let step = TAU * spec.resample / spec.period;
    (0..spec.frames)
        .map(|k| {
            let mut mask = render_pose(
                body,
                condition,
                view_deg,
                start + step * k as f64,
                offset,
                spec,
            );
            if spec.noise > 0.0 {
                for px in &mut mask {
                    if rng.bernoulli(spec.noise) {
                        *px = !*px;
                    }
                }
            }
            if !mask.iter().any(|&p| p) {
                mask[(spec.height / 2) * spec.width + spec.width / 2] = true;
            }
            SilhouetteFrame::from_mask(spec.height, spec.width, &mask)
        })
        .collect()
}

/// Where a generated sequence belongs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Identity labels and shapes for a domain: train identities first, then
/// test identities.
pub fn sample_identities(spec: &DomainSpec, seed: u64) -> Vec<(String, Split, BodyShape)> {
    let mut rng = Rng::derived(seed, 0);
    (0..spec.train_identities + spec.test_identities)
        .map(|i| {
            let split = if i < spec.train_identities {
                Split::Train
            } else {
                Split::Test
            };
            let body = BodyShape::sample(&mut rng, spec.identity_spread);
            (format!("{}-{:03}", spec.name, i + 1), split, body)
        })
        .collect()
}

/// A generated sequence with its split.
#[derive(Debug, Clone)]
pub struct GeneratedSequence {
    pub split: Split,
    pub sequence: SilhouetteSequence,
}

/// Renders the whole domain in memory. Every sequence draws from its own
/// derived stream, so output does not depend on thread scheduling.
pub fn render_domain(spec: &DomainSpec, seed: u64) -> Result<Vec<GeneratedSequence>> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for (label, split, body) in sample_identities(spec, seed) {
        for (&condition, &runs) in &spec.runs {
            for run in 1..=runs {
                for &view in &spec.views {
                    jobs.push((label.clone(), split, body, condition, run, view));
                }
            }
        }
    }
    jobs.into_par_iter()
        .enumerate()
        .map(|(i, (label, split, body, condition, run, view))| {
            let mut rng = Rng::derived(seed, 1 + i as u64);
            let frames = render_sequence(&body, condition, view, spec, &mut rng)?;
            Ok(GeneratedSequence {
                split,
                sequence: SilhouetteSequence {
                    id: format!("{label}/{condition}-{run:02}/{view:03}"),
                    frames,
                    identity: Some(label),
                    condition,
                    run,
                    view,
                    domain: spec.name.clone(),
                },
            })
        })
        .collect()
}
