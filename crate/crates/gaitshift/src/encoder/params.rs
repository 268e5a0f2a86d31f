use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::numerics::Rng;

/// Sizes that fully determine the encoder's parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HyperShape {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub channels: usize,
    pub scales: usize,
    pub dim: usize,
}

impl Default for HyperShape {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            bands: 4,
            channels: 8,
            scales: 2,
            dim: 24,
        }
    }
}

impl HyperShape {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("height", self.height),
            ("width", self.width),
            ("bands", self.bands),
            ("channels", self.channels),
            ("scales", self.scales),
            ("dim", self.dim),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(GaitError::param(format!("hyper-shape {name} must be >= 1")));
        }
        if self.scales > 16 {
            return Err(GaitError::param("at most 16 pyramid scales are supported"));
        }
        if !self.height.is_multiple_of(self.bands) {
            return Err(GaitError::param(format!(
                "height {} not divisible into {} bands",
                self.height, self.bands
            )));
        }
        let finest = 1usize << (self.scales - 1);
        if !self.bands.is_multiple_of(finest) {
            return Err(GaitError::param(format!(
                "{} bands cannot be split into {finest} strips",
                self.bands
            )));
        }
        if !self.dim.is_multiple_of(self.strips()) {
            return Err(GaitError::param(format!(
                "output dim {} not divisible by {} strips",
                self.dim,
                self.strips()
            )));
        }
        Ok(())
    }

    /// Pixels per horizontal band.
    pub fn band_pixels(&self) -> usize {
        (self.height / self.bands) * self.width
    }

    /// Total strips over all pyramid scales: 1 + 2 + ... + 2^(S-1).
    pub fn strips(&self) -> usize {
        (1usize << self.scales) - 1
    }

    pub fn strip_dim(&self) -> usize {
        self.dim / self.strips()
    }

    /// `(first band, band count)` for every strip, coarsest scale first.
    pub fn strip_bands(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.strips());
        for s in 0..self.scales {
            let n = 1usize << s;
            let width = self.bands / n;
            for t in 0..n {
                out.push((t * width, width));
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }
}

/// One named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub name: String,
    pub dims: Vec<usize>,
    pub offset: usize,
    pub len: usize,
    /// `(fan_in, fan_out)` for weight matrices, `None` for biases.
    pub fans: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub slots: Vec<Slot>,
    pub total: usize,
    pub(crate) w1: usize,
    pub(crate) b1: usize,
    pub(crate) w2: usize,
    pub(crate) b2: usize,
    /// `(weight offset, bias offset)` per strip.
    pub(crate) strips: Vec<(usize, usize)>,
}

impl Layout {
    fn new(shape: &HyperShape) -> Self {
        let mut slots = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, dims: Vec<usize>, fans: Option<(usize, usize)>| {
            let len = dims.iter().product();
            slots.push(Slot {
                name,
                dims,
                offset,
                len,
                fans,
            });
            offset += len;
            offset - len
        };
        let (p, c, q) = (shape.band_pixels(), shape.channels, shape.strip_dim());
        let w1 = push("frame.w1".into(), vec![c, p], Some((p, c)));
        let b1 = push("frame.b1".into(), vec![c], None);
        let w2 = push("frame.w2".into(), vec![c, c], Some((c, c)));
        let b2 = push("frame.b2".into(), vec![c], None);
        let mut strips = Vec::new();
        for s in 0..shape.scales {
            for t in 0..(1usize << s) {
                let w = push(format!("hpm.s{}.t{}.w", s + 1, t), vec![q, c], Some((c, q)));
                let b = push(format!("hpm.s{}.t{}.b", s + 1, t), vec![q], None);
                strips.push((w, b));
            }
        }
        Layout {
            slots,
            total: offset,
            w1,
            b1,
            w2,
            b2,
            strips,
        }
    }

    pub fn slot(&self, name: &str) -> Option<&Slot> {
        self.slots.iter().find(|s| s.name == name)
    }
}

/// All learnable encoder parameters in one flat vector, addressed by name
/// through the [`Layout`] derived from the hyper-shape.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    shape: HyperShape,
    layout: Layout,
    values: Vec<f64>,
}

impl EncoderParams {
    pub fn from_values(shape: HyperShape, values: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        let layout = shape.layout();
        if values.len() != layout.total {
            return Err(GaitError::param(format!(
                "expected {} parameter values, got {}",
                layout.total,
                values.len()
            )));
        }
        Ok(Self {
            shape,
            layout,
            values,
        })
    }

    pub fn zeros(shape: HyperShape) -> Result<Self> {
        shape.validate()?;
        Self::from_values(shape, vec![0.0; shape.param_count()])
    }

    pub fn shape(&self) -> &HyperShape {
        &self.shape
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .slot(name)
            .map(|s| &self.values[s.offset..s.offset + s.len])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let slot = self.layout.slot(name)?;
        let (o, l) = (slot.offset, slot.len);
        Some(&mut self.values[o..o + l])
    }

    /// Plain gradient step: `theta -= lr * grad`.
    pub fn sgd_step(&mut self, grads: &ParamGrads, lr: f64) -> Result<()> {
        if grads.values.len() != self.values.len() {
            return Err(GaitError::param(
                "gradient layout does not match parameters",
            ));
        }
        if lr == 0.0 {
            return Ok(());
        }
        for (p, g) in self.values.iter_mut().zip(&grads.values) {
            *p -= lr * g;
        }
        Ok(())
    }
}

/// Gradient with the same flat layout as [`EncoderParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub values: Vec<f64>,
}

impl ParamGrads {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        Self {
            values: vec![0.0; params.len()],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&g| g == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Xavier-uniform weights, zero biases, drawn in layout order.
pub fn init_params(shape: HyperShape, rng: &mut Rng) -> Result<EncoderParams> {
    let mut params = EncoderParams::zeros(shape)?;
    let slots = params.layout.slots.clone();
    for slot in slots {
        if let Some((fan_in, fan_out)) = slot.fans {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut params.values[slot.offset..slot.offset + slot.len] {
                *v = rng.uniform(-a, a);
            }
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent count: layer-by-layer weights + biases.
    fn hand_count(h: usize, w: usize, b: usize, c: usize, s: usize, d: usize) -> usize {
        let pixels = (h / b) * w;
        let frame = pixels * c + c + c * c + c;
        let strips = (1..=s).map(|k| 1usize << (k - 1)).sum::<usize>();
        let q = d / strips;
        frame + strips * (c * q + q)
    }

    #[test]
    fn param_count_matches_hand_count() {
        let shapes = [
            (16, 16, 4, 8, 2, 24),
            (8, 6, 2, 3, 1, 5),
            (32, 8, 16, 4, 5, 62),
        ];
        for (h, w, b, c, s, d) in shapes {
            let shape = HyperShape {
                height: h,
                width: w,
                bands: b,
                channels: c,
                scales: s,
                dim: d,
            };
            shape.validate().unwrap();
            assert_eq!(shape.param_count(), hand_count(h, w, b, c, s, d));
        }
        // 64*8 + 8 + 8*8 + 8 + 3 * (8*8 + 8)
        assert_eq!(HyperShape::default().param_count(), 808);
    }

    #[test]
    fn five_scales_give_31_strips() {
        let shape = HyperShape {
            height: 32,
            width: 8,
            bands: 16,
            channels: 4,
            scales: 5,
            dim: 62,
        };
        shape.validate().unwrap();
        assert_eq!(shape.strips(), 31);
        assert_eq!(shape.strip_bands().len(), 31);
    }

    #[test]
    fn invalid_shapes_rejected() {
        let base = HyperShape::default();
        for bad in [
            HyperShape { bands: 0, ..base },
            HyperShape { bands: 3, ..base },
            HyperShape { dim: 25, ..base },
            HyperShape { scales: 4, ..base },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let shape = HyperShape::default();
        let a = init_params(shape, &mut Rng::new(3)).unwrap();
        let b = init_params(shape, &mut Rng::new(3)).unwrap();
        assert_eq!(a, b);
        for slot in &a.layout().slots {
            let vals = a.tensor(&slot.name).unwrap();
            match slot.fans {
                None => assert!(vals.iter().all(|&v| v == 0.0), "{}", slot.name),
                Some((i, o)) => {
                    let lim = (6.0 / (i + o) as f64).sqrt();
                    assert!(vals.iter().all(|v| v.abs() <= lim));
                    assert!(vals.iter().any(|&v| v != 0.0));
                }
            }
        }
    }

    #[test]
    fn slot_names_are_unique() {
        let layout = HyperShape::default().layout();
        let mut names: Vec<_> = layout.slots.iter().map(|s| s.name.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), layout.slots.len());
    }
}
