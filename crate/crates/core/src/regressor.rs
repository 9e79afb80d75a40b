//! Offset/presence regressor: a shared one-hidden-layer trunk over object
//! feature vectors with parallel per-part-class offset heads (4 outputs) and
//! presence heads (1 output), trained with smooth-L1 plus logistic log loss.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::OffsetVector;

/// One offset/presence head pair for a single mode of a part class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeHead {
    /// 4 x H, row-major.
    pub offset_w: Vec<f64>,
    pub offset_b: [f64; 4],
    /// H weights.
    pub presence_w: Vec<f64>,
    pub presence_b: f64,
    /// Heads for modes beyond the class's mode count stay inactive: they are
    /// never evaluated and never receive gradient.
    pub active: bool,
}

impl ModeHead {
    pub fn zeros(hidden_dim: usize, active: bool) -> Self {
        Self {
            offset_w: vec![0.0; 4 * hidden_dim],
            offset_b: [0.0; 4],
            presence_w: vec![0.0; hidden_dim],
            presence_b: 0.0,
            active,
        }
    }
}

/// Heads for one part class: `mode_count` active heads followed by padding up
/// to the network-wide maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassHeads {
    pub mode_count: usize,
    pub modes: Vec<ModeHead>,
}

/// Full parameter set: shared trunk plus per-class head banks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// H x D, row-major.
    pub trunk_w: Vec<f64>,
    pub trunk_b: Vec<f64>,
    pub classes: Vec<ClassHeads>,
}

/// Training target for one object sample and one part class: the sample's
/// feature vector and, per mode, the target offset when that mode is present.
/// An absent mode carries presence label -1 and contributes no offset term.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeTarget {
    pub feature: Vec<f64>,
    pub modes: Vec<Option<OffsetVector>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegressorError {
    DimensionMismatch { expected: usize, got: usize },
    UnknownClass { class: usize },
}

impl core::fmt::Display for RegressorError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            RegressorError::DimensionMismatch { expected, got } => {
                write!(f, "feature dimension mismatch: expected {expected}, got {got}")
            }
            RegressorError::UnknownClass { class } => write!(f, "unknown part class id {class}"),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// log(1 + e^{-c x}), evaluated without overflow.
fn logistic_loss(x: f64, c: f64) -> f64 {
    let z = -c * x;
    if z > 0.0 {
        z + libm::log1p(libm::exp(-z))
    } else {
        libm::log1p(libm::exp(z))
    }
}

fn smooth_l1(r: f64) -> f64 {
    let a = r.abs();
    if a < 1.0 {
        0.5 * r * r
    } else {
        a - 0.5
    }
}

fn smooth_l1_grad(r: f64) -> f64 {
    if r.abs() < 1.0 {
        r
    } else if r > 0.0 {
        1.0
    } else {
        -1.0
    }
}

impl RegressorParams {
    /// All-zero parameters with the given per-class mode counts. The number of
    /// padded heads per class is the maximum mode count over all classes.
    pub fn zeros(input_dim: usize, hidden_dim: usize, mode_counts: &[usize]) -> Self {
        let max_modes = mode_counts.iter().copied().max().unwrap_or(0);
        let classes = mode_counts
            .iter()
            .map(|&m| ClassHeads {
                mode_count: m,
                modes: (0..max_modes).map(|i| ModeHead::zeros(hidden_dim, i < m)).collect(),
            })
            .collect();
        Self {
            input_dim,
            hidden_dim,
            trunk_w: vec![0.0; hidden_dim * input_dim],
            trunk_b: vec![0.0; hidden_dim],
            classes,
        }
    }

    pub fn max_modes(&self) -> usize {
        self.classes.iter().map(|c| c.mode_count).max().unwrap_or(0)
    }

    /// Flattens every parameter (including inactive heads) into one vector.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.trunk_w);
        out.extend_from_slice(&self.trunk_b);
        for class in &self.classes {
            for head in &class.modes {
                out.extend_from_slice(&head.offset_w);
                out.extend_from_slice(&head.offset_b);
                out.extend_from_slice(&head.presence_w);
                out.push(head.presence_b);
            }
        }
        out
    }

    /// Inverse of [`to_flat`]; panics when the length does not match.
    pub fn assign_from_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter().copied();
        let mut take = |dst: &mut [f64]| {
            for v in dst.iter_mut() {
                *v = it.next().expect("flat vector too short");
            }
        };
        let mut trunk_w = core::mem::take(&mut self.trunk_w);
        take(&mut trunk_w);
        self.trunk_w = trunk_w;
        let mut trunk_b = core::mem::take(&mut self.trunk_b);
        take(&mut trunk_b);
        self.trunk_b = trunk_b;
        for class in &mut self.classes {
            for head in &mut class.modes {
                let mut w = core::mem::take(&mut head.offset_w);
                take(&mut w);
                head.offset_w = w;
                take(&mut head.offset_b);
                let mut p = core::mem::take(&mut head.presence_w);
                take(&mut p);
                head.presence_w = p;
                let mut b = [head.presence_b];
                take(&mut b);
                head.presence_b = b[0];
            }
        }
        assert!(it.next().is_none(), "flat vector too long");
    }

    fn hidden(&self, feature: &[f64]) -> Vec<f64> {
        let mut h = self.trunk_b.clone();
        for (i, hv) in h.iter_mut().enumerate() {
            let row = &self.trunk_w[i * self.input_dim..(i + 1) * self.input_dim];
            let mut acc = *hv;
            for (w, f) in row.iter().zip(feature) {
                acc += w * f;
            }
            *hv = if acc > 0.0 { acc } else { 0.0 };
        }
        h
    }

    fn check(&self, feature: &[f64], class: usize) -> Result<(), RegressorError> {
        if feature.len() != self.input_dim {
            return Err(RegressorError::DimensionMismatch {
                expected: self.input_dim,
                got: feature.len(),
            });
        }
        if class >= self.classes.len() {
            return Err(RegressorError::UnknownClass { class });
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Evaluates the active heads of `class` on one feature vector, yielding one
/// `(offset, presence)` pair per mode. Presence scores are sigmoid-normalized
/// into `(0, 1)`.
pub fn forward(
    params: &RegressorParams,
    feature: &[f64],
    class: usize,
) -> Result<Vec<(OffsetVector, f64)>, RegressorError> {
    params.check(feature, class)?;
    let h = params.hidden(feature);
    let heads = &params.classes[class];
    let mut out = Vec::with_capacity(heads.mode_count);
    for head in heads.modes.iter().take(heads.mode_count) {
        let mut dv = [0.0; 4];
        for (j, d) in dv.iter_mut().enumerate() {
            let row = &head.offset_w[j * params.hidden_dim..(j + 1) * params.hidden_dim];
            *d = head.offset_b[j] + dot(row, &h);
        }
        let x = head.presence_b + dot(&head.presence_w, &h);
        out.push((OffsetVector::from_array(dv), sigmoid(x)));
    }
    Ok(out)
}

/// Raw presence scores (pre-sigmoid) alongside predicted offsets; used by the
/// loss below.
fn forward_raw(params: &RegressorParams, h: &[f64], class: usize) -> Vec<([f64; 4], f64)> {
    let heads = &params.classes[class];
    heads
        .modes
        .iter()
        .take(heads.mode_count)
        .map(|head| {
            let mut dv = [0.0; 4];
            for (j, d) in dv.iter_mut().enumerate() {
                let row = &head.offset_w[j * params.hidden_dim..(j + 1) * params.hidden_dim];
                *d = head.offset_b[j] + dot(row, h);
            }
            let x = head.presence_b + dot(&head.presence_w, h);
            (dv, x)
        })
        .collect()
}

/// Training loss over a batch for one part class: sum over samples and active
/// modes of the smooth-L1 offset term (present modes only) plus the logistic
/// presence term log(1 + e^{-c x}).
pub fn loss(
    params: &RegressorParams,
    batch: &[ModeTarget],
    class: usize,
) -> Result<f64, RegressorError> {
    let mut total = 0.0;
    for sample in batch {
        params.check(&sample.feature, class)?;
        let h = params.hidden(&sample.feature);
        let preds = forward_raw(params, &h, class);
        for (m, (dv, x)) in preds.iter().enumerate() {
            match sample.modes.get(m).and_then(|t| t.as_ref()) {
                Some(target) => {
                    let t = target.as_array();
                    for j in 0..4 {
                        total += smooth_l1(dv[j] - t[j]);
                    }
                    total += logistic_loss(*x, 1.0);
                }
                None => total += logistic_loss(*x, -1.0),
            }
        }
    }
    Ok(total)
}

/// Exact analytic gradient of [`loss`] with respect to every parameter.
/// Inactive heads receive zero gradient.
pub fn grad(
    params: &RegressorParams,
    batch: &[ModeTarget],
    class: usize,
) -> Result<RegressorParams, RegressorError> {
    let mode_counts: Vec<usize> = params.classes.iter().map(|c| c.mode_count).collect();
    let mut g = RegressorParams::zeros(params.input_dim, params.hidden_dim, &mode_counts);
    // zeros() pads to max over mode_counts; keep head counts aligned with params
    for (gc, pc) in g.classes.iter_mut().zip(&params.classes) {
        while gc.modes.len() < pc.modes.len() {
            gc.modes.push(ModeHead::zeros(params.hidden_dim, false));
        }
    }
    accumulate_grad(params, batch, class, &mut g)?;
    Ok(g)
}

/// Adds the gradient for `batch`/`class` into `g`, which must be
/// parameter-shaped. Lets the training loop fold several classes into one
/// trunk update without reallocating.
pub fn accumulate_grad(
    params: &RegressorParams,
    batch: &[ModeTarget],
    class: usize,
    g: &mut RegressorParams,
) -> Result<(), RegressorError> {
    let hd = params.hidden_dim;
    for sample in batch {
        params.check(&sample.feature, class)?;
        // recompute pre-activations to know which units are live
        let mut h_pre = params.trunk_b.clone();
        for (i, hv) in h_pre.iter_mut().enumerate() {
            let row = &params.trunk_w[i * params.input_dim..(i + 1) * params.input_dim];
            *hv += dot(row, &sample.feature);
        }
        let h: Vec<f64> = h_pre.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let preds = forward_raw(params, &h, class);

        let mut dh = vec![0.0; hd];
        let heads = &params.classes[class];
        let gheads = &mut g.classes[class];
        for (m, (dv, x)) in preds.iter().enumerate() {
            let head = &heads.modes[m];
            let ghead = &mut gheads.modes[m];
            let target = sample.modes.get(m).and_then(|t| t.as_ref());
            if let Some(target) = target {
                let t = target.as_array();
                for j in 0..4 {
                    let dl = smooth_l1_grad(dv[j] - t[j]);
                    if dl != 0.0 {
                        let grow = &mut ghead.offset_w[j * hd..(j + 1) * hd];
                        for (gw, hv) in grow.iter_mut().zip(&h) {
                            *gw += dl * hv;
                        }
                        ghead.offset_b[j] += dl;
                        let row = &head.offset_w[j * hd..(j + 1) * hd];
                        for (d, w) in dh.iter_mut().zip(row) {
                            *d += dl * w;
                        }
                    }
                }
            }
            // presence: dL/dx = -c * sigmoid(-c x)
            let c = if target.is_some() { 1.0 } else { -1.0 };
            let dx = -c * sigmoid(-c * x);
            for (gw, hv) in ghead.presence_w.iter_mut().zip(&h) {
                *gw += dx * hv;
            }
            ghead.presence_b += dx;
            for (d, w) in dh.iter_mut().zip(&head.presence_w) {
                *d += dx * w;
            }
        }

        for i in 0..hd {
            if h_pre[i] > 0.0 && dh[i] != 0.0 {
                let grow = &mut g.trunk_w[i * params.input_dim..(i + 1) * params.input_dim];
                for (gw, f) in grow.iter_mut().zip(&sample.feature) {
                    *gw += dh[i] * f;
                }
                g.trunk_b[i] += dh[i];
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_params_forward() {
        let params = RegressorParams::zeros(3, 4, &[2]);
        let out = forward(&params, &[0.5, -1.0, 2.0], 0).unwrap();
        assert_eq!(out.len(), 2);
        for (dv, rho) in out {
            assert_eq!(dv, OffsetVector::ZERO);
            assert_eq!(rho, 0.5);
        }
    }

    #[test]
    fn hand_computed_forward() {
        // D=2, H=1, single mode; trunk picks relu(1*f0 - 1*f1 + 0.5)
        let mut params = RegressorParams::zeros(2, 1, &[1]);
        params.trunk_w = vec![1.0, -1.0];
        params.trunk_b = vec![0.5];
        let head = &mut params.classes[0].modes[0];
        head.offset_w = vec![2.0, -1.0, 0.5, 0.0];
        head.offset_b = [0.1, 0.2, 0.3, 0.4];
        head.presence_w = vec![3.0];
        head.presence_b = -1.0;

        let f = [2.0, 0.5]; // h = relu(2 - 0.5 + 0.5) = 2
        let out = forward(&params, &f, 0).unwrap();
        let (dv, rho) = out[0];
        assert!((dv.tx - (2.0 * 2.0 + 0.1)).abs() < 1e-12);
        assert!((dv.ty - (-1.0 * 2.0 + 0.2)).abs() < 1e-12);
        assert!((dv.tw - (0.5 * 2.0 + 0.3)).abs() < 1e-12);
        assert!((dv.th - 0.4).abs() < 1e-12);
        let x = 3.0 * 2.0 - 1.0;
        assert!((rho - 1.0 / (1.0 + libm::exp(-x))).abs() < 1e-12);
    }

    #[test]
    fn presence_strictly_inside_unit_interval() {
        let mut params = RegressorParams::zeros(1, 1, &[1]);
        params.classes[0].modes[0].presence_b = 20.0;
        let (_, rho) = forward(&params, &[0.0], 0).unwrap()[0];
        assert!(rho > 0.0 && rho < 1.0);
        params.classes[0].modes[0].presence_b = -20.0;
        let (_, rho) = forward(&params, &[0.0], 0).unwrap()[0];
        assert!(rho > 0.0 && rho < 1.0);
    }

    #[test]
    fn loss_log2_at_zero_presence() {
        // perfect offsets, x = 0: presence term log 2 per active mode
        let params = RegressorParams::zeros(2, 3, &[2]);
        let batch = [ModeTarget {
            feature: vec![1.0, 1.0],
            modes: vec![Some(OffsetVector::ZERO), Some(OffsetVector::ZERO)],
        }];
        let l = loss(&params, &batch, 0).unwrap();
        assert!((l - 2.0 * libm::log(2.0)).abs() < 1e-12);
    }

    #[test]
    fn smooth_l1_values() {
        assert!((smooth_l1(0.5) - 0.125).abs() < 1e-12);
        assert!((smooth_l1(2.0) - 1.5).abs() < 1e-12);
        assert!((smooth_l1(-2.0) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let params = RegressorParams::zeros(3, 2, &[1]);
        assert!(matches!(
            forward(&params, &[1.0], 0),
            Err(RegressorError::DimensionMismatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn inactive_head_gradient_is_zero() {
        let mut params = RegressorParams::zeros(2, 2, &[1, 3]);
        params.trunk_w = vec![0.3, -0.2, 0.1, 0.4];
        params.trunk_b = vec![0.1, 0.2];
        let batch = [ModeTarget {
            feature: vec![1.0, -0.5],
            modes: vec![Some(OffsetVector { tx: 0.1, ty: 0.2, tw: 0.0, th: 0.0 })],
        }];
        let g = grad(&params, &batch, 0).unwrap();
        // class 0 has 1 active mode out of 3 padded; heads 1 and 2 untouched
        for head in &g.classes[0].modes[1..] {
            assert!(head.offset_w.iter().all(|&v| v == 0.0));
            assert!(head.presence_w.iter().all(|&v| v == 0.0));
            assert_eq!(head.presence_b, 0.0);
        }
        // class 1 got no samples at all
        for head in &g.classes[1].modes {
            assert!(head.offset_w.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn flat_round_trip() {
        let mut params = RegressorParams::zeros(2, 3, &[1, 2]);
        let flat: Vec<f64> = (0..params.to_flat().len()).map(|i| i as f64 * 0.1).collect();
        params.assign_from_flat(&flat);
        assert_eq!(params.to_flat(), flat);
    }
}
