//! Box representations, conversions between pixel space and the normalized
//! parameterization, and overlap measures.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("box has non-positive or non-finite size ({w} x {h})")]
    DegenerateBox { w: f64, h: f64 },
    #[error("image dimensions must be positive, got {width} x {height}")]
    InvalidDims { width: u32, height: u32 },
}

/// Axis-aligned box in continuous pixel coordinates; `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageDims {
    pub width: u32,
    pub height: u32,
}

/// Normalized box parameters: center as a fraction of the image size, area as a
/// fraction of the image area, and width over height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxParams {
    pub cx: f64,
    pub cy: f64,
    pub area_ratio: f64,
    pub aspect_ratio: f64,
}

impl ImageDims {
    pub fn new(width: u32, height: u32) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidDims { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn w(&self) -> f64 {
        f64::from(self.width)
    }

    pub fn h(&self) -> f64 {
        f64::from(self.height)
    }

    pub fn area(&self) -> f64 {
        self.w() * self.h()
    }

    /// The box covering the whole frame.
    pub fn full_box(&self) -> PixelBox {
        PixelBox::new(0.0, 0.0, self.w(), self.h())
    }
}

impl PixelBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
            && self.w > 0.0
            && self.h > 0.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - 0.5 * w, cy - 0.5 * h, w, h)
    }

    /// True when the box lies entirely inside the frame.
    pub fn is_inside(&self, dims: ImageDims) -> bool {
        self.x >= 0.0 && self.y >= 0.0 && self.right() <= dims.w() && self.bottom() <= dims.h()
    }

    /// Clips the box to the frame, keeping at least one pixel per side.
    /// Boxes entirely outside the frame collapse onto the nearest edge.
    pub fn clip(&self, dims: ImageDims) -> PixelBox {
        let (x0, x1) = clip_span(self.x, self.right(), dims.w());
        let (y0, y1) = clip_span(self.y, self.bottom(), dims.h());
        PixelBox::new(x0, y0, x1 - x0, y1 - y0)
    }
}

fn clip_span(lo: f64, hi: f64, extent: f64) -> (f64, f64) {
    let min_side = extent.min(1.0);
    let lo = lo.clamp(0.0, extent - min_side);
    let hi = hi.clamp(lo + min_side, extent);
    (lo, hi)
}

/// Intersection over union; zero for disjoint boxes.
pub fn iou(a: &PixelBox, b: &PixelBox) -> f64 {
    let iw = a.right().min(b.right()) - a.x.max(b.x);
    let ih = a.bottom().min(b.bottom()) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

pub fn to_params(b: &PixelBox, dims: ImageDims) -> Result<BoxParams, GeometryError> {
    if !b.is_valid() {
        return Err(GeometryError::DegenerateBox { w: b.w, h: b.h });
    }
    let (cx, cy) = b.center();
    Ok(BoxParams {
        cx: cx / dims.w(),
        cy: cy / dims.h(),
        area_ratio: b.area() / dims.area(),
        aspect_ratio: b.w / b.h,
    })
}

/// Inverse of [`to_params`] without clipping. Callers that need an in-frame
/// box should use [`from_params`].
pub fn from_params_unclipped(p: &BoxParams, dims: ImageDims) -> PixelBox {
    let w = (p.area_ratio * dims.area() * p.aspect_ratio).sqrt();
    let h = w / p.aspect_ratio;
    PixelBox::from_center(p.cx * dims.w(), p.cy * dims.h(), w, h)
}

pub fn from_params(p: &BoxParams, dims: ImageDims) -> PixelBox {
    from_params_unclipped(p, dims).clip(dims)
}

impl BoxParams {
    pub fn to_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.area_ratio, self.aspect_ratio]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            cx: v[0],
            cy: v[1],
            area_ratio: v[2],
            aspect_ratio: v[3],
        }
    }

    pub fn is_valid(&self) -> bool {
        self.cx.is_finite()
            && self.cy.is_finite()
            && self.area_ratio.is_finite()
            && self.aspect_ratio.is_finite()
            && self.area_ratio > 0.0
            && self.aspect_ratio > 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dims(w: u32, h: u32) -> ImageDims {
        ImageDims::new(w, h).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = PixelBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &PixelBox::new(100.0, 100.0, 5.0, 5.0)), 0.0);
        // inter = 5*10 = 50, union = 100 + 100 - 50 = 150
        let b = PixelBox::new(5.0, 0.0, 10.0, 10.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
        // touching edges do not overlap
        assert_eq!(iou(&a, &PixelBox::new(10.0, 0.0, 10.0, 10.0)), 0.0);
    }

    #[test]
    fn to_params_examples() {
        let p = to_params(&PixelBox::new(0.0, 0.0, 100.0, 50.0), dims(100, 50)).unwrap();
        assert_eq!(p.to_array(), [0.5, 0.5, 1.0, 2.0]);

        let p = to_params(&PixelBox::new(10.0, 10.0, 20.0, 40.0), dims(100, 100)).unwrap();
        let want = [0.2, 0.3, 0.08, 0.5];
        for (got, want) in p.to_array().iter().zip(want) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn to_params_rejects_zero_area() {
        let err = to_params(&PixelBox::new(1.0, 1.0, 0.0, 5.0), dims(10, 10));
        assert!(matches!(err, Err(GeometryError::DegenerateBox { .. })));
        let err = to_params(&PixelBox::new(1.0, 1.0, f64::NAN, 5.0), dims(10, 10));
        assert!(err.is_err());
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(ImageDims::new(0, 10).is_err());
    }

    #[test]
    fn from_params_examples() {
        let d = dims(100, 100);
        let b = from_params(
            &BoxParams {
                cx: 0.5,
                cy: 0.5,
                area_ratio: 1.0,
                aspect_ratio: 1.0,
            },
            d,
        );
        assert_eq!(b, PixelBox::new(0.0, 0.0, 100.0, 100.0));

        // w = sqrt(0.08 * 1e4 * 0.5) = 20, h = 40, centered at (20, 30)
        let b = from_params(
            &BoxParams {
                cx: 0.2,
                cy: 0.3,
                area_ratio: 0.08,
                aspect_ratio: 0.5,
            },
            d,
        );
        for (got, want) in [b.x, b.y, b.w, b.h].iter().zip([10.0, 10.0, 20.0, 40.0]) {
            assert!((got - want).abs() < 1e-9, "{b:?}");
        }
    }

    #[test]
    fn from_params_clips_out_of_frame() {
        let d = dims(100, 80);
        let b = from_params(
            &BoxParams {
                cx: 0.98,
                cy: -0.1,
                area_ratio: 0.2,
                aspect_ratio: 1.5,
            },
            d,
        );
        assert!(b.is_inside(d));
        assert!(b.w >= 1.0 && b.h >= 1.0);

        // far outside collapses to a one-pixel sliver on the edge
        let b = PixelBox::new(500.0, -300.0, 10.0, 10.0).clip(d);
        assert!(b.is_inside(d));
        assert_eq!((b.w, b.h), (1.0, 1.0));
    }

    fn arb_box() -> impl Strategy<Value = PixelBox> {
        (-50.0..150.0f64, -50.0..150.0f64, 0.5..120.0f64, 0.5..120.0f64)
            .prop_map(|(x, y, w, h)| PixelBox::new(x, y, w, h))
    }

    fn arb_inframe_box() -> impl Strategy<Value = PixelBox> {
        (0.0..0.9f64, 0.0..0.9f64, 0.01..1.0f64, 0.01..1.0f64).prop_map(|(fx, fy, fw, fh)| {
            let x = fx * 200.0;
            let y = fy * 150.0;
            PixelBox::new(x, y, 1.0 + (199.0 - x) * fw, 1.0 + (149.0 - y) * fh)
        })
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn params_round_trip(b in arb_inframe_box()) {
            let d = dims(200, 150);
            let back = from_params(&to_params(&b, d).unwrap(), d);
            prop_assert!((back.x - b.x).abs() < 0.5);
            prop_assert!((back.y - b.y).abs() < 0.5);
            prop_assert!((back.w - b.w).abs() < 0.5);
            prop_assert!((back.h - b.h).abs() < 0.5);
            let p = to_params(&b, d).unwrap();
            let p2 = to_params(&from_params_unclipped(&p, d), d).unwrap();
            for (u, v) in p.to_array().iter().zip(p2.to_array()) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }

        #[test]
        fn clip_idempotent(b in arb_box()) {
            let d = dims(100, 100);
            let once = b.clip(d);
            prop_assert_eq!(once.clip(d), once);
            prop_assert!(once.is_inside(d));
        }
    }
}
