//! Image containers and the small set of raster operations everything else
//! builds on: Sobel gradients, cropping, rectangle arithmetic, PGM dumps.
//!
//! Pixel (0, 0) is the top-left corner; `x` grows right, `y` grows down.
//! Index layout is row-major: `idx = y * width + x`.

use crate::error::{Error, Result};

/// Sobel kernel responding to horizontal intensity change (d/dx).
pub const SOBEL_KERNEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];

/// Sobel kernel responding to vertical intensity change (d/dy); transpose of X.
pub const SOBEL_KERNEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// 8-bit grayscale image. Intensities are display-referred DN in [0, 255].
///
/// Full camera frames are at least 8x8 (enforced by `CameraModel`); crops of
/// frames may be any non-empty size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image8 {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

/// Floating-point image. Every stored value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageF {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

/// Axis-aligned pixel rectangle, never empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Image8 {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ImageTooSmall { width, height, min_width: 1, min_height: 1 });
        }
        if data.len() != (width as usize) * (height as usize) {
            return Err(Error::ImageDataMismatch { len: data.len(), width, height });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; (width as usize) * (height as usize)])
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Result<Self> {
        let mut data = Vec::with_capacity((width as usize) * (height as usize));
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        debug_assert!(x < self.width && y < self.height);
        self.data[(y as usize) * (self.width as usize) + (x as usize)]
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn bounds(&self) -> Rect {
        Rect { x: 0, y: 0, w: self.width, h: self.height }
    }

    pub fn crop(&self, r: Rect) -> Result<Image8> {
        check_rect(r, self.width, self.height)?;
        let mut data = Vec::with_capacity((r.w as usize) * (r.h as usize));
        for y in r.y..r.y + r.h {
            let row = (y as usize) * (self.width as usize);
            data.extend_from_slice(&self.data[row + r.x as usize..row + (r.x + r.w) as usize]);
        }
        Image8::new(r.w, r.h, data)
    }

    /// Widen to f64 without rescaling (DN values preserved).
    pub fn to_f64(&self) -> ImageF {
        ImageF {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| v as f64).collect(),
        }
    }

    /// Binary PGM (P5) encoding.
    pub fn pgm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }
}

impl ImageF {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ImageTooSmall { width, height, min_width: 1, min_height: 1 });
        }
        if data.len() != (width as usize) * (height as usize) {
            return Err(Error::ImageDataMismatch { len: data.len(), width, height });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: u32, height: u32, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; (width as usize) * (height as usize)])
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity((width as usize) * (height as usize));
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        debug_assert!(x < self.width && y < self.height);
        self.data[(y as usize) * (self.width as usize) + (x as usize)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: f64) {
        debug_assert!(x < self.width && y < self.height);
        self.data[(y as usize) * (self.width as usize) + (x as usize)] = v;
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn bounds(&self) -> Rect {
        Rect { x: 0, y: 0, w: self.width, h: self.height }
    }

    pub fn crop(&self, r: Rect) -> Result<ImageF> {
        check_rect(r, self.width, self.height)?;
        let mut data = Vec::with_capacity((r.w as usize) * (r.h as usize));
        for y in r.y..r.y + r.h {
            let row = (y as usize) * (self.width as usize);
            data.extend_from_slice(&self.data[row + r.x as usize..row + (r.x + r.w) as usize]);
        }
        ImageF::new(r.w, r.h, data)
    }

    /// Binary PGM (P5) after an affine rescale mapping [min, max] to [0, 255].
    /// A constant image maps to all zeros.
    pub fn pgm_bytes(&self) -> Vec<u8> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| ((v - lo) * scale).round() as u8));
        out
    }
}

fn check_rect(r: Rect, width: u32, height: u32) -> Result<()> {
    if r.w == 0 || r.h == 0 {
        return Err(Error::EmptyRect);
    }
    let x1 = r.x as u64 + r.w as u64;
    let y1 = r.y as u64 + r.h as u64;
    if x1 > width as u64 || y1 > height as u64 {
        return Err(Error::RectOutOfBounds { x: r.x, y: r.y, w: r.w, h: r.h, width, height });
    }
    Ok(())
}

impl Rect {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(Error::EmptyRect);
        }
        Ok(Self { x, y, w, h })
    }

    #[inline]
    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn contains_point(&self, x: u32, y: u32) -> bool {
        x >= self.x && y >= self.y && x < self.x + self.w && y < self.y + self.h
    }

    pub fn contains_rect(&self, other: Rect) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.x as u64 + other.w as u64 <= self.x as u64 + self.w as u64
            && other.y as u64 + other.h as u64 <= self.y as u64 + self.h as u64
    }

    pub fn intersect(&self, other: Rect) -> Option<Rect> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.w).min(other.x + other.w);
        let y1 = (self.y + self.h).min(other.y + other.h);
        if x1 > x0 && y1 > y0 {
            Some(Rect { x: x0, y: y0, w: x1 - x0, h: y1 - y0 })
        } else {
            None
        }
    }
}

/// Grow `r` by `fx * r.w` on the left and right and `fy * r.h` on the top and
/// bottom (each rounded to the nearest pixel), then clip to `bounds`.
///
/// `r` must lie inside `bounds`, so the result always contains `r` and stays
/// inside `bounds`.
pub fn inflate_and_clip(r: Rect, fx: f64, fy: f64, bounds: Rect) -> Result<Rect> {
    if !(fx >= 0.0) || !fx.is_finite() {
        return Err(Error::ParamOutOfRange { name: "fx", value: fx, min: 0.0, max: f64::MAX });
    }
    if !(fy >= 0.0) || !fy.is_finite() {
        return Err(Error::ParamOutOfRange { name: "fy", value: fy, min: 0.0, max: f64::MAX });
    }
    if !bounds.contains_rect(r) {
        return Err(Error::RectOutOfBounds {
            x: r.x,
            y: r.y,
            w: r.w,
            h: r.h,
            width: bounds.x + bounds.w,
            height: bounds.y + bounds.h,
        });
    }
    let dx = (fx * r.w as f64).round() as i64;
    let dy = (fy * r.h as f64).round() as i64;
    let x0 = (r.x as i64 - dx).max(bounds.x as i64);
    let y0 = (r.y as i64 - dy).max(bounds.y as i64);
    let x1 = (r.x as i64 + r.w as i64 + dx).min(bounds.x as i64 + bounds.w as i64);
    let y1 = (r.y as i64 + r.h as i64 + dy).min(bounds.y as i64 + bounds.h as i64);
    Rect::new(x0 as u32, y0 as u32, (x1 - x0) as u32, (y1 - y0) as u32)
}

/// Sobel responses of an image: per-axis responses and their magnitude.
///
/// The one-pixel border carries no valid 3x3 neighborhood; it is zeroed in all
/// three planes and callers must exclude it from statistics.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub gx: ImageF,
    pub gy: ImageF,
    pub mag: ImageF,
}

/// Convolve with both Sobel kernels. Errors if the image is smaller than 3x3.
pub fn sobel_gradients(img: &ImageF) -> Result<Gradients> {
    let (w, h) = (img.width, img.height);
    if w < 3 || h < 3 {
        return Err(Error::RegionTooSmall { w, h, op: "sobel (needs 3x3)" });
    }
    let n = (w as usize) * (h as usize);
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    let mut mag = vec![0.0; n];
    let src = &img.data;
    let ws = w as usize;
    for y in 1..(h as usize) - 1 {
        let above = (y - 1) * ws;
        let here = y * ws;
        let below = (y + 1) * ws;
        for x in 1..ws - 1 {
            let (a, b, c) = (src[above + x - 1], src[above + x], src[above + x + 1]);
            let (d, f) = (src[here + x - 1], src[here + x + 1]);
            let (g, hh, i) = (src[below + x - 1], src[below + x], src[below + x + 1]);
            let sx = (c + 2.0 * f + i) - (a + 2.0 * d + g);
            let sy = (g + 2.0 * hh + i) - (a + 2.0 * b + c);
            gx[here + x] = sx;
            gy[here + x] = sy;
            mag[here + x] = (sx * sx + sy * sy).sqrt();
        }
    }
    Ok(Gradients {
        gx: ImageF::new(w, h, gx)?,
        gy: ImageF::new(w, h, gy)?,
        mag: ImageF::new(w, h, mag)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct 2-D convolution, written independently of `sobel_gradients`.
    fn conv3_oracle(img: &ImageF, k: &[[f64; 3]; 3]) -> Vec<f64> {
        let (w, h) = (img.width() as i64, img.height() as i64);
        let mut out = vec![0.0; (w * h) as usize];
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let mut acc = 0.0;
                for (j, row) in k.iter().enumerate() {
                    for (i, &kv) in row.iter().enumerate() {
                        let sx = (x + i as i64 - 1) as u32;
                        let sy = (y + j as i64 - 1) as u32;
                        acc += kv * img.get(sx, sy);
                    }
                }
                out[(y * w + x) as usize] = acc;
            }
        }
        out
    }

    fn step_edge(w: u32, h: u32, edge_col: u32) -> ImageF {
        ImageF::from_fn(w, h, |x, _| if x < edge_col { 0.0 } else { 255.0 }).unwrap()
    }

    #[test]
    fn sobel_constant_image_is_zero() {
        let img = ImageF::filled(16, 12, 87.0).unwrap();
        let g = sobel_gradients(&img).unwrap();
        assert!(g.gx.data().iter().all(|&v| v == 0.0));
        assert!(g.gy.data().iter().all(|&v| v == 0.0));
        assert!(g.mag.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sobel_vertical_step_matches_direct_convolution() {
        let img = step_edge(16, 10, 8);
        let g = sobel_gradients(&img).unwrap();
        let ox = conv3_oracle(&img, &SOBEL_KERNEL_X);
        let oy = conv3_oracle(&img, &SOBEL_KERNEL_Y);
        assert_eq!(g.gx.data(), &ox[..]);
        assert_eq!(g.gy.data(), &oy[..]);
        // Interior columns adjacent to the edge respond at 4 * 255.
        for y in 1..9 {
            assert_eq!(g.mag.get(7, y), 1020.0);
            assert_eq!(g.mag.get(8, y), 1020.0);
            assert_eq!(g.gx.get(7, y), 1020.0);
            assert_eq!(g.gy.get(7, y), 0.0);
        }
        // Away from the edge the response is zero.
        assert_eq!(g.mag.get(3, 4), 0.0);
        assert_eq!(g.mag.get(12, 4), 0.0);
    }

    #[test]
    fn sobel_border_is_zeroed() {
        let img = step_edge(9, 9, 4);
        let g = sobel_gradients(&img).unwrap();
        for x in 0..9 {
            assert_eq!(g.mag.get(x, 0), 0.0);
            assert_eq!(g.mag.get(x, 8), 0.0);
        }
        for y in 0..9 {
            assert_eq!(g.mag.get(0, y), 0.0);
            assert_eq!(g.mag.get(8, y), 0.0);
        }
    }

    #[test]
    fn sobel_diagonal_edge_axes_symmetric() {
        // gx of the image equals gy of its transpose at transposed positions.
        let img = ImageF::from_fn(12, 12, |x, y| if x + y < 12 { 10.0 } else { 200.0 }).unwrap();
        let t = ImageF::from_fn(12, 12, |x, y| img.get(y, x)).unwrap();
        let g = sobel_gradients(&img).unwrap();
        let gt = sobel_gradients(&t).unwrap();
        for y in 0..12 {
            for x in 0..12 {
                assert_eq!(g.gx.get(x, y), gt.gy.get(y, x));
                assert_eq!(g.mag.get(x, y), gt.mag.get(y, x));
            }
        }
        // On the diagonal edge both axes respond with equal magnitude.
        let mid = 5;
        assert!(g.mag.get(mid, mid + 1) > 0.0);
        assert_eq!(g.gx.get(mid, mid + 1).abs(), g.gy.get(mid, mid + 1).abs());
    }

    #[test]
    fn sobel_rejects_tiny_images() {
        let img = ImageF::filled(2, 5, 0.0).unwrap();
        assert!(matches!(sobel_gradients(&img), Err(Error::RegionTooSmall { .. })));
    }

    #[test]
    fn crop_identity_and_single_pixel() {
        let img = Image8::from_fn(10, 7, |x, y| (x * 10 + y) as u8).unwrap();
        let full = img.crop(img.bounds()).unwrap();
        assert_eq!(full, img);
        let one = img.crop(Rect::new(3, 2, 1, 1).unwrap()).unwrap();
        assert_eq!(one.get(0, 0), img.get(3, 2));
    }

    #[test]
    fn crop_out_of_bounds_errors() {
        let img = Image8::filled(10, 10, 0).unwrap();
        assert!(img.crop(Rect::new(5, 5, 6, 6).unwrap()).is_err());
    }

    #[test]
    fn inflate_matches_worked_examples() {
        let bounds = Rect::new(0, 0, 640, 480).unwrap();
        let r = Rect::new(100, 100, 50, 40).unwrap();
        let out = inflate_and_clip(r, 0.10, 0.10, bounds).unwrap();
        assert_eq!(out, Rect::new(95, 96, 60, 48).unwrap());

        let near = Rect::new(2, 2, 60, 40).unwrap();
        let clipped = inflate_and_clip(near, 0.10, 0.10, bounds).unwrap();
        assert_eq!(clipped, Rect::new(0, 0, 68, 46).unwrap());
    }

    #[test]
    fn pgm_bytes_header_and_payload() {
        let img = Image8::from_fn(4, 2, |x, y| (x + 4 * y) as u8).unwrap();
        let bytes = img.pgm_bytes();
        assert!(bytes.starts_with(b"P5\n4 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 8..], &[0, 1, 2, 3, 4, 5, 6, 7]);

        let constant = ImageF::filled(3, 3, 7.5).unwrap();
        let b2 = constant.pgm_bytes();
        assert!(b2.ends_with(&[0u8; 9]));
    }

    #[test]
    fn imagef_rejects_non_finite() {
        let mut data = vec![0.0; 9];
        data[4] = f64::NAN;
        assert!(matches!(ImageF::new(3, 3, data), Err(Error::NonFiniteValue { index: 4 })));
    }

    proptest! {
        #[test]
        fn sobel_axis_responses_are_linear(seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = ImageF::from_fn(8, 8, |_, _| rng.gen_range(0.0..255.0)).unwrap();
            let b = ImageF::from_fn(8, 8, |_, _| rng.gen_range(0.0..255.0)).unwrap();
            let (ca, cb) = (0.7, -1.3);
            let combo = ImageF::from_fn(8, 8, |x, y| ca * a.get(x, y) + cb * b.get(x, y)).unwrap();
            let g = sobel_gradients(&combo).unwrap();
            let ga = sobel_gradients(&a).unwrap();
            let gb = sobel_gradients(&b).unwrap();
            for i in 0..g.gx.data().len() {
                let want_x = ca * ga.gx.data()[i] + cb * gb.gx.data()[i];
                let want_y = ca * ga.gy.data()[i] + cb * gb.gy.data()[i];
                prop_assert!((g.gx.data()[i] - want_x).abs() <= 1e-9 * (1.0 + want_x.abs()));
                prop_assert!((g.gy.data()[i] - want_y).abs() <= 1e-9 * (1.0 + want_y.abs()));
            }
        }

        #[test]
        fn gradient_magnitude_nonnegative(seed in 0u64..200) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
            let img = ImageF::from_fn(9, 9, |_, _| rng.gen_range(0.0..255.0)).unwrap();
            let g = sobel_gradients(&img).unwrap();
            prop_assert!(g.mag.data().iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn inflate_contains_original_and_stays_in_bounds(
            x in 0u32..600, y in 0u32..440, w in 1u32..40, h in 1u32..40,
            fx in 0.0f64..0.5, fy in 0.0f64..0.5,
        ) {
            let bounds = Rect::new(0, 0, 640, 480).unwrap();
            prop_assume!(x + w <= 640 && y + h <= 480);
            let r = Rect::new(x, y, w, h).unwrap();
            let out = inflate_and_clip(r, fx, fy, bounds).unwrap();
            prop_assert!(out.contains_rect(r));
            prop_assert!(bounds.contains_rect(out));
        }

        #[test]
        fn crop_composes(ox in 0u32..6, oy in 0u32..6, ix in 0u32..3, iy in 0u32..3) {
            let img = Image8::from_fn(24, 24, |x, y| (7 * x + 13 * y) as u8).unwrap();
            let outer = Rect::new(ox, oy, 12, 12).unwrap();
            let inner = Rect::new(ix, iy, 5, 5).unwrap();
            let two_step = img.crop(outer).unwrap().crop(inner).unwrap();
            let direct = img.crop(Rect::new(ox + ix, oy + iy, 5, 5).unwrap()).unwrap();
            prop_assert_eq!(two_step, direct);
        }
    }
}
