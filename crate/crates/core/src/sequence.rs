//! Turns ranked views of a proposal into one annotated, vertically stitched image.

use std::path::Path;

use image::{Rgb, RgbImage};
use serde::Serialize;

use crate::projection::ViewProjection;
use crate::scene::CameraFrame;
use crate::{Error, Result};

pub const BORDER_WIDTH: u32 = 3;
pub const ANNOTATION_COLOR: Rgb<u8> = Rgb([255, 0, 0]);

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Rect {
    pub u_min: u32,
    pub v_min: u32,
    pub u_max: u32,
    pub v_max: u32,
}

impl Rect {
    pub fn new(u_min: u32, v_min: u32, u_max: u32, v_max: u32) -> Self {
        assert!(u_min <= u_max && v_min <= v_max, "inverted rect");
        Self {
            u_min,
            v_min,
            u_max,
            v_max,
        }
    }

    pub fn contains(&self, u: u32, v: u32) -> bool {
        (self.u_min..=self.u_max).contains(&u) && (self.v_min..=self.v_max).contains(&v)
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        self.contains(other.u_min, other.v_min) && self.contains(other.u_max, other.v_max)
    }

    /// Inside the rect and within [`BORDER_WIDTH`] of one of its edges.
    pub fn in_border_band(&self, u: u32, v: u32) -> bool {
        self.contains(u, v)
            && (u - self.u_min < BORDER_WIDTH
                || self.u_max - u < BORDER_WIDTH
                || v - self.v_min < BORDER_WIDTH
                || self.v_max - v < BORDER_WIDTH)
    }
}

pub fn min_bounding_rect(pixels: &[(u32, u32)]) -> Result<Rect> {
    let (&(u0, v0), rest) = pixels.split_first().ok_or(Error::EmptyProjection)?;
    Ok(rest
        .iter()
        .fold(Rect::new(u0, v0, u0, v0), |r, &(u, v)| Rect {
            u_min: r.u_min.min(u),
            v_min: r.v_min.min(v),
            u_max: r.u_max.max(u),
            v_max: r.v_max.max(v),
        }))
}

/// Grows width and height by a factor `1 + alpha` about the center, rounding
/// corners outward and clamping to the image.
pub fn expand_rect(r: Rect, alpha: f64, width: u32, height: u32) -> Rect {
    let grow = |lo: u32, hi: u32, limit: u32| {
        let g = alpha * (hi - lo) as f64 / 2.0;
        let lo = (lo as f64 - g).floor().max(0.0) as u32;
        let hi = ((hi as f64 + g).ceil() as u32).min(limit - 1);
        (lo, hi)
    };
    let (u_min, u_max) = grow(r.u_min, r.u_max, width);
    let (v_min, v_max) = grow(r.v_min, r.v_max, height);
    Rect::new(u_min, v_min, u_max.max(r.u_max), v_max.max(r.v_max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub frame_id: u32,
    pub raster: RgbImage,
    pub rect: Rect,
}

/// Copies `image` and draws a red border of [`BORDER_WIDTH`] pixels just
/// inside `rect`.
pub fn annotate_view(image: &RgbImage, frame_id: u32, rect: Rect) -> AnnotatedImage {
    let mut raster = image.clone();
    let u_max = rect.u_max.min(image.width().saturating_sub(1));
    let v_max = rect.v_max.min(image.height().saturating_sub(1));
    for v in rect.v_min..=v_max {
        for u in rect.u_min..=u_max {
            if rect.in_border_band(u, v) {
                raster.put_pixel(u, v, ANNOTATION_COLOR);
            }
        }
    }
    AnnotatedImage {
        frame_id,
        raster,
        rect,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSequence {
    pub instance_id: u32,
    pub views: Vec<AnnotatedImage>,
    pub stitched: RgbImage,
}

impl ImageSequence {
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.stitched.save(path.as_ref())?;
        Ok(())
    }
}

/// Stacks views top to bottom, left aligned; narrower views are padded with black.
pub fn stitch_sequence(instance_id: u32, views: Vec<AnnotatedImage>) -> Result<ImageSequence> {
    if views.is_empty() {
        return Err(Error::InvalidInput(
            "cannot stitch an empty view list".into(),
        ));
    }
    let width = views.iter().map(|v| v.raster.width()).max().unwrap();
    let height = views.iter().map(|v| v.raster.height()).sum();
    let mut stitched = RgbImage::new(width, height);
    let mut top = 0;
    for view in &views {
        image::imageops::replace(&mut stitched, &view.raster, 0, top as i64);
        top += view.raster.height();
    }
    Ok(ImageSequence {
        instance_id,
        views,
        stitched,
    })
}

/// Full per-proposal sequence: bounding rect, expansion, annotation and stitching.
/// `frame_of` resolves a ranked view to its source frame.
pub fn build_sequence<'a>(
    instance_id: u32,
    ranked: &[ViewProjection],
    frame_of: impl Fn(u32) -> Option<&'a CameraFrame>,
    alpha: f64,
) -> Result<ImageSequence> {
    let views = ranked
        .iter()
        .map(|view| {
            let frame = frame_of(view.frame_id)
                .ok_or_else(|| Error::InvalidInput(format!("unknown frame {}", view.frame_id)))?;
            let rect = expand_rect(
                min_bounding_rect(&view.pixels)?,
                alpha,
                frame.width(),
                frame.height(),
            );
            Ok(annotate_view(&frame.image, frame.frame_id, rect))
        })
        .collect::<Result<Vec<_>>>()?;
    stitch_sequence(instance_id, views)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn noise(w: u32, h: u32, seed: u64) -> RgbImage {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(w, h, |_, _| Rgb([rng.gen(), rng.gen(), rng.gen()]))
    }

    #[test]
    fn bounding_rect_cases() {
        assert_eq!(
            min_bounding_rect(&[(3, 7), (10, 2), (5, 5)]).unwrap(),
            Rect::new(3, 2, 10, 7)
        );
        assert_eq!(min_bounding_rect(&[(4, 9)]).unwrap(), Rect::new(4, 9, 4, 9));
        assert!(matches!(
            min_bounding_rect(&[]),
            Err(Error::EmptyProjection)
        ));
    }

    #[test]
    fn bounding_rect_matches_scan() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let px: Vec<(u32, u32)> = (0..500)
            .map(|_| (rng.gen_range(0..640), rng.gen_range(0..480)))
            .collect();
        let r = min_bounding_rect(&px).unwrap();
        let mut want = (u32::MAX, u32::MAX, 0, 0);
        for &(u, v) in &px {
            want = (want.0.min(u), want.1.min(v), want.2.max(u), want.3.max(v));
        }
        assert_eq!((r.u_min, r.v_min, r.u_max, r.v_max), want);
    }

    #[test]
    fn expansion_cases() {
        assert_eq!(
            expand_rect(Rect::new(10, 10, 30, 30), 0.25, 640, 480),
            Rect::new(7, 7, 33, 33)
        );
        assert_eq!(
            expand_rect(Rect::new(10, 10, 30, 30), 0.0, 640, 480),
            Rect::new(10, 10, 30, 30)
        );
        assert_eq!(
            expand_rect(Rect::new(0, 0, 20, 20), 0.25, 640, 480),
            Rect::new(0, 0, 23, 23)
        );
        assert_eq!(
            expand_rect(Rect::new(600, 400, 639, 479), 1.0, 640, 480),
            Rect::new(580, 360, 639, 479)
        );
    }

    #[test]
    fn annotation_interior_untouched() {
        let img = noise(640, 480, 1);
        let a = annotate_view(&img, 0, Rect::new(100, 100, 200, 200));
        for (u, v) in [(100, 100), (102, 150), (200, 200), (150, 198)] {
            assert_eq!(*a.raster.get_pixel(u, v), ANNOTATION_COLOR);
        }
        assert_eq!(a.raster.get_pixel(150, 150), img.get_pixel(150, 150));
        assert_eq!(a.raster.get_pixel(103, 150), img.get_pixel(103, 150));
        assert_eq!(a.raster.get_pixel(99, 150), img.get_pixel(99, 150));
    }

    #[test]
    fn annotation_at_image_edge() {
        let img = noise(64, 48, 2);
        let a = annotate_view(&img, 0, Rect::new(0, 0, 50, 47));
        assert_eq!(*a.raster.get_pixel(0, 0), ANNOTATION_COLOR);
        assert_eq!(*a.raster.get_pixel(50, 47), ANNOTATION_COLOR);
        assert_eq!(a.raster.dimensions(), img.dimensions());
    }

    #[test]
    fn degenerate_rect_is_a_single_red_pixel() {
        let img = noise(20, 20, 3);
        let a = annotate_view(&img, 0, Rect::new(10, 10, 10, 10));
        assert_eq!(*a.raster.get_pixel(10, 10), ANNOTATION_COLOR);
        let changed = a
            .raster
            .enumerate_pixels()
            .filter(|(u, v, p)| *p != img.get_pixel(*u, *v))
            .count();
        assert!(changed <= 1);
    }

    #[test]
    fn stitch_shapes() {
        let view = |w, h, s| annotate_view(&noise(w, h, s), 0, Rect::new(1, 1, 4, 4));
        let seq = stitch_sequence(0, (0..5).map(|s| view(640, 480, s)).collect()).unwrap();
        assert_eq!(seq.stitched.dimensions(), (640, 2400));

        let seq = stitch_sequence(0, vec![view(640, 480, 9), view(320, 240, 10)]).unwrap();
        assert_eq!(seq.stitched.dimensions(), (640, 720));
        assert_eq!(*seq.stitched.get_pixel(400, 600), Rgb([0, 0, 0]));
        assert_eq!(
            seq.stitched.get_pixel(100, 600),
            seq.views[1].raster.get_pixel(100, 120)
        );
        assert!(stitch_sequence(0, vec![]).is_err());
    }

    proptest! {
        #[test]
        fn expansion_never_shrinks(
            u0 in 0u32..100, du in 0u32..100, v0 in 0u32..80, dv in 0u32..80, alpha in 0.0f64..3.0,
        ) {
            let r = Rect::new(u0, v0, u0 + du, v0 + dv);
            let e = expand_rect(r, alpha, 200, 160);
            prop_assert!(e.contains_rect(&r));
            prop_assert!(e.u_max < 200 && e.v_max < 160);
        }

        #[test]
        fn annotation_changes_only_the_band(
            u0 in 0u32..40, du in 0u32..30, v0 in 0u32..30, dv in 0u32..20, seed in any::<u64>(),
        ) {
            let img = noise(70, 50, seed);
            let r = Rect::new(u0, v0, (u0 + du).min(69), (v0 + dv).min(49));
            let a = annotate_view(&img, 0, r);
            for (u, v, p) in a.raster.enumerate_pixels() {
                if p != img.get_pixel(u, v) {
                    prop_assert!(r.in_border_band(u, v));
                }
            }
        }
    }
}
