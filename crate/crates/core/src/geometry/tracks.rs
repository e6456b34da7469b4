use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Pixel observations of `num_points` points across `num_views` views.
///
/// Storage is view-major: entry `(l, i)` lives at `l * num_points + i`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackSet {
    num_views: usize,
    num_points: usize,
    pixel: Vec<[f64; 2]>,
    visible: Vec<bool>,
}

impl TrackSet {
    /// Validates that every point is seen at least once, every view sees at
    /// least two points, and all visible pixels are finite.
    pub fn new(
        num_views: usize,
        num_points: usize,
        pixel: Vec<[f64; 2]>,
        visible: Vec<bool>,
    ) -> Result<Self> {
        let n = num_views * num_points;
        if pixel.len() != n || visible.len() != n {
            return Err(Error::InvalidInput(format!(
                "track arrays have {} pixels and {} flags, expected {n}",
                pixel.len(),
                visible.len()
            )));
        }
        if num_views == 0 || num_points == 0 {
            return Err(Error::InvalidInput("track set is empty".into()));
        }
        let tracks = Self {
            num_views,
            num_points,
            pixel,
            visible,
        };
        for l in 0..num_views {
            let count = tracks.visible_count(l);
            if count < 2 {
                return Err(Error::InvalidInput(format!(
                    "view {l} has {count} visible point(s), need at least 2"
                )));
            }
            for i in tracks.visible_points(l) {
                let p = tracks.pixel[l * num_points + i];
                if !(p[0].is_finite() && p[1].is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "non-finite pixel for point {i} in view {l}"
                    )));
                }
            }
        }
        for i in 0..num_points {
            if !(0..num_views).any(|l| tracks.is_visible(l, i)) {
                return Err(Error::InvalidInput(format!(
                    "point {i} is not visible in any view"
                )));
            }
        }
        Ok(tracks)
    }

    /// All points visible in all views.
    pub fn fully_visible(
        num_views: usize,
        num_points: usize,
        pixel: Vec<[f64; 2]>,
    ) -> Result<Self> {
        let n = pixel.len();
        Self::new(num_views, num_points, pixel, vec![true; n])
    }

    pub fn num_views(&self) -> usize {
        self.num_views
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    #[inline]
    pub fn is_visible(&self, view: usize, point: usize) -> bool {
        self.visible[view * self.num_points + point]
    }

    #[inline]
    pub fn pixel(&self, view: usize, point: usize) -> Option<[f64; 2]> {
        let idx = view * self.num_points + point;
        self.visible[idx].then(|| self.pixel[idx])
    }

    /// Raw stored pixel regardless of visibility.
    #[inline]
    pub fn raw_pixel(&self, view: usize, point: usize) -> [f64; 2] {
        self.pixel[view * self.num_points + point]
    }

    /// Homogeneous lift (x, y, 1).
    pub fn homogeneous(&self, view: usize, point: usize) -> Option<Vector3<f64>> {
        self.pixel(view, point)
            .map(|p| Vector3::new(p[0], p[1], 1.0))
    }

    pub fn visible_points(&self, view: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_points).filter(move |&i| self.is_visible(view, i))
    }

    pub fn visible_count(&self, view: usize) -> usize {
        self.visible_points(view).count()
    }

    pub fn views_of(&self, point: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_views).filter(move |&l| self.is_visible(l, point))
    }

    /// View with the most visible points, lowest index on ties.
    pub fn densest_view(&self) -> usize {
        (0..self.num_views)
            .max_by_key(|&l| (self.visible_count(l), std::cmp::Reverse(l)))
            .unwrap_or(0)
    }

    pub fn visibility_mask(&self) -> &[bool] {
        &self.visible
    }

    /// Restriction to a subset of points, in the given order.
    pub fn select_points(&self, points: &[usize]) -> Result<Self> {
        let mut pixel = Vec::with_capacity(self.num_views * points.len());
        let mut visible = Vec::with_capacity(self.num_views * points.len());
        for l in 0..self.num_views {
            for &i in points {
                pixel.push(self.raw_pixel(l, i));
                visible.push(self.is_visible(l, i));
            }
        }
        Self::new(self.num_views, points.len(), pixel, visible)
    }

    /// Restriction to a subset of views, in the given order.
    pub fn select_views(&self, views: &[usize]) -> Result<Self> {
        let mut pixel = Vec::with_capacity(views.len() * self.num_points);
        let mut visible = Vec::with_capacity(views.len() * self.num_points);
        for &l in views {
            for i in 0..self.num_points {
                pixel.push(self.raw_pixel(l, i));
                visible.push(self.is_visible(l, i));
            }
        }
        Self::new(views.len(), self.num_points, pixel, visible)
    }

    /// Same pixels with a new visibility mask.
    pub fn with_visibility(&self, visible: Vec<bool>) -> Result<Self> {
        Self::new(self.num_views, self.num_points, self.pixel.clone(), visible)
    }
}
