//! Pixel-space and latent-space rasters.

use ndarray::Array3;

use super::DomainError;
use crate::scalar::Scalar;

/// Dense 3-channel raster with values in `[0, 1]`, the unit of
/// pixel-space I/O. Layout is `(channel, row, col)`, row-major per
/// channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T: Scalar> {
    data: Array3<T>,
}

impl<T: Scalar> Image<T> {
    pub const CHANNELS: usize = 3;

    /// Validates finiteness, the `[0,1]` range, and the minimum side of
    /// 8 pixels.
    pub fn new(data: Array3<T>) -> Result<Self, DomainError> {
        let (c, h, w) = data.dim();
        assert_eq!(c, Self::CHANNELS, "images are 3-channel");
        if h < 8 || w < 8 {
            return Err(DomainError::ImageTooSmall {
                height: h,
                width: w,
            });
        }
        for (i, &v) in data.iter().enumerate() {
            if !v.is_finite() || v < T::zero() || v > T::one() {
                return Err(DomainError::ImageValueOutOfRange {
                    index: i,
                    value: v.as_f64(),
                });
            }
        }
        Ok(Self { data })
    }

    /// Builds an image from arbitrary finite data by clamping into
    /// `[0, 1]`.
    pub fn from_clamped(mut data: Array3<T>) -> Result<Self, DomainError> {
        for v in data.iter_mut() {
            if !v.is_finite() {
                return Err(DomainError::ImageValueOutOfRange {
                    index: 0,
                    value: v.as_f64(),
                });
            }
            *v = v.max(T::zero()).min(T::one());
        }
        Self::new(data)
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<T> {
        &self.data
    }

    pub fn into_data(self) -> Array3<T> {
        self.data
    }

    /// Casts the pixel data to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            data: self.data.mapv(|v| U::of(v.as_f64())),
        }
    }
}

/// Dense `C×H×W` real-valued latent grid produced by an encoder or a
/// quantizer stage.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T: Scalar> {
    data: Array3<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(data: Array3<T>) -> Result<Self, DomainError> {
        for (i, &v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(DomainError::NonFiniteFeature { index: i });
            }
        }
        Ok(Self { data })
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<T> {
        &self.data
    }

    pub fn into_data(self) -> Array3<T> {
        self.data
    }

    /// Per-channel spatial mean, the global-context summary of the map.
    pub fn channel_means(&self) -> Vec<T> {
        let (c, h, w) = self.data.dim();
        let denom = T::of_usize(h * w);
        (0..c)
            .map(|ch| {
                self.data
                    .index_axis(ndarray::Axis(0), ch)
                    .iter()
                    .copied()
                    .sum::<T>()
                    / denom
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn image_rejects_out_of_range() {
        let mut a = Array3::<f64>::zeros((3, 8, 8));
        a[[0, 0, 0]] = 1.5;
        assert!(Image::new(a).is_err());
    }

    #[test]
    fn image_rejects_small_sides() {
        let a = Array3::<f64>::zeros((3, 4, 8));
        assert!(matches!(
            Image::new(a),
            Err(DomainError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn image_rejects_non_finite() {
        let mut a = Array3::<f64>::zeros((3, 8, 8));
        a[[2, 3, 3]] = f64::NAN;
        assert!(Image::new(a).is_err());
    }

    #[test]
    fn clamping_constructor_clips() {
        let mut a = Array3::<f64>::zeros((3, 8, 8));
        a[[0, 0, 0]] = 2.0;
        a[[1, 1, 1]] = -1.0;
        let img = Image::from_clamped(a).unwrap();
        assert_eq!(img.data()[[0, 0, 0]], 1.0);
        assert_eq!(img.data()[[1, 1, 1]], 0.0);
    }

    #[test]
    fn feature_map_rejects_nan() {
        let mut a = Array3::<f32>::zeros((2, 3, 3));
        a[[1, 2, 2]] = f32::INFINITY;
        assert!(FeatureMap::new(a).is_err());
    }

    #[test]
    fn channel_means_are_spatial_averages() {
        let a = Array3::from_shape_vec((1, 2, 2), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let f = FeatureMap::new(a).unwrap();
        assert_eq!(f.channel_means(), vec![1.5]);
    }
}
