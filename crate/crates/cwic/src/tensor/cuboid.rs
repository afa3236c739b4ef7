use crate::{Error, Result};

/// Dense rank-3 array laid out channel-major: index = (c * height + y) * width + x.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCuboid {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl FeatureCuboid {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureCuboid { channels, height, width, values: vec![0.0; channels * height * width] }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != channels * height * width {
            return Err(Error::config(format!(
                "cuboid data length {} does not match shape {}x{}x{}",
                values.len(),
                channels,
                height,
                width
            )));
        }
        Ok(FeatureCuboid { channels, height, width, values })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        debug_assert!(c < self.channels && y < self.height && x < self.width);
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[self.idx(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(c, y, x);
        self.values[i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// One channel as a contiguous height*width slice.
    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.values[c * plane..(c + 1) * plane]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FeatureCuboid {
        FeatureCuboid {
            channels: self.channels,
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Errors with `name` if any entry is NaN or infinite.
    pub fn check_finite(&self, name: &str) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(name.to_string()))
        }
    }

    pub fn same_shape(&self, other: &FeatureCuboid) -> bool {
        self.shape() == other.shape()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_channel_major() {
        let mut c = FeatureCuboid::zeros(2, 3, 4);
        c.set(1, 2, 3, 7.0);
        assert_eq!(c.as_slice()[(1 * 3 + 2) * 4 + 3], 7.0);
        assert_eq!(c.get(1, 2, 3), 7.0);
        assert_eq!(c.channel(1)[2 * 4 + 3], 7.0);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(FeatureCuboid::from_vec(2, 2, 2, vec![0.0; 7]).is_err());
    }

    #[test]
    fn check_finite_names_tensor() {
        let mut c = FeatureCuboid::zeros(1, 1, 2);
        c.set(0, 0, 1, f64::NAN);
        let err = c.check_finite("decoder output").unwrap_err();
        assert!(err.to_string().contains("decoder output"));
    }
}
