//! Linear-polarization math: Stokes parameters from four polarizer intensities,
//! angle/degree of linear polarization, and the inverse Malus synthesis.
//!
//! All planes are channel-major `(channels, height, width)` buffers. The
//! scalar type is generic so the same code runs at 32- and 64-bit precision.

use num_traits::Float;

use crate::error::{Error, Result};

/// Magnitudes at or below this are treated as zero (unpolarized or black pixel).
pub const EPS_S0: f64 = 1e-8;

/// Polarizer angles of the four measurement planes, in degrees.
pub const ANGLES_DEG: [u32; 4] = [0, 45, 90, 135];

/// A dense `(channels, height, width)` plane stack.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane<T = f32> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Float> Plane<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "plane buffer has {} values, expected {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: T) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, T::zero())
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

    /// `(channels, height, width)`
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: T) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    pub fn map<U: Float>(&self, f: impl Fn(T) -> U) -> Plane<U> {
        Plane {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Lossy or widening precision conversion.
    pub fn cast<U: Float>(&self) -> Plane<U> {
        self.map(|v| U::from(v).unwrap_or_else(U::nan))
    }

    fn same_dims(&self, other: &Self) -> bool {
        self.dims() == other.dims()
    }

    fn check_finite(&self, what: &str) -> Result<()> {
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "{what} has a non-finite value at flat index {i}"
            )));
        }
        Ok(())
    }
}

fn cst<T: Float>(v: f64) -> T {
    T::from(v).expect("float constant")
}

/// Intensities behind polarizers at 0°, 45°, 90° and 135°, pixel aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadIntensities<T = f32> {
    pub i0: Plane<T>,
    pub i45: Plane<T>,
    pub i90: Plane<T>,
    pub i135: Plane<T>,
}

impl<T: Float> QuadIntensities<T> {
    pub fn new(i0: Plane<T>, i45: Plane<T>, i90: Plane<T>, i135: Plane<T>) -> Result<Self> {
        let quad = Self { i0, i45, i90, i135 };
        quad.check_shape()?;
        Ok(quad)
    }

    /// Builds a quad where every pixel holds the same four intensities.
    pub fn uniform(channels: usize, height: usize, width: usize, values: [T; 4]) -> Self {
        Self {
            i0: Plane::filled(channels, height, width, values[0]),
            i45: Plane::filled(channels, height, width, values[1]),
            i90: Plane::filled(channels, height, width, values[2]),
            i135: Plane::filled(channels, height, width, values[3]),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.i0.dims()
    }

    /// Planes in angle order 0°, 45°, 90°, 135°.
    pub fn planes(&self) -> [&Plane<T>; 4] {
        [&self.i0, &self.i45, &self.i90, &self.i135]
    }

    pub fn planes_mut(&mut self) -> [&mut Plane<T>; 4] {
        [&mut self.i0, &mut self.i45, &mut self.i90, &mut self.i135]
    }

    pub fn from_planes(planes: [Plane<T>; 4]) -> Result<Self> {
        let [i0, i45, i90, i135] = planes;
        Self::new(i0, i45, i90, i135)
    }

    fn check_shape(&self) -> Result<()> {
        let [a, b, c, d] = self.planes();
        if !(a.same_dims(b) && a.same_dims(c) && a.same_dims(d)) {
            return Err(Error::shape(format!(
                "quad planes differ in shape: {:?} {:?} {:?} {:?}",
                a.dims(),
                b.dims(),
                c.dims(),
                d.dims()
            )));
        }
        if !(a.channels == 1 || a.channels == 3) {
            return Err(Error::shape(format!(
                "quad must have 1 or 3 color channels, got {}",
                a.channels
            )));
        }
        Ok(())
    }

    /// Shape, finiteness and non-negativity.
    pub fn validate(&self) -> Result<()> {
        self.check_shape()?;
        for (plane, angle) in self.planes().into_iter().zip(ANGLES_DEG) {
            let what = format!("I{angle}");
            plane.check_finite(&what)?;
            if let Some(i) = plane.data.iter().position(|v| *v < T::zero()) {
                return Err(Error::validation(format!(
                    "{what} has a negative intensity at flat index {i}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StokesImage<T = f32> {
    pub s0: Plane<T>,
    pub s1: Plane<T>,
    pub s2: Plane<T>,
}

impl<T: Float> StokesImage<T> {
    pub fn new(s0: Plane<T>, s1: Plane<T>, s2: Plane<T>) -> Result<Self> {
        if !(s0.same_dims(&s1) && s0.same_dims(&s2)) {
            return Err(Error::shape(format!(
                "Stokes planes differ in shape: {:?} {:?} {:?}",
                s0.dims(),
                s1.dims(),
                s2.dims()
            )));
        }
        Ok(Self { s0, s1, s2 })
    }

    pub fn uniform(channels: usize, height: usize, width: usize, values: [T; 3]) -> Self {
        Self {
            s0: Plane::filled(channels, height, width, values[0]),
            s1: Plane::filled(channels, height, width, values[1]),
            s2: Plane::filled(channels, height, width, values[2]),
        }
    }

    /// Builds a Stokes image from total intensity, DoLP and AoLP planes.
    pub fn from_polar(s0: Plane<T>, dolp: &Plane<T>, aolp: &Plane<T>) -> Result<Self> {
        if !(s0.same_dims(dolp) && s0.same_dims(aolp)) {
            return Err(Error::shape(
                "intensity, DoLP and AoLP planes differ in shape",
            ));
        }
        let two = cst::<T>(2.0);
        let mut s1 = Plane::zeros(s0.channels, s0.height, s0.width);
        let mut s2 = s1.clone();
        for i in 0..s0.data.len() {
            let m = s0.data[i] * dolp.data[i];
            let a = two * aolp.data[i];
            s1.data[i] = m * a.cos();
            s2.data[i] = m * a.sin();
        }
        Ok(Self { s0, s1, s2 })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.s0.dims()
    }

    pub fn validate(&self) -> Result<()> {
        self.s0.check_finite("S0")?;
        self.s1.check_finite("S1")?;
        self.s2.check_finite("S2")?;
        if let Some(i) = self.s0.data.iter().position(|v| *v < T::zero()) {
            return Err(Error::validation(format!(
                "S0 is negative at flat index {i}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolarMaps<T = f32> {
    /// Angle of linear polarization in radians, `[0, π)`.
    pub aolp: Plane<T>,
    /// Degree of linear polarization, `[0, 1]`.
    pub dolp: Plane<T>,
}

/// Stokes parameters from the four polarizer intensities.
///
/// `s0` averages the two redundant estimates `i0 + i90` and `i45 + i135`;
/// their disagreement is reported by [`consistency_residual`].
pub fn compute_stokes<T: Float>(quad: &QuadIntensities<T>) -> Result<StokesImage<T>> {
    quad.check_shape()?;
    for (plane, angle) in quad.planes().into_iter().zip(ANGLES_DEG) {
        plane.check_finite(&format!("I{angle}"))?;
    }
    let (c, h, w) = quad.dims();
    let half = cst::<T>(0.5);
    let n = c * h * w;
    let (mut s0, mut s1, mut s2) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    let (a, b, cc, d) = (
        &quad.i0.data,
        &quad.i45.data,
        &quad.i90.data,
        &quad.i135.data,
    );
    for i in 0..n {
        s0.push((a[i] + cc[i] + b[i] + d[i]) * half);
        s1.push(a[i] - cc[i]);
        s2.push(b[i] - d[i]);
    }
    Ok(StokesImage {
        s0: Plane::new(c, h, w, s0)?,
        s1: Plane::new(c, h, w, s1)?,
        s2: Plane::new(c, h, w, s2)?,
    })
}

/// AoLP and DoLP of a single Stokes triple, following the degenerate-pixel
/// conventions of [`compute_polar_maps`].
pub fn polar_pixel<T: Float>(s0: T, s1: T, s2: T) -> (T, T) {
    let eps = cst::<T>(EPS_S0);
    let pi = cst::<T>(std::f64::consts::PI);
    let magnitude = s1.hypot(s2);
    let aolp = if magnitude <= eps {
        T::zero()
    } else {
        let mut phi = cst::<T>(0.5) * s2.atan2(s1);
        if phi < T::zero() {
            phi = phi + pi;
        }
        // phi + pi can round up to exactly pi at 32-bit
        if phi >= pi {
            phi = phi - pi;
        }
        if phi < T::zero() {
            phi = T::zero();
        }
        phi
    };
    let dolp = if s0 <= eps {
        T::zero()
    } else {
        (magnitude / s0).min(T::one()).max(T::zero())
    };
    (aolp, dolp)
}

/// AoLP in `[0, π)` and DoLP in `[0, 1]` for every pixel.
///
/// Pixels with `s0 <= EPS_S0` get DoLP 0, pixels with a polarized magnitude
/// `<= EPS_S0` get AoLP 0. Out-of-range DoLP is clamped.
pub fn compute_polar_maps<T: Float>(stokes: &StokesImage<T>) -> Result<PolarMaps<T>> {
    stokes.validate()?;
    let (c, h, w) = stokes.dims();
    let n = c * h * w;
    let mut aolp = Vec::with_capacity(n);
    let mut dolp = Vec::with_capacity(n);
    for i in 0..n {
        let (phi, rho) = polar_pixel(stokes.s0.data[i], stokes.s1.data[i], stokes.s2.data[i]);
        aolp.push(phi);
        dolp.push(rho);
    }
    Ok(PolarMaps {
        aolp: Plane::new(c, h, w, aolp)?,
        dolp: Plane::new(c, h, w, dolp)?,
    })
}

/// Intensities seen behind ideal linear polarizers, `I(θ) = ½(S0 + S1·cos2θ + S2·sin2θ)`.
pub fn synthesize_intensities<T: Float>(stokes: &StokesImage<T>) -> Result<QuadIntensities<T>> {
    stokes.validate()?;
    // allow the DoLP = 1 boundary to survive rounding of s1, s2
    let slack = T::one() + cst::<T>(16.0) * T::epsilon();
    for i in 0..stokes.s0.data.len() {
        let (s0, s1, s2) = (stokes.s0.data[i], stokes.s1.data[i], stokes.s2.data[i]);
        if s1.hypot(s2) > s0 * slack {
            return Err(Error::validation(format!(
                "Stokes vector at flat index {i} has DoLP > 1"
            )));
        }
    }
    let (c, h, w) = stokes.dims();
    let half = cst::<T>(0.5);
    let n = c * h * w;
    let mut planes: [Vec<T>; 4] = Default::default();
    for i in 0..n {
        let (s0, s1, s2) = (stokes.s0.data[i], stokes.s1.data[i], stokes.s2.data[i]);
        // cos2θ, sin2θ are exactly (1,0), (0,1), (-1,0), (0,-1) at the four angles
        planes[0].push(half * (s0 + s1));
        planes[1].push(half * (s0 + s2));
        planes[2].push(half * (s0 - s1));
        planes[3].push(half * (s0 - s2));
    }
    let [a, b, cc, d] = planes;
    QuadIntensities::new(
        Plane::new(c, h, w, a)?,
        Plane::new(c, h, w, b)?,
        Plane::new(c, h, w, cc)?,
        Plane::new(c, h, w, d)?,
    )
}

/// Relative disagreement of the two total-intensity estimates,
/// `|(i0+i90) − (i45+i135)| / max(EPS_S0, i0+i90)`.
pub fn consistency_residual<T: Float>(quad: &QuadIntensities<T>) -> Result<Plane<T>> {
    quad.check_shape()?;
    let (c, h, w) = quad.dims();
    let eps = cst::<T>(EPS_S0);
    let data = (0..c * h * w)
        .map(|i| {
            let a = quad.i0.data[i] + quad.i90.data[i];
            let b = quad.i45.data[i] + quad.i135.data[i];
            (a - b).abs() / a.max(eps)
        })
        .collect();
    Plane::new(c, h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn quad1(v: [f64; 4]) -> QuadIntensities<f64> {
        QuadIntensities::uniform(1, 2, 2, v)
    }

    fn stokes1(v: [f64; 3]) -> StokesImage<f64> {
        StokesImage::uniform(1, 2, 2, v)
    }

    // Oracle: evaluate I(θ) = ½(S0 + S1 cos2θ + S2 sin2θ) with trigonometry at
    // the four angles, independently of the hard-coded signs in the implementation.
    fn malus(s: [f64; 3]) -> [f64; 4] {
        ANGLES_DEG.map(|deg| {
            let t = 2.0 * (deg as f64).to_radians();
            0.5 * (s[0] + s[1] * t.cos() + s[2] * t.sin())
        })
    }

    #[test]
    fn stokes_unpolarized() {
        let s = compute_stokes(&quad1([0.5; 4])).unwrap();
        assert_eq!(s.s0.data()[0], 1.0);
        assert_eq!(s.s1.data()[0], 0.0);
        assert_eq!(s.s2.data()[0], 0.0);
    }

    #[test]
    fn stokes_partially_polarized() {
        let q = malus([2.0, 0.6, 0.8]);
        for (a, b) in q.iter().zip([1.3, 1.4, 0.7, 0.6]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        let s = compute_stokes(&quad1([1.3, 1.4, 0.7, 0.6])).unwrap();
        assert_abs_diff_eq!(s.s0.data()[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.s1.data()[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(s.s2.data()[0], 0.8, epsilon = 1e-12);
    }

    #[test]
    fn stokes_horizontal() {
        let s = compute_stokes(&quad1([1.0, 0.5, 0.0, 0.5])).unwrap();
        assert_eq!(
            (s.s0.data()[0], s.s1.data()[0], s.s2.data()[0]),
            (1.0, 1.0, 0.0)
        );
    }

    #[test]
    fn stokes_rejects_bad_input() {
        let mut q = quad1([0.5; 4]);
        q.i90 = Plane::filled(1, 2, 3, 0.5);
        assert!(matches!(compute_stokes(&q), Err(Error::Shape(_))));
        let mut q = quad1([0.5; 4]);
        q.i45.data_mut()[1] = f64::NAN;
        assert!(matches!(compute_stokes(&q), Err(Error::Validation(_))));
        let mut q = quad1([0.5; 4]);
        q.i135.data_mut()[3] = f64::INFINITY;
        assert!(matches!(compute_stokes(&q), Err(Error::Validation(_))));
    }

    #[test]
    fn polar_maps_examples() {
        let m = compute_polar_maps(&stokes1([2.0, 0.6, 0.8])).unwrap();
        assert_abs_diff_eq!(m.dolp.data()[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(m.aolp.data()[0], 0.5 * 0.8f64.atan2(0.6), epsilon = 1e-12);
        assert_abs_diff_eq!(m.aolp.data()[0], 0.46365, epsilon = 1e-5);

        let m = compute_polar_maps(&stokes1([1.0, 0.0, 0.0])).unwrap();
        assert_eq!((m.aolp.data()[0], m.dolp.data()[0]), (0.0, 0.0));

        let m = compute_polar_maps(&stokes1([1.0, 1.2, 0.0])).unwrap();
        assert_eq!((m.aolp.data()[0], m.dolp.data()[0]), (0.0, 1.0));
    }

    #[test]
    fn polar_maps_negative_angles_wrap() {
        // s2 < 0 gives a negative atan2; result must land in [π/2, π)
        let m = compute_polar_maps(&stokes1([1.0, 0.0, -0.5])).unwrap();
        assert_abs_diff_eq!(
            m.aolp.data()[0],
            3.0 * std::f64::consts::FRAC_PI_4,
            epsilon = 1e-12
        );
        let m = compute_polar_maps(&stokes1([1.0, -0.5, -1e-300])).unwrap();
        assert!(m.aolp.data()[0] < std::f64::consts::PI);
    }

    #[test]
    fn polar_maps_dark_pixel() {
        let m = compute_polar_maps(&stokes1([0.0, 0.3, 0.0])).unwrap();
        assert_eq!(m.dolp.data()[0], 0.0);
        assert_eq!(m.aolp.data()[0], 0.0);
    }

    #[test]
    fn synthesis_examples() {
        let q = synthesize_intensities(&stokes1([2.0, 0.6, 0.8])).unwrap();
        let got = [
            q.i0.data()[0],
            q.i45.data()[0],
            q.i90.data()[0],
            q.i135.data()[0],
        ];
        for (a, b) in got.iter().zip(malus([2.0, 0.6, 0.8])) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        let q = synthesize_intensities(&stokes1([1.0, 0.0, 0.0])).unwrap();
        assert_eq!(q, quad1([0.5; 4]));
        let q = synthesize_intensities(&stokes1([1.0, 1.0, 0.0])).unwrap();
        assert_eq!(q, quad1([1.0, 0.5, 0.0, 0.5]));
    }

    #[test]
    fn synthesis_rejects_overpolarized() {
        let err = synthesize_intensities(&stokes1([1.0, 0.9, 0.9])).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn residual_examples() {
        let consistent = synthesize_intensities(&stokes1([2.0, 0.6, 0.8])).unwrap();
        assert!(consistency_residual(&consistent)
            .unwrap()
            .data()
            .iter()
            .all(|&r| r == 0.0));
        let r = consistency_residual(&quad1([1.0, 0.5, 0.0, 0.6])).unwrap();
        assert_abs_diff_eq!(r.data()[0], 0.1, epsilon = 1e-12);
        let r = consistency_residual(&quad1([0.0; 4])).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quad_validate() {
        assert!(quad1([0.1, 0.2, 0.3, 0.4]).validate().is_ok());
        assert!(quad1([0.1, -0.2, 0.3, 0.4]).validate().is_err());
        let q = QuadIntensities::<f32>::uniform(2, 1, 1, [0.0; 4]);
        assert!(matches!(q.validate(), Err(Error::Shape(_))));
    }

    #[test]
    fn single_precision_path() {
        let q = QuadIntensities::<f32>::uniform(3, 1, 1, [1.3, 1.4, 0.7, 0.6]);
        let m = compute_polar_maps(&compute_stokes(&q).unwrap()).unwrap();
        assert!((m.dolp.data()[0] - 0.5).abs() < 1e-6);
        assert!((m.aolp.data()[2] - 0.463_647_6).abs() < 1e-6);
    }
}
