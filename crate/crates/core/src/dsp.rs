//! Small signal helpers shared by propagation and beamforming.

use crate::real::Real;

/// Number of taps in the windowed-sinc fractional delay kernel.
pub const DELAY_TAPS: usize = 16;
const HALF: isize = (DELAY_TAPS / 2) as isize;

/// A non-negative delay of `integer + fraction` samples realised with a
/// 16-tap Hann-windowed sinc.
#[derive(Clone, Debug, PartialEq)]
pub struct FractionalDelay<T> {
    delay: f64,
    integer: isize,
    taps: [T; DELAY_TAPS],
}

impl<T: Real> FractionalDelay<T> {
    pub fn new(delay: f64) -> Self {
        assert!(delay.is_finite(), "delay must be finite");
        let integer = delay.floor() as isize;
        let frac = delay - integer as f64;
        let mut taps = [T::zero(); DELAY_TAPS];
        // tap n sits at offset k = n - (HALF - 1), k in [-7, 8]
        for (n, tap) in taps.iter_mut().enumerate() {
            let k = n as isize - (HALF - 1);
            let t = k as f64 - frac;
            *tap = T::lit(sinc(t) * hann(t, HALF as f64));
        }
        if frac == 0.0 {
            // exact integer delay
            taps = [T::zero(); DELAY_TAPS];
            taps[(HALF - 1) as usize] = T::one();
        }
        FractionalDelay {
            delay,
            integer,
            taps,
        }
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    /// `out[n] += gain * x(n - delay - offset)` for every `n` in `out`; samples
    /// outside `input` are zero.
    pub fn accumulate(&self, input: &[T], out: &mut [T], gain: T, offset: isize) {
        let shift = self.integer + offset - (HALF - 1);
        let len_in = input.len() as isize;
        for (n, tap) in self.taps.iter().enumerate() {
            let g = gain * *tap;
            if g == T::zero() {
                continue;
            }
            // out[i] += g * input[i - shift - n]
            let lag = shift + n as isize;
            let lo = lag.max(0);
            let hi = (len_in + lag).min(out.len() as isize);
            if lo >= hi {
                continue;
            }
            let src = &input[(lo - lag) as usize..(hi - lag) as usize];
            for (o, &x) in out[lo as usize..hi as usize].iter_mut().zip(src) {
                *o = *o + g * x;
            }
        }
    }
}

fn sinc(t: f64) -> f64 {
    if t == 0.0 {
        1.0
    } else {
        let x = std::f64::consts::PI * t;
        x.sin() / x
    }
}

fn hann(t: f64, half_width: f64) -> f64 {
    if t.abs() >= half_width {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * t / half_width).cos())
    }
}

pub fn mean_power<T: Real>(x: &[T]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|&v| v.as_f64() * v.as_f64()).sum::<f64>() / x.len() as f64
}

pub fn energy<T: Real>(x: &[T]) -> f64 {
    x.iter().map(|&v| v.as_f64() * v.as_f64()).sum()
}
