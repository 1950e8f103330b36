use std::f64::consts::PI;

const ZERO_CROSSINGS: f64 = 32.0;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Band-limited resampling by Hann-windowed sinc interpolation.
pub fn resample(samples: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to || samples.is_empty() {
        return samples.to_vec();
    }
    let ratio = to as f64 / from as f64;
    let cutoff = ratio.min(1.0);
    let half_width = ZERO_CROSSINGS / cutoff;
    let out_len = ((samples.len() as f64) * ratio).round().max(1.0) as usize;
    let last = samples.len() as isize - 1;

    (0..out_len)
        .map(|j| {
            let t = j as f64 / ratio;
            let lo = ((t - half_width).ceil() as isize).max(0);
            let hi = ((t + half_width).floor() as isize).min(last);
            let mut acc = 0.0;
            for n in lo..=hi {
                let d = t - n as f64;
                let win = 0.5 + 0.5 * (PI * d / half_width).cos();
                acc += samples[n as usize] * cutoff * sinc(cutoff * d) * win;
            }
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_when_rates_match() {
        let x = vec![0.1, -0.2, 0.3];
        assert_eq!(resample(&x, 16000, 16000), x);
    }

    #[test]
    fn downsampled_sine_keeps_frequency_and_level() {
        let (from, to) = (44100u32, 22050u32);
        let f = 440.0;
        let x: Vec<f64> = (0..44100)
            .map(|i| (2.0 * PI * f * i as f64 / from as f64).sin())
            .collect();
        let y = resample(&x, from, to);
        assert_eq!(y.len(), 22050);
        // compare away from the edges
        for j in 2000..20000 {
            let expect = (2.0 * PI * f * j as f64 / to as f64).sin();
            assert!((y[j] - expect).abs() < 2e-3, "sample {j}: {} vs {expect}", y[j]);
        }
    }
}
