use std::f64::consts::PI;

/// Zero crossings of the interpolation kernel on each side of its centre.
const ZERO_CROSSINGS: f64 = 16.0;
const ROLLOFF: f64 = 0.94;

/// Rational-ratio resampling with a linear-phase windowed-sinc polyphase filter.
///
/// The output holds `ceil(len * to / from)` samples, aligned so output sample
/// `n` sits at input time `n * from / to`.
pub fn resample(input: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to || input.is_empty() {
        return input.to_vec();
    }
    let g = gcd(from as u64, to as u64);
    let up = to as u64 / g;
    let down = from as u64 / g;

    let cutoff = ROLLOFF * (to as f64 / from as f64).min(1.0);
    let half_width = ZERO_CROSSINGS / cutoff;
    let reach = half_width.ceil() as i64 + 1;
    let taps = 2 * reach as usize;

    // phase p covers fractional offset p / up; tap j multiplies x[i - reach + 1 + j]
    let table: Vec<Vec<f64>> = (0..up)
        .map(|p| {
            let frac = p as f64 / up as f64;
            let mut row: Vec<f64> = (0..taps)
                .map(|j| kernel(frac + (reach - 1) as f64 - j as f64, cutoff, half_width))
                .collect();
            let sum: f64 = row.iter().sum();
            if sum != 0.0 {
                row.iter_mut().for_each(|h| *h /= sum);
            }
            row
        })
        .collect();

    let n_out = (input.len() as u64 * up).div_ceil(down) as usize;
    let len = input.len() as i64;
    (0..n_out as u64)
        .map(|n| {
            let pos = n * down;
            let i = (pos / up) as i64;
            let phase = &table[(pos % up) as usize];
            let first = i - reach + 1;
            phase
                .iter()
                .enumerate()
                .filter_map(|(j, h)| {
                    let k = first + j as i64;
                    (0..len).contains(&k).then(|| h * input[k as usize])
                })
                .sum()
        })
        .collect()
}

fn kernel(tau: f64, cutoff: f64, half_width: f64) -> f64 {
    if tau.abs() >= half_width {
        return 0.0;
    }
    let x = cutoff * tau;
    let sinc = if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
    // Blackman window over [-half_width, half_width]
    let r = (tau + half_width) / (2.0 * half_width);
    let window = 0.42 - 0.5 * (2.0 * PI * r).cos() + 0.08 * (4.0 * PI * r).cos();
    cutoff * sinc * window
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}
