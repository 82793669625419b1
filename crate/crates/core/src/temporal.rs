//! Overlapping fixed-length windows over long frame sequences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longest window accepted by [`plan_windows`].
pub const MAX_WINDOW: usize = 4096;
pub const DEFAULT_WINDOW: usize = 24;
pub const DEFAULT_STRIDE: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub num_frames: usize,
    pub window_len: usize,
    pub stride: usize,
    /// Half-open `(start, end)` frame ranges, sorted by start.
    pub windows: Vec<(usize, usize)>,
}

/// Per-frame blend weights inside a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Blend {
    /// `1 + min(pos, len - 1 - pos)`, peaking at the window center.
    #[default]
    Triangular,
    Uniform,
}

impl Blend {
    pub fn weight(self, pos: usize, len: usize) -> f64 {
        match self {
            Blend::Triangular => 1.0 + pos.min(len - 1 - pos) as f64,
            Blend::Uniform => 1.0,
        }
    }
}

/// Windows start at multiples of `stride`; the last one is shifted back so it
/// ends on the last frame. Sequences shorter than a window get one window.
pub fn plan_windows(num_frames: usize, window_len: usize, stride: usize) -> Result<WindowPlan> {
    if num_frames == 0 {
        return Err(Error::invalid("cannot plan windows over zero frames"));
    }
    if stride == 0 || stride > window_len || window_len > MAX_WINDOW {
        return Err(Error::invalid(format!(
            "need 1 <= stride <= window <= {MAX_WINDOW}, got stride {stride} and window {window_len}"
        )));
    }
    let mut windows = Vec::new();
    if num_frames <= window_len {
        windows.push((0, num_frames));
    } else {
        let mut start = 0;
        while start + window_len < num_frames {
            windows.push((start, start + window_len));
            start += stride;
        }
        windows.push((num_frames - window_len, num_frames));
    }
    Ok(WindowPlan { num_frames, window_len, stride, windows })
}

impl WindowPlan {
    /// Windows covering frame `f` together with the frame's position inside each.
    pub fn covering(&self, f: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.windows
            .iter()
            .enumerate()
            .filter(move |(_, (s, e))| (*s..*e).contains(&f))
            .map(move |(i, (s, _))| (i, f - s))
    }
}

/// Blends per-window, per-frame vectors into one vector per frame.
///
/// `outputs[w][k]` is frame `windows[w].0 + k` as produced by window `w`.
/// Accumulation runs in window order, so the result is reproducible bitwise.
pub fn aggregate(plan: &WindowPlan, outputs: &[Vec<Vec<f64>>], blend: Blend) -> Result<Vec<Vec<f64>>> {
    if outputs.len() != plan.windows.len() {
        return Err(Error::dim(format!(
            "{} window outputs for {} windows",
            outputs.len(),
            plan.windows.len()
        )));
    }
    let mut len = None;
    for (w, ((s, e), out)) in plan.windows.iter().zip(outputs).enumerate() {
        if out.len() != e - s {
            return Err(Error::dim(format!("window {w} spans {} frames but has {} outputs", e - s, out.len())));
        }
        for frame in out {
            match len {
                None => len = Some(frame.len()),
                Some(l) if l != frame.len() => {
                    return Err(Error::dim(format!(
                        "window {w} has a frame of length {}, expected {l}",
                        frame.len()
                    )))
                }
                _ => {}
            }
        }
    }
    let len = len.unwrap_or(0);
    let mut total = vec![0.0; plan.num_frames];
    for (s, e) in &plan.windows {
        for k in 0..e - s {
            total[s + k] += blend.weight(k, e - s);
        }
    }
    if let Some(f) = total.iter().position(|&t| t == 0.0) {
        return Err(Error::invalid(format!("frame {f} is not covered by any window")));
    }
    // Written as anchor + sum of weighted differences to the first covering
    // window, so equal contributions reproduce their value exactly.
    let mut acc: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; plan.num_frames];
    for ((s, e), out) in plan.windows.iter().zip(outputs) {
        for (k, frame) in out.iter().enumerate() {
            let f = s + k;
            let wgt = blend.weight(k, e - s) / total[f];
            match &mut acc[f] {
                None => acc[f] = Some((frame.clone(), vec![0.0; len])),
                Some((anchor, delta)) => {
                    for ((d, a), v) in delta.iter_mut().zip(anchor.iter()).zip(frame) {
                        *d += wgt * (v - a);
                    }
                }
            }
        }
    }
    let acc = acc
        .into_iter()
        .map(|slot| {
            let (anchor, delta) = slot.expect("coverage checked above");
            anchor.iter().zip(&delta).map(|(a, d)| a + d).collect()
        })
        .collect();
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn plan_examples() {
        assert_eq!(plan_windows(24, 24, 12).unwrap().windows, vec![(0, 24)]);
        assert_eq!(plan_windows(40, 24, 12).unwrap().windows, vec![(0, 24), (12, 36), (16, 40)]);
        assert_eq!(plan_windows(10, 24, 12).unwrap().windows, vec![(0, 10)]);
        assert_eq!(plan_windows(48, 24, 24).unwrap().windows, vec![(0, 24), (24, 48)]);
        assert_eq!(plan_windows(25, 24, 12).unwrap().windows, vec![(0, 24), (1, 25)]);
    }

    #[test]
    fn plan_rejects_bad_arguments() {
        assert!(plan_windows(0, 24, 12).is_err());
        assert!(plan_windows(10, 24, 0).is_err());
        assert!(plan_windows(10, 24, 25).is_err());
        assert!(plan_windows(10, MAX_WINDOW + 1, 1).is_err());
    }

    #[test]
    fn single_window_is_exact() {
        let plan = plan_windows(5, 24, 12).unwrap();
        let out = vec![(0..5).map(|i| vec![i as f64 * 0.1, -3.7]).collect::<Vec<_>>()];
        assert_eq!(aggregate(&plan, &out, Blend::Triangular).unwrap(), out[0]);
    }

    #[test]
    fn constant_windows_blend_exactly() {
        let plan = plan_windows(40, 24, 12).unwrap();
        let c = 0.3;
        let out: Vec<Vec<Vec<f64>>> = plan.windows.iter().map(|(s, e)| vec![vec![c; 3]; e - s]).collect();
        for f in aggregate(&plan, &out, Blend::Triangular).unwrap() {
            assert!(f.iter().all(|&v| v == c), "{f:?}");
        }
    }

    #[test]
    fn hand_weighted_average() {
        // Frame 3 of [(0, 8), (1, 9)] sits at position 3 of window 0 (weight
        // 1 + min(3, 4) = 4) and position 2 of window 1 (weight 3). Frame 2
        // sits at positions 2 and 1: weights 3 and 2.
        let plan = WindowPlan { num_frames: 9, window_len: 8, stride: 1, windows: vec![(0, 8), (1, 9)] };
        let (a, b) = (2.0, 10.0);
        let out = vec![vec![vec![a]; 8], vec![vec![b]; 8]];
        let r = aggregate(&plan, &out, Blend::Triangular).unwrap();
        assert_eq!(r[3][0], (4.0 * a + 3.0 * b) / 7.0);
        assert_eq!(r[2][0], (3.0 * a + 2.0 * b) / 5.0);
        assert_eq!(r[0][0], a);
        assert_eq!(r[8][0], b);

        // A frame at positions with weights 3 and 5 gives (3a + 5b) / 8.
        let plan = WindowPlan { num_frames: 12, window_len: 10, stride: 2, windows: vec![(0, 10), (2, 12)] };
        let out = vec![vec![vec![a]; 10], vec![vec![b]; 10]];
        let r = aggregate(&plan, &out, Blend::Triangular).unwrap();
        // Frame 7: position 7 in window 0 (weight 3), position 5 in window 1 (weight 5).
        assert_eq!(r[7][0], (3.0 * a + 5.0 * b) / 8.0);
    }

    #[test]
    fn uniform_blend_averages() {
        let plan = plan_windows(40, 24, 12).unwrap();
        let out: Vec<Vec<Vec<f64>>> =
            plan.windows.iter().enumerate().map(|(w, (s, e))| vec![vec![w as f64]; e - s]).collect();
        let r = aggregate(&plan, &out, Blend::Uniform).unwrap();
        assert_eq!(r[20][0], 1.0);
        assert_eq!(r[0][0], 0.0);
        assert_eq!(r[39][0], 2.0);
    }

    #[test]
    fn mismatched_outputs_error() {
        let plan = plan_windows(40, 24, 12).unwrap();
        assert!(aggregate(&plan, &[vec![vec![0.0]; 24]], Blend::Triangular).is_err());
        let mut out: Vec<Vec<Vec<f64>>> = plan.windows.iter().map(|(s, e)| vec![vec![0.0; 2]; e - s]).collect();
        out[1][3] = vec![0.0; 3];
        assert!(matches!(aggregate(&plan, &out, Blend::Triangular), Err(Error::Dimension(_))));
        out[1][3] = vec![0.0; 2];
        out[2].pop();
        assert!(aggregate(&plan, &out, Blend::Triangular).is_err());
    }

    proptest! {
        #[test]
        fn plans_cover_every_frame(n in 1usize..200, len in 1usize..40, stride_frac in 0.0f64..1.0) {
            let stride = 1 + ((len - 1) as f64 * stride_frac) as usize;
            let plan = plan_windows(n, len, stride).unwrap();
            prop_assert!(plan.windows.windows(2).all(|w| w[0].0 < w[1].0));
            for &(s, e) in &plan.windows {
                prop_assert!(e <= n);
                prop_assert_eq!(e - s, len.min(n));
            }
            for f in 0..n {
                prop_assert!(plan.covering(f).count() >= 1);
            }
        }

        #[test]
        fn blends_are_convex(n in 1usize..80, seed in 0u64..1000) {
            let plan = plan_windows(n, 24, 12).unwrap();
            let mut r = crate::rng::seeded(seed);
            let out: Vec<Vec<Vec<f64>>> = plan
                .windows
                .iter()
                .map(|(s, e)| (0..e - s).map(|_| crate::rng::normal_vec(&mut r, 3)).collect())
                .collect();
            let agg = aggregate(&plan, &out, Blend::Triangular).unwrap();
            for (f, frame) in agg.iter().enumerate() {
                for ch in 0..3 {
                    let vals: Vec<f64> = plan.covering(f).map(|(w, k)| out[w][k][ch]).collect();
                    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(frame[ch] >= lo - 1e-12 && frame[ch] <= hi + 1e-12);
                }
            }
        }

        #[test]
        fn short_appends_keep_early_frames(n in 24usize..100, k in 1usize..12, seed in 0u64..100) {
            // Per-frame values depend only on the frame index, as a deterministic
            // per-frame process would produce.
            let value = |f: usize| ((f as u64 * 2654435761 + seed) % 1000) as f64;
            let run = |frames: usize| {
                let plan = plan_windows(frames, 24, 12).unwrap();
                let out: Vec<Vec<Vec<f64>>> = plan
                    .windows
                    .iter()
                    .map(|(s, e)| (*s..*e).map(|f| vec![value(f) + *s as f64]).collect())
                    .collect();
                aggregate(&plan, &out, Blend::Triangular).unwrap()
            };
            let a = run(n);
            let b = run(n + k);
            for f in 0..n - 24 {
                prop_assert_eq!(a[f][0], b[f][0], "frame {}", f);
            }
        }
    }
}
