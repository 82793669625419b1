//! Plans overlapping windows over a long sequence and blends per-window
//! outputs back into one value per frame.
//!
//! `cargo run --example temporal_windows -- [frames] [window] [stride]`

use bodyguide::temporal::{aggregate, plan_windows, Blend};

fn main() -> bodyguide::Result<()> {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<usize>().expect("integer argument"));
    let frames = args.next().unwrap_or(40);
    let window = args.next().unwrap_or(24);
    let stride = args.next().unwrap_or(12);
    let plan = plan_windows(frames, window, stride)?;
    println!("windows: {:?}", plan.windows);

    // Each window reports its own index for every frame it covers.
    let outputs: Vec<Vec<Vec<f64>>> =
        plan.windows.iter().enumerate().map(|(w, &(s, e))| vec![vec![w as f64]; e - s]).collect();
    for blend in [Blend::Triangular, Blend::Uniform] {
        let merged = aggregate(&plan, &outputs, blend)?;
        let row: Vec<String> = merged.iter().map(|v| format!("{:.2}", v[0])).collect();
        println!("{blend:?}: {}", row.join(" "));
    }
    Ok(())
}
