//! Expands a 24-long vector through four keyed coupling blocks and inverts it.

use rirl::coupling::{expand, make_keys, reduce};

fn main() -> rirl::Result<()> {
    let keys = make_keys(42, 4)?;
    let x: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).sin()).collect();
    let wide = expand(&x, &keys)?;
    let back = reduce(&wide, &keys)?;
    let err = x.iter().zip(&back).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    println!("expanded {} -> {} values, max round-trip error {err:.2e}", x.len(), wide.len());
    Ok(())
}
