//! 12-bit PRBS and the symbol stream drawn from it.

use std::collections::HashMap;

use oam_qkd::protocol::{prbs_stream, ProtocolParams, PrbsSymbols, SymbolSequence, PRBS_PERIOD};

fn main() -> oam_qkd::Result<()> {
    let bits = prbs_stream(0xACE, PRBS_PERIOD)?;
    let ones = bits.iter().filter(|&&b| b).count();
    println!("period {PRBS_PERIOD}: {ones} ones, {} zeros", PRBS_PERIOD - ones);

    let params = ProtocolParams::with_intensities(0.26, 0.13);
    let source = PrbsSymbols::new(&params, 0xACE)?;
    let seq = SymbolSequence::from_source(&source, source.pattern_len());
    let mut counts: HashMap<String, usize> = HashMap::new();
    for s in &seq.symbols {
        *counts.entry(format!("{} {}", s.state, s.intensity)).or_default() += 1;
    }
    let mut keys: Vec<_> = counts.into_iter().collect();
    keys.sort();
    println!("{} symbols per pattern", seq.len());
    for (k, n) in keys {
        println!("  {k:<8} {n:>5}  ({:.3})", n as f64 / seq.len() as f64);
    }
    print!("{}", seq.to_csv().lines().take(6).collect::<Vec<_>>().join("\n"));
    println!();
    Ok(())
}
